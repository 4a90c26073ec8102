//! End-to-end pipeline invariants that cut across modules.

use ndarray_linalg::{JobSvd, SVDDC};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sase_core::harness::{run_sweep, run_trial, ExperimentConfig, MSpec, Mode, SweepKind};
use sase_core::linalg;
use sase_core::metrics;
use sase_core::sounding::NoiseModel;
use sase_core::subspace::{run_sase, ApproximationMode, AssumedRank, SaseParams};
use sase_core::{assemble_channel, sample_paths, ArrayGeometry, ArrayKind};

fn paper_channel(seed: u64) -> sase_core::ChannelInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths = sample_paths(4, ArrayKind::Ula, &mut rng).unwrap();
    let rx = ArrayGeometry::ula(36).unwrap();
    let tx = ArrayGeometry::ula(144).unwrap();
    assemble_channel(&paths, &rx, &tx).unwrap()
}

#[test]
fn designed_frame_tightens_projected_singular_value() {
    // sigma_L(W^H H) >= sigma_L(W^H U) * sigma_L(H) on every trial.
    for seed in 0..30u64 {
        let channel = paper_channel(seed);
        let mut noise = NoiseModel::seeded(0.1, seed ^ 0xabcd).unwrap();
        let params = SaseParams::new(20, 6, 8, AssumedRank::Fixed(4));
        let run = run_sase(&channel, &params, &mut noise).unwrap();

        let q_bar = linalg::adjoint(&run.w_hat.frame.view()).dot(&channel.matrix().to_owned());
        let (_, s_q, _) = q_bar.svddc(JobSvd::None).unwrap();
        let align = linalg::adjoint(&run.w_hat.frame.view()).dot(&channel.true_left().to_owned());
        let (_, s_a, _) = align.svddc(JobSvd::None).unwrap();
        let lhs = s_q[3];
        let rhs = s_a[3] * channel.true_singulars()[3];
        assert!(lhs >= rhs - 1e-9, "seed {seed}: {lhs} < {rhs}");
    }
}

#[test]
fn gap_policy_hit_rate_is_limited_by_weak_paths() {
    // With CN(0,1) gains the weakest of four paths regularly sits at or
    // below the noise floor (36% of draws at 10 dB), and the largest
    // multiplicative gap often falls between two signal modes rather than
    // at the noise boundary. The ratio policy therefore cannot reach high
    // detection rates at these SNRs; this pins its measured behavior on
    // the seeded stream (0.306 at 10 dB, 0.862 at 40 dB).
    let mut rates = Vec::new();
    for sigma2 in [0.1f64, 1e-4] {
        let trials = 500u64;
        let mut hits = 0usize;
        for t in 0..trials {
            let channel = paper_channel(t);
            let mut noise = NoiseModel::seeded(sigma2, t ^ 0x5eed).unwrap();
            let mut params = SaseParams::new(20, 6, 8, AssumedRank::Auto);
            params.mode = ApproximationMode::Unconstrained;
            let run = run_sase(&channel, &params, &mut noise).unwrap();
            assert!(run.rank_used >= 1 && run.rank_used <= 6);
            if run.rank_used == 4 {
                hits += 1;
            }
        }
        rates.push(hits as f64 / trials as f64);
    }
    assert!((rates[0] - 0.306).abs() < 0.05, "10 dB hit rate {}", rates[0]);
    assert!((rates[1] - 0.862).abs() < 0.05, "40 dB hit rate {}", rates[1]);
}

#[test]
fn sweep_is_invariant_to_parallelism() {
    let mut cfg = ExperimentConfig::default();
    cfg.n_r = 12;
    cfg.n_t = 24;
    cfg.m_rf = 4;
    cfg.n_rf = 4;
    cfg.true_l = 2;
    cfg.m_spec = MSpec::Columns(6);
    cfg.snr_db_grid = vec![0.0, 10.0];
    cfg.trials = 8;
    cfg.mode = Mode::Hybrid;

    let serial = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_sweep(&cfg).unwrap());
    let parallel = run_sweep(&cfg).unwrap();
    assert_eq!(serial.rows, parallel.rows);
}

#[test]
fn channel_use_accounting_matches_formula() {
    for (m, n_r, m_rf, n_t) in [(20usize, 36usize, 6usize, 144usize), (6, 12, 4, 24)] {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let paths = sample_paths(2, ArrayKind::Ula, &mut rng).unwrap();
        let rx = ArrayGeometry::ula(n_r).unwrap();
        let tx = ArrayGeometry::ula(n_t).unwrap();
        let channel = assemble_channel(&paths, &rx, &tx).unwrap();
        let mut noise = NoiseModel::seeded(0.01, 3).unwrap();
        let mut params = SaseParams::new(m, m_rf, 4, AssumedRank::Fixed(2));
        params.mode = ApproximationMode::Unconstrained;
        let run = run_sase(&channel, &params, &mut noise).unwrap();
        assert_eq!(
            run.total_channel_uses(),
            metrics::sase_channel_uses(m, n_r, m_rf, n_t).unwrap()
        );
    }
}

#[test]
fn planar_array_pipeline_runs_end_to_end() {
    let mut cfg = ExperimentConfig::default();
    cfg.geometry = ArrayKind::Upa;
    cfg.n_r = 36; // 6x6 grid
    cfg.n_t = 144; // 12x12 grid
    cfg.mode = Mode::Unconstrained;
    cfg.snr_db_grid = vec![f64::INFINITY];
    cfg.trials = 5;
    for t in 0..5 {
        let r = run_trial(&cfg, t).unwrap();
        assert!((r.eta - 1.0).abs() < 1e-9, "trial {t}: eta {}", r.eta);
        assert!(r.nmse <= 1e-12);
    }

    cfg.mode = Mode::Hybrid;
    cfg.snr_db_grid = vec![20.0];
    let r = run_trial(&cfg, 0).unwrap();
    assert!(r.eta > 0.5, "planar hybrid run collapsed: eta = {}", r.eta);
    assert!(r.delta1 > 0.0);
}

#[test]
fn mismatch_sweep_produces_rows_for_each_assumed_rank() {
    let mut cfg = ExperimentConfig::default();
    cfg.sweep = SweepKind::Mismatch;
    cfg.trials = 3;
    cfg.snr_db_grid = vec![10.0];
    let result = run_sweep(&cfg).unwrap();
    let vars: Vec<f64> = result.rows.iter().map(|r| r.sweep_var).collect();
    assert_eq!(vars, vec![3.0, 4.0, 5.0, 6.0]);
    for row in &result.rows {
        assert!(row.eta_mean > 0.0 && row.eta_mean <= 1.0 + 1e-9);
        assert_eq!(row.channel_uses, 244);
    }
}
