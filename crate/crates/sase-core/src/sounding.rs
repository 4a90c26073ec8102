//! Hybrid-constrained training protocol: basis-vector transmit sounders,
//! DFT receive banks, the per-channel-use measurement, and the two
//! collection stages.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::ChannelInstance;
use crate::error::{Result, SaseError};
use crate::linalg::{self, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SounderSide {
    Transmit,
    Receive,
}

/// Constant-modulus analog stage in series with a small digital stage.
#[derive(Debug, Clone)]
pub struct HybridSounder {
    pub analog: Array2<C64>,
    pub digital: Array2<C64>,
    pub side: SounderSide,
}

impl HybridSounder {
    /// Product `analog * digital`.
    pub fn product(&self) -> Array2<C64> {
        self.analog.dot(&self.digital)
    }

    /// Transmit-side composition `analog * digital * s` with the fixed
    /// sounding signal `s = ones / sqrt(N_RF)`.
    pub fn composed_transmit(&self) -> Result<Array1<C64>> {
        if self.side != SounderSide::Transmit {
            return Err(SaseError::ContractViolation(
                "composed_transmit called on a receive sounder".into(),
            ));
        }
        let n_rf = self.digital.ncols();
        let s = Array1::<C64>::from_elem(n_rf, C64::new(1.0 / (n_rf as f64).sqrt(), 0.0));
        Ok(self.analog.dot(&self.digital.dot(&s)))
    }

    /// Largest deviation of the analog entries from constant modulus
    /// `1/sqrt(rows)`.
    pub fn modulus_defect(&self) -> f64 {
        let target = 1.0 / (self.analog.nrows() as f64).sqrt();
        self.analog
            .iter()
            .map(|z| (z.norm() - target).abs())
            .fold(0.0, f64::max)
    }
}

/// Receive sounders of one stage-1 pass: `N_r/M_RF` blocks whose
/// concatenation is the unitary DFT matrix.
#[derive(Debug, Clone)]
pub struct DftReceiveBank {
    pub blocks: Vec<Array2<C64>>,
    pub full_matrix: Array2<C64>,
}

impl DftReceiveBank {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }
}

/// Per-channel-use additive noise, drawn from a seeded stream so trials are
/// reproducible.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    sigma2: f64,
    rng: ChaCha8Rng,
}

impl NoiseModel {
    pub fn new(sigma2: f64, rng: ChaCha8Rng) -> Result<Self> {
        if sigma2 < 0.0 || !sigma2.is_finite() {
            return Err(SaseError::InvalidParameter(format!(
                "noise variance {sigma2} must be finite and nonnegative"
            )));
        }
        Ok(Self { sigma2, rng })
    }

    pub fn seeded(sigma2: f64, seed: u64) -> Result<Self> {
        Self::new(sigma2, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// One antenna-domain noise vector `~ CN(0, sigma2 * I_n)`. Each complex
    /// entry is `(x + j y) * sigma / sqrt(2)` with `x, y` standard normal;
    /// the stream advances identically for every `sigma2`, including zero.
    pub fn sample(&mut self, n: usize) -> Array1<C64> {
        let scale = (self.sigma2 / 2.0).sqrt();
        Array1::from_iter((0..n).map(|_| {
            let re: f64 = self.rng.sample(StandardNormal);
            let im: f64 = self.rng.sample(StandardNormal);
            C64::new(re * scale, im * scale)
        }))
    }
}

/// Noisy stage-1 output after DFT recombination: `Y_S = H_S + N_S`.
#[derive(Debug, Clone)]
pub struct StageOneObservation {
    pub y_post_dft: Array2<C64>,
    pub m: usize,
    pub channel_uses: usize,
}

/// Noisy stage-2 output: one projected column per channel use.
#[derive(Debug, Clone)]
pub struct StageTwoObservation {
    pub q_c: Array2<C64>,
    pub channel_uses: usize,
}

/// Hybrid factorization of the `i`th standard basis vector (1-based `i`):
/// an all-ones constant-modulus analog stage with one sign flip, and a
/// two-entry digital stage, so that `analog * digital * s = e_i`.
pub fn basis_transmit_sounder(i: usize, n_t: usize, n_rf: usize) -> Result<HybridSounder> {
    if n_rf < 2 {
        return Err(SaseError::Infeasible(format!(
            "basis sounder construction needs at least 2 RF chains, got {n_rf}"
        )));
    }
    if i == 0 || i > n_t {
        return Err(SaseError::InvalidParameter(format!(
            "basis index {i} outside 1..={n_t}"
        )));
    }
    let unit = 1.0 / (n_t as f64).sqrt();
    let mut analog = Array2::<C64>::from_elem((n_t, n_rf), C64::new(unit, 0.0));
    analog[[i - 1, 1]] = C64::new(-unit, 0.0);
    let mut digital = Array2::<C64>::zeros((n_rf, n_rf));
    let amp = ((n_rf * n_t) as f64).sqrt() / 2.0;
    digital[[0, 0]] = C64::new(amp, 0.0);
    digital[[1, 0]] = C64::new(-amp, 0.0);
    Ok(HybridSounder { analog, digital, side: SounderSide::Transmit })
}

/// Split the unitary `n_r`-point DFT matrix into `n_r/m_rf` receive sounders
/// of `m_rf` columns each (identity digital stage).
pub fn dft_receive_bank(n_r: usize, m_rf: usize) -> Result<DftReceiveBank> {
    if m_rf == 0 || n_r == 0 {
        return Err(SaseError::InvalidParameter("antenna and chain counts must be positive".into()));
    }
    if n_r % m_rf != 0 {
        return Err(SaseError::InvalidParameter(format!(
            "receive antennas {n_r} not divisible by RF chains {m_rf}"
        )));
    }
    let scale = 1.0 / (n_r as f64).sqrt();
    let step = -2.0 * std::f64::consts::PI / n_r as f64;
    let full_matrix = Array2::<C64>::from_shape_fn((n_r, n_r), |(j, k)| {
        C64::from_polar(scale, step * (j * k) as f64)
    });
    let blocks = (0..n_r / m_rf)
        .map(|j| full_matrix.slice(s![.., j * m_rf..(j + 1) * m_rf]).to_owned())
        .collect();
    Ok(DftReceiveBank { blocks, full_matrix })
}

/// One channel use: `w^H * (H f + n)` with `n ~ CN(0, sigma2 * I_{N_r})`.
pub fn sound(
    channel: &ChannelInstance,
    f: &ArrayView1<C64>,
    w: &ArrayView2<C64>,
    noise: &mut NoiseModel,
) -> Result<Array1<C64>> {
    let h = channel.matrix();
    if f.len() != h.ncols() {
        return Err(SaseError::ShapeMismatch(format!(
            "transmit vector length {} != N_t {}",
            f.len(),
            h.ncols()
        )));
    }
    if w.nrows() != h.nrows() {
        return Err(SaseError::ShapeMismatch(format!(
            "receive frame has {} rows, N_r is {}",
            w.nrows(),
            h.nrows()
        )));
    }
    let mut received = h.dot(f);
    let n = noise.sample(h.nrows());
    received += &n;
    Ok(linalg::adjoint(w).dot(&received))
}

/// Stage 1: sample the first `m` channel columns through the DFT receive
/// bank, then recombine, yielding `Y_S = H_S + N_S` with whitened noise.
/// Consumes `m * N_r / m_rf` channel uses.
pub fn collect_stage_one(
    channel: &ChannelInstance,
    m: usize,
    m_rf: usize,
    noise: &mut NoiseModel,
) -> Result<StageOneObservation> {
    let (n_r, n_t) = (channel.n_r(), channel.n_t());
    if m == 0 || m > n_t {
        return Err(SaseError::InvalidParameter(format!(
            "stage-1 column budget {m} outside 1..={n_t}"
        )));
    }
    let bank = dft_receive_bank(n_r, m_rf)?;
    let mut stacked = Array2::<C64>::zeros((n_r, m));
    let mut basis = Array1::<C64>::zeros(n_t);
    for i in 0..m {
        basis[i] = C64::new(1.0, 0.0);
        for (j, block) in bank.blocks.iter().enumerate() {
            let y_ij = sound(channel, &basis.view(), &block.view(), noise)?;
            stacked
                .slice_mut(s![j * m_rf..(j + 1) * m_rf, i])
                .assign(&y_ij);
        }
        basis[i] = C64::new(0.0, 0.0);
    }
    let y_post_dft = bank.full_matrix.dot(&stacked);
    Ok(StageOneObservation { y_post_dft, m, channel_uses: m * n_r / m_rf })
}

/// Stage 2: observe the remaining `N_t - m` columns through the adapted
/// receive frame `w_hat`, one channel use per column.
pub fn collect_stage_two(
    channel: &ChannelInstance,
    w_hat: &ArrayView2<C64>,
    m: usize,
    noise: &mut NoiseModel,
) -> Result<StageTwoObservation> {
    let n_t = channel.n_t();
    if m >= n_t {
        return Err(SaseError::InvalidParameter(format!(
            "stage-2 needs m < N_t, got m = {m}, N_t = {n_t}"
        )));
    }
    linalg::check_semi_unitary(w_hat, 1e-8, "stage-2 receive frame")?;
    let width = w_hat.ncols();
    let mut q_c = Array2::<C64>::zeros((width, n_t - m));
    let mut basis = Array1::<C64>::zeros(n_t);
    for k in 0..(n_t - m) {
        basis[m + k] = C64::new(1.0, 0.0);
        let y = sound(channel, &basis.view(), w_hat, noise)?;
        q_c.column_mut(k).assign(&y);
        basis[m + k] = C64::new(0.0, 0.0);
    }
    Ok(StageTwoObservation { q_c, channel_uses: n_t - m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{assemble_channel, sample_paths, ArrayGeometry, ArrayKind};
    use ndarray::Array2;
    use num_complex::Complex64;

    fn test_channel(n_r: usize, n_t: usize, l: usize, seed: u64) -> ChannelInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let paths = sample_paths(l, ArrayKind::Ula, &mut rng).unwrap();
        let rx = ArrayGeometry::ula(n_r).unwrap();
        let tx = ArrayGeometry::ula(n_t).unwrap();
        assemble_channel(&paths, &rx, &tx).unwrap()
    }

    #[test]
    fn basis_sounder_composes_to_unit_vector() {
        for &(i, n_t, n_rf) in &[(1usize, 4usize, 2usize), (3, 8, 4), (144, 144, 8)] {
            let sounder = basis_transmit_sounder(i, n_t, n_rf).unwrap();
            let f = sounder.composed_transmit().unwrap();
            for k in 0..n_t {
                let expect = if k == i - 1 { 1.0 } else { 0.0 };
                assert!(
                    (f[k] - Complex64::new(expect, 0.0)).norm() < 1e-12,
                    "entry {k} of e_{i}: {:?}",
                    f[k]
                );
            }
            let norm: f64 = f.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            assert!(sounder.modulus_defect() < 1e-12);
        }
    }

    #[test]
    fn basis_sounder_needs_two_chains() {
        assert!(basis_transmit_sounder(1, 8, 1).is_err());
    }

    #[test]
    fn dft_bank_blocks_are_orthogonal() {
        let bank = dft_receive_bank(4, 2).unwrap();
        assert_eq!(bank.num_blocks(), 2);
        let m = &bank.full_matrix;
        let gram = linalg::gram(&m.view());
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - Complex64::new(expect, 0.0)).norm() < 1e-10);
            }
        }
        let cross = linalg::adjoint(&bank.blocks[0].view()).dot(&bank.blocks[1]);
        assert!(linalg::fro_norm(&cross.view()) < 1e-10);
    }

    #[test]
    fn dft_bank_paper_dimensions() {
        let bank = dft_receive_bank(36, 6).unwrap();
        assert_eq!(bank.num_blocks(), 6);
        for b in &bank.blocks {
            assert_eq!(b.dim(), (36, 6));
        }
    }

    #[test]
    fn dft_bank_rejects_nondivisible() {
        assert!(dft_receive_bank(36, 5).is_err());
    }

    #[test]
    fn noiseless_sound_slices_first_column() {
        let ch = test_channel(8, 12, 2, 1);
        let mut noise = NoiseModel::seeded(0.0, 0).unwrap();
        let mut f = Array1::<C64>::zeros(12);
        f[0] = Complex64::new(1.0, 0.0);
        let w = Array2::<C64>::eye(8);
        let y = sound(&ch, &f.view(), &w.slice(s![.., ..2]), &mut noise).unwrap();
        for i in 0..2 {
            assert_eq!(y[i], ch.matrix()[[i, 0]]);
        }
    }

    #[test]
    fn orthonormal_receive_frame_is_non_expansive() {
        let ch = test_channel(8, 12, 2, 2);
        let mut noise = NoiseModel::seeded(0.0, 0).unwrap();
        let mut f = Array1::<C64>::zeros(12);
        f[3] = Complex64::new(1.0, 0.0);
        let bank = dft_receive_bank(8, 4).unwrap();
        let y = sound(&ch, &f.view(), &bank.blocks[0].view(), &mut noise).unwrap();
        let hf_norm: f64 = (0..8).map(|i| ch.matrix()[[i, 3]].norm_sqr()).sum::<f64>().sqrt();
        let y_norm: f64 = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(y_norm <= hf_norm + 1e-12);
    }

    #[test]
    fn projected_noise_variance_matches_sigma2() {
        let ch = test_channel(8, 12, 2, 3);
        let sigma2 = 0.7;
        let mut noise = NoiseModel::seeded(sigma2, 99).unwrap();
        let bank = dft_receive_bank(8, 4).unwrap();
        let f = Array1::<C64>::zeros(12);
        let mut acc = 0.0;
        let draws = 10_000;
        for _ in 0..draws {
            let y = sound(&ch, &f.view(), &bank.blocks[1].view(), &mut noise).unwrap();
            acc += y.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let mean = acc / (draws * 4) as f64;
        assert!(
            (mean - sigma2).abs() < 0.05 * sigma2,
            "projected noise variance {mean}, expected {sigma2}"
        );
    }

    #[test]
    fn stage_one_noiseless_recovers_prefix() {
        let ch = test_channel(12, 20, 3, 4);
        let mut noise = NoiseModel::seeded(0.0, 5).unwrap();
        let obs = collect_stage_one(&ch, 7, 4, &mut noise).unwrap();
        assert_eq!(obs.channel_uses, 7 * 12 / 4);
        let hs = ch.column_prefix(7).unwrap();
        let diff = &obs.y_post_dft - &hs;
        let rel = linalg::fro_norm(&diff.view()) / linalg::fro_norm(&hs);
        assert!(rel < 1e-12, "relative error {rel}");
    }

    #[test]
    fn stage_one_channel_use_accounting() {
        let ch = test_channel(36, 144, 4, 6);
        let mut noise = NoiseModel::seeded(0.1, 7).unwrap();
        let obs = collect_stage_one(&ch, 20, 6, &mut noise).unwrap();
        assert_eq!(obs.channel_uses, 120);
        assert_eq!(obs.m, 20);
        assert_eq!(obs.y_post_dft.dim(), (36, 20));
    }

    #[test]
    fn stage_two_noiseless_projects_remaining_columns() {
        let ch = test_channel(12, 20, 3, 8);
        let mut noise = NoiseModel::seeded(0.0, 9).unwrap();
        let u = ch.true_left().to_owned();
        let obs = collect_stage_two(&ch, &u.view(), 6, &mut noise).unwrap();
        assert_eq!(obs.channel_uses, 14);
        let expected = linalg::adjoint(&u.view()).dot(&ch.matrix().slice(s![.., 6..]));
        let rel = linalg::fro_norm(&(&obs.q_c - &expected).view())
            / linalg::fro_norm(&expected.view());
        assert!(rel < 1e-12);
    }

    #[test]
    fn stage_two_rejects_skewed_frame() {
        let ch = test_channel(12, 20, 3, 10);
        let mut noise = NoiseModel::seeded(0.0, 11).unwrap();
        let mut w = ch.true_left().to_owned();
        w[[0, 0]] += Complex64::new(0.3, 0.0);
        assert!(collect_stage_two(&ch, &w.view(), 6, &mut noise).is_err());
    }

    #[test]
    fn stage_two_paper_dimensions() {
        let ch = test_channel(36, 144, 4, 12);
        let mut noise = NoiseModel::seeded(0.05, 13).unwrap();
        let u = ch.true_left().to_owned();
        let obs = collect_stage_two(&ch, &u.view(), 20, &mut noise).unwrap();
        assert_eq!(obs.q_c.dim(), (4, 124));
        assert_eq!(obs.channel_uses, 124);
    }

    #[test]
    fn observations_are_seed_deterministic() {
        let ch = test_channel(12, 20, 3, 14);
        let mut n1 = NoiseModel::seeded(0.2, 77).unwrap();
        let mut n2 = NoiseModel::seeded(0.2, 77).unwrap();
        let a = collect_stage_one(&ch, 6, 4, &mut n1).unwrap();
        let b = collect_stage_one(&ch, 6, 4, &mut n2).unwrap();
        assert_eq!(a.y_post_dft, b.y_post_dft);
    }

    #[test]
    fn stage_one_noise_is_white_after_recombination() {
        // Light version of the whitening check; the acceptance suite runs the
        // full 1e4-sample covariance test.
        let ch = test_channel(8, 12, 2, 15);
        let sigma2 = 1.0;
        let mut noise = NoiseModel::seeded(sigma2, 21).unwrap();
        let m = 3;
        let hs = ch.column_prefix(m).unwrap().to_owned();
        let trials = 4000;
        let dim = 8 * m;
        let mut diag_acc = vec![0.0f64; dim];
        let mut off = 0.0f64;
        for _ in 0..trials {
            let obs = collect_stage_one(&ch, m, 4, &mut noise).unwrap();
            let n_s = &obs.y_post_dft - &hs;
            let v = linalg::vec_colmajor(&n_s.view());
            for (i, z) in v.iter().enumerate() {
                diag_acc[i] += z.norm_sqr();
            }
            off += (v[0] * v[dim - 1].conj()).re;
        }
        for d in &diag_acc {
            let mean = d / trials as f64;
            assert!((mean - sigma2).abs() < 0.1, "diag variance {mean}");
        }
        assert!((off / trials as f64).abs() < 0.1);
    }
}
