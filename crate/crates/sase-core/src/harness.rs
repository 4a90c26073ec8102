//! Monte Carlo experiment runner: seeded trial streams, sweep grids over
//! SNR / channel-use budget / path count / rank mismatch, and CSV/JSON
//! emission.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    assemble_channel, numerical_rank, sample_paths, ArrayGeometry, ArrayKind, ChannelInstance,
};
use crate::error::{Result, SaseError};
use crate::linalg;
use crate::metrics::{self, AccuracyReport};
use crate::reconstruct::{assemble_estimate, build_ls_system, solve_core};
use crate::sounding::NoiseModel;
use crate::subspace::{run_sase, ApproximationMode, AssumedRank, DictionaryGrid, SaseParams};

/// Relative tolerance used when counting dominant singular values.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Snr,
    ChannelUses,
    Paths,
    Mismatch,
    RankCheck,
}

/// Estimator rank selection as written in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssumedLSpec {
    /// Gap-based estimation from the stage-1 singular values.
    Auto,
    /// Track the true path count of the trial.
    SameAsTrue,
    Fixed(usize),
}

/// Stage-1 budget as written in configs: direct, or derived from a total
/// channel-use target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MSpec {
    Columns(usize),
    FromChannelUses(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Hybrid,
    Unconstrained,
}

impl From<Mode> for ApproximationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Hybrid => ApproximationMode::Hybrid,
            Mode::Unconstrained => ApproximationMode::Unconstrained,
        }
    }
}

/// Full experiment description. Defaults follow the reference operating
/// point: 36x144 arrays, 6/8 RF chains, 4 paths, m = 20 (244 channel uses).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_r: usize,
    pub n_t: usize,
    pub m_rf: usize,
    pub n_rf: usize,
    pub true_l: usize,
    pub assumed_l: AssumedLSpec,
    pub m_spec: MSpec,
    pub snr_db_grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub mode: Mode,
    pub geometry: ArrayKind,
    /// Dictionary atom count per side; `None` means twice the antenna count.
    pub dict_size: Option<usize>,
    pub sweep: SweepKind,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_r: 36,
            n_t: 144,
            m_rf: 6,
            n_rf: 8,
            true_l: 4,
            assumed_l: AssumedLSpec::SameAsTrue,
            m_spec: MSpec::Columns(20),
            snr_db_grid: vec![-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
            trials: 200,
            seed: 42,
            mode: Mode::Hybrid,
            geometry: ArrayKind::Ula,
            dict_size: None,
            sweep: SweepKind::Snr,
        }
    }
}

impl ExperimentConfig {
    /// Parse a flat `key = value` config text (one pair per line, `#`
    /// comments allowed), on top of the defaults.
    pub fn from_flat_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SaseError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set_key(key.trim(), value.trim())
                .map_err(|e| SaseError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn from_flat_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SaseError::Io { path: path.display().to_string(), source: e })?;
        Self::from_flat_str(&text)
    }

    /// Apply one `key = value` assignment. Used for both config files and
    /// CLI flag overrides.
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| SaseError::Config(format!("key `{key}`: {what} (got `{value}`)"));
        match key {
            "n_r" => self.n_r = parse_num(value).ok_or_else(|| bad("expected integer"))?,
            "n_t" => self.n_t = parse_num(value).ok_or_else(|| bad("expected integer"))?,
            "m_rf" => self.m_rf = parse_num(value).ok_or_else(|| bad("expected integer"))?,
            "n_rf" => self.n_rf = parse_num(value).ok_or_else(|| bad("expected integer"))?,
            "true_l" => self.true_l = parse_num(value).ok_or_else(|| bad("expected integer"))?,
            "assumed_l" => {
                self.assumed_l = match value {
                    "auto" => AssumedLSpec::Auto,
                    "true" => AssumedLSpec::SameAsTrue,
                    other => AssumedLSpec::Fixed(
                        parse_num(other).ok_or_else(|| bad("expected integer, `auto`, or `true`"))?,
                    ),
                }
            }
            "m" => {
                self.m_spec =
                    MSpec::Columns(parse_num(value).ok_or_else(|| bad("expected integer"))?)
            }
            "channel_uses" => {
                self.m_spec = MSpec::FromChannelUses(
                    parse_num(value).ok_or_else(|| bad("expected integer"))?,
                )
            }
            "snr_db_grid" => {
                let grid: Option<Vec<f64>> =
                    value.split(',').map(|v| v.trim().parse::<f64>().ok()).collect();
                let grid = grid.ok_or_else(|| bad("expected comma-separated reals"))?;
                if grid.is_empty() {
                    return Err(bad("grid is empty"));
                }
                self.snr_db_grid = grid;
            }
            "trials" => self.trials = parse_num(value).ok_or_else(|| bad("expected integer"))?,
            "seed" => self.seed = parse_num(value).ok_or_else(|| bad("expected integer"))?,
            "mode" => {
                self.mode = match value {
                    "hybrid" => Mode::Hybrid,
                    "unconstrained" => Mode::Unconstrained,
                    _ => return Err(bad("expected `hybrid` or `unconstrained`")),
                }
            }
            "geometry" => {
                self.geometry = match value.to_ascii_lowercase().as_str() {
                    "ula" => ArrayKind::Ula,
                    "upa" => ArrayKind::Upa,
                    _ => return Err(bad("expected `ula` or `upa`")),
                }
            }
            "dict_size" => {
                self.dict_size = match value {
                    "auto" => None,
                    other => Some(parse_num(other).ok_or_else(|| bad("expected integer or `auto`"))?),
                }
            }
            "sweep" => {
                self.sweep = match value.replace('-', "_").as_str() {
                    "snr" => SweepKind::Snr,
                    "channel_uses" => SweepKind::ChannelUses,
                    "paths" => SweepKind::Paths,
                    "mismatch" => SweepKind::Mismatch,
                    "rank_check" => SweepKind::RankCheck,
                    _ => return Err(bad(
                        "expected snr | channel_uses | paths | mismatch | rank_check",
                    )),
                }
            }
            _ => return Err(SaseError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Flat `key = value` rendering, parseable by [`Self::from_flat_str`].
    pub fn to_flat_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n_r = {}", self.n_r);
        let _ = writeln!(out, "n_t = {}", self.n_t);
        let _ = writeln!(out, "m_rf = {}", self.m_rf);
        let _ = writeln!(out, "n_rf = {}", self.n_rf);
        let _ = writeln!(out, "true_l = {}", self.true_l);
        match self.assumed_l {
            AssumedLSpec::Auto => { let _ = writeln!(out, "assumed_l = auto"); }
            AssumedLSpec::SameAsTrue => { let _ = writeln!(out, "assumed_l = true"); }
            AssumedLSpec::Fixed(l) => { let _ = writeln!(out, "assumed_l = {l}"); }
        }
        match self.m_spec {
            MSpec::Columns(m) => { let _ = writeln!(out, "m = {m}"); }
            MSpec::FromChannelUses(k) => { let _ = writeln!(out, "channel_uses = {k}"); }
        }
        let grid: Vec<String> = self.snr_db_grid.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "snr_db_grid = {}", grid.join(","));
        let _ = writeln!(out, "trials = {}", self.trials);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "mode = {}", match self.mode {
            Mode::Hybrid => "hybrid",
            Mode::Unconstrained => "unconstrained",
        });
        let _ = writeln!(out, "geometry = {}", match self.geometry {
            ArrayKind::Ula => "ula",
            ArrayKind::Upa => "upa",
        });
        match self.dict_size {
            None => { let _ = writeln!(out, "dict_size = auto"); }
            Some(d) => { let _ = writeln!(out, "dict_size = {d}"); }
        }
        let _ = writeln!(out, "sweep = {}", match self.sweep {
            SweepKind::Snr => "snr",
            SweepKind::ChannelUses => "channel_uses",
            SweepKind::Paths => "paths",
            SweepKind::Mismatch => "mismatch",
            SweepKind::RankCheck => "rank_check",
        });
        out
    }

    /// Stage-1 budget after resolving a channel-use target through the
    /// overhead formula. Non-integral targets are rejected with the two
    /// nearest attainable totals.
    pub fn resolved_m(&self) -> Result<usize> {
        match self.m_spec {
            MSpec::Columns(m) => Ok(m),
            MSpec::FromChannelUses(k) => {
                if self.m_rf == 0 || self.n_r <= self.m_rf {
                    return Err(SaseError::Config(format!(
                        "cannot invert channel-use target with N_r = {}, M_RF = {}",
                        self.n_r, self.m_rf
                    )));
                }
                if k <= self.n_t {
                    return Err(SaseError::Config(format!(
                        "channel-use target {k} does not exceed N_t = {}",
                        self.n_t
                    )));
                }
                let num = (k - self.n_t) * self.m_rf;
                let den = self.n_r - self.m_rf;
                if num % den != 0 {
                    let m_lo = (num / den).max(1);
                    let k_lo = metrics::sase_channel_uses(m_lo, self.n_r, self.m_rf, self.n_t)?;
                    let k_hi =
                        metrics::sase_channel_uses(m_lo + 1, self.n_r, self.m_rf, self.n_t)?;
                    return Err(SaseError::Config(format!(
                        "channel-use target {k} has no integral stage-1 budget; \
                         nearest valid targets are {k_lo} and {k_hi}"
                    )));
                }
                Ok(num / den)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_r == 0 || self.n_t == 0 {
            return Err(SaseError::Config("antenna counts must be positive".into()));
        }
        if self.m_rf < 2 || self.n_rf < 2 {
            return Err(SaseError::Config("both RF chain counts must be at least 2".into()));
        }
        if self.n_r % self.m_rf != 0 {
            return Err(SaseError::Config(format!(
                "N_r = {} must be an integer multiple of M_RF = {}",
                self.n_r, self.m_rf
            )));
        }
        if self.true_l == 0 || self.true_l > self.n_r.min(self.n_t) {
            return Err(SaseError::Config(format!(
                "true path count {} outside 1..=min(N_r, N_t)",
                self.true_l
            )));
        }
        if self.geometry == ArrayKind::Upa {
            ArrayGeometry::upa(self.n_r).map_err(|e| SaseError::Config(e.to_string()))?;
            ArrayGeometry::upa(self.n_t).map_err(|e| SaseError::Config(e.to_string()))?;
        }
        let m = self.resolved_m()?;
        if m < self.true_l || m > self.n_t {
            return Err(SaseError::Config(format!(
                "stage-1 budget m = {m} outside true_l..=N_t ({}..={})",
                self.true_l, self.n_t
            )));
        }
        if let Some(d) = self.dict_size {
            if d < self.n_r.max(self.n_t) {
                return Err(SaseError::Config(format!(
                    "dictionary size {d} below max antenna count {}",
                    self.n_r.max(self.n_t)
                )));
            }
        }
        if self.snr_db_grid.is_empty() {
            return Err(SaseError::Config("SNR grid is empty".into()));
        }
        if self.trials == 0 {
            return Err(SaseError::Config("trial count must be positive".into()));
        }
        Ok(())
    }

    fn dictionary_grid(&self) -> DictionaryGrid {
        match self.geometry {
            ArrayKind::Ula => DictionaryGrid::AngleSteering,
            ArrayKind::Upa => DictionaryGrid::OversampledDft,
        }
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Option<T> {
    s.parse().ok()
}

/// One operating point inside a sweep.
#[derive(Debug, Clone, Copy)]
pub struct GridPoint {
    pub sweep_var: f64,
    pub snr_db: f64,
    pub m: usize,
    pub true_l: usize,
    pub assumed_l: AssumedRank,
}

fn snr_db_to_sigma2(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Derive an independent stream: channel draws depend only on
/// `(seed, trial)`, so grid points of one sweep see common channels, while
/// noise depends on `(seed, grid, trial)`.
fn channel_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn noise_rng(seed: u64, grid: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 63) | (grid << 40) | trial);
    rng
}

fn geometries(cfg: &ExperimentConfig) -> Result<(ArrayGeometry, ArrayGeometry)> {
    match cfg.geometry {
        ArrayKind::Ula => Ok((ArrayGeometry::ula(cfg.n_r)?, ArrayGeometry::ula(cfg.n_t)?)),
        ArrayKind::Upa => Ok((ArrayGeometry::upa(cfg.n_r)?, ArrayGeometry::upa(cfg.n_t)?)),
    }
}

fn draw_channel(cfg: &ExperimentConfig, true_l: usize, trial: u64) -> Result<ChannelInstance> {
    let (rx, tx) = geometries(cfg)?;
    let mut rng = channel_rng(cfg.seed, trial);
    let paths = sample_paths(true_l, cfg.geometry, &mut rng)?;
    assemble_channel(&paths, &rx, &tx)
}

fn tag_trial(e: SaseError, trial: u64) -> SaseError {
    match e {
        SaseError::EstimationFailure(m) => {
            SaseError::EstimationFailure(format!("trial {trial}: {m}"))
        }
        SaseError::IllConditioned(m) => SaseError::IllConditioned(format!("trial {trial}: {m}")),
        SaseError::Singular(m) => SaseError::Singular(format!("trial {trial}: {m}")),
        SaseError::ContractViolation(m) => {
            SaseError::ContractViolation(format!("trial {trial}: {m}"))
        }
        other => other,
    }
}

fn run_point_trial(
    cfg: &ExperimentConfig,
    point: &GridPoint,
    grid_index: u64,
    trial: u64,
) -> Result<AccuracyReport> {
    let channel = draw_channel(cfg, point.true_l, trial)?;
    let sigma2 = snr_db_to_sigma2(point.snr_db);
    let mut noise = NoiseModel::new(sigma2, noise_rng(cfg.seed, grid_index, trial))?;

    let params = SaseParams {
        m: point.m,
        m_rf: cfg.m_rf,
        n_rf: cfg.n_rf,
        assumed_l: point.assumed_l,
        mode: cfg.mode.into(),
        dict_size_rx: cfg.dict_size,
        dict_size_tx: cfg.dict_size,
        grid: cfg.dictionary_grid(),
    };
    let run = run_sase(&channel, &params, &mut noise).map_err(|e| tag_trial(e, trial))?;

    // Low-dimensional reconstruction from the two frames.
    let (gram, rhs) = build_ls_system(
        &run.w_hat.frame.view(),
        &run.f_hat.frame.view(),
        &run.stage1.y_post_dft.view(),
        &run.stage2.q_c.view(),
        point.m,
    )?;
    let core = solve_core(&gram.view(), &rhs.view()).map_err(|e| tag_trial(e, trial))?;
    let estimate =
        assemble_estimate(&run.w_hat.frame.view(), core, &run.f_hat.frame.view())?;
    let nmse = metrics::nmse(&channel, &estimate)?;

    // Wider-than-true estimates are evaluated on their dominant true-L modes.
    let l_eval = run.rank_used.min(point.true_l);
    let w_eval = run.w_hat.dominant(l_eval).to_owned();
    let f_eval = run.f_hat.dominant(l_eval).to_owned();

    let eta = metrics::eta(&w_eval.view(), &f_eval.view(), &channel)?;
    let eta_c = metrics::eta_c(&w_eval.view(), &channel)?;
    let eta_r = metrics::eta_r(&f_eval.view(), &channel)?;
    let rate =
        metrics::spectrum_efficiency(&w_eval.view(), &f_eval.view(), &channel, sigma2, l_eval)?;
    let gamma = metrics::effective_snr(&w_eval.view(), &f_eval.view(), &channel, sigma2, l_eval)?;
    let rate_perfect_csi = metrics::spectrum_efficiency(
        &channel.true_left(),
        &channel.true_right(),
        &channel,
        sigma2,
        point.true_l,
    )?;

    // Bounds are evaluated on the realized signal matrices of this trial.
    let h_s = channel.column_prefix(point.m)?;
    let col_bound = metrics::column_bound(sigma2, &h_s, l_eval)?;
    let q_bar = linalg::adjoint(&run.w_hat.frame.view()).dot(&channel.matrix().to_owned());
    let row_bound = metrics::row_bound(sigma2, &q_bar.view(), l_eval)?;
    let joint_bound = metrics::joint_bound(
        &run.u_hat.frame.view(),
        &channel.true_left().slice(ndarray::s![.., ..l_eval]),
        &run.v_hat.frame.view(),
        &channel.true_right().slice(ndarray::s![.., ..l_eval]),
    )?;

    let report = AccuracyReport {
        eta,
        eta_c,
        eta_r,
        nmse,
        rate,
        rate_perfect_csi,
        gamma,
        col_bound,
        row_bound,
        joint_bound,
        delta1: run.w_hat.delta,
        delta2: run.f_hat.delta,
        channel_uses: run.total_channel_uses(),
    };
    report.check_consistency().map_err(|e| tag_trial(e, trial))?;
    Ok(report)
}

/// Run one trial at the config's own operating point (first SNR grid entry).
/// Deterministic in `(config, trial_index)`.
pub fn run_trial(cfg: &ExperimentConfig, trial_index: u64) -> Result<AccuracyReport> {
    cfg.validate()?;
    linalg::use_single_threaded_blas();
    let point = GridPoint {
        sweep_var: cfg.snr_db_grid[0],
        snr_db: cfg.snr_db_grid[0],
        m: cfg.resolved_m()?,
        true_l: cfg.true_l,
        assumed_l: resolve_assumed(cfg.assumed_l, cfg.true_l),
        };
    run_point_trial(cfg, &point, 0, trial_index)
}

fn resolve_assumed(spec: AssumedLSpec, true_l: usize) -> AssumedRank {
    match spec {
        AssumedLSpec::Auto => AssumedRank::Auto,
        AssumedLSpec::SameAsTrue => AssumedRank::Fixed(true_l),
        AssumedLSpec::Fixed(l) => AssumedRank::Fixed(l),
    }
}

/// Aggregate of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_var: f64,
    pub eta_mean: f64,
    pub eta_se: f64,
    pub eta_c_mean: f64,
    pub eta_c_se: f64,
    pub eta_r_mean: f64,
    pub eta_r_se: f64,
    pub nmse_mean: f64,
    pub nmse_se: f64,
    pub rate_mean: f64,
    pub rate_se: f64,
    pub rate_perfect_csi: f64,
    pub col_bound_mean: f64,
    pub row_bound_mean: f64,
    pub joint_bound_mean: f64,
    pub delta1_mean: f64,
    pub delta2_mean: f64,
    pub channel_uses: usize,
    pub trials: usize,
}

pub const CSV_HEADER: &str = "sweep_var,eta_mean,eta_se,eta_c_mean,eta_c_se,eta_r_mean,eta_r_se,\
nmse_mean,nmse_se,rate_mean,rate_se,rate_perfect_csi,col_bound_mean,row_bound_mean,\
joint_bound_mean,delta1_mean,delta2_mean,channel_uses,trials";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub wall_time_s: f64,
    pub rows: Vec<SweepRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mu, 0.0);
    }
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1.0);
    (mu, (var / n).sqrt())
}

fn aggregate(sweep_var: f64, reports: &[AccuracyReport]) -> Result<SweepRow> {
    let uses = reports[0].channel_uses;
    if reports.iter().any(|r| r.channel_uses != uses) {
        return Err(SaseError::ContractViolation(
            "channel uses varied within one grid point".into(),
        ));
    }
    let grab = |f: fn(&AccuracyReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
    let (eta_mean, eta_se) = mean_se(&grab(|r| r.eta));
    let (eta_c_mean, eta_c_se) = mean_se(&grab(|r| r.eta_c));
    let (eta_r_mean, eta_r_se) = mean_se(&grab(|r| r.eta_r));
    let (nmse_mean, nmse_se) = mean_se(&grab(|r| r.nmse));
    let (rate_mean, rate_se) = mean_se(&grab(|r| r.rate));
    Ok(SweepRow {
        sweep_var,
        eta_mean,
        eta_se,
        eta_c_mean,
        eta_c_se,
        eta_r_mean,
        eta_r_se,
        nmse_mean,
        nmse_se,
        rate_mean,
        rate_se,
        rate_perfect_csi: mean(reports.iter().map(|r| r.rate_perfect_csi)),
        col_bound_mean: mean(reports.iter().map(|r| r.col_bound)),
        row_bound_mean: mean(reports.iter().map(|r| r.row_bound)),
        joint_bound_mean: mean(reports.iter().map(|r| r.joint_bound)),
        delta1_mean: mean(reports.iter().map(|r| r.delta1)),
        delta2_mean: mean(reports.iter().map(|r| r.delta2)),
        channel_uses: uses,
        trials: reports.len(),
    })
}

fn build_grid(cfg: &ExperimentConfig) -> Result<Vec<GridPoint>> {
    let m = cfg.resolved_m()?;
    let assumed = resolve_assumed(cfg.assumed_l, cfg.true_l);
    let base_snr = cfg.snr_db_grid[0];
    let cap = cfg.m_rf.min(cfg.n_rf);
    let grid = match cfg.sweep {
        SweepKind::Snr => cfg
            .snr_db_grid
            .iter()
            .map(|&snr| GridPoint {
                sweep_var: snr,
                snr_db: snr,
                m,
                true_l: cfg.true_l,
                assumed_l: assumed,
            })
            .collect(),
        SweepKind::ChannelUses => {
            let mut pts = Vec::new();
            let mut mm = cfg.true_l;
            while mm <= (12 * cfg.true_l).min(cfg.n_t) {
                let k = metrics::sase_channel_uses(mm, cfg.n_r, cfg.m_rf, cfg.n_t)?;
                pts.push(GridPoint {
                    sweep_var: k as f64,
                    snr_db: base_snr,
                    m: mm,
                    true_l: cfg.true_l,
                    assumed_l: assumed,
                });
                mm += cfg.true_l;
            }
            pts
        }
        SweepKind::Paths => (1..=cap)
            .map(|l| GridPoint {
                sweep_var: l as f64,
                snr_db: base_snr,
                m,
                true_l: l,
                assumed_l: resolve_assumed(cfg.assumed_l, l),
            })
            .collect(),
        SweepKind::Mismatch => {
            let mut ls: Vec<usize> = vec![
                cfg.true_l.saturating_sub(1).max(1),
                cfg.true_l,
                (cfg.true_l + 1).min(cap),
                (cfg.true_l + 2).min(cap),
            ];
            ls.sort_unstable();
            ls.dedup();
            ls.into_iter()
                .map(|l| GridPoint {
                    sweep_var: l as f64,
                    snr_db: base_snr,
                    m,
                    true_l: cfg.true_l,
                    assumed_l: AssumedRank::Fixed(l),
                })
                .collect()
        }
        SweepKind::RankCheck => {
            return Err(SaseError::Config(
                "rank_check has its own runner; use run_rank_check".into(),
            ))
        }
    };
    Ok(grid)
}

fn check_grid_point(cfg: &ExperimentConfig, point: &GridPoint) -> Result<()> {
    if point.m < point.true_l || point.m > cfg.n_t {
        return Err(SaseError::Config(format!(
            "grid point (sweep_var = {}): m = {} outside {}..={}",
            point.sweep_var, point.m, point.true_l, cfg.n_t
        )));
    }
    if let AssumedRank::Fixed(l) = point.assumed_l {
        if l == 0 || l > point.m {
            return Err(SaseError::Config(format!(
                "grid point (sweep_var = {}): assumed rank {} outside 1..=m = {}",
                point.sweep_var, l, point.m
            )));
        }
    }
    Ok(())
}

/// Run a full sweep. Trials execute in parallel; aggregation is performed in
/// trial order so the result is independent of scheduling.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    linalg::use_single_threaded_blas();
    if cfg.sweep == SweepKind::RankCheck {
        return Err(SaseError::Config(
            "sweep = rank_check produces rank tables; call run_rank_check / `sase rank-check`"
                .into(),
        ));
    }
    let grid = build_grid(cfg)?;
    for point in &grid {
        check_grid_point(cfg, point)?;
    }
    let start = Instant::now();
    let mut rows = Vec::with_capacity(grid.len());
    for (gi, point) in grid.iter().enumerate() {
        let reports: Vec<AccuracyReport> = (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| run_point_trial(cfg, point, gi as u64, t))
            .collect::<Result<Vec<_>>>()?;
        rows.push(aggregate(point.sweep_var, &reports)?);
    }
    Ok(SweepResult { config: cfg.clone(), wall_time_s: start.elapsed().as_secs_f64(), rows })
}

/// Rank of the sampled column block versus the stage-1 budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub m: usize,
    pub rank_min: usize,
    pub rank_mean: f64,
    pub rank_max: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCheckResult {
    pub config: ExperimentConfig,
    pub wall_time_s: f64,
    pub rows: Vec<RankRow>,
}

pub const RANK_CSV_HEADER: &str = "m,rank_min,rank_mean,rank_max,trials";

/// Numerical rank of the first-m-column block over fresh channel draws, for
/// m in multiples of the path count.
pub fn run_rank_check(cfg: &ExperimentConfig) -> Result<RankCheckResult> {
    cfg.validate()?;
    linalg::use_single_threaded_blas();
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut m = cfg.true_l;
    while m <= (10 * cfg.true_l).min(cfg.n_t) {
        let ranks: Vec<usize> = (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| -> Result<usize> {
                let channel = draw_channel(cfg, cfg.true_l, t)?;
                numerical_rank(&channel.column_prefix(m)?, RANK_TOL)
            })
            .collect::<Result<Vec<_>>>()?;
        let min = *ranks.iter().min().unwrap();
        let max = *ranks.iter().max().unwrap();
        let mean = ranks.iter().sum::<usize>() as f64 / ranks.len() as f64;
        rows.push(RankRow { m, rank_min: min, rank_mean: mean, rank_max: max, trials: ranks.len() });
        m += cfg.true_l;
    }
    Ok(RankCheckResult { config: cfg.clone(), wall_time_s: start.elapsed().as_secs_f64(), rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Csv,
    Json,
}

impl std::str::FromStr for EmitFormat {
    type Err = SaseError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(EmitFormat::Csv),
            "json" => Ok(EmitFormat::Json),
            other => Err(SaseError::Config(format!("unknown format `{other}`"))),
        }
    }
}

fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &result.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.sweep_var,
            r.eta_mean,
            r.eta_se,
            r.eta_c_mean,
            r.eta_c_se,
            r.eta_r_mean,
            r.eta_r_se,
            r.nmse_mean,
            r.nmse_se,
            r.rate_mean,
            r.rate_se,
            r.rate_perfect_csi,
            r.col_bound_mean,
            r.row_bound_mean,
            r.joint_bound_mean,
            r.delta1_mean,
            r.delta2_mean,
            r.channel_uses,
            r.trials
        );
    }
    out
}

fn rank_csv(result: &RankCheckResult) -> String {
    let mut out = String::from(RANK_CSV_HEADER);
    out.push('\n');
    for r in &result.rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.m, r.rank_min, r.rank_mean, r.rank_max, r.trials);
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| SaseError::Io { path: path.display().to_string(), source: e })
}

/// Write a sweep result as CSV (fixed column schema) or JSON (same fields
/// plus the config echo).
pub fn emit(result: &SweepResult, format: EmitFormat, path: &Path) -> Result<()> {
    match format {
        EmitFormat::Csv => write_file(path, &sweep_csv(result)),
        EmitFormat::Json => {
            let text = serde_json::to_string_pretty(result)?;
            write_file(path, &text)
        }
    }
}

pub fn emit_rank_check(result: &RankCheckResult, format: EmitFormat, path: &Path) -> Result<()> {
    match format {
        EmitFormat::Csv => write_file(path, &rank_csv(result)),
        EmitFormat::Json => {
            let text = serde_json::to_string_pretty(result)?;
            write_file(path, &text)
        }
    }
}
