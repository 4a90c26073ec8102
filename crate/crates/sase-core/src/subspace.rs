//! Column/row subspace extraction by truncated SVD, path-count estimation
//! from singular-value gaps, and constant-modulus frame approximation via
//! orthogonal matching pursuit.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use ndarray_linalg::{JobSvd, LeastSquaresSvd, SVDDC};

use crate::channel::{steering_vector_ula, ChannelInstance};
use crate::error::{Result, SaseError};
use crate::linalg::{self, C64};
use crate::sounding::{
    collect_stage_one, collect_stage_two, NoiseModel, StageOneObservation, StageTwoObservation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubspaceSide {
    Column,
    Row,
}

/// An orthonormal frame spanning an estimated subspace, with the singular
/// values it was extracted from.
#[derive(Debug, Clone)]
pub struct SubspaceEstimate {
    pub frame: Array2<C64>,
    pub side: SubspaceSide,
    pub singulars: Array1<f64>,
}

/// Constant-modulus analog factor times a digital factor. `residual` is the
/// Frobenius distance to the approximation target before the digital factor
/// was rescaled to make the product semi-unitary.
#[derive(Debug, Clone)]
pub struct HybridFrame {
    pub analog: Array2<C64>,
    pub digital: Array2<C64>,
    pub residual: f64,
}

impl HybridFrame {
    pub fn product(&self) -> Array2<C64> {
        self.analog.dot(&self.digital)
    }

    pub fn modulus_defect(&self) -> f64 {
        let target = 1.0 / (self.analog.nrows() as f64).sqrt();
        self.analog
            .iter()
            .map(|z| (z.norm() - target).abs())
            .fold(0.0, f64::max)
    }
}

/// Over-complete codebook of unit-norm constant-modulus columns.
#[derive(Debug, Clone)]
pub struct Dictionary {
    pub atoms: Array2<C64>,
}

impl Dictionary {
    pub fn atom_count(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn rows(&self) -> usize {
        self.atoms.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictionaryGrid {
    /// Steering vectors at `D` angles uniformly gridding `[-pi/2, pi/2)`.
    AngleSteering,
    /// `D`-point oversampled DFT frame truncated to `n` rows.
    OversampledDft,
}

/// Policy for reading the path count off a singular-value profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapPolicy {
    /// Index maximizing `s_i / s_{i+1}`; ties go to the lowest index.
    LargestRatio,
    /// Count of singular values at or above `fraction * s_1`.
    Threshold(f64),
}

/// Dominant `l` left singular vectors of a stage-1 observation, maximizing
/// the captured energy `||U^H Y_S||_F` over semi-unitary `U`.
pub fn left_subspace(y_s: &ArrayView2<C64>, l: usize) -> Result<SubspaceEstimate> {
    if l == 0 || l > y_s.nrows().min(y_s.ncols()) {
        return Err(SaseError::InvalidParameter(format!(
            "rank {l} outside 1..=min{:?}",
            y_s.dim()
        )));
    }
    let (mut u, sing, _) = linalg::thin_svd(y_s)?;
    linalg::canonicalize_columns(&mut u, 1e-12);
    Ok(SubspaceEstimate {
        frame: u.slice(s![.., ..l]).to_owned(),
        side: SubspaceSide::Column,
        singulars: sing.slice(s![..l]).to_owned(),
    })
}

/// Dominant `l` right singular vectors; mirror of [`left_subspace`].
pub fn right_subspace(q_hat: &ArrayView2<C64>, l: usize) -> Result<SubspaceEstimate> {
    if l == 0 || l > q_hat.nrows().min(q_hat.ncols()) {
        return Err(SaseError::InvalidParameter(format!(
            "rank {l} outside 1..=min{:?}",
            q_hat.dim()
        )));
    }
    let (_, sing, mut v) = linalg::thin_svd(q_hat)?;
    linalg::canonicalize_columns(&mut v, 1e-12);
    Ok(SubspaceEstimate {
        frame: v.slice(s![.., ..l]).to_owned(),
        side: SubspaceSide::Row,
        singulars: sing.slice(s![..l]).to_owned(),
    })
}

/// Column-wise concatenation `[q_s, q_c]` of the projected stage-1 and
/// stage-2 observations.
pub fn build_q(q_s: &ArrayView2<C64>, q_c: &ArrayView2<C64>) -> Result<Array2<C64>> {
    if q_s.nrows() != q_c.nrows() {
        return Err(SaseError::ShapeMismatch(format!(
            "row counts disagree: {} vs {}",
            q_s.nrows(),
            q_c.nrows()
        )));
    }
    Ok(concatenate![Axis(1), q_s.to_owned(), q_c.to_owned()])
}

/// Estimate the number of dominant modes from a descending singular-value
/// profile, clamped to `1..=cap`.
pub fn estimate_path_count(singulars: &[f64], cap: usize, policy: GapPolicy) -> Result<usize> {
    if singulars.len() < 2 {
        return Err(SaseError::InvalidParameter(
            "need at least 2 singular values to locate a gap".into(),
        ));
    }
    if cap == 0 {
        return Err(SaseError::InvalidParameter("cap must be at least 1".into()));
    }
    if singulars.iter().all(|&s| s <= 0.0) {
        return Err(SaseError::EstimationFailure(
            "all-zero singular value profile".into(),
        ));
    }
    let raw = match policy {
        GapPolicy::LargestRatio => {
            let mut best_idx = 0usize;
            let mut best_ratio = -1.0f64;
            for i in 0..singulars.len() - 1 {
                let ratio = if singulars[i + 1] > 0.0 {
                    singulars[i] / singulars[i + 1]
                } else if singulars[i] > 0.0 {
                    f64::INFINITY
                } else {
                    continue;
                };
                if ratio > best_ratio {
                    best_ratio = ratio;
                    best_idx = i;
                }
            }
            best_idx + 1
        }
        GapPolicy::Threshold(fraction) => {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(SaseError::InvalidParameter(format!(
                    "threshold fraction {fraction} outside [0, 1]"
                )));
            }
            let floor = fraction * singulars[0];
            singulars.iter().filter(|&&s| s >= floor).count()
        }
    };
    Ok(raw.clamp(1, cap))
}

/// Build a constant-modulus dictionary of `d >= n` atoms.
pub fn build_dictionary(n: usize, d: usize, grid: DictionaryGrid) -> Result<Dictionary> {
    if n == 0 {
        return Err(SaseError::InvalidDimension("dictionary needs n >= 1".into()));
    }
    if d < n {
        return Err(SaseError::InvalidParameter(format!(
            "dictionary size {d} below row dimension {n}"
        )));
    }
    let mut atoms = Array2::<C64>::zeros((n, d));
    match grid {
        DictionaryGrid::AngleSteering => {
            for k in 0..d {
                let theta = -std::f64::consts::FRAC_PI_2
                    + std::f64::consts::PI * (k as f64) / (d as f64);
                atoms.column_mut(k).assign(&steering_vector_ula(theta, n)?);
            }
        }
        DictionaryGrid::OversampledDft => {
            let scale = 1.0 / (n as f64).sqrt();
            let step = -2.0 * std::f64::consts::PI / d as f64;
            for k in 0..d {
                for m in 0..n {
                    atoms[[m, k]] = C64::from_polar(scale, step * (m * k) as f64);
                }
            }
        }
    }
    Ok(Dictionary { atoms })
}

/// Greedy matrix OMP: pick `slots` dictionary atoms by summed squared
/// correlation with the residual across all target columns, fit the digital
/// factor by least squares, then rescale the digital factor so the product
/// is semi-unitary. The pre-orthonormalization misfit is kept in `residual`.
pub fn omp_hybrid_approx(
    target: &ArrayView2<C64>,
    dict: &Dictionary,
    slots: usize,
) -> Result<HybridFrame> {
    let n = target.nrows();
    let l = target.ncols();
    let d = dict.atom_count();
    if dict.rows() != n {
        return Err(SaseError::ShapeMismatch(format!(
            "dictionary rows {} != target rows {n}",
            dict.rows()
        )));
    }
    if slots > d {
        return Err(SaseError::InvalidParameter(format!(
            "chain budget {slots} exceeds dictionary size {d}"
        )));
    }
    if l > slots {
        return Err(SaseError::InvalidParameter(format!(
            "target width {l} exceeds chain budget {slots}"
        )));
    }

    let atoms_h = linalg::adjoint(&dict.atoms.view());
    let mut selected: Vec<usize> = Vec::with_capacity(slots);
    let mut residual = target.to_owned();
    let mut digital = Array2::<C64>::zeros((0, l));

    while selected.len() < slots {
        let corr = atoms_h.dot(&residual);
        let mut scores: Vec<(usize, f64)> = (0..d)
            .filter(|j| !selected.contains(j))
            .map(|j| {
                let s: f64 = corr.row(j).iter().map(|z| z.norm_sqr()).sum();
                (j, s)
            })
            .collect();
        // Descending score, ascending index on ties.
        scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

        let mut accepted = None;
        for (j, _) in &scores {
            selected.push(*j);
            if selection_is_well_conditioned(&dict.atoms, &selected) {
                accepted = Some(*j);
                break;
            }
            selected.pop();
        }
        if accepted.is_none() {
            return Err(SaseError::InvalidDimension(format!(
                "no independent atom left after selecting {} of {slots}",
                selected.len()
            )));
        }

        let a_sel = gather_columns(&dict.atoms, &selected);
        let fit = a_sel.least_squares(&target.to_owned())?;
        digital = fit.solution;
        residual = target.to_owned() - a_sel.dot(&digital);
    }

    let analog = gather_columns(&dict.atoms, &selected);
    let delta = linalg::fro_norm(&residual.view());
    orthonormalize_product(HybridFrame { analog, digital, residual: delta })
}

fn gather_columns(atoms: &Array2<C64>, indices: &[usize]) -> Array2<C64> {
    let mut out = Array2::<C64>::zeros((atoms.nrows(), indices.len()));
    for (k, &j) in indices.iter().enumerate() {
        out.column_mut(k).assign(&atoms.column(j));
    }
    out
}

fn selection_is_well_conditioned(atoms: &Array2<C64>, indices: &[usize]) -> bool {
    let a = gather_columns(atoms, indices);
    match a.svddc(JobSvd::None) {
        Ok((_, sing, _)) => sing.iter().all(|&s| s > 1e-10),
        Err(_) => false,
    }
}

/// Rescale the digital factor by the inverse principal square root of the
/// product's Gram matrix. The analog factor and the span of the product are
/// unchanged; afterwards `product^H product = I`.
pub fn orthonormalize_product(hf: HybridFrame) -> Result<HybridFrame> {
    let product = hf.product();
    let g = linalg::gram(&product.view());
    let w = linalg::inv_sqrt_hermitian(&g.view(), 1e-12).map_err(|_| {
        SaseError::Singular("hybrid product is rank deficient; cannot orthonormalize".into())
    })?;
    Ok(HybridFrame {
        analog: hf.analog,
        digital: hf.digital.dot(&w),
        residual: hf.residual,
    })
}

/// How the designed transceiver frames approximate the SVD frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproximationMode {
    /// OMP under the constant-modulus analog constraint.
    Hybrid,
    /// Use the SVD frames directly (the zero-misfit analysis regime).
    Unconstrained,
}

/// Rank assumed by the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssumedRank {
    /// Read the rank off the stage-1 singular-value gap.
    Auto,
    Fixed(usize),
}

/// Knobs for one end-to-end estimation pass.
#[derive(Debug, Clone)]
pub struct SaseParams {
    /// Stage-1 column budget.
    pub m: usize,
    pub m_rf: usize,
    pub n_rf: usize,
    pub assumed_l: AssumedRank,
    pub mode: ApproximationMode,
    /// Dictionary sizes per side; `None` means twice the antenna count.
    pub dict_size_rx: Option<usize>,
    pub dict_size_tx: Option<usize>,
    pub grid: DictionaryGrid,
}

impl SaseParams {
    pub fn new(m: usize, m_rf: usize, n_rf: usize, assumed_l: AssumedRank) -> Self {
        Self {
            m,
            m_rf,
            n_rf,
            assumed_l,
            mode: ApproximationMode::Hybrid,
            dict_size_rx: None,
            dict_size_tx: None,
            grid: DictionaryGrid::AngleSteering,
        }
    }

    pub fn rank_cap(&self) -> usize {
        self.m_rf.min(self.n_rf)
    }
}

/// A designed transceiver frame: semi-unitary, with the approximation misfit
/// and, in hybrid mode, the analog/digital factors behind it.
#[derive(Debug, Clone)]
pub struct DesignedFrame {
    pub frame: Array2<C64>,
    pub delta: f64,
    pub factors: Option<(Array2<C64>, Array2<C64>)>,
}

impl DesignedFrame {
    /// First `l` columns (the dominant modes, since columns are ordered by
    /// the estimation-stage singular values).
    pub fn dominant(&self, l: usize) -> ArrayView2<'_, C64> {
        self.frame.slice(s![.., ..l.min(self.frame.ncols())])
    }
}

/// Everything produced by one two-stage estimation pass.
#[derive(Debug, Clone)]
pub struct SaseRun {
    pub w_hat: DesignedFrame,
    pub f_hat: DesignedFrame,
    pub u_hat: SubspaceEstimate,
    pub v_hat: SubspaceEstimate,
    pub stage1: StageOneObservation,
    pub stage2: StageTwoObservation,
    /// Rank actually used by the estimator (after gap estimation/clamping).
    pub rank_used: usize,
}

impl SaseRun {
    pub fn total_channel_uses(&self) -> usize {
        self.stage1.channel_uses + self.stage2.channel_uses
    }
}

fn design_frame(
    target: &SubspaceEstimate,
    mode: ApproximationMode,
    dict_size: Option<usize>,
    grid: DictionaryGrid,
    slots: usize,
) -> Result<DesignedFrame> {
    match mode {
        ApproximationMode::Unconstrained => Ok(DesignedFrame {
            frame: target.frame.clone(),
            delta: 0.0,
            factors: None,
        }),
        ApproximationMode::Hybrid => {
            let n = target.frame.nrows();
            let d = dict_size.unwrap_or(8 * n);
            let dict = build_dictionary(n, d, grid)?;
            let hf = omp_hybrid_approx(&target.frame.view(), &dict, slots)?;
            Ok(DesignedFrame {
                frame: hf.product(),
                delta: hf.residual,
                factors: Some((hf.analog, hf.digital)),
            })
        }
    }
}

/// The full two-stage pass: sample `m` columns, extract the column subspace,
/// design the receive frame, adapt stage-2 sounding to it, extract the row
/// subspace from the combined observation, and design the transmit frame.
pub fn run_sase(
    channel: &ChannelInstance,
    params: &SaseParams,
    noise: &mut NoiseModel,
) -> Result<SaseRun> {
    let (n_r, n_t) = (channel.n_r(), channel.n_t());
    if params.m == 0 || params.m > n_t {
        return Err(SaseError::InvalidParameter(format!(
            "stage-1 budget m = {} outside 1..={n_t}",
            params.m
        )));
    }
    if n_r % params.m_rf != 0 {
        return Err(SaseError::InvalidParameter(format!(
            "N_r = {n_r} not divisible by M_RF = {}",
            params.m_rf
        )));
    }
    let cap = params.rank_cap().min(params.m).min(n_r);
    if let AssumedRank::Fixed(l) = params.assumed_l {
        if l == 0 {
            return Err(SaseError::InvalidParameter("assumed rank must be positive".into()));
        }
        if l > params.m {
            return Err(SaseError::InvalidParameter(format!(
                "assumed rank {l} exceeds stage-1 budget m = {}",
                params.m
            )));
        }
    }

    let stage1 = collect_stage_one(channel, params.m, params.m_rf, noise)?;

    let rank_used = match params.assumed_l {
        AssumedRank::Fixed(l) => l.min(cap),
        AssumedRank::Auto => {
            let (_, sing, _) = stage1.y_post_dft.to_owned().svddc(JobSvd::None)?;
            let profile: Vec<f64> = sing.to_vec();
            estimate_path_count(&profile, cap, GapPolicy::LargestRatio)?
        }
    };

    let u_hat = left_subspace(&stage1.y_post_dft.view(), rank_used)?;
    let w_hat = design_frame(&u_hat, params.mode, params.dict_size_rx, params.grid, params.m_rf)?;

    let stage2 = if params.m < n_t {
        collect_stage_two(channel, &w_hat.frame.view(), params.m, noise)?
    } else {
        StageTwoObservation { q_c: Array2::<C64>::zeros((rank_used, 0)), channel_uses: 0 }
    };

    let q_s = linalg::adjoint(&w_hat.frame.view()).dot(&stage1.y_post_dft);
    let q_full = build_q(&q_s.view(), &stage2.q_c.view())?;
    let v_hat = right_subspace(&q_full.view(), rank_used)?;
    let f_hat = design_frame(&v_hat, params.mode, params.dict_size_tx, params.grid, params.n_rf)?;

    Ok(SaseRun { w_hat, f_hat, u_hat, v_hat, stage1, stage2, rank_used })
}
