//! Sparse multipath channel synthesis for linear and planar arrays, with
//! cached ground-truth singular factors.

use ndarray::{s, Array1, Array2, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaseError};
use crate::linalg::{self, C64};

/// Antenna spacing as a fraction of the carrier wavelength. Half-wavelength
/// spacing makes the per-element phase increment `pi * sin(theta)`.
pub const SPACING_RATIO: f64 = 0.5;

/// Angles closer than this (radians) count as duplicates and trigger a
/// resample of the whole path set.
pub const ANGLE_DUP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArrayKind {
    Ula,
    Upa,
}

/// Receive or transmit array description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub kind: ArrayKind,
    pub num_antennas: usize,
    pub spacing_ratio: f64,
}

impl ArrayGeometry {
    pub fn ula(num_antennas: usize) -> Result<Self> {
        if num_antennas == 0 {
            return Err(SaseError::InvalidDimension("ULA needs at least one antenna".into()));
        }
        Ok(Self { kind: ArrayKind::Ula, num_antennas, spacing_ratio: SPACING_RATIO })
    }

    pub fn upa(num_antennas: usize) -> Result<Self> {
        if integer_sqrt(num_antennas).is_none() {
            return Err(SaseError::InvalidDimension(format!(
                "UPA antenna count {num_antennas} is not a perfect square"
            )));
        }
        Ok(Self { kind: ArrayKind::Upa, num_antennas, spacing_ratio: SPACING_RATIO })
    }
}

fn integer_sqrt(n: usize) -> Option<usize> {
    if n == 0 {
        return None;
    }
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n).then_some(r)
}

/// Angle bookkeeping for one side of the link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PathAngles {
    /// One angle per path, radians in `[-pi/2, pi/2)`.
    Ula(Vec<f64>),
    /// `(azimuth, elevation)` per path.
    Upa(Vec<(f64, f64)>),
}

impl PathAngles {
    pub fn len(&self) -> usize {
        match self {
            PathAngles::Ula(v) => v.len(),
            PathAngles::Upa(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ArrayKind {
        match self {
            PathAngles::Ula(_) => ArrayKind::Ula,
            PathAngles::Upa(_) => ArrayKind::Upa,
        }
    }

    fn has_duplicates(&self) -> bool {
        match self {
            PathAngles::Ula(v) => {
                for i in 0..v.len() {
                    for j in (i + 1)..v.len() {
                        if (v[i] - v[j]).abs() < ANGLE_DUP_TOL {
                            return true;
                        }
                    }
                }
                false
            }
            PathAngles::Upa(v) => {
                for i in 0..v.len() {
                    for j in (i + 1)..v.len() {
                        let d = (v[i].0 - v[j].0).abs().max((v[i].1 - v[j].1).abs());
                        if d < ANGLE_DUP_TOL {
                            return true;
                        }
                    }
                }
                false
            }
        }
    }
}

/// Propagation paths: arrival/departure angles plus complex gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub gains: Vec<Complex64>,
    pub aoa: PathAngles,
    pub aod: PathAngles,
    /// `(clusters, rays-per-cluster)` when generated by the clustered model.
    pub cluster_shape: Option<(usize, usize)>,
}

impl PathSet {
    pub fn count(&self) -> usize {
        self.gains.len()
    }

    pub fn kind(&self) -> ArrayKind {
        self.aoa.kind()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gains.is_empty() {
            return Err(SaseError::InvalidParameter("path set is empty".into()));
        }
        if self.aoa.len() != self.gains.len() || self.aod.len() != self.gains.len() {
            return Err(SaseError::ShapeMismatch(format!(
                "path set sizes disagree: {} gains, {} AoA, {} AoD",
                self.gains.len(),
                self.aoa.len(),
                self.aod.len()
            )));
        }
        if self.aoa.kind() != self.aod.kind() {
            return Err(SaseError::ShapeMismatch("AoA and AoD use different array kinds".into()));
        }
        if let Some((ncl, nray)) = self.cluster_shape {
            if ncl * nray != self.count() {
                return Err(SaseError::ShapeMismatch(format!(
                    "cluster shape {}x{} does not match {} paths",
                    ncl,
                    nray,
                    self.count()
                )));
            }
        }
        Ok(())
    }
}

/// A synthesized channel with its generating paths and cached rank-L SVD
/// factors, used as the ground-truth oracle throughout.
#[derive(Debug, Clone)]
pub struct ChannelInstance {
    matrix: Array2<C64>,
    paths: PathSet,
    true_left: Array2<C64>,
    true_singulars: Array1<f64>,
    true_right: Array2<C64>,
}

impl ChannelInstance {
    pub fn matrix(&self) -> ArrayView2<'_, C64> {
        self.matrix.view()
    }

    pub fn paths(&self) -> &PathSet {
        &self.paths
    }

    /// Orthonormal basis of the dominant column (left) subspace, `N_r x L`.
    pub fn true_left(&self) -> ArrayView2<'_, C64> {
        self.true_left.view()
    }

    /// Dominant singular values, descending, length L.
    pub fn true_singulars(&self) -> &Array1<f64> {
        &self.true_singulars
    }

    /// Orthonormal basis of the dominant row (right) subspace, `N_t x L`.
    pub fn true_right(&self) -> ArrayView2<'_, C64> {
        self.true_right.view()
    }

    pub fn n_r(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn path_count(&self) -> usize {
        self.paths.count()
    }

    /// First `m` columns of the channel matrix.
    pub fn column_prefix(&self, m: usize) -> Result<ArrayView2<'_, C64>> {
        if m == 0 || m > self.n_t() {
            return Err(SaseError::InvalidParameter(format!(
                "column prefix width {m} outside 1..={}",
                self.n_t()
            )));
        }
        Ok(self.matrix.slice(s![.., ..m]))
    }

    /// Rebuild a `ChannelInstance` from previously serialized parts,
    /// revalidating the factorization.
    pub fn from_parts(
        matrix: Array2<C64>,
        paths: PathSet,
        true_left: Array2<C64>,
        true_singulars: Array1<f64>,
        true_right: Array2<C64>,
    ) -> Result<Self> {
        paths.validate()?;
        let inst = Self { matrix, paths, true_left, true_singulars, true_right };
        let rec = inst.reconstruction_error();
        if rec > 1e-10 {
            return Err(SaseError::ContractViolation(format!(
                "cached SVD factors do not reproduce the matrix (relative error {rec:.3e})"
            )));
        }
        Ok(inst)
    }

    /// Relative Frobenius error of `U diag(S) V^H` against the stored matrix.
    pub fn reconstruction_error(&self) -> f64 {
        let mut rec = Array2::<C64>::zeros(self.matrix.raw_dim());
        for k in 0..self.true_singulars.len() {
            let sk = C64::new(self.true_singulars[k], 0.0);
            for i in 0..rec.nrows() {
                for j in 0..rec.ncols() {
                    rec[[i, j]] += self.true_left[[i, k]] * sk * self.true_right[[j, k]].conj();
                }
            }
        }
        let denom = linalg::fro_norm(&self.matrix.view()).max(f64::MIN_POSITIVE);
        linalg::fro_norm(&(&self.matrix - &rec).view()) / denom
    }
}

/// Half-wavelength ULA array response at angle `theta`, unit norm.
/// Entry `k` is `exp(-j*pi*k*sin(theta)) / sqrt(n)`.
pub fn steering_vector_ula(theta: f64, n: usize) -> Result<Array1<C64>> {
    if n == 0 {
        return Err(SaseError::InvalidDimension("steering vector needs n >= 1".into()));
    }
    let scale = 1.0 / (n as f64).sqrt();
    let step = -std::f64::consts::PI * theta.sin();
    Ok(Array1::from_iter(
        (0..n).map(|k| C64::from_polar(scale, step * k as f64)),
    ))
}

/// Square planar array response, unit norm. The element at row `m`, column
/// `p` of the grid (both in `0..sqrt(n)`) lands at flat index `m*sqrt(n)+p`
/// and carries phase `+pi*(m*sin(az)*sin(el) + p*cos(el))`.
pub fn steering_vector_upa(azimuth: f64, elevation: f64, n: usize) -> Result<Array1<C64>> {
    let side = integer_sqrt(n).ok_or_else(|| {
        SaseError::InvalidDimension(format!("UPA steering vector needs a square count, got {n}"))
    })?;
    let scale = 1.0 / (n as f64).sqrt();
    let a = std::f64::consts::PI * azimuth.sin() * elevation.sin();
    let b = std::f64::consts::PI * elevation.cos();
    let mut out = Array1::<C64>::zeros(n);
    for m in 0..side {
        for p in 0..side {
            out[m * side + p] = C64::from_polar(scale, a * m as f64 + b * p as f64);
        }
    }
    Ok(out)
}

fn sample_cn01<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) / std::f64::consts::SQRT_2
}

fn sample_angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2)
}

fn sample_angles<R: Rng + ?Sized>(l: usize, kind: ArrayKind, rng: &mut R) -> PathAngles {
    match kind {
        ArrayKind::Ula => PathAngles::Ula((0..l).map(|_| sample_angle(rng)).collect()),
        ArrayKind::Upa => {
            PathAngles::Upa((0..l).map(|_| (sample_angle(rng), sample_angle(rng))).collect())
        }
    }
}

/// Draw `l` paths: angles i.i.d. uniform on `[-pi/2, pi/2)`, gains i.i.d.
/// circularly symmetric complex Gaussian with unit variance. Redraws the
/// whole set on the (measure-zero) event of coinciding angles on either side.
pub fn sample_paths<R: Rng + ?Sized>(l: usize, kind: ArrayKind, rng: &mut R) -> Result<PathSet> {
    sample_paths_impl(l, kind, None, rng)
}

/// Clustered planar-array variant: `n_cl * n_ray` paths tagged with the
/// cluster shape. Angles remain independent per ray.
pub fn sample_clustered_paths<R: Rng + ?Sized>(
    n_cl: usize,
    n_ray: usize,
    rng: &mut R,
) -> Result<PathSet> {
    if n_cl == 0 || n_ray == 0 {
        return Err(SaseError::InvalidParameter("cluster shape must be positive".into()));
    }
    sample_paths_impl(n_cl * n_ray, ArrayKind::Upa, Some((n_cl, n_ray)), rng)
}

fn sample_paths_impl<R: Rng + ?Sized>(
    l: usize,
    kind: ArrayKind,
    cluster_shape: Option<(usize, usize)>,
    rng: &mut R,
) -> Result<PathSet> {
    if l == 0 {
        return Err(SaseError::InvalidParameter("path count must be at least 1".into()));
    }
    const MAX_RESAMPLES: usize = 1000;
    for _ in 0..MAX_RESAMPLES {
        let aoa = sample_angles(l, kind, rng);
        let aod = sample_angles(l, kind, rng);
        if aoa.has_duplicates() || aod.has_duplicates() {
            continue;
        }
        let gains = (0..l).map(|_| sample_cn01(rng)).collect();
        return Ok(PathSet { gains, aoa, aod, cluster_shape });
    }
    Err(SaseError::EstimationFailure(
        "could not draw distinct path angles after 1000 attempts".into(),
    ))
}

fn side_steering(angles: &PathAngles, idx: usize, n: usize) -> Result<Array1<C64>> {
    match angles {
        PathAngles::Ula(v) => steering_vector_ula(v[idx], n),
        PathAngles::Upa(v) => steering_vector_upa(v[idx].0, v[idx].1, n),
    }
}

/// Assemble the channel matrix
/// `H = sqrt(N_r*N_t/L) * sum_l h_l a_r(aoa_l) a_t(aod_l)^H`
/// and cache its dominant rank-L SVD factors with canonical column phases.
pub fn assemble_channel(
    paths: &PathSet,
    rx: &ArrayGeometry,
    tx: &ArrayGeometry,
) -> Result<ChannelInstance> {
    paths.validate()?;
    if paths.kind() != rx.kind || paths.kind() != tx.kind {
        return Err(SaseError::ShapeMismatch(format!(
            "path angles are {:?} but arrays are rx {:?} / tx {:?}",
            paths.kind(),
            rx.kind,
            tx.kind
        )));
    }
    let (n_r, n_t) = (rx.num_antennas, tx.num_antennas);
    let l = paths.count();
    if l > n_r.min(n_t) {
        return Err(SaseError::InvalidParameter(format!(
            "path count {l} exceeds min(N_r, N_t) = {}",
            n_r.min(n_t)
        )));
    }
    let scale = ((n_r * n_t) as f64 / l as f64).sqrt();
    let mut matrix = Array2::<C64>::zeros((n_r, n_t));
    for p in 0..l {
        let ar = side_steering(&paths.aoa, p, n_r)?;
        let at = side_steering(&paths.aod, p, n_t)?;
        let g = paths.gains[p] * scale;
        for i in 0..n_r {
            let left = g * ar[i];
            for j in 0..n_t {
                matrix[[i, j]] += left * at[j].conj();
            }
        }
    }

    let (mut u, sing, mut v) = linalg::thin_svd(&matrix.view())?;
    linalg::canonicalize_pair(&mut u, &mut v, 1e-12);
    let true_left = u.slice(s![.., ..l]).to_owned();
    let true_singulars = sing.slice(s![..l]).to_owned();
    let true_right = v.slice(s![.., ..l]).to_owned();

    Ok(ChannelInstance { matrix, paths: paths.clone(), true_left, true_singulars, true_right })
}

/// Number of singular values at or above `rel_tol` times the largest one.
/// The zero matrix has rank 0.
pub fn numerical_rank(matrix: &ArrayView2<C64>, rel_tol: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&rel_tol) || rel_tol == 0.0 {
        return Err(SaseError::InvalidParameter(format!(
            "relative tolerance {rel_tol} must lie in (0, 1)"
        )));
    }
    use ndarray_linalg::{JobSvd, SVDDC};
    let (_, sing, _) = matrix.to_owned().svddc(JobSvd::None)?;
    let top = sing.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Ok(0);
    }
    Ok(sing.iter().filter(|&&s| s >= rel_tol * top).count())
}
