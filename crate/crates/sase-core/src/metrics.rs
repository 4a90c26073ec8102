//! Evaluation metrics and the closed-form accuracy bounds, usable both for
//! reporting and as runtime oracles.

use ndarray::{Array2, ArrayView2};
use ndarray_linalg::{Determinant, JobSvd, SVDDC};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelInstance;
use crate::error::{Result, SaseError};
use crate::linalg::{self, C64};
use crate::reconstruct::ChannelEstimate;

/// Theorem constant for i.i.d. complex Gaussian noise.
pub const GAUSSIAN_NOISE_CONSTANT: f64 = 2.0;

const FRAME_TOL: f64 = 1e-8;

/// Per-trial metric bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// Power captured jointly by the two frames, in [0, 1].
    pub eta: f64,
    pub eta_c: f64,
    pub eta_r: f64,
    pub nmse: f64,
    /// Spectrum efficiency, bits/s/Hz.
    pub rate: f64,
    /// Rate of the perfect-CSI fully digital baseline on the same channel.
    pub rate_perfect_csi: f64,
    /// Effective post-combining SNR (linear; infinity when noiseless).
    pub gamma: f64,
    pub col_bound: f64,
    pub row_bound: f64,
    pub joint_bound: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub channel_uses: usize,
}

impl AccuracyReport {
    /// Joint capture cannot exceed either marginal capture.
    pub fn check_consistency(&self) -> Result<()> {
        let cap = self.eta_c.min(self.eta_r) + 1e-9;
        if self.eta > cap {
            return Err(SaseError::ContractViolation(format!(
                "eta = {} exceeds min(eta_c, eta_r) = {}",
                self.eta,
                cap - 1e-9
            )));
        }
        Ok(())
    }
}

fn channel_power(h: &ChannelInstance) -> Result<f64> {
    let p = linalg::fro_norm_sq(&h.matrix());
    if p <= 0.0 {
        return Err(SaseError::UndefinedMetric("zero channel has no capture ratio".into()));
    }
    Ok(p)
}

fn effective_channel(
    w: &ArrayView2<C64>,
    f: &ArrayView2<C64>,
    h: &ChannelInstance,
) -> Result<Array2<C64>> {
    if w.nrows() != h.n_r() || f.nrows() != h.n_t() {
        return Err(SaseError::ShapeMismatch(format!(
            "frames ({}, {}) do not match channel {}x{}",
            w.nrows(),
            f.nrows(),
            h.n_r(),
            h.n_t()
        )));
    }
    linalg::check_semi_unitary(w, FRAME_TOL, "combiner")?;
    linalg::check_semi_unitary(f, FRAME_TOL, "precoder")?;
    Ok(linalg::adjoint(w).dot(&h.matrix().to_owned()).dot(&f.to_owned()))
}

/// Fraction of channel power captured jointly: `||W^H H F||_F^2 / ||H||_F^2`.
pub fn eta(w: &ArrayView2<C64>, f: &ArrayView2<C64>, h: &ChannelInstance) -> Result<f64> {
    let he = effective_channel(w, f, h)?;
    Ok(linalg::fro_norm_sq(&he.view()) / channel_power(h)?)
}

/// Column-side capture: `||W^H H||_F^2 / ||H||_F^2`.
pub fn eta_c(w: &ArrayView2<C64>, h: &ChannelInstance) -> Result<f64> {
    if w.nrows() != h.n_r() {
        return Err(SaseError::ShapeMismatch("combiner rows do not match N_r".into()));
    }
    linalg::check_semi_unitary(w, FRAME_TOL, "combiner")?;
    let wh = linalg::adjoint(w).dot(&h.matrix().to_owned());
    Ok(linalg::fro_norm_sq(&wh.view()) / channel_power(h)?)
}

/// Row-side capture: `||H F||_F^2 / ||H||_F^2`.
pub fn eta_r(f: &ArrayView2<C64>, h: &ChannelInstance) -> Result<f64> {
    if f.nrows() != h.n_t() {
        return Err(SaseError::ShapeMismatch("precoder rows do not match N_t".into()));
    }
    linalg::check_semi_unitary(f, FRAME_TOL, "precoder")?;
    let hf = h.matrix().to_owned().dot(&f.to_owned());
    Ok(linalg::fro_norm_sq(&hf.view()) / channel_power(h)?)
}

/// `||H - H_hat||_F^2 / ||H||_F^2` against a dense estimate.
pub fn nmse_dense(h: &ChannelInstance, h_hat: &ArrayView2<C64>) -> Result<f64> {
    if h_hat.dim() != (h.n_r(), h.n_t()) {
        return Err(SaseError::ShapeMismatch(format!(
            "estimate {:?} does not match channel {}x{}",
            h_hat.dim(),
            h.n_r(),
            h.n_t()
        )));
    }
    let diff = &h.matrix().to_owned() - &h_hat.to_owned();
    Ok(linalg::fro_norm_sq(&diff.view()) / channel_power(h)?)
}

pub fn nmse(h: &ChannelInstance, h_hat: &ChannelEstimate) -> Result<f64> {
    nmse_dense(h, &h_hat.dense().view())
}

/// Spectrum efficiency from an already-computed effective channel:
/// `log2 det(I + H_e H_e^H / (sigma2 * L))` with `L` the stream count
/// (the row dimension of `H_e`). Noiseless channels return infinity
/// (zero effective channels return 0 regardless).
pub fn spectrum_efficiency_he(h_e: &ArrayView2<C64>, sigma2: f64) -> Result<f64> {
    let l = h_e.nrows();
    if l == 0 {
        return Err(SaseError::InvalidDimension("empty effective channel".into()));
    }
    let power = linalg::fro_norm_sq(h_e);
    if power == 0.0 {
        return Ok(0.0);
    }
    if sigma2 == 0.0 {
        return Ok(f64::INFINITY);
    }
    let scale = C64::new(1.0 / (sigma2 * l as f64), 0.0);
    let heh = h_e.to_owned().dot(&linalg::adjoint(h_e));
    let mut m = Array2::<C64>::eye(l);
    m = m + heh.mapv(|z| z * scale);
    let det = m.det()?;
    if det.re <= 0.0 {
        return Err(SaseError::EstimationFailure(format!(
            "log-det argument not positive: {det}"
        )));
    }
    Ok(det.re.log2())
}

/// Spectrum efficiency achieved by semi-unitary transceiver frames with `l`
/// equal-power streams.
pub fn spectrum_efficiency(
    w: &ArrayView2<C64>,
    f: &ArrayView2<C64>,
    h: &ChannelInstance,
    sigma2: f64,
    l: usize,
) -> Result<f64> {
    if w.ncols() != l || f.ncols() != l {
        return Err(SaseError::ShapeMismatch(format!(
            "stream count {l} does not match frame widths {} and {}",
            w.ncols(),
            f.ncols()
        )));
    }
    let he = effective_channel(w, f, h)?;
    spectrum_efficiency_he(&he.view(), sigma2)
}

/// Effective post-combining SNR `||W^H H F||_F^2 / (sigma2 * l)`.
/// Returns infinity for `sigma2 = 0`; noiseless runs are a supported mode.
pub fn effective_snr(
    w: &ArrayView2<C64>,
    f: &ArrayView2<C64>,
    h: &ChannelInstance,
    sigma2: f64,
    l: usize,
) -> Result<f64> {
    if w.ncols() != l || f.ncols() != l {
        return Err(SaseError::ShapeMismatch(format!(
            "stream count {l} does not match frame widths {} and {}",
            w.ncols(),
            f.ncols()
        )));
    }
    let he = effective_channel(w, f, h)?;
    let power = linalg::fro_norm_sq(&he.view());
    if sigma2 == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(power / (sigma2 * l as f64))
}

fn nth_singular(a: &ArrayView2<C64>, l: usize) -> Result<f64> {
    if l == 0 || l > a.nrows().min(a.ncols()) {
        return Err(SaseError::InvalidParameter(format!(
            "singular value index {l} outside matrix of shape {:?}",
            a.dim()
        )));
    }
    let (_, sing, _) = a.to_owned().svddc(JobSvd::None)?;
    Ok(sing[l - 1])
}

/// Expected column-subspace accuracy lower bound evaluated on the realized
/// stage-1 signal matrix:
/// `(1 - c * N_r * (sigma2 * s_L^2 + m * sigma2^2) / s_L^4)_+`
/// with `s_L` the L-th singular value of `h_s`.
pub fn column_bound_with_constant(
    sigma2: f64,
    h_s: &ArrayView2<C64>,
    l: usize,
    c: f64,
) -> Result<f64> {
    let s_l = nth_singular(h_s, l)?;
    if s_l <= 0.0 {
        return Err(SaseError::InvalidParameter(format!(
            "signal matrix is rank deficient below {l}"
        )));
    }
    let n_r = h_s.nrows() as f64;
    let m = h_s.ncols() as f64;
    let s2 = s_l * s_l;
    let penalty = c * n_r * (sigma2 * s2 + m * sigma2 * sigma2) / (s2 * s2);
    Ok((1.0 - penalty).max(0.0))
}

pub fn column_bound(sigma2: f64, h_s: &ArrayView2<C64>, l: usize) -> Result<f64> {
    column_bound_with_constant(sigma2, h_s, l, GAUSSIAN_NOISE_CONSTANT)
}

/// Row-side analogue on the projected channel `q_bar = W^H H`. The noise
/// power term scales with the row count of `q_bar`, which is the assumed
/// rank; using an over-estimated rank widens that term accordingly.
pub fn row_bound_with_constant(
    sigma2: f64,
    q_bar: &ArrayView2<C64>,
    l: usize,
    c: f64,
) -> Result<f64> {
    let s_l = nth_singular(q_bar, l)?;
    if s_l <= 0.0 {
        return Err(SaseError::InvalidParameter(format!(
            "projected channel is rank deficient below {l}"
        )));
    }
    let n_t = q_bar.ncols() as f64;
    let width = q_bar.nrows() as f64;
    let s2 = s_l * s_l;
    let penalty = c * n_t * (sigma2 * s2 + width * sigma2 * sigma2) / (s2 * s2);
    Ok((1.0 - penalty).max(0.0))
}

pub fn row_bound(sigma2: f64, q_bar: &ArrayView2<C64>, l: usize) -> Result<f64> {
    row_bound_with_constant(sigma2, q_bar, l, GAUSSIAN_NOISE_CONSTANT)
}

/// Joint capture lower bound `s_L^2(U_hat^H U) * s_L^2(V_hat^H V)` from the
/// two subspace alignment matrices.
pub fn joint_bound(
    u_hat: &ArrayView2<C64>,
    u: &ArrayView2<C64>,
    v_hat: &ArrayView2<C64>,
    v: &ArrayView2<C64>,
) -> Result<f64> {
    for (frame, what) in [(u_hat, "u_hat"), (u, "u"), (v_hat, "v_hat"), (v, "v")] {
        linalg::check_semi_unitary(frame, FRAME_TOL, what)?;
    }
    let l = u.ncols();
    if v.ncols() != l || u_hat.ncols() < l || v_hat.ncols() < l {
        return Err(SaseError::ShapeMismatch(
            "alignment needs estimate frames at least as wide as the true frames".into(),
        ));
    }
    let cos_u = linalg::principal_angle_cosines(u_hat, u)?;
    let cos_v = linalg::principal_angle_cosines(v_hat, v)?;
    let su = cos_u[l - 1];
    let sv = cos_v[l - 1];
    Ok(su * su * sv * sv)
}

/// Total channel uses of the two-stage protocol: `m*N_r/M_RF + (N_t - m)`.
pub fn sase_channel_uses(m: usize, n_r: usize, m_rf: usize, n_t: usize) -> Result<usize> {
    if m_rf == 0 || n_r % m_rf != 0 {
        return Err(SaseError::InvalidParameter(format!(
            "N_r = {n_r} not divisible by M_RF = {m_rf}"
        )));
    }
    if m > n_t {
        return Err(SaseError::InvalidParameter(format!("m = {m} exceeds N_t = {n_t}")));
    }
    Ok(m * n_r / m_rf + (n_t - m))
}

/// Symbols feeding the per-method training budget formulas.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetParams {
    pub l: usize,
    pub n_r: usize,
    pub n_t: usize,
    pub m_rf: usize,
    pub n_rf: usize,
    /// Stage-1 column budget of the two-stage method.
    pub m: usize,
    /// Angular grid size of the sparse-recovery baselines.
    pub grid_g: usize,
    /// Krylov depth of the iterative baseline.
    pub arnoldi_q: usize,
    /// Beams per stage of the adaptive baseline.
    pub ace_s: usize,
    /// Angle resolution denominator of the adaptive baseline.
    pub ace_n_m: usize,
}

impl Default for BudgetParams {
    fn default() -> Self {
        Self {
            l: 4,
            n_r: 36,
            n_t: 144,
            m_rf: 6,
            n_rf: 8,
            m: 20,
            grid_g: 144,
            arnoldi_q: 4,
            ace_s: 2,
            ace_n_m: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetRow {
    pub method: String,
    pub channel_uses: f64,
    /// True when the formula is an order-of-magnitude expression evaluated
    /// with unit constants; such rows are not authoritative counts.
    pub order_of_magnitude: bool,
}

/// Evaluate the documented training-budget formulas of the competing
/// methods. Exact rows are exact; big-O rows use unit constants.
pub fn budget_table(p: &BudgetParams) -> Result<Vec<BudgetRow>> {
    if p.l == 0 || p.n_r == 0 || p.n_t == 0 || p.m_rf == 0 || p.n_rf == 0 {
        return Err(SaseError::InvalidParameter("budget parameters must be positive".into()));
    }
    if p.ace_s < 2 || p.ace_n_m < p.l {
        return Err(SaseError::InvalidParameter(
            "adaptive baseline needs s >= 2 and N_m >= L".into(),
        ));
    }
    let sase = sase_channel_uses(p.m, p.n_r, p.m_rf, p.n_t)? as f64;
    let lf = p.l as f64;
    let (n_r, n_t) = (p.n_r as f64, p.n_t as f64);
    let (m_rf, n_rf) = (p.m_rf as f64, p.n_rf as f64);
    let subspace_order = lf * (n_r + n_t) / m_rf;
    let arnoldi =
        2.0 * p.arnoldi_q as f64 * n_r / m_rf + 2.0 * p.arnoldi_q as f64 * n_t / n_rf;
    let grid_order = lf * ((p.grid_g * p.grid_g) as f64).ln() / m_rf;
    let s = p.ace_s as f64;
    let ace = s * s * lf.powi(3) * ((p.ace_n_m as f64 / lf).ln() / s.ln()) / m_rf;

    Ok(vec![
        BudgetRow { method: "SASE".into(), channel_uses: sase, order_of_magnitude: false },
        BudgetRow { method: "MF".into(), channel_uses: subspace_order, order_of_magnitude: true },
        BudgetRow { method: "SD".into(), channel_uses: subspace_order, order_of_magnitude: true },
        BudgetRow { method: "Arnoldi".into(), channel_uses: arnoldi, order_of_magnitude: false },
        BudgetRow { method: "OMP".into(), channel_uses: grid_order, order_of_magnitude: true },
        BudgetRow { method: "SBL".into(), channel_uses: grid_order, order_of_magnitude: true },
        BudgetRow { method: "ACE".into(), channel_uses: ace, order_of_magnitude: false },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{assemble_channel, sample_paths, ArrayGeometry, ArrayKind};
    use ndarray::{array, s, Array2};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn test_channel(n_r: usize, n_t: usize, l: usize, seed: u64) -> ChannelInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let paths = sample_paths(l, ArrayKind::Ula, &mut rng).unwrap();
        let rx = ArrayGeometry::ula(n_r).unwrap();
        let tx = ArrayGeometry::ula(n_t).unwrap();
        assemble_channel(&paths, &rx, &tx).unwrap()
    }

    fn random_frame(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
        let a = Array2::from_shape_fn((rows, cols), |_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im)
        });
        let (u, _, _) = linalg::thin_svd(&a.view()).unwrap();
        u
    }

    fn random_unitary(n: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
        random_frame(n, n, rng)
    }

    #[test]
    fn eta_is_one_for_true_frames() {
        let ch = test_channel(6, 8, 2, 1);
        let e = eta(&ch.true_left(), &ch.true_right(), &ch).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eta_is_zero_for_orthogonal_complements() {
        let ch = test_channel(6, 8, 2, 2);
        // Thin SVD columns beyond the rank span the orthogonal complements.
        let (u, _, v) = linalg::thin_svd(&ch.matrix()).unwrap();
        let w = u.slice(s![.., 2..4]).to_owned();
        let f = v.slice(s![.., 2..4]).to_owned();
        let e = eta(&w.view(), &f.view(), &ch).unwrap();
        assert!(e < 1e-20, "eta = {e}");
    }

    #[test]
    fn eta_matches_direct_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = test_channel(6, 8, 2, 3);
        let w = random_frame(6, 2, &mut rng);
        let f = random_frame(8, 2, &mut rng);
        let e = eta(&w.view(), &f.view(), &ch).unwrap();

        // Hand-rolled evaluation of the same ratio.
        let h = ch.matrix();
        let mut num = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..6 {
                    for j in 0..8 {
                        acc += w[[i, a]].conj() * h[[i, j]] * f[[j, b]];
                    }
                }
                num += acc.norm_sqr();
            }
        }
        let den: f64 = h.iter().map(|z| z.norm_sqr()).sum();
        assert!((e - num / den).abs() < 1e-12);
    }

    #[test]
    fn eta_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ch = test_channel(6, 8, 3, 4);
        for _ in 0..20 {
            let w = random_frame(6, 3, &mut rng);
            let f = random_frame(8, 3, &mut rng);
            let e = eta(&w.view(), &f.view(), &ch).unwrap();
            let ec = eta_c(&w.view(), &ch).unwrap();
            let er = eta_r(&f.view(), &ch).unwrap();
            assert!((0.0..=1.0 + 1e-9).contains(&e));
            assert!(e <= ec.min(er) + 1e-9);
        }
    }

    #[test]
    fn eta_c_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ch = test_channel(6, 8, 2, 5);
        let w = random_frame(6, 2, &mut rng);
        let rot = random_unitary(2, &mut rng);
        let w_rot = w.dot(&rot);
        let a = eta_c(&w.view(), &ch).unwrap();
        let b = eta_c(&w_rot.view(), &ch).unwrap();
        assert!((a - b).abs() < 1e-10);
        assert!((eta_c(&ch.true_left(), &ch).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eta_c_identity_columns_match_energy_ratio() {
        let ch = test_channel(6, 8, 2, 6);
        let eye = Array2::<C64>::eye(6);
        let w = eye.slice(s![.., ..2]).to_owned();
        let e = eta_c(&w.view(), &ch).unwrap();
        let h = ch.matrix();
        let rows: f64 = (0..2).map(|i| (0..8).map(|j| h[[i, j]].norm_sqr()).sum::<f64>()).sum();
        let total: f64 = h.iter().map(|z| z.norm_sqr()).sum();
        assert!((e - rows / total).abs() < 1e-12);
    }

    #[test]
    fn zero_channel_is_rejected() {
        let paths = crate::channel::PathSet {
            gains: vec![Complex64::new(0.0, 0.0)],
            aoa: crate::channel::PathAngles::Ula(vec![0.1]),
            aod: crate::channel::PathAngles::Ula(vec![0.2]),
            cluster_shape: None,
        };
        let g = ArrayGeometry::ula(4).unwrap();
        let ch = assemble_channel(&paths, &g, &g).unwrap();
        let w = Array2::<C64>::eye(4);
        assert!(matches!(
            eta_c(&w.view(), &ch),
            Err(SaseError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn nmse_basic_cases() {
        let ch = test_channel(6, 8, 2, 7);
        assert!(nmse_dense(&ch, &ch.matrix()).unwrap() < 1e-30);
        let zero = Array2::<C64>::zeros((6, 8));
        assert!((nmse_dense(&ch, &zero.view()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nmse_scales_with_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ch = test_channel(6, 8, 2, 8);
        let mut e = Array2::from_shape_fn((6, 8), |_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im)
        });
        let target = 0.1 * linalg::fro_norm(&ch.matrix());
        let scale = target / linalg::fro_norm(&e.view());
        e.mapv_inplace(|z| z * scale);
        let h_hat = &ch.matrix().to_owned() + &e;
        let v = nmse_dense(&ch, &h_hat.view()).unwrap();
        assert!((v - 0.01).abs() < 1e-12, "nmse = {v}");
    }

    #[test]
    fn rate_closed_forms() {
        let zero = Array2::<C64>::zeros((2, 2));
        assert_eq!(spectrum_efficiency_he(&zero.view(), 1.0).unwrap(), 0.0);
        let one = Array2::<C64>::eye(1);
        let r = spectrum_efficiency_he(&one.view(), 1.0).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let eye2 = Array2::<C64>::eye(2);
        let r2 = spectrum_efficiency_he(&eye2.view(), 1.0).unwrap();
        assert!((r2 - 2.0 * 1.5f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn rate_matches_singular_value_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ch = test_channel(8, 10, 3, 9);
        let w = random_frame(8, 3, &mut rng);
        let f = random_frame(10, 3, &mut rng);
        let sigma2 = 0.3;
        let rate = spectrum_efficiency(&w.view(), &f.view(), &ch, sigma2, 3).unwrap();
        let he = linalg::adjoint(&w.view()).dot(&ch.matrix().to_owned()).dot(&f);
        let (_, sing, _) = he.svddc(JobSvd::None).unwrap();
        let oracle: f64 = sing.iter().map(|&s| (1.0 + s * s / (sigma2 * 3.0)).log2()).sum();
        assert!((rate - oracle).abs() < 1e-9, "{rate} vs {oracle}");
    }

    #[test]
    fn rate_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ch = test_channel(8, 10, 3, 10);
        let w = random_frame(8, 3, &mut rng);
        let f = random_frame(10, 3, &mut rng);
        let rw = random_unitary(3, &mut rng);
        let rf = random_unitary(3, &mut rng);
        let a = spectrum_efficiency(&w.view(), &f.view(), &ch, 0.5, 3).unwrap();
        let b = spectrum_efficiency(&w.dot(&rw).view(), &f.dot(&rf).view(), &ch, 0.5, 3).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn effective_snr_cases() {
        let ch = test_channel(8, 10, 2, 11);
        let w = ch.true_left().to_owned();
        let f = ch.true_right().to_owned();
        let g1 = effective_snr(&w.view(), &f.view(), &ch, 1.0, 2).unwrap();
        let power: f64 = ch.true_singulars().iter().map(|s| s * s).sum();
        assert!((g1 - power / 2.0).abs() < 1e-9 * g1);
        let g2 = effective_snr(&w.view(), &f.view(), &ch, 2.0, 2).unwrap();
        assert!((g1 / g2 - 2.0).abs() < 1e-12);
        assert!(effective_snr(&w.view(), &f.view(), &ch, 0.0, 2).unwrap().is_infinite());
    }

    #[test]
    fn column_bound_limits() {
        let ch = test_channel(36, 144, 4, 12);
        let hs = ch.column_prefix(20).unwrap();
        assert_eq!(column_bound(0.0, &hs, 4).unwrap(), 1.0);
        assert_eq!(column_bound(1e6, &hs, 4).unwrap(), 0.0);
    }

    #[test]
    fn column_bound_formula_value() {
        // Synthetic profile with s_L = 5: 36x20 diagonal-like matrix.
        let mut a = Array2::<C64>::zeros((36, 20));
        for (i, s) in [9.0, 8.0, 7.0, 5.0].iter().enumerate() {
            a[[i, i]] = Complex64::new(*s, 0.0);
        }
        let b = column_bound(0.01, &a.view(), 4).unwrap();
        let expect = 1.0 - 72.0 * (0.01 * 25.0 + 20.0 * 1e-4) / 625.0;
        assert!((b - expect).abs() < 1e-12, "bound {b}, expected {expect}");
        assert!((expect - 0.9709696).abs() < 1e-7);
    }

    #[test]
    fn row_bound_mirrors_column_bound() {
        let ch = test_channel(36, 144, 4, 13);
        let q_bar = linalg::adjoint(&ch.true_left()).dot(&ch.matrix().to_owned());
        assert_eq!(row_bound(0.0, &q_bar.view(), 4).unwrap(), 1.0);
        assert_eq!(row_bound(1e6, &q_bar.view(), 4).unwrap(), 0.0);
        // A wider projection widens the noise-power term.
        let narrow = row_bound(0.1, &q_bar.view(), 4).unwrap();
        let mut wide_frame = Array2::<C64>::zeros((36, 6));
        wide_frame.slice_mut(s![.., ..4]).assign(&ch.true_left());
        let (full_u, _, _) = linalg::thin_svd(&ch.matrix()).unwrap();
        wide_frame.slice_mut(s![.., 4..]).assign(&full_u.slice(s![.., 4..6]));
        let q_wide = linalg::adjoint(&wide_frame.view()).dot(&ch.matrix().to_owned());
        let wide = row_bound(0.1, &q_wide.view(), 4).unwrap();
        assert!(wide <= narrow + 1e-12);
    }

    #[test]
    fn joint_bound_cases() {
        let ch = test_channel(8, 10, 2, 14);
        let u = ch.true_left().to_owned();
        let v = ch.true_right().to_owned();
        let exact = joint_bound(&u.view(), &u.view(), &v.view(), &v.view()).unwrap();
        assert!((exact - 1.0).abs() < 1e-10);
        let (full_u, _, _) = linalg::thin_svd(&ch.matrix()).unwrap();
        let ortho = full_u.slice(s![.., 2..4]).to_owned();
        let zeroed = joint_bound(&ortho.view(), &u.view(), &v.view(), &v.view()).unwrap();
        assert!(zeroed < 1e-20);
    }

    #[test]
    fn joint_bound_is_a_lower_bound_on_eta() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let ch = test_channel(8, 10, 3, 15);
        for _ in 0..20 {
            let w = random_frame(8, 3, &mut rng);
            let f = random_frame(10, 3, &mut rng);
            let e = eta(&w.view(), &f.view(), &ch).unwrap();
            let jb =
                joint_bound(&w.view(), &ch.true_left(), &f.view(), &ch.true_right()).unwrap();
            assert!(e >= jb - 1e-9, "eta {e} below bound {jb}");
        }
    }

    #[test]
    fn channel_use_counts() {
        assert_eq!(sase_channel_uses(20, 36, 6, 144).unwrap(), 244);
        assert_eq!(sase_channel_uses(4, 36, 6, 144).unwrap(), 164);
        assert_eq!(sase_channel_uses(48, 36, 6, 144).unwrap(), 384);
        assert!(sase_channel_uses(10, 36, 5, 144).is_err());
    }

    #[test]
    fn budget_table_values() {
        let p = BudgetParams::default();
        let rows = budget_table(&p).unwrap();
        let get = |name: &str| rows.iter().find(|r| r.method == name).unwrap();
        assert_eq!(get("SASE").channel_uses, 244.0);
        assert!(!get("SASE").order_of_magnitude);
        assert_eq!(get("Arnoldi").channel_uses, 192.0);
        assert!((get("ACE").channel_uses - 256.0).abs() < 1e-9);
        assert!(get("OMP").order_of_magnitude);
        assert!(get("MF").order_of_magnitude);
    }

    #[test]
    fn report_consistency_check() {
        let good = AccuracyReport {
            eta: 0.9,
            eta_c: 0.95,
            eta_r: 0.92,
            nmse: 0.1,
            rate: 10.0,
            rate_perfect_csi: 11.0,
            gamma: 5.0,
            col_bound: 0.8,
            row_bound: 0.8,
            joint_bound: 0.7,
            delta1: 0.0,
            delta2: 0.0,
            channel_uses: 244,
        };
        assert!(good.check_consistency().is_ok());
        let bad = AccuracyReport { eta: 0.99, ..good };
        assert!(bad.check_consistency().is_err());
    }

    #[test]
    fn semi_unitary_precondition_is_enforced() {
        let ch = test_channel(6, 8, 2, 16);
        let skew = array![
            [Complex64::new(1.0, 0.0), Complex64::new(0.4, 0.0)],
            [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
            [Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)],
            [Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)],
            [Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)],
            [Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)],
        ];
        assert!(eta_c(&skew.view(), &ch).is_err());
    }
}
