//! Channel reconstruction from the two estimated frames: a least-squares
//! problem of dimension L^2 for the core coupling matrix.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use ndarray_linalg::{EigValsh, SolveH, UPLO};
use std::sync::OnceLock;

use crate::error::{Result, SaseError};
use crate::linalg::{self, C64};

/// Condition numbers beyond this are rejected as numerically meaningless in
/// double precision.
pub const CONDITION_LIMIT: f64 = 1e12;

/// The L-by-L coupling matrix between the two frames, with its column-major
/// vectorization.
#[derive(Debug, Clone)]
pub struct CoreCoefficient {
    r_matrix: Array2<C64>,
    r_vec: Array1<C64>,
}

impl CoreCoefficient {
    pub fn from_matrix(r_matrix: Array2<C64>) -> Result<Self> {
        if r_matrix.nrows() != r_matrix.ncols() {
            return Err(SaseError::ShapeMismatch(format!(
                "core matrix must be square, got {:?}",
                r_matrix.dim()
            )));
        }
        let r_vec = linalg::vec_colmajor(&r_matrix.view());
        Ok(Self { r_matrix, r_vec })
    }

    pub fn from_vec(r_vec: Array1<C64>) -> Result<Self> {
        let l2 = r_vec.len();
        let l = (l2 as f64).sqrt().round() as usize;
        if l * l != l2 {
            return Err(SaseError::ShapeMismatch(format!(
                "core vector length {l2} is not a perfect square"
            )));
        }
        let r_matrix = linalg::unvec_colmajor(&r_vec.view(), l, l)?;
        Ok(Self { r_matrix, r_vec })
    }

    pub fn matrix(&self) -> ArrayView2<'_, C64> {
        self.r_matrix.view()
    }

    pub fn vector(&self) -> ArrayView1<'_, C64> {
        self.r_vec.view()
    }

    pub fn order(&self) -> usize {
        self.r_matrix.nrows()
    }
}

/// Factored channel estimate `W * R * F^H` with on-demand dense form.
#[derive(Debug)]
pub struct ChannelEstimate {
    w_frame: Array2<C64>,
    core: CoreCoefficient,
    f_frame: Array2<C64>,
    dense: OnceLock<Array2<C64>>,
}

impl Clone for ChannelEstimate {
    fn clone(&self) -> Self {
        Self {
            w_frame: self.w_frame.clone(),
            core: self.core.clone(),
            f_frame: self.f_frame.clone(),
            dense: OnceLock::new(),
        }
    }
}

impl ChannelEstimate {
    pub fn w_frame(&self) -> ArrayView2<'_, C64> {
        self.w_frame.view()
    }

    pub fn f_frame(&self) -> ArrayView2<'_, C64> {
        self.f_frame.view()
    }

    pub fn core(&self) -> &CoreCoefficient {
        &self.core
    }

    /// Materialized `N_r x N_t` estimate, computed once.
    pub fn dense(&self) -> &Array2<C64> {
        self.dense.get_or_init(|| {
            self.w_frame
                .dot(&self.core.matrix().to_owned())
                .dot(&linalg::adjoint(&self.f_frame.view()))
        })
    }
}

fn check_system_shapes(
    w_hat: &ArrayView2<C64>,
    f_hat: &ArrayView2<C64>,
    y_s: &ArrayView2<C64>,
    q_c: &ArrayView2<C64>,
    m: usize,
) -> Result<(usize, usize, usize)> {
    let (n_r, l) = w_hat.dim();
    let (n_t, l_f) = f_hat.dim();
    if l != l_f {
        return Err(SaseError::ShapeMismatch(format!(
            "frame widths disagree: W has {l}, F has {l_f}"
        )));
    }
    if m == 0 || m > n_t {
        return Err(SaseError::InvalidParameter(format!("m = {m} outside 1..={n_t}")));
    }
    if y_s.dim() != (n_r, m) {
        return Err(SaseError::ShapeMismatch(format!(
            "stage-1 observation is {:?}, expected ({n_r}, {m})",
            y_s.dim()
        )));
    }
    if q_c.dim() != (l, n_t - m) {
        return Err(SaseError::ShapeMismatch(format!(
            "stage-2 observation is {:?}, expected ({l}, {})",
            q_c.dim(),
            n_t - m
        )));
    }
    Ok((n_r, n_t, l))
}

/// Normal equations of the reconstruction least-squares problem, built from
/// the Kronecker structure without materializing the design matrices:
/// `gram = conj(F1^H F1) (x) (W^H W) + conj(F2^H F2) (x) I_L` and
/// `rhs = vec(W^H Y_S F1 + Q_C F2)`, where `F1`/`F2` are the first-m and
/// remaining rows of the transmit frame.
pub fn build_ls_system(
    w_hat: &ArrayView2<C64>,
    f_hat: &ArrayView2<C64>,
    y_s: &ArrayView2<C64>,
    q_c: &ArrayView2<C64>,
    m: usize,
) -> Result<(Array2<C64>, Array1<C64>)> {
    let (_, _, l) = check_system_shapes(w_hat, f_hat, y_s, q_c, m)?;
    let f1 = f_hat.slice(s![..m, ..]);
    let f2 = f_hat.slice(s![m.., ..]);

    let g1 = linalg::gram(&f1).mapv(|z| z.conj());
    let g2 = linalg::gram(&f2).mapv(|z| z.conj());
    let ww = linalg::gram(w_hat);
    let eye = Array2::<C64>::eye(l);
    let gram = linalg::kron(&g1.view(), &ww.view()) + linalg::kron(&g2.view(), &eye.view());

    let s1 = linalg::adjoint(w_hat).dot(&y_s.to_owned()).dot(&f1);
    let s2 = q_c.dot(&f2);
    let rhs = linalg::vec_colmajor(&(&s1 + &s2).view());
    Ok((gram, rhs))
}

/// Same contract as [`build_ls_system`] but materializes the two Kronecker
/// design matrices explicitly. Kept as the slow reference route.
pub fn build_ls_system_dense(
    w_hat: &ArrayView2<C64>,
    f_hat: &ArrayView2<C64>,
    y_s: &ArrayView2<C64>,
    q_c: &ArrayView2<C64>,
    m: usize,
) -> Result<(Array2<C64>, Array1<C64>)> {
    let (_, _, l) = check_system_shapes(w_hat, f_hat, y_s, q_c, m)?;
    let f1_conj = f_hat.slice(s![..m, ..]).mapv(|z| z.conj());
    let f2_conj = f_hat.slice(s![m.., ..]).mapv(|z| z.conj());
    let eye = Array2::<C64>::eye(l);

    let a1 = linalg::kron(&f1_conj.view(), w_hat);
    let a2 = linalg::kron(&f2_conj.view(), &eye.view());
    let a1h = linalg::adjoint(&a1.view());
    let a2h = linalg::adjoint(&a2.view());

    let gram = a1h.dot(&a1) + a2h.dot(&a2);
    let rhs = a1h.dot(&linalg::vec_colmajor(y_s))
        + a2h.dot(&linalg::vec_colmajor(q_c));
    Ok((gram, rhs))
}

/// Solve the Hermitian normal equations for the core coefficient. Rejects
/// systems whose condition number exceeds [`CONDITION_LIMIT`] and verifies
/// the residual of the solve.
pub fn solve_core(gram: &ArrayView2<C64>, rhs: &ArrayView1<C64>) -> Result<CoreCoefficient> {
    let n = gram.nrows();
    if gram.ncols() != n || rhs.len() != n {
        return Err(SaseError::ShapeMismatch(format!(
            "gram {:?} incompatible with rhs of length {}",
            gram.dim(),
            rhs.len()
        )));
    }
    let herm_defect = {
        let gh = linalg::adjoint(gram);
        linalg::fro_norm(&(&gh - &gram.to_owned()).view())
    };
    let scale = linalg::fro_norm(gram).max(f64::MIN_POSITIVE);
    if herm_defect > 1e-8 * scale {
        return Err(SaseError::ContractViolation(format!(
            "gram is not Hermitian: defect {herm_defect:.3e} vs scale {scale:.3e}"
        )));
    }

    let eigvals = gram.to_owned().eigvalsh(UPLO::Lower)?;
    let max_ev = eigvals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_ev = eigvals.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_ev <= 0.0 || max_ev / min_ev > CONDITION_LIMIT {
        return Err(SaseError::IllConditioned(format!(
            "{n}x{n} normal equations have eigenvalue range [{min_ev:.3e}, {max_ev:.3e}] \
             (condition {:.3e}, limit {CONDITION_LIMIT:.0e})",
            max_ev / min_ev.max(f64::MIN_POSITIVE)
        )));
    }

    let solution = gram.to_owned().solveh(&rhs.to_owned())?;
    let residual = {
        let achieved = gram.dot(&solution);
        let diff = &achieved - &rhs.to_owned();
        diff.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    };
    let rhs_norm = rhs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if residual > 1e-8 * rhs_norm.max(f64::MIN_POSITIVE) {
        return Err(SaseError::EstimationFailure(format!(
            "normal-equation residual {residual:.3e} exceeds 1e-8 * ||rhs|| = {:.3e}",
            1e-8 * rhs_norm
        )));
    }
    CoreCoefficient::from_vec(solution)
}

/// Bundle the two frames and the solved core into a factored estimate.
pub fn assemble_estimate(
    w_hat: &ArrayView2<C64>,
    core: CoreCoefficient,
    f_hat: &ArrayView2<C64>,
) -> Result<ChannelEstimate> {
    let l = core.order();
    if w_hat.ncols() != l || f_hat.ncols() != l {
        return Err(SaseError::ShapeMismatch(format!(
            "core order {l} does not match frame widths {} and {}",
            w_hat.ncols(),
            f_hat.ncols()
        )));
    }
    Ok(ChannelEstimate {
        w_frame: w_hat.to_owned(),
        core,
        f_frame: f_hat.to_owned(),
        dense: OnceLock::new(),
    })
}
