//! Shared complex matrix helpers used across the estimation pipeline.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::{Eigh, JobSvd, SVDDC, UPLO};
use num_complex::Complex64;

use crate::error::{Result, SaseError};

pub type C64 = Complex64;

extern "C" {
    fn openblas_set_num_threads(num_threads: std::os::raw::c_int);
}

static BLAS_SINGLE_THREAD: std::sync::Once = std::sync::Once::new();

/// Pin the BLAS backend to one thread. Every factorization in this crate
/// runs on matrices small enough that BLAS-internal threading only adds
/// contention; the harness parallelizes across trials instead.
pub fn use_single_threaded_blas() {
    BLAS_SINGLE_THREAD.call_once(|| unsafe { openblas_set_num_threads(1) });
}

/// Conjugate transpose.
pub fn adjoint(a: &ArrayView2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

/// Frobenius norm.
pub fn fro_norm(a: &ArrayView2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn fro_norm_sq(a: &ArrayView2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>()
}

/// Thin SVD with descending singular values. Returns `(u, s, v)` where
/// `a = u * diag(s) * v^H`, `u` is m-by-k and `v` is n-by-k with
/// k = min(m, n).
pub fn thin_svd(a: &ArrayView2<C64>) -> Result<(Array2<C64>, Array1<f64>, Array2<C64>)> {
    let (u, sing, vt) = a.to_owned().svddc(JobSvd::Some)?;
    let u = u.ok_or_else(|| SaseError::EstimationFailure("svd returned no left factor".into()))?;
    let vt = vt.ok_or_else(|| SaseError::EstimationFailure("svd returned no right factor".into()))?;
    let v = adjoint(&vt.view());
    Ok((u, sing, v))
}

/// Make the first entry of magnitude above `tol` in each column of `u`
/// real-positive, applying the compensating phase to the matching column
/// of `v` so that `u * diag(s) * v^H` is unchanged.
pub fn canonicalize_pair(u: &mut Array2<C64>, v: &mut Array2<C64>, tol: f64) {
    let cols = u.ncols().min(v.ncols());
    for j in 0..cols {
        let phase = column_phase(&u.column(j), tol);
        if let Some(p) = phase {
            let conj_p = p.conj();
            u.column_mut(j).mapv_inplace(|z| z * conj_p);
            v.column_mut(j).mapv_inplace(|z| z * conj_p);
        }
    }
}

/// Phase-canonicalize a single orthonormal frame (first significant entry of
/// each column made real-positive). Span is unchanged.
pub fn canonicalize_columns(frame: &mut Array2<C64>, tol: f64) {
    for j in 0..frame.ncols() {
        if let Some(p) = column_phase(&frame.column(j), tol) {
            let conj_p = p.conj();
            frame.column_mut(j).mapv_inplace(|z| z * conj_p);
        }
    }
}

fn column_phase(col: &ArrayView1<C64>, tol: f64) -> Option<C64> {
    col.iter()
        .find(|z| z.norm() > tol)
        .map(|z| z / z.norm())
}

/// Gram matrix `a^H a`.
pub fn gram(a: &ArrayView2<C64>) -> Array2<C64> {
    adjoint(a).dot(a)
}

/// Largest absolute deviation of `a^H a` from the identity.
pub fn semi_unitary_defect(a: &ArrayView2<C64>) -> f64 {
    let g = gram(a);
    let k = g.nrows();
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            worst = worst.max((g[[i, j]] - target).norm());
        }
    }
    worst
}

pub fn check_semi_unitary(a: &ArrayView2<C64>, tol: f64, what: &str) -> Result<()> {
    let defect = semi_unitary_defect(a);
    if defect > tol {
        return Err(SaseError::ContractViolation(format!(
            "{what} is not semi-unitary: max |a^H a - I| = {defect:.3e} > {tol:.1e}"
        )));
    }
    Ok(())
}

/// Cosines of the principal angles between the column spans of two
/// orthonormal frames, i.e. the singular values of `a^H b`, descending.
pub fn principal_angle_cosines(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> Result<Array1<f64>> {
    let m = adjoint(a).dot(b);
    let (_, sing, _) = m.svddc(JobSvd::None)?;
    Ok(sing)
}

/// Kronecker product of two complex matrices.
pub fn kron(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> Array2<C64> {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    let mut out = Array2::<C64>::zeros((ra * rb, ca * cb));
    for i in 0..ra {
        for j in 0..ca {
            let scaled = b.mapv(|z| z * a[[i, j]]);
            out.slice_mut(s![i * rb..(i + 1) * rb, j * cb..(j + 1) * cb])
                .assign(&scaled);
        }
    }
    out
}

/// Column-major stacking of a matrix into a vector, matching the convention
/// used throughout the reconstruction step.
pub fn vec_colmajor(a: &ArrayView2<C64>) -> Array1<C64> {
    let (rows, cols) = a.dim();
    let mut out = Array1::<C64>::zeros(rows * cols);
    for j in 0..cols {
        for i in 0..rows {
            out[j * rows + i] = a[[i, j]];
        }
    }
    out
}

/// Inverse of [`vec_colmajor`].
pub fn unvec_colmajor(v: &ArrayView1<C64>, rows: usize, cols: usize) -> Result<Array2<C64>> {
    if v.len() != rows * cols {
        return Err(SaseError::ShapeMismatch(format!(
            "cannot reshape vector of length {} into {}x{}",
            v.len(),
            rows,
            cols
        )));
    }
    let mut out = Array2::<C64>::zeros((rows, cols));
    for j in 0..cols {
        for i in 0..rows {
            out[[i, j]] = v[j * rows + i];
        }
    }
    Ok(out)
}

/// Inverse principal square root of a Hermitian positive definite matrix.
pub fn inv_sqrt_hermitian(g: &ArrayView2<C64>, tol: f64) -> Result<Array2<C64>> {
    let (eigvals, eigvecs) = g.to_owned().eigh(UPLO::Lower)?;
    // The backend returns the conjugate of the eigenvector matrix for
    // complex Hermitian input; undo that so columns are true eigenvectors.
    let eigvecs = eigvecs.mapv(|z| z.conj());
    let max_ev = eigvals.iter().cloned().fold(0.0f64, f64::max);
    if max_ev <= 0.0 {
        return Err(SaseError::Singular("gram matrix has no positive spectrum".into()));
    }
    if eigvals.iter().any(|&ev| ev <= tol * max_ev) {
        return Err(SaseError::Singular(format!(
            "gram matrix numerically singular (min eigenvalue {:.3e}, max {:.3e})",
            eigvals.iter().cloned().fold(f64::INFINITY, f64::min),
            max_ev
        )));
    }
    let scaled = eigvals.mapv(|ev| C64::new(1.0 / ev.sqrt(), 0.0));
    let mut out = Array2::<C64>::zeros(g.raw_dim());
    // Q * diag(1/sqrt(ev)) * Q^H
    for (k, col) in eigvecs.axis_iter(Axis(1)).enumerate() {
        let w = scaled[k];
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                out[[i, j]] += col[i] * w * col[j].conj();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn adjoint_swaps_and_conjugates() {
        let a = array![[c(1.0, 2.0), c(3.0, -1.0)]];
        let ah = adjoint(&a.view());
        assert_eq!(ah.dim(), (2, 1));
        assert_eq!(ah[[0, 0]], c(1.0, -2.0));
        assert_eq!(ah[[1, 0]], c(3.0, 1.0));
    }

    #[test]
    fn thin_svd_reconstructs() {
        let a = array![
            [c(1.0, 0.5), c(0.0, -1.0), c(2.0, 0.0)],
            [c(0.0, 0.0), c(1.0, 1.0), c(-1.0, 0.3)],
        ];
        let (u, s, v) = thin_svd(&a.view()).unwrap();
        let mut rec = Array2::<C64>::zeros(a.raw_dim());
        for k in 0..s.len() {
            for i in 0..a.nrows() {
                for j in 0..a.ncols() {
                    rec[[i, j]] += u[[i, k]] * C64::new(s[k], 0.0) * v[[j, k]].conj();
                }
            }
        }
        let err = fro_norm(&(&a - &rec).view()) / fro_norm(&a.view());
        assert!(err < 1e-12, "reconstruction error {err}");
        assert!(s[0] >= s[1]);
    }

    #[test]
    fn vec_roundtrip_is_column_major() {
        let a = array![[c(1.0, 0.0), c(3.0, 0.0)], [c(2.0, 0.0), c(4.0, 0.0)]];
        let v = vec_colmajor(&a.view());
        assert_eq!(v[0], c(1.0, 0.0));
        assert_eq!(v[1], c(2.0, 0.0));
        assert_eq!(v[2], c(3.0, 0.0));
        let back = unvec_colmajor(&v.view(), 2, 2).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn kron_identity_blocks() {
        let eye = Array2::<C64>::eye(2);
        let b = array![[c(1.0, 1.0), c(2.0, 0.0)], [c(0.0, -1.0), c(3.0, 0.0)]];
        let k = kron(&eye.view(), &b.view());
        assert_eq!(k.dim(), (4, 4));
        assert_eq!(k[[0, 0]], b[[0, 0]]);
        assert_eq!(k[[2, 2]], b[[0, 0]]);
        assert_eq!(k[[0, 2]], c(0.0, 0.0));
    }

    #[test]
    fn inv_sqrt_whitens_gram() {
        let a = array![
            [c(2.0, 0.0), c(0.4, 0.1)],
            [c(0.1, -0.2), c(1.0, 0.0)],
            [c(0.0, 0.5), c(0.3, 0.0)],
        ];
        let g = gram(&a.view());
        let w = inv_sqrt_hermitian(&g.view(), 1e-13).unwrap();
        let fixed = a.dot(&w);
        assert!(semi_unitary_defect(&fixed.view()) < 1e-10);
    }
}
