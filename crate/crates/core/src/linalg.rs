//! Small dense linear-algebra helpers shared by the model code.
//!
//! Everything here operates on per-node blocks (tens to a few hundred
//! rows), so plain dense factorizations are the right tool. The one piece
//! of policy that lives here is the jitter ladder: covariance blocks that
//! fail Cholesky get an escalating relative diagonal bump before the
//! failure is reported as an error.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::scalar::{cast, Real};

/// Relative jitter ladder tried before declaring a block non-PD.
///
/// Values are multiples of the mean diagonal: covariance blocks built from
/// a valid kernel fail Cholesky only through rounding, and 1e-9..1e-5 of
/// the diagonal spans "rounding noise" to "numerically singular".
const JITTER_LADDER: [f64; 6] = [0.0, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5];

/// Cholesky with escalating diagonal jitter.
///
/// Returns the factorization and the *absolute* jitter that was applied
/// (zero in the common case). `what` names the block for the error message.
///
/// # Errors
///
/// [`Error::NotPositiveDefinite`] when the ladder is exhausted.
pub fn cholesky_jittered<T: Real>(mat: &DMatrix<T>, what: &str) -> Result<(Cholesky<T, Dyn>, T)> {
    let n = mat.nrows();
    debug_assert_eq!(n, mat.ncols());
    if n == 0 {
        return Err(Error::BlockMismatch(format!("{what}: empty block")));
    }
    let mean_diag = mat.diagonal().iter().fold(T::zero(), |a, &b| a + b) / cast::<T>(n as f64);
    let scale = if mean_diag > T::zero() {
        mean_diag
    } else {
        T::one()
    };
    for &level in &JITTER_LADDER {
        let jitter = scale * cast::<T>(level);
        let mut work = mat.clone();
        if level > 0.0 {
            for i in 0..n {
                work[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(work) {
            return Ok((chol, jitter));
        }
    }
    Err(Error::NotPositiveDefinite {
        what: what.to_string(),
        max_jitter: scale.to_f64().unwrap_or(f64::NAN) * JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

/// log |A| from the Cholesky factor of A.
pub fn chol_logdet<T: Real>(chol: &Cholesky<T, Dyn>) -> T {
    let l = chol.l_dirty();
    let two = cast::<T>(2.0);
    (0..l.nrows()).map(|i| two * l[(i, i)].ln()).sum()
}

/// Explicit inverse from a Cholesky factor.
///
/// Used where a block inverse participates in many later products
/// (precision assembly, nested parent-set extensions); one-shot solves go
/// through `Cholesky::solve` instead.
pub fn chol_inverse<T: Real>(chol: &Cholesky<T, Dyn>) -> DMatrix<T> {
    chol.inverse()
}

/// Solves Lᵀ x = b where `l` is the (dirty) lower factor of a Cholesky.
///
/// Only the lower triangle of `l` is read. This is the sampling step
/// x = L⁻ᵀ z that turns z ~ N(0, I) into x ~ N(0, (L Lᵀ)⁻¹).
pub fn solve_lower_transpose<T: Real>(l: &DMatrix<T>, b: &DVector<T>) -> DVector<T> {
    let n = l.nrows();
    debug_assert_eq!(n, b.len());
    let mut x = DVector::<T>::zeros(n);
    for i in (0..n).rev() {
        let mut acc = b[i];
        for k in (i + 1)..n {
            acc -= l[(k, i)] * x[k];
        }
        x[i] = acc / l[(i, i)];
    }
    x
}

/// Averages a matrix with its transpose in place.
///
/// Inverses and Schur complements assembled from solves drift off exact
/// symmetry by rounding; downstream Cholesky calls are happier without
/// that drift.
pub fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let half = cast::<T>(0.5);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Log density of N(mean, Σ) at `x`, with Σ given by its Cholesky factor.
pub fn mvn_logpdf<T: Real>(x: &DVector<T>, mean: &DVector<T>, cov_chol: &Cholesky<T, Dyn>) -> T {
    let n = x.len();
    let diff = x - mean;
    let solved = cov_chol.solve(&diff);
    let quad = diff.dot(&solved);
    let half = cast::<T>(0.5);
    -half * (cast::<T>(n as f64) * T::two_pi().ln() + chol_logdet(cov_chol) + quad)
}

/// Equal-tailed empirical quantile with linear interpolation.
///
/// `xs` must be sorted ascending; `p` in [0, 1].
pub fn quantile_sorted<T: Real>(xs: &[T], p: T) -> T {
    debug_assert!(!xs.is_empty());
    let n = xs.len();
    if n == 1 {
        return xs[0];
    }
    let pos = p * cast::<T>((n - 1) as f64);
    let lower = pos.floor();
    let idx = lower.to_usize().unwrap_or(0).min(n - 2);
    let frac = pos - cast::<T>(idx as f64);
    xs[idx] + frac * (xs[idx + 1] - xs[idx])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd3() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0])
    }

    #[test]
    fn cholesky_passes_through_without_jitter_on_spd() {
        let m = spd3();
        let (chol, jitter) = cholesky_jittered(&m, "test").unwrap();
        assert_eq!(jitter, 0.0);
        let rebuilt = chol.l() * chol.l().transpose();
        assert_relative_eq!(rebuilt, m, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_jitters_a_singular_block_instead_of_failing() {
        // Rank-1, exactly singular: needs a bump but must succeed.
        let v = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let m = &v * v.transpose();
        let (_, jitter) = cholesky_jittered(&m, "rank1").unwrap();
        assert!(jitter > 0.0);
    }

    #[test]
    fn cholesky_reports_indefinite_blocks() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 4.0, 4.0, 1.0]);
        let err = cholesky_jittered(&m, "indefinite").unwrap_err();
        assert!(err.to_string().contains("indefinite"));
    }

    #[test]
    fn logdet_matches_direct_determinant() {
        let m = spd3();
        let (chol, _) = cholesky_jittered(&m, "test").unwrap();
        assert_relative_eq!(chol_logdet(&chol), m.determinant().ln(), epsilon = 1e-12);
    }

    #[test]
    fn lower_transpose_solve_inverts_lt() {
        let m = spd3();
        let (chol, _) = cholesky_jittered(&m, "test").unwrap();
        let b = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let x = solve_lower_transpose(chol.l_dirty(), &b);
        let back = chol.l().transpose() * x;
        assert_relative_eq!(back, b, epsilon = 1e-12);
    }

    #[test]
    fn mvn_logpdf_matches_scalar_normal() {
        let cov = DMatrix::from_row_slice(1, 1, &[2.0]);
        let (chol, _) = cholesky_jittered(&cov, "test").unwrap();
        let x = DVector::from_row_slice(&[0.7]);
        let mean = DVector::from_row_slice(&[0.2]);
        let expect = -0.5 * ((2.0 * std::f64::consts::PI * 2.0).ln() + 0.25 / 2.0);
        assert_relative_eq!(mvn_logpdf(&x, &mean, &chol), expect, epsilon = 1e-12);
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_relative_eq!(quantile_sorted(&xs, 1.0), 4.0);
        assert_relative_eq!(quantile_sorted(&xs, 0.5), 2.5);
    }
}
