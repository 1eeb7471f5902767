//! Robust adaptive Metropolis proposals.
//!
//! Maintains a lower-triangular shape factor `S` for Gaussian random-walk
//! proposals `x' = x + S u`, `u ~ N(0, I)`, and after every step rescales
//! along the proposal direction so the realized acceptance rate is pulled
//! toward a target:
//!
//! ```text
//! S_n S_nᵀ = S_{n−1} ( I + η_n (α_n − α*) u uᵀ / ‖u‖² ) S_{n−1}ᵀ,
//! ```
//!
//! with step sizes `η_n = n^(−2/3)`. The bracket is positive definite
//! whenever `η_n |α_n − α*| < 1`, which holds from the first step, so the
//! update is always a valid covariance; it is re-factored directly (the
//! dimension here is a dozen parameters, not thousands).

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;

use crate::scalar::{cast, Real};

#[derive(Debug, Clone)]
pub struct RamAdapter<T: Real> {
    s: DMatrix<T>,
    target: T,
    step: u64,
}

impl<T: Real> RamAdapter<T> {
    /// Starts with `S = scale · I` and the given target acceptance rate
    /// (0.234 is the usual choice for random-walk proposals).
    pub fn new(dim: usize, scale: T, target: T) -> Self {
        Self {
            s: DMatrix::identity(dim, dim) * scale,
            target,
            step: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    /// Draws the proposal displacement `S u`, returning it with the raw
    /// standard-normal vector `u` the adaptation step needs back.
    pub fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<T>, DVector<T>) {
        let u = DVector::from_fn(self.dim(), |_, _| T::std_normal(rng));
        (&self.s * &u, u)
    }

    /// Shape update from the realized acceptance probability `alpha`
    /// (clamped to [0, 1]).
    pub fn adapt(&mut self, u: &DVector<T>, alpha: T) {
        self.step += 1;
        let norm_sq = u.norm_squared();
        if !(norm_sq > T::zero()) {
            return;
        }
        let eta = cast::<T>((self.step as f64).powf(-2.0 / 3.0));
        let alpha = alpha.clamp(T::zero(), T::one());
        let c = eta * (alpha - self.target) / norm_sq;
        let su = &self.s * u;
        let m = &self.s * self.s.transpose() + &su * su.transpose() * c;
        if let Some(chol) = Cholesky::new(m) {
            self.s = chol.l().into_owned();
        }
        // A failed factorization (only possible through rounding at the
        // PD boundary) keeps the previous shape; the next update retries.
    }

    /// Current proposal shape factor (tests look at it).
    pub fn shape(&self) -> &DMatrix<T> {
        &self.s
    }
}
