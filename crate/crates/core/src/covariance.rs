//! Multivariate cross-covariance family on the expanded domain.
//!
//! Dependence between variables `i` and `j` is driven by a latent
//! separation `δ_ij`, plugged into a nonseparable base kernel
//!
//! ```text
//! C(h, Δ) = exp{ -φ h / (1 + α Δ)^(β/2) } / (1 + α Δ)^β
//! ```
//!
//! so that cross-covariances are `σ_i1 σ_j1 C(h, δ_ij)` while each margin
//! adds an independent exponential component on top:
//!
//! ```text
//! C_ii(h) = σ_i1² e^{-φ h} + σ_i2² e^{-φ_i h}.
//! ```
//!
//! [`Theta`] carries the raw parameters; [`CovModel`] bakes them into
//! per-pair scale/decay tables so kernel evaluation in the hot paths is a
//! distance, one or two `exp` calls, and a multiply.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::treegraph::ExpandedLocation;

/// Covariance parameters for `q` variables:
/// `3q + q(q-1)/2 + 3` scalars in total.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta<T> {
    /// Shared-component amplitudes `σ_i1`; the sign is meaningful (it flips
    /// the cross-covariance with every other variable).
    pub sigma1: Vec<T>,
    /// Independent-component amplitudes `σ_i2 ≥ 0`.
    pub sigma2: Vec<T>,
    /// Independent-component decay rates `φ_i > 0`.
    pub phi_own: Vec<T>,
    /// Latent separations `δ_ij` for `j < i`, packed row-major
    /// (`(1,0), (2,0), (2,1), …`).
    pub delta: Vec<T>,
    /// Separation scale `α > 0`.
    pub alpha: T,
    /// Separation exponent `β ∈ [0, 1]`.
    pub beta: T,
    /// Shared-component decay rate `φ > 0`.
    pub phi: T,
}

/// How a component maps to the sampler's unconstrained scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    /// Used as-is (signed amplitudes).
    Identity,
    /// Positive parameter, sampled as its logarithm.
    Log,
    /// Parameter in (0, 1), sampled as its log-odds.
    Logit,
}

impl<T: Real> Theta<T> {
    /// Unit-amplitude parameters: every `σ` is 1, every decay is 1, every
    /// separation is 1, `α = β = 1`. Valid for any `q ≥ 1`.
    pub fn baseline(q: usize) -> Self {
        Self {
            sigma1: vec![T::one(); q],
            sigma2: vec![T::one(); q],
            phi_own: vec![T::one(); q],
            delta: vec![T::one(); q * (q - 1) / 2],
            alpha: T::one(),
            beta: T::one(),
            phi: T::one(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.sigma1.len()
    }

    /// Parameter count for `q` variables.
    pub fn n_params(q: usize) -> usize {
        3 * q + q * (q - 1) / 2 + 3
    }

    /// Packed index of `δ_ij`; callers must pass `j < i`.
    pub fn delta_index(i: usize, j: usize) -> usize {
        debug_assert!(j < i);
        i * (i - 1) / 2 + j
    }

    /// Latent separation between two variables (`0` on the diagonal).
    pub fn delta_between(&self, i: usize, j: usize) -> T {
        if i == j {
            T::zero()
        } else {
            self.delta[Self::delta_index(i.max(j), i.min(j))]
        }
    }

    /// Checks ranges and lengths.
    pub fn validate(&self) -> Result<()> {
        let q = self.sigma1.len();
        if q == 0 {
            return Err(Error::InvalidTheta("no variables".into()));
        }
        if self.sigma2.len() != q || self.phi_own.len() != q {
            return Err(Error::InvalidTheta(
                "amplitude/decay vectors disagree on q".into(),
            ));
        }
        if self.delta.len() != q * (q - 1) / 2 {
            return Err(Error::InvalidTheta(format!(
                "expected {} separations for q={q}, got {}",
                q * (q - 1) / 2,
                self.delta.len()
            )));
        }
        let all = self.flatten();
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTheta("non-finite parameter".into()));
        }
        if self.sigma2.iter().any(|&s| s < T::zero()) {
            return Err(Error::InvalidTheta("sigma2 must be nonnegative".into()));
        }
        if self.phi_own.iter().any(|&p| !(p > T::zero())) {
            return Err(Error::InvalidTheta("phi_own must be positive".into()));
        }
        if self.delta.iter().any(|&d| d < T::zero()) {
            return Err(Error::InvalidTheta(
                "separations must be nonnegative".into(),
            ));
        }
        if !(self.alpha > T::zero()) {
            return Err(Error::InvalidTheta("alpha must be positive".into()));
        }
        if self.beta < T::zero() || self.beta > T::one() {
            return Err(Error::InvalidTheta("beta must lie in [0, 1]".into()));
        }
        if !(self.phi > T::zero()) {
            return Err(Error::InvalidTheta("phi must be positive".into()));
        }
        Ok(())
    }

    /// Canonical flat order: `σ_·1`, `σ_·2`, `φ_·`, packed `δ`, `α`, `β`, `φ`.
    pub fn flatten(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(Self::n_params(self.sigma1.len()));
        v.extend_from_slice(&self.sigma1);
        v.extend_from_slice(&self.sigma2);
        v.extend_from_slice(&self.phi_own);
        v.extend_from_slice(&self.delta);
        v.push(self.alpha);
        v.push(self.beta);
        v.push(self.phi);
        v
    }

    /// Inverse of [`Theta::flatten`].
    pub fn unflatten(q: usize, v: &[T]) -> Result<Self> {
        if v.len() != Self::n_params(q) {
            return Err(Error::InvalidTheta(format!(
                "expected {} parameters for q={q}, got {}",
                Self::n_params(q),
                v.len()
            )));
        }
        let npairs = q * (q - 1) / 2;
        Ok(Self {
            sigma1: v[0..q].to_vec(),
            sigma2: v[q..2 * q].to_vec(),
            phi_own: v[2 * q..3 * q].to_vec(),
            delta: v[3 * q..3 * q + npairs].to_vec(),
            alpha: v[3 * q + npairs],
            beta: v[3 * q + npairs + 1],
            phi: v[3 * q + npairs + 2],
        })
    }

    /// Transform of each flat component onto the sampler's unconstrained
    /// scale. `σ_·1` keep their sign; `β` is bounded on both sides; the
    /// rest are positive.
    pub fn transform_kinds(q: usize) -> Vec<TransformKind> {
        let mut kinds = vec![TransformKind::Identity; q];
        kinds.extend(vec![TransformKind::Log; 2 * q + q * (q - 1) / 2]);
        kinds.push(TransformKind::Log); // alpha
        kinds.push(TransformKind::Logit); // beta
        kinds.push(TransformKind::Log); // phi
        kinds
    }

    /// Column names matching the flat order, for draw tables.
    pub fn param_names(q: usize) -> Vec<String> {
        let mut names = Vec::with_capacity(Self::n_params(q));
        for i in 0..q {
            names.push(format!("sigma1_{i}"));
        }
        for i in 0..q {
            names.push(format!("sigma2_{i}"));
        }
        for i in 0..q {
            names.push(format!("phi_own_{i}"));
        }
        for i in 1..q {
            for j in 0..i {
                names.push(format!("delta_{i}_{j}"));
            }
        }
        names.push("alpha".into());
        names.push("beta".into());
        names.push("phi".into());
        names
    }
}

/// Kernel evaluator with per-pair tables baked from a validated [`Theta`].
#[derive(Debug, Clone)]
pub struct CovModel<T> {
    q: usize,
    /// `σ_i1 σ_j1 / (1 + α δ_ij)^β`, indexed `i * q + j`.
    pair_scale: Vec<T>,
    /// `φ / (1 + α δ_ij)^(β/2)`, indexed `i * q + j`.
    pair_decay: Vec<T>,
    /// `σ_i2²`.
    own_scale: Vec<T>,
    /// `φ_i`.
    own_decay: Vec<T>,
    theta: Theta<T>,
}

impl<T: Real> CovModel<T> {
    pub fn new(theta: Theta<T>) -> Result<Self> {
        theta.validate()?;
        let q = theta.n_vars();
        let mut pair_scale = vec![T::zero(); q * q];
        let mut pair_decay = vec![T::zero(); q * q];
        let two = T::from_f64(2.0).unwrap();
        for i in 0..q {
            for j in 0..q {
                let sep = T::one() + theta.alpha * theta.delta_between(i, j);
                let atten = sep.powf(theta.beta);
                pair_scale[i * q + j] = theta.sigma1[i] * theta.sigma1[j] / atten;
                pair_decay[i * q + j] = theta.phi / sep.powf(theta.beta / two);
            }
        }
        Ok(Self {
            q,
            pair_scale,
            pair_decay,
            own_scale: theta.sigma2.iter().map(|&s| s * s).collect(),
            own_decay: theta.phi_own.clone(),
            theta,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.q
    }

    pub fn theta(&self) -> &Theta<T> {
        &self.theta
    }

    /// Covariance between two expanded locations.
    pub fn value(&self, a: &ExpandedLocation<T>, b: &ExpandedLocation<T>) -> T {
        let h = a.dist_sq(b).sqrt();
        let (i, j) = (a.var, b.var);
        let mut c = self.pair_scale[i * self.q + j] * (-self.pair_decay[i * self.q + j] * h).exp();
        if i == j {
            c += self.own_scale[i] * (-self.own_decay[i] * h).exp();
        }
        c
    }

    /// Covariance matrix between two ordinal sets drawn from a shared
    /// location list.
    pub fn matrix(
        &self,
        locations: &[ExpandedLocation<T>],
        rows: &[usize],
        cols: &[usize],
    ) -> DMatrix<T> {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
            self.value(&locations[rows[r]], &locations[cols[c]])
        })
    }

    /// Square covariance matrix of one ordinal set.
    pub fn square(&self, locations: &[ExpandedLocation<T>], idx: &[usize]) -> DMatrix<T> {
        self.matrix(locations, idx, idx)
    }

    /// Covariance row between one free location and an ordinal set: the
    /// prediction path evaluates kernels at points outside the model.
    pub fn row_at(
        &self,
        loc: &ExpandedLocation<T>,
        locations: &[ExpandedLocation<T>],
        cols: &[usize],
    ) -> DMatrix<T> {
        DMatrix::from_fn(1, cols.len(), |_, c| self.value(loc, &locations[cols[c]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cholesky_jittered;
    use approx::assert_relative_eq;

    fn loc(x: f64, y: f64, var: usize) -> ExpandedLocation<f64> {
        ExpandedLocation::new(vec![x, y], var)
    }

    #[test]
    fn base_kernel_hits_known_values() {
        // q = 2, all parameters 1: the cross kernel at distance h is
        // exp(-h/√2)/2, so 0.5 at h = 0 and exp(-1/√2)/2 at h = 1.
        let model = CovModel::new(Theta::<f64>::baseline(2)).unwrap();
        let a = loc(0.0, 0.0, 0);
        let b0 = loc(0.0, 0.0, 1);
        let b1 = loc(1.0, 0.0, 1);
        assert_relative_eq!(model.value(&a, &b0), 0.5, max_relative = 1e-15);
        assert_relative_eq!(
            model.value(&a, &b1),
            0.24653434569761992,
            max_relative = 1e-12
        );
    }

    #[test]
    fn diagonal_kernel_splits_into_shared_and_independent_parts() {
        let mut theta = Theta::<f64>::baseline(2);
        theta.sigma1 = vec![2.0, 1.0];
        theta.sigma2 = vec![3.0, 1.0];
        theta.phi_own = vec![0.5, 1.0];
        theta.phi = 2.0;
        let model = CovModel::new(theta).unwrap();
        let a = loc(0.0, 0.0, 0);
        let b = loc(0.7, 0.0, 0);
        let expect = 4.0 * (-2.0f64 * 0.7).exp() + 9.0 * (-0.5f64 * 0.7).exp();
        assert_relative_eq!(model.value(&a, &b), expect, max_relative = 1e-14);
        // At zero distance the variance is σ_11² + σ_12².
        assert_relative_eq!(model.value(&a, &a), 13.0, max_relative = 1e-14);
    }

    #[test]
    fn kernel_is_symmetric_across_variables() {
        let mut theta = Theta::<f64>::baseline(3);
        theta.sigma1 = vec![1.0, -0.8, 0.5];
        theta.delta = vec![0.3, 1.7, 0.9];
        theta.alpha = 2.0;
        theta.beta = 0.6;
        let model = CovModel::new(theta).unwrap();
        for vi in 0..3 {
            for vj in 0..3 {
                let a = loc(0.1, 0.9, vi);
                let b = loc(0.8, 0.4, vj);
                assert_relative_eq!(model.value(&a, &b), model.value(&b, &a));
            }
        }
    }

    #[test]
    fn negative_amplitude_flips_cross_covariance_only() {
        let mut theta = Theta::<f64>::baseline(2);
        theta.sigma1 = vec![1.0, -1.0];
        let model = CovModel::new(theta).unwrap();
        let a = loc(0.0, 0.0, 0);
        let b = loc(0.2, 0.0, 1);
        let same = loc(0.2, 0.0, 0);
        assert!(model.value(&a, &b) < 0.0);
        assert!(model.value(&a, &same) > 0.0);
        assert!(model.value(&b, &b) > 0.0);
    }

    #[test]
    fn covariance_matrices_are_positive_definite() {
        let mut theta = Theta::<f64>::baseline(2);
        theta.delta = vec![0.4];
        theta.beta = 0.7;
        theta.alpha = 1.3;
        let model = CovModel::new(theta).unwrap();
        // 5×5 grid, both variables co-located at every point.
        let mut locations = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                for v in 0..2 {
                    locations.push(loc(i as f64 / 5.0, j as f64 / 5.0, v));
                }
            }
        }
        let idx: Vec<usize> = (0..locations.len()).collect();
        let cov = model.square(&locations, &idx);
        let (_, jitter) = cholesky_jittered(&cov, "kernel matrix").unwrap();
        assert_eq!(jitter, 0.0);
    }

    #[test]
    fn covariance_decays_with_distance() {
        let model = CovModel::new(Theta::<f64>::baseline(2)).unwrap();
        let a = loc(0.0, 0.0, 0);
        let mut last = f64::INFINITY;
        for step in 0..10 {
            let b = loc(step as f64 * 0.3, 0.0, 1);
            let c = model.value(&a, &b);
            assert!(c < last);
            last = c;
        }
    }

    #[test]
    fn flatten_round_trips_and_counts_parameters() {
        let mut theta = Theta::<f64>::baseline(3);
        theta.delta = vec![0.1, 0.2, 0.3];
        theta.sigma1[1] = -2.0;
        let flat = theta.flatten();
        assert_eq!(flat.len(), Theta::<f64>::n_params(3));
        assert_eq!(flat.len(), 15);
        let back = Theta::unflatten(3, &flat).unwrap();
        assert_eq!(back, theta);
        assert_eq!(Theta::<f64>::param_names(3).len(), 15);
        assert_eq!(Theta::<f64>::transform_kinds(3).len(), 15);
    }

    #[test]
    fn validation_rejects_bad_ranges() {
        let mut theta = Theta::<f64>::baseline(2);
        theta.beta = 1.5;
        assert!(theta.validate().is_err());
        let mut theta = Theta::<f64>::baseline(2);
        theta.phi = 0.0;
        assert!(theta.validate().is_err());
        let mut theta = Theta::<f64>::baseline(2);
        theta.sigma2[0] = -0.1;
        assert!(theta.validate().is_err());
        let mut theta = Theta::<f64>::baseline(2);
        theta.delta = vec![0.5, 0.5];
        assert!(theta.validate().is_err());
    }
}
