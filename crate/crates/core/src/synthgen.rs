//! Synthetic multivariate spatial datasets on the unit square: a latent
//! Gaussian field sampled at a regular grid for every variable, noisy
//! responses on top, and a missingness pattern with an overall keep rate
//! plus near-total dropout inside circular patches (the patches are where
//! cross-variable borrowing has to do the work).
//!
//! Two field routes: [`generate`] draws the latent field from the *exact*
//! dense covariance (quadratic memory, guarded by a cap), which is what
//! validation against a full-GP reference wants; [`field_treed`] draws it
//! ancestrally from a built graph, which scales to benchmark sizes.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::covariance::{CovModel, Theta};
use crate::error::{Error, Result};
use crate::factors::FactorSet;
use crate::linalg::cholesky_jittered;
use crate::mcmc::ObsRow;
use crate::scalar::{cast, Real};
use crate::treegraph::{ExpandedLocation, TreedDag};

/// A disc of near-total missingness for one margin.
#[derive(Debug, Clone)]
pub struct Patch<T> {
    pub margin: usize,
    pub center: Vec<T>,
    pub radius: T,
}

#[derive(Debug, Clone)]
pub struct SynthConfig<T: Real> {
    /// Grid side; every variable is sampled at all side² sites.
    pub side: usize,
    pub n_vars: usize,
    pub theta: Theta<T>,
    pub tau2: Vec<T>,
    /// Probability a site is observed outside any patch.
    pub keep_prob: T,
    /// Probability a site is observed inside a patch of its margin.
    pub patch_keep_prob: T,
    pub patches: Vec<Patch<T>>,
    pub seed: u64,
    /// Largest location count the dense field route accepts.
    pub dense_cap: usize,
}

impl<T: Real> Default for SynthConfig<T> {
    fn default() -> Self {
        Self {
            side: 30,
            n_vars: 2,
            theta: Theta::baseline(2),
            tau2: vec![cast(0.01), cast(0.1)],
            keep_prob: cast(0.2),
            patch_keep_prob: cast(0.01),
            patches: vec![
                Patch {
                    margin: 0,
                    center: vec![cast(0.25), cast(0.25)],
                    radius: cast(0.1),
                },
                Patch {
                    margin: 1,
                    center: vec![cast(0.7), cast(0.4)],
                    radius: cast(0.1),
                },
                Patch {
                    margin: 0,
                    center: vec![cast(0.45), cast(0.75)],
                    radius: cast(0.1),
                },
            ],
            seed: 7,
            dense_cap: 10_000,
        }
    }
}

impl<T: Real> SynthConfig<T> {
    fn validate(&self) -> Result<()> {
        if self.side == 0 {
            return Err(Error::InvalidParameter(
                "grid side must be at least 1".into(),
            ));
        }
        self.theta.validate()?;
        if self.theta.n_vars() != self.n_vars {
            return Err(Error::ModelMismatch(format!(
                "covariance parameters cover {} variables, config asks for {}",
                self.theta.n_vars(),
                self.n_vars
            )));
        }
        if self.tau2.len() != self.n_vars {
            return Err(Error::InvalidParameter(format!(
                "{} noise variances for {} variables",
                self.tau2.len(),
                self.n_vars
            )));
        }
        if self.tau2.iter().any(|&t| !(t > T::zero())) {
            return Err(Error::InvalidParameter(
                "noise variances must be positive".into(),
            ));
        }
        for p in [self.keep_prob, self.patch_keep_prob] {
            if !(p > T::zero() && p <= T::one()) {
                return Err(Error::InvalidParameter(
                    "keep probabilities must lie in (0, 1]".into(),
                ));
            }
        }
        for (k, patch) in self.patches.iter().enumerate() {
            if patch.margin >= self.n_vars {
                return Err(Error::InvalidParameter(format!(
                    "patch {k} names margin {} of {}",
                    patch.margin, self.n_vars
                )));
            }
            if patch.center.len() != 2 || !(patch.radius > T::zero()) {
                return Err(Error::InvalidParameter(format!(
                    "patch {k} needs a 2-d center and a positive radius"
                )));
            }
        }
        Ok(())
    }
}

/// The generated dataset plus everything needed to score against it.
#[derive(Debug, Clone)]
pub struct SynthData<T: Real> {
    pub locations: Vec<ExpandedLocation<T>>,
    pub observed: Vec<bool>,
    /// Latent field at every location.
    pub w: DVector<T>,
    /// Complete (pre-masking) responses at every location.
    pub y: DVector<T>,
    pub theta: Theta<T>,
    pub tau2: Vec<T>,
}

impl<T: Real> SynthData<T> {
    /// Observation rows for the masked dataset: identity design, one
    /// target per row.
    pub fn rows(&self) -> Vec<ObsRow<T>> {
        (0..self.locations.len())
            .filter(|&o| self.observed[o])
            .map(|o| ObsRow {
                targets: vec![(o, T::one())],
                y: self.y[o],
                margin: self.locations[o].var,
            })
            .collect()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&b| b).count()
    }
}

/// Cell-centered grid over the unit square, one copy per variable,
/// ordered site-major then variable.
pub fn grid_locations<T: Real>(side: usize, n_vars: usize) -> Vec<ExpandedLocation<T>> {
    let mut locs = Vec::with_capacity(side * side * n_vars);
    let s = cast::<T>(side as f64);
    for i in 0..side {
        for j in 0..side {
            let x = (cast::<T>(i as f64) + cast(0.5)) / s;
            let y = (cast::<T>(j as f64) + cast(0.5)) / s;
            for v in 0..n_vars {
                locs.push(ExpandedLocation::new(vec![x, y], v));
            }
        }
    }
    locs
}

fn in_patch<T: Real>(loc: &ExpandedLocation<T>, patch: &Patch<T>) -> bool {
    if loc.var != patch.margin {
        return false;
    }
    let dx = loc.coords[0] - patch.center[0];
    let dy = loc.coords[1] - patch.center[1];
    dx * dx + dy * dy <= patch.radius * patch.radius
}

/// Bernoulli observation mask honoring the patch dropouts.
pub fn draw_mask<T: Real>(
    locations: &[ExpandedLocation<T>],
    config: &SynthConfig<T>,
    rng: &mut ChaCha20Rng,
) -> Vec<bool> {
    locations
        .iter()
        .map(|loc| {
            let p = if config.patches.iter().any(|patch| in_patch(loc, patch)) {
                config.patch_keep_prob
            } else {
                config.keep_prob
            };
            rng.gen_range(T::zero()..T::one()) < p
        })
        .collect()
}

/// Adds independent N(0, τ²_margin) noise to the latent field.
pub fn noisy_response<T: Real>(
    w: &DVector<T>,
    locations: &[ExpandedLocation<T>],
    tau2: &[T],
    rng: &mut ChaCha20Rng,
) -> DVector<T> {
    DVector::from_fn(w.len(), |o, _| {
        w[o] + tau2[locations[o].var].sqrt() * T::std_normal(rng)
    })
}

/// Exact draw of the latent field from the dense base covariance.
pub fn field_dense<T: Real>(
    locations: &[ExpandedLocation<T>],
    theta: &Theta<T>,
    cap: usize,
    rng: &mut ChaCha20Rng,
) -> Result<DVector<T>> {
    let n = locations.len();
    if n > cap {
        return Err(Error::DenseCapExceeded { cap, actual: n });
    }
    let cov = CovModel::new(theta.clone())?;
    let idx: Vec<usize> = (0..n).collect();
    let c = cov.square(locations, &idx);
    let (chol, _) = cholesky_jittered(&c, "synthetic field covariance")?;
    let eps = DVector::from_fn(n, |_, _| T::std_normal(rng));
    Ok(chol.l() * eps)
}

/// Ancestral draw of the latent field from a built graph's prior — linear
/// in the number of locations, for benchmark-scale data.
pub fn field_treed<T: Real>(
    dag: &TreedDag<T>,
    theta: &Theta<T>,
    rng: &mut ChaCha20Rng,
) -> Result<DVector<T>> {
    let cov = CovModel::new(theta.clone())?;
    let fs = FactorSet::build(dag, &cov)?;
    Ok(fs.sample_prior(dag, rng))
}

/// Full dense-field dataset: grid, exact field, noise, mask — all driven
/// by one seeded stream in that order.
pub fn generate<T: Real>(config: &SynthConfig<T>) -> Result<SynthData<T>> {
    config.validate()?;
    let locations = grid_locations(config.side, config.n_vars);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let w = field_dense(&locations, &config.theta, config.dense_cap, &mut rng)?;
    let y = noisy_response(&w, &locations, &config.tau2, &mut rng);
    let observed = draw_mask(&locations, config, &mut rng);
    Ok(SynthData {
        locations,
        observed,
        w,
        y,
        theta: config.theta.clone(),
        tau2: config.tau2.clone(),
    })
}
