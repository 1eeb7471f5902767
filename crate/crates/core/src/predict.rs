//! Posterior prediction at arbitrary locations.
//!
//! A target that coincides with an in-model location simply reuses that
//! location's stored field draws. Anything else is attached the same way
//! leaves are: nearest same-variable reference branch (falling back to
//! any-variable when the target's variable has no reference anywhere),
//! conditioned on that branch — and, in the chain region, on the branch's
//! own parents — through the base-kernel kriging weights
//!
//! ```text
//! w_u | w_[u] ~ N( C_{u,[u]} C_{[u]}⁻¹ w_[u] ,  C_uu − C_{u,[u]} C_{[u]}⁻¹ C_{[u],u} ).
//! ```
//!
//! The weights are rebuilt whenever the covariance parameters change
//! between consecutive draws, so chains with a parameter walk pay one
//! factor rebuild per accepted move, not per draw.
//!
//! Point estimates are averages of the *noiseless* conditional means;
//! interval endpoints are equal-tailed empirical quantiles of the noisy
//! response draws `w_u + N(0, τ²)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::covariance::{CovModel, Theta};
use crate::error::{Error, Result};
use crate::factors::{gather, FactorSet};
use crate::linalg::quantile_sorted;
use crate::scalar::{cast, Real};
use crate::treegraph::{ExpandedLocation, TreedDag};

#[derive(Debug, Clone)]
pub struct PredictOptions<T> {
    /// Equal-tailed interval probabilities, e.g. (0.025, 0.975).
    pub interval: (T, T),
    pub seed: u64,
    /// Also return the raw noisy response draws (targets × draws).
    pub keep_draws: bool,
}

impl<T: Real> Default for PredictOptions<T> {
    fn default() -> Self {
        Self {
            interval: (cast(0.025), cast(0.975)),
            seed: 99,
            keep_draws: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prediction<T: Real> {
    /// Posterior mean of the latent surface at each target.
    pub mean: DVector<T>,
    pub lo: DVector<T>,
    pub hi: DVector<T>,
    /// Targets that had to borrow a reference of another variable.
    pub fallback_count: usize,
    pub draws: Option<DMatrix<T>>,
}

enum Target {
    InModel(usize),
    Kriged {
        terminal: usize,
        parent_locs: Vec<usize>,
    },
}

struct KrigedWeights<T: Real> {
    weights: DMatrix<T>,
    resid_sd: T,
}

fn resolve_targets<T: Real>(
    dag: &TreedDag<T>,
    new_locs: &[ExpandedLocation<T>],
) -> Result<(Vec<Target>, usize)> {
    let mut targets = Vec::with_capacity(new_locs.len());
    let mut fallbacks = 0;
    for (k, loc) in new_locs.iter().enumerate() {
        if loc.coords.len() != dag.dim() {
            return Err(Error::InvalidParameter(format!(
                "prediction target {k} has {} coordinates, model has {}",
                loc.coords.len(),
                dag.dim()
            )));
        }
        if loc.var >= dag.n_vars() {
            return Err(Error::InvalidParameter(format!(
                "prediction target {k} names variable {} of {}",
                loc.var,
                dag.n_vars()
            )));
        }
        if loc.coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFiniteCoordinate { ordinal: k });
        }
        let exact = (0..dag.n_locations()).find(|&o| {
            let l = dag.location(o);
            l.var == loc.var && l.coords == loc.coords
        });
        if let Some(o) = exact {
            targets.push(Target::InModel(o));
            continue;
        }
        let (terminal, used_fallback) = dag.cherry_pick(loc);
        if used_fallback {
            fallbacks += 1;
        }
        let node = dag.node(terminal);
        let mut parent_locs = Vec::new();
        if node.id.level > dag.nest_floor() {
            for &p in &node.parents {
                parent_locs.extend_from_slice(&dag.node(p).locs);
            }
        }
        parent_locs.extend_from_slice(&node.locs);
        targets.push(Target::Kriged {
            terminal,
            parent_locs,
        });
    }
    Ok((targets, fallbacks))
}

/// Kriging weights for every non-matching target under one θ.
fn build_weights<T: Real>(
    dag: &TreedDag<T>,
    new_locs: &[ExpandedLocation<T>],
    targets: &[Target],
    theta: &Theta<T>,
) -> Result<Vec<Option<KrigedWeights<T>>>> {
    let cov = CovModel::new(theta.clone())?;
    let fs = FactorSet::build(dag, &cov)?;
    targets
        .iter()
        .enumerate()
        .map(|(k, t)| match t {
            Target::InModel(_) => Ok(None),
            Target::Kriged {
                terminal,
                parent_locs,
            } => {
                let node = dag.node(*terminal);
                let f = fs.node(*terminal);
                let cinv = if node.id.level > dag.nest_floor() {
                    f.ext_inv.as_ref().ok_or_else(|| {
                        Error::BlockMismatch(format!("no extended inverse on terminal {}", node.id))
                    })?
                } else {
                    &f.own.as_ref().expect("branch keeps its own covariance").inv
                };
                let row = cov.row_at(&new_locs[k], dag.locations(), parent_locs);
                let weights = &row * cinv;
                let var =
                    cov.value(&new_locs[k], &new_locs[k]) - (&weights * row.transpose())[(0, 0)];
                Ok(Some(KrigedWeights {
                    weights,
                    resid_sd: var.max(T::zero()).sqrt(),
                }))
            }
        })
        .collect()
}

pub fn predict<T: Real>(
    dag: &TreedDag<T>,
    new_locs: &[ExpandedLocation<T>],
    w_draws: &[DVector<T>],
    theta_draws: &[Theta<T>],
    tau2_draws: &[DVector<T>],
    opts: &PredictOptions<T>,
) -> Result<Prediction<T>> {
    if w_draws.is_empty() {
        return Err(Error::InvalidParameter(
            "prediction needs at least one draw".into(),
        ));
    }
    if w_draws.len() != theta_draws.len() || w_draws.len() != tau2_draws.len() {
        return Err(Error::BlockMismatch(format!(
            "{} field draws, {} parameter draws, {} noise draws",
            w_draws.len(),
            theta_draws.len(),
            tau2_draws.len()
        )));
    }
    let (lo_p, hi_p) = opts.interval;
    if !(lo_p >= T::zero() && hi_p <= T::one() && lo_p < hi_p) {
        return Err(Error::InvalidParameter(
            "interval probabilities must satisfy 0 ≤ lo < hi ≤ 1".into(),
        ));
    }

    let (targets, fallback_count) = resolve_targets(dag, new_locs)?;
    let m = targets.len();
    let s = w_draws.len();
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);

    let mut mean = DVector::zeros(m);
    let mut noisy: Vec<Vec<T>> = vec![Vec::with_capacity(s); m];
    let mut weights: Vec<Option<KrigedWeights<T>>> = Vec::new();
    let mut current_theta: Option<Vec<T>> = None;

    for (si, w) in w_draws.iter().enumerate() {
        let flat = theta_draws[si].flatten();
        if current_theta.as_ref() != Some(&flat) {
            weights = build_weights(dag, new_locs, &targets, &theta_draws[si])?;
            current_theta = Some(flat);
        }
        for (k, t) in targets.iter().enumerate() {
            let tau = tau2_draws[si][new_locs[k].var].sqrt();
            let (noiseless, wk) = match t {
                Target::InModel(o) => (w[*o], w[*o]),
                Target::Kriged { parent_locs, .. } => {
                    let kw = weights[k].as_ref().expect("kriged target has weights");
                    let cond_mean = (&kw.weights * gather(w, parent_locs))[0];
                    (cond_mean, cond_mean + kw.resid_sd * T::std_normal(&mut rng))
                }
            };
            mean[k] += noiseless;
            noisy[k].push(wk + tau * T::std_normal(&mut rng));
        }
    }
    mean /= cast::<T>(s as f64);

    let mut lo = DVector::zeros(m);
    let mut hi = DVector::zeros(m);
    for k in 0..m {
        let mut sorted = noisy[k].clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
        lo[k] = quantile_sorted(&sorted, lo_p);
        hi[k] = quantile_sorted(&sorted, hi_p);
    }
    let draws = opts
        .keep_draws
        .then(|| DMatrix::from_fn(m, s, |k, si| noisy[k][si]));
    Ok(Prediction {
        mean,
        lo,
        hi,
        fallback_count,
        draws,
    })
}

/// Root mean squared error of a point prediction.
pub fn rmse<T: Real>(pred: &DVector<T>, truth: &DVector<T>) -> T {
    let n = cast::<T>(pred.len() as f64);
    ((pred - truth).norm_squared() / n).sqrt()
}

/// Fraction of truth values inside their interval.
pub fn coverage<T: Real>(lo: &DVector<T>, hi: &DVector<T>, truth: &DVector<T>) -> T {
    let hits = (0..truth.len())
        .filter(|&i| lo[i] <= truth[i] && truth[i] <= hi[i])
        .count();
    cast::<T>(hits as f64) / cast::<T>(truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treegraph::TreeParams;
    use approx::assert_relative_eq;
    use nalgebra::Cholesky;

    fn single_root(side: usize, q: usize) -> TreedDag<f64> {
        let locs = crate::synthgen::grid_locations(side, q);
        let n = locs.len();
        TreedDag::build(
            locs,
            vec![true; n],
            &TreeParams {
                levels: 1,
                depth: 1,
                fanout: 2,
                subset_size: n,
                bias_weights: vec![1.0; q],
                seed: 1,
            },
        )
        .unwrap()
    }

    type Draws = (Vec<DVector<f64>>, Vec<Theta<f64>>, Vec<DVector<f64>>);

    fn synthetic_draws(dag: &TreedDag<f64>, s: usize, theta: &Theta<f64>, tau2: f64) -> Draws {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let w: Vec<DVector<f64>> = (0..s)
            .map(|_| {
                DVector::from_fn(dag.n_locations(), |_, _| {
                    <f64 as Real>::std_normal(&mut rng)
                })
            })
            .collect();
        let thetas = vec![theta.clone(); s];
        let taus = vec![DVector::from_element(dag.n_vars(), tau2); s];
        (w, thetas, taus)
    }

    #[test]
    fn single_root_kriging_reproduces_dense_weights() {
        let dag = single_root(5, 1);
        let theta = Theta::baseline(1);
        let (w, thetas, taus) = synthetic_draws(&dag, 40, &theta, 0.04);
        let new_locs = vec![
            ExpandedLocation::new(vec![0.33, 0.41], 0),
            ExpandedLocation::new(vec![0.9, 0.05], 0),
        ];
        let pred = predict(
            &dag,
            &new_locs,
            &w,
            &thetas,
            &taus,
            &PredictOptions::default(),
        )
        .unwrap();

        // Dense kriging: weights = C_{u,S} C_S⁻¹ against the mean field.
        let cov = CovModel::new(theta).unwrap();
        let idx: Vec<usize> = (0..dag.n_locations()).collect();
        let c = cov.square(dag.locations(), &idx);
        let chol = Cholesky::new(c).unwrap();
        let mut wbar = DVector::zeros(dag.n_locations());
        for wi in &w {
            wbar += wi;
        }
        wbar /= w.len() as f64;
        for (k, u) in new_locs.iter().enumerate() {
            let row = cov.row_at(u, dag.locations(), &idx);
            let expect = (row * chol.solve(&wbar))[0];
            assert_relative_eq!(pred.mean[k], expect, epsilon = 1e-10);
        }
        assert_eq!(pred.fallback_count, 0);
    }

    #[test]
    fn in_model_targets_reuse_stored_draws() {
        let dag = single_root(4, 2);
        let theta = Theta::baseline(2);
        let (w, thetas, taus) = synthetic_draws(&dag, 60, &theta, 0.01);
        let target = dag.location(5).clone();
        let pred = predict(
            &dag,
            &[target],
            &w,
            &thetas,
            &taus,
            &PredictOptions {
                keep_draws: true,
                ..Default::default()
            },
        )
        .unwrap();
        let expect = w.iter().map(|wi| wi[5]).sum::<f64>() / w.len() as f64;
        assert_relative_eq!(pred.mean[0], expect, epsilon = 1e-12);
        assert!(pred.lo[0] < pred.hi[0]);
        assert_eq!(pred.draws.as_ref().unwrap().ncols(), 60);
    }

    #[test]
    fn intervals_match_the_gaussian_predictive_width() {
        // Freeze the field: every draw identical, so the predictive spread
        // at a new site is exactly N(Hw, r + τ²).
        let dag = single_root(4, 1);
        let theta = Theta::baseline(1);
        let w0 = DVector::from_fn(dag.n_locations(), |i, _| (i as f64 * 0.7).sin());
        let s = 4000;
        let w = vec![w0.clone(); s];
        let thetas = vec![theta.clone(); s];
        let tau2 = 0.09;
        let taus = vec![DVector::from_element(1, tau2); s];
        let u = ExpandedLocation::new(vec![0.52, 0.18], 0);
        let pred = predict(
            &dag,
            std::slice::from_ref(&u),
            &w,
            &thetas,
            &taus,
            &PredictOptions::default(),
        )
        .unwrap();

        let cov = CovModel::new(theta).unwrap();
        let idx: Vec<usize> = (0..dag.n_locations()).collect();
        let c = cov.square(dag.locations(), &idx);
        let chol = Cholesky::new(c).unwrap();
        let row = cov.row_at(&u, dag.locations(), &idx);
        let mean = (&row * chol.solve(&w0))[0];
        let r = cov.value(&u, &u) - (&row * chol.solve(&row.transpose()))[(0, 0)];
        let sd = (r + tau2).sqrt();
        assert_relative_eq!(pred.mean[0], mean, epsilon = 1e-10);
        assert_relative_eq!(pred.lo[0], mean - 1.96 * sd, epsilon = 0.12 * sd);
        assert_relative_eq!(pred.hi[0], mean + 1.96 * sd, epsilon = 0.12 * sd);
    }

    #[test]
    fn changing_parameters_rebuild_the_weights() {
        let dag = single_root(4, 1);
        let theta_a = Theta::baseline(1);
        let mut theta_b = Theta::baseline(1);
        theta_b.phi = 3.0;
        let w: Vec<DVector<f64>> = (0..4)
            .map(|k| DVector::from_fn(dag.n_locations(), |i, _| ((i + k) as f64 * 0.3).cos()))
            .collect();
        let thetas = vec![
            theta_a.clone(),
            theta_b.clone(),
            theta_b.clone(),
            theta_a.clone(),
        ];
        let taus = vec![DVector::from_element(1, 0.01); 4];
        let u = ExpandedLocation::new(vec![0.61, 0.37], 0);
        let pred = predict(
            &dag,
            std::slice::from_ref(&u),
            &w,
            &thetas,
            &taus,
            &PredictOptions::default(),
        )
        .unwrap();

        let idx: Vec<usize> = (0..dag.n_locations()).collect();
        let expect: f64 = thetas
            .iter()
            .zip(&w)
            .map(|(t, wi)| {
                let cov = CovModel::new(t.clone()).unwrap();
                let c = cov.square(dag.locations(), &idx);
                let chol = Cholesky::new(c).unwrap();
                (cov.row_at(&u, dag.locations(), &idx) * chol.solve(wi))[0]
            })
            .sum::<f64>()
            / 4.0;
        assert_relative_eq!(pred.mean[0], expect, epsilon = 1e-10);
    }

    #[test]
    fn fallback_targets_are_counted_and_finite() {
        // Variable 1 has no observed site anywhere, so its references do
        // not exist and its predictions borrow variable 0 branches.
        let locs = crate::synthgen::grid_locations::<f64>(5, 2);
        let observed: Vec<bool> = locs.iter().map(|l| l.var == 0).collect();
        let dag = TreedDag::build(
            locs,
            observed,
            &TreeParams {
                levels: 2,
                depth: 2,
                fanout: 2,
                subset_size: 6,
                bias_weights: vec![1.0, 1.0],
                seed: 2,
            },
        )
        .unwrap();
        let theta = Theta::baseline(2);
        let (w, thetas, taus) = synthetic_draws(&dag, 10, &theta, 0.01);
        let u = ExpandedLocation::new(vec![0.315, 0.515], 1);
        let pred = predict(&dag, &[u], &w, &thetas, &taus, &PredictOptions::default()).unwrap();
        assert_eq!(pred.fallback_count, 1);
        assert!(pred.mean[0].is_finite() && pred.lo[0] < pred.hi[0]);
    }

    #[test]
    fn scoring_helpers() {
        let pred = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let truth = DVector::from_vec(vec![1.0, 2.5, 2.0]);
        assert_relative_eq!(rmse(&pred, &truth), (1.25f64 / 3.0).sqrt(), epsilon = 1e-12);
        let lo = DVector::from_vec(vec![0.5, 2.4, 2.5]);
        let hi = DVector::from_vec(vec![1.5, 2.6, 2.8]);
        assert_relative_eq!(coverage(&lo, &hi, &truth), 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn validation_rejects_mismatched_inputs() {
        let dag = single_root(3, 1);
        let theta = Theta::baseline(1);
        let (w, thetas, mut taus) = synthetic_draws(&dag, 5, &theta, 0.01);
        let u = vec![ExpandedLocation::new(vec![0.5, 0.5], 0)];
        taus.pop();
        assert!(predict(&dag, &u, &w, &thetas, &taus, &PredictOptions::default()).is_err());
        let bad = vec![ExpandedLocation::new(vec![0.5], 0)];
        let (w, thetas, taus) = synthetic_draws(&dag, 5, &theta, 0.01);
        assert!(predict(&dag, &bad, &w, &thetas, &taus, &PredictOptions::default()).is_err());
    }
}
