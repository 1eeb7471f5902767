//! Dense reference computations and distribution-level test statistics.
//!
//! Everything in this module is deliberately written the slow, obvious
//! way — dense matrices, textbook formulas — so the fast block-sparse
//! implementations elsewhere have an independent second route to be
//! checked against. None of it runs inside the samplers.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::covariance::CovModel;
use crate::error::Result;
use crate::factors::{FactorSet, ResidualCov};
use crate::linalg::chol_logdet;
use crate::scalar::{cast, Real};
use crate::treegraph::{BuildDiagnostics, ExpandedLocation, NodeId, NodeRole, TreedDag};

/// Dense covariance of the factorized law over every location:
/// `Σ = (I − H̃)⁻¹ R̃ (I − H̃)⁻ᵀ`, straight from the definition
/// `w = H̃ w + η`. Indexed by location ordinal.
pub fn densify_cov<T: Real>(dag: &TreedDag<T>, fs: &FactorSet<T>) -> DMatrix<T> {
    let n = dag.n_locations();
    let mut hbig = DMatrix::<T>::zeros(n, n);
    let mut rbig = DMatrix::<T>::zeros(n, n);
    for ord in 0..dag.n_nodes() {
        let node = dag.node(ord);
        let f = fs.node(ord);
        let parent_locs: Vec<usize> = node
            .parents
            .iter()
            .flat_map(|&p| dag.node(p).locs.iter().copied())
            .collect();
        for (i, &li) in node.locs.iter().enumerate() {
            for (k, &lk) in parent_locs.iter().enumerate() {
                hbig[(li, lk)] = f.h[(i, k)];
            }
        }
        match &f.r {
            ResidualCov::Dense { chol, .. } => {
                let l = chol.l();
                let r = &l * l.transpose();
                for (i, &li) in node.locs.iter().enumerate() {
                    for (k, &lk) in node.locs.iter().enumerate() {
                        rbig[(li, lk)] = r[(i, k)];
                    }
                }
            }
            ResidualCov::Diag { var, .. } => {
                for (i, &li) in node.locs.iter().enumerate() {
                    rbig[(li, li)] = var[i];
                }
            }
        }
    }
    let inv = (DMatrix::<T>::identity(n, n) - hbig)
        .try_inverse()
        .expect("I − H̃ is unit-triangular under reordering, hence invertible");
    &inv * rbig * inv.transpose()
}

/// KL(N(μ0, Σ0) ‖ N(μ1, Σ1)), closed form.
pub fn gaussian_kl<T: Real>(
    mu0: &DVector<T>,
    sigma0: &DMatrix<T>,
    mu1: &DVector<T>,
    sigma1: &DMatrix<T>,
) -> T {
    let k = cast::<T>(mu0.len() as f64);
    let chol1 = Cholesky::new(sigma1.clone()).expect("sigma1 must be positive definite");
    let chol0 = Cholesky::new(sigma0.clone()).expect("sigma0 must be positive definite");
    let trace = chol1.solve(sigma0).trace();
    let diff = mu1 - mu0;
    let quad = diff.dot(&chol1.solve(&diff));
    let logdet_ratio = chol_logdet(&chol1) - chol_logdet(&chol0);
    cast::<T>(0.5) * (trace + quad - k + logdet_ratio)
}

/// Differential entropy of the conditional N-block `target | cond` inside
/// a joint Gaussian with covariance `sigma`:
/// `½ ln((2πe)^k |Σ_t − Σ_tc Σ_c⁻¹ Σ_ct|)`.
pub fn conditional_entropy<T: Real>(sigma: &DMatrix<T>, target: &[usize], cond: &[usize]) -> T {
    let pick = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| sigma[(rows[i], cols[j])])
    };
    let st = pick(target, target);
    let schur = if cond.is_empty() {
        st
    } else {
        let sc = pick(cond, cond);
        let stc = pick(target, cond);
        let chol = Cholesky::new(sc).expect("conditioning block must be positive definite");
        &st - &stc * chol.solve(&stc.transpose())
    };
    let chol = Cholesky::new(schur).expect("conditional covariance must be positive definite");
    let k = cast::<T>(target.len() as f64);
    let half = cast::<T>(0.5);
    half * (k * (T::two_pi() * T::e()).ln() + chol_logdet(&chol))
}

/// Divergences and entropies for the three ways of placing one extra
/// reference point on a root-with-two-children graph.
#[derive(Debug, Clone, Copy)]
pub struct PlacementCheck<T> {
    /// KL from the base law when the extra point joins the root subset.
    pub kl_root: T,
    /// … when it joins the first child's subset.
    pub kl_first: T,
    /// … when it joins the second child's subset.
    pub kl_second: T,
    /// Base-law conditional entropy of the extra point given the root and
    /// first-child subsets.
    pub entropy_given_first: T,
    /// … given the root and second-child subsets.
    pub entropy_given_second: T,
}

/// Measures the cost of reference-point placement. `locations` is laid out
/// `[root | first child | second child | extra point]` with the given block
/// sizes; for each of the three subsets the extra point could join, the
/// factorized law is built through the production pipeline and compared
/// against the dense base law by KL divergence.
///
/// Two facts should emerge: pushing the point down from the root never
/// shrinks the divergence (a larger root subset enlarges every child's
/// conditioning set), and between the two children the better host is the
/// one whose subset leaves the base process least uncertain about the
/// point — the KL gap between the child placements equals the entropy gap
/// exactly.
pub fn reference_placement_check<T: Real>(
    cov: &CovModel<T>,
    locations: &[ExpandedLocation<T>],
    n_root: usize,
    n_first: usize,
    n_second: usize,
) -> Result<PlacementCheck<T>> {
    let n = locations.len();
    assert_eq!(
        n_root + n_first + n_second + 1,
        n,
        "block sizes must tile the list"
    );
    let star = n - 1;
    let idx = |from: usize, len: usize| (from..from + len).collect::<Vec<_>>();
    let root = idx(0, n_root);
    let first = idx(n_root, n_first);
    let second = idx(n_root + n_first, n_second);

    let law_cov = |host: usize| -> Result<DMatrix<T>> {
        let mut blocks = [root.clone(), first.clone(), second.clone()];
        blocks[host].push(star);
        let [b0, b1, b2] = blocks;
        let v0 = NodeId { level: 0, index: 0 };
        let spec = vec![
            (v0, NodeRole::Branch, vec![], b0),
            (
                NodeId { level: 1, index: 0 },
                NodeRole::Branch,
                vec![v0],
                b1,
            ),
            (
                NodeId { level: 1, index: 1 },
                NodeRole::Branch,
                vec![v0],
                b2,
            ),
        ];
        let dag = TreedDag::from_parts(
            locations.to_vec(),
            vec![true; n],
            spec,
            1,
            BuildDiagnostics::default(),
        )?;
        let fs = FactorSet::build(&dag, cov)?;
        Ok(densify_cov(&dag, &fs))
    };

    let all: Vec<usize> = (0..n).collect();
    let base = cov.square(locations, &all);
    let mu = DVector::zeros(n);
    // Divergence measured under the base law: E_base[log(base/approx)].
    let kl = |sigma: &DMatrix<T>| gaussian_kl(&mu, &base, &mu, sigma);

    let cond = |extra: &[usize]| {
        let mut c = root.clone();
        c.extend_from_slice(extra);
        conditional_entropy(&base, &[star], &c)
    };
    Ok(PlacementCheck {
        kl_root: kl(&law_cov(0)?),
        kl_first: kl(&law_cov(1)?),
        kl_second: kl(&law_cov(2)?),
        entropy_given_first: cond(&first),
        entropy_given_second: cond(&second),
    })
}

/// Largest discrepancy the factorized law shows under a relabeling of the
/// location list: the graph is rebuilt with every ordinal sent through
/// `perm` (position `k` of the new list holds old ordinal `perm[k]`), and
/// both the log density at a matched point and the full dense covariance
/// must agree after index alignment.
pub fn permutation_gap<T: Real>(
    dag: &TreedDag<T>,
    cov: &CovModel<T>,
    perm: &[usize],
    w: &DVector<T>,
) -> Result<T> {
    let n = dag.n_locations();
    assert_eq!(perm.len(), n, "permutation must cover every location");
    let mut inv = vec![0usize; n];
    for (k, &o) in perm.iter().enumerate() {
        inv[o] = k;
    }
    let locations: Vec<ExpandedLocation<T>> =
        perm.iter().map(|&o| dag.location(o).clone()).collect();
    let observed: Vec<bool> = perm.iter().map(|&o| dag.observed(o)).collect();
    let spec = dag
        .nodes()
        .iter()
        .map(|node| {
            let parents = node.parents.iter().map(|&p| dag.node(p).id).collect();
            let locs = node.locs.iter().map(|&o| inv[o]).collect();
            (node.id, node.role, parents, locs)
        })
        .collect();
    let relabeled = TreedDag::from_parts(
        locations,
        observed,
        spec,
        dag.depth(),
        BuildDiagnostics::default(),
    )?;

    let fs = FactorSet::build(dag, cov)?;
    let fs_r = FactorSet::build(&relabeled, cov)?;
    let w_r = DVector::from_fn(n, |k, _| w[perm[k]]);
    let mut gap = (fs_r.log_prior_w(&relabeled, &w_r) - fs.log_prior_w(dag, w)).abs();

    let sigma = densify_cov(dag, &fs);
    let sigma_r = densify_cov(&relabeled, &fs_r);
    for a in 0..n {
        for b in 0..n {
            gap = gap.max((sigma_r[(a, b)] - sigma[(perm[a], perm[b])]).abs());
        }
    }
    Ok(gap)
}

/// Largest discrepancy between the factorized law over the original
/// locations and the law obtained by adjoining `extra` as a new leaf point
/// and then integrating it back out (for a Gaussian: dropping its row and
/// column of the dense joint).
pub fn marginalization_gap<T: Real>(
    dag: &TreedDag<T>,
    cov: &CovModel<T>,
    extra: ExpandedLocation<T>,
) -> Result<T> {
    let n = dag.n_locations();
    let sigma = densify_cov(dag, &FactorSet::build(dag, cov)?);
    let extended = dag.with_extra_leaves(vec![extra])?;
    let sigma1 = densify_cov(&extended, &FactorSet::build(&extended, cov)?);
    let mut gap = T::zero();
    for a in 0..n {
        for b in 0..n {
            gap = gap.max((sigma1[(a, b)] - sigma[(a, b)]).abs());
        }
    }
    Ok(gap)
}

/// Posterior mean and covariance of a latent Gaussian field with prior
/// N(0, `prior_cov`) observed through `obs = (ordinal, noise variance,
/// centered observation)` rows — the dense conjugate formula.
pub fn latent_posterior_dense<T: Real>(
    prior_cov: &DMatrix<T>,
    obs: &[(usize, T, T)],
) -> (DVector<T>, DMatrix<T>) {
    let n = prior_cov.nrows();
    let prior_chol = Cholesky::new(prior_cov.clone()).expect("prior covariance must be PD");
    let mut prec = prior_chol.inverse();
    let mut rhs = DVector::zeros(n);
    for &(l, tau2, y) in obs {
        prec[(l, l)] += T::one() / tau2;
        rhs[l] += y / tau2;
    }
    let post_chol = Cholesky::new(prec).expect("posterior precision must be PD");
    let cov = post_chol.inverse();
    let mean = &cov * rhs;
    (mean, cov)
}

/// Energy distance between two samples of vectors:
/// `2 E‖X−Y‖ − E‖X−X'‖ − E‖Y−Y'‖` (biased V-statistic form).
pub fn energy_distance<T: Real>(xs: &[DVector<T>], ys: &[DVector<T>]) -> T {
    let mean_cross = |a: &[DVector<T>], b: &[DVector<T>]| -> T {
        let mut acc = T::zero();
        for x in a {
            for y in b {
                acc += (x - y).norm();
            }
        }
        acc / cast::<T>((a.len() * b.len()) as f64)
    };
    let two = cast::<T>(2.0);
    two * mean_cross(xs, ys) - mean_cross(xs, xs) - mean_cross(ys, ys)
}

/// Permutation test on the energy distance: the p-value is the fraction of
/// label shuffles whose statistic is at least the observed one. Seeded and
/// deterministic.
pub fn energy_permutation_pvalue<T: Real>(
    xs: &[DVector<T>],
    ys: &[DVector<T>],
    n_perm: usize,
    seed: u64,
) -> f64 {
    let observed = energy_distance(xs, ys);
    let pool: Vec<&DVector<T>> = xs.iter().chain(ys.iter()).collect();
    let nx = xs.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut ge = 1usize; // count the observed split itself
    let mut order: Vec<usize> = (0..pool.len()).collect();
    for _ in 0..n_perm {
        order.shuffle(&mut rng);
        let a: Vec<DVector<T>> = order[..nx].iter().map(|&i| pool[i].clone()).collect();
        let b: Vec<DVector<T>> = order[nx..].iter().map(|&i| pool[i].clone()).collect();
        if energy_distance(&a, &b) >= observed {
            ge += 1;
        }
    }
    ge as f64 / (n_perm + 1) as f64
}
