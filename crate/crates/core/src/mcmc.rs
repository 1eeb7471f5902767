//! Posterior sampling: blocked Gibbs over latent nodes, conjugate updates
//! for regression coefficients and noise variances, and an adaptive
//! Metropolis step for the covariance parameters.
//!
//! The latent field is updated one node at a time from its full
//! conditional
//!
//! ```text
//! Σ_i⁻¹ = Z_iᵀ D⁻¹ Z_i + R_i⁻¹ + Σ_{j∈ch(i)} H_{i→j}ᵀ R_j⁻¹ H_{i→j}
//! rhs   = Z_iᵀ D⁻¹ ỹ_i + R_i⁻¹ H_i w_[i]
//!       + Σ_{j∈ch(i)} H_{i→j}ᵀ R_j⁻¹ w_j
//!       − Σ_{g} ( Σ_{j∈ch(i)∩ch(g)} H_{i→j}ᵀ R_j⁻¹ H_{g→j} ) w_g,
//! ```
//!
//! where the child sums are carried by per-edge message slots (refreshed
//! whenever a node's value changes) and the co-parent couplings come from
//! the same routine that assembles the precision matrix. Nodes inside one
//! sweep phase share no edges and no children, so a phase runs as a
//! parallel map into staging buffers followed by a deterministic
//! sequential merge — the sampled chain is bit-identical for any thread
//! count.
//!
//! Randomness is split into one stream per node (stream `k+1` drives node
//! `k`'s standard normals, exactly `n_k` per sweep) plus a chain-global
//! stream 0 for everything sequential: initialization, β, τ², and the
//! covariance-parameter walk.
//!
//! Three modes for the covariance parameters θ:
//!
//! * **Fixed** — θ never moves.
//! * **LatentPrior** (default) — Metropolis on p(θ | w) ∝ p(w | θ) p(θ),
//!   evaluating the factorized prior density of the current field.
//! * **Integrated** — Metropolis on p(θ | y, β, τ²) with w collapsed out;
//!   the Gaussian marginal is computed through the block-sparse
//!   factorization of `Λ + ZᵀD⁻¹Z`, and w is redrawn exactly from its
//!   joint conditional each sweep. Quadratic in memory on dense node
//!   pairs, so guarded by a location cap, and rows must not link
//!   locations across different nodes.
//!
//! Priors: β_j ~ N(0, v_β I) per margin, τ_j² ~ InvGamma(a_τ, b_τ), and
//! independent normals on the *unconstrained* scale of each free θ
//! coordinate (log for positive parameters, log-odds for the separation
//! exponent, identity for signed amplitudes) — no Jacobian terms, the
//! prior is declared on the transformed scale.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::covariance::{CovModel, Theta, TransformKind};
use crate::error::{Error, Result};
use crate::factors::{gather, gather_parents, FactorSet, ResidualCov};
use crate::linalg::{cholesky_jittered, solve_lower_transpose};
use crate::precision::{assemble, coupling_blocks, BlockLdl, BlockSparse};
use crate::ram::RamAdapter;
use crate::scalar::{cast, Real};
use crate::treegraph::TreedDag;

// ──────────────────────────────────────────────────────────────────────────
// Data
// ──────────────────────────────────────────────────────────────────────────

/// One observation row: a response value tied to one or more latent
/// locations with fixed coefficients (almost always a single location with
/// coefficient 1), plus the margin whose β and τ² apply.
#[derive(Debug, Clone)]
pub struct ObsRow<T> {
    pub targets: Vec<(usize, T)>,
    pub y: T,
    pub margin: usize,
}

/// A row's footprint inside one node: which in-node positions it loads on.
#[derive(Debug, Clone)]
struct RowLink<T> {
    row: usize,
    inside: Vec<(usize, T)>,
}

/// Model data: the graph, covariates, and observation rows, with the
/// cross-indexes the sweep needs.
#[derive(Debug, Clone)]
pub struct ModelData<T: Real> {
    pub dag: TreedDag<T>,
    /// Covariates, one row per observation row (may have zero columns).
    pub x: DMatrix<T>,
    pub rows: Vec<ObsRow<T>>,
    node_rows: Vec<Vec<RowLink<T>>>,
    /// Per node: `(child ordinal, index of this node in the child's parents)`.
    children_pos: Vec<Vec<(usize, usize)>>,
    margin_rows: Vec<Vec<usize>>,
    xtx_margin: Vec<DMatrix<T>>,
    /// Nodes whose conditional stays diagonal (leaves with one-target rows).
    diag_ok: Vec<bool>,
    /// Nodes touched by rows that link across nodes; these are updated in
    /// singleton phases so no concurrent neighbor reads a stale value.
    linked_nodes: Vec<usize>,
}

impl<T: Real> ModelData<T> {
    pub fn new(dag: TreedDag<T>, x: DMatrix<T>, rows: Vec<ObsRow<T>>) -> Result<Self> {
        if x.nrows() != rows.len() {
            return Err(Error::BlockMismatch(format!(
                "{} covariate rows for {} observation rows",
                x.nrows(),
                rows.len()
            )));
        }
        let q = dag.n_vars();
        let n = dag.n_locations();
        for (r, row) in rows.iter().enumerate() {
            if row.targets.is_empty() {
                return Err(Error::InvalidParameter(format!("row {r} has no targets")));
            }
            if row.margin >= q {
                return Err(Error::InvalidParameter(format!(
                    "row {r} names margin {} of {q}",
                    row.margin
                )));
            }
            if !row.y.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "row {r} has a non-finite response"
                )));
            }
            for &(l, c) in &row.targets {
                if l >= n {
                    return Err(Error::InvalidParameter(format!(
                        "row {r} targets location ordinal {l} of {n}"
                    )));
                }
                if !c.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "row {r} has a non-finite coefficient"
                    )));
                }
            }
        }

        let nn = dag.n_nodes();
        let mut node_rows: Vec<Vec<RowLink<T>>> = vec![Vec::new(); nn];
        let mut linked = std::collections::BTreeSet::new();
        for (r, row) in rows.iter().enumerate() {
            let mut per_node: std::collections::BTreeMap<usize, Vec<(usize, T)>> =
                std::collections::BTreeMap::new();
            for &(l, c) in &row.targets {
                let node = dag.node_of(l);
                let pos = dag.node(node).locs.iter().position(|&x| x == l).unwrap();
                per_node.entry(node).or_default().push((pos, c));
            }
            if per_node.len() > 1 {
                linked.extend(per_node.keys().copied());
            }
            for (node, inside) in per_node {
                node_rows[node].push(RowLink { row: r, inside });
            }
        }
        let mut children_pos: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nn];
        for j in 0..nn {
            for (k, &p) in dag.node(j).parents.iter().enumerate() {
                children_pos[p].push((j, k));
            }
        }
        let mut margin_rows: Vec<Vec<usize>> = vec![Vec::new(); q];
        for (r, row) in rows.iter().enumerate() {
            margin_rows[row.margin].push(r);
        }
        let p = x.ncols();
        let xtx_margin: Vec<DMatrix<T>> = (0..q)
            .map(|m| {
                let mut acc = DMatrix::zeros(p, p);
                for &r in &margin_rows[m] {
                    let xr = x.row(r);
                    acc += xr.transpose() * xr;
                }
                acc
            })
            .collect();
        let diag_ok: Vec<bool> = (0..nn)
            .map(|ord| {
                dag.node(ord).children.is_empty()
                    && node_rows[ord].iter().all(|l| l.inside.len() == 1)
            })
            .collect();
        Ok(Self {
            dag,
            x,
            rows,
            node_rows,
            children_pos,
            margin_rows,
            xtx_margin,
            diag_ok,
            linked_nodes: linked.into_iter().collect(),
        })
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_margins(&self) -> usize {
        self.dag.n_vars()
    }
}

// ──────────────────────────────────────────────────────────────────────────
// Configuration and outputs
// ──────────────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaMode {
    Fixed,
    LatentPrior,
    Integrated,
}

#[derive(Debug, Clone)]
pub struct Priors<T> {
    pub beta_var: T,
    pub tau2_shape: T,
    pub tau2_rate: T,
    /// Standard deviation of the N(0, ·) prior on each unconstrained θ
    /// coordinate.
    pub theta_sd: T,
}

#[derive(Debug, Clone)]
pub struct ChainConfig<T> {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub mode: ThetaMode,
    /// Also sample the separation scale/exponent (α, β). Off by default;
    /// with a single variable they are always held fixed (nothing in the
    /// kernel identifies them).
    pub sample_alpha_beta: bool,
    pub ram_scale: T,
    pub priors: Priors<T>,
    /// Hard location cap for the integrated mode.
    pub integrated_cap: usize,
    pub keep_w: bool,
}

impl<T: Real> Default for ChainConfig<T> {
    fn default() -> Self {
        Self {
            sweeps: 1000,
            burn_in: 200,
            thin: 1,
            seed: 42,
            mode: ThetaMode::LatentPrior,
            sample_alpha_beta: false,
            ram_scale: cast(0.1),
            priors: Priors {
                beta_var: cast(100.0),
                tau2_shape: cast(2.0),
                tau2_rate: cast(1.0),
                theta_sd: cast(1.5),
            },
            integrated_cap: 600,
            keep_w: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainState<T: Real> {
    pub w: DVector<T>,
    /// p × q, one column of coefficients per margin.
    pub beta: DMatrix<T>,
    pub tau2: DVector<T>,
    pub theta: Theta<T>,
}

#[derive(Debug, Clone, Default)]
pub struct ChainDiagnostics {
    pub theta_proposals: usize,
    pub theta_accepts: usize,
    /// Proposals rejected outright because the implied covariance was
    /// invalid or numerically non-PD.
    pub theta_nonpd_rejects: usize,
    pub max_jitter: f64,
}

impl ChainDiagnostics {
    pub fn acceptance_rate(&self) -> f64 {
        if self.theta_proposals == 0 {
            0.0
        } else {
            self.theta_accepts as f64 / self.theta_proposals as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainOutput<T: Real> {
    pub w_draws: Vec<DVector<T>>,
    pub beta_draws: Vec<DMatrix<T>>,
    pub tau2_draws: Vec<DVector<T>>,
    pub theta_draws: Vec<Theta<T>>,
    pub diagnostics: ChainDiagnostics,
    pub final_state: ChainState<T>,
}

// ──────────────────────────────────────────────────────────────────────────
// θ-dependent caches
// ──────────────────────────────────────────────────────────────────────────

/// Everything derived from θ that the sweeps reuse.
struct NodeCache<T: Real> {
    factors: FactorSet<T>,
    /// Child information matrices `F_i = Σ_j H_{i→j}ᵀ R_j⁻¹ H_{i→j}`.
    f: Vec<Option<DMatrix<T>>>,
    /// Co-parent couplings per node: `(g, G_{ig})`.
    couplings: Vec<Vec<(usize, DMatrix<T>)>>,
    /// `R_i⁻¹ H_i` per node.
    rinv_h: Vec<DMatrix<T>>,
}

impl<T: Real> NodeCache<T> {
    fn build(dag: &TreedDag<T>, cov: CovModel<T>) -> Result<Self> {
        let factors = FactorSet::build(dag, &cov)?;
        let nn = dag.n_nodes();
        let mut f: Vec<Option<DMatrix<T>>> = vec![None; nn];
        let mut coup: std::collections::BTreeMap<(usize, usize), DMatrix<T>> =
            std::collections::BTreeMap::new();
        for k in 0..nn {
            let node = dag.node(k);
            let fk = factors.node(k);
            for (a, &p) in node.parents.iter().enumerate() {
                let ha = fk.h_block(a);
                let rinv_ha = fk.r.premul_inv(&ha);
                let contrib = ha.tr_mul(&rinv_ha);
                match &mut f[p] {
                    Some(m) => *m += contrib,
                    slot => *slot = Some(contrib),
                }
            }
            for (p, g, block) in coupling_blocks(dag, &factors, k) {
                let t = block.transpose();
                coup.entry((p, g))
                    .and_modify(|m| *m += &block)
                    .or_insert(block);
                coup.entry((g, p)).and_modify(|m| *m += &t).or_insert(t);
            }
        }
        let mut couplings: Vec<Vec<(usize, DMatrix<T>)>> = vec![Vec::new(); nn];
        for ((i, g), block) in coup {
            couplings[i].push((g, block));
        }
        let rinv_h: Vec<DMatrix<T>> = (0..nn)
            .map(|k| factors.node(k).r.premul_inv(&factors.node(k).h))
            .collect();
        Ok(Self {
            factors,
            f,
            couplings,
            rinv_h,
        })
    }

    /// All child→parent messages `H_{p→j}ᵀ R_j⁻¹ w_j` for one node.
    fn slots_for(&self, dag: &TreedDag<T>, j: usize, wj: &DVector<T>) -> Vec<DVector<T>> {
        let fj = self.factors.node(j);
        let scaled = self.rinv_h[j].tr_mul(wj); // Hᵀ R⁻¹ w over the whole parent span
        dag.node(j)
            .parents
            .iter()
            .enumerate()
            .map(|(k, _)| {
                let (a, b) = (fj.parent_offsets[k], fj.parent_offsets[k + 1]);
                scaled.rows(a, b - a).into_owned()
            })
            .collect()
    }
}

// ──────────────────────────────────────────────────────────────────────────
// Unconstrained θ coordinates
// ──────────────────────────────────────────────────────────────────────────

fn free_indices(q: usize, sample_alpha_beta: bool) -> Vec<usize> {
    let total = Theta::<f64>::n_params(q);
    let mut free: Vec<usize> = (0..total).collect();
    if q == 1 || !sample_alpha_beta {
        // α and β sit at positions total−3 and total−2.
        free.retain(|&i| i != total - 3 && i != total - 2);
    }
    free
}

fn to_unconstrained<T: Real>(theta: &Theta<T>, free: &[usize]) -> DVector<T> {
    let flat = theta.flatten();
    let kinds = Theta::<T>::transform_kinds(theta.n_vars());
    DVector::from_fn(free.len(), |k, _| {
        let i = free[k];
        match kinds[i] {
            TransformKind::Identity => flat[i],
            TransformKind::Log => flat[i].ln(),
            TransformKind::Logit => (flat[i] / (T::one() - flat[i])).ln(),
        }
    })
}

fn apply_unconstrained<T: Real>(
    base: &Theta<T>,
    free: &[usize],
    v: &DVector<T>,
) -> Result<Theta<T>> {
    let mut flat = base.flatten();
    let kinds = Theta::<T>::transform_kinds(base.n_vars());
    for (k, &i) in free.iter().enumerate() {
        flat[i] = match kinds[i] {
            TransformKind::Identity => v[k],
            TransformKind::Log => v[k].exp(),
            TransformKind::Logit => T::one() / (T::one() + (-v[k]).exp()),
        };
    }
    Theta::unflatten(base.n_vars(), &flat)
}

fn log_prior_unconstrained<T: Real>(v: &DVector<T>, sd: T) -> T {
    let half = cast::<T>(0.5);
    let mut acc = T::zero();
    for &x in v.iter() {
        acc -= half * (x / sd) * (x / sd) + sd.ln() + half * T::two_pi().ln();
    }
    acc
}

// ──────────────────────────────────────────────────────────────────────────
// Node update
// ──────────────────────────────────────────────────────────────────────────

struct NodeStage<T: Real> {
    w: DVector<T>,
    slots: Vec<DVector<T>>,
    jitter: T,
}

/// Samples one node from its full conditional. Consumes exactly `n_i`
/// standard normals from `rng` on every call.
#[allow(clippy::too_many_arguments)]
fn sample_node<T: Real>(
    ord: usize,
    data: &ModelData<T>,
    cache: &NodeCache<T>,
    w: &DVector<T>,
    beta: &DMatrix<T>,
    tau2: &DVector<T>,
    slots: &[Vec<DVector<T>>],
    rng: &mut ChaCha20Rng,
) -> Result<NodeStage<T>> {
    let dag = &data.dag;
    let node = dag.node(ord);
    let n_i = node.locs.len();
    let f = cache.factors.node(ord);

    // Right-hand side: prior mean pull, child messages, co-parent
    // corrections, then the data term.
    let mut rhs = if node.parents.is_empty() {
        DVector::zeros(n_i)
    } else {
        &cache.rinv_h[ord] * gather_parents(dag, ord, w)
    };
    for &(child, pos) in &data.children_pos[ord] {
        rhs += &slots[child][pos];
    }
    for (g, block) in &cache.couplings[ord] {
        rhs -= block * gather(w, &dag.node(*g).locs);
    }

    let centered = |link: &RowLink<T>| -> T {
        let row = &data.rows[link.row];
        let mut resid = row.y;
        for c in 0..data.x.ncols() {
            resid -= data.x[(link.row, c)] * beta[(c, row.margin)];
        }
        for &(l, cf) in &row.targets {
            if dag.node_of(l) != ord {
                resid -= cf * w[l];
            }
        }
        resid
    };

    if data.diag_ok[ord] {
        if let ResidualCov::Diag { var, .. } = &f.r {
            // Leaf fast path: everything stays per-location scalar.
            let mut prec = DVector::from_fn(n_i, |i, _| T::one() / var[i]);
            for link in &data.node_rows[ord] {
                let (pos, cf) = link.inside[0];
                let d = tau2[data.rows[link.row].margin];
                prec[pos] += cf * cf / d;
                rhs[pos] += cf * centered(link) / d;
            }
            let mut new_w = DVector::zeros(n_i);
            for i in 0..n_i {
                let eps = T::std_normal(rng);
                new_w[i] = rhs[i] / prec[i] + eps / prec[i].sqrt();
            }
            let slots = cache.slots_for(dag, ord, &new_w);
            return Ok(NodeStage {
                w: new_w,
                slots,
                jitter: T::zero(),
            });
        }
    }

    let mut prec = f.r.inv_dense();
    if let Some(fi) = &cache.f[ord] {
        prec += fi;
    }
    for link in &data.node_rows[ord] {
        let d = tau2[data.rows[link.row].margin];
        let resid = centered(link);
        for &(pa, ca) in &link.inside {
            rhs[pa] += ca * resid / d;
            for &(pb, cb) in &link.inside {
                prec[(pa, pb)] += ca * cb / d;
            }
        }
    }
    let (chol, jitter) =
        cholesky_jittered(&prec, &format!("conditional precision of node {}", node.id))?;
    let mean = chol.solve(&rhs);
    let eps = DVector::from_fn(n_i, |_, _| T::std_normal(rng));
    let new_w = &mean + solve_lower_transpose(chol.l_dirty(), &eps);
    let slots = cache.slots_for(dag, ord, &new_w);
    Ok(NodeStage {
        w: new_w,
        slots,
        jitter,
    })
}

// ──────────────────────────────────────────────────────────────────────────
// Conjugate updates
// ──────────────────────────────────────────────────────────────────────────

fn residual_without_x<T: Real>(data: &ModelData<T>, w: &DVector<T>, r: usize) -> T {
    let row = &data.rows[r];
    let mut resid = row.y;
    for &(l, c) in &row.targets {
        resid -= c * w[l];
    }
    resid
}

fn gibbs_beta<T: Real>(
    data: &ModelData<T>,
    w: &DVector<T>,
    tau2: &DVector<T>,
    beta_var: T,
    rng: &mut ChaCha20Rng,
) -> Result<DMatrix<T>> {
    let p = data.x.ncols();
    let q = data.n_margins();
    let mut beta = DMatrix::zeros(p, q);
    if p == 0 {
        return Ok(beta);
    }
    for m in 0..q {
        let mut prec = &data.xtx_margin[m] / tau2[m];
        for i in 0..p {
            prec[(i, i)] += T::one() / beta_var;
        }
        let mut xte = DVector::zeros(p);
        for &r in &data.margin_rows[m] {
            let e = residual_without_x(data, w, r);
            for c in 0..p {
                xte[c] += data.x[(r, c)] * e;
            }
        }
        let (chol, _) = cholesky_jittered(&prec, "coefficient posterior precision")?;
        let mean = chol.solve(&(xte / tau2[m]));
        let eps = DVector::from_fn(p, |_, _| T::std_normal(rng));
        beta.set_column(m, &(&mean + solve_lower_transpose(chol.l_dirty(), &eps)));
    }
    Ok(beta)
}

fn gibbs_tau2<T: Real>(
    data: &ModelData<T>,
    w: &DVector<T>,
    beta: &DMatrix<T>,
    shape0: T,
    rate0: T,
    rng: &mut ChaCha20Rng,
) -> DVector<T> {
    let q = data.n_margins();
    let half = cast::<T>(0.5);
    DVector::from_fn(q, |m, _| {
        let mut rate = rate0;
        for &r in &data.margin_rows[m] {
            let mut e = residual_without_x(data, w, r);
            for c in 0..data.x.ncols() {
                e -= data.x[(r, c)] * beta[(c, m)];
            }
            rate += half * e * e;
        }
        let shape = shape0 + half * cast::<T>(data.margin_rows[m].len() as f64);
        // τ² ~ InvGamma(shape, rate) via the reciprocal of a Gamma draw.
        T::one() / T::gamma_draw(rng, shape, T::one() / rate)
    })
}

// ──────────────────────────────────────────────────────────────────────────
// Integrated-mode marginal
// ──────────────────────────────────────────────────────────────────────────

struct IntegratedPieces<T: Real> {
    ldl: BlockLdl<T>,
    u: DVector<T>,
    loglik: T,
}

fn integrated_pieces<T: Real>(
    data: &ModelData<T>,
    cache: &NodeCache<T>,
    beta: &DMatrix<T>,
    tau2: &DVector<T>,
) -> Result<IntegratedPieces<T>> {
    let dag = &data.dag;
    let mut bs: BlockSparse<T> = assemble(dag, &cache.factors);
    let mut u = DVector::zeros(dag.n_locations());
    let half = cast::<T>(0.5);
    let mut quad_data = T::zero();
    let mut logdet_noise = T::zero();
    for (r, row) in data.rows.iter().enumerate() {
        let first_node = dag.node_of(row.targets[0].0);
        for &(l, _) in &row.targets[1..] {
            if dag.node_of(l) != first_node {
                return Err(Error::CrossNodeDesign {
                    row: r,
                    node_a: first_node,
                    node_b: dag.node_of(l),
                });
            }
        }
        let d = tau2[row.margin];
        let mut e = row.y;
        for c in 0..data.x.ncols() {
            e -= data.x[(r, c)] * beta[(c, row.margin)];
        }
        quad_data += e * e / d;
        logdet_noise += d.ln();
        for &(l, cf) in &row.targets {
            u[l] += cf * e / d;
        }
        // S = ZᵀD⁻¹Z lands inside one node by the check above.
        let node = first_node;
        let locs = &dag.node(node).locs;
        let inside: Vec<(usize, T)> = row
            .targets
            .iter()
            .map(|&(l, cf)| (locs.iter().position(|&x| x == l).unwrap(), cf))
            .collect();
        if inside.len() == 1 {
            let (pos, cf) = inside[0];
            let mut add = DVector::zeros(locs.len());
            add[pos] = cf * cf / d;
            bs.diag[node].add_diag(&add);
        } else {
            let mut add = DMatrix::zeros(locs.len(), locs.len());
            for &(pa, ca) in &inside {
                for &(pb, cb) in &inside {
                    add[(pa, pb)] += ca * cb / d;
                }
            }
            bs.diag[node].add_dense(&add);
        }
    }
    let ldl = BlockLdl::factor(&bs)?;
    let sol = ldl.solve(&u);
    let quad = quad_data - u.dot(&sol);
    // log|ZC̃Zᵀ + D| = log|Λ + S| − log|Λ| + log|D|, and log|Λ| is minus
    // the sum of residual log-determinants.
    let log_lambda: T = (0..dag.n_nodes())
        .map(|i| cache.factors.node(i).r.logdet())
        .sum::<T>();
    let logdet = ldl.logdet + log_lambda + logdet_noise;
    let n_rows = cast::<T>(data.rows.len() as f64);
    let loglik = -half * (quad + logdet + n_rows * T::two_pi().ln());
    Ok(IntegratedPieces { ldl, u, loglik })
}

/// Marginal log likelihood of the observations with the latent field
/// integrated out: `log N(y | Xβ, Z C̃ Zᵀ + D)`.
pub fn integrated_loglik<T: Real>(
    data: &ModelData<T>,
    theta: &Theta<T>,
    beta: &DMatrix<T>,
    tau2: &DVector<T>,
) -> Result<T> {
    let cov = CovModel::new(theta.clone())?;
    let cache = NodeCache::build(&data.dag, cov)?;
    Ok(integrated_pieces(data, &cache, beta, tau2)?.loglik)
}

// ──────────────────────────────────────────────────────────────────────────
// The chain
// ──────────────────────────────────────────────────────────────────────────

pub fn run_chain<T: Real>(
    data: &ModelData<T>,
    init_theta: Theta<T>,
    config: &ChainConfig<T>,
) -> Result<ChainOutput<T>> {
    init_theta.validate()?;
    if init_theta.n_vars() != data.n_margins() {
        return Err(Error::ModelMismatch(format!(
            "initial parameters cover {} variables, data has {}",
            init_theta.n_vars(),
            data.n_margins()
        )));
    }
    if config.sweeps > 0 && config.burn_in >= config.sweeps {
        return Err(Error::InvalidParameter(format!(
            "burn-in {} must be below the sweep count {}",
            config.burn_in, config.sweeps
        )));
    }
    if config.thin == 0 {
        return Err(Error::InvalidParameter(
            "thinning interval must be at least 1".into(),
        ));
    }
    if !(config.ram_scale > T::zero()) {
        return Err(Error::InvalidParameter(
            "proposal scale must be positive".into(),
        ));
    }
    if config.mode == ThetaMode::Integrated && data.dag.n_locations() > config.integrated_cap {
        return Err(Error::IntegratedCapExceeded {
            cap: config.integrated_cap,
            actual: data.dag.n_locations(),
        });
    }
    if config.sample_alpha_beta && data.n_margins() > 1 {
        let b = init_theta.beta;
        if !(b > T::zero() && b < T::one()) {
            return Err(Error::InvalidTheta(
                "sampling the separation exponent needs an interior starting value".into(),
            ));
        }
    }

    let dag = &data.dag;
    let nn = dag.n_nodes();
    let n = dag.n_locations();
    let q = data.n_margins();
    let p = data.n_covariates();

    // Phases: graph coloring, with any cross-node-linked targets peeled
    // into their own sequential phases.
    let mut phases = dag.sampling_phases();
    if !data.linked_nodes.is_empty() {
        let linked: std::collections::BTreeSet<usize> = data.linked_nodes.iter().copied().collect();
        for phase in &mut phases {
            phase.retain(|o| !linked.contains(o));
        }
        phases.retain(|p| !p.is_empty());
        for &o in &data.linked_nodes {
            phases.push(vec![o]);
        }
    }
    let mut phase_mask: Vec<Vec<bool>> = Vec::with_capacity(phases.len());
    for phase in &phases {
        let mut mask = vec![false; nn];
        for &o in phase {
            mask[o] = true;
        }
        phase_mask.push(mask);
    }

    // RNG plumbing: stream 0 is chain-global, stream k+1 drives node k.
    let mut global = ChaCha20Rng::seed_from_u64(config.seed);
    global.set_stream(0);
    let mut node_rngs: Vec<ChaCha20Rng> = (0..nn)
        .map(|k| {
            let mut r = ChaCha20Rng::seed_from_u64(config.seed);
            r.set_stream(k as u64 + 1);
            r
        })
        .collect();

    let mut state = ChainState {
        w: DVector::zeros(n),
        beta: DMatrix::zeros(p, q),
        tau2: DVector::from_element(q, T::one()),
        theta: init_theta,
    };
    let mut cache = NodeCache::build(dag, CovModel::new(state.theta.clone())?)?;
    let mut slots: Vec<Vec<DVector<T>>> = (0..nn)
        .map(|j| cache.slots_for(dag, j, &gather(&state.w, &dag.node(j).locs)))
        .collect();

    let free = free_indices(q, config.sample_alpha_beta);
    let mut ram = RamAdapter::new(free.len(), config.ram_scale, cast(0.234));
    let mut diagnostics = ChainDiagnostics {
        max_jitter: cache.factors.max_jitter.to_f64().unwrap_or(0.0),
        ..Default::default()
    };

    let kept = (config.sweeps - config.burn_in).div_ceil(config.thin);
    let mut out = ChainOutput {
        w_draws: Vec::with_capacity(if config.keep_w { kept } else { 0 }),
        beta_draws: Vec::with_capacity(kept),
        tau2_draws: Vec::with_capacity(kept),
        theta_draws: Vec::with_capacity(kept),
        diagnostics: ChainDiagnostics::default(),
        final_state: state.clone(),
    };

    let mut staging: Vec<Option<Result<NodeStage<T>>>> = (0..nn).map(|_| None).collect();

    for sweep in 0..config.sweeps {
        match config.mode {
            ThetaMode::Integrated => {
                // Exact joint redraw of the latent field.
                let pieces = integrated_pieces(data, &cache, &state.beta, &state.tau2)?;
                let mean = pieces.ldl.solve(&pieces.u);
                let noise = sample_field_noise(dag, &pieces.ldl, &mut node_rngs);
                state.w = mean + noise;
            }
            _ => {
                for mask in &phase_mask {
                    let w_ref = &state.w;
                    let slots_ref = &slots;
                    let beta_ref = &state.beta;
                    let tau2_ref = &state.tau2;
                    let cache_ref = &cache;
                    node_rngs
                        .par_iter_mut()
                        .zip(staging.par_iter_mut())
                        .enumerate()
                        .for_each(|(ord, (rng, slot))| {
                            if mask[ord] {
                                *slot = Some(sample_node(
                                    ord, data, cache_ref, w_ref, beta_ref, tau2_ref, slots_ref, rng,
                                ));
                            }
                        });
                    for ord in 0..nn {
                        if !mask[ord] {
                            continue;
                        }
                        let stage = staging[ord].take().expect("phase filled its slots")?;
                        for (i, &l) in dag.node(ord).locs.iter().enumerate() {
                            state.w[l] = stage.w[i];
                        }
                        slots[ord] = stage.slots;
                        let j = stage.jitter.to_f64().unwrap_or(0.0);
                        if j > diagnostics.max_jitter {
                            diagnostics.max_jitter = j;
                        }
                    }
                }
            }
        }

        state.beta = gibbs_beta(
            data,
            &state.w,
            &state.tau2,
            config.priors.beta_var,
            &mut global,
        )?;
        state.tau2 = gibbs_tau2(
            data,
            &state.w,
            &state.beta,
            config.priors.tau2_shape,
            config.priors.tau2_rate,
            &mut global,
        );

        if config.mode != ThetaMode::Fixed {
            theta_step(
                data,
                config,
                &free,
                &mut state,
                &mut cache,
                &mut slots,
                &mut ram,
                &mut global,
                &mut node_rngs,
                &mut diagnostics,
            )?;
        }

        if sweep >= config.burn_in && (sweep - config.burn_in).is_multiple_of(config.thin) {
            if config.keep_w {
                out.w_draws.push(state.w.clone());
            }
            out.beta_draws.push(state.beta.clone());
            out.tau2_draws.push(state.tau2.clone());
            out.theta_draws.push(state.theta.clone());
        }
    }

    out.diagnostics = diagnostics;
    out.final_state = state;
    Ok(out)
}

/// Draws N(0, (Λ+S)⁻¹) noise with the per-node streams, in ordinal order.
fn sample_field_noise<T: Real>(
    dag: &TreedDag<T>,
    ldl: &BlockLdl<T>,
    node_rngs: &mut [ChaCha20Rng],
) -> DVector<T> {
    let mut eps = DVector::zeros(dag.n_locations());
    for (j, rng) in node_rngs.iter_mut().enumerate() {
        for &l in &dag.node(j).locs {
            eps[l] = T::std_normal(rng);
        }
    }
    ldl.sample_from_noise(&eps)
}

#[allow(clippy::too_many_arguments)]
fn theta_step<T: Real>(
    data: &ModelData<T>,
    config: &ChainConfig<T>,
    free: &[usize],
    state: &mut ChainState<T>,
    cache: &mut NodeCache<T>,
    slots: &mut [Vec<DVector<T>>],
    ram: &mut RamAdapter<T>,
    global: &mut ChaCha20Rng,
    node_rngs: &mut [ChaCha20Rng],
    diagnostics: &mut ChainDiagnostics,
) -> Result<()> {
    let dag = &data.dag;
    let cur_v = to_unconstrained(&state.theta, free);
    let cur_target = match config.mode {
        ThetaMode::LatentPrior => {
            cache.factors.log_prior_w(dag, &state.w)
                + log_prior_unconstrained(&cur_v, config.priors.theta_sd)
        }
        ThetaMode::Integrated => {
            integrated_pieces(data, cache, &state.beta, &state.tau2)?.loglik
                + log_prior_unconstrained(&cur_v, config.priors.theta_sd)
        }
        ThetaMode::Fixed => unreachable!("fixed mode never proposes"),
    };

    diagnostics.theta_proposals += 1;
    let (dx, u) = ram.propose(global);
    let prop_v = &cur_v + dx;
    let prop_theta = match apply_unconstrained(&state.theta, free, &prop_v) {
        Ok(t) if t.validate().is_ok() => t,
        _ => {
            diagnostics.theta_nonpd_rejects += 1;
            ram.adapt(&u, T::zero());
            return Ok(());
        }
    };
    let built = CovModel::new(prop_theta.clone()).and_then(|cov| NodeCache::build(dag, cov));
    let new_cache = match built {
        Ok(c) => c,
        Err(_) => {
            diagnostics.theta_nonpd_rejects += 1;
            ram.adapt(&u, T::zero());
            return Ok(());
        }
    };
    let prop_target = match config.mode {
        ThetaMode::LatentPrior => {
            new_cache.factors.log_prior_w(dag, &state.w)
                + log_prior_unconstrained(&prop_v, config.priors.theta_sd)
        }
        ThetaMode::Integrated => {
            match integrated_pieces(data, &new_cache, &state.beta, &state.tau2) {
                Ok(p) => p.loglik + log_prior_unconstrained(&prop_v, config.priors.theta_sd),
                Err(_) => {
                    diagnostics.theta_nonpd_rejects += 1;
                    ram.adapt(&u, T::zero());
                    return Ok(());
                }
            }
        }
        ThetaMode::Fixed => unreachable!(),
    };

    let log_alpha = prop_target - cur_target;
    let alpha = if log_alpha >= T::zero() {
        T::one()
    } else {
        log_alpha.exp()
    };
    let accept = {
        let draw: T = global.gen_range(T::zero()..T::one());
        draw < alpha
    };
    if accept {
        diagnostics.theta_accepts += 1;
        state.theta = prop_theta;
        *cache = new_cache;
        let mj = cache.factors.max_jitter.to_f64().unwrap_or(0.0);
        if mj > diagnostics.max_jitter {
            diagnostics.max_jitter = mj;
        }
        if config.mode == ThetaMode::Integrated {
            // Refresh the field under the accepted parameters so stored
            // draws stay coherent.
            let pieces = integrated_pieces(data, cache, &state.beta, &state.tau2)?;
            let mean = pieces.ldl.solve(&pieces.u);
            state.w = mean + sample_field_noise(dag, &pieces.ldl, node_rngs);
        } else {
            // Messages embed H and R of the accepted parameters.
            for (j, slot) in slots.iter_mut().enumerate() {
                *slot = cache.slots_for(dag, j, &gather(&state.w, &dag.node(j).locs));
            }
        }
    }
    ram.adapt(&u, alpha);
    Ok(())
}
