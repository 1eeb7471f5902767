//! Per-node Gaussian factors of the treed process.
//!
//! Conditioned on its parent set, node `j`'s latent vector is
//!
//! ```text
//! w_j | w_[j]  ~  N(H_j w_[j], R_j),    H_j = C_{j,[j]} C_[j]⁻¹,
//!                                       R_j = C_j − H_j C_{[j],j},
//! ```
//!
//! with `C` the base cross-covariance. Branch nodes keep a dense residual
//! covariance; leaf locations are conditionally independent given their
//! parents, so a leaf's residual is diagonal.
//!
//! The expensive object is `C_[j]⁻¹`. Because parent sets nest (a node's
//! parents are its deepest parent plus that parent's own parents), the
//! inverse comes from a 2×2 block-inverse extension of the deepest
//! parent's inverse instead of an O(J³) factorization per node:
//!
//! ```text
//! E_j = [ P + H_jᵀ R_j⁻¹ H_j   −H_jᵀ R_j⁻¹ ]      P = C_[j]⁻¹
//!       [     −R_j⁻¹ H_j           R_j⁻¹    ]
//! ```
//!
//! is exactly the inverse of the base covariance over `[S_[j]; S_j]`, so a
//! child whose parent set is `pa(j) ∪ {j}` reads it off directly. Graphs
//! whose parent sets do not nest (handmade shapes) fall back to a direct
//! factorization, which is fine at the sizes those graphs come in.
//!
//! [`FactorSet::induced_cov`] evaluates the marginal covariance the graph
//! actually implies between two locations — the quantity the model
//! approximates the base kernel with — by summing innovation contributions
//! over shared parent sets, or walking parent chains to a common ancestor
//! when the parent sets are disjoint.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, RowDVector};
use rand::Rng;

use crate::covariance::CovModel;
use crate::error::{Error, Result};
use crate::linalg::{chol_inverse, chol_logdet, cholesky_jittered, symmetrize};
use crate::scalar::{cast, Real};
use crate::treegraph::{ExpandedLocation, NodeRole, TreedDag};

/// Residual covariance of one node.
#[derive(Debug, Clone)]
pub enum ResidualCov<T: Real> {
    Dense {
        chol: Cholesky<T, Dyn>,
        inv: DMatrix<T>,
        logdet: T,
    },
    Diag {
        var: DVector<T>,
        logdet: T,
    },
}

impl<T: Real> ResidualCov<T> {
    pub fn logdet(&self) -> T {
        match self {
            Self::Dense { logdet, .. } | Self::Diag { logdet, .. } => *logdet,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Dense { inv, .. } => inv.nrows(),
            Self::Diag { var, .. } => var.len(),
        }
    }

    /// `R⁻¹ m`.
    pub fn premul_inv(&self, m: &DMatrix<T>) -> DMatrix<T> {
        match self {
            Self::Dense { chol, .. } => chol.solve(m),
            Self::Diag { var, .. } => {
                let mut out = m.clone();
                for (r, &v) in var.iter().enumerate() {
                    for c in 0..out.ncols() {
                        out[(r, c)] /= v;
                    }
                }
                out
            }
        }
    }

    /// `R⁻¹ v`.
    pub fn solve_vec(&self, v: &DVector<T>) -> DVector<T> {
        match self {
            Self::Dense { chol, .. } => chol.solve(v),
            Self::Diag { var, .. } => DVector::from_fn(v.len(), |i, _| v[i] / var[i]),
        }
    }

    /// `vᵀ R⁻¹ v`.
    pub fn quad(&self, v: &DVector<T>) -> T {
        v.dot(&self.solve_vec(v))
    }

    /// Materializes `R⁻¹` (used by precision assembly).
    pub fn inv_dense(&self) -> DMatrix<T> {
        match self {
            Self::Dense { inv, .. } => inv.clone(),
            Self::Diag { var, .. } => {
                DMatrix::from_diagonal(&DVector::from_fn(var.len(), |i, _| T::one() / var[i]))
            }
        }
    }
}

/// Own-covariance objects kept for branch nodes: the base covariance of
/// the node's locations with its factorization and inverse. Chain hops and
/// innovation sums in [`FactorSet::induced_cov`] read these, and children
/// with a single parent use `inv` as their parent-set inverse.
#[derive(Debug, Clone)]
pub struct OwnCov<T: Real> {
    pub cov: DMatrix<T>,
    pub chol: Cholesky<T, Dyn>,
    pub inv: DMatrix<T>,
}

/// Conditioning factors of one node.
#[derive(Debug, Clone)]
pub struct NodeFactors<T: Real> {
    /// `H_j`, `n_j × J_j` (zero columns at roots).
    pub h: DMatrix<T>,
    pub r: ResidualCov<T>,
    /// Prefix sums of parent location counts: the columns of `h` facing
    /// parent `k` are `parent_offsets[k]..parent_offsets[k+1]`.
    pub parent_offsets: Vec<usize>,
    /// Branch nodes only.
    pub own: Option<OwnCov<T>>,
    /// `E_j` over `[S_[j]; S_j]`; kept when some child may need it.
    pub ext_inv: Option<DMatrix<T>>,
}

impl<T: Real> NodeFactors<T> {
    /// Columns of `H_j` facing the `k`-th parent.
    pub fn h_block(&self, k: usize) -> DMatrix<T> {
        let (a, b) = (self.parent_offsets[k], self.parent_offsets[k + 1]);
        self.h.columns(a, b - a).into_owned()
    }
}

/// All node factors for one parameter value, plus the largest diagonal
/// jitter any block needed (zero in healthy runs).
#[derive(Debug, Clone)]
pub struct FactorSet<T: Real> {
    nodes: Vec<NodeFactors<T>>,
    pub max_jitter: T,
}

impl<T: Real> FactorSet<T> {
    /// Builds every node's factors in graph order (parents first).
    pub fn build(dag: &TreedDag<T>, cov: &CovModel<T>) -> Result<Self> {
        if cov.n_vars() < dag.n_vars() {
            return Err(Error::ModelMismatch(format!(
                "kernel covers {} variables, graph uses {}",
                cov.n_vars(),
                dag.n_vars()
            )));
        }
        let locations = dag.locations();
        let mut nodes: Vec<NodeFactors<T>> = Vec::with_capacity(dag.n_nodes());
        let mut max_jitter = T::zero();
        for ord in 0..dag.n_nodes() {
            let node = dag.node(ord);
            let parent_locs: Vec<usize> = node
                .parents
                .iter()
                .flat_map(|&p| dag.node(p).locs.iter().copied())
                .collect();
            let mut parent_offsets = Vec::with_capacity(node.parents.len() + 1);
            parent_offsets.push(0);
            for &p in &node.parents {
                parent_offsets.push(parent_offsets.last().unwrap() + dag.node(p).locs.len());
            }

            // Parent-set inverse: single parent → that parent's own inverse;
            // nested parents → the deepest parent's extension; anything else
            // (handmade graphs) → direct factorization.
            let parent_inv: Option<DMatrix<T>> = match node.parents.as_slice() {
                [] => None,
                [p] => Some(
                    nodes[*p]
                        .own
                        .as_ref()
                        .expect("parents are branches")
                        .inv
                        .clone(),
                ),
                [rest @ .., dp] => {
                    let nested = dag.node(*dp).parents == rest;
                    match (&nodes[*dp].ext_inv, nested) {
                        (Some(ext), true) => Some(ext.clone()),
                        _ => {
                            let c = cov.square(locations, &parent_locs);
                            let (chol, jitter) = cholesky_jittered(
                                &c,
                                &format!("parent covariance of node {}", node.id),
                            )?;
                            if jitter > max_jitter {
                                max_jitter = jitter;
                            }
                            Some(chol_inverse(&chol))
                        }
                    }
                }
            };

            let c_cross = cov.matrix(locations, &node.locs, &parent_locs);
            let h = match &parent_inv {
                Some(p) => &c_cross * p,
                None => DMatrix::zeros(node.locs.len(), 0),
            };

            let (r, own, ext_inv) = if node.role == NodeRole::Leaf {
                // Leaf locations are conditionally independent given the
                // parent set: keep only the diagonal of the residual.
                let mut var = DVector::zeros(node.locs.len());
                for (i, &loc) in node.locs.iter().enumerate() {
                    let marg = cov.value(&locations[loc], &locations[loc]);
                    let mut v = marg;
                    for k in 0..parent_locs.len() {
                        v -= h[(i, k)] * c_cross[(i, k)];
                    }
                    if v <= T::zero() {
                        // Same escape hatch as the dense jitter ladder:
                        // rounding can push a tiny conditional variance
                        // barely negative.
                        let bumped = marg * cast::<T>(1e-9);
                        if v + bumped <= T::zero() {
                            return Err(Error::NotPositiveDefinite {
                                what: format!("leaf residual variance at node {}", node.id),
                                max_jitter: bumped.to_f64().unwrap_or(f64::NAN),
                            });
                        }
                        v += bumped;
                        if bumped > max_jitter {
                            max_jitter = bumped;
                        }
                    }
                    var[i] = v;
                }
                let logdet = var.iter().map(|&v| v.ln()).sum();
                (ResidualCov::Diag { var, logdet }, None, None)
            } else {
                let own_cov = cov.square(locations, &node.locs);
                let (own_chol, j1) =
                    cholesky_jittered(&own_cov, &format!("covariance of node {}", node.id))?;
                let mut own_inv = chol_inverse(&own_chol);
                symmetrize(&mut own_inv);
                let mut resid = own_cov.clone();
                if !parent_locs.is_empty() {
                    resid -= &h * c_cross.transpose();
                    symmetrize(&mut resid);
                }
                let (r_chol, j2) =
                    cholesky_jittered(&resid, &format!("residual covariance of node {}", node.id))?;
                let mut r_inv = chol_inverse(&r_chol);
                symmetrize(&mut r_inv);
                let logdet = chol_logdet(&r_chol);
                for j in [j1, j2] {
                    if j > max_jitter {
                        max_jitter = j;
                    }
                }
                // Extension E_j: needed by any child whose parent set is
                // pa(j) ∪ {j}. Such children exist only at or above the
                // nest floor, but handmade graphs are small enough to keep
                // it unconditionally.
                let keep_ext =
                    node.id.level >= dag.nest_floor() || dag.levels() == 0 || dag.nest_floor() == 0;
                let ext = if keep_ext {
                    let jj = parent_locs.len();
                    let nn = node.locs.len();
                    let mut e = DMatrix::zeros(jj + nn, jj + nn);
                    if jj > 0 {
                        let p = parent_inv.as_ref().unwrap();
                        let ht_rinv = h.transpose() * &r_inv;
                        e.view_mut((0, 0), (jj, jj)).copy_from(&(p + &ht_rinv * &h));
                        e.view_mut((0, jj), (jj, nn)).copy_from(&(-&ht_rinv));
                        e.view_mut((jj, 0), (nn, jj))
                            .copy_from(&(-ht_rinv.transpose()));
                        e.view_mut((jj, jj), (nn, nn)).copy_from(&r_inv);
                        symmetrize(&mut e);
                    } else {
                        e.copy_from(&own_inv);
                    }
                    Some(e)
                } else {
                    None
                };
                (
                    ResidualCov::Dense {
                        chol: r_chol,
                        inv: r_inv,
                        logdet,
                    },
                    Some(OwnCov {
                        cov: own_cov,
                        chol: own_chol,
                        inv: own_inv,
                    }),
                    ext,
                )
            };
            nodes.push(NodeFactors {
                h,
                r,
                parent_offsets,
                own,
                ext_inv,
            });
        }
        Ok(Self { nodes, max_jitter })
    }

    pub fn node(&self, ord: usize) -> &NodeFactors<T> {
        &self.nodes[ord]
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Joint log density of the latent field under the graph's factorized
    /// prior: Σ_j log N(w_j | H_j w_[j], R_j). `w` is indexed by location
    /// ordinal.
    pub fn log_prior_w(&self, dag: &TreedDag<T>, w: &DVector<T>) -> T {
        let half = cast::<T>(0.5);
        let ln2pi = T::two_pi().ln();
        let mut total = T::zero();
        for ord in 0..dag.n_nodes() {
            let node = dag.node(ord);
            let f = &self.nodes[ord];
            let wj = gather(w, &node.locs);
            let resid = if f.h.ncols() == 0 {
                wj
            } else {
                let wpar = gather_parents(dag, ord, w);
                wj - &f.h * wpar
            };
            let n = cast::<T>(node.locs.len() as f64);
            total -= half * (f.r.quad(&resid) + f.r.logdet() + n * ln2pi);
        }
        total
    }

    /// Ancestral draw of the latent field from the graph's prior: nodes in
    /// ordinal order, each sampled from N(H_j w_[j], R_j). Indexed by
    /// location ordinal.
    pub fn sample_prior<R: Rng + ?Sized>(&self, dag: &TreedDag<T>, rng: &mut R) -> DVector<T> {
        let mut w = DVector::zeros(dag.n_locations());
        for ord in 0..dag.n_nodes() {
            let node = dag.node(ord);
            let f = &self.nodes[ord];
            let eps = DVector::from_fn(node.locs.len(), |_, _| T::std_normal(rng));
            let mut wj = match &f.r {
                ResidualCov::Dense { chol, .. } => chol.l() * eps,
                ResidualCov::Diag { var, .. } => {
                    DVector::from_fn(eps.len(), |i, _| eps[i] * var[i].sqrt())
                }
            };
            if f.h.ncols() > 0 {
                wj += &f.h * gather_parents(dag, ord, &w);
            }
            scatter(&mut w, &node.locs, &wj);
        }
        w
    }

    /// Marginal covariance between two in-model locations under the treed
    /// process (not the base kernel: the graph's own law).
    ///
    /// When the two nodes share part of their conditioning sets the result
    /// is a sum of innovation terms over the shared nodes; otherwise the
    /// correlation flows through the deepest common ancestor, reached by
    /// parent-chain hops. Disconnected locations are independent.
    pub fn induced_cov(&self, dag: &TreedDag<T>, cov: &CovModel<T>, a: usize, b: usize) -> T {
        let va = dag.node_of(a);
        let vb = dag.node_of(b);
        let with_self = |v: usize| {
            let mut s: Vec<usize> = dag.node(v).parents.clone();
            s.push(v);
            s.sort_unstable();
            s
        };
        let sa = with_self(va);
        let sb = with_self(vb);
        let shared: Vec<usize> = sa
            .iter()
            .copied()
            .filter(|x| sb.binary_search(x).is_ok())
            .collect();

        if shared.is_empty() {
            // Correlation only through a common ancestor, if any.
            let Some((z, path_a, path_b)) = dag.concestor_and_paths(va, vb) else {
                return T::zero();
            };
            let ua = self.chain_weight(dag, cov, dag.location(a), &path_a);
            let ub = self.chain_weight(dag, cov, dag.location(b), &path_b);
            let cz = &self.nodes[z]
                .own
                .as_ref()
                .expect("ancestors are branches")
                .cov;
            return (&ua * cz * ub.transpose())[(0, 0)];
        }

        let mut total = T::zero();
        for &s in &shared {
            if dag.node(s).role == NodeRole::Leaf {
                // A leaf appears in a shared set only as both endpoints'
                // own node; its residual is diagonal, so it contributes
                // only when the two locations coincide.
                if a == b {
                    if let ResidualCov::Diag { var, .. } = &self.nodes[s].r {
                        let pos = dag.node(s).locs.iter().position(|&l| l == a).unwrap();
                        total += var[pos];
                    }
                }
                continue;
            }
            // Bottom of the shared chain: the node's own conditioning lies
            // entirely outside the shared set, so its innovation carries
            // its full (exact) marginal covariance.
            let bottom = !dag
                .node(s)
                .parents
                .iter()
                .any(|p| shared.binary_search(p).is_ok());
            let ua = self.innovation_weight(dag, cov, dag.location(a), s, bottom);
            let ub = self.innovation_weight(dag, cov, dag.location(b), s, bottom);
            let fs = &self.nodes[s];
            let solved = if bottom {
                fs.own.as_ref().unwrap().chol.solve(&ub.transpose())
            } else {
                match &fs.r {
                    ResidualCov::Dense { chol, .. } => chol.solve(&ub.transpose()),
                    ResidualCov::Diag { .. } => unreachable!("branch residuals are dense"),
                }
            };
            total += (ua * solved)[(0, 0)];
        }
        total
    }

    /// Covariance row of one location against node `s`'s innovation basis:
    /// the base kernel row, minus the part explained by `s`'s parents when
    /// `s` is conditioned inside the shared set.
    fn innovation_weight(
        &self,
        dag: &TreedDag<T>,
        cov: &CovModel<T>,
        loc: &ExpandedLocation<T>,
        s: usize,
        bottom: bool,
    ) -> RowDVector<T> {
        let locations = dag.locations();
        let srow = cov.row_at(loc, locations, &dag.node(s).locs);
        let srow = RowDVector::from_iterator(srow.ncols(), srow.iter().copied());
        if bottom || self.nodes[s].h.ncols() == 0 {
            return srow;
        }
        let parent_locs: Vec<usize> = dag
            .node(s)
            .parents
            .iter()
            .flat_map(|&p| dag.node(p).locs.iter().copied())
            .collect();
        let prow = cov.row_at(loc, locations, &parent_locs);
        let prow = RowDVector::from_iterator(prow.ncols(), prow.iter().copied());
        srow - prow * self.nodes[s].h.transpose()
    }

    /// Kriging weight of a location onto the head of a parent-chain path
    /// (root end first, as produced by `concestor_and_paths`): condition
    /// on the nearest path node, then telescope through single-parent hops.
    fn chain_weight(
        &self,
        dag: &TreedDag<T>,
        cov: &CovModel<T>,
        loc: &ExpandedLocation<T>,
        path: &[usize],
    ) -> RowDVector<T> {
        let pred = if path.len() >= 2 {
            path[path.len() - 2]
        } else {
            path[0]
        };
        let row = cov.row_at(loc, dag.locations(), &dag.node(pred).locs);
        let row = RowDVector::from_iterator(row.ncols(), row.iter().copied());
        let chol = &self.nodes[pred]
            .own
            .as_ref()
            .expect("path nodes are branches")
            .chol;
        let mut u = chol.solve(&row.transpose()).transpose();
        for idx in (1..path.len().saturating_sub(1)).rev() {
            u *= &self.nodes[path[idx]].h; // single-parent hop toward the root
        }
        u
    }
}

/// Gathers `w` at the given ordinals.
pub fn gather<T: Real>(w: &DVector<T>, idx: &[usize]) -> DVector<T> {
    DVector::from_fn(idx.len(), |i, _| w[idx[i]])
}

/// Gathers `w` over a node's whole parent set, in parent order.
pub fn gather_parents<T: Real>(dag: &TreedDag<T>, ord: usize, w: &DVector<T>) -> DVector<T> {
    let idx: Vec<usize> = dag
        .node(ord)
        .parents
        .iter()
        .flat_map(|&p| dag.node(p).locs.iter().copied())
        .collect();
    gather(w, &idx)
}

/// Scatters node-ordered values back into a full-length vector.
pub fn scatter<T: Real>(out: &mut DVector<T>, idx: &[usize], vals: &DVector<T>) {
    for (i, &o) in idx.iter().enumerate() {
        out[o] = vals[i];
    }
}
