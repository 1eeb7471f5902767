//! Block-sparse precision of the latent field and its factorization.
//!
//! Stacking every node's conditional `w_j | w_[j] ~ N(H_j w_[j], R_j)`
//! gives `w = H̃ w + η`, so the joint precision is
//!
//! ```text
//! Λ = (I − H̃)ᵀ R̃⁻¹ (I − H̃),
//! ```
//!
//! whose block `(i, j)` collects `Uᵀ R_k⁻¹ U` terms over the common
//! descendants `k` of `i` and `j` (each node counting itself): structurally
//! nonzero exactly on the diagonal, on parent-child pairs, and on pairs
//! that share a child. In the built trees co-parents are themselves
//! ancestor-related, so the whole pattern sits inside the parent closure
//! and the scalar count is `Σ_i (2 n_i J_i + n_i² [branch] + n_i [leaf])`.
//!
//! [`BlockLdl`] eliminates nodes deepest-first, producing
//! `Λ = (I − L)ᵀ D (I − L)` with one dense (or diagonal) pivot per node and
//! `L_jp` blocks pointing from each node to its not-yet-eliminated
//! neighbors. Solves, sampling, log-determinants, and the ancestor-closure
//! forward inverse `Δ = (I − L)⁻¹` all come off that factorization.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::factors::{FactorSet, ResidualCov};
use crate::linalg::{chol_logdet, cholesky_jittered, solve_lower_transpose, symmetrize};
use crate::scalar::Real;
use crate::treegraph::TreedDag;

/// One diagonal block: dense for branches, diagonal for leaves.
#[derive(Debug, Clone)]
pub enum DiagBlock<T: Real> {
    Dense(DMatrix<T>),
    Diag(DVector<T>),
}

impl<T: Real> DiagBlock<T> {
    pub fn dim(&self) -> usize {
        match self {
            Self::Dense(m) => m.nrows(),
            Self::Diag(v) => v.len(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        match self {
            Self::Dense(m) => m.clone(),
            Self::Diag(v) => DMatrix::from_diagonal(v),
        }
    }

    fn scalar_count(&self) -> usize {
        match self {
            Self::Dense(m) => m.nrows() * m.ncols(),
            Self::Diag(v) => v.len(),
        }
    }

    /// Adds a dense matrix, promoting a diagonal block if needed.
    pub fn add_dense(&mut self, m: &DMatrix<T>) {
        match self {
            Self::Dense(d) => *d += m,
            Self::Diag(v) => {
                let mut dense = DMatrix::from_diagonal(v);
                dense += m;
                *self = Self::Dense(dense);
            }
        }
    }

    /// Adds onto the diagonal only.
    pub fn add_diag(&mut self, v: &DVector<T>) {
        match self {
            Self::Dense(d) => {
                for i in 0..v.len() {
                    d[(i, i)] += v[i];
                }
            }
            Self::Diag(d) => *d += v,
        }
    }
}

/// Symmetric block-sparse matrix over the graph's nodes. Off-diagonal
/// blocks are stored in both orientations; `layout` maps each node's rows
/// to scalar (location-ordinal) indices.
#[derive(Debug, Clone)]
pub struct BlockSparse<T: Real> {
    pub diag: Vec<DiagBlock<T>>,
    pub off: BTreeMap<(usize, usize), DMatrix<T>>,
    pub layout: Vec<Vec<usize>>,
    pub n: usize,
}

/// `H_{p→k}ᵀ R_k⁻¹ H_{g→k}` for every parent pair `p < g` of node `k`:
/// the precision contribution of `k` to its co-parent blocks, and the
/// coupling the Gibbs conditionals subtract for concurrently-held
/// neighbors. One implementation serves both.
pub fn coupling_blocks<T: Real>(
    dag: &TreedDag<T>,
    fs: &FactorSet<T>,
    k: usize,
) -> Vec<(usize, usize, DMatrix<T>)> {
    let node = dag.node(k);
    let f = fs.node(k);
    let mut out = Vec::new();
    for a in 0..node.parents.len() {
        let ha = f.h_block(a);
        let rinv_ha = f.r.premul_inv(&ha);
        for b in (a + 1)..node.parents.len() {
            let hb = f.h_block(b);
            out.push((
                node.parents[a],
                node.parents[b],
                hb.tr_mul(&rinv_ha).transpose(),
            ));
        }
    }
    out
}

/// Assembles the latent-field precision over all locations.
pub fn assemble<T: Real>(dag: &TreedDag<T>, fs: &FactorSet<T>) -> BlockSparse<T> {
    let mut diag: Vec<DiagBlock<T>> = (0..dag.n_nodes())
        .map(|ord| match &fs.node(ord).r {
            ResidualCov::Diag { var, .. } => {
                DiagBlock::Diag(DVector::from_fn(var.len(), |i, _| T::one() / var[i]))
            }
            ResidualCov::Dense { .. } => DiagBlock::Dense(fs.node(ord).r.inv_dense()),
        })
        .collect();
    let mut off: BTreeMap<(usize, usize), DMatrix<T>> = BTreeMap::new();

    for k in 0..dag.n_nodes() {
        let node = dag.node(k);
        let f = fs.node(k);
        if node.parents.is_empty() {
            continue;
        }
        // Parent-child strips: Λ(p, k) gets −H_{p→k}ᵀ R_k⁻¹ from node k
        // (k's own identity term against each parent's −H).
        let rinv =
            f.r.premul_inv(&DMatrix::identity(node.locs.len(), node.locs.len()));
        for (a, &p) in node.parents.iter().enumerate() {
            let ha = f.h_block(a);
            let strip = -(ha.tr_mul(&rinv));
            off.entry((p, k))
                .and_modify(|m| *m += &strip)
                .or_insert_with(|| strip.clone());
            let t = strip.transpose();
            off.entry((k, p)).and_modify(|m| *m += &t).or_insert(t);
            // Parent diagonal: H_{p→k}ᵀ R_k⁻¹ H_{p→k}.
            let rinv_ha = f.r.premul_inv(&ha);
            let mut dpp = ha.tr_mul(&rinv_ha);
            symmetrize(&mut dpp);
            diag[p].add_dense(&dpp);
        }
        // Co-parent couplings.
        for (p, g, block) in coupling_blocks(dag, fs, k) {
            off.entry((p, g))
                .and_modify(|m| *m += &block)
                .or_insert_with(|| block.clone());
            let t = block.transpose();
            off.entry((g, p)).and_modify(|m| *m += &t).or_insert(t);
        }
    }

    let layout: Vec<Vec<usize>> = dag.nodes().iter().map(|n| n.locs.clone()).collect();
    BlockSparse {
        diag,
        off,
        layout,
        n: dag.n_locations(),
    }
}

impl<T: Real> BlockSparse<T> {
    /// Stored scalar entries (structural nonzeros).
    pub fn nnz(&self) -> usize {
        self.diag.iter().map(DiagBlock::scalar_count).sum::<usize>()
            + self
                .off
                .values()
                .map(|m| m.nrows() * m.ncols())
                .sum::<usize>()
    }

    /// Scatters the blocks into a dense matrix indexed by location ordinal.
    pub fn to_dense(&self) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for (i, block) in self.diag.iter().enumerate() {
            let rows = &self.layout[i];
            match block {
                DiagBlock::Dense(m) => {
                    for (a, &ra) in rows.iter().enumerate() {
                        for (b, &rb) in rows.iter().enumerate() {
                            out[(ra, rb)] = m[(a, b)];
                        }
                    }
                }
                DiagBlock::Diag(v) => {
                    for (a, &ra) in rows.iter().enumerate() {
                        out[(ra, ra)] = v[a];
                    }
                }
            }
        }
        for (&(i, j), m) in &self.off {
            for (a, &ra) in self.layout[i].iter().enumerate() {
                for (b, &rb) in self.layout[j].iter().enumerate() {
                    out[(ra, rb)] = m[(a, b)];
                }
            }
        }
        out
    }
}

/// One factored pivot.
#[derive(Debug, Clone)]
enum Pivot<T: Real> {
    Dense(Cholesky<T, Dyn>),
    Diag(DVector<T>),
}

impl<T: Real> Pivot<T> {
    fn solve_mat(&self, m: &DMatrix<T>) -> DMatrix<T> {
        match self {
            Self::Dense(chol) => chol.solve(m),
            Self::Diag(v) => {
                let mut out = m.clone();
                for (r, &d) in v.iter().enumerate() {
                    for c in 0..out.ncols() {
                        out[(r, c)] /= d;
                    }
                }
                out
            }
        }
    }

    fn solve_vec(&self, b: &DVector<T>) -> DVector<T> {
        match self {
            Self::Dense(chol) => chol.solve(b),
            Self::Diag(v) => DVector::from_fn(b.len(), |i, _| b[i] / v[i]),
        }
    }

    fn logdet(&self) -> T {
        match self {
            Self::Dense(chol) => chol_logdet(chol),
            Self::Diag(v) => v.iter().map(|&d| d.ln()).sum(),
        }
    }

    /// x with Cov(x) = pivot⁻¹, from iid standard normals.
    fn scaled_noise(&self, eps: &DVector<T>) -> DVector<T> {
        match self {
            Self::Dense(chol) => {
                let l = chol.l_dirty();
                solve_lower_transpose(l, eps)
            }
            Self::Diag(v) => DVector::from_fn(eps.len(), |i, _| eps[i] / v[i].sqrt()),
        }
    }

    fn to_dense(&self) -> DMatrix<T> {
        match self {
            Self::Dense(chol) => {
                let l = chol.l();
                &l * l.transpose()
            }
            Self::Diag(v) => DMatrix::from_diagonal(v),
        }
    }
}

/// Block LDL factorization `Λ = (I − L)ᵀ D (I − L)` in deepest-first
/// elimination order.
#[derive(Debug, Clone)]
pub struct BlockLdl<T: Real> {
    /// `L_jp` for each node `j` and each shallower neighbor `p`, sorted by `p`.
    l: Vec<Vec<(usize, DMatrix<T>)>>,
    d: Vec<Pivot<T>>,
    layout: Vec<Vec<usize>>,
    n: usize,
    pub logdet: T,
    pub max_jitter: T,
}

impl<T: Real> BlockLdl<T> {
    /// Factors a block-sparse symmetric positive-definite matrix.
    ///
    /// Elimination runs from the last node ordinal to the first, i.e.
    /// deepest level first; every neighbor of an eliminated node has a
    /// smaller ordinal in the graphs built here, and Schur fill stays
    /// inside the ancestor closure.
    pub fn factor(bs: &BlockSparse<T>) -> Result<Self> {
        let nn = bs.diag.len();
        let mut diag = bs.diag.clone();
        let mut off = bs.off.clone();
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nn];
        for &(i, j) in off.keys() {
            adj[i].insert(j);
        }
        let mut l: Vec<Vec<(usize, DMatrix<T>)>> = vec![Vec::new(); nn];
        let mut d: Vec<Option<Pivot<T>>> = vec![None; nn];
        let mut logdet = T::zero();
        let mut max_jitter = T::zero();

        for j in (0..nn).rev() {
            let pivot = match &diag[j] {
                DiagBlock::Diag(v) => {
                    if v.iter().any(|&x| !(x > T::zero())) {
                        return Err(Error::NotPositiveDefinite {
                            what: format!("diagonal pivot of block {j}"),
                            max_jitter: 0.0,
                        });
                    }
                    Pivot::Diag(v.clone())
                }
                DiagBlock::Dense(m) => {
                    let (chol, jit) = cholesky_jittered(m, &format!("pivot block {j}"))?;
                    if jit > max_jitter {
                        max_jitter = jit;
                    }
                    Pivot::Dense(chol)
                }
            };
            logdet += pivot.logdet();

            let remaining: Vec<usize> = adj[j].iter().copied().filter(|&p| p < j).collect();
            // L_jp = −D_j⁻¹ Λ_jp, then the Schur update
            // Λ_pg ← Λ_pg − Λ_jpᵀ D_j⁻¹ Λ_jg  (= Λ_pg + Λ_jpᵀ L_jg).
            let lambda_jp: Vec<DMatrix<T>> =
                remaining.iter().map(|&p| off[&(j, p)].clone()).collect();
            let l_row: Vec<(usize, DMatrix<T>)> = remaining
                .iter()
                .zip(&lambda_jp)
                .map(|(&p, lam)| (p, -pivot.solve_mat(lam)))
                .collect();
            #[allow(clippy::needless_range_loop)]
            for (a, &p) in remaining.iter().enumerate() {
                for (b, &g) in remaining.iter().enumerate() {
                    if g < p {
                        continue;
                    }
                    let update = lambda_jp[a].tr_mul(&l_row[b].1);
                    if p == g {
                        let mut u = update;
                        symmetrize(&mut u);
                        diag[p].add_dense(&u);
                    } else {
                        off.entry((p, g))
                            .and_modify(|m| *m += &update)
                            .or_insert_with(|| update.clone());
                        let t = update.transpose();
                        off.entry((g, p)).and_modify(|m| *m += &t).or_insert(t);
                        adj[p].insert(g);
                        adj[g].insert(p);
                    }
                }
            }
            l[j] = l_row;
            d[j] = Some(pivot);
        }

        Ok(Self {
            l,
            d: d.into_iter().map(Option::unwrap).collect(),
            layout: bs.layout.clone(),
            n: bs.n,
            logdet,
            max_jitter,
        })
    }

    fn gather(&self, v: &DVector<T>, node: usize) -> DVector<T> {
        DVector::from_fn(self.layout[node].len(), |i, _| v[self.layout[node][i]])
    }

    fn scatter(&self, out: &mut DVector<T>, node: usize, vals: &DVector<T>) {
        for (i, &o) in self.layout[node].iter().enumerate() {
            out[o] = vals[i];
        }
    }

    /// Solves Λ x = b.
    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        let nn = self.layout.len();
        // Forward: (I − L)ᵀ z = b, children before parents.
        let mut z = b.clone();
        for j in (0..nn).rev() {
            let zj = self.gather(&z, j);
            for (p, ljp) in &self.l[j] {
                let add = ljp.tr_mul(&zj);
                for (i, &o) in self.layout[*p].iter().enumerate() {
                    z[o] += add[i];
                }
            }
        }
        // Scale by D⁻¹ and back-substitute (I − L) x = y, parents first.
        let mut x = DVector::zeros(self.n);
        for j in 0..nn {
            let mut xj = self.d[j].solve_vec(&self.gather(&z, j));
            for (p, ljp) in &self.l[j] {
                xj += ljp * self.gather(&x, *p);
            }
            self.scatter(&mut x, j, &xj);
        }
        x
    }

    /// Draws x ~ N(0, Λ⁻¹) using per-node standard normals from `rng`.
    pub fn sample_zero_mean<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<T> {
        let nn = self.layout.len();
        let mut eps = DVector::zeros(self.n);
        for j in 0..nn {
            for &o in &self.layout[j] {
                eps[o] = T::std_normal(rng);
            }
        }
        self.sample_from_noise(&eps)
    }

    /// Turns iid standard normals (indexed by location ordinal) into a
    /// draw x ~ N(0, Λ⁻¹). Exposed so callers can control which stream
    /// supplies each node's noise.
    pub fn sample_from_noise(&self, eps: &DVector<T>) -> DVector<T> {
        let nn = self.layout.len();
        let mut x = DVector::zeros(self.n);
        for j in 0..nn {
            let mut xj = self.d[j].scaled_noise(&self.gather(eps, j));
            for (p, ljp) in &self.l[j] {
                xj += ljp * self.gather(&x, *p);
            }
            self.scatter(&mut x, j, &xj);
        }
        x
    }

    /// Dense `I − L` in location-ordinal indexing (test support).
    pub fn unit_factor_dense(&self) -> DMatrix<T> {
        let mut out = DMatrix::identity(self.n, self.n);
        for (j, row) in self.l.iter().enumerate() {
            for (p, ljp) in row {
                for (a, &ra) in self.layout[j].iter().enumerate() {
                    for (b, &rb) in self.layout[*p].iter().enumerate() {
                        out[(ra, rb)] = -ljp[(a, b)];
                    }
                }
            }
        }
        out
    }

    /// Dense block-diagonal `D` (test support).
    pub fn pivot_dense(&self) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for (j, piv) in self.d.iter().enumerate() {
            let m = piv.to_dense();
            for (a, &ra) in self.layout[j].iter().enumerate() {
                for (b, &rb) in self.layout[j].iter().enumerate() {
                    out[(ra, rb)] = m[(a, b)];
                }
            }
        }
        out
    }

    /// Forward inverse Δ = (I − L)⁻¹ on the ancestor-closure pattern:
    /// Δ_jj = I and Δ_jp = L_jp + Σ_g L_jg Δ_gp over `j`'s stored neighbors,
    /// rows filled parents-first.
    pub fn forward_inverse(&self) -> BTreeMap<(usize, usize), DMatrix<T>> {
        let nn = self.layout.len();
        let mut delta: BTreeMap<(usize, usize), DMatrix<T>> = BTreeMap::new();
        for j in 0..nn {
            let nj = self.layout[j].len();
            delta.insert((j, j), DMatrix::identity(nj, nj));
            // Accumulate over this row's L-neighbors; their Δ rows are done.
            let mut row: BTreeMap<usize, DMatrix<T>> = BTreeMap::new();
            for (g, ljg) in &self.l[j] {
                let targets: Vec<(usize, DMatrix<T>)> = delta
                    .range((*g, 0)..(*g + 1, 0))
                    .map(|(&(_, p), d)| (p, ljg * d))
                    .collect();
                for (p, add) in targets {
                    row.entry(p).and_modify(|m| *m += &add).or_insert(add);
                }
            }
            for (p, m) in row {
                delta.insert((j, p), m);
            }
        }
        delta
    }
}
