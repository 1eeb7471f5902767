//! Treed directed acyclic graph over spatial locations.
//!
//! The graph splits the model's expanded locations (coordinates × variable)
//! into a *reference* set, spread over branch nodes by recursive axis-parallel
//! domain partitioning, and a *non-reference* remainder attached as leaves
//! under terminal branches. Conditioning depth `δ` controls how parent sets
//! nest:
//!
//! ```text
//! level 0 .. floor      one parent at the level above (chain region)
//! level  > floor        one parent per level floor..i-1 (nested region)
//! leaves                the terminal branch plus its nested ancestors
//! ```
//!
//! where `floor = levels - δ`. With `δ = levels` every node conditions on
//! its full ancestor chain; with `δ = 1` each node conditions on its
//! immediate parent only.
//!
//! Nodes are ordered by `(level, index_in_level)` and referred to by that
//! ordinal everywhere else in the crate; the graph is immutable once built.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

// ──────────────────────────────────────────────────────────────────────────
// Basic types
// ──────────────────────────────────────────────────────────────────────────

/// A point in the expanded domain: spatial coordinates plus the index of
/// the latent variable observed or wanted there.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedLocation<T> {
    pub coords: Vec<T>,
    pub var: usize,
}

impl<T: Real> ExpandedLocation<T> {
    pub fn new(coords: Vec<T>, var: usize) -> Self {
        Self { coords, var }
    }

    /// Squared Euclidean distance between the spatial parts.
    pub fn dist_sq(&self, other: &Self) -> T {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum()
    }
}

/// Stable node identifier: level plus position within the level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub level: usize,
    pub index: usize,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.level, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Branch,
    Leaf,
}

/// One node of the graph. `parents` is sorted by level ascending (root end
/// first), which is also the column order of the conditioning factors.
#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub role: NodeRole,
    pub parents: Vec<usize>,
    pub children: Vec<usize>,
    /// Input ordinals of the locations assigned to this node.
    pub locs: Vec<usize>,
}

/// Construction parameters.
#[derive(Debug, Clone)]
pub struct TreeParams<T> {
    /// Number of branch levels to aim for (levels `0..levels`); leaves
    /// attach one level below the terminal branch they land under.
    pub levels: usize,
    /// Conditioning depth δ in `1..=levels`.
    pub depth: usize,
    /// Axis splits per level: a branch cell divides into `fanout^dim`
    /// child cells.
    pub fanout: usize,
    /// Target reference-subset size per branch node.
    pub subset_size: usize,
    /// Per-variable weights for reference picks; larger values make a
    /// variable's locations more likely to enter reference subsets early
    /// (useful when one margin is much more sparsely observed).
    pub bias_weights: Vec<T>,
    /// Seed for the deterministic per-level pick streams.
    pub seed: u64,
}

/// Facts worth surfacing about a build.
#[derive(Debug, Clone, Default)]
pub struct BuildDiagnostics {
    /// Input ordinals whose variable had no reference location in any
    /// terminal branch, assigned by the nearest-terminal fallback.
    pub fallback_assignments: Vec<usize>,
}

/// The built graph. Immutable after construction.
#[derive(Debug, Clone)]
pub struct TreedDag<T> {
    locations: Vec<ExpandedLocation<T>>,
    observed: Vec<bool>,
    nodes: Vec<Node>,
    node_of_location: Vec<usize>,
    n_vars: usize,
    dim: usize,
    /// Effective conditioning depth (the requested δ capped at the depth
    /// actually built).
    depth: usize,
    /// `levels - depth`: the level at which parent nesting starts.
    nest_floor: usize,
    /// Maximum node level actually present.
    levels: usize,
    diagnostics: BuildDiagnostics,
}

// ──────────────────────────────────────────────────────────────────────────
// Construction
// ──────────────────────────────────────────────────────────────────────────

/// Axis-aligned grid bookkeeping for the recursive partition.
struct DomainGrid<T> {
    lo: Vec<T>,
    extent: Vec<T>,
}

impl<T: Real> DomainGrid<T> {
    fn new(locations: &[ExpandedLocation<T>]) -> Self {
        let dim = locations[0].coords.len();
        let mut lo = vec![T::max_value().unwrap(); dim];
        let mut hi = vec![-T::max_value().unwrap(); dim];
        for loc in locations {
            for a in 0..dim {
                if loc.coords[a] < lo[a] {
                    lo[a] = loc.coords[a];
                }
                if loc.coords[a] > hi[a] {
                    hi[a] = loc.coords[a];
                }
            }
        }
        let extent = lo
            .iter()
            .zip(&hi)
            .map(|(&l, &h)| if h > l { h - l } else { T::one() })
            .collect();
        Self { lo, extent }
    }

    /// Cell index of a point on the `cells`-per-axis grid, row-major.
    fn cell_of(&self, coords: &[T], cells: usize) -> usize {
        let mut key = 0usize;
        for ((&c, &lo), &extent) in coords.iter().zip(&self.lo).zip(&self.extent) {
            let rel = ((c - lo) / extent).to_f64().unwrap();
            let idx = ((rel * cells as f64).floor() as isize).clamp(0, cells as isize - 1);
            key = key * cells + idx as usize;
        }
        key
    }
}

/// Branch record used during construction, before final ordinals exist.
struct ProtoBranch {
    level: usize,
    index: usize,
    /// Temporary indices of the branch ancestors, level ascending.
    chain: Vec<usize>,
    locs: Vec<usize>,
}

impl<T: Real> TreedDag<T> {
    /// Builds the graph: recursive partitioning for reference subsets,
    /// then leaf attachment for everything left over.
    ///
    /// # Errors
    ///
    /// Rejects empty input, non-finite coordinates, duplicate expanded
    /// locations, inconsistent dimensions, invalid parameters, a subset
    /// size exceeding the location count, and input with no observed
    /// locations (the reference set is drawn from observed ones).
    pub fn build(
        locations: Vec<ExpandedLocation<T>>,
        observed: Vec<bool>,
        params: &TreeParams<T>,
    ) -> Result<Self> {
        let n = locations.len();
        if n == 0 {
            return Err(Error::EmptyLocations);
        }
        if observed.len() != n {
            return Err(Error::InvalidParameter(format!(
                "observed mask has {} entries for {} locations",
                observed.len(),
                n
            )));
        }
        let dim = locations[0].coords.len();
        let n_vars = locations.iter().map(|l| l.var).max().unwrap() + 1;
        for (ord, loc) in locations.iter().enumerate() {
            if loc.coords.len() != dim {
                return Err(Error::InvalidParameter(format!(
                    "location {ord} has {} coordinates, expected {dim}",
                    loc.coords.len()
                )));
            }
            if loc.coords.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFiniteCoordinate { ordinal: ord });
            }
        }
        check_duplicates(&locations)?;
        if params.levels == 0 {
            return Err(Error::InvalidParameter("levels must be at least 1".into()));
        }
        if params.depth == 0 || params.depth > params.levels {
            return Err(Error::InvalidParameter(format!(
                "depth must lie in 1..={}, got {}",
                params.levels, params.depth
            )));
        }
        if params.fanout == 0 {
            return Err(Error::InvalidParameter("fanout must be at least 1".into()));
        }
        if params.subset_size == 0 {
            return Err(Error::InvalidParameter(
                "subset size must be at least 1".into(),
            ));
        }
        if params.subset_size > n {
            return Err(Error::InvalidParameter(format!(
                "subset size {} exceeds location count {n}",
                params.subset_size
            )));
        }
        if params.bias_weights.len() != n_vars {
            return Err(Error::InvalidParameter(format!(
                "{} bias weights for {} variables",
                params.bias_weights.len(),
                n_vars
            )));
        }
        if params.bias_weights.iter().any(|&w| !(w > T::zero())) {
            return Err(Error::InvalidParameter(
                "bias weights must be positive".into(),
            ));
        }
        if !observed.iter().any(|&o| o) {
            return Err(Error::InvalidParameter(
                "no observed locations to draw reference subsets from".into(),
            ));
        }

        let grid = DomainGrid::new(&locations);
        let sub_axis = (params.subset_size as f64)
            .powf(1.0 / dim as f64)
            .round()
            .max(1.0) as usize;
        let sub_target = sub_axis.pow(dim as u32);

        // Reference picks, level by level. Each level consumes from the
        // shared pool with its own deterministic stream, so a level's picks
        // do not depend on how deep the tree eventually goes.
        let mut pool: Vec<usize> = (0..n).filter(|&o| observed[o]).collect();
        let mut branches: Vec<ProtoBranch> = Vec::new();
        let mut cell_to_branch: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for level in 0..params.levels {
            if pool.is_empty() || (level > 0 && pool.len() < params.subset_size) {
                break;
            }
            let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
            rng.set_stream(level as u64 + 1);
            let cells_per_axis = params.fanout.checked_pow(level as u32).ok_or_else(|| {
                Error::InvalidParameter(format!("fanout^{level} overflows", level = level))
            })?;
            let mut by_cell: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &ord in &pool {
                by_cell
                    .entry(grid.cell_of(&locations[ord].coords, cells_per_axis))
                    .or_default()
                    .push(ord);
            }
            let mut index_in_level = 0usize;
            let mut taken: BTreeSet<usize> = BTreeSet::new();
            for (&cell, cand) in &by_cell {
                let picks = if cand.len() <= params.subset_size.max(sub_target) {
                    cand.clone()
                } else {
                    pick_stratified(
                        cand,
                        &locations,
                        &grid,
                        &params.bias_weights,
                        cell,
                        cells_per_axis,
                        sub_axis,
                        &mut rng,
                    )
                };
                if picks.is_empty() {
                    continue;
                }
                let chain = if level == 0 {
                    Vec::new()
                } else {
                    // Ancestor cells exist: any cell with candidates now had
                    // candidates at every coarser level.
                    let mut chain = Vec::with_capacity(level);
                    for anc_level in 0..level {
                        let shift = params.fanout.pow((level - anc_level) as u32);
                        let anc_cell = project_cell(cell, cells_per_axis, shift, dim);
                        chain.push(cell_to_branch[&(anc_level, anc_cell)]);
                    }
                    chain
                };
                taken.extend(picks.iter().copied());
                cell_to_branch.insert((level, cell), branches.len());
                branches.push(ProtoBranch {
                    level,
                    index: index_in_level,
                    chain,
                    locs: picks,
                });
                index_in_level += 1;
            }
            if index_in_level == 0 {
                break;
            }
            pool.retain(|o| !taken.contains(o));
        }
        if branches.is_empty() {
            return Err(Error::InvalidParameter(
                "reference construction produced no branch nodes".into(),
            ));
        }

        // Leaf attachment: every remaining location (unpicked observed plus
        // all unobserved) is tied to the terminal branch holding its nearest
        // same-variable reference location.
        let non_reference: Vec<usize> = {
            let assigned: BTreeSet<usize> = branches
                .iter()
                .flat_map(|b| b.locs.iter().copied())
                .collect();
            (0..n).filter(|o| !assigned.contains(o)).collect()
        };
        let has_branch_child: BTreeSet<usize> = branches
            .iter()
            .flat_map(|b| b.chain.last().copied())
            .collect();
        let terminals: Vec<usize> = (0..branches.len())
            .filter(|b| !has_branch_child.contains(b))
            .collect();

        let mut fallback_assignments = Vec::new();
        let mut leaf_groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for &ord in &non_reference {
            let (terminal, fallback) =
                nearest_terminal(&locations, &branches, &terminals, &locations[ord]);
            if fallback {
                fallback_assignments.push(ord);
            }
            leaf_groups
                .entry((terminal, locations[ord].var))
                .or_default()
                .push(ord);
        }

        // Final node list: branches then leaves, sorted by (level, index).
        // Leaf indices continue each level's branch numbering.
        let mut level_counts: BTreeMap<usize, usize> = BTreeMap::new();
        for b in &branches {
            *level_counts.entry(b.level).or_default() += 1;
        }
        struct ProtoLeaf {
            level: usize,
            index: usize,
            terminal: usize,
            locs: Vec<usize>,
        }
        let mut leaves: Vec<ProtoLeaf> = Vec::new();
        for ((terminal, _var), locs) in leaf_groups {
            let level = branches[terminal].level + 1;
            let slot = level_counts.entry(level).or_default();
            leaves.push(ProtoLeaf {
                level,
                index: *slot,
                terminal,
                locs,
            });
            *slot += 1;
        }

        let levels = branches
            .iter()
            .map(|b| b.level)
            .chain(leaves.iter().map(|l| l.level))
            .max()
            .unwrap();
        let depth = if levels == 0 {
            0
        } else {
            params.depth.clamp(1, levels)
        };
        let nest_floor = levels - depth;

        // Order: all entries tagged (level, index, branch?/leaf idx).
        let mut order: Vec<(usize, usize, bool, usize)> = Vec::new();
        for (i, b) in branches.iter().enumerate() {
            order.push((b.level, b.index, false, i));
        }
        for (i, l) in leaves.iter().enumerate() {
            order.push((l.level, l.index, true, i));
        }
        order.sort_unstable();
        let mut branch_ordinal = vec![usize::MAX; branches.len()];
        for (ord, &(_, _, is_leaf, idx)) in order.iter().enumerate() {
            if !is_leaf {
                branch_ordinal[idx] = ord;
            }
        }

        let parent_levels = |node_level: usize| -> std::ops::Range<usize> {
            if node_level == 0 {
                0..0
            } else if node_level <= nest_floor {
                (node_level - 1)..node_level
            } else {
                nest_floor..node_level
            }
        };

        let mut nodes: Vec<Node> = Vec::with_capacity(order.len());
        for &(level, index, is_leaf, idx) in &order {
            let (role, chain, locs) = if is_leaf {
                let leaf = &leaves[idx];
                let term = &branches[leaf.terminal];
                let mut chain = term.chain.clone();
                chain.push(leaf.terminal);
                (NodeRole::Leaf, chain, leaf.locs.clone())
            } else {
                (
                    NodeRole::Branch,
                    branches[idx].chain.clone(),
                    branches[idx].locs.clone(),
                )
            };
            let parents: Vec<usize> = parent_levels(level)
                .map(|pl| {
                    branch_ordinal[*chain
                        .iter()
                        .find(|&&b| branches[b].level == pl)
                        .expect("ancestor chain covers every shallower level")]
                })
                .collect();
            nodes.push(Node {
                id: NodeId { level, index },
                role,
                parents,
                children: Vec::new(),
                locs,
            });
        }

        let mut dag = Self {
            locations,
            observed,
            nodes,
            node_of_location: vec![usize::MAX; n],
            n_vars,
            dim,
            depth,
            nest_floor,
            levels,
            diagnostics: BuildDiagnostics {
                fallback_assignments,
            },
        };
        dag.finish_links()?;
        Ok(dag)
    }

    /// Assembles a graph from explicit parts: handmade graphs for oracle
    /// scenarios and deserialization both come through here.
    ///
    /// `spec` lists `(id, role, parent ids, location ordinals)` per node;
    /// `depth` is the conditioning depth the graph was built with.
    pub fn from_parts(
        locations: Vec<ExpandedLocation<T>>,
        observed: Vec<bool>,
        spec: Vec<(NodeId, NodeRole, Vec<NodeId>, Vec<usize>)>,
        depth: usize,
        diagnostics: BuildDiagnostics,
    ) -> Result<Self> {
        let n = locations.len();
        if n == 0 || spec.is_empty() {
            return Err(Error::EmptyLocations);
        }
        if observed.len() != n {
            return Err(Error::InvalidParameter(
                "observed mask length mismatch".into(),
            ));
        }
        let dim = locations[0].coords.len();
        let n_vars = locations.iter().map(|l| l.var).max().unwrap() + 1;
        let mut spec = spec;
        spec.sort_by_key(|(id, ..)| *id);
        let by_id: BTreeMap<NodeId, usize> = spec
            .iter()
            .enumerate()
            .map(|(ord, (id, ..))| (*id, ord))
            .collect();
        if by_id.len() != spec.len() {
            return Err(Error::InvalidParameter("duplicate node ids".into()));
        }
        let mut nodes = Vec::with_capacity(spec.len());
        for (id, role, parent_ids, locs) in &spec {
            let mut parents = Vec::with_capacity(parent_ids.len());
            for pid in parent_ids {
                let &ord = by_id
                    .get(pid)
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown parent {pid}")))?;
                parents.push(ord);
            }
            parents.sort_by_key(|&p| spec[p].0);
            nodes.push(Node {
                id: *id,
                role: *role,
                parents,
                children: Vec::new(),
                locs: locs.clone(),
            });
        }
        let levels = nodes.iter().map(|nd| nd.id.level).max().unwrap();
        let depth = if levels == 0 {
            0
        } else {
            depth.clamp(1, levels)
        };
        let mut dag = Self {
            locations,
            observed,
            nodes,
            node_of_location: vec![usize::MAX; n],
            n_vars,
            dim,
            depth,
            nest_floor: levels - depth,
            levels,
            diagnostics,
        };
        dag.finish_links()?;
        Ok(dag)
    }

    /// Fills children and the location→node map, then validates.
    fn finish_links(&mut self) -> Result<()> {
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for (ord, node) in self.nodes.iter().enumerate() {
            for &p in &node.parents {
                children[p].push(ord);
            }
        }
        for (ord, ch) in children.into_iter().enumerate() {
            self.nodes[ord].children = ch;
        }
        for (ord, node) in self.nodes.iter().enumerate() {
            for &loc in &node.locs {
                if loc >= self.node_of_location.len() {
                    return Err(Error::InvalidParameter(format!(
                        "node {} references location ordinal {loc} out of range",
                        node.id
                    )));
                }
                if self.node_of_location[loc] != usize::MAX {
                    return Err(Error::InvalidParameter(format!(
                        "location ordinal {loc} assigned to two nodes"
                    )));
                }
                self.node_of_location[loc] = ord;
            }
        }
        self.validate()
    }

    /// Structural invariants: complete assignment partition, parents strictly
    /// shallower and sorted, leaves childless, ordering by (level, index).
    pub fn validate(&self) -> Result<()> {
        for w in self.nodes.windows(2) {
            if w[1].id <= w[0].id {
                return Err(Error::InvalidParameter(format!(
                    "nodes out of order at {} / {}",
                    w[0].id, w[1].id
                )));
            }
        }
        for (ord, found) in self.node_of_location.iter().enumerate() {
            if *found == usize::MAX {
                return Err(Error::InvalidParameter(format!(
                    "location ordinal {ord} not assigned to any node"
                )));
            }
        }
        for node in &self.nodes {
            if node.locs.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "node {} owns no locations",
                    node.id
                )));
            }
            for pair in node.parents.windows(2) {
                if self.nodes[pair[1]].id <= self.nodes[pair[0]].id {
                    return Err(Error::InvalidParameter(format!(
                        "parents of {} not sorted",
                        node.id
                    )));
                }
            }
            for &p in &node.parents {
                if self.nodes[p].id.level >= node.id.level {
                    return Err(Error::InvalidParameter(format!(
                        "edge from {} up to {} does not descend",
                        self.nodes[p].id, node.id
                    )));
                }
                if self.nodes[p].role == NodeRole::Leaf {
                    return Err(Error::InvalidParameter(format!(
                        "leaf {} has child {}",
                        self.nodes[p].id, node.id
                    )));
                }
            }
        }
        Ok(())
    }

    // ──────────────────────────────────────────────────────────────────
    // Accessors
    // ──────────────────────────────────────────────────────────────────

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, ord: usize) -> &Node {
        &self.nodes[ord]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn location(&self, ord: usize) -> &ExpandedLocation<T> {
        &self.locations[ord]
    }

    pub fn locations(&self) -> &[ExpandedLocation<T>] {
        &self.locations
    }

    pub fn observed(&self, ord: usize) -> bool {
        self.observed[ord]
    }

    /// Node ordinal owning a location ordinal.
    pub fn node_of(&self, loc: usize) -> usize {
        self.node_of_location[loc]
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Maximum node level present (leaves included).
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Effective conditioning depth.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Level at which parent nesting starts (`levels - depth`).
    pub fn nest_floor(&self) -> usize {
        self.nest_floor
    }

    pub fn diagnostics(&self) -> &BuildDiagnostics {
        &self.diagnostics
    }

    pub fn ordinal_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok()
    }

    /// Total location count across a node's parent set.
    pub fn parent_span(&self, ord: usize) -> usize {
        self.nodes[ord]
            .parents
            .iter()
            .map(|&p| self.nodes[p].locs.len())
            .sum()
    }

    /// Reference locations count (locations owned by branch nodes).
    pub fn n_reference(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.role == NodeRole::Branch)
            .map(|n| n.locs.len())
            .sum()
    }

    // ──────────────────────────────────────────────────────────────────
    // Graph queries
    // ──────────────────────────────────────────────────────────────────

    /// All ancestors of `ord` (transitive parents), sorted by id, without
    /// `ord` itself.
    pub fn ancestors(&self, ord: usize) -> Vec<usize> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<usize> = self.nodes[ord].parents.clone();
        while let Some(p) = stack.pop() {
            if seen.insert(p) {
                stack.extend(self.nodes[p].parents.iter().copied());
            }
        }
        seen.into_iter().collect()
    }

    /// Common descendants of a node pair: `({i} ∪ ch(i)) ∩ ({j} ∪ ch(j))`.
    ///
    /// This is the index set that decides whether a precision block (i, j)
    /// is structurally nonzero.
    pub fn common_descendants(&self, i: usize, j: usize) -> Vec<usize> {
        let set_of = |k: usize| -> BTreeSet<usize> {
            let mut s: BTreeSet<usize> = self.nodes[k].children.iter().copied().collect();
            s.insert(k);
            s
        };
        set_of(i).intersection(&set_of(j)).copied().collect()
    }

    /// Deepest node with directed paths to both `i` and `j` (either node
    /// counts as its own ancestor). `None` when the two sit under disjoint
    /// roots. Ties, possible only in handmade graphs, break toward the
    /// larger ordinal.
    pub fn concestor(&self, i: usize, j: usize) -> Option<usize> {
        let with_self = |k: usize| -> BTreeSet<usize> {
            let mut s: BTreeSet<usize> = self.ancestors(k).into_iter().collect();
            s.insert(k);
            s
        };
        with_self(i)
            .intersection(&with_self(j))
            .max_by_key(|&&k| (self.nodes[k].id, k))
            .copied()
    }

    /// Shortest parent-edge path from `z` down at `i`, endpoints included,
    /// returned root-end first. In the nested region a single hop from an
    /// ancestor at the nest floor counts as one step, so paths jump straight
    /// to the floor and then follow the one-parent chain.
    pub fn path_from(&self, z: usize, i: usize) -> Option<Vec<usize>> {
        if z == i {
            return Some(vec![i]);
        }
        // BFS from i along parent edges; parents are few, graphs shallow.
        let mut prev: BTreeMap<usize, usize> = BTreeMap::new();
        let mut queue = VecDeque::from([i]);
        while let Some(cur) = queue.pop_front() {
            for &p in &self.nodes[cur].parents {
                if p != i && !prev.contains_key(&p) {
                    prev.insert(p, cur);
                    if p == z {
                        let mut path = vec![z];
                        let mut at = z;
                        while at != i {
                            at = prev[&at];
                            path.push(at);
                        }
                        return Some(path);
                    }
                    queue.push_back(p);
                }
            }
        }
        None
    }

    /// Concestor plus the two shortest paths from it, root-end first.
    pub fn concestor_and_paths(
        &self,
        i: usize,
        j: usize,
    ) -> Option<(usize, Vec<usize>, Vec<usize>)> {
        let z = self.concestor(i, j)?;
        Some((
            z,
            self.path_from(z, i).expect("path to concestor exists"),
            self.path_from(z, j).expect("path to concestor exists"),
        ))
    }

    /// Gibbs sweep phases. Within a phase no two nodes are adjacent or share
    /// a child, so they can be sampled concurrently:
    ///
    /// * full depth — one phase per level, deepest first;
    /// * depth 1 — two phases by level parity (even, then odd);
    /// * otherwise — one phase per level down to the nest floor, then the
    ///   chain region by parity.
    pub fn sampling_phases(&self) -> Vec<Vec<usize>> {
        let by_level = |lv: usize| -> Vec<usize> {
            self.nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| n.id.level == lv)
                .map(|(ord, _)| ord)
                .collect()
        };
        let mut phases = Vec::new();
        if self.levels == 0 {
            phases.push(by_level(0));
        } else if self.depth == 1 {
            for parity in [0usize, 1] {
                let phase: Vec<usize> = (0..=self.levels)
                    .filter(|lv| lv % 2 == parity)
                    .flat_map(by_level)
                    .collect();
                phases.push(phase);
            }
        } else {
            for lv in (self.nest_floor..=self.levels).rev() {
                phases.push(by_level(lv));
            }
            if self.nest_floor > 0 {
                let top = self.nest_floor - 1;
                for parity in [top % 2, (top + 1) % 2] {
                    let phase: Vec<usize> = (0..self.nest_floor)
                        .filter(|lv| lv % 2 == parity)
                        .flat_map(by_level)
                        .collect();
                    if !phase.is_empty() {
                        phases.push(phase);
                    }
                }
            }
        }
        phases.retain(|p| !p.is_empty());
        phases
    }

    /// Picks the terminal branch for a location outside the model (or a
    /// non-reference location during construction): the terminal holding
    /// the nearest reference location of the same variable, falling back
    /// to the nearest terminal over all variables.
    ///
    /// Returns `(branch ordinal, used_fallback)`.
    pub fn cherry_pick(&self, loc: &ExpandedLocation<T>) -> (usize, bool) {
        let terminals: Vec<usize> = (0..self.nodes.len())
            .filter(|&b| {
                self.nodes[b].role == NodeRole::Branch
                    && self.nodes[b]
                        .children
                        .iter()
                        .all(|&c| self.nodes[c].role == NodeRole::Leaf)
            })
            .collect();
        let mut best: Option<(T, NodeId, usize, usize)> = None;
        let mut any: Option<(T, NodeId, usize, usize)> = None;
        for &b in &terminals {
            for &r in &self.nodes[b].locs {
                let d = loc.dist_sq(&self.locations[r]);
                let key = (d, self.nodes[b].id, r, b);
                let better = |cur: &Option<(T, NodeId, usize, usize)>| match cur {
                    None => true,
                    Some((cd, cid, cr, _)) => {
                        d < *cd || (d == *cd && (self.nodes[b].id, r) < (*cid, *cr))
                    }
                };
                if better(&any) {
                    any = Some(key);
                }
                if self.locations[r].var == loc.var && better(&best) {
                    best = Some(key);
                }
            }
        }
        match (best, any) {
            (Some((_, _, _, b)), _) => (b, false),
            (None, Some((_, _, _, b))) => (b, true),
            (None, None) => unreachable!("at least one terminal branch exists"),
        }
    }

    /// Clones the graph with extra locations attached as fresh leaf nodes
    /// (cherry-picked onto terminal branches, one leaf per new group of
    /// terminal × variable). The new locations are marked unobserved; their
    /// ordinals continue the existing numbering.
    ///
    /// This is how the model extends to points outside the data: the added
    /// leaves change nothing about the law of the existing locations.
    pub fn with_extra_leaves(&self, extra: Vec<ExpandedLocation<T>>) -> Result<Self> {
        let mut level_counts: BTreeMap<usize, usize> = BTreeMap::new();
        for node in &self.nodes {
            let c = level_counts.entry(node.id.level).or_default();
            *c = (*c).max(node.id.index + 1);
        }
        let mut spec: Vec<(NodeId, NodeRole, Vec<NodeId>, Vec<usize>)> = self
            .nodes
            .iter()
            .map(|n| {
                (
                    n.id,
                    n.role,
                    n.parents.iter().map(|&p| self.nodes[p].id).collect(),
                    n.locs.clone(),
                )
            })
            .collect();
        let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        let base = self.locations.len();
        for (k, loc) in extra.iter().enumerate() {
            let (terminal, _) = self.cherry_pick(loc);
            groups
                .entry((terminal, loc.var))
                .or_default()
                .push(base + k);
        }
        for ((terminal, _var), locs) in groups {
            let level = self.nodes[terminal].id.level + 1;
            let slot = level_counts.entry(level).or_default();
            let id = NodeId {
                level,
                index: *slot,
            };
            *slot += 1;
            // Same parent rule as construction: single parent inside the
            // chain region, the terminal plus its nested ancestors above it.
            let parent_ids: Vec<NodeId> = if level <= self.nest_floor {
                vec![self.nodes[terminal].id]
            } else {
                let mut ids: Vec<NodeId> = self.nodes[terminal]
                    .parents
                    .iter()
                    .map(|&p| self.nodes[p].id)
                    .collect();
                ids.push(self.nodes[terminal].id);
                ids
            };
            spec.push((id, NodeRole::Leaf, parent_ids, locs));
        }
        let mut locations = self.locations.clone();
        locations.extend(extra);
        let mut observed = self.observed.clone();
        observed.resize(locations.len(), false);
        Self::from_parts(
            locations,
            observed,
            spec,
            self.depth.max(1),
            self.diagnostics.clone(),
        )
    }

    /// Leaf node under `terminal` holding variable `var`, if one exists.
    pub fn leaf_for(&self, terminal: usize, var: usize) -> Option<usize> {
        self.nodes[terminal].children.iter().copied().find(|&c| {
            self.nodes[c].role == NodeRole::Leaf && self.locations[self.nodes[c].locs[0]].var == var
        })
    }

    // ──────────────────────────────────────────────────────────────────
    // Text serialization
    // ──────────────────────────────────────────────────────────────────

    /// Line-oriented text form: header, one node per line (id, level, role,
    /// parent ids, assigned location ordinals), then fallback diagnostics.
    /// Locations themselves are not embedded; ordinals refer to the data
    /// file the model was built from.
    pub fn to_text(&self) -> String {
        let mut out = String::from("treegp dag v1\n");
        out.push_str(&format!(
            "dim {} vars {} levels {} depth {} nodes {} locations {}\n",
            self.dim,
            self.n_vars,
            self.levels,
            self.depth,
            self.nodes.len(),
            self.locations.len()
        ));
        for node in &self.nodes {
            let role = match node.role {
                NodeRole::Branch => "branch",
                NodeRole::Leaf => "leaf",
            };
            let parents = if node.parents.is_empty() {
                "-".to_string()
            } else {
                node.parents
                    .iter()
                    .map(|&p| self.nodes[p].id.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let locs = node
                .locs
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(",");
            out.push_str(&format!(
                "node {} {} parents {} locs {}\n",
                node.id, role, parents, locs
            ));
        }
        if !self.diagnostics.fallback_assignments.is_empty() {
            let list = self
                .diagnostics
                .fallback_assignments
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(",");
            out.push_str(&format!("fallbacks {list}\n"));
        }
        out
    }

    /// Parses [`TreedDag::to_text`] output back against the location list it
    /// was built from.
    ///
    /// # Errors
    ///
    /// Reports the offending line on any malformed input, and rejects
    /// headers that disagree with the provided locations.
    pub fn from_text(
        text: &str,
        locations: Vec<ExpandedLocation<T>>,
        observed: Vec<bool>,
        path: &str,
    ) -> Result<Self> {
        let bad = |line: usize, message: &str| Error::Parse {
            path: path.to_string(),
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, magic) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        if magic.trim() != "treegp dag v1" {
            return Err(bad(1, "not a treegp dag file"));
        }
        let (_, header) = lines.next().ok_or_else(|| bad(2, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let header_val = |key: &str| -> Result<usize> {
            fields
                .iter()
                .position(|&f| f == key)
                .and_then(|i| fields.get(i + 1))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(2, &format!("missing header field {key}")))
        };
        let dim = header_val("dim")?;
        let n_vars = header_val("vars")?;
        let depth = header_val("depth")?;
        let n_locations = header_val("locations")?;
        if n_locations != locations.len() {
            return Err(Error::ModelMismatch(format!(
                "dag built over {n_locations} locations, data has {}",
                locations.len()
            )));
        }
        if !locations.is_empty() && locations[0].coords.len() != dim {
            return Err(Error::ModelMismatch(format!(
                "dag expects {dim}-dimensional coordinates"
            )));
        }
        let _ = n_vars;
        let mut spec = Vec::new();
        let mut fallbacks = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            match words.next() {
                Some("node") => {
                    let id = words
                        .next()
                        .and_then(parse_node_id)
                        .ok_or_else(|| bad(lineno, "bad node id"))?;
                    let role = match words.next() {
                        Some("branch") => NodeRole::Branch,
                        Some("leaf") => NodeRole::Leaf,
                        _ => return Err(bad(lineno, "bad role")),
                    };
                    if words.next() != Some("parents") {
                        return Err(bad(lineno, "expected parents"));
                    }
                    let parents_str = words.next().ok_or_else(|| bad(lineno, "missing parents"))?;
                    let parents: Vec<NodeId> = if parents_str == "-" {
                        Vec::new()
                    } else {
                        parents_str
                            .split(',')
                            .map(|p| parse_node_id(p).ok_or_else(|| bad(lineno, "bad parent id")))
                            .collect::<Result<_>>()?
                    };
                    if words.next() != Some("locs") {
                        return Err(bad(lineno, "expected locs"));
                    }
                    let locs_str = words.next().ok_or_else(|| bad(lineno, "missing locs"))?;
                    let locs: Vec<usize> = locs_str
                        .split(',')
                        .map(|t| t.parse().map_err(|_| bad(lineno, "bad location ordinal")))
                        .collect::<std::result::Result<_, _>>()?;
                    spec.push((id, role, parents, locs));
                }
                Some("fallbacks") => {
                    let list = words
                        .next()
                        .ok_or_else(|| bad(lineno, "missing fallback list"))?;
                    fallbacks = list
                        .split(',')
                        .map(|t| t.parse().map_err(|_| bad(lineno, "bad fallback ordinal")))
                        .collect::<std::result::Result<_, _>>()?;
                }
                _ => return Err(bad(lineno, "unrecognized line")),
            }
        }
        Self::from_parts(
            locations,
            observed,
            spec,
            depth.max(1),
            BuildDiagnostics {
                fallback_assignments: fallbacks,
            },
        )
    }
}

fn parse_node_id(s: &str) -> Option<NodeId> {
    let (level, index) = s.split_once(':')?;
    Some(NodeId {
        level: level.parse().ok()?,
        index: index.parse().ok()?,
    })
}

/// Rejects exact duplicates in the expanded domain (same coordinates and
/// variable), reporting the first offending ordinal pair.
fn check_duplicates<T: Real>(locations: &[ExpandedLocation<T>]) -> Result<()> {
    let mut order: Vec<usize> = (0..locations.len()).collect();
    order.sort_by(|&a, &b| {
        let (la, lb) = (&locations[a], &locations[b]);
        la.var.cmp(&lb.var).then_with(|| {
            la.coords
                .partial_cmp(&lb.coords)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    for w in order.windows(2) {
        if locations[w[0]] == locations[w[1]] {
            return Err(Error::DuplicateLocation {
                first: w[0].min(w[1]),
                second: w[0].max(w[1]),
            });
        }
    }
    Ok(())
}

/// Coarsens a row-major cell key from a `cells`-per-axis grid to the grid
/// `shift` times coarser.
fn project_cell(cell: usize, cells: usize, shift: usize, dim: usize) -> usize {
    let mut rem = cell;
    let mut axes = vec![0usize; dim];
    for a in (0..dim).rev() {
        axes[a] = rem % cells;
        rem /= cells;
    }
    let coarse = cells / shift;
    axes.iter()
        .fold(0usize, |key, ax| key * coarse + ax / shift)
}

/// One weighted pick per non-empty sub-cell of a branch cell.
#[allow(clippy::too_many_arguments)]
fn pick_stratified<T: Real>(
    cand: &[usize],
    locations: &[ExpandedLocation<T>],
    grid: &DomainGrid<T>,
    weights: &[T],
    cell: usize,
    cells_per_axis: usize,
    sub_axis: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<usize> {
    let fine = cells_per_axis * sub_axis;
    let mut by_sub: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &ord in cand {
        let fine_cell = grid.cell_of(&locations[ord].coords, fine);
        debug_assert_eq!(
            project_cell(fine_cell, fine, sub_axis, locations[ord].coords.len()),
            cell
        );
        by_sub.entry(fine_cell).or_default().push(ord);
    }
    let mut picks = Vec::with_capacity(by_sub.len());
    for group in by_sub.values() {
        if group.len() == 1 {
            picks.push(group[0]);
            continue;
        }
        let total: T = group.iter().map(|&o| weights[locations[o].var]).sum();
        let u: T = rng.gen_range(T::zero()..T::one()) * total;
        let mut acc = T::zero();
        let mut chosen = group[group.len() - 1];
        for &o in group {
            acc += weights[locations[o].var];
            if u < acc {
                chosen = o;
                break;
            }
        }
        picks.push(chosen);
    }
    picks
}

/// Nearest terminal for one location during construction (operates on proto
/// branches, before final ordinals exist). Same tie-breaking as
/// [`TreedDag::cherry_pick`]: distance, then (level, index, ordinal).
fn nearest_terminal<T: Real>(
    locations: &[ExpandedLocation<T>],
    branches: &[ProtoBranch],
    terminals: &[usize],
    loc: &ExpandedLocation<T>,
) -> (usize, bool) {
    let mut best: Option<(T, usize, usize, usize)> = None;
    let mut any: Option<(T, usize, usize, usize)> = None;
    for &b in terminals {
        let pb = &branches[b];
        for &r in &pb.locs {
            let d = loc.dist_sq(&locations[r]);
            let better = |cur: &Option<(T, usize, usize, usize)>| match cur {
                None => true,
                Some((cd, cl, ci, cr)) => {
                    d < *cd || (d == *cd && (pb.level, pb.index, r) < (*cl, *ci, *cr))
                }
            };
            if better(&any) {
                any = Some((d, pb.level, pb.index, b));
            }
            if locations[r].var == loc.var && better(&best) {
                best = Some((d, pb.level, pb.index, b));
            }
        }
    }
    match (best, any) {
        (Some((.., b)), _) => (b, false),
        (None, Some((.., b))) => (b, true),
        (None, None) => unreachable!("terminal set is never empty"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn uniform_points(n: usize, q: usize, seed: u64) -> Vec<ExpandedLocation<f64>> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| ExpandedLocation::new(vec![rng.gen::<f64>(), rng.gen::<f64>()], i % q))
            .collect()
    }

    fn build(n: usize, q: usize, params: &TreeParams<f64>) -> TreedDag<f64> {
        let locs = uniform_points(n, q, 42);
        let observed = vec![true; n];
        let mut params = params.clone();
        params.bias_weights = vec![1.0; q];
        TreedDag::build(locs, observed, &params).unwrap()
    }

    fn params(levels: usize, depth: usize, subset: usize) -> TreeParams<f64> {
        TreeParams {
            levels,
            depth,
            fanout: 2,
            subset_size: subset,
            bias_weights: vec![1.0],
            seed: 9,
        }
    }

    #[test]
    fn small_build_partitions_and_validates() {
        let dag = build(100, 1, &params(2, 2, 4));
        assert_eq!(dag.nodes().iter().map(|n| n.locs.len()).sum::<usize>(), 100);
        // Root owns about subset_size locations.
        assert!(dag.node(0).locs.len() <= 4);
        assert_eq!(dag.node(0).id, NodeId { level: 0, index: 0 });
        dag.validate().unwrap();
    }

    #[test]
    fn single_level_tree_with_full_subset_is_all_reference() {
        let dag = build(60, 1, &params(1, 1, 60));
        assert_eq!(dag.n_nodes(), 1);
        assert_eq!(dag.n_reference(), 60);
        assert!(dag.node(0).parents.is_empty());
        assert!(dag.node(0).children.is_empty());
    }

    #[test]
    fn full_depth_parents_cover_every_shallower_level() {
        let dag = build(400, 2, &params(3, 3, 16));
        for node in dag.nodes() {
            if node.id.level > 0 {
                let levels: Vec<usize> =
                    node.parents.iter().map(|&p| dag.node(p).id.level).collect();
                let expect: Vec<usize> = (0..node.id.level).collect();
                assert_eq!(levels, expect, "node {}", node.id);
            }
        }
    }

    #[test]
    fn depth_one_parents_are_single_immediate() {
        let dag = build(400, 2, &params(3, 1, 16));
        for node in dag.nodes() {
            if node.id.level > 0 {
                assert_eq!(node.parents.len(), 1, "node {}", node.id);
                assert_eq!(dag.node(node.parents[0]).id.level, node.id.level - 1);
            }
        }
    }

    #[test]
    fn intermediate_depth_caps_parent_sets() {
        let dag = build(500, 2, &params(3, 2, 16));
        assert_eq!(dag.nest_floor(), dag.levels() - 2);
        for node in dag.nodes() {
            let lv = node.id.level;
            if lv == 0 {
                assert!(node.parents.is_empty());
            } else if lv <= dag.nest_floor() {
                assert_eq!(node.parents.len(), 1);
            } else {
                assert_eq!(node.parents.len(), lv - dag.nest_floor());
            }
        }
    }

    #[test]
    fn leaves_group_by_terminal_and_variable() {
        let dag = build(300, 2, &params(2, 2, 9));
        for node in dag.nodes() {
            if node.role == NodeRole::Leaf {
                assert!(node.children.is_empty());
                let var = dag.location(node.locs[0]).var;
                assert!(node.locs.iter().all(|&l| dag.location(l).var == var));
                let terminal = *node.parents.last().unwrap();
                assert_eq!(dag.node(terminal).role, NodeRole::Branch);
            }
        }
    }

    #[test]
    fn cherry_pick_matches_brute_force_nearest_reference() {
        let dag = build(250, 2, &params(2, 2, 9));
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..50 {
            let probe = ExpandedLocation::new(vec![rng.gen(), rng.gen()], rng.gen_range(0..2));
            let (terminal, fallback) = dag.cherry_pick(&probe);
            assert!(!fallback);
            // The chosen terminal must contain the globally nearest
            // same-variable reference among all terminal branches.
            let mut best: Option<(f64, usize)> = None;
            for (ord, node) in dag.nodes().iter().enumerate() {
                let is_terminal = node.role == NodeRole::Branch
                    && node
                        .children
                        .iter()
                        .all(|&c| dag.node(c).role == NodeRole::Leaf);
                if !is_terminal {
                    continue;
                }
                for &r in &node.locs {
                    if dag.location(r).var != probe.var {
                        continue;
                    }
                    let d = probe.dist_sq(dag.location(r));
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, ord));
                    }
                }
            }
            let (best_d, _) = best.unwrap();
            let chosen_d = dag
                .node(terminal)
                .locs
                .iter()
                .filter(|&&r| dag.location(r).var == probe.var)
                .map(|&r| probe.dist_sq(dag.location(r)))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(chosen_d, best_d);
        }
    }

    #[test]
    fn phases_never_put_neighbors_or_coparents_together() {
        for depth in [1, 2, 3] {
            let dag = build(350, 2, &params(3, depth, 9));
            let phases = dag.sampling_phases();
            let covered: usize = phases.iter().map(Vec::len).sum();
            assert_eq!(covered, dag.n_nodes());
            for phase in &phases {
                let set: BTreeSet<usize> = phase.iter().copied().collect();
                for &a in phase {
                    for &p in &dag.node(a).parents {
                        assert!(!set.contains(&p), "parent edge inside a phase");
                    }
                    for &c in &dag.node(a).children {
                        for &p2 in &dag.node(c).parents {
                            assert!(
                                p2 == a || !set.contains(&p2),
                                "co-parents {a} and {p2} share child {c} in one phase"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn concestor_and_paths_on_a_handmade_graph() {
        // root -> a, root -> b, a -> leaf_a (chain region semantics).
        let locs = vec![
            ExpandedLocation::new(vec![0.0, 0.0], 0),
            ExpandedLocation::new(vec![1.0, 0.0], 0),
            ExpandedLocation::new(vec![0.0, 1.0], 0),
            ExpandedLocation::new(vec![1.0, 1.0], 0),
        ];
        let id = |level, index| NodeId { level, index };
        let dag = TreedDag::from_parts(
            locs,
            vec![true; 4],
            vec![
                (id(0, 0), NodeRole::Branch, vec![], vec![0]),
                (id(1, 0), NodeRole::Branch, vec![id(0, 0)], vec![1]),
                (id(1, 1), NodeRole::Branch, vec![id(0, 0)], vec![2]),
                (id(2, 0), NodeRole::Leaf, vec![id(1, 0)], vec![3]),
            ],
            1,
            BuildDiagnostics::default(),
        )
        .unwrap();
        let a = dag.ordinal_of(id(1, 0)).unwrap();
        let b = dag.ordinal_of(id(1, 1)).unwrap();
        let leaf = dag.ordinal_of(id(2, 0)).unwrap();
        let root = dag.ordinal_of(id(0, 0)).unwrap();
        let (z, pi, pj) = dag.concestor_and_paths(a, b).unwrap();
        assert_eq!(z, root);
        assert_eq!(pi, vec![root, a]);
        assert_eq!(pj, vec![root, b]);
        let (z2, pi2, pj2) = dag.concestor_and_paths(leaf, b).unwrap();
        assert_eq!(z2, root);
        assert_eq!(pi2, vec![root, a, leaf]);
        assert_eq!(pj2, vec![root, b]);
        assert_eq!(dag.common_descendants(a, b), Vec::<usize>::new());
        assert_eq!(dag.common_descendants(root, a), vec![a]);
    }

    #[test]
    fn serialization_round_trips() {
        let dag = build(150, 2, &params(2, 2, 9));
        let text = dag.to_text();
        let restored = TreedDag::from_text(
            &text,
            dag.locations().to_vec(),
            (0..dag.n_locations()).map(|o| dag.observed(o)).collect(),
            "mem",
        )
        .unwrap();
        assert_eq!(restored.to_text(), text);
        assert_eq!(restored.n_nodes(), dag.n_nodes());
        assert_eq!(restored.depth(), dag.depth());
    }

    #[test]
    fn rejects_duplicates_and_bad_params() {
        let mut locs = uniform_points(10, 1, 3);
        locs[7] = locs[2].clone();
        let err = TreedDag::build(locs, vec![true; 10], &params(2, 2, 4)).unwrap_err();
        assert!(matches!(
            err,
            Error::DuplicateLocation {
                first: 2,
                second: 7
            }
        ));

        let err = TreedDag::build(uniform_points(10, 1, 3), vec![true; 10], &params(2, 2, 11))
            .unwrap_err();
        assert!(err.to_string().contains("subset size"));
    }

    #[test]
    fn seeded_builds_are_reproducible() {
        let a = build(300, 2, &params(3, 3, 9));
        let b = build(300, 2, &params(3, 3, 9));
        assert_eq!(a.to_text(), b.to_text());
    }
}
