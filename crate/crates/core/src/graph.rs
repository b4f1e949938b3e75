//! Typed label-relation graph.
//!
//! A [`LabelGraph`] holds every label of a task — the *desired* (unseen)
//! classes we want training labels for and the *seen* classes that indirect
//! labeling functions can actually emit — together with a total map of
//! pairwise relations. Relations come in four types mirroring set relations
//! between label extensions: two labels are `Exclusive` (disjoint sets),
//! `Overlapping` (proper intersection), or one `Subsuming`/`Subsumed` by the
//! other (strict containment).
//!
//! The module also provides the structural sanity tests that gate model
//! fitting: triangle consistency against the 23 forbidden relation triplets,
//! distinguishability of desired-label pairs, and ILF informativeness.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::IlfOutputMatrix;

/// Dense integer handle for a label in a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub usize);

impl std::fmt::Display for LabelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Whether a label is a target class or an ILF-visible class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Target (unseen) class: no ILF can emit it.
    Desired,
    /// Class appearing in at least one ILF's output space.
    Seen,
}

/// A label node: dense id, display name, role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub id: LabelId,
    pub name: String,
    pub role: Role,
}

/// Pairwise relation between two labels, read left-to-right:
/// `relation(a, b) = Subsuming` means the extension of `a` strictly
/// contains the extension of `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationType {
    Exclusive,
    Overlapping,
    Subsuming,
    Subsumed,
}

impl RelationType {
    /// Relation seen from the opposite orientation. Exclusive and
    /// Overlapping are symmetric; Subsuming and Subsumed swap.
    pub fn inverse(self) -> RelationType {
        match self {
            RelationType::Exclusive => RelationType::Exclusive,
            RelationType::Overlapping => RelationType::Overlapping,
            RelationType::Subsuming => RelationType::Subsumed,
            RelationType::Subsumed => RelationType::Subsuming,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelationType::Exclusive => "exclusive",
            RelationType::Overlapping => "overlapping",
            RelationType::Subsuming => "subsuming",
            RelationType::Subsumed => "subsumed",
        }
    }
}

impl std::fmt::Display for RelationType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One indirect labeling function: an id, the seen labels it can emit,
/// and whether it may abstain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IlfSpec {
    pub ilf_id: usize,
    pub output_space: Vec<LabelId>,
    pub can_abstain: bool,
}

impl IlfSpec {
    pub fn new(ilf_id: usize, mut output_space: Vec<LabelId>, can_abstain: bool) -> Self {
        output_space.sort_unstable();
        output_space.dedup();
        IlfSpec { ilf_id, output_space, can_abstain }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown label id {0}")]
    UnknownLabel(LabelId),
    #[error("self-relation requested for label {0}; labels are never related to themselves")]
    SelfRelation(LabelId),
    #[error("label ids must be unique and contiguous from 0; problem at id {0}")]
    NonDenseIds(usize),
    #[error("duplicate label name {0:?}")]
    DuplicateName(String),
    #[error("relation for pair ({0}, {1}) given more than once")]
    DuplicateRelation(LabelId, LabelId),
    #[error("missing relation for pair ({0}, {1}); the relation map must be total")]
    MissingRelation(LabelId, LabelId),
    #[error("desired labels {0} and {1} must be exclusive (multi-class target space)")]
    DesiredPairNotExclusive(LabelId, LabelId),
    #[error("ILF {ilf_id} output space is empty")]
    EmptyIlfSpace { ilf_id: usize },
    #[error("ILF {ilf_id} output space contains non-seen label {label}")]
    IlfSpaceNotSeen { ilf_id: usize, label: LabelId },
    #[error("DAG edge references node {0} outside 0..{1}")]
    DagNodeOutOfRange(usize, usize),
    #[error("cycle detected in taxonomy DAG involving node {0}")]
    DagCycle(usize),
    #[error("output matrix has {got} ILF columns, expected {expected}")]
    OutputsShape { expected: usize, got: usize },
}

/// The 23 relation triplets that no family of non-empty sets can realize,
/// in `(t_ab, t_bc, t_ac)` orientation for an ordered triple `a < b < c`.
pub const FORBIDDEN_TRIPLETS: [[RelationType; 3]; 23] = {
    use RelationType::{Exclusive as E, Overlapping as O, Subsumed as Sd, Subsuming as Sg};
    [
        [O, Sd, Sg],
        [O, Sd, E],
        [O, Sg, Sd],
        [O, E, Sd],
        [E, Sd, Sg],
        [E, O, Sg],
        [E, Sg, Sg],
        [E, Sg, Sd],
        [E, Sg, O],
        [Sg, E, Sd],
        [Sg, Sd, E],
        [Sg, O, Sd],
        [Sg, O, E],
        [Sg, Sg, E],
        [Sg, Sg, Sd],
        [Sg, Sg, O],
        [Sd, O, Sg],
        [Sd, Sd, E],
        [Sd, Sd, Sg],
        [Sd, Sd, O],
        [Sd, E, Sg],
        [Sd, E, Sd],
        [Sd, E, O],
    ]
};

/// Index into [`FORBIDDEN_TRIPLETS`] if the oriented triplet is forbidden.
pub fn forbidden_triplet_index(t: [RelationType; 3]) -> Option<usize> {
    FORBIDDEN_TRIPLETS.iter().position(|row| *row == t)
}

/// One inconsistent triangle found by [`LabelGraph::check_consistency`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriangleViolation {
    /// The triple in ascending id order.
    pub labels: [LabelId; 3],
    /// Relations read in `(a,b), (b,c), (a,c)` orientation.
    pub relations: [RelationType; 3],
    /// Row matched in [`FORBIDDEN_TRIPLETS`].
    pub forbidden_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub consistent: bool,
    pub violations: Vec<TriangleViolation>,
}

/// A pair of desired labels with identical relation vectors toward every
/// seen label. Such a pair cannot be told apart by any model built from
/// this graph; `suggested_fixes` is free-form space for callers to record
/// seen labels whose addition would break the tie.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndistinctPair {
    pub pair: (LabelId, LabelId),
    pub suggested_fixes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistinguishabilityReport {
    pub distinguishable: bool,
    pub indistinct_pairs: Vec<IndistinctPair>,
}

/// Per-ILF informativeness flags. The structural check asks whether, for
/// every desired label, the ILF could in principle emit a label exclusive
/// to it; the empirical check asks whether it actually did so somewhere in
/// the observed outputs (abstention counts as a non-compatible output).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IlfInformativeness {
    pub ilf_id: usize,
    pub structurally_informative: bool,
    /// Desired labels for which no exclusive output exists.
    pub structurally_uninformative_for: Vec<LabelId>,
    /// `None` when no output matrix was supplied.
    pub empirically_informative: Option<bool>,
    pub empirically_uninformative_for: Vec<LabelId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformativenessReport {
    pub per_ilf: Vec<IlfInformativeness>,
}

impl InformativenessReport {
    pub fn all_structurally_informative(&self) -> bool {
        self.per_ilf.iter().all(|r| r.structurally_informative)
    }
}

/// Immutable typed label-relation graph with a total pairwise relation map.
///
/// Relations are stored once per unordered pair in lower-id-first
/// orientation; the inverse orientation is computed on query. Desired
/// labels are required to be pairwise exclusive (the target space of a
/// multi-class task).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGraph {
    labels: Vec<Label>,
    desired: Vec<LabelId>,
    seen: Vec<LabelId>,
    // triangular storage: pair (a < b) lives at index b*(b-1)/2 + a
    relations: Vec<RelationType>,
    name_index: HashMap<String, LabelId>,
}

fn pair_index(a: usize, b: usize) -> usize {
    debug_assert!(a < b);
    b * (b - 1) / 2 + a
}

impl LabelGraph {
    /// Builds a graph from labels and one relation entry per unordered pair.
    ///
    /// Entries may come in either orientation; each pair must appear exactly
    /// once. Desired-desired pairs must be exclusive.
    pub fn new(
        labels: Vec<Label>,
        relations: impl IntoIterator<Item = (LabelId, LabelId, RelationType)>,
    ) -> Result<Self, GraphError> {
        let n = labels.len();
        let mut seen_ids = vec![false; n];
        let mut name_index = HashMap::with_capacity(n);
        for label in &labels {
            if label.id.0 >= n || seen_ids[label.id.0] {
                return Err(GraphError::NonDenseIds(label.id.0));
            }
            seen_ids[label.id.0] = true;
            if name_index.insert(label.name.clone(), label.id).is_some() {
                return Err(GraphError::DuplicateName(label.name.clone()));
            }
        }
        let mut by_id = labels;
        by_id.sort_by_key(|l| l.id.0);

        let mut stored: Vec<Option<RelationType>> = vec![None; n * (n - 1) / 2];
        for (a, b, t) in relations {
            if a.0 >= n {
                return Err(GraphError::UnknownLabel(a));
            }
            if b.0 >= n {
                return Err(GraphError::UnknownLabel(b));
            }
            if a == b {
                return Err(GraphError::SelfRelation(a));
            }
            let (lo, hi, canonical) = if a.0 < b.0 { (a.0, b.0, t) } else { (b.0, a.0, t.inverse()) };
            let slot = &mut stored[pair_index(lo, hi)];
            if slot.is_some() {
                return Err(GraphError::DuplicateRelation(LabelId(lo), LabelId(hi)));
            }
            *slot = Some(canonical);
        }
        let mut relations = Vec::with_capacity(stored.len());
        for b in 1..n {
            for a in 0..b {
                match stored[pair_index(a, b)] {
                    Some(t) => relations.push(t),
                    None => return Err(GraphError::MissingRelation(LabelId(a), LabelId(b))),
                }
            }
        }
        // stored order above is (a,b) grouped by b; rebuild in index order
        let mut ordered = vec![RelationType::Exclusive; stored.len()];
        let mut k = 0;
        for b in 1..n {
            for a in 0..b {
                ordered[pair_index(a, b)] = relations[k];
                k += 1;
            }
        }

        let desired: Vec<LabelId> =
            by_id.iter().filter(|l| l.role == Role::Desired).map(|l| l.id).collect();
        let seen: Vec<LabelId> =
            by_id.iter().filter(|l| l.role == Role::Seen).map(|l| l.id).collect();

        let graph =
            LabelGraph { labels: by_id, desired, seen, relations: ordered, name_index };
        for (i, &a) in graph.desired.iter().enumerate() {
            for &b in &graph.desired[i + 1..] {
                if graph.rel(a.0, b.0) != RelationType::Exclusive {
                    return Err(GraphError::DesiredPairNotExclusive(a, b));
                }
            }
        }
        Ok(graph)
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, id: LabelId) -> Result<&Label, GraphError> {
        self.labels.get(id.0).ok_or(GraphError::UnknownLabel(id))
    }

    pub fn label_by_name(&self, name: &str) -> Option<&Label> {
        self.name_index.get(name).map(|id| &self.labels[id.0])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Desired label ids in ascending order.
    pub fn desired(&self) -> &[LabelId] {
        &self.desired
    }

    /// Seen label ids in ascending order.
    pub fn seen(&self) -> &[LabelId] {
        &self.seen
    }

    fn rel(&self, a: usize, b: usize) -> RelationType {
        if a < b {
            self.relations[pair_index(a, b)]
        } else {
            self.relations[pair_index(b, a)].inverse()
        }
    }

    /// Relation of `a` toward `b`, inverting the stored orientation when
    /// needed. Self-relations are rejected.
    pub fn relation(&self, a: LabelId, b: LabelId) -> Result<RelationType, GraphError> {
        if a.0 >= self.labels.len() {
            return Err(GraphError::UnknownLabel(a));
        }
        if b.0 >= self.labels.len() {
            return Err(GraphError::UnknownLabel(b));
        }
        if a == b {
            return Err(GraphError::SelfRelation(a));
        }
        Ok(self.rel(a.0, b.0))
    }

    /// Non-exclusive neighbors of `y` within the candidate set `s`,
    /// excluding `y` itself. Result is sorted and deduplicated.
    pub fn non_exclusive_neighbors(
        &self,
        y: LabelId,
        s: &[LabelId],
    ) -> Result<Vec<LabelId>, GraphError> {
        if y.0 >= self.labels.len() {
            return Err(GraphError::UnknownLabel(y));
        }
        let mut out = Vec::new();
        for &cand in s {
            if cand.0 >= self.labels.len() {
                return Err(GraphError::UnknownLabel(cand));
            }
            if cand == y {
                continue;
            }
            if self.rel(y.0, cand.0) != RelationType::Exclusive {
                out.push(cand);
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Scans every label triple for the forbidden relation patterns.
    pub fn check_consistency(&self) -> ConsistencyReport {
        let n = self.labels.len();
        let mut violations = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                let t_ab = self.rel(a, b);
                for c in b + 1..n {
                    let triplet = [t_ab, self.rel(b, c), self.rel(a, c)];
                    if let Some(idx) = forbidden_triplet_index(triplet) {
                        violations.push(TriangleViolation {
                            labels: [LabelId(a), LabelId(b), LabelId(c)],
                            relations: triplet,
                            forbidden_index: idx,
                        });
                    }
                }
            }
        }
        ConsistencyReport { consistent: violations.is_empty(), violations }
    }

    /// Flags every desired pair whose relation vectors toward the seen
    /// labels coincide. Such pairs are provably interchangeable under any
    /// positive parameterization of the models built from this graph.
    pub fn check_distinguishability(&self) -> DistinguishabilityReport {
        let mut indistinct = Vec::new();
        for (i, &a) in self.desired.iter().enumerate() {
            for &b in &self.desired[i + 1..] {
                let same = self
                    .seen
                    .iter()
                    .all(|&s| self.rel(a.0, s.0) == self.rel(b.0, s.0));
                if same {
                    indistinct.push(IndistinctPair { pair: (a, b), suggested_fixes: Vec::new() });
                }
            }
        }
        DistinguishabilityReport {
            distinguishable: indistinct.is_empty(),
            indistinct_pairs: indistinct,
        }
    }

    /// Validates ILF specs against this graph: non-empty output spaces made
    /// of seen labels only.
    pub fn validate_ilfs(&self, ilfs: &[IlfSpec]) -> Result<(), GraphError> {
        for spec in ilfs {
            if spec.output_space.is_empty() {
                return Err(GraphError::EmptyIlfSpace { ilf_id: spec.ilf_id });
            }
            for &label in &spec.output_space {
                let ok = label.0 < self.labels.len()
                    && self.labels[label.0].role == Role::Seen;
                if !ok {
                    return Err(GraphError::IlfSpaceNotSeen { ilf_id: spec.ilf_id, label });
                }
            }
        }
        Ok(())
    }

    /// Structural and (optionally) empirical informativeness per ILF.
    pub fn check_informativeness(
        &self,
        ilfs: &[IlfSpec],
        outputs: Option<&IlfOutputMatrix>,
    ) -> Result<InformativenessReport, GraphError> {
        self.validate_ilfs(ilfs)?;
        if let Some(m) = outputs {
            if m.n_ilfs() != ilfs.len() {
                return Err(GraphError::OutputsShape { expected: ilfs.len(), got: m.n_ilfs() });
            }
        }
        let mut per_ilf = Vec::with_capacity(ilfs.len());
        for (j, spec) in ilfs.iter().enumerate() {
            let mut structural_fail = Vec::new();
            let mut empirical_fail = Vec::new();
            for &y in &self.desired {
                let has_exclusive = spec
                    .output_space
                    .iter()
                    .any(|&s| self.rel(y.0, s.0) == RelationType::Exclusive);
                if !has_exclusive {
                    structural_fail.push(y);
                }
                if let Some(m) = outputs {
                    let neighbors: HashSet<LabelId> = self
                        .non_exclusive_neighbors(y, &spec.output_space)?
                        .into_iter()
                        .collect();
                    // abstention is an output not in N(y, Y_j)
                    let witnessed = m.column(j).any(|cell| match cell {
                        Some(label) => !neighbors.contains(&label),
                        None => true,
                    });
                    if !witnessed {
                        empirical_fail.push(y);
                    }
                }
            }
            per_ilf.push(IlfInformativeness {
                ilf_id: spec.ilf_id,
                structurally_informative: structural_fail.is_empty(),
                structurally_uninformative_for: structural_fail,
                empirically_informative: outputs.map(|_| empirical_fail.is_empty()),
                empirically_uninformative_for: empirical_fail,
            });
        }
        Ok(InformativenessReport { per_ilf })
    }

    /// Converts a taxonomy DAG (parent subsumes child) into the unique
    /// consistent label graph it induces. Node `i` takes `roles[i]` and
    /// `names[i]`.
    ///
    /// For each pair: reachability gives Subsuming/Subsumed, a shared
    /// descendant gives Overlapping, anything else is Exclusive.
    pub fn from_dag(
        edges: &[(usize, usize)],
        roles: &[Role],
        names: &[String],
    ) -> Result<Self, GraphError> {
        let n = roles.len();
        assert_eq!(names.len(), n, "one name per node");
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut indegree = vec![0usize; n];
        for &(parent, child) in edges {
            if parent >= n {
                return Err(GraphError::DagNodeOutOfRange(parent, n));
            }
            if child >= n {
                return Err(GraphError::DagNodeOutOfRange(child, n));
            }
            children[parent].push(child);
            indegree[child] += 1;
        }

        // Kahn's algorithm; leftover indegree means a cycle.
        let mut order = Vec::with_capacity(n);
        let mut queue: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        while let Some(v) = queue.pop() {
            order.push(v);
            for &c in &children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push(c);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|&v| indegree[v] > 0).unwrap_or(0);
            return Err(GraphError::DagCycle(stuck));
        }

        // desc[v] = v plus everything reachable from v
        let mut desc: Vec<Vec<bool>> = vec![vec![false; n]; n];
        for &v in order.iter().rev() {
            desc[v][v] = true;
            for ci in 0..children[v].len() {
                let c = children[v][ci];
                for w in 0..n {
                    if desc[c][w] {
                        desc[v][w] = true;
                    }
                }
            }
        }

        let labels: Vec<Label> = (0..n)
            .map(|i| Label { id: LabelId(i), name: names[i].clone(), role: roles[i] })
            .collect();
        let mut relations = Vec::with_capacity(n * (n - 1) / 2);
        for b in 1..n {
            for a in 0..b {
                let t = if desc[a][b] {
                    RelationType::Subsuming
                } else if desc[b][a] {
                    RelationType::Subsumed
                } else if (0..n).any(|w| desc[a][w] && desc[b][w]) {
                    RelationType::Overlapping
                } else {
                    RelationType::Exclusive
                };
                relations.push((LabelId(a), LabelId(b), t));
            }
        }
        LabelGraph::new(labels, relations)
    }
}

/// Incremental construction helper for tests and generators.
///
/// Missing desired-desired pairs default to Exclusive; with
/// [`LabelGraphBuilder::exclusive_by_default`] every unspecified pair does.
#[derive(Debug, Default)]
pub struct LabelGraphBuilder {
    labels: Vec<Label>,
    relations: Vec<(LabelId, LabelId, RelationType)>,
    fill_exclusive: bool,
}

impl LabelGraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_label(&mut self, name: &str, role: Role) -> LabelId {
        let id = LabelId(self.labels.len());
        self.labels.push(Label { id, name: name.to_string(), role });
        id
    }

    pub fn add_desired(&mut self, name: &str) -> LabelId {
        self.add_label(name, Role::Desired)
    }

    pub fn add_seen(&mut self, name: &str) -> LabelId {
        self.add_label(name, Role::Seen)
    }

    pub fn relate(&mut self, a: LabelId, b: LabelId, t: RelationType) -> &mut Self {
        self.relations.push((a, b, t));
        self
    }

    /// Treat every unspecified pair as Exclusive.
    pub fn exclusive_by_default(&mut self) -> &mut Self {
        self.fill_exclusive = true;
        self
    }

    pub fn build(&self) -> Result<LabelGraph, GraphError> {
        let mut relations = self.relations.clone();
        let mut present = HashSet::new();
        for &(a, b, _) in &relations {
            present.insert((a.0.min(b.0), a.0.max(b.0)));
        }
        let n = self.labels.len();
        for a in 0..n {
            for b in a + 1..n {
                if present.contains(&(a, b)) {
                    continue;
                }
                let both_desired = self.labels[a].role == Role::Desired
                    && self.labels[b].role == Role::Desired;
                if self.fill_exclusive || both_desired {
                    relations.push((LabelId(a), LabelId(b), RelationType::Exclusive));
                }
            }
        }
        LabelGraph::new(self.labels.clone(), relations)
    }
}
