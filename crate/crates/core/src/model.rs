//! Factor model over `(Y, Ybar, lambda)`.
//!
//! The model assigns every full configuration an unnormalized log-probability
//! `theta . phi(Y, Ybar, lambda)` where `phi` concatenates indicator factors
//! drawn from four dependency families:
//!
//! 1. **Pseudo-accuracy** — `1{Y = y and lambda_j = yhat}` for every ILF `j`
//!    and every `yhat` in its output space non-exclusive to `y`. A vote
//!    compatible with a desired label is weak evidence for it.
//! 2. **Accuracy** — `1{Ybar_i = 1 and lambda_j = yhat_i}`: an ILF agreeing
//!    with the latent membership bit of a label it can emit.
//! 3. **Seen-seen relation** — one factor per seen pair `(i < j)`, typed by
//!    their relation: exclusive pairs are penalized for co-activation
//!    (`-1{Ybar_i and Ybar_j}`), overlapping pairs rewarded (`+1{..}`),
//!    and containment penalizes a subsumed bit set without its subsumer.
//! 4. **Desired-seen relation** — the same convention between the desired
//!    variable `Y` and each membership bit.
//!
//! The full model uses all four families; the vote-only baseline keeps just
//! family 1 and ignores the latent bits entirely.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, IlfSpec, Label, LabelGraph, LabelId, RelationType};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("label graph failed the consistency check ({violations} bad triangles)")]
    InconsistentGraph { violations: usize },
    #[error("theta has length {got}, model has {expected} dependencies")]
    ThetaLength { expected: usize, got: usize },
    #[error("assignment shape mismatch: {0}")]
    AssignmentShape(String),
    #[error("observed label {label} for ILF {ilf_id} is outside its output space")]
    ObservedOutsideSpace { ilf_id: usize, label: LabelId },
    #[error("observed abstention for ILF {ilf_id} declared can_abstain=false")]
    ObservedAbstain { ilf_id: usize },
    #[error("observed row has {got} entries, model has {expected} ILFs")]
    RowLength { expected: usize, got: usize },
    #[error("desired index {0} out of range")]
    DesiredIndex(usize),
}

/// Value of the target variable: a desired class by position, or the
/// factor-free "unknown" class when the model includes one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum YValue {
    Desired(usize),
    Unknown,
}

/// One full configuration of the model's random variables.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    pub y: YValue,
    /// One membership bit per seen label.
    pub y_bar: Vec<bool>,
    /// Per ILF: position of the emitted label within the seen list, or
    /// `None` for an abstention.
    pub lambda: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PseudoAccuracy,
    Accuracy,
    SeenSeenRelation,
    DesiredSeenRelation,
}

/// A single indicator factor. Indices are positional: `desired` into the
/// model's desired list, `seen` into the seen list, `ilf` into the ILF list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dependency {
    PseudoAccuracy { desired: usize, seen: usize, ilf: usize },
    Accuracy { seen: usize, ilf: usize },
    SeenSeenRelation { a: usize, b: usize, relation: RelationType },
    DesiredSeenRelation { desired: usize, seen: usize, relation: RelationType },
}

impl Dependency {
    pub fn family(&self) -> Family {
        match self {
            Dependency::PseudoAccuracy { .. } => Family::PseudoAccuracy,
            Dependency::Accuracy { .. } => Family::Accuracy,
            Dependency::SeenSeenRelation { .. } => Family::SeenSeenRelation,
            Dependency::DesiredSeenRelation { .. } => Family::DesiredSeenRelation,
        }
    }
}

/// Evaluates one factor on an assignment; always lands in `{-1, 0, 1}`.
pub fn factor_value(dep: &Dependency, a: &Assignment) -> i32 {
    match *dep {
        Dependency::PseudoAccuracy { desired, seen, ilf } => {
            let hit = a.y == YValue::Desired(desired) && a.lambda[ilf] == Some(seen);
            hit as i32
        }
        Dependency::Accuracy { seen, ilf } => {
            let hit = a.y_bar[seen] && a.lambda[ilf] == Some(seen);
            hit as i32
        }
        Dependency::SeenSeenRelation { a: i, b: j, relation } => {
            let (bi, bj) = (a.y_bar[i], a.y_bar[j]);
            match relation {
                RelationType::Exclusive => -((bi && bj) as i32),
                RelationType::Overlapping => (bi && bj) as i32,
                // i strictly contains j: j active without i is the violation
                RelationType::Subsuming => -((!bi && bj) as i32),
                // i strictly inside j: i active without j is the violation
                RelationType::Subsumed => -((bi && !bj) as i32),
            }
        }
        Dependency::DesiredSeenRelation { desired, seen, relation } => {
            let on_y = a.y == YValue::Desired(desired);
            let bit = a.y_bar[seen];
            match relation {
                RelationType::Exclusive => -((on_y && bit) as i32),
                RelationType::Overlapping => (on_y && bit) as i32,
                // y contains the seen label: its bit set while Y is elsewhere
                RelationType::Subsuming => -((!on_y && bit) as i32),
                // y inside the seen label: Y = y demands the bit
                RelationType::Subsumed => -((on_y && !bit) as i32),
            }
        }
    }
}

/// Which model family a [`FactorModel`] instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// All four dependency families over `(Y, Ybar, lambda)`.
    Plrm,
    /// Pseudo-accuracy only; the latent bits do not participate.
    Wslg,
}

/// Per-ILF sampling domain inside a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IlfDomain {
    pub ilf_id: usize,
    /// Output space as positions into the model's seen list, ascending.
    pub outputs: Vec<usize>,
    pub can_abstain: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    /// Give `Y` an extra factor-free class absorbing "none of the desired".
    pub include_unknown: bool,
    /// Ablation switch for the pseudo-accuracy family in the full model.
    pub include_pseudo_accuracy: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { include_unknown: true, include_pseudo_accuracy: true }
    }
}

/// An enumerated dependency list with its weight vector.
///
/// Everything but `theta` is immutable after construction; evaluation is
/// pure, so shared references can be used freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    kind: ModelKind,
    include_unknown: bool,
    desired: Vec<Label>,
    seen: Vec<Label>,
    ilfs: Vec<IlfDomain>,
    deps: Vec<Dependency>,
    theta: Vec<f64>,
    // dependency indices touching each variable, for single-site resampling
    touch_y: Vec<usize>,
    touch_y_bar: Vec<Vec<usize>>,
    touch_lambda: Vec<Vec<usize>>,
}

impl FactorModel {
    /// Builds the full relation model from a consistent graph.
    ///
    /// Dependencies are enumerated in a fixed order — pseudo-accuracy by
    /// `(desired, seen, ilf)`, accuracy by `(seen, ilf)`, seen-seen by
    /// `(a, b)` with `a < b`, desired-seen by `(desired, seen)` — so weight
    /// vectors are portable across runs and serializations.
    pub fn build_plrm(
        graph: &LabelGraph,
        ilfs: &[IlfSpec],
        options: BuildOptions,
    ) -> Result<Self, ModelError> {
        Self::build(graph, ilfs, ModelKind::Plrm, options)
    }

    /// Builds the vote-only baseline: pseudo-accuracy factors only.
    pub fn build_wslg(graph: &LabelGraph, ilfs: &[IlfSpec]) -> Result<Self, ModelError> {
        Self::build(graph, ilfs, ModelKind::Wslg, BuildOptions::default())
    }

    fn build(
        graph: &LabelGraph,
        ilfs: &[IlfSpec],
        kind: ModelKind,
        options: BuildOptions,
    ) -> Result<Self, ModelError> {
        graph.validate_ilfs(ilfs)?;
        let consistency = graph.check_consistency();
        if !consistency.consistent {
            return Err(ModelError::InconsistentGraph {
                violations: consistency.violations.len(),
            });
        }

        let desired: Vec<Label> =
            graph.desired().iter().map(|&id| graph.label(id).unwrap().clone()).collect();
        let seen: Vec<Label> =
            graph.seen().iter().map(|&id| graph.label(id).unwrap().clone()).collect();
        let seen_pos = |id: LabelId| seen.iter().position(|l| l.id == id).unwrap();

        let domains: Vec<IlfDomain> = ilfs
            .iter()
            .map(|spec| IlfDomain {
                ilf_id: spec.ilf_id,
                outputs: spec.output_space.iter().map(|&id| seen_pos(id)).collect(),
                can_abstain: spec.can_abstain,
            })
            .collect();

        let rel = |a: LabelId, b: LabelId| graph.relation(a, b).unwrap();
        let mut deps = Vec::new();

        let with_pseudo = match kind {
            ModelKind::Plrm => options.include_pseudo_accuracy,
            ModelKind::Wslg => true,
        };
        if with_pseudo {
            for (di, y) in desired.iter().enumerate() {
                for (si, s) in seen.iter().enumerate() {
                    if rel(y.id, s.id) == RelationType::Exclusive {
                        continue;
                    }
                    for (j, dom) in domains.iter().enumerate() {
                        if dom.outputs.contains(&si) {
                            deps.push(Dependency::PseudoAccuracy { desired: di, seen: si, ilf: j });
                        }
                    }
                }
            }
        }
        if kind == ModelKind::Plrm {
            for si in 0..seen.len() {
                for (j, dom) in domains.iter().enumerate() {
                    if dom.outputs.contains(&si) {
                        deps.push(Dependency::Accuracy { seen: si, ilf: j });
                    }
                }
            }
            for a in 0..seen.len() {
                for b in a + 1..seen.len() {
                    deps.push(Dependency::SeenSeenRelation {
                        a,
                        b,
                        relation: rel(seen[a].id, seen[b].id),
                    });
                }
            }
            for (di, y) in desired.iter().enumerate() {
                for (si, s) in seen.iter().enumerate() {
                    deps.push(Dependency::DesiredSeenRelation {
                        desired: di,
                        seen: si,
                        relation: rel(y.id, s.id),
                    });
                }
            }
        }

        let theta = vec![0.0; deps.len()];
        Ok(Self::assemble(kind, options.include_unknown, desired, seen, domains, deps, theta))
    }

    /// Reassembles a model from parts (deserialization path). Touch lists
    /// are rebuilt; theta length is checked.
    pub(crate) fn assemble(
        kind: ModelKind,
        include_unknown: bool,
        desired: Vec<Label>,
        seen: Vec<Label>,
        ilfs: Vec<IlfDomain>,
        deps: Vec<Dependency>,
        theta: Vec<f64>,
    ) -> Self {
        let mut touch_y = Vec::new();
        let mut touch_y_bar = vec![Vec::new(); seen.len()];
        let mut touch_lambda = vec![Vec::new(); ilfs.len()];
        for (r, dep) in deps.iter().enumerate() {
            match *dep {
                Dependency::PseudoAccuracy { ilf, .. } => {
                    touch_y.push(r);
                    touch_lambda[ilf].push(r);
                }
                Dependency::Accuracy { seen, ilf } => {
                    touch_y_bar[seen].push(r);
                    touch_lambda[ilf].push(r);
                }
                Dependency::SeenSeenRelation { a, b, .. } => {
                    touch_y_bar[a].push(r);
                    touch_y_bar[b].push(r);
                }
                Dependency::DesiredSeenRelation { seen, .. } => {
                    touch_y.push(r);
                    touch_y_bar[seen].push(r);
                }
            }
        }
        FactorModel {
            kind,
            include_unknown,
            desired,
            seen,
            ilfs,
            deps,
            theta,
            touch_y,
            touch_y_bar,
            touch_lambda,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn include_unknown(&self) -> bool {
        self.include_unknown
    }

    /// The latent membership bits only matter in the full model.
    pub fn uses_y_bar(&self) -> bool {
        self.kind == ModelKind::Plrm
    }

    pub fn desired_labels(&self) -> &[Label] {
        &self.desired
    }

    pub fn seen_labels(&self) -> &[Label] {
        &self.seen
    }

    pub fn ilf_domains(&self) -> &[IlfDomain] {
        &self.ilfs
    }

    pub fn dependencies(&self) -> &[Dependency] {
        &self.deps
    }

    /// Number of dependencies / length of theta.
    pub fn dependency_count(&self) -> usize {
        self.deps.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<(), ModelError> {
        if theta.len() != self.deps.len() {
            return Err(ModelError::ThetaLength { expected: self.deps.len(), got: theta.len() });
        }
        self.theta = theta;
        Ok(())
    }

    pub(crate) fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Domain size of `Y`: desired classes plus the optional unknown.
    pub fn y_count(&self) -> usize {
        self.desired.len() + self.include_unknown as usize
    }

    /// `Y` value at enumeration position `i` (unknown last).
    pub fn y_value(&self, i: usize) -> YValue {
        if i < self.desired.len() {
            YValue::Desired(i)
        } else {
            YValue::Unknown
        }
    }

    pub fn y_index(&self, y: YValue) -> usize {
        match y {
            YValue::Desired(d) => d,
            YValue::Unknown => self.desired.len(),
        }
    }

    pub(crate) fn touch_y(&self) -> &[usize] {
        &self.touch_y
    }

    pub(crate) fn touch_y_bar(&self, i: usize) -> &[usize] {
        &self.touch_y_bar[i]
    }

    pub(crate) fn touch_lambda(&self, j: usize) -> &[usize] {
        &self.touch_lambda[j]
    }

    fn check_shape(&self, a: &Assignment) -> Result<(), ModelError> {
        if a.y_bar.len() != self.seen.len() {
            return Err(ModelError::AssignmentShape(format!(
                "y_bar length {} != seen count {}",
                a.y_bar.len(),
                self.seen.len()
            )));
        }
        if a.lambda.len() != self.ilfs.len() {
            return Err(ModelError::AssignmentShape(format!(
                "lambda length {} != ILF count {}",
                a.lambda.len(),
                self.ilfs.len()
            )));
        }
        if let YValue::Desired(d) = a.y {
            if d >= self.desired.len() {
                return Err(ModelError::DesiredIndex(d));
            }
        }
        if a.y == YValue::Unknown && !self.include_unknown {
            return Err(ModelError::AssignmentShape("unknown class is disabled".into()));
        }
        Ok(())
    }

    /// Concatenated factor values in dependency order.
    pub fn feature_vector(&self, a: &Assignment) -> Result<Vec<i32>, ModelError> {
        self.check_shape(a)?;
        Ok(self.deps.iter().map(|dep| factor_value(dep, a)).collect())
    }

    /// `theta . phi(a)` without materializing the feature vector.
    pub fn log_unnormalized(&self, a: &Assignment) -> f64 {
        debug_assert!(self.check_shape(a).is_ok());
        self.deps
            .iter()
            .zip(&self.theta)
            .map(|(dep, &w)| w * factor_value(dep, a) as f64)
            .sum()
    }

    /// Partial score over a subset of dependencies; used by the samplers.
    pub(crate) fn partial_score(&self, dep_indices: &[usize], a: &Assignment) -> f64 {
        dep_indices
            .iter()
            .map(|&r| self.theta[r] * factor_value(&self.deps[r], a) as f64)
            .sum()
    }

    /// Translates an observed output row (global label ids, `None` for
    /// abstain) into this model's positional lambda representation.
    pub fn lambda_from_row(&self, row: &[Option<LabelId>]) -> Result<Vec<Option<usize>>, ModelError> {
        if row.len() != self.ilfs.len() {
            return Err(ModelError::RowLength { expected: self.ilfs.len(), got: row.len() });
        }
        let mut out = Vec::with_capacity(row.len());
        for (j, cell) in row.iter().enumerate() {
            match cell {
                Some(label) => {
                    let pos = self
                        .seen
                        .iter()
                        .position(|l| l.id == *label)
                        .filter(|p| self.ilfs[j].outputs.contains(p))
                        .ok_or(ModelError::ObservedOutsideSpace {
                            ilf_id: self.ilfs[j].ilf_id,
                            label: *label,
                        })?;
                    out.push(Some(pos));
                }
                None => {
                    if !self.ilfs[j].can_abstain {
                        return Err(ModelError::ObservedAbstain { ilf_id: self.ilfs[j].ilf_id });
                    }
                    out.push(None);
                }
            }
        }
        Ok(out)
    }

    /// Class names for posterior output: desired names, then "unknown".
    pub fn class_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.desired.iter().map(|l| l.name.clone()).collect();
        if self.include_unknown {
            names.push("unknown".to_string());
        }
        names
    }
}

/// Result of swapping the per-desired-label weight blocks of two classes.
#[derive(Debug, Clone)]
pub struct ThetaSwap {
    pub theta: Vec<f64>,
    /// True when every pseudo-accuracy factor of one class had a twin for
    /// the other, i.e. the pair is structurally symmetric. When false the
    /// unmatched weights were left in place.
    pub fully_aligned: bool,
}

/// Builds the block-swapped parameter vector for a desired pair `(a, b)`:
/// desired-seen relation weights and pseudo-accuracy weights trade places
/// between the two classes, everything else stays.
///
/// For a structurally symmetric pair this is exactly the re-labeling that
/// exchanges the two classes' posteriors; for an asymmetric pair no such
/// re-labeling exists and the swap is best-effort.
pub fn swap_theta_blocks(model: &FactorModel, a: usize, b: usize) -> Result<ThetaSwap, ModelError> {
    if a >= model.desired.len() {
        return Err(ModelError::DesiredIndex(a));
    }
    if b >= model.desired.len() {
        return Err(ModelError::DesiredIndex(b));
    }
    let mut theta = model.theta().to_vec();
    let mut fully_aligned = true;

    let locate = |probe: &Dependency| -> Option<usize> {
        model.deps.iter().position(|d| d == probe)
    };
    for (r, dep) in model.deps.iter().enumerate() {
        match *dep {
            Dependency::DesiredSeenRelation { desired, seen, .. } if desired == a => {
                let twin = model
                    .deps
                    .iter()
                    .position(|d| {
                        matches!(d, Dependency::DesiredSeenRelation { desired: db, seen: sb, .. }
                            if *db == b && *sb == seen)
                    })
                    .expect("desired-seen factors exist for every (desired, seen) pair");
                theta[r] = model.theta[twin];
                theta[twin] = model.theta[r];
            }
            Dependency::PseudoAccuracy { desired, seen, ilf } if desired == a => {
                match locate(&Dependency::PseudoAccuracy { desired: b, seen, ilf }) {
                    Some(twin) => {
                        theta[r] = model.theta[twin];
                        theta[twin] = model.theta[r];
                    }
                    None => fully_aligned = false,
                }
            }
            Dependency::PseudoAccuracy { desired, seen, ilf } if desired == b => {
                if locate(&Dependency::PseudoAccuracy { desired: a, seen, ilf }).is_none() {
                    fully_aligned = false;
                }
            }
            _ => {}
        }
    }
    Ok(ThetaSwap { theta, fully_aligned })
}

/// Convenience constructor for an all-clear assignment.
pub fn blank_assignment(model: &FactorModel) -> Assignment {
    Assignment {
        y: if model.include_unknown() { YValue::Unknown } else { YValue::Desired(0) },
        y_bar: vec![false; model.seen_labels().len()],
        lambda: vec![None; model.ilf_domains().len()],
    }
}

/// Checks a desired pair for structural symmetry at the model level:
/// equal relation types toward every seen label and identical
/// pseudo-accuracy index sets.
pub fn structurally_symmetric(model: &FactorModel, a: usize, b: usize) -> bool {
    let rel_of = |d: usize, s: usize| {
        model.dependencies().iter().find_map(|dep| match dep {
            Dependency::DesiredSeenRelation { desired, seen, relation }
                if *desired == d && *seen == s =>
            {
                Some(*relation)
            }
            _ => None,
        })
    };
    let relations_match = match model.kind() {
        ModelKind::Plrm => {
            (0..model.seen_labels().len()).all(|s| rel_of(a, s) == rel_of(b, s))
        }
        ModelKind::Wslg => true,
    };
    let pseudo_set = |d: usize| {
        let mut set: Vec<(usize, usize)> = model
            .dependencies()
            .iter()
            .filter_map(|dep| match dep {
                Dependency::PseudoAccuracy { desired, seen, ilf } if *desired == d => {
                    Some((*seen, *ilf))
                }
                _ => None,
            })
            .collect();
        set.sort_unstable();
        set
    };
    relations_match && pseudo_set(a) == pseudo_set(b)
}
