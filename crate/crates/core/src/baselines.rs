//! Vote-aggregation baselines, the attribute-prediction baseline, and the
//! noise-aware linear end-model trainer.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, IlfOutputMatrix};
use crate::graph::{GraphError, LabelGraph, LabelId, RelationType};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{k_hat} seen labels exceed the assignment enumeration cap {cap}")]
    AssignmentCap { k_hat: usize, cap: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite feature at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("posterior row {row} is not a distribution: {reason}")]
    BadPosterior { row: usize, reason: String },
}

/// Default cap on the number of seen labels for assignment enumeration.
pub const ASSIGNMENT_CAP: usize = 20;

/// Floor applied to empirical attribute priors.
pub const PRIOR_FLOOR: f64 = 1e-6;

/// Votes aggregated into per-desired-label weight, with hard predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutput {
    /// Column order of the tallies.
    pub desired: Vec<LabelId>,
    /// One tally row per data point; weights are non-negative.
    pub tallies: Vec<Vec<f64>>,
    /// Argmax with lowest-id tie breaking; `None` when every weight is zero.
    pub predictions: Vec<Option<LabelId>>,
}

fn argmax_tally(desired: &[LabelId], tally: &[f64]) -> Option<LabelId> {
    let mut best: Option<usize> = None;
    for (i, &w) in tally.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        match best {
            Some(b) if tally[b] >= w => {}
            _ => best = Some(i),
        }
    }
    // lowest id wins ties: scan again for the first index reaching the max
    let best = best?;
    let max = tally[best];
    let first = tally.iter().position(|&w| w == max).unwrap();
    Some(desired[first])
}

/// Majority voting over non-exclusive neighbors: every vote is replaced by
/// the desired labels compatible with it, each receiving weight 1.
pub fn lr_mv(graph: &LabelGraph, outputs: &IlfOutputMatrix) -> Result<BaselineOutput, BaselineError> {
    weighted_vote(graph, outputs, false)
}

/// Relation-weighted variant: a vote replaced by its subsuming ancestor
/// keeps weight 1 (the membership is certain), while the remaining
/// compatible labels split weight uniformly among themselves.
pub fn w_lr_mv(
    graph: &LabelGraph,
    outputs: &IlfOutputMatrix,
) -> Result<BaselineOutput, BaselineError> {
    weighted_vote(graph, outputs, true)
}

fn weighted_vote(
    graph: &LabelGraph,
    outputs: &IlfOutputMatrix,
    relation_weights: bool,
) -> Result<BaselineOutput, BaselineError> {
    let desired = graph.desired().to_vec();
    let pos_of = |id: LabelId| desired.iter().position(|&d| d == id).unwrap();
    let mut tallies = Vec::with_capacity(outputs.n_rows());
    let mut predictions = Vec::with_capacity(outputs.n_rows());

    for row in outputs.rows() {
        let mut tally = vec![0.0f64; desired.len()];
        for cell in row {
            let Some(vote) = cell else { continue };
            let members = graph.non_exclusive_neighbors(*vote, &desired)?;
            if !relation_weights {
                for y in members {
                    tally[pos_of(y)] += 1.0;
                }
                continue;
            }
            let (ancestors, others): (Vec<LabelId>, Vec<LabelId>) =
                members.iter().partition(|&&y| {
                    graph.relation(y, *vote).unwrap() == RelationType::Subsuming
                });
            for y in &ancestors {
                tally[pos_of(*y)] += 1.0;
            }
            let share = if others.is_empty() { 0.0 } else { 1.0 / others.len() as f64 };
            for y in &others {
                tally[pos_of(*y)] += share;
            }
        }
        predictions.push(argmax_tally(&desired, &tally));
        tallies.push(tally);
    }
    Ok(BaselineOutput { desired, tallies, predictions })
}

/// All seen-label assignments compatible with the relation constraints:
/// no exclusive pair co-active, every active label's subsumers active.
/// Bit `i` refers to the `i`-th seen label; vectors come out in ascending
/// binary order.
pub fn enumerate_consistent_assignments(
    graph: &LabelGraph,
    cap: usize,
) -> Result<Vec<Vec<bool>>, BaselineError> {
    let seen = graph.seen();
    let k_hat = seen.len();
    if k_hat > cap {
        return Err(BaselineError::AssignmentCap { k_hat, cap });
    }
    let mut out = Vec::new();
    'next: for bits in 0u64..(1 << k_hat) {
        let active = |i: usize| bits & (1 << i) != 0;
        for i in 0..k_hat {
            for j in i + 1..k_hat {
                match graph.relation(seen[i], seen[j]).unwrap() {
                    RelationType::Exclusive if active(i) && active(j) => continue 'next,
                    // i strictly contains j: j active forces i active
                    RelationType::Subsuming if active(j) && !active(i) => continue 'next,
                    // i strictly inside j: i active forces j active
                    RelationType::Subsumed if active(i) && !active(j) => continue 'next,
                    _ => {}
                }
            }
        }
        out.push((0..k_hat).map(active).collect());
    }
    Ok(out)
}

/// Attribute vector of a desired label: bit `m` is set iff no active seen
/// label in assignment `m` is exclusive to it.
pub fn dap_label_attributes(
    graph: &LabelGraph,
    assignments: &[Vec<bool>],
    y: LabelId,
) -> Result<Vec<bool>, BaselineError> {
    let seen = graph.seen();
    let mut out = Vec::with_capacity(assignments.len());
    for s in assignments {
        let compatible = s
            .iter()
            .enumerate()
            .filter(|(_, &on)| on)
            .all(|(i, _)| graph.relation(y, seen[i]).unwrap() != RelationType::Exclusive);
        out.push(compatible);
    }
    Ok(out)
}

/// Attribute vector of a data point: its votes are closed under subsuming
/// ancestors, and the bit of the unique matching assignment is set. Votes
/// whose closure collides with an exclusivity constraint yield the all-zero
/// vector, reported through the `flagged` flag.
pub fn dap_point_attributes(
    graph: &LabelGraph,
    assignments: &[Vec<bool>],
    row: &[Option<LabelId>],
) -> Result<(Vec<bool>, bool), BaselineError> {
    let seen = graph.seen();
    let mut active: HashSet<usize> = HashSet::new();
    for cell in row.iter().flatten() {
        let pos = seen
            .iter()
            .position(|&s| s == *cell)
            .ok_or_else(|| BaselineError::Shape(format!("vote {cell} is not a seen label")))?;
        active.insert(pos);
    }
    // subsumption closure
    loop {
        let mut added = Vec::new();
        for &a in &active {
            for (b, &sb) in seen.iter().enumerate() {
                if !active.contains(&b)
                    && graph.relation(seen[a], sb).unwrap() == RelationType::Subsumed
                {
                    added.push(b);
                }
            }
        }
        if added.is_empty() {
            break;
        }
        active.extend(added);
    }
    // exclusivity conflict check
    let active_vec: Vec<usize> = active.iter().copied().collect();
    for (i, &a) in active_vec.iter().enumerate() {
        for &b in &active_vec[i + 1..] {
            if graph.relation(seen[a], seen[b]).unwrap() == RelationType::Exclusive {
                return Ok((vec![false; assignments.len()], true));
            }
        }
    }
    let target: Vec<bool> = (0..seen.len()).map(|i| active.contains(&i)).collect();
    let bits = assignments.iter().map(|s| *s == target).collect();
    Ok((bits, false))
}

/// Attribute-prediction rule: pick the desired label whose attribute vector
/// best explains the per-attribute posteriors, each term normalized by its
/// empirical prior (floored to avoid blow-ups).
pub fn dap_predict(
    attr_posterior: &[f64],
    label_attrs: &[Vec<bool>],
    attr_priors: &[f64],
) -> usize {
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (c, attrs) in label_attrs.iter().enumerate() {
        let mut score = 0.0;
        for (m, &bit) in attrs.iter().enumerate() {
            let prior = attr_priors[m].clamp(PRIOR_FLOOR, 1.0 - PRIOR_FLOOR);
            let p = attr_posterior[m].clamp(PRIOR_FLOOR, 1.0 - PRIOR_FLOOR);
            let (num, den) = if bit { (p, prior) } else { (1.0 - p, 1.0 - prior) };
            score += num.ln() - den.ln();
        }
        if score > best_score {
            best_score = score;
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndModelConfig {
    /// `None` picks `2 / mean squared feature norm`, a safe step for the
    /// softmax cross-entropy curvature regardless of feature scale.
    pub learning_rate: Option<f64>,
    pub epochs: usize,
    pub weight_decay: f64,
}

impl Default for EndModelConfig {
    fn default() -> Self {
        EndModelConfig { learning_rate: None, epochs: 500, weight_decay: 0.0 }
    }
}

/// Multinomial linear classifier with an intercept column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// `class_count` rows of `feature_dim + 1` weights; the last entry of
    /// each row is the bias.
    pub weights: Vec<Vec<f64>>,
}

impl LinearModel {
    pub fn class_count(&self) -> usize {
        self.weights.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights[0].len() - 1
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|row| {
                let bias = row[row.len() - 1];
                row[..row.len() - 1].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (i, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = i;
            }
        }
        best
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

fn validate_training_inputs(
    features: &[Vec<f64>],
    posteriors: &[Vec<f64>],
) -> Result<(usize, usize), BaselineError> {
    if features.len() != posteriors.len() {
        return Err(BaselineError::Shape(format!(
            "{} feature rows vs {} posterior rows",
            features.len(),
            posteriors.len()
        )));
    }
    if features.is_empty() {
        return Err(BaselineError::Shape("empty dataset".into()));
    }
    let d = features[0].len();
    let k = posteriors[0].len();
    if k < 2 {
        return Err(BaselineError::Shape("need at least two classes".into()));
    }
    for (i, row) in features.iter().enumerate() {
        if row.len() != d {
            return Err(BaselineError::Shape(format!("feature row {i} has length {}", row.len())));
        }
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(BaselineError::NonFiniteFeature { row: i, col: j });
            }
        }
    }
    for (i, row) in posteriors.iter().enumerate() {
        if row.len() != k {
            return Err(BaselineError::BadPosterior {
                row: i,
                reason: format!("length {} != {k}", row.len()),
            });
        }
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) || (sum - 1.0).abs() > 1e-6 {
            return Err(BaselineError::BadPosterior { row: i, reason: format!("sums to {sum}") });
        }
    }
    Ok((d, k))
}

/// Expected cross-entropy of the classifier under per-point soft labels.
pub fn noise_aware_loss(
    model: &LinearModel,
    features: &[Vec<f64>],
    posteriors: &[Vec<f64>],
) -> f64 {
    let m = features.len() as f64;
    features
        .iter()
        .zip(posteriors)
        .map(|(x, p)| {
            let z = model.logits(x);
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            lse - p.iter().zip(&z).map(|(pi, zi)| pi * zi).sum::<f64>()
        })
        .sum::<f64>()
        / m
}

/// Gradient of [`noise_aware_loss`] in the same layout as the weights.
pub fn noise_aware_grad(
    model: &LinearModel,
    features: &[Vec<f64>],
    posteriors: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let m = features.len() as f64;
    let k = model.class_count();
    let d = model.feature_dim();
    let mut grad = vec![vec![0.0; d + 1]; k];
    for (x, p) in features.iter().zip(posteriors) {
        let q = model.predict_proba(x);
        for c in 0..k {
            let delta = (q[c] - p[c]) / m;
            for (gw, xv) in grad[c][..d].iter_mut().zip(x) {
                *gw += delta * xv;
            }
            grad[c][d] += delta;
        }
    }
    grad
}

/// Trains the linear end model by full-batch gradient descent on the
/// expected cross-entropy under the given posterior labels. One-hot
/// posteriors reduce this to ordinary softmax regression.
pub fn train_noise_aware_linear(
    features: &[Vec<f64>],
    posteriors: &[Vec<f64>],
    cfg: &EndModelConfig,
) -> Result<LinearModel, BaselineError> {
    let (d, k) = validate_training_inputs(features, posteriors)?;
    let learning_rate = cfg.learning_rate.unwrap_or_else(|| {
        let mean_sq = features
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>() + 1.0)
            .sum::<f64>()
            / features.len() as f64;
        2.0 / mean_sq
    });
    let mut model = LinearModel { weights: vec![vec![0.0; d + 1]; k] };
    for _ in 0..cfg.epochs {
        let grad = noise_aware_grad(&model, features, posteriors);
        for (wrow, grow) in model.weights.iter_mut().zip(&grad) {
            for (w, g) in wrow.iter_mut().zip(grow) {
                *w -= learning_rate * (g + cfg.weight_decay * *w);
            }
        }
    }
    Ok(model)
}

/// Fitted attribute-prediction pipeline: consistent assignments as the
/// attribute space, per-attribute logistic classifiers, empirical priors.
#[derive(Debug, Clone)]
pub struct DapModel {
    pub desired: Vec<LabelId>,
    pub assignments: Vec<Vec<bool>>,
    pub label_attrs: Vec<Vec<bool>>,
    pub priors: Vec<f64>,
    pub classifiers: Vec<LinearModel>,
    /// Data points whose votes conflicted during closure.
    pub flagged_points: Vec<usize>,
}

/// Builds attributes from votes, trains one binary classifier per
/// attribute on the features, and estimates priors over the same set.
pub fn dap_fit(
    graph: &LabelGraph,
    outputs: &IlfOutputMatrix,
    features: &[Vec<f64>],
    cfg: &EndModelConfig,
) -> Result<DapModel, BaselineError> {
    if features.len() != outputs.n_rows() {
        return Err(BaselineError::Shape(format!(
            "{} feature rows vs {} output rows",
            features.len(),
            outputs.n_rows()
        )));
    }
    let assignments = enumerate_consistent_assignments(graph, ASSIGNMENT_CAP)?;
    let desired = graph.desired().to_vec();
    let label_attrs = desired
        .iter()
        .map(|&y| dap_label_attributes(graph, &assignments, y))
        .collect::<Result<Vec<_>, _>>()?;

    let mut point_attrs = Vec::with_capacity(outputs.n_rows());
    let mut flagged_points = Vec::new();
    for (i, row) in outputs.rows().enumerate() {
        let (bits, flagged) = dap_point_attributes(graph, &assignments, row)?;
        if flagged {
            flagged_points.push(i);
        }
        point_attrs.push(bits);
    }

    let m = outputs.n_rows() as f64;
    let priors: Vec<f64> = (0..assignments.len())
        .map(|a| point_attrs.iter().filter(|bits| bits[a]).count() as f64 / m)
        .collect();

    let classifiers = (0..assignments.len())
        .map(|a| {
            let targets: Vec<Vec<f64>> = point_attrs
                .iter()
                .map(|bits| {
                    if bits[a] {
                        vec![0.0, 1.0]
                    } else {
                        vec![1.0, 0.0]
                    }
                })
                .collect();
            train_noise_aware_linear(features, &targets, cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(DapModel { desired, assignments, label_attrs, priors, classifiers, flagged_points })
}

impl DapModel {
    pub fn predict(&self, x: &[f64]) -> LabelId {
        let attr_posterior: Vec<f64> =
            self.classifiers.iter().map(|c| c.predict_proba(x)[1]).collect();
        let c = dap_predict(&attr_posterior, &self.label_attrs, &self.priors);
        self.desired[c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::menagerie;
    use crate::graph::LabelGraphBuilder;

    #[test]
    fn lr_mv_examples() {
        let (g, ids) = menagerie();
        // single caninae vote: {dog, wolf} tie, dog wins by lowest id
        let one = IlfOutputMatrix::new(vec![0], vec![vec![Some(ids["caninae"])]]).unwrap();
        let out = lr_mv(&g, &one).unwrap();
        assert_eq!(out.predictions[0], Some(ids["dog"]));

        // all abstain
        let empty = IlfOutputMatrix::new(vec![0, 1], vec![vec![None, None]]).unwrap();
        let out = lr_mv(&g, &empty).unwrap();
        assert_eq!(out.predictions[0], None);

        // caninae + domestic: dog 2, wolf 1, cat 1
        let two = IlfOutputMatrix::new(
            vec![0, 1],
            vec![vec![Some(ids["caninae"]), Some(ids["domestic_animals"])]],
        )
        .unwrap();
        let out = lr_mv(&g, &two).unwrap();
        let pos =
            |id: LabelId| out.desired.iter().position(|&d| d == id).unwrap();
        assert_eq!(out.tallies[0][pos(ids["dog"])], 2.0);
        assert_eq!(out.tallies[0][pos(ids["wolf"])], 1.0);
        assert_eq!(out.tallies[0][pos(ids["cat"])], 1.0);
        assert_eq!(out.tallies[0][pos(ids["lion"])], 0.0);
        assert_eq!(out.predictions[0], Some(ids["dog"]));
    }

    #[test]
    fn w_lr_mv_examples() {
        let (g, ids) = menagerie();
        // husky is subsumed by dog: its ancestor gets full weight
        let husky = IlfOutputMatrix::new(vec![0], vec![vec![Some(ids["husky"])]]).unwrap();
        let out = w_lr_mv(&g, &husky).unwrap();
        let pos = |o: &BaselineOutput, id: LabelId| o.desired.iter().position(|&d| d == id).unwrap();
        assert_eq!(out.tallies[0][pos(&out, ids["dog"])], 1.0);
        assert_eq!(out.predictions[0], Some(ids["dog"]));

        // domestic subsumes dog and cat: non-ancestors split the weight
        let dom =
            IlfOutputMatrix::new(vec![0], vec![vec![Some(ids["domestic_animals"])]]).unwrap();
        let out = w_lr_mv(&g, &dom).unwrap();
        assert_eq!(out.tallies[0][pos(&out, ids["dog"])], 0.5);
        assert_eq!(out.tallies[0][pos(&out, ids["cat"])], 0.5);

        let quiet = IlfOutputMatrix::new(vec![0], vec![vec![None]]).unwrap();
        assert_eq!(w_lr_mv(&g, &quiet).unwrap().predictions[0], None);
    }

    #[test]
    fn baselines_agree_on_singleton_replacements() {
        let (g, ids) = menagerie();
        // husky maps to the singleton {dog}
        let rows = vec![vec![Some(ids["husky"])], vec![None]];
        let outputs = IlfOutputMatrix::new(vec![0], rows).unwrap();
        let a = lr_mv(&g, &outputs).unwrap();
        let b = w_lr_mv(&g, &outputs).unwrap();
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.tallies, b.tallies);
    }

    fn two_seen(t: RelationType) -> LabelGraph {
        let mut b = LabelGraphBuilder::new();
        let s0 = b.add_seen("s0");
        let s1 = b.add_seen("s1");
        b.relate(s0, s1, t);
        b.build().unwrap()
    }

    #[test]
    fn assignment_enumeration_examples() {
        let g = two_seen(RelationType::Exclusive);
        let s = enumerate_consistent_assignments(&g, ASSIGNMENT_CAP).unwrap();
        assert_eq!(
            s,
            vec![vec![false, false], vec![true, false], vec![false, true]]
        );

        // s0 subsumed by s1: s0 active forces s1 active
        let g = two_seen(RelationType::Subsumed);
        let s = enumerate_consistent_assignments(&g, ASSIGNMENT_CAP).unwrap();
        assert_eq!(
            s,
            vec![vec![false, false], vec![false, true], vec![true, true]]
        );

        let g = two_seen(RelationType::Overlapping);
        assert_eq!(enumerate_consistent_assignments(&g, ASSIGNMENT_CAP).unwrap().len(), 4);
    }

    #[test]
    fn assignment_enumeration_matches_brute_force_on_menagerie() {
        let (g, _) = menagerie();
        let fast = enumerate_consistent_assignments(&g, ASSIGNMENT_CAP).unwrap();
        // independent check: validate each candidate with relation queries
        // in both orientations
        let seen = g.seen();
        let mut slow = Vec::new();
        for bits in 0u64..(1 << seen.len()) {
            let v: Vec<bool> = (0..seen.len()).map(|i| bits & (1 << i) != 0).collect();
            let mut ok = true;
            for i in 0..seen.len() {
                for j in 0..seen.len() {
                    if i == j {
                        continue;
                    }
                    match g.relation(seen[i], seen[j]).unwrap() {
                        RelationType::Exclusive => ok &= !(v[i] && v[j]),
                        RelationType::Subsumed => ok &= !v[i] || v[j],
                        _ => {}
                    }
                }
            }
            if ok {
                slow.push(v);
            }
        }
        assert_eq!(fast, slow);
    }

    #[test]
    fn assignment_cap_is_enforced() {
        let (g, _) = menagerie();
        assert!(matches!(
            enumerate_consistent_assignments(&g, 2),
            Err(BaselineError::AssignmentCap { k_hat: 4, cap: 2 })
        ));
    }

    #[test]
    fn label_attributes_examples() {
        let (g, ids) = menagerie();
        let assignments = enumerate_consistent_assignments(&g, ASSIGNMENT_CAP).unwrap();
        let attrs = dap_label_attributes(&g, &assignments, ids["dog"]).unwrap();
        let seen = g.seen();
        for (m, s) in assignments.iter().enumerate() {
            // all-zero assignment is vacuously compatible
            if s.iter().all(|&b| !b) {
                assert!(attrs[m]);
            }
            // felidae active alone is incompatible with dog
            let felidae_pos = seen.iter().position(|&x| x == ids["felidae"]).unwrap();
            if s[felidae_pos] {
                assert!(!attrs[m], "assignment {s:?} activates felidae yet matched dog");
            }
        }
        // exhaustive oracle: straight from the definition
        for (m, s) in assignments.iter().enumerate() {
            let expected = s.iter().enumerate().all(|(i, &on)| {
                !on || g.relation(ids["dog"], seen[i]).unwrap() != RelationType::Exclusive
            });
            assert_eq!(attrs[m], expected);
        }
    }

    #[test]
    fn point_attributes_closure_and_conflicts() {
        let (g, ids) = menagerie();
        let assignments = enumerate_consistent_assignments(&g, ASSIGNMENT_CAP).unwrap();
        let seen = g.seen();

        // husky vote closes over its seen subsumers (caninae, domestic)
        let (bits, flagged) =
            dap_point_attributes(&g, &assignments, &[Some(ids["husky"])]).unwrap();
        assert!(!flagged);
        assert_eq!(bits.iter().filter(|&&b| b).count(), 1);
        let hit = bits.iter().position(|&b| b).unwrap();
        let active: Vec<LabelId> = assignments[hit]
            .iter()
            .enumerate()
            .filter(|(_, &on)| on)
            .map(|(i, _)| seen[i])
            .collect();
        assert_eq!(active, vec![ids["husky"], ids["caninae"], ids["domestic_animals"]]);

        // all abstain matches the all-zero assignment
        let (bits, flagged) = dap_point_attributes(&g, &assignments, &[None]).unwrap();
        assert!(!flagged);
        let hit = bits.iter().position(|&b| b).unwrap();
        assert!(assignments[hit].iter().all(|&b| !b));

        // conflicting exclusive votes flag out with an all-zero vector
        let (bits, flagged) =
            dap_point_attributes(&g, &assignments, &[Some(ids["caninae"]), Some(ids["felidae"])])
                .unwrap();
        assert!(flagged);
        assert!(bits.iter().all(|&b| !b));
    }

    #[test]
    fn dap_predict_examples() {
        // uniform posteriors and priors: tie resolves to the lowest index
        let label_attrs = vec![vec![true, false], vec![false, true]];
        let pred = dap_predict(&[0.5, 0.5], &label_attrs, &[0.5, 0.5]);
        assert_eq!(pred, 0);

        // one attribute separates the labels; confident posterior wins
        let pred = dap_predict(&[0.9, 0.5], &label_attrs, &[0.5, 0.5]);
        assert_eq!(pred, 0);
        let pred = dap_predict(&[0.1, 0.5], &label_attrs, &[0.5, 0.5]);
        assert_eq!(pred, 1);

        // zero prior gets floored instead of blowing up
        let pred = dap_predict(&[0.9, 0.5], &label_attrs, &[0.0, 1.0]);
        assert_eq!(pred, 0);
    }

    fn toy_features() -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let features = vec![
            vec![1.0, 0.2],
            vec![0.9, -0.1],
            vec![-1.1, 0.3],
            vec![-0.8, -0.2],
        ];
        let posteriors = vec![
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ];
        (features, posteriors)
    }

    #[test]
    fn one_hot_posteriors_reduce_to_cross_entropy() {
        let (features, posteriors) = toy_features();
        let cfg = EndModelConfig { epochs: 300, ..EndModelConfig::default() };
        let model = train_noise_aware_linear(&features, &posteriors, &cfg).unwrap();
        // plain cross-entropy on hard labels, written independently
        let hard: Vec<usize> = posteriors
            .iter()
            .map(|p| p.iter().position(|&v| v == 1.0).unwrap())
            .collect();
        let plain_ce = features
            .iter()
            .zip(&hard)
            .map(|(x, &y)| -model.predict_proba(x)[y].ln())
            .sum::<f64>()
            / features.len() as f64;
        let na = noise_aware_loss(&model, &features, &posteriors);
        assert!((na - plain_ce).abs() < 1e-12);
        // and the classifier separates the toy clusters
        assert_eq!(model.predict(&[1.0, 0.0]), 0);
        assert_eq!(model.predict(&[-1.0, 0.0]), 1);
    }

    #[test]
    fn uniform_posteriors_zero_gradient_at_origin() {
        let (features, _) = toy_features();
        let uniform = vec![vec![0.5, 0.5]; features.len()];
        let model = LinearModel { weights: vec![vec![0.0; 3]; 2] };
        let grad = noise_aware_grad(&model, &features, &uniform);
        for row in grad {
            for g in row {
                assert!(g.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let (features, _) = toy_features();
        let posteriors = vec![
            vec![0.7, 0.3],
            vec![0.6, 0.4],
            vec![0.2, 0.8],
            vec![0.4, 0.6],
        ];
        let mut model = LinearModel {
            weights: vec![vec![0.3, -0.2, 0.1], vec![-0.1, 0.4, -0.3]],
        };
        let grad = noise_aware_grad(&model, &features, &posteriors);
        let h = 1e-6;
        for c in 0..2 {
            for w in 0..3 {
                let orig = model.weights[c][w];
                model.weights[c][w] = orig + h;
                let up = noise_aware_loss(&model, &features, &posteriors);
                model.weights[c][w] = orig - h;
                let down = noise_aware_loss(&model, &features, &posteriors);
                model.weights[c][w] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - grad[c][w]).abs() < 1e-5, "({c},{w}): {fd} vs {}", grad[c][w]);
            }
        }
    }

    #[test]
    fn training_rejects_non_finite_features() {
        let features = vec![vec![f64::NAN, 1.0]];
        let posteriors = vec![vec![0.5, 0.5]];
        assert!(matches!(
            train_noise_aware_linear(&features, &posteriors, &EndModelConfig::default()),
            Err(BaselineError::NonFiniteFeature { row: 0, col: 0 })
        ));
    }
}
