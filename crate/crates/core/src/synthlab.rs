//! Synthetic WIS task generation and scoring.
//!
//! Tasks are built around a random taxonomy: a seen-label backbone DAG with
//! desired classes attached as leaves. Each desired class gets its own set
//! of seen ancestors, which keeps every pair distinguishable unless a
//! symmetric pair is planted on purpose. ILFs vote with configurable
//! accuracy and abstention: a correct vote is a uniformly chosen seen label
//! compatible with the gold class, an incorrect one a uniformly chosen
//! incompatible label.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, IlfOutputMatrix};
use crate::graph::{GraphError, IlfSpec, LabelGraph, LabelId, Role};
use crate::inference::{exact_joint_table, EnumerationBudget, InferenceError};
use crate::model::{FactorModel, ModelError, YValue};

const GENERATION_ATTEMPTS: usize = 64;
const SIGNATURE_RETRIES: usize = 256;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid simulation spec: {0}")]
    Config(String),
    #[error("could not satisfy constraint after retries: {0}")]
    Unsatisfiable(String),
    #[error("predictions and gold have different lengths ({pred} vs {gold})")]
    LengthMismatch { pred: usize, gold: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// Knobs shaping the random taxonomy. `subsume` is the probability a seen
/// label is attached under an earlier one (instead of starting a new root);
/// `overlap` is the probability of granting a node a second parent, which
/// is what creates overlapping pairs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RelationDensity {
    pub subsume: f64,
    pub overlap: f64,
}

impl Default for RelationDensity {
    fn default() -> Self {
        RelationDensity { subsume: 0.6, overlap: 0.25 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSpec {
    /// Number of desired classes.
    pub desired: usize,
    /// Number of seen labels.
    pub seen: usize,
    /// Number of ILFs.
    pub ilfs: usize,
    /// Per-ILF probability of a compatible vote when not abstaining.
    pub ilf_accuracy: Vec<f64>,
    /// Per-ILF abstention rate.
    pub ilf_abstain: Vec<f64>,
    /// Number of data points.
    pub data_points: usize,
    pub density: RelationDensity,
    /// Plant one pair of desired classes with identical relation vectors.
    pub force_indistinct_pair: bool,
    pub seed: u64,
}

impl SimSpec {
    /// Spec with a shared accuracy and abstain rate across all ILFs.
    pub fn uniform(
        desired: usize,
        seen: usize,
        ilfs: usize,
        accuracy: f64,
        abstain: f64,
        data_points: usize,
        seed: u64,
    ) -> Self {
        SimSpec {
            desired,
            seen,
            ilfs,
            ilf_accuracy: vec![accuracy; ilfs],
            ilf_abstain: vec![abstain; ilfs],
            data_points,
            density: RelationDensity::default(),
            force_indistinct_pair: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.desired < 1 || self.seen < 2 || self.ilfs < 1 || self.data_points < 1 {
            return Err(SynthError::Config(
                "need at least 1 desired, 2 seen, 1 ILF and 1 data point".into(),
            ));
        }
        if self.force_indistinct_pair && self.desired < 2 {
            return Err(SynthError::Config("an indistinct pair needs two desired classes".into()));
        }
        if self.ilf_accuracy.len() != self.ilfs || self.ilf_abstain.len() != self.ilfs {
            return Err(SynthError::Config(format!(
                "accuracy/abstain vectors must have length {}",
                self.ilfs
            )));
        }
        for &a in &self.ilf_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(SynthError::Config(format!("accuracy {a} outside [0, 1]")));
            }
        }
        for &a in &self.ilf_abstain {
            if !(0.0..1.0).contains(&a) {
                return Err(SynthError::Config(format!("abstain rate {a} outside [0, 1)")));
            }
        }
        for &p in &[self.density.subsume, self.density.overlap] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::Config(format!("density {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A generated task: everything a run needs, gold labels included.
#[derive(Debug, Clone)]
pub struct SynthTask {
    pub graph: LabelGraph,
    pub ilfs: Vec<IlfSpec>,
    pub gold: Vec<LabelId>,
    pub outputs: IlfOutputMatrix,
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates a full task from a spec. Deterministic in the spec.
///
/// The generated graph always passes the consistency check and, unless a
/// pair is planted, the distinguishability check; the planted pair is
/// always classes 0 and 1.
pub fn generate_task(spec: &SimSpec) -> Result<SynthTask, SynthError> {
    spec.validate()?;
    let mut last_err = String::new();
    for attempt in 0..GENERATION_ATTEMPTS {
        match try_generate(spec, mix(spec.seed, attempt as u64)) {
            Ok(task) => return Ok(task),
            Err(SynthError::Unsatisfiable(reason)) => last_err = reason,
            Err(other) => return Err(other),
        }
    }
    Err(SynthError::Unsatisfiable(last_err))
}

fn try_generate(spec: &SimSpec, seed: u64) -> Result<SynthTask, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.desired;
    let k_hat = spec.seen;

    // Seen backbone: node t hangs under up to two earlier nodes.
    let mut seen_parents: Vec<Vec<usize>> = vec![Vec::new(); k_hat];
    for t in 1..k_hat {
        if rng.gen_bool(spec.density.subsume) {
            seen_parents[t].push(rng.gen_range(0..t));
            if t >= 2 && rng.gen_bool(spec.density.overlap) {
                let second = rng.gen_range(0..t);
                if !seen_parents[t].contains(&second) {
                    seen_parents[t].push(second);
                }
            }
        }
    }
    // transitive seen ancestors
    let mut seen_anc: Vec<Vec<bool>> = vec![vec![false; k_hat]; k_hat];
    for t in 0..k_hat {
        let mut stack = seen_parents[t].clone();
        while let Some(p) = stack.pop() {
            if !seen_anc[t][p] {
                seen_anc[t][p] = true;
                stack.extend(seen_parents[p].iter().copied());
            }
        }
    }

    // Desired leaves: each picks parents; its signature is the full seen
    // ancestor set, which must be distinct across classes (except a forced
    // pair) and must not swallow the whole seen set.
    let mut signatures: Vec<Vec<bool>> = Vec::with_capacity(k);
    let mut parents_of: Vec<Vec<usize>> = Vec::with_capacity(k);
    for d in 0..k {
        if d == 1 && spec.force_indistinct_pair {
            signatures.push(signatures[0].clone());
            parents_of.push(parents_of[0].clone());
            continue;
        }
        let mut placed = false;
        for _ in 0..SIGNATURE_RETRIES {
            let n_parents = 1 + rng.gen_bool(spec.density.overlap) as usize;
            let mut parents = Vec::with_capacity(n_parents);
            while parents.len() < n_parents.min(k_hat) {
                let p = rng.gen_range(0..k_hat);
                if !parents.contains(&p) {
                    parents.push(p);
                }
            }
            let mut sig = vec![false; k_hat];
            for &p in &parents {
                sig[p] = true;
                for (s, &is_anc) in seen_anc[p].iter().enumerate() {
                    if is_anc {
                        sig[s] = true;
                    }
                }
            }
            if sig.iter().all(|&b| b) {
                continue; // every seen label an ancestor: no exclusive vote possible
            }
            let clash = signatures.iter().enumerate().any(|(other, s)| {
                *s == sig && !(spec.force_indistinct_pair && other == 0 && d == 1)
            });
            if clash {
                continue;
            }
            signatures.push(sig);
            parents_of.push(parents);
            placed = true;
            break;
        }
        if !placed {
            return Err(SynthError::Unsatisfiable(format!(
                "no distinct ancestor signature for desired class {d} (seen = {k_hat})"
            )));
        }
    }

    // Assemble the DAG: desired ids 0..k, seen ids k..k+k_hat.
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for (t, parents) in seen_parents.iter().enumerate() {
        for &p in parents {
            edges.push((k + p, k + t));
        }
    }
    for (d, parents) in parents_of.iter().enumerate() {
        for &p in parents {
            edges.push((k + p, d));
        }
    }
    let roles: Vec<Role> =
        (0..k).map(|_| Role::Desired).chain((0..k_hat).map(|_| Role::Seen)).collect();
    let names: Vec<String> =
        (0..k).map(|d| format!("y{d}")).chain((0..k_hat).map(|s| format!("s{s}"))).collect();
    let graph = LabelGraph::from_dag(&edges, &roles, &names)?;

    debug_assert!(graph.check_consistency().consistent);
    let distinct = graph.check_distinguishability();
    if spec.force_indistinct_pair {
        let expected = (LabelId(0), LabelId(1));
        if distinct.indistinct_pairs.len() != 1 || distinct.indistinct_pairs[0].pair != expected {
            return Err(SynthError::Unsatisfiable(
                "planted pair did not come out as the only indistinct pair".into(),
            ));
        }
    } else if !distinct.distinguishable {
        return Err(SynthError::Unsatisfiable("accidental indistinct pair".into()));
    }

    // ILF output spaces: sampled, then repaired so every desired class has
    // both a compatible and an incompatible label available in every ILF.
    let seen_ids: Vec<LabelId> = graph.seen().to_vec();
    let mut ilfs = Vec::with_capacity(spec.ilfs);
    for j in 0..spec.ilfs {
        let target = 2 + rng.gen_range(0..2usize.min(k_hat.saturating_sub(1)));
        let mut space: Vec<usize> = Vec::new();
        while space.len() < target.min(k_hat) {
            let s = rng.gen_range(0..k_hat);
            if !space.contains(&s) {
                space.push(s);
            }
        }
        for sig in &signatures {
            if !space.iter().any(|&s| sig[s]) {
                let anc: Vec<usize> =
                    (0..k_hat).filter(|&s| sig[s] && !space.contains(&s)).collect();
                if let Some(&pick) = anc.choose(&mut rng) {
                    space.push(pick);
                }
            }
            if !space.iter().any(|&s| !sig[s]) {
                let non_anc: Vec<usize> =
                    (0..k_hat).filter(|&s| !sig[s] && !space.contains(&s)).collect();
                match non_anc.choose(&mut rng) {
                    Some(&pick) => space.push(pick),
                    None => {
                        return Err(SynthError::Unsatisfiable(format!(
                            "ILF {j} cannot get an incompatible label"
                        )))
                    }
                }
            }
        }
        let ids: Vec<LabelId> = space.iter().map(|&s| seen_ids[s]).collect();
        ilfs.push(IlfSpec::new(j, ids, spec.ilf_abstain[j] > 0.0));
    }

    // Gold labels and noisy votes.
    let desired_ids: Vec<LabelId> = graph.desired().to_vec();
    let gold: Vec<LabelId> =
        (0..spec.data_points).map(|_| desired_ids[rng.gen_range(0..k)]).collect();
    let seen_pos = |id: LabelId| seen_ids.iter().position(|&s| s == id).unwrap();
    let mut rows = Vec::with_capacity(spec.data_points);
    for &g in &gold {
        let sig = &signatures[g.0];
        let mut row = Vec::with_capacity(spec.ilfs);
        for (j, ilf) in ilfs.iter().enumerate() {
            if spec.ilf_abstain[j] > 0.0 && rng.gen_bool(spec.ilf_abstain[j]) {
                row.push(None);
                continue;
            }
            let (compat, incompat): (Vec<LabelId>, Vec<LabelId>) =
                ilf.output_space.iter().partition(|&&s| sig[seen_pos(s)]);
            let vote = if rng.gen_bool(spec.ilf_accuracy[j]) {
                *compat.choose(&mut rng).expect("repair guarantees a compatible label")
            } else {
                *incompat.choose(&mut rng).expect("repair guarantees an incompatible label")
            };
            row.push(Some(vote));
        }
        rows.push(row);
    }
    let outputs = IlfOutputMatrix::new((0..spec.ilfs).collect(), rows)?;
    outputs.validate(&ilfs)?;
    Ok(SynthTask { graph, ilfs, gold, outputs })
}

/// Draws `m` i.i.d. full configurations from a parameterized model and
/// splits them into observed votes and hidden gold labels.
pub fn sample_from_model(
    model: &FactorModel,
    m: usize,
    seed: u64,
) -> Result<(IlfOutputMatrix, Vec<YValue>), SynthError> {
    let table = exact_joint_table(model, &EnumerationBudget::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(m);
    let mut gold = Vec::with_capacity(m);
    for _ in 0..m {
        let a = table.sample(model, &mut rng);
        let row: Vec<Option<LabelId>> = a
            .lambda
            .iter()
            .map(|cell| cell.map(|pos| model.seen_labels()[pos].id))
            .collect();
        rows.push(row);
        gold.push(a.y);
    }
    let ilf_ids = model.ilf_domains().iter().map(|d| d.ilf_id).collect();
    Ok((IlfOutputMatrix::new(ilf_ids, rows)?, gold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: LabelId,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// Accuracy and macro-F1 over the given classes. Abstentions and
/// out-of-class predictions count as wrong everywhere.
pub fn evaluate(
    pred: &[Option<LabelId>],
    gold: &[LabelId],
    classes: &[LabelId],
) -> Result<Metrics, SynthError> {
    if pred.len() != gold.len() {
        return Err(SynthError::LengthMismatch { pred: pred.len(), gold: gold.len() });
    }
    let correct = pred.iter().zip(gold).filter(|(p, g)| **p == Some(**g)).count();
    let accuracy = correct as f64 / gold.len().max(1) as f64;
    let mut per_class = Vec::with_capacity(classes.len());
    for &c in classes {
        let tp = pred.iter().zip(gold).filter(|(p, g)| **p == Some(c) && **g == c).count();
        let fp = pred.iter().zip(gold).filter(|(p, g)| **p == Some(c) && **g != c).count();
        let fn_ = pred.iter().zip(gold).filter(|(p, g)| **p != Some(c) && **g == c).count();
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
        let f1 = if 2 * tp + fp + fn_ > 0 {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        } else {
            0.0
        };
        per_class.push(ClassMetrics { label: c, precision, recall, f1, support: fn_ + tp });
    }
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len().max(1) as f64;
    Ok(Metrics { accuracy, macro_f1, per_class })
}

/// Maps posterior rows to hard predictions over the desired ids (which must
/// be in the same ascending order the model was built from). A winning
/// unknown class maps to `None`.
pub fn hard_predictions(
    probs: &[Vec<f64>],
    desired: &[LabelId],
) -> Vec<Option<LabelId>> {
    probs
        .iter()
        .map(|row| {
            let mut best = 0usize;
            for (i, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = i;
                }
            }
            desired.get(best).copied()
        })
        .collect()
}

/// Gaussian class clusters for end-model experiments: one mean per desired
/// class drawn from `N(0, separation^2 I)`, unit-variance points around it.
/// Means depend only on `(seed, class index)`, so train and test splits
/// generated with the same seed share them.
pub fn gaussian_features(
    gold: &[LabelId],
    desired: &[LabelId],
    dim: usize,
    separation: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut mean_rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xFEA7));
    let means: Vec<Vec<f64>> = desired
        .iter()
        .map(|_| (0..dim).map(|_| separation * mean_rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xDA7A));
    gold.iter()
        .map(|g| {
            let c = desired.iter().position(|&d| d == *g).expect("gold label not in class list");
            (0..dim)
                .map(|i| means[c][i] + rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BuildOptions;

    fn base_spec() -> SimSpec {
        SimSpec::uniform(3, 6, 4, 0.8, 0.1, 500, 11)
    }

    #[test]
    fn generated_tasks_pass_structural_checks() {
        for seed in 0..10 {
            let spec = SimSpec { seed, ..base_spec() };
            let task = generate_task(&spec).unwrap();
            assert!(task.graph.check_consistency().consistent);
            assert!(task.graph.check_distinguishability().distinguishable);
            assert_eq!(task.gold.len(), 500);
            assert_eq!(task.outputs.n_rows(), 500);
            task.outputs.validate(&task.ilfs).unwrap();
        }
    }

    #[test]
    fn forced_pair_is_flagged_exactly_once() {
        let spec = SimSpec { force_indistinct_pair: true, ..base_spec() };
        let task = generate_task(&spec).unwrap();
        assert!(task.graph.check_consistency().consistent);
        let report = task.graph.check_distinguishability();
        assert_eq!(report.indistinct_pairs.len(), 1);
        assert_eq!(report.indistinct_pairs[0].pair, (LabelId(0), LabelId(1)));
    }

    #[test]
    fn perfect_ilfs_only_vote_compatibly() {
        let mut spec = base_spec();
        spec.ilf_accuracy = vec![1.0; spec.ilfs];
        spec.ilf_abstain = vec![0.0; spec.ilfs];
        spec.data_points = 200;
        let task = generate_task(&spec).unwrap();
        for (row, &gold) in task.outputs.rows().zip(&task.gold) {
            for (j, cell) in row.iter().enumerate() {
                let vote = cell.expect("abstain disabled");
                let neighbors = task
                    .graph
                    .non_exclusive_neighbors(gold, &task.ilfs[j].output_space)
                    .unwrap();
                assert!(neighbors.contains(&vote));
            }
        }
    }

    #[test]
    fn compatible_vote_rate_tracks_configured_accuracy() {
        let mut spec = base_spec();
        spec.ilf_accuracy = vec![0.7; spec.ilfs];
        spec.ilf_abstain = vec![0.2; spec.ilfs];
        spec.data_points = 10_000;
        let task = generate_task(&spec).unwrap();
        let mut compatible = 0usize;
        let mut votes = 0usize;
        for (row, &gold) in task.outputs.rows().zip(&task.gold) {
            for (j, cell) in row.iter().enumerate() {
                if let Some(vote) = cell {
                    votes += 1;
                    let n = task
                        .graph
                        .non_exclusive_neighbors(gold, &task.ilfs[j].output_space)
                        .unwrap();
                    compatible += n.contains(vote) as usize;
                }
            }
        }
        let rate = compatible as f64 / votes as f64;
        assert!((rate - 0.7).abs() < 0.02, "compatible rate {rate}");
        // abstain rate sanity too
        let total = (task.outputs.n_rows() * task.outputs.n_ilfs()) as f64;
        let abstain_rate = 1.0 - votes as f64 / total;
        assert!((abstain_rate - 0.2).abs() < 0.02);
    }

    #[test]
    fn sampling_from_model_matches_enumerated_marginals() {
        let spec = SimSpec::uniform(2, 3, 2, 0.8, 0.1, 10, 3);
        let task = generate_task(&spec).unwrap();
        let mut model =
            FactorModel::build_plrm(&task.graph, &task.ilfs, BuildOptions::default()).unwrap();
        let theta: Vec<f64> =
            (0..model.dependency_count()).map(|i| 0.1 + 0.05 * (i % 7) as f64).collect();
        model.set_theta(theta).unwrap();

        let m = 100_000usize;
        let (outputs, gold) = sample_from_model(&model, m, 99).unwrap();
        assert_eq!(outputs.n_rows(), m);
        assert_eq!(gold.len(), m);

        let exact = exact_joint_table(&model, &EnumerationBudget::default())
            .unwrap()
            .y_marginal();
        let mut counts = vec![0usize; model.y_count()];
        for g in &gold {
            counts[model.y_index(*g)] += 1;
        }
        for (&c, &p) in counts.iter().zip(&exact) {
            let freq = c as f64 / m as f64;
            let sigma = (p * (1.0 - p) / m as f64).sqrt();
            assert!(
                (freq - p).abs() < 3.0 * sigma + 1e-9,
                "empirical {freq} vs exact {p}"
            );
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = SimSpec::uniform(2, 3, 2, 0.8, 0.0, 5, 4);
        let task = generate_task(&spec).unwrap();
        let model =
            FactorModel::build_plrm(&task.graph, &task.ilfs, BuildOptions::default()).unwrap();
        let (a, ga) = sample_from_model(&model, 50, 7).unwrap();
        let (b, gb) = sample_from_model(&model, 50, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }

    #[test]
    fn metrics_examples() {
        let classes = vec![LabelId(0), LabelId(1), LabelId(2)];
        // perfect predictions
        let gold = vec![LabelId(0), LabelId(1), LabelId(2), LabelId(0)];
        let pred: Vec<Option<LabelId>> = gold.iter().map(|&g| Some(g)).collect();
        let m = evaluate(&pred, &gold, &classes).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);

        // class 2 never predicted: its zero F1 drags the macro mean
        let pred = vec![Some(LabelId(0)), Some(LabelId(1)), Some(LabelId(0)), Some(LabelId(0))];
        let m = evaluate(&pred, &gold, &classes).unwrap();
        assert_eq!(m.per_class[2].f1, 0.0);
        assert!(m.macro_f1 < 1.0);

        // hand-computed 3-class confusion: gold (0,0,1,1,2,2),
        // pred (0,1,1,1,2,0)
        let gold = [0, 0, 1, 1, 2, 2].map(LabelId).to_vec();
        let pred: Vec<Option<LabelId>> =
            [0, 1, 1, 1, 2, 0].map(LabelId).into_iter().map(Some).collect();
        let m = evaluate(&pred, &gold, &classes).unwrap();
        assert!((m.accuracy - 4.0 / 6.0).abs() < 1e-12);
        // class 0: tp=1 fp=1 fn=1 -> f1 = 2/4; class 1: tp=2 fp=1 fn=0 ->
        // f1 = 4/5; class 2: tp=1 fp=0 fn=1 -> f1 = 2/3
        let expected = (0.5 + 0.8 + 2.0 / 3.0) / 3.0;
        assert!((m.macro_f1 - expected).abs() < 1e-12);

        // abstention counts as wrong
        let pred = vec![None, Some(LabelId(0)), None, None, None, None];
        let m = evaluate(&pred, &gold, &classes).unwrap();
        assert!((m.accuracy - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let classes = vec![LabelId(0), LabelId(1)];
        let gold = [0, 1, 0, 1, 1, 0].map(LabelId).to_vec();
        let pred: Vec<Option<LabelId>> =
            [0, 0, 1, 1, 1, 0].map(LabelId).into_iter().map(Some).collect();
        let base = evaluate(&pred, &gold, &classes).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let gold_p: Vec<LabelId> = perm.iter().map(|&i| gold[i]).collect();
        let pred_p: Vec<Option<LabelId>> = perm.iter().map(|&i| pred[i]).collect();
        let shuffled = evaluate(&pred_p, &gold_p, &classes).unwrap();
        assert_eq!(base, shuffled);
    }

    #[test]
    fn evaluate_rejects_length_mismatch() {
        let r = evaluate(&[Some(LabelId(0))], &[LabelId(0), LabelId(1)], &[LabelId(0)]);
        assert!(matches!(r, Err(SynthError::LengthMismatch { .. })));
    }

    #[test]
    fn gaussian_features_share_means_across_splits() {
        let desired = vec![LabelId(0), LabelId(1)];
        let gold = vec![LabelId(0); 400];
        let a = gaussian_features(&gold, &desired, 4, 3.0, 5);
        let b = gaussian_features(&vec![LabelId(0); 300], &desired, 4, 3.0, 5);
        let mean = |xs: &Vec<Vec<f64>>, i: usize| {
            xs.iter().map(|x| x[i]).sum::<f64>() / xs.len() as f64
        };
        for i in 0..4 {
            assert!((mean(&a, i) - mean(&b, i)).abs() < 0.5, "dimension {i} drifted");
        }
        // a different seed moves the class means
        let c = gaussian_features(&gold, &desired, 4, 3.0, 6);
        let moved = (0..4).any(|i| (mean(&a, i) - mean(&c, i)).abs() > 0.5);
        assert!(moved);
    }
}
