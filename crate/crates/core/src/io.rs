//! File formats: JSON codecs for graphs, ILF specs, DAG imports, models,
//! metrics and simulation specs; CSV codecs for output matrices, gold
//! labels and feature tables; JSON-lines for posterior labels.
//!
//! Every encoder is canonical — fixed key order, shortest-round-trip float
//! formatting, one trailing newline — so decoding and re-encoding a file
//! produced here is byte-identical.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::LinearModel;
use crate::data::{DataError, IlfOutputMatrix};
use crate::graph::{GraphError, IlfSpec, Label, LabelGraph, LabelId, RelationType, Role};
use crate::inference::{PosteriorLabels, Provenance};
use crate::model::{Dependency, FactorModel, Family, IlfDomain, ModelError, ModelKind};
use crate::synthlab::{Metrics, SimSpec};
use crate::training::EpochLog;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
}

fn format_err(what: &'static str, reason: impl Into<String>) -> IoError {
    IoError::Format { what, reason: reason.into() }
}

/// Hex SHA-256 of a byte string; used for content references in model files.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialization cannot fail");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// Graph file
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct RelationEntry {
    a: usize,
    b: usize,
    #[serde(rename = "type")]
    relation: RelationType,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    labels: Vec<Label>,
    relations: Vec<RelationEntry>,
}

pub fn encode_graph(graph: &LabelGraph) -> String {
    let mut relations = Vec::new();
    for b in 1..graph.len() {
        for a in 0..b {
            relations.push(RelationEntry {
                a,
                b,
                relation: graph.relation(LabelId(a), LabelId(b)).unwrap(),
            });
        }
    }
    to_pretty(&GraphFile { labels: graph.labels().to_vec(), relations })
}

pub fn decode_graph(text: &str) -> Result<LabelGraph, IoError> {
    let file: GraphFile = serde_json::from_str(text)?;
    let relations = file
        .relations
        .into_iter()
        .map(|e| (LabelId(e.a), LabelId(e.b), e.relation));
    Ok(LabelGraph::new(file.labels, relations)?)
}

// ---------------------------------------------------------------------------
// ILF spec file
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct IlfsFile {
    ilfs: Vec<IlfSpec>,
}

pub fn encode_ilfs(ilfs: &[IlfSpec]) -> String {
    to_pretty(&IlfsFile { ilfs: ilfs.to_vec() })
}

pub fn decode_ilfs(text: &str) -> Result<Vec<IlfSpec>, IoError> {
    let file: IlfsFile = serde_json::from_str(text)?;
    Ok(file.ilfs)
}

// ---------------------------------------------------------------------------
// DAG import file
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DagFile {
    edges: Vec<(usize, usize)>,
    roles: BTreeMap<String, Role>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    names: BTreeMap<String, String>,
}

/// Parses a `{"edges": [[parent, child], ...], "roles": {"0": "seen", ...}}`
/// taxonomy and converts it to its label graph. Node ids must be dense.
pub fn decode_dag(text: &str) -> Result<LabelGraph, IoError> {
    let file: DagFile = serde_json::from_str(text)?;
    let n = file.roles.len();
    let mut roles = vec![None; n];
    for (key, role) in &file.roles {
        let idx: usize = key
            .parse()
            .map_err(|_| format_err("dag file", format!("role key {key:?} is not an integer")))?;
        if idx >= n {
            return Err(format_err("dag file", format!("role ids must be dense, got {idx} of {n}")));
        }
        roles[idx] = Some(*role);
    }
    let roles: Vec<Role> = roles
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| format_err("dag file", format!("missing role for node {i}"))))
        .collect::<Result<_, _>>()?;
    let names: Vec<String> = (0..n)
        .map(|i| file.names.get(&i.to_string()).cloned().unwrap_or_else(|| format!("label_{i}")))
        .collect();
    Ok(LabelGraph::from_dag(&file.edges, &roles, &names)?)
}

// ---------------------------------------------------------------------------
// ILF output matrix CSV
// ---------------------------------------------------------------------------

/// Wire token for an abstention in CSV cells.
pub const ABSTAIN_TOKEN: &str = "-";

pub fn encode_outputs_csv(outputs: &IlfOutputMatrix) -> String {
    let mut text = String::new();
    let header: Vec<String> = outputs.ilf_ids().iter().map(|id| id.to_string()).collect();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in outputs.rows() {
        let cells: Vec<String> = row
            .iter()
            .map(|cell| match cell {
                Some(label) => label.0.to_string(),
                None => ABSTAIN_TOKEN.to_string(),
            })
            .collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    text
}

pub fn decode_outputs_csv(text: &str) -> Result<IlfOutputMatrix, IoError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let ilf_ids: Vec<usize> = reader
        .headers()?
        .iter()
        .map(|h| {
            h.trim()
                .parse()
                .map_err(|_| format_err("outputs csv", format!("header {h:?} is not an ILF id")))
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut row = Vec::with_capacity(ilf_ids.len());
        for cell in record.iter() {
            let cell = cell.trim();
            if cell == ABSTAIN_TOKEN {
                row.push(None);
            } else {
                let id: usize = cell.parse().map_err(|_| {
                    format_err("outputs csv", format!("cell {cell:?} is not a label id"))
                })?;
                row.push(Some(LabelId(id)));
            }
        }
        rows.push(row);
    }
    Ok(IlfOutputMatrix::new(ilf_ids, rows)?)
}

// ---------------------------------------------------------------------------
// Gold labels CSV (label names, one per row)
// ---------------------------------------------------------------------------

pub fn encode_gold_csv(gold: &[String]) -> String {
    let mut text = String::from("gold\n");
    for name in gold {
        text.push_str(name);
        text.push('\n');
    }
    text
}

pub fn decode_gold_csv(text: &str) -> Result<Vec<String>, IoError> {
    let mut lines = text.lines();
    match lines.next() {
        Some("gold") => {}
        other => {
            return Err(format_err("gold csv", format!("expected header 'gold', got {other:?}")))
        }
    }
    Ok(lines.map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
}

// ---------------------------------------------------------------------------
// Feature table CSV
// ---------------------------------------------------------------------------

pub fn encode_features_csv(features: &[Vec<f64>]) -> String {
    let dim = features.first().map_or(0, |r| r.len());
    let mut text = String::new();
    let header: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in features {
        let cells: Vec<String> =
            row.iter().map(|v| serde_json::to_string(v).unwrap()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    text
}

pub fn decode_features_csv(text: &str) -> Result<Vec<Vec<f64>>, IoError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row: Vec<f64> = record
            .iter()
            .map(|c| {
                c.trim().parse().map_err(|_| {
                    format_err("features csv", format!("cell {c:?} is not a number"))
                })
            })
            .collect::<Result<_, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DependencyEntry {
    family: Family,
    /// Global label ids (and trailing ILF id where applicable):
    /// pseudo_accuracy `[desired, seen, ilf]`, accuracy `[seen, ilf]`,
    /// seen_seen_relation `[a, b]`, desired_seen_relation `[desired, seen]`.
    participants: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    relation: Option<RelationType>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    kind: ModelKind,
    include_unknown: bool,
    desired: Vec<Label>,
    seen: Vec<Label>,
    ilfs: Vec<IlfSpec>,
    dependencies: Vec<DependencyEntry>,
    theta: Vec<f64>,
    graph_sha256: String,
    ilfs_sha256: String,
}

pub fn encode_model(model: &FactorModel, graph_sha256: &str, ilfs_sha256: &str) -> String {
    let desired = model.desired_labels();
    let seen = model.seen_labels();
    let ilfs: Vec<IlfSpec> = model
        .ilf_domains()
        .iter()
        .map(|dom| IlfSpec {
            ilf_id: dom.ilf_id,
            output_space: dom.outputs.iter().map(|&p| seen[p].id).collect(),
            can_abstain: dom.can_abstain,
        })
        .collect();
    let dependencies = model
        .dependencies()
        .iter()
        .map(|dep| match *dep {
            Dependency::PseudoAccuracy { desired: d, seen: s, ilf } => DependencyEntry {
                family: Family::PseudoAccuracy,
                participants: vec![desired[d].id.0, seen[s].id.0, ilfs[ilf].ilf_id],
                relation: None,
            },
            Dependency::Accuracy { seen: s, ilf } => DependencyEntry {
                family: Family::Accuracy,
                participants: vec![seen[s].id.0, ilfs[ilf].ilf_id],
                relation: None,
            },
            Dependency::SeenSeenRelation { a, b, relation } => DependencyEntry {
                family: Family::SeenSeenRelation,
                participants: vec![seen[a].id.0, seen[b].id.0],
                relation: Some(relation),
            },
            Dependency::DesiredSeenRelation { desired: d, seen: s, relation } => DependencyEntry {
                family: Family::DesiredSeenRelation,
                participants: vec![desired[d].id.0, seen[s].id.0],
                relation: Some(relation),
            },
        })
        .collect();
    to_pretty(&ModelFile {
        kind: model.kind(),
        include_unknown: model.include_unknown(),
        desired: desired.to_vec(),
        seen: seen.to_vec(),
        ilfs,
        dependencies,
        theta: model.theta().to_vec(),
        graph_sha256: graph_sha256.to_string(),
        ilfs_sha256: ilfs_sha256.to_string(),
    })
}

/// Decoded model plus the content hashes it was saved with.
pub struct DecodedModel {
    pub model: FactorModel,
    pub graph_sha256: String,
    pub ilfs_sha256: String,
}

pub fn decode_model(text: &str) -> Result<DecodedModel, IoError> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.theta.len() != file.dependencies.len() {
        return Err(format_err(
            "model file",
            format!("{} theta values for {} dependencies", file.theta.len(), file.dependencies.len()),
        ));
    }
    let desired_pos = |id: usize| {
        file.desired
            .iter()
            .position(|l| l.id.0 == id)
            .ok_or_else(|| format_err("model file", format!("unknown desired label id {id}")))
    };
    let seen_pos = |id: usize| {
        file.seen
            .iter()
            .position(|l| l.id.0 == id)
            .ok_or_else(|| format_err("model file", format!("unknown seen label id {id}")))
    };
    let ilf_pos = |id: usize| {
        file.ilfs
            .iter()
            .position(|s| s.ilf_id == id)
            .ok_or_else(|| format_err("model file", format!("unknown ILF id {id}")))
    };

    let mut deps = Vec::with_capacity(file.dependencies.len());
    for entry in &file.dependencies {
        let p = &entry.participants;
        let dep = match (entry.family, p.len(), entry.relation) {
            (Family::PseudoAccuracy, 3, None) => Dependency::PseudoAccuracy {
                desired: desired_pos(p[0])?,
                seen: seen_pos(p[1])?,
                ilf: ilf_pos(p[2])?,
            },
            (Family::Accuracy, 2, None) => {
                Dependency::Accuracy { seen: seen_pos(p[0])?, ilf: ilf_pos(p[1])? }
            }
            (Family::SeenSeenRelation, 2, Some(relation)) => Dependency::SeenSeenRelation {
                a: seen_pos(p[0])?,
                b: seen_pos(p[1])?,
                relation,
            },
            (Family::DesiredSeenRelation, 2, Some(relation)) => Dependency::DesiredSeenRelation {
                desired: desired_pos(p[0])?,
                seen: seen_pos(p[1])?,
                relation,
            },
            _ => {
                return Err(format_err(
                    "model file",
                    format!("bad dependency entry for family {:?}", entry.family),
                ))
            }
        };
        deps.push(dep);
    }

    let seen_labels = file.seen.clone();
    let domains: Vec<IlfDomain> = file
        .ilfs
        .iter()
        .map(|spec| {
            let outputs = spec
                .output_space
                .iter()
                .map(|id| seen_pos(id.0))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(IlfDomain { ilf_id: spec.ilf_id, outputs, can_abstain: spec.can_abstain })
        })
        .collect::<Result<_, IoError>>()?;

    let model = FactorModel::assemble(
        file.kind,
        file.include_unknown,
        file.desired,
        seen_labels,
        domains,
        deps,
        file.theta,
    );
    Ok(DecodedModel {
        model,
        graph_sha256: file.graph_sha256,
        ilfs_sha256: file.ilfs_sha256,
    })
}

// ---------------------------------------------------------------------------
// Posterior labels JSON-lines
// ---------------------------------------------------------------------------

/// One line per data point: `{"point": idx, "p": {label_name: prob, ...}}`
/// with classes in model order.
pub fn encode_posteriors(post: &PosteriorLabels) -> String {
    let mut text = String::new();
    for (i, row) in post.probs.iter().enumerate() {
        let pairs: Vec<String> = post
            .class_names
            .iter()
            .zip(row)
            .map(|(name, p)| {
                format!(
                    "{}:{}",
                    serde_json::to_string(name).unwrap(),
                    serde_json::to_string(p).unwrap()
                )
            })
            .collect();
        text.push_str(&format!("{{\"point\":{},\"p\":{{{}}}}}\n", i, pairs.join(",")));
    }
    text
}

/// Reads posterior lines back into rows aligned to the sorted union of
/// class names. Missing classes in a line read as probability zero.
pub fn decode_posteriors(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), IoError> {
    #[derive(Deserialize)]
    struct Line {
        point: usize,
        p: BTreeMap<String, f64>,
    }
    let mut lines = Vec::new();
    for raw in text.lines().filter(|l| !l.trim().is_empty()) {
        lines.push(serde_json::from_str::<Line>(raw)?);
    }
    lines.sort_by_key(|l| l.point);
    let mut classes: Vec<String> = lines
        .iter()
        .flat_map(|l| l.p.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    classes.sort();
    let rows = lines
        .iter()
        .map(|l| classes.iter().map(|c| l.p.get(c).copied().unwrap_or(0.0)).collect())
        .collect();
    Ok((classes, rows))
}

/// Degenerate distributions for hard predictions; abstentions become
/// all-zero rows.
pub fn hard_to_posteriors(
    class_names: &[String],
    predictions: &[Option<usize>],
    provenance: Provenance,
) -> PosteriorLabels {
    let probs = predictions
        .iter()
        .map(|p| {
            let mut row = vec![0.0; class_names.len()];
            if let Some(idx) = p {
                row[*idx] = 1.0;
            }
            row
        })
        .collect();
    PosteriorLabels { class_names: class_names.to_vec(), probs, provenance }
}

// ---------------------------------------------------------------------------
// Misc JSON passthroughs
// ---------------------------------------------------------------------------

pub fn encode_metrics(metrics: &Metrics) -> String {
    to_pretty(metrics)
}

pub fn decode_metrics(text: &str) -> Result<Metrics, IoError> {
    Ok(serde_json::from_str(text)?)
}

pub fn encode_sim_spec(spec: &SimSpec) -> String {
    to_pretty(spec)
}

pub fn decode_sim_spec(text: &str) -> Result<SimSpec, IoError> {
    Ok(serde_json::from_str(text)?)
}

pub fn encode_train_log(epochs: &[EpochLog]) -> String {
    let mut text = String::new();
    for e in epochs {
        text.push_str(&serde_json::to_string(e).unwrap());
        text.push('\n');
    }
    text
}

#[derive(Serialize, Deserialize)]
pub struct LinearModelFile {
    pub classes: Vec<String>,
    pub model: LinearModel,
}

pub fn encode_linear_model(file: &LinearModelFile) -> String {
    to_pretty(file)
}

pub fn decode_linear_model(text: &str) -> Result<LinearModelFile, IoError> {
    Ok(serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BuildOptions;
    use crate::synthlab::{generate_task, SimSpec};

    fn task() -> crate::synthlab::SynthTask {
        generate_task(&SimSpec::uniform(3, 5, 3, 0.8, 0.1, 20, 5)).unwrap()
    }

    #[test]
    fn graph_roundtrip_is_byte_identical() {
        let t = task();
        let text = encode_graph(&t.graph);
        let decoded = decode_graph(&text).unwrap();
        assert_eq!(decoded, t.graph);
        assert_eq!(encode_graph(&decoded), text);
    }

    #[test]
    fn ilfs_roundtrip_is_byte_identical() {
        let t = task();
        let text = encode_ilfs(&t.ilfs);
        let decoded = decode_ilfs(&text).unwrap();
        assert_eq!(decoded, t.ilfs);
        assert_eq!(encode_ilfs(&decoded), text);
    }

    #[test]
    fn outputs_roundtrip_with_abstain_token() {
        let t = task();
        let text = encode_outputs_csv(&t.outputs);
        let decoded = decode_outputs_csv(&text).unwrap();
        assert_eq!(decoded, t.outputs);
        assert_eq!(encode_outputs_csv(&decoded), text);
        // the abstain token is a literal dash
        assert!(text.contains(ABSTAIN_TOKEN));
    }

    #[test]
    fn model_roundtrip_preserves_everything() {
        let t = task();
        let mut model =
            FactorModel::build_plrm(&t.graph, &t.ilfs, BuildOptions::default()).unwrap();
        let theta: Vec<f64> =
            (0..model.dependency_count()).map(|i| 0.1 + 1e-7 * i as f64).collect();
        model.set_theta(theta).unwrap();
        let g_hash = sha256_hex(encode_graph(&t.graph).as_bytes());
        let i_hash = sha256_hex(encode_ilfs(&t.ilfs).as_bytes());
        let text = encode_model(&model, &g_hash, &i_hash);
        let decoded = decode_model(&text).unwrap();
        assert_eq!(decoded.model, model);
        assert_eq!(decoded.graph_sha256, g_hash);
        assert_eq!(encode_model(&decoded.model, &decoded.graph_sha256, &decoded.ilfs_sha256), text);
    }

    #[test]
    fn posteriors_roundtrip() {
        let post = PosteriorLabels {
            class_names: vec!["a".into(), "b".into(), "unknown".into()],
            probs: vec![vec![0.25, 0.5, 0.25], vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]],
            provenance: Provenance::Exact,
        };
        let text = encode_posteriors(&post);
        let (classes, rows) = decode_posteriors(&text).unwrap();
        assert_eq!(classes, vec!["a".to_string(), "b".into(), "unknown".into()]);
        for (orig, read) in post.probs.iter().zip(&rows) {
            for (x, y) in orig.iter().zip(read) {
                assert_eq!(x, y, "float must survive the round trip exactly");
            }
        }
    }

    #[test]
    fn gold_and_features_roundtrip() {
        let gold = vec!["y0".to_string(), "y2".into(), "y1".into()];
        let text = encode_gold_csv(&gold);
        assert_eq!(decode_gold_csv(&text).unwrap(), gold);

        let features = vec![vec![0.5, -1.25], vec![3.0, 1e-9]];
        let text = encode_features_csv(&features);
        let decoded = decode_features_csv(&text).unwrap();
        assert_eq!(decoded, features);
        assert_eq!(encode_features_csv(&decoded), text);
    }

    #[test]
    fn dag_decode_matches_direct_construction() {
        let text = r#"{
            "edges": [[0, 1], [0, 2]],
            "roles": {"0": "seen", "1": "desired", "2": "desired"},
            "names": {"0": "root", "1": "left", "2": "right"}
        }"#;
        let g = decode_dag(text).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.label_by_name("root").unwrap().id, LabelId(0));
        assert_eq!(
            g.relation(LabelId(0), LabelId(1)).unwrap(),
            RelationType::Subsuming
        );
        assert_eq!(g.relation(LabelId(1), LabelId(2)).unwrap(), RelationType::Exclusive);
    }

    #[test]
    fn dag_decode_rejects_missing_roles() {
        let text = r#"{"edges": [[0, 1]], "roles": {"0": "seen"}}"#;
        assert!(decode_dag(text).is_err());
    }

    #[test]
    fn sim_spec_and_metrics_roundtrip() {
        let spec = SimSpec::uniform(3, 6, 4, 0.75, 0.1, 100, 9);
        let text = encode_sim_spec(&spec);
        let decoded = decode_sim_spec(&text).unwrap();
        assert_eq!(encode_sim_spec(&decoded), text);

        let metrics = crate::synthlab::evaluate(
            &[Some(LabelId(0)), None],
            &[LabelId(0), LabelId(1)],
            &[LabelId(0), LabelId(1)],
        )
        .unwrap();
        let text = encode_metrics(&metrics);
        let decoded = decode_metrics(&text).unwrap();
        assert_eq!(decoded, metrics);
        assert_eq!(encode_metrics(&decoded), text);
    }
}
