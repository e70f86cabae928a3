//! Reading and writing scene graphs in the GQA `sceneGraphs` layout:
//! `image_id -> { "objects": { object_id -> { name, attributes, relations } } }`.
//!
//! Generated graphs add optional `confidence`, `attribute_confidences` and
//! `relation_confidences` fields. Unknown keys (boxes, `location`,
//! `weather`, ...) are ignored so published GQA files load unchanged.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ObjectNode, RelationEdge, SceneGraph};
use crate::error::{Error, Result};

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ParseReport {
    /// Relations whose target object id was not present in the record.
    pub dropped_relations: usize,
}

#[derive(Deserialize)]
struct RawImage {
    objects: BTreeMap<String, RawObject>,
}

#[derive(Deserialize)]
struct RawObject {
    name: Option<String>,
    #[serde(default)]
    attributes: Vec<String>,
    #[serde(default)]
    relations: Vec<RawRelation>,
    confidence: Option<f64>,
    attribute_confidences: Option<Vec<f64>>,
    relation_confidences: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawRelation {
    name: String,
    object: String,
}

#[derive(Serialize)]
struct OutImage<'a> {
    objects: BTreeMap<String, OutObject<'a>>,
}

#[derive(Serialize)]
struct OutObject<'a> {
    name: &'a str,
    attributes: &'a [String],
    relations: Vec<OutRelation<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attribute_confidences: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    relation_confidences: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct OutRelation<'a> {
    name: &'a str,
    object: String,
}

/// Parses one image record. Nodes follow the sorted order of object keys;
/// relations pointing at absent objects are dropped and counted.
pub fn parse_scene_graph(record: &Value, image_id: &str) -> Result<(SceneGraph, ParseReport)> {
    let raw: RawImage = RawImage::deserialize(record).map_err(|e| Error::Schema {
        key: image_id.to_string(),
        message: e.to_string(),
    })?;
    from_raw(raw, image_id)
}

fn from_raw(raw: RawImage, image_id: &str) -> Result<(SceneGraph, ParseReport)> {
    let position: HashMap<&str, usize> = raw
        .objects
        .keys()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect();
    let mut report = ParseReport::default();
    let mut nodes = Vec::with_capacity(raw.objects.len());
    let mut edges = Vec::new();
    for (source, (key, obj)) in raw.objects.iter().enumerate() {
        let name = obj.name.clone().ok_or_else(|| Error::Schema {
            key: key.clone(),
            message: "missing field `name`".into(),
        })?;
        if let Some(confs) = &obj.relation_confidences {
            if confs.len() != obj.relations.len() {
                return Err(Error::Schema {
                    key: key.clone(),
                    message: format!(
                        "{} relations but {} relation confidences",
                        obj.relations.len(),
                        confs.len()
                    ),
                });
            }
        }
        for (j, rel) in obj.relations.iter().enumerate() {
            match position.get(rel.object.as_str()) {
                Some(&receiver) => edges.push(RelationEdge {
                    relation: rel.name.clone(),
                    source,
                    receiver,
                    confidence: obj.relation_confidences.as_ref().map(|c| c[j]),
                }),
                None => report.dropped_relations += 1,
            }
        }
        nodes.push(ObjectNode {
            name,
            attributes: obj.attributes.clone(),
            confidence: obj.confidence,
            attribute_confidences: obj.attribute_confidences.clone(),
        });
    }
    let graph = SceneGraph::new(image_id, nodes, edges).map_err(|e| Error::Schema {
        key: image_id.to_string(),
        message: e.to_string(),
    })?;
    Ok((graph, report))
}

fn object_keys(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(4);
    (0..n).map(|i| format!("{i:0width$}")).collect()
}

fn to_out(g: &SceneGraph) -> OutImage<'_> {
    let keys = object_keys(g.node_count());
    let mut objects = BTreeMap::new();
    for (i, node) in g.nodes().iter().enumerate() {
        let outgoing: Vec<&RelationEdge> = g.edges().iter().filter(|e| e.source == i).collect();
        let relation_confidences = if !outgoing.is_empty() && outgoing.iter().all(|e| e.confidence.is_some()) {
            Some(outgoing.iter().map(|e| e.confidence.unwrap_or_default()).collect())
        } else {
            None
        };
        objects.insert(
            keys[i].clone(),
            OutObject {
                name: &node.name,
                attributes: &node.attributes,
                relations: outgoing
                    .iter()
                    .map(|e| OutRelation {
                        name: &e.relation,
                        object: keys[e.receiver].clone(),
                    })
                    .collect(),
                confidence: node.confidence,
                attribute_confidences: node.attribute_confidences.as_deref(),
                relation_confidences,
            },
        );
    }
    OutImage { objects }
}

/// Canonical single-image document `{ image_id: { "objects": ... } }`.
pub fn serialize_graph(g: &SceneGraph) -> String {
    write_scene_graphs(std::slice::from_ref(g))
}

/// Inverse of [`serialize_graph`]; the document must contain exactly one image.
pub fn deserialize_graph(doc: &str) -> Result<SceneGraph> {
    let (mut graphs, _) = read_scene_graphs(doc)?;
    if graphs.len() != 1 {
        return Err(Error::Document {
            offset: 0,
            message: format!("expected one image, found {}", graphs.len()),
        });
    }
    Ok(graphs.remove(0))
}

/// Writes many graphs as one document keyed by image id (sorted).
pub fn write_scene_graphs(graphs: &[SceneGraph]) -> String {
    let map: BTreeMap<&str, OutImage<'_>> = graphs.iter().map(|g| (g.image_id(), to_out(g))).collect();
    serde_json::to_string(&map).expect("scene graphs serialize")
}

/// Parses a whole scene-graph document. Images come back sorted by id.
pub fn read_scene_graphs(text: &str) -> Result<(Vec<SceneGraph>, ParseReport)> {
    let raw: BTreeMap<String, Value> = serde_json::from_str(text).map_err(|e| Error::json(text, e))?;
    let mut report = ParseReport::default();
    let mut graphs = Vec::with_capacity(raw.len());
    for (image_id, record) in raw {
        let (g, r) = parse_scene_graph(&record, &image_id)?;
        report.dropped_relations += r.dropped_relations;
        graphs.push(g);
    }
    Ok((graphs, report))
}

pub fn read_scene_graph_file(path: &Path) -> Result<(Vec<SceneGraph>, ParseReport)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_scene_graphs(&text)
}

pub fn write_scene_graph_file(path: &Path, graphs: &[SceneGraph]) -> Result<()> {
    std::fs::write(path, write_scene_graphs(graphs)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn minimal_record() {
        let rec = json!({
            "objects": {
                "10": {"name": "cup", "attributes": ["red"], "relations": [{"name": "on", "object": "11"}]},
                "11": {"name": "table", "attributes": [], "relations": []}
            }
        });
        let (g, report) = parse_scene_graph(&rec, "img1").unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(report.dropped_relations, 0);
        assert_eq!(g.edges()[0].source, 0);
        assert_eq!(g.edges()[0].receiver, 1);
    }

    #[test]
    fn dangling_relation_is_dropped_and_counted() {
        let rec = json!({
            "objects": {
                "1": {"name": "cup", "relations": [{"name": "on", "object": "999"}, {"name": "near", "object": "2"}]},
                "2": {"name": "plate"}
            }
        });
        let (g, report) = parse_scene_graph(&rec, "x").unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(report.dropped_relations, 1);
    }

    #[test]
    fn missing_name_names_the_object_key() {
        let rec = json!({"objects": {"obj-7": {"attributes": []}}});
        match parse_scene_graph(&rec, "x").unwrap_err() {
            Error::Schema { key, message } => {
                assert_eq!(key, "obj-7");
                assert!(message.contains("name"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn node_order_is_sorted_key_order() {
        let rec = json!({"objects": {"b": {"name": "second"}, "a": {"name": "first"}}});
        let (g, _) = parse_scene_graph(&rec, "x").unwrap();
        assert_eq!(g.nodes()[0].name, "first");
    }

    #[test]
    fn gqa_extra_fields_are_ignored() {
        let text = r#"{"2407890": {"width": 500, "height": 333, "location": "living room", "weather": "none",
            "objects": {"1058498": {"name": "chair", "x": 1, "y": 2, "w": 3, "h": 4,
                "attributes": ["brown"], "relations": [{"name": "to the left of", "object": "1058507"}]},
                "1058507": {"name": "lamp", "x": 1, "y": 2, "w": 3, "h": 4, "attributes": [], "relations": []}}}}"#;
        let (graphs, _) = read_scene_graphs(text).unwrap();
        assert_eq!(graphs[0].image_id(), "2407890");
        assert_eq!(graphs[0].edges()[0].relation, "to the left of");
    }

    #[test]
    fn corrupted_document_reports_byte_offset() {
        let text = "{\"a\": {\"objects\": {\"1\": {\"name\": \"cup\",, }}}}";
        match read_scene_graphs(text).unwrap_err() {
            Error::Document { offset, .. } => assert_eq!(&text[offset..offset + 1], ","),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_edge_graph_round_trips() {
        let g = SceneGraph::new("e", vec![ObjectNode::new("sky", vec!["blue".into()])], vec![]).unwrap();
        assert_eq!(deserialize_graph(&serialize_graph(&g)).unwrap(), g);
    }

    #[test]
    fn confidences_round_trip() {
        let g = SceneGraph::new(
            "c",
            vec![
                ObjectNode::new("cup", vec!["red".into(), "small".into()]).with_confidences(0.123456789, vec![0.9, 1e-7]),
                ObjectNode::new("table", vec![]).with_confidences(1.0, vec![]),
            ],
            vec![
                RelationEdge::new("on", 0, 1).with_confidence(0.333333333333),
                RelationEdge::new("near", 1, 0).with_confidence(0.0),
            ],
        )
        .unwrap();
        assert_eq!(deserialize_graph(&serialize_graph(&g)).unwrap(), g);
    }

    #[test]
    fn many_nodes_keep_their_order() {
        let nodes = (0..12_345).map(|i| ObjectNode::new(format!("n{i}"), vec![])).collect();
        let g = SceneGraph::new("big", nodes, vec![RelationEdge::new("r", 12_344, 0)]).unwrap();
        assert_eq!(deserialize_graph(&serialize_graph(&g)).unwrap(), g);
    }
}
