//! Scene graph model, JSON format, and the two retrieval functions exposed to
//! the reasoning policy.
//!
//! Graphs are immutable once built. Nodes keep insertion order; edges are kept
//! sorted by `(source, relation, target)` so serialization is byte-stable.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::world::{GridLayout, Location, ObjectInstance};

/// Filter key that matches against node ids instead of attributes.
pub const NAME_KEY: &str = "name";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(value: impl Into<String>) -> Self {
        NodeId(value.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(value: &str) -> Self {
        NodeId::new(value)
    }
}

/// Attribute key/value pairs of a node, e.g. `color -> red`, `type -> bowl`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeMap(BTreeMap<String, String>);

impl AttributeMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a map from pairs, last value wins on repeated keys.
    pub fn from_pairs<K, V>(pairs: impl IntoIterator<Item = (K, V)>) -> Self
    where
        K: Into<String>,
        V: Into<String>,
    {
        AttributeMap(
            pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.0.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when every entry of `required` is present here, compared after
    /// case-folding values.
    pub fn satisfies(&self, required: &AttributeMap) -> bool {
        required
            .iter()
            .all(|(k, v)| self.get(k).is_some_and(|own| fold_eq(own, v)))
    }

    /// Checks key and value shape; returns the first offending key.
    pub fn validate(&self) -> Result<(), AttributeError> {
        for (k, v) in self.iter() {
            if !is_snake_key(k) {
                return Err(AttributeError::BadKey(k.to_string()));
            }
            if v.is_empty() {
                return Err(AttributeError::EmptyValue(k.to_string()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttributeError {
    #[error("attribute key '{0}' is not lowercase snake_case")]
    BadKey(String),
    #[error("attribute '{0}' has an empty value")]
    EmptyValue(String),
}

pub(crate) fn is_snake_key(key: &str) -> bool {
    let mut chars = key.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

pub(crate) fn fold_eq(a: &str, b: &str) -> bool {
    a.to_lowercase() == b.to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub attributes: AttributeMap,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub source: NodeId,
    pub target: NodeId,
    pub relation: String,
}

impl Edge {
    pub fn new(source: impl Into<NodeId>, relation: &str, target: impl Into<NodeId>) -> Self {
        Edge {
            source: source.into(),
            target: target.into(),
            relation: relation.to_string(),
        }
    }

    /// Sentence form handed back to the policy by `retrieve_edge`.
    pub fn sentence(&self) -> String {
        format!("the {} is {} the {}", self.source, self.relation, self.target)
    }

    fn sort_key(&self) -> (&NodeId, &str, &NodeId) {
        (&self.source, &self.relation, &self.target)
    }
}

impl From<String> for NodeId {
    fn from(value: String) -> Self {
        NodeId(value)
    }
}

/// Vocabulary of a graph: every attribute key and relation it uses.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSchema {
    pub attribute_keys: BTreeSet<String>,
    pub relations: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("duplicate node id '{0}'")]
    DuplicateNode(NodeId),
    #[error("empty node id")]
    EmptyNodeId,
    #[error("node '{node}': {source}")]
    Attribute {
        node: NodeId,
        source: AttributeError,
    },
    #[error("edge {0:?} is a self-loop")]
    SelfLoop(Edge),
    #[error("edge {edge:?} references unknown node '{missing}'")]
    DanglingEdge { edge: Edge, missing: NodeId },
    #[error("edge {0:?} has an empty relation")]
    EmptyRelation(Edge),
    #[error("duplicate edge {0:?}")]
    DuplicateEdge(Edge),
}

/// Parse failure with a JSON path to the offending element.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {message}")]
pub struct ParseError {
    pub path: String,
    pub message: String,
}

impl ParseError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        ParseError {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Errors a retrieval call can produce. These are rendered as tool-result
/// text for the policy; they never abort an episode.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("unknown attribute key '{key}'; valid keys are: {}", valid.join(", "))]
    UnknownKey { key: String, valid: Vec<String> },
    #[error("unknown node '{0}'; use retrieve_node to list valid node ids")]
    UnknownNode(String),
    #[error("retrieve_edge needs at least one of source, target, relation")]
    NoEdgeFilter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    schema: GraphSchema,
}

#[derive(Serialize)]
struct GraphFile<'a> {
    nodes: &'a [Node],
    edges: &'a [Edge],
}

impl SceneGraph {
    /// Validates and assembles a graph. Edges are sorted; the schema is
    /// derived from the content.
    pub fn new(nodes: Vec<Node>, mut edges: Vec<Edge>) -> Result<Self, GraphError> {
        let mut ids = HashSet::new();
        for node in &nodes {
            if node.id.as_str().is_empty() {
                return Err(GraphError::EmptyNodeId);
            }
            if !ids.insert(node.id.clone()) {
                return Err(GraphError::DuplicateNode(node.id.clone()));
            }
            node.attributes
                .validate()
                .map_err(|source| GraphError::Attribute {
                    node: node.id.clone(),
                    source,
                })?;
        }
        for edge in &edges {
            check_edge(edge, &ids)?;
        }
        edges.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        if let Some(pair) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateEdge(pair[0].clone()));
        }
        let schema = derive_schema(&nodes, &edges);
        Ok(SceneGraph {
            nodes,
            edges,
            schema,
        })
    }

    pub fn empty() -> Self {
        SceneGraph {
            nodes: Vec::new(),
            edges: Vec::new(),
            schema: GraphSchema::default(),
        }
    }

    /// Builds the graph from ground-truth objects. Containment comes from
    /// object state; spatial relations come from grid alignment: objects in
    /// the same row get `left_of`/`right_of`, the same column `above`/`below`.
    /// Row 0 is the top of the table.
    pub fn build_from_observation(
        objects: &[ObjectInstance],
        _geometry: &GridLayout,
    ) -> Result<Self, GraphError> {
        let nodes: Vec<Node> = objects
            .iter()
            .map(|o| Node {
                id: o.id.clone(),
                attributes: o.attributes.clone(),
            })
            .collect();
        let mut edges = Vec::new();
        let visible: HashSet<&NodeId> = objects.iter().map(|o| &o.id).collect();
        for o in objects {
            match o.location() {
                Some(Location::Inside(c)) if visible.contains(&c) => {
                    edges.push(Edge::new(o.id.clone(), "inside_of", c.clone()))
                }
                Some(Location::OnTopOf(s)) if visible.contains(&s) => {
                    edges.push(Edge::new(o.id.clone(), "on_top_of", s.clone()))
                }
                _ => {}
            }
        }
        let placed: Vec<_> = objects
            .iter()
            .filter_map(|o| o.cell.map(|c| (&o.id, c)))
            .collect();
        for (a, ca) in &placed {
            for (b, cb) in &placed {
                if a == b {
                    continue;
                }
                if ca.row == cb.row && ca.col < cb.col {
                    edges.push(Edge::new((*a).clone(), "left_of", (*b).clone()));
                    edges.push(Edge::new((*b).clone(), "right_of", (*a).clone()));
                }
                if ca.col == cb.col && ca.row < cb.row {
                    edges.push(Edge::new((*a).clone(), "above", (*b).clone()));
                    edges.push(Edge::new((*b).clone(), "below", (*a).clone()));
                }
            }
        }
        SceneGraph::new(nodes, edges)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn schema(&self) -> &GraphSchema {
        &self.schema
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| fold_eq(n.id.as_str(), id))
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.iter().map(|n| n.id.clone()).collect()
    }

    /// Ids of the nodes satisfying every filter entry, in insertion order.
    /// The reserved key `name` compares against the node id.
    pub fn retrieve_node(&self, filters: &[(String, String)]) -> Result<Vec<NodeId>, QueryError> {
        for (key, _) in filters {
            if key != NAME_KEY && !self.schema.attribute_keys.contains(key) {
                let mut valid: Vec<String> = self.schema.attribute_keys.iter().cloned().collect();
                valid.push(NAME_KEY.to_string());
                return Err(QueryError::UnknownKey {
                    key: key.clone(),
                    valid,
                });
            }
        }
        Ok(self
            .nodes
            .iter()
            .filter(|n| {
                filters.iter().all(|(k, v)| {
                    if k == NAME_KEY {
                        fold_eq(n.id.as_str(), v)
                    } else {
                        n.attributes.get(k).is_some_and(|own| fold_eq(own, v))
                    }
                })
            })
            .map(|n| n.id.clone())
            .collect())
    }

    /// Sentences for every edge matching the given (conjunctive) filters.
    pub fn retrieve_edge(
        &self,
        source: Option<&str>,
        target: Option<&str>,
        relation: Option<&str>,
    ) -> Result<Vec<String>, QueryError> {
        if source.is_none() && target.is_none() && relation.is_none() {
            return Err(QueryError::NoEdgeFilter);
        }
        for id in [source, target].into_iter().flatten() {
            if self.node(id).is_none() {
                return Err(QueryError::UnknownNode(id.to_string()));
            }
        }
        Ok(self
            .edges
            .iter()
            .filter(|e| source.is_none_or(|s| fold_eq(e.source.as_str(), s)))
            .filter(|e| target.is_none_or(|t| fold_eq(e.target.as_str(), t)))
            .filter(|e| relation.is_none_or(|r| fold_eq(&e.relation, r)))
            .map(Edge::sentence)
            .collect())
    }

    /// Ablation: same nodes, no edges.
    pub fn degrade(&self, mode: DegradeMode) -> SceneGraph {
        match mode {
            DegradeMode::DropEdges => SceneGraph {
                nodes: self.nodes.clone(),
                edges: Vec::new(),
                schema: GraphSchema {
                    attribute_keys: self.schema.attribute_keys.clone(),
                    relations: BTreeSet::new(),
                },
            },
        }
    }

    /// Pretty JSON in the `{"nodes": [...], "edges": [...]}` layout.
    pub fn serialize(&self) -> String {
        let file = GraphFile {
            nodes: &self.nodes,
            edges: &self.edges,
        };
        serde_json::to_string_pretty(&file).expect("graph serialization is infallible")
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let root: Value = serde_json::from_str(text)
            .map_err(|e| ParseError::at("$", format!("malformed JSON: {e}")))?;
        let obj = root
            .as_object()
            .ok_or_else(|| ParseError::at("$", "expected an object"))?;
        let nodes_val = obj
            .get("nodes")
            .ok_or_else(|| ParseError::at("$", "missing key 'nodes'"))?
            .as_array()
            .ok_or_else(|| ParseError::at("$.nodes", "expected an array"))?;
        let edges_val = obj
            .get("edges")
            .ok_or_else(|| ParseError::at("$", "missing key 'edges'"))?
            .as_array()
            .ok_or_else(|| ParseError::at("$.edges", "expected an array"))?;

        let mut nodes = Vec::with_capacity(nodes_val.len());
        let mut ids = HashSet::new();
        for (i, n) in nodes_val.iter().enumerate() {
            let path = format!("$.nodes[{i}]");
            let id = str_field(n, "id", &path)?;
            if id.is_empty() {
                return Err(ParseError::at(format!("{path}.id"), "empty node id"));
            }
            if !ids.insert(NodeId::new(id)) {
                return Err(ParseError::at(
                    format!("{path}.id"),
                    format!("duplicate node id '{id}'"),
                ));
            }
            let attrs_val = n
                .get("attributes")
                .ok_or_else(|| ParseError::at(&path, "missing key 'attributes'"))?
                .as_object()
                .ok_or_else(|| ParseError::at(format!("{path}.attributes"), "expected an object"))?;
            let mut attributes = AttributeMap::new();
            for (k, v) in attrs_val {
                let apath = format!("{path}.attributes.{k}");
                let v = v
                    .as_str()
                    .ok_or_else(|| ParseError::at(&apath, "expected a string value"))?;
                attributes.insert(k.clone(), v);
            }
            attributes
                .validate()
                .map_err(|e| ParseError::at(format!("{path}.attributes"), e.to_string()))?;
            nodes.push(Node {
                id: NodeId::new(id),
                attributes,
            });
        }

        let mut edges = Vec::with_capacity(edges_val.len());
        let mut seen = HashSet::new();
        for (i, e) in edges_val.iter().enumerate() {
            let path = format!("$.edges[{i}]");
            let edge = Edge {
                source: NodeId::new(str_field(e, "source", &path)?),
                target: NodeId::new(str_field(e, "target", &path)?),
                relation: str_field(e, "relation", &path)?.to_string(),
            };
            for (field, id) in [("source", &edge.source), ("target", &edge.target)] {
                if !ids.contains(id) {
                    return Err(ParseError::at(
                        format!("{path}.{field}"),
                        format!("unknown node '{id}'"),
                    ));
                }
            }
            if edge.source == edge.target {
                return Err(ParseError::at(&path, "self-loop edge"));
            }
            if edge.relation.is_empty() {
                return Err(ParseError::at(format!("{path}.relation"), "empty relation"));
            }
            if !seen.insert(edge.clone()) {
                return Err(ParseError::at(&path, "duplicate edge"));
            }
            edges.push(edge);
        }
        SceneGraph::new(nodes, edges).map_err(|e| ParseError::at("$", e.to_string()))
    }
}

fn str_field<'a>(v: &'a Value, key: &str, path: &str) -> Result<&'a str, ParseError> {
    v.get(key)
        .ok_or_else(|| ParseError::at(path, format!("missing key '{key}'")))?
        .as_str()
        .ok_or_else(|| ParseError::at(format!("{path}.{key}"), "expected a string"))
}

fn check_edge(edge: &Edge, ids: &HashSet<NodeId>) -> Result<(), GraphError> {
    if edge.source == edge.target {
        return Err(GraphError::SelfLoop(edge.clone()));
    }
    if edge.relation.is_empty() {
        return Err(GraphError::EmptyRelation(edge.clone()));
    }
    for id in [&edge.source, &edge.target] {
        if !ids.contains(id) {
            return Err(GraphError::DanglingEdge {
                edge: edge.clone(),
                missing: id.clone(),
            });
        }
    }
    Ok(())
}

fn derive_schema(nodes: &[Node], edges: &[Edge]) -> GraphSchema {
    GraphSchema {
        attribute_keys: nodes
            .iter()
            .flat_map(|n| n.attributes.keys().map(str::to_string))
            .collect(),
        relations: edges.iter().map(|e| e.relation.clone()).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradeMode {
    DropEdges,
}

/// Prompt for wiring an external vision-language model that produces graphs
/// in the format accepted by [`SceneGraph::parse`].
pub fn emit_vlm_prompt() -> &'static str {
    VLM_PROMPT
}

const VLM_PROMPT: &str = "You are a scene graph generator. Your task is to generate a scene graph representation of a given tabletop scene, identifying relationships between all the objects presented to you (if any).

The graph must have the following structure:

Nodes: The nodes must be represented by objects. You will already be provided with the object list.

Edges: These should represent the relationships between each pair of objects. These relationships can include spatial directions (left_of, above, below, on_top_of, etc.) or semantic relations (joined_with, inside_of, etc.) to properly model how each object is related to the others.

Attributes: Each node must have an atrribute of the object like color, type etc.

Input: You will be given the image of a tabletop scene as input, as well as the object list over the table to label the nodes.

Output: Must strictly be a JSON object with the following schema:

{\"nodes\": [{\"id\": i, \"attributes\": {a_1, a_2, ..., a_k}}], \"edges\": [{\"source\": i, \"target\": j, \"relation\": r}]}
";
