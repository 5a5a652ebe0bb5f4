//! Genotype encoding: node genes, connection genes with innovation numbers,
//! and the per-generation innovation registry.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = u32;
pub type Innovation = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Input,
    Bias,
    Output,
    Hidden,
}

impl NodeRole {
    /// Inputs and the bias node are sources only.
    pub fn is_source(self) -> bool {
        matches!(self, NodeRole::Input | NodeRole::Bias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeGene {
    pub id: NodeId,
    pub role: NodeRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectionGene {
    #[serde(rename = "in")]
    pub in_node: NodeId,
    #[serde(rename = "out")]
    pub out_node: NodeId,
    pub weight: f64,
    pub enabled: bool,
    pub innovation: Innovation,
}

#[derive(Debug, Error, PartialEq)]
pub enum GenomeError {
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("genome must contain exactly one bias node, found {0}")]
    BiasCount(usize),
    #[error("connection {innovation} references unknown node {node}")]
    UnknownNode { innovation: Innovation, node: NodeId },
    #[error("duplicate connection {0}->{1}")]
    DuplicateLink(NodeId, NodeId),
    #[error("innovation numbers not strictly increasing at {0}")]
    UnsortedInnovations(Innovation),
    #[error("connection {innovation} violates node roles ({in_node}->{out_node})")]
    RoleViolation {
        innovation: Innovation,
        in_node: NodeId,
        out_node: NodeId,
    },
    #[error("enabled connections contain a cycle")]
    Cycle,
}

/// A genotype: node genes sorted by id and connection genes sorted by
/// innovation number.
#[derive(Debug, Clone, PartialEq)]
pub struct Genome {
    pub nodes: Vec<NodeGene>,
    pub connections: Vec<ConnectionGene>,
    pub raw_fitness: f64,
    pub adjusted_fitness: f64,
}

impl Genome {
    pub fn new(nodes: Vec<NodeGene>, connections: Vec<ConnectionGene>) -> Self {
        Self {
            nodes,
            connections,
            raw_fitness: 0.0,
            adjusted_fitness: 0.0,
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeGene> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn has_node(&self, id: NodeId) -> bool {
        self.node(id).is_some()
    }

    pub fn role_of(&self, id: NodeId) -> Option<NodeRole> {
        self.node(id).map(|n| n.role)
    }

    pub fn nodes_with_role(&self, role: NodeRole) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(move |n| n.role == role).map(|n| n.id)
    }

    pub fn input_count(&self) -> usize {
        self.nodes_with_role(NodeRole::Input).count()
    }

    pub fn hidden_count(&self) -> usize {
        self.nodes_with_role(NodeRole::Hidden).count()
    }

    pub fn enabled_count(&self) -> usize {
        self.connections.iter().filter(|c| c.enabled).count()
    }

    pub fn has_link(&self, in_node: NodeId, out_node: NodeId) -> bool {
        self.connections
            .iter()
            .any(|c| c.in_node == in_node && c.out_node == out_node)
    }

    pub fn max_innovation(&self) -> Innovation {
        self.connections.last().map_or(0, |c| c.innovation)
    }

    /// Weights of the enabled genes in gene-array order. This is the index
    /// order used by the decoded network's weight vector.
    pub fn enabled_weights(&self) -> Vec<f64> {
        self.connections
            .iter()
            .filter(|c| c.enabled)
            .map(|c| c.weight)
            .collect()
    }

    /// Writes `weights` back onto the enabled genes, in gene-array order.
    pub fn set_enabled_weights(&mut self, weights: &[f64]) {
        assert_eq!(weights.len(), self.enabled_count(), "weight vector length");
        for (gene, &w) in self
            .connections
            .iter_mut()
            .filter(|c| c.enabled)
            .zip(weights)
        {
            gene.weight = w;
        }
    }

    /// Inserts a node keeping `nodes` sorted by id.
    pub(crate) fn insert_node(&mut self, node: NodeGene) {
        let pos = self.nodes.partition_point(|n| n.id < node.id);
        self.nodes.insert(pos, node);
    }

    /// Inserts a connection keeping `connections` sorted by innovation.
    pub(crate) fn insert_connection(&mut self, gene: ConnectionGene) {
        let pos = self
            .connections
            .partition_point(|c| c.innovation < gene.innovation);
        self.connections.insert(pos, gene);
    }

    /// True if `to` is reachable from `from` following connections accepted
    /// by `filter`.
    pub(crate) fn reaches(
        &self,
        from: NodeId,
        to: NodeId,
        filter: impl Fn(&ConnectionGene) -> bool,
    ) -> bool {
        if from == to {
            return true;
        }
        let mut seen = HashSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(n) = queue.pop_front() {
            for c in self.connections.iter().filter(|c| c.in_node == n && filter(c)) {
                if c.out_node == to {
                    return true;
                }
                if seen.insert(c.out_node) {
                    queue.push_back(c.out_node);
                }
            }
        }
        false
    }

    /// True if at least one output node is reachable from an input or the
    /// bias over enabled connections.
    pub(crate) fn output_reachable(&self) -> bool {
        let mut seen: HashSet<NodeId> = self
            .nodes
            .iter()
            .filter(|n| n.role.is_source())
            .map(|n| n.id)
            .collect();
        let mut queue: VecDeque<NodeId> = seen.iter().copied().collect();
        while let Some(n) = queue.pop_front() {
            for c in self.connections.iter().filter(|c| c.enabled && c.in_node == n) {
                if self.role_of(c.out_node) == Some(NodeRole::Output) {
                    return true;
                }
                if seen.insert(c.out_node) {
                    queue.push_back(c.out_node);
                }
            }
        }
        false
    }

    /// Checks every structural invariant of the genotype.
    pub fn validate(&self) -> Result<(), GenomeError> {
        let mut ids = HashSet::new();
        for pair in self.nodes.windows(2) {
            if pair[0].id >= pair[1].id {
                return Err(GenomeError::DuplicateNode(pair[1].id));
            }
        }
        for n in &self.nodes {
            if !ids.insert(n.id) {
                return Err(GenomeError::DuplicateNode(n.id));
            }
        }
        let bias = self.nodes_with_role(NodeRole::Bias).count();
        if bias != 1 {
            return Err(GenomeError::BiasCount(bias));
        }
        let mut pairs = HashSet::new();
        let mut last: Option<Innovation> = None;
        for c in &self.connections {
            if let Some(prev) = last {
                if c.innovation <= prev {
                    return Err(GenomeError::UnsortedInnovations(c.innovation));
                }
            }
            last = Some(c.innovation);
            let in_role = self.role_of(c.in_node).ok_or(GenomeError::UnknownNode {
                innovation: c.innovation,
                node: c.in_node,
            })?;
            let out_role = self.role_of(c.out_node).ok_or(GenomeError::UnknownNode {
                innovation: c.innovation,
                node: c.out_node,
            })?;
            if in_role == NodeRole::Output || out_role.is_source() || c.in_node == c.out_node {
                return Err(GenomeError::RoleViolation {
                    innovation: c.innovation,
                    in_node: c.in_node,
                    out_node: c.out_node,
                });
            }
            if !pairs.insert((c.in_node, c.out_node)) {
                return Err(GenomeError::DuplicateLink(c.in_node, c.out_node));
            }
        }
        if has_cycle(self.connections.iter().filter(|c| c.enabled)) {
            return Err(GenomeError::Cycle);
        }
        Ok(())
    }
}

fn has_cycle<'a>(edges: impl Iterator<Item = &'a ConnectionGene>) -> bool {
    let mut indegree: HashMap<NodeId, usize> = HashMap::new();
    let mut out: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for c in edges {
        indegree.entry(c.in_node).or_insert(0);
        *indegree.entry(c.out_node).or_insert(0) += 1;
        out.entry(c.in_node).or_default().push(c.out_node);
    }
    let mut ready: Vec<NodeId> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&n, _)| n)
        .collect();
    let mut visited = 0;
    while let Some(n) = ready.pop() {
        visited += 1;
        for m in out.get(&n).into_iter().flatten() {
            let d = indegree.get_mut(m).expect("node registered");
            *d -= 1;
            if *d == 0 {
                ready.push(*m);
            }
        }
    }
    visited != indegree.len()
}

/// Hands out innovation numbers and node ids. Structural innovations made
/// within the same generation share numbers; the histories are cleared by
/// [`InnovationRegistry::start_generation`].
#[derive(Debug, Clone)]
pub struct InnovationRegistry {
    next_innovation: Innovation,
    next_node_id: NodeId,
    link_history: HashMap<(NodeId, NodeId), Innovation>,
    split_history: HashMap<Innovation, SplitRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRecord {
    pub node: NodeId,
    pub in_link: Innovation,
    pub out_link: Innovation,
}

impl Default for InnovationRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl InnovationRegistry {
    pub fn new() -> Self {
        Self {
            next_innovation: 1,
            next_node_id: 1,
            link_history: HashMap::new(),
            split_history: HashMap::new(),
        }
    }

    /// Resumes numbering above everything already present in `genomes`.
    pub fn resume<'a>(genomes: impl IntoIterator<Item = &'a Genome>) -> Self {
        let mut reg = Self::new();
        for g in genomes {
            reg.next_innovation = reg.next_innovation.max(g.max_innovation() + 1);
            if let Some(n) = g.nodes.last() {
                reg.next_node_id = reg.next_node_id.max(n.id + 1);
            }
        }
        reg
    }

    pub fn next_innovation(&self) -> Innovation {
        self.next_innovation
    }

    pub fn next_node_id(&self) -> NodeId {
        self.next_node_id
    }

    pub fn start_generation(&mut self) {
        self.link_history.clear();
        self.split_history.clear();
    }

    pub fn allocate_node(&mut self) -> NodeId {
        let id = self.next_node_id;
        self.next_node_id += 1;
        id
    }

    fn allocate_innovation(&mut self) -> Innovation {
        let k = self.next_innovation;
        self.next_innovation += 1;
        k
    }

    /// Returns the innovation number for the link `in_node -> out_node`,
    /// reusing the number if the same link was registered this generation.
    pub fn register_link(&mut self, in_node: NodeId, out_node: NodeId) -> Innovation {
        debug_assert_ne!(in_node, out_node);
        if let Some(&k) = self.link_history.get(&(in_node, out_node)) {
            return k;
        }
        let k = self.allocate_innovation();
        self.link_history.insert((in_node, out_node), k);
        k
    }

    /// Returns the node id and link innovations produced by splitting the
    /// connection with innovation `split`. `genome` is consulted so a genome
    /// never receives a node id it already holds.
    pub fn register_split(&mut self, genome: &Genome, split: &ConnectionGene) -> SplitRecord {
        if let Some(rec) = self.split_history.get(&split.innovation) {
            if !genome.has_node(rec.node) {
                return *rec;
            }
        }
        let node = self.allocate_node();
        let in_link = self.allocate_innovation();
        let out_link = self.allocate_innovation();
        self.link_history.insert((split.in_node, node), in_link);
        self.link_history.insert((node, split.out_node), out_link);
        let rec = SplitRecord {
            node,
            in_link,
            out_link,
        };
        self.split_history.entry(split.innovation).or_insert(rec);
        rec
    }
}

/// Builds a genome with only input, bias, and output nodes, fully connected
/// from every input and the bias to every output.
///
/// Node ids are fixed by position (inputs first, then the bias, then the
/// outputs), so every minimal genome in a population shares ids and, through
/// the registry, innovation numbers.
pub fn new_minimal_genome<R: Rng + ?Sized>(
    n_inputs: usize,
    n_outputs: usize,
    registry: &mut InnovationRegistry,
    rng: &mut R,
) -> Genome {
    assert!(n_inputs >= 1 && n_outputs >= 1, "need at least one input and one output");
    let mut nodes = Vec::with_capacity(n_inputs + n_outputs + 1);
    let mut id: NodeId = 1;
    for _ in 0..n_inputs {
        nodes.push(NodeGene { id, role: NodeRole::Input });
        id += 1;
    }
    nodes.push(NodeGene { id, role: NodeRole::Bias });
    id += 1;
    for _ in 0..n_outputs {
        nodes.push(NodeGene { id, role: NodeRole::Output });
        id += 1;
    }
    registry.next_node_id = registry.next_node_id.max(id);

    let sources: Vec<NodeId> = nodes.iter().filter(|n| n.role.is_source()).map(|n| n.id).collect();
    let outputs: Vec<NodeId> = nodes
        .iter()
        .filter(|n| n.role == NodeRole::Output)
        .map(|n| n.id)
        .collect();
    let mut genome = Genome::new(nodes, Vec::new());
    for &out in &outputs {
        for &src in &sources {
            let innovation = registry.register_link(src, out);
            genome.insert_connection(ConnectionGene {
                in_node: src,
                out_node: out,
                weight: rng.random_range(-1.0..=1.0),
                enabled: true,
                innovation,
            });
        }
    }
    genome
}

/// Alignment of two genomes by innovation number.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenePartition {
    /// Index pairs `(index in a, index in b)` of matching genes.
    pub matching: Vec<(usize, usize)>,
    pub disjoint_a: Vec<Innovation>,
    pub disjoint_b: Vec<Innovation>,
    pub excess_a: Vec<Innovation>,
    pub excess_b: Vec<Innovation>,
}

impl GenePartition {
    pub fn matching_innovations<'a>(&'a self, a: &'a Genome) -> impl Iterator<Item = Innovation> + 'a {
        self.matching.iter().map(|&(i, _)| a.connections[i].innovation)
    }

    pub fn disjoint_count(&self) -> usize {
        self.disjoint_a.len() + self.disjoint_b.len()
    }

    pub fn excess_count(&self) -> usize {
        self.excess_a.len() + self.excess_b.len()
    }
}

/// Splits the connection genes of `a` and `b` into matching, disjoint, and
/// excess genes. A gene unique to one parent is excess when its innovation
/// lies beyond the other parent's largest innovation.
pub fn classify_genes(a: &Genome, b: &Genome) -> GenePartition {
    let max_a = a.max_innovation();
    let max_b = b.max_innovation();
    let mut part = GenePartition::default();
    let (ga, gb) = (&a.connections, &b.connections);
    let (mut i, mut j) = (0, 0);
    while i < ga.len() || j < gb.len() {
        let ka = ga.get(i).map(|c| c.innovation);
        let kb = gb.get(j).map(|c| c.innovation);
        match (ka, kb) {
            (Some(x), Some(y)) if x == y => {
                part.matching.push((i, j));
                i += 1;
                j += 1;
            }
            (Some(x), y) if y.is_none_or(|y| x < y) => {
                if x > max_b {
                    part.excess_a.push(x);
                } else {
                    part.disjoint_a.push(x);
                }
                i += 1;
            }
            (_, Some(y)) => {
                if y > max_a {
                    part.excess_b.push(y);
                } else {
                    part.disjoint_b.push(y);
                }
                j += 1;
            }
            (_, None) => unreachable!(),
        }
    }
    part
}

// ---------------------------------------------------------------------------
// JSON file format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub raw: f64,
}

/// On-disk genome: `nodes`, `connections`, `fitness`, and, for run outputs,
/// the environment name and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenomeFile {
    pub nodes: Vec<NodeGene>,
    pub connections: Vec<ConnectionGene>,
    pub fitness: FitnessRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Error)]
pub enum GenomeFileError {
    #[error("genome schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid genome: {0}")]
    Invalid(#[from] GenomeError),
}

impl GenomeFile {
    pub fn from_genome(g: &Genome) -> Self {
        Self {
            nodes: g.nodes.clone(),
            connections: g.connections.clone(),
            fitness: FitnessRecord { raw: g.raw_fitness },
            environment: None,
            seed: None,
        }
    }

    pub fn into_genome(self) -> Result<Genome, GenomeError> {
        let mut nodes = self.nodes;
        nodes.sort_by_key(|n| n.id);
        let mut g = Genome::new(nodes, self.connections);
        g.raw_fitness = self.fitness.raw;
        g.validate()?;
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("genome serializes")
    }

    /// Parses a genome document, reporting schema errors with the JSON path
    /// of the offending field.
    pub fn from_json(text: &str) -> Result<Self, GenomeFileError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| GenomeFileError::Schema {
                path: "$".into(),
                message: e.to_string(),
            })?;
        check_schema(&value)?;
        serde_json::from_value(value).map_err(|e| GenomeFileError::Schema {
            path: "$".into(),
            message: e.to_string(),
        })
    }
}

fn schema_err(path: impl Into<String>, message: impl Into<String>) -> GenomeFileError {
    GenomeFileError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn check_schema(v: &serde_json::Value) -> Result<(), GenomeFileError> {
    use serde_json::Value;
    let obj = v.as_object().ok_or_else(|| schema_err("$", "expected object"))?;
    let nodes = obj
        .get("nodes")
        .and_then(Value::as_array)
        .ok_or_else(|| schema_err("$.nodes", "expected array"))?;
    for (i, n) in nodes.iter().enumerate() {
        let path = format!("$.nodes[{i}]");
        if n.get("id").and_then(Value::as_u64).is_none() {
            return Err(schema_err(format!("{path}.id"), "expected unsigned integer"));
        }
        match n.get("role").and_then(Value::as_str) {
            Some("input" | "bias" | "output" | "hidden") => {}
            _ => {
                return Err(schema_err(
                    format!("{path}.role"),
                    "expected one of input, bias, output, hidden",
                ))
            }
        }
    }
    let conns = obj
        .get("connections")
        .and_then(Value::as_array)
        .ok_or_else(|| schema_err("$.connections", "expected array"))?;
    for (i, c) in conns.iter().enumerate() {
        let path = format!("$.connections[{i}]");
        for key in ["in", "out", "innovation"] {
            if c.get(key).and_then(Value::as_u64).is_none() {
                return Err(schema_err(format!("{path}.{key}"), "expected unsigned integer"));
            }
        }
        if c.get("weight").and_then(Value::as_f64).is_none() {
            return Err(schema_err(format!("{path}.weight"), "expected number"));
        }
        if c.get("enabled").and_then(Value::as_bool).is_none() {
            return Err(schema_err(format!("{path}.enabled"), "expected boolean"));
        }
    }
    if obj
        .get("fitness")
        .and_then(|f| f.get("raw"))
        .and_then(Value::as_f64)
        .is_none()
    {
        return Err(schema_err("$.fitness.raw", "expected number"));
    }
    Ok(())
}
