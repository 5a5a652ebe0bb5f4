//! Feedforward phenotype decoded from a genome, used as the value function
//! V(x), with exact reverse-mode weight gradients.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use thiserror::Error;

use crate::genome::{Genome, NodeId, NodeRole};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetworkError {
    #[error("enabled connections contain a cycle")]
    Cycle,
    #[error("input length {got} does not match network input count {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("genome has no output node")]
    NoOutput,
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Orders the nodes of a directed edge list so every edge's source precedes
/// its target. Among nodes that are ready at the same time the smallest id
/// goes first.
pub fn topological_order(nodes: &[NodeId], edges: &[(NodeId, NodeId)]) -> Result<Vec<NodeId>, NetworkError> {
    let mut indegree: HashMap<NodeId, usize> = nodes.iter().map(|&n| (n, 0)).collect();
    let mut out: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for &(a, b) in edges {
        indegree.entry(a).or_insert(0);
        *indegree.entry(b).or_insert(0) += 1;
        out.entry(a).or_default().push(b);
    }
    let mut ready: BinaryHeap<Reverse<NodeId>> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&n, _)| Reverse(n))
        .collect();
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(Reverse(n)) = ready.pop() {
        order.push(n);
        for m in out.get(&n).into_iter().flatten() {
            let d = indegree.get_mut(m).expect("registered");
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(*m));
            }
        }
    }
    if order.len() != indegree.len() {
        return Err(NetworkError::Cycle);
    }
    Ok(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Input,
    Bias,
    Hidden,
    Output,
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    source: usize,
    weight: usize,
}

/// Decoded network.
///
/// `weights[k]` belongs to the k-th *enabled* connection gene of the source
/// genome in gene-array (innovation) order; see [`Genome::enabled_weights`].
/// Node slots follow the topological evaluation order.
#[derive(Debug, Clone)]
pub struct Network {
    node_ids: Vec<NodeId>,
    kinds: Vec<Kind>,
    /// Incoming edges per node slot.
    incoming: Vec<Vec<Edge>>,
    /// Slot of each input node, in ascending node-id order.
    inputs: Vec<usize>,
    output: usize,
    weights: Vec<f64>,
}

/// Decodes the enabled part of a genome into an executable network.
pub fn decode(genome: &Genome) -> Result<Network, NetworkError> {
    let ids: Vec<NodeId> = genome.nodes.iter().map(|n| n.id).collect();
    let enabled: Vec<_> = genome.connections.iter().filter(|c| c.enabled).collect();
    let edges: Vec<(NodeId, NodeId)> = enabled.iter().map(|c| (c.in_node, c.out_node)).collect();
    let order = topological_order(&ids, &edges)?;
    let slot: HashMap<NodeId, usize> = order.iter().enumerate().map(|(i, &n)| (n, i)).collect();

    let kinds: Vec<Kind> = order
        .iter()
        .map(|&id| match genome.role_of(id) {
            Some(NodeRole::Input) => Kind::Input,
            Some(NodeRole::Bias) => Kind::Bias,
            Some(NodeRole::Output) => Kind::Output,
            // Ids referenced only by edges are rejected by Genome::validate;
            // treat them as hidden here.
            Some(NodeRole::Hidden) | None => Kind::Hidden,
        })
        .collect();
    let mut incoming = vec![Vec::new(); order.len()];
    for (k, c) in enabled.iter().enumerate() {
        incoming[slot[&c.out_node]].push(Edge {
            source: slot[&c.in_node],
            weight: k,
        });
    }
    let inputs: Vec<usize> = genome
        .nodes_with_role(NodeRole::Input)
        .map(|id| slot[&id])
        .collect();
    let output = genome
        .nodes_with_role(NodeRole::Output)
        .next()
        .map(|id| slot[&id])
        .ok_or(NetworkError::NoOutput)?;
    Ok(Network {
        node_ids: order,
        kinds,
        incoming,
        inputs,
        output,
        weights: enabled.iter().map(|c| c.weight).collect(),
    })
}

impl Network {
    pub fn input_count(&self) -> usize {
        self.inputs.len()
    }

    pub fn edge_count(&self) -> usize {
        self.weights.len()
    }

    pub fn evaluation_order(&self) -> &[NodeId] {
        &self.node_ids
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn set_weights(&mut self, w: &[f64]) {
        self.weights.copy_from_slice(w);
    }

    fn activations(&self, input: &[f64]) -> Result<Vec<f64>, NetworkError> {
        if input.len() != self.inputs.len() {
            return Err(NetworkError::Dimension {
                expected: self.inputs.len(),
                got: input.len(),
            });
        }
        let mut values = vec![0.0; self.kinds.len()];
        for (&s, &x) in self.inputs.iter().zip(input) {
            values[s] = x;
        }
        for s in 0..self.kinds.len() {
            match self.kinds[s] {
                Kind::Input => {}
                Kind::Bias => values[s] = 1.0,
                Kind::Hidden | Kind::Output => {
                    let z: f64 = self.incoming[s]
                        .iter()
                        .map(|e| self.weights[e.weight] * values[e.source])
                        .sum();
                    values[s] = if self.kinds[s] == Kind::Hidden { logistic(z) } else { z };
                }
            }
        }
        Ok(values)
    }

    /// V(x): logistic hidden units, identity output, bias fixed at 1.0.
    pub fn forward(&self, input: &[f64]) -> Result<f64, NetworkError> {
        Ok(self.activations(input)?[self.output])
    }

    /// ∂V/∂w for every weight, by one backward pass.
    pub fn gradient(&self, input: &[f64]) -> Result<Vec<f64>, NetworkError> {
        self.value_and_gradient(input).map(|(_, g)| g)
    }

    pub fn value_and_gradient(&self, input: &[f64]) -> Result<(f64, Vec<f64>), NetworkError> {
        let values = self.activations(input)?;
        let mut grad = vec![0.0; self.weights.len()];
        // dV/d(value of node)
        let mut upstream = vec![0.0; values.len()];
        upstream[self.output] = 1.0;
        for s in (0..values.len()).rev() {
            let local = match self.kinds[s] {
                Kind::Output => 1.0,
                Kind::Hidden => values[s] * (1.0 - values[s]),
                Kind::Input | Kind::Bias => continue,
            };
            let delta = upstream[s] * local;
            if delta == 0.0 {
                continue;
            }
            for e in &self.incoming[s] {
                grad[e.weight] += delta * values[e.source];
                upstream[e.source] += delta * self.weights[e.weight];
            }
        }
        Ok((values[self.output], grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{ConnectionGene, NodeGene};

    fn node(id: NodeId, role: NodeRole) -> NodeGene {
        NodeGene { id, role }
    }

    fn link(i: NodeId, o: NodeId, w: f64, k: u32) -> ConnectionGene {
        ConnectionGene {
            in_node: i,
            out_node: o,
            weight: w,
            enabled: true,
            innovation: k,
        }
    }

    fn one_input(w_in: f64, w_bias: f64) -> Genome {
        Genome::new(
            vec![node(1, NodeRole::Input), node(2, NodeRole::Bias), node(3, NodeRole::Output)],
            vec![link(1, 3, w_in, 1), link(2, 3, w_bias, 2)],
        )
    }

    #[test]
    fn topological_chain_and_diamond() {
        assert_eq!(topological_order(&[1, 2, 3], &[(1, 2), (2, 3)]).unwrap(), vec![1, 2, 3]);
        let order = topological_order(&[1, 2, 3, 4], &[(1, 2), (1, 3), (2, 4), (3, 4)]).unwrap();
        assert_eq!(order.first(), Some(&1));
        assert_eq!(order.last(), Some(&4));
        assert_eq!(topological_order(&[1, 2], &[(1, 2), (2, 1)]), Err(NetworkError::Cycle));
    }

    #[test]
    fn linear_value() {
        let net = decode(&one_input(0.7, 0.0)).unwrap();
        assert!((net.forward(&[2.0]).unwrap() - 1.4).abs() < 1e-15);
        assert!((net.forward(&[1.0]).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(net.gradient(&[2.0]).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn hidden_unit_value() {
        let mut g = one_input(0.7, 0.0);
        g.insert_node(node(4, NodeRole::Hidden));
        g.insert_connection(link(1, 4, 0.0, 3));
        g.insert_connection(link(4, 3, 1.0, 4));
        let net = decode(&g).unwrap();
        assert!((net.forward(&[2.0]).unwrap() - 1.9).abs() < 1e-15);
    }

    #[test]
    fn zero_outgoing_weight_gives_zero_gradient() {
        let mut g = one_input(0.7, 0.3);
        g.insert_node(node(4, NodeRole::Hidden));
        g.insert_connection(link(1, 4, 0.8, 3));
        g.insert_connection(link(4, 3, 0.0, 4));
        let net = decode(&g).unwrap();
        let grad = net.gradient(&[1.5]).unwrap();
        assert_eq!(grad[2], 0.0);
        assert!(grad[3] > 0.0);
    }

    #[test]
    fn zero_weights_give_zero_value() {
        let net = decode(&one_input(0.0, 0.0)).unwrap();
        for x in [-3.0, 0.0, 5.5] {
            assert_eq!(net.forward(&[x]).unwrap(), 0.0);
        }
    }

    #[test]
    fn disabled_genes_are_not_decoded() {
        let mut g = one_input(0.7, 0.2);
        g.connections[1].enabled = false;
        let net = decode(&g).unwrap();
        assert_eq!(net.edge_count(), 1);
        assert!((net.forward(&[1.0]).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let net = decode(&one_input(0.7, 0.0)).unwrap();
        assert_eq!(
            net.forward(&[1.0, 2.0]),
            Err(NetworkError::Dimension { expected: 1, got: 2 })
        );
    }

    #[test]
    fn cyclic_genome_fails_to_decode() {
        let mut g = one_input(0.7, 0.0);
        g.insert_node(node(4, NodeRole::Hidden));
        g.insert_node(node(5, NodeRole::Hidden));
        g.insert_connection(link(4, 5, 1.0, 3));
        g.insert_connection(link(5, 4, 1.0, 4));
        assert!(matches!(decode(&g), Err(NetworkError::Cycle)));
    }
}
