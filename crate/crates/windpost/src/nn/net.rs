//! Layer graph: nodes in topological order, each reading either an external
//! input or an earlier node. The final node's output feeds the head.

use super::layers::{Layer, LayerSpec, Mode};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeInput {
    /// External input slot (0 = tabular features, 1 = spatial patch).
    External(usize),
    /// Output of an earlier node.
    Node(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub layer: Layer,
    pub inputs: Vec<NodeInput>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub nodes: Vec<Node>,
    pub n_external_inputs: usize,
    /// Cached node outputs from the latest forward pass.
    outputs: Vec<Tensor>,
    cached_inputs: Vec<Tensor>,
}

/// Declarative node description used by the builders and the serializer.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub spec: LayerSpec,
    pub inputs: Vec<NodeInput>,
}

impl Network {
    pub fn build(specs: &[NodeSpec], n_external_inputs: usize, init_rng: &mut ChaCha12Rng) -> Result<Network> {
        let mut nodes = Vec::with_capacity(specs.len());
        for (i, ns) in specs.iter().enumerate() {
            let expected = if matches!(ns.spec, LayerSpec::Concat) { 2 } else { 1 };
            if ns.inputs.len() != expected {
                return Err(Error::ShapeError {
                    layer: format!("node{i}"),
                    message: format!("expected {expected} inputs, got {}", ns.inputs.len()),
                });
            }
            for input in &ns.inputs {
                match input {
                    NodeInput::External(k) if *k >= n_external_inputs => {
                        return Err(Error::ShapeError {
                            layer: format!("node{i}"),
                            message: format!("external input {k} not declared"),
                        })
                    }
                    NodeInput::Node(j) if *j >= i => {
                        return Err(Error::ShapeError {
                            layer: format!("node{i}"),
                            message: format!("forward reference to node {j}"),
                        })
                    }
                    _ => {}
                }
            }
            nodes.push(Node { layer: Layer::build(&ns.spec, init_rng), inputs: ns.inputs.clone() });
        }
        Ok(Network { nodes, n_external_inputs, outputs: Vec::new(), cached_inputs: Vec::new() })
    }

    pub fn specs(&self) -> Vec<NodeSpec> {
        self.nodes
            .iter()
            .map(|n| NodeSpec { spec: n.layer.spec(), inputs: n.inputs.clone() })
            .collect()
    }

    fn node_name(&self, i: usize) -> String {
        format!("node{i}:{}", self.nodes[i].layer.kind_name())
    }

    fn fetch(&self, input: NodeInput, externals: &[Tensor]) -> Tensor {
        match input {
            NodeInput::External(k) => externals[k].clone(),
            NodeInput::Node(j) => self.outputs[j].clone(),
        }
    }

    /// Run the graph; returns the last node's output. Dropout draws from
    /// `rng` in node order, so results are deterministic given its state.
    pub fn forward(&mut self, externals: &[Tensor], mode: Mode, rng: &mut ChaCha12Rng) -> Result<Tensor> {
        if externals.len() != self.n_external_inputs {
            return Err(Error::ShapeError {
                layer: "inputs".into(),
                message: format!(
                    "network declares {} external inputs, got {}",
                    self.n_external_inputs,
                    externals.len()
                ),
            });
        }
        self.outputs.clear();
        self.cached_inputs = externals.to_vec();
        for i in 0..self.nodes.len() {
            let name = self.node_name(i);
            let inputs = self.nodes[i].inputs.clone();
            let out = if matches!(self.nodes[i].layer, Layer::Concat) {
                let a = self.fetch(inputs[0], externals);
                let b = self.fetch(inputs[1], externals);
                concat_features(&a, &b, &name)?
            } else {
                let x = self.fetch(inputs[0], externals);
                self.nodes[i].layer.forward(&x, mode, rng, &name)?
            };
            debug_assert!(out.is_finite(), "{name}: non-finite activation");
            self.outputs.push(out);
        }
        self.outputs
            .last()
            .cloned()
            .ok_or_else(|| Error::StateError("empty network".into()))
    }

    /// Backpropagate from the output gradient; parameter gradients accumulate
    /// in the layers. Returns gradients of the external inputs.
    pub fn backward(&mut self, grad_output: &Tensor) -> Result<Vec<Tensor>> {
        if self.outputs.len() != self.nodes.len() {
            return Err(Error::StateError("backward without a forward pass".into()));
        }
        let mut node_grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut input_grads: Vec<Option<Tensor>> = vec![None; self.n_external_inputs];
        *node_grads.last_mut().unwrap() = Some(grad_output.clone());

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = node_grads[i].take() else { continue };
            let name = self.node_name(i);
            let inputs = self.nodes[i].inputs.clone();
            let upstream: Vec<Tensor> = if matches!(self.nodes[i].layer, Layer::Concat) {
                let a_width = match inputs[0] {
                    NodeInput::External(k) => self.cached_inputs[k].features(),
                    NodeInput::Node(j) => self.outputs[j].features(),
                };
                split_features(&g, a_width)
            } else {
                vec![self.nodes[i].layer.backward(&g, &name)?]
            };
            for (input, gu) in inputs.iter().zip(upstream) {
                match *input {
                    NodeInput::External(k) => accumulate(&mut input_grads[k], gu),
                    NodeInput::Node(j) => accumulate(&mut node_grads[j], gu),
                }
            }
        }
        Ok(input_grads
            .into_iter()
            .enumerate()
            .map(|(k, g)| g.unwrap_or_else(|| Tensor::zeros(&self.cached_inputs[k].shape)))
            .collect())
    }

    /// One (params, grads) pair per parameter tensor, in node order.
    pub fn params_and_grads(&mut self) -> Vec<(&mut Vec<f64>, &mut Vec<f64>)> {
        self.nodes
            .iter_mut()
            .flat_map(|n| n.layer.params_and_grads())
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for (_, g) in self.params_and_grads() {
            for v in g.iter_mut() {
                *v = 0.0;
            }
        }
    }

    pub fn parameter_count(&mut self) -> usize {
        self.params_and_grads().iter().map(|(p, _)| p.len()).sum()
    }

    /// Drop transient state: forward caches and gradient accumulators.
    pub fn clear_state(&mut self) {
        self.outputs.clear();
        self.cached_inputs.clear();
        for node in &mut self.nodes {
            node.layer.clear_cache();
        }
        self.zero_grads();
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        None => *slot = Some(g),
        Some(existing) => {
            for (a, b) in existing.values.iter_mut().zip(&g.values) {
                *a += b;
            }
        }
    }
}

fn concat_features(a: &Tensor, b: &Tensor, name: &str) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[0] != b.shape[0] {
        return Err(Error::ShapeError {
            layer: name.to_string(),
            message: format!("concat expects rank-2 inputs with equal batch, got {:?} and {:?}", a.shape, b.shape),
        });
    }
    let (batch, wa, wb) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = Tensor::zeros(&[batch, wa + wb]);
    for i in 0..batch {
        out.values[i * (wa + wb)..i * (wa + wb) + wa].copy_from_slice(a.row(i));
        out.values[i * (wa + wb) + wa..(i + 1) * (wa + wb)].copy_from_slice(b.row(i));
    }
    Ok(out)
}

fn split_features(g: &Tensor, a_width: usize) -> Vec<Tensor> {
    let batch = g.shape[0];
    let total = g.shape[1];
    let b_width = total - a_width;
    let mut ga = Tensor::zeros(&[batch, a_width]);
    let mut gb = Tensor::zeros(&[batch, b_width]);
    for i in 0..batch {
        ga.values[i * a_width..(i + 1) * a_width].copy_from_slice(&g.row(i)[..a_width]);
        gb.values[i * b_width..(i + 1) * b_width].copy_from_slice(&g.row(i)[a_width..]);
    }
    vec![ga, gb]
}
