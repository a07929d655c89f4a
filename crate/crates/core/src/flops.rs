//! Theoretical multiply-accumulate counts for a network graph, before and
//! after filter pruning.
//!
//! Only convolution and dense layers are counted (one MAC per weight per
//! output position). Pruning layer `i` at rate `P_i` keeps
//! `N - floor(N * P_i)` output channels, and the next convolution sees that
//! many input channels unless its input arrives through a residual join,
//! which always carries the full channel count.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlopsError {
    #[error("GraphValidation: {0}")]
    GraphValidation(String),
    #[error("InvalidRate: {0}")]
    InvalidRate(String),
    #[error("IoFailure: {0}")]
    Io(#[from] std::io::Error),
    #[error("GraphParse: {0}")]
    Parse(#[from] serde_json::Error),
}

impl FlopsError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::GraphValidation(_) => "GraphValidation",
            Self::InvalidRate(_) => "InvalidRate",
            Self::Io(_) => "IoFailure",
            Self::Parse(_) => "GraphParse",
        }
    }
}

/// Number of filters removed from a layer of `channels` at `rate`.
///
/// This is `floor(channels * rate)`, with a 1e-9 allowance so that decimal
/// rates such as 0.29 on 100 channels give 29 rather than 28, and capped so
/// at least one filter survives.
pub fn pruned_count(channels: usize, rate: f64) -> usize {
    if channels == 0 || rate <= 0.0 {
        return 0;
    }
    let raw = (channels as f64 * rate + 1e-9).floor() as usize;
    raw.min(channels - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Conv2d,
    Dense,
    /// Elementwise residual join of two equally wide inputs.
    Add,
    /// Parameter-free downsampling identity (strided subsample plus zero
    /// channel padding). Costs nothing and carries full channels.
    Shortcut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphNode {
    pub name: String,
    pub kind: NodeKind,
    pub out_channels: usize,
    pub in_channels: usize,
    #[serde(default = "one")]
    pub kernel: usize,
    #[serde(default = "one")]
    pub out_h: usize,
    #[serde(default = "one")]
    pub out_w: usize,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub prunable: bool,
}

fn one() -> usize {
    1
}

impl GraphNode {
    pub fn conv2d(
        name: &str,
        input: Option<&str>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        out_hw: usize,
    ) -> Self {
        Self {
            name: name.to_string(),
            kind: NodeKind::Conv2d,
            out_channels,
            in_channels,
            kernel,
            out_h: out_hw,
            out_w: out_hw,
            inputs: input.map(|s| vec![s.to_string()]).unwrap_or_default(),
            prunable: true,
        }
    }

    pub fn dense(name: &str, input: Option<&str>, in_channels: usize, out_channels: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: NodeKind::Dense,
            out_channels,
            in_channels,
            kernel: 1,
            out_h: 1,
            out_w: 1,
            inputs: input.map(|s| vec![s.to_string()]).unwrap_or_default(),
            prunable: false,
        }
    }

    pub fn add(name: &str, a: &str, b: &str, channels: usize, out_hw: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: NodeKind::Add,
            out_channels: channels,
            in_channels: channels,
            kernel: 1,
            out_h: out_hw,
            out_w: out_hw,
            inputs: vec![a.to_string(), b.to_string()],
            prunable: false,
        }
    }

    pub fn shortcut(name: &str, input: &str, in_channels: usize, out_channels: usize, out_hw: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: NodeKind::Shortcut,
            out_channels,
            in_channels,
            kernel: 1,
            out_h: out_hw,
            out_w: out_hw,
            inputs: vec![input.to_string()],
            prunable: false,
        }
    }

    pub fn with_prunable(mut self, prunable: bool) -> Self {
        self.prunable = prunable;
        self
    }

    fn is_weighted(&self) -> bool {
        matches!(self.kind, NodeKind::Conv2d | NodeKind::Dense)
    }
}

/// Topologically ordered network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub nodes: Vec<GraphNode>,
}

impl GraphSpec {
    pub fn new(nodes: Vec<GraphNode>) -> Result<Self, FlopsError> {
        let g = Self { nodes };
        g.validate()?;
        Ok(g)
    }

    pub fn from_json(text: &str) -> Result<Self, FlopsError> {
        let g: Self = serde_json::from_str(text)?;
        g.validate()?;
        Ok(g)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FlopsError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn node(&self, name: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// True when no node joins branches, i.e. a plain chain.
    pub fn is_sequential(&self) -> bool {
        self.nodes.iter().all(|n| n.is_weighted())
            && self.nodes.iter().enumerate().all(|(i, n)| match n.inputs.as_slice() {
                [] => i == 0,
                [prev] => i > 0 && *prev == self.nodes[i - 1].name,
                _ => false,
            })
    }

    pub fn validate(&self) -> Result<(), FlopsError> {
        let bad = |msg: String| Err(FlopsError::GraphValidation(msg));
        let mut seen: HashMap<&str, &GraphNode> = HashMap::new();
        for node in &self.nodes {
            if seen.contains_key(node.name.as_str()) {
                return bad(format!("duplicate node `{}`", node.name));
            }
            if node.out_channels == 0 || node.in_channels == 0 || node.kernel == 0 || node.out_h == 0 || node.out_w == 0
            {
                return bad(format!("node `{}` has a zero dimension", node.name));
            }
            let mut inputs = Vec::with_capacity(node.inputs.len());
            for input in &node.inputs {
                match seen.get(input.as_str()) {
                    Some(src) => inputs.push(*src),
                    None => {
                        return bad(format!(
                            "node `{}` reads `{input}`, which is not an earlier node",
                            node.name
                        ))
                    }
                }
            }
            if node.prunable && !node.is_weighted() {
                return bad(format!("node `{}` has no filters to prune", node.name));
            }
            match node.kind {
                NodeKind::Conv2d | NodeKind::Dense => {
                    if inputs.len() > 1 {
                        return bad(format!("node `{}` takes at most one input", node.name));
                    }
                    if node.kind == NodeKind::Dense && node.kernel != 1 {
                        return bad(format!("dense node `{}` must have kernel 1", node.name));
                    }
                    if let Some(src) = inputs.first() {
                        if src.out_channels != node.in_channels {
                            return bad(format!(
                                "node `{}` expects {} input channels, `{}` produces {}",
                                node.name, node.in_channels, src.name, src.out_channels
                            ));
                        }
                    }
                }
                NodeKind::Add => {
                    if inputs.len() != 2 {
                        return bad(format!("add node `{}` needs exactly 2 inputs", node.name));
                    }
                    if inputs.iter().any(|s| s.out_channels != node.out_channels)
                        || node.in_channels != node.out_channels
                    {
                        return bad(format!("add node `{}` joins inputs of unequal width", node.name));
                    }
                }
                NodeKind::Shortcut => {
                    if inputs.len() != 1 {
                        return bad(format!("shortcut node `{}` needs exactly 1 input", node.name));
                    }
                    if inputs[0].out_channels != node.in_channels || node.out_channels < node.in_channels {
                        return bad(format!("shortcut node `{}` has inconsistent widths", node.name));
                    }
                }
            }
            seen.insert(node.name.as_str(), node);
        }
        Ok(())
    }
}

/// Per-node pruning rates; nodes not listed are unpruned.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneRates {
    pub rates: HashMap<String, f64>,
}

impl PruneRates {
    /// The same rate on every prunable node.
    pub fn uniform(graph: &GraphSpec, rate: f64) -> Self {
        Self {
            rates: graph
                .nodes
                .iter()
                .filter(|n| n.prunable)
                .map(|n| (n.name.clone(), rate))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> f64 {
        self.rates.get(name).copied().unwrap_or(0.0)
    }

    pub fn validate(&self, graph: &GraphSpec) -> Result<(), FlopsError> {
        for (name, &rate) in &self.rates {
            let node = graph
                .node(name)
                .ok_or_else(|| FlopsError::InvalidRate(format!("no node named `{name}`")))?;
            if !(0.0..1.0).contains(&rate) {
                return Err(FlopsError::InvalidRate(format!(
                    "rate {rate} for `{name}` is outside [0, 1)"
                )));
            }
            if !node.prunable && rate != 0.0 {
                return Err(FlopsError::InvalidRate(format!("node `{name}` is not prunable")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFlops {
    pub name: String,
    pub kept_out: usize,
    pub effective_in: usize,
    pub baseline: u64,
    pub pruned: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub nodes: Vec<NodeFlops>,
    pub baseline_total: u64,
    pub pruned_total: u64,
    pub reduction_percent: f64,
}

impl FlopsReport {
    pub fn to_table(&self) -> String {
        let width = self.nodes.iter().map(|n| n.name.len()).max().unwrap_or(4).max(4);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>7}  {:>14}  {:>14}",
            "node", "in", "out", "baseline", "pruned"
        );
        for n in &self.nodes {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>7}  {:>14}  {:>14}",
                n.name, n.effective_in, n.kept_out, n.baseline, n.pruned
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>7}  {:>14.4E}  {:>14.4E}",
            "total", "", "", self.baseline_total as f64, self.pruned_total as f64
        );
        let _ = writeln!(out, "reduction: {:.2}%", self.reduction_percent);
        out
    }
}

fn macs(kind: NodeKind, out: usize, input: usize, kernel: usize, h: usize, w: usize) -> u64 {
    match kind {
        NodeKind::Conv2d => (out * input * kernel * kernel * h * w) as u64,
        NodeKind::Dense => (out * input) as u64,
        NodeKind::Add | NodeKind::Shortcut => 0,
    }
}

pub fn flops_baseline(graph: &GraphSpec) -> Result<FlopsReport, FlopsError> {
    flops_pruned(graph, &PruneRates::default())
}

pub fn flops_pruned(graph: &GraphSpec, rates: &PruneRates) -> Result<FlopsReport, FlopsError> {
    graph.validate()?;
    rates.validate(graph)?;
    let mut kept: HashMap<&str, usize> = HashMap::new();
    let mut nodes = Vec::with_capacity(graph.nodes.len());
    for node in &graph.nodes {
        let kept_out = if node.is_weighted() {
            node.out_channels - pruned_count(node.out_channels, rates.get(&node.name))
        } else {
            node.out_channels
        };
        let effective_in = match node.inputs.first() {
            Some(src) if node.is_weighted() => {
                let src_node = graph.node(src).expect("validated");
                if src_node.is_weighted() {
                    kept[src.as_str()]
                } else {
                    node.in_channels
                }
            }
            _ => node.in_channels,
        };
        kept.insert(node.name.as_str(), kept_out);
        nodes.push(NodeFlops {
            name: node.name.clone(),
            kept_out,
            effective_in,
            baseline: macs(
                node.kind,
                node.out_channels,
                node.in_channels,
                node.kernel,
                node.out_h,
                node.out_w,
            ),
            pruned: macs(node.kind, kept_out, effective_in, node.kernel, node.out_h, node.out_w),
        });
    }
    let baseline_total: u64 = nodes.iter().map(|n| n.baseline).sum();
    let pruned_total: u64 = nodes.iter().map(|n| n.pruned).sum();
    let reduction_percent = if baseline_total == 0 {
        0.0
    } else {
        100.0 * (1.0 - pruned_total as f64 / baseline_total as f64)
    };
    Ok(FlopsReport {
        nodes,
        baseline_total,
        pruned_total,
        reduction_percent,
    })
}

/// CIFAR ResNet of depth `6 * blocks_per_stage + 2` with parameter-free
/// downsampling shortcuts. `blocks_per_stage = 3` is ResNet-20.
pub fn resnet_cifar(blocks_per_stage: usize) -> GraphSpec {
    let mut nodes = vec![GraphNode::conv2d("conv1", None, 3, 16, 3, 32)];
    let mut prev = "conv1".to_string();
    let mut channels = 16;
    for (stage, (width, hw)) in [(16usize, 32usize), (32, 16), (64, 8)].into_iter().enumerate() {
        for block in 0..blocks_per_stage {
            let prefix = format!("layer{}.{}", stage + 1, block);
            let conv_a = format!("{prefix}.conv_a");
            let conv_b = format!("{prefix}.conv_b");
            nodes.push(GraphNode::conv2d(&conv_a, Some(&prev), channels, width, 3, hw));
            nodes.push(GraphNode::conv2d(&conv_b, Some(&conv_a), width, width, 3, hw));
            let identity = if channels != width {
                let name = format!("{prefix}.shortcut");
                nodes.push(GraphNode::shortcut(&name, &prev, channels, width, hw));
                name
            } else {
                prev.clone()
            };
            let join = format!("{prefix}.add");
            nodes.push(GraphNode::add(&join, &conv_b, &identity, width, hw));
            prev = join;
            channels = width;
        }
    }
    nodes.push(GraphNode::dense("fc", Some(&prev), 64, 10));
    GraphSpec::new(nodes).expect("generated ResNet is well formed")
}

pub fn resnet20_cifar() -> GraphSpec {
    resnet_cifar(3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_count() {
        let g = GraphSpec::new(vec![GraphNode::conv2d("c", None, 16, 16, 3, 32)]).unwrap();
        let r = flops_baseline(&g).unwrap();
        assert_eq!(r.baseline_total, 2_359_296);
        assert_eq!(r.pruned_total, r.baseline_total);
        assert_eq!(r.reduction_percent, 0.0);
    }

    #[test]
    fn empty_graph_is_zero() {
        let r = flops_baseline(&GraphSpec::new(vec![]).unwrap()).unwrap();
        assert_eq!((r.baseline_total, r.pruned_total, r.reduction_percent), (0, 0, 0.0));
    }

    #[test]
    fn dense_counts_out_times_in() {
        let g = GraphSpec::new(vec![GraphNode::dense("fc", None, 64, 10)]).unwrap();
        assert_eq!(flops_baseline(&g).unwrap().baseline_total, 640);
    }

    #[test]
    fn middle_conv_at_forty_percent_is_036() {
        let g = GraphSpec::new(vec![
            GraphNode::conv2d("a", None, 3, 20, 3, 8),
            GraphNode::conv2d("b", Some("a"), 20, 20, 3, 8),
        ])
        .unwrap();
        let r = flops_pruned(&g, &PruneRates::uniform(&g, 0.4)).unwrap();
        let b = &r.nodes[1];
        assert_eq!((b.kept_out, b.effective_in), (12, 12));
        assert_eq!(b.pruned as f64 / b.baseline as f64, 0.36);
    }

    #[test]
    fn add_inputs_carry_full_channels() {
        let g = GraphSpec::new(vec![
            GraphNode::conv2d("stem", None, 3, 10, 3, 4),
            GraphNode::conv2d("a", Some("stem"), 10, 10, 3, 4),
            GraphNode::add("join", "a", "stem", 10, 4),
            GraphNode::conv2d("b", Some("join"), 10, 10, 3, 4),
        ])
        .unwrap();
        let r = flops_pruned(&g, &PruneRates::uniform(&g, 0.5)).unwrap();
        assert_eq!(r.nodes[1].effective_in, 5);
        assert_eq!(r.nodes[3].effective_in, 10);
        assert_eq!(r.nodes[3].kept_out, 5);
        assert_eq!(r.nodes[2].pruned, 0);
    }

    #[test]
    fn validation_errors() {
        let cases = vec![
            vec![GraphNode::conv2d("a", Some("missing"), 3, 4, 3, 4)],
            vec![
                GraphNode::conv2d("a", None, 3, 4, 3, 4),
                GraphNode::conv2d("a", None, 3, 4, 3, 4),
            ],
            vec![
                GraphNode::conv2d("a", None, 3, 4, 3, 4),
                GraphNode::conv2d("b", Some("a"), 5, 4, 3, 4),
            ],
            vec![
                GraphNode::conv2d("a", None, 3, 4, 3, 4),
                GraphNode::conv2d("b", None, 3, 8, 3, 4),
                GraphNode::add("j", "a", "b", 4, 4),
            ],
            vec![
                GraphNode::conv2d("a", None, 3, 4, 3, 4),
                GraphNode::add("j", "a", "a", 4, 4).with_prunable(true),
            ],
            vec![GraphNode {
                inputs: vec![],
                ..GraphNode::add("j", "x", "y", 4, 4)
            }],
        ];
        for nodes in cases {
            let err = GraphSpec::new(nodes.clone()).unwrap_err();
            assert_eq!(err.name(), "GraphValidation", "{nodes:?}");
        }
    }

    #[test]
    fn rate_validation() {
        let g = resnet20_cifar();
        assert!(flops_pruned(&g, &PruneRates::uniform(&g, 1.0)).is_err());
        let mut rates = PruneRates::default();
        rates.rates.insert("fc".into(), 0.5);
        assert_eq!(flops_pruned(&g, &rates).unwrap_err().name(), "InvalidRate");
    }

    #[test]
    fn pruned_count_rounding() {
        assert_eq!(pruned_count(8, 0.25), 2);
        assert_eq!(pruned_count(16, 0.3), 4);
        assert_eq!(pruned_count(100, 0.29), 29);
        assert_eq!(pruned_count(10, 0.0), 0);
        assert_eq!(pruned_count(1, 0.99), 0);
    }

    #[test]
    fn resnet20_shape() {
        let g = resnet20_cifar();
        let weighted = g.nodes.iter().filter(|n| n.is_weighted()).count();
        assert_eq!(weighted, 20);
        assert!(!g.is_sequential());
        // Hand count: stem + three stages + fc.
        let stem = 3 * 16 * 9 * 1024;
        let stage1 = 6 * 16 * 16 * 9 * 1024;
        let stage2 = 16 * 32 * 9 * 256 + 5 * 32 * 32 * 9 * 256;
        let stage3 = 32 * 64 * 9 * 64 + 5 * 64 * 64 * 9 * 64;
        let total = (stem + stage1 + stage2 + stage3 + 640) as u64;
        assert_eq!(flops_baseline(&g).unwrap().baseline_total, total);
    }

    #[test]
    fn graph_json_defaults() {
        let g = GraphSpec::from_json(
            r#"{"nodes":[{"name":"a","kind":"conv2d","out_channels":4,"in_channels":3,"kernel":3,"out_h":2,"out_w":2,"prunable":true},
                         {"name":"fc","kind":"dense","out_channels":2,"in_channels":4,"inputs":["a"]}]}"#,
        )
        .unwrap();
        assert!(g.is_sequential());
        assert!(!g.nodes[1].prunable);
        assert_eq!(flops_baseline(&g).unwrap().baseline_total, 4 * 3 * 9 * 4 + 8);
        assert_eq!(GraphSpec::from_json(&g.to_json_pretty()).unwrap(), g);
    }
}
