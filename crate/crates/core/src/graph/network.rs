//! Layer graph storage and execution.
//!
//! Nodes are stored in topological order; executing them front to back is the forward
//! pass and walking them back to front the backward pass.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::layers::{
    batchnorm::{DEFAULT_EPS, DEFAULT_STAT_MOMENTUM},
    batchnorm2d, batchnorm2d_backward, bilinear_upsample2x, bilinear_upsample2x_backward, concat_channels, conv2d,
    conv2d_backward, deconv2d, deconv2d_backward, maxpool2d, maxpool2d_backward, maxunpool2d, maxunpool2d_backward,
    relu, relu_backward, split_channels, BatchNormCache, BatchNormParams, ConvParams, Differentiable, LayerError, Mode,
    PoolSwitches,
};
use crate::tensor::{Real, Tensor};

use super::{GraphError, RbdnConfig};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Op<T> {
    Input {
        channels: usize,
    },
    /// Stride-1 convolution with zero padding `pad`. Without `bias` the bias stays zero and is
    /// not learnable (a following batch norm would cancel it exactly).
    Conv {
        params: ConvParams<T>,
        pad: usize,
        bias: bool,
    },
    /// Stride-1 transposed convolution.
    Deconv {
        params: ConvParams<T>,
        pad: usize,
        bias: bool,
    },
    BatchNorm(BatchNormParams<T>),
    Relu,
    MaxPool,
    /// Unpools its input with the switches recorded by `pool`.
    Unpool {
        pool: NodeId,
    },
    Bilinear,
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Input,
    Conv,
    Deconv,
    BatchNorm,
    Relu,
    MaxPool,
    Unpool,
    Bilinear,
    Concat,
}

impl<T> Op<T> {
    pub fn kind(&self) -> NodeKind {
        match self {
            Op::Input { .. } => NodeKind::Input,
            Op::Conv { .. } => NodeKind::Conv,
            Op::Deconv { .. } => NodeKind::Deconv,
            Op::BatchNorm(_) => NodeKind::BatchNorm,
            Op::Relu => NodeKind::Relu,
            Op::MaxPool => NodeKind::MaxPool,
            Op::Unpool { .. } => NodeKind::Unpool,
            Op::Bilinear => NodeKind::Bilinear,
            Op::Concat => NodeKind::Concat,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node<T> {
    pub name: String,
    pub op: Op<T>,
    pub inputs: Vec<NodeId>,
}

/// Shape-level description of a node, for comparing graphs structurally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSummary {
    pub name: String,
    pub kind: NodeKind,
    pub inputs: Vec<NodeId>,
    pub param_shapes: Vec<Vec<usize>>,
}

/// Whether inputs whose dims are not multiples of the pooling factor are padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Disabled,
    /// Reflect-pad bottom/right to the next multiple, crop the output back.
    Reflect,
}

#[derive(Debug, Clone)]
enum NodeCache<T> {
    None,
    BatchNorm(BatchNormCache<T>),
    Pool { switches: PoolSwitches, in_h: usize, in_w: usize },
}

/// Activations and layer caches of one forward pass, consumed by [`NetworkGraph::backward`].
#[derive(Debug, Clone)]
pub struct Trace<T> {
    acts: Vec<Tensor<T>>,
    caches: Vec<NodeCache<T>>,
    output: NodeId,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.acts[self.output]
    }

    pub fn activation(&self, id: NodeId) -> &Tensor<T> {
        &self.acts[id]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph<T> {
    config: RbdnConfig,
    nodes: Vec<Node<T>>,
    output: NodeId,
}

impl<T: Real> NetworkGraph<T> {
    pub(crate) fn empty(config: RbdnConfig) -> Self {
        Self { config, nodes: Vec::new(), output: 0 }
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        let id = self.nodes.len();
        debug_assert!(inputs.iter().all(|&i| i < id));
        self.nodes.push(Node { name: name.into(), op, inputs: inputs.to_vec() });
        self.output = id;
        id
    }

    pub(crate) fn nodes_mut(&mut self) -> &mut [Node<T>] {
        &mut self.nodes
    }

    pub fn config(&self) -> &RbdnConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node<T> {
        &self.nodes[id]
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    pub fn consumers(&self, id: NodeId) -> Vec<NodeId> {
        (id + 1..self.nodes.len()).filter(|&j| self.nodes[j].inputs.contains(&id)).collect()
    }

    /// `(pool, unpool)` pairs sharing switches.
    pub fn switch_links(&self) -> Vec<(NodeId, NodeId)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Unpool { pool } => Some((pool, i)),
                _ => None,
            })
            .collect()
    }

    pub fn structure(&self) -> Vec<NodeSummary> {
        self.nodes
            .iter()
            .map(|n| NodeSummary {
                name: n.name.clone(),
                kind: n.op.kind(),
                inputs: n.inputs.clone(),
                param_shapes: param_shapes(&n.op),
            })
            .collect()
    }

    /// Channel count of every node's output.
    pub fn channels(&self) -> Vec<usize> {
        let mut ch: Vec<usize> = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let c = match &n.op {
                Op::Input { channels } => *channels,
                Op::Conv { params, .. } => params.weight.n(),
                Op::Deconv { params, .. } => params.weight.c(),
                Op::BatchNorm(p) => p.channels(),
                Op::Concat => n.inputs.iter().map(|&i| ch[i]).sum(),
                _ => ch[n.inputs[0]],
            };
            ch.push(c);
        }
        ch
    }

    /// Checks topological order, name uniqueness, arities, channel agreement and switch links.
    pub fn validate(&self) -> Result<(), GraphError> {
        let err = |m: String| Err(GraphError::Structure(m));
        let mut names = std::collections::HashSet::new();
        let mut in_ch = Vec::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.iter().enumerate() {
            if !names.insert(n.name.as_str()) {
                return err(format!("duplicate node name '{}'", n.name));
            }
            if n.inputs.iter().any(|&j| j >= i) {
                return err(format!("node '{}' consumes a later node", n.name));
            }
            let arity_ok = match n.op {
                Op::Input { .. } => n.inputs.is_empty(),
                Op::Concat => n.inputs.len() >= 2,
                _ => n.inputs.len() == 1,
            };
            if !arity_ok {
                return err(format!("node '{}' has {} inputs", n.name, n.inputs.len()));
            }
            in_ch.push(n.inputs.first().copied());
        }
        if self.count(NodeKind::Input) != 1 || self.nodes.first().map(|n| n.op.kind()) != Some(NodeKind::Input) {
            return err("graph must start with its single input node".into());
        }
        let ch = self.channels();
        for (i, n) in self.nodes.iter().enumerate() {
            let want = match &n.op {
                Op::Conv { params, .. } => Some(params.weight.c()),
                Op::Deconv { params, .. } => Some(params.weight.n()),
                Op::BatchNorm(p) => Some(p.channels()),
                _ => None,
            };
            if let (Some(want), Some(src)) = (want, in_ch[i]) {
                if ch[src] != want {
                    return err(format!("node '{}' expects {want} channels, gets {}", n.name, ch[src]));
                }
            }
            if let Op::Unpool { pool } = n.op {
                if self.nodes.get(pool).map(|p| p.op.kind()) != Some(NodeKind::MaxPool) || pool >= i {
                    return err(format!("unpool '{}' is not linked to an upstream pool", n.name));
                }
                if ch[pool] != ch[n.inputs[0]] {
                    return err(format!(
                        "unpool '{}' carries {} channels but its pool switches cover {}",
                        n.name, ch[n.inputs[0]], ch[pool]
                    ));
                }
            }
        }
        let linked: Vec<NodeId> = self.switch_links().iter().map(|&(p, _)| p).collect();
        let mut dedup = linked.clone();
        dedup.sort_unstable();
        dedup.dedup();
        if dedup.len() != linked.len() {
            return err("a pool's switches are consumed by more than one unpool".into());
        }
        Ok(())
    }

    /// Output shape of every node for a given input shape, without running any arithmetic.
    pub fn infer_shapes(&self, input: [usize; 4]) -> Result<Vec<[usize; 4]>, GraphError> {
        let ch = self.channels();
        let mut shapes: Vec<[usize; 4]> = Vec::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.iter().enumerate() {
            let s = match &n.op {
                Op::Input { .. } => input,
                Op::MaxPool => {
                    let [b, c, h, w] = shapes[n.inputs[0]];
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(GraphError::NotDivisible {
                            h: input[2],
                            w: input[3],
                            factor: self.config.divisibility(),
                        });
                    }
                    [b, c, h / 2, w / 2]
                }
                Op::Unpool { pool } => {
                    let [_, _, h, w] = shapes[self.nodes[*pool].inputs[0]];
                    let [b, c, _, _] = shapes[n.inputs[0]];
                    [b, c, h, w]
                }
                Op::Bilinear => {
                    let [b, c, h, w] = shapes[n.inputs[0]];
                    [b, c, 2 * h, 2 * w]
                }
                _ => {
                    let [b, _, h, w] = shapes[n.inputs[0]];
                    [b, ch[i], h, w]
                }
            };
            shapes.push(s);
        }
        Ok(shapes)
    }

    pub fn learnable_count(&self) -> usize {
        self.nodes.iter().map(|n| param_shapes(&n.op).iter().map(|s| s.iter().product::<usize>()).sum::<usize>()).sum()
    }

    /// Learnable tensors in canonical order: per node, weight then (learnable) bias, or gamma
    /// then beta.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for n in &mut self.nodes {
            match &mut n.op {
                Op::Conv { params, bias, .. } | Op::Deconv { params, bias, .. } => {
                    out.push(params.weight.data_mut());
                    if *bias {
                        out.push(&mut params.bias);
                    }
                }
                Op::BatchNorm(p) => {
                    out.push(&mut p.gamma);
                    out.push(&mut p.beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Names matching [`Self::params_mut`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for n in &self.nodes {
            match &n.op {
                Op::Conv { bias, .. } | Op::Deconv { bias, .. } => {
                    out.push(format!("{}.weight", n.name));
                    if *bias {
                        out.push(format!("{}.bias", n.name));
                    }
                }
                Op::BatchNorm(_) => {
                    out.push(format!("{}.gamma", n.name));
                    out.push(format!("{}.beta", n.name));
                }
                _ => {}
            }
        }
        out
    }

    /// He-normal weights (variance 2/fan_in), zero biases, identity batch-norm affine.
    pub fn initialize(&mut self, rng: &mut impl Rng) {
        for n in &mut self.nodes {
            let deconv = matches!(n.op, Op::Deconv { .. });
            match &mut n.op {
                Op::Conv { params, .. } | Op::Deconv { params, .. } => {
                    let [a, b, kh, kw] = params.weight.shape();
                    let fan_in = if deconv { a } else { b } * kh * kw;
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    for v in params.weight.data_mut() {
                        *v = T::from_f64_lossy(normal.sample(rng));
                    }
                    params.bias.iter_mut().for_each(|b| *b = T::zero());
                }
                Op::BatchNorm(p) => {
                    *p = BatchNormParams::new(p.channels());
                }
                _ => {}
            }
        }
    }

    /// Marks every batch-norm node's running statistics as usable without training.
    pub fn mark_stats_tracked(&mut self) {
        for n in &mut self.nodes {
            if let Op::BatchNorm(p) = &mut n.op {
                p.tracked = true;
            }
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), GraphError> {
        let Op::Input { channels } = self.nodes[0].op else {
            return Err(GraphError::Structure("graph has no input node".into()));
        };
        if x.c() != channels {
            return Err(GraphError::Layer(crate::layers::LayerError::ChannelMismatch {
                expected: channels,
                got: x.c(),
            }));
        }
        let f = self.min_divisor();
        if !x.h().is_multiple_of(f) || !x.w().is_multiple_of(f) {
            return Err(GraphError::NotDivisible { h: x.h(), w: x.w(), factor: f });
        }
        Ok(())
    }

    /// Largest product of stride-2 pools along any input-to-output path.
    pub fn min_divisor(&self) -> usize {
        let mut depth = vec![0u32; self.nodes.len()];
        let mut best = 0;
        for (i, n) in self.nodes.iter().enumerate() {
            let base = n.inputs.iter().map(|&j| depth[j]).max().unwrap_or(0);
            depth[i] = base + u32::from(n.op.kind() == NodeKind::MaxPool);
            best = best.max(depth[i]);
        }
        1 << best
    }

    #[allow(clippy::type_complexity)]
    fn execute(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        keep: bool,
    ) -> Result<(Vec<Option<Tensor<T>>>, Vec<NodeCache<T>>, Vec<(NodeId, BatchNormParams<T>)>), GraphError> {
        self.check_input(x)?;
        let count = self.nodes.len();
        let mut last_use = vec![0usize; count];
        for (i, n) in self.nodes.iter().enumerate() {
            for &j in &n.inputs {
                last_use[j] = i;
            }
        }
        last_use[self.output] = usize::MAX;
        let mut acts: Vec<Option<Tensor<T>>> = vec![None; count];
        let mut caches: Vec<NodeCache<T>> = vec![NodeCache::None; count];
        let mut updated = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let arg = |k: usize| acts[n.inputs[k]].as_ref().expect("input computed before use");
            let y = match &n.op {
                Op::Input { .. } => x.clone(),
                Op::Conv { params, pad, .. } => conv2d(arg(0), params, 1, *pad)?,
                Op::Deconv { params, pad, .. } => deconv2d(arg(0), params, 1, *pad)?,
                Op::BatchNorm(p) => {
                    let mut p = p.clone();
                    let (y, cache) = batchnorm2d(arg(0), &mut p, mode, DEFAULT_EPS, DEFAULT_STAT_MOMENTUM)?;
                    if keep {
                        caches[i] = NodeCache::BatchNorm(cache);
                    }
                    if mode == Mode::Train {
                        updated.push((i, p));
                    }
                    y
                }
                Op::Relu => relu(arg(0)),
                Op::MaxPool => {
                    let a = arg(0);
                    let (y, switches) = maxpool2d(a)?;
                    caches[i] = NodeCache::Pool { switches, in_h: a.h(), in_w: a.w() };
                    y
                }
                Op::Unpool { pool } => {
                    let NodeCache::Pool { switches, in_h, in_w } = &caches[*pool] else {
                        return Err(GraphError::Structure(format!("unpool '{}' has no switches", n.name)));
                    };
                    maxunpool2d(arg(0), switches, *in_h, *in_w)?
                }
                Op::Bilinear => bilinear_upsample2x(arg(0)),
                Op::Concat => {
                    let parts: Vec<&Tensor<T>> =
                        n.inputs.iter().map(|&j| acts[j].as_ref().expect("computed")).collect();
                    concat_channels(&parts)?
                }
            };
            acts[i] = Some(y);
            if !keep {
                for &j in &n.inputs {
                    if last_use[j] == i {
                        acts[j] = None;
                    }
                }
            }
        }
        Ok((acts, caches, updated))
    }

    /// Forward pass retaining everything needed for [`Self::backward`].
    /// In training mode the batch-norm running statistics are updated.
    pub fn forward_trace(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Trace<T>, GraphError> {
        let (acts, caches, updated) = self.execute(x, mode, true)?;
        self.apply_stats(updated);
        Ok(Trace { acts: acts.into_iter().map(|a| a.expect("kept")).collect(), caches, output: self.output })
    }

    fn apply_stats(&mut self, updated: Vec<(NodeId, BatchNormParams<T>)>) {
        for (i, p) in updated {
            if let Op::BatchNorm(dst) = &mut self.nodes[i].op {
                *dst = p;
            }
        }
    }

    /// Evaluation-mode forward pass. Does not mutate the graph.
    pub fn infer(&self, x: &Tensor<T>, padding: Padding) -> Result<Tensor<T>, GraphError> {
        self.run_padded(x, padding, |g, x| {
            let (mut acts, _, _) = g.execute(x, Mode::Eval, false)?;
            Ok(acts[g.output].take().expect("output kept"))
        })
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, padding: Padding) -> Result<Tensor<T>, GraphError> {
        match mode {
            Mode::Eval => self.infer(x, padding),
            Mode::Train => {
                let (y, updated) = {
                    let mut updated = Vec::new();
                    let y = self.run_padded(x, padding, |g, x| {
                        let (mut acts, _, upd) = g.execute(x, Mode::Train, false)?;
                        updated = upd;
                        Ok(acts[g.output].take().expect("output kept"))
                    })?;
                    (y, updated)
                };
                self.apply_stats(updated);
                Ok(y)
            }
        }
    }

    fn run_padded(
        &self,
        x: &Tensor<T>,
        padding: Padding,
        run: impl FnOnce(&Self, &Tensor<T>) -> Result<Tensor<T>, GraphError>,
    ) -> Result<Tensor<T>, GraphError> {
        let f = self.min_divisor();
        let (h, w) = (x.h(), x.w());
        if padding == Padding::Disabled || (h % f == 0 && w % f == 0) {
            return run(self, x);
        }
        let (ph, pw) = (h.div_ceil(f) * f, w.div_ceil(f) * f);
        let padded = reflect_pad(x, ph, pw);
        Ok(run(self, &padded)?.crop(0, 0, h, w))
    }

    /// Gradients of `⟨dy, output⟩` with respect to the graph input and every learnable tensor
    /// (in [`Self::params_mut`] order).
    pub fn backward(&self, trace: &Trace<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Vec<T>>), GraphError> {
        if dy.shape() != trace.output().shape() {
            return Err(GraphError::Layer(crate::layers::LayerError::ShapeMismatch {
                expected: trace.output().shape(),
                got: dy.shape(),
            }));
        }
        let count = self.nodes.len();
        let mut slots = vec![usize::MAX; count];
        let mut grads_out: Vec<Vec<T>> = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for shape in param_shapes(&n.op) {
                if slots[i] == usize::MAX {
                    slots[i] = grads_out.len();
                }
                grads_out.push(vec![T::zero(); shape.iter().product()]);
            }
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; count];
        grads[self.output] = Some(dy.clone());
        let mut input_grad = None;

        fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
            match slot {
                Some(existing) => existing.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for i in (0..count).rev() {
            let Some(g) = grads[i].take() else { continue };
            let n = &self.nodes[i];
            let src = |k: usize| &trace.acts[n.inputs[k]];
            match &n.op {
                Op::Input { .. } => input_grad = Some(g),
                Op::Conv { params, pad, bias } => {
                    let cg = conv2d_backward(src(0), params, 1, *pad, &g)?;
                    grads_out[slots[i]] = cg.weight.into_vec();
                    if *bias {
                        grads_out[slots[i] + 1] = cg.bias;
                    }
                    accumulate(&mut grads[n.inputs[0]], cg.input);
                }
                Op::Deconv { params, pad, bias } => {
                    let cg = deconv2d_backward(src(0), params, 1, *pad, &g)?;
                    grads_out[slots[i]] = cg.weight.into_vec();
                    if *bias {
                        grads_out[slots[i] + 1] = cg.bias;
                    }
                    accumulate(&mut grads[n.inputs[0]], cg.input);
                }
                Op::BatchNorm(p) => {
                    let NodeCache::BatchNorm(cache) = &trace.caches[i] else {
                        return Err(GraphError::Structure(format!("no batch-norm cache for '{}'", n.name)));
                    };
                    let (dx, dg, db) = batchnorm2d_backward(cache, p, &g)?;
                    grads_out[slots[i]] = dg;
                    grads_out[slots[i] + 1] = db;
                    accumulate(&mut grads[n.inputs[0]], dx);
                }
                Op::Relu => accumulate(&mut grads[n.inputs[0]], relu_backward(src(0), &g)),
                Op::MaxPool => {
                    let NodeCache::Pool { switches, in_h, in_w } = &trace.caches[i] else {
                        return Err(GraphError::Structure(format!("no switches for '{}'", n.name)));
                    };
                    accumulate(&mut grads[n.inputs[0]], maxpool2d_backward(&g, switches, *in_h, *in_w)?);
                }
                Op::Unpool { pool } => {
                    let NodeCache::Pool { switches, .. } = &trace.caches[*pool] else {
                        return Err(GraphError::Structure(format!("no switches for '{}'", n.name)));
                    };
                    accumulate(&mut grads[n.inputs[0]], maxunpool2d_backward(&g, switches)?);
                }
                Op::Bilinear => accumulate(&mut grads[n.inputs[0]], bilinear_upsample2x_backward(&g)),
                Op::Concat => {
                    let widths: Vec<usize> = n.inputs.iter().map(|&j| trace.acts[j].c()).collect();
                    for (&j, part) in n.inputs.iter().zip(split_channels(&g, &widths)?) {
                        accumulate(&mut grads[j], part);
                    }
                }
            }
        }
        let input_grad = input_grad.unwrap_or_else(|| Tensor::zeros(trace.acts[0].shape()));
        Ok((input_grad, grads_out))
    }
}

/// A double-precision graph run in training mode, exposed to the finite-difference checker.
pub struct GraphLayer {
    pub graph: NetworkGraph<f64>,
}

fn to_layer_error(e: GraphError) -> LayerError {
    match e {
        GraphError::Layer(e) => e,
        other => LayerError::BadParams(other.to_string()),
    }
}

impl Differentiable for GraphLayer {
    fn name(&self) -> String {
        let c = self.graph.config();
        format!("rbdn K={} ({})", c.branches, c.variant)
    }

    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>, LayerError> {
        self.graph.forward(x, Mode::Train, Padding::Disabled).map_err(to_layer_error)
    }

    fn backward(&mut self, x: &Tensor<f64>, dy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>), LayerError> {
        let trace = self.graph.forward_trace(x, Mode::Train).map_err(to_layer_error)?;
        self.graph.backward(&trace, dy).map_err(to_layer_error)
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.graph.params_mut()
    }

    fn param_names(&self) -> Vec<String> {
        self.graph.param_names()
    }
}

fn param_shapes<T: Real>(op: &Op<T>) -> Vec<Vec<usize>> {
    match op {
        Op::Conv { params, bias, .. } | Op::Deconv { params, bias, .. } => {
            let mut shapes = vec![params.weight.shape().to_vec()];
            if *bias {
                shapes.push(vec![params.bias.len()]);
            }
            shapes
        }
        Op::BatchNorm(p) => vec![vec![p.channels()], vec![p.channels()]],
        _ => Vec::new(),
    }
}

/// Mirror index into `[0, len)` without repeating the edge sample.
fn reflect_index(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let m = i % period;
    if m < len {
        m
    } else {
        period - m
    }
}

/// Extends every plane to `h × w` by reflection across the bottom and right edges.
pub fn reflect_pad<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let [n, c, sh, sw] = x.shape();
    assert!(h >= sh && w >= sw);
    let mut out = Tensor::zeros([n, c, h, w]);
    for (src, dst) in x.data().chunks_exact(sh * sw).zip(out.data_mut().chunks_exact_mut(h * w)) {
        for y in 0..h {
            let sy = reflect_index(y, sh);
            for xx in 0..w {
                dst[y * w + xx] = src[sy * sw + reflect_index(xx, sw)];
            }
        }
    }
    out
}
