//! Reverse-mode differentiation over a flat tape of scalar nodes, plus the
//! layers the forecaster is built from.
//!
//! Every node on the [`Tape`] stores its value, a gradient slot and a list of
//! `(parent, local derivative)` edges. Nodes may only reference nodes created
//! before them, so the creation order is a topological order and
//! [`Tape::backward`] is a single reverse sweep. Layer outputs are emitted as
//! fused nodes (one node per convolution output, one per attention weight)
//! to keep the tape short.
//!
//! Parameters live outside the tape in a [`ParamSet`]. Each forward pass
//! binds them as the first leaves of a fresh tape, and gradients are copied
//! back after the backward sweep.

use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    parent: u32,
    local: f64,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    values: Vec<f64>,
    grads: Vec<f64>,
    // edges of node i live in edges[ends[i-1]..ends[i]]
    ends: Vec<u32>,
    edges: Vec<Edge>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.values.clear();
        self.grads.clear();
        self.ends.clear();
        self.edges.clear();
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> f64 {
        self.values[v.index()]
    }

    pub fn grad(&self, v: Var) -> f64 {
        self.grads[v.index()]
    }

    pub fn values_of(&self, vars: &[Var]) -> Vec<f64> {
        vars.iter().map(|&v| self.value(v)).collect()
    }

    fn edge_range(&self, i: usize) -> std::ops::Range<usize> {
        let start = if i == 0 { 0 } else { self.ends[i - 1] as usize };
        start..self.ends[i] as usize
    }

    fn push_node(&mut self, value: f64) -> Var {
        let id = self.values.len();
        self.values.push(value);
        self.grads.push(0.0);
        self.ends.push(self.edges.len() as u32);
        Var(id as u32)
    }

    pub fn leaf(&mut self, value: f64) -> Var {
        self.push_node(value)
    }

    /// Starts a node whose value is a sum of linear and product terms.
    pub fn build(&mut self) -> NodeBuilder<'_> {
        NodeBuilder {
            tape: self,
            value: 0.0,
        }
    }

    /// A node with caller-supplied value and local derivatives.
    pub fn custom(&mut self, value: f64, inputs: &[(Var, f64)]) -> Var {
        for &(p, local) in inputs {
            self.edges.push(Edge { parent: p.0, local });
        }
        self.push_node(value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.custom(v, &[(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.custom(v, &[(a, 1.0), (b, -1.0)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        self.custom(va * vb, &[(a, vb), (b, va)])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        self.custom(va / vb, &[(a, 1.0 / vb), (b, -va / (vb * vb))])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = c * self.value(a);
        self.custom(v, &[(a, c)])
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.custom(v, &[(a, 1.0)])
    }

    pub fn powi(&mut self, a: Var, n: i32) -> Var {
        let va = self.value(a);
        self.custom(va.powi(n), &[(a, n as f64 * va.powi(n - 1))])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let e = self.value(a).exp();
        self.custom(e, &[(a, e)])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let va = self.value(a);
        self.custom(va.ln(), &[(a, 1.0 / va)])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).tanh();
        self.custom(t, &[(a, 1.0 - t * t)])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        if va > 0.0 {
            self.custom(va, &[(a, 1.0)])
        } else {
            self.custom(0.0, &[(a, 0.0)])
        }
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let mut b = self.build();
        for &x in xs {
            b.linear(x, 1.0);
        }
        b.finish()
    }

    /// Numerically stable softmax (max-subtracted), one fused node per output.
    pub fn softmax(&mut self, logits: &[Var]) -> Vec<Var> {
        let vals = self.values_of(logits);
        let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = vals.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let alpha: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let mut out = Vec::with_capacity(logits.len());
        for i in 0..logits.len() {
            for (j, &s) in logits.iter().enumerate() {
                let delta = if i == j { 1.0 } else { 0.0 };
                self.edges.push(Edge {
                    parent: s.0,
                    local: alpha[i] * (delta - alpha[j]),
                });
            }
            out.push(self.push_node(alpha[i]));
        }
        out
    }

    /// Mean squared error against constant targets.
    pub fn mse(&mut self, preds: &[Var], targets: &[f64]) -> Result<Var> {
        if preds.len() != targets.len() || preds.is_empty() {
            return Err(Error::LengthMismatch(preds.len(), targets.len()));
        }
        let n = preds.len() as f64;
        let mut total = 0.0;
        for (&p, &t) in preds.iter().zip(targets) {
            let diff = self.value(p) - t;
            total += diff * diff;
            self.edges.push(Edge {
                parent: p.0,
                local: 2.0 * diff / n,
            });
        }
        Ok(self.push_node(total / n))
    }

    /// Fills every reachable gradient slot with d(loss)/d(node).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let top = loss.index();
        if top >= self.values.len() {
            return Err(Error::InvalidInput(format!(
                "node {top} is not on this tape"
            )));
        }
        self.grads.iter_mut().for_each(|g| *g = 0.0);
        self.grads[top] = 1.0;
        for i in (0..=top).rev() {
            let g = self.grads[i];
            let range = self.edge_range(i);
            for k in range {
                let Edge { parent, local } = self.edges[k];
                // parents must precede children; anything else is a cycle
                if parent as usize >= i {
                    return Err(Error::GraphCycle);
                }
                if g != 0.0 {
                    self.grads[parent as usize] += g * local;
                }
            }
        }
        Ok(())
    }
}

/// Accumulates `Σ c·x + Σ a·b + constant` into a single node.
pub struct NodeBuilder<'t> {
    tape: &'t mut Tape,
    value: f64,
}

impl NodeBuilder<'_> {
    pub fn linear(&mut self, x: Var, c: f64) -> &mut Self {
        self.value += c * self.tape.value(x);
        self.tape.edges.push(Edge {
            parent: x.0,
            local: c,
        });
        self
    }

    pub fn product(&mut self, a: Var, b: Var) -> &mut Self {
        let (va, vb) = (self.tape.value(a), self.tape.value(b));
        self.value += va * vb;
        self.tape.edges.push(Edge {
            parent: a.0,
            local: vb,
        });
        self.tape.edges.push(Edge {
            parent: b.0,
            local: va,
        });
        self
    }

    pub fn constant(&mut self, c: f64) -> &mut Self {
        self.value += c;
        self
    }

    pub fn finish(self) -> Var {
        let value = self.value;
        self.tape.push_node(value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named trainable tensors stored contiguously, with Adam moment buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    specs: Vec<ParamSpec>,
    values: Vec<f64>,
    grads: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// Where a [`ParamSet`] was bound on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bound {
    base: u32,
}

impl Bound {
    pub fn var(&self, offset: usize) -> Var {
        Var(self.base + offset as u32)
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor and returns its offset into the flat value vector.
    pub fn register(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        mut init: impl FnMut() -> f64,
    ) -> usize {
        let offset = self.values.len();
        let spec = ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
        };
        let n = spec.len();
        self.values.extend((0..n).map(|_| init()));
        self.grads.resize(offset + n, 0.0);
        self.m.resize(offset + n, 0.0);
        self.v.resize(offset + n, 0.0);
        self.specs.push(spec);
        offset
    }

    /// Registers a tensor initialised uniformly in `±sqrt(1/fan_in)`.
    pub fn register_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> usize {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        self.register(name, shape, || rng.random_range(-bound..=bound))
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        let s = self.specs.iter().find(|s| s.name == name)?;
        Some(&self.values[s.offset..s.offset + s.len()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.specs.iter().find(|s| s.name == name)?;
        let range = s.offset..s.offset + s.len();
        Some(&mut self.values[range])
    }

    /// Adds every parameter to the tape as a leaf, in storage order.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let base = tape.len() as u32;
        for &v in &self.values {
            tape.leaf(v);
        }
        Bound { base }
    }

    /// Adds the tape gradients of the bound leaves into the gradient buffer.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: Bound) {
        for (i, g) in self.grads.iter_mut().enumerate() {
            *g += tape.grad(bound.var(i));
        }
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// One bias-corrected Adam update followed by zeroing the gradients.
    pub fn adam_step(&mut self, lr: f64, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..self.values.len() {
            let g = self.grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            self.values[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            self.grads[i] = 0.0;
        }
    }

    /// Writes one line per tensor: `name,d0xd1x...,v0,v1,...`. Values use
    /// the shortest representation that parses back to the same bits.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.specs {
            let shape: Vec<String> = s.shape.iter().map(|d| d.to_string()).collect();
            write!(w, "{},{}", s.name, shape.join("x"))?;
            for v in &self.values[s.offset..s.offset + s.len()] {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the format written by [`ParamSet::save`]. Optimizer state starts fresh.
    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let mut out = ParamSet::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad =
                |what: &str| Error::InvalidInput(format!("parameter line {}: {what}", lineno + 1));
            let mut fields = line.split(',');
            let name = fields
                .next()
                .filter(|n| !n.is_empty())
                .ok_or_else(|| bad("missing name"))?;
            let shape: Vec<usize> = fields
                .next()
                .ok_or_else(|| bad("missing shape"))?
                .split('x')
                .map(|d| d.parse::<usize>().map_err(|_| bad("bad shape")))
                .collect::<Result<_>>()?;
            let vals: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|_| bad("bad value")))
                .collect::<Result<_>>()?;
            if vals.len() != shape.iter().product::<usize>() {
                return Err(bad("value count does not match shape"));
            }
            let mut it = vals.into_iter();
            out.register(name, &shape, || it.next().expect("count checked"));
        }
        Ok(out)
    }
}

/// A sequence of feature rows, `T × C`.
pub type Seq = Vec<Vec<Var>>;

/// Causal 1-D convolution with dilation. Kernel tap `r` reads `x[t - r·d]`;
/// taps before the start of the sequence read zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub kernel: usize,
    pub bias: usize,
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub dilation: usize,
}

impl ConvLayer {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        kernel_size: usize,
        in_channels: usize,
        out_channels: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        assert!(
            kernel_size >= 1 && dilation >= 1,
            "kernel size and dilation must be >= 1"
        );
        let fan_in = kernel_size * in_channels;
        let kernel = params.register_uniform(
            format!("{name}.kernel"),
            &[kernel_size, in_channels, out_channels],
            fan_in,
            rng,
        );
        let bias = params.register_uniform(format!("{name}.bias"), &[out_channels], fan_in, rng);
        Self {
            kernel,
            bias,
            kernel_size,
            in_channels,
            out_channels,
            dilation,
        }
    }

    /// Offset of weight `w[r][ci][co]`.
    pub fn weight_offset(&self, r: usize, ci: usize, co: usize) -> usize {
        self.kernel + (r * self.in_channels + ci) * self.out_channels + co
    }

    fn apply(&self, tape: &mut Tape, params: Bound, x: &[Vec<Var>], dilation: usize) -> Seq {
        let mut out = Vec::with_capacity(x.len());
        for t in 0..x.len() {
            let mut row = Vec::with_capacity(self.out_channels);
            for co in 0..self.out_channels {
                let mut node = tape.build();
                node.linear(params.var(self.bias + co), 1.0);
                for r in 0..self.kernel_size {
                    let Some(src) = t.checked_sub(r * dilation) else {
                        break;
                    };
                    for (ci, &xv) in x[src].iter().enumerate().take(self.in_channels) {
                        node.product(params.var(self.weight_offset(r, ci, co)), xv);
                    }
                }
                row.push(node.finish());
            }
            out.push(row);
        }
        out
    }
}

/// `y[t] = b + Σ_r w[r]·x[t−r]`, ignoring the layer's dilation.
pub fn causal_conv(tape: &mut Tape, params: Bound, layer: &ConvLayer, x: &[Vec<Var>]) -> Seq {
    layer.apply(tape, params, x, 1)
}

/// `y[t] = b + Σ_r w[r]·x[t−r·d]` with the layer's dilation `d`.
pub fn dilated_conv(tape: &mut Tape, params: Bound, layer: &ConvLayer, x: &[Vec<Var>]) -> Seq {
    layer.apply(tape, params, x, layer.dilation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseLayer {
    pub weights: usize,
    pub bias: usize,
    pub in_features: usize,
    pub out_features: usize,
}

impl DenseLayer {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        let weights = params.register_uniform(
            format!("{name}.weights"),
            &[in_features, out_features],
            in_features,
            rng,
        );
        let bias =
            params.register_uniform(format!("{name}.bias"), &[out_features], in_features, rng);
        Self {
            weights,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn weight_offset(&self, i: usize, o: usize) -> usize {
        self.weights + i * self.out_features + o
    }
}

/// `x · W + b`.
pub fn dense(tape: &mut Tape, params: Bound, layer: &DenseLayer, x: &[Var]) -> Result<Vec<Var>> {
    if x.len() != layer.in_features {
        return Err(Error::LengthMismatch(x.len(), layer.in_features));
    }
    Ok((0..layer.out_features)
        .map(|o| {
            let mut node = tape.build();
            node.linear(params.var(layer.bias + o), 1.0);
            for (i, &xi) in x.iter().enumerate() {
                node.product(xi, params.var(layer.weight_offset(i, o)));
            }
            node.finish()
        })
        .collect())
}

pub fn relu_seq(tape: &mut Tape, x: &[Vec<Var>]) -> Seq {
    x.iter()
        .map(|row| row.iter().map(|&v| tape.relu(v)).collect())
        .collect()
}

/// Residual block: two dilated convolutions with ReLU, plus an identity or
/// 1×1-projected skip path, followed by a final ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcnBlock {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub projection: Option<ConvLayer>,
}

impl TcnBlock {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        channels: usize,
        kernel_size: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        let conv1 = ConvLayer::new(
            params,
            &format!("{name}.conv1"),
            kernel_size,
            in_channels,
            channels,
            dilation,
            rng,
        );
        let conv2 = ConvLayer::new(
            params,
            &format!("{name}.conv2"),
            kernel_size,
            channels,
            channels,
            dilation,
            rng,
        );
        let projection = (in_channels != channels).then(|| {
            ConvLayer::new(
                params,
                &format!("{name}.proj"),
                1,
                in_channels,
                channels,
                1,
                rng,
            )
        });
        Self {
            conv1,
            conv2,
            projection,
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: Bound, x: &[Vec<Var>]) -> Seq {
        let h = dilated_conv(tape, params, &self.conv1, x);
        let h = relu_seq(tape, &h);
        let h = dilated_conv(tape, params, &self.conv2, &h);
        let h = relu_seq(tape, &h);
        let skip = match &self.projection {
            Some(p) => causal_conv(tape, params, p, x),
            None => x.to_vec(),
        };
        h.iter()
            .zip(&skip)
            .map(|(hr, sr)| {
                hr.iter()
                    .zip(sr)
                    .map(|(&a, &b)| {
                        let s = tape.add(a, b);
                        tape.relu(s)
                    })
                    .collect()
            })
            .collect()
    }
}

/// A stack of residual blocks with the given dilations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tcn {
    pub blocks: Vec<TcnBlock>,
}

impl Tcn {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        channels: usize,
        kernel_size: usize,
        dilations: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut width = in_channels;
        let blocks = dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let b = TcnBlock::new(
                    params,
                    &format!("{name}.block{i}"),
                    width,
                    channels,
                    kernel_size,
                    d,
                    rng,
                );
                width = channels;
                b
            })
            .collect();
        Self { blocks }
    }

    pub fn forward(&self, tape: &mut Tape, params: Bound, x: &[Vec<Var>]) -> Seq {
        let mut h = x.to_vec();
        for b in &self.blocks {
            h = b.forward(tape, params, &h);
        }
        h
    }
}

/// Output of [`attention_fuse`]: the fused feature vector and the weights
/// given to each key row (cost rows first, then term rows).
#[derive(Debug, Clone)]
pub struct Fusion {
    pub output: Vec<Var>,
    pub weights: Vec<Var>,
}

/// Dot-product attention over the concatenated rows of both branches.
///
/// Keys and values are the rows of `x1` followed by the rows of `x2`; the
/// query is the last row of `x1`. Scores are raw (unscaled) dot products.
pub fn attention_fuse(tape: &mut Tape, x1: &[Vec<Var>], x2: &[Vec<Var>]) -> Result<Fusion> {
    let query = x1
        .last()
        .ok_or_else(|| Error::InvalidInput("attention needs at least one query row".into()))?
        .clone();
    if x2.is_empty() {
        return Err(Error::InvalidInput(
            "attention needs at least one row in the second input".into(),
        ));
    }
    let width = query.len();
    if let Some(bad) = x1.iter().chain(x2).find(|r| r.len() != width) {
        return Err(Error::LengthMismatch(bad.len(), width));
    }
    let keys: Vec<&Vec<Var>> = x1.iter().chain(x2).collect();
    let scores: Vec<Var> = keys
        .iter()
        .map(|k| {
            let mut node = tape.build();
            for (&q, &kv) in query.iter().zip(k.iter()) {
                node.product(q, kv);
            }
            node.finish()
        })
        .collect();
    let weights = tape.softmax(&scores);
    let output = (0..width)
        .map(|f| {
            let mut node = tape.build();
            for (&a, k) in weights.iter().zip(&keys) {
                node.product(a, k[f]);
            }
            node.finish()
        })
        .collect();
    Ok(Fusion { output, weights })
}

/// Wraps constant rows as tape leaves.
pub fn leaves(tape: &mut Tape, rows: &[Vec<f64>]) -> Seq {
    rows.iter()
        .map(|r| r.iter().map(|&v| tape.leaf(v)).collect())
        .collect()
}
