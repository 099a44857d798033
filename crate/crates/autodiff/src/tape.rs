//! Explicit reverse-mode tape.
//!
//! Every primitive appends one node holding its forward value plus whatever
//! it needs for the backward pass. Nodes are appended in evaluation order, so
//! the node vector is already a topological order and [`Tape::backward`] is a
//! single reverse sweep. A tape is built for one batch and then dropped.

use rand::Rng;

use crate::error::{AutodiffError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Stride and zero padding of a 2-D convolution, as `(rows, cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dSpec {
    pub fn new(stride: (usize, usize), padding: (usize, usize)) -> Self {
        Self { stride, padding }
    }
}

/// `floor((input + 2 * padding - kernel) / stride) + 1`, or a shape error
/// when the padded input is smaller than the kernel.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(AutodiffError::Config("convolution stride must be >= 1".into()));
    }
    if kernel == 0 {
        return Err(AutodiffError::Shape("convolution kernel extent must be >= 1".into()));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(AutodiffError::Shape(format!(
            "padded input extent {padded} is smaller than kernel extent {kernel}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Which statistics a batch normalization node normalizes with.
#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a> {
    /// Normalize with the statistics of the current batch.
    Batch { eps: f64 },
    /// Normalize with externally supplied (running) statistics.
    Fixed { mean: &'a [f64], var: &'a [f64], eps: f64 },
}

/// Per-channel statistics of a batch, returned by batch-mode normalization so
/// the caller can update running buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (divide by `count`) variance.
    pub var: Vec<f64>,
    /// Elements per channel, `n * h * w`.
    pub count: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    sy: usize,
    sx: usize,
    py: usize,
    px: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Range of output columns whose tap `kj` lands inside the input row.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = if self.px > kj { (self.px - kj).div_ceil(self.sx) } else { 0 };
        let hi = if self.w + self.px > kj {
            (self.w + self.px - kj).div_ceil(self.sx).min(self.ow)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

fn im2col<T: Real>(src: &[T], g: &ConvGeom, dst: &mut [T]) {
    let p = g.positions();
    for c in 0..g.cin {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * p;
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.oh {
                    let out = &mut dst[row + oy * g.ow..row + (oy + 1) * g.ow];
                    let iy = (oy * g.sy + ki) as isize - g.py as isize;
                    if iy < 0 || iy as usize >= g.h {
                        out.fill(T::zero());
                        continue;
                    }
                    let line = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    let base = kj as isize - g.px as isize;
                    if g.sx == 1 {
                        let start = (lo as isize + base) as usize;
                        out[lo..hi].copy_from_slice(&line[start..start + (hi - lo)]);
                    } else {
                        for (ox, o) in out[lo..hi].iter_mut().enumerate() {
                            *o = line[(ox + lo) * g.sx + kj - g.px];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dst: &mut [T]) {
    let p = g.positions();
    for c in 0..g.cin {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * p;
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.oh {
                    let iy = (oy * g.sy + ki) as isize - g.py as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    let src = &cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in lo..hi {
                        let ix = (ox * g.sx + kj) - g.px;
                        line[ix] = line[ix] + src[ox];
                    }
                }
            }
        }
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
        /// im2col buffers for every sample, kept only when the kernel needs a gradient.
        cols: Vec<T>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<f64>,
        batch: bool,
    },
    Relu {
        input: Var,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    GlobalAvgPool {
        input: Var,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    SoftmaxXent {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// A single-use record of primitive operations.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Trainable leaf; its gradient is available after [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Cross-correlation of an NCHW batch with a `[cout, cin, kh, kw]` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, spec: Conv2dSpec) -> Result<Var> {
        let (n, cin, h, w) = self.value(input).dims4()?;
        let (cout, kcin, kh, kw) = self.value(kernel).dims4()?;
        if kcin != cin {
            return Err(AutodiffError::Shape(format!(
                "kernel expects {kcin} input channels, input has {cin}"
            )));
        }
        let (sy, sx) = spec.stride;
        let (py, px) = spec.padding;
        let oh = conv_output_len(h, kh, sy, py)?;
        let ow = conv_output_len(w, kw, sx, px)?;
        let geom = ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            sy,
            sx,
            py,
            px,
            oh,
            ow,
        };
        let k = geom.patch_len();
        let p = geom.positions();
        let keep_cols = self.needs(kernel);
        let mut cols = vec![T::zero(); if keep_cols { n * k * p } else { k * p }];
        let mut out = vec![T::zero(); n * cout * p];
        {
            let x = self.value(input).data();
            let wt = self.value(kernel).data();
            for s in 0..n {
                let buf = if keep_cols { &mut cols[s * k * p..(s + 1) * k * p] } else { &mut cols[..] };
                im2col(&x[s * cin * h * w..(s + 1) * cin * h * w], &geom, buf);
                T::gemm(false, false, cout, p, k, T::one(), wt, buf, T::zero(), &mut out[s * cout * p..(s + 1) * cout * p]);
            }
        }
        if !keep_cols {
            cols = Vec::new();
        }
        let requires = self.needs(input) || self.needs(kernel);
        let value = Tensor::new(vec![n, cout, oh, ow], out)?;
        Ok(self.push(
            value,
            requires,
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            },
        ))
    }

    /// Per-channel normalization of an NCHW batch followed by the affine map
    /// `gamma * xhat + beta`. Batch mode returns the batch statistics.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (n, c, h, w) = self.value(input).dims4()?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).len() != c {
                return Err(AutodiffError::Shape(format!(
                    "batch norm {name} has {} entries for {c} channels",
                    self.value(v).len()
                )));
            }
        }
        let hw = h * w;
        let count = n * hw;
        let x = self.value(input).data();
        let (mean, var, eps, batch) = match mode {
            BatchNormMode::Batch { eps } => {
                if n < 2 {
                    return Err(AutodiffError::Config(
                        "batch normalization in batch-statistics mode needs a batch of at least 2".into(),
                    ));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut sum = 0.0;
                    for s in 0..n {
                        sum += x[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    let mu = sum / count as f64;
                    let mut sq = 0.0;
                    for s in 0..n {
                        for v in &x[(s * c + ch) * hw..(s * c + ch + 1) * hw] {
                            let d = v.as_f64() - mu;
                            sq += d * d;
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = sq / count as f64;
                }
                (mean, var, eps, true)
            }
            BatchNormMode::Fixed { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(AutodiffError::Shape(format!(
                        "running statistics have {}/{} entries for {c} channels",
                        mean.len(),
                        var.len()
                    )));
                }
                (mean.to_vec(), var.to_vec(), eps, false)
            }
        };
        if eps <= 0.0 {
            return Err(AutodiffError::Config("batch norm epsilon must be positive".into()));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v.max(0.0) + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * hw;
                let (mu, is) = (mean[ch], inv_std[ch]);
                let (gc, bc) = (g[ch].as_f64(), b[ch].as_f64());
                for i in off..off + hw {
                    let xh = (x[i].as_f64() - mu) * is;
                    xhat[i] = T::from_f64(xh);
                    out[i] = T::from_f64(gc * xh + bc);
                }
            }
        }
        let requires = self.needs(input) || self.needs(gamma) || self.needs(beta);
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let stats = batch.then(|| BatchStats {
            mean,
            var,
            count,
        });
        let var_out = self.push(
            value,
            requires,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat: if requires { xhat } else { Vec::new() },
                inv_std,
                batch,
            },
        );
        Ok((var_out, stats))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let src = self.value(input);
        let out: Vec<T> = src.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let value = Tensor::new(src.shape().to_vec(), out).expect("relu preserves shape");
        let requires = self.needs(input);
        self.push(value, requires, Op::Relu { input })
    }

    /// Elementwise sum of two tensors of identical shape (residual join).
    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(AutodiffError::Shape(format!(
                "cannot add shapes {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let out: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(a.shape().to_vec(), out)?;
        let requires = self.needs(lhs) || self.needs(rhs);
        Ok(self.push(value, requires, Op::Add { lhs, rhs }))
    }

    /// NCHW -> NC mean over the spatial extent.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let hw = h * w;
        let x = self.value(input).data();
        let out: Vec<T> = (0..n * c)
            .map(|i| T::from_f64(x[i * hw..(i + 1) * hw].iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64))
            .collect();
        let value = Tensor::new(vec![n, c], out)?;
        let requires = self.needs(input);
        Ok(self.push(value, requires, Op::GlobalAvgPool { input }))
    }

    /// `x W^T + b` for `x: [n, in]`, `W: [out, in]`, `b: [out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, fin) = self.value(input).dims2()?;
        let (fout, win) = self.value(weight).dims2()?;
        if win != fin {
            return Err(AutodiffError::Shape(format!(
                "dense weight expects {win} inputs, got {fin}"
            )));
        }
        if self.value(bias).len() != fout {
            return Err(AutodiffError::Shape(format!(
                "dense bias has {} entries for {fout} outputs",
                self.value(bias).len()
            )));
        }
        let mut out = vec![T::zero(); n * fout];
        T::gemm(
            false,
            true,
            n,
            fout,
            fin,
            T::one(),
            self.value(input).data(),
            self.value(weight).data(),
            T::zero(),
            &mut out,
        );
        let b = self.value(bias).data();
        for row in out.chunks_mut(fout) {
            for (o, &bb) in row.iter_mut().zip(b) {
                *o = *o + bb;
            }
        }
        let value = Tensor::new(vec![n, fout], out)?;
        let requires = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(value, requires, Op::Dense { input, weight, bias }))
    }

    /// Inverted dropout: each element is zeroed with probability `rate` and
    /// survivors are scaled by `1 / (1 - rate)`. A rate of 0 returns `input`
    /// unchanged without recording a node.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(input);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let src = self.value(input);
        let mask: Vec<T> = (0..src.len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let out: Vec<T> = src.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::new(src.shape().to_vec(), out)?;
        let requires = self.needs(input);
        Ok(self.push(value, requires, Op::Dropout { input, mask }))
    }

    /// Mean softmax cross-entropy of `[n, classes]` logits against labels.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.value(logits).dims2()?;
        if labels.len() != n {
            return Err(AutodiffError::Data(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(AutodiffError::Data(format!("label {bad} out of range for {c} classes")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &z[i * c..(i + 1) * c];
            let lse = log_sum_exp(row);
            for (j, &v) in row.iter().enumerate() {
                probs[i * c + j] = (v.as_f64() - lse).exp();
            }
            loss += lse - row[label].as_f64();
        }
        loss /= n as f64;
        let requires = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(T::from_f64(loss)),
            requires,
            Op::SoftmaxXent {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar root. Returns the number of nodes visited;
    /// each node carrying a gradient is visited exactly once.
    pub fn backward(&mut self, root: Var) -> Result<usize> {
        if self.value(root).len() != 1 {
            return Err(AutodiffError::Shape(format!(
                "backward root must be a scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        self.backward_seeded(root, vec![T::one()])
    }

    /// Reverse sweep seeded with an arbitrary cotangent of `root`'s shape
    /// (a vector-Jacobian product).
    pub fn backward_seeded(&mut self, root: Var, cotangent: Vec<T>) -> Result<usize> {
        if cotangent.len() != self.value(root).len() {
            return Err(AutodiffError::Shape(format!(
                "cotangent has {} entries for a value of {}",
                cotangent.len(),
                self.value(root).len()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.needs(root) {
            return Ok(0);
        }
        self.nodes[root.0].grad = Some(cotangent);
        let mut visited = 0;
        for i in (0..=root.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            visited += 1;
            let contributions = self.node_backward(i, &g);
            self.nodes[i].grad = Some(g);
            for (target, delta) in contributions {
                self.accumulate(target, delta);
            }
        }
        Ok(visited)
    }

    fn accumulate(&mut self, target: Var, delta: Vec<T>) {
        let node = &mut self.nodes[target.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (a, d) in g.iter_mut().zip(delta) {
                    *a = *a + d;
                }
            }
            None => node.grad = Some(delta),
        }
    }

    fn node_backward(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let mut out = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            } => {
                let k = geom.patch_len();
                let p = geom.positions();
                let in_len = geom.cin * geom.h * geom.w;
                if self.needs(*kernel) {
                    let mut dk = vec![T::zero(); geom.cout * k];
                    for s in 0..geom.n {
                        T::gemm(
                            false,
                            true,
                            geom.cout,
                            k,
                            p,
                            T::one(),
                            &g[s * geom.cout * p..(s + 1) * geom.cout * p],
                            &cols[s * k * p..(s + 1) * k * p],
                            T::one(),
                            &mut dk,
                        );
                    }
                    out.push((*kernel, dk));
                }
                if self.needs(*input) {
                    let wt = self.value(*kernel).data();
                    let mut dx = vec![T::zero(); geom.n * in_len];
                    let mut dcols = vec![T::zero(); k * p];
                    for s in 0..geom.n {
                        T::gemm(
                            true,
                            false,
                            k,
                            p,
                            geom.cout,
                            T::one(),
                            wt,
                            &g[s * geom.cout * p..(s + 1) * geom.cout * p],
                            T::zero(),
                            &mut dcols,
                        );
                        col2im(&dcols, geom, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                    out.push((*input, dx));
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch,
            } => {
                let (n, c, h, w) = self.value(*input).dims4().expect("recorded as NCHW");
                let hw = h * w;
                let m = (n * hw) as f64;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); g.len()];
                for ch in 0..c {
                    let mut sum_dy = 0.0;
                    let mut sum_dy_xhat = 0.0;
                    for s in 0..n {
                        let off = (s * c + ch) * hw;
                        for idx in off..off + hw {
                            let dy = g[idx].as_f64();
                            sum_dy += dy;
                            sum_dy_xhat += dy * xhat[idx].as_f64();
                        }
                    }
                    dgamma[ch] = T::from_f64(sum_dy_xhat);
                    dbeta[ch] = T::from_f64(sum_dy);
                    let scale = gam[ch].as_f64() * inv_std[ch];
                    for s in 0..n {
                        let off = (s * c + ch) * hw;
                        for idx in off..off + hw {
                            let dy = g[idx].as_f64();
                            let v = if *batch {
                                scale / m * (m * dy - sum_dy - xhat[idx].as_f64() * sum_dy_xhat)
                            } else {
                                scale * dy
                            };
                            dx[idx] = T::from_f64(v);
                        }
                    }
                }
                out.push((*input, dx));
                out.push((*gamma, dgamma));
                out.push((*beta, dbeta));
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let dx = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
                    .collect();
                out.push((*input, dx));
            }
            Op::Add { lhs, rhs } => {
                out.push((*lhs, g.to_vec()));
                out.push((*rhs, g.to_vec()));
            }
            Op::GlobalAvgPool { input } => {
                let (n, c, h, w) = self.value(*input).dims4().expect("recorded as NCHW");
                let hw = h * w;
                let inv = T::from_f64(1.0 / hw as f64);
                let mut dx = vec![T::zero(); n * c * hw];
                for (i, &d) in g.iter().enumerate() {
                    dx[i * hw..(i + 1) * hw].fill(d * inv);
                }
                out.push((*input, dx));
            }
            Op::Dense { input, weight, bias } => {
                let (n, fin) = self.value(*input).dims2().expect("recorded as rank 2");
                let fout = self.value(*bias).len();
                if self.needs(*input) {
                    let mut dx = vec![T::zero(); n * fin];
                    T::gemm(false, false, n, fin, fout, T::one(), g, self.value(*weight).data(), T::zero(), &mut dx);
                    out.push((*input, dx));
                }
                if self.needs(*weight) {
                    let mut dw = vec![T::zero(); fout * fin];
                    T::gemm(true, false, fout, fin, n, T::one(), g, self.value(*input).data(), T::zero(), &mut dw);
                    out.push((*weight, dw));
                }
                if self.needs(*bias) {
                    let mut db = vec![T::zero(); fout];
                    for row in g.chunks(fout) {
                        for (b, &d) in db.iter_mut().zip(row) {
                            *b = *b + d;
                        }
                    }
                    out.push((*bias, db));
                }
            }
            Op::Dropout { input, mask } => {
                let dx = g.iter().zip(mask).map(|(&d, &m)| d * m).collect();
                out.push((*input, dx));
            }
            Op::SoftmaxXent { logits, probs, labels } => {
                let n = labels.len();
                let c = probs.len() / n;
                let scale = g[0].as_f64() / n as f64;
                let mut dz: Vec<T> = probs.iter().map(|&p| T::from_f64(p * scale)).collect();
                for (i, &l) in labels.iter().enumerate() {
                    dz[i * c + l] = T::from_f64((probs[i * c + l] - 1.0) * scale);
                }
                out.push((*logits, dz));
            }
        }
        out
    }
}

fn log_sum_exp<T: Real>(row: &[T]) -> f64 {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln()
}

/// Row-wise numerically stable softmax of `[n, classes]` logits, in `f64`.
pub fn softmax_rows<T: Real>(logits: &[T], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let lse = log_sum_exp(row);
        out.extend(row.iter().map(|v| (v.as_f64() - lse).exp()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn identity_convolution_reproduces_input() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..2 * 3 * 4 * 5).map(|i| i as f64 * 0.25 - 3.0).collect();
        let x = tape.input(t(&[2, 3, 4, 5], data.clone()));
        let mut eye = vec![0.0; 9];
        for c in 0..3 {
            eye[c * 3 + c] = 1.0;
        }
        let k = tape.param(t(&[3, 3, 1, 1], eye));
        let y = tape.conv2d(x, k, Conv2dSpec::new((1, 1), (0, 0))).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn stem_geometry_of_full_size_frame() {
        assert_eq!(conv_output_len(200, 7, 2, 3).unwrap(), 100);
        assert_eq!(conv_output_len(1340, 49, 12, 24).unwrap(), 112);
        assert!(conv_output_len(10, 49, 12, 0).is_err());
        assert!(conv_output_len(10, 3, 0, 0).is_err());
    }

    #[test]
    fn strided_padded_conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, cin, h, w, cout, kh, kw) = (2, 2, 5, 7, 3, 3, 4);
        let (sy, sx, py, px) = (2, 3, 1, 2);
        let xd: Vec<f64> = (0..n * cin * h * w).map(|_| rng.random::<f64>() - 0.5).collect();
        let kd: Vec<f64> = (0..cout * cin * kh * kw).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut tape = Tape::<f64>::new();
        let x = tape.input(t(&[n, cin, h, w], xd.clone()));
        let k = tape.input(t(&[cout, cin, kh, kw], kd.clone()));
        let y = tape.conv2d(x, k, Conv2dSpec::new((sy, sx), (py, px))).unwrap();
        let (_, _, oh, ow) = tape.value(y).dims4().unwrap();
        assert_eq!((oh, ow), ((h + 2 * py - kh) / sy + 1, (w + 2 * px - kw) / sx + 1));
        for s in 0..n {
            for o in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for c in 0..cin {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (oy * sy + i) as isize - py as isize;
                                    let ix = (ox * sx + j) as isize - px as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += xd[((s * cin + c) * h + iy as usize) * w + ix as usize]
                                            * kd[((o * cin + c) * kh + i) * kw + j];
                                    }
                                }
                            }
                        }
                        let got = tape.value(y).data()[((s * cout + o) * oh + oy) * ow + ox];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn batch_norm_needs_two_samples_in_batch_mode() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(t(&[1, 2, 2, 2], vec![1.0; 8]));
        let g = tape.param(t(&[2], vec![1.0; 2]));
        let b = tape.param(t(&[2], vec![0.0; 2]));
        let err = tape.batch_norm(x, g, b, BatchNormMode::Batch { eps: 1e-5 }).unwrap_err();
        assert!(matches!(err, AutodiffError::Config(_)));
    }

    #[test]
    fn batch_norm_of_standardized_input_is_near_identity() {
        // two samples of +-1 per channel: zero mean, unit biased variance
        let data = vec![1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0];
        let mut tape = Tape::<f64>::new();
        let x = tape.input(t(&[2, 1, 2, 2], data.clone()));
        let g = tape.param(t(&[1], vec![1.0]));
        let b = tape.param(t(&[1], vec![0.0]));
        let (y, stats) = tape.batch_norm(x, g, b, BatchNormMode::Batch { eps: 1e-6 }).unwrap();
        let stats = stats.unwrap();
        assert_eq!(stats.count, 8);
        assert!(stats.mean[0].abs() < 1e-15);
        assert!((stats.var[0] - 1.0).abs() < 1e-15);
        for (a, b) in tape.value(y).data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_norm_fixed_mode_is_the_affine_map() {
        let (mean, var, eps) = ([0.5, -2.0], [4.0, 0.25], 1e-5);
        let data: Vec<f64> = (0..2 * 2 * 3).map(|i| i as f64 * 0.7 - 1.0).collect();
        let mut tape = Tape::<f64>::new();
        let x = tape.input(t(&[1, 2, 2, 3], data.clone()));
        let g = tape.param(t(&[2], vec![1.5, -0.5]));
        let b = tape.param(t(&[2], vec![0.1, 0.2]));
        let (y, stats) = tape
            .batch_norm(x, g, b, BatchNormMode::Fixed { mean: &mean, var: &var, eps })
            .unwrap();
        assert!(stats.is_none());
        for (i, got) in tape.value(y).data().iter().enumerate() {
            let ch = i / 6;
            let gamma = [1.5, -0.5][ch];
            let beta = [0.1, 0.2][ch];
            let want = gamma * (data[i] - mean[ch]) / (var[ch] + eps).sqrt() + beta;
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_rate_zero_is_identity_without_a_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::full(vec![4, 4], 2.0));
        let before = tape.len();
        let y = tape.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(x, y);
        assert_eq!(tape.len(), before);
        assert!(tape.dropout(x, 1.0, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_the_mean() {
        let n = 100_000;
        let rate = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::full(vec![n], 1.0));
        let y = tape.dropout(x, rate, &mut rng).unwrap();
        let mean = tape.value(y).data().iter().sum::<f64>() / n as f64;
        // per-element sd of the inverted mask is sqrt(rate / (1 - rate))
        let sigma = (rate / (1.0 - rate)).sqrt() / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}, sigma {sigma}");
    }

    #[test]
    fn cross_entropy_limits() {
        let mut tape = Tape::<f64>::new();
        let z = tape.param(Tensor::zeros(vec![3, 9]));
        let loss = tape.softmax_xent(z, &[0, 4, 8]).unwrap();
        assert!((tape.value(loss).data()[0] - 9f64.ln()).abs() < 1e-12);

        let mut sharp = vec![0.0; 9];
        sharp[2] = 1e4;
        let z = tape.param(t(&[1, 9], sharp));
        let loss = tape.softmax_xent(z, &[2]).unwrap();
        assert!(tape.value(loss).data()[0] < 1e-12);

        assert!(matches!(tape.softmax_xent(z, &[9]), Err(AutodiffError::Data(_))));
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let logits = [3.0f32, -1.0, 0.5, 800.0, 799.0, -800.0];
        let p = softmax_rows(&logits, 3);
        for row in p.chunks(3) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_visits_each_node_once() {
        for len in [1usize, 5, 40] {
            let mut tape = Tape::<f64>::new();
            let mut v = tape.param(t(&[1, 3], vec![0.3, 0.2, 0.1]));
            for _ in 0..len {
                v = tape.relu(v);
            }
            let loss = tape.softmax_xent(v, &[1]).unwrap();
            let visited = tape.backward(loss).unwrap();
            assert_eq!(visited, tape.len());
            assert_eq!(visited, len + 2);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(t(&[1, 2], vec![1.0, 2.0]));
        let w = tape.param(t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let b = tape.param(t(&[2], vec![0.0, 0.0]));
        let y = tape.dense(x, w, b).unwrap();
        let loss = tape.softmax_xent(y, &[0]).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).is_none());
        assert!(tape.grad(w).is_some());
    }
}
