use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use spectranet_autodiff::{
    conv_output_len, BatchNormMode, BatchStats, Checkpoint, Conv2dSpec, Real, Tape, Tensor, Var,
};

use super::params::{Layout, ParameterVector};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub stem_kernel: (usize, usize),
    pub stem_stride: (usize, usize),
    pub stem_padding: (usize, usize),
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub dropout_rate: f64,
    pub n_classes: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_height: 64,
            input_width: 336,
            stem_kernel: (7, 49),
            stem_stride: (2, 12),
            stem_padding: (3, 24),
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: vec![2, 2, 2],
            dropout_rate: 0.10,
            n_classes: 9,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

/// Largest dropout rate accepted by [`BackboneConfig::validate`].
pub const MAX_DROPOUT: f64 = 0.20;

impl BackboneConfig {
    /// Full-size 200 x 1340 input.
    pub fn full_size(n_classes: usize) -> Self {
        Self {
            input_height: 200,
            input_width: 1340,
            n_classes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_DROPOUT).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, {MAX_DROPOUT}]",
                self.dropout_rate
            )));
        }
        if self.stage_widths.is_empty() || self.stage_widths.len() != self.blocks_per_stage.len() {
            return Err(Error::Config(
                "stage_widths and blocks_per_stage must be nonempty and the same length".into(),
            ));
        }
        if self.stage_widths.iter().chain(&self.blocks_per_stage).any(|&v| v == 0) {
            return Err(Error::Config("stage widths and block counts must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn_eps must be > 0 and bn_momentum in [0, 1]".into()));
        }
        self.stem_output()?;
        Ok(())
    }

    /// Spatial size after the stem convolution.
    pub fn stem_output(&self) -> Result<(usize, usize)> {
        Ok((
            conv_output_len(self.input_height, self.stem_kernel.0, self.stem_stride.0, self.stem_padding.0)?,
            conv_output_len(self.input_width, self.stem_kernel.1, self.stem_stride.1, self.stem_padding.1)?,
        ))
    }

    fn blocks(&self) -> Vec<BlockPlan> {
        let mut out = Vec::new();
        let mut cin = self.stage_widths[0];
        for (s, (&w, &n)) in self.stage_widths.iter().zip(&self.blocks_per_stage).enumerate() {
            for b in 0..n {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                out.push(BlockPlan {
                    name: format!("stage{s}.block{b}"),
                    cin,
                    cout: w,
                    stride,
                });
                cin = w;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct BlockPlan {
    name: String,
    cin: usize,
    cout: usize,
    stride: usize,
}

impl BlockPlan {
    fn projection(&self) -> bool {
        self.stride != 1 || self.cin != self.cout
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch statistics (returned for the running update), dropout on.
    Train,
    /// Running statistics, dropout off.
    Eval,
    /// Running statistics, dropout on.
    McInfer,
    /// Batch statistics, dropout off; used to re-estimate running statistics.
    Refresh,
}

impl Mode {
    fn batch_stats(self) -> bool {
        matches!(self, Mode::Train | Mode::Refresh)
    }

    fn dropout(self) -> bool {
        matches!(self, Mode::Train | Mode::McInfer)
    }
}

/// Provenance of the batch-norm running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnStatus {
    /// Tracked by exponential averaging during training.
    Tracked,
    /// Recomputed for the current weights.
    Refreshed,
    /// The weights were replaced after the statistics were computed.
    Stale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnBuffers {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Result of recording a forward pass on a tape.
pub struct Forward {
    pub logits: Var,
    /// One variable per trainable tensor, in layout order.
    pub params: Vec<Var>,
    /// Batch statistics per normalization layer (batch-statistics modes only).
    pub batch_stats: Vec<BatchStats>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: BackboneConfig,
    layout: Arc<Layout>,
    params: Vec<Tensor<f32>>,
    bn: Vec<BnBuffers>,
    bn_status: BnStatus,
}

struct Builder<R> {
    names: Vec<(String, Vec<usize>)>,
    params: Vec<Tensor<f32>>,
    bn: Vec<BnBuffers>,
    rng: R,
}

impl<R: Rng> Builder<R> {
    fn normal(&mut self, name: String, shape: Vec<usize>, std: f64) {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect();
        self.push(name, shape, data);
    }

    fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<f32>) {
        self.params.push(Tensor::new(shape.clone(), data).expect("shape matches data"));
        self.names.push((name, shape));
    }

    fn conv(&mut self, name: String, cout: usize, cin: usize, kh: usize, kw: usize) {
        let fan_in = (cin * kh * kw) as f64;
        self.normal(name, vec![cout, cin, kh, kw], (2.0 / fan_in).sqrt());
    }

    fn bn(&mut self, prefix: String, c: usize) {
        self.push(format!("{prefix}.gamma"), vec![c], vec![1.0; c]);
        self.push(format!("{prefix}.beta"), vec![c], vec![0.0; c]);
        self.bn.push(BnBuffers {
            name: prefix,
            mean: vec![0.0; c],
            var: vec![1.0; c],
        });
    }
}

/// Subtract each frame's mean and divide by its standard deviation.
pub fn standardize<T: Real>(frames: &Tensor<f32>) -> Result<Tensor<T>> {
    let (n, _, _, _) = frames.dims4()?;
    let per = frames.len() / n.max(1);
    let mut out = Vec::with_capacity(frames.len());
    for f in frames.data().chunks(per) {
        let mean = f.iter().map(|&v| v as f64).sum::<f64>() / per as f64;
        let var = f.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / per as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        out.extend(f.iter().map(|&v| T::from_f64((v as f64 - mean) / sd)));
    }
    Ok(Tensor::new(frames.shape().to_vec(), out)?)
}

impl Model {
    /// Wide-stem residual classifier with He-normal fan-in initialization.
    pub fn build(config: &BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            names: Vec::new(),
            params: Vec::new(),
            bn: Vec::new(),
            rng: rng_from_seed(seed),
        };
        let w0 = config.stage_widths[0];
        b.conv("stem.conv.weight".into(), w0, 1, config.stem_kernel.0, config.stem_kernel.1);
        b.bn("stem.bn".into(), w0);
        for blk in config.blocks() {
            let n = &blk.name;
            b.conv(format!("{n}.conv1.weight"), blk.cout, blk.cin, 3, 3);
            b.bn(format!("{n}.bn1"), blk.cout);
            b.conv(format!("{n}.conv2.weight"), blk.cout, blk.cout, 3, 3);
            b.bn(format!("{n}.bn2"), blk.cout);
            if blk.projection() {
                b.conv(format!("{n}.proj.weight"), blk.cout, blk.cin, 1, 1);
                b.bn(format!("{n}.proj_bn"), blk.cout);
            }
        }
        let last = *config.stage_widths.last().expect("validated nonempty");
        b.normal("head.weight".into(), vec![config.n_classes, last], (1.0 / last as f64).sqrt());
        b.push("head.bias".into(), vec![config.n_classes], vec![0.0; config.n_classes]);
        let layout = Layout::from_shapes(b.names.iter().map(|(n, s)| (n.as_str(), s.as_slice())));
        Ok(Self {
            config: config.clone(),
            layout: Arc::new(layout),
            params: b.params,
            bn: b.bn,
            bn_status: BnStatus::Tracked,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn params(&self) -> &[Tensor<f32>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    pub fn bn_buffers(&self) -> &[BnBuffers] {
        &self.bn
    }

    pub fn bn_status(&self) -> BnStatus {
        self.bn_status
    }

    /// Record a forward pass. Trainable tensors become gradient-tracked
    /// leaves when `grads` is set, constants otherwise.
    pub fn forward_on<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        frames: &Tensor<f32>,
        mode: Mode,
        grads: bool,
        rng: &mut R,
    ) -> Result<Forward> {
        let (n, c, h, w) = frames.dims4()?;
        if (c, h, w) != (1, self.config.input_height, self.config.input_width) {
            return Err(Error::Data(format!(
                "model expects frames of 1x{}x{}, got {c}x{h}x{w}",
                self.config.input_height, self.config.input_width
            )));
        }
        if n == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|t| if grads { tape.param(t.cast()) } else { tape.input(t.cast()) })
            .collect();
        let x = tape.input(standardize(frames)?);
        let mut st = Walk {
            model: self,
            params: &params,
            next_param: 0,
            next_bn: 0,
            mode,
            stats: Vec::new(),
        };
        let cfg = &self.config;
        let stem = Conv2dSpec::new(cfg.stem_stride, cfg.stem_padding);
        let mut h = st.conv(tape, x, stem)?;
        h = st.bn(tape, h)?;
        h = tape.relu(h);
        let rate = if mode.dropout() { cfg.dropout_rate } else { 0.0 };
        for blk in cfg.blocks() {
            let spec = Conv2dSpec::new((blk.stride, blk.stride), (1, 1));
            let mut y = st.conv(tape, h, spec)?;
            y = st.bn(tape, y)?;
            y = tape.relu(y);
            y = st.conv(tape, y, Conv2dSpec::new((1, 1), (1, 1)))?;
            y = st.bn(tape, y)?;
            let skip = if blk.projection() {
                let s = st.conv(tape, h, Conv2dSpec::new((blk.stride, blk.stride), (0, 0)))?;
                st.bn(tape, s)?
            } else {
                h
            };
            y = tape.add(y, skip)?;
            y = tape.relu(y);
            h = tape.dropout(y, rate, rng)?;
        }
        let pooled = tape.global_avg_pool(h)?;
        let (wv, bv) = (st.take(), st.take());
        let logits = tape.dense(pooled, wv, bv)?;
        debug_assert_eq!(st.next_param, params.len());
        let stats = std::mem::take(&mut st.stats);
        Ok(Forward {
            logits,
            params,
            batch_stats: stats,
        })
    }

    /// Logits `[n, classes]` of one batch, without gradient tracking.
    pub fn logits<R: Rng + ?Sized>(&self, frames: &Tensor<f32>, mode: Mode, rng: &mut R) -> Result<Tensor<f32>> {
        let mut tape = Tape::<f32>::new();
        let fwd = self.forward_on(&mut tape, frames, mode, false, rng)?;
        Ok(tape.value(fwd.logits).clone())
    }

    /// Exponential update of the running statistics from one training batch.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        if stats.len() != self.bn.len() {
            return Err(Error::Data(format!(
                "{} batch statistics for {} normalization layers",
                stats.len(),
                self.bn.len()
            )));
        }
        let m = self.config.bn_momentum;
        for (buf, s) in self.bn.iter_mut().zip(stats) {
            let unbias = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
            for ch in 0..buf.mean.len() {
                buf.mean[ch] = (1.0 - m) * buf.mean[ch] + m * s.mean[ch];
                buf.var[ch] = (1.0 - m) * buf.var[ch] + m * s.var[ch] * unbias;
            }
        }
        self.bn_status = BnStatus::Tracked;
        Ok(())
    }

    /// Overwrite the running statistics, marking them as refreshed.
    pub fn set_running_stats(&mut self, means: Vec<Vec<f64>>, vars: Vec<Vec<f64>>) -> Result<()> {
        if means.len() != self.bn.len() || vars.len() != self.bn.len() {
            return Err(Error::Data("running statistics do not match the normalization layers".into()));
        }
        for ((buf, m), v) in self.bn.iter_mut().zip(means).zip(vars) {
            if m.len() != buf.mean.len() || v.len() != buf.var.len() {
                return Err(Error::Data(format!("channel mismatch in `{}`", buf.name)));
            }
            buf.mean = m;
            buf.var = v.into_iter().map(|x| x.max(0.0)).collect();
        }
        self.bn_status = BnStatus::Refreshed;
        Ok(())
    }

    pub fn flatten(&self) -> ParameterVector {
        let values = self.params.iter().flat_map(|t| t.data().iter().map(|&v| v as f64)).collect();
        ParameterVector {
            layout: self.layout.clone(),
            values,
        }
    }

    /// Load weights from a flat vector. The normalization statistics no
    /// longer describe the new weights and are marked stale.
    pub fn unflatten(&mut self, pv: &ParameterVector) -> Result<()> {
        if !(Arc::ptr_eq(&pv.layout, &self.layout) || *pv.layout == *self.layout) {
            return Err(Error::Checkpoint("parameter layout does not match the model".into()));
        }
        for (t, e) in self.params.iter_mut().zip(&self.layout.entries) {
            let src = &pv.values[e.offset..e.offset + e.len()];
            for (d, &s) in t.data_mut().iter_mut().zip(src) {
                *d = s as f32;
            }
        }
        self.bn_status = BnStatus::Stale;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "backbone": self.config,
            "bn_status": self.bn_status,
        });
        let mut ck = Checkpoint::new(meta);
        for (t, e) in self.params.iter().zip(&self.layout.entries) {
            ck.push(e.name.clone(), t);
        }
        for b in &self.bn {
            let c = b.mean.len();
            ck.push(format!("{}.running_mean", b.name), &Tensor::new(vec![c], b.mean.clone()).expect("1-d"));
            ck.push(format!("{}.running_var", b.name), &Tensor::new(vec![c], b.var.clone()).expect("1-d"));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: BackboneConfig = serde_json::from_value(
            ck.meta
                .get("backbone")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("checkpoint has no backbone config".into()))?,
        )
        .map_err(|e| Error::Checkpoint(format!("backbone config: {e}")))?;
        let mut model = Self::build(&config, 0)?;
        for (t, e) in model.params.iter_mut().zip(&model.layout.entries) {
            let src = ck.require(&e.name)?;
            if src.shape() != e.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    e.name,
                    src.shape(),
                    e.shape
                )));
            }
            *t = src.clone();
        }
        for b in model.bn.iter_mut() {
            for (suffix, dst) in [("running_mean", &mut b.mean), ("running_var", &mut b.var)] {
                let src = ck.require(&format!("{}.{suffix}", b.name))?;
                if src.len() != dst.len() {
                    return Err(Error::Checkpoint(format!("`{}.{suffix}` has the wrong length", b.name)));
                }
                *dst = src.data().iter().map(|&v| v as f64).collect();
            }
        }
        model.bn_status = ck
            .meta
            .get("bn_status")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .unwrap_or(BnStatus::Tracked);
        Ok(model)
    }
}

struct Walk<'a> {
    model: &'a Model,
    params: &'a [Var],
    next_param: usize,
    next_bn: usize,
    mode: Mode,
    stats: Vec<BatchStats>,
}

impl Walk<'_> {
    fn take(&mut self) -> Var {
        let v = self.params[self.next_param];
        self.next_param += 1;
        v
    }

    fn conv<T: Real>(&mut self, tape: &mut Tape<T>, x: Var, spec: Conv2dSpec) -> Result<Var> {
        let k = self.take();
        Ok(tape.conv2d(x, k, spec)?)
    }

    fn bn<T: Real>(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let (g, b) = (self.take(), self.take());
        let buf = &self.model.bn[self.next_bn];
        self.next_bn += 1;
        let eps = self.model.config.bn_eps;
        let mode = if self.mode.batch_stats() {
            BatchNormMode::Batch { eps }
        } else {
            BatchNormMode::Fixed {
                mean: &buf.mean,
                var: &buf.var,
                eps,
            }
        };
        let (y, stats) = tape.batch_norm(x, g, b, mode)?;
        self.stats.extend(stats);
        Ok(y)
    }
}
