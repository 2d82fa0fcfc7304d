//! The ranking CNN with sector embedding, its training protocol, scoring and
//! the performance-weighted ensemble.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Sample, StandardizedPanel};
use crate::losses::{batch_loss, LossError, LossKind, Target};
use crate::market_data::SECTOR_COUNT;
use crate::nn::{
    self, conv1d_valid, conv1d_valid_backward, dense, dense_backward, dropout, dropout_backward,
    global_avg_pool, global_avg_pool_backward, leaky_relu, leaky_relu_backward, softmax,
    softmax_backward, Adam, BatchNorm, BnCache, EarlyStop, Mode, NnError, Plateau, StopDecision,
    Tensor,
};

pub const EMBEDDING_INIT_LIMIT: f64 = 0.05;
/// Number of most recent test periods used for mixture-of-experts weights.
pub const MOE_WINDOW: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("sector id {0} outside [0, 11]")]
    SectorOutOfRange(u8),
    #[error("empty {0} sample set")]
    EmptySamples(&'static str),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub m: usize,
    pub n: usize,
    pub conv: Vec<ConvSpec>,
    pub dense: Vec<usize>,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub loss: LossKind,
}

/// Dropout rate used with each loss.
pub fn default_dropout(kind: LossKind) -> f64 {
    match kind {
        LossKind::ReturnWeighted => 0.35,
        LossKind::CrossEntropy | LossKind::Mse => 0.40,
    }
}

impl ArchConfig {
    /// Reference architecture: three k=3 convolutions (48, 64, 96) and one dense layer of 64.
    pub fn reference(n: usize, loss: LossKind) -> Self {
        ArchConfig {
            m: 20,
            n,
            conv: vec![
                ConvSpec { kernel: 3, channels: 48 },
                ConvSpec { kernel: 3, channels: 64 },
                ConvSpec { kernel: 3, channels: 96 },
            ],
            dense: vec![64],
            dropout: default_dropout(loss),
            leaky_slope: nn::DEFAULT_LEAKY_SLOPE,
            loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidArch(m));
        if self.m == 0 || self.n == 0 {
            return bad(format!("window {}×{} is empty", self.m, self.n));
        }
        if self.conv.iter().any(|c| c.kernel == 0 || c.channels == 0) || self.dense.contains(&0) {
            return bad("kernel sizes, channel counts and widths must be positive".into());
        }
        let shrink: usize = self.conv.iter().map(|c| c.kernel - 1).sum();
        if shrink >= self.m {
            return bad(format!("conv stack shrinks time {} by {shrink}", self.m));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {}", self.dropout));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky slope {}", self.leaky_slope));
        }
        Ok(())
    }

    /// Time steps entering the pooling layer, one entry per conv layer output.
    pub fn time_dims(&self) -> Vec<usize> {
        let mut t = self.m;
        self.conv
            .iter()
            .map(|c| {
                t = t + 1 - c.kernel;
                t
            })
            .collect()
    }

    /// Trainable parameters: embedding, kernels and biases, batch-norm γ and β, head.
    pub fn param_count(&self) -> usize {
        let mut total = SECTOR_COUNT * self.n;
        let mut c_in = self.n;
        for c in &self.conv {
            total += c.kernel * c_in * c.channels + c.channels + 2 * c.channels;
            c_in = c.channels;
        }
        for &d in &self.dense {
            total += c_in * d + d + 2 * d;
            c_in = d;
        }
        total + c_in * self.loss.output_arity() + self.loss.output_arity()
    }
}

/// Adds row `sector_id` of `e` to every time step of an `m × n` window.
pub fn add_sector_embedding(x: &[f64], n: usize, sector_id: u8, e: &Tensor) -> Result<Vec<f64>> {
    if sector_id as usize >= SECTOR_COUNT {
        return Err(ModelError::SectorOutOfRange(sector_id));
    }
    if e.shape != [SECTOR_COUNT, n] || x.len() % n != 0 {
        return Err(NnError::Shape(format!("window of {} values, embedding {:?}", x.len(), e.shape)).into());
    }
    let row = &e.data[sector_id as usize * n..][..n];
    Ok(x.chunks_exact(n)
        .flat_map(|r| r.iter().zip(row).map(|(a, b)| a + b))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub w: Tensor,
    pub b: Vec<f64>,
    pub bn: BatchNorm,
}

/// Everything that defines one CNN: parameters, batch-norm statistics and
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: ArchConfig,
    /// Initialization seed followed by the seed of every training call.
    pub seed_lineage: Vec<u64>,
    pub embedding: Tensor,
    pub conv: Vec<Block>,
    pub dense: Vec<Block>,
    pub head_w: Tensor,
    pub head_b: Vec<f64>,
    pub adam: Adam,
}

/// A batch of input windows, `len × m × n`, with their sectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Vec<f64>,
    pub sectors: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sectors.is_empty()
    }

    pub fn from_samples(panel: &StandardizedPanel, samples: &[Sample], m: usize) -> Self {
        let mut x = Vec::with_capacity(samples.len() * m * panel.n_features);
        for s in samples {
            x.extend_from_slice(s.window(panel, m));
        }
        Batch {
            x,
            sectors: samples.iter().map(|s| s.sector_id).collect(),
        }
    }
}

struct BlockCache {
    input: Tensor,
    bn: BnCache,
    pre_act: Tensor,
    mask: Option<Vec<f64>>,
}

/// Intermediate values of a training forward pass.
pub struct Cache {
    sectors: Vec<u8>,
    conv: Vec<BlockCache>,
    pooled_time: usize,
    dense: Vec<BlockCache>,
    head_in: Tensor,
    probs: Option<Vec<f64>>,
}

impl Cache {
    /// Sign of every leaky-ReLU input. Two passes with equal signatures lie on
    /// the same linear piece of the network.
    pub fn activation_signs(&self) -> Vec<bool> {
        self.conv
            .iter()
            .chain(&self.dense)
            .flat_map(|c| c.pre_act.data.iter().map(|v| *v >= 0.0))
            .collect()
    }
}

/// Parameters and batch-norm running statistics at one point in training.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    params: Vec<Vec<f64>>,
    running: Vec<Vec<f64>>,
}

impl Model {
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = arch.n;
        let embedding = Tensor::new(
            vec![SECTOR_COUNT, n],
            nn::uniform_init(&mut rng, SECTOR_COUNT * n, EMBEDDING_INIT_LIMIT),
        )?;
        let mut c_in = n;
        let mut conv = Vec::new();
        for c in &arch.conv {
            let fan_in = c.kernel * c_in;
            conv.push(Block {
                w: Tensor::new(
                    vec![c.kernel, c_in, c.channels],
                    nn::he_truncated_normal(&mut rng, fan_in, fan_in * c.channels),
                )?,
                b: vec![0.0; c.channels],
                bn: BatchNorm::new(c.channels),
            });
            c_in = c.channels;
        }
        let mut dense_blocks = Vec::new();
        for &d in &arch.dense {
            dense_blocks.push(Block {
                w: Tensor::new(vec![c_in, d], nn::he_truncated_normal(&mut rng, c_in, c_in * d))?,
                b: vec![0.0; d],
                bn: BatchNorm::new(d),
            });
            c_in = d;
        }
        let out = arch.loss.output_arity();
        let head_w = Tensor::new(vec![c_in, out], nn::he_truncated_normal(&mut rng, c_in, c_in * out))?;
        let mut model = Model {
            arch,
            seed_lineage: vec![seed],
            embedding,
            conv,
            dense: dense_blocks,
            head_w,
            head_b: vec![0.0; out],
            adam: Adam::new(&[]),
        };
        model.adam = Adam::new(&model.param_sizes());
        Ok(model)
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    /// Trainable tensors in a fixed order: embedding, then (w, b, γ, β) for
    /// every conv and dense block, then the head weight and bias.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.embedding.data];
        for b in self.conv.iter().chain(&self.dense) {
            out.extend([&b.w.data[..], &b.b[..], &b.bn.gamma[..], &b.bn.beta[..]]);
        }
        out.extend([&self.head_w.data[..], &self.head_b[..]]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.embedding.data];
        for b in self.conv.iter_mut().chain(self.dense.iter_mut()) {
            out.push(&mut b.w.data);
            out.push(&mut b.b);
            out.push(&mut b.bn.gamma);
            out.push(&mut b.bn.beta);
        }
        out.push(&mut self.head_w.data);
        out.push(&mut self.head_b);
        out
    }

    /// Batch-norm running means and variances, block by block.
    pub fn running_stats(&self) -> Vec<&[f64]> {
        self.conv
            .iter()
            .chain(&self.dense)
            .flat_map(|b| [&b.bn.running_mean[..], &b.bn.running_var[..]])
            .collect()
    }

    pub fn running_stats_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for b in self.conv.iter_mut().chain(self.dense.iter_mut()) {
            out.push(&mut b.bn.running_mean);
            out.push(&mut b.bn.running_var);
        }
        out
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            params: self.params().iter().map(|p| p.to_vec()).collect(),
            running: self.running_stats().iter().map(|p| p.to_vec()).collect(),
        }
    }

    pub fn restore(&mut self, s: &Snapshot) {
        for (dst, src) in self.params_mut().into_iter().zip(&s.params) {
            dst.copy_from_slice(src);
        }
        for (dst, src) in self.running_stats_mut().into_iter().zip(&s.running) {
            dst.copy_from_slice(src);
        }
    }

    fn embed(&self, batch: &Batch) -> Result<Tensor> {
        let (m, n) = (self.arch.m, self.arch.n);
        if batch.x.len() != batch.len() * m * n {
            return Err(NnError::Shape(format!(
                "batch of {} windows holds {} values, expected {m}×{n} each",
                batch.len(),
                batch.x.len()
            ))
            .into());
        }
        let mut x = Vec::with_capacity(batch.x.len());
        for (i, &s) in batch.sectors.iter().enumerate() {
            x.extend(add_sector_embedding(&batch.x[i * m * n..][..m * n], n, s, &self.embedding)?);
        }
        Ok(Tensor::new(vec![batch.len(), m, n], x)?)
    }

    fn head(&self, h: &Tensor) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let z = dense(h, &self.head_w, &self.head_b)?;
        if self.arch.loss == LossKind::Mse {
            return Ok((z.data, None));
        }
        let p: Vec<f64> = z.data.chunks_exact(5).flat_map(softmax).collect();
        Ok((p.clone(), Some(p)))
    }

    /// Inference: dropout off, batch norm on running statistics. Never mutates.
    pub fn predict_batch(&self, batch: &Batch) -> Result<Vec<f64>> {
        let slope = self.arch.leaky_slope;
        let mut h = self.embed(batch)?;
        for b in &self.conv {
            h = leaky_relu(&b.bn.infer(&conv1d_valid(&h, &b.w, &b.b)?)?, slope);
        }
        h = global_avg_pool(&h)?;
        for b in &self.dense {
            h = leaky_relu(&b.bn.infer(&dense(&h, &b.w, &b.b)?)?, slope);
        }
        Ok(self.head(&h)?.0)
    }

    /// Training forward pass with batch statistics and dropout drawn from `rng`.
    pub fn forward_train(&mut self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Cache)> {
        let slope = self.arch.leaky_slope;
        let rate = self.arch.dropout;
        let mut h = self.embed(batch)?;
        let mut conv_caches = Vec::with_capacity(self.conv.len());
        for b in self.conv.iter_mut() {
            let z = conv1d_valid(&h, &b.w, &b.b)?;
            let (a, bn) = b.bn.train(&z)?;
            let (y, mask) = dropout(&leaky_relu(&a, slope), rate, rng, Mode::Train)?;
            conv_caches.push(BlockCache {
                input: std::mem::replace(&mut h, y),
                bn,
                pre_act: a,
                mask,
            });
        }
        let pooled_time = h.dim(1);
        h = global_avg_pool(&h)?;
        let mut dense_caches = Vec::with_capacity(self.dense.len());
        for b in self.dense.iter_mut() {
            let z = dense(&h, &b.w, &b.b)?;
            let (a, bn) = b.bn.train(&z)?;
            let (y, mask) = dropout(&leaky_relu(&a, slope), rate, rng, Mode::Train)?;
            dense_caches.push(BlockCache {
                input: std::mem::replace(&mut h, y),
                bn,
                pre_act: a,
                mask,
            });
        }
        let (out, probs) = self.head(&h)?;
        Ok((
            out,
            Cache {
                sectors: batch.sectors.clone(),
                conv: conv_caches,
                pooled_time,
                dense: dense_caches,
                head_in: h,
                probs,
            },
        ))
    }

    /// Gradients of a scalar loss for every trainable tensor, in [`Model::params`] order,
    /// given the loss gradient with respect to the model outputs.
    pub fn backward(&self, cache: &Cache, d_out: &[f64]) -> Result<Vec<Vec<f64>>> {
        let bs = cache.head_in.dim(0);
        let arity = self.arch.loss.output_arity();
        if d_out.len() != bs * arity {
            return Err(NnError::Shape(format!("output gradient of {} values for batch {bs}", d_out.len())).into());
        }
        let slope = self.arch.leaky_slope;
        let dz: Vec<f64> = match &cache.probs {
            Some(p) => p
                .chunks_exact(5)
                .zip(d_out.chunks_exact(5))
                .flat_map(|(p, g)| softmax_backward(p, g))
                .collect(),
            None => d_out.to_vec(),
        };
        let (mut g, dhw, dhb) = dense_backward(&cache.head_in, &self.head_w, &Tensor::new(vec![bs, arity], dz)?);
        let mut block_grads: Vec<[Vec<f64>; 4]> = Vec::with_capacity(self.conv.len() + self.dense.len());

        let step = |b: &Block, c: &BlockCache, g: Tensor, conv: bool| -> (Tensor, [Vec<f64>; 4]) {
            let g = dropout_backward(c.mask.as_deref(), &g);
            let g = leaky_relu_backward(&c.pre_act, &g, slope);
            let (g, dgamma, dbeta) = b.bn.backward(&c.bn, &g);
            let (dx, dw, db) = if conv {
                conv1d_valid_backward(&c.input, &b.w, &g)
            } else {
                dense_backward(&c.input, &b.w, &g)
            };
            (dx, [dw.data, db, dgamma, dbeta])
        };
        for (b, c) in self.dense.iter().zip(&cache.dense).rev() {
            let (dx, grads) = step(b, c, g, false);
            block_grads.push(grads);
            g = dx;
        }
        g = global_avg_pool_backward(cache.pooled_time, &g);
        for (b, c) in self.conv.iter().zip(&cache.conv).rev() {
            let (dx, grads) = step(b, c, g, true);
            block_grads.push(grads);
            g = dx;
        }
        let (m, n) = (self.arch.m, self.arch.n);
        let mut de = vec![0.0; SECTOR_COUNT * n];
        for (i, s) in cache.sectors.iter().enumerate() {
            let row = &mut de[*s as usize * n..][..n];
            for t in 0..m {
                for (r, v) in row.iter_mut().zip(&g.data[(i * m + t) * n..][..n]) {
                    *r += v;
                }
            }
        }
        let mut out = vec![de];
        for grads in block_grads.into_iter().rev() {
            out.extend(grads);
        }
        out.push(dhw.data);
        out.push(dhb);
        Ok(out)
    }

    /// Batch-mean loss under the model's own objective and its parameter gradients.
    pub fn loss_and_grad(
        &mut self,
        batch: &Batch,
        targets: &[Target],
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<Vec<f64>>, Cache)> {
        let (out, cache) = self.forward_train(batch, rng)?;
        let (loss, d_out) = batch_loss(self.arch.loss, &out, targets)?;
        let grads = self.backward(&cache, &d_out)?;
        Ok((loss, grads, cache))
    }
}

/// Builds a model with the given architecture and seed.
pub fn build_model(arch: ArchConfig, seed: u64) -> Result<Model> {
    Model::new(arch, seed)
}

/// Optimization schedule for one training call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub lr_init: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper::for_loss(LossKind::ReturnWeighted)
    }
}

impl TrainHyper {
    pub fn for_loss(kind: LossKind) -> Self {
        let (lr_init, lr_min) = match kind {
            LossKind::CrossEntropy => (0.005, 0.0005),
            LossKind::ReturnWeighted | LossKind::Mse => (0.01, 0.001),
        };
        TrainHyper {
            lr_init,
            lr_min,
            batch_size: 256,
            max_epochs: 100,
            plateau_patience: 5,
            early_stop_patience: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr_init) {
            return Err(ModelError::InvalidArch(format!(
                "learning rates must satisfy 0 < lr_min <= lr_init, got {} and {}",
                self.lr_min, self.lr_init
            )));
        }
        if self.batch_size == 0 || self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(ModelError::InvalidArch(
                "batch size and patiences must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

fn targets_of(samples: &[Sample]) -> Vec<Target> {
    samples
        .iter()
        .map(|s| Target {
            label: s.label,
            weight: s.weight,
            r_d: s.r_d,
        })
        .collect()
}

/// Mean loss over a sample set in inference mode.
pub fn evaluate_loss(model: &Model, panel: &StandardizedPanel, samples: &[Sample], chunk: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(ModelError::EmptySamples("evaluation"));
    }
    let mut total = 0.0;
    for part in samples.chunks(chunk.max(1)) {
        let out = model.predict_batch(&Batch::from_samples(panel, part, model.arch.m))?;
        total += batch_loss(model.arch.loss, &out, &targets_of(part))?.0 * part.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Trains on `train`, monitoring the loss on `val`. The learning rate starts
/// from `hp.lr_init` on every call; optimizer moments carry over. The weights
/// and batch-norm statistics of the best validation epoch are restored at the end.
pub fn train_period(
    model: &mut Model,
    panel: &StandardizedPanel,
    train: &[Sample],
    val: &[Sample],
    hp: &TrainHyper,
    seed: u64,
) -> Result<TrainHistory> {
    hp.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptySamples("training"));
    }
    if val.is_empty() {
        return Err(ModelError::EmptySamples("validation"));
    }
    model.seed_lineage.push(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = model.arch.m;
    let mut lr = hp.lr_init;
    let mut plateau = Plateau::new(hp.plateau_patience, hp.lr_min);
    let mut stop = EarlyStop::new(hp.early_stop_patience);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut picked = Vec::with_capacity(hp.batch_size);
    for epoch in 0..hp.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(hp.batch_size) {
            picked.clear();
            picked.extend(idx.iter().map(|&i| train[i]));
            let batch = Batch::from_samples(panel, &picked, m);
            let (loss, grads, _) = model.loss_and_grad(&batch, &targets_of(&picked), &mut rng)?;
            if !loss.is_finite() {
                return Err(ModelError::Diverged(format!("training loss {loss} at epoch {epoch}")));
            }
            total += loss * idx.len() as f64;
            let mut adam = std::mem::replace(&mut model.adam, Adam::new(&[]));
            let res = adam.update(&mut model.params_mut(), &grads, lr);
            model.adam = adam;
            res?;
        }
        let val_loss = evaluate_loss(model, panel, val, hp.batch_size.max(512))?;
        if !val_loss.is_finite() {
            return Err(ModelError::Diverged(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        history.epochs.push(EpochLog {
            epoch,
            lr,
            train_loss: total / train.len() as f64,
            val_loss,
        });
        let decision = stop.check(epoch, val_loss, || model.snapshot());
        lr = plateau.step(val_loss, lr);
        if decision == StopDecision::Stop {
            history.stopped_early = true;
            break;
        }
    }
    history.best_epoch = stop.best_epoch;
    if let Some(best) = stop.into_best() {
        model.restore(&best);
    }
    Ok(history)
}

/// Model outputs for a set of samples, one row of `output_arity` values each.
pub fn predict_samples(model: &Model, panel: &StandardizedPanel, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    let a = model.arch.loss.output_arity();
    let mut out = Vec::with_capacity(samples.len());
    for part in samples.chunks(1024) {
        let y = model.predict_batch(&Batch::from_samples(panel, part, model.arch.m))?;
        out.extend(y.chunks_exact(a).map(|r| r.to_vec()));
    }
    Ok(out)
}

/// Single-window prediction.
pub fn predict(model: &Model, x: &[f64], sector_id: u8) -> Result<Vec<f64>> {
    model.predict_batch(&Batch {
        x: x.to_vec(),
        sectors: vec![sector_id],
    })
}

/// Expected label value `−2p₁ − p₂ + p₄ + 2p₅`.
pub fn score(p: &[f64]) -> f64 {
    -2.0 * p[0] - p[1] + p[3] + 2.0 * p[4]
}

/// Ranking statistic of one model output: the score for distributions, the
/// predicted return itself for scalar outputs.
pub fn output_score(out: &[f64]) -> f64 {
    if out.len() == 1 {
        out[0]
    } else {
        score(out)
    }
}

/// Compounded return of each member over its last [`MOE_WINDOW`] periods.
pub fn trailing_compound(returns: &[f64]) -> f64 {
    let start = returns.len().saturating_sub(MOE_WINDOW);
    returns[start..].iter().fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0
}

/// Softmax of each member's compounded trailing return; equal weights when no
/// member has a history yet.
pub fn moe_weights(trailing: &[Vec<f64>]) -> Vec<f64> {
    if trailing.iter().all(|r| r.is_empty()) {
        return vec![1.0 / trailing.len() as f64; trailing.len()];
    }
    let r: Vec<f64> = trailing.iter().map(|t| trailing_compound(t)).collect();
    softmax(&r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    Moe,
    SimpleAverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<Model>,
    pub trailing_returns: Vec<Vec<f64>>,
    pub mode: CombineMode,
}

impl Ensemble {
    pub fn new(members: Vec<Model>, mode: CombineMode) -> Result<Self> {
        if members.is_empty() {
            return Err(ModelError::InvalidEnsemble("no members".into()));
        }
        let arity = members[0].arch.loss.output_arity();
        if members.iter().any(|m| m.arch.loss.output_arity() != arity || m.arch.m != members[0].arch.m) {
            return Err(ModelError::InvalidEnsemble("members disagree on output or window shape".into()));
        }
        Ok(Ensemble {
            trailing_returns: vec![Vec::new(); members.len()],
            members,
            mode,
        })
    }

    pub fn weights(&self) -> Vec<f64> {
        match self.mode {
            CombineMode::Moe => moe_weights(&self.trailing_returns),
            CombineMode::SimpleAverage => vec![1.0 / self.members.len() as f64; self.members.len()],
        }
    }

    /// Appends one test-period return per member, keeping the last [`MOE_WINDOW`].
    pub fn record_period_returns(&mut self, returns: &[f64]) -> Result<()> {
        if returns.len() != self.members.len() {
            return Err(ModelError::InvalidEnsemble(format!(
                "{} returns for {} members",
                returns.len(),
                self.members.len()
            )));
        }
        for (t, r) in self.trailing_returns.iter_mut().zip(returns) {
            t.push(*r);
            if t.len() > MOE_WINDOW {
                t.remove(0);
            }
        }
        Ok(())
    }

    /// Weighted average of member outputs.
    pub fn combine(&self, member_outputs: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
        let w = self.weights();
        let rows = member_outputs.first().map_or(0, |o| o.len());
        (0..rows)
            .map(|i| {
                let width = member_outputs[0][i].len();
                let mut acc = vec![0.0; width];
                for (wk, out) in w.iter().zip(member_outputs) {
                    for (a, v) in acc.iter_mut().zip(&out[i]) {
                        *a += wk * v;
                    }
                }
                acc
            })
            .collect()
    }

    pub fn predict_samples(&self, panel: &StandardizedPanel, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
        let outs = self
            .members
            .iter()
            .map(|m| predict_samples(m, panel, samples))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.combine(&outs))
    }
}

pub fn ensemble_predict(ens: &Ensemble, x: &[f64], sector_id: u8) -> Result<Vec<f64>> {
    let outs = ens
        .members
        .iter()
        .map(|m| predict(m, x, sector_id).map(|o| vec![o]))
        .collect::<Result<Vec<_>>>()?;
    Ok(ens.combine(&outs).remove(0))
}

/// Independent seed for stream `stream` of a base seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
