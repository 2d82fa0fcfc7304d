//! Dense f64 tensors and the handful of layers the ranking CNN needs, each with
//! an explicit backward pass, plus Adam and the plateau / early-stop schedules.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Infer,
}

/// Row-major tensor of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.shape.len() != rank {
        return Err(NnError::Shape(format!(
            "{what} must have rank {rank}, got {:?}",
            t.shape
        )));
    }
    Ok(())
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `c ← a·b + beta·c` for an `m × k` by `k × n` product with arbitrary strides
/// on `a` and `b`; `c` is row-major and contiguous.
#[allow(clippy::too_many_arguments)]
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rs: usize, cs: usize, r: usize, cc: usize| (r - 1) * rs + (cc - 1) * cs;
    assert!(k == 0 || last(rsa, csa, m, k) < a.len(), "gemm: lhs out of bounds");
    assert!(k == 0 || last(rsb, csb, k, n) < b.len(), "gemm: rhs out of bounds");
    assert!(m * n <= c.len(), "gemm: output out of bounds");
    // SAFETY: the assertions above keep every strided access inside the slices,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Rows of `k` consecutive time steps, one per output position: `[batch·t_out, k·ch]`.
fn im2col(x: &Tensor, k: usize) -> Vec<f64> {
    let (bs, t_in, c_in) = (x.dim(0), x.dim(1), x.dim(2));
    let t_out = t_in + 1 - k;
    let span = k * c_in;
    let mut cols = Vec::with_capacity(bs * t_out * span);
    for bi in 0..bs {
        for t in 0..t_out {
            cols.extend_from_slice(&x.data[(bi * t_in + t) * c_in..][..span]);
        }
    }
    cols
}

fn broadcast_rows(b: &[f64], rows: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * b.len());
    for _ in 0..rows {
        out.extend_from_slice(b);
    }
    out
}

fn column_sums(g: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for row in g.chunks_exact(width) {
        axpy(&mut out, 1.0, row);
    }
    out
}

/// Valid 1D convolution along time: `x[batch, time, ch_in] * w[k, ch_in, ch_out] + b`.
pub fn conv1d_valid(x: &Tensor, w: &Tensor, b: &[f64]) -> Result<Tensor> {
    expect_rank(x, 3, "conv input")?;
    expect_rank(w, 3, "conv kernel")?;
    let (bs, t_in, c_in) = (x.dim(0), x.dim(1), x.dim(2));
    let (k, wc_in, c_out) = (w.dim(0), w.dim(1), w.dim(2));
    if wc_in != c_in || b.len() != c_out {
        return Err(NnError::Shape(format!(
            "conv input {:?}, kernel {:?}, bias {}",
            x.shape,
            w.shape,
            b.len()
        )));
    }
    if k == 0 || t_in < k {
        return Err(NnError::Shape(format!("time {t_in} shorter than kernel {k}")));
    }
    let t_out = t_in - k + 1;
    let span = k * c_in;
    let rows = bs * t_out;
    let cols = im2col(x, k);
    let mut out = broadcast_rows(b, rows);
    gemm((rows, span, c_out), &cols, (span, 1), &w.data, (c_out, 1), 1.0, &mut out);
    Tensor::new(vec![bs, t_out, c_out], out)
}

/// Gradients of [`conv1d_valid`] with respect to input, kernel and bias.
pub fn conv1d_valid_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Vec<f64>) {
    let (bs, t_in, c_in) = (x.dim(0), x.dim(1), x.dim(2));
    let (k, c_out) = (w.dim(0), w.dim(2));
    let t_out = dy.dim(1);
    let span = k * c_in;
    let rows = bs * t_out;
    let cols = im2col(x, k);
    let mut dw = vec![0.0; w.len()];
    gemm((span, rows, c_out), &cols, (1, span), &dy.data, (c_out, 1), 0.0, &mut dw);
    let mut dcols = vec![0.0; rows * span];
    gemm((rows, c_out, span), &dy.data, (c_out, 1), &w.data, (1, c_out), 0.0, &mut dcols);
    let mut dx = vec![0.0; x.len()];
    for bi in 0..bs {
        for t in 0..t_out {
            let src = &dcols[(bi * t_out + t) * span..][..span];
            axpy(&mut dx[(bi * t_in + t) * c_in..][..span], 1.0, src);
        }
    }
    (
        Tensor {
            shape: x.shape.clone(),
            data: dx,
        },
        Tensor {
            shape: w.shape.clone(),
            data: dw,
        },
        column_sums(&dy.data, c_out),
    )
}

/// Affine map `x[batch, d_in] · w[d_in, d_out] + b`.
pub fn dense(x: &Tensor, w: &Tensor, b: &[f64]) -> Result<Tensor> {
    expect_rank(x, 2, "dense input")?;
    expect_rank(w, 2, "dense weight")?;
    let (bs, d_in) = (x.dim(0), x.dim(1));
    let d_out = w.dim(1);
    if w.dim(0) != d_in || b.len() != d_out {
        return Err(NnError::Shape(format!(
            "dense input {:?}, weight {:?}, bias {}",
            x.shape,
            w.shape,
            b.len()
        )));
    }
    let mut out = broadcast_rows(b, bs);
    gemm((bs, d_in, d_out), &x.data, (d_in, 1), &w.data, (d_out, 1), 1.0, &mut out);
    Tensor::new(vec![bs, d_out], out)
}

pub fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Vec<f64>) {
    let (bs, d_in) = (x.dim(0), x.dim(1));
    let d_out = w.dim(1);
    let mut dx = vec![0.0; x.len()];
    gemm((bs, d_out, d_in), &dy.data, (d_out, 1), &w.data, (1, d_out), 0.0, &mut dx);
    let mut dw = vec![0.0; w.len()];
    gemm((d_in, bs, d_out), &x.data, (1, d_in), &dy.data, (d_out, 1), 0.0, &mut dw);
    (
        Tensor {
            shape: x.shape.clone(),
            data: dx,
        },
        Tensor {
            shape: w.shape.clone(),
            data: dw,
        },
        column_sums(&dy.data, d_out),
    )
}

/// Batch normalization over the last axis. Running statistics follow
/// `running = momentum · running + (1 − momentum) · batch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.99;
    pub const EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor) -> Result<usize> {
        let c = *x.shape.last().unwrap_or(&0);
        if c != self.channels() || x.is_empty() {
            return Err(NnError::Shape(format!(
                "batch norm over {} channels got {:?}",
                self.channels(),
                x.shape
            )));
        }
        Ok(c)
    }

    /// Normalizes with running statistics; never mutates the layer.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.check(x)?;
        let scale: Vec<f64> = (0..c)
            .map(|j| self.gamma[j] / (self.running_var[j] + self.eps).sqrt())
            .collect();
        let mut out = x.data.clone();
        for row in out.chunks_exact_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - self.running_mean[j]) * scale[j] + self.beta[j];
            }
        }
        Tensor::new(x.shape.clone(), out)
    }

    /// Normalizes with batch statistics (population variance) and folds them
    /// into the running estimates.
    pub fn train(&mut self, x: &Tensor) -> Result<(Tensor, BnCache)> {
        let c = self.check(x)?;
        let rows = x.len() / c;
        let n = rows as f64;
        let mut mean = vec![0.0; c];
        for row in x.data.chunks_exact(c) {
            axpy(&mut mean, 1.0, row);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for row in x.data.chunks_exact(c) {
            for j in 0..c {
                var[j] += (row[j] - mean[j]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = x.data.clone();
        let mut out = vec![0.0; x.len()];
        for (xr, orow) in xhat.chunks_exact_mut(c).zip(out.chunks_exact_mut(c)) {
            for j in 0..c {
                xr[j] = (xr[j] - mean[j]) * inv_std[j];
                orow[j] = self.gamma[j] * xr[j] + self.beta[j];
            }
        }
        let mo = self.momentum;
        for j in 0..c {
            self.running_mean[j] = mo * self.running_mean[j] + (1.0 - mo) * mean[j];
            self.running_var[j] = mo * self.running_var[j] + (1.0 - mo) * var[j];
        }
        Ok((Tensor::new(x.shape.clone(), out)?, BnCache { xhat, inv_std }))
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<BnCache>)> {
        match mode {
            Mode::Infer => Ok((self.infer(x)?, None)),
            Mode::Train => self.train(x).map(|(y, c)| (y, Some(c))),
        }
    }

    /// Train-mode backward: returns (dx, dγ, dβ).
    pub fn backward(&self, cache: &BnCache, dy: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
        let c = self.channels();
        let n = (dy.len() / c) as f64;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for (g, xh) in dy.data.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for j in 0..c {
                dbeta[j] += g[j];
                dgamma[j] += g[j] * xh[j];
            }
        }
        let mut dx = vec![0.0; dy.len()];
        for ((d, g), xh) in dx
            .chunks_exact_mut(c)
            .zip(dy.data.chunks_exact(c))
            .zip(cache.xhat.chunks_exact(c))
        {
            for j in 0..c {
                d[j] = self.gamma[j] * cache.inv_std[j] / n
                    * (n * g[j] - dbeta[j] - xh[j] * dgamma[j]);
            }
        }
        (
            Tensor {
                shape: dy.shape.clone(),
                data: dx,
            },
            dgamma,
            dbeta,
        )
    }
}

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

pub fn leaky_relu(x: &Tensor, alpha: f64) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .map(|&v| if v >= 0.0 { v } else { alpha * v })
            .collect(),
    }
}

/// Backward of [`leaky_relu`] given its input.
pub fn leaky_relu_backward(x: &Tensor, dy: &Tensor, alpha: f64) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&v, &g)| if v >= 0.0 { g } else { alpha * g })
            .collect(),
    }
}

/// Inverted dropout. In train mode returns the per-element multipliers
/// (0 or 1/(1−rate)) so the backward pass can reuse them.
pub fn dropout<R: Rng + ?Sized>(
    x: &Tensor,
    rate: f64,
    rng: &mut R,
    mode: Mode,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidParam(format!("dropout rate {rate}")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let data = x.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((
        Tensor {
            shape: x.shape.clone(),
            data,
        },
        Some(mask),
    ))
}

pub fn dropout_backward(mask: Option<&[f64]>, dy: &Tensor) -> Tensor {
    match mask {
        None => dy.clone(),
        Some(m) => Tensor {
            shape: dy.shape.clone(),
            data: dy.data.iter().zip(m).map(|(g, k)| g * k).collect(),
        },
    }
}

/// Mean over the time axis: `[batch, time, ch] → [batch, ch]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    expect_rank(x, 3, "pool input")?;
    let (bs, t, c) = (x.dim(0), x.dim(1), x.dim(2));
    if t == 0 {
        return Err(NnError::Shape("pooling over an empty time axis".into()));
    }
    let mut out = vec![0.0; bs * c];
    for bi in 0..bs {
        let dst = &mut out[bi * c..][..c];
        for row in x.data[bi * t * c..][..t * c].chunks_exact(c) {
            axpy(dst, 1.0, row);
        }
        dst.iter_mut().for_each(|v| *v /= t as f64);
    }
    Tensor::new(vec![bs, c], out)
}

pub fn global_avg_pool_backward(time: usize, dy: &Tensor) -> Tensor {
    let (bs, c) = (dy.dim(0), dy.dim(1));
    let mut dx = Vec::with_capacity(bs * time * c);
    for bi in 0..bs {
        let g: Vec<f64> = dy.data[bi * c..][..c].iter().map(|v| v / time as f64).collect();
        for _ in 0..time {
            dx.extend_from_slice(&g);
        }
    }
    Tensor {
        shape: vec![bs, time, c],
        data: dx,
    }
}

/// Numerically stable softmax of one logit vector.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Vector-Jacobian product of softmax: `dz = p ⊙ (dp − ⟨dp, p⟩)`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(pi, gi)| pi * (gi - inner)).collect()
}

/// He-style truncated normal: draws beyond two standard deviations are
/// resampled and the result is rescaled so the variance stays `2 / fan_in`.
pub fn he_truncated_normal<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, n: usize) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt() / 0.879_625_661_034_239_8;
    (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect()
}

pub fn uniform_init<R: Rng + ?Sized>(rng: &mut R, n: usize, limit: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-limit..=limit)).collect()
}

/// Adam with bias correction. Moments persist across learning-rate changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(sizes: &[usize]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::Shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            if p.len() != g.len() || m.len() != g.len() {
                return Err(NnError::Shape(format!("tensor {i} length mismatch")));
            }
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Halves the learning rate after `patience` epochs without improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    pub best: f64,
    pub wait: usize,
}

impl Plateau {
    pub fn new(patience: usize, min_lr: f64) -> Self {
        Plateau {
            patience,
            factor: 0.5,
            min_lr,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        if metric < self.best {
            self.best = metric;
            self.wait = 0;
            return lr;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.wait = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops after `patience` epochs without improvement and keeps a snapshot of
/// whatever state was current at the best epoch.
#[derive(Debug, Clone)]
pub struct EarlyStop<S> {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: Option<usize>,
    pub wait: usize,
    snapshot: Option<S>,
}

impl<S> EarlyStop<S> {
    pub fn new(patience: usize) -> Self {
        EarlyStop {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            wait: 0,
            snapshot: None,
        }
    }

    pub fn check(&mut self, epoch: usize, metric: f64, snapshot: impl FnOnce() -> S) -> StopDecision {
        if metric < self.best {
            self.best = metric;
            self.best_epoch = Some(epoch);
            self.wait = 0;
            self.snapshot = Some(snapshot());
            return StopDecision::Continue;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn into_best(self) -> Option<S> {
        self.snapshot
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        t(shape, &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// Central differences of `f` at every coordinate of `x`.
    fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|i| {
                let mut p = x.clone();
                p.data[i] += h;
                let mut m = x.clone();
                m.data[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn project(y: &Tensor, c: &Tensor) -> f64 {
        dot(&y.data, &c.data)
    }

    #[test]
    fn conv_examples() {
        let y = conv1d_valid(&t(&[1, 3, 1], &[1.0, 2.0, 3.0]), &t(&[3, 1, 1], &[1.0, 1.0, 1.0]), &[0.0]).unwrap();
        assert_eq!(y.data, vec![6.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, &[2, 20, 4]);
        let w = random(&mut rng, &[3, 4, 5]);
        assert_eq!(conv1d_valid(&x, &w, &[0.0; 5]).unwrap().shape, vec![2, 18, 5]);

        // k = 1 selector of channel 2.
        let mut sel = Tensor::zeros(vec![1, 4, 1]);
        sel.data[2] = 1.0;
        let y = conv1d_valid(&x, &sel, &[0.0]).unwrap();
        for (i, v) in y.data.iter().enumerate() {
            assert_eq!(*v, x.data[i * 4 + 2]);
        }
        assert!(conv1d_valid(&x, &random(&mut rng, &[3, 3, 5]), &[0.0; 5]).is_err());
        assert!(conv1d_valid(&random(&mut rng, &[1, 2, 4]), &w, &[0.0; 5]).is_err());
    }

    #[test]
    fn conv_length_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for time in 1..8 {
            for k in 1..=time {
                let x = random(&mut rng, &[1, time, 2]);
                let w = random(&mut rng, &[k, 2, 3]);
                assert_eq!(conv1d_valid(&x, &w, &[0.0; 3]).unwrap().dim(1), time - k + 1);
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, &[2, 6, 3]);
        let w = random(&mut rng, &[3, 3, 4]);
        let b = vec![0.1, -0.2, 0.3, 0.0];
        let c = random(&mut rng, &[2, 4, 4]);
        let (dx, dw, db) = conv1d_valid_backward(&x, &w, &c);
        let nx = numeric_grad(&x, |x| project(&conv1d_valid(x, &w, &b).unwrap(), &c));
        let nw = numeric_grad(&w, |w| project(&conv1d_valid(&x, w, &b).unwrap(), &c));
        let bt = t(&[4], &b);
        let nb = numeric_grad(&bt, |b| project(&conv1d_valid(&x, &w, &b.data).unwrap(), &c));
        for (a, n) in dx.data.iter().zip(&nx).chain(dw.data.iter().zip(&nw)).chain(db.iter().zip(&nb)) {
            assert!(rel_err(*a, *n) < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn dense_examples_and_gradients() {
        let y = dense(&t(&[1, 2], &[2.0, 3.0]), &t(&[2, 1], &[4.0, 5.0]), &[1.0]).unwrap();
        assert_eq!(y.data, vec![2.0 * 4.0 + 3.0 * 5.0 + 1.0]);
        let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(dense(&t(&[1, 2], &[7.0, -1.0]), &id, &[0.0, 0.0]).unwrap().data, vec![7.0, -1.0]);
        assert_eq!(dense(&t(&[1, 2], &[0.0, 0.0]), &id, &[3.0, 4.0]).unwrap().data, vec![3.0, 4.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, &[3, 5]);
        let w = random(&mut rng, &[5, 2]);
        let c = random(&mut rng, &[3, 2]);
        let (dx, dw, _) = dense_backward(&x, &w, &c);
        let nx = numeric_grad(&x, |x| project(&dense(x, &w, &[0.0; 2]).unwrap(), &c));
        let nw = numeric_grad(&w, |w| project(&dense(&x, w, &[0.0; 2]).unwrap(), &c));
        for (a, n) in dx.data.iter().zip(&nx).chain(dw.data.iter().zip(&nw)) {
            assert!(rel_err(*a, *n) < 1e-6);
        }
    }

    #[test]
    fn single_dense_mse_gradient_matches_closed_form() {
        let x = t(&[1, 3], &[0.5, -1.0, 2.0]);
        let w = t(&[3, 1], &[0.1, 0.2, -0.3]);
        let y = 0.4;
        let yhat = dense(&x, &w, &[0.05]).unwrap().data[0];
        let dy = t(&[1, 1], &[2.0 * (yhat - y)]);
        let (_, dw, db) = dense_backward(&x, &w, &dy);
        for i in 0..3 {
            assert!((dw.data[i] - 2.0 * (yhat - y) * x.data[i]).abs() < 1e-15);
        }
        assert!((db[0] - 2.0 * (yhat - y)).abs() < 1e-15);
    }

    #[test]
    fn zero_input_gives_zero_weight_gradient() {
        let x = Tensor::zeros(vec![2, 4, 3]);
        let w = t(&[2, 3, 2], &[0.3; 12]);
        let dy = t(&[2, 3, 2], &[1.0; 12]);
        let (_, dw, _) = conv1d_valid_backward(&x, &w, &dy);
        assert!(dw.data.iter().all(|v| *v == 0.0));
        let (_, dw, _) = dense_backward(&Tensor::zeros(vec![2, 3]), &t(&[3, 2], &[0.3; 6]), &t(&[2, 2], &[1.0; 4]));
        assert!(dw.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_norm_examples() {
        // Per-channel mean 0, population variance 1.
        let x = t(&[4, 2], &[1.0, -1.0, -1.0, 1.0, 1.0, 1.0, -1.0, -1.0]);
        let mut bn = BatchNorm::new(2);
        let (y, _) = bn.train(&x).unwrap();
        for (a, b) in y.data.iter().zip(&x.data) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!((bn.running_var[0] - 1.0).abs() < 1e-15);
        assert_eq!(bn.running_mean[0], 0.0);

        let mut bn = BatchNorm::new(2);
        bn.gamma = vec![0.0, 0.0];
        bn.beta = vec![0.7, -0.3];
        let (y, _) = bn.train(&t(&[3, 2], &[1.0, 5.0, 2.0, 9.0, 4.0, -3.0])).unwrap();
        assert_eq!(y.data, vec![0.7, -0.3, 0.7, -0.3, 0.7, -0.3]);

        let mut bn = BatchNorm::new(2);
        bn.train(&t(&[2, 2], &[2.0, 0.0, 4.0, 0.0])).unwrap();
        assert!((bn.running_mean[0] - 0.03).abs() < 1e-15);
        assert!((bn.running_var[0] - (0.99 + 0.01)).abs() < 1e-15);
        let before = bn.clone();
        let x = t(&[1, 2], &[1.0, 2.0]);
        let a = bn.infer(&x).unwrap();
        let b = bn.forward(&x, Mode::Infer).unwrap().0;
        assert_eq!(a, b);
        assert_eq!(bn, before);
        assert!(bn.infer(&t(&[1, 3], &[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn batch_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, &[6, 3]);
        let c = random(&mut rng, &[6, 3]);
        let mut bn = BatchNorm::new(3);
        bn.gamma = vec![1.5, -0.5, 0.8];
        bn.beta = vec![0.1, 0.2, 0.3];
        let (_, cache) = bn.clone().train(&x).unwrap();
        let (dx, dg, db) = bn.backward(&cache, &c);
        let f = |x: &Tensor, bn: &BatchNorm| project(&bn.clone().train(x).unwrap().0, &c);
        let nx = numeric_grad(&x, |x| f(x, &bn));
        for (a, n) in dx.data.iter().zip(&nx) {
            assert!(rel_err(*a, *n) < 1e-6, "{a} vs {n}");
        }
        let g = t(&[3], &bn.gamma);
        let ng = numeric_grad(&g, |g| {
            let mut b = bn.clone();
            b.gamma = g.data.clone();
            f(&x, &b)
        });
        let bt = t(&[3], &bn.beta);
        let nb = numeric_grad(&bt, |be| {
            let mut b = bn.clone();
            b.beta = be.data.clone();
            f(&x, &b)
        });
        for (a, n) in dg.iter().zip(&ng).chain(db.iter().zip(&nb)) {
            assert!(rel_err(*a, *n) < 1e-6);
        }
    }

    #[test]
    fn leaky_relu_examples_and_gradient() {
        let y = leaky_relu(&t(&[3], &[2.0, -2.0, 0.0]), 0.01);
        assert_eq!(y.data, vec![2.0, -0.02, 0.0]);
        let g = leaky_relu_backward(&t(&[2], &[3.0, -1.0]), &t(&[2], &[1.0, 1.0]), 0.01);
        assert_eq!(g.data, vec![1.0, 0.01]);
    }

    #[test]
    fn dropout_modes_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(dropout(&x, 0.0, &mut rng, Mode::Train).unwrap().0, x);
        assert_eq!(dropout(&x, 0.35, &mut rng, Mode::Infer).unwrap().0, x);
        assert!(dropout(&x, 1.0, &mut rng, Mode::Train).is_err());

        let ones = t(&[100_000], &vec![1.0; 100_000]);
        let (y, mask) = dropout(&ones, 0.35, &mut rng, Mode::Train).unwrap();
        let mean = y.data.iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        let g = dropout_backward(mask.as_deref(), &ones);
        assert_eq!(g.data, y.data);
    }

    #[test]
    fn pool_examples_and_gradient() {
        assert_eq!(global_avg_pool(&t(&[1, 3, 1], &[4.0, 4.0, 4.0])).unwrap().data, vec![4.0]);
        assert_eq!(global_avg_pool(&t(&[1, 2, 1], &[0.0, 2.0])).unwrap().data, vec![1.0]);
        let x = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(global_avg_pool(&x).unwrap().data, x.data);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&mut rng, &[2, 5, 3]);
        let c = random(&mut rng, &[2, 3]);
        let dx = global_avg_pool_backward(5, &c);
        let nx = numeric_grad(&x, |x| project(&global_avg_pool(x).unwrap(), &c));
        for (a, n) in dx.data.iter().zip(&nx) {
            assert!(rel_err(*a, *n) < 1e-6);
        }
    }

    #[test]
    fn softmax_examples_and_gradient() {
        let p = softmax(&[0.3; 5]);
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-15));
        let p = softmax(&[2f64.ln(), 0.0, 0.0, 0.0, 0.0]);
        let want = [2.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let z = [1.0, -2.0, 0.5, 3.0, 0.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 1000.0).collect();
        let (a, b) = (softmax(&z), softmax(&shifted));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let c = [0.3, -1.0, 2.0, 0.5, -0.2];
        let dz = softmax_backward(&a, &c);
        let zt = t(&[5], &z);
        let nz = numeric_grad(&zt, |z| dot(&softmax(&z.data), &c));
        for (x, n) in dz.iter().zip(&nz) {
            assert!(rel_err(*x, *n) < 1e-6);
        }
    }

    #[test]
    fn adam_steps() {
        let mut p = vec![1.0, -2.0];
        let mut opt = Adam::new(&[2]);
        opt.update(&mut [&mut p[..]], &[vec![0.0, 0.0]], 0.01).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);

        // First step with constant gradient g moves each coordinate by lr·g/(|g| + ε).
        let mut p = vec![1.0, -2.0];
        let mut opt = Adam::new(&[2]);
        opt.update(&mut [&mut p[..]], &[vec![0.5, -3.0]], 0.01).unwrap();
        assert!((p[0] - (1.0 - 0.01 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((p[1] - (-2.0 + 0.01 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);

        let run = || {
            let mut p = vec![0.3, 0.1, -0.4];
            let mut opt = Adam::new(&[3]);
            for k in 0..50 {
                let g: Vec<f64> = p.iter().map(|v| 2.0 * v + (k as f64).sin()).collect();
                opt.update(&mut [&mut p[..]], &[g], 0.01).unwrap();
            }
            p
        };
        assert_eq!(run().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), run().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert!(Adam::new(&[2]).update(&mut [&mut [0.0][..]], &[vec![0.0]], 0.1).is_err());
    }

    #[test]
    fn plateau_schedule() {
        let mut pl = Plateau::new(5, 0.001);
        let mut lr = 0.01;
        for k in 0..10 {
            lr = pl.step(1.0 - k as f64 * 0.01, lr);
        }
        assert_eq!(lr, 0.01);

        let mut pl = Plateau::new(5, 0.001);
        let mut lr = pl.step(1.0, 0.01);
        for _ in 0..4 {
            lr = pl.step(1.0, lr);
        }
        assert_eq!(lr, 0.01);
        lr = pl.step(1.0, lr);
        assert_eq!(lr, 0.005);

        let mut pl = Plateau::new(5, 0.001);
        let mut lr = 0.001;
        for _ in 0..30 {
            lr = pl.step(1.0, lr);
        }
        assert_eq!(lr, 0.001);
        let mut lr = 0.0015;
        let mut pl = Plateau::new(1, 0.001);
        pl.step(0.0, lr);
        lr = pl.step(0.0, lr);
        assert_eq!(lr, 0.001);
    }

    #[test]
    fn early_stop_schedule() {
        let mut es = EarlyStop::new(20);
        assert_eq!(es.check(0, 1.0, || 0), StopDecision::Continue);
        for e in 1..19 {
            assert_eq!(es.check(e, 1.0, || e), StopDecision::Continue);
        }
        assert_eq!(es.check(19, 0.5, || 19), StopDecision::Continue);

        // Replay: best at epoch 3, then 20 flat epochs stop at epoch 23.
        let metrics: Vec<f64> = [0.9, 0.8, 0.85, 0.7].into_iter().chain(std::iter::repeat(0.75).take(30)).collect();
        let mut es = EarlyStop::new(20);
        let mut stopped = None;
        for (e, m) in metrics.iter().enumerate() {
            if es.check(e, *m, || e) == StopDecision::Stop {
                stopped = Some(e);
                break;
            }
        }
        assert_eq!(stopped, Some(23));
        assert_eq!(es.best_epoch, Some(3));
        assert_eq!(es.into_best(), Some(3));

        let mut es: EarlyStop<()> = EarlyStop::new(2);
        es.check(0, f64::NAN, || ());
        assert_eq!(es.check(1, f64::NAN, || ()), StopDecision::Stop);
    }

    #[test]
    fn he_init_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = he_truncated_normal(&mut rng, 50, 200_000);
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var / (2.0 / 50.0) - 1.0).abs() < 0.02, "{var}");
        let lim = 2.0 * (2.0f64 / 50.0).sqrt() / 0.879_625_661_034_239_8;
        assert!(w.iter().all(|v| v.abs() <= lim));
        let u = uniform_init(&mut rng, 1000, 0.05);
        assert!(u.iter().all(|v| v.abs() <= 0.05));
    }
}
