//! Linear baselines: OLS, ridge and cross-validated lasso on anchor-day feature rows.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{Sample, StandardizedPanel};
use crate::indicators::{BASIC_FEATURES, DEFAULT_TECHNICAL};

pub const LASSO_TOL: f64 = 1e-8;
pub const LASSO_MAX_SWEEPS: usize = 10_000;
pub const DEFAULT_GRID_POINTS: usize = 50;
pub const DEFAULT_FOLDS: usize = 5;
/// Smallest grid penalty as a fraction of the largest.
pub const GRID_RATIO: f64 = 1e-3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BaselineError {
    #[error("design is rank deficient: column {column} ({name}) is collinear with earlier columns")]
    RankDeficient { column: usize, name: String },
    #[error("need more samples ({rows}) than features ({cols})")]
    TooFewSamples { rows: usize, cols: usize },
    #[error("lasso did not converge after {sweeps} sweeps (residual norm {residual_norm})")]
    NonConvergence { sweeps: usize, residual_norm: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ols,
    Ridge,
    Lasso,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ols, Method::Ridge, Method::Lasso];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::Ridge => "ridge",
            Method::Lasso => "lasso",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub method: Method,
    pub features: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

impl RegressionFit {
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["feature", "coefficient"])?;
        wtr.write_record(["intercept".to_string(), self.intercept.to_string()])?;
        for (f, c) in self.features.iter().zip(&self.coefficients) {
            wtr.write_record([f.clone(), c.to_string()])?;
        }
        wtr.flush()
    }
}

/// Row-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub rows: usize,
    pub cols: usize,
    pub x: Vec<f64>,
    pub names: Vec<String>,
}

impl Design {
    pub fn new(rows: usize, cols: usize, x: Vec<f64>) -> Result<Self> {
        if x.len() != rows * cols {
            return Err(BaselineError::Shape(format!("{rows}×{cols} design with {} values", x.len())));
        }
        Ok(Design {
            rows,
            cols,
            x,
            names: (0..cols).map(|j| format!("x{j}")).collect(),
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        self.names = names;
        self
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.cols..(i + 1) * self.cols]
    }

    fn subset(&self, rows: &[usize]) -> Design {
        Design {
            rows: rows.len(),
            cols: self.cols,
            x: rows.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            names: self.names.clone(),
        }
    }

    /// Anchor-day rows of the chosen standardized feature columns.
    pub fn from_samples(panel: &StandardizedPanel, samples: &[Sample], columns: &[usize], names: Vec<String>) -> Self {
        let x = samples
            .iter()
            .flat_map(|s| {
                let row = panel.row(s.stock, s.anchor_day);
                columns.iter().map(move |&c| row[c])
            })
            .collect();
        Design {
            rows: samples.len(),
            cols: columns.len(),
            x,
            names,
        }
    }
}

struct Centered {
    x: Vec<f64>,
    y: Vec<f64>,
    x_mean: Vec<f64>,
    y_mean: f64,
}

fn center(d: &Design, y: &[f64]) -> Result<Centered> {
    if y.len() != d.rows {
        return Err(BaselineError::Shape(format!("{} targets for {} rows", y.len(), d.rows)));
    }
    let n = d.rows.max(1) as f64;
    let mut x_mean = vec![0.0; d.cols];
    for i in 0..d.rows {
        for (m, v) in x_mean.iter_mut().zip(d.row(i)) {
            *m += v;
        }
    }
    x_mean.iter_mut().for_each(|m| *m /= n);
    let y_mean = y.iter().sum::<f64>() / n;
    let x = (0..d.rows)
        .flat_map(|i| d.row(i).iter().zip(&x_mean).map(|(v, m)| v - m).collect::<Vec<_>>())
        .collect();
    Ok(Centered {
        x,
        y: y.iter().map(|v| v - y_mean).collect(),
        x_mean,
        y_mean,
    })
}

/// Solves `(XᵀX + λI) β = Xᵀy` on centered data by Cholesky factorization.
fn solve_normal(d: &Design, y: &[f64], lambda: f64, method: Method) -> Result<RegressionFit> {
    let p = d.cols;
    if d.rows <= p {
        return Err(BaselineError::TooFewSamples { rows: d.rows, cols: p });
    }
    let c = center(d, y)?;
    let mut a = vec![0.0; p * p];
    let mut b = vec![0.0; p];
    for i in 0..d.rows {
        let row = &c.x[i * p..(i + 1) * p];
        for j in 0..p {
            b[j] += row[j] * c.y[i];
            for k in 0..=j {
                a[j * p + k] += row[j] * row[k];
            }
        }
    }
    let scale = (0..p).map(|j| a[j * p + j]).fold(0.0, f64::max).max(1e-300);
    for j in 0..p {
        a[j * p + j] += lambda;
    }
    // In-place lower Cholesky factor.
    for j in 0..p {
        let mut diag = a[j * p + j];
        for k in 0..j {
            diag -= a[j * p + k] * a[j * p + k];
        }
        if diag <= 1e-12 * scale.max(lambda) {
            return Err(BaselineError::RankDeficient {
                column: j,
                name: d.names.get(j).cloned().unwrap_or_default(),
            });
        }
        let l = diag.sqrt();
        a[j * p + j] = l;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / l;
        }
    }
    let mut z = b;
    for i in 0..p {
        for k in 0..i {
            z[i] -= a[i * p + k] * z[k];
        }
        z[i] /= a[i * p + i];
    }
    for i in (0..p).rev() {
        for k in i + 1..p {
            z[i] -= a[k * p + i] * z[k];
        }
        z[i] /= a[i * p + i];
    }
    let intercept = c.y_mean - z.iter().zip(&c.x_mean).map(|(b, m)| b * m).sum::<f64>();
    Ok(RegressionFit {
        method,
        features: d.names.clone(),
        coefficients: z,
        intercept,
        lambda,
    })
}

/// Least squares with an unpenalized intercept.
pub fn ols_fit(d: &Design, y: &[f64]) -> Result<RegressionFit> {
    solve_normal(d, y, 0.0, Method::Ols)
}

/// Minimizes `Σ(y − Xβ − β₀)² + λ‖β‖²`.
pub fn ridge_fit(d: &Design, y: &[f64], lambda: f64) -> Result<RegressionFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(BaselineError::InvalidPenalty(format!("ridge λ = {lambda}")));
    }
    solve_normal(d, y, lambda, Method::Ridge)
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Coordinate descent for `(1/2n)‖y − Xβ‖² + λ‖β‖₁` on centered data, starting at `beta`.
fn lasso_cd(c: &Centered, rows: usize, cols: usize, lambda: f64, beta: &mut [f64]) -> Result<()> {
    let n = rows as f64;
    let norms: Vec<f64> = (0..cols)
        .map(|j| (0..rows).map(|i| c.x[i * cols + j].powi(2)).sum::<f64>() / n)
        .collect();
    let mut resid: Vec<f64> = (0..rows)
        .map(|i| c.y[i] - (0..cols).map(|j| c.x[i * cols + j] * beta[j]).sum::<f64>())
        .collect();
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_delta: f64 = 0.0;
        for j in 0..cols {
            if norms[j] == 0.0 {
                beta[j] = 0.0;
                continue;
            }
            let old = beta[j];
            let rho = (0..rows).map(|i| c.x[i * cols + j] * resid[i]).sum::<f64>() / n + norms[j] * old;
            let new = soft_threshold(rho, lambda) / norms[j];
            if new != old {
                let delta = new - old;
                for i in 0..rows {
                    resid[i] -= c.x[i * cols + j] * delta;
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < LASSO_TOL {
            return Ok(());
        }
    }
    Err(BaselineError::NonConvergence {
        sweeps: LASSO_MAX_SWEEPS,
        residual_norm: resid.iter().map(|r| r * r).sum::<f64>().sqrt(),
    })
}

fn finish_fit(c: &Centered, d: &Design, beta: Vec<f64>, lambda: f64, method: Method) -> RegressionFit {
    let intercept = c.y_mean - beta.iter().zip(&c.x_mean).map(|(b, m)| b * m).sum::<f64>();
    RegressionFit {
        method,
        features: d.names.clone(),
        coefficients: beta,
        intercept,
        lambda,
    }
}

/// Lasso at a single penalty.
pub fn lasso_fit(d: &Design, y: &[f64], lambda: f64) -> Result<RegressionFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(BaselineError::InvalidPenalty(format!("lasso λ = {lambda}")));
    }
    let c = center(d, y)?;
    let mut beta = vec![0.0; d.cols];
    lasso_cd(&c, d.rows, d.cols, lambda, &mut beta)?;
    Ok(finish_fit(&c, d, beta, lambda, Method::Lasso))
}

/// Smallest penalty that zeroes every lasso coefficient: `max_j |x_jᵀ y| / n` on centered data.
pub fn lasso_lambda_max(d: &Design, y: &[f64]) -> Result<f64> {
    let c = center(d, y)?;
    let n = d.rows.max(1) as f64;
    Ok((0..d.cols)
        .map(|j| ((0..d.rows).map(|i| c.x[i * d.cols + j] * c.y[i]).sum::<f64>() / n).abs())
        .fold(0.0, f64::max))
}

/// `points` log-spaced values from `hi` down to `hi · ratio`.
pub fn log_grid(hi: f64, ratio: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![hi];
    }
    (0..points)
        .map(|i| hi * ratio.powf(i as f64 / (points - 1) as f64))
        .collect()
}

/// Contiguous, order-preserving folds of `rows` indices.
pub fn temporal_folds(rows: usize, folds: usize) -> Vec<std::ops::Range<usize>> {
    let k = folds.clamp(1, rows.max(1));
    (0..k).map(|f| f * rows / k..(f + 1) * rows / k).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub fit: RegressionFit,
    pub grid: Vec<f64>,
    pub mean_mse: Vec<f64>,
}

fn mse_on(fit: &RegressionFit, d: &Design, y: &[f64]) -> f64 {
    let pred = baseline_predict(fit, d);
    pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len().max(1) as f64
}

fn cv_select(
    d: &Design,
    y: &[f64],
    grid: &[f64],
    folds: usize,
    path: impl Fn(&Design, &[f64], &[f64]) -> Result<Vec<RegressionFit>>,
) -> Result<(usize, Vec<f64>)> {
    let mut total = vec![0.0; grid.len()];
    let parts = temporal_folds(d.rows, folds);
    for part in &parts {
        let train: Vec<usize> = (0..d.rows).filter(|i| !part.contains(i)).collect();
        let valid: Vec<usize> = part.clone().collect();
        let (dt, dv) = (d.subset(&train), d.subset(&valid));
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let yv: Vec<f64> = valid.iter().map(|&i| y[i]).collect();
        for (g, fit) in path(&dt, &yt, grid)?.iter().enumerate() {
            total[g] += mse_on(fit, &dv, &yv);
        }
    }
    let mean: Vec<f64> = total.iter().map(|t| t / parts.len() as f64).collect();
    let best = mean
        .iter()
        .enumerate()
        .fold(0, |b, (i, v)| if *v < mean[b] { i } else { b });
    Ok((best, mean))
}

fn lasso_path(d: &Design, y: &[f64], grid: &[f64]) -> Result<Vec<RegressionFit>> {
    let c = center(d, y)?;
    let mut beta = vec![0.0; d.cols];
    grid.iter()
        .map(|&l| {
            lasso_cd(&c, d.rows, d.cols, l, &mut beta)?;
            Ok(finish_fit(&c, d, beta.clone(), l, Method::Lasso))
        })
        .collect()
}

/// Lasso with the penalty chosen by temporal k-fold CV over a descending grid
/// (warm-started along the path). With no grid, 50 log-spaced points from
/// `lasso_lambda_max` down by a factor of 1000 are used.
pub fn lasso_fit_cv(d: &Design, y: &[f64], grid: Option<&[f64]>, folds: usize) -> Result<CvResult> {
    let grid = match grid {
        Some(g) => g.to_vec(),
        None => log_grid(lasso_lambda_max(d, y)?.max(1e-12), GRID_RATIO, DEFAULT_GRID_POINTS),
    };
    if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(BaselineError::InvalidPenalty("empty or negative grid".into()));
    }
    let (best, mean_mse) = cv_select(d, y, &grid, folds, lasso_path)?;
    let fit = lasso_path(d, y, &grid[..=best])?.pop().unwrap();
    Ok(CvResult { fit, grid, mean_mse })
}

/// Ridge with the penalty chosen by temporal k-fold CV. With no grid, 50
/// log-spaced points spanning `[1e−3, 1e3] · rows` are used.
pub fn ridge_fit_cv(d: &Design, y: &[f64], grid: Option<&[f64]>, folds: usize) -> Result<CvResult> {
    let grid = match grid {
        Some(g) => g.to_vec(),
        None => log_grid(1e3 * d.rows as f64, 1e-6, DEFAULT_GRID_POINTS),
    };
    if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(BaselineError::InvalidPenalty("empty or negative grid".into()));
    }
    let path = |d: &Design, y: &[f64], g: &[f64]| g.iter().map(|&l| ridge_fit(d, y, l)).collect();
    let (best, mean_mse) = cv_select(d, y, &grid, folds, path)?;
    let fit = ridge_fit(d, y, grid[best])?;
    Ok(CvResult { fit, grid, mean_mse })
}

/// `ŷ = Xβ + β₀`, used directly as the ranking score.
pub fn baseline_predict(fit: &RegressionFit, d: &Design) -> Vec<f64> {
    (0..d.rows)
        .map(|i| fit.intercept + d.row(i).iter().zip(&fit.coefficients).map(|(x, b)| x * b).sum::<f64>())
        .collect()
}

/// Named feature subsets for the linear baselines.
pub fn preset(name: &str) -> Result<Vec<String>> {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    Ok(match name {
        "mom3_volume" => s(&["mom_3", "volume"]),
        "mom3_rsi" => s(&["mom_3", "rsi"]),
        "mom3_sma50" => s(&["mom_3", "sma_50_ratio"]),
        "mom2_mom5" => s(&["mom_2", "mom_5"]),
        "basic" => s(&BASIC_FEATURES),
        "all" => BASIC_FEATURES.iter().chain(DEFAULT_TECHNICAL.iter()).map(|x| x.to_string()).collect(),
        other => return Err(BaselineError::UnknownPreset(other.to_string())),
    })
}

pub const PRESET_NAMES: [&str; 6] = ["mom3_volume", "mom3_rsi", "mom3_sma50", "mom2_mom5", "basic", "all"];

/// Fits one method with the default penalty selection.
pub fn fit_method(method: Method, d: &Design, y: &[f64]) -> Result<RegressionFit> {
    match method {
        Method::Ols => ols_fit(d, y),
        Method::Ridge => Ok(ridge_fit_cv(d, y, None, DEFAULT_FOLDS)?.fit),
        Method::Lasso => Ok(lasso_fit_cv(d, y, None, DEFAULT_FOLDS)?.fit),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_design(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Design {
        let n = Normal::new(0.0, 1.0).unwrap();
        Design::new(rows, cols, (0..rows * cols).map(|_| n.sample(rng)).collect()).unwrap()
    }

    #[test]
    fn ols_recovers_exact_line() {
        let d = Design::new(5, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let y = [2.0, 4.0, 6.0, 8.0, 10.0];
        let f = ols_fit(&d, &y).unwrap();
        assert!((f.coefficients[0] - 2.0).abs() < 1e-10);
        assert!(f.intercept.abs() < 1e-10);
    }

    #[test]
    fn ols_names_the_collinear_column() {
        let d = Design::new(4, 2, vec![1.0, 3.0, 2.0, 3.0, 3.0, 3.0, 4.0, 3.0])
            .unwrap()
            .with_names(vec!["mom_3".into(), "flat".into()]);
        let err = ols_fit(&d, &[0.1, -0.2, 0.3, 0.0]).unwrap_err();
        assert_eq!(err, BaselineError::RankDeficient { column: 1, name: "flat".into() });

        let d = Design::new(4, 2, vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]).unwrap();
        assert!(matches!(ols_fit(&d, &[1.0, 0.0, 1.0, 0.0]), Err(BaselineError::RankDeficient { column: 1, .. })));
        assert!(matches!(ols_fit(&Design::new(1, 1, vec![1.0]).unwrap(), &[1.0]), Err(BaselineError::TooFewSamples { .. })));
    }

    #[test]
    fn ridge_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_design(&mut rng, 40, 3);
        let y: Vec<f64> = (0..40).map(|i| d.row(i)[0] - 0.5 * d.row(i)[2] + rng.gen_range(-0.1..0.1)).collect();
        let o = ols_fit(&d, &y).unwrap();
        let r = ridge_fit(&d, &y, 0.0).unwrap();
        for (a, b) in o.coefficients.iter().zip(&r.coefficients) {
            assert!((a - b).abs() < 1e-10);
        }
        let big = ridge_fit(&d, &y, 1e12).unwrap();
        assert!(big.coefficients.iter().all(|b| b.abs() < 1e-9));
        assert!(ridge_fit(&d, &y, -1.0).is_err());

        // Single centered feature: β = Σxy / (Σx² + λ).
        let x = [-1.5, -0.5, 0.5, 1.5];
        let y = [0.3, -0.1, 0.4, 0.2];
        let d = Design::new(4, 1, x.to_vec()).unwrap();
        let ym = y.iter().sum::<f64>() / 4.0;
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * (b - ym)).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let f = ridge_fit(&d, &y, 2.5).unwrap();
        assert!((f.coefficients[0] - sxy / (sxx + 2.5)).abs() < 1e-10);
    }

    #[test]
    fn ridge_path_is_continuous() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = random_design(&mut rng, 60, 4);
        let y: Vec<f64> = (0..60).map(|i| d.row(i)[1] + rng.gen_range(-0.5..0.5)).collect();
        let grid = log_grid(1e3, 1e-6, 200);
        let fits: Vec<RegressionFit> = grid.iter().map(|&l| ridge_fit(&d, &y, l).unwrap()).collect();
        for w in fits.windows(2) {
            for (a, b) in w[0].coefficients.iter().zip(&w[1].coefficients) {
                assert!((a - b).abs() < 0.05);
            }
        }
    }

    /// Columns scaled so that `XᵀX / n = I` after centering.
    fn orthonormal_design(rows: usize) -> Design {
        let base = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let x = (0..rows).flat_map(|i| base[i % 4]).collect();
        Design::new(rows, 2, x).unwrap()
    }

    #[test]
    fn lasso_on_orthonormal_design_soft_thresholds_ols() {
        let d = orthonormal_design(8);
        let y = [0.9, 0.1, -0.4, -0.8, 1.1, 0.2, -0.5, -0.7];
        let o = ols_fit(&d, &y).unwrap();
        for lambda in [0.0, 0.1, 0.3, 0.5, 1.0] {
            let l = lasso_fit(&d, &y, lambda).unwrap();
            for (b, bo) in l.coefficients.iter().zip(&o.coefficients) {
                assert!((b - soft_threshold(*bo, lambda)).abs() < 1e-8, "λ {lambda}: {b} vs {bo}");
                if bo.abs() <= lambda {
                    assert_eq!(*b, 0.0);
                }
            }
        }
    }

    #[test]
    fn lasso_full_shrinkage() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_design(&mut rng, 30, 3);
        let y: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cv = lasso_fit_cv(&d, &y, Some(&[1e6, 1e5]), 5).unwrap();
        assert!(cv.fit.coefficients.iter().all(|b| *b == 0.0));
        assert!((cv.fit.intercept - y.iter().sum::<f64>() / 30.0).abs() < 1e-15);
        let lmax = lasso_lambda_max(&d, &y).unwrap();
        assert!(lasso_fit(&d, &y, lmax).unwrap().coefficients.iter().all(|b| *b == 0.0));
        assert!(lasso_fit(&d, &y, lmax * 0.9).unwrap().coefficients.iter().any(|b| *b != 0.0));
    }

    fn kkt_violation(d: &Design, y: &[f64], f: &RegressionFit) -> f64 {
        let n = d.rows as f64;
        let pred = baseline_predict(f, d);
        let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
        (0..d.cols)
            .map(|j| {
                let g = (0..d.rows).map(|i| d.row(i)[j] * resid[i]).sum::<f64>() / n;
                if f.coefficients[j] == 0.0 {
                    (g.abs() - f.lambda).max(0.0)
                } else {
                    (g - f.lambda * f.coefficients[j].signum()).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn lasso_satisfies_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let d = random_design(&mut rng, 80, 6);
            let y: Vec<f64> = (0..80).map(|i| 0.8 * d.row(i)[0] - 0.3 * d.row(i)[3] + rng.gen_range(-0.5..0.5)).collect();
            let lambda = lasso_lambda_max(&d, &y).unwrap() * rng.gen_range(0.01..0.9);
            let f = lasso_fit(&d, &y, lambda).unwrap();
            assert!(kkt_violation(&d, &y, &f) < 1e-6);
        }
    }

    #[test]
    fn lasso_recovers_planted_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_design(&mut rng, 600, 28);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let y: Vec<f64> = (0..600)
            .map(|i| 1.0 * d.row(i)[2] - 0.7 * d.row(i)[11] + 0.5 * d.row(i)[20] + noise.sample(&mut rng))
            .collect();
        let cv = lasso_fit_cv(&d, &y, None, 5).unwrap();
        let c = &cv.fit.coefficients;
        assert!((c[2] - 1.0).abs() < 0.02 && (c[11] + 0.7).abs() < 0.02 && (c[20] - 0.5).abs() < 0.02, "{c:?}");
        let zeros = (0..28).filter(|j| ![2, 11, 20].contains(j) && c[*j] == 0.0).count();
        assert!(zeros >= 15, "{c:?}");
        assert!((0..28).filter(|j| ![2, 11, 20].contains(j)).all(|j| c[j].abs() < 0.01));
    }

    #[test]
    fn folds_are_contiguous_and_cover() {
        let f = temporal_folds(12, 5);
        assert_eq!(f.len(), 5);
        assert_eq!(f[0].start, 0);
        assert_eq!(f[4].end, 12);
        for w in f.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
    }

    #[test]
    fn predict_examples() {
        let d = Design::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let f = RegressionFit { method: Method::Ols, features: vec![], coefficients: vec![0.5, -1.0], intercept: 0.25, lambda: 0.0 };
        assert_eq!(baseline_predict(&f, &d), vec![0.25 + 0.5 - 2.0, 0.25 + 1.5 - 4.0]);
        let z = RegressionFit { coefficients: vec![0.0, 0.0], ..f.clone() };
        assert_eq!(baseline_predict(&z, &d), vec![0.25, 0.25]);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("feature,coefficient\nintercept,0.25\n"));
    }

    #[test]
    fn presets() {
        assert_eq!(preset("mom3_volume").unwrap(), vec!["mom_3", "volume"]);
        assert_eq!(preset("basic").unwrap().len(), 12);
        assert_eq!(preset("all").unwrap().len(), 28);
        assert!(preset("nope").is_err());
        for p in PRESET_NAMES {
            assert!(preset(p).is_ok());
        }
    }
}
