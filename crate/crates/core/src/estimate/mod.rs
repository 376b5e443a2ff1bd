//! Penalized negative-binomial regression.
//!
//! Three nested loops: penalized IRLS for the coefficients at fixed
//! smoothing parameters and `theta`, a Fellner-Schall update of the
//! smoothing parameters, and a Newton step on `log theta` at the current
//! fitted means. The outer loop alternates until nothing moves.

pub mod nb;

use log::{debug, warn};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::matrix::{ModelMatrix, StoredMatrix};
use crate::design::{BlockKind, Design, DesignLayout, DesignRow, FixedColumn, ModelSpec, PenaltyBlock};
pub use nb::{nb_deviance, nb_loglik, nb_logpmf};

pub const THETA_MIN: f64 = 1e-8;
pub const THETA_MAX: f64 = 1e4;
pub const LAMBDA_MIN: f64 = 1e-8;
pub const LAMBDA_MAX: f64 = 1e10;
pub const MODEL_FORMAT_VERSION: u32 = 1;

const MAX_HALVINGS: usize = 5;
const ETA_LIMIT: f64 = 700.0;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("penalized IRLS diverged at iteration {0}: deviance still increased after {MAX_HALVINGS} step halvings")]
    Diverged(usize),
    #[error("penalized information is not positive definite ({0})")]
    RankDeficient(String),
    #[error("every response is zero")]
    NoSignal,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("model file format version {found} is not supported (expected {MODEL_FORMAT_VERSION})")]
    Version { found: u32 },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThetaMode {
    Estimate,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaMode {
    Estimate,
    /// One value per penalty block, in block order.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub theta: ThetaMode,
    pub lambda: LambdaMode,
    pub theta_start: f64,
    pub max_inner: usize,
    pub inner_tol: f64,
    pub max_outer: usize,
    pub outer_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            theta: ThetaMode::Estimate,
            lambda: LambdaMode::Estimate,
            theta_start: 0.1,
            max_inner: 200,
            inner_tol: 1e-8,
            max_outer: 50,
            outer_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Max-abs penalized score at the returned coefficients.
    pub gradient_norm: f64,
    pub theta_at_boundary: bool,
    pub deviance: f64,
    pub penalized_deviance: f64,
    pub log_likelihood: f64,
    pub total_edf: f64,
}

/// Result of [`fit_matrix`].
#[derive(Debug, Clone)]
pub struct MatrixFit {
    pub beta: DVector<f64>,
    pub lambdas: Vec<f64>,
    pub theta: f64,
    /// Inverse penalized information.
    pub covariance: DMatrix<f64>,
    /// Effective degrees of freedom per penalty block.
    pub edf: Vec<f64>,
    pub mu: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

struct Problem<'a> {
    x: &'a ModelMatrix,
    y: &'a [f64],
    offset: &'a [f64],
    penalties: &'a [PenaltyBlock],
}

struct Inner {
    beta: DVector<f64>,
    mu: Vec<f64>,
    iterations: usize,
}

impl Problem<'_> {
    fn p(&self) -> usize {
        self.x.ncols()
    }

    fn penalty_matrix(&self, lambdas: &[f64]) -> DMatrix<f64> {
        let p = self.p();
        let mut s = DMatrix::zeros(p, p);
        for (b, &l) in self.penalties.iter().zip(lambdas) {
            let q = b.len();
            let mut view = s.view_mut((b.start, b.start), (q, q));
            view += &b.matrix * l;
        }
        s
    }

    fn penalty_value(&self, beta: &DVector<f64>, lambdas: &[f64]) -> f64 {
        self.penalties
            .iter()
            .zip(lambdas)
            .map(|(b, &l)| {
                let bj = beta.rows(b.start, b.len());
                l * bj.dot(&(&b.matrix * bj))
            })
            .sum()
    }

    fn mu(&self, beta: &DVector<f64>) -> Vec<f64> {
        self.x
            .mul_vec(beta.as_slice())
            .iter()
            .zip(self.offset)
            .map(|(e, o)| (e + o).clamp(-ETA_LIMIT, ETA_LIMIT).exp())
            .collect()
    }

    fn penalized_deviance(&self, beta: &DVector<f64>, mu: &[f64], theta: f64, lambdas: &[f64]) -> f64 {
        nb_deviance(self.y, mu, theta) + self.penalty_value(beta, lambdas)
    }

    fn information(&self, mu: &[f64], theta: f64) -> DMatrix<f64> {
        let w: Vec<f64> = mu.iter().map(|&m| nb::fisher_weight(m, theta)).collect();
        self.x.weighted_gram(&w)
    }

    fn factor(h: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, EstimateError> {
        let p = h.nrows();
        Cholesky::new(h).ok_or_else(|| {
            EstimateError::RankDeficient(format!("Cholesky factorization of the {p}x{p} system failed"))
        })
    }

    /// `X'(score) - S beta`.
    fn penalized_score(&self, beta: &DVector<f64>, mu: &[f64], theta: f64, s: &DMatrix<f64>) -> DVector<f64> {
        let u: Vec<f64> = self.y.iter().zip(mu).map(|(&y, &m)| nb::score_eta(y, m, theta)).collect();
        self.x.tr_mul_vec(&u) - s * beta
    }

    fn pirls(&self, start: &DVector<f64>, lambdas: &[f64], theta: f64, opts: &FitOptions) -> Result<Inner, EstimateError> {
        let s = self.penalty_matrix(lambdas);
        let mut beta = start.clone();
        let mut mu = self.mu(&beta);
        let mut pd = self.penalized_deviance(&beta, &mu, theta, lambdas);
        for it in 1..=opts.max_inner {
            let w: Vec<f64> = mu.iter().map(|&m| nb::fisher_weight(m, theta)).collect();
            let eta = self.x.mul_vec(beta.as_slice());
            let wz: Vec<f64> = (0..w.len())
                .map(|i| w[i] * eta[i] + nb::score_eta(self.y[i], mu[i], theta))
                .collect();
            let h = self.x.weighted_gram(&w) + &s;
            let target = Self::factor(h.clone())?.solve(&self.x.tr_mul_vec(&wz));
            let step = target - &beta;

            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let cand = &beta + &step * t;
                let cand_mu = self.mu(&cand);
                let cand_pd = self.penalized_deviance(&cand, &cand_mu, theta, lambdas);
                if cand_pd.is_finite() && cand_pd <= pd + 1e-12 * pd.abs().max(1.0) {
                    accepted = Some((cand, cand_mu, cand_pd));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, cand_mu, cand_pd)) = accepted else {
                // predicted decrease below the rounding noise of the deviance sum
                let decrement = step.dot(&(&h * &step));
                if decrement < 1e-8 * (pd.abs() + 1.0) {
                    return Ok(Inner { beta, mu, iterations: it });
                }
                return Err(EstimateError::Diverged(it));
            };
            let rel = (pd - cand_pd).abs() / (cand_pd.abs() + 0.1);
            let moved = (&step * t).amax();
            beta = cand;
            mu = cand_mu;
            pd = cand_pd;
            if rel < opts.inner_tol && moved < 1e-8 * (1.0 + beta.amax()) {
                return Ok(Inner { beta, mu, iterations: it });
            }
        }
        debug!("penalized IRLS hit {} iterations", opts.max_inner);
        Ok(Inner { beta, mu, iterations: opts.max_inner })
    }
}

fn update_log_theta(y: &[f64], mu: &[f64], theta: f64) -> f64 {
    let (lo, hi) = (THETA_MIN.ln(), THETA_MAX.ln());
    let mut rho = theta.ln().clamp(lo, hi);
    for _ in 0..50 {
        let (g, h) = nb::log_theta_derivatives(y, mu, rho.exp());
        let step = if h < 0.0 { -g / h } else { g.signum() };
        let next = (rho + step.clamp(-3.0, 3.0)).clamp(lo, hi);
        let done = (next - rho).abs() < 1e-10;
        rho = next;
        if done {
            break;
        }
    }
    rho.exp()
}

fn is_intercept(x: &ModelMatrix) -> bool {
    x.p_fixed() > 0 && (0..x.nrows()).all(|i| x.fixed_row(i)[0] == 1.0)
}

/// Fits `y ~ NB2(exp(X beta + offset), theta)` with block penalties.
pub fn fit_matrix(
    x: &ModelMatrix,
    y: &[f64],
    offset: &[f64],
    penalties: &[PenaltyBlock],
    opts: &FitOptions,
) -> Result<MatrixFit, EstimateError> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n || offset.len() != n {
        return Err(EstimateError::InvalidInput(format!(
            "{n} design rows but {} responses and {} offsets",
            y.len(),
            offset.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite() || *v < 0.0) || offset.iter().any(|v| !v.is_finite()) {
        return Err(EstimateError::InvalidInput("responses must be finite and non-negative, offsets finite".into()));
    }
    if y.iter().all(|&v| v == 0.0) {
        return Err(EstimateError::NoSignal);
    }
    for b in penalties {
        if b.start + b.len() > p {
            return Err(EstimateError::InvalidInput("penalty block exceeds coefficient vector".into()));
        }
    }
    let mut lambdas = match &opts.lambda {
        LambdaMode::Estimate => vec![1.0; penalties.len()],
        LambdaMode::Fixed(v) if v.len() == penalties.len() && v.iter().all(|&l| l >= 0.0) => v.clone(),
        LambdaMode::Fixed(v) => {
            return Err(EstimateError::InvalidInput(format!(
                "{} fixed smoothing parameters for {} penalty blocks",
                v.len(),
                penalties.len()
            )))
        }
    };
    let mut theta = match opts.theta {
        ThetaMode::Estimate => opts.theta_start.clamp(THETA_MIN, THETA_MAX),
        ThetaMode::Fixed(t) if t > 0.0 => t,
        ThetaMode::Fixed(t) => return Err(EstimateError::InvalidInput(format!("theta must be positive, got {t}"))),
    };
    let estimate_lambda = opts.lambda == LambdaMode::Estimate && !penalties.is_empty();
    let estimate_theta = opts.theta == ThetaMode::Estimate;

    let problem = Problem { x, y, offset, penalties };
    let mut beta = DVector::zeros(p);
    if is_intercept(x) {
        let mean_y = y.iter().sum::<f64>() / n as f64;
        let mean_pop = offset.iter().map(|o| o.exp()).sum::<f64>() / n as f64;
        beta[0] = (mean_y / mean_pop).ln();
    }

    let mut inner_total = 0;
    let mut outer = 0;
    let mut converged = false;
    let mut last_pd = f64::NAN;
    let mut change = f64::INFINITY;
    let mut last_edf: Vec<f64> = Vec::new();
    let mut last_step = vec![0.0f64; penalties.len()];
    let mut stretch = vec![1.0f64; penalties.len()];
    let mu = loop {
        outer += 1;
        let fit = problem.pirls(&beta, &lambdas, theta, opts)?;
        inner_total += fit.iterations;
        beta = fit.beta;
        let mu = fit.mu;
        if !estimate_lambda && !estimate_theta {
            converged = true;
            break mu;
        }
        let pd = problem.penalized_deviance(&beta, &mu, theta, &lambdas);
        if !last_pd.is_nan() {
            change = change.max((pd - last_pd).abs() / (pd.abs() + 0.1));
        }
        last_pd = pd;
        if outer > 1 && change < opts.outer_tol {
            converged = true;
            break mu;
        }
        if outer >= opts.max_outer {
            warn!("outer loop did not converge within {} iterations", opts.max_outer);
            break mu;
        }

        change = 0.0;
        if estimate_lambda {
            let h = problem.information(&mu, theta) + problem.penalty_matrix(&lambdas);
            let v = Problem::factor(h)?.inverse();
            let mut edf_now = Vec::with_capacity(penalties.len());
            for (j, b) in penalties.iter().enumerate() {
                let q = b.len();
                let vjj = v.view((b.start, b.start), (q, q));
                let tr = (vjj * &b.matrix).trace();
                let bj = beta.rows(b.start, q);
                let quad = bj.dot(&(&b.matrix * bj));
                let num = (b.rank as f64 - lambdas[j] * tr).max(1e-6);
                let raw = if quad > 0.0 { num / quad } else { LAMBDA_MAX };
                // the plain update creeps when a block drifts towards its null
                // space; stretch repeated same-sign steps on the log scale
                let step = raw.clamp(LAMBDA_MIN, LAMBDA_MAX).ln() - lambdas[j].ln();
                if step * last_step[j] > 0.0 {
                    stretch[j] = (stretch[j] * 2.0).min(16.0);
                } else {
                    stretch[j] = 1.0;
                }
                last_step[j] = step;
                let next = (lambdas[j].ln() + stretch[j] * step).exp().clamp(LAMBDA_MIN, LAMBDA_MAX);
                // convergence is judged on the penalized degrees of freedom,
                // which settle even while a vanishing block's lambda keeps growing
                if let Some(prev) = last_edf.get(j) {
                    change = change.max((num - prev).abs() / (1.0 + num));
                }
                edf_now.push(num);
                lambdas[j] = next;
            }
            if last_edf.is_empty() {
                change = f64::INFINITY;
            }
            last_edf = edf_now;
        }
        if estimate_theta {
            let next = update_log_theta(y, &mu, theta);
            change = change.max((next.ln() - theta.ln()).abs());
            theta = next;
        }
        debug!("outer {outer}: theta {theta:.5}, lambdas {lambdas:?}, change {change:.2e}");
    };

    let info = problem.information(&mu, theta);
    let s = problem.penalty_matrix(&lambdas);
    let v = Problem::factor(&info + &s)?.inverse();
    let v = (&v + v.transpose()) * 0.5;
    let hat = &v * &info;
    let edf = penalties
        .iter()
        .map(|b| (b.start..b.start + b.len()).map(|i| hat[(i, i)]).sum())
        .collect();
    let gradient_norm = problem.penalized_score(&beta, &mu, theta, &s).amax();
    let deviance = nb_deviance(y, &mu, theta);
    let diagnostics = FitDiagnostics {
        inner_iterations: inner_total,
        outer_iterations: outer,
        converged,
        gradient_norm,
        theta_at_boundary: estimate_theta && (theta <= THETA_MIN * (1.0 + 1e-9) || theta >= THETA_MAX * (1.0 - 1e-9)),
        deviance,
        penalized_deviance: deviance + problem.penalty_value(&beta, &lambdas),
        log_likelihood: nb_loglik(y, &mu, theta),
        total_edf: hat.trace(),
    };
    if diagnostics.theta_at_boundary {
        warn!("theta pinned at its bound ({theta:e})");
    }
    Ok(MatrixFit { beta, lambdas, theta, covariance: v, edf, mu, diagnostics })
}

/// Log-likelihood of a coefficient vector at fixed `theta`.
pub fn loglik(x: &ModelMatrix, y: &[f64], offset: &[f64], beta: &[f64], theta: f64) -> f64 {
    let eta = x.mul_vec(beta);
    let mu: Vec<f64> = eta.iter().zip(offset).map(|(e, o)| (e + o).exp()).collect();
    nb_loglik(y, &mu, theta)
}

/// Analytic gradient of [`loglik`] in the coefficients and in `log theta`.
pub fn loglik_gradient(x: &ModelMatrix, y: &[f64], offset: &[f64], beta: &[f64], theta: f64) -> (DVector<f64>, f64) {
    let eta = x.mul_vec(beta);
    let mu: Vec<f64> = eta.iter().zip(offset).map(|(e, o)| (e + o).exp()).collect();
    let u: Vec<f64> = y.iter().zip(&mu).map(|(&y, &m)| nb::score_eta(y, m, theta)).collect();
    (x.tr_mul_vec(&u), nb::log_theta_derivatives(y, &mu, theta).0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParameter {
    pub block: BlockKind,
    pub lambda: f64,
    pub edf: f64,
}

/// A fitted model, self-contained enough to predict without the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub format_version: u32,
    pub layout: DesignLayout,
    pub column_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub smoothing: Vec<SmoothingParameter>,
    pub theta: f64,
    pub covariance: StoredMatrix,
    pub n_observations: usize,
    pub diagnostics: FitDiagnostics,
}

impl FittedModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.layout.spec
    }

    pub fn anchor(&self) -> chrono::NaiveDate {
        self.layout.anchor
    }

    pub fn block_coefficients(&self, kind: BlockKind) -> Option<&[f64]> {
        self.layout.block(kind).map(|b| &self.coefficients[b.start..b.start + b.len])
    }

    pub fn fixed_coefficient(&self, column: FixedColumn) -> Option<f64> {
        self.layout.fixed.iter().position(|c| *c == column).map(|i| self.coefficients[i])
    }

    /// Time-AR coefficient, zero when the term is absent.
    pub fn phi(&self) -> f64 {
        self.fixed_coefficient(FixedColumn::ArTime).unwrap_or(0.0)
    }

    /// Delay-AR coefficient, zero when the term is absent.
    pub fn delta(&self) -> f64 {
        self.fixed_coefficient(FixedColumn::ArDelay).unwrap_or(0.0)
    }

    pub fn linear_predictor(&self, row: &DesignRow) -> f64 {
        linear_predictor(self, row)
    }

    pub fn to_json(&self) -> Result<String, EstimateError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, EstimateError> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(s)?;
        if header.format_version != MODEL_FORMAT_VERSION {
            return Err(EstimateError::Version { found: header.format_version });
        }
        Ok(serde_json::from_str(s)?)
    }
}

/// `eta = x' beta + offset` for one row.
pub fn linear_predictor(model: &FittedModel, row: &DesignRow) -> f64 {
    model.layout.linear_predictor(&model.coefficients, row)
}

/// Fits the design's model. The fit is deterministic, so there is no seed.
pub fn fit(design: &Design, opts: &FitOptions) -> Result<FittedModel, EstimateError> {
    let penalties = design.penalties();
    let m = fit_matrix(&design.matrix, &design.y, &design.offset, &penalties, opts)?;
    let smoothing = design
        .layout
        .blocks
        .iter()
        .filter(|b| b.penalty.is_some())
        .zip(m.lambdas.iter().zip(&m.edf))
        .map(|(b, (&lambda, &edf))| SmoothingParameter { block: b.kind, lambda, edf })
        .collect();
    Ok(FittedModel {
        format_version: MODEL_FORMAT_VERSION,
        layout: design.layout.clone(),
        column_names: design.layout.column_names(),
        coefficients: m.beta.as_slice().to_vec(),
        smoothing,
        theta: m.theta,
        covariance: StoredMatrix::from(&m.covariance),
        n_observations: design.rows.len(),
        diagnostics: m.diagnostics,
    })
}
