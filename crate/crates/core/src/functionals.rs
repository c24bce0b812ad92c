//! Risk minimizers: least squares and multinomial logistic regression on a
//! `[1 x]` design, with collinearity pruning to keep the minimizer identifiable.
//!
//! Logistic parameters fix the first class at zero, so `theta` stacks one
//! block of active coefficients per class `1..K`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EncodedResponse, ResponseValue};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("design is rank deficient (smallest/largest singular value {0:.3e})")]
    RankDeficient(f64),
    #[error("collinearity pruning removed every feature column")]
    AllPruned,
    #[error("class {0} never occurs and damping is zero")]
    MissingClass(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{loss} loss cannot be fitted to a {response} response")]
    ResponseKind { loss: &'static str, response: &'static str },
    #[error("non-finite value encountered while fitting")]
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    MultinomialNll { classes: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Active design columns; index 0 is the intercept and is always kept.
    pub mask: Vec<bool>,
    pub damping: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub converged: bool,
    pub gradient_norm: f64,
    pub iterations: usize,
}

pub const DEFAULT_CONDITION_THRESHOLD: f64 = 1e8;
pub const DEFAULT_DAMPING: f64 = 1e-8;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_NEWTON_ITERATIONS: usize = 200;

impl LossSpec {
    pub fn squared_error(width: usize) -> Self {
        Self { kind: LossKind::SquaredError, mask: vec![true; width], damping: 0.0 }
    }

    pub fn multinomial(width: usize, classes: usize) -> Self {
        Self { kind: LossKind::MultinomialNll { classes }, mask: vec![true; width], damping: DEFAULT_DAMPING }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Self {
        self.mask = mask;
        self
    }

    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    pub fn active_columns(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(j, _)| j).collect()
    }

    /// Dimension of `theta`.
    pub fn dim(&self) -> usize {
        let q = self.active_columns().len();
        match self.kind {
            LossKind::SquaredError => q,
            LossKind::MultinomialNll { classes } => q * (classes - 1),
        }
    }

    /// Names for the coordinates of `theta`, given the full design's column names.
    pub fn coordinate_names(&self, column_names: &[String]) -> Vec<String> {
        let active: Vec<&String> = self.active_columns().into_iter().map(|j| &column_names[j]).collect();
        match self.kind {
            LossKind::SquaredError => active.into_iter().cloned().collect(),
            LossKind::MultinomialNll { classes } => (1..classes)
                .flat_map(|k| active.iter().map(move |c| format!("class{k}:{c}")))
                .collect(),
        }
    }

    fn wrong_response(&self) -> FitError {
        match self.kind {
            LossKind::SquaredError => FitError::ResponseKind { loss: "squared-error", response: "categorical" },
            LossKind::MultinomialNll { .. } => FitError::ResponseKind { loss: "multinomial", response: "continuous" },
        }
    }

    /// Minimizer over a full design (intercept in column 0).
    pub fn fit(&self, x: &DMatrix<f64>, y: &EncodedResponse) -> Result<FitResult, FitError> {
        if x.ncols() != self.mask.len() {
            return Err(FitError::Dimension(format!("design width {} vs mask {}", x.ncols(), self.mask.len())));
        }
        let active = self.active_columns();
        let xa = x.select_columns(&active);
        match (self.kind, y) {
            (LossKind::SquaredError, EncodedResponse::Continuous(v)) => fit_linear(&xa, v),
            (LossKind::MultinomialNll { classes }, EncodedResponse::Classes { labels, .. }) => {
                fit_logistic(&xa, labels, classes, &LogisticOptions { damping: self.damping, ..Default::default() })
            }
            _ => Err(self.wrong_response()),
        }
    }

    /// Minimizer over flat row-major feature rows (no intercept column) and
    /// their responses. `warm` seeds iterative solvers.
    pub fn fit_rows(
        &self,
        features: &[f64],
        width: usize,
        responses: &[ResponseValue],
        warm: Option<&[f64]>,
    ) -> Result<FitResult, FitError> {
        if width + 1 != self.mask.len() {
            return Err(FitError::Dimension(format!("feature width {} vs mask {}", width, self.mask.len())));
        }
        let n = responses.len();
        if features.len() != n * width {
            return Err(FitError::Dimension("feature buffer does not match response count".into()));
        }
        let active = self.active_columns();
        let xa = DMatrix::from_fn(n, active.len(), |i, c| match active[c] {
            0 => 1.0,
            j => features[i * width + j - 1],
        });
        match self.kind {
            LossKind::SquaredError => {
                let y = responses
                    .iter()
                    .map(|r| match r {
                        ResponseValue::Continuous(v) => Ok(*v),
                        ResponseValue::Class(_) => Err(self.wrong_response()),
                    })
                    .collect::<Result<Vec<f64>, _>>()?;
                fit_linear(&xa, &y)
            }
            LossKind::MultinomialNll { classes } => {
                let labels = responses
                    .iter()
                    .map(|r| match r {
                        ResponseValue::Class(k) => Ok(*k),
                        ResponseValue::Continuous(_) => Err(self.wrong_response()),
                    })
                    .collect::<Result<Vec<usize>, _>>()?;
                let opts = LogisticOptions { damping: self.damping, ..Default::default() };
                fit_logistic_from(&xa, &labels, classes, &opts, warm)
            }
        }
    }
}

/// Ratio of extreme singular values.
pub fn condition_number(x: &DMatrix<f64>) -> f64 {
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Drops non-intercept columns one at a time, each time the one loading most
/// heavily on the least-variance principal component of the remaining
/// non-intercept columns, until the masked design's condition number is at
/// most `threshold`.
pub fn prune_collinear(x: &DMatrix<f64>, threshold: f64) -> Result<Vec<bool>, FitError> {
    let p = x.ncols();
    if p < 2 {
        return Err(FitError::Dimension("pruning needs an intercept and at least one feature".into()));
    }
    let mut mask = vec![true; p];
    loop {
        let active: Vec<usize> = (0..p).filter(|&j| mask[j]).collect();
        if condition_number(&x.select_columns(&active)) <= threshold {
            return Ok(mask);
        }
        let features: Vec<usize> = active.iter().copied().filter(|&j| j != 0).collect();
        if features.is_empty() {
            return Err(FitError::AllPruned);
        }
        let mut centred = x.select_columns(&features);
        for mut col in centred.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        let cov = centred.transpose() * &centred / (x.nrows().max(2) - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let smallest = eig.eigenvalues.imin();
        let loadings = eig.eigenvectors.column(smallest);
        let mut drop = 0;
        for (c, l) in loadings.iter().enumerate() {
            if l.abs() > loadings[drop].abs() + 1e-12 {
                drop = c;
            }
        }
        mask[features[drop]] = false;
        if !mask.iter().skip(1).any(|&m| m) {
            return Err(FitError::AllPruned);
        }
    }
}

/// Least squares through a thin QR followed by an SVD of the triangular
/// factor, with residual refinement until the normal-equation gradient
/// satisfies the tolerance.
pub fn fit_linear(x: &DMatrix<f64>, y: &[f64]) -> Result<FitResult, FitError> {
    let (n, q) = x.shape();
    if y.len() != n {
        return Err(FitError::Dimension(format!("{} rows vs {} responses", n, y.len())));
    }
    if n < q {
        return Err(FitError::RankDeficient(0.0));
    }
    let yv = DVector::from_column_slice(y);
    let qr = x.clone().qr();
    let r = qr.r();
    let svd = r.svd(true, true);
    let sv = &svd.singular_values;
    let ratio = sv.min() / sv.max();
    if !(ratio > 1e-13) {
        return Err(FitError::RankDeficient(ratio));
    }
    let (u, vt) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let solve = |b: &DVector<f64>| -> DVector<f64> {
        let mut qtb = b.clone();
        qr.q_tr_mul(&mut qtb);
        let top = qtb.rows(0, q);
        let mut w = u.transpose() * top;
        for (wi, s) in w.iter_mut().zip(sv.iter()) {
            *wi /= s;
        }
        vt.transpose() * w
    };
    let mut theta = solve(&yv);
    let tolerance = GRADIENT_TOLERANCE * (1.0 + yv.norm());
    let mut gradient_norm = f64::INFINITY;
    let mut iterations = 0;
    for _ in 0..3 {
        iterations += 1;
        let residual = &yv - x * &theta;
        gradient_norm = (x.transpose() * &residual).norm();
        if gradient_norm <= tolerance {
            break;
        }
        theta += solve(&residual);
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    Ok(FitResult {
        theta: theta.as_slice().to_vec(),
        converged: gradient_norm <= tolerance,
        gradient_norm,
        iterations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticOptions {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self { damping: DEFAULT_DAMPING, tolerance: GRADIENT_TOLERANCE, max_iterations: MAX_NEWTON_ITERATIONS }
    }
}

fn log_sum_exp_with_zero(eta: &[f64]) -> f64 {
    let m = eta.iter().fold(0.0f64, |a, &b| a.max(b));
    let s = (-m).exp() + eta.iter().map(|e| (e - m).exp()).sum::<f64>();
    m + s.ln()
}

/// Damped multinomial negative log-likelihood and its gradient. Row `i` of
/// `x` is the active design row; `theta` holds `classes - 1` blocks.
pub fn multinomial_nll(
    x: &DMatrix<f64>,
    labels: &[usize],
    classes: usize,
    theta: &[f64],
    damping: f64,
) -> (f64, Vec<f64>) {
    let (n, q) = x.shape();
    let b = classes - 1;
    let mut value = 0.5 * damping * theta.iter().map(|t| t * t).sum::<f64>();
    let mut grad: Vec<f64> = theta.iter().map(|t| damping * t).collect();
    let mut eta = vec![0.0; b];
    for i in 0..n {
        for (k, e) in eta.iter_mut().enumerate() {
            *e = (0..q).map(|j| x[(i, j)] * theta[k * q + j]).sum();
        }
        let lse = log_sum_exp_with_zero(&eta);
        let y = labels[i];
        value += lse - if y == 0 { 0.0 } else { eta[y - 1] };
        for k in 0..b {
            let p = (eta[k] - lse).exp() - if y == k + 1 { 1.0 } else { 0.0 };
            for j in 0..q {
                grad[k * q + j] += p * x[(i, j)];
            }
        }
    }
    (value, grad)
}

pub fn fit_logistic(
    x: &DMatrix<f64>,
    labels: &[usize],
    classes: usize,
    opts: &LogisticOptions,
) -> Result<FitResult, FitError> {
    fit_logistic_from(x, labels, classes, opts, None)
}

fn check_labels(n: usize, labels: &[usize], classes: usize, damping: f64) -> Result<(), FitError> {
    if labels.len() != n {
        return Err(FitError::Dimension(format!("{} rows vs {} labels", n, labels.len())));
    }
    if classes < 2 {
        return Err(FitError::Dimension("need at least two classes".into()));
    }
    let mut seen = vec![false; classes];
    for &y in labels {
        if y >= classes {
            return Err(FitError::Dimension(format!("label {y} outside 0..{classes}")));
        }
        seen[y] = true;
    }
    if damping == 0.0 {
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(FitError::MissingClass(k));
        }
    }
    Ok(())
}

/// Near the optimum the predicted decrease drops below the rounding error of
/// the objective, which then cannot rank trial points; the gradient still can.
fn flat(slope: f64, value: f64) -> bool {
    -slope <= 1e3 * f64::EPSILON * (1.0 + value.abs())
}

/// Damped Newton with Armijo backtracking; falls back to the gradient
/// direction when the Hessian is not numerically positive definite.
pub fn fit_logistic_from(
    x: &DMatrix<f64>,
    labels: &[usize],
    classes: usize,
    opts: &LogisticOptions,
    init: Option<&[f64]>,
) -> Result<FitResult, FitError> {
    let (n, q) = x.shape();
    check_labels(n, labels, classes, opts.damping)?;
    let b = classes - 1;
    let dim = q * b;
    let mut theta = match init {
        Some(t) if t.len() == dim && t.iter().all(|v| v.is_finite()) => t.to_vec(),
        _ => vec![0.0; dim],
    };
    let objective = |t: &[f64]| multinomial_nll(x, labels, classes, t, opts.damping);
    let (mut value, mut grad) = objective(&theta);
    let mut iterations = 0;
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();

    while norm(&grad) > opts.tolerance && iterations < opts.max_iterations {
        iterations += 1;
        let hessian = multinomial_hessian(x, classes, &theta, opts.damping);
        let g = DVector::from_column_slice(&grad);
        let direction = match hessian.cholesky() {
            Some(ch) => {
                let d = -ch.solve(&g);
                if d.dot(&g) < 0.0 && d.iter().all(|v| v.is_finite()) {
                    d
                } else {
                    -g.clone()
                }
            }
            None => -g.clone(),
        };
        let slope = direction.dot(&g);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(direction.iter()).map(|(t, d)| t + step * d).collect();
            let (tv, tg) = objective(&trial);
            if tv.is_finite()
                && (tv <= value + 1e-4 * step * slope || (flat(slope, value) && norm(&tg) < norm(&grad)))
            {
                theta = trial;
                value = tv;
                grad = tg;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no decrease representable in floating point: stationary to rounding
            break;
        }
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let gradient_norm = norm(&grad);
    Ok(FitResult { theta, converged: gradient_norm <= opts.tolerance, gradient_norm, iterations })
}

fn multinomial_hessian(x: &DMatrix<f64>, classes: usize, theta: &[f64], damping: f64) -> DMatrix<f64> {
    let (n, q) = x.shape();
    let b = classes - 1;
    let dim = q * b;
    let mut h = DMatrix::zeros(dim, dim);
    let mut eta = vec![0.0; b];
    let mut p = vec![0.0; b];
    for i in 0..n {
        for (k, e) in eta.iter_mut().enumerate() {
            *e = (0..q).map(|j| x[(i, j)] * theta[k * q + j]).sum();
        }
        let lse = log_sum_exp_with_zero(&eta);
        for k in 0..b {
            p[k] = (eta[k] - lse).exp();
        }
        for k in 0..b {
            for l in k..b {
                let w = if k == l { p[k] * (1.0 - p[k]) } else { -p[k] * p[l] };
                if w == 0.0 {
                    continue;
                }
                for a in 0..q {
                    let xa = w * x[(i, a)];
                    for c in 0..q {
                        h[(k * q + a, l * q + c)] += xa * x[(i, c)];
                    }
                }
            }
        }
    }
    for k in 0..b {
        for l in (k + 1)..b {
            for a in 0..q {
                for c in 0..q {
                    h[(l * q + c, k * q + a)] = h[(k * q + a, l * q + c)];
                }
            }
        }
    }
    for d in 0..dim {
        h[(d, d)] += damping;
    }
    h
}

/// Two-class logistic regression by iteratively reweighted least squares,
/// parameterized directly by the class-1 log-odds coefficients.
pub fn fit_binary_logistic(x: &DMatrix<f64>, labels: &[usize], opts: &LogisticOptions) -> Result<FitResult, FitError> {
    let (n, q) = x.shape();
    check_labels(n, labels, 2, opts.damping)?;
    let yv = DVector::from_iterator(n, labels.iter().map(|&l| l as f64));
    let eval = |beta: &DVector<f64>| -> (f64, DVector<f64>, DVector<f64>) {
        let eta = x * beta;
        // log(1 + e^eta) computed without overflow
        let softplus = |e: f64| if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
        let value = eta.iter().zip(yv.iter()).map(|(&e, &y)| softplus(e) - y * e).sum::<f64>()
            + 0.5 * opts.damping * beta.norm_squared();
        let mu = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let grad = x.transpose() * (&mu - &yv) + opts.damping * beta;
        (value, grad, mu)
    };
    let mut beta = DVector::zeros(q);
    let (mut value, mut grad, mut mu) = eval(&beta);
    let mut iterations = 0;
    while grad.norm() > opts.tolerance && iterations < opts.max_iterations {
        iterations += 1;
        let mut weighted = x.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= mu[i] * (1.0 - mu[i]);
        }
        let mut info = x.transpose() * weighted;
        for d in 0..q {
            info[(d, d)] += opts.damping;
        }
        let direction = match info.cholesky() {
            Some(ch) => -ch.solve(&grad),
            None => -grad.clone(),
        };
        let slope = direction.dot(&grad);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &beta + step * &direction;
            let (tv, tg, tm) = eval(&trial);
            if tv.is_finite() && (tv <= value + 1e-4 * step * slope || (flat(slope, value) && tg.norm() < grad.norm()))
            {
                beta = trial;
                value = tv;
                grad = tg;
                mu = tm;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let gradient_norm = grad.norm();
    Ok(FitResult {
        theta: beta.as_slice().to_vec(),
        converged: gradient_norm <= opts.tolerance,
        gradient_norm,
        iterations,
    })
}
