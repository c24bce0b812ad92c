//! Recursive bivariate Gaussian-copula predictive updates.
//!
//! Each absorbed observation `m` mixes the current conditional CDF (or class
//! probability) with a copula-smoothed term, with a feature-dependent weight
//! `w_m(x) = a_m q_m(x) / (1 - a_m + a_m q_m(x))`, where `q_m` is the product of
//! Gaussian copula densities between the standardized features of `x` and of
//! observation `m`. Both copulas share the bandwidth `rho`.
//!
//! Features of the rows the rule was initialized on are addressed by index,
//! and their pairwise log-kernels are tabulated once and shared by every
//! forked state.

use std::sync::Arc;

use rand::distr::Open01;
use rand::Rng;

use crate::data::{Observations, ResponseValue};
use crate::rng::StreamRng;
use crate::special::{clamp_prob, norm_cdf, norm_pdf, norm_ppf, norm_ppf_clamped, GaussianCopula};

use super::RuleError;

pub const DEFAULT_BANDWIDTH: f64 = 0.8;
/// Clamp applied to the empirical class-1 frequency that seeds the binary rule.
pub const INITIAL_PROB_RANGE: (f64, f64) = (0.01, 0.99);

/// Learning-rate schedule `a_m = (2 - 1/m) / (m + 1)`, `m >= 1`.
pub fn alpha(m: usize) -> f64 {
    let m = m as f64;
    (2.0 - 1.0 / m) / (m + 1.0)
}

fn logit_alpha(m: usize) -> f64 {
    let a = alpha(m);
    a.ln() - (1.0 - a).ln()
}

#[inline]
fn weight(logit_alpha: f64, log_q: f64) -> f64 {
    1.0 / (1.0 + (-(logit_alpha + log_q)).exp())
}

/// Below this weight an update changes nothing representable.
const NEGLIGIBLE_WEIGHT: f64 = 1e-17;

/// Where a copula is queried: a row of the initializing data, or any
/// standardized feature vector.
#[derive(Clone, Copy, Debug)]
pub enum Point<'a> {
    Base(usize),
    Free(&'a [f64]),
}

#[derive(Clone, Copy, Debug)]
enum Site {
    Base(usize),
    Free(usize),
}

#[derive(Debug)]
struct BaseRows {
    n: usize,
    width: usize,
    x: Vec<f64>,
    log_q: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Kernel {
    copula: GaussianCopula,
    base: Arc<BaseRows>,
    free: Vec<f64>,
}

impl Kernel {
    fn new(rho: f64, data: &Observations) -> Self {
        let copula = GaussianCopula::new(rho);
        let (n, width) = (data.len(), data.width());
        let mut log_q = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = log_kernel(&copula, data.row(i), data.row(j));
                log_q[i * n + j] = v;
                log_q[j * n + i] = v;
            }
        }
        let base = BaseRows { n, width, x: data.features().to_vec(), log_q };
        Self { copula, base: Arc::new(base), free: Vec::new() }
    }

    fn width(&self) -> usize {
        self.base.width
    }

    fn base_row(&self, i: usize) -> &[f64] {
        &self.base.x[i * self.base.width..(i + 1) * self.base.width]
    }

    fn site_row(&self, site: Site) -> &[f64] {
        match site {
            Site::Base(i) => self.base_row(i),
            Site::Free(k) => &self.free[k * self.base.width..(k + 1) * self.base.width],
        }
    }

    fn log_q(&self, p: Point, site: Site) -> f64 {
        match (p, site) {
            (Point::Base(i), Site::Base(j)) => self.base.log_q[i * self.base.n + j],
            (Point::Base(i), s) => log_kernel(&self.copula, self.base_row(i), self.site_row(s)),
            (Point::Free(x), s) => log_kernel(&self.copula, x, self.site_row(s)),
        }
    }

    fn check(&self, p: Point) -> Result<(), RuleError> {
        match p {
            Point::Base(i) if i >= self.base.n => {
                Err(RuleError::Unsupported(format!("base row {i} out of range")))
            }
            Point::Free(x) if x.len() != self.base.width => {
                Err(RuleError::Dimension { expected: self.base.width, got: x.len() })
            }
            _ => Ok(()),
        }
    }

    fn site_of(&mut self, p: Point) -> Site {
        match p {
            Point::Base(i) => Site::Base(i),
            Point::Free(x) => {
                self.free.extend_from_slice(x);
                Site::Free(self.free.len() / self.base.width - 1)
            }
        }
    }
}

/// Sum of per-feature log copula densities. Standardized features pass
/// through `Phi` and back, so they are already normal scores.
fn log_kernel(copula: &GaussianCopula, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&s, &t)| copula.log_density_z(s, t)).sum()
}

#[derive(Clone, Copy, Debug)]
struct Record {
    site: Site,
    logit_alpha: f64,
    v: f64,
    /// `Phi^{-1}(v)`, clamped.
    zv: f64,
    class: usize,
}

/// Continuous-response copula predictive on the standardized response scale.
#[derive(Clone, Debug)]
pub struct ContinuousCopula {
    kernel: Kernel,
    records: Vec<Record>,
}

impl ContinuousCopula {
    /// Rule with no absorbed observations; `base` supplies the addressable rows.
    pub fn empty(rho: f64, base: &Observations) -> Self {
        Self { kernel: Kernel::new(rho, base), records: Vec::new() }
    }

    pub fn init(rho: f64, data: &Observations) -> Result<Self, RuleError> {
        let mut state = Self::empty(rho, data);
        for i in 0..data.len() {
            state.update(Point::Base(i), data.response(i))?;
        }
        Ok(state)
    }

    pub fn step(&self) -> usize {
        self.records.len()
    }

    pub fn rho(&self) -> f64 {
        self.kernel.copula.rho()
    }

    /// Recorded levels `v_m`, one per absorbed observation.
    pub fn levels(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.v).collect()
    }

    pub fn cdf(&self, p: Point, y: f64) -> f64 {
        self.cdf_upto(p, y, self.records.len())
    }

    fn cdf_upto(&self, p: Point, y: f64, m: usize) -> f64 {
        let mut u = norm_cdf(y);
        for rec in &self.records[..m] {
            let w = weight(rec.logit_alpha, self.kernel.log_q(p, rec.site));
            if w < NEGLIGIBLE_WEIGHT {
                continue;
            }
            let a = norm_ppf_clamped(u);
            u = (1.0 - w) * u + w * self.kernel.copula.h_z(a, rec.zv);
        }
        u
    }

    /// Inverse of `cdf` in `y`, undoing the updates from last to first.
    /// Each step solves `(1-w) Phi(a) + w Phi((a - rho b)/s) = t` for the
    /// normal score `a` by safeguarded Newton.
    pub fn quantile(&self, p: Point, t: f64) -> f64 {
        self.quantile_upto(p, t, self.records.len())
    }

    fn quantile_upto(&self, p: Point, t: f64, m: usize) -> f64 {
        let mut target = t;
        let mut a = norm_ppf(t);
        for rec in self.records[..m].iter().rev() {
            let w = weight(rec.logit_alpha, self.kernel.log_q(p, rec.site));
            if w < NEGLIGIBLE_WEIGHT {
                continue;
            }
            a = self.solve_step(w, rec.zv, target, a);
            target = norm_cdf(a);
        }
        a
    }

    fn solve_step(&self, w: f64, b: f64, target: f64, start: f64) -> f64 {
        let rho = self.kernel.copula.rho();
        let s = self.kernel.copula.scale();
        let (mut lo, mut hi) = (-40.0f64, 40.0f64);
        let mut a = start.clamp(lo, hi);
        for _ in 0..200 {
            let c = (a - rho * b) / s;
            let g = (1.0 - w) * norm_cdf(a) + w * norm_cdf(c) - target;
            if g > 0.0 {
                hi = a;
            } else if g < 0.0 {
                lo = a;
            } else {
                return a;
            }
            let slope = (1.0 - w) * norm_pdf(a) + w * norm_pdf(c) / s;
            let mut next = a - g / slope;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - a).abs() <= 1e-13 * (1.0 + a.abs()) || hi - lo <= 1e-13 {
                return next;
            }
            a = next;
        }
        a
    }

    /// Inverse-CDF draw by bisection on `y`, starting from `[-8, 8]` and
    /// doubling up to `[-64, 64]`, to absolute tolerance 1e-8 on the CDF.
    pub fn sample_bisection(&self, p: Point, rng: &mut StreamRng) -> Result<f64, RuleError> {
        self.kernel.check(p)?;
        let t: f64 = rng.sample(Open01);
        self.invert_bisection(p, t, 1e-8)
    }

    pub fn invert_bisection(&self, p: Point, t: f64, tolerance: f64) -> Result<f64, RuleError> {
        let mut half = 8.0;
        while self.cdf(p, -half) > t || self.cdf(p, half) < t {
            half *= 2.0;
            if half > 64.0 {
                return Err(RuleError::BracketFailure { lo: -64.0, hi: 64.0, target: t });
            }
        }
        let (mut lo, mut hi) = (-half, half);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let u = self.cdf(p, mid);
            if (u - t).abs() <= tolerance || hi - lo <= 1e-14 {
                return Ok(mid);
            }
            if u < t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn update(&mut self, p: Point, y: ResponseValue) -> Result<(), RuleError> {
        self.kernel.check(p)?;
        let y = match y {
            ResponseValue::Continuous(y) if y.is_finite() => y,
            other => return Err(RuleError::ResponseKind(other)),
        };
        let v = self.cdf(p, y);
        self.absorb_uniform(p, v);
        Ok(())
    }

    /// Absorbs an observation at `p` through its level `v = P_i(y | x)`
    /// alone. Drawing `v` uniformly is an exact forward step: the response
    /// itself never needs to be materialized.
    pub fn absorb_uniform(&mut self, p: Point, v: f64) {
        let site = self.kernel.site_of(p);
        let m = self.records.len() + 1;
        let v = clamp_prob(v);
        self.records.push(Record { site, logit_alpha: logit_alpha(m), v, zv: norm_ppf(v), class: 0 });
    }

    pub fn base_resample(&self, repeats: usize, rng: &mut StreamRng) -> Vec<(usize, ResponseValue)> {
        let n = self.kernel.base.n;
        let mut out = Vec::with_capacity(repeats * n);
        for _ in 0..repeats {
            for j in 0..n {
                let t: f64 = rng.sample(Open01);
                out.push((j, ResponseValue::Continuous(self.quantile(Point::Base(j), t))));
            }
        }
        out
    }

    /// Responses implied by records `from..step()`: `y_m` solves
    /// `P_{m-1}(y_m | x_m) = v_m`.
    pub fn latent_responses(&self, from: usize) -> Vec<f64> {
        (from..self.records.len())
            .map(|m| {
                let rec = self.records[m];
                let p = match rec.site {
                    Site::Base(i) => Point::Base(i),
                    Site::Free(_) => Point::Free(self.kernel.site_row(rec.site)),
                };
                self.quantile_upto(p, rec.v, m)
            })
            .collect()
    }

    pub fn width(&self) -> usize {
        self.kernel.width()
    }
}

/// Binary-response copula predictive for `p(y = 1 | x)`.
#[derive(Clone, Debug)]
pub struct BinaryCopula {
    kernel: Kernel,
    records: Vec<Record>,
    initial: f64,
    /// Current probability at every base row, kept in step with the records.
    base_probs: Vec<f64>,
}

impl BinaryCopula {
    pub fn empty(rho: f64, base: &Observations, initial: f64) -> Self {
        Self {
            kernel: Kernel::new(rho, base),
            records: Vec::new(),
            initial,
            base_probs: vec![initial; base.len()],
        }
    }

    pub fn init(rho: f64, data: &Observations) -> Result<Self, RuleError> {
        let ones = data.responses().iter().filter(|r| matches!(r, ResponseValue::Class(1))).count();
        let freq = ones as f64 / data.len() as f64;
        let mut state = Self::empty(rho, data, freq.clamp(INITIAL_PROB_RANGE.0, INITIAL_PROB_RANGE.1));
        for i in 0..data.len() {
            state.update(Point::Base(i), data.response(i))?;
        }
        Ok(state)
    }

    pub fn step(&self) -> usize {
        self.records.len()
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn prob(&self, p: Point) -> f64 {
        match p {
            Point::Base(j) => self.base_probs[j],
            Point::Free(_) => {
                let mut u = self.initial;
                for rec in &self.records {
                    let w = weight(rec.logit_alpha, self.kernel.log_q(p, rec.site));
                    u = self.blend(u, rec, w);
                }
                u
            }
        }
    }

    fn blend(&self, u: f64, rec: &Record, w: f64) -> f64 {
        if w < NEGLIGIBLE_WEIGHT {
            return u;
        }
        let c = self.kernel.copula.cdf_z(norm_ppf_clamped(u), rec.zv);
        let target = if rec.class == 1 { c / rec.v } else { (u - c) / (1.0 - rec.v) };
        ((1.0 - w) * u + w * target.clamp(0.0, 1.0)).clamp(0.0, 1.0)
    }

    pub fn update(&mut self, p: Point, y: ResponseValue) -> Result<(), RuleError> {
        self.kernel.check(p)?;
        let class = match y {
            ResponseValue::Class(k) if k < 2 => k,
            other => return Err(RuleError::ResponseKind(other)),
        };
        let v = clamp_prob(self.prob(p));
        let site = self.kernel.site_of(p);
        let m = self.records.len() + 1;
        let rec = Record { site, logit_alpha: logit_alpha(m), v, zv: norm_ppf(v), class };
        for j in 0..self.base_probs.len() {
            let w = weight(rec.logit_alpha, self.kernel.log_q(Point::Base(j), site));
            self.base_probs[j] = self.blend(self.base_probs[j], &rec, w);
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn base_resample(&self, repeats: usize, rng: &mut StreamRng) -> Vec<(usize, ResponseValue)> {
        let mut out = Vec::with_capacity(repeats * self.base_probs.len());
        for _ in 0..repeats {
            for (j, &p) in self.base_probs.iter().enumerate() {
                out.push((j, ResponseValue::Class(usize::from(rng.random::<f64>() < p))));
            }
        }
        out
    }
}
