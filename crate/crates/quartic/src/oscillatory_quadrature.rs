//! Stone-type integrals `∫₀^∞ e^{−itλ⁴} λ³ w(λ) f(λ) dλ` for `t ∈ [0, 10⁴]`.
//!
//! Both methods work in `s = λ⁴`, where the integral is
//! `¼∫ e^{−its} w(s^{1/4}) f(s^{1/4}) ds`:
//! * substitution-adaptive: Gauss–Legendre panels no wider than `π/(4t)`;
//! * Filon: Legendre interpolation of the amplitude on each panel with the
//!   exact moments `∫P_k(x)e^{−iωx}dx = 2(−i)^k j_k(ω)`, so panel sizes do
//!   not depend on `t`.

use core::f64::consts::PI;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::gauss_legendre;
use crate::error::{QuarticError, Result};
use crate::free_kernels::smooth_cutoff;

/// High-energy truncation.
pub const DEFAULT_LAMBDA_MAX: f64 = 10.0;
/// Taper width as a fraction of `Λmax`.
pub const TAPER_FRACTION: f64 = 0.25;
/// Geometric grading toward `λ = 0` stops here.
pub const LAMBDA_FLOOR: f64 = 1e-10;

const PANEL_ORDER: usize = 16;

/// Smooth taper: 1 below `Λmax`, 0 above `(1+TAPER_FRACTION)Λmax`.
pub fn taper(lambda: f64, lambda_max: f64) -> f64 {
    if lambda <= lambda_max {
        return 1.0;
    }
    smooth_cutoff(lambda_max + (lambda - lambda_max) / TAPER_FRACTION, lambda_max)
}

/// Spectral window `w(λ)` of an integrand.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Support {
    /// `χ(λ)`, supported on `[0, 2λ₁]`.
    Low { lambda1: f64 },
    /// `χ̃(λ)·taper(λ)`, supported on `[λ₁, (1+TAPER_FRACTION)Λmax]`.
    High {
        lambda1: f64,
        #[serde(rename = "lambdaMax")]
        lambda_max: f64,
    },
    /// `taper(λ)` on `[0, (1+TAPER_FRACTION)Λmax]`.
    Full {
        #[serde(rename = "lambdaMax")]
        lambda_max: f64,
    },
    /// Indicator of `[a, b]`.
    Sharp { a: f64, b: f64 },
}

impl Support {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Support::Low { lambda1 } => lambda1 > 0.0 && lambda1.is_finite(),
            Support::High { lambda1, lambda_max } => lambda1 > 0.0 && lambda_max > 2.0 * lambda1 && lambda_max.is_finite(),
            Support::Full { lambda_max } => lambda_max > 0.0 && lambda_max.is_finite(),
            Support::Sharp { a, b } => a >= 0.0 && b > a && b.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(QuarticError::Config(format!("invalid support {self:?}")))
        }
    }

    pub fn weight(&self, lambda: f64) -> f64 {
        match *self {
            Support::Low { lambda1 } => smooth_cutoff(lambda, lambda1),
            Support::High { lambda1, lambda_max } => (1.0 - smooth_cutoff(lambda, lambda1)) * taper(lambda, lambda_max),
            Support::Full { lambda_max } => taper(lambda, lambda_max),
            Support::Sharp { a, b } => {
                if lambda >= a && lambda <= b {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `[λ_lo, λ_hi]` outside of which the weight vanishes.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            Support::Low { lambda1 } => (0.0, 2.0 * lambda1),
            Support::High { lambda1, lambda_max } => (lambda1, (1.0 + TAPER_FRACTION) * lambda_max),
            Support::Full { lambda_max } => (0.0, (1.0 + TAPER_FRACTION) * lambda_max),
            Support::Sharp { a, b } => (a, b),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothness {
    Smooth,
    LogSingularAtZero,
    InverseSquareAtZero,
}

pub type Amplitude = Arc<dyn Fn(f64) -> Complex64 + Send + Sync>;

/// `f` with its spectral window.
#[derive(Clone)]
pub struct StoneIntegrand {
    pub f: Amplitude,
    pub support: Support,
    pub smoothness: Smoothness,
}

impl StoneIntegrand {
    pub fn new(f: impl Fn(f64) -> Complex64 + Send + Sync + 'static, support: Support, smoothness: Smoothness) -> Self {
        StoneIntegrand { f: Arc::new(f), support, smoothness }
    }

    /// `¼ w(s^{1/4}) f(s^{1/4})`.
    fn amplitude(&self, s: f64) -> Complex64 {
        let lambda = s.sqrt().sqrt();
        let w = self.support.weight(lambda);
        if w == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        (self.f)(lambda) * (0.25 * w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SubstitutionAdaptive,
    FilonIbp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QuadResult {
    pub value: Complex64,
    pub error_estimate: f64,
    pub n_evals: usize,
    pub method: Method,
    /// Value of the other method when both ran.
    pub cross_check: Option<Complex64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Panel budget of the Filon method.
    pub max_panels: usize,
    /// The substitution method is skipped when it would need more panels.
    pub max_direct_panels: usize,
    /// Use `e^{+itλ⁴}` instead of `e^{−itλ⁴}`.
    pub plus_phase: bool,
    pub cross_check: bool,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            rel_tol: 1e-10,
            abs_tol: 0.0,
            max_panels: 20_000,
            max_direct_panels: 100_000,
            plus_phase: false,
            cross_check: true,
        }
    }
}

/// `j_0(ω) … j_{n−1}(ω)`.
pub fn spherical_bessel_j(n: usize, omega: f64) -> Vec<f64> {
    let w = omega.abs();
    let mut out = vec![0.0; n];
    if n == 0 {
        return out;
    }
    if w < 1.0 {
        // ω^k/(2k+1)!! Σ_m (−ω²/2)^m / (m! (2k+3)(2k+5)…(2k+2m+1))
        let mut lead = 1.0;
        for (k, o) in out.iter_mut().enumerate() {
            if k > 0 {
                lead *= w / (2 * k + 1) as f64;
            }
            let mut term = 1.0;
            let mut sum = 1.0;
            for m in 1..40 {
                term *= -0.5 * w * w / (m as f64 * (2 * k + 2 * m + 1) as f64);
                sum += term;
                if term.abs() < 1e-18 * sum.abs() {
                    break;
                }
            }
            *o = lead * sum;
        }
    } else if w > n as f64 {
        // upward recurrence is stable while k < ω
        out[0] = w.sin() / w;
        if n > 1 {
            out[1] = w.sin() / (w * w) - w.cos() / w;
        }
        for k in 2..n {
            out[k] = (2 * k - 1) as f64 / w * out[k - 1] - out[k - 2];
        }
    } else {
        // Miller's backward recurrence normalised by Σ(2k+1)j_k² = 1
        let start = n + 40;
        let mut jp = 0.0;
        let mut j = 1e-280;
        let mut vals = vec![0.0; start + 1];
        vals[start] = j;
        for k in (1..=start).rev() {
            let jm = (2 * k + 1) as f64 / w * j - jp;
            jp = j;
            j = jm;
            vals[k - 1] = j;
            if j.abs() > 1e100 {
                for v in vals[k - 1..].iter_mut() {
                    *v *= 1e-100;
                }
                j *= 1e-100;
                jp *= 1e-100;
            }
        }
        let big = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let norm = big * vals.iter().enumerate().map(|(k, v)| (2 * k + 1) as f64 * (v / big).powi(2)).sum::<f64>().sqrt();
        let sign = if vals[0] * (w.sin() / w) < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            out[k] = sign * vals[k] / norm;
        }
    }
    if omega < 0.0 {
        for (k, o) in out.iter_mut().enumerate() {
            if k % 2 == 1 {
                *o = -*o;
            }
        }
    }
    out
}

/// Fixed Gauss–Legendre data plus the Legendre values at the nodes.
struct Rule {
    x: Vec<f64>,
    w: Vec<f64>,
    /// `leg[k][j] = (2k+1)/2 · w_j P_k(x_j)`: the discrete Legendre transform.
    leg: Vec<Vec<f64>>,
}

impl Rule {
    fn new(n: usize) -> Rule {
        let (x, w) = gauss_legendre(n);
        let mut leg = vec![vec![0.0; n]; n];
        for j in 0..n {
            let (mut p0, mut p1) = (1.0, x[j]);
            for k in 0..n {
                let pk = if k == 0 {
                    1.0
                } else if k == 1 {
                    x[j]
                } else {
                    let p2 = ((2 * k - 1) as f64 * x[j] * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                    p2
                };
                leg[k][j] = (2 * k + 1) as f64 / 2.0 * w[j] * pk;
            }
        }
        Rule { x, w, leg }
    }
}

#[derive(Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: Complex64,
    err: f64,
    l1: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

struct Integrator<'a> {
    g: &'a dyn Fn(f64) -> Complex64,
    t: f64,
    /// `+1` for `e^{−its}`, `−1` for `e^{+its}`.
    sigma: f64,
    rule: Rule,
    method: Method,
    evals: usize,
}

impl Integrator<'_> {
    /// `(∫ₐᵇ g e^{−iσts} ds, ∫ₐᵇ |g| ds)` with one panel of the rule.
    fn basic(&mut self, a: f64, b: f64) -> (Complex64, f64) {
        let h = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        let n = self.rule.x.len();
        self.evals += n;
        let vals: Vec<Complex64> = self.rule.x.iter().map(|&x| (self.g)(c + h * x)).collect();
        let l1 = h * vals.iter().zip(&self.rule.w).map(|(v, w)| w * v.norm()).sum::<f64>();
        let value = match self.method {
            Method::SubstitutionAdaptive => {
                h * vals
                    .iter()
                    .zip(&self.rule.x)
                    .zip(&self.rule.w)
                    .map(|((v, x), w)| v * Complex64::from_polar(*w, -self.sigma * self.t * (c + h * x)))
                    .sum::<Complex64>()
            }
            Method::FilonIbp => {
                let omega = self.sigma * self.t * h;
                let jk = spherical_bessel_j(n, omega);
                let mut acc = Complex64::new(0.0, 0.0);
                let mut ipow = Complex64::new(1.0, 0.0);
                for k in 0..n {
                    let ak: Complex64 = self.rule.leg[k].iter().zip(&vals).map(|(l, v)| v * *l).sum();
                    acc += ak * ipow * (2.0 * jk[k]);
                    ipow *= Complex64::new(0.0, -1.0);
                }
                acc * h * Complex64::from_polar(1.0, -self.sigma * self.t * c)
            }
        };
        (value, l1)
    }

    fn panel(&mut self, a: f64, b: f64) -> Panel {
        let m = 0.5 * (a + b);
        let (coarse, _) = self.basic(a, b);
        let (l, l1a) = self.basic(a, m);
        let (r, l1b) = self.basic(m, b);
        let value = l + r;
        Panel { a, b, value, err: (value - coarse).norm(), l1: l1a + l1b }
    }

    fn run(&mut self, breaks: &[f64], opts: &QuadOptions, budget: usize) -> Result<(Complex64, f64)> {
        let mut heap: BinaryHeap<Panel> = breaks.windows(2).filter(|p| p[1] > p[0]).map(|p| self.panel(p[0], p[1])).collect();
        let mut count = heap.len();
        let totals = |h: &BinaryHeap<Panel>| {
            h.iter().fold((Complex64::new(0.0, 0.0), 0.0, 0.0), |(v, e, l), p| (v + p.value, e + p.err, l + p.l1))
        };
        let (mut value, mut err, mut l1) = totals(&heap);
        loop {
            let target = opts.abs_tol.max(opts.rel_tol * value.norm()).max(1e-15 * l1);
            if err <= target {
                // running sums drift; confirm with a fresh sum
                (value, err, l1) = totals(&heap);
                if err <= opts.abs_tol.max(opts.rel_tol * value.norm()).max(1e-15 * l1) {
                    return Ok((value, err));
                }
            }
            if count >= budget || !err.is_finite() {
                return Err(QuarticError::Accuracy { achieved: err, requested: target });
            }
            let worst = heap.pop().unwrap();
            let m = 0.5 * (worst.a + worst.b);
            if !(m > worst.a && m < worst.b) {
                return Err(QuarticError::Accuracy { achieved: err, requested: target });
            }
            let (left, right) = (self.panel(worst.a, m), self.panel(m, worst.b));
            value += left.value + right.value - worst.value;
            err += left.err + right.err - worst.err;
            l1 += left.l1 + right.l1 - worst.l1;
            heap.push(left);
            heap.push(right);
            count += 1;
        }
    }
}

/// Breakpoints in `s`: geometric in `λ` (ratio ½) toward 0 when the
/// support reaches the origin, then `m` equal pieces.
fn breakpoints(support: &Support, uniform: usize) -> Vec<f64> {
    let (lo, hi) = support.range();
    let mut lam = Vec::new();
    let top_of_grading = if lo == 0.0 { hi / 4.0 } else { lo };
    if lo == 0.0 {
        let mut x = top_of_grading;
        while x > LAMBDA_FLOOR {
            lam.push(x);
            x *= 0.5;
        }
        lam.push(LAMBDA_FLOOR);
        lam.reverse();
    } else {
        lam.push(lo);
    }
    let mut s: Vec<f64> = lam.iter().map(|l| l.powi(4)).collect();
    let (s0, s1) = (top_of_grading.powi(4), hi.powi(4));
    for k in 1..=uniform {
        s.push(s0 + (s1 - s0) * k as f64 / uniform as f64);
    }
    s
}

/// Split every piece of `s` so that no panel is wider than `width`.
fn refine_width(s: &[f64], width: f64) -> Vec<f64> {
    let mut out = vec![s[0]];
    for p in s.windows(2) {
        let k = ((p[1] - p[0]) / width).ceil().max(1.0) as usize;
        for j in 1..=k {
            out.push(p[0] + (p[1] - p[0]) * j as f64 / k as f64);
        }
    }
    out
}

pub fn stone_integral(g: &StoneIntegrand, t: f64) -> Result<QuadResult> {
    stone_integral_with(g, t, &QuadOptions::default())
}

/// Both methods when the substitution rule fits its panel budget; the
/// reported value is the substitution result when available.
pub fn stone_integral_with(g: &StoneIntegrand, t: f64, opts: &QuadOptions) -> Result<QuadResult> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(QuarticError::Domain(format!("stone_integral needs t >= 0, got {t}")));
    }
    g.support.validate()?;
    let amp = |s: f64| g.amplitude(s);
    let sigma = if opts.plus_phase { -1.0 } else { 1.0 };
    let base = breakpoints(&g.support, 8);
    let mut filon = Integrator { g: &amp, t, sigma, rule: Rule::new(PANEL_ORDER), method: Method::FilonIbp, evals: 0 };
    let fb = filon.run(&base, opts, opts.max_panels);

    let (s_lo, s_hi) = (base[0], *base.last().unwrap());
    let width = if t > 0.0 { PI / (4.0 * t) } else { f64::INFINITY };
    let direct_panels = if t > 0.0 { ((s_hi - s_lo) / width).ceil() as usize + base.len() } else { base.len() };
    let run_direct = direct_panels <= opts.max_direct_panels && (opts.cross_check || fb.is_err());
    let mut direct = Integrator { g: &amp, t, sigma, rule: Rule::new(PANEL_ORDER), method: Method::SubstitutionAdaptive, evals: 0 };
    let da = if run_direct {
        let br = if t > 0.0 { refine_width(&base, width) } else { base.clone() };
        Some(direct.run(&br, opts, opts.max_direct_panels.max(br.len() * 4)))
    } else {
        None
    };
    let n_evals = filon.evals + direct.evals;
    match (da, fb) {
        (Some(Ok((dv, de))), Ok((fv, fe))) => Ok(QuadResult {
            value: dv,
            error_estimate: de.max(0.5 * (dv - fv).norm()).max(fe.min(de)),
            n_evals,
            method: Method::SubstitutionAdaptive,
            cross_check: Some(fv),
        }),
        (Some(Ok((dv, de))), Err(_)) => {
            Ok(QuadResult { value: dv, error_estimate: de, n_evals, method: Method::SubstitutionAdaptive, cross_check: None })
        }
        (_, Ok((fv, fe))) => Ok(QuadResult { value: fv, error_estimate: fe, n_evals, method: Method::FilonIbp, cross_check: None }),
        (_, Err(e)) => Err(e),
    }
}

/// Complex natural cubic spline on increasing knots.
#[derive(Clone, Debug)]
pub struct ComplexSpline {
    x: Vec<f64>,
    y: Vec<Complex64>,
    m: Vec<Complex64>,
}

impl ComplexSpline {
    pub fn new(x: Vec<f64>, y: Vec<Complex64>) -> Result<Self> {
        let n = x.len();
        if n < 3 || y.len() != n || x.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(QuarticError::Domain("spline needs >= 3 increasing knots".into()));
        }
        // tridiagonal system for the second derivatives, m₀ = m_{n−1} = 0
        let mut diag = vec![0.0; n];
        let mut rhs = vec![Complex64::new(0.0, 0.0); n];
        let mut sub = vec![0.0; n];
        diag[0] = 1.0;
        diag[n - 1] = 1.0;
        for i in 1..n - 1 {
            let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            sub[i] = h0;
            diag[i] = 2.0 * (h0 + h1);
            rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
        }
        let mut sup = vec![0.0; n];
        for i in 1..n - 1 {
            sup[i] = x[i + 1] - x[i];
        }
        // Thomas algorithm
        let mut c = vec![0.0; n];
        let mut d = vec![Complex64::new(0.0, 0.0); n];
        c[0] = sup[0] / diag[0];
        d[0] = rhs[0] / diag[0];
        for i in 1..n {
            let den = diag[i] - sub[i] * c[i - 1];
            c[i] = sup[i] / den;
            d[i] = (rhs[i] - d[i - 1] * sub[i]) / den;
        }
        let mut m = vec![Complex64::new(0.0, 0.0); n];
        m[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            m[i] = d[i] - m[i + 1] * c[i];
        }
        Ok(ComplexSpline { x, y, m })
    }

    /// Constant extension outside the knots.
    pub fn eval(&self, t: f64) -> Complex64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = self.x.partition_point(|&v| v <= t).clamp(1, n - 1) - 1;
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        self.y[i] * a
            + self.y[i + 1] * b
            + (self.m[i] * (a * a * a - a) + self.m[i + 1] * (b * b * b - b)) * (h * h / 6.0)
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }
}

pub type KernelFn<'a> = dyn Fn(f64) -> Result<Complex64> + Sync + 'a;
/// Several kernels sharing one evaluation per `λ` (e.g. one solve, many point pairs).
pub type MultiKernelFn<'a> = dyn Fn(f64) -> Result<Vec<Complex64>> + Sync + 'a;

/// Samples of a kernel on a shared hybrid λ grid, splined.
#[derive(Clone, Debug)]
pub struct KernelCache {
    pub spline: ComplexSpline,
    /// Largest `|spline − direct| / max|f|` over the spot checks.
    pub spot_error: f64,
    pub refinements: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ProbeOptions {
    pub cache_points: usize,
    pub cache_tol: f64,
    pub spot_checks: usize,
    pub max_refinements: usize,
    pub seed: u64,
    pub quad: QuadOptions,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            cache_points: 600,
            cache_tol: 1e-6,
            spot_checks: 10,
            max_refinements: 3,
            seed: 0,
            quad: QuadOptions { cross_check: false, rel_tol: 1e-8, ..QuadOptions::default() },
        }
    }
}

/// Half geometric (from `max(lo, 10⁻⁶·hi)`), half linear.
pub fn hybrid_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let ng = n / 2;
    let nl = n - ng;
    let split = if lo > 0.0 { lo + 0.25 * (hi - lo) } else { 0.125 * hi };
    let start = if lo > 0.0 { lo } else { 1e-6 * hi };
    let mut out = Vec::with_capacity(n);
    if lo > 0.0 {
        for k in 0..ng {
            out.push(start + (split - start) * k as f64 / ng as f64);
        }
    } else {
        let r = (split / start).ln();
        for k in 0..ng {
            out.push(start * (r * k as f64 / ng as f64).exp());
        }
    }
    for k in 0..nl {
        out.push(split + (hi - split) * k as f64 / (nl - 1) as f64);
    }
    out
}

impl KernelCache {
    pub fn build(kernel: &KernelFn<'_>, support: &Support, opts: &ProbeOptions) -> Result<Self> {
        let multi = |l: f64| kernel(l).map(|v| vec![v]);
        Ok(Self::build_many(&multi, 1, support, opts)?.remove(0))
    }

    /// One cache per channel; refinement continues until every channel passes.
    pub fn build_many(
        kernel: &MultiKernelFn<'_>,
        channels: usize,
        support: &Support,
        opts: &ProbeOptions,
    ) -> Result<Vec<Self>> {
        let (lo, hi) = support.range();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut n = opts.cache_points;
        let sample = |l: f64| -> Result<Vec<Complex64>> {
            let v = kernel(l)?;
            if v.len() != channels {
                return Err(QuarticError::Config(format!("kernel returned {} channels, expected {channels}", v.len())));
            }
            Ok(v)
        };
        for refinements in 0..=opts.max_refinements {
            let grid = hybrid_grid(lo, hi, n);
            let vals: Vec<Vec<Complex64>> = grid.par_iter().map(|&l| sample(l)).collect::<Result<_>>()?;
            let probes: Vec<f64> = (0..opts.spot_checks).map(|_| rng.gen_range(lo.max(1e-6 * hi)..hi)).collect();
            let direct: Vec<Vec<Complex64>> = probes.par_iter().map(|&l| sample(l)).collect::<Result<_>>()?;
            let mut caches = Vec::with_capacity(channels);
            let mut worst: f64 = 0.0;
            for c in 0..channels {
                let ys: Vec<Complex64> = vals.iter().map(|v| v[c]).collect();
                let scale = ys.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
                let spline = ComplexSpline::new(grid.clone(), ys)?;
                let spot_error =
                    probes.iter().zip(&direct).map(|(l, d)| (spline.eval(*l) - d[c]).norm() / scale).fold(0.0, f64::max);
                worst = worst.max(spot_error);
                caches.push(KernelCache { spline, spot_error, refinements });
            }
            if worst <= opts.cache_tol {
                return Ok(caches);
            }
            if refinements == opts.max_refinements {
                return Err(QuarticError::Accuracy { achieved: worst, requested: opts.cache_tol });
            }
            n *= 2;
        }
        unreachable!()
    }

    pub fn eval(&self, lambda: f64) -> Complex64 {
        self.spline.eval(lambda)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProbeRow {
    pub t: f64,
    pub value: Complex64,
    pub abs_value: f64,
    pub err_estimate: f64,
    pub n_evals: usize,
}

#[derive(Clone, Debug)]
pub struct DecayProbe {
    pub rows: Vec<ProbeRow>,
    pub cache: KernelCache,
}

fn check_t_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.windows(2).any(|p| !(p[1] > p[0])) || t_grid.iter().any(|&t| !(t >= 0.0)) {
        return Err(QuarticError::Config("t grid must be nonnegative and increasing".into()));
    }
    Ok(())
}

/// `|∫e^{−itλ⁴}λ³w(λ)K(λ)dλ|` over `t_grid`, from one cached sampling of `K`.
pub fn decay_probe(
    kernel: &KernelFn<'_>,
    support: Support,
    smoothness: Smoothness,
    t_grid: &[f64],
    opts: &ProbeOptions,
) -> Result<DecayProbe> {
    let multi = |l: f64| kernel(l).map(|v| vec![v]);
    Ok(decay_probe_many(&multi, 1, support, smoothness, t_grid, opts)?.remove(0))
}

/// [`decay_probe`] for several channels; parallel over `(t, channel)`.
pub fn decay_probe_many(
    kernel: &MultiKernelFn<'_>,
    channels: usize,
    support: Support,
    smoothness: Smoothness,
    t_grid: &[f64],
    opts: &ProbeOptions,
) -> Result<Vec<DecayProbe>> {
    support.validate()?;
    check_t_grid(t_grid)?;
    let caches: Vec<Arc<KernelCache>> =
        KernelCache::build_many(kernel, channels, &support, opts)?.into_iter().map(Arc::new).collect();
    let jobs: Vec<(usize, f64)> = (0..channels).flat_map(|c| t_grid.iter().map(move |&t| (c, t))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(c, t)| {
            let cache = caches[c].clone();
            let g = StoneIntegrand { f: Arc::new(move |l| cache.eval(l)), support, smoothness };
            let r = stone_integral_with(&g, t, &opts.quad)?;
            Ok(ProbeRow { t, value: r.value, abs_value: r.value.norm(), err_estimate: r.error_estimate, n_evals: r.n_evals })
        })
        .collect::<Result<Vec<_>>>()?;
    let nt = t_grid.len();
    Ok(caches
        .into_iter()
        .enumerate()
        .map(|(c, cache)| DecayProbe {
            rows: rows[c * nt..(c + 1) * nt].to_vec(),
            cache: Arc::try_unwrap(cache).unwrap_or_else(|a| (*a).clone()),
        })
        .collect())
}

/// `f = 1/log²λ` on the `χ` support (`λ₁ < ½`).
pub fn log_toy(lambda1: f64) -> Result<StoneIntegrand> {
    if !(lambda1 > 0.0 && lambda1 < 0.5) {
        return Err(QuarticError::Config(format!("log toy needs 0 < lambda1 < 1/2, got {lambda1}")));
    }
    Ok(StoneIntegrand::new(
        |l| Complex64::new(1.0 / l.ln().powi(2), 0.0),
        Support::Low { lambda1 },
        Smoothness::LogSingularAtZero,
    ))
}

/// Rows of the scalar log toy; `t·log²t·|value|` is the bounded quantity.
pub fn log_decay_probe(lambda1: f64, t_grid: &[f64], opts: &QuadOptions) -> Result<Vec<ProbeRow>> {
    let g = log_toy(lambda1)?;
    t_grid
        .par_iter()
        .map(|&t| {
            let r = stone_integral_with(&g, t, opts)?;
            Ok(ProbeRow { t, value: r.value, abs_value: r.value.norm(), err_estimate: r.error_estimate, n_evals: r.n_evals })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sharp_constant_at_t_zero() {
        let g = StoneIntegrand::new(|_| Complex64::new(1.0, 0.0), Support::Sharp { a: 0.0, b: 1.3 }, Smoothness::Smooth);
        let r = stone_integral(&g, 0.0).unwrap();
        assert!((r.value.re - 1.3f64.powi(4) / 4.0).abs() < 1e-13);
        assert!(r.value.im.abs() < 1e-15);
    }

    #[test]
    fn spline_reproduces_cubic_interior() {
        let x: Vec<f64> = (0..40).map(|k| k as f64 * 0.1).collect();
        let y: Vec<Complex64> = x.iter().map(|t| Complex64::new(t.sin(), t.cos())).collect();
        let s = ComplexSpline::new(x, y).unwrap();
        for t in [1.03, 2.21, 3.07] {
            assert!((s.eval(t) - Complex64::new(f64::sin(t), f64::cos(t))).norm() < 1e-5);
        }
    }
}
