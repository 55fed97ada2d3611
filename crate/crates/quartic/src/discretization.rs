//! Quadrature grids on R⁴ and Nyström assembly of sandwiched kernels
//! `vleft · K · vright`.
//!
//! Two substrates: a full point cloud (radial shells × an S³ product rule)
//! and per-sector radial grids where a radial-difference kernel is reduced
//! to its degree-ℓ Gegenbauer component `k_ℓ(r, s)`, normalised so that
//! `K = Σ_ℓ k_ℓ (ℓ+1)/(2π²) U_ℓ(cos θ)`.

use core::f64::consts::PI;
use std::sync::Arc;

const EULER: f64 = 0.577_215_664_901_532_9;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QuarticError, Result};
use crate::free_kernels::{fourth_order_resolvent, profile_unchecked, ExpansionCoefficients, SpectralPoint};
use crate::special_functions::{
    i_scaled_array_unchecked, j_array_unchecked, k_scaled_array_unchecked, y_array_unchecked, Branch,
};

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Nodes and weights of `∫₀^rmax f(r) r³ dr` under `r = rmax·u²`,
/// Gauss–Legendre in `u`.
fn mapped_radial_rule(nr: usize, rmax: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(nr);
    let mut r = Vec::with_capacity(nr);
    let mut wr = Vec::with_capacity(nr);
    for (xi, wi) in x.iter().zip(&w) {
        let u = 0.5 * (xi + 1.0);
        r.push(rmax * u * u);
        wr.push(rmax.powi(4) * u.powi(7) * wi);
    }
    (r, wr)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointCloud {
    pub nodes: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
    pub rmax: f64,
    /// Shell radii; node `k` lies on shell `k / nang`.
    pub radii: Vec<f64>,
    pub nang: usize,
    /// Harmonic degree integrated exactly by the S³ rule.
    pub angular_degree: usize,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&[f64; 4]) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }
}

/// Angular factorisation `nang = nη·m²` with the highest exact degree.
/// In Hopf coordinates `x = (cos η e^{iξ₁}, sin η e^{iξ₂})`, `t = sin²η`,
/// the measure is `½ dt dξ₁ dξ₂`; `nη` Gauss points in `t` and `m`-point
/// trapezoids in each `ξ` integrate harmonics of degree `min(4nη−1, m−1)`.
pub fn s3_factorisation(nang: usize) -> Option<(usize, usize, usize)> {
    let mut best: Option<(usize, usize, usize)> = None;
    let mut m = 1;
    while m * m <= nang {
        if nang % (m * m) == 0 {
            let ne = nang / (m * m);
            let deg = (4 * ne - 1).min(m - 1);
            if best.is_none_or(|b| deg > b.2) {
                best = Some((ne, m, deg));
            }
        }
        m += 1;
    }
    best
}

/// S³ product rule with `nang` nodes; weights sum to `2π²`.
pub fn s3_rule(nang: usize) -> Result<(Vec<[f64; 4]>, Vec<f64>, usize)> {
    let Some((ne, m, deg)) = s3_factorisation(nang).filter(|b| b.2 >= 6) else {
        let near: Vec<usize> = (nang.saturating_sub(40)..nang + 60)
            .filter(|&n| s3_factorisation(n).is_some_and(|b| b.2 >= 6))
            .take(4)
            .collect();
        return Err(QuarticError::Config(format!(
            "nang = {nang} admits no S³ product rule exact to degree 6 (needs nang = nη·m², m ≥ 7); nearby valid sizes: {near:?}"
        )));
    };
    let (gx, gw) = gauss_legendre(ne);
    let mut nodes = Vec::with_capacity(nang);
    let mut weights = Vec::with_capacity(nang);
    let dxi = 2.0 * PI / m as f64;
    for (tx, tw) in gx.iter().zip(&gw) {
        let t = 0.5 * (tx + 1.0);
        let (c, s) = ((1.0 - t).sqrt(), t.sqrt());
        let w = 0.5 * 0.5 * tw * dxi * dxi;
        for a in 0..m {
            // offset the second angle so no node repeats across t-levels
            let (s1, c1) = (dxi * a as f64).sin_cos();
            for b in 0..m {
                let (s2, c2) = (dxi * (b as f64 + 0.5)).sin_cos();
                nodes.push([c * c1, c * s1, s * c2, s * s2]);
                weights.push(w);
            }
        }
    }
    Ok((nodes, weights, deg))
}

/// Tensor grid: `nr` mapped Gauss–Legendre shells × an `nang`-node S³ rule.
pub fn build_full_grid(nr: usize, nang: usize, rmax: f64) -> Result<PointCloud> {
    if nr < 4 || nang < 8 {
        return Err(QuarticError::Config(format!("build_full_grid needs nr >= 4 and nang >= 8, got nr={nr}, nang={nang}")));
    }
    if !(rmax.is_finite() && rmax > 0.0) {
        return Err(QuarticError::Config(format!("build_full_grid: rmax must be positive, got {rmax}")));
    }
    let (r, wr) = mapped_radial_rule(nr, rmax);
    let (ang, wa, deg) = s3_rule(nang)?;
    let mut nodes = Vec::with_capacity(nr * nang);
    let mut weights = Vec::with_capacity(nr * nang);
    for (ri, wi) in r.iter().zip(&wr) {
        for (a, w) in ang.iter().zip(&wa) {
            nodes.push([ri * a[0], ri * a[1], ri * a[2], ri * a[3]]);
            weights.push(wi * w);
        }
    }
    Ok(PointCloud { nodes, weights, rmax, radii: r, nang, angular_degree: deg })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialSectorGrid {
    pub ell: usize,
    pub rnodes: Vec<f64>,
    /// Weights for the measure `r³ dr`.
    pub rweights: Vec<f64>,
    pub multiplicity: usize,
    pub rmax: f64,
}

impl RadialSectorGrid {
    pub fn len(&self) -> usize {
        self.rnodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rnodes.is_empty()
    }
}

pub fn build_sector_grid(ell: usize, nr: usize, rmax: f64) -> Result<RadialSectorGrid> {
    if nr < 4 {
        return Err(QuarticError::Config(format!("build_sector_grid needs nr >= 4, got {nr}")));
    }
    if !(rmax.is_finite() && rmax > 0.0) {
        return Err(QuarticError::Config(format!("build_sector_grid: rmax must be positive, got {rmax}")));
    }
    let (rnodes, rweights) = mapped_radial_rule(nr, rmax);
    Ok(RadialSectorGrid { ell, rnodes, rweights, multiplicity: (ell + 1) * (ell + 1), rmax })
}

#[derive(Clone, Copy, Debug)]
pub enum Grid<'a> {
    Full(&'a PointCloud),
    Sector(&'a RadialSectorGrid),
}

impl<'a> Grid<'a> {
    pub fn len(&self) -> usize {
        match self {
            Grid::Full(c) => c.len(),
            Grid::Sector(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weights(&self) -> &'a [f64] {
        match self {
            Grid::Full(c) => &c.weights,
            Grid::Sector(s) => &s.rweights,
        }
    }

    /// Distance of node `i` from the origin.
    pub fn radius(&self, i: usize) -> f64 {
        match self {
            Grid::Full(c) => c.radii[i / c.nang],
            Grid::Sector(s) => s.rnodes[i],
        }
    }

    pub fn basis(&self) -> Basis {
        match self {
            Grid::Full(_) => Basis::FullCloud,
            Grid::Sector(s) => Basis::Sector(s.ell),
        }
    }
}

/// Radial-difference kernel `K(|x − y|)`.
#[derive(Clone)]
pub enum Kernel {
    Zero,
    /// `G_j` with the frozen constants.
    G(usize),
    /// Free fourth-order resolvent kernel.
    Fourth(SpectralPoint),
    Custom {
        f: Arc<dyn Fn(f64) -> Complex64 + Send + Sync>,
        /// Diverges as `r → 0`.
        singular: bool,
    },
}

impl core::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Kernel::Zero => write!(f, "Zero"),
            Kernel::G(j) => write!(f, "G{j}"),
            Kernel::Fourth(sp) => write!(f, "Fourth({:?})", sp),
            Kernel::Custom { singular, .. } => write!(f, "Custom {{ singular: {singular} }}"),
        }
    }
}

impl Kernel {
    pub fn custom(f: impl Fn(f64) -> Complex64 + Send + Sync + 'static, singular: bool) -> Kernel {
        Kernel::Custom { f: Arc::new(f), singular }
    }

    pub fn is_singular(&self) -> bool {
        match self {
            Kernel::Zero => false,
            Kernel::G(j) => *j <= 1,
            Kernel::Fourth(_) => true,
            Kernel::Custom { singular, .. } => *singular,
        }
    }

    pub fn is_real(&self) -> bool {
        !matches!(self, Kernel::Fourth(_) | Kernel::Custom { .. })
    }

    /// `K(r)` for `r > 0`; nonsingular kernels also accept `r = 0`.
    pub fn eval(&self, r: f64) -> Result<Complex64> {
        match self {
            Kernel::Zero => Ok(Complex64::new(0.0, 0.0)),
            Kernel::G(j) => {
                if r == 0.0 && (*j == 3 || *j == 5) {
                    return Ok(Complex64::new(0.0, 0.0));
                }
                crate::free_kernels::G_kernel(*j, r).map(|v| Complex64::new(v, 0.0))
            }
            Kernel::Fourth(sp) => fourth_order_resolvent(*sp, r),
            Kernel::Custom { f, singular } => {
                if r == 0.0 && *singular {
                    return Err(QuarticError::SingularDiagonal);
                }
                Ok(f(r))
            }
        }
    }

    #[inline]
    fn eval_fast(&self, r: f64, c: &[f64; 4]) -> Complex64 {
        match self {
            Kernel::Zero => Complex64::new(0.0, 0.0),
            Kernel::G(j) => Complex64::new(g_fast(*j, r, c), 0.0),
            Kernel::Fourth(sp) => {
                let v = profile_unchecked(sp.lambda * r);
                if sp.branch == Branch::Minus {
                    v.conj()
                } else {
                    v
                }
            }
            Kernel::Custom { f, .. } => f(r),
        }
    }

    /// Average of `K(|x|)` over the 4D ball of radius `rho`:
    /// `(4/ρ⁴)∫₀^ρ K(r) r³ dr`.
    pub fn ball_average(&self, rho: f64) -> Result<Complex64> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(QuarticError::Domain(format!("ball_average: radius must be positive, got {rho}")));
        }
        match self {
            Kernel::Zero => Ok(Complex64::new(0.0, 0.0)),
            Kernel::G(0) => Ok(Complex64::new(-1.0 / (2.0 * PI * PI * rho * rho), 0.0)),
            Kernel::G(1) => Ok(Complex64::new(-(rho.ln() - 0.25) / (8.0 * PI * PI), 0.0)),
            _ => {
                // geometric panels toward 0 absorb a log singularity
                let (x, w) = gauss_legendre(16);
                let mut acc = Complex64::new(0.0, 0.0);
                let mut hi = rho;
                let c = frozen_c();
                for _ in 0..40 {
                    let lo = 0.5 * hi;
                    for (xi, wi) in x.iter().zip(&w) {
                        let r = lo + 0.5 * (hi - lo) * (xi + 1.0);
                        acc += self.eval_fast(r, &c) * (r * r * r * wi * 0.5 * (hi - lo));
                    }
                    hi = lo;
                }
                Ok(acc * (4.0 / rho.powi(4)))
            }
        }
    }
}

fn frozen_c() -> [f64; 4] {
    ExpansionCoefficients::frozen().c_kernel
}

#[inline]
fn g_fast(j: usize, r: f64, c: &[f64; 4]) -> f64 {
    match j {
        0 => -1.0 / (4.0 * PI * PI * r * r),
        1 => -r.ln() / (8.0 * PI * PI),
        2 => c[0] * r * r,
        3 => c[1] * r * r * r.ln(),
        4 => c[2] * r.powi(4),
        _ => c[3] * r.powi(4) * r.ln(),
    }
}

/// Gegenbauer coefficients `a_ℓ` (ℓ = 0..=lmax+2) of `ln|x − y|` in `U_ℓ`.
fn log_coefficients(lmax: usize, r: f64, s: f64) -> Vec<f64> {
    let (rl, rg) = if r < s { (r, s) } else { (s, r) };
    let t = rl / rg;
    let mut a = vec![0.0; lmax + 3];
    a[0] = rg.ln() + 0.25 * t * t;
    let mut tl = 1.0;
    for (l, al) in a.iter_mut().enumerate().skip(1) {
        tl *= t;
        *al = 0.5 * (-tl / l as f64 + tl * t * t / (l + 2) as f64);
    }
    a
}

/// Multiply a `U_ℓ` expansion by `|x−y|² = A − (B/2)U₁`.
fn times_distance_sq(c: &[f64], r: f64, s: f64) -> Vec<f64> {
    let (a, b) = (r * r + s * s, 2.0 * r * s);
    let n = c.len();
    (0..n.saturating_sub(1))
        .map(|l| {
            let below = if l > 0 { c[l - 1] } else { 0.0 };
            a * c[l] - 0.5 * b * (below + c[l + 1])
        })
        .collect()
}

/// Closed-form sector coefficients where available.
fn sector_closed_form(kernel: &Kernel, lmax: usize, r: f64, s: f64) -> Option<Vec<Complex64>> {
    let to_k = |u: Vec<f64>| -> Vec<Complex64> {
        (0..=lmax).map(|l| Complex64::new(u.get(l).copied().unwrap_or(0.0) * 2.0 * PI * PI / (l + 1) as f64, 0.0)).collect()
    };
    let c = frozen_c();
    match kernel {
        Kernel::Zero => Some(vec![Complex64::new(0.0, 0.0); lmax + 1]),
        Kernel::G(0) => {
            let (rl, rg) = if r < s { (r, s) } else { (s, r) };
            let t = rl / rg;
            Some((0..=lmax).map(|l| Complex64::new(-t.powi(l as i32) / (2.0 * (l + 1) as f64 * rg * rg), 0.0)).collect())
        }
        Kernel::G(1) => {
            let a = log_coefficients(lmax, r, s);
            Some(to_k(a.iter().map(|v| -v / (8.0 * PI * PI)).collect()))
        }
        Kernel::G(2) | Kernel::G(4) => {
            let mut u = vec![0.0; lmax + 4];
            u[0] = 1.0;
            let times = if matches!(kernel, Kernel::G(2)) { 1 } else { 2 };
            let scale = if times == 1 { c[0] } else { c[2] };
            for _ in 0..times {
                u = times_distance_sq(&u, r, s);
            }
            Some(to_k(u.iter().map(|v| v * scale).collect()))
        }
        Kernel::G(3) | Kernel::G(5) => {
            let mut u = log_coefficients(lmax + 2, r, s);
            let times = if matches!(kernel, Kernel::G(3)) { 1 } else { 2 };
            let scale = if times == 1 { c[1] } else { c[3] };
            for _ in 0..times {
                u = times_distance_sq(&u, r, s);
            }
            Some(to_k(u.iter().map(|v| v * scale).collect()))
        }
        Kernel::Fourth(sp) => {
            let lam = sp.lambda;
            let (rl, rg) = if r < s { (r, s) } else { (s, r) };
            if lam * rg < FOURTH_SERIES_MAX {
                let v = fourth_sector_series(lam, lmax, r, s);
                return Some(if sp.branch == Branch::Minus { v.iter().map(|z| z.conj()).collect() } else { v });
            }
            let (a, b) = (lam * rl, lam * rg);
            let n = lmax + 1;
            let ja = j_array_unchecked(n, a);
            let jb = j_array_unchecked(n, b);
            let yb = y_array_unchecked(n, b);
            let ia = i_scaled_array_unchecked(n, a);
            let kb = k_scaled_array_unchecked(n, b);
            let damp = (a - b).exp();
            let rs = r * s;
            let out = (0..=lmax)
                .map(|l| {
                    let h = Complex64::new(jb[l + 1], yb[l + 1]);
                    let osc = Complex64::new(0.0, PI / (2.0 * rs)) * ja[l + 1] * h;
                    let dmp = ia[l + 1] * kb[l + 1] * damp / rs;
                    let v = (osc - dmp) / (2.0 * lam * lam);
                    if sp.branch == Branch::Minus {
                        v.conj()
                    } else {
                        v
                    }
                })
                .collect();
            Some(out)
        }
        _ => None,
    }
}

/// Below `λ·max(r, s)` the fourth-order sector kernel is summed from its
/// power-log series; above it the Bessel addition theorem is used.
pub const FOURTH_SERIES_MAX: f64 = 1.0;

/// Plus-branch sector kernels of `F(λ|x−y|) = Σ_k d^{2k}(α_k + β_k ln d)`.
fn fourth_sector_series(lam: f64, lmax: usize, r: f64, s: f64) -> Vec<Complex64> {
    let y = 0.25 * lam * lam;
    let lnl = (0.5 * lam).ln();
    let kmax = {
        let x2 = y * (r + s).powi(2);
        let mut k = 1usize;
        let mut term = 1.0;
        while k < 60 {
            term *= x2 / (k * (k + 1)) as f64;
            if term < 1e-19 {
                break;
            }
            k += 1;
        }
        k
    };
    let len = lmax + kmax + 3;
    let mut poly = vec![0.0; len];
    poly[0] = 1.0;
    let mut logs = log_coefficients(len - 3, r, s);
    let mut acc = vec![Complex64::new(0.0, 0.0); lmax + 1];
    let (mut sigma, mut h) = (1.0, 0.0);
    let c_re = 1.0 / (8.0 * PI * PI);
    let c_im = 1.0 / (32.0 * PI);
    for k in 0..=kmax {
        let p = 2.0 * h - 2.0 * EULER + 1.0 / (k + 1) as f64;
        let (alpha, beta) = if k % 2 == 0 {
            (Complex64::new(sigma * (0.5 * p - lnl) * c_re, sigma * c_im), -sigma * c_re)
        } else {
            (Complex64::new(0.0, -sigma * c_im), 0.0)
        };
        for (l, a) in acc.iter_mut().enumerate() {
            *a += alpha * poly[l] + beta * logs[l];
        }
        let kn = (k + 1) as f64;
        sigma *= y / (kn * (kn + 1.0));
        h += 1.0 / kn;
        poly = times_distance_sq(&poly, r, s);
        logs = times_distance_sq(&logs, r, s);
    }
    acc.iter().enumerate().map(|(l, a)| a * (2.0 * PI * PI / (l + 1) as f64)).collect()
}

/// Panels for `∫₀^π g(θ) dθ` where `g` may be log-singular at θ = 0.
fn angular_panels(kernel: &Kernel, lmax: usize, r: f64, s: f64, refine: usize) -> Vec<(f64, f64)> {
    let rl = r.min(s);
    let osc = match kernel {
        Kernel::Fourth(sp) => 2.0 * sp.lambda * rl / PI,
        _ => 0.0,
    };
    let nu = ((osc + lmax as f64 + 2.0).ceil() as usize) << refine;
    let h = PI / nu as f64;
    let theta_c = (r - s).abs() / (r * s).sqrt();
    let tmin = (0.1 * theta_c).max(1e-10).min(h);
    let mut panels = Vec::new();
    let mut lo = h;
    while lo > tmin {
        let next = 0.5 * lo;
        panels.push((next.max(0.0), lo));
        lo = next;
    }
    panels.push((0.0, lo));
    for k in 1..nu {
        panels.push((k as f64 * h, (k + 1) as f64 * h));
    }
    panels
}

fn sector_numeric(kernel: &Kernel, lmax: usize, r: f64, s: f64, refine: usize) -> Vec<Complex64> {
    let (x, w) = gauss_legendre(12);
    let c = frozen_c();
    let mut acc = vec![Complex64::new(0.0, 0.0); lmax + 1];
    for (lo, hi) in angular_panels(kernel, lmax, r, s, refine) {
        let half = 0.5 * (hi - lo);
        for (xi, wi) in x.iter().zip(&w) {
            let th = lo + half * (xi + 1.0);
            let (sn, cs) = th.sin_cos();
            // |x−y|² = (r−s)² + 2rs(1 − cos θ), without cancellation
            let half_sin = (0.5 * th).sin();
            let d = ((r - s).powi(2) + 4.0 * r * s * half_sin * half_sin).sqrt();
            if d == 0.0 {
                continue;
            }
            let kv = kernel.eval_fast(d, &c) * (wi * half * sn);
            // sin((ℓ+1)θ) by the Chebyshev recurrence
            let (mut sp, mut sc) = (0.0, sn);
            for a in acc.iter_mut() {
                *a += kv * sc;
                let nx = 2.0 * cs * sc - sp;
                sp = sc;
                sc = nx;
            }
        }
    }
    acc.iter().enumerate().map(|(l, a)| a * (4.0 * PI / (l + 1) as f64)).collect()
}

/// All sector coefficients `k_0 … k_lmax` at `(r, s)`; closed forms where
/// known, single-pass angular quadrature otherwise.
///
/// One radius may be zero: the kernel is then constant on the sphere and
/// only `k_0 = 2π² K(max(r, s))` survives.
pub fn sector_reduce_all(kernel: &Kernel, lmax: usize, r: f64, s: f64) -> Result<Vec<Complex64>> {
    if !(r.is_finite() && s.is_finite() && r >= 0.0 && s >= 0.0 && r.max(s) > 0.0) {
        return Err(QuarticError::Domain(format!("sector reduction needs positive radii, got r={r}, s={s}")));
    }
    if let Kernel::G(j) = kernel {
        if *j > 5 {
            return Err(QuarticError::Domain(format!("G_kernel index {j} outside 0..5")));
        }
    }
    if r == 0.0 || s == 0.0 {
        let mut out = vec![Complex64::new(0.0, 0.0); lmax + 1];
        out[0] = kernel.eval(r.max(s))? * (2.0 * PI * PI);
        return Ok(out);
    }
    Ok(sector_closed_form(kernel, lmax, r, s).unwrap_or_else(|| sector_numeric(kernel, lmax, r, s, 0)))
}

/// Degree-ℓ sector kernel `k_ℓ(r, s) = (4π/(ℓ+1))∫₀^π K(|x−y|) U_ℓ(cos θ) sin²θ dθ`.
///
/// Numerical reductions are checked against a refined pass; disagreement
/// after a second refinement is a numerical error.
pub fn sector_reduce_kernel(kernel: &Kernel, ell: usize, r: f64, s: f64) -> Result<Complex64> {
    if !(r.is_finite() && s.is_finite() && r > 0.0 && s > 0.0) {
        return Err(QuarticError::Domain(format!("sector reduction needs positive radii, got r={r}, s={s}")));
    }
    if let Some(v) = sector_closed_form(kernel, ell, r, s) {
        return Ok(v[ell]);
    }
    let scale = kernel.eval_fast(r.max(s), &frozen_c()).norm().max(1e-300);
    let mut prev = sector_numeric(kernel, ell, r, s, 0)[ell];
    for refine in 1..=2 {
        let next = sector_numeric(kernel, ell, r, s, refine)[ell];
        if (next - prev).norm() <= 1e-10 * scale.max(next.norm()) {
            return Ok(next);
        }
        prev = next;
    }
    Err(QuarticError::Numerical(format!("sector reduction of {kernel:?} at l={ell}, r={r}, s={s} did not converge")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularityPolicy {
    /// Error if the kernel is singular on the diagonal.
    Forbid,
    /// Zero diagonal.
    Exclude,
    /// Ball average over a cell of volume `w_i` (every kernel, so that
    /// expansions of the kernel carry over term by term to the diagonal).
    CellAverage,
    /// Plain `K(0)`; singular kernels are an error.
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Basis {
    FullCloud,
    Sector(usize),
}

/// Dense operator in the weighted Nyström basis `u_i = √w_i φ(x_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    pub entries: DMatrix<Complex64>,
    pub basis: Basis,
    pub symmetrized: bool,
}

impl OperatorMatrix {
    pub fn zeros(n: usize, basis: Basis) -> Self {
        OperatorMatrix { entries: DMatrix::zeros(n, n), basis, symmetrized: true }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// `‖A − Aᴴ‖_F / ‖A‖_F` (0 for the zero matrix).
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.entries.norm();
        if n == 0.0 {
            return 0.0;
        }
        (&self.entries - self.entries.adjoint()).norm() / n
    }

    pub fn conj(&self) -> Self {
        OperatorMatrix { entries: self.entries.map(|z| z.conj()), basis: self.basis, symmetrized: self.symmetrized }
    }
}

/// Radius of the 4D ball with volume `w`.
pub fn cell_radius(w: f64) -> f64 {
    (2.0 * w / (PI * PI)).powf(0.25)
}

/// `M_ij = vleft_i √w_i K(x_i, x_j) √w_j vright_j`, diagonal per `policy`.
pub fn nystrom_matrix(
    kernel: &Kernel,
    grid: Grid<'_>,
    vleft: &[f64],
    vright: &[f64],
    policy: SingularityPolicy,
) -> Result<OperatorMatrix> {
    let n = grid.len();
    if vleft.len() != n || vright.len() != n {
        return Err(QuarticError::Domain(format!(
            "nystrom_matrix: node functions have lengths {}/{}, grid has {n} nodes",
            vleft.len(),
            vright.len()
        )));
    }
    if policy == SingularityPolicy::Forbid && kernel.is_singular() && matches!(grid, Grid::Full(_)) {
        return Err(QuarticError::SingularDiagonal);
    }
    let raw = kernel_matrix(kernel, grid, policy)?;
    let sw: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let entries = DMatrix::from_fn(n, n, |i, j| raw[(i, j)] * (vleft[i] * sw[i] * sw[j] * vright[j]));
    Ok(OperatorMatrix { entries, basis: grid.basis(), symmetrized: true })
}

/// Diagonal kernel values `K(x_i, x_i)` under `policy`.
pub fn diagonal_entries(kernel: &Kernel, grid: Grid<'_>, policy: SingularityPolicy) -> Result<Vec<Complex64>> {
    let n = grid.len();
    match grid {
        Grid::Full(cloud) => {
            let singular = kernel.is_singular();
            match policy {
                SingularityPolicy::Exclude => Ok(vec![Complex64::new(0.0, 0.0); n]),
                SingularityPolicy::Forbid | SingularityPolicy::Direct => {
                    if singular {
                        return Err(QuarticError::SingularDiagonal);
                    }
                    Ok(vec![kernel.eval(0.0)?; n])
                }
                SingularityPolicy::CellAverage => {
                    cloud.weights.iter().map(|&w| kernel.ball_average(cell_radius(w))).collect()
                }
            }
        }
        Grid::Sector(sg) => {
            if policy == SingularityPolicy::Exclude {
                return Ok(vec![Complex64::new(0.0, 0.0); n]);
            }
            sg.rnodes.iter().map(|&r| sector_reduce_all(kernel, sg.ell, r, r).map(|v| v[sg.ell])).collect()
        }
    }
}

/// Unweighted kernel samples `K(x_i, x_j)` with the diagonal per `policy`.
pub fn kernel_matrix(kernel: &Kernel, grid: Grid<'_>, policy: SingularityPolicy) -> Result<DMatrix<Complex64>> {
    let n = grid.len();
    let diag = match grid {
        Grid::Full(_) => diagonal_entries(kernel, grid, policy)?,
        Grid::Sector(_) if policy == SingularityPolicy::Exclude => vec![Complex64::new(0.0, 0.0); n],
        Grid::Sector(_) => Vec::new(),
    };
    let rows: Vec<Vec<Complex64>> = match grid {
        Grid::Full(cloud) => {
            let c = frozen_c();
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let xi = cloud.nodes[i];
                    (0..n)
                        .map(|j| {
                            if i == j {
                                return diag[i];
                            }
                            let xj = cloud.nodes[j];
                            let d = ((xi[0] - xj[0]).powi(2)
                                + (xi[1] - xj[1]).powi(2)
                                + (xi[2] - xj[2]).powi(2)
                                + (xi[3] - xj[3]).powi(2))
                            .sqrt();
                            kernel.eval_fast(d, &c)
                        })
                        .collect()
                })
                .collect()
        }
        Grid::Sector(sg) => {
            let ell = sg.ell;
            let upper: Vec<Vec<Complex64>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    (i..n)
                        .map(|j| {
                            if i == j && !diag.is_empty() {
                                return Ok(diag[i]);
                            }
                            sector_reduce_all(kernel, ell, sg.rnodes[i], sg.rnodes[j]).map(|v| v[ell])
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            (0..n)
                .map(|i| (0..n).map(|j| if j >= i { upper[i][j - i] } else { upper[j][i - j] }).collect())
                .collect()
        }
    };
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Kernel samples between arbitrary points `x` and the grid nodes (no
/// diagonal handling; coincident points are an error for singular kernels).
pub fn kernel_column(kernel: &Kernel, cloud: &PointCloud, x: &[f64; 4]) -> Result<Vec<Complex64>> {
    let c = frozen_c();
    cloud
        .nodes
        .iter()
        .map(|y| {
            let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2) + (x[3] - y[3]).powi(2)).sqrt();
            if d == 0.0 {
                kernel.eval(0.0)
            } else {
                Ok(kernel.eval_fast(d, &c))
            }
        })
        .collect()
}
