//! Free-kernel checks run before any perturbed experiment.

use std::f64::consts::PI;

use num_complex::Complex64;
use quartic::discretization::gauss_legendre;
use quartic::free_kernels::{expansion_residual_exponent, fourth_order_resolvent, SpectralPoint};
use quartic::oscillatory_quadrature::{stone_integral_with, QuadOptions, Smoothness, StoneIntegrand, Support};
use quartic::birman_schwinger::free_stone_density;
use quartic::special_functions::bessel_j1;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, hi: f64) -> Self {
        Check { name: name.into(), value, lo: None, hi: Some(hi), pass: value <= hi }
    }

    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Check { name: name.into(), value, lo: Some(lo), hi: Some(hi), pass: (lo..=hi).contains(&value) }
    }

    pub fn at_least(name: &str, value: f64, lo: f64) -> Self {
        Check { name: name.into(), value, lo: Some(lo), hi: None, pass: value >= lo }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SelftestReport {
    pub checks: Vec<Check>,
    pub pass: bool,
}

fn composite(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let (x, w) = rule;
    let h = (b - a) / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        for (xi, wi) in x.iter().zip(w) {
            s += wi * f(c + 0.5 * h * xi);
        }
    }
    0.5 * h * s
}

/// `R(λ⁴)(r)` from the Hankel inversion of `1/(|ξ|⁴ − λ⁴ − i0)`:
/// `(1/4π²r)·PV∫ s²J₁(sr)/(s⁴−λ⁴)ds + iJ₁(λr)/(16πλr)`.
pub fn pv_hankel_kernel(lambda: f64, r: f64) -> Complex64 {
    let rule = gauss_legendre(20);
    let l2 = lambda * lambda;
    let g = |s: f64| s * s * bessel_j1(s * r).unwrap_or(f64::NAN) / ((s + lambda) * (s * s + l2));
    let gl = g(lambda);
    let near = composite(|s| (g(s) - gl) / (s - lambda), 0.0, 2.0 * lambda, 40, &rule);
    let smax = 3000.0 / r;
    let far = composite(|s| g(s) / (s - lambda), 2.0 * lambda, smax, ((smax * r) as usize).max(200), &rule);
    let x = lambda * r;
    Complex64::new((near + far) / (4.0 * PI * PI * r), bessel_j1(x).unwrap_or(f64::NAN) / (16.0 * PI * x))
}

/// Largest relative gap to [`pv_hankel_kernel`] on a 5×5 grid of `λ ∈ [0.5, 2]`, `r ∈ [0.5, 5]`.
pub fn pv_hankel_max_error() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        let lambda = 0.5 + 1.5 * i as f64 / 4.0;
        for j in 0..5 {
            let r = 0.5 + 4.5 * j as f64 / 4.0;
            let k = fourth_order_resolvent(SpectralPoint::plus(lambda)?, r)?;
            let o = pv_hankel_kernel(lambda, r);
            worst = worst.max((k - o).norm() / k.norm());
        }
    }
    Ok(worst)
}

/// `|((−Δ)² − λ⁴)K|` at `r` by centred differences of step `h` on the radial bilaplacian.
pub fn pde_residual(lambda: f64, r: f64, h: f64) -> Result<f64> {
    let sp = SpectralPoint::plus(lambda)?;
    let f = |k: i32| fourth_order_resolvent(sp, r + k as f64 * h);
    let (fm2, fm1, f0, fp1, fp2) = (f(-2)?, f(-1)?, f(0)?, f(1)?, f(2)?);
    let d1 = (fp1 - fm1) / (2.0 * h);
    let d2 = (fp1 - f0 * 2.0 + fm1) / (h * h);
    let d3 = (fp2 - fp1 * 2.0 + fm1 * 2.0 - fm2) / (2.0 * h.powi(3));
    let d4 = (fp2 - fp1 * 4.0 + f0 * 6.0 - fm1 * 4.0 + fm2) / h.powi(4);
    let bil = d4 + d3 * (6.0 / r) + d2 * (3.0 / (r * r)) - d1 * (3.0 / r.powi(3));
    Ok((bil - f0 * lambda.powi(4)).norm())
}

/// Worst deviation of the observed residual order from 2 under `h → h/2`.
pub fn pde_order_defect() -> Result<f64> {
    let lambda = 0.7;
    let mut worst: f64 = 0.0;
    for r in [1.0, 1.6, 3.0, 6.0] {
        let order = (pde_residual(lambda, r, 0.08)? / pde_residual(lambda, r, 0.04)?).log2();
        worst = worst.max((order - 2.0).abs());
    }
    Ok(worst)
}

/// `K(t, x, y)` of the free evolution, `4∫e^{−itλ⁴}λ³ρ₀(λ, |x−y|)dλ`, tapered at `lambda_max`.
pub fn free_propagator(t: f64, d: f64, lambda_max: f64, opts: &QuadOptions) -> Result<Complex64> {
    let g = StoneIntegrand::new(
        move |l| Complex64::new(free_stone_density(l, d).unwrap_or(f64::NAN), 0.0),
        Support::Full { lambda_max },
        Smoothness::Smooth,
    );
    Ok(stone_integral_with(&g, t, opts)?.value * 4.0)
}

/// Worst relative gap in `K(t,0,0) = t⁻¹K(1,0,0)` over `t ∈ {10, 10², 10³}`.
pub fn free_scaling_defect(lambda_max: f64) -> Result<f64> {
    let opts = QuadOptions { rel_tol: 1e-11, cross_check: false, ..QuadOptions::default() };
    let k1 = free_propagator(1.0, 0.0, lambda_max, &opts)?;
    let mut worst: f64 = 0.0;
    for t in [10.0, 100.0, 1000.0] {
        let kt = free_propagator(t, 0.0, lambda_max, &opts)?;
        worst = worst.max((kt * t - k1).norm() / k1.norm());
    }
    Ok(worst)
}

/// Largest `|R⁻ − conj(R⁺)|/|R⁺|` on the oracle grid.
pub fn branch_conjugation_defect() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for lambda in [0.01, 0.5, 1.0, 2.0, 8.0] {
        for r in [0.01, 0.5, 2.0, 5.0, 40.0] {
            let p = fourth_order_resolvent(SpectralPoint::plus(lambda)?, r)?;
            let m = fourth_order_resolvent(SpectralPoint::minus(lambda)?, r)?;
            worst = worst.max((m - p.conj()).norm() / p.norm());
        }
    }
    Ok(worst)
}

pub fn run(lambda_max: f64) -> Result<SelftestReport> {
    let checks = vec![
        Check::at_most("pv-hankel-relative-error", pv_hankel_max_error()?, 1e-6),
        Check::at_most("pde-residual-order-defect", pde_order_defect()?, 0.3),
        Check::within("expansion-remainder-slope", expansion_residual_exponent(5, 1e-3, 1e-1, 21)?, 5.5, 6.5),
        Check::at_most("branch-conjugation-defect", branch_conjugation_defect()?, 1e-14),
        Check::at_most("free-scaling-defect", free_scaling_defect(lambda_max)?, 1e-8),
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(SelftestReport { checks, pass })
}
