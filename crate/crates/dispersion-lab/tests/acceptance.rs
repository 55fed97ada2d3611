//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p dispersion-lab --test acceptance [-- N ...]` runs all
//! criteria or only the listed numbers. Exits nonzero only on failures
//! outside `KNOWN`.

use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;
use quartic::birman_schwinger::*;
use quartic::discretization::{build_full_grid, build_sector_grid, gauss_legendre};
use quartic::free_kernels::{expansion_residual_exponent, linear_fit, smooth_cutoff, SpectralPoint};
use quartic::oscillatory_quadrature::*;
use quartic::threshold_classifier::*;

use dispersion_lab::config::{Coupling, GridConfig};
use dispersion_lab::{run_experiment, selftest, ExperimentConfig, ExperimentKind};

/// Criteria expected to fail on this discretisation.
const KNOWN: &[usize] = &[10];

type Outcome = Result<(bool, String), String>;

fn gauss(amplitude: f64) -> PotentialSpec {
    PotentialSpec::new(PotentialFamily::GaussianBump { width: 1.0, center: [0.0; 4] }, amplitude).unwrap()
}

fn sector(ell: usize, nr: usize) -> GridData {
    GridData::Sector(build_sector_grid(ell, nr, 40.0).unwrap())
}

fn full(nr: usize, nang: usize, rmax: f64) -> GridData {
    GridData::Full(build_full_grid(nr, nang, rmax).unwrap())
}

fn at(grid: &GridData, p: &PotentialSpec, beta: f64) -> Result<BSContext, String> {
    let mut q = p.clone();
    q.amplitude = beta;
    BSContext::new(grid.clone(), q).map_err(|e| e.to_string())
}

fn weakest(grid: &GridData, p: &PotentialSpec, lo: f64, hi: f64) -> Result<f64, String> {
    let b = critical_couplings_definite(grid, p, lo, hi).map_err(|e| e.to_string())?;
    b.last().copied().ok_or_else(|| format!("no critical coupling in [{lo}, {hi}]"))
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a * (b / a).powf(k as f64 / (n - 1) as f64)).collect()
}

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
}

fn c1() -> Outcome {
    let pv = selftest::pv_hankel_max_error().map_err(e)?;
    let order = selftest::pde_order_defect().map_err(e)?;
    Ok((pv <= 1e-6 && order <= 0.3, format!("pv-hankel rel err {pv:.2e} (<=1e-6), pde order defect {order:.3} (<=0.3)")))
}

fn c2() -> Outcome {
    let s = expansion_residual_exponent(5, 1e-3, 1e-1, 21).map_err(e)?;
    Ok(((5.5..=6.5).contains(&s), format!("remainder slope {s:.4} in [5.5, 6.5]")))
}

fn decay_exponent(cfg: &ExperimentConfig) -> Result<(f64, dispersion_lab::Bundle), String> {
    let b = run_experiment(cfg).map_err(e)?;
    let fit = b.report().decay.as_ref().and_then(|d| d.fit.clone()).ok_or("no fit in report")?;
    Ok((fit.exponent, b))
}

fn c3() -> Outcome {
    let (p, b) = decay_exponent(&ExperimentConfig::preset(ExperimentKind::FreeDecay))?;
    let scaling = b.report().checks.iter().find(|c| c.name == "free-scaling-defect").ok_or("no scaling check")?.value;
    Ok(((p + 1.0).abs() <= 0.05 && scaling <= 1e-8, format!("exponent {p:.4} (-1 +- 0.05), scaling defect {scaling:.2e}")))
}

fn c4() -> Outcome {
    let g = full(12, 98, 8.0);
    let lams = logspace(1e-3, 1e-1, 7);
    let lx: Vec<f64> = lams.iter().map(|l| l.ln()).collect();
    let mut ok = true;
    let mut msg = vec![];
    for (level, beta, min) in [(ExpansionLevel::Leading, 9.0, 0.5), (ExpansionLevel::Second, 13.0, 2.0), (ExpansionLevel::Fourth, 17.0, 4.0)] {
        let ctx = BSContext::new(g.clone(), PotentialSpec::new(PotentialFamily::InversePower { beta }, -1.0).map_err(e)?).map_err(e)?;
        let mut ly = vec![];
        for &l in &lams {
            let r = m_expansion_remainder(&ctx, SpectralPoint::plus(l).map_err(e)?, level).map_err(e)?;
            ly.push(r.entries.norm().ln());
        }
        let (slope, _) = linear_fit(&lx, &ly);
        ok &= slope >= min;
        msg.push(format!("{level:?} rate {slope:.3} (>={min})"));
    }
    Ok((ok, format!("N={}: {}", g.view().len(), msg.join(", "))))
}

fn c5() -> Outcome {
    let opts = ClassifyOptions::default();
    let mut ok = true;
    let mut msg = vec![];
    let mut routes = true;

    let ctx = at(&full(12, 98, 8.0), &gauss(1.0), -1e-3)?;
    let chain = build_chain(&ctx, opts).map_err(e)?;
    let r = classify_with_chain(&ctx, &chain, opts).map_err(e)?;
    let margin = chain.sigma_history[0][0] / chain.scales[0];
    let a = r.verdict == Verdict::Regular && margin > 1e3 * opts.tol;
    routes &= r.routes_agree;
    ok &= a;
    msg.push(format!("(a) {:?} sigma/scale {margin:.2e}", r.verdict));

    let p = gauss(1.0);
    let g = sector(0, 200);
    let ctx = at(&g, &p, weakest(&g, &p, -200.0, -1.0)?)?;
    let chain = build_chain(&ctx, opts).map_err(e)?;
    let r = classify_with_chain(&ctx, &chain, opts).map_err(e)?;
    let l1 = moments(&ctx, &chain.t, &chain.bases[0].column(0).into_owned()).l1;
    let c0 = r.vectors.first().map_or(0.0, |v| v.c0);
    ok &= r.verdict == Verdict::Kind1 && c0.abs() > 1e-4 * l1;
    routes &= r.routes_agree;
    msg.push(format!("(b) {:?} |c0|/l1 {:.2e}", r.verdict, c0.abs() / l1));

    let g = sector(1, 200);
    let r = classify(&at(&g, &p, weakest(&g, &p, -400.0, -1.0)?)?, opts).map_err(e)?;
    ok &= r.verdict == Verdict::Kind2 && r.dims[0] == 4;
    routes &= r.routes_agree;
    msg.push(format!("(c) {:?} {:?}", r.verdict, r.dims));

    let g = sector(2, 200);
    let r = classify(&at(&g, &p, weakest(&g, &p, -1500.0, -1.0)?)?, opts).map_err(e)?;
    ok &= r.verdict == Verdict::Kind3 && r.dims[0] <= 10;
    routes &= r.routes_agree;
    msg.push(format!("(d) {:?} {:?}", r.verdict, r.dims));

    msg.push(format!("(e) routes agree {routes}"));
    Ok((ok && routes, msg.join("; ")))
}

fn c6() -> Outcome {
    let opts = ClassifyOptions::default();
    let p = inverse_construct(PsiFamily { ell: 3, exponent: 6.0 }).map_err(e)?;
    let g = sector(3, 200);
    let sweep = coupling_sweep(&g, &p, 0.8, 1.2, 6, opts).map_err(e)?;
    let crit = sweep.critical.first().ok_or("no critical coupling in [0.8, 1.2]")?;
    let ctx = at(&g, &p, crit.beta)?;
    let chain = build_chain(&ctx, opts).map_err(e)?;
    let t4 = t4_identity(&ctx, &chain)
        .map_err(e)?
        .iter()
        .map(|(form, norm)| (form - norm).abs() / norm)
        .fold(0.0, f64::max);
    let pe = eigen_projection(&chain, &ctx).map_err(e)?;
    let m = &pe.matrix;
    let idem = (m * m - m).norm() / m.norm();
    let sym = (m - m.transpose()).norm() / m.norm();
    let fix = pe.psi.iter().map(|p| (m * p - p).norm() / p.norm()).fold(0.0, f64::max);
    let ok = crit.report.verdict == Verdict::Kind4 && pe.rank > 0 && t4 <= 1e-6 && idem <= 1e-6 && sym <= 1e-6 && fix <= 1e-6;
    Ok((
        ok,
        format!(
            "beta* {:.8} {:?}, t4 identity {t4:.1e}, idempotent {idem:.1e}, symmetric {sym:.1e}, P psi = psi {fix:.1e}",
            crit.beta, crit.report.verdict
        ),
    ))
}

fn c7() -> Outcome {
    let opts = ClassifyOptions::default();
    let mut ok = true;
    let mut msg = vec![];

    let g = full(8, 98, 6.0);
    let p = PotentialSpec::new(PotentialFamily::SectorModulated { width: 1.0, depth: 0.5 }, -1.0).map_err(e)?;
    let roots = critical_couplings_definite(&g, &p, -140.0, -1.0).map_err(e)?;
    let mut kind1 = None;
    for &beta in roots.iter().rev() {
        let r = classify(&at(&g, &p, beta)?, opts).map_err(e)?;
        if r.verdict == Verdict::Kind1 {
            kind1 = r.vectors[0].tail_exponent;
            break;
        }
    }
    match kind1 {
        Some(s) => {
            ok &= (s + 1.0).abs() <= 0.3;
            msg.push(format!("kind1 {s:.3} (-1)"));
        }
        None => {
            ok = false;
            msg.push("kind1 not found".into());
        }
    }

    let p = gauss(1.0);
    for (ell, lo, expected) in [(1, -400.0, -1.0), (2, -1500.0, -2.0)] {
        let g = sector(ell, 200);
        let r = classify(&at(&g, &p, weakest(&g, &p, lo, -1.0)?)?, opts).map_err(e)?;
        let s = r.vectors.first().and_then(|v| v.tail_exponent).unwrap_or(f64::NAN);
        ok &= (s - expected).abs() <= 0.3;
        msg.push(format!("{:?} {s:.3} ({expected})", r.verdict));
    }

    let p = inverse_construct(PsiFamily { ell: 3, exponent: 6.0 }).map_err(e)?;
    let sweep = coupling_sweep(&sector(3, 200), &p, 0.8, 1.2, 6, opts).map_err(e)?;
    let r = &sweep.critical.first().ok_or("no kind4 coupling")?.report;
    let s = r.vectors.first().and_then(|v| v.tail_exponent).unwrap_or(f64::NAN);
    ok &= s <= -3.0 + 0.3;
    msg.push(format!("{:?} {s:.3} (<= -2.7)", r.verdict));
    Ok((ok, msg.join(", ")))
}

fn c8() -> Outcome {
    let (p, _) = decay_exponent(&ExperimentConfig::preset(ExperimentKind::RegularDecay))?;
    let (_, b) = decay_exponent(&ExperimentConfig::preset(ExperimentKind::WeightedDecay))?;
    let ratio = b.report().decay.as_ref().unwrap().probe_fits.iter().filter_map(|f| f.ratio).fold(0.0, f64::max);
    Ok(((p + 1.0).abs() <= 0.1 && ratio <= 50.0, format!("regular exponent {p:.4} (-1 +- 0.1), weighted max ratio {ratio:.2} (<=50)")))
}

fn c9() -> Outcome {
    let (p, b) = decay_exponent(&ExperimentConfig::preset(ExperimentKind::ResonantDecay))?;
    let v = b.report().classification.as_ref().map(|c| c.verdict);
    Ok(((p + 0.5).abs() <= 0.15, format!("{v:?} exponent {p:.4} (-0.5 +- 0.15)")))
}

fn c10() -> Outcome {
    let mut ok = true;
    let mut msg = vec![];
    for (ell, lo) in [(0, -200.0), (2, -1500.0)] {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::ResonantDecay);
        cfg.grid = GridConfig::Sector { nr: 200, rmax: 40.0, ell, lmax: 3 };
        cfg.coupling = Coupling::Critical { lo, hi: -1.0, index: 0 };
        let (p, b) = decay_exponent(&cfg)?;
        let v = b.report().classification.as_ref().map(|c| c.verdict);
        ok &= p > -0.9;
        msg.push(format!("l={ell} {v:?} exponent {p:.4} (>-0.9)"));
    }
    let ts: Vec<f64> = (0..=16).map(|k| 10f64.powf(2.0 + k as f64 / 4.0)).collect();
    let rows = log_decay_probe(0.4, &ts, &QuadOptions::default()).map_err(e)?;
    let w: Vec<f64> = rows.iter().map(|r| r.abs_value * r.t * r.t.ln().powi(2)).collect();
    let (lo, hi) = w.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    ok &= lo > 0.0 && hi / lo <= 10.0;
    msg.push(format!("log toy sup/inf {:.2} (<=10)", hi / lo));
    Ok((ok, msg.join(", ")))
}

fn brute_force(f: impl Fn(f64) -> f64, b: f64, t: f64, panels: usize) -> Complex64 {
    let (x, w) = gauss_legendre(5);
    let h = b / panels as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for p in 0..panels {
        let lo = h * p as f64;
        for (xi, wi) in x.iter().zip(&w) {
            let l = lo + 0.5 * h * (xi + 1.0);
            acc += Complex64::from_polar(f(l) * 0.5 * h * wi * l.powi(3), -t * l.powi(4));
        }
    }
    acc
}

fn c11() -> Outcome {
    let re = |x: f64| Complex64::new(x, 0.0);
    let suite = vec![
        ("chi", StoneIntegrand::new(move |_| re(1.0), Support::Low { lambda1: 0.05 }, Smoothness::Smooth)),
        ("chi-wide", StoneIntegrand::new(move |_| re(1.0), Support::Low { lambda1: 0.7 }, Smoothness::Smooth)),
        ("cos", StoneIntegrand::new(|l| Complex64::new((3.0 * l).cos(), l * l), Support::Low { lambda1: 0.6 }, Smoothness::Smooth)),
        (
            "free-offdiag",
            StoneIntegrand::new(move |l| re(free_stone_density(l, 1.5).unwrap()), Support::Low { lambda1: 1.0 }, Smoothness::Smooth),
        ),
        ("high", StoneIntegrand::new(move |l| re(1.0 / (1.0 + l * l)), Support::High { lambda1: 0.5, lambda_max: 2.0 }, Smoothness::Smooth)),
    ];
    let mut worst = 0.0f64;
    let mut compared = 0;
    for (name, g) in &suite {
        for t in [0.0, 0.5, 3.0, 10.0, 100.0, 1e3] {
            let r = stone_integral(g, t).map_err(|err| format!("{name} t={t}: {err}"))?;
            if let Some(other) = r.cross_check {
                worst = worst.max((r.value - other).norm() / 1e-8f64.max(1e-6 * r.value.norm()));
                compared += 1;
            }
        }
    }
    let g = StoneIntegrand::new(move |_| re(1.0), Support::Low { lambda1: 0.05 }, Smoothness::Smooth);
    let mut oracle_err = 0.0f64;
    for t in [0.0, 10.0, 1e3] {
        let r = stone_integral(&g, t).map_err(e)?;
        let o = brute_force(|l| smooth_cutoff(l, 0.05), 0.1, t, 1_000_000);
        oracle_err = oracle_err.max((r.value - o).norm() / o.norm());
    }
    Ok((
        worst <= 1.0 && compared > 0 && oracle_err <= 1e-8,
        format!("two-method gap {worst:.2e} of tolerance over {compared} pairs, brute-force rel err {oracle_err:.2e} (<=1e-8)"),
    ))
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "free-kernel-oracles", c1),
        (2, "low-energy-expansion-order", c2),
        (3, "free-decay", c3),
        (4, "m-expansion-rates", c4),
        (5, "classification", c5),
        (6, "kind4-projection", c6),
        (7, "resonance-tails", c7),
        (8, "regular-decay", c8),
        (9, "resonant-decay-kind2", c9),
        (10, "resonant-decay-slow", c10),
        (11, "oscillatory-quadrature", c11),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter(|a| !a.starts_with("--")).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = 0;
    for (n, name, f) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(err) => (false, format!("error: {err}")),
        };
        let known = !pass && KNOWN.contains(&n);
        println!(
            "{} {n} {name}: {detail} [{:.1}s]{}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            if known { " (known deviation)" } else { "" }
        );
        if !pass && !known {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
