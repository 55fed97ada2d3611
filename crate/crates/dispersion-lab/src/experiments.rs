//! The experiment suite.

use num_complex::Complex64;
use quartic::birman_schwinger::{
    free_stone_density, BSContext, GridData, PotentialSpec, SectorStack, SolveOptions,
};
use quartic::discretization::{build_full_grid, build_sector_grid};
use quartic::oscillatory_quadrature::{
    decay_probe_many, stone_integral_with, ProbeOptions, QuadOptions, Smoothness, StoneIntegrand, Support,
};
use quartic::threshold_classifier::{
    build_chain, classify_with_chain, coupling_sweep, critical_couplings_definite, resonance_function, ClassifyOptions,
    Verdict,
};
use rayon::prelude::*;

use crate::config::{Coupling, ExperimentConfig, ExperimentKind, GridConfig, ProbePair};
use crate::error::{LabError, Result};
use crate::fit::{fit_decay, DecayFit};
use crate::plot;
use crate::report::*;
use crate::selftest::{self, Check};

/// Evaluate rows and fit (`Full`) or evaluate rows only (`RowsOnly`, the `stone` subcommand).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Full,
    RowsOnly,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Bundle> {
    run_with_mode(cfg, Mode::Full)
}

pub fn run_with_mode(cfg: &ExperimentConfig, mode: Mode) -> Result<Bundle> {
    cfg.validate()?;
    let mut bundle = Bundle { report: Some(Report::new(cfg)), ..Bundle::default() };
    if mode == Mode::RowsOnly && !cfg.experiment.is_decay() {
        return Err(LabError::Config(format!("{} has no kernel rows to evaluate", cfg.experiment.name())));
    }
    match cfg.experiment {
        ExperimentKind::KernelSelftest => kernel_selftest(cfg, &mut bundle)?,
        ExperimentKind::FreeDecay => free_decay(cfg, mode, &mut bundle)?,
        ExperimentKind::RegularDecay | ExperimentKind::WeightedDecay | ExperimentKind::ResonantDecay => {
            perturbed_decay(cfg, mode, &mut bundle)?
        }
        ExperimentKind::Sweep => sweep(cfg, &mut bundle)?,
        ExperimentKind::ClassifyOnly => classify_only(cfg, &mut bundle)?,
    }
    Ok(bundle)
}

fn report(b: &mut Bundle) -> &mut Report {
    b.report.as_mut().expect("bundle has a report")
}

fn classify_opts(cfg: &ExperimentConfig) -> ClassifyOptions {
    ClassifyOptions { tol: cfg.tolerances.classify, moment_tol: cfg.tolerances.moment }
}

fn quad_opts(cfg: &ExperimentConfig) -> QuadOptions {
    QuadOptions { rel_tol: cfg.tolerances.quad_rel, cross_check: false, ..QuadOptions::default() }
}

pub fn grid_data(grid: &GridConfig) -> Result<GridData> {
    Ok(match *grid {
        GridConfig::Sector { nr, rmax, ell, .. } => GridData::Sector(build_sector_grid(ell, nr, rmax)?),
        GridConfig::Full { nr, nang, rmax } => GridData::Full(build_full_grid(nr, nang, rmax)?),
    })
}

/// Amplitude of the run: as configured, or a critical value of the configured grid.
pub fn resolve_coupling(cfg: &ExperimentConfig, grid: &GridData) -> Result<f64> {
    match cfg.coupling {
        Coupling::Fixed => Ok(cfg.potential.amplitude),
        Coupling::Critical { lo, hi, index } => {
            let mut found = critical_couplings_definite(grid, &cfg.potential, lo, hi)?;
            // weakest first
            found.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
            found.get(index).copied().ok_or_else(|| {
                LabError::Config(format!("coupling: {} critical values in [{lo}, {hi}], index {index} requested", found.len()))
            })
        }
    }
}

fn at_coupling(p: &PotentialSpec, beta: f64) -> PotentialSpec {
    PotentialSpec { amplitude: beta, ..p.clone() }
}

fn kernel_selftest(cfg: &ExperimentConfig, b: &mut Bundle) -> Result<()> {
    let st = selftest::run(cfg.spectral.lambda_max)?;
    let r = report(b);
    r.checks.extend(st.checks.iter().cloned());
    if !st.pass {
        r.flag(EXIT_ACCURACY, "kernel self-test failed");
    }
    r.selftest = Some(st);
    Ok(())
}

fn dist(p: &ProbePair) -> f64 {
    (0..4).map(|i| (p.x[i] - p.y[i]).powi(2)).sum::<f64>().sqrt()
}

fn window(cfg: &ExperimentConfig, t: &[f64]) -> (f64, f64) {
    cfg.fit_window.map(|[a, b]| (a, b)).unwrap_or((t[0], t[t.len() - 1]))
}

fn free_decay(cfg: &ExperimentConfig, mode: Mode, b: &mut Bundle) -> Result<()> {
    let t = cfg.t_grid.values();
    let opts = quad_opts(cfg);
    let lambda_max = cfg.spectral.lambda_max;
    let jobs: Vec<(usize, f64)> =
        (0..cfg.probes.len()).flat_map(|p| t.iter().map(move |&t| (p, t))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(p, t)| {
            let d = dist(&cfg.probes[p]);
            let g = StoneIntegrand::new(
                move |l| Complex64::new(free_stone_density(l, d).unwrap_or(f64::NAN), 0.0),
                Support::Full { lambda_max },
                Smoothness::Smooth,
            );
            let q = stone_integral_with(&g, t, &opts)?;
            Ok(row(p, t, q.value * 4.0, q.error_estimate * 4.0, q.n_evals))
        })
        .collect::<Result<Vec<_>>>()?;
    b.decay_rows = rows;
    if mode == Mode::RowsOnly {
        return Ok(());
    }
    let defect = selftest::free_scaling_defect(lambda_max)?;
    let check = Check::at_most("free-scaling-defect", defect, 1e-8);
    if !check.pass {
        report(b).flag(EXIT_ACCURACY, format!("scaling identity K(t,0,0) = K(1,0,0)/t off by {defect:e}"));
    }
    report(b).checks.push(check);
    fit_and_plot(cfg, &t, false, "free evolution kernel", b)
}

fn row(probe: usize, t: f64, v: Complex64, err: f64, n_evals: usize) -> DecayRow {
    DecayRow { probe, t, re: v.re, im: v.im, abs_value: v.norm(), err_estimate: err, n_evals }
}

fn fit_and_plot(cfg: &ExperimentConfig, t: &[f64], weighted: bool, title: &str, b: &mut Bundle) -> Result<()> {
    let nt = t.len();
    let win = window(cfg, t);
    let rows = &b.decay_rows;
    let mut probe_fits = Vec::new();
    for (p, pair) in cfg.probes.iter().enumerate() {
        let mags: Vec<f64> = rows[p * nt..(p + 1) * nt].iter().map(|r| r.abs_value).collect();
        probe_fits.push(fit_decay(&mags, t, win, weighted.then_some((pair.x, pair.y)))?);
    }
    let (fit, mags): (DecayFit, Vec<f64>) = if weighted {
        let worst = (0..probe_fits.len())
            .max_by(|&i, &j| probe_fits[i].ratio.unwrap_or(0.0).total_cmp(&probe_fits[j].ratio.unwrap_or(0.0)))
            .unwrap_or(0);
        let mags = rows[worst * nt..(worst + 1) * nt].iter().map(|r| r.abs_value).collect();
        (probe_fits[worst].clone(), mags)
    } else {
        let mags: Vec<f64> =
            (0..nt).map(|k| (0..cfg.probes.len()).map(|p| rows[p * nt + k].abs_value).fold(0.0, f64::max)).collect();
        (fit_decay(&mags, t, win, None)?, mags)
    };
    b.plots.push(("decay.svg".into(), plot::decay_plot(title, t, &mags, &fit)));
    let r = report(b);
    let d = r.decay.get_or_insert_with(|| DecaySummary { fit: None, probe_fits: vec![], caches: vec![], log_law: None });
    d.fit = Some(fit);
    d.probe_fits = probe_fits;
    Ok(())
}

fn sector_stack_params(cfg: &ExperimentConfig) -> Result<(usize, f64, usize, usize)> {
    match cfg.grid {
        GridConfig::Sector { nr, rmax, ell, lmax } => Ok((nr, rmax, ell, lmax)),
        GridConfig::Full { .. } => Err(LabError::Config("perturbed decay needs a sector grid".into())),
    }
}

fn perturbed_decay(cfg: &ExperimentConfig, mode: Mode, b: &mut Bundle) -> Result<()> {
    let (nr, rmax, ell, lmax) = sector_stack_params(cfg)?;
    // gate: free-kernel invariants first
    kernel_selftest(cfg, b)?;
    if report(b).exit_code != EXIT_OK {
        report(b).flag(EXIT_ACCURACY, "perturbed run skipped: kernel gate closed");
        return Ok(());
    }
    let grid = grid_data(&cfg.grid)?;
    let beta = resolve_coupling(cfg, &grid)?;
    let pot = at_coupling(&cfg.potential, beta);
    report(b).coupling = Some(beta);

    let opts = classify_opts(cfg);
    let sectors = (0..=lmax)
        .into_par_iter()
        .map(|l| {
            let ctx = BSContext::new(GridData::Sector(build_sector_grid(l, nr, rmax)?), pot.clone())?;
            let chain = build_chain(&ctx, opts)?;
            Ok((l, classify_with_chain(&ctx, &chain, opts)?))
        })
        .collect::<Result<Vec<_>>>()?;
    for (l, rep) in &sectors {
        report(b).sectors.push(SectorVerdict { ell: *l, verdict: rep.verdict, dims: rep.dims, routes_agree: rep.routes_agree });
        if !rep.routes_agree {
            report(b).flag(EXIT_ROUTES, format!("sector {l}: moment and chain routes disagree"));
        }
    }
    let focus = sectors.iter().find(|(l, _)| *l == ell.min(lmax)).map(|(_, r)| r.clone());
    let verdict = focus.as_ref().map(|r| r.verdict).unwrap_or(Verdict::Regular);
    report(b).classification = focus;
    match cfg.experiment {
        ExperimentKind::RegularDecay | ExperimentKind::WeightedDecay => {
            if let Some((l, r)) = sectors.iter().find(|(_, r)| r.verdict != Verdict::Regular) {
                report(b).messages.push(format!("sector {l} is {:?} at this coupling, not regular", r.verdict));
            }
        }
        _ => {}
    }

    let stack = SectorStack::new(pot, lmax, nr, rmax)?;
    let pairs: Vec<([f64; 4], [f64; 4])> = cfg.probes.iter().map(|p| (p.x, p.y)).collect();
    let solve = SolveOptions { check_condition: false, ..SolveOptions::default() };
    let kernel = |l: f64| -> quartic::Result<Vec<Complex64>> {
        Ok(stack.stone_density_many(l, &pairs, solve)?.into_iter().map(|v| Complex64::new(v, 0.0)).collect())
    };
    let t = cfg.t_grid.values();
    let popts = ProbeOptions {
        cache_points: cfg.spectral.cache_points,
        cache_tol: cfg.tolerances.cache,
        seed: cfg.seed,
        quad: quad_opts(cfg),
        ..ProbeOptions::default()
    };
    let probes = decay_probe_many(
        &kernel,
        pairs.len(),
        Support::Full { lambda_max: cfg.spectral.lambda_max },
        Smoothness::LogSingularAtZero,
        &t,
        &popts,
    )?;
    let mut caches = Vec::new();
    for (p, probe) in probes.iter().enumerate() {
        caches.push(CacheInfo {
            probe: p,
            knots: probe.cache.spline.knots().len(),
            spot_error: probe.cache.spot_error,
            refinements: probe.cache.refinements,
        });
        for r in &probe.rows {
            b.decay_rows.push(row(p, r.t, r.value * 4.0, r.err_estimate * 4.0, r.n_evals));
        }
    }
    let log_law = (cfg.experiment == ExperimentKind::ResonantDecay
        && matches!(verdict, Verdict::Kind3 | Verdict::Kind4))
    .then(|| "ordering-only".to_string());
    report(b).decay = Some(DecaySummary { fit: None, probe_fits: vec![], caches, log_law });
    if mode == Mode::RowsOnly {
        return Ok(());
    }
    let weighted = cfg.experiment == ExperimentKind::WeightedDecay;
    let title = match cfg.experiment {
        ExperimentKind::ResonantDecay => format!("perturbed kernel at coupling {beta:.6} ({verdict:?})"),
        _ => format!("perturbed kernel at coupling {beta:.6}"),
    };
    fit_and_plot(cfg, &t, weighted, &title, b)
}

fn sweep(cfg: &ExperimentConfig, b: &mut Bundle) -> Result<()> {
    let s = cfg.sweep.ok_or_else(|| LabError::Config("sweep experiment needs a sweep block".into()))?;
    let grid = grid_data(&cfg.grid)?;
    let res = coupling_sweep(&grid, &cfg.potential, s.lo, s.hi, s.steps, classify_opts(cfg))?;
    let beta: Vec<f64> = res.samples.iter().map(|x| x.beta).collect();
    let sigma: Vec<f64> = res.samples.iter().map(|x| x.sigma_min).collect();
    let crit: Vec<f64> = res.critical.iter().map(|c| c.beta).collect();
    b.plots.push(("sweep.svg".into(), plot::sweep_plot("smallest eigenvalue of QTQ", &beta, &sigma, &crit)));
    b.sweep_rows = res.samples.clone();
    let r = report(b);
    for c in &res.critical {
        r.sweep_critical.push(CriticalSummary {
            beta: c.beta,
            sigma_min: c.sigma_min,
            verdict: c.report.verdict,
            dims: c.report.dims,
            routes_agree: c.report.routes_agree,
        });
        if !c.report.routes_agree {
            r.flag(EXIT_ROUTES, format!("coupling {}: moment and chain routes disagree", c.beta));
        }
    }
    Ok(())
}

fn classify_only(cfg: &ExperimentConfig, b: &mut Bundle) -> Result<()> {
    let grid = grid_data(&cfg.grid)?;
    let beta = resolve_coupling(cfg, &grid)?;
    let ctx = BSContext::new(grid, at_coupling(&cfg.potential, beta))?;
    let opts = classify_opts(cfg);
    let chain = build_chain(&ctx, opts)?;
    let rep = classify_with_chain(&ctx, &chain, opts)?;
    let kind = rep.verdict.kind();
    if kind > 0 {
        let u = chain.bases[kind - 1].column(0).into_owned();
        let rf = resonance_function(&ctx, &u, None)?;
        b.plots.push((
            "tail.svg".into(),
            plot::tail_plot(&format!("resonance function ({:?})", rep.verdict), &rf.radii, &rf.values, rf.c0),
        ));
        report(b).tail = Some(TailSummary {
            direction: rf.direction,
            c0: rf.c0,
            tail_exponent: rf.tail_exponent,
            equation_residual: rf.equation_residual,
        });
    }
    let r = report(b);
    r.coupling = Some(beta);
    if !rep.routes_agree {
        r.flag(EXIT_ROUTES, "moment and chain routes disagree");
    }
    if rep.ambiguous_rank {
        r.messages.push("rank decision within the tolerance gap".into());
    }
    r.classification = Some(rep);
    Ok(())
}
