//! Report bundle: JSON summary, CSV tables, SVG plots, SCHEMA.md.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use quartic::threshold_classifier::{ResonanceReport, SweepSample, Verdict};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ExperimentConfig, ExperimentKind, SCHEMA_VERSION};
use crate::error::Result;
use crate::fit::DecayFit;
use crate::selftest::{Check, SelftestReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ACCURACY: i32 = 2;
pub const EXIT_ROUTES: i32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DecayRow {
    pub probe: usize,
    pub t: f64,
    pub re: f64,
    pub im: f64,
    pub abs_value: f64,
    pub err_estimate: f64,
    pub n_evals: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CacheInfo {
    pub probe: usize,
    pub knots: usize,
    pub spot_error: f64,
    pub refinements: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DecaySummary {
    /// Fit of the sup over probes (unweighted) or the worst weighted probe.
    pub fit: Option<DecayFit>,
    pub probe_fits: Vec<DecayFit>,
    pub caches: Vec<CacheInfo>,
    /// `"ordering-only"` when the zero-energy type predicts a logarithmic law.
    pub log_law: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SectorVerdict {
    pub ell: usize,
    pub verdict: Verdict,
    pub dims: [usize; 4],
    pub routes_agree: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CriticalSummary {
    pub beta: f64,
    pub sigma_min: f64,
    pub verdict: Verdict,
    pub dims: [usize; 4],
    pub routes_agree: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TailSummary {
    pub direction: [f64; 4],
    pub c0: f64,
    pub tail_exponent: f64,
    pub equation_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Report {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    pub exit_code: i32,
    pub messages: Vec<String>,
    pub selftest: Option<SelftestReport>,
    pub coupling: Option<f64>,
    pub classification: Option<ResonanceReport>,
    pub sectors: Vec<SectorVerdict>,
    pub decay: Option<DecaySummary>,
    pub sweep_critical: Vec<CriticalSummary>,
    pub tail: Option<TailSummary>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new(config: &ExperimentConfig) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            experiment: config.experiment,
            config: config.clone(),
            exit_code: EXIT_OK,
            messages: Vec::new(),
            selftest: None,
            coupling: None,
            classification: None,
            sectors: Vec::new(),
            decay: None,
            sweep_critical: Vec::new(),
            tail: None,
            checks: Vec::new(),
        }
    }

    /// Raise the exit code; route disagreement outranks accuracy failures.
    pub fn flag(&mut self, code: i32, msg: impl Into<String>) {
        self.exit_code = self.exit_code.max(code);
        self.messages.push(msg.into());
    }

    pub fn to_json(&self) -> String {
        fixed_json(&serde_json::to_value(self).expect("report serialises"))
    }
}

#[derive(Clone, Debug, Default)]
pub struct Bundle {
    pub report: Option<Report>,
    pub decay_rows: Vec<DecayRow>,
    pub sweep_rows: Vec<SweepSample>,
    /// `(file name, svg)`.
    pub plots: Vec<(String, String)>,
}

impl Bundle {
    pub fn report(&self) -> &Report {
        self.report.as_ref().expect("bundle has a report")
    }

    pub fn exit_code(&self) -> i32 {
        self.report().exit_code
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.report().to_json())?;
        if !self.decay_rows.is_empty() {
            let mut w = csv::Writer::from_path(dir.join("decay.csv"))?;
            w.write_record(["probe", "t", "absValue", "errEstimate", "nEvals", "re", "im"])?;
            for r in &self.decay_rows {
                w.write_record([
                    r.probe.to_string(),
                    sci(r.t),
                    sci(r.abs_value),
                    sci(r.err_estimate),
                    r.n_evals.to_string(),
                    sci(r.re),
                    sci(r.im),
                ])?;
            }
            w.flush()?;
        }
        if !self.sweep_rows.is_empty() {
            let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
            w.write_record(["beta", "sigmaMin", "negative"])?;
            for r in &self.sweep_rows {
                w.write_record([sci(r.beta), sci(r.sigma_min), r.negative.to_string()])?;
            }
            w.flush()?;
        }
        for (name, svg) in &self.plots {
            fs::write(dir.join(name), svg)?;
        }
        fs::write(dir.join("SCHEMA.md"), schema_markdown())?;
        Ok(())
    }
}

/// 17 significant digits.
pub fn sci(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Pretty JSON with every float written to 17 significant digits.
pub fn fixed_json(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v, 0);
    out.push('\n');
    out
}

fn write_value(out: &mut String, v: &Value, depth: usize) {
    let pad = |d: usize| "  ".repeat(d);
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&sci(n.as_f64().unwrap_or(f64::NAN)));
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(a) if a.is_empty() => out.push_str("[]"),
        Value::Array(a) => {
            out.push_str("[\n");
            for (i, x) in a.iter().enumerate() {
                out.push_str(&pad(depth + 1));
                write_value(out, x, depth + 1);
                out.push_str(if i + 1 < a.len() { ",\n" } else { "\n" });
            }
            let _ = write!(out, "{}]", pad(depth));
        }
        Value::Object(m) if m.is_empty() => out.push_str("{}"),
        Value::Object(m) => {
            out.push_str("{\n");
            for (i, (k, x)) in m.iter().enumerate() {
                let _ = write!(out, "{}{}: ", pad(depth + 1), Value::String(k.clone()));
                write_value(out, x, depth + 1);
                out.push_str(if i + 1 < m.len() { ",\n" } else { "\n" });
            }
            let _ = write!(out, "{}}}", pad(depth));
        }
    }
}

pub fn schema_markdown() -> String {
    format!(
        "# Output schema (version {SCHEMA_VERSION})

All floating-point values are written with 17 significant digits.

## decay.csv

| column | meaning |
|---|---|
| probe | index into `config.probes` |
| t | time |
| absValue | `abs(K(t, x, y))` of the evolution kernel restricted to the spectral window |
| errEstimate | absolute error estimate of the oscillatory quadrature for this row |
| nEvals | integrand evaluations used |
| re | real part of `K(t, x, y)` |
| im | imaginary part of `K(t, x, y)` |

## sweep.csv

| column | meaning |
|---|---|
| beta | potential amplitude |
| sigmaMin | smallest absolute eigenvalue of `QTQ` on `range(Q)` |
| negative | number of negative eigenvalues of `QTQ` on `range(Q)` |

## report.json

| key | meaning |
|---|---|
| schemaVersion | this schema version |
| experiment | experiment name |
| config | the validated configuration |
| exitCode | 0 success, 2 accuracy failure, 3 classification routes disagree |
| messages | reasons behind a nonzero exit code and other notes |
| selftest | free-kernel checks (gate for perturbed runs) |
| coupling | amplitude used for the perturbed run |
| classification | projection-chain report at `coupling` |
| sectors | verdict of each angular sector at `coupling` |
| decay | fits (`exponent`, `intercept`, `rSquared`, `window`, `weighted`, `ratio`), cache diagnostics, `logLaw` |
| sweepCritical | critical couplings found by the sweep with their verdicts |
| tail | tail exponent of the resonance function |
| checks | named pass/fail checks |

## plots

- `decay.svg`: `abs(K)` against t on log-log axes with the fitted line (`class=\"fit\"`).
- `sweep.svg`: `sigmaMin` against beta with a vertical rule (`class=\"beta-star\"`) at each critical coupling.
- `tail.svg`: `abs(psi - c0)` against `abs(x)` with dashed reference slopes -1, -2, -3 (`class=\"guide\"`).
"
    )
}
