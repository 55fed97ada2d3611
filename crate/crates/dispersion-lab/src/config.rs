//! Experiment configuration: JSON, versioned, unknown keys rejected.

use std::path::Path;

use quartic::birman_schwinger::{PotentialFamily, PotentialSpec};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FreeDecay,
    RegularDecay,
    WeightedDecay,
    Sweep,
    ResonantDecay,
    ClassifyOnly,
    KernelSelftest,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FreeDecay => "free-decay",
            ExperimentKind::RegularDecay => "regular-decay",
            ExperimentKind::WeightedDecay => "weighted-decay",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::ResonantDecay => "resonant-decay",
            ExperimentKind::ClassifyOnly => "classify-only",
            ExperimentKind::KernelSelftest => "kernel-selftest",
        }
    }

    pub fn is_decay(self) -> bool {
        matches!(
            self,
            ExperimentKind::FreeDecay
                | ExperimentKind::RegularDecay
                | ExperimentKind::WeightedDecay
                | ExperimentKind::ResonantDecay
        )
    }

    /// Experiments that solve with a potential and therefore run behind the kernel gate.
    pub fn is_perturbed(self) -> bool {
        matches!(self, ExperimentKind::RegularDecay | ExperimentKind::WeightedDecay | ExperimentKind::ResonantDecay)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridConfig {
    /// Radial sectors `0..=lmax` on `nr` nodes; `ell` is the sector classified or swept.
    Sector {
        nr: usize,
        rmax: f64,
        #[serde(default)]
        ell: usize,
        #[serde(default = "default_lmax")]
        lmax: usize,
    },
    /// Full point cloud (classification and sweeps only).
    Full { nr: usize, nang: usize, rmax: f64 },
}

fn default_lmax() -> usize {
    3
}

impl GridConfig {
    pub fn rmax(&self) -> f64 {
        match self {
            GridConfig::Sector { rmax, .. } | GridConfig::Full { rmax, .. } => *rmax,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Coupling {
    /// Use `potential.amplitude` as given.
    Fixed,
    /// Critical amplitude in `[lo, hi]` on the configured grid; `index` 0 is the weakest.
    Critical {
        lo: f64,
        hi: f64,
        #[serde(default)]
        index: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "spacing", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TGrid {
    Log { min: f64, max: f64, points: usize },
    Linear { min: f64, max: f64, points: usize },
    Explicit { values: Vec<f64> },
}

impl TGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            TGrid::Log { min, max, points } => {
                let n = *points;
                (0..n)
                    .map(|k| {
                        if k + 1 == n {
                            *max
                        } else {
                            min * (max / min).powf(k as f64 / (n - 1).max(1) as f64)
                        }
                    })
                    .collect()
            }
            TGrid::Linear { min, max, points } => {
                let n = *points;
                (0..n).map(|k| min + (max - min) * k as f64 / (n - 1).max(1) as f64).collect()
            }
            TGrid::Explicit { values } => values.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbePair {
    pub x: [f64; 4],
    pub y: [f64; 4],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct Tolerances {
    /// Rank tolerance of the projection chain.
    pub classify: f64,
    pub moment: f64,
    /// Relative tolerance of each oscillatory integral.
    pub quad_rel: f64,
    /// Spline spot-check tolerance of the cached spectral density.
    pub cache: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { classify: 1e-8, moment: 1e-6, quad_rel: 1e-8, cache: 1e-6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct Spectral {
    /// Start of the high-energy taper; the integrand vanishes beyond `1.25·lambdaMax`.
    pub lambda_max: f64,
    pub cache_points: usize,
}

impl Default for Spectral {
    fn default() -> Self {
        Spectral { lambda_max: 4.0, cache_points: 600 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRange {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub grid: GridConfig,
    pub potential: PotentialSpec,
    #[serde(default = "fixed")]
    pub coupling: Coupling,
    pub t_grid: TGrid,
    /// Fit window; the whole t grid when absent.
    #[serde(default)]
    pub fit_window: Option<[f64; 2]>,
    #[serde(default)]
    pub probes: Vec<ProbePair>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub spectral: Spectral,
    #[serde(default)]
    pub sweep: Option<SweepRange>,
    #[serde(default = "default_out")]
    pub output_dir: String,
    #[serde(default)]
    pub seed: u64,
}

fn fixed() -> Coupling {
    Coupling::Fixed
}

fn default_out() -> String {
    "out".into()
}

fn origin() -> [f64; 4] {
    [0.0; 4]
}

fn gaussian(amplitude: f64) -> PotentialSpec {
    PotentialSpec { family: PotentialFamily::GaussianBump { width: 1.0, center: origin() }, amplitude }
}

/// 1-based line of the first occurrence of `"key"` in `src`.
fn line_of(src: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    src.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

impl ExperimentConfig {
    /// Built-in configuration for each experiment.
    pub fn preset(kind: ExperimentKind) -> Self {
        let e1 = [1.0, 0.0, 0.0, 0.0];
        let sector = |ell| GridConfig::Sector { nr: 200, rmax: 40.0, ell, lmax: 3 };
        let three = vec![
            ProbePair { x: origin(), y: origin() },
            ProbePair { x: e1, y: e1 },
            ProbePair { x: e1, y: [0.0, 2.0, 0.0, 0.0] },
        ];
        let log = |min, max, points| TGrid::Log { min, max, points };
        let base = ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment: kind,
            grid: sector(0),
            potential: gaussian(1.0),
            coupling: Coupling::Fixed,
            t_grid: log(10.0, 1e3, 13),
            fit_window: None,
            probes: three,
            tolerances: Tolerances::default(),
            spectral: Spectral::default(),
            sweep: None,
            output_dir: default_out(),
            seed: 0,
        };
        match kind {
            ExperimentKind::FreeDecay => ExperimentConfig {
                t_grid: log(1.0, 1e3, 16),
                probes: vec![
                    ProbePair { x: origin(), y: origin() },
                    ProbePair { x: origin(), y: [0.5, 0.0, 0.0, 0.0] },
                    ProbePair { x: e1, y: [0.0, 1.0, 0.0, 0.0] },
                ],
                ..base
            },
            ExperimentKind::RegularDecay => base,
            ExperimentKind::WeightedDecay => ExperimentConfig { t_grid: log(10.0, 1e4, 16), ..base },
            ExperimentKind::ResonantDecay => ExperimentConfig {
                grid: sector(1),
                coupling: Coupling::Critical { lo: -400.0, hi: -1.0, index: 0 },
                ..base
            },
            ExperimentKind::Sweep => ExperimentConfig {
                sweep: Some(SweepRange { lo: -200.0, hi: -1.0, steps: 32 }),
                ..base
            },
            ExperimentKind::ClassifyOnly => {
                ExperimentConfig { coupling: Coupling::Critical { lo: -200.0, hi: -1.0, index: 0 }, ..base }
            }
            ExperimentKind::KernelSelftest => base,
        }
    }

    pub fn from_json(src: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(src).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate_with_source(Some(src))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::from_json(&src).map_err(|e| match e {
            LabError::Config(m) => LabError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_source(None)
    }

    fn validate_with_source(&self, src: Option<&str>) -> Result<()> {
        let fail = |key: &str, msg: String| {
            let at = src.and_then(|s| line_of(s, key)).map(|l| format!("line {l}: ")).unwrap_or_default();
            Err(LabError::Config(format!("{at}{msg}")))
        };
        if self.schema_version != SCHEMA_VERSION {
            return fail(
                "schemaVersion",
                format!("schemaVersion {} is not supported (expected {SCHEMA_VERSION})", self.schema_version),
            );
        }
        match self.grid {
            GridConfig::Sector { nr, rmax, ell, lmax } => {
                if nr < 8 || !(rmax > 0.0) || ell > 3 || lmax > 3 {
                    return fail("grid", "sector grid needs nr >= 8, rmax > 0, ell <= 3, lmax <= 3".into());
                }
                if self.experiment.is_perturbed() && ell > lmax {
                    return fail("grid", format!("sector ell = {ell} exceeds lmax = {lmax}"));
                }
            }
            GridConfig::Full { nr, nang, rmax } => {
                if nr < 2 || nang == 0 || !(rmax > 0.0) {
                    return fail("grid", "full grid needs nr >= 2, nang > 0, rmax > 0".into());
                }
                if self.experiment.is_perturbed() {
                    return fail("grid", format!("{} needs a sector grid", self.experiment.name()));
                }
            }
        }
        if let Err(e) = self.potential.validate() {
            return fail("potential", e.to_string());
        }
        if let Coupling::Critical { lo, hi, .. } = self.coupling {
            if !(lo < hi) || lo * hi <= 0.0 {
                return fail("coupling", format!("critical search needs lo < hi of one sign, got [{lo}, {hi}]"));
            }
        }
        let t = self.t_grid.values();
        if t.len() < 2 {
            return fail("tGrid", "tGrid needs at least two points".into());
        }
        if t.iter().any(|v| !(v.is_finite() && *v > 0.0)) || t.windows(2).any(|w| !(w[1] > w[0])) {
            return fail("tGrid", "tGrid must be positive and increasing".into());
        }
        if let Some([a, b]) = self.fit_window {
            if !(a < b) || a < t[0] * (1.0 - 1e-12) || b > t[t.len() - 1] * (1.0 + 1e-12) {
                return fail("fitWindow", format!("fitWindow [{a}, {b}] must lie inside the tGrid"));
            }
        }
        let rmax = self.grid.rmax();
        for p in &self.probes {
            if norm(&p.x) > rmax || norm(&p.y) > rmax {
                return fail("probes", format!("probe {:?} -> {:?} lies outside rmax = {rmax}", p.x, p.y));
            }
        }
        if self.experiment.is_decay() && self.probes.is_empty() {
            return fail("probes", format!("{} needs at least one probe pair", self.experiment.name()));
        }
        if self.experiment == ExperimentKind::WeightedDecay && t[0] <= 1.0 {
            return fail("tGrid", "weighted decay needs t > 1".into());
        }
        let tol = self.tolerances;
        if [tol.classify, tol.moment, tol.quad_rel, tol.cache].iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
            return fail("tolerances", "tolerances must lie in (0, 1)".into());
        }
        if !(self.spectral.lambda_max > 0.0) || self.spectral.cache_points < 16 {
            return fail("spectral", "spectral needs lambdaMax > 0 and cachePoints >= 16".into());
        }
        if self.experiment == ExperimentKind::Sweep {
            match self.sweep {
                Some(s) if s.lo < s.hi && s.lo * s.hi > 0.0 && s.steps >= 2 => {}
                Some(s) => return fail("sweep", format!("sweep needs lo < hi of one sign and steps >= 2, got {s:?}")),
                None => return fail("experiment", "sweep experiment needs a sweep block".into()),
            }
        }
        if self.output_dir.is_empty() {
            return fail("outputDir", "outputDir must not be empty".into());
        }
        Ok(())
    }
}

pub(crate) fn norm(x: &[f64; 4]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for kind in [
            ExperimentKind::FreeDecay,
            ExperimentKind::RegularDecay,
            ExperimentKind::WeightedDecay,
            ExperimentKind::Sweep,
            ExperimentKind::ResonantDecay,
            ExperimentKind::ClassifyOnly,
            ExperimentKind::KernelSelftest,
        ] {
            let c = ExperimentConfig::preset(kind);
            c.validate().unwrap();
            assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        }
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let mut v: serde_json::Value =
            serde_json::from_str(&ExperimentConfig::preset(ExperimentKind::FreeDecay).to_json()).unwrap();
        v["tGird"] = serde_json::json!(1);
        let src = serde_json::to_string_pretty(&v).unwrap();
        let err = ExperimentConfig::from_json(&src).unwrap_err().to_string();
        let line = src.lines().position(|l| l.contains("tGird")).unwrap() + 1;
        assert!(err.contains("unknown field `tGird`"), "{err}");
        assert!(err.contains(&format!("line {line}")), "{err}");
    }

    #[test]
    fn decreasing_t_grid_reports_its_line() {
        let mut c = ExperimentConfig::preset(ExperimentKind::FreeDecay);
        c.t_grid = TGrid::Explicit { values: vec![1.0, 3.0, 2.0] };
        let src = c.to_json();
        let err = ExperimentConfig::from_json(&src).unwrap_err().to_string();
        let line = src.lines().position(|l| l.contains("\"tGrid\"")).unwrap() + 1;
        assert!(err.contains(&format!("line {line}:")) && err.contains("increasing"), "{err}");
    }

    #[test]
    fn probes_outside_rmax_are_rejected() {
        let mut c = ExperimentConfig::preset(ExperimentKind::RegularDecay);
        c.probes[0].y = [50.0, 0.0, 0.0, 0.0];
        assert!(matches!(c.validate(), Err(LabError::Config(_))));
    }

    #[test]
    fn log_grid_hits_both_ends() {
        let t = TGrid::Log { min: 10.0, max: 1e4, points: 4 }.values();
        assert_eq!(t[0], 10.0);
        assert_eq!(t[3], 1e4);
        assert!((t[1] - 100.0).abs() < 1e-12);
    }
}
