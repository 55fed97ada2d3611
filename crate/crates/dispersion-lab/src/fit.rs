//! Power-law fits of kernel magnitudes against time.

use quartic::free_kernels::linear_fit;
use serde::{Deserialize, Serialize};

use crate::config::norm;
use crate::error::{LabError, Result};

pub const MIN_FIT_POINTS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DecayFit {
    /// Slope of `log|K|` against `log t`.
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    /// Magnitudes were divided by `w(x)w(y)`.
    pub weighted: bool,
    /// `sup / inf` of `|K|·t·log²t` over the window (weighted mode).
    pub ratio: Option<f64>,
    /// `sup` of `|K|·t·log²t` over the window (weighted mode).
    pub weighted_sup: Option<f64>,
    pub points: usize,
}

/// `w(x) = log²(2 + |x|)`.
pub fn log_weight(x: &[f64; 4]) -> f64 {
    (2.0 + norm(x)).ln().powi(2)
}

/// Least squares of `log|K|` on `log t` over `window`.
///
/// With `weight = Some((x, y))` the magnitudes are divided by `w(x)w(y)` and
/// the spread of `|K|·t·log²t` is reported.
pub fn fit_decay(
    magnitudes: &[f64],
    t_grid: &[f64],
    window: (f64, f64),
    weight: Option<([f64; 4], [f64; 4])>,
) -> Result<DecayFit> {
    if magnitudes.len() != t_grid.len() {
        return Err(LabError::Fit(format!("{} magnitudes for {} times", magnitudes.len(), t_grid.len())));
    }
    let (lo, hi) = window;
    let (tmin, tmax) = match (t_grid.first(), t_grid.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return Err(LabError::Fit("empty t grid".into())),
    };
    let slack = 1e-12;
    if !(lo < hi) || lo < tmin * (1.0 - slack) || hi > tmax * (1.0 + slack) {
        return Err(LabError::Fit(format!("window [{lo}, {hi}] outside the t grid [{tmin}, {tmax}]")));
    }
    let scale = weight.map(|(x, y)| log_weight(&x) * log_weight(&y)).unwrap_or(1.0);
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    let mut spread = Vec::new();
    for (&t, &m) in t_grid.iter().zip(magnitudes) {
        if t < lo * (1.0 - slack) || t > hi * (1.0 + slack) {
            continue;
        }
        if !(m > 0.0 && m.is_finite()) {
            return Err(LabError::Fit(format!("nonpositive magnitude {m:e} at t = {t} (quadrature underflow?)")));
        }
        let k = m / scale;
        lx.push(t.ln());
        ly.push(k.ln());
        spread.push(k * t * t.ln().powi(2));
    }
    if lx.len() < MIN_FIT_POINTS {
        return Err(LabError::Fit(format!("{} points in window, need {MIN_FIT_POINTS}", lx.len())));
    }
    let (exponent, intercept) = linear_fit(&lx, &ly);
    let mean = ly.iter().sum::<f64>() / ly.len() as f64;
    let ss_tot: f64 = ly.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - exponent * x).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    let (ratio, weighted_sup) = if weight.is_some() {
        if lo <= 1.0 {
            return Err(LabError::Fit("weighted fit needs the window above t = 1".into()));
        }
        let sup = spread.iter().cloned().fold(0.0, f64::max);
        let inf = spread.iter().cloned().fold(f64::INFINITY, f64::min);
        (Some(sup / inf), Some(sup))
    } else {
        (None, None)
    };
    Ok(DecayFit { exponent, intercept, r_squared, window, weighted: weight.is_some(), ratio, weighted_sup, points: lx.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| a * (b / a).powf(k as f64 / (n - 1) as f64)).collect()
    }

    #[test]
    fn exact_power_law() {
        let t = logspace(1.0, 1e3, 12);
        let k: Vec<f64> = t.iter().map(|t| 1.0 / t).collect();
        let f = fit_decay(&k, &t, (1.0, 1e3), None).unwrap();
        assert!((f.exponent + 1.0).abs() < 1e-14);
        assert_eq!(f.r_squared, 1.0);
        assert!(f.ratio.is_none());
    }

    #[test]
    fn log_corrected_law_has_unit_ratio() {
        let t = logspace(10.0, 1e4, 16);
        let k: Vec<f64> = t.iter().map(|t| 1.0 / (t * t.ln().powi(2))).collect();
        let o = [0.0; 4];
        let f = fit_decay(&k, &t, (10.0, 1e4), Some((o, o))).unwrap();
        let w = log_weight(&o).powi(2);
        assert!(f.ratio.unwrap() <= 1.0 + 1e-12);
        assert!((f.weighted_sup.unwrap() * w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let t = logspace(1.0, 1e3, 12);
        let mut k: Vec<f64> = t.iter().map(|t| 1.0 / t).collect();
        assert!(fit_decay(&k, &t, (1.0, 5.0), None).is_err());
        assert!(fit_decay(&k, &t, (0.5, 1e3), None).is_err());
        k[3] = 0.0;
        assert!(matches!(fit_decay(&k, &t, (1.0, 1e3), None), Err(LabError::Fit(_))));
    }

    proptest! {
        #[test]
        fn recovers_planted_exponent(p in -3.0f64..0.5, c in 1e-6f64..1e3) {
            let t = logspace(2.0, 5e3, 10);
            let k: Vec<f64> = t.iter().map(|t| c * t.powf(p)).collect();
            let f = fit_decay(&k, &t, (2.0, 5e3), None).unwrap();
            prop_assert!((f.exponent - p).abs() < 1e-10);
            prop_assert!((f.intercept - c.ln()).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&f.r_squared));
        }

        #[test]
        fn r_squared_stays_in_unit_interval(noise in prop::collection::vec(0.1f64..10.0, 10)) {
            let t = logspace(2.0, 5e3, 10);
            let f = fit_decay(&noise, &t, (2.0, 5e3), None).unwrap();
            prop_assert!((0.0..=1.0).contains(&f.r_squared));
        }
    }
}
