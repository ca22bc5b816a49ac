use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::linalg::{loglog_fit, LinearFit};

/// One measured value. `layer = -1` is the input level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub omega: Option<f64>,
    pub layer: i64,
    pub value: f64,
}

/// Expected scaling of a series against the perturbation size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub exponent: f64,
    pub description: String,
}

/// Rule the pass flag is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Check {
    /// Log-log slope of the per-omega layer mean against omega.
    SlopeWindow { lo: f64, hi: f64, min_r2: f64 },
    /// At least `min_fraction` of the values lie in `[lo, hi]`.
    FractionWithin { lo: f64, hi: f64, min_fraction: f64 },
    AtLeast { threshold: f64 },
    AtMost { threshold: f64 },
    /// Every value within `factor` of the first (either direction).
    WithinFactorOfFirst { factor: f64 },
    /// Every value positive and `max / min <= factor`.
    SpreadAtMost { factor: f64 },
    Informational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub name: String,
    pub series: Vec<SeriesPoint>,
    pub predicted: Option<Scaling>,
    pub fit: Option<LinearFit>,
    pub check: Check,
    pub pass: bool,
    /// Named summary numbers (maxima, fractions, estimates).
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

/// Mean over layers for each distinct omega, in first-seen order.
pub fn omega_means(series: &[SeriesPoint]) -> (Vec<f64>, Vec<f64>) {
    let mut keys: Vec<f64> = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for p in series {
        let Some(w) = p.omega else { continue };
        match keys.iter().position(|k| *k == w) {
            Some(i) => {
                sums[i].0 += p.value;
                sums[i].1 += 1;
            }
            None => {
                keys.push(w);
                sums.push((p.value, 1));
            }
        }
    }
    let means = sums.iter().map(|(s, c)| s / *c as f64).collect();
    (keys, means)
}

impl Check {
    pub fn fit(&self, series: &[SeriesPoint]) -> Option<LinearFit> {
        match self {
            Check::SlopeWindow { .. } => {
                let (xs, ys) = omega_means(series);
                loglog_fit(&xs, &ys)
            }
            _ => None,
        }
    }

    pub fn evaluate(&self, series: &[SeriesPoint]) -> bool {
        let values = || series.iter().map(|p| p.value);
        match *self {
            Check::SlopeWindow { lo, hi, min_r2 } => match self.fit(series) {
                Some(f) => f.slope >= lo && f.slope <= hi && f.r2 >= min_r2,
                None => false,
            },
            Check::FractionWithin { lo, hi, min_fraction } => {
                if series.is_empty() {
                    return false;
                }
                let inside = values().filter(|v| *v >= lo && *v <= hi).count();
                inside as f64 / series.len() as f64 >= min_fraction
            }
            Check::AtLeast { threshold } => !series.is_empty() && values().all(|v| v >= threshold),
            Check::AtMost { threshold } => values().all(|v| v <= threshold),
            Check::WithinFactorOfFirst { factor } => match series.first() {
                Some(first) if first.value > 0.0 => values().all(|v| v <= first.value * factor && v * factor >= first.value),
                _ => false,
            },
            Check::SpreadAtMost { factor } => {
                let lo = values().fold(f64::INFINITY, f64::min);
                let hi = values().fold(0.0, f64::max);
                !series.is_empty() && lo > 0.0 && hi <= lo * factor
            }
            Check::Informational => true,
        }
    }
}

impl ProbeReport {
    pub fn new(name: &str, series: Vec<SeriesPoint>, check: Check) -> Self {
        let fit = check.fit(&series);
        let pass = check.evaluate(&series);
        Self {
            name: name.to_string(),
            series,
            predicted: None,
            fit,
            check,
            pass,
            metrics: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn with_prediction(mut self, exponent: f64, description: &str) -> Self {
        self.predicted = Some(Scaling {
            exponent,
            description: description.to_string(),
        });
        self
    }

    pub fn metric(mut self, key: &str, value: f64) -> Self {
        self.metrics.insert(key.to_string(), value);
        self
    }

    /// Pass flag recomputed from the stored series and rule.
    pub fn recompute_pass(&self) -> bool {
        self.check.evaluate(&self.series)
    }

    pub fn is_consistent(&self) -> bool {
        self.recompute_pass() == self.pass && self.check.fit(&self.series) == self.fit
    }

    pub const CSV_HEADER: [&'static str; 3] = ["omega", "layer", "value"];

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.series
            .iter()
            .map(|p| vec![io::fmt_opt(p.omega), p.layer.to_string(), io::fmt_f64(p.value)])
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_csv(path, &Self::CSV_HEADER, &self.csv_rows())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(omegas: &[f64], values: &[f64]) -> Vec<SeriesPoint> {
        omegas
            .iter()
            .zip(values)
            .map(|(w, v)| SeriesPoint {
                omega: Some(*w),
                layer: 1,
                value: *v,
            })
            .collect()
    }

    #[test]
    fn slope_window_on_power_law() {
        let ws = [1e-4, 1e-3, 1e-2, 1e-1];
        let vs: Vec<f64> = ws.iter().map(|w: &f64| 3.0 * w.powf(2.0 / 3.0)).collect();
        let r = ProbeReport::new("p", pts(&ws, &vs), Check::SlopeWindow { lo: 0.45, hi: 0.85, min_r2: 0.9 });
        assert!(r.pass);
        assert!((r.fit.unwrap().slope - 2.0 / 3.0).abs() < 1e-12);
        assert!(r.is_consistent());
    }

    #[test]
    fn tampered_flag_is_detected() {
        let mut r = ProbeReport::new("p", pts(&[1.0], &[0.5]), Check::AtLeast { threshold: 1.0 });
        assert!(!r.pass);
        r.pass = true;
        assert!(!r.is_consistent());
    }

    #[test]
    fn fraction_and_factor_rules() {
        let s = pts(&[1.0, 1.0, 1.0, 1.0], &[0.9, 1.0, 1.1, 2.0]);
        assert!(Check::FractionWithin { lo: 0.85, hi: 1.15, min_fraction: 0.75 }.evaluate(&s));
        assert!(!Check::FractionWithin { lo: 0.85, hi: 1.15, min_fraction: 0.8 }.evaluate(&s));
        assert!(Check::WithinFactorOfFirst { factor: 2.3 }.evaluate(&s));
        assert!(!Check::WithinFactorOfFirst { factor: 2.0 }.evaluate(&s[..3].iter().chain(&pts(&[1.0], &[0.4])).copied().collect::<Vec<_>>()));
    }

    #[test]
    fn csv_and_json_shapes() {
        let r = ProbeReport::new("p", vec![SeriesPoint { omega: None, layer: -1, value: 0.5 }], Check::Informational);
        assert_eq!(r.csv_rows(), vec![vec!["".to_string(), "-1".to_string(), "0.5".to_string()]]);
        let back: ProbeReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
