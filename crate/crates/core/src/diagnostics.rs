//! Positivity scans and effect-trajectory series for plotting.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimands::{estimate_point, CoefficientFrame, Estimand, IntervalOptions};
use crate::series::Series;

pub const MAX_DURATION: usize = 20;
pub const MAX_LISTED_DURATION: usize = 12;

/// Observed exposure patterns of one window length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationCount {
    pub p: usize,
    pub observed: usize,
    pub possible: u64,
    pub percentage: f64,
    pub windows: usize,
    /// Distinct observed patterns, earliest time first, ascending.
    pub observed_patterns: Vec<String>,
    /// Every pattern never observed; listed only for `p <= 12`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub unobserved_patterns: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub exposure: String,
    pub durations: Vec<DurationCount>,
}

impl PositivityReport {
    pub fn duration(&self, p: usize) -> Option<&DurationCount> {
        self.durations.iter().find(|d| d.p == p)
    }

    /// Whether `pattern` occurs in the series; `None` when the report does
    /// not cover its length.
    pub fn is_observed(&self, pattern: &[u8]) -> Option<bool> {
        let d = self.duration(pattern.len())?;
        let key = pattern_string(pattern);
        Some(d.observed_patterns.binary_search(&key).is_ok())
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("p,observed,possible,percentage,windows\n");
        for d in &self.durations {
            let _ = writeln!(s, "{},{},{},{},{}", d.p, d.observed, d.possible, d.percentage, d.windows);
        }
        s
    }
}

pub fn pattern_string(pattern: &[u8]) -> String {
    pattern.iter().map(|&a| if a == 1 { '1' } else { '0' }).collect()
}

fn bits_to_string(bits: u32, p: usize) -> String {
    (0..p).map(|i| if bits >> (p - 1 - i) & 1 == 1 { '1' } else { '0' }).collect()
}

/// Counts distinct exposure patterns over every window of length
/// `1..=max_duration` lying inside a run of non-missing values.
pub fn positivity_report(series: &Series, exposure: usize, max_duration: usize) -> Result<PositivityReport> {
    if exposure >= series.n_exposures() {
        return Err(Error::InvalidArgument(format!("exposure index {exposure} out of range")));
    }
    if max_duration == 0 || max_duration > MAX_DURATION {
        return Err(Error::InvalidArgument(format!(
            "max duration must lie in 1..={MAX_DURATION}"
        )));
    }
    let name = series.schema().exposures[exposure].name.clone();
    let col = series.exposure(exposure);
    let mut bits = Vec::with_capacity(col.len());
    for (i, v) in col.iter().enumerate() {
        bits.push(match v {
            None => None,
            Some(x) if *x == 0.0 => Some(0u32),
            Some(x) if *x == 1.0 => Some(1u32),
            Some(x) => {
                return Err(Error::NonBinary {
                    column: name,
                    t: i + 1,
                    value: *x,
                })
            }
        });
    }
    let mut sets: Vec<HashSet<u32>> = vec![HashSet::new(); max_duration];
    let mut windows = vec![0usize; max_duration];
    let mut run_len = 0usize;
    let mut acc = 0u32;
    for b in &bits {
        match b {
            None => {
                run_len = 0;
                acc = 0;
            }
            Some(b) => {
                acc = (acc << 1) | b;
                run_len += 1;
                for p in 1..=max_duration.min(run_len) {
                    let mask = if p == 32 { u32::MAX } else { (1u32 << p) - 1 };
                    sets[p - 1].insert(acc & mask);
                    windows[p - 1] += 1;
                }
            }
        }
    }
    let durations = sets
        .into_iter()
        .enumerate()
        .map(|(i, set)| {
            let p = i + 1;
            let possible = 1u64 << p;
            let mut seen: Vec<u32> = set.into_iter().collect();
            seen.sort_unstable();
            let unobserved_patterns = (p <= MAX_LISTED_DURATION).then(|| {
                (0..possible as u32)
                    .filter(|b| seen.binary_search(b).is_err())
                    .map(|b| bits_to_string(b, p))
                    .collect()
            });
            DurationCount {
                p,
                observed: seen.len(),
                possible,
                percentage: 100.0 * seen.len() as f64 / possible as f64,
                windows: windows[i],
                observed_patterns: seen.iter().map(|&b| bits_to_string(b, p)).collect(),
                unobserved_patterns,
            }
        })
        .collect();
    Ok(PositivityReport {
        exposure: name,
        durations,
    })
}

/// One entry of an effect trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsePoint {
    pub q: usize,
    pub t: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

fn response(
    frame: &CoefficientFrame,
    exposure: usize,
    t: usize,
    max_q: usize,
    opts: &IntervalOptions,
    make: impl Fn(usize) -> Estimand,
) -> Result<Vec<ResponsePoint>> {
    frame.check_range(t, t + max_q)?;
    (0..=max_q)
        .map(|q| {
            let p = estimate_point(frame, &make(q), exposure, t + q, opts)?;
            Ok(ResponsePoint {
                q,
                t: t + q,
                estimate: p.estimate,
                lower: p.lower,
                upper: p.upper,
            })
        })
        .collect()
}

/// Effect of a single exposure at `t` on `Y_{t+q}`, `q = 0..=max_q`, with
/// later exposures held at zero.
pub fn impulse_impact(
    frame: &CoefficientFrame,
    exposure: usize,
    t: usize,
    max_q: usize,
    opts: &IntervalOptions,
) -> Result<Vec<ResponsePoint>> {
    response(frame, exposure, t, max_q, opts, |q| {
        if q == 0 {
            Estimand::Ce
        } else {
            Estimand::Le { q }
        }
    })
}

/// Effect on `Y_{t+q}` of exposing at every time `t..=t+q`.
pub fn step_response(
    frame: &CoefficientFrame,
    exposure: usize,
    t: usize,
    max_q: usize,
    opts: &IntervalOptions,
) -> Result<Vec<ResponsePoint>> {
    response(frame, exposure, t, max_q, opts, |q| Estimand::Te { q })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResponse {
    pub strategy: Vec<u8>,
    pub points: Vec<ResponsePoint>,
}

/// Trajectory of each strategy started at `t`: entry `q` is the effect on
/// `Y_{t+q}` of the strategy's first `q + 1` entries, padded with zeros
/// for `tail` steps past its end.
pub fn general_response(
    frame: &CoefficientFrame,
    exposure: usize,
    t: usize,
    strategies: &[Vec<u8>],
    tail: usize,
    opts: &IntervalOptions,
) -> Result<Vec<StrategyResponse>> {
    let Some(first) = strategies.first() else {
        return Ok(Vec::new());
    };
    let len = first.len();
    if len == 0 || strategies.iter().any(|s| s.len() != len) {
        return Err(Error::InvalidStrategy("strategies must share one non-zero length".into()));
    }
    let max_q = len - 1 + tail;
    strategies
        .iter()
        .map(|s| {
            let points = response(frame, exposure, t, max_q, opts, |q| {
                let strategy = (0..=q).map(|i| s.get(i).copied().unwrap_or(0)).collect();
                Estimand::Ge { strategy }
            })?;
            Ok(StrategyResponse {
                strategy: s.clone(),
                points,
            })
        })
        .collect()
}

/// First `q` at which `|estimate|` reaches each fraction of the largest
/// absolute value in the series.
pub fn fraction_of_max(points: &[ResponsePoint], fractions: &[f64]) -> Vec<(f64, Option<usize>)> {
    let max = points.iter().fold(0.0f64, |a, p| a.max(p.estimate.abs()));
    fractions
        .iter()
        .map(|&f| {
            let q = (max > 0.0)
                .then(|| points.iter().find(|p| p.estimate.abs() >= f * max).map(|p| p.q))
                .flatten();
            (f, q)
        })
        .collect()
}

pub fn responses_to_csv(label: &str, points: &[ResponsePoint], out: &mut String) {
    for p in points {
        let _ = writeln!(out, "{label},{},{},{},{},{}", p.q, p.t, p.estimate, p.lower, p.upper);
    }
}

pub const RESPONSE_CSV_HEADER: &str = "series,q,t,estimate,lower,upper";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimands::SystemLayout;
    use crate::series::Schema;

    fn series(a: &[f64]) -> Series {
        series_opt(&a.iter().map(|&x| Some(x)).collect::<Vec<_>>())
    }

    fn series_opt(a: &[Option<f64>]) -> Series {
        let n = a.len();
        Series::new(
            Schema::new(&["A"], "Y", &[]),
            vec![a.to_vec()],
            vec![Some(0.0); n],
            vec![],
            None,
        )
        .unwrap()
    }

    #[test]
    fn small_example() {
        let r = positivity_report(&series(&[0.0, 0.0, 1.0, 0.0, 1.0]), 0, 3).unwrap();
        let d2 = r.duration(2).unwrap();
        assert_eq!(d2.observed, 3);
        assert_eq!(d2.percentage, 75.0);
        assert_eq!(d2.unobserved_patterns.as_deref(), Some(&["11".to_string()][..]));
        assert_eq!(r.duration(1).unwrap().percentage, 100.0);
        assert_eq!(r.is_observed(&[0, 1]), Some(true));
        assert_eq!(r.is_observed(&[1, 1]), Some(false));
        assert_eq!(r.is_observed(&[1, 1, 1, 1]), None);
    }

    #[test]
    fn missing_breaks_windows() {
        let s = series_opt(&[Some(1.0), Some(1.0), None, Some(0.0), Some(0.0)]);
        let r = positivity_report(&s, 0, 2).unwrap();
        assert_eq!(r.duration(2).unwrap().observed_patterns, ["00", "11"]);
    }

    #[test]
    fn ar_impulse_and_step() {
        let l = SystemLayout::standard(1, 1);
        let f = CoefficientFrame::constant(l, 2, 100, &[vec![0.0, 0.7, 1.5, 0.0, 0.0], vec![0.0; 4]]).unwrap();
        let o = IntervalOptions::default();
        let imp = impulse_impact(&f, 0, 10, 12, &o).unwrap();
        let step = step_response(&f, 0, 10, 12, &o).unwrap();
        let mut acc = 0.0;
        for q in 0..=12 {
            assert!((imp[q].estimate - 1.5 * 0.7f64.powi(q as i32)).abs() < 1e-12);
            acc += imp[q].estimate;
            assert!((step[q].estimate - acc).abs() < 1e-12);
        }
        let g = general_response(&f, 0, 10, &[vec![1; 4]], 0, &o).unwrap();
        for q in 0..4 {
            assert!((g[0].points[q].estimate - step[q].estimate).abs() < 1e-12);
        }
        let fr = fraction_of_max(&step, &[0.8, 0.95]);
        assert!(fr[0].1.unwrap() < fr[1].1.unwrap());
    }
}
