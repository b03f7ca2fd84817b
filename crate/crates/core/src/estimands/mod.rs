//! Causal estimands as functions of the fitted coefficient trajectories.
//!
//! Lags up to two on the single-lag DAG use analytic expressions; every
//! other case runs the forward perturbation recursion in [`propagate`].

mod closed_form;
pub mod frame;
pub mod propagate;


use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{csv_record, Role};
use crate::stats::percentile_interval;
pub use frame::{cov_factor, CoefSource, CoefficientFrame, SampledWindow, SystemLayout, WindowFactors};
use closed_form::Standard;

pub const DEFAULT_CUMOE_TOL: f64 = 1e-8;

fn default_tol() -> f64 {
    DEFAULT_CUMOE_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimand {
    Ce,
    Lde { q: usize },
    Le { q: usize },
    Te { q: usize },
    Ge { strategy: Vec<u8> },
    CumDe,
    CumOe {
        horizon: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
}

/// How to evaluate estimands that have an analytic form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Auto,
    ClosedForm,
    Recursion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub truncation_lag: Option<usize>,
}

impl Estimand {
    pub fn name(&self) -> &'static str {
        match self {
            Estimand::Ce => "CE",
            Estimand::Lde { .. } => "LDE",
            Estimand::Le { .. } => "LE",
            Estimand::Te { .. } => "TE",
            Estimand::Ge { .. } => "GE",
            Estimand::CumDe => "cumDE",
            Estimand::CumOe { .. } => "cumOE",
        }
    }

    /// Lag or horizon parameter.
    pub fn q(&self) -> Option<usize> {
        match self {
            Estimand::Ce => Some(0),
            Estimand::Lde { q } | Estimand::Le { q } | Estimand::Te { q } => Some(*q),
            Estimand::Ge { strategy } => Some(strategy.len().saturating_sub(1)),
            Estimand::CumDe => None,
            Estimand::CumOe { horizon, .. } => Some(*horizon),
        }
    }

    /// Label such as `LE2` or `GE(0,1,0,1)`.
    pub fn label(&self) -> String {
        match self {
            Estimand::Lde { q } | Estimand::Le { q } | Estimand::Te { q } => format!("{}{q}", self.name()),
            Estimand::Ge { strategy } => {
                let s: Vec<String> = strategy.iter().map(|a| a.to_string()).collect();
                format!("GE({})", s.join(","))
            }
            _ => self.name().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Estimand::Lde { q: 0 } | Estimand::Le { q: 0 } => {
                Err(Error::InvalidArgument(format!("{} requires q >= 1", self.name())))
            }
            Estimand::Ge { strategy } if strategy.is_empty() => {
                Err(Error::InvalidStrategy("empty exposure sequence".into()))
            }
            Estimand::Ge { strategy } if strategy.iter().any(|&a| a > 1) => {
                Err(Error::InvalidStrategy(format!("{strategy:?} has non-binary entries")))
            }
            Estimand::CumOe { horizon: 0, .. } => Err(Error::InvalidArgument("cumOE horizon must be >= 1".into())),
            Estimand::CumOe { tol, .. } if !(*tol >= 0.0) => {
                Err(Error::InvalidArgument("cumOE tolerance must be non-negative".into()))
            }
            _ => Ok(()),
        }
    }

    /// Times `lo..=hi` whose coefficients the estimand at `t` depends on.
    pub fn window(&self, layout: &SystemLayout, exposure: usize, t: usize) -> Result<(usize, usize)> {
        let back = |q: usize| {
            t.checked_sub(q).filter(|&lo| lo >= 1).ok_or(Error::OutOfRange {
                t: t as i64 - q as i64,
                start: 1,
                end: t,
            })
        };
        Ok(match self {
            Estimand::Ce | Estimand::Lde { .. } => (t, t),
            Estimand::Le { q } | Estimand::Te { q } => (back(*q)?, t),
            Estimand::Ge { strategy } => (back(strategy.len() - 1)?, t),
            Estimand::CumDe => (t, t + direct_lags(layout, exposure).last().copied().unwrap_or(0)),
            Estimand::CumOe { horizon, .. } => (t, t + horizon),
        })
    }

    /// Evaluates at `t` on any coefficient source covering the window.
    pub fn evaluate<S: CoefSource + ?Sized>(
        &self,
        layout: &SystemLayout,
        src: &S,
        exposure: usize,
        t: usize,
        method: Method,
    ) -> Result<Evaluation> {
        let std = layout.is_standard();
        let analytic = match self {
            Estimand::Ce | Estimand::Lde { .. } | Estimand::CumDe => std,
            Estimand::Le { q } | Estimand::Te { q } => std && *q <= 2,
            Estimand::Ge { .. } | Estimand::CumOe { .. } => false,
        };
        let closed = match method {
            Method::Auto => analytic,
            Method::Recursion => false,
            Method::ClosedForm if analytic => true,
            Method::ClosedForm => {
                return Err(Error::InvalidArgument(format!(
                    "{} has no closed form for this layout",
                    self.label()
                )))
            }
        };
        let plain = |value| Evaluation {
            value,
            truncation_lag: None,
        };
        if closed {
            let s = Standard::new(layout, src, exposure);
            return Ok(plain(match self {
                Estimand::Ce => s.ce(t),
                Estimand::Lde { q } => s.lde(t, *q),
                Estimand::Le { q: 1 } => s.le1(t),
                Estimand::Le { .. } => s.le2(t),
                Estimand::Te { q } => s.te(t, *q).expect("q <= 2"),
                Estimand::CumDe => s.cum_de(t),
                _ => unreachable!("no closed form"),
            }));
        }
        let pulse = |q: usize, all: bool| -> Vec<f64> {
            (0..=q).map(|i| if all || i == 0 { 1.0 } else { 0.0 }).collect()
        };
        Ok(match self {
            Estimand::Ce => plain(propagate::propagate(layout, src, exposure, t, &[1.0])),
            Estimand::Lde { q } => plain(
                layout
                    .find(0, Role::Exposure(exposure), *q)
                    .map_or(0.0, |c| src.coef(0, t, c)),
            ),
            Estimand::Le { q } => plain(propagate::propagate(layout, src, exposure, t, &pulse(*q, false))),
            Estimand::Te { q } => plain(propagate::propagate(layout, src, exposure, t, &pulse(*q, true))),
            Estimand::Ge { strategy } => {
                let p: Vec<f64> = strategy.iter().map(|&a| a as f64).collect();
                plain(propagate::propagate(layout, src, exposure, t, &p))
            }
            Estimand::CumDe => plain(
                direct_lags(layout, exposure)
                    .into_iter()
                    .map(|l| {
                        let c = layout.find(0, Role::Exposure(exposure), l).expect("listed lag");
                        src.coef(0, t + l, c)
                    })
                    .sum(),
            ),
            Estimand::CumOe { horizon, tol } => {
                let (value, lag) = propagate::cumulative_overall(layout, src, exposure, t, *horizon, *tol);
                Evaluation {
                    value,
                    truncation_lag: Some(lag),
                }
            }
        })
    }
}

/// Lags at which the exposure enters the outcome equation directly.
fn direct_lags(layout: &SystemLayout, exposure: usize) -> Vec<usize> {
    (0..=layout.max_lag)
        .filter(|&l| layout.find(0, Role::Exposure(exposure), l).is_some())
        .collect()
}

/// Interval settings for coefficient resampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalOptions {
    pub level: f64,
    pub draws: usize,
    pub seed: u64,
    #[serde(default)]
    pub method: Method,
}

impl Default for IntervalOptions {
    fn default() -> Self {
        IntervalOptions {
            level: 0.90,
            draws: 2000,
            seed: 0,
            method: Method::Auto,
        }
    }
}

impl IntervalOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!("level {} not in (0, 1)", self.level)));
        }
        if self.draws == 0 {
            return Err(Error::InvalidArgument("at least one draw is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandPoint {
    pub t: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub truncation_lag: Option<usize>,
}

impl EstimandPoint {
    /// The interval excludes zero.
    pub fn significant(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }
}

/// One estimand over a set of times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandSeries {
    pub name: String,
    pub estimand: Estimand,
    pub exposure: String,
    pub q: Option<usize>,
    pub level: f64,
    pub draws: usize,
    pub points: Vec<EstimandPoint>,
}

pub const CSV_HEADER: &str = "t,name,q,estimate,lower,upper";

impl EstimandSeries {
    /// Value of the `name` column: the label, qualified by the exposure.
    pub fn csv_name(&self) -> String {
        format!("{}[{}]", self.name, self.exposure)
    }

    pub fn write_csv_rows(&self, out: &mut String) {
        let name = self.csv_name();
        let q = self.q.map(|q| q.to_string()).unwrap_or_default();
        for p in &self.points {
            out.push_str(&csv_record(&[
                p.t.to_string(),
                name.clone(),
                q.clone(),
                p.estimate.to_string(),
                p.lower.to_string(),
                p.upper.to_string(),
            ]));
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        self.write_csv_rows(&mut s);
        s
    }
}

fn check_window(frame: &CoefficientFrame, estimand: &Estimand, exposure: usize, t: usize) -> Result<(usize, usize)> {
    estimand.validate()?;
    frame.layout.check_exposure(exposure)?;
    let (lo, hi) = estimand.window(&frame.layout, exposure, t).map_err(|_| Error::OutOfRange {
        t: t as i64,
        start: frame.first_time,
        end: frame.last_time,
    })?;
    frame.check_range(lo, hi)?;
    Ok((lo, hi))
}

/// Point value of `estimand` at `t` for one exposure column.
pub fn evaluate(frame: &CoefficientFrame, estimand: &Estimand, exposure: usize, t: usize) -> Result<Evaluation> {
    check_window(frame, estimand, exposure, t)?;
    estimand.evaluate(&frame.layout, frame, exposure, t, Method::Auto)
}

pub fn contemporaneous_effect(frame: &CoefficientFrame, exposure: usize, t: usize) -> Result<f64> {
    Ok(evaluate(frame, &Estimand::Ce, exposure, t)?.value)
}

pub fn lag_structural_direct_effect(frame: &CoefficientFrame, exposure: usize, t: usize, q: usize) -> Result<f64> {
    Ok(evaluate(frame, &Estimand::Lde { q }, exposure, t)?.value)
}

pub fn lag_effect(frame: &CoefficientFrame, exposure: usize, t: usize, q: usize) -> Result<f64> {
    Ok(evaluate(frame, &Estimand::Le { q }, exposure, t)?.value)
}

pub fn total_effect(frame: &CoefficientFrame, exposure: usize, t: usize, q: usize) -> Result<f64> {
    Ok(evaluate(frame, &Estimand::Te { q }, exposure, t)?.value)
}

pub fn general_effect(frame: &CoefficientFrame, exposure: usize, t: usize, strategy: &[u8]) -> Result<f64> {
    let e = Estimand::Ge {
        strategy: strategy.to_vec(),
    };
    Ok(evaluate(frame, &e, exposure, t)?.value)
}

pub fn cumulative_direct_effect(frame: &CoefficientFrame, exposure: usize, t: usize) -> Result<f64> {
    Ok(evaluate(frame, &Estimand::CumDe, exposure, t)?.value)
}

/// `(value, truncation lag)`.
pub fn cumulative_overall_effect(frame: &CoefficientFrame, exposure: usize, t: usize, horizon: usize) -> Result<(f64, usize)> {
    let e = Estimand::CumOe {
        horizon,
        tol: DEFAULT_CUMOE_TOL,
    };
    let ev = evaluate(frame, &e, exposure, t)?;
    Ok((ev.value, ev.truncation_lag.unwrap_or(horizon)))
}

/// Outcome perturbation at `t` from the exposure shifts `pulse`, applied
/// over `t - pulse.len() + 1 ..= t`, via the forward recursion.
pub fn propagate_linear_system(frame: &CoefficientFrame, exposure: usize, t: usize, pulse: &[f64]) -> Result<f64> {
    frame.layout.check_exposure(exposure)?;
    if pulse.is_empty() {
        return Err(Error::InvalidArgument("empty pulse".into()));
    }
    let lo = t.checked_sub(pulse.len() - 1).unwrap_or(0);
    frame.check_range(lo, t)?;
    Ok(propagate::propagate(&frame.layout, frame, exposure, t, pulse))
}

/// Percentile interval of `estimand` at `t` under independent Gaussian
/// draws of every coefficient vector in its window.
pub fn interval(
    frame: &CoefficientFrame,
    estimand: &Estimand,
    exposure: usize,
    t: usize,
    opts: &IntervalOptions,
) -> Result<(f64, f64)> {
    opts.validate()?;
    let (lo, hi) = check_window(frame, estimand, exposure, t)?;
    let factors = frame.factors(lo, hi);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(t as u64);
    if frame.covs.is_none() {
        let v = estimand.evaluate(&frame.layout, frame, exposure, t, opts.method)?.value;
        return Ok((v, v));
    }
    let mut values = Vec::with_capacity(opts.draws);
    for _ in 0..opts.draws {
        let w = frame.sample(lo, hi, &factors, &mut rng);
        values.push(estimand.evaluate(&frame.layout, &w, exposure, t, opts.method)?.value);
    }
    Ok(percentile_interval(&mut values, opts.level))
}

/// Point estimate with its interval clamped to contain it.
pub fn estimate_point(
    frame: &CoefficientFrame,
    estimand: &Estimand,
    exposure: usize,
    t: usize,
    opts: &IntervalOptions,
) -> Result<EstimandPoint> {
    check_window(frame, estimand, exposure, t)?;
    let ev = estimand.evaluate(&frame.layout, frame, exposure, t, opts.method)?;
    let (lower, upper) = interval(frame, estimand, exposure, t, opts)?;
    Ok(EstimandPoint {
        t,
        estimate: ev.value,
        lower: lower.min(ev.value),
        upper: upper.max(ev.value),
        truncation_lag: ev.truncation_lag,
    })
}

/// Times at which `estimand` can be evaluated on `frame`.
pub fn admissible_times(frame: &CoefficientFrame, estimand: &Estimand, exposure: usize) -> Vec<usize> {
    (frame.first_time..=frame.last_time)
        .filter(|&t| {
            estimand
                .window(&frame.layout, exposure, t)
                .is_ok_and(|(lo, hi)| frame.contains(lo) && frame.contains(hi))
        })
        .collect()
}

/// Evaluates `estimand` at `times` (every admissible time when `None`).
pub fn estimand_series(
    frame: &CoefficientFrame,
    estimand: &Estimand,
    exposure: usize,
    times: Option<&[usize]>,
    opts: &IntervalOptions,
) -> Result<EstimandSeries> {
    estimand.validate()?;
    frame.layout.check_exposure(exposure)?;
    let times = match times {
        Some(ts) => ts.to_vec(),
        None => admissible_times(frame, estimand, exposure),
    };
    let points = times
        .par_iter()
        .map(|&t| estimate_point(frame, estimand, exposure, t, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimandSeries {
        name: estimand.label(),
        estimand: estimand.clone(),
        exposure: exposure_label(&frame.layout, exposure),
        q: estimand.q(),
        level: opts.level,
        draws: opts.draws,
        points,
    })
}

pub fn exposure_label(layout: &SystemLayout, exposure: usize) -> String {
    layout
        .exposure_names
        .get(exposure)
        .cloned()
        .unwrap_or_else(|| format!("A{}", exposure + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn frame() -> CoefficientFrame {
        let l = SystemLayout::standard(1, 1);
        CoefficientFrame::from_fn(l, 2, 60, |m, t| {
            let s = (t as f64 * 0.37).sin();
            if m == 0 {
                vec![0.2, 0.5 + 0.1 * s, -1.0 + 0.2 * s, -0.4, 0.3 - 0.1 * s]
            } else {
                vec![0.1, 0.4, -0.6 + 0.3 * s, 0.25]
            }
        })
        .unwrap()
    }

    #[test]
    fn closed_forms_match_recursion() {
        let f = frame();
        for t in 10..50 {
            for e in [
                Estimand::Ce,
                Estimand::Lde { q: 1 },
                Estimand::Lde { q: 2 },
                Estimand::Le { q: 1 },
                Estimand::Le { q: 2 },
                Estimand::Te { q: 1 },
                Estimand::Te { q: 2 },
                Estimand::CumDe,
            ] {
                let a = e.evaluate(&f.layout, &f, 0, t, Method::ClosedForm).unwrap().value;
                let b = e.evaluate(&f.layout, &f, 0, t, Method::Recursion).unwrap().value;
                assert!((a - b).abs() < 1e-12, "{e:?} at {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn consistency_web() {
        let f = frame();
        let t = 30;
        let te2 = total_effect(&f, 0, t, 2).unwrap();
        assert!((general_effect(&f, 0, t, &[1, 1, 1]).unwrap() - te2).abs() < 1e-12);
        assert_eq!(general_effect(&f, 0, t, &[0, 0, 0]).unwrap(), 0.0);
        assert_eq!(total_effect(&f, 0, t, 0).unwrap(), contemporaneous_effect(&f, 0, t).unwrap());
        let cum = cumulative_direct_effect(&f, 0, t).unwrap();
        let want = contemporaneous_effect(&f, 0, t).unwrap() + lag_structural_direct_effect(&f, 0, t + 1, 1).unwrap();
        assert!((cum - want).abs() < 1e-15);
    }

    #[test]
    fn range_errors() {
        let f = frame();
        assert!(matches!(lag_effect(&f, 0, 3, 2), Err(Error::OutOfRange { .. })));
        assert!(matches!(cumulative_overall_effect(&f, 0, 50, 20), Err(Error::OutOfRange { .. })));
        assert!(matches!(
            general_effect(&f, 0, 30, &[0, 2]),
            Err(Error::InvalidStrategy(_))
        ));
    }

    #[test]
    fn zero_covariance_interval_is_degenerate() {
        let f = frame();
        let p = estimate_point(&f, &Estimand::Te { q: 2 }, 0, 20, &IntervalOptions::default()).unwrap();
        assert_eq!((p.lower, p.upper), (p.estimate, p.estimate));
    }

    #[test]
    fn ce_interval_matches_gaussian_quantile() {
        let l = SystemLayout::standard(1, 1);
        let f = CoefficientFrame::constant(l, 2, 10, &[vec![0.0, 0.5, -1.0, 0.0, 0.0], vec![0.0; 4]])
            .unwrap()
            .with_constant_cov(0, DMatrix::from_diagonal_element(5, 5, 0.04));
        let opts = IntervalOptions {
            level: 0.9,
            draws: 100_000,
            seed: 7,
            method: Method::Auto,
        };
        let (lo, hi) = interval(&f, &Estimand::Ce, 0, 5, &opts).unwrap();
        let half = (hi - lo) / 2.0;
        let z = 1.6448536269514722;
        assert!((half / (z * 0.2) - 1.0).abs() < 0.05);
    }
}
