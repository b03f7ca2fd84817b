//! Synthetic series from the single-lag DAG with known coefficient paths.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimands::{evaluate, CoefficientFrame, Estimand, SystemLayout};
use crate::series::{DagConfig, Role, Schema, Series};
use crate::ssm::Column;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    Constant {
        value: f64,
    },
    /// `values[k]` applies on segment `k`; a change point `tau` ends a
    /// segment at `t = tau`.
    Piecewise {
        values: Vec<f64>,
        change_points: Vec<usize>,
    },
    RandomWalk {
        start: f64,
        variance: f64,
    },
}

impl Trajectory {
    fn validate(&self, name: &str, n: usize) -> Result<()> {
        match self {
            Trajectory::Constant { value } if !value.is_finite() => {
                Err(Error::InvalidSpec(format!("`{name}` is not finite")))
            }
            Trajectory::Piecewise { values, change_points } => {
                if values.len() != change_points.len() + 1 {
                    return Err(Error::InvalidSpec(format!(
                        "`{name}` needs one more value than change points"
                    )));
                }
                if change_points.windows(2).any(|w| w[0] >= w[1])
                    || change_points.iter().any(|&c| c <= 1 || c >= n)
                {
                    return Err(Error::InvalidSpec(format!(
                        "`{name}` change points must increase strictly inside (1, {n})"
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidSpec(format!("`{name}` has a non-finite value")));
                }
                Ok(())
            }
            Trajectory::RandomWalk { start, variance } if !start.is_finite() || !(*variance >= 0.0) => {
                Err(Error::InvalidSpec(format!("`{name}` random walk is ill-defined")))
            }
            _ => Ok(()),
        }
    }

    fn path<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match self {
            Trajectory::Constant { value } => vec![*value; n],
            Trajectory::Piecewise { values, change_points } => (1..=n)
                .map(|t| values[change_points.iter().filter(|&&c| c < t).count()])
                .collect(),
            Trajectory::RandomWalk { start, variance } => {
                let sd = variance.sqrt();
                let mut x = *start;
                (0..n)
                    .map(|_| {
                        x += sd * rng.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            }
        }
    }
}

/// `Pr(A_{e,t} = 1) = logistic(intercept + own_lag A_{e,t-1} + outcome_lag
/// Y_{t-1} + covariate_lag' C_{t-1})`, clamped to `[eps, 1 - eps]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub intercept: f64,
    #[serde(default)]
    pub own_lag: f64,
    #[serde(default)]
    pub outcome_lag: f64,
    #[serde(default)]
    pub covariate_lag: Vec<f64>,
}

impl Assignment {
    pub fn randomized() -> Self {
        Assignment {
            intercept: 0.0,
            own_lag: 0.0,
            outcome_lag: 0.0,
            covariate_lag: Vec::new(),
        }
    }
}

fn default_eps() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub length: usize,
    pub seed: u64,
    pub exposures: Vec<String>,
    pub outcome: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Outcome-equation coefficients by name; absent names are zero.
    pub outcome_coefficients: BTreeMap<String, Trajectory>,
    /// Covariate-equation coefficients by name, one map per covariate.
    #[serde(default)]
    pub covariate_coefficients: Vec<BTreeMap<String, Trajectory>>,
    pub obs_variance: f64,
    #[serde(default)]
    pub covariate_variance: Vec<f64>,
    pub assignment: Vec<Assignment>,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default)]
    pub missing_outcome_rate: f64,
    #[serde(default)]
    pub initial_outcome: f64,
    #[serde(default)]
    pub baseline_covariates: Vec<f64>,
}

fn constant(value: f64) -> Trajectory {
    Trajectory::Constant { value }
}

fn coefs(pairs: &[(&str, Trajectory)]) -> BTreeMap<String, Trajectory> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Outcome noise variance giving a signal-to-noise ratio near 2 in
/// [`TruthSpec::change_point_demo`].
pub const CHANGE_POINT_OBS_VARIANCE: f64 = 0.65;

impl TruthSpec {
    /// One exposure, one covariate, static coefficients, confounded
    /// assignment, 600 time points.
    pub fn demo(seed: u64) -> Self {
        TruthSpec {
            length: 600,
            seed,
            exposures: vec!["A".into()],
            outcome: "Y".into(),
            covariates: vec!["C".into()],
            outcome_coefficients: coefs(&[
                ("beta0", constant(0.5)),
                ("rho", constant(0.5)),
                ("beta1", constant(-1.0)),
                ("beta2", constant(-0.4)),
                ("beta_c", constant(0.3)),
            ]),
            covariate_coefficients: vec![coefs(&[
                ("mu0", constant(0.2)),
                ("rho_c", constant(0.4)),
                ("mu1", constant(-0.5)),
                ("mu2", constant(0.2)),
            ])],
            obs_variance: 1.0,
            covariate_variance: vec![1.0],
            assignment: vec![Assignment {
                intercept: -0.2,
                own_lag: 0.8,
                outcome_lag: 0.3,
                covariate_lag: vec![-0.2],
            }],
            epsilon: 0.05,
            missing_outcome_rate: 0.0,
            initial_outcome: 0.0,
            baseline_covariates: vec![0.0],
        }
    }

    /// The demo system with `beta1` stepping from -1.0 to -0.2 after
    /// `t = 300`, or held at -1.0 when `changing` is false.
    pub fn change_point_demo(seed: u64, changing: bool) -> Self {
        let mut spec = TruthSpec::demo(seed);
        let beta1 = if changing {
            Trajectory::Piecewise {
                values: vec![-1.0, -0.2],
                change_points: vec![300],
            }
        } else {
            constant(-1.0)
        };
        spec.outcome_coefficients.insert("beta1".into(), beta1);
        spec.obs_variance = CHANGE_POINT_OBS_VARIANCE;
        spec
    }

    /// Two exposures (calls, texts), one covariate, 708 days, with the
    /// text effects changing at days 516 and 641.
    pub fn bls_like(seed: u64) -> Self {
        let piece = |a: f64, b: f64, c: f64| Trajectory::Piecewise {
            values: vec![a, b, c],
            change_points: vec![516, 641],
        };
        TruthSpec {
            length: 708,
            seed,
            exposures: vec!["A_calls".into(), "A_texts".into()],
            outcome: "Y_negmood".into(),
            covariates: vec!["C_pm".into()],
            outcome_coefficients: coefs(&[
                ("beta0", constant(1.0)),
                ("rho", constant(0.63)),
                ("beta11", constant(-0.3)),
                ("beta12", constant(-0.1)),
                ("beta21", piece(-0.2, -1.15, -0.5)),
                ("beta22", piece(-0.1, -0.72, -0.3)),
                ("beta_pm", constant(-0.01)),
            ]),
            covariate_coefficients: vec![coefs(&[
                ("mu0", constant(0.5)),
                ("rho_pm", constant(0.5)),
                ("mu1", constant(0.3)),
                ("mu2", constant(-0.78)),
                ("mu3", constant(-0.01)),
            ])],
            obs_variance: 0.8,
            covariate_variance: vec![1.0],
            assignment: vec![
                Assignment {
                    intercept: -1.0,
                    own_lag: 0.6,
                    outcome_lag: 0.2,
                    covariate_lag: vec![0.0],
                },
                Assignment {
                    intercept: -0.3,
                    own_lag: 0.7,
                    outcome_lag: -0.2,
                    covariate_lag: vec![0.1],
                },
            ],
            epsilon: 0.05,
            missing_outcome_rate: 0.0,
            initial_outcome: 0.0,
            baseline_covariates: vec![0.0],
        }
    }

    pub fn schema(&self) -> Schema {
        let e: Vec<&str> = self.exposures.iter().map(|s| s.as_str()).collect();
        let c: Vec<&str> = self.covariates.iter().map(|s| s.as_str()).collect();
        Schema::new(&e, &self.outcome, &c)
    }

    pub fn layout(&self) -> Result<SystemLayout> {
        SystemLayout::from_dag(
            &DagConfig::standard(self.exposures.len(), self.covariates.len()),
            &self.schema(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.length;
        if n < 3 {
            return Err(Error::InvalidSpec("length must be at least 3".into()));
        }
        self.schema().validate()?;
        let layout = self.layout()?;
        let k = self.covariates.len();
        if self.covariate_coefficients.len() != k || self.covariate_variance.len() != k {
            return Err(Error::InvalidSpec("one coefficient map and variance per covariate".into()));
        }
        if self.assignment.len() != self.exposures.len() {
            return Err(Error::InvalidSpec("one assignment model per exposure".into()));
        }
        for (m, map) in std::iter::once(&self.outcome_coefficients)
            .chain(&self.covariate_coefficients)
            .enumerate()
        {
            for (name, traj) in map {
                if layout.find_name(m, name).is_none() {
                    return Err(Error::InvalidSpec(format!(
                        "unknown coefficient `{name}`; expected one of {:?}",
                        layout.names[m]
                    )));
                }
                traj.validate(name, n)?;
            }
        }
        for a in &self.assignment {
            if a.covariate_lag.len() > k {
                return Err(Error::InvalidSpec("assignment covariate weights exceed covariates".into()));
            }
            let all = [a.intercept, a.own_lag, a.outcome_lag];
            if all.iter().chain(&a.covariate_lag).any(|x| !x.is_finite()) {
                return Err(Error::InvalidSpec("assignment coefficients must be finite".into()));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidSpec("epsilon must lie in (0, 0.5)".into()));
        }
        if !(self.obs_variance > 0.0) || self.covariate_variance.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidSpec("noise variances must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.missing_outcome_rate) {
            return Err(Error::InvalidSpec("missing outcome rate must lie in [0, 1)".into()));
        }
        if !self.baseline_covariates.is_empty() && self.baseline_covariates.len() != k {
            return Err(Error::InvalidSpec("baseline covariate width".into()));
        }
        Ok(())
    }
}

/// A generated series with its exact coefficient paths.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub series: Series,
    /// Coefficients for `t = 1..=T` with zero sampling covariance and the
    /// true noise variances.
    pub truth: CoefficientFrame,
    /// `propensities[e][t - 1] = Pr(A_{e,t} = 1 | history)`.
    pub propensities: Vec<Vec<f64>>,
    /// `E[Y_t | parents]` along the realized path.
    pub outcome_mean: Vec<f64>,
}

impl Synthetic {
    /// Variance of the outcome's conditional mean over its noise variance.
    pub fn signal_to_noise(&self) -> f64 {
        let m = &self.outcome_mean;
        let n = m.len() as f64;
        let mu = m.iter().sum::<f64>() / n;
        let var = m.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
        var / self.truth.obs_variance[0]
    }
}

pub fn generate(spec: &TruthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let n = spec.length;
    let layout = spec.layout()?;
    let n_exp = spec.exposures.len();
    let n_cov = spec.covariates.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let maps: Vec<&BTreeMap<String, Trajectory>> = std::iter::once(&spec.outcome_coefficients)
        .chain(&spec.covariate_coefficients)
        .collect();
    // paths[m][col][t - 1]
    let paths: Vec<Vec<Vec<f64>>> = maps
        .iter()
        .enumerate()
        .map(|(m, map)| {
            layout.names[m]
                .iter()
                .map(|name| match map.get(name) {
                    Some(tr) => tr.path(n, &mut rng),
                    None => vec![0.0; n],
                })
                .collect()
        })
        .collect();
    let truth = CoefficientFrame::from_fn(layout.clone(), 1, n, |m, t| paths[m].iter().map(|c| c[t - 1]).collect())?;

    let base_c: Vec<f64> = if spec.baseline_covariates.is_empty() {
        vec![0.0; n_cov]
    } else {
        spec.baseline_covariates.clone()
    };
    let mut a = vec![vec![0.0; n + 1]; n_exp];
    let mut y = vec![0.0; n + 1];
    let mut c = vec![vec![0.0; n + 1]; n_cov];
    y[0] = spec.initial_outcome;
    for j in 0..n_cov {
        c[j][0] = base_c[j];
    }
    let mut propensities = vec![Vec::with_capacity(n); n_exp];
    let mut outcome_mean = Vec::with_capacity(n);
    let sd_y = spec.obs_variance.sqrt();
    let sd_c: Vec<f64> = spec.covariate_variance.iter().map(|v| v.sqrt()).collect();
    let eps = spec.epsilon;

    for t in 1..=n {
        for (e, asg) in spec.assignment.iter().enumerate() {
            let mut eta = asg.intercept + asg.own_lag * a[e][t - 1] + asg.outcome_lag * y[t - 1];
            for (j, w) in asg.covariate_lag.iter().enumerate() {
                eta += w * c[j][t - 1];
            }
            let p = (1.0 / (1.0 + (-eta).exp())).clamp(eps, 1.0 - eps);
            propensities[e].push(p);
            a[e][t] = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        }
        let value = |role: crate::series::Role, lag: usize, y: &[f64], c: &[Vec<f64>]| match role {
            Role::Exposure(e) => a[e][t - lag],
            Role::Outcome => y[t - lag],
            Role::Covariate(j) => c[j][t - lag],
        };
        let mean = |m: usize, y: &[f64], c: &[Vec<f64>]| -> f64 {
            let coef = truth.coefficients(m, t);
            layout.columns[m]
                .iter()
                .enumerate()
                .map(|(i, col)| match col {
                    Column::Intercept => coef[i],
                    Column::Lagged(p) => coef[i] * value(p.role, p.lag, y, c),
                })
                .sum()
        };
        let my = mean(0, &y, &c);
        outcome_mean.push(my);
        y[t] = my + sd_y * rng.sample::<f64, _>(StandardNormal);
        for j in 0..n_cov {
            let v = mean(j + 1, &y, &c) + sd_c[j] * rng.sample::<f64, _>(StandardNormal);
            c[j][t] = v;
        }
    }

    let mut mask_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    mask_rng.set_stream(1);
    let outcome: Vec<Option<f64>> = y[1..]
        .iter()
        .map(|&v| (spec.missing_outcome_rate == 0.0 || mask_rng.random::<f64>() >= spec.missing_outcome_rate).then_some(v))
        .collect();
    let series = Series::new(
        spec.schema(),
        a.iter().map(|col| col[1..].iter().map(|&v| Some(v)).collect()).collect(),
        outcome,
        c.iter().map(|col| col[1..].iter().map(|&v| Some(v)).collect()).collect(),
        (n_cov > 0).then(|| base_c.iter().map(|&v| Some(v)).collect()),
    )?;
    let mut truth = truth;
    truth.obs_variance = std::iter::once(spec.obs_variance)
        .chain(spec.covariate_variance.iter().copied())
        .collect();
    Ok(Synthetic {
        series,
        truth,
        propensities,
        outcome_mean,
    })
}

/// Estimand evaluated on the exact coefficients.
pub fn ground_truth_estimand(truth: &CoefficientFrame, estimand: &Estimand, exposure: usize, t: usize) -> Result<f64> {
    Ok(evaluate(truth, estimand, exposure, t)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate(&TruthSpec::demo(1)).unwrap();
        let b = generate(&TruthSpec::demo(1)).unwrap();
        let c = generate(&TruthSpec::demo(2)).unwrap();
        assert_eq!(a.series.to_csv_string(), b.series.to_csv_string());
        assert_ne!(a.series.to_csv_string(), c.series.to_csv_string());
        assert_eq!(a.series.len(), 600);
    }

    #[test]
    fn propensities_respect_bounds() {
        let mut spec = TruthSpec::demo(3);
        spec.assignment[0].intercept = 8.0;
        let s = generate(&spec).unwrap();
        let p = &s.propensities[0];
        assert!(p.iter().all(|&x| (0.05..=0.95).contains(&x)));
        assert!(p.iter().any(|&x| x == 0.95));
    }

    #[test]
    fn piecewise_truth() {
        let mut spec = TruthSpec::demo(4);
        spec.outcome_coefficients.insert(
            "beta1".into(),
            Trajectory::Piecewise {
                values: vec![-1.0, -0.2],
                change_points: vec![300],
            },
        );
        let s = generate(&spec).unwrap();
        assert_eq!(ground_truth_estimand(&s.truth, &Estimand::Ce, 0, 300).unwrap(), -1.0);
        assert_eq!(ground_truth_estimand(&s.truth, &Estimand::Ce, 0, 301).unwrap(), -0.2);
    }

    #[test]
    fn unknown_coefficient_rejected() {
        let mut spec = TruthSpec::demo(0);
        spec.outcome_coefficients.insert("beta9".into(), constant(1.0));
        assert!(matches!(generate(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn missing_outcomes() {
        let mut spec = TruthSpec::demo(5);
        spec.missing_outcome_rate = 0.1;
        let s = generate(&spec).unwrap();
        let miss = s.series.outcome().iter().filter(|v| v.is_none()).count();
        assert!(miss > 30 && miss < 90, "{miss}");
    }
}
