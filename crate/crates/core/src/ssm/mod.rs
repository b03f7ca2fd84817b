//! Time-varying-coefficient regression as a linear state-space model.
//!
//! Every design column carries one regime:
//!
//! * `static`: the coefficient never moves (`W_jj = 0`);
//! * `random_walk`: `W_jj > 0`, estimated by maximum likelihood;
//! * `periodic_stable`: constant between change points, unrelated across
//!   them.
//!
//! A periodic-stable column is expanded into one state element per segment;
//! only the element of the active segment loads on the design value. This
//! is the same model as re-initializing that coefficient to a diffuse prior
//! at each change point, but keeps every free level inside `theta_0`, which
//! lets [`FittedSsm::loglik_profile`] be computed exactly.

pub mod changepoint;
mod fit;
pub mod kalman;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{DagConfig, Parent, Role, Schema, Series};

pub use changepoint::{infer_change_points, ChangePointOptions, ChangePointResult, SegmentEstimate};
pub use fit::{fit_mle, FitOptions};

/// One regressor of a response equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    Intercept,
    Lagged(Parent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Static,
    RandomWalk,
    PeriodicStable { change_points: Vec<usize> },
}

impl Regime {
    pub fn change_points(&self) -> &[usize] {
        match self {
            Regime::PeriodicStable { change_points } => change_points,
            _ => &[],
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Regime::Static => "static",
            Regime::RandomWalk => "random walk",
            Regime::PeriodicStable { .. } => "periodic stable",
        }
    }
}

fn default_diffuse() -> f64 {
    1e7
}

/// Prior `theta_0 ~ N(m0, C0)` over design columns. Unset parts default to
/// `m0 = 0`, `C0 = diffuse_scale * I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    #[serde(default)]
    pub cov: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_diffuse")]
    pub diffuse_scale: f64,
}

impl Default for Prior {
    fn default() -> Self {
        Prior {
            mean: None,
            cov: None,
            diffuse_scale: default_diffuse(),
        }
    }
}

/// Structure of one scalar-response state-space regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmSpec {
    pub response: Role,
    pub columns: Vec<Column>,
    pub names: Vec<String>,
    pub regimes: Vec<Regime>,
    pub max_lag: usize,
    #[serde(default)]
    pub prior: Prior,
}

impl SsmSpec {
    /// All-static regression of `response` on `(1, parents...)` from the DAG.
    pub fn from_dag(cfg: &DagConfig, response: Role, schema: &Schema) -> Result<SsmSpec> {
        if let Role::Exposure(_) = response {
            return Err(Error::InvalidSpec("exposure equations are not fitted".into()));
        }
        cfg.validate(schema.exposures.len(), schema.covariates.len())?;
        let columns: Vec<Column> = std::iter::once(Column::Intercept)
            .chain(cfg.parents_of(response).iter().map(|p| Column::Lagged(*p)))
            .collect();
        let names = columns
            .iter()
            .map(|c| coefficient_name(*c, response, schema))
            .collect();
        Ok(SsmSpec {
            response,
            regimes: vec![Regime::Static; columns.len()],
            columns,
            names,
            max_lag: cfg.max_lag,
            prior: Prior::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn index_of_column(&self, column: Column) -> Option<usize> {
        self.columns.iter().position(|c| *c == column)
    }

    pub fn set_regime(&mut self, name: &str, regime: Regime) -> Result<()> {
        let j = self
            .index_of(name)
            .ok_or_else(|| Error::InvalidSpec(format!("no coefficient named `{name}`; have {:?}", self.names)))?;
        self.regimes[j] = regime;
        Ok(())
    }

    pub fn with_regime(mut self, name: &str, regime: Regime) -> Result<SsmSpec> {
        self.set_regime(name, regime)?;
        Ok(self)
    }

    /// Number of random-walk variances plus the observation variance.
    pub fn n_hyperparams(&self) -> usize {
        1 + self.regimes.iter().filter(|r| matches!(r, Regime::RandomWalk)).count()
    }

    pub fn n_change_points(&self) -> usize {
        self.regimes.iter().map(|r| r.change_points().len()).sum()
    }

    pub fn first_time(&self) -> usize {
        self.max_lag + 1
    }

    pub fn validate(&self, last_time: usize) -> Result<()> {
        let d = self.dim();
        if self.names.len() != d || self.regimes.len() != d {
            return Err(Error::InvalidSpec("one name and one regime per design column required".into()));
        }
        for (name, r) in self.names.iter().zip(&self.regimes) {
            let cps = r.change_points();
            if cps.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidSpec(format!("change points of `{name}` must be strictly increasing")));
            }
            if cps.iter().any(|&c| c <= 1 || c >= last_time) {
                return Err(Error::InvalidSpec(format!(
                    "change points of `{name}` must lie strictly inside (1, {last_time})"
                )));
            }
        }
        if let Some(m) = &self.prior.mean {
            if m.len() != d {
                return Err(Error::InvalidSpec("prior mean width".into()));
            }
        }
        if let Some(c) = &self.prior.cov {
            if c.len() != d || c.iter().any(|row| row.len() != d) {
                return Err(Error::InvalidSpec("prior covariance shape".into()));
            }
        }
        if !(self.prior.diffuse_scale > 0.0) {
            return Err(Error::InvalidSpec("diffuse scale must be positive".into()));
        }
        Ok(())
    }
}

/// Coefficient name for a design column in the equation of `response`.
pub fn coefficient_name(column: Column, response: Role, schema: &Schema) -> String {
    let n_exp = schema.exposures.len();
    let suffix = |lag: usize, base_lag: usize| {
        if lag == base_lag {
            String::new()
        } else {
            format!("_l{lag}")
        }
    };
    match (response, column) {
        (Role::Outcome, Column::Intercept) => "beta0".into(),
        (Role::Outcome, Column::Lagged(p)) => match p.role {
            Role::Outcome => format!("rho{}", suffix(p.lag, 1)),
            Role::Exposure(e) => {
                if n_exp == 1 {
                    format!("beta{}", p.lag + 1)
                } else {
                    format!("beta{}{}", e + 1, p.lag + 1)
                }
            }
            Role::Covariate(j) => format!("beta_{}{}", schema.label_of(Role::Covariate(j)), suffix(p.lag, 1)),
        },
        (Role::Covariate(_), Column::Intercept) => "mu0".into(),
        (Role::Covariate(own), Column::Lagged(p)) => match p.role {
            Role::Covariate(j) if j == own => {
                format!("rho_{}{}", schema.label_of(Role::Covariate(own)), suffix(p.lag, 1))
            }
            Role::Covariate(j) => format!(
                "rho_{}_{}{}",
                schema.label_of(Role::Covariate(own)),
                schema.label_of(Role::Covariate(j)),
                suffix(p.lag, 1)
            ),
            Role::Exposure(e) => format!("mu{}{}", e + 1, suffix(p.lag, 0)),
            Role::Outcome => format!("mu{}{}", n_exp + 1, suffix(p.lag, 0)),
        },
        (Role::Exposure(_), Column::Intercept) => "gamma0".into(),
        (Role::Exposure(_), Column::Lagged(p)) => format!("gamma_{}_l{}", schema.label_of(p.role), p.lag),
    }
}

/// Variance hyperparameters: observation variance and per-column state noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub obs_variance: f64,
    pub state_variances: Vec<f64>,
}

/// Smoothed moments of the design-space coefficients at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedPoint {
    pub t: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

/// Per-time mean and standard error of one named coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTrack {
    pub name: String,
    pub regime: Regime,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

/// A fitted scalar-response model. Standard errors come from the smoothed
/// covariance with the variance hyperparameters held at their estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedSsm {
    pub spec: SsmSpec,
    pub first_time: usize,
    pub last_time: usize,
    pub hyper: Hyperparams,
    /// Filter (prediction-error) log-likelihood under the prior.
    pub loglik: f64,
    /// Log-likelihood with the initial state treated as a fixed parameter at
    /// its smoothed mean; comparable across state dimensions.
    pub loglik_profile: f64,
    pub bic: f64,
    pub n_params: usize,
    pub n_used: usize,
    pub converged: bool,
    pub evaluations: usize,
    pub prediction_only: Vec<usize>,
    pub smoothed: Vec<SmoothedPoint>,
    pub coefficients: Vec<CoefficientTrack>,
}

impl FittedSsm {
    pub fn times(&self) -> std::ops::RangeInclusive<usize> {
        self.first_time..=self.last_time
    }

    pub fn mean_at(&self, t: usize) -> Option<DVector<f64>> {
        let p = self.smoothed.get(t.checked_sub(self.first_time)?)?;
        Some(DVector::from_vec(p.mean.clone()))
    }

    pub fn cov_at(&self, t: usize) -> Option<DMatrix<f64>> {
        let p = self.smoothed.get(t.checked_sub(self.first_time)?)?;
        let d = p.mean.len();
        Some(DMatrix::from_fn(d, d, |i, j| p.cov[i][j]))
    }

    pub fn coefficient(&self, name: &str) -> Option<&CoefficientTrack> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    /// `(mean, se)` of a named coefficient at `t`.
    pub fn estimate(&self, name: &str, t: usize) -> Option<(f64, f64)> {
        let c = self.coefficient(name)?;
        let i = t.checked_sub(self.first_time)?;
        Some((*c.mean.get(i)?, *c.se.get(i)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Map from design columns to augmented state elements.
#[derive(Debug, Clone)]
pub(crate) struct StateLayout {
    pub n_elements: usize,
    pub col_elements: Vec<Vec<usize>>,
    pub col_change_points: Vec<Vec<usize>>,
}

impl StateLayout {
    pub fn new(spec: &SsmSpec) -> Self {
        let mut next = 0;
        let mut col_elements = Vec::with_capacity(spec.dim());
        let mut col_change_points = Vec::with_capacity(spec.dim());
        for r in &spec.regimes {
            let cps = r.change_points().to_vec();
            col_elements.push((next..next + cps.len() + 1).collect());
            next += cps.len() + 1;
            col_change_points.push(cps);
        }
        StateLayout {
            n_elements: next,
            col_elements,
            col_change_points,
        }
    }

    pub fn active(&self, col: usize, t: usize) -> usize {
        let seg = self.col_change_points[col].iter().filter(|&&c| c < t).count();
        self.col_elements[col][seg]
    }

    pub fn augment(&self, row: &[f64], t: usize) -> DVector<f64> {
        let mut f = DVector::zeros(self.n_elements);
        for (j, v) in row.iter().enumerate() {
            f[self.active(j, t)] = *v;
        }
        f
    }

    pub fn prior(&self, spec: &SsmSpec) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n_elements;
        let kappa = spec.prior.diffuse_scale;
        let mut m0 = DVector::zeros(n);
        let mut c0 = DMatrix::zeros(n, n);
        for (j, elems) in self.col_elements.iter().enumerate() {
            let mj = spec.prior.mean.as_ref().map_or(0.0, |m| m[j]);
            for (seg, &e) in elems.iter().enumerate() {
                m0[e] = mj;
                if seg > 0 {
                    c0[(e, e)] = kappa;
                }
            }
        }
        for j in 0..self.col_elements.len() {
            for k in 0..self.col_elements.len() {
                let (a, b) = (self.col_elements[j][0], self.col_elements[k][0]);
                c0[(a, b)] = match &spec.prior.cov {
                    Some(c) => c[j][k],
                    None if j == k => kappa,
                    None => 0.0,
                };
            }
        }
        (m0, c0)
    }

    pub fn state_noise(&self, spec: &SsmSpec, variances: &[f64]) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.n_elements, self.n_elements);
        for (j, r) in spec.regimes.iter().enumerate() {
            if matches!(r, Regime::RandomWalk) {
                for &e in &self.col_elements[j] {
                    w[(e, e)] = variances[j];
                }
            }
        }
        w
    }
}

/// Responses and design rows of a spec over `first_time..=T`.
#[derive(Debug, Clone)]
pub(crate) struct FitData {
    pub first_time: usize,
    pub last_time: usize,
    pub ys: Vec<Option<f64>>,
    pub rows: Vec<Option<Vec<f64>>>,
}

impl FitData {
    pub fn collect(spec: &SsmSpec, series: &Series) -> Result<FitData> {
        let first = spec.first_time();
        let last = series.len();
        if last < first {
            return Err(Error::InsufficientData(format!(
                "series of length {last} is shorter than the burn-in window"
            )));
        }
        let mut ys = Vec::with_capacity(last - first + 1);
        let mut rows = Vec::with_capacity(last - first + 1);
        for t in first..=last {
            let row: Option<Vec<f64>> = spec
                .columns
                .iter()
                .map(|c| match c {
                    Column::Intercept => Some(1.0),
                    Column::Lagged(p) => series.value(p.role, t - p.lag),
                })
                .collect();
            let y = series.value(spec.response, t);
            match (y, row) {
                (Some(y), Some(row)) => {
                    ys.push(Some(y));
                    rows.push(Some(row));
                }
                (_, row) => {
                    ys.push(None);
                    rows.push(row);
                }
            }
        }
        Ok(FitData {
            first_time: first,
            last_time: last,
            ys,
            rows,
        })
    }

    pub fn n_used(&self) -> usize {
        self.ys.iter().filter(|y| y.is_some()).count()
    }

    pub fn augmented_design(&self, layout: &StateLayout) -> Vec<DVector<f64>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| match (row, self.ys[i]) {
                (Some(r), Some(_)) => layout.augment(r, self.first_time + i),
                _ => DVector::zeros(layout.n_elements),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_for_two_exposure_outcome_model() {
        let schema = Schema::new(&["A_calls", "A_texts"], "Y_negmood", &["C_pm"]);
        let spec = SsmSpec::from_dag(&DagConfig::standard(2, 1), Role::Outcome, &schema).unwrap();
        assert_eq!(
            spec.names,
            vec!["beta0", "rho", "beta11", "beta12", "beta21", "beta22", "beta_pm"]
        );
        let cov = SsmSpec::from_dag(&DagConfig::standard(2, 1), Role::Covariate(0), &schema).unwrap();
        assert_eq!(cov.names, vec!["mu0", "rho_pm", "mu1", "mu2", "mu3"]);
    }

    #[test]
    fn names_for_single_exposure() {
        let schema = Schema::new(&["A"], "Y", &["C"]);
        let spec = SsmSpec::from_dag(&DagConfig::standard(1, 1), Role::Outcome, &schema).unwrap();
        assert_eq!(spec.names, vec!["beta0", "rho", "beta1", "beta2", "beta_c"]);
        let cov = SsmSpec::from_dag(&DagConfig::standard(1, 1), Role::Covariate(0), &schema).unwrap();
        assert_eq!(cov.names, vec!["mu0", "rho_c", "mu1", "mu2"]);
    }

    #[test]
    fn layout_expands_segments() {
        let schema = Schema::new(&["A"], "Y", &["C"]);
        let spec = SsmSpec::from_dag(&DagConfig::standard(1, 1), Role::Outcome, &schema)
            .unwrap()
            .with_regime("beta1", Regime::PeriodicStable { change_points: vec![10, 20] })
            .unwrap();
        let layout = StateLayout::new(&spec);
        assert_eq!(layout.n_elements, 7);
        assert_eq!(layout.active(2, 10), 2);
        assert_eq!(layout.active(2, 11), 3);
        assert_eq!(layout.active(2, 21), 4);
        assert_eq!(layout.active(4, 21), 6);
        let (_, c0) = layout.prior(&spec);
        assert_eq!(c0[(3, 3)], 1e7);
        assert_eq!(c0[(2, 3)], 0.0);
    }

    #[test]
    fn change_points_must_be_interior() {
        let schema = Schema::new(&["A"], "Y", &[]);
        let spec = SsmSpec::from_dag(&DagConfig::standard(1, 0), Role::Outcome, &schema)
            .unwrap()
            .with_regime("beta1", Regime::PeriodicStable { change_points: vec![50] })
            .unwrap();
        assert!(spec.validate(100).is_ok());
        assert!(spec.validate(50).is_err());
    }
}
