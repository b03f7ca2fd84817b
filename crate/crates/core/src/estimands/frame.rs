use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{DagConfig, Parent, Role, Schema};
use crate::ssm::{coefficient_name, Column, FittedSsm};

/// Equations of the linear system: model 0 is the outcome, model `1 + j`
/// is covariate `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemLayout {
    pub n_exposures: usize,
    pub n_covariates: usize,
    pub exposure_names: Vec<String>,
    pub columns: Vec<Vec<Column>>,
    pub names: Vec<Vec<String>>,
    pub max_lag: usize,
}

impl SystemLayout {
    pub fn from_dag(cfg: &DagConfig, schema: &Schema) -> Result<Self> {
        let n_exposures = schema.exposures.len();
        let n_covariates = schema.covariates.len();
        cfg.validate(n_exposures, n_covariates)?;
        let responses: Vec<Role> = std::iter::once(Role::Outcome)
            .chain((0..n_covariates).map(Role::Covariate))
            .collect();
        let mut columns = Vec::new();
        let mut names = Vec::new();
        for r in responses {
            let cols: Vec<Column> = std::iter::once(Column::Intercept)
                .chain(cfg.parents_of(r).iter().map(|p| Column::Lagged(*p)))
                .collect();
            names.push(cols.iter().map(|c| coefficient_name(*c, r, schema)).collect());
            columns.push(cols);
        }
        Ok(SystemLayout {
            n_exposures,
            n_covariates,
            exposure_names: schema.exposures.iter().map(|e| e.name.clone()).collect(),
            columns,
            names,
            max_lag: cfg.max_lag,
        })
    }

    /// Layout of [`DagConfig::standard`] with generic column names.
    pub fn standard(n_exposures: usize, n_covariates: usize) -> Self {
        let exp: Vec<String> = (1..=n_exposures).map(|e| format!("A{e}")).collect();
        let cov: Vec<String> = (1..=n_covariates).map(|j| format!("C{j}")).collect();
        let exp: Vec<&str> = exp.iter().map(|s| s.as_str()).collect();
        let cov: Vec<&str> = cov.iter().map(|s| s.as_str()).collect();
        let schema = Schema::new(&exp, "Y", &cov);
        SystemLayout::from_dag(&DagConfig::standard(n_exposures, n_covariates), &schema)
            .expect("standard DAG is valid")
    }

    pub fn n_models(&self) -> usize {
        1 + self.n_covariates
    }

    pub fn response(&self, model: usize) -> Role {
        if model == 0 {
            Role::Outcome
        } else {
            Role::Covariate(model - 1)
        }
    }

    pub fn find(&self, model: usize, role: Role, lag: usize) -> Option<usize> {
        let target = Column::Lagged(Parent::new(role, lag));
        self.columns[model].iter().position(|c| *c == target)
    }

    pub fn find_name(&self, model: usize, name: &str) -> Option<usize> {
        self.names[model].iter().position(|n| n == name)
    }

    /// True when every column belongs to the single-lag DAG, so the
    /// closed-form expressions apply.
    pub fn is_standard(&self) -> bool {
        let allowed = |model: usize, p: &Parent| match (model, p.role, p.lag) {
            (0, Role::Outcome, 1) | (0, Role::Covariate(_), 1) => true,
            (0, Role::Exposure(_), 0 | 1) => true,
            (_, Role::Covariate(_), 1) if model > 0 => true,
            (_, Role::Exposure(_), 0) | (_, Role::Outcome, 0) if model > 0 => true,
            _ => false,
        };
        self.columns.iter().enumerate().all(|(m, cols)| {
            cols.iter().all(|c| match c {
                Column::Intercept => true,
                Column::Lagged(p) => allowed(m, p),
            })
        })
    }

    pub fn check_exposure(&self, exposure: usize) -> Result<()> {
        if exposure >= self.n_exposures {
            return Err(Error::InvalidArgument(format!(
                "exposure index {exposure} out of range ({} exposures)",
                self.n_exposures
            )));
        }
        Ok(())
    }
}

/// Read access to per-time coefficients.
pub trait CoefSource {
    fn coef(&self, model: usize, t: usize, col: usize) -> f64;
}

/// Time-indexed coefficient means (and optionally sampling covariances)
/// for every equation of the system, plus observation noise variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientFrame {
    pub layout: SystemLayout,
    pub first_time: usize,
    pub last_time: usize,
    /// `means[model][t - first_time]`
    pub means: Vec<Vec<DVector<f64>>>,
    pub covs: Option<Vec<Vec<DMatrix<f64>>>>,
    pub obs_variance: Vec<f64>,
}

impl CoefficientFrame {
    /// Aligns the outcome fit with one fit per covariate on their common
    /// time range.
    pub fn from_fits(layout: SystemLayout, outcome: &FittedSsm, covariates: &[FittedSsm]) -> Result<Self> {
        if covariates.len() != layout.n_covariates {
            return Err(Error::WidthMismatch(format!(
                "{} covariate fits for {} covariates",
                covariates.len(),
                layout.n_covariates
            )));
        }
        let fits: Vec<&FittedSsm> = std::iter::once(outcome).chain(covariates).collect();
        for (m, f) in fits.iter().enumerate() {
            if f.spec.response != layout.response(m) || f.spec.columns != layout.columns[m] {
                return Err(Error::InvalidSpec(format!(
                    "fit {m} does not match the {:?} equation of the layout",
                    layout.response(m)
                )));
            }
        }
        let first = fits.iter().map(|f| f.first_time).max().unwrap_or(1);
        let last = fits.iter().map(|f| f.last_time).min().unwrap_or(0);
        if last < first {
            return Err(Error::InvalidSpec("fitted time ranges do not overlap".into()));
        }
        let mut means = Vec::new();
        let mut covs = Vec::new();
        for f in &fits {
            let mut mm = Vec::with_capacity(last - first + 1);
            let mut cc = Vec::with_capacity(last - first + 1);
            for t in first..=last {
                mm.push(f.mean_at(t).expect("t within fit range"));
                cc.push(f.cov_at(t).expect("t within fit range"));
            }
            means.push(mm);
            covs.push(cc);
        }
        Ok(CoefficientFrame {
            layout,
            first_time: first,
            last_time: last,
            means,
            covs: Some(covs),
            obs_variance: fits.iter().map(|f| f.hyper.obs_variance).collect(),
        })
    }

    /// Frame whose coefficients are `f(model, t)` with no sampling
    /// uncertainty and unit noise variances.
    pub fn from_fn(
        layout: SystemLayout,
        first_time: usize,
        last_time: usize,
        mut f: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        if last_time < first_time || first_time == 0 {
            return Err(Error::InvalidArgument("empty frame range".into()));
        }
        let mut means = Vec::new();
        for m in 0..layout.n_models() {
            let d = layout.columns[m].len();
            let mut v = Vec::new();
            for t in first_time..=last_time {
                let c = f(m, t);
                if c.len() != d {
                    return Err(Error::WidthMismatch(format!(
                        "model {m} has {d} columns, got {} coefficients",
                        c.len()
                    )));
                }
                v.push(DVector::from_vec(c));
            }
            means.push(v);
        }
        Ok(CoefficientFrame {
            obs_variance: vec![1.0; layout.n_models()],
            layout,
            first_time,
            last_time,
            means,
            covs: None,
        })
    }

    /// Time-constant frame.
    pub fn constant(layout: SystemLayout, first_time: usize, last_time: usize, coefs: &[Vec<f64>]) -> Result<Self> {
        if coefs.len() != layout.n_models() {
            return Err(Error::WidthMismatch(format!(
                "{} coefficient vectors for {} equations",
                coefs.len(),
                layout.n_models()
            )));
        }
        Self::from_fn(layout, first_time, last_time, |m, _| coefs[m].clone())
    }

    /// Attaches the same sampling covariance to every time of `model`.
    pub fn with_constant_cov(mut self, model: usize, cov: DMatrix<f64>) -> Self {
        let n = self.last_time - self.first_time + 1;
        let covs = self.covs.get_or_insert_with(|| {
            self.means
                .iter()
                .map(|m| vec![DMatrix::zeros(m[0].len(), m[0].len()); n])
                .collect()
        });
        covs[model] = vec![cov; n];
        self
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.first_time..=self.last_time).contains(&t)
    }

    pub fn check_range(&self, lo: usize, hi: usize) -> Result<()> {
        for t in [lo, hi] {
            if !self.contains(t) {
                return Err(Error::OutOfRange {
                    t: t as i64,
                    start: self.first_time,
                    end: self.last_time,
                });
            }
        }
        Ok(())
    }

    pub fn coefficients(&self, model: usize, t: usize) -> &DVector<f64> {
        &self.means[model][t - self.first_time]
    }

    pub fn named(&self, model: usize, name: &str, t: usize) -> Option<f64> {
        let i = self.layout.find_name(model, name)?;
        self.contains(t).then(|| self.coefficients(model, t)[i])
    }

    pub fn cov(&self, model: usize, t: usize) -> Option<&DMatrix<f64>> {
        self.covs.as_ref().map(|c| &c[model][t - self.first_time])
    }

    /// Draws every equation's coefficients at times `lo..=hi` independently
    /// from their Gaussian sampling distributions.
    pub fn sample<R: Rng + ?Sized>(&self, lo: usize, hi: usize, factors: &WindowFactors, rng: &mut R) -> SampledWindow {
        let mut means = Vec::with_capacity(self.layout.n_models());
        for m in 0..self.layout.n_models() {
            let mut v = Vec::with_capacity(hi - lo + 1);
            for t in lo..=hi {
                let mu = self.coefficients(m, t);
                match &factors.factors[m][t - lo] {
                    Some(l) => {
                        let z = DVector::from_fn(mu.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                        v.push(mu + l * z);
                    }
                    None => v.push(mu.clone()),
                }
            }
            means.push(v);
        }
        SampledWindow { lo, means }
    }

    /// Square-root factors of the sampling covariances over `lo..=hi`.
    pub fn factors(&self, lo: usize, hi: usize) -> WindowFactors {
        let factors = (0..self.layout.n_models())
            .map(|m| (lo..=hi).map(|t| self.cov(m, t).and_then(cov_factor)).collect())
            .collect();
        WindowFactors { factors }
    }
}

impl CoefSource for CoefficientFrame {
    fn coef(&self, model: usize, t: usize, col: usize) -> f64 {
        self.means[model][t - self.first_time][col]
    }
}

/// Per-equation, per-time square-root covariance factors; `None` marks a
/// zero covariance.
#[derive(Debug, Clone)]
pub struct WindowFactors {
    factors: Vec<Vec<Option<DMatrix<f64>>>>,
}

/// Lower-triangular factor `L` with `L L' = cov`. Falls back to a
/// symmetric square root with negative eigenvalues clamped to zero.
pub fn cov_factor(cov: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if cov.iter().all(|&x| x == 0.0) {
        return None;
    }
    let sym = (cov + cov.transpose()) * 0.5;
    if let Some(ch) = sym.clone().cholesky() {
        return Some(ch.l());
    }
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().any(|&l| l < 0.0) {
        log::warn!("sampling covariance is not positive semidefinite; clamping negative eigenvalues");
    }
    let root = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()));
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// Coefficients drawn for a window of times.
#[derive(Debug, Clone)]
pub struct SampledWindow {
    lo: usize,
    means: Vec<Vec<DVector<f64>>>,
}

impl CoefSource for SampledWindow {
    fn coef(&self, model: usize, t: usize, col: usize) -> f64 {
        self.means[model][t - self.lo][col]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_layout_names() {
        let l = SystemLayout::standard(1, 1);
        assert_eq!(l.names[0], ["beta0", "rho", "beta1", "beta2", "beta_c1"]);
        assert_eq!(l.names[1], ["mu0", "rho_c1", "mu1", "mu2"]);
        assert!(l.is_standard());
    }

    #[test]
    fn factor_reproduces_covariance() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let l = cov_factor(&c).unwrap();
        assert!((&l * l.transpose() - &c).abs().max() < 1e-12);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = cov_factor(&singular).unwrap();
        assert!((&l * l.transpose() - &singular).abs().max() < 1e-10);
        assert!(cov_factor(&DMatrix::zeros(2, 2)).is_none());
    }
}
