use std::cell::Cell;

use argmin::core::{CostFunction, Executor, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kalman::{filter_loglik, information_smooth, kalman_filter, kalman_smooth, StateSpaceModel};
use super::{
    CoefficientTrack, FitData, FittedSsm, Hyperparams, Regime, SmoothedPoint, SsmSpec, StateLayout,
};
use crate::error::{Error, Result};
use crate::series::Series;

/// Usable rows required per free variance hyperparameter.
const ROWS_PER_HYPERPARAM: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Multi-start count (at least 3 is recommended).
    pub starts: usize,
    /// Objective evaluations allowed per start.
    pub max_evals: usize,
    /// Simplex standard-deviation tolerance on the log-variance scale.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            starts: 3,
            max_evals: 500,
            tolerance: 1e-7,
        }
    }
}

struct Objective<'a> {
    spec: &'a SsmSpec,
    layout: &'a StateLayout,
    rw_cols: &'a [usize],
    m0: &'a DVector<f64>,
    c0: &'a DMatrix<f64>,
    ys: &'a [Option<f64>],
    design: &'a [DVector<f64>],
    evals: Cell<usize>,
}

impl Objective<'_> {
    fn model(&self, x: &[f64]) -> StateSpaceModel {
        let mut w = vec![0.0; self.spec.dim()];
        for (k, &j) in self.rw_cols.iter().enumerate() {
            w[j] = x[k + 1].exp();
        }
        StateSpaceModel {
            obs_variance: x[0].exp(),
            state_noise: self.layout.state_noise(self.spec, &w),
            m0: self.m0.clone(),
            c0: self.c0.clone(),
        }
    }
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        self.evals.set(self.evals.get() + 1);
        if x.iter().any(|v| !v.is_finite() || v.abs() > 60.0) {
            return Ok(1e300);
        }
        Ok(match filter_loglik(&self.model(x), self.ys, self.design) {
            Ok(ll) if ll.is_finite() => -ll,
            _ => 1e300,
        })
    }
}

/// Maximum-likelihood fit of the variance hyperparameters (observation
/// variance and random-walk state variances, optimized on the log scale by
/// multi-start Nelder-Mead), followed by filtering and smoothing at the
/// optimum.
pub fn fit_mle(spec: &SsmSpec, series: &Series, opts: &FitOptions) -> Result<FittedSsm> {
    let data = FitData::collect(spec, series)?;
    spec.validate(data.last_time)?;
    let n_used = data.n_used();
    let n_hyper = spec.n_hyperparams();
    if n_used < ROWS_PER_HYPERPARAM * n_hyper {
        return Err(Error::InsufficientData(format!(
            "{n_used} usable rows for {n_hyper} variance parameters"
        )));
    }
    let used: Vec<f64> = data.ys.iter().flatten().copied().collect();
    let mean = used.iter().sum::<f64>() / used.len() as f64;
    let var = used.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (used.len() - 1).max(1) as f64;
    if !(var > 0.0) {
        return Err(Error::Degenerate(format!(
            "response {:?} is constant over the usable rows",
            spec.response
        )));
    }

    let layout = StateLayout::new(spec);
    let (m0, c0) = layout.prior(spec);
    let design = data.augmented_design(&layout);
    let rw_cols: Vec<usize> = spec
        .regimes
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(r, Regime::RandomWalk))
        .map(|(j, _)| j)
        .collect();
    let objective = Objective {
        spec,
        layout: &layout,
        rw_cols: &rw_cols,
        m0: &m0,
        c0: &c0,
        ys: &data.ys,
        design: &design,
        evals: Cell::new(0),
    };

    let ln_var = var.ln();
    let v_offsets = [0.0, -1.5, 1.0, -3.0, 2.0];
    let w_offsets = [-4.0, -7.0, -2.0, -9.0, -5.5];
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut converged = false;
    let starts = opts.starts.max(1);
    for s in 0..starts {
        let mut x0 = vec![ln_var + v_offsets[s % v_offsets.len()] - (s / v_offsets.len()) as f64];
        x0.extend(rw_cols.iter().map(|_| ln_var + w_offsets[s % w_offsets.len()]));
        let (x, cost, ok) = nelder_mead(&objective, x0, opts)?;
        converged |= ok;
        if best.as_ref().is_none_or(|(_, c)| cost < *c) {
            best = Some((x, cost));
        }
    }
    let (x, cost) = best.expect("at least one start");
    if cost >= 1e299 {
        return Err(Error::Numerical("log-likelihood not finite at any start".into()));
    }
    if !converged {
        log::warn!("fit of {:?}: optimizer budget exhausted before convergence", spec.response);
    }
    let model = objective.model(&x);
    let mut state_variances = vec![0.0; spec.dim()];
    for (k, &j) in rw_cols.iter().enumerate() {
        state_variances[j] = x[k + 1].exp();
    }
    let hyper = Hyperparams {
        obs_variance: x[0].exp(),
        state_variances,
    };
    finish(spec, &data, &layout, &model, hyper, n_used, converged, objective.evals.get())
}

fn nelder_mead(objective: &Objective<'_>, x0: Vec<f64>, opts: &FitOptions) -> Result<(Vec<f64>, f64, bool)> {
    let n = x0.len();
    let mut simplex = vec![x0.clone()];
    for i in 0..n {
        let mut v = x0.clone();
        v[i] += 1.0;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(opts.tolerance)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let before = objective.evals.get();
    // Each iteration costs one or two evaluations outside shrink steps.
    let iters = (opts.max_evals.saturating_sub(n + 1) as u64).max(1);
    let res = Executor::new(Obj(objective), solver)
        .configure(|state| state.max_iters(iters))
        .run()
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let state = res.state();
    let x = state
        .best_param
        .clone()
        .ok_or_else(|| Error::Numerical("optimizer returned no parameters".into()))?;
    let ok = matches!(
        state.termination_status,
        TerminationStatus::Terminated(TerminationReason::SolverConverged)
    ) && objective.evals.get() - before <= opts.max_evals;
    Ok((x, state.best_cost, ok))
}

/// Borrowing adaptor so the executor does not take the objective by value.
struct Obj<'a, 'b>(&'a Objective<'b>);

impl CostFunction for Obj<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        self.0.cost(x)
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    spec: &SsmSpec,
    data: &FitData,
    layout: &StateLayout,
    model: &StateSpaceModel,
    hyper: Hyperparams,
    n_used: usize,
    converged: bool,
    evaluations: usize,
) -> Result<FittedSsm> {
    let design = data.augmented_design(layout);
    let loglik = filter_loglik(model, &data.ys, &design)?;
    let smoothed = if model.c0.clone().cholesky().is_some() {
        information_smooth(model, &data.ys, &design)?
    } else {
        kalman_smooth(&kalman_filter(model, &data.ys, &design)?)?
    };
    let loglik_profile = profile_loglik(model, &data.ys, &design, &smoothed.initial_mean)?;

    let d = spec.dim();
    let mut points = Vec::with_capacity(smoothed.means.len());
    let mut tracks: Vec<CoefficientTrack> = spec
        .names
        .iter()
        .zip(&spec.regimes)
        .map(|(n, r)| CoefficientTrack {
            name: n.clone(),
            regime: r.clone(),
            mean: Vec::new(),
            se: Vec::new(),
        })
        .collect();
    for (i, (m, c)) in smoothed.means.iter().zip(&smoothed.covs).enumerate() {
        let t = data.first_time + i;
        let idx: Vec<usize> = (0..d).map(|j| layout.active(j, t)).collect();
        let mean: Vec<f64> = idx.iter().map(|&e| m[e]).collect();
        let cov: Vec<Vec<f64>> = idx.iter().map(|&a| idx.iter().map(|&b| c[(a, b)]).collect()).collect();
        for (j, track) in tracks.iter_mut().enumerate() {
            track.mean.push(mean[j]);
            track.se.push(cov[j][j].max(0.0).sqrt());
        }
        points.push(SmoothedPoint { t, mean, cov });
    }
    let prediction_only = data
        .ys
        .iter()
        .enumerate()
        .filter(|(_, y)| y.is_none())
        .map(|(i, _)| data.first_time + i)
        .collect::<Vec<_>>();
    if !prediction_only.is_empty() {
        log::info!(
            "fit of {:?}: {} prediction-only steps",
            spec.response,
            prediction_only.len()
        );
    }
    let n_params = layout.n_elements + spec.n_hyperparams() + spec.n_change_points();
    let bic = -2.0 * loglik_profile + n_params as f64 * (n_used as f64).ln();
    Ok(FittedSsm {
        spec: spec.clone(),
        first_time: data.first_time,
        last_time: data.last_time,
        hyper,
        loglik,
        loglik_profile,
        bic,
        n_params,
        n_used,
        converged,
        evaluations,
        prediction_only,
        smoothed: points,
        coefficients: tracks,
    })
}

/// `log p(y | theta_0 = s_0)`: the filter started from a point mass at
/// the smoothed initial mean.
fn profile_loglik(model: &StateSpaceModel, ys: &[Option<f64>], design: &[DVector<f64>], s0: &DVector<f64>) -> Result<f64> {
    let d = model.dim();
    let point = StateSpaceModel {
        obs_variance: model.obs_variance,
        state_noise: model.state_noise.clone(),
        m0: s0.clone(),
        c0: DMatrix::zeros(d, d),
    };
    filter_loglik(&point, ys, design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{DagConfig, Role, Schema};

    fn constant_series() -> Series {
        let n = 40;
        Series::new(
            Schema::new(&["A"], "Y", &[]),
            vec![(0..n).map(|i| Some((i % 2) as f64)).collect()],
            vec![Some(3.0); n],
            vec![],
            None,
        )
        .unwrap()
    }

    #[test]
    fn constant_response_is_degenerate() {
        let s = constant_series();
        let spec = SsmSpec::from_dag(&DagConfig::standard(1, 0), Role::Outcome, s.schema()).unwrap();
        let err = fit_mle(&spec, &s, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn too_few_rows() {
        let n = 12;
        let s = Series::new(
            Schema::new(&["A"], "Y", &[]),
            vec![(0..n).map(|i| Some((i % 2) as f64)).collect()],
            (0..n).map(|i| Some((i as f64).sin())).collect(),
            vec![],
            None,
        )
        .unwrap();
        let spec = SsmSpec::from_dag(&DagConfig::standard(1, 0), Role::Outcome, s.schema())
            .unwrap()
            .with_regime("beta0", Regime::RandomWalk)
            .unwrap();
        let err = fit_mle(&spec, &s, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }
}
