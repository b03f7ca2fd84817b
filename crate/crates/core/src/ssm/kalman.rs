//! Kalman filter and smoother for scalar-response dynamic linear models
//! with identity state transition.
//!
//! State: `theta_t = theta_{t-1} + w_t`, `w_t ~ N(0, W)`.
//! Observation: `y_t = F_t theta_t + v_t`, `v_t ~ N(0, V)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Noise and prior of a dynamic linear model with `G_t = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub obs_variance: f64,
    pub state_noise: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub c0: DMatrix<f64>,
}

impl StateSpaceModel {
    pub fn dim(&self) -> usize {
        self.m0.len()
    }

    fn validate(&self, design: &[DVector<f64>], n_obs: usize) -> Result<()> {
        let d = self.dim();
        if self.c0.shape() != (d, d) || self.state_noise.shape() != (d, d) {
            return Err(Error::InvalidSpec("prior/state-noise dimension mismatch".into()));
        }
        if design.len() != n_obs {
            return Err(Error::InvalidSpec(format!(
                "{} design rows for {} observations",
                design.len(),
                n_obs
            )));
        }
        if let Some(f) = design.iter().find(|f| f.len() != d) {
            return Err(Error::InvalidSpec(format!(
                "design row of length {} for state dimension {d}",
                f.len()
            )));
        }
        if !(self.obs_variance > 0.0) || !self.obs_variance.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "observation variance must be positive, got {}",
                self.obs_variance
            )));
        }
        check_psd(&self.c0, "initial covariance")?;
        check_psd(&self.state_noise, "state noise")?;
        Ok(())
    }
}

fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::InvalidSpec(format!("{what} is not symmetric")));
    }
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&l| l < -1e-8 * scale) {
        return Err(Error::InvalidSpec(format!("{what} is not positive semidefinite")));
    }
    Ok(())
}

/// Filtered quantities at one time step.
#[derive(Debug, Clone)]
pub struct FilterStep {
    /// `m_t`
    pub mean: DVector<f64>,
    /// `C_t`
    pub cov: DMatrix<f64>,
    /// `R_t`
    pub predicted_cov: DMatrix<f64>,
    /// `Q_t`; `None` for prediction-only steps.
    pub innovation_var: Option<f64>,
    pub innovation: Option<f64>,
    pub loglik: f64,
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub steps: Vec<FilterStep>,
    pub loglik: f64,
    pub m0: DVector<f64>,
    pub c0: DMatrix<f64>,
}

/// Smoothed moments; `initial_*` are the moments of `theta_0 | y_{1:T}`.
#[derive(Debug, Clone)]
pub struct SmoothedState {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    pub initial_mean: DVector<f64>,
    pub initial_cov: DMatrix<f64>,
    /// Number of smoothing steps that needed a pseudo-inverse.
    pub pseudo_inverse_steps: usize,
}

/// Runs the filter, keeping every step. `None` observations are
/// prediction-only steps with zero likelihood contribution.
pub fn kalman_filter(model: &StateSpaceModel, ys: &[Option<f64>], design: &[DVector<f64>]) -> Result<FilterOutput> {
    model.validate(design, ys.len())?;
    let d = model.dim();
    let mut m = model.m0.clone();
    let mut c = model.c0.clone();
    let mut rf = DVector::zeros(d);
    let mut steps = Vec::with_capacity(ys.len());
    let mut total = 0.0;
    for (t, (y, f)) in ys.iter().zip(design).enumerate() {
        let r = &c + &model.state_noise;
        let step = match y {
            None => FilterStep {
                mean: m.clone(),
                cov: sanitize_cov(r.clone()),
                predicted_cov: sanitize_cov(r),
                innovation_var: None,
                innovation: None,
                loglik: 0.0,
            },
            Some(y) => {
                r.mul_to(f, &mut rf);
                let q = f.dot(&rf) + model.obs_variance;
                if !(q > 0.0) || !q.is_finite() {
                    return Err(Error::Numerical(format!(
                        "innovation variance {q} at step {}",
                        t + 1
                    )));
                }
                let e = y - f.dot(&m);
                m.axpy(e / q, &rf, 1.0);
                let mut cn = r.clone();
                cn.ger(-1.0 / q, &rf, &rf, 1.0);
                let ll = -0.5 * (LN_2PI + q.ln() + e * e / q);
                total += ll;
                FilterStep {
                    mean: m.clone(),
                    cov: sanitize_cov(cn),
                    predicted_cov: sanitize_cov(r),
                    innovation_var: Some(q),
                    innovation: Some(e),
                    loglik: ll,
                }
            }
        };
        c = step.cov.clone();
        steps.push(step);
    }
    Ok(FilterOutput {
        steps,
        loglik: total,
        m0: model.m0.clone(),
        c0: model.c0.clone(),
    })
}

/// Log-likelihood only, without storing per-step output. Used inside the
/// hyperparameter optimizer; assumes a diagonal state-noise matrix.
pub fn filter_loglik(model: &StateSpaceModel, ys: &[Option<f64>], design: &[DVector<f64>]) -> Result<f64> {
    let d = model.dim();
    if design.len() != ys.len() || model.c0.nrows() != d {
        return Err(Error::InvalidSpec("dimension mismatch".into()));
    }
    let wdiag = model.state_noise.diagonal();
    let mut m = model.m0.clone();
    let mut c = model.c0.clone();
    let mut rf = DVector::zeros(d);
    let mut total = 0.0;
    for (t, (y, f)) in ys.iter().zip(design).enumerate() {
        for i in 0..d {
            c[(i, i)] += wdiag[i];
        }
        let Some(y) = y else { continue };
        c.mul_to(f, &mut rf);
        let q = f.dot(&rf) + model.obs_variance;
        if !(q > 0.0) || !q.is_finite() {
            return Err(Error::Numerical(format!("innovation variance {q} at step {}", t + 1)));
        }
        let e = y - f.dot(&m);
        m.axpy(e / q, &rf, 1.0);
        c.ger(-1.0 / q, &rf, &rf, 1.0);
        total += -0.5 * (LN_2PI + q.ln() + e * e / q);
    }
    Ok(total)
}

/// Backward smoothing pass; terminal condition `(s_T, S_T) = (m_T, C_T)`.
pub fn kalman_smooth(filter: &FilterOutput) -> Result<SmoothedState> {
    let n = filter.steps.len();
    let mut means = vec![DVector::zeros(0); n];
    let mut covs = vec![DMatrix::zeros(0, 0); n];
    let mut pseudo = 0;
    if n == 0 {
        return Ok(SmoothedState {
            means,
            covs,
            initial_mean: filter.m0.clone(),
            initial_cov: filter.c0.clone(),
            pseudo_inverse_steps: 0,
        });
    }
    means[n - 1] = filter.steps[n - 1].mean.clone();
    covs[n - 1] = filter.steps[n - 1].cov.clone();
    let mut s_next = means[n - 1].clone();
    let mut cov_next = covs[n - 1].clone();
    // t runs over n-2, ..., 0 for filtered steps and finally the prior.
    for t in (0..n).rev() {
        let (m_t, c_t) = if t == 0 {
            (&filter.m0, &filter.c0)
        } else {
            (&filter.steps[t - 1].mean, &filter.steps[t - 1].cov)
        };
        let r_next = &filter.steps[t].predicted_cov;
        let (r_inv, used_pinv) = sym_inverse(r_next)?;
        if used_pinv {
            pseudo += 1;
            log::warn!("smoother: predicted covariance singular at step {}, using pseudo-inverse", t + 1);
        }
        let gain = c_t * &r_inv;
        let s = m_t + &gain * (&s_next - m_t);
        let cov = c_t - &gain * (r_next - &cov_next) * gain.transpose();
        let cov = sanitize_cov(cov);
        if t == 0 {
            return Ok(SmoothedState {
                means,
                covs,
                initial_mean: s,
                initial_cov: cov,
                pseudo_inverse_steps: pseudo,
            });
        }
        means[t - 1] = s.clone();
        covs[t - 1] = cov.clone();
        s_next = s;
        cov_next = cov;
    }
    unreachable!("loop returns at t = 0")
}

/// Two-filter smoother in information form: the forward predictive
/// information at `t` is combined with the backward information carried by
/// `y_{t:T}`. No predicted covariance is ever inverted, which keeps the
/// early steps under a diffuse prior accurate. Requires a positive
/// definite `C0`.
pub fn information_smooth(model: &StateSpaceModel, ys: &[Option<f64>], design: &[DVector<f64>]) -> Result<SmoothedState> {
    model.validate(design, ys.len())?;
    let n = ys.len();
    let prior = model
        .c0
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidSpec("information smoother needs a positive definite C0".into()))?;
    let omega0 = prior.inverse();
    let eta0 = prior.solve(&model.m0);
    let noise = NoiseFactor::new(&model.state_noise);
    let v = model.obs_variance;

    let mut omega_pred = Vec::with_capacity(n);
    let mut eta_pred = Vec::with_capacity(n);
    let (mut omega, mut eta) = (omega0.clone(), eta0.clone());
    for (y, f) in ys.iter().zip(design) {
        noise.predict(&mut omega, &mut eta);
        omega_pred.push(omega.clone());
        eta_pred.push(eta.clone());
        if let Some(y) = y {
            omega.ger(1.0 / v, f, f, 1.0);
            eta.axpy(y / v, f, 1.0);
        }
    }

    let d = model.dim();
    let mut means = vec![DVector::zeros(0); n];
    let mut covs = vec![DMatrix::zeros(0, 0); n];
    let mut pseudo = 0;
    let mut lam = DMatrix::zeros(d, d);
    let mut lvec = DVector::zeros(d);
    let mut combine = |info: DMatrix<f64>, vec: DVector<f64>| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (cov, used) = sym_inverse(&info)?;
        pseudo += used as usize;
        let mean = &cov * vec;
        Ok((mean, sanitize_cov(cov)))
    };
    for t in (0..n).rev() {
        if t + 1 < n {
            noise.predict(&mut lam, &mut lvec);
        }
        if let Some(y) = ys[t] {
            lam.ger(1.0 / v, &design[t], &design[t], 1.0);
            lvec.axpy(y / v, &design[t], 1.0);
        }
        let (m, c) = combine(&omega_pred[t] + &lam, &eta_pred[t] + &lvec)?;
        means[t] = m;
        covs[t] = c;
    }
    if n > 0 {
        noise.predict(&mut lam, &mut lvec);
    }
    let (initial_mean, initial_cov) = combine(&omega0 + &lam, &eta0 + &lvec)?;
    if pseudo > 0 {
        log::warn!("information smoother: {pseudo} singular precision matrices, used pseudo-inverses");
    }
    Ok(SmoothedState {
        means,
        covs,
        initial_mean,
        initial_cov,
        pseudo_inverse_steps: pseudo,
    })
}

/// `W = U D U'` over the positive eigenvalues of the state noise.
struct NoiseFactor {
    u: DMatrix<f64>,
    d_inv: DVector<f64>,
}

impl NoiseFactor {
    fn new(w: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(w.clone());
        let keep: Vec<usize> = (0..w.nrows()).filter(|&i| eig.eigenvalues[i] > 0.0).collect();
        let u = DMatrix::from_fn(w.nrows(), keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]);
        let d_inv = DVector::from_iterator(keep.len(), keep.iter().map(|&i| 1.0 / eig.eigenvalues[i]));
        NoiseFactor { u, d_inv }
    }

    /// Information after adding the state noise:
    /// `(I + P W)^{-1} P` and `(I + P W)^{-1} p` by Woodbury.
    fn predict(&self, info: &mut DMatrix<f64>, vec: &mut DVector<f64>) {
        if self.d_inv.is_empty() {
            return;
        }
        let pu = &*info * &self.u;
        let mut inner = self.u.transpose() * &pu;
        for (i, x) in self.d_inv.iter().enumerate() {
            inner[(i, i)] += x;
        }
        let Some(ch) = inner.cholesky() else {
            return;
        };
        let ut_vec = self.u.transpose() * &*vec;
        *vec -= &pu * ch.solve(&ut_vec);
        *info -= &pu * ch.solve(&pu.transpose());
        *info = 0.5 * (&*info + info.transpose());
    }
}

/// Inverse of a symmetric PSD matrix: Cholesky when possible, otherwise the
/// symmetric pseudo-inverse with eigenvalue tolerance `1e-12 * trace`.
pub fn sym_inverse(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let tol = 1e-12 * m.trace().abs();
    if let Some(ch) = m.clone().cholesky() {
        let diag_min = ch.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b * b));
        if diag_min > tol {
            return Ok((ch.inverse(), false));
        }
    }
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue in pseudo-inverse".into()));
    }
    let inv_vals = eig.eigenvalues.map(|l| if l > tol { 1.0 / l } else { 0.0 });
    let v = &eig.eigenvectors;
    Ok((v * DMatrix::from_diagonal(&inv_vals) * v.transpose(), true))
}

/// Symmetrizes and clamps eigenvalues below zero.
pub fn sanitize_cov(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
    if (0..n).any(|i| m[(i, i)] < 0.0) || !has_nonneg_pivots(&m) {
        let eig = SymmetricEigen::new(m.clone());
        if eig.eigenvalues.iter().any(|&l| l < 0.0) {
            let vals = eig.eigenvalues.map(|l| l.max(0.0));
            let v = &eig.eigenvectors;
            m = v * DMatrix::from_diagonal(&vals) * v.transpose();
            m = 0.5 * (&m + m.transpose());
        }
    }
    m
}

/// Cheap PSD screen: a successful Cholesky of the matrix plus a tiny ridge.
fn has_nonneg_pivots(m: &DMatrix<f64>) -> bool {
    let ridge = 1e-300_f64.max(f64::EPSILON * m.diagonal().amax() * 1e-6);
    let mut shifted = m.clone();
    for i in 0..m.nrows() {
        shifted[(i, i)] += ridge;
    }
    shifted.cholesky().is_some()
}
