use super::frame::{CoefSource, SystemLayout};
use crate::series::Role;
use crate::ssm::Column;

/// Forward recursion of perturbations through the outcome and covariate
/// equations. Exposure `exposure` is shifted by `values[i]` at time
/// `start + i`; every other exposure and everything before `start` is held
/// fixed, so the intercepts drop out.
pub struct Propagator<'a, S: ?Sized> {
    src: &'a S,
    exposure: usize,
    start: usize,
    values: Vec<f64>,
    lagged: Vec<Vec<(usize, Role, usize)>>,
    dy: Vec<f64>,
    dc: Vec<Vec<f64>>,
}

impl<'a, S: CoefSource + ?Sized> Propagator<'a, S> {
    pub fn new(layout: &SystemLayout, src: &'a S, exposure: usize, start: usize, values: &[f64]) -> Self {
        let lagged = layout
            .columns
            .iter()
            .map(|cols| {
                cols.iter()
                    .enumerate()
                    .filter_map(|(i, c)| match c {
                        Column::Lagged(p) => Some((i, p.role, p.lag)),
                        Column::Intercept => None,
                    })
                    .collect()
            })
            .collect();
        Propagator {
            src,
            exposure,
            start,
            values: values.to_vec(),
            lagged,
            dy: Vec::new(),
            dc: Vec::new(),
        }
    }

    fn delta(&self, role: Role, s: usize, lag: usize) -> f64 {
        let Some(tau) = s.checked_sub(lag) else { return 0.0 };
        let Some(i) = tau.checked_sub(self.start) else { return 0.0 };
        match role {
            Role::Exposure(e) if e == self.exposure => self.values.get(i).copied().unwrap_or(0.0),
            Role::Exposure(_) => 0.0,
            Role::Outcome => self.dy[i],
            Role::Covariate(j) => self.dc[i][j],
        }
    }

    /// Time of the next step.
    pub fn next_time(&self) -> usize {
        self.start + self.dy.len()
    }

    /// Advances one time point and returns the outcome perturbation there.
    pub fn step(&mut self) -> f64 {
        let s = self.next_time();
        let mut y = 0.0;
        for &(i, role, lag) in &self.lagged[0] {
            if lag == 0 && role == Role::Outcome {
                continue;
            }
            let d = self.delta(role, s, lag);
            if d != 0.0 {
                y += self.src.coef(0, s, i) * d;
            }
        }
        self.dy.push(y);
        let n_cov = self.lagged.len() - 1;
        let mut c = vec![0.0; n_cov];
        self.dc.push(Vec::new());
        for (j, cj) in c.iter_mut().enumerate() {
            for &(i, role, lag) in &self.lagged[j + 1] {
                let d = if lag == 0 && matches!(role, Role::Covariate(_)) {
                    0.0
                } else {
                    self.delta(role, s, lag)
                };
                if d != 0.0 {
                    *cj += self.src.coef(j + 1, s, i) * d;
                }
            }
        }
        *self.dc.last_mut().expect("pushed above") = c;
        y
    }

    /// Largest absolute perturbation of the outcome and covariates over the
    /// last `span` steps.
    pub fn recent_magnitude(&self, span: usize) -> f64 {
        let n = self.dy.len();
        let from = n.saturating_sub(span);
        (from..n)
            .flat_map(|i| std::iter::once(self.dy[i]).chain(self.dc[i].iter().copied()))
            .fold(0.0, |a: f64, x| a.max(x.abs()))
    }
}

/// Outcome perturbation at `t` from exposure shifts `pulse` applied at
/// times `t - pulse.len() + 1 ..= t`.
pub fn propagate<S: CoefSource + ?Sized>(layout: &SystemLayout, src: &S, exposure: usize, t: usize, pulse: &[f64]) -> f64 {
    let q = pulse.len().saturating_sub(1);
    let mut p = Propagator::new(layout, src, exposure, t - q, pulse);
    let mut y = 0.0;
    for _ in 0..=q {
        y = p.step();
    }
    y
}

/// `sum_{q=0..h} LE_{t+q}^{(q)}` along the all-zeros continuation, stopped
/// early once both the increment and the propagated state fall below `tol`.
/// Returns the sum and the last lag included.
pub fn cumulative_overall<S: CoefSource + ?Sized>(
    layout: &SystemLayout,
    src: &S,
    exposure: usize,
    t: usize,
    horizon: usize,
    tol: f64,
) -> (f64, usize) {
    let mut p = Propagator::new(layout, src, exposure, t, &[1.0]);
    let mut total = 0.0;
    for q in 0..=horizon {
        let inc = p.step();
        total += inc;
        if q >= 1 && inc.abs() < tol && p.recent_magnitude(layout.max_lag) < tol {
            return (total, q);
        }
    }
    (total, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimands::frame::CoefficientFrame;

    fn ar_frame(rho: f64, b1: f64) -> CoefficientFrame {
        let l = SystemLayout::standard(1, 1);
        CoefficientFrame::constant(l, 2, 200, &[vec![0.3, rho, b1, 0.0, 0.0], vec![0.1, 0.5, 0.0, 0.0]]).unwrap()
    }

    #[test]
    fn pure_ar_lag_effect() {
        let f = ar_frame(0.6, -1.2);
        for q in 0..8 {
            let mut pulse = vec![0.0; q + 1];
            pulse[0] = 1.0;
            let v = propagate(&f.layout, &f, 0, 100, &pulse);
            assert!((v - (-1.2) * 0.6f64.powi(q as i32)).abs() < 1e-14);
        }
    }

    #[test]
    fn geometric_cumulative() {
        let f = ar_frame(0.5, 2.0);
        let (v, lag) = cumulative_overall(&f.layout, &f, 0, 10, 20, 0.0);
        assert_eq!(lag, 20);
        assert!((v - 2.0 * (1.0 - 0.5f64.powi(21)) / 0.5).abs() < 1e-12);
        let (v, lag) = cumulative_overall(&f.layout, &f, 0, 10, 150, 1e-8);
        assert!(lag < 150);
        assert!((v - 4.0).abs() < 1e-7);
    }
}
