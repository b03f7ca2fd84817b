//! Analytic estimands for the single-lag DAG. Coefficients absent from the
//! layout count as zero.

use super::frame::{CoefSource, SystemLayout};
use crate::series::Role;

pub(crate) struct Standard<'a, S: ?Sized> {
    src: &'a S,
    b1: Option<usize>,
    b2: Option<usize>,
    rho: Option<usize>,
    bc: Vec<Option<usize>>,
    mu1: Vec<Option<usize>>,
    mu2: Vec<Option<usize>>,
    rhoc: Vec<Vec<Option<usize>>>,
}

impl<'a, S: CoefSource + ?Sized> Standard<'a, S> {
    pub fn new(layout: &SystemLayout, src: &'a S, exposure: usize) -> Self {
        let n = layout.n_covariates;
        Standard {
            src,
            b1: layout.find(0, Role::Exposure(exposure), 0),
            b2: layout.find(0, Role::Exposure(exposure), 1),
            rho: layout.find(0, Role::Outcome, 1),
            bc: (0..n).map(|j| layout.find(0, Role::Covariate(j), 1)).collect(),
            mu1: (0..n).map(|j| layout.find(j + 1, Role::Exposure(exposure), 0)).collect(),
            mu2: (0..n).map(|j| layout.find(j + 1, Role::Outcome, 0)).collect(),
            rhoc: (0..n)
                .map(|j| (0..n).map(|k| layout.find(j + 1, Role::Covariate(k), 1)).collect())
                .collect(),
        }
    }

    fn get(&self, model: usize, t: usize, col: Option<usize>) -> f64 {
        col.map_or(0.0, |c| self.src.coef(model, t, c))
    }

    pub fn b1(&self, t: usize) -> f64 {
        self.get(0, t, self.b1)
    }

    pub fn b2(&self, t: usize) -> f64 {
        self.get(0, t, self.b2)
    }

    fn rho(&self, t: usize) -> f64 {
        self.get(0, t, self.rho)
    }

    fn bc(&self, t: usize) -> Vec<f64> {
        self.bc.iter().map(|&c| self.get(0, t, c)).collect()
    }

    fn mu1(&self, t: usize) -> Vec<f64> {
        self.mu1.iter().enumerate().map(|(j, &c)| self.get(j + 1, t, c)).collect()
    }

    fn mu2(&self, t: usize) -> Vec<f64> {
        self.mu2.iter().enumerate().map(|(j, &c)| self.get(j + 1, t, c)).collect()
    }

    /// `(bc_t)' rhoc_s` as a row over covariates.
    fn bc_rhoc(&self, bc: &[f64], s: usize) -> Vec<f64> {
        let n = bc.len();
        (0..n)
            .map(|k| (0..n).map(|j| bc[j] * self.get(j + 1, s, self.rhoc[j][k])).sum())
            .collect()
    }

    pub fn ce(&self, t: usize) -> f64 {
        self.b1(t)
    }

    pub fn lde(&self, t: usize, q: usize) -> f64 {
        match q {
            0 => self.b1(t),
            1 => self.b2(t),
            _ => 0.0,
        }
    }

    /// `b2_t + bc_t mu1_{t-1} + rho_t b1_{t-1} + bc_t mu2_{t-1} b1_{t-1}`
    pub fn le1(&self, t: usize) -> f64 {
        let bc = self.bc(t);
        let b1 = self.b1(t - 1);
        self.b2(t) + dot(&bc, &self.mu1(t - 1)) + self.rho(t) * b1 + dot(&bc, &self.mu2(t - 1)) * b1
    }

    /// With `g_t = rho_t + bc_t mu2_{t-1}` and
    /// `h_t = g_t bc_{t-1} + bc_t rhoc_{t-1}`:
    /// `g_t (rho_{t-1} b1_{t-2} + b2_{t-1}) + h_t (mu1_{t-2} + mu2_{t-2} b1_{t-2})`.
    pub fn le2(&self, t: usize) -> f64 {
        let bc = self.bc(t);
        let g = self.rho(t) + dot(&bc, &self.mu2(t - 1));
        let bc_prev = self.bc(t - 1);
        let cross = self.bc_rhoc(&bc, t - 1);
        let h: Vec<f64> = bc_prev.iter().zip(&cross).map(|(a, b)| g * a + b).collect();
        let b1 = self.b1(t - 2);
        let u: Vec<f64> = self
            .mu1(t - 2)
            .iter()
            .zip(self.mu2(t - 2))
            .map(|(m1, m2)| m1 + m2 * b1)
            .collect();
        g * (self.rho(t - 1) * b1 + self.b2(t - 1)) + dot(&h, &u)
    }

    pub fn te(&self, t: usize, q: usize) -> Option<f64> {
        match q {
            0 => Some(self.ce(t)),
            1 => Some(self.ce(t) + self.le1(t)),
            2 => Some(self.ce(t) + self.le1(t) + self.le2(t)),
            _ => None,
        }
    }

    pub fn cum_de(&self, t: usize) -> f64 {
        self.b1(t) + self.b2(t + 1)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
