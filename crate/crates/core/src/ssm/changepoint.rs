//! Exhaustive grid search for the change points of one periodic-stable
//! coefficient, scored by BIC.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_mle, FitOptions};
use super::{FittedSsm, Regime, SsmSpec};
use crate::error::{Error, Result};
use crate::series::Series;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChangePointOptions {
    pub max_points: usize,
    pub stride: usize,
    pub min_segment: usize,
    #[serde(default)]
    pub fit: FitOptions,
}

impl Default for ChangePointOptions {
    fn default() -> Self {
        ChangePointOptions {
            max_points: 1,
            stride: 7,
            min_segment: 30,
            fit: FitOptions::default(),
        }
    }
}

/// Estimate of the searched coefficient over one segment `start..=end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEstimate {
    pub segment: usize,
    pub start: usize,
    pub end: usize,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChangePointResult {
    pub coefficient: String,
    pub change_points: Vec<usize>,
    pub bic: f64,
    pub segments: Vec<SegmentEstimate>,
    pub candidates_evaluated: usize,
    pub fitted: FittedSsm,
}

/// Candidate positions: multiples of `stride` counted from the first fitted
/// time, leaving at least `min_segment` time points on either side.
pub fn candidate_grid(first: usize, last: usize, stride: usize, min_segment: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let base = first - 1;
    (1..)
        .map(|k| base + k * stride)
        .take_while(|&tau| tau <= last)
        .filter(|&tau| tau + 1 >= first + min_segment && last - tau >= min_segment)
        .collect()
}

/// All increasing subsets of `grid` with at most `max_points` elements whose
/// consecutive gaps are at least `min_segment`, in order of size and then
/// lexicographic position.
pub fn combinations(grid: &[usize], max_points: usize, min_segment: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..max_points {
        let mut next = Vec::new();
        for combo in &frontier {
            for &tau in grid {
                let ok = combo.last().is_none_or(|&prev| tau >= prev + min_segment);
                if ok {
                    let mut c = combo.clone();
                    c.push(tau);
                    next.push(c);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Selects the change points of `coefficient` minimizing BIC over every
/// admissible configuration with up to `max_points` points. Ties go to
/// fewer points, then earlier positions.
pub fn infer_change_points(
    spec: &SsmSpec,
    series: &Series,
    coefficient: &str,
    opts: &ChangePointOptions,
) -> Result<ChangePointResult> {
    let j = spec
        .index_of(coefficient)
        .ok_or_else(|| Error::InvalidSpec(format!("no coefficient named `{coefficient}`")))?;
    if !matches!(spec.regimes[j], Regime::PeriodicStable { .. }) {
        return Err(Error::InvalidSpec(format!(
            "`{coefficient}` must be declared periodic-stable for a change-point search"
        )));
    }
    if opts.max_points > 3 {
        return Err(Error::InvalidArgument("max_points must be at most 3".into()));
    }
    let first = spec.first_time();
    let last = series.len();
    if opts.max_points > 0 && last + 1 < first + 2 * opts.min_segment {
        return Err(Error::InsufficientData(format!(
            "{} fitted time points cannot hold two segments of length {}",
            (last + 1).saturating_sub(first),
            opts.min_segment
        )));
    }
    let grid = candidate_grid(first, last, opts.stride, opts.min_segment);
    let combos = combinations(&grid, opts.max_points, opts.min_segment);

    let scored: Vec<(Vec<usize>, Result<FittedSsm>)> = combos
        .into_par_iter()
        .map(|cps| {
            let mut s = spec.clone();
            s.regimes[j] = Regime::PeriodicStable {
                change_points: cps.clone(),
            };
            let fit = fit_mle(&s, series, &opts.fit);
            (cps, fit)
        })
        .collect();
    let evaluated = scored.len();
    let mut best: Option<(Vec<usize>, FittedSsm)> = None;
    let mut first_err = None;
    for (cps, fit) in scored {
        match fit {
            Ok(f) => {
                let better = match &best {
                    None => true,
                    Some((bcps, bf)) => {
                        (f.bic, cps.len(), &cps) < (bf.bic, bcps.len(), bcps)
                            && f.bic.partial_cmp(&bf.bic).is_some()
                    }
                };
                if better {
                    best = Some((cps, f));
                }
            }
            Err(e) => {
                log::debug!("change-point candidate {cps:?} failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    let Some((change_points, fitted)) = best else {
        return Err(first_err.unwrap_or_else(|| Error::NoCandidates("no change-point configuration".into())));
    };

    let mut bounds = vec![fitted.first_time];
    bounds.extend(change_points.iter().map(|c| c + 1));
    let segments = bounds
        .iter()
        .enumerate()
        .map(|(k, &start)| {
            let end = bounds.get(k + 1).map_or(fitted.last_time, |b| b - 1);
            let (estimate, se) = fitted.estimate(coefficient, start).unwrap_or((f64::NAN, f64::NAN));
            SegmentEstimate {
                segment: k + 1,
                start,
                end,
                estimate,
                se,
            }
        })
        .collect();
    Ok(ChangePointResult {
        coefficient: coefficient.to_string(),
        change_points,
        bic: fitted.bic,
        segments,
        candidates_evaluated: evaluated,
        fitted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_respects_min_segment() {
        let g = candidate_grid(2, 600, 7, 30);
        assert_eq!(g.first(), Some(&36));
        assert!(g.iter().all(|&t| t >= 31 && 600 - t >= 30));
        assert!(g.contains(&302));
    }

    #[test]
    fn combination_counts() {
        let grid: Vec<usize> = (1..=5).map(|k| k * 10).collect();
        let c = combinations(&grid, 2, 20);
        // empty + 5 singles + pairs with gap >= 20
        let pairs = grid
            .iter()
            .flat_map(|a| grid.iter().map(move |b| (*a, *b)))
            .filter(|(a, b)| b >= &(a + 20))
            .count();
        assert_eq!(c.len(), 1 + 5 + pairs);
        assert_eq!(c[0], Vec::<usize>::new());
        assert!(c.windows(2).all(|w| w[0].len() <= w[1].len()));
    }
}
