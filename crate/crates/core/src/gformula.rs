//! Monte Carlo g-formula: counterfactual outcomes simulated forward from the
//! fitted outcome and covariate equations under fixed exposure sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{pattern_string, PositivityReport};
use crate::error::{Error, Result};
use crate::estimands::{CoefSource, CoefficientFrame, Estimand, EstimandPoint, SystemLayout};
use crate::series::{Role, Series};
use crate::ssm::Column;
use crate::stats::{mean, percentile_interval, sd};

pub const MAX_RECOMMEND_HORIZON: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Stochastic,
    /// Noise terms set to zero; one path per draw.
    MeanPath,
}

/// Treatment of exposure columns other than the intervened one inside the
/// strategy window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OtherExposures {
    /// Held at zero.
    #[default]
    Reference,
    /// Held at their observed values.
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    /// Parameter draws `K`.
    pub draws: usize,
    /// Trajectory copies `B` per draw.
    pub copies: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseMode,
    #[serde(default)]
    pub others: OtherExposures,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Draw coefficients from their sampling distributions; when false, or
    /// when the frame carries no covariances, every draw uses the means.
    #[serde(default = "yes")]
    pub sample_coefficients: bool,
}

fn default_level() -> f64 {
    0.90
}

fn yes() -> bool {
    true
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            draws: 1000,
            copies: 200,
            seed: 0,
            noise: NoiseMode::Stochastic,
            others: OtherExposures::Reference,
            level: 0.90,
            sample_coefficients: true,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 || self.copies == 0 {
            return Err(Error::InvalidArgument("K and B must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!("level {} not in (0, 1)", self.level)));
        }
        Ok(())
    }

    fn effective_copies(&self) -> usize {
        match self.noise {
            NoiseMode::MeanPath => 1,
            NoiseMode::Stochastic => self.copies,
        }
    }
}

/// Observed values preceding a strategy window: index `i` of each vector
/// holds time `start - 1 - i`. `window_exposures[i][e]` holds exposure `e`
/// at `start + i` (NaN when unobserved) for conditional runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub exposures: Vec<Vec<f64>>,
    pub outcome: Vec<f64>,
    pub covariates: Vec<Vec<f64>>,
    #[serde(default)]
    pub window_exposures: Vec<Vec<f64>>,
}

impl HistoryRecord {
    /// History before `start` taken from the series, `depth` steps back.
    /// Values never used by any equation may be missing and are stored as NaN.
    pub fn observed(series: &Series, start: usize, depth: usize, window: usize) -> Result<HistoryRecord> {
        if start <= depth {
            return Err(Error::InsufficientData(format!(
                "window starting at t={start} needs {depth} earlier time points"
            )));
        }
        if start + window - 1 > series.len() {
            return Err(Error::OutOfRange {
                t: (start + window - 1) as i64,
                start: 1,
                end: series.len(),
            });
        }
        let get = |role: Role, t: usize| series.value(role, t).unwrap_or(f64::NAN);
        let back = |i: usize| start - 1 - i;
        Ok(HistoryRecord {
            exposures: (0..depth)
                .map(|i| (0..series.n_exposures()).map(|e| get(Role::Exposure(e), back(i))).collect())
                .collect(),
            outcome: (0..depth).map(|i| get(Role::Outcome, back(i))).collect(),
            covariates: (0..depth)
                .map(|i| (0..series.n_covariates()).map(|j| get(Role::Covariate(j), back(i))).collect())
                .collect(),
            window_exposures: (0..window)
                .map(|i| (0..series.n_exposures()).map(|e| get(Role::Exposure(e), start + i)).collect())
                .collect(),
        })
    }

    fn before(&self, role: Role, i: usize) -> f64 {
        match role {
            Role::Exposure(e) => self.exposures.get(i).and_then(|r| r.get(e)),
            Role::Outcome => self.outcome.get(i),
            Role::Covariate(j) => self.covariates.get(i).and_then(|r| r.get(j)),
        }
        .copied()
        .unwrap_or(f64::NAN)
    }

    /// Element-wise mean of several records.
    pub fn average(records: &[HistoryRecord]) -> Option<HistoryRecord> {
        let first = records.first()?;
        let n = records.len() as f64;
        let avg2 = |f: &dyn Fn(&HistoryRecord) -> &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            f(first)
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    (0..row.len())
                        .map(|j| records.iter().map(|r| f(r)[i][j]).sum::<f64>() / n)
                        .collect()
                })
                .collect()
        };
        Some(HistoryRecord {
            exposures: avg2(&|r| &r.exposures),
            outcome: (0..first.outcome.len())
                .map(|i| records.iter().map(|r| r.outcome[i]).sum::<f64>() / n)
                .collect(),
            covariates: avg2(&|r| &r.covariates),
            window_exposures: avg2(&|r| &r.window_exposures),
        })
    }
}

/// Quantity recorded from each simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Target {
    /// Outcome at the window's last time.
    Final,
    /// Sum of outcomes over the window.
    Sum,
    /// Outcome change at the last time through the exposure's direct
    /// arrows only, every mediator pinned at its reference-strategy value.
    DirectFinal,
    /// As `DirectFinal`, summed over every time of the window.
    DirectSum,
}

/// Forward simulator for one window `start..start+len`.
struct Simulator<'a> {
    layout: &'a SystemLayout,
    exposure: usize,
    start: usize,
    len: usize,
    others: OtherExposures,
    sd: Vec<f64>,
    intercept: Vec<Option<usize>>,
    lagged: Vec<Vec<(usize, Role, usize)>>,
}

impl<'a> Simulator<'a> {
    fn new(frame: &'a CoefficientFrame, exposure: usize, start: usize, len: usize, others: OtherExposures) -> Self {
        let layout = &frame.layout;
        Simulator {
            layout,
            exposure,
            start,
            len,
            others,
            sd: frame.obs_variance.iter().map(|v| v.max(0.0).sqrt()).collect(),
            intercept: layout
                .columns
                .iter()
                .map(|c| c.iter().position(|c| *c == Column::Intercept))
                .collect(),
            lagged: layout
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
                .collect(),
        }
    }

    /// Checks that every value an equation reads is available.
    fn check(&self, hist: &HistoryRecord) -> Result<()> {
        for s in 0..self.len {
            for model in &self.lagged {
                for &(_, role, lag) in model {
                    if lag <= s {
                        if let Role::Exposure(e) = role {
                            if e != self.exposure && self.others == OtherExposures::Conditional {
                                let v = hist.window_exposures.get(s - lag).and_then(|r| r.get(e));
                                if !v.is_some_and(|v| v.is_finite()) {
                                    return Err(Error::MissingValue {
                                        what: format!("exposure {} inside the strategy window", e + 1),
                                        t: self.start + s - lag,
                                    });
                                }
                            }
                        }
                        continue;
                    }
                    if !hist.before(role, lag - s - 1).is_finite() {
                        return Err(Error::MissingValue {
                            what: format!("{role:?} in the seed history"),
                            t: (self.start + s).saturating_sub(lag),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn value(&self, role: Role, s: usize, lag: usize, strategy: &[f64], hist: &HistoryRecord, y: &[f64], c: &[f64]) -> f64 {
        if lag > s {
            return hist.before(role, lag - s - 1);
        }
        let i = s - lag;
        let n_cov = self.layout.n_covariates;
        match role {
            Role::Exposure(e) if e == self.exposure => strategy[i],
            Role::Exposure(e) => match self.others {
                OtherExposures::Reference => 0.0,
                OtherExposures::Conditional => hist.window_exposures[i][e],
            },
            Role::Outcome => y[i],
            Role::Covariate(j) => c[i * n_cov + j],
        }
    }

    /// Mean of model `m` at window step `s`.
    #[allow(clippy::too_many_arguments)]
    fn linear<S: CoefSource + ?Sized>(
        &self,
        src: &S,
        m: usize,
        s: usize,
        strategy: &[f64],
        hist: &HistoryRecord,
        y: &[f64],
        c: &[f64],
    ) -> f64 {
        let t = self.start + s;
        let mut acc = self.intercept[m].map_or(0.0, |i| src.coef(m, t, i));
        for &(i, role, lag) in &self.lagged[m] {
            acc += src.coef(m, t, i) * self.value(role, s, lag, strategy, hist, y, c);
        }
        acc
    }

    /// Simulates one path; `z` holds standard normals laid out step-major
    /// (outcome, then covariates), or is empty for a noiseless path.
    fn run<S: CoefSource + ?Sized>(&self, src: &S, strategy: &[f64], hist: &HistoryRecord, z: &[f64], y: &mut Vec<f64>, c: &mut Vec<f64>) {
        let n_cov = self.layout.n_covariates;
        y.clear();
        c.clear();
        for s in 0..self.len {
            let noise = |k: usize| if z.is_empty() { 0.0 } else { z[s * (1 + n_cov) + k] };
            let ys = self.linear(src, 0, s, strategy, hist, y, c) + self.sd[0] * noise(0);
            y.push(ys);
            for j in 0..n_cov {
                let cs = self.linear(src, j + 1, s, strategy, hist, y, c) + self.sd[j + 1] * noise(1 + j);
                c.push(cs);
            }
        }
    }

    /// Direct-arrow contrast of `a` against `base` at window steps `from..len`.
    fn direct<S: CoefSource + ?Sized>(&self, src: &S, a: &[f64], base: &[f64], from: usize) -> f64 {
        let mut total = 0.0;
        for s in from..self.len {
            for &(i, role, lag) in &self.lagged[0] {
                if role == Role::Exposure(self.exposure) && lag <= s {
                    total += src.coef(0, self.start + s, i) * (a[s - lag] - base[s - lag]);
                }
            }
        }
        total
    }
}

fn stream_rng(seed: u64, k: usize, b: u64, tag: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(k as u64).to_le_bytes());
    key[16..24].copy_from_slice(&b.to_le_bytes());
    key[24..].copy_from_slice(&tag.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

const COEF_STREAM: u64 = u64::MAX;
const TAG_NOISE: u64 = 0;
const TAG_HISTORY: u64 = 1;

/// Per-draw means of the target under strategy `a` and of its difference
/// from `base`, using the same coefficient draw and noise for both.
struct DrawSummary {
    a: Vec<f64>,
    diff: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn simulate_pair(
    frame: &CoefficientFrame,
    exposure: usize,
    start: usize,
    a: &[f64],
    base: &[f64],
    histories: &[HistoryRecord],
    target: Target,
    cfg: &McConfig,
) -> Result<DrawSummary> {
    cfg.validate()?;
    frame.layout.check_exposure(exposure)?;
    let len = a.len();
    let end = start + len - 1;
    frame.check_range(start, end)?;
    let sim = Simulator::new(frame, exposure, start, len, cfg.others);
    for h in histories {
        sim.check(h)?;
    }
    if histories.is_empty() {
        return Err(Error::NoCandidates("no admissible history windows".into()));
    }
    let sampling = cfg.sample_coefficients && frame.covs.is_some();
    let factors = sampling.then(|| frame.factors(start, end));
    let copies = cfg.effective_copies();
    let n_noise = len * frame.layout.n_models();
    let per_draw: Vec<(f64, f64)> = (0..cfg.draws)
        .into_par_iter()
        .map(|k| {
            let window;
            let src: &dyn CoefSource = match &factors {
                Some(f) => {
                    let mut rng = stream_rng(cfg.seed, k, COEF_STREAM, 0);
                    window = frame.sample(start, end, f, &mut rng);
                    &window
                }
                None => frame,
            };
            let (mut ya, mut ca, mut yb, mut cb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            let mut z = vec![0.0; if cfg.noise == NoiseMode::Stochastic { n_noise } else { 0 }];
            let (mut sa, mut sd_) = (0.0, 0.0);
            for b in 0..copies {
                let hist = if histories.len() == 1 {
                    &histories[0]
                } else {
                    let mut rng = stream_rng(cfg.seed, k, b as u64, TAG_HISTORY);
                    &histories[rng.random_range(0..histories.len())]
                };
                if !z.is_empty() {
                    let mut rng = stream_rng(cfg.seed, k, b as u64, TAG_NOISE);
                    for v in z.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                }
                sim.run(src, base, hist, &z, &mut yb, &mut cb);
                let (va, vb) = match target {
                    Target::Final | Target::Sum => {
                        sim.run(src, a, hist, &z, &mut ya, &mut ca);
                        if target == Target::Final {
                            (ya[len - 1], yb[len - 1])
                        } else {
                            (ya.iter().sum(), yb.iter().sum())
                        }
                    }
                    Target::DirectFinal => {
                        let vb = yb[len - 1];
                        (vb + sim.direct(src, a, base, len - 1), vb)
                    }
                    Target::DirectSum => {
                        let vb: f64 = yb.iter().sum();
                        (vb + sim.direct(src, a, base, 0), vb)
                    }
                };
                sa += va;
                sd_ += va - vb;
            }
            let n = copies as f64;
            (sa / n, sd_ / n)
        })
        .collect();
    Ok(DrawSummary {
        a: per_draw.iter().map(|p| p.0).collect(),
        diff: per_draw.iter().map(|p| p.1).collect(),
    })
}

/// Where the conditioning history came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryDescriptor {
    pub source: String,
    pub window_start: usize,
    pub window_end: usize,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub t: usize,
    pub strategy: Vec<u8>,
    pub per_draw: Vec<f64>,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    /// Standard deviation of the per-draw means over `sqrt(K)`.
    pub mc_se: f64,
    pub history: HistoryDescriptor,
    pub config: McConfig,
}

fn check_strategy(strategy: &[u8]) -> Result<Vec<f64>> {
    if strategy.is_empty() {
        return Err(Error::InvalidStrategy("empty exposure sequence".into()));
    }
    if let Some(a) = strategy.iter().find(|&&a| a > 1) {
        return Err(Error::InvalidStrategy(format!("entry {a} is not 0 or 1")));
    }
    Ok(strategy.iter().map(|&a| a as f64).collect())
}

fn window_start(t: usize, len: usize) -> Result<usize> {
    (t + 1)
        .checked_sub(len)
        .filter(|&s| s >= 1)
        .ok_or_else(|| Error::InvalidStrategy(format!("strategy of length {len} starts before t=1")))
}

/// `E[Y_t(a_{(t-q):t}) | H]` with the history taken from the series.
pub fn simulate_counterfactual(
    frame: &CoefficientFrame,
    series: &Series,
    exposure: usize,
    t: usize,
    strategy: &[u8],
    cfg: &McConfig,
) -> Result<CounterfactualResult> {
    let a = check_strategy(strategy)?;
    let start = window_start(t, a.len())?;
    let hist = HistoryRecord::observed(series, start, frame.layout.max_lag, a.len())?;
    let s = simulate_pair(frame, exposure, start, &a, &a, &[hist], Target::Final, cfg)?;
    Ok(summarize(t, strategy, s.a, "observed", start, 1, cfg))
}

fn summarize(t: usize, strategy: &[u8], per_draw: Vec<f64>, source: &str, start: usize, records: usize, cfg: &McConfig) -> CounterfactualResult {
    let m = mean(&per_draw);
    let mut sorted = per_draw.clone();
    let (lo, hi) = percentile_interval(&mut sorted, cfg.level);
    CounterfactualResult {
        t,
        strategy: strategy.to_vec(),
        mc_se: sd(&per_draw) / (per_draw.len() as f64).sqrt(),
        mean: m,
        lower: lo.min(m),
        upper: hi.max(m),
        per_draw,
        history: HistoryDescriptor {
            source: source.into(),
            window_start: start,
            window_end: t,
            records,
        },
        config: cfg.clone(),
    }
}

/// Monte Carlo contrast between two strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub t: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub mc_se: f64,
    pub draws: usize,
    pub copies: usize,
    pub seed: u64,
}

impl McEstimate {
    pub fn point(&self) -> EstimandPoint {
        EstimandPoint {
            t: self.t,
            estimate: self.estimate,
            lower: self.lower,
            upper: self.upper,
            truncation_lag: None,
        }
    }
}

fn contrast(t: usize, diff: Vec<f64>, cfg: &McConfig) -> McEstimate {
    let m = mean(&diff);
    let se = sd(&diff) / (diff.len() as f64).sqrt();
    let mut d = diff;
    let (lo, hi) = percentile_interval(&mut d, cfg.level);
    McEstimate {
        t,
        estimate: m,
        lower: lo.min(m),
        upper: hi.max(m),
        mc_se: se,
        draws: cfg.draws,
        copies: cfg.effective_copies(),
        seed: cfg.seed,
    }
}

/// `E[Y_t(a) - Y_t(a') | H]` over per-draw differences.
pub fn mc_contrast(
    frame: &CoefficientFrame,
    series: &Series,
    exposure: usize,
    t: usize,
    a: &[u8],
    a_prime: &[u8],
    cfg: &McConfig,
) -> Result<McEstimate> {
    if a.len() != a_prime.len() {
        return Err(Error::InvalidStrategy("strategies differ in length".into()));
    }
    let va = check_strategy(a)?;
    let vb = check_strategy(a_prime)?;
    let start = window_start(t, va.len())?;
    let hist = HistoryRecord::observed(series, start, frame.layout.max_lag, va.len())?;
    let s = simulate_pair(frame, exposure, start, &va, &vb, &[hist], Target::Final, cfg)?;
    Ok(contrast(t, s.diff, cfg))
}

/// Any estimand by simulation, conditional on the observed history.
pub fn mc_estimand(
    frame: &CoefficientFrame,
    series: &Series,
    exposure: usize,
    estimand: &Estimand,
    t: usize,
    cfg: &McConfig,
) -> Result<McEstimate> {
    estimand.validate()?;
    let unit = |len: usize, at: usize| -> Vec<f64> { (0..len).map(|i| if i == at { 1.0 } else { 0.0 }).collect() };
    let (start, a, target) = match estimand {
        Estimand::Ce => (t, vec![1.0], Target::Final),
        Estimand::Le { q } => (window_start(t, q + 1)?, unit(q + 1, 0), Target::Final),
        Estimand::Te { q } => (window_start(t, q + 1)?, vec![1.0; q + 1], Target::Final),
        Estimand::Ge { strategy } => (window_start(t, strategy.len())?, check_strategy(strategy)?, Target::Final),
        Estimand::Lde { q } => (window_start(t, q + 1)?, unit(q + 1, 0), Target::DirectFinal),
        Estimand::CumDe => {
            let span = (0..=frame.layout.max_lag)
                .filter(|&l| frame.layout.find(0, Role::Exposure(exposure), l).is_some())
                .max()
                .unwrap_or(0);
            (t, unit(span + 1, 0), Target::DirectSum)
        }
        Estimand::CumOe { horizon, .. } => (t, unit(horizon + 1, 0), Target::Sum),
    };
    let base = vec![0.0; a.len()];
    let hist = HistoryRecord::observed(series, start, frame.layout.max_lag, a.len())?;
    let s = simulate_pair(frame, exposure, start, &a, &base, &[hist], target, cfg)?;
    Ok(contrast(t, s.diff, cfg))
}

/// Distribution of histories to marginalize over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "records")]
pub enum HistorySource {
    /// Every admissible window of the observed series.
    Empirical,
    Supplied(Vec<HistoryRecord>),
}

/// Every observed history usable for a window of length `len`.
pub fn empirical_histories(frame: &CoefficientFrame, series: &Series, exposure: usize, len: usize, others: OtherExposures) -> Vec<HistoryRecord> {
    let probe = Simulator::new(frame, exposure, 1, len, others);
    let depth = frame.layout.max_lag;
    (depth + 1..=series.len() + 1 - len)
        .filter_map(|start| HistoryRecord::observed(series, start, depth, len).ok())
        .filter(|h| probe.check(h).is_ok())
        .collect()
}

/// `E[Y_t(a)]` averaged over a history distribution, with the coefficients
/// of the window ending at `t`.
pub fn marginalized_outcome(
    frame: &CoefficientFrame,
    series: &Series,
    exposure: usize,
    t: usize,
    strategy: &[u8],
    source: &HistorySource,
    cfg: &McConfig,
) -> Result<CounterfactualResult> {
    let a = check_strategy(strategy)?;
    let start = window_start(t, a.len())?;
    let (histories, label) = match source {
        HistorySource::Empirical => (empirical_histories(frame, series, exposure, a.len(), cfg.others), "empirical"),
        HistorySource::Supplied(h) => (h.clone(), "supplied"),
    };
    if histories.is_empty() {
        return Err(Error::NoCandidates("no admissible history windows".into()));
    }
    let s = simulate_pair(frame, exposure, start, &a, &a, &histories, Target::Final, cfg)?;
    Ok(summarize(t, strategy, s.a, label, start, histories.len(), cfg))
}

/// Binary sequences of length `len` with at most `max_active` ones, by
/// number of ones and then lexicographically.
pub fn enumerate_strategies(len: usize, max_active: usize) -> Vec<Vec<u8>> {
    let mut all: Vec<Vec<u8>> = (0u32..1 << len)
        .filter(|b| b.count_ones() as usize <= max_active)
        .map(|b| (0..len).map(|i| (b >> (len - 1 - i) & 1) as u8).collect())
        .collect();
    all.sort_by(|x, y| active(x).cmp(&active(y)).then_with(|| x.cmp(y)));
    all
}

fn active(s: &[u8]) -> usize {
    s.iter().filter(|&&a| a == 1).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedStrategy {
    pub rank: usize,
    pub strategy: Vec<u8>,
    pub pattern: String,
    pub active: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub mc_se: f64,
    pub observed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub t: usize,
    pub horizon: usize,
    pub max_active: usize,
    pub candidates: usize,
    pub excluded: Vec<String>,
    pub ranked: Vec<RankedStrategy>,
}

/// Ranks every positivity-supported strategy over `t-q..=t` with at most
/// `max_active` exposures by its simulated effect against the all-zeros
/// strategy, most negative first.
#[allow(clippy::too_many_arguments)]
pub fn recommend_strategy(
    frame: &CoefficientFrame,
    series: &Series,
    exposure: usize,
    t: usize,
    q: usize,
    max_active: usize,
    positivity: &PositivityReport,
    cfg: &McConfig,
) -> Result<Recommendation> {
    if q > MAX_RECOMMEND_HORIZON {
        return Err(Error::InvalidArgument(format!(
            "horizon {q} exceeds the enumeration bound {MAX_RECOMMEND_HORIZON}"
        )));
    }
    if positivity.duration(q + 1).is_none() {
        return Err(Error::InvalidArgument(format!(
            "positivity report does not cover duration {}",
            q + 1
        )));
    }
    let candidates = enumerate_strategies(q + 1, max_active);
    let n = candidates.len();
    let (kept, dropped): (Vec<_>, Vec<_>) = candidates
        .into_iter()
        .partition(|s| positivity.is_observed(s) == Some(true));
    if kept.is_empty() {
        return Err(Error::NoCandidates(format!(
            "all {n} strategies are unobserved in the positivity report"
        )));
    }
    let zeros = vec![0u8; q + 1];
    let mut ranked = kept
        .iter()
        .map(|s| {
            let est = mc_contrast(frame, series, exposure, t, s, &zeros, cfg)?;
            Ok(RankedStrategy {
                rank: 0,
                strategy: s.clone(),
                pattern: pattern_string(s),
                active: active(s),
                estimate: est.estimate,
                lower: est.lower,
                upper: est.upper,
                mc_se: est.mc_se,
                observed: true,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|x, y| {
        x.estimate
            .total_cmp(&y.estimate)
            .then(x.active.cmp(&y.active))
            .then_with(|| x.strategy.cmp(&y.strategy))
    });
    for (i, r) in ranked.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(Recommendation {
        t,
        horizon: q,
        max_active,
        candidates: n,
        excluded: dropped.iter().map(|s| pattern_string(s)).collect(),
        ranked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_counts() {
        let all = enumerate_strategies(7, 3);
        assert_eq!(all.len(), 1 + 7 + 21 + 35);
        assert_eq!(all.iter().filter(|s| active(s) == 3).count(), 35);
        assert_eq!(all[0], vec![0; 7]);
        assert_eq!(all[1], vec![0, 0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn stream_rng_is_counter_based() {
        let a: f64 = stream_rng(3, 5, 7, 0).sample(StandardNormal);
        let b: f64 = stream_rng(3, 5, 7, 0).sample(StandardNormal);
        let c: f64 = stream_rng(3, 5, 8, 0).sample(StandardNormal);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
