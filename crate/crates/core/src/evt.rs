//! Peak-over-threshold tail modelling.
//!
//! Scores above an initial empirical quantile `t` are modelled as a
//! Generalized Pareto excess distribution; the fitted tail yields an extreme
//! threshold `z_q` exceeded with probability below the risk factor `q`:
//!
//! ```text
//! z_q = t + σ/γ · ((q·n / N_t)^(-γ) - 1)        (γ ≠ 0)
//! z_q = t - σ · ln(q·n / N_t)                    (γ = 0)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stage1::AnomalyCandidate;

pub const DEFAULT_RISK_Q: f64 = 0.002;
pub const DEFAULT_INIT_QUANTILE: f64 = 0.98;
pub const DEFAULT_MIN_EXCESSES: usize = 30;

const GRID_POINTS: usize = 64;
const ROOT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvtError {
    #[error("too few excesses: {count} (need {required})")]
    TooFewExcesses { count: usize, required: usize },
    #[error("degenerate sample: all excesses equal")]
    DegenerateSample,
    #[error("insufficient sample: {n} observations (need {required})")]
    InsufficientSample { n: usize, required: usize },
    #[error("excesses must be finite and strictly positive (index {0})")]
    InvalidExcess(usize),
    #[error("sample contains a non-finite value at index {0}")]
    NonFiniteSample(usize),
    #[error("score space mismatch: fit in {fit:?}, requested {requested:?}")]
    ScoreSpaceMismatch { fit: ScoreSpace, requested: ScoreSpace },
    #[error("invalid EVT config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    #[default]
    Grimshaw,
    MomentMatching,
}

/// What the tail model was fitted on. Candidates are scored in the same space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSpace {
    #[default]
    AbsStandardizedResidual,
    AbsRaw,
}

impl ScoreSpace {
    pub fn score(self, candidate: &AnomalyCandidate) -> f64 {
        match self {
            ScoreSpace::AbsStandardizedResidual => candidate.abs_standardized_residual,
            ScoreSpace::AbsRaw => candidate.raw_residual.abs(),
        }
    }
}

/// `risk_q` may also be given as `quantile = 1 - risk_q`; when both are
/// present they must agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvtConfig", into = "RawEvtConfig")]
pub struct EvtConfig {
    pub risk_q: f64,
    pub init_quantile: f64,
    pub min_excesses: usize,
    pub fit_method: FitMethod,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawEvtConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    risk_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quantile: Option<f64>,
    #[serde(default = "default_init_quantile")]
    init_quantile: f64,
    #[serde(default = "default_min_excesses")]
    min_excesses: usize,
    #[serde(default)]
    fit_method: FitMethod,
}

fn default_init_quantile() -> f64 {
    DEFAULT_INIT_QUANTILE
}

fn default_min_excesses() -> usize {
    DEFAULT_MIN_EXCESSES
}

impl TryFrom<RawEvtConfig> for EvtConfig {
    type Error = EvtError;

    fn try_from(raw: RawEvtConfig) -> Result<Self, EvtError> {
        let risk_q = match (raw.risk_q, raw.quantile) {
            (Some(r), Some(q)) if (r - (1.0 - q)).abs() > 1e-12 => {
                return Err(EvtError::InvalidConfig(format!(
                    "risk_q {r} disagrees with quantile {q}"
                )))
            }
            (Some(r), _) => r,
            (None, Some(q)) => 1.0 - q,
            (None, None) => DEFAULT_RISK_Q,
        };
        let config = EvtConfig {
            risk_q,
            init_quantile: raw.init_quantile,
            min_excesses: raw.min_excesses,
            fit_method: raw.fit_method,
        };
        config.validate()?;
        Ok(config)
    }
}

impl From<EvtConfig> for RawEvtConfig {
    fn from(c: EvtConfig) -> Self {
        RawEvtConfig {
            risk_q: Some(c.risk_q),
            quantile: Some(1.0 - c.risk_q),
            init_quantile: c.init_quantile,
            min_excesses: c.min_excesses,
            fit_method: c.fit_method,
        }
    }
}

impl Default for EvtConfig {
    fn default() -> Self {
        Self {
            risk_q: DEFAULT_RISK_Q,
            init_quantile: DEFAULT_INIT_QUANTILE,
            min_excesses: DEFAULT_MIN_EXCESSES,
            fit_method: FitMethod::Grimshaw,
        }
    }
}

impl EvtConfig {
    pub fn with_risk_q(&self, risk_q: f64) -> Self {
        Self { risk_q, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), EvtError> {
        if !(self.risk_q > 0.0 && self.risk_q < 1.0) {
            return Err(EvtError::InvalidConfig(format!("risk_q {} outside (0, 1)", self.risk_q)));
        }
        if !(self.init_quantile > 0.5 && self.init_quantile < 1.0) {
            return Err(EvtError::InvalidConfig(format!(
                "init_quantile {} outside (0.5, 1)",
                self.init_quantile
            )));
        }
        if self.min_excesses < 2 {
            return Err(EvtError::InvalidConfig("min_excesses must be at least 2".into()));
        }
        Ok(())
    }

    /// Smallest sample for which the initial threshold leaves `min_excesses`
    /// points above it.
    pub fn required_sample(&self) -> usize {
        (self.min_excesses as f64 / (1.0 - self.init_quantile) - 1e-9).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub gamma: f64,
    pub sigma: f64,
    /// `None` when a moment fit puts observed excesses outside its support.
    pub log_likelihood: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub gamma: f64,
    #[serde(rename = "sigma")]
    pub sigma_gpd: f64,
    pub t: f64,
    pub n: usize,
    #[serde(rename = "N_t")]
    pub n_t: usize,
    pub z_q: f64,
    pub risk_q: f64,
    #[serde(rename = "method")]
    pub method_used: FitMethod,
    pub log_likelihood: Option<f64>,
    #[serde(default)]
    pub score_space: ScoreSpace,
}

impl GpdFit {
    /// Same tail, different risk factor.
    pub fn at_risk(&self, risk_q: f64) -> GpdFit {
        let mut fit = self.clone();
        fit.risk_q = risk_q;
        fit.z_q = bounded_threshold(self.t, self.sigma_gpd, self.gamma, risk_q, self.n, self.n_t);
        fit
    }

    /// Upper end of the fitted support (`+inf` unless `gamma < 0`).
    pub fn support_end(&self) -> f64 {
        support_end(self.t, self.sigma_gpd, self.gamma)
    }
}

fn support_end(t: f64, sigma: f64, gamma: f64) -> f64 {
    if gamma < 0.0 {
        t - sigma / gamma
    } else {
        f64::INFINITY
    }
}

/// The extreme threshold for a fitted tail. `gamma == 0` uses the analytic
/// exponential limit; small `gamma` goes through `expm1` so the two agree.
pub fn extreme_threshold(t: f64, sigma: f64, gamma: f64, risk_q: f64, n: usize, n_t: usize) -> f64 {
    let log_r = (risk_q * n as f64 / n_t as f64).ln();
    if gamma == 0.0 {
        t - sigma * log_r
    } else {
        t + sigma / gamma * (-gamma * log_r).exp_m1()
    }
}

fn bounded_threshold(t: f64, sigma: f64, gamma: f64, risk_q: f64, n: usize, n_t: usize) -> f64 {
    extreme_threshold(t, sigma, gamma, risk_q, n, n_t).min(support_end(t, sigma, gamma))
}

/// GPD log-likelihood of `excesses`; `None` if any excess is outside the support.
pub fn gpd_log_likelihood(excesses: &[f64], gamma: f64, sigma: f64) -> Option<f64> {
    let n = excesses.len() as f64;
    if gamma == 0.0 {
        return Some(-n * sigma.ln() - excesses.iter().sum::<f64>() / sigma);
    }
    let mut acc = 0.0;
    for y in excesses {
        let z = 1.0 + gamma * y / sigma;
        if z <= 0.0 {
            return None;
        }
        acc += z.ln();
    }
    Some(-n * sigma.ln() - (1.0 + 1.0 / gamma) * acc)
}

/// Fit a GPD to positive excesses.
pub fn fit_gpd(excesses: &[f64], method: FitMethod, min_excesses: usize) -> Result<GpdParams, EvtError> {
    if excesses.len() < min_excesses.max(2) {
        return Err(EvtError::TooFewExcesses {
            count: excesses.len(),
            required: min_excesses.max(2),
        });
    }
    if let Some(i) = excesses.iter().position(|y| !(y.is_finite() && *y > 0.0)) {
        return Err(EvtError::InvalidExcess(i));
    }
    let first = excesses[0];
    if excesses.iter().all(|y| *y == first) {
        return Err(EvtError::DegenerateSample);
    }
    Ok(match method {
        FitMethod::Grimshaw => grimshaw(excesses),
        FitMethod::MomentMatching => moments(excesses),
    })
}

fn moments(y: &[f64]) -> GpdParams {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let ratio = mean * mean / var;
    let gamma = 0.5 * (1.0 - ratio);
    let sigma = 0.5 * mean * (1.0 + ratio);
    GpdParams {
        gamma,
        sigma,
        log_likelihood: gpd_log_likelihood(y, gamma, sigma),
    }
}

/// `(1 + mean ln(1 + xY)) · mean(1 / (1 + xY)) - 1`; stationary points of the
/// profile likelihood in `x = γ/σ` are its roots.
fn grimshaw_w(y: &[f64], x: f64) -> f64 {
    let n = y.len() as f64;
    let (mut u, mut v) = (0.0, 0.0);
    for yi in y {
        let s = x * yi;
        u += s.ln_1p();
        v += 1.0 / (1.0 + s);
    }
    (1.0 + u / n) * (v / n) - 1.0
}

fn bisect(y: &[f64], mut lo: f64, mut hi: f64, mut f_lo: f64) -> f64 {
    while hi - lo > ROOT_TOLERANCE * (1.0 + lo.abs().max(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        let f_mid = grimshaw_w(y, mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn log_grid(from: f64, to: f64) -> Vec<f64> {
    let (a, b) = (from.ln(), to.ln());
    (0..GRID_POINTS)
        .map(|i| (a + (b - a) * i as f64 / (GRID_POINTS - 1) as f64).exp())
        .collect()
}

fn roots_on(y: &[f64], grid: &[f64]) -> Vec<f64> {
    let values: Vec<f64> = grid.iter().map(|x| grimshaw_w(y, *x)).collect();
    let mut roots = Vec::new();
    for i in 1..grid.len() {
        let (f0, f1) = (values[i - 1], values[i]);
        if !(f0.is_finite() && f1.is_finite()) {
            continue;
        }
        if f0 == 0.0 {
            roots.push(grid[i - 1]);
        } else if (f0 < 0.0) != (f1 < 0.0) {
            roots.push(bisect(y, grid[i - 1], grid[i], f0));
        }
    }
    roots
}

fn grimshaw(y: &[f64]) -> GpdParams {
    let n = y.len() as f64;
    let (min, max) = y.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), v| (a.min(*v), b.max(*v)));
    let mean = y.iter().sum::<f64>() / n;

    let pole = 1.0 / max;
    let tiny = 1e-8;
    // Negative side: dense both near 0 and near the pole at -1/max.
    let mut negative: Vec<f64> = log_grid(tiny * pole, 0.5 * pole).into_iter().map(|x| -x).collect();
    negative.extend(log_grid(tiny * pole, 0.5 * pole).into_iter().rev().map(|d| -(pole - d)));
    negative.sort_by(f64::total_cmp);
    negative.dedup();
    let upper = 2.0 * (mean - min) / (min * min);
    let positive = if upper > tiny * pole {
        log_grid(tiny * pole, upper)
    } else {
        Vec::new()
    };

    let mut best = GpdParams {
        gamma: 0.0,
        sigma: mean,
        log_likelihood: gpd_log_likelihood(y, 0.0, mean),
    };
    for x in roots_on(y, &negative).into_iter().chain(roots_on(y, &positive)) {
        let gamma = y.iter().map(|v| (x * v).ln_1p()).sum::<f64>() / n;
        let sigma = gamma / x;
        if !(sigma > 0.0 && sigma.is_finite() && gamma.is_finite()) {
            continue;
        }
        if let Some(ll) = gpd_log_likelihood(y, gamma, sigma) {
            if ll.is_finite() && best.log_likelihood.is_none_or(|b| ll > b) {
                best = GpdParams {
                    gamma,
                    sigma,
                    log_likelihood: Some(ll),
                };
            }
        }
    }
    best
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fit the tail of `sample` (in absolute standardized residual space).
pub fn pot_threshold(sample: &[f64], config: &EvtConfig) -> Result<GpdFit, EvtError> {
    pot_threshold_in(sample, config, ScoreSpace::AbsStandardizedResidual)
}

pub fn pot_threshold_in(sample: &[f64], config: &EvtConfig, space: ScoreSpace) -> Result<GpdFit, EvtError> {
    config.validate()?;
    let required = config.required_sample();
    if sample.len() < required {
        return Err(EvtError::InsufficientSample {
            n: sample.len(),
            required,
        });
    }
    if let Some(i) = sample.iter().position(|v| !v.is_finite()) {
        return Err(EvtError::NonFiniteSample(i));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let t = empirical_quantile(&sorted, config.init_quantile);
    let start = sorted.partition_point(|v| *v <= t);
    let excesses: Vec<f64> = sorted[start..].iter().map(|v| v - t).collect();
    let params = fit_gpd(&excesses, config.fit_method, config.min_excesses)?;
    let (n, n_t) = (sorted.len(), excesses.len());
    Ok(GpdFit {
        gamma: params.gamma,
        sigma_gpd: params.sigma,
        t,
        n,
        n_t,
        z_q: bounded_threshold(t, params.sigma, params.gamma, config.risk_q, n, n_t),
        risk_q: config.risk_q,
        method_used: config.fit_method,
        log_likelihood: params.log_likelihood,
        score_space: space,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    High,
    Low,
}

/// Split candidates by `score > z_q` into (high, low).
pub fn classify(
    candidates: &[AnomalyCandidate],
    fit: &GpdFit,
    score_space: ScoreSpace,
) -> Result<(Vec<AnomalyCandidate>, Vec<AnomalyCandidate>), EvtError> {
    if fit.score_space != score_space {
        return Err(EvtError::ScoreSpaceMismatch {
            fit: fit.score_space,
            requested: score_space,
        });
    }
    Ok(candidates
        .iter()
        .cloned()
        .partition(|c| score_space.score(c) > fit.z_q))
}

pub fn tier_of(score: f64, z_q: f64) -> Tier {
    if score > z_q {
        Tier::High
    } else {
        Tier::Low
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::SeriesKey;
    use crate::stage1::BoundSide;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, StandardNormal};

    fn gpd_sample(gamma: f64, sigma: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                sigma * ((1.0 - u).powf(-gamma) - 1.0) / gamma
            })
            .collect()
    }

    fn candidate(score: f64) -> AnomalyCandidate {
        AnomalyCandidate {
            key: SeriesKey::new("p", "", "r", "m", "", "").unwrap(),
            timestamp: Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap(),
            actual: score,
            mu: 0.0,
            sigma: 1.0,
            raw_residual: score,
            abs_standardized_residual: score,
            bound_violated: BoundSide::Upper,
            confidence: 0.5,
        }
    }

    fn fit_with(t: f64, sigma: f64, gamma: f64, risk_q: f64) -> GpdFit {
        GpdFit {
            gamma,
            sigma_gpd: sigma,
            t,
            n: 10_000,
            n_t: 200,
            z_q: extreme_threshold(t, sigma, gamma, risk_q, 10_000, 200),
            risk_q,
            method_used: FitMethod::Grimshaw,
            log_likelihood: None,
            score_space: ScoreSpace::AbsStandardizedResidual,
        }
    }

    #[test]
    fn threshold_hand_values() {
        let exp = extreme_threshold(10.0, 2.0, 0.0, 0.001, 10_000, 200);
        assert!((exp - (10.0 - 2.0 * 0.05f64.ln())).abs() < 1e-12);
        assert!((exp - 15.991).abs() / 15.991 < 1e-4);
        let heavy = extreme_threshold(10.0, 2.0, 0.5, 0.001, 10_000, 200);
        assert!((heavy - (10.0 + 4.0 * (0.05f64.powf(-0.5) - 1.0))).abs() < 1e-12);
        assert!((heavy - 23.889).abs() / 23.889 < 1e-4);
        for gamma in [-0.4, 0.0, 0.3, 1.2] {
            assert_eq!(extreme_threshold(10.0, 2.0, gamma, 0.02, 10_000, 200), 10.0);
        }
    }

    #[test]
    fn threshold_continuous_at_zero_shape() {
        let limit = extreme_threshold(3.0, 1.5, 0.0, 1e-4, 50_000, 1000);
        for eps in [1e-6, -1e-6] {
            let near = extreme_threshold(3.0, 1.5, eps, 1e-4, 50_000, 1000);
            assert!((near - limit).abs() < 1e-4, "{near} vs {limit}");
        }
    }

    #[test]
    fn exponential_excesses_recover_zero_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let exp = Exp::new(0.5).unwrap();
        let y: Vec<f64> = (0..10_000).map(|_| exp.sample(&mut rng)).collect();
        let p = fit_gpd(&y, FitMethod::Grimshaw, 30).unwrap();
        assert!(p.gamma.abs() <= 0.05, "{p:?}");
        assert!((1.9..=2.1).contains(&p.sigma), "{p:?}");
    }

    #[test]
    fn gpd_excesses_recover_parameters() {
        let y = gpd_sample(0.2, 1.5, 10_000, 17);
        let p = fit_gpd(&y, FitMethod::Grimshaw, 30).unwrap();
        assert!((0.1..=0.3).contains(&p.gamma), "{p:?}");
        assert!((1.275..=1.725).contains(&p.sigma), "{p:?}");
    }

    #[test]
    fn grimshaw_beats_or_matches_moments_in_likelihood() {
        let y = gpd_sample(0.2, 1.5, 10_000, 3);
        let g = fit_gpd(&y, FitMethod::Grimshaw, 30).unwrap();
        let m = fit_gpd(&y, FitMethod::MomentMatching, 30).unwrap();
        assert!(g.log_likelihood.unwrap() >= m.log_likelihood.unwrap() - 1e-9);
    }

    #[test]
    fn methods_agree_on_shape() {
        for seed in 0..5 {
            let y = gpd_sample(0.2, 1.5, 10_000, 100 + seed);
            let g = fit_gpd(&y, FitMethod::Grimshaw, 30).unwrap();
            let m = fit_gpd(&y, FitMethod::MomentMatching, 30).unwrap();
            assert!((g.gamma - m.gamma).abs() <= 0.15, "{g:?} {m:?}");
        }
    }

    #[test]
    fn short_or_degenerate_excesses_are_rejected() {
        assert_eq!(fit_gpd(&[1.0; 100], FitMethod::Grimshaw, 30), Err(EvtError::DegenerateSample));
        assert!(matches!(
            fit_gpd(&[1.0, 2.0], FitMethod::Grimshaw, 30),
            Err(EvtError::TooFewExcesses { count: 2, required: 30 })
        ));
        assert!(matches!(fit_gpd(&[1.0, -1.0, 2.0], FitMethod::Grimshaw, 2), Err(EvtError::InvalidExcess(1))));
    }

    #[test]
    fn required_sample_for_defaults() {
        let c = EvtConfig::default();
        assert_eq!(c.required_sample(), 1500);
        let sample: Vec<f64> = (0..1499).map(f64::from).collect();
        assert_eq!(
            pot_threshold(&sample, &c),
            Err(EvtError::InsufficientSample { n: 1499, required: 1500 })
        );
        let sample: Vec<f64> = (0..1500).map(f64::from).collect();
        let fit = pot_threshold(&sample, &c).unwrap();
        assert!(fit.n_t >= 30 && fit.n == 1500);
    }

    #[test]
    fn gaussian_tail_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let sample: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let fit = pot_threshold(&sample, &EvtConfig::default().with_risk_q(1e-3)).unwrap();
        let rate = sample.iter().filter(|x| **x > fit.z_q).count() as f64 / sample.len() as f64;
        assert!((2e-4..=5e-3).contains(&rate), "rate {rate}, {fit:?}");
    }

    #[test]
    fn classify_splits_on_threshold() {
        let fit = fit_with(3.0, 1.0, 0.0, 0.001).at_risk(0.001);
        let fit = GpdFit { z_q: 6.0, ..fit };
        let cands: Vec<_> = [4.5, 5.9, 6.1, 9.0].into_iter().map(candidate).collect();
        let (high, low) = classify(&cands, &fit, ScoreSpace::AbsStandardizedResidual).unwrap();
        let scores = |v: &[AnomalyCandidate]| v.iter().map(|c| c.abs_standardized_residual).collect::<Vec<_>>();
        assert_eq!(scores(&high), vec![6.1, 9.0]);
        assert_eq!(scores(&low), vec![4.5, 5.9]);
        assert_eq!(classify(&[], &fit, ScoreSpace::AbsStandardizedResidual).unwrap(), (vec![], vec![]));
        assert!(matches!(
            classify(&cands, &fit, ScoreSpace::AbsRaw),
            Err(EvtError::ScoreSpaceMismatch { .. })
        ));
    }

    #[test]
    fn config_accepts_either_spelling() {
        let a: EvtConfig = serde_json::from_str(r#"{"quantile": 0.998}"#).unwrap();
        assert!((a.risk_q - 0.002).abs() < 1e-12);
        let b: EvtConfig = serde_json::from_str(r#"{"risk_q": 0.01, "fit_method": "moment_matching"}"#).unwrap();
        assert_eq!(b.fit_method, FitMethod::MomentMatching);
        assert!(serde_json::from_str::<EvtConfig>(r#"{"risk_q": 0.01, "quantile": 0.5}"#).is_err());
        assert!(serde_json::from_str::<EvtConfig>(r#"{"init_quantile": 0.3}"#).is_err());
        let round: EvtConfig = serde_json::from_str(&serde_json::to_string(&b).unwrap()).unwrap();
        assert_eq!(round, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn partition_is_exact(scores in prop::collection::vec(0.0..20.0f64, 0..60), z in 0.0..20.0f64) {
            let fit = GpdFit { z_q: z, ..fit_with(1.0, 1.0, 0.1, 0.01) };
            let cands: Vec<_> = scores.iter().copied().map(candidate).collect();
            let (high, low) = classify(&cands, &fit, ScoreSpace::AbsStandardizedResidual).unwrap();
            prop_assert_eq!(high.len() + low.len(), cands.len());
            prop_assert!(high.iter().all(|c| c.abs_standardized_residual > z));
            prop_assert!(low.iter().all(|c| c.abs_standardized_residual <= z));
        }

        #[test]
        fn smaller_risk_gives_higher_threshold(seed in 0u64..1000, q1 in 1e-5..0.02f64, f in 0.01..1.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sample: Vec<f64> = (0..3000).map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                x.abs()
            }).collect();
            let config = EvtConfig::default();
            let a = pot_threshold(&sample, &config.with_risk_q(q1)).unwrap();
            let b = pot_threshold(&sample, &config.with_risk_q(q1 * f)).unwrap();
            prop_assert!(b.z_q >= a.z_q);
            if q1 <= a.n_t as f64 / a.n as f64 {
                prop_assert!(a.z_q >= a.t - 1e-12);
            }
        }

        #[test]
        fn bounded_tail_threshold_stays_in_support(seed in 0u64..1000, q in 1e-6..0.01f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sample: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
            for method in [FitMethod::Grimshaw, FitMethod::MomentMatching] {
                let config = EvtConfig { fit_method: method, ..EvtConfig::default().with_risk_q(q) };
                let fit = pot_threshold(&sample, &config).unwrap();
                prop_assert!(fit.n_t <= fit.n && fit.n_t >= 30);
                if fit.gamma < 0.0 {
                    prop_assert!(fit.z_q <= fit.support_end());
                }
            }
        }
    }
}
