//! Seeded synthetic data for tests and evaluation.

use std::f64::consts::PI;
use std::fmt::Write as _;

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StudentT};

use crate::series::{RegularSeries, SeriesKey};

/// Weight of the hour-level heavy-tailed component relative to quarter noise.
const HOUR_WEIGHT: f64 = 0.5;
const HOUR_DOF: f64 = 4.0;

fn synth_key(metric: &str, index: usize) -> SeriesKey {
    SeriesKey::new("Synthetic", "", "desk", metric, "series", format!("s{index:04}")).expect("metric name is non-empty")
}

/// Independent `N(mean, std²)` series.
pub fn gaussian_series(
    count: usize,
    len: usize,
    mean: f64,
    std: f64,
    start: DateTime<Utc>,
    interval: Duration,
    seed: u64,
) -> Vec<RegularSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(mean, std).expect("valid normal");
    (0..count)
        .map(|i| {
            let values: Vec<f64> = (0..len).map(|_| noise.sample(&mut rng)).collect();
            RegularSeries::from_values(synth_key("gaussian", i), start, interval, &values).expect("finite values")
        })
        .collect()
}

/// Sinusoids (level 10, amplitude 4, random phase) plus `N(0, 0.5²)` noise,
/// with each slot independently a gap with probability `gap_fraction`.
pub fn gapped_sinusoids(
    count: usize,
    len: usize,
    period: usize,
    gap_fraction: f64,
    start: DateTime<Utc>,
    interval: Duration,
    seed: u64,
) -> Vec<RegularSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    (0..count)
        .map(|i| {
            let phase = rng.random::<f64>() * 2.0 * PI;
            let values = (0..len)
                .map(|t| {
                    let v = 10.0 + 4.0 * (2.0 * PI * t as f64 / period as f64 + phase).sin() + noise.sample(&mut rng);
                    (rng.random::<f64>() >= gap_fraction).then_some(v)
                })
                .collect();
            RegularSeries::new(synth_key("sinusoid", i), start, interval, values).expect("valid series")
        })
        .collect()
}

/// `|T|` for `T ~ Student-t(dof)`.
pub fn student_t_scores(n: usize, dof: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = StudentT::new(dof).expect("positive dof");
    (0..n).map(|_| t.sample(&mut rng).abs()).collect()
}

/// A file in the UCI electricity layout (`;` separated, `,` decimals,
/// quarter-hour readings labelled by interval end) for `customers` synthetic
/// customers over `hours` hours starting at `start`.
///
/// Loads follow a customer-specific daily profile and weekday factor with a
/// per-day level shift; readings carry Gaussian noise plus an hour-level
/// Student-t component, so hourly residual tails are heavier than Gaussian.
pub fn electricity_file(customers: usize, hours: usize, start: DateTime<Utc>, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = LogNormal::new(4.0, 1.0).expect("valid lognormal");
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let burst = StudentT::new(HOUR_DOF).expect("valid dof");

    struct Customer {
        level: f64,
        morning: f64,
        evening: f64,
        weekend: f64,
        noise: f64,
    }
    let profile: Vec<Customer> = (0..customers)
        .map(|_| Customer {
            level: base.sample(&mut rng),
            morning: 0.2 + 0.5 * rng.random::<f64>(),
            evening: 0.3 + 0.6 * rng.random::<f64>(),
            weekend: 0.6 + 0.5 * rng.random::<f64>(),
            noise: 0.02 + 0.04 * rng.random::<f64>(),
        })
        .collect();
    let days = hours.div_ceil(24) + 1;
    let day_shift: Vec<Vec<f64>> = profile
        .iter()
        .map(|_| (0..days).map(|_| 1.0 + 0.05 * unit.sample(&mut rng)).collect())
        .collect();

    let mut hour_noise = vec![0.0; customers];
    let mut out = String::from("\"\"");
    for c in 0..customers {
        let _ = write!(out, ";\"MT_{:03}\"", c + 1);
    }
    out.push('\n');
    for q in 0..hours * 4 {
        let label = start + Duration::minutes(15 * (q as i64 + 1));
        let at = start + Duration::minutes(15 * q as i64);
        let hour = (at.timestamp().rem_euclid(86_400)) as f64 / 3600.0;
        let day = (q / 96).min(days - 1);
        let weekday = (at.timestamp().div_euclid(86_400) + 4).rem_euclid(7);
        if q % 4 == 0 {
            for h in hour_noise.iter_mut() {
                *h = burst.sample(&mut rng);
            }
        }
        let _ = write!(out, "\"{}\"", label.format("%Y-%m-%d %H:%M:%S"));
        for (c, cust) in profile.iter().enumerate() {
            let daily = 0.5
                + cust.morning * (-(hour - 8.0).powi(2) / 6.0).exp()
                + cust.evening * (-(hour - 19.0).powi(2) / 8.0).exp();
            let week = if weekday >= 5 { cust.weekend } else { 1.0 };
            let mean = cust.level * daily * week * day_shift[c][day];
            let noise = cust.noise * (unit.sample(&mut rng) + HOUR_WEIGHT * hour_noise[c]);
            let value = (mean * (1.0 + noise)).max(0.0);
            let _ = write!(out, ";{}", format!("{value:.6}").replace('.', ","));
        }
        out.push('\n');
    }
    out
}
