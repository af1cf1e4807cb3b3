use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::series::RegularSeries;

use super::{check_training_set, sigma_floor, ForecastError, ForecastModel, GaussianForecast, TrainConfig, TrainReport};

/// Repeats the last observed period. Sigma is the standard deviation of the
/// one-period-lag differences in the context, widened by `sqrt(1 + k)` for
/// steps `k` full periods ahead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalNaive {
    period: usize,
    context_length: usize,
}

impl SeasonalNaive {
    pub fn new(period: usize) -> Self {
        let period = period.max(1);
        Self {
            period,
            context_length: 2 * period,
        }
    }

    pub fn with_context_length(mut self, context_length: usize) -> Self {
        self.context_length = context_length.max(self.min_context());
        self
    }

    pub fn period(&self) -> usize {
        self.period
    }

    fn lag_sigma(&self, values: &[f64]) -> f64 {
        let diffs: Vec<f64> = values
            .iter()
            .skip(self.period)
            .zip(values)
            .map(|(now, before)| now - before)
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt()
    }
}

impl ForecastModel for SeasonalNaive {
    fn name(&self) -> &'static str {
        "seasonal_naive"
    }

    fn fit(&mut self, series: &[RegularSeries], config: &TrainConfig) -> Result<TrainReport, ForecastError> {
        let started = Instant::now();
        *self = SeasonalNaive::new(config.season_length).with_context_length(config.context_length);
        let data = check_training_set(series, self.context_length)?;
        // In-sample lag-residual NLL, standardized per series.
        let mut nll = 0.0;
        let mut count = 0usize;
        for values in &data {
            let scale = values.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
            let sigma = self.lag_sigma(values).max(sigma_floor(scale));
            for (now, before) in values.iter().skip(self.period).zip(values.iter()) {
                let z = (now - before) / sigma;
                nll += 0.5 * (2.0 * std::f64::consts::PI).ln() + sigma.ln() + 0.5 * z * z;
                count += 1;
            }
        }
        let final_nll = nll / count.max(1) as f64;
        Ok(TrainReport {
            model: self.name().to_string(),
            loss_curve: vec![final_nll],
            final_nll,
            series_used: data.len(),
            wall_time_ms: started.elapsed().as_millis() as u64,
        })
    }

    fn min_context(&self) -> usize {
        self.period + 2
    }

    fn context_length(&self) -> usize {
        self.context_length
    }

    fn predict_values(&self, context: &[f64], horizon: usize) -> Result<GaussianForecast, ForecastError> {
        if context.len() < self.min_context() {
            return Err(ForecastError::ContextTooShort {
                len: context.len(),
                required: self.min_context(),
            });
        }
        let scale = context.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        let base = self.lag_sigma(context);
        let last_period = &context[context.len() - self.period..];
        let floor = sigma_floor(scale);
        let mu = (0..horizon).map(|h| last_period[h % self.period]).collect();
        let sigma = (0..horizon)
            .map(|h| (base * (1.0 + (h / self.period) as f64).sqrt()).max(floor))
            .collect();
        GaussianForecast::new(mu, sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{smape, SeriesKey};
    use chrono::{Duration, TimeZone, Utc};

    fn periodic(n: usize, period: usize) -> Vec<f64> {
        (0..n).map(|i| 10.0 + (i % period) as f64 * 3.0).collect()
    }

    #[test]
    fn repeats_last_period_exactly() {
        let m = SeasonalNaive::new(4);
        let ctx = periodic(20, 4);
        let f = m.predict_values(&ctx, 8).unwrap();
        let continued: Vec<f64> = periodic(28, 4)[20..].to_vec();
        assert_eq!(f.mu(), &continued[..]);
        assert_eq!(smape(f.mu(), &continued).unwrap(), 0.0);
        // perfectly periodic context: lag residuals vanish and the floor applies
        assert!(f.sigma().iter().all(|s| *s >= sigma_floor(19.0)));
    }

    #[test]
    fn sigma_from_lag_residuals() {
        let m = SeasonalNaive::new(2);
        // lag-2 differences: [2, -2, 2, -2] -> std 2
        let ctx = [0.0, 0.0, 2.0, -2.0, 0.0, 0.0];
        let f = m.predict_values(&ctx, 3).unwrap();
        assert_eq!(f.mu(), &[0.0, 0.0, 0.0]);
        assert!((f.sigma()[0] - 2.0).abs() < 1e-12);
        assert!((f.sigma()[2] - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn short_context_is_rejected() {
        let m = SeasonalNaive::new(24);
        assert!(matches!(
            m.predict_values(&[1.0; 10], 1),
            Err(ForecastError::ContextTooShort { .. })
        ));
    }

    #[test]
    fn fit_checks_length() {
        let key = SeriesKey::new("p", "", "r", "m", "d", "v").unwrap();
        let t0 = Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap();
        let s = RegularSeries::from_values(key, t0, Duration::hours(1), &periodic(30, 4)).unwrap();
        let mut m = SeasonalNaive::new(4);
        let config = TrainConfig {
            context_length: 48,
            season_length: 4,
            ..TrainConfig::default()
        };
        assert!(matches!(m.fit(std::slice::from_ref(&s), &config), Err(ForecastError::SeriesTooShort { .. })));
        let config = TrainConfig {
            context_length: 24,
            ..config
        };
        let report = m.fit(&[s], &config).unwrap();
        assert_eq!(report.series_used, 1);
        assert_eq!(m.context_length(), 24);
    }
}
