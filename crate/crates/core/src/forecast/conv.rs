//! Dilated causal convolution forecaster with a Gaussian head.
//!
//! Architecture, with `C` channels, kernel size `K` and horizon `H`:
//!
//! ```text
//! h0[t]   = w_in * x[t] + b_in                         (1 -> C)
//! h{l+1}  = h{l} + tanh(causal_conv_{d_l}(h{l}))       (C -> C, dilation d_l)
//! mu[t,k] = w_mu[k] . hL[t] + b_mu[k]                  k = 0..H
//! s[t,k]  = w_s[k]  . hL[t] + b_s[k]                   sigma = exp(s)
//! ```
//!
//! The outputs at origin `t` forecast `x[t + 1 + k]` and depend on `x[..=t]`
//! only. Training minimises the mean Gaussian NLL over origins whose receptive
//! field lies fully inside the crop, using SGD with global-norm clipping.
//! All parameters live in one flat vector; gradients share the layout.

use std::f64::consts::PI;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_training_set, sigma_floor, ForecastError, ForecastModel, GaussianForecast, TrainConfig, TrainReport};
use crate::series::RegularSeries;

const LOG_SIGMA_LIMIT: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNet {
    channels: usize,
    kernel_size: usize,
    dilations: Vec<usize>,
    horizon: usize,
    params: Vec<f64>,
}

/// Gradient of the summed loss, laid out like [`ConvNet::params`].
pub type ConvGradients = Vec<f64>;

struct Trace {
    /// Hidden states per layer boundary, each `len * C`.
    hidden: Vec<Vec<f64>>,
    /// tanh outputs per conv layer, each `len * C`.
    acts: Vec<Vec<f64>>,
}

impl ConvNet {
    pub fn new(channels: usize, kernel_size: usize, dilations: Vec<usize>, horizon: usize, seed: u64) -> Self {
        let mut net = Self {
            channels,
            kernel_size,
            dilations,
            horizon,
            params: Vec::new(),
        };
        net.params = vec![0.0; net.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = channels;
        let fill = |params: &mut [f64], std: f64, rng: &mut ChaCha8Rng| {
            let normal = Normal::new(0.0, std).expect("valid std");
            for p in params {
                *p = normal.sample(rng);
            }
        };
        fill(&mut net.params[..c], 0.5, &mut rng);
        for l in 0..net.dilations.len() {
            let (w, _) = net.layer_offsets(l);
            let fan_in = (c * kernel_size) as f64;
            fill(&mut net.params[w..w + c * c * kernel_size], 0.5 / fan_in.sqrt(), &mut rng);
        }
        let (wmu, _, ws, _) = net.head_offsets();
        let head_std = 0.1 / (c as f64).sqrt();
        fill(&mut net.params[wmu..wmu + horizon * c], head_std, &mut rng);
        fill(&mut net.params[ws..ws + horizon * c], head_std, &mut rng);
        net
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_size - 1) * self.dilations.iter().sum::<usize>()
    }

    fn param_count(&self) -> usize {
        let c = self.channels;
        2 * c + self.dilations.len() * (c * c * self.kernel_size + c) + 2 * (self.horizon * c + self.horizon)
    }

    fn layer_offsets(&self, layer: usize) -> (usize, usize) {
        let c = self.channels;
        let w = 2 * c + layer * (c * c * self.kernel_size + c);
        (w, w + c * c * self.kernel_size)
    }

    /// (w_mu, b_mu, w_s, b_s) offsets.
    fn head_offsets(&self) -> (usize, usize, usize, usize) {
        let c = self.channels;
        let h = self.horizon;
        let base = 2 * c + self.dilations.len() * (c * c * self.kernel_size + c);
        (base, base + h * c, base + h * c + h, base + 2 * h * c + h)
    }

    fn forward(&self, x: &[f64]) -> Trace {
        let c = self.channels;
        let k = self.kernel_size;
        let len = x.len();
        let mut h0 = vec![0.0; len * c];
        for (t, xv) in x.iter().enumerate() {
            for ch in 0..c {
                h0[t * c + ch] = self.params[ch] * xv + self.params[c + ch];
            }
        }
        let mut hidden = vec![h0];
        let mut acts = Vec::with_capacity(self.dilations.len());
        for (l, &d) in self.dilations.iter().enumerate() {
            let (wo, bo) = self.layer_offsets(l);
            let h = hidden.last().expect("input layer");
            let mut a = vec![0.0; len * c];
            for t in 0..len {
                for o in 0..c {
                    let mut z = self.params[bo + o];
                    for tap in 0..k {
                        let lag = (k - 1 - tap) * d;
                        if lag > t {
                            continue;
                        }
                        let src = &h[(t - lag) * c..(t - lag + 1) * c];
                        let w = &self.params[wo + o * c * k..];
                        for (ci, hv) in src.iter().enumerate() {
                            z += w[ci * k + tap] * hv;
                        }
                    }
                    a[t * c + o] = z.tanh();
                }
            }
            let next: Vec<f64> = h.iter().zip(&a).map(|(hv, av)| hv + av).collect();
            acts.push(a);
            hidden.push(next);
        }
        Trace { hidden, acts }
    }

    /// Head outputs `(mu, log_sigma)` at origin `t`.
    fn head(&self, last: &[f64], t: usize) -> (Vec<f64>, Vec<f64>) {
        let c = self.channels;
        let (wmu, bmu, ws, bs) = self.head_offsets();
        let hv = &last[t * c..(t + 1) * c];
        let dot = |w: usize| -> f64 { hv.iter().zip(&self.params[w..w + c]).map(|(a, b)| a * b).sum() };
        let mu = (0..self.horizon).map(|k| dot(wmu + k * c) + self.params[bmu + k]).collect();
        let s = (0..self.horizon).map(|k| dot(ws + k * c) + self.params[bs + k]).collect();
        (mu, s)
    }

    /// Outputs at every origin of `x`: element `t` forecasts `x[t+1..=t+H]`.
    pub fn outputs(&self, x: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward(x);
        let last = trace.hidden.last().expect("hidden");
        (0..x.len()).map(|t| self.head(last, t)).collect()
    }

    fn origins(&self, len: usize) -> std::ops::Range<usize> {
        let first = self.receptive_field() - 1;
        let end = len.saturating_sub(1);
        first..end.max(first)
    }

    /// Summed NLL and number of (origin, step) terms over origins with a full
    /// receptive field and at least one target.
    pub fn loss(&self, x: &[f64]) -> (f64, usize) {
        let trace = self.forward(x);
        let last = trace.hidden.last().expect("hidden");
        let mut total = 0.0;
        let mut count = 0;
        for t in self.origins(x.len()) {
            let (mu, s) = self.head(last, t);
            for k in 0..self.horizon {
                let Some(y) = x.get(t + 1 + k) else { break };
                let r = y - mu[k];
                total += 0.5 * (2.0 * PI).ln() + s[k] + 0.5 * r * r * (-2.0 * s[k]).exp();
                count += 1;
            }
        }
        (total, count)
    }

    /// Summed NLL, term count and gradient of the summed NLL.
    pub fn loss_and_grad(&self, x: &[f64]) -> (f64, usize, ConvGradients) {
        let c = self.channels;
        let k = self.kernel_size;
        let len = x.len();
        let trace = self.forward(x);
        let mut grad = vec![0.0; self.params.len()];
        let (wmu, bmu, ws, bs) = self.head_offsets();
        let last = trace.hidden.last().expect("hidden");
        let mut dh = vec![0.0; len * c];
        let mut total = 0.0;
        let mut count = 0;
        for t in self.origins(len) {
            let (mu, s) = self.head(last, t);
            let hv = &last[t * c..(t + 1) * c];
            for step in 0..self.horizon {
                let Some(y) = x.get(t + 1 + step) else { break };
                let r = y - mu[step];
                let inv_var = (-2.0 * s[step]).exp();
                total += 0.5 * (2.0 * PI).ln() + s[step] + 0.5 * r * r * inv_var;
                count += 1;
                let dmu = -r * inv_var;
                let ds = 1.0 - r * r * inv_var;
                grad[bmu + step] += dmu;
                grad[bs + step] += ds;
                for ch in 0..c {
                    grad[wmu + step * c + ch] += dmu * hv[ch];
                    grad[ws + step * c + ch] += ds * hv[ch];
                    dh[t * c + ch] += dmu * self.params[wmu + step * c + ch] + ds * self.params[ws + step * c + ch];
                }
            }
        }

        for (l, &d) in self.dilations.iter().enumerate().rev() {
            let (wo, bo) = self.layer_offsets(l);
            let h = &trace.hidden[l];
            let a = &trace.acts[l];
            // residual path passes dh through unchanged; add the conv path
            let mut dprev = dh.clone();
            for t in 0..len {
                for o in 0..c {
                    let dz = dh[t * c + o] * (1.0 - a[t * c + o] * a[t * c + o]);
                    if dz == 0.0 {
                        continue;
                    }
                    grad[bo + o] += dz;
                    for tap in 0..k {
                        let lag = (k - 1 - tap) * d;
                        if lag > t {
                            continue;
                        }
                        let src = (t - lag) * c;
                        for ci in 0..c {
                            let w_idx = wo + (o * c + ci) * k + tap;
                            grad[w_idx] += dz * h[src + ci];
                            dprev[src + ci] += self.params[w_idx] * dz;
                        }
                    }
                }
            }
            dh = dprev;
        }

        for (t, xv) in x.iter().enumerate() {
            for ch in 0..c {
                grad[ch] += dh[t * c + ch] * xv;
                grad[c + ch] += dh[t * c + ch];
            }
        }
        (total, count, grad)
    }
}

/// Trained conv model plus the configuration it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvForecaster {
    config: TrainConfig,
    net: ConvNet,
}

/// Per-series standardization; a flat series keeps a tiny positive scale.
fn standardize(values: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = values.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let std = var.sqrt().max(sigma_floor(scale));
    (mean, std, values.iter().map(|v| (v - mean) / std).collect())
}

impl ConvForecaster {
    pub fn new(config: TrainConfig) -> Result<Self, ForecastError> {
        config.validate()?;
        let net = ConvNet::new(
            config.channels,
            config.kernel_size,
            config.dilations.clone(),
            config.horizon,
            config.seed,
        );
        Ok(Self { config, net })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn net(&self) -> &ConvNet {
        &self.net
    }

    fn min_train_len(&self) -> usize {
        self.config.context_length.max(self.net.receptive_field() + self.config.horizon)
    }
}

impl ForecastModel for ConvForecaster {
    fn name(&self) -> &'static str {
        "dilated_conv"
    }

    fn fit(&mut self, series: &[RegularSeries], config: &TrainConfig) -> Result<TrainReport, ForecastError> {
        let started = Instant::now();
        *self = ConvForecaster::new(config.clone())?;
        let data: Vec<Vec<f64>> = check_training_set(series, self.min_train_len())?
            .iter()
            .map(|v| standardize(v).2)
            .collect();
        let crop_len = self.net.receptive_field() - 1 + config.origins_per_crop + config.horizon;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut loss_curve = Vec::with_capacity(config.epochs);

        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut epoch_terms = 0usize;
            for batch in order.chunks(config.batch_size) {
                let mut grad = vec![0.0; self.net.params.len()];
                let mut batch_loss = 0.0;
                let mut batch_terms = 0usize;
                for &i in batch {
                    let values = &data[i];
                    let crop = if values.len() > crop_len {
                        let start = rng.random_range(0..=values.len() - crop_len);
                        &values[start..start + crop_len]
                    } else {
                        &values[..]
                    };
                    let (loss, terms, g) = self.net.loss_and_grad(crop);
                    batch_loss += loss;
                    batch_terms += terms;
                    for (acc, gi) in grad.iter_mut().zip(g) {
                        *acc += gi;
                    }
                }
                if batch_terms == 0 {
                    continue;
                }
                if !batch_loss.is_finite() {
                    return Err(ForecastError::NonFiniteLoss { epoch });
                }
                let scale = 1.0 / batch_terms as f64;
                let norm = grad.iter().map(|g| (g * scale).powi(2)).sum::<f64>().sqrt();
                if !norm.is_finite() {
                    return Err(ForecastError::NonFiniteLoss { epoch });
                }
                let clip = if norm > config.clip_norm { config.clip_norm / norm } else { 1.0 };
                let step = config.learning_rate * scale * clip;
                for (p, g) in self.net.params.iter_mut().zip(&grad) {
                    *p -= step * g;
                }
                epoch_loss += batch_loss;
                epoch_terms += batch_terms;
            }
            loss_curve.push(epoch_loss / epoch_terms.max(1) as f64);
        }

        // Final NLL over every full series with the trained weights.
        let (total, terms) = data.iter().fold((0.0, 0usize), |(t, n), v| {
            let (l, c) = self.net.loss(v);
            (t + l, n + c)
        });
        let final_nll = total / terms.max(1) as f64;
        if !final_nll.is_finite() {
            return Err(ForecastError::NonFiniteLoss { epoch: config.epochs });
        }
        Ok(TrainReport {
            model: self.name().to_string(),
            loss_curve,
            final_nll,
            series_used: data.len(),
            wall_time_ms: started.elapsed().as_millis() as u64,
        })
    }

    fn min_context(&self) -> usize {
        self.net.receptive_field()
    }

    fn context_length(&self) -> usize {
        self.config.context_length
    }

    fn predict_values(&self, context: &[f64], horizon: usize) -> Result<GaussianForecast, ForecastError> {
        let rf = self.net.receptive_field();
        if context.len() < rf {
            return Err(ForecastError::ContextTooShort {
                len: context.len(),
                required: rf,
            });
        }
        let (mean, std, scaled) = standardize(context);
        let scale = context.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        let floor = sigma_floor(scale);
        let mut window: Vec<f64> = scaled[scaled.len() - rf..].to_vec();
        let mut mu = Vec::with_capacity(horizon);
        let mut sigma = Vec::with_capacity(horizon);
        // Direct multi-step head; longer horizons roll forward block by block.
        while mu.len() < horizon {
            let trace = self.net.forward(&window);
            let last = trace.hidden.last().expect("hidden");
            let (m, s) = self.net.head(last, window.len() - 1);
            for (mk, sk) in m.into_iter().zip(s) {
                if mu.len() == horizon {
                    break;
                }
                mu.push(mean + std * mk);
                sigma.push((std * sk.clamp(-LOG_SIGMA_LIMIT, LOG_SIGMA_LIMIT).exp()).max(floor));
                window.push(mk);
            }
            let excess = window.len() - rf;
            window.drain(..excess);
        }
        GaussianForecast::new(mu, sigma)
    }
}
