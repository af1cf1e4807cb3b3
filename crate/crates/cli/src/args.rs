use std::path::PathBuf;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};

use sentinel_client::{TierFilter, DEFAULT_URL};
use sentinel_core::pipeline::{InjectionSign, InjectionSpec, ModelKind, Verdict};

#[derive(Debug, Parser)]
#[command(name = "sentinel", version, about = "Two-stage anomaly detection for metric time series")]
pub struct Cli {
    /// Service base URL.
    #[arg(long, global = true, env = "SENTINEL_URL", default_value = DEFAULT_URL)]
    pub server: String,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        /// TOML config; SENTINEL_CONFIG is used when absent.
        #[arg(long, env = "SENTINEL_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Send metric-envelope JSON files to the service.
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Train the forecaster on stored series.
    Train {
        #[arg(long)]
        metric: Option<String>,
        /// Training span such as 7d.
        #[arg(long)]
        window: Option<String>,
        #[arg(long, value_parser = parse_model)]
        model: Option<ModelKind>,
        #[arg(long)]
        end: Option<DateTime<Utc>>,
    },
    /// Run and commit one inference window.
    Infer {
        /// Window start (RFC 3339); the latest complete window when absent.
        #[arg(long)]
        window: Option<DateTime<Utc>>,
    },
    /// Show the funnel report of a committed window.
    Report {
        #[arg(long)]
        window: Option<DateTime<Utc>>,
    },
    /// List committed anomalies.
    Anomalies {
        #[arg(long, value_parser = parse_tier)]
        tier: Option<TierFilter>,
        #[arg(long)]
        from: Option<DateTime<Utc>>,
        #[arg(long)]
        to: Option<DateTime<Utc>>,
    },
    /// Record a verdict on an anomaly.
    Feedback {
        id: String,
        #[arg(value_parser = parse_verdict)]
        verdict: Verdict,
    },
    /// Show or change the risk factor.
    RiskFactor {
        #[arg(long)]
        set: Option<f64>,
    },
    /// Evaluate detection against injected anomalies (runs locally).
    Eval(EvalArgs),
    /// High-tier counts over a quantile grid.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_parser = ["electricity"], default_value = "electricity")]
    pub dataset: String,
    #[arg(long)]
    pub customers: Option<usize>,
    /// Comma-separated `key=value` list: count, mag, width, sign, seed.
    #[arg(long)]
    pub inject: Option<InjectArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_model)]
    pub model: Option<ModelKind>,
    /// UCI LD2011_2014 file; synthetic data in the same layout otherwise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
    /// JSON file with a full evaluation config.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Ascending comma-separated quantiles.
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<f64>,
    /// Replay this committed window on the service.
    #[arg(long)]
    pub window: Option<DateTime<Utc>>,
    /// Replay the latest committed window on the service.
    #[arg(long)]
    pub remote: bool,
    /// Synthetic Student-t sample size.
    #[arg(long, default_value_t = 50_000)]
    pub n: usize,
    #[arg(long, default_value_t = 3.0)]
    pub dof: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Overrides for an [`InjectionSpec`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InjectArg {
    count: Option<usize>,
    magnitude: Option<f64>,
    width: Option<usize>,
    sign: Option<InjectionSign>,
    seed: Option<u64>,
}

impl InjectArg {
    pub fn apply(&self, spec: &mut InjectionSpec) {
        if let Some(v) = self.count {
            spec.count = v;
        }
        if let Some(v) = self.magnitude {
            spec.magnitude = v;
        }
        if let Some(v) = self.width {
            spec.width = v;
        }
        if let Some(v) = self.sign {
            spec.sign = v;
        }
        if let Some(v) = self.seed {
            spec.seed = v;
        }
    }
}

impl FromStr for InjectArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = InjectArg::default();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {part}"))?;
            let bad = |e: &dyn std::fmt::Display| format!("{k}: {e}");
            match k.trim() {
                "count" => out.count = Some(v.parse().map_err(|e| bad(&e))?),
                "mag" | "magnitude" => out.magnitude = Some(v.parse().map_err(|e| bad(&e))?),
                "width" => out.width = Some(v.parse().map_err(|e| bad(&e))?),
                "seed" => out.seed = Some(v.parse().map_err(|e| bad(&e))?),
                "sign" => {
                    out.sign = Some(match v.trim() {
                        "up" => InjectionSign::Up,
                        "down" => InjectionSign::Down,
                        "both" => InjectionSign::Both,
                        other => return Err(format!("sign must be up, down or both, got {other}")),
                    })
                }
                other => return Err(format!("unknown injection key {other}")),
            }
        }
        Ok(out)
    }
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    match s {
        "seasonal_naive" | "seasonal-naive" | "naive" => Ok(ModelKind::SeasonalNaive),
        "conv" => Ok(ModelKind::Conv),
        _ => Err(format!("unknown model {s}; use seasonal_naive or conv")),
    }
}

fn parse_tier(s: &str) -> Result<TierFilter, String> {
    match s.to_ascii_lowercase().as_str() {
        "high" => Ok(TierFilter::High),
        "low" => Ok(TierFilter::Low),
        "all" => Ok(TierFilter::All),
        _ => Err(format!("tier must be high, low or all, got {s}")),
    }
}

fn parse_verdict(s: &str) -> Result<Verdict, String> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "confirmed" | "confirm" => Ok(Verdict::Confirmed),
        "false_flag" | "falseflag" => Ok(Verdict::FalseFlag),
        _ => Err(format!("verdict must be confirmed or false_flag, got {s}")),
    }
}
