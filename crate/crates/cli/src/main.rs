mod args;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use args::{Cli, Command, EvalArgs, SweepArgs};
use sentinel_client::{Client, ClientError, TierFilter, TrainRequest};
use sentinel_core::pipeline::{electricity_eval, quantile_sweep, synth, ElectricityEvalConfig, FunnelReport};
use sentinel_service::ServiceConfig;

type CliResult = Result<(), String>;

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce(&T) -> String) {
    if json {
        println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
    } else {
        println!("{}", text(value));
    }
}

fn api_err(e: ClientError) -> String {
    e.to_string()
}

fn funnel_text(r: &FunnelReport) -> String {
    format!(
        "window {} .. {}\n  points {}  stage1 {}  high {}  low {}\n  smape(all) {:.3}  smape(high) {:.3}  z_q {}",
        r.window_start,
        r.window_end,
        r.points_total,
        r.stage1_count,
        r.high_count,
        r.low_count,
        r.smape_all,
        r.smape_on_anomalies,
        r.gpd_fit.as_ref().map_or("-".into(), |f| format!("{:.4}", f.z_q)),
    )
}

async fn run(cli: Cli) -> CliResult {
    let client = Client::new(&cli.server);
    let json = cli.json;
    match cli.command {
        Command::Serve { config } => serve(config).await,
        Command::Ingest { files } => {
            let mut totals = Vec::new();
            for file in files {
                let bytes = std::fs::read(&file).map_err(|e| format!("{}: {e}", file.display()))?;
                let summary = client.ingest(bytes).await.map_err(|e| format!("{}: {e}", file.display()))?;
                totals.push(serde_json::json!({ "file": file, "summary": summary }));
            }
            emit(json, &totals, |t| {
                t.iter()
                    .map(|v| {
                        let s = &v["summary"];
                        format!(
                            "{}: {} series, {} points, {} gaps",
                            v["file"].as_str().unwrap_or("?"),
                            s["series"],
                            s["points_appended"],
                            s["gaps"]
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            });
            Ok(())
        }
        Command::Train { metric, window, model, end } => {
            let request = TrainRequest { metric, window, end, model };
            let summary = client.train(&request).await.map_err(api_err)?;
            emit(json, &summary, |s| {
                format!(
                    "trained {} on {} series over {} .. {} (final nll {:.4})",
                    s.model, s.series_used, s.start, s.end, s.final_nll
                )
            });
            Ok(())
        }
        Command::Infer { window } => {
            let report = client.infer(window).await.map_err(api_err)?;
            emit(json, &report, funnel_text);
            Ok(())
        }
        Command::Report { window } => {
            let report = client.funnel(window).await.map_err(api_err)?;
            emit(json, &report, funnel_text);
            Ok(())
        }
        Command::Anomalies { tier, from, to } => {
            let list = client.anomalies(tier.unwrap_or(TierFilter::All), from, to).await.map_err(api_err)?;
            emit(json, &list, |l| {
                let mut lines = vec![format!("{} anomalies", l.count)];
                lines.extend(l.records.iter().map(|r| {
                    format!(
                        "{}  {:?}  {}  {}  score {:.2}  conf {:.3}  {:?}",
                        r.id,
                        r.tier,
                        r.candidate.timestamp,
                        r.candidate.key,
                        r.score(),
                        r.candidate.confidence,
                        r.verdict
                    )
                }));
                lines.join("\n")
            });
            Ok(())
        }
        Command::Feedback { id, verdict } => {
            let record = client.feedback(&id, verdict).await.map_err(api_err)?;
            emit(json, &record, |r| format!("{} is {:?}", r.id, r.verdict));
            Ok(())
        }
        Command::RiskFactor { set } => {
            let rf = match set {
                Some(q) => client.set_risk_factor(q).await,
                None => client.risk_factor().await,
            }
            .map_err(api_err)?;
            emit(json, &rf, |r| format!("risk_q {} (quantile {})", r.risk_q, r.quantile));
            Ok(())
        }
        Command::Eval(args) => eval(args, json),
        Command::Sweep(args) => sweep(args, &client, json).await,
    }
}

async fn serve(config: Option<PathBuf>) -> CliResult {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let config = ServiceConfig::resolve(config.as_deref()).map_err(|e| e.to_string())?;
    sentinel_service::serve(config).await.map_err(|e| e.to_string())
}

fn eval(args: EvalArgs, json: bool) -> CliResult {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => ElectricityEvalConfig::default(),
    };
    if let Some(c) = args.customers {
        config.customers = c;
    }
    if let Some(spec) = args.inject {
        spec.apply(&mut config.injection);
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(m) = args.model {
        config.model = m;
    }
    if args.data.is_some() {
        config.data = args.data;
    }
    if args.report_dir.is_some() {
        config.report_dir = args.report_dir;
    }
    let run = electricity_eval(&config).map_err(|e| e.to_string())?;
    let r = &run.report;
    if json {
        let mut value = serde_json::to_value(r).expect("report serializes");
        if let serde_json::Value::Object(map) = &mut value {
            map.insert("precision".into(), r.evt.precision.into());
            map.insert("recall".into(), r.evt.recall.into());
            map.insert("anomaly_percent".into(), r.evt.anomaly_percent.into());
            map.insert("smape".into(), r.evt.smape.into());
        }
        println!("{}", serde_json::to_string_pretty(&value).expect("value serializes"));
    } else {
        println!(
            "{} ({} series, {} points, {} injected, model {})",
            r.dataset, r.series, r.points_total, r.injected, r.model
        );
        for (name, e) in [("high tier", &r.evt), ("band only", &r.stage1)] {
            println!(
                "  {name:<10} precision {:.3}  recall {:.3}  anomaly% {:.4}  smape {:.3}  detected {}",
                e.precision, e.recall, e.anomaly_percent, e.smape, e.detected
            );
        }
        println!("  runtime {} ms", r.runtime_ms);
    }
    Ok(())
}

async fn sweep(args: SweepArgs, client: &Client, json: bool) -> CliResult {
    if args.grid.windows(2).any(|w| w[1] < w[0]) {
        return Err("grid must be ascending".into());
    }
    let rows: Vec<(f64, usize, f64)> = if args.remote || args.window.is_some() {
        client
            .sweep(args.window, &args.grid)
            .await
            .map_err(api_err)?
            .into_iter()
            .map(|r| (r.quantile, r.high_count, r.anomaly_percent))
            .collect()
    } else {
        let scores = synth::student_t_scores(args.n, args.dof, args.seed);
        quantile_sweep(&scores, &Default::default(), &args.grid)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|r| (r.quantile, r.high_count, r.anomaly_percent))
            .collect()
    };
    if json {
        let out: Vec<_> = rows
            .iter()
            .map(|(q, c, p)| serde_json::json!({ "quantile": q, "count": c, "percent": p }))
            .collect();
        println!("{}", serde_json::to_string_pretty(&out).expect("rows serialize"));
    } else {
        println!("quantile,count,percent");
        for (q, c, p) in rows {
            println!("{q},{c},{p}");
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
