//! HTTP service: ingestion, scheduled window runs, anomaly retrieval,
//! verdict feedback and risk-factor control.

mod config;
mod error;
mod routes;
mod state;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::cors::CorsLayer;

pub use config::{ConfigError, ServiceConfig, Settings, CONFIG_ENV, PAUSE_ENV};
pub use error::ApiError;
pub use routes::router;
pub use state::{AppState, CommittedWindow, Snapshot};

use sentinel_core::pipeline::PipelineError;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("BindFailure: cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("startup failed: {0}")]
    Startup(#[from] PipelineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The commit pause requested through the environment, if any.
pub fn pause_from_env() -> Option<Duration> {
    std::env::var(PAUSE_ENV)
        .ok()
        .and_then(|v| v.parse::<u64>().ok())
        .filter(|ms| *ms > 0)
        .map(Duration::from_millis)
}

pub struct Server {
    listener: TcpListener,
    state: Arc<AppState>,
}

impl Server {
    pub async fn bind(settings: Settings, pause_before_commit: Option<Duration>) -> Result<Self, ServeError> {
        let addr = settings.listen;
        let state = tokio::task::spawn_blocking(move || AppState::open(settings, pause_before_commit))
            .await
            .map_err(|e| ServeError::Io(std::io::Error::other(e)))??;
        let listener = TcpListener::bind(addr)
            .await
            .map_err(|source| ServeError::Bind { addr, source })?;
        Ok(Self {
            listener,
            state: Arc::new(state),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn state(&self) -> Arc<AppState> {
        self.state.clone()
    }

    /// Serve until `shutdown` resolves, then let any window run finish.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServeError> {
        let state = self.state;
        let scheduler = state.settings.schedule.then(|| tokio::spawn(schedule(state.clone())));
        let app = router(state.clone()).layer(CorsLayer::permissive());
        axum::serve(self.listener, app).with_graceful_shutdown(shutdown).await?;
        if let Some(task) = scheduler {
            task.abort();
        }
        state.drain().await;
        tracing::info!("shut down");
        Ok(())
    }
}

/// Run the latest complete window every inference interval.
async fn schedule(state: Arc<AppState>) {
    let period = state
        .settings
        .inference_interval
        .to_std()
        .expect("validated positive");
    let mut ticker = tokio::time::interval_at(tokio::time::Instant::now() + period, period);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    loop {
        ticker.tick().await;
        if state.model().is_none() {
            tracing::debug!("scheduled run skipped: no model");
            continue;
        }
        let start = state.latest_complete_window(chrono::Utc::now());
        match state.infer(Some(start)).await {
            Ok(report) => tracing::info!(window = %start, high = report.high_count, "scheduled window done"),
            Err(e) if e.body.code == "AlreadyCommitted" => {}
            Err(e) => tracing::warn!(window = %start, code = %e.body.code, "scheduled window failed: {}", e.body.message),
        }
    }
}

/// Resolve configuration, bind, announce the address and serve until
/// interrupted.
pub async fn serve(config: ServiceConfig) -> Result<(), ServeError> {
    let settings = config.validate()?;
    let server = Server::bind(settings, pause_from_env()).await?;
    let addr = server.local_addr()?;
    tracing::info!(%addr, "listening");
    println!("listening on http://{addr}");
    server.run(shutdown_signal()).await
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
}
