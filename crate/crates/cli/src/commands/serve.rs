use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use lineup_service::{Resources, ServiceConfig, SessionManager};

use crate::error::{data, runtime, Result};

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address, overriding the configuration.
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Eigenface model used to render lineups.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Real portraits for 2AFC sessions.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}

pub fn run(args: &ServeArgs, config: Option<&Path>) -> Result<()> {
    let mut cfg = ServiceConfig::load(config).map_err(data)?;
    if let Some(b) = &args.bind {
        cfg.bind = b.clone();
    }
    if let Some(d) = &args.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(m) = &args.model {
        cfg.model_path = Some(m.clone());
    }
    if let Some(c) = &args.corpus {
        cfg.corpus_dir = Some(c.clone());
    }
    cfg.validate().map_err(data)?;
    let resources = Resources::load(&cfg).map_err(data)?;
    let manager = Arc::new(SessionManager::open(&cfg, resources).map_err(data)?);

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.bind)
            .await
            .map_err(|e| runtime(format!("cannot bind {}: {e}", cfg.bind)))?;
        let addr = listener.local_addr().map_err(runtime)?;
        println!("listening on http://{addr}");
        lineup_service::http::serve(manager, listener, shutdown_signal()).await.map_err(runtime)
    })
}
