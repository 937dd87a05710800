use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use lineup_core::turing::{detection_curves, fit_logistic, write_curves_csv, DetectionCurve, LogisticFit};
use lineup_service::manager::replay_session_dir;
use lineup_service::session::SessionState;
use lineup_service::ServiceConfig;
use serde::Serialize;

use super::{create_dir, write_json};
use crate::error::{data, runtime, Result};

#[derive(Debug, Args)]
pub struct ResultsArgs {
    /// Session to export; without it, stored sessions are listed.
    pub session: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Export directory (default: `results/{session}`).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Add logistic psychometric fits to 2AFC exports.
    #[arg(long)]
    pub fit: bool,
}

#[derive(Debug, Serialize)]
struct CurveExport {
    session_id: String,
    n_responses: usize,
    curves: Vec<DetectionCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fits: Option<BTreeMap<String, Option<LogisticFit>>>,
}

fn replay(dir: &Path) -> Result<SessionState> {
    replay_session_dir(dir).map_err(|e| data(format!("{}: {e}", dir.display())))
}

pub fn run(args: &ResultsArgs, config: Option<&Path>) -> Result<()> {
    let data_dir = match &args.data_dir {
        Some(d) => d.clone(),
        None => ServiceConfig::load(config).map_err(data)?.data_dir,
    };
    let sessions = data_dir.join("sessions");

    let Some(id) = &args.session else {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(&sessions)
            .map_err(|e| data(format!("{}: {e}", sessions.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let s = replay(&dir)?.session;
            let kind = serde_json::to_value(s.spec.kind()).map_err(runtime)?;
            let status = serde_json::to_value(s.status).map_err(runtime)?;
            println!("{}\t{}\t{}\t{}", s.session_id, kind.as_str().unwrap_or("?"), status.as_str().unwrap_or("?"), s.created_at);
        }
        return Ok(());
    };

    let dir = sessions.join(id);
    if !dir.is_dir() {
        return Err(data(format!("no session {id} under {}", sessions.display())));
    }
    let state = replay(&dir)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("results").join(id));
    create_dir(&out)?;
    write_json(&out.join("session.json"), &state.session)?;

    if let Some(p) = state.search() {
        let path = out.join("trajectory.jsonl");
        let file = std::fs::File::create(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        p.search.write_trajectory(std::io::BufWriter::new(file))?;
        println!("{} rounds written to {}", p.search.history.len(), path.display());
    } else if let Some(p) = state.turing() {
        let curves = detection_curves(&p.responses, &p.trials).map_err(data)?;
        let fits = args.fit.then(|| curves.iter().map(|c| (c.generator.clone(), fit_logistic(c))).collect());
        let export = CurveExport { session_id: id.clone(), n_responses: p.responses.len(), curves, fits };
        let csv = std::fs::File::create(out.join("curves.csv"))?;
        write_curves_csv(&export.curves, csv).map_err(runtime)?;
        write_json(&out.join("curves.json"), &export)?;
        println!("{} responses summarized in {}", export.n_responses, out.display());
    }
    Ok(())
}
