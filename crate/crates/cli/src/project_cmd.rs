//! One projector run over fixture tensors, emitting the output tokens plus a
//! JSON sidecar describing the run (stage trace, assignment, MAC totals).

use crate::dltn_io;
use crate::fixtures::{POSITIONS_FILE, SUMMARY_FILE, Z_FILE};
use crate::runconfig::RunConfig;
use crate::{failed, CliResult};
use deltaproj_core::pipeline::{ProjectionTrace, Projector, ProjectorInput};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Serialize)]
struct AblationFlags {
    use_emhsa: bool,
    use_tb: bool,
    use_deltaproj: bool,
}

#[derive(Debug, Clone, Serialize)]
struct AssignmentInfo {
    mode: &'static str,
    n_windows: usize,
    window: usize,
    reduce: usize,
    kv_tokens: usize,
}

#[derive(Debug, Clone, Serialize)]
struct StageEntry {
    name: String,
    kind: &'static str,
    shape: [usize; 2],
    macs: u64,
    enabled: bool,
}

#[derive(Debug, Clone, Serialize)]
struct Sidecar {
    version: u32,
    config_hash: String,
    v: usize,
    d_v: usize,
    ablation_flags: AblationFlags,
    assignment: AssignmentInfo,
    stage_trace: Vec<StageEntry>,
    total_macs: u64,
    /// Indicative desk wall time; null unless timing was requested.
    wall_ms: Option<f64>,
}

fn sidecar(cfg: &RunConfig, trace: &ProjectionTrace, v: usize, wall_ms: Option<f64>) -> Sidecar {
    Sidecar {
        version: 1,
        config_hash: cfg.config_hash(),
        v,
        d_v: cfg.d_v,
        ablation_flags: AblationFlags {
            use_emhsa: cfg.use_emhsa,
            use_tb: cfg.use_tb,
            use_deltaproj: cfg.use_deltaproj,
        },
        assignment: AssignmentInfo {
            mode: trace.mode.as_str(),
            n_windows: trace.n_windows,
            window: trace.window,
            reduce: trace.reduce,
            kv_tokens: trace.kv_tokens,
        },
        stage_trace: trace
            .rows
            .iter()
            .map(|r| StageEntry {
                name: r.name.clone(),
                kind: r.kind.as_str(),
                shape: [r.shape.0, r.shape.1],
                macs: r.macs,
                enabled: r.enabled,
            })
            .collect(),
        total_macs: trace.total_macs(),
        wall_ms,
    }
}

pub struct ProjectOutcome {
    pub tokens_path: PathBuf,
    pub sidecar_path: PathBuf,
    pub v: usize,
}

pub fn run(cfg: &RunConfig, fixtures_dir: &Path, out: &Path, timing: bool) -> CliResult<ProjectOutcome> {
    let z = dltn_io::read_tensor(&fixtures_dir.join(Z_FILE))?;
    let summary = dltn_io::read_tensor(&fixtures_dir.join(SUMMARY_FILE))?;
    let positions_path = fixtures_dir.join(POSITIONS_FILE);
    let positions = if positions_path.is_file() {
        Some(dltn_io::read_tensor(&positions_path)?)
    } else {
        None
    };

    let projector =
        Projector::init(cfg.projector_config(), cfg.seed).map_err(|e| failed(e.to_string()))?;
    let input = ProjectorInput {
        z: &z,
        in_grid: cfg.in_grid(),
        memory: &summary,
        memory_pos: positions.as_ref(),
    };
    let start = Instant::now();
    let (tokens, trace) = projector
        .project_traced(&input)
        .map_err(|e| failed(e.to_string()))?;
    let wall_ms = timing.then(|| start.elapsed().as_secs_f64() * 1e3);

    dltn_io::write_tensor(out, &tokens)?;
    let sidecar_path = out.with_extension("json");
    let doc = sidecar(cfg, &trace, tokens.dim(0), wall_ms);
    let text = serde_json::to_string_pretty(&doc).map_err(|e| failed(format!("sidecar: {e}")))?;
    std::fs::write(&sidecar_path, text.as_bytes())
        .map_err(|e| failed(format!("write {}: {e}", sidecar_path.display())))?;

    Ok(ProjectOutcome {
        tokens_path: out.to_path_buf(),
        sidecar_path,
        v: tokens.dim(0),
    })
}
