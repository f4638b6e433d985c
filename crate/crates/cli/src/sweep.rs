//! Budget sweep: one cost row per token budget, cross-checked against the
//! model's own invariants before anything is written.

use crate::fixtures;
use crate::runconfig::RunConfig;
use crate::{failed, CliError, CliResult};
use deltaproj_core::cost::{cost_breakdown, projector_strict_extra_flops, PerfModel};
use deltaproj_core::pipeline::{Projector, ProjectorInput};
use serde::Serialize;
use std::time::Instant;

#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    pub strict_flops: bool,
    /// Measure desk wall times per row (best of three forwards). Timing is
    /// excluded from determinism guarantees, so it is opt-in.
    pub timing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub v: usize,
    pub f_vision: f64,
    pub f_proj: f64,
    pub f_prefill: f64,
    pub f_decode: f64,
    pub f_total: f64,
    pub tps_est: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

/// Model-level constants that do not vary across rows.
#[derive(Debug, Clone, Serialize)]
pub struct SweepConstants {
    pub alpha_tf: f64,
    pub beta_tf: f64,
    pub llm_params: u64,
    pub weight_bytes: u64,
    pub kv_bytes_per_token: u64,
    pub projector_macs_per_token: u64,
    pub vision_tf: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepArtifact {
    pub version: u32,
    pub config_hash: String,
    pub strict_flops: bool,
    pub constants: SweepConstants,
    pub rows: Vec<SweepRow>,
}

pub fn run(cfg: &RunConfig, budgets: &[usize], opt: &SweepOptions) -> CliResult<SweepArtifact> {
    if budgets.is_empty() {
        return Err(CliError::Usage(
            "sweep needs at least one token budget".to_string(),
        ));
    }
    let mut order: Vec<usize> = budgets.to_vec();
    order.sort_unstable_by(|a, b| b.cmp(a));
    order.dedup();

    let llm = cfg.llm();
    let vision = cfg.vision();
    let workload = cfg.workload();
    let perf = match cfg.tps_anchors.as_slice() {
        [lo, hi] => Some(
            PerfModel::fit(&llm, &workload, *lo, *hi)
                .map_err(|e| failed(format!("throughput fit: {e}")))?,
        ),
        _ => None,
    };

    let mut rows = Vec::with_capacity(order.len());
    for &v in &order {
        let scale = cfg.budget_to_scale(v)?;
        let run = cfg.with_scale(scale);
        let proj = run.projector_config();
        let br = cost_breakdown(&vision, &proj, &llm, &workload);
        let extra = if opt.strict_flops {
            projector_strict_extra_flops(&proj) as f64 / 1e12
        } else {
            0.0
        };
        let f_proj = br.projector_tf + extra;
        let wall_ms = if opt.timing {
            Some(measure_forward_ms(&run)?)
        } else {
            None
        };
        rows.push(SweepRow {
            v,
            f_vision: br.vision_tf,
            f_proj,
            f_prefill: br.prefill_tf,
            f_decode: br.decode_tf,
            f_total: br.vision_tf + f_proj + br.prefill_tf + br.decode_tf,
            tps_est: perf
                .as_ref()
                .map(|m| m.tokens_per_second(&llm, &workload, v)),
            wall_ms,
        });
    }

    let artifact = SweepArtifact {
        version: 1,
        config_hash: cfg.config_hash(),
        strict_flops: opt.strict_flops,
        constants: SweepConstants {
            alpha_tf: llm.alpha_tf(),
            beta_tf: llm.beta_tf(),
            llm_params: llm.params(),
            weight_bytes: llm.weight_bytes(),
            kv_bytes_per_token: llm.kv_bytes_per_token(),
            projector_macs_per_token: deltaproj_core::cost::projector_macs_per_token(
                &cfg.projector_config(),
            ),
            vision_tf: vision.flops_tf(),
        },
        rows,
    };
    self_check(&artifact, opt)?;
    Ok(artifact)
}

/// Best-of-three projector forward at this budget over synthesized inputs.
fn measure_forward_ms(run: &RunConfig) -> CliResult<f64> {
    let f = fixtures::synthesize(run)?;
    let p = Projector::init(run.projector_config(), run.seed)
        .map_err(|e| failed(e.to_string()))?;
    let input = ProjectorInput {
        z: &f.z,
        in_grid: run.in_grid(),
        memory: &f.summary,
        memory_pos: None,
    };
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let start = Instant::now();
        let out = p.project(&input).map_err(|e| failed(e.to_string()))?;
        let dt = start.elapsed().as_secs_f64() * 1e3;
        if !out.all_finite() {
            return Err(failed("projector produced non-finite output".to_string()));
        }
        best = best.min(dt);
    }
    Ok(best)
}

pub fn render_csv(a: &SweepArtifact, timing: bool) -> String {
    let mut out = String::from("V,f_vision,f_proj,f_prefill,f_decode,f_total,tps_est");
    if timing {
        out.push_str(",wall_ms");
    }
    out.push('\n');
    for r in &a.rows {
        let tps = r.tps_est.map(|t| t.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            r.v, r.f_vision, r.f_proj, r.f_prefill, r.f_decode, r.f_total, tps
        ));
        if timing {
            out.push(',');
            if let Some(ms) = r.wall_ms {
                out.push_str(&format!("{ms:.3}"));
            }
        }
        out.push('\n');
    }
    out
}

pub fn render_json(a: &SweepArtifact) -> CliResult<String> {
    serde_json::to_string_pretty(a).map_err(|e| failed(format!("serialize sweep: {e}")))
}

/// Re-parse the rendered CSV and check the published scaling claims on the
/// values a reader would actually see. Any violation aborts the command.
fn self_check(a: &SweepArtifact, opt: &SweepOptions) -> CliResult<()> {
    let text = render_csv(a, opt.timing);
    let mut rows: Vec<(usize, Vec<f64>, Option<f64>)> = Vec::new();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let v: usize = cells[0].parse().map_err(|_| failed("self-check: bad V cell"))?;
        let nums: Vec<f64> = cells[1..6]
            .iter()
            .map(|c| c.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| failed("self-check: bad numeric cell"))?;
        let tps = if cells[6].is_empty() {
            None
        } else {
            Some(
                cells[6]
                    .parse::<f64>()
                    .map_err(|_| failed("self-check: bad tps cell"))?,
            )
        };
        rows.push((v, nums, tps));
    }

    let fail = |msg: String| Err(CliError::Failed(format!("sweep self-check failed: {msg}")));

    // Rows strictly descending in V.
    if !rows.windows(2).all(|w| w[0].0 > w[1].0) {
        return fail("rows are not in descending budget order".to_string());
    }

    // Projector cost is exactly linear: f_proj / V is one constant.
    let per = rows[0].1[1] / rows[0].0 as f64;
    for (v, nums, _) in &rows {
        let got = nums[1] / *v as f64;
        if (got - per).abs() > 1e-12 * per.abs() {
            return fail(format!("f_proj/V drifts at V={v}: {got} vs {per}"));
        }
    }

    // Quartering is bitwise for 4x budget ratios (both costs re-read from text).
    for (va, na, _) in &rows {
        for (vb, nb, _) in &rows {
            if *va == 4 * *vb && na[1] != 4.0 * nb[1] {
                return fail(format!(
                    "f_proj({va}) = {} is not exactly 4x f_proj({vb}) = {}",
                    na[1], nb[1]
                ));
            }
        }
    }

    // Decode cost barely moves across budgets.
    let (dlo, dhi) = rows.iter().fold((f64::INFINITY, 0.0f64), |(l, h), r| {
        (l.min(r.1[3]), h.max(r.1[3]))
    });
    if (dhi - dlo) / dlo >= 0.15 {
        return fail(format!("decode varies {:.1}% across budgets", (dhi - dlo) / dlo * 100.0));
    }

    // Total is the exact sum of its printed parts.
    for (v, nums, _) in &rows {
        if nums[4] != nums[0] + nums[1] + nums[2] + nums[3] {
            return fail(format!("f_total at V={v} is not the sum of its columns"));
        }
    }

    // Throughput rises as budgets shrink.
    let tps: Vec<f64> = rows.iter().filter_map(|r| r.2).collect();
    if !tps.is_empty() {
        if tps.len() != rows.len() {
            return fail("tps_est present on only some rows".to_string());
        }
        if !tps.windows(2).all(|w| w[0] <= w[1] + 1e-12) {
            return fail("tps_est is not monotone as V falls".to_string());
        }
    }

    // Wall times are indicative only; gate just the sweep's endpoints.
    if opt.timing && rows.len() >= 2 {
        let first = a.rows.first().and_then(|r| r.wall_ms);
        let last = a.rows.last().and_then(|r| r.wall_ms);
        if let (Some(big), Some(small)) = (first, last) {
            if big < small {
                return fail(format!(
                    "wall time at V={} ({big:.3} ms) beat V={} ({small:.3} ms)",
                    a.rows[0].v,
                    a.rows.last().unwrap().v
                ));
            }
        }
    }
    Ok(())
}
