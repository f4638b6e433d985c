//! The full projector: interpolate encoder tokens to the target budget,
//! refine, project through low-rank pathways, run the token cascade, attend
//! over compact memory inside windows, and refine once more.
//!
//! `project_traced` additionally returns a per-stage MAC trace with ablation
//! flags applied; `forward_cached` keeps activations for the backward pass.

use crate::blocks::{
    Emhsa, EmhsaCache, EmhsaGrads, Ffn, FfnCache, FfnGrads, Mhca, MhcaCache, MhcaGrads, Ntb,
    NtbCache, NtbGrads, WindowAssignment, WindowAttn, WindowCache,
};
use crate::delta::{DeltaFamily, DeltaGrads};
use crate::error::{Error, Result};
use crate::ops;
use crate::rng::Rng;
use crate::tensor::Tensor;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

/// Pathway indices into the shared-base delta family.
pub const PATH_Q: usize = 0;
pub const PATH_K: usize = 1;
pub const PATH_V: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorConfig {
    /// Encoder channel width arriving from the vision tower.
    pub input_dim: usize,
    /// Output token width handed to the language model.
    pub d_v: usize,
    pub heads: usize,
    /// Rank of every low-rank pathway update.
    pub rank: usize,
    /// Number of compact memory tokens.
    pub memory_tokens: usize,
    pub ntb_depth: usize,
    pub ntb_hidden: usize,
    pub ffn_hidden: usize,
    /// Output token grid; the token budget is its area.
    pub out_grid: (usize, usize),
    /// Window edge for cross-attention; 0 picks the largest divisor <= 4.
    pub window: usize,
    /// K/V spatial reduction; 0 picks gcd of the grid dims.
    pub reduce: usize,
    pub use_emhsa: bool,
    pub use_tb: bool,
    pub use_deltaproj: bool,
}

fn gcd(a: usize, b: usize) -> usize {
    let (mut a, mut b) = (a, b);
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Largest window edge <= 4 dividing both grid dims.
pub fn auto_window(grid: (usize, usize)) -> usize {
    (1..=4usize)
        .rev()
        .find(|w| grid.0 % w == 0 && grid.1 % w == 0)
        .unwrap_or(1)
}

impl ProjectorConfig {
    pub fn token_count(&self) -> usize {
        self.out_grid.0 * self.out_grid.1
    }

    pub fn effective_window(&self) -> usize {
        if self.window == 0 {
            auto_window(self.out_grid)
        } else {
            self.window
        }
    }

    pub fn effective_reduce(&self) -> usize {
        if self.reduce == 0 {
            gcd(self.out_grid.0, self.out_grid.1)
        } else {
            self.reduce
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (gh, gw) = self.out_grid;
        if gh == 0 || gw == 0 {
            return Err(Error::Config("output grid must be nonempty".to_string()));
        }
        if self.input_dim == 0 || self.d_v == 0 {
            return Err(Error::Config("widths must be positive".to_string()));
        }
        if self.input_dim % 4 != 0 {
            return Err(Error::Config(format!(
                "input width {} must be a multiple of 4 for the positional code",
                self.input_dim
            )));
        }
        if self.heads == 0
            || self.input_dim % self.heads != 0
            || self.d_v % self.heads != 0
        {
            return Err(Error::Config(format!(
                "heads {} must divide both widths {} and {}",
                self.heads, self.input_dim, self.d_v
            )));
        }
        let min_dim = self.input_dim.min(self.d_v);
        if self.rank == 0 || self.rank >= min_dim {
            return Err(Error::Config(format!(
                "rank {} must satisfy 0 < r < {min_dim}",
                self.rank
            )));
        }
        if self.memory_tokens == 0 {
            return Err(Error::Config("memory needs >= 1 token".to_string()));
        }
        if self.ntb_depth == 0 || self.ntb_hidden == 0 || self.ffn_hidden == 0 {
            return Err(Error::Config("cascade depth and hiddens must be >= 1".to_string()));
        }
        let w = self.effective_window();
        if gh % w != 0 || gw % w != 0 {
            return Err(Error::Config(format!(
                "window {w} does not tile grid {gh}x{gw}"
            )));
        }
        let s = self.effective_reduce();
        if s == 0 || gh % s != 0 || gw % s != 0 {
            return Err(Error::Config(format!(
                "reduce {s} does not divide grid {gh}x{gw}"
            )));
        }
        Ok(())
    }
}

/// One projector invocation's inputs: encoder tokens on their grid plus the
/// compact memory (and optionally its normalized 2D centroids).
pub struct ProjectorInput<'a> {
    pub z: &'a Tensor,
    pub in_grid: (usize, usize),
    pub memory: &'a Tensor,
    /// `[L_m × 2]` (row, col) in [0, 1]; enables position-aligned windows.
    pub memory_pos: Option<&'a Tensor>,
}

/// How memory entries were distributed over windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignmentMode {
    /// Every window claimed at least one memory centroid.
    Aligned,
    /// Memory striped over windows, `set_i = {l : l mod n_win == i}`.
    RoundRobin,
    /// Fewer memory entries than windows: window i sees `{i mod L_m}`.
    Cyclic,
}

impl AssignmentMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AssignmentMode::Aligned => "aligned",
            AssignmentMode::RoundRobin => "round_robin",
            AssignmentMode::Cyclic => "cyclic",
        }
    }
}

/// Build the window/memory assignment for a query grid.
pub fn build_assignment(
    grid: (usize, usize),
    window: usize,
    n_memory: usize,
    memory_pos: Option<&Tensor>,
) -> Result<(WindowAssignment, AssignmentMode)> {
    let (gh, gw) = grid;
    if window == 0 || gh % window != 0 || gw % window != 0 {
        return Err(Error::Config(format!(
            "window {window} does not tile grid {gh}x{gw}"
        )));
    }
    let (wins_y, wins_x) = (gh / window, gw / window);
    let n_win = wins_y * wins_x;
    let query_window: Vec<usize> = (0..gh * gw)
        .map(|q| {
            let (row, col) = (q / gw, q % gw);
            (row / window) * wins_x + col / window
        })
        .collect();

    if let Some(pos) = memory_pos {
        if pos.rank() != 2 || pos.dim(0) != n_memory || pos.dim(1) != 2 {
            return Err(Error::Dim(format!(
                "memory positions {:?}, want [{n_memory} x 2]",
                pos.shape()
            )));
        }
        let mut sets: Vec<Vec<usize>> = alloc::vec![Vec::new(); n_win];
        for m in 0..n_memory {
            let clamp01 = |v: f64| v.clamp(0.0, 1.0);
            let wy = ((clamp01(pos.at2(m, 0)) * wins_y as f64) as usize).min(wins_y - 1);
            let wx = ((clamp01(pos.at2(m, 1)) * wins_x as f64) as usize).min(wins_x - 1);
            sets[wy * wins_x + wx].push(m);
        }
        if sets.iter().all(|s| !s.is_empty()) {
            let assignment = WindowAssignment {
                query_window,
                memory_sets: sets,
            };
            assignment.validate(gh * gw, n_memory)?;
            return Ok((assignment, AssignmentMode::Aligned));
        }
        // Sparse centroids leave windows uncovered; fall through.
    }

    let (sets, mode) = if n_memory >= n_win {
        (
            (0..n_win)
                .map(|i| (i..n_memory).step_by(n_win).collect())
                .collect::<Vec<Vec<usize>>>(),
            AssignmentMode::RoundRobin,
        )
    } else {
        (
            (0..n_win).map(|i| alloc::vec![i % n_memory]).collect(),
            AssignmentMode::Cyclic,
        )
    };
    let assignment = WindowAssignment {
        query_window,
        memory_sets: sets,
    };
    assignment.validate(gh * gw, n_memory)?;
    Ok((assignment, mode))
}

// ---------------------------------------------------------------------------
// stage trace

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Interp,
    RefineAttn,
    RefineLocal,
    PosEmbed,
    DeltaBase,
    DeltaUpdate,
    CascadeAttn,
    CascadeLocal,
    CascadeMlp,
    WindowAttn,
    FfnRefine,
}

impl StageKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StageKind::Interp => "interp",
            StageKind::RefineAttn => "refine_attn",
            StageKind::RefineLocal => "refine_local",
            StageKind::PosEmbed => "pos_embed",
            StageKind::DeltaBase => "delta_base",
            StageKind::DeltaUpdate => "delta_update",
            StageKind::CascadeAttn => "cascade_attn",
            StageKind::CascadeLocal => "cascade_local",
            StageKind::CascadeMlp => "cascade_mlp",
            StageKind::WindowAttn => "window_attn",
            StageKind::FfnRefine => "ffn_refine",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageRow {
    pub name: String,
    pub kind: StageKind,
    /// Output shape `[rows x cols]` leaving this stage.
    pub shape: (usize, usize),
    /// Multiply-accumulates actually performed; 0 when disabled.
    pub macs: u64,
    pub enabled: bool,
}

#[derive(Debug, Clone)]
pub struct ProjectionTrace {
    pub rows: Vec<StageRow>,
    pub mode: AssignmentMode,
    pub n_windows: usize,
    pub window: usize,
    pub reduce: usize,
    /// Pooled K/V length inside reduced self-attention stages.
    pub kv_tokens: usize,
}

impl ProjectionTrace {
    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    fn push(&mut self, name: String, kind: StageKind, shape: (usize, usize), macs: u64, enabled: bool) {
        self.rows.push(StageRow {
            name,
            kind,
            shape,
            macs: if enabled { macs } else { 0 },
            enabled,
        });
    }
}

// ---------------------------------------------------------------------------
// projector

#[derive(Debug, Clone)]
pub struct Projector {
    pub config: ProjectorConfig,
    pub refine_attn: Emhsa,
    pub refine_local: Mhca,
    /// Shared base `[d_v × input_dim]` with Q/K/V update factors.
    pub deltas: DeltaFamily,
    pub cascade: Ntb,
    pub window_attn: WindowAttn,
    pub ffn: Ffn,
}

pub struct PipelineCache {
    in_grid: (usize, usize),
    refine_attn: EmhsaCache,
    refine_local: MhcaCache,
    q_hat: Tensor,
    memory: Tensor,
    cascade: NtbCache,
    window: WindowCache,
    ffn: FfnCache,
}

#[derive(Debug, Clone)]
pub struct ProjectorGrads {
    pub refine_attn: EmhsaGrads,
    pub refine_local: MhcaGrads,
    /// Shared-base gradient, accumulated across all three pathways.
    pub delta_base: Tensor,
    /// Per-pathway `(du, dv)` in Q, K, V order.
    pub delta_factors: Vec<(Tensor, Tensor)>,
    pub cascade: NtbGrads,
    pub ffn: FfnGrads,
}

fn ensure_finite(stage: &str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            stage: stage.to_string(),
        })
    }
}

impl Projector {
    pub fn init(config: ProjectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let reduce = config.effective_reduce();
        let refine_attn = Emhsa::init(&mut rng, config.input_dim, config.heads, reduce)?;
        let refine_local = Mhca::init(&mut rng, config.input_dim)?;
        let deltas = DeltaFamily::init(&mut rng, config.d_v, config.input_dim, config.rank, 3)?;
        let cascade = Ntb::init(
            &mut rng,
            config.ntb_depth,
            config.d_v,
            config.heads,
            reduce,
            config.ntb_hidden,
        )?;
        let window_attn = WindowAttn::new(config.d_v, config.heads)?;
        let ffn = Ffn::init(&mut rng, config.d_v, config.ffn_hidden)?;
        Ok(Self {
            config,
            refine_attn,
            refine_local,
            deltas,
            cascade,
            window_attn,
            ffn,
        })
    }

    fn check_input(&self, input: &ProjectorInput) -> Result<()> {
        let c = self.config.input_dim;
        let (ih, iw) = input.in_grid;
        if input.z.rank() != 2 || input.z.dim(0) != ih * iw || input.z.dim(1) != c {
            return Err(Error::Dim(format!(
                "encoder tokens {:?} vs grid {ih}x{iw} at width {c}",
                input.z.shape()
            )));
        }
        if input.memory.rank() != 2
            || input.memory.dim(0) != self.config.memory_tokens
            || input.memory.dim(1) != c
        {
            return Err(Error::Dim(format!(
                "memory {:?}, want [{} x {c}]",
                input.memory.shape(),
                self.config.memory_tokens
            )));
        }
        Ok(())
    }

    /// Interpolate encoder tokens to the output grid (pure data movement).
    fn interp(&self, z: &Tensor, in_grid: (usize, usize)) -> Result<Tensor> {
        let (gh, gw) = self.config.out_grid;
        let grid = ops::tokens_to_grid(z, in_grid.0, in_grid.1)?;
        let sized = ops::bilinear_resize(&grid, gh, gw)?;
        ops::grid_to_tokens(&sized)
    }

    /// Apply one delta pathway, honoring the low-rank ablation flag.
    fn pathway(&self, idx: usize, x: &Tensor) -> Result<Tensor> {
        if self.config.use_deltaproj {
            self.deltas.apply(idx, x)
        } else {
            self.deltas.apply_base(x)
        }
    }

    /// Project memory rows into attention keys and values through the shared
    /// base and the K/V update factors. Never materializes a dense update.
    pub fn kv_pathway(&self, memory: &Tensor) -> Result<(Tensor, Tensor)> {
        if memory.rank() != 2
            || memory.dim(0) != self.config.memory_tokens
            || memory.dim(1) != self.config.input_dim
        {
            return Err(Error::Dim(format!(
                "memory {:?}, want [{} x {}]",
                memory.shape(),
                self.config.memory_tokens,
                self.config.input_dim
            )));
        }
        Ok((self.pathway(PATH_K, memory)?, self.pathway(PATH_V, memory)?))
    }

    pub fn project(&self, input: &ProjectorInput) -> Result<Tensor> {
        Ok(self.project_traced(input)?.0)
    }

    pub fn project_traced(&self, input: &ProjectorInput) -> Result<(Tensor, ProjectionTrace)> {
        self.check_input(input)?;
        let cfg = &self.config;
        let (gh, gw) = cfg.out_grid;
        let v = cfg.token_count() as u64;
        let (c, d) = (cfg.input_dim as u64, cfg.d_v as u64);
        let r = cfg.rank as u64;
        let l_m = cfg.memory_tokens as u64;
        let reduce = cfg.effective_reduce();
        let window = cfg.effective_window();
        let m_kv = ((gh / reduce) * (gw / reduce)) as u64;

        let (assignment, mode) =
            build_assignment(cfg.out_grid, window, cfg.memory_tokens, input.memory_pos)?;
        let mut trace = ProjectionTrace {
            rows: Vec::new(),
            mode,
            n_windows: assignment.n_windows(),
            window,
            reduce,
            kv_tokens: m_kv as usize,
        };

        let vc = (v as usize, cfg.input_dim);
        let vd = (v as usize, cfg.d_v);
        let md = (cfg.memory_tokens, cfg.d_v);

        // Interpolation and the positional code move data without MACs.
        let mut x = self.interp(input.z, input.in_grid)?;
        ensure_finite("interp", &x)?;
        trace.push("interp".into(), StageKind::Interp, vc, 0, true);

        if cfg.use_emhsa {
            x = self.refine_attn.forward(&x, cfg.out_grid)?;
            ensure_finite("refine_attn", &x)?;
        }
        trace.push(
            "refine.attn".into(),
            StageKind::RefineAttn,
            vc,
            4 * v * c * c + 2 * v * m_kv * c,
            cfg.use_emhsa,
        );
        x = self.refine_local.forward(&x, cfg.out_grid)?;
        ensure_finite("refine_local", &x)?;
        trace.push(
            "refine.local".into(),
            StageKind::RefineLocal,
            vc,
            v * (9 * c + c * c),
            true,
        );

        let pos = ops::sinusoidal_pos2d(gh, gw, cfg.input_dim)?;
        x.add_assign(&pos)?;
        trace.push("pos".into(), StageKind::PosEmbed, vc, 0, true);

        let mut q0 = self.pathway(PATH_Q, &x)?;
        ensure_finite("delta_q", &q0)?;
        trace.push("delta_q.base".into(), StageKind::DeltaBase, vd, v * c * d, true);
        trace.push(
            "delta_q.update".into(),
            StageKind::DeltaUpdate,
            vd,
            v * r * (c + d),
            cfg.use_deltaproj,
        );

        if cfg.use_tb {
            q0 = self.cascade.forward(&q0, cfg.out_grid)?;
            ensure_finite("cascade", &q0)?;
        }
        for i in 0..cfg.ntb_depth {
            trace.push(
                format!("cascade{i}.attn"),
                StageKind::CascadeAttn,
                vd,
                4 * v * d * d + 2 * v * m_kv * d,
                cfg.use_tb && cfg.use_emhsa,
            );
            trace.push(
                format!("cascade{i}.local"),
                StageKind::CascadeLocal,
                vd,
                v * (9 * d + d * d),
                cfg.use_tb,
            );
            trace.push(
                format!("cascade{i}.mlp"),
                StageKind::CascadeMlp,
                vd,
                v * 2 * cfg.ntb_hidden as u64 * d,
                cfg.use_tb,
            );
        }

        let (mem_k, mem_v) = self.kv_pathway(input.memory)?;
        ensure_finite("delta_kv", &mem_k)?;
        ensure_finite("delta_kv", &mem_v)?;
        for name in ["delta_k", "delta_v"] {
            trace.push(
                format!("{name}.base"),
                StageKind::DeltaBase,
                md,
                l_m * c * d,
                true,
            );
            trace.push(
                format!("{name}.update"),
                StageKind::DeltaUpdate,
                md,
                l_m * r * (c + d),
                cfg.use_deltaproj,
            );
        }

        let attended = self
            .window_attn
            .forward(&q0, &mem_k, &mem_v, &assignment)?;
        ensure_finite("window_attn", &attended)?;
        trace.push(
            "window.attn".into(),
            StageKind::WindowAttn,
            vd,
            assignment.attention_macs(cfg.d_v),
            true,
        );

        let out = self.ffn.forward(&attended)?;
        ensure_finite("ffn", &out)?;
        trace.push(
            "ffn".into(),
            StageKind::FfnRefine,
            vd,
            v * 2 * cfg.ffn_hidden as u64 * d,
            true,
        );

        Ok((out, trace))
    }

    /// Forward with activations retained for `backward`. Requires the full
    /// pipeline (no ablations), since caches exist for every block.
    pub fn forward_cached(&self, input: &ProjectorInput) -> Result<(Tensor, PipelineCache)> {
        if !(self.config.use_emhsa && self.config.use_tb && self.config.use_deltaproj) {
            return Err(Error::Config(
                "gradients require the full pipeline (no ablations)".to_string(),
            ));
        }
        self.check_input(input)?;
        let cfg = &self.config;
        let (gh, gw) = cfg.out_grid;
        let window = cfg.effective_window();
        let (assignment, _) =
            build_assignment(cfg.out_grid, window, cfg.memory_tokens, input.memory_pos)?;

        let interp = self.interp(input.z, input.in_grid)?;
        let (ra, refine_attn_cache) = self.refine_attn.forward_cached(&interp, cfg.out_grid)?;
        let (rl, refine_local_cache) = self.refine_local.forward_cached(&ra, cfg.out_grid)?;
        let pos = ops::sinusoidal_pos2d(gh, gw, cfg.input_dim)?;
        let q_hat = rl.add(&pos)?;

        let q0 = self.deltas.apply(PATH_Q, &q_hat)?;
        let (casc_out, cascade_cache) = self.cascade.forward_cached(&q0, cfg.out_grid)?;

        let mem_k = self.deltas.apply(PATH_K, input.memory)?;
        let mem_v = self.deltas.apply(PATH_V, input.memory)?;
        let (attended, window_cache) =
            self.window_attn
                .forward_cached(&casc_out, &mem_k, &mem_v, &assignment)?;
        let (out, ffn_cache) = self.ffn.forward_cached(&attended)?;
        ensure_finite("output", &out)?;
        Ok((
            out,
            PipelineCache {
                in_grid: input.in_grid,
                refine_attn: refine_attn_cache,
                refine_local: refine_local_cache,
                q_hat,
                memory: input.memory.clone(),
                cascade: cascade_cache,
                window: window_cache,
                ffn: ffn_cache,
            },
        ))
    }

    /// Backward through the whole pipeline. Returns `(dz, dmemory, grads)`.
    pub fn backward(
        &self,
        cache: &PipelineCache,
        dy: &Tensor,
    ) -> Result<(Tensor, Tensor, ProjectorGrads)> {
        let cfg = &self.config;
        let (d_attended, ffn_grads) = self.ffn.backward(&cache.ffn, dy)?;
        let (d_casc_out, dmem_k, dmem_v) = self.window_attn.backward(&cache.window, &d_attended)?;

        let (dmem_from_k, gk) = self.deltas.backward(PATH_K, &cache.memory, &dmem_k)?;
        let (dmem_from_v, gv) = self.deltas.backward(PATH_V, &cache.memory, &dmem_v)?;
        let dmemory = dmem_from_k.add(&dmem_from_v)?;

        let (dq0, cascade_grads) = self.cascade.backward(&cache.cascade, &d_casc_out)?;
        let (dq_hat, gq) = self.deltas.backward(PATH_Q, &cache.q_hat, &dq0)?;

        // The positional code is constant, so its add passes gradients through.
        let (d_ra, refine_local_grads) = self.refine_local.backward(&cache.refine_local, &dq_hat)?;
        let (d_interp, refine_attn_grads) = self.refine_attn.backward(&cache.refine_attn, &d_ra)?;

        let grid = ops::tokens_to_grid(&d_interp, cfg.out_grid.0, cfg.out_grid.1)?;
        let back = ops::bilinear_resize_backward(cache.in_grid.0, cache.in_grid.1, &grid)?;
        let dz = ops::grid_to_tokens(&back)?;

        let mut delta_base = gq.base.clone();
        delta_base.add_assign(&gk.base)?;
        delta_base.add_assign(&gv.base)?;
        let factors = |g: DeltaGrads| (g.u, g.v);

        Ok((
            dz,
            dmemory,
            ProjectorGrads {
                refine_attn: refine_attn_grads,
                refine_local: refine_local_grads,
                delta_base,
                delta_factors: alloc::vec![factors(gq), factors(gk), factors(gv)],
                cascade: cascade_grads,
                ffn: ffn_grads,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ProjectorConfig {
        ProjectorConfig {
            input_dim: 8,
            d_v: 8,
            heads: 2,
            rank: 2,
            memory_tokens: 4,
            ntb_depth: 1,
            ntb_hidden: 16,
            ffn_hidden: 16,
            out_grid: (4, 4),
            window: 2,
            reduce: 0,
            use_emhsa: true,
            use_tb: true,
            use_deltaproj: true,
        }
    }

    fn tiny_input(seed: u64) -> (Tensor, Tensor) {
        let mut rng = Rng::new(seed);
        let z = rng.fill_symmetric(&[64, 8], 1.0);
        let memory = rng.fill_symmetric(&[4, 8], 1.0);
        (z, memory)
    }

    #[test]
    fn output_token_count_follows_grid_area() {
        for (gh, gw) in [(4, 4), (2, 8), (8, 2), (4, 8)] {
            let mut cfg = tiny_config();
            cfg.out_grid = (gh, gw);
            cfg.window = 2;
            let p = Projector::init(cfg, 7).unwrap();
            let (z, memory) = tiny_input(11);
            let out = p
                .project(&ProjectorInput {
                    z: &z,
                    in_grid: (8, 8),
                    memory: &memory,
                    memory_pos: None,
                })
                .unwrap();
            assert_eq!(out.shape(), &[gh * gw, 8]);
        }
    }

    #[test]
    fn same_seed_same_output_bitwise() {
        let p1 = Projector::init(tiny_config(), 42).unwrap();
        let p2 = Projector::init(tiny_config(), 42).unwrap();
        let (z, memory) = tiny_input(5);
        let input = ProjectorInput {
            z: &z,
            in_grid: (8, 8),
            memory: &memory,
            memory_pos: None,
        };
        let a = p1.project(&input).unwrap();
        let b = p2.project(&input).unwrap();
        assert_eq!(a.data(), b.data());
        let c = p1.project(&input).unwrap();
        assert_eq!(a.data(), c.data());
    }

    #[test]
    fn different_seeds_differ() {
        let p1 = Projector::init(tiny_config(), 1).unwrap();
        let p2 = Projector::init(tiny_config(), 2).unwrap();
        let (z, memory) = tiny_input(5);
        let input = ProjectorInput {
            z: &z,
            in_grid: (8, 8),
            memory: &memory,
            memory_pos: None,
        };
        let a = p1.project(&input).unwrap();
        let b = p2.project(&input).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() > 1e-9);
    }

    #[test]
    fn fresh_factors_make_update_rows_free() {
        // v starts at zero, so base-only ablation is bitwise identical at init
        // while its trace drops exactly the update rows.
        let p_full = Projector::init(tiny_config(), 9).unwrap();
        let mut cfg = tiny_config();
        cfg.use_deltaproj = false;
        let p_base = Projector::init(cfg, 9).unwrap();
        let (z, memory) = tiny_input(13);
        let input = ProjectorInput {
            z: &z,
            in_grid: (8, 8),
            memory: &memory,
            memory_pos: None,
        };
        let (a, ta) = p_full.project_traced(&input).unwrap();
        let (b, tb) = p_base.project_traced(&input).unwrap();
        assert_eq!(a.data(), b.data());

        let update_macs: u64 = ta
            .rows
            .iter()
            .filter(|r| r.kind == StageKind::DeltaUpdate)
            .map(|r| r.macs)
            .sum();
        assert!(update_macs > 0);
        assert_eq!(ta.total_macs() - update_macs, tb.total_macs());
        assert!(tb
            .rows
            .iter()
            .filter(|r| r.kind == StageKind::DeltaUpdate)
            .all(|r| !r.enabled && r.macs == 0));
    }

    #[test]
    fn kv_pathway_matches_materialized_projections() {
        let p = Projector::init(tiny_config(), 21).unwrap();
        let mut rng = Rng::new(77);
        // Push the factors away from the zero init so K and V genuinely differ.
        let mut deltas = p.deltas.clone();
        for i in [PATH_K, PATH_V] {
            let u = rng.fill_symmetric(&[8, 2], 0.5);
            let vt = rng.fill_symmetric(&[2, 8], 0.5);
            deltas.factors[i] = crate::delta::DeltaFactors { u, v: vt };
        }
        let p = Projector { deltas, ..p };
        let memory = rng.fill_symmetric(&[4, 8], 1.0);
        let (k, v) = p.kv_pathway(&memory).unwrap();

        let wk = p.deltas.materialize(PATH_K).unwrap();
        let wv = p.deltas.materialize(PATH_V).unwrap();
        let k_oracle = ops::linear(&memory, &wk).unwrap();
        let v_oracle = ops::linear(&memory, &wv).unwrap();
        assert!(k.max_abs_diff(&k_oracle).unwrap() < 1e-10);
        assert!(v.max_abs_diff(&v_oracle).unwrap() < 1e-10);
        assert!(k.max_abs_diff(&v).unwrap() > 1e-6);
    }

    #[test]
    fn kv_pathway_collapses_to_shared_base_on_equal_factors() {
        let p = Projector::init(tiny_config(), 33).unwrap();
        // Zero-initialized updates leave only the shared base: K == V exactly.
        let memory = Rng::new(3).fill_symmetric(&[4, 8], 1.0);
        let (k, v) = p.kv_pathway(&memory).unwrap();
        assert_eq!(k.data(), v.data());
        let base = p.deltas.apply_base(&memory).unwrap();
        assert_eq!(k.data(), base.data());

        let bad = Rng::new(3).fill_symmetric(&[4, 9], 1.0);
        assert!(matches!(p.kv_pathway(&bad), Err(Error::Dim(_))));
    }

    #[test]
    fn attention_ablation_disables_both_attn_stages() {
        let mut cfg = tiny_config();
        cfg.use_emhsa = false;
        let p = Projector::init(cfg, 3).unwrap();
        let (z, memory) = tiny_input(4);
        let (_, trace) = p
            .project_traced(&ProjectorInput {
                z: &z,
                in_grid: (8, 8),
                memory: &memory,
                memory_pos: None,
            })
            .unwrap();
        for row in &trace.rows {
            if matches!(row.kind, StageKind::RefineAttn | StageKind::CascadeAttn) {
                assert!(!row.enabled);
                assert_eq!(row.macs, 0);
            }
        }
    }

    #[test]
    fn assignment_modes_cover_all_memory_budgets() {
        // 4x4 grid, window 2 -> 4 windows.
        let (a, mode) = build_assignment((4, 4), 2, 8, None).unwrap();
        assert_eq!(mode, AssignmentMode::RoundRobin);
        assert_eq!(a.memory_sets[1], alloc::vec![1, 5]);

        let (a, mode) = build_assignment((4, 4), 2, 3, None).unwrap();
        assert_eq!(mode, AssignmentMode::Cyclic);
        assert_eq!(a.memory_sets[3], alloc::vec![0]);

        // Centroids in all four quadrants align.
        let pos = Tensor::new(
            &[4, 2],
            alloc::vec![0.1, 0.1, 0.1, 0.9, 0.9, 0.1, 0.9, 0.9],
        )
        .unwrap();
        let (a, mode) = build_assignment((4, 4), 2, 4, Some(&pos)).unwrap();
        assert_eq!(mode, AssignmentMode::Aligned);
        assert_eq!(a.memory_sets, alloc::vec![
            alloc::vec![0],
            alloc::vec![1],
            alloc::vec![2],
            alloc::vec![3]
        ]);

        // All centroids in one corner cannot cover every window.
        let skew = Tensor::new(&[4, 2], alloc::vec![0.0; 8]).unwrap();
        let (_, mode) = build_assignment((4, 4), 2, 4, Some(&skew)).unwrap();
        assert_eq!(mode, AssignmentMode::RoundRobin);
    }

    #[test]
    fn auto_window_prefers_largest_divisor_up_to_four() {
        assert_eq!(auto_window((12, 12)), 4);
        assert_eq!(auto_window((6, 9)), 3);
        assert_eq!(auto_window((5, 7)), 1);
        assert_eq!(auto_window((24, 12)), 4);
    }

    #[test]
    fn rejects_malformed_inputs() {
        let p = Projector::init(tiny_config(), 1).unwrap();
        let (z, memory) = tiny_input(2);
        let bad_grid = ProjectorInput {
            z: &z,
            in_grid: (7, 8),
            memory: &memory,
            memory_pos: None,
        };
        assert!(matches!(p.project(&bad_grid), Err(Error::Dim(_))));

        let small_mem = Tensor::zeros(&[3, 8]);
        let bad_mem = ProjectorInput {
            z: &z,
            in_grid: (8, 8),
            memory: &small_mem,
            memory_pos: None,
        };
        assert!(matches!(p.project(&bad_mem), Err(Error::Dim(_))));
    }

    #[test]
    fn non_finite_input_reports_the_stage() {
        let p = Projector::init(tiny_config(), 1).unwrap();
        let (mut z, memory) = tiny_input(2);
        z.data_mut()[0] = f64::NAN;
        let r = p.project(&ProjectorInput {
            z: &z,
            in_grid: (8, 8),
            memory: &memory,
            memory_pos: None,
        });
        assert!(matches!(r, Err(Error::Numeric { .. })));
    }

    #[test]
    fn config_validation_catches_bad_shapes() {
        let mut c = tiny_config();
        c.rank = 8;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.window = 3;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.input_dim = 10;
        assert!(c.validate().is_err());
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn traced_and_plain_projection_agree() {
        let p = Projector::init(tiny_config(), 21).unwrap();
        let (z, memory) = tiny_input(22);
        let input = ProjectorInput {
            z: &z,
            in_grid: (8, 8),
            memory: &memory,
            memory_pos: None,
        };
        let a = p.project(&input).unwrap();
        let (b, _) = p.project_traced(&input).unwrap();
        let (c, _) = p.forward_cached(&input).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.data(), c.data());
    }
}
