//! Flat `key = value` run configuration: parsing, validation, the canonical
//! text form that the config hash is taken over, and conversion into the
//! core's projector/cost configs.

use crate::{failed, CliError, CliResult};
use deltaproj_core::cost::{LlmConfig, VisionConfig, Workload};
use deltaproj_core::pipeline::ProjectorConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // Image geometry; the patch grid and token budget derive from these.
    pub img_h: usize,
    pub img_w: usize,
    pub patch: usize,
    pub scale: usize,

    // Projector dims. window/reduce of 0 mean auto (largest grid divisor
    // <= 4, and gcd-quotient K/V pooling respectively).
    pub feature_dim: usize,
    pub d_v: usize,
    pub heads: usize,
    pub rank: usize,
    pub memory_tokens: usize,
    pub ntb_depth: usize,
    pub ntb_hidden: usize,
    pub ffn_hidden: usize,
    pub window: usize,
    pub reduce: usize,
    pub seed: u64,
    pub use_emhsa: bool,
    pub use_tb: bool,
    pub use_deltaproj: bool,

    // Cost-model side.
    pub llm_d_model: usize,
    pub llm_layers: usize,
    pub llm_ff: usize,
    pub llm_vocab: usize,
    pub vision_d_model: usize,
    pub vision_layers: usize,
    pub vision_ff: usize,
    pub vision_patch: usize,
    pub vision_image: usize,
    pub prompt_tokens: usize,
    pub gen_tokens: usize,

    /// Published prefill costs `(V, TF)`; empty when none exist.
    pub prefill_anchors: Vec<(usize, f64)>,
    /// Published throughput endpoints `(V, tok/s)`; empty or exactly two.
    pub tps_anchors: Vec<(usize, f64)>,
    /// Token budgets a sweep visits, each reachable by an integer scale.
    pub sweep_budgets: Vec<usize>,
}

const KNOWN_KEYS: [&str; 32] = [
    "img_h", "img_w", "patch", "scale", "feature_dim", "d_v", "heads", "rank",
    "memory_tokens", "ntb_depth", "ntb_hidden", "ffn_hidden", "window", "reduce",
    "seed", "use_emhsa", "use_tb", "use_deltaproj", "llm_d_model", "llm_layers",
    "llm_ff", "llm_vocab", "vision_d_model", "vision_layers", "vision_ff",
    "vision_patch", "vision_image", "prompt_tokens", "gen_tokens",
    "prefill_anchors", "tps_anchors", "sweep_budgets",
];

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (ix, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                failed(format!("config line {}: expected 'key = value', got '{line}'", ix + 1))
            })?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(failed(format!("config line {}: unknown key '{key}'", ix + 1)));
            }
            if pairs.iter().any(|(k, _)| *k == key) {
                return Err(failed(format!("config line {}: duplicate key '{key}'", ix + 1)));
            }
            pairs.push((key, value.trim().to_string()));
        }

        let take = |key: &str| -> Option<String> {
            pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone())
        };
        let required = |key: &str| -> CliResult<String> {
            take(key).ok_or_else(|| failed(format!("config is missing required key '{key}'")))
        };

        macro_rules! req {
            ($key:literal, $ty:ty) => {
                parse_scalar::<$ty>($key, &required($key)?)?
            };
        }
        macro_rules! opt {
            ($key:literal, $ty:ty, $default:expr) => {
                match take($key) {
                    Some(v) => parse_scalar::<$ty>($key, &v)?,
                    None => $default,
                }
            };
        }

        let cfg = RunConfig {
            img_h: req!("img_h", usize),
            img_w: req!("img_w", usize),
            patch: req!("patch", usize),
            scale: req!("scale", usize),
            feature_dim: req!("feature_dim", usize),
            d_v: req!("d_v", usize),
            heads: req!("heads", usize),
            rank: req!("rank", usize),
            memory_tokens: req!("memory_tokens", usize),
            ntb_depth: req!("ntb_depth", usize),
            ntb_hidden: req!("ntb_hidden", usize),
            ffn_hidden: req!("ffn_hidden", usize),
            window: opt!("window", usize, 0),
            reduce: opt!("reduce", usize, 0),
            seed: req!("seed", u64),
            use_emhsa: opt!("use_emhsa", bool, true),
            use_tb: opt!("use_tb", bool, true),
            use_deltaproj: opt!("use_deltaproj", bool, true),
            llm_d_model: req!("llm_d_model", usize),
            llm_layers: req!("llm_layers", usize),
            llm_ff: req!("llm_ff", usize),
            llm_vocab: req!("llm_vocab", usize),
            vision_d_model: req!("vision_d_model", usize),
            vision_layers: req!("vision_layers", usize),
            vision_ff: req!("vision_ff", usize),
            vision_patch: req!("vision_patch", usize),
            vision_image: req!("vision_image", usize),
            prompt_tokens: req!("prompt_tokens", usize),
            gen_tokens: req!("gen_tokens", usize),
            prefill_anchors: parse_anchor_list("prefill_anchors", take("prefill_anchors"))?,
            tps_anchors: parse_anchor_list("tps_anchors", take("tps_anchors"))?,
            sweep_budgets: parse_budget_list("sweep_budgets", take("sweep_budgets"))?,
        };
        Ok(cfg)
    }

    /// Every key in a fixed order with normalized spacing; the config hash
    /// is FNV-1a over exactly these bytes.
    pub fn canonical_text(&self) -> String {
        let b = |v: bool| if v { "true" } else { "false" };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("img_h", self.img_h.to_string());
        kv("img_w", self.img_w.to_string());
        kv("patch", self.patch.to_string());
        kv("scale", self.scale.to_string());
        kv("feature_dim", self.feature_dim.to_string());
        kv("d_v", self.d_v.to_string());
        kv("heads", self.heads.to_string());
        kv("rank", self.rank.to_string());
        kv("memory_tokens", self.memory_tokens.to_string());
        kv("ntb_depth", self.ntb_depth.to_string());
        kv("ntb_hidden", self.ntb_hidden.to_string());
        kv("ffn_hidden", self.ffn_hidden.to_string());
        kv("window", self.window.to_string());
        kv("reduce", self.reduce.to_string());
        kv("seed", self.seed.to_string());
        kv("use_emhsa", b(self.use_emhsa).to_string());
        kv("use_tb", b(self.use_tb).to_string());
        kv("use_deltaproj", b(self.use_deltaproj).to_string());
        kv("llm_d_model", self.llm_d_model.to_string());
        kv("llm_layers", self.llm_layers.to_string());
        kv("llm_ff", self.llm_ff.to_string());
        kv("llm_vocab", self.llm_vocab.to_string());
        kv("vision_d_model", self.vision_d_model.to_string());
        kv("vision_layers", self.vision_layers.to_string());
        kv("vision_ff", self.vision_ff.to_string());
        kv("vision_patch", self.vision_patch.to_string());
        kv("vision_image", self.vision_image.to_string());
        kv("prompt_tokens", self.prompt_tokens.to_string());
        kv("gen_tokens", self.gen_tokens.to_string());
        kv("prefill_anchors", render_anchors(&self.prefill_anchors));
        kv("tps_anchors", render_anchors(&self.tps_anchors));
        kv(
            "sweep_budgets",
            self.sweep_budgets
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        s
    }

    pub fn config_hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical_text().as_bytes()))
    }

    pub fn in_grid(&self) -> (usize, usize) {
        (self.img_h / self.patch, self.img_w / self.patch)
    }

    pub fn out_grid(&self) -> (usize, usize) {
        let (gh, gw) = self.in_grid();
        (gh / self.scale, gw / self.scale)
    }

    pub fn token_count(&self) -> usize {
        let (oh, ow) = self.out_grid();
        oh * ow
    }

    /// Geometry and dimension checks, reporting the first failing
    /// constraint by name.
    pub fn validate(&self) -> CliResult<()> {
        let constraint = |ok: bool, what: String| -> CliResult<()> {
            if ok {
                Ok(())
            } else {
                Err(failed(format!("config error: {what}")))
            }
        };
        constraint(self.patch > 0, "patch must be positive".into())?;
        constraint(
            self.img_h % self.patch == 0,
            format!("patch {} must divide img_h {}", self.patch, self.img_h),
        )?;
        constraint(
            self.img_w % self.patch == 0,
            format!("patch {} must divide img_w {}", self.patch, self.img_w),
        )?;
        let (gh, gw) = self.in_grid();
        constraint(self.scale > 0, "scale must be positive".into())?;
        constraint(
            gh % self.scale == 0,
            format!("scale {} must divide the patch rows {gh}", self.scale),
        )?;
        constraint(
            gw % self.scale == 0,
            format!("scale {} must divide the patch cols {gw}", self.scale),
        )?;
        self.projector_config()
            .validate()
            .map_err(|e| failed(format!("config error: {e}")))?;
        for &(v, _) in self.prefill_anchors.iter().chain(&self.tps_anchors) {
            constraint(v > 0, format!("anchor budget {v} must be positive"))?;
        }
        constraint(
            self.tps_anchors.is_empty() || self.tps_anchors.len() == 2,
            format!(
                "tps_anchors needs exactly two endpoints, got {}",
                self.tps_anchors.len()
            ),
        )?;
        for &v in &self.sweep_budgets {
            self.budget_to_scale(v)?;
        }
        Ok(())
    }

    /// The integer scale that yields `budget` output tokens under this grid,
    /// or an error naming the unreachable budget.
    pub fn budget_to_scale(&self, budget: usize) -> CliResult<usize> {
        let (gh, gw) = self.in_grid();
        for s in 1..=gh.max(gw) {
            if gh % s == 0 && gw % s == 0 && (gh / s) * (gw / s) == budget {
                return Ok(s);
            }
        }
        Err(CliError::Usage(format!(
            "budget {budget} is not reachable by an integer scale on the {gh}x{gw} grid"
        )))
    }

    pub fn with_scale(&self, scale: usize) -> Self {
        RunConfig {
            scale,
            ..self.clone()
        }
    }

    pub fn projector_config(&self) -> ProjectorConfig {
        ProjectorConfig {
            input_dim: self.feature_dim,
            d_v: self.d_v,
            heads: self.heads,
            rank: self.rank,
            memory_tokens: self.memory_tokens,
            ntb_depth: self.ntb_depth,
            ntb_hidden: self.ntb_hidden,
            ffn_hidden: self.ffn_hidden,
            out_grid: self.out_grid(),
            window: self.window,
            reduce: self.reduce,
            use_emhsa: self.use_emhsa,
            use_tb: self.use_tb,
            use_deltaproj: self.use_deltaproj,
        }
    }

    pub fn llm(&self) -> LlmConfig {
        LlmConfig {
            d_model: self.llm_d_model,
            n_layers: self.llm_layers,
            d_ff: self.llm_ff,
            vocab: self.llm_vocab,
        }
    }

    pub fn vision(&self) -> VisionConfig {
        VisionConfig {
            d_model: self.vision_d_model,
            n_layers: self.vision_layers,
            d_ff: self.vision_ff,
            patch: self.vision_patch,
            image: self.vision_image,
            in_channels: 3,
        }
    }

    pub fn workload(&self) -> Workload {
        Workload {
            prompt_tokens: self.prompt_tokens,
            gen_tokens: self.gen_tokens,
        }
    }
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse::<T>()
        .map_err(|_| failed(format!("key '{key}': invalid value '{value}'")))
}

/// `"576:6.72,144:2.16"` -> [(576, 6.72), (144, 2.16)]. An absent or empty
/// value is an empty list.
fn parse_anchor_list(key: &str, value: Option<String>) -> CliResult<Vec<(usize, f64)>> {
    let Some(value) = value else {
        return Ok(Vec::new());
    };
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for part in value.split(',') {
        let (v, tf) = part
            .trim()
            .split_once(':')
            .ok_or_else(|| failed(format!("key '{key}': expected V:value, got '{part}'")))?;
        out.push((parse_scalar::<usize>(key, v.trim())?, parse_scalar::<f64>(key, tf.trim())?));
    }
    Ok(out)
}

fn parse_budget_list(key: &str, value: Option<String>) -> CliResult<Vec<usize>> {
    let Some(value) = value else {
        return Ok(Vec::new());
    };
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|p| parse_scalar::<usize>(key, p.trim()))
        .collect()
}

fn render_anchors(anchors: &[(usize, f64)]) -> String {
    anchors
        .iter()
        .map(|(v, tf)| format!("{v}:{tf}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Load the effective config: an explicit file wins over the named preset.
pub fn load(
    config_path: Option<&std::path::Path>,
    preset: &str,
    seed_override: Option<u64>,
) -> CliResult<RunConfig> {
    let text = match config_path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| failed(format!("cannot read config {}: {e}", p.display())))?,
        None => crate::presets::text(preset)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown preset '{preset}' (available: {})",
                    crate::presets::NAMES.join(", ")
                ))
            })?
            .to_string(),
    };
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}
