//! Built-in run configurations, compiled into the binary so a checkout
//! works with no side files.

pub const DESK: &str = include_str!("../presets/desk.cfg");
pub const LLM_7B: &str = include_str!("../presets/7b.cfg");
pub const LLM_13B: &str = include_str!("../presets/13b.cfg");

pub const NAMES: [&str; 3] = ["desk", "7b", "13b"];

pub fn text(name: &str) -> Option<&'static str> {
    match name {
        "desk" => Some(DESK),
        "7b" => Some(LLM_7B),
        "13b" => Some(LLM_13B),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runconfig::RunConfig;

    #[test]
    fn every_preset_parses_and_validates() {
        for name in NAMES {
            let cfg = RunConfig::parse(text(name).unwrap())
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn desk_preset_is_the_144_token_shape() {
        let cfg = RunConfig::parse(DESK).unwrap();
        assert_eq!(cfg.token_count(), 144);
        assert_eq!(cfg.in_grid(), (24, 24));
        assert_eq!(cfg.feature_dim, 64);
    }

    #[test]
    fn only_13b_lacks_published_anchors() {
        assert!(!RunConfig::parse(DESK).unwrap().prefill_anchors.is_empty());
        assert!(!RunConfig::parse(LLM_7B).unwrap().tps_anchors.is_empty());
        let thirteen = RunConfig::parse(LLM_13B).unwrap();
        assert!(thirteen.prefill_anchors.is_empty());
        assert!(thirteen.tps_anchors.is_empty());
    }
}
