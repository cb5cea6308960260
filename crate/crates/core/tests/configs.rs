//! The shipped experiment configs parse and describe what they claim to.

use std::path::Path;

use promobench::config::{parse_config_file, ExperimentConfig};
use promobench::harness::{SplitMode, TrainSpec};
use promobench::modelzoo::{ModelKind, ModelSpec};
use promobench::synthgen::GenSpec;

fn shipped(name: &str) -> ExperimentConfig {
    parse_config_file(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)).unwrap()
}

fn names(cfg: &ExperimentConfig) -> Vec<&str> {
    cfg.models.iter().map(|m| m.name.as_str()).collect()
}

#[test]
fn paper_scale_config_uses_the_defaults() {
    let cfg = shipped("paper_scale.toml");
    assert_eq!(cfg.gen, GenSpec::paper_scale(cfg.gen.seed));
    let defaults = TrainSpec::default();
    assert_eq!((cfg.train.lr, cfg.train.batch_size, cfg.train.max_epochs), (defaults.lr, defaults.batch_size, defaults.max_epochs));
    for m in &cfg.models {
        let expected = match m.spec.kind {
            ModelKind::Wide => ModelSpec::wide(1000, 100),
            ModelKind::Deep => ModelSpec::deep(m.spec.deep_input_variant.unwrap(), 1000, 100),
            ModelKind::WideDeep => ModelSpec::wide_deep(1000, 100),
        };
        assert_eq!(m.spec, expected, "{}", m.name);
    }
    let rv = &cfg.variants["reduced_variance"];
    assert_eq!(rv.customer_sd_caps, (0.05, 0.1));
    assert_eq!(rv.customer_hidden_sd_cap, 0.05);
}

#[test]
fn desk_config_matches_the_acceptance_setup() {
    let cfg = shipped("desk.toml");
    assert_eq!((cfg.gen.n_samples, cfg.gen.n_customers, cfg.gen.n_campaigns), (400_000, 200, 20));
    assert_eq!(cfg.gen, GenSpec::desk(cfg.gen.seed));
    assert_eq!(
        names(&cfg),
        [
            "wide",
            "deep-v1",
            "deep-v2",
            "deep-v3",
            "deep-v4",
            "wide_deep",
            "deep-v3-seq",
            "wide_deep-seq",
            "deep-v1-reduced_variance"
        ]
    );
    for m in &cfg.models {
        let sequential = m.name.ends_with("-seq");
        assert_eq!(m.split == SplitMode::Sequential, sequential, "{}", m.name);
        if m.spec.kind != ModelKind::Wide {
            assert_eq!(m.spec.hidden_widths, [128, 64, 32]);
        }
    }
    assert_eq!(cfg.bandit_model.as_deref(), Some("wide_deep"));
    assert_eq!(cfg.bandit.len(), 3);
}

#[test]
fn both_configs_derive_the_same_seeds() {
    let (desk, paper) = (shipped("desk.toml"), shipped("paper_scale.toml"));
    assert_eq!(desk.global_seed, paper.global_seed);
    assert_eq!(desk.gen.seed, paper.gen.seed);
    assert_eq!(desk.model("wide_deep").unwrap().init_seed, paper.model("wide_deep").unwrap().init_seed);
}
