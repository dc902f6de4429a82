use std::path::Path;

use elastic::config::{ConfigError, RunConfig, DEFAULTS};
use elastic_core::model::ModelConfig;
use elastic_core::router::RouterConfig;
use elastic_core::training::{TeacherMode, TrainConfig};

fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    RunConfig::parse(text, Path::new("/nonexistent-base"))
}

#[test]
fn defaults_describe_the_desk_run() {
    let c = RunConfig::default_config();
    assert_eq!(c.model, ModelConfig::toy());
    assert_eq!(c.router, RouterConfig::toy());
    assert_eq!(c.calib.samples, 1024);
    assert_eq!(c.train, TrainConfig::desk(0));
    assert_eq!(c.budgets.iter().map(|(l, _)| l.as_str()).collect::<Vec<_>>(), ["full", "mid", "small"]);
}

#[test]
fn template_parses_back_to_defaults() {
    let t = RunConfig::template();
    assert_eq!(t.lines().count(), DEFAULTS.len());
    assert_eq!(RunConfig::parse(&t, Path::new(".")).unwrap(), RunConfig::default_config());
}

#[test]
fn unknown_key_is_named() {
    let err = parse("seed = 1\ntrain.stage3.seq_len = 5\n").unwrap_err();
    assert_eq!(err, ConfigError::UnknownKey { key: "train.stage3.seq_len".into(), line: 2 });
    assert!(err.to_string().contains("train.stage3.seq_len"));
}

#[test]
fn bad_value_names_its_key() {
    for (text, key) in [
        ("model.d_e = lots", "model.d_e"),
        ("train.teacher = sometimes", "train.teacher"),
        ("router.mamba = 4x8,6", "router.mamba"),
        ("budgets = full:1.5", "budgets"),
        ("calib.depth_mode = random", "calib.depth_mode"),
        ("train.stage2.weights = 0.5,0.5", "train.stage2.weights"),
        ("router.heterogeneous = true,false", "router.heterogeneous"),
    ] {
        let err = parse(text).unwrap_err().to_string();
        assert!(err.contains(key), "{text}: {err}");
    }
}

#[test]
fn missing_base_model_names_the_key() {
    let err = parse("paths.base_model = nowhere.ckpt").unwrap_err();
    match err {
        ConfigError::Value { key, detail } => {
            assert_eq!(key, "paths.base_model");
            assert!(detail.contains("nowhere.ckpt"));
        }
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn duplicate_and_malformed_lines_are_rejected() {
    assert_eq!(parse("seed = 1\nseed = 2").unwrap_err(), ConfigError::Duplicate { key: "seed".into(), first: 1, second: 2 });
    assert_eq!(parse("# comment\n\nseed 1").unwrap_err(), ConfigError::Syntax { line: 3 });
}

#[test]
fn comments_and_overrides_apply() {
    let c = parse("seed = 7 # trailing\ntrain.teacher = trainable\ntrain.alpha_ce = 0.5\ntrain.stage2.tokens = 0\nrouter.integration = mode1\n").unwrap();
    assert_eq!(c.seed, 7);
    assert_eq!(c.train.stage1.corpus.seed, 7);
    assert_eq!(c.train.teacher, TeacherMode::Trainable { alpha_ce: 0.5 });
    assert!(c.train.stage2.is_none());
    assert_eq!(c.router.integration.name(), "mode1");
}

#[test]
fn seed_override_moves_every_stream() {
    let mut a = RunConfig::default_config();
    a.set_seed(11);
    let b = parse("seed = 11").unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.seed, b.seed);
}

#[test]
fn budget_targets_scale_with_the_model() {
    let c = RunConfig::default_config();
    let specs = c.budget_specs(1000);
    let t: Vec<f64> = specs.iter().map(|b| b.target).collect();
    assert_eq!(t, [1000.0, 750.0, 500.0]);
}

#[test]
fn router_sets_are_checked_against_the_model() {
    let err = parse("router.ffn = 128,512").unwrap_err().to_string();
    assert!(err.contains("router"), "{err}");
}
