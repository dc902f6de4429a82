//! Run configuration from a plain-text `key = value` file with dotted keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use elastic_core::corpus::CorpusSpec;
use elastic_core::importance::{CalibrationConfig, DepthMode};
use elastic_core::model::{parse_pattern, Dims, ModelConfig};
use elastic_core::router::{BudgetSpec, CostModel, RouterConfig};
use elastic_core::training::{StageConfig, TeacherMode, TrainConfig};

use crate::checkpoint::{parse_cost, parse_pairs};
use crate::format::split;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{key}` (line {line})")]
    UnknownKey { key: String, line: usize },
    #[error("config key `{key}` is set twice (lines {first} and {second})")]
    Duplicate { key: String, first: usize, second: usize },
    #[error("config key `{key}`: {detail}")]
    Value { key: String, detail: String },
}

type Result<T, E = ConfigError> = std::result::Result<T, E>;

/// Every accepted key with its default. Budget targets are fractions of the
/// full model's parameter count.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("model.d_e", "64"),
    ("model.d_int", "256"),
    ("model.n_h", "4"),
    ("model.d_h", "16"),
    ("model.m_h", "8"),
    ("model.m_d", "16"),
    ("model.g", "2"),
    ("model.d_s", "16"),
    ("model.vocab", "256"),
    ("model.pattern", "MMAFMMAF"),
    ("router.emb", "32,48,64"),
    ("router.mamba", "4x8,6x12,8x16"),
    ("router.attn", "2,3,4"),
    ("router.ffn", "128,192,256"),
    ("router.depth_min", "4"),
    ("router.d_router", "64"),
    ("router.heterogeneous", "false,false,false"),
    ("router.integration", "mode2"),
    ("router.leaky_slope", "0.01"),
    ("budgets", "full:1.0,mid:0.75,small:0.5"),
    ("cost", "params"),
    ("corpus.chain_seed", "0"),
    ("corpus.copy_short_len", "64"),
    ("pretrain.steps", "1000"),
    ("pretrain.lr", "0.003"),
    ("pretrain.warmup", "60"),
    ("pretrain.copy_frac", "0.8"),
    ("pretrain.seq_len", "64"),
    ("pretrain.batch", "8"),
    ("pretrain.long_steps", "500"),
    ("pretrain.long_lr", "0.001"),
    ("pretrain.long_seq_len", "256"),
    ("pretrain.long_batch", "2"),
    ("calib.samples", "1024"),
    ("calib.seq_len", "64"),
    ("calib.batch", "8"),
    ("calib.depth_samples", "64"),
    ("calib.keep_channels", "8"),
    ("calib.depth_mode", "iterative"),
    ("train.stage1.seq_len", "64"),
    ("train.stage1.batch", "8"),
    ("train.stage1.tokens", "614400"),
    ("train.stage2.seq_len", "256"),
    ("train.stage2.batch", "2"),
    ("train.stage2.tokens", "409600"),
    ("train.stage2.weights", "0.5,0.3,0.2"),
    ("train.lr_model", "0.001"),
    ("train.lr_router", "0.01"),
    ("train.warmup", "60"),
    ("train.lambda", "1.0"),
    ("train.kd_temperature", "1.0"),
    ("train.teacher", "frozen"),
    ("train.alpha_ce", "0.0"),
    ("train.momentum", "0.9"),
    ("train.grad_clip", "1.0"),
    ("train.anneal_horizon", "0"),
    ("train.log_every", "1"),
    ("eval.samples", "64"),
    ("eval.seq_len", "128"),
    ("verify.prompts", "50"),
    ("verify.prompt_len", "32"),
    ("paths.run_dir", "run"),
    ("paths.base_model", ""),
];

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSettings {
    pub steps: usize,
    pub lr: f64,
    pub warmup: usize,
    /// Share of copy samples; the rest is split evenly between markov and modular text.
    pub copy_frac: f64,
    pub seq_len: usize,
    pub batch: usize,
    /// Second phase on long sequences with payloads near the short context
    /// length, so the teacher copies across the Stage 2 distances.
    pub long_steps: usize,
    pub long_lr: f64,
    pub long_seq_len: usize,
    pub long_batch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibSettings {
    pub samples: usize,
    pub seq_len: usize,
    pub batch: usize,
    pub depth_samples: usize,
    pub calibration: CalibrationConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub router: RouterConfig,
    /// `(label, fraction of full parameter count)`.
    pub budgets: Vec<(String, f64)>,
    pub cost: CostModel,
    pub copy_short_len: usize,
    pub pretrain: PretrainSettings,
    pub calib: CalibSettings,
    pub train: TrainConfig,
    pub eval_samples: usize,
    pub eval_seq_len: usize,
    pub verify_prompts: usize,
    pub verify_prompt_len: usize,
    pub run_dir: PathBuf,
    pub base_model: Option<PathBuf>,
}

struct Values {
    map: BTreeMap<String, String>,
}

impl Values {
    fn get<V: FromStr>(&self, key: &str) -> Result<V>
    where
        V::Err: std::fmt::Display,
    {
        let raw = &self.map[key];
        raw.parse().map_err(|e: V::Err| ConfigError::Value { key: key.into(), detail: format!("`{raw}`: {e}") })
    }

    fn list<V: FromStr>(&self, key: &str) -> Result<Vec<V>>
    where
        V::Err: std::fmt::Display,
    {
        let raw = &self.map[key];
        split(raw).map_err(|e: V::Err| ConfigError::Value { key: key.into(), detail: format!("`{raw}`: {e}") })
    }

    fn raw(&self, key: &str) -> &str {
        &self.map[key]
    }
}

fn value_err(key: &str, detail: impl ToString) -> ConfigError {
    ConfigError::Value { key: key.into(), detail: detail.to_string() }
}

/// Split `text` into `key -> (line, value)` with no defaults applied.
pub fn parse_pairs_text(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: line_no })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: line_no });
        }
        if !DEFAULTS.iter().any(|(d, _)| *d == k) {
            return Err(ConfigError::UnknownKey { key: k.into(), line: line_no });
        }
        if let Some((first, _)) = out.get(k) {
            return Err(ConfigError::Duplicate { key: k.into(), first: *first, second: line_no });
        }
        out.insert(k.into(), (line_no, v.into()));
    }
    Ok(out)
}

impl RunConfig {
    /// Parse `text`; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let given = parse_pairs_text(text)?;
        let mut map: BTreeMap<String, String> = DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (k, (_, v)) in given {
            map.insert(k, v);
        }
        Self::from_values(&Values { map }, base_dir)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(Self::parse(&text, base)?)
    }

    /// Defaults, resolved against the current directory.
    pub fn default_config() -> Self {
        Self::parse("", Path::new(".")).expect("defaults parse")
    }

    pub fn template() -> String {
        DEFAULTS.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn from_values(v: &Values, base_dir: &Path) -> Result<Self> {
        let seed: u64 = v.get("seed")?;
        let dims = Dims {
            d_e: v.get("model.d_e")?,
            d_int: v.get("model.d_int")?,
            n_h: v.get("model.n_h")?,
            d_h: v.get("model.d_h")?,
            m_h: v.get("model.m_h")?,
            m_d: v.get("model.m_d")?,
            g: v.get("model.g")?,
            d_s: v.get("model.d_s")?,
            vocab: v.get("model.vocab")?,
        };
        let pattern = parse_pattern(v.raw("model.pattern")).map_err(|e| value_err("model.pattern", e))?;
        let model = ModelConfig::uniform(&dims, &pattern).map_err(|e| value_err("model.pattern", e))?;

        let het: Vec<bool> = v.list("router.heterogeneous")?;
        let router = RouterConfig {
            emb: v.list("router.emb")?,
            mamba: parse_pairs(v.raw("router.mamba")).map_err(|e| value_err("router.mamba", e))?,
            attn: v.list("router.attn")?,
            ffn: v.list("router.ffn")?,
            depth_min: v.get("router.depth_min")?,
            d_router: v.get("router.d_router")?,
            heterogeneous: het.try_into().map_err(|_| value_err("router.heterogeneous", "expected three flags (mamba, attn, ffn)"))?,
            integration: v.get("router.integration")?,
            leaky_slope: v.get("router.leaky_slope")?,
        };
        router.validate(&model).map_err(|e| value_err("router", e))?;

        let budgets = parse_budget_fractions(v.raw("budgets")).map_err(|e| value_err("budgets", e))?;
        let cost = parse_cost(v.raw("cost")).map_err(|e| value_err("cost", e))?;
        let copy_short_len: usize = v.get("corpus.copy_short_len")?;

        let depth_mode = match v.raw("calib.depth_mode") {
            "iterative" => DepthMode::Iterative,
            "single" => DepthMode::SinglePass,
            other => return Err(value_err("calib.depth_mode", format!("`{other}` (iterative or single)"))),
        };
        let calib = CalibSettings {
            samples: v.get("calib.samples")?,
            seq_len: v.get("calib.seq_len")?,
            batch: v.get("calib.batch")?,
            depth_samples: v.get("calib.depth_samples")?,
            calibration: CalibrationConfig { keep_channels: v.get("calib.keep_channels")?, depth_mode },
        };
        for key in ["calib.samples", "calib.seq_len", "calib.batch", "calib.depth_samples"] {
            if v.get::<usize>(key)? == 0 {
                return Err(value_err(key, "must be positive"));
            }
        }
        if calib.samples % calib.batch != 0 || calib.depth_samples % calib.batch != 0 {
            return Err(value_err("calib.batch", "must divide calib.samples and calib.depth_samples"));
        }

        let teacher = match v.raw("train.teacher") {
            "frozen" => TeacherMode::Frozen,
            "trainable" => TeacherMode::Trainable { alpha_ce: v.get("train.alpha_ce")? },
            other => return Err(value_err("train.teacher", format!("`{other}` (frozen or trainable)"))),
        };
        let stage2_tokens: usize = v.get("train.stage2.tokens")?;
        let weights: Vec<f64> = v.list("train.stage2.weights")?;
        if weights.len() != budgets.len() {
            return Err(value_err("train.stage2.weights", format!("{} weights for {} budgets", weights.len(), budgets.len())));
        }
        let clip: f64 = v.get("train.grad_clip")?;
        let horizon: usize = v.get("train.anneal_horizon")?;
        let train = TrainConfig {
            stage1: StageConfig {
                seq_len: v.get("train.stage1.seq_len")?,
                batch: v.get("train.stage1.batch")?,
                tokens: v.get("train.stage1.tokens")?,
                weights: None,
                corpus: CorpusSpec::stage1(seed),
            },
            stage2: (stage2_tokens > 0)
                .then(|| -> Result<StageConfig> {
                    Ok(StageConfig {
                        seq_len: v.get("train.stage2.seq_len")?,
                        batch: v.get("train.stage2.batch")?,
                        tokens: stage2_tokens,
                        weights: Some(weights.clone()),
                        corpus: CorpusSpec::stage2(seed.wrapping_add(1), copy_short_len),
                    })
                })
                .transpose()?,
            lr_model: v.get("train.lr_model")?,
            lr_router: v.get("train.lr_router")?,
            warmup: v.get("train.warmup")?,
            lambda: v.get("train.lambda")?,
            kd_temperature: v.get("train.kd_temperature")?,
            teacher,
            momentum: v.get("train.momentum")?,
            clip: (clip > 0.0).then_some(clip),
            anneal_horizon: (horizon > 0).then_some(horizon),
            log_every: v.get("train.log_every")?,
            seed,
            chain_seed: v.get("corpus.chain_seed")?,
        };
        train.validate(budgets.len()).map_err(|e| value_err("train", e))?;

        let copy_frac: f64 = v.get("pretrain.copy_frac")?;
        if !(0.0..=1.0).contains(&copy_frac) {
            return Err(value_err("pretrain.copy_frac", "must lie in [0, 1]"));
        }
        let pretrain = PretrainSettings {
            steps: v.get("pretrain.steps")?,
            lr: v.get("pretrain.lr")?,
            warmup: v.get("pretrain.warmup")?,
            copy_frac,
            seq_len: v.get("pretrain.seq_len")?,
            batch: v.get("pretrain.batch")?,
            long_steps: v.get("pretrain.long_steps")?,
            long_lr: v.get("pretrain.long_lr")?,
            long_seq_len: v.get("pretrain.long_seq_len")?,
            long_batch: v.get("pretrain.long_batch")?,
        };
        if pretrain.seq_len < 2 || pretrain.batch == 0 || pretrain.long_seq_len < 2 || pretrain.long_batch == 0 {
            return Err(value_err("pretrain", "sequence lengths must be at least 2 and batches positive"));
        }

        let base_model = match v.raw("paths.base_model") {
            "" => None,
            p => {
                let p = base_dir.join(p);
                if !p.is_file() {
                    return Err(value_err("paths.base_model", format!("{} does not exist", p.display())));
                }
                Some(p)
            }
        };

        let cfg = RunConfig {
            seed,
            model,
            router,
            budgets,
            cost,
            copy_short_len,
            pretrain,
            calib,
            train,
            eval_samples: v.get("eval.samples")?,
            eval_seq_len: v.get("eval.seq_len")?,
            verify_prompts: v.get("verify.prompts")?,
            verify_prompt_len: v.get("verify.prompt_len")?,
            run_dir: base_dir.join(v.raw("paths.run_dir")),
            base_model,
        };
        Ok(cfg)
    }

    /// Replace the seed and every stream derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.train.stage1.corpus.seed = seed;
        if let Some(s2) = self.train.stage2.as_mut() {
            s2.corpus.seed = seed.wrapping_add(1);
        }
    }

    /// Budget table for a model with `full_params` parameters.
    pub fn budget_specs(&self, full_params: usize) -> Vec<BudgetSpec> {
        self.budgets
            .iter()
            .map(|(l, f)| BudgetSpec::new(l.clone(), f * full_params as f64 * self.cost.per_param()).expect("validated at parse"))
            .collect()
    }
}

fn parse_budget_fractions(s: &str) -> std::result::Result<Vec<(String, f64)>, String> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for part in split::<String>(s).unwrap() {
        let (label, f) = part.split_once(':').ok_or_else(|| format!("`{part}` is not LABEL:FRACTION"))?;
        let f: f64 = f.parse().map_err(|_| format!("bad fraction in `{part}`"))?;
        if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(format!("budget label `{label}` must be nonempty [A-Za-z0-9_-]"));
        }
        if !(f > 0.0 && f <= 1.0) {
            return Err(format!("fraction {f} for `{label}` outside (0, 1]"));
        }
        if out.iter().any(|(l, _)| l == label) {
            return Err(format!("budget `{label}` listed twice"));
        }
        out.push((label.into(), f));
    }
    if out.is_empty() {
        return Err("at least one budget is required".into());
    }
    Ok(out)
}
