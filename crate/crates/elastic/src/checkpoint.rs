//! Model, ranking and elastic checkpoints on top of the container format.

use std::fs;
use std::path::Path;

use anyhow::Context;
use elastic_core::importance::Ranking;
use elastic_core::model::{HybridModel, LayerOrder, LayerSpec, ModelConfig};
use elastic_core::numerics::Scalar;
use elastic_core::router::{Anneal, BudgetSpec, CostMetric, CostModel, RouterBank, RouterConfig};
use elastic_core::slicing::{Checkpoint, MAX_ROUTER_OVERHEAD};

use crate::format::{self, join, split, Entry, FormatError, Header, Result};

/// What a file holds, recorded under the `kind` key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// A plain model, optionally with its rankings.
    Model,
    /// Full model plus router bank and budget table.
    Elastic,
    /// A model extracted for one budget.
    Slice,
    Rankings,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Model => "model",
            Kind::Elastic => "elastic",
            Kind::Slice => "slice",
            Kind::Rankings => "rankings",
        }
    }
}

fn bad(key: &str, detail: impl ToString) -> FormatError {
    FormatError::BadValue { key: key.into(), detail: detail.to_string() }
}

fn expect_kind(h: &Header, allowed: &[Kind]) -> Result<Kind> {
    let k = h.require("kind")?;
    allowed.iter().copied().find(|a| a.name() == k).ok_or_else(|| {
        let names: Vec<_> = allowed.iter().map(|a| a.name()).collect();
        bad("kind", format!("`{k}`, expected one of {names:?}"))
    })
}

pub fn write_model_config(h: &mut Header, cfg: &ModelConfig) {
    h.set("model.d_e", cfg.d_e);
    h.set("model.g", cfg.g);
    h.set("model.d_s", cfg.d_s);
    h.set("model.vocab", cfg.vocab);
    h.set("model.conv_kernel", cfg.conv_kernel);
    h.set("model.layers", cfg.layers_string());
}

pub fn read_model_config(h: &Header) -> Result<ModelConfig> {
    let cfg = ModelConfig {
        d_e: h.parse("model.d_e")?,
        g: h.parse("model.g")?,
        d_s: h.parse("model.d_s")?,
        vocab: h.parse("model.vocab")?,
        conv_kernel: h.parse("model.conv_kernel")?,
        layers: ModelConfig::parse_layers(h.require("model.layers")?).map_err(|e| bad("model.layers", e))?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_router_config(h: &mut Header, cfg: &RouterConfig) {
    h.set("router.emb", join(&cfg.emb));
    let pairs: Vec<String> = cfg.mamba.iter().map(|(a, b)| format!("{a}x{b}")).collect();
    h.set("router.mamba", pairs.join(","));
    h.set("router.attn", join(&cfg.attn));
    h.set("router.ffn", join(&cfg.ffn));
    h.set("router.depth_min", cfg.depth_min);
    h.set("router.d_router", cfg.d_router);
    h.set("router.heterogeneous", join(&cfg.heterogeneous));
    h.set("router.integration", cfg.integration.name());
    h.set("router.leaky_slope", format!("{:?}", cfg.leaky_slope));
}

pub fn parse_pairs(s: &str) -> std::result::Result<Vec<(usize, usize)>, String> {
    split::<String>(s)
        .unwrap()
        .iter()
        .map(|p| {
            let (a, b) = p.split_once('x').ok_or_else(|| format!("`{p}` is not HEADSxCHANNELS"))?;
            Ok((a.parse().map_err(|_| format!("bad head count in `{p}`"))?, b.parse().map_err(|_| format!("bad channel count in `{p}`"))?))
        })
        .collect()
}

fn read_router_config(h: &Header) -> Result<RouterConfig> {
    let list = |key: &str| split::<usize>(h.require(key)?).map_err(|e| bad(key, e));
    let het: Vec<bool> = split(h.require("router.heterogeneous")?).map_err(|e| bad("router.heterogeneous", e))?;
    Ok(RouterConfig {
        emb: list("router.emb")?,
        mamba: parse_pairs(h.require("router.mamba")?).map_err(|e| bad("router.mamba", e))?,
        attn: list("router.attn")?,
        ffn: list("router.ffn")?,
        depth_min: h.parse("router.depth_min")?,
        d_router: h.parse("router.d_router")?,
        heterogeneous: het.try_into().map_err(|_| bad("router.heterogeneous", "expected three flags"))?,
        integration: h.parse("router.integration")?,
        leaky_slope: h.parse("router.leaky_slope")?,
    })
}

pub fn budgets_string(budgets: &[BudgetSpec]) -> String {
    let parts: Vec<String> = budgets.iter().map(|b| format!("{}:{:?}", b.label, b.target)).collect();
    parts.join(",")
}

pub fn parse_budgets(s: &str) -> std::result::Result<Vec<BudgetSpec>, String> {
    split::<String>(s)
        .unwrap()
        .iter()
        .map(|p| {
            let (label, target) = p.split_once(':').ok_or_else(|| format!("`{p}` is not LABEL:TARGET"))?;
            let target: f64 = target.parse().map_err(|_| format!("bad target in `{p}`"))?;
            BudgetSpec::new(label, target).map_err(|e| e.to_string())
        })
        .collect()
}

pub fn cost_string(c: &CostModel) -> String {
    match c.metric {
        CostMetric::ParamCount => "params".into(),
        CostMetric::MemoryBytes { bytes_per_param } => format!("bytes:{bytes_per_param}"),
    }
}

pub fn parse_cost(s: &str) -> std::result::Result<CostModel, String> {
    let metric = match s.split_once(':') {
        None if s == "params" => CostMetric::ParamCount,
        Some(("bytes", n)) => CostMetric::MemoryBytes { bytes_per_param: n.parse().map_err(|_| format!("bad byte width `{n}`"))? },
        _ => return Err(format!("unknown cost metric `{s}` (params or bytes:N)")),
    };
    Ok(CostModel { metric })
}

fn ranking_entries(r: &Ranking) -> Vec<Entry> {
    let mut out = vec![Entry::indices("rank.emb", &r.emb), Entry::indices("rank.depth", &r.depth)];
    for (j, l) in r.layers.iter().enumerate() {
        match l {
            LayerOrder::Mamba { heads, channels } => {
                out.push(Entry::indices(format!("rank.layers.{j}.heads"), heads));
                out.push(Entry::indices(format!("rank.layers.{j}.channels"), channels));
            }
            LayerOrder::Attention { heads } => out.push(Entry::indices(format!("rank.layers.{j}.heads"), heads)),
            LayerOrder::Ffn { neurons } => out.push(Entry::indices(format!("rank.layers.{j}.neurons"), neurons)),
        }
    }
    out
}

fn take(entries: &mut Vec<Entry>, name: &str) -> Result<Entry> {
    let i = entries.iter().position(|e| e.name == name).ok_or_else(|| FormatError::Directory(format!("missing tensor `{name}`")))?;
    Ok(entries.remove(i))
}

fn take_ranking(entries: &mut Vec<Entry>, cfg: &ModelConfig) -> Result<Ranking> {
    let mut idx = |name: String| take(entries, &name)?.to_indices();
    let emb = idx("rank.emb".into())?;
    let depth = idx("rank.depth".into())?;
    let mut layers = Vec::with_capacity(cfg.n_layers());
    for (j, spec) in cfg.layers.iter().enumerate() {
        layers.push(match spec {
            LayerSpec::Mamba { .. } => LayerOrder::Mamba { heads: idx(format!("rank.layers.{j}.heads"))?, channels: idx(format!("rank.layers.{j}.channels"))? },
            LayerSpec::Attention { .. } => LayerOrder::Attention { heads: idx(format!("rank.layers.{j}.heads"))? },
            LayerSpec::Ffn { .. } => LayerOrder::Ffn { neurons: idx(format!("rank.layers.{j}.neurons"))? },
        });
    }
    Ok(Ranking { emb, layers, depth })
}

fn take_model<T: Scalar>(entries: &mut Vec<Entry>, cfg: ModelConfig) -> Result<HybridModel<T>> {
    let names: Vec<String> = entries.iter().filter(|e| !e.name.starts_with("rank.") && !e.name.starts_with("router.")).map(|e| e.name.clone()).collect();
    let named = names
        .iter()
        .map(|n| {
            let e = take(entries, n)?;
            Ok((e.name.clone(), e.to_tensor::<T>()?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HybridModel::from_named(cfg, named)?)
}

fn model_entries<T: Scalar>(m: &HybridModel<T>) -> Vec<Entry> {
    m.named().map(|(n, t)| Entry::float(n, t)).collect()
}

fn dtype_name<T: Scalar>() -> &'static str {
    if T::BYTES == 4 {
        "f32"
    } else {
        "f64"
    }
}

fn no_leftovers(entries: &[Entry]) -> Result<()> {
    match entries.first() {
        Some(e) => Err(FormatError::Directory(format!("unexpected tensor `{}`", e.name))),
        None => Ok(()),
    }
}

/// A model file, with rankings when the model has been calibrated.
pub fn encode_model<T: Scalar>(model: &HybridModel<T>, ranking: Option<&Ranking>, kind: Kind, extra: &Header) -> Vec<u8> {
    let mut h = Header::new();
    h.set("kind", kind.name());
    h.set("dtype", dtype_name::<T>());
    write_model_config(&mut h, &model.config);
    h.set("params", model.param_count());
    for (k, v) in extra.iter() {
        h.set(k, v);
    }
    let mut entries = model_entries(model);
    if let Some(r) = ranking {
        entries.extend(ranking_entries(r));
    }
    format::encode(&h, &entries)
}

pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<(HybridModel<T>, Option<Ranking>, Header)> {
    let (h, mut entries) = format::decode(bytes)?;
    expect_kind(&h, &[Kind::Model, Kind::Slice, Kind::Elastic])?;
    let cfg = read_model_config(&h)?;
    let ranking = if entries.iter().any(|e| e.name == "rank.emb") { Some(take_ranking(&mut entries, &cfg)?) } else { None };
    entries.retain(|e| !e.name.starts_with("router."));
    let model = take_model(&mut entries, cfg)?;
    no_leftovers(&entries)?;
    Ok((model, ranking, h))
}

pub fn encode_rankings(ranking: &Ranking, cfg: &ModelConfig) -> Vec<u8> {
    let mut h = Header::new();
    h.set("kind", Kind::Rankings.name());
    write_model_config(&mut h, cfg);
    format::encode(&h, &ranking_entries(ranking))
}

pub fn decode_rankings(bytes: &[u8]) -> Result<(Ranking, ModelConfig)> {
    let (h, mut entries) = format::decode(bytes)?;
    expect_kind(&h, &[Kind::Rankings])?;
    let cfg = read_model_config(&h)?;
    let r = take_ranking(&mut entries, &cfg)?;
    no_leftovers(&entries)?;
    Ok((r, cfg))
}

/// Serialize an elastic checkpoint. Fails unless the router is under the
/// overhead limit; the measured ratio is recorded as `router.overhead`.
pub fn encode_checkpoint<T: Scalar>(ck: &Checkpoint<T>) -> Result<Vec<u8>> {
    ck.validate()?;
    let overhead = ck.router_overhead();
    assert!(overhead < MAX_ROUTER_OVERHEAD);
    let mut h = Header::new();
    h.set("kind", Kind::Elastic.name());
    h.set("dtype", dtype_name::<T>());
    write_model_config(&mut h, &ck.model.config);
    h.set("params", ck.model.param_count());
    write_router_config(&mut h, &ck.bank.config);
    h.set("router.params", ck.bank.param_count());
    h.set("router.overhead", format!("{overhead:?}"));
    h.set("budgets", budgets_string(&ck.budgets));
    h.set("cost", cost_string(&ck.cost));
    let a = &ck.anneal;
    h.set("anneal.tau", format!("{:?},{:?}", a.tau_start, a.tau_end));
    h.set("anneal.scale", format!("{:?},{:?}", a.scale_start, a.scale_end));
    h.set("anneal.horizon", a.horizon);
    let mut entries = model_entries(&ck.model);
    entries.extend(ranking_entries(&ck.ranking));
    entries.extend(ck.bank.param_names().into_iter().zip(&ck.bank.tensors).map(|(n, t)| Entry::float(n, t)));
    Ok(format::encode(&h, &entries))
}

fn pair(h: &Header, key: &str) -> Result<(f64, f64)> {
    let v: Vec<f64> = split(h.require(key)?).map_err(|e| bad(key, e))?;
    match v[..] {
        [a, b] => Ok((a, b)),
        _ => Err(bad(key, "expected START,END")),
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let (h, mut entries) = format::decode(bytes)?;
    expect_kind(&h, &[Kind::Elastic])?;
    let cfg = read_model_config(&h)?;
    let rcfg = read_router_config(&h)?;
    let budgets = parse_budgets(h.require("budgets")?).map_err(|e| bad("budgets", e))?;
    let cost = parse_cost(h.require("cost")?).map_err(|e| bad("cost", e))?;
    let (tau_start, tau_end) = pair(&h, "anneal.tau")?;
    let (scale_start, scale_end) = pair(&h, "anneal.scale")?;
    let anneal = Anneal { tau_start, tau_end, scale_start, scale_end, horizon: h.parse("anneal.horizon")? };
    let ranking = take_ranking(&mut entries, &cfg)?;
    let mut bank = RouterBank::<T>::init(rcfg, &cfg, budgets.len(), 0)?;
    let router_names = bank.param_names();
    let named = router_names
        .iter()
        .map(|n| {
            let e = take(&mut entries, n)?;
            Ok((e.name.clone(), e.to_tensor::<T>()?))
        })
        .collect::<Result<Vec<_>>>()?;
    bank.load_named(named)?;
    let model = take_model(&mut entries, cfg)?;
    no_leftovers(&entries)?;
    let ck = Checkpoint { model, bank, ranking, budgets, cost, anneal };
    ck.validate()?;
    Ok(ck)
}

pub fn read_header(path: &Path) -> anyhow::Result<Header> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format::decode_header(&bytes)?)
}

pub fn save_model<T: Scalar>(path: &Path, model: &HybridModel<T>, ranking: Option<&Ranking>, kind: Kind, extra: &Header) -> anyhow::Result<()> {
    write(path, &encode_model(model, ranking, kind, extra))
}

pub fn load_model<T: Scalar>(path: &Path) -> anyhow::Result<(HybridModel<T>, Option<Ranking>, Header)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_model(&bytes).with_context(|| format!("loading {}", path.display()))
}

pub fn save_rankings(path: &Path, ranking: &Ranking, cfg: &ModelConfig) -> anyhow::Result<()> {
    write(path, &encode_rankings(ranking, cfg))
}

pub fn load_rankings(path: &Path) -> anyhow::Result<(Ranking, ModelConfig)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_rankings(&bytes).with_context(|| format!("loading {}", path.display()))
}

pub fn save_checkpoint<T: Scalar>(path: &Path, ck: &Checkpoint<T>) -> anyhow::Result<()> {
    let bytes = encode_checkpoint(ck).with_context(|| format!("encoding {}", path.display()))?;
    write(path, &bytes)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> anyhow::Result<Checkpoint<T>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_checkpoint(&bytes).with_context(|| format!("loading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
