//! The steps behind each CLI command, usable without touching the filesystem.

use anyhow::Context;
use elastic_core::corpus::{Batch, Corpus, CorpusSpec};
use elastic_core::costmodel::{deployment_memory, sweep, tokens_required, Deployment, FamilyPlan, Method, SweepRow};
use elastic_core::importance::{calibrate, Calibration};
use elastic_core::model::HybridModel;
use elastic_core::numerics::Rng;
use elastic_core::router::RouterBank;
use elastic_core::slicing::{verify_equivalence, Checkpoint, EquivalenceReport};
use elastic_core::training::{eval_ce, pretrain, Trainer};

use crate::config::RunConfig;

/// Offsets separating the corpus streams of each command for one seed.
const PRETRAIN_STREAM: u64 = 100;
const CALIB_STREAM: u64 = 200;
const EVAL_STREAM: u64 = 300;
const PROMPT_STREAM: u64 = 400;

pub fn init_model(cfg: &RunConfig) -> anyhow::Result<HybridModel<f32>> {
    Ok(HybridModel::init(cfg.model.clone(), cfg.seed)?)
}

/// Next-token training of the full model on copy-heavy text: a short-context
/// phase where induction forms, then a long-context phase with long copies.
/// Returns the per-step losses of both phases.
pub fn pretrain_model(cfg: &RunConfig, model: &mut HybridModel<f32>) -> anyhow::Result<Vec<f64>> {
    let p = &cfg.pretrain;
    let rest = (1.0 - p.copy_frac) / 2.0;
    let mix = [rest, p.copy_frac, rest];
    let seed = cfg.seed.wrapping_add(PRETRAIN_STREAM);
    let mut short = Corpus::new(CorpusSpec { mix, ..CorpusSpec::stage1(seed) }, cfg.train.chain_seed)?;
    let mut losses = pretrain(model, |_| short.batch(p.batch, p.seq_len), p.steps, p.lr, p.warmup, cfg.train.clip)?;
    let long_spec = CorpusSpec { mix, ..CorpusSpec::stage2(seed.wrapping_add(1), cfg.copy_short_len) };
    let mut long = Corpus::new(long_spec, cfg.train.chain_seed)?;
    losses.extend(pretrain(model, |_| long.batch(p.long_batch, p.long_seq_len), p.long_steps, p.long_lr, p.warmup, cfg.train.clip)?);
    Ok(losses)
}

/// Token rows of the calibration stream: width batches then depth batches.
pub fn calibration_batches(cfg: &RunConfig) -> anyhow::Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    let c = &cfg.calib;
    let mut corpus = Corpus::new(CorpusSpec::stage1(cfg.seed.wrapping_add(CALIB_STREAM)), cfg.train.chain_seed)?;
    let mut take = |rows: usize| -> anyhow::Result<Vec<Vec<usize>>> {
        (0..rows / c.batch).map(|_| Ok(corpus.batch(c.batch, c.seq_len)?.tokens)).collect()
    };
    let width = take(c.samples)?;
    let depth = take(c.depth_samples)?;
    Ok((width, depth))
}

/// Rank every axis and re-sort `model` in place.
pub fn calibrate_model(cfg: &RunConfig, model: &mut HybridModel<f32>) -> anyhow::Result<Calibration> {
    let (width, depth) = calibration_batches(cfg)?;
    Ok(calibrate(model, &width, &depth, cfg.calib.batch, cfg.calib.calibration)?)
}

/// Build a trainer for a calibrated model. Budget targets scale with the
/// model's parameter count.
pub fn trainer(cfg: &RunConfig, model: HybridModel<f32>, depth_order: &[usize]) -> anyhow::Result<Trainer<f32>> {
    let budgets = cfg.budget_specs(model.param_count());
    let bank = RouterBank::init(cfg.router.clone(), &model.config, budgets.len(), cfg.seed)?;
    Ok(Trainer::new(model, bank, depth_order, budgets, cfg.train.clone(), cfg.cost)?)
}

pub fn checkpoint(tr: &Trainer<f32>, ranking: elastic_core::importance::Ranking) -> Checkpoint<f32> {
    Checkpoint {
        model: tr.model.clone(),
        bank: tr.bank.clone(),
        ranking,
        budgets: tr.budgets.clone(),
        cost: tr.cost,
        anneal: tr.anneal,
    }
}

/// Held-out batch of Stage 1 mixture text for evaluation.
pub fn eval_batch(cfg: &RunConfig) -> anyhow::Result<Batch> {
    let mut corpus = Corpus::new(CorpusSpec::stage1(cfg.seed.wrapping_add(EVAL_STREAM)), cfg.train.chain_seed)?;
    Ok(corpus.batch(cfg.eval_samples, cfg.eval_seq_len)?)
}

/// Cross-entropy of each budget's extracted model on `batch`.
pub fn eval_budgets(ck: &Checkpoint<f32>, labels: &[String], batch: &Batch) -> anyhow::Result<Vec<(String, usize, f64)>> {
    labels
        .iter()
        .map(|l| {
            let (sub, _) = ck.extract(l)?;
            Ok((l.clone(), sub.param_count(), eval_ce(&sub, batch)?))
        })
        .collect()
}

/// Uniformly random prompts over the whole vocabulary.
pub fn random_prompts(seed: u64, count: usize, len: usize, vocab: usize) -> Vec<Vec<usize>> {
    let mut rng = Rng::derive(seed, PROMPT_STREAM);
    (0..count).map(|_| (0..len).map(|_| (rng.next_u64() % vocab as u64) as usize).collect()).collect()
}

/// Masked-versus-sliced check of each budget in double precision.
pub fn verify_budgets(cfg: &RunConfig, ck: &Checkpoint<f32>, labels: &[String]) -> anyhow::Result<Vec<EquivalenceReport>> {
    let wide = Checkpoint::<f64> {
        model: ck.model.cast(),
        bank: ck.bank.cast(),
        ranking: ck.ranking.clone(),
        budgets: ck.budgets.clone(),
        cost: ck.cost,
        anneal: ck.anneal,
    };
    let prompts = random_prompts(cfg.seed, cfg.verify_prompts, cfg.verify_prompt_len, ck.model.config.vocab);
    labels.iter().map(|l| verify_equivalence(&wide, l, &prompts).with_context(|| format!("verifying budget `{l}`"))).collect()
}

/// `(quantity, method, models, value)` rows for the two closed-form tables:
/// family training tokens and deployment memory.
pub fn cost_tables() -> anyhow::Result<Vec<(&'static str, &'static str, String, f64)>> {
    let minitron = FamilyPlan { tokens_explore: Some(240e9), tokens_kd: Some(135e9), ..FamilyPlan::new(Method::Minitron, 2) };
    let elastic = FamilyPlan { tokens_elastic_kd: Some(110e9), ..FamilyPlan::new(Method::Elastic, 2) };
    let separate = FamilyPlan { sizes: vec![12e9, 9e9], ..FamilyPlan::new(Method::Minitron, 2) };
    let nested = FamilyPlan { sizes: vec![12e9, 9e9, 6e9], ..FamilyPlan::new(Method::Elastic, 3) };
    Ok(vec![
        ("tokens", "minitron", "9B+6B from 12B".into(), tokens_required(&minitron)?),
        ("tokens", "elastic", "9B+6B from 12B".into(), tokens_required(&elastic)?),
        ("memory_bytes", "minitron", "12B+9B".into(), deployment_memory(&separate, Deployment::Separate)?),
        ("memory_bytes", "elastic", "12B+9B+6B".into(), deployment_memory(&nested, Deployment::Nested)?),
    ])
}

/// Family sweep for `n = 1..=10` with the same per-model token counts.
pub fn cost_sweep() -> anyhow::Result<Vec<SweepRow>> {
    Ok(sweep(10, 240e9, 135e9, 110e9, 12e9, 2.0, 0.0)?)
}
