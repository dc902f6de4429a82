use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::losses::{ce_loss, task_loss, total_loss, TeacherMode};
use super::optim::{warmup_lr, Adam, Sgd};
use super::sampler::BudgetSampler;
use crate::corpus::{Batch, Corpus, CorpusSpec};
use crate::error::{Error, Result};
use crate::model::{GraphMasks, HybridModel};
use crate::numerics::{Rng, Scalar, Tape, Tensor, Var};
use crate::router::{router_loss, Anneal, BudgetSpec, Candidates, CostModel, RouteParams, RouterBank, RouterOutput};

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub seq_len: usize,
    pub batch: usize,
    /// Training tokens; the stage runs `tokens / (batch · seq_len)` steps.
    pub tokens: usize,
    /// Budget sampling weights; `None` samples uniformly.
    pub weights: Option<Vec<f64>>,
    pub corpus: CorpusSpec,
}

impl StageConfig {
    pub fn steps(&self) -> usize {
        self.tokens / (self.batch * self.seq_len).max(1)
    }

    pub fn sampler(&self, n_budgets: usize) -> Result<BudgetSampler> {
        match &self.weights {
            None => BudgetSampler::uniform(n_budgets),
            Some(w) if w.len() != n_budgets => Err(Error::Train(format!("{} weights for {n_budgets} budgets", w.len()))),
            Some(w) => BudgetSampler::weighted(w.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage1: StageConfig,
    pub stage2: Option<StageConfig>,
    pub lr_model: f64,
    pub lr_router: f64,
    pub warmup: usize,
    pub lambda: f64,
    pub kd_temperature: f64,
    pub teacher: TeacherMode,
    pub momentum: f64,
    pub clip: Option<f64>,
    /// Steps over which τ and the logit scale anneal; defaults to the
    /// Stage 1 length.
    pub anneal_horizon: Option<usize>,
    pub log_every: usize,
    pub seed: u64,
    /// Seed of the Markov chain shared by every corpus stream.
    pub chain_seed: u64,
}

impl TrainConfig {
    /// Short desk-scale run on the toy model.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            stage1: StageConfig { seq_len: 64, batch: 8, tokens: 64 * 8 * 1200, weights: None, corpus: CorpusSpec::stage1(seed) },
            stage2: Some(StageConfig {
                seq_len: 256,
                batch: 2,
                tokens: 256 * 2 * 800,
                weights: Some(alloc::vec![0.5, 0.3, 0.2]),
                corpus: CorpusSpec::stage2(seed.wrapping_add(1), 64),
            }),
            lr_model: 1e-3,
            lr_router: 1e-2,
            warmup: 60,
            lambda: 1.0,
            kd_temperature: 1.0,
            teacher: TeacherMode::Frozen,
            momentum: 0.9,
            clip: Some(1.0),
            anneal_horizon: None,
            log_every: 1,
            seed,
            chain_seed: 0,
        }
    }

    pub fn validate(&self, n_budgets: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Train(m));
        if !(self.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.kd_temperature > 0.0) {
            return bad(format!("KD temperature must be positive, got {}", self.kd_temperature));
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        if !(self.lr_model >= 0.0 && self.lr_router >= 0.0) {
            return bad("learning rates must be nonnegative".into());
        }
        for s in core::iter::once(&self.stage1).chain(&self.stage2) {
            s.corpus.validate()?;
            s.sampler(n_budgets)?;
            if s.seq_len < crate::corpus::MIN_LEN || s.batch == 0 {
                return bad(format!("stage needs seq_len >= {} and batch > 0", crate::corpus::MIN_LEN));
            }
        }
        if let Some(s2) = &self.stage2 {
            if s2.seq_len <= self.stage1.seq_len {
                return bad(format!("Stage 2 length {} must exceed Stage 1 length {}", s2.seq_len, self.stage1.seq_len));
            }
        }
        Ok(())
    }

    pub fn anneal(&self) -> Anneal {
        Anneal::new(self.anneal_horizon.unwrap_or_else(|| self.stage1.steps()))
    }
}

/// One logged training step.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub stage: u8,
    pub budget: String,
    pub task_loss: f64,
    pub router_loss: f64,
    pub total_loss: f64,
    pub tau: f64,
    pub logit_scale: f64,
    pub lr_model: f64,
    pub lr_router: f64,
}

/// Losses of one budget on one batch, recorded on a tape.
pub struct StepLosses {
    pub task: Var,
    pub router: Var,
    pub total: Var,
    pub route: RouterOutput,
}

/// Joint elastic training of a model and its router bank.
#[derive(Clone)]
pub struct Trainer<T: Scalar> {
    pub model: HybridModel<T>,
    pub bank: RouterBank<T>,
    /// Frozen copy of the model at construction (FROZEN mode only).
    pub teacher: Option<HybridModel<T>>,
    pub cands: Candidates,
    pub budgets: Vec<BudgetSpec>,
    pub cfg: TrainConfig,
    pub cost: CostModel,
    pub anneal: Anneal,
    pub step: usize,
    pub rows: Vec<MetricRow>,
    full_cost: f64,
    opt_model: Sgd<T>,
    opt_router: Sgd<T>,
}

fn noise_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (step as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

impl<T: Scalar> Trainer<T> {
    pub fn new(
        model: HybridModel<T>,
        bank: RouterBank<T>,
        depth_order: &[usize],
        budgets: Vec<BudgetSpec>,
        cfg: TrainConfig,
        cost: CostModel,
    ) -> Result<Self> {
        if budgets.len() != bank.n_targets {
            return Err(Error::Train(format!("{} budgets for a router with {} targets", budgets.len(), bank.n_targets)));
        }
        cfg.validate(budgets.len())?;
        let cands = Candidates::new(&model.config, &bank.config, depth_order)?;
        let teacher = (cfg.teacher == TeacherMode::Frozen).then(|| model.clone());
        let full_cost = cost.cost(&model.config, &crate::model::Selection::full(&model.config))?;
        let opt_model = Sgd::new(&model.tensors, cfg.momentum, cfg.clip);
        let opt_router = Sgd::new(&bank.tensors, cfg.momentum, cfg.clip);
        Ok(Trainer { anneal: cfg.anneal(), model, bank, teacher, cands, budgets, cfg, cost, step: 0, rows: Vec::new(), full_cost, opt_model, opt_router })
    }

    pub fn budget_is_full(&self, budget: usize) -> bool {
        self.budgets[budget].target >= self.full_cost
    }

    /// Record every loss of `budget` on `tape`. `teacher_logits` is
    /// required in FROZEN mode.
    pub fn losses(
        &self,
        tape: &mut Tape<T>,
        model_vars: &[Var],
        bank_vars: &[Var],
        batch: &Batch,
        budget: usize,
        route: RouteParams,
        teacher_logits: Option<&Tensor<T>>,
    ) -> Result<StepLosses> {
        let cfg = &self.model.config;
        let out = self.bank.route(tape, bank_vars, cfg, &self.cands, budget, route, &self.cost)?;
        let student = self.model.forward(tape, model_vars, &out.masks, &batch.tokens, batch.batch, None)?;
        let teacher = match (self.cfg.teacher, teacher_logits) {
            (TeacherMode::Frozen, Some(t)) => tape.constant(t.clone()),
            (TeacherMode::Frozen, None) => return Err(Error::Train("frozen teacher logits missing".into())),
            (TeacherMode::Trainable { .. }, _) => {
                let none = GraphMasks::none(cfg.n_layers());
                self.model.forward(tape, model_vars, &none, &batch.tokens, batch.batch, None)?
            }
        };
        let task = task_loss(tape, student, teacher, &batch.targets, self.cfg.teacher, self.cfg.kd_temperature, self.budget_is_full(budget))?;
        let router = router_loss(tape, out.cost, self.budgets[budget].target);
        let total = total_loss(tape, task, router, self.cfg.lambda)?;
        Ok(StepLosses { task, router, total, route: out })
    }

    pub fn teacher_logits(&self, batch: &Batch) -> Result<Option<Tensor<T>>> {
        self.teacher.as_ref().map(|t| t.logits_full(&batch.tokens, batch.batch)).transpose()
    }

    /// One optimization step on `batch` for `budget`.
    pub fn train_step(&mut self, stage: u8, batch: &Batch, budget: usize) -> Result<MetricRow> {
        let (tau, logit_scale) = self.anneal.at(self.step);
        let lr_model = warmup_lr(self.cfg.lr_model, self.step, self.cfg.warmup);
        let lr_router = warmup_lr(self.cfg.lr_router, self.step, self.cfg.warmup);
        let teacher = self.teacher_logits(batch)?;
        let mut tape = Tape::new();
        let mv = self.model.bind(&mut tape, true);
        let bv = self.bank.bind(&mut tape, true);
        let route = RouteParams { tau, logit_scale, noise_seed: Some(noise_seed(self.cfg.seed, self.step)) };
        let l = self.losses(&mut tape, &mv, &bv, batch, budget, route, teacher.as_ref())?;
        let scalar = |v: Var| tape.value(v).data()[0].as_f64();
        let row = MetricRow {
            step: self.step,
            stage,
            budget: self.budgets[budget].label.clone(),
            task_loss: scalar(l.task),
            router_loss: scalar(l.router),
            total_loss: scalar(l.total),
            tau,
            logit_scale,
            lr_model,
            lr_router,
        };
        if !row.total_loss.is_finite() {
            return Err(Error::Diverged { step: self.step, stage });
        }
        let grads = tape.backward(l.total)?;
        let gm: Vec<&[T]> = mv.iter().map(|&v| grads.get(v).expect("model leaf")).collect();
        let gr: Vec<&[T]> = bv.iter().map(|&v| grads.get(v).expect("router leaf")).collect();
        self.opt_model.step(&mut self.model.tensors, &gm, lr_model);
        self.opt_router.step(&mut self.bank.tensors, &gr, lr_router);
        if self.step % self.cfg.log_every == 0 {
            self.rows.push(row.clone());
        }
        self.step += 1;
        Ok(row)
    }

    /// Run Stage 1 or Stage 2 to completion. A missing Stage 2 is a no-op.
    pub fn run_stage(&mut self, stage: u8) -> Result<()> {
        let sc = match stage {
            1 => self.cfg.stage1.clone(),
            2 => match &self.cfg.stage2 {
                Some(s) => s.clone(),
                None => return Ok(()),
            },
            _ => return Err(Error::Train(format!("no stage {stage}"))),
        };
        let mut corpus = Corpus::new(sc.corpus.clone(), self.cfg.chain_seed)?;
        let sampler = sc.sampler(self.budgets.len())?;
        let mut rng = Rng::derive(self.cfg.seed, 0x7374_6700 + stage as u64);
        for _ in 0..sc.steps() {
            let batch = corpus.batch(sc.batch, sc.seq_len)?;
            let budget = sampler.sample(&mut rng);
            self.train_step(stage, &batch, budget)?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_stage(1)?;
        self.run_stage(2)
    }
}

/// Full-model next-token training with Adam, used to give the teacher
/// something to distill. Returns the loss of every step.
pub fn pretrain<T: Scalar>(
    model: &mut HybridModel<T>,
    mut next_batch: impl FnMut(usize) -> Result<Batch>,
    steps: usize,
    lr: f64,
    warmup: usize,
    clip: Option<f64>,
) -> Result<Vec<f64>> {
    let mut opt = Adam::new(&model.tensors, clip);
    let none = GraphMasks::none(model.config.n_layers());
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = next_batch(step)?;
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, true);
        let logits = model.forward(&mut tape, &vars, &none, &batch.tokens, batch.batch, None)?;
        let loss = ce_loss(&mut tape, logits, &batch.targets)?;
        let value = tape.value(loss).data()[0].as_f64();
        if !value.is_finite() {
            return Err(Error::Diverged { step, stage: 0 });
        }
        let grads = tape.backward(loss)?;
        let g: Vec<&[T]> = vars.iter().map(|&v| grads.get(v).expect("model leaf")).collect();
        opt.step(&mut model.tensors, &g, warmup_lr(lr, step, warmup));
        losses.push(value);
    }
    Ok(losses)
}

/// Mean CE of `model` (unmasked) on `batch`.
pub fn eval_ce<T: Scalar>(model: &HybridModel<T>, batch: &Batch) -> Result<f64> {
    let mut tape = Tape::new();
    let logits = model.logits_full(&batch.tokens, batch.batch)?;
    let l = tape.constant(logits);
    let ce = ce_loss(&mut tape, l, &batch.targets)?;
    Ok(tape.value(ce).data()[0].as_f64())
}
