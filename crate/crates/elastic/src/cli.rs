use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use elastic_core::slicing::MAX_ROUTER_OVERHEAD;

use crate::checkpoint::{self, Kind};
use crate::config::RunConfig;
use crate::format::Header;
use crate::pipeline;
use crate::records;

#[derive(Parser, Debug)]
#[command(name = "elastic", version, about = "Train nested elastic hybrid models and slice them per budget")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Next-token training of the full model (the distillation teacher).
    Pretrain(Common),
    /// Rank every elastic axis, re-sort the model and write rankings.
    Calibrate(Common),
    /// Two-stage elastic distillation; writes the elastic checkpoint and metrics.
    Train(Common),
    /// Extract sub-models from the elastic checkpoint.
    Slice(Common),
    /// Check masked and sliced forwards agree for each budget.
    Verify(Common),
    /// Held-out cross-entropy of each budget.
    Eval(Common),
    /// Training-token and deployment-memory tables plus the family sweep.
    ReportCosts(Common),
    /// Print every config key with its default.
    Template,
}

#[derive(Args, Debug)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict slice, verify and eval to one budget label.
    #[arg(long)]
    pub budget: Option<String>,
    /// Run directory; overrides `paths.run_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Files inside a run directory.
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn pretrained(&self) -> PathBuf {
        self.0.join("pretrained.ckpt")
    }
    pub fn rankings(&self) -> PathBuf {
        self.0.join("rankings.bin")
    }
    pub fn base(&self) -> PathBuf {
        self.0.join("base.ckpt")
    }
    pub fn elastic(&self) -> PathBuf {
        self.0.join("elastic.ckpt")
    }
    pub fn metrics(&self) -> PathBuf {
        self.0.join("metrics.csv")
    }
    pub fn slice(&self, label: &str) -> PathBuf {
        self.0.join("slices").join(format!("{label}.ckpt"))
    }
    pub fn report(&self, name: &str) -> PathBuf {
        self.0.join("reports").join(name)
    }
}

fn require(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("missing {what}: {} (run the earlier command first)", path.display());
    }
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn setup(c: &Common) -> anyhow::Result<(RunConfig, RunDir)> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.set_seed(s);
    }
    let dir = c.out.clone().unwrap_or_else(|| cfg.run_dir.clone());
    Ok((cfg, RunDir(dir)))
}

fn labels(cfg: &RunConfig, only: &Option<String>) -> anyhow::Result<Vec<String>> {
    match only {
        Some(l) if cfg.budgets.iter().any(|(b, _)| b == l) => Ok(vec![l.clone()]),
        Some(l) => bail!("budget `{l}` is not one of the trained budgets"),
        None => Ok(cfg.budgets.iter().map(|(b, _)| b.clone()).collect()),
    }
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Template => {
            print!("{}", RunConfig::template());
            Ok(ExitCode::SUCCESS)
        }
        Command::Pretrain(c) => {
            let (cfg, dir) = setup(&c)?;
            let mut model = pipeline::init_model(&cfg)?;
            let losses = pipeline::pretrain_model(&cfg, &mut model)?;
            checkpoint::save_model(&dir.pretrained(), &model, None, Kind::Model, &Header::new())?;
            let mut w = create(&dir.report("pretrain.csv"))?;
            writeln!(w, "step,loss")?;
            for (i, l) in losses.iter().enumerate() {
                writeln!(w, "{i},{l:?}")?;
            }
            w.flush()?;
            if let Some(last) = losses.last() {
                println!("pretrained {} steps, final loss {last:.4}", losses.len());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Calibrate(c) => {
            let (cfg, dir) = setup(&c)?;
            let mut model = match (&cfg.base_model, dir.pretrained()) {
                (Some(p), _) => checkpoint::load_model::<f32>(p)?.0,
                (None, p) if p.is_file() => checkpoint::load_model::<f32>(&p)?.0,
                _ => pipeline::init_model(&cfg)?,
            };
            if model.config != cfg.model {
                bail!("base model architecture does not match the `model.*` config keys");
            }
            let cal = pipeline::calibrate_model(&cfg, &mut model)?;
            checkpoint::save_rankings(&dir.rankings(), &cal.ranking, &model.config)?;
            checkpoint::save_model(&dir.base(), &model, Some(&cal.ranking), Kind::Model, &Header::new())?;
            println!("depth order {:?}", cal.ranking.depth);
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(c) => {
            let (cfg, dir) = setup(&c)?;
            require(&dir.base(), "base checkpoint")?;
            require(&dir.rankings(), "rankings file")?;
            let (model, _, _) = checkpoint::load_model::<f32>(&dir.base())?;
            let (ranking, rcfg) = checkpoint::load_rankings(&dir.rankings())?;
            if rcfg != model.config {
                bail!("rankings were computed for a different architecture");
            }
            let mut tr = pipeline::trainer(&cfg, model, &ranking.depth)?;
            tr.run()?;
            let ck = pipeline::checkpoint(&tr, ranking);
            checkpoint::save_checkpoint(&dir.elastic(), &ck)?;
            let mut w = create(&dir.metrics())?;
            records::write_metrics(&mut w, &tr.rows)?;
            w.flush()?;
            println!("trained {} steps; router overhead {:.4}", tr.step, ck.router_overhead());
            Ok(ExitCode::SUCCESS)
        }
        Command::Slice(c) => {
            let (cfg, dir) = setup(&c)?;
            require(&dir.elastic(), "elastic checkpoint")?;
            let ck = checkpoint::load_checkpoint::<f32>(&dir.elastic())?;
            for label in labels(&cfg, &c.budget)? {
                let (sub, sel) = ck.extract(&label)?;
                let mut extra = Header::new();
                extra.set("slice.budget", &label);
                extra.set("slice.layers", crate::format::join(&sel.kept_layers()));
                checkpoint::save_model(&dir.slice(&label), &sub, None, Kind::Slice, &extra)?;
                println!("{label}: {} parameters, layers {:?}", sub.param_count(), sel.kept_layers());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify(c) => {
            let (cfg, dir) = setup(&c)?;
            require(&dir.elastic(), "elastic checkpoint")?;
            let ck = checkpoint::load_checkpoint::<f32>(&dir.elastic())?;
            let header = checkpoint::read_header(&dir.elastic())?;
            let overhead: f64 = header.parse("router.overhead")?;
            let reports = pipeline::verify_budgets(&cfg, &ck, &labels(&cfg, &c.budget)?)?;
            let mut w = create(&dir.report("verify.csv"))?;
            writeln!(w, "budget,prompts,max_rel_diff,threshold,pass")?;
            for r in &reports {
                writeln!(w, "{},{},{:?},{:?},{}", r.budget, r.prompts, r.max_rel_diff, r.threshold, r.pass)?;
                println!("{}: max relative diff {:.3e} ({})", r.budget, r.max_rel_diff, if r.pass { "pass" } else { "FAIL" });
            }
            w.flush()?;
            let ok = reports.iter().all(|r| r.pass) && overhead < MAX_ROUTER_OVERHEAD;
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Eval(c) => {
            let (cfg, dir) = setup(&c)?;
            require(&dir.elastic(), "elastic checkpoint")?;
            let ck = checkpoint::load_checkpoint::<f32>(&dir.elastic())?;
            let batch = pipeline::eval_batch(&cfg)?;
            let rows = pipeline::eval_budgets(&ck, &labels(&cfg, &c.budget)?, &batch)?;
            let mut w = create(&dir.report("eval.csv"))?;
            writeln!(w, "budget,params,ce")?;
            for (l, p, ce) in &rows {
                writeln!(w, "{l},{p},{ce:?}")?;
                println!("{l}: {p} parameters, CE {ce:.4}");
            }
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ReportCosts(c) => {
            let (_, dir) = setup(&c)?;
            let mut w = create(&dir.report("costs.csv"))?;
            writeln!(w, "n,method,tokens,memory_bytes")?;
            for r in pipeline::cost_sweep()? {
                writeln!(w, "{},{},{:?},{:?}", r.n, r.method.name(), r.tokens, r.memory_bytes)?;
            }
            w.flush()?;
            let mut w = create(&dir.report("cost_tables.csv"))?;
            writeln!(w, "quantity,method,models,value")?;
            for (q, m, models, v) in pipeline::cost_tables()? {
                writeln!(w, "{q},{m},{models},{v:?}")?;
                println!("{q:>12} {m:>8} {models:>12}: {v:.4e}");
            }
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
