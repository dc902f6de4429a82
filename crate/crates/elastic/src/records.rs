//! Metrics CSV and length-prefixed corpus records.

use std::io::{self, Read, Write};

use elastic_core::corpus::{Sample, Task};
use elastic_core::training::MetricRow;

pub const METRIC_COLUMNS: [&str; 10] =
    ["step", "stage", "budget_label", "task_loss", "router_loss", "total_loss", "tau", "logit_scale", "lr_model", "lr_router"];

/// Shortest representation that reads back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_metrics<W: Write>(w: W, rows: &[MetricRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRIC_COLUMNS)?;
    for r in rows {
        out.write_record([
            r.step.to_string(),
            r.stage.to_string(),
            r.budget.clone(),
            num(r.task_loss),
            num(r.router_loss),
            num(r.total_loss),
            num(r.tau),
            num(r.logit_scale),
            num(r.lr_model),
            num(r.lr_router),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(r: R) -> anyhow::Result<Vec<MetricRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    anyhow::ensure!(header == METRIC_COLUMNS, "unexpected metrics columns {header:?}");
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| -> anyhow::Result<f64> { Ok(rec[i].parse()?) };
        rows.push(MetricRow {
            step: rec[0].parse()?,
            stage: rec[1].parse()?,
            budget: rec[2].to_string(),
            task_loss: f(3)?,
            router_loss: f(4)?,
            total_loss: f(5)?,
            tau: f(6)?,
            logit_scale: f(7)?,
            lr_model: f(8)?,
            lr_router: f(9)?,
        });
    }
    Ok(rows)
}

/// Write `u32 len | u8 task | u32 task arg | tokens` per sample, where `len`
/// counts everything after itself.
pub fn write_samples<W: Write>(mut w: W, samples: &[Sample]) -> io::Result<()> {
    for s in samples {
        let (code, arg) = match s.task {
            Task::Markov => (0u8, 0u32),
            Task::Copy { k } => (1, k as u32),
            Task::Modular => (2, 0),
        };
        w.write_all(&((s.tokens.len() + 5) as u32).to_le_bytes())?;
        w.write_all(&[code])?;
        w.write_all(&arg.to_le_bytes())?;
        w.write_all(&s.tokens)?;
    }
    Ok(())
}

pub fn read_samples<R: Read>(mut r: R) -> io::Result<Vec<Sample>> {
    let bad = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
    let mut out = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e),
        }
        let len = u32::from_le_bytes(len) as usize;
        if len < 5 {
            return Err(bad(format!("record {} is {len} bytes, shorter than its header", out.len())));
        }
        let mut rec = vec![0u8; len];
        r.read_exact(&mut rec)?;
        let arg = u32::from_le_bytes(rec[1..5].try_into().unwrap()) as usize;
        let task = match rec[0] {
            0 => Task::Markov,
            1 => Task::Copy { k: arg },
            2 => Task::Modular,
            c => return Err(bad(format!("record {}: unknown task code {c}", out.len()))),
        };
        out.push(Sample { task, tokens: rec[5..].to_vec() });
    }
    Ok(out)
}
