use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerSpec, ModelConfig};

/// Elastic axes, each with its own router.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    Emb,
    Mamba,
    Attention,
    Ffn,
    Depth,
}

impl Axis {
    pub const ALL: [Axis; 5] = [Axis::Emb, Axis::Mamba, Axis::Attention, Axis::Ffn, Axis::Depth];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Emb => "emb",
            Axis::Mamba => "mamba",
            Axis::Attention => "attn",
            Axis::Ffn => "ffn",
            Axis::Depth => "depth",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Layer kind whose width this axis controls.
    pub fn layer_kind(self) -> Option<LayerKind> {
        match self {
            Axis::Mamba => Some(LayerKind::Mamba),
            Axis::Attention => Some(LayerKind::Attention),
            Axis::Ffn => Some(LayerKind::Ffn),
            Axis::Emb | Axis::Depth => None,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Axis::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| Error::UnknownAxis(s.into()))
    }
}

/// How router probabilities become training masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integration {
    /// Mode 1: mask of the argmax candidate scaled by its logit.
    Hard,
    /// Mode 2: probability-weighted sum of candidate masks.
    Soft,
}

impl Integration {
    pub fn name(self) -> &'static str {
        match self {
            Integration::Hard => "mode1",
            Integration::Soft => "mode2",
        }
    }
}

impl FromStr for Integration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mode1" | "hard" => Ok(Integration::Hard),
            "mode2" | "soft" => Ok(Integration::Soft),
            _ => Err(Error::Config(format!("unknown integration mode `{s}`"))),
        }
    }
}

/// Candidate retained counts per axis and router shape.
#[derive(Clone, Debug, PartialEq)]
pub struct RouterConfig {
    pub emb: Vec<usize>,
    /// `(heads, head channels)` pairs for Mamba layers.
    pub mamba: Vec<(usize, usize)>,
    pub attn: Vec<usize>,
    pub ffn: Vec<usize>,
    /// Fewest layers the depth router may select.
    pub depth_min: usize,
    pub d_router: usize,
    /// Per-layer (heterogeneous) choices for the Mamba, attention and FFN axes.
    pub heterogeneous: [bool; 3],
    pub integration: Integration,
    pub leaky_slope: f64,
}

/// Additive logit offset that rules out depth choices below the minimum.
pub const DEPTH_MASK_OFFSET: f64 = -1e9;

impl RouterConfig {
    pub fn toy() -> Self {
        RouterConfig {
            emb: vec![32, 48, 64],
            mamba: vec![(4, 8), (6, 12), (8, 16)],
            attn: vec![2, 3, 4],
            ffn: vec![128, 192, 256],
            depth_min: 4,
            d_router: 64,
            heterogeneous: [false; 3],
            integration: Integration::Soft,
            leaky_slope: 0.01,
        }
    }

    pub fn is_heterogeneous(&self, axis: Axis) -> bool {
        match axis {
            Axis::Mamba => self.heterogeneous[0],
            Axis::Attention => self.heterogeneous[1],
            Axis::Ffn => self.heterogeneous[2],
            Axis::Emb | Axis::Depth => false,
        }
    }

    /// Number of candidates per decision on `axis`.
    pub fn choices(&self, axis: Axis, n_layers: usize) -> usize {
        match axis {
            Axis::Emb => self.emb.len(),
            Axis::Mamba => self.mamba.len(),
            Axis::Attention => self.attn.len(),
            Axis::Ffn => self.ffn.len(),
            Axis::Depth => n_layers,
        }
    }

    /// Check candidate sets against the model they will route.
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let ascending = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]) && !v.is_empty() && v[0] > 0;
        let bad = |what: String| Error::Config(format!("router: {what}"));
        if self.d_router == 0 {
            return Err(bad("d_router must be positive".into()));
        }
        if !ascending(&self.emb) || *self.emb.last().unwrap() > model.d_e {
            return Err(bad(format!("embedding candidates {:?} must ascend within 1..={}", self.emb, model.d_e)));
        }
        let n = model.n_layers();
        if self.depth_min == 0 || self.depth_min > n {
            return Err(bad(format!("depth_min {} outside 1..={n}", self.depth_min)));
        }
        for l in &model.layers {
            match *l {
                LayerSpec::Mamba { heads, head_dim } => {
                    let h: Vec<usize> = self.mamba.iter().map(|p| p.0).collect();
                    let c: Vec<usize> = self.mamba.iter().map(|p| p.1).collect();
                    if !ascending(&h) || !ascending(&c) || h.last() > Some(&heads) || c.last() > Some(&head_dim) {
                        return Err(bad(format!("Mamba candidates {:?} must ascend within {l}", self.mamba)));
                    }
                    if h.iter().any(|&x| x % model.g != 0) {
                        return Err(bad(format!("Mamba head candidates {h:?} must be multiples of {} groups", model.g)));
                    }
                }
                LayerSpec::Attention { heads, .. } => {
                    if !ascending(&self.attn) || self.attn.last() > Some(&heads) {
                        return Err(bad(format!("attention candidates {:?} must ascend within 1..={heads}", self.attn)));
                    }
                }
                LayerSpec::Ffn { hidden } => {
                    if !ascending(&self.ffn) || self.ffn.last() > Some(&hidden) {
                        return Err(bad(format!("FFN candidates {:?} must ascend within 1..={hidden}", self.ffn)));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One training budget: a label and a target cost.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetSpec {
    pub label: String,
    pub target: f64,
}

impl BudgetSpec {
    pub fn new(label: impl Into<String>, target: f64) -> Result<Self> {
        if !(target > 0.0) {
            return Err(Error::Config(format!("budget target must be positive, got {target}")));
        }
        Ok(BudgetSpec { label: label.into(), target })
    }
}

/// Linear temperature and logit-scale schedules over a fixed horizon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anneal {
    pub tau_start: f64,
    pub tau_end: f64,
    pub scale_start: f64,
    pub scale_end: f64,
    pub horizon: usize,
}

impl Anneal {
    pub fn new(horizon: usize) -> Self {
        Anneal { tau_start: 1.0, tau_end: 0.05, scale_start: 1.0, scale_end: 10.0, horizon }
    }

    /// `(τ, logit_scale)` at `step`; constant after the horizon.
    pub fn at(&self, step: usize) -> (f64, f64) {
        let f = if self.horizon == 0 { 1.0 } else { (step as f64 / self.horizon as f64).min(1.0) };
        (
            self.tau_start * (1.0 - f) + self.tau_end * f,
            self.scale_start * (1.0 - f) + self.scale_end * f,
        )
    }
}
