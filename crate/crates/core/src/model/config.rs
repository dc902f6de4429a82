use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Mamba,
    Attention,
    Ffn,
}

impl LayerKind {
    pub fn symbol(self) -> char {
        match self {
            LayerKind::Mamba => 'M',
            LayerKind::Attention => 'A',
            LayerKind::Ffn => 'F',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            'M' | 'm' => Some(LayerKind::Mamba),
            'A' | 'a' => Some(LayerKind::Attention),
            'F' | 'f' => Some(LayerKind::Ffn),
            _ => None,
        }
    }
}

/// Width of one layer. Full models use the same widths for every layer of a
/// kind; sliced models may differ per layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    Mamba { heads: usize, head_dim: usize },
    Attention { heads: usize, head_dim: usize },
    Ffn { hidden: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Mamba { .. } => LayerKind::Mamba,
            LayerSpec::Attention { .. } => LayerKind::Attention,
            LayerSpec::Ffn { .. } => LayerKind::Ffn,
        }
    }

    /// Length of the layer's inner width mask.
    pub fn inner_width(&self) -> usize {
        match *self {
            LayerSpec::Mamba { heads, head_dim } | LayerSpec::Attention { heads, head_dim } => heads * head_dim,
            LayerSpec::Ffn { hidden } => hidden,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Mamba { heads, head_dim } => write!(f, "M:{heads}x{head_dim}"),
            LayerSpec::Attention { heads, head_dim } => write!(f, "A:{heads}x{head_dim}"),
            LayerSpec::Ffn { hidden } => write!(f, "F:{hidden}"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad layer spec `{s}`"));
        let (kind, dims) = s.split_once(':').ok_or_else(bad)?;
        let mut chars = kind.chars();
        let kind = chars.next().and_then(LayerKind::from_symbol).ok_or_else(bad)?;
        if chars.next().is_some() {
            return Err(bad());
        }
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        Ok(match kind {
            LayerKind::Ffn => LayerSpec::Ffn { hidden: num(dims)? },
            _ => {
                let (h, d) = dims.split_once('x').ok_or_else(bad)?;
                let (heads, head_dim) = (num(h)?, num(d)?);
                if kind == LayerKind::Mamba {
                    LayerSpec::Mamba { heads, head_dim }
                } else {
                    LayerSpec::Attention { heads, head_dim }
                }
            }
        })
    }
}

/// Per-kind widths of the full model, from which a uniform layer stack is built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dims {
    pub d_e: usize,
    pub d_int: usize,
    pub n_h: usize,
    pub d_h: usize,
    pub m_h: usize,
    pub m_d: usize,
    pub g: usize,
    pub d_s: usize,
    pub vocab: usize,
}

impl Dims {
    pub fn toy() -> Self {
        Dims { d_e: 64, d_int: 256, n_h: 4, d_h: 16, m_h: 8, m_d: 16, g: 2, d_s: 16, vocab: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_e: usize,
    /// Mamba groups sharing one B/C projection.
    pub g: usize,
    /// SSM state size.
    pub d_s: usize,
    pub vocab: usize,
    pub conv_kernel: usize,
    pub layers: Vec<LayerSpec>,
}

pub const CONV_KERNEL: usize = 4;
pub const NORM_EPS: f64 = 1e-5;

impl ModelConfig {
    pub fn uniform(dims: &Dims, pattern: &[LayerKind]) -> Result<Self> {
        let layers = pattern
            .iter()
            .map(|k| match k {
                LayerKind::Mamba => LayerSpec::Mamba { heads: dims.m_h, head_dim: dims.m_d },
                LayerKind::Attention => LayerSpec::Attention { heads: dims.n_h, head_dim: dims.d_h },
                LayerKind::Ffn => LayerSpec::Ffn { hidden: dims.d_int },
            })
            .collect();
        let cfg = ModelConfig {
            d_e: dims.d_e,
            g: dims.g,
            d_s: dims.d_s,
            vocab: dims.vocab,
            conv_kernel: CONV_KERNEL,
            layers,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default desk-scale hybrid: `M,M,A,F` twice.
    pub fn toy() -> Self {
        ModelConfig::uniform(&Dims::toy(), &parse_pattern("MMAFMMAF").unwrap()).unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn pattern(&self) -> Vec<LayerKind> {
        self.layers.iter().map(LayerSpec::kind).collect()
    }

    pub fn pattern_string(&self) -> String {
        self.layers.iter().map(|l| l.kind().symbol()).collect()
    }

    /// Indices of layers of the given kind, in stack order.
    pub fn layers_of(&self, kind: LayerKind) -> Vec<usize> {
        (0..self.layers.len()).filter(|&j| self.layers[j].kind() == kind).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("d_e", self.d_e), ("g", self.g), ("d_s", self.d_s), ("vocab", self.vocab), ("conv_kernel", self.conv_kernel)];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        for (j, l) in self.layers.iter().enumerate() {
            match *l {
                LayerSpec::Mamba { heads, head_dim } => {
                    if heads == 0 || head_dim == 0 {
                        return Err(Error::Config(format!("layer {j}: empty Mamba layer {l}")));
                    }
                    if heads % self.g != 0 {
                        return Err(Error::Config(format!("layer {j}: {heads} Mamba heads not divisible by {} groups", self.g)));
                    }
                }
                LayerSpec::Attention { heads, head_dim } => {
                    if heads == 0 || head_dim == 0 {
                        return Err(Error::Config(format!("layer {j}: empty attention layer {l}")));
                    }
                }
                LayerSpec::Ffn { hidden } => {
                    if hidden == 0 {
                        return Err(Error::Config(format!("layer {j}: empty FFN layer")));
                    }
                }
            }
        }
        Ok(())
    }

    /// `M:8x16,A:4x16,F:256,...`
    pub fn layers_string(&self) -> String {
        let parts: Vec<String> = self.layers.iter().map(|l| format!("{l}")).collect();
        parts.join(",")
    }

    pub fn parse_layers(s: &str) -> Result<Vec<LayerSpec>> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|p| p.trim().parse()).collect()
    }
}

pub fn parse_pattern(s: &str) -> Result<Vec<LayerKind>> {
    s.chars()
        .filter(|c| !matches!(c, ',' | ' '))
        .map(|c| LayerKind::from_symbol(c).ok_or_else(|| Error::Config(format!("unknown layer kind `{c}` in pattern"))))
        .collect()
}
