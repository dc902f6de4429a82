use num_traits::Float as _;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::config::{LayerSpec, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Scalar, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormParams {
    pub weight: usize,
    pub bias: usize,
}

/// Indices into the parameter list for one Mamba layer. Projections are
/// stored input-major (`[d_e, out]`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MambaParams {
    pub norm: NormParams,
    pub in_z: usize,
    pub in_x: usize,
    pub in_b: usize,
    pub in_c: usize,
    pub in_dt: usize,
    pub a_log: usize,
    pub d: usize,
    pub conv_x: usize,
    pub conv_b: usize,
    pub conv_c: usize,
    pub out_norm: usize,
    pub out: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionParams {
    pub norm: NormParams,
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub o: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FfnParams {
    pub norm: NormParams,
    pub up: usize,
    pub down: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerParams {
    Mamba(MambaParams),
    Attention(AttentionParams),
    Ffn(FfnParams),
}

impl LayerParams {
    pub fn norm(&self) -> NormParams {
        match self {
            LayerParams::Mamba(p) => p.norm,
            LayerParams::Attention(p) => p.norm,
            LayerParams::Ffn(p) => p.norm,
        }
    }
}

/// Named parameter inventory derived from a config.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub params: Vec<ParamInfo>,
    pub embed: usize,
    pub layers: Vec<LayerParams>,
    pub final_norm: NormParams,
    pub lm_head: usize,
}

struct Builder(Vec<ParamInfo>);

impl Builder {
    fn add(&mut self, name: String, shape: &[usize]) -> usize {
        self.0.push(ParamInfo { name, shape: shape.to_vec() });
        self.0.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormParams {
        NormParams {
            weight: self.add(format!("{prefix}.weight"), &[d]),
            bias: self.add(format!("{prefix}.bias"), &[d]),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let de = cfg.d_e;
        let mut b = Builder(Vec::new());
        let embed = b.add("embed.weight".into(), &[cfg.vocab, de]);
        let mut layers = Vec::with_capacity(cfg.layers.len());
        for (j, spec) in cfg.layers.iter().enumerate() {
            let p = format!("layers.{j}");
            let norm = b.norm(&format!("{p}.norm"), de);
            layers.push(match *spec {
                LayerSpec::Mamba { heads, head_dim } => {
                    let inner = heads * head_dim;
                    let bc = cfg.g * cfg.d_s;
                    let k = cfg.conv_kernel;
                    LayerParams::Mamba(MambaParams {
                        norm,
                        in_z: b.add(format!("{p}.in_z"), &[de, inner]),
                        in_x: b.add(format!("{p}.in_x"), &[de, inner]),
                        in_b: b.add(format!("{p}.in_b"), &[de, bc]),
                        in_c: b.add(format!("{p}.in_c"), &[de, bc]),
                        in_dt: b.add(format!("{p}.in_dt"), &[de, heads]),
                        a_log: b.add(format!("{p}.a_log"), &[heads]),
                        d: b.add(format!("{p}.d"), &[heads]),
                        conv_x: b.add(format!("{p}.conv_x"), &[inner, k]),
                        conv_b: b.add(format!("{p}.conv_b"), &[bc, k]),
                        conv_c: b.add(format!("{p}.conv_c"), &[bc, k]),
                        out_norm: b.add(format!("{p}.out_norm.weight"), &[inner]),
                        out: b.add(format!("{p}.out"), &[inner, de]),
                    })
                }
                LayerSpec::Attention { heads, head_dim } => {
                    let inner = heads * head_dim;
                    LayerParams::Attention(AttentionParams {
                        norm,
                        q: b.add(format!("{p}.q"), &[de, inner]),
                        k: b.add(format!("{p}.k"), &[de, inner]),
                        v: b.add(format!("{p}.v"), &[de, inner]),
                        o: b.add(format!("{p}.o"), &[inner, de]),
                    })
                }
                LayerSpec::Ffn { hidden } => LayerParams::Ffn(FfnParams {
                    norm,
                    up: b.add(format!("{p}.up"), &[de, hidden]),
                    down: b.add(format!("{p}.down"), &[hidden, de]),
                }),
            });
        }
        let final_norm = b.norm("final_norm", de);
        let lm_head = b.add("lm_head".into(), &[de, cfg.vocab]);
        Layout { params: b.0, embed, layers, final_norm, lm_head }
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }
}

/// A hybrid Mamba/attention/FFN language model: config plus one tensor per
/// entry of its [`Layout`].
#[derive(Clone, Debug)]
pub struct HybridModel<T> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> HybridModel<T> {
    /// Fresh weights, reproducible from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = Rng::seed(seed);
        let mut tensors: Vec<Tensor<T>> = layout
            .params
            .iter()
            .map(|p| {
                let fan_in = if p.shape.len() == 2 { p.shape[0] } else { 1 };
                let bound = (3.0 / fan_in as f64).sqrt();
                uniform(&p.shape, bound, &mut rng)
            })
            .collect();
        let ones = |t: &mut Tensor<T>| t.data_mut().iter_mut().for_each(|v| *v = T::one());
        let zeros = |t: &mut Tensor<T>| t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        tensors[layout.embed] = uniform(&layout.params[layout.embed].shape, 1.0, &mut rng);
        for l in &layout.layers {
            ones(&mut tensors[l.norm().weight]);
            zeros(&mut tensors[l.norm().bias]);
            if let LayerParams::Mamba(m) = l {
                let heads = layout.params[m.a_log].shape[0];
                for h in 0..heads {
                    tensors[m.a_log].data_mut()[h] = T::from_f64(rng.uniform(1.0, 16.0)).ln();
                }
                ones(&mut tensors[m.d]);
                ones(&mut tensors[m.out_norm]);
                let dt_shape = layout.params[m.in_dt].shape.clone();
                tensors[m.in_dt] = uniform(&dt_shape, 0.1, &mut rng);
                for conv in [m.conv_x, m.conv_b, m.conv_c] {
                    let s = layout.params[conv].shape.clone();
                    tensors[conv] = uniform(&s, 0.5, &mut rng);
                }
            }
        }
        ones(&mut tensors[layout.final_norm.weight]);
        zeros(&mut tensors[layout.final_norm.bias]);
        Ok(HybridModel { config, layout, tensors })
    }

    /// Assemble from named tensors; every inventory entry must be present
    /// with the derived shape and nothing else may be.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut slots: Vec<Option<Tensor<T>>> = vec![None; layout.params.len()];
        for (name, t) in named {
            let i = layout.index(&name).ok_or_else(|| Error::Inventory(format!("unexpected tensor `{name}`")))?;
            if t.shape() != layout.params[i].shape.as_slice() {
                return Err(Error::Inventory(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    layout.params[i].shape
                )));
            }
            if slots[i].replace(t).is_some() {
                return Err(Error::Inventory(format!("duplicate tensor `{name}`")));
            }
        }
        let tensors = slots
            .into_iter()
            .zip(&layout.params)
            .map(|(t, p)| t.ok_or_else(|| Error::Inventory(format!("missing tensor `{}`", p.name))))
            .collect::<Result<Vec<_>>>()?;
        Ok(HybridModel { config, layout, tensors })
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.layout.params.iter().map(|p| p.name.as_str()).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.layout.index(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.layout.index(name).map(|i| &mut self.tensors[i])
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> HybridModel<U> {
        HybridModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Put every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone(), requires_grad)).collect()
    }
}

fn uniform<T: Scalar>(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.uniform(-bound, bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("layout shapes are valid")
}
