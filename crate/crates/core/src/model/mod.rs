//! Hybrid Mamba/attention/FFN layer stack with width masks and depth gates.

mod config;
mod forward;
mod masks;
mod params;
mod resort;
mod slice;

pub use config::{parse_pattern, Dims, LayerKind, LayerSpec, ModelConfig, CONV_KERNEL, NORM_EPS};
pub use forward::{LayerTrace, Trace};
pub use masks::{kept_heads, kept_inner, mamba_mask_is_group_uniform, Gate, GraphMasks, LayerMask, MaskSet, Selection};
pub use params::{AttentionParams, FfnParams, HybridModel, LayerParams, Layout, MambaParams, NormParams, ParamInfo};
pub use resort::LayerOrder;
