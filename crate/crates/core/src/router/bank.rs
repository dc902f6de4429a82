use num_traits::Float as _;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::config::{Axis, Integration, RouterConfig, DEPTH_MASK_OFFSET};
use super::cost::{base_params, layer_params, CostModel};
use crate::error::{Error, Result};
use crate::model::{kept_inner, Gate, GraphMasks, LayerKind, LayerMask, LayerSpec, MaskSet, ModelConfig, Selection};
use crate::numerics::{Rng, Scalar, Tape, Tensor, Var};

/// Candidate masks for every decision, in the re-sorted index order where
/// every width mask is a prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidates {
    /// `[|E|][d_e]`
    pub emb: Vec<Vec<f64>>,
    /// Per layer `[choices][inner width]`, or empty when the layer's kind
    /// has no router.
    pub layers: Vec<Vec<Vec<f64>>>,
    /// `[N][N]`: row `i` activates the `i + 1` most important layers.
    pub depth: Vec<Vec<f64>>,
    /// Candidate layer widths, per layer.
    pub specs: Vec<Vec<LayerSpec>>,
    /// For each layer, its row among layers of the same kind.
    pub kind_row: Vec<usize>,
}

impl Candidates {
    pub fn new(model: &ModelConfig, cfg: &RouterConfig, depth_order: &[usize]) -> Result<Self> {
        cfg.validate(model)?;
        let n = model.n_layers();
        if depth_order.len() != n {
            return Err(Error::Config(format!("depth order covers {} of {n} layers", depth_order.len())));
        }
        let prefix = |count: usize, len: usize| (0..len).map(|i| if i < count { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        let emb = cfg.emb.iter().map(|&c| prefix(c, model.d_e)).collect();
        let mut layers = Vec::with_capacity(n);
        let mut specs = Vec::with_capacity(n);
        let mut kind_row = Vec::with_capacity(n);
        let mut seen = [0usize; 3];
        for parent in &model.layers {
            let k = parent.kind() as usize;
            kind_row.push(seen[k]);
            seen[k] += 1;
            let cands: Vec<LayerSpec> = match *parent {
                LayerSpec::Mamba { .. } => cfg.mamba.iter().map(|&(heads, head_dim)| LayerSpec::Mamba { heads, head_dim }).collect(),
                LayerSpec::Attention { head_dim, .. } => cfg.attn.iter().map(|&heads| LayerSpec::Attention { heads, head_dim }).collect(),
                LayerSpec::Ffn { .. } => cfg.ffn.iter().map(|&hidden| LayerSpec::Ffn { hidden }).collect(),
            };
            let rows = cands
                .iter()
                .map(|c| {
                    let mut m = vec![0.0; parent.inner_width()];
                    for i in kept_inner(parent, c, model.g) {
                        m[i] = 1.0;
                    }
                    m
                })
                .collect();
            layers.push(rows);
            specs.push(cands);
        }
        let depth = (0..n)
            .map(|i| {
                let mut row = vec![0.0; n];
                for &j in &depth_order[..=i] {
                    row[j] = 1.0;
                }
                row
            })
            .collect();
        Ok(Candidates { emb, layers, depth, specs, kind_row })
    }
}

/// Per-axis two-layer routers from a budget one-hot to configuration logits.
#[derive(Clone, Debug)]
pub struct RouterBank<T> {
    pub config: RouterConfig,
    pub n_targets: usize,
    /// Layers per kind in the routed model: Mamba, attention, FFN.
    pub kind_layers: [usize; 3],
    pub n_layers: usize,
    /// Axes with a router, in [`Axis::ALL`] order.
    pub axes: Vec<Axis>,
    /// `w1 [n_targets, d_router]`, `b1 [d_router]`, `w2 [d_router, n_out]`,
    /// `b2 [n_out]` per axis in `axes`.
    pub tensors: Vec<Tensor<T>>,
}

/// Router outputs for one budget placed on a tape.
#[derive(Clone, Debug)]
pub struct RouterOutput {
    pub masks: GraphMasks,
    /// Per axis (indexed by [`Axis::index`]): probabilities `[rows, choices]`.
    pub probs: Vec<Option<Var>>,
    /// Per axis: scaled logits `[rows, choices]`.
    pub logits: Vec<Option<Var>>,
    /// Per axis, per row: argmax candidate.
    pub choice: Vec<Vec<usize>>,
    pub selection: Selection,
    /// Differentiable cost: expected cost (Mode 2) or the discrete cost with
    /// the expected-cost gradient (Mode 1).
    pub cost: Var,
    /// Cost of the argmax selection.
    pub discrete_cost: f64,
}

/// Sampling knobs of one router invocation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RouteParams {
    pub tau: f64,
    pub logit_scale: f64,
    /// Gumbel noise seed; `None` is deterministic routing.
    pub noise_seed: Option<u64>,
}

impl RouteParams {
    /// Deployment routing: no noise, unit scale.
    pub fn deterministic() -> Self {
        RouteParams { tau: 1.0, logit_scale: 1.0, noise_seed: None }
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> RouterBank<T> {
    pub fn init(config: RouterConfig, model: &ModelConfig, n_targets: usize, seed: u64) -> Result<Self> {
        config.validate(model)?;
        if n_targets == 0 {
            return Err(Error::Config("router needs at least one budget".into()));
        }
        let kind_layers = [
            model.layers_of(LayerKind::Mamba).len(),
            model.layers_of(LayerKind::Attention).len(),
            model.layers_of(LayerKind::Ffn).len(),
        ];
        let mut bank = RouterBank { config, n_targets, kind_layers, n_layers: model.n_layers(), axes: Vec::new(), tensors: Vec::new() };
        bank.axes = Axis::ALL.into_iter().filter(|&a| bank.rows(a) > 0).collect();
        let mut rng = Rng::seed(seed);
        let d = bank.config.d_router;
        let mut uniform = |shape: &[usize], bound: f64| {
            let n: usize = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| T::from_f64(rng.uniform(-bound, bound))).collect()).unwrap()
        };
        let mut tensors = Vec::new();
        for &axis in &bank.axes {
            let n_out = bank.n_out(axis);
            tensors.push(uniform(&[n_targets, d], 1.0));
            tensors.push(Tensor::zeros(&[d]));
            tensors.push(uniform(&[d, n_out], (3.0 / d as f64).sqrt() * 0.1));
            tensors.push(Tensor::zeros(&[n_out]));
        }
        bank.tensors = tensors;
        Ok(bank)
    }

    /// Decisions made by `axis`: one, or one per layer of the kind when heterogeneous.
    pub fn rows(&self, axis: Axis) -> usize {
        match axis.layer_kind() {
            None => 1,
            Some(k) => {
                let count = self.kind_layers[k as usize];
                if count == 0 {
                    0
                } else if self.config.is_heterogeneous(axis) {
                    count
                } else {
                    1
                }
            }
        }
    }

    pub fn n_out(&self, axis: Axis) -> usize {
        self.rows(axis) * self.config.choices(axis, self.n_layers)
    }

    pub fn param_names(&self) -> Vec<String> {
        self.axes
            .iter()
            .flat_map(|a| ["w1", "b1", "w2", "b2"].into_iter().map(move |p| format!("router.{}.{p}", a.name())))
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.axes
            .iter()
            .flat_map(|&a| {
                let (t, d, o) = (self.n_targets, self.config.d_router, self.n_out(a));
                [vec![t, d], vec![d], vec![d, o], vec![o]]
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replace parameters, checking names and shapes.
    pub fn load_named(&mut self, named: Vec<(String, Tensor<T>)>) -> Result<()> {
        let names = self.param_names();
        let shapes = self.param_shapes();
        let mut slots: Vec<Option<Tensor<T>>> = vec![None; names.len()];
        for (name, t) in named {
            let i = names.iter().position(|n| *n == name).ok_or_else(|| Error::Inventory(format!("unexpected router tensor `{name}`")))?;
            if t.shape() != shapes[i].as_slice() {
                return Err(Error::Inventory(format!("`{name}` has shape {:?}, expected {:?}", t.shape(), shapes[i])));
            }
            slots[i] = Some(t);
        }
        self.tensors = slots
            .into_iter()
            .zip(&names)
            .map(|(t, n)| t.ok_or_else(|| Error::Inventory(format!("missing router tensor `{n}`"))))
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> RouterBank<U> {
        RouterBank {
            config: self.config.clone(),
            n_targets: self.n_targets,
            kind_layers: self.kind_layers,
            n_layers: self.n_layers,
            axes: self.axes.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone(), requires_grad)).collect()
    }

    fn slot(&self, axis: Axis) -> Result<usize> {
        self.axes.iter().position(|&a| a == axis).map(|i| 4 * i).ok_or_else(|| Error::UnknownAxis(axis.name().into()))
    }

    /// `logit_scale · (W₂ᵀ LeakyReLU(W₁ᵀ e + b₁) + b₂)` as `[rows, choices]`,
    /// with disallowed depth choices pushed to a large negative logit.
    pub fn logits(&self, tape: &mut Tape<T>, vars: &[Var], axis: Axis, budget: usize, logit_scale: f64) -> Result<Var> {
        if budget >= self.n_targets {
            return Err(Error::UnknownBudget(format!("index {budget} of {}", self.n_targets)));
        }
        let s = self.slot(axis)?;
        let mut onehot = Tensor::<T>::zeros(&[1, self.n_targets]);
        onehot.data_mut()[budget] = T::one();
        let e = tape.constant(onehot);
        let h = tape.matmul(e, vars[s])?;
        let h = tape.add(h, vars[s + 1])?;
        let h = tape.leaky_relu(h, T::from_f64(self.config.leaky_slope));
        let z = tape.matmul(h, vars[s + 2])?;
        let z = tape.add(z, vars[s + 3])?;
        let mut z = tape.scale(z, T::from_f64(logit_scale));
        if axis == Axis::Depth && self.config.depth_min > 1 {
            let offset: Vec<T> = (0..self.n_layers)
                .map(|i| if i + 1 < self.config.depth_min { T::from_f64(DEPTH_MASK_OFFSET) } else { T::zero() })
                .collect();
            let offset = tape.constant(Tensor::from_vec(offset));
            z = tape.add(z, offset)?;
        }
        let choices = self.config.choices(axis, self.n_layers);
        tape.reshape(z, &[self.rows(axis), choices])
    }

    /// Full router pass for one budget: logits, Gumbel-Softmax, training
    /// masks, argmax selection and differentiable cost.
    pub fn route(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        model: &ModelConfig,
        cands: &Candidates,
        budget: usize,
        params: RouteParams,
        cost_model: &CostModel,
    ) -> Result<RouterOutput> {
        let mut probs = vec![None; Axis::ALL.len()];
        let mut logits = vec![None; Axis::ALL.len()];
        let mut choice = vec![Vec::new(); Axis::ALL.len()];
        for &axis in &self.axes {
            let z = self.logits(tape, vars, axis, budget, params.logit_scale)?;
            let shape = tape.shape(z).to_vec();
            let noisy = match params.noise_seed {
                Some(seed) => {
                    let mut rng = Rng::derive(seed, axis.index() as u64);
                    let n: usize = shape.iter().product();
                    let g = Tensor::new(shape.clone(), (0..n).map(|_| T::from_f64(rng.gumbel())).collect())?;
                    let g = tape.constant(g);
                    tape.add(z, g)?
                }
                None => z,
            };
            let scaled = tape.scale(noisy, T::from_f64(1.0 / params.tau));
            let p = tape.softmax(scaled, false)?;
            let pv = tape.value(p).to_f64_vec();
            choice[axis.index()] = pv.chunks(shape[1]).map(argmax).collect();
            probs[axis.index()] = Some(p);
            logits[axis.index()] = Some(z);
        }
        let selection = self.selection_from_choice(model, cands, &choice);
        let discrete_cost = cost_model.cost(model, &selection)?;
        let masks = self.training_masks(tape, model, cands, &probs, &logits, &choice)?;
        let expected = self.expected_cost(tape, model, cands, &probs, cost_model)?;
        let cost = match self.config.integration {
            Integration::Soft => expected,
            Integration::Hard => {
                let e = tape.value(expected).data()[0].as_f64();
                tape.add_scalar(expected, T::from_f64(discrete_cost - e))
            }
        };
        Ok(RouterOutput { masks, probs, logits, choice, selection, cost, discrete_cost })
    }

    fn row_of(&self, axis: Axis, cands: &Candidates, layer: usize) -> usize {
        if self.config.is_heterogeneous(axis) {
            cands.kind_row[layer]
        } else {
            0
        }
    }

    fn axis_of(spec: &LayerSpec) -> Axis {
        match spec.kind() {
            LayerKind::Mamba => Axis::Mamba,
            LayerKind::Attention => Axis::Attention,
            LayerKind::Ffn => Axis::Ffn,
        }
    }

    /// Discrete selection for per-axis, per-row candidate indices.
    pub fn selection_from_choice(&self, model: &ModelConfig, cands: &Candidates, choice: &[Vec<usize>]) -> Selection {
        let d_e = self.config.emb[choice[Axis::Emb.index()][0]];
        let depth = choice[Axis::Depth.index()][0];
        let layers = model
            .layers
            .iter()
            .enumerate()
            .map(|(j, spec)| {
                if cands.depth[depth][j] == 0.0 {
                    return None;
                }
                let axis = Self::axis_of(spec);
                let c = choice[axis.index()][self.row_of(axis, cands, j)];
                Some(cands.specs[j][c])
            })
            .collect();
        Selection { d_e, layers }
    }

    fn training_masks(
        &self,
        tape: &mut Tape<T>,
        model: &ModelConfig,
        cands: &Candidates,
        probs: &[Option<Var>],
        logits: &[Option<Var>],
        choice: &[Vec<usize>],
    ) -> Result<GraphMasks> {
        let hard = self.config.integration == Integration::Hard;
        // Mask rows for one axis decision: soft mixture or scaled argmax row.
        let decide = |tape: &mut Tape<T>, axis: Axis, row: usize, table: &[Vec<f64>]| -> Result<Var> {
            let p = probs[axis.index()].expect("axis is routed");
            let z = logits[axis.index()].expect("axis is routed");
            let choices = table.len();
            let width = table[0].len();
            if hard {
                let c = choice[axis.index()][row];
                let zc = tape.gather(z, &[row * choices + c], &[1])?;
                let m = tape.constant(Tensor::from_vec(table[c].iter().map(|&v| T::from_f64(v)).collect()));
                tape.mul(m, zc)
            } else {
                let pr = tape.gather(p, &(row * choices..(row + 1) * choices).collect::<Vec<_>>(), &[1, choices])?;
                let flat: Vec<T> = table.iter().flatten().map(|&v| T::from_f64(v)).collect();
                let m = tape.constant(Tensor::new(vec![choices, width], flat)?);
                let mixed = tape.matmul(pr, m)?;
                tape.reshape(mixed, &[width])
            }
        };
        let emb = decide(tape, Axis::Emb, 0, &cands.emb)?;
        let gamma = decide(tape, Axis::Depth, 0, &cands.depth)?;
        let depth_choice = choice[Axis::Depth.index()][0];
        let mut shared: [Option<Var>; 3] = [None; 3];
        let mut layers = Vec::with_capacity(model.n_layers());
        for (j, spec) in model.layers.iter().enumerate() {
            let axis = Self::axis_of(spec);
            let row = self.row_of(axis, cands, j);
            let k = spec.kind() as usize;
            let width = if self.config.is_heterogeneous(axis) {
                decide(tape, axis, row, &cands.layers[j])?
            } else {
                match shared[k] {
                    Some(v) => v,
                    None => {
                        let v = decide(tape, axis, 0, &cands.layers[j])?;
                        shared[k] = Some(v);
                        v
                    }
                }
            };
            let gate = if hard && cands.depth[depth_choice][j] == 0.0 {
                Gate::Off
            } else {
                Gate::Soft(tape.gather(gamma, &[j], &[1])?)
            };
            layers.push(LayerMask { width: Some(width), gate });
        }
        Ok(GraphMasks { emb: Some(emb), layers })
    }

    /// `Σ` over independent axis choices of probability × exact cost.
    fn expected_cost(&self, tape: &mut Tape<T>, model: &ModelConfig, cands: &Candidates, probs: &[Option<Var>], cost_model: &CostModel) -> Result<Var> {
        let pe = probs[Axis::Emb.index()].expect("embedding axis is routed");
        let pd = probs[Axis::Depth.index()].expect("depth axis is routed");
        let ne = self.config.emb.len();
        let unit = cost_model.per_param();
        let base: Vec<T> = self.config.emb.iter().map(|&e| T::from_f64(base_params(model, e) as f64 * unit)).collect();
        let base = tape.constant(Tensor::new(vec![ne, 1], base)?);
        let base = tape.matmul(pe, base)?;
        let mut total = tape.reshape(base, &[1])?;
        let n = model.n_layers();
        let active = tape.constant(Tensor::new(vec![n, n], cands.depth.iter().flatten().map(|&v| T::from_f64(v)).collect())?);
        let p_active = tape.matmul(pd, active)?;
        for (j, spec) in model.layers.iter().enumerate() {
            let axis = Self::axis_of(spec);
            let pa = probs[axis.index()].expect("layer kind is routed");
            let choices = cands.specs[j].len();
            let row = self.row_of(axis, cands, j);
            let pr = tape.gather(pa, &(row * choices..(row + 1) * choices).collect::<Vec<_>>(), &[1, choices])?;
            let table: Vec<T> = self
                .config
                .emb
                .iter()
                .flat_map(|&e| cands.specs[j].iter().map(move |s| (e, *s)))
                .map(|(e, s)| T::from_f64(layer_params(model, e, &s) as f64 * unit))
                .collect();
            let table = tape.constant(Tensor::new(vec![ne, choices], table)?);
            let by_width = tape.matmul(pe, table)?;
            let weighted = tape.mul(by_width, pr)?;
            let layer_cost = tape.sum(weighted);
            let pj = tape.gather(p_active, &[j], &[1])?;
            let layer_cost = tape.mul(layer_cost, pj)?;
            total = tape.add(total, layer_cost)?;
        }
        Ok(total)
    }

    /// Deployment decode: no noise, unit logit scale, argmax per decision.
    pub fn decode(&self, model: &ModelConfig, cands: &Candidates, budget: usize) -> Result<Selection> {
        let choice = self.choices(budget, RouteParams::deterministic())?;
        let sel = self.selection_from_choice(model, cands, &choice);
        sel.validate(model)?;
        Ok(sel)
    }

    /// Argmax candidate per axis and row (noise-free logits).
    pub fn choices(&self, budget: usize, params: RouteParams) -> Result<Vec<Vec<usize>>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let mut choice = vec![Vec::new(); Axis::ALL.len()];
        for &axis in &self.axes {
            let z = self.logits(&mut tape, &vars, axis, budget, params.logit_scale)?;
            let cols = tape.shape(z)[1];
            choice[axis.index()] = tape.value(z).to_f64_vec().chunks(cols).map(argmax).collect();
        }
        Ok(choice)
    }
}

/// Masks from explicit per-axis probabilities and logits (rows of
/// `[choices]` per decision), without a tape.
pub fn generate_masks(
    bank_cfg: &RouterConfig,
    model: &ModelConfig,
    cands: &Candidates,
    probs: &[Vec<Vec<f64>>],
    logits: &[Vec<Vec<f64>>],
    integration: Integration,
) -> Result<MaskSet<f64>> {
    let mix = |axis: Axis, row: usize, table: &[Vec<f64>]| -> Result<Vec<f64>> {
        let p = probs[axis.index()].get(row).ok_or(Error::Segment { len: probs[axis.index()].len(), segment: row })?;
        if p.len() != table.len() {
            return Err(Error::Segment { len: p.len(), segment: table.len() });
        }
        Ok(match integration {
            Integration::Soft => (0..table[0].len()).map(|i| p.iter().zip(table).map(|(pk, t)| pk * t[i]).sum()).collect(),
            Integration::Hard => {
                let c = argmax(p);
                let z = logits[axis.index()][row][c];
                table[c].iter().map(|v| v * z).collect()
            }
        })
    };
    let emb = mix(Axis::Emb, 0, &cands.emb)?;
    let gamma = mix(Axis::Depth, 0, &cands.depth)?;
    let mut layers = Vec::new();
    let mut kind_rows = [0usize; 3];
    for (j, spec) in model.layers.iter().enumerate() {
        let axis = RouterBank::<f64>::axis_of(spec);
        let k = spec.kind() as usize;
        let row = if bank_cfg.is_heterogeneous(axis) { kind_rows[k] } else { 0 };
        kind_rows[k] += 1;
        layers.push(Tensor::from_vec(mix(axis, row, &cands.layers[j])?));
    }
    Ok(MaskSet { emb: Tensor::from_vec(emb), layers, gamma })
}

/// Split a flat heterogeneous logit vector into per-layer segments.
pub fn segments(flat: &[f64], segment: usize) -> Result<Vec<Vec<f64>>> {
    if segment == 0 || flat.len() % segment != 0 {
        return Err(Error::Segment { len: flat.len(), segment });
    }
    Ok(flat.chunks(segment).map(<[f64]>::to_vec).collect())
}
