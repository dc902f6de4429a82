use elastic_core::model::{HybridModel, LayerKind, LayerSpec, ModelConfig, Selection};
use elastic_core::numerics::{Rng, Tape, Tensor};
use elastic_core::router::{
    cost_param_count, generate_masks, gumbel_softmax, router_loss, segments, Anneal, Axis, BudgetSpec, Candidates, CostModel,
    Integration, RouteParams, RouterBank, RouterConfig,
};
use elastic_core::Error;
use proptest::prelude::*;

fn toy() -> (ModelConfig, RouterConfig) {
    (ModelConfig::toy(), RouterConfig::toy())
}

fn identity_order(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn axis_logits(bank: &RouterBank<f64>, axis: Axis, budget: usize, scale: f64) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars = bank.bind(&mut tape, false);
    let z = bank.logits(&mut tape, &vars, axis, budget, scale).unwrap();
    tape.value(z).to_f64_vec()
}

fn set_axis(bank: &mut RouterBank<f64>, axis: Axis, w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64]) {
    let s = 4 * bank.axes.iter().position(|&a| a == axis).unwrap();
    for (k, data) in [w1, b1, w2, b2].into_iter().enumerate() {
        let shape = bank.tensors[s + k].shape().to_vec();
        bank.tensors[s + k] = Tensor::new(shape, data.to_vec()).unwrap();
    }
}

#[test]
fn zero_parameters_give_zero_logits() {
    let (m, r) = toy();
    let mut bank = RouterBank::<f64>::init(r, &m, 3, 1).unwrap();
    for t in &mut bank.tensors {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    for axis in [Axis::Emb, Axis::Mamba, Axis::Attention, Axis::Ffn] {
        for b in 0..3 {
            assert!(axis_logits(&bank, axis, b, 7.0).iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn output_bias_alone_is_budget_independent() {
    let (m, r) = toy();
    let mut bank = RouterBank::<f64>::init(r.clone(), &m, 3, 2).unwrap();
    let d = r.d_router;
    set_axis(&mut bank, Axis::Ffn, &vec![0.0; 3 * d], &vec![0.0; d], &vec![0.3; d * 3], &[0.5, -1.0, 2.0]);
    for b in 0..3 {
        assert_eq!(axis_logits(&bank, Axis::Ffn, b, 2.0), vec![1.0, -2.0, 4.0]);
    }
}

#[test]
fn two_by_three_by_four_matches_hand_arithmetic() {
    let m = ModelConfig::toy();
    let r = RouterConfig { emb: vec![16, 32, 48, 64], d_router: 3, ..RouterConfig::toy() };
    let mut bank = RouterBank::<f64>::init(r, &m, 2, 3).unwrap();
    let w1 = [0.5, -1.0, 2.0, 1.5, 0.25, -0.75];
    let b1 = [0.1, 0.2, -3.0];
    let w2 = [1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.0, 2.0, 0.3, -0.2, 1.0, 1.0];
    let b2 = [0.0, 1.0, -1.0, 0.5];
    set_axis(&mut bank, Axis::Emb, &w1, &b1, &w2, &b2);
    let leaky = |x: f64| if x > 0.0 { x } else { 0.01 * x };
    for budget in 0..2 {
        let h: Vec<f64> = (0..3).map(|j| leaky(w1[budget * 3 + j] + b1[j])).collect();
        let expect: Vec<f64> = (0..4).map(|o| 1.5 * (b2[o] + (0..3).map(|j| h[j] * w2[j * 4 + o]).sum::<f64>())).collect();
        let got = axis_logits(&bank, Axis::Emb, budget, 1.5);
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-9, "{got:?} vs {expect:?}");
        }
    }
}

#[test]
fn unknown_budget_and_axis_are_rejected() {
    let m = ModelConfig::uniform(&elastic_core::model::Dims::toy(), &[LayerKind::Ffn, LayerKind::Ffn]).unwrap();
    let r = RouterConfig { depth_min: 1, ..RouterConfig::toy() };
    let bank = RouterBank::<f64>::init(r, &m, 3, 4).unwrap();
    let mut tape = Tape::new();
    let vars = bank.bind(&mut tape, false);
    assert!(matches!(bank.logits(&mut tape, &vars, Axis::Mamba, 0, 1.0), Err(Error::UnknownAxis(_))));
    assert!(matches!(bank.logits(&mut tape, &vars, Axis::Ffn, 3, 1.0), Err(Error::UnknownBudget(_))));
    assert!("width".parse::<Axis>().is_err());
}

#[test]
fn depth_logits_below_minimum_are_suppressed() {
    let (m, r) = toy();
    let bank = RouterBank::<f64>::init(r, &m, 3, 5).unwrap();
    let z = axis_logits(&bank, Axis::Depth, 0, 1.0);
    assert_eq!(z.len(), 8);
    assert!(z[..3].iter().all(|&v| v < -1e8));
    assert!(z[3..].iter().all(|&v| v.abs() < 10.0));
}

#[test]
fn equal_logits_give_uniform_probabilities() {
    for tau in [0.05, 1.0, 3.0] {
        let p = gumbel_softmax(&[0.7; 4], tau, None);
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}

#[test]
fn sharp_temperature_concentrates_mass() {
    let p = gumbel_softmax(&[1.0, 0.0], 0.05, None);
    // One ulp of slack: 1/(1+e^-20) rounds to within an ulp of 1-e^-20.
    assert!(p[0] >= 1.0 - (-20.0f64).exp() - f64::EPSILON);
    assert!(p[1] <= (-20.0f64).exp());
}

#[test]
fn noisy_probabilities_are_normalized() {
    let mut rng = Rng::seed(11);
    for _ in 0..100 {
        let z: Vec<f64> = (0..5).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let p = gumbel_softmax(&z, rng.uniform(0.05, 2.0), Some(&mut rng));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    (0..n).map(|k| if k == i { 1.0 } else { 0.0 }).collect()
}

fn uniform_probs(m: &ModelConfig, r: &RouterConfig) -> Vec<Vec<Vec<f64>>> {
    Axis::ALL
        .iter()
        .map(|&a| {
            let c = r.choices(a, m.n_layers());
            let rows = match a.layer_kind() {
                Some(k) if r.is_heterogeneous(a) => m.layers_of(k).len(),
                _ => 1,
            };
            vec![vec![1.0 / c as f64; c]; rows]
        })
        .collect()
}

#[test]
fn full_count_one_hot_gives_all_ones() {
    let (m, r) = toy();
    let cands = Candidates::new(&m, &r, &identity_order(8)).unwrap();
    let mut probs = uniform_probs(&m, &r);
    probs[Axis::Ffn.index()] = vec![one_hot(3, 2)];
    probs[Axis::Emb.index()] = vec![one_hot(3, 2)];
    let masks = generate_masks(&r, &m, &cands, &probs, &probs, Integration::Soft).unwrap();
    assert!(masks.emb.data().iter().all(|&v| v == 1.0));
    for j in m.layers_of(LayerKind::Ffn) {
        assert!(masks.layers[j].data().iter().all(|&v| v == 1.0));
    }
}

#[test]
fn soft_mask_mixes_nested_prefixes() {
    let m = ModelConfig { layers: vec![LayerSpec::Ffn { hidden: 4 }], ..ModelConfig::toy() };
    let r = RouterConfig { ffn: vec![2, 4], depth_min: 1, ..RouterConfig::toy() };
    let cands = Candidates::new(&m, &r, &[0]).unwrap();
    let mut probs = uniform_probs(&m, &r);
    probs[Axis::Ffn.index()] = vec![vec![0.5, 0.5]];
    let masks = generate_masks(&r, &m, &cands, &probs, &probs, Integration::Soft).unwrap();
    assert_eq!(masks.layers[0].data(), &[1.0, 1.0, 0.5, 0.5]);
}

#[test]
fn hard_mask_scales_argmax_prefix_by_its_logit() {
    let m = ModelConfig { layers: vec![LayerSpec::Ffn { hidden: 4 }], ..ModelConfig::toy() };
    let r = RouterConfig { ffn: vec![2, 4], depth_min: 1, ..RouterConfig::toy() };
    let cands = Candidates::new(&m, &r, &[0]).unwrap();
    let mut probs = uniform_probs(&m, &r);
    let mut logits = probs.clone();
    probs[Axis::Ffn.index()] = vec![vec![0.8, 0.2]];
    logits[Axis::Ffn.index()] = vec![vec![2.5, 1.0]];
    let masks = generate_masks(&r, &m, &cands, &probs, &logits, Integration::Hard).unwrap();
    assert_eq!(masks.layers[0].data(), &[2.5, 2.5, 0.0, 0.0]);
}

#[test]
fn heterogeneous_segments_follow_per_layer_prefixes() {
    let m = ModelConfig::uniform(&elastic_core::model::Dims::toy(), &[LayerKind::Ffn, LayerKind::Ffn]).unwrap();
    let r = RouterConfig { ffn: vec![64, 256], depth_min: 1, heterogeneous: [false, false, true], ..RouterConfig::toy() };
    let cands = Candidates::new(&m, &r, &[0, 1]).unwrap();
    let mut probs = uniform_probs(&m, &r);
    probs[Axis::Ffn.index()] = segments(&[0.9, 0.1, 0.3, 0.7], 2).unwrap();
    let masks = generate_masks(&r, &m, &cands, &probs, &probs, Integration::Hard).unwrap();
    for (j, count) in [(0, 64), (1, 256)] {
        let d = masks.layers[j].data();
        let scale = d[0];
        let oracle: Vec<f64> = (0..256).map(|i| if i < count { scale } else { 0.0 }).collect();
        assert_eq!(d, oracle.as_slice());
    }
    assert!(matches!(segments(&[0.1, 0.2, 0.3], 2), Err(Error::Segment { .. })));
    probs[Axis::Ffn.index()] = vec![vec![0.5, 0.5]];
    assert!(matches!(generate_masks(&r, &m, &cands, &probs, &probs, Integration::Soft), Err(Error::Segment { .. })));
}

#[test]
fn anneal_is_linear_then_constant() {
    let a = Anneal::new(100);
    assert_eq!(a.at(0), (1.0, 1.0));
    assert_eq!(a.at(100), (0.05, 10.0));
    let (t, s) = a.at(50);
    assert!((t - 0.525).abs() < 1e-12 && (s - 5.5).abs() < 1e-12);
    assert_eq!(a.at(1000), a.at(100));
}

#[test]
fn budget_target_must_be_positive() {
    assert!(BudgetSpec::new("x", 0.0).is_err());
    assert!(BudgetSpec::new("x", f64::NAN).is_err());
    assert!(BudgetSpec::new("x", 10.0).is_ok());
}

#[test]
fn full_selection_cost_equals_tensor_tally() {
    let m = ModelConfig::toy();
    let model = HybridModel::<f64>::init(m.clone(), 0).unwrap();
    let tally: usize = model.named().map(|(_, t)| t.numel()).sum();
    assert_eq!(cost_param_count(&m, &Selection::full(&m)).unwrap(), tally);
    assert_eq!(tally, model.param_count());
}

#[test]
fn empty_stack_cost_is_embedding_norm_and_head() {
    let m = ModelConfig::toy();
    let sel = Selection { d_e: 64, layers: vec![None; 8] };
    assert_eq!(cost_param_count(&m, &sel).unwrap(), 2 * m.vocab * 64 + 2 * 64);
}

#[test]
fn halving_embedding_on_ffn_stack_matches_closed_form() {
    let m = ModelConfig::uniform(&elastic_core::model::Dims::toy(), &[LayerKind::Ffn; 3]).unwrap();
    let (v, h) = (m.vocab, 256);
    let count = |d: usize| 2 * v * d + 2 * d + 3 * (2 * d + 2 * d * h);
    let mut sel = Selection::full(&m);
    assert_eq!(cost_param_count(&m, &sel).unwrap(), count(64));
    sel.d_e = 32;
    assert_eq!(cost_param_count(&m, &sel).unwrap(), count(32));
    sel.d_e = 65;
    assert!(cost_param_count(&m, &sel).is_err());
}

fn toy_selections(m: &ModelConfig, r: &RouterConfig) -> Vec<Selection> {
    let mut out = Vec::new();
    for &e in &r.emb {
        for &(h, c) in &r.mamba {
            for &a in &r.attn {
                for &f in &r.ffn {
                    for keep in [m.n_layers(), 5] {
                        let layers = m
                            .layers
                            .iter()
                            .enumerate()
                            .map(|(j, l)| {
                                (j < keep).then(|| match *l {
                                    LayerSpec::Mamba { .. } => LayerSpec::Mamba { heads: h, head_dim: c },
                                    LayerSpec::Attention { head_dim, .. } => LayerSpec::Attention { heads: a, head_dim },
                                    LayerSpec::Ffn { .. } => LayerSpec::Ffn { hidden: f },
                                })
                            })
                            .collect();
                        out.push(Selection { d_e: e, layers });
                    }
                }
            }
        }
    }
    out
}

#[test]
fn cost_matches_sliced_model_for_every_toy_selection() {
    let (m, r) = toy();
    let model = HybridModel::<f32>::init(m.clone(), 0).unwrap();
    for sel in toy_selections(&m, &r) {
        assert_eq!(cost_param_count(&m, &sel).unwrap(), model.slice(&sel).unwrap().param_count(), "{sel:?}");
    }
}

#[test]
fn memory_metric_scales_parameter_count() {
    let m = ModelConfig::toy();
    let sel = Selection::full(&m);
    let mem = CostModel { metric: elastic_core::router::CostMetric::MemoryBytes { bytes_per_param: 2 } };
    assert_eq!(mem.cost(&m, &sel).unwrap(), 2.0 * m_params(&m));
}

fn m_params(m: &ModelConfig) -> f64 {
    cost_param_count(m, &Selection::full(m)).unwrap() as f64
}

fn loss_value(cost: f64, target: f64) -> f64 {
    let mut tape = Tape::<f64>::new();
    let c = tape.constant(Tensor::from_vec(vec![cost]));
    let l = router_loss(&mut tape, c, target);
    tape.value(l).data()[0]
}

#[test]
fn router_loss_examples() {
    let (m, r) = toy();
    let full = m_params(&m);
    assert_eq!(loss_value(full, full), 0.0);
    let half = Selection {
        d_e: 32,
        layers: m
            .layers
            .iter()
            .map(|l| {
                Some(match *l {
                    LayerSpec::Mamba { heads, head_dim } => LayerSpec::Mamba { heads: heads / 2, head_dim: head_dim / 2 },
                    LayerSpec::Attention { heads, head_dim } => LayerSpec::Attention { heads: heads / 2, head_dim },
                    LayerSpec::Ffn { hidden } => LayerSpec::Ffn { hidden: hidden / 2 },
                })
            })
            .collect(),
    };
    let model = HybridModel::<f32>::init(m.clone(), 9).unwrap();
    let brute = model.slice(&half).unwrap().named().map(|(_, t)| t.numel()).sum::<usize>() as f64;
    let target = 0.6 * full;
    let cost = cost_param_count(&m, &half).unwrap() as f64;
    assert!((loss_value(cost, target) - (brute - target).abs() / target).abs() < 1e-15);
    let _ = r;
}

#[test]
fn expected_cost_has_router_gradient() {
    let (m, r) = toy();
    let bank = RouterBank::<f64>::init(r, &m, 3, 21).unwrap();
    let cands = Candidates::new(&m, &bank.config, &identity_order(8)).unwrap();
    let mut tape = Tape::new();
    let vars = bank.bind(&mut tape, true);
    let params = RouteParams { tau: 1.0, logit_scale: 1.0, noise_seed: Some(3) };
    let out = bank.route(&mut tape, &vars, &m, &cands, 1, params, &CostModel::params()).unwrap();
    let loss = router_loss(&mut tape, out.cost, 100_000.0);
    let grads = tape.backward(loss).unwrap();
    for (k, axis) in bank.axes.iter().enumerate() {
        let g = grads.get(vars[4 * k + 2]).unwrap();
        assert!(g.iter().any(|&v| v != 0.0), "{axis:?}");
    }
}

#[test]
fn expected_cost_matches_finite_differences() {
    let (m, r) = toy();
    let bank = RouterBank::<f64>::init(r, &m, 3, 22).unwrap();
    let cands = Candidates::new(&m, &bank.config, &identity_order(8)).unwrap();
    let params = RouteParams { tau: 0.7, logit_scale: 2.0, noise_seed: Some(8) };
    let cost_at = |b: &RouterBank<f64>| {
        let mut tape = Tape::new();
        let vars = b.bind(&mut tape, true);
        let out = b.route(&mut tape, &vars, &m, &cands, 2, params, &CostModel::params()).unwrap();
        let g = tape.backward(out.cost).unwrap();
        (tape.value(out.cost).data()[0], g.get(vars[2]).unwrap().to_vec())
    };
    let (_, analytic) = cost_at(&bank);
    let h = 1e-6;
    for i in [0, 5, 17, 40] {
        let mut plus = bank.clone();
        plus.tensors[2].data_mut()[i] += h;
        let mut minus = bank.clone();
        minus.tensors[2].data_mut()[i] -= h;
        let numeric = (cost_at(&plus).0 - cost_at(&minus).0) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / (numeric.abs() + 1e-3);
        assert!(rel < 1e-5, "{i}: {} vs {numeric}", analytic[i]);
    }
}

#[test]
fn soft_expected_cost_of_one_hot_route_equals_discrete_cost() {
    let (m, r) = toy();
    let mut bank = RouterBank::<f64>::init(r, &m, 3, 23).unwrap();
    // Large output biases make every distribution numerically one-hot.
    for k in 0..bank.axes.len() {
        let n = bank.tensors[4 * k + 3].numel();
        let d = bank.tensors[4 * k + 3].data_mut();
        for (i, v) in d.iter_mut().enumerate() {
            *v = if i == n - 1 { 200.0 } else { 0.0 };
        }
        bank.tensors[4 * k + 2].data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let cands = Candidates::new(&m, &bank.config, &identity_order(8)).unwrap();
    let mut tape = Tape::new();
    let vars = bank.bind(&mut tape, false);
    let out = bank.route(&mut tape, &vars, &m, &cands, 0, RouteParams::deterministic(), &CostModel::params()).unwrap();
    assert!((tape.value(out.cost).data()[0] - out.discrete_cost).abs() < 1e-6);
}

#[test]
fn hard_cost_carries_discrete_value() {
    let (m, r) = toy();
    let r = RouterConfig { integration: Integration::Hard, ..r };
    let bank = RouterBank::<f64>::init(r, &m, 3, 24).unwrap();
    let cands = Candidates::new(&m, &bank.config, &identity_order(8)).unwrap();
    let mut tape = Tape::new();
    let vars = bank.bind(&mut tape, true);
    let out = bank.route(&mut tape, &vars, &m, &cands, 0, RouteParams::deterministic(), &CostModel::params()).unwrap();
    assert!((tape.value(out.cost).data()[0] - out.discrete_cost).abs() < 1e-6 * out.discrete_cost);
    let grads = tape.backward(out.cost).unwrap();
    assert!(grads.get(vars[2]).unwrap().iter().any(|&v| v != 0.0));
}

#[test]
fn decode_respects_depth_minimum_and_ranking() {
    let (m, r) = toy();
    let bank = RouterBank::<f64>::init(r, &m, 3, 25).unwrap();
    let order = [3, 1, 7, 0, 2, 6, 5, 4];
    let cands = Candidates::new(&m, &bank.config, &order).unwrap();
    for b in 0..3 {
        let sel = bank.decode(&m, &cands, b).unwrap();
        let kept = sel.kept_layers().len();
        assert!(kept >= 4);
        for &j in &order[..kept] {
            assert!(sel.layers[j].is_some());
        }
    }
}

#[test]
fn overhead_is_small_on_toy() {
    let (m, r) = toy();
    let bank = RouterBank::<f32>::init(r, &m, 3, 0).unwrap();
    let model = HybridModel::<f32>::init(m, 0).unwrap();
    assert!((bank.param_count() as f64) < 0.02 * model.param_count() as f64);
}

#[test]
fn named_parameters_round_trip() {
    let (m, r) = toy();
    let a = RouterBank::<f64>::init(r.clone(), &m, 3, 1).unwrap();
    let mut b = RouterBank::<f64>::init(r, &m, 3, 2).unwrap();
    let named: Vec<_> = a.param_names().into_iter().zip(a.tensors.iter().cloned()).collect();
    b.load_named(named.clone()).unwrap();
    assert!(a.tensors.iter().zip(&b.tensors).all(|(x, y)| x.bit_eq(y)));
    assert!(matches!(b.load_named(named[1..].to_vec()), Err(Error::Inventory(_))));
}

fn mask_le(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn soft_masks_are_bounded_and_monotone(raw in proptest::collection::vec(0.01f64..1.0, 3)) {
        let (m, r) = toy();
        let cands = Candidates::new(&m, &r, &identity_order(8)).unwrap();
        let s: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let mut probs = uniform_probs(&m, &r);
        for a in [Axis::Emb, Axis::Mamba, Axis::Attention, Axis::Ffn] {
            probs[a.index()] = vec![p.clone()];
        }
        let masks = generate_masks(&r, &m, &cands, &probs, &probs, Integration::Soft).unwrap();
        let ffn = masks.layers[3].data();
        prop_assert!(ffn.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
        prop_assert!(ffn.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(masks.emb.data().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn argmax_is_scale_invariant(seed in 0u64..500, c in 0.1f64..20.0) {
        let (m, r) = toy();
        let bank = RouterBank::<f64>::init(r, &m, 3, seed).unwrap();
        let scale = |s: f64| RouteParams { tau: 1.0, logit_scale: s, noise_seed: None };
        for b in 0..3 {
            prop_assert_eq!(bank.choices(b, scale(1.0)).unwrap(), bank.choices(b, scale(c)).unwrap());
        }
    }

    #[test]
    fn discrete_masks_nest_when_counts_nest(i in 0usize..3, j in 0usize..3, di in 0usize..5, dj in 0usize..5) {
        let (m, r) = toy();
        let cands = Candidates::new(&m, &r, &[5, 2, 0, 7, 1, 3, 6, 4]).unwrap();
        let (lo, hi) = (i.min(j), i.max(j));
        let (dlo, dhi) = (3 + di.min(dj), 3 + di.max(dj));
        let build = |c: usize, d: usize| {
            let mut probs = uniform_probs(&m, &r);
            for a in [Axis::Emb, Axis::Mamba, Axis::Attention, Axis::Ffn] {
                probs[a.index()] = vec![one_hot(3, c)];
            }
            probs[Axis::Depth.index()] = vec![one_hot(8, d)];
            generate_masks(&r, &m, &cands, &probs, &probs, Integration::Soft).unwrap()
        };
        let (a, b) = (build(lo, dlo), build(hi, dhi));
        prop_assert!(mask_le(a.emb.data(), b.emb.data()));
        prop_assert!(mask_le(&a.gamma, &b.gamma));
        for (x, y) in a.layers.iter().zip(&b.layers) {
            prop_assert!(mask_le(x.data(), y.data()));
        }
    }

    #[test]
    fn loss_is_zero_iff_cost_hits_target(cost in 1usize..300_000, target in 1usize..300_000) {
        let l = loss_value(cost as f64, target as f64);
        prop_assert_eq!(l == 0.0, cost == target);
    }
}
