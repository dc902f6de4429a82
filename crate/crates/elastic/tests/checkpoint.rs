use elastic::checkpoint::{decode_checkpoint, decode_model, decode_rankings, encode_checkpoint, encode_model, encode_rankings, Kind};
use elastic::format::{decode, decode_header, encode, Entry, FormatError, Header, Payload, FORMAT};
use elastic_core::importance::Ranking;
use elastic_core::model::{HybridModel, ModelConfig};
use elastic_core::numerics::Tensor;
use elastic_core::router::{Anneal, BudgetSpec, CostModel, RouterBank, RouterConfig};
use elastic_core::slicing::{Checkpoint, MAX_ROUTER_OVERHEAD};
use proptest::prelude::*;

fn toy_checkpoint(seed: u64) -> Checkpoint<f32> {
    let cfg = ModelConfig::toy();
    let model = HybridModel::<f32>::init(cfg.clone(), seed).unwrap();
    let full = model.param_count() as f64;
    let budgets = vec![BudgetSpec::new("full", full).unwrap(), BudgetSpec::new("mid", 0.75 * full).unwrap(), BudgetSpec::new("small", 0.5 * full).unwrap()];
    let bank = RouterBank::init(RouterConfig::toy(), &cfg, 3, seed + 1).unwrap();
    let mut ranking = Ranking::identity(&cfg.layers, cfg.d_e);
    ranking.depth = vec![3, 0, 6, 1, 4, 7, 2, 5];
    Checkpoint { model, bank, ranking, budgets, cost: CostModel::params(), anneal: Anneal::new(1200) }
}

fn tensors_bit_equal<T: elastic_core::numerics::Scalar>(a: &[Tensor<T>], b: &[Tensor<T>]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.bit_eq(y))
}

#[test]
fn elastic_checkpoint_round_trips_bitwise() {
    let ck = toy_checkpoint(3);
    let bytes = encode_checkpoint(&ck).unwrap();
    let back = decode_checkpoint::<f32>(&bytes).unwrap();
    assert!(tensors_bit_equal(&ck.model.tensors, &back.model.tensors));
    assert!(tensors_bit_equal(&ck.bank.tensors, &back.bank.tensors));
    assert_eq!(back.model.config, ck.model.config);
    assert_eq!(back.bank.config, ck.bank.config);
    assert_eq!(back.ranking, ck.ranking);
    assert_eq!(back.budgets, ck.budgets);
    assert_eq!(back.anneal, ck.anneal);
    assert_eq!(back.cost, ck.cost);
    assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
}

#[test]
fn header_records_router_overhead_below_limit() {
    let ck = toy_checkpoint(0);
    let h = decode_header(&encode_checkpoint(&ck).unwrap()).unwrap();
    let recorded: f64 = h.parse("router.overhead").unwrap();
    assert_eq!(recorded, ck.router_overhead());
    assert!(recorded < MAX_ROUTER_OVERHEAD);
    let rp: usize = h.parse("router.params").unwrap();
    let mp: usize = h.parse("params").unwrap();
    assert_eq!(recorded, rp as f64 / mp as f64);
}

#[test]
fn oversized_router_is_refused_at_save() {
    let mut ck = toy_checkpoint(0);
    let mut rc = RouterConfig::toy();
    rc.d_router = 256;
    ck.bank = RouterBank::init(rc, &ck.model.config, 3, 0).unwrap();
    assert!(ck.router_overhead() > MAX_ROUTER_OVERHEAD);
    assert!(encode_checkpoint(&ck).is_err());
}

#[test]
fn version_mismatch_names_both_versions() {
    let ck = toy_checkpoint(0);
    let bytes = encode_checkpoint(&ck).unwrap();
    let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let text = std::str::from_utf8(&bytes[4..4 + n]).unwrap().replacen(FORMAT, "NEMELAST/2", 1);
    let mut patched = (text.len() as u32).to_le_bytes().to_vec();
    patched.extend_from_slice(text.as_bytes());
    patched.extend_from_slice(&bytes[4 + n..]);
    match decode_checkpoint::<f32>(&patched) {
        Err(FormatError::Version { found, expected }) => {
            assert_eq!(found, "NEMELAST/2");
            assert_eq!(expected, "NEMELAST/1");
        }
        other => panic!("expected a version error, got {other:?}"),
    }
    let msg = decode_header(&patched).unwrap_err().to_string();
    assert!(msg.contains("NEMELAST/2") && msg.contains("NEMELAST/1"), "{msg}");
}

#[test]
fn truncated_files_are_rejected() {
    let bytes = encode_checkpoint(&toy_checkpoint(0)).unwrap();
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode_checkpoint::<f32>(&bytes[..cut]).is_err(), "cut at {cut}");
    }
}

#[test]
fn missing_and_extra_tensors_are_rejected() {
    let ck = toy_checkpoint(0);
    let (h, entries) = decode(&encode_checkpoint(&ck).unwrap()).unwrap();
    let dropped: Vec<Entry> = entries.iter().filter(|e| e.name != "lm_head").cloned().collect();
    assert_eq!(dropped.len() + 1, entries.len());
    assert!(decode_checkpoint::<f32>(&encode(&h, &dropped)).is_err());
    let mut extra = entries.clone();
    extra.push(Entry { name: "stray".into(), shape: vec![1], payload: Payload::F32(vec![0.0]) });
    assert!(decode_checkpoint::<f32>(&encode(&h, &extra)).is_err());
}

#[test]
fn model_file_keeps_rankings_and_extra_keys() {
    let ck = toy_checkpoint(1);
    let mut extra = Header::new();
    extra.set("slice.budget", "mid");
    let bytes = encode_model(&ck.model, Some(&ck.ranking), Kind::Model, &extra);
    let (m, r, h) = decode_model::<f32>(&bytes).unwrap();
    assert!(tensors_bit_equal(&m.tensors, &ck.model.tensors));
    assert_eq!(r.as_ref(), Some(&ck.ranking));
    assert_eq!(h.get("slice.budget"), Some("mid"));
    let (_, none, _) = decode_model::<f32>(&encode_model(&ck.model, None, Kind::Slice, &Header::new())).unwrap();
    assert!(none.is_none());
}

#[test]
fn rankings_file_round_trips() {
    let ck = toy_checkpoint(0);
    let (r, cfg) = decode_rankings(&encode_rankings(&ck.ranking, &ck.model.config)).unwrap();
    assert_eq!(r, ck.ranking);
    assert_eq!(cfg, ck.model.config);
}

#[test]
fn double_precision_model_round_trips() {
    let m = HybridModel::<f64>::init(ModelConfig::toy(), 9).unwrap();
    let (back, _, h) = decode_model::<f64>(&encode_model(&m, None, Kind::Model, &Header::new())).unwrap();
    assert_eq!(h.get("dtype"), Some("f64"));
    assert!(tensors_bit_equal(&m.tensors, &back.tensors));
}

#[test]
fn kind_is_checked() {
    let ck = toy_checkpoint(0);
    let model_only = encode_model(&ck.model, Some(&ck.ranking), Kind::Model, &Header::new());
    let err = decode_checkpoint::<f32>(&model_only).unwrap_err().to_string();
    assert!(err.contains("kind"), "{err}");
}

proptest! {
    #[test]
    fn container_round_trips_arbitrary_entries(
        tensors in prop::collection::vec((prop::collection::vec(1usize..5, 0..4), any::<u64>(), 0u8..3), 0..6),
        key in "[a-z]{1,8}(\\.[a-z_]{1,8}){0,2}",
        value in "[ -~]{0,40}",
    ) {
        prop_assume!(key != "format");
        let mut h = Header::new();
        h.set(&key, &value);
        let entries: Vec<Entry> = tensors.iter().enumerate().map(|(i, (shape, seed, kind))| {
            let n: usize = shape.iter().product();
            let bits = |j: usize| seed.wrapping_mul(6364136223846793005).wrapping_add((j as u64).wrapping_mul(1442695040888963407));
            let payload = match kind {
                0 => Payload::F32((0..n).map(|j| f32::from_bits(bits(j) as u32)).collect()),
                1 => Payload::F64((0..n).map(|j| f64::from_bits(bits(j))).collect()),
                _ => Payload::U32((0..n).map(|j| bits(j) as u32).collect()),
            };
            Entry { name: format!("t{i}"), shape: shape.clone(), payload }
        }).collect();
        let bytes = encode(&h, &entries);
        let (h2, back) = decode(&bytes).unwrap();
        prop_assert_eq!(h2.get(&key), Some(value.as_str()));
        prop_assert_eq!(back.len(), entries.len());
        for (a, b) in entries.iter().zip(&back) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert_eq!(&a.shape, &b.shape);
            let same = match (&a.payload, &b.payload) {
                (Payload::F32(x), Payload::F32(y)) => x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()) && x.len() == y.len(),
                (Payload::F64(x), Payload::F64(y)) => x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()) && x.len() == y.len(),
                (Payload::U32(x), Payload::U32(y)) => x == y,
                _ => false,
            };
            prop_assert!(same);
        }
    }
}
