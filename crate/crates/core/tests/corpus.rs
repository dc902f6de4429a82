use elastic_core::corpus::{
    copy, copy_eval_batch, copy_span, markov, modular, verify, Batch, Corpus, CorpusSpec, MarkovChain, Sample, Task, COPY_START,
    DIGIT_BASE, MODULUS, SEPARATOR,
};
use elastic_core::numerics::Rng;
use proptest::prelude::*;

#[test]
fn copy_repeats_payload_after_separator() {
    let mut rng = Rng::seed(1);
    let s = copy(16, 64, &mut rng);
    let t = &s.tokens;
    assert_eq!(t.len(), 65);
    assert_eq!(t[0], COPY_START);
    assert_eq!(t[17], SEPARATOR);
    assert_eq!(&t[18..34], &t[1..17]);
    assert_eq!(t[34], SEPARATOR);
    assert_eq!(&t[35..51], &t[1..17]);
    verify(&s, &MarkovChain::new(0)).unwrap();
}

#[test]
fn modular_answer_is_running_sum() {
    let mut rng = Rng::seed(2);
    for _ in 0..50 {
        let s = modular(40, &mut rng);
        let n = s.tokens.len();
        let mut acc = 0usize;
        for &d in &s.tokens[1..n - 2] {
            acc = (acc + (d - DIGIT_BASE) as usize) % MODULUS;
        }
        assert_eq!(s.tokens[n - 1], DIGIT_BASE + acc as u8);
    }
}

#[test]
fn markov_follows_chain() {
    let chain = MarkovChain::new(3);
    let mut rng = Rng::seed(3);
    let s = markov(&chain, 100, &mut rng);
    assert!(s.tokens.windows(3).all(|w| chain.prob(w[0], w[1], w[2]) > 0.0));
    let total: f64 = (0..32).map(|c| chain.prob(4, 9, c)).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn same_seed_same_corpus() {
    let gen = |seed| Corpus::new(CorpusSpec::stage1(seed), 0).unwrap().generate(20, 32).unwrap();
    assert_eq!(gen(5), gen(5));
    assert_ne!(gen(5), gen(6));
}

#[test]
fn corrupted_samples_fail_verification() {
    let chain = MarkovChain::new(0);
    let mut rng = Rng::seed(4);
    let mut c = copy(8, 32, &mut rng);
    c.tokens[20] ^= 1;
    assert!(verify(&c, &chain).is_err());
    let mut m = modular(20, &mut rng);
    let n = m.tokens.len();
    m.tokens[n - 1] = DIGIT_BASE + ((m.tokens[n - 1] - DIGIT_BASE + 1) % MODULUS as u8);
    assert!(verify(&m, &chain).is_err());
    let bogus = Sample { task: Task::Markov, tokens: vec![40; 20] };
    assert!(verify(&bogus, &chain).is_err());
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(Corpus::new(CorpusSpec { mix: [0.5, 0.5, 0.5], ..CorpusSpec::stage1(0) }, 0).is_err());
    assert!(Corpus::new(CorpusSpec { copy_k: (0, 4), ..CorpusSpec::stage1(0) }, 0).is_err());
    let mut c = Corpus::new(CorpusSpec::stage1(0), 0).unwrap();
    assert!(c.sample(4).is_err());
}

#[test]
fn batches_shift_targets_by_one() {
    let mut c = Corpus::new(CorpusSpec::stage1(9), 0).unwrap();
    let samples = c.generate(3, 16).unwrap();
    let b = Batch::from_samples(&samples).unwrap();
    assert_eq!((b.batch, b.len, b.tokens.len()), (3, 16, 48));
    for (i, s) in samples.iter().enumerate() {
        for t in 0..16 {
            assert_eq!(b.tokens[i * 16 + t], s.tokens[t] as usize);
            assert_eq!(b.targets[i * 16 + t], Some(s.tokens[t + 1] as usize));
        }
    }
}

#[test]
fn copy_eval_targets_only_the_copied_span() {
    let b = copy_eval_batch(1, 2, 64, (20, 20)).unwrap();
    for row in 0..2 {
        let t = &b.targets[row * 64..(row + 1) * 64];
        assert!(t[..21].iter().all(Option::is_none));
        assert!(t[21..].iter().all(Option::is_some));
    }
    let mut rng = Rng::seed(0);
    let s = copy(20, 64, &mut rng);
    let span = copy_span(&s);
    for (i, &on) in span.iter().enumerate() {
        if on {
            let p = i + 1;
            let src = 1 + (p - 1) % 21;
            assert!(s.tokens[p] == s.tokens[src] || s.tokens[p] == SEPARATOR);
        }
    }
}

#[test]
fn stage_two_copies_exceed_stage_one_context() {
    let mut c = Corpus::new(CorpusSpec::stage2(1, 64), 0).unwrap();
    let ks: Vec<usize> = c
        .generate(200, 256)
        .unwrap()
        .iter()
        .filter_map(|s| match s.task {
            Task::Copy { k } => Some(k),
            _ => None,
        })
        .collect();
    assert!(ks.len() > 80);
    assert!(ks.iter().all(|&k| (48..=96).contains(&k)));
    assert!(ks.iter().filter(|&&k| 2 * k + 2 > 64).count() == ks.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_samples_verify(seed in 0u64..10_000, len in 8usize..200) {
        let mut c = Corpus::new(CorpusSpec::stage1(seed), seed % 3).unwrap();
        for s in c.generate(4, len).unwrap() {
            prop_assert_eq!(s.tokens.len(), len + 1);
            prop_assert!(verify(&s, &c.chain).is_ok());
        }
    }
}
