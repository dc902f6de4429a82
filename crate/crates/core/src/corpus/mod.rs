//! Synthetic byte-level corpus: an order-2 Markov chain, a copy task and a
//! modular running-sum task, each checked for label consistency.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const VOCAB: usize = 256;
pub const MARKOV_SYMBOLS: usize = 32;
pub const MODULUS: usize = 17;
/// First digit token of the modular task.
pub const DIGIT_BASE: u8 = 32;
/// Copy payload alphabet `COPY_BASE..COPY_BASE + COPY_SYMBOLS`.
pub const COPY_BASE: u8 = 64;
pub const COPY_SYMBOLS: usize = 128;
pub const COPY_START: u8 = 252;
pub const SEPARATOR: u8 = 253;
pub const SUM_START: u8 = 254;
pub const QUERY: u8 = 255;
pub const MIN_LEN: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Markov,
    /// Payload of `k` tokens repeated after separators.
    Copy { k: usize },
    Modular,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub task: Task,
    /// `len + 1` tokens: inputs are `tokens[..len]`, targets `tokens[1..]`.
    pub tokens: Vec<u8>,
}

/// Task mixture and copy-length range for one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    /// Weights over (markov, copy, modular).
    pub mix: [f64; 3],
    /// Inclusive payload length range for copy samples; clamped so at
    /// least one full repeat fits.
    pub copy_k: (usize, usize),
    pub seed: u64,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.mix.iter().sum();
        if self.mix.iter().any(|&w| !(w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Train(format!("corpus mix {:?} must be nonnegative and sum to 1", self.mix)));
        }
        if self.copy_k.0 == 0 || self.copy_k.0 > self.copy_k.1 {
            return Err(Error::Train(format!("copy length range {:?} is empty", self.copy_k)));
        }
        Ok(())
    }

    /// Short-context mixture.
    pub fn stage1(seed: u64) -> Self {
        CorpusSpec { mix: [0.45, 0.35, 0.2], copy_k: (4, 24), seed }
    }

    /// Long-context mixture oversampling copies with payloads near the
    /// short context length.
    pub fn stage2(seed: u64, short_len: usize) -> Self {
        CorpusSpec { mix: [0.25, 0.6, 0.15], copy_k: (short_len.saturating_sub(16).max(4), short_len + 32), seed }
    }
}

/// Order-2 transition table: each context has four successors with fixed
/// decreasing probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovChain {
    next: Vec<[u8; 4]>,
}

const MARKOV_WEIGHTS: [f64; 4] = [0.55, 0.25, 0.15, 0.05];

impl MarkovChain {
    pub fn new(seed: u64) -> Self {
        let mut rng = Rng::derive(seed, 0x6d61726b);
        let next = (0..MARKOV_SYMBOLS * MARKOV_SYMBOLS)
            .map(|_| {
                let mut pick = [0u8; 4];
                let mut i = 0;
                while i < 4 {
                    let s = rng.below(MARKOV_SYMBOLS) as u8;
                    if !pick[..i].contains(&s) {
                        pick[i] = s;
                        i += 1;
                    }
                }
                pick
            })
            .collect();
        MarkovChain { next }
    }

    pub fn successors(&self, a: u8, b: u8) -> &[u8; 4] {
        &self.next[a as usize * MARKOV_SYMBOLS + b as usize]
    }

    /// `P(c | a, b)`.
    pub fn prob(&self, a: u8, b: u8, c: u8) -> f64 {
        self.successors(a, b).iter().position(|&s| s == c).map_or(0.0, |i| MARKOV_WEIGHTS[i])
    }
}

fn clamp_k(k: (usize, usize), len: usize) -> (usize, usize) {
    // COPY_START, payload, SEPARATOR, payload must fit in len + 1 tokens.
    let max = ((len + 1).saturating_sub(2) / 2).max(1);
    (k.0.min(max), k.1.min(max))
}

pub fn markov(chain: &MarkovChain, len: usize, rng: &mut Rng) -> Sample {
    let mut t = vec![rng.below(MARKOV_SYMBOLS) as u8, rng.below(MARKOV_SYMBOLS) as u8];
    while t.len() < len + 1 {
        let s = chain.successors(t[t.len() - 2], t[t.len() - 1]);
        t.push(s[rng.categorical(&MARKOV_WEIGHTS)]);
    }
    t.truncate(len + 1);
    Sample { task: Task::Markov, tokens: t }
}

/// `COPY_START x₁..x_k SEP x₁..x_k SEP x₁..`, cut to `len + 1` tokens.
pub fn copy(k: usize, len: usize, rng: &mut Rng) -> Sample {
    let payload: Vec<u8> = (0..k).map(|_| COPY_BASE + rng.below(COPY_SYMBOLS) as u8).collect();
    let mut t = vec![COPY_START];
    t.extend(&payload);
    while t.len() < len + 1 {
        t.push(SEPARATOR);
        t.extend(&payload);
    }
    t.truncate(len + 1);
    Sample { task: Task::Copy { k }, tokens: t }
}

/// `SUM_START d₁..d_m QUERY answer` with `answer = Σd mod 17`.
pub fn modular(len: usize, rng: &mut Rng) -> Sample {
    let m = len + 1 - 3;
    let digits: Vec<usize> = (0..m).map(|_| rng.below(MODULUS)).collect();
    let mut t = vec![SUM_START];
    t.extend(digits.iter().map(|&d| DIGIT_BASE + d as u8));
    t.push(QUERY);
    t.push(DIGIT_BASE + (digits.iter().sum::<usize>() % MODULUS) as u8);
    Sample { task: Task::Modular, tokens: t }
}

/// Check that every sample's structure and labels follow its task.
pub fn verify(sample: &Sample, chain: &MarkovChain) -> Result<()> {
    let t = &sample.tokens;
    let bad = |what: &str| Err(Error::Train(format!("{:?} sample: {what}", sample.task)));
    if t.len() < MIN_LEN + 1 {
        return bad("too short");
    }
    match sample.task {
        Task::Markov => {
            if t.iter().any(|&x| x as usize >= MARKOV_SYMBOLS) {
                return bad("symbol outside the chain alphabet");
            }
            if t.windows(3).any(|w| chain.prob(w[0], w[1], w[2]) == 0.0) {
                return bad("impossible transition");
            }
        }
        Task::Copy { k } => {
            if t[0] != COPY_START {
                return bad("missing start marker");
            }
            for (i, &x) in t.iter().enumerate().skip(1) {
                let pos = (i - 1) % (k + 1);
                let ok = if i > k && pos == k {
                    x == SEPARATOR
                } else if i <= k {
                    (COPY_BASE..COPY_BASE + COPY_SYMBOLS as u8).contains(&x)
                } else {
                    x == t[1 + pos]
                };
                if !ok {
                    return bad("copied token disagrees with payload");
                }
            }
        }
        Task::Modular => {
            let n = t.len();
            if t[0] != SUM_START || t[n - 2] != QUERY {
                return bad("missing markers");
            }
            let digits = &t[1..n - 2];
            if digits.iter().any(|&d| d < DIGIT_BASE || d >= DIGIT_BASE + MODULUS as u8) {
                return bad("digit out of range");
            }
            let sum: usize = digits.iter().map(|&d| (d - DIGIT_BASE) as usize).sum();
            if t[n - 1] != DIGIT_BASE + (sum % MODULUS) as u8 {
                return bad("wrong answer");
            }
        }
    }
    Ok(())
}

/// Positions (in the target sequence `tokens[1..]`) that a model with full
/// context can predict exactly: every copied token after the first separator.
pub fn copy_span(sample: &Sample) -> Vec<bool> {
    let n = sample.tokens.len() - 1;
    match sample.task {
        Task::Copy { k } => (0..n).map(|i| i + 1 > k + 1).collect(),
        _ => vec![false; n],
    }
}

/// A training batch of `batch` sequences of `len` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub tokens: Vec<usize>,
    pub targets: Vec<Option<usize>>,
    pub batch: usize,
    pub len: usize,
}

impl Batch {
    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let len = samples.first().ok_or(Error::EmptyCalibration)?.tokens.len() - 1;
        if samples.iter().any(|s| s.tokens.len() != len + 1) {
            return Err(Error::Train("samples in a batch must share a length".into()));
        }
        let mut tokens = Vec::with_capacity(samples.len() * len);
        let mut targets = Vec::with_capacity(samples.len() * len);
        for s in samples {
            tokens.extend(s.tokens[..len].iter().map(|&x| x as usize));
            targets.extend(s.tokens[1..].iter().map(|&x| Some(x as usize)));
        }
        Ok(Batch { tokens, targets, batch: samples.len(), len })
    }

    /// Keep targets only where `keep` holds (row-major over the batch).
    pub fn restrict(mut self, keep: &[bool]) -> Self {
        for (t, &k) in self.targets.iter_mut().zip(keep) {
            if !k {
                *t = None;
            }
        }
        self
    }
}

/// Deterministic sample stream for one corpus spec.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub chain: MarkovChain,
    rng: Rng,
}

impl Corpus {
    /// The chain depends only on `chain_seed`, so streams with different
    /// sample seeds share one language.
    pub fn new(spec: CorpusSpec, chain_seed: u64) -> Result<Self> {
        spec.validate()?;
        let rng = Rng::derive(spec.seed, 0x636f7270);
        Ok(Corpus { chain: MarkovChain::new(chain_seed), spec, rng })
    }

    pub fn sample(&mut self, len: usize) -> Result<Sample> {
        if len < MIN_LEN {
            return Err(Error::Train(format!("sequence length {len} below {MIN_LEN}")));
        }
        let s = match self.rng.categorical(&self.spec.mix) {
            0 => markov(&self.chain, len, &mut self.rng),
            1 => {
                let (lo, hi) = clamp_k(self.spec.copy_k, len);
                let k = lo + self.rng.below(hi - lo + 1);
                copy(k, len, &mut self.rng)
            }
            _ => modular(len, &mut self.rng),
        };
        verify(&s, &self.chain)?;
        Ok(s)
    }

    pub fn generate(&mut self, count: usize, len: usize) -> Result<Vec<Sample>> {
        (0..count).map(|_| self.sample(len)).collect()
    }

    pub fn batch(&mut self, batch: usize, len: usize) -> Result<Batch> {
        Batch::from_samples(&self.generate(batch, len)?)
    }
}

/// Long copy sequences with targets restricted to the copied span.
pub fn copy_eval_batch(seed: u64, count: usize, len: usize, k: (usize, usize)) -> Result<Batch> {
    let mut rng = Rng::derive(seed, 0x65766131);
    let (lo, hi) = clamp_k(k, len);
    let samples: Vec<Sample> = (0..count).map(|_| copy(lo + rng.below(hi - lo + 1), len, &mut rng)).collect();
    let keep: Vec<bool> = samples.iter().flat_map(copy_span).collect();
    Ok(Batch::from_samples(&samples)?.restrict(&keep))
}
