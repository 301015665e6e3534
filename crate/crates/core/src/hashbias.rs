//! Feature-hashed (word, context value) output bias with Bloom-filter gating.
//!
//! Every context variable `i` owns a hash `h_i(w, c) = (w·r_0 + c·r_i) mod l`
//! into a shared table of bias values. A pair only contributes when the
//! observed-pair filter reports it as seen in training; everything else is
//! gated to exactly zero.
//!
//! All multipliers come from a ChaCha8 stream seeded with the config seed:
//! stream 0 for the table, stream 1 for the filter. Multipliers are drawn
//! uniformly from `[1, size)`, word multiplier first, then one per variable
//! (table) or sixteen (word, context) pairs per variable (filter).

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::EncodedExample;

/// Number of bit probes per filter lookup.
pub const FILTER_HASHES: usize = 16;

/// Sparse gradient over table slots.
pub type SparseGrad = BTreeMap<usize, f64>;

#[inline]
fn mulmod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 % m as u128) * (b as u128 % m as u128) % m as u128) as u64
}

/// `(w·r_0 + c·r_i) mod l` without overflow for any 64-bit inputs.
#[inline]
pub fn hash_index(w: u64, c: u64, r0: u64, ri: u64, l: u64) -> u64 {
    assert!(l >= 1, "table size must be positive");
    let a = mulmod(w, r0, l) as u128;
    let b = mulmod(c, ri, l) as u128;
    ((a + b) % l as u128) as u64
}

fn draw_multiplier(rng: &mut ChaCha8Rng, size: u64) -> u64 {
    if size <= 1 {
        0
    } else {
        rng.gen_range(1..size)
    }
}

fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The hash table `H` of learned bias values.
#[derive(Clone, Debug, PartialEq)]
pub struct HashedBiasTable {
    pub seed: u64,
    pub word_multiplier: u64,
    pub context_multipliers: Vec<u64>,
    pub values: Vec<f64>,
}

impl HashedBiasTable {
    /// Zero-initialized table of `size` slots for `num_variables` variables.
    pub fn new(seed: u64, size: u64, num_variables: usize) -> Self {
        assert!(size >= 1, "table size must be positive");
        let mut rng = seeded_stream(seed, 0);
        let word_multiplier = draw_multiplier(&mut rng, size);
        let context_multipliers = (0..num_variables)
            .map(|_| draw_multiplier(&mut rng, size))
            .collect();
        Self {
            seed,
            word_multiplier,
            context_multipliers,
            values: vec![0.0; size as usize],
        }
    }

    pub fn size(&self) -> u64 {
        self.values.len() as u64
    }

    pub fn num_variables(&self) -> usize {
        self.context_multipliers.len()
    }

    #[inline]
    pub fn index(&self, variable: usize, w: u32, c: u32) -> usize {
        hash_index(
            w as u64,
            c as u64,
            self.word_multiplier,
            self.context_multipliers[variable],
            self.size(),
        ) as usize
    }
}

/// Bloom filter over (word, context value) pairs, one family of probes per
/// context variable. No false negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedPairFilter {
    pub seed: u64,
    num_bits: u64,
    words: Vec<u64>,
    /// `[variable][probe] = (word multiplier, context multiplier)`.
    multipliers: Vec<[(u64, u64); FILTER_HASHES]>,
}

impl ObservedPairFilter {
    /// Empty filter of `num_bits` bits.
    pub fn new(seed: u64, num_bits: u64, num_variables: usize) -> Self {
        assert!(num_bits >= 1, "filter needs at least one bit");
        let mut rng = seeded_stream(seed, 1);
        let multipliers = (0..num_variables)
            .map(|_| {
                let mut probes = [(0, 0); FILTER_HASHES];
                for p in probes.iter_mut() {
                    p.0 = draw_multiplier(&mut rng, num_bits);
                    p.1 = draw_multiplier(&mut rng, num_bits);
                }
                probes
            })
            .collect();
        Self {
            seed,
            num_bits,
            words: vec![0; num_bits.div_ceil(64) as usize],
            multipliers,
        }
    }

    /// Reassembles a filter from stored parts. `None` when the sizes disagree
    /// or a multiplier falls outside `[1, num_bits)`.
    pub fn from_raw(
        seed: u64,
        num_bits: u64,
        multipliers: Vec<[(u64, u64); FILTER_HASHES]>,
        words: Vec<u64>,
    ) -> Option<Self> {
        let ok = num_bits >= 1
            && words.len() as u64 == num_bits.div_ceil(64)
            && multipliers
                .iter()
                .flatten()
                .all(|&(a, b)| a < num_bits.max(2) && b < num_bits.max(2));
        ok.then_some(Self {
            seed,
            num_bits,
            words,
            multipliers,
        })
    }

    pub fn multipliers(&self) -> &[[(u64, u64); FILTER_HASHES]] {
        &self.multipliers
    }

    pub fn num_bits(&self) -> u64 {
        self.num_bits
    }

    pub fn num_variables(&self) -> usize {
        self.multipliers.len()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    fn probes(&self, variable: usize, w: u32, c: u32) -> impl Iterator<Item = u64> + '_ {
        self.multipliers[variable]
            .iter()
            .map(move |&(rw, rc)| hash_index(w as u64, c as u64, rw, rc, self.num_bits))
    }

    pub fn insert(&mut self, variable: usize, w: u32, c: u32) {
        let bits: Vec<u64> = self.probes(variable, w, c).collect();
        for b in bits {
            self.words[(b / 64) as usize] |= 1 << (b % 64);
        }
    }

    /// Product of the sixteen probed bits.
    pub fn contains(&self, variable: usize, w: u32, c: u32) -> bool {
        self.probes(variable, w, c)
            .all(|b| self.words[(b / 64) as usize] >> (b % 64) & 1 == 1)
    }

    /// One pass over `examples`, inserting (predicted token, context id) for
    /// every variable. The sentence-begin token is never predicted and is
    /// skipped.
    pub fn from_examples<'a>(
        seed: u64,
        num_bits: u64,
        num_variables: usize,
        examples: impl IntoIterator<Item = &'a EncodedExample>,
    ) -> Self {
        let mut filter = Self::new(seed, num_bits, num_variables);
        for ex in examples {
            for &w in ex.token_ids.iter().skip(1) {
                for (i, &c) in ex.context_ids.iter().enumerate() {
                    filter.insert(i, w, c);
                }
            }
        }
        filter
    }
}

/// Closed-form false-positive estimate `(1 − e^{−k·n/m})^k` with `k = 16`.
pub fn expected_false_positive_rate(insertions: u64, num_bits: u64) -> f64 {
    let k = FILTER_HASHES as f64;
    (1.0 - (-k * insertions as f64 / num_bits as f64).exp()).powf(k)
}

/// Table plus filter: the complete hashed adaptation term.
#[derive(Clone, Debug, PartialEq)]
pub struct HashedBias {
    pub table: HashedBiasTable,
    pub filter: ObservedPairFilter,
}

impl HashedBias {
    pub fn new(table: HashedBiasTable, filter: ObservedPairFilter) -> Self {
        assert_eq!(table.num_variables(), filter.num_variables());
        Self { table, filter }
    }

    /// Table slots that pass the gate for word `w` under `context_ids`.
    pub fn gated_indices<'a>(
        &'a self,
        w: u32,
        context_ids: &'a [u32],
    ) -> impl Iterator<Item = usize> + 'a {
        context_ids
            .iter()
            .enumerate()
            .filter(move |&(i, &c)| self.filter.contains(i, w, c))
            .map(move |(i, &c)| self.table.index(i, w, c))
    }

    /// `Σ_i H[h_i(w, c_i)] · B(w, c_i)`.
    pub fn lookup(&self, w: u32, context_ids: &[u32]) -> f64 {
        self.gated_indices(w, context_ids)
            .fold(0.0, |acc, idx| acc + self.table.values[idx])
    }

    /// Routes `upstream` to every gated-in slot of `w`.
    pub fn accumulate_grad(&self, w: u32, context_ids: &[u32], upstream: f64, grad: &mut SparseGrad) {
        if upstream == 0.0 {
            return;
        }
        for idx in self.gated_indices(w, context_ids) {
            *grad.entry(idx).or_default() += upstream;
        }
    }
}
