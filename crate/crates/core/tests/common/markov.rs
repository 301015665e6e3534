//! Two first-order Markov chains over a 12-symbol alphabet, one per value of
//! a single context variable. Each chain keeps 95% of every row's mass on
//! its own half of the alphabet. Sentence lengths are uniform in {2, 3, 4}.

use super::report;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ALPHABET: &[u8; 12] = b"abcdefghijkl";
pub const VALUES: [&str; 2] = ["A", "B"];
pub const LEAK: f64 = 0.05;
pub const LENGTHS: [usize; 3] = [2, 3, 4];
/// Seed of the transition matrices; corpora are drawn with other seeds.
pub const MATRIX_SEED: u64 = 20_240_611;

/// `chains[v][s][t]`: probability of symbol `t` after state `s`, where state
/// 0 is the sentence start and state `i + 1` is symbol `i`.
pub struct Chains {
    pub chains: Vec<Vec<Vec<f64>>>,
}

impl Chains {
    pub fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(MATRIX_SEED);
        let chains = (0..2)
            .map(|v| {
                (0..=ALPHABET.len())
                    .map(|_| {
                        let raw: Vec<f64> = (0..ALPHABET.len()).map(|_| rng.gen_range(0.1..1.0)).collect();
                        let own = |t: usize| t / 6 == v;
                        let own_sum: f64 = (0..12).filter(|&t| own(t)).map(|t| raw[t]).sum();
                        let other_sum: f64 = (0..12).filter(|&t| !own(t)).map(|t| raw[t]).sum();
                        (0..12)
                            .map(|t| {
                                if own(t) {
                                    (1.0 - LEAK) * raw[t] / own_sum
                                } else {
                                    LEAK * raw[t] / other_sum
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { chains }
    }

    pub fn print(&self) {
        for (v, rows) in self.chains.iter().enumerate() {
            report(&format!("transition matrix for value {} (rows: start, a..l; columns a..l)", VALUES[v]));
            for row in rows {
                let cells: Vec<String> = row.iter().map(|p| format!("{p:.4}")).collect();
                report(&format!("  {}", cells.join(" ")));
            }
        }
    }

    /// `n` lines of `value<TAB>symbols`, values alternating at random.
    pub fn sample(&self, n: usize, seed: u64) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = String::new();
        for _ in 0..n {
            let v = rng.gen_range(0..2);
            let len = LENGTHS[rng.gen_range(0..LENGTHS.len())];
            out.push_str(VALUES[v]);
            out.push('\t');
            let mut state = 0;
            for _ in 0..len {
                let row = &self.chains[v][state];
                let mut u: f64 = rng.gen();
                let mut t = 0;
                while t + 1 < row.len() && u >= row[t] {
                    u -= row[t];
                    t += 1;
                }
                out.push(ALPHABET[t] as char);
                state = t + 1;
            }
            out.push('\n');
        }
        out
    }

    /// `log p(text | value)` including the end of sentence.
    pub fn log_prob(&self, value: usize, text: &str) -> f64 {
        let mut lp = 0.0;
        let mut state = 0;
        for b in text.bytes() {
            let t = (b - b'a') as usize;
            lp += self.chains[value][state][t].ln();
            state = t + 1;
        }
        lp + length_log_prob(text.len())
    }
}

/// `log P(end after exactly len symbols)` factorized into per-position
/// continue and stop decisions, as a sequence model sees them.
fn length_log_prob(len: usize) -> f64 {
    let remaining = |k: usize| LENGTHS.iter().filter(|&&l| l >= k).count() as f64;
    let mut lp = 0.0;
    for k in 0..len {
        // continue past position k given the sentence reached it
        lp += (remaining(k + 1) / remaining(k)).ln();
    }
    lp + (1.0 / remaining(len)).ln()
}

/// Ideal per-token perplexities on `lines`: knowing the value, and under the
/// equal mixture of both chains. Also the accuracy of the Bayes classifier.
pub fn oracle(chains: &Chains, lines: &str) -> (f64, f64, f64) {
    let (mut known, mut mixed, mut tokens, mut correct, mut n) = (0.0, 0.0, 0usize, 0usize, 0usize);
    for line in lines.lines() {
        let (value, text) = line.split_once('\t').unwrap();
        let v = VALUES.iter().position(|&x| x == value).unwrap();
        let lps = [chains.log_prob(0, text), chains.log_prob(1, text)];
        known += lps[v];
        let m = lps[0].max(lps[1]);
        mixed += m + (0.5 * ((lps[0] - m).exp() + (lps[1] - m).exp())).ln();
        tokens += text.len() + 1;
        let guess = if lps[0] >= lps[1] { 0 } else { 1 };
        correct += (guess == v) as usize;
        n += 1;
    }
    (
        (-known / tokens as f64).exp(),
        (-mixed / tokens as f64).exp(),
        correct as f64 / n as f64,
    )
}
