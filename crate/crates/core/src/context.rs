//! Context embeddings and the single-layer combiner producing the sentence
//! context vector.

use ndarray::{Array1, Array2};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::add_outer;

pub const INIT_RANGE: f64 = 0.05;

/// Embedding table per context variable plus combiner weights.
///
/// With exactly one variable the embedding row is the context vector and the
/// combiner is unused, so its width must equal the context dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextParams {
    /// `|C_i| × d_i`.
    pub embeddings: Vec<Array2<f64>>,
    /// `k × d_i`.
    pub combiners: Vec<Array2<f64>>,
    /// Length `k`.
    pub bias: Array1<f64>,
}

impl ContextParams {
    pub fn zeros(cardinalities: &[usize], dims: &[usize], k: usize) -> Self {
        assert_eq!(cardinalities.len(), dims.len());
        Self {
            embeddings: cardinalities
                .iter()
                .zip(dims)
                .map(|(&c, &d)| Array2::zeros((c, d)))
                .collect(),
            combiners: dims.iter().map(|&d| Array2::zeros((k, d))).collect(),
            bias: Array1::zeros(k),
        }
    }

    /// Uniform init in `[-0.05, 0.05]` for embeddings and combiners, zero bias.
    pub fn init<R: Rng>(cardinalities: &[usize], dims: &[usize], k: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(cardinalities, dims, k);
        let dist = Uniform::new_inclusive(-INIT_RANGE, INIT_RANGE);
        for m in p.embeddings.iter_mut().chain(p.combiners.iter_mut()) {
            m.iter_mut().for_each(|v| *v = dist.sample(rng));
        }
        p
    }

    pub fn num_variables(&self) -> usize {
        self.embeddings.len()
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.len() != self.num_variables() {
            return Err(Error::Shape(format!(
                "expected {} context ids, got {}",
                self.num_variables(),
                ids.len()
            )));
        }
        for (e, &id) in self.embeddings.iter().zip(ids) {
            if id as usize >= e.nrows() {
                return Err(Error::OutOfRange {
                    what: "context value",
                    id: id as usize,
                    size: e.nrows(),
                });
            }
        }
        Ok(())
    }

    /// Context vector for one id per variable: the raw embedding row when
    /// there is a single variable, otherwise `tanh(Σ_i M_i E_i[c_i] + b_0)`.
    pub fn embed(&self, ids: &[u32]) -> Result<Array1<f64>> {
        self.check_ids(ids)?;
        if self.num_variables() == 1 {
            let row = self.embeddings[0].row(ids[0] as usize);
            if row.len() != self.dim() {
                return Err(Error::Shape(format!(
                    "single-variable embedding width {} differs from context dimension {}",
                    row.len(),
                    self.dim()
                )));
            }
            return Ok(row.to_owned());
        }
        let mut acc = Array1::<f64>::zeros(self.dim());
        for ((m, e), &id) in self.combiners.iter().zip(&self.embeddings).zip(ids) {
            acc += &m.dot(&e.row(id as usize));
        }
        acc += &self.bias;
        Ok(acc.mapv_into(f64::tanh))
    }

    /// Accumulates into `grad` the gradient of a loss with upstream
    /// `d_context` at context vector `context` (the output of [`embed`]).
    ///
    /// [`embed`]: Self::embed
    pub fn backward(&self, ids: &[u32], context: &Array1<f64>, d_context: &Array1<f64>, grad: &mut Self) {
        if self.num_variables() == 1 {
            let mut row = grad.embeddings[0].row_mut(ids[0] as usize);
            row += d_context;
            return;
        }
        let d_pre: Array1<f64> = d_context * &context.mapv(|c| 1.0 - c * c);
        grad.bias += &d_pre;
        for (i, &id) in ids.iter().enumerate() {
            let e_row = self.embeddings[i].row(id as usize).to_owned();
            add_outer(&mut grad.combiners[i], &d_pre, &e_row);
            let d_e = self.combiners[i].t().dot(&d_pre);
            let mut row = grad.embeddings[i].row_mut(id as usize);
            row += &d_e;
        }
    }

    /// Other values of `variable` ranked by Euclidean distance between
    /// embedding rows, nearest first; ties go to the lower id.
    pub fn nearest_neighbors(&self, variable: usize, value_id: u32, top_k: usize) -> Result<Vec<(u32, f64)>> {
        let table = self.embeddings.get(variable).ok_or(Error::OutOfRange {
            what: "context variable",
            id: variable,
            size: self.num_variables(),
        })?;
        if value_id as usize >= table.nrows() {
            return Err(Error::OutOfRange {
                what: "context value",
                id: value_id as usize,
                size: table.nrows(),
            });
        }
        let query = table.row(value_id as usize);
        let mut ranked: Vec<(u32, f64)> = table
            .rows()
            .into_iter()
            .enumerate()
            .filter(|&(i, _)| i != value_id as usize)
            .map(|(i, row)| {
                let d = row
                    .iter()
                    .zip(query.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                (i as u32, d)
            })
            .collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        ranked.truncate(top_k);
        Ok(ranked)
    }
}
