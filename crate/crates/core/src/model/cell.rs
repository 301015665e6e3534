//! Coupled input-forget gate LSTM cell.
//!
//! The stacked pre-activation holds three blocks of width `d`: candidate,
//! input gate, output gate. The forget gate is `1 − i`.

use ndarray::{s, Array1, ArrayView1};

use crate::linalg::sigmoid;

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub h: Array1<f64>,
    pub cell: Array1<f64>,
}

impl RecurrentState {
    pub fn zeros(d: usize) -> Self {
        Self {
            h: Array1::zeros(d),
            cell: Array1::zeros(d),
        }
    }
}

/// Values kept from the forward step for backpropagation.
#[derive(Clone, Debug)]
pub struct CellCache {
    pub z: Array1<f64>,
    pub i: Array1<f64>,
    pub o: Array1<f64>,
    pub prev_cell: Array1<f64>,
    pub tanh_cell: Array1<f64>,
}

pub fn cifg_step(pre: ArrayView1<f64>, prev: &RecurrentState) -> (RecurrentState, CellCache) {
    let d = prev.cell.len();
    assert_eq!(pre.len(), 3 * d, "pre-activation must have length 3d");
    let z = pre.slice(s![..d]).mapv(f64::tanh);
    let i = pre.slice(s![d..2 * d]).mapv(sigmoid);
    let o = pre.slice(s![2 * d..]).mapv(sigmoid);
    let mut cell = Array1::zeros(d);
    for j in 0..d {
        cell[j] = (1.0 - i[j]) * prev.cell[j] + i[j] * z[j];
    }
    let tanh_cell = cell.mapv(f64::tanh);
    let h = &o * &tanh_cell;
    let cache = CellCache {
        z,
        i,
        o,
        prev_cell: prev.cell.clone(),
        tanh_cell,
    };
    (RecurrentState { h, cell }, cache)
}

/// Given gradients w.r.t. `h_t` and `cell_t`, returns the gradient w.r.t. the
/// stacked pre-activation and w.r.t. `cell_{t−1}`.
pub fn cifg_backward(cache: &CellCache, d_h: &Array1<f64>, d_cell: &Array1<f64>) -> (Array1<f64>, Array1<f64>) {
    let d = d_h.len();
    let mut d_pre = Array1::zeros(3 * d);
    let mut d_prev_cell = Array1::zeros(d);
    for j in 0..d {
        let (z, i, o, tc) = (cache.z[j], cache.i[j], cache.o[j], cache.tanh_cell[j]);
        let d_o = d_h[j] * tc;
        let dc = d_cell[j] + d_h[j] * o * (1.0 - tc * tc);
        let d_i = dc * (z - cache.prev_cell[j]);
        let d_z = dc * i;
        d_prev_cell[j] = dc * (1.0 - i);
        d_pre[j] = d_z * (1.0 - z * z);
        d_pre[d + j] = d_i * i * (1.0 - i);
        d_pre[2 * d + j] = d_o * o * (1.0 - o);
    }
    (d_pre, d_prev_cell)
}
