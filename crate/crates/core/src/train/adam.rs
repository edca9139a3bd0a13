//! Adaptive moment estimation over flat parameter blocks.

use crate::real::{lit, Real};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// Moments for one parameter block, with one step counter per row so rows
/// can be updated lazily (only when they received a gradient).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub row_len: usize,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub steps: Vec<u64>,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, row_len: usize) -> Self {
        let row_len = row_len.max(1);
        Self { row_len, m: vec![T::zero(); len], v: vec![T::zero(); len], steps: vec![0; len.div_ceil(row_len)] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Update every row of `params`.
    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        for r in 0..self.steps.len() {
            self.step_row(params, grad, lr, r);
        }
    }

    /// Update one row; `grad` is indexed like `params`.
    pub fn step_row(&mut self, params: &mut [T], grad: &[T], lr: f64, row: usize) {
        let (a, b) = (row * self.row_len, ((row + 1) * self.row_len).min(params.len()));
        self.steps[row] += 1;
        let t = self.steps[row] as i32;
        let b1 = lit::<T>(BETA1);
        let b2 = lit::<T>(BETA2);
        let one = T::one();
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let lr = lit::<T>(lr);
        let eps = lit::<T>(EPSILON);
        for k in a..b {
            let g = grad[k];
            self.m[k] = b1 * self.m[k] + (one - b1) * g;
            self.v[k] = b2 * self.v[k] + (one - b2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= lr * mh / (vh.sqrt() + eps);
        }
    }

    /// Keep the rows whose flag is set.
    pub fn retain_rows(&mut self, keep: &[bool]) {
        let rl = self.row_len;
        let mut m = Vec::new();
        let mut v = Vec::new();
        let mut steps = Vec::new();
        for (r, k) in keep.iter().enumerate() {
            if *k {
                m.extend_from_slice(&self.m[r * rl..(r + 1) * rl]);
                v.extend_from_slice(&self.v[r * rl..(r + 1) * rl]);
                steps.push(self.steps[r]);
            }
        }
        self.m = m;
        self.v = v;
        self.steps = steps;
    }
}
