//! Joint-configuration tables and projections between nested scopes.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Number of joint configurations of a scope with the given radices.
pub fn table_size(radices: &[usize]) -> usize {
    radices.iter().product()
}

/// For every configuration of a scope with `radices`, the index of the
/// configuration of the sub-scope made of digits `positions` (in that order).
pub fn projection_map(radices: &[usize], positions: &[usize]) -> Vec<u32> {
    let size = table_size(radices);
    let mut strides = vec![0usize; radices.len()];
    let mut s = 1;
    for &p in positions {
        strides[p] = s;
        s *= radices[p];
    }
    let mut out = Vec::with_capacity(size);
    let mut digits = vec![0usize; radices.len()];
    let mut idx = 0usize;
    for _ in 0..size {
        out.push(idx as u32);
        // odometer increment, first digit fastest
        for t in 0..radices.len() {
            digits[t] += 1;
            idx += strides[t];
            if digits[t] < radices[t] {
                break;
            }
            digits[t] = 0;
            idx -= radices[t] * strides[t];
        }
    }
    out
}

/// Positions of `sub` inside `scope`; `None` if some element is missing.
pub fn positions_in(scope: &[usize], sub: &[usize]) -> Option<Vec<usize>> {
    sub.iter().map(|v| scope.iter().position(|w| w == v)).collect()
}

type MapKey = (Vec<usize>, Vec<usize>);

/// Shares identical projection maps between regions of the same shape.
#[derive(Default)]
pub struct ProjectionPool {
    maps: Mutex<HashMap<MapKey, Arc<[u32]>>>,
}

impl ProjectionPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, radices: &[usize], positions: &[usize]) -> Arc<[u32]> {
        let key = (radices.to_vec(), positions.to_vec());
        let mut maps = self.maps.lock().expect("projection pool poisoned");
        maps.entry(key)
            .or_insert_with(|| projection_map(radices, positions).into())
            .clone()
    }

    pub fn len(&self) -> usize {
        self.maps.lock().expect("projection pool poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sums `table` (indexed by the big scope) into `out` (indexed by the sub-scope).
pub fn marginalize_into(table: &[f64], map: &[u32], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (&w, &k) in table.iter().zip(map) {
        out[k as usize] += w;
    }
}

/// Normalizes in place; returns the original sum.
pub fn normalize(table: &mut [f64]) -> f64 {
    let s: f64 = table.iter().sum();
    if s > 0.0 && s.is_finite() {
        let inv = 1.0 / s;
        table.iter_mut().for_each(|v| *v *= inv);
    }
    s
}

/// `ln sum exp(x)` with max shift.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Converts log-weights into a normalized probability table; returns the log normalizer.
pub fn softmax_into(log_w: &[f64], out: &mut [f64]) -> f64 {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &l) in out.iter_mut().zip(log_w) {
        *o = (l - max).exp();
        s += *o;
    }
    let inv = 1.0 / s;
    out.iter_mut().for_each(|v| *v *= inv);
    max + s.ln()
}

/// Index of the globally spin-flipped configuration of a binary scope.
#[inline]
pub fn flip_index(idx: usize, size: usize) -> usize {
    idx ^ (size - 1)
}
