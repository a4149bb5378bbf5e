//! Linear stability of the spin-flip symmetric fixed point and the inverse
//! temperature at which it loses stability.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engine::{EngineConfig, Init, MessagePlan, MessageState, Schedule};
use crate::error::{Error, Result};
use crate::factor_graph::FactorGraph;
use crate::region_graph::RegionGraph;

/// Finite-difference step in log-message coordinates.
pub const DEFAULT_PERTURBATION: f64 = 1e-6;

/// An attempt counts as stalled when a window of this many sweeps fails to
/// shrink the residual by [`STALL_FACTOR`].
const STALL_WINDOW: usize = 300;
const STALL_FACTOR: f64 = 0.9;

/// Depth of the Anderson mixing history.
const ANDERSON_DEPTH: usize = 8;

/// Flip-symmetric fixed point: every sweep is followed by projection onto
/// the symmetric subspace. The first attempt uses Anderson mixing on log
/// messages, which keeps the iteration count low near the end of the
/// symmetric branch. A stalled or degenerating attempt (messages pinned at
/// the floor) falls back to plain damped sweeps at half, then a quarter of
/// the damping.
pub fn paramagnetic_fixed_point(
    plan: &MessagePlan,
    beta: f64,
    config: &EngineConfig,
) -> Result<crate::engine::Solution> {
    symmetric_solve(plan, beta, config, 2)
}

fn symmetric_solve(
    plan: &MessagePlan,
    beta: f64,
    config: &EngineConfig,
    fallbacks: usize,
) -> Result<crate::engine::Solution> {
    if !plan.has_zero_field() {
        return Err(Error::Precondition(
            "the symmetric fixed point needs zero field on every vertex".into(),
        ));
    }
    if !plan.is_binary() {
        return Err(Error::Precondition("spin-flip projection needs binary vertices".into()));
    }
    config.validate()?;
    let mut start = plan.initial_state(&config.init)?;
    start.symmetrize();
    if let Some(state) = anderson_symmetric(plan, beta, config, &start)? {
        return Ok(crate::engine::Solution { state, converged: true });
    }
    let mut damped = config.clone();
    let mut last = start.clone();
    for _ in 0..fallbacks {
        damped.damping *= 0.5;
        let mut state = start.clone();
        let mut checkpoint = f64::INFINITY;
        for it in 0..config.max_iters {
            let mut next = plan.sweep(&state, beta, &damped)?;
            next.symmetrize();
            next.residual = next.distance(&state, plan.active_edges());
            state = next;
            if state.residual < config.tol {
                if degenerate(plan, &state) {
                    break;
                }
                return Ok(crate::engine::Solution { state, converged: true });
            }
            if (it + 1) % STALL_WINDOW == 0 {
                if state.residual > STALL_FACTOR * checkpoint {
                    break;
                }
                checkpoint = state.residual;
            }
            if !state.residual.is_finite() || degenerate(plan, &state) {
                break;
            }
        }
        last = state;
    }
    Ok(crate::engine::Solution {
        state: last,
        converged: false,
    })
}

fn log_centered(plan: &MessagePlan, state: &MessageState) -> Vec<f64> {
    let mut x = Vec::new();
    for &e in plan.active_edges() {
        let m = state.message(e);
        let start = x.len();
        x.extend(m.iter().map(|v| v.ln()));
        let mean = x[start..].iter().sum::<f64>() / m.len() as f64;
        x[start..].iter_mut().for_each(|v| *v -= mean);
    }
    x
}

fn from_log(plan: &MessagePlan, template: &MessageState, x: &[f64]) -> MessageState {
    let mut state = template.clone();
    let mut k = 0;
    for &e in plan.active_edges() {
        let m = state.message_mut(e);
        let block = &x[k..k + m.len()];
        k += m.len();
        let max = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (v, &l) in m.iter_mut().zip(block) {
            *v = (l - max).exp();
        }
        let floor = crate::engine::MESSAGE_FLOOR;
        m.iter_mut().for_each(|v| *v = v.max(floor));
        let sum: f64 = m.iter().sum();
        m.iter_mut().for_each(|v| *v /= sum);
    }
    state.symmetrize();
    state
}

/// Anderson-accelerated symmetric iteration; `None` if it stalls or degenerates.
fn anderson_symmetric(
    plan: &MessagePlan,
    beta: f64,
    config: &EngineConfig,
    start: &MessageState,
) -> Result<Option<MessageState>> {
    let undamped = EngineConfig {
        damping: 1.0,
        ..config.clone()
    };
    let mix = config.damping;
    let mut state = start.clone();
    let mut x = log_centered(plan, &state);
    let mut dx: Vec<Vec<f64>> = Vec::new();
    let mut dg: Vec<Vec<f64>> = Vec::new();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut best = f64::INFINITY;
    let mut checkpoint = f64::INFINITY;
    for it in 0..config.max_iters {
        let mut image = plan.sweep(&state, beta, &undamped)?;
        image.symmetrize();
        let residual = image.distance(&state, plan.active_edges());
        if !residual.is_finite() {
            return Ok(None);
        }
        if residual < config.tol {
            if degenerate(plan, &image) {
                return Ok(None);
            }
            image.residual = residual;
            image.iteration = it + 1;
            return Ok(Some(image));
        }
        if (it + 1) % STALL_WINDOW == 0 {
            if residual > STALL_FACTOR * checkpoint {
                return Ok(None);
            }
            checkpoint = residual;
        }
        let fx = log_centered(plan, &image);
        let g: Vec<f64> = fx.iter().zip(&x).map(|(a, b)| a - b).collect();
        if residual > 1e3 * best {
            // the history has led astray; restart it from here
            dx.clear();
            dg.clear();
            prev = None;
        }
        best = best.min(residual);
        if let Some((px, pg)) = prev.take() {
            dx.push(x.iter().zip(&px).map(|(a, b)| a - b).collect());
            dg.push(g.iter().zip(&pg).map(|(a, b)| a - b).collect());
            if dx.len() > ANDERSON_DEPTH {
                dx.remove(0);
                dg.remove(0);
            }
        }
        let mut next: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + mix * b).collect();
        if !dg.is_empty() {
            let k = dg.len();
            let gram = DMatrix::from_fn(k, k, |i, j| dot(&dg[i], &dg[j]));
            let rhs = DVector::from_fn(k, |i, _| dot(&dg[i], &g));
            let reg = 1e-12 * gram.trace().max(1e-300);
            let gram = gram + DMatrix::from_diagonal_element(k, k, reg);
            if let Some(gamma) = gram.cholesky().map(|c| c.solve(&rhs)) {
                for (j, &c) in gamma.iter().enumerate() {
                    for ((n, a), b) in next.iter_mut().zip(&dx[j]).zip(&dg[j]) {
                        *n -= c * (a + mix * b);
                    }
                }
            }
        }
        prev = Some((x, g));
        state = from_log(plan, &state, &next);
        if degenerate(plan, &state) {
            return Ok(None);
        }
        x = log_centered(plan, &state);
    }
    Ok(None)
}

/// Some active message has an entry pinned at the floor.
fn degenerate(plan: &MessagePlan, state: &MessageState) -> bool {
    plan.active_edges().iter().any(|&e| {
        let m = state.message(e);
        let max = m.iter().copied().fold(0.0, f64::max);
        m.iter().any(|&v| v <= 10.0 * crate::engine::MESSAGE_FLOOR * max)
    })
}

/// The undamped Jacobi sweep linearized at a state, acting on log-message
/// perturbations of the active edges with the per-message mean removed.
#[derive(Clone)]
pub struct LinearizedSweep<'a> {
    plan: &'a MessagePlan,
    base: MessageState,
    beta: f64,
    delta: f64,
    /// (edge, offset into the state, offset into the tangent vector, size)
    blocks: Vec<(usize, usize, usize, usize)>,
    dim: usize,
    config: EngineConfig,
    gauge: Option<&'a GaugeProjector>,
    parity: Option<Parity>,
    /// Log image of the base state, for one-sided differences.
    base_image: Vec<f64>,
    central: bool,
}

/// Behaviour of a log-message perturbation under the global spin flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl<'a> LinearizedSweep<'a> {
    pub fn new(plan: &'a MessagePlan, base: &MessageState, beta: f64, delta: f64) -> Result<Self> {
        let mut blocks = Vec::with_capacity(plan.active_edges().len());
        let mut dim = 0;
        for &e in plan.active_edges() {
            let size = plan.message_sizes()[e];
            blocks.push((e, base.offsets()[e], dim, size));
            dim += size;
        }
        let config = EngineConfig {
            damping: 1.0,
            schedule: Schedule::Jacobi,
            ..EngineConfig::default()
        };
        let mut op = Self {
            plan,
            base: base.clone(),
            beta,
            delta,
            blocks,
            dim,
            config,
            gauge: None,
            parity: None,
            base_image: Vec::new(),
            central: false,
        };
        let mut image = vec![0.0; dim];
        op.log_image(base, &mut image)?;
        op.base_image = image;
        Ok(op)
    }

    /// Central instead of one-sided differences: twice the sweeps, error
    /// second order in the step.
    pub fn with_central_differences(mut self) -> Self {
        self.central = true;
        self
    }

    /// Restricts the map to one flip-parity sector; at zero field the sweep
    /// preserves both.
    pub fn with_parity(mut self, parity: Parity) -> Self {
        self.parity = Some(parity);
        self
    }

    /// Restricts the map to belief-visible directions.
    pub fn with_gauge(mut self, gauge: &'a GaugeProjector) -> Self {
        self.gauge = Some(gauge);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Removes the per-message mean (the normalization direction) and, with
    /// a gauge projector attached, the belief-invisible directions.
    pub fn project(&self, v: &mut [f64]) {
        if let Some(p) = self.parity {
            let sign = if p == Parity::Even { 1.0 } else { -1.0 };
            for &(_, _, t, size) in &self.blocks {
                let block = &mut v[t..t + size];
                for k in 0..size {
                    let j = crate::table::flip_index(k, size);
                    if j > k {
                        let a = 0.5 * (block[k] + sign * block[j]);
                        block[k] = a;
                        block[j] = sign * a;
                    }
                }
            }
        }
        if let Some(g) = self.gauge {
            g.project(v);
            return;
        }
        for &(_, _, t, size) in &self.blocks {
            let block = &mut v[t..t + size];
            let mean = block.iter().sum::<f64>() / size as f64;
            block.iter_mut().for_each(|x| *x -= mean);
        }
    }

    fn perturbed(&self, v: &[f64], step: f64) -> MessageState {
        let mut s = self.base.clone();
        let values = s.values_mut();
        for &(_, o, t, size) in &self.blocks {
            let block = &mut values[o..o + size];
            for (x, &d) in block.iter_mut().zip(&v[t..t + size]) {
                *x *= (step * d).exp();
            }
            let sum: f64 = block.iter().sum();
            block.iter_mut().for_each(|x| *x /= sum);
        }
        s
    }

    fn log_image(&self, state: &MessageState, out: &mut [f64]) -> Result<()> {
        let next = self.plan.sweep(state, self.beta, &self.config)?;
        let values = next.values();
        for &(_, o, t, size) in &self.blocks {
            for k in 0..size {
                out[t + k] = values[o + k].ln();
            }
        }
        Ok(())
    }

    /// Finite-difference Jacobian-vector product.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(vec![0.0; self.dim]);
        }
        let step = self.delta / norm;
        let mut plus = vec![0.0; self.dim];
        self.log_image(&self.perturbed(v, step), &mut plus)?;
        let mut out: Vec<f64> = if self.central {
            let mut minus = vec![0.0; self.dim];
            self.log_image(&self.perturbed(v, -step), &mut minus)?;
            plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * step)).collect()
        } else {
            plus.iter().zip(&self.base_image).map(|(p, b)| (p - b) / step).collect()
        };
        self.project(&mut out);
        Ok(out)
    }

    /// Dense Jacobian in the projected coordinates; for small systems only.
    pub fn dense(&self) -> Result<DMatrix<f64>> {
        let columns: Vec<Vec<f64>> = (0..self.dim)
            .into_par_iter()
            .map(|k| {
                let mut v = vec![0.0; self.dim];
                v[k] = 1.0;
                self.project(&mut v);
                self.apply(&v)
            })
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(self.dim, self.dim, |i, j| columns[j][i]))
    }
}

fn schur_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = m.nrows();
    let scale = m.norm().max(1e-300) / (n.max(1) as f64).sqrt();
    // equal-modulus spectra (rotations, +/- pairs) can stall the QR sweep;
    // a diagonal shift separates the moduli without changing eigenvectors
    for shift in [0.0, 0.37, -0.61, 1.3] {
        let shifted = m + DMatrix::from_diagonal_element(n, n, shift * scale);
        if let Some(s) = Schur::try_new(shifted, 1e-14, 1000 * n.max(1)) {
            return Ok(s
                .complex_eigenvalues()
                .iter()
                .map(|z| z - Complex64::new(shift * scale, 0.0))
                .collect());
        }
    }
    // clusters of exact zeros (projected-out directions) can still stall
    // it; a perturbation at the 1e-12 level breaks the degeneracy and moves
    // simple eigenvalues by about as much
    let mut rng = ChaCha8Rng::seed_from_u64(0x5c4u64);
    for attempt in 0..4 {
        let eps = 1e-12 * scale * 10f64.powi(attempt);
        let noisy = DMatrix::from_fn(n, n, |i, j| m[(i, j)] + eps * rng.random_range(-1.0..1.0));
        if let Some(s) = Schur::try_new(noisy, 1e-14, 1000 * n.max(1)) {
            return Ok(s.complex_eigenvalues().iter().copied().collect());
        }
    }
    Err(Error::numeric(None, "Schur iteration did not converge"))
}

/// Eigenvalues of a dense real matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    schur_eigenvalues(m)
}

/// Which end of the spectrum the iterative solver chases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Largest `|mu|`: the growth rate of the undamped iteration.
    LargestModulus,
    /// Largest `Re mu`: once it exceeds one no damping factor can stabilize
    /// the iteration.
    Rightmost,
}

impl Target {
    fn key(self, z: Complex64) -> f64 {
        match self {
            Target::LargestModulus => z.norm(),
            Target::Rightmost => z.re,
        }
    }

    /// The scalar the target is ranked by.
    pub fn value(self, z: Complex64) -> f64 {
        self.key(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOptions {
    pub perturbation: f64,
    pub krylov_dim: usize,
    pub max_restarts: usize,
    /// Relative Ritz residual (or change between restarts) that counts as converged.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            perturbation: DEFAULT_PERTURBATION,
            krylov_dim: 60,
            max_restarts: 40,
            tol: 1e-8,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    pub target: Target,
    /// Ritz value at the targeted end of the spectrum.
    pub eigenvalue: Complex64,
    /// Largest Ritz modulus seen in the final Krylov space.
    pub max_modulus: f64,
    /// `||J y - theta y||` of the returned Ritz pair.
    pub residual: f64,
    pub converged: bool,
    pub products: usize,
    /// Real combination of the Ritz vector, usable as a warm start.
    pub vector: Vec<f64>,
}

impl SpectralEstimate {
    /// `|mu|` or `Re mu` depending on the target.
    pub fn value(&self) -> f64 {
        self.target.value(self.eigenvalue)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Targeted eigenpair of a small Hessenberg matrix, the eigenvector by
/// complex inverse iteration.
fn targeted_ritz(h: &DMatrix<f64>, target: Target) -> Result<(Complex64, DVector<Complex64>, f64)> {
    let k = h.nrows();
    let evs = schur_eigenvalues(h)?;
    let theta = evs
        .iter()
        .copied()
        .max_by(|a, b| target.key(*a).total_cmp(&target.key(*b)))
        .expect("non-empty");
    let max_modulus = evs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let hc: DMatrix<Complex64> = h.map(|x| Complex64::new(x, 0.0));
    let scale = h.norm().max(1e-300);
    let shift = theta + Complex64::new(1e-13 * scale, 1e-13 * scale);
    let lu = (hc - DMatrix::from_diagonal_element(k, k, shift)).lu();
    let mut y = DVector::from_element(k, Complex64::new(1.0, 0.0));
    for _ in 0..3 {
        if let Some(next) = lu.solve(&y) {
            let n = next.norm();
            if n.is_finite() && n > 0.0 {
                y = next / Complex64::new(n, 0.0);
            }
        }
    }
    Ok((theta, y, max_modulus))
}

/// In-place orthonormal Walsh-Hadamard transform; its own inverse.
fn walsh_hadamard(x: &mut [f64]) {
    let n = x.len();
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (x[j], x[j + h]);
                x[j] = a + b;
                x[j + h] = a - b;
            }
        }
        h *= 2;
    }
    let scale = 1.0 / (n as f64).sqrt();
    x.iter_mut().for_each(|v| *v *= scale);
}

struct GaugeGroup {
    /// Tangent-vector slots (in the Walsh domain) carrying this character.
    slots: Vec<usize>,
    /// Orthonormal basis of the belief-visible part of those slots.
    visible: DMatrix<f64>,
}

/// Orthogonal projector that removes log-message perturbations leaving every
/// region belief unchanged. Such perturbations are fixed by the sweep (its
/// Jacobian is the identity on them), so they would pin an eigenvalue at
/// exactly one for every temperature.
///
/// For binary variables the lift of a message onto a region keeps its Walsh
/// characters, so the belief change on region `alpha` in character `T` is the
/// sum of the `T` coefficients of the incoming messages. The invisible
/// directions therefore split into small independent kernels, one per `T`.
pub struct GaugeProjector {
    blocks: Vec<(usize, usize)>,
    groups: Vec<GaugeGroup>,
    gauge_dim: usize,
}

impl GaugeProjector {
    pub fn new(rg: &RegionGraph, fg: &FactorGraph, plan: &MessagePlan) -> Result<Self> {
        if rg.num_edges() != plan.num_edges() || rg.num_regions() != plan.num_regions() {
            return Err(Error::Config("region graph does not match the message plan".into()));
        }
        if !fg.is_binary() {
            return Err(Error::Precondition("gauge projection needs binary vertices".into()));
        }
        let mut blocks = Vec::with_capacity(plan.active_edges().len());
        let mut index: std::collections::HashMap<Vec<usize>, usize> = Default::default();
        let mut members: Vec<Vec<(usize, usize)>> = Vec::new();
        let mut dim = 0;
        for &e in plan.active_edges() {
            let size = plan.message_sizes()[e];
            blocks.push((dim, size));
            let scope = &rg.region(rg.edge(e).child).vertices;
            for t in 1..size {
                let mut key: Vec<usize> = (0..scope.len()).filter(|k| t >> k & 1 == 1).map(|k| scope[k]).collect();
                key.sort_unstable();
                let next = members.len();
                let g = *index.entry(key).or_insert(next);
                if g == next {
                    members.push(Vec::new());
                }
                members[g].push((e, dim + t));
            }
            dim += size;
        }
        let mut groups = Vec::with_capacity(members.len());
        let mut gauge_dim = 0;
        for cols in members {
            let mut rows: Vec<usize> = cols
                .iter()
                .flat_map(|&(e, _)| plan.receivers(e).iter().copied())
                .collect();
            rows.sort_unstable();
            rows.dedup();
            // columns of `m` span the visible directions, one per region
            let m = DMatrix::from_fn(cols.len(), rows.len(), |c, r| {
                let e = cols[c].0;
                if plan.receivers(e).contains(&rows[r]) {
                    1.0 / (plan.message_sizes()[e] as f64).sqrt()
                } else {
                    0.0
                }
            });
            let svd = m.svd(true, false);
            let u = svd.u.expect("left singular vectors requested");
            let smax = svd.singular_values.max();
            let keep: Vec<usize> = (0..svd.singular_values.len())
                .filter(|&k| svd.singular_values[k] > 1e-10 * smax)
                .collect();
            gauge_dim += cols.len() - keep.len();
            groups.push(GaugeGroup {
                slots: cols.iter().map(|&(_, s)| s).collect(),
                visible: u.select_columns(&keep),
            });
        }
        Ok(Self {
            blocks,
            groups,
            gauge_dim,
        })
    }

    /// Dimension of the removed subspace, per-message constants excluded.
    pub fn gauge_dim(&self) -> usize {
        self.gauge_dim
    }

    pub fn project(&self, v: &mut [f64]) {
        for &(o, size) in &self.blocks {
            walsh_hadamard(&mut v[o..o + size]);
        }
        let mut out = vec![0.0; v.len()];
        for g in &self.groups {
            let a = DVector::from_iterator(g.slots.len(), g.slots.iter().map(|&s| v[s]));
            let kept = &g.visible * (g.visible.tr_mul(&a));
            for (&s, &x) in g.slots.iter().zip(kept.iter()) {
                out[s] = x;
            }
        }
        for &(o, size) in &self.blocks {
            walsh_hadamard(&mut out[o..o + size]);
        }
        v.copy_from_slice(&out);
    }
}

fn random_start(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Restarted Arnoldi on the linearized sweep, converging on one end of the
/// spectrum. `start` overrides the seeded random start vector.
pub fn arnoldi(
    op: &LinearizedSweep<'_>,
    options: &SpectralOptions,
    target: Target,
    start: Option<&[f64]>,
) -> Result<SpectralEstimate> {
    let n = op.dim();
    let empty = SpectralEstimate {
        target,
        eigenvalue: Complex64::new(0.0, 0.0),
        max_modulus: 0.0,
        residual: 0.0,
        converged: true,
        products: 0,
        vector: vec![0.0; n],
    };
    if n == 0 {
        return Ok(empty);
    }
    let mut v0 = match start {
        Some(s) if s.len() == n && norm(s) > 0.0 => s.to_vec(),
        _ => random_start(n, options.seed),
    };
    let m = options.krylov_dim.min(n).max(2);
    let mut products = 0;
    let mut previous: Option<Complex64> = None;
    let mut last = empty;
    for _ in 0..=options.max_restarts {
        op.project(&mut v0);
        let s_norm = norm(&v0);
        if s_norm == 0.0 {
            v0 = random_start(n, options.seed ^ products as u64);
            continue;
        }
        let mut basis: Vec<Vec<f64>> = vec![v0.iter().map(|x| x / s_norm).collect()];
        let mut h = DMatrix::<f64>::zeros(m + 1, m);
        let mut k_used = m;
        for j in 0..m {
            let mut w = op.apply(&basis[j])?;
            products += 1;
            // modified Gram-Schmidt, twice
            for _ in 0..2 {
                for (i, b) in basis.iter().enumerate() {
                    let c = dot(&w, b);
                    h[(i, j)] += c;
                    w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let w_norm = norm(&w);
            h[(j + 1, j)] = w_norm;
            if w_norm < 1e-12 * h.column(j).norm().max(1e-300) {
                k_used = j + 1;
                break;
            }
            basis.push(w.iter().map(|x| x / w_norm).collect());
        }
        let hk = h.view((0, 0), (k_used, k_used)).into_owned();
        let (theta, y, max_modulus) = targeted_ritz(&hk, target)?;
        let residual = h[(k_used, k_used - 1)] * y[k_used - 1].norm();
        let mut vector = vec![0.0; n];
        for (i, b) in basis.iter().take(k_used).enumerate() {
            let c = y[i].re + y[i].im;
            vector.iter_mut().zip(b).for_each(|(x, v)| *x += c * v);
        }
        let scale = theta.norm().max(1.0);
        let settled = previous.is_some_and(|p| (p - theta).norm() <= 0.1 * options.tol * scale);
        let converged = residual <= options.tol * scale || settled || k_used < m;
        last = SpectralEstimate {
            target,
            eigenvalue: theta,
            max_modulus,
            residual,
            converged,
            products,
            vector: vector.clone(),
        };
        if converged {
            break;
        }
        previous = Some(theta);
        v0 = vector;
    }
    Ok(last)
}

/// Largest `|mu|` of the undamped linearized sweep.
pub fn spectral_radius(op: &LinearizedSweep<'_>, options: &SpectralOptions) -> Result<SpectralEstimate> {
    arnoldi(op, options, Target::LargestModulus, None)
}

/// Power iteration on the damped map `(1 - lambda) I + lambda J`, returning
/// the corresponding eigenvalue of `J` from a Rayleigh quotient. With
/// `lambda = 1` and a `+/-` dominant pair it still settles on the modulus
/// through the two-step growth.
pub fn power_iteration(
    op: &LinearizedSweep<'_>,
    lambda: f64,
    iterations: usize,
    tol: f64,
    seed: u64,
) -> Result<SpectralEstimate> {
    let n = op.dim();
    let mut v = random_start(n, seed);
    op.project(&mut v);
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut products = 0;
    let mut last = f64::NAN;
    let step = |v: &[f64], products: &mut usize| -> Result<Vec<f64>> {
        let jv = op.apply(v)?;
        *products += 1;
        Ok(v.iter()
            .zip(&jv)
            .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
            .collect())
    };
    let mut estimate = 0.0;
    let mut converged = false;
    for _ in 0..iterations {
        let w = step(&v, &mut products)?;
        let w2 = step(&w, &mut products)?;
        let growth = norm(&w2);
        if growth == 0.0 {
            estimate = 0.0;
            converged = true;
            break;
        }
        // two-step growth of the damped map; mapped back to J for a real eigenvalue
        let signed = if dot(&w, &v) >= 0.0 {
            growth.sqrt()
        } else {
            -growth.sqrt()
        };
        estimate = (signed - (1.0 - lambda)) / lambda;
        v = w2.iter().map(|x| x / growth).collect();
        if (estimate - last).abs() <= tol * estimate.abs().max(1.0) {
            converged = true;
            break;
        }
        last = estimate;
    }
    Ok(SpectralEstimate {
        target: Target::LargestModulus,
        eigenvalue: Complex64::new(estimate, 0.0),
        max_modulus: estimate.abs(),
        residual: f64::NAN,
        converged,
        products,
        vector: v,
    })
}

/// Symmetric fixed point at `beta`, warm-started from `warm` when given.
pub fn symmetric_state(
    plan: &MessagePlan,
    beta: f64,
    config: &EngineConfig,
    warm: Option<&MessageState>,
) -> Result<crate::engine::Solution> {
    let mut config = config.clone();
    if let Some(w) = warm {
        let mut w = w.clone();
        w.iteration = 0;
        config.init = Init::Provided(w);
    }
    paramagnetic_fixed_point(plan, beta, &config)
}

/// One evaluation of the stability exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoSample {
    pub beta: f64,
    /// Largest real part of the belief-visible spectrum of the undamped sweep.
    pub rho: f64,
    pub eigenvalue: Complex64,
    /// Flip sector holding the rightmost eigenvalue.
    pub sector: Parity,
    /// Largest visible modulus seen alongside, for reference.
    pub max_modulus: f64,
    pub spectral_converged: bool,
    pub fixed_point_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaCOptions {
    pub bracket: (f64, f64),
    /// Stop once the bracket is narrower than this.
    pub interval_tol: f64,
    /// Stop at a sample with `|rho - 1|` below this.
    pub rho_tol: f64,
    pub fixed_point: EngineConfig,
    pub spectral: SpectralOptions,
    pub max_evaluations: usize,
    /// Plain damped attempts after Anderson mixing fails at a point.
    pub damped_fallbacks: usize,
}

impl BetaCOptions {
    pub fn with_bracket(lo: f64, hi: f64) -> Self {
        Self {
            bracket: (lo, hi),
            ..Self::default()
        }
    }

    /// Search settings for disorder sweeps: a wide bracket and a location
    /// to about 1e-4, well below the instance-to-instance spread.
    pub fn disordered() -> Self {
        let mut o = Self::with_bracket(0.4, 1.0);
        o.rho_tol = 1e-3;
        o.interval_tol = 1e-4;
        o.fixed_point.tol = 1e-10;
        o
    }
}

impl Default for BetaCOptions {
    fn default() -> Self {
        Self {
            bracket: (0.30, 0.50),
            interval_tol: 1e-5,
            rho_tol: 1e-4,
            fixed_point: EngineConfig {
                damping: 0.5,
                tol: 1e-12,
                max_iters: 20000,
                ..EngineConfig::default()
            },
            spectral: SpectralOptions {
                tol: 1e-6,
                ..SpectralOptions::default()
            },
            max_evaluations: 40,
            damped_fallbacks: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityResult {
    pub beta_c: f64,
    /// Final stable / unstable pair.
    pub bracket: (f64, f64),
    /// Every evaluation, sorted by beta.
    pub curve: Vec<RhoSample>,
    /// Points where the symmetric fixed point could not be reached; they
    /// count as unstable.
    pub lost: Vec<f64>,
    pub perturbation: f64,
    pub spectral_tol: f64,
    pub initial_bracket: (f64, f64),
    /// Dimension of the belief-invisible subspace that was projected out.
    pub gauge_dim: usize,
}

impl StabilityResult {
    /// `(beta, rho)` pairs.
    pub fn spectral_radius_curve(&self) -> Vec<(f64, f64)> {
        self.curve.iter().map(|s| (s.beta, s.rho)).collect()
    }
}

/// Evaluates the stability exponent at a sequence of inverse temperatures,
/// carrying the symmetric fixed point and the leading Ritz vector between
/// neighbouring points.
pub struct StabilityProbe<'a> {
    plan: &'a MessagePlan,
    gauge: GaugeProjector,
    options: BetaCOptions,
    warm: Vec<(f64, MessageState)>,
    /// Last Ritz vector per flip sector, reused as the next start.
    vectors: [Option<Vec<f64>>; 2],
    lost: bool,
}

impl<'a> StabilityProbe<'a> {
    pub fn new(rg: &RegionGraph, fg: &FactorGraph, plan: &'a MessagePlan, options: BetaCOptions) -> Result<Self> {
        if !plan.has_zero_field() {
            return Err(Error::Precondition(
                "stability analysis needs zero field on every vertex".into(),
            ));
        }
        options.fixed_point.validate()?;
        Ok(Self {
            plan,
            gauge: GaugeProjector::new(rg, fg, plan)?,
            options,
            warm: Vec::new(),
            vectors: [None, None],
            lost: false,
        })
    }

    /// Whether the last fixed-point attempt failed to converge.
    pub fn lost_fixed_point(&self) -> bool {
        self.lost
    }

    pub fn options(&self) -> &BetaCOptions {
        &self.options
    }

    pub fn gauge(&self) -> &GaugeProjector {
        &self.gauge
    }

    /// Symmetric fixed point at `beta`, continued from the closest converged
    /// one below it (from uniform messages when there is none).
    pub fn fixed_point(&mut self, beta: f64) -> Result<crate::engine::Solution> {
        let below = self
            .warm
            .iter()
            .filter(|(b, _)| *b <= beta)
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, s)| s.clone());
        let mut config = self.options.fixed_point.clone();
        if let Some(mut w) = below {
            w.iteration = 0;
            config.init = Init::Provided(w);
        }
        let sol = symmetric_solve(self.plan, beta, &config, self.options.damped_fallbacks)?;
        self.lost = !sol.converged;
        if !sol.converged {
            return Err(Error::numeric(
                None,
                format!(
                    "symmetric fixed point at beta = {beta} did not converge (residual {:e})",
                    sol.state.residual
                ),
            ));
        }
        self.warm.push((beta, sol.state.clone()));
        if self.warm.len() > 6 {
            self.warm.remove(0);
        }
        Ok(sol)
    }

    pub fn sample(&mut self, beta: f64) -> Result<RhoSample> {
        let sol = self.fixed_point(beta)?;
        // The symmetric state commutes with the flip, so the spectrum splits
        // into the two sectors; Krylov runs inside one sector see a smaller,
        // better separated spectrum and are less prone to settle on an
        // interior eigenvalue.
        let base = LinearizedSweep::new(self.plan, &sol.state, beta, self.options.spectral.perturbation)?
            .with_gauge(&self.gauge);
        let mut best: Option<(Parity, SpectralEstimate)> = None;
        let mut max_modulus: f64 = 0.0;
        let mut converged = true;
        for (k, parity) in [Parity::Even, Parity::Odd].into_iter().enumerate() {
            let op = base.clone().with_parity(parity);
            let est = arnoldi(
                &op,
                &self.options.spectral,
                Target::Rightmost,
                self.vectors[k].as_deref(),
            )?;
            if !est.eigenvalue.re.is_finite() {
                return Err(Error::numeric(
                    None,
                    format!("stability exponent at beta = {beta} is not finite"),
                ));
            }
            max_modulus = max_modulus.max(est.max_modulus);
            converged &= est.converged;
            self.vectors[k] = Some(est.vector.clone());
            if best.as_ref().is_none_or(|(_, b)| est.eigenvalue.re > b.eigenvalue.re) {
                best = Some((parity, est));
            }
        }
        let (sector, est) = best.expect("two sectors");
        Ok(RhoSample {
            beta,
            rho: est.eigenvalue.re,
            eigenvalue: est.eigenvalue,
            sector,
            max_modulus,
            spectral_converged: converged,
            fixed_point_iterations: sol.state.iteration,
        })
    }
}

/// Locates the inverse temperature where the symmetric fixed point turns
/// unstable. Uses Illinois regula falsi on `rho - 1` when both ends carry an
/// exponent. Above an instability of the flip-even sector the symmetric
/// iteration cannot converge at any damping; such a point counts as unstable
/// without an exponent, and the crossing is then approached from below by
/// secant extrapolation through the two highest stable samples.
pub fn find_beta_c(
    rg: &RegionGraph,
    fg: &FactorGraph,
    plan: &MessagePlan,
    options: &BetaCOptions,
) -> Result<StabilityResult> {
    let (lo0, hi0) = options.bracket;
    if !(lo0 >= 0.0 && hi0 > lo0 && hi0.is_finite()) {
        return Err(Error::Config(format!("invalid bracket ({lo0}, {hi0})")));
    }
    let mut probe = StabilityProbe::new(rg, fg, plan, options.clone())?;
    let mut curve = Vec::new();
    let mut lost = Vec::new();
    let mut sample = |probe: &mut StabilityProbe<'_>, beta: f64| -> Result<Option<RhoSample>> {
        match probe.sample(beta) {
            Ok(s) => {
                curve.push(s.clone());
                Ok(Some(s))
            }
            Err(Error::Numeric { .. }) if probe.lost_fixed_point() => {
                lost.push(beta);
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };
    let lo = sample(&mut probe, lo0)?;
    let hi = sample(&mut probe, hi0)?;
    let bracket_error = |lo: &Option<RhoSample>, hi: &Option<RhoSample>| Error::Bracket {
        lo: lo0,
        hi: hi0,
        rho_lo: lo.as_ref().map_or(f64::NAN, |s| s.rho),
        rho_hi: hi.as_ref().map_or(f64::NAN, |s| s.rho),
    };
    let mut lo = match lo {
        Some(s) if s.rho < 1.0 => s,
        _ => return Err(bracket_error(&lo, &hi)),
    };
    if hi.as_ref().is_some_and(|s| s.rho <= 1.0) {
        return Err(bracket_error(&Some(lo), &hi));
    }
    let mut hi_beta = hi0;
    let mut hi = hi;
    let mut stable: Vec<RhoSample> = vec![lo.clone()];
    let mut f_lo = lo.rho - 1.0;
    let mut f_hi = hi.as_ref().map(|s| s.rho - 1.0);
    let mut side = 0i8;
    let mut last_lost = hi.is_none();
    for _ in 0..options.max_evaluations {
        let width = hi_beta - lo.beta;
        if width < options.interval_tol {
            break;
        }
        let guess = match f_hi {
            Some(fh) => Some((lo.beta * fh - hi_beta * f_lo) / (fh - f_lo)),
            None if stable.len() >= 2 => {
                // A transversal crossing is linear in rho, a fold is linear in
                // (1 - rho)^2, and each model overshoots on the other. Alternate:
                // the farther root after a stable sample tightens the upper
                // end, the nearer one after a lost sample the lower end.
                let (a, b) = (&stable[stable.len() - 2], &stable[stable.len() - 1]);
                let slope = (b.rho - a.rho) / (b.beta - a.beta);
                let linear = (slope > 0.0).then(|| b.beta + (1.0 - b.rho) / slope);
                let (qa, qb) = ((1.0 - a.rho).powi(2), (1.0 - b.rho).powi(2));
                let fold = (qa > qb).then(|| b.beta + qb * (b.beta - a.beta) / (qa - qb));
                match (linear, fold) {
                    (Some(l), Some(f)) if last_lost => Some(l.min(f)),
                    (Some(l), Some(f)) => Some(l.max(f)),
                    (l, f) => l.or(f),
                }
            }
            None => None,
        };
        let margin = 1e-3 * width;
        let beta = match guess {
            Some(g) if g.is_finite() && g < hi_beta - margin => g.max(lo.beta + margin),
            _ => 0.5 * (lo.beta + hi_beta),
        };
        let s = sample(&mut probe, beta)?;
        last_lost = s.is_none();
        let f = s.as_ref().map(|s| s.rho - 1.0);
        let close = f.is_some_and(|f| f.abs() < options.rho_tol);
        match (s, f) {
            (Some(s), Some(f)) if f < 0.0 => {
                lo = s.clone();
                f_lo = f;
                if side == -1 {
                    if let Some(fh) = f_hi.as_mut() {
                        *fh *= 0.5;
                    }
                }
                side = -1;
                stable.push(s);
                stable.sort_by(|a, b| a.beta.total_cmp(&b.beta));
            }
            (s, f) => {
                hi_beta = beta;
                hi = s;
                f_hi = f;
                if side == 1 {
                    f_lo *= 0.5;
                }
                side = 1;
            }
        }
        if close {
            break;
        }
    }
    curve.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    let beta_c = match &hi {
        Some(h) => {
            let t = (1.0 - lo.rho) / (h.rho - lo.rho);
            lo.beta + t.clamp(0.0, 1.0) * (h.beta - lo.beta)
        }
        None if (1.0 - lo.rho) < options.rho_tol => lo.beta,
        None => 0.5 * (lo.beta + hi_beta),
    };
    let gauge_dim = probe.gauge.gauge_dim();
    Ok(StabilityResult {
        beta_c,
        bracket: (lo.beta, hi_beta),
        curve,
        lost,
        perturbation: options.spectral.perturbation,
        spectral_tol: options.spectral.tol,
        initial_bracket: options.bracket,
        gauge_dim,
    })
}

/// `y = intercept + slope * x` by ordinary least squares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_stderr: f64,
    pub slope_stderr: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::Dimension {
            expected: n,
            got: ys.len(),
        });
    }
    if n < 2 {
        return Err(Error::Config("a line fit needs at least two points".into()));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("a line fit needs two distinct abscissae".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (slope_stderr, intercept_stderr) = if n > 2 {
        let ssr: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        let s2 = ssr / (nf - 2.0);
        let se_slope = (s2 / sxx).sqrt();
        let se_int = (s2 * (1.0 / nf + mx * mx / sxx)).sqrt();
        (se_slope, se_int)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(LinearFit {
        intercept,
        slope,
        intercept_stderr,
        slope_stderr,
    })
}

/// beta_c over disorder realizations at one lattice side.
#[derive(Debug, Clone, PartialEq)]
pub struct DisorderSweep {
    pub side: usize,
    pub instances: usize,
    pub seeds: Vec<u64>,
    /// `None` where the instance failed to bracket or converge.
    pub beta_c: Vec<Option<f64>>,
    pub mean: f64,
    pub stderr: f64,
}

impl DisorderSweep {
    pub fn successes(&self) -> Vec<f64> {
        self.beta_c.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ea3dReport {
    pub sweeps: Vec<DisorderSweep>,
    /// Mean beta_c against `1 / L`.
    pub fit: Option<LinearFit>,
    /// Instances excluded, with the reason.
    pub excluded: Vec<(usize, u64, String)>,
}

/// Coupling seeds used for instance `i` of side `side`.
pub fn instance_seed(base: u64, side: usize, i: usize) -> u64 {
    base.wrapping_mul(1_000_003)
        .wrapping_add((side as u64) << 32)
        .wrapping_add(i as u64)
}

/// Upper bracket ends tried, by shifting the bracket up by its width, before
/// an instance that is still stable is given up.
const EA_BRACKET_SHIFTS: usize = 2;

/// beta_c of one 3D Edwards-Anderson instance with the cube family. An
/// instance still stable at the top of the bracket is retried on the next
/// bracket up; dropping it would bias the disorder mean low.
pub fn ea3d_instance(side: usize, seed: u64, options: &BetaCOptions) -> Result<StabilityResult> {
    let spec = crate::lattice::LatticeSpec::edwards_anderson(3, side, seed);
    let fg = crate::lattice::build_lattice(&spec)?;
    let rg = crate::lattice::build_region_graph_3d(&fg, side)?;
    let plan = MessagePlan::new(
        &rg,
        &fg,
        crate::engine::Variant::SgbpIdeal,
        crate::engine::ActiveEdges::All,
    )?;
    let mut options = options.clone();
    let mut shifts = 0;
    loop {
        match find_beta_c(&rg, &fg, &plan, &options) {
            Err(Error::Bracket { lo, hi, rho_hi, .. }) if rho_hi < 1.0 && shifts < EA_BRACKET_SHIFTS => {
                shifts += 1;
                options.bracket = (hi, 2.0 * hi - lo);
            }
            r => return r,
        }
    }
}

/// The disorder sweep over `sides` with `instances` realizations each.
/// `progress` sees every finished instance.
pub fn ea3d_sweep(
    sides: &[usize],
    instances: usize,
    seed: u64,
    options: &BetaCOptions,
    progress: &(dyn Fn(usize, u64, &Result<StabilityResult>) + Sync),
) -> Result<Ea3dReport> {
    let mut sweeps = Vec::with_capacity(sides.len());
    let mut excluded = Vec::new();
    for &side in sides {
        let seeds: Vec<u64> = (0..instances).map(|i| instance_seed(seed, side, i)).collect();
        let results: Vec<Result<StabilityResult>> = seeds
            .par_iter()
            .map(|&s| {
                let r = ea3d_instance(side, s, options);
                progress(side, s, &r);
                r
            })
            .collect();
        let mut beta_c = Vec::with_capacity(instances);
        for (&s, r) in seeds.iter().zip(results) {
            match r {
                Ok(r) => beta_c.push(Some(r.beta_c)),
                Err(e) => {
                    excluded.push((side, s, e.to_string()));
                    beta_c.push(None);
                }
            }
        }
        let ok: Vec<f64> = beta_c.iter().flatten().copied().collect();
        let n = ok.len() as f64;
        let mean = ok.iter().sum::<f64>() / n;
        let stderr = if ok.len() > 1 {
            (ok.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
        } else {
            f64::NAN
        };
        sweeps.push(DisorderSweep {
            side,
            instances,
            seeds,
            beta_c,
            mean,
            stderr,
        });
    }
    let usable: Vec<&DisorderSweep> = sweeps.iter().filter(|s| s.mean.is_finite()).collect();
    let fit = if usable.len() >= 2 {
        let xs: Vec<f64> = usable.iter().map(|s| 1.0 / s.side as f64).collect();
        let ys: Vec<f64> = usable.iter().map(|s| s.mean).collect();
        Some(fit_line(&xs, &ys)?)
    } else {
        None
    };
    Ok(Ea3dReport { sweeps, fit, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{ActiveEdges, Variant};
    use crate::lattice::{build_bethe_region_graph, build_lattice, build_region_graph_2d, LatticeSpec};
    use proptest::prelude::*;

    fn square(spec: LatticeSpec) -> (FactorGraph, RegionGraph) {
        let fg = build_lattice(&spec).unwrap();
        let rg = build_region_graph_2d(&fg, spec.side_length, 2).unwrap();
        (fg, rg)
    }

    fn undamped() -> EngineConfig {
        EngineConfig {
            damping: 1.0,
            schedule: Schedule::Jacobi,
            ..EngineConfig::default()
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn sweep_commutes_with_the_global_flip(seed in any::<u64>(), beta in 0.0f64..1.2, ea in any::<bool>()) {
            let spec = if ea { LatticeSpec::edwards_anderson(2, 4, seed) } else { LatticeSpec::ferromagnet(2, 4) };
            let (fg, rg) = square(spec);
            let plan = MessagePlan::new(&rg, &fg, Variant::SgbpIdeal, ActiveEdges::All).unwrap();
            let x = plan.initial_state(&Init::Random { seed }).unwrap();
            let config = undamped();
            let a = plan.sweep(&x.spin_flipped(), beta, &config).unwrap();
            let b = plan.sweep(&x, beta, &config).unwrap().spin_flipped();
            prop_assert!(a.distance(&b, plan.active_edges()) <= 1e-12);

            let mut s = x.clone();
            s.symmetrize();
            let image = plan.sweep(&s, beta, &config).unwrap();
            let mut projected = image.clone();
            projected.symmetrize();
            prop_assert!(image.distance(&projected, plan.active_edges()) <= 1e-12);
        }

        #[test]
        fn gauge_projection_is_idempotent(seed in any::<u64>()) {
            let (fg, rg) = square(LatticeSpec::ferromagnet(2, 4));
            let plan = MessagePlan::new(&rg, &fg, Variant::SgbpIdeal, ActiveEdges::All).unwrap();
            let gauge = GaugeProjector::new(&rg, &fg, &plan).unwrap();
            let op = LinearizedSweep::new(&plan, &plan.uniform_state(), 0.2, DEFAULT_PERTURBATION)
                .unwrap()
                .with_gauge(&gauge);
            let mut v = random_start(op.dim(), seed);
            op.project(&mut v);
            let mut w = v.clone();
            op.project(&mut w);
            let diff = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(diff <= 1e-12);
        }
    }

    #[test]
    fn arnoldi_finds_the_rightmost_dense_eigenvalue() {
        let (fg, rg) = square(LatticeSpec::ferromagnet(2, 4));
        let plan = MessagePlan::new(&rg, &fg, Variant::SgbpIdeal, ActiveEdges::All).unwrap();
        let gauge = GaugeProjector::new(&rg, &fg, &plan).unwrap();
        let options = BetaCOptions::default();
        let sol = paramagnetic_fixed_point(&plan, 0.35, &options.fixed_point).unwrap();
        assert!(sol.converged);
        let op = LinearizedSweep::new(&plan, &sol.state, 0.35, DEFAULT_PERTURBATION)
            .unwrap()
            .with_central_differences()
            .with_gauge(&gauge);
        let dense = eigenvalues(&op.dense().unwrap()).unwrap();
        let rightmost = dense.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let est = arnoldi(&op, &options.spectral, Target::Rightmost, None).unwrap();
        assert!(est.converged);
        assert!(
            (est.eigenvalue.re - rightmost).abs() < 1e-6,
            "{} vs {rightmost}",
            est.eigenvalue.re
        );
    }

    #[test]
    fn gauge_directions_are_fixed_by_the_sweep() {
        // belief-invisible perturbations come back unchanged: eigenvalue 1 at any beta
        let (fg, rg) = square(LatticeSpec::ferromagnet(2, 4));
        let plan = MessagePlan::new(&rg, &fg, Variant::SgbpIdeal, ActiveEdges::All).unwrap();
        let gauge = GaugeProjector::new(&rg, &fg, &plan).unwrap();
        assert!(gauge.gauge_dim() > 0);
        for beta in [0.1, 0.4] {
            let sol = paramagnetic_fixed_point(&plan, beta, &BetaCOptions::default().fixed_point).unwrap();
            let raw = LinearizedSweep::new(&plan, &sol.state, beta, DEFAULT_PERTURBATION)
                .unwrap()
                .with_central_differences();
            for seed in 0..3 {
                let mut v = random_start(raw.dim(), seed);
                raw.project(&mut v);
                let mut visible = v.clone();
                gauge.project(&mut visible);
                let g: Vec<f64> = v.iter().zip(&visible).map(|(a, b)| a - b).collect();
                let jg = raw.apply(&g).unwrap();
                let err = norm(&jg.iter().zip(&g).map(|(a, b)| a - b).collect::<Vec<_>>());
                assert!(err < 1e-6 * norm(&g), "beta {beta}: {err}");
            }
        }
    }

    fn bethe_beta_c(dim: usize, side: usize, bracket: (f64, f64)) -> f64 {
        let fg = build_lattice(&LatticeSpec::ferromagnet(dim, side)).unwrap();
        let rg = build_bethe_region_graph(&fg).unwrap();
        let plan = MessagePlan::new(&rg, &fg, Variant::SgbpIdeal, ActiveEdges::All).unwrap();
        let options = BetaCOptions::with_bracket(bracket.0, bracket.1);
        find_beta_c(&rg, &fg, &plan, &options)
            .map_err(|e| e.to_string())
            .unwrap()
            .beta_c
    }

    #[test]
    fn bethe_threshold_matches_the_closed_form() {
        let b2 = bethe_beta_c(2, 4, (0.30, 0.50));
        assert!((b2 - (1.0f64 / 3.0).atanh()).abs() < 1e-4, "{b2}");
        let b3 = bethe_beta_c(3, 4, (0.15, 0.30));
        assert!((b3 - (1.0f64 / 5.0).atanh()).abs() < 1e-4, "{b3}");
    }

    fn sgbp_beta_c(init: Init) -> StabilityResult {
        let (fg, rg) = square(LatticeSpec::ferromagnet(2, 6));
        let plan = MessagePlan::new(&rg, &fg, Variant::SgbpIdeal, ActiveEdges::All).unwrap();
        let mut options = BetaCOptions::with_bracket(0.35, 0.5);
        options.fixed_point.init = init;
        find_beta_c(&rg, &fg, &plan, &options).unwrap()
    }

    #[test]
    fn threshold_is_independent_of_the_start() {
        let a = sgbp_beta_c(Init::Random { seed: 1 });
        let b = sgbp_beta_c(Init::Random { seed: 2 });
        let c = sgbp_beta_c(Init::Uniform);
        assert!((a.beta_c - b.beta_c).abs() < 1e-4);
        assert!((a.beta_c - c.beta_c).abs() < 1e-4);
    }

    #[test]
    fn threshold_search_is_deterministic() {
        let a = sgbp_beta_c(Init::Random { seed: 3 });
        let b = sgbp_beta_c(Init::Random { seed: 3 });
        assert_eq!(a.beta_c.to_bits(), b.beta_c.to_bits());
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn inverted_bracket_is_rejected() {
        let (fg, rg) = square(LatticeSpec::ferromagnet(2, 4));
        let plan = MessagePlan::new(&rg, &fg, Variant::SgbpIdeal, ActiveEdges::All).unwrap();
        let options = BetaCOptions::with_bracket(0.5, 0.3);
        assert!(matches!(find_beta_c(&rg, &fg, &plan, &options), Err(Error::Config(_))));
    }

    #[test]
    fn line_fit_recovers_an_exact_line() {
        let xs = [0.25, 1.0 / 6.0, 0.125];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 + 1.2 * x).collect();
        let fit = fit_line(&xs, &ys).unwrap();
        assert!((fit.intercept - 0.5).abs() < 1e-12);
        assert!((fit.slope - 1.2).abs() < 1e-12);
        assert!(fit.slope_stderr < 1e-10);
        assert!(fit_line(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn instance_seeds_do_not_collide_across_sides() {
        let mut seeds: Vec<u64> = [4, 6, 8]
            .iter()
            .flat_map(|&l| (0..32).map(move |i| instance_seed(2024, l, i)))
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 96);
    }
}
