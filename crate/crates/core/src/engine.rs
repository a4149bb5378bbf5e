//! Fixed-point iteration of the parent-to-child message equations, in the
//! full, non-redundant and simplified (ideal-graph) forms.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factor_graph::{decode_index, FactorGraph};
use crate::region_graph::RegionGraph;
use crate::table::{flip_index, positions_in, table_size, ProjectionPool};

/// Relative floor applied to every message entry after an update.
pub const MESSAGE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    GbpFull,
    /// Same equations as `GbpFull`, restricted to non-redundant graphs.
    RgbpNonRedundant,
    SgbpIdeal,
}

impl Variant {
    /// Whether receiving sets drop messages whose sender has an ancestor on the boundary.
    pub fn simplified(self) -> bool {
        matches!(self, Variant::SgbpIdeal)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::GbpFull => "gbp_full",
            Variant::RgbpNonRedundant => "rgbp_nonredundant",
            Variant::SgbpIdeal => "sgbp_ideal",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gbp_full" | "gbp" => Ok(Variant::GbpFull),
            "rgbp_nonredundant" | "rgbp" => Ok(Variant::RgbpNonRedundant),
            "sgbp_ideal" | "sgbp" => Ok(Variant::SgbpIdeal),
            _ => Err(Error::Config(format!("unknown variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Every update reads the pre-sweep state.
    Jacobi,
    /// Edges in order of parent depth, then id, each write visible immediately.
    Sequential,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Jacobi => "jacobi",
            Schedule::Sequential => "sequential",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jacobi" => Ok(Schedule::Jacobi),
            "sequential" => Ok(Schedule::Sequential),
            _ => Err(Error::Config(format!("unknown schedule `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveEdges {
    All,
    /// Skip the edges chosen by [`select_dropped_edges`]; their messages stay uniform.
    DroppedRedundant,
}

impl fmt::Display for ActiveEdges {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActiveEdges::All => "all",
            ActiveEdges::DroppedRedundant => "dropped_redundant",
        })
    }
}

impl FromStr for ActiveEdges {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ActiveEdges::All),
            "dropped_redundant" | "dropped" => Ok(ActiveEdges::DroppedRedundant),
            _ => Err(Error::Config(format!("unknown active edge set `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Uniform,
    /// Entries drawn from U(0.8, 1.2) and normalized.
    Random {
        seed: u64,
    },
    /// Every message proportional to `exp(bias * sum x_i)` over its scope;
    /// a start in the ordered phase for spin models.
    Polarized {
        bias: f64,
    },
    Provided(MessageState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub variant: Variant,
    /// Weight of the new message in `(1 - damping) * old + damping * new`.
    pub damping: f64,
    pub schedule: Schedule,
    pub max_iters: usize,
    pub tol: f64,
    pub active_edges: ActiveEdges,
    pub init: Init,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            variant: Variant::SgbpIdeal,
            damping: 1.0,
            schedule: Schedule::Jacobi,
            max_iters: 1000,
            tol: 1e-10,
            active_edges: ActiveEdges::All,
            init: Init::Uniform,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub edge: usize,
    pub table: Vec<f64>,
}

/// One normalized table per directed edge, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    offsets: Arc<[usize]>,
    values: Vec<f64>,
    pub iteration: usize,
    pub residual: f64,
}

impl MessageState {
    /// Uniform tables of the given sizes.
    pub fn uniform(sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        let mut values = Vec::new();
        for &s in sizes {
            values.extend(std::iter::repeat_n(1.0 / s as f64, s));
            offsets.push(values.len());
        }
        Self {
            offsets: offsets.into(),
            values,
            iteration: 0,
            residual: 0.0,
        }
    }

    pub fn from_tables(tables: &[Vec<f64>]) -> Self {
        let sizes: Vec<usize> = tables.iter().map(Vec::len).collect();
        let mut s = Self::uniform(&sizes);
        s.values = tables.concat();
        s
    }

    pub fn num_edges(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn message(&self, e: usize) -> &[f64] {
        &self.values[self.offsets[e]..self.offsets[e + 1]]
    }

    pub fn message_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.values[self.offsets[e]..self.offsets[e + 1]]
    }

    /// All entries, edge after edge.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn same_layout(&self, other: &MessageState) -> bool {
        self.offsets == other.offsets
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (0..self.num_edges()).all(|e| {
            let m = self.message(e);
            (m.iter().sum::<f64>() - 1.0).abs() <= tol && m.iter().all(|&v| v > 0.0)
        })
    }

    pub fn min_entry(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Every table under the global spin flip; tables must be over binary vertices.
    pub fn spin_flipped(&self) -> Self {
        let mut out = self.clone();
        for e in 0..self.num_edges() {
            let src = self.message(e);
            let n = src.len();
            for (k, v) in out.message_mut(e).iter_mut().enumerate() {
                *v = src[flip_index(k, n)];
            }
        }
        out
    }

    /// Projects every table onto the flip-symmetric subspace.
    pub fn symmetrize(&mut self) {
        for e in 0..self.num_edges() {
            let m = self.message_mut(e);
            let n = m.len();
            for k in 0..n {
                let j = flip_index(k, n);
                if j > k {
                    let avg = 0.5 * (m[k] + m[j]);
                    m[k] = avg;
                    m[j] = avg;
                }
            }
            let s: f64 = m.iter().sum();
            m.iter_mut().for_each(|v| *v /= s);
        }
    }

    /// Largest entrywise difference over the selected edges.
    pub fn distance(&self, other: &MessageState, edges: &[usize]) -> f64 {
        edges
            .iter()
            .flat_map(|&e| self.message(e).iter().zip(other.message(e)))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub state: MessageState,
    pub converged: bool,
}

/// Normalized weight of one region together with its log normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionWeight {
    pub log_z: f64,
    pub table: Vec<f64>,
}

impl RegionWeight {
    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }
}

#[derive(Debug)]
struct RegionPlan {
    radices: Vec<usize>,
    size: usize,
    energy: Arc<[f64]>,
    /// Incoming messages and the projection from this region's table onto each child table.
    incoming: Vec<(usize, Arc<[u32]>)>,
}

#[derive(Debug)]
struct EdgePlan {
    parent: usize,
    child: usize,
    map: Arc<[u32]>,
}

/// Precomputed receiving sets, energy tables and projections for one
/// (region graph, factor graph, variant, active set) combination.
#[derive(Debug)]
pub struct MessagePlan {
    variant: Variant,
    regions: Vec<RegionPlan>,
    edges: Vec<EdgePlan>,
    sizes: Vec<usize>,
    active: Vec<bool>,
    active_list: Vec<usize>,
    sequential_order: Vec<usize>,
    receivers: Vec<Vec<usize>>,
    binary: bool,
    zero_field: bool,
}

/// Regions whose weight contains the message on `edge` under `variant`.
pub fn receiving_set(rg: &RegionGraph, edge: usize, variant: Variant) -> Result<Vec<usize>> {
    if edge >= rg.num_edges() {
        return Err(Error::Config(format!("edge {edge} does not exist")));
    }
    if variant.simplified() && !rg.check_edge_identities()?.ideal {
        return Err(Error::Config("simplified equations need an ideal region graph".into()));
    }
    Ok(rg.receivers_by_definition(edge, variant.simplified()))
}

fn energy_table(fg: &FactorGraph, vertices: &[usize], interactions: &[usize], radices: &[usize]) -> Vec<f64> {
    let size = table_size(radices);
    let mut digits = Vec::with_capacity(radices.len());
    (0..size)
        .map(|idx| {
            decode_index(idx, radices, &mut digits);
            fg.sub_energy(vertices, interactions, &digits)
        })
        .collect()
}

/// Shape of a region's energy: alphabet sizes, self-energies and the
/// interactions in local coordinates, hashed by bit pattern.
fn energy_key(fg: &FactorGraph, vertices: &[usize], interactions: &[usize]) -> Vec<u64> {
    let mut key = Vec::new();
    for &v in vertices {
        let spec = fg.vertex(v);
        key.push(spec.alphabet_size as u64);
        key.extend(spec.self_energy.iter().map(|x| x.to_bits()));
    }
    key.push(u64::MAX);
    for &a in interactions {
        let spec = fg.interaction(a);
        key.push(spec.members.len() as u64);
        key.extend(
            spec.members
                .iter()
                .map(|m| vertices.binary_search(m).expect("member inside region") as u64),
        );
        key.extend(spec.energy.iter().map(|x| x.to_bits()));
    }
    key
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta >= 0.0 {
        Ok(())
    } else {
        Err(Error::Precondition(format!("beta must be finite and >= 0, got {beta}")))
    }
}

/// In-place `ln sum exp` marginal of a log table through a projection map.
fn log_marginal(log_w: &[f64], map: &[u32], out: &mut Vec<f64>, size: usize) {
    let mut shifted = Vec::new();
    let max = exp_shifted(log_w, &mut shifted);
    log_marginal_of_shifted(&shifted, max, map, out, size);
}

/// `exp(log_w - max)` into `out`; returns `max`.
fn exp_shifted(log_w: &[f64], out: &mut Vec<f64>) -> f64 {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(log_w.iter().map(|&l| (l - max).exp()));
    max
}

fn log_marginal_of_shifted(shifted: &[f64], max: f64, map: &[u32], out: &mut Vec<f64>, size: usize) {
    out.clear();
    out.resize(size, 0.0);
    for (&w, &k) in shifted.iter().zip(map) {
        out[k as usize] += w;
    }
    out.iter_mut().for_each(|v| *v = v.ln() + max);
}

/// Normalizes, floors at `MESSAGE_FLOOR * max`, renormalizes.
fn finish_message(edge: usize, log_m: &mut [f64]) -> Result<Vec<f64>> {
    let max = log_m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || log_m.iter().any(|v| v.is_nan()) {
        return Err(Error::numeric(Some(edge), "non-finite message update"));
    }
    let mut m: Vec<f64> = log_m.iter().map(|&l| (l - max).exp()).collect();
    floor_and_normalize(&mut m);
    Ok(m)
}

fn floor_and_normalize(m: &mut [f64]) {
    let max = m.iter().copied().fold(0.0, f64::max);
    let floor = MESSAGE_FLOOR * max;
    m.iter_mut().for_each(|v| *v = v.max(floor));
    let s: f64 = m.iter().sum();
    m.iter_mut().for_each(|v| *v /= s);
}

impl MessagePlan {
    pub fn new(rg: &RegionGraph, fg: &FactorGraph, variant: Variant, active_edges: ActiveEdges) -> Result<Self> {
        let inactive = match active_edges {
            ActiveEdges::All => Vec::new(),
            ActiveEdges::DroppedRedundant => select_dropped_edges(rg),
        };
        Self::with_inactive(rg, fg, variant, &inactive)
    }

    /// Plan with an explicit set of edges whose messages are held uniform.
    pub fn with_inactive(rg: &RegionGraph, fg: &FactorGraph, variant: Variant, inactive: &[usize]) -> Result<Self> {
        let identities = rg.check_edge_identities()?;
        match variant {
            Variant::RgbpNonRedundant if rg.redundancy_class().is_redundant() => {
                return Err(Error::Precondition(
                    "rgbp_nonredundant requested on a redundant region graph".into(),
                ));
            }
            Variant::SgbpIdeal if !identities.ideal => {
                let bad: Vec<usize> = identities.edges.iter().filter(|c| !c.ideal).map(|c| c.edge).collect();
                return Err(Error::Config(format!(
                    "sgbp_ideal requested on a non-ideal region graph (edges {bad:?})"
                )));
            }
            _ => {}
        }
        let simplified = variant.simplified();
        let pool = ProjectionPool::new();
        let mut energies: std::collections::HashMap<Vec<u64>, Arc<[f64]>> = Default::default();
        let mut regions = Vec::with_capacity(rg.num_regions());
        for region in rg.regions() {
            let radices = fg.radices(&region.vertices);
            let key = energy_key(fg, &region.vertices, &region.interactions);
            let energy = energies
                .entry(key)
                .or_insert_with(|| energy_table(fg, &region.vertices, &region.interactions, &radices).into())
                .clone();
            let incoming = rg
                .incoming_edges(region.id, simplified)
                .into_iter()
                .map(|e| {
                    let child = &rg.region(rg.edge(e).child).vertices;
                    let pos = positions_in(&region.vertices, child).expect("interior region is contained");
                    (e, pool.get(&radices, &pos))
                })
                .collect();
            regions.push(RegionPlan {
                size: table_size(&radices),
                radices,
                energy,
                incoming,
            });
        }
        let edges: Vec<EdgePlan> = rg
            .edges()
            .iter()
            .map(|edge| {
                let parent = &rg.region(edge.parent).vertices;
                let child = &rg.region(edge.child).vertices;
                let pos = positions_in(parent, child).expect("edge endpoints are nested");
                EdgePlan {
                    parent: edge.parent,
                    child: edge.child,
                    map: pool.get(&regions[edge.parent].radices, &pos),
                }
            })
            .collect();
        let sizes: Vec<usize> = edges.iter().map(|e| regions[e.child].size).collect();
        let mut receivers = vec![Vec::new(); edges.len()];
        for (alpha, r) in regions.iter().enumerate() {
            for &(e, _) in &r.incoming {
                receivers[e].push(alpha);
            }
        }
        let mut active = vec![true; edges.len()];
        for &e in inactive {
            if e >= edges.len() {
                return Err(Error::Config(format!("inactive edge {e} does not exist")));
            }
            active[e] = false;
        }
        for (e, edge) in edges.iter().enumerate() {
            if active[e] && !receivers[e].contains(&edge.child) {
                return Err(Error::Config(format!(
                    "message on edge {e} is absent from its child's weight, so it cannot be updated"
                )));
            }
        }
        let active_list: Vec<usize> = (0..edges.len()).filter(|&e| active[e]).collect();
        let mut sequential_order = active_list.clone();
        sequential_order.sort_by_key(|&e| (rg.depth(edges[e].parent), e));
        Ok(Self {
            variant,
            regions,
            edges,
            sizes,
            active,
            active_list,
            sequential_order,
            receivers,
            binary: fg.is_binary(),
            zero_field: fg.has_zero_field(),
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn is_active(&self, e: usize) -> bool {
        self.active[e]
    }

    pub fn active_edges(&self) -> &[usize] {
        &self.active_list
    }

    pub fn inactive_edges(&self) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| !self.active[e]).collect()
    }

    pub fn message_sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Regions whose weight includes the message on `e`.
    pub fn receivers(&self, e: usize) -> &[usize] {
        &self.receivers[e]
    }

    /// Edges whose messages enter the weight of region `alpha`.
    pub fn incoming(&self, alpha: usize) -> impl Iterator<Item = usize> + '_ {
        self.regions[alpha].incoming.iter().map(|(e, _)| *e)
    }

    pub fn is_binary(&self) -> bool {
        self.binary
    }

    pub fn has_zero_field(&self) -> bool {
        self.zero_field
    }

    pub fn uniform_state(&self) -> MessageState {
        MessageState::uniform(&self.sizes)
    }

    pub fn initial_state(&self, init: &Init) -> Result<MessageState> {
        let mut state = self.uniform_state();
        match init {
            Init::Uniform => {}
            Init::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                for &e in &self.active_list {
                    let m = state.message_mut(e);
                    m.iter_mut().for_each(|v| *v = rng.random_range(0.8..1.2));
                    let s: f64 = m.iter().sum();
                    m.iter_mut().for_each(|v| *v /= s);
                }
            }
            Init::Polarized { bias } => {
                if !self.binary {
                    return Err(Error::Precondition("a polarized start needs binary vertices".into()));
                }
                for &e in &self.active_list {
                    let m = state.message_mut(e);
                    let bits = m.len().trailing_zeros() as f64;
                    for (k, v) in m.iter_mut().enumerate() {
                        *v = (bias * (2.0 * k.count_ones() as f64 - bits)).exp();
                    }
                    let s: f64 = m.iter().sum();
                    m.iter_mut().for_each(|v| *v /= s);
                }
            }
            Init::Provided(provided) => {
                if !provided.same_layout(&state) {
                    return Err(Error::Config("provided messages do not match the region graph".into()));
                }
                if !provided.is_normalized(1e-9) {
                    return Err(Error::Config(
                        "provided messages are not normalized and positive".into(),
                    ));
                }
                for &e in &self.active_list {
                    state.message_mut(e).copy_from_slice(provided.message(e));
                }
                state.iteration = provided.iteration;
                state.residual = provided.residual;
            }
        }
        Ok(state)
    }

    fn check_state(&self, state: &MessageState) -> Result<()> {
        if state.offsets.len() != self.sizes.len() + 1 || state.values.len() != self.sizes.iter().sum::<usize>() {
            return Err(Error::Config("message state does not match the region graph".into()));
        }
        Ok(())
    }

    /// `-beta E_alpha(x) + sum of log incoming messages`, unnormalized.
    fn region_log_weights(&self, alpha: usize, log_m: &[f64], offsets: &[usize], beta: f64, out: &mut Vec<f64>) {
        let r = &self.regions[alpha];
        out.clear();
        out.extend(r.energy.iter().map(|&e| -beta * e));
        for (e, map) in &r.incoming {
            let msg = &log_m[offsets[*e]..offsets[*e + 1]];
            for (w, &k) in out.iter_mut().zip(map.iter()) {
                *w += msg[k as usize];
            }
        }
    }

    fn log_messages(state: &MessageState) -> Vec<f64> {
        state.values.iter().map(|v| v.ln()).collect()
    }

    /// Normalized weight `omega_alpha` and `ln z_alpha`.
    pub fn region_boltzmann(&self, state: &MessageState, alpha: usize, beta: f64) -> Result<RegionWeight> {
        check_beta(beta)?;
        self.check_state(state)?;
        let log_m = Self::log_messages(state);
        let mut log_w = Vec::new();
        self.region_log_weights(alpha, &log_m, &state.offsets, beta, &mut log_w);
        let mut table = vec![0.0; log_w.len()];
        let log_z = crate::table::softmax_into(&log_w, &mut table);
        if !log_z.is_finite() {
            return Err(Error::numeric(None, format!("region {alpha} weight is not finite")));
        }
        Ok(RegionWeight { log_z, table })
    }

    /// `ln z_alpha` for every region.
    pub fn region_log_z(&self, state: &MessageState, beta: f64) -> Result<Vec<f64>> {
        check_beta(beta)?;
        self.check_state(state)?;
        let log_m = Self::log_messages(state);
        (0..self.regions.len())
            .into_par_iter()
            .map_init(Vec::new, |buf, alpha| {
                self.region_log_weights(alpha, &log_m, &state.offsets, beta, buf);
                let lz = crate::table::log_sum_exp(buf);
                if lz.is_finite() {
                    Ok(lz)
                } else {
                    Err(Error::numeric(None, format!("region {alpha} weight is not finite")))
                }
            })
            .collect()
    }

    /// Normalized weights of every region.
    pub fn region_marginals(&self, state: &MessageState, beta: f64) -> Result<Vec<Vec<f64>>> {
        self.region_marginals_of(state, beta, &(0..self.regions.len()).collect::<Vec<_>>())
    }

    /// Normalized weights of the listed regions, in the listed order.
    pub fn region_marginals_of(&self, state: &MessageState, beta: f64, regions: &[usize]) -> Result<Vec<Vec<f64>>> {
        check_beta(beta)?;
        self.check_state(state)?;
        let log_m = Self::log_messages(state);
        Ok(regions
            .par_iter()
            .map_init(Vec::new, |buf, &alpha| {
                self.region_log_weights(alpha, &log_m, &state.offsets, beta, buf);
                let mut t = vec![0.0; buf.len()];
                crate::table::softmax_into(buf, &mut t);
                t
            })
            .collect())
    }

    /// Single-edge update from `state`, without damping.
    pub fn update_edge(&self, state: &MessageState, e: usize, beta: f64) -> Result<Message> {
        check_beta(beta)?;
        self.check_state(state)?;
        let log_m = Self::log_messages(state);
        self.update_from_logs(&log_m, &state.offsets, e, beta, &mut Vec::new(), &mut Vec::new())
    }

    fn update_from_logs(
        &self,
        log_m: &[f64],
        offsets: &[usize],
        e: usize,
        beta: f64,
        buf: &mut Vec<f64>,
        marg: &mut Vec<f64>,
    ) -> Result<Message> {
        let edge = &self.edges[e];
        self.region_log_weights(edge.parent, log_m, offsets, beta, buf);
        log_marginal(buf, &edge.map, marg, self.sizes[e]);
        self.region_log_weights(edge.child, log_m, offsets, beta, buf);
        let old = &log_m[offsets[e]..offsets[e + 1]];
        for ((m, &w), &o) in marg.iter_mut().zip(buf.iter()).zip(old) {
            *m += o - w;
        }
        let table = finish_message(e, marg)?;
        Ok(Message { edge: e, table })
    }

    /// One pass over the active edges.
    pub fn sweep(&self, state: &MessageState, beta: f64, config: &EngineConfig) -> Result<MessageState> {
        check_beta(beta)?;
        self.check_state(state)?;
        let lambda = config.damping;
        let mix = |old: &[f64], new: &mut [f64]| {
            if lambda < 1.0 {
                for (n, &o) in new.iter_mut().zip(old) {
                    *n = (1.0 - lambda) * o + lambda * *n;
                }
                let s: f64 = new.iter().sum();
                new.iter_mut().for_each(|v| *v /= s);
            }
        };
        let mut next = state.clone();
        match config.schedule {
            Schedule::Jacobi => {
                let updates = self.jacobi_updates(state, beta)?;
                for (e, mut table) in updates {
                    mix(state.message(e), &mut table);
                    next.message_mut(e).copy_from_slice(&table);
                }
            }
            Schedule::Sequential => {
                let mut log_m = Self::log_messages(state);
                let (mut buf, mut marg) = (Vec::new(), Vec::new());
                for &e in &self.sequential_order {
                    let mut msg = self.update_from_logs(&log_m, &next.offsets, e, beta, &mut buf, &mut marg)?;
                    mix(state.message(e), &mut msg.table);
                    let (lo, hi) = (next.offsets[e], next.offsets[e + 1]);
                    next.values[lo..hi].copy_from_slice(&msg.table);
                    for (l, v) in log_m[lo..hi].iter_mut().zip(&next.values[lo..hi]) {
                        *l = v.ln();
                    }
                }
            }
        }
        next.residual = next.distance(state, &self.active_list);
        next.iteration = state.iteration + 1;
        Ok(next)
    }

    /// Undamped updates of every active edge against the same state.
    fn jacobi_updates(&self, state: &MessageState, beta: f64) -> Result<Vec<(usize, Vec<f64>)>> {
        let log_m = Self::log_messages(state);
        let offsets = &state.offsets;
        // each region contributes its log weight as a child and its log marginals as a parent
        struct Out {
            own: Option<Vec<f64>>,
            marginals: Vec<(usize, Vec<f64>)>,
        }
        let needs_own: Vec<bool> = {
            let mut v = vec![false; self.regions.len()];
            for &e in &self.active_list {
                v[self.edges[e].child] = true;
            }
            v
        };
        let mut child_edges = vec![Vec::new(); self.regions.len()];
        for &e in &self.active_list {
            child_edges[self.edges[e].parent].push(e);
        }
        let outs: Vec<Out> = (0..self.regions.len())
            .into_par_iter()
            .map_init(
                || (Vec::new(), Vec::new()),
                |(buf, shifted), alpha| {
                    if !needs_own[alpha] && child_edges[alpha].is_empty() {
                        return Out {
                            own: None,
                            marginals: Vec::new(),
                        };
                    }
                    self.region_log_weights(alpha, &log_m, offsets, beta, buf);
                    let max = if child_edges[alpha].is_empty() {
                        0.0
                    } else {
                        exp_shifted(buf, shifted)
                    };
                    let marginals = child_edges[alpha]
                        .iter()
                        .map(|&e| {
                            let mut m = Vec::new();
                            log_marginal_of_shifted(shifted, max, &self.edges[e].map, &mut m, self.sizes[e]);
                            (e, m)
                        })
                        .collect();
                    Out {
                        own: needs_own[alpha].then(|| buf.clone()),
                        marginals,
                    }
                },
            )
            .collect();
        self.active_list
            .par_iter()
            .map(|&e| {
                let edge = &self.edges[e];
                let mut marg = outs[edge.parent]
                    .marginals
                    .iter()
                    .find(|(k, _)| *k == e)
                    .map(|(_, m)| m.clone())
                    .expect("marginal computed for every active edge");
                let own = outs[edge.child].own.as_ref().expect("child weight computed");
                let old = &log_m[offsets[e]..offsets[e + 1]];
                for ((m, &w), &o) in marg.iter_mut().zip(own).zip(old) {
                    *m += o - w;
                }
                Ok((e, finish_message(e, &mut marg)?))
            })
            .collect()
    }

    /// Iterates sweeps until the residual drops below `tol` or `max_iters` is reached.
    pub fn solve(&self, beta: f64, config: &EngineConfig) -> Result<Solution> {
        self.solve_with(beta, config, false)
    }

    /// As [`Self::solve`], projecting onto the flip-symmetric subspace after every sweep.
    pub fn solve_symmetric(&self, beta: f64, config: &EngineConfig) -> Result<Solution> {
        if !self.binary {
            return Err(Error::Precondition("spin-flip projection needs binary vertices".into()));
        }
        self.solve_with(beta, config, true)
    }

    fn solve_with(&self, beta: f64, config: &EngineConfig, symmetric: bool) -> Result<Solution> {
        config.validate()?;
        check_beta(beta)?;
        let mut state = self.initial_state(&config.init)?;
        if symmetric {
            state.symmetrize();
        }
        let mut converged = false;
        for _ in 0..config.max_iters {
            let mut next = self.sweep(&state, beta, config)?;
            if symmetric {
                next.symmetrize();
                next.residual = next.distance(&state, &self.active_list);
            }
            state = next;
            if state.residual < config.tol {
                converged = true;
                break;
            }
        }
        Ok(Solution { state, converged })
    }

    /// `max_x |sum_{x_mu \ x_nu} omega_mu - omega_nu|` on every edge.
    pub fn consistency_residuals(&self, state: &MessageState, beta: f64) -> Result<Vec<f64>> {
        check_beta(beta)?;
        self.check_state(state)?;
        let log_m = Self::log_messages(state);
        let offsets = &state.offsets;
        let mut child_edges = vec![Vec::new(); self.regions.len()];
        let mut is_child = vec![false; self.regions.len()];
        for (e, edge) in self.edges.iter().enumerate() {
            child_edges[edge.parent].push(e);
            is_child[edge.child] = true;
        }
        type Out = (Option<Vec<f64>>, Vec<(usize, Vec<f64>)>);
        let outs: Vec<Out> = (0..self.regions.len())
            .into_par_iter()
            .map_init(Vec::new, |buf, alpha| {
                if !is_child[alpha] && child_edges[alpha].is_empty() {
                    return (None, Vec::new());
                }
                self.region_log_weights(alpha, &log_m, offsets, beta, buf);
                let mut p = vec![0.0; buf.len()];
                crate::table::softmax_into(buf, &mut p);
                let marginals = child_edges[alpha]
                    .iter()
                    .map(|&e| {
                        let mut m = vec![0.0; self.sizes[e]];
                        crate::table::marginalize_into(&p, &self.edges[e].map, &mut m);
                        (e, m)
                    })
                    .collect();
                (is_child[alpha].then_some(p), marginals)
            })
            .collect();
        Ok((0..self.edges.len())
            .map(|e| {
                let edge = &self.edges[e];
                let marg = &outs[edge.parent].1.iter().find(|(k, _)| *k == e).expect("marginal").1;
                let own = outs[edge.child].0.as_ref().expect("child table");
                marg.iter().zip(own).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .collect())
    }
}

/// Convenience wrapper: builds a plan for `config` and solves.
pub fn solve(rg: &RegionGraph, fg: &FactorGraph, beta: f64, config: &EngineConfig) -> Result<(MessagePlan, Solution)> {
    let plan = MessagePlan::new(rg, fg, config.variant, config.active_edges)?;
    let sol = plan.solve(beta, config)?;
    Ok((plan, sol))
}

/// Edges whose consistency condition follows from the remaining ones.
///
/// Edges are visited deepest child first. An edge `p -> c` is dropped when
/// `p` and `c` stay connected through active edges among the regions that
/// contain every vertex of `c`, and no previously dropped edge loses the
/// same property.
pub fn select_dropped_edges(rg: &RegionGraph) -> Vec<usize> {
    let n_regions = rg.num_regions();
    let members: Vec<Vec<usize>> = (0..n_regions)
        .map(|r| {
            let mut m = rg.regions_containing(&rg.region(r).vertices);
            m.sort_unstable();
            m
        })
        .collect();
    // subsets[r] lists regions whose vertex set is contained in r's
    let mut subsets = vec![Vec::new(); n_regions];
    for (s, m) in members.iter().enumerate() {
        for &r in m {
            subsets[r].push(s);
        }
    }
    let mut order: Vec<usize> = (0..rg.num_edges()).collect();
    order.sort_by_key(|&e| (std::cmp::Reverse(rg.depth(rg.edge(e).child)), e));
    let mut active = vec![true; rg.num_edges()];
    let mut dropped_by_child: Vec<Vec<usize>> = vec![Vec::new(); n_regions];
    let mut dropped = Vec::new();
    for e in order {
        let edge = rg.edge(e);
        active[e] = false;
        let mut ok = rg.connected_within(&members[edge.child], &active, edge.parent, edge.child);
        if ok {
            'outer: for &s in &subsets[edge.child] {
                for &d in &dropped_by_child[s] {
                    let de = rg.edge(d);
                    if !rg.connected_within(&members[s], &active, de.parent, de.child) {
                        ok = false;
                        break 'outer;
                    }
                }
            }
        }
        if ok {
            dropped_by_child[edge.child].push(e);
            dropped.push(e);
        } else {
            active[e] = true;
        }
    }
    dropped.sort_unstable();
    dropped
}
