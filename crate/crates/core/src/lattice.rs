//! Periodic hypercubic spin lattices and the region-graph families built on them.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::factor_graph::FactorGraph;
use crate::region_graph::RegionGraph;

/// Identifier of the disorder generator written into instance headers.
pub const RNG_ALGORITHM: &str = "chacha8-seed_from_u64";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingKind {
    Ferromagnet,
    /// Couplings drawn independently and uniformly from {+1, -1}.
    PlusMinusJ,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    pub dim: usize,
    pub side_length: usize,
    pub coupling_kind: CouplingKind,
    /// Uniform external field on every vertex.
    pub field: f64,
    pub seed: u64,
}

impl LatticeSpec {
    pub fn ferromagnet(dim: usize, side_length: usize) -> Self {
        Self {
            dim,
            side_length,
            coupling_kind: CouplingKind::Ferromagnet,
            field: 0.0,
            seed: 0,
        }
    }

    pub fn edwards_anderson(dim: usize, side_length: usize, seed: u64) -> Self {
        Self {
            dim,
            side_length,
            coupling_kind: CouplingKind::PlusMinusJ,
            field: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.dim) {
            return Err(Error::Spec(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        if self.side_length < 3 {
            return Err(Error::Spec(format!(
                "side length must be >= 3, got {}",
                self.side_length
            )));
        }
        if !self.field.is_finite() {
            return Err(Error::Spec("field must be finite".into()));
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.side_length.pow(self.dim as u32)
    }
}

impl FromStr for LatticeSpec {
    type Err = Error;

    /// Parses `dim=2,L=64,model=ea,seed=12345[,h=0.1]`.
    fn from_str(s: &str) -> Result<Self> {
        let mut spec = LatticeSpec::ferromagnet(2, 0);
        let mut have_l = false;
        for part in s.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Spec(format!("expected key=value, got `{part}`")))?;
            let bad = || Error::Spec(format!("bad value `{v}` for `{k}`"));
            match k.trim() {
                "dim" => spec.dim = v.parse().map_err(|_| bad())?,
                "L" | "l" => {
                    spec.side_length = v.parse().map_err(|_| bad())?;
                    have_l = true;
                }
                "model" => {
                    spec.coupling_kind = match v {
                        "ferro" | "ising" | "ferromagnet" => CouplingKind::Ferromagnet,
                        "ea" | "pmj" => CouplingKind::PlusMinusJ,
                        _ => return Err(bad()),
                    }
                }
                "seed" => spec.seed = v.parse().map_err(|_| bad())?,
                "h" | "field" => spec.field = v.parse().map_err(|_| bad())?,
                other => return Err(Error::Spec(format!("unknown lattice key `{other}`"))),
            }
        }
        if !have_l {
            return Err(Error::Spec("lattice spec needs L=<side>".into()));
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for LatticeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let model = match self.coupling_kind {
            CouplingKind::Ferromagnet => "ferro",
            CouplingKind::PlusMinusJ => "ea",
        };
        write!(
            f,
            "dim={},L={},model={},seed={}",
            self.dim, self.side_length, model, self.seed
        )?;
        if self.field != 0.0 {
            write!(f, ",h={}", self.field)?;
        }
        Ok(())
    }
}

/// Torus geometry helper: site coordinates, ids and neighbours.
#[derive(Debug, Clone, Copy)]
pub struct Torus {
    pub dim: usize,
    pub side: usize,
}

impl Torus {
    pub fn site(&self, coords: &[usize]) -> usize {
        coords.iter().rev().fold(0, |acc, &c| acc * self.side + c % self.side)
    }

    pub fn coords(&self, mut site: usize) -> Vec<usize> {
        (0..self.dim)
            .map(|_| {
                let c = site % self.side;
                site /= self.side;
                c
            })
            .collect()
    }

    /// Site displaced by `delta` (wrapping).
    pub fn shift(&self, site: usize, delta: &[usize]) -> usize {
        let c = self.coords(site);
        let moved: Vec<usize> = c.iter().zip(delta).map(|(a, d)| (a + d) % self.side).collect();
        self.site(&moved)
    }

    /// Interaction id of the bond leaving `site` in positive direction `dir`.
    pub fn bond(&self, site: usize, dir: usize) -> usize {
        site * self.dim + dir
    }
}

/// Periodic lattice with nearest-neighbour couplings. Bond `site*dim + d`
/// joins `site` to its `+d` neighbour, members ordered `[site, neighbour]`.
pub fn build_lattice(spec: &LatticeSpec) -> Result<FactorGraph> {
    spec.validate()?;
    let torus = Torus {
        dim: spec.dim,
        side: spec.side_length,
    };
    let n = spec.num_vertices();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut couplings = Vec::with_capacity(n * spec.dim);
    for site in 0..n {
        for d in 0..spec.dim {
            let mut delta = vec![0; spec.dim];
            delta[d] = 1;
            let j = match spec.coupling_kind {
                CouplingKind::Ferromagnet => 1.0,
                CouplingKind::PlusMinusJ => {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            couplings.push((site, torus.shift(site, &delta), j));
        }
    }
    FactorGraph::spin_model(&vec![spec.field; n], &couplings)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionFamily {
    /// Overlapping n x n squares, n x n/2 rods, n/2 x n/2 plaquettes.
    SquareRodPlaquette2d,
    /// 2x2x2 cubes, 2x2 surfaces, 2-site rods, single vertices.
    CubeSurfaceRodVertex3d,
    /// Pair rods and single vertices (conventional belief propagation).
    Bethe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionLayout {
    pub family: RegionFamily,
    pub block_size: usize,
}

impl RegionLayout {
    pub fn square_2d(n: usize) -> Self {
        Self {
            family: RegionFamily::SquareRodPlaquette2d,
            block_size: n,
        }
    }

    pub fn cube_3d() -> Self {
        Self {
            family: RegionFamily::CubeSurfaceRodVertex3d,
            block_size: 2,
        }
    }

    pub fn bethe() -> Self {
        Self {
            family: RegionFamily::Bethe,
            block_size: 1,
        }
    }

    /// Short label used in reports, e.g. `sgbp-2d-n4`.
    pub fn label(&self) -> String {
        match self.family {
            RegionFamily::SquareRodPlaquette2d => format!("2d-n{}", self.block_size),
            RegionFamily::CubeSurfaceRodVertex3d => format!("3d-n{}", self.block_size),
            RegionFamily::Bethe => "bethe".into(),
        }
    }

    pub fn build(&self, fg: &FactorGraph, lattice: &LatticeSpec) -> Result<RegionGraph> {
        match self.family {
            RegionFamily::SquareRodPlaquette2d => {
                if lattice.dim != 2 {
                    return Err(Error::Spec("the 2d region family needs a 2d lattice".into()));
                }
                build_region_graph_2d(fg, lattice.side_length, self.block_size)
            }
            RegionFamily::CubeSurfaceRodVertex3d => {
                if lattice.dim != 3 {
                    return Err(Error::Spec("the 3d region family needs a 3d lattice".into()));
                }
                build_region_graph_3d(fg, lattice.side_length)
            }
            RegionFamily::Bethe => build_bethe_region_graph(fg),
        }
    }
}

impl FromStr for RegionLayout {
    type Err = Error;

    /// Parses `family=2d,n=4`, `family=3d,n=2` or `family=bethe`.
    fn from_str(s: &str) -> Result<Self> {
        let mut family = None;
        let mut n = None;
        for part in s.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Spec(format!("expected key=value, got `{part}`")))?;
            match k.trim() {
                "family" => {
                    family = Some(match v {
                        "2d" => RegionFamily::SquareRodPlaquette2d,
                        "3d" => RegionFamily::CubeSurfaceRodVertex3d,
                        "bethe" | "bp" => RegionFamily::Bethe,
                        _ => return Err(Error::Spec(format!("unknown region family `{v}`"))),
                    })
                }
                "n" => n = Some(v.parse().map_err(|_| Error::Spec(format!("bad block size `{v}`")))?),
                other => return Err(Error::Spec(format!("unknown region key `{other}`"))),
            }
        }
        let family = family.ok_or_else(|| Error::Spec("region spec needs family=<2d|3d|bethe>".into()))?;
        let layout = match family {
            RegionFamily::SquareRodPlaquette2d => Self::square_2d(n.unwrap_or(2)),
            RegionFamily::CubeSurfaceRodVertex3d => {
                if n.is_some_and(|n| n != 2) {
                    return Err(Error::Spec("the 3d region family supports n=2 only".into()));
                }
                Self::cube_3d()
            }
            RegionFamily::Bethe => Self::bethe(),
        };
        if layout.family == RegionFamily::SquareRodPlaquette2d && (layout.block_size < 2 || layout.block_size % 2 != 0)
        {
            return Err(Error::Spec(format!(
                "block size must be even and >= 2, got {}",
                layout.block_size
            )));
        }
        Ok(layout)
    }
}

impl fmt::Display for RegionLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            RegionFamily::SquareRodPlaquette2d => write!(f, "family=2d,n={}", self.block_size),
            RegionFamily::CubeSurfaceRodVertex3d => write!(f, "family=3d,n=2"),
            RegionFamily::Bethe => write!(f, "family=bethe"),
        }
    }
}

fn block(torus: &Torus, origin: (usize, usize), rows: usize, cols: usize) -> Vec<usize> {
    let mut v = Vec::with_capacity(rows * cols);
    for dy in 0..rows {
        for dx in 0..cols {
            v.push(torus.site(&[origin.0 + dx, origin.1 + dy]));
        }
    }
    v
}

/// Overlapping-square region graph on an L x L torus.
///
/// Squares of n x n sites sit on a grid of stride n/2 and parent the four
/// n x n/2 rods they contain; each rod parents its two n/2 x n/2 plaquettes.
/// For n = 2 the rods are single bonds and the plaquettes single vertices.
pub fn build_region_graph_2d(fg: &FactorGraph, side: usize, n: usize) -> Result<RegionGraph> {
    build_region_graph_2d_with_origin(fg, side, n, (0, 0))
}

/// As [`build_region_graph_2d`] with the block grid shifted by `origin`.
pub fn build_region_graph_2d_with_origin(
    fg: &FactorGraph,
    side: usize,
    n: usize,
    origin: (usize, usize),
) -> Result<RegionGraph> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::Spec(format!("block size must be even and >= 2, got {n}")));
    }
    if !side.is_multiple_of(n) {
        return Err(Error::Spec(format!("block size {n} does not divide L = {side}")));
    }
    if side <= n {
        return Err(Error::Spec(format!("L = {side} must exceed block size {n}")));
    }
    if fg.num_vertices() != side * side {
        return Err(Error::Spec("factor graph is not an L x L lattice".into()));
    }
    let torus = Torus { dim: 2, side };
    let h = n / 2;
    let p = side / h;
    let at = |a: usize, b: usize| (origin.0 + a * h, origin.1 + b * h);
    let cell = |a: usize, b: usize| (b % p) * p + (a % p);

    let mut sets = Vec::with_capacity(4 * p * p);
    // squares: 0..p², horizontal rods (h rows x n cols): p²..2p²,
    // vertical rods (n rows x h cols): 2p²..3p², plaquettes: 3p²..4p²
    for b in 0..p {
        for a in 0..p {
            sets.push(block(&torus, at(a, b), n, n));
        }
    }
    for b in 0..p {
        for a in 0..p {
            sets.push(block(&torus, at(a, b), h, n));
        }
    }
    for b in 0..p {
        for a in 0..p {
            sets.push(block(&torus, at(a, b), n, h));
        }
    }
    for b in 0..p {
        for a in 0..p {
            sets.push(block(&torus, at(a, b), h, h));
        }
    }
    let pp = p * p;
    let (sq, hr, vr, pl) = (0, pp, 2 * pp, 3 * pp);
    let mut edges = Vec::with_capacity(8 * pp);
    for b in 0..p {
        for a in 0..p {
            let s = sq + cell(a, b);
            edges.push((s, hr + cell(a, b)));
            edges.push((s, hr + cell(a, b + 1)));
            edges.push((s, vr + cell(a, b)));
            edges.push((s, vr + cell(a + 1, b)));
        }
    }
    for b in 0..p {
        for a in 0..p {
            edges.push((hr + cell(a, b), pl + cell(a, b)));
            edges.push((hr + cell(a, b), pl + cell(a + 1, b)));
            edges.push((vr + cell(a, b), pl + cell(a, b)));
            edges.push((vr + cell(a, b), pl + cell(a, b + 1)));
        }
    }
    RegionGraph::new(fg, sets, &edges)
}

/// Cube / surface / rod / vertex region graph on an L x L x L torus, with a
/// 2x2x2 cube at every site.
pub fn build_region_graph_3d(fg: &FactorGraph, side: usize) -> Result<RegionGraph> {
    if side < 3 {
        return Err(Error::Spec(format!("L = {side} too small for 2x2x2 cubes")));
    }
    if fg.num_vertices() != side * side * side {
        return Err(Error::Spec("factor graph is not an L x L x L lattice".into()));
    }
    let torus = Torus { dim: 3, side };
    let n = side * side * side;
    let unit = |d: usize| {
        let mut v = [0usize; 3];
        v[d] = 1;
        v
    };
    // surfaces spanned by axis pairs; surface kind k is normal to axis k
    let planes = [(1usize, 2usize), (0, 2), (0, 1)];
    let mut sets = Vec::with_capacity(8 * n);
    for s in 0..n {
        let mut cube = Vec::with_capacity(8);
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    cube.push(torus.shift(s, &[dx, dy, dz]));
                }
            }
        }
        sets.push(cube);
    }
    for s in 0..n {
        for &(u, w) in &planes {
            let su = torus.shift(s, &unit(u));
            sets.push(vec![s, su, torus.shift(s, &unit(w)), torus.shift(su, &unit(w))]);
        }
    }
    for s in 0..n {
        for d in 0..3 {
            sets.push(vec![s, torus.shift(s, &unit(d))]);
        }
    }
    for s in 0..n {
        sets.push(vec![s]);
    }
    let (cubes, surfaces, rods, verts) = (0, n, 4 * n, 7 * n);
    let surface = |site: usize, k: usize| surfaces + 3 * site + k;
    let rod = |site: usize, d: usize| rods + 3 * site + d;
    let mut edges = Vec::with_capacity(6 * n + 12 * n + 6 * n);
    for s in 0..n {
        for (k, &(u, w)) in planes.iter().enumerate() {
            // normal axis k: faces at offset 0 and +1 along k
            let _ = (u, w);
            edges.push((cubes + s, surface(s, k)));
            edges.push((cubes + s, surface(torus.shift(s, &unit(k)), k)));
        }
    }
    for s in 0..n {
        for (k, &(u, w)) in planes.iter().enumerate() {
            let f = surface(s, k);
            edges.push((f, rod(s, u)));
            edges.push((f, rod(torus.shift(s, &unit(w)), u)));
            edges.push((f, rod(s, w)));
            edges.push((f, rod(torus.shift(s, &unit(u)), w)));
        }
    }
    for s in 0..n {
        for d in 0..3 {
            edges.push((rod(s, d), verts + s));
            edges.push((rod(s, d), verts + torus.shift(s, &unit(d))));
        }
    }
    RegionGraph::new(fg, sets, &edges)
}

/// Rods for every interaction parenting single-vertex regions.
pub fn build_bethe_region_graph(fg: &FactorGraph) -> Result<RegionGraph> {
    let m = fg.num_interactions();
    let mut sets: Vec<Vec<usize>> = fg.interactions().iter().map(|a| a.members.clone()).collect();
    sets.extend((0..fg.num_vertices()).map(|i| vec![i]));
    let mut edges = Vec::new();
    for (a, spec) in fg.interactions().iter().enumerate() {
        if spec.members.len() < 2 {
            continue;
        }
        for &i in &spec.members {
            edges.push((a, m + i));
        }
    }
    RegionGraph::new(fg, sets, &edges)
}
