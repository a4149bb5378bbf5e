//! Discrete model: vertices with self-energies and many-body interactions.
//!
//! States are indices `0..q`. Spin models use `q = 2` with index 0 mapped
//! to the physical value -1 and index 1 mapped to +1. Joint tables over an
//! ordered list of vertices use mixed radix with the first vertex as the
//! fastest-varying digit.

use crate::error::{Error, Result};

/// Physical spin value of a binary state index.
#[inline]
pub fn spin(state: usize) -> f64 {
    if state == 0 {
        -1.0
    } else {
        1.0
    }
}

/// State index of a physical spin value (`x < 0` maps to 0).
#[inline]
pub fn spin_index(x: f64) -> usize {
    usize::from(x > 0.0)
}

/// Beyond this magnitude of `beta * E` the Boltzmann factor is checked for
/// overflow before being exponentiated.
pub const LOG_DOMAIN_THRESHOLD: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct VertexSpec {
    pub id: usize,
    pub alphabet_size: usize,
    pub self_energy: Vec<f64>,
}

impl VertexSpec {
    /// Binary spin with external field `h`: `E(x) = -h x`.
    pub fn spin(id: usize, field: f64) -> Self {
        Self {
            id,
            alphabet_size: 2,
            self_energy: vec![field, -field],
        }
    }

    /// The field `h` of a binary vertex whose self-energy is `-h x` (up to a constant).
    pub fn field(&self) -> f64 {
        (self.self_energy[0] - self.self_energy[1]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSpec {
    pub id: usize,
    pub members: Vec<usize>,
    pub energy: Vec<f64>,
}

impl InteractionSpec {
    /// Pair coupling between binary spins: `E(x_i, x_j) = -J x_i x_j`.
    pub fn coupling(id: usize, i: usize, j: usize, coupling: f64) -> Self {
        let mut energy = vec![0.0; 4];
        for (idx, e) in energy.iter_mut().enumerate() {
            *e = -coupling * spin(idx & 1) * spin(idx >> 1);
        }
        Self {
            id,
            members: vec![i, j],
            energy,
        }
    }

    /// Coupling constant of a binary pair interaction of the form `-J x_i x_j`.
    pub fn pair_coupling(&self) -> f64 {
        // E(+,+) = -J
        -self.energy[3]
    }
}

/// A sub-configuration: one state index per vertex of some declared vertex list.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    pub states: Vec<usize>,
}

impl Configuration {
    pub fn new(states: Vec<usize>) -> Self {
        Self { states }
    }

    /// Builds a binary configuration from physical spin values.
    pub fn from_spins(spins: &[f64]) -> Self {
        Self {
            states: spins.iter().map(|&x| spin_index(x)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// An energy term that can be evaluated on its own scope.
pub trait EnergyTerm {
    /// Number of vertices in the term's scope.
    fn scope_len(&self) -> usize;
    /// Energy for the given states (in scope order).
    fn energy_of(&self, states: &[usize]) -> Result<f64>;
}

impl EnergyTerm for VertexSpec {
    fn scope_len(&self) -> usize {
        1
    }

    fn energy_of(&self, states: &[usize]) -> Result<f64> {
        if states.len() != 1 {
            return Err(Error::Dimension {
                expected: 1,
                got: states.len(),
            });
        }
        self.self_energy
            .get(states[0])
            .copied()
            .ok_or_else(|| Error::Model(format!("state {} out of range for vertex {}", states[0], self.id)))
    }
}

/// Mixed-radix index with the first digit varying fastest.
pub fn joint_index(states: &[usize], radices: &[usize]) -> Option<usize> {
    let mut idx = 0;
    let mut stride = 1;
    for (&s, &q) in states.iter().zip(radices) {
        if s >= q {
            return None;
        }
        idx += s * stride;
        stride *= q;
    }
    Some(idx)
}

/// Inverse of [`joint_index`].
pub fn decode_index(mut idx: usize, radices: &[usize], out: &mut Vec<usize>) {
    out.clear();
    for &q in radices {
        out.push(idx % q);
        idx /= q;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    vertices: Vec<VertexSpec>,
    interactions: Vec<InteractionSpec>,
    vertex_interactions: Vec<Vec<usize>>,
}

impl FactorGraph {
    /// Validates and assembles a factor graph. Ids must equal positions.
    pub fn new(vertices: Vec<VertexSpec>, interactions: Vec<InteractionSpec>) -> Result<Self> {
        for (pos, v) in vertices.iter().enumerate() {
            if v.id != pos {
                return Err(Error::Model(format!("vertex at position {pos} has id {}", v.id)));
            }
            if v.alphabet_size < 2 {
                return Err(Error::Model(format!(
                    "vertex {pos} has alphabet size {}",
                    v.alphabet_size
                )));
            }
            if v.self_energy.len() != v.alphabet_size {
                return Err(Error::Model(format!("vertex {pos}: self-energy table length mismatch")));
            }
            if v.self_energy.iter().any(|e| !e.is_finite()) {
                return Err(Error::Model(format!("vertex {pos}: non-finite self-energy")));
            }
        }
        let mut vertex_interactions = vec![Vec::new(); vertices.len()];
        for (pos, a) in interactions.iter().enumerate() {
            if a.id != pos {
                return Err(Error::Model(format!("interaction at position {pos} has id {}", a.id)));
            }
            if a.members.is_empty() {
                return Err(Error::Model(format!("interaction {pos} has no members")));
            }
            let mut size = 1usize;
            for (k, &m) in a.members.iter().enumerate() {
                let v = vertices
                    .get(m)
                    .ok_or_else(|| Error::Model(format!("interaction {pos} references unknown vertex {m}")))?;
                if a.members[..k].contains(&m) {
                    return Err(Error::Model(format!("interaction {pos} repeats vertex {m}")));
                }
                size = size
                    .checked_mul(v.alphabet_size)
                    .ok_or_else(|| Error::Model(format!("interaction {pos} table too large")))?;
            }
            if a.energy.len() != size {
                return Err(Error::Model(format!(
                    "interaction {pos}: energy table has {} entries, expected {size}",
                    a.energy.len()
                )));
            }
            if a.energy.iter().any(|e| !e.is_finite()) {
                return Err(Error::Model(format!("interaction {pos}: non-finite energy")));
            }
            for &m in &a.members {
                vertex_interactions[m].push(pos);
            }
        }
        Ok(Self {
            vertices,
            interactions,
            vertex_interactions,
        })
    }

    /// Binary spin model `H = -sum h_i x_i - sum J_ij x_i x_j`.
    pub fn spin_model(fields: &[f64], couplings: &[(usize, usize, f64)]) -> Result<Self> {
        let vertices = fields
            .iter()
            .enumerate()
            .map(|(i, &h)| VertexSpec::spin(i, h))
            .collect();
        let interactions = couplings
            .iter()
            .enumerate()
            .map(|(a, &(i, j, c))| InteractionSpec::coupling(a, i, j, c))
            .collect();
        Self::new(vertices, interactions)
    }

    pub fn vertices(&self) -> &[VertexSpec] {
        &self.vertices
    }

    pub fn interactions(&self) -> &[InteractionSpec] {
        &self.interactions
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.interactions.len()
    }

    pub fn vertex(&self, i: usize) -> &VertexSpec {
        &self.vertices[i]
    }

    pub fn interaction(&self, a: usize) -> &InteractionSpec {
        &self.interactions[a]
    }

    /// Interactions touching vertex `i`.
    pub fn interactions_of(&self, i: usize) -> &[usize] {
        &self.vertex_interactions[i]
    }

    pub fn is_binary(&self) -> bool {
        self.vertices.iter().all(|v| v.alphabet_size == 2)
    }

    /// True when every vertex is binary with a spin-flip symmetric self-energy.
    pub fn has_zero_field(&self) -> bool {
        self.vertices
            .iter()
            .all(|v| v.alphabet_size == 2 && v.self_energy[0] == v.self_energy[1])
    }

    pub fn radices(&self, vertices: &[usize]) -> Vec<usize> {
        vertices.iter().map(|&v| self.vertices[v].alphabet_size).collect()
    }

    /// `sum_i E_i(x_i) + sum_a E_a(x_da)` for a configuration of every vertex.
    pub fn total_energy(&self, x: &Configuration) -> Result<f64> {
        if x.len() != self.vertices.len() {
            return Err(Error::Dimension {
                expected: self.vertices.len(),
                got: x.len(),
            });
        }
        let mut e = 0.0;
        for (v, &s) in self.vertices.iter().zip(&x.states) {
            e += v.energy_of(&[s])?;
        }
        let mut buf = Vec::new();
        for a in &self.interactions {
            buf.clear();
            buf.extend(a.members.iter().map(|&m| x.states[m]));
            e += self.interaction_energy(a, &buf)?;
        }
        Ok(e)
    }

    fn interaction_energy(&self, a: &InteractionSpec, states: &[usize]) -> Result<f64> {
        let radices = self.radices(&a.members);
        let idx = joint_index(states, &radices)
            .ok_or_else(|| Error::Model(format!("state out of range for interaction {}", a.id)))?;
        Ok(a.energy[idx])
    }

    /// Interaction energy evaluated on the interaction's own scope.
    pub fn interaction_term(&self, a: usize) -> InteractionTerm<'_> {
        InteractionTerm { graph: self, a }
    }

    /// Total energy of every interaction lying inside `vertices`, plus their self-energies.
    pub fn sub_energy(&self, vertices: &[usize], interactions: &[usize], states: &[usize]) -> f64 {
        let mut e = 0.0;
        for (&v, &s) in vertices.iter().zip(states) {
            e += self.vertices[v].self_energy[s];
        }
        let mut buf = Vec::new();
        for &a in interactions {
            let spec = &self.interactions[a];
            buf.clear();
            for &m in &spec.members {
                let p = vertices.iter().position(|&v| v == m).expect("member inside region");
                buf.push(states[p]);
            }
            let radices = self.radices(&spec.members);
            e += spec.energy[joint_index(&buf, &radices).expect("valid states")];
        }
        e
    }
}

/// Borrowed view of an interaction that knows its member alphabets.
pub struct InteractionTerm<'a> {
    graph: &'a FactorGraph,
    a: usize,
}

impl EnergyTerm for InteractionTerm<'_> {
    fn scope_len(&self) -> usize {
        self.graph.interactions[self.a].members.len()
    }

    fn energy_of(&self, states: &[usize]) -> Result<f64> {
        let spec = &self.graph.interactions[self.a];
        if states.len() != spec.members.len() {
            return Err(Error::Dimension {
                expected: spec.members.len(),
                got: states.len(),
            });
        }
        self.graph.interaction_energy(spec, states)
    }
}

/// `exp(-beta * E(x))` for a single term.
pub fn boltzmann_factor<T: EnergyTerm + ?Sized>(term: &T, x: &[usize], beta: f64) -> Result<f64> {
    let log_w = log_boltzmann_factor(term, x, beta)?;
    if log_w.abs() > LOG_DOMAIN_THRESHOLD && log_w > f64::MAX.ln() {
        return Err(Error::numeric(None, format!("Boltzmann factor exp({log_w}) overflows")));
    }
    let w = log_w.exp();
    if !w.is_finite() || w <= 0.0 {
        return Err(Error::numeric(
            None,
            format!("Boltzmann factor exp({log_w}) out of range"),
        ));
    }
    Ok(w)
}

/// `-beta * E(x)` for a single term.
pub fn log_boltzmann_factor<T: EnergyTerm + ?Sized>(term: &T, x: &[usize], beta: f64) -> Result<f64> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::Precondition(format!("beta must be finite and >= 0, got {beta}")));
    }
    if x.len() != term.scope_len() {
        return Err(Error::Dimension {
            expected: term.scope_len(),
            got: x.len(),
        });
    }
    let e = term.energy_of(x)?;
    if beta == 0.0 {
        return Ok(0.0);
    }
    Ok(-beta * e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ferro_pair() -> FactorGraph {
        FactorGraph::spin_model(&[0.0, 0.0], &[(0, 1, 1.0)]).unwrap()
    }

    #[test]
    fn zero_energies_give_zero() {
        let g = FactorGraph::new(
            vec![
                VertexSpec {
                    id: 0,
                    alphabet_size: 3,
                    self_energy: vec![0.0; 3],
                },
                VertexSpec {
                    id: 1,
                    alphabet_size: 2,
                    self_energy: vec![0.0; 2],
                },
            ],
            vec![InteractionSpec {
                id: 0,
                members: vec![0, 1],
                energy: vec![0.0; 6],
            }],
        )
        .unwrap();
        for s0 in 0..3 {
            for s1 in 0..2 {
                assert_eq!(g.total_energy(&Configuration::new(vec![s0, s1])).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn ferro_pair_aligned_energy() {
        let g = ferro_pair();
        let e = g.total_energy(&Configuration::from_spins(&[1.0, 1.0])).unwrap();
        assert_eq!(e, -1.0);
        let e = g.total_energy(&Configuration::from_spins(&[1.0, -1.0])).unwrap();
        assert_eq!(e, 1.0);
    }

    #[test]
    fn length_mismatch_is_dimension_error() {
        let g = ferro_pair();
        assert!(matches!(
            g.total_energy(&Configuration::new(vec![0])),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(FactorGraph::new(
            vec![VertexSpec {
                id: 0,
                alphabet_size: 1,
                self_energy: vec![0.0]
            }],
            vec![]
        )
        .is_err());
        assert!(FactorGraph::spin_model(&[0.0], &[(0, 0, 1.0)]).is_err());
        assert!(FactorGraph::spin_model(&[0.0], &[(0, 3, 1.0)]).is_err());
        let bad = InteractionSpec {
            id: 0,
            members: vec![0, 1],
            energy: vec![0.0; 3],
        };
        assert!(FactorGraph::new(vec![VertexSpec::spin(0, 0.0), VertexSpec::spin(1, 0.0)], vec![bad]).is_err());
        let nan = VertexSpec {
            id: 0,
            alphabet_size: 2,
            self_energy: vec![f64::NAN, 0.0],
        };
        assert!(FactorGraph::new(vec![nan], vec![]).is_err());
    }

    #[test]
    fn boltzmann_examples() {
        let g = ferro_pair();
        let term = g.interaction_term(0);
        assert_eq!(boltzmann_factor(&term, &[1, 1], 0.0).unwrap(), 1.0);
        assert_relative_eq!(
            boltzmann_factor(&term, &[1, 1], 0.5).unwrap(),
            0.5f64.exp(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            boltzmann_factor(&term, &[1, 1], 0.5).unwrap(),
            1.648_721_270_700_128,
            max_relative = 1e-12
        );
        let v = VertexSpec::spin(0, 2.0);
        assert_relative_eq!(
            boltzmann_factor(&v, &[0], 0.25).unwrap(),
            0.606_530_659_712_633_4,
            max_relative = 1e-12
        );
    }

    #[test]
    fn boltzmann_overflow_is_error() {
        let v = VertexSpec::spin(0, 1.0);
        assert!(matches!(boltzmann_factor(&v, &[1], 1e4), Err(Error::Numeric { .. })));
        assert!(boltzmann_factor(&v, &[1], -1.0).is_err());
    }

    /// Term-by-term re-summation on a hand-built 3x3 periodic lattice.
    #[test]
    fn periodic_3x3_matches_resummation() {
        let l = 3;
        let mut couplings = Vec::new();
        let mut seed = 0x9e37_79b9_7f4a_7c15u64;
        let mut next = || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            seed
        };
        for y in 0..l {
            for x in 0..l {
                let s = y * l + x;
                for n in [y * l + (x + 1) % l, ((y + 1) % l) * l + x] {
                    couplings.push((s, n, if next() & 1 == 0 { 1.0 } else { -1.0 }));
                }
            }
        }
        let g = FactorGraph::spin_model(&[0.0; 9], &couplings).unwrap();
        for _ in 0..20 {
            let spins: Vec<f64> = (0..9).map(|_| if next() & 2 == 0 { 1.0 } else { -1.0 }).collect();
            let mut oracle = 0.0;
            for &(i, j, c) in &couplings {
                oracle -= c * spins[i] * spins[j];
            }
            let e = g.total_energy(&Configuration::from_spins(&spins)).unwrap();
            assert_eq!(e, oracle);
        }
    }

    proptest! {
        #[test]
        fn boltzmann_factor_is_multiplicative(e in -5.0f64..5.0, b1 in 0.0f64..2.0, b2 in 0.0f64..2.0) {
            let v = VertexSpec { id: 0, alphabet_size: 2, self_energy: vec![e, -e] };
            let joint = boltzmann_factor(&v, &[0], b1 + b2).unwrap();
            let split = boltzmann_factor(&v, &[0], b1).unwrap() * boltzmann_factor(&v, &[0], b2).unwrap();
            prop_assert!((joint - split).abs() <= 1e-12 * joint);
        }

        #[test]
        fn energy_is_additive_over_interaction_split(
            fields in proptest::collection::vec(-1.0f64..1.0, 5),
            js in proptest::collection::vec(-2.0f64..2.0, 6),
            bits in 0usize..32,
        ) {
            let pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)];
            let all: Vec<_> = pairs.iter().zip(&js).map(|(&(i, j), &c)| (i, j, c)).collect();
            let whole = FactorGraph::spin_model(&fields, &all).unwrap();
            let left = FactorGraph::spin_model(&fields, &all[..3]).unwrap();
            let right = FactorGraph::spin_model(&[0.0; 5], &all[3..]).unwrap();
            let x = Configuration::new((0..5).map(|k| (bits >> k) & 1).collect());
            let sum = left.total_energy(&x).unwrap() + right.total_energy(&x).unwrap();
            prop_assert!((whole.total_energy(&x).unwrap() - sum).abs() < 1e-12);
        }

        #[test]
        fn zero_field_energy_is_flip_invariant(
            js in proptest::collection::vec(-2.0f64..2.0, 6),
            bits in 0usize..32,
        ) {
            let pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)];
            let all: Vec<_> = pairs.iter().zip(&js).map(|(&(i, j), &c)| (i, j, c)).collect();
            let g = FactorGraph::spin_model(&[0.0; 5], &all).unwrap();
            let x = Configuration::new((0..5).map(|k| (bits >> k) & 1).collect());
            let flipped = Configuration::new(x.states.iter().map(|s| 1 - s).collect());
            prop_assert_eq!(g.total_energy(&x).unwrap(), g.total_energy(&flipped).unwrap());
        }
    }
}
