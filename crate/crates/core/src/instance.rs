//! Text format for lattice instances, so a disorder realization can be
//! regenerated or inspected without the RNG.
//!
//! ```text
//! # rng=chacha8-seed_from_u64
//! 3 4 17
//! J 0 1 -1.0
//! ...
//! h 0 0.25
//! ```
//!
//! The header is `dim L seed`. `J` lines come in bond order; `h` lines are
//! optional and default to zero.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::factor_graph::FactorGraph;
use crate::lattice::{build_lattice, LatticeSpec, RNG_ALGORITHM};

#[derive(Debug)]
pub struct Instance {
    pub dim: usize,
    pub side_length: usize,
    pub seed: u64,
    pub graph: FactorGraph,
}

pub fn write_instance(spec: &LatticeSpec, fg: &FactorGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# rng={RNG_ALGORITHM}");
    let _ = writeln!(out, "{} {} {}", spec.dim, spec.side_length, spec.seed);
    for a in fg.interactions() {
        let _ = writeln!(out, "J {} {} {:?}", a.members[0], a.members[1], a.pair_coupling());
    }
    for v in fg.vertices() {
        let h = v.field();
        if h != 0.0 {
            let _ = writeln!(out, "h {} {h:?}", v.id);
        }
    }
    out
}

/// Reads an instance and checks that its bonds are the periodic lattice
/// bonds in the order the region builders expect.
pub fn read_instance(text: &str) -> Result<Instance> {
    let mut header: Option<(usize, usize, u64)> = None;
    let mut couplings: Vec<(usize, usize, f64)> = Vec::new();
    let mut fields: Vec<(usize, usize, f64)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Parse { line: no, message };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let int = |t: &str| t.parse::<usize>().map_err(|_| bad(format!("bad integer `{t}`")));
        let float = |t: &str| t.parse::<f64>().map_err(|_| bad(format!("bad number `{t}`")));
        match (header.is_some(), tokens.as_slice()) {
            (false, [d, l, s]) => {
                let seed = s.parse().map_err(|_| bad(format!("bad seed `{s}`")))?;
                header = Some((int(d)?, int(l)?, seed));
            }
            (false, _) => return Err(bad("expected header `dim L seed`".into())),
            (true, ["J", i, j, v]) => couplings.push((int(i)?, int(j)?, float(v)?)),
            (true, ["h", i, v]) => fields.push((no, int(i)?, float(v)?)),
            (true, _) => return Err(bad(format!("unrecognized line `{line}`"))),
        }
    }
    let (dim, side_length, seed) = header.ok_or(Error::Parse {
        line: 0,
        message: "missing header".into(),
    })?;
    let spec = LatticeSpec::ferromagnet(dim, side_length);
    let template = build_lattice(&spec)?;
    if couplings.len() != template.num_interactions() {
        return Err(Error::Parse {
            line: 0,
            message: format!(
                "expected {} couplings for dim {dim} L {side_length}, got {}",
                template.num_interactions(),
                couplings.len()
            ),
        });
    }
    for (a, &(i, j, _)) in couplings.iter().enumerate() {
        if template.interaction(a).members != [i, j] {
            return Err(Error::Model(format!(
                "coupling {a} joins {i}-{j}, expected bond {:?}",
                template.interaction(a).members
            )));
        }
    }
    let mut h = vec![0.0; template.num_vertices()];
    for (no, i, v) in fields {
        *h.get_mut(i).ok_or(Error::Parse {
            line: no,
            message: format!("vertex {i} out of range"),
        })? = v;
    }
    Ok(Instance {
        dim,
        side_length,
        seed,
        graph: FactorGraph::spin_model(&h, &couplings)?,
    })
}
