//! Plain-text fixed-point checkpoints: a short header and one line of
//! message values per edge, written with round-trip float formatting.

use std::fmt::Write as _;

use crate::engine::{MessageState, Variant};
use crate::error::{Error, Result};
use crate::region_graph::RegionGraph;

const MAGIC: &str = "# sgbp checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub variant: Variant,
    pub beta: f64,
    pub damping: f64,
    pub iteration: usize,
    pub residual: f64,
}

/// Header lines, then `M edge parent child v0 v1 ...` for every edge.
pub fn write_checkpoint(rg: &RegionGraph, header: &CheckpointHeader, state: &MessageState) -> Result<String> {
    if state.num_edges() != rg.num_edges() {
        return Err(Error::Dimension {
            expected: rg.num_edges(),
            got: state.num_edges(),
        });
    }
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "variant {}", header.variant);
    let _ = writeln!(out, "beta {:?}", header.beta);
    let _ = writeln!(out, "damping {:?}", header.damping);
    let _ = writeln!(out, "iteration {}", header.iteration);
    let _ = writeln!(out, "residual {:?}", header.residual);
    let _ = writeln!(out, "edges {}", rg.num_edges());
    for (e, edge) in rg.edges().iter().enumerate() {
        let _ = write!(out, "M {e} {} {}", edge.parent, edge.child);
        for v in state.message(e) {
            let _ = write!(out, " {v:?}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses a checkpoint written for `rg`; edge endpoints and table sizes
/// must match the graph.
pub fn read_checkpoint(rg: &RegionGraph, sizes: &[usize], text: &str) -> Result<(CheckpointHeader, MessageState)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected `{MAGIC}`"),
            })
        }
    }
    let mut field = |key: &str| -> Result<(usize, String)> {
        let (no, line) = lines.next().ok_or(Error::Parse {
            line: 0,
            message: format!("missing `{key}` line"),
        })?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok((no, v.trim().to_string())),
            _ => Err(Error::Parse {
                line: no,
                message: format!("expected `{key} <value>`"),
            }),
        }
    };
    fn num<T: std::str::FromStr>((no, v): (usize, String)) -> Result<T> {
        v.parse().map_err(|_| Error::Parse {
            line: no,
            message: format!("bad number `{v}`"),
        })
    }
    let (no, variant) = field("variant")?;
    let variant: Variant = variant.parse().map_err(|_| Error::Parse {
        line: no,
        message: format!("unknown variant `{variant}`"),
    })?;
    let header = CheckpointHeader {
        variant,
        beta: num(field("beta")?)?,
        damping: num(field("damping")?)?,
        iteration: num(field("iteration")?)?,
        residual: num(field("residual")?)?,
    };
    let edges_line = field("edges")?;
    let edge_no = edges_line.0;
    let edges: usize = num(edges_line)?;
    if edges != rg.num_edges() || sizes.len() != edges {
        return Err(Error::Parse {
            line: edge_no,
            message: format!("checkpoint has {edges} edges, region graph has {}", rg.num_edges()),
        });
    }
    let mut tables: Vec<Option<Vec<f64>>> = vec![None; edges];
    for (no, line) in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Parse { line: no, message };
        let mut parts = line.split_whitespace();
        if parts.next() != Some("M") {
            return Err(bad("expected an `M` line".into()));
        }
        let mut idx = || -> Result<usize> {
            parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("expected edge, parent and child ids".into()))
        };
        let (e, parent, child) = (idx()?, idx()?, idx()?);
        if e >= edges {
            return Err(bad(format!("edge {e} out of range")));
        }
        let edge = rg.edge(e);
        if edge.parent != parent || edge.child != child {
            return Err(bad(format!(
                "edge {e} is {} -> {} in the region graph, {parent} -> {child} in the file",
                edge.parent, edge.child
            )));
        }
        let values: Vec<f64> = parts
            .map(|t| t.parse().map_err(|_| bad(format!("bad value `{t}`"))))
            .collect::<Result<_>>()?;
        if values.len() != sizes[e] {
            return Err(bad(format!("edge {e} needs {} values, got {}", sizes[e], values.len())));
        }
        if tables[e].replace(values).is_some() {
            return Err(bad(format!("edge {e} listed twice")));
        }
    }
    let tables: Vec<Vec<f64>> = tables
        .into_iter()
        .enumerate()
        .map(|(e, t)| {
            t.ok_or(Error::Parse {
                line: 0,
                message: format!("edge {e} missing"),
            })
        })
        .collect::<Result<_>>()?;
    let mut state = MessageState::from_tables(&tables);
    state.iteration = header.iteration;
    state.residual = header.residual;
    Ok((header, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{ActiveEdges, EngineConfig, Init, MessagePlan};
    use crate::lattice::{build_lattice, build_region_graph_2d, LatticeSpec};

    #[test]
    fn reload_reproduces_the_residual() {
        let fg = build_lattice(&LatticeSpec::edwards_anderson(2, 4, 3)).unwrap();
        let rg = build_region_graph_2d(&fg, 4, 2).unwrap();
        let plan = MessagePlan::new(&rg, &fg, Variant::SgbpIdeal, ActiveEdges::DroppedRedundant).unwrap();
        let config = EngineConfig {
            damping: 0.5,
            max_iters: 40,
            init: Init::Random { seed: 5 },
            ..Default::default()
        };
        let sol = plan.solve(0.3, &config).unwrap();
        let header = CheckpointHeader {
            variant: Variant::SgbpIdeal,
            beta: 0.3,
            damping: 0.5,
            iteration: sol.state.iteration,
            residual: sol.state.residual,
        };
        let text = write_checkpoint(&rg, &header, &sol.state).unwrap();
        let (h, state) = read_checkpoint(&rg, plan.message_sizes(), &text).unwrap();
        assert_eq!(h, header);
        assert_eq!(state.values(), sol.state.values());
        let a = plan.sweep(&sol.state, 0.3, &config).unwrap();
        let b = plan.sweep(&state, 0.3, &config).unwrap();
        assert!((a.residual - b.residual).abs() <= 1e-12);
    }

    #[test]
    fn malformed_files_name_the_line() {
        let fg = build_lattice(&LatticeSpec::ferromagnet(2, 4)).unwrap();
        let rg = build_region_graph_2d(&fg, 4, 2).unwrap();
        let plan = MessagePlan::new(&rg, &fg, Variant::SgbpIdeal, ActiveEdges::All).unwrap();
        let header = CheckpointHeader {
            variant: Variant::SgbpIdeal,
            beta: 0.1,
            damping: 1.0,
            iteration: 0,
            residual: 0.0,
        };
        let text = write_checkpoint(&rg, &header, &plan.uniform_state()).unwrap();
        assert!(matches!(
            read_checkpoint(&rg, plan.message_sizes(), "garbage"),
            Err(Error::Parse { line: 1, .. })
        ));
        let swapped = text.replacen("M 0 ", "M 0 9999 ", 1);
        assert!(matches!(
            read_checkpoint(&rg, plan.message_sizes(), &swapped),
            Err(Error::Parse { line: 8, .. })
        ));
        let truncated: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(read_checkpoint(&rg, plan.message_sizes(), &truncated).is_err());
    }
}
