//! Free energy, region marginals and per-spin observables at a message state.

use crate::engine::{MessagePlan, MessageState, Solution, Variant};
use crate::error::{Error, Result};
use crate::factor_graph::{spin, FactorGraph};
use crate::region_graph::RegionGraph;
use crate::table::{marginalize_into, positions_in, projection_map};

/// Header of the observable CSV.
pub const CSV_HEADER: &str = "beta,f,u,s,m,converged,residual,iters";

/// Largest tolerated spread between two regions' expectations of one term.
pub const CONSISTENCY_TOL: f64 = 1e-6;

/// `sum_alpha c_alpha ln z_alpha`, the approximation to `ln Z`.
pub fn log_partition(rg: &RegionGraph, plan: &MessagePlan, state: &MessageState, beta: f64) -> Result<f64> {
    check_shapes(rg, plan)?;
    let log_z = plan.region_log_z(state, beta)?;
    let mut acc = 0.0;
    for (r, lz) in rg.regions().iter().zip(&log_z) {
        acc += r.counting_number as f64 * lz;
    }
    Ok(acc)
}

/// Total free energy `-(1/beta) sum_alpha c_alpha ln z_alpha`. Undefined at
/// `beta = 0`, where the entropy carries the content.
pub fn free_energy(rg: &RegionGraph, plan: &MessagePlan, state: &MessageState, beta: f64) -> Result<f64> {
    if beta <= 0.0 {
        return Err(Error::Precondition(
            "free energy diverges at beta = 0; use the entropy density instead".into(),
        ));
    }
    Ok(-log_partition(rg, plan, state, beta)? / beta)
}

/// Normalized belief of every region, indexed like the region's own table
/// (first vertex fastest).
pub fn region_marginals(plan: &MessagePlan, state: &MessageState, beta: f64) -> Result<Vec<Vec<f64>>> {
    plan.region_marginals(state, beta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermoReport {
    pub beta: f64,
    /// `None` at `beta = 0`.
    pub free_energy_density: Option<f64>,
    pub energy_density: f64,
    pub entropy_density: f64,
    /// Mean `<x_i>`; `None` unless every vertex is a spin.
    pub magnetization: Option<f64>,
    pub variant: Variant,
    pub converged: bool,
    pub residual: f64,
    pub iterations: usize,
    /// Terms whose expectation differs between containing regions.
    pub warnings: Vec<String>,
}

impl ThermoReport {
    /// One row matching [`CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            fmt_sig(self.beta),
            self.free_energy_density.map(fmt_sig).unwrap_or_default(),
            fmt_sig(self.energy_density),
            fmt_sig(self.entropy_density),
            self.magnetization.map(fmt_sig).unwrap_or_default(),
            self.converged,
            fmt_sig(self.residual),
            self.iterations
        )
    }
}

/// Twelve significant digits, fixed notation for moderate exponents and
/// scientific otherwise, trailing zeros trimmed.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Energy, entropy, magnetization and free-energy densities at `solution`.
///
/// Each energy term is averaged under the smallest region containing it;
/// the next smallest is only used for the consistency warning.
pub fn observables(
    rg: &RegionGraph,
    fg: &FactorGraph,
    plan: &MessagePlan,
    solution: &Solution,
    beta: f64,
) -> Result<ThermoReport> {
    check_shapes(rg, plan)?;
    let state = &solution.state;
    let n = fg.num_vertices() as f64;
    let marginals = plan.region_marginals(state, beta)?;
    let mut warnings = Vec::new();

    let mut energy = 0.0;
    for a in 0..fg.num_interactions() {
        let spec = fg.interaction(a);
        let values = expectations(
            rg,
            fg,
            &marginals,
            rg.interaction_regions(a),
            &spec.members,
            &spec.energy,
        )?;
        energy += pick(&values, &format!("interaction {a}"), &mut warnings);
    }
    for i in 0..fg.num_vertices() {
        let v = fg.vertex(i);
        if v.self_energy.iter().all(|&e| e == 0.0) {
            continue;
        }
        let values = expectations(rg, fg, &marginals, rg.vertex_regions(i), &[i], &v.self_energy)?;
        energy += pick(&values, &format!("vertex {i}"), &mut warnings);
    }

    let magnetization = if fg.is_binary() {
        let spins = [spin(0), spin(1)];
        let mut total = 0.0;
        for i in 0..fg.num_vertices() {
            let values = expectations(rg, fg, &marginals, rg.vertex_regions(i), &[i], &spins)?;
            total += pick(&values, &format!("spin {i}"), &mut warnings);
        }
        Some(total / n)
    } else {
        None
    };

    let log_z = log_partition(rg, plan, state, beta)?;
    let u = energy / n;
    Ok(ThermoReport {
        beta,
        free_energy_density: (beta > 0.0).then(|| -log_z / (beta * n)),
        energy_density: u,
        // s = beta (u - f), exact at any state
        entropy_density: beta * u + log_z / n,
        magnetization,
        variant: plan.variant(),
        converged: solution.converged,
        residual: state.residual,
        iterations: state.iteration,
        warnings,
    })
}

/// `u(beta) = d(beta f)/d beta` by centered differences on a sorted grid.
/// The end points are dropped; returns `(beta, u)` pairs.
pub fn energy_from_free_energy(betas: &[f64], f: &[f64]) -> Result<Vec<(f64, f64)>> {
    if betas.len() != f.len() {
        return Err(Error::Dimension {
            expected: betas.len(),
            got: f.len(),
        });
    }
    let mut out = Vec::new();
    for k in 1..betas.len().saturating_sub(1) {
        let (b0, b1) = (betas[k - 1], betas[k + 1]);
        if !(b1 > b0) {
            return Err(Error::Config("beta grid must be strictly increasing".into()));
        }
        out.push((betas[k], (b1 * f[k + 1] - b0 * f[k - 1]) / (b1 - b0)));
    }
    Ok(out)
}

fn check_shapes(rg: &RegionGraph, plan: &MessagePlan) -> Result<()> {
    if rg.num_regions() != plan.num_regions() || rg.num_edges() != plan.num_edges() {
        return Err(Error::Config(
            "message plan was built for a different region graph".into(),
        ));
    }
    Ok(())
}

/// Expectation of `values` (a table over `scope`) under the two smallest
/// regions of `regions`, smallest first. Large regions are skipped: their
/// tables dominate the cost and agree with the small ones at a fixed point.
fn expectations(
    rg: &RegionGraph,
    fg: &FactorGraph,
    marginals: &[Vec<f64>],
    regions: &[usize],
    scope: &[usize],
    values: &[f64],
) -> Result<Vec<f64>> {
    if regions.is_empty() {
        return Err(Error::Structure(format!("no region contains scope {scope:?}")));
    }
    let mut order = regions.to_vec();
    order.sort_by_key(|&r| (rg.region(r).vertices.len(), r));
    order.truncate(2);
    let mut out = Vec::with_capacity(order.len());
    let mut sub = vec![0.0; values.len()];
    for r in order {
        let region = rg.region(r);
        let positions = positions_in(&region.vertices, scope)
            .ok_or_else(|| Error::Structure(format!("region {r} does not contain scope {scope:?}")))?;
        let map = projection_map(&fg.radices(&region.vertices), &positions);
        marginalize_into(&marginals[r], &map, &mut sub);
        out.push(sub.iter().zip(values).map(|(p, v)| p * v).sum());
    }
    Ok(out)
}

fn pick(values: &[f64], what: &str, warnings: &mut Vec<String>) -> f64 {
    let first = values[0];
    let spread = values.iter().map(|v| (v - first).abs()).fold(0.0, f64::max);
    if spread > CONSISTENCY_TOL {
        warnings.push(format!("{what}: expectations differ by {spread:e} between regions"));
    }
    first
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{ActiveEdges, EngineConfig, Variant};
    use crate::lattice::{build_bethe_region_graph, build_lattice, build_region_graph_2d, LatticeSpec};
    use approx::assert_abs_diff_eq;

    fn chain() -> FactorGraph {
        FactorGraph::spin_model(&[0.2, -0.5, 0.1, 0.4], &[(0, 1, 0.7), (1, 2, -1.2), (2, 3, 0.9)]).unwrap()
    }

    // brute force over 16 states
    fn chain_exact(fg: &FactorGraph, beta: f64) -> (f64, f64, f64) {
        let mut weights = Vec::new();
        for s in 0..16usize {
            let x: Vec<usize> = (0..4).map(|i| (s >> i) & 1).collect();
            let e = fg.total_energy(&crate::Configuration::new(x)).unwrap();
            weights.push((e, (-beta * e).exp()));
        }
        let z: f64 = weights.iter().map(|w| w.1).sum();
        let u: f64 = weights.iter().map(|w| w.0 * w.1).sum::<f64>() / z;
        (-z.ln() / (beta * 4.0), u / 4.0, (z.ln() + beta * u) / 4.0)
    }

    #[test]
    fn tree_free_energy_is_exact() {
        let fg = chain();
        let rg = build_bethe_region_graph(&fg).unwrap();
        let plan = MessagePlan::new(&rg, &fg, Variant::RgbpNonRedundant, ActiveEdges::All).unwrap();
        for beta in [0.3, 1.1] {
            let config = EngineConfig {
                tol: 1e-14,
                ..Default::default()
            };
            let sol = plan.solve(beta, &config).unwrap();
            let rep = observables(&rg, &fg, &plan, &sol, beta).unwrap();
            let (f, u, s) = chain_exact(&fg, beta);
            assert_abs_diff_eq!(rep.free_energy_density.unwrap(), f, epsilon = 1e-10);
            assert_abs_diff_eq!(rep.energy_density, u, epsilon = 1e-10);
            assert_abs_diff_eq!(rep.entropy_density, s, epsilon = 1e-10);
            assert!(rep.warnings.is_empty());
        }
    }

    #[test]
    fn infinite_temperature() {
        let fg = build_lattice(&LatticeSpec::ferromagnet(2, 4)).unwrap();
        let rg = build_region_graph_2d(&fg, 4, 2).unwrap();
        let plan = MessagePlan::new(&rg, &fg, Variant::SgbpIdeal, ActiveEdges::All).unwrap();
        let sol = Solution {
            state: plan.uniform_state(),
            converged: true,
        };
        let rep = observables(&rg, &fg, &plan, &sol, 0.0).unwrap();
        assert!(rep.free_energy_density.is_none());
        assert_abs_diff_eq!(rep.energy_density, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rep.magnetization.unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rep.entropy_density, std::f64::consts::LN_2, epsilon = 1e-12);
        assert!(free_energy(&rg, &plan, &sol.state, 0.0).is_err());
        for m in region_marginals(&plan, &sol.state, 0.0).unwrap() {
            assert!(m.iter().all(|&p| (p * m.len() as f64 - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn csv_formatting() {
        assert_eq!(fmt_sig(0.5), "0.5");
        assert_eq!(fmt_sig(-2.0 / 3.0), "-0.666666666667");
        assert_eq!(fmt_sig(1234.5), "1234.5");
        assert_eq!(fmt_sig(3.2e-9), "3.2e-9");
        assert_eq!(fmt_sig(0.0), "0");
        let rep = ThermoReport {
            beta: 0.0,
            free_energy_density: None,
            energy_density: 0.0,
            entropy_density: std::f64::consts::LN_2,
            magnetization: Some(0.0),
            variant: Variant::SgbpIdeal,
            converged: true,
            residual: 0.0,
            iterations: 1,
            warnings: vec![],
        };
        assert_eq!(rep.csv_row(), "0,,0,0.69314718056,0,true,0,1");
        assert_eq!(CSV_HEADER.split(',').count(), rep.csv_row().split(',').count());
    }

    #[test]
    fn derivative_energy_on_a_quadratic() {
        // beta f = beta^2 gives u = 2 beta exactly under centered differences
        let betas: Vec<f64> = (1..6).map(|k| 0.1 * k as f64).collect();
        let f: Vec<f64> = betas.to_vec();
        let u = energy_from_free_energy(&betas, &f).unwrap();
        assert_eq!(u.len(), 3);
        for (b, v) in u {
            assert_abs_diff_eq!(v, 2.0 * b, epsilon = 1e-12);
        }
        assert!(energy_from_free_energy(&[0.1, 0.2], &[1.0]).is_err());
    }
}
