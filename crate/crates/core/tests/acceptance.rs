//! Acceptance gate. Every criterion is its own test and writes one
//! `ACCEPTANCE PASS|FAIL <criterion>: <detail>` line to stderr, outside the
//! harness capture, so the verdicts show up in a plain `cargo test` log.

use std::io::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgbp_core::lattice::{build_bethe_region_graph, build_region_graph_2d, build_region_graph_3d};
use sgbp_core::oracles::{enumerate_with, onsager, onsager_beta_c, DEFAULT_CAP};
use sgbp_core::stability::{ea3d_sweep, find_beta_c, BetaCOptions};
use sgbp_core::thermo::{free_energy, observables};
use sgbp_core::{
    build_lattice, ActiveEdges, EngineConfig, FactorGraph, Init, LatticeSpec, MessagePlan, MessageState, RegionGraph,
    Schedule, Solution, Variant,
};

fn verdict(criterion: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "ACCEPTANCE {tag} {criterion}: {detail}");
    assert!(pass, "{criterion}: {detail}");
}

fn note(line: &str) {
    let _ = writeln!(std::io::stderr(), "    {line}");
}

/// Fixed-point hygiene applied to every converged state: consistency on the
/// active edges below `10 * tol`, normalized messages, and at zero field the
/// sweep commuting with the global flip.
fn audit(plan: &MessagePlan, state: &MessageState, beta: f64, tol: f64) -> Result<(), String> {
    let residuals = plan.consistency_residuals(state, beta).map_err(|e| e.to_string())?;
    let worst = plan.active_edges().iter().map(|&e| residuals[e]).fold(0.0, f64::max);
    if worst >= 10.0 * tol {
        return Err(format!("consistency residual {worst:e} at beta {beta}"));
    }
    if !state.is_normalized(1e-12) {
        return Err(format!("messages not normalized at beta {beta}"));
    }
    if plan.has_zero_field() && plan.is_binary() {
        let config = EngineConfig {
            damping: 1.0,
            schedule: Schedule::Jacobi,
            ..EngineConfig::default()
        };
        let a = plan
            .sweep(&state.spin_flipped(), beta, &config)
            .map_err(|e| e.to_string())?;
        let b = plan
            .sweep(state, beta, &config)
            .map_err(|e| e.to_string())?
            .spin_flipped();
        let d = a.distance(&b, plan.active_edges());
        if d > 1e-12 {
            return Err(format!("flip equivariance off by {d:e} at beta {beta}"));
        }
    }
    Ok(())
}

fn square(spec: &LatticeSpec, n: usize) -> (FactorGraph, RegionGraph) {
    let fg = build_lattice(spec).unwrap();
    let rg = build_region_graph_2d(&fg, spec.side_length, n).unwrap();
    (fg, rg)
}

fn bethe(spec: &LatticeSpec) -> (FactorGraph, RegionGraph) {
    let fg = build_lattice(spec).unwrap();
    let rg = build_bethe_region_graph(&fg).unwrap();
    (fg, rg)
}

#[test]
fn structural_identities() {
    let mut cases: Vec<(String, FactorGraph, RegionGraph)> = Vec::new();
    for l in [4, 6, 8] {
        let (fg, rg) = square(&LatticeSpec::ferromagnet(2, l), 2);
        cases.push((format!("2d n=2 L={l}"), fg, rg));
    }
    let (fg, rg) = square(&LatticeSpec::ferromagnet(2, 8), 4);
    cases.push(("2d n=4 L=8".into(), fg, rg));
    let fg = build_lattice(&LatticeSpec::ferromagnet(3, 4)).unwrap();
    let rg = build_region_graph_3d(&fg, 4).unwrap();
    cases.push(("3d n=2 L=4".into(), fg, rg));

    let mut failures = Vec::new();
    for (name, fg, rg) in &cases {
        let report = rg.validate(fg);
        let bad_sums = report
            .vertices
            .iter()
            .chain(&report.interactions)
            .filter(|c| c.sum != 1)
            .count();
        if bad_sums > 0 {
            failures.push(format!("{name}: {bad_sums} counting-number sums differ from 1"));
        }
        match rg.check_edge_identities() {
            Ok(ids) => {
                let nonzero = ids.edges.iter().filter(|c| c.gbp_sum != 0 || c.sgbp_sum != 0).count();
                if nonzero > 0 || !ids.ideal {
                    failures.push(format!("{name}: {nonzero} edges with a nonzero receiver sum"));
                }
            }
            Err(e) => failures.push(format!("{name}: {e}")),
        }
        note(&format!(
            "{name}: {} regions, {} edges",
            rg.num_regions(),
            rg.num_edges()
        ));
    }
    verdict(
        "structural identities",
        failures.is_empty(),
        &if failures.is_empty() {
            format!("{} region graphs, all sums exact", cases.len())
        } else {
            failures.join("; ")
        },
    );
}

/// Parent of vertex `i > 0` drawn uniformly below it.
fn random_tree(n: usize, rng: &mut ChaCha8Rng, chain: bool) -> FactorGraph {
    let fields: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let couplings: Vec<(usize, usize, f64)> = (1..n)
        .map(|i| {
            let p = if chain { i - 1 } else { rng.random_range(0..i) };
            (p, i, rng.random_range(-1.5..1.5))
        })
        .collect();
    FactorGraph::spin_model(&fields, &couplings).unwrap()
}

#[test]
fn tree_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst_f: f64 = 0.0;
    let mut worst_m: f64 = 0.0;
    let mut cases = 0;
    let mut failures = Vec::new();
    let sizes = [2usize, 3, 5, 8, 13, 20];
    for (k, &n) in sizes.iter().chain(&sizes).enumerate() {
        let chain = k < sizes.len();
        let fg = random_tree(n, &mut rng, chain);
        let rg = build_bethe_region_graph(&fg).unwrap();
        let plan = MessagePlan::new(&rg, &fg, Variant::RgbpNonRedundant, ActiveEdges::All).unwrap();
        let scopes: Vec<Vec<usize>> = rg.regions().iter().map(|r| r.vertices.clone()).collect();
        for beta in [0.4, 1.3] {
            cases += 1;
            let config = EngineConfig {
                damping: 1.0,
                tol: 1e-15,
                max_iters: 500,
                ..EngineConfig::default()
            };
            let sol = plan.solve(beta, &config).unwrap();
            if !sol.converged {
                failures.push(format!("n={n} beta={beta}: no convergence"));
                continue;
            }
            if let Err(e) = audit(&plan, &sol.state, beta, config.tol.max(1e-13)) {
                failures.push(e);
            }
            let (exact, marginals) = enumerate_with(&fg, beta, DEFAULT_CAP, &scopes).unwrap();
            let f = free_energy(&rg, &plan, &sol.state, beta).unwrap();
            worst_f = worst_f.max((f + exact.log_z / beta).abs());
            let beliefs = plan.region_marginals(&sol.state, beta).unwrap();
            for (b, m) in beliefs.iter().zip(&marginals) {
                for (x, y) in b.iter().zip(m) {
                    worst_m = worst_m.max((x - y).abs());
                }
            }
        }
    }
    let pass = failures.is_empty() && worst_f < 1e-10 && worst_m < 1e-10;
    verdict(
        "tree exactness",
        pass,
        &format!(
            "{cases} chain/tree cases up to 20 vertices, max |dF| = {worst_f:.2e}, max |d marginal| = {worst_m:.2e}{}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    );
}

#[derive(Clone, Copy)]
enum Family {
    Bethe,
    Square(usize),
    Cube,
}

fn ferro_beta_c(dim: usize, side: usize, family: Family, bracket: (f64, f64)) -> f64 {
    let spec = LatticeSpec::ferromagnet(dim, side);
    let fg = build_lattice(&spec).unwrap();
    let (rg, variant) = match family {
        Family::Bethe => (build_bethe_region_graph(&fg).unwrap(), Variant::GbpFull),
        Family::Square(n) => (build_region_graph_2d(&fg, side, n).unwrap(), Variant::SgbpIdeal),
        Family::Cube => (build_region_graph_3d(&fg, side).unwrap(), Variant::SgbpIdeal),
    };
    let plan = MessagePlan::new(&rg, &fg, variant, ActiveEdges::All).unwrap();
    let options = BetaCOptions::with_bracket(bracket.0, bracket.1);
    find_beta_c(&rg, &fg, &plan, &options).unwrap().beta_c
}

#[test]
fn square_lattice_thresholds() {
    let exact = onsager_beta_c();
    note(&format!("exact critical point {exact:.6}"));
    let targets = [
        ("bp", 0.3466, 5e-4, None),
        ("sgbp n=2", 0.4126, 1e-3, Some(2)),
        ("sgbp n=4", 0.429, 2e-3, Some(4)),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, target, tol, n) in targets {
        let family = n.map_or(Family::Bethe, Family::Square);
        let b16 = ferro_beta_c(2, 16, family, (0.30, 0.50));
        let b32 = ferro_beta_c(2, 32, family, (0.30, 0.50));
        let ok = (b32 - target).abs() <= tol && (b32 - b16).abs() < tol;
        note(&format!(
            "{name}: L=16 {b16:.6}, L=32 {b32:.6}, target {target} +/- {tol}"
        ));
        pass &= ok;
        parts.push(format!("{name} {b32:.5}"));
    }
    verdict("2d thresholds", pass, &parts.join(", "));
}

#[test]
fn cubic_lattice_thresholds() {
    let sgbp = ferro_beta_c(3, 8, Family::Cube, (0.15, 0.25));
    let bp = ferro_beta_c(3, 8, Family::Bethe, (0.15, 0.25));
    let pass = (sgbp - 0.2183).abs() <= 1e-3 && (bp - 0.2027).abs() <= 5e-4;
    verdict(
        "3d thresholds",
        pass,
        &format!("sgbp {sgbp:.6} (target 0.2183 +/- 1e-3), bp {bp:.6} (target 0.2027 +/- 5e-4)"),
    );
}

fn ordered_solution(plan: &MessagePlan, beta: f64) -> Solution {
    let config = EngineConfig {
        damping: 0.5,
        tol: 1e-10,
        max_iters: 20000,
        init: Init::Polarized { bias: 0.5 },
        ..EngineConfig::default()
    };
    plan.solve(beta, &config).unwrap()
}

#[test]
fn square_lattice_thermodynamics() {
    let spec = LatticeSpec::ferromagnet(2, 16);
    let (fg4, rg4) = square(&spec, 4);
    let (fgb, rgb) = bethe(&spec);
    let plan4 = MessagePlan::new(&rg4, &fg4, Variant::SgbpIdeal, ActiveEdges::All).unwrap();
    let planb = MessagePlan::new(&rgb, &fgb, Variant::GbpFull, ActiveEdges::All).unwrap();
    let mut failures = Vec::new();
    let mut worst_far: f64 = 0.0;
    for k in 1..=10 {
        let beta = k as f64 / 10.0;
        let exact = onsager(beta).unwrap().free_energy_density;
        let s4 = ordered_solution(&plan4, beta);
        let sb = ordered_solution(&planb, beta);
        for (name, plan, sol) in [("sgbp", &plan4, &s4), ("bp", &planb, &sb)] {
            if !sol.converged {
                failures.push(format!("{name} not converged at beta {beta}"));
            } else if let Err(e) = audit(plan, &sol.state, beta, 1e-10) {
                failures.push(format!("{name}: {e}"));
            }
        }
        let f4 = observables(&rg4, &fg4, &plan4, &s4, beta)
            .unwrap()
            .free_energy_density
            .unwrap();
        let fb = observables(&rgb, &fgb, &planb, &sb, beta)
            .unwrap()
            .free_energy_density
            .unwrap();
        let (d4, db) = ((f4 - exact).abs(), (fb - exact).abs());
        note(&format!(
            "beta {beta:.1}: |f_sgbp - f| = {d4:.2e}, |f_bp - f| = {db:.2e}"
        ));
        if d4 >= db {
            failures.push(format!("sgbp not closer than bp at beta {beta}"));
        }
        let off_critical = beta <= 0.4 + 1e-9 || beta >= 0.6 - 1e-9;
        if off_critical {
            worst_far = worst_far.max(d4);
            if d4 >= 2e-3 {
                failures.push(format!("|f_sgbp - f| = {d4:.2e} at beta {beta}"));
            }
        }
    }
    let beta = 0.05;
    let hot = ordered_solution(&plan4, beta);
    let s = observables(&rg4, &fg4, &plan4, &hot, beta).unwrap().entropy_density;
    let ds = (s - std::f64::consts::LN_2).abs();
    let exact_s = onsager(beta).unwrap().entropy_density;
    note(&format!(
        "entropy at beta 0.05: sgbp {s:.6}, exact {exact_s:.6}, ln 2 = {:.6}",
        std::f64::consts::LN_2
    ));
    if ds >= 1e-3 {
        failures.push(format!("entropy at beta 0.05 is {ds:.2e} from ln 2"));
    }
    verdict(
        "2d thermodynamics",
        failures.is_empty(),
        &if failures.is_empty() {
            format!("sgbp beats bp on the grid, max off-critical gap {worst_far:.2e}, entropy gap {ds:.2e}")
        } else {
            failures.join("; ")
        },
    );
}

#[test]
fn redundancy_drop() {
    let spec = LatticeSpec::edwards_anderson(2, 16, 4242);
    let (fg, rg) = square(&spec, 2);
    let all = MessagePlan::new(&rg, &fg, Variant::SgbpIdeal, ActiveEdges::All).unwrap();
    let dropped = MessagePlan::new(&rg, &fg, Variant::SgbpIdeal, ActiveEdges::DroppedRedundant).unwrap();
    let mut failures = Vec::new();

    // all edges, undamped, infinite temperature
    let undamped = EngineConfig {
        damping: 1.0,
        ..EngineConfig::default()
    };
    let mut state = all.initial_state(&Init::Random { seed: 1 }).unwrap();
    let mut residuals = Vec::with_capacity(50);
    for _ in 0..50 {
        state = all.sweep(&state, 0.0, &undamped).unwrap();
        residuals.push(state.residual);
    }
    let uniform = all.uniform_state();
    let drift = state.distance(&uniform, all.active_edges());
    let grows = residuals[49] > residuals[0];
    note(&format!(
        "all edges: residual {:.3e} after 1 sweep, {:.3e} after 50, distance from uniform {drift:.3e}",
        residuals[0], residuals[49]
    ));
    if !grows {
        failures.push("all-edge residual does not grow over 50 sweeps".into());
    }

    let config = EngineConfig {
        damping: 0.5,
        tol: 1e-13,
        max_iters: 20000,
        init: Init::Random { seed: 1 },
        ..EngineConfig::default()
    };
    let sol = dropped.solve(0.0, &config).unwrap();
    // messages are fixed only up to belief-invisible shifts, so uniformity
    // is judged on the region beliefs
    let beliefs = dropped.region_marginals(&sol.state, 0.0).unwrap();
    let off_uniform = beliefs
        .iter()
        .flat_map(|t| t.iter().map(move |p| (p - 1.0 / t.len() as f64).abs()))
        .fold(0.0, f64::max);
    note(&format!(
        "dropped set ({} of {} edges inactive): residual {:.2e} after {} sweeps, beliefs within {off_uniform:.2e} of uniform",
        dropped.inactive_edges().len(),
        rg.num_edges(),
        sol.state.residual,
        sol.state.iteration
    ));
    if !(sol.converged && sol.state.residual < 1e-12 && off_uniform < 1e-10) {
        failures.push("dropped set does not relax to uniform".into());
    }

    let warm = EngineConfig {
        tol: 1e-12,
        init: Init::Uniform,
        ..config.clone()
    };
    let sol = dropped.solve(0.3, &warm).unwrap();
    let residuals = dropped.consistency_residuals(&sol.state, 0.3).unwrap();
    let worst = dropped
        .inactive_edges()
        .iter()
        .map(|&e| residuals[e])
        .fold(0.0, f64::max);
    note(&format!(
        "beta 0.3: converged {}, dropped-edge consistency {worst:.2e}",
        sol.converged
    ));
    if !sol.converged {
        failures.push("no fixed point at beta 0.3".into());
    } else {
        if let Err(e) = audit(&dropped, &sol.state, 0.3, warm.tol) {
            failures.push(e);
        }
        if worst >= 1e-8 {
            failures.push(format!("dropped-edge consistency {worst:.2e}"));
        }
    }
    verdict(
        "redundancy drop",
        failures.is_empty(),
        &if failures.is_empty() {
            format!("all-edge drift {drift:.2e}, dropped set uniform, dropped-edge consistency {worst:.2e}")
        } else {
            failures.join("; ")
        },
    );
}

#[test]
fn fixed_point_consistency_suite() {
    let mut checked = 0;
    let mut failures = Vec::new();
    let mut run = |name: &str, fg: &FactorGraph, rg: &RegionGraph, active: ActiveEdges, betas: &[f64], init: Init| {
        let plan = MessagePlan::new(rg, fg, Variant::SgbpIdeal, active).unwrap();
        for &beta in betas {
            let config = EngineConfig {
                damping: 0.5,
                tol: 1e-11,
                max_iters: 20000,
                init: init.clone(),
                ..EngineConfig::default()
            };
            let sol = plan.solve(beta, &config).unwrap();
            if !sol.converged {
                continue;
            }
            checked += 1;
            if let Err(e) = audit(&plan, &sol.state, beta, config.tol) {
                failures.push(format!("{name}: {e}"));
            }
        }
    };
    let (fg, rg) = square(&LatticeSpec::ferromagnet(2, 8), 2);
    run(
        "2d ferro n=2",
        &fg,
        &rg,
        ActiveEdges::All,
        &[0.2, 0.4, 0.7],
        Init::Polarized { bias: 0.5 },
    );
    let (fg, rg) = square(&LatticeSpec::ferromagnet(2, 8), 4);
    run(
        "2d ferro n=4",
        &fg,
        &rg,
        ActiveEdges::All,
        &[0.3, 0.5],
        Init::Polarized { bias: 0.5 },
    );
    let (fg, rg) = square(&LatticeSpec::edwards_anderson(2, 8, 77), 2);
    run(
        "2d ea dropped",
        &fg,
        &rg,
        ActiveEdges::DroppedRedundant,
        &[0.2, 0.4],
        Init::Random { seed: 3 },
    );
    let fg = build_lattice(&LatticeSpec::ferromagnet(3, 4)).unwrap();
    let rg = build_region_graph_3d(&fg, 4).unwrap();
    run(
        "3d ferro",
        &fg,
        &rg,
        ActiveEdges::All,
        &[0.1, 0.2, 0.35],
        Init::Polarized { bias: 0.5 },
    );
    let spec = LatticeSpec {
        field: 0.3,
        ..LatticeSpec::ferromagnet(2, 6)
    };
    let (fg, rg) = square(&spec, 2);
    run("2d field", &fg, &rg, ActiveEdges::All, &[0.3, 0.6], Init::Uniform);
    let pass = failures.is_empty() && checked >= 10;
    verdict(
        "fixed-point consistency",
        pass,
        &if failures.is_empty() {
            format!("{checked} converged states: consistent, normalized, flip-equivariant")
        } else {
            failures.join("; ")
        },
    );
}

#[test]
fn ea3d_disorder_sweep() {
    let sides = [4, 6, 8];
    let report = ea3d_sweep(&sides, 32, 2024, &BetaCOptions::disordered(), &|_, _, _| {}).unwrap();
    for s in &report.sweeps {
        note(&format!(
            "L={}: mean {:.4} +/- {:.4} over {} instances",
            s.side,
            s.mean,
            s.stderr,
            s.successes().len()
        ));
    }
    for (side, seed, reason) in &report.excluded {
        note(&format!("excluded L={side} seed={seed}: {reason}"));
    }
    let decreasing = report.sweeps.windows(2).all(|w| w[1].mean < w[0].mean);
    let fit = report.fit.expect("three sides fit a line");
    let pass = decreasing
        && (0.455..=0.555).contains(&fit.intercept)
        && (0.9..=1.5).contains(&fit.slope)
        && report.excluded.is_empty();
    verdict(
        "3d ea sweep",
        pass,
        &format!(
            "means {}, fit {:.4} + {:.4}/L, decreasing {decreasing}, {} excluded",
            report
                .sweeps
                .iter()
                .map(|s| format!("{:.4}", s.mean))
                .collect::<Vec<_>>()
                .join(" > "),
            fit.intercept,
            fit.slope,
            report.excluded.len()
        ),
    );
}
