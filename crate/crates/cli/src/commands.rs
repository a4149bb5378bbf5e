use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use sgbp_core::checkpoint::{write_checkpoint, CheckpointHeader};
use sgbp_core::instance::write_instance;
use sgbp_core::lattice::RNG_ALGORITHM;
use sgbp_core::oracles::{enumerate, onsager};
use sgbp_core::stability::{ea3d_sweep, find_beta_c, BetaCOptions, StabilityResult};
use sgbp_core::thermo::{fmt_sig, observables, ThermoReport, CSV_HEADER};
use sgbp_core::{
    build_lattice, ActiveEdges, CouplingKind, EngineConfig, Error, FactorGraph, LatticeSpec, MessagePlan, RegionFamily,
    RegionGraph, RegionLayout, Variant,
};

use crate::options::{init_label, Ea3dArgs, OracleArgs, OracleMethod, StabilityArgs, SweepArgs, ValidateArgs};

pub enum Outcome {
    Success,
    /// The command ran but a check it reports on did not hold.
    CheckFailed,
}

type Result<T> = std::result::Result<T, Error>;

/// `#` lines echoing everything needed to regenerate the file.
fn header(lines: &[(&str, String)]) -> String {
    let mut out = format!("# sgbp {}\n", env!("CARGO_PKG_VERSION"));
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let _ = writeln!(out, "# command: sgbp {}", argv.join(" "));
    for (k, v) in lines {
        let _ = writeln!(out, "# {k}: {v}");
    }
    out
}

fn engine_line(config: &EngineConfig) -> String {
    format!(
        "variant={} damping={} tol={:e} max_iters={} schedule={} active_edges={} init={}",
        config.variant,
        config.damping,
        config.tol,
        config.max_iters,
        config.schedule,
        config.active_edges,
        init_label(&config.init)
    )
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn is_plain_ferro_2d(spec: &LatticeSpec) -> bool {
    spec.dim == 2 && spec.coupling_kind == CouplingKind::Ferromagnet && spec.field == 0.0
}

fn default_layouts(spec: &LatticeSpec) -> Vec<RegionLayout> {
    if spec.dim == 2 {
        vec![
            RegionLayout::bethe(),
            RegionLayout::square_2d(2),
            RegionLayout::square_2d(4),
        ]
    } else {
        vec![RegionLayout::bethe(), RegionLayout::cube_3d()]
    }
}

/// The Bethe graph is non-redundant and runs the region-graph BP equations.
fn variant_for(layout: &RegionLayout, requested: Variant) -> Variant {
    if layout.family == RegionFamily::Bethe {
        Variant::RgbpNonRedundant
    } else {
        requested
    }
}

struct SweepRow {
    report: Option<ThermoReport>,
    error: Option<String>,
}

pub fn sweep(args: &SweepArgs) -> Result<Outcome> {
    let spec = &args.lattice;
    let config = args.engine.config(spec);
    config.validate()?;
    let fg = build_lattice(spec)?;
    let layouts = if args.regions.is_empty() {
        default_layouts(spec)
    } else {
        args.regions.clone()
    };
    let betas = args.beta.values();
    let oracle = is_plain_ferro_2d(spec);
    if let Some(path) = &args.save_instance {
        emit(Some(path), &write_instance(spec, &fg))?;
    }
    if let Some(dir) = &args.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    }

    let mut out = header(&[
        ("lattice", spec.to_string()),
        ("rng", RNG_ALGORITHM.to_string()),
        (
            "regions",
            layouts.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("; "),
        ),
        ("engine", engine_line(&config)),
        ("beta", args.beta.to_string()),
    ]);
    out.push_str(CSV_HEADER);
    out.push_str(",variant,regions");
    if oracle {
        out.push_str(",f_exact,u_exact,s_exact,m_exact,df");
    }
    out.push('\n');

    let mut failures = 0;
    for layout in &layouts {
        let rg = layout.build(&fg, spec)?;
        let variant = variant_for(layout, config.variant);
        let plan = MessagePlan::new(&rg, &fg, variant, config.active_edges)?;
        let rows: Vec<SweepRow> = betas
            .par_iter()
            .map(|&beta| solve_point(&rg, &fg, &plan, &config, beta, layout, args.checkpoint_dir.as_deref()))
            .collect();
        for (&beta, row) in betas.iter().zip(rows) {
            match &row.report {
                Some(r) => out.push_str(&r.csv_row()),
                None => {
                    failures += 1;
                    eprintln!("beta {beta} on {layout}: {}", row.error.as_deref().unwrap_or("failed"));
                    let _ = write!(out, "{},,,,,false,,0", fmt_sig(beta));
                }
            }
            let _ = write!(out, ",{variant},{}", layout.label());
            if oracle {
                match (onsager(beta), &row.report) {
                    (Ok(x), report) => {
                        let df = report
                            .as_ref()
                            .and_then(|r| r.free_energy_density)
                            .map(|f| fmt_sig(f - x.free_energy_density))
                            .unwrap_or_default();
                        let _ = write!(
                            out,
                            ",{},{},{},{},{df}",
                            fmt_sig(x.free_energy_density),
                            fmt_sig(x.energy_density),
                            fmt_sig(x.entropy_density),
                            fmt_sig(x.magnetization)
                        );
                    }
                    (Err(_), _) => out.push_str(",,,,,"),
                }
            }
            out.push('\n');
        }
    }
    if failures > 0 {
        eprintln!("{failures} grid points failed; their rows are flagged converged=false");
    }
    emit(args.output.as_deref(), &out)?;
    Ok(Outcome::Success)
}

fn solve_point(
    rg: &RegionGraph,
    fg: &FactorGraph,
    plan: &MessagePlan,
    config: &EngineConfig,
    beta: f64,
    layout: &RegionLayout,
    checkpoints: Option<&Path>,
) -> SweepRow {
    let run = || -> Result<ThermoReport> {
        let sol = plan.solve(beta, config)?;
        if let (Some(dir), true) = (checkpoints, sol.converged) {
            let header = CheckpointHeader {
                variant: plan.variant(),
                beta,
                damping: config.damping,
                iteration: sol.state.iteration,
                residual: sol.state.residual,
            };
            let path = dir.join(format!("{}_beta{}.ckpt", layout.label(), fmt_sig(beta)));
            emit(Some(&path), &write_checkpoint(rg, &header, &sol.state)?)?;
        }
        observables(rg, fg, plan, &sol, beta)
    };
    match run() {
        Ok(report) => SweepRow {
            report: Some(report),
            error: None,
        },
        Err(e) => SweepRow {
            report: None,
            error: Some(e.to_string()),
        },
    }
}

fn stability_options(spec: &LatticeSpec, bracket: Option<(f64, f64)>) -> BetaCOptions {
    let mut options = match (spec.dim, spec.coupling_kind) {
        (3, CouplingKind::PlusMinusJ) => BetaCOptions::disordered(),
        (3, CouplingKind::Ferromagnet) => BetaCOptions::with_bracket(0.15, 0.25),
        _ => BetaCOptions::default(),
    };
    if let Some(b) = bracket {
        options.bracket = b;
    }
    options
}

fn curve_csv(result: &StabilityResult) -> String {
    let mut out = String::from(
        "beta,rho,eigenvalue_re,eigenvalue_im,sector,max_modulus,spectral_converged,fixed_point_iters,status\n",
    );
    let mut rows: Vec<(f64, String)> = result
        .curve
        .iter()
        .map(|s| {
            let status = if s.rho < 1.0 { "stable" } else { "unstable" };
            let row = format!(
                "{},{},{},{},{:?},{},{},{},{status}\n",
                fmt_sig(s.beta),
                fmt_sig(s.rho),
                fmt_sig(s.eigenvalue.re),
                fmt_sig(s.eigenvalue.im),
                s.sector,
                fmt_sig(s.max_modulus),
                s.spectral_converged,
                s.fixed_point_iterations
            );
            (s.beta, row.to_lowercase())
        })
        .chain(
            result
                .lost
                .iter()
                .map(|&b| (b, format!("{},,,,,,,,lost\n", fmt_sig(b)))),
        )
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    rows.into_iter().for_each(|(_, r)| out.push_str(&r));
    out
}

pub fn stability(args: &StabilityArgs) -> Result<Outcome> {
    let spec = &args.lattice;
    let fg = build_lattice(spec)?;
    let rg = args.regions.build(&fg, spec)?;
    let variant = if args.regions.family == RegionFamily::Bethe {
        Variant::GbpFull
    } else {
        Variant::SgbpIdeal
    };
    let plan = MessagePlan::new(&rg, &fg, variant, ActiveEdges::All)?;
    let mut options = stability_options(spec, args.bracket);
    if let Some(t) = args.rho_tol {
        options.rho_tol = t;
    }
    if let Some(t) = args.interval_tol {
        options.interval_tol = t;
    }
    let result = find_beta_c(&rg, &fg, &plan, &options)?;
    let mut out = header(&[
        ("lattice", spec.to_string()),
        ("rng", RNG_ALGORITHM.to_string()),
        ("regions", args.regions.to_string()),
        ("variant", variant.to_string()),
        (
            "search",
            format!(
                "bracket={}:{} rho_tol={} interval_tol={} perturbation={} spectral_tol={} krylov_dim={}",
                options.bracket.0,
                options.bracket.1,
                options.rho_tol,
                options.interval_tol,
                result.perturbation,
                result.spectral_tol,
                options.spectral.krylov_dim
            ),
        ),
    ]);
    out.push_str(&curve_csv(&result));
    let _ = writeln!(out, "# beta_c: {}", fmt_sig(result.beta_c));
    let _ = writeln!(
        out,
        "# final bracket: {}:{}",
        fmt_sig(result.bracket.0),
        fmt_sig(result.bracket.1)
    );
    let _ = writeln!(out, "# gauge dimension: {}", result.gauge_dim);
    emit(args.output.as_deref(), &out)?;
    Ok(Outcome::Success)
}

pub fn ea3d(args: &Ea3dArgs) -> Result<Outcome> {
    if args.sides.is_empty() || args.instances == 0 {
        return Err(Error::Config("need at least one side and one instance".into()));
    }
    let mut options = BetaCOptions::disordered();
    if let Some(b) = args.bracket {
        options.bracket = b;
    }
    if let Some(t) = args.rho_tol {
        options.rho_tol = t;
    }
    let progress = |side: usize, seed: u64, r: &Result<StabilityResult>| match r {
        Ok(r) => eprintln!("L={side} seed={seed} beta_c={}", fmt_sig(r.beta_c)),
        Err(e) => eprintln!("L={side} seed={seed} failed: {e}"),
    };
    let report = ea3d_sweep(&args.sides, args.instances, args.seed, &options, &progress)?;
    let mut out = header(&[
        ("model", "dim=3,model=ea,regions=family=3d,n=2".into()),
        ("rng", RNG_ALGORITHM.to_string()),
        (
            "sweep",
            format!(
                "sides={:?} instances={} seed={} bracket={}:{} rho_tol={} interval_tol={}",
                args.sides,
                args.instances,
                args.seed,
                options.bracket.0,
                options.bracket.1,
                options.rho_tol,
                options.interval_tol
            ),
        ),
    ]);
    out.push_str("L,instance_seed,beta_c,rho_tol,converged\n");
    for s in &report.sweeps {
        for (seed, b) in s.seeds.iter().zip(&s.beta_c) {
            let _ = writeln!(
                out,
                "{},{seed},{},{},{}",
                s.side,
                b.map(fmt_sig).unwrap_or_default(),
                options.rho_tol,
                b.is_some()
            );
        }
    }
    for s in &report.sweeps {
        let _ = writeln!(
            out,
            "# L={} mean={} stderr={} ok={}/{}",
            s.side,
            fmt_sig(s.mean),
            fmt_sig(s.stderr),
            s.successes().len(),
            s.instances
        );
    }
    match &report.fit {
        Some(fit) => {
            let _ = writeln!(
                out,
                "# fit beta_c = a + b/L: a={} (+/- {}) b={} (+/- {})",
                fmt_sig(fit.intercept),
                fmt_sig(fit.intercept_stderr),
                fmt_sig(fit.slope),
                fmt_sig(fit.slope_stderr)
            );
        }
        None => out.push_str("# fit: needs two sides with a finite mean\n"),
    }
    for (side, seed, reason) in &report.excluded {
        let _ = writeln!(out, "# excluded L={side} seed={seed}: {reason}");
    }
    emit(args.output.as_deref(), &out)?;
    Ok(Outcome::Success)
}

pub fn validate(args: &ValidateArgs) -> Result<Outcome> {
    let spec = &args.lattice;
    let fg = build_lattice(spec)?;
    let rg = args.regions.build(&fg, spec)?;
    if let Some(path) = &args.dump {
        emit(Some(path), &rg.dump())?;
    }
    let report = rg.validate(&fg);
    let mut out = header(&[("lattice", spec.to_string()), ("regions", args.regions.to_string())]);
    let _ = writeln!(out, "regions {} edges {}", rg.num_regions(), rg.num_edges());
    let mut pass = true;
    for (name, checks) in [("vertex", &report.vertices), ("interaction", &report.interactions)] {
        let bad_sum: Vec<usize> = checks.iter().filter(|c| c.sum != 1).map(|c| c.id).collect();
        let split: Vec<usize> = checks.iter().filter(|c| !c.connected).map(|c| c.id).collect();
        pass &= bad_sum.is_empty() && split.is_empty();
        let _ = writeln!(
            out,
            "{name} counting-number sums: {} of {} equal 1{}",
            checks.len() - bad_sum.len(),
            checks.len(),
            if bad_sum.is_empty() {
                String::new()
            } else {
                format!(" (failing: {bad_sum:?})")
            }
        );
        let _ = writeln!(
            out,
            "{name} region sets connected: {} of {}",
            checks.len() - split.len(),
            checks.len()
        );
    }
    match rg.check_edge_identities() {
        Ok(ids) => {
            let non_ideal = ids.edges.iter().filter(|c| !c.ideal).count();
            let _ = writeln!(out, "edge receiver sums (full): 0 on all {} edges", ids.edges.len());
            let _ = writeln!(
                out,
                "edge receiver sums (simplified): 0 on {} of {} edges",
                ids.edges.len() - non_ideal,
                ids.edges.len()
            );
            let _ = writeln!(out, "ideal: {}", ids.ideal);
        }
        Err(e) => {
            pass = false;
            let _ = writeln!(out, "edge receiver sums: {e}");
        }
    }
    match rg.redundancy_class() {
        sgbp_core::region_graph::RedundancyClass::NonRedundant => out.push_str("redundancy: non-redundant\n"),
        sgbp_core::region_graph::RedundancyClass::Redundant { vertex, .. } => {
            let _ = writeln!(out, "redundancy: redundant (first at vertex {vertex})");
        }
    }
    let dropped = sgbp_core::select_dropped_edges(&rg);
    let _ = writeln!(out, "droppable edges: {}", dropped.len());
    let _ = writeln!(out, "verdict: {}", if pass { "pass" } else { "fail" });
    print!("{out}");
    Ok(if pass { Outcome::Success } else { Outcome::CheckFailed })
}

pub fn oracle(args: &OracleArgs) -> Result<Outcome> {
    let spec = &args.lattice;
    let mut out = header(&[
        ("lattice", spec.to_string()),
        ("rng", RNG_ALGORITHM.to_string()),
        ("method", format!("{:?}", args.method).to_lowercase()),
        ("beta", args.beta.to_string()),
    ]);
    out.push_str(CSV_HEADER);
    out.push('\n');
    match args.method {
        OracleMethod::Enumerate => {
            let fg = build_lattice(spec)?;
            for beta in args.beta.values() {
                out.push_str(&enumerate(&fg, beta)?.csv_row());
                out.push('\n');
            }
        }
        OracleMethod::Onsager => {
            if !is_plain_ferro_2d(spec) {
                return Err(Error::Precondition(
                    "the closed form covers the zero-field square ferromagnet only".into(),
                ));
            }
            for beta in args.beta.values() {
                let x = onsager(beta)?;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},true,0,0",
                    fmt_sig(beta),
                    fmt_sig(x.free_energy_density),
                    fmt_sig(x.energy_density),
                    fmt_sig(x.entropy_density),
                    fmt_sig(x.magnetization)
                );
            }
        }
    }
    emit(args.output.as_deref(), &out)?;
    Ok(Outcome::Success)
}
