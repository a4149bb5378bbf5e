use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sgbp_core::{ActiveEdges, CouplingKind, EngineConfig, Init, LatticeSpec, RegionLayout, Schedule, Variant};

#[derive(Debug, Parser)]
#[command(
    name = "sgbp",
    version,
    about = "Region-graph message passing on Ising and Edwards-Anderson lattices"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Thermodynamic observables over an inverse-temperature grid.
    Sweep(SweepArgs),
    /// Stability exponent curve and threshold of the symmetric fixed point.
    Stability(StabilityArgs),
    /// Threshold over 3D Edwards-Anderson disorder realizations with a 1/L fit.
    Ea3d(Ea3dArgs),
    /// Counting-number sums, edge identities and redundancy of a region graph.
    Validate(ValidateArgs),
    /// Exact reference values.
    Oracle(OracleArgs),
}

/// `start:stop:step` or a single value.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl BetaGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.step == 0.0 {
            return vec![self.start];
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        // rounding keeps 0.1 + 2 * 0.05 printing as 0.2
        (0..n)
            .map(|k| ((self.start + k as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }
}

impl std::fmt::Display for BetaGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.step == 0.0 {
            write!(f, "{}", self.start)
        } else {
            write!(f, "{}:{}:{}", self.start, self.stop, self.step)
        }
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.trim().parse::<f64>().map_err(|_| format!("`{s}` is not a number"))
}

pub fn parse_grid(s: &str) -> Result<BetaGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let grid = match parts.as_slice() {
        [x] => BetaGrid {
            start: parse_f64(x)?,
            stop: parse_f64(x)?,
            step: 0.0,
        },
        [a, b, c] => BetaGrid {
            start: parse_f64(a)?,
            stop: parse_f64(b)?,
            step: parse_f64(c)?,
        },
        _ => return Err(format!("expected `start:stop:step` or a single value, got `{s}`")),
    };
    if !(grid.start.is_finite() && grid.stop.is_finite() && grid.start >= 0.0) {
        return Err(format!("grid `{s}` must be finite and non-negative"));
    }
    if parts.len() == 3 && !(grid.step > 0.0 && grid.stop >= grid.start) {
        return Err(format!("grid `{s}` needs step > 0 and stop >= start"));
    }
    Ok(grid)
}

pub fn parse_bracket(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected `lo:hi`, got `{s}`"))?;
    let (lo, hi) = (parse_f64(a)?, parse_f64(b)?);
    if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
        return Err(format!("bracket `{s}` needs 0 <= lo < hi"));
    }
    Ok((lo, hi))
}

fn parse_lattice(s: &str) -> Result<LatticeSpec, String> {
    s.parse().map_err(|e: sgbp_core::Error| e.to_string())
}

fn parse_regions(s: &str) -> Result<RegionLayout, String> {
    s.parse().map_err(|e: sgbp_core::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: sgbp_core::Error| e.to_string())
}

fn parse_active(s: &str) -> Result<ActiveEdges, String> {
    s.parse().map_err(|e: sgbp_core::Error| e.to_string())
}

fn parse_schedule(s: &str) -> Result<Schedule, String> {
    s.parse().map_err(|e: sgbp_core::Error| e.to_string())
}

/// `uniform`, `random:SEED` or `polarized:BIAS`.
pub fn parse_init(s: &str) -> Result<Init, String> {
    match s.split_once(':') {
        None if s == "uniform" => Ok(Init::Uniform),
        Some(("random", seed)) => seed
            .parse()
            .map(|seed| Init::Random { seed })
            .map_err(|_| format!("bad seed `{seed}`")),
        Some(("polarized", bias)) => Ok(Init::Polarized { bias: parse_f64(bias)? }),
        _ => Err(format!("expected uniform, random:SEED or polarized:BIAS, got `{s}`")),
    }
}

pub fn init_label(init: &Init) -> String {
    match init {
        Init::Uniform => "uniform".into(),
        Init::Random { seed } => format!("random:{seed}"),
        Init::Polarized { bias } => format!("polarized:{bias}"),
        Init::Provided(_) => "provided".into(),
    }
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    /// gbp_full, rgbp_nonredundant or sgbp_ideal; Bethe graphs always use rgbp_nonredundant.
    #[arg(long, value_parser = parse_variant, default_value = "sgbp_ideal")]
    pub variant: Variant,
    /// Mixing weight of the new messages; undamped SGBP sweeps tend to oscillate.
    #[arg(long, value_parser = parse_f64, default_value = "0.5")]
    pub damping: f64,
    #[arg(long, value_parser = parse_f64, default_value = "1e-10")]
    pub tol: f64,
    #[arg(long, default_value_t = 20000)]
    pub max_iters: usize,
    /// jacobi or sequential.
    #[arg(long, value_parser = parse_schedule, default_value = "jacobi")]
    pub schedule: Schedule,
    /// all or dropped_redundant.
    #[arg(long, value_parser = parse_active, default_value = "all")]
    pub active_edges: ActiveEdges,
    /// uniform, random:SEED or polarized:BIAS [default: polarized:0.5 for ferromagnets, uniform otherwise].
    #[arg(long, value_parser = parse_init)]
    pub init: Option<Init>,
}

impl EngineArgs {
    pub fn config(&self, lattice: &LatticeSpec) -> EngineConfig {
        let ferro = lattice.coupling_kind == CouplingKind::Ferromagnet;
        EngineConfig {
            variant: self.variant,
            damping: self.damping,
            schedule: self.schedule,
            max_iters: self.max_iters,
            tol: self.tol,
            active_edges: self.active_edges,
            init: self.init.clone().unwrap_or(if ferro {
                Init::Polarized { bias: 0.5 }
            } else {
                Init::Uniform
            }),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// e.g. dim=2,L=64,model=ferro or dim=3,L=8,model=ea,seed=7
    #[arg(long, value_parser = parse_lattice)]
    pub lattice: LatticeSpec,
    /// Region graph, repeatable [default: bethe plus the square family with n=2 and n=4 in 2D, the cube family in 3D].
    #[arg(long, value_parser = parse_regions)]
    pub regions: Vec<RegionLayout>,
    /// start:stop:step or a single value.
    #[arg(long, value_parser = parse_grid)]
    pub beta: BetaGrid,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// CSV destination [default: stdout].
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Also write the coupling instance file here.
    #[arg(long)]
    pub save_instance: Option<PathBuf>,
    /// Write every converged message state as a checkpoint file into this directory.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StabilityArgs {
    #[arg(long, value_parser = parse_lattice)]
    pub lattice: LatticeSpec,
    #[arg(long, value_parser = parse_regions)]
    pub regions: RegionLayout,
    /// lo:hi [default: 0.30:0.50 in 2D, 0.15:0.25 for 3D ferromagnets, 0.4:1.0 for 3D EA].
    #[arg(long, value_parser = parse_bracket)]
    pub bracket: Option<(f64, f64)>,
    /// Stop at a sample this close to one.
    #[arg(long, value_parser = parse_f64)]
    pub rho_tol: Option<f64>,
    /// Stop once the bracket is this narrow.
    #[arg(long, value_parser = parse_f64)]
    pub interval_tol: Option<f64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct Ea3dArgs {
    /// Comma-separated lattice sides.
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 6, 8])]
    pub sides: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    pub instances: usize,
    /// Base seed; instance seeds derive from it, the side and the index.
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    #[arg(long, value_parser = parse_bracket)]
    pub bracket: Option<(f64, f64)>,
    #[arg(long, value_parser = parse_f64)]
    pub rho_tol: Option<f64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long, value_parser = parse_lattice)]
    pub lattice: LatticeSpec,
    #[arg(long, value_parser = parse_regions)]
    pub regions: RegionLayout,
    /// Also write the region graph in its text dump format.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleMethod {
    /// Exhaustive enumeration of the given lattice (at most 2^26 states).
    Enumerate,
    /// Closed-form infinite square ferromagnet.
    Onsager,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long, value_parser = parse_lattice)]
    pub lattice: LatticeSpec,
    #[arg(long, value_parser = parse_grid)]
    pub beta: BetaGrid,
    #[arg(long, value_enum, default_value = "enumerate")]
    pub method: OracleMethod,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}
