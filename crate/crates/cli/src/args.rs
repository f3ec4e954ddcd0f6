use std::path::PathBuf;

use adtool_core::lumpify::Objective;
use adtool_core::modes::Mode;
use adtool_core::DEFAULT_SINGULAR_TOL;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "adtool", version, about = "Forward, reverse and inverse derivative modes for straight-line programs")]
pub struct Cli {
    /// Emit JSON (the default for everything except convergence tables).
    #[arg(long, global = true, conflicts_with = "csv")]
    pub json: bool,
    /// Emit CSV.
    #[arg(long, global = true)]
    pub csv: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the program.
    Eval(EvalArgs),
    /// Tangent: J·v.
    Jvp(ModeArgs),
    /// Cotangent: Jᵀ·v.
    Vjp(ModeArgs),
    /// Starred tangent: J⁻¹·v.
    #[command(name = "jvp-inv")]
    JvpInv(ModeArgs),
    /// Starred cotangent: J⁻ᵀ·v.
    #[command(name = "vjp-inv")]
    VjpInv(ModeArgs),
    /// Schedule a graph into constant-width lumps.
    Lump(LumpArgs),
    /// Solve f(x) = 0 with Newton's method.
    Newton(NewtonArgs),
    /// Integrate dx/dt = g(x) with explicit Euler, optionally with derivatives.
    Ode(OdeArgs),
    /// Compare every mode with the dense oracle and run the invariant suite.
    Check(CheckArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Eval(_) => "eval",
            Command::Jvp(_) => "jvp",
            Command::Vjp(_) => "vjp",
            Command::JvpInv(_) => "jvp-inv",
            Command::VjpInv(_) => "vjp-inv",
            Command::Lump(_) => "lump",
            Command::Newton(_) => "newton",
            Command::Ode(_) => "ode",
            Command::Check(_) => "check",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub program: PathBuf,
    /// Input values, comma separated. Traces take the full register state.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub at: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ModeArgs {
    pub program: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub at: Vec<f64>,
    /// Derivative vector, comma separated.
    #[arg(long = "vec", value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub vector: Vec<f64>,
    /// Steps with |∂φ/∂dest| at or below this are singular.
    #[arg(long, default_value_t = DEFAULT_SINGULAR_TOL)]
    pub tol: f64,
    /// Recover intermediate states by local inverses instead of a tape
    /// (`vjp` and `jvp-inv` on traces).
    #[arg(long)]
    pub tapeless: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Size,
    Width,
    Lk,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Objective {
        match o {
            ObjectiveArg::Size => Objective::Size,
            ObjectiveArg::Width => Objective::Width,
            ObjectiveArg::Lk => Objective::Lk,
        }
    }
}

#[derive(Debug, Args)]
pub struct LumpArgs {
    pub program: PathBuf,
    /// Also run the exhaustive search for this objective. Without it the
    /// search runs for `size` when the graph is small enough.
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
}

#[derive(Debug, Args)]
pub struct NewtonArgs {
    pub program: PathBuf,
    /// Starting point.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub at: Vec<f64>,
    /// Stop once ‖f(x)‖∞ is at or below this.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OdeModeArg {
    Primal,
    Jvp,
    Vjp,
    #[value(name = "jvp-inv")]
    JvpInv,
    #[value(name = "vjp-inv")]
    VjpInv,
}

impl OdeModeArg {
    pub fn mode(self) -> Option<Mode> {
        match self {
            OdeModeArg::Primal => None,
            OdeModeArg::Jvp => Some(Mode::Forward),
            OdeModeArg::Vjp => Some(Mode::Reverse),
            OdeModeArg::JvpInv => Some(Mode::ReverseInverse),
            OdeModeArg::VjpInv => Some(Mode::ForwardInverse),
        }
    }
}

#[derive(Debug, Args)]
pub struct OdeArgs {
    /// Program file for the vector field g.
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub t0: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub t1: f64,
    /// Step size; shrunk so that a whole number of steps spans [t0, t1].
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, value_enum, default_value = "primal")]
    pub mode: OdeModeArg,
    /// Derivative vector at the end (`vjp`, `jvp-inv`) or start of the flow.
    #[arg(long = "vec", value_delimiter = ',', allow_hyphen_values = true)]
    pub vector: Option<Vec<f64>>,
    /// Initial state; defaults to zeros.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub at: Option<Vec<f64>>,
    /// Take inverse steps by solving (I ± dt·J) w = v exactly.
    #[arg(long)]
    pub exact: bool,
    /// Print a convergence table over these strictly decreasing step sizes.
    #[arg(long, value_delimiter = ',')]
    pub dts: Option<Vec<f64>>,
    /// Exact value for the convergence table; Richardson extrapolation
    /// from the two finest steps is used otherwise.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub reference: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub program: PathBuf,
    /// Point to check at; sampled from [0.5, 1.5] with the seed otherwise.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub at: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, env = "ADTOOL_SEED", default_value_t = 0)]
    pub seed: u64,
}
