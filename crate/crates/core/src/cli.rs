//! Command-line front end.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::GameConfig;
use crate::dynamics::{build_w, build_z, write_matrix_market};
use crate::equilibrium::{certify, mpe, EquilibriumResult, DEFAULT_GRID_POINTS};
use crate::error::{GameError, Result};
use crate::experiment::{format_float, ExperimentSpec};
use crate::montecarlo::estimate_utilities;
use crate::solver::SolverOptions;
use crate::state_space::{Mode, PlayerSet, State, StateSpace};

#[derive(Parser, Debug)]
#[command(
    name = "invest-game",
    version,
    about = "Equilibria and simulation of a dynamic-player investment game"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the Markov perfect equilibrium of a config and write it as JSON.
    Solve(SolveArgs),
    /// Run a parameter sweep and write CSV rows.
    Sweep(SweepArgs),
    /// Estimate utilities by simulation.
    Mc(McArgs),
    /// Write the transition matrix and payoff vector in Matrix Market form.
    DumpDynamics(DumpArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Exact,
    Reduced,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Exact => Mode::Exact,
            ModeArg::Reduced => Mode::Reduced,
        }
    }
}

#[derive(Args, Debug)]
struct Common {
    /// Input JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Output file (standard output when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// State-space mode (exact for up to 20 players, reduced otherwise).
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Convergence tolerance of the fixed-point solver.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    /// Also compute best-response certificates for every (state, player).
    #[arg(long)]
    certify: bool,
    /// Grid points of the best-response search.
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the spec's number of Monte Carlo episodes.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args, Debug)]
struct McArgs {
    #[command(flatten)]
    common: Common,
    /// Equilibrium JSON written by `solve`; the MPE is computed when omitted.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Initial state as comma-separated player indices (exact mode).
    #[arg(long, conflicts_with = "others")]
    initial: Option<String>,
    /// Initial state with the focal player and this many others present.
    #[arg(long)]
    others: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[command(flatten)]
    common: Common,
    /// Player whose payoff vector is included.
    #[arg(long)]
    player: Option<usize>,
}

/// Equilibrium JSON: the result plus a readable per-state table.
#[derive(Debug, Serialize, Deserialize)]
pub struct EquilibriumDocument {
    pub scenario: String,
    #[serde(flatten)]
    pub result: EquilibriumResult,
    #[serde(default)]
    pub table: Vec<StateRow>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StateRow {
    pub ordinal: usize,
    pub state: String,
    pub investments: Vec<f64>,
    /// Utilities of the reported players, in the order of `utilities`.
    pub utilities: Vec<f64>,
}

impl EquilibriumDocument {
    pub fn new(config: &GameConfig, result: EquilibriumResult) -> Self {
        let table = match result.space {
            Some(space) => (0..space.size())
                .map(|s| StateRow {
                    ordinal: s,
                    state: space.state_unchecked(s).to_string(),
                    investments: result.policy.row(s).to_vec(),
                    utilities: result
                        .utilities
                        .iter()
                        .map(|u| u.utility.values[s])
                        .collect(),
                })
                .collect(),
            None => Vec::new(),
        };
        EquilibriumDocument {
            scenario: config.scenario.label().to_string(),
            result,
            table,
        }
    }
}

fn options(tol: Option<f64>) -> Result<SolverOptions> {
    let mut o = SolverOptions::default();
    if let Some(t) = tol {
        if t.is_nan() || t <= 0.0 {
            return Err(GameError::Domain(format!(
                "--tol must be positive, got {t}"
            )));
        }
        o.tol = t;
    }
    Ok(o)
}

fn space_for(config: &GameConfig, mode: Option<ModeArg>) -> Result<StateSpace> {
    match mode {
        Some(m) => StateSpace::for_config(config, m.into()),
        None => StateSpace::auto(config),
    }
}

fn load_config(path: &Path) -> Result<GameConfig> {
    let config = GameConfig::load(path)?;
    config.ensure_valid()?;
    Ok(config)
}

fn open_output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|source| {
            GameError::Io {
                path: path.to_path_buf(),
                source,
            }
        })?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn io_err(path: Option<&Path>) -> impl Fn(io::Error) -> GameError + '_ {
    move |source| GameError::Io {
        path: path
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("<stdout>")),
        source,
    }
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    let mut w = open_output(out)?;
    w.write_all(text.as_bytes()).map_err(io_err(out))?;
    w.flush().map_err(io_err(out))
}

fn run_solve(args: SolveArgs) -> Result<()> {
    let config = load_config(&args.common.config)?;
    let space = space_for(&config, args.common.mode)?;
    let opts = options(args.common.tol)?;
    let mut result = mpe(&config, &space, opts)?;
    if args.certify {
        result.certificates = certify(&config, &space, &result.policy, args.grid, opts)?;
    }
    let doc = EquilibriumDocument::new(&config, result);
    let mut text = serde_json::to_string_pretty(&doc).expect("equilibrium serializes");
    text.push('\n');
    write_text(args.common.out.as_deref(), &text)
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&args.common.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.episodes {
        spec.mc_episodes = n;
    }
    if let Some(m) = args.common.mode {
        spec.mode = Some(m.into());
    }
    if let Some(t) = args.common.tol {
        spec.tol = Some(t);
    }
    let experiment = spec.resolve()?;
    let result = experiment.run()?;
    let out = args.common.out.or(experiment.output);
    let mut w = open_output(out.as_deref())?;
    result.write_csv(&mut w)?;
    w.flush().map_err(io_err(out.as_deref()))
}

fn parse_initial(
    space: &StateSpace,
    initial: Option<&str>,
    others: Option<usize>,
) -> Result<State> {
    match (space, initial, others) {
        (StateSpace::Exact { .. }, Some(list), None) => {
            let indices = list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<usize>()
                        .map_err(|_| GameError::MalformedState(format!("bad player index `{s}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(State::Subset(PlayerSet::from_indices(&indices)?))
        }
        (StateSpace::Exact { .. }, None, Some(k)) => Ok(State::Subset(PlayerSet::from_indices(
            &(0..=k).collect::<Vec<_>>(),
        )?)),
        (StateSpace::Reduced { .. }, None, Some(k)) => Ok(State::Lumped {
            focal_present: true,
            others: k,
        }),
        (StateSpace::Reduced { .. }, Some(_), _) => Err(GameError::MalformedState(
            "--initial lists players; use --others in reduced mode".into(),
        )),
        (_, None, None) => Err(GameError::MalformedState(
            "an initial state is required (--initial or --others)".into(),
        )),
        _ => Err(GameError::MalformedState(
            "conflicting initial state options".into(),
        )),
    }
}

fn run_mc(args: McArgs) -> Result<()> {
    let config = load_config(&args.common.config)?;
    let opts = options(args.common.tol)?;
    let result = match &args.policy {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| GameError::Io {
                path: path.clone(),
                source,
            })?;
            let doc: EquilibriumDocument =
                serde_json::from_str(&text).map_err(|source| GameError::Json {
                    path: path.clone(),
                    source,
                })?;
            doc.result
        }
        None => {
            let space = space_for(&config, args.common.mode)?;
            mpe(&config, &space, opts)?
        }
    };
    let space = result.space.ok_or_else(|| {
        GameError::InvalidPolicy("a single-state SNE policy cannot be simulated".into())
    })?;
    let initial = parse_initial(&space, args.initial.as_deref(), args.others)?;
    let ordinal = space.ordinal(&initial)?;
    let estimate = estimate_utilities(
        &config,
        &space,
        &result.policy,
        &initial,
        args.episodes,
        args.seed,
    )?;

    let out = args.common.out.as_deref();
    let mut w = csv::Writer::from_writer(open_output(out)?);
    w.write_record([
        "player",
        "mean",
        "std_error",
        "n_episodes",
        "seed",
        "analytic",
    ])?;
    for (k, (mean, se)) in estimate.mean.iter().zip(&estimate.std_error).enumerate() {
        let analytic = result
            .utility(k)
            .map(|u| format_float(u.values[ordinal]))
            .unwrap_or_default();
        w.write_record([
            k.to_string(),
            format_float(*mean),
            format_float(*se),
            estimate.n_episodes.to_string(),
            estimate.seed.to_string(),
            analytic,
        ])?;
    }
    w.flush().map_err(io_err(out))
}

fn run_dump(args: DumpArgs) -> Result<()> {
    let config = load_config(&args.common.config)?;
    let space = space_for(&config, args.common.mode)?;
    let opts = options(args.common.tol)?;
    let result = mpe(&config, &space, opts)?;
    let w = build_w(&config, &result.policy, &space)?;
    let z = match args.player {
        Some(p) => Some((p, build_z(&config, &result.policy, &space, p)?)),
        None => None,
    };
    let out = args.common.out.as_deref();
    let mut sink = open_output(out)?;
    write_matrix_market(&w, z.as_ref().map(|(p, z)| (*p, z)), &mut sink).map_err(io_err(out))?;
    sink.flush().map_err(io_err(out))
}

/// Runs the command line `argv` (including the program name) and returns
/// the process exit code: 0 on success, 1 on runtime or file errors, 2 on
/// usage errors.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Solve(a) => run_solve(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Mc(a) => run_mc(a),
        Command::DumpDynamics(a) => run_dump(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
