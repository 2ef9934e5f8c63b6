use clap::{Args, Parser, Subcommand, ValueEnum};
use pld_alloc::oracle::{brute_force_alloc_pld, gaussian_delta_analytic, subsampled_gaussian_delta};
use pld_alloc::pipeline::{
    allocation_bounds, poisson_bounds, BoundChoice, CurvePoint, DirectionChoice, DirectionPair, EpsilonPoint,
};
use pld_alloc::{
    run_pipeline, AdjacencyDirection, BoundDirection, DiscretePair, DiscretePld, PipelineSpec, PldError, Stage,
    TightnessParams,
};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const DEFAULT_ALPHA: f64 = 1e-3;
const DEFAULT_BETA: f64 = 1e-10;
const DEFAULT_DELTA: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "pld-alloc", version, about = "Privacy loss distribution accountant for random allocation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gaussian mechanism with sensitivity 1.
    Gaussian(Opts),
    /// Discrete mechanism read from a JSON pair file.
    Pair(Opts),
    /// Random allocation of k out of t steps.
    Allocate(Opts),
    /// Poisson subsampling with rate --sampling-rate.
    Subsample(Opts),
    /// Self-composition --compositions times.
    Compose(Opts),
    /// Arbitrary pipeline from --config stages or from the flags given.
    Curve(Opts),
    /// Random allocation against Poisson subsampling with rate k/t.
    ComparePoisson(Opts),
    /// Allocation, then subsampling, then composition over the epochs.
    Preamble(Opts),
    #[command(hide = true)]
    Oracle(Opts),
}

#[derive(Args, Clone, Default)]
struct Opts {
    /// JSON config file; flags take precedence over its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    sigma: Option<f64>,
    /// JSON file with {"p": [...], "q": [...]}.
    #[arg(long)]
    pair_file: Option<PathBuf>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    sampling_rate: Option<f64>,
    #[arg(long)]
    compositions: Option<usize>,
    /// Epochs for `preamble` when --compositions is absent.
    #[arg(long, allow_negative_numbers = true)]
    epochs: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    /// Comma-separated epsilon queries.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    epsilon: Vec<f64>,
    /// Comma-separated delta queries.
    #[arg(long, value_delimiter = ',')]
    delta: Vec<f64>,
    #[arg(long, value_enum)]
    direction: Option<DirectionArg>,
    #[arg(long, value_enum)]
    bound: Option<BoundArg>,
    #[arg(long, value_enum)]
    out: Option<OutArg>,
    #[arg(long)]
    output_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DirectionArg {
    Add,
    Remove,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BoundArg {
    Upper,
    Lower,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum OutArg {
    #[default]
    Json,
    Csv,
}

impl From<DirectionArg> for DirectionChoice {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Add => DirectionChoice::Add,
            DirectionArg::Remove => DirectionChoice::Remove,
            DirectionArg::Both => DirectionChoice::Both,
        }
    }
}

impl From<BoundArg> for BoundChoice {
    fn from(b: BoundArg) -> Self {
        match b {
            BoundArg::Upper => BoundChoice::Upper,
            BoundArg::Lower => BoundChoice::Lower,
            BoundArg::Both => BoundChoice::Both,
        }
    }
}

/// Contents of a --config file. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    sigma: Option<f64>,
    pair: Option<DiscretePair>,
    pair_file: Option<PathBuf>,
    t: Option<usize>,
    k: Option<usize>,
    sampling_rate: Option<f64>,
    compositions: Option<usize>,
    epochs: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    #[serde(default)]
    epsilon: Vec<f64>,
    #[serde(default)]
    delta: Vec<f64>,
    direction: Option<DirectionArg>,
    bound: Option<BoundArg>,
    out: Option<OutArg>,
    output_file: Option<PathBuf>,
    stages: Option<Vec<Stage>>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Pld(#[from] PldError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Pld(e) if e.is_numerical_domain() => 3,
            _ => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Flags merged over the config file.
struct Settings {
    sigma: Option<f64>,
    pair: Option<DiscretePair>,
    t: Option<usize>,
    k: Option<usize>,
    sampling_rate: Option<f64>,
    compositions: Option<usize>,
    epochs: Option<f64>,
    params: TightnessParams,
    epsilons: Vec<f64>,
    deltas: Vec<f64>,
    direction: Option<DirectionChoice>,
    bound: Option<BoundChoice>,
    out: OutArg,
    output_file: Option<PathBuf>,
    stages: Option<Vec<Stage>>,
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|source| CliError::Json { path: path.display().to_string(), source })
}

impl Settings {
    fn resolve(opts: Opts) -> CliResult<Self> {
        let file: FileConfig = match &opts.config {
            Some(p) => read_json(p)?,
            None => FileConfig::default(),
        };
        let pair = match opts.pair_file.as_ref().or(file.pair_file.as_ref()) {
            Some(p) => Some(read_json::<DiscretePair>(p)?),
            None => file.pair,
        };
        let alpha = opts.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA);
        let beta = opts.beta.or(file.beta).unwrap_or(DEFAULT_BETA);
        let pick = |flag: Vec<f64>, file: Vec<f64>| if flag.is_empty() { file } else { flag };
        Ok(Settings {
            sigma: opts.sigma.or(file.sigma),
            pair,
            t: opts.t.or(file.t),
            k: opts.k.or(file.k),
            sampling_rate: opts.sampling_rate.or(file.sampling_rate),
            compositions: opts.compositions.or(file.compositions),
            epochs: opts.epochs.or(file.epochs),
            params: TightnessParams::new(alpha, beta)?,
            epsilons: pick(opts.epsilon, file.epsilon),
            deltas: pick(opts.delta, file.delta),
            direction: opts.direction.or(file.direction).map(Into::into),
            bound: opts.bound.or(file.bound).map(Into::into),
            out: opts.out.or(file.out).unwrap_or_default(),
            output_file: opts.output_file.or(file.output_file),
            stages: file.stages,
        })
    }

    fn mechanism(&self) -> CliResult<Stage> {
        match (&self.pair, self.sigma) {
            (Some(_), Some(_)) => Err(usage("give either --sigma or --pair-file, not both")),
            (Some(pair), None) => Ok(Stage::Pair(pair.clone())),
            (None, Some(sigma)) => Ok(Stage::Gaussian { sigma }),
            (None, None) => Err(usage("a mechanism is required: --sigma or --pair-file")),
        }
    }

    fn sigma(&self) -> CliResult<f64> {
        self.sigma.ok_or_else(|| usage("--sigma is required"))
    }

    fn t(&self) -> CliResult<usize> {
        self.t.ok_or_else(|| usage("--t is required"))
    }

    fn allocate(&self) -> CliResult<Stage> {
        Ok(Stage::Allocate { t: self.t()?, k: self.k.unwrap_or(1) })
    }

    fn rate(&self) -> CliResult<f64> {
        self.sampling_rate.ok_or_else(|| usage("--sampling-rate is required"))
    }

    /// Epsilon grid used when no query was given.
    fn queries(&self) -> (Vec<f64>, Vec<f64>) {
        if self.epsilons.is_empty() && self.deltas.is_empty() {
            ((0..=50).map(|i| i as f64 / 10.0).collect(), Vec::new())
        } else {
            (self.epsilons.clone(), self.deltas.clone())
        }
    }
}

fn pipeline_stages(command: &Command, s: &Settings) -> CliResult<Vec<Stage>> {
    Ok(match command {
        Command::Gaussian(_) => vec![Stage::Gaussian { sigma: s.sigma()? }],
        Command::Pair(_) => match &s.pair {
            Some(pair) => vec![Stage::Pair(pair.clone())],
            None => return Err(usage("--pair-file is required")),
        },
        Command::Allocate(_) => vec![s.mechanism()?, s.allocate()?],
        Command::Subsample(_) => vec![s.mechanism()?, Stage::Subsample { lambda: s.rate()? }],
        Command::Compose(_) => {
            let m = s.compositions.ok_or_else(|| usage("--compositions is required"))?;
            vec![s.mechanism()?, Stage::Compose { m }]
        }
        Command::Curve(_) => {
            if let Some(stages) = &s.stages {
                return Ok(stages.clone());
            }
            let mut stages = vec![s.mechanism()?];
            if s.t.is_some() {
                stages.push(s.allocate()?);
            }
            if let Some(lambda) = s.sampling_rate {
                stages.push(Stage::Subsample { lambda });
            }
            if let Some(m) = s.compositions {
                stages.push(Stage::Compose { m });
            }
            stages
        }
        Command::Preamble(_) => {
            let q = s.rate()?;
            let m = match s.compositions {
                Some(m) => m,
                None => {
                    let epochs = s.epochs.unwrap_or(1.0);
                    if !(q > 0.0 && epochs > 0.0) {
                        return Err(usage("--sampling-rate and --epochs must be positive"));
                    }
                    (epochs / q).round().max(1.0) as usize
                }
            };
            vec![
                Stage::Gaussian { sigma: s.sigma()? },
                s.allocate()?,
                Stage::Subsample { lambda: q },
                Stage::Compose { m },
            ]
        }
        Command::ComparePoisson(_) | Command::Oracle(_) => unreachable!("not a pipeline command"),
    })
}

fn run_pipeline_command(command: &Command, s: &Settings) -> CliResult<Output> {
    let stages = pipeline_stages(command, s)?;
    let (epsilons, deltas) = s.queries();
    let spec = PipelineSpec {
        stages,
        tightness: s.params,
        epsilons,
        deltas,
        direction: s.direction.unwrap_or_default(),
        bound: s.bound.unwrap_or_default(),
    };
    let report = run_pipeline(&spec)?;
    for reason in &report.skipped {
        eprintln!("skipped: {reason}");
    }
    Ok(Output {
        json: serde_json::to_value(&report).expect("report serializes"),
        curve: report.curve,
        epsilons: report.epsilons,
    })
}

#[derive(Serialize)]
struct SchemeEpsilons {
    delta: f64,
    scheme: &'static str,
    bound: BoundDirection,
    remove: f64,
    add: f64,
    max: f64,
}

fn compare_poisson_command(s: &Settings) -> CliResult<Output> {
    let sigma = s.sigma()?;
    let t = s.t()?;
    let k = s.k.unwrap_or(1);
    let (epsilons, deltas) = if s.epsilons.is_empty() && s.deltas.is_empty() {
        (Vec::new(), vec![DEFAULT_DELTA])
    } else {
        (s.epsilons.clone(), s.deltas.clone())
    };
    let bounds = s.bound.unwrap_or(BoundChoice::Both).bounds();
    let mut schemes: Vec<(&'static str, BoundDirection, DirectionPair)> = Vec::new();
    for &b in &bounds {
        schemes.push(("allocation", b, allocation_bounds(sigma, t, k, s.params, b)?));
        schemes.push(("poisson", b, poisson_bounds(sigma, t, k, s.params, b)?));
    }

    let mut summary = Vec::new();
    let mut eps_rows = Vec::new();
    for &delta in &deltas {
        for (scheme, bound, pair) in &schemes {
            let remove = pair.remove.epsilon_for_delta(delta)?;
            let add = pair.add.epsilon_for_delta(delta)?;
            summary.push(SchemeEpsilons { delta, scheme, bound: *bound, remove, add, max: remove.max(add) });
        }
        for scheme in ["allocation", "poisson"] {
            for (label, value) in [("remove", 0), ("add", 1), ("max", 2)] {
                let pick = |b: BoundDirection| {
                    summary
                        .iter()
                        .find(|r| r.delta == delta && r.scheme == scheme && r.bound == b)
                        .map(|r| [r.remove, r.add, r.max][value])
                };
                eps_rows.push(EpsilonPoint {
                    delta,
                    epsilon_upper: pick(BoundDirection::Upper),
                    epsilon_lower: pick(BoundDirection::Lower),
                    direction: format!("{scheme}:{label}"),
                });
            }
        }
    }

    let mut curve = Vec::new();
    for &eps in &epsilons {
        for scheme in ["allocation", "poisson"] {
            for label in ["remove", "add", "max"] {
                let delta = |b: BoundDirection| {
                    schemes.iter().find(|(n, bd, _)| *n == scheme && *bd == b).map(|(_, _, p)| match label {
                        "remove" => p.remove.hockey_stick_delta(eps),
                        "add" => p.add.hockey_stick_delta(eps),
                        _ => p.delta(eps),
                    })
                };
                curve.push(CurvePoint {
                    epsilon: eps,
                    delta_upper: delta(BoundDirection::Upper),
                    delta_lower: delta(BoundDirection::Lower),
                    direction: format!("{scheme}:{label}"),
                });
            }
        }
    }

    let json = serde_json::json!({
        "sigma": sigma,
        "t": t,
        "k": k,
        "tightness": s.params,
        "epsilons": summary,
        "curve": curve,
    });
    Ok(Output { json, curve, epsilons: eps_rows })
}

/// Exact references: brute-force allocation PLDs for a pair, or closed-form
/// Gaussian deltas.
fn oracle_command(s: &Settings) -> CliResult<Output> {
    let (epsilons, _) = s.queries();
    let directions = s.direction.unwrap_or_default().directions();
    let mut curve = Vec::new();
    let json = if let Some(pair) = &s.pair {
        let t = s.t.unwrap_or(1);
        let mut plds: Vec<(AdjacencyDirection, DiscretePld)> = Vec::new();
        for &adj in &directions {
            plds.push((adj, brute_force_alloc_pld(pair, t, adj)?));
        }
        for &eps in &epsilons {
            for (adj, l) in &plds {
                let d = Some(l.hockey_stick_delta(eps));
                curve.push(CurvePoint { epsilon: eps, delta_upper: d, delta_lower: d, direction: adj.to_string() });
            }
        }
        let plds: Vec<_> = plds
            .into_iter()
            .map(|(direction, pld)| serde_json::json!({ "direction": direction, "pld": pld }))
            .collect();
        serde_json::json!({ "t": t, "plds": plds, "curve": curve })
    } else {
        let sigma = s.sigma()?;
        let lambda = s.sampling_rate.unwrap_or(1.0);
        if !(0.0..=1.0).contains(&lambda) {
            return Err(usage(format!("sampling rate {lambda} outside [0, 1]")));
        }
        for &eps in &epsilons {
            let d = Some(if lambda == 1.0 {
                gaussian_delta_analytic(sigma, eps)
            } else {
                subsampled_gaussian_delta(sigma, lambda, eps)
            });
            curve.push(CurvePoint { epsilon: eps, delta_upper: d, delta_lower: d, direction: "remove".into() });
        }
        serde_json::json!({ "sigma": sigma, "sampling_rate": lambda, "curve": curve })
    };
    Ok(Output { json, curve, epsilons: Vec::new() })
}

struct Output {
    json: serde_json::Value,
    curve: Vec<CurvePoint>,
    epsilons: Vec<EpsilonPoint>,
}

/// Shortest round-trip form, with an exponent for very large or small values.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn cell(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn write_output(out: &Output, format: OutArg, w: impl Write) -> CliResult<()> {
    match format {
        OutArg::Json => {
            let mut w = w;
            serde_json::to_writer_pretty(&mut w, &out.json)
                .map_err(|source| CliError::Json { path: "output".into(), source })?;
            writeln!(w).map_err(|source| CliError::Io { path: "output".into(), source })?;
        }
        OutArg::Csv => {
            let mut csv = csv::Writer::from_writer(w);
            if out.epsilons.is_empty() || !out.curve.is_empty() {
                csv.write_record(["epsilon", "delta_upper", "delta_lower", "direction"])?;
                for p in &out.curve {
                    csv.write_record([num(p.epsilon), cell(p.delta_upper), cell(p.delta_lower), p.direction.clone()])?;
                }
            } else {
                csv.write_record(["delta", "epsilon_upper", "epsilon_lower", "direction"])?;
                for p in &out.epsilons {
                    csv.write_record([
                        num(p.delta),
                        cell(p.epsilon_upper),
                        cell(p.epsilon_lower),
                        p.direction.clone(),
                    ])?;
                }
            }
            csv.flush().map_err(|source| CliError::Io { path: "output".into(), source })?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let opts = match &cli.command {
        Command::Gaussian(o)
        | Command::Pair(o)
        | Command::Allocate(o)
        | Command::Subsample(o)
        | Command::Compose(o)
        | Command::Curve(o)
        | Command::ComparePoisson(o)
        | Command::Preamble(o)
        | Command::Oracle(o) => o.clone(),
    };
    let settings = Settings::resolve(opts)?;
    if settings.out == OutArg::Csv && !settings.epsilons.is_empty() && !settings.deltas.is_empty() {
        return Err(usage("CSV output holds one table: pass --epsilon or --delta, not both"));
    }
    let output = match &cli.command {
        Command::ComparePoisson(_) => compare_poisson_command(&settings)?,
        Command::Oracle(_) => oracle_command(&settings)?,
        c => run_pipeline_command(c, &settings)?,
    };
    match &settings.output_file {
        Some(path) => {
            let file =
                fs::File::create(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
            write_output(&output, settings.out, io::BufWriter::new(file))
        }
        None => write_output(&output, settings.out, io::stdout().lock()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
