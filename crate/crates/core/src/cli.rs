//! Command-line front end.
//!
//! Exit status: 0 on success, 2 for usage or configuration errors (the
//! message names the offending key), 1 for simulation faults and I/O
//! failures. Tables go to stdout or `--out`; diagnostics go to stderr only.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::analytic::{self, AnalyticError};
use crate::experiments::{self, csv_out, ConfigError, GridPoint, ScenarioConfig, StopRule};
use crate::simkernel::SimError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Fault(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Io { .. } | CliError::Fault(_) => 1,
        }
    }

    fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    fn io(context: impl Into<String>) -> impl FnOnce(io::Error) -> Self {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::config(e.key, e.message)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => c.into(),
            SimError::Kernel(k) => CliError::Fault(format!("simulation fault: {k}")),
        }
    }
}

fn analytic_error(e: AnalyticError) -> CliError {
    match e {
        AnalyticError::Domain { param, .. } => CliError::config(param, e.to_string()),
        AnalyticError::GridPoint { .. } => CliError::config("ber", e.to_string()),
        AnalyticError::LinearizationInvalid(_) => CliError::config("ber", e.to_string()),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "hoparq",
    version,
    about = "Hop-by-hop ARQ relay-chain simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form end-to-end loss over a log-spaced BER grid.
    Analytic(AnalyticArgs),
    /// Simulate one scenario.
    Run(RunArgs),
    /// Sweep total transmission attempts per hop.
    SweepRetx(SweepRetxArgs),
    /// Sweep buffer slots per station.
    SweepBuffer(SweepBufferArgs),
    /// Compare simulated delivery with the closed-form models on a grid.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct Output {
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyticArgs {
    #[arg(long)]
    ber_min: f64,
    #[arg(long)]
    ber_max: f64,
    #[arg(long)]
    points: usize,
    #[arg(long, default_value_t = 1000)]
    packet_len: u32,
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    relays: Vec<u32>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config file's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Write the event trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct SweepRetxArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Total transmission attempts per hop (first send included).
    #[arg(long, value_delimiter = ',', required = true)]
    n_values: Vec<u32>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct SweepBufferArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    b_values: Vec<usize>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// CSV with columns ber,packet_len,relays,max_transmissions.
    #[arg(long)]
    grid: PathBuf,
    /// Base scenario; grid columns and ideal ACKs override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// SRC packets per grid point.
    #[arg(long)]
    packets: Option<u64>,
    #[command(flatten)]
    output: Output,
}

/// A parsed `key = value` scenario file. The seed stays optional here so
/// the command line can supply it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub scenario: ScenarioConfig,
    pub seed: Option<u64>,
}

const KEYS: [&str; 17] = [
    "ber",
    "packet_len",
    "ack_len",
    "bandwidth_bps",
    "prop_delay_s",
    "relays",
    "max_transmissions",
    "buffer_slots",
    "seed",
    "stop_packets",
    "stop_seconds",
    "sampling_mode",
    "ideal_acks",
    "check_delay_s",
    "rtt_s",
    "t_ack_s",
    "dup_window",
];

fn parse_value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| CliError::config(key, format!("cannot parse {raw:?}: {e}")))
}

/// Parse a scenario file. Blank lines and `#` comments are skipped; unknown
/// or repeated keys are errors; missing keys keep their defaults.
pub fn parse_config(text: &str) -> Result<ConfigFile, CliError> {
    let mut c = ScenarioConfig::with_seed(0);
    let mut seed = None;
    let mut seen = std::collections::BTreeSet::new();
    let mut stop_packets = None;
    let mut stop_seconds = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, raw) = line.split_once('=').ok_or_else(|| {
            CliError::config(
                format!("line {}", lineno + 1),
                format!("expected `key = value`, got {line:?}"),
            )
        })?;
        let (key, raw) = (key.trim(), raw.trim());
        if !KEYS.contains(&key) {
            return Err(CliError::config(key, "unknown key"));
        }
        if !seen.insert(key.to_string()) {
            return Err(CliError::config(key, "given more than once"));
        }
        match key {
            "ber" => c.link.ber = parse_value(key, raw)?,
            "packet_len" => c.link.packet_len = parse_value(key, raw)?,
            "ack_len" => c.link.ack_len = parse_value(key, raw)?,
            "bandwidth_bps" => c.link.bandwidth = parse_value(key, raw)?,
            "prop_delay_s" => c.link.prop_delay = parse_value(key, raw)?,
            "relays" => c.path.num_relays = parse_value(key, raw)?,
            "max_transmissions" => c.path.max_transmissions = parse_value(key, raw)?,
            "buffer_slots" => c.buffer_slots = parse_value(key, raw)?,
            "seed" => seed = Some(parse_value(key, raw)?),
            "stop_packets" => stop_packets = Some(parse_value::<u64>(key, raw)?),
            "stop_seconds" => stop_seconds = Some(parse_value::<f64>(key, raw)?),
            "sampling_mode" => c.sampling = parse_value(key, raw)?,
            "ideal_acks" => c.ideal_acks = parse_value(key, raw)?,
            "check_delay_s" => c.check_delay = parse_value(key, raw)?,
            "rtt_s" => c.rtt = Some(parse_value(key, raw)?),
            "t_ack_s" => c.t_ack = Some(parse_value(key, raw)?),
            "dup_window" => c.dup_window = parse_value(key, raw)?,
            _ => unreachable!("key list checked above"),
        }
    }
    c.stop = match (stop_packets, stop_seconds) {
        (Some(_), Some(_)) => {
            return Err(CliError::config(
                "stop_seconds",
                "stop_packets and stop_seconds are mutually exclusive",
            ))
        }
        (Some(k), None) => StopRule::SrcPackets(k),
        (None, Some(s)) => StopRule::SimSeconds(s),
        (None, None) => c.stop,
    };
    c.validate()?;
    Ok(ConfigFile { scenario: c, seed })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))
}

fn load_scenario(args: &ScenarioArgs) -> Result<ScenarioConfig, CliError> {
    let file = parse_config(&read_text(&args.config)?)?;
    resolve_seed(file, args.seed)
}

fn resolve_seed(file: ConfigFile, cli_seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    let seed = cli_seed.or(file.seed).ok_or_else(|| {
        CliError::config("seed", "no seed given in the config file or with --seed")
    })?;
    Ok(ScenarioConfig {
        seed,
        ..file.scenario
    })
}

fn with_output<F>(output: &Output, stdout: &mut dyn Write, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    match &output.out {
        Some(path) => {
            let file =
                File::create(path).map_err(CliError::io(format!("creating {}", path.display())))?;
            let mut w = BufWriter::new(file);
            body(&mut w)
                .and_then(|_| w.flush())
                .map_err(CliError::io(format!("writing {}", path.display())))
        }
        None => body(stdout).map_err(CliError::io("writing stdout")),
    }
}

fn cmd_analytic(args: &AnalyticArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let grid =
        analytic::log_grid(args.ber_min, args.ber_max, args.points).map_err(analytic_error)?;
    let rows =
        analytic::loss_curve(&grid, args.packet_len, &args.relays).map_err(analytic_error)?;
    with_output(&args.output, stdout, |w| {
        csv_out::write_loss_curve(w, args.packet_len, &rows)
    })
}

fn cmd_run(args: &RunArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config = load_scenario(&args.scenario)?;
    let trace: Option<Box<dyn Write + Send>> = match &args.trace {
        Some(path) => {
            let f =
                File::create(path).map_err(CliError::io(format!("creating {}", path.display())))?;
            Some(Box::new(BufWriter::new(f)))
        }
        None => None,
    };
    let (metrics, _, _) = experiments::run_scenario_with(&config, trace, false)?;
    with_output(&args.output, stdout, |w| {
        csv_out::write_run(w, &config, &metrics)
    })
}

fn cmd_sweep_retx(args: &SweepRetxArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config = load_scenario(&args.scenario)?;
    if let Some(&bad) = args.n_values.iter().find(|&&n| n == 0) {
        return Err(CliError::config(
            "n_values",
            format!("{bad} attempts is below 1"),
        ));
    }
    let rows = experiments::sweep_retransmissions(&config, &args.n_values)?;
    with_output(&args.output, stdout, |w| {
        csv_out::write_sweep(w, "max_transmissions", &config, &rows)
    })
}

fn cmd_sweep_buffer(args: &SweepBufferArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let config = load_scenario(&args.scenario)?;
    let rows = experiments::sweep_buffer(&config, &args.b_values)?;
    with_output(&args.output, stdout, |w| {
        csv_out::write_sweep(w, "buffer_slots", &config, &rows)
    })
}

pub fn parse_grid(text: &str) -> Result<Vec<GridPoint>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (i, rec) in reader.deserialize::<GridPoint>().enumerate() {
        let p = rec.map_err(|e| CliError::config("grid", format!("row {}: {e}", i + 1)))?;
        if !(0.0..1.0).contains(&p.ber) {
            return Err(CliError::config(
                "ber",
                format!("grid row {}: {} is not in [0, 1)", i + 1, p.ber),
            ));
        }
        if p.packet_len == 0 {
            return Err(CliError::config(
                "packet_len",
                format!("grid row {}: must be positive", i + 1),
            ));
        }
        if p.max_transmissions == 0 {
            return Err(CliError::config(
                "max_transmissions",
                format!("grid row {}: must be at least 1", i + 1),
            ));
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(CliError::config("grid", "no grid points"));
    }
    Ok(points)
}

fn cmd_validate(args: &ValidateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let grid = parse_grid(&read_text(&args.grid)?)?;
    let file = match &args.config {
        Some(path) => parse_config(&read_text(path)?)?,
        None => ConfigFile {
            scenario: ScenarioConfig::with_seed(0),
            seed: None,
        },
    };
    let mut base = resolve_seed(file, args.seed)?;
    if let Some(k) = args.packets {
        base.stop = StopRule::SrcPackets(k);
    }
    base.validate()?;
    let rows = experiments::validate_against_analytic(&base, &grid)?;
    with_output(&args.output, stdout, |w| {
        csv_out::write_validation(w, &base, &rows)
    })
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Analytic(a) => cmd_analytic(a, stdout),
        Command::Run(a) => cmd_run(a, stdout),
        Command::SweepRetx(a) => cmd_sweep_retx(a, stdout),
        Command::SweepBuffer(a) => cmd_sweep_buffer(a, stdout),
        Command::Validate(a) => cmd_validate(a, stdout),
    }
}

/// Parse `argv` (program name first), run the subcommand, return the exit status.
pub fn dispatch<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_keys() {
        let text = "\
# comment
ber = 1e-6
packet_len = 500
ack_len = 4
bandwidth_bps = 1e6
prop_delay_s = 2e-6
relays = 7
max_transmissions = 4
buffer_slots = 9
seed = 11
stop_packets = 123
sampling_mode = perbit
ideal_acks = true
check_delay_s = 0
";
        let f = parse_config(text).unwrap();
        let c = &f.scenario;
        assert_eq!(f.seed, Some(11));
        assert_eq!(c.link.ber, 1e-6);
        assert_eq!(c.link.packet_len, 500);
        assert_eq!(c.link.ack_len, 4);
        assert_eq!(c.link.bandwidth, 1e6);
        assert_eq!(c.path.num_relays, 7);
        assert_eq!(c.path.max_transmissions, 4);
        assert_eq!(c.buffer_slots, 9);
        assert_eq!(c.stop, StopRule::SrcPackets(123));
        assert!(c.ideal_acks);
    }

    #[test]
    fn missing_keys_take_defaults() {
        let f = parse_config("seed = 1\n").unwrap();
        let mut expected = ScenarioConfig::with_seed(0);
        expected.seed = 0;
        assert_eq!(f.scenario, expected);
    }

    #[test]
    fn unknown_key_is_named() {
        match parse_config("bre = 1e-5\n") {
            Err(CliError::Config { key, .. }) => assert_eq!(key, "bre"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_range_value_is_named() {
        match parse_config("ber = 1.5\n") {
            Err(CliError::Config { key, .. }) => assert_eq!(key, "ber"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stop_keys_are_exclusive() {
        let err = parse_config("stop_packets = 10\nstop_seconds = 1\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn repeated_key_and_bad_syntax_are_errors() {
        assert!(parse_config("ber = 0\nber = 0\n").is_err());
        assert!(parse_config("ber 0\n").is_err());
        assert!(parse_config("relays = many\n").is_err());
    }

    #[test]
    fn seed_resolution() {
        let f = parse_config("seed = 3\n").unwrap();
        assert_eq!(resolve_seed(f.clone(), Some(9)).unwrap().seed, 9);
        assert_eq!(resolve_seed(f, None).unwrap().seed, 3);
        let f = parse_config("relays = 2\n").unwrap();
        match resolve_seed(f, None) {
            Err(CliError::Config { key, .. }) => assert_eq!(key, "seed"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_parsing() {
        let g =
            parse_grid("ber,packet_len,relays,max_transmissions\n# x\n1e-5, 1000, 5, 3\n").unwrap();
        assert_eq!(
            g,
            vec![GridPoint {
                ber: 1e-5,
                packet_len: 1000,
                relays: 5,
                max_transmissions: 3
            }]
        );
        assert!(parse_grid("ber,packet_len,relays,max_transmissions\n").is_err());
        assert!(parse_grid("ber,packet_len,relays,max_transmissions\n2,1000,1,1\n").is_err());
    }
}
