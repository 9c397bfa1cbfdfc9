//! Command-line front end: argument and config-file parsing, figure presets,
//! CSV emission and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::channel::PowerDelayProfile;
use crate::error::Error;
use crate::harness::{
    run_changing_scenario, run_sweep, train_offline_baselines, EstimatorId, Metric, ResultRow,
    RunResult, ScenarioConfig, ScenarioId, SweepSpec, XAxis, DEFAULT_CALIBRATION_FRAMES,
    DEFAULT_CLIP_RATIO, DEFAULT_ELM_HIDDEN, DEFAULT_OFFLINE_DATASET, DEFAULT_OFFLINE_EBN0_DB,
};
use crate::phy::OfdmConfig;

/// Environment variable holding the number of worker threads.
pub const WORKERS_ENV: &str = "LMLCE_WORKERS";

pub const CSV_HEADER: &str = "scenario,estimator,x_axis,x_db,metric,value,stderr,runs,seed";

#[derive(Debug, Parser)]
#[command(name = "lmlce", version, about = "OFDM channel estimation simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one sweep.
    Run(Box<RunArgs>),
    /// Regenerate the data of one figure.
    Reproduce(ReproduceArgs),
    /// Print a commented configuration file.
    ConfigTemplate,
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// TOML configuration file; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// s1, s2, s3 or changing.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Comma-separated estimator names.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    /// nmse or ber.
    #[arg(long)]
    pub metric: Option<String>,
    /// SNR grid in dB, `start:stop:step` or a comma list.
    #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["ebn0", "dataset_grid"])]
    pub snr: Option<String>,
    /// Eb/N0 grid in dB.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "dataset_grid")]
    pub ebn0: Option<String>,
    /// Training-set size grid, simulated at `--operating-snr`.
    #[arg(long = "dataset-grid")]
    pub dataset_grid: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub operating_snr: Option<f64>,
    /// Cap on the online training set.
    #[arg(long)]
    pub dataset_size: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// pb, oa, flat or a profile file.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub pilot_interval: Option<usize>,
    /// Pilots per estimator group.
    #[arg(long)]
    pub taps: Option<usize>,
    /// Used subcarriers.
    #[arg(long)]
    pub subcarriers: Option<usize>,
    #[arg(long)]
    pub dft_size: Option<usize>,
    #[arg(long)]
    pub cp_len: Option<usize>,
    #[arg(long)]
    pub data_symbols: Option<usize>,
    #[arg(long)]
    pub block_pilots: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta_min: Option<i64>,
    #[arg(long)]
    pub epsilon_max: Option<f64>,
    #[arg(long)]
    pub clip_ratio: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub offline_ebn0: Option<f64>,
    #[arg(long)]
    pub offline_dataset: Option<usize>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SVG plot destination.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long)]
    pub figure: u32,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

/// Failure of a CLI invocation, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Help or version text requested; not a failure.
    Info(String),
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Info(_) => 0,
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Info(m) => write!(f, "{m}"),
            CliError::Validation(m) => write!(f, "invalid configuration: {m}"),
            CliError::Runtime(m) => write!(f, "run failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn invalid(e: Error) -> CliError {
    CliError::Validation(e.to_string())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    sweep: SweepSection,
    #[serde(default)]
    channel: ChannelSection,
    #[serde(default)]
    ofdm: OfdmSection,
    #[serde(default)]
    offline: OfflineSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    scenario: Option<String>,
    estimators: Option<Vec<String>>,
    metric: Option<String>,
    x_axis: Option<String>,
    grid: Option<String>,
    runs: Option<usize>,
    seed: Option<u64>,
    operating_snr: Option<f64>,
    dataset_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSection {
    profile: Option<String>,
    theta_min: Option<i64>,
    epsilon_max: Option<f64>,
    clip_ratio: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OfdmSection {
    dft_size: Option<usize>,
    cp_len: Option<usize>,
    subcarriers: Option<usize>,
    pilot_interval: Option<usize>,
    taps: Option<usize>,
    block_pilots: Option<usize>,
    data_symbols: Option<usize>,
    sample_rate: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OfflineSection {
    ebn0_db: Option<f64>,
    dataset_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    out: Option<PathBuf>,
    plot: Option<PathBuf>,
}

/// A validated `run` invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub spec: SweepSpec,
    pub profile: String,
    pub offline_ebn0_db: f64,
    pub offline_dataset: usize,
    pub out: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum CliConfig {
    Run(RunConfig),
    Reproduce {
        figure: u32,
        seed: u64,
        runs: Option<usize>,
        out: Option<PathBuf>,
        plot: Option<PathBuf>,
    },
    ConfigTemplate,
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: &str| CliError::Validation(format!("grid `{s}`: {why}"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let parts: Vec<&str> = s.split(':').collect();
    let points = match parts.as_slice() {
        [start, stop, step] => {
            let (a, b, h) = (num(start)?, num(stop)?, num(step)?);
            if !(h > 0.0) || b < a || !a.is_finite() || !b.is_finite() {
                return Err(bad("need start <= stop and a positive step"));
            }
            let n = ((b - a) / h + 1e-9).floor() as usize;
            if n > 10_000 {
                return Err(bad("too many points"));
            }
            (0..=n).map(|i| a + i as f64 * h).collect()
        }
        [list] => list.split(',').map(num).collect::<Result<Vec<f64>, _>>()?,
        _ => return Err(bad("expected start:stop:step or a comma list")),
    };
    if points.is_empty() || points.iter().any(|p| !p.is_finite()) {
        return Err(bad("no valid points"));
    }
    Ok(points)
}

fn check_output(path: &Path) -> Result<(), CliError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let meta = fs::metadata(parent)
        .map_err(|_| CliError::Validation(format!("output `{}`: directory does not exist", path.display())))?;
    if !meta.is_dir() || meta.permissions().readonly() {
        return Err(CliError::Validation(format!("output `{}`: directory is not writable", path.display())));
    }
    if path.is_dir() {
        return Err(CliError::Validation(format!("output `{}` is a directory", path.display())));
    }
    if let Ok(m) = fs::metadata(path) {
        if m.permissions().readonly() {
            return Err(CliError::Validation(format!("output `{}` is read-only", path.display())));
        }
    }
    Ok(())
}

/// Parses the command line (including the program name) and validates it.
/// Values from `--config` are overridden by explicit flags.
pub fn parse_and_validate<I, T>(argv: I) -> Result<CliConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            CliError::Info(e.to_string())
        }
        _ => CliError::Validation(e.to_string()),
    })?;
    match cli.command {
        Command::ConfigTemplate => Ok(CliConfig::ConfigTemplate),
        Command::Reproduce(a) => {
            if !(4..=9).contains(&a.figure) {
                return Err(CliError::Validation(format!(
                    "figure {} has no preset (available: 4 to 9)",
                    a.figure
                )));
            }
            if a.runs == Some(0) {
                return Err(CliError::Validation("runs must be at least 1".into()));
            }
            for p in a.out.iter().chain(a.plot.iter()) {
                check_output(p)?;
            }
            Ok(CliConfig::Reproduce {
                figure: a.figure,
                seed: a.seed.unwrap_or(0),
                runs: a.runs,
                out: a.out,
                plot: a.plot,
            })
        }
        Command::Run(a) => build_run(*a).map(CliConfig::Run),
    }
}

fn build_run(a: RunArgs) -> Result<RunConfig, CliError> {
    let file = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Validation(format!("config `{}`: {e}", p.display())))?;
            toml::from_str::<FileConfig>(&text)
                .map_err(|e| CliError::Validation(format!("config `{}`: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };

    let defaults = OfdmConfig::default();
    let ofdm = OfdmConfig {
        n_dft: a.dft_size.or(file.ofdm.dft_size).unwrap_or(defaults.n_dft),
        cp_len: a.cp_len.or(file.ofdm.cp_len).unwrap_or(defaults.cp_len),
        k_used: a.subcarriers.or(file.ofdm.subcarriers).unwrap_or(defaults.k_used),
        pilot_interval: a.pilot_interval.or(file.ofdm.pilot_interval).unwrap_or(defaults.pilot_interval),
        taps: a.taps.or(file.ofdm.taps).unwrap_or(defaults.taps),
        n_block_pilot: a.block_pilots.or(file.ofdm.block_pilots).unwrap_or(defaults.n_block_pilot),
        n_data: a.data_symbols.or(file.ofdm.data_symbols).unwrap_or(defaults.n_data),
        sample_rate: file.ofdm.sample_rate.unwrap_or(defaults.sample_rate),
    };
    ofdm.validate().map_err(invalid)?;

    let profile_name = a.profile.or(file.channel.profile).unwrap_or_else(|| "pb".into());
    let profile = PowerDelayProfile::resolve(&profile_name).map_err(invalid)?;
    let scenario_id: ScenarioId = a
        .scenario
        .or(file.sweep.scenario)
        .unwrap_or_else(|| "s1".into())
        .parse()
        .map_err(invalid)?;
    let theta_min = a.theta_min.or(file.channel.theta_min);
    let epsilon_max = a.epsilon_max.or(file.channel.epsilon_max);
    let clip_ratio = a.clip_ratio.or(file.channel.clip_ratio);
    let scenario = match scenario_id {
        ScenarioId::S1 => ScenarioConfig::s1(profile),
        ScenarioId::S2 => ScenarioConfig::s2(profile, theta_min.unwrap_or(-20), epsilon_max.unwrap_or(0.0)),
        ScenarioId::S3 => ScenarioConfig::s3(profile, clip_ratio.unwrap_or(DEFAULT_CLIP_RATIO)),
        ScenarioId::Changing => ScenarioConfig::changing(profile),
    };

    let estimators = match a.estimators.or(file.sweep.estimators) {
        Some(list) => list
            .iter()
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.parse::<EstimatorId>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(invalid)?,
        None => vec![EstimatorId::Mmse, EstimatorId::Ls, EstimatorId::LmlPatdg],
    };
    let metric: Metric = a
        .metric
        .or(file.sweep.metric)
        .unwrap_or_else(|| "nmse".into())
        .parse()
        .map_err(invalid)?;

    let (x_axis, grid) = if let Some(g) = a.snr {
        (XAxis::SnrDb, g)
    } else if let Some(g) = a.ebn0 {
        (XAxis::EbN0Db, g)
    } else if let Some(g) = a.dataset_grid {
        (XAxis::DatasetSize, g)
    } else {
        let axis: XAxis = file.sweep.x_axis.as_deref().unwrap_or("snr").parse().map_err(invalid)?;
        (axis, file.sweep.grid.unwrap_or_else(|| "-10:30:5".into()))
    };
    let points = parse_grid(&grid)?;

    let mut spec = SweepSpec::new(scenario, estimators, metric, x_axis, points);
    spec.ofdm = ofdm;
    spec.runs = a.runs.or(file.sweep.runs).unwrap_or(2000);
    spec.seed = a.seed.or(file.sweep.seed).unwrap_or(0);
    spec.snr_db = a.operating_snr.or(file.sweep.operating_snr).unwrap_or(-10.0);
    spec.dataset_size = a.dataset_size.or(file.sweep.dataset_size);
    spec.calibration_frames = DEFAULT_CALIBRATION_FRAMES;
    spec.elm_hidden = DEFAULT_ELM_HIDDEN;
    spec.validate().map_err(invalid)?;

    let out = a.out.or(file.output.out);
    let plot = a.plot.or(file.output.plot);
    for p in out.iter().chain(plot.iter()) {
        check_output(p)?;
    }
    let offline_dataset = a.offline_dataset.or(file.offline.dataset_size).unwrap_or(DEFAULT_OFFLINE_DATASET);
    if offline_dataset <= DEFAULT_ELM_HIDDEN {
        return Err(CliError::Validation(format!(
            "offline dataset size {offline_dataset} must exceed {DEFAULT_ELM_HIDDEN}"
        )));
    }
    Ok(RunConfig {
        spec,
        profile: profile_name,
        offline_ebn0_db: a.offline_ebn0.or(file.offline.ebn0_db).unwrap_or(DEFAULT_OFFLINE_EBN0_DB),
        offline_dataset,
        out,
        plot,
    })
}

pub fn config_template() -> String {
    let d = OfdmConfig::default();
    format!(
        r#"# lmlce run configuration. Every key is optional; flags override it.

[sweep]
scenario = "s1"            # s1, s2, s3, changing
estimators = ["mmse", "ls", "lml-patdg"]
metric = "nmse"            # nmse or ber
x_axis = "snr"             # snr, ebn0 or dataset
grid = "-10:30:5"          # start:stop:step or a comma list
runs = 2000
seed = 0
operating_snr = -10.0      # SNR used when x_axis = "dataset"
# dataset_size = 406       # cap on the online training set

[channel]
profile = "pb"             # pb, oa, flat or a file of `delay_ns power_db` lines
theta_min = -20            # s2 only
epsilon_max = 0.0          # s2 only
clip_ratio = {clip}        # s3 only, threshold relative to the frame RMS

[ofdm]
dft_size = {n_dft}
cp_len = {cp}
subcarriers = {k}
pilot_interval = {d}
taps = {m}
block_pilots = {np}
data_symbols = {nd}
sample_rate = {fs:.1}

[offline]
ebn0_db = {ebn0}
dataset_size = {size}

[output]
# out = "results.csv"
# plot = "results.svg"
"#,
        clip = DEFAULT_CLIP_RATIO,
        n_dft = d.n_dft,
        cp = d.cp_len,
        k = d.k_used,
        d = d.pilot_interval,
        m = d.taps,
        np = d.n_block_pilot,
        nd = d.n_data,
        fs = d.sample_rate,
        ebn0 = DEFAULT_OFFLINE_EBN0_DB,
        size = DEFAULT_OFFLINE_DATASET,
    )
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.9e}")
    }
}

/// Renders result tables as CSV. Rows of each table are ordered by
/// estimator, then ascending x; tables keep their order.
pub fn emit_csv(results: &[RunResult]) -> Result<String, Error> {
    let rows: Vec<ResultRow> = results.iter().flat_map(RunResult::rows).collect();
    if rows.is_empty() {
        return Err(Error::InsufficientData("no results to write".into()));
    }
    let mut out = String::with_capacity(rows.len() * 96);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.estimator,
            r.x_axis,
            r.x,
            r.metric,
            fmt_value(r.value),
            fmt_value(r.stderr),
            r.runs,
            r.seed
        );
    }
    Ok(out)
}

pub fn write_csv(results: &[RunResult], path: &Path) -> Result<(), Error> {
    fs::write(path, emit_csv(results)?)?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>, Error> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::Parse("missing or unexpected CSV header".into()));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| Error::Parse(format!("row {}: bad {what}", n + 2));
        if f.len() != 9 {
            return Err(bad("field count"));
        }
        rows.push(ResultRow {
            scenario: f[0].to_string(),
            estimator: f[1].to_string(),
            x_axis: f[2].to_string(),
            x: f[3].parse().map_err(|_| bad("x_db"))?,
            metric: f[4].to_string(),
            value: f[5].parse().map_err(|_| bad("value"))?,
            stderr: f[6].parse().map_err(|_| bad("stderr"))?,
            runs: f[7].parse().map_err(|_| bad("runs"))?,
            seed: f[8].parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(rows)
}

/// The sweeps behind one figure.
pub struct FigurePreset {
    pub figure: u32,
    pub title: &'static str,
    /// Label written to the scenario column and the sweep producing it.
    pub sweeps: Vec<(String, SweepSpec)>,
    /// Scenario and Eb/N0 of the offline baselines, if any sweep needs them.
    pub offline: Option<(ScenarioConfig, f64)>,
}

pub fn figure_preset(figure: u32, seed: u64, runs: Option<usize>) -> Result<FigurePreset, CliError> {
    let pb = PowerDelayProfile::pedestrian_b();
    let snr_grid: Vec<f64> = (0..9).map(|i| -10.0 + 5.0 * i as f64).collect();
    let ebn0_grid: Vec<f64> = (0..7).map(|i| 5.0 * i as f64).collect();
    let runs = runs.unwrap_or(2000);
    let make = |scenario: ScenarioConfig, est: &[EstimatorId], metric, axis, points: Vec<f64>| {
        let mut s = SweepSpec::new(scenario, est.to_vec(), metric, axis, points);
        s.runs = runs;
        s.seed = seed;
        s
    };
    use EstimatorId as E;
    let preset = match figure {
        4 => FigurePreset {
            figure,
            title: "NMSE vs SNR, scenario 1",
            sweeps: vec![(
                "s1".into(),
                make(
                    ScenarioConfig::s1(pb),
                    &[E::Mmse, E::Ls, E::LmlPatdg, E::LmlDdtdg],
                    Metric::Nmse,
                    XAxis::SnrDb,
                    snr_grid,
                ),
            )],
            offline: None,
        },
        5 => {
            let mut s = make(
                ScenarioConfig::s1(pb),
                &[E::Mmse, E::LmlPatdg, E::LmlTrueLabels],
                Metric::Nmse,
                XAxis::DatasetSize,
                vec![10.0, 20.0, 40.0, 60.0, 80.0, 100.0, 150.0, 200.0, 250.0, 280.0, 300.0, 350.0, 406.0],
            );
            s.snr_db = -10.0;
            FigurePreset {
                figure,
                title: "NMSE vs dataset size, scenario 1, SNR -10 dB",
                sweeps: vec![("s1".into(), s)],
                offline: None,
            }
        }
        6 => FigurePreset {
            figure,
            title: "BER vs Eb/N0 under timing offset, scenario 2",
            sweeps: [-20i64, -40]
                .iter()
                .map(|&t| {
                    (
                        format!("s2:theta_min={t}"),
                        make(
                            ScenarioConfig::s2(pb.clone(), t, 0.0),
                            &[E::Linear, E::Ammse, E::LmlPatdg],
                            Metric::Ber,
                            XAxis::EbN0Db,
                            ebn0_grid.clone(),
                        ),
                    )
                })
                .collect(),
            offline: None,
        },
        7 => FigurePreset {
            figure,
            title: "BER vs Eb/N0 under frequency offset, scenario 2",
            sweeps: [0.01, 0.05]
                .iter()
                .map(|&e| {
                    (
                        format!("s2:epsilon_max={e}"),
                        make(
                            ScenarioConfig::s2(pb.clone(), 0, e),
                            &[E::Linear, E::Ammse, E::LmlPatdg],
                            Metric::Ber,
                            XAxis::EbN0Db,
                            ebn0_grid.clone(),
                        ),
                    )
                })
                .collect(),
            offline: None,
        },
        8 => FigurePreset {
            figure,
            title: "BER vs Eb/N0 with clipping, scenario 3, online training",
            sweeps: vec![(
                "s3".into(),
                make(
                    ScenarioConfig::s3(pb, DEFAULT_CLIP_RATIO),
                    &[E::DuMmse, E::DaLmmse, E::LmlPatdg, E::CelmOnline],
                    Metric::Ber,
                    XAxis::EbN0Db,
                    ebn0_grid,
                ),
            )],
            offline: None,
        },
        9 => FigurePreset {
            figure,
            title: "BER vs Eb/N0 under changing scenarios",
            sweeps: vec![(
                "changing".into(),
                make(
                    ScenarioConfig::changing(pb.clone()),
                    &[E::LmlPatdg, E::CelmOffline],
                    Metric::Ber,
                    XAxis::EbN0Db,
                    ebn0_grid,
                ),
            )],
            offline: Some((ScenarioConfig::s3(pb, DEFAULT_CLIP_RATIO), DEFAULT_OFFLINE_EBN0_DB)),
        },
        _ => {
            return Err(CliError::Validation(format!(
                "figure {figure} has no preset (available: 4 to 9)"
            )))
        }
    };
    Ok(preset)
}

pub fn run_preset(preset: &FigurePreset) -> Result<Vec<RunResult>, Error> {
    let baselines = match &preset.offline {
        Some((scenario, ebn0)) => Some(train_offline_baselines(
            scenario,
            &OfdmConfig::default(),
            *ebn0,
            DEFAULT_OFFLINE_DATASET,
            DEFAULT_ELM_HIDDEN,
            preset.sweeps.first().map_or(0, |s| s.1.seed),
        )?),
        None => None,
    };
    preset
        .sweeps
        .iter()
        .map(|(label, spec)| {
            let mut r = match (&baselines, spec.scenario.id) {
                (Some(b), ScenarioId::Changing) => run_changing_scenario(spec, b)?,
                (Some(b), _) => crate::harness::run_sweep_with(spec, Some(b))?,
                (None, _) => run_sweep(spec)?,
            };
            r.scenario = label.clone();
            Ok(r)
        })
        .collect()
}

/// Runs a validated `run` configuration.
pub fn execute_run(cfg: &RunConfig) -> Result<Vec<RunResult>, Error> {
    let needs_offline = cfg
        .spec
        .estimators
        .iter()
        .any(|e| matches!(e, EstimatorId::LmlOffline | EstimatorId::CelmOffline));
    let result = if needs_offline {
        let train = ScenarioConfig::s3(cfg.spec.scenario.profile.clone(), DEFAULT_CLIP_RATIO);
        let b = train_offline_baselines(
            &train,
            &cfg.spec.ofdm,
            cfg.offline_ebn0_db,
            cfg.offline_dataset,
            cfg.spec.elm_hidden,
            cfg.spec.seed,
        )?;
        crate::harness::run_sweep_with(&cfg.spec, Some(&b))?
    } else {
        run_sweep(&cfg.spec)?
    };
    Ok(vec![result])
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

fn axis_label(x_axis: &str) -> &'static str {
    match x_axis {
        "snr_db" => "SNR (dB)",
        "ebn0_db" => "Eb/N0 (dB)",
        "dataset_size" => "Size of dataset",
        _ => "x",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Draws a CSV as a log-y line chart, one series per (scenario,
/// estimator). The plot is a pure view of the CSV.
pub fn emit_plot(csv: &str, title: &str) -> Result<String, Error> {
    let rows = parse_csv(csv)?;
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    let scenarios: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.scenario.as_str()).collect();
    for r in &rows {
        let legend = r
            .estimator
            .parse::<EstimatorId>()
            .map(|e| e.legend().to_string())
            .unwrap_or_else(|_| r.estimator.clone());
        let name = if scenarios.len() > 1 {
            format!("{legend}, {}", r.scenario)
        } else {
            legend
        };
        if r.value.is_finite() && r.value > 0.0 {
            match series.iter_mut().find(|s| s.0 == name) {
                Some(s) => s.1.push((r.x, r.value)),
                None => series.push((name, vec![(r.x, r.value)])),
            }
        }
    }
    if series.is_empty() {
        return Err(Error::InsufficientData("no plottable points in CSV".into()));
    }
    let metric = rows[0].metric.to_ascii_uppercase();
    let xlabel = axis_label(&rows[0].x_axis);

    let pts = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let d0 = y0.log10().floor();
    let mut d1 = y1.log10().ceil();
    if d1 <= d0 {
        d1 = d0 + 1.0;
    }

    let (w, h) = (720.0, 520.0);
    let (left, right, top, bottom) = (80.0, 220.0, 50.0, 60.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (d1 - y.log10()) / (d1 - d0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let mut d = d0;
    while d <= d1 + 1e-9 {
        let y = sy(10f64.powf(d));
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ccc"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0,
            d as i64
        );
        d += 1.0;
    }
    let mut xticks: Vec<f64> = rows.iter().map(|r| r.x).collect();
    xticks.sort_by(f64::total_cmp);
    xticks.dedup();
    let stride = xticks.len().div_ceil(12).max(1);
    for x in xticks.iter().step_by(stride) {
        let px = sx(*x);
        let _ = writeln!(
            svg,
            r##"<line x1="{px:.2}" y1="{top}" x2="{px:.2}" y2="{:.2}" stroke="#eee"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            top + ph,
            top + ph + 18.0,
            x
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 16.0,
        escape(xlabel)
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(&metric)
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut sorted = pts.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = sorted.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
            path.join(" ")
        );
        for &(x, y) in &sorted {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let ly = top + 10.0 + 20.0 * i as f64;
        let lx = left + pw + 16.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("-10:30:5").unwrap().len(), 9);
        assert_eq!(parse_grid("0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_grid("3,1,2").unwrap(), vec![3.0, 1.0, 2.0]);
        assert!(parse_grid("5:0:1").is_err());
        assert!(parse_grid("0:5:0").is_err());
        assert!(parse_grid("a:b").is_err());
    }

    #[test]
    fn happy_path_run() {
        let cfg = parse_and_validate([
            "lmlce", "run", "--scenario", "s1", "--estimators", "mmse,lml-patdg", "--snr", "-10:30:5",
            "--runs", "2000", "--seed", "7",
        ])
        .unwrap();
        let CliConfig::Run(r) = cfg else { panic!() };
        assert_eq!(r.spec.estimators, vec![EstimatorId::Mmse, EstimatorId::LmlPatdg]);
        assert_eq!(r.spec.points.len(), 9);
        assert_eq!(r.spec.runs, 2000);
        assert_eq!(r.spec.seed, 7);
        assert!(r.out.is_none());
    }

    #[test]
    fn divisibility_violation_names_field() {
        let err = parse_and_validate(["lmlce", "run", "--pilot-interval", "3", "--subcarriers", "410"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        assert!(msg.contains("not divisible"), "{msg}");
    }

    #[test]
    fn unknown_flag_and_bad_output_rejected() {
        assert_eq!(parse_and_validate(["lmlce", "run", "--bogus"]).unwrap_err().exit_code(), 2);
        let err = parse_and_validate(["lmlce", "run", "--out", "/nonexistent/dir/x.csv"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(parse_and_validate(["lmlce", "reproduce", "--figure", "3"]).is_err());
    }

    #[test]
    fn config_file_with_flag_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "[sweep]\nscenario = \"s3\"\nruns = 5\nseed = 3\n[channel]\nclip_ratio = 1.5\n").unwrap();
        let p = path.to_str().unwrap();
        let CliConfig::Run(r) = parse_and_validate(["lmlce", "run", "--config", p, "--runs", "9"]).unwrap() else {
            panic!()
        };
        assert_eq!(r.spec.runs, 9);
        assert_eq!(r.spec.seed, 3);
        assert_eq!(r.spec.scenario.clip_ratio, Some(1.5));
        fs::write(&path, "[sweep]\nbogus = 1\n").unwrap();
        assert!(parse_and_validate(["lmlce", "run", "--config", p]).is_err());
    }

    #[test]
    fn template_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.toml");
        fs::write(&path, config_template()).unwrap();
        let cfg = parse_and_validate(["lmlce", "run", "--config", path.to_str().unwrap()]).unwrap();
        assert!(matches!(cfg, CliConfig::Run(_)));
    }

    fn tiny_results() -> Vec<RunResult> {
        let mut spec = SweepSpec::new(
            ScenarioConfig::s1(PowerDelayProfile::pedestrian_b()),
            vec![EstimatorId::Genie, EstimatorId::Ls],
            Metric::Nmse,
            XAxis::SnrDb,
            vec![20.0, 0.0, 10.0],
        );
        spec.runs = 2;
        spec.seed = 1;
        vec![run_sweep(&spec).unwrap()]
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let results = tiny_results();
        let csv = emit_csv(&results).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 7);
        assert!(lines[1].starts_with("s1,genie,snr_db,0,nmse,0.000000000e0,"));
        assert!(lines[4].starts_with("s1,ls,snr_db,0,"));
        let rows = parse_csv(&csv).unwrap();
        assert_eq!(rows.len(), 6);
        // re-emitting the parsed table gives the same bytes
        let mut again = String::from(CSV_HEADER);
        again.push('\n');
        for r in &rows {
            again.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.scenario, r.estimator, r.x_axis, r.x, r.metric, fmt_value(r.value), fmt_value(r.stderr), r.runs, r.seed
            ));
        }
        assert_eq!(again, csv);
        assert!(parse_csv("a,b\n").is_err());
        assert!(emit_csv(&[]).is_err());
    }

    #[test]
    fn plot_is_svg_and_rejects_empty() {
        let csv = emit_csv(&tiny_results()).unwrap();
        let svg = emit_plot(&csv, "test").unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("LS"));
        assert!(emit_plot(CSV_HEADER, "empty").is_err());
        assert_eq!(emit_plot(&csv, "test").unwrap(), svg);
    }

    #[test]
    fn presets_match_figures() {
        let p4 = figure_preset(4, 7, None).unwrap();
        assert_eq!(
            p4.sweeps[0].1.estimators,
            vec![EstimatorId::Mmse, EstimatorId::Ls, EstimatorId::LmlPatdg, EstimatorId::LmlDdtdg]
        );
        assert_eq!(figure_preset(5, 7, None).unwrap().sweeps[0].1.x_axis, XAxis::DatasetSize);
        assert_eq!(figure_preset(6, 7, None).unwrap().sweeps.len(), 2);
        assert!(figure_preset(9, 7, None).unwrap().offline.is_some());
        assert!(figure_preset(10, 7, None).is_err());
    }
}
