//! Command-line front end: configuration, the `run` and `verify` commands,
//! log and metadata output.

pub mod verify;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::{ControllerGains, GainConfig};
use crate::model::{initial_joint_configuration, parse_model, surrogate_humanoid, ModelError, RobotModel};
use crate::sim::{scenario_by_name, write_csv, ControlUpdate, LogRecord, Scenario, SimError, Simulation};

pub use verify::{run_checks, CheckResult};

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "MOMFLIGHT_OUT";

/// A QP dump is kept every this many steps when `--dump-qp` is set.
pub const QP_DUMP_EVERY: usize = 1000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown scenario '{0}' (expected one of: sim1, sim2, hover)")]
    UnknownScenario(String),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("simulation diverged at t = {t:.4} s: {reason}")]
    Diverged { t: f64, reason: String },
    #[error("simulation failed: {0}")]
    Simulation(SimError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0} verification check(s) failed")]
    VerifyFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::VerifyFailed(_) => 1,
            CliError::Config(_) | CliError::UnknownScenario(_) => 2,
            CliError::Model(_) => 3,
            CliError::Diverged { .. } | CliError::Simulation(_) => 4,
            CliError::Io { .. } => 5,
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Effective run configuration. Every field has a default, so an empty file
/// (or none at all) describes the `sim1` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `"surrogate"` or a path to a model file.
    pub model: String,
    pub scenario: String,
    /// Seconds; the scenario's own duration when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    pub dt: f64,
    pub perturb: f64,
    pub out: PathBuf,
    pub seed: u64,
    pub update: ControlUpdate,
    pub dump_qp: bool,
    pub gains: GainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: "surrogate".into(),
            scenario: "sim1".into(),
            duration: None,
            dt: 1e-3,
            perturb: 1.0,
            out: PathBuf::from("out"),
            seed: 0,
            update: ControlUpdate::ZeroOrderHold,
            dump_qp: false,
            gains: GainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks scalar settings and builds the gains for `model`.
    pub fn validate(&self, model: &RobotModel) -> Result<ControllerGains, CliError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(CliError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if let Some(d) = self.duration {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(CliError::Config(format!("duration must be non-negative, got {d}")));
            }
        }
        if !(self.perturb > 0.0 && self.perturb.is_finite()) {
            return Err(CliError::Config(format!("perturb must be positive, got {}", self.perturb)));
        }
        self.gains
            .build(initial_joint_configuration(model))
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "momflight", version, about = "Momentum control of a jet-powered humanoid: simulation and checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write the CSV log and metadata.
    Run(Overrides),
    /// Run the oracle suite and report each check.
    Verify(Overrides),
}

/// Flags layered over the configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model file, or "surrogate".
    #[arg(long)]
    pub model: Option<String>,
    /// sim1, sim2 or hover.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Simulated time in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Integration step in seconds.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Controller model mass/inertia factor.
    #[arg(long)]
    pub perturb: Option<f64>,
    /// Output directory (MOMFLIGHT_OUT takes precedence).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sampling seed for verify; runs are deterministic and only record it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file with a gain table.
    #[arg(long)]
    pub gains: Option<PathBuf>,
    /// Write the allocation QP every 1000 steps.
    #[arg(long)]
    pub dump_qp: bool,
}

impl Overrides {
    /// Defaults, then the config file, the gains file, the flags and the
    /// environment.
    pub fn resolve(&self, env_out: Option<OsString>) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(path) = &self.gains {
            let text = fs::read_to_string(path).map_err(io_error(path))?;
            config.gains =
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        }
        if let Some(m) = &self.model {
            config.model = m.clone();
        }
        if let Some(s) = &self.scenario {
            config.scenario = s.clone();
        }
        if self.duration.is_some() {
            config.duration = self.duration;
        }
        if let Some(dt) = self.dt {
            config.dt = dt;
        }
        if let Some(p) = self.perturb {
            config.perturb = p;
        }
        if let Some(o) = &self.out {
            config.out = o.clone();
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if self.dump_qp {
            config.dump_qp = true;
        }
        if let Some(o) = env_out.filter(|o| !o.is_empty()) {
            config.out = PathBuf::from(o);
        }
        Ok(config)
    }
}

/// Loaded model with the text it was read from.
pub struct LoadedModel {
    pub model: RobotModel,
    pub sha256: String,
}

pub fn load_model(spec: &str) -> Result<LoadedModel, CliError> {
    let (model, text) = if spec == "surrogate" {
        let model = surrogate_humanoid();
        let text = model.to_urdf();
        (model, text)
    } else {
        let path = Path::new(spec);
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        (parse_model(&text)?, text)
    };
    Ok(LoadedModel {
        model,
        sha256: hex(&Sha256::digest(text.as_bytes())),
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `git describe` of the source tree, or `"unknown"`.
pub fn git_describe() -> String {
    Process::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Contents of the `.meta.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub scenario: String,
    pub status: String,
    pub steps: usize,
    pub dt: f64,
    pub duration: f64,
    pub model: String,
    pub model_sha256: String,
    pub git_describe: String,
    pub gains: GainConfig,
    pub config: RunConfig,
}

/// Files written by [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub csv: PathBuf,
    pub metadata: PathBuf,
    pub qp_dump: Option<PathBuf>,
    pub records: Vec<LogRecord>,
}

fn write_outputs(
    config: &RunConfig,
    scenario: &Scenario,
    n_joints: usize,
    records: &[LogRecord],
    meta: &Metadata,
    qp_dumps: &[(f64, String)],
) -> Result<(PathBuf, PathBuf, Option<PathBuf>), CliError> {
    fs::create_dir_all(&config.out).map_err(io_error(&config.out))?;
    let csv = config.out.join(format!("{}.csv", scenario.name));
    let file = fs::File::create(&csv).map_err(io_error(&csv))?;
    write_csv(std::io::BufWriter::new(file), n_joints, records).map_err(io_error(&csv))?;
    let metadata = config.out.join(format!("{}.meta.json", scenario.name));
    let json = serde_json::to_string_pretty(meta).expect("metadata serializes");
    fs::write(&metadata, json + "\n").map_err(io_error(&metadata))?;
    let qp_dump = if config.dump_qp {
        let path = config.out.join(format!("{}.qp.txt", scenario.name));
        let mut text = String::new();
        for (t, dump) in qp_dumps {
            text.push_str(&format!("# t = {t:.6}\n{dump}\n"));
        }
        fs::write(&path, text).map_err(io_error(&path))?;
        Some(path)
    } else {
        None
    };
    Ok((csv, metadata, qp_dump))
}

/// Runs the configured scenario and writes its outputs. The returned
/// configuration in the metadata has the duration filled in.
pub fn run(config: &RunConfig) -> Result<RunOutput, CliError> {
    let loaded = load_model(&config.model)?;
    let scenario = match scenario_by_name(&config.scenario, config.perturb) {
        Ok(s) => s,
        Err(SimError::UnknownScenario(name)) => return Err(CliError::UnknownScenario(name)),
        Err(e) => return Err(CliError::Simulation(e)),
    };
    let gains = config.validate(&loaded.model)?;
    let mut effective = config.clone();
    let duration = config.duration.unwrap_or(scenario.duration);
    effective.duration = Some(duration);

    let n = loaded.model.dof();
    let mut sim = Simulation::new(loaded.model, &scenario, gains, config.dt).map_err(CliError::Simulation)?;
    sim.update = config.update;
    if config.dump_qp {
        sim.dump_qp_every = Some(QP_DUMP_EVERY);
    }
    let (records, failure) = match sim.run(duration) {
        Ok(records) => (records, None),
        Err(SimError::Diverged { t, reason, tail }) => (tail, Some(CliError::Diverged { t, reason })),
        Err(e) => (Vec::new(), Some(CliError::Simulation(e))),
    };
    let meta = Metadata {
        scenario: scenario.name.clone(),
        status: if failure.is_some() { "failed".into() } else { "completed".into() },
        steps: records.len(),
        dt: config.dt,
        duration,
        model: config.model.clone(),
        model_sha256: loaded.sha256,
        git_describe: git_describe(),
        gains: config.gains.clone(),
        config: effective,
    };
    let (csv, metadata, qp_dump) = write_outputs(config, &scenario, n, &records, &meta, &sim.qp_dumps)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(RunOutput {
        csv,
        metadata,
        qp_dump,
        records,
    })
}

/// Verification suite. A model that fails to load counts as a failed
/// model-invariant check.
pub fn verify(config: &RunConfig) -> Result<Vec<CheckResult>, CliError> {
    let model = match load_model(&config.model) {
        Ok(m) => m.model,
        Err(CliError::Model(e)) => {
            let check = CheckResult::failed("model invariants", e.to_string());
            println!("{check}");
            return Err(CliError::VerifyFailed(1));
        }
        Err(e) => return Err(e),
    };
    let gains = config.validate(&model)?;
    println!("verifying '{}' ({} joints), seed {}", model.name, model.dof(), config.seed);
    let results = run_checks(&model, &gains, config.seed);
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(CliError::VerifyFailed(failed));
    }
    Ok(results)
}

/// Parses `args` and executes the command, returning the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let env_out = std::env::var_os(OUT_ENV);
    let outcome = match &cli.command {
        Command::Run(o) => o.resolve(env_out).and_then(|c| {
            let out = run(&c)?;
            let last = out.records.last();
            println!(
                "{}: {} steps, final CoM error {:.3e} m, log {}",
                c.scenario,
                out.records.len(),
                last.map_or(0.0, |r| r.com_error.norm()),
                out.csv.display()
            );
            Ok(())
        }),
        Command::Verify(o) => o.resolve(env_out).and_then(|c| verify(&c).map(|_| ())),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
