//! The `blt` command line: one subcommand per toolkit operation, JSON in
//! and JSON out.

pub mod commands;
pub mod json;
pub mod schema;

use std::fmt;
use std::path::PathBuf;

use blt_core::BltError;
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use schema::QuadratureDoc;

pub const SEED_ENV: &str = "BLT_DEFAULT_SEED";

#[derive(Debug, Parser)]
#[command(name = "blt", version, about = "Brascamp-Lieb toolkit runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON input document.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Seed for stochastic steps; falls back to BLT_DEFAULT_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Monte Carlo sample count; selects Monte Carlo quadrature.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Midpoint cells per axis, or the grid size of the command.
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum Command {
    /// Closed-form constant of a direct-sum datum.
    BlConstant,
    /// Test kernel transversality and the exponents 1/(m-1).
    CheckClassC,
    /// Certificate reducing a datum to coordinate projections.
    Reduce,
    /// Seeded search over gaussian inputs.
    GaussianSearch {
        #[arg(long, default_value_t = 2000)]
        budget: usize,
    },
    /// Both sides of the discrete Finner inequality.
    FinnerDiscrete,
    /// Box extremizers and their exact ratio.
    Extremizer,
    /// Every term of Ball's inequality on grid inputs.
    BallCheck,
    /// Scale parameters from (β, κ, α₀, α₁, d).
    Delta0 {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        kappa: f64,
        #[arg(long)]
        alpha0: f64,
        #[arg(long)]
        alpha1: f64,
        #[arg(long)]
        d: usize,
        /// Number of maps; defaults to d.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Pigeonholed cell decomposition of a cube.
    Decompose,
    /// One induction-on-scales step on a cube.
    VerifyStep,
    /// The nonlinear ratio against the global bound.
    VerifyNonlinear,
    /// Solve F(x, η) = 0 for η at each point.
    IftSolve,
    /// Co-area integral of g against δ(F).
    DeltaIntegral,
    /// Convolution of surface-carried measures at a point.
    ConvolveSurfaces,
    /// Fourier extension of a grid function from a graph.
    Extension,
    /// Plancherel bridge and the multilinear extension ratio.
    #[command(name = "verify-thm74")]
    #[serde(rename = "verify-thm74")]
    VerifyThm74,
}

#[derive(Debug)]
pub enum RunError {
    Usage(String),
    Schema { field: String, message: String },
    Core(BltError),
}

impl RunError {
    pub fn schema(field: &str, message: impl Into<String>) -> Self {
        RunError::Schema { field: field.to_string(), message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Core(e) if e.is_refusal() => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Usage(m) => write!(f, "{m}"),
            RunError::Schema { field, message } => write!(f, "field `{field}`: {message}"),
            RunError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<BltError> for RunError {
    fn from(e: BltError) -> Self {
        RunError::Core(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Computed,
    Certified,
    Violated,
    Inconclusive,
    Refused,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Computed | Status::Certified => 0,
            _ => 2,
        }
    }

    pub fn verdict(ok: bool) -> Self {
        if ok {
            Status::Certified
        } else {
            Status::Violated
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub seed_source: &'static str,
    pub threads: Option<usize>,
    pub samples: Option<usize>,
    pub resolution: Option<usize>,
    pub tol: Option<f64>,
}

impl RunConfig {
    pub fn from_cli(cli: &Cli, env_seed: Option<String>) -> Result<Self, RunError> {
        let (seed, seed_source) = match (cli.seed, env_seed) {
            (Some(s), _) => (Some(s), "flag"),
            (None, Some(v)) => {
                let s = v
                    .trim()
                    .parse()
                    .map_err(|_| RunError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
                (Some(s), "env")
            }
            (None, None) => (None, "none"),
        };
        if let Some(t) = cli.tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(RunError::Usage(format!("--tol must be positive, got {t}")));
            }
        }
        if cli.threads == Some(0) || cli.samples == Some(0) || cli.resolution == Some(0) {
            return Err(RunError::Usage("--threads, --samples and --resolution must be positive".into()));
        }
        Ok(Self {
            command: cli.command.clone(),
            input: cli.input.clone(),
            output: cli.output.clone(),
            seed,
            seed_source,
            threads: cli.threads,
            samples: cli.samples,
            resolution: cli.resolution,
            tol: cli.tol,
        })
    }
}

/// What a command sees: the config, the parsed input and a record of every
/// default it resolved.
pub struct Context {
    pub config: RunConfig,
    input: Option<Value>,
    resolved: Map<String, Value>,
}

impl Context {
    pub fn new(config: RunConfig) -> Self {
        Self { config, input: None, resolved: Map::new() }
    }

    pub fn input<T: DeserializeOwned>(&mut self) -> Result<T, RunError> {
        let path = self.config.input.as_ref().ok_or_else(|| RunError::Usage("this command needs --input".into()))?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let doc = serde_json::from_str(&text).map_err(|e| RunError::schema("input", e.to_string()))?;
        self.input = serde_json::from_str(&text).ok();
        Ok(doc)
    }

    pub fn seed(&mut self) -> Result<u64, RunError> {
        let s = self
            .config
            .seed
            .ok_or_else(|| RunError::Usage(format!("this command is stochastic: pass --seed or set {SEED_ENV}")))?;
        Ok(s)
    }

    pub fn resolve(&mut self, key: &str, value: Value) {
        self.resolved.insert(key.to_string(), value);
    }

    pub fn tol(&mut self, default: f64) -> f64 {
        let t = self.config.tol.unwrap_or(default);
        self.resolve("tol", json!(t));
        t
    }

    /// Flags beat the document: --samples selects Monte Carlo, --resolution
    /// midpoint; otherwise the document's `quadrature`, else midpoint at
    /// `default_resolution`.
    pub fn quadrature(
        &mut self,
        doc: Option<QuadratureDoc>,
        default_resolution: usize,
    ) -> Result<blt_core::QuadratureSpec, RunError> {
        let chosen = match (self.config.samples, self.config.resolution, doc) {
            (Some(samples), _, _) => QuadratureDoc::MonteCarlo { samples },
            (None, Some(resolution), _) => QuadratureDoc::Midpoint { resolution },
            (None, None, Some(d)) => d,
            (None, None, None) => QuadratureDoc::Midpoint { resolution: default_resolution },
        };
        let spec = match chosen {
            QuadratureDoc::MonteCarlo { .. } => chosen.with_seed(Some(self.seed()?))?,
            QuadratureDoc::Midpoint { .. } => chosen.with_seed(None)?,
        };
        self.resolve("quadrature", quadrature_json(&spec));
        Ok(spec)
    }

    pub fn report(&self, status: Status, result: Value, diagnostic: Option<String>) -> Value {
        let mut config = serde_json::to_value(&self.config).expect("config serializes");
        config["resolved"] = Value::Object(self.resolved.clone());
        json!({
            "command": command_name(&self.config.command),
            "status": status,
            "diagnostic": diagnostic,
            "config": config,
            "input": self.input,
            "result": result,
        })
    }
}

pub fn quadrature_json(spec: &blt_core::QuadratureSpec) -> Value {
    match *spec {
        blt_core::QuadratureSpec::Midpoint { resolution } => json!({"kind": "midpoint", "resolution": resolution}),
        blt_core::QuadratureSpec::MonteCarlo { samples, seed } => {
            json!({"kind": "monte_carlo", "samples": samples, "seed": seed})
        }
    }
}

pub fn command_name(c: &Command) -> String {
    serde_json::to_value(c).expect("command serializes")["name"].as_str().unwrap_or_default().to_string()
}

/// Runs one command and writes its report. Returns the exit status.
pub fn run(cli: Cli, env_seed: Option<String>) -> u8 {
    let config = match RunConfig::from_cli(&cli, env_seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    if let Some(n) = config.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return 1;
        }
    }
    let mut ctx = Context::new(config);
    let (status, report) = match commands::dispatch(&mut ctx) {
        Ok((status, result)) => (status, ctx.report(status, result, None)),
        Err(e) if e.exit_code() == 2 => (Status::Refused, ctx.report(Status::Refused, Value::Null, Some(e.to_string()))),
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let text = json::to_string(&report) + "\n";
    match &ctx.config.output {
        Some(path) => {
            if let Err(e) = json::write_atomic(path, &text) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return 1;
            }
        }
        None => print!("{text}"),
    }
    status.exit_code()
}
