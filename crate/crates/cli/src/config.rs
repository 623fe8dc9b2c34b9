use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use gslab_core::solver::{GridConfig, SolveConfig};
use gslab_core::Mode;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Simulate,
    SolveSt,
    SolveStTc,
    SolveQd,
    Boundaries,
    VerifyGs,
    TrapScan,
    Hormander,
    #[value(name = "oracle-1d")]
    #[serde(rename = "oracle-1d")]
    Oracle1d,
    Compare,
}

impl Pipeline {
    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::Simulate => "simulate",
            Pipeline::SolveSt => "solve-st",
            Pipeline::SolveStTc => "solve-st-tc",
            Pipeline::SolveQd => "solve-qd",
            Pipeline::Boundaries => "boundaries",
            Pipeline::VerifyGs => "verify-gs",
            Pipeline::TrapScan => "trap-scan",
            Pipeline::Hormander => "hormander",
            Pipeline::Oracle1d => "oracle-1d",
            Pipeline::Compare => "compare",
        }
    }
}

/// Command line. A JSON file given with `--config` overrides any flag.
#[derive(Debug, Parser)]
#[command(
    name = "gslab",
    version,
    about = "Optimal stopping experiments for diffusion testing and detection"
)]
pub struct Cli {
    /// Pipeline to run.
    #[arg(value_enum)]
    pub command: Pipeline,
    /// Built-in name, catalog entry or model JSON file.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub mode: Option<String>,
    /// `N_phi,N_x`.
    #[arg(long)]
    pub grid: Option<String>,
    /// `phi_min,phi_max`.
    #[arg(long, allow_hyphen_values = true)]
    pub phi_range: Option<String>,
    /// `x_min,x_max`.
    #[arg(long, allow_hyphen_values = true)]
    pub x_range: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated perturbation sizes.
    #[arg(long)]
    pub eps_list: Option<String>,
    /// Run directory; defaults to `runs/<command>-<unix time>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model catalog file.
    #[arg(long, env = gslab_core::model::CATALOG_ENV)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    #[arg(long)]
    pub lambda_dyn: Option<f64>,
    #[arg(long)]
    pub lambda_cost: Option<f64>,
    #[arg(long)]
    pub phi0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub n_paths: Option<u64>,
    /// `u_min,u_max` for the Hörmander scan.
    #[arg(long, allow_hyphen_values = true)]
    pub u_range: Option<String>,
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Run directories (or their manifests) to compare.
    #[arg(long, num_args = 2, value_names = ["RUN_A", "RUN_B"])]
    pub runs: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub phi0: f64,
    pub x0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            phi0: 1.0,
            x0: 0.0,
            horizon: 1.0,
            dt: 1e-3,
            n_paths: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanSettings {
    pub u_range: (f64, f64),
    pub x_range: (f64, f64),
    pub n_u: usize,
    pub n_x: usize,
    pub n_max: usize,
}

impl Default for ScanSettings {
    fn default() -> Self {
        ScanSettings {
            u_range: (-2.0, 2.0),
            x_range: (-4.0, 4.0),
            n_u: 41,
            n_x: 81,
            n_max: 6,
        }
    }
}

/// Everything a run needs. `out` and `catalog` locate files and are left out
/// of the echo so that identical runs produce identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: Pipeline,
    pub model: Option<String>,
    pub mode: Option<Mode>,
    pub grid: GridConfig,
    pub solve: SolveConfig,
    pub seed: u64,
    pub eps_list: Vec<f64>,
    pub lambda_dyn: Option<f64>,
    pub lambda_cost: Option<f64>,
    pub sim: SimSettings,
    pub scan: ScanSettings,
    pub budget_cells: f64,
    pub oracle_nodes: usize,
    pub runs: Vec<PathBuf>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub catalog: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: Pipeline::SolveSt,
            model: None,
            mode: None,
            grid: GridConfig::default(),
            solve: SolveConfig::default(),
            seed: 0,
            eps_list: vec![1e-3, 1e-2, 1e-1],
            lambda_dyn: None,
            lambda_cost: None,
            sim: SimSettings::default(),
            scan: ScanSettings::default(),
            budget_cells: gslab_core::conjecture::VIOLATION_BUDGET,
            oracle_nodes: 4097,
            runs: Vec::new(),
            out: None,
            catalog: None,
        }
    }
}

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number '{t}' in '{s}'"))
        })
        .collect()
}

pub fn parse_pair(s: &str) -> Result<(f64, f64)> {
    match parse_list(s)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => bail!("expected two comma-separated numbers, got '{s}'"),
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [a, b] => Ok((a.trim().parse()?, b.trim().parse()?)),
        _ => bail!("--grid expects N_phi,N_x, got '{s}'"),
    }
}

/// Recursive object merge; `over` wins.
fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn default_mode(p: Pipeline) -> Option<Mode> {
    match p {
        Pipeline::SolveSt => Some(Mode::Testing),
        Pipeline::SolveStTc => Some(Mode::TestingTimeChanged),
        Pipeline::SolveQd => Some(Mode::Detection),
        _ => None,
    }
}

impl RunConfig {
    pub fn from_cli(cli: &Cli) -> Result<RunConfig> {
        let mut c = RunConfig {
            command: cli.command,
            model: cli.model.clone(),
            seed: cli.seed.unwrap_or(0),
            lambda_dyn: cli.lambda_dyn,
            lambda_cost: cli.lambda_cost,
            runs: cli.runs.clone(),
            ..RunConfig::default()
        };
        if let Some(m) = &cli.mode {
            c.mode = Some(m.parse()?);
        }
        if let Some(g) = &cli.grid {
            let (a, b) = parse_grid(g)?;
            c.grid.n_phi = a;
            c.grid.n_x = b;
        }
        if let Some(r) = &cli.phi_range {
            (c.grid.phi_min, c.grid.phi_max) = parse_pair(r)?;
        }
        if let Some(r) = &cli.x_range {
            let p = parse_pair(r)?;
            c.grid.x_range = Some(p);
            c.scan.x_range = p;
        }
        if let Some(r) = &cli.u_range {
            c.scan.u_range = parse_pair(r)?;
        }
        if let Some(n) = cli.n_max {
            c.scan.n_max = n;
        }
        if let Some(e) = &cli.eps_list {
            c.eps_list = parse_list(e)?;
        }
        if let Some(t) = cli.tol {
            c.solve.tol = t;
        }
        if let Some(s) = cli.max_sweeps {
            c.solve.max_sweeps = s;
        }
        let sim = &mut c.sim;
        sim.phi0 = cli.phi0.unwrap_or(sim.phi0);
        sim.x0 = cli.x0.unwrap_or(sim.x0);
        sim.horizon = cli.horizon.unwrap_or(sim.horizon);
        sim.dt = cli.dt.unwrap_or(sim.dt);
        sim.n_paths = cli.n_paths.unwrap_or(sim.n_paths);

        if let Some(path) = &cli.config {
            c = c.overridden_by(path)?;
            c.command = cli.command;
        }
        if let Some(m) = default_mode(c.command) {
            c.mode = Some(m);
        }
        c.out = cli.out.clone();
        c.catalog = cli.catalog.clone();
        c.validate()?;
        Ok(c)
    }

    fn overridden_by(&self, path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let over: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("malformed config {}", path.display()))?;
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, over);
        let mut c: RunConfig =
            serde_json::from_value(base).with_context(|| format!("invalid config {}", path.display()))?;
        c.out = self.out.clone();
        c.catalog = self.catalog.clone();
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.solve;
        if !(s.tol > 0.0 && s.u_refine >= 1.0 && s.max_sweeps > 0) {
            bail!("solver tolerances must be positive");
        }
        if self.eps_list.iter().any(|e| !(*e > 0.0)) {
            bail!("eps-list entries must be positive");
        }
        if !(self.budget_cells > 0.0) {
            bail!("budget_cells must be positive");
        }
        if self.command == Pipeline::Compare {
            if self.runs.len() != 2 {
                bail!("compare needs --runs RUN_A RUN_B");
            }
        } else if self.model.is_none() {
            bail!("--model is required for {}", self.command.as_str());
        }
        Ok(())
    }

    pub fn mode_or(&self, fallback: Mode) -> Mode {
        self.mode.unwrap_or(fallback)
    }
}
