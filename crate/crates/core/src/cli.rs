//! Command-line front end: scenario generation, single runs and
//! baseline-versus-proposed comparisons.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use cavroute::netgraph::{build_grid, generate_requests, generate_scenario, DemandConfig, GridConfig, Scenario};
use cavroute::sim::{
    self, sampled_audit, write_comparison, write_per_request, write_summary, write_usage, ComparisonRow, Foresight,
    Mode, SimConfig, SimError, SimRun, SummaryRow,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Step of the sampled safety audit run after every simulation, seconds.
const AUDIT_STEP: f64 = 0.01;
const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

const DEFAULTS_NOTE: &str = "Physical defaults are artifact choices, not published values: \
v_max 15 m/s, v_min 1 m/s, u in [-3, 3] m/s^2, rho 2 m, phi 0.5 s, dt 0.1 s, \
road length 100 m, intersection cell 30 m, lane width 3.5 m, approach lane 40 m.";

#[derive(Parser, Debug)]
#[command(name = "cavroute", version, about = "Shortest-time routing with signal-free intersection coordination")]
#[command(after_help = DEFAULTS_NOTE)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a random scenario file.
    Generate(GenerateArgs),
    /// Run one mode and write per-request, usage and summary CSVs.
    Run(RunArgs),
    /// Run both modes on identical scenarios for every seed.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 70 nodes, 198 edges, 20 intersections, 4 stations.
    Paper,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grid preset used when generating a scenario.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Number of travel requests to draw.
    #[arg(long)]
    pub requests: Option<usize>,
    /// Exit-time search step in seconds (artifact default 0.1).
    #[arg(long)]
    pub dt: Option<f64>,
    /// What the baseline sees when pricing edges at a leg start.
    #[arg(long, value_enum)]
    pub baseline_foresight: Option<ForesightArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ForesightArg {
    Committed,
    Instantaneous,
}

impl From<ForesightArg> for Foresight {
    fn from(f: ForesightArg) -> Self {
        match f {
            ForesightArg::Committed => Foresight::Committed,
            ForesightArg::Instantaneous => Foresight::Instantaneous,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Proposed,
    Baseline,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Proposed => Mode::Proposed,
            ModeArg::Baseline => Mode::Baseline,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Demand seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scenario file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scenario file; generated from the grid config when absent.
    #[arg(long, conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Demand seed used when generating, and the label in summary.csv.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    /// Scenario file whose graph is reused; requests are redrawn per seed.
    #[arg(long, conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,
    /// Comma-separated demand seeds (default 1,2,3,4,5).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Contents of the JSON config file. Every field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<Preset>,
    pub grid: GridConfig,
    pub demand: DemandConfig,
    pub sim: SimConfig,
    pub seeds: Option<Vec<u64>>,
}

/// Everything needed to reproduce a command's outputs.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub scenario_path: Option<PathBuf>,
    /// Grid used to generate scenarios; absent when a scenario file supplies the graph.
    pub grid: Option<GridConfig>,
    pub demand: DemandConfig,
    pub sim: SimConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

/// Failure classes with their process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Failure {
    Other = 1,
    Config = 2,
    Scenario = 3,
    Audit = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Failure,
    pub source: anyhow::Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }
}

trait Classify<T> {
    fn or_fail(self, kind: Failure) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_fail(self, kind: Failure) -> Result<T, CliError> {
        self.map_err(|e| CliError { kind, source: e.into() })
    }
}

fn fail(kind: Failure, msg: String) -> CliError {
    CliError { kind, source: anyhow!(msg) }
}

fn sim_failure(e: SimError) -> CliError {
    let kind = match e {
        SimError::Route { .. } => Failure::Scenario,
        _ => Failure::Config,
    };
    CliError { kind, source: e.into() }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a),
    }
}

/// Config file merged with flags; flags win.
struct Resolved {
    config_path: Option<PathBuf>,
    grid: GridConfig,
    demand: DemandConfig,
    sim: SimConfig,
    seeds: Option<Vec<u64>>,
}

fn resolve(common: &Common) -> Result<Resolved, CliError> {
    let file = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display())).or_fail(Failure::Config)?;
            serde_json::from_str::<ConfigFile>(&text)
                .with_context(|| format!("parsing config {}", p.display()))
                .or_fail(Failure::Config)?
        }
        None => ConfigFile::default(),
    };
    let mut grid = file.grid;
    if common.preset.or(file.preset) == Some(Preset::Paper) {
        grid = GridConfig::paper();
    }
    let mut demand = file.demand;
    if let Some(n) = common.requests {
        demand.requests = n;
    }
    let mut sim = file.sim;
    if let Some(dt) = common.dt {
        sim.safety.dt = dt;
    }
    if let Some(f) = common.baseline_foresight {
        sim.baseline_foresight = f.into();
    }
    grid.validate().or_fail(Failure::Config)?;
    if !(demand.horizon.is_finite() && demand.horizon >= 0.0) {
        return Err(fail(Failure::Config, format!("demand horizon must be non-negative, got {}", demand.horizon)));
    }
    sim.validate().map_err(sim_failure)?;
    Ok(Resolved { config_path: common.config.clone(), grid, demand, sim, seeds: file.seeds })
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path).with_context(|| format!("reading scenario {}", path.display())).or_fail(Failure::Scenario)?;
    Scenario::from_json(&text).with_context(|| format!("loading scenario {}", path.display())).or_fail(Failure::Scenario)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).with_context(|| format!("creating {}", path.display())).or_fail(Failure::Other)
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    body(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display())).or_fail(Failure::Other)
}

fn make_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).or_fail(Failure::Other)
}

fn write_manifest(dir: &Path, m: &RunManifest) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(m).or_fail(Failure::Other)?;
    write_file(&dir.join("manifest.json"), |w| writeln!(w, "{text}"))
}

fn manifest(command: &str, r: &Resolved, scenario: Option<&Path>, seeds: Vec<u64>, out: &Path) -> RunManifest {
    RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_path: r.config_path.clone(),
        scenario_path: scenario.map(Path::to_path_buf),
        grid: scenario.is_none().then_some(r.grid),
        demand: r.demand,
        sim: r.sim,
        seeds,
        out: out.to_path_buf(),
    }
}

fn generate(a: GenerateArgs) -> Result<(), CliError> {
    let r = resolve(&a.common)?;
    let mut demand = r.demand;
    if let Some(seed) = a.seed {
        demand.seed = seed;
    }
    let scenario = generate_scenario(&r.grid, &demand).or_fail(Failure::Scenario)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        make_dir(dir)?;
    }
    write_file(&a.out, |w| writeln!(w, "{}", scenario.to_json()))?;
    log::info!(
        "wrote {} ({} nodes, {} edges, {} requests)",
        a.out.display(),
        scenario.graph.node_count(),
        scenario.graph.edges().len(),
        scenario.requests.len()
    );
    Ok(())
}

/// One simulation with its safety checks.
struct Audited {
    run: SimRun,
    analytic: usize,
    sampled: usize,
}

fn simulate(scenario: &Scenario, cfg: &SimConfig) -> Result<Audited, CliError> {
    let clock = Instant::now();
    let run = sim::run(scenario, cfg).map_err(sim_failure)?;
    let analytic = run.ledgers.violations(&cfg.safety).len();
    let sampled = sampled_audit(&scenario.graph, &run.ledgers, &cfg.safety, AUDIT_STEP).len();
    log::info!(
        "{} mode: {} requests, total {:.1} h, {} failed, {:.2} s",
        cfg.mode,
        run.report.records.len(),
        run.report.total() / 3600.0,
        run.report.failed(),
        clock.elapsed().as_secs_f64()
    );
    Ok(Audited { run, analytic, sampled })
}

fn audit_error(rows: &[SummaryRow]) -> Result<(), CliError> {
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| r.analytic_violations + r.sampled_violations > 0)
        .map(|r| {
            format!("seed {} {}: {} analytic, {} sampled", r.seed, r.mode, r.analytic_violations, r.sampled_violations)
        })
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(fail(Failure::Audit, format!("safety audit failed: {}", bad.join("; "))))
    }
}

fn run(a: RunArgs) -> Result<(), CliError> {
    let mut r = resolve(&a.common)?;
    if let Some(m) = a.mode {
        r.sim.mode = m.into();
    }
    if let Some(seed) = a.seed {
        r.demand.seed = seed;
    }
    let scenario = match &a.scenario {
        Some(p) => load_scenario(p)?,
        None => generate_scenario(&r.grid, &r.demand).or_fail(Failure::Scenario)?,
    };
    let seed = r.demand.seed;
    let done = simulate(&scenario, &r.sim)?;
    let report = &done.run.report;
    let row = SummaryRow::new(seed, report, done.analytic, done.sampled);
    make_dir(&a.out)?;
    write_file(&a.out.join("per_request.csv"), |w| write_per_request(w, report))?;
    write_file(&a.out.join("usage.csv"), |w| write_usage(w, report, &scenario.graph))?;
    write_file(&a.out.join("summary.csv"), |w| write_summary(w, std::slice::from_ref(&row)))?;
    write_manifest(&a.out, &manifest("run", &r, a.scenario.as_deref(), vec![seed], &a.out))?;
    audit_error(&[row])
}

struct SeedResult {
    seed: u64,
    scenario: Scenario,
    baseline: Audited,
    proposed: Audited,
}

fn compare(a: CompareArgs) -> Result<(), CliError> {
    let r = resolve(&a.common)?;
    let seeds = a.seeds.clone().or(r.seeds.clone()).unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
    if seeds.is_empty() {
        return Err(fail(Failure::Config, "seed list is empty".into()));
    }
    let base = a.scenario.as_deref().map(load_scenario).transpose()?;
    let requests = match (&base, a.common.requests) {
        (Some(s), None) => s.requests.len(),
        _ => r.demand.requests,
    };
    let scenario_for = |seed: u64| -> Result<Scenario, CliError> {
        let demand = DemandConfig { requests, seed, ..r.demand };
        let graph = match &base {
            Some(s) => s.graph.clone(),
            None => build_grid(&r.grid).or_fail(Failure::Scenario)?,
        };
        let reqs = generate_requests(&graph, &demand).or_fail(Failure::Scenario)?;
        Scenario::new(graph, reqs).or_fail(Failure::Scenario)
    };
    let results: Vec<SeedResult> = seeds
        .par_iter()
        .map(|&seed| {
            let scenario = scenario_for(seed)?;
            let (baseline, proposed) = rayon::join(
                || simulate(&scenario, &SimConfig { mode: Mode::Baseline, ..r.sim }),
                || simulate(&scenario, &SimConfig { mode: Mode::Proposed, ..r.sim }),
            );
            Ok(SeedResult { seed, scenario, baseline: baseline?, proposed: proposed? })
        })
        .collect::<Result<_, CliError>>()?;

    make_dir(&a.out)?;
    let mut summary = Vec::new();
    let mut comparison = Vec::new();
    for s in &results {
        let dir = a.out.join(format!("seed_{}", s.seed));
        make_dir(&dir)?;
        let (b, p) = (&s.baseline.run.report, &s.proposed.run.report);
        write_file(&dir.join("scenario.json"), |w| writeln!(w, "{}", s.scenario.to_json()))?;
        write_file(&dir.join("per_request.csv"), |w| {
            write_per_request(&mut *w, b)?;
            write_per_request(w, p)
        })?;
        write_file(&dir.join("usage_baseline.csv"), |w| write_usage(w, b, &s.scenario.graph))?;
        write_file(&dir.join("usage_proposed.csv"), |w| write_usage(w, p, &s.scenario.graph))?;
        summary.push(SummaryRow::new(s.seed, b, s.baseline.analytic, s.baseline.sampled));
        summary.push(SummaryRow::new(s.seed, p, s.proposed.analytic, s.proposed.sampled));
        comparison.push(ComparisonRow::new(s.seed, b, p));
    }
    write_file(&a.out.join("summary.csv"), |w| write_summary(w, &summary))?;
    write_file(&a.out.join("comparison.csv"), |w| write_comparison(w, &comparison))?;
    let mut r = r;
    r.demand.requests = requests;
    write_manifest(&a.out, &manifest("compare", &r, a.scenario.as_deref(), seeds, &a.out))?;
    if let Some(m) = ComparisonRow::mean(&comparison) {
        log::info!(
            "mean total: baseline {:.1} h, proposed {:.1} h ({:.1}% better)",
            m.baseline_total_s / 3600.0,
            m.proposed_total_s / 3600.0,
            m.improvement_pct()
        );
    }
    audit_error(&summary)
}
