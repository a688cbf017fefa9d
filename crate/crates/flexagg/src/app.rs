//! Command-line front end: scenario files, solving, simulation
//! verification, built-in study reproductions, and parameter sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bidding::{
    balance_residual, max_capacity, solve_bidding, sweep, sweep_to_csv, synergy_factor, BidError,
    BidResult, MarketMode, ObjectiveMode, Scenario,
};
use crate::market::PriceForecast;
use crate::policy::{validate as validate_policy, PolicyStructure};
use crate::resource::{
    make_battery, make_freezer, make_turbine, standalone_capacity, FreezerSpec, ResourceParams,
};
use crate::simulate::{
    gen_signal, simulate, trace_to_csv, verify_trace, ActivationSignal, SignalKind,
};
use crate::timegrid::{GridDurations, TimeGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_SIM_VIOLATION: i32 = 4;

// ---------------------------------------------------------------------------
// Scenario file schema
// ---------------------------------------------------------------------------

/// A typed resource constructor; field names carry explicit units.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResourceSpec {
    Battery {
        label: String,
        #[serde(rename = "p_max_kW")]
        p_max_kw: f64,
        #[serde(rename = "x_bar_kWh")]
        x_bar_kwh: f64,
        #[serde(rename = "x0_kWh")]
        x0_kwh: f64,
    },
    Freezer {
        label: String,
        #[serde(rename = "p_min_kW")]
        p_min_kw: f64,
        #[serde(rename = "p_max_kW")]
        p_max_kw: f64,
        #[serde(rename = "ramp_kW_per_min")]
        ramp_kw_per_min: f64,
        #[serde(rename = "x_bar_kWh")]
        x_bar_kwh: f64,
        #[serde(rename = "theta_in_min_C")]
        theta_in_min_c: f64,
        #[serde(rename = "theta_in_max_C")]
        theta_in_max_c: f64,
        #[serde(rename = "theta_out_C")]
        theta_out_c: f64,
        t_dis_s: f64,
        fill: f64,
        delay_s: u64,
    },
    Turbine {
        label: String,
        #[serde(rename = "p_min_kW")]
        p_min_kw: f64,
        #[serde(rename = "p_max_kW")]
        p_max_kw: f64,
        #[serde(rename = "ramp_kW_per_min")]
        ramp_kw_per_min: f64,
    },
}

impl ResourceSpec {
    pub fn label(&self) -> &str {
        match self {
            ResourceSpec::Battery { label, .. } => label,
            ResourceSpec::Freezer { label, .. } => label,
            ResourceSpec::Turbine { label, .. } => label,
        }
    }

    pub fn delay_s(&self) -> u64 {
        match self {
            ResourceSpec::Freezer { delay_s, .. } => *delay_s,
            _ => 0,
        }
    }

    pub fn build(&self, grid: &TimeGrid) -> Result<ResourceParams, String> {
        match self {
            ResourceSpec::Battery {
                label,
                p_max_kw,
                x_bar_kwh,
                x0_kwh,
            } => make_battery(label, *p_max_kw, *x_bar_kwh, *x0_kwh, grid)
                .map_err(|e| e.to_string()),
            ResourceSpec::Freezer {
                label,
                p_min_kw,
                p_max_kw,
                ramp_kw_per_min,
                x_bar_kwh,
                theta_in_min_c,
                theta_in_max_c,
                theta_out_c,
                t_dis_s,
                fill,
                delay_s,
            } => {
                let spec = FreezerSpec {
                    p_min_kw: *p_min_kw,
                    p_max_kw: *p_max_kw,
                    r_min_kw_s: -ramp_kw_per_min / 60.0,
                    r_max_kw_s: ramp_kw_per_min / 60.0,
                    x_bar_kwh: *x_bar_kwh,
                    theta_in_min_c: *theta_in_min_c,
                    theta_in_max_c: *theta_in_max_c,
                    theta_out_c: *theta_out_c,
                    t_dis_s: *t_dis_s,
                    fill: *fill,
                };
                make_freezer(label, &spec, *delay_s, grid).map_err(|e| e.to_string())
            }
            ResourceSpec::Turbine {
                label,
                p_min_kw,
                p_max_kw,
                ramp_kw_per_min,
            } => make_turbine(label, *p_min_kw, *p_max_kw, *ramp_kw_per_min, grid)
                .map_err(|e| e.to_string()),
        }
    }
}

fn default_true() -> bool {
    true
}

/// Per-resource policy structure; the control delay is taken from the
/// resource itself.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StructureSpec {
    pub bandwidth: usize,
    #[serde(default = "default_true")]
    pub time_invariant_gamma: bool,
}

/// Price section: either flat prices or a CSV file (path relative to the
/// scenario file).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PricesSpec {
    Flat {
        #[serde(rename = "c_DA_per_kWh")]
        c_da_per_kwh: f64,
        #[serde(rename = "c_ID_per_kWh")]
        c_id_per_kwh: f64,
        #[serde(rename = "c_SFR_per_kW")]
        c_sfr_per_kw: f64,
        #[serde(rename = "c_up_per_kWh")]
        c_up_per_kwh: f64,
        #[serde(rename = "c_dn_per_kWh")]
        c_dn_per_kwh: f64,
    },
    Csv { csv: String },
}

/// Optional default activation signal for later simulation runs.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SignalSpecFile {
    #[serde(default)]
    pub spec: Option<String>,
    #[serde(default)]
    pub csv: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Output file names, relative to the output directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutputsSpec {
    #[serde(default = "default_result_name")]
    pub result_json: String,
    #[serde(default = "default_summary_name")]
    pub summary_txt: String,
}

fn default_result_name() -> String {
    "result.json".into()
}

fn default_summary_name() -> String {
    "summary.txt".into()
}

impl Default for OutputsSpec {
    fn default() -> Self {
        OutputsSpec {
            result_json: default_result_name(),
            summary_txt: default_summary_name(),
        }
    }
}

/// The on-disk scenario document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub grid: GridDurations,
    pub resources: Vec<ResourceSpec>,
    pub structures: Vec<StructureSpec>,
    pub market_mode: MarketMode,
    pub objective_mode: ObjectiveMode,
    #[serde(default)]
    pub prices: Option<PricesSpec>,
    #[serde(default)]
    pub signal: Option<SignalSpecFile>,
    #[serde(default)]
    pub outputs: OutputsSpec,
}

/// The result document written by `solve`: the resolved scenario is kept
/// alongside the solution so that `simulate` is self-contained.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultFile {
    pub scenario: ScenarioFile,
    pub result: BidResult,
}

/// Builds the in-memory problem from a scenario document.  `base_dir`
/// resolves relative paths referenced by the document.
pub fn build_scenario(file: &ScenarioFile, base_dir: &Path) -> Result<Scenario, String> {
    let grid = TimeGrid::new(file.grid).map_err(|e| format!("grid: {e}"))?;
    if file.structures.len() != file.resources.len() {
        return Err(format!(
            "{} resources but {} structures",
            file.resources.len(),
            file.structures.len()
        ));
    }
    let mut resources = Vec::with_capacity(file.resources.len());
    let mut structures = Vec::with_capacity(file.resources.len());
    for (spec, st) in file.resources.iter().zip(&file.structures) {
        resources.push(
            spec.build(&grid)
                .map_err(|e| format!("resource {}: {e}", spec.label()))?,
        );
        structures.push(PolicyStructure::new(
            &grid,
            st.bandwidth,
            spec.delay_s(),
            st.time_invariant_gamma,
        ));
    }
    let prices = match &file.prices {
        None => None,
        Some(PricesSpec::Flat {
            c_da_per_kwh,
            c_id_per_kwh,
            c_sfr_per_kw,
            c_up_per_kwh,
            c_dn_per_kwh,
        }) => Some(PriceForecast::flat(
            &grid,
            *c_da_per_kwh,
            *c_id_per_kwh,
            *c_sfr_per_kw,
            *c_up_per_kwh,
            *c_dn_per_kwh,
        )),
        Some(PricesSpec::Csv { csv }) => {
            let path = base_dir.join(csv);
            let text = fs::read_to_string(&path)
                .map_err(|e| format!("prices file {}: {e}", path.display()))?;
            Some(PriceForecast::from_csv(&text, &grid).map_err(|e| format!("prices: {e}"))?)
        }
    };
    Ok(Scenario {
        grid,
        resources,
        structures,
        market_mode: file.market_mode,
        objective_mode: file.objective_mode,
        prices,
    })
}

/// Deserializes JSON, reporting schema violations with a JSON pointer.
fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de)
        .map_err(|e| format!("schema violation at {}: {}", json_pointer(e.path()), e.inner()))
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        use serde_path_to_error::Segment;
        match seg {
            Segment::Map { key } => {
                out.push('/');
                out.push_str(key);
            }
            Segment::Seq { index } => {
                write!(out, "/{index}").unwrap();
            }
            Segment::Enum { variant } => {
                out.push('/');
                out.push_str(variant);
            }
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        "/".into()
    } else {
        out
    }
}

// ---------------------------------------------------------------------------
// Command-line interface
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "flexagg",
    version,
    about = "Robust regulation-capacity bidding for aggregated flexible resources"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve a scenario file and write result.json plus a summary.
    Solve {
        scenario: PathBuf,
        /// Output directory (defaults to the current directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a solved result against an activation signal and verify
    /// the trace.
    Simulate {
        result: PathBuf,
        /// `constant:V`, `square:PERIOD_S:AMPLITUDE`, `walk:STEP:BIAS`,
        /// or a CSV file with one sample per line.
        #[arg(long)]
        signal: String,
        /// Seed for the bounded-walk generator.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-run a built-in study case (battery-freezer, battery-turbine, or
    /// sweep) and report relative deviations from the published values.
    Reproduce {
        case: String,
        /// Largest accepted relative deviation, in percent.
        #[arg(long, default_value_t = 5.0)]
        tolerance: f64,
    },
    /// Solve the capacity problem over a grid of battery sizes.
    Sweep {
        scenario: PathBuf,
        /// CSV with `p_bar_kW,x_bar_kWh` per line.
        #[arg(long)]
        grid: PathBuf,
    },
}

/// Entry point used by the binary.
pub fn run() -> i32 {
    run_with_args(std::env::args())
}

/// Testable entry point; returns the process exit code.
pub fn run_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.cmd {
        Cmd::Solve { scenario, out } => cmd_solve(&scenario, out.as_deref()),
        Cmd::Simulate {
            result,
            signal,
            seed,
        } => cmd_simulate(&result, &signal, seed),
        Cmd::Reproduce { case, tolerance } => cmd_reproduce(&case, tolerance),
        Cmd::Sweep { scenario, grid } => cmd_sweep(&scenario, &grid),
    }
}

fn bid_exit(e: &BidError) -> i32 {
    match e {
        BidError::Infeasible { .. } | BidError::Unbounded => EXIT_INFEASIBLE,
        _ => EXIT_VALIDATION,
    }
}

/// Dispatches to the solver selected by the scenario's objective mode.
pub fn solve_scenario(scn: &Scenario) -> Result<BidResult, BidError> {
    match scn.objective_mode {
        ObjectiveMode::Profit => solve_bidding(scn),
        ObjectiveMode::MaxCapacity => max_capacity(scn),
    }
}

fn cmd_solve(scenario_path: &Path, out: Option<&Path>) -> i32 {
    let text = match fs::read_to_string(scenario_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", scenario_path.display());
            return EXIT_VALIDATION;
        }
    };
    let file: ScenarioFile = match parse_json(&text) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_VALIDATION;
        }
    };
    let base_dir = scenario_path.parent().unwrap_or(Path::new("."));
    let scn = match build_scenario(&file, base_dir) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("scenario invalid: {e}");
            return EXIT_VALIDATION;
        }
    };
    let result = match solve_scenario(&scn) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return bid_exit(&e);
        }
    };
    // round trip: the returned policies must satisfy their structures and
    // the aggregate balance
    for (policy, structure) in result.policies.iter().zip(&scn.structures) {
        let report = validate_policy(policy, structure);
        if !report.is_empty() {
            eprintln!("internal error: returned policy violates its structure: {report:?}");
            return EXIT_VALIDATION;
        }
    }
    let residual = balance_residual(&result);
    if residual > 1e-8 {
        eprintln!("internal error: balance residual {residual} exceeds 1e-8");
        return EXIT_VALIDATION;
    }
    let summary = summarize(&scn, &result, residual);
    let out_dir = out.unwrap_or(Path::new("."));
    if let Err(e) = fs::create_dir_all(out_dir) {
        eprintln!("cannot create {}: {e}", out_dir.display());
        return EXIT_VALIDATION;
    }
    let result_file = ResultFile {
        scenario: file.clone(),
        result,
    };
    let result_path = out_dir.join(&file.outputs.result_json);
    let summary_path = out_dir.join(&file.outputs.summary_txt);
    let json = serde_json::to_string_pretty(&result_file).expect("result serializes");
    if let Err(e) = fs::write(&result_path, json) {
        eprintln!("cannot write {}: {e}", result_path.display());
        return EXIT_VALIDATION;
    }
    if let Err(e) = fs::write(&summary_path, &summary) {
        eprintln!("cannot write {}: {e}", summary_path.display());
        return EXIT_VALIDATION;
    }
    print!("{summary}");
    EXIT_OK
}

fn summarize(scn: &Scenario, result: &BidResult, residual: f64) -> String {
    let mut out = String::new();
    let min_gamma = result
        .gamma_agg
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    writeln!(out, "objective              {:.6}", result.objective).unwrap();
    writeln!(out, "min_k gamma_agg_kW     {min_gamma:.6}").unwrap();
    writeln!(out, "balance_residual_kW    {residual:.3e}").unwrap();
    let standalone: Vec<f64> = scn
        .resources
        .iter()
        .map(|phi| standalone_capacity(phi, &scn.grid))
        .collect();
    for (phi, s) in scn.resources.iter().zip(&standalone) {
        writeln!(out, "standalone {:<12} {s:.6} kW", phi.label).unwrap();
    }
    if scn.objective_mode == ObjectiveMode::MaxCapacity {
        match synergy_factor(min_gamma, &standalone) {
            Some(sigma) => writeln!(out, "synergy_factor         {sigma:.6}").unwrap(),
            None => writeln!(out, "synergy_factor         undefined (infinite)").unwrap(),
        }
    }
    writeln!(
        out,
        "lp                     {} vars, {} rows, {} backend, {} ms",
        result.stats.n_vars, result.stats.n_rows, result.stats.backend, result.stats.solve_ms
    )
    .unwrap();
    out
}

/// Parses a `--signal` argument: an existing CSV file beats a spec string.
pub fn resolve_signal(
    arg: &str,
    seed: u64,
    grid: &TimeGrid,
    base_dir: &Path,
) -> Result<ActivationSignal, String> {
    let candidate = if Path::new(arg).is_absolute() {
        PathBuf::from(arg)
    } else {
        base_dir.join(arg)
    };
    if candidate.is_file() {
        let text = fs::read_to_string(&candidate)
            .map_err(|e| format!("cannot read {}: {e}", candidate.display()))?;
        let (signal, clipped) =
            ActivationSignal::from_lines(&text, grid).map_err(|e| e.to_string())?;
        if clipped > 0 {
            eprintln!("warning: {clipped} signal samples clipped to [-1, 1]");
        }
        return Ok(signal);
    }
    let parts: Vec<&str> = arg.split(':').collect();
    let parse = |s: &str| -> Result<f64, String> {
        s.parse::<f64>().map_err(|e| format!("bad number {s:?}: {e}"))
    };
    let kind = match parts.as_slice() {
        ["constant", v] => SignalKind::Constant { value: parse(v)? },
        ["square", period, amp] => SignalKind::Square {
            period_s: period
                .parse::<u64>()
                .map_err(|e| format!("bad period {period:?}: {e}"))?,
            amplitude: parse(amp)?,
        },
        ["walk", step, bias] => SignalKind::BoundedWalk {
            step: parse(step)?,
            bias: parse(bias)?,
            seed,
        },
        _ => {
            return Err(format!(
                "unrecognized signal {arg:?}: expected constant:V, \
                 square:PERIOD_S:AMPLITUDE, walk:STEP:BIAS, or a CSV file"
            ))
        }
    };
    Ok(gen_signal(grid, &kind))
}

/// Absolute verification tolerance: 1e-6 relative to the largest finite
/// power bound (at least 1 kW).
fn verify_tolerance(resources: &[ResourceParams]) -> f64 {
    let mut scale = 1.0f64;
    for phi in resources {
        for v in phi.p_min.iter().chain(&phi.p_max) {
            if v.is_finite() {
                scale = scale.max(v.abs());
            }
        }
    }
    1e-6 * scale
}

fn cmd_simulate(result_path: &Path, signal_arg: &str, seed: Option<u64>) -> i32 {
    let text = match fs::read_to_string(result_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", result_path.display());
            return EXIT_VALIDATION;
        }
    };
    let file: ResultFile = match parse_json(&text) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_VALIDATION;
        }
    };
    let base_dir = result_path.parent().unwrap_or(Path::new("."));
    let scn = match build_scenario(&file.scenario, base_dir) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("embedded scenario invalid: {e}");
            return EXIT_VALIDATION;
        }
    };
    if file.result.policies.len() != scn.resources.len() {
        eprintln!(
            "result has {} policies but the scenario has {} resources",
            file.result.policies.len(),
            scn.resources.len()
        );
        return EXIT_VALIDATION;
    }
    let signal = match resolve_signal(signal_arg, seed.unwrap_or(0), &scn.grid, base_dir) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_VALIDATION;
        }
    };
    let items: Vec<(ResourceParams, crate::policy::AffinePolicy)> = scn
        .resources
        .iter()
        .cloned()
        .zip(file.result.policies.iter().cloned())
        .collect();
    let trace = match simulate(&items, &signal, &scn.grid) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("simulation failed: {e}");
            return EXIT_VALIDATION;
        }
    };
    let tol = verify_tolerance(&scn.resources);
    let violations = verify_trace(&trace, &scn.resources, &scn.grid, tol);
    let csv = trace_to_csv(&trace, &scn.grid);
    let trace_path = result_path.with_extension("trace.csv");
    if let Err(e) = fs::write(&trace_path, csv) {
        eprintln!("cannot write {}: {e}", trace_path.display());
        return EXIT_VALIDATION;
    }
    println!("trace written to {}", trace_path.display());
    if violations.is_empty() {
        println!("no constraint violations beyond {tol:.3e} kW");
        EXIT_OK
    } else {
        for v in &violations {
            println!(
                "violation: {:?} of {} at t = {} s by {:.6e}",
                v.family, v.resource, v.time_s, v.amount
            );
        }
        EXIT_SIM_VIOLATION
    }
}

// ---------------------------------------------------------------------------
// Built-in reproduction cases
// ---------------------------------------------------------------------------

/// One published table row: battery size, its standalone capacity, and the
/// aggregate capacity and synergy factor to reproduce.
pub struct RefRow {
    pub name: &'static str,
    pub p_bar_kw: f64,
    pub x_bar_kwh: f64,
    pub gamma_b_kw: f64,
    pub gamma_agg_kw: f64,
    pub sigma: f64,
}

/// Battery-freezer aggregation rows.
pub const TABLE_BATTERY_FREEZER: [RefRow; 6] = [
    RefRow { name: "Model-S 1", p_bar_kw: 17.2, x_bar_kwh: 100.0, gamma_b_kw: 2.08, gamma_agg_kw: 9.61, sigma: 3.61 },
    RefRow { name: "Model-S 5", p_bar_kw: 86.0, x_bar_kwh: 500.0, gamma_b_kw: 10.42, gamma_agg_kw: 48.04, sigma: 3.61 },
    RefRow { name: "Powerpack 1", p_bar_kw: 50.0, x_bar_kwh: 210.0, gamma_b_kw: 4.38, gamma_agg_kw: 27.09, sigma: 5.19 },
    RefRow { name: "Powerpack 2", p_bar_kw: 100.0, x_bar_kwh: 420.0, gamma_b_kw: 8.75, gamma_agg_kw: 49.47, sigma: 4.65 },
    RefRow { name: "Powerwall 2", p_bar_kw: 14.0, x_bar_kwh: 27.0, gamma_b_kw: 0.56, gamma_agg_kw: 7.25, sigma: 11.90 },
    RefRow { name: "Powerwall 10", p_bar_kw: 70.0, x_bar_kwh: 135.0, gamma_b_kw: 2.81, gamma_agg_kw: 36.26, sigma: 11.90 },
];

/// Battery-steam-turbine aggregation rows.
pub const TABLE_BATTERY_TURBINE: [RefRow; 8] = [
    RefRow { name: "Model-S 10", p_bar_kw: 172.0, x_bar_kwh: 1_000.0, gamma_b_kw: 20.83, gamma_agg_kw: 468.70, sigma: 0.18 },
    RefRow { name: "Model-S 50", p_bar_kw: 860.0, x_bar_kwh: 5_000.0, gamma_b_kw: 104.17, gamma_agg_kw: 843.50, sigma: 0.76 },
    RefRow { name: "Model-S 100", p_bar_kw: 1_720.0, x_bar_kwh: 10_000.0, gamma_b_kw: 208.33, gamma_agg_kw: 1_312.00, sigma: 1.25 },
    RefRow { name: "Powerpack 5", p_bar_kw: 250.0, x_bar_kwh: 1_050.0, gamma_b_kw: 21.88, gamma_agg_kw: 506.84, sigma: 0.28 },
    RefRow { name: "Powerpack 10", p_bar_kw: 500.0, x_bar_kwh: 2_100.0, gamma_b_kw: 43.75, gamma_agg_kw: 638.68, sigma: 0.53 },
    RefRow { name: "Powerpack 20", p_bar_kw: 1_000.0, x_bar_kwh: 4_200.0, gamma_b_kw: 87.50, gamma_agg_kw: 902.35, sigma: 0.95 },
    RefRow { name: "Powerwall 50", p_bar_kw: 350.0, x_bar_kwh: 675.0, gamma_b_kw: 14.06, gamma_agg_kw: 551.00, sigma: 0.42 },
    RefRow { name: "Powerwall 100", p_bar_kw: 700.0, x_bar_kwh: 1_350.0, gamma_b_kw: 28.13, gamma_agg_kw: 726.99, sigma: 0.80 },
];

/// Default control delay of the built-in freezer, longer than one control
/// interval so the freezer cannot offer capacity on its own.
pub const FREEZER_DELAY_S: u64 = 300;

/// Power and ramp limits of the built-in steam turbine.
pub const TURBINE_P_MAX_KW: f64 = 250_000.0;
pub const TURBINE_RAMP_KW_PER_MIN: f64 = 4_500.0;

/// Capacity-maximization scenario for one battery size plus the built-in
/// freezer, on the one-day default grid.
pub fn battery_freezer_scenario(p_bar_kw: f64, x_bar_kwh: f64) -> Result<Scenario, String> {
    let grid = TimeGrid::new(GridDurations::one_day_default()).map_err(|e| e.to_string())?;
    let battery = make_battery("battery", p_bar_kw, x_bar_kwh, x_bar_kwh / 2.0, &grid)
        .map_err(|e| e.to_string())?;
    let freezer = make_freezer("freezer", &FreezerSpec::table_default(), FREEZER_DELAY_S, &grid)
        .map_err(|e| e.to_string())?;
    let structures = vec![
        PolicyStructure::new(&grid, 4, 0, true),
        PolicyStructure::new(&grid, 4, FREEZER_DELAY_S, true),
    ];
    Ok(Scenario {
        grid,
        resources: vec![battery, freezer],
        structures,
        market_mode: MarketMode::MarketsFrozen,
        objective_mode: ObjectiveMode::MaxCapacity,
        prices: None,
    })
}

/// Capacity-maximization scenario for one battery size plus the built-in
/// steam turbine (no control delays).
pub fn battery_turbine_scenario(p_bar_kw: f64, x_bar_kwh: f64) -> Result<Scenario, String> {
    let grid = TimeGrid::new(GridDurations::one_day_default()).map_err(|e| e.to_string())?;
    let battery = make_battery("battery", p_bar_kw, x_bar_kwh, x_bar_kwh / 2.0, &grid)
        .map_err(|e| e.to_string())?;
    let turbine = make_turbine(
        "turbine",
        0.0,
        TURBINE_P_MAX_KW,
        TURBINE_RAMP_KW_PER_MIN,
        &grid,
    )
    .map_err(|e| e.to_string())?;
    let structures = vec![
        PolicyStructure::new(&grid, 4, 0, true),
        PolicyStructure::new(&grid, 4, 0, true),
    ];
    Ok(Scenario {
        grid,
        resources: vec![battery, turbine],
        structures,
        market_mode: MarketMode::MarketsFrozen,
        objective_mode: ObjectiveMode::MaxCapacity,
        prices: None,
    })
}

/// One computed reproduction row plus its deviation from the reference.
pub struct ReproRow {
    pub name: &'static str,
    pub p_bar_kw: f64,
    pub x_bar_kwh: f64,
    pub gamma_b_kw: f64,
    pub gamma_agg_kw: f64,
    pub sigma: Option<f64>,
    pub dev_gamma_agg_pct: f64,
    pub dev_sigma_pct: f64,
}

fn rel_dev_pct(got: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        if got == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (got - reference) / reference.abs() * 100.0
    }
}

/// Runs one built-in table case; rows solve independently.
pub fn run_reference_case(
    table: &'static [RefRow],
    make: fn(f64, f64) -> Result<Scenario, String>,
) -> Result<Vec<ReproRow>, BidError> {
    let mut rows = Vec::with_capacity(table.len());
    for r in table {
        let scn = make(r.p_bar_kw, r.x_bar_kwh).map_err(BidError::Validation)?;
        let result = max_capacity(&scn)?;
        let standalone: Vec<f64> = scn
            .resources
            .iter()
            .map(|phi| standalone_capacity(phi, &scn.grid))
            .collect();
        let sigma = synergy_factor(result.objective, &standalone);
        rows.push(ReproRow {
            name: r.name,
            p_bar_kw: r.p_bar_kw,
            x_bar_kwh: r.x_bar_kwh,
            gamma_b_kw: standalone[0],
            gamma_agg_kw: result.objective,
            sigma,
            dev_gamma_agg_pct: rel_dev_pct(result.objective, r.gamma_agg_kw),
            dev_sigma_pct: sigma.map_or(f64::INFINITY, |s| rel_dev_pct(s, r.sigma)),
        });
    }
    Ok(rows)
}

/// CSV with the published columns plus relative deviations.
pub fn repro_rows_to_csv(rows: &[ReproRow]) -> String {
    let mut out = String::from(
        "name,p_bar_kW,x_bar_kWh,gamma_B_kW,gamma_agg_kW,sigma,\
         dev_gamma_agg_pct,dev_sigma_pct\n",
    );
    for r in rows {
        let sigma = r
            .sigma
            .map(|s| format!("{s:.4}"))
            .unwrap_or_else(|| "undefined".into());
        writeln!(
            out,
            "{},{},{},{:.4},{:.4},{},{:.2},{:.2}",
            r.name,
            r.p_bar_kw,
            r.x_bar_kwh,
            r.gamma_b_kw,
            r.gamma_agg_kw,
            sigma,
            r.dev_gamma_agg_pct,
            r.dev_sigma_pct
        )
        .unwrap();
    }
    out
}

fn worst_dev(rows: &[ReproRow]) -> f64 {
    rows.iter()
        .map(|r| r.dev_gamma_agg_pct.abs().max(r.dev_sigma_pct.abs()))
        .fold(0.0, f64::max)
}

fn cmd_reproduce(case: &str, tolerance_pct: f64) -> i32 {
    let rows = match case {
        "battery-freezer" => run_reference_case(&TABLE_BATTERY_FREEZER, battery_freezer_scenario),
        "battery-turbine" => run_reference_case(&TABLE_BATTERY_TURBINE, battery_turbine_scenario),
        "sweep" => return cmd_reproduce_sweep(tolerance_pct),
        other => {
            eprintln!(
                "unknown case {other:?}: expected battery-freezer, battery-turbine, or sweep"
            );
            return EXIT_VALIDATION;
        }
    };
    let rows = match rows {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return bid_exit(&e);
        }
    };
    print!("{}", repro_rows_to_csv(&rows));
    let worst = worst_dev(&rows);
    eprintln!("worst relative deviation: {worst:.2}% (tolerance {tolerance_pct}%)");
    if worst <= tolerance_pct {
        EXIT_OK
    } else {
        EXIT_SIM_VIOLATION
    }
}

/// The sweep case re-derives the battery-freezer rows through the sweep
/// machinery; a single-point grid must agree with the direct solve.
fn cmd_reproduce_sweep(tolerance_pct: f64) -> i32 {
    let base = match battery_freezer_scenario(
        TABLE_BATTERY_FREEZER[0].p_bar_kw,
        TABLE_BATTERY_FREEZER[0].x_bar_kwh,
    ) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_VALIDATION;
        }
    };
    let points: Vec<(f64, f64)> = TABLE_BATTERY_FREEZER
        .iter()
        .map(|r| (r.p_bar_kw, r.x_bar_kwh))
        .collect();
    let rows = sweep(&base, 0, &points);
    let mut repro = Vec::with_capacity(rows.len());
    for (row, r) in rows.iter().zip(&TABLE_BATTERY_FREEZER) {
        let (Some(agg), sigma) = (row.gamma_agg_kw, row.sigma) else {
            eprintln!(
                "sweep point ({}, {}) failed: {}",
                row.p_bar_kw,
                row.x_bar_kwh,
                row.error.as_deref().unwrap_or("unknown")
            );
            return EXIT_INFEASIBLE;
        };
        repro.push(ReproRow {
            name: r.name,
            p_bar_kw: row.p_bar_kw,
            x_bar_kwh: row.x_bar_kwh,
            gamma_b_kw: row.gamma_b_kw,
            gamma_agg_kw: agg,
            sigma,
            dev_gamma_agg_pct: rel_dev_pct(agg, r.gamma_agg_kw),
            dev_sigma_pct: sigma.map_or(f64::INFINITY, |s| rel_dev_pct(s, r.sigma)),
        });
    }
    print!("{}", repro_rows_to_csv(&repro));
    let worst = worst_dev(&repro);
    eprintln!("worst relative deviation: {worst:.2}% (tolerance {tolerance_pct}%)");
    if worst <= tolerance_pct {
        EXIT_OK
    } else {
        EXIT_SIM_VIOLATION
    }
}

fn cmd_sweep(scenario_path: &Path, grid_csv: &Path) -> i32 {
    let text = match fs::read_to_string(scenario_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", scenario_path.display());
            return EXIT_VALIDATION;
        }
    };
    let file: ScenarioFile = match parse_json(&text) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_VALIDATION;
        }
    };
    let base_dir = scenario_path.parent().unwrap_or(Path::new("."));
    let scn = match build_scenario(&file, base_dir) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("scenario invalid: {e}");
            return EXIT_VALIDATION;
        }
    };
    if scn.objective_mode != ObjectiveMode::MaxCapacity {
        eprintln!("sweep requires a capacity-maximization scenario");
        return EXIT_VALIDATION;
    }
    let Some(battery_index) = file
        .resources
        .iter()
        .position(|r| matches!(r, ResourceSpec::Battery { .. }))
    else {
        eprintln!("sweep requires at least one battery resource");
        return EXIT_VALIDATION;
    };
    let grid_text = match fs::read_to_string(grid_csv) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", grid_csv.display());
            return EXIT_VALIDATION;
        }
    };
    let mut points = Vec::new();
    for (i, line) in grid_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.chars().any(|c| c.is_alphabetic())) {
            continue; // blank line or header
        }
        let mut cols = line.split(',').map(str::trim);
        let (Some(p), Some(x), None) = (cols.next(), cols.next(), cols.next()) else {
            eprintln!("grid line {}: expected p_bar_kW,x_bar_kWh", i + 1);
            return EXIT_VALIDATION;
        };
        match (p.parse::<f64>(), x.parse::<f64>()) {
            (Ok(p), Ok(x)) => points.push((p, x)),
            _ => {
                eprintln!("grid line {}: cannot parse {line:?}", i + 1);
                return EXIT_VALIDATION;
            }
        }
    }
    if points.is_empty() {
        eprintln!("grid file contains no points");
        return EXIT_VALIDATION;
    }
    let rows = sweep(&scn, battery_index, &points);
    print!("{}", sweep_to_csv(&rows));
    EXIT_OK
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "flexagg-app-{tag}-{}",
            std::process::id()
        ));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn small_scenario_json(market_mode: &str, objective_mode: &str, system_s: u64) -> String {
        format!(
            r#"{{
  "grid": {{
    "horizon_s": 3600, "sfr_s": 3600, "day_ahead_s": 3600, "intra_day_s": 900,
    "system_s": {system_s}, "control_s": 10, "lead_da_s": 3600, "lead_id_s": 900
  }},
  "resources": [
    {{"kind": "battery", "label": "b", "p_max_kW": 17.2, "x_bar_kWh": 100.0, "x0_kWh": 50.0}}
  ],
  "structures": [{{"bandwidth": 2}}],
  "market_mode": "{market_mode}",
  "objective_mode": "{objective_mode}"
}}"#
        )
    }

    #[test]
    fn scenario_file_round_trips_and_builds() {
        let text = small_scenario_json("MarketsFrozen", "MaxCapacity", 300);
        let file: ScenarioFile = parse_json(&text).unwrap();
        let scn = build_scenario(&file, Path::new(".")).unwrap();
        assert_eq!(scn.resources.len(), 1);
        assert_eq!(scn.structures[0].bandwidth, 2);
        assert!(scn.structures[0].time_invariant_gamma);
        let back = serde_json::to_string(&file).unwrap();
        let again: ScenarioFile = parse_json(&back).unwrap();
        assert_eq!(again.resources.len(), 1);
    }

    #[test]
    fn schema_violation_reports_json_pointer() {
        let bad = r#"{"grid": {"horizon_s": "not-a-number"}}"#;
        let err = parse_json::<ScenarioFile>(bad).unwrap_err();
        assert!(err.contains("/grid/horizon_s"), "{err}");
    }

    #[test]
    fn mode_conflict_exits_with_validation_code() {
        let dir = tmp_dir("conflict");
        let path = dir.join("scenario.json");
        // frozen markets with a profit objective is contradictory
        fs::write(&path, small_scenario_json("MarketsFrozen", "Profit", 300)).unwrap();
        let code = run_with_args([
            "flexagg",
            "solve",
            path.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_VALIDATION);
    }

    #[test]
    fn grid_error_exits_with_validation_code() {
        let dir = tmp_dir("grid");
        let path = dir.join("scenario.json");
        // 7 s does not divide the 900 s intra-day interval
        fs::write(&path, small_scenario_json("MarketsFrozen", "MaxCapacity", 7)).unwrap();
        let code = run_with_args([
            "flexagg",
            "solve",
            path.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_VALIDATION);
    }

    #[test]
    fn solve_then_simulate_round_trip() {
        let dir = tmp_dir("roundtrip");
        let path = dir.join("scenario.json");
        fs::write(&path, small_scenario_json("MarketsFrozen", "MaxCapacity", 300)).unwrap();
        let code = run_with_args([
            "flexagg",
            "solve",
            path.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK);
        let result_path = dir.join("result.json");
        assert!(result_path.is_file());
        assert!(dir.join("summary.txt").is_file());

        // a feasible signal produces no violations
        let code = run_with_args([
            "flexagg",
            "simulate",
            result_path.to_str().unwrap(),
            "--signal",
            "walk:0.1:0.0",
            "--seed",
            "7",
        ]);
        assert_eq!(code, EXIT_OK);
        assert!(dir.join("result.trace.csv").is_file());

        // inflating gamma must surface violations
        let mut file: ResultFile =
            parse_json(&fs::read_to_string(&result_path).unwrap()).unwrap();
        for p in &mut file.result.policies {
            for g in &mut p.gamma {
                *g *= 1.5;
            }
        }
        let inflated = dir.join("inflated.json");
        fs::write(&inflated, serde_json::to_string_pretty(&file).unwrap()).unwrap();
        let code = run_with_args([
            "flexagg",
            "simulate",
            inflated.to_str().unwrap(),
            "--signal",
            "constant:1.0",
        ]);
        assert_eq!(code, EXIT_SIM_VIOLATION);
    }

    #[test]
    fn simulate_rejects_signal_of_wrong_length() {
        let dir = tmp_dir("siglen");
        let path = dir.join("scenario.json");
        fs::write(&path, small_scenario_json("MarketsFrozen", "MaxCapacity", 300)).unwrap();
        assert_eq!(
            run_with_args([
                "flexagg",
                "solve",
                path.to_str().unwrap(),
                "--out",
                dir.to_str().unwrap(),
            ]),
            EXIT_OK
        );
        let short = dir.join("short.csv");
        fs::write(&short, "0.5\n0.5\n0.5\n").unwrap();
        let code = run_with_args([
            "flexagg",
            "simulate",
            dir.join("result.json").to_str().unwrap(),
            "--signal",
            short.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_VALIDATION);
    }

    #[test]
    fn solve_outputs_are_deterministic() {
        let dir_a = tmp_dir("det-a");
        let dir_b = tmp_dir("det-b");
        for dir in [&dir_a, &dir_b] {
            let path = dir.join("scenario.json");
            fs::write(&path, small_scenario_json("MarketsFrozen", "MaxCapacity", 300)).unwrap();
            assert_eq!(
                run_with_args([
                    "flexagg",
                    "solve",
                    path.to_str().unwrap(),
                    "--out",
                    dir.to_str().unwrap(),
                ]),
                EXIT_OK
            );
            assert_eq!(
                run_with_args([
                    "flexagg",
                    "simulate",
                    dir.join("result.json").to_str().unwrap(),
                    "--signal",
                    "walk:0.1:0.02",
                    "--seed",
                    "42",
                ]),
                EXIT_OK
            );
        }
        let a = fs::read(dir_a.join("result.trace.csv")).unwrap();
        let b = fs::read(dir_b.join("result.trace.csv")).unwrap();
        assert_eq!(a, b, "identical scenario and seed must give identical CSV");
    }

    #[test]
    fn unknown_reproduce_case_is_rejected() {
        assert_eq!(
            run_with_args(["flexagg", "reproduce", "no-such-case"]),
            EXIT_VALIDATION
        );
    }

    #[test]
    fn signal_spec_parsing_covers_all_kinds() {
        let grid = TimeGrid::new(GridDurations::one_day_default()).unwrap();
        let base = Path::new(".");
        let c = resolve_signal("constant:0.25", 0, &grid, base).unwrap();
        assert!(c.samples.iter().all(|&v| v == 0.25));
        let s = resolve_signal("square:1200:0.5", 0, &grid, base).unwrap();
        assert_eq!(s.samples[0], 0.5);
        let w1 = resolve_signal("walk:0.1:0.02", 9, &grid, base).unwrap();
        let w2 = resolve_signal("walk:0.1:0.02", 9, &grid, base).unwrap();
        assert_eq!(w1.samples, w2.samples);
        assert!(resolve_signal("triangle:1:2", 0, &grid, base).is_err());
    }
}
