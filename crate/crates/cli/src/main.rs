//! Command-line driver: closed-loop simulation runs, run comparison, and
//! component-map fitting.
//!
//! Exit codes: 0 success, 2 configuration error, 3 drive-cycle error,
//! 4 solver infeasibility, 1 anything else.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use phevsim_core::maps::{fit_piecewise_motor, fit_quadratic_curve, fit_quadratic_surface, GridSamples};
use phevsim_core::params::Params;
use phevsim_core::sim::{self, compare, DriveCycle, Mode, SimConfig, SimError, Totals};

const EXIT_CONFIG: u8 = 2;
const EXIT_CYCLE: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

/// Parameter-file path taken from the environment when no flag or config
/// entry names one.
const PARAMS_ENV: &str = "PHEVSIM_PARAMS";

#[derive(Parser)]
#[command(name = "phevsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop over a drive cycle and write records + summary.
    Simulate(SimulateArgs),
    /// Compare two simulation output directories.
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
    },
    /// Fit quadratic component maps from grid samples.
    Fitmaps(FitmapsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Drive-cycle CSV with header `time_s,speed_mps`.
    #[arg(long)]
    cycle: PathBuf,
    /// Controller arrangement.
    #[arg(long, value_enum)]
    mode: Option<CliMode>,
    /// Parameter file; falls back to the config entry, then $PHEVSIM_PARAMS,
    /// then the built-in defaults.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Run configuration (TOML; see the README for the schema).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Cycle window as `t0:t1` in seconds.
    #[arg(long)]
    segment: Option<String>,
    /// Prediction horizon length in steps.
    #[arg(long)]
    horizon: Option<usize>,
    /// Controller step in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Write a line-per-node solver trace next to the records.
    #[arg(long)]
    trace: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Sequential,
    Coop,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Mode {
        match m {
            CliMode::Sequential => Mode::Sequential,
            CliMode::Coop => Mode::Coop,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FitTarget {
    /// Specific fuel consumption surface over (engine speed, torque).
    Engine,
    /// Piecewise motor efficiency (needs `--breakpoints`).
    Motor,
    /// Generator efficiency surface.
    Generator,
    /// Open-circuit voltage curve over SOC.
    Voc,
    /// Internal-resistance curve over SOC.
    Res,
}

#[derive(Args)]
struct FitmapsArgs {
    #[arg(long, value_enum)]
    target: FitTarget,
    /// Samples CSV: `x,y,value` for surfaces, `x,value` for curves.
    #[arg(long)]
    csv: PathBuf,
    /// Motor speed breakpoints as `w1,w2`.
    #[arg(long)]
    breakpoints: Option<String>,
    /// Output parameter-file fragment.
    #[arg(long)]
    out: PathBuf,
}

/// Optional run-configuration file: a parameter-file path plus the embedded
/// simulation configuration.
#[derive(serde::Deserialize, Default)]
struct FileConfig {
    params: Option<PathBuf>,
    sim: Option<SimConfig>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Compare { dir_a, dir_b } => cmd_compare(&dir_a, &dir_b),
        Command::Fitmaps(args) => cmd_fitmaps(args),
    };
    match code {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

type CmdResult = Result<(), (u8, String)>;

fn config_err(message: impl Into<String>) -> (u8, String) {
    (EXIT_CONFIG, message.into())
}

fn sim_error_code(e: &SimError) -> u8 {
    match e {
        SimError::Cycle { .. } => EXIT_CYCLE,
        SimError::Config(_) | SimError::Io { .. } => EXIT_CONFIG,
        SimError::Infeasible { .. } => EXIT_INFEASIBLE,
        _ => 1,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn load_params(
    flag: &Option<PathBuf>,
    config: &FileConfig,
) -> Result<(Params, String, String), (u8, String)> {
    let path = flag
        .clone()
        .or_else(|| config.params.clone())
        .or_else(|| std::env::var(PARAMS_ENV).ok().map(PathBuf::from));
    match path {
        Some(p) => {
            let text = fs::read_to_string(&p)
                .map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
            let params = Params::from_toml_str(&text).map_err(|e| config_err(e.to_string()))?;
            Ok((params, sha256_hex(text.as_bytes()), p.display().to_string()))
        }
        None => {
            let params = Params::shipped_default().map_err(|e| config_err(e.to_string()))?;
            let text = toml::to_string(&params).unwrap_or_default();
            Ok((params, sha256_hex(text.as_bytes()), "<built-in>".to_string()))
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> CmdResult {
    let file_config: FileConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| config_err(format!("config: {e}")))?
        }
        None => FileConfig::default(),
    };

    let mode = args
        .mode
        .map(Mode::from)
        .or(file_config.sim.as_ref().map(|s| s.mode))
        .ok_or_else(|| config_err("no mode given (flag --mode or config [sim] mode)"))?;
    let mut cfg = file_config.sim.clone().unwrap_or_else(|| SimConfig::new(mode));
    cfg.mode = mode;
    if let Some(spec) = &args.segment {
        let (a, b) = spec
            .split_once(':')
            .ok_or_else(|| config_err("--segment expects t0:t1"))?;
        let t0: f64 = a.parse().map_err(|_| config_err("bad segment start"))?;
        let t1: f64 = b.parse().map_err(|_| config_err("bad segment end"))?;
        cfg.segment = Some((t0, t1));
    }
    if let Some(n) = args.horizon {
        cfg.horizon.steps = n;
    }
    if let Some(dt) = args.dt {
        cfg.horizon.dt_s = dt;
    }
    phevsim_core::ocp::Horizon::new(cfg.horizon.steps, cfg.horizon.dt_s)
        .map_err(|e| config_err(e.to_string()))?;

    let (params, params_digest, params_source) = load_params(&args.params, &file_config)?;

    let cycle_text = fs::read_to_string(&args.cycle)
        .map_err(|e| config_err(format!("cannot read {}: {e}", args.cycle.display())))?;
    let cycle_digest = sha256_hex(cycle_text.as_bytes());
    let cycle = DriveCycle::parse(&cycle_text)
        .map_err(|e| (sim_error_code(&e), e.to_string()))?
        .resample(cfg.horizon.dt_s);

    fs::create_dir_all(&args.out)
        .map_err(|e| config_err(format!("cannot create {}: {e}", args.out.display())))?;

    let started_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);

    let result = if args.trace {
        let mut trace_file = fs::File::create(args.out.join("solver_trace.txt"))
            .map_err(|e| config_err(format!("cannot create trace file: {e}")))?;
        sim::run_traced(&cfg, &cycle, &params, &mut trace_file)
    } else {
        sim::run(&cfg, &cycle, &params)
    }
    .map_err(|e| (sim_error_code(&e), e.to_string()))?;

    let write = |name: &str, body: &dyn Fn(&mut dyn Write) -> std::io::Result<()>| {
        let mut f = fs::File::create(args.out.join(name))
            .map_err(|e| config_err(format!("cannot create {name}: {e}")))?;
        body(&mut f).map_err(|e| config_err(format!("cannot write {name}: {e}")))
    };
    write("records.csv", &|w| sim::write_records_csv(&result, w))?;
    write("timings.csv", &|w| sim::write_timings_csv(&result, w))?;
    write("summary.txt", &|w| sim::write_summary(&result, w))?;
    write("manifest.txt", &|w| {
        writeln!(w, "tool = phevsim {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(w, "started_unix = {started_unix}")?;
        writeln!(w, "cycle_path = {}", args.cycle.display())?;
        writeln!(w, "cycle_sha256 = {cycle_digest}")?;
        writeln!(w, "params_path = {params_source}")?;
        writeln!(w, "params_sha256 = {params_digest}")?;
        writeln!(w, "resolved_config:")?;
        let toml = toml::to_string(&cfg).unwrap_or_default();
        for line in toml.lines() {
            writeln!(w, "  {line}")?;
        }
        Ok(())
    })?;

    println!(
        "{} steps simulated; fuel {:.3} g, final SOC {:.4}; outputs in {}",
        result.totals.steps,
        result.totals.fuel_g,
        result.totals.final_soc,
        args.out.display()
    );
    Ok(())
}

fn parse_summary(path: &Path) -> Result<Totals, (u8, String)> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let mut totals = Totals::default();
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        let fv = || value.parse::<f64>().unwrap_or(0.0);
        match key {
            "steps" => totals.steps = value.parse().unwrap_or(0),
            "duration_s" => totals.duration_s = fv(),
            "distance_m" => totals.distance_m = fv(),
            "fuel_g" => totals.fuel_g = fv(),
            "fuel_kg" => totals.fuel_kg = fv(),
            "fuel_kg_per_100km" => totals.fuel_kg_per_100km = fv(),
            "fuel_l_per_100km" => totals.fuel_l_per_100km = fv(),
            "final_soc" => totals.final_soc = fv(),
            "jerk_rms_m_s3" => totals.jerk_rms_m_s3 = fv(),
            _ => {}
        }
    }
    Ok(totals)
}

fn manifest_value(path: &Path, key: &str) -> Result<String, (u8, String)> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            if k.trim() == key {
                return Ok(v.trim().to_string());
            }
        }
    }
    Err(config_err(format!("{} missing key {key}", path.display())))
}

fn mean_solve_time(path: &Path) -> f64 {
    let Ok(text) = fs::read_to_string(path) else {
        return 0.0;
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for line in text.lines().skip(1) {
        if let Some((_, t)) = line.split_once(',') {
            if let Ok(v) = t.trim().parse::<f64>() {
                sum += v;
                count += 1;
            }
        }
    }
    if count > 0 {
        sum / count as f64
    } else {
        0.0
    }
}

fn cmd_compare(dir_a: &Path, dir_b: &Path) -> CmdResult {
    let cyc_a = manifest_value(&dir_a.join("manifest.txt"), "cycle_sha256")?;
    let cyc_b = manifest_value(&dir_b.join("manifest.txt"), "cycle_sha256")?;
    if cyc_a != cyc_b {
        return Err(config_err(
            "refusing to compare runs over different drive cycles",
        ));
    }
    let mut a = parse_summary(&dir_a.join("summary.txt"))?;
    let mut b = parse_summary(&dir_b.join("summary.txt"))?;
    a.mean_solve_time_s = mean_solve_time(&dir_a.join("timings.csv"));
    b.mean_solve_time_s = mean_solve_time(&dir_b.join("timings.csv"));
    let cmp = compare(&a, &b);

    println!("run                A ({})        B ({})", dir_a.display(), dir_b.display());
    println!(
        "fuel            {:>12.4} kg {:>12.4} kg ({:+.1}%)",
        a.fuel_kg, b.fuel_kg, cmp.fuel_delta_pct
    );
    println!(
        "fuel volumetric {:>10.3} L/100km {:>8.3} L/100km",
        a.fuel_l_per_100km, b.fuel_l_per_100km
    );
    println!(
        "final SOC       {:>12.4}    {:>12.4}    ({:+.1}%)",
        a.final_soc, b.final_soc, cmp.final_soc_delta_pct
    );
    println!(
        "mean solve time {:>10.4} s  {:>10.4} s  (x{:.2})",
        a.mean_solve_time_s, b.mean_solve_time_s, cmp.mean_solve_time_ratio
    );
    Ok(())
}

fn read_samples(path: &Path, columns: usize) -> Result<Vec<Vec<f64>>, (u8, String)> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Result<Vec<f64>, _> = trimmed.split(',').map(|f| f.trim().parse()).collect();
        let fields =
            fields.map_err(|_| config_err(format!("line {}: malformed row", idx + 1)))?;
        if fields.len() != columns {
            return Err(config_err(format!(
                "line {}: expected {columns} fields, got {}",
                idx + 1,
                fields.len()
            )));
        }
        rows.push(fields);
    }
    Ok(rows)
}

fn coeff_list(c: &[f64]) -> String {
    let entries: Vec<String> = c.iter().map(|v| format!("{v:e}")).collect();
    format!("[{}]", entries.join(", "))
}

fn cmd_fitmaps(args: FitmapsArgs) -> CmdResult {
    let mut fragment = String::new();
    match args.target {
        FitTarget::Engine | FitTarget::Generator => {
            let rows = read_samples(&args.csv, 3)?;
            let samples = GridSamples::new(rows.iter().map(|r| [r[0], r[1], r[2]]).collect());
            let fit = fit_quadratic_surface(&samples).map_err(|e| config_err(e.to_string()))?;
            println!(
                "surface fit: max |residual| {:.3e}, R^2 {:.6}",
                fit.max_abs_residual, fit.r_squared
            );
            let (x_lo, x_hi, y_lo, y_hi) = extent(&samples);
            match args.target {
                FitTarget::Engine => {
                    if y_lo <= 0.0 {
                        return Err(config_err(
                            "engine map samples must have strictly positive torque",
                        ));
                    }
                    fragment.push_str(&format!(
                        "[engine_map]\nbe_coeffs = {}\nw_min_rad_s = {x_lo}\nw_max_rad_s = {x_hi}\nt_min_nm = {y_lo}\nt_max_nm = {y_hi}\n",
                        coeff_list(&fit.coeffs)
                    ));
                }
                _ => {
                    let t_abs = y_hi.max(-y_lo);
                    fragment.push_str(&format!(
                        "[generator_map]\nfg_coeffs = {}\nw_min_rad_s = {x_lo}\nw_max_rad_s = {x_hi}\nt_min_nm = {}\nt_max_nm = {t_abs}\n",
                        coeff_list(&fit.coeffs),
                        -t_abs
                    ));
                }
            }
        }
        FitTarget::Motor => {
            let spec = args
                .breakpoints
                .as_ref()
                .ok_or_else(|| config_err("--breakpoints w1,w2 required for the motor fit"))?;
            let (w1s, w2s) = spec
                .split_once(',')
                .ok_or_else(|| config_err("--breakpoints expects w1,w2"))?;
            let w1: f64 = w1s.parse().map_err(|_| config_err("bad breakpoint"))?;
            let w2: f64 = w2s.parse().map_err(|_| config_err("bad breakpoint"))?;
            let rows = read_samples(&args.csv, 3)?;
            let samples = GridSamples::new(rows.iter().map(|r| [r[0], r[1], r[2]]).collect());
            let fit =
                fit_piecewise_motor(&samples, w1, w2).map_err(|e| config_err(e.to_string()))?;
            for (i, seg) in fit.segments.iter().enumerate() {
                println!(
                    "segment {}: max |residual| {:.3e}, R^2 {:.6}",
                    i + 1,
                    seg.max_abs_residual,
                    seg.r_squared
                );
            }
            println!(
                "breakpoint discontinuity: {:.3e} at w1, {:.3e} at w2",
                fit.breakpoint_jumps[0], fit.breakpoint_jumps[1]
            );
            let (x_lo, x_hi, y_lo, y_hi) = extent(&samples);
            let t_abs = y_hi.max(-y_lo);
            fragment.push_str(&format!(
                "[motor_map]\nf1_coeffs = {}\nf2_coeffs = {}\nf3_coeffs = {}\nw_break1_rad_s = {w1}\nw_break2_rad_s = {w2}\nw_min_rad_s = {x_lo}\nw_max_rad_s = {x_hi}\nt_min_nm = {}\nt_max_nm = {t_abs}\n",
                coeff_list(&fit.segments[0].coeffs),
                coeff_list(&fit.segments[1].coeffs),
                coeff_list(&fit.segments[2].coeffs),
                -t_abs
            ));
        }
        FitTarget::Voc | FitTarget::Res => {
            let rows = read_samples(&args.csv, 2)?;
            let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
            let (coeffs, max_abs) =
                fit_quadratic_curve(&pairs).map_err(|e| config_err(e.to_string()))?;
            println!("curve fit: max |residual| {max_abs:.3e}");
            let key = if matches!(args.target, FitTarget::Voc) {
                "voc_coeffs"
            } else {
                "res_coeffs"
            };
            fragment.push_str(&format!("[battery]\n{key} = {}\n", coeff_list(&coeffs)));
        }
    }
    fs::write(&args.out, &fragment)
        .map_err(|e| config_err(format!("cannot write {}: {e}", args.out.display())))?;
    println!("fragment written to {}", args.out.display());
    Ok(())
}

fn extent(samples: &GridSamples) -> (f64, f64, f64, f64) {
    samples.rows.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(xl, xh, yl, yh), r| (xl.min(r[0]), xh.max(r[0]), yl.min(r[1]), yh.max(r[1])),
    )
}
