//! Command-line front end: single DER and beam runs, sweeps, regime
//! comparison and parameter fitting, all writing CSV.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flagella::calib::{self, Config, Design, ExperimentRecord, ExperimentSeries, FitOptions, Model, ParamBounds};
use flagella::{rad_s_to_rpm, Error};

#[derive(Parser)]
#[command(name = "flagella", version, about = "Flagellated robot locomotion in granular media")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config overlaid on the design preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output CSV path (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Model used by sweep and fit.
    #[arg(long, global = true, default_value = "beam", value_parser = parse_model)]
    model: Model,
    /// Preset to start from (1 or 2).
    #[arg(long, global = true, default_value = "1", value_parser = parse_design)]
    design: Design,
}

#[derive(Subcommand)]
enum Command {
    /// One DER run to steady state; writes the trajectory.
    Simulate,
    /// One beam solve with the ω_T split; writes the deflection profile.
    Beam,
    /// Sweep over flagella counts, lengths and motor speeds.
    Sweep(SweepArgs),
    /// Fit C1, C2 and mu to measured speeds.
    Fit(FitArgs),
    /// Tip deflection in the LB, NLB and NLB-without-head regimes.
    CompareRegimes(GridArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Motor speeds (rpm), comma separated; overrides the range options.
    #[arg(long, value_delimiter = ',')]
    omega: Vec<f64>,
    #[arg(long, default_value_t = 10.0)]
    omega_min: f64,
    #[arg(long, default_value_t = 250.0)]
    omega_max: f64,
    #[arg(long, default_value_t = 25)]
    omega_steps: usize,
}

impl GridArgs {
    fn speeds(&self) -> Result<Vec<f64>, Error> {
        if !self.omega.is_empty() {
            return Ok(self.omega.clone());
        }
        if self.omega_steps < 2 || !(self.omega_max > self.omega_min) {
            return Err(Error::Config("omega range needs max > min and at least 2 steps".into()));
        }
        let h = (self.omega_max - self.omega_min) / (self.omega_steps - 1) as f64;
        Ok((0..self.omega_steps).map(|i| self.omega_min + h * i as f64).collect())
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Flagella counts.
    #[arg(long, value_delimiter = ',', default_value = "2,3")]
    n: Vec<usize>,
    /// Flagellum lengths (m); defaults to the configured length.
    #[arg(long, value_delimiter = ',')]
    lengths: Vec<f64>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct FitArgs {
    /// CSV of records: n,omega_T_rpm,v,v_std,omega_h_rpm,omega_h_std.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1500)]
    max_evaluations: usize,
}

fn parse_model(s: &str) -> Result<Model, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_design(s: &str) -> Result<Design, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Io(_) | Error::Csv(_) => 2,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let base = Config::preset(cli.common.design);
    let cfg = match &cli.common.config {
        Some(p) => Config::load(p, &base)?,
        None => base,
    };
    let out = cli.common.out.as_deref();
    let (n, l, rpm) = (cfg.robot.n, cfg.robot.flagellum_length, cfg.sim.omega_total_rpm);
    match cli.command {
        Command::Simulate => {
            let run = calib::simulate(&cfg, n, l, rpm)?;
            let m = run.metrics;
            eprintln!(
                "v = {:.6e} m/s, omega_h = {:.4} rpm, omega_t = {:.4} rpm, head share = {:.2}%, steady = {}, t = {:.2} s",
                m.v,
                rad_s_to_rpm(m.omega_h),
                rad_s_to_rpm(m.omega_t),
                100.0 * m.head_fraction(),
                m.steady,
                m.elapsed
            );
            calib::write_output(out, &run.trajectory)
        }
        Command::Beam => {
            let s = calib::beam_point(&cfg, n, l, rpm)?;
            eprintln!(
                "regime = {}, v_h = {:.6e} m/s, omega_h = {:.4} rpm, omega_t = {:.4} rpm, F_p = {:.6e} N, F_x = {:.6e} N, w(L)/L = {:.6}",
                cfg.beam.regime,
                s.v_h,
                rad_s_to_rpm(s.omega_h),
                rad_s_to_rpm(s.omega_t),
                s.force_p,
                s.force_x,
                s.tip_deflection() / l
            );
            calib::write_output(out, &calib::beam_profile(&s))
        }
        Command::Sweep(args) => {
            let lengths = if args.lengths.is_empty() { vec![l] } else { args.lengths.clone() };
            let rows = calib::sweep(&cfg, cli.common.model, &args.n, &lengths, &args.grid.speeds()?);
            let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
            if failed > 0 {
                eprintln!("{failed} of {} points failed; see the error column", rows.len());
            }
            calib::write_output(out, &rows)
        }
        Command::CompareRegimes(grid) => calib::write_output(out, &calib::compare_regimes(&cfg, &grid.speeds()?)?),
        Command::Fit(args) => {
            let records: Vec<ExperimentRecord> = calib::read_csv(&args.data)?;
            let series = ExperimentSeries::group(cli.common.design, &records);
            let options = FitOptions { max_evaluations: args.max_evaluations, ..FitOptions::default() };
            let bounds = ParamBounds::default();
            let m = cfg.medium;
            let mut fit = calib::fit_parameters(&cfg, &series, Model::Beam, [m.c1, m.c2, m.mu], bounds, options)?;
            if cli.common.model == Model::Der {
                // The beam fit is a cheap warm start for the DER fit.
                let start = [fit.c1, fit.c2, fit.mu];
                fit = calib::fit_parameters(&cfg, &series, Model::Der, start, bounds, options)?;
            }
            eprintln!(
                "C1 = {:.6}, C2 = {:.6}, mu = {:.6}, objective = {:.4e}, converged = {}",
                fit.c1, fit.c2, fit.mu, fit.objective, fit.converged
            );
            calib::write_output(out, &[fit])
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
