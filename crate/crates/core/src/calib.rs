//! Design presets, run configuration, parameter sweeps, regime comparison,
//! CSV input/output and fitting of the medium constants (C₁, C₂, μ).

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::beam::{self, BeamProblem, BeamSolution, Regime, SpeedMetrics};
use crate::der::{self, run_to_steady, SteadyOptions, SteadyRun, Stepper, StepperConfig};
use crate::energy::MaterialParams;
use crate::media::MediumParams;
use crate::rod::{build_robot, RobotGeometry, RobotTopology, Segment, SimState};
use crate::{invalid, rad_s_to_rpm, rpm_to_rad_s, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Design {
    One,
    Two,
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" | "one" | "design1" => Ok(Design::One),
            "2" | "two" | "design2" => Ok(Design::Two),
            other => Err(Error::Config(format!("unknown design '{other}' (expected 1 or 2)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Der,
    Beam,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Der => "der",
            Model::Beam => "beam",
        })
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "der" => Ok(Model::Der),
            "beam" => Ok(Model::Beam),
            other => Err(Error::Config(format!("unknown model '{other}' (expected der or beam)"))),
        }
    }
}

/// `[robot]` section. Lengths in metres, moduli in pascals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    /// Number of flagella.
    pub n: usize,
    /// Flagellum length L (m).
    #[serde(rename = "L")]
    pub flagellum_length: f64,
    /// Flagellum cross-section radius (m).
    pub r0: f64,
    /// Young's modulus (Pa).
    #[serde(rename = "E")]
    pub youngs_modulus: f64,
    /// Poisson ratio.
    pub nu: f64,
    /// Density (kg/m³).
    pub density: f64,
    /// Head radius R_h (m).
    #[serde(rename = "R_h")]
    pub head_radius: f64,
    /// Plate diameter L_p (m).
    #[serde(rename = "L_p")]
    pub plate_diameter: f64,
    /// Flagellar discretization length (m).
    pub edge_length: f64,
}

/// `[medium]` section (dimensionless shape factors, μ in N·s/m²-like units).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumConfig {
    pub mu: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
}

/// `[sim]` section.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Time step (s).
    pub dt: f64,
    /// Motor speed ω_T (rpm).
    #[serde(rename = "omega_T_rpm")]
    pub omega_total_rpm: f64,
    /// Simulated time limit (s).
    pub max_time: f64,
    /// Newton residual tolerance per DOF.
    pub tolerance: f64,
    /// Relative change between averaging windows that counts as steady.
    pub steady_tol: f64,
}

/// `[beam]` section.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub regime: Regime,
    /// Collocation intervals.
    pub grid_points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub robot: RobotConfig,
    pub medium: MediumConfig,
    pub sim: SimConfig,
    pub beam: BeamConfig,
}

impl Config {
    /// Physical parameters and fitted constants of either design.
    pub fn preset(design: Design) -> Self {
        let (l, rh, lp, mu, c1, c2) = match design {
            Design::One => (0.111, 0.020, 0.040, 6.828, 2.420, 0.039),
            Design::Two => (0.089, 0.015, 0.030, 2.125, 28.750, 0.938),
        };
        Config {
            robot: RobotConfig {
                n: 2,
                flagellum_length: l,
                r0: 3.2e-3,
                youngs_modulus: 1.2e6,
                nu: 0.5,
                density: 1000.0,
                head_radius: rh,
                plate_diameter: lp,
                edge_length: 4.11e-3,
            },
            medium: MediumConfig { mu, c1, c2 },
            sim: SimConfig {
                dt: 1e-2,
                omega_total_rpm: 100.0,
                max_time: 60.0,
                tolerance: 1e-8,
                steady_tol: 0.01,
            },
            beam: BeamConfig { regime: Regime::NlbNoHead, grid_points: beam::DEFAULT_GRID },
        }
    }

    /// Overlays a TOML document on `base`; absent keys keep their base values.
    pub fn from_toml(text: &str, base: &Config) -> Result<Self> {
        let overlay: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
        merge_tables(&mut merged, overlay);
        let cfg: Config = toml::Value::Table(merged)
            .try_into()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: &Config) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.robot;
        let bad = |msg: String| Err(Error::Config(msg));
        if r.n == 0 {
            return bad("robot.n must be at least 1".into());
        }
        for (name, v) in [
            ("robot.L", r.flagellum_length),
            ("robot.r0", r.r0),
            ("robot.E", r.youngs_modulus),
            ("robot.density", r.density),
            ("robot.R_h", r.head_radius),
            ("robot.L_p", r.plate_diameter),
            ("robot.edge_length", r.edge_length),
            ("medium.mu", self.medium.mu),
            ("medium.C1", self.medium.c1),
            ("medium.C2", self.medium.c2),
            ("sim.dt", self.sim.dt),
            ("sim.max_time", self.sim.max_time),
            ("sim.tolerance", self.sim.tolerance),
            ("sim.steady_tol", self.sim.steady_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(r.nu > -1.0 && r.nu <= 0.5) {
            return bad(format!("robot.nu must lie in (-1, 0.5], got {}", r.nu));
        }
        if !(self.sim.omega_total_rpm >= 0.0 && self.sim.omega_total_rpm.is_finite()) {
            return bad(format!("sim.omega_T_rpm must be nonnegative, got {}", self.sim.omega_total_rpm));
        }
        if self.beam.grid_points < beam::MIN_GRID {
            return bad(format!("beam.grid_points must be at least {}", beam::MIN_GRID));
        }
        Ok(())
    }

    /// Copy with the medium constants replaced.
    pub fn with_medium(mut self, c1: f64, c2: f64, mu: f64) -> Self {
        self.medium = MediumConfig { mu, c1, c2 };
        self
    }

    pub fn material(&self) -> MaterialParams {
        MaterialParams {
            youngs_modulus: self.robot.youngs_modulus,
            poisson_ratio: self.robot.nu,
            radius: self.robot.r0,
            density: self.robot.density,
            ..MaterialParams::default()
        }
    }

    pub fn geometry(&self, n: usize, length: f64) -> RobotGeometry {
        RobotGeometry {
            head_radius: self.robot.head_radius,
            plate_diameter: self.robot.plate_diameter,
            flagella_count: n,
            flagellum_length: length,
            edge_length: self.robot.edge_length,
        }
    }

    pub fn medium_params(&self, length: f64) -> Result<MediumParams> {
        MediumParams::new(
            self.medium.mu,
            self.medium.c1,
            self.medium.c2,
            self.robot.head_radius,
            self.robot.plate_diameter / 2.0,
            length,
            self.robot.r0,
        )
    }

    pub fn stepper_config(&self) -> StepperConfig {
        StepperConfig { dt: self.sim.dt, tolerance: self.sim.tolerance, ..StepperConfig::default() }
    }

    pub fn steady_options(&self) -> SteadyOptions {
        SteadyOptions { max_time: self.sim.max_time, rel_tol: self.sim.steady_tol, ..SteadyOptions::default() }
    }

    /// Beam problem at rest for a flagellum of the given length.
    pub fn beam_problem(&self, length: f64) -> Result<BeamProblem> {
        let medium = self.medium_params(length)?;
        BeamProblem::new(length, self.material().ei(), &medium, self.beam.regime, self.beam.grid_points)
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Builds and runs one DER simulation to steady state.
pub fn simulate(config: &Config, n: usize, length: f64, omega_total_rpm: f64) -> Result<SteadyRun> {
    let (topology, state, undeformed) = build_robot(&config.geometry(n, length))?;
    let medium = config.medium_params(length)?;
    let mut stepper =
        Stepper::new(topology, undeformed, config.material(), Some(medium), config.stepper_config())?;
    run_to_steady(&mut stepper, state, rpm_to_rad_s(omega_total_rpm), &config.steady_options())
}

/// Splits ω_T in the configured beam regime.
pub fn beam_point(config: &Config, n: usize, length: f64, omega_total_rpm: f64) -> Result<BeamSolution> {
    let medium = config.medium_params(length)?;
    let problem = config.beam_problem(length)?;
    beam::split_omega(rpm_to_rad_s(omega_total_rpm), n, config.beam.regime, &problem, &medium)
}

/// Mean lateral tip offset of the flagella from the head axis through their plate nodes.
pub fn der_tip_deflection(topology: &RobotTopology, state: &SimState) -> f64 {
    let a = der::head_axis(state);
    let mut total = 0.0;
    for i in 0..topology.flagella_count {
        let mut edges = topology.edges.iter().filter(|e| e.segment == Segment::Flagellum(i));
        let Some(first) = edges.next() else { continue };
        let tip = edges.last().map_or(first.end, |e| e.end);
        let d = state.node(tip) - state.node(first.start);
        total += (d - a * a.dot(&d)).norm();
    }
    total / topology.flagella_count.max(1) as f64
}

/// Locomotion outputs of one model evaluation. Rates are magnitudes (rad/s),
/// forces are per flagellum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub v: f64,
    pub omega_h: f64,
    pub omega_t: f64,
    pub force_p: f64,
    pub tip_deflection: f64,
}

pub fn evaluate_point(
    config: &Config,
    model: Model,
    n: usize,
    length: f64,
    omega_total_rpm: f64,
) -> Result<PointResult> {
    match model {
        Model::Beam => {
            let s = beam_point(config, n, length, omega_total_rpm)?;
            Ok(PointResult {
                v: s.v_h,
                omega_h: s.omega_h,
                omega_t: s.omega_t,
                force_p: s.force_p,
                tip_deflection: s.tip_deflection(),
            })
        }
        Model::Der => {
            let run = simulate(config, n, length, omega_total_rpm)?;
            let (topology, _, _) = build_robot(&config.geometry(n, length))?;
            let medium = config.medium_params(length)?;
            let m = run.metrics;
            Ok(PointResult {
                v: m.v,
                omega_h: m.omega_h.abs(),
                omega_t: m.omega_t.abs(),
                force_p: medium.head_drag_coefficient() * m.v / n as f64,
                tip_deflection: der_tip_deflection(&topology, &run.state),
            })
        }
    }
}

/// One sweep point. SI columns are `None` when the point failed, in which
/// case `error` holds the message. Normalized columns use `T̄ = η_p L⁴/EI`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: Model,
    pub n: usize,
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "omega_T_rpm")]
    pub omega_total_rpm: f64,
    pub v: Option<f64>,
    pub omega_h: Option<f64>,
    pub omega_t: Option<f64>,
    pub force_p: Option<f64>,
    pub tip_deflection: Option<f64>,
    pub v_bar: Option<f64>,
    pub omega_h_bar: Option<f64>,
    pub omega_t_bar: Option<f64>,
    #[serde(rename = "omega_T_bar")]
    pub omega_total_bar: Option<f64>,
    pub error: String,
}

fn sweep_row(config: &Config, model: Model, n: usize, length: f64, rpm: f64) -> SweepRow {
    let mut row = SweepRow {
        model,
        n,
        length,
        omega_total_rpm: rpm,
        v: None,
        omega_h: None,
        omega_t: None,
        force_p: None,
        tip_deflection: None,
        v_bar: None,
        omega_h_bar: None,
        omega_t_bar: None,
        omega_total_bar: None,
        error: String::new(),
    };
    let result = config
        .beam_problem(length)
        .and_then(|problem| Ok((problem, evaluate_point(config, model, n, length, rpm)?)));
    match result {
        Ok((problem, p)) => {
            let raw = SpeedMetrics {
                v: p.v,
                omega_h: p.omega_h,
                omega_t: p.omega_t,
                omega_total: rpm_to_rad_s(rpm),
            };
            let nm = beam::normalize(&raw, &problem);
            row.v = Some(p.v);
            row.omega_h = Some(p.omega_h);
            row.omega_t = Some(p.omega_t);
            row.force_p = Some(p.force_p);
            row.tip_deflection = Some(p.tip_deflection);
            row.v_bar = Some(nm.v);
            row.omega_h_bar = Some(nm.omega_h);
            row.omega_t_bar = Some(nm.omega_t);
            row.omega_total_bar = Some(nm.omega_total);
        }
        Err(e) => row.error = e.to_string(),
    }
    row
}

/// Evaluates every (n, L, ω_T) combination in parallel; rows follow input
/// order and failed points become error rows.
pub fn sweep(config: &Config, model: Model, ns: &[usize], lengths: &[f64], omega_rpm: &[f64]) -> Vec<SweepRow> {
    let points: Vec<(usize, f64, f64)> = ns
        .iter()
        .flat_map(|&n| lengths.iter().flat_map(move |&l| omega_rpm.iter().map(move |&w| (n, l, w))))
        .collect();
    points.par_iter().map(|&(n, l, w)| sweep_row(config, model, n, l, w)).collect()
}

/// First ω̄_T at which `v(n_high)` overtakes `v(n_low)`, linearly
/// interpolated; `None` if the ordering never flips. Rows must share L.
pub fn find_crossover(rows: &[SweepRow], n_low: usize, n_high: usize) -> Option<f64> {
    let series = |n: usize| -> Vec<(f64, f64, f64)> {
        rows.iter()
            .filter(|r| r.n == n)
            .filter_map(|r| Some((r.omega_total_rpm, r.omega_total_bar?, r.v?)))
            .collect()
    };
    let (lo, hi) = (series(n_low), series(n_high));
    let mut diffs: Vec<(f64, f64)> = lo
        .iter()
        .filter_map(|&(w, wb, v)| hi.iter().find(|h| h.0 == w).map(|h| (wb, h.2 - v)))
        .collect();
    diffs.sort_by(|a, b| a.0.total_cmp(&b.0));
    diffs.windows(2).find(|p| p[0].1 <= 0.0 && p[1].1 > 0.0).map(|p| {
        let (a, b) = (p[0], p[1]);
        a.0 + (b.0 - a.0) * (-a.1) / (b.1 - a.1)
    })
}

/// Tip deflection `w(L)/L` in the three beam regimes at one motor speed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    #[serde(rename = "omega_T_rpm")]
    pub omega_total_rpm: f64,
    #[serde(rename = "omega_T_bar")]
    pub omega_total_bar: f64,
    /// ω_t of the nonlinear regime (rpm).
    pub omega_t_rpm: f64,
    pub lb_tip_over_l: f64,
    pub nlb_tip_over_l: f64,
    pub nlb_no_head_tip_over_l: f64,
}

/// Compares the three regimes at each motor speed, each with its own ω split.
pub fn compare_regimes(config: &Config, omega_rpm: &[f64]) -> Result<Vec<RegimeRow>> {
    let l = config.robot.flagellum_length;
    let problem = config.beam_problem(l)?;
    let medium = config.medium_params(l)?;
    let t = beam::relaxation_time(problem.eta_p, l, problem.ei);
    omega_rpm
        .par_iter()
        .map(|&rpm| {
            let w = rpm_to_rad_s(rpm);
            let tip = |regime| -> Result<(f64, f64)> {
                let s = beam::split_omega(w, config.robot.n, regime, &problem, &medium)?;
                Ok((s.tip_deflection() / l, s.omega_t))
            };
            let (lb, _) = tip(Regime::Lb)?;
            let (nlb, omega_t) = tip(Regime::Nlb)?;
            let (no_head, _) = tip(Regime::NlbNoHead)?;
            Ok(RegimeRow {
                omega_total_rpm: rpm,
                omega_total_bar: w * t,
                omega_t_rpm: rad_s_to_rpm(omega_t),
                lb_tip_over_l: lb,
                nlb_tip_over_l: nlb,
                nlb_no_head_tip_over_l: no_head,
            })
        })
        .collect()
}

/// Deflection profile row of a beam solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub y: f64,
    pub w: f64,
    pub w_prime: f64,
    pub w_second: f64,
    pub w_third: f64,
}

pub fn beam_profile(solution: &BeamSolution) -> Vec<ProfileRow> {
    (0..solution.y.len())
        .map(|i| ProfileRow {
            y: solution.y[i],
            w: solution.w[i],
            w_prime: solution.slope[i],
            w_second: solution.curvature[i],
            w_third: solution.shear[i],
        })
        .collect()
}

pub fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read, T: DeserializeOwned>(reader: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(reader).deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_rows(std::fs::File::create(path)?, rows)
}

/// Writes to `path`, or to stdout when `path` is `None`.
pub fn write_output<T: Serialize>(path: Option<&Path>, rows: &[T]) -> Result<()> {
    match path {
        Some(p) => write_csv(p, rows),
        None => write_rows(std::io::stdout().lock(), rows),
    }
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_rows(std::fs::File::open(path)?)
}

/// One measured (or synthetic) operating point. Standard deviations of zero
/// mean "not reported".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub n: usize,
    #[serde(rename = "omega_T_rpm")]
    pub omega_total_rpm: f64,
    /// Speed (m/s).
    pub v: f64,
    pub v_std: f64,
    pub omega_h_rpm: f64,
    pub omega_h_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSeries {
    pub design: Design,
    pub n: usize,
    pub records: Vec<ExperimentRecord>,
}

impl ExperimentSeries {
    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            if !(r.omega_total_rpm > 0.0) {
                return Err(invalid(format!("record motor speed must be positive, got {}", r.omega_total_rpm)));
            }
            if !(r.v_std >= 0.0 && r.omega_h_std >= 0.0) {
                return Err(invalid("standard deviations must be nonnegative"));
            }
            if r.n != self.n {
                return Err(invalid(format!("record has n = {} in a series with n = {}", r.n, self.n)));
            }
        }
        Ok(())
    }

    /// Groups records by flagella count, in order of first appearance.
    pub fn group(design: Design, records: &[ExperimentRecord]) -> Vec<ExperimentSeries> {
        let mut out: Vec<ExperimentSeries> = Vec::new();
        for r in records {
            match out.iter_mut().find(|s| s.n == r.n) {
                Some(s) => s.records.push(*r),
                None => out.push(ExperimentSeries { design, n: r.n, records: vec![*r] }),
            }
        }
        out
    }
}

/// Noise-free series generated by a model; σ is `rel_sigma` times each value.
pub fn synthetic_series(
    config: &Config,
    model: Model,
    design: Design,
    n: usize,
    omega_rpm: &[f64],
    rel_sigma: f64,
) -> Result<ExperimentSeries> {
    let l = config.robot.flagellum_length;
    let records = omega_rpm
        .par_iter()
        .map(|&w| {
            let p = evaluate_point(config, model, n, l, w)?;
            let wh = rad_s_to_rpm(p.omega_h);
            Ok(ExperimentRecord {
                n,
                omega_total_rpm: w,
                v: p.v,
                v_std: rel_sigma * p.v.abs(),
                omega_h_rpm: wh,
                omega_h_std: rel_sigma * wh.abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentSeries { design, n, records })
}

/// Box bounds on (C₁, C₂, μ).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamBounds {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds { lower: [1e-3; 3], upper: [1e3; 3] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub max_evaluations: usize,
    /// Simplex size (in log-parameters) below which the search stops.
    pub xtol: f64,
    /// Relative objective spread below which the search stops.
    pub ftol: f64,
    /// Initial simplex edge in log-parameters.
    pub initial_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_evaluations: 1500, xtol: 1e-7, ftol: 1e-12, initial_step: 0.3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    pub mu: f64,
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn weight(std: f64) -> f64 {
    if std > 0.0 {
        1.0 / (std * std)
    } else {
        1.0
    }
}

/// Weighted least-squares misfit of (C₁, C₂, μ) against `series`; failed
/// model evaluations count as infinite misfit.
pub fn objective(config: &Config, model: Model, series: &[ExperimentSeries], params: [f64; 3]) -> f64 {
    let cfg = config.with_medium(params[0], params[1], params[2]);
    let l = cfg.robot.flagellum_length;
    let records: Vec<&ExperimentRecord> = series.iter().flat_map(|s| &s.records).collect();
    let terms: Vec<f64> = records
        .par_iter()
        .map(|r| match evaluate_point(&cfg, model, r.n, l, r.omega_total_rpm) {
            Ok(p) => {
                let dv = p.v - r.v;
                let dw = rad_s_to_rpm(p.omega_h) - r.omega_h_rpm;
                dv * dv * weight(r.v_std) + dw * dw * weight(r.omega_h_std)
            }
            Err(_) => f64::INFINITY,
        })
        .collect();
    terms.iter().sum()
}

/// Fits (C₁, C₂, μ) by Nelder–Mead on their logarithms, clamped to `bounds`.
/// The search is deterministic for fixed inputs.
pub fn fit_parameters(
    config: &Config,
    series: &[ExperimentSeries],
    model: Model,
    initial: [f64; 3],
    bounds: ParamBounds,
    options: FitOptions,
) -> Result<FitResult> {
    for s in series {
        s.validate()?;
    }
    let mut speeds: Vec<f64> = series.iter().flat_map(|s| s.records.iter().map(|r| r.omega_total_rpm)).collect();
    speeds.sort_by(f64::total_cmp);
    speeds.dedup();
    if speeds.len() < 3 {
        return Err(invalid("fitting needs at least three distinct motor speeds"));
    }
    for k in 0..3 {
        let (lo, hi, x) = (bounds.lower[k], bounds.upper[k], initial[k]);
        if !(lo > 0.0 && hi > lo) {
            return Err(invalid("parameter bounds must be positive and increasing"));
        }
        if !(x >= lo && x <= hi) {
            return Err(invalid(format!("initial guess {x} outside bounds [{lo}, {hi}]")));
        }
    }
    let lo: [f64; 3] = bounds.lower.map(f64::ln);
    let hi: [f64; 3] = bounds.upper.map(f64::ln);
    let clamp = |x: [f64; 3]| -> [f64; 3] { std::array::from_fn(|k| x[k].clamp(lo[k], hi[k])) };
    let f = |x: &[f64; 3]| objective(config, model, series, x.map(f64::exp));

    let x0 = clamp(initial.map(f64::ln));
    let mut simplex: Vec<[f64; 3]> = vec![x0];
    for k in 0..3 {
        let mut x = x0;
        x[k] += if x0[k] + options.initial_step <= hi[k] { options.initial_step } else { -options.initial_step };
        simplex.push(clamp(x));
    }
    let mut values: Vec<f64> = simplex.par_iter().map(f).collect();
    let mut evaluations = 4;
    let mut iterations = 0;
    let mut converged = false;

    while evaluations < options.max_evaluations {
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i]).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let size = simplex[1..]
            .iter()
            .map(|x| (0..3).map(|k| (x[k] - simplex[0][k]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let spread = values[3] - values[0];
        if values[0].is_finite() && size < options.xtol && spread <= options.ftol * (1.0 + values[0].abs()) {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: [f64; 3] = std::array::from_fn(|k| simplex[..3].iter().map(|x| x[k]).sum::<f64>() / 3.0);
        let along = |t: f64| clamp(std::array::from_fn(|k| centroid[k] + t * (simplex[3][k] - centroid[k])));
        let xr = along(-1.0);
        let fr = f(&xr);
        evaluations += 1;
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            evaluations += 1;
            (simplex[3], values[3]) = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < values[2] {
            (simplex[3], values[3]) = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < values[3] {
            let x = along(-0.5);
            (x, f(&x))
        } else {
            let x = along(0.5);
            (x, f(&x))
        };
        evaluations += 1;
        if fc < values[3].min(fr) {
            (simplex[3], values[3]) = (xc, fc);
            continue;
        }
        let best = simplex[0];
        let shrunk: Vec<[f64; 3]> = simplex[1..]
            .iter()
            .map(|x| std::array::from_fn(|k| best[k] + 0.5 * (x[k] - best[k])))
            .collect();
        let fs: Vec<f64> = shrunk.par_iter().map(f).collect();
        evaluations += 3;
        for (i, (x, v)) in shrunk.into_iter().zip(fs).enumerate() {
            simplex[i + 1] = x;
            values[i + 1] = v;
        }
    }
    let best = (0..simplex.len()).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    let p = simplex[best].map(f64::exp);
    Ok(FitResult {
        c1: p[0],
        c2: p[1],
        mu: p[2],
        objective: values[best],
        iterations,
        evaluations,
        converged,
    })
}

/// Stokes drag `6πμR` and torque `8πμR³` factors of a sphere of radius `r`.
pub fn stokes_factors(mu: f64, r: f64) -> (f64, f64) {
    (6.0 * PI * mu * r, 8.0 * PI * mu * r.powi(3))
}
