//! Reduced beam model of one clamped flagellum dragged through the medium.
//!
//! The flagellum is a cantilever along y, clamped at the plate (y = 0) and
//! free at the tip (y = L), loaded by resistive-force drag while it sweeps
//! sideways at speed `v = ω_t R_d`. Three regimes are provided:
//!
//! * [`Regime::Lb`]: linear beam, closed-form uniform-load deflection;
//! * [`Regime::Nlb`]: the full slope-dependent load including the head's
//!   axial velocity `v_h`;
//! * [`Regime::NlbNoHead`]: the same nonlinear load with `v_h = 0`.
//!
//! The nonlinear boundary-value problem
//! `EI w'''' = η_p v + (η_t − η_p)(v w'² + v_h w')/(1 + w'²)` with
//! `w(0) = w'(0) = w''(L) = w'''(L) = 0` is solved as a first-order system of
//! four unknowns by Hermite–Simpson collocation and damped Newton.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::media::MediumParams;
use crate::sparse::{SparseMatrix, SparsePattern};
use crate::{invalid, Error, Result};

/// Default number of collocation intervals.
pub const DEFAULT_GRID: usize = 128;
/// Smallest admissible number of collocation intervals.
pub const MIN_GRID: usize = 32;

/// Collocation residual below which a solve counts as converged.
const RESIDUAL_TOL: f64 = 1e-8;
/// Newton stops early once the residual falls below this.
const NEWTON_TARGET: f64 = 1e-11;
const NEWTON_MAX_ITER: usize = 60;
const CONTINUATION_STEPS: i32 = 12;
/// Inner head-speed fixed point tolerance (m/s).
const HEAD_SPEED_TOL: f64 = 1e-8;
/// Relative tolerance of the ω_T split, `|ω_t + ω_h − ω_T| < tol·ω_T`.
const SPLIT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Linear beam, closed form.
    Lb,
    /// Nonlinear beam including the head velocity.
    Nlb,
    /// Nonlinear beam with the head velocity dropped.
    NlbNoHead,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Lb, Regime::Nlb, Regime::NlbNoHead];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Lb => "lb",
            Regime::Nlb => "nlb",
            Regime::NlbNoHead => "nlb_no_head",
        }
    }

    /// Whether the head's axial velocity enters the load and thrust.
    pub fn uses_head_speed(self) -> bool {
        !matches!(self, Regime::NlbNoHead)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "lb" => Ok(Regime::Lb),
            "nlb" => Ok(Regime::Nlb),
            "nlb_no_head" | "nlb_w/o_head" | "nlb_without_head" => Ok(Regime::NlbNoHead),
            other => Err(invalid(format!("unknown beam regime '{other}'"))),
        }
    }
}

/// One flagellum treated as a cantilever.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamProblem {
    /// Flagellum length L (m).
    pub length: f64,
    /// Bending stiffness EI (N·m²).
    pub ei: f64,
    pub eta_t: f64,
    pub eta_p: f64,
    /// Plate radius R_d (m).
    pub plate_radius: f64,
    /// Flagellar rotation rate ω_t (rad/s).
    pub omega_t: f64,
    /// Head axial speed v_h (m/s); ignored in [`Regime::NlbNoHead`].
    pub v_h: f64,
    pub regime: Regime,
    /// Number of collocation intervals M.
    pub grid: usize,
}

impl BeamProblem {
    /// Problem at rest (`ω_t = v_h = 0`) with drag coefficients taken from `medium`.
    pub fn new(length: f64, ei: f64, medium: &MediumParams, regime: Regime, grid: usize) -> Result<Self> {
        let p = BeamProblem {
            length,
            ei,
            eta_t: medium.eta_t,
            eta_p: medium.eta_p,
            plate_radius: medium.plate_radius,
            omega_t: 0.0,
            v_h: 0.0,
            regime,
            grid,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.ei > 0.0 && self.plate_radius > 0.0) {
            return Err(invalid("beam length, EI and plate radius must be positive"));
        }
        if !(self.eta_t > 0.0 && self.eta_p > 0.0) {
            return Err(invalid("drag coefficients must be positive"));
        }
        if self.grid < MIN_GRID {
            return Err(invalid(format!("beam grid must have at least {MIN_GRID} intervals")));
        }
        if !(self.omega_t.is_finite() && self.v_h.is_finite()) {
            return Err(invalid("beam speeds must be finite"));
        }
        Ok(())
    }

    pub fn with_omega_t(mut self, omega_t: f64) -> Self {
        self.omega_t = omega_t;
        self
    }

    pub fn with_head_speed(mut self, v_h: f64) -> Self {
        self.v_h = v_h;
        self
    }

    pub fn with_regime(mut self, regime: Regime) -> Self {
        self.regime = regime;
        self
    }

    /// Sideways speed of the flagellum, `v = ω_t R_d`.
    pub fn tail_speed(&self) -> f64 {
        self.omega_t * self.plate_radius
    }

    /// Head speed entering the load: `v_h`, or zero without head.
    pub fn effective_head_speed(&self) -> f64 {
        if self.regime.uses_head_speed() {
            self.v_h
        } else {
            0.0
        }
    }

    /// Linear load `p_t = η_p ω_t R_d`.
    pub fn linear_load(&self) -> f64 {
        self.eta_p * self.tail_speed()
    }

    /// Distributed load `p(w')` along x.
    pub fn load(&self, slope: f64) -> f64 {
        let v = self.tail_speed();
        let vh = self.effective_head_speed();
        let s2 = slope * slope;
        self.eta_p * v + (self.eta_t - self.eta_p) * (v * s2 + vh * slope) / (1.0 + s2)
    }

    /// `dp/dw'`.
    pub fn load_derivative(&self, slope: f64) -> f64 {
        let v = self.tail_speed();
        let vh = self.effective_head_speed();
        let s2 = slope * slope;
        (self.eta_t - self.eta_p) * (2.0 * v * slope + vh * (1.0 - s2)) / ((1.0 + s2) * (1.0 + s2))
    }

    /// Grid spacing `L / M`.
    pub fn spacing(&self) -> f64 {
        self.length / self.grid as f64
    }
}

/// Deflection and loads of one flagellum.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamSolution {
    pub regime: Regime,
    /// Grid abscissae y_i (m), `M + 1` points.
    pub y: Vec<f64>,
    /// Deflection w (m).
    pub w: Vec<f64>,
    /// Slope w'.
    pub slope: Vec<f64>,
    /// w'' (1/m).
    pub curvature: Vec<f64>,
    /// w''' (1/m²).
    pub shear: Vec<f64>,
    /// Slope at interval midpoints, `M` values.
    pub mid_slope: Vec<f64>,
    /// Total x-force per flagellum F_x (N).
    pub force_x: f64,
    /// Propulsive force per flagellum F_p (N).
    pub force_p: f64,
    /// Head axial speed (m/s); zero until head balance is applied.
    pub v_h: f64,
    /// Head rotation rate (rad/s); zero until head balance is applied.
    pub omega_h: f64,
    pub omega_t: f64,
    /// Max-norm of the collocation residual.
    pub residual: f64,
}

impl BeamSolution {
    pub fn tip_deflection(&self) -> f64 {
        *self.w.last().expect("non-empty grid")
    }

    /// Boundary-condition residuals `[w(0), w'(0), w''(L), w'''(L)]`.
    pub fn boundary_residuals(&self) -> [f64; 4] {
        let m = self.y.len() - 1;
        [self.w[0], self.slope[0], self.curvature[m], self.shear[m]]
    }

    /// Total motor speed `ω_t + ω_h`.
    pub fn omega_total(&self) -> f64 {
        self.omega_t + self.omega_h
    }

    fn states(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(4 * self.y.len());
        for i in 0..self.y.len() {
            z.extend_from_slice(&[self.w[i], self.slope[i], self.curvature[i], self.shear[i]]);
        }
        z
    }
}

/// State `[w, w', w'', w''']` of the linear cantilever at `y`.
fn lb_state(y: f64, problem: &BeamProblem) -> [f64; 4] {
    let l = problem.length;
    let c = problem.linear_load() / problem.ei;
    [
        c * y * y * (6.0 * l * l - 4.0 * l * y + y * y) / 24.0,
        c * y * (3.0 * l * l - 3.0 * l * y + y * y) / 6.0,
        c * (l - y) * (l - y) / 2.0,
        -c * (l - y),
    ]
}

/// `w(y) = p_t y²(6L² − 4Ly + y²)/(24 EI)` with `p_t = η_p ω_t R_d`.
pub fn lb_deflection(y: f64, problem: &BeamProblem) -> f64 {
    lb_state(y, problem)[0]
}

/// Slope of the linear deflection.
pub fn lb_slope(y: f64, problem: &BeamProblem) -> f64 {
    lb_state(y, problem)[1]
}

/// `(F_x, F_p) = (η_p ω_t R_d L, (η_p − η_t) ω_t R_d w(L) − η_t v_h L)`.
pub fn lb_forces(problem: &BeamProblem) -> (f64, f64) {
    let v = problem.tail_speed();
    let l = problem.length;
    let fx = problem.eta_p * v * l;
    let fp = (problem.eta_p - problem.eta_t) * v * lb_deflection(l, problem)
        - problem.eta_t * problem.v_h * l;
    (fx, fp)
}

fn grid(problem: &BeamProblem) -> Vec<f64> {
    let h = problem.spacing();
    (0..=problem.grid).map(|i| i as f64 * h).collect()
}

/// Closed-form linear solution sampled on the grid.
pub fn lb_solve(problem: &BeamProblem) -> Result<BeamSolution> {
    problem.validate()?;
    let ys = grid(problem);
    let h = problem.spacing();
    let z: Vec<f64> = ys.iter().flat_map(|&y| lb_state(y, problem)).collect();
    let mid: Vec<f64> = (0..problem.grid).map(|i| lb_slope((i as f64 + 0.5) * h, problem)).collect();
    let (fx, fp) = lb_forces(problem);
    Ok(assemble_solution(problem, ys, &z, mid, fx, fp, 0.0))
}

fn assemble_solution(
    problem: &BeamProblem,
    y: Vec<f64>,
    z: &[f64],
    mid_slope: Vec<f64>,
    force_x: f64,
    force_p: f64,
    residual: f64,
) -> BeamSolution {
    let col = |k: usize| z.iter().skip(k).step_by(4).copied().collect::<Vec<_>>();
    BeamSolution {
        regime: problem.regime,
        y,
        w: col(0),
        slope: col(1),
        curvature: col(2),
        shear: col(3),
        mid_slope,
        force_x,
        force_p,
        v_h: problem.v_h,
        omega_h: 0.0,
        omega_t: problem.omega_t,
        residual,
    }
}

fn rhs(s: &Vector4<f64>, problem: &BeamProblem) -> Vector4<f64> {
    Vector4::new(s[1], s[2], s[3], problem.load(s[1]) / problem.ei)
}

fn rhs_jacobian(s: &Vector4<f64>, problem: &BeamProblem) -> Matrix4<f64> {
    let mut j = Matrix4::zeros();
    j[(0, 1)] = 1.0;
    j[(1, 2)] = 1.0;
    j[(2, 3)] = 1.0;
    j[(3, 1)] = problem.load_derivative(s[1]) / problem.ei;
    j
}

fn node(z: &[f64], i: usize) -> Vector4<f64> {
    Vector4::from_column_slice(&z[4 * i..4 * i + 4])
}

/// Hermite–Simpson midpoint state of interval `i`.
fn midpoint(z: &[f64], i: usize, h: f64, problem: &BeamProblem) -> Vector4<f64> {
    let (a, b) = (node(z, i), node(z, i + 1));
    (a + b) * 0.5 + (rhs(&a, problem) - rhs(&b, problem)) * (h / 8.0)
}

/// Collocation residual: two clamp rows, `4M` interval defects, two free-end rows.
fn collocation_residual(z: &[f64], problem: &BeamProblem) -> Vec<f64> {
    let m = problem.grid;
    let h = problem.spacing();
    let mut r = vec![0.0; 4 * (m + 1)];
    r[0] = z[0];
    r[1] = z[1];
    for i in 0..m {
        let (a, b) = (node(z, i), node(z, i + 1));
        let fm = rhs(&midpoint(z, i, h, problem), problem);
        let d = b - a - (rhs(&a, problem) + fm * 4.0 + rhs(&b, problem)) * (h / 6.0);
        r[2 + 4 * i..6 + 4 * i].copy_from_slice(d.as_slice());
    }
    r[4 * m + 2] = z[4 * m + 2];
    r[4 * m + 3] = z[4 * m + 3];
    r
}

fn collocation_pattern(m: usize) -> SparsePattern {
    let n = 4 * (m + 1);
    let mut entries = vec![(0, 0), (1, 1), (n - 2, n - 2), (n - 1, n - 1)];
    for i in 0..m {
        for a in 0..4 {
            for c in 0..8 {
                entries.push((2 + 4 * i + a, 4 * i + c));
            }
        }
    }
    SparsePattern::new(n, entries)
}

fn collocation_jacobian(z: &[f64], problem: &BeamProblem, jac: &mut SparseMatrix) {
    let m = problem.grid;
    let h = problem.spacing();
    let n = 4 * (m + 1);
    let id = Matrix4::<f64>::identity();
    jac.clear();
    jac.add(0, 0, 1.0);
    jac.add(1, 1, 1.0);
    jac.add(n - 2, n - 2, 1.0);
    jac.add(n - 1, n - 1, 1.0);
    for i in 0..m {
        let (a, b) = (node(z, i), node(z, i + 1));
        let (fa, fb) = (rhs_jacobian(&a, problem), rhs_jacobian(&b, problem));
        let fm = rhs_jacobian(&midpoint(z, i, h, problem), problem);
        let da = -id - (fa + fm * (id * 0.5 + fa * (h / 8.0)) * 4.0) * (h / 6.0);
        let db = id - (fb + fm * (id * 0.5 - fb * (h / 8.0)) * 4.0) * (h / 6.0);
        for r in 0..4 {
            for c in 0..4 {
                jac.add(2 + 4 * i + r, 4 * i + c, da[(r, c)]);
                jac.add(2 + 4 * i + r, 4 * (i + 1) + c, db[(r, c)]);
            }
        }
    }
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Damped Newton on the collocation equations starting from `z`.
fn newton_collocation(problem: &BeamProblem, mut z: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let pattern = Arc::new(collocation_pattern(problem.grid));
    let mut jac = SparseMatrix::zeros(pattern);
    let mut r = collocation_residual(&z, problem);
    let mut norm = max_norm(&r);
    for _ in 0..NEWTON_MAX_ITER {
        if !norm.is_finite() {
            break;
        }
        if norm < NEWTON_TARGET {
            return Ok((z, norm));
        }
        collocation_jacobian(&z, problem, &mut jac);
        let dz = jac.solve(&r)?;
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda > 1e-4 {
            let trial: Vec<f64> = z.iter().zip(&dz).map(|(a, d)| a - lambda * d).collect();
            let rt = collocation_residual(&trial, problem);
            let nt = max_norm(&rt);
            if nt.is_finite() && nt < (1.0 - 1e-4 * lambda) * norm {
                z = trial;
                r = rt;
                norm = nt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            // Round-off floor: no descent possible but already converged.
            if norm < RESIDUAL_TOL {
                return Ok((z, norm));
            }
            break;
        }
    }
    if norm < RESIDUAL_TOL {
        Ok((z, norm))
    } else {
        Err(Error::BvpFailed(format!(
            "collocation Newton stalled at residual {norm:.3e} (omega_t = {})",
            problem.omega_t
        )))
    }
}

fn finish_nlb(problem: &BeamProblem, z: Vec<f64>, residual: f64) -> BeamSolution {
    let h = problem.spacing();
    let mid: Vec<f64> = (0..problem.grid).map(|i| midpoint(&z, i, h, problem)[1]).collect();
    let mut sol = assemble_solution(problem, grid(problem), &z, mid, 0.0, 0.0, residual);
    let (fx, fp) = propulsion_integrals(&sol, problem);
    sol.force_x = fx;
    sol.force_p = fp;
    sol
}

/// Solves the nonlinear cantilever, warm-started from the linear solution.
///
/// On Newton failure the solve restarts from the linear solution at a much
/// smaller `ω_t` and steps `ω_t` back up geometrically.
pub fn nlb_solve(problem: &BeamProblem) -> Result<BeamSolution> {
    problem.validate()?;
    let guess = lb_solve(problem)?.states();
    match newton_collocation(problem, guess) {
        Ok((z, res)) => Ok(finish_nlb(problem, z, res)),
        Err(_) => nlb_continuation(problem),
    }
}

/// Nonlinear solve warm-started from a previous solution on the same grid.
pub fn nlb_solve_from(problem: &BeamProblem, previous: &BeamSolution) -> Result<BeamSolution> {
    problem.validate()?;
    if previous.y.len() != problem.grid + 1 {
        return nlb_solve(problem);
    }
    match newton_collocation(problem, previous.states()) {
        Ok((z, res)) => Ok(finish_nlb(problem, z, res)),
        Err(_) => nlb_solve(problem),
    }
}

fn nlb_continuation(problem: &BeamProblem) -> Result<BeamSolution> {
    let start = problem.with_omega_t(problem.omega_t * 2f64.powi(-CONTINUATION_STEPS));
    let mut z = lb_solve(&start)?.states();
    let mut res = 0.0;
    for k in (0..=CONTINUATION_STEPS).rev() {
        let p = problem.with_omega_t(problem.omega_t * 2f64.powi(-k));
        let (zk, rk) = newton_collocation(&p, z)?;
        z = zk;
        res = rk;
    }
    Ok(finish_nlb(problem, z, res))
}

/// Solves `problem` in its own regime.
pub fn solve(problem: &BeamProblem) -> Result<BeamSolution> {
    match problem.regime {
        Regime::Lb => lb_solve(problem),
        Regime::Nlb | Regime::NlbNoHead => nlb_solve(problem),
    }
}

/// `(F_x, F_p) = (∫ p_t dy, ∫ q dy)` by composite Simpson over each interval.
///
/// `p_t = η_p v + (η_t − η_p) v sin²θ` and
/// `q = (η_p − η_t)(v sinθ cosθ + v_h cos²θ) − η_p v_h`, with
/// `sinθ = w'/√(1 + w'²)`, `cosθ = 1/√(1 + w'²)`.
pub fn propulsion_integrals(solution: &BeamSolution, problem: &BeamProblem) -> (f64, f64) {
    let v = problem.tail_speed();
    let vh = problem.effective_head_speed();
    let (et, ep) = (problem.eta_t, problem.eta_p);
    let integrands = |s: f64| {
        let c2 = 1.0 / (1.0 + s * s);
        let sin2 = s * s * c2;
        let sincos = s * c2;
        let pt = ep * v + (et - ep) * v * sin2;
        let q = (ep - et) * (v * sincos + vh * c2) - ep * vh;
        (pt, q)
    };
    let mut fx = 0.0;
    let mut fp = 0.0;
    for i in 0..solution.mid_slope.len() {
        let h = solution.y[i + 1] - solution.y[i];
        let (a, b, m) = (
            integrands(solution.slope[i]),
            integrands(solution.slope[i + 1]),
            integrands(solution.mid_slope[i]),
        );
        fx += h / 6.0 * (a.0 + 4.0 * m.0 + b.0);
        fp += h / 6.0 * (a.1 + 4.0 * m.1 + b.1);
    }
    (fx, fp)
}

/// Head force and torque balance: `v_h = n F_p/(C₁6πμR_h)`, `ω_h = n R_d F_x/(C₂8πμR_h³)`.
pub fn head_balance(force_p: f64, force_x: f64, n: usize, medium: &MediumParams) -> (f64, f64) {
    let n = n as f64;
    (
        n * force_p / medium.head_drag_coefficient(),
        n * medium.plate_radius * force_x / medium.head_torque_coefficient(),
    )
}

/// Per-regime forces at fixed `ω_t`, with `v_h` resolved self-consistently.
struct Balancer<'a> {
    n: usize,
    template: BeamProblem,
    medium: &'a MediumParams,
    warm: Option<BeamSolution>,
}

impl Balancer<'_> {
    fn forces_at(&mut self, problem: &BeamProblem) -> Result<BeamSolution> {
        let sol = match problem.regime {
            Regime::Lb => {
                let mut s = lb_solve(problem)?;
                let (fx, fp) = lb_forces(problem);
                s.force_x = fx;
                s.force_p = fp;
                s
            }
            _ => match &self.warm {
                Some(prev) => nlb_solve_from(problem, prev)?,
                None => nlb_solve(problem)?,
            },
        };
        if problem.regime != Regime::Lb {
            self.warm = Some(sol.clone());
        }
        Ok(sol)
    }

    fn balanced(&mut self, sol: BeamSolution) -> BeamSolution {
        let (v_h, omega_h) = head_balance(sol.force_p, sol.force_x, self.n, self.medium);
        BeamSolution { v_h, omega_h, ..sol }
    }

    /// Solution at `ω_t` whose `v_h` matches the head balance to `HEAD_SPEED_TOL`.
    fn evaluate(&mut self, omega_t: f64) -> Result<BeamSolution> {
        let base = self.template.with_omega_t(omega_t).with_head_speed(0.0);
        let first = self.forces_at(&base)?;
        let first = self.balanced(first);
        if !self.template.regime.uses_head_speed() {
            return Ok(first);
        }
        // Fixed point v = T(v) on the head speed, accelerated by secant steps on T(v) − v.
        let (mut x0, mut g0) = (0.0, first.v_h);
        let mut x1 = first.v_h;
        let mut last = first;
        for _ in 0..200 {
            let sol = self.forces_at(&base.with_head_speed(x1))?;
            let sol = self.balanced(sol);
            let g1 = sol.v_h;
            if (g1 - x1).abs() < HEAD_SPEED_TOL {
                return Ok(sol);
            }
            let (h0, h1) = (g0 - x0, g1 - x1);
            let next = if h1 != h0 { x1 - h1 * (x1 - x0) / (h1 - h0) } else { g1 };
            x0 = x1;
            g0 = g1;
            x1 = if next.is_finite() { next } else { g1 };
            last = sol;
        }
        Err(Error::BvpFailed(format!(
            "head speed fixed point did not converge (last v_h = {})",
            last.v_h
        )))
    }
}

/// Splits the motor speed `ω_T = ω_t + ω_h` between flagella and head.
///
/// Root-finds `g(ω_t) = ω_t + ω_h(ω_t) − ω_T` on `[0, ω_T]` by bisection
/// followed by a bracketed secant polish to `|g| < 1e−10·ω_T`.
pub fn split_omega(
    omega_total: f64,
    n: usize,
    regime: Regime,
    template: &BeamProblem,
    medium: &MediumParams,
) -> Result<BeamSolution> {
    if !(omega_total >= 0.0 && omega_total.is_finite()) {
        return Err(invalid(format!("motor speed must be nonnegative, got {omega_total}")));
    }
    if n == 0 {
        return Err(invalid("flagella count must be positive"));
    }
    let template = template.with_regime(regime).with_omega_t(0.0).with_head_speed(0.0);
    template.validate()?;
    let mut bal = Balancer { n, template, medium, warm: None };
    if omega_total == 0.0 {
        return bal.evaluate(0.0);
    }
    let tol = SPLIT_TOL * omega_total;
    let g = |bal: &mut Balancer, x: f64| -> Result<(f64, BeamSolution)> {
        let s = bal.evaluate(x)?;
        Ok((x + s.omega_h - omega_total, s))
    };
    let (mut a, mut b) = (0.0, omega_total);
    let (mut ga, sa) = g(&mut bal, a)?;
    let (mut gb, sb) = g(&mut bal, b)?;
    if ga.abs() < tol {
        return Ok(sa);
    }
    if gb.abs() < tol {
        return Ok(sb);
    }
    if ga * gb > 0.0 {
        return Err(Error::NoBracket { lo: ga, hi: gb });
    }
    for _ in 0..8 {
        let c = 0.5 * (a + b);
        let (gc, sc) = g(&mut bal, c)?;
        if gc.abs() < tol {
            return Ok(sc);
        }
        if gc * ga < 0.0 {
            b = c;
            gb = gc;
        } else {
            a = c;
            ga = gc;
        }
    }
    // Secant from the bracket ends, falling back to bisection when it escapes.
    let (mut x0, mut g0, mut x1, mut g1) = (a, ga, b, gb);
    for _ in 0..200 {
        let mut x = if g1 != g0 { x1 - g1 * (x1 - x0) / (g1 - g0) } else { 0.5 * (a + b) };
        if !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        let (gx, sx) = g(&mut bal, x)?;
        if gx.abs() < tol {
            debug_assert!((sx.omega_t + sx.omega_h - omega_total).abs() < tol);
            return Ok(sx);
        }
        if gx * ga < 0.0 {
            b = x;
        } else {
            a = x;
            ga = gx;
        }
        x0 = x1;
        g0 = g1;
        x1 = x;
        g1 = gx;
        if b - a < f64::EPSILON * omega_total {
            break;
        }
    }
    Err(Error::BvpFailed(format!("motor speed split did not converge for omega_T = {omega_total}")))
}

/// Locomotion rates in physical or normalized units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedMetrics {
    pub v: f64,
    pub omega_h: f64,
    pub omega_t: f64,
    pub omega_total: f64,
}

impl From<&BeamSolution> for SpeedMetrics {
    fn from(s: &BeamSolution) -> Self {
        SpeedMetrics { v: s.v_h, omega_h: s.omega_h, omega_t: s.omega_t, omega_total: s.omega_total() }
    }
}

/// Elasto-viscous relaxation time `T̄ = η_p L⁴/EI` (s).
pub fn relaxation_time(eta_p: f64, length: f64, ei: f64) -> f64 {
    eta_p * length.powi(4) / ei
}

/// `ω̄ = ω T̄`, `v̄ = v T̄/L`.
pub fn normalize(metrics: &SpeedMetrics, problem: &BeamProblem) -> SpeedMetrics {
    let t = relaxation_time(problem.eta_p, problem.length, problem.ei);
    SpeedMetrics {
        v: metrics.v * t / problem.length,
        omega_h: metrics.omega_h * t,
        omega_t: metrics.omega_t * t,
        omega_total: metrics.omega_total * t,
    }
}
