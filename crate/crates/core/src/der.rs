//! Fully implicit discrete-elastic-rod dynamics.
//!
//! Each step solves the backward-Euler equations of motion
//!
//! ```text
//! m/Δt · [(q − q_old)/Δt − q̇_old] − F_E(q) − F_ext(q) = 0
//! ```
//!
//! by Newton-Raphson with the sparse Jacobian `m/Δt² + ∂²E/∂q² − ∂F_ext/∂q`.
//! The motor is modelled by driving the rest twist of the spring at the head
//! center, `τ̄ = ω_T t`.

use std::f64::consts::TAU;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::energy::{assemble_elastic, elastic_pattern, MaterialParams, Terms};
use crate::media::{ExternalLoads, MediumParams};
use crate::rod::{self, RobotTopology, SimState, UndeformedConfig, V3};
use crate::sparse::{SparseMatrix, SparsePattern};
use crate::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    /// Nominal time step (s).
    pub dt: f64,
    /// Residual tolerance per DOF; the Newton loop stops at ‖f‖ < tolerance·ndof.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Number of consecutive Δt halvings allowed before giving up.
    pub max_halvings: u32,
    /// Successful reduced steps before returning to the nominal Δt.
    pub restore_after: usize,
    /// Multiplier on every lumped mass and rotational inertia.
    pub mass_scale: f64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            dt: 1e-2,
            tolerance: 1e-8,
            max_iterations: 50,
            max_halvings: 8,
            restore_after: 10,
            mass_scale: 1.0,
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.tolerance > 0.0 && self.mass_scale > 0.0) {
            return Err(invalid("dt, tolerance and mass scale must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be positive"));
        }
        Ok(())
    }
}

/// Sets the motor rest twist to `ω_T·t`; every other rest strain is kept.
pub fn actuate(undeformed: &UndeformedConfig, omega_motor: f64, t: f64) -> UndeformedConfig {
    let mut out = undeformed.clone();
    if let Some(s) = out.actuation_spring {
        out.tau_bar[s] = omega_motor * t;
    }
    out
}

/// Diagonal lumped masses: ρA times the Voronoi length for each node, and
/// ρA r0²/2 times the edge length for each twist angle.
pub fn lumped_masses(
    topology: &RobotTopology,
    undeformed: &UndeformedConfig,
    material: &MaterialParams,
) -> Vec<f64> {
    let rho_a = material.density * material.area();
    let mut m = vec![0.0; topology.ndof()];
    for (k, e) in topology.edges.iter().enumerate() {
        let half = 0.5 * undeformed.edge_lengths[k] * rho_a;
        for c in 0..3 {
            m[3 * e.start + c] += half;
            m[3 * e.end + c] += half;
        }
        m[topology.theta_index(k)] = rho_a * material.radius.powi(2) / 2.0 * undeformed.edge_lengths[k];
    }
    m
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepInfo {
    pub iterations: usize,
    pub residual: f64,
    pub dt: f64,
    pub halvings: u32,
}

/// Owns everything needed to advance one simulation.
#[derive(Clone, Debug)]
pub struct Stepper {
    pub topology: RobotTopology,
    /// Rest shape; the motor twist is rewritten every step.
    pub undeformed: UndeformedConfig,
    pub material: MaterialParams,
    pub medium: Option<MediumParams>,
    pub config: StepperConfig,
    /// Motor speed ω_T (rad/s).
    pub omega_motor: f64,
    masses: Vec<f64>,
    loads: Option<ExternalLoads>,
    constant_force: Vec<f64>,
    fixed: Vec<bool>,
    pattern: Arc<SparsePattern>,
    dt: f64,
    streak: usize,
}

impl Stepper {
    pub fn new(
        topology: RobotTopology,
        undeformed: UndeformedConfig,
        material: MaterialParams,
        medium: Option<MediumParams>,
        config: StepperConfig,
    ) -> Result<Self> {
        config.validate()?;
        material.validate()?;
        let mut masses = lumped_masses(&topology, &undeformed, &material);
        masses.iter_mut().for_each(|m| *m *= config.mass_scale);
        let loads = medium.map(|_| ExternalLoads::for_robot(&topology, &undeformed));
        let pattern = Arc::new(elastic_pattern(&topology));
        let n = topology.ndof();
        Ok(Stepper {
            topology,
            undeformed,
            material,
            medium,
            config,
            omega_motor: 0.0,
            masses,
            loads,
            constant_force: vec![0.0; n],
            fixed: vec![false; n],
            pattern,
            dt: config.dt,
            streak: 0,
        })
    }

    /// Holds the listed DOFs at their current values.
    pub fn fix_dofs(&mut self, dofs: impl IntoIterator<Item = usize>) {
        for d in dofs {
            self.fixed[d] = true;
        }
    }

    /// Adds a constant generalized force (e.g. a dead load).
    pub fn set_constant_force(&mut self, force: Vec<f64>) -> Result<()> {
        if force.len() != self.topology.ndof() {
            return Err(invalid("constant force has wrong length"));
        }
        self.constant_force = force;
        Ok(())
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn current_dt(&self) -> f64 {
        self.dt
    }

    fn tolerance(&self) -> f64 {
        self.config.tolerance * self.topology.ndof() as f64
    }

    /// EOM residual at `q` (and its Jacobian when `jac` is given).
    fn residual(
        &self,
        q: &[f64],
        base: &SimState,
        undeformed: &UndeformedConfig,
        dt: f64,
        jac: Option<&mut SparseMatrix>,
    ) -> Result<Vec<f64>> {
        let n = q.len();
        let mut trial = base.clone();
        trial.q.copy_from_slice(q);
        let mut force = self.constant_force.clone();
        let mut jac = jac;
        if let Some(j) = jac.as_deref_mut() {
            j.clear();
        }
        assemble_elastic(
            &self.topology,
            &trial,
            undeformed,
            &self.material,
            Terms::ALL,
            &mut force,
            jac.as_deref_mut(),
        )?;
        if let Some(j) = jac.as_deref_mut() {
            // Negated so the loads' ∂F_ext/∂q lands with the opposite sign;
            // negated back below.
            j.scale(-1.0);
        }
        if let (Some(loads), Some(medium)) = (&self.loads, &self.medium) {
            loads.assemble(&self.topology, q, &base.q, dt, medium, &mut force, jac.as_deref_mut());
        }
        let mut f = vec![0.0; n];
        for i in 0..n {
            f[i] = if self.fixed[i] {
                0.0
            } else {
                self.masses[i] / dt * ((q[i] - base.q[i]) / dt - base.qdot[i]) - force[i]
            };
        }
        if let Some(j) = jac {
            j.scale(-1.0);
            for i in 0..n {
                j.add(i, i, self.masses[i] / (dt * dt));
            }
            j.pin(&self.fixed);
        }
        Ok(f)
    }

    /// EOM residual and Jacobian at `q` for a step of size `dt` from `base`.
    pub fn residual_and_jacobian(&self, q: &[f64], base: &SimState, dt: f64) -> Result<(Vec<f64>, SparseMatrix)> {
        let undeformed = actuate(&self.undeformed, self.omega_motor, base.time + dt);
        let mut jac = SparseMatrix::zeros(self.pattern.clone());
        let f = self.residual(q, base, &undeformed, dt, Some(&mut jac))?;
        Ok((f, jac))
    }

    fn newton(&self, state: &SimState, dt: f64) -> Result<(SimState, StepInfo)> {
        let undeformed = actuate(&self.undeformed, self.omega_motor, state.time + dt);
        let tol = self.tolerance();
        let n = state.q.len();
        let mut q: Vec<f64> = (0..n)
            .map(|i| if self.fixed[i] { state.q[i] } else { state.q[i] + dt * state.qdot[i] })
            .collect();
        let mut jac = SparseMatrix::zeros(self.pattern.clone());
        let mut f = self.residual(&q, state, &undeformed, dt, Some(&mut jac))?;
        let mut norm = l2(&f);
        let mut iterations = 0;
        while !(norm < tol) {
            if iterations >= self.config.max_iterations || !norm.is_finite() {
                return Err(Error::NewtonDiverged { time: state.time + dt, residual: norm });
            }
            iterations += 1;
            let dq = jac.solve(&f)?;
            // Full Newton steps: linearized rotations of the stiff plate make
            // the residual norm non-monotone, so it is not used as a merit
            // function. Steps are only shortened when they fold an edge.
            let mut alpha = 1.0;
            loop {
                let trial: Vec<f64> = q.iter().zip(&dq).map(|(a, b)| a - alpha * b).collect();
                let attempt = self.residual(&trial, state, &undeformed, dt, Some(&mut jac));
                match attempt {
                    Ok(ft) if l2(&ft).is_finite() || alpha < 1.0 / 16.0 => {
                        q = trial;
                        f = ft;
                        norm = l2(&f);
                        break;
                    }
                    Err(e) if alpha < 1.0 / 16.0 => return Err(e),
                    _ => alpha *= 0.5,
                }
            }
        }
        let mut next = state.clone();
        for i in 0..n {
            next.qdot[i] = (q[i] - state.q[i]) / dt;
        }
        next.q = q;
        next.time = state.time + dt;
        rod::update_frames_in_place(&self.topology, &mut next)?;
        debug_assert!(norm < tol);
        Ok((next, StepInfo { iterations, residual: norm, dt, halvings: 0 }))
    }

    /// Advances one step, halving Δt on Newton failure.
    pub fn step(&mut self, state: &SimState) -> Result<(SimState, StepInfo)> {
        let mut halvings = 0;
        loop {
            match self.newton(state, self.dt) {
                Ok((next, mut info)) => {
                    info.halvings = halvings;
                    if self.dt < self.config.dt {
                        self.streak += 1;
                        if self.streak >= self.config.restore_after {
                            self.dt = self.config.dt;
                            self.streak = 0;
                        }
                    }
                    return Ok((next, info));
                }
                Err(e @ (Error::NewtonDiverged { .. } | Error::Singular | Error::Degenerate(_))) => {
                    if halvings >= self.config.max_halvings {
                        return Err(match e {
                            Error::NewtonDiverged { .. } => e,
                            other => Error::NewtonDiverged {
                                time: state.time,
                                residual: if let Error::Singular = other { f64::NAN } else { f64::INFINITY },
                            },
                        });
                    }
                    halvings += 1;
                    self.dt *= 0.5;
                    self.streak = 0;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Largest |ε| over rigid edges.
    pub fn max_rigid_strain(&self, state: &SimState) -> f64 {
        self.topology
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.rigid)
            .map(|(k, _)| {
                (state.edge_vector(&self.topology, k).norm() / self.undeformed.edge_lengths[k] - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Steady locomotion summary. Rotation rates are signed about the head axis
/// (x₀ → x₁, pointing from the head toward the tail); `v` is positive when
/// the robot moves head first.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocomotionMetrics {
    pub v: f64,
    pub omega_h: f64,
    pub omega_t: f64,
    pub steady: bool,
    pub elapsed: f64,
    /// Largest rigid-edge strain seen during the run.
    pub max_rigid_strain: f64,
    /// Averaging window used for the final estimate (s).
    pub window: f64,
}

impl LocomotionMetrics {
    /// `|ω_h| / (|ω_h| + |ω_t|)`.
    pub fn head_fraction(&self) -> f64 {
        self.omega_h.abs() / (self.omega_h.abs() + self.omega_t.abs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub head_x: f64,
    pub head_y: f64,
    pub head_z: f64,
    pub v: f64,
    pub omega_h: f64,
    pub omega_t: f64,
    pub newton_iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteadyOptions {
    pub max_time: f64,
    /// Relative change between consecutive windows that counts as steady.
    pub rel_tol: f64,
    pub min_window: f64,
    /// Trajectory output interval (s); zero disables logging.
    pub record_interval: f64,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        SteadyOptions { max_time: 60.0, rel_tol: 0.01, min_window: 1.0, record_interval: 0.1 }
    }
}

#[derive(Clone, Debug)]
pub struct SteadyRun {
    pub metrics: LocomotionMetrics,
    pub trajectory: Vec<TrajectoryRecord>,
    pub state: SimState,
}

/// Cumulative kinematics sampled once per step.
struct Accumulated {
    t: Vec<f64>,
    travel: Vec<f64>,
    head_angle: Vec<f64>,
    tail_angle: Vec<f64>,
}

impl Accumulated {
    /// Mean rates over `[t_end − w, t_end]`.
    fn rates(&self, t_end: f64, w: f64) -> Option<[f64; 3]> {
        let i1 = self.index_at(t_end)?;
        let i0 = self.index_at(t_end - w)?;
        let span = self.t[i1] - self.t[i0];
        if !(span > 0.0) {
            return None;
        }
        Some([
            (self.travel[i1] - self.travel[i0]) / span,
            (self.head_angle[i1] - self.head_angle[i0]) / span,
            (self.tail_angle[i1] - self.tail_angle[i0]) / span,
        ])
    }

    fn index_at(&self, t: f64) -> Option<usize> {
        if t < self.t[0] - 1e-12 {
            return None;
        }
        let i = self.t.partition_point(|&s| s <= t + 1e-12);
        Some(i.saturating_sub(1))
    }
}

/// Head axis unit vector (x₀ → x₁).
pub fn head_axis(state: &SimState) -> V3 {
    (state.node(1) - state.node(0)).normalize()
}

/// Mean angular velocity of flagellar nodes about the head axis through the joint.
pub fn tail_rotation_rate(topology: &RobotTopology, state: &SimState) -> f64 {
    let a = head_axis(state);
    let joint = topology.joint_node.unwrap_or(0);
    let c = state.node(joint);
    let vc = state.node_velocity(joint);
    let mut sum = 0.0;
    let mut count = 0usize;
    for e in topology.edges.iter().filter(|e| matches!(e.segment, rod::Segment::Flagellum(_))) {
        let i = e.end;
        let r = state.node(i) - c;
        let r = r - a * r.dot(&a);
        let r2 = r.norm_squared();
        if r2 > 1e-12 {
            let v = state.node_velocity(i) - vc;
            sum += r.cross(&v).dot(&a) / r2;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Runs with motor speed `omega_motor` until windowed averages of v, ω_h and
/// ω_t over one flagellar revolution change by less than `rel_tol` between
/// consecutive windows, or `max_time` is reached.
pub fn run_to_steady(
    stepper: &mut Stepper,
    state: SimState,
    omega_motor: f64,
    options: &SteadyOptions,
) -> Result<SteadyRun> {
    if !(omega_motor >= 0.0) {
        return Err(invalid(format!("motor speed must be non-negative, got {omega_motor}")));
    }
    stepper.omega_motor = omega_motor;
    let head_edge = 0;
    let th0 = stepper.topology.theta_index(head_edge);
    let mut acc = Accumulated {
        t: vec![state.time],
        travel: vec![0.0],
        head_angle: vec![state.q[th0]],
        tail_angle: vec![0.0],
    };
    let mut trajectory = Vec::new();
    let mut next_record = state.time;
    let mut state = state;
    let mut max_rigid = stepper.max_rigid_strain(&state);
    let t0 = state.time;
    let omega_floor = 1e-3 * omega_motor.max(1e-9);
    let mut window = options.min_window;
    let mut last_rates = [0.0; 3];
    let mut steady = false;

    while state.time - t0 < options.max_time - 1e-9 {
        let (next, info) = stepper.step(&state)?;
        let dt = next.time - state.time;
        let axis = head_axis(&next);
        let v = -(next.node(1) - state.node(1)).dot(&axis) / dt;
        let omega_h = (next.q[th0] - state.q[th0]) / dt;
        let omega_t = tail_rotation_rate(&stepper.topology, &next);
        acc.t.push(next.time);
        acc.travel.push(acc.travel.last().unwrap() + v * dt);
        acc.head_angle.push(next.q[th0]);
        acc.tail_angle.push(acc.tail_angle.last().unwrap() + omega_t * dt);
        max_rigid = max_rigid.max(stepper.max_rigid_strain(&next));
        if options.record_interval > 0.0 && next.time >= next_record - 1e-12 {
            let h = next.node(1);
            trajectory.push(TrajectoryRecord {
                t: next.time,
                head_x: h.x,
                head_y: h.y,
                head_z: h.z,
                v,
                omega_h,
                omega_t,
                newton_iterations: info.iterations,
            });
            next_record += options.record_interval;
        }
        state = next;

        let now = state.time;
        let elapsed = now - t0;
        if let Some(recent) = acc.rates(now, options.min_window.min(elapsed)) {
            let wt = recent[2].abs();
            window = if wt > 0.0 { TAU / wt } else { options.max_time };
            window = window.clamp(options.min_window, options.max_time / 2.0);
        }
        if elapsed + 1e-9 < 2.0 * window {
            continue;
        }
        let (Some(cur), Some(prev)) = (acc.rates(now, window), acc.rates(now - window, window)) else {
            continue;
        };
        last_rates = cur;
        let close = |a: f64, b: f64, floor: f64| (a - b).abs() <= options.rel_tol * a.abs().max(floor);
        if close(cur[0], prev[0], 1e-9) && close(cur[1], prev[1], omega_floor) && close(cur[2], prev[2], omega_floor) {
            steady = true;
            break;
        }
    }
    if !steady {
        let elapsed = state.time - t0;
        let w = window.min(elapsed);
        if let Some(r) = acc.rates(state.time, w) {
            last_rates = r;
        }
    }
    Ok(SteadyRun {
        metrics: LocomotionMetrics {
            v: last_rates[0],
            omega_h: last_rates[1],
            omega_t: last_rates[2],
            steady,
            elapsed: state.time - t0,
            max_rigid_strain: max_rigid,
            window,
        },
        trajectory,
        state,
    })
}
