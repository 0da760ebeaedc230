//! Drag from the granular medium: resistive force theory on the flagella
//! and modified Stokes drag and torque on the head.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::rod::{RobotTopology, Segment, UndeformedConfig, V3};
use crate::sparse::SparseMatrix;
use crate::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediumParams {
    /// Friction constant μ.
    pub mu: f64,
    /// Tangential drag coefficient η_t.
    pub eta_t: f64,
    /// Perpendicular drag coefficient η_p.
    pub eta_p: f64,
    /// Head translation shape factor C₁.
    pub c1: f64,
    /// Head rotation shape factor C₂.
    pub c2: f64,
    /// Head radius R_h (m).
    pub head_radius: f64,
    /// Plate radius R_d (m).
    pub plate_radius: f64,
}

impl MediumParams {
    /// Derives η_t, η_p from μ and the flagellum slenderness.
    pub fn new(
        mu: f64,
        c1: f64,
        c2: f64,
        head_radius: f64,
        plate_radius: f64,
        flagellum_length: f64,
        r0: f64,
    ) -> Result<Self> {
        if !(mu > 0.0 && c1 > 0.0 && c2 > 0.0) {
            return Err(invalid(format!("mu, C1, C2 must be positive (got {mu}, {c1}, {c2})")));
        }
        if !(head_radius > 0.0 && plate_radius > 0.0) {
            return Err(invalid("head and plate radii must be positive"));
        }
        let (eta_t, eta_p) = drag_coefficients(mu, flagellum_length, r0)?;
        if !(eta_p > eta_t) {
            return Err(invalid(format!(
                "flagellum too stubby: eta_p = {eta_p} does not exceed eta_t = {eta_t}"
            )));
        }
        Ok(MediumParams { mu, eta_t, eta_p, c1, c2, head_radius, plate_radius })
    }

    /// `C₁·6πμR_h`: head force per unit velocity.
    pub fn head_drag_coefficient(&self) -> f64 {
        self.c1 * 6.0 * PI * self.mu * self.head_radius
    }

    /// `C₂·8πμR_h³`: head torque per unit angular velocity.
    pub fn head_torque_coefficient(&self) -> f64 {
        self.c2 * 8.0 * PI * self.mu * self.head_radius.powi(3)
    }
}

/// `(η_t, η_p) = (2πμ/(ln(2L/r0) − ½), 4πμ/(ln(2L/r0) + ½))`.
pub fn drag_coefficients(mu: f64, length: f64, r0: f64) -> Result<(f64, f64)> {
    if !(length > 0.0 && r0 > 0.0) {
        return Err(invalid("flagellum length and radius must be positive"));
    }
    let lg = (2.0 * length / r0).ln();
    if !(lg > 0.5) {
        return Err(invalid(format!("2L/r0 = {} must exceed e^(1/2)", 2.0 * length / r0)));
    }
    Ok((2.0 * PI * mu / (lg - 0.5), 4.0 * PI * mu / (lg + 0.5)))
}

/// `−ℓ(η_t v_t + η_p v_p)` with `v_t = (v·t)t`, `v_p = v − v_t`.
pub fn rft_node_force(velocity: &V3, tangent: &V3, voronoi_length: f64, medium: &MediumParams) -> V3 {
    let vt = tangent * velocity.dot(tangent);
    let vp = velocity - vt;
    -(vt * medium.eta_t + vp * medium.eta_p) * voronoi_length
}

/// `−C₁·6πμR_h·v_h`.
pub fn head_drag(v_h: &V3, medium: &MediumParams) -> V3 {
    -v_h * medium.head_drag_coefficient()
}

/// `−C₂·8πμR_h³·ω_h` about the robot axis.
pub fn head_torque(omega_h: f64, medium: &MediumParams) -> f64 {
    -medium.head_torque_coefficient() * omega_h
}

/// One RFT node: Voronoi length and the flagellar edges defining its tangent.
#[derive(Clone, Debug)]
pub struct RftNode {
    pub node: usize,
    pub voronoi_length: f64,
    pub edges: Vec<usize>,
}

/// RFT nodes of every flagellum (plate attachment through tip).
pub fn rft_nodes(topology: &RobotTopology, undeformed: &UndeformedConfig) -> Vec<RftNode> {
    topology
        .flagellar_nodes()
        .into_iter()
        .map(|node| {
            let edges: Vec<usize> = (0..topology.edge_count())
                .filter(|&k| {
                    let e = topology.edges[k];
                    matches!(e.segment, Segment::Flagellum(_)) && (e.start == node || e.end == node)
                })
                .collect();
            let voronoi_length = 0.5 * edges.iter().map(|&k| undeformed.edge_lengths[k]).sum::<f64>();
            RftNode { node, voronoi_length, edges }
        })
        .collect()
}

/// Generalized external forces on an implicit step and their Jacobian.
///
/// Velocities are `(q − q_old)/Δt`. RFT acts on flagellar nodes with the
/// node tangent (normalized sum of adjacent flagellar edge tangents at `q`),
/// head drag on the head center `head_node`, and the head torque on the twist
/// of edge `head_edge`.
#[derive(Clone, Debug)]
pub struct ExternalLoads {
    pub rft: Vec<RftNode>,
    pub head_node: Option<usize>,
    pub head_edge: Option<usize>,
}

impl ExternalLoads {
    pub fn for_robot(topology: &RobotTopology, undeformed: &UndeformedConfig) -> Self {
        let is_robot = topology.joint_node.is_some();
        ExternalLoads {
            rft: rft_nodes(topology, undeformed),
            head_node: is_robot.then_some(1),
            head_edge: is_robot.then_some(0),
        }
    }

    /// Adds `F_ext` to `force` and `∂F_ext/∂q` to `jac` (if given).
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        &self,
        topology: &RobotTopology,
        q: &[f64],
        q_old: &[f64],
        dt: f64,
        medium: &MediumParams,
        force: &mut [f64],
        mut jac: Option<&mut SparseMatrix>,
    ) {
        let node = |i: usize| V3::new(q[3 * i], q[3 * i + 1], q[3 * i + 2]);
        let node_old = |i: usize| V3::new(q_old[3 * i], q_old[3 * i + 1], q_old[3 * i + 2]);
        let (et, ep) = (medium.eta_t, medium.eta_p);
        for rn in &self.rft {
            let i = rn.node;
            let v = (node(i) - node_old(i)) / dt;
            let mut s = V3::zeros();
            let mut units = Vec::with_capacity(rn.edges.len());
            for &k in &rn.edges {
                let e = topology.edges[k];
                let ev = node(e.end) - node(e.start);
                let len = ev.norm();
                let u = ev / len;
                s += u;
                units.push((k, u, len));
            }
            let sn = s.norm();
            let t = s / sn;
            let l = rn.voronoi_length;
            let f = rft_node_force(&v, &t, l, medium);
            for c in 0..3 {
                force[3 * i + c] += f[c];
            }
            let Some(j) = jac.as_deref_mut() else { continue };
            let tt = t * t.transpose();
            let dv = (Matrix3::identity() * ep + tt * (et - ep)) * (-l / dt);
            add_block(j, i, i, &dv);
            // ∂f/∂t through the tangent's dependence on the adjacent edges.
            let df_dt = (t * v.transpose() + Matrix3::identity() * v.dot(&t)) * (-l * (et - ep));
            let dt_ds = (Matrix3::identity() - tt) / sn;
            for (k, u, len) in units {
                let du_de = (Matrix3::identity() - u * u.transpose()) / len;
                let blk = df_dt * dt_ds * du_de;
                let e = topology.edges[k];
                add_block(j, i, e.end, &blk);
                add_block(j, i, e.start, &(-blk));
            }
        }
        if let Some(h) = self.head_node {
            let c = medium.head_drag_coefficient();
            let v = (node(h) - node_old(h)) / dt;
            let f = head_drag(&v, medium);
            for a in 0..3 {
                force[3 * h + a] += f[a];
                if let Some(j) = jac.as_deref_mut() {
                    j.add(3 * h + a, 3 * h + a, -c / dt);
                }
            }
        }
        if let Some(k) = self.head_edge {
            let idx = topology.theta_index(k);
            let omega = (q[idx] - q_old[idx]) / dt;
            force[idx] += head_torque(omega, medium);
            if let Some(j) = jac.as_deref_mut() {
                j.add(idx, idx, -medium.head_torque_coefficient() / dt);
            }
        }
    }
}

fn add_block(j: &mut SparseMatrix, row_node: usize, col_node: usize, blk: &Matrix3<f64>) {
    for r in 0..3 {
        for c in 0..3 {
            j.add(3 * row_node + r, 3 * col_node + c, blk[(r, c)]);
        }
    }
}

/// `∂F_ext/∂q` for the implicit step from `q_old` to `q`.
pub fn external_force_jacobian(
    topology: &RobotTopology,
    undeformed: &UndeformedConfig,
    q: &[f64],
    q_old: &[f64],
    dt: f64,
    medium: &MediumParams,
) -> SparseMatrix {
    let pattern = std::sync::Arc::new(crate::energy::elastic_pattern(topology));
    let mut jac = SparseMatrix::zeros(pattern);
    let mut force = vec![0.0; topology.ndof()];
    ExternalLoads::for_robot(topology, undeformed).assemble(
        topology,
        q,
        q_old,
        dt,
        medium,
        &mut force,
        Some(&mut jac),
    );
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rod::{build_robot, RobotGeometry, SimState};
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn design1() -> MediumParams {
        MediumParams::new(6.828, 2.420, 0.039, 0.02, 0.02, 0.111, 3.2e-3).unwrap()
    }

    #[test]
    fn drag_coefficient_examples() {
        let (et, ep) = drag_coefficients(6.828, 0.111, 3.2e-3).unwrap();
        let lg: f64 = 69.375f64.ln();
        assert_relative_eq!(lg, 4.2395, epsilon = 1e-4);
        assert_relative_eq!(et, 2.0 * PI * 6.828 / (lg - 0.5), max_relative = 1e-14);
        assert_relative_eq!(et, 11.47, epsilon = 5e-3);
        assert_relative_eq!(ep, 18.10, epsilon = 5e-3);
        let (_, ep2) = drag_coefficients(2.125, 0.089, 3.2e-3).unwrap();
        assert_relative_eq!(ep2, 5.91, epsilon = 5e-3);
        // The ratio approaches 2 like 1/ln(2L/r0).
        let gap = |l: f64| {
            let (et, ep) = drag_coefficients(1.0, l, 1.0).unwrap();
            2.0 - ep / et
        };
        assert!(gap(1e3) > gap(1e12) && gap(1e12) > gap(1e300));
        assert!(gap(1e300) > 0.0 && gap(1e300) < 3e-3);
        assert!(drag_coefficients(1.0, 0.8, 1.0).is_err());
    }

    #[test]
    fn rft_force_examples() {
        let m = design1();
        let t = V3::new(0.0, 1.0, 0.0);
        assert_eq!(rft_node_force(&V3::zeros(), &t, 1.0, &m), V3::zeros());
        assert_relative_eq!(rft_node_force(&t, &t, 1.0, &m), -t * m.eta_t, epsilon = 1e-14);
        let v = V3::new(1.0, 1.0, 0.0) / 2f64.sqrt();
        let f = rft_node_force(&v, &t, 0.3, &m);
        let expected = 0.3 * (m.eta_t.powi(2) + m.eta_p.powi(2)).sqrt() / 2f64.sqrt();
        assert_relative_eq!(f.norm(), expected, max_relative = 1e-14);
    }

    #[test]
    fn head_examples() {
        let m = design1();
        assert_eq!(head_drag(&V3::zeros(), &m), V3::zeros());
        let f = head_drag(&V3::new(0.0, -0.001, 0.0), &m);
        let expected = 6.0 * PI * 6.828 * 0.02 * 2.420 * 0.001;
        assert_relative_eq!(f.y, expected, max_relative = 1e-14);
        assert_relative_eq!(f.y, 6.23e-3, epsilon = 1e-5);
        let mut m2 = m;
        m2.c1 *= 2.0;
        assert_relative_eq!(head_drag(&V3::y(), &m2), head_drag(&V3::y(), &m) * 2.0, epsilon = 1e-15);

        assert_eq!(head_torque(0.0, &m), 0.0);
        let tq = head_torque(10.0, &m);
        assert_relative_eq!(-tq, 0.039 * 8.0 * PI * 6.828 * 8e-6 * 10.0, max_relative = 1e-12);
        assert_relative_eq!(-tq, 5.35e-4, epsilon = 1e-6);
        assert!(head_torque(-3.0, &m) > 0.0);
    }

    fn robot() -> (RobotTopology, SimState, UndeformedConfig) {
        build_robot(&RobotGeometry {
            head_radius: 0.02,
            plate_diameter: 0.04,
            flagella_count: 2,
            flagellum_length: 0.05,
            edge_length: 0.01,
        })
        .unwrap()
    }

    #[test]
    fn jacobian_at_rest_is_projector_over_dt() {
        let (topo, state, und) = robot();
        let m = design1();
        let dt = 0.01;
        let j = external_force_jacobian(&topo, &und, &state.q, &state.q, dt, &m);
        let loads = ExternalLoads::for_robot(&topo, &und);
        for rn in &loads.rft {
            let l = rn.voronoi_length;
            let i = rn.node;
            let mut trace = 0.0;
            for r in 0..3 {
                for c in 0..3 {
                    let t = V3::y();
                    let proj = m.eta_t * t[r] * t[c] + m.eta_p * ((r == c) as u8 as f64 - t[r] * t[c]);
                    assert_relative_eq!(j.get(3 * i + r, 3 * i + c), -l / dt * proj, epsilon = 1e-12);
                }
                trace += j.get(3 * i + r, 3 * i + r);
            }
            assert_relative_eq!(trace, -l / dt * (m.eta_t + 2.0 * m.eta_p), max_relative = 1e-12);
        }
        let slow = external_force_jacobian(&topo, &und, &state.q, &state.q, 1e12, &m);
        assert!(slow.entries().all(|(_, _, v)| v.abs() < 1e-9));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (topo, state, und) = robot();
        let m = design1();
        let dt = 0.01;
        let mut q = state.q.clone();
        for (i, x) in q.iter_mut().enumerate() {
            *x += 1e-4 * ((i as f64) * 1.7).sin();
        }
        let loads = ExternalLoads::for_robot(&topo, &und);
        let j = external_force_jacobian(&topo, &und, &q, &state.q, dt, &m).to_dense();
        let eval = |q: &[f64]| {
            let mut f = vec![0.0; topo.ndof()];
            loads.assemble(&topo, q, &state.q, dt, &m, &mut f, None);
            f
        };
        let h = 1e-7;
        let mut err: f64 = 0.0;
        for c in 0..topo.ndof() {
            let mut qp = q.clone();
            qp[c] += h;
            let mut qm = q.clone();
            qm[c] -= h;
            let (fp, fm) = (eval(&qp), eval(&qm));
            for r in 0..topo.ndof() {
                err = err.max(((fp[r] - fm[r]) / (2.0 * h) - j[(r, c)]).abs());
            }
        }
        assert!(err < 1e-5 * j.amax(), "max error {err} vs {}", j.amax());
    }

    proptest! {
        #[test]
        fn dissipative_and_covariant(
            v in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
            t in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
            axis in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
            angle in -3.0..3.0f64,
            l in 0.001..0.1f64,
        ) {
            let m = design1();
            let v = V3::new(v.0, v.1, v.2);
            let t = V3::new(t.0, t.1, t.2);
            prop_assume!(t.norm() > 0.1);
            let t = t.normalize();
            let f = rft_node_force(&v, &t, l, &m);
            prop_assert!(f.dot(&v) <= 0.0);
            let axis = V3::new(axis.0, axis.1, axis.2);
            prop_assume!(axis.norm() > 0.1);
            let r = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
            let fr = rft_node_force(&(r * v), &(r * t), l, &m);
            prop_assert!((fr - r * f).norm() <= 1e-12 * (1.0 + f.norm()));
            // Pure perpendicular / parallel motion picks out η_p / η_t exactly.
            let perp = t.cross(&V3::new(0.3, -0.2, 0.9));
            prop_assume!(perp.norm() > 1e-3);
            let fp = rft_node_force(&perp, &t, l, &m);
            prop_assert!((fp.norm() / (l * perp.norm()) - m.eta_p).abs() < 1e-12 * m.eta_p);
            let fpar = rft_node_force(&(t * 0.7), &t, l, &m);
            prop_assert!((fpar.norm() / (l * 0.7) - m.eta_t).abs() < 1e-12 * m.eta_t);
        }
    }
}
