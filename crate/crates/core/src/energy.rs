//! Discrete stretching, bending and twisting energies with exact gradients
//! and Hessians.
//!
//! Stretching is differentiated by hand. Each bend-twist spring is a
//! function of its two edge vectors and two twist angles; the reference
//! frames at the evaluation point are obtained by parallel transport from the
//! frames stored in the state, and the reference twist is updated
//! incrementally from the stored one. The energy of that function is
//! differentiated to second order with hyper-dual numbers, so the force is
//! the exact gradient of the energy and the Hessian is its exact Jacobian.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{SMatrix, SVector};
use num_dual::{gradient, hessian, Dual2SVec64, DualNum, DualSVec64};
use serde::{Deserialize, Serialize};

use crate::rod::{Frame, RobotTopology, SimState, UndeformedConfig, V3};
use crate::sparse::{SparseMatrix, SparsePattern};
use crate::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    /// Young's modulus E (Pa).
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// Flagellum radius r0 (m).
    pub radius: f64,
    /// Density (kg/m³).
    pub density: f64,
    /// Stiffness multiplier on rigid (head and plate) edges.
    pub rigid_multiplier: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            youngs_modulus: 1.2e6,
            poisson_ratio: 0.5,
            radius: 3.2e-3,
            density: 1000.0,
            rigid_multiplier: 1e4,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0 && self.radius > 0.0 && self.density > 0.0) {
            return Err(invalid("E, r0 and density must be positive"));
        }
        if !(0.0..=0.5).contains(&self.poisson_ratio) {
            return Err(invalid(format!("Poisson ratio {} outside [0, 0.5]", self.poisson_ratio)));
        }
        if !(self.rigid_multiplier >= 1.0) {
            return Err(invalid("rigid multiplier must be >= 1"));
        }
        Ok(())
    }

    pub fn shear_modulus(&self) -> f64 {
        self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))
    }

    pub fn area(&self) -> f64 {
        PI * self.radius.powi(2)
    }

    pub fn ea(&self) -> f64 {
        self.youngs_modulus * self.area()
    }

    pub fn ei(&self) -> f64 {
        PI / 4.0 * self.youngs_modulus * self.radius.powi(4)
    }

    /// Polar moment: GJ = (π/2) G r0⁴.
    pub fn gj(&self) -> f64 {
        PI / 2.0 * self.shear_modulus() * self.radius.powi(4)
    }
}

#[derive(Clone, Debug)]
pub struct ElasticResult {
    pub energy: f64,
    /// −∂E/∂q.
    pub force: Vec<f64>,
    pub hessian: SparseMatrix,
}

/// `ε = ‖e‖/ℓ̄ − 1`.
pub fn axial_stretch(edge: &V3, undeformed_length: f64) -> Result<f64> {
    if !(undeformed_length > 0.0) {
        return Err(invalid(format!("undeformed length {undeformed_length} must be positive")));
    }
    Ok(edge.norm() / undeformed_length - 1.0)
}

/// `2 e_prev × e_next / (‖e_prev‖‖e_next‖ + e_prev·e_next)`.
pub fn curvature_binormal(e_prev: &V3, e_next: &V3) -> Result<V3> {
    let denom = e_prev.norm() * e_next.norm() + e_prev.dot(e_next);
    if !(denom > 1e-14 * e_prev.norm() * e_next.norm()) {
        return Err(Error::Degenerate("antiparallel edges in curvature binormal".into()));
    }
    Ok(e_prev.cross(e_next) * (2.0 / denom))
}

/// `(κ1, κ2)` from the curvature binormal and `(m1, m2)` of both edges.
pub fn material_curvatures(kb: &V3, m_in: &(V3, V3), m_out: &(V3, V3)) -> (f64, f64) {
    let k1 = 0.5 * (m_in.1 + m_out.1).dot(kb);
    let k2 = 0.5 * (m_in.0 + m_out.0).dot(kb);
    (k1, k2)
}

/// Which energy terms to include in an evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Terms {
    pub stretch: bool,
    pub bend: bool,
    pub twist: bool,
}

impl Terms {
    pub const ALL: Terms = Terms { stretch: true, bend: true, twist: true };
    pub const STRETCH: Terms = Terms { stretch: true, bend: false, twist: false };
    pub const BEND: Terms = Terms { stretch: false, bend: true, twist: false };
    pub const TWIST: Terms = Terms { stretch: false, bend: false, twist: true };
}

/// Per-edge stretching stiffness EA (rigid multiplier applied).
pub fn edge_stretch_stiffness(topology: &RobotTopology, material: &MaterialParams, k: usize) -> f64 {
    let m = if topology.edges[k].rigid { material.rigid_multiplier } else { 1.0 };
    m * material.ea()
}

/// `(EI/Δl, GJ/Δl)` of a spring.
///
/// Both edges rigid: multiplied stiffness over the full Voronoi length.
/// Rigid/flexible junction (a clamp): plain stiffness over half the flexible
/// edge, so the clamp acts as a built-in end of the flexible rod.
pub fn spring_stiffness(
    topology: &RobotTopology,
    undeformed: &UndeformedConfig,
    material: &MaterialParams,
    s: usize,
) -> (f64, f64) {
    let sp = topology.springs[s];
    let (ri, ro) = (topology.edges[sp.e_in].rigid, topology.edges[sp.e_out].rigid);
    let (li, lo) = (undeformed.edge_lengths[sp.e_in], undeformed.edge_lengths[sp.e_out]);
    let (mult, dl) = match (ri, ro) {
        (true, true) => (material.rigid_multiplier, 0.5 * (li + lo)),
        (true, false) => (1.0, 0.5 * lo),
        (false, true) => (1.0, 0.5 * li),
        (false, false) => (1.0, 0.5 * (li + lo)),
    };
    (mult * material.ei() / dl, mult * material.gj() / dl)
}

/// Base data a bend-twist spring is evaluated against.
#[derive(Clone, Copy, Debug)]
struct SpringBase {
    frame_in: Frame,
    frame_out: Frame,
    ref_twist: f64,
    kappa_bar: [f64; 2],
    tau_bar: f64,
    kb: f64,
    kt: f64,
}

type A3<T> = [T; 3];

fn c3<T: DualNum<Primitive = f64> + Copy>(v: &V3) -> A3<T> {
    [T::from(v.x), T::from(v.y), T::from(v.z)]
}

fn dot<T: DualNum<Primitive = f64> + Copy>(a: &A3<T>, b: &A3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross<T: DualNum<Primitive = f64> + Copy>(a: &A3<T>, b: &A3<T>) -> A3<T> {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn axpy<T: DualNum<Primitive = f64> + Copy>(a: T, x: &A3<T>, y: &A3<T>) -> A3<T> {
    [a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2]]
}

fn scale<T: DualNum<Primitive = f64> + Copy>(a: T, x: &A3<T>) -> A3<T> {
    [a * x[0], a * x[1], a * x[2]]
}

fn add<T: DualNum<Primitive = f64> + Copy>(x: &A3<T>, y: &A3<T>) -> A3<T> {
    [x[0] + y[0], x[1] + y[1], x[2] + y[2]]
}

fn transport<T: DualNum<Primitive = f64> + Copy>(v: &A3<T>, from: &A3<T>, to: &A3<T>) -> A3<T> {
    let c = dot(from, to);
    let b = cross(from, to);
    let r = axpy(c, v, &cross(&b, v));
    axpy(dot(&b, v) / (c + 1.0), &b, &r)
}

/// Rotation about a unit axis for vectors perpendicular to it.
fn rotate_perp<T: DualNum<Primitive = f64> + Copy>(v: &A3<T>, axis: &A3<T>, angle: f64) -> A3<T> {
    let (s, c) = angle.sin_cos();
    let r = scale(T::from(c), v);
    axpy(T::from(s), &cross(axis, v), &r)
}

/// `(κ1, κ2, τ)` of one spring at edge vectors `e_in`, `e_out` and angles.
fn strains<T: DualNum<Primitive = f64> + Copy>(
    e_in: &A3<T>,
    e_out: &A3<T>,
    th_in: T,
    th_out: T,
    base: &SpringBase,
) -> (T, T, T) {
    let n_in = dot(e_in, e_in).sqrt();
    let n_out = dot(e_out, e_out).sqrt();
    let t_in = scale(n_in.recip(), e_in);
    let t_out = scale(n_out.recip(), e_out);

    let d1_in = transport(&c3(&base.frame_in.d1), &c3(&base.frame_in.t), &t_in);
    let d2_in = cross(&t_in, &d1_in);
    let d1_out = transport(&c3(&base.frame_out.d1), &c3(&base.frame_out.t), &t_out);
    let d2_out = cross(&t_out, &d1_out);

    let (s_in, c_in) = th_in.sin_cos();
    let (s_out, c_out) = th_out.sin_cos();
    let m1_in = add(&scale(c_in, &d1_in), &scale(s_in, &d2_in));
    let m2_in = add(&scale(-s_in, &d1_in), &scale(c_in, &d2_in));
    let m1_out = add(&scale(c_out, &d1_out), &scale(s_out, &d2_out));
    let m2_out = add(&scale(-s_out, &d1_out), &scale(c_out, &d2_out));

    let denom = n_in * n_out + dot(e_in, e_out);
    let kb = scale(denom.recip() * 2.0, &cross(e_in, e_out));
    let k1 = dot(&add(&m2_in, &m2_out), &kb) * 0.5;
    let k2 = dot(&add(&m1_in, &m1_out), &kb) * 0.5;

    let ut = transport(&d1_in, &t_in, &t_out);
    let ut = rotate_perp(&ut, &t_out, base.ref_twist);
    let sin = dot(&cross(&ut, &d1_out), &t_out);
    let cos = dot(&ut, &d1_out);
    let ref_twist = sin.atan2(cos) + base.ref_twist;
    let tau = th_out - th_in + ref_twist;
    (k1, k2, tau)
}

fn spring_energy<T: DualNum<Primitive = f64> + Copy>(x: &[T; 8], base: &SpringBase) -> T {
    let e_in = [x[0], x[1], x[2]];
    let e_out = [x[3], x[4], x[5]];
    let (k1, k2, tau) = strains(&e_in, &e_out, x[6], x[7], base);
    let d1 = k1 - base.kappa_bar[0];
    let d2 = k2 - base.kappa_bar[1];
    let dt = tau - base.tau_bar;
    (d1 * d1 + d2 * d2) * (0.5 * base.kb) + dt * dt * (0.5 * base.kt)
}

fn spring_inputs(topology: &RobotTopology, state: &SimState, s: usize) -> [f64; 8] {
    let sp = topology.springs[s];
    let a = state.node(sp.prev);
    let b = state.node(sp.node);
    let c = state.node(sp.next);
    let (ei, eo) = (b - a, c - b);
    [
        ei.x,
        ei.y,
        ei.z,
        eo.x,
        eo.y,
        eo.z,
        state.theta(topology, sp.e_in),
        state.theta(topology, sp.e_out),
    ]
}

fn check_spring(x: &[f64; 8], base: &SpringBase) -> Result<()> {
    let ei = V3::new(x[0], x[1], x[2]);
    let eo = V3::new(x[3], x[4], x[5]);
    let (ni, no) = (ei.norm(), eo.norm());
    if !(ni > 0.0 && no > 0.0) {
        return Err(Error::Degenerate("zero-length edge".into()));
    }
    let folded = ei.dot(&eo) / (ni * no) <= -1.0 + 1e-12
        || base.frame_in.t.dot(&ei) / ni <= -1.0 + 1e-12
        || base.frame_out.t.dot(&eo) / no <= -1.0 + 1e-12;
    if folded {
        return Err(Error::Degenerate("antiparallel tangents in spring".into()));
    }
    Ok(())
}

fn spring_base(
    topology: &RobotTopology,
    state: &SimState,
    s: usize,
    rest: Option<(&UndeformedConfig, &MaterialParams)>,
) -> SpringBase {
    let sp = topology.springs[s];
    let (kappa_bar, tau_bar, kb, kt) = match rest {
        Some((u, m)) => {
            let (kb, kt) = spring_stiffness(topology, u, m, s);
            (u.kappa_bar[s], u.tau_bar[s], kb, kt)
        }
        None => ([0.0; 2], 0.0, 0.0, 0.0),
    };
    SpringBase {
        frame_in: state.frames[sp.e_in],
        frame_out: state.frames[sp.e_out],
        ref_twist: state.ref_twist[s],
        kappa_bar,
        tau_bar,
        kb,
        kt,
    }
}

/// `(κ1, κ2, τ)` of spring `s` at the state's positions and angles.
pub fn spring_strains(topology: &RobotTopology, state: &SimState, s: usize) -> Result<(f64, f64, f64)> {
    let base = spring_base(topology, state, s, None);
    let x = spring_inputs(topology, state, s);
    check_spring(&x, &base)?;
    let e_in = [x[0], x[1], x[2]];
    let e_out = [x[3], x[4], x[5]];
    Ok(strains(&e_in, &e_out, x[6], x[7], &base))
}

/// DOF indices touched by spring `s`, in kernel-chain order:
/// `x_prev, x_node, x_next, θ_in, θ_out`.
pub fn spring_dofs(topology: &RobotTopology, s: usize) -> [usize; 11] {
    let sp = topology.springs[s];
    let mut d = [0usize; 11];
    for (j, n) in [sp.prev, sp.node, sp.next].into_iter().enumerate() {
        for c in 0..3 {
            d[3 * j + c] = 3 * n + c;
        }
    }
    d[9] = topology.theta_index(sp.e_in);
    d[10] = topology.theta_index(sp.e_out);
    d
}

/// DOF indices touched by the stretching of edge `k`.
pub fn edge_dofs(topology: &RobotTopology, k: usize) -> [usize; 6] {
    let e = topology.edges[k];
    [
        3 * e.start,
        3 * e.start + 1,
        3 * e.start + 2,
        3 * e.end,
        3 * e.end + 1,
        3 * e.end + 2,
    ]
}

/// Nonzero pattern of the elastic Hessian plus the full diagonal.
pub fn elastic_pattern(topology: &RobotTopology) -> SparsePattern {
    let mut entries: Vec<(usize, usize)> = (0..topology.ndof()).map(|i| (i, i)).collect();
    for k in 0..topology.edge_count() {
        let d = edge_dofs(topology, k);
        entries.extend(d.iter().flat_map(|&r| d.iter().map(move |&c| (r, c))));
    }
    for s in 0..topology.springs.len() {
        let d = spring_dofs(topology, s);
        entries.extend(d.iter().flat_map(|&r| d.iter().map(move |&c| (r, c))));
    }
    SparsePattern::new(topology.ndof(), entries)
}

/// Chain matrix from the 11 DOFs of a spring to the 8 kernel variables.
fn chain_matrix() -> SMatrix<f64, 8, 11> {
    let mut a = SMatrix::<f64, 8, 11>::zeros();
    for c in 0..3 {
        a[(c, c)] = -1.0;
        a[(c, 3 + c)] = 1.0;
        a[(3 + c, 3 + c)] = -1.0;
        a[(3 + c, 6 + c)] = 1.0;
    }
    a[(6, 9)] = 1.0;
    a[(7, 10)] = 1.0;
    a
}

/// Adds energy, force and (optionally) Hessian of the selected terms.
///
/// `hessian` must carry a pattern containing [`elastic_pattern`].
pub fn assemble_elastic(
    topology: &RobotTopology,
    state: &SimState,
    undeformed: &UndeformedConfig,
    material: &MaterialParams,
    terms: Terms,
    force: &mut [f64],
    mut hess: Option<&mut SparseMatrix>,
) -> Result<f64> {
    let mut energy = 0.0;
    if terms.stretch {
        for k in 0..topology.edge_count() {
            let e = state.edge_vector(topology, k);
            let len = e.norm();
            if !(len > 0.0) {
                return Err(Error::Degenerate(format!("edge {k} has zero length")));
            }
            let lbar = undeformed.edge_lengths[k];
            let ks = edge_stretch_stiffness(topology, material, k);
            let eps = len / lbar - 1.0;
            energy += 0.5 * ks * eps * eps * lbar;
            let u = e / len;
            let g = u * (ks * eps);
            let d = edge_dofs(topology, k);
            for c in 0..3 {
                force[d[c]] += g[c];
                force[d[3 + c]] -= g[c];
            }
            if let Some(h) = hess.as_deref_mut() {
                let uu = u * u.transpose();
                let blk = uu * (ks / lbar) + (nalgebra::Matrix3::identity() - uu) * (ks * eps / len);
                for r in 0..3 {
                    for c in 0..3 {
                        let v = blk[(r, c)];
                        h.add(d[r], d[c], v);
                        h.add(d[3 + r], d[3 + c], v);
                        h.add(d[r], d[3 + c], -v);
                        h.add(d[3 + r], d[c], -v);
                    }
                }
            }
        }
    }
    if terms.bend || terms.twist {
        let a = chain_matrix();
        for s in 0..topology.springs.len() {
            let mut base = spring_base(topology, state, s, Some((undeformed, material)));
            if !terms.bend {
                base.kb = 0.0;
            }
            if !terms.twist {
                base.kt = 0.0;
            }
            let x = spring_inputs(topology, state, s);
            check_spring(&x, &base)?;
            let d = spring_dofs(topology, s);
            if let Some(h) = hess.as_deref_mut() {
                let xv = SVector::<f64, 8>::from_column_slice(&x);
                let (e, g, hv) = hessian(|v: SVector<Dual2SVec64<8>, 8>| spring_energy(&v.into(), &base), &xv);
                energy += e;
                let gq = a.transpose() * g;
                let hq = a.transpose() * hv * a;
                for r in 0..11 {
                    force[d[r]] -= gq[r];
                    for c in 0..11 {
                        h.add(d[r], d[c], hq[(r, c)]);
                    }
                }
            } else {
                energy += spring_energy(&x, &base);
                let xv = SVector::<f64, 8>::from_column_slice(&x);
                let (_, g) = gradient(|v: SVector<DualSVec64<8>, 8>| spring_energy(&v.into(), &base), &xv);
                let gq = a.transpose() * g;
                for r in 0..11 {
                    force[d[r]] -= gq[r];
                }
            }
        }
    }
    Ok(energy)
}

/// Energy only, without derivatives.
pub fn elastic_energy(
    topology: &RobotTopology,
    state: &SimState,
    undeformed: &UndeformedConfig,
    material: &MaterialParams,
    terms: Terms,
) -> Result<f64> {
    let mut energy = 0.0;
    if terms.stretch {
        for k in 0..topology.edge_count() {
            let lbar = undeformed.edge_lengths[k];
            let eps = axial_stretch(&state.edge_vector(topology, k), lbar)?;
            energy += 0.5 * edge_stretch_stiffness(topology, material, k) * eps * eps * lbar;
        }
    }
    if terms.bend || terms.twist {
        for s in 0..topology.springs.len() {
            let mut base = spring_base(topology, state, s, Some((undeformed, material)));
            if !terms.bend {
                base.kb = 0.0;
            }
            if !terms.twist {
                base.kt = 0.0;
            }
            let x = spring_inputs(topology, state, s);
            check_spring(&x, &base)?;
            energy += spring_energy(&x, &base);
        }
    }
    Ok(energy)
}

fn contribution(
    topology: &RobotTopology,
    state: &SimState,
    undeformed: &UndeformedConfig,
    material: &MaterialParams,
    terms: Terms,
) -> Result<ElasticResult> {
    let pattern = Arc::new(elastic_pattern(topology));
    let mut hessian = SparseMatrix::zeros(pattern);
    let mut force = vec![0.0; topology.ndof()];
    let energy =
        assemble_elastic(topology, state, undeformed, material, terms, &mut force, Some(&mut hessian))?;
    hessian.symmetrize();
    Ok(ElasticResult { energy, force, hessian })
}

pub fn stretching_energy(
    topology: &RobotTopology,
    state: &SimState,
    undeformed: &UndeformedConfig,
    material: &MaterialParams,
) -> Result<ElasticResult> {
    contribution(topology, state, undeformed, material, Terms::STRETCH)
}

pub fn bending_energy(
    topology: &RobotTopology,
    state: &SimState,
    undeformed: &UndeformedConfig,
    material: &MaterialParams,
) -> Result<ElasticResult> {
    contribution(topology, state, undeformed, material, Terms::BEND)
}

pub fn twisting_energy(
    topology: &RobotTopology,
    state: &SimState,
    undeformed: &UndeformedConfig,
    material: &MaterialParams,
) -> Result<ElasticResult> {
    contribution(topology, state, undeformed, material, Terms::TWIST)
}

/// `E_s + E_b + E_t` with force and symmetrized sparse Hessian.
pub fn total_elastic(
    topology: &RobotTopology,
    state: &SimState,
    undeformed: &UndeformedConfig,
    material: &MaterialParams,
) -> Result<ElasticResult> {
    contribution(topology, state, undeformed, material, Terms::ALL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rod::{build_robot, RobotGeometry};
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn material() -> MaterialParams {
        MaterialParams::default()
    }

    fn chain(points: &[V3]) -> (RobotTopology, SimState, UndeformedConfig) {
        let topo = RobotTopology::chain(points.len()).unwrap();
        let state = SimState::new(&topo, points).unwrap();
        let und = UndeformedConfig::from_state(&topo, &state).unwrap();
        (topo, state, und)
    }

    fn straight(n: usize, ds: f64) -> (RobotTopology, SimState, UndeformedConfig) {
        let pts: Vec<V3> = (0..n).map(|i| V3::new(0.0, i as f64 * ds, 0.0)).collect();
        chain(&pts)
    }

    fn robot() -> (RobotTopology, SimState, UndeformedConfig) {
        build_robot(&RobotGeometry {
            head_radius: 0.02,
            plate_diameter: 0.04,
            flagella_count: 2,
            flagellum_length: 0.04,
            edge_length: 0.008,
        })
        .unwrap()
    }

    fn perturb(topo: &RobotTopology, state: &mut SimState, rng: &mut ChaCha8Rng, dx: f64, dth: f64) {
        for i in 0..3 * topo.node_count {
            state.q[i] += rng.random_range(-dx..dx);
        }
        for k in 0..topo.edge_count() {
            state.q[topo.theta_index(k)] += rng.random_range(-dth..dth);
        }
    }

    #[test]
    fn stiffness_values() {
        let m = material();
        let r0: f64 = 3.2e-3;
        assert_relative_eq!(m.ea(), 1.2e6 * std::f64::consts::PI * r0 * r0, max_relative = 1e-14);
        assert_relative_eq!(m.ei(), 9.883e-5, max_relative = 1e-3);
        assert_relative_eq!(m.shear_modulus(), 4e5, max_relative = 1e-14);
        assert_relative_eq!(m.gj(), std::f64::consts::PI / 2.0 * 4e5 * r0.powi(4), max_relative = 1e-14);
    }

    #[test]
    fn axial_stretch_examples() {
        assert_eq!(axial_stretch(&V3::new(0.0, 2.0, 0.0), 2.0).unwrap(), 0.0);
        assert_relative_eq!(axial_stretch(&V3::new(1.1, 0.0, 0.0), 1.0).unwrap(), 0.1, epsilon = 1e-15);
        assert_relative_eq!(axial_stretch(&V3::new(3e-3, 4e-3, 0.0), 5e-3).unwrap(), 0.0, epsilon = 1e-15);
        assert!(axial_stretch(&V3::x(), 0.0).is_err());
    }

    #[test]
    fn single_edge_stretch_energy_and_force() {
        let lbar = 4.11e-3;
        let (topo, mut state, und) = straight(2, lbar);
        state.set_node(1, &V3::new(0.0, 1.1 * lbar, 0.0));
        let m = material();
        let r = stretching_energy(&topo, &state, &und, &m).unwrap();
        let ea = m.youngs_modulus * std::f64::consts::PI * m.radius.powi(2);
        assert_relative_eq!(r.energy, 0.5 * ea * 0.01 * lbar, max_relative = 1e-12);
        // Equal and opposite axial forces of magnitude EA·ε.
        assert_relative_eq!(r.force[1], ea * 0.1, max_relative = 1e-12);
        assert_relative_eq!(r.force[4], -ea * 0.1, max_relative = 1e-12);
    }

    #[test]
    fn binormal_examples() {
        assert_eq!(curvature_binormal(&V3::x(), &(V3::x() * 2.0)).unwrap(), V3::zeros());
        assert_relative_eq!(curvature_binormal(&V3::x(), &V3::y()).unwrap().norm(), 2.0, epsilon = 1e-15);
        let e60 = V3::new(0.5, 3f64.sqrt() / 2.0, 0.0);
        assert_relative_eq!(
            curvature_binormal(&V3::x(), &e60).unwrap().norm(),
            2.0 * (30f64).to_radians().tan(),
            epsilon = 1e-14
        );
        assert!(curvature_binormal(&V3::x(), &-V3::x()).is_err());
    }

    fn bent(psi: f64) -> (RobotTopology, SimState, UndeformedConfig) {
        let (topo, _, und) = straight(3, 1.0);
        let pts = [V3::zeros(), V3::new(0.0, 1.0, 0.0), V3::new(psi.sin(), 1.0 + psi.cos(), 0.0)];
        let state = SimState::new(&topo, &pts).unwrap();
        (topo, state, und)
    }

    #[test]
    fn planar_bend_components() {
        // The chain along +y seeds d1 = x̂, so the bend toward +x lies in the
        // (t, m1) plane; kb is along ±m2 and only κ1 is nonzero.
        let (topo, state, _) = bent(0.3);
        let f0 = state.frames[0];
        assert_relative_eq!(f0.d1, V3::x(), epsilon = 1e-15);
        let kb = curvature_binormal(&state.edge_vector(&topo, 0), &state.edge_vector(&topo, 1)).unwrap();
        let m_in = state.material_frame(&topo, 0);
        let m_out = state.material_frame(&topo, 1);
        let (k1, k2) = material_curvatures(&kb, &m_in, &m_out);
        assert!(k1.abs() > 0.1);
        assert!(k2.abs() < 1e-15);
        // Rotating the material frames by 90° moves the bend into the (t, m2) plane.
        let rot = |m: (V3, V3)| (m.1, -m.0);
        let (k1r, k2r) = material_curvatures(&kb, &rot(m_in), &rot(m_out));
        assert!(k1r.abs() < 1e-15);
        assert_relative_eq!(k2r.abs(), k1.abs(), epsilon = 1e-15);
        let flip = |m: (V3, V3)| (-m.0, -m.1);
        let (k1f, k2f) = material_curvatures(&kb, &flip(m_in), &flip(m_out));
        assert_eq!((k1f, k2f), (-k1, -k2));
    }

    #[test]
    fn bending_energy_ten_degrees() {
        let psi = 10f64.to_radians();
        let (topo, state, und) = bent(psi);
        let m = material();
        let e = bending_energy(&topo, &state, &und, &m).unwrap().energy;
        let expected = 0.5 * m.ei() / 1.0 * (2.0 * (psi / 2.0).tan()).powi(2);
        assert_relative_eq!(e, expected, max_relative = 1e-12);
        let mut stiff = m;
        stiff.youngs_modulus *= 2.0;
        let e2 = bending_energy(&topo, &state, &und, &stiff).unwrap().energy;
        assert_relative_eq!(e2, 2.0 * e, max_relative = 1e-12);
    }

    #[test]
    fn twisting_energy_examples() {
        let (topo, mut state, mut und) = straight(3, 0.5);
        let m = material();
        for k in 0..2 {
            state.q[topo.theta_index(k)] = 0.7;
        }
        assert_eq!(twisting_energy(&topo, &state, &und, &m).unwrap().energy, 0.0);
        state.q[topo.theta_index(1)] += 0.2;
        let e = twisting_energy(&topo, &state, &und, &m).unwrap().energy;
        assert_relative_eq!(e, 0.5 * m.gj() / 0.5 * 0.04, max_relative = 1e-12);

        // A driven rest twist grows the energy quadratically on a frozen shape.
        let (topo, state, _) = straight(3, 0.5);
        let energy_at = |t: f64, und: &mut UndeformedConfig| {
            und.tau_bar[0] = 3.0 * t;
            twisting_energy(&topo, &state, und, &m).unwrap().energy
        };
        let e1 = energy_at(1.0, &mut und);
        let e2 = energy_at(2.0, &mut und);
        assert_relative_eq!(e2, 4.0 * e1, max_relative = 1e-12);
    }

    #[test]
    fn undeformed_robot_has_zero_energy_and_force() {
        let (topo, state, und) = robot();
        let r = total_elastic(&topo, &state, &und, &material()).unwrap();
        assert!(r.energy.abs() < 1e-20);
        assert!(r.force.iter().all(|f| f.abs() < 1e-12));
    }

    fn fd_check(topo: &RobotTopology, state: &SimState, und: &UndeformedConfig, m: &MaterialParams) -> (f64, f64) {
        let r = total_elastic(topo, state, und, m).unwrap();
        let n = topo.ndof();
        let mut grad_fd = vec![0.0; n];
        let mut hess_err: f64 = 0.0;
        let dense = r.hessian.to_dense();
        let hnorm = dense.norm();
        for i in 0..n {
            let h = if i < 3 * topo.node_count { 1e-7 * 0.1 } else { 1e-7 };
            let mut p = state.clone();
            p.q[i] += h;
            let mut mm = state.clone();
            mm.q[i] -= h;
            let ep = elastic_energy(topo, &p, und, m, Terms::ALL).unwrap();
            let em = elastic_energy(topo, &mm, und, m, Terms::ALL).unwrap();
            grad_fd[i] = (ep - em) / (2.0 * h);
            let fp = total_elastic(topo, &p, und, m).unwrap().force;
            let fm = total_elastic(topo, &mm, und, m).unwrap().force;
            for j in 0..n {
                let col = -(fp[j] - fm[j]) / (2.0 * h);
                hess_err = hess_err.max((col - dense[(j, i)]).abs());
            }
        }
        let fnorm = r.force.iter().map(|f| f * f).sum::<f64>().sqrt();
        let gerr = r.force.iter().zip(&grad_fd).map(|(f, g)| (f + g).powi(2)).sum::<f64>().sqrt();
        (gerr / fnorm, hess_err / hnorm)
    }

    #[test]
    fn force_and_hessian_match_finite_differences() {
        let (topo, state0, und) = robot();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let mut state = state0.clone();
            perturb(&topo, &mut state, &mut rng, 5e-4, 0.2);
            let (g, h) = fd_check(&topo, &state, &und, &material());
            assert!(g < 1e-6, "gradient relative error {g}");
            assert!(h < 1e-4, "hessian relative error {h}");
        }
    }

    #[test]
    fn sparsity_per_spring() {
        let (topo, state0, und) = robot();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut state = state0.clone();
        perturb(&topo, &mut state, &mut rng, 1e-3, 0.3);
        let m = material();
        // One edge: stretching Hessian confined to 6 DOFs.
        let mut single = und.clone();
        for k in 1..topo.edge_count() {
            single.edge_lengths[k] = state.edge_vector(&topo, k).norm();
        }
        let r = stretching_energy(&topo, &state, &single, &m).unwrap();
        let touched: Vec<usize> = (0..topo.ndof()).filter(|&i| r.force[i] != 0.0).collect();
        assert_eq!(touched.len(), 6);
        // One spring: bending+twisting touches 11 DOFs.
        let mut only = und.clone();
        let s = topo.springs.len() - 2;
        let mut mute = m;
        mute.youngs_modulus = m.youngs_modulus;
        for j in 0..topo.springs.len() {
            if j != s {
                let (k1, k2, tau) = spring_strains(&topo, &state, j).unwrap();
                only.kappa_bar[j] = [k1, k2];
                only.tau_bar[j] = tau;
            }
        }
        let mut f = vec![0.0; topo.ndof()];
        let pattern = Arc::new(elastic_pattern(&topo));
        let mut h = SparseMatrix::zeros(pattern);
        let bt = Terms { stretch: false, bend: true, twist: true };
        assemble_elastic(&topo, &state, &only, &mute, bt, &mut f, Some(&mut h)).unwrap();
        let touched: Vec<usize> = (0..topo.ndof()).filter(|&i| f[i].abs() > 0.0).collect();
        let mut expected = spring_dofs(&topo, s).to_vec();
        expected.sort();
        assert_eq!(touched, expected);
    }

    #[test]
    fn internal_forces_balance() {
        let (topo, state0, und) = robot();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut state = state0.clone();
        perturb(&topo, &mut state, &mut rng, 1e-3, 0.3);
        let r = total_elastic(&topo, &state, &und, &material()).unwrap();
        for c in 0..3 {
            let sum: f64 = (0..topo.node_count).map(|i| r.force[3 * i + c]).sum();
            let scale: f64 = (0..topo.node_count).map(|i| r.force[3 * i + c].abs()).sum();
            assert!(sum.abs() < 1e-10 * scale.max(1.0), "component {c}: {sum}");
        }
    }

    #[test]
    fn hessian_is_symmetric() {
        let (topo, state0, und) = robot();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = state0.clone();
        perturb(&topo, &mut state, &mut rng, 1e-3, 0.3);
        let d = total_elastic(&topo, &state, &und, &material()).unwrap().hessian.to_dense();
        let asym = (&d - d.transpose()).norm();
        assert!(asym <= 1e-9 * d.norm());
    }

    #[test]
    fn quadratic_scaling_near_rest() {
        let (topo, state0, und) = robot();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = topo.ndof();
        let dir: Vec<f64> = (0..n).map(|i| if i < 3 * topo.node_count { 1e-6 } else { 1e-4 } * rng.random_range(-1.0..1.0)).collect();
        let energy_along = |a: f64| {
            let mut s = state0.clone();
            for i in 0..n {
                s.q[i] += a * dir[i];
            }
            elastic_energy(&topo, &s, &und, &material(), Terms::ALL).unwrap()
        };
        let e1 = energy_along(1.0);
        let e2 = energy_along(2.0);
        assert_relative_eq!(e2 / e1, 4.0, max_relative = 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn rigid_motion_invariance(
            seed in 0u64..1000,
            axis in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
            angle in -3.0..3.0f64,
            shift in (-0.1..0.1f64, -0.1..0.1f64, -0.1..0.1f64),
        ) {
            let (topo, state0, und) = robot();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut state = state0.clone();
            perturb(&topo, &mut state, &mut rng, 1e-3, 0.3);
            let m = material();
            let e0 = elastic_energy(&topo, &state, &und, &m, Terms::ALL).unwrap();
            let axis = V3::new(axis.0, axis.1, axis.2);
            prop_assume!(axis.norm() > 0.1);
            let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
            let shift = V3::new(shift.0, shift.1, shift.2);
            let mut moved = state.clone();
            for i in 0..topo.node_count {
                moved.set_node(i, &(rot * state.node(i) + shift));
            }
            for f in moved.frames.iter_mut() {
                f.d1 = rot * f.d1;
                f.d2 = rot * f.d2;
                f.t = rot * f.t;
            }
            let e1 = elastic_energy(&topo, &moved, &und, &m, Terms::ALL).unwrap();
            prop_assert!((e1 - e0).abs() < 1e-10, "{} vs {}", e0, e1);
        }
    }
}
