//! Rod network kinematics: topology, degrees of freedom, reference and
//! material frames.
//!
//! The robot is a tree of straight edges. Every edge is oriented away from
//! the root node, so each non-root node has exactly one incoming edge and
//! every (incoming, outgoing) edge pair at a node forms one bend-twist
//! spring. The DOF vector is `[x_0, .., x_{N-1}, θ^0, .., θ^{Ne-1}]`.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use nalgebra::Vector3;

use crate::{energy, invalid, Error, Result};

pub type V3 = Vector3<f64>;

/// Tolerance below which `1 + t_from·t_to` is treated as a fold.
const ANTIPARALLEL_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Segment {
    Head,
    Plate,
    Flagellum(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub start: usize,
    pub end: usize,
    pub segment: Segment,
    pub rigid: bool,
}

/// Bending and twisting spring between an incoming and an outgoing edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BendTwistSpring {
    pub prev: usize,
    pub node: usize,
    pub next: usize,
    pub e_in: usize,
    pub e_out: usize,
}

#[derive(Clone, Debug)]
pub struct RobotTopology {
    pub node_count: usize,
    pub edges: Vec<Edge>,
    pub springs: Vec<BendTwistSpring>,
    /// The "T" joint x₂ where the plate meets the head; `None` for plain rods.
    pub joint_node: Option<usize>,
    pub flagella_count: usize,
    incoming: Vec<Option<usize>>,
}

impl RobotTopology {
    /// Builds a tree topology from oriented edges and derives its springs.
    pub fn new(node_count: usize, edges: Vec<Edge>) -> Result<Self> {
        if node_count < 2 {
            return Err(Error::Topology("need at least two nodes".into()));
        }
        if edges.len() != node_count - 1 {
            return Err(Error::Topology(format!(
                "{} edges for {} nodes; a tree needs N - 1",
                edges.len(),
                node_count
            )));
        }
        let mut incoming = vec![None; node_count];
        for (k, e) in edges.iter().enumerate() {
            if e.start >= node_count || e.end >= node_count || e.start == e.end {
                return Err(Error::Topology(format!("edge {k} has invalid endpoints")));
            }
            if incoming[e.end].replace(k).is_some() {
                return Err(Error::Topology(format!("node {} has two incoming edges", e.end)));
            }
        }
        let mut outgoing = vec![Vec::new(); node_count];
        for (k, e) in edges.iter().enumerate() {
            outgoing[e.start].push(k);
        }
        let mut springs = Vec::new();
        for node in 0..node_count {
            if let Some(e_in) = incoming[node] {
                for &e_out in &outgoing[node] {
                    springs.push(BendTwistSpring {
                        prev: edges[e_in].start,
                        node,
                        next: edges[e_out].end,
                        e_in,
                        e_out,
                    });
                }
            }
        }
        let topo = RobotTopology {
            node_count,
            edges,
            springs,
            joint_node: None,
            flagella_count: 0,
            incoming,
        };
        if topo.edge_order().len() != topo.edges.len() {
            return Err(Error::Topology("edges do not form a connected tree".into()));
        }
        Ok(topo)
    }

    /// Straight chain `0 -> 1 -> .. -> n-1` of flexible flagellum edges.
    pub fn chain(node_count: usize) -> Result<Self> {
        let edges = (0..node_count.saturating_sub(1))
            .map(|k| Edge { start: k, end: k + 1, segment: Segment::Flagellum(0), rigid: false })
            .collect();
        RobotTopology::new(node_count, edges)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn ndof(&self) -> usize {
        3 * self.node_count + self.edges.len()
    }

    /// Index of the twist DOF of edge `k`.
    pub fn theta_index(&self, k: usize) -> usize {
        3 * self.node_count + k
    }

    pub fn incoming_edge(&self, node: usize) -> Option<usize> {
        self.incoming[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.start == node || e.end == node).count()
    }

    /// Edges ordered so every edge comes after its parent edge.
    pub fn edge_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.edges.len());
        let mut queue: VecDeque<usize> = (0..self.edges.len())
            .filter(|&k| self.incoming[self.edges[k].start].is_none())
            .collect();
        let mut seen = vec![false; self.edges.len()];
        while let Some(k) = queue.pop_front() {
            if std::mem::replace(&mut seen[k], true) {
                continue;
            }
            order.push(k);
            let end = self.edges[k].end;
            queue.extend((0..self.edges.len()).filter(|&j| self.edges[j].start == end));
        }
        order
    }

    /// Nodes carrying RFT drag: every node touched by a flagellum edge.
    pub fn flagellar_nodes(&self) -> Vec<usize> {
        let mut mark = vec![false; self.node_count];
        for e in &self.edges {
            if matches!(e.segment, Segment::Flagellum(_)) {
                mark[e.start] = true;
                mark[e.end] = true;
            }
        }
        (0..self.node_count).filter(|&i| mark[i]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub d1: V3,
    pub d2: V3,
    pub t: V3,
}

impl Frame {
    /// Material directors `(m1, m2)` for twist angle `theta`.
    pub fn material(&self, theta: f64) -> (V3, V3) {
        let (s, c) = theta.sin_cos();
        (self.d1 * c + self.d2 * s, -self.d1 * s + self.d2 * c)
    }

    pub fn orthonormality_error(&self) -> f64 {
        [
            self.d1.norm() - 1.0,
            self.d2.norm() - 1.0,
            self.t.norm() - 1.0,
            self.d1.dot(&self.d2),
            self.d1.dot(&self.t),
            self.d2.dot(&self.t),
        ]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug)]
pub struct SimState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub frames: Vec<Frame>,
    /// Reference twist per bend-twist spring (the joint node carries several).
    pub ref_twist: Vec<f64>,
    pub time: f64,
}

impl SimState {
    /// State at rest with zero twist angles and space-parallel-transported
    /// frames seeded on each root edge.
    pub fn new(topology: &RobotTopology, positions: &[V3]) -> Result<Self> {
        if positions.len() != topology.node_count {
            return Err(invalid(format!(
                "{} positions for {} nodes",
                positions.len(),
                topology.node_count
            )));
        }
        let ndof = topology.ndof();
        let mut q = vec![0.0; ndof];
        for (i, p) in positions.iter().enumerate() {
            q[3 * i..3 * i + 3].copy_from_slice(p.as_slice());
        }
        let mut frames = vec![Frame { d1: V3::x(), d2: V3::y(), t: V3::z() }; topology.edge_count()];
        for k in topology.edge_order() {
            let e = topology.edges[k];
            let t = unit(positions[e.end] - positions[e.start])?;
            let d1 = match topology.incoming_edge(e.start) {
                Some(parent) => {
                    let pf = frames[parent];
                    parallel_transport(&pf.d1, &pf.t, &t)?
                }
                None => seed_director(&t),
            };
            frames[k] = orthonormal_frame(d1, t);
        }
        Ok(SimState {
            q,
            qdot: vec![0.0; ndof],
            frames,
            ref_twist: vec![0.0; topology.springs.len()],
            time: 0.0,
        })
    }

    pub fn node(&self, i: usize) -> V3 {
        V3::new(self.q[3 * i], self.q[3 * i + 1], self.q[3 * i + 2])
    }

    pub fn node_velocity(&self, i: usize) -> V3 {
        V3::new(self.qdot[3 * i], self.qdot[3 * i + 1], self.qdot[3 * i + 2])
    }

    pub fn set_node(&mut self, i: usize, p: &V3) {
        self.q[3 * i..3 * i + 3].copy_from_slice(p.as_slice());
    }

    pub fn theta(&self, topology: &RobotTopology, k: usize) -> f64 {
        self.q[topology.theta_index(k)]
    }

    pub fn edge_vector(&self, topology: &RobotTopology, k: usize) -> V3 {
        let e = topology.edges[k];
        self.node(e.end) - self.node(e.start)
    }

    pub fn material_frame(&self, topology: &RobotTopology, k: usize) -> (V3, V3) {
        self.frames[k].material(self.theta(topology, k))
    }
}

/// Rest shape: edge lengths, curvatures and twists of every spring.
#[derive(Clone, Debug, PartialEq)]
pub struct UndeformedConfig {
    pub edge_lengths: Vec<f64>,
    /// `[κ̄1, κ̄2]` per spring.
    pub kappa_bar: Vec<[f64; 2]>,
    pub tau_bar: Vec<f64>,
    /// Spring whose rest twist is driven by the motor.
    pub actuation_spring: Option<usize>,
}

impl UndeformedConfig {
    /// Takes the current configuration as stress free.
    pub fn from_state(topology: &RobotTopology, state: &SimState) -> Result<Self> {
        let edge_lengths: Vec<f64> = (0..topology.edge_count())
            .map(|k| state.edge_vector(topology, k).norm())
            .collect();
        if let Some(k) = edge_lengths.iter().position(|&l| l <= 0.0) {
            return Err(Error::Degenerate(format!("edge {k} has zero length")));
        }
        let mut kappa_bar = Vec::with_capacity(topology.springs.len());
        let mut tau_bar = Vec::with_capacity(topology.springs.len());
        for s in 0..topology.springs.len() {
            let (k1, k2, tau) = energy::spring_strains(topology, state, s)?;
            kappa_bar.push([k1, k2]);
            tau_bar.push(tau);
        }
        Ok(UndeformedConfig { edge_lengths, kappa_bar, tau_bar, actuation_spring: None })
    }

    /// Node at which the motor twist is applied.
    pub fn actuation_node(&self, topology: &RobotTopology) -> Option<usize> {
        self.actuation_spring.map(|s| topology.springs[s].node)
    }
}

/// Geometry of the head + plate + n flagella robot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotGeometry {
    pub head_radius: f64,
    pub plate_diameter: f64,
    pub flagella_count: usize,
    pub flagellum_length: f64,
    pub edge_length: f64,
}

impl RobotGeometry {
    pub fn plate_radius(&self) -> f64 {
        0.5 * self.plate_diameter
    }

    /// Number of edges per flagellum.
    pub fn flagellum_edges(&self) -> usize {
        (self.flagellum_length / self.edge_length).round() as usize
    }
}

/// Discretizes the robot along the +y axis.
///
/// Nodes: x₀ = (0, -2R_h, 0), x₁ = (0, -R_h, 0) (head center), x₂ = origin
/// (joint). Flagellum i gets a plate node at radius R_d in the y = 0 plane at
/// azimuth 2πi/n and then a straight chain of edges parallel to +y. Head and
/// plate edges are rigid. The motor acts on the spring at x₁.
pub fn build_robot(geom: &RobotGeometry) -> Result<(RobotTopology, SimState, UndeformedConfig)> {
    let RobotGeometry { head_radius, plate_diameter, flagella_count: n, flagellum_length, edge_length } =
        *geom;
    if n < 2 {
        return Err(invalid(format!("flagella count must be >= 2, got {n}")));
    }
    for (name, v) in [
        ("head radius", head_radius),
        ("plate diameter", plate_diameter),
        ("flagellum length", flagellum_length),
        ("edge length", edge_length),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(format!("{name} must be positive, got {v}")));
        }
    }
    if edge_length > flagellum_length / 4.0 {
        return Err(invalid(format!(
            "edge length {edge_length} is coarser than a quarter of the flagellum ({flagellum_length})"
        )));
    }
    let m = geom.flagellum_edges();
    let ds = flagellum_length / m as f64;
    let rd = geom.plate_radius();

    let mut pos = vec![
        V3::new(0.0, -2.0 * head_radius, 0.0),
        V3::new(0.0, -head_radius, 0.0),
        V3::zeros(),
    ];
    let mut edges = vec![
        Edge { start: 0, end: 1, segment: Segment::Head, rigid: true },
        Edge { start: 1, end: 2, segment: Segment::Head, rigid: true },
    ];
    for i in 0..n {
        let phi = TAU * i as f64 / n as f64;
        let base = V3::new(rd * phi.cos(), 0.0, rd * phi.sin());
        let plate = pos.len();
        pos.push(base);
        edges.push(Edge { start: 2, end: plate, segment: Segment::Plate, rigid: true });
        for j in 1..=m {
            let idx = pos.len();
            pos.push(base + V3::new(0.0, ds * j as f64, 0.0));
            let prev = if j == 1 { plate } else { idx - 1 };
            edges.push(Edge { start: prev, end: idx, segment: Segment::Flagellum(i), rigid: false });
        }
    }
    let mut topo = RobotTopology::new(pos.len(), edges)?;
    topo.joint_node = Some(2);
    topo.flagella_count = n;
    let state = SimState::new(&topo, &pos)?;
    let mut undeformed = UndeformedConfig::from_state(&topo, &state)?;
    undeformed.actuation_spring = topo.springs.iter().position(|s| s.node == 1);
    Ok((topo, state, undeformed))
}

pub(crate) fn unit(v: V3) -> Result<V3> {
    let n = v.norm();
    if n > 0.0 && n.is_finite() {
        Ok(v / n)
    } else {
        Err(Error::Degenerate("zero-length edge".into()))
    }
}

fn seed_director(t: &V3) -> V3 {
    let a = t.abs();
    let axis = if a.x <= a.y && a.x <= a.z {
        V3::x()
    } else if a.y <= a.z {
        V3::y()
    } else {
        V3::z()
    };
    (axis - t * t.dot(&axis)).normalize()
}

/// Gram-Schmidt `d1` against `t` and complete the right-handed triad.
fn orthonormal_frame(d1: V3, t: V3) -> Frame {
    let d1 = (d1 - t * t.dot(&d1)).normalize();
    Frame { d1, d2: t.cross(&d1), t }
}

/// Rotates `v` by the minimal rotation taking `t_from` onto `t_to`.
pub fn parallel_transport(v: &V3, t_from: &V3, t_to: &V3) -> Result<V3> {
    let c = t_from.dot(t_to);
    if c <= -1.0 + ANTIPARALLEL_TOL {
        return Err(Error::Degenerate("antiparallel tangents in parallel transport".into()));
    }
    let b = t_from.cross(t_to);
    Ok(v * c + b.cross(v) + b * (b.dot(v) / (1.0 + c)))
}

/// Rodrigues rotation of `v` about the unit `axis`.
pub fn rotate_about(v: &V3, axis: &V3, angle: f64) -> V3 {
    let (s, c) = angle.sin_cos();
    v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c))
}

/// Angle from `u` to `v` measured about `n`.
pub fn signed_angle(u: &V3, v: &V3, n: &V3) -> f64 {
    u.cross(v).dot(n).atan2(u.dot(v))
}

/// Reference twist of a spring, updated incrementally from `previous`.
pub fn reference_twist(inc: &Frame, out: &Frame, previous: f64) -> Result<f64> {
    let ut = parallel_transport(&inc.d1, &inc.t, &out.t)?;
    let ut = rotate_about(&ut, &out.t, previous);
    Ok(previous + signed_angle(&ut, &out.d1, &out.t))
}

/// Time-parallel transports every reference frame to the tangents of
/// `state.q`, re-orthonormalizes, and refreshes the reference twists.
pub fn update_frames(topology: &RobotTopology, state: &SimState) -> Result<SimState> {
    let mut next = state.clone();
    update_frames_in_place(topology, &mut next)?;
    Ok(next)
}

pub fn update_frames_in_place(topology: &RobotTopology, state: &mut SimState) -> Result<()> {
    for k in 0..topology.edge_count() {
        let t = unit(state.edge_vector(topology, k))?;
        let old = state.frames[k];
        let d1 = parallel_transport(&old.d1, &old.t, &t)?;
        state.frames[k] = orthonormal_frame(d1, t);
    }
    for (s, sp) in topology.springs.iter().enumerate() {
        state.ref_twist[s] =
            reference_twist(&state.frames[sp.e_in], &state.frames[sp.e_out], state.ref_twist[s])?;
    }
    Ok(())
}
