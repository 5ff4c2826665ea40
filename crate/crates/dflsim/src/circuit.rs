//! Moment-based gate IR and the circuit builders for Trotterized dynamics.
//!
//! Angle conventions (global phase is never tracked):
//!
//! * `Rx(theta) = exp(-i theta X / 2)`, `Rz(theta) = exp(-i theta Z / 2)`
//! * `Cphase(phi) = diag(1, 1, 1, e^{i phi})`
//! * `ExpZzz(theta) = exp(-i theta Z (x) Z (x) Z)` on (matter, gauge, matter)
//! * `ExpXstar(theta) = exp(-i theta X^{(x)k})` on an arbitrary target set
//!
//! A Trotter cycle of the gauge theory passes `theta = J*dt` (or `J*dt/2` for
//! the symmetric splitting) to `ExpZzz` and `2*h*dt` / `2*mu*dt` to the gauge
//! and matter `Rx` layers, so one cycle advances physical time by `dt`.
//!
//! Circuits are sequences of *moments*: groups of gates acting on pairwise
//! disjoint qubits. Moments are scheduling structure only; the simulators
//! apply gates moment by moment in order.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::lattice::{Frame, LatticeGraph};
use crate::statevector::StateVector;
use crate::{C64, Error, Result};

/// One gate of the IR. Qubit indices are global register ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "g", rename_all = "snake_case")]
pub enum Gate {
    Rx { q: usize, theta: f64 },
    Rz { q: usize, theta: f64 },
    H { q: usize },
    Cnot { c: usize, t: usize },
    Cz { a: usize, b: usize },
    Cphase { a: usize, b: usize, phi: f64 },
    ExpZzz { a: usize, m: usize, b: usize, theta: f64 },
    ExpXstar { targets: Vec<usize>, theta: f64 },
}

impl Gate {
    /// Qubits the gate acts on.
    pub fn targets(&self) -> Vec<usize> {
        match self {
            Gate::Rx { q, .. } | Gate::Rz { q, .. } | Gate::H { q } => vec![*q],
            Gate::Cnot { c, t } => vec![*c, *t],
            Gate::Cz { a, b } | Gate::Cphase { a, b, .. } => vec![*a, *b],
            Gate::ExpZzz { a, m, b, .. } => vec![*a, *m, *b],
            Gate::ExpXstar { targets, .. } => targets.clone(),
        }
    }

    /// Whether the gate entangles (acts on more than one qubit).
    pub fn is_entangling(&self) -> bool {
        match self {
            Gate::Rx { .. } | Gate::Rz { .. } | Gate::H { q: _ } => false,
            Gate::ExpXstar { targets, .. } => targets.len() > 1,
            _ => true,
        }
    }
}

/// A gate sequence organized into disjoint moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    n_qubits: usize,
    moments: Vec<Vec<Gate>>,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Self { n_qubits, moments: Vec::new() }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn moments(&self) -> &[Vec<Gate>] {
        &self.moments
    }

    pub fn n_moments(&self) -> usize {
        self.moments.len()
    }

    /// All gates in application order.
    pub fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.moments.iter().flatten()
    }

    pub fn gate_count(&self) -> usize {
        self.moments.iter().map(Vec::len).sum()
    }

    pub fn entangling_count(&self) -> usize {
        self.gates().filter(|g| g.is_entangling()).count()
    }

    /// Appends a moment, checking qubit bounds and in-moment disjointness.
    pub fn push_moment(&mut self, gates: Vec<Gate>) -> Result<()> {
        let mut seen = vec![false; self.n_qubits];
        for gate in &gates {
            for q in gate.targets() {
                if q >= self.n_qubits {
                    return Err(Error::Circuit(format!(
                        "gate {gate:?} targets qubit {q} outside register of {}",
                        self.n_qubits
                    )));
                }
                if seen[q] {
                    return Err(Error::Circuit(format!(
                        "moment targets qubit {q} more than once"
                    )));
                }
                seen[q] = true;
            }
        }
        self.moments.push(gates);
        Ok(())
    }

    /// Appends all moments of `other` (registers must match).
    pub fn extend(&mut self, other: &Circuit) -> Result<()> {
        if other.n_qubits != self.n_qubits {
            return Err(Error::Circuit(format!(
                "register mismatch: {} vs {}",
                self.n_qubits, other.n_qubits
            )));
        }
        self.moments.extend(other.moments.iter().cloned());
        Ok(())
    }

    /// The circuit repeated `n` times.
    pub fn repeated(&self, n: usize) -> Circuit {
        let mut moments = Vec::with_capacity(self.moments.len() * n);
        for _ in 0..n {
            moments.extend(self.moments.iter().cloned());
        }
        Circuit { n_qubits: self.n_qubits, moments }
    }

    /// Serializes to versioned JSON.
    pub fn to_json(&self) -> Result<String> {
        let file = CircuitFile { version: CIRCUIT_FORMAT_VERSION, circuit: self.clone() };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parses [`Self::to_json`] output, re-validating every moment.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: CircuitFile = serde_json::from_str(text)?;
        if file.version != CIRCUIT_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported circuit format version {} (expected {CIRCUIT_FORMAT_VERSION})",
                file.version
            )));
        }
        let mut checked = Circuit::new(file.circuit.n_qubits);
        for moment in file.circuit.moments {
            checked.push_moment(moment)?;
        }
        Ok(checked)
    }
}

/// On-disk circuit format version.
pub const CIRCUIT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CircuitFile {
    version: u32,
    circuit: Circuit,
}

// ---------------------------------------------------------------------------
// Builders

/// Couplings of one Trotter cycle. `q` multiplies the conserved charge term
/// and stays zero in all standard runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrotterParams {
    pub j: f64,
    pub h: f64,
    pub mu: f64,
    pub dt: f64,
    #[serde(default)]
    pub q: f64,
}

impl TrotterParams {
    pub fn new(j: f64, h: f64, mu: f64, dt: f64) -> Self {
        Self { j, h, mu, dt, q: 0.0 }
    }
}

/// Splitting order of the cycle unitary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrotterOrder {
    /// `U = U_h U_mu U_J`, applied J-layer first.
    First,
    /// `U = U_J(dt/2) U_h U_mu U_J(dt/2)`.
    Second,
}

/// Basis-change circuit mapping charge observables onto single matter qubits:
/// one CNOT from every matter site onto each of its incident gauge links.
///
/// All CNOTs commute, and the moments form a minimum schedule (2 for 1d
/// lattices, 4 for grids — the maximum vertex degree). Applying the circuit
/// twice is the identity.
pub fn build_ub(g: &LatticeGraph) -> Circuit {
    // Edges of the vertex-link incidence graph, in (link, endpoint) order.
    let mut edges = Vec::with_capacity(2 * g.n_gauge());
    for (l, link) in g.links().iter().enumerate() {
        edges.push((link.a, l));
        edges.push((link.b, l));
    }
    let max_deg = (0..g.n_matter()).map(|v| g.degree(v)).max().unwrap_or(0);
    let n_colors = max_deg.max(2);
    let colors = bipartite_edge_coloring(g.n_matter(), g.n_gauge(), &edges, n_colors);

    let mut circuit = Circuit::new(g.n_qubits(Frame::Lgt));
    for color in 0..n_colors {
        let gates: Vec<Gate> = edges
            .iter()
            .zip(&colors)
            .filter(|&(_, &c)| c == color)
            .map(|(&(v, l), _)| Gate::Cnot {
                c: g.matter_qubit(v),
                t: g.gauge_qubit(l, Frame::Lgt),
            })
            .collect();
        if !gates.is_empty() {
            circuit.push_moment(gates).expect("coloring yields disjoint moments");
        }
    }
    circuit
}

/// Proper edge coloring of a bipartite graph with `n_colors >= max degree`,
/// via alternating-path augmentation. Deterministic in edge order.
fn bipartite_edge_coloring(
    n_left: usize,
    n_right: usize,
    edges: &[(usize, usize)],
    n_colors: usize,
) -> Vec<usize> {
    const FREE: usize = usize::MAX;
    let mut at_left = vec![vec![FREE; n_colors]; n_left]; // vertex -> color -> edge
    let mut at_right = vec![vec![FREE; n_colors]; n_right];
    let mut color_of = vec![FREE; edges.len()];

    for (e, &(u, w)) in edges.iter().enumerate() {
        let a = at_left[u].iter().position(|&x| x == FREE).expect("color budget");
        let b = at_right[w].iter().position(|&x| x == FREE).expect("color budget");
        if a != b {
            // Free color a at w by swapping a and b along the maximal
            // alternating path starting from w. Walk it read-only first:
            // the a/b subgraph has degree <= 2, so this is a simple path,
            // and (bipartiteness) it can never terminate at u.
            let mut path = Vec::new();
            let (mut node, mut want, mut on_left) = (w, a, false);
            loop {
                let edge = if on_left { at_left[node][want] } else { at_right[node][want] };
                if edge == FREE {
                    break;
                }
                path.push(edge);
                let (eu, ew) = edges[edge];
                node = if on_left { ew } else { eu };
                want = if want == a { b } else { a };
                on_left = !on_left;
            }
            for &edge in &path {
                let old = color_of[edge];
                let new = if old == a { b } else { a };
                let (eu, ew) = edges[edge];
                if at_left[eu][old] == edge {
                    at_left[eu][old] = FREE;
                }
                if at_right[ew][old] == edge {
                    at_right[ew][old] = FREE;
                }
                color_of[edge] = new;
            }
            for &edge in &path {
                let (eu, ew) = edges[edge];
                let new = color_of[edge];
                at_left[eu][new] = edge;
                at_right[ew][new] = edge;
            }
            debug_assert_eq!(at_right[w][a], FREE);
            debug_assert_eq!(at_left[u][a], FREE);
        }
        color_of[e] = a;
        at_left[u][a] = e;
        at_right[w][a] = e;
    }
    color_of
}

/// Greedy proper edge coloring of the lattice graph itself (links conflict
/// when they share a matter site). Used to schedule three-body layers.
fn link_layer_coloring(g: &LatticeGraph) -> Vec<usize> {
    let mut used: Vec<Vec<usize>> = vec![Vec::new(); g.n_matter()];
    let mut colors = Vec::with_capacity(g.n_gauge());
    for link in g.links() {
        let mut c = 0;
        while used[link.a].contains(&c) || used[link.b].contains(&c) {
            c += 1;
        }
        used[link.a].push(c);
        used[link.b].push(c);
        colors.push(c);
    }
    colors
}

/// One Trotter cycle of the gauge theory in the full (matter + gauge) frame.
///
/// The first-order splitting applies the three-body `ZZZ` layer, then the
/// matter `Rx(2 mu dt)` layer, then the gauge `Rx(2 h dt)` layer; the
/// second-order splitting sandwiches the single-qubit layers between two
/// half-angle `ZZZ` layers. Every Gauss operator commutes with each layer, so
/// charge sectors are conserved exactly, not just to Trotter accuracy.
pub fn build_trotter_cycle(g: &LatticeGraph, p: &TrotterParams, order: TrotterOrder) -> Circuit {
    let mut c = Circuit::new(g.n_qubits(Frame::Lgt));
    match order {
        TrotterOrder::First => {
            push_zzz_layer(&mut c, g, p.j * p.dt);
            push_x_layers(&mut c, g, p);
        }
        TrotterOrder::Second => {
            push_zzz_layer(&mut c, g, p.j * p.dt / 2.0);
            push_x_layers(&mut c, g, p);
            push_zzz_layer(&mut c, g, p.j * p.dt / 2.0);
        }
    }
    c
}

fn push_zzz_layer(c: &mut Circuit, g: &LatticeGraph, theta: f64) {
    let colors = link_layer_coloring(g);
    let n_colors = colors.iter().max().map_or(0, |&m| m + 1);
    for color in 0..n_colors {
        let gates: Vec<Gate> = g
            .links()
            .iter()
            .enumerate()
            .filter(|&(l, _)| colors[l] == color)
            .map(|(l, link)| Gate::ExpZzz {
                a: g.matter_qubit(link.a),
                m: g.gauge_qubit(l, Frame::Lgt),
                b: g.matter_qubit(link.b),
                theta,
            })
            .collect();
        c.push_moment(gates).expect("colored layer is disjoint");
    }
}

fn push_x_layers(c: &mut Circuit, g: &LatticeGraph, p: &TrotterParams) {
    let matter: Vec<Gate> = (0..g.n_matter())
        .map(|v| Gate::Rx { q: g.matter_qubit(v), theta: 2.0 * p.mu * p.dt })
        .collect();
    c.push_moment(matter).expect("single-qubit layer is disjoint");
    let gauge: Vec<Gate> = (0..g.n_gauge())
        .map(|l| Gate::Rx { q: g.gauge_qubit(l, Frame::Lgt), theta: 2.0 * p.h * p.dt })
        .collect();
    c.push_moment(gauge).expect("single-qubit layer is disjoint");
    if p.q != 0.0 {
        push_charge_layer(c, g, p.q * p.dt);
    }
}

/// Conserved-charge rotations `exp(-i theta sX_j prod X_{j,k})`, scheduled by
/// greedy vertex coloring since neighboring stars share a link.
fn push_charge_layer(c: &mut Circuit, g: &LatticeGraph, theta: f64) {
    let mut vertex_color = vec![usize::MAX; g.n_matter()];
    for v in 0..g.n_matter() {
        let mut used: Vec<usize> = g
            .incident(v)
            .iter()
            .map(|&(_, w)| vertex_color[w])
            .filter(|&c| c != usize::MAX)
            .collect();
        used.sort_unstable();
        let mut color = 0;
        while used.contains(&color) {
            color += 1;
        }
        vertex_color[v] = color;
    }
    let n_colors = vertex_color.iter().max().map_or(0, |&m| m + 1);
    for color in 0..n_colors {
        let gates: Vec<Gate> = (0..g.n_matter())
            .filter(|&v| vertex_color[v] == color)
            .map(|v| {
                let mut targets = vec![g.matter_qubit(v)];
                targets.extend(g.incident(v).iter().map(|&(l, _)| g.gauge_qubit(l, Frame::Lgt)));
                Gate::ExpXstar { targets, theta }
            })
            .collect();
        c.push_moment(gates).expect("colored layer is disjoint");
    }
}

/// Target decomposition for three-body `ZZZ` rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZzzStyle {
    /// `CNOT(a,m) CNOT(b,m) Rz(m) CNOT(b,m) CNOT(a,m)` — 4 entangling gates.
    CnotRz,
    /// `CNOT(a,m) [Rz(b) Rz(m) CPhase(b,m)] CNOT(a,m)` — 3 entangling gates,
    /// equal to the target up to global phase.
    CphaseRz,
}

/// Rewrites every `ExpZzz` gate into two-qubit primitives, keeping gates that
/// shared a moment parallel where the decomposition allows.
pub fn compile_zzz(circuit: &Circuit, style: ZzzStyle) -> Circuit {
    let mut out = Circuit::new(circuit.n_qubits());
    for moment in circuit.moments() {
        let (zzz, rest): (Vec<&Gate>, Vec<&Gate>) =
            moment.iter().partition(|g| matches!(g, Gate::ExpZzz { .. }));
        if zzz.is_empty() {
            out.push_moment(moment.clone()).expect("validated moment");
            continue;
        }
        let parts: Vec<(usize, usize, usize, f64)> = zzz
            .iter()
            .map(|g| match g {
                Gate::ExpZzz { a, m, b, theta } => (*a, *m, *b, *theta),
                _ => unreachable!(),
            })
            .collect();
        let collect = |f: &dyn Fn(&(usize, usize, usize, f64)) -> Vec<Gate>| -> Vec<Gate> {
            parts.iter().flat_map(|p| f(p)).collect()
        };
        match style {
            ZzzStyle::CnotRz => {
                let mut first = rest.into_iter().cloned().collect::<Vec<_>>();
                first.extend(collect(&|&(a, m, _, _)| vec![Gate::Cnot { c: a, t: m }]));
                out.push_moment(first).expect("disjoint");
                out.push_moment(collect(&|&(_, m, b, _)| vec![Gate::Cnot { c: b, t: m }]))
                    .expect("disjoint");
                out.push_moment(collect(&|&(_, m, _, th)| vec![Gate::Rz { q: m, theta: 2.0 * th }]))
                    .expect("disjoint");
                out.push_moment(collect(&|&(_, m, b, _)| vec![Gate::Cnot { c: b, t: m }]))
                    .expect("disjoint");
                out.push_moment(collect(&|&(a, m, _, _)| vec![Gate::Cnot { c: a, t: m }]))
                    .expect("disjoint");
            }
            ZzzStyle::CphaseRz => {
                let mut first = rest.into_iter().cloned().collect::<Vec<_>>();
                first.extend(collect(&|&(a, m, _, _)| vec![Gate::Cnot { c: a, t: m }]));
                out.push_moment(first).expect("disjoint");
                out.push_moment(collect(&|&(_, m, b, th)| {
                    vec![
                        Gate::Rz { q: b, theta: 2.0 * th },
                        Gate::Rz { q: m, theta: 2.0 * th },
                    ]
                }))
                .expect("disjoint");
                out.push_moment(collect(&|&(_, m, b, th)| {
                    vec![Gate::Cphase { a: b, b: m, phi: -4.0 * th }]
                }))
                .expect("disjoint");
                out.push_moment(collect(&|&(a, m, _, _)| vec![Gate::Cnot { c: a, t: m }]))
                    .expect("disjoint");
            }
        }
    }
    out
}

/// Dense unitary of a circuit, for oracle-grade checks on small registers.
pub fn circuit_unitary(circuit: &Circuit) -> Result<Array2<C64>> {
    let n = circuit.n_qubits();
    if n > 12 {
        return Err(Error::Capacity(format!(
            "dense circuit unitary capped at 12 qubits (requested {n})"
        )));
    }
    let dim = 1usize << n;
    let mut u = Array2::zeros((dim, dim));
    for col in 0..dim {
        let mut psi = StateVector::basis_state(n, col)?;
        psi.apply_circuit(circuit)?;
        for (row, amp) in psi.amplitudes().iter().enumerate() {
            u[(row, col)] = *amp;
        }
    }
    Ok(u)
}

// ---------------------------------------------------------------------------
