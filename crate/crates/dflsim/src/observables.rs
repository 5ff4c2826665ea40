//! Initial-state families, charge sectors, and every measured quantity:
//! polarizations, the three-body interaction, Gauss operators, per-link
//! energy, and the matter imbalance.
//!
//! Two frames appear throughout. In the *full* frame (matter + gauge qubits)
//! the conserved charge at vertex `j` is `G_j = sX_j prod_{l at j} X_l`. The
//! basis-change circuit maps `G_j` onto the bare matter operator `sX_j`, so a
//! product state fixes its charge sector purely through the matter pattern:
//! x-eigenstate matter picks one sector, z-eigenstate matter superposes all
//! of them with uniform weight. In the *dual* frame only gauge qubits remain
//! and the charges enter as classical signs.

use serde::{Deserialize, Serialize};

use crate::circuit::{TrotterParams, build_ub};
use crate::lattice::{Frame, LatticeGraph, LinkId, VertexId};
use crate::statevector::{StateVector, bloch_state};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Bloch vectors and charge sectors

/// A single-qubit direction; need not be normalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochVec {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVec {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// The field direction `(h, 0, J)` that maximizes per-link energy.
    pub fn aligned(p: &TrotterParams) -> Self {
        Self { x: p.h, y: 0.0, z: p.j }
    }

    pub fn flipped(&self) -> Self {
        Self { x: -self.x, y: -self.y, z: -self.z }
    }

    /// X-axis eigendirection with the given sign.
    pub fn x_axis(sign: i8) -> Self {
        Self { x: f64::from(sign.signum()), y: 0.0, z: 0.0 }
    }

    /// Amplitude pair of the qubit state pointing along this vector.
    pub fn state(&self) -> Result<(crate::C64, crate::C64)> {
        bloch_state(self.x, self.y, self.z)
    }
}

/// One background-charge configuration: a sign per matter vertex.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChargeSector(Vec<i8>);

impl ChargeSector {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Config("charge sector entries must be +1 or -1".into()));
        }
        Ok(Self(signs))
    }

    pub fn uniform(n: usize, sign: i8) -> Self {
        Self(vec![sign.signum(); n])
    }

    /// Sector index interpreted little-endian: bit `v` set means `g_v = -1`.
    pub fn from_index(n: usize, index: usize) -> Self {
        Self((0..n).map(|v| if index >> v & 1 == 0 { 1 } else { -1 }).collect())
    }

    pub fn signs(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sign(&self, v: VertexId) -> f64 {
        f64::from(self.0[v])
    }

    pub fn n_negative(&self) -> usize {
        self.0.iter().filter(|&&s| s < 0).count()
    }
}

/// Charges carried by a full-frame product state whose matter sits at x-values
/// `matter_signs` and whose gauge links sit at x-values `link_signs`:
/// `g_v = m_v * prod_{l at v} s_l`.
pub fn charges_from_x_signs(
    g: &LatticeGraph,
    matter_signs: &[i8],
    link_signs: &[i8],
) -> Result<ChargeSector> {
    if matter_signs.len() != g.n_matter() || link_signs.len() != g.n_gauge() {
        return Err(Error::Config("sign pattern lengths do not match lattice".into()));
    }
    let signs = (0..g.n_matter())
        .map(|v| {
            let product: i8 = g.incident(v).iter().map(|&(l, _)| link_signs[l]).product();
            matter_signs[v] * product
        })
        .collect();
    ChargeSector::new(signs)
}

/// How sectors are weighted in a disorder average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SectorWeighting {
    /// One fixed sector.
    Single { sector: ChargeSector },
    /// All `2^{N_m}` sectors with equal weight.
    Uniform,
    /// Gauge-flip ensemble of the tilted-state family: a configuration with
    /// `M` flipped links carries weight `[cos^{N_g-M}(t/2) sin^M(t/2)]^2`.
    ThetaProduct { theta: f64 },
    /// Explicit nonnegative weights; must sum to 1.
    Explicit { entries: Vec<(ChargeSector, f64)> },
}

impl SectorWeighting {
    pub fn validate(&self) -> Result<()> {
        if let SectorWeighting::Explicit { entries } = self {
            if entries.iter().any(|&(_, w)| w < 0.0 || !w.is_finite()) {
                return Err(Error::Config("sector weights must be finite and nonnegative".into()));
            }
            let total: f64 = entries.iter().map(|&(_, w)| w).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("sector weights sum to {total}, not 1")));
            }
        }
        Ok(())
    }
}

/// Weight of a tilted-state gauge configuration with `flips` flipped links
/// out of `n_gauge`.
pub fn theta_flip_weight(theta: f64, n_gauge: usize, flips: usize) -> f64 {
    let c = (theta / 2.0).cos();
    let s = (theta / 2.0).sin();
    (c.powi((n_gauge - flips) as i32) * s.powi(flips as i32)).powi(2)
}

// ---------------------------------------------------------------------------
// Initial-state specification

/// Matter-qubit product pattern. X-eigenstate patterns fix a charge sector;
/// `AllPlusZ` superposes all sectors uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatterPattern {
    AllPlusX,
    AllPlusZ,
    /// `m_v = (-1)^v` along the x-axis, vertex 0 positive.
    StaggeredX,
    Explicit { bloch: Vec<BlochVec> },
}

/// Gauge-qubit product pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GaugePattern {
    /// Every link along the field direction `(h, 0, J)`, except the listed
    /// links which point opposite (local energy perturbations).
    Aligned { flips: Vec<LinkId> },
    /// Tilted family: link `l` points at `(s_l cos(theta), 0, sin(theta))`
    /// with the alternating-pair base sign `s_l`.
    ThetaTilted { theta: f64 },
}

/// A full initial-state specification. Field-aligned (quench) families are
/// prepared as a product state followed by the basis-change circuit, which
/// encodes the charge sector on the matter x-values. The tilted family is a
/// bare product state: there the gauge x-decomposition spreads the state
/// over sectors with per-link flip weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialStateSpec {
    pub matter: MatterPattern,
    pub gauge: GaugePattern,
}

impl InitialStateSpec {
    /// Field-aligned gauge links with optional flips, matter in `|+x>`:
    /// the single-sector energy-quench state.
    pub fn single_sector_quench(flips: Vec<LinkId>) -> Self {
        Self { matter: MatterPattern::AllPlusX, gauge: GaugePattern::Aligned { flips } }
    }

    /// Same gauge pattern with matter in `|+z>`: the all-sector
    /// superposition quench state.
    pub fn superposition_quench(flips: Vec<LinkId>) -> Self {
        Self { matter: MatterPattern::AllPlusZ, gauge: GaugePattern::Aligned { flips } }
    }

    /// Staggered matter with tilted gauge links: the imbalance family.
    pub fn tilted(theta: f64) -> Self {
        Self { matter: MatterPattern::StaggeredX, gauge: GaugePattern::ThetaTilted { theta } }
    }

    /// Whether the full-frame preparation appends the basis-change circuit.
    ///
    /// Quench states (aligned gauge) do: the circuit turns matter x-values
    /// into charges, leaving the gauge qubits to carry the field pattern.
    /// The tilted family is *defined* as a bare product state; applying the
    /// basis change there would collapse it into a single sector instead of
    /// the intended weighted mixture.
    pub fn applies_basis_change(&self) -> bool {
        matches!(self.gauge, GaugePattern::Aligned { .. })
    }
}

/// Staggered matter sign `(-1)^v`.
pub fn staggered_matter_sign(v: VertexId) -> i8 {
    if v % 2 == 0 { 1 } else { -1 }
}

/// Base sign of the tilted gauge pattern: the alternating-pair sequence
/// `+,-,-,+,+,-,-,...` chosen so that at `theta = 0` the staggered-matter
/// state carries charge +1 everywhere the boundary parity allows.
pub fn staggered_gauge_sign(l: LinkId) -> i8 {
    match l % 4 {
        0 | 3 => 1,
        _ => -1,
    }
}

/// Per-vertex Bloch vectors of the matter pattern.
pub fn matter_bloch(pattern: &MatterPattern, g: &LatticeGraph) -> Result<Vec<BlochVec>> {
    let n = g.n_matter();
    Ok(match pattern {
        MatterPattern::AllPlusX => vec![BlochVec::x_axis(1); n],
        MatterPattern::AllPlusZ => vec![BlochVec::new(0.0, 0.0, 1.0); n],
        MatterPattern::StaggeredX => {
            (0..n).map(|v| BlochVec::x_axis(staggered_matter_sign(v))).collect()
        }
        MatterPattern::Explicit { bloch } => {
            if bloch.len() != n {
                return Err(Error::Config(format!(
                    "explicit matter pattern has {} entries for {n} vertices",
                    bloch.len()
                )));
            }
            bloch.clone()
        }
    })
}

/// Per-link Bloch vectors of the gauge pattern.
pub fn gauge_bloch(
    pattern: &GaugePattern,
    g: &LatticeGraph,
    p: &TrotterParams,
) -> Result<Vec<BlochVec>> {
    match pattern {
        GaugePattern::Aligned { flips } => {
            let aligned = BlochVec::aligned(p);
            let mut out = vec![aligned; g.n_gauge()];
            for &l in flips {
                if l >= g.n_gauge() {
                    return Err(Error::Config(format!("flip link {l} out of range")));
                }
                out[l] = aligned.flipped();
            }
            Ok(out)
        }
        GaugePattern::ThetaTilted { theta } => Ok((0..g.n_gauge())
            .map(|l| {
                BlochVec::new(
                    f64::from(staggered_gauge_sign(l)) * theta.cos(),
                    0.0,
                    theta.sin(),
                )
            })
            .collect()),
    }
}

/// Product state on the full register (matter pattern on matter qubits,
/// gauge pattern on gauge qubits) *without* the basis change.
pub fn prepare_product_state(
    spec: &InitialStateSpec,
    g: &LatticeGraph,
    p: &TrotterParams,
) -> Result<StateVector> {
    let matter = matter_bloch(&spec.matter, g)?;
    let gauge = gauge_bloch(&spec.gauge, g, p)?;
    let mut single = Vec::with_capacity(g.n_qubits(Frame::Lgt));
    for v in 0..g.n_matter() {
        single.push(matter[g.matter_qubit(v)].state()?);
    }
    for l in 0..g.n_gauge() {
        debug_assert_eq!(g.gauge_qubit(l, Frame::Lgt), g.n_matter() + l);
        single.push(gauge[l].state()?);
    }
    StateVector::product_state(&single)
}

/// Full-frame initial state of a state family. For quench families this is
/// the product state followed by the basis-change circuit (x-eigenstate
/// matter then yields a definite charge sector); the tilted family stays a
/// bare product state whose sector content lives on the gauge qubits.
pub fn prepare_lgt_state(
    spec: &InitialStateSpec,
    g: &LatticeGraph,
    p: &TrotterParams,
) -> Result<StateVector> {
    let mut sv = prepare_product_state(spec, g, p)?;
    if spec.applies_basis_change() {
        sv.apply_circuit(&build_ub(g))?;
    }
    Ok(sv)
}

/// Dual-frame description of an initial-state family: gauge-qubit product
/// states plus the sector structure the matter pattern implies.
#[derive(Debug, Clone, PartialEq)]
pub enum DualEnsemble {
    /// One sector, one gauge product state.
    Single { sector: ChargeSector, gauge_init: Vec<BlochVec> },
    /// Uniform weight over all `2^{N_m}` sectors, all sharing one gauge
    /// product state (z-eigenstate matter).
    Uniform { gauge_init: Vec<BlochVec> },
    /// Tilted family: gauge configuration `F` (a set of flipped links) has
    /// weight `theta_flip_weight`, x-eigenstate gauge init with signs
    /// `s_l * (-1)^{l in F}`, and the sector those x-values imply.
    ThetaFamily { theta: f64, matter_signs: Vec<i8>, base_signs: Vec<i8> },
}

/// Translates an initial-state spec into its dual-frame ensemble.
pub fn dual_ensemble(
    spec: &InitialStateSpec,
    g: &LatticeGraph,
    p: &TrotterParams,
) -> Result<DualEnsemble> {
    let gauge_init = gauge_bloch(&spec.gauge, g, p)?;
    match (&spec.matter, &spec.gauge) {
        (MatterPattern::AllPlusZ, _) => Ok(DualEnsemble::Uniform { gauge_init }),
        (MatterPattern::AllPlusX, _) => Ok(DualEnsemble::Single {
            sector: ChargeSector::uniform(g.n_matter(), 1),
            gauge_init,
        }),
        (MatterPattern::StaggeredX, GaugePattern::ThetaTilted { theta }) => {
            Ok(DualEnsemble::ThetaFamily {
                theta: *theta,
                matter_signs: (0..g.n_matter()).map(staggered_matter_sign).collect(),
                base_signs: (0..g.n_gauge()).map(staggered_gauge_sign).collect(),
            })
        }
        (MatterPattern::StaggeredX, GaugePattern::Aligned { .. }) => {
            let matter_signs: Vec<i8> =
                (0..g.n_matter()).map(staggered_matter_sign).collect();
            // aligned links are not x-eigenstates; the sector still follows
            // from the matter x-values alone
            Ok(DualEnsemble::Single {
                sector: ChargeSector::new(matter_signs)?,
                gauge_init,
            })
        }
        (MatterPattern::Explicit { .. }, _) => Err(Error::Config(
            "explicit matter patterns have no generic dual-frame ensemble".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Measurements

/// Per-entity expectations of the operators entering the Hamiltonian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteObservables {
    /// `<sX_v>` per vertex.
    pub matter_pol: Vec<f64>,
    /// `<X_l>` per link.
    pub gauge_pol: Vec<f64>,
    /// `<sZ_a Z_l sZ_b>` per link.
    pub interaction: Vec<f64>,
    /// `<G_v>` per vertex.
    pub gauss: Vec<f64>,
}

/// Direct full-frame expectations.
pub fn measure_lgt(sv: &StateVector, g: &LatticeGraph) -> Result<SiteObservables> {
    if sv.n_qubits() != g.n_qubits(Frame::Lgt) {
        return Err(Error::Circuit("state register does not match lattice".into()));
    }
    let matter_pol = (0..g.n_matter()).map(|v| sv.expect_x(g.matter_qubit(v))).collect();
    let gauge_pol =
        (0..g.n_gauge()).map(|l| sv.expect_x(g.gauge_qubit(l, Frame::Lgt))).collect();
    let interaction = g
        .links()
        .iter()
        .enumerate()
        .map(|(l, link)| {
            let mask = (1usize << g.matter_qubit(link.a))
                | (1usize << g.gauge_qubit(l, Frame::Lgt))
                | (1usize << g.matter_qubit(link.b));
            sv.expect_z_string(mask)
        })
        .collect();
    let gauss = (0..g.n_matter()).map(|v| gauss_expectation(sv, g, v)).collect();
    Ok(SiteObservables { matter_pol, gauge_pol, interaction, gauss })
}

/// `<G_v>` = expectation of `sX_v prod_{l at v} X_l` in the full frame.
pub fn gauss_expectation(sv: &StateVector, g: &LatticeGraph, v: VertexId) -> f64 {
    let mut mask = 1usize << g.matter_qubit(v);
    for &(l, _) in g.incident(v) {
        mask |= 1usize << g.gauge_qubit(l, Frame::Lgt);
    }
    sv.expect_x_string(mask)
}

/// Dual-basis measurement of a full-frame state: applies the basis change,
/// then reads every quantity from single-register strings. `gauss` comes from
/// matter X, `interaction` from gauge Z, `gauge_pol` from gauge X, and
/// `matter_pol` from the matter-and-incident-links X string.
pub fn measure_dual_basis(sv: &StateVector, g: &LatticeGraph) -> Result<SiteObservables> {
    let mut rotated = sv.clone();
    rotated.apply_circuit(&build_ub(g))?;
    let gauss = (0..g.n_matter()).map(|v| rotated.expect_x(g.matter_qubit(v))).collect();
    let gauge_pol = (0..g.n_gauge())
        .map(|l| rotated.expect_x(g.gauge_qubit(l, Frame::Lgt)))
        .collect();
    let interaction = (0..g.n_gauge())
        .map(|l| rotated.expect_z(g.gauge_qubit(l, Frame::Lgt)))
        .collect();
    let matter_pol = (0..g.n_matter()).map(|v| gauss_expectation(&rotated, g, v)).collect();
    Ok(SiteObservables { matter_pol, gauge_pol, interaction, gauss })
}

/// Dual-frame expectations for a fixed sector: the register holds only gauge
/// qubits, charges enter as classical signs, and the mapped observables are
/// `gauge_pol = <X_l>`, `interaction = <Z_l>`,
/// `matter_pol(v) = g_v <prod_{l at v} X_l>`.
pub fn measure_dual_frame(
    sv: &StateVector,
    g: &LatticeGraph,
    sector: &ChargeSector,
) -> Result<SiteObservables> {
    if sv.n_qubits() != g.n_qubits(Frame::Dual) {
        return Err(Error::Circuit("state register does not match dual frame".into()));
    }
    if sector.len() != g.n_matter() {
        return Err(Error::Config(format!(
            "sector has {} charges for {} vertices",
            sector.len(),
            g.n_matter()
        )));
    }
    let gauge_pol =
        (0..g.n_gauge()).map(|l| sv.expect_x(g.gauge_qubit(l, Frame::Dual))).collect();
    let interaction =
        (0..g.n_gauge()).map(|l| sv.expect_z(g.gauge_qubit(l, Frame::Dual))).collect();
    let matter_pol = (0..g.n_matter())
        .map(|v| {
            let mut mask = 0usize;
            for &(l, _) in g.incident(v) {
                mask |= 1usize << g.gauge_qubit(l, Frame::Dual);
            }
            sector.sign(v) * sv.expect_x_string(mask)
        })
        .collect();
    let gauss = (0..g.n_matter()).map(|v| sector.sign(v)).collect();
    Ok(SiteObservables { matter_pol, gauge_pol, interaction, gauss })
}

// ---------------------------------------------------------------------------
// Energy per link

/// Decomposed per-link energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkEnergy {
    pub link: LinkId,
    pub gauge_pol: f64,
    pub interaction: f64,
    pub mu_part: f64,
    pub charge_part: f64,
    pub energy: f64,
}

/// Per-link energy profile at one cycle (or time) index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile {
    pub cycle: f64,
    pub links: Vec<LinkEnergy>,
}

impl EnergyProfile {
    pub fn total(&self) -> f64 {
        self.links.iter().map(|l| l.energy).sum()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.energy).collect()
    }
}

/// Per-link energy
/// `e_l = J <sZ Z sZ> + h <X_l> + mu (<sX_a>/deg(a) + <sX_b>/deg(b))
///        + Q (<G_a>/deg(a) + <G_b>/deg(b))`.
/// On a ring the degree weights reduce to the familiar `mu/2` split, and the
/// per-link energies always sum to the total energy because the weights
/// telescope.
pub fn energy_per_link(
    g: &LatticeGraph,
    p: &TrotterParams,
    obs: &SiteObservables,
    cycle: f64,
) -> Result<EnergyProfile> {
    if obs.gauge_pol.len() != g.n_gauge()
        || obs.interaction.len() != g.n_gauge()
        || obs.matter_pol.len() != g.n_matter()
        || obs.gauss.len() != g.n_matter()
    {
        return Err(Error::Config("observable table does not match lattice".into()));
    }
    let links = g
        .links()
        .iter()
        .enumerate()
        .map(|(l, link)| {
            let (da, db) = (g.degree(link.a) as f64, g.degree(link.b) as f64);
            let mu_part =
                p.mu * (obs.matter_pol[link.a] / da + obs.matter_pol[link.b] / db);
            let charge_part = p.q * (obs.gauss[link.a] / da + obs.gauss[link.b] / db);
            LinkEnergy {
                link: l,
                gauge_pol: obs.gauge_pol[l],
                interaction: obs.interaction[l],
                mu_part,
                charge_part,
                energy: p.j * obs.interaction[l] + p.h * obs.gauge_pol[l]
                    + mu_part
                    + charge_part,
            }
        })
        .collect();
    Ok(EnergyProfile { cycle, links })
}

/// Staggered-memory imbalance `(1/N_m) sum_v <sX_v(now)><sX_v(init)>`.
pub fn imbalance(now: &[f64], init: &[f64]) -> Result<f64> {
    if now.len() != init.len() || now.is_empty() {
        return Err(Error::Config("imbalance inputs must be equal-length, nonempty".into()));
    }
    Ok(now.iter().zip(init).map(|(a, b)| a * b).sum::<f64>() / now.len() as f64)
}

/// Writes energy profiles as long-format CSV:
/// `cycle,link,gauge_pol,interaction,mu_part,charge_part,energy`.
pub fn write_energy_csv<W: std::io::Write>(
    w: W,
    profiles: &[EnergyProfile],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "cycle",
        "link",
        "gauge_pol",
        "interaction",
        "mu_part",
        "charge_part",
        "energy",
    ])
    .map_err(csv_err)?;
    for profile in profiles {
        for link in &profile.links {
            out.write_record([
                profile.cycle.to_string(),
                link.link.to_string(),
                link.gauge_pol.to_string(),
                link.interaction.to_string(),
                link.mu_part.to_string(),
                link.charge_part.to_string(),
                link.energy.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{TrotterOrder, build_trotter_cycle};
    use approx::assert_abs_diff_eq;

    fn params() -> TrotterParams {
        TrotterParams::new(1.0, 1.3, 1.5, 0.25)
    }

    #[test]
    fn quench_state_charges() {
        let g = LatticeGraph::ring(4).unwrap();
        let p = params();
        let single = prepare_lgt_state(&InitialStateSpec::single_sector_quench(vec![]), &g, &p)
            .unwrap();
        let obs = measure_lgt(&single, &g).unwrap();
        for v in 0..4 {
            assert_abs_diff_eq!(obs.gauss[v], 1.0, epsilon = 1e-12);
        }
        let superpos =
            prepare_lgt_state(&InitialStateSpec::superposition_quench(vec![]), &g, &p).unwrap();
        let obs = measure_lgt(&superpos, &g).unwrap();
        for v in 0..4 {
            assert_abs_diff_eq!(obs.gauss[v], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn aligned_energy_values() {
        // Hand arithmetic on the prepared state (product then basis change).
        // Each aligned link contributes sqrt(J^2+h^2) of field energy and the
        // flipped link -sqrt(J^2+h^2), a deficit of exactly 2 sqrt(J^2+h^2).
        // Matter polarization after the basis change is the product of the
        // incident links' <X> = h/sqrt(J^2+h^2), so the mu part of a link far
        // from the flip is mu h^2/(J^2+h^2), zero next to the flip (one
        // endpoint each sign), and negative on the flipped link itself.
        let g = LatticeGraph::ring(6).unwrap();
        let p = params();
        let root = (p.j * p.j + p.h * p.h).sqrt();
        let xbar2 = p.h * p.h / (p.j * p.j + p.h * p.h);
        let sv = prepare_lgt_state(&InitialStateSpec::single_sector_quench(vec![3]), &g, &p)
            .unwrap();
        let obs = measure_lgt(&sv, &g).unwrap();
        let profile = energy_per_link(&g, &p, &obs, 0.0).unwrap();
        for link in &profile.links {
            let field = p.j * link.interaction + p.h * link.gauge_pol;
            let (want_field, want_mu) = match link.link {
                3 => (-root, -p.mu * xbar2),
                2 | 4 => (root, 0.0),
                _ => (root, p.mu * xbar2),
            };
            assert_abs_diff_eq!(field, want_field, epsilon = 1e-12);
            assert_abs_diff_eq!(link.mu_part, want_mu, epsilon = 1e-12);
            assert_abs_diff_eq!(link.energy, want_field + want_mu, epsilon = 1e-12);
        }
    }

    #[test]
    fn per_link_energies_sum_to_hamiltonian_expectation() {
        let g = LatticeGraph::grid(2, 3).unwrap();
        let mut p = params();
        p.q = 0.4;
        let mut sv = prepare_lgt_state(&InitialStateSpec::single_sector_quench(vec![1]), &g, &p)
            .unwrap();
        // evolve a little so the state is not special
        let cycle = build_trotter_cycle(&g, &p, TrotterOrder::Second);
        for _ in 0..3 {
            sv.apply_circuit(&cycle).unwrap();
        }
        let obs = measure_lgt(&sv, &g).unwrap();
        let profile = energy_per_link(&g, &p, &obs, 3.0).unwrap();
        // direct <H> from the same expectations (mu and Q weights telescope)
        let direct: f64 = (0..g.n_gauge())
            .map(|l| p.j * obs.interaction[l] + p.h * obs.gauge_pol[l])
            .sum::<f64>()
            + p.mu * obs.matter_pol.iter().sum::<f64>()
            + p.q * obs.gauss.iter().sum::<f64>();
        assert_abs_diff_eq!(profile.total(), direct, epsilon = 1e-10);
    }

    #[test]
    fn dual_basis_matches_direct_expectations() {
        let g = LatticeGraph::ring(4).unwrap();
        let p = params();
        let mut sv = prepare_lgt_state(&InitialStateSpec::superposition_quench(vec![2]), &g, &p)
            .unwrap();
        let cycle = build_trotter_cycle(&g, &p, TrotterOrder::Second);
        for _ in 0..4 {
            sv.apply_circuit(&cycle).unwrap();
        }
        let direct = measure_lgt(&sv, &g).unwrap();
        let dual = measure_dual_basis(&sv, &g).unwrap();
        for (a, b) in [
            (&direct.matter_pol, &dual.matter_pol),
            (&direct.gauge_pol, &dual.gauge_pol),
            (&direct.interaction, &dual.interaction),
            (&direct.gauss, &dual.gauss),
        ] {
            for (x, y) in a.iter().zip(b) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn staggered_charges_close_on_ring4_and_chain5() {
        let matter4: Vec<i8> = (0..4).map(staggered_matter_sign).collect();
        let gauge4: Vec<i8> = (0..4).map(staggered_gauge_sign).collect();
        let ring = LatticeGraph::ring(4).unwrap();
        let sector = charges_from_x_signs(&ring, &matter4, &gauge4).unwrap();
        assert_eq!(sector.signs(), &[1, 1, 1, 1]);

        let chain = LatticeGraph::chain(5).unwrap();
        let matter5: Vec<i8> = (0..5).map(staggered_matter_sign).collect();
        let gauge5: Vec<i8> = (0..4).map(staggered_gauge_sign).collect();
        let sector = charges_from_x_signs(&chain, &matter5, &gauge5).unwrap();
        assert_eq!(sector.signs(), &[1, 1, 1, 1, 1]);

        // parity forces one boundary defect on the 6-vertex chain
        let chain = LatticeGraph::chain(6).unwrap();
        let matter6: Vec<i8> = (0..6).map(staggered_matter_sign).collect();
        let gauge6: Vec<i8> = (0..5).map(staggered_gauge_sign).collect();
        let sector = charges_from_x_signs(&chain, &matter6, &gauge6).unwrap();
        assert_eq!(sector.signs(), &[1, 1, 1, 1, 1, -1]);
    }

    #[test]
    fn tilted_state_matches_its_sector_decomposition() {
        // <G_v> of the full-frame tilted state must equal the weighted sector
        // average over gauge-flip configurations
        let g = LatticeGraph::chain(4).unwrap();
        let p = params();
        let theta = 0.9;
        let sv = prepare_lgt_state(&InitialStateSpec::tilted(theta), &g, &p).unwrap();
        let obs = measure_lgt(&sv, &g).unwrap();

        let matter: Vec<i8> = (0..4).map(staggered_matter_sign).collect();
        let base: Vec<i8> = (0..3).map(staggered_gauge_sign).collect();
        let mut expected = vec![0.0; 4];
        let mut total_weight = 0.0;
        for flip_set in 0..(1usize << 3) {
            let signs: Vec<i8> = (0..3)
                .map(|l| if flip_set >> l & 1 == 0 { base[l] } else { -base[l] })
                .collect();
            let w = theta_flip_weight(theta, 3, flip_set.count_ones() as usize);
            total_weight += w;
            let sector = charges_from_x_signs(&g, &matter, &signs).unwrap();
            for v in 0..4 {
                expected[v] += w * sector.sign(v);
            }
        }
        assert_abs_diff_eq!(total_weight, 1.0, epsilon = 1e-12);
        for v in 0..4 {
            assert_abs_diff_eq!(obs.gauss[v], expected[v], epsilon = 1e-12);
        }
    }

    #[test]
    fn imbalance_of_initial_staggered_state_is_one() {
        let g = LatticeGraph::chain(6).unwrap();
        let p = TrotterParams::new(1.0, 2.2, 2.0, 0.25);
        for theta in [0.0, 0.7, std::f64::consts::FRAC_PI_2] {
            let sv = prepare_lgt_state(&InitialStateSpec::tilted(theta), &g, &p).unwrap();
            let obs = measure_lgt(&sv, &g).unwrap();
            let i0 = imbalance(&obs.matter_pol, &obs.matter_pol).unwrap();
            assert_abs_diff_eq!(i0, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn energy_csv_layout() {
        let g = LatticeGraph::ring(3).unwrap();
        let p = params();
        let sv = prepare_lgt_state(&InitialStateSpec::single_sector_quench(vec![]), &g, &p)
            .unwrap();
        let obs = measure_lgt(&sv, &g).unwrap();
        let profile = energy_per_link(&g, &p, &obs, 0.0).unwrap();
        let mut buf = Vec::new();
        write_energy_csv(&mut buf, std::slice::from_ref(&profile)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "cycle,link,gauge_pol,interaction,mu_part,charge_part,energy"
        );
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn sector_weighting_validation() {
        let ok = SectorWeighting::Explicit {
            entries: vec![
                (ChargeSector::uniform(2, 1), 0.25),
                (ChargeSector::uniform(2, -1), 0.75),
            ],
        };
        ok.validate().unwrap();
        let bad = SectorWeighting::Explicit {
            entries: vec![(ChargeSector::uniform(2, 1), 0.5)],
        };
        assert!(bad.validate().is_err());
        assert!(ChargeSector::new(vec![1, 0]).is_err());
    }

    #[test]
    fn sector_index_round_trip() {
        let s = ChargeSector::from_index(4, 0b0101);
        assert_eq!(s.signs(), &[-1, 1, -1, 1]);
        assert_eq!(s.n_negative(), 2);
    }
}
