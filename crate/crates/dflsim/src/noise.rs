//! Synthetic noise injection and the mitigation pipeline that recovers clean
//! observables from noisy shot data.
//!
//! Noise enters in two places, mirroring a gate-based device:
//!
//! * after every entangling gate, with probability `p2` a uniformly random
//!   non-identity Pauli string hits the gate's qubits (stochastic trajectory
//!   sampling, not a density matrix), and
//! * every measured bit flips with per-qubit asymmetric probabilities
//!   (`eps01` reads 1 from a true 0, `eps10` reads 0 from a true 1).
//!
//! Measurement happens in the *dual basis*: the shot circuit ends with the
//! basis-change circuit plus single-qubit rotations, after which every matter
//! bit reads a local charge-conservation check, link X-bits read the gauge
//! polarization, link Z-bits read the three-site interaction term, and the
//! matter polarization becomes a short X-string over a site and its incident
//! links. Mitigation then composes three stages, in pipeline order:
//!
//! 1. **Postselection** — drop shots whose matter bits signal a violated
//!    conservation law, either anywhere (`Global`) or within a Manhattan
//!    radius of an anchored entity (`LocalRadius`).
//! 2. **Readout inversion** — correct expectations through the inverse
//!    per-qubit confusion matrices.
//! 3. **Depolarizing rescale** — divide out the residual stochastic-Pauli
//!    damping, characterized from zero-angle reference runs fitted to
//!    `y(t) = exp[-t/a - (t/b)^2]`.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, Gate, TrotterOrder, TrotterParams, build_trotter_cycle, build_ub};
use crate::lattice::{Entity, Frame, LatticeGraph};
use crate::observables::{
    EnergyProfile, InitialStateSpec, MatterPattern, SiteObservables, energy_per_link, gauge_bloch,
    matter_bloch, measure_lgt, prepare_lgt_state,
};
use crate::statevector::StateVector;
use crate::{C64, Error, Result};

// ---------------------------------------------------------------------------
// Noise model

/// Stochastic noise parameters: one depolarizing strength for all entangling
/// gates plus per-qubit asymmetric readout flip probabilities. The seed makes
/// every noisy run reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Probability of a uniform non-identity Pauli after each entangling gate.
    pub p2: f64,
    /// Per-qubit `(eps01, eps10)` readout flip probabilities.
    pub readout: Vec<(f64, f64)>,
    /// Seed for trajectory sampling, shot sampling, and readout flips.
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(p2: f64, readout: Vec<(f64, f64)>, seed: u64) -> Result<Self> {
        let model = Self { p2, readout, seed };
        model.validate()?;
        Ok(model)
    }

    /// All probabilities zero; useful as a sampling-only baseline.
    pub fn noiseless(n_qubits: usize, seed: u64) -> Self {
        Self { p2: 0.0, readout: vec![(0.0, 0.0); n_qubits], seed }
    }

    /// Same readout pair on every qubit.
    pub fn uniform(p2: f64, eps01: f64, eps10: f64, n_qubits: usize, seed: u64) -> Result<Self> {
        Self::new(p2, vec![(eps01, eps10); n_qubits], seed)
    }

    /// Same model, different random stream.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..0.5).contains(&p);
        if !ok(self.p2) {
            return Err(Error::Config(format!("p2 = {} outside [0, 0.5)", self.p2)));
        }
        for (q, &(e01, e10)) in self.readout.iter().enumerate() {
            if !ok(e01) || !ok(e10) {
                return Err(Error::Config(format!(
                    "readout probabilities ({e01}, {e10}) on qubit {q} outside [0, 0.5)"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(Error::from)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }
}

/// Splitmix-style stream derivation so one configured seed can feed many
/// independent runs (one per cycle count and measurement setting) without
/// reusing random streams.
pub fn derive_stream(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Confusion matrix

/// Per-qubit 2x2 column-stochastic readout matrices `R_q`; the full-register
/// matrix is their tensor product. Column `j` holds the observed-bit
/// distribution given true bit `j`, so `R_q = [[1-e01, e10], [e01, 1-e10]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pairs: Vec<(f64, f64)>,
}

impl ConfusionMatrix {
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self> {
        for (q, &(e01, e10)) in pairs.iter().enumerate() {
            if !(0.0..=1.0).contains(&e01) || !(0.0..=1.0).contains(&e10) {
                return Err(Error::Config(format!(
                    "confusion probabilities ({e01}, {e10}) on qubit {q} outside [0, 1]"
                )));
            }
            if (1.0 - e01 - e10).abs() < 1e-12 {
                return Err(Error::Config(format!(
                    "confusion matrix on qubit {q} is singular (eps01 + eps10 = 1)"
                )));
            }
        }
        Ok(Self { pairs })
    }

    pub fn from_noise(noise: &NoiseModel) -> Self {
        // NoiseModel probabilities are < 0.5, so the determinant is positive.
        Self { pairs: noise.readout.clone() }
    }

    pub fn identity(n_qubits: usize) -> Self {
        Self { pairs: vec![(0.0, 0.0); n_qubits] }
    }

    pub fn n_qubits(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair(&self, q: usize) -> (f64, f64) {
        self.pairs[q]
    }

    /// Dense tensor-product matrix over `qubits` (row-major, `qubits[0]` is
    /// the least significant bit of both indices). Intended for small subsets.
    pub fn dense(&self, qubits: &[usize]) -> Vec<f64> {
        let k = qubits.len();
        let dim = 1usize << k;
        let mut out = vec![0.0; dim * dim];
        for row in 0..dim {
            for col in 0..dim {
                let mut p = 1.0;
                for (i, &q) in qubits.iter().enumerate() {
                    let (e01, e10) = self.pairs[q];
                    let (obs, truth) = ((row >> i) & 1, (col >> i) & 1);
                    p *= match (obs, truth) {
                        (0, 0) => 1.0 - e01,
                        (1, 0) => e01,
                        (0, 1) => e10,
                        _ => 1.0 - e10,
                    };
                }
                out[row * dim + col] = p;
            }
        }
        out
    }

    fn check_subset(&self, qubits: &[usize]) -> Result<()> {
        for &q in qubits {
            if q >= self.pairs.len() {
                return Err(Error::Config(format!(
                    "qubit {q} outside confusion matrix of {} qubits",
                    self.pairs.len()
                )));
            }
        }
        Ok(())
    }
}

/// Applies the readout channel to a probability vector over `qubits`
/// (`p -> R p`), transforming one tensor axis at a time.
pub fn apply_confusion(
    probs: &[f64],
    qubits: &[usize],
    conf: &ConfusionMatrix,
) -> Result<Vec<f64>> {
    conf.check_subset(qubits)?;
    transform_axes(probs, qubits, |q| {
        let (e01, e10) = conf.pair(q);
        [[1.0 - e01, e10], [e01, 1.0 - e10]]
    })
}

/// Inverts the readout channel on measured probabilities over a subset of at
/// most 3 qubits: `p_corr = R_subset^{-1} p_meas`, clipped back onto the
/// probability simplex. Returns the corrected vector and whether clipping
/// fired (clipping is always reported, never silent).
pub fn readout_mitigate(
    probs: &[f64],
    qubits: &[usize],
    conf: &ConfusionMatrix,
) -> Result<(Vec<f64>, bool)> {
    if qubits.len() > 3 {
        return Err(Error::Config(format!(
            "readout mitigation is restricted to subsets of <= 3 qubits (got {})",
            qubits.len()
        )));
    }
    conf.check_subset(qubits)?;
    let raw = transform_axes(probs, qubits, |q| {
        let (e01, e10) = conf.pair(q);
        let det = 1.0 - e01 - e10;
        [[(1.0 - e10) / det, -e10 / det], [-e01 / det, (1.0 - e01) / det]]
    })?;
    let clipped = raw.iter().any(|&p| p < 0.0);
    let mut corrected: Vec<f64> = raw.into_iter().map(|p| p.max(0.0)).collect();
    let total: f64 = corrected.iter().sum();
    if total <= 0.0 {
        return Err(Error::Numerics("corrected probabilities sum to zero".into()));
    }
    for p in &mut corrected {
        *p /= total;
    }
    Ok((corrected, clipped))
}

/// Applies one 2x2 matrix per subset axis to a `2^k` vector.
fn transform_axes(
    probs: &[f64],
    qubits: &[usize],
    matrix: impl Fn(usize) -> [[f64; 2]; 2],
) -> Result<Vec<f64>> {
    let k = qubits.len();
    if probs.len() != 1 << k {
        return Err(Error::Config(format!(
            "probability vector of length {} does not match {k} qubits",
            probs.len()
        )));
    }
    let mut out = probs.to_vec();
    for (i, &q) in qubits.iter().enumerate() {
        let m = matrix(q);
        let stride = 1usize << i;
        for base in 0..out.len() {
            if base & stride == 0 {
                let (p0, p1) = (out[base], out[base | stride]);
                out[base] = m[0][0] * p0 + m[0][1] * p1;
                out[base | stride] = m[1][0] * p0 + m[1][1] * p1;
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Shot batches and noisy execution

/// Raw measurement results: one little-endian bitmask per shot.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotBatch {
    n_qubits: usize,
    shots: Vec<usize>,
    /// Noise-realization id per shot. Shots sharing a trajectory share its
    /// Pauli faults, so standard errors must treat them as one cluster;
    /// without gate noise every shot is independent and gets its own id.
    cluster: Vec<u32>,
    /// Qubits pinned to bit 0 by postselection. Readout inversion must skip
    /// them: their observed distribution is a point mass, so the
    /// unconditional confusion weights would inject a constant bias.
    conditioned: usize,
}

impl ShotBatch {
    pub fn new(n_qubits: usize, shots: Vec<usize>) -> Self {
        let cluster = (0..shots.len() as u32).collect();
        Self { n_qubits, shots, cluster, conditioned: 0 }
    }

    /// Mask of qubits a postselection filter has pinned to 0.
    pub fn conditioned(&self) -> usize {
        self.conditioned
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    pub fn shots(&self) -> &[usize] {
        &self.shots
    }

    /// Uncorrected parity expectation over the masked qubits (bit 0 counts as
    /// +1), with its standard error.
    pub fn raw_parity(&self, mask: usize) -> Result<(f64, f64)> {
        let weights: Vec<f64> = self
            .shots
            .iter()
            .map(|&shot| 1.0 - 2.0 * ((shot & mask).count_ones() % 2) as f64)
            .collect();
        self.clustered_mean_se(&weights)
    }

    /// Mean and cluster-robust standard error of per-shot values: shots from
    /// the same noise trajectory are correlated, so the error sums residuals
    /// per cluster (ids are contiguous by construction).
    fn clustered_mean_se(&self, weights: &[f64]) -> Result<(f64, f64)> {
        if weights.is_empty() {
            return Err(Error::Config("empty shot batch".into()));
        }
        let n = weights.len() as f64;
        let mean = weights.iter().sum::<f64>() / n;
        let mut var_sum = 0.0;
        let mut block = 0.0;
        for (i, w) in weights.iter().enumerate() {
            block += w - mean;
            let last = i + 1 == weights.len();
            if last || self.cluster[i + 1] != self.cluster[i] {
                var_sum += block * block;
                block = 0.0;
            }
        }
        Ok((mean, var_sum.sqrt() / n))
    }

    /// Empirical probability vector over a qubit subset (`qubits[0]` is the
    /// least significant bit of the subset index).
    pub fn subset_probabilities(&self, qubits: &[usize]) -> Result<Vec<f64>> {
        if self.shots.is_empty() {
            return Err(Error::Config("empty shot batch".into()));
        }
        let mut counts = vec![0usize; 1 << qubits.len()];
        for &shot in &self.shots {
            let mut idx = 0usize;
            for (i, &q) in qubits.iter().enumerate() {
                idx |= ((shot >> q) & 1) << i;
            }
            counts[idx] += 1;
        }
        let n = self.shots.len() as f64;
        Ok(counts.into_iter().map(|c| c as f64 / n).collect())
    }
}

/// Readout-corrected parity expectation over a qubit subset.
///
/// For a parity observable the corrected estimator factorizes per qubit:
/// each shot contributes the product of per-qubit weights
/// `w(0) = (1 - eps10 + eps01)/det`, `w(1) = -(1 + eps10 - eps01)/det`,
/// which is exactly the subset-confusion inversion applied to the parity
/// functional. Qubits pinned by postselection take their face value instead
/// (inverting a conditioned bit would overcorrect by a constant factor).
/// The returned standard error is the sample error of the per-shot
/// estimator, so it already accounts for the variance inflation of the
/// inversion.
pub fn corrected_parity(
    batch: &ShotBatch,
    qubits: &[usize],
    conf: &ConfusionMatrix,
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(Error::Config("empty shot batch".into()));
    }
    conf.check_subset(qubits)?;
    let weights: Vec<(f64, f64)> = qubits
        .iter()
        .map(|&q| {
            if (batch.conditioned() >> q) & 1 == 1 {
                return (1.0, -1.0);
            }
            let (e01, e10) = conf.pair(q);
            let det = 1.0 - e01 - e10;
            ((1.0 - e10 + e01) / det, -(1.0 + e10 - e01) / det)
        })
        .collect();
    let per_shot: Vec<f64> = batch
        .shots()
        .iter()
        .map(|&shot| {
            let mut w = 1.0;
            for (i, &q) in qubits.iter().enumerate() {
                let (w0, w1) = weights[i];
                w *= if (shot >> q) & 1 == 0 { w0 } else { w1 };
            }
            w
        })
        .collect();
    batch.clustered_mean_se(&per_shot)
}

/// Simulates `shots` measurements of `circuit` under the noise model, spread
/// over independently sampled Pauli trajectories.
///
/// Each trajectory replays the circuit from `|0...0>`; after every entangling
/// gate, with probability `p2`, a uniformly random non-identity Pauli string
/// lands on the gate's qubits. Shots are then sampled from the trajectory
/// state and readout flips applied bit by bit. With `p2 = 0` and zero readout
/// probabilities no noise randomness is consumed, so the output equals
/// noiseless sampling with the same seed.
pub fn run_noisy(
    circuit: &Circuit,
    noise: &NoiseModel,
    shots: usize,
    trajectories: usize,
) -> Result<ShotBatch> {
    if shots == 0 || trajectories == 0 {
        return Err(Error::Config("shots and trajectories must be >= 1".into()));
    }
    noise.validate()?;
    let n = circuit.n_qubits();
    if noise.readout.len() != n {
        return Err(Error::Config(format!(
            "noise model covers {} qubits, circuit has {n}",
            noise.readout.len()
        )));
    }
    let has_readout = noise.readout.iter().any(|&(a, b)| a > 0.0 || b > 0.0);
    let mut rng = ChaCha12Rng::seed_from_u64(noise.seed);
    let mut out = Vec::with_capacity(shots);
    let mut cluster = Vec::with_capacity(shots);
    let (base, extra) = (shots / trajectories, shots % trajectories);
    for t in 0..trajectories {
        let share = base + usize::from(t < extra);
        if share == 0 {
            continue;
        }
        let mut sv = StateVector::zero_state(n)?;
        for gate in circuit.gates() {
            sv.apply_gate(gate)?;
            if noise.p2 > 0.0 && gate.is_entangling() && rng.gen_bool(noise.p2) {
                apply_random_pauli(&mut sv, &gate.targets(), &mut rng)?;
            }
        }
        for mut mask in sv.sample_bits(&mut rng, share) {
            if has_readout {
                for (q, &(e01, e10)) in noise.readout.iter().enumerate() {
                    let p = if (mask >> q) & 1 == 0 { e01 } else { e10 };
                    if p > 0.0 && rng.gen_bool(p) {
                        mask ^= 1 << q;
                    }
                }
            }
            // without gate noise, trajectories are identical reruns and
            // every shot is independent
            cluster.push(if noise.p2 > 0.0 { t as u32 } else { out.len() as u32 });
            out.push(mask);
        }
    }
    Ok(ShotBatch { n_qubits: n, shots: out, cluster, conditioned: 0 })
}

/// Applies a uniformly chosen non-identity Pauli string to `targets`.
fn apply_random_pauli(
    sv: &mut StateVector,
    targets: &[usize],
    rng: &mut impl Rng,
) -> Result<()> {
    let i = C64::new(0.0, 1.0);
    let paulis: [[[C64; 2]; 2]; 3] = [
        [[C64::new(0.0, 0.0), C64::new(1.0, 0.0)], [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]],
        [[C64::new(0.0, 0.0), -i], [i, C64::new(0.0, 0.0)]],
        [[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(-1.0, 0.0)]],
    ];
    let mut code = rng.gen_range(1..4u64.pow(targets.len() as u32));
    for &q in targets {
        let digit = (code % 4) as usize;
        code /= 4;
        if digit > 0 {
            sv.apply_one_qubit_unitary(q, paulis[digit - 1])?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Dual-basis measurement circuits

/// Which commuting set the shot circuit diagonalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasurementSetting {
    /// Every qubit measured in the X basis: yields the gauge polarization,
    /// the matter polarization (as a site-plus-incident-links string), and
    /// the conservation-law bits.
    AllX,
    /// Links in the Z basis, matter still in X: yields the three-site
    /// interaction term per link plus the conservation-law bits.
    LinksZ,
}

/// Rotations preparing the product state of a family on `|0...0>`.
///
/// Each qubit gets `Rz(pi/2) Rx(-polar) Rz(azim - pi/2)`, a decomposition of
/// `Rz(azim) Ry(polar)` in the available gate set; all three are single-qubit
/// gates, so they stay noiseless under the entangling-gate error model.
pub fn product_prep_circuit(
    spec: &InitialStateSpec,
    g: &LatticeGraph,
    p: &TrotterParams,
) -> Result<Circuit> {
    let matter = matter_bloch(&spec.matter, g)?;
    let gauge = gauge_bloch(&spec.gauge, g, p)?;
    let bloch_of = |q: usize| {
        if q < g.n_matter() { matter[q] } else { gauge[q - g.n_matter()] }
    };
    let n = g.n_qubits(Frame::Lgt);
    let mut moments: [Vec<Gate>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for q in 0..n {
        let b = bloch_of(q);
        let polar = (b.x.hypot(b.y)).atan2(b.z);
        if polar.abs() < 1e-15 {
            continue;
        }
        let azim = b.y.atan2(b.x);
        moments[0].push(Gate::Rz { q, theta: PI / 2.0 });
        moments[1].push(Gate::Rx { q, theta: -polar });
        moments[2].push(Gate::Rz { q, theta: azim - PI / 2.0 });
    }
    let mut circuit = Circuit::new(n);
    for gates in moments {
        if !gates.is_empty() {
            circuit.push_moment(gates)?;
        }
    }
    Ok(circuit)
}

/// Complete shot circuit for one measurement setting: state preparation,
/// `cycles` Trotter cycles, the measurement basis change, and final Hadamards
/// so that every recorded bit is a Pauli eigenvalue (bit 0 <-> +1).
pub fn dual_basis_circuit(
    g: &LatticeGraph,
    p: &TrotterParams,
    order: TrotterOrder,
    spec: &InitialStateSpec,
    cycles: usize,
    setting: MeasurementSetting,
) -> Result<Circuit> {
    let mut circuit = product_prep_circuit(spec, g, p)?;
    if spec.applies_basis_change() {
        circuit.extend(&build_ub(g))?;
    }
    let cycle = build_trotter_cycle(g, p, order);
    for _ in 0..cycles {
        circuit.extend(&cycle)?;
    }
    circuit.extend(&build_ub(g))?;
    let mut rotations: Vec<Gate> =
        (0..g.n_matter()).map(|v| Gate::H { q: g.matter_qubit(v) }).collect();
    if setting == MeasurementSetting::AllX {
        rotations
            .extend((0..g.n_gauge()).map(|l| Gate::H { q: g.gauge_qubit(l, Frame::Lgt) }));
    }
    circuit.push_moment(rotations)?;
    Ok(circuit)
}

// ---------------------------------------------------------------------------
// Postselection

/// Which shots survive the conservation-law filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostselectMode {
    /// Keep only shots with every matter bit reading `+` (bit 0).
    Global,
    /// Keep shots with no violating matter bit within the given Manhattan
    /// distance (in device-grid units, where adjacent matter and link qubits
    /// are 1 apart) of the anchor entity.
    LocalRadius(i64),
    /// Keep everything.
    None,
}

impl PostselectMode {
    /// Local filtering at the standard radius of 7 device-grid steps.
    pub fn local_default() -> Self {
        PostselectMode::LocalRadius(7)
    }
}

/// Filters a dual-basis shot batch by its conservation-law bits, returning
/// the surviving shots and the yield (kept / total).
pub fn postselect(
    batch: &ShotBatch,
    g: &LatticeGraph,
    mode: PostselectMode,
    anchor: Option<Entity>,
) -> Result<(ShotBatch, f64)> {
    if batch.is_empty() {
        return Err(Error::Config("empty shot batch".into()));
    }
    if batch.n_qubits() != g.n_qubits(Frame::Lgt) {
        return Err(Error::Config("shot batch does not match the lattice register".into()));
    }
    let reject_mask = match mode {
        PostselectMode::None => 0usize,
        PostselectMode::Global => {
            (0..g.n_matter()).fold(0usize, |m, v| m | (1 << g.matter_qubit(v)))
        }
        PostselectMode::LocalRadius(r) => {
            let anchor = anchor.ok_or_else(|| {
                Error::Config("local postselection needs an anchor entity".into())
            })?;
            let mut mask = 0usize;
            for v in 0..g.n_matter() {
                if g.manhattan_doubled(Entity::Vertex(v), anchor)? <= r {
                    mask |= 1 << g.matter_qubit(v);
                }
            }
            mask
        }
    };
    let mut kept = Vec::new();
    let mut cluster = Vec::new();
    for (shot, id) in batch.shots.iter().zip(&batch.cluster) {
        if shot & reject_mask == 0 {
            kept.push(*shot);
            cluster.push(*id);
        }
    }
    let yield_fraction = kept.len() as f64 / batch.len() as f64;
    let filtered = ShotBatch {
        n_qubits: batch.n_qubits(),
        shots: kept,
        cluster,
        conditioned: batch.conditioned() | reject_mask,
    };
    Ok((filtered, yield_fraction))
}

/// One row of a yield curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldRecord {
    pub cycle: usize,
    pub mode: PostselectMode,
    pub anchor: Option<Entity>,
    pub yield_fraction: f64,
}

/// Writes yield curves as CSV with columns `cycle,mode,anchor,yield`.
pub fn write_yield_csv<W: std::io::Write>(w: W, records: &[YieldRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cycle", "mode", "anchor", "yield"])
        .map_err(crate::observables::csv_err)?;
    for r in records {
        let mode = match r.mode {
            PostselectMode::Global => "global".to_string(),
            PostselectMode::LocalRadius(radius) => format!("local_r{radius}"),
            PostselectMode::None => "none".to_string(),
        };
        let anchor = match r.anchor {
            Some(Entity::Vertex(v)) => format!("v{v}"),
            Some(Entity::Link(l)) => format!("l{l}"),
            None => "-".to_string(),
        };
        out.write_record([
            r.cycle.to_string(),
            mode,
            anchor,
            r.yield_fraction.to_string(),
        ])
        .map_err(crate::observables::csv_err)?;
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Depolarizing characterization

/// Fitted damping envelope `y(t) = exp[-t/a - (t/b)^2]`. Either timescale may
/// be infinite when the data shows no decay in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub a: f64,
    pub b: f64,
}

impl DecayFit {
    /// Envelope value `y(t)`; doubles as the rescale denominator `(1 - p)(t)`.
    pub fn factor(&self, t: f64) -> f64 {
        (-t / self.a - (t / self.b).powi(2)).exp()
    }
}

/// Result of characterizing one observable class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecayOutcome {
    /// Data indistinguishable from 1.0 at every point — nothing to rescale.
    NoDecay,
    /// Fitted envelope plus the relative rms misfit of the input points.
    Fit { fit: DecayFit, rms_residual: f64 },
}

impl DecayOutcome {
    pub fn factor(&self, t: f64) -> f64 {
        match self {
            DecayOutcome::NoDecay => 1.0,
            DecayOutcome::Fit { fit, .. } => fit.factor(t),
        }
    }
}

/// Least-squares fit of zero-dynamics reference data to the damping envelope.
///
/// `points` are `(cycle, normalized expectation)` pairs; at least 4 are
/// required. Constant-1.0 data returns [`DecayOutcome::NoDecay`]; data that
/// fails to decay in either order (both fitted rates would be negative) is
/// rejected, as are non-positive values the log-space fit cannot digest.
pub fn characterize_depolarizing(name: &str, points: &[(f64, f64)]) -> Result<DecayOutcome> {
    if points.len() < 4 {
        return Err(Error::Config(format!(
            "characterizing {name} needs >= 4 cycle points (got {})",
            points.len()
        )));
    }
    if points.iter().all(|&(_, y)| (y - 1.0).abs() <= 1e-9) {
        return Ok(DecayOutcome::NoDecay);
    }
    for &(t, y) in points {
        if y <= 0.0 {
            return Err(Error::Numerics(format!(
                "{name} reference value {y} at cycle {t} is not positive"
            )));
        }
    }
    // Linear least squares in u = 1/a, w = 1/b^2 on -ln y = u t + w t^2,
    // with nonnegative rates: try the free optimum and both single-term
    // fits, keep the feasible one with the smallest squared error.
    let (mut s_tt, mut s_t3, mut s_t4, mut s_tz, mut s_t2z) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(t, y) in points {
        let z = -y.ln();
        s_tt += t * t;
        s_t3 += t * t * t;
        s_t4 += t * t * t * t;
        s_tz += t * z;
        s_t2z += t * t * z;
    }
    let sse = |u: f64, w: f64| -> f64 {
        points.iter().map(|&(t, y)| (u * t + w * t * t + y.ln()).powi(2)).sum()
    };
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    let det = s_tt * s_t4 - s_t3 * s_t3;
    if det.abs() > 1e-12 {
        candidates.push(((s_tz * s_t4 - s_t2z * s_t3) / det, (s_tt * s_t2z - s_t3 * s_tz) / det));
    }
    if s_tt > 0.0 {
        candidates.push((s_tz / s_tt, 0.0));
    }
    if s_t4 > 0.0 {
        candidates.push((0.0, s_t2z / s_t4));
    }
    let best = candidates
        .into_iter()
        .filter(|&(u, w)| u >= 0.0 && w >= 0.0)
        .map(|(u, w)| (sse(u, w), u, w))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    let Some((_, u, w)) = best else {
        // Rising data within sampling jitter of 1.0 is a noiseless reference,
        // not a fit failure; genuinely growing signals are rejected.
        if points.iter().all(|&(_, y)| (y - 1.0).abs() <= 0.01) {
            return Ok(DecayOutcome::NoDecay);
        }
        return Err(Error::Numerics(format!("{name} reference data does not decay")));
    };
    let fit = DecayFit {
        a: if u > 1e-12 { 1.0 / u } else { f64::INFINITY },
        b: if w > 1e-12 { 1.0 / w.sqrt() } else { f64::INFINITY },
    };
    let rms_residual = (points
        .iter()
        .map(|&(t, y)| (fit.factor(t) / y - 1.0).powi(2))
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();
    Ok(DecayOutcome::Fit { fit, rms_residual })
}

/// Divides a value and its standard error by the damping factor at time `t`.
pub fn rescale(value: f64, se: f64, decay: &DecayOutcome, t: f64) -> Result<(f64, f64)> {
    let factor = decay.factor(t);
    if factor < 1e-6 {
        return Err(Error::Numerics(format!(
            "damping factor {factor} at cycle {t} is too small to rescale"
        )));
    }
    Ok((value / factor, se / factor))
}

// ---------------------------------------------------------------------------
// Shot-based observable estimation

/// A value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Site observables estimated from dual-basis shots, with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedSites {
    pub matter_pol: Vec<Estimate>,
    pub gauge_pol: Vec<Estimate>,
    pub interaction: Vec<Estimate>,
    pub gauss: Vec<Estimate>,
}

impl EstimatedSites {
    /// Central values only, for reuse with exact-state consumers.
    pub fn values(&self) -> SiteObservables {
        let take = |v: &[Estimate]| v.iter().map(|e| e.value).collect();
        SiteObservables {
            matter_pol: take(&self.matter_pol),
            gauge_pol: take(&self.gauge_pol),
            interaction: take(&self.interaction),
            gauss: take(&self.gauss),
        }
    }
}

/// Estimates every site observable from one all-X and one links-Z batch,
/// applying readout inversion through the confusion matrix. Pass
/// [`ConfusionMatrix::identity`] to skip the correction.
pub fn estimate_observables(
    all_x: &ShotBatch,
    links_z: &ShotBatch,
    g: &LatticeGraph,
    conf: &ConfusionMatrix,
) -> Result<EstimatedSites> {
    let n = g.n_qubits(Frame::Lgt);
    if all_x.n_qubits() != n || links_z.n_qubits() != n {
        return Err(Error::Config("shot batches do not match the lattice register".into()));
    }
    let est = |pair: (f64, f64)| Estimate { value: pair.0, se: pair.1 };
    let gauge_pol = (0..g.n_gauge())
        .map(|l| corrected_parity(all_x, &[g.gauge_qubit(l, Frame::Lgt)], conf).map(est))
        .collect::<Result<Vec<_>>>()?;
    let gauss = (0..g.n_matter())
        .map(|v| corrected_parity(all_x, &[g.matter_qubit(v)], conf).map(est))
        .collect::<Result<Vec<_>>>()?;
    let matter_pol = (0..g.n_matter())
        .map(|v| {
            let mut qubits = vec![g.matter_qubit(v)];
            qubits.extend(g.incident(v).iter().map(|&(l, _)| g.gauge_qubit(l, Frame::Lgt)));
            corrected_parity(all_x, &qubits, conf).map(est)
        })
        .collect::<Result<Vec<_>>>()?;
    let interaction = (0..g.n_gauge())
        .map(|l| corrected_parity(links_z, &[g.gauge_qubit(l, Frame::Lgt)], conf).map(est))
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimatedSites { matter_pol, gauge_pol, interaction, gauss })
}

// ---------------------------------------------------------------------------
// End-to-end mitigation pipeline

/// Observable classes that get their own damping characterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservableClass {
    GaugePol,
    MatterPol,
    Interaction,
}

/// Matched-filter signal of one class: the least-squares scalar `y` with
/// `estimate ~ y * ideal` across entities, i.e. `sum(e*i) / sum(i*i)`. Equal
/// to 1 for noiseless data and to the common damping factor under uniform
/// depolarizing noise, including sign flips in the ideal pattern.
pub fn class_signal(
    est: &EstimatedSites,
    ideal: &SiteObservables,
    class: ObservableClass,
) -> Result<f64> {
    let (values, reference): (Vec<f64>, &[f64]) = match class {
        ObservableClass::GaugePol => {
            (est.gauge_pol.iter().map(|e| e.value).collect(), &ideal.gauge_pol)
        }
        ObservableClass::MatterPol => {
            (est.matter_pol.iter().map(|e| e.value).collect(), &ideal.matter_pol)
        }
        ObservableClass::Interaction => {
            (est.interaction.iter().map(|e| e.value).collect(), &ideal.interaction)
        }
    };
    let denom: f64 = reference.iter().map(|i| i * i).sum();
    if denom < 1e-12 {
        return Err(Error::Numerics(
            "ideal reference pattern is zero; class signal undefined".into(),
        ));
    }
    Ok(values.iter().zip(reference).map(|(e, i)| e * i).sum::<f64>() / denom)
}

/// Full mitigated run: per-cycle per-link energies with uncertainties, the
/// matching unmitigated values, yield curves, and the damping fits used.
#[derive(Debug, Clone)]
pub struct MitigatedRun {
    pub cycles: Vec<usize>,
    /// Postselected, readout-inverted, rescaled energies.
    pub mitigated: Vec<EnergyProfile>,
    /// Combined standard error per cycle per link.
    pub sigma: Vec<Vec<f64>>,
    /// Raw energies from the same shots (no postselection, inversion, or
    /// rescale), for before/after comparisons.
    pub raw: Vec<EnergyProfile>,
    pub yields: Vec<YieldRecord>,
    pub gauge_decay: DecayOutcome,
    pub matter_decay: DecayOutcome,
    pub interaction_decay: DecayOutcome,
}

/// Runs the complete measure-and-mitigate pipeline on a state family.
///
/// Two phases, each covering cycles `0..=max_cycle` in both measurement
/// settings, every run on its own derived random stream:
///
/// 1. **Characterization** at zero Trotter angle (`dt = 0`): the circuit
///    keeps its entangling-gate structure but generates no dynamics, so the
///    postselected, readout-inverted class signals trace out the residual
///    stochastic-Pauli damping, normalized by the family's ideal initial
///    values. Each class is fitted to the damping envelope. A superposition
///    matter pattern starts at zero polarization and cannot be
///    self-characterized, so its matter class borrows the factors of the
///    corresponding definite-sector family.
/// 2. **Dynamics** at the real parameters: shots are postselected, every
///    entity is readout-inverted, class factors are divided out, and the
///    per-link energies assembled. Standard errors combine the independent
///    shot-noise components of each energy term. The conservation-law
///    expectation itself is reported uncorrected for damping (it only enters
///    the energy through the charge coupling `q`, zero in standard runs).
pub fn mitigated_energy_run(
    g: &LatticeGraph,
    p: &TrotterParams,
    order: TrotterOrder,
    spec: &InitialStateSpec,
    max_cycle: usize,
    noise: &NoiseModel,
    shots: usize,
    trajectories: usize,
    mode: PostselectMode,
    anchor: Option<Entity>,
) -> Result<MitigatedRun> {
    if max_cycle < 3 {
        return Err(Error::Config(
            "pipeline needs max_cycle >= 3 so the characterization fit has >= 4 points".into(),
        ));
    }
    let conf = ConfusionMatrix::from_noise(noise);
    let ideal0 = measure_lgt(&prepare_lgt_state(spec, g, p)?, g)?;

    // Phase tags keep every run_noisy call on its own random stream.
    let run = |phase: u64,
               params: &TrotterParams,
               family: &InitialStateSpec,
               cycle: usize,
               setting: MeasurementSetting|
     -> Result<ShotBatch> {
        let circuit = dual_basis_circuit(g, params, order, family, cycle, setting)?;
        let tag = (phase << 32) | ((cycle as u64) << 1) | u64::from(setting == MeasurementSetting::LinksZ);
        run_noisy(&circuit, &noise.with_seed(derive_stream(noise.seed, tag)), shots, trajectories)
    };

    // --- characterization at dt = 0 -----------------------------------------
    let p0 = TrotterParams { dt: 0.0, ..*p };
    let mut gauge_points = Vec::new();
    let mut matter_points = Vec::new();
    let mut interaction_points = Vec::new();
    // A zero-matter-polarization family borrows a definite-sector stand-in.
    let matter_family = match spec.matter {
        MatterPattern::AllPlusZ => {
            Some(InitialStateSpec { matter: MatterPattern::AllPlusX, ..spec.clone() })
        }
        _ => None,
    };
    let matter_ideal0 = match &matter_family {
        Some(family) => measure_lgt(&prepare_lgt_state(family, g, p)?, g)?,
        None => ideal0.clone(),
    };
    for cycle in 0..=max_cycle {
        let all_x = run(0, &p0, spec, cycle, MeasurementSetting::AllX)?;
        let links_z = run(0, &p0, spec, cycle, MeasurementSetting::LinksZ)?;
        let (all_x, _) = postselect(&all_x, g, mode, anchor)?;
        let (links_z, _) = postselect(&links_z, g, mode, anchor)?;
        let est = estimate_observables(&all_x, &links_z, g, &conf)?;
        let t = cycle as f64;
        gauge_points.push((t, class_signal(&est, &ideal0, ObservableClass::GaugePol)?));
        interaction_points.push((t, class_signal(&est, &ideal0, ObservableClass::Interaction)?));
        match &matter_family {
            None => {
                matter_points.push((t, class_signal(&est, &ideal0, ObservableClass::MatterPol)?))
            }
            Some(family) => {
                let all_x = run(1, &p0, family, cycle, MeasurementSetting::AllX)?;
                let links_z = run(1, &p0, family, cycle, MeasurementSetting::LinksZ)?;
                let (all_x, _) = postselect(&all_x, g, mode, anchor)?;
                let (links_z, _) = postselect(&links_z, g, mode, anchor)?;
                let stand_in = estimate_observables(&all_x, &links_z, g, &conf)?;
                matter_points.push((
                    t,
                    class_signal(&stand_in, &matter_ideal0, ObservableClass::MatterPol)?,
                ));
            }
        }
    }
    let gauge_decay = characterize_depolarizing("gauge polarization", &gauge_points)?;
    let matter_decay = characterize_depolarizing("matter polarization", &matter_points)?;
    let interaction_decay = characterize_depolarizing("interaction", &interaction_points)?;

    // --- dynamics ------------------------------------------------------------
    let mut cycles = Vec::new();
    let mut mitigated = Vec::new();
    let mut sigma = Vec::new();
    let mut raw = Vec::new();
    let mut yields = Vec::new();
    let identity = ConfusionMatrix::identity(g.n_qubits(Frame::Lgt));
    for cycle in 0..=max_cycle {
        let all_x = run(2, p, spec, cycle, MeasurementSetting::AllX)?;
        let links_z = run(2, p, spec, cycle, MeasurementSetting::LinksZ)?;
        let raw_est = estimate_observables(&all_x, &links_z, g, &identity)?;
        raw.push(energy_per_link(g, p, &raw_est.values(), cycle as f64)?);
        let (all_x, yield_fraction) = postselect(&all_x, g, mode, anchor)?;
        let (links_z, _) = postselect(&links_z, g, mode, anchor)?;
        yields.push(YieldRecord { cycle, mode, anchor, yield_fraction });
        let est = estimate_observables(&all_x, &links_z, g, &conf)?;
        let t = cycle as f64;
        let fix = |e: &Estimate, decay: &DecayOutcome| -> Result<Estimate> {
            let (value, se) = rescale(e.value, e.se, decay, t)?;
            Ok(Estimate { value, se })
        };
        let corrected = EstimatedSites {
            matter_pol: est
                .matter_pol
                .iter()
                .map(|e| fix(e, &matter_decay))
                .collect::<Result<Vec<_>>>()?,
            gauge_pol: est
                .gauge_pol
                .iter()
                .map(|e| fix(e, &gauge_decay))
                .collect::<Result<Vec<_>>>()?,
            interaction: est
                .interaction
                .iter()
                .map(|e| fix(e, &interaction_decay))
                .collect::<Result<Vec<_>>>()?,
            gauss: est.gauss.clone(),
        };
        mitigated.push(energy_per_link(g, p, &corrected.values(), t)?);
        let link_sigma = g
            .links()
            .iter()
            .enumerate()
            .map(|(l, link)| {
                let (da, db) = (g.degree(link.a) as f64, g.degree(link.b) as f64);
                ((p.j * corrected.interaction[l].se).powi(2)
                    + (p.h * corrected.gauge_pol[l].se).powi(2)
                    + (p.mu / da * corrected.matter_pol[link.a].se).powi(2)
                    + (p.mu / db * corrected.matter_pol[link.b].se).powi(2)
                    + (p.q / da * corrected.gauss[link.a].se).powi(2)
                    + (p.q / db * corrected.gauss[link.b].se).powi(2))
                .sqrt()
            })
            .collect();
        sigma.push(link_sigma);
        cycles.push(cycle);
    }
    Ok(MitigatedRun {
        cycles,
        mitigated,
        sigma,
        raw,
        yields,
        gauge_decay,
        matter_decay,
        interaction_decay,
    })
}

// ---------------------------------------------------------------------------
