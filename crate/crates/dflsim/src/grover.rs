//! Grover-style reflection operators whose eigenphases encode sector-averaged
//! observables, plus textbook phase estimation and shot-cost comparisons.
//!
//! A circuit `U` prepared over a superposition of conserved charge sectors
//! hides an ensemble average inside one amplitude: for a single-qubit Pauli
//! `O` that commutes with every conservation law, `<0|U' O U|0>` equals the
//! weighted average of `<O>` over the sectors (`U'` is the adjoint). Reading
//! that amplitude by direct sampling costs `O(1/eps^2)` shots. The composite
//!
//! ```text
//! Gamma = U (1 - 2|0><0|) U' O
//! ```
//!
//! turns the amplitude into a *phase*: on the plane spanned by `U|0>` and
//! `O U|0>`, `Gamma` rotates with eigenvalues `exp(+-i lambda)` where
//! `cos lambda = -<0|U' O U|0>`. Phase estimation with `m` ancillas then
//! pins `lambda` to resolution `pi * 2^-m` using `2^m - 1` applications of
//! `Gamma`, i.e. `O(1/eps)` uses of the dynamics instead of `O(1/eps^2)`
//! repetitions — each experiment still ends in a single measurement of the
//! ancilla register.
//!
//! Everything here is dense and deliberately small: `Gamma` is materialized
//! as a matrix (system registers up to 10 qubits), and the phase-estimation
//! ladder is simulated block-by-block over ancilla basis states (up to 8
//! ancillas, 18 qubits total). [`cost_compare`] measures the crossover
//! empirically: minimal naive shot counts for a target accuracy versus the
//! deterministic application count of phase estimation.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, TrotterOrder, TrotterParams, build_trotter_cycle, build_ub, circuit_unitary};
use crate::dualsim::{build_dual_cycle, dual_product_state};
use crate::lattice::{Frame, LatticeGraph};
use crate::noise::{derive_stream, product_prep_circuit};
use crate::observables::{ChargeSector, InitialStateSpec, gauge_bloch, measure_dual_frame};
use crate::statevector::StateVector;
use crate::{C64, Error, Result};

/// Dense `Gamma` matrices are capped at this many system qubits.
pub const MAX_SYSTEM_QUBITS: usize = 10;
/// Phase-estimation ancilla registers are capped at this size.
pub const MAX_ANCILLAS: usize = 8;
/// Combined register cap for a phase-estimation run.
pub const MAX_TOTAL_QUBITS: usize = 18;

// ---------------------------------------------------------------------------
// Pauli observables

/// Axis of a single-qubit Pauli operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PauliAxis {
    X,
    Y,
    Z,
}

/// A single-qubit Pauli observable: one axis acting on one register qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PauliTerm {
    pub axis: PauliAxis,
    pub qubit: usize,
}

impl PauliTerm {
    pub fn new(axis: PauliAxis, qubit: usize) -> Self {
        Self { axis, qubit }
    }

    /// Parses labels of the form `"X0"`, `"Y3"`, `"Z12"`. Anything that is
    /// not a single-qubit Pauli is rejected.
    pub fn parse(label: &str) -> Result<Self> {
        let mut chars = label.chars();
        let axis = match chars.next() {
            Some('X') => PauliAxis::X,
            Some('Y') => PauliAxis::Y,
            Some('Z') => PauliAxis::Z,
            _ => {
                return Err(Error::Config(format!(
                    "observable `{label}` is not a single-qubit Pauli (expected X/Y/Z + qubit index)"
                )));
            }
        };
        let qubit = chars
            .as_str()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("bad qubit index in observable `{label}`")))?;
        Ok(Self { axis, qubit })
    }

    /// Maps basis state `|c>` to `phase * |c ^ flip>`.
    fn column_action(&self, c: usize) -> (usize, C64) {
        let bit = c >> self.qubit & 1;
        match self.axis {
            PauliAxis::X => (c ^ (1 << self.qubit), C64::new(1.0, 0.0)),
            PauliAxis::Y => {
                let sign = if bit == 0 { 1.0 } else { -1.0 };
                (c ^ (1 << self.qubit), C64::new(0.0, sign))
            }
            PauliAxis::Z => (c, C64::new(if bit == 0 { 1.0 } else { -1.0 }, 0.0)),
        }
    }

    /// Applies the Pauli to a dense amplitude vector.
    fn apply(&self, amps: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); amps.len()];
        for (c, &a) in amps.iter().enumerate() {
            let (dst, phase) = self.column_action(c);
            out[dst] = phase * a;
        }
        out
    }

    /// Dense matrix on an `n`-qubit register.
    pub fn dense(&self, n_qubits: usize) -> Result<Array2<C64>> {
        if self.qubit >= n_qubits {
            return Err(Error::Config(format!(
                "observable qubit {} outside a {n_qubits}-qubit register",
                self.qubit
            )));
        }
        let dim = 1usize << n_qubits;
        let mut m = Array2::zeros((dim, dim));
        for c in 0..dim {
            let (dst, phase) = self.column_action(c);
            m[(dst, c)] = phase;
        }
        Ok(m)
    }
}

// ---------------------------------------------------------------------------
// The reflection composite

/// Dense `Gamma = U (1 - 2|0><0|) U' O` together with the phase `lambda`
/// of its rotation plane, `cos lambda = -<0|U' O U|0>`.
#[derive(Debug, Clone)]
pub struct GammaOperator {
    matrix: Array2<C64>,
    n_qubits: usize,
    expectation: f64,
    lambda: f64,
}

impl GammaOperator {
    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// The amplitude the eigenphase encodes: `<0|U' O U|0>`.
    pub fn expectation(&self) -> f64 {
        self.expectation
    }

    /// Rotation phase in `[0, pi]`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Both eigenphases of the rotation plane.
    pub fn eigenphases(&self) -> (f64, f64) {
        (self.lambda, -self.lambda)
    }

    /// Applies `Gamma` to a dense amplitude vector.
    pub fn apply(&self, amps: &[C64]) -> Vec<C64> {
        let v = Array1::from_iter(amps.iter().copied());
        self.matrix.dot(&v).to_vec()
    }
}

/// Reflection about the circuit's image of the all-zeros state:
/// `U (1 - 2|0><0|) U' = 1 - 2 |a><a|` with `|a> = U|0>`.
pub fn reflected_propagator(u: &Circuit) -> Result<Array2<C64>> {
    if u.n_qubits() > MAX_SYSTEM_QUBITS {
        return Err(Error::Capacity(format!(
            "dense reflection capped at {MAX_SYSTEM_QUBITS} qubits (requested {})",
            u.n_qubits()
        )));
    }
    let mut anchor = StateVector::zero_state(u.n_qubits())?;
    anchor.apply_circuit(u)?;
    let a = anchor.amplitudes();
    let dim = a.len();
    let mut r = Array2::zeros((dim, dim));
    for i in 0..dim {
        for j in 0..dim {
            let outer = 2.0 * a[i] * a[j].conj();
            r[(i, j)] = if i == j { C64::new(1.0, 0.0) - outer } else { -outer };
        }
    }
    Ok(r)
}

/// Builds the dense reflection composite for a system circuit and a
/// single-qubit Pauli, and certifies its rotation plane.
///
/// Post-condition (checked to 1e-9): with `a = U|0>` and `b = O U|0>`,
/// `Gamma a = b - 2<a|b> a` and `Gamma b = -a`, so the restriction of
/// `Gamma` to `span{a, b}` has eigenvalues `exp(+-i lambda)` with
/// `cos lambda = -<a|b>`.
pub fn build_gamma(u: &Circuit, observable: &PauliTerm) -> Result<GammaOperator> {
    let n = u.n_qubits();
    if n > MAX_SYSTEM_QUBITS {
        return Err(Error::Capacity(format!(
            "dense Gamma capped at {MAX_SYSTEM_QUBITS} system qubits (requested {n})"
        )));
    }
    if observable.qubit >= n {
        return Err(Error::Config(format!(
            "observable qubit {} outside the {n}-qubit system register",
            observable.qubit
        )));
    }
    let umat = circuit_unitary(u)?;
    let dim = 1usize << n;

    // (U' O)[:, c] is a phase times a column of U'; build it by permuting
    // conjugated rows of U, then negate row 0 for the reflection and apply
    // U from the left.
    let mut inner = Array2::zeros((dim, dim));
    for c in 0..dim {
        let (src, phase) = observable.column_action(c);
        for r in 0..dim {
            inner[(r, c)] = phase * umat[(src, r)].conj();
        }
    }
    for v in inner.row_mut(0).iter_mut() {
        *v = -*v;
    }
    let matrix = umat.dot(&inner);

    // Certify the rotation plane directly on the two spanning vectors.
    let a: Vec<C64> = (0..dim).map(|r| umat[(r, 0)]).collect();
    let b = observable.apply(&a);
    let overlap: C64 = a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum();
    if overlap.im.abs() > 1e-10 {
        return Err(Error::Numerics(format!(
            "Pauli expectation has imaginary part {:.2e}",
            overlap.im
        )));
    }
    let e = overlap.re;
    let ga = {
        let v = Array1::from_iter(a.iter().copied());
        matrix.dot(&v)
    };
    let gb = {
        let v = Array1::from_iter(b.iter().copied());
        matrix.dot(&v)
    };
    let mut worst: f64 = 0.0;
    for i in 0..dim {
        worst = worst.max((ga[i] - (b[i] - 2.0 * e * a[i])).norm());
        worst = worst.max((gb[i] + a[i]).norm());
    }
    if worst > 1e-9 {
        return Err(Error::Numerics(format!(
            "reflection composite violates its rotation-plane identity by {worst:.2e}"
        )));
    }
    let lambda = (-e).clamp(-1.0, 1.0).acos();
    Ok(GammaOperator { matrix, n_qubits: n, expectation: e, lambda })
}

// ---------------------------------------------------------------------------
// Phase estimation

/// Inputs of one phase-estimation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseEstimationConfig {
    /// Ancilla count; the phase grid has `2^m` points.
    pub m: usize,
    /// System circuit `U` (also prepares the probed state `U|0>`).
    pub system: Circuit,
    /// Single-qubit Pauli whose sector average the phase encodes.
    pub observable: PauliTerm,
    /// Ancilla-register measurements to draw.
    pub shots: usize,
}

impl PhaseEstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("phase estimation needs at least one ancilla".into()));
        }
        if self.m > MAX_ANCILLAS {
            return Err(Error::Capacity(format!(
                "ancilla register capped at {MAX_ANCILLAS} qubits (requested {})",
                self.m
            )));
        }
        let n = self.system.n_qubits();
        if n > MAX_SYSTEM_QUBITS {
            return Err(Error::Capacity(format!(
                "dense Gamma capped at {MAX_SYSTEM_QUBITS} system qubits (requested {n})"
            )));
        }
        if self.m + n > MAX_TOTAL_QUBITS {
            return Err(Error::Capacity(format!(
                "phase estimation register capped at {MAX_TOTAL_QUBITS} qubits total (requested {})",
                self.m + n
            )));
        }
        if self.shots == 0 {
            return Err(Error::Config("phase estimation needs at least one shot".into()));
        }
        if self.observable.qubit >= n {
            return Err(Error::Config(format!(
                "observable qubit {} outside the {n}-qubit system register",
                self.observable.qubit
            )));
        }
        Ok(())
    }
}

/// Outcome of one phase-estimation run.
#[derive(Debug, Clone)]
pub struct PhaseEstimateRun {
    /// Ancilla count used.
    pub m: usize,
    /// Exact outcome distribution over ancilla values `k = 0..2^m`.
    pub distribution: Vec<f64>,
    /// Sampled ancilla outcomes (one per shot).
    pub samples: Vec<usize>,
    /// Most frequent sampled outcome after folding `k` and `2^m - k`
    /// (both encode the same phase magnitude).
    pub mode_k: usize,
    /// `-cos(2 pi mode_k / 2^m)`: the estimate of `<0|U' O U|0>`.
    pub estimate: f64,
    /// Phase candidates `(+lambda, -lambda)` at the modal grid point.
    pub lambda: (f64, f64),
    /// Half grid spacing `pi * 2^-m`: the worst-case rounding error in
    /// `lambda` for an outcome on the nearest grid point.
    pub resolution: f64,
    /// Applications of `Gamma` performed by the controlled ladder,
    /// always `2^m - 1`.
    pub gamma_applications: usize,
}

impl PhaseEstimateRun {
    /// Deterministic maximum-a-posteriori readout: the folded grid point
    /// carrying the most exact probability mass, with its estimate.
    pub fn map_estimate(&self) -> (usize, f64) {
        let k = folded_argmax(&self.distribution);
        (k, grid_estimate(k, self.m))
    }
}

fn grid_estimate(k: usize, m: usize) -> f64 {
    -(2.0 * PI * k as f64 / (1usize << m) as f64).cos()
}

/// Pools the mass at `k` and `2^m - k` and returns the best `k <= 2^m / 2`.
fn folded_argmax(distribution: &[f64]) -> usize {
    let mm = distribution.len();
    let mut best = 0usize;
    let mut best_mass = f64::NEG_INFINITY;
    for k in 0..=mm / 2 {
        let mirror = (mm - k) % mm;
        let mass = if mirror == k {
            distribution[k]
        } else {
            distribution[k] + distribution[mirror]
        };
        if mass > best_mass + 1e-15 {
            best_mass = mass;
            best = k;
        }
    }
    best
}

/// Runs textbook phase estimation of `Gamma` on the state `U|0>`.
///
/// The register holds `m` ancillas plus the system. Conceptually: Hadamards
/// on the ancillas, ancilla `j` controls `Gamma^(2^j)`, inverse Fourier
/// transform on the ancillas, measure. The simulation exploits the ladder's
/// structure — after the controlled powers the state is
/// `2^{-m/2} sum_k |k> Gamma^k U|0>` — so it advances one system block per
/// grid point (`2^m - 1` applications of `Gamma`, asserted) and Fourier
/// transforms across the block index to obtain the exact outcome
/// distribution, then samples it.
pub fn phase_estimate(cfg: &PhaseEstimationConfig, seed: u64) -> Result<PhaseEstimateRun> {
    cfg.validate()?;
    let gamma = build_gamma(&cfg.system, &cfg.observable)?;
    let mm = 1usize << cfg.m;

    let mut prepared = StateVector::zero_state(cfg.system.n_qubits())?;
    prepared.apply_circuit(&cfg.system)?;
    let mut blocks: Vec<Vec<C64>> = Vec::with_capacity(mm);
    blocks.push(prepared.amplitudes().to_vec());
    let mut applications = 0usize;
    for _ in 1..mm {
        let next = gamma.apply(blocks.last().expect("nonempty"));
        applications += 1;
        blocks.push(next);
    }
    assert_eq!(applications, mm - 1, "controlled ladder must apply Gamma 2^m - 1 times");

    // P(j) = | 2^-m sum_k exp(-2 pi i j k / 2^m) Gamma^k U|0> |^2, summed
    // over system indices: a forward FFT along the block index.
    let dim = blocks[0].len();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(mm);
    let mut distribution = vec![0.0; mm];
    let mut buf = vec![C64::new(0.0, 0.0); mm];
    for s in 0..dim {
        for (k, block) in blocks.iter().enumerate() {
            buf[k] = block[s];
        }
        fft.process(&mut buf);
        for (j, amp) in buf.iter().enumerate() {
            distribution[j] += amp.norm_sqr();
        }
    }
    let scale = 1.0 / (mm as f64 * mm as f64);
    for p in &mut distribution {
        *p *= scale;
    }
    let total: f64 = distribution.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Numerics(format!(
            "phase-estimation distribution sums to {total}, expected 1"
        )));
    }
    for p in &mut distribution {
        *p /= total;
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut cdf = Vec::with_capacity(mm);
    let mut acc = 0.0;
    for &p in &distribution {
        acc += p;
        cdf.push(acc);
    }
    let samples: Vec<usize> = (0..cfg.shots)
        .map(|_| {
            let r: f64 = rng.gen();
            cdf.partition_point(|&c| c < r).min(mm - 1)
        })
        .collect();

    let mut tally = vec![0usize; mm / 2 + 1];
    for &k in &samples {
        tally[k.min(mm - k)] += 1;
    }
    let mode_k = tally
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k)
        .expect("nonempty tally");

    let estimate = grid_estimate(mode_k, cfg.m);
    let lam = 2.0 * PI * mode_k as f64 / mm as f64;
    Ok(PhaseEstimateRun {
        m: cfg.m,
        distribution,
        samples,
        mode_k,
        estimate,
        lambda: (lam, -lam),
        resolution: PI / mm as f64,
        gamma_applications: applications,
    })
}

// ---------------------------------------------------------------------------
// Cost comparison

/// A brute-forceable instance for the shot-cost comparison: the system
/// circuit with its Pauli observable, plus the exact sector decomposition
/// `(weight, <O> in sector)` that a naive per-experiment sampler draws from.
#[derive(Debug, Clone)]
pub struct CostInstance {
    pub system: Circuit,
    pub observable: PauliTerm,
    pub sectors: Vec<(f64, f64)>,
}

impl CostInstance {
    /// The sector-weighted average the estimators target.
    pub fn ensemble_average(&self) -> f64 {
        self.sectors.iter().map(|&(w, v)| w * v).sum()
    }

    /// Checks the table is a probability-weighted list of expectations and
    /// that it reproduces the dense amplitude `<0|U' O U|0>`: the identity
    /// that makes sector enumeration and phase readout interchangeable.
    pub fn validate(&self) -> Result<()> {
        if self.sectors.is_empty() {
            return Err(Error::Config("cost instance needs at least one sector".into()));
        }
        let mut total = 0.0;
        for &(w, v) in &self.sectors {
            if !(w > 0.0) {
                return Err(Error::Config("sector weights must be positive".into()));
            }
            if v.abs() > 1.0 + 1e-12 {
                return Err(Error::Config("sector expectations must lie in [-1, 1]".into()));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("sector weights sum to {total}, expected 1")));
        }
        let gamma = build_gamma(&self.system, &self.observable)?;
        let gap = (gamma.expectation() - self.ensemble_average()).abs();
        if gap > 1e-9 {
            return Err(Error::Config(format!(
                "sector table misses the dense expectation by {gap:.2e}"
            )));
        }
        Ok(())
    }

    /// Builds the canonical instance: a superposition-quench state evolved
    /// for a number of cycles, probed with an `X` observable (the single-qubit
    /// Paulis that commute with every conservation check). The sector table
    /// is enumerated exactly in the dual frame.
    pub fn from_uniform_quench(
        g: &LatticeGraph,
        p: &TrotterParams,
        order: TrotterOrder,
        cycles: usize,
        observable: PauliTerm,
    ) -> Result<Self> {
        if observable.axis != PauliAxis::X {
            return Err(Error::Config(
                "only X observables commute with the conservation checks; \
                 pick an X on a matter or gauge qubit"
                    .into(),
            ));
        }
        if observable.qubit >= g.n_qubits(Frame::Lgt) {
            return Err(Error::Config(format!(
                "observable qubit {} outside the {}-qubit register",
                observable.qubit,
                g.n_qubits(Frame::Lgt)
            )));
        }
        if g.n_matter() > 12 {
            return Err(Error::Capacity(format!(
                "sector enumeration capped at 12 matter sites (requested {})",
                g.n_matter()
            )));
        }

        let spec = InitialStateSpec::superposition_quench(vec![]);
        let mut system = product_prep_circuit(&spec, g, p)?;
        system.extend(&build_ub(g))?;
        let cycle = build_trotter_cycle(g, p, order);
        for _ in 0..cycles {
            system.extend(&cycle)?;
        }

        let gauge_init = gauge_bloch(&spec.gauge, g, p)?;
        let weight = 1.0 / (1usize << g.n_matter()) as f64;
        let mut sectors = Vec::with_capacity(1 << g.n_matter());
        for index in 0..1usize << g.n_matter() {
            let sector = ChargeSector::from_index(g.n_matter(), index);
            let cycle_circuit = build_dual_cycle(g, p, &sector, order)?;
            let mut sv = dual_product_state(g, &gauge_init)?;
            for _ in 0..cycles {
                sv.apply_circuit(&cycle_circuit)?;
            }
            let obs = measure_dual_frame(&sv, g, &sector)?;
            let value = if observable.qubit < g.n_matter() {
                obs.matter_pol[observable.qubit]
            } else {
                obs.gauge_pol[observable.qubit - g.n_matter()]
            };
            sectors.push((weight, value));
        }
        Ok(Self { system, observable, sectors })
    }
}

/// One row of the cost table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    /// Target accuracy.
    pub epsilon: f64,
    /// Smallest naive shot count whose 95th-percentile error meets the target.
    pub naive_shots: usize,
    /// `Gamma` applications of the phase-estimation run at `m = ceil(log2(1/eps))`.
    pub pe_applications: usize,
    /// Error of the deterministic phase-estimation readout on this instance.
    pub achieved_error: f64,
}

const NAIVE_REPS: usize = 400;
const NAIVE_SHOT_CAP: usize = 1 << 22;

/// 95th-percentile absolute error of the naive estimator at `shots` samples,
/// measured over `NAIVE_REPS` repetitions. One "shot" is one full experiment:
/// draw a sector, apply the dynamics once, measure the Pauli once (+-1).
fn naive_quantile_error(
    sectors: &[(f64, f64)],
    truth: f64,
    shots: usize,
    rng: &mut ChaCha12Rng,
) -> f64 {
    let mut cdf = Vec::with_capacity(sectors.len());
    let mut acc = 0.0;
    for &(w, _) in sectors {
        acc += w;
        cdf.push(acc);
    }
    let mut errors: Vec<f64> = (0..NAIVE_REPS)
        .map(|_| {
            let mut sum = 0.0;
            for _ in 0..shots {
                let r: f64 = rng.gen();
                let idx = cdf.partition_point(|&c| c < r).min(sectors.len() - 1);
                let p_up = 0.5 * (1.0 + sectors[idx].1);
                sum += if rng.gen::<f64>() < p_up { 1.0 } else { -1.0 };
            }
            (sum / shots as f64 - truth).abs()
        })
        .collect();
    errors.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    errors[(NAIVE_REPS * 95).div_ceil(100) - 1]
}

/// Doubling search plus quarter-octave refinement for the smallest shot
/// count meeting the target, treating the quantile as monotone in `shots`.
fn naive_shots_for(
    sectors: &[(f64, f64)],
    truth: f64,
    eps: f64,
    rng: &mut ChaCha12Rng,
) -> Result<usize> {
    let mut shots = 2usize;
    while naive_quantile_error(sectors, truth, shots, rng) > eps {
        shots *= 2;
        if shots > NAIVE_SHOT_CAP {
            return Err(Error::Numerics(format!(
                "naive sampler still misses eps = {eps} at {NAIVE_SHOT_CAP} shots"
            )));
        }
    }
    if shots == 2 {
        return Ok(shots);
    }
    let lo = shots / 2;
    for quarter in 1..4 {
        let cand = (lo as f64 * 2f64.powf(quarter as f64 / 4.0)).round() as usize;
        if naive_quantile_error(sectors, truth, cand, rng) <= eps {
            return Ok(cand);
        }
    }
    Ok(shots)
}

/// Measures both estimators on one instance across target accuracies.
///
/// For each `eps`: the naive column reports the smallest per-experiment shot
/// count whose 95th-percentile error is within `eps` (empirical doubling
/// search); the phase-estimation column reports the `Gamma` application
/// count `2^m - 1` at `m = ceil(log2(1/eps))`, together with the error its
/// deterministic readout actually achieves. Nothing is asserted here — the
/// scaling claims live in the tests reading the table.
pub fn cost_compare(instance: &CostInstance, eps_list: &[f64], seed: u64) -> Result<Vec<CostRow>> {
    instance.validate()?;
    if eps_list.is_empty() {
        return Err(Error::Config("cost comparison needs at least one accuracy target".into()));
    }
    let truth = instance.ensemble_average();
    let mut rows = Vec::with_capacity(eps_list.len());
    for (i, &eps) in eps_list.iter().enumerate() {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Config(format!("accuracy target {eps} outside (0, 1)")));
        }
        let m = ((1.0 / eps).log2().ceil() as usize).max(1);
        if m > MAX_ANCILLAS {
            return Err(Error::Capacity(format!(
                "eps = {eps} needs {m} ancillas, capped at {MAX_ANCILLAS}"
            )));
        }
        let cfg = PhaseEstimationConfig {
            m,
            system: instance.system.clone(),
            observable: instance.observable,
            shots: 1,
        };
        let run = phase_estimate(&cfg, derive_stream(seed, (i as u64) << 1))?;
        let (_, estimate) = run.map_estimate();
        let mut rng = ChaCha12Rng::seed_from_u64(derive_stream(seed, ((i as u64) << 1) | 1));
        let naive_shots = naive_shots_for(&instance.sectors, truth, eps, &mut rng)?;
        rows.push(CostRow {
            epsilon: eps,
            naive_shots,
            pe_applications: run.gamma_applications,
            achieved_error: (estimate - truth).abs(),
        });
    }
    Ok(rows)
}

/// Writes the cost table as CSV.
pub fn write_cost_csv<W: std::io::Write>(w: W, rows: &[CostRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epsilon", "naive_shots", "pe_applications", "achieved_error"])
        .map_err(crate::observables::csv_err)?;
    for r in rows {
        out.write_record([
            r.epsilon.to_string(),
            r.naive_shots.to_string(),
            r.pe_applications.to_string(),
            r.achieved_error.to_string(),
        ])
        .map_err(crate::observables::csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x`: the scaling exponent of a
/// cost column.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Config("exponent fit needs at least two points".into()));
    }
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| {
            if x > 0.0 && y > 0.0 {
                Ok((x.ln(), y.ln()))
            } else {
                Err(Error::Config("exponent fit needs positive coordinates".into()))
            }
        })
        .collect::<Result<_>>()?;
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Config("exponent fit needs at least two distinct x values".into()));
    }
    Ok(sxy / sxx)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::Gate;
    use crate::lattice::LatticeGraph;
    use ndarray_linalg::Eig;

    fn max_abs(m: &Array2<C64>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn identity(dim: usize) -> Array2<C64> {
        Array2::from_diag_elem(dim, C64::new(1.0, 0.0))
    }

    /// A small three-qubit dynamics circuit used as a generic `U`.
    fn chain_cycle() -> Circuit {
        let g = LatticeGraph::chain(2).unwrap();
        let p = TrotterParams::new(1.0, 1.3, 1.5, 0.3);
        build_trotter_cycle(&g, &p, TrotterOrder::Second)
    }

    #[test]
    fn gamma_is_unitary_and_factors_into_reflection_times_pauli() {
        let u = chain_cycle();
        let dim = 1usize << u.n_qubits();
        for axis in [PauliAxis::X, PauliAxis::Y, PauliAxis::Z] {
            let obs = PauliTerm::new(axis, 1);
            let gamma = build_gamma(&u, &obs).unwrap();
            let m = gamma.matrix();

            let gram = m.t().map(|z| z.conj()).dot(m);
            assert!(max_abs(&(&gram - &identity(dim))) < 1e-10, "Gamma must be unitary");

            let r = reflected_propagator(&u).unwrap();
            assert!(max_abs(&(r.dot(&r) - identity(dim))) < 1e-10, "reflection self-inverse");

            let o = obs.dense(u.n_qubits()).unwrap();
            assert!(max_abs(&(o.dot(&o) - identity(dim))) < 1e-12, "Pauli squares to 1");
            assert!(max_abs(&(&r.dot(&o) - m)) < 1e-12, "Gamma = reflection * Pauli");
        }
    }

    #[test]
    fn trivial_circuits_give_textbook_phases() {
        // U = identity, O = Z: <Z> = 1 on |0>, so cos lambda = -1, lambda = pi.
        let cfg = PhaseEstimationConfig {
            m: 3,
            system: Circuit::new(1),
            observable: PauliTerm::parse("Z0").unwrap(),
            shots: 32,
        };
        let gamma = build_gamma(&cfg.system, &cfg.observable).unwrap();
        assert!((gamma.lambda() - PI).abs() < 1e-12);
        let run = phase_estimate(&cfg, 11).unwrap();
        // lambda = pi sits exactly on the grid at k = 2^{m-1}.
        assert!((run.distribution[4] - 1.0).abs() < 1e-12);
        assert_eq!(run.mode_k, 4);
        assert!((run.estimate - 1.0).abs() < 1e-12);
        assert_eq!(run.gamma_applications, 7);

        // U = H, O = Z: <Z> = 0 on |+>, lambda = pi/2 — on-grid already at
        // m = 2, so a single shot recovers it with probability 1.
        let mut plus = Circuit::new(1);
        plus.push_moment(vec![Gate::H { q: 0 }]).unwrap();
        let cfg = PhaseEstimationConfig {
            m: 2,
            system: plus,
            observable: PauliTerm::parse("Z0").unwrap(),
            shots: 64,
        };
        let gamma = build_gamma(&cfg.system, &cfg.observable).unwrap();
        assert!((gamma.lambda() - PI / 2.0).abs() < 1e-12);
        let run = phase_estimate(&cfg, 5).unwrap();
        assert!((run.distribution[1] + run.distribution[3] - 1.0).abs() < 1e-12);
        assert!(run.samples.iter().all(|&k| k == 1 || k == 3));
        assert!(run.estimate.abs() < 1e-12);
        assert_eq!(run.gamma_applications, 3);
        assert!((run.resolution - PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn dense_eigensolver_confirms_rotation_plane() {
        // [DERIVED] oracle: diagonalize Gamma for a four-qubit fixed-sector
        // dynamics circuit and compare the eigenphases of every eigenvector
        // overlapping U|0> against arccos(-<0|U'OU|0>).
        let g = LatticeGraph::ring(4).unwrap();
        let p = TrotterParams::new(1.0, 1.3, 1.5, 0.25);
        let sector = ChargeSector::from_index(4, 0b0101);
        let u = build_dual_cycle(&g, &p, &sector, TrotterOrder::Second).unwrap();
        let obs = PauliTerm::parse("X2").unwrap();
        let gamma = build_gamma(&u, &obs).unwrap();

        // Independent cross-check of the encoded amplitude.
        let mut sv = StateVector::zero_state(4).unwrap();
        sv.apply_circuit(&u).unwrap();
        assert!((gamma.expectation() - sv.expect_x(2)).abs() < 1e-12);

        let (vals, vecs) = gamma.matrix().eig().unwrap();
        let anchor = sv.amplitudes();
        let mut overlapping = 0usize;
        for (i, &x) in vals.iter().enumerate() {
            assert!((x.norm() - 1.0).abs() < 1e-10, "unitary spectrum");
            let overlap: C64 =
                vecs.column(i).iter().zip(anchor).map(|(v, a)| v.conj() * a).sum();
            if overlap.norm() > 1e-8 {
                overlapping += 1;
                assert!(
                    (x.arg().abs() - gamma.lambda()).abs() < 1e-9,
                    "eigenphase {} deviates from lambda {}",
                    x.arg(),
                    gamma.lambda()
                );
            }
        }
        assert!(overlapping >= 2, "U|0> must meet both rotation eigenvectors");
    }

    #[test]
    fn probability_mass_concentrates_within_one_grid_point() {
        // Off-grid phase: at least 4/pi^2 of the outcome mass must land
        // within one grid point of the true lambda, exactly and as sampled.
        let g = LatticeGraph::chain(3).unwrap();
        let p = TrotterParams::new(1.0, 1.7, 2.1, 0.3);
        let sector = ChargeSector::from_index(3, 0b010);
        let u = build_dual_cycle(&g, &p, &sector, TrotterOrder::Second).unwrap();
        let obs = PauliTerm::parse("X1").unwrap();
        let gamma = build_gamma(&u, &obs).unwrap();

        let m = 5usize;
        let mm = 1usize << m;
        let spacing = 2.0 * PI / mm as f64;
        let offset = gamma.lambda() / spacing;
        assert!(
            (offset - offset.round()).abs() > 0.1,
            "instance must sit off the phase grid to exercise the bound"
        );

        let cfg = PhaseEstimationConfig {
            m,
            system: u,
            observable: obs,
            shots: 500,
        };
        let near = |k: usize| -> bool {
            let folded = 2.0 * PI * k.min(mm - k) as f64 / mm as f64;
            (folded - gamma.lambda()).abs() <= spacing + 1e-12
        };
        let floor = 4.0 / (PI * PI);

        let run = phase_estimate(&cfg, 3).unwrap();
        let exact: f64 =
            run.distribution.iter().enumerate().filter(|&(k, _)| near(k)).map(|(_, &p)| p).sum();
        assert!(exact >= floor, "exact near-mass {exact} below 4/pi^2");

        let mut hits = 0usize;
        let mut total = 0usize;
        for seed in [3, 17, 4242] {
            let run = phase_estimate(&cfg, seed).unwrap();
            hits += run.samples.iter().filter(|&&k| near(k)).count();
            total += run.samples.len();
        }
        let fraction = hits as f64 / total as f64;
        let sigma = (floor * (1.0 - floor) / total as f64).sqrt();
        assert!(
            fraction >= floor - 3.0 * sigma,
            "sampled near-fraction {fraction} below 4/pi^2 - 3 sigma"
        );
    }

    #[test]
    fn estimate_error_shrinks_with_added_ancillas() {
        let g = LatticeGraph::chain(3).unwrap();
        let p = TrotterParams::new(1.0, 1.7, 2.1, 0.3);
        let sector = ChargeSector::from_index(3, 0b010);
        let u = build_dual_cycle(&g, &p, &sector, TrotterOrder::Second).unwrap();
        let obs = PauliTerm::parse("Z1").unwrap();
        let gamma = build_gamma(&u, &obs).unwrap();

        let mut errors = Vec::new();
        for m in [3usize, 4, 5, 6] {
            let cfg = PhaseEstimationConfig {
                m,
                system: u.clone(),
                observable: obs,
                shots: 1,
            };
            let run = phase_estimate(&cfg, 9).unwrap();
            assert_eq!(run.gamma_applications, (1 << m) - 1);
            assert!((run.resolution - PI / (1 << m) as f64).abs() < 1e-15);
            let (_, estimate) = run.map_estimate();
            let err = (estimate - gamma.expectation()).abs();
            // MAP readout lands within one grid point of the true phase, and
            // |cos a - cos b| <= |a - b| <= 2 spacings in the worst tie.
            assert!(err <= 4.0 * PI / (1 << m) as f64, "m = {m} error {err} out of bounds");
            errors.push(err);
        }
        assert!(
            errors[3] < errors[0],
            "doubling the grid three times must shrink the error ({errors:?})"
        );
    }

    #[test]
    fn sector_enumeration_matches_phase_readout() {
        // The superposition-quench amplitude <0|U' X_l U|0> *is* the uniform
        // sector average of the link polarization; phase estimation reads the
        // same number off the ancilla grid.
        let g = LatticeGraph::chain(2).unwrap();
        let p = TrotterParams::new(1.0, 1.3, 1.5, 0.25);
        let instance = CostInstance::from_uniform_quench(
            &g,
            &p,
            TrotterOrder::Second,
            1,
            PauliTerm::parse("X2").unwrap(),
        )
        .unwrap();
        assert_eq!(instance.sectors.len(), 4);
        instance.validate().unwrap();

        let gamma = build_gamma(&instance.system, &instance.observable).unwrap();
        let average = instance.ensemble_average();
        assert!((gamma.expectation() - average).abs() < 1e-9, "ensemble identity");

        let m = 6usize;
        let cfg = PhaseEstimationConfig {
            m,
            system: instance.system.clone(),
            observable: instance.observable,
            shots: 1,
        };
        let run = phase_estimate(&cfg, 21).unwrap();
        let (_, estimate) = run.map_estimate();
        assert!(
            (estimate - average).abs() <= 2f64.powi(-(m as i32)),
            "PE readout {estimate} vs enumeration {average}"
        );
    }

    #[test]
    fn matter_observable_sector_table_also_validates() {
        // X on a matter qubit maps to the conservation string in the dual
        // frame; the enumerated table must still reproduce the amplitude.
        let g = LatticeGraph::chain(2).unwrap();
        let p = TrotterParams::new(1.0, 0.9, 1.1, 0.3);
        let instance = CostInstance::from_uniform_quench(
            &g,
            &p,
            TrotterOrder::First,
            2,
            PauliTerm::parse("X0").unwrap(),
        )
        .unwrap();
        instance.validate().unwrap();
    }

    #[test]
    fn cost_table_shows_quadratic_versus_linear_scaling() {
        let g = LatticeGraph::chain(2).unwrap();
        let p = TrotterParams::new(1.0, 1.3, 1.5, 0.25);
        let instance = CostInstance::from_uniform_quench(
            &g,
            &p,
            TrotterOrder::Second,
            1,
            PauliTerm::parse("X2").unwrap(),
        )
        .unwrap();
        // Small targets keep the discrete ladder 2^m - 1 close to its
        // asymptotic slope of one; at eps = 1/4 the "- 1" still distorts it.
        let eps = [0.0625, 0.03125, 0.015625, 0.0078125];
        let rows = cost_compare(&instance, &eps, 2026).unwrap();

        let expected_apps = [15usize, 31, 63, 127];
        for (row, (&e, &apps)) in rows.iter().zip(eps.iter().zip(&expected_apps)) {
            assert_eq!(row.epsilon, e);
            assert_eq!(row.pe_applications, apps, "ladder count is 2^ceil(log2(1/eps)) - 1");
            assert!(row.achieved_error <= PI * e, "readout error within the phase resolution");
        }
        assert!(
            rows.windows(2).all(|w| w[1].naive_shots > w[0].naive_shots),
            "naive cost must grow as the target tightens"
        );

        let naive: Vec<(f64, f64)> =
            rows.iter().map(|r| (1.0 / r.epsilon, r.naive_shots as f64)).collect();
        let pe: Vec<(f64, f64)> =
            rows.iter().map(|r| (1.0 / r.epsilon, r.pe_applications as f64)).collect();
        let naive_slope = log_log_slope(&naive).unwrap();
        let pe_slope = log_log_slope(&pe).unwrap();
        assert!(
            (naive_slope - 2.0).abs() <= 0.3,
            "naive sampling should scale quadratically, got exponent {naive_slope}"
        );
        assert!(
            (pe_slope - 1.0).abs() <= 0.1,
            "phase estimation should scale linearly, got exponent {pe_slope}"
        );
    }

    #[test]
    fn cost_csv_layout_is_stable() {
        let rows = vec![
            CostRow { epsilon: 0.25, naive_shots: 48, pe_applications: 3, achieved_error: 0.05 },
            CostRow { epsilon: 0.125, naive_shots: 190, pe_applications: 7, achieved_error: 0.01 },
        ];
        let mut buf = Vec::new();
        write_cost_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("epsilon,naive_shots,pe_applications,achieved_error"));
        assert_eq!(lines.next(), Some("0.25,48,3,0.05"));
        assert_eq!(lines.next(), Some("0.125,190,7,0.01"));
    }

    #[test]
    fn configs_and_observables_are_validated() {
        assert!(matches!(PauliTerm::parse("Q1"), Err(Error::Config(_))));
        assert!(matches!(PauliTerm::parse("X"), Err(Error::Config(_))));
        assert!(matches!(PauliTerm::parse("ZZ"), Err(Error::Config(_))));

        let u = chain_cycle();
        let base = PhaseEstimationConfig {
            m: 3,
            system: u.clone(),
            observable: PauliTerm::parse("X0").unwrap(),
            shots: 8,
        };
        assert!(base.validate().is_ok());

        let mut bad = base.clone();
        bad.m = 0;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut bad = base.clone();
        bad.m = MAX_ANCILLAS + 1;
        assert!(matches!(bad.validate(), Err(Error::Capacity(_))));
        let mut bad = base.clone();
        bad.shots = 0;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut bad = base.clone();
        bad.observable = PauliTerm::parse("X7").unwrap();
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut bad = base;
        bad.system = Circuit::new(MAX_SYSTEM_QUBITS + 1);
        assert!(matches!(bad.validate(), Err(Error::Capacity(_))));
        assert!(matches!(
            build_gamma(&Circuit::new(MAX_SYSTEM_QUBITS + 1), &PauliTerm::parse("X0").unwrap()),
            Err(Error::Capacity(_))
        ));

        assert!(matches!(
            build_gamma(&u, &PauliTerm::parse("Z9").unwrap()),
            Err(Error::Config(_))
        ));
    }
}
