//! Second Renyi entropy from statevectors and from randomized measurements.
//!
//! The exact path reduces a pure state to a subsystem and reports
//! `S2 = -log Tr[rho_A^2]`. The estimated path reproduces what a shot-based
//! device can do: rotate every qubit by an independently drawn single-qubit
//! Clifford, measure once in the computational basis, and repeat over `N_u`
//! settings with `N_s` shots each. Subsystem purity is then recovered from
//! bitstring collisions,
//!
//! ```text
//! P_A = (2^L / N_u) sum_n sum_{s,s'} Pbar_n(s) Pbar_n(s') (-2)^(-H(s,s'))
//! ```
//!
//! where `Pbar_n` is the empirical outcome distribution of setting `n`
//! restricted to the `L` subsystem bits and `H` is the Hamming distance. The
//! sum keeps the `s = s'` terms; the resulting `1/N_s` bias is removed by the
//! exact affine (jackknife) correction
//! `P_unbiased = N_s/(N_s-1) P - 2^L/(N_s-1)` ([`unbiased_purity`]). Both
//! conventions are pinned by calibration tests against the dense
//! [`StateVector::subsystem_purity`] oracle.
//!
//! Entropy profiles average `S2` over every contiguous window of a given
//! length in a 1d qubit ordering (wrapping on periodic orders), and the
//! uniform-noise background is mitigated by subtracting the rescaled
//! full-system value, `S_mit(L) = S_raw(L) - (L/N) S_raw(N)`
//! ([`background_subtract`]). The subtraction removes extensive classical
//! entropy exactly for uncorrelated local noise; under heavy decoherence it
//! is known to underestimate the true entanglement, so mitigated values are a
//! lower-bound diagnostic rather than an unbiased measurement.
//!
//! Mixed states enter in two ways: [`sample_randomized_batch_mixture`] pools
//! shots across an ensemble of pure states inside each measurement setting
//! (so the estimator sees the averaged density matrix, the convention used
//! for charge-sector ensembles), and [`mixed_subsystem_purity`] computes the
//! same quantity exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::lattice::SnakeOrder;
use crate::observables::csv_err;
use crate::statevector::StateVector;
use crate::{C64, Error, Result};

/// Number of single-qubit Clifford rotations (the group modulo global phase).
pub const N_CLIFFORD: usize = 24;

/// Sectors used by default when entropy is averaged over charge ensembles.
pub const DEFAULT_DISORDER_SECTORS: usize = 100;

// -- single-qubit Clifford table ---------------------------------------------

type Mat2 = [[C64; 2]; 2];

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

/// Canonical fingerprint of a 2x2 unitary modulo global phase: rescale so the
/// first non-negligible entry is real positive, then round to a coarse grid.
fn phase_key(m: &Mat2) -> [(i64, i64); 4] {
    let flat = [m[0][0], m[0][1], m[1][0], m[1][1]];
    let lead = flat.iter().find(|z| z.norm() > 1e-9).copied().unwrap_or(C64::new(1.0, 0.0));
    let phase = lead / lead.norm();
    let mut key = [(0i64, 0i64); 4];
    for (k, z) in flat.iter().enumerate() {
        let w = z / phase;
        key[k] = ((w.re * 1e6).round() as i64, (w.im * 1e6).round() as i64);
    }
    key
}

fn build_clifford_table() -> Vec<Mat2> {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let h: Mat2 = [[C64::new(r, 0.0), C64::new(r, 0.0)], [C64::new(r, 0.0), C64::new(-r, 0.0)]];
    let s: Mat2 = [[one, zero], [zero, C64::new(0.0, 1.0)]];
    let identity: Mat2 = [[one, zero], [zero, one]];

    // breadth-first closure of {H, S}: the generated group modulo phase is
    // exactly the 24-element single-qubit Clifford group, and breadth-first
    // discovery order makes the ids stable (id 0 is the identity).
    let mut table = vec![identity];
    let mut seen = vec![phase_key(&identity)];
    let mut head = 0;
    while head < table.len() {
        let current = table[head];
        head += 1;
        for generator in [&h, &s] {
            let child = mat_mul(generator, &current);
            let key = phase_key(&child);
            if !seen.contains(&key) {
                seen.push(key);
                table.push(child);
            }
        }
    }
    debug_assert_eq!(table.len(), N_CLIFFORD);
    table
}

/// All 24 single-qubit Clifford unitaries in a stable order (id 0 = identity).
pub fn clifford_table() -> &'static [Mat2] {
    static TABLE: OnceLock<Vec<Mat2>> = OnceLock::new();
    TABLE.get_or_init(build_clifford_table)
}

/// One tabulated Clifford rotation by id.
pub fn clifford_matrix(id: u8) -> Result<Mat2> {
    clifford_table()
        .get(id as usize)
        .copied()
        .ok_or_else(|| Error::Config(format!("Clifford id {id} out of range 0..{N_CLIFFORD}")))
}

// -- measurement batches ------------------------------------------------------

/// One randomized measurement setting: the per-qubit Clifford rotation that
/// was applied before readout, the RNG seed it was sampled with, and the
/// recorded bitstrings (qubit `q` is bit `q` of each word).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub clifford_ids: Vec<u8>,
    pub seed: u64,
    pub bitstrings: Vec<u64>,
}

/// A full randomized-measurement record: `N_u` independent settings with
/// `N_s` bitstrings each, plus the master seed that reproduces the batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomizedMeasurementBatch {
    pub version: u32,
    pub n_qubits: usize,
    pub shots_per_setting: usize,
    pub master_seed: u64,
    pub settings: Vec<MeasurementSetting>,
}

impl RandomizedMeasurementBatch {
    /// Number of basis settings `N_u`.
    pub fn n_settings(&self) -> usize {
        self.settings.len()
    }

    /// Total shot budget `N_u * N_s`.
    pub fn total_shots(&self) -> usize {
        self.settings.len() * self.shots_per_setting
    }

    /// Structural checks shared by the sampler, the estimators and file I/O.
    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::Config(format!("unsupported batch version {}", self.version)));
        }
        if self.n_qubits == 0 || self.n_qubits > 63 {
            return Err(Error::Config(format!(
                "batch register of {} qubits outside 1..=63",
                self.n_qubits
            )));
        }
        if self.settings.is_empty() || self.shots_per_setting == 0 {
            return Err(Error::Config("batch needs at least one setting and one shot".into()));
        }
        let limit = 1u64 << self.n_qubits;
        for (n, setting) in self.settings.iter().enumerate() {
            if setting.clifford_ids.len() != self.n_qubits {
                return Err(Error::Config(format!(
                    "setting {n} has {} Clifford ids for {} qubits",
                    setting.clifford_ids.len(),
                    self.n_qubits
                )));
            }
            if setting.clifford_ids.iter().any(|&id| id as usize >= N_CLIFFORD) {
                return Err(Error::Config(format!("setting {n} uses a Clifford id >= 24")));
            }
            if setting.bitstrings.len() != self.shots_per_setting {
                return Err(Error::Config(format!(
                    "setting {n} records {} shots, expected {}",
                    setting.bitstrings.len(),
                    self.shots_per_setting
                )));
            }
            if setting.bitstrings.iter().any(|&b| b >= limit) {
                return Err(Error::Config(format!("setting {n} has a bitstring out of range")));
            }
        }
        Ok(())
    }
}

fn validate_mixture(states: &[StateVector], weights: &[f64]) -> Result<usize> {
    if states.is_empty() {
        return Err(Error::Config("mixture needs at least one state".into()));
    }
    if states.len() != weights.len() {
        return Err(Error::Config(format!(
            "{} states but {} weights",
            states.len(),
            weights.len()
        )));
    }
    let n = states[0].n_qubits();
    if states.iter().any(|s| s.n_qubits() != n) {
        return Err(Error::Config("mixture states act on different registers".into()));
    }
    if weights.iter().any(|&w| w < -1e-12) {
        return Err(Error::Config("mixture weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("mixture weights sum to {total}, expected 1")));
    }
    Ok(n)
}

/// Outcome distribution of `state` after rotating every qubit by its setting
/// Clifford.
fn rotated_distribution(state: &StateVector, ids: &[u8]) -> Result<Vec<f64>> {
    let mut rotated = state.clone();
    for (q, &id) in ids.iter().enumerate() {
        rotated.apply_one_qubit_unitary(q, clifford_matrix(id)?)?;
    }
    Ok(rotated.probabilities())
}

fn sample_index(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Draws a randomized-measurement batch from a pure state.
///
/// Every setting rotates each qubit by an i.i.d. uniform Clifford and records
/// `shots_per_setting` computational-basis samples. The per-setting seed is
/// stored so the batch is reproducible from the file alone.
pub fn sample_randomized_batch(
    state: &StateVector,
    n_settings: usize,
    shots_per_setting: usize,
    seed: u64,
) -> Result<RandomizedMeasurementBatch> {
    sample_randomized_batch_mixture(
        std::slice::from_ref(state),
        &[1.0],
        n_settings,
        shots_per_setting,
        seed,
    )
}

/// Draws a randomized-measurement batch from a mixture of pure states.
///
/// The component states are pooled *inside* each setting: every shot samples
/// from the weighted average of the rotated outcome distributions, so the
/// estimator applied to the batch measures the purity of the mixed density
/// matrix rather than the average of the component purities. This is the
/// convention for disorder ensembles, where sector averaging and basis
/// averaging happen in the same pass.
pub fn sample_randomized_batch_mixture(
    states: &[StateVector],
    weights: &[f64],
    n_settings: usize,
    shots_per_setting: usize,
    seed: u64,
) -> Result<RandomizedMeasurementBatch> {
    let n_qubits = validate_mixture(states, weights)?;
    if n_qubits > 63 {
        return Err(Error::Capacity(format!("{n_qubits} qubits exceed the u64 bitstring record")));
    }
    if n_settings == 0 || shots_per_setting == 0 {
        return Err(Error::Config("batch needs at least one setting and one shot".into()));
    }
    let mut master = ChaCha12Rng::seed_from_u64(seed);
    let mut settings = Vec::with_capacity(n_settings);
    for _ in 0..n_settings {
        let setting_seed: u64 = master.gen();
        let mut rng = ChaCha12Rng::seed_from_u64(setting_seed);
        let ids: Vec<u8> = (0..n_qubits).map(|_| rng.gen_range(0..N_CLIFFORD as u8)).collect();
        let mut mixed = vec![0.0; 1 << n_qubits];
        for (state, &w) in states.iter().zip(weights) {
            if w <= 0.0 {
                continue;
            }
            for (m, p) in mixed.iter_mut().zip(rotated_distribution(state, &ids)?) {
                *m += w * p;
            }
        }
        let mut cdf = mixed;
        let mut acc = 0.0;
        for c in cdf.iter_mut() {
            acc += *c;
            *c = acc;
        }
        let bitstrings: Vec<u64> =
            (0..shots_per_setting).map(|_| sample_index(&cdf, rng.gen::<f64>()) as u64).collect();
        settings.push(MeasurementSetting { clifford_ids: ids, seed: setting_seed, bitstrings });
    }
    Ok(RandomizedMeasurementBatch {
        version: 1,
        n_qubits,
        shots_per_setting,
        master_seed: seed,
        settings,
    })
}

// -- purity estimation ---------------------------------------------------------

/// A purity estimate with its across-settings spread and shot bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct PurityEstimate {
    /// Mean of the per-setting estimator values.
    pub value: f64,
    /// Standard error of the mean across settings (0 for a single setting).
    pub stderr: f64,
    /// Per-setting estimator values, in batch order.
    pub per_setting: Vec<f64>,
    /// Shots per setting `N_s`, kept so results can report `N_u * N_s`.
    pub shots_per_setting: usize,
}

impl PurityEstimate {
    pub fn n_settings(&self) -> usize {
        self.per_setting.len()
    }

    /// Total shot budget `N_u * N_s` behind this estimate.
    pub fn total_shots(&self) -> usize {
        self.per_setting.len() * self.shots_per_setting
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn validate_subset(subset: &[usize], n_qubits: usize) -> Result<Vec<usize>> {
    if subset.is_empty() {
        return Err(Error::Config("subsystem must contain at least one qubit".into()));
    }
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("subsystem lists a qubit twice".into()));
    }
    if *sorted.last().unwrap() >= n_qubits {
        return Err(Error::Config(format!(
            "subsystem qubit {} outside register of {n_qubits}",
            sorted.last().unwrap()
        )));
    }
    if sorted.len() > 26 {
        return Err(Error::Capacity(format!(
            "{}-qubit subsystem exceeds the dense outcome table",
            sorted.len()
        )));
    }
    Ok(sorted)
}

/// Quadratic Hamming-kernel form `2^L sum_{s,s'} f(s) f(s') (-2)^(-H(s,s'))`.
///
/// The kernel factorizes per bit as `[[1, -1/2], [-1/2, 1]]`, so the sum is a
/// butterfly transform followed by a dot product, `O(L 2^L)` instead of `4^L`.
fn hamming_kernel_quadratic(f: &[f64]) -> f64 {
    let dim = f.len();
    let mut g = f.to_vec();
    let mut stride = 1;
    while stride < dim {
        for base in (0..dim).step_by(stride * 2) {
            for i in base..base + stride {
                let (a, b) = (g[i], g[i + stride]);
                g[i] = a - 0.5 * b;
                g[i + stride] = b - 0.5 * a;
            }
        }
        stride *= 2;
    }
    dim as f64 * f.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()
}

/// Raw randomized-measurement purity of a qubit subset.
///
/// Per setting, the recorded bitstrings are restricted to the subset, turned
/// into an empirical distribution (self-pairs included) and contracted with
/// the `(-2)^(-H)` kernel; the batch value is the mean over settings. The raw
/// value carries a known `1/N_s` bias — remove it with [`unbiased_purity`] or
/// use [`estimate_purity_unbiased`]. Finite sampling and hardware noise can
/// push the result outside `[2^-L, 1]`; it is reported as-is.
pub fn estimate_purity(
    batch: &RandomizedMeasurementBatch,
    subset: &[usize],
) -> Result<PurityEstimate> {
    batch.validate()?;
    let subset = validate_subset(subset, batch.n_qubits)?;
    let dim = 1usize << subset.len();
    let shot_weight = 1.0 / batch.shots_per_setting as f64;
    let mut per_setting = Vec::with_capacity(batch.settings.len());
    let mut freq = vec![0.0; dim];
    for setting in &batch.settings {
        freq.iter_mut().for_each(|f| *f = 0.0);
        for &shot in &setting.bitstrings {
            let mut key = 0usize;
            for (k, &q) in subset.iter().enumerate() {
                key |= (((shot >> q) & 1) as usize) << k;
            }
            freq[key] += shot_weight;
        }
        per_setting.push(hamming_kernel_quadratic(&freq));
    }
    let (value, stderr) = mean_and_stderr(&per_setting);
    Ok(PurityEstimate { value, stderr, per_setting, shots_per_setting: batch.shots_per_setting })
}

/// Purity estimator evaluated on exact per-setting outcome distributions
/// (the infinite-shot limit; no jackknife correction applies).
///
/// Each slice is one setting's distribution over the `2^L` subsystem
/// outcomes. Used to calibrate the kernel convention against the dense
/// oracle: averaging over all `24^L` Clifford settings reproduces the exact
/// subsystem purity.
pub fn purity_from_probabilities(setting_probs: &[Vec<f64>]) -> Result<f64> {
    if setting_probs.is_empty() {
        return Err(Error::Config("need at least one setting distribution".into()));
    }
    let dim = setting_probs[0].len();
    if !dim.is_power_of_two() || dim < 2 {
        return Err(Error::Config(format!("distribution length {dim} is not a power of two")));
    }
    let mut total = 0.0;
    for probs in setting_probs {
        if probs.len() != dim {
            return Err(Error::Config("setting distributions differ in length".into()));
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Config("setting distribution is not normalized".into()));
        }
        total += hamming_kernel_quadratic(probs);
    }
    Ok(total / setting_probs.len() as f64)
}

/// Marginal outcome distribution of a state on a qubit subset, after rotating
/// the subset qubits by the given Clifford ids (one id per subset qubit, in
/// sorted-qubit order). Rotations outside the subset cannot change the
/// marginal and are skipped.
pub fn rotated_subset_distribution(
    state: &StateVector,
    clifford_ids: &[u8],
    subset: &[usize],
) -> Result<Vec<f64>> {
    let subset = validate_subset(subset, state.n_qubits())?;
    if clifford_ids.len() != subset.len() {
        return Err(Error::Config(format!(
            "{} Clifford ids for a {}-qubit subsystem",
            clifford_ids.len(),
            subset.len()
        )));
    }
    let mut rotated = state.clone();
    for (&id, &q) in clifford_ids.iter().zip(&subset) {
        rotated.apply_one_qubit_unitary(q, clifford_matrix(id)?)?;
    }
    let probs = rotated.probabilities();
    let mut marginal = vec![0.0; 1 << subset.len()];
    for (i, p) in probs.iter().enumerate() {
        let mut key = 0usize;
        for (k, &q) in subset.iter().enumerate() {
            key |= ((i >> q) & 1) << k;
        }
        marginal[key] += p;
    }
    Ok(marginal)
}

/// Exact affine (jackknife) bias correction for the raw purity estimator:
/// `P_unbiased = N_s/(N_s-1) P - 2^L/(N_s-1)` for an `L`-qubit subsystem.
pub fn unbiased_purity(p: f64, n_shots: usize, subsystem_len: usize) -> Result<f64> {
    if n_shots < 2 {
        return Err(Error::Config(format!(
            "jackknife correction needs at least 2 shots per setting, got {n_shots}"
        )));
    }
    let ns = n_shots as f64;
    let dim = (1u64 << subsystem_len) as f64;
    Ok(ns / (ns - 1.0) * p - dim / (ns - 1.0))
}

/// Raw estimate with the jackknife correction applied per setting.
pub fn estimate_purity_unbiased(
    batch: &RandomizedMeasurementBatch,
    subset: &[usize],
) -> Result<PurityEstimate> {
    let mut est = estimate_purity(batch, subset)?;
    let l = validate_subset(subset, batch.n_qubits)?.len();
    for v in est.per_setting.iter_mut() {
        *v = unbiased_purity(*v, batch.shots_per_setting, l)?;
    }
    let (value, stderr) = mean_and_stderr(&est.per_setting);
    est.value = value;
    est.stderr = stderr;
    Ok(est)
}

/// Exact purity of a weighted mixture of pure states on a subsystem,
/// `Tr[(sum_k w_k rho_k,A)^2]`.
pub fn mixed_subsystem_purity(
    states: &[StateVector],
    weights: &[f64],
    subset: &[usize],
) -> Result<f64> {
    validate_mixture(states, weights)?;
    let subset = validate_subset(subset, states[0].n_qubits())?;
    let dim = 1usize << subset.len();
    let mut rho = Array2::<C64>::zeros((dim, dim));
    for (state, &w) in states.iter().zip(weights) {
        if w <= 0.0 {
            continue;
        }
        let part = state.reduced_density_matrix(&subset)?;
        rho.scaled_add(C64::new(w, 0.0), &part);
    }
    Ok(rho.iter().map(|z| z.norm_sqr()).sum())
}

// -- Renyi-2 entropy ------------------------------------------------------------

/// Logarithm convention for `S2 = -log P`: bits (`Log2`) or nats (`Ln`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntropyBase {
    Log2,
    Ln,
}

impl EntropyBase {
    /// `S2` of a (positive) purity in this base.
    pub fn entropy(self, purity: f64) -> f64 {
        match self {
            EntropyBase::Log2 => -purity.log2(),
            EntropyBase::Ln => -purity.ln(),
        }
    }

    fn ln_of_base(self) -> f64 {
        match self {
            EntropyBase::Log2 => std::f64::consts::LN_2,
            EntropyBase::Ln => 1.0,
        }
    }
}

/// Exact second Renyi entropy of a pure state's subsystem.
pub fn renyi2_exact(state: &StateVector, subset: &[usize], base: EntropyBase) -> Result<f64> {
    let subset = validate_subset(subset, state.n_qubits())?;
    Ok(base.entropy(state.subsystem_purity(&subset)?))
}

/// Exact second Renyi entropy of a mixed state's subsystem.
pub fn renyi2_mixed_exact(
    states: &[StateVector],
    weights: &[f64],
    subset: &[usize],
    base: EntropyBase,
) -> Result<f64> {
    Ok(base.entropy(mixed_subsystem_purity(states, weights, subset)?))
}

/// An estimated entropy with its debiased purity and shot bookkeeping.
///
/// Shot noise can push the debiased purity to zero or below, where the
/// logarithm is undefined; such results are flagged by `entropy = None`
/// rather than silently clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct Renyi2Estimate {
    /// Jackknife-corrected purity (may be nonpositive under noise).
    pub purity: f64,
    /// Standard error of the purity across settings.
    pub purity_stderr: f64,
    /// `-log(purity)`, absent when the purity estimate is nonpositive.
    pub entropy: Option<f64>,
    /// First-order propagated error of the entropy, absent when flagged.
    pub entropy_stderr: Option<f64>,
    /// Settings in the batch (`N_u`).
    pub n_settings: usize,
    /// Shots per setting (`N_s`).
    pub shots_per_setting: usize,
}

impl Renyi2Estimate {
    /// Total shot budget `N_u * N_s` behind this estimate.
    pub fn total_shots(&self) -> usize {
        self.n_settings * self.shots_per_setting
    }

    /// Whether the purity estimate was nonpositive (entropy undefined).
    pub fn is_flagged(&self) -> bool {
        self.entropy.is_none()
    }
}

/// Second Renyi entropy from a measurement batch (jackknife-debiased).
pub fn renyi2_estimated(
    batch: &RandomizedMeasurementBatch,
    subset: &[usize],
    base: EntropyBase,
) -> Result<Renyi2Estimate> {
    let est = estimate_purity_unbiased(batch, subset)?;
    let (entropy, entropy_stderr) = if est.value > 0.0 {
        (Some(base.entropy(est.value)), Some(est.stderr / (est.value * base.ln_of_base())))
    } else {
        (None, None)
    };
    Ok(Renyi2Estimate {
        purity: est.value,
        purity_stderr: est.stderr,
        entropy,
        entropy_stderr,
        n_settings: est.n_settings(),
        shots_per_setting: est.shots_per_setting,
    })
}

// -- contiguous-window averaging -------------------------------------------------

/// All contiguous windows of `len` positions in a 1d qubit order, as qubit-id
/// subsets. Periodic orders wrap around the end (one window per position);
/// open orders do not (`n - len + 1` windows). A window spanning the whole
/// order is returned once either way.
pub fn contiguous_windows(
    order: &SnakeOrder,
    len: usize,
    periodic: bool,
) -> Result<Vec<Vec<usize>>> {
    let n = order.len();
    if len == 0 || len > n {
        return Err(Error::Config(format!("window of {len} positions in an order of {n}")));
    }
    if len == n {
        return Ok(vec![(0..n).map(|p| order.qubit_at(p)).collect()]);
    }
    let starts = if periodic { n } else { n - len + 1 };
    Ok((0..starts)
        .map(|s| (0..len).map(|k| order.qubit_at((s + k) % n)).collect())
        .collect())
}

/// Mean exact `S2` over all contiguous windows of a given length.
pub fn renyi2_window_average_exact(
    state: &StateVector,
    order: &SnakeOrder,
    len: usize,
    periodic: bool,
    base: EntropyBase,
) -> Result<f64> {
    let windows = contiguous_windows(order, len, periodic)?;
    let mut total = 0.0;
    for w in &windows {
        total += renyi2_exact(state, w, base)?;
    }
    Ok(total / windows.len() as f64)
}

/// Mean exact mixed-state `S2` over all contiguous windows of a given length.
pub fn renyi2_window_average_mixed(
    states: &[StateVector],
    weights: &[f64],
    order: &SnakeOrder,
    len: usize,
    periodic: bool,
    base: EntropyBase,
) -> Result<f64> {
    let windows = contiguous_windows(order, len, periodic)?;
    let mut total = 0.0;
    for w in &windows {
        total += renyi2_mixed_exact(states, weights, w, base)?;
    }
    Ok(total / windows.len() as f64)
}

/// A window-averaged estimated entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowAverage {
    /// Mean entropy over the unflagged windows; `None` if every window was
    /// flagged nonpositive.
    pub entropy: Option<f64>,
    /// Mean of the per-window standard errors. The windows reuse the same
    /// shots, so their errors are correlated and averaging them (rather than
    /// dividing by `sqrt(windows)`) is the conservative choice.
    pub stderr: f64,
    /// Windows whose purity estimate was nonpositive.
    pub flagged: usize,
    /// Total number of windows of this length.
    pub n_windows: usize,
    /// Settings in the batch (`N_u`).
    pub n_settings: usize,
    /// Shots per setting (`N_s`).
    pub shots_per_setting: usize,
}

impl WindowAverage {
    /// Total shot budget `N_u * N_s` behind this estimate.
    pub fn total_shots(&self) -> usize {
        self.n_settings * self.shots_per_setting
    }
}

/// Window-averaged `S2` from a measurement batch. One batch serves every
/// window length: only the estimator's subset restriction changes.
pub fn renyi2_window_average_estimated(
    batch: &RandomizedMeasurementBatch,
    order: &SnakeOrder,
    len: usize,
    periodic: bool,
    base: EntropyBase,
) -> Result<WindowAverage> {
    let windows = contiguous_windows(order, len, periodic)?;
    let mut entropy_sum = 0.0;
    let mut stderr_sum = 0.0;
    let mut kept = 0usize;
    let mut flagged = 0usize;
    for w in &windows {
        let est = renyi2_estimated(batch, w, base)?;
        match (est.entropy, est.entropy_stderr) {
            (Some(s), Some(se)) => {
                entropy_sum += s;
                stderr_sum += se;
                kept += 1;
            }
            _ => flagged += 1,
        }
    }
    let entropy = (kept > 0).then(|| entropy_sum / kept as f64);
    let stderr = if kept > 0 { stderr_sum / kept as f64 } else { 0.0 };
    Ok(WindowAverage {
        entropy,
        stderr,
        flagged,
        n_windows: windows.len(),
        n_settings: batch.n_settings(),
        shots_per_setting: batch.shots_per_setting,
    })
}

// -- background subtraction -------------------------------------------------------

/// Uniform-noise mitigation: `S_mit(L) = S_raw(L) - (L/N) S_raw(N)` where
/// `S_raw(N)` is the full-system entropy measured from the same batch and `N`
/// is the register size. Removes the extensive entropy of uncorrelated local
/// noise exactly; a pure state has `S_raw(N) ~ 0` and the map is the
/// identity.
pub fn background_subtract(raw: &[(usize, f64)], full_entropy: f64, n_qubits: usize) -> Vec<(usize, f64)> {
    debug_assert!(n_qubits > 0);
    raw.iter()
        .map(|&(l, s)| (l, s - (l as f64 / n_qubits as f64) * full_entropy))
        .collect()
}

// -- file formats -------------------------------------------------------------------

/// Writes a measurement batch as pretty JSON (header plus per-setting blocks).
pub fn write_batch_json(path: impl AsRef<Path>, batch: &RandomizedMeasurementBatch) -> Result<()> {
    batch.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, batch)?;
    w.flush()?;
    Ok(())
}

/// Reads and validates a measurement batch written by [`write_batch_json`].
pub fn read_batch_json(path: impl AsRef<Path>) -> Result<RandomizedMeasurementBatch> {
    let batch: RandomizedMeasurementBatch =
        serde_json::from_reader(BufReader::new(File::open(path)?))?;
    batch.validate()?;
    Ok(batch)
}

/// One row of an entropy-profile result table.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyRow {
    pub cycle: f64,
    pub window_len: usize,
    pub raw: f64,
    pub mitigated: f64,
    pub stderr: f64,
}

/// Writes entropy rows as CSV with header `cycle,L,raw,mitigated,stderr`.
pub fn write_entropy_csv(path: impl AsRef<Path>, rows: &[EntropyRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    w.write_record(["cycle", "L", "raw", "mitigated", "stderr"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            format!("{}", r.cycle),
            format!("{}", r.window_len),
            format!("{}", r.raw),
            format!("{}", r.mitigated),
            format!("{}", r.stderr),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statevector::{x_eigenstate, z_eigenstate};
    use approx::assert_abs_diff_eq;

    const SQ: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn bell_pair() -> StateVector {
        let mut amps = vec![C64::new(0.0, 0.0); 4];
        amps[0] = C64::new(SQ, 0.0);
        amps[3] = C64::new(SQ, 0.0);
        StateVector::from_amplitudes(amps).unwrap()
    }

    fn random_state(n: usize, seed: u64) -> StateVector {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let amps: Vec<C64> =
            (0..1usize << n).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
        let mut sv = StateVector::from_amplitudes(amps).unwrap();
        sv.normalize().unwrap();
        sv
    }

    /// Every length-`l` Clifford id combination, for exact-enumeration tests.
    fn all_settings(l: usize) -> Vec<Vec<u8>> {
        let mut out = vec![vec![]];
        for _ in 0..l {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (0..N_CLIFFORD as u8).map(move |id| {
                        let mut next = prefix.clone();
                        next.push(id);
                        next
                    })
                })
                .collect();
        }
        out
    }

    fn enumerated_purity(state: &StateVector, subset: &[usize]) -> f64 {
        let probs: Vec<Vec<f64>> = all_settings(subset.len())
            .iter()
            .map(|ids| rotated_subset_distribution(state, ids, subset).unwrap())
            .collect();
        purity_from_probabilities(&probs).unwrap()
    }

    #[test]
    fn clifford_table_is_the_24_element_group() {
        let table = clifford_table();
        assert_eq!(table.len(), N_CLIFFORD);
        // id 0 is the identity
        assert_abs_diff_eq!(table[0][0][0].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(table[0][1][0].norm(), 0.0, epsilon = 1e-12);
        for m in table {
            // unitarity: U U^dagger = I
            let mut gram = [[C64::new(0.0, 0.0); 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    gram[r][c] = m[r][0] * m[c][0].conj() + m[r][1] * m[c][1].conj();
                }
            }
            assert_abs_diff_eq!(gram[0][0].re, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(gram[1][1].re, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(gram[0][1].norm(), 0.0, epsilon = 1e-12);
        }
        // pairwise distinct modulo phase, and closed under the generators
        let keys: Vec<_> = table.iter().map(phase_key).collect();
        for (i, k) in keys.iter().enumerate() {
            assert!(!keys[i + 1..].contains(k), "duplicate Clifford at id {i}");
        }
        let h = table[1]; // first BFS child of the identity
        for m in table {
            let child = mat_mul(&h, m);
            assert!(keys.contains(&phase_key(&child)), "group not closed");
        }
    }

    #[test]
    fn exact_probability_estimator_matches_the_dense_oracle() {
        // |0>: every enumerated setting together gives purity exactly 1
        let zero = StateVector::zero_state(1).unwrap();
        assert_abs_diff_eq!(enumerated_purity(&zero, &[0]), 1.0, epsilon = 1e-12);

        // half of a Bell pair is maximally mixed
        let bell = bell_pair();
        assert_abs_diff_eq!(enumerated_purity(&bell, &[0]), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(enumerated_purity(&bell, &[1]), 0.5, epsilon = 1e-12);

        // a generic 3-qubit state: full 24^2 enumeration reproduces the
        // reduced-density-matrix purity (the Clifford group is a 2-design)
        let sv = random_state(3, 5);
        let oracle = sv.subsystem_purity(&[0, 2]).unwrap();
        assert_abs_diff_eq!(enumerated_purity(&sv, &[0, 2]), oracle, epsilon = 1e-9);
    }

    #[test]
    fn mixture_of_orthogonal_states_reads_half() {
        let states = [StateVector::basis_state(1, 0).unwrap(), StateVector::basis_state(1, 1).unwrap()];
        // exact-probability path: mixture marginals by hand
        let probs: Vec<Vec<f64>> = all_settings(1)
            .iter()
            .map(|ids| {
                let a = rotated_subset_distribution(&states[0], ids, &[0]).unwrap();
                let b = rotated_subset_distribution(&states[1], ids, &[0]).unwrap();
                vec![0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
            })
            .collect();
        assert_abs_diff_eq!(purity_from_probabilities(&probs).unwrap(), 0.5, epsilon = 1e-12);

        // sampled path through the pooled-mixture batch
        let batch = sample_randomized_batch_mixture(&states, &[0.5, 0.5], 80, 400, 3).unwrap();
        let est = estimate_purity_unbiased(&batch, &[0]).unwrap();
        assert!(
            (est.value - 0.5).abs() < 5.0 * est.stderr.max(1e-3),
            "mixture purity {} +- {}",
            est.value,
            est.stderr
        );
    }

    #[test]
    fn sampled_bell_half_is_within_spread_of_the_oracle() {
        let bell = bell_pair();
        let batch = sample_randomized_batch(&bell, 100, 10_000, 11).unwrap();
        assert_eq!(batch.n_settings(), 100);
        assert_eq!(batch.total_shots(), 1_000_000);
        let est = estimate_purity_unbiased(&batch, &[0]).unwrap();
        let oracle = bell.subsystem_purity(&[0]).unwrap();
        assert!(
            (est.value - oracle).abs() < 5.0 * est.stderr,
            "estimate {} +- {} vs oracle {oracle}",
            est.value,
            est.stderr
        );
        assert!(est.stderr < 0.05);
    }

    #[test]
    fn jackknife_removes_the_self_pair_bias() {
        // small N_s makes the 1/N_s bias large; averaging many independent
        // batches separates it cleanly from the sampling noise
        let sv = random_state(2, 9);
        let oracle = sv.subsystem_purity(&[1]).unwrap();
        let (mut raw, mut fixed) = (Vec::new(), Vec::new());
        for seed in 0..200 {
            let batch = sample_randomized_batch(&sv, 20, 8, seed).unwrap();
            raw.push(estimate_purity(&batch, &[1]).unwrap().value);
            fixed.push(estimate_purity_unbiased(&batch, &[1]).unwrap().value);
        }
        let (raw_mean, raw_se) = mean_and_stderr(&raw);
        let (fixed_mean, fixed_se) = mean_and_stderr(&fixed);
        assert!(
            (fixed_mean - oracle).abs() < 3.0 * fixed_se,
            "debiased mean {fixed_mean} vs oracle {oracle} (se {fixed_se})"
        );
        // the raw estimator's bias is (2^L - P)/N_s, far outside its spread
        let predicted_bias = (2.0 - oracle) / 8.0;
        assert!((raw_mean - oracle - predicted_bias).abs() < 4.0 * raw_se);
        assert!((raw_mean - oracle).abs() > 6.0 * raw_se);
    }

    #[test]
    fn unbiased_purity_is_the_exact_affine_correction() {
        // N_s -> infinity: correction tends to the identity
        assert_abs_diff_eq!(unbiased_purity(0.7, 1_000_000_000, 2).unwrap(), 0.7, epsilon = 1e-6);
        // hand value: P=1, L=1, N_s=2 -> 2*1 - 2/1 = 0
        assert_abs_diff_eq!(unbiased_purity(1.0, 2, 1).unwrap(), 0.0, epsilon = 1e-15);
        assert!(unbiased_purity(1.0, 1, 1).is_err());
    }

    #[test]
    fn renyi2_exact_reference_values() {
        // product states have zero entropy at every window length
        let sv = StateVector::product_state(&[
            x_eigenstate(1),
            z_eigenstate(-1),
            x_eigenstate(-1),
            z_eigenstate(1),
        ])
        .unwrap();
        let order = SnakeOrder::identity(4);
        for l in 1..=4 {
            let s = renyi2_window_average_exact(&sv, &order, l, false, EntropyBase::Log2).unwrap();
            assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
        }
        // half a Bell pair carries exactly one bit, or ln 2 nats
        let bell = bell_pair();
        let bits = renyi2_exact(&bell, &[0], EntropyBase::Log2).unwrap();
        let nats = renyi2_exact(&bell, &[0], EntropyBase::Ln).unwrap();
        assert_abs_diff_eq!(bits, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nats, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn complement_symmetry_holds_for_pure_states() {
        let sv = random_state(6, 17);
        for subset in [vec![0], vec![1, 4], vec![0, 2, 5]] {
            let complement: Vec<usize> = (0..6).filter(|q| !subset.contains(q)).collect();
            let a = renyi2_exact(&sv, &subset, EntropyBase::Log2).unwrap();
            let b = renyi2_exact(&sv, &complement, EntropyBase::Log2).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn estimator_error_shrinks_with_the_shot_budget() {
        let sv = random_state(3, 23);
        let oracle = sv.subsystem_purity(&[0, 1]).unwrap();
        let budgets = [(10, 40), (40, 160), (160, 640)];
        let errors: Vec<f64> = budgets
            .iter()
            .map(|&(nu, ns)| {
                let mut total = 0.0;
                for seed in 0..4 {
                    let batch = sample_randomized_batch(&sv, nu, ns, 100 + seed).unwrap();
                    total += (estimate_purity_unbiased(&batch, &[0, 1]).unwrap().value - oracle).abs();
                }
                total / 4.0
            })
            .collect();
        assert!(
            errors[2] < errors[0],
            "errors did not shrink across budgets: {errors:?}"
        );
        assert!(errors[2] < 0.05, "largest budget still off by {}", errors[2]);
    }

    #[test]
    fn nonpositive_purity_estimates_are_flagged() {
        // two shots landing on opposite outcomes give a raw setting value of
        // 0.5, and the N_s=2 jackknife maps it to 2*0.5 - 2 = -1
        let batch = RandomizedMeasurementBatch {
            version: 1,
            n_qubits: 1,
            shots_per_setting: 2,
            master_seed: 0,
            settings: vec![
                MeasurementSetting { clifford_ids: vec![0], seed: 0, bitstrings: vec![0, 1] },
                MeasurementSetting { clifford_ids: vec![5], seed: 1, bitstrings: vec![1, 0] },
            ],
        };
        let est = renyi2_estimated(&batch, &[0], EntropyBase::Log2).unwrap();
        assert_abs_diff_eq!(est.purity, -1.0, epsilon = 1e-12);
        assert!(est.is_flagged());
        assert_eq!(est.entropy, None);
        assert_eq!(est.total_shots(), 4);

        let order = SnakeOrder::identity(1);
        let avg = renyi2_window_average_estimated(&batch, &order, 1, false, EntropyBase::Log2)
            .unwrap();
        assert_eq!(avg.flagged, 1);
        assert_eq!(avg.entropy, None);
    }

    #[test]
    fn windows_wrap_only_on_periodic_orders() {
        let order = SnakeOrder::identity(5);
        let wrapped = contiguous_windows(&order, 3, true).unwrap();
        assert_eq!(wrapped.len(), 5);
        assert!(wrapped.contains(&vec![3, 4, 0]));
        let open = contiguous_windows(&order, 3, false).unwrap();
        assert_eq!(open.len(), 3);
        assert!(!open.iter().any(|w| w.contains(&4) && w.contains(&0)));
        // the full-length window appears once regardless of wrapping
        assert_eq!(contiguous_windows(&order, 5, true).unwrap().len(), 1);
        assert!(contiguous_windows(&order, 0, true).is_err());
        assert!(contiguous_windows(&order, 6, true).is_err());
    }

    #[test]
    fn background_subtraction_removes_uniform_local_noise() {
        // identity on clean data
        let clean = [(1usize, 0.3), (2, 0.8)];
        let out = background_subtract(&clean, 0.0, 4);
        assert_eq!(out, clean.to_vec());
        // exact removal of a linear-in-L offset
        let noisy: Vec<(usize, f64)> = (1..=4).map(|l| (l, 0.25 * l as f64)).collect();
        for (_, s) in background_subtract(&noisy, 1.0, 4) {
            assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
        }

        // end-to-end: a product state under per-qubit depolarizing noise has
        // exactly extensive entropy, so mitigation cancels it up to shot
        // noise. The mixture expands the channel as 3^n weighted product
        // states: each qubit keeps its state, or is replaced by |0> or |1>.
        let lambda = 0.2;
        let kept = [x_eigenstate(1), x_eigenstate(-1), z_eigenstate(1), x_eigenstate(1)];
        let n = kept.len();
        let mut states = Vec::new();
        let mut weights = Vec::new();
        for combo in 0..3usize.pow(n as u32) {
            let (mut digits, mut weight, mut single) = (combo, 1.0, Vec::new());
            for q in kept.iter() {
                match digits % 3 {
                    0 => {
                        single.push(*q);
                        weight *= 1.0 - lambda;
                    }
                    1 => {
                        single.push(z_eigenstate(1));
                        weight *= lambda / 2.0;
                    }
                    _ => {
                        single.push(z_eigenstate(-1));
                        weight *= lambda / 2.0;
                    }
                }
                digits /= 3;
            }
            states.push(StateVector::product_state(&single).unwrap());
            weights.push(weight);
        }
        let batch = sample_randomized_batch_mixture(&states, &weights, 96, 1024, 42).unwrap();
        let order = SnakeOrder::identity(n);
        let full = renyi2_estimated(&batch, &[0, 1, 2, 3], EntropyBase::Log2).unwrap();
        let per_qubit_purity = (1.0 - lambda).powi(2) + lambda * (2.0 - lambda) / 2.0;
        let expected_full = -4.0 * per_qubit_purity.log2();
        assert!((full.entropy.unwrap() - expected_full).abs() < 0.25);
        let mut raw = Vec::new();
        for l in 1..n {
            let avg =
                renyi2_window_average_estimated(&batch, &order, l, false, EntropyBase::Log2)
                    .unwrap();
            raw.push((l, avg.entropy.unwrap()));
        }
        // raw entropies are clearly extensive...
        assert!(raw[1].1 > 0.3, "raw S(2) = {}", raw[1].1);
        // ...and the rescaled full-system subtraction cancels them
        for (l, s) in background_subtract(&raw, full.entropy.unwrap(), n) {
            assert!(s.abs() < 0.15, "mitigated S({l}) = {s}");
        }
    }

    #[test]
    fn mixed_subsystem_purity_hand_values() {
        // equal mixture of |00> and |11>: globally Tr rho^2 = 1/2, and the
        // one-qubit marginal is maximally mixed
        let states = [StateVector::basis_state(2, 0).unwrap(), StateVector::basis_state(2, 3).unwrap()];
        let w = [0.5, 0.5];
        assert_abs_diff_eq!(mixed_subsystem_purity(&states, &w, &[0, 1]).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(mixed_subsystem_purity(&states, &w, &[0]).unwrap(), 0.5, epsilon = 1e-12);
        // mixing a state with itself is still pure
        let sv = random_state(2, 31);
        let same = [sv.clone(), sv];
        assert_abs_diff_eq!(mixed_subsystem_purity(&same, &w, &[0, 1]).unwrap(), 1.0, epsilon = 1e-10);
        // and it matches the estimator's pooled-mixture convention exactly
        let probs: Vec<Vec<f64>> = all_settings(1)
            .iter()
            .map(|ids| {
                let a = rotated_subset_distribution(&states[0], ids, &[0]).unwrap();
                let b = rotated_subset_distribution(&states[1], ids, &[0]).unwrap();
                vec![0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
            })
            .collect();
        assert_abs_diff_eq!(
            purity_from_probabilities(&probs).unwrap(),
            mixed_subsystem_purity(&states, &w, &[0]).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn batches_are_reproducible_and_round_trip_through_json() {
        let sv = random_state(3, 77);
        let a = sample_randomized_batch(&sv, 12, 9, 123).unwrap();
        let b = sample_randomized_batch(&sv, 12, 9, 123).unwrap();
        assert_eq!(a, b);
        let c = sample_randomized_batch(&sv, 12, 9, 124).unwrap();
        assert_ne!(a, c);
        // per-setting seeds are recorded and distinct
        let mut seeds: Vec<u64> = a.settings.iter().map(|s| s.seed).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), 12);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.json");
        write_batch_json(&path, &a).unwrap();
        assert_eq!(read_batch_json(&path).unwrap(), a);
    }

    #[test]
    fn sampler_covers_every_clifford_and_validates_input() {
        let sv = random_state(2, 1);
        let batch = sample_randomized_batch(&sv, 400, 1, 5).unwrap();
        let mut counts = [0usize; N_CLIFFORD];
        for s in &batch.settings {
            for &id in &s.clifford_ids {
                counts[id as usize] += 1;
            }
        }
        assert!(counts.iter().all(|&c| c > 10), "id histogram {counts:?}");

        assert!(sample_randomized_batch(&sv, 0, 5, 0).is_err());
        assert!(sample_randomized_batch(&sv, 5, 0, 0).is_err());
        assert!(estimate_purity(&batch, &[]).is_err());
        assert!(estimate_purity(&batch, &[0, 0]).is_err());
        assert!(estimate_purity(&batch, &[7]).is_err());
    }

    #[test]
    fn entropy_csv_has_the_pinned_header_and_shape() {
        let rows = vec![
            EntropyRow { cycle: 0.0, window_len: 1, raw: 0.1, mitigated: 0.05, stderr: 0.01 },
            EntropyRow { cycle: 1.0, window_len: 2, raw: 0.4, mitigated: 0.3, stderr: 0.02 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("entropy.csv");
        write_entropy_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "cycle,L,raw,mitigated,stderr");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2], "1,2,0.4,0.3,0.02");
    }
}
