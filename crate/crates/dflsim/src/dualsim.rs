//! Fixed-charge-sector ("dual frame") simulation and disorder averaging.
//!
//! In the dual frame only the gauge qubits remain dynamical; each charge
//! sector `g` turns the matter term into classical signs, leaving the
//! disordered mixed-field Ising Hamiltonian
//!
//! `H(g) = sum_l (J Z_l + h X_l) + mu sum_v g_v prod_{l at v} X_l`.
//!
//! Expectations over superposition initial states equal weighted averages of
//! per-sector runs, which is how every disorder average here is computed:
//! exact enumeration when the sector count is small, seeded Monte-Carlo
//! sampling (with recorded sample lists and standard errors) otherwise.
//!
//! Two evolution engines share the observable plumbing: Trotter cycles built
//! from the gate IR, and continuous-time evolution of the Hamiltonian itself
//! (dense eigendecomposition for small registers, adaptive Lanczos stepping
//! for larger ones). The continuous engine works in the x-basis, where the
//! `h` and `mu` terms are diagonal and the `J` term is a single bit flip per
//! qubit, so a matrix-vector product costs one gather per gauge qubit.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, Gate, TrotterOrder, TrotterParams};
use crate::lattice::{Frame, LatticeGraph};
use crate::observables::{
    BlochVec, ChargeSector, DualEnsemble, SiteObservables, charges_from_x_signs,
    csv_err, energy_per_link, imbalance, theta_flip_weight,
};
use crate::statevector::StateVector;
use crate::{C64, Error, Result};

// ---------------------------------------------------------------------------
// Observable tables

/// Identifies one table column: an observable name plus an entity label
/// (`v3` for vertex 3, `l7` for link 7).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnKey {
    pub observable: String,
    pub entity: String,
}

/// Per-cycle (or per-time) observable values, optionally with standard
/// errors from Monte-Carlo sector sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableTable {
    pub cycles: Vec<f64>,
    pub columns: Vec<ColumnKey>,
    /// Shape: (cycles, columns).
    pub values: Array2<f64>,
    pub stderr: Option<Array2<f64>>,
    pub n_samples: usize,
}

fn table_schema(g: &LatticeGraph) -> Vec<ColumnKey> {
    let mut cols = Vec::new();
    let key = |observable: &str, entity: String| ColumnKey {
        observable: observable.to_string(),
        entity,
    };
    for v in 0..g.n_matter() {
        cols.push(key("matter_pol", format!("v{v}")));
        cols.push(key("gauss", format!("v{v}")));
    }
    for l in 0..g.n_gauge() {
        cols.push(key("gauge_pol", format!("l{l}")));
        cols.push(key("interaction", format!("l{l}")));
        cols.push(key("mu_part", format!("l{l}")));
        cols.push(key("charge_part", format!("l{l}")));
        cols.push(key("energy", format!("l{l}")));
    }
    cols
}

fn table_row(g: &LatticeGraph, p: &TrotterParams, cycle: f64, obs: &SiteObservables) -> Result<Vec<f64>> {
    let profile = energy_per_link(g, p, obs, cycle)?;
    let mut row = Vec::with_capacity(2 * g.n_matter() + 5 * g.n_gauge());
    for v in 0..g.n_matter() {
        row.push(obs.matter_pol[v]);
        row.push(obs.gauss[v]);
    }
    for l in 0..g.n_gauge() {
        let e = &profile.links[l];
        row.push(e.gauge_pol);
        row.push(e.interaction);
        row.push(e.mu_part);
        row.push(e.charge_part);
        row.push(e.energy);
    }
    Ok(row)
}

impl ObservableTable {
    /// Builds a single-run table from per-cycle expectations; the per-link
    /// energy columns are derived with the given couplings.
    pub fn from_records(
        g: &LatticeGraph,
        p: &TrotterParams,
        records: &[(f64, SiteObservables)],
    ) -> Result<Self> {
        let columns = table_schema(g);
        let mut values = Array2::zeros((records.len(), columns.len()));
        for (r, (cycle, obs)) in records.iter().enumerate() {
            let row = table_row(g, p, *cycle, obs)?;
            for (c, v) in row.into_iter().enumerate() {
                values[(r, c)] = v;
            }
        }
        Ok(Self {
            cycles: records.iter().map(|&(c, _)| c).collect(),
            columns,
            values,
            stderr: None,
            n_samples: 1,
        })
    }

    fn column_index(&self, observable: &str, entity: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|k| k.observable == observable && k.entity == entity)
            .ok_or_else(|| {
                Error::Config(format!("no column ({observable}, {entity}) in table"))
            })
    }

    /// Column as a vector indexed by cycle.
    pub fn column(&self, observable: &str, entity: &str) -> Result<Vec<f64>> {
        let c = self.column_index(observable, entity)?;
        Ok(self.values.column(c).to_vec())
    }

    pub fn stderr_column(&self, observable: &str, entity: &str) -> Result<Option<Vec<f64>>> {
        let c = self.column_index(observable, entity)?;
        Ok(self.stderr.as_ref().map(|s| s.column(c).to_vec()))
    }

    /// All values of one observable at one cycle index, in entity order.
    pub fn row_of(&self, observable: &str, cycle_index: usize) -> Vec<f64> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, k)| k.observable == observable)
            .map(|(c, _)| self.values[(cycle_index, c)])
            .collect()
    }

    /// Long-format CSV: `cycle,entity,observable,value,stderr`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["cycle", "entity", "observable", "value", "stderr"])
            .map_err(csv_err)?;
        for (r, cycle) in self.cycles.iter().enumerate() {
            for (c, key) in self.columns.iter().enumerate() {
                let se = self.stderr.as_ref().map_or(0.0, |s| s[(r, c)]);
                out.write_record([
                    cycle.to_string(),
                    key.entity.clone(),
                    key.observable.clone(),
                    self.values[(r, c)].to_string(),
                    se.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn check_same_shape(tables: &[&ObservableTable]) -> Result<()> {
    let first = tables.first().ok_or_else(|| Error::Config("no tables to average".into()))?;
    for t in tables {
        if t.cycles != first.cycles || t.columns != first.columns {
            return Err(Error::Config("tables have mismatched shapes".into()));
        }
    }
    Ok(())
}

/// Exact weighted mean of per-sector tables (weights must sum to 1).
pub fn weighted_average(runs: &[(f64, ObservableTable)]) -> Result<ObservableTable> {
    let tables: Vec<&ObservableTable> = runs.iter().map(|(_, t)| t).collect();
    check_same_shape(&tables)?;
    let total: f64 = runs.iter().map(|&(w, _)| w).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("sector weights sum to {total}, not 1")));
    }
    let mut values = Array2::zeros(tables[0].values.dim());
    for (w, t) in runs {
        values.scaled_add(*w, &t.values);
    }
    Ok(ObservableTable {
        cycles: tables[0].cycles.clone(),
        columns: tables[0].columns.clone(),
        values,
        stderr: None,
        n_samples: runs.len(),
    })
}

/// Plain mean of equally weighted sampled tables, with elementwise standard
/// error of the mean.
pub fn sample_average(samples: &[ObservableTable]) -> Result<ObservableTable> {
    let tables: Vec<&ObservableTable> = samples.iter().collect();
    check_same_shape(&tables)?;
    let n = samples.len() as f64;
    let mut mean = Array2::zeros(tables[0].values.dim());
    for t in samples {
        mean.scaled_add(1.0 / n, &t.values);
    }
    let stderr = if samples.len() > 1 {
        let mut var = Array2::zeros(tables[0].values.dim());
        for t in samples {
            let d = &t.values - &mean;
            var += &(&d * &d);
        }
        Some(var.mapv(|v| (v / (n * (n - 1.0))).sqrt()))
    } else {
        None
    };
    Ok(ObservableTable {
        cycles: tables[0].cycles.clone(),
        columns: tables[0].columns.clone(),
        values: mean,
        stderr,
        n_samples: samples.len(),
    })
}

// ---------------------------------------------------------------------------
// Dual-frame Trotter evolution

/// One Trotter cycle on the gauge-only register. Mirrors the full-frame
/// cycle layer by layer under the basis change: the three-body layer becomes
/// `Rz(2 J dt)`, the matter layer becomes incident-link `X`-star rotations
/// with sector signs folded into the angle, and the gauge layer stays
/// `Rx(2 h dt)`.
pub fn build_dual_cycle(
    g: &LatticeGraph,
    p: &TrotterParams,
    sector: &ChargeSector,
    order: TrotterOrder,
) -> Result<Circuit> {
    if sector.len() != g.n_matter() {
        return Err(Error::Config(format!(
            "sector has {} charges for {} vertices",
            sector.len(),
            g.n_matter()
        )));
    }
    let mut c = Circuit::new(g.n_qubits(Frame::Dual));
    match order {
        TrotterOrder::First => {
            push_dual_z_layer(&mut c, g, p.j * p.dt)?;
            push_dual_x_layers(&mut c, g, p, sector)?;
        }
        TrotterOrder::Second => {
            push_dual_z_layer(&mut c, g, p.j * p.dt / 2.0)?;
            push_dual_x_layers(&mut c, g, p, sector)?;
            push_dual_z_layer(&mut c, g, p.j * p.dt / 2.0)?;
        }
    }
    Ok(c)
}

fn push_dual_z_layer(c: &mut Circuit, g: &LatticeGraph, theta: f64) -> Result<()> {
    let gates = (0..g.n_gauge())
        .map(|l| Gate::Rz { q: g.gauge_qubit(l, Frame::Dual), theta: 2.0 * theta })
        .collect();
    c.push_moment(gates)
}

fn push_dual_x_layers(
    c: &mut Circuit,
    g: &LatticeGraph,
    p: &TrotterParams,
    sector: &ChargeSector,
) -> Result<()> {
    // stars of neighboring vertices share a link: schedule greedily by
    // vertex color
    let mut vertex_color = vec![usize::MAX; g.n_matter()];
    for v in 0..g.n_matter() {
        let used: Vec<usize> = g
            .incident(v)
            .iter()
            .map(|&(_, w)| vertex_color[w])
            .filter(|&c| c != usize::MAX)
            .collect();
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
            .map(|v| Gate::ExpXstar {
                targets: g
                    .incident(v)
                    .iter()
                    .map(|&(l, _)| g.gauge_qubit(l, Frame::Dual))
                    .collect(),
                theta: p.mu * p.dt * sector.sign(v),
            })
            .collect();
        c.push_moment(gates)?;
    }
    let gates = (0..g.n_gauge())
        .map(|l| Gate::Rx { q: g.gauge_qubit(l, Frame::Dual), theta: 2.0 * p.h * p.dt })
        .collect();
    c.push_moment(gates)
}

/// Gauge-register product state from per-link Bloch vectors.
pub fn dual_product_state(g: &LatticeGraph, gauge_init: &[BlochVec]) -> Result<StateVector> {
    if gauge_init.len() != g.n_gauge() {
        return Err(Error::Config(format!(
            "{} gauge Bloch vectors for {} links",
            gauge_init.len(),
            g.n_gauge()
        )));
    }
    let mut single = Vec::with_capacity(g.n_gauge());
    for l in 0..g.n_gauge() {
        single.push(gauge_init[g.gauge_qubit(l, Frame::Dual)].state()?);
    }
    StateVector::product_state(&single)
}

/// Evolves one sector for `cycles` Trotter cycles, measuring the mapped
/// observables after every cycle (row 0 is the initial state).
pub fn dual_trotter_run(
    g: &LatticeGraph,
    p: &TrotterParams,
    order: TrotterOrder,
    sector: &ChargeSector,
    gauge_init: &[BlochVec],
    cycles: usize,
) -> Result<ObservableTable> {
    let cycle_circuit = build_dual_cycle(g, p, sector, order)?;
    let mut sv = dual_product_state(g, gauge_init)?;
    let mut records = Vec::with_capacity(cycles + 1);
    records.push((0.0, crate::observables::measure_dual_frame(&sv, g, sector)?));
    for cycle in 1..=cycles {
        sv.apply_circuit(&cycle_circuit)?;
        records.push((cycle as f64, crate::observables::measure_dual_frame(&sv, g, sector)?));
    }
    ObservableTable::from_records(g, p, &records)
}

/// Full-frame companion driver: evolves a prepared state with the full
/// Trotter cycle and measures every observable directly.
pub fn lgt_trotter_run(
    g: &LatticeGraph,
    p: &TrotterParams,
    order: TrotterOrder,
    initial: &StateVector,
    cycles: usize,
) -> Result<ObservableTable> {
    let cycle_circuit = crate::circuit::build_trotter_cycle(g, p, order);
    let mut sv = initial.clone();
    let mut records = Vec::with_capacity(cycles + 1);
    records.push((0.0, crate::observables::measure_lgt(&sv, g)?));
    for cycle in 1..=cycles {
        sv.apply_circuit(&cycle_circuit)?;
        records.push((cycle as f64, crate::observables::measure_lgt(&sv, g)?));
    }
    ObservableTable::from_records(g, p, &records)
}

// ---------------------------------------------------------------------------
// Disorder averaging

/// Sampling policy for disorder averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorBudget {
    /// Enumerate exactly when the ensemble has at most this many members.
    pub max_enumeration: usize,
    /// Monte-Carlo sample count above that.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for SectorBudget {
    fn default() -> Self {
        Self { max_enumeration: 1 << 12, mc_samples: 2000, seed: 7 }
    }
}

/// A disorder-averaged run plus the sector list that produced it (weights
/// for enumeration, uniform multiplicity for sampling).
#[derive(Debug, Clone)]
pub struct DisorderRun {
    pub table: ObservableTable,
    pub sectors: Vec<(ChargeSector, f64)>,
    /// True when the ensemble was enumerated exactly.
    pub exact: bool,
}

/// Versioned JSON format for persisted sector lists.
#[derive(Serialize, Deserialize)]
struct SectorFile {
    version: u32,
    sectors: Vec<Vec<i8>>,
    weights: Vec<f64>,
}

pub fn write_sectors_json<W: std::io::Write>(
    w: W,
    sectors: &[(ChargeSector, f64)],
) -> Result<()> {
    let file = SectorFile {
        version: 1,
        sectors: sectors.iter().map(|(s, _)| s.signs().to_vec()).collect(),
        weights: sectors.iter().map(|&(_, w)| w).collect(),
    };
    serde_json::to_writer_pretty(w, &file)?;
    Ok(())
}

pub fn read_sectors_json<R: std::io::Read>(r: R) -> Result<Vec<(ChargeSector, f64)>> {
    let file: SectorFile = serde_json::from_reader(r)?;
    if file.version != 1 {
        return Err(Error::Config(format!("unsupported sector file version {}", file.version)));
    }
    if file.sectors.len() != file.weights.len() {
        return Err(Error::Config("sector and weight counts differ".into()));
    }
    file.sectors
        .into_iter()
        .zip(file.weights)
        .map(|(signs, w)| Ok((ChargeSector::new(signs)?, w)))
        .collect()
}

/// Runs one sector with a per-sector evolution closure and averages per the
/// ensemble. The closure receives the sector and its gauge product state.
fn average_ensemble<F>(
    g: &LatticeGraph,
    ensemble: &DualEnsemble,
    budget: SectorBudget,
    mut run: F,
) -> Result<DisorderRun>
where
    F: FnMut(&ChargeSector, &[BlochVec]) -> Result<ObservableTable>,
{
    match ensemble {
        DualEnsemble::Single { sector, gauge_init } => Ok(DisorderRun {
            table: run(sector, gauge_init)?,
            sectors: vec![(sector.clone(), 1.0)],
            exact: true,
        }),
        DualEnsemble::Uniform { gauge_init } => {
            let n = g.n_matter();
            if n <= 30 && (1usize << n) <= budget.max_enumeration {
                let count = 1usize << n;
                let w = 1.0 / count as f64;
                let mut runs = Vec::with_capacity(count);
                let mut sectors = Vec::with_capacity(count);
                for index in 0..count {
                    let sector = ChargeSector::from_index(n, index);
                    runs.push((w, run(&sector, gauge_init)?));
                    sectors.push((sector, w));
                }
                Ok(DisorderRun { table: weighted_average(&runs)?, sectors, exact: true })
            } else {
                let mut rng = ChaCha12Rng::seed_from_u64(budget.seed);
                let mut samples = Vec::with_capacity(budget.mc_samples);
                let mut sectors = Vec::with_capacity(budget.mc_samples);
                let w = 1.0 / budget.mc_samples as f64;
                for _ in 0..budget.mc_samples {
                    let signs: Vec<i8> =
                        (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
                    let sector = ChargeSector::new(signs)?;
                    samples.push(run(&sector, gauge_init)?);
                    sectors.push((sector, w));
                }
                Ok(DisorderRun { table: sample_average(&samples)?, sectors, exact: false })
            }
        }
        DualEnsemble::ThetaFamily { theta, matter_signs, base_signs } => {
            let n_g = g.n_gauge();
            let flip_init = |flips: usize| -> Result<(ChargeSector, Vec<BlochVec>)> {
                let signs: Vec<i8> = (0..n_g)
                    .map(|l| if flips >> l & 1 == 0 { base_signs[l] } else { -base_signs[l] })
                    .collect();
                let sector = charges_from_x_signs(g, matter_signs, &signs)?;
                let init = signs.iter().map(|&s| BlochVec::x_axis(s)).collect();
                Ok((sector, init))
            };
            if n_g <= 30 && (1usize << n_g) <= budget.max_enumeration {
                let mut runs = Vec::new();
                let mut sectors = Vec::new();
                let mut skipped = 0.0;
                for flips in 0..(1usize << n_g) {
                    let w = theta_flip_weight(*theta, n_g, flips.count_ones() as usize);
                    if w < 1e-14 {
                        skipped += w;
                        continue;
                    }
                    let (sector, init) = flip_init(flips)?;
                    runs.push((w, run(&sector, &init)?));
                    sectors.push((sector, w));
                }
                // fold any numerically skipped weight into the first run so
                // weighted_average sees a proper distribution
                if let Some(first) = runs.first_mut() {
                    first.0 += skipped;
                    sectors[0].1 += skipped;
                }
                Ok(DisorderRun { table: weighted_average(&runs)?, sectors, exact: true })
            } else {
                // flipping each link independently with prob sin^2(theta/2)
                // samples exactly the product weighting
                let p_flip = (theta / 2.0).sin().powi(2);
                let mut rng = ChaCha12Rng::seed_from_u64(budget.seed);
                let mut samples = Vec::with_capacity(budget.mc_samples);
                let mut sectors = Vec::with_capacity(budget.mc_samples);
                let w = 1.0 / budget.mc_samples as f64;
                for _ in 0..budget.mc_samples {
                    let mut flips = 0usize;
                    for l in 0..n_g {
                        if rng.gen::<f64>() < p_flip {
                            flips |= 1 << l;
                        }
                    }
                    let (sector, init) = flip_init(flips)?;
                    samples.push(run(&sector, &init)?);
                    sectors.push((sector, w));
                }
                Ok(DisorderRun { table: sample_average(&samples)?, sectors, exact: false })
            }
        }
    }
}

/// Disorder-averaged Trotter dynamics of an initial-state ensemble.
pub fn disorder_average_trotter(
    g: &LatticeGraph,
    p: &TrotterParams,
    order: TrotterOrder,
    ensemble: &DualEnsemble,
    cycles: usize,
    budget: SectorBudget,
) -> Result<DisorderRun> {
    average_ensemble(g, ensemble, budget, |sector, init| {
        dual_trotter_run(g, p, order, sector, init, cycles)
    })
}

/// Matter imbalance of the tilted family under Trotter cycles:
/// `I(theta, c) = (1/N_m) sum_v <sX_v(c)><sX_v(0)>`.
pub fn imbalance_curve_trotter(
    g: &LatticeGraph,
    p: &TrotterParams,
    order: TrotterOrder,
    theta: f64,
    cycles: usize,
    budget: SectorBudget,
) -> Result<Vec<f64>> {
    let spec = crate::observables::InitialStateSpec::tilted(theta);
    let ensemble = crate::observables::dual_ensemble(&spec, g, p)?;
    let run = disorder_average_trotter(g, p, order, &ensemble, cycles, budget)?;
    imbalance_from_table(g, &run.table)
}

/// Imbalance series from an averaged table (row 0 is the initial state).
pub fn imbalance_from_table(g: &LatticeGraph, table: &ObservableTable) -> Result<Vec<f64>> {
    let init: Vec<f64> = (0..g.n_matter())
        .map(|v| table.column("matter_pol", &format!("v{v}")).map(|c| c[0]))
        .collect::<Result<_>>()?;
    (0..table.cycles.len())
        .map(|r| imbalance(&table.row_of("matter_pol", r), &init))
        .collect()
}

// ---------------------------------------------------------------------------
// Continuous-time Hamiltonian evolution

/// How to carry out continuous-time evolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvolutionMethod {
    /// Full eigendecomposition; exact at any horizon, O(4^n) memory.
    Dense,
    /// Adaptive Lanczos stepping with the given subspace size and local
    /// error tolerance.
    Krylov { dim: usize, tol: f64 },
    /// Dense up to 11 gauge qubits, Krylov(30, 1e-8) beyond.
    Auto,
}

/// Largest gauge register the continuous engine accepts.
pub const MAX_DUAL_QUBITS: usize = 20;

/// The fixed-sector dual Hamiltonian in the x-basis, where `h` and `mu`
/// terms are diagonal and the `J` term flips one basis bit per qubit.
pub struct DualHamiltonian<'a> {
    g: &'a LatticeGraph,
    p: TrotterParams,
    sector: ChargeSector,
    diag: Vec<f64>,
}

impl<'a> DualHamiltonian<'a> {
    pub fn new(g: &'a LatticeGraph, p: &TrotterParams, sector: &ChargeSector) -> Result<Self> {
        let n = g.n_qubits(Frame::Dual);
        if n > MAX_DUAL_QUBITS {
            return Err(Error::Capacity(format!(
                "continuous dual evolution capped at {MAX_DUAL_QUBITS} gauge qubits (requested {n})"
            )));
        }
        if sector.len() != g.n_matter() {
            return Err(Error::Config("sector length does not match lattice".into()));
        }
        // x-basis convention: bit l = 0 means link l in |+x>, eigenvalue +1
        let star_masks: Vec<(f64, usize)> = (0..g.n_matter())
            .map(|v| {
                let mut mask = 0usize;
                for &(l, _) in g.incident(v) {
                    mask |= 1 << g.gauge_qubit(l, Frame::Dual);
                }
                (p.mu * sector.sign(v), mask)
            })
            .collect();
        let dim = 1usize << n;
        let mut diag = vec![0.0; dim];
        for (i, d) in diag.iter_mut().enumerate() {
            let mut value = p.h * (n as f64 - 2.0 * (i.count_ones() as f64));
            for &(coeff, mask) in &star_masks {
                let sign = if (i & mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                value += coeff * sign;
            }
            *d = value;
        }
        Ok(Self { g, p: *p, sector: sector.clone(), diag })
    }

    pub fn n_qubits(&self) -> usize {
        self.g.n_qubits(Frame::Dual)
    }

    /// `out = H v` (x-basis).
    pub fn matvec(&self, v: &[C64], out: &mut [C64]) {
        let n = self.n_qubits();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = v[i] * self.diag[i];
            for l in 0..n {
                acc += v[i ^ (1 << l)] * self.p.j;
            }
            *o = acc;
        }
    }

    /// Dense real-symmetric matrix (x-basis).
    fn dense(&self) -> Array2<f64> {
        let dim = self.diag.len();
        let n = self.n_qubits();
        let mut h = Array2::zeros((dim, dim));
        for i in 0..dim {
            h[(i, i)] = self.diag[i];
            for l in 0..n {
                h[(i, i ^ (1 << l))] = self.p.j;
            }
        }
        h
    }

    /// Mapped observables of an x-basis state.
    fn observe(&self, sv: &StateVector) -> SiteObservables {
        let g = self.g;
        // roles swap in the x-basis: <X_l> is a diagonal sign sum, <Z_l> a
        // bit-flip overlap
        let gauge_pol = (0..g.n_gauge())
            .map(|l| sv.expect_z_string(1 << g.gauge_qubit(l, Frame::Dual)))
            .collect();
        let interaction = (0..g.n_gauge())
            .map(|l| sv.expect_x_string(1 << g.gauge_qubit(l, Frame::Dual)))
            .collect();
        let matter_pol = (0..g.n_matter())
            .map(|v| {
                let mut mask = 0usize;
                for &(l, _) in g.incident(v) {
                    mask |= 1 << g.gauge_qubit(l, Frame::Dual);
                }
                self.sector.sign(v) * sv.expect_z_string(mask)
            })
            .collect();
        let gauss = (0..g.n_matter()).map(|v| self.sector.sign(v)).collect();
        SiteObservables { matter_pol, gauge_pol, interaction, gauss }
    }

    /// Evolves a gauge product state through the listed times (must be
    /// sorted ascending, starting at or after 0), returning mapped
    /// observables at each time.
    pub fn evolve_observed(
        &self,
        gauge_init: &[BlochVec],
        times: &[f64],
        method: EvolutionMethod,
    ) -> Result<ObservableTable> {
        if times.windows(2).any(|w| w[0] > w[1]) || times.first().is_some_and(|&t| t < 0.0) {
            return Err(Error::Config("times must be sorted ascending and nonnegative".into()));
        }
        let mut sv = dual_product_state(self.g, gauge_init)?;
        // convert to the x-basis
        for q in 0..self.n_qubits() {
            sv.apply_gate(&Gate::H { q })?;
        }
        let method = match method {
            EvolutionMethod::Auto => {
                if self.n_qubits() <= 11 {
                    EvolutionMethod::Dense
                } else {
                    EvolutionMethod::Krylov { dim: 30, tol: 1e-8 }
                }
            }
            m => m,
        };
        let records = match method {
            EvolutionMethod::Dense => self.evolve_dense(&sv, times)?,
            EvolutionMethod::Krylov { dim, tol } => self.evolve_krylov(&sv, times, dim, tol)?,
            EvolutionMethod::Auto => unreachable!(),
        };
        ObservableTable::from_records(self.g, &self.p, &records)
    }

    fn evolve_dense(
        &self,
        psi0: &StateVector,
        times: &[f64],
    ) -> Result<Vec<(f64, SiteObservables)>> {
        let (evals, evecs) = self
            .dense()
            .eigh(UPLO::Lower)
            .map_err(|e| Error::Numerics(format!("eigendecomposition failed: {e}")))?;
        let dim = self.diag.len();
        let re = Array1::from_iter(psi0.amplitudes().iter().map(|a| a.re));
        let im = Array1::from_iter(psi0.amplitudes().iter().map(|a| a.im));
        // coefficients in the eigenbasis
        let c_re = evecs.t().dot(&re);
        let c_im = evecs.t().dot(&im);
        let mut records = Vec::with_capacity(times.len());
        for &t in times {
            let mut d_re = Array1::zeros(dim);
            let mut d_im = Array1::zeros(dim);
            for k in 0..dim {
                let (s, c) = (-evals[k] * t).sin_cos();
                // (c + i s)(c_re + i c_im)
                d_re[k] = c * c_re[k] - s * c_im[k];
                d_im[k] = c * c_im[k] + s * c_re[k];
            }
            let out_re = evecs.dot(&d_re);
            let out_im = evecs.dot(&d_im);
            let amps: Vec<C64> =
                (0..dim).map(|i| C64::new(out_re[i], out_im[i])).collect();
            let sv = StateVector::from_amplitudes(amps)?;
            records.push((t, self.observe(&sv)));
        }
        Ok(records)
    }

    fn evolve_krylov(
        &self,
        psi0: &StateVector,
        times: &[f64],
        dim: usize,
        tol: f64,
    ) -> Result<Vec<(f64, SiteObservables)>> {
        let mut amps = psi0.amplitudes().to_vec();
        let mut t_now = 0.0;
        let mut records = Vec::with_capacity(times.len());
        let mut dt_guess: f64 = 0.25;
        for &t in times {
            while t - t_now > 1e-12 {
                let dt = dt_guess.min(t - t_now);
                let taken = self.krylov_step(&mut amps, dt, dim, tol)?;
                t_now += taken;
                // grow cautiously after full-size accepted steps
                if (taken - dt).abs() < 1e-12 && taken >= dt_guess * 0.999 {
                    dt_guess *= 1.3;
                } else {
                    dt_guess = taken.max(1e-6);
                }
            }
            let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-8 {
                return Err(Error::Numerics(format!(
                    "evolution lost unitarity: |psi| = {norm}"
                )));
            }
            let sv = StateVector::from_amplitudes(amps.clone())?;
            records.push((t, self.observe(&sv)));
        }
        Ok(records)
    }

    /// One adaptive Lanczos step; returns the time actually advanced.
    fn krylov_step(
        &self,
        amps: &mut Vec<C64>,
        dt: f64,
        m: usize,
        tol: f64,
    ) -> Result<f64> {
        let dim_full = amps.len();
        let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m);
        let mut alpha = Vec::with_capacity(m);
        let mut beta = Vec::with_capacity(m);
        let mut v = amps.clone();
        let norm0 = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        for a in &mut v {
            *a /= norm0;
        }
        let mut w = vec![C64::new(0.0, 0.0); dim_full];
        for k in 0..m {
            self.matvec(&v, &mut w);
            let a_k: f64 = v.iter().zip(&w).map(|(x, y)| (x.conj() * y).re).sum();
            alpha.push(a_k);
            for i in 0..dim_full {
                w[i] -= v[i] * a_k;
                if k > 0 {
                    w[i] -= basis[k - 1][i] * beta[k - 1];
                }
            }
            basis.push(std::mem::replace(&mut v, Vec::new()));
            // full reorthogonalization for numerical stability
            for b in &basis {
                let overlap: C64 = b.iter().zip(&w).map(|(x, y)| x.conj() * y).sum();
                for i in 0..dim_full {
                    w[i] -= b[i] * overlap;
                }
            }
            let b_k = w.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            if b_k < 1e-12 || k == m - 1 {
                break;
            }
            beta.push(b_k);
            v = w.iter().map(|a| a / b_k).collect();
        }
        let k_dim = basis.len();
        // tridiagonal T in the Krylov basis
        let mut t_mat = Array2::zeros((k_dim, k_dim));
        for i in 0..k_dim {
            t_mat[(i, i)] = alpha[i];
            if i + 1 < k_dim {
                t_mat[(i, i + 1)] = beta[i];
                t_mat[(i + 1, i)] = beta[i];
            }
        }
        let (evals, evecs) = t_mat
            .eigh(UPLO::Lower)
            .map_err(|e| Error::Numerics(format!("Krylov eigensolve failed: {e}")))?;
        // coefficients of exp(-i T dt) e1; halve dt until the last basis
        // vector is barely used (the T build is reused, so retries are cheap)
        let mut step = dt;
        let coeffs = loop {
            let mut c = vec![C64::new(0.0, 0.0); k_dim];
            for (j, cj) in c.iter_mut().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..k_dim {
                    let phase = C64::from_polar(1.0, -evals[k] * step);
                    acc += phase * evecs[(0, k)] * evecs[(j, k)];
                }
                *cj = acc;
            }
            let tail = if k_dim >= 2 {
                c[k_dim - 1].norm() + c[k_dim - 2].norm()
            } else {
                0.0
            };
            if tail < tol || k_dim < m || step < 1e-9 {
                break c;
            }
            step *= 0.5;
        };
        let mut out = vec![C64::new(0.0, 0.0); dim_full];
        for (j, cj) in coeffs.iter().enumerate() {
            for i in 0..dim_full {
                out[i] += basis[j][i] * cj;
            }
        }
        for o in &mut out {
            *o *= norm0;
        }
        *amps = out;
        Ok(step)
    }
}

/// Disorder-averaged continuous-time evolution.
pub fn disorder_average_hamiltonian(
    g: &LatticeGraph,
    p: &TrotterParams,
    ensemble: &DualEnsemble,
    times: &[f64],
    method: EvolutionMethod,
    budget: SectorBudget,
) -> Result<DisorderRun> {
    average_ensemble(g, ensemble, budget, |sector, init| {
        DualHamiltonian::new(g, p, sector)?.evolve_observed(init, times, method)
    })
}

/// Matter imbalance of the tilted family under continuous-time evolution.
pub fn imbalance_curve_hamiltonian(
    g: &LatticeGraph,
    p: &TrotterParams,
    theta: f64,
    times: &[f64],
    method: EvolutionMethod,
    budget: SectorBudget,
) -> Result<Vec<f64>> {
    let spec = crate::observables::InitialStateSpec::tilted(theta);
    let ensemble = crate::observables::dual_ensemble(&spec, g, p)?;
    let run = disorder_average_hamiltonian(g, p, &ensemble, times, method, budget)?;
    imbalance_from_table(g, &run.table)
}

// ---------------------------------------------------------------------------
