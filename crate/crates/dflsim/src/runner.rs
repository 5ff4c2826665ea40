//! Versioned experiment configs, cross-field validation, deterministic
//! output files with a manifest, and the preset registry behind the CLI.
//!
//! A run is described by one JSON file (see [`ExperimentConfig`]); presets
//! ship as plain config files under `presets/` so the exact parameters are
//! reviewable without reading code. `validate` executes every cross-field
//! check without simulating anything and reports problems field by field;
//! `run` refuses invalid configs, executes the experiment, writes its data
//! files (CSV for tables, JSON for structured results) into the configured
//! directory under the output root, and finishes with a `manifest.json`
//! recording the config hash, code version, wall time, and every emitted
//! file — data files are byte-identical across reruns of the same config
//! with the same code version.
//!
//! Work inside a run (sectors, trajectories, measurement settings) executes
//! sequentially in a fixed order, so merges need no tie-breaking and results
//! cannot depend on scheduling.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::circuit::{TrotterOrder, TrotterParams, build_trotter_cycle};
use crate::dualsim::{
    MAX_DUAL_QUBITS, SectorBudget, disorder_average_trotter, dual_trotter_run, lgt_trotter_run,
};
use crate::grover::{self, CostInstance, PauliAxis, PauliTerm, cost_compare, write_cost_csv};
use crate::lattice::{Entity, Frame, LatticeGraph, LatticeSpec};
use crate::mps::mps_lgt_trotter_run;
use crate::noise::{
    DecayOutcome, NoiseModel, PostselectMode, mitigated_energy_run, write_yield_csv,
};
use crate::observables::{
    DualEnsemble, GaugePattern, InitialStateSpec, MatterPattern, csv_err, dual_ensemble,
    gauge_bloch, matter_bloch, prepare_lgt_state,
};
use crate::{Error, Result};

/// Config format version this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable naming the directory all run outputs live under.
pub const OUTPUT_ROOT_ENV: &str = "DFLSIM_OUTPUT_ROOT";
/// Dense statevector registers are refused above this size.
pub const MAX_STATEVECTOR_QUBITS: usize = 22;

// ---------------------------------------------------------------------------
// Config schema

/// Simulation engine backing a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EngineChoice {
    /// Dense full-register simulation.
    Statevector,
    /// Gauge-qubits-only simulation, sector by sector.
    Dual,
    /// Matrix-product simulation at bond dimension `chi`.
    Mps { chi: Option<usize> },
}

/// What the run computes and which extra knobs it takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentKind {
    /// Per-cycle observables and per-link energies -> `energy.csv`
    /// (plus `proxy.csv` on the matrix-product engine).
    Energy,
    /// Exact second-order Renyi entropy of a fixed qubit subset per cycle
    /// -> `entropy.csv`.
    Entropy { subsystem: Vec<usize> },
    /// Tilted-family matter imbalance across a theta sweep -> `imbalance.csv`.
    Imbalance { thetas: Vec<f64> },
    /// Noisy shots through the full mitigation pipeline ->
    /// `mitigated_energy.csv`, `yields.csv`, `decay.json`.
    Mitigation {
        shots: usize,
        trajectories: usize,
        postselect: PostselectMode,
        #[serde(default)]
        anchor: Option<Entity>,
    },
    /// Naive-sampling versus phase-estimation cost table -> `cost.csv`.
    GroverCost { observable: String, eps: Vec<f64> },
    /// Fidelity-proxy curves across bond dimensions -> `mps_scaling.csv`.
    MpsScaling { chis: Vec<usize> },
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Energy => "energy",
            ExperimentKind::Entropy { .. } => "entropy",
            ExperimentKind::Imbalance { .. } => "imbalance",
            ExperimentKind::Mitigation { .. } => "mitigation",
            ExperimentKind::GroverCost { .. } => "grover_cost",
            ExperimentKind::MpsScaling { .. } => "mps_scaling",
        }
    }
}

/// One experiment, fully specified. The seed is mandatory: every stochastic
/// choice in a run derives from it, which is what makes outputs reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub lattice: LatticeSpec,
    pub params: TrotterParams,
    pub order: TrotterOrder,
    pub initial_state: InitialStateSpec,
    pub engine: EngineChoice,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    pub cycles: usize,
    pub seed: u64,
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Stable 64-bit FNV-1a hash of the canonical JSON form, hex-encoded.
    /// Whitespace and key order in the input file do not affect it.
    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_string(self)?;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in canonical.as_bytes() {
            h ^= u64::from(*byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        Ok(format!("{h:016x}"))
    }
}

// ---------------------------------------------------------------------------
// Validation

/// One problem found by validation, attached to the config field it
/// concerns. Capacity problems (requests beyond an engine limit) are
/// distinguished so the CLI can exit with the matching code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub field: String,
    pub message: String,
    pub capacity: bool,
}

/// Everything `validate` found, renderable as a plain-text report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub problems: Vec<Problem>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn render(&self) -> String {
        if self.ok() {
            "ok".to_string()
        } else {
            self.problems
                .iter()
                .map(|p| format!("{}: {}", p.field, p.message))
                .collect::<Vec<_>>()
                .join("\n")
        }
    }

    /// Collapses the report into the error `run` refuses with.
    pub fn into_error(self) -> Option<Error> {
        if self.ok() {
            return None;
        }
        let capacity = self.problems.iter().any(|p| p.capacity);
        let text = self.render().replace('\n', "; ");
        Some(if capacity { Error::Capacity(text) } else { Error::Config(text) })
    }
}

struct Checker {
    problems: Vec<Problem>,
}

impl Checker {
    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.problems.push(Problem { field: field.into(), message: message.into(), capacity: false });
    }

    fn push_capacity(&mut self, field: &str, message: impl Into<String>) {
        self.problems.push(Problem { field: field.into(), message: message.into(), capacity: true });
    }
}

/// Runs every cross-field check without simulating anything.
pub fn validate_config(cfg: &ExperimentConfig) -> ValidationReport {
    let mut c = Checker { problems: Vec::new() };

    if cfg.schema_version != SCHEMA_VERSION {
        c.push(
            "schema_version",
            format!("unsupported version {} (this build reads {SCHEMA_VERSION})", cfg.schema_version),
        );
    }
    for (name, value) in [
        ("params.j", cfg.params.j),
        ("params.h", cfg.params.h),
        ("params.mu", cfg.params.mu),
        ("params.dt", cfg.params.dt),
        ("params.q", cfg.params.q),
    ] {
        if !value.is_finite() {
            c.push(name, "must be finite");
        }
    }

    let graph = match LatticeGraph::build(&cfg.lattice) {
        Ok(g) => Some(g),
        Err(e) => {
            c.push("lattice", e.to_string());
            None
        }
    };
    let Some(g) = graph else {
        return ValidationReport { problems: c.problems };
    };
    let n_lgt = g.n_qubits(Frame::Lgt);

    if let Err(e) = matter_bloch(&cfg.initial_state.matter, &g) {
        c.push("initial_state.matter", e.to_string());
    }
    if let Err(e) = gauge_bloch(&cfg.initial_state.gauge, &g, &cfg.params) {
        c.push("initial_state.gauge", e.to_string());
    }

    match cfg.engine {
        EngineChoice::Statevector => {
            if n_lgt > MAX_STATEVECTOR_QUBITS {
                c.push_capacity(
                    "engine",
                    format!(
                        "dense statevector of {n_lgt} qubits exceeds the \
                         {MAX_STATEVECTOR_QUBITS}-qubit cap"
                    ),
                );
            }
        }
        EngineChoice::Dual => {
            if g.n_gauge() > MAX_DUAL_QUBITS {
                c.push_capacity(
                    "engine",
                    format!(
                        "dual register of {} gauge qubits exceeds the \
                         {MAX_DUAL_QUBITS}-qubit cap",
                        g.n_gauge()
                    ),
                );
            }
            if let Err(e) = dual_ensemble(&cfg.initial_state, &g, &cfg.params) {
                c.push("engine", format!("dual engine needs a sector ensemble: {e}"));
            }
        }
        EngineChoice::Mps { chi } => {
            let scaling = matches!(cfg.experiment, ExperimentKind::MpsScaling { .. });
            match chi {
                None if !scaling => {
                    c.push("engine.chi", "matrix-product engine needs a bond dimension")
                }
                Some(0) => c.push("engine.chi", "bond dimension must be at least 1"),
                _ => {}
            }
        }
    }

    match (&cfg.noise, &cfg.experiment) {
        (Some(noise), ExperimentKind::Mitigation { .. }) => {
            if let Err(e) = noise.validate() {
                c.push("noise", e.to_string());
            }
            if noise.readout.len() != n_lgt {
                c.push(
                    "noise.readout",
                    format!("expected {n_lgt} per-qubit entries, got {}", noise.readout.len()),
                );
            }
        }
        (Some(_), _) => c.push("noise", "only mitigation experiments consume a noise model"),
        (None, ExperimentKind::Mitigation { .. }) => {
            c.push("noise", "mitigation experiments need a noise model")
        }
        (None, _) => {}
    }

    match &cfg.experiment {
        ExperimentKind::Energy => {}
        ExperimentKind::Entropy { subsystem } => {
            if cfg.engine != EngineChoice::Statevector {
                c.push("engine", "entropy experiments run on the dense statevector engine");
            }
            if subsystem.is_empty() {
                c.push("experiment.subsystem", "needs at least one qubit");
            }
            if subsystem.len() > 12 {
                c.push_capacity(
                    "experiment.subsystem",
                    format!("partial trace capped at 12 qubits (requested {})", subsystem.len()),
                );
            }
            let mut seen = vec![false; n_lgt];
            for &q in subsystem {
                if q >= n_lgt {
                    c.push("experiment.subsystem", format!("qubit {q} outside the {n_lgt}-qubit register"));
                } else if std::mem::replace(&mut seen[q], true) {
                    c.push("experiment.subsystem", format!("qubit {q} listed twice"));
                }
            }
        }
        ExperimentKind::Imbalance { thetas } => {
            if cfg.engine != EngineChoice::Dual {
                c.push("engine", "imbalance sweeps run on the dual engine");
            }
            if thetas.is_empty() {
                c.push("experiment.thetas", "needs at least one tilt angle");
            }
            if thetas.iter().any(|t| !t.is_finite()) {
                c.push("experiment.thetas", "angles must be finite");
            }
            let tilted = matches!(cfg.initial_state.matter, MatterPattern::StaggeredX)
                && matches!(cfg.initial_state.gauge, GaugePattern::ThetaTilted { .. });
            if !tilted {
                c.push(
                    "initial_state",
                    "imbalance sweeps use the staggered tilted family; the sweep overrides theta",
                );
            }
        }
        ExperimentKind::Mitigation { shots, trajectories, postselect, anchor } => {
            if cfg.engine != EngineChoice::Statevector {
                c.push("engine", "the mitigation pipeline samples the dense statevector engine");
            }
            if *shots == 0 {
                c.push("experiment.shots", "needs at least one shot");
            }
            if *trajectories == 0 {
                c.push("experiment.trajectories", "needs at least one noise trajectory");
            }
            if cfg.cycles < 3 {
                c.push("cycles", "decay characterization needs at least 3 cycles");
            }
            if let PostselectMode::LocalRadius(_) = postselect {
                match anchor {
                    None => c.push("experiment.anchor", "local postselection needs an anchor entity"),
                    Some(Entity::Vertex(v)) if *v >= g.n_matter() => {
                        c.push("experiment.anchor", format!("vertex {v} outside the lattice"))
                    }
                    Some(Entity::Link(l)) if *l >= g.n_gauge() => {
                        c.push("experiment.anchor", format!("link {l} outside the lattice"))
                    }
                    Some(_) => {}
                }
                if matches!(cfg.lattice, LatticeSpec::Custom { .. }) {
                    c.push(
                        "experiment.postselect",
                        "local postselection needs lattice coordinates; custom graphs carry none",
                    );
                }
            }
        }
        ExperimentKind::GroverCost { observable, eps } => {
            if cfg.engine != EngineChoice::Statevector {
                c.push("engine", "cost tables simulate the reflection operator densely");
            }
            if n_lgt > grover::MAX_SYSTEM_QUBITS {
                c.push_capacity(
                    "lattice",
                    format!(
                        "dense reflection capped at {} system qubits (this lattice needs {n_lgt})",
                        grover::MAX_SYSTEM_QUBITS
                    ),
                );
            }
            match PauliTerm::parse(observable) {
                Err(e) => c.push("experiment.observable", e.to_string()),
                Ok(term) => {
                    if term.qubit >= n_lgt {
                        c.push(
                            "experiment.observable",
                            format!("qubit {} outside the {n_lgt}-qubit register", term.qubit),
                        );
                    }
                    if term.axis != PauliAxis::X {
                        c.push(
                            "experiment.observable",
                            "only X observables commute with the conservation checks",
                        );
                    }
                }
            }
            if eps.is_empty() {
                c.push("experiment.eps", "needs at least one accuracy target");
            }
            for &e in eps {
                if !(e > 0.0 && e < 1.0) {
                    c.push("experiment.eps", format!("target {e} outside (0, 1)"));
                } else {
                    let m = ((1.0 / e).log2().ceil() as usize).max(1);
                    if m > grover::MAX_ANCILLAS {
                        c.push_capacity(
                            "experiment.eps",
                            format!(
                                "target {e} needs {m} ancillas, capped at {}",
                                grover::MAX_ANCILLAS
                            ),
                        );
                    }
                }
            }
            let quench = matches!(cfg.initial_state.matter, MatterPattern::AllPlusZ)
                && matches!(cfg.initial_state.gauge, GaugePattern::Aligned { .. });
            if !quench {
                c.push(
                    "initial_state",
                    "cost tables average over all sectors; use the superposition quench family",
                );
            }
        }
        ExperimentKind::MpsScaling { chis } => {
            if !matches!(cfg.engine, EngineChoice::Mps { .. }) {
                c.push("engine", "bond-dimension scaling runs on the matrix-product engine");
            }
            if chis.is_empty() {
                c.push("experiment.chis", "needs at least one bond dimension");
            }
            if chis.iter().any(|&x| x == 0) {
                c.push("experiment.chis", "bond dimensions must be at least 1");
            }
        }
    }

    ValidationReport { problems: c.problems }
}

// ---------------------------------------------------------------------------
// Presets

/// Built-in parameter sets, shipped as plain JSON files under `presets/`
/// and embedded here so the binary can run them from any directory.
pub const PRESETS: &[(&str, &str, &str)] = &[
    (
        "fig1-desk",
        "ring of 8 matter sites, superposition quench with a flipped center \
         link, dual engine: per-link energy dynamics",
        include_str!("../../../presets/fig1-desk.json"),
    ),
    (
        "fig4-desk",
        "16-qubit ring, first-order cycles, superposition quench: exact \
         half-system Renyi-2 entropy per cycle",
        include_str!("../../../presets/fig4-desk.json"),
    ),
];

/// Embedded config text of a preset, if the name is known.
pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _, _)| *n == name).map(|(_, _, text)| *text)
}

/// Loads a config from a file path, or from the preset registry when the
/// argument names a preset instead of an existing file.
pub fn load_config_arg(arg: &str) -> Result<ExperimentConfig> {
    let path = Path::new(arg);
    if path.exists() {
        let text = std::fs::read_to_string(path)?;
        return ExperimentConfig::from_json(&text);
    }
    if let Some(text) = preset(arg) {
        return ExperimentConfig::from_json(text);
    }
    Err(Error::Config(format!("`{arg}` is neither a config file nor a known preset")))
}

// ---------------------------------------------------------------------------
// Running

/// What `run` leaves behind.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub output_dir: PathBuf,
    /// Data files written, relative to `output_dir`, sorted.
    pub files: Vec<String>,
    pub manifest_path: PathBuf,
    pub wall_seconds: f64,
}

/// The provenance record written next to every run's data files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub experiment: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub wall_time_seconds: f64,
    /// Every data file of the run; nothing else is emitted.
    pub files: Vec<String>,
}

/// Output root: the environment override, or the current directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

/// Validates and executes a config, writing under [`output_root`].
pub fn run_config(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    run_config_with_root(cfg, &output_root())
}

/// Validates and executes a config, writing `<root>/<output_dir>/`.
pub fn run_config_with_root(cfg: &ExperimentConfig, root: &Path) -> Result<RunArtifacts> {
    if let Some(err) = validate_config(cfg).into_error() {
        return Err(err);
    }
    let dir = root.join(&cfg.output_dir);
    std::fs::create_dir_all(&dir)?;

    let start = Instant::now();
    let mut files = dispatch(cfg, &dir)?;
    files.sort();
    let wall_seconds = start.elapsed().as_secs_f64();

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        experiment: cfg.experiment.name().to_string(),
        config_hash: cfg.hash()?,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        wall_time_seconds: wall_seconds,
        files: files.clone(),
    };
    let manifest_path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&manifest_path, text)?;

    Ok(RunArtifacts { output_dir: dir, files, manifest_path, wall_seconds })
}

fn write_file(dir: &Path, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    std::fs::write(dir.join(name), buf)?;
    Ok(name.to_string())
}

fn dispatch(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<String>> {
    let g = LatticeGraph::build(&cfg.lattice)?;
    let mut files = Vec::new();
    match &cfg.experiment {
        ExperimentKind::Energy => match cfg.engine {
            EngineChoice::Statevector => {
                let initial = prepare_lgt_state(&cfg.initial_state, &g, &cfg.params)?;
                let table = lgt_trotter_run(&g, &cfg.params, cfg.order, &initial, cfg.cycles)?;
                files.push(write_file(dir, "energy.csv", |w| table.write_csv(w))?);
            }
            EngineChoice::Dual => {
                let ensemble = dual_ensemble(&cfg.initial_state, &g, &cfg.params)?;
                let table = match ensemble {
                    DualEnsemble::Single { sector, gauge_init } => {
                        dual_trotter_run(&g, &cfg.params, cfg.order, &sector, &gauge_init, cfg.cycles)?
                    }
                    other => {
                        let budget = SectorBudget { seed: cfg.seed, ..SectorBudget::default() };
                        disorder_average_trotter(&g, &cfg.params, cfg.order, &other, cfg.cycles, budget)?
                            .table
                    }
                };
                files.push(write_file(dir, "energy.csv", |w| table.write_csv(w))?);
            }
            EngineChoice::Mps { chi } => {
                let chi = chi.expect("validated");
                let run =
                    mps_lgt_trotter_run(&g, &cfg.params, cfg.order, &cfg.initial_state, cfg.cycles, chi)?;
                files.push(write_file(dir, "energy.csv", |w| run.table.write_csv(w))?);
                files.push(write_file(dir, "proxy.csv", |w| {
                    let mut out = csv::Writer::from_writer(w);
                    out.write_record(["cycle", "proxy"]).map_err(csv_err)?;
                    for (cycle, p) in run.proxies.iter().enumerate() {
                        out.write_record([cycle.to_string(), p.to_string()]).map_err(csv_err)?;
                    }
                    out.flush()?;
                    Ok(())
                })?);
            }
        },
        ExperimentKind::Entropy { subsystem } => {
            let mut sv = prepare_lgt_state(&cfg.initial_state, &g, &cfg.params)?;
            let cycle_circuit = build_trotter_cycle(&g, &cfg.params, cfg.order);
            let mut rows = Vec::with_capacity(cfg.cycles + 1);
            rows.push((0usize, sv.renyi2_entropy(subsystem)?));
            for cycle in 1..=cfg.cycles {
                sv.apply_circuit(&cycle_circuit)?;
                rows.push((cycle, sv.renyi2_entropy(subsystem)?));
            }
            files.push(write_file(dir, "entropy.csv", |w| {
                let mut out = csv::Writer::from_writer(w);
                out.write_record(["cycle", "renyi2"]).map_err(csv_err)?;
                for (cycle, s2) in rows {
                    out.write_record([cycle.to_string(), s2.to_string()]).map_err(csv_err)?;
                }
                out.flush()?;
                Ok(())
            })?);
        }
        ExperimentKind::Imbalance { thetas } => {
            let mut rows = Vec::new();
            for (i, &theta) in thetas.iter().enumerate() {
                let budget = SectorBudget {
                    seed: crate::noise::derive_stream(cfg.seed, i as u64),
                    ..SectorBudget::default()
                };
                let curve = crate::dualsim::imbalance_curve_trotter(
                    &g, &cfg.params, cfg.order, theta, cfg.cycles, budget,
                )?;
                for (cycle, value) in curve.into_iter().enumerate() {
                    rows.push((theta, cycle, value));
                }
            }
            files.push(write_file(dir, "imbalance.csv", |w| {
                let mut out = csv::Writer::from_writer(w);
                out.write_record(["theta", "cycle", "imbalance"]).map_err(csv_err)?;
                for (theta, cycle, value) in rows {
                    out.write_record([theta.to_string(), cycle.to_string(), value.to_string()])
                        .map_err(csv_err)?;
                }
                out.flush()?;
                Ok(())
            })?);
        }
        ExperimentKind::Mitigation { shots, trajectories, postselect, anchor } => {
            let noise = cfg.noise.as_ref().expect("validated");
            let run = mitigated_energy_run(
                &g,
                &cfg.params,
                cfg.order,
                &cfg.initial_state,
                cfg.cycles,
                noise,
                *shots,
                *trajectories,
                *postselect,
                *anchor,
            )?;
            files.push(write_file(dir, "mitigated_energy.csv", |w| {
                let mut out = csv::Writer::from_writer(w);
                out.write_record(["cycle", "link", "energy", "sigma", "raw_energy"])
                    .map_err(csv_err)?;
                for (i, &cycle) in run.cycles.iter().enumerate() {
                    for l in 0..g.n_gauge() {
                        out.write_record([
                            cycle.to_string(),
                            format!("l{l}"),
                            run.mitigated[i].links[l].energy.to_string(),
                            run.sigma[i][l].to_string(),
                            run.raw[i].links[l].energy.to_string(),
                        ])
                        .map_err(csv_err)?;
                    }
                }
                out.flush()?;
                Ok(())
            })?);
            files.push(write_file(dir, "yields.csv", |w| write_yield_csv(w, &run.yields))?);
            files.push(write_file(dir, "decay.json", |w| {
                #[derive(Serialize)]
                struct Decays<'a> {
                    gauge: &'a DecayOutcome,
                    matter: &'a DecayOutcome,
                    interaction: &'a DecayOutcome,
                }
                let mut text = serde_json::to_string_pretty(&Decays {
                    gauge: &run.gauge_decay,
                    matter: &run.matter_decay,
                    interaction: &run.interaction_decay,
                })?;
                text.push('\n');
                w.extend_from_slice(text.as_bytes());
                Ok(())
            })?);
        }
        ExperimentKind::GroverCost { observable, eps } => {
            let term = PauliTerm::parse(observable)?;
            let instance = CostInstance::from_uniform_quench(&g, &cfg.params, cfg.order, cfg.cycles, term)?;
            let rows = cost_compare(&instance, eps, cfg.seed)?;
            files.push(write_file(dir, "cost.csv", |w| write_cost_csv(w, &rows))?);
        }
        ExperimentKind::MpsScaling { chis } => {
            let mut rows = Vec::new();
            for &chi in chis {
                let run =
                    mps_lgt_trotter_run(&g, &cfg.params, cfg.order, &cfg.initial_state, cfg.cycles, chi)?;
                for (cycle, p) in run.proxies.iter().enumerate() {
                    rows.push((chi, cycle, *p));
                }
            }
            files.push(write_file(dir, "mps_scaling.csv", |w| {
                let mut out = csv::Writer::from_writer(w);
                out.write_record(["chi", "cycle", "proxy"]).map_err(csv_err)?;
                for (chi, cycle, p) in rows {
                    out.write_record([chi.to_string(), cycle.to_string(), p.to_string()])
                        .map_err(csv_err)?;
                }
                out.flush()?;
                Ok(())
            })?);
        }
    }
    Ok(files)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_energy_config() -> ExperimentConfig {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment: ExperimentKind::Energy,
            lattice: LatticeSpec::Ring1d { n_matter: 3 },
            params: TrotterParams::new(1.0, 1.3, 1.5, 0.25),
            order: TrotterOrder::Second,
            initial_state: InitialStateSpec::superposition_quench(vec![1]),
            engine: EngineChoice::Dual,
            noise: None,
            cycles: 3,
            seed: 11,
            output_dir: "energy-small".into(),
        }
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_fields() {
        let cfg = small_energy_config();
        let text = cfg.to_json().unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash().unwrap(), back.hash().unwrap());
        assert_eq!(cfg.hash().unwrap().len(), 16);

        let sneaky = text.replace("\"cycles\": 3", "\"cycles\": 3, \"cycels\": 4");
        let err = ExperimentConfig::from_json(&sneaky).unwrap_err();
        assert!(err.to_string().contains("cycels"), "field-level message: {err}");

        let missing_seed = text.replace("\"seed\": 11,", "");
        let err = ExperimentConfig::from_json(&missing_seed).unwrap_err();
        assert!(err.to_string().contains("seed"), "seed is mandatory: {err}");
    }

    #[test]
    fn presets_parse_validate_and_pin_their_parameters() {
        assert!(preset("fig1-desk").is_some());
        assert!(preset("fig4-desk").is_some());
        assert!(preset("fig9-desk").is_none());

        for (name, _, text) in PRESETS {
            let cfg = ExperimentConfig::from_json(text)
                .unwrap_or_else(|e| panic!("preset {name} must parse: {e}"));
            let report = validate_config(&cfg);
            assert!(report.ok(), "preset {name} must validate: {}", report.render());
            assert_eq!(cfg.output_dir, *name);
        }

        let fig1 = ExperimentConfig::from_json(preset("fig1-desk").unwrap()).unwrap();
        assert_eq!(fig1.lattice, LatticeSpec::Ring1d { n_matter: 8 });
        assert_eq!(
            (fig1.params.j, fig1.params.dt, fig1.params.h, fig1.params.mu),
            (1.0, 0.25, 1.3, 1.5)
        );
        assert_eq!(fig1.engine, EngineChoice::Dual);
        assert!(matches!(fig1.experiment, ExperimentKind::Energy));

        let fig4 = ExperimentConfig::from_json(preset("fig4-desk").unwrap()).unwrap();
        let g = LatticeGraph::build(&fig4.lattice).unwrap();
        assert_eq!(g.n_qubits(Frame::Lgt), 16);
        assert_eq!(fig4.order, TrotterOrder::First);
        assert_eq!((fig4.params.dt, fig4.params.h, fig4.params.mu), (0.4, 2.2, 2.0));
        assert!(matches!(fig4.experiment, ExperimentKind::Entropy { .. }));
    }

    #[test]
    fn validation_reports_field_level_problems() {
        // Bond dimension missing on the matrix-product engine.
        let mut cfg = small_energy_config();
        cfg.engine = EngineChoice::Mps { chi: None };
        let report = validate_config(&cfg);
        assert!(!report.ok());
        assert!(report.render().contains("engine.chi"), "{}", report.render());
        assert!(matches!(report.into_error(), Some(Error::Config(_))));

        // Forty-qubit dense request is a capacity problem.
        let mut cfg = small_energy_config();
        cfg.lattice = LatticeSpec::Ring1d { n_matter: 20 };
        cfg.engine = EngineChoice::Statevector;
        let report = validate_config(&cfg);
        assert!(report.problems.iter().any(|p| p.capacity));
        assert!(report.render().contains("40 qubits"), "{}", report.render());
        assert!(matches!(report.into_error(), Some(Error::Capacity(_))));

        // A valid config renders as plain "ok".
        assert_eq!(validate_config(&small_energy_config()).render(), "ok");

        // Noise attached to a noise-blind experiment is flagged.
        let mut cfg = small_energy_config();
        cfg.noise = Some(NoiseModel::noiseless(9, 1));
        let report = validate_config(&cfg);
        assert!(report.render().contains("noise"), "{}", report.render());

        // Imbalance demands the tilted family and the dual engine.
        let mut cfg = small_energy_config();
        cfg.experiment = ExperimentKind::Imbalance { thetas: vec![0.0] };
        cfg.engine = EngineChoice::Statevector;
        let report = validate_config(&cfg);
        assert!(report.render().contains("engine"));
        assert!(report.render().contains("initial_state"));

        // Cost tables reject non-X observables with a field pointer.
        let mut cfg = small_energy_config();
        cfg.experiment =
            ExperimentKind::GroverCost { observable: "Z4".into(), eps: vec![0.25] };
        cfg.engine = EngineChoice::Statevector;
        let report = validate_config(&cfg);
        assert!(report.render().contains("experiment.observable"), "{}", report.render());
    }

    #[test]
    fn energy_run_is_deterministic_and_fully_manifested() {
        let cfg = small_energy_config();
        let root_a = tempdir().unwrap();
        let root_b = tempdir().unwrap();
        let a = run_config_with_root(&cfg, root_a.path()).unwrap();
        let b = run_config_with_root(&cfg, root_b.path()).unwrap();
        assert_eq!(a.files, vec!["energy.csv".to_string()]);

        let bytes_a = std::fs::read(a.output_dir.join("energy.csv")).unwrap();
        let bytes_b = std::fs::read(b.output_dir.join("energy.csv")).unwrap();
        assert_eq!(bytes_a, bytes_b, "identical config + seed must give identical bytes");

        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(&a.manifest_path).unwrap()).unwrap();
        assert_eq!(manifest.config_hash, cfg.hash().unwrap());
        assert_eq!(manifest.seed, cfg.seed);
        assert_eq!(manifest.code_version, env!("CARGO_PKG_VERSION"));
        assert_eq!(manifest.experiment, "energy");

        // Every file in the output directory is the manifest or referenced by it.
        for entry in std::fs::read_dir(&a.output_dir).unwrap() {
            let name = entry.unwrap().file_name().into_string().unwrap();
            assert!(
                name == "manifest.json" || manifest.files.contains(&name),
                "orphan output {name}"
            );
        }
        for name in &manifest.files {
            assert!(a.output_dir.join(name).exists(), "manifest references missing {name}");
        }
    }

    #[test]
    fn zero_cycle_run_emits_only_cycle_zero_rows() {
        let mut cfg = small_energy_config();
        cfg.cycles = 0;
        cfg.engine = EngineChoice::Statevector;
        let root = tempdir().unwrap();
        let arts = run_config_with_root(&cfg, root.path()).unwrap();
        let text = std::fs::read_to_string(arts.output_dir.join("energy.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("cycle,entity,observable,value,stderr"));
        let mut rows = 0;
        for line in lines {
            assert!(line.starts_with("0,"), "unexpected non-initial row {line}");
            rows += 1;
        }
        assert_eq!(rows, 2 * 3 + 5 * 3, "full column set at cycle 0");
    }

    #[test]
    fn entropy_imbalance_and_cost_runs_write_their_tables() {
        let root = tempdir().unwrap();

        let mut cfg = small_energy_config();
        cfg.experiment = ExperimentKind::Entropy { subsystem: vec![0, 1, 3] };
        cfg.engine = EngineChoice::Statevector;
        cfg.output_dir = "entropy".into();
        let arts = run_config_with_root(&cfg, root.path()).unwrap();
        let text = std::fs::read_to_string(arts.output_dir.join("entropy.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + cfg.cycles + 1, "header plus one row per cycle");
        assert!(text.starts_with("cycle,renyi2\n"));
        let first = text.lines().nth(1).unwrap();
        let s2: f64 = first.rsplit(',').next().unwrap().parse().unwrap();
        assert!(s2.abs() < 1e-9, "product-state subsystem starts at zero entropy");

        let mut cfg = small_energy_config();
        cfg.lattice = LatticeSpec::OpenChain1d { n_matter: 4 };
        cfg.experiment =
            ExperimentKind::Imbalance { thetas: vec![0.0, std::f64::consts::FRAC_PI_2] };
        cfg.initial_state = InitialStateSpec::tilted(0.0);
        cfg.cycles = 2;
        cfg.output_dir = "imbalance".into();
        let arts = run_config_with_root(&cfg, root.path()).unwrap();
        let text = std::fs::read_to_string(arts.output_dir.join("imbalance.csv")).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 3);
        let first = text.lines().nth(1).unwrap();
        assert!(first.starts_with("0,0,"), "theta = 0, cycle 0 row first: {first}");
        let value: f64 = first.rsplit(',').next().unwrap().parse().unwrap();
        assert!((value - 1.0).abs() < 1e-12, "imbalance starts at exactly 1");

        let mut cfg = small_energy_config();
        cfg.lattice = LatticeSpec::OpenChain1d { n_matter: 2 };
        cfg.initial_state = InitialStateSpec::superposition_quench(vec![]);
        cfg.experiment =
            ExperimentKind::GroverCost { observable: "X2".into(), eps: vec![0.25, 0.125] };
        cfg.engine = EngineChoice::Statevector;
        cfg.cycles = 1;
        cfg.output_dir = "cost".into();
        let arts = run_config_with_root(&cfg, root.path()).unwrap();
        let text = std::fs::read_to_string(arts.output_dir.join("cost.csv")).unwrap();
        assert!(text.starts_with("epsilon,naive_shots,pe_applications,achieved_error\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn mps_scaling_run_writes_per_chi_proxies() {
        let mut cfg = small_energy_config();
        cfg.experiment = ExperimentKind::MpsScaling { chis: vec![2, 8] };
        cfg.engine = EngineChoice::Mps { chi: None };
        cfg.cycles = 2;
        cfg.output_dir = "scaling".into();
        let root = tempdir().unwrap();
        let arts = run_config_with_root(&cfg, root.path()).unwrap();
        let text = std::fs::read_to_string(arts.output_dir.join("mps_scaling.csv")).unwrap();
        assert!(text.starts_with("chi,cycle,proxy\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 3);
        for line in text.lines().skip(1) {
            let proxy: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert!(proxy > 0.0 && proxy <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn mitigation_run_writes_pipeline_outputs() {
        let mut cfg = small_energy_config();
        cfg.lattice = LatticeSpec::OpenChain1d { n_matter: 2 };
        cfg.initial_state = InitialStateSpec::superposition_quench(vec![]);
        cfg.engine = EngineChoice::Statevector;
        cfg.experiment = ExperimentKind::Mitigation {
            shots: 400,
            trajectories: 8,
            postselect: PostselectMode::Global,
            anchor: None,
        };
        cfg.noise = Some(NoiseModel::uniform(0.002, 0.01, 0.01, 3, 5).unwrap());
        cfg.cycles = 3;
        cfg.output_dir = "mitigation".into();
        let root = tempdir().unwrap();
        let arts = run_config_with_root(&cfg, root.path()).unwrap();
        assert_eq!(
            arts.files,
            vec!["decay.json".to_string(), "mitigated_energy.csv".into(), "yields.csv".into()]
        );
        let text =
            std::fs::read_to_string(arts.output_dir.join("mitigated_energy.csv")).unwrap();
        assert!(text.starts_with("cycle,link,energy,sigma,raw_energy\n"));
        assert_eq!(text.lines().count(), 1 + 4 * 1, "4 cycles, one link");
        let decay = std::fs::read_to_string(arts.output_dir.join("decay.json")).unwrap();
        assert!(decay.contains("gauge") && decay.contains("interaction"));
    }

    #[test]
    fn run_refuses_invalid_configs_with_matching_error_kind() {
        let root = tempdir().unwrap();
        let mut cfg = small_energy_config();
        cfg.engine = EngineChoice::Mps { chi: None };
        assert!(matches!(run_config_with_root(&cfg, root.path()), Err(Error::Config(_))));

        let mut cfg = small_energy_config();
        cfg.lattice = LatticeSpec::Ring1d { n_matter: 20 };
        cfg.engine = EngineChoice::Statevector;
        assert!(matches!(run_config_with_root(&cfg, root.path()), Err(Error::Capacity(_))));
    }

    #[test]
    fn config_arguments_resolve_to_files_or_presets() {
        let cfg = load_config_arg("fig1-desk").unwrap();
        assert_eq!(cfg.output_dir, "fig1-desk");

        let dir = tempdir().unwrap();
        let path = dir.path().join("my.json");
        std::fs::write(&path, small_energy_config().to_json().unwrap()).unwrap();
        let cfg = load_config_arg(path.to_str().unwrap()).unwrap();
        assert_eq!(cfg.output_dir, "energy-small");

        assert!(matches!(load_config_arg("no-such-thing"), Err(Error::Config(_))));
    }
}
