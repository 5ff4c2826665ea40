//! Desk-scale simulation laboratory for Z2 lattice gauge theory with Z2 matter.
//!
//! The crate models matter qubits on the vertices of a small lattice and gauge
//! qubits on its links, evolving them with Trotterized circuits of the
//! Hamiltonian
//!
//! ```text
//! H = sum_<j,k> ( J sZ_j Z_{j,k} sZ_k + h X_{j,k} ) + mu sum_j sX_j
//! ```
//!
//! where lowercase `s` marks matter operators. Every Gauss operator
//! `G_j = sX_j prod_{k in N(j)} X_{j,k}` commutes with `H` and with the
//! Trotterized cycle exactly, so each charge configuration `{g_j = +-1}` is a
//! conserved sector. Superposition states over sectors then behave like
//! disorder averages of a dual Ising model even though nothing in the system
//! is actually disordered, and local perturbations stay localized.
//!
//! What lives where:
//!
//! * [`lattice`] - rings, open chains, rectangular grids and custom graphs,
//!   plus the 1d snake ordering used by the matrix-product engine.
//! * [`circuit`] - a small moment-based gate IR, the charge/flux basis-change
//!   circuit, Trotter cycle builders and entangling-gate compilations.
//! * [`statevector`] - dense state simulation, Pauli expectations, subsystem
//!   purity, shot sampling and binary state dumps.
//! * [`dualsim`] - fixed-sector dynamics on gauge qubits only, exact or
//!   sampled disorder averages, long-time Hamiltonian evolution (dense and
//!   Krylov), and staggered-state imbalance sweeps.
//! * [`observables`] - initial-state preparation, per-link energy, dual-basis
//!   readout and the long-format dynamics tables written to CSV.
//! * [`mps`] - matrix-product states with bond-dimension-2 layer MPOs,
//!   truncation accounting, a multiplicative fidelity proxy and the
//!   `1/chi = A (1-f)^B` resource fit.
//! * [`entropy`] - randomized-measurement Renyi-2 estimation with the
//!   jackknife bias correction and window-averaged entropy profiles.
//! * [`noise`] - stochastic Pauli trajectories, readout confusion and
//!   inversion, charge postselection and depolarizing-decay rescaling.
//! * [`grover`] - Grover-style reflection operators whose eigenphases encode
//!   sector-averaged observables, textbook phase estimation and cost tables.
//! * [`runner`] - versioned experiment configs, presets, output manifests and
//!   the thin CLI entry points.

pub mod circuit;
pub mod dualsim;
pub mod entropy;
pub mod grover;
pub mod lattice;
pub mod mps;
pub mod noise;
pub mod observables;
pub mod runner;
pub mod statevector;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid lattice construction or lookup.
    #[error("lattice error: {0}")]
    Lattice(String),
    /// Invalid circuit construction or use.
    #[error("circuit error: {0}")]
    Circuit(String),
    /// A request exceeded a capacity limit (qubit count, matrix size, ...).
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    /// Invalid configuration or input data.
    #[error("config error: {0}")]
    Config(String),
    /// Numerical routine failed to converge or produced invalid output.
    #[error("numerics error: {0}")]
    Numerics(String),
    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// Malformed JSON input.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex64;
