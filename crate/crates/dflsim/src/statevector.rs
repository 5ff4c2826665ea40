//! Dense statevector simulation of the gate IR.
//!
//! Amplitudes are stored little-endian: bit `q` of a basis index holds the
//! computational value of qubit `q`, so `|0...0>` is index 0 and qubit 0 is
//! the least significant bit. Global phase *is* tracked here — circuit
//! identities that only hold up to phase must compare accordingly.
//!
//! The register is capped at 26 qubits (1 GiB of amplitudes); everything this
//! crate runs in the full matter+gauge frame fits well below that.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use crate::circuit::{Circuit, Gate};
use crate::{C64, Error, Result};

/// Largest register the dense engine accepts.
pub const MAX_QUBITS: usize = 26;

/// Magic bytes opening the binary dump format.
pub const DUMP_MAGIC: &[u8; 8] = b"DFLSVEC\0";
/// Binary dump format version.
pub const DUMP_VERSION: u32 = 1;

/// A normalized pure state on `n_qubits` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<C64>,
}

fn check_capacity(n_qubits: usize) -> Result<()> {
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        return Err(Error::Capacity(format!(
            "dense statevector supports 1..={MAX_QUBITS} qubits (requested {n_qubits})"
        )));
    }
    Ok(())
}

impl StateVector {
    /// `|0...0>`.
    pub fn zero_state(n_qubits: usize) -> Result<Self> {
        Self::basis_state(n_qubits, 0)
    }

    /// The computational basis state with the given little-endian index.
    pub fn basis_state(n_qubits: usize, index: usize) -> Result<Self> {
        check_capacity(n_qubits)?;
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(Error::Circuit(format!(
                "basis index {index} outside register of {n_qubits} qubits"
            )));
        }
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        amps[index] = C64::new(1.0, 0.0);
        Ok(Self { n_qubits, amps })
    }

    /// Product state from per-qubit `(amp0, amp1)` pairs; each pair is
    /// normalized independently.
    pub fn product_state(single: &[(C64, C64)]) -> Result<Self> {
        check_capacity(single.len())?;
        let n = single.len();
        let mut amps = vec![C64::new(1.0, 0.0)];
        for &(a0, a1) in single {
            let norm = (a0.norm_sqr() + a1.norm_sqr()).sqrt();
            if norm < 1e-12 {
                return Err(Error::Circuit("null single-qubit state".into()));
            }
            let (a0, a1) = (a0 / norm, a1 / norm);
            let mut next = vec![C64::new(0.0, 0.0); amps.len() * 2];
            for (i, &amp) in amps.iter().enumerate() {
                next[i] = amp * a0;
                next[i | amps.len()] = amp * a1;
            }
            amps = next;
        }
        debug_assert_eq!(amps.len(), 1 << n);
        Ok(Self { n_qubits: n, amps })
    }

    /// Takes ownership of raw amplitudes (length must be a power of two);
    /// normalizes.
    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        let dim = amps.len();
        if !dim.is_power_of_two() {
            return Err(Error::Circuit(format!(
                "amplitude count {dim} is not a power of two"
            )));
        }
        let n_qubits = dim.trailing_zeros() as usize;
        check_capacity(n_qubits)?;
        let mut sv = Self { n_qubits, amps };
        sv.normalize()?;
        Ok(sv)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let norm = self.norm();
        if norm < 1e-12 {
            return Err(Error::Numerics("cannot normalize a null state".into()));
        }
        for a in &mut self.amps {
            *a /= norm;
        }
        Ok(())
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::Circuit("register mismatch in inner product".into()));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// `|<self|other>|^2`.
    pub fn fidelity(&self, other: &Self) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    // -- gate kernels -------------------------------------------------------

    /// Applies an arbitrary single-qubit matrix `[[u00, u01], [u10, u11]]`.
    fn apply_1q(&mut self, q: usize, u: [[C64; 2]; 2]) {
        let stride = 1usize << q;
        for base in (0..self.amps.len()).step_by(2 * stride) {
            for i in base..base + stride {
                let a0 = self.amps[i];
                let a1 = self.amps[i | stride];
                self.amps[i] = u[0][0] * a0 + u[0][1] * a1;
                self.amps[i | stride] = u[1][0] * a0 + u[1][1] * a1;
            }
        }
    }

    /// Applies an arbitrary 2x2 unitary to one qubit (row-major matrix).
    ///
    /// The matrix is trusted to be unitary; callers that construct it from
    /// rotations or tabulated Clifford entries keep the state normalized.
    pub fn apply_one_qubit_unitary(&mut self, q: usize, u: [[C64; 2]; 2]) -> Result<()> {
        if q >= self.n_qubits {
            return Err(Error::Circuit(format!(
                "single-qubit unitary targets qubit {q} outside register of {}",
                self.n_qubits
            )));
        }
        self.apply_1q(q, u);
        Ok(())
    }

    pub fn apply_gate(&mut self, gate: &Gate) -> Result<()> {
        for q in gate.targets() {
            if q >= self.n_qubits {
                return Err(Error::Circuit(format!(
                    "gate {gate:?} targets qubit {q} outside register of {}",
                    self.n_qubits
                )));
            }
        }
        let zero = C64::new(0.0, 0.0);
        match gate {
            Gate::Rx { q, theta } => {
                let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
                let (c, ms) = (C64::new(c, 0.0), C64::new(0.0, -s));
                self.apply_1q(*q, [[c, ms], [ms, c]]);
            }
            Gate::Rz { q, theta } => {
                let p0 = C64::from_polar(1.0, -theta / 2.0);
                let p1 = C64::from_polar(1.0, theta / 2.0);
                self.apply_1q(*q, [[p0, zero], [zero, p1]]);
            }
            Gate::H { q } => {
                let r = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                self.apply_1q(*q, [[r, r], [r, -r]]);
            }
            Gate::Cnot { c, t } => {
                let (cm, tm) = (1usize << c, 1usize << t);
                for i in 0..self.amps.len() {
                    if i & cm != 0 && i & tm == 0 {
                        self.amps.swap(i, i | tm);
                    }
                }
            }
            Gate::Cz { a, b } => {
                let mask = (1usize << a) | (1usize << b);
                for (i, amp) in self.amps.iter_mut().enumerate() {
                    if i & mask == mask {
                        *amp = -*amp;
                    }
                }
            }
            Gate::Cphase { a, b, phi } => {
                let mask = (1usize << a) | (1usize << b);
                let phase = C64::from_polar(1.0, *phi);
                for (i, amp) in self.amps.iter_mut().enumerate() {
                    if i & mask == mask {
                        *amp *= phase;
                    }
                }
            }
            Gate::ExpZzz { a, m, b, theta } => {
                // diagonal: amplitude picks up e^{-i theta s} with s the
                // Z-parity (+1 for an even number of set bits)
                let mask = (1usize << a) | (1usize << m) | (1usize << b);
                let even = C64::from_polar(1.0, -theta);
                let odd = C64::from_polar(1.0, *theta);
                for (i, amp) in self.amps.iter_mut().enumerate() {
                    *amp *= if (i & mask).count_ones() % 2 == 0 { even } else { odd };
                }
            }
            Gate::ExpXstar { targets, theta } => {
                let mut mask = 0usize;
                for &q in targets {
                    mask |= 1usize << q;
                }
                if mask == 0 {
                    return Err(Error::Circuit("empty X-star target set".into()));
                }
                // cos(theta) I - i sin(theta) X^{(x)k}: mixes i with i^mask
                let c = C64::new(theta.cos(), 0.0);
                let ms = C64::new(0.0, -theta.sin());
                for i in 0..self.amps.len() {
                    let j = i ^ mask;
                    if i < j {
                        let (ai, aj) = (self.amps[i], self.amps[j]);
                        self.amps[i] = c * ai + ms * aj;
                        self.amps[j] = c * aj + ms * ai;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn apply_circuit(&mut self, circuit: &Circuit) -> Result<()> {
        if circuit.n_qubits() != self.n_qubits {
            return Err(Error::Circuit(format!(
                "circuit register {} does not match state register {}",
                circuit.n_qubits(),
                self.n_qubits
            )));
        }
        for gate in circuit.gates() {
            self.apply_gate(gate)?;
        }
        Ok(())
    }

    // -- expectation values -------------------------------------------------

    /// Expectation of a product of `Z` over the qubits set in `mask`.
    pub fn expect_z_string(&self, mask: usize) -> f64 {
        self.amps
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let sign = if (i & mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                sign * a.norm_sqr()
            })
            .sum()
    }

    /// Expectation of a product of `X` over the qubits set in `mask`.
    pub fn expect_x_string(&self, mask: usize) -> f64 {
        self.amps
            .iter()
            .enumerate()
            .map(|(i, a)| (a.conj() * self.amps[i ^ mask]).re)
            .sum()
    }

    pub fn expect_x(&self, q: usize) -> f64 {
        self.expect_x_string(1usize << q)
    }

    pub fn expect_z(&self, q: usize) -> f64 {
        self.expect_z_string(1usize << q)
    }

    /// Probability of measuring each computational basis state.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Draws `shots` computational-basis samples (little-endian bitstrings).
    pub fn sample_bits(&self, rng: &mut impl Rng, shots: usize) -> Vec<usize> {
        let mut cdf = Vec::with_capacity(self.amps.len());
        let mut acc = 0.0;
        for a in &self.amps {
            acc += a.norm_sqr();
            cdf.push(acc);
        }
        let total = acc;
        (0..shots)
            .map(|_| {
                let r: f64 = rng.gen::<f64>() * total;
                cdf.partition_point(|&c| c <= r).min(self.amps.len() - 1)
            })
            .collect()
    }

    // -- reduced states -----------------------------------------------------

    /// Reduced density matrix on `qubits` (given order: `qubits[0]` is the
    /// least significant bit of the reduced index). Capped at 12 qubits.
    pub fn reduced_density_matrix(&self, qubits: &[usize]) -> Result<Array2<C64>> {
        let k = qubits.len();
        if k == 0 || k > 12 {
            return Err(Error::Capacity(format!(
                "reduced density matrix supports 1..=12 qubits (requested {k})"
            )));
        }
        let mut seen = vec![false; self.n_qubits];
        for &q in qubits {
            if q >= self.n_qubits {
                return Err(Error::Circuit(format!("qubit {q} outside register")));
            }
            if seen[q] {
                return Err(Error::Circuit(format!("duplicate qubit {q} in subsystem")));
            }
            seen[q] = true;
        }
        let sub_dim = 1usize << k;
        let env_dim = self.amps.len() >> k;
        let env_qubits: Vec<usize> =
            (0..self.n_qubits).filter(|&q| !seen[q]).collect();
        // m[e][a] = amplitude at subsystem index a, environment index e
        let mut m = Array2::<C64>::zeros((env_dim, sub_dim));
        for (i, &amp) in self.amps.iter().enumerate() {
            let mut a = 0usize;
            for (t, &q) in qubits.iter().enumerate() {
                a |= ((i >> q) & 1) << t;
            }
            let mut e = 0usize;
            for (t, &q) in env_qubits.iter().enumerate() {
                e |= ((i >> q) & 1) << t;
            }
            m[(e, a)] = amp;
        }
        // rho[a][a'] = sum_e psi(a, e) conj(psi(a', e))
        let rho = m.t().dot(&m.mapv(|z| z.conj()));
        Ok(rho)
    }

    /// Purity `Tr(rho^2)` of the reduced state on `qubits`.
    pub fn subsystem_purity(&self, qubits: &[usize]) -> Result<f64> {
        let rho = self.reduced_density_matrix(qubits)?;
        Ok(rho.iter().map(|z| z.norm_sqr()).sum())
    }

    /// Exact second Renyi entropy of the reduced state, in bits.
    pub fn renyi2_entropy(&self, qubits: &[usize]) -> Result<f64> {
        Ok(-self.subsystem_purity(qubits)?.log2())
    }

    // -- binary dump --------------------------------------------------------

    /// Writes the dump format: magic, version, qubit count, a bit-order tag
    /// (`b'L'` = qubit 0 is the least significant index bit), then
    /// interleaved `(re, im)` little-endian f64 amplitudes.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_qubits as u32).to_le_bytes())?;
        w.write_all(&[b'L'])?;
        for a in &self.amps {
            w.write_all(&a.re.to_le_bytes())?;
            w.write_all(&a.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Config("not a statevector dump (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != DUMP_VERSION {
            return Err(Error::Config(format!(
                "unsupported dump version {version} (expected {DUMP_VERSION})"
            )));
        }
        r.read_exact(&mut word)?;
        let n_qubits = u32::from_le_bytes(word) as usize;
        check_capacity(n_qubits)?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        if tag[0] != b'L' {
            return Err(Error::Config(format!(
                "unsupported bit-order tag {:?}",
                tag[0] as char
            )));
        }
        let mut amps = Vec::with_capacity(1 << n_qubits);
        let mut pair = [0u8; 16];
        for _ in 0..(1usize << n_qubits) {
            r.read_exact(&mut pair)?;
            let re = f64::from_le_bytes(pair[0..8].try_into().unwrap());
            let im = f64::from_le_bytes(pair[8..16].try_into().unwrap());
            amps.push(C64::new(re, im));
        }
        Ok(Self { n_qubits, amps })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_binary(&mut file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_binary(&mut file)
    }
}

/// `(|0> + s|1>)/sqrt(2)` component pair for building x-basis product states.
pub fn x_eigenstate(sign: i8) -> (C64, C64) {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    (C64::new(r, 0.0), C64::new(r * f64::from(sign.signum()), 0.0))
}

/// `|0>` or `|1>` component pair (+1 maps to `|0>`).
pub fn z_eigenstate(sign: i8) -> (C64, C64) {
    if sign >= 0 {
        (C64::new(1.0, 0.0), C64::new(0.0, 0.0))
    } else {
        (C64::new(0.0, 0.0), C64::new(1.0, 0.0))
    }
}

/// Normalized state with Bloch vector `(x, y, z)`:
/// `cos(a/2)|0> + e^{i phi} sin(a/2)|1>`.
pub fn bloch_state(x: f64, y: f64, z: f64) -> Result<(C64, C64)> {
    let r = (x * x + y * y + z * z).sqrt();
    if r < 1e-12 {
        return Err(Error::Circuit("null Bloch vector".into()));
    }
    let theta = (z / r).acos();
    let phi = y.atan2(x);
    Ok((
        C64::new((theta / 2.0).cos(), 0.0),
        C64::from_polar((theta / 2.0).sin(), phi),
    ))
}

// ---------------------------------------------------------------------------
