//! Disordered spin-chain model: couplings, diagonal energies, single-flip
//! energy differences, and the dense Hamiltonian in the configuration basis.
//!
//! Sites are indexed `0..n`. A basis vector is a classical configuration
//! `sigma` in `{-1,+1}^n`, encoded as an n-bit word with bit `b_i` giving
//! `sigma_i = 1 - 2*b_i` (so bit 0 means spin up and basis index 0 is the
//! all-up configuration). Spins outside the chain are frozen at +1, which
//! turns the two boundary bonds into edge fields.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense real symmetric operator in the spin-configuration basis.
pub type OperatorMatrix = DMatrix<f64>;

/// Largest chain length for which dense `2^n x 2^n` storage is allowed.
pub const MAX_SITES: usize = 14;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("chain length {0} exceeds the dense-storage cap of {MAX_SITES} sites")]
    SizeCap(usize),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("coupling arrays do not match the chain length: {0}")]
    Dimension(String),
}

/// A classical Ising configuration doubling as a Hilbert-space basis index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SpinConfig {
    bits: usize,
    n: usize,
}

impl SpinConfig {
    /// Configuration with basis index `bits` on a chain of `n` sites.
    pub fn from_index(bits: usize, n: usize) -> Self {
        assert!((1..=MAX_SITES).contains(&n), "chain length out of range");
        assert!(bits < (1 << n), "basis index out of range");
        SpinConfig { bits, n }
    }

    pub fn index(&self) -> usize {
        self.bits
    }

    /// Number of sites in the chain this configuration lives on.
    pub fn sites(&self) -> usize {
        self.n
    }

    /// Spin value at site `i`: +1.0 or -1.0. Sites outside the chain are
    /// frozen at +1 (plus boundary conditions).
    pub fn sigma(&self, i: isize) -> f64 {
        if i < 0 || i >= self.n as isize {
            1.0
        } else if self.bits >> (i as usize) & 1 == 1 {
            -1.0
        } else {
            1.0
        }
    }

    /// The configuration with the spin at site `i` flipped.
    pub fn flip(&self, i: usize) -> Self {
        assert!(i < self.n, "site index out of range");
        SpinConfig {
            bits: self.bits ^ (1 << i),
            n: self.n,
        }
    }
}

/// One realization of the random couplings, plus the transverse scale.
///
/// `j` holds the `n + 1` exchange bonds; `j[b]` couples sites `b-1` and `b`,
/// so `j[0]` and `j[n]` are the boundary bonds acting on frozen +1 spins.
/// The transverse coupling at site `i` is `gamma * Gamma[i]`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Disorder {
    pub n: usize,
    pub gamma: f64,
    pub h: Vec<f64>,
    #[serde(rename = "Gamma")]
    pub big_gamma: Vec<f64>,
    #[serde(rename = "J")]
    pub j: Vec<f64>,
}

impl Disorder {
    pub fn new(
        gamma: f64,
        h: Vec<f64>,
        big_gamma: Vec<f64>,
        j: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let n = h.len();
        let d = Disorder {
            n,
            gamma,
            h,
            big_gamma,
            j,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n < 1 {
            return Err(ModelError::InvalidParams("empty chain".into()));
        }
        if self.h.len() != self.n || self.big_gamma.len() != self.n {
            return Err(ModelError::Dimension(format!(
                "expected {} fields, got h: {}, Gamma: {}",
                self.n,
                self.h.len(),
                self.big_gamma.len()
            )));
        }
        if self.j.len() != self.n + 1 {
            return Err(ModelError::Dimension(format!(
                "expected {} bonds, got {}",
                self.n + 1,
                self.j.len()
            )));
        }
        if self.gamma.is_nan() || self.gamma < 0.0 {
            return Err(ModelError::InvalidParams(format!(
                "gamma must be nonnegative, got {}",
                self.gamma
            )));
        }
        let bounded = |v: &[f64]| v.iter().all(|x| x.is_finite() && x.abs() <= 1.0);
        if !bounded(&self.h) || !bounded(&self.big_gamma) || !bounded(&self.j) {
            return Err(ModelError::InvalidParams(
                "couplings must lie in [-1, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Transverse coupling `gamma_i = gamma * Gamma_i` at site `i`.
    pub fn gamma_at(&self, i: usize) -> f64 {
        self.gamma * self.big_gamma[i]
    }

    /// Exchange bond between sites `b-1` and `b` (`b` in `0..=n`).
    pub fn bond(&self, b: usize) -> f64 {
        self.j[b]
    }

    /// All couplings `(h, J, gamma*Gamma)` scaled by `lambda`, realized by
    /// scaling `h`, `J` and `Gamma`. Used by the radial-homogeneity checks;
    /// the scaled instance may leave the sampling range `[-1, 1]`, so no
    /// validation is applied.
    pub fn scaled(&self, lambda: f64) -> Disorder {
        Disorder {
            n: self.n,
            gamma: self.gamma,
            h: self.h.iter().map(|x| lambda * x).collect(),
            big_gamma: self.big_gamma.iter().map(|x| lambda * x).collect(),
            j: self.j.iter().map(|x| lambda * x).collect(),
        }
    }

    /// Euclidean norm of the coupling vector `(h, J, Gamma)` — the radial
    /// coordinate of the disorder realization.
    pub fn radius(&self) -> f64 {
        let ss: f64 = self
            .h
            .iter()
            .chain(self.j.iter())
            .chain(self.big_gamma.iter())
            .map(|x| x * x)
            .sum();
        ss.sqrt()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("disorder serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let d: Disorder =
            serde_json::from_str(s).map_err(|e| ModelError::InvalidParams(e.to_string()))?;
        d.validate()?;
        Ok(d)
    }
}

/// Coupling distribution. Every variant must have a bounded density on
/// `[-1, 1]`.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum CouplingLaw {
    /// Uniform on `[-1, 1]`; density 1/2.
    #[default]
    Uniform,
    /// Symmetric triangular on `[-1, 1]`; density peaks at 1.
    Triangular,
}

impl CouplingLaw {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            CouplingLaw::Uniform => rng.gen_range(-1.0..=1.0),
            CouplingLaw::Triangular => {
                let (u, v): (f64, f64) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
                u + v - 1.0
            }
        }
    }
}

/// Model parameters for sampling and resonance analysis.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelParams {
    pub n: usize,
    pub gamma: f64,
    /// Resonance cutoff; `None` means the default `gamma^(1/20)`.
    pub epsilon: Option<f64>,
    pub law: CouplingLaw,
}

impl ModelParams {
    pub fn new(n: usize, gamma: f64) -> Self {
        ModelParams {
            n,
            gamma,
            epsilon: None,
            law: CouplingLaw::Uniform,
        }
    }

    /// The resonance cutoff in effect: the override if set, else
    /// `gamma^(1/20)` (which is 0 when `gamma` is 0, so nothing resonates).
    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or_else(|| default_epsilon(self.gamma))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n < 1 {
            return Err(ModelError::InvalidParams("chain length must be >= 1".into()));
        }
        if self.gamma.is_nan() || self.gamma < 0.0 || self.gamma >= 1.0 {
            return Err(ModelError::InvalidParams(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        let eps = self.epsilon();
        if eps.is_nan() || !(0.0..1.0).contains(&eps) {
            return Err(ModelError::InvalidParams(format!(
                "epsilon must lie in [0, 1), got {eps}"
            )));
        }
        Ok(())
    }
}

/// Default resonance cutoff `gamma^(1/20)`.
pub fn default_epsilon(gamma: f64) -> f64 {
    if gamma == 0.0 {
        0.0
    } else {
        gamma.powf(0.05)
    }
}

/// Diagonal energy `E(sigma) = sum_i h_i sigma_i + sum_b J_b sigma_{b-1} sigma_b`
/// with the boundary spins frozen at +1.
pub fn diagonal_energy(sigma: SpinConfig, d: &Disorder) -> f64 {
    assert_eq!(sigma.sites(), d.n, "configuration/disorder length mismatch");
    let mut e = 0.0;
    for i in 0..d.n {
        e += d.h[i] * sigma.sigma(i as isize);
    }
    for b in 0..=d.n {
        e += d.j[b] * sigma.sigma(b as isize - 1) * sigma.sigma(b as isize);
    }
    e
}

/// Diagonal energies for every basis configuration, indexed by `sigma.index()`.
pub fn diagonal_energies(d: &Disorder) -> Vec<f64> {
    let dim = 1usize << d.n;
    (0..dim)
        .map(|idx| diagonal_energy(SpinConfig::from_index(idx, d.n), d))
        .collect()
}

/// Energy change of a single spin flip:
/// `E(sigma) - E(sigma^(i)) = 2 sigma_i (h_i + J_i sigma_{i+1} + J_{i-1} sigma_{i-1})`,
/// with frozen +1 neighbors at the boundary.
pub fn flip_energy_diff(sigma: SpinConfig, i: usize, d: &Disorder) -> f64 {
    assert_eq!(sigma.sites(), d.n, "configuration/disorder length mismatch");
    assert!(i < d.n, "site index out of range");
    let ii = i as isize;
    2.0 * sigma.sigma(ii)
        * (d.h[i] + d.j[i + 1] * sigma.sigma(ii + 1) + d.j[i] * sigma.sigma(ii - 1))
}

/// Dense Hamiltonian: diagonal entries `E(sigma)`, off-diagonal entries
/// `gamma * Gamma_i` between configurations differing by one flip.
///
/// Only shape is validated here: radially scaled disorders (couplings
/// outside the sampling range) are legitimate inputs for the homogeneity
/// checks.
pub fn build_hamiltonian(d: &Disorder) -> Result<OperatorMatrix, ModelError> {
    if d.n > MAX_SITES {
        return Err(ModelError::SizeCap(d.n));
    }
    if d.n < 1 || d.h.len() != d.n || d.big_gamma.len() != d.n || d.j.len() != d.n + 1 {
        return Err(ModelError::Dimension(format!(
            "chain of {} sites with h: {}, Gamma: {}, J: {}",
            d.n,
            d.h.len(),
            d.big_gamma.len(),
            d.j.len()
        )));
    }
    let dim = 1usize << d.n;
    let mut h = OperatorMatrix::zeros(dim, dim);
    let energies = diagonal_energies(d);
    for idx in 0..dim {
        h[(idx, idx)] = energies[idx];
        for i in 0..d.n {
            let flipped = idx ^ (1 << i);
            h[(idx, flipped)] = d.gamma_at(i);
        }
    }
    Ok(h)
}

/// Deterministic disorder realization for a seed: `3n + 1` independent draws
/// from the configured law, in the fixed order `h[0..n]`, `Gamma[0..n]`,
/// `J[0..=n]`.
pub fn sample_disorder(seed: u64, p: &ModelParams) -> Disorder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h: Vec<f64> = (0..p.n).map(|_| p.law.sample(&mut rng)).collect();
    let big_gamma: Vec<f64> = (0..p.n).map(|_| p.law.sample(&mut rng)).collect();
    let j: Vec<f64> = (0..=p.n).map(|_| p.law.sample(&mut rng)).collect();
    Disorder {
        n: p.n,
        gamma: p.gamma,
        h,
        big_gamma,
        j,
    }
}
