//! Eigenstate expectations, state averages, and connected correlations.
//!
//! Observables are products of on-site Pauli factors. The whole artifact
//! works in real arithmetic, so `S^y` may enter any single operator only an
//! even number of times: each `S^y = i W` contributes a real antisymmetric
//! factor and one power of `i`, and an even count makes the product a real
//! matrix again (odd counts are rejected). Products are tracked in the real
//! Pauli group `{+-I, +-X, +-Z, +-W}` per site, so the Hermiticity check is
//! exact rather than numerical.
//!
//! Expectations can be computed from any orthogonal column basis — the flow
//! rotation or oracle eigenvectors — and the two routes are required to
//! agree after energy-ordered state matching.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::OperatorMatrix;
use crate::oracle::Spectrum;
use crate::stats;

#[derive(Debug, Error)]
pub enum ObservablesError {
    #[error("operator has an odd number of S^y factors; not real-representable")]
    OddYCount,
    #[error("operator product is antisymmetric (e.g. S^x S^z at one site); not Hermitian")]
    NonHermitian,
    #[error("factor site {site} outside chain of {n} sites")]
    SiteOutOfRange { site: usize, n: usize },
    #[error("translation moves a factor off the chain")]
    TranslationOutOfRange,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub site: usize,
    pub axis: Axis,
}

/// A product of on-site Pauli factors; factors at one site multiply in the
/// listed order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalOperatorSpec {
    pub factors: Vec<Factor>,
}

impl LocalOperatorSpec {
    /// Single-site `S^z` — the headline observable.
    pub fn sz(site: usize) -> Self {
        LocalOperatorSpec {
            factors: vec![Factor { site, axis: Axis::Z }],
        }
    }

    /// The same factor pattern shifted by `offset` sites.
    pub fn translated(&self, offset: isize) -> Result<Self, ObservablesError> {
        let factors = self
            .factors
            .iter()
            .map(|f| {
                let site = f.site as isize + offset;
                if site < 0 {
                    Err(ObservablesError::TranslationOutOfRange)
                } else {
                    Ok(Factor {
                        site: site as usize,
                        axis: f.axis,
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LocalOperatorSpec { factors })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Real single-site matrices closed under multiplication up to sign:
/// `X`, `Z`, `W = [[0,-1],[1,0]]` (with `S^y = i W`), and the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RealPauli {
    I,
    X,
    Z,
    W,
}

impl RealPauli {
    /// `self * rhs = sign * kind`.
    fn mul(self, rhs: RealPauli) -> (f64, RealPauli) {
        use RealPauli::*;
        match (self, rhs) {
            (I, p) | (p, I) => (1.0, p),
            (X, X) | (Z, Z) => (1.0, I),
            (W, W) => (-1.0, I),
            (X, Z) => (1.0, W),
            (Z, X) => (-1.0, W),
            (X, W) => (1.0, Z),
            (W, X) => (-1.0, Z),
            (Z, W) => (-1.0, X),
            (W, Z) => (1.0, X),
        }
    }

    fn antisymmetric(self) -> bool {
        self == RealPauli::W
    }
}

/// A compiled observable: a sign times a tensor product of real one-site
/// matrices, applied without materializing the dense matrix.
#[derive(Clone, Debug)]
pub struct LocalOperator {
    n: usize,
    sign: f64,
    site_factors: Vec<(usize, RealPauli)>,
}

impl LocalOperator {
    /// Compile a factor list, rejecting products that leave real symmetric
    /// arithmetic.
    pub fn build(spec: &LocalOperatorSpec, n: usize) -> Result<Self, ObservablesError> {
        let mut per_site: Vec<(f64, RealPauli)> = vec![(1.0, RealPauli::I); n];
        let mut y_count = 0usize;
        for f in &spec.factors {
            if f.site >= n {
                return Err(ObservablesError::SiteOutOfRange { site: f.site, n });
            }
            let (kind, dy) = match f.axis {
                Axis::X => (RealPauli::X, 0),
                Axis::Y => (RealPauli::W, 1),
                Axis::Z => (RealPauli::Z, 0),
            };
            y_count += dy;
            let (s, k) = per_site[f.site].1.mul(kind);
            per_site[f.site] = (per_site[f.site].0 * s, k);
        }
        if y_count % 2 == 1 {
            return Err(ObservablesError::OddYCount);
        }
        let w_parity = per_site
            .iter()
            .filter(|(_, k)| k.antisymmetric())
            .count()
            % 2;
        if w_parity == 1 {
            return Err(ObservablesError::NonHermitian);
        }
        let mut sign = if (y_count / 2) % 2 == 1 { -1.0 } else { 1.0 };
        let mut site_factors = Vec::new();
        for (site, (s, k)) in per_site.into_iter().enumerate() {
            sign *= s;
            if k != RealPauli::I {
                site_factors.push((site, k));
            }
        }
        Ok(LocalOperator {
            n,
            sign,
            site_factors,
        })
    }

    pub fn is_diagonal(&self) -> bool {
        self.site_factors.iter().all(|(_, k)| *k == RealPauli::Z)
    }

    /// Apply the operator to every column of `m`.
    pub fn apply_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m * self.sign;
        let cols = out.ncols();
        for &(site, kind) in &self.site_factors {
            let bit = 1usize << site;
            for c in 0..cols {
                for r0 in 0..out.nrows() {
                    if r0 & bit != 0 {
                        continue;
                    }
                    let r1 = r0 | bit;
                    let v0 = out[(r0, c)];
                    let v1 = out[(r1, c)];
                    match kind {
                        RealPauli::X => {
                            out[(r0, c)] = v1;
                            out[(r1, c)] = v0;
                        }
                        RealPauli::Z => {
                            out[(r1, c)] = -v1;
                        }
                        RealPauli::W => {
                            out[(r0, c)] = -v1;
                            out[(r1, c)] = v0;
                        }
                        RealPauli::I => {}
                    }
                }
            }
        }
        out
    }

    /// Dense matrix form (tests and small chains).
    pub fn to_matrix(&self) -> OperatorMatrix {
        let dim = 1usize << self.n;
        self.apply_matrix(&DMatrix::identity(dim, dim))
    }
}

/// Eigenstate expectation `(R^T O R)_{aa}`.
pub fn expectation(r: &OperatorMatrix, o: &OperatorMatrix, alpha: usize) -> f64 {
    assert!(alpha < r.ncols(), "state index out of range");
    let v = r.column(alpha);
    (o * v).dot(&v)
}

/// Connected correlation
/// `(R^T O_i O_j R)_{aa} - (R^T O_i R)_{aa} (R^T O_j R)_{aa}`.
pub fn connected_correlation(
    r: &OperatorMatrix,
    o_i: &OperatorMatrix,
    o_j: &OperatorMatrix,
    alpha: usize,
) -> f64 {
    assert!(alpha < r.ncols(), "state index out of range");
    let v = r.column(alpha);
    let jv = o_j * v;
    let prod = (o_i * &jv).dot(&v);
    prod - (o_i * v).dot(&v) * jv.dot(&v)
}

/// Expectations `(R^T O R)_{aa}` for every state at once.
pub fn expectation_all(r: &DMatrix<f64>, op: &LocalOperator) -> Vec<f64> {
    let or = op.apply_matrix(r);
    columnwise_dot(r, &or)
}

/// Connected correlations for every state at once.
pub fn connected_correlation_all(
    r: &DMatrix<f64>,
    op_i: &LocalOperator,
    op_j: &LocalOperator,
) -> Vec<f64> {
    let jr = op_j.apply_matrix(r);
    let ij = op_i.apply_matrix(&jr);
    let prod = columnwise_dot(r, &ij);
    let ei = expectation_all(r, op_i);
    let ej = columnwise_dot(r, &jr);
    prod.iter()
        .zip(ei.iter().zip(&ej))
        .map(|(p, (a, b))| p - a * b)
        .collect()
}

fn columnwise_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    (0..a.ncols()).map(|c| a.column(c).dot(&b.column(c))).collect()
}

/// State weighting for `Av_alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Weighting {
    Uniform,
    Gibbs { beta: f64 },
}

/// Weighted state average: uniform `2^-n` weights or normalized
/// `exp(-beta E_a)` (computed with a max shift, so it cannot overflow).
pub fn state_average(values: &[f64], weighting: &Weighting, energies: Option<&[f64]>) -> f64 {
    assert!(!values.is_empty());
    match weighting {
        Weighting::Uniform => values.iter().sum::<f64>() / values.len() as f64,
        Weighting::Gibbs { beta } => {
            let energies = energies.expect("Gibbs weighting needs energies");
            assert_eq!(energies.len(), values.len());
            let emin = energies.iter().copied().fold(f64::INFINITY, f64::min);
            let weights: Vec<f64> = energies.iter().map(|e| (-beta * (e - emin)).exp()).collect();
            let z: f64 = weights.iter().sum();
            values
                .iter()
                .zip(&weights)
                .map(|(v, w)| v * w)
                .sum::<f64>()
                / z
        }
    }
}

/// `|<S^z_site>_a|` for every state.
pub fn sz_abs_per_state(r: &DMatrix<f64>, site: usize, n: usize) -> Vec<f64> {
    let op = LocalOperator::build(&LocalOperatorSpec::sz(site), n).expect("S^z is Hermitian");
    expectation_all(r, &op).into_iter().map(f64::abs).collect()
}

/// State-averaged `|<S^z_site>|` for one realization.
pub fn localization_realization(
    r: &DMatrix<f64>,
    site: usize,
    n: usize,
    weighting: &Weighting,
    energies: Option<&[f64]>,
) -> f64 {
    let vals = sz_abs_per_state(r, site, n);
    state_average(&vals, weighting, energies)
}

#[derive(Clone, Debug, Serialize)]
pub struct ScoreSummary {
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_realizations: usize,
}

/// Disorder mean of per-realization localization values, with a normal CI.
pub fn localization_score(per_realization: &[f64]) -> ScoreSummary {
    let (mean, ci_lo, ci_hi) = stats::mean_ci(per_realization);
    ScoreSummary {
        mean,
        ci_lo,
        ci_hi,
        n_realizations: per_realization.len(),
    }
}

/// The centered site pair at a given separation.
pub fn centered_pair(n: usize, distance: usize) -> (usize, usize) {
    assert!(distance < n, "separation exceeds the chain");
    let i = (n - 1 - distance) / 2;
    (i, i + distance)
}

/// Per-realization correlation statistics at one pair: the maximum and the
/// weighted state average of `|<O_i; O_j>_a|`.
pub fn correlation_stats(
    r: &DMatrix<f64>,
    base: &LocalOperatorSpec,
    n: usize,
    i: usize,
    j: usize,
    weighting: &Weighting,
    energies: Option<&[f64]>,
) -> Result<(f64, f64), ObservablesError> {
    let op_i = LocalOperator::build(&base.translated(i as isize)?, n)?;
    let op_j = LocalOperator::build(&base.translated(j as isize)?, n)?;
    let corr: Vec<f64> = connected_correlation_all(r, &op_i, &op_j)
        .into_iter()
        .map(f64::abs)
        .collect();
    let max = corr.iter().fold(0.0f64, |m, c| m.max(*c));
    let avg = state_average(&corr, weighting, energies);
    Ok((max, avg))
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfileRow {
    pub distance: usize,
    pub median_max: f64,
    pub q90_max: f64,
    pub median_avg: f64,
    pub q90_avg: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrelationProfile {
    pub rows: Vec<ProfileRow>,
    pub n_realizations: usize,
}

/// Ensemble quantiles of the per-realization correlation statistics;
/// `per_realization[r]` holds `(distance, max_alpha, avg_alpha)` rows.
pub fn correlation_profile(per_realization: &[Vec<(usize, f64, f64)>]) -> CorrelationProfile {
    let mut by_distance: std::collections::BTreeMap<usize, (Vec<f64>, Vec<f64>)> =
        std::collections::BTreeMap::new();
    for rows in per_realization {
        for &(d, max, avg) in rows {
            let e = by_distance.entry(d).or_default();
            e.0.push(max);
            e.1.push(avg);
        }
    }
    let rows = by_distance
        .into_iter()
        .map(|(distance, (mut maxes, mut avgs))| {
            maxes.sort_by(f64::total_cmp);
            avgs.sort_by(f64::total_cmp);
            ProfileRow {
                distance,
                median_max: stats::quantile_sorted(&maxes, 0.5),
                q90_max: stats::quantile_sorted(&maxes, 0.9),
                median_avg: stats::quantile_sorted(&avgs, 0.5),
                q90_avg: stats::quantile_sorted(&avgs, 0.9),
            }
        })
        .collect();
    CorrelationProfile {
        rows,
        n_realizations: per_realization.len(),
    }
}

/// Match flow states to oracle states: sort both by energy, then resolve
/// near-degenerate clusters (relative gap below `rel_tol`) by maximal
/// column overlap. Returns `map[flow_slot] = oracle_index`.
pub fn match_states(
    flow_energies: &[f64],
    flow_vectors: &DMatrix<f64>,
    spectrum: &Spectrum,
    rel_tol: f64,
) -> Vec<usize> {
    let dim = flow_energies.len();
    assert_eq!(spectrum.len(), dim);
    let scale = spectrum
        .energies
        .iter()
        .fold(0.0f64, |m, e| m.max(e.abs()))
        .max(1e-300);
    let mut slots: Vec<usize> = (0..dim).collect();
    slots.sort_by(|&a, &b| flow_energies[a].total_cmp(&flow_energies[b]));

    let mut map = vec![0usize; dim];
    let mut pos = 0;
    while pos < dim {
        // oracle cluster of nearly equal energies
        let mut end = pos + 1;
        while end < dim && spectrum.energies[end] - spectrum.energies[end - 1] <= rel_tol * scale {
            end += 1;
        }
        if end - pos == 1 {
            map[slots[pos]] = pos;
        } else {
            // greedy overlap assignment within the cluster
            let mut taken = vec![false; end - pos];
            for &slot in &slots[pos..end] {
                let col = flow_vectors.column(slot);
                let mut best = usize::MAX;
                let mut best_ov = -1.0;
                for (off, t) in taken.iter().enumerate() {
                    if *t {
                        continue;
                    }
                    let ov = col.dot(&spectrum.vectors.column(pos + off)).abs();
                    if ov > best_ov {
                        best_ov = ov;
                        best = off;
                    }
                }
                taken[best] = true;
                map[slot] = pos + best;
            }
        }
        pos = end;
    }
    map
}

/// States whose oracle energy is isolated from both neighbors by more than
/// `rel_tol` times the spectral scale (the degeneracy-exclusion mask).
pub fn nondegenerate_mask(spectrum: &Spectrum, rel_tol: f64) -> Vec<bool> {
    let dim = spectrum.len();
    let scale = spectrum
        .energies
        .iter()
        .fold(0.0f64, |m, e| m.max(e.abs()))
        .max(1e-300);
    (0..dim)
        .map(|i| {
            let lo = i == 0 || spectrum.energies[i] - spectrum.energies[i - 1] > rel_tol * scale;
            let hi = i + 1 == dim
                || spectrum.energies[i + 1] - spectrum.energies[i] > rel_tol * scale;
            lo && hi
        })
        .collect()
}
