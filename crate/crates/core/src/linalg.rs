//! Dense-matrix helpers shared by the flow and the oracle.

use crate::model::OperatorMatrix;

/// Frobenius norm of the off-diagonal part.
pub fn offdiag_frobenius(m: &OperatorMatrix) -> f64 {
    let n = m.nrows();
    let mut s = 0.0;
    for r in 0..n {
        for c in 0..n {
            if r != c {
                s += m[(r, c)] * m[(r, c)];
            }
        }
    }
    s.sqrt()
}

/// Largest absolute off-diagonal entry.
pub fn max_abs_offdiag(m: &OperatorMatrix) -> f64 {
    let n = m.nrows();
    let mut best = 0.0f64;
    for r in 0..n {
        for c in 0..n {
            if r != c {
                best = best.max(m[(r, c)].abs());
            }
        }
    }
    best
}

/// Largest absolute deviation from symmetry, `max |M - M^T|`.
pub fn asymmetry(m: &OperatorMatrix) -> f64 {
    let n = m.nrows();
    let mut best = 0.0f64;
    for r in 0..n {
        for c in (r + 1)..n {
            best = best.max((m[(r, c)] - m[(c, r)]).abs());
        }
    }
    best
}

/// Replace `M` by `(M + M^T) / 2`.
pub fn symmetrize_in_place(m: &mut OperatorMatrix) {
    let n = m.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}

/// Largest absolute entry of `Q^T Q - I`; zero for an exactly orthogonal `Q`.
pub fn orthogonality_error(q: &OperatorMatrix) -> f64 {
    let n = q.nrows();
    let gram = q.transpose() * q;
    let mut best = 0.0f64;
    for r in 0..n {
        for c in 0..n {
            let target = if r == c { 1.0 } else { 0.0 };
            best = best.max((gram[(r, c)] - target).abs());
        }
    }
    best
}

/// Spectral scale used for relative tolerances: the largest absolute
/// diagonal entry plus the largest absolute row sum of off-diagonal entries
/// (a Gershgorin bound on the spectral radius), floored at 1e-300 so ratios
/// stay finite.
pub fn spectral_scale(m: &OperatorMatrix) -> f64 {
    let n = m.nrows();
    let mut best = 0.0f64;
    for r in 0..n {
        let mut row = 0.0;
        for c in 0..n {
            row += m[(r, c)].abs();
        }
        best = best.max(row);
    }
    best.max(1e-300)
}
