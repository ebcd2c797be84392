//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line (visible with `--nocapture`). Tolerances and thresholds
//! are pinned here, not configurable.
//!
//! Run with:
//!   cargo test -p spinflow --test acceptance -- --nocapture

use rayon::prelude::*;

use spinflow::flow::{self, FlowParams};
use spinflow::geometry;
use spinflow::harness::{self, derive_seed, Engine, RunConfig};
use spinflow::model::{build_hamiltonian, sample_disorder, Disorder, ModelParams};
use spinflow::observables::{self, LocalOperatorSpec, Weighting};
use spinflow::oracle;
use spinflow::stats;

fn criterion(number: usize, name: &str, body: impl FnOnce() -> Result<String, String>) {
    match body() {
        Ok(msg) => println!("criterion {number} PASS [{name}]: {msg}"),
        Err(msg) => {
            println!("criterion {number} FAIL [{name}]: {msg}");
            panic!("criterion {number} [{name}] failed: {msg}");
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($arg)+));
        }
    };
}

fn disorder_with(n: usize, gamma: f64, seed: u64) -> Disorder {
    let mut d = sample_disorder(seed, &ModelParams::new(n, gamma));
    d.gamma = gamma;
    d
}

#[test]
fn criterion_1_spectrum_invariance() {
    criterion(1, "spectrum invariance", || {
        let master = 0xC1;
        let mut worst_drift = 0.0f64;
        let mut worst_orth = 0.0f64;
        for &gamma in &[0.01, 0.05] {
            let results: Vec<Result<(f64, f64), String>> = (0..50u64)
                .into_par_iter()
                .map(|i| {
                    let d = disorder_with(8, gamma, derive_seed(master, i));
                    let state =
                        flow::run_flow(&d, &FlowParams::for_gamma(gamma)).map_err(|e| {
                            format!("gamma {gamma} realization {i}: {e}")
                        })?;
                    // run_flow hard-errors beyond the contracts; the trace
                    // carries the observed maxima
                    let drift = state
                        .trace
                        .iter()
                        .filter_map(|r| r.spectrum_drift)
                        .fold(0.0f64, f64::max);
                    let orth = state.trace.iter().map(|r| r.orth_error).fold(0.0, f64::max);
                    Ok((drift, orth))
                })
                .collect();
            for r in results {
                let (drift, orth) = r?;
                ensure!(drift <= 1e-9, "spectrum drift {drift:.3e} above 1e-9");
                ensure!(orth <= 1e-10, "rotation orthogonality error {orth:.3e} above 1e-10");
                worst_drift = worst_drift.max(drift);
                worst_orth = worst_orth.max(orth);
            }
        }
        Ok(format!(
            "50 realizations x gamma in {{0.01, 0.05}} at n = 8: max drift {worst_drift:.2e} (<= 1e-9), max R^T R - I {worst_orth:.2e} (<= 1e-10)"
        ))
    });
}

#[test]
fn criterion_2_oracle_equivalence() {
    criterion(2, "oracle equivalence", || {
        let master = 0xC2;
        let mut worst_eig = 0.0f64;
        let mut worst_overlap = 1.0f64;
        let mut worst_exp = 0.0f64;
        let mut worst_corr = 0.0f64;
        for &n in &[4usize, 6, 8] {
            let results: Vec<Result<(f64, f64, f64, f64), String>> = (0..100u64)
                .into_par_iter()
                .map(|i| {
                    let d = disorder_with(n, 0.02, derive_seed(master + n as u64, i));
                    let state = flow::run_flow(&d, &FlowParams::for_gamma(0.02))
                        .map_err(|e| format!("n {n} realization {i}: {e}"))?;
                    if !state.converged {
                        return Err(format!("n {n} realization {i} did not converge"));
                    }
                    let h = build_hamiltonian(&d).map_err(|e| e.to_string())?;
                    let spec = oracle::diagonalize(&h).map_err(|e| e.to_string())?;
                    let mut diag = state.diagonal();
                    diag.sort_by(f64::total_cmp);
                    let eig_err = diag
                        .iter()
                        .zip(&spec.energies)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max)
                        / state.scale;

                    let map = observables::match_states(
                        &state.diagonal(),
                        &state.r_cum,
                        &spec,
                        1e-10,
                    );
                    let mask = observables::nondegenerate_mask(&spec, 1e-10);
                    let mut min_overlap = 1.0f64;
                    for alpha in 0..map.len() {
                        if !mask[map[alpha]] {
                            continue;
                        }
                        let ov = state
                            .r_cum
                            .column(alpha)
                            .dot(&spec.vectors.column(map[alpha]))
                            .abs();
                        min_overlap = min_overlap.min(ov);
                    }

                    // expectations and connected correlations per state
                    let center = n / 2;
                    let base = LocalOperatorSpec::sz(0);
                    let op = observables::LocalOperator::build(
                        &LocalOperatorSpec::sz(center),
                        n,
                    )
                    .map_err(|e| e.to_string())?;
                    let flow_exp = observables::expectation_all(&state.r_cum, &op);
                    let oracle_exp = observables::expectation_all(&spec.vectors, &op);
                    let (i_site, j_site) = (center.saturating_sub(1), center + 1);
                    let op_i = observables::LocalOperator::build(
                        &base.translated(i_site as isize).map_err(|e| e.to_string())?,
                        n,
                    )
                    .map_err(|e| e.to_string())?;
                    let op_j = observables::LocalOperator::build(
                        &base.translated(j_site as isize).map_err(|e| e.to_string())?,
                        n,
                    )
                    .map_err(|e| e.to_string())?;
                    let flow_corr =
                        observables::connected_correlation_all(&state.r_cum, &op_i, &op_j);
                    let oracle_corr =
                        observables::connected_correlation_all(&spec.vectors, &op_i, &op_j);
                    let mut exp_err = 0.0f64;
                    let mut corr_err = 0.0f64;
                    for alpha in 0..map.len() {
                        if !mask[map[alpha]] {
                            continue;
                        }
                        exp_err = exp_err.max((flow_exp[alpha] - oracle_exp[map[alpha]]).abs());
                        corr_err =
                            corr_err.max((flow_corr[alpha] - oracle_corr[map[alpha]]).abs());
                    }
                    Ok((eig_err, min_overlap, exp_err, corr_err))
                })
                .collect();
            for r in results {
                let (eig_err, overlap, exp_err, corr_err) = r?;
                ensure!(eig_err <= 1e-8, "n {n}: eigenvalue mismatch {eig_err:.3e} above 1e-8");
                ensure!(overlap >= 0.999, "n {n}: matched overlap {overlap:.6} below 0.999");
                ensure!(exp_err <= 1e-6, "n {n}: expectation mismatch {exp_err:.3e} above 1e-6");
                ensure!(corr_err <= 1e-6, "n {n}: correlation mismatch {corr_err:.3e} above 1e-6");
                worst_eig = worst_eig.max(eig_err);
                worst_overlap = worst_overlap.min(overlap);
                worst_exp = worst_exp.max(exp_err);
                worst_corr = worst_corr.max(corr_err);
            }
        }
        Ok(format!(
            "100 realizations x n in {{4, 6, 8}} at gamma 0.02, all converged: eig err {worst_eig:.2e} (<= 1e-8), min overlap {worst_overlap:.6} (>= 0.999), expectation err {worst_exp:.2e}, correlation err {worst_corr:.2e} (<= 1e-6)"
        ))
    });
}

#[test]
fn criterion_3_exact_identities() {
    criterion(3, "exact identities", || {
        // gamma = 0: identity rotation, score exactly 1, correlations 0
        for i in 0..20u64 {
            let d = disorder_with(6, 0.0, derive_seed(0xC3, i));
            let state = flow::run_flow(&d, &FlowParams::for_gamma(0.0))
                .map_err(|e| e.to_string())?;
            let dim = 1usize << 6;
            ensure!(
                state.r_cum == spinflow::model::OperatorMatrix::identity(dim, dim),
                "gamma = 0 rotation is not bitwise identity (realization {i})"
            );
            let loc = observables::localization_realization(
                &state.r_cum,
                3,
                6,
                &Weighting::Uniform,
                None,
            );
            ensure!(loc == 1.0, "gamma = 0 score is {loc}, not exactly 1");
            let (max, avg) = observables::correlation_stats(
                &state.r_cum,
                &LocalOperatorSpec::sz(0),
                6,
                1,
                4,
                &Weighting::Uniform,
                None,
            )
            .map_err(|e| e.to_string())?;
            ensure!(max == 0.0 && avg == 0.0, "gamma = 0 correlations not exactly 0");
        }

        // radial homogeneity of eigenvalue differences
        let lambdas = [2.0, 0.5, 1.7, 3.3];
        let mut worst_dev = 0.0f64;
        let devs: Vec<Result<f64, String>> = (0..100u64)
            .into_par_iter()
            .map(|i| {
                let d = disorder_with(6, 0.05, derive_seed(0xC3 + 1, i));
                let lambda = lambdas[(i % 4) as usize];
                oracle::radial_scaling_check(&d, lambda).map_err(|e| e.to_string())
            })
            .collect();
        for r in devs {
            let dev = r?;
            ensure!(dev <= 1e-10, "homogeneity deviation {dev:.3e} above 1e-10");
            worst_dev = worst_dev.max(dev);
        }

        // radial derivative identity d/dr D_ab = D_ab / r
        let mut checked = 0;
        let mut crossings = 0;
        let mut worst_rel = 0.0f64;
        for i in 0..100u64 {
            let d = disorder_with(6, 0.05, derive_seed(0xC3 + 2, i));
            let (alpha, beta) = (48, 13);
            match oracle::radial_derivative_check(&d, alpha, beta, 1e-3) {
                Ok((fd, analytic)) => {
                    let rel = (fd / analytic - 1.0).abs();
                    ensure!(
                        rel <= 1e-6,
                        "radial derivative off by {rel:.3e} (fd {fd}, analytic {analytic})"
                    );
                    worst_rel = worst_rel.max(rel);
                    checked += 1;
                }
                Err(oracle::OracleError::LevelCrossing(_)) => crossings += 1,
                Err(e) => return Err(e.to_string()),
            }
        }
        ensure!(
            checked >= 95,
            "only {checked} derivative checks completed ({crossings} crossings)"
        );
        Ok(format!(
            "gamma = 0 identities machine-exact over 20 realizations; homogeneity deviation {worst_dev:.2e} (<= 1e-10) over 100 instances; radial derivative within {worst_rel:.2e} (<= 1e-6) on {checked} instances ({crossings} degenerate pairs reported)"
        ))
    });
}

#[test]
fn criterion_4_localization_trend() {
    criterion(4, "localization trend", || {
        let master = 0xC4;
        let gammas = [1e-3, 1e-2, 5e-2];
        let mut scores = Vec::new();
        for &gamma in &gammas {
            let vals: Vec<Result<f64, String>> = (0..200u64)
                .into_par_iter()
                .map(|i| {
                    // matched seeds: the disorder shape depends only on i
                    let d = disorder_with(8, gamma, derive_seed(master, i));
                    let h = build_hamiltonian(&d).map_err(|e| e.to_string())?;
                    let spec = oracle::diagonalize(&h).map_err(|e| e.to_string())?;
                    Ok(observables::localization_realization(
                        &spec.vectors,
                        4,
                        8,
                        &Weighting::Uniform,
                        None,
                    ))
                })
                .collect();
            let vals: Vec<f64> = vals.into_iter().collect::<Result<_, _>>()?;
            scores.push(observables::localization_score(&vals).mean);
        }
        ensure!(
            scores[0] >= 0.95,
            "score at gamma 1e-3 is {:.4}, below the pilot floor 0.95",
            scores[0]
        );
        ensure!(
            scores[0] >= scores[1] && scores[1] >= scores[2],
            "scores not monotone nonincreasing: {scores:?}"
        );
        Ok(format!(
            "n = 8, 200 matched realizations, uniform weights: scores {:.4} >= {:.4} >= {:.4}, floor 0.95 met",
            scores[0], scores[1], scores[2]
        ))
    });
}

#[test]
fn criterion_5_correlation_decay() {
    criterion(5, "correlation decay", || {
        let master = 0xC5;
        let n = 10;
        let distances: Vec<usize> = (2..=6).collect();
        let mut slopes = Vec::new();
        for &gamma in &[0.05, 0.02] {
            let stats_per: Vec<Result<Vec<f64>, String>> = (0..200u64)
                .into_par_iter()
                .map(|i| {
                    // matched seeds across the two gammas
                    let d = disorder_with(n, gamma, derive_seed(master, i));
                    let h = build_hamiltonian(&d).map_err(|e| e.to_string())?;
                    let spec = oracle::diagonalize(&h).map_err(|e| e.to_string())?;
                    distances
                        .iter()
                        .map(|&dist| {
                            let (a, b) = observables::centered_pair(n, dist);
                            observables::correlation_stats(
                                &spec.vectors,
                                &LocalOperatorSpec::sz(0),
                                n,
                                a,
                                b,
                                &Weighting::Uniform,
                                None,
                            )
                            .map(|(max, _)| max)
                            .map_err(|e| e.to_string())
                        })
                        .collect()
                })
                .collect();
            let stats_per: Vec<Vec<f64>> = stats_per.into_iter().collect::<Result<_, _>>()?;
            let mut medians = Vec::new();
            for (col, &dist) in distances.iter().enumerate() {
                let mut vals: Vec<f64> = stats_per.iter().map(|row| row[col]).collect();
                vals.sort_by(f64::total_cmp);
                let med = stats::quantile_sorted(&vals, 0.5);
                medians.push((dist, med));
            }
            let x: Vec<f64> = medians.iter().map(|(d, _)| *d as f64).collect();
            let y: Vec<f64> = medians.iter().map(|(_, m)| m.ln()).collect();
            let (slope, _) = stats::ols_line(&x, &y);
            // diagnostic: the slope on distances 2..4, where both couplings
            // stay above the double-precision measurement floor
            let (short_slope, _) = stats::ols_line(&x[..3], &y[..3]);
            println!(
                "  gamma {gamma}: log medians {:?} -> slope {slope:.3} (distances 2-4: {short_slope:.3})",
                medians
                    .iter()
                    .map(|(d, m)| format!("d{d}: {m:.3e}"))
                    .collect::<Vec<_>>()
            );
            slopes.push(slope);
        }
        ensure!(
            slopes[0] < 0.0,
            "slope at gamma 0.05 is {:.3}, not negative",
            slopes[0]
        );
        ensure!(
            slopes[1] < slopes[0],
            "slope at gamma 0.02 ({:.3}) is not strictly more negative than at 0.05 ({:.3}); at n = 10 the true correlations beyond distance ~4 at gamma 0.02 lie below the double-precision eigenvector noise floor (~2e-14), which flattens the log-median tail",
            slopes[1],
            slopes[0]
        );
        Ok(format!(
            "n = 10, 200 matched realizations: slope(0.05) = {:.3} < 0, slope(0.02) = {:.3} strictly steeper",
            slopes[0], slopes[1]
        ))
    });
}

#[test]
fn criterion_6_resonance_probability_scaling() {
    criterion(6, "resonance probability scaling", || {
        let eps_values = [0.05, 0.1, 0.2];
        let mut freqs = Vec::new();
        for (k, &eps) in eps_values.iter().enumerate() {
            let (freq, lo, hi) = geometry::site_resonance_frequency(eps, 100_000, 0xC6 + k as u64);
            let slack = 2.0 * eps * (1.0 + 3.0 * (hi - lo));
            ensure!(
                freq <= slack,
                "resonance frequency {freq:.4} at eps {eps} above 2 eps (1 + 3 CI) = {slack:.4}"
            );
            freqs.push(freq);
        }
        let (slope, r2) = stats::origin_fit(&eps_values, &freqs);
        ensure!(
            r2 >= 0.99,
            "through-origin fit R^2 = {r2:.4} below 0.99 (freqs {freqs:?})"
        );
        Ok(format!(
            "frequencies {:.4}/{:.4}/{:.4} at eps 0.05/0.1/0.2, all below 2 eps; linear through origin with slope {slope:.3}, R^2 = {r2:.5}",
            freqs[0], freqs[1], freqs[2]
        ))
    });
}

#[test]
fn criterion_7_connectivity_decay() {
    criterion(7, "connectivity decay", || {
        let eps = 0.2;
        let profile = geometry::step1_distance_profile(eps, 12, 10_000, 0xC7);
        let mut msg = Vec::new();
        let mut last = f64::INFINITY;
        for &(d, prob, lo, hi) in profile.iter().take(4) {
            let bound = (4.0 * 0.5 * eps).powi(d as i32 + 1) + 3.0 * (hi - lo);
            ensure!(
                prob < last,
                "same-block probability not decreasing at distance {d}: {prob:.4} after {last:.4}"
            );
            ensure!(
                prob <= bound,
                "probability {prob:.4} at distance {d} above the analytic bound {bound:.4}"
            );
            msg.push(format!("d{d}: {prob:.4} <= {bound:.4}"));
            last = prob;
        }
        Ok(format!(
            "step-1 same-block probabilities over 10^4 realizations at n = 12, eps = 0.2, decreasing and below (4 rho0 eps)^(d+1): {}",
            msg.join(", ")
        ))
    });
}

#[test]
fn criterion_8_level_statistics() {
    criterion(8, "level statistics instrument", || {
        let gamma = 0.05;
        let mut fits = Vec::new();
        for &n in &[6usize, 8] {
            // pilot pass (separate seed) pins the probe grid at matched
            // quantiles of the min-gap distribution, inside the power-law
            // window of the curve
            let pilot_gaps: Vec<f64> = (0..400u64)
                .into_par_iter()
                .map(|i| {
                    let d = disorder_with(n, gamma, derive_seed(0xC8 + n as u64, i));
                    let h = build_hamiltonian(&d).unwrap();
                    let vals = oracle::eigenvalues(&h).unwrap();
                    vals.windows(2)
                        .map(|w| w[1] - w[0])
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let mut sorted = pilot_gaps.clone();
            sorted.sort_by(f64::total_cmp);
            let grid: Vec<f64> = [0.03, 0.06, 0.12, 0.25]
                .iter()
                .map(|&q| stats::quantile_sorted(&sorted, q))
                .collect();

            let disorders: Vec<Disorder> = (0..2000u64)
                .map(|i| disorder_with(n, gamma, derive_seed(0xC80 + n as u64, i)))
                .collect();
            let report =
                oracle::estimate_level_statistics(&disorders, &grid, 300, 0xC8F + n as u64)
                    .map_err(|e| e.to_string())?;
            for w in report.points.windows(2) {
                ensure!(
                    w[0].prob <= w[1].prob,
                    "n {n}: curve not monotone at delta {}",
                    w[1].delta
                );
            }
            let nu = report
                .fitted_nu
                .ok_or_else(|| format!("n {n}: no nu fit (flagged report)"))?;
            let (lo, hi) = report
                .nu_ci
                .ok_or_else(|| format!("n {n}: no bootstrap CI"))?;
            ensure!(nu > 0.0, "n {n}: fitted nu {nu:.3} not positive");
            ensure!(lo > 0.0, "n {n}: bootstrap CI [{lo:.3}, {hi:.3}] does not exclude 0");
            fits.push((n, nu, lo, hi));
        }
        let (n_a, nu_a, lo_a, hi_a) = fits[0];
        let (n_b, nu_b, lo_b, hi_b) = fits[1];
        ensure!(
            nu_a >= lo_b && nu_a <= hi_b && nu_b >= lo_a && nu_b <= hi_a,
            "nu estimates not mutually contained: n {n_a}: {nu_a:.3} [{lo_a:.3}, {hi_a:.3}], n {n_b}: {nu_b:.3} [{lo_b:.3}, {hi_b:.3}]"
        );
        Ok(format!(
            "2000 realizations each: nu({n_a}) = {nu_a:.3} [{lo_a:.3}, {hi_a:.3}], nu({n_b}) = {nu_b:.3} [{lo_b:.3}, {hi_b:.3}]; curves monotone, CIs exclude 0, estimates mutually contained"
        ))
    });
}

#[test]
fn criterion_9_determinism_and_parallel_soundness() {
    criterion(9, "determinism and parallel soundness", || {
        let mut cfg = RunConfig {
            n: 6,
            gammas: vec![0.03],
            realizations: 24,
            master_seed: 0xC9,
            engine: Engine::Flow,
            workers: 1,
            ..RunConfig::default()
        };
        let first = harness::run_ensemble(&cfg).map_err(|e| e.to_string())?;
        let repeat = harness::run_ensemble(&cfg).map_err(|e| e.to_string())?;
        cfg.workers = 8;
        let wide = harness::run_ensemble(&cfg).map_err(|e| e.to_string())?;

        let norm = |mut r: harness::EnsembleReport| {
            r.config.workers = 0;
            serde_json::to_string(&r.reports).expect("serializes")
        };
        let a = norm(first);
        let b = norm(repeat);
        let c = norm(wide);
        ensure!(a == b, "repeated run with the same master seed differs");
        ensure!(a == c, "aggregates differ between 1 and 8 workers");
        Ok(format!(
            "flow ensembles at n = 6 (24 realizations): aggregates byte-identical across repeats and worker counts 1 vs 8 ({} bytes)",
            a.len()
        ))
    });
}
