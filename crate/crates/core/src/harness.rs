//! Seeded ensemble driver, aggregation, and report emission.
//!
//! Per-realization seeds come from a SplitMix64 mix of the master seed and
//! the realization index, so records are portable and any realization can
//! be reproduced in isolation. Realizations run in parallel on a local
//! thread pool; results are collected in index order and aggregated
//! sequentially, which makes every aggregate independent of the worker
//! count and completion order.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{self, FlowParams, StepRecord};
use crate::geometry::{self, BlockSet, ConnectivityEstimate, ConnectivityKind};
use crate::model::{self, Disorder, ModelParams, MAX_SITES};
use crate::observables::{self, CorrelationProfile, LocalOperatorSpec, ScoreSummary, Weighting};
use crate::oracle::{self, LevelStatsReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{failed} of {total} realizations failed (more than 1%)")]
    ExcessiveFailures { failed: usize, total: usize },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Flow(#[from] crate::flow::FlowError),
    #[error(transparent)]
    Oracle(#[from] crate::oracle::OracleError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// Which engine produces the rotation/eigenbasis per realization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// The multiscale rotation flow (full taxonomy and trace).
    Flow,
    /// Dense exact diagonalization (step-1 taxonomy only; faster at
    /// larger `n`).
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Full description of an ensemble run. Every emitted byte except wall
/// time is a pure function of this struct.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub gammas: Vec<f64>,
    /// Resonance-cutoff override; `None` means `gamma^(1/20)`.
    pub epsilon: Option<f64>,
    pub realizations: usize,
    pub master_seed: u64,
    pub weighting: Weighting,
    pub delta_grid: Vec<f64>,
    /// Anchored observable template, translated to each probe site.
    pub observable: LocalOperatorSpec,
    pub engine: Engine,
    pub max_steps: usize,
    pub offdiag_tol: f64,
    pub track_spectrum: bool,
    pub workers: usize,
    pub format: ReportFormat,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 8,
            gammas: vec![0.02],
            epsilon: None,
            realizations: 100,
            master_seed: 1,
            weighting: Weighting::Uniform,
            delta_grid: default_delta_grid(),
            observable: LocalOperatorSpec::sz(0),
            engine: Engine::Flow,
            max_steps: 16,
            offdiag_tol: 1e-12,
            track_spectrum: true,
            workers: 1,
            format: ReportFormat::Csv,
            out_dir: None,
        }
    }
}

/// Log-spaced default grid for the gap-statistics curve.
pub fn default_delta_grid() -> Vec<f64> {
    (0..13).map(|i| 1e-5 * 10f64.powf(i as f64 / 3.0)).collect()
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.realizations < 1 {
            return Err(HarnessError::InvalidConfig(
                "realizations must be at least 1".into(),
            ));
        }
        if self.n < 1 || self.n > MAX_SITES {
            return Err(HarnessError::InvalidConfig(format!(
                "n must lie in 1..={MAX_SITES}"
            )));
        }
        if self.gammas.is_empty() {
            return Err(HarnessError::InvalidConfig("no gamma values given".into()));
        }
        for &g in &self.gammas {
            if g.is_nan() || !(0.0..1.0).contains(&g) {
                return Err(HarnessError::InvalidConfig(format!(
                    "gamma must lie in [0, 1), got {g}"
                )));
            }
        }
        if let Some(eps) = self.epsilon {
            if eps.is_nan() || !(0.0..1.0).contains(&eps) {
                return Err(HarnessError::InvalidConfig(format!(
                    "epsilon must lie in [0, 1), got {eps}"
                )));
            }
        }
        if self.workers < 1 {
            return Err(HarnessError::InvalidConfig("workers must be >= 1".into()));
        }
        if self.delta_grid.iter().any(|&d| d <= 0.0) {
            return Err(HarnessError::InvalidConfig(
                "delta grid must be positive".into(),
            ));
        }
        if self.max_steps == 0 || self.offdiag_tol <= 0.0 {
            return Err(HarnessError::InvalidConfig(
                "max_steps and offdiag_tol must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Set one flat `key = value` entry (shared by the config-file parser
    /// and CLI flag overrides; flags call this last, so flags win).
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let bad = |e: String| HarnessError::InvalidConfig(e);
        match key {
            "n" => self.n = value.parse().map_err(|e| bad(format!("n: {e}")))?,
            "gamma" => {
                self.gammas = value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(format!("gamma: {e}")))?;
            }
            "epsilon" => {
                self.epsilon = Some(value.parse().map_err(|e| bad(format!("epsilon: {e}")))?)
            }
            "realizations" => {
                self.realizations = value
                    .parse()
                    .map_err(|e| bad(format!("realizations: {e}")))?
            }
            "seed" => {
                self.master_seed = value.parse().map_err(|e| bad(format!("seed: {e}")))?
            }
            "beta" => {
                let beta: f64 = value.parse().map_err(|e| bad(format!("beta: {e}")))?;
                self.weighting = if beta == 0.0 {
                    Weighting::Uniform
                } else {
                    Weighting::Gibbs { beta }
                };
            }
            "delta_grid" => {
                self.delta_grid = value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(format!("delta_grid: {e}")))?;
            }
            "observable" => {
                self.observable = LocalOperatorSpec::from_json(value)
                    .map_err(|e| bad(format!("observable: {e}")))?;
            }
            "engine" => {
                self.engine = match value {
                    "flow" => Engine::Flow,
                    "oracle" => Engine::Oracle,
                    other => return Err(bad(format!("unknown engine '{other}'"))),
                };
            }
            "max_steps" => {
                self.max_steps = value.parse().map_err(|e| bad(format!("max_steps: {e}")))?
            }
            "offdiag_tol" => {
                self.offdiag_tol = value
                    .parse()
                    .map_err(|e| bad(format!("offdiag_tol: {e}")))?
            }
            "track_spectrum" => {
                self.track_spectrum = value
                    .parse()
                    .map_err(|e| bad(format!("track_spectrum: {e}")))?
            }
            "workers" => {
                self.workers = value.parse().map_err(|e| bad(format!("workers: {e}")))?
            }
            "format" => {
                self.format = match value {
                    "csv" => ReportFormat::Csv,
                    "json" => ReportFormat::Json,
                    other => return Err(bad(format!("unknown format '{other}'"))),
                };
            }
            "out" => self.out_dir = Some(PathBuf::from(value)),
            other => return Err(bad(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` config file ('#' starts a comment).
    pub fn apply_file_contents(&mut self, contents: &str) -> Result<(), HarnessError> {
        for (lineno, raw) in contents.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::InvalidConfig(format!(
                    "line {}: expected 'key = value'",
                    lineno + 1
                ))
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn model_params(&self, gamma: f64) -> ModelParams {
        ModelParams {
            n: self.n,
            gamma,
            epsilon: self.epsilon,
            law: model::CouplingLaw::Uniform,
        }
    }

    fn flow_params(&self, gamma: f64) -> FlowParams {
        let mut p = FlowParams::for_gamma(gamma);
        if let Some(eps) = self.epsilon {
            p.epsilon = eps;
        }
        p.max_steps = self.max_steps;
        p.offdiag_tol = self.offdiag_tol;
        p.track_spectrum = self.track_spectrum;
        p
    }
}

/// Per-realization seed: SplitMix64 mix of the master seed advanced by the
/// (index+1)-th golden-gamma increment.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, Serialize)]
pub struct RealizationRecord {
    pub index: usize,
    pub seed: u64,
    pub converged: bool,
    pub steps: usize,
    pub final_offdiag: f64,
    pub min_gap: f64,
    /// Weighted `Av_a |<S^z_i>_a|` per site.
    pub sz_abs_mean: Vec<f64>,
    pub n_small_blocks: usize,
    pub n_large_sites: usize,
}

struct RealizationOutput {
    record: RealizationRecord,
    loc_value: f64,
    corr_rows: Vec<(usize, f64, f64)>,
    blocks: BlockSet,
    max_step: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GammaReport {
    pub gamma: f64,
    pub records: Vec<RealizationRecord>,
    pub localization: ScoreSummary,
    pub correlation: CorrelationProfile,
    pub level_stats: Option<LevelStatsReport>,
    pub connectivity: Vec<ConnectivityEstimate>,
    pub n_failed: usize,
    pub n_nonconverged: usize,
    pub failures: Vec<(usize, String)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnsembleReport {
    pub config: RunConfig,
    pub reports: Vec<GammaReport>,
}

fn run_one(cfg: &RunConfig, gamma: f64, index: usize) -> Result<RealizationOutput, String> {
    let seed = derive_seed(cfg.master_seed, index as u64);
    let params = cfg.model_params(gamma);
    let d = model::sample_disorder(seed, &params);
    let eps = params.epsilon();

    let (r, energies, blocks, converged, steps, final_offdiag, max_step) = match cfg.engine {
        Engine::Flow => {
            let state = flow::run_flow(&d, &cfg.flow_params(gamma)).map_err(|e| e.to_string())?;
            let energies = state.diagonal();
            let final_offdiag = state.offdiag_norm();
            (
                state.r_cum,
                energies,
                state.blocks,
                state.converged,
                state.step,
                final_offdiag,
                state.step.max(1),
            )
        }
        Engine::Oracle => {
            let h = model::build_hamiltonian(&d).map_err(|e| e.to_string())?;
            let spectrum = oracle::diagonalize(&h).map_err(|e| e.to_string())?;
            let resonant = flow::detect_resonant_sites(&d, eps);
            let blocks = geometry::build_blocks_step1(&resonant, cfg.n, 0);
            (
                spectrum.vectors,
                spectrum.energies,
                blocks,
                true,
                0,
                0.0,
                1,
            )
        }
    };

    let weighting = cfg.weighting;
    let energies_opt = Some(energies.as_slice());
    let sz_abs_mean: Vec<f64> = (0..cfg.n)
        .map(|site| {
            let vals = observables::sz_abs_per_state(&r, site, cfg.n);
            observables::state_average(&vals, &weighting, energies_opt)
        })
        .collect();
    let loc_value = sz_abs_mean[cfg.n / 2];

    let mut corr_rows = Vec::new();
    for dist in 1..cfg.n {
        let (i, j) = observables::centered_pair(cfg.n, dist);
        let (max, avg) = observables::correlation_stats(
            &r,
            &cfg.observable,
            cfg.n,
            i,
            j,
            &weighting,
            energies_opt,
        )
        .map_err(|e| e.to_string())?;
        corr_rows.push((dist, max, avg));
    }

    let mut sorted = energies.clone();
    sorted.sort_by(f64::total_cmp);
    let min_gap = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);

    Ok(RealizationOutput {
        record: RealizationRecord {
            index,
            seed,
            converged,
            steps,
            final_offdiag,
            min_gap,
            sz_abs_mean,
            n_small_blocks: blocks.small.len(),
            n_large_sites: blocks.large.len(),
        },
        loc_value,
        corr_rows,
        blocks,
        max_step,
    })
}

/// Execute the configured ensemble: per-realization pipeline in parallel,
/// order-independent aggregation. Individual failures are isolated and
/// reported; the run fails only if more than 1% of realizations error.
pub fn run_ensemble(cfg: &RunConfig) -> Result<EnsembleReport, HarnessError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;

    let mut reports = Vec::new();
    for &gamma in &cfg.gammas {
        let results: Vec<Result<RealizationOutput, String>> = pool.install(|| {
            (0..cfg.realizations)
                .into_par_iter()
                .map(|i| run_one(cfg, gamma, i))
                .collect()
        });

        let mut records = Vec::new();
        let mut failures = Vec::new();
        let mut loc_values = Vec::new();
        let mut corr_per_real = Vec::new();
        let mut min_gaps = Vec::new();
        let mut block_sets = Vec::new();
        let mut n_nonconverged = 0;
        let mut max_step = 1;
        for (i, res) in results.into_iter().enumerate() {
            match res {
                Ok(out) => {
                    if !out.record.converged {
                        n_nonconverged += 1;
                    }
                    loc_values.push(out.loc_value);
                    corr_per_real.push(out.corr_rows);
                    min_gaps.push(out.record.min_gap);
                    max_step = max_step.max(out.max_step);
                    block_sets.push(out.blocks);
                    records.push(out.record);
                }
                Err(msg) => failures.push((i, msg)),
            }
        }
        let n_failed = failures.len();
        if n_failed * 100 > cfg.realizations {
            return Err(HarnessError::ExcessiveFailures {
                failed: n_failed,
                total: cfg.realizations,
            });
        }
        if records.is_empty() {
            return Err(HarnessError::InvalidConfig(
                "every realization failed".into(),
            ));
        }

        let localization = observables::localization_score(&loc_values);
        let correlation = observables::correlation_profile(&corr_per_real);
        let level_stats = if min_gaps.len() >= 100 {
            Some(oracle::level_stats_from_min_gaps(
                &min_gaps,
                &cfg.delta_grid,
                200,
                derive_seed(cfg.master_seed, u64::MAX),
            )?)
        } else {
            None
        };
        let mut connectivity = Vec::new();
        if block_sets.len() >= 100 {
            // gamma = 0 flows converge before any step components exist
            if block_sets.iter().any(|bs| bs.components_at(1).is_some()) {
                connectivity.push(geometry::estimate_connectivity(
                    &block_sets,
                    ConnectivityKind::SameComponent,
                    1,
                )?);
            }
            connectivity.push(geometry::estimate_connectivity(
                &block_sets,
                ConnectivityKind::SameSmallBlock,
                max_step,
            )?);
            connectivity.push(geometry::estimate_connectivity(
                &block_sets,
                ConnectivityKind::SameSmallBlockAnyScale,
                max_step,
            )?);
        }

        reports.push(GammaReport {
            gamma,
            records,
            localization,
            correlation,
            level_stats,
            connectivity,
            n_failed,
            n_nonconverged,
            failures,
        });
    }
    Ok(EnsembleReport {
        config: cfg.clone(),
        reports,
    })
}

/// One fully-traced realization (the `run` and `flow-trace` subcommands).
pub struct SingleRun {
    pub disorder: Disorder,
    pub record: RealizationRecord,
    pub trace: Vec<StepRecord>,
}

pub fn single_realization(cfg: &RunConfig, index: usize) -> Result<SingleRun, HarnessError> {
    cfg.validate()?;
    let gamma = cfg.gammas[0];
    let seed = derive_seed(cfg.master_seed, index as u64);
    let d = model::sample_disorder(seed, &cfg.model_params(gamma));
    let state = flow::run_flow(&d, &cfg.flow_params(gamma))?;
    let out = run_one(cfg, gamma, index).map_err(HarnessError::InvalidConfig)?;
    Ok(SingleRun {
        disorder: d,
        record: out.record,
        trace: state.trace,
    })
}

fn fmt_f64(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{x:.1}")
    } else {
        format!("{x}")
    }
}

/// Flow-trace CSV: one row per step.
pub fn flow_trace_csv(trace: &[StepRecord]) -> String {
    let mut s = String::from(
        "k,L_k,band_lo,band_hi,n_perturbative,n_resonant,offdiag_norm,spectrum_drift,n_small_blocks,n_large_sites\n",
    );
    for r in trace {
        let drift = r
            .spectrum_drift
            .map(fmt_f64)
            .unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.k,
            fmt_f64(r.l_k),
            fmt_f64(r.band_lo),
            fmt_f64(r.band_hi),
            r.n_perturbative,
            r.n_resonant,
            fmt_f64(r.offdiag_norm),
            drift,
            r.n_small_blocks,
            r.n_large_sites
        ));
    }
    s
}

pub fn records_csv(records: &[RealizationRecord], n: usize) -> String {
    let mut s = String::from("index,seed,converged,steps,final_offdiag,min_gap,n_small_blocks,n_large_sites");
    for i in 0..n {
        s.push_str(&format!(",sz_abs_mean_{i}"));
    }
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}",
            r.index,
            r.seed,
            r.converged,
            r.steps,
            fmt_f64(r.final_offdiag),
            fmt_f64(r.min_gap),
            r.n_small_blocks,
            r.n_large_sites
        ));
        for v in &r.sz_abs_mean {
            s.push_str(&format!(",{}", fmt_f64(*v)));
        }
        s.push('\n');
    }
    s
}

pub fn level_stats_csv(report: &LevelStatsReport) -> String {
    let mut s = String::from("delta,prob,ci_lo,ci_hi\n");
    for p in &report.points {
        s.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(p.delta),
            fmt_f64(p.prob),
            fmt_f64(p.ci_lo),
            fmt_f64(p.ci_hi)
        ));
    }
    s
}

pub fn connectivity_csv(estimates: &[ConnectivityEstimate]) -> String {
    let mut s = String::from("kind,k,x,y,prob,ci_lo,ci_hi,n_realizations\n");
    for est in estimates {
        for p in &est.points {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                est.kind.label(),
                est.k,
                p.x,
                p.y,
                fmt_f64(p.prob),
                fmt_f64(p.ci_lo),
                fmt_f64(p.ci_hi),
                est.n_realizations
            ));
        }
    }
    s
}

pub fn correlation_csv(profile: &CorrelationProfile) -> String {
    let mut s = String::from("distance,median_max,q90_max,median_avg,q90_avg,n_realizations\n");
    for r in &profile.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.distance,
            fmt_f64(r.median_max),
            fmt_f64(r.q90_max),
            fmt_f64(r.median_avg),
            fmt_f64(r.q90_avg),
            profile.n_realizations
        ));
    }
    s
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    let mut f = std::fs::File::create(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(contents.as_bytes())
        .map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn gamma_dir_name(gamma: f64) -> String {
    format!("gamma_{gamma}").replace('.', "p")
}

/// Write the report artifacts plus a manifest. All file contents are
/// composed in memory before anything touches the filesystem.
pub fn emit_report(
    report: &EnsembleReport,
    out_dir: &Path,
    wall_time_s: f64,
) -> Result<Vec<PathBuf>, HarnessError> {
    if report.reports.is_empty() {
        return Err(HarnessError::InvalidConfig(
            "refusing to emit an empty report".into(),
        ));
    }
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    match report.config.format {
        ReportFormat::Json => {
            files.push((
                out_dir.join("report.json"),
                serde_json::to_string_pretty(report).expect("report serializes"),
            ));
        }
        ReportFormat::Csv => {
            for g in &report.reports {
                let dir = out_dir.join(gamma_dir_name(g.gamma));
                files.push((dir.join("records.csv"), records_csv(&g.records, report.config.n)));
                files.push((dir.join("correlation.csv"), correlation_csv(&g.correlation)));
                files.push((
                    dir.join("localization.json"),
                    serde_json::to_string_pretty(&g.localization).expect("serializes"),
                ));
                if let Some(ls) = &g.level_stats {
                    files.push((dir.join("level_stats.csv"), level_stats_csv(ls)));
                    files.push((
                        dir.join("level_fit.json"),
                        serde_json::to_string_pretty(&serde_json::json!({
                            "fitted_nu": ls.fitted_nu,
                            "nu_ci": ls.nu_ci,
                            "flagged": ls.flagged,
                            "n_realizations": ls.n_realizations,
                        }))
                        .expect("serializes"),
                    ));
                }
                if !g.connectivity.is_empty() {
                    files.push((dir.join("connectivity.csv"), connectivity_csv(&g.connectivity)));
                }
            }
        }
    }
    let manifest = serde_json::json!({
        "config": report.config,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_time_s": wall_time_s,
        "n_gammas": report.reports.len(),
        "failed_realizations": report.reports.iter().map(|g| g.n_failed).sum::<usize>(),
        "nonconverged_realizations": report.reports.iter().map(|g| g.n_nonconverged).sum::<usize>(),
    });
    files.push((
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    ));

    let mut written = Vec::new();
    for (path, contents) in files {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| HarnessError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        write_file(&path, &contents)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> RunConfig {
        RunConfig {
            n: 4,
            gammas: vec![0.02],
            realizations: 12,
            master_seed: 7,
            workers: 1,
            ..RunConfig::default()
        }
    }

    #[test]
    fn seed_derivation_is_collision_free() {
        use std::collections::HashSet;
        let mut seen = HashSet::new();
        for i in 0..100_000u64 {
            assert!(seen.insert(derive_seed(99, i)), "collision at index {i}");
        }
    }

    #[test]
    fn fixed_seed_reproduces_the_report() {
        let cfg = small_cfg();
        let a = run_ensemble(&cfg).unwrap();
        let b = run_ensemble(&cfg).unwrap();
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn worker_count_does_not_change_aggregates() {
        let mut cfg = small_cfg();
        cfg.realizations = 16;
        let seq = run_ensemble(&cfg).unwrap();
        cfg.workers = 8;
        let par = run_ensemble(&cfg).unwrap();
        let mut a = seq;
        let mut b = par;
        a.config.workers = 0;
        b.config.workers = 0;
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn gamma_zero_sweep_is_exactly_localized() {
        let mut cfg = small_cfg();
        cfg.gammas = vec![0.0];
        // enough realizations to exercise the connectivity aggregation path
        cfg.realizations = 110;
        let rep = run_ensemble(&cfg).unwrap();
        let g = &rep.reports[0];
        assert_eq!(g.localization.mean, 1.0);
        for row in &g.correlation.rows {
            assert_eq!(row.median_max, 0.0);
            assert_eq!(row.q90_max, 0.0);
        }
        for r in &g.records {
            assert_eq!(r.n_small_blocks + r.n_large_sites, 0);
            assert!(r.converged);
        }
    }

    #[test]
    fn empty_ensemble_is_rejected_before_io() {
        let mut cfg = small_cfg();
        cfg.realizations = 0;
        assert!(matches!(
            run_ensemble(&cfg),
            Err(HarnessError::InvalidConfig(_))
        ));
    }

    #[test]
    fn config_file_parsing_and_flag_priority() {
        let mut cfg = RunConfig::default();
        cfg.apply_file_contents(
            "# comment\nn = 6\ngamma = 0.01, 0.05\nseed = 33\nbeta = 1.5\nengine = oracle\n",
        )
        .unwrap();
        assert_eq!(cfg.n, 6);
        assert_eq!(cfg.gammas, vec![0.01, 0.05]);
        assert_eq!(cfg.master_seed, 33);
        assert_eq!(cfg.weighting, Weighting::Gibbs { beta: 1.5 });
        assert_eq!(cfg.engine, Engine::Oracle);
        // a later flag-style override wins
        cfg.apply_kv("n", "5").unwrap();
        assert_eq!(cfg.n, 5);
        // unknown keys are config errors
        assert!(cfg.apply_kv("bogus", "1").is_err());
        assert!(cfg
            .apply_file_contents("not a key value line\n")
            .is_err());
    }

    #[test]
    fn emitted_files_follow_declared_schemas() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg();
        cfg.realizations = 100; // enough for level stats + connectivity
        cfg.engine = Engine::Oracle;
        let rep = run_ensemble(&cfg).unwrap();
        let files = emit_report(&rep, dir.path(), 1.0).unwrap();
        let names: Vec<String> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert!(names.contains(&"manifest.json".to_string()));
        assert!(names.contains(&"records.csv".to_string()));
        let level = files
            .iter()
            .find(|p| p.ends_with("level_stats.csv"))
            .expect("level stats emitted");
        let contents = std::fs::read_to_string(level).unwrap();
        assert!(contents.starts_with("delta,prob,ci_lo,ci_hi\n"));
        let conn = files.iter().find(|p| p.ends_with("connectivity.csv")).unwrap();
        let contents = std::fs::read_to_string(conn).unwrap();
        assert!(contents.starts_with("kind,k,x,y,prob,ci_lo,ci_hi,n_realizations\n"));
        let corr = files.iter().find(|p| p.ends_with("correlation.csv")).unwrap();
        let contents = std::fs::read_to_string(corr).unwrap();
        assert!(contents.starts_with("distance,median_max,q90_max,median_avg,q90_avg,n_realizations\n"));
    }

    #[test]
    fn manifest_config_reproduces_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let rep = run_ensemble(&cfg).unwrap();
        emit_report(&rep, dir.path(), 0.5).unwrap();
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        let echoed: RunConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
        let rep2 = run_ensemble(&echoed).unwrap();
        assert_eq!(
            serde_json::to_string(&rep.reports).unwrap(),
            serde_json::to_string(&rep2.reports).unwrap()
        );
    }

    #[test]
    fn single_realization_trace_matches_schema() {
        let cfg = small_cfg();
        let s = single_realization(&cfg, 0).unwrap();
        let csv = flow_trace_csv(&s.trace);
        assert!(csv.starts_with(
            "k,L_k,band_lo,band_hi,n_perturbative,n_resonant,offdiag_norm,spectrum_drift,n_small_blocks,n_large_sites\n"
        ));
        assert!(s.record.converged);
        assert_eq!(s.record.seed, derive_seed(cfg.master_seed, 0));
    }
}
