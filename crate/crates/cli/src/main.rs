//! Command-line driver for spin-chain localization experiments.
//!
//! Exit codes: 0 on success, 1 on configuration errors, 2 when more than
//! 1% of the ensemble's realizations failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use spinflow::harness::{
    self, emit_report, flow_trace_csv, run_ensemble, single_realization, Engine, HarnessError,
    RunConfig,
};
use spinflow::model::{sample_disorder, ModelParams};
use spinflow::oracle;

#[derive(Parser)]
#[command(
    name = "spinflow",
    version,
    about = "Multiscale diagonalization and localization measurements for disordered spin chains"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one disorder realization through the flow, with a full trace
    Run(CommonArgs),
    /// Run a disorder ensemble and write the aggregate reports
    Ensemble(CommonArgs),
    /// Estimate the minimum-gap statistics curve P(min gap < delta)
    LevelStats(CommonArgs),
    /// Measure the connected-correlation decay profile
    CorrDecay(CommonArgs),
    /// Print the per-step flow trace as CSV
    FlowTrace(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat `key = value` config file; flags override file entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Chain length
    #[arg(long)]
    n: Option<usize>,
    /// Transverse coupling scale; comma-separated values sweep
    #[arg(long)]
    gamma: Option<String>,
    /// Resonance-cutoff override (default gamma^(1/20))
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Master seed; per-realization seeds derive from it
    #[arg(long)]
    seed: Option<u64>,
    /// Gibbs inverse temperature for state averages (0 = uniform)
    #[arg(long)]
    beta: Option<f64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Report format: csv or json
    #[arg(long)]
    format: Option<String>,
    /// Per-realization engine: flow or oracle
    #[arg(long)]
    engine: Option<String>,
    /// Observable spec as JSON, anchored at site 0
    #[arg(long)]
    observable: Option<String>,
    /// Comma-separated gap thresholds for level statistics
    #[arg(long)]
    delta_grid: Option<String>,
    /// Realization index for single-realization commands
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Check spectrum preservation at every flow step
    #[arg(long)]
    track_spectrum: Option<bool>,
}

impl CommonArgs {
    fn build_config(&self, default_engine: Engine) -> Result<RunConfig, HarnessError> {
        let mut cfg = RunConfig {
            engine: default_engine,
            ..RunConfig::default()
        };
        if let Some(path) = &self.config {
            let contents = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
                path: path.clone(),
                source,
            })?;
            cfg.apply_file_contents(&contents)?;
        }
        let mut kv: Vec<(&str, String)> = Vec::new();
        if let Some(v) = self.n {
            kv.push(("n", v.to_string()));
        }
        if let Some(v) = &self.gamma {
            kv.push(("gamma", v.clone()));
        }
        if let Some(v) = self.epsilon {
            kv.push(("epsilon", v.to_string()));
        }
        if let Some(v) = self.realizations {
            kv.push(("realizations", v.to_string()));
        }
        if let Some(v) = self.seed {
            kv.push(("seed", v.to_string()));
        }
        if let Some(v) = self.beta {
            kv.push(("beta", v.to_string()));
        }
        if let Some(v) = &self.out {
            kv.push(("out", v.display().to_string()));
        }
        if let Some(v) = self.workers {
            kv.push(("workers", v.to_string()));
        }
        if let Some(v) = self.max_steps {
            kv.push(("max_steps", v.to_string()));
        }
        if let Some(v) = &self.format {
            kv.push(("format", v.clone()));
        }
        if let Some(v) = &self.engine {
            kv.push(("engine", v.clone()));
        }
        if let Some(v) = &self.observable {
            kv.push(("observable", v.clone()));
        }
        if let Some(v) = &self.delta_grid {
            kv.push(("delta_grid", v.clone()));
        }
        if let Some(v) = self.track_spectrum {
            kv.push(("track_spectrum", v.to_string()));
        }
        for (k, v) in kv {
            cfg.apply_kv(k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_out(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| HarnessError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    std::fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_run(args: &CommonArgs) -> Result<(), HarnessError> {
    let cfg = args.build_config(Engine::Flow)?;
    let single = single_realization(&cfg, args.index)?;
    let summary = serde_json::json!({
        "record": single.record,
        "disorder": single.disorder,
    });
    let trace = flow_trace_csv(&single.trace);
    if let Some(dir) = &cfg.out_dir {
        write_out(&dir.join("flow_trace.csv"), &trace)?;
        write_out(
            &dir.join("realization.json"),
            &serde_json::to_string_pretty(&summary).expect("serializes"),
        )?;
        println!("wrote {}", dir.display());
    } else {
        println!("{}", serde_json::to_string_pretty(&summary).expect("serializes"));
        print!("{trace}");
    }
    Ok(())
}

fn cmd_flow_trace(args: &CommonArgs) -> Result<(), HarnessError> {
    let cfg = args.build_config(Engine::Flow)?;
    let single = single_realization(&cfg, args.index)?;
    let trace = flow_trace_csv(&single.trace);
    if let Some(dir) = &cfg.out_dir {
        write_out(&dir.join("flow_trace.csv"), &trace)?;
        println!("wrote {}", dir.join("flow_trace.csv").display());
    } else {
        print!("{trace}");
    }
    Ok(())
}

fn cmd_ensemble(args: &CommonArgs) -> Result<(), HarnessError> {
    let cfg = args.build_config(Engine::Flow)?;
    let started = Instant::now();
    let report = run_ensemble(&cfg)?;
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let files = emit_report(&report, &out, started.elapsed().as_secs_f64())?;
    for g in &report.reports {
        println!(
            "gamma {}: localization {:.6} [{:.6}, {:.6}], {} records, {} non-converged, {} failed",
            g.gamma,
            g.localization.mean,
            g.localization.ci_lo,
            g.localization.ci_hi,
            g.records.len(),
            g.n_nonconverged,
            g.n_failed
        );
    }
    println!("wrote {} files under {}", files.len(), out.display());
    Ok(())
}

fn cmd_level_stats(args: &CommonArgs) -> Result<(), HarnessError> {
    let cfg = args.build_config(Engine::Oracle)?;
    let gamma = cfg.gammas[0];
    let params = ModelParams {
        n: cfg.n,
        gamma,
        epsilon: None,
        law: spinflow::model::CouplingLaw::Uniform,
    };
    let disorders: Vec<_> = (0..cfg.realizations)
        .map(|i| sample_disorder(harness::derive_seed(cfg.master_seed, i as u64), &params))
        .collect();
    let report = oracle::estimate_level_statistics(
        &disorders,
        &cfg.delta_grid,
        200,
        harness::derive_seed(cfg.master_seed, u64::MAX),
    )?;
    let csv = harness::level_stats_csv(&report);
    let fit = serde_json::to_string_pretty(&serde_json::json!({
        "fitted_nu": report.fitted_nu,
        "nu_ci": report.nu_ci,
        "flagged": report.flagged,
        "n_realizations": report.n_realizations,
    }))
    .expect("serializes");
    match &cfg.out_dir {
        Some(dir) => {
            write_out(&dir.join("level_stats.csv"), &csv)?;
            write_out(&dir.join("level_fit.json"), &fit)?;
            println!("wrote {}", dir.display());
        }
        None => {
            print!("{csv}");
            println!("{fit}");
        }
    }
    Ok(())
}

fn cmd_corr_decay(args: &CommonArgs) -> Result<(), HarnessError> {
    let cfg = args.build_config(Engine::Oracle)?;
    let started = Instant::now();
    let report = run_ensemble(&cfg)?;
    match &cfg.out_dir {
        Some(dir) => {
            let files = emit_report(&report, dir, started.elapsed().as_secs_f64())?;
            println!("wrote {} files under {}", files.len(), dir.display());
        }
        None => {
            for g in &report.reports {
                println!("# gamma = {}", g.gamma);
                print!("{}", harness::correlation_csv(&g.correlation));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Ensemble(a) => cmd_ensemble(a),
        Cmd::LevelStats(a) => cmd_level_stats(a),
        Cmd::CorrDecay(a) => cmd_corr_decay(a),
        Cmd::FlowTrace(a) => cmd_flow_trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(HarnessError::ExcessiveFailures { failed, total }) => {
            eprintln!("error: {failed} of {total} realizations failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
