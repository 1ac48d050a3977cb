//! The `run` and `sweep` subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use prepinn_core::oracle::{picard_solve, poisson_exact, PicardOptions};
use prepinn_core::sparsela::{estimate_condition, estimate_preconditioned_condition};
use prepinn_core::train::{train_with, LossModel, TrainOptions, TrainOutcome};
use prepinn_core::{ProblemKind, ReferenceSolution, TrainMode};

use crate::config::{parse_config, RunConfig};
use crate::output::{convergence_csv, fields_csv, num, write_all_atomic};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub epochs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output.directory = out.clone();
        }
        if let Some(epochs) = self.epochs {
            if epochs == 0 {
                bail!("--epochs must be at least 1");
            }
            cfg.train.epochs = epochs;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcome: TrainOutcome,
    pub files: Vec<PathBuf>,
}

fn reference_for(cfg: &RunConfig, summary: &mut String) -> Result<ReferenceSolution> {
    match cfg.problem.kind {
        ProblemKind::Poisson { k } => {
            let _ = writeln!(summary, "reference = analytic");
            Ok(poisson_exact(&cfg.grid, k))
        }
        ProblemKind::Cavity { .. } => {
            log::info!("solving the Picard reference on {}x{}", cfg.grid.nx, cfg.grid.ny);
            let (reference, report) = picard_solve(&cfg.grid, &cfg.problem, &PicardOptions::default())
                .context("Picard reference solve failed")?;
            let _ = writeln!(summary, "reference = picard");
            let _ = writeln!(summary, "picard_iterations = {}", report.iterations);
            let _ = writeln!(summary, "picard_max_residual = {}", num(report.max_residual));
            let _ = writeln!(summary, "picard_max_residual_off_gauge = {}", num(report.max_residual_off_gauge));
            Ok(reference)
        }
    }
}

/// Dense condition numbers of `J` and `M⁻¹J` at the final state.
fn condition_lines(cfg: &RunConfig, outcome: &TrainOutcome, summary: &mut String) -> Result<()> {
    let n = cfg.grid.n_nodes() * cfg.problem.n_components();
    if n > cfg.output.condition_limit {
        let _ = writeln!(summary, "condition = skipped ({n} unknowns > limit {})", cfg.output.condition_limit);
        return Ok(());
    }
    let mut model = LossModel::new(&cfg.grid, &cfg.problem, TrainMode::Preconditioned, 1.0)?;
    if cfg.problem.is_cavity() {
        model.relinearize(&outcome.output)?;
        model.refactor()?;
    }
    let kj = estimate_condition(model.jacobian())?;
    let kp = estimate_preconditioned_condition(model.factors(), model.jacobian())?;
    let _ = writeln!(summary, "kappa_jacobian = {}", num(kj));
    let _ = writeln!(summary, "kappa_preconditioned = {}", num(kp));
    let _ = writeln!(summary, "kappa_ratio = {}", num(kp / kj));
    Ok(())
}

fn jacobian_mtx(cfg: &RunConfig, outcome: &TrainOutcome) -> Result<Vec<u8>> {
    let mut model = LossModel::new(&cfg.grid, &cfg.problem, TrainMode::Baseline, 1.0)?;
    model.relinearize(&outcome.output)?;
    let mut bytes = Vec::new();
    model.jacobian().write_matrix_market(&mut bytes)?;
    Ok(bytes)
}

/// Train, evaluate and write all artifacts for one configuration.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let start = std::time::Instant::now();
    let mut summary = String::new();
    let (kind, param) = match cfg.problem.kind {
        ProblemKind::Poisson { k } => ("poisson", format!("k = {k}")),
        ProblemKind::Cavity { re, lid_velocity } => {
            ("cavity", format!("re = {}\nlid_velocity = {}", num(re), num(lid_velocity)))
        }
    };
    let _ = writeln!(summary, "problem = {kind}\n{param}");
    let _ = writeln!(summary, "scheme_order = {}", cfg.problem.scheme_order.as_int());
    let _ = writeln!(summary, "ordering = {}", cfg.problem.ordering.name());
    let _ = writeln!(summary, "grid = {}x{}", cfg.grid.nx, cfg.grid.ny);
    let _ = writeln!(summary, "network = {}", cfg.arch.descriptor());
    let _ = writeln!(summary, "mode = {}", cfg.mode.name());
    let _ = writeln!(summary, "optimizer = {}", cfg.train.optimizer.name());
    let _ = writeln!(summary, "epochs = {}", cfg.train.epochs);
    let _ = writeln!(summary, "seed = {}", cfg.train.seed);

    let reference = reference_for(cfg, &mut summary)?;
    log::info!("training {} for {} epochs", cfg.name, cfg.train.epochs);
    let opts = TrainOptions { reference: Some(&reference), ..Default::default() };
    let outcome = train_with(&cfg.problem, &cfg.grid, &cfg.arch, &cfg.train, cfg.mode, opts)
        .with_context(|| format!("training {} failed", cfg.name))?;

    let _ = writeln!(summary, "loss_weight = {}", num(outcome.weight));
    let _ = writeln!(summary, "final_loss = {}", num(outcome.final_loss));
    let _ = writeln!(summary, "final_rel_l2 = {}", num(outcome.final_rel_l2));
    let _ = writeln!(summary, "factor_builds = {}", outcome.factor_builds);
    if outcome.inner_iterations > 0 {
        let _ = writeln!(summary, "lbfgs_inner_iterations = {}", outcome.inner_iterations);
    }
    condition_lines(cfg, &outcome, &mut summary)?;
    if cfg.train.wall_clock {
        let _ = writeln!(summary, "seconds = {}", num(start.elapsed().as_secs_f64()));
    }

    let mut params = Vec::new();
    outcome.params.write_checkpoint(&mut params)?;
    let mut files = vec![
        ("convergence.csv", convergence_csv(&outcome.records).into_bytes()),
        ("params.bin", params),
        ("summary.txt", summary.into_bytes()),
    ];
    if cfg.output.dump_fields {
        files.push(("fields.csv", fields_csv(&outcome.output, cfg.problem.component_names()).into_bytes()));
    }
    if cfg.output.dump_jacobian {
        files.push(("jacobian.mtx", jacobian_mtx(cfg, &outcome)?));
    }
    let written = write_all_atomic(&cfg.output.directory, &files)?;
    Ok(RunReport { outcome, files: written })
}

pub fn run_file(path: &Path, overrides: &Overrides) -> Result<RunReport> {
    let mut cfg = parse_config(path)?;
    overrides.apply(&mut cfg)?;
    run(&cfg)
}

/// Run every config matching `pattern`, in sorted order. With `--out`, each
/// run writes to `<out>/<config name>`.
pub fn sweep(pattern: &str, overrides: &Overrides) -> Result<Vec<RunReport>> {
    let mut paths: Vec<PathBuf> =
        glob::glob(pattern).with_context(|| format!("bad glob pattern `{pattern}`"))?.collect::<Result<_, _>>()?;
    paths.sort();
    if paths.is_empty() {
        bail!("no config files match `{pattern}`");
    }
    // parse everything first so a typo in the last file fails fast
    let mut configs = Vec::with_capacity(paths.len());
    for path in &paths {
        let mut cfg = parse_config(path)?;
        let mut per_run = overrides.clone();
        per_run.out = overrides.out.as_ref().map(|o| o.join(&cfg.name));
        per_run.apply(&mut cfg)?;
        configs.push(cfg);
    }
    let mut reports = Vec::with_capacity(configs.len());
    for cfg in &configs {
        let report = run(cfg)?;
        println!("{}: rel_l2 {} -> {}", cfg.name, num(report.outcome.final_rel_l2), cfg.output.directory.display());
        reports.push(report);
    }
    Ok(reports)
}
