//! Loss evaluation, adjoint gradient injection and the epoch loop.
//!
//! Both losses are functions of the residual vector `f`. Their gradient
//! w.r.t. `f` (the residual seed) is pulled back to the network outputs with
//! `Jᵀ`, which is exact because the residual is affine in the unknowns once
//! the convective velocities are frozen. The network tape then carries it to
//! the parameters.

mod optim;

use std::time::Instant;

pub use optim::{
    adam_step, lbfgs_epoch, lbfgs_epoch_with, AdamConfig, AdamState, LbfgsConfig, LbfgsHistory, LbfgsReport, LbfgsStop,
    GRADIENT_TOLERANCE,
};

use crate::discretize::{Discretization, LinearizationState, ProblemKind, ProblemSpec, ResidualVector};
use crate::error::{Error, Result};
use crate::grid::{normalized_coordinates, Field, StructuredGrid};
use crate::net::{backward, forward, init_params, NetworkArch, ParameterSet};
use crate::oracle::{picard_solve, poisson_exact, relative_l2, PicardOptions, ReferenceSolution};
use crate::sparsela::{
    apply_minv, apply_minv_transpose, assemble_jacobian, color_columns, ilu0, Coloring, IluFactors, SparseMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Baseline,
    Preconditioned,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::Preconditioned => "preconditioned",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "baseline" => Ok(TrainMode::Baseline),
            "preconditioned" => Ok(TrainMode::Preconditioned),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    Lbfgs,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Adam => "adam",
            Optimizer::Lbfgs => "lbfgs",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "adam" => Ok(Optimizer::Adam),
            "lbfgs" => Ok(Optimizer::Lbfgs),
            other => Err(Error::InvalidConfig(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossWeight {
    Fixed(f64),
    /// Preconditioned runs pick `w` so their first loss equals the unweighted
    /// baseline loss at the same parameters; baseline runs use `w = 1`.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub weight: LossWeight,
    pub adam: AdamConfig,
    pub lbfgs: LbfgsConfig,
    /// Epochs between ILU rebuilds on the cavity. The Poisson Jacobian is
    /// constant and factored once.
    pub refactor_stride: usize,
    pub seed: u64,
    pub log_stride: usize,
    /// Fill the `seconds` column; off by default so logs are reproducible.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            epochs: 1000,
            weight: LossWeight::Auto,
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig::default(),
            refactor_stride: 1,
            seed: 0,
            log_stride: 1,
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if let LossWeight::Fixed(w) = self.weight {
            if !(w > 0.0 && w.is_finite()) {
                return bad("loss weight must be positive and finite");
            }
        }
        let a = &self.adam;
        if !(a.lr > 0.0) || !(a.eps > 0.0) || !(0.0 < a.beta1 && a.beta1 < 1.0) || !(0.0 < a.beta2 && a.beta2 < 1.0) {
            return bad("Adam needs lr > 0, eps > 0 and betas in (0, 1)");
        }
        let l = &self.lbfgs;
        if l.history == 0 || l.max_inner == 0 || !(0.0 < l.c1 && l.c1 < l.c2 && l.c2 < 1.0) {
            return bad("L-BFGS needs history >= 1, max_inner >= 1 and 0 < c1 < c2 < 1");
        }
        if self.refactor_stride == 0 || self.log_stride == 0 {
            return bad("refactor_stride and log_stride must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRecord {
    pub epoch: usize,
    pub loss: f64,
    pub rel_l2: f64,
    pub seconds: f64,
}

/// A scalar loss and its gradient w.r.t. the residual entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub seed: Vec<f64>,
}

/// Detached quantities of the preconditioned loss. The Lagrange multiplier
/// of the constraint `M·p = f` is `−2·p_detached` and is not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointWorkspace {
    pub f_detached: Vec<f64>,
    pub p_detached: Vec<f64>,
    /// `2·M⁻ᵀ·p_detached`.
    pub g_detached: Vec<f64>,
}

fn check_finite(f: &ResidualVector) -> Result<()> {
    match f.values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

fn sum_squares(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `(w/N)·fᵀf` with seed `(2w/N)·f`.
pub fn baseline_loss(f: &ResidualVector, w: f64) -> Result<LossEval> {
    check_finite(f)?;
    let scale = w / f.len() as f64;
    Ok(LossEval { value: scale * sum_squares(&f.values), seed: f.values.iter().map(|v| scale * (2.0 * v)).collect() })
}

/// `(w/N)·[pᵀp + gᵀ(f − f_detached)]` with `p = M⁻¹f_detached`,
/// `g = 2·M⁻ᵀp`. At the evaluation point the correction term is zero, and
/// the seed w.r.t. the live residual is `(w/N)·g`.
pub fn precond_loss(f_live: &ResidualVector, fac: &IluFactors, w: f64) -> Result<(LossEval, AdjointWorkspace)> {
    check_finite(f_live)?;
    if fac.dim() != f_live.len() {
        return Err(Error::DimensionMismatch {
            context: "preconditioner factors",
            expected: f_live.len(),
            got: fac.dim(),
        });
    }
    let f_detached = f_live.values.clone();
    let p_detached = apply_minv(fac, &f_detached)?;
    let g_detached: Vec<f64> = apply_minv_transpose(fac, &p_detached)?.into_iter().map(|v| 2.0 * v).collect();
    let correction: f64 =
        g_detached.iter().zip(&f_live.values).zip(&f_detached).map(|((g, fl), fd)| g * (fl - fd)).sum();
    let scale = w / f_live.len() as f64;
    let eval = LossEval {
        value: scale * (sum_squares(&p_detached) + correction),
        seed: g_detached.iter().map(|g| scale * g).collect(),
    };
    Ok((eval, AdjointWorkspace { f_detached, p_detached, g_detached }))
}

/// Loss, parameter gradient and network output at one parameter point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub output: Field,
}

/// The residual operator, its Jacobian and the current preconditioner for
/// one problem, plus the loss mode and weight.
#[derive(Debug, Clone)]
pub struct LossModel {
    disc: Discretization,
    coords: Field,
    pattern: SparseMatrix,
    coloring: Coloring,
    jacobian: SparseMatrix,
    factors: IluFactors,
    mode: TrainMode,
    weight: f64,
    factor_builds: usize,
}

impl LossModel {
    /// Assemble `J` (at zero frozen velocities for the cavity) and, in
    /// preconditioned mode, factor it.
    pub fn new(grid: &StructuredGrid, spec: &ProblemSpec, mode: TrainMode, weight: f64) -> Result<Self> {
        let disc = Discretization::new(*grid, *spec)?;
        let pattern = disc.pattern();
        let coloring = color_columns(&pattern);
        let zero = vec![0.0; disc.n_unknowns()];
        let jacobian = assemble_jacobian(&disc, &zero, &pattern, &coloring)?.jacobian;
        let n = jacobian.n_rows();
        let mut model = Self {
            coords: normalized_coordinates(grid),
            disc,
            pattern,
            coloring,
            jacobian,
            factors: IluFactors::identity(n),
            mode,
            weight,
            factor_builds: 0,
        };
        if mode == TrainMode::Preconditioned {
            model.refactor()?;
        }
        Ok(model)
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    pub fn jacobian(&self) -> &SparseMatrix {
        &self.jacobian
    }

    pub fn factors(&self) -> &IluFactors {
        &self.factors
    }

    pub fn mode(&self) -> TrainMode {
        self.mode
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn set_weight(&mut self, weight: f64) {
        self.weight = weight;
    }

    /// Replace the preconditioner, e.g. with identity factors.
    pub fn set_factors(&mut self, factors: IluFactors) -> Result<()> {
        if factors.dim() != self.jacobian.n_rows() {
            return Err(Error::DimensionMismatch {
                context: "preconditioner factors",
                expected: self.jacobian.n_rows(),
                got: factors.dim(),
            });
        }
        self.factors = factors;
        Ok(())
    }

    /// ILU(0) factorizations performed so far.
    pub fn factor_builds(&self) -> usize {
        self.factor_builds
    }

    /// Rebuild the ILU(0) factors from the current Jacobian.
    pub fn refactor(&mut self) -> Result<()> {
        self.factors = ilu0(&self.jacobian)?;
        self.factor_builds += 1;
        let shifted = self.factors.shifted_pivots().len();
        if shifted > 0 {
            log::warn!("ILU(0) shifted {shifted} pivots");
        }
        Ok(())
    }

    /// Freeze the convective velocities at `output` and reassemble `J`.
    /// No-op for Poisson, whose operator does not depend on the output.
    pub fn relinearize(&mut self, output: &Field) -> Result<()> {
        if !self.disc.spec().is_cavity() {
            return Ok(());
        }
        self.disc.set_linearization(LinearizationState::from_field(output)?)?;
        let w = self.disc.field_to_unknowns(output)?;
        self.jacobian = assemble_jacobian(&self.disc, &w, &self.pattern, &self.coloring)?.jacobian;
        Ok(())
    }

    pub fn output(&self, params: &ParameterSet) -> Result<Field> {
        Ok(forward(params, &self.coords)?.0)
    }

    pub fn residual(&self, output: &Field) -> Result<ResidualVector> {
        Ok(ResidualVector {
            values: self.disc.residual(&self.disc.field_to_unknowns(output)?),
            equations_per_node: self.disc.spec().equations_per_node(),
        })
    }

    /// Loss at `f` under the current mode, weight and factors.
    pub fn loss(&self, f: &ResidualVector) -> Result<LossEval> {
        match self.mode {
            TrainMode::Baseline => baseline_loss(f, self.weight),
            TrainMode::Preconditioned => Ok(precond_loss(f, &self.factors, self.weight)?.0),
        }
    }

    /// Weight that makes the first preconditioned loss match the unweighted
    /// baseline loss at `params`; `1` in baseline mode or for a zero residual.
    pub fn auto_weight(&self, params: &ParameterSet) -> Result<f64> {
        if self.mode == TrainMode::Baseline {
            return Ok(1.0);
        }
        let f = self.residual(&self.output(params)?)?;
        let base = baseline_loss(&f, 1.0)?.value;
        let pre = precond_loss(&f, &self.factors, 1.0)?.0.value;
        Ok(if base > 0.0 && pre > 0.0 { base / pre } else { 1.0 })
    }

    pub fn evaluate(&self, params: &ParameterSet) -> Result<Evaluation> {
        let (output, tape) = forward(params, &self.coords)?;
        let f = self.residual(&output)?;
        let eval = self.loss(&f)?;
        let seed_unknowns = self.jacobian.spmv_transpose(&eval.seed)?;
        let seed = Field::new(
            *self.disc.grid(),
            self.disc.spec().n_components(),
            self.disc.unknowns_to_components(&seed_unknowns),
        )?;
        let gradient = backward(&tape, params, &seed)?;
        Ok(Evaluation { loss: eval.value, gradient, output })
    }
}

/// Per-epoch view handed to the observer.
#[derive(Debug)]
pub struct EpochReport<'a> {
    pub epoch: usize,
    pub loss: f64,
    pub gradient: &'a [f64],
    pub weight: f64,
}

/// Optional inputs to [`train_with`].
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Reference for the error column; computed when absent.
    pub reference: Option<&'a ReferenceSolution>,
    /// Replace every ILU factorization with `M = I`.
    pub identity_factors: bool,
    /// Called once per epoch with the loss and gradient at the epoch's
    /// starting parameters.
    pub observer: Option<&'a mut dyn FnMut(&EpochReport)>,
    /// Starting parameters instead of a seeded initialization.
    pub initial: Option<ParameterSet>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParameterSet,
    pub records: Vec<ConvergenceRecord>,
    pub output: Field,
    pub final_loss: f64,
    pub final_rel_l2: f64,
    pub weight: f64,
    pub factor_builds: usize,
    /// Accepted L-BFGS steps summed over epochs.
    pub inner_iterations: usize,
}

/// The analytic solution for Poisson, a Picard solve for the cavity.
pub fn default_reference(grid: &StructuredGrid, spec: &ProblemSpec) -> Result<ReferenceSolution> {
    match spec.kind {
        ProblemKind::Poisson { k } => Ok(poisson_exact(grid, k)),
        ProblemKind::Cavity { .. } => Ok(picard_solve(grid, spec, &PicardOptions::default())?.0),
    }
}

pub fn train(
    spec: &ProblemSpec,
    grid: &StructuredGrid,
    arch: &NetworkArch,
    cfg: &TrainConfig,
    mode: TrainMode,
) -> Result<TrainOutcome> {
    train_with(spec, grid, arch, cfg, mode, TrainOptions::default())
}

pub fn train_with(
    spec: &ProblemSpec,
    grid: &StructuredGrid,
    arch: &NetworkArch,
    cfg: &TrainConfig,
    mode: TrainMode,
    mut opts: TrainOptions<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    arch.validate()?;
    if arch.outputs != spec.n_components() {
        return Err(Error::ComponentMismatch { expected: spec.n_components(), got: arch.outputs });
    }
    let owned_reference;
    let reference = match opts.reference {
        Some(r) => r,
        None => {
            owned_reference = default_reference(grid, spec)?;
            &owned_reference
        }
    };
    let start = Instant::now();
    let seconds = || if cfg.wall_clock { start.elapsed().as_secs_f64() } else { 0.0 };

    let mut params = match opts.initial.take() {
        Some(p) if p.arch() == arch => p,
        Some(_) => return Err(Error::InvalidArch("initial parameters do not match the architecture".into())),
        None => init_params(arch, cfg.seed)?,
    };
    let mut model = LossModel::new(grid, spec, mode, 1.0)?;
    let cavity = spec.is_cavity();
    let mut adam = AdamState::new(params.len());
    let mut curvature = LbfgsHistory::default();
    let mut records = Vec::new();
    let mut inner_iterations = 0;
    let mut output = model.output(&params)?;

    for epoch in 0..=cfg.epochs {
        if cavity {
            model.relinearize(&output)?;
        }
        let rebuild = mode == TrainMode::Preconditioned && cavity && epoch % cfg.refactor_stride == 0;
        if opts.identity_factors {
            model.set_factors(IluFactors::identity(model.jacobian().n_rows()))?;
        } else if rebuild {
            model.refactor()?;
        }
        if epoch == 0 {
            let w = match cfg.weight {
                LossWeight::Fixed(w) => w,
                LossWeight::Auto => model.auto_weight(&params)?,
            };
            log::info!("{} run, loss weight {w:e}", mode.name());
            model.set_weight(w);
        }

        let eval = model.evaluate(&params)?;
        if !eval.loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        if let Some(obs) = opts.observer.as_mut() {
            obs(&EpochReport { epoch, loss: eval.loss, gradient: &eval.gradient, weight: model.weight() });
        }
        if epoch % cfg.log_stride == 0 || epoch == cfg.epochs {
            let rel_l2 = relative_l2(&eval.output, reference)?;
            log::debug!("epoch {epoch}: loss {:e}, rel_l2 {rel_l2:e}", eval.loss);
            records.push(ConvergenceRecord { epoch, loss: eval.loss, rel_l2, seconds: seconds() });
        }
        if epoch == cfg.epochs {
            output = eval.output;
            break;
        }

        let mut values = params.values().to_vec();
        match cfg.optimizer {
            Optimizer::Adam => adam_step(&mut values, &eval.gradient, &mut adam, &cfg.adam)?,
            Optimizer::Lbfgs => {
                let loss_fn = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
                    let e = model.evaluate(&params.with_values(theta.to_vec())?)?;
                    Ok((e.loss, e.gradient))
                };
                if !cfg.lbfgs.carry_history {
                    curvature.clear();
                }
                let report = lbfgs_epoch_with(&mut values, loss_fn, &cfg.lbfgs, &mut curvature)?;
                if report.stop == LbfgsStop::LineSearchFailed {
                    log::debug!("epoch {epoch}: line search failed after {} steps", report.inner_iterations);
                }
                inner_iterations += report.inner_iterations;
            }
        }
        params = params.with_values(values)?;
        output = model.output(&params)?;
    }

    let last = records.last().copied().expect("the final epoch is always logged");
    Ok(TrainOutcome {
        params,
        output,
        final_loss: last.loss,
        final_rel_l2: last.rel_l2,
        weight: model.weight(),
        factor_builds: model.factor_builds(),
        records,
        inner_iterations,
    })
}
