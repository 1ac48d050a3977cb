//! The `check` subcommand: fast invariant checks with one verdict each.

use nalgebra::DMatrix;
use prepinn_core::discretize::{Discretization, LinearizationState};
use prepinn_core::grid::{coordinate_channels, make_grid};
use prepinn_core::net::{backward, forward, init_params, Activation, NetworkArch, NetworkKind};
use prepinn_core::sparsela::{
    apply_minv, apply_minv_transpose, assemble_jacobian, color_columns, first_conflict, ilu0, probe_jacobian_dense,
    Coloring,
};
use prepinn_core::train::{baseline_loss, precond_loss, LossModel};
use prepinn_core::{
    Field, IluFactors, ParameterSet, ProblemSpec, ResidualVector, SparseMatrix, StructuredGrid, TrainMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CheckOptions {
    /// Perturb one stored ILU value before the pattern checks.
    pub corrupt_ilu: bool,
}

/// 8×8 Poisson operator on `[−1, 1]²`.
pub fn poisson_8x8() -> Discretization {
    let g = make_grid(8, 8, [-1.0, 1.0, -1.0, 1.0]).expect("valid grid");
    Discretization::new(g, ProblemSpec::poisson(1)).expect("valid problem")
}

/// Cavity operator (Re 100) with convective velocities drawn uniformly from
/// `[−1, 1]` by a ChaCha8 stream seeded with `seed`, `u` before `v`.
pub fn random_cavity(n: usize, seed: u64) -> Discretization {
    let g = make_grid(n, n, [0.0, 1.0, 0.0, 1.0]).expect("valid grid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = (0..g.n_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v = (0..g.n_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Discretization::new(g, ProblemSpec::cavity(100.0))
        .and_then(|d| d.with_linearization(LinearizationState::new(g, u, v)?))
        .expect("valid cavity operator")
}

/// Colored Jacobian at the origin with its pattern and coloring.
pub fn colored_jacobian(disc: &Discretization) -> prepinn_core::Result<(SparseMatrix, Coloring)> {
    let pattern = disc.pattern();
    let coloring = color_columns(&pattern);
    let zero = vec![0.0; disc.n_unknowns()];
    Ok((assemble_jacobian(disc, &zero, &pattern, &coloring)?.jacobian, coloring))
}

fn corrupt(fac: &IluFactors) -> IluFactors {
    let mut upper = fac.upper().clone();
    let v = upper.values_mut();
    let k = v.len() / 2;
    v[k] = 1.5 * v[k] + 1.0;
    IluFactors::from_parts(fac.lower().clone(), upper).expect("diagonal untouched")
}

/// `max |(L·U − J)ᵢⱼ|` over the pattern, relative to `max |J|`.
pub fn ilu_pattern_defect(disc: &Discretization, opts: CheckOptions) -> prepinn_core::Result<f64> {
    let (j, _) = colored_jacobian(disc)?;
    let mut fac = ilu0(&j)?;
    if opts.corrupt_ilu {
        fac = corrupt(&fac);
    }
    Ok(fac.pattern_defect(&j) / j.max_abs())
}

/// All same-colored column pairs compared on their full row sets.
pub fn exhaustive_conflicts(pattern: &SparseMatrix, coloring: &Coloring) -> usize {
    let cols = pattern.transpose();
    let n = pattern.n_cols();
    let mut conflicts = 0;
    for a in 0..n {
        for b in a + 1..n {
            if coloring.color_of[a] == coloring.color_of[b]
                && cols.row_cols(a).iter().any(|r| cols.row_cols(b).contains(r))
            {
                conflicts += 1;
            }
        }
    }
    conflicts
}

/// Entries where the colored Jacobian differs from column-by-column probing,
/// and the coloring conflict count.
pub fn coloring_mismatches(disc: &Discretization) -> prepinn_core::Result<(usize, usize, usize)> {
    let (j, coloring) = colored_jacobian(disc)?;
    let zero = vec![0.0; disc.n_unknowns()];
    let dense = probe_jacobian_dense(disc, &zero);
    let mismatched = j.to_dense().iter().zip(&dense).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
    let conflicts = exhaustive_conflicts(&disc.pattern(), &coloring)
        + usize::from(first_conflict(&coloring, &disc.pattern()).is_some());
    Ok((mismatched, conflicts, coloring.n_colors))
}

/// Worst relative gap in `(M⁻ᵀr)·f = r·(M⁻¹f)` over `pairs` random pairs.
pub fn adjoint_identity_gap(fac: &IluFactors, pairs: usize, seed: u64) -> prepinn_core::Result<f64> {
    let n = fac.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = apply_minv_transpose(fac, &r)?.iter().zip(&f).map(|(a, b)| a * b).sum();
        let rhs: f64 = r.iter().zip(apply_minv(fac, &f)?).map(|(a, b)| a * b).sum();
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    Ok(worst)
}

/// Agreement of the preconditioned loss with its dense-inverse definition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseLossCheck {
    pub value_gap: f64,
    pub worst_gradient_gap: f64,
    pub checked: usize,
    pub total: usize,
}

/// 6×6 Poisson, `2 → 8 → 1` tanh network: loss value against
/// `(w/N)·‖M⁻¹f‖²` with `M⁻¹` formed densely, and the adjoint gradient
/// against central differences of that dense formula on every parameter
/// whose difference quotient exceeds `1e−8` in magnitude.
pub fn dense_inverse_loss_check(weight: f64, seed: u64) -> prepinn_core::Result<DenseLossCheck> {
    let g = make_grid(6, 6, [-1.0, 1.0, -1.0, 1.0])?;
    let model = LossModel::new(&g, &ProblemSpec::poisson(1), TrainMode::Preconditioned, weight)?;
    let n = g.n_nodes();
    let minv = DMatrix::from_row_slice(n, n, &model.factors().product_dense())
        .try_inverse()
        .ok_or_else(|| prepinn_core::Error::InvalidMatrix("ILU product is singular".into()))?;
    let arch =
        NetworkArch { kind: NetworkKind::PerPointMlp, hidden: vec![8], activation: Activation::Tanh, outputs: 1 };
    let params = init_params(&arch, seed)?;
    let dense_loss = |p: &ParameterSet| -> prepinn_core::Result<f64> {
        let f = model.residual(&model.output(p)?)?;
        let pv = &minv * DMatrix::from_column_slice(n, 1, &f.values);
        Ok(weight / n as f64 * pv.norm_squared())
    };
    let eval = model.evaluate(&params)?;
    let reference = dense_loss(&params)?;
    let value_gap = (eval.loss - reference).abs() / reference;
    let (mut worst, mut checked) = (0.0f64, 0);
    for i in 0..params.len() {
        let h = 1e-6 * (1.0 + params.values()[i].abs());
        let mut plus = params.values().to_vec();
        let mut minus = plus.clone();
        plus[i] += h;
        minus[i] -= h;
        let fd = (dense_loss(&params.with_values(plus)?)? - dense_loss(&params.with_values(minus)?)?) / (2.0 * h);
        if fd.abs() > 1e-8 {
            checked += 1;
            worst = worst.max((eval.gradient[i] - fd).abs() / fd.abs());
        }
    }
    Ok(DenseLossCheck { value_gap, worst_gradient_gap: worst, checked, total: params.len() })
}

/// Worst relative error of the tape gradient of `Σ output²` against central
/// differences, over both network kinds, both activations and 1 or 3 outputs.
pub fn network_gradient_gap() -> prepinn_core::Result<f64> {
    let mut worst = 0.0f64;
    for kind in [NetworkKind::PerPointMlp, NetworkKind::ConvEncoderDecoder] {
        for activation in [Activation::Tanh, Activation::Gelu] {
            for outputs in [1, 3] {
                let arch = NetworkArch { kind, hidden: vec![3, 2], activation, outputs };
                worst = worst.max(gradient_gap(&arch, make_grid(4, 4, [0.0, 1.0, -1.0, 1.0])?)?);
            }
        }
    }
    Ok(worst)
}

fn gradient_gap(arch: &NetworkArch, g: StructuredGrid) -> prepinn_core::Result<f64> {
    let p = init_params(arch, 5)?;
    let coords = coordinate_channels(&g);
    let (out, tape) = forward(&p, &coords)?;
    let seed = Field::new(g, arch.outputs, out.values().iter().map(|v| 2.0 * v).collect())?;
    let grad = backward(&tape, &p, &seed)?;
    let loss = |vals: Vec<f64>| -> prepinn_core::Result<f64> {
        Ok(forward(&p.with_values(vals)?, &coords)?.0.values().iter().map(|v| v * v).sum())
    };
    let mut worst = 0.0f64;
    for k in 0..p.len() {
        let h = 1e-6 * (1.0 + p.values()[k].abs());
        let mut plus = p.values().to_vec();
        let mut minus = plus.clone();
        plus[k] += h;
        minus[k] -= h;
        let fd = (loss(plus)? - loss(minus)?) / (2.0 * h);
        worst = worst.max((grad[k] - fd).abs() / fd.abs().max(grad[k].abs()).max(1e-6));
    }
    Ok(worst)
}

/// Whether identity factors reproduce the plain loss and seed bit for bit.
pub fn identity_factors_match(seed: u64) -> prepinn_core::Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = ResidualVector { values: (0..64).map(|_| rng.random_range(-5.0..5.0)).collect(), equations_per_node: 1 };
    let base = baseline_loss(&f, 3.0)?;
    let (pre, _) = precond_loss(&f, &IluFactors::identity(64), 3.0)?;
    Ok(base.value.to_bits() == pre.value.to_bits()
        && base.seed.iter().zip(&pre.seed).all(|(a, b)| a.to_bits() == b.to_bits()))
}

fn outcome(name: &'static str, result: prepinn_core::Result<(bool, String)>) -> CheckOutcome {
    match result {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome { name, passed: false, detail: format!("error: {e}") },
    }
}

pub fn run_checks(opts: CheckOptions) -> Vec<CheckOutcome> {
    let poisson = poisson_8x8();
    let cavity = random_cavity(8, 0);
    let mut out = Vec::new();
    for (name, disc) in [("ilu_pattern_exact_poisson_8x8", &poisson), ("ilu_pattern_exact_cavity_8x8", &cavity)] {
        out.push(outcome(
            name,
            ilu_pattern_defect(disc, opts)
                .map(|d| (d <= 1e-12, format!("max pattern defect {d:.3e} x max|J| (limit 1e-12)"))),
        ));
    }
    for (name, disc) in [("coloring_exact_poisson_8x8", &poisson), ("coloring_exact_cavity_8x8", &cavity)] {
        out.push(outcome(
            name,
            coloring_mismatches(disc).map(|(m, c, colors)| {
                (m == 0 && c == 0, format!("{colors} colors, {c} conflicts, {m} entries differ from probing"))
            }),
        ));
    }
    out.push(outcome(
        "adjoint_identity_poisson_10x10",
        make_grid(10, 10, [-1.0, 1.0, -1.0, 1.0])
            .and_then(|g| Discretization::new(g, ProblemSpec::poisson(1)))
            .and_then(|d| colored_jacobian(&d))
            .and_then(|(j, _)| ilu0(&j))
            .and_then(|fac| adjoint_identity_gap(&fac, 100, 3))
            .map(|gap| (gap <= 1e-12, format!("worst relative gap {gap:.3e} over 100 pairs (limit 1e-12)"))),
    ));
    out.push(outcome(
        "precond_loss_matches_dense_inverse",
        dense_inverse_loss_check(2.0, 7).map(|c| {
            (
                c.value_gap <= 1e-12 && c.worst_gradient_gap <= 1e-5,
                format!(
                    "value gap {:.3e} (limit 1e-12), gradient gap {:.3e} on {}/{} parameters (limit 1e-5)",
                    c.value_gap, c.worst_gradient_gap, c.checked, c.total
                ),
            )
        }),
    ));
    out.push(outcome(
        "network_gradient",
        network_gradient_gap().map(|gap| (gap < 1e-6, format!("worst relative error {gap:.3e} (limit 1e-6)"))),
    ));
    out.push(outcome(
        "identity_factors_reduce_to_baseline",
        identity_factors_match(1).map(|ok| (ok, if ok { "bit-identical".into() } else { "differs".into() })),
    ));
    out
}
