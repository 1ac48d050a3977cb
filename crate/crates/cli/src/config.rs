//! Run configuration: a TOML file with `[problem]`, `[network]`,
//! `[training]` and `[output]` tables. Unknown keys are rejected and every
//! validation error carries the line of the offending key.

use std::ops::Range;
use std::path::{Path, PathBuf};

use prepinn_core::discretize::{ProblemKind, SchemeOrder, UnknownOrdering};
use prepinn_core::grid::make_grid;
use prepinn_core::net::{Activation, NetworkArch, NetworkKind};
use prepinn_core::train::{AdamConfig, LbfgsConfig, LossWeight, Optimizer, TrainConfig, TrainMode};
use prepinn_core::{ProblemSpec, StructuredGrid};
use serde::Deserialize;
use toml::Spanned;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Invalid { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub dump_fields: bool,
    pub dump_jacobian: bool,
    /// Largest unknown count for which dense condition numbers are reported.
    pub condition_limit: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub problem: ProblemSpec,
    pub grid: StructuredGrid,
    pub arch: NetworkArch,
    pub train: TrainConfig,
    pub mode: TrainMode,
    pub output: OutputConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: RawProblem,
    #[serde(default)]
    network: RawNetwork,
    #[serde(default)]
    training: RawTraining,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    kind: Spanned<String>,
    k: Option<Spanned<i64>>,
    re: Option<Spanned<f64>>,
    lid_velocity: Option<Spanned<f64>>,
    scheme_order: Option<Spanned<i64>>,
    nx: Spanned<i64>,
    ny: Spanned<i64>,
    extents: Option<Spanned<Vec<f64>>>,
    ordering: Option<Spanned<String>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    kind: Option<Spanned<String>>,
    hidden: Option<Spanned<Vec<i64>>>,
    activation: Option<Spanned<String>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    mode: Option<Spanned<String>>,
    optimizer: Option<Spanned<String>>,
    epochs: Option<Spanned<i64>>,
    weight: Option<Spanned<toml::Value>>,
    lr: Option<Spanned<f64>>,
    beta1: Option<Spanned<f64>>,
    beta2: Option<Spanned<f64>>,
    eps: Option<Spanned<f64>>,
    history: Option<Spanned<i64>>,
    max_inner: Option<Spanned<i64>>,
    c1: Option<Spanned<f64>>,
    c2: Option<Spanned<f64>>,
    carry_history: Option<bool>,
    refactor_stride: Option<Spanned<i64>>,
    seed: Option<Spanned<i64>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    directory: Option<Spanned<String>>,
    log_stride: Option<Spanned<i64>>,
    wall_clock: Option<bool>,
    dump_fields: Option<bool>,
    dump_jacobian: Option<bool>,
    condition_limit: Option<Spanned<i64>>,
}

/// Error builder bound to one source file.
struct Ctx<'a> {
    path: &'a str,
    text: &'a str,
}

impl Ctx<'_> {
    fn line_of(&self, offset: usize) -> usize {
        self.text[..offset.min(self.text.len())].matches('\n').count() + 1
    }

    fn err(&self, span: Range<usize>, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { path: self.path.to_string(), line: self.line_of(span.start), message: message.into() }
    }

    fn count(&self, v: &Spanned<i64>, key: &str, min: i64) -> Result<usize, ConfigError> {
        if *v.get_ref() < min {
            return Err(self.err(v.span(), format!("`{key}` must be at least {min}, got {}", v.get_ref())));
        }
        Ok(*v.get_ref() as usize)
    }

    fn positive(&self, v: &Spanned<f64>, key: &str) -> Result<f64, ConfigError> {
        let x = *v.get_ref();
        if !(x > 0.0 && x.is_finite()) {
            return Err(self.err(v.span(), format!("`{key}` must be positive and finite, got {x}")));
        }
        Ok(x)
    }

    fn open_unit(&self, v: &Spanned<f64>, key: &str) -> Result<f64, ConfigError> {
        let x = *v.get_ref();
        if !(x > 0.0 && x < 1.0) {
            return Err(self.err(v.span(), format!("`{key}` must lie in (0, 1), got {x}")));
        }
        Ok(x)
    }

    fn choice<T>(
        &self,
        v: &Spanned<String>,
        key: &str,
        parse: impl Fn(&str) -> prepinn_core::Result<T>,
    ) -> Result<T, ConfigError> {
        parse(v.get_ref()).map_err(|_| self.err(v.span(), format!("`{key}` has unsupported value `{}`", v.get_ref())))
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    let name = path.file_stem().map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned());
    parse_config_str(&text, &path.display().to_string(), &name)
}

/// Parse configuration text; `origin` names the source in errors and `name`
/// seeds the default output directory `runs/<name>`.
pub fn parse_config_str(text: &str, origin: &str, name: &str) -> Result<RunConfig, ConfigError> {
    let ctx = Ctx { path: origin, text };
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let span = e.span().unwrap_or(0..0);
        ctx.err(span, e.message().to_string())
    })?;

    let p = &raw.problem;
    let mut problem = match p.kind.get_ref().as_str() {
        "poisson" => {
            let k = p.k.as_ref().ok_or_else(|| ctx.err(p.kind.span(), "Poisson problems need `k`"))?;
            if let Some(re) = &p.re {
                return Err(ctx.err(re.span(), "`re` applies to the cavity only"));
            }
            ProblemSpec::poisson(ctx.count(k, "k", 1)? as u32)
        }
        "cavity" => {
            let re = p.re.as_ref().ok_or_else(|| ctx.err(p.kind.span(), "cavity problems need `re`"))?;
            if let Some(k) = &p.k {
                return Err(ctx.err(k.span(), "`k` applies to Poisson only"));
            }
            let mut spec = ProblemSpec::cavity(ctx.positive(re, "re")?);
            if let Some(lid) = &p.lid_velocity {
                if !lid.get_ref().is_finite() {
                    return Err(ctx.err(lid.span(), "`lid_velocity` must be finite"));
                }
                if let ProblemKind::Cavity { lid_velocity, .. } = &mut spec.kind {
                    *lid_velocity = *lid.get_ref();
                }
            }
            spec
        }
        other => return Err(ctx.err(p.kind.span(), format!("`kind` must be `poisson` or `cavity`, got `{other}`"))),
    };
    if let (Some(lid), false) = (&p.lid_velocity, problem.is_cavity()) {
        return Err(ctx.err(lid.span(), "`lid_velocity` applies to the cavity only"));
    }
    if let Some(order) = &p.scheme_order {
        let parsed = u32::try_from(*order.get_ref()).ok().and_then(|o| SchemeOrder::from_int(o).ok());
        problem.scheme_order = parsed.ok_or_else(|| ctx.err(order.span(), "`scheme_order` must be 2 or 4"))?;
    }
    if let Some(ordering) = &p.ordering {
        problem.ordering = ctx.choice(ordering, "ordering", UnknownOrdering::parse)?;
    }
    let nx = ctx.count(&p.nx, "nx", 3)?;
    let ny = ctx.count(&p.ny, "ny", 3)?;
    let extents = match &p.extents {
        None => problem.default_extents(),
        Some(e) => {
            let v = e.get_ref();
            if v.len() != 4 {
                return Err(ctx.err(e.span(), "`extents` needs four values: x_min, x_max, y_min, y_max"));
            }
            [v[0], v[1], v[2], v[3]]
        }
    };
    let grid = make_grid(nx, ny, extents).map_err(|e| {
        let span = p.extents.as_ref().map_or(p.nx.span(), Spanned::span);
        ctx.err(span, format!("`extents`: {e}"))
    })?;

    let n = &raw.network;
    let mut arch = NetworkArch::reference(problem.n_components(), Activation::Tanh);
    if let Some(kind) = &n.kind {
        arch.kind = ctx.choice(kind, "kind", NetworkKind::parse)?;
    }
    if let Some(act) = &n.activation {
        arch.activation = ctx.choice(act, "activation", Activation::parse)?;
    }
    if let Some(hidden) = &n.hidden {
        if hidden.get_ref().is_empty() || hidden.get_ref().iter().any(|&h| h < 1) {
            return Err(ctx.err(hidden.span(), "`hidden` needs one or more positive widths"));
        }
        arch.hidden = hidden.get_ref().iter().map(|&h| h as usize).collect();
    }
    let factor = arch.size_factor();
    if nx % factor != 0 || ny % factor != 0 {
        let span = if nx % factor != 0 { p.nx.span() } else { p.ny.span() };
        return Err(ctx.err(span, format!("`nx` and `ny` must be divisible by {factor} for this encoder depth")));
    }

    let t = &raw.training;
    let mode = match &t.mode {
        Some(m) => ctx.choice(m, "mode", TrainMode::parse)?,
        None => TrainMode::Preconditioned,
    };
    let mut train = TrainConfig::default();
    if let Some(o) = &t.optimizer {
        train.optimizer = ctx.choice(o, "optimizer", Optimizer::parse)?;
    }
    if let Some(e) = &t.epochs {
        train.epochs = ctx.count(e, "epochs", 1)?;
    }
    if let Some(w) = &t.weight {
        train.weight = match w.get_ref() {
            toml::Value::String(s) if s == "auto" => LossWeight::Auto,
            toml::Value::Float(x) if *x > 0.0 && x.is_finite() => LossWeight::Fixed(*x),
            toml::Value::Integer(x) if *x > 0 => LossWeight::Fixed(*x as f64),
            _ => return Err(ctx.err(w.span(), "`weight` must be \"auto\" or a positive number")),
        };
    }
    let mut adam = AdamConfig::default();
    if let Some(v) = &t.lr {
        adam.lr = ctx.positive(v, "lr")?;
    }
    if let Some(v) = &t.beta1 {
        adam.beta1 = ctx.open_unit(v, "beta1")?;
    }
    if let Some(v) = &t.beta2 {
        adam.beta2 = ctx.open_unit(v, "beta2")?;
    }
    if let Some(v) = &t.eps {
        adam.eps = ctx.positive(v, "eps")?;
    }
    train.adam = adam;
    let mut lbfgs = LbfgsConfig::default();
    if let Some(v) = &t.history {
        lbfgs.history = ctx.count(v, "history", 1)?;
    }
    if let Some(v) = &t.max_inner {
        lbfgs.max_inner = ctx.count(v, "max_inner", 1)?;
    }
    if let Some(v) = &t.c1 {
        lbfgs.c1 = ctx.open_unit(v, "c1")?;
    }
    if let Some(v) = &t.c2 {
        lbfgs.c2 = ctx.open_unit(v, "c2")?;
        if lbfgs.c2 <= lbfgs.c1 {
            return Err(ctx.err(v.span(), "`c2` must exceed `c1`"));
        }
    }
    if let Some(v) = t.carry_history {
        lbfgs.carry_history = v;
    }
    train.lbfgs = lbfgs;
    if let Some(v) = &t.refactor_stride {
        train.refactor_stride = ctx.count(v, "refactor_stride", 1)?;
    }
    if let Some(v) = &t.seed {
        train.seed = u64::try_from(*v.get_ref()).map_err(|_| ctx.err(v.span(), "`seed` must be non-negative"))?;
    }

    let o = &raw.output;
    if let Some(v) = &o.log_stride {
        train.log_stride = ctx.count(v, "log_stride", 1)?;
    }
    train.wall_clock = o.wall_clock.unwrap_or(false);
    let condition_limit = match &o.condition_limit {
        Some(v) => ctx.count(v, "condition_limit", 0)?,
        None => 1024,
    };
    let directory =
        o.directory.as_ref().map_or_else(|| PathBuf::from("runs").join(name), |d| PathBuf::from(d.get_ref()));

    Ok(RunConfig {
        name: name.to_string(),
        problem,
        grid,
        arch,
        train,
        mode,
        output: OutputConfig {
            directory,
            dump_fields: o.dump_fields.unwrap_or(true),
            dump_jacobian: o.dump_jacobian.unwrap_or(false),
            condition_limit,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[problem]\nkind = \"poisson\"\nk = 5\nnx = 10\nny = 8\n";

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        parse_config_str(text, "test.toml", "test")
    }

    fn line_and_message(e: ConfigError) -> (usize, String) {
        match e {
            ConfigError::Invalid { line, message, .. } => (line, message),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.problem.kind, ProblemKind::Poisson { k: 5 });
        assert_eq!((c.grid.nx, c.grid.ny), (10, 8));
        assert_eq!(c.grid.extents(), [-1.0, 1.0, -1.0, 1.0]);
        assert_eq!(c.mode, TrainMode::Preconditioned);
        assert_eq!(c.arch, NetworkArch::reference(1, Activation::Tanh));
        assert_eq!(c.output.directory, PathBuf::from("runs/test"));
        assert_eq!(c.train, TrainConfig::default());
    }

    #[test]
    fn small_nx_is_named_with_its_line() {
        let (line, msg) = line_and_message(parse(&MINIMAL.replace("nx = 10", "nx = 2")).unwrap_err());
        assert_eq!(line, 4);
        assert!(msg.contains("`nx`"), "{msg}");
    }

    #[test]
    fn unknown_key_is_named() {
        let (line, msg) = line_and_message(parse(&format!("{MINIMAL}foo = 1\n")).unwrap_err());
        assert_eq!(line, 6);
        assert!(msg.contains("foo"), "{msg}");
        let (_, msg) = line_and_message(parse(&format!("{MINIMAL}[training]\nlearning_rate = 1\n")).unwrap_err());
        assert!(msg.contains("learning_rate"), "{msg}");
    }

    #[test]
    fn full_cavity_config() {
        let text = r#"
[problem]
kind = "cavity"
re = 100
scheme_order = 4
nx = 16
ny = 16
ordering = "node_major"

[network]
kind = "conv"
hidden = [8, 16]
activation = "gelu"

[training]
mode = "baseline"
optimizer = "lbfgs"
epochs = 30
weight = 1e3
max_inner = 200
carry_history = true
refactor_stride = 2
seed = 7

[output]
directory = "out/cav"
log_stride = 5
dump_jacobian = true
"#;
        let c = parse(text).unwrap();
        assert_eq!(c.problem.kind, ProblemKind::Cavity { re: 100.0, lid_velocity: 1.0 });
        assert_eq!(c.problem.scheme_order, SchemeOrder::Fourth);
        assert_eq!(c.problem.ordering, UnknownOrdering::NodeMajor);
        assert_eq!(c.arch.kind, NetworkKind::ConvEncoderDecoder);
        assert_eq!(c.arch.hidden, vec![8, 16]);
        assert_eq!(c.arch.outputs, 3);
        assert_eq!(c.mode, TrainMode::Baseline);
        assert_eq!(c.train.optimizer, Optimizer::Lbfgs);
        assert_eq!(c.train.weight, LossWeight::Fixed(1e3));
        assert_eq!(c.train.lbfgs.max_inner, 200);
        assert!(c.train.lbfgs.carry_history);
        assert_eq!(c.train.refactor_stride, 2);
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.train.log_stride, 5);
        assert!(c.output.dump_jacobian);
        assert_eq!(c.output.directory, PathBuf::from("out/cav"));
    }

    #[test]
    fn validation_errors() {
        let cases = [
            (MINIMAL.replace("k = 5", "k = 0"), "`k`"),
            (MINIMAL.replace("\"poisson\"", "\"heat\""), "`kind`"),
            (format!("{MINIMAL}scheme_order = 3\n"), "scheme_order"),
            (format!("{MINIMAL}re = 10\n"), "`re`"),
            (format!("{MINIMAL}extents = [0, 1, 0]\n"), "extents"),
            (format!("{MINIMAL}extents = [1, 0, 0, 1]\n"), "extents"),
            (format!("{MINIMAL}[network]\nkind = \"conv\"\nhidden = [4, 4]\n"), "divisible"),
            (format!("{MINIMAL}[training]\nweight = -1\n"), "weight"),
            (format!("{MINIMAL}[training]\nbeta2 = 1.0\n"), "beta2"),
            (format!("{MINIMAL}[training]\nc1 = 0.5\nc2 = 0.4\n"), "c2"),
            (format!("{MINIMAL}[training]\noptimizer = \"sgd\"\n"), "optimizer"),
            (format!("{MINIMAL}[output]\nlog_stride = 0\n"), "log_stride"),
        ];
        for (text, needle) in cases {
            let (_, msg) = line_and_message(parse(&text).unwrap_err());
            assert!(msg.contains(needle), "{needle}: {msg}");
        }
    }

    #[test]
    fn missing_required_key() {
        let (_, msg) = line_and_message(parse("[problem]\nkind = \"poisson\"\nk = 1\nnx = 5\n").unwrap_err());
        assert!(msg.contains("ny"), "{msg}");
    }
}
