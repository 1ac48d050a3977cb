//! Networks mapping grid coordinates to solution fields, with a small
//! reverse-mode engine for parameter gradients.

mod tape;

use std::hash::{Hash, Hasher};
use std::io::{BufRead, Write};

use ndarray::Array2;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Field;

use tape::PatchGeom;
pub use tape::Tape;

/// Channels the coordinate input carries: `x` and `y`.
pub const INPUT_CHANNELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    /// Exact GELU, `x·Φ(x)`.
    Gelu,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)),
        }
    }

    /// Derivative at input `x` with output `y = eval(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + x * pdf
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Gelu => "gelu",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "gelu" => Ok(Activation::Gelu),
            other => Err(Error::InvalidArch(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetworkKind {
    /// One MLP applied independently at every node.
    PerPointMlp,
    /// Stride-2 4×4 convolution encoder, then bilinear ×2 upsampling and 3×3
    /// convolution decoder stages, then a per-pixel linear head.
    ConvEncoderDecoder,
}

impl NetworkKind {
    pub fn name(self) -> &'static str {
        match self {
            NetworkKind::PerPointMlp => "mlp",
            NetworkKind::ConvEncoderDecoder => "conv",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mlp" => Ok(NetworkKind::PerPointMlp),
            "conv" => Ok(NetworkKind::ConvEncoderDecoder),
            other => Err(Error::InvalidArch(format!("unknown network kind `{other}`"))),
        }
    }
}

/// For the MLP, `hidden` lists layer widths. For the encoder–decoder it
/// lists the channel count after each encoder stage; the decoder mirrors it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkArch {
    pub kind: NetworkKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub outputs: usize,
}

/// One affine layer inside the flat parameter vector: weights
/// `(kernel²·fan_in) × fan_out` row-major, then `fan_out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    kernel: usize,
    offset: usize,
}

impl Layer {
    fn rows(&self) -> usize {
        self.kernel * self.kernel * self.fan_in
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.rows() * self.fan_out
    }

    fn end(&self) -> usize {
        self.bias_offset() + self.fan_out
    }

    fn glorot_bound(&self) -> f64 {
        let k2 = (self.kernel * self.kernel) as f64;
        (6.0 / (k2 * (self.fan_in + self.fan_out) as f64)).sqrt()
    }
}

impl NetworkArch {
    /// The reference per-point network `2 → 64 → 64 → 64 → outputs`.
    pub fn reference(outputs: usize, activation: Activation) -> Self {
        Self { kind: NetworkKind::PerPointMlp, hidden: vec![64, 64, 64], activation, outputs }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::InvalidArch("at least one hidden layer is required".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArch("hidden widths must be at least 1".into()));
        }
        if self.outputs == 0 {
            return Err(Error::InvalidArch("at least one output component is required".into()));
        }
        Ok(())
    }

    /// Grid sides must be divisible by this for the encoder–decoder.
    pub fn size_factor(&self) -> usize {
        match self.kind {
            NetworkKind::PerPointMlp => 1,
            NetworkKind::ConvEncoderDecoder => 1 << self.hidden.len(),
        }
    }

    fn layers(&self) -> Vec<Layer> {
        let mut shapes = Vec::new();
        match self.kind {
            NetworkKind::PerPointMlp => {
                let mut prev = INPUT_CHANNELS;
                for &w in &self.hidden {
                    shapes.push((prev, w, 1));
                    prev = w;
                }
                shapes.push((prev, self.outputs, 1));
            }
            NetworkKind::ConvEncoderDecoder => {
                let mut prev = INPUT_CHANNELS;
                for &c in &self.hidden {
                    shapes.push((prev, c, 4));
                    prev = c;
                }
                for k in (0..self.hidden.len()).rev() {
                    let c = self.hidden[k.saturating_sub(1)];
                    shapes.push((prev, c, 3));
                    prev = c;
                }
                shapes.push((prev, self.outputs, 1));
            }
        }
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(fan_in, fan_out, kernel)| {
                let l = Layer { fan_in, fan_out, kernel, offset };
                offset = l.end();
                l
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers().last().map_or(0, Layer::end)
    }

    /// One-line textual form used as the checkpoint header.
    pub fn descriptor(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        format!(
            "prepinn-params v1 kind={} activation={} inputs={} hidden={} outputs={} count={}",
            self.kind.name(),
            self.activation.name(),
            INPUT_CHANNELS,
            hidden.join(","),
            self.outputs,
            self.n_params()
        )
    }

    pub fn parse_descriptor(line: &str) -> Result<Self> {
        let bad = |why: &str| Error::Checkpoint(format!("{why} in header `{line}`"));
        let mut words = line.split_whitespace();
        if words.next() != Some("prepinn-params") || words.next() != Some("v1") {
            return Err(bad("unrecognized format tag"));
        }
        let (mut kind, mut act, mut hidden, mut outputs, mut count) = (None, None, None, None, None);
        for word in words {
            let (key, value) = word.split_once('=').ok_or_else(|| bad("malformed field"))?;
            match key {
                "kind" => kind = Some(NetworkKind::parse(value)?),
                "activation" => act = Some(Activation::parse(value)?),
                "inputs" if value == INPUT_CHANNELS.to_string() => {}
                "inputs" => return Err(bad("unsupported input count")),
                "hidden" => {
                    let widths: std::result::Result<Vec<usize>, _> = value.split(',').map(str::parse).collect();
                    hidden = Some(widths.map_err(|_| bad("bad hidden widths"))?);
                }
                "outputs" => outputs = Some(value.parse().map_err(|_| bad("bad output count"))?),
                "count" => count = Some(value.parse::<usize>().map_err(|_| bad("bad count"))?),
                _ => return Err(bad("unknown field")),
            }
        }
        let arch = NetworkArch {
            kind: kind.ok_or_else(|| bad("missing kind"))?,
            hidden: hidden.ok_or_else(|| bad("missing hidden"))?,
            activation: act.ok_or_else(|| bad("missing activation"))?,
            outputs: outputs.ok_or_else(|| bad("missing outputs"))?,
        };
        arch.validate()?;
        if count != Some(arch.n_params()) {
            return Err(bad("parameter count does not match the architecture"));
        }
        Ok(arch)
    }
}

/// Flat parameter vector tied to its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    arch: NetworkArch,
    values: Vec<f64>,
}

impl ParameterSet {
    pub fn new(arch: NetworkArch, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.n_params() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: arch.n_params(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { arch, values })
    }

    pub fn arch(&self) -> &NetworkArch {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same architecture, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.arch.clone(), values)
    }

    fn fingerprint(&self) -> u64 {
        let mut h = std::hash::DefaultHasher::new();
        self.arch.hash(&mut h);
        for v in &self.values {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// Header line, newline, then the values as little-endian `f64`.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.arch.descriptor())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<Self> {
        let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
        let mut header = String::new();
        input.read_line(&mut header).map_err(io)?;
        let arch = NetworkArch::parse_descriptor(header.trim_end_matches('\n'))?;
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes).map_err(io)?;
        if bytes.len() != 8 * arch.n_params() {
            return Err(Error::Checkpoint(format!(
                "expected {} value bytes, found {}",
                8 * arch.n_params(),
                bytes.len()
            )));
        }
        let values =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes"))).collect();
        Self::new(arch, values)
    }
}

/// Glorot-uniform weights with bound `√(6/(fan_in+fan_out))` (fans scaled by
/// the kernel area for convolutions) and zero biases.
pub fn init_params(arch: &NetworkArch, seed: u64) -> Result<ParameterSet> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; arch.n_params()];
    for layer in arch.layers() {
        let bound = layer.glorot_bound();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite positive bound");
        for v in &mut values[layer.offset..layer.bias_offset()] {
            *v = dist.sample(&mut rng);
        }
    }
    ParameterSet::new(arch.clone(), values)
}

/// Evaluate the network on the coordinate channels of a grid.
///
/// `coords` must have two components (`x`, `y`); the result has
/// `arch.outputs` components on the same grid.
pub fn forward(params: &ParameterSet, coords: &Field) -> Result<(Field, Tape)> {
    let arch = &params.arch;
    if coords.n_components() != INPUT_CHANNELS {
        return Err(Error::ComponentMismatch { expected: INPUT_CHANNELS, got: coords.n_components() });
    }
    let grid = *coords.grid();
    let factor = arch.size_factor();
    if grid.nx % factor != 0 || grid.ny % factor != 0 {
        return Err(Error::NotDivisible { nx: grid.nx, ny: grid.ny, factor });
    }
    let n = grid.n_nodes();
    let input = Array2::from_shape_fn((n, INPUT_CHANNELS), |(r, c)| coords.values()[c * n + r]);

    let flat = &params.values;
    let mut tape = Tape::new(flat.len(), params.fingerprint());
    let affine = |tape: &mut Tape, x: usize, l: &Layer| {
        let w = tape.param(flat, l.offset, l.rows(), l.fan_out);
        let b = tape.param(flat, l.bias_offset(), 1, l.fan_out);
        let xw = tape.matmul(x, w);
        tape.add_bias(xw, b)
    };

    let layers = arch.layers();
    let mut x = tape.leaf(input);
    match arch.kind {
        NetworkKind::PerPointMlp => {
            for l in &layers[..layers.len() - 1] {
                let z = affine(&mut tape, x, l);
                x = tape.act(z, arch.activation);
            }
        }
        NetworkKind::ConvEncoderDecoder => {
            let depth = arch.hidden.len();
            let (mut h, mut w) = (grid.ny, grid.nx);
            for l in &layers[..depth] {
                let geom = PatchGeom { h, w, channels: l.fan_in, kernel: 4, stride: 2, pad: 1 };
                let cols = tape.patches(x, geom);
                let z = affine(&mut tape, cols, l);
                x = tape.act(z, arch.activation);
                (h, w) = (geom.out_h(), geom.out_w());
            }
            for l in &layers[depth..2 * depth] {
                let up = tape.upsample(x, h, w);
                (h, w) = (2 * h, 2 * w);
                let geom = PatchGeom { h, w, channels: l.fan_in, kernel: 3, stride: 1, pad: 1 };
                let cols = tape.patches(up, geom);
                let z = affine(&mut tape, cols, l);
                x = tape.act(z, arch.activation);
            }
        }
    }
    let out = affine(&mut tape, x, layers.last().expect("architecture has an output layer"));

    let value = tape.value(out);
    let mut field = vec![0.0; n * arch.outputs];
    for ((r, c), v) in value.indexed_iter() {
        field[c * n + r] = *v;
    }
    let field = Field::new(grid, arch.outputs, field)?;
    Ok((field, tape))
}

/// Gradient of a scalar loss w.r.t. the parameters, given the loss gradient
/// w.r.t. the network output (`seed`, same layout as the output field).
pub fn backward(tape: &Tape, params: &ParameterSet, seed: &Field) -> Result<Vec<f64>> {
    if tape.n_params != params.len() || tape.params_fingerprint != params.fingerprint() {
        return Err(Error::StaleTape);
    }
    let last = tape.value(tape.nodes.len() - 1);
    let (n, nc) = last.dim();
    if seed.n_components() != nc || seed.values().len() != n * nc {
        return Err(Error::ComponentMismatch { expected: nc, got: seed.n_components() });
    }
    let s = Array2::from_shape_fn((n, nc), |(r, c)| seed.values()[c * n + r]);
    Ok(tape.backprop(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{coordinate_channels, make_grid};
    use rand::Rng;

    fn mlp(hidden: Vec<usize>, act: Activation, outputs: usize) -> NetworkArch {
        NetworkArch { kind: NetworkKind::PerPointMlp, hidden, activation: act, outputs }
    }

    fn conv(hidden: Vec<usize>, act: Activation, outputs: usize) -> NetworkArch {
        NetworkArch { kind: NetworkKind::ConvEncoderDecoder, hidden, activation: act, outputs }
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(mlp(vec![8], Activation::Tanh, 1).n_params(), 2 * 8 + 8 + 8 + 1);
        assert_eq!(
            NetworkArch::reference(3, Activation::Gelu).n_params(),
            2 * 64 + 64 + 2 * (64 * 64 + 64) + 64 * 3 + 3
        );
        // encoder 2→4 (4×4), decoder 4→4 (3×3), head 4→1
        assert_eq!(conv(vec![4], Activation::Tanh, 1).n_params(), (16 * 2 * 4 + 4) + (9 * 4 * 4 + 4) + (4 + 1));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let arch = mlp(vec![4, 8], Activation::Tanh, 1);
        let a = init_params(&arch, 7).unwrap();
        let b = init_params(&arch, 7).unwrap();
        let c = init_params(&arch, 8).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
        // second layer is 4→8
        let l = arch.layers()[1];
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(a.values()[l.offset..l.bias_offset()].iter().all(|w| w.abs() <= bound));
        assert!(a.values()[l.bias_offset()..l.end()].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_params_give_zero_output() {
        let g = make_grid(4, 4, [0.0, 1.0, 0.0, 1.0]).unwrap();
        for arch in [mlp(vec![5, 5], Activation::Tanh, 3), conv(vec![3, 2], Activation::Gelu, 1)] {
            let p = ParameterSet::new(arch.clone(), vec![0.0; arch.n_params()]).unwrap();
            let (out, _) = forward(&p, &coordinate_channels(&g)).unwrap();
            assert!(out.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn constructed_weights_reproduce_linear_map() {
        // tanh(εz)/ε → z as ε → 0
        let eps = 1e-4;
        let arch = mlp(vec![2], Activation::Tanh, 1);
        let (a, b, c) = (0.7, -1.3, 0.25);
        let values = vec![eps, 0.0, 0.0, eps, 0.0, 0.0, a / eps, b / eps, c];
        let p = ParameterSet::new(arch, values).unwrap();
        let g = make_grid(5, 3, [-1.0, 1.0, -1.0, 1.0]).unwrap();
        let coords = coordinate_channels(&g);
        let (out, _) = forward(&p, &coords).unwrap();
        for node in 0..g.n_nodes() {
            let (x, y) = (coords.values()[node], coords.values()[g.n_nodes() + node]);
            assert!((out.values()[node] - (a * x + b * y + c)).abs() < 1e-7);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let g = make_grid(8, 8, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let p = init_params(&conv(vec![4, 6], Activation::Gelu, 3), 1).unwrap();
        let coords = coordinate_channels(&g);
        assert_eq!(forward(&p, &coords).unwrap().0, forward(&p, &coords).unwrap().0);
    }

    #[test]
    fn conv_rejects_indivisible_grid() {
        let g = make_grid(6, 8, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let p = init_params(&conv(vec![2, 2], Activation::Tanh, 1), 0).unwrap();
        assert!(matches!(forward(&p, &coordinate_channels(&g)), Err(Error::NotDivisible { factor: 4, .. })));
    }

    #[test]
    fn activations() {
        assert_eq!(Activation::Gelu.eval(0.0), 0.0);
        assert!((Activation::Gelu.eval(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        for x in [-3.0, -0.4, 0.0, 0.9, 2.5] {
            for f in [Activation::Tanh, Activation::Gelu] {
                let h = 1e-6;
                let fd = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
                assert!((f.derivative(x, f.eval(x)) - fd).abs() < 1e-8);
            }
            assert!(Activation::Tanh.eval(x).abs() < 1.0);
        }
    }

    #[test]
    fn zero_seed_and_linearity() {
        let g = make_grid(4, 4, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let p = init_params(&mlp(vec![6, 6], Activation::Tanh, 3), 3).unwrap();
        let (out, tape) = forward(&p, &coordinate_channels(&g)).unwrap();
        let zero = Field::zeros(g, 3);
        assert!(backward(&tape, &p, &zero).unwrap().iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rand_field = || Field::new(g, 3, (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (s1, s2) = (rand_field(), rand_field());
        let (a, b) = (0.3, -2.0);
        let mix = Field::new(g, 3, s1.values().iter().zip(s2.values()).map(|(x, y)| a * x + b * y).collect()).unwrap();
        let g1 = backward(&tape, &p, &s1).unwrap();
        let g2 = backward(&tape, &p, &s2).unwrap();
        let gm = backward(&tape, &p, &mix).unwrap();
        for k in 0..gm.len() {
            assert!((gm[k] - (a * g1[k] + b * g2[k])).abs() <= 1e-12 * (1.0 + gm[k].abs()));
        }
        assert_eq!(out.n_components(), 3);
    }

    #[test]
    fn stale_tape_rejected() {
        let g = make_grid(3, 3, [0.0, 1.0, 0.0, 1.0]).unwrap();
        let p = init_params(&mlp(vec![3], Activation::Tanh, 1), 0).unwrap();
        let (out, tape) = forward(&p, &coordinate_channels(&g)).unwrap();
        let mut moved = p.values().to_vec();
        moved[0] += 1e-3;
        let q = p.with_values(moved).unwrap();
        assert_eq!(backward(&tape, &q, &out), Err(Error::StaleTape));
    }

    /// Σ output² against central differences on every parameter.
    fn gradient_check(arch: NetworkArch, g: crate::grid::StructuredGrid) {
        let p = init_params(&arch, 11).unwrap();
        let coords = coordinate_channels(&g);
        let (out, tape) = forward(&p, &coords).unwrap();
        let seed = Field::new(g, arch.outputs, out.values().iter().map(|v| 2.0 * v).collect()).unwrap();
        let grad = backward(&tape, &p, &seed).unwrap();
        let loss = |vals: Vec<f64>| {
            let q = p.with_values(vals).unwrap();
            forward(&q, &coords).unwrap().0.values().iter().map(|v| v * v).sum::<f64>()
        };
        for k in 0..p.len() {
            let h = 1e-6 * (1.0 + p.values()[k].abs());
            let mut plus = p.values().to_vec();
            let mut minus = p.values().to_vec();
            plus[k] += h;
            minus[k] -= h;
            let fd = (loss(plus) - loss(minus)) / (2.0 * h);
            let err = (grad[k] - fd).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
            assert!(err < 1e-6, "{arch:?} param {k}: {} vs {fd}", grad[k]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_mlp() {
        let g = make_grid(4, 3, [0.0, 1.0, -1.0, 1.0]).unwrap();
        for act in [Activation::Tanh, Activation::Gelu] {
            for outputs in [1, 3] {
                gradient_check(mlp(vec![5, 4], act, outputs), g);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences_conv() {
        let g = make_grid(4, 8, [0.0, 1.0, 0.0, 1.0]).unwrap();
        for act in [Activation::Tanh, Activation::Gelu] {
            for outputs in [1, 3] {
                gradient_check(conv(vec![3, 2], act, outputs), g);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let arch = conv(vec![3, 2], Activation::Gelu, 3);
        let p = init_params(&arch, 5).unwrap();
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf).unwrap();
        let header_end = buf.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&buf[..header_end]).unwrap(),
            format!("prepinn-params v1 kind=conv activation=gelu inputs=2 hidden=3,2 outputs=3 count={}", p.len())
        );
        assert_eq!(buf.len(), header_end + 1 + 8 * p.len());
        let back = ParameterSet::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, p);
        assert!(ParameterSet::read_checkpoint(&buf[..buf.len() - 1]).is_err());
    }
}
