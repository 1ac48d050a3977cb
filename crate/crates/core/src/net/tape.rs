//! Reverse-mode recording over row-major matrices.
//!
//! Every tensor is a 2-D matrix whose rows are grid pixels (`y·width + x`)
//! and whose columns are channels; dense layers and convolutions both reduce
//! to matrix products on that layout.

use ndarray::{Array2, Axis};

use crate::net::Activation;

/// Geometry of a patch extraction `(h·w, c) → (ho·wo, k·k·c)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PatchGeom {
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PatchGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// `(output row, output column, input row)` for every in-bounds tap.
    fn taps(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (ho, wo, k) = (self.out_h(), self.out_w(), self.kernel);
        (0..ho * wo).flat_map(move |orow| {
            let (oy, ox) = (orow / wo, orow % wo);
            (0..k * k).filter_map(move |t| {
                let (ky, kx) = (t / k, t % k);
                let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
                    None
                } else {
                    Some((orow, t * self.channels, iy as usize * self.w + ix as usize))
                }
            })
        })
    }
}

/// Bilinear ×2 upsampling with half-pixel centers and edge clamping, stored
/// as its sparse weights `(output row, input row, weight)`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Upsample {
    pub out_rows: usize,
    weights: Vec<(usize, usize, f64)>,
}

impl Upsample {
    pub fn new(h: usize, w: usize) -> Self {
        let axis = |n: usize, o: usize| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let frac = src - i0 as f64;
            [(i0, 1.0 - frac), (i1, frac)]
        };
        let (ho, wo) = (2 * h, 2 * w);
        let mut weights = Vec::with_capacity(ho * wo * 4);
        for oy in 0..ho {
            for ox in 0..wo {
                for (iy, wy) in axis(h, oy) {
                    for (ix, wx) in axis(w, ox) {
                        if wy * wx != 0.0 {
                            weights.push((oy * wo + ox, iy * w + ix, wy * wx));
                        }
                    }
                }
            }
        }
        Self { out_rows: ho * wo, weights }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    /// Slice of the flat parameter vector starting at `offset`.
    Param {
        offset: usize,
    },
    MatMul(usize, usize),
    AddBias(usize, usize),
    Act(usize, Activation),
    Patches(usize, PatchGeom),
    Upsample(usize, Upsample),
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub value: Array2<f64>,
    pub op: Op,
}

/// The recording of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    pub(crate) n_params: usize,
    pub(crate) params_fingerprint: u64,
}

impl Tape {
    pub(crate) fn new(n_params: usize, params_fingerprint: u64) -> Self {
        Self { nodes: Vec::new(), n_params, params_fingerprint }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> usize {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub(crate) fn value(&self, id: usize) -> &Array2<f64> {
        &self.nodes[id].value
    }

    pub(crate) fn leaf(&mut self, value: Array2<f64>) -> usize {
        self.push(value, Op::Leaf)
    }

    pub(crate) fn param(&mut self, flat: &[f64], offset: usize, rows: usize, cols: usize) -> usize {
        let data = flat[offset..offset + rows * cols].to_vec();
        let value = Array2::from_shape_vec((rows, cols), data).expect("parameter slice shape");
        self.push(value, Op::Param { offset })
    }

    pub(crate) fn matmul(&mut self, a: usize, b: usize) -> usize {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub(crate) fn add_bias(&mut self, a: usize, bias: usize) -> usize {
        let value = self.value(a) + self.value(bias);
        self.push(value, Op::AddBias(a, bias))
    }

    pub(crate) fn act(&mut self, a: usize, f: Activation) -> usize {
        let value = self.value(a).mapv(|x| f.eval(x));
        self.push(value, Op::Act(a, f))
    }

    pub(crate) fn patches(&mut self, a: usize, g: PatchGeom) -> usize {
        let src = self.value(a);
        let mut out = Array2::zeros((g.out_h() * g.out_w(), g.kernel * g.kernel * g.channels));
        for (orow, col, irow) in g.taps() {
            out.row_mut(orow).slice_mut(ndarray::s![col..col + g.channels]).assign(&src.row(irow));
        }
        self.push(out, Op::Patches(a, g))
    }

    pub(crate) fn upsample(&mut self, a: usize, h: usize, w: usize) -> usize {
        let up = Upsample::new(h, w);
        let src = self.value(a);
        let mut out = Array2::zeros((up.out_rows, src.ncols()));
        for &(o, i, wt) in &up.weights {
            out.row_mut(o).scaled_add(wt, &src.row(i));
        }
        self.push(out, Op::Upsample(a, up))
    }

    /// Propagate `seed` (gradient w.r.t. the last node) to the parameters.
    pub(crate) fn backprop(&self, seed: Array2<f64>) -> Vec<f64> {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        let mut out = vec![0.0; self.n_params];
        let last = self.nodes.len() - 1;
        grads[last] = Some(seed);

        fn accumulate(grads: &mut [Option<Array2<f64>>], id: usize, g: Array2<f64>) {
            match &mut grads[id] {
                Some(acc) => *acc += &g,
                slot => *slot = Some(g),
            }
        }

        for id in (0..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Param { offset } => {
                    for (dst, v) in out[*offset..].iter_mut().zip(g.iter()) {
                        *dst += v;
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddBias(a, bias) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *a, g);
                }
                Op::Act(a, f) => {
                    let mut ga = g;
                    let (x, y) = (self.value(*a), &self.nodes[id].value);
                    ndarray::Zip::from(&mut ga).and(x).and(y).for_each(|gi, &xi, &yi| *gi *= f.derivative(xi, yi));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Patches(a, geom) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    for (orow, col, irow) in geom.taps() {
                        let src = g.row(orow);
                        ga.row_mut(irow).scaled_add(1.0, &src.slice(ndarray::s![col..col + geom.channels]));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Upsample(a, up) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    for &(o, i, wt) in &up.weights {
                        ga.row_mut(i).scaled_add(wt, &g.row(o));
                    }
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_shapes() {
        let g = PatchGeom { h: 8, w: 6, channels: 2, kernel: 4, stride: 2, pad: 1 };
        assert_eq!((g.out_h(), g.out_w()), (4, 3));
        let g3 = PatchGeom { h: 5, w: 7, channels: 1, kernel: 3, stride: 1, pad: 1 };
        assert_eq!((g3.out_h(), g3.out_w()), (5, 7));
        // interior output pixel sees all nine taps, a corner sees four
        let taps: Vec<_> = g3.taps().collect();
        assert_eq!(taps.iter().filter(|t| t.0 == 0).count(), 4);
        assert_eq!(taps.iter().filter(|t| t.0 == 7 + 1).count(), 9);
    }

    #[test]
    fn upsample_preserves_constants_and_partition_of_unity() {
        let up = Upsample::new(3, 4);
        assert_eq!(up.out_rows, 6 * 8);
        let mut sums = vec![0.0; up.out_rows];
        for &(o, _, w) in &up.weights {
            sums[o] += w;
        }
        assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-15));
        // half-pixel centers: output (1,1) sits at source (0.25, 0.25)
        let w11: Vec<_> = up.weights.iter().filter(|e| e.0 == 8 + 1).map(|e| (e.1, e.2)).collect();
        assert_eq!(w11, vec![(0, 0.5625), (1, 0.1875), (4, 0.1875), (5, 0.0625)]);
    }
}
