//! Number types the stencil code is generic over.
//!
//! The residual operators are written once against [`Scalar`] and evaluated
//! with three instantiations: plain `f64` for residual values, [`Dual`] for
//! exact directional derivatives, and [`Footprint`] for the structural
//! dependency pattern used by coloring.

use std::ops::{Add, Mul, Neg, Sub};

pub trait Scalar: Clone + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> {
    fn constant(value: f64) -> Self;

    /// Multiply by a plain constant.
    fn scale(self, factor: f64) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn constant(value: f64) -> Self {
        value
    }

    #[inline]
    fn scale(self, factor: f64) -> Self {
        self * factor
    }
}

/// Forward-mode dual number `re + eps·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub const fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.re + rhs.re, self.eps + rhs.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.re - rhs.re, self.eps - rhs.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(self.re * rhs.re, self.eps * rhs.re + self.re * rhs.eps)
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl Scalar for Dual {
    #[inline]
    fn constant(value: f64) -> Self {
        Dual::new(value, 0.0)
    }

    #[inline]
    fn scale(self, factor: f64) -> Self {
        Dual::new(self.re * factor, self.eps * factor)
    }
}

/// Set of unknown indices an expression structurally depends on.
///
/// Arithmetic takes the union of the operand sets; constants have no
/// dependencies. Multiplying by a numerically zero coefficient keeps the
/// dependency, so the resulting pattern is a superset of the numerical
/// nonzeros for every linearization state.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Footprint(Vec<usize>);

impl Footprint {
    pub fn var(index: usize) -> Self {
        Footprint(vec![index])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn into_indices(self) -> Vec<usize> {
        self.0
    }

    fn union(self, rhs: Footprint) -> Footprint {
        if rhs.0.is_empty() {
            return self;
        }
        if self.0.is_empty() {
            return rhs;
        }
        let (a, b) = (self.0, rhs.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Footprint(out)
    }
}

impl Add for Footprint {
    type Output = Footprint;
    fn add(self, rhs: Footprint) -> Footprint {
        self.union(rhs)
    }
}

impl Sub for Footprint {
    type Output = Footprint;
    fn sub(self, rhs: Footprint) -> Footprint {
        self.union(rhs)
    }
}

impl Mul for Footprint {
    type Output = Footprint;
    fn mul(self, rhs: Footprint) -> Footprint {
        self.union(rhs)
    }
}

impl Neg for Footprint {
    type Output = Footprint;
    fn neg(self) -> Footprint {
        self
    }
}

impl Scalar for Footprint {
    fn constant(_value: f64) -> Self {
        Footprint::default()
    }

    fn scale(self, _factor: f64) -> Self {
        self
    }
}
