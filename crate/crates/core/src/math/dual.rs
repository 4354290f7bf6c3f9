//! Forward-mode dual numbers with a compile-time number of derivative lanes.
//!
//! Used to differentiate the low-dimensional pose chains (camera twists,
//! exposure weights) exactly. The chains are a few hundred flops, so carrying
//! K lanes through them is cheap, and reusing the same generic kernels as the
//! f64 forward pass keeps value and derivative in lockstep by construction.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::real::Real;

#[derive(Clone, Copy, Debug)]
pub struct Dual<const K: usize> {
    pub re: f64,
    pub eps: [f64; K],
}

impl<const K: usize> Dual<K> {
    pub fn constant(x: f64) -> Self {
        Self { re: x, eps: [0.0; K] }
    }

    /// A variable seeded on derivative lane `lane`.
    pub fn variable(x: f64, lane: usize) -> Self {
        let mut eps = [0.0; K];
        eps[lane] = 1.0;
        Self { re: x, eps }
    }

    fn map2(self, rhs: Self, re: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut eps = [0.0; K];
        for k in 0..K {
            eps[k] = f(self.eps[k], rhs.eps[k]);
        }
        Self { re, eps }
    }

    fn scale_eps(self, re: f64, s: f64) -> Self {
        let mut eps = [0.0; K];
        for k in 0..K {
            eps[k] = self.eps[k] * s;
        }
        Self { re, eps }
    }
}

impl<const K: usize> Add for Dual<K> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.map2(rhs, self.re + rhs.re, |a, b| a + b)
    }
}

impl<const K: usize> Sub for Dual<K> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.map2(rhs, self.re - rhs.re, |a, b| a - b)
    }
}

impl<const K: usize> Mul for Dual<K> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [0.0; K];
        for k in 0..K {
            eps[k] = self.eps[k] * rhs.re + self.re * rhs.eps[k];
        }
        Self { re: self.re * rhs.re, eps }
    }
}

impl<const K: usize> Div for Dual<K> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        // keep re identical to a plain f64 division so the f64 and dual
        // paths agree bitwise on values
        let re = self.re / rhs.re;
        let mut eps = [0.0; K];
        for k in 0..K {
            eps[k] = (self.eps[k] - re * rhs.eps[k]) / rhs.re;
        }
        Self { re, eps }
    }
}

impl<const K: usize> Neg for Dual<K> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale_eps(-self.re, -1.0)
    }
}

impl<const K: usize> Real for Dual<K> {
    fn from_f64(x: f64) -> Self {
        Self::constant(x)
    }

    fn value(self) -> f64 {
        self.re
    }

    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        self.scale_eps(r, 0.5 / r)
    }

    fn sin(self) -> Self {
        self.scale_eps(self.re.sin(), self.re.cos())
    }

    fn cos(self) -> Self {
        self.scale_eps(self.re.cos(), -self.re.sin())
    }

    fn atan2(self, x: Self) -> Self {
        let y = self;
        let denom = x.re * x.re + y.re * y.re;
        let mut eps = [0.0; K];
        for k in 0..K {
            eps[k] = (x.re * y.eps[k] - y.re * x.eps[k]) / denom;
        }
        Self { re: y.re.atan2(x.re), eps }
    }
}
