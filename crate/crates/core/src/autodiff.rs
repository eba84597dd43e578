//! Forward-mode differentiation with hyper-dual numbers.
//!
//! A [`HyperDual`] carries `value + d1·ε₁ + d2·ε₂ + d12·ε₁ε₂` with
//! `ε₁² = ε₂² = 0`. Seeding `d1` along one direction and `d2` along another
//! yields the first directional derivatives in `d1`/`d2` and the mixed second
//! derivative in `d12`, all free of truncation error.

use std::collections::HashMap;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::expr::{EvalError, Expression};

/// Number types the expression evaluator runs on.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    fn value(&self) -> f64;
    /// True when every derivative part is zero.
    fn is_constant(&self) -> bool;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    /// `self^e` for a positive base.
    fn powf(self, e: Self) -> Self;
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn value(&self) -> f64 {
        *self
    }
    fn is_constant(&self) -> bool {
        true
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tan(self) -> Self {
        f64::tan(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powf(self, e: Self) -> Self {
        f64::powf(self, e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HyperDual {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d12: f64,
}

impl HyperDual {
    pub const fn new(value: f64, d1: f64, d2: f64, d12: f64) -> Self {
        HyperDual { value, d1, d2, d12 }
    }

    pub const fn constant(value: f64) -> Self {
        HyperDual::new(value, 0.0, 0.0, 0.0)
    }

    /// Applies a scalar function given its value and first two derivatives
    /// at `self.value`.
    #[inline]
    fn chain(self, f: f64, df: f64, ddf: f64) -> Self {
        HyperDual {
            value: f,
            d1: df * self.d1,
            d2: df * self.d2,
            d12: df * self.d12 + ddf * (self.d1 * self.d2),
        }
    }
}

impl Add for HyperDual {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        HyperDual::new(
            self.value + o.value,
            self.d1 + o.d1,
            self.d2 + o.d2,
            self.d12 + o.d12,
        )
    }
}

impl Sub for HyperDual {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        HyperDual::new(
            self.value - o.value,
            self.d1 - o.d1,
            self.d2 - o.d2,
            self.d12 - o.d12,
        )
    }
}

impl Neg for HyperDual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        HyperDual::new(-self.value, -self.d1, -self.d2, -self.d12)
    }
}

impl Mul for HyperDual {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        // The cross pair is summed first so that swapping the two seed
        // directions gives a bitwise identical d12.
        HyperDual {
            value: self.value * o.value,
            d1: self.value * o.d1 + self.d1 * o.value,
            d2: self.value * o.d2 + self.d2 * o.value,
            d12: self.value * o.d12 + self.d12 * o.value + (self.d1 * o.d2 + self.d2 * o.d1),
        }
    }
}

impl Div for HyperDual {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.value / o.value;
        let q1 = (self.d1 - q * o.d1) / o.value;
        let q2 = (self.d2 - q * o.d2) / o.value;
        let q12 = (self.d12 - q * o.d12 - (q1 * o.d2 + q2 * o.d1)) / o.value;
        HyperDual::new(q, q1, q2, q12)
    }
}

impl Scalar for HyperDual {
    fn from_f64(x: f64) -> Self {
        HyperDual::constant(x)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn is_constant(&self) -> bool {
        self.d1 == 0.0 && self.d2 == 0.0 && self.d12 == 0.0
    }
    fn sin(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s, -c)
    }
    fn tan(self) -> Self {
        let t = self.value.tan();
        let sec2 = 1.0 + t * t;
        self.chain(t, sec2, 2.0 * t * sec2)
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e, e)
    }
    fn ln(self) -> Self {
        let x = self.value;
        self.chain(x.ln(), 1.0 / x, -1.0 / (x * x))
    }
    fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        self.chain(r, 0.5 / r, -0.25 / (r * self.value))
    }
    fn powf(self, e: Self) -> Self {
        if e.is_constant() {
            let x = self.value;
            let k = e.value;
            let f = x.powf(k);
            self.chain(f, k * x.powf(k - 1.0), k * (k - 1.0) * x.powf(k - 2.0))
        } else {
            (e * self.ln()).exp()
        }
    }
}

/// Evaluates `f` at `x` with hyper-dual seeds `d1`, `d2` attached to each
/// coordinate.
pub fn seeded<E>(
    f: impl FnOnce(&[HyperDual]) -> Result<HyperDual, E>,
    x: &[f64],
    d1: &[f64],
    d2: &[f64],
) -> Result<HyperDual, E> {
    let args: Vec<HyperDual> = x
        .iter()
        .zip(d1)
        .zip(d2)
        .map(|((&v, &a), &b)| HyperDual::new(v, a, b, 0.0))
        .collect();
    f(&args)
}

/// Unit vector of length `n` along `i`.
pub fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    e
}

fn seeded_env(env: &HashMap<String, f64>, v1: &str, v2: &str) -> Result<HashMap<String, HyperDual>, EvalError> {
    for v in [v1, v2] {
        if !env.contains_key(v) {
            return Err(EvalError::Unbound(v.to_string()));
        }
    }
    Ok(env
        .iter()
        .map(|(k, &x)| {
            let d1 = if k == v1 { 1.0 } else { 0.0 };
            let d2 = if k == v2 { 1.0 } else { 0.0 };
            (k.clone(), HyperDual::new(x, d1, d2, 0.0))
        })
        .collect())
}

/// Exact `∂e/∂v` at `env`.
pub fn partial(e: &Expression, env: &HashMap<String, f64>, v: &str) -> Result<f64, EvalError> {
    if !env.contains_key(v) {
        return Err(EvalError::Unbound(v.to_string()));
    }
    let hd: HashMap<String, HyperDual> = env
        .iter()
        .map(|(k, &x)| (k.clone(), HyperDual::new(x, if k == v { 1.0 } else { 0.0 }, 0.0, 0.0)))
        .collect();
    Ok(crate::expr::evaluate(e, &hd)?.d1)
}

/// Exact `∂²e/∂v1∂v2` at `env`; symmetric in its two variables.
pub fn second_partial(
    e: &Expression,
    env: &HashMap<String, f64>,
    v1: &str,
    v2: &str,
) -> Result<f64, EvalError> {
    let (a, b) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
    let hd = seeded_env(env, a, b)?;
    Ok(crate::expr::evaluate(e, &hd)?.d12)
}

/// `[∂e/∂vars[0], ∂e/∂vars[1], ...]`, each identical to [`partial`].
pub fn gradient(
    e: &Expression,
    env: &HashMap<String, f64>,
    vars: &[&str],
) -> Result<Vec<f64>, EvalError> {
    vars.iter().map(|v| partial(e, env, v)).collect()
}
