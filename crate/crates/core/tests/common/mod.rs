//! Independent reference solvers shared by the integration tests.
//!
//! The oracles below only use the public expression and differentiation
//! API. They solve the constrained Euler–Lagrange systems in ambient
//! coordinates, treating the constraint `Φ^α = Ψ^α − q̇^α = 0` as an
//! algebraic equation differentiated once in time, and carry their own
//! fixed-step RK4.

#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vaknh::autodiff::{partial, second_partial};
use vaknh::expr::{BinaryOp, Expression, Node};
use vaknh::models;
use vaknh::system::{SystemDef, VakState};

pub struct Ambient {
    n: usize,
    m: usize,
    coords: Vec<String>,
    vels: Vec<String>,
    lagrangian: Expression,
    phi: Vec<Expression>,
}

impl Ambient {
    pub fn new(sys: &SystemDef) -> Self {
        let coords: Vec<String> = sys.coords().to_vec();
        let vels: Vec<String> = coords.iter().map(|c| format!("d{c}")).collect();
        let phi = sys
            .psi()
            .iter()
            .zip(sys.dependent())
            .map(|(psi, &i)| {
                Node::Binary(
                    BinaryOp::Sub,
                    Box::new(psi.clone()),
                    Box::new(Node::Var(vels[i].clone())),
                )
            })
            .collect();
        Ambient {
            n: sys.n(),
            m: sys.m(),
            coords,
            vels,
            lagrangian: sys.lagrangian().clone(),
            phi,
        }
    }

    fn env(&self, q: &[f64], qd: &[f64]) -> HashMap<String, f64> {
        self.coords
            .iter()
            .cloned()
            .zip(q.iter().copied())
            .chain(self.vels.iter().cloned().zip(qd.iter().copied()))
            .collect()
    }

    fn d(&self, e: &Expression, env: &HashMap<String, f64>, v: &str) -> f64 {
        partial(e, env, v).expect("oracle derivative")
    }

    fn dd(&self, e: &Expression, env: &HashMap<String, f64>, a: &str, b: &str) -> f64 {
        second_partial(e, env, a, b).expect("oracle second derivative")
    }

    /// Vakonomic system in `(q, q̇, λ)`: the Euler–Lagrange equations of
    /// `L + λ_α Φ^α`, solved for the unknowns `(q̈, λ̇)`.
    pub fn vak_rhs(&self, y: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let (q, qd, lam) = (&y[..n], &y[n..2 * n], &y[2 * n..]);
        let env = self.env(q, qd);
        let l = &self.lagrangian;
        let mut a = DMatrix::zeros(n + m, n + m);
        let mut b = DVector::zeros(n + m);
        for i in 0..n {
            let (vi, qi) = (&self.vels[i], &self.coords[i]);
            let mut rhs = self.d(l, &env, qi);
            for j in 0..n {
                let (vj, qj) = (&self.vels[j], &self.coords[j]);
                let mut h = self.dd(l, &env, vi, vj);
                rhs -= self.dd(l, &env, vi, qj) * qd[j];
                for (al, phi) in self.phi.iter().enumerate() {
                    h += lam[al] * self.dd(phi, &env, vi, vj);
                    rhs -= lam[al] * self.dd(phi, &env, vi, qj) * qd[j];
                }
                a[(i, j)] = h;
            }
            for (al, phi) in self.phi.iter().enumerate() {
                a[(i, n + al)] = self.d(phi, &env, vi);
                rhs += lam[al] * self.d(phi, &env, qi);
            }
            b[i] = rhs;
        }
        self.constraint_rows(&env, qd, &mut a, &mut b);
        let x = a.lu().solve(&b).expect("oracle system is regular");
        [qd, &x.as_slice()[..n], &x.as_slice()[n..]].concat()
    }

    /// Nonholonomic system in `(q, q̇)`: unknowns `(q̈, λ)`.
    pub fn nh_rhs(&self, y: &[f64]) -> Vec<f64> {
        let n = self.n;
        let (q, qd) = (&y[..n], &y[n..2 * n]);
        let env = self.env(q, qd);
        let l = &self.lagrangian;
        let mut a = DMatrix::zeros(n + self.m, n + self.m);
        let mut b = DVector::zeros(n + self.m);
        for i in 0..n {
            let (vi, qi) = (&self.vels[i], &self.coords[i]);
            let mut rhs = self.d(l, &env, qi);
            for j in 0..n {
                a[(i, j)] = self.dd(l, &env, vi, &self.vels[j]);
                rhs -= self.dd(l, &env, vi, &self.coords[j]) * qd[j];
            }
            for (al, phi) in self.phi.iter().enumerate() {
                a[(i, n + al)] = -self.d(phi, &env, vi);
            }
            b[i] = rhs;
        }
        self.constraint_rows(&env, qd, &mut a, &mut b);
        let x = a.lu().solve(&b).expect("oracle system is regular");
        [qd, &x.as_slice()[..n]].concat()
    }

    /// `d/dt Φ^α = Φ^α_{q̇^B} q̈^B + Φ^α_{q^B} q̇^B = 0`.
    fn constraint_rows(&self, env: &HashMap<String, f64>, qd: &[f64], a: &mut DMatrix<f64>, b: &mut DVector<f64>) {
        let n = self.n;
        for (al, phi) in self.phi.iter().enumerate() {
            let mut rhs = 0.0;
            for j in 0..n {
                a[(n + al, j)] = self.d(phi, env, &self.vels[j]);
                rhs -= self.d(phi, env, &self.coords[j]) * qd[j];
            }
            b[n + al] = rhs;
        }
    }
}

pub fn rk4(f: impl Fn(&[f64]) -> Vec<f64>, y0: &[f64], dt: f64, steps: usize) -> Vec<Vec<f64>> {
    let add = |y: &[f64], h: f64, k: &[f64]| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    let mut out = vec![y0.to_vec()];
    let mut y = y0.to_vec();
    for _ in 0..steps {
        let k1 = f(&y);
        let k2 = f(&add(&y, dt / 2.0, &k1));
        let k3 = f(&add(&y, dt / 2.0, &k2));
        let k4 = f(&add(&y, dt, &k3));
        y = (0..y.len())
            .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        out.push(y.clone());
    }
    out
}

/// Initial oracle state `(q, q̇, λ)` for a `W₁` point, with
/// `λ_α = ∂L/∂q̇^α − p_α` and `q̇` completed through the constraint.
pub fn vak_oracle_start(sys: &SystemDef, s: &VakState) -> Vec<f64> {
    let qd = sys.full_velocity(&s.q, &s.v).unwrap();
    let lam = vaknh::maps::mu_to_lambda(sys, s).unwrap();
    [s.q.clone(), qd, lam].concat()
}

/// Uniform samples from a built-in model's region.
pub struct Draw {
    rng: ChaCha8Rng,
}

impl Draw {
    pub fn new(seed: u64) -> Self {
        Draw {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn in_box(&mut self, b: &[(f64, f64)]) -> Vec<f64> {
        b.iter().map(|&(lo, hi)| self.rng.gen_range(lo..hi)).collect()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }

    pub fn vak_state(&mut self, name: &str) -> VakState {
        let r = models::region(name).unwrap();
        VakState::new(self.in_box(&r.q), self.in_box(&r.v), self.in_box(&r.p))
    }
}

pub const LINEAR_MODELS: [&str; 5] = [
    "constrained_particle",
    "rolling_penny",
    "martinet",
    "paramecium",
    "holonomic_demo",
];

/// Martinet distribution with the full Euclidean metric on `(x, y, z)`.
pub fn euclidean_martinet() -> SystemDef {
    vaknh::load_system(
        "name martinet_euclidean\ncoords x y z\ndependent z\n\
         lagrangian 0.5*(dx^2 + dy^2 + dz^2)\npsi z = (y^2/2)*dx\nlinear true\n",
    )
    .unwrap()
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest position gap over `t ∈ [0, 1]` between the reduced integrator
/// and the ambient oracle, both RK4 with `dt = 1e-3`.
pub fn oracle_gap(sys: &SystemDef, s0: &VakState, vakonomic: bool) -> f64 {
    use vaknh::integrate::{integrate, Method, Options, State};
    let amb = Ambient::new(sys);
    let n = sys.n();
    let opts = Options::new(1.0, Method::Rk4 { dt: 1e-3 });
    let (start, reference) = if vakonomic {
        let y0 = vak_oracle_start(sys, s0);
        (State::Vak(s0.clone()), rk4(|y| amb.vak_rhs(y), &y0, 1e-3, 1000))
    } else {
        let y0 = [s0.q.clone(), sys.full_velocity(&s0.q, &s0.v).unwrap()].concat();
        (State::Nh(s0.nh()), rk4(|y| amb.nh_rhs(y), &y0, 1e-3, 1000))
    };
    let traj = integrate(sys, &start, &opts).unwrap();
    assert_eq!(traj.states.len(), reference.len());
    traj.states
        .iter()
        .zip(&reference)
        .map(|(s, y)| sup_diff(s.q(), &y[..n]))
        .fold(0.0, f64::max)
}
