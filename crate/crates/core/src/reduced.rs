//! Derivatives of the reduced function `F(q, v) = L̃(q, v) − c_α Ψ^α(q, v)`
//! with the coefficients `c` held fixed.
//!
//! Both dynamics come out of this one object. Freezing `c = p` gives the
//! vakonomic matrix and bracket, freezing `c` at the dependent ambient
//! momenta gives the nonholonomic ones. In either case the equations read
//!
//! ```text
//! Σ_b H_ab q̈^b = ∂F/∂q^a − Σ_A q̇^A ∂²F/∂q^A∂v^a + w_α ∂Ψ^α/∂v^a
//! ```
//!
//! where `w = ṗ` for the vakonomic system and `w = ∂L/∂q^α` for the
//! nonholonomic one.

use nalgebra::{DMatrix, DVector};

use crate::autodiff::HyperDual;
use crate::error::{Error, Result};
use crate::expr::EvalError;
use crate::system::SystemDef;

type HD = HyperDual;

fn lift(x: &[f64]) -> Vec<HD> {
    x.iter().map(|&v| HD::constant(v)).collect()
}

/// Seeds `d1` along `dir1` and `d2` along `dir2`.
fn seed(x: &[f64], dir1: Option<&[f64]>, dir2: Option<&[f64]>) -> Vec<HD> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            HD::new(
                v,
                dir1.map_or(0.0, |d| d[i]),
                dir2.map_or(0.0, |d| d[i]),
                0.0,
            )
        })
        .collect()
}

fn unit_hd(x: &[f64], i: usize, slot: u8) -> Vec<HD> {
    let mut out = lift(x);
    match slot {
        1 => out[i].d1 = 1.0,
        _ => out[i].d2 = 1.0,
    }
    out
}

/// `F` evaluated on hyper-dual arguments.
pub(crate) fn reduced_f(sys: &SystemDef, c: &[f64], q: &[HD], v: &[HD]) -> Result<HD, EvalError> {
    let psi = sys.psi_values(q, v)?;
    let qdot = sys.assemble_velocity(v, &psi);
    let mut f = sys.lagrangian_at(q, &qdot)?;
    for (&ca, &pa) in c.iter().zip(&psi) {
        f = f - HD::constant(ca) * pa;
    }
    Ok(f)
}

/// First and second derivatives of `F` and of `Ψ` at one state.
#[derive(Debug, Clone)]
pub(crate) struct ReducedJet {
    /// Completed velocity `q̇^A`.
    pub qdot: Vec<f64>,
    /// `∂F/∂q^A`, all `n` coordinates.
    pub grad_q: Vec<f64>,
    /// `∂²F/∂v^a∂v^b`, exactly symmetric.
    pub hess_vv: DMatrix<f64>,
    /// `Σ_A q̇^A ∂²F/∂q^A∂v^a`.
    pub transport: Vec<f64>,
    /// `∂Ψ^α/∂v^a`, an `m × k` matrix.
    pub psi_v: DMatrix<f64>,
}

impl ReducedJet {
    pub fn at(sys: &SystemDef, q: &[f64], v: &[f64], c: &[f64]) -> Result<Self> {
        let (n, k, m) = (sys.n(), sys.k(), sys.m());
        let qdot = sys.full_velocity(q, v)?;
        let qc = lift(q);
        let vc = lift(v);

        let mut grad_q = Vec::with_capacity(n);
        for i in 0..n {
            grad_q.push(reduced_f(sys, c, &unit_hd(q, i, 1), &vc)?.d1);
        }

        let mut hess_vv = DMatrix::zeros(k, k);
        let mut psi_v = DMatrix::zeros(m, k);
        for a in 0..k {
            for b in a..k {
                let mut vh = unit_hd(v, a, 1);
                vh[b].d2 = 1.0;
                let f = reduced_f(sys, c, &qc, &vh)?;
                hess_vv[(a, b)] = f.d12;
                hess_vv[(b, a)] = f.d12;
            }
            let psi = sys.psi_values(&qc, &unit_hd(v, a, 1))?;
            for (alpha, p) in psi.iter().enumerate() {
                psi_v[(alpha, a)] = p.d1;
            }
        }

        let mut transport = Vec::with_capacity(k);
        let qh = seed(q, Some(&qdot), None);
        for a in 0..k {
            let mut vh = lift(v);
            vh[a].d2 = 1.0;
            transport.push(reduced_f(sys, c, &qh, &vh)?.d12);
        }

        Ok(ReducedJet {
            qdot,
            grad_q,
            hess_vv,
            transport,
            psi_v,
        })
    }

    /// Right-hand side of the acceleration equation for the weights `w`.
    pub fn bracket(&self, sys: &SystemDef, w: &[f64]) -> DVector<f64> {
        let k = sys.k();
        DVector::from_fn(k, |a, _| {
            let mut r = self.grad_q[sys.base()[a]] - self.transport[a];
            for (alpha, &wa) in w.iter().enumerate() {
                r += wa * self.psi_v[(alpha, a)];
            }
            r
        })
    }
}

/// `∂L/∂q̇^A` and `∂L/∂q^A` of the ambient Lagrangian at `(q, q̇)`.
pub(crate) fn ambient_gradients(sys: &SystemDef, q: &[f64], qdot: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sys.n();
    let qc = lift(q);
    let qdc = lift(qdot);
    let mut momenta = Vec::with_capacity(n);
    let mut forces = Vec::with_capacity(n);
    for i in 0..n {
        momenta.push(sys.lagrangian_at(&qc, &unit_hd(qdot, i, 1))?.d1);
        forces.push(sys.lagrangian_at(&unit_hd(q, i, 1), &qdc)?.d1);
    }
    Ok((momenta, forces))
}

/// Ambient momenta `∂L/∂q̇^A` at completed velocities.
pub(crate) fn ambient_momenta(sys: &SystemDef, q: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let qdot = sys.full_velocity(q, v)?;
    let qc = lift(q);
    (0..sys.n())
        .map(|i| Ok(sys.lagrangian_at(&qc, &unit_hd(&qdot, i, 1))?.d1))
        .collect()
}

/// Full acceleration `q̈^A`: base components given, dependent ones from
/// `d/dt Ψ^α = ∂Ψ^α/∂q^A q̇^A + ∂Ψ^α/∂v^a v̇^a`.
pub(crate) fn full_acceleration(
    sys: &SystemDef,
    q: &[f64],
    v: &[f64],
    qdot: &[f64],
    vdot: &[f64],
) -> Result<Vec<f64>> {
    let psi = sys.psi_values(&seed(q, Some(qdot), None), &seed(v, Some(vdot), None))?;
    let rates: Vec<f64> = psi.iter().map(|p| p.d1).collect();
    Ok(sys.assemble_velocity(vdot, &rates))
}

/// `d/dt (∂L/∂q̇^A)` along a curve with the given velocity and acceleration.
pub(crate) fn momentum_rates(sys: &SystemDef, q: &[f64], qdot: &[f64], qddot: &[f64]) -> Result<Vec<f64>> {
    let qh = seed(q, Some(qdot), None);
    (0..sys.n())
        .map(|i| {
            let vh: Vec<HD> = qdot
                .iter()
                .enumerate()
                .map(|(j, &x)| HD::new(x, qddot[j], if i == j { 1.0 } else { 0.0 }, 0.0))
                .collect();
            Ok(sys.lagrangian_at(&qh, &vh)?.d12)
        })
        .collect()
}

/// Ambient velocity Hessian `∂²L/∂q̇^A∂q̇^B` at `(q, q̇)`.
pub(crate) fn ambient_hessian(sys: &SystemDef, q: &[f64], qdot: &[f64]) -> Result<DMatrix<f64>> {
    let n = sys.n();
    let qc = lift(q);
    let mut h = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let mut vh = unit_hd(qdot, a, 1);
            vh[b].d2 = 1.0;
            let x = sys.lagrangian_at(&qc, &vh)?.d12;
            h[(a, b)] = x;
            h[(b, a)] = x;
        }
    }
    Ok(h)
}

/// Determinant-based singularity test shared by every matrix solve.
pub(crate) fn is_invertible(mat: &DMatrix<f64>, det: f64) -> bool {
    let scale = mat.amax();
    det.is_finite() && det.abs() > 1e-12 * scale.powi(mat.nrows() as i32)
}

/// LU solve of `mat · x = rhs`, refusing matrices that fail
/// [`is_invertible`].
pub(crate) fn solve(
    which: &'static str,
    mat: DMatrix<f64>,
    rhs: DVector<f64>,
    state: impl FnOnce() -> String,
) -> Result<Vec<f64>> {
    let lu = mat.clone().lu();
    let det = lu.determinant();
    let solution = if is_invertible(&mat, det) { lu.solve(&rhs) } else { None };
    match solution {
        Some(x) => Ok(x.iter().copied().collect()),
        None => Err(Error::Singular {
            which,
            det,
            state: state(),
        }),
    }
}

pub(crate) fn describe(q: &[f64], v: &[f64], p: Option<&[f64]>) -> String {
    match p {
        Some(p) => format!("q = {q:?}, v = {v:?}, p = {p:?}"),
        None => format!("q = {q:?}, v = {v:?}"),
    }
}
