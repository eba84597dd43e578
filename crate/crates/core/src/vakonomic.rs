//! Vakonomic dynamics on the first constraint submanifold `W₁`.
//!
//! States carry `(q^A, q̇^a, p_α)`. The base momenta are eliminated through
//! `p_a = ∂L̃/∂q̇^a − p_α ∂Ψ^α/∂q̇^a` and are never integrated. The
//! accelerations come from `C̄ q̈ = r` where `C̄` is the velocity Hessian of
//! `L̃ − p_α Ψ^α` and `r` is obtained by expanding the time derivative of
//! the eliminated momenta. `ṗ_α` follows from the `q^α` component of the
//! same function.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::autodiff::HyperDual;
use crate::error::{Error, Result};
use crate::reduced::{self, ReducedJet};
use crate::system::{SystemDef, VakState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VakDerivative {
    pub dq: Vec<f64>,
    pub dv: Vec<f64>,
    pub dp_dep: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymplecticReport {
    pub det: f64,
    pub invertible: bool,
}

pub fn cbar(sys: &SystemDef, s: &VakState) -> Result<DMatrix<f64>> {
    sys.check_vak(s)?;
    Ok(ReducedJet::at(sys, &s.q, &s.v, &s.p)?.hess_vv)
}

pub fn symplectic_check(sys: &SystemDef, s: &VakState) -> Result<SymplecticReport> {
    let c = cbar(sys, s)?;
    let det = c.clone().lu().determinant();
    Ok(SymplecticReport {
        det,
        invertible: reduced::is_invertible(&c, det),
    })
}

/// Compatibility matrix `C^{αβ}` built from the inverse ambient velocity
/// Hessian. For quadratic Lagrangians the Hessian does not depend on the
/// velocity, so it is taken at `q̇ = 0`.
pub fn compatibility_matrix(sys: &SystemDef, q: &[f64]) -> Result<DMatrix<f64>> {
    sys.require_linear()?;
    let (n, m, k) = (sys.n(), sys.m(), sys.k());
    if q.len() != n {
        return Err(Error::Dimension {
            what: "q",
            expected: n,
            got: q.len(),
        });
    }
    let hess = reduced::ambient_hessian(sys, q, &vec![0.0; n])?;
    let lu = hess.clone().lu();
    let det = lu.determinant();
    let inverse = if reduced::is_invertible(&hess, det) {
        lu.try_inverse()
    } else {
        None
    };
    let w = inverse.ok_or_else(|| Error::SingularHessian { q: q.to_vec() })?;

    let jet = ReducedJet::at(sys, q, &vec![0.0; k], &vec![0.0; m])?;
    // Each constraint as a covector on TQ: Ψ^α_a on the base slots and
    // −δ^α_β on the dependent ones.
    let mut u = DMatrix::zeros(m, n);
    for alpha in 0..m {
        for (a, &i) in sys.base().iter().enumerate() {
            u[(alpha, i)] = jet.psi_v[(alpha, a)];
        }
        u[(alpha, sys.dependent()[alpha])] = -1.0;
    }
    let c = &u * w * u.transpose();
    Ok((&c + c.transpose()) * 0.5)
}

/// Base momenta `p_a` on `W₁`.
pub fn w1_momenta(sys: &SystemDef, s: &VakState) -> Result<Vec<f64>> {
    sys.check_vak(s)?;
    let qc: Vec<HyperDual> = s.q.iter().map(|&x| HyperDual::constant(x)).collect();
    (0..sys.k())
        .map(|a| {
            let vh: Vec<HyperDual> = s
                .v
                .iter()
                .enumerate()
                .map(|(b, &x)| HyperDual::new(x, if a == b { 1.0 } else { 0.0 }, 0.0, 0.0))
                .collect();
            Ok(reduced::reduced_f(sys, &s.p, &qc, &vh)?.d1)
        })
        .collect()
}

/// Full covector `(p_A)` of a `W₁` point in coordinate order.
pub fn full_momenta(sys: &SystemDef, s: &VakState) -> Result<Vec<f64>> {
    let base = w1_momenta(sys, s)?;
    let mut p = vec![0.0; sys.n()];
    for (&i, &x) in sys.base().iter().zip(&base) {
        p[i] = x;
    }
    for (&i, &x) in sys.dependent().iter().zip(&s.p) {
        p[i] = x;
    }
    Ok(p)
}

/// `H = p_a q̇^a + p_α Ψ^α − L̃`.
pub fn hamiltonian(sys: &SystemDef, s: &VakState) -> Result<f64> {
    let pa = w1_momenta(sys, s)?;
    let psi = sys.psi_values(&s.q, &s.v)?;
    let l = sys.restricted_lagrangian(&s.q, &s.v)?;
    let base: f64 = pa.iter().zip(&s.v).map(|(p, v)| p * v).sum();
    let dep: f64 = s.p.iter().zip(&psi).map(|(p, x)| p * x).sum();
    Ok(base + dep - l)
}

pub fn vak_rhs(sys: &SystemDef, s: &VakState) -> Result<VakDerivative> {
    sys.check_vak(s)?;
    let jet = ReducedJet::at(sys, &s.q, &s.v, &s.p)?;
    let dp_dep: Vec<f64> = sys.dependent().iter().map(|&i| jet.grad_q[i]).collect();
    let rhs: DVector<f64> = jet.bracket(sys, &dp_dep);
    let dv = reduced::solve("C̄", jet.hess_vv, rhs, || {
        reduced::describe(&s.q, &s.v, Some(&s.p))
    })?;
    Ok(VakDerivative {
        dq: jet.qdot,
        dv,
        dp_dep,
    })
}
