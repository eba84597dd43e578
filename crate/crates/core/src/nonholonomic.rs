//! Nonholonomic dynamics under Chetaev's principle, reduced to the
//! coordinates `(q^A, q̇^a)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::reduced::{self, ReducedJet};
use crate::system::{NhState, SystemDef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NhDerivative {
    pub dq: Vec<f64>,
    pub dv: Vec<f64>,
}

/// Ambient momenta and forces at completed velocities, together with the
/// reduced jet whose frozen coefficients are the dependent momenta.
fn nh_jet(sys: &SystemDef, s: &NhState) -> Result<(ReducedJet, Vec<f64>)> {
    sys.check_nh(s)?;
    let qdot = sys.full_velocity(&s.q, &s.v)?;
    let (momenta, forces) = reduced::ambient_gradients(sys, &s.q, &qdot)?;
    let frozen: Vec<f64> = sys.dependent().iter().map(|&i| momenta[i]).collect();
    let dep_forces = sys.dependent().iter().map(|&i| forces[i]).collect();
    Ok((ReducedJet::at(sys, &s.q, &s.v, &frozen)?, dep_forces))
}

/// Regularity matrix `∂²L̃/∂v∂v − π_α ∂²Ψ^α/∂v∂v`.
pub fn ctilde(sys: &SystemDef, s: &NhState) -> Result<DMatrix<f64>> {
    Ok(nh_jet(sys, s)?.0.hess_vv)
}

pub fn nh_rhs(sys: &SystemDef, s: &NhState) -> Result<NhDerivative> {
    let (jet, dep_forces) = nh_jet(sys, s)?;
    let rhs = jet.bracket(sys, &dep_forces);
    let dv = reduced::solve("C̃", jet.hess_vv, rhs, || reduced::describe(&s.q, &s.v, None))?;
    Ok(NhDerivative { dq: jet.qdot, dv })
}

/// Chetaev multipliers `λ_α = ∂L/∂q^α − d/dt ∂L/∂q̇^α` along the flow.
pub fn nh_multipliers(sys: &SystemDef, s: &NhState, accel: &NhDerivative) -> Result<Vec<f64>> {
    let residual = crate::comparison::el_residual(sys, s, accel)?;
    Ok(sys.dependent().iter().map(|&i| -residual[i]).collect())
}

/// `p_A = ∂L/∂q̇^A` at completed velocities.
pub fn legendre_lift(sys: &SystemDef, s: &NhState) -> Result<Vec<f64>> {
    sys.check_nh(s)?;
    reduced::ambient_momenta(sys, &s.q, &s.v)
}

/// `E_L = π_A q̇^A − L` at completed velocities.
pub fn energy(sys: &SystemDef, s: &NhState) -> Result<f64> {
    let qdot = sys.full_velocity(&s.q, &s.v)?;
    let p = legendre_lift(sys, s)?;
    let l = sys.lagrangian_at(&s.q, &qdot)?;
    Ok(p.iter().zip(&qdot).map(|(a, b)| a * b).sum::<f64>() - l)
}
