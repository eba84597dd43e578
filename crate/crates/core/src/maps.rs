//! Maps between the vakonomic, nonholonomic and mixed descriptions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduced::{self, ReducedJet};
use crate::system::{NhState, SystemDef, VakState};
use crate::vakonomic::full_momenta;

/// A point `(q, p, v)` of `T*Q ⊕ M`, with a full covector `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovectorPoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `p ↦ p − ∂L/∂q̇`
    Forward,
    /// `p ↦ p + ∂L/∂q̇`
    Inverse,
}

pub fn legendre_shift(sys: &SystemDef, pt: &CovectorPoint, direction: Direction) -> Result<CovectorPoint> {
    if pt.p.len() != sys.n() {
        return Err(Error::Dimension {
            what: "p",
            expected: sys.n(),
            got: pt.p.len(),
        });
    }
    sys.check_nh(&NhState::new(pt.q.clone(), pt.v.clone()))?;
    let leg = reduced::ambient_momenta(sys, &pt.q, &pt.v)?;
    let p = pt
        .p
        .iter()
        .zip(&leg)
        .map(|(&a, &b)| match direction {
            Direction::Forward => a - b,
            Direction::Inverse => a + b,
        })
        .collect();
    Ok(CovectorPoint {
        q: pt.q.clone(),
        p,
        v: pt.v.clone(),
    })
}

/// Projection of a `W₁` point onto the nonholonomic phase space.
pub fn upsilon(_sys: &SystemDef, s: &VakState) -> NhState {
    s.nh()
}

/// `λ_α = ∂L/∂q̇^α − p_α`.
pub fn mu_to_lambda(sys: &SystemDef, s: &VakState) -> Result<Vec<f64>> {
    sys.check_vak(s)?;
    let pi = reduced::ambient_momenta(sys, &s.q, &s.v)?;
    Ok(sys
        .dependent()
        .iter()
        .zip(&s.p)
        .map(|(&i, &p)| pi[i] - p)
        .collect())
}

/// Inverse of [`mu_to_lambda`] at the same `(q, v)`: `p_α = ∂L/∂q̇^α − λ_α`.
pub fn lambda_to_mu(sys: &SystemDef, s: &NhState, lambda: &[f64]) -> Result<Vec<f64>> {
    sys.check_nh(s)?;
    if lambda.len() != sys.m() {
        return Err(Error::Dimension {
            what: "lambda",
            expected: sys.m(),
            got: lambda.len(),
        });
    }
    let pi = reduced::ambient_momenta(sys, &s.q, &s.v)?;
    Ok(sys
        .dependent()
        .iter()
        .zip(lambda)
        .map(|(&i, &l)| pi[i] - l)
        .collect())
}

/// Full covector `p_A − ∂L/∂q̇^A` of a `W₁` point, i.e. the forward shift of
/// its embedding in `T*Q ⊕ M`.
pub fn shifted_covector(sys: &SystemDef, s: &VakState) -> Result<Vec<f64>> {
    let pt = CovectorPoint {
        q: s.q.clone(),
        p: full_momenta(sys, s)?,
        v: s.v.clone(),
    };
    Ok(legendre_shift(sys, &pt, Direction::Forward)?.p)
}

/// `λ_a + λ_α ∂Ψ^α/∂q̇^a`, which vanishes exactly when `λ` annihilates the
/// constraint distribution.
pub fn vg_residual(sys: &SystemDef, lambda_full: &[f64], s: &NhState) -> Result<Vec<f64>> {
    sys.require_linear()?;
    sys.check_nh(s)?;
    if lambda_full.len() != sys.n() {
        return Err(Error::Dimension {
            what: "lambda",
            expected: sys.n(),
            got: lambda_full.len(),
        });
    }
    let jet = ReducedJet::at(sys, &s.q, &s.v, &vec![0.0; sys.m()])?;
    Ok(sys
        .base()
        .iter()
        .enumerate()
        .map(|(a, &i)| {
            let mut r = lambda_full[i];
            for (alpha, &j) in sys.dependent().iter().enumerate() {
                r += lambda_full[j] * jet.psi_v[(alpha, a)];
            }
            r
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin;

    #[test]
    fn shift_examples() {
        let particle = builtin("constrained_particle").unwrap();
        let pt = CovectorPoint {
            q: vec![0.0, 1.0, 0.0],
            p: vec![1.0, 1.0, 1.0],
            v: vec![1.0, 1.0],
        };
        let f = legendre_shift(&particle, &pt, Direction::Forward).unwrap();
        assert_eq!(f.p, vec![0.0, 0.0, 0.0]);
        assert_eq!(legendre_shift(&particle, &f, Direction::Inverse).unwrap(), pt);

        let zero = CovectorPoint {
            q: vec![0.3, -0.2, 0.9],
            p: vec![0.0; 3],
            v: vec![0.0; 2],
        };
        assert_eq!(legendre_shift(&particle, &zero, Direction::Forward).unwrap().p, vec![0.0; 3]);
    }

    #[test]
    fn upsilon_drops_multipliers() {
        let particle = builtin("constrained_particle").unwrap();
        let s = VakState::new(vec![0.0, 1.0, 0.0], vec![1.0, 1.0], vec![7.0]);
        assert_eq!(upsilon(&particle, &s), NhState::new(vec![0.0, 1.0, 0.0], vec![1.0, 1.0]));
    }

    #[test]
    fn multiplier_conversion() {
        let particle = builtin("constrained_particle").unwrap();
        let s = VakState::new(vec![0.0, 1.0, 0.0], vec![1.0, 1.0], vec![2.0]);
        assert_eq!(mu_to_lambda(&particle, &s).unwrap(), vec![-1.0]);
        let back = lambda_to_mu(&particle, &s.nh(), &[-1.0]).unwrap();
        assert_eq!(back, vec![2.0]);
        let on_s = VakState::new(vec![0.0, 1.0, 0.0], vec![1.0, 1.0], vec![1.0]);
        assert_eq!(mu_to_lambda(&particle, &on_s).unwrap(), vec![0.0]);

        let penny = builtin("rolling_penny").unwrap();
        let (th, ph) = (0.8, 0.6);
        let s = VakState::new(
            vec![0.0, 0.0, 0.0, ph],
            vec![th, 0.3],
            vec![2.0 * th * f64::cos(ph), 2.0 * th * f64::sin(ph)],
        );
        let lam = mu_to_lambda(&penny, &s).unwrap();
        assert!((lam[0] + th * f64::cos(ph)).abs() < 1e-15);
        assert!((lam[1] + th * f64::sin(ph)).abs() < 1e-15);
    }

    #[test]
    fn vg_examples() {
        let particle = builtin("constrained_particle").unwrap();
        let s = NhState::new(vec![0.0, 1.0, 0.0], vec![0.5, 0.5]);
        assert_eq!(vg_residual(&particle, &[1.0, 0.0, -1.0], &s).unwrap(), vec![0.0, 0.0]);
        assert_eq!(vg_residual(&particle, &[0.0; 3], &s).unwrap(), vec![0.0, 0.0]);
        assert_eq!(vg_residual(&particle, &[1.0, 0.0, 0.0], &s).unwrap(), vec![1.0, 0.0]);
        let vn = builtin("von_neumann2").unwrap();
        let s = NhState::new(vec![1.0, 1.0], vec![0.1]);
        assert!(matches!(vg_residual(&vn, &[0.0, 0.0], &s), Err(Error::NotLinear(_))));
    }
}
