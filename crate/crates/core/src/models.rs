//! Built-in systems. The sources live as plain system files under `models/`
//! in the repository and are embedded at compile time.

use std::path::Path;

use crate::comparison::Region;
use crate::error::{Error, Result};
use crate::system::{load_system, SystemDef};

pub const NAMES: [&str; 6] = [
    "constrained_particle",
    "rolling_penny",
    "martinet",
    "paramecium",
    "von_neumann2",
    "holonomic_demo",
];

const PARTICLE: &str = include_str!("../../../models/constrained_particle.sys");
const PENNY: &str = include_str!("../../../models/rolling_penny.sys");
const MARTINET: &str = include_str!("../../../models/martinet.sys");
const PARAMECIUM: &str = include_str!("../../../models/paramecium.sys");
const VON_NEUMANN: &str = include_str!("../../../models/von_neumann2.sys");
const HOLONOMIC: &str = include_str!("../../../models/holonomic_demo.sys");

/// A closed-form claim about a built-in model. Every fact is executed by
/// the acceptance suite, keyed by `id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fact {
    pub id: &'static str,
    pub claim: &'static str,
}

const fn fact(id: &'static str, claim: &'static str) -> Fact {
    Fact { id, claim }
}

const PARTICLE_FACTS: &[Fact] = &[
    fact("particle.nh_field", "nonholonomic field: x'' = -y x' y' / (1 + y^2), y'' = 0"),
    fact("particle.vak_field", "vakonomic field at q=(0,1,0), v=(1,1), p=2: x''=0, y''=-1, p'=0"),
    fact("particle.curvature", "R^z_xy = -1 and R^z_yx = 1 everywhere"),
    fact("particle.straight_lines", "straight lines with y'=0 are free solutions lying in both problems"),
    fact("particle.generic_g", "random multipliers give g != 0 almost everywhere"),
];

const PENNY_FACTS: &[Fact] = &[
    fact("penny.nh_field", "nonholonomic field: theta'' = phi'' = 0"),
    fact("penny.g", "g is proportional to (phi', theta') times p_x sin(phi) - p_y cos(phi)"),
    fact("penny.lift", "p = 2 theta' (cos phi, sin phi) projects the vakonomic flow onto the nonholonomic one"),
    fact("penny.multipliers", "on that lift, lambda = -theta' (cos phi, sin phi)"),
];

const MARTINET_FACTS: &[Fact] = &[
    fact("martinet.cbar", "C-bar is the identity"),
    fact("martinet.pz", "p_z is conserved"),
    fact("martinet.px", "x' - (y^2/2) p_z is conserved"),
    fact("martinet.curvature", "R^z_xy = -y"),
];

const PARAMECIUM_FACTS: &[Fact] = &[
    fact("paramecium.closed_form", "eps=1, p=8, k(0)=0, k'(0)=(1,0): k1 = sin t, k2 = cos t - 1"),
    fact("paramecium.p_conserved", "p_x is conserved"),
];

const VON_NEUMANN_FACTS: &[Fact] = &[
    fact("von_neumann2.nonlinear", "the constraint is not linear in the velocities"),
    fact("von_neumann2.degenerate", "C-bar = p A / Psi^3 changes sign with p and degenerates at p = 0"),
];

const HOLONOMIC_FACTS: &[Fact] = &[
    fact("holonomic.flat", "curvature, g and the field residual vanish identically"),
];

pub fn source(name: &str) -> Option<&'static str> {
    Some(match name {
        "constrained_particle" => PARTICLE,
        "rolling_penny" => PENNY,
        "martinet" => MARTINET,
        "paramecium" => PARAMECIUM,
        "von_neumann2" => VON_NEUMANN,
        "holonomic_demo" => HOLONOMIC,
        _ => return None,
    })
}

fn unknown(name: &str) -> Error {
    Error::UnknownModel {
        name: name.to_string(),
        known: NAMES.iter().map(|s| s.to_string()).collect(),
    }
}

pub fn builtin(name: &str) -> Result<SystemDef> {
    load_system(source(name).ok_or_else(|| unknown(name))?)
}

pub fn facts(name: &str) -> &'static [Fact] {
    match name {
        "constrained_particle" => PARTICLE_FACTS,
        "rolling_penny" => PENNY_FACTS,
        "martinet" => MARTINET_FACTS,
        "paramecium" => PARAMECIUM_FACTS,
        "von_neumann2" => VON_NEUMANN_FACTS,
        "holonomic_demo" => HOLONOMIC_FACTS,
        _ => &[],
    }
}

/// Swimmer with connection strength `eps`.
pub fn paramecium(eps: f64) -> Result<SystemDef> {
    if !eps.is_finite() {
        return Err(Error::Invalid(format!("eps must be finite, got {eps}")));
    }
    let src = replace_line(
        PARAMECIUM,
        "psi x",
        &format!("psi x = -({eps:?}^2/4)*(k2*dk1 + 2*k1*dk2)"),
    );
    load_system(&src)
}

/// Two-good von Neumann model with exponents `alpha1` and `1 - alpha1`.
pub fn von_neumann2(alpha1: f64) -> Result<SystemDef> {
    if !(alpha1 > 0.0 && alpha1 < 1.0) {
        return Err(Error::Invalid(format!("alpha1 must lie in (0, 1), got {alpha1}")));
    }
    let (e1, e2) = (2.0 * alpha1, 2.0 * (1.0 - alpha1));
    let src = replace_line(
        VON_NEUMANN,
        "psi K1",
        &format!("psi K1 = sqrt(K1^{e1:?}*K2^{e2:?} - dK2^2)"),
    );
    load_system(&src)
}

fn replace_line(src: &str, prefix: &str, with: &str) -> String {
    src.lines()
        .map(|l| if l.starts_with(prefix) { with } else { l })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Resolves a built-in name, or else reads a system file from disk.
pub fn resolve(name_or_path: &str) -> Result<SystemDef> {
    if let Some(src) = source(name_or_path) {
        return load_system(src);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        return load_system(&std::fs::read_to_string(path)?);
    }
    Err(unknown(name_or_path))
}

/// Sampling region on which a built-in model is well defined and regular.
pub fn region(name: &str) -> Option<Region> {
    let sq = |n: usize, lo: f64, hi: f64| vec![(lo, hi); n];
    Some(match name {
        "constrained_particle" | "martinet" | "holonomic_demo" => Region {
            q: sq(3, -2.0, 2.0),
            v: sq(2, -1.0, 1.0),
            p: sq(1, -1.0, 1.0),
        },
        "paramecium" => Region {
            q: sq(3, -1.0, 1.0),
            v: sq(2, -1.0, 1.0),
            p: sq(1, -8.0, 8.0),
        },
        "rolling_penny" => Region {
            q: sq(4, -3.0, 3.0),
            v: sq(2, -1.0, 1.0),
            p: sq(2, -1.0, 1.0),
        },
        "von_neumann2" => Region {
            q: sq(2, 0.5, 2.0),
            v: sq(1, -0.3, 0.3),
            p: sq(1, 0.5, 2.0),
        },
        _ => return None,
    })
}
