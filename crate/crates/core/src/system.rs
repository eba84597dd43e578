//! Constrained Lagrangian systems `(L, Ψ)` with constraints in solved form
//! `q̇^α = Ψ^α(q, q̇^a)`.
//!
//! System file format (line oriented, `#` starts a comment):
//!
//! ```text
//! name constrained_particle
//! coords x y z
//! dependent z
//! lagrangian 0.5*(dx^2 + dy^2 + dz^2)
//! psi z = y*dx
//! linear true
//! ```
//!
//! The velocity of coordinate `x` is written `dx`.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{HyperDual, Scalar};
use crate::error::{Error, Result};
use crate::expr::{parse, Compiled, EvalError, Expression};

/// Absolute threshold below which velocity curvature counts as zero.
pub const LINEARITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SystemDef {
    name: String,
    coords: Vec<String>,
    dependent: Vec<usize>,
    base: Vec<usize>,
    lagrangian: Expression,
    psi: Vec<Expression>,
    declared_linear: bool,
    // Slot layout for both: [q^0..q^n, dq^0..dq^n].
    lagrangian_c: Compiled,
    psi_c: Vec<Compiled>,
}

/// A point `(q^A, q̇^a)` of the constraint submanifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NhState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

/// A point `(q^A, q̇^a, p_α)` of the first vakonomic constraint submanifold.
/// The base momenta `p_a` are not stored; see
/// [`crate::vakonomic::w1_momenta`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VakState {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
}

impl NhState {
    pub fn new(q: Vec<f64>, v: Vec<f64>) -> Self {
        NhState { q, v }
    }
}

impl VakState {
    pub fn new(q: Vec<f64>, v: Vec<f64>, p: Vec<f64>) -> Self {
        VakState { q, v, p }
    }

    pub fn nh(&self) -> NhState {
        NhState::new(self.q.clone(), self.v.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearityReport {
    pub linear: bool,
    pub witness: Option<NhState>,
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl SystemDef {
    /// Builds a system, checking the partition, every variable reference and
    /// the structural admissibility condition (no dependent velocity inside
    /// any `Ψ`).
    pub fn new(
        name: impl Into<String>,
        coords: Vec<String>,
        dependent: Vec<String>,
        lagrangian: Expression,
        psi: Vec<(String, Expression)>,
        declared_linear: bool,
    ) -> Result<Self> {
        let invalid = |m: String| Error::Invalid(m);
        let n = coords.len();
        for c in &coords {
            if !is_identifier(c) {
                return Err(invalid(format!("`{c}` is not a valid coordinate name")));
            }
        }
        for (i, c) in coords.iter().enumerate() {
            if coords[..i].contains(c) {
                return Err(invalid(format!("coordinate `{c}` declared twice")));
            }
            let vel = format!("d{c}");
            if coords.contains(&vel) {
                return Err(invalid(format!(
                    "coordinate `{vel}` collides with the velocity of `{c}`"
                )));
            }
        }
        let mut dep_idx = Vec::with_capacity(dependent.len());
        for d in &dependent {
            let Some(i) = coords.iter().position(|c| c == d) else {
                return Err(invalid(format!("dependent `{d}` is not a coordinate")));
            };
            if dep_idx.contains(&i) {
                return Err(invalid(format!("dependent `{d}` listed twice")));
            }
            dep_idx.push(i);
        }
        let m = dep_idx.len();
        if m == 0 || m >= n {
            return Err(invalid(format!(
                "need 1 <= m < n, got n = {n}, m = {m}"
            )));
        }
        let base: Vec<usize> = (0..n).filter(|i| !dep_idx.contains(i)).collect();

        let slot = |name: &str| -> Option<usize> {
            if let Some(i) = coords.iter().position(|c| c == name) {
                return Some(i);
            }
            let rest = name.strip_prefix('d')?;
            coords.iter().position(|c| c == rest).map(|i| n + i)
        };

        let lagrangian_c = lagrangian.compile(slot).map_err(|name| Error::UnknownVariable {
            context: "lagrangian".into(),
            name,
        })?;

        let mut psi_by_dep: HashMap<String, Expression> = HashMap::new();
        for (target, e) in psi {
            if !dependent.contains(&target) {
                return Err(invalid(format!("psi given for `{target}`, which is not dependent")));
            }
            if psi_by_dep.insert(target.clone(), e).is_some() {
                return Err(invalid(format!("psi for `{target}` given twice")));
            }
        }
        let mut psi_exprs = Vec::with_capacity(m);
        let mut psi_c = Vec::with_capacity(m);
        for d in &dependent {
            let e = psi_by_dep
                .remove(d)
                .ok_or_else(|| invalid(format!("missing psi for dependent `{d}`")))?;
            let compiled = e
                .compile(|name| {
                    let s = slot(name)?;
                    // dependent velocities are not admissible arguments
                    (s < n || !dep_idx.contains(&(s - n))).then_some(s)
                })
                .map_err(|name| match slot(&name) {
                    Some(_) => Error::Admissibility {
                        dependent: d.clone(),
                        velocity: name,
                    },
                    None => Error::UnknownVariable {
                        context: format!("psi {d}"),
                        name,
                    },
                })?;
            psi_exprs.push(e);
            psi_c.push(compiled);
        }

        Ok(SystemDef {
            name: name.into(),
            coords,
            dependent: dep_idx,
            base,
            lagrangian,
            psi: psi_exprs,
            declared_linear,
            lagrangian_c,
            psi_c,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn n(&self) -> usize {
        self.coords.len()
    }
    pub fn m(&self) -> usize {
        self.dependent.len()
    }
    /// Number of independent velocities, `n - m`.
    pub fn k(&self) -> usize {
        self.base.len()
    }
    pub fn coords(&self) -> &[String] {
        &self.coords
    }
    /// Coordinate indices of the dependent coordinates, in declared order.
    pub fn dependent(&self) -> &[usize] {
        &self.dependent
    }
    /// Coordinate indices of the base coordinates, in coordinate order.
    pub fn base(&self) -> &[usize] {
        &self.base
    }
    pub fn dependent_names(&self) -> Vec<&str> {
        self.dependent.iter().map(|&i| self.coords[i].as_str()).collect()
    }
    pub fn base_names(&self) -> Vec<&str> {
        self.base.iter().map(|&i| self.coords[i].as_str()).collect()
    }
    pub fn velocity_name(&self, coord: usize) -> String {
        format!("d{}", self.coords[coord])
    }
    pub fn lagrangian(&self) -> &Expression {
        &self.lagrangian
    }
    /// `Ψ^α`, aligned with [`Self::dependent`].
    pub fn psi(&self) -> &[Expression] {
        &self.psi
    }
    pub fn declared_linear(&self) -> bool {
        self.declared_linear
    }

    pub fn require_linear(&self) -> Result<()> {
        if self.declared_linear {
            Ok(())
        } else {
            Err(Error::NotLinear(self.name.clone()))
        }
    }

    pub fn check_nh(&self, s: &NhState) -> Result<()> {
        check_len("q", self.n(), s.q.len())?;
        check_len("v", self.k(), s.v.len())
    }

    pub fn check_vak(&self, s: &VakState) -> Result<()> {
        check_len("q", self.n(), s.q.len())?;
        check_len("v", self.k(), s.v.len())?;
        check_len("p", self.m(), s.p.len())
    }

    // -- generic evaluation ------------------------------------------------

    /// `Ψ^α(q, v)` for every dependent coordinate.
    pub fn psi_values<S: Scalar>(&self, q: &[S], v: &[S]) -> Result<Vec<S>, EvalError> {
        let n = self.n();
        let mut slots = vec![S::from_f64(0.0); 2 * n];
        slots[..n].copy_from_slice(q);
        for (&i, &va) in self.base.iter().zip(v) {
            slots[n + i] = va;
        }
        self.psi_c.iter().map(|c| c.eval(&slots)).collect()
    }

    /// Full velocity vector with the dependent components filled from `Ψ`.
    pub fn full_velocity<S: Scalar>(&self, q: &[S], v: &[S]) -> Result<Vec<S>, EvalError> {
        let psi = self.psi_values(q, v)?;
        Ok(self.assemble_velocity(v, &psi))
    }

    pub(crate) fn assemble_velocity<S: Scalar>(&self, v: &[S], psi: &[S]) -> Vec<S> {
        let mut qdot = vec![S::from_f64(0.0); self.n()];
        for (&i, &va) in self.base.iter().zip(v) {
            qdot[i] = va;
        }
        for (&i, &pa) in self.dependent.iter().zip(psi) {
            qdot[i] = pa;
        }
        qdot
    }

    /// Ambient `L(q, q̇)`.
    pub fn lagrangian_at<S: Scalar>(&self, q: &[S], qdot: &[S]) -> Result<S, EvalError> {
        let mut slots = Vec::with_capacity(2 * self.n());
        slots.extend_from_slice(q);
        slots.extend_from_slice(qdot);
        self.lagrangian_c.eval(&slots)
    }

    /// Restricted Lagrangian `L̃(q, v) = L(q, v, Ψ(q, v))`.
    pub fn restricted_lagrangian<S: Scalar>(&self, q: &[S], v: &[S]) -> Result<S, EvalError> {
        let qdot = self.full_velocity(q, v)?;
        self.lagrangian_at(q, &qdot)
    }

    // -- file format -------------------------------------------------------

    pub fn to_source(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "name {}", self.name);
        let _ = writeln!(out, "coords {}", self.coords.join(" "));
        let _ = writeln!(out, "dependent {}", self.dependent_names().join(" "));
        let _ = writeln!(out, "lagrangian {}", self.lagrangian);
        for (name, e) in self.dependent_names().iter().zip(&self.psi) {
            let _ = writeln!(out, "psi {name} = {e}");
        }
        let _ = writeln!(out, "linear {}", self.declared_linear);
        out
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { what, expected, got })
    }
}

fn parse_at(line: usize, src: &str) -> Result<Expression> {
    parse(src).map_err(|e| Error::Format {
        line,
        message: format!("expression error at column {}: {}", e.column, e.message),
    })
}

/// Parses a system file and verifies it, including the linearity
/// declaration.
pub fn load_system(source: &str) -> Result<SystemDef> {
    let mut name = None;
    let mut coords = None;
    let mut dependent = None;
    let mut lagrangian = None;
    let mut linear = None;
    let mut psi = Vec::new();

    for (i, raw) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line
            .split_once(char::is_whitespace)
            .map(|(k, r)| (k, r.trim()))
            .unwrap_or((line, ""));
        let fmt_err = |message: String| Error::Format {
            line: line_no,
            message,
        };
        let once = |present: bool| {
            if present {
                Err(fmt_err(format!("`{key}` given twice")))
            } else {
                Ok(())
            }
        };
        let words = || rest.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        match key {
            "name" => {
                once(name.is_some())?;
                if rest.is_empty() {
                    return Err(fmt_err("empty name".into()));
                }
                name = Some(rest.to_string());
            }
            "coords" => {
                once(coords.is_some())?;
                coords = Some(words());
            }
            "dependent" => {
                once(dependent.is_some())?;
                dependent = Some(words());
            }
            "lagrangian" => {
                once(lagrangian.is_some())?;
                lagrangian = Some(parse_at(line_no, rest)?);
            }
            "psi" => {
                let (target, expr) = rest
                    .split_once('=')
                    .ok_or_else(|| fmt_err("expected `psi <coord> = <expression>`".into()))?;
                psi.push((target.trim().to_string(), parse_at(line_no, expr)?));
            }
            "linear" => {
                once(linear.is_some())?;
                linear = Some(match rest {
                    "true" => true,
                    "false" => false,
                    other => return Err(fmt_err(format!("expected true|false, got `{other}`"))),
                });
            }
            other => return Err(fmt_err(format!("unknown key `{other}`"))),
        }
    }

    let missing = |what: &str| Error::Format {
        line: 0,
        message: format!("missing `{what}` line"),
    };
    let sys = SystemDef::new(
        name.ok_or_else(|| missing("name"))?,
        coords.ok_or_else(|| missing("coords"))?,
        dependent.ok_or_else(|| missing("dependent"))?,
        lagrangian.ok_or_else(|| missing("lagrangian"))?,
        psi,
        linear.ok_or_else(|| missing("linear"))?,
    )?;
    if sys.declared_linear {
        let report = verify_linearity(&sys, 32, 0)?;
        if let Some(w) = report.witness {
            return Err(Error::LinearityViolated {
                witness: format!("q = {:?}, v = {:?}", w.q, w.v),
            });
        }
    }
    Ok(sys)
}

pub fn complete_velocities(sys: &SystemDef, s: &NhState) -> Result<Vec<f64>> {
    sys.check_nh(s)?;
    Ok(sys.full_velocity(&s.q, &s.v)?)
}

/// Position and velocity ranges used when probing a system at random.
const PROBE_Q: (f64, f64) = (0.25, 2.0);
const PROBE_V: (f64, f64) = (-0.5, 0.5);
const PROBE_RETRIES: usize = 10;

/// Checks `Ψ(q, 0) = 0` and `∂²Ψ/∂v∂v = 0` at pseudo-random states with
/// `q ∈ [0.25, 2]`, `v ∈ [-0.5, 0.5]`.
pub fn verify_linearity(sys: &SystemDef, samples: usize, seed: u64) -> Result<LinearityReport> {
    if samples == 0 {
        return Err(Error::Invalid("samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k) = (sys.n(), sys.k());
    for _ in 0..samples {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let q: Vec<f64> = (0..n).map(|_| rng.gen_range(PROBE_Q.0..PROBE_Q.1)).collect();
            let v: Vec<f64> = (0..k).map(|_| rng.gen_range(PROBE_V.0..PROBE_V.1)).collect();
            match velocity_nonlinearity(sys, &q, &v) {
                Ok(worst) => {
                    if worst > LINEARITY_TOL {
                        return Ok(LinearityReport {
                            linear: false,
                            witness: Some(NhState::new(q, v)),
                        });
                    }
                    break;
                }
                Err(e) if attempt >= PROBE_RETRIES => {
                    return Err(Error::Sampling {
                        attempts: attempt,
                        last: Box::new(e),
                    })
                }
                Err(_) => continue,
            }
        }
    }
    Ok(LinearityReport {
        linear: true,
        witness: None,
    })
}

/// Largest of `|Ψ^α(q, 0)|` and `|∂²Ψ^α/∂v^a∂v^b (q, v)|`.
fn velocity_nonlinearity(sys: &SystemDef, q: &[f64], v: &[f64]) -> Result<f64> {
    let k = sys.k();
    let mut worst = sys
        .psi_values(q, &vec![0.0; k])?
        .into_iter()
        .fold(0.0_f64, |m, x| m.max(x.abs()));
    let qh: Vec<HyperDual> = q.iter().map(|&x| HyperDual::constant(x)).collect();
    for a in 0..k {
        for b in a..k {
            let vh: Vec<HyperDual> = v
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    HyperDual::new(
                        x,
                        if i == a { 1.0 } else { 0.0 },
                        if i == b { 1.0 } else { 0.0 },
                        0.0,
                    )
                })
                .collect();
            for h in sys.psi_values(&qh, &vh)? {
                worst = worst.max(h.d12.abs());
            }
        }
    }
    Ok(worst)
}
