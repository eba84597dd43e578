//! Pointwise comparison of the vakonomic and nonholonomic flows.
//!
//! For constraints linear in the velocities the projected vakonomic field
//! agrees with the nonholonomic one exactly where
//!
//! ```text
//! g_b = Σ_a q̇^a (p_α − ∂L/∂q̇^α) R^α_{ab}
//! ```
//!
//! vanishes, and the two are tied by `C̄ ΔY = SIGN_LINK · g`, so wherever
//! `C̄` is invertible the zero sets coincide. [`field_residual`] measures the
//! difference directly and also works for nonlinear constraints.
//!
//! Candidate invariant sets are given by named functions of the state
//! variables: the coordinates, `d<base>` and `d<dependent>` velocities (the
//! latter bound to `Ψ`), and `p_<dependent>` multipliers.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::HyperDual;
use crate::error::{Error, Result};
use crate::expr::{parse, Compiled, Expression};
use crate::nonholonomic::{nh_rhs, NhDerivative};
use crate::reduced;
use crate::system::{NhState, SystemDef, VakState};
use crate::vakonomic::vak_rhs;

/// The sign in `C̄ ΔY = SIGN_LINK · g`.
pub const SIGN_LINK: f64 = 1.0;

/// Default absolute threshold for calling a residual zero.
pub const DEFAULT_TOL: f64 = 1e-10;

/// `R^α_{ab}` stored as one `k × k` matrix per dependent coordinate.
pub fn curvature(sys: &SystemDef, q: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    sys.require_linear()?;
    let (n, k, m) = (sys.n(), sys.k(), sys.m());
    if q.len() != n {
        return Err(Error::Dimension {
            what: "q",
            expected: n,
            got: q.len(),
        });
    }
    // mixed[alpha][(A, b)] = ∂²Ψ^α/∂q^A∂v^b and slope[alpha][b] = Ψ^α_b
    let mut mixed = vec![DMatrix::zeros(n, k); m];
    let mut slope = DMatrix::zeros(m, k);
    for b in 0..k {
        let vh: Vec<HyperDual> = (0..k)
            .map(|j| HyperDual::new(0.0, 0.0, if j == b { 1.0 } else { 0.0 }, 0.0))
            .collect();
        for a in 0..n {
            let qh: Vec<HyperDual> = q
                .iter()
                .enumerate()
                .map(|(i, &x)| HyperDual::new(x, if i == a { 1.0 } else { 0.0 }, 0.0, 0.0))
                .collect();
            for (alpha, psi) in sys.psi_values(&qh, &vh)?.into_iter().enumerate() {
                mixed[alpha][(a, b)] = psi.d12;
                slope[(alpha, b)] = psi.d2;
            }
        }
    }
    let base = sys.base();
    let dep = sys.dependent();
    Ok((0..m)
        .map(|alpha| {
            let x = DMatrix::from_fn(k, k, |a, b| {
                let mut s = mixed[alpha][(base[a], b)];
                for (beta, &j) in dep.iter().enumerate() {
                    s += slope[(beta, a)] * mixed[alpha][(j, b)];
                }
                s
            });
            &x - x.transpose()
        })
        .collect())
}

/// Multiplier offset `p_α − ∂L/∂q̇^α` at completed velocities.
fn offset(sys: &SystemDef, s: &VakState) -> Result<Vec<f64>> {
    let pi = reduced::ambient_momenta(sys, &s.q, &s.v)?;
    Ok(sys.dependent().iter().zip(&s.p).map(|(&i, &p)| p - pi[i]).collect())
}

pub fn g_residuals(sys: &SystemDef, s: &VakState) -> Result<Vec<f64>> {
    sys.check_vak(s)?;
    let r = curvature(sys, &s.q)?;
    let delta = offset(sys, s)?;
    let k = sys.k();
    Ok((0..k)
        .map(|b| {
            let mut g = 0.0;
            for (a, &va) in s.v.iter().enumerate() {
                for (alpha, d) in delta.iter().enumerate() {
                    g += va * d * r[alpha][(a, b)];
                }
            }
            g
        })
        .collect())
}

/// `ΔY = q̈_vak − q̈_nh` on the base accelerations.
pub fn field_residual(sys: &SystemDef, s: &VakState) -> Result<Vec<f64>> {
    let vak = vak_rhs(sys, s)?;
    let nh = nh_rhs(sys, &s.nh())?;
    Ok(vak.dv.iter().zip(&nh.dv).map(|(a, b)| a - b).collect())
}

/// `d/dt ∂L/∂q̇^A − ∂L/∂q^A` along the completed flow.
pub fn el_residual(sys: &SystemDef, s: &NhState, accel: &NhDerivative) -> Result<Vec<f64>> {
    sys.check_nh(s)?;
    if accel.dv.len() != sys.k() {
        return Err(Error::Dimension {
            what: "accel",
            expected: sys.k(),
            got: accel.dv.len(),
        });
    }
    let qdot = sys.full_velocity(&s.q, &s.v)?;
    let qddot = reduced::full_acceleration(sys, &s.q, &s.v, &qdot, &accel.dv)?;
    let rates = reduced::momentum_rates(sys, &s.q, &qdot, &qddot)?;
    let (_, forces) = reduced::ambient_gradients(sys, &s.q, &qdot)?;
    Ok(rates.iter().zip(&forces).map(|(a, b)| a - b).collect())
}

// -- candidates -------------------------------------------------------------

/// A named candidate set `{G_1 = 0, G_2 = 0, ...}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub name: String,
    pub functions: Vec<Expression>,
}

impl Candidate {
    pub fn new(name: impl Into<String>, functions: Vec<Expression>) -> Self {
        Candidate {
            name: name.into(),
            functions,
        }
    }

    pub fn parse(name: impl Into<String>, sources: &[&str]) -> Result<Self> {
        let functions = sources.iter().map(|s| parse(s)).collect::<Result<_, _>>()?;
        Ok(Candidate::new(name, functions))
    }
}

/// Parses `name = expression` lines. A name given on several lines collects
/// all of its functions, in file order.
pub fn parse_candidates(source: &str) -> Result<Vec<Candidate>> {
    let mut out: Vec<Candidate> = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let format = |message: String| Error::Format {
            line: i + 1,
            message,
        };
        let (name, expr) = line
            .split_once('=')
            .ok_or_else(|| format("expected `name = expression`".into()))?;
        let name = name.trim();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(format(format!("bad candidate name `{name}`")));
        }
        let e = parse(expr).map_err(|e| format(format!("column {}: {}", e.column, e.message)))?;
        match out.iter_mut().find(|c| c.name == name) {
            Some(c) => c.functions.push(e),
            None => out.push(Candidate::new(name, vec![e])),
        }
    }
    Ok(out)
}

/// Slot layout: `[q (n), q̇ (n), p (m)]`.
fn compile_candidate(sys: &SystemDef, e: &Expression, name: &str) -> Result<Compiled> {
    let n = sys.n();
    e.compile(|var| {
        if let Some(i) = sys.coords().iter().position(|c| c == var) {
            return Some(i);
        }
        if let Some(rest) = var.strip_prefix("p_") {
            if let Some(a) = sys.dependent_names().iter().position(|d| *d == rest) {
                return Some(2 * n + a);
            }
        }
        let rest = var.strip_prefix('d')?;
        sys.coords().iter().position(|c| c == rest).map(|i| n + i)
    })
    .map_err(|var| Error::UnknownVariable {
        context: format!("candidate {name}"),
        name: var,
    })
}

/// Evaluates `G` and its derivative along the direction `(q̇, v̇, ṗ)`.
fn candidate_jet(
    sys: &SystemDef,
    c: &Compiled,
    s: &VakState,
    dir: Option<(&[f64], &[f64], &[f64])>,
) -> Result<HyperDual> {
    let lift = |x: &[f64], d: Option<&[f64]>| -> Vec<HyperDual> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| HyperDual::new(v, d.map_or(0.0, |d| d[i]), 0.0, 0.0))
            .collect()
    };
    let q = lift(&s.q, dir.map(|d| d.0));
    let v = lift(&s.v, dir.map(|d| d.1));
    let p = lift(&s.p, dir.map(|d| d.2));
    let qdot = sys.full_velocity(&q, &v)?;
    let mut slots = q;
    slots.extend(qdot);
    slots.extend(p);
    Ok(c.eval(&slots)?)
}

/// Maximum of `|G_i(s)|` per candidate.
pub fn candidate_values(sys: &SystemDef, candidates: &[Candidate], s: &VakState) -> Result<BTreeMap<String, f64>> {
    sys.check_vak(s)?;
    candidates
        .iter()
        .map(|cand| {
            let mut worst = 0.0_f64;
            for e in &cand.functions {
                let c = compile_candidate(sys, e, &cand.name)?;
                worst = worst.max(candidate_jet(sys, &c, s, None)?.value.abs());
            }
            Ok((cand.name.clone(), worst))
        })
        .collect()
}

/// Maximum of `|dG_i · X_vk(s)|` per candidate.
pub fn tangency_residuals(
    sys: &SystemDef,
    candidates: &[Candidate],
    s: &VakState,
) -> Result<BTreeMap<String, f64>> {
    let field = vak_rhs(sys, s)?;
    tangency_with(sys, candidates, s, &field.dq, &field.dv, &field.dp_dep)
}

fn tangency_with(
    sys: &SystemDef,
    candidates: &[Candidate],
    s: &VakState,
    dq: &[f64],
    dv: &[f64],
    dp: &[f64],
) -> Result<BTreeMap<String, f64>> {
    candidates
        .iter()
        .map(|cand| {
            let mut worst = 0.0_f64;
            for e in &cand.functions {
                let c = compile_candidate(sys, e, &cand.name)?;
                worst = worst.max(candidate_jet(sys, &c, s, Some((dq, dv, dp)))?.d1.abs());
            }
            Ok((cand.name.clone(), worst))
        })
        .collect()
}

/// Signed values of each defining function of a candidate, in order.
pub fn candidate_series(sys: &SystemDef, cand: &Candidate, s: &VakState) -> Result<Vec<f64>> {
    cand.functions
        .iter()
        .map(|e| {
            let c = compile_candidate(sys, e, &cand.name)?;
            Ok(candidate_jet(sys, &c, s, None)?.value)
        })
        .collect()
}

/// Checks that every candidate only mentions known state variables.
pub fn validate_candidates(sys: &SystemDef, candidates: &[Candidate]) -> Result<()> {
    for cand in candidates {
        for e in &cand.functions {
            compile_candidate(sys, e, &cand.name)?;
        }
    }
    Ok(())
}

// -- reports ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub index: usize,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    /// Absent for systems not linear in the velocities.
    pub g: Option<Vec<f64>>,
    #[serde(rename = "deltaY")]
    pub delta_y: Option<Vec<f64>>,
    pub tangency: BTreeMap<String, f64>,
    pub membership: BTreeMap<String, f64>,
    /// Set when the state could not be evaluated; the record is then
    /// excluded from the summary fractions.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Fraction of evaluated states with `max|g| < tol`; absent when `g`
    /// is not defined for the system.
    pub fraction_g_zero: Option<f64>,
    pub fraction_delta_y_zero: Option<f64>,
    pub tol: f64,
    pub samples: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub records: Vec<Record>,
    pub summary: Summary,
}

/// All comparison quantities at one state.
pub fn compare_state(sys: &SystemDef, s: &VakState, candidates: &[Candidate]) -> Result<Record> {
    sys.check_vak(s)?;
    let g = if sys.declared_linear() {
        Some(g_residuals(sys, s)?)
    } else {
        None
    };
    let vak = vak_rhs(sys, s)?;
    let nh = nh_rhs(sys, &s.nh())?;
    let delta_y = vak.dv.iter().zip(&nh.dv).map(|(a, b)| a - b).collect();
    Ok(Record {
        index: 0,
        q: s.q.clone(),
        v: s.v.clone(),
        p: s.p.clone(),
        g,
        delta_y: Some(delta_y),
        tangency: tangency_with(sys, candidates, s, &vak.dq, &vak.dv, &vak.dp_dep)?,
        membership: candidate_values(sys, candidates, s)?,
        error: None,
    })
}

/// Per-coordinate sampling intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub q: Vec<(f64, f64)>,
    pub v: Vec<(f64, f64)>,
    pub p: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PMode {
    /// Uniform in the `p` intervals.
    Random,
    /// `p_α = ∂L/∂q̇^α`, the states where the multipliers vanish.
    Legendre,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    pub count: usize,
    pub seed: u64,
    pub region: Region,
    pub p_mode: PMode,
}

impl Sampler {
    fn check(&self, sys: &SystemDef) -> Result<()> {
        let dims = [
            ("q bounds", sys.n(), &self.region.q),
            ("v bounds", sys.k(), &self.region.v),
            ("p bounds", sys.m(), &self.region.p),
        ];
        for (what, expected, b) in dims {
            if b.len() != expected {
                return Err(Error::Dimension {
                    what,
                    expected,
                    got: b.len(),
                });
            }
            if let Some((lo, hi)) = b.iter().find(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
                return Err(Error::Invalid(format!("{what}: bad interval [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Draws the `count` states sequentially, so the sample set does not
    /// depend on how the evaluation is scheduled.
    pub fn draw(&self, sys: &SystemDef) -> Result<Vec<Result<VakState>>> {
        self.check(sys)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut pick = |b: &[(f64, f64)]| -> Vec<f64> {
            b.iter()
                .map(|&(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..hi) })
                .collect()
        };
        Ok((0..self.count)
            .map(|_| {
                let q = pick(&self.region.q);
                let v = pick(&self.region.v);
                let p = pick(&self.region.p);
                match self.p_mode {
                    PMode::Random => Ok(VakState::new(q, v, p)),
                    PMode::Legendre => {
                        let pi = reduced::ambient_momenta(sys, &q, &v)?;
                        let p = sys.dependent().iter().map(|&i| pi[i]).collect();
                        Ok(VakState::new(q, v, p))
                    }
                }
            })
            .collect())
    }
}

/// Worker count cap read from `VAKNH_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("VAKNH_THREADS")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

pub fn scan(sys: &SystemDef, sampler: &Sampler, candidates: &[Candidate], tol: f64) -> Result<ComparisonReport> {
    if !(tol > 0.0) {
        return Err(Error::Invalid(format!("tol must be positive, got {tol}")));
    }
    validate_candidates(sys, candidates)?;
    let states = sampler.draw(sys)?;
    let evaluate = || -> Vec<Record> {
        states
            .par_iter()
            .enumerate()
            .map(|(index, state)| {
                let outcome = state
                    .as_ref()
                    .map_err(|e| e.to_string())
                    .and_then(|s| compare_state(sys, s, candidates).map_err(|e| e.to_string()));
                match outcome {
                    Ok(mut r) => {
                        r.index = index;
                        r
                    }
                    Err(message) => {
                        let (q, v, p) = match state {
                            Ok(s) => (s.q.clone(), s.v.clone(), s.p.clone()),
                            Err(_) => Default::default(),
                        };
                        Record {
                            index,
                            q,
                            v,
                            p,
                            g: None,
                            delta_y: None,
                            tangency: BTreeMap::new(),
                            membership: BTreeMap::new(),
                            error: Some(message),
                        }
                    }
                }
            })
            .collect()
    };
    let records = match thread_cap() {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Invalid(e.to_string()))?
            .install(evaluate),
        None => evaluate(),
    };

    let evaluated: Vec<&Record> = records.iter().filter(|r| r.error.is_none()).collect();
    let below = |x: &[f64]| x.iter().all(|v| v.abs() < tol);
    let fraction = |pick: &dyn Fn(&Record) -> Option<&Vec<f64>>| -> Option<f64> {
        let present: Vec<&Vec<f64>> = evaluated.iter().filter_map(|r| pick(r)).collect();
        if present.is_empty() {
            return None;
        }
        Some(present.iter().filter(|x| below(x)).count() as f64 / present.len() as f64)
    };
    let summary = Summary {
        fraction_g_zero: fraction(&|r| r.g.as_ref()),
        fraction_delta_y_zero: fraction(&|r| r.delta_y.as_ref()),
        tol,
        samples: sampler.count,
        evaluated: evaluated.len(),
        skipped: records.len() - evaluated.len(),
        seed: sampler.seed,
    };
    Ok(ComparisonReport { records, summary })
}
