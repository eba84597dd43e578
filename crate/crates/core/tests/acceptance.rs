//! Acceptance suite. Runs as a plain binary (no test harness) so that the
//! verdict of every criterion is printed on each `cargo test` run, then
//! exits non-zero if any criterion failed.
//!
//! Every documented fact of the model catalog is executed by one of the
//! criteria below; the run fails if a fact id is never visited.

mod common;

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;
use std::process::ExitCode;

use nalgebra::DVector;
use vaknh::autodiff::{partial, second_partial};
use vaknh::comparison::{
    curvature, field_residual, g_residuals, scan, tangency_residuals, Candidate, PMode, Region, Sampler, SIGN_LINK,
};
use vaknh::integrate::{drift_report, integrate, Method, Options, State, Trajectory};
use vaknh::maps::mu_to_lambda;
use vaknh::models;
use vaknh::nonholonomic::{ctilde, nh_multipliers, nh_rhs, NhDerivative};
use vaknh::system::{verify_linearity, NhState, SystemDef, VakState};
use vaknh::vakonomic::{cbar, compatibility_matrix, symplectic_check, vak_rhs};

use common::{oracle_gap, Draw, LINEAR_MODELS};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

thread_local! {
    static VISITED: RefCell<BTreeSet<&'static str>> = const { RefCell::new(BTreeSet::new()) };
}

/// Records that a catalog fact was exercised.
fn fact(id: &'static str) {
    let known = models::NAMES
        .iter()
        .flat_map(|m| models::facts(m))
        .any(|f| f.id == id);
    assert!(known, "unknown fact id {id}");
    VISITED.with(|v| v.borrow_mut().insert(id));
}

fn ensure(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

fn max_abs<'a>(xs: impl IntoIterator<Item = &'a f64>) -> f64 {
    xs.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn run(sys: &SystemDef, s0: State, t_end: f64, method: Method) -> Result<Trajectory, String> {
    integrate(sys, &s0, &Options::new(t_end, method)).map_err(|e| e.to_string())
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------

fn paramecium_closed_form() -> Outcome {
    fact("paramecium.closed_form");
    fact("paramecium.p_conserved");
    let sys = models::paramecium(1.0).map_err(err)?;
    let s0 = VakState::new(vec![0.0; 3], vec![1.0, 0.0], vec![8.0]);
    let traj = run(
        &sys,
        State::Vak(s0),
        2.0 * PI,
        Method::Rk45 {
            rtol: 1e-10,
            atol: 1e-12,
        },
    )?;
    let mut worst = 0.0_f64;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        worst = worst.max((s.q()[0] - t.sin()).abs());
        worst = worst.max((s.q()[1] - (t.cos() - 1.0)).abs());
    }
    let dp = max_abs(traj.monitor("dp_x").ok_or("no dp_x monitor")?);
    ensure(worst <= 1e-7, || format!("closed-form error {worst:.3e} > 1e-7"))?;
    ensure(dp <= 1e-12, || format!("max |dp_x| {dp:.3e} > 1e-12"))?;
    Ok(format!("sup error {worst:.2e}, max |dp_x| {dp:.1e}"))
}

fn martinet_conservation() -> Outcome {
    fact("martinet.pz");
    fact("martinet.px");
    fact("martinet.cbar");
    fact("martinet.curvature");
    let sys = models::builtin("martinet").map_err(err)?;
    let mut draw = Draw::new(3);
    let (mut pz_drift, mut px_drift) = (0.0_f64, 0.0_f64);
    let mut starts = vec![VakState::new(vec![0.0, 1.0, 0.0], vec![1.0, 0.0], vec![1.0])];
    starts.extend((0..4).map(|_| draw.vak_state("martinet")));
    for s0 in starts {
        let traj = run(&sys, State::Vak(s0), 10.0, Method::default())?;
        let conserved = |s: &State| s.v()[0] - s.q()[1].powi(2) / 2.0 * s.p()[0];
        let (pz0, px0) = (traj.states[0].p()[0], conserved(&traj.states[0]));
        for s in &traj.states {
            pz_drift = pz_drift.max((s.p()[0] - pz0).abs());
            px_drift = px_drift.max((conserved(s) - px0).abs());
        }
    }
    ensure(pz_drift <= 1e-9, || format!("p_z drift {pz_drift:.3e} > 1e-9"))?;
    ensure(px_drift <= 1e-7, || format!("x' - (y^2/2) p_z drift {px_drift:.3e} > 1e-7"))?;

    let mut fact_err = 0.0_f64;
    for _ in 0..100 {
        let s = draw.vak_state("martinet");
        let c = cbar(&sys, &s).map_err(err)?;
        fact_err = fact_err.max((c - nalgebra::DMatrix::identity(2, 2)).amax());
        let r = &curvature(&sys, &s.q).map_err(err)?[0];
        fact_err = fact_err.max((r[(0, 1)] + s.q[1]).abs());
    }
    ensure(fact_err <= 1e-14, || format!("C-bar / curvature facts off by {fact_err:.3e}"))?;
    Ok(format!("p_z drift {pz_drift:.1e}, x'-(y^2/2)p_z drift {px_drift:.1e}"))
}

fn dae_oracles() -> Outcome {
    fact("particle.nh_field");
    fact("particle.vak_field");
    fact("penny.nh_field");
    let mut worst = 0.0_f64;
    for name in ["constrained_particle", "rolling_penny", "martinet"] {
        let sys = models::builtin(name).map_err(err)?;
        let mut draw = Draw::new(17);
        for _ in 0..3 {
            let s0 = draw.vak_state(name);
            for vakonomic in [true, false] {
                let gap = oracle_gap(&sys, &s0, vakonomic);
                worst = worst.max(gap);
                ensure(gap <= 1e-6, || {
                    format!("{name} {}: gap {gap:.3e}", if vakonomic { "vak" } else { "nh" })
                })?;
            }
        }
    }

    // Printed fields of the catalog, pointwise.
    let particle = models::builtin("constrained_particle").map_err(err)?;
    let penny = models::builtin("rolling_penny").map_err(err)?;
    let mut draw = Draw::new(19);
    let mut field_err = 0.0_f64;
    for _ in 0..100 {
        let s = draw.vak_state("constrained_particle");
        let a = nh_rhs(&particle, &s.nh()).map_err(err)?.dv;
        let (y, dx, dy) = (s.q[1], s.v[0], s.v[1]);
        field_err = field_err.max((a[0] + y * dx * dy / (1.0 + y * y)).abs()).max(a[1].abs());
        let s = draw.vak_state("rolling_penny");
        field_err = field_err.max(max_abs(&nh_rhs(&penny, &s.nh()).map_err(err)?.dv));
    }
    let d = vak_rhs(
        &particle,
        &VakState::new(vec![0.0, 1.0, 0.0], vec![1.0, 1.0], vec![2.0]),
    )
    .map_err(err)?;
    field_err = field_err
        .max(d.dv[0].abs())
        .max((d.dv[1] + 1.0).abs())
        .max(d.dp_dep[0].abs());
    ensure(field_err <= 1e-12, || format!("printed fields off by {field_err:.3e}"))?;
    Ok(format!("max trajectory gap {worst:.2e} over 18 runs"))
}

fn penny_results() -> Outcome {
    fact("penny.g");
    fact("penny.lift");
    fact("penny.multipliers");
    let sys = models::builtin("rolling_penny").map_err(err)?;
    let mut draw = Draw::new(23);

    // (a) g against the printed pair, with the recorded global sign.
    let mut g_err = 0.0_f64;
    for _ in 0..100 {
        let s = draw.vak_state("rolling_penny");
        let (phi, dtheta, dphi) = (s.q[3], s.v[0], s.v[1]);
        let k = s.p[0] * phi.sin() - s.p[1] * phi.cos();
        let printed = [dphi * k, -dtheta * k];
        let g = g_residuals(&sys, &s).map_err(err)?;
        g_err = g_err.max((g[0] + printed[0]).abs()).max((g[1] + printed[1]).abs());
    }
    ensure(g_err <= 1e-12, || format!("(a) g differs from -printed by {g_err:.3e}"))?;

    // (b) and (c) along nonholonomic trajectories.
    let g_cand = Candidate::parse("C12", &["2*dtheta - p_x*cos(phi) - p_y*sin(phi)"]).map_err(err)?;
    let (mut field, mut tang, mut lam) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..5 {
        let s0 = draw.vak_state("rolling_penny").nh();
        let traj = run(&sys, State::Nh(s0), 10.0, Method::default())?;
        for st in &traj.states {
            let (phi, dtheta) = (st.q()[3], st.v()[0]);
            let lifted = VakState::new(
                st.q().to_vec(),
                st.v().to_vec(),
                vec![2.0 * dtheta * phi.cos(), 2.0 * dtheta * phi.sin()],
            );
            field = field.max(max_abs(&field_residual(&sys, &lifted).map_err(err)?));
            let t = tangency_residuals(&sys, std::slice::from_ref(&g_cand), &lifted).map_err(err)?;
            tang = tang.max(t["C12"]);
            let l = mu_to_lambda(&sys, &lifted).map_err(err)?;
            lam = lam
                .max((l[0] + dtheta * phi.cos()).abs())
                .max((l[1] + dtheta * phi.sin()).abs());
        }
    }
    ensure(field <= 1e-8, || format!("(b) field residual {field:.3e} > 1e-8"))?;
    ensure(tang <= 1e-8, || format!("(b) C12 tangency {tang:.3e} > 1e-8"))?;
    ensure(lam <= 1e-12, || format!("(c) multiplier error {lam:.3e} > 1e-12"))?;
    Ok(format!(
        "(a) {g_err:.1e}  (b) field {field:.1e}, tangency {tang:.1e}  (c) {lam:.1e}"
    ))
}

fn particle_scan() -> Outcome {
    fact("particle.generic_g");
    fact("particle.curvature");
    let sys = models::builtin("constrained_particle").map_err(err)?;
    let region = Region {
        q: vec![(-2.0, 2.0); 3],
        v: vec![(0.5, 1.5); 2],
        p: vec![(-1.0, 1.0)],
    };
    let sampler = |p_mode| Sampler {
        count: 1000,
        seed: 29,
        region: region.clone(),
        p_mode,
    };
    let random = scan(&sys, &sampler(PMode::Random), &[], 1e-10).map_err(err)?;
    let legendre = scan(&sys, &sampler(PMode::Legendre), &[], 1e-10).map_err(err)?;
    let fg = random.summary.fraction_g_zero.ok_or("no g fraction")?;
    let fdy = legendre.summary.fraction_delta_y_zero.ok_or("no deltaY fraction")?;
    ensure(random.summary.skipped == 0 && legendre.summary.skipped == 0, || "scan skipped states".into())?;
    ensure(fg == 0.0, || format!("fraction(|g| < tol) = {fg} with random p"))?;
    ensure(fdy == 1.0, || format!("fraction(|dY| < tol) = {fdy} in legendre mode"))?;

    // Candidate loci, each sampled on its own defining set.
    let c11 = Candidate::parse("C11", &["p_z - dz", "dy"]).map_err(err)?;
    let c12 = Candidate::parse("C12", &["p_z - dz", "dx"]).map_err(err)?;
    let c2 = Candidate::parse("C2", &["dx", "dy"]).map_err(err)?;
    let mut draw = Draw::new(31);
    let mut worst = 0.0_f64;
    let mut curv = 0.0_f64;
    for _ in 0..200 {
        let q = draw.in_box(&[(-2.0, 2.0); 3]);
        let (a, pz) = (draw.uniform(-1.0, 1.0), draw.uniform(-1.0, 1.0));
        let on = [
            (&c11, VakState::new(q.clone(), vec![a, 0.0], vec![q[1] * a])),
            (&c12, VakState::new(q.clone(), vec![0.0, a], vec![0.0])),
            (&c2, VakState::new(q.clone(), vec![0.0, 0.0], vec![pz])),
        ];
        for (cand, s) in on {
            let cands = std::slice::from_ref(cand);
            let member = vaknh::comparison::candidate_values(&sys, cands, &s).map_err(err)?[&cand.name];
            ensure(member <= 1e-14, || format!("{} sample off its locus", cand.name))?;
            worst = worst.max(tangency_residuals(&sys, cands, &s).map_err(err)?[&cand.name]);
        }
        let r = &curvature(&sys, &q).map_err(err)?[0];
        curv = curv.max((r[(0, 1)] + 1.0).abs()).max((r[(1, 0)] - 1.0).abs());
    }
    ensure(worst <= 1e-10, || format!("candidate tangency {worst:.3e} > 1e-10"))?;
    ensure(curv <= 1e-14, || format!("curvature fact off by {curv:.3e}"))?;
    Ok(format!("frac g=0 (random p) {fg}, frac dY=0 (legendre) {fdy}, locus tangency {worst:.1e}"))
}

fn holonomic_flat() -> Outcome {
    fact("holonomic.flat");
    let sys = models::builtin("holonomic_demo").map_err(err)?;
    let mut draw = Draw::new(37);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let s = draw.vak_state("holonomic_demo");
        for r in curvature(&sys, &s.q).map_err(err)? {
            worst = worst.max(r.amax());
        }
        worst = worst.max(max_abs(&g_residuals(&sys, &s).map_err(err)?));
        worst = worst.max(max_abs(&field_residual(&sys, &s).map_err(err)?));
    }
    ensure(worst <= 1e-12, || format!("max |R|, |g|, |dY| = {worst:.3e}"))?;
    Ok(format!("max |R|, |g|, |dY| = {worst:.1e} at 1000 states"))
}

fn structural_identities() -> Outcome {
    fact("von_neumann2.nonlinear");
    fact("von_neumann2.degenerate");
    let mut draw = Draw::new(41);
    let (mut same, mut link) = (0.0_f64, 0.0_f64);
    for name in LINEAR_MODELS {
        let sys = models::builtin(name).map_err(err)?;
        for _ in 0..100 {
            let s = draw.vak_state(name);
            let c = cbar(&sys, &s).map_err(err)?;
            same = same.max((&c - ctilde(&sys, &s.nh()).map_err(err)?).amax());
            let zeroed = VakState::new(s.q.clone(), s.v.clone(), vec![0.0; sys.m()]);
            same = same.max((&c - cbar(&sys, &zeroed).map_err(err)?).amax());
            let lhs = c * DVector::from_vec(field_residual(&sys, &s).map_err(err)?);
            let g = g_residuals(&sys, &s).map_err(err)?;
            for (a, b) in lhs.iter().zip(&g) {
                link = link.max((a - SIGN_LINK * b).abs());
            }
        }
    }
    ensure(same <= 1e-14, || format!("C-bar vs C-tilde / p-dependence {same:.3e}"))?;
    ensure(link <= 1e-10, || format!("C-bar dY - s g = {link:.3e}"))?;

    // Verdict agreement where the ambient Hessian is regular.
    let mut systems: Vec<(String, SystemDef)> = ["constrained_particle", "rolling_penny", "holonomic_demo"]
        .iter()
        .map(|n| Ok((n.to_string(), models::builtin(n).map_err(err)?)))
        .collect::<Result<_, String>>()?;
    systems.push(("martinet (euclidean)".into(), common::euclidean_martinet()));
    let mut checked = 0;
    for (name, sys) in &systems {
        let region_name = if name.starts_with("martinet") { "martinet" } else { name.as_str() };
        for _ in 0..100 {
            let s = draw.vak_state(region_name);
            let symplectic = symplectic_check(sys, &s).map_err(err)?.invertible;
            let c = compatibility_matrix(sys, &s.q).map_err(err)?;
            let det = c.clone().lu().determinant();
            let compatible = det.abs() > 1e-12 * c.amax().powi(c.nrows() as i32);
            ensure(symplectic == compatible, || format!("{name}: verdicts differ at q = {:?}", s.q))?;
            checked += 1;
        }
    }

    // The nonlinear catalog entry: closed-form C-bar and its degeneration.
    let vn = models::builtin("von_neumann2").map_err(err)?;
    ensure(!verify_linearity(&vn, 32, 0).map_err(err)?.linear, || {
        "von Neumann constraint reported linear".into()
    })?;
    let mut vn_err = 0.0_f64;
    for _ in 0..100 {
        let s = draw.vak_state("von_neumann2");
        let a = s.q[0].powf(0.6) * s.q[1].powf(1.4);
        let psi = (a - s.v[0] * s.v[0]).sqrt();
        let expected = s.p[0] * a / psi.powi(3);
        let got = cbar(&vn, &s).map_err(err)?[(0, 0)];
        vn_err = vn_err.max((got - expected).abs() / expected.abs());
        let flipped = VakState::new(s.q.clone(), s.v.clone(), vec![-s.p[0]]);
        ensure(cbar(&vn, &flipped).map_err(err)?[(0, 0)] * got < 0.0, || "no sign change".into())?;
        let zero = VakState::new(s.q.clone(), s.v.clone(), vec![0.0]);
        ensure(!symplectic_check(&vn, &zero).map_err(err)?.invertible, || {
            "von Neumann C-bar regular at p = 0".into()
        })?;
    }
    ensure(vn_err <= 1e-10, || format!("von Neumann C-bar relative error {vn_err:.3e}"))?;
    Ok(format!(
        "C-bar=C-tilde {same:.1e}, sign link (s = {SIGN_LINK:+}) {link:.1e}, {checked} verdicts agree"
    ))
}

fn straight_lines() -> Outcome {
    fact("particle.straight_lines");
    let sys = models::builtin("constrained_particle").map_err(err)?;
    let s_cand = Candidate::parse("S", &["p_z - dz"]).map_err(err)?;
    let mut draw = Draw::new(43);
    let (mut el, mut field, mut tang) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..50 {
        let q0 = draw.in_box(&[(-2.0, 2.0); 3]);
        let dx = draw.uniform(-1.0, 1.0);
        let qdot = [dx, 0.0, q0[1] * dx];
        for i in 0..=10 {
            let t = i as f64 * 0.2;
            let q: Vec<f64> = q0.iter().zip(&qdot).map(|(a, b)| a + t * b).collect();
            let s = NhState::new(q.clone(), vec![dx, 0.0]);
            let free = NhDerivative {
                dq: qdot.to_vec(),
                dv: vec![0.0, 0.0],
            };
            el = el.max(max_abs(&vaknh::comparison::el_residual(&sys, &s, &free).map_err(err)?));
            el = el.max(max_abs(&nh_multipliers(&sys, &s, &free).map_err(err)?));
            let lifted = VakState::new(q, vec![dx, 0.0], vec![qdot[2]]);
            field = field.max(max_abs(&field_residual(&sys, &lifted).map_err(err)?));
            let r = tangency_residuals(&sys, std::slice::from_ref(&s_cand), &lifted).map_err(err)?;
            tang = tang.max(r["S"]);
        }
    }
    ensure(el <= 1e-9, || format!("el residual {el:.3e}"))?;
    ensure(field <= 1e-9, || format!("lifted field residual {field:.3e}"))?;
    ensure(tang <= 1e-9, || format!("S tangency {tang:.3e}"))?;
    Ok(format!("50 lines: el {el:.1e}, field {field:.1e}, tangency {tang:.1e}"))
}

fn ad_correctness() -> Outcome {
    let mut draw = Draw::new(47);
    let (mut worst, mut count) = (0.0_f64, 0usize);
    for name in models::NAMES {
        let sys = models::builtin(name).map_err(err)?;
        let region = models::region(name).ok_or("no region")?;
        let mut exprs = vec![sys.lagrangian().clone()];
        exprs.extend(sys.psi().iter().cloned());
        for _ in 0..100 {
            let q = draw.in_box(&region.q);
            let mut env = HashMap::new();
            for (i, c) in sys.coords().iter().enumerate() {
                env.insert(c.clone(), q[i]);
                env.insert(sys.velocity_name(i), draw.uniform(region.v[0].0, region.v[0].1));
            }
            for e in &exprs {
                let value = |env: &HashMap<String, f64>| e.evaluate(&|n: &str| env.get(n).copied());
                for v in e.free_vars() {
                    let x = env[&v];
                    let h = 1e-6 * (x.abs() + 1.0);
                    let at = |x: f64| {
                        let mut env = env.clone();
                        env.insert(v.clone(), x);
                        env
                    };
                    let fd = (value(&at(x + h)).map_err(err)? - value(&at(x - h)).map_err(err)?) / (2.0 * h);
                    let exact = partial(e, &env, &v).map_err(err)?;
                    worst = worst.max((exact - fd).abs() / (1.0 + exact.abs()));
                    for w in e.free_vars() {
                        let ab = second_partial(e, &env, &v, &w).map_err(err)?;
                        let ba = second_partial(e, &env, &w, &v).map_err(err)?;
                        ensure(ab.to_bits() == ba.to_bits(), || format!("{name}: mixed partial asymmetry"))?;
                        let fd2 = (partial(e, &at(x + h), &w).map_err(err)? - partial(e, &at(x - h), &w).map_err(err)?)
                            / (2.0 * h);
                        worst = worst.max((ab - fd2).abs() / (1.0 + ab.abs()));
                    }
                    count += 1;
                }
            }
        }
    }
    ensure(worst <= 1e-6, || format!("AD vs FD relative error {worst:.3e}"))?;
    Ok(format!("{count} partials, worst relative error {worst:.1e}, mixed partials symmetric"))
}

fn conservation() -> Outcome {
    let mut draw = Draw::new(53);
    let (mut h, mut e) = (0.0_f64, 0.0_f64);
    for name in LINEAR_MODELS {
        let sys = models::builtin(name).map_err(err)?;
        for _ in 0..3 {
            let s0 = draw.vak_state(name);
            let vak = run(&sys, State::Vak(s0.clone()), 10.0, Method::default())?;
            let dh = drift_report(&sys, &vak).max("H").ok_or("no H monitor")?;
            let nh = run(&sys, State::Nh(s0.nh()), 10.0, Method::default())?;
            let de = drift_report(&sys, &nh).max("E_L").ok_or("no E_L monitor")?;
            ensure(dh <= 1e-7, || format!("{name}: H drift {dh:.3e}"))?;
            ensure(de <= 1e-7, || format!("{name}: E_L drift {de:.3e}"))?;
            h = h.max(dh);
            e = e.max(de);
        }
    }
    Ok(format!("max H drift {h:.1e}, max E_L drift {e:.1e}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("paramecium closed form", paramecium_closed_form),
        ("Martinet conserved quantities", martinet_conservation),
        ("DAE oracle equivalence", dae_oracles),
        ("rolling penny", penny_results),
        ("constrained particle scan and candidates", particle_scan),
        ("holonomic demo is flat", holonomic_flat),
        ("structural identities", structural_identities),
        ("free straight lines lie in both problems", straight_lines),
        ("automatic differentiation", ad_correctness),
        ("conservation over [0, 10]", conservation),
    ];
    let mut failed = 0;
    for (i, (title, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {title}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {title}: {why}", i + 1);
            }
        }
    }

    let dormant: Vec<&str> = models::NAMES
        .iter()
        .flat_map(|m| models::facts(m))
        .map(|f| f.id)
        .filter(|id| !VISITED.with(|v| v.borrow().contains(id)))
        .collect();
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if !dormant.is_empty() {
        println!("FAIL catalog facts never exercised: {dormant:?}");
    }
    if failed == 0 && dormant.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

