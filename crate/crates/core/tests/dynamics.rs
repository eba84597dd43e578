//! Behaviour of integrated trajectories: conservation laws, convergence
//! order, reversibility and invariance of the multiplier covector.

mod common;

use vaknh::comparison::el_residual;
use vaknh::integrate::{drift_report, integrate, Method, Options, State, Trajectory};
use vaknh::maps::{shifted_covector, vg_residual};
use vaknh::models;
use vaknh::nonholonomic::{nh_multipliers, nh_rhs};
use vaknh::system::{NhState, SystemDef, VakState};

use common::{sup_diff, Draw, LINEAR_MODELS};

const TIGHT: Method = Method::Rk45 {
    rtol: 1e-10,
    atol: 1e-12,
};

fn run(sys: &SystemDef, s0: State, t_end: f64, method: Method) -> Trajectory {
    integrate(sys, &s0, &Options::new(t_end, method)).unwrap()
}

/// Starting points whose trajectories stay well inside the regular
/// region of each model over `t ∈ [0, 10]`.
fn gentle_state(name: &str, seed: u64) -> VakState {
    let mut draw = Draw::new(seed);
    let mut s = draw.vak_state(name);
    for v in &mut s.v {
        *v *= 0.5;
    }
    s
}

#[test]
fn hamiltonian_and_energy_are_conserved_at_tight_tolerance() {
    for name in LINEAR_MODELS {
        let sys = models::builtin(name).unwrap();
        let s0 = gentle_state(name, 11);
        let vak = run(&sys, State::Vak(s0.clone()), 10.0, TIGHT);
        let h = drift_report(&sys, &vak).max("H").unwrap();
        assert!(h <= 1e-7, "{name}: H drift {h:e}");
        let nh = run(&sys, State::Nh(s0.nh()), 10.0, TIGHT);
        let e = drift_report(&sys, &nh).max("E_L").unwrap();
        assert!(e <= 1e-7, "{name}: E_L drift {e:e}");
    }
}

#[test]
fn drift_report_examples() {
    let martinet = models::builtin("martinet").unwrap();
    let traj = run(
        &martinet,
        State::Vak(VakState::new(vec![0.0, 1.0, 0.0], vec![1.0, 0.0], vec![1.0])),
        10.0,
        Method::default(),
    );
    assert!(drift_report(&martinet, &traj).max("H").unwrap() <= 1e-7);

    let particle = models::builtin("constrained_particle").unwrap();
    let line = run(
        &particle,
        State::Nh(NhState::new(vec![0.0; 3], vec![1.0, 0.0])),
        5.0,
        Method::default(),
    );
    assert!(drift_report(&particle, &line).max("E_L").unwrap() <= 1e-15);

    let penny = models::builtin("rolling_penny").unwrap();
    let roll = run(
        &penny,
        State::Nh(NhState::new(vec![0.3, -0.2, 0.7, 1.1], vec![0.8, -0.6])),
        10.0,
        Method::default(),
    );
    assert!(drift_report(&penny, &roll).max("E_L").unwrap() <= 1e-7);
}

/// Endpoint error of RK4 against a tight RK45 reference.
fn rk4_error(sys: &SystemDef, s0: &VakState, dt: f64, reference: &State) -> f64 {
    let end = run(sys, State::Vak(s0.clone()), 2.0, Method::Rk4 { dt }).last().clone();
    let gap = |a: &[f64], b: &[f64]| sup_diff(a, b);
    gap(end.q(), reference.q())
        .max(gap(end.v(), reference.v()))
        .max(gap(end.p(), reference.p()))
}

#[test]
fn rk4_converges_at_fourth_order() {
    for name in ["constrained_particle", "martinet"] {
        let sys = models::builtin(name).unwrap();
        let s0 = VakState::new(vec![0.2, 0.7, -0.1], vec![0.9, -0.6], vec![0.8]);
        let reference = run(&sys, State::Vak(s0.clone()), 2.0, Method::Rk45 { rtol: 1e-12, atol: 1e-14 })
            .last()
            .clone();
        let coarse = rk4_error(&sys, &s0, 0.1, &reference);
        let fine = rk4_error(&sys, &s0, 0.05, &reference);
        let ratio = coarse / fine;
        assert!((12.0..=20.0).contains(&ratio), "{name}: ratio {ratio} ({coarse:e} / {fine:e})");
    }
}

/// The particle's vakonomic field is reversible under
/// `(q, v, p) ↦ (q, −v, −p)`: the reduced function is even under that map
/// because the restricted Lagrangian is quadratic and the constraint is
/// linear in the velocities, so accelerations are unchanged while the
/// first-order quantities flip sign.
#[test]
fn particle_flow_is_time_reversible() {
    let sys = models::builtin("constrained_particle").unwrap();
    let s0 = VakState::new(vec![0.1, -0.4, 0.3], vec![0.7, 0.5], vec![1.3]);
    let forward = run(&sys, State::Vak(s0.clone()), 3.0, Method::default());
    let end = forward.last();
    let flip = |x: &[f64]| x.iter().map(|a| -a).collect::<Vec<_>>();
    let reflected = VakState::new(end.q().to_vec(), flip(end.v()), flip(end.p()));
    let back = run(&sys, State::Vak(reflected), 3.0, Method::default());
    let fin = back.last();
    assert!(sup_diff(fin.q(), &s0.q) <= 1e-6);
    assert!(sup_diff(&flip(fin.v()), &s0.v) <= 1e-6);
    assert!(sup_diff(&flip(fin.p()), &s0.p) <= 1e-6);
}

#[test]
fn multiplier_covector_stays_in_the_annihilator() {
    for name in LINEAR_MODELS {
        let sys = models::builtin(name).unwrap();
        let traj = run(&sys, State::Vak(gentle_state(name, 5)), 3.0, Method::default());
        for st in &traj.states {
            let State::Vak(s) = st else { unreachable!() };
            let lambda = shifted_covector(&sys, s).unwrap();
            let worst = vg_residual(&sys, &lambda, &s.nh())
                .unwrap()
                .iter()
                .fold(0.0_f64, |m, r| m.max(r.abs()));
            assert!(worst <= 1e-8, "{name}: {worst:e}");
        }
    }
}

#[test]
fn free_solutions_carry_no_constraint_force() {
    let sys = models::builtin("constrained_particle").unwrap();
    let mut draw = Draw::new(2);
    for _ in 0..10 {
        let q = draw.in_box(&[(-2.0, 2.0); 3]);
        let s0 = NhState::new(q, vec![draw.uniform(-1.0, 1.0), 0.0]);
        let traj = run(&sys, State::Nh(s0), 2.0, Method::default());
        for st in &traj.states {
            let State::Nh(s) = st else { unreachable!() };
            let accel = nh_rhs(&sys, s).unwrap();
            for l in nh_multipliers(&sys, s, &accel).unwrap() {
                assert!(l.abs() <= 1e-9);
            }
            for r in el_residual(&sys, s, &accel).unwrap() {
                assert!(r.abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn cyclic_multipliers_are_constant_along_trajectories() {
    for name in ["martinet", "paramecium", "constrained_particle"] {
        let sys = models::builtin(name).unwrap();
        let s0 = gentle_state(name, 8);
        let traj = run(&sys, State::Vak(s0.clone()), 5.0, Method::default());
        for st in &traj.states {
            assert_eq!(st.p(), s0.p.as_slice(), "{name}");
        }
    }
}
