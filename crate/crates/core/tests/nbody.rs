mod common;

use common::{direct_nbody, max_rel_error};
use genesc_core::demos::nbody::*;
use genesc_core::scheduler::Mode;
use genesc_core::*;

#[test]
fn two_bodies_attract_by_inverse_square() {
    let x: Vec<[f64; 3]> = vec![[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]];
    let a = accelerations(&x, &[1.0, 2.0], 0..2).unwrap();
    // unit separation: |a_i| = m_j
    assert!((a[0][0] - 2.0).abs() < 1e-12);
    assert!((a[1][0] + 1.0).abs() < 1e-12);
    assert_eq!([a[0][1], a[0][2], a[1][1], a[1][2]], [0.0; 4]);
}

#[test]
fn split_ranges_give_identical_forces() {
    let b = BodySet64::random(37, 8);
    let whole = accelerations(&b.x, &b.m, 0..37).unwrap();
    let mut pieces = accelerations(&b.x, &b.m, 0..10).unwrap();
    pieces.extend(accelerations(&b.x, &b.m, 10..37).unwrap());
    assert_eq!(whole, pieces);
}

#[test]
fn coincident_bodies_are_an_error() {
    let x = vec![[0.1, 0.2, 0.3], [1.0, 0.0, 0.0], [0.1, 0.2, 0.3]];
    assert_eq!(accelerations(&x, &[1.0; 3], 0..3), Err(NBodyError::CoincidentBodies { i: 0, j: 2 }));
    let b = BodySet64::new(x, vec![[0.0; 3]; 3], vec![1.0; 3]).unwrap();
    let err = run_nbody(&b, 1e-3, 1, 2, &SchedulerConfig::fixed(2, 0)).unwrap_err();
    assert!(matches!(err, NBodyError::Scheduler(SchedulerError::KernelPanic { .. })), "{err}");
}

#[test]
fn mismatched_arrays_are_rejected() {
    assert!(matches!(
        BodySet64::new(vec![[0.0; 3]; 2], vec![[0.0; 3]; 3], vec![1.0; 2]),
        Err(NBodyError::ShapeMismatch(_))
    ));
}

#[test]
fn library_step_matches_direct_loop() {
    let b = BodySet64::random(20, 4);
    let (x, v) = direct_nbody(&b.x, &b.v, &b.m, 5e-4, 7);
    let s = simulate(&b, 5e-4, 7).unwrap();
    assert_eq!(s.x, x);
    assert_eq!(s.v, v);
}

#[test]
fn single_precision_tracks_double_precision() {
    let b64 = BodySet64::random(16, 2);
    let b32 = BodySet32::new(
        b64.x.iter().map(|p| p.map(|c| c as f32)).collect(),
        b64.v.iter().map(|p| p.map(|c| c as f32)).collect(),
        b64.m.iter().map(|&m| m as f32).collect(),
    )
    .unwrap();
    let s64 = simulate(&b64, 1e-3, 5).unwrap();
    let s32 = simulate(&b32, 1e-3, 5).unwrap();
    let widened: Vec<[f64; 3]> = s32.x.iter().map(|p| p.map(f64::from)).collect();
    assert!(max_rel_error(&widened, &s64.x) < 1e-4);
}

#[test]
fn momentum_is_conserved_over_a_run() {
    let b = BodySet64::random(32, 6);
    let p0 = b.momentum();
    let run = run_nbody(&b, 1e-4, 5, 4, &SchedulerConfig::fixed(3, 1)).unwrap();
    let p1 = run.bodies.momentum();
    for k in 0..3 {
        assert!((p0[k] - p1[k]).abs() < 1e-12, "{p0:?} vs {p1:?}");
    }
    assert_eq!(run.reports.len(), 5);
    assert!(run.reports.iter().all(|r| r.is_clean()));
}

#[test]
fn partitioned_force_stage_runs_as_many_instances() {
    let b = BodySet64::random(16, 1);
    let mut cfg = SchedulerConfig::fixed(1, 1);
    cfg.mode = Mode::Sequential;
    let run = run_nbody(&b, 1e-3, 1, 4, &cfg).unwrap();
    let forces = run.reports[0]
        .trace
        .spans()
        .keys()
        .filter(|t| t.entity.as_str() == "approximate_force")
        .count();
    assert_eq!(forces, 4);
}
