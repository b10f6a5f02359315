use staircase_core::schedule::{compute_constants, ScheduleConstants};
use staircase_core::scheme::{diagnostics, init, run, stages_csv, step, CSV_HEADER};
use staircase_core::staircase::{CertOptions, LabelKind, ParamPoint};
use staircase_core::{Error, ProfileConfig};

fn constants(big_lambda: f64, p: f64) -> ScheduleConstants {
    let prof = ProfileConfig::new(1.0, big_lambda, 1.0).unwrap();
    compute_constants(&prof, p, 0.02, &CertOptions::default()).unwrap()
}

#[test]
fn forty_stages_respect_every_bound() {
    for c in [constants(4.0, 1.2), constants(400.0, 1.1)] {
        let rep = run(&c, ParamPoint::center(), 40).unwrap();
        rep.check().unwrap();
        assert_eq!(rep.violations, 0);
        assert!(rep.energy_increasing);
        assert!(rep.sp_max <= rep.sp_bound);
        for s in &rep.stages {
            assert!((s.total_mass - 1.0).abs() <= 1e-12, "stage {}", s.stage);
            assert_eq!(s.cells, 2 * s.stage as usize + 1);
            assert!(s.bands.iter().all(|b| b.ok));
            assert!(s.max_kf_residual <= s.kf_budget);
        }
    }
}

#[test]
fn labels_and_b_entry_are_preserved() {
    let c = constants(4.0, 1.2);
    let p0 = ParamPoint::new(1.3, 1.7, -0.4).unwrap();
    let mut ens = init(&c, p0).unwrap();
    for ell in 1..=15u32 {
        ens = step(&ens, &c).unwrap();
        for cell in &ens.cells {
            assert_eq!(cell.x.a12, p0.b);
            assert_eq!(cell.p, p0);
            match cell.kind {
                LabelKind::V => assert_eq!(cell.index, c.i + ell),
                LabelKind::W1 | LabelKind::W2 => {
                    assert!(cell.index >= c.i && cell.index < c.i + ell)
                }
                other => panic!("unexpected label {other:?}"),
            }
        }
    }
}

#[test]
fn corrupted_parameter_is_detected() {
    let c = constants(4.0, 1.2);
    let mut ens = step(&init(&c, ParamPoint::center()).unwrap(), &c).unwrap();
    let v = ens
        .cells
        .iter_mut()
        .find(|k| k.kind == LabelKind::V)
        .unwrap();
    v.p.a0p += 1e-3;
    assert!(matches!(
        diagnostics(&ens, &c),
        Err(Error::CorruptedState(_))
    ));
}

#[test]
fn reports_are_deterministic() {
    let c = constants(4.0, 1.2);
    let a = run(&c, ParamPoint::center(), 25).unwrap();
    let b = run(&c, ParamPoint::center(), 25).unwrap();
    assert_eq!(stages_csv(&a), stages_csv(&b));
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    let csv = stages_csv(&a);
    assert!(csv.starts_with(CSV_HEADER));
    // Stage 0 has no bands; stage ℓ ≥ 1 has ℓ of them.
    assert_eq!(csv.lines().count(), 1 + 1 + (1..=25).sum::<usize>());
}

#[test]
fn outside_box_is_rejected() {
    let c = constants(4.0, 1.2);
    let bad = ParamPoint {
        a0p: 2.5,
        a0m: 1.5,
        b: 0.0,
    };
    assert!(matches!(init(&c, bad), Err(Error::Config(_))));
}
