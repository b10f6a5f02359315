//! Randomised invariants of the profile, the matrix families and laminates.

use proptest::prelude::*;
use staircase_core::laminate::{
    barycenter, build_corr_deficit, build_mu_i, build_mu_interp_deficit, elementary_split,
    validate, AtomTag, Laminate, SplitStep,
};
use staircase_core::profile::{phi_d, phi_d_inv, phi_dd};
use staircase_core::staircase::{
    family_matrix, interp_coeffs_deficit, invert_family_deficit, split_coeffs, Family, Interp,
    InvertKind, LabelKind, ParamPoint, StairConfig,
};
use staircase_core::{ProfileConfig, SymMatrix2};

/// Reference configuration; the certified constants are `I₀ = 20`, `I₁ = 24`,
/// `T₀ = 0.97948`.
fn cfg() -> StairConfig {
    StairConfig::new(ProfileConfig::new(1.0, 4.0, 1.0).unwrap(), 1.2, 1.2, 0.02).unwrap()
}

const I0: u32 = 20;
const I1: u32 = 24;
const T0_DEFICIT: f64 = 1.0 - 0.97948;

fn point() -> impl Strategy<Value = ParamPoint> {
    (1.0001f64..1.9999, 1.0001f64..1.9999, -0.9999f64..0.9999)
        .prop_map(|(a0p, a0m, b)| ParamPoint::new(a0p, a0m, b).unwrap())
}

/// Round-trip tolerance for the interpolation families: `1 − t` divides the
/// recovered coordinate, so rounding in `X` is amplified by `|X|/d`.
fn interp_tol(x: &SymMatrix2, d: f64) -> f64 {
    (4.0 * f64::EPSILON * x.max_abs() / d).max(1e-9)
}

fn close(a: &SymMatrix2, b: &SymMatrix2, rel: f64) -> bool {
    a.dist_max(b) <= rel * a.max_abs().max(b.max_abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn curvature_strictly_inside_band(a in -15.0f64..15.0, k in 0.5f64..4.0) {
        let prof = ProfileConfig::new(0.7, 9.0, k).unwrap();
        let v = phi_dd(&prof, a / k);
        prop_assert!(v > 0.7 && v < 9.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn slope_inverse_round_trip(a in -1e6f64..1e6) {
        let prof = ProfileConfig::new(1.0, 4.0, 1.0).unwrap();
        let back = phi_d_inv(&prof, phi_d(&prof, a)).unwrap();
        prop_assert!((back - a).abs() <= 1e-9, "{} -> {}", a, back);
    }

    #[test]
    fn slope_asymptotics(a in 100.0f64..1e5, k in 0.5f64..3.0) {
        let prof = ProfileConfig::new(1.0, 4.0, k).unwrap();
        let a = a / k;
        let bound = 2.0 * 3.0 * std::f64::consts::LN_2 / (k * a);
        prop_assert!((phi_d(&prof, a) / a - 1.0).abs() <= bound);
        prop_assert!((phi_d(&prof, -a) / -a - 4.0).abs() <= bound);
    }

    #[test]
    fn slope_derivative_matches_curvature(a in -20.0f64..20.0) {
        let prof = ProfileConfig::new(1.0, 4.0, 1.0).unwrap();
        let fd = |h: f64| ((phi_d(&prof, a + h) - phi_d(&prof, a - h)) / (2.0 * h) - phi_dd(&prof, a)).abs();
        let (e3, e4) = (fd(1e-3), fd(1e-4));
        prop_assert!(e3 <= 1.0 * 1e-6);
        // Second order unless already at rounding level.
        if e3 > 1e-7 {
            prop_assert!((e3 / e4).log10() >= 1.9, "errors {e3:e}, {e4:e}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn family_algebra(i in 1u32..=I0 + 50, p in point()) {
        let c = cfg();
        let a = family_matrix(&c, Family::A, i, &p);
        let b = family_matrix(&c, Family::B, i, &p);
        let cm = family_matrix(&c, Family::C, i, &p);
        let d = family_matrix(&c, Family::D, i, &p);
        let e = family_matrix(&c, Family::E, i, &p);
        let a_next = family_matrix(&c, Family::A, i + 1, &p);
        prop_assert_eq!(e, a_next);
        let bc = b - cm;
        prop_assert!(bc.a11 == 0.0 && bc.a12 == 0.0);
        let de = d - e;
        prop_assert!(de.a12 == 0.0 && de.a22 == 0.0);

        let s = split_coeffs(&c, i, &p);
        prop_assert!([s.l1, s.l2, s.l3].iter().all(|x| *x > 0.0 && *x < 1.0));
        prop_assert!((s.sum() - 1.0).abs() <= 1e-12);
        let bary = s.l1 * b + s.l2 * d + s.l3 * a_next;
        prop_assert!(close(&bary, &a, 1e-10), "{:?} vs {:?}", bary, a);

        let q = invert_family_deficit(&c, InvertKind::A, i, None, &a).unwrap();
        prop_assert!(q.dist_max(&p) <= 1e-9);
    }

    #[test]
    fn interpolation_algebra(i in I1..=I0 + 50, p in point(), d in 1e-6f64..T0_DEFICIT) {
        let c = cfg();
        let s = interp_coeffs_deficit(&c, i, d, &p);
        prop_assert!([s.l1, s.l2, s.l3].iter().all(|x| *x > 0.0 && *x < 1.0));
        prop_assert!((s.sum() - 1.0).abs() <= 1e-12);
        for (which, kind) in [(Interp::One, InvertKind::W1), (Interp::Two, InvertKind::W2)] {
            let x = staircase_core::staircase::interp_map_deficit(&c, which, i, d, &p);
            let q = invert_family_deficit(&c, kind, i, Some(d), &x).unwrap();
            prop_assert!(q.dist_max(&p) <= interp_tol(&x, d), "{:?}: {:?}", which, q);
        }
    }

    #[test]
    fn constructors_validate(i in I1..=I0 + 40, span in 1u32..6, p in point(), d in 1e-6f64..T0_DEFICIT, shrink in 0.0f64..1.0) {
        let c = cfg();
        let mu = build_mu_i(&c, i, &p).unwrap();
        prop_assert!(validate(&mu).ok);
        let nu = build_mu_interp_deficit(&c, i, i + span, d, &p).unwrap();
        prop_assert!(validate(&nu).ok);
        prop_assert!((nu.total_weight() - 1.0).abs() <= 1e-12);
        for atom in &nu.atoms {
            let kind = match atom.tag.kind {
                LabelKind::W1 => InvertKind::W1,
                LabelKind::W2 => InvertKind::W2,
                _ => continue,
            };
            let q = invert_family_deficit(&c, kind, atom.tag.index, Some(d), &atom.x).unwrap();
            prop_assert!(q.dist_max(&p) <= interp_tol(&atom.x, d));
        }
        let d_next = d * shrink;
        for which in [Interp::One, Interp::Two] {
            let corr = build_corr_deficit(&c, which, i, i + span, d, d_next, &p).unwrap();
            let rep = validate(&corr);
            prop_assert!(rep.ok, "{:?}", rep);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn random_splits_conserve_weight_and_barycenter(
        seeds in proptest::collection::vec((0.0f64..1.0, 0.01f64..0.99, -3.0f64..3.0, 0.0f64..std::f64::consts::PI), 1..1000)
    ) {
        let x0 = SymMatrix2::new(1.0, -0.5, 2.0);
        let mut nu = Laminate::dirac(x0, AtomTag::new(LabelKind::A, 1));
        for (k, &(pick, s, kappa, angle)) in seeds.iter().enumerate() {
            let idx = ((pick * nu.atoms.len() as f64) as usize).min(nu.atoms.len() - 1);
            let x = nu.atoms[idx].x;
            let (c, sn) = (angle.cos(), angle.sin());
            let dir = kappa * SymMatrix2::new(c * c, c * sn, sn * sn);
            let b1 = x - s * dir;
            let b2 = x + (1.0 - s) * dir;
            let tag = |j: u32| AtomTag::new(LabelKind::B, 2 * k as u32 + j);
            nu = elementary_split(&nu, SplitStep::full(idx, b1, b2, s, [tag(0), tag(1)])).unwrap();
        }
        prop_assert!((nu.total_weight() - 1.0).abs() <= 1e-12);
        prop_assert!(close(&barycenter(&nu), &x0, 1e-10));
        prop_assert!(validate(&nu).ok);
    }
}
