//! Acceptance suite: one verdict line per criterion, tolerances pinned below.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines are always
//! printed; the process fails if any criterion is red.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use staircase_core::laminate::build_mu_i;
use staircase_core::realizer::{
    area_fraction_near, check_map, realize_laminate, realize_scheme, unit_square, OscParams,
};
use staircase_core::regularity::{
    bootstrap_exponents, discrete_lemma41, pinching_beta, BootstrapInput, GridFn, PinchInput,
};
use staircase_core::schedule::{compute_constants, verify_schedule, Precision, ScheduleConstants};
use staircase_core::scheme::{run, RunReport};
use staircase_core::staircase::{
    family_matrix, interp_coeffs_deficit, interp_map_deficit, invert_family_deficit, log_r_limit,
    p_critical, split_coeffs, CertOptions, Family, Interp, InvertKind, ParamPoint, StairConfig,
};
use staircase_core::{Error, ProfileConfig, SymMatrix2};

const LOG_R_STEP: f64 = 1e-4;
const LIMIT_TOL: f64 = 1e-3;
const SIMPLEX_TOL: f64 = 1e-12;
const BARYCENTER_REL_TOL: f64 = 1e-10;
const INVERSION_TOL: f64 = 1e-9;
const HORIZON: u32 = 50;
const MASS_TOL: f64 = 1e-12;
const SP_STABILITY: f64 = 0.01;
const ENERGY_FACTOR: f64 = 0.9;
const R2_MIN: f64 = 0.99;
const ETA: f64 = 0.05;
const MAP_TOL: f64 = 1e-9;
const DEPTH2_TOL: f64 = 0.07;
const PINCH_TOL: f64 = 1e-9;

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        ok,
        detail: detail.into(),
    }
}

fn profile(lambda: f64, big_lambda: f64) -> ProfileConfig {
    ProfileConfig::new(lambda, big_lambda, 1.0).unwrap()
}

fn reference() -> ScheduleConstants {
    compute_constants(&profile(1.0, 4.0), 1.2, 0.02, &CertOptions::default()).unwrap()
}

fn high_contrast() -> ScheduleConstants {
    compute_constants(&profile(1.0, 400.0), 1.1, 0.02, &CertOptions::default()).unwrap()
}

fn random_point(rng: &mut ChaCha8Rng) -> ParamPoint {
    ParamPoint::new(
        rng.gen_range(1.0001..1.9999),
        rng.gen_range(1.0001..1.9999),
        rng.gen_range(-0.9999..0.9999),
    )
    .unwrap()
}

fn close(a: &SymMatrix2, b: &SymMatrix2, rel: f64) -> bool {
    a.dist_max(b) <= rel * a.max_abs().max(b.max_abs()).max(1.0)
}

fn staircase_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_staircase"))
}

fn simulate_in(dir: &Path, args: &[&str]) -> std::process::ExitStatus {
    staircase_bin()
        .arg("--out")
        .arg(dir)
        .args(args)
        .arg("simulate")
        .output()
        .expect("staircase binary runs")
        .status
}

fn within(limit: Duration, took: Duration) -> (bool, String) {
    (
        took <= limit,
        format!("{:.2}s/{}s", took.as_secs_f64(), limit.as_secs()),
    )
}

fn limit_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let lambda = loop {
            let v = rng.gen_range(0.0..1.0);
            if v > 0.0 {
                break v;
            }
        };
        let big = loop {
            let v = rng.gen_range(1.0..=25.0);
            if v > 1.0 {
                break v;
            }
        };
        let got = log_r_limit(&profile(lambda, big), 1.0 + LOG_R_STEP);
        worst = worst.max((got - p_critical(lambda, big)).abs());
    }
    verdict(
        worst < LIMIT_TOL,
        format!("max |log_r L - p_crit| = {worst:.3e}"),
    )
}

fn staircase_algebra() -> Verdict {
    let cfg = StairConfig::new(profile(1.0, 4.0), 1.2, 1.2, 0.02).unwrap();
    let (i0, i1, t0_deficit) = (20, 24, 1.0 - 0.97948);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = Vec::new();
    for _ in 0..1000 {
        let i = rng.gen_range(1..=i0 + HORIZON);
        let p = random_point(&mut rng);
        let a = family_matrix(&cfg, Family::A, i, &p);
        let b = family_matrix(&cfg, Family::B, i, &p);
        let c = family_matrix(&cfg, Family::C, i, &p);
        let d = family_matrix(&cfg, Family::D, i, &p);
        let e = family_matrix(&cfg, Family::E, i, &p);
        let a_next = family_matrix(&cfg, Family::A, i + 1, &p);
        let s = split_coeffs(&cfg, i, &p);
        let (bc, de) = (b - c, d - e);
        let checks = [
            ("E = A_{i+1}", e == a_next),
            ("rank-one B-C", bc.a11 == 0.0 && bc.a12 == 0.0),
            ("rank-one D-E", de.a12 == 0.0 && de.a22 == 0.0),
            (
                "simplex",
                [s.l1, s.l2, s.l3].iter().all(|x| *x > 0.0 && *x < 1.0)
                    && (s.sum() - 1.0).abs() <= SIMPLEX_TOL,
            ),
            (
                "barycenter",
                close(
                    &(s.l1 * b + s.l2 * d + s.l3 * a_next),
                    &a,
                    BARYCENTER_REL_TOL,
                ),
            ),
            (
                "A inversion",
                invert_family_deficit(&cfg, InvertKind::A, i, None, &a)
                    .is_ok_and(|q| q.dist_max(&p) <= INVERSION_TOL),
            ),
        ];
        failures.extend(
            checks
                .iter()
                .filter(|c| !c.1)
                .map(|c| format!("{} at i={i}", c.0)),
        );
        if i >= i1 {
            let dd = rng.gen_range(1e-6..t0_deficit);
            let si = interp_coeffs_deficit(&cfg, i, dd, &p);
            if !(si.sum() - 1.0).abs().le(&SIMPLEX_TOL) {
                failures.push(format!("interpolation simplex at i={i}"));
            }
            for (which, kind) in [(Interp::One, InvertKind::W1), (Interp::Two, InvertKind::W2)] {
                let x = interp_map_deficit(&cfg, which, i, dd, &p);
                // Rounding in X is amplified by |X|/d when recovering P.
                let tol = (4.0 * f64::EPSILON * x.max_abs() / dd).max(INVERSION_TOL);
                if !invert_family_deficit(&cfg, kind, i, Some(dd), &x)
                    .is_ok_and(|q| q.dist_max(&p) <= tol)
                {
                    failures.push(format!("{kind:?} inversion at i={i}"));
                }
            }
        }
    }
    verdict(
        failures.is_empty(),
        match failures.first() {
            None => "1000 samples".to_string(),
            Some(f) => format!("{} failures, first: {f}", failures.len()),
        },
    )
}

fn bracket_certification(c: &ScheduleConstants) -> Verdict {
    let m = &c.margins.bracket;
    let window = m.first_index == c.i0 && m.last_index >= c.i0 + HORIZON;
    let cfg = c.stair();
    let (lo, hi) = cfg.bracket();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let outside = (0..1000)
        .filter(|_| {
            let i = rng.gen_range(c.i0..=c.i0 + HORIZON);
            let l3 = split_coeffs(&cfg, i, &random_point(&mut rng)).l3;
            !(l3 > lo && l3 < hi)
        })
        .count();
    verdict(
        window && m.min_margin() > 0.0 && outside == 0,
        format!(
            "r={}, I0={}, margins ({:.3e}, {:.3e}) over [{}, {}], {outside}/1000 outside",
            c.r, c.i0, m.lower_margin, m.upper_margin, m.first_index, m.last_index
        ),
    )
}

fn schedule(c: &ScheduleConstants) -> Verdict {
    let double = verify_schedule(c, 50, Precision::Double);
    let extended = verify_schedule(c, 50, Precision::Extended);
    let mut broken = c.clone();
    broken.n = 0;
    let detected = [Precision::Double, Precision::Extended]
        .into_iter()
        .all(|pr| {
            matches!(
                verify_schedule(&broken, 50, pr),
                Err(Error::Schedule { .. })
            )
        });
    let detail = match (&double, &extended) {
        (Ok(d), Ok(e)) => format!(
            "double min margin {:.3e}, extended {:.3e}, N=0 detected: {detected}",
            d.increment_margin
                .min(d.lower_bound_margin)
                .min(d.easy_margin),
            e.increment_margin
                .min(e.lower_bound_margin)
                .min(e.easy_margin)
        ),
        (d, e) => format!(
            "double {:?}, extended {:?}",
            d.as_ref().err(),
            e.as_ref().err()
        ),
    };
    verdict(double.is_ok() && extended.is_ok() && detected, detail)
}

fn bands_inside(csv: &str) -> (usize, usize) {
    let mut rows = 0;
    let mut bad = 0;
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |k: usize| f[k].parse::<f64>().unwrap();
        rows += 1;
        let band_ok = f[1].is_empty() || (num(3) <= num(2) && num(2) <= num(4));
        if !band_ok || !(num(6) <= num(5) && num(5) <= num(7)) {
            bad += 1;
        }
    }
    (rows, bad)
}

type Run<'a> = (&'a str, &'a ScheduleConstants, &'a RunReport);

fn mass_chain(runs: &[Run]) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let status = simulate_in(dir.path(), &[]);
    let (time_ok, time) = within(Duration::from_secs(60), t.elapsed());
    let csv = std::fs::read_to_string(dir.path().join("stages.csv")).unwrap_or_default();
    let (rows, bad) = bands_inside(&csv);
    let mut ok = status.success() && rows > 0 && bad == 0 && time_ok;
    let mut detail = format!(
        "default run exit {:?}, {bad}/{rows} rows outside, {time}",
        status.code()
    );
    for (name, _, rep) in runs {
        let mass_err = rep
            .stages
            .iter()
            .map(|s| (s.total_mass - 1.0).abs())
            .fold(0.0, f64::max);
        let good = rep.stages.len() == 41 && rep.violations == 0 && mass_err <= MASS_TOL;
        ok &= good;
        detail += &format!(
            "; {name}: {} violations, mass err {mass_err:.1e}",
            rep.violations
        );
    }
    verdict(ok, detail)
}

fn sp_stability(_: &ScheduleConstants, rep: &RunReport) -> (bool, String) {
    let sp: Vec<f64> = rep.stages.iter().map(|s| s.sp).collect();
    let tail = sp[31..=40].iter().copied().fold(0.0, f64::max);
    let rel = (tail - sp[30]).abs() / sp[30];
    let bounded = sp.iter().all(|v| v.is_finite() && *v <= rep.sp_bound);
    (
        bounded && rel < SP_STABILITY,
        format!(
            "drift {rel:.4}, max {:.4e} <= bound {:.4e}: {bounded}",
            rep.sp_max, rep.sp_bound
        ),
    )
}

fn energy_divergence(c: &ScheduleConstants, rep: &RunReport) -> (bool, String) {
    let e: Vec<f64> = rep.stages.iter().map(|s| s.energy).collect();
    let increasing = e.windows(2).all(|w| w[1] > w[0]);
    let scale = ENERGY_FACTOR * (1.0 - c.r.powf(-c.p)) * c.r.powi(2 * c.i as i32);
    let ratio = (5..=40)
        .map(|l| e[l] / (scale * l as f64))
        .fold(f64::INFINITY, f64::min);
    let (xs, ys): (Vec<f64>, Vec<f64>) = (5..=40).map(|l| (l as f64, e[l])).unzip();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let (slope, r2) = (sxy / sxx, sxy * sxy / (sxx * syy));
    (
        increasing && ratio >= 1.0 && slope > 0.0 && r2 > R2_MIN,
        format!("increasing {increasing}, min E/bound {ratio:.3}, slope {slope:.4e}, R2 {r2:.4}"),
    )
}

fn per_config(
    runs: &[Run],
    f: impl Fn(&ScheduleConstants, &RunReport) -> (bool, String),
) -> Verdict {
    let mut ok = true;
    let parts: Vec<String> = runs
        .iter()
        .map(|(name, c, rep)| {
            let (good, d) = f(c, rep);
            ok &= good;
            format!("{name} [{}] {d}", if good { "ok" } else { "red" })
        })
        .collect();
    verdict(ok, parts.join("; "))
}

fn realizer(c: &ScheduleConstants) -> Verdict {
    let cfg = c.stair();
    let nu = build_mu_i(&cfg, c.i, &ParamPoint::center()).unwrap();
    let map =
        realize_laminate(&unit_square(), [0.0, 0.0], &nu, None, &OscParams::default()).unwrap();
    let frac_err = nu
        .atoms
        .iter()
        .map(|a| (area_fraction_near(&map, &a.x, 1e-6) - a.weight).abs())
        .fold(0.0, f64::max);
    let chk = check_map(&map, 1000);
    // A finer period at depth 2 exceeds the default cell cap.
    let coarse = OscParams {
        theta: 1.0,
        ..OscParams::default()
    };
    let two = realize_scheme(c, ParamPoint::center(), 2, None, &coarse).unwrap();
    let hist_err = two
        .histogram
        .iter()
        .map(|h| (h.area_fraction - h.mass).abs())
        .fold(0.0, f64::max);
    let chk2 = check_map(&two.map, 1000);
    verdict(
        frac_err <= ETA
            && chk.boundary <= MAP_TOL
            && chk.continuity <= MAP_TOL
            && chk2.boundary <= MAP_TOL
            && chk2.continuity <= MAP_TOL
            && hist_err <= DEPTH2_TOL,
        format!(
            "depth 1: {} cells, fraction err {frac_err:.4}, boundary {:.1e}, continuity {:.1e}; depth 2: {} cells, histogram err {hist_err:.4}",
            chk.cells, chk.boundary, chk.continuity, chk2.cells
        ),
    )
}

/// Piecewise-linear monotone profile on `[0, 1]`.
fn monotone_profile(rng: &mut ChaCha8Rng, sign: f64) -> impl Fn(f64) -> f64 {
    let knots = 8;
    let mut vals = vec![rng.gen_range(0.0..1.0)];
    for _ in 0..knots {
        let last = *vals.last().unwrap();
        vals.push(last + rng.gen_range(0.0..3.0));
    }
    move |x: f64| {
        let t = if sign > 0.0 { x } else { 1.0 - x };
        let s = (t * knots as f64).clamp(0.0, knots as f64 - 1e-12);
        let k = s.floor() as usize;
        let w = s - k as f64;
        vals[k] * (1.0 - w) + vals[k + 1] * w
    }
}

fn regularity() -> Verdict {
    let boot = bootstrap_exponents(&BootstrapInput {
        n: 3,
        p: 2.0,
        gamma: 0.5,
    })
    .unwrap();
    let boot_ok = boot.exponents == [2.0, 4.0, 6.0];

    let good = PinchInput {
        n: 2,
        lambda: 0.9,
        big_lambda: 1.0,
    };
    let pinch_ok = pinching_beta(&good).is_ok_and(|iv| {
        iv.hi.is_some_and(|hi| {
            good.quadratic(iv.lo).abs() <= PINCH_TOL && good.quadratic(hi).abs() <= PINCH_TOL
        })
    });
    let bad = PinchInput {
        n: 2,
        lambda: 0.7,
        big_lambda: 1.0,
    };
    let rejected = matches!(pinching_beta(&bad), Err(Error::Pinching(_)));
    let cli = staircase_bin()
        .args(["regularity", "pinching", "2", "0.7", "1.0"])
        .output()
        .unwrap();
    let cli_ok = cli.status.code() == Some(1)
        && String::from_utf8_lossy(&cli.stderr).contains("Lambda^2 (1 - 1/n) < lambda^2");

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bound_fail = 0;
    for _ in 0..100 {
        let sign = |r: &mut ChaCha8Rng| if r.gen_bool(0.5) { 1.0 } else { -1.0 };
        let sigma = [sign(&mut rng), sign(&mut rng)];
        let f = monotone_profile(&mut rng, sigma[0]);
        let g = monotone_profile(&mut rng, sigma[1]);
        let c = rng.gen_range(0.0..2.0);
        let lin = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let u = GridFn::sample(41, 41, [0.0, 0.0], [1.0, 1.0], |x, y| {
            f(x) + g(y) + c * f(x) * g(y) + lin[0] * x + lin[1] * y
        });
        let eps = rng.gen_range(0.06..0.2);
        let holds = discrete_lemma41(&u, sigma, [sigma[0] * lin[0], sigma[1] * lin[1]], eps)
            .is_ok_and(|r| r.holds);
        bound_fail += usize::from(!holds);
    }
    verdict(
        boot_ok && pinch_ok && rejected && cli_ok && bound_fail == 0,
        format!(
            "bootstrap {:?}, pinching endpoints {pinch_ok}, (2, 0.7, 1) rejected {rejected} (cli {cli_ok}), one-sided bound failures {bound_fail}/100",
            boot.exponents
        ),
    )
}

fn determinism() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["--p", "1.2", "--delta", "0.02"];
    let runs_ok = simulate_in(a.path(), &args).success() && simulate_in(b.path(), &args).success();
    let files = ["constants.json", "stages.csv", "summary.json"];
    let differing: Vec<&str> = files
        .into_iter()
        .filter(|f| std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok())
        .collect();
    verdict(
        runs_ok && differing.is_empty(),
        format!("runs ok {runs_ok}, differing files {differing:?}"),
    )
}

fn main() {
    let mut red = 0;
    let mut report = |n: u32, name: &str, limit: Option<u64>, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        let took = t.elapsed();
        let (time_ok, time) = match limit {
            Some(s) => within(Duration::from_secs(s), took),
            None => (true, format!("{:.2}s", took.as_secs_f64())),
        };
        let ok = v.ok && time_ok;
        red += usize::from(!ok);
        println!(
            "criterion {n:>2} {:<4} {name}: {} ({time})",
            if ok { "PASS" } else { "FAIL" },
            v.detail
        );
    };

    report(1, "limit identity", Some(1), &mut limit_identity);
    report(2, "staircase algebra", Some(5), &mut staircase_algebra);
    let mut consts = None;
    report(3, "bracket certification", Some(30), &mut || {
        let c = reference();
        let v = bracket_certification(&c);
        consts = Some(c);
        v
    });
    let c = consts.expect("reference constants");
    report(4, "schedule", Some(5), &mut || schedule(&c));

    let hc = high_contrast();
    let ref_run = run(&c, ParamPoint::center(), 40).unwrap();
    let hc_run = run(&hc, ParamPoint::center(), 40).unwrap();
    let runs: [Run; 2] = [("reference", &c, &ref_run), ("high contrast", &hc, &hc_run)];
    report(5, "mass-bound chain", None, &mut || mass_chain(&runs));
    report(6, "uniform S(p) bound", None, &mut || {
        per_config(&runs, sp_stability)
    });
    report(7, "energy divergence", None, &mut || {
        per_config(&runs, energy_divergence)
    });
    report(8, "realizer", Some(120), &mut || realizer(&c));
    report(9, "regularity", Some(10), &mut regularity);
    report(10, "determinism", None, &mut determinism);

    if red > 0 {
        println!("{red} criteria red");
        std::process::exit(1);
    }
    println!("all criteria green");
}
