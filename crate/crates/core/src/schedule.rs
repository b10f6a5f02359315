//! The gap sequence `δ_ℓ`, the interpolation schedule `t_ℓ` and the constants
//! `C_{r,p}`, `C̃`, `N`, together with a verifier for the schedule
//! inequalities.
//!
//! `1 − t_ℓ` underflows doubles after a dozen stages, so the schedule is held
//! as `ln(1 − t_ℓ)` and every comparison is made between logarithms.

use astro_float::{BigFloat, Consts, RoundingMode};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::ProfileConfig;
use crate::staircase::{
    envelope_constant, p_critical, select_i_t0prime, select_r_i0, select_t0_i1, CertOptions,
    DistanceCertificate, MarginReport, StairConfig,
};

/// Binary precision of the extended verification mode.
pub const EXT_PRECISION: usize = 256;

/// Number of indices past `I` covered by explicit envelope witnesses.
pub const ENVELOPE_SPAN: u32 = 40;

/// `max_{j ≥ 1} j r^{−p(j−1)}` and its maximiser.
///
/// Consecutive terms have ratio `(j+1)/j · r^{−p}`, which decreases in `j`;
/// the first `j` where it drops below 1 is the maximiser and every later
/// term is smaller.
pub fn compute_crp(r: f64, p: f64) -> (f64, u32) {
    debug_assert!(r > 1.0 && p >= 1.0);
    let term = |j: u32| j as f64 * r.powf(-p * (j - 1) as f64);
    let mut j = 1u32;
    while term(j + 1) > term(j) {
        j += 1;
    }
    (term(j), j)
}

/// `δ_ℓ = (1 + 1/ℓ²) δ`.
pub fn delta_seq(delta: f64, ell: u32) -> f64 {
    debug_assert!(ell >= 1);
    let l = ell as f64;
    delta * (1.0 + 1.0 / (l * l))
}

/// `δ_ℓ − δ_{ℓ+1} = δ (2ℓ + 1)/(ℓ²(ℓ + 1)²)`, without cancellation.
pub fn delta_drop(delta: f64, ell: u32) -> f64 {
    let l = ell as f64;
    delta * (2.0 * l + 1.0) / (l * l * (l + 1.0) * (l + 1.0))
}

/// `C̃ = max(1, sup_{ℓ≥1} (ℓ+1)² max{r^{−(p+δ_{ℓ+1})}, r^{−(p+δ_ℓ)}}^{ℓ+1})`
/// and the maximising `ℓ`.
///
/// Since `δ_{ℓ+1} < δ_ℓ` the inner maximum is `r^{−(p+δ_{ℓ+1})}`. Terms are
/// dominated by `m² r^{−pm}` (`m = ℓ + 1`), whose consecutive ratio
/// `((m+1)/m)² r^{−p}` is decreasing; the scan stops once that ratio is below
/// 1 and the majorant has fallen under the running maximum.
pub fn compute_ctilde(r: f64, p: f64, delta: f64) -> (f64, u32) {
    let ln_r = r.ln();
    let term = |ell: u32| {
        let m = (ell + 1) as f64;
        m * m * (-(p + delta_seq(delta, ell + 1)) * m * ln_r).exp()
    };
    let majorant = |ell: u32| {
        let m = (ell + 1) as f64;
        m * m * (-p * m * ln_r).exp()
    };
    let ratio = |ell: u32| {
        let m = (ell + 1) as f64;
        ((m + 1.0) / m).powi(2) * (-p * ln_r).exp()
    };
    let (mut best, mut arg) = (term(1), 1u32);
    let mut ell = 1u32;
    loop {
        ell += 1;
        let v = term(ell);
        if v > best {
            best = v;
            arg = ell;
        }
        if ratio(ell) < 1.0 && majorant(ell) < best {
            break;
        }
    }
    (best.max(1.0) * (1.0 + 1e-12), arg)
}

/// `ln(1 − t_ℓ)` at stage `ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TDeficit {
    pub ell: u32,
    pub log_deficit: f64,
}

impl TDeficit {
    pub fn deficit(&self) -> f64 {
        self.log_deficit.exp()
    }

    pub fn t(&self) -> f64 {
        -self.log_deficit.exp_m1()
    }
}

/// `ln(1 − t_ℓ) = −(N + I + 2p(ℓ+1)³) ln r − ln(ℓ + 1)`.
pub fn log_deficit(r: f64, p: f64, n: u32, i: u32, ell: u32) -> f64 {
    let m = (ell + 1) as f64;
    -((n as f64 + i as f64) + 2.0 * p * m * m * m) * r.ln() - m.ln()
}

/// Certified constants of the scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConstants {
    pub profile: ProfileConfig,
    pub p: f64,
    pub delta: f64,
    pub p_crit: f64,
    /// Whether `δ < (p_crit − p)/10`.
    pub delta_within_tenth: bool,
    pub r: f64,
    pub log_r_limit: f64,
    #[serde(rename = "I0")]
    pub i0: u32,
    #[serde(rename = "I1")]
    pub i1: u32,
    #[serde(rename = "T0")]
    pub t0: f64,
    /// `1 − T₀`.
    pub t0_deficit: f64,
    #[serde(rename = "T0prime")]
    pub t0prime: f64,
    /// `1 − T₀′`.
    pub t0prime_deficit: f64,
    #[serde(rename = "I")]
    pub i: u32,
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(rename = "Crp")]
    pub crp: f64,
    pub crp_argmax: u32,
    #[serde(rename = "Ctilde")]
    pub ctilde: f64,
    pub ctilde_argmax: u32,
    /// Constant of the exponential envelope `|X11|^p + |X22|^p ≤ C r^{pℓ}`.
    pub envelope_c: f64,
    pub margins: ConstantMargins,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantMargins {
    /// Bracket for `λ³_i` over `[I₀, I₀ + horizon]`.
    pub bracket: MarginReport,
    /// Bracket for `λ³_{i,t}`, `t ≥ T₀`, over `[I₁, I₁ + horizon]`.
    pub interp_bracket: MarginReport,
    pub distance: DistanceCertificate,
    /// `I ln r + ln(r^{2δ} − 1) ≥ 0`.
    pub i_bound: f64,
    /// `N ln r − ln(2 C̃ C_{r,p})`.
    pub n_bound: f64,
    /// `ln min(1/10, 1 − T₀, 1 − T₀′) − ln(1 − t₁)`.
    pub easy: f64,
}

impl ScheduleConstants {
    pub fn stair(&self) -> StairConfig {
        StairConfig {
            profile: self.profile,
            r: self.r,
            p: self.p,
            delta: self.delta,
        }
    }

    pub fn t_deficit(&self, ell: u32) -> TDeficit {
        t_seq(self, ell)
    }

    /// Deficit `1 − max(9/10, T₀, T₀′)` that `t₁` must undercut.
    pub fn easy_deficit(&self) -> f64 {
        0.1f64.min(self.t0_deficit).min(self.t0prime_deficit)
    }
}

pub fn t_seq(consts: &ScheduleConstants, ell: u32) -> TDeficit {
    TDeficit {
        ell,
        log_deficit: log_deficit(consts.r, consts.p, consts.n, consts.i, ell),
    }
}

/// Smallest `N` with `N ≥ log_r(2 C̃ C_{r,p})` and `1 − t₁ ≤ easy_deficit`.
pub fn choose_n(r: f64, p: f64, i: u32, crp: f64, ctilde: f64, easy_deficit: f64) -> u32 {
    let ok = |n: u32| {
        n as f64 * r.ln() >= (2.0 * ctilde * crp).ln()
            && log_deficit(r, p, n, i, 1) <= easy_deficit.ln()
    };
    let lb = ((2.0 * ctilde * crp).ln() / r.ln()).ceil().max(0.0);
    let eb = ((-easy_deficit.ln() - 2.0f64.ln()) / r.ln() - i as f64 - 16.0 * p)
        .ceil()
        .max(0.0);
    let mut n = lb.max(eb) as u32;
    while !ok(n) {
        n += 1;
    }
    while n > 0 && ok(n - 1) {
        n -= 1;
    }
    n
}

/// Runs the whole selection chain `r, I₀ → T₀, I₁ → I, T₀′ → C_{r,p}, C̃, N`.
pub fn compute_constants(
    profile: &ProfileConfig,
    p: f64,
    delta: f64,
    opts: &CertOptions,
) -> Result<ScheduleConstants> {
    let rsel = select_r_i0(profile, p, delta, opts)?;
    let cfg = StairConfig::new(*profile, rsel.r, p, delta)?;
    let tsel = select_t0_i1(&cfg, &rsel, opts)?;
    let isel = select_i_t0prime(&cfg, tsel.t0, tsel.i1)?;
    let (crp, crp_argmax) = compute_crp(cfg.r, p);
    let (ctilde, ctilde_argmax) = compute_ctilde(cfg.r, p, delta);
    let t0prime_deficit = 1.0 - isel.t0prime;
    let easy_deficit = 0.1f64.min(tsel.d0).min(t0prime_deficit);
    let n = choose_n(cfg.r, p, isel.i, crp, ctilde, easy_deficit);
    let envelope_c = envelope_constant(&cfg, isel.i, ENVELOPE_SPAN)?;
    let ln_r = cfg.r.ln();
    let margins = ConstantMargins {
        bracket: rsel.margin,
        interp_bracket: tsel.margin,
        distance: isel.certificate,
        i_bound: isel.i as f64 * ln_r + (2.0 * delta * ln_r).exp_m1().ln(),
        n_bound: n as f64 * ln_r - (2.0 * ctilde * crp).ln(),
        easy: easy_deficit.ln() - log_deficit(cfg.r, p, n, isel.i, 1),
    };
    Ok(ScheduleConstants {
        profile: *profile,
        p,
        delta,
        p_crit: p_critical(profile.lambda, profile.big_lambda),
        delta_within_tenth: cfg.delta_within_tenth(),
        r: cfg.r,
        log_r_limit: rsel.log_r_limit,
        i0: rsel.i0,
        i1: tsel.i1,
        t0: tsel.t0,
        t0_deficit: tsel.d0,
        t0prime: isel.t0prime,
        t0prime_deficit,
        i: isel.i,
        n,
        crp,
        crp_argmax,
        ctilde,
        ctilde_argmax,
        envelope_c,
        margins,
    })
}

/// Arithmetic used by [`verify_schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Doubles with `expm1`/`ln_1p` identities and relative slack.
    #[default]
    Double,
    /// 256-bit binary floating point.
    Extended,
}

/// Smallest log-space margins found by [`verify_schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub precision: Precision,
    pub ell_max: u32,
    pub pairs_checked: u64,
    /// `min (ln RHS − ln LHS)` over the increment inequalities.
    pub increment_margin: f64,
    /// `min (−(I + 2ℓ) ln r − ln(1 − t_ℓ))`.
    pub lower_bound_margin: f64,
    pub easy_margin: f64,
    pub n_bound_margin: f64,
}

fn violation(ell: u32, j: u32, reason: String) -> Error {
    Error::Schedule { ell, j, reason }
}

/// 256-bit helpers.
struct Ext {
    cc: Consts,
}

const RM: RoundingMode = RoundingMode::ToEven;

impl Ext {
    fn new() -> Result<Self> {
        Consts::new()
            .map(|cc| Self { cc })
            .map_err(|e| Error::Internal(format!("extended precision setup failed: {e:?}")))
    }
    fn f(&self, x: f64) -> BigFloat {
        BigFloat::from_f64(x, EXT_PRECISION)
    }
    fn u(&self, x: u64) -> BigFloat {
        BigFloat::from_u64(x, EXT_PRECISION)
    }
    fn ln(&mut self, x: &BigFloat) -> BigFloat {
        x.ln(EXT_PRECISION, RM, &mut self.cc)
    }
    fn exp(&mut self, x: &BigFloat) -> BigFloat {
        x.exp(EXT_PRECISION, RM, &mut self.cc)
    }
    fn f64_of(&mut self, x: &BigFloat) -> f64 {
        x.format(astro_float::Radix::Dec, RM, &mut self.cc)
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(f64::NAN)
    }
}

fn add(a: &BigFloat, b: &BigFloat) -> BigFloat {
    a.add(b, EXT_PRECISION, RM)
}
fn sub(a: &BigFloat, b: &BigFloat) -> BigFloat {
    a.sub(b, EXT_PRECISION, RM)
}
fn mul(a: &BigFloat, b: &BigFloat) -> BigFloat {
    a.mul(b, EXT_PRECISION, RM)
}
fn div(a: &BigFloat, b: &BigFloat) -> BigFloat {
    a.div(b, EXT_PRECISION, RM)
}

/// `ln(1 − t_ℓ)` in 256-bit arithmetic, from the exact binary values of `r`, `p`.
fn log_deficit_ext(
    ext: &mut Ext,
    ln_r: &BigFloat,
    p: &BigFloat,
    n: u32,
    i: u32,
    ell: u32,
) -> BigFloat {
    let m = (ell + 1) as u64;
    let m3 = ext.u(m * m * m);
    let two_p_m3 = mul(&mul(&ext.u(2), p), &m3);
    let e = add(&ext.u(n as u64 + i as u64), &two_p_m3);
    let lm = ext.ln(&ext.u(m));
    sub(&mul(&e, ln_r).neg(), &lm)
}

/// `t_ℓ / t_j` in 256-bit arithmetic.
pub fn t_ratio_extended(consts: &ScheduleConstants, ell: u32, j: u32) -> Result<BigFloat> {
    let mut ext = Ext::new()?;
    let ln_r = ext.ln(&ext.f(consts.r));
    let p = ext.f(consts.p);
    let one = ext.u(1);
    let dl = log_deficit_ext(&mut ext, &ln_r, &p, consts.n, consts.i, ell);
    let dj = log_deficit_ext(&mut ext, &ln_r, &p, consts.n, consts.i, j);
    let tl = sub(&one, &ext.exp(&dl));
    let tj = sub(&one, &ext.exp(&dj));
    Ok(div(&tl, &tj))
}

/// `t_ℓ / t_j − 1` evaluated in 256-bit arithmetic, rounded once to a double.
pub fn t_ratio_excess_extended(consts: &ScheduleConstants, ell: u32, j: u32) -> Result<f64> {
    let mut ext = Ext::new()?;
    let ratio = t_ratio_extended(consts, ell, j)?;
    let one = ext.u(1);
    Ok(ext.f64_of(&sub(&ratio, &one)))
}

/// `t_ℓ / t_j − 1 = (e^{d_j} − e^{d_ℓ})/(1 − e^{d_j})` in doubles, `d = ln(1 − t)`.
pub fn t_ratio_excess(consts: &ScheduleConstants, ell: u32, j: u32) -> f64 {
    let dl = t_seq(consts, ell).log_deficit;
    let dj = t_seq(consts, j).log_deficit;
    // e^{d_j} − e^{d_ℓ} = e^{d_j}(1 − e^{d_ℓ − d_j})
    -dj.exp() * (dl - dj).exp_m1() / -dj.exp_m1()
}

/// Verifies for `1 ≤ ℓ ≤ ell_max`:
///
/// * `2 C_{r,p}(t_{ℓ+1} − t_ℓ) ≤ r^{−(p+δ_{ℓ+1})j} − r^{−(p+δ_ℓ)j}` for `1 ≤ j ≤ ℓ + 1`,
/// * `1 − r^{−(I+2ℓ)} ≤ t_ℓ`,
///
/// plus `t₁ ≥ max(9/10, T₀, T₀′)` and `N ≥ log_r(2 C̃ C_{r,p})`.
///
/// Both sides are compared as logarithms. The first violation is returned
/// as an error carrying its `(ℓ, j)` witness (`ℓ = 0` for the stage-free
/// conditions).
pub fn verify_schedule(
    consts: &ScheduleConstants,
    ell_max: u32,
    precision: Precision,
) -> Result<ScheduleReport> {
    match precision {
        Precision::Double => verify_double(consts, ell_max),
        Precision::Extended => verify_extended(consts, ell_max),
    }
}

/// Relative slack on log-space comparisons in double precision.
const LOG_SLACK: f64 = 1e-12;

fn check_margin(margin: f64, scale: f64, slack: f64) -> bool {
    margin.is_finite() && margin > slack * (scale.abs() + 1.0)
}

fn verify_double(c: &ScheduleConstants, ell_max: u32) -> Result<ScheduleReport> {
    let ln_r = c.r.ln();
    let nb = c.n as f64 * ln_r - (2.0 * c.ctilde * c.crp).ln();
    if nb < 0.0 {
        return Err(violation(
            0,
            0,
            format!("N = {} is below log_r(2 C~ C_rp)", c.n),
        ));
    }
    let d1 = t_seq(c, 1).log_deficit;
    let easy = c.easy_deficit().ln() - d1;
    if easy < 0.0 {
        return Err(violation(
            1,
            0,
            format!(
                "t_1 deficit e^{d1} exceeds the required {}",
                c.easy_deficit()
            ),
        ));
    }
    let mut inc_min = f64::INFINITY;
    let mut low_min = f64::INFINITY;
    let mut pairs = 0u64;
    for ell in 1..=ell_max {
        let dl = t_seq(c, ell).log_deficit;
        let low = -((c.i + 2 * ell) as f64) * ln_r - dl;
        if !check_margin(low, dl, LOG_SLACK) {
            return Err(violation(
                ell,
                0,
                format!("t_l lower bound fails, log margin {low:e}"),
            ));
        }
        low_min = low_min.min(low);
        let m = (ell + 1) as f64;
        let step = -(2.0 * c.p * (3.0 * m * m + 3.0 * m + 1.0)) * ln_r - ((m + 1.0) / m).ln();
        let log_lhs = (2.0 * c.crp).ln() + dl + (-step.exp_m1()).ln();
        let d_next = delta_seq(c.delta, ell + 1);
        let drop = delta_drop(c.delta, ell);
        for j in 1..=ell + 1 {
            let jf = j as f64;
            let log_rhs = -(c.p + d_next) * jf * ln_r + (-(-drop * jf * ln_r).exp_m1()).ln();
            let margin = log_rhs - log_lhs;
            pairs += 1;
            if !check_margin(margin, log_lhs.abs() + log_rhs.abs(), LOG_SLACK) {
                return Err(violation(
                    ell,
                    j,
                    format!("increment bound fails: ln lhs = {log_lhs}, ln rhs = {log_rhs}"),
                ));
            }
            inc_min = inc_min.min(margin);
        }
    }
    Ok(ScheduleReport {
        precision: Precision::Double,
        ell_max,
        pairs_checked: pairs,
        increment_margin: inc_min,
        lower_bound_margin: low_min,
        easy_margin: easy,
        n_bound_margin: nb,
    })
}

fn verify_extended(c: &ScheduleConstants, ell_max: u32) -> Result<ScheduleReport> {
    let mut ext = Ext::new()?;
    let zero = ext.u(0);
    let one = ext.u(1);
    let ln_r = ext.ln(&ext.f(c.r));
    let p = ext.f(c.p);
    let positive = |x: &BigFloat| x.cmp(&zero).is_some_and(|s| s > 0);

    let ln_2cc = ext.ln(&mul(&mul(&ext.u(2), &ext.f(c.ctilde)), &ext.f(c.crp)));
    let nb = sub(&mul(&ext.u(c.n as u64), &ln_r), &ln_2cc);
    if nb.cmp(&zero).is_some_and(|s| s < 0) {
        return Err(violation(
            0,
            0,
            format!("N = {} is below log_r(2 C~ C_rp)", c.n),
        ));
    }
    let d1 = log_deficit_ext(&mut ext, &ln_r, &p, c.n, c.i, 1);
    let easy = sub(&ext.ln(&ext.f(c.easy_deficit())), &d1);
    if easy.cmp(&zero).is_some_and(|s| s < 0) {
        return Err(violation(1, 0, "t_1 is below max(9/10, T0, T0')".into()));
    }
    let ln_2crp = ext.ln(&mul(&ext.u(2), &ext.f(c.crp)));
    let delta = ext.f(c.delta);
    let mut inc_min = f64::INFINITY;
    let mut low_min = f64::INFINITY;
    let mut pairs = 0u64;
    let mut dl = d1;
    for ell in 1..=ell_max {
        let d_next_stage = log_deficit_ext(&mut ext, &ln_r, &p, c.n, c.i, ell + 1);
        let low = sub(&mul(&ext.u((c.i + 2 * ell) as u64), &ln_r).neg(), &dl);
        if !positive(&low) {
            return Err(violation(ell, 0, "t_l lower bound fails".into()));
        }
        low_min = low_min.min(ext.f64_of(&low));
        // ln(2C) + d_ℓ + ln(1 − e^{d_{ℓ+1} − d_ℓ})
        let gap = sub(&one, &ext.exp(&sub(&d_next_stage, &dl)));
        let log_lhs = add(&add(&ln_2crp, &dl), &ext.ln(&gap));
        // δ_{ℓ+1} and δ_ℓ − δ_{ℓ+1} from their rational forms.
        let l = ell as u64;
        let dn = add(&delta, &div(&delta, &ext.u((l + 1) * (l + 1))));
        let drop = div(
            &mul(&delta, &ext.u(2 * l + 1)),
            &ext.u(l * l * (l + 1) * (l + 1)),
        );
        let p_dn = add(&p, &dn);
        for j in 1..=ell + 1 {
            let jl = mul(&ext.u(j as u64), &ln_r);
            let tail = sub(&one, &ext.exp(&mul(&drop, &jl).neg()));
            let log_rhs = add(&mul(&p_dn, &jl).neg(), &ext.ln(&tail));
            let margin = sub(&log_rhs, &log_lhs);
            pairs += 1;
            if !positive(&margin) {
                return Err(violation(ell, j, "increment bound fails".into()));
            }
            inc_min = inc_min.min(ext.f64_of(&margin));
        }
        dl = d_next_stage;
    }
    Ok(ScheduleReport {
        precision: Precision::Extended,
        ell_max,
        pairs_checked: pairs,
        increment_margin: inc_min,
        lower_bound_margin: low_min,
        easy_margin: ext.f64_of(&easy),
        n_bound_margin: ext.f64_of(&nb),
    })
}
