//! Parametrised matrix families `A_i, B_i, C_i, D_i, E_i`, their splitting
//! coefficients, the interpolation maps `Φ¹, Φ²` and the certified selection
//! of the scheme constants `r, I₀, T₀, I₁, I, T₀′`.
//!
//! Interpolation parameters `t` close to 1 are carried as deficits `d = 1 − t`
//! throughout; the `*_deficit` variants are the primary entry points and the
//! `t`-based functions are thin wrappers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::profile::{phi_d, phi_d_inv, ProfileConfig, SymMatrix2};

/// A point `P = (a₀⁺, a₀⁻, b)` of the open box `(1,2)×(1,2)×(−1,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub a0p: f64,
    pub a0m: f64,
    pub b: f64,
}

impl ParamPoint {
    pub fn new(a0p: f64, a0m: f64, b: f64) -> Result<Self> {
        let p = Self { a0p, a0m, b };
        if !p.in_box() {
            return Err(Error::Config(format!(
                "parameter point ({a0p}, {a0m}, {b}) outside (1,2)x(1,2)x(-1,1)"
            )));
        }
        Ok(p)
    }

    pub fn in_box(&self) -> bool {
        self.a0p > 1.0 && self.a0p < 2.0 && self.a0m > 1.0 && self.a0m < 2.0 && self.b.abs() < 1.0
    }

    pub fn center() -> Self {
        Self {
            a0p: 1.5,
            a0m: 1.5,
            b: 0.0,
        }
    }

    pub fn dist_max(&self, o: &Self) -> f64 {
        (self.a0p - o.a0p)
            .abs()
            .max((self.a0m - o.a0m).abs())
            .max((self.b - o.b).abs())
    }
}

/// Scheme configuration: profile, geometric ratio `r`, target exponent `p`
/// and the gap `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StairConfig {
    pub profile: ProfileConfig,
    pub r: f64,
    pub p: f64,
    pub delta: f64,
}

impl StairConfig {
    /// Validates `1 < r < 2`, `1 < p < p_crit`, `δ > 0` and `p + 2δ < p_crit`.
    pub fn new(profile: ProfileConfig, r: f64, p: f64, delta: f64) -> Result<Self> {
        profile.validate()?;
        validate_exponents(&profile, p, delta)?;
        if !(r > 1.0 && r < 2.0) {
            return Err(Error::Config(format!("need 1 < r < 2, got r={r}")));
        }
        Ok(Self {
            profile,
            r,
            p,
            delta,
        })
    }

    pub fn p_crit(&self) -> f64 {
        p_critical(self.profile.lambda, self.profile.big_lambda)
    }

    /// The ratio `c = √(λ/(rΛ))` of the two geometric sequences.
    pub fn c(&self) -> f64 {
        (self.profile.lambda / (self.r * self.profile.big_lambda)).sqrt()
    }

    /// Whether `δ < (p_crit − p)/10`, the stricter standing assumption.
    pub fn delta_within_tenth(&self) -> bool {
        self.delta < (self.p_crit() - self.p) / 10.0
    }

    /// The bracket `(r^{−2}, r^{−(p+2δ)})` for `λ³`.
    pub fn bracket(&self) -> (f64, f64) {
        (self.r.powi(-2), self.r.powf(-(self.p + 2.0 * self.delta)))
    }

    fn bracket_interval(&self) -> (Interval, Interval) {
        let (lo, hi) = self.bracket();
        (Interval::approx(lo), Interval::approx(hi))
    }
}

pub(crate) fn validate_exponents(profile: &ProfileConfig, p: f64, delta: f64) -> Result<()> {
    let pc = p_critical(profile.lambda, profile.big_lambda);
    if !(p > 1.0 && p < pc) {
        return Err(Error::Config(format!(
            "need 1 < p < p_crit = {pc}, got p={p}"
        )));
    }
    if !(delta > 0.0 && p + 2.0 * delta < pc) {
        return Err(Error::Config(format!(
            "need delta > 0 and p + 2 delta < p_crit = {pc}, got delta={delta}"
        )));
    }
    Ok(())
}

/// `p_{λ,Λ} = 2√Λ/(√λ + √Λ)`.
pub fn p_critical(lambda: f64, big_lambda: f64) -> f64 {
    2.0 * big_lambda.sqrt() / (lambda.sqrt() + big_lambda.sqrt())
}

/// `L(r) = ((λ√r + √(Λλ) r)/(λ√r + √(Λλ)))²`; `1/L(r)` is the limit of `λ³_i`.
pub fn limit_ratio(profile: &ProfileConfig, r: f64) -> f64 {
    let (l, u) = (profile.lambda, profile.big_lambda);
    let s = (u * l).sqrt();
    let q = (l * r.sqrt() + s * r) / (l * r.sqrt() + s);
    q * q
}

/// `log_r L(r)`, which tends to `p_crit` as `r → 1`.
pub fn log_r_limit(profile: &ProfileConfig, r: f64) -> f64 {
    let (l, u) = (profile.lambda, profile.big_lambda);
    let s = (u * l).sqrt();
    let sr = r.sqrt();
    // ln q with q − 1 = s(r − 1)/(λ√r + s), stable as r → 1.
    let ln_q = (s * (r - 1.0) / (l * sr + s)).ln_1p();
    2.0 * ln_q / r.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

/// `a_k⁺ = a₀⁺ + r^k`, `a_k⁻ = a₀⁻ + c·r^k` for `k ≥ 1`.
pub fn a_seq(cfg: &StairConfig, sign: Sign, k: u32, p: &ParamPoint) -> Result<f64> {
    if k == 0 {
        return Err(Error::Input(
            "sequence index must be at least 1; a0 comes from P".into(),
        ));
    }
    Ok(match sign {
        Sign::Plus => a_plus(cfg, k, p),
        Sign::Minus => a_minus(cfg, k, p),
    })
}

fn rk(cfg: &StairConfig, k: u32) -> f64 {
    cfg.r.powi(k as i32)
}

fn a_plus(cfg: &StairConfig, k: u32, p: &ParamPoint) -> f64 {
    p.a0p + rk(cfg, k)
}

fn a_minus(cfg: &StairConfig, k: u32, p: &ParamPoint) -> f64 {
    p.a0m + cfg.c() * rk(cfg, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    A,
    B,
    C,
    D,
    E,
}

/// The family matrices at index `i ≥ 1`.
///
/// * `A_i = (a_i⁺, b; b, −φ′(−a_i⁻))`
/// * `B_i = (a_i⁺, b; b, −φ′(a_i⁺))`
/// * `C_i = (a_i⁺, b; b, −φ′(−a_{i+1}⁻))`
/// * `D_i = (−a_{i+1}⁻, b; b, −φ′(−a_{i+1}⁻))`
/// * `E_i = A_{i+1}`
pub fn family_matrix(cfg: &StairConfig, kind: Family, i: u32, p: &ParamPoint) -> SymMatrix2 {
    debug_assert!(i >= 1);
    let prof = &cfg.profile;
    match kind {
        Family::A => SymMatrix2::new(a_plus(cfg, i, p), p.b, -phi_d(prof, -a_minus(cfg, i, p))),
        Family::B => {
            let ap = a_plus(cfg, i, p);
            SymMatrix2::new(ap, p.b, -phi_d(prof, ap))
        }
        Family::C => SymMatrix2::new(
            a_plus(cfg, i, p),
            p.b,
            -phi_d(prof, -a_minus(cfg, i + 1, p)),
        ),
        Family::D => {
            let am = a_minus(cfg, i + 1, p);
            SymMatrix2::new(-am, p.b, -phi_d(prof, -am))
        }
        Family::E => family_matrix(cfg, Family::A, i + 1, p),
    }
}

/// Splitting coefficients with `A_i = λ¹B_i + λ²D_i + λ³A_{i+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCoeffs {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    /// `1 − λ¹`, computed directly rather than by subtraction.
    pub f: f64,
}

impl SplitCoeffs {
    pub fn sum(&self) -> f64 {
        self.l1 + self.l2 + self.l3
    }
}

pub fn split_coeffs(cfg: &StairConfig, i: u32, p: &ParamPoint) -> SplitCoeffs {
    let prof = &cfg.profile;
    let x = phi_d(prof, a_plus(cfg, i, p));
    let yi = phi_d(prof, -a_minus(cfg, i, p));
    let yn = phi_d(prof, -a_minus(cfg, i + 1, p));
    let den = x - yn;
    let l1 = (yi - yn) / den;
    let f = (x - yi) / den;
    let amn = a_minus(cfg, i + 1, p);
    let apn = a_plus(cfg, i + 1, p);
    let api = a_plus(cfg, i, p);
    let l2 = f * (apn - api) / (amn + apn);
    let l3 = f * (amn + api) / (amn + apn);
    SplitCoeffs { l1, l2, l3, f }
}

/// Which interpolation map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Interp {
    One,
    Two,
}

/// `Φ¹_{i,t} = tB_i + (1−t)A_i`, `Φ²_{i,t} = tD_i + (1−t)A_{i+1}` with `d = 1 − t`.
pub fn interp_map_deficit(
    cfg: &StairConfig,
    which: Interp,
    i: u32,
    d: f64,
    p: &ParamPoint,
) -> SymMatrix2 {
    match which {
        Interp::One => {
            let b = family_matrix(cfg, Family::B, i, p);
            let a = family_matrix(cfg, Family::A, i, p);
            SymMatrix2::new(b.a11, p.b, b.a22 + d * (a.a22 - b.a22))
        }
        Interp::Two => {
            let dm = family_matrix(cfg, Family::D, i, p);
            let a = family_matrix(cfg, Family::A, i + 1, p);
            SymMatrix2::new(dm.a11 + d * (a.a11 - dm.a11), p.b, a.a22)
        }
    }
}

pub fn interp_map(cfg: &StairConfig, which: Interp, i: u32, t: f64, p: &ParamPoint) -> SymMatrix2 {
    interp_map_deficit(cfg, which, i, 1.0 - t, p)
}

/// Coefficients of the one-step interpolation laminate with
/// `A_i = λ¹_t Φ¹_{i,t} + λ²_t Φ²_{i,t} + λ³_t A_{i+1}`.
pub fn interp_coeffs_deficit(cfg: &StairConfig, i: u32, d: f64, p: &ParamPoint) -> SplitCoeffs {
    let c = split_coeffs(cfg, i, p);
    let den = 1.0 - d * c.f;
    let l1 = c.l1 / den;
    let l2 = c.l2 / den;
    let l3 = (c.l3 - d * (c.l3 + c.l2)) / den;
    SplitCoeffs {
        l1,
        l2,
        l3,
        f: (c.f * (1.0 - d)) / den,
    }
}

pub fn interp_coeffs(cfg: &StairConfig, i: u32, t: f64, p: &ParamPoint) -> SplitCoeffs {
    interp_coeffs_deficit(cfg, i, 1.0 - t, p)
}

/// Families that can be inverted back to their parameter point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvertKind {
    A,
    W1,
    W2,
}

fn not_in_image(family: &'static str, index: u32, reason: String) -> Error {
    Error::NotInImage {
        family,
        index,
        reason,
    }
}

fn checked_point(family: &'static str, i: u32, p: ParamPoint) -> Result<ParamPoint> {
    if p.in_box() {
        Ok(p)
    } else {
        Err(not_in_image(
            family,
            i,
            format!(
                "recovered P = ({}, {}, {}) outside the parameter box",
                p.a0p, p.a0m, p.b
            ),
        ))
    }
}

/// Recovers `P` from `X = A_i(P)`, `Φ¹_{i,t}(P)` or `Φ²_{i,t}(P)` (with `d = 1 − t`).
pub fn invert_family_deficit(
    cfg: &StairConfig,
    kind: InvertKind,
    i: u32,
    d: Option<f64>,
    x: &SymMatrix2,
) -> Result<ParamPoint> {
    let prof = &cfg.profile;
    let c = cfg.c();
    let need_d = |name: &'static str| -> Result<f64> {
        match d {
            Some(d) if d > 0.0 && d < 1.0 => Ok(d),
            _ => Err(not_in_image(
                name,
                i,
                "interpolation parameter must satisfy 0 < t < 1".into(),
            )),
        }
    };
    match kind {
        InvertKind::A => {
            let a0p = x.a11 - rk(cfg, i);
            let am = -phi_d_inv(prof, -x.a22)?;
            let a0m = am - c * rk(cfg, i);
            checked_point("A", i, ParamPoint { a0p, a0m, b: x.a12 })
        }
        InvertKind::W1 => {
            let d = need_d("W1")?;
            let a0p = x.a11 - rk(cfg, i);
            let y = -(x.a22 + (1.0 - d) * phi_d(prof, x.a11)) / d;
            let am = -phi_d_inv(prof, y)?;
            let a0m = am - c * rk(cfg, i);
            checked_point("W1", i, ParamPoint { a0p, a0m, b: x.a12 })
        }
        InvertKind::W2 => {
            let d = need_d("W2")?;
            let am = -phi_d_inv(prof, -x.a22)?;
            let a0m = am - c * rk(cfg, i + 1);
            let ap = (x.a11 + (1.0 - d) * am) / d;
            let a0p = ap - rk(cfg, i + 1);
            checked_point("W2", i, ParamPoint { a0p, a0m, b: x.a12 })
        }
    }
}

pub fn invert_family(
    cfg: &StairConfig,
    kind: InvertKind,
    i: u32,
    t: Option<f64>,
    x: &SymMatrix2,
) -> Result<ParamPoint> {
    invert_family_deficit(cfg, kind, i, t.map(|t| 1.0 - t), x)
}

/// Kinds of labelled matrices appearing in laminates and ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LabelKind {
    A,
    B,
    C,
    D,
    E,
    W1,
    W2,
    V,
    U1,
    U2,
}

/// A matrix together with the family label that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub kind: LabelKind,
    pub index: u32,
    /// `1 − t` for the interpolation families, `None` otherwise.
    pub deficit: Option<f64>,
    pub x: SymMatrix2,
    pub p: ParamPoint,
}

impl LabeledMatrix {
    pub fn new(
        cfg: &StairConfig,
        kind: LabelKind,
        index: u32,
        deficit: Option<f64>,
        p: ParamPoint,
    ) -> Self {
        let x = label_matrix(cfg, kind, index, deficit, &p);
        Self {
            kind,
            index,
            deficit,
            x,
            p,
        }
    }

    /// Whether `x` matches the family map within `1e−12` relative to its size.
    pub fn is_consistent(&self, cfg: &StairConfig) -> bool {
        let y = label_matrix(cfg, self.kind, self.index, self.deficit, &self.p);
        self.x.dist_max(&y) <= 1e-12 * y.max_abs().max(1.0)
    }
}

/// Evaluates the family map behind a label.
pub fn label_matrix(
    cfg: &StairConfig,
    kind: LabelKind,
    index: u32,
    deficit: Option<f64>,
    p: &ParamPoint,
) -> SymMatrix2 {
    let d = deficit.unwrap_or(0.0);
    match kind {
        LabelKind::A | LabelKind::V => family_matrix(cfg, Family::A, index, p),
        LabelKind::B | LabelKind::U1 => family_matrix(cfg, Family::B, index, p),
        LabelKind::C => family_matrix(cfg, Family::C, index, p),
        LabelKind::D | LabelKind::U2 => family_matrix(cfg, Family::D, index, p),
        LabelKind::E => family_matrix(cfg, Family::E, index, p),
        LabelKind::W1 => interp_map_deficit(cfg, Interp::One, index, d, p),
        LabelKind::W2 => interp_map_deficit(cfg, Interp::Two, index, d, p),
    }
}

// ---------------------------------------------------------------------------
// Certification
// ---------------------------------------------------------------------------

/// Budgets and knobs for the certified constant selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertOptions {
    /// Upper cap for `r`.
    pub r_max: f64,
    /// Number of indices certified beyond the selected constant.
    pub horizon: u32,
    /// Largest index tried before giving up.
    pub max_index: u32,
    /// Sub-box budget per index.
    pub max_boxes: usize,
}

impl Default for CertOptions {
    fn default() -> Self {
        Self {
            r_max: 1.2,
            horizon: 50,
            max_index: 2000,
            max_boxes: 1 << 16,
        }
    }
}

/// Worst-case slack of a certified bracket over an index window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub first_index: u32,
    pub last_index: u32,
    /// `min (inf λ³ − r^{−2})` over the window.
    pub lower_margin: f64,
    /// `min (r^{−(p+2δ)} − sup λ³)` over the window.
    pub upper_margin: f64,
    pub boxes: usize,
}

impl MarginReport {
    pub fn min_margin(&self) -> f64 {
        self.lower_margin.min(self.upper_margin)
    }
}

/// Box in `(a₀⁺, a₀⁻)` plus the deficit range `d = 1 − t`; `b` never enters
/// the coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
struct CertBox {
    a0p: Interval,
    a0m: Interval,
    d: Interval,
}

impl CertBox {
    fn closure(d_max: f64) -> Self {
        Self {
            a0p: Interval::new(1.0, 2.0),
            a0m: Interval::new(1.0, 2.0),
            d: Interval::new(0.0, d_max),
        }
    }

    fn center(&self) -> (ParamPoint, f64) {
        (
            ParamPoint {
                a0p: self.a0p.mid(),
                a0m: self.a0m.mid(),
                b: 0.0,
            },
            self.d.mid(),
        )
    }

    fn split(&self) -> (Self, Self) {
        // Relative widths: the deficit range is tiny compared to the box.
        let wp = self.a0p.width();
        let wm = self.a0m.width();
        let wd = if self.d.hi > 0.0 {
            self.d.width() / self.d.hi.max(1e-300) * 0.5
        } else {
            0.0
        };
        if wd > wp && wd > wm {
            let (a, b) = self.d.split();
            (Self { d: a, ..*self }, Self { d: b, ..*self })
        } else if wp >= wm {
            let (a, b) = self.a0p.split();
            (Self { a0p: a, ..*self }, Self { a0p: b, ..*self })
        } else {
            let (a, b) = self.a0m.split();
            (Self { a0m: a, ..*self }, Self { a0m: b, ..*self })
        }
    }
}

fn phi_d_iv(prof: &ProfileConfig, x: Interval) -> Interval {
    x.map_increasing(|a| phi_d(prof, a))
}

/// Interval extension of `λ³_{i,t}` over a box (with `t = 1 − d`).
fn lambda3_t_interval(cfg: &StairConfig, i: u32, bx: &CertBox) -> Interval {
    let prof = &cfg.profile;
    let c = Interval::approx(cfg.c());
    let ri = Interval::approx(rk(cfg, i));
    let rn = Interval::approx(rk(cfg, i + 1));
    let api = bx.a0p + ri;
    let apn = bx.a0p + rn;
    let ami = bx.a0m + c * ri;
    let amn = bx.a0m + c * rn;
    let x = phi_d_iv(prof, api);
    let yi = phi_d_iv(prof, -ami);
    let yn = phi_d_iv(prof, -amn);
    let f = (x - yi) / (x - yn);
    let ratio = (amn + api) / (amn + apn);
    if bx.d.hi == 0.0 {
        return f * ratio;
    }
    let one = Interval::point(1.0);
    // λ³_t = F(R − d)/(1 − dF)
    f * (ratio - bx.d) / (one - bx.d * f)
}

enum CertOutcome {
    Certified {
        lower: f64,
        upper: f64,
        boxes: usize,
    },
    Refuted,
    Exhausted,
}

fn certify_index(cfg: &StairConfig, i: u32, d_max: f64, max_boxes: usize) -> CertOutcome {
    let (blo, bhi) = cfg.bracket_interval();
    let (point_lo, point_hi) = cfg.bracket();
    let mut stack = vec![CertBox::closure(d_max)];
    let mut lower = f64::INFINITY;
    let mut upper = f64::INFINITY;
    let mut boxes = 0usize;
    while let Some(bx) = stack.pop() {
        boxes += 1;
        let v = lambda3_t_interval(cfg, i, &bx);
        if v.lo > blo.hi && v.hi < bhi.lo {
            lower = lower.min(v.lo - blo.hi);
            upper = upper.min(bhi.lo - v.hi);
            continue;
        }
        let (pc, dc) = bx.center();
        let c = interp_coeffs_deficit(cfg, i, dc, &pc).l3;
        if !(c > point_lo && c < point_hi) {
            return CertOutcome::Refuted;
        }
        if boxes >= max_boxes {
            return CertOutcome::Exhausted;
        }
        let (a, b) = bx.split();
        stack.push(b);
        stack.push(a);
    }
    CertOutcome::Certified {
        lower,
        upper,
        boxes,
    }
}

/// Certifies the bracket over `[first, first + horizon]` for `d ∈ [0, d_max]`.
fn certify_window(
    cfg: &StairConfig,
    first: u32,
    horizon: u32,
    d_max: f64,
    max_boxes: usize,
) -> std::result::Result<MarginReport, u32> {
    let mut rep = MarginReport {
        first_index: first,
        last_index: first + horizon,
        lower_margin: f64::INFINITY,
        upper_margin: f64::INFINITY,
        boxes: 0,
    };
    for i in first..=first + horizon {
        match certify_index(cfg, i, d_max, max_boxes) {
            CertOutcome::Certified {
                lower,
                upper,
                boxes,
            } => {
                rep.lower_margin = rep.lower_margin.min(lower);
                rep.upper_margin = rep.upper_margin.min(upper);
                rep.boxes += boxes;
            }
            _ => return Err(i),
        }
    }
    Ok(rep)
}

/// Result of [`select_r_i0`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RSelection {
    pub r: f64,
    pub i0: u32,
    /// `log_r L(r)` at the selected `r`.
    pub log_r_limit: f64,
    pub margin: MarginReport,
}

/// Chooses `r` with `2 > log_r L(r) > p + 2δ` and certifies the bracket
/// `r^{−2} < λ³_i(P) < r^{−(p+2δ)}` for all `P` in the closed box and all
/// `i ∈ [I₀, I₀ + horizon]`.
///
/// `r` is the largest value in `(1, r_max]` keeping `log_r L(r)` above the
/// midpoint of `(p + 2δ, p_crit)`, located by bisection from `r` near 1.
pub fn select_r_i0(
    profile: &ProfileConfig,
    p: f64,
    delta: f64,
    opts: &CertOptions,
) -> Result<RSelection> {
    profile.validate()?;
    validate_exponents(profile, p, delta)?;
    if !(opts.r_max > 1.0 && opts.r_max < 2.0) {
        return Err(Error::Config(format!(
            "r_max must lie in (1,2), got {}",
            opts.r_max
        )));
    }
    let pc = p_critical(profile.lambda, profile.big_lambda);
    let target = p + 2.0 * delta + 0.5 * (pc - p - 2.0 * delta);
    let g = |r: f64| log_r_limit(profile, r);
    let r = if g(opts.r_max) >= target {
        opts.r_max
    } else {
        let (mut lo, mut hi) = (1.0 + 1e-6, opts.r_max);
        if g(lo) < target {
            return Err(Error::Config(format!(
                "log_r L(r) stays below the target {target} near r = 1"
            )));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let gr = g(r);
    if !(gr < 2.0 && gr > p + 2.0 * delta) {
        return Err(Error::Internal(format!(
            "selected r={r} misses the bracket"
        )));
    }
    let cfg = StairConfig {
        profile: *profile,
        r,
        p,
        delta,
    };
    let mut start = 1u32;
    let mut best: Option<(u32, u32)> = None;
    while start + opts.horizon <= opts.max_index {
        match certify_window(&cfg, start, opts.horizon, 0.0, opts.max_boxes) {
            Ok(margin) => {
                return Ok(RSelection {
                    r,
                    i0: start,
                    log_r_limit: gr,
                    margin,
                })
            }
            Err(failed) => {
                let run = failed - start;
                if best.is_none_or(|(_, b)| run > b) {
                    best = Some((start, run));
                }
                start = failed + 1;
            }
        }
    }
    let (s, run) = best.unwrap_or((0, 0));
    Err(Error::Budget(format!(
        "no certified window of {} indices below index {} at r={r}; best run starts at {s} with {run} certified indices",
        opts.horizon + 1,
        opts.max_index
    )))
}

/// Result of [`select_t0_i1`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TSelection {
    pub t0: f64,
    /// `1 − T₀`.
    pub d0: f64,
    pub i1: u32,
    pub margin: MarginReport,
}

/// Chooses `T₀` and `I₁ ≥ max(3, I₀)` so that the bracket holds for `λ³_{i,t}`
/// for all `t ∈ [T₀, 1]`, certified over `[I₁, I₁ + horizon]`.
pub fn select_t0_i1(cfg: &StairConfig, sel: &RSelection, opts: &CertOptions) -> Result<TSelection> {
    let start = sel.i0.max(3);
    for i1 in start..start.saturating_add(opts.max_index) {
        let Ok(base) = certify_window(cfg, i1, opts.horizon, 0.0, opts.max_boxes) else {
            continue;
        };
        // λ³_t ≥ λ³ − d/(1 − d), so a quarter of the lower margin is a safe start.
        let mut d0 = (0.25 * base.lower_margin).min(0.05);
        for _ in 0..8 {
            if let Ok(margin) = certify_window(cfg, i1, opts.horizon, d0, opts.max_boxes) {
                return Ok(TSelection {
                    t0: 1.0 - d0,
                    d0,
                    i1,
                    margin,
                });
            }
            d0 *= 0.5;
        }
    }
    Err(Error::Budget(format!(
        "could not certify the interpolation bracket from index {start}"
    )))
}

/// Certified separation of the sets `𝒱` from `𝒲¹`, `𝒲²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceCertificate {
    /// Certified lower bound on the distance.
    pub value: f64,
    /// `inf a22` over `∪_j 𝒱_{I+j}` minus `sup a22` over `∪_{j,t} 𝒲¹_{I+j,t}`.
    pub a22_gap_v_w1: f64,
    /// `inf a11` over `∪_j 𝒱_{I+j}` minus `sup a11` over `∪_{j,t} 𝒲²_{I+j,t}`.
    pub a11_gap_v_w2: f64,
    /// Indices `[I, I + cutoff]` are bounded by explicit boxes.
    pub cutoff: u32,
    /// Upper bound on `d(sup 𝒲¹ a22)/d(r^k)`; negative makes the tail decrease.
    pub tail_slope_w1: f64,
    /// Upper bound on `d(sup 𝒲² a11)/d(r^k)`.
    pub tail_slope_w2: f64,
}

/// Result of [`select_i_t0prime`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ISelection {
    pub i: u32,
    pub t0prime: f64,
    pub certificate: DistanceCertificate,
}

/// Smallest `I` with `r^I ≥ 1/(r^{2δ} − 1)`.
pub fn min_i_for_delta(r: f64, delta: f64) -> u32 {
    let q = 1.0 / (2.0 * delta * r.ln()).exp_m1();
    let mut i = (q.ln() / r.ln()).ceil().max(0.0) as u32;
    while r.powi(i as i32) < q {
        i += 1;
    }
    while i > 0 && r.powi(i as i32 - 1) >= q {
        i -= 1;
    }
    i
}

fn distance_certificate(cfg: &StairConfig, i: u32, t0p: f64, cutoff: u32) -> DistanceCertificate {
    let prof = &cfg.profile;
    let c = Interval::approx(cfg.c());
    let one = Interval::point(1.0);
    let two = Interval::point(2.0);
    let tp = Interval::point(t0p);
    let dp = Interval::point(1.0 - t0p);
    let r_i = Interval::approx(rk(cfg, i));
    // 𝒱 floors are attained at the first index: a11 ≥ 1 + r^I, a22 = −φ′(−a⁻) ≥ −φ′(−(1 + c r^I)).
    let v_a11 = one + r_i;
    let v_a22 = -phi_d_iv(prof, -(one + c * r_i));
    let mut w1_sup = f64::NEG_INFINITY;
    let mut w2_sup = f64::NEG_INFINITY;
    for k in i..=i + cutoff {
        let r_k = Interval::approx(rk(cfg, k));
        let r_n = Interval::approx(rk(cfg, k + 1));
        // 𝒲¹ a22 is affine in t; its maximum over [T₀′, 1] sits at T₀′.
        let w1 = tp * -phi_d_iv(prof, one + r_k) + dp * -phi_d_iv(prof, -(two + c * r_k));
        w1_sup = w1_sup.max(w1.hi);
        // 𝒲² a11 = −t a⁻_{k+1} + (1 − t) a⁺_{k+1}; maximum at T₀′.
        let w2 = -(tp * (one + c * r_n)) + dp * (two + r_n);
        w2_sup = w2_sup.max(w2.hi);
    }
    let (l, u) = (prof.lambda, prof.big_lambda);
    let cc = cfg.c();
    let tail_slope_w1 = -t0p * l + (1.0 - t0p) * cc * u;
    let tail_slope_w2 = -t0p * cc + (1.0 - t0p);
    let g1 = v_a22.lo - w1_sup;
    let g2 = v_a11.lo - w2_sup;
    let value = if tail_slope_w1 < 0.0 && tail_slope_w2 < 0.0 {
        g1.min(g2)
    } else {
        f64::NEG_INFINITY
    };
    DistanceCertificate {
        value,
        a22_gap_v_w1: g1,
        a11_gap_v_w2: g2,
        cutoff,
        tail_slope_w1,
        tail_slope_w2,
    }
}

/// Chooses `I ≥ I₁` with `r^I ≥ 1/(r^{2δ} − 1)` and `T₀′ ∈ [T₀, 1)` such that
/// the `𝒱` sets stay at distance more than 1 from the `𝒲` sets.
///
/// `𝒱` is separated from `𝒲¹` by the `a22` coordinate and from `𝒲²` by the
/// `a11` coordinate. Indices up to the cutoff are bounded by interval boxes;
/// beyond it both suprema are non-increasing in `r^k` because the tail slopes
/// are negative.
pub fn select_i_t0prime(cfg: &StairConfig, t0: f64, i1: u32) -> Result<ISelection> {
    const CUTOFF: u32 = 50;
    let (l, u) = (cfg.profile.lambda, cfg.profile.big_lambda);
    let c = cfg.c();
    let tau = (c * u / (l + c * u)).max(1.0 / (1.0 + c));
    let first = i1.max(min_i_for_delta(cfg.r, cfg.delta));
    for i in first..first + 200 {
        let mut t0p = t0.max(1.0 - 0.5 * (1.0 - tau));
        for _ in 0..40 {
            let cert = distance_certificate(cfg, i, t0p, CUTOFF);
            if cert.value > 1.0 {
                return Ok(ISelection {
                    i,
                    t0prime: t0p,
                    certificate: cert,
                });
            }
            t0p = 1.0 - 0.5 * (1.0 - t0p);
        }
    }
    Err(Error::Budget(
        "no (I, T0') pair separates the V sets from the W sets".into(),
    ))
}

/// Set families bounded by the exponential envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvelopeLabel {
    U1,
    U2,
    V,
    W1,
    W2,
}

impl EnvelopeLabel {
    pub const ALL: [EnvelopeLabel; 5] = [
        EnvelopeLabel::U1,
        EnvelopeLabel::U2,
        EnvelopeLabel::V,
        EnvelopeLabel::W1,
        EnvelopeLabel::W2,
    ];
}

/// Coordinate suprema `(sup |X11|, sup |X22|)` over the closure of a set at
/// index `ℓ`, every `t ∈ [0, 1]` included for the interpolation families.
pub fn coordinate_envelope(cfg: &StairConfig, label: EnvelopeLabel, ell: u32) -> (f64, f64) {
    let prof = &cfg.profile;
    let c = Interval::approx(cfg.c());
    let two = Interval::point(2.0);
    let r_l = Interval::approx(rk(cfg, ell));
    let r_n = Interval::approx(rk(cfg, ell + 1));
    let ap = two + r_l;
    let am = two + c * r_l;
    let amn = two + c * r_n;
    let apn = two + r_n;
    let up = |x: Interval| x.hi;
    match label {
        EnvelopeLabel::V => (up(ap), up(-phi_d_iv(prof, -am))),
        EnvelopeLabel::U1 => (up(ap), up(phi_d_iv(prof, ap))),
        EnvelopeLabel::U2 => (up(amn), up(-phi_d_iv(prof, -amn))),
        EnvelopeLabel::W1 => (up(ap), up(phi_d_iv(prof, ap)).max(up(-phi_d_iv(prof, -am)))),
        EnvelopeLabel::W2 => (up(amn).max(up(apn)), up(-phi_d_iv(prof, -amn))),
    }
}

/// Returns the smallest `C` with `sup |X11|^p + sup |X22|^p ≤ C r^{pℓ}` on the
/// closure of the set, and whether `|X12| < 1` holds on the set itself.
pub fn envelope_check(cfg: &StairConfig, label: EnvelopeLabel, ell: u32) -> (f64, bool) {
    let (s11, s22) = coordinate_envelope(cfg, label, ell);
    let p = cfg.p;
    let w = (s11.powf(p) + s22.powf(p)) / cfg.r.powf(p * ell as f64);
    // b ranges over the open interval (−1, 1) in every family.
    (w * (1.0 + 1e-12), w.is_finite())
}

/// A single constant `C` valid for every label and every `ℓ ≥ first`.
///
/// Witnesses are computed on `[first, first + span]`; beyond the span the
/// majorant `(2 + r^{ℓ+1})^p + (Λ(2 + c r^{ℓ+1}))^p` over `r^{pℓ}` is
/// non-increasing in `ℓ` and its value at the end of the span is included.
pub fn envelope_constant(cfg: &StairConfig, first: u32, span: u32) -> Result<f64> {
    let mut c_max: f64 = 0.0;
    for ell in first..=first + span {
        for label in EnvelopeLabel::ALL {
            let (w, ok) = envelope_check(cfg, label, ell);
            if !ok {
                return Err(Error::Internal(format!(
                    "non-finite envelope at label {label:?}, index {ell}"
                )));
            }
            c_max = c_max.max(w);
        }
    }
    let end = first + span + 1;
    let rn = cfg.r.powi(end as i32 + 1);
    let p = cfg.p;
    let maj = ((2.0 + rn).powf(p) + (cfg.profile.big_lambda * (2.0 + cfg.c() * rn)).powf(p))
        / cfg.r.powf(p * end as f64);
    Ok(c_max.max(maj) * (1.0 + 1e-9))
}
