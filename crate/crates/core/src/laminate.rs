//! Laminates of finite order: finite atomic probability measures on
//! symmetric matrices, each carrying the certificate of elementary splittings
//! that produced it from a Dirac mass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::SymMatrix2;
use crate::staircase::{
    family_matrix, interp_coeffs_deficit, interp_map_deficit, split_coeffs, Family, Interp,
    LabelKind, ParamPoint, StairConfig,
};
use crate::sum::ksum;

/// Atoms closer than this (entrywise, relative to `max(1, |X|)`) are merged.
pub const MERGE_TOL: f64 = 1e-9;
/// Barycenter tolerance of a split, relative to `max(1, |X|)`.
pub const BARYCENTER_TOL: f64 = 1e-10;
/// Rank-one tolerance: `σ_min(B2 − B1) ≤ RANK_TOL·σ_max(B2 − B1)`.
pub const RANK_TOL: f64 = 1e-10;
/// Tolerance on the total weight.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Family label of an atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomTag {
    pub kind: LabelKind,
    pub index: u32,
    /// `1 − t` for interpolation atoms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deficit: Option<f64>,
}

impl AtomTag {
    pub fn new(kind: LabelKind, index: u32) -> Self {
        Self {
            kind,
            index,
            deficit: None,
        }
    }

    pub fn with_deficit(kind: LabelKind, index: u32, d: f64) -> Self {
        Self {
            kind,
            index,
            deficit: Some(d),
        }
    }
}

impl std::fmt::Display for AtomTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}({})", self.kind, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub weight: f64,
    pub x: SymMatrix2,
    pub tag: AtomTag,
}

/// Replace `fraction` of the weight of atom `atom_index` by the pair
/// `(1 − s)·δ_{B1} + s·δ_{B2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitStep {
    pub atom_index: usize,
    pub b1: SymMatrix2,
    pub b2: SymMatrix2,
    pub s: f64,
    pub fraction: f64,
    pub tags: [AtomTag; 2],
}

impl SplitStep {
    pub fn full(
        atom_index: usize,
        b1: SymMatrix2,
        b2: SymMatrix2,
        s: f64,
        tags: [AtomTag; 2],
    ) -> Self {
        Self {
            atom_index,
            b1,
            b2,
            s,
            fraction: 1.0,
            tags,
        }
    }

    /// The matrix this step splits.
    pub fn barycenter(&self) -> SymMatrix2 {
        self.b1 + self.s * (self.b2 - self.b1)
    }

    fn check_rank_one(&self) -> Result<()> {
        let (lo, hi) = (self.b2 - self.b1).singular_values();
        if lo > RANK_TOL * hi {
            return Err(Error::InvalidSplit(format!(
                "B2 - B1 is not rank-one: singular values {lo:e}, {hi:e}"
            )));
        }
        Ok(())
    }

    fn check_barycenter(&self, x: &SymMatrix2) -> Result<()> {
        let err = self.barycenter().dist_max(x);
        if err > BARYCENTER_TOL * x.max_abs().max(1.0) {
            return Err(Error::InvalidSplit(format!(
                "(1-s)B1 + sB2 misses the split atom by {err:e}"
            )));
        }
        Ok(())
    }

    fn check_params(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.s) || !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::InvalidSplit(format!(
                "s={} and fraction={} must lie in [0, 1]",
                self.s, self.fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Laminate {
    pub atoms: Vec<Atom>,
    pub certificate: Vec<SplitStep>,
}

fn same_matrix(a: &SymMatrix2, b: &SymMatrix2) -> bool {
    a.dist_max(b) <= MERGE_TOL * a.max_abs().max(b.max_abs()).max(1.0)
}

impl Laminate {
    pub fn dirac(x: SymMatrix2, tag: AtomTag) -> Self {
        Self {
            atoms: vec![Atom {
                weight: 1.0,
                x,
                tag,
            }],
            certificate: Vec::new(),
        }
    }

    pub fn total_weight(&self) -> f64 {
        ksum(self.atoms.iter().map(|a| a.weight))
    }

    pub fn find(&self, x: &SymMatrix2) -> Option<usize> {
        self.atoms.iter().position(|a| same_matrix(&a.x, x))
    }

    /// Total weight of atoms whose tag satisfies `pred`.
    pub fn mass_where(&self, pred: impl Fn(&AtomTag) -> bool) -> f64 {
        ksum(self.atoms.iter().filter(|a| pred(&a.tag)).map(|a| a.weight))
    }

    fn deposit(&mut self, x: SymMatrix2, weight: f64, tag: AtomTag) {
        if weight <= 0.0 {
            return;
        }
        match self.find(&x) {
            Some(k) => self.atoms[k].weight += weight,
            None => self.atoms.push(Atom { weight, x, tag }),
        }
    }

    /// Applies a step without recording it.
    fn apply(&mut self, step: &SplitStep) -> Result<()> {
        step.check_params()?;
        let atom = *self.atoms.get(step.atom_index).ok_or_else(|| {
            Error::InvalidSplit(format!(
                "atom index {} out of range ({} atoms)",
                step.atom_index,
                self.atoms.len()
            ))
        })?;
        step.check_rank_one()?;
        step.check_barycenter(&atom.x)?;
        if step.fraction == 0.0 {
            return Ok(());
        }
        let moved = step.fraction * atom.weight;
        if step.fraction == 1.0 {
            self.atoms.remove(step.atom_index);
        } else {
            self.atoms[step.atom_index].weight = atom.weight - moved;
        }
        self.deposit(step.b1, (1.0 - step.s) * moved, step.tags[0]);
        self.deposit(step.b2, step.s * moved, step.tags[1]);
        Ok(())
    }
}

/// `Σ weight·X`.
pub fn barycenter(nu: &Laminate) -> SymMatrix2 {
    SymMatrix2::new(
        ksum(nu.atoms.iter().map(|a| a.weight * a.x.a11)),
        ksum(nu.atoms.iter().map(|a| a.weight * a.x.a12)),
        ksum(nu.atoms.iter().map(|a| a.weight * a.x.a22)),
    )
}

/// Elementary splitting: checks the step, applies it and records it.
pub fn elementary_split(nu: &Laminate, step: SplitStep) -> Result<Laminate> {
    let mut out = nu.clone();
    out.apply(&step)?;
    out.certificate.push(step);
    Ok(out)
}

fn split_in_place(nu: &mut Laminate, step: SplitStep) -> Result<()> {
    nu.apply(&step)?;
    nu.certificate.push(step);
    Ok(())
}

fn index_of(nu: &Laminate, x: &SymMatrix2) -> Result<usize> {
    nu.find(x)
        .ok_or_else(|| Error::Internal("atom to split is missing from the laminate".into()))
}

/// `μ_i = λ¹δ_{B_i} + λ²δ_{D_i} + λ³δ_{A_{i+1}}`, barycenter `A_i`.
pub fn build_mu_i(cfg: &StairConfig, i: u32, p: &ParamPoint) -> Result<Laminate> {
    let a = family_matrix(cfg, Family::A, i, p);
    let b = family_matrix(cfg, Family::B, i, p);
    let c = family_matrix(cfg, Family::C, i, p);
    let d = family_matrix(cfg, Family::D, i, p);
    let e = family_matrix(cfg, Family::E, i, p);
    let co = split_coeffs(cfg, i, p);
    let mut nu = Laminate::dirac(a, AtomTag::new(LabelKind::A, i));
    split_in_place(
        &mut nu,
        SplitStep::full(
            0,
            b,
            c,
            co.f,
            [AtomTag::new(LabelKind::B, i), AtomTag::new(LabelKind::C, i)],
        ),
    )?;
    let k = index_of(&nu, &c)?;
    split_in_place(
        &mut nu,
        SplitStep::full(
            k,
            d,
            e,
            co.l3 / co.f,
            [
                AtomTag::new(LabelKind::D, i),
                AtomTag::new(LabelKind::A, i + 1),
            ],
        ),
    )?;
    Ok(nu)
}

/// Splits the atom at `A_k` into `Φ¹_{k,t}`, `C_k`, then `C_k` into `Φ²_{k,t}`, `A_{k+1}`.
fn interp_chain(
    nu: &mut Laminate,
    cfg: &StairConfig,
    from: u32,
    to: u32,
    d: f64,
    p: &ParamPoint,
) -> Result<()> {
    for k in from..to {
        let a = family_matrix(cfg, Family::A, k, p);
        let c = family_matrix(cfg, Family::C, k, p);
        let an = family_matrix(cfg, Family::A, k + 1, p);
        let f1 = interp_map_deficit(cfg, Interp::One, k, d, p);
        let f2 = interp_map_deficit(cfg, Interp::Two, k, d, p);
        let co = interp_coeffs_deficit(cfg, k, d, p);
        let ia = index_of(nu, &a)?;
        split_in_place(
            nu,
            SplitStep::full(
                ia,
                f1,
                c,
                co.f,
                [
                    AtomTag::with_deficit(LabelKind::W1, k, d),
                    AtomTag::new(LabelKind::C, k),
                ],
            ),
        )?;
        let ic = index_of(nu, &c)?;
        split_in_place(
            nu,
            SplitStep::full(
                ic,
                f2,
                an,
                co.l3 / co.f,
                [
                    AtomTag::with_deficit(LabelKind::W2, k, d),
                    AtomTag::new(LabelKind::A, k + 1),
                ],
            ),
        )?;
    }
    Ok(())
}

/// Interpolation laminate `μ^{(i,j)}_t` with `t = 1 − d`.
///
/// Atoms `Φ¹_{k,t}`, `Φ²_{k,t}` for `k ∈ [i, j)` weighted by
/// `(∏_{m<k} λ³_{m,t})·λ^{1,2}_{k,t}`, and `A_j` weighted by `∏ λ³_{m,t}`.
pub fn build_mu_interp_deficit(
    cfg: &StairConfig,
    i: u32,
    j: u32,
    d: f64,
    p: &ParamPoint,
) -> Result<Laminate> {
    if !(i >= 1 && i < j) {
        return Err(Error::Input(format!("need 1 <= i < j, got i={i}, j={j}")));
    }
    let mut nu = Laminate::dirac(
        family_matrix(cfg, Family::A, i, p),
        AtomTag::new(LabelKind::A, i),
    );
    interp_chain(&mut nu, cfg, i, j, d, p)?;
    Ok(nu)
}

pub fn build_mu_interp(
    cfg: &StairConfig,
    i: u32,
    j: u32,
    t: f64,
    p: &ParamPoint,
) -> Result<Laminate> {
    build_mu_interp_deficit(cfg, i, j, 1.0 - t, p)
}

/// Correction laminate `(t/t′)δ_{Φ_{i,t′}} + (1 − t/t′)μ_{t′}` with barycenter
/// `Φ_{i,t}`; `d = 1 − t`, `d′ = 1 − t′`.
///
/// For [`Interp::One`] the remainder is `μ^{(i,j)}_{t′}`, for [`Interp::Two`]
/// it is `μ^{(i+1,j)}_{t′}`.
pub fn build_corr_deficit(
    cfg: &StairConfig,
    which: Interp,
    i: u32,
    j: u32,
    d: f64,
    d_next: f64,
    p: &ParamPoint,
) -> Result<Laminate> {
    if !(i >= 1 && i < j) {
        return Err(Error::Input(format!("need 1 <= i < j, got i={i}, j={j}")));
    }
    if !(d_next < d || (d_next == 0.0 && d == 0.0)) || !(0.0..1.0).contains(&d) {
        return Err(Error::Input(format!(
            "need 0 < t < t' < 1, got deficits {d:e}, {d_next:e}"
        )));
    }
    let x = interp_map_deficit(cfg, which, i, d, p);
    let x_next = interp_map_deficit(cfg, which, i, d_next, p);
    // 1 − t/t′ = (d − d′)/(1 − d′)
    let s = (d - d_next) / (1.0 - d_next);
    let (kind, anchor) = match which {
        Interp::One => (LabelKind::W1, i),
        Interp::Two => (LabelKind::W2, i + 1),
    };
    let a = family_matrix(cfg, Family::A, anchor, p);
    let mut nu = Laminate::dirac(x, AtomTag::with_deficit(kind, i, d));
    split_in_place(
        &mut nu,
        SplitStep::full(
            0,
            x_next,
            a,
            s,
            [
                AtomTag::with_deficit(kind, i, d_next),
                AtomTag::new(LabelKind::A, anchor),
            ],
        ),
    )?;
    if s > 0.0 && anchor < j {
        interp_chain(&mut nu, cfg, anchor, j, d_next, p)?;
    }
    Ok(nu)
}

#[allow(clippy::too_many_arguments)]
pub fn build_corr(
    cfg: &StairConfig,
    which: Interp,
    i: u32,
    j: u32,
    t: f64,
    t_next: f64,
    p: &ParamPoint,
) -> Result<Laminate> {
    build_corr_deficit(cfg, which, i, j, 1.0 - t, 1.0 - t_next, p)
}

/// Outcome of [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub steps_replayed: usize,
    /// `"simplex"`, `"rank"`, `"barycenter"`, `"index"`, `"parameters"` or `"atoms"`.
    pub failed_check: Option<String>,
    pub message: Option<String>,
}

impl ValidationReport {
    fn fail(check: &str, steps: usize, msg: String) -> Self {
        Self {
            ok: false,
            steps_replayed: steps,
            failed_check: Some(check.into()),
            message: Some(msg),
        }
    }
}

/// Replays the certificate from the root Dirac mass and compares the result
/// with the stored atoms.
pub fn validate(nu: &Laminate) -> ValidationReport {
    if nu.atoms.is_empty() {
        return ValidationReport::fail("simplex", 0, "laminate has no atoms".into());
    }
    if let Some(a) = nu
        .atoms
        .iter()
        .find(|a| !(a.weight > 0.0 && a.weight <= 1.0))
    {
        return ValidationReport::fail(
            "simplex",
            0,
            format!("atom weight {} outside (0, 1]", a.weight),
        );
    }
    let total = nu.total_weight();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return ValidationReport::fail("simplex", 0, format!("weights sum to {total}"));
    }
    let mut replay = match nu.certificate.first() {
        None => {
            if nu.atoms.len() != 1 {
                return ValidationReport::fail(
                    "atoms",
                    0,
                    "empty certificate but more than one atom".into(),
                );
            }
            return ValidationReport {
                ok: true,
                steps_replayed: 0,
                failed_check: None,
                message: None,
            };
        }
        Some(first) => Laminate::dirac(first.barycenter(), first.tags[0]),
    };
    for (k, step) in nu.certificate.iter().enumerate() {
        if let Err(e) = replay.apply(step) {
            let msg = e.to_string();
            let check = if step.atom_index >= replay.atoms.len() {
                "index"
            } else if msg.contains("rank-one") {
                "rank"
            } else if msg.contains("must lie in") {
                "parameters"
            } else {
                "barycenter"
            };
            return ValidationReport::fail(check, k, format!("step {k}: {msg}"));
        }
    }
    let steps = nu.certificate.len();
    if replay.atoms.len() != nu.atoms.len() {
        return ValidationReport::fail(
            "atoms",
            steps,
            format!(
                "replay yields {} atoms, laminate stores {}",
                replay.atoms.len(),
                nu.atoms.len()
            ),
        );
    }
    for (k, (a, b)) in replay.atoms.iter().zip(&nu.atoms).enumerate() {
        if !same_matrix(&a.x, &b.x) || (a.weight - b.weight).abs() > SIMPLEX_TOL {
            return ValidationReport::fail(
                "atoms",
                steps,
                format!("atom {k} differs from its replay"),
            );
        }
    }
    ValidationReport {
        ok: true,
        steps_replayed: steps,
        failed_check: None,
        message: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::ProfileConfig;

    fn cfg() -> StairConfig {
        let prof = ProfileConfig::new(1.0, 4.0, 1.0).unwrap();
        StairConfig::new(prof, 1.2, 1.2, 0.02).unwrap()
    }

    #[test]
    fn dirac_and_symmetric_pair() {
        let a = SymMatrix2::new(1.0, 0.5, -2.0);
        let nu = Laminate::dirac(a, AtomTag::new(LabelKind::A, 1));
        assert_eq!(barycenter(&nu), a);
        let r = SymMatrix2::diag(0.0, 3.0);
        let step = SplitStep::full(
            0,
            a - r,
            a + r,
            0.5,
            [AtomTag::new(LabelKind::B, 1), AtomTag::new(LabelKind::C, 1)],
        );
        let two = elementary_split(&nu, step).unwrap();
        assert_eq!(two.atoms.len(), 2);
        assert!(barycenter(&two).dist_max(&a) < 1e-15);
    }

    #[test]
    fn zero_fraction_is_a_no_op() {
        let a = SymMatrix2::new(1.0, 0.0, 1.0);
        let nu = Laminate::dirac(a, AtomTag::new(LabelKind::A, 1));
        let r = SymMatrix2::diag(1.0, 0.0);
        let mut step = SplitStep::full(
            0,
            a - r,
            a + r,
            0.5,
            [AtomTag::new(LabelKind::B, 1), AtomTag::new(LabelKind::C, 1)],
        );
        step.fraction = 0.0;
        let out = elementary_split(&nu, step).unwrap();
        assert_eq!(out.atoms, nu.atoms);
    }

    #[test]
    fn mu_i_weights_match_coefficients() {
        let c = cfg();
        let p = ParamPoint::new(1.3, 1.7, 0.2).unwrap();
        let nu = build_mu_i(&c, 25, &p).unwrap();
        let co = split_coeffs(&c, 25, &p);
        assert_eq!(nu.atoms.len(), 3);
        let w: Vec<f64> = nu.atoms.iter().map(|a| a.weight).collect();
        assert!((w[0] - co.l1).abs() < 1e-14);
        assert!((w[1] - co.l2).abs() < 1e-14);
        assert!((w[2] - co.l3).abs() < 1e-14);
        let a = family_matrix(&c, Family::A, 25, &p);
        assert!(barycenter(&nu).dist_max(&a) < 1e-10 * a.max_abs());
        assert!(validate(&nu).ok);
    }

    #[test]
    fn corrupted_laminates_fail_validation() {
        let c = cfg();
        let nu = build_mu_i(&c, 25, &ParamPoint::center()).unwrap();
        let mut bad = nu.clone();
        bad.atoms[0].weight *= 1.01;
        assert_eq!(validate(&bad).failed_check.as_deref(), Some("simplex"));
        let mut bad = nu.clone();
        bad.certificate[0].b1.a11 += 0.5;
        assert_eq!(validate(&bad).failed_check.as_deref(), Some("rank"));
    }
}
