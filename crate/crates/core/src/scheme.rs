//! The iteration executed on gradient distributions: every stage replaces
//! each labelled cell by the atoms of its interpolation or correction
//! laminate, with masses multiplied through exactly.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laminate::{build_corr_deficit, build_mu_interp_deficit, Laminate};
use crate::profile::SymMatrix2;
use crate::schedule::{t_seq, ScheduleConstants};
use crate::staircase::{
    family_matrix, invert_family_deficit, label_matrix, Family, Interp, InvertKind, LabelKind,
    ParamPoint,
};
use crate::sum::{ksum, KahanSum};

/// Cells with equal label and matrices closer than this (relative) merge.
const MERGE_TOL: f64 = 1e-9;
/// Relative tolerance of the label/matrix consistency check.
const LABEL_TOL: f64 = 1e-10;
/// Tolerance on total mass.
const MASS_TOL: f64 = 1e-12;
/// Inversions of interpolation cells are checked only for deficits above this.
const INVERT_MIN_DEFICIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellClass {
    /// `W1`, `W2` or `V`.
    pub kind: LabelKind,
    pub index: u32,
    /// `1 − t_ℓ` for interpolation cells.
    pub deficit: Option<f64>,
    pub x: SymMatrix2,
    pub p: ParamPoint,
    pub mass: f64,
}

impl CellClass {
    fn order(&self, o: &Self) -> Ordering {
        self.kind
            .cmp(&o.kind)
            .then(self.index.cmp(&o.index))
            .then_with(|| {
                self.x
                    .key()
                    .iter()
                    .zip(o.x.key().iter())
                    .map(|(a, b)| a.total_cmp(b))
                    .find(|c| c.is_ne())
                    .unwrap_or(Ordering::Equal)
            })
    }

    fn mergeable(&self, o: &Self) -> bool {
        self.kind == o.kind
            && self.index == o.index
            && self.x.dist_max(&o.x) <= MERGE_TOL * self.x.max_abs().max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEnsemble {
    pub stage: u32,
    pub cells: Vec<CellClass>,
}

impl CellEnsemble {
    pub fn total_mass(&self) -> f64 {
        ksum(self.cells.iter().map(|c| c.mass))
    }

    pub fn mass_where(&self, pred: impl Fn(&CellClass) -> bool) -> f64 {
        ksum(self.cells.iter().filter(|c| pred(c)).map(|c| c.mass))
    }
}

/// Deficit `1 − t_ℓ` in doubles; zero once it underflows.
fn deficit(consts: &ScheduleConstants, ell: u32) -> f64 {
    t_seq(consts, ell).deficit()
}

/// `δ_{A_I(P₀)}`: one `V(I)` cell at stage 0.
pub fn init(consts: &ScheduleConstants, p0: ParamPoint) -> Result<CellEnsemble> {
    if !p0.in_box() {
        return Err(Error::Config(format!(
            "P0 = ({}, {}, {}) lies outside the parameter box",
            p0.a0p, p0.a0m, p0.b
        )));
    }
    let cfg = consts.stair();
    Ok(CellEnsemble {
        stage: 0,
        cells: vec![CellClass {
            kind: LabelKind::V,
            index: consts.i,
            deficit: None,
            x: family_matrix(&cfg, Family::A, consts.i, &p0),
            p: p0,
            mass: 1.0,
        }],
    })
}

fn corrupted(cell: &CellClass, reason: String) -> Error {
    Error::CorruptedState(format!("{:?}({}) cell: {reason}", cell.kind, cell.index))
}

/// Re-derives `P` from the cell matrix when the inversion is well conditioned.
fn check_inversion(consts: &ScheduleConstants, cell: &CellClass) -> Result<bool> {
    let cfg = consts.stair();
    let (kind, d) = match (cell.kind, cell.deficit) {
        (LabelKind::V, _) => (InvertKind::A, None),
        (LabelKind::W1, Some(d)) if d >= INVERT_MIN_DEFICIT => (InvertKind::W1, Some(d)),
        (LabelKind::W2, Some(d)) if d >= INVERT_MIN_DEFICIT => (InvertKind::W2, Some(d)),
        _ => return Ok(false),
    };
    let q = invert_family_deficit(&cfg, kind, cell.index, d, &cell.x)
        .map_err(|e| corrupted(cell, e.to_string()))?;
    let tol = 1e-9 * cell.x.max_abs().max(1.0);
    if q.dist_max(&cell.p) > tol {
        return Err(corrupted(
            cell,
            format!("inversion drifts by {:e}", q.dist_max(&cell.p)),
        ));
    }
    Ok(true)
}

/// The laminate that replaces a cell at the transition `ℓ → ℓ + 1`.
pub fn cell_laminate(consts: &ScheduleConstants, cell: &CellClass, stage: u32) -> Result<Laminate> {
    let cfg = consts.stair();
    let target = consts.i + stage + 1;
    let d_next = deficit(consts, stage + 1);
    match cell.kind {
        LabelKind::V => build_mu_interp_deficit(&cfg, cell.index, target, d_next, &cell.p),
        LabelKind::W1 | LabelKind::W2 => {
            let d = cell
                .deficit
                .ok_or_else(|| corrupted(cell, "interpolation cell without deficit".into()))?;
            if d_next > d {
                return Err(Error::Schedule {
                    ell: stage,
                    j: cell.index - consts.i,
                    reason: format!("t_(l+1) < t_l: deficits {d:e} -> {d_next:e}"),
                });
            }
            let which = if cell.kind == LabelKind::W1 {
                Interp::One
            } else {
                Interp::Two
            };
            build_corr_deficit(&cfg, which, cell.index, target, d, d_next, &cell.p)
        }
        _ => Err(corrupted(cell, "unexpected label in ensemble".into())),
    }
}

/// One stage: every cell is replaced by the atoms of its laminate, child mass
/// equal to parent mass times atom weight; equal children merge.
pub fn step(ens: &CellEnsemble, consts: &ScheduleConstants) -> Result<CellEnsemble> {
    let stage = ens.stage;
    let d_next = deficit(consts, stage + 1);
    let mut children = Vec::with_capacity(ens.cells.len() * 3);
    for cell in &ens.cells {
        let nu = cell_laminate(consts, cell, stage)?;
        for atom in &nu.atoms {
            let kind = match atom.tag.kind {
                LabelKind::A => LabelKind::V,
                k @ (LabelKind::W1 | LabelKind::W2) => k,
                other => {
                    return Err(Error::Internal(format!(
                        "laminate produced an unexpected {other:?} atom"
                    )))
                }
            };
            let child = CellClass {
                kind,
                index: atom.tag.index,
                deficit: (kind != LabelKind::V).then_some(d_next),
                x: atom.x,
                p: cell.p,
                mass: cell.mass * atom.weight,
            };
            if child.mass > 0.0 {
                children.push(child);
            }
        }
    }
    children.sort_by(|a, b| a.order(b));
    let mut cells: Vec<CellClass> = Vec::with_capacity(children.len());
    let mut acc = KahanSum::default();
    for c in children {
        match cells.last_mut() {
            Some(last) if last.mergeable(&c) => {
                acc.add(c.mass);
                last.mass = acc.value();
            }
            _ => {
                acc = KahanSum::default();
                acc.add(c.mass);
                cells.push(c);
            }
        }
    }
    Ok(CellEnsemble {
        stage: stage + 1,
        cells,
    })
}

/// Band `𝒲¹_{I+j} ∪ 𝒲²_{I+j}` at one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub j: u32,
    pub mass: f64,
    pub lower: f64,
    pub upper: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u32,
    pub cells: usize,
    pub total_mass: f64,
    pub bands: Vec<BandReport>,
    pub v_mass: f64,
    pub v_lower: f64,
    pub v_upper: f64,
    pub s1: f64,
    pub sp: f64,
    pub s2: f64,
    /// `Σ mass·X11²`.
    pub energy: f64,
    /// Largest distance of an interpolation cell to its on-target point
    /// (`B_i` for `W1`, `D_i` for `W2`).
    pub max_kf_residual: f64,
    /// `2^{−ℓ}`, reported alongside the residual.
    pub kf_budget: f64,
    pub inversions_checked: u32,
    pub violations: Vec<String>,
}

impl StageReport {
    /// First violated bound as an error.
    pub fn check(&self) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::Diagnostic {
                stage: self.stage,
                band: self.bands.iter().find(|b| !b.ok).map(|b| b.j),
                reason: v.clone(),
            }),
        }
    }
}

/// Stage diagnostics: band and `V` masses against their bounds, the
/// functionals `S(1)`, `S(p)`, `S(2)`, the `X11` energy and structural checks.
pub fn diagnostics(ens: &CellEnsemble, consts: &ScheduleConstants) -> Result<StageReport> {
    let cfg = consts.stair();
    let ell = ens.stage;
    let (r, p) = (consts.r, consts.p);
    let ln_r = r.ln();
    let delta_l = if ell == 0 {
        0.0
    } else {
        crate::schedule::delta_seq(consts.delta, ell)
    };
    // ln t_ℓ = ln(1 − e^{d_ℓ})
    let ln_t = |k: u32| (-t_seq(consts, k).deficit()).ln_1p();
    let mut violations = Vec::new();

    let total_mass = ens.total_mass();
    if (total_mass - 1.0).abs() > MASS_TOL {
        violations.push(format!("total mass {total_mass} differs from 1"));
    }

    let mut inversions = 0;
    let d_l = (ell > 0).then(|| deficit(consts, ell));
    for cell in &ens.cells {
        let support_ok = match cell.kind {
            LabelKind::V => cell.index == consts.i + ell,
            LabelKind::W1 | LabelKind::W2 => cell.index >= consts.i && cell.index < consts.i + ell,
            _ => false,
        };
        if !support_ok {
            violations.push(format!(
                "label {:?}({}) outside the admissible support",
                cell.kind, cell.index
            ));
        }
        if cell.x.a12 != cell.p.b {
            violations.push(format!("{:?}({}) lost its b entry", cell.kind, cell.index));
        }
        if cell.kind != LabelKind::V && cell.deficit != d_l {
            violations.push(format!(
                "{:?}({}) carries a stale interpolation parameter",
                cell.kind, cell.index
            ));
        }
        let y = label_matrix(&cfg, cell.kind, cell.index, cell.deficit, &cell.p);
        if cell.x.dist_max(&y) > LABEL_TOL * y.max_abs().max(1.0) {
            violations.push(format!(
                "{:?}({}) matrix does not match its label",
                cell.kind, cell.index
            ));
        }
        if check_inversion(consts, cell)? {
            inversions += 1;
        }
    }

    let mut bands = Vec::with_capacity(ell as usize);
    for j in 0..ell {
        let idx = consts.i + j;
        let mass = ens.mass_where(|c| c.kind != LabelKind::V && c.index == idx);
        let jf = j as f64;
        let lower = (1.0 - r.powf(-p)) * (-2.0 * jf * ln_r + ln_t(j + 1) - ln_t(ell)).exp();
        let upper = (1.0 - r.powi(-2)) * (-(p + delta_l) * jf * ln_r).exp();
        let ok = lower <= mass && mass <= upper;
        if !ok {
            violations.push(format!(
                "band {j}: mass {mass:e} outside [{lower:e}, {upper:e}]"
            ));
        }
        bands.push(BandReport {
            j,
            mass,
            lower,
            upper,
            ok,
        });
    }
    let v_mass = ens.mass_where(|c| c.kind == LabelKind::V);
    let lf = ell as f64;
    let v_lower = (-2.0 * lf * ln_r).exp();
    let v_upper = (-(p + delta_l) * lf * ln_r).exp();
    if !(v_lower <= v_mass && v_mass <= v_upper) {
        violations.push(format!(
            "V mass {v_mass:e} outside [{v_lower:e}, {v_upper:e}]"
        ));
    }

    let s = |q: f64| {
        ksum(
            ens.cells
                .iter()
                .map(|c| c.mass * (c.x.a11.abs().powf(q) + c.x.a22.abs().powf(q))),
        )
    };
    let energy = ksum(ens.cells.iter().map(|c| c.mass * c.x.a11 * c.x.a11));
    let max_kf_residual = ens
        .cells
        .iter()
        .filter_map(|c| {
            let target = match c.kind {
                LabelKind::W1 => Family::B,
                LabelKind::W2 => Family::D,
                _ => return None,
            };
            let on = family_matrix(&cfg, target, c.index, &c.p);
            Some(c.x.dist_max(&on))
        })
        .fold(0.0, f64::max);

    Ok(StageReport {
        stage: ell,
        cells: ens.cells.len(),
        total_mass,
        bands,
        v_mass,
        v_lower,
        v_upper,
        s1: s(1.0),
        sp: s(p),
        s2: s(2.0),
        energy,
        max_kf_residual,
        kf_budget: 0.5f64.powi(ell as i32),
        inversions_checked: inversions,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub p0: ParamPoint,
    pub stages: Vec<StageReport>,
    /// `C r^{pI}/(1 − r^{−δ})` with the envelope constant `C`.
    pub sp_bound: f64,
    pub sp_max: f64,
    pub energy_increasing: bool,
    pub violations: usize,
}

impl RunReport {
    pub fn check(&self) -> Result<()> {
        self.stages.iter().try_for_each(StageReport::check)
    }
}

/// Applies `stages` steps from `init`, collecting diagnostics at every stage
/// including stage 0.
pub fn run(consts: &ScheduleConstants, p0: ParamPoint, stages: u32) -> Result<RunReport> {
    if stages == 0 {
        return Err(Error::Config(
            "the number of stages must be at least 1".into(),
        ));
    }
    let mut ens = init(consts, p0)?;
    let mut reports = vec![diagnostics(&ens, consts)?];
    for _ in 0..stages {
        ens = step(&ens, consts)?;
        reports.push(diagnostics(&ens, consts)?);
    }
    let sp_max = reports.iter().map(|s| s.sp).fold(0.0, f64::max);
    let energy_increasing = reports.windows(2).all(|w| w[1].energy > w[0].energy);
    let violations = reports.iter().map(|s| s.violations.len()).sum();
    Ok(RunReport {
        p0,
        sp_bound: sp_bound(consts),
        sp_max,
        energy_increasing,
        violations,
        stages: reports,
    })
}

/// `C r^{pI}/(1 − r^{−δ})`.
pub fn sp_bound(consts: &ScheduleConstants) -> f64 {
    let (r, p, d) = (consts.r, consts.p, consts.delta);
    consts.envelope_c * r.powf(p * consts.i as f64) / -(-d * r.ln()).exp_m1()
}

pub const CSV_HEADER: &str =
    "stage,band_j,Q_mass,Q_lower,Q_upper,V_mass,V_lower,V_upper,S1,Sp,S2,energy,max_kf_residual";

/// One row per `(stage, band)`; stage 0 has a single row with an empty band.
pub fn stages_csv(report: &RunReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in &report.stages {
        let tail = format!(
            "{},{},{},{},{},{},{},{}",
            s.v_mass, s.v_lower, s.v_upper, s.s1, s.sp, s.s2, s.energy, s.max_kf_residual
        );
        if s.bands.is_empty() {
            let _ = writeln!(out, "{},,,,,{tail}", s.stage);
        }
        for b in &s.bands {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{tail}",
                s.stage, b.j, b.mass, b.lower, b.upper
            );
        }
    }
    out
}
