//! Piecewise-affine realisation of laminates on convex polygons.
//!
//! A split `A = (1−s)B1 + sB2` with `B2 − B1 = κ n⊗n` is realised on a cell
//! carrying the affine map `x ↦ Gx + c` (with `G ≈ A`) by
//!
//! `u(x) = Gx + c + κ n ψ̃(x)`, `ψ̃ = clamp(ψ(n·x), −L·dist(x, ∂K), L·dist(x, ∂K))`,
//!
//! where `ψ` is a zero-mean sawtooth with slopes `−s` and `1 − s`. Away from a
//! boundary band of width `w` the clamp is inactive and `Du ∈ {B1, B2}`; on
//! `∂K` the clamp forces `ψ̃ = 0`, so boundary values are untouched. Every
//! piece is a convex polygon obtained by half-plane clipping, on which `ψ̃` is
//! affine.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laminate::{Laminate, SplitStep};
use crate::profile::SymMatrix2;
use crate::schedule::ScheduleConstants;
use crate::scheme::{cell_laminate, init, step, CellClass, CellEnsemble};
use crate::staircase::{family_matrix, Family, LabelKind, ParamPoint};
use crate::sum::ksum;

pub type Point = [f64; 2];
/// Row-major `[[g11, g12], [g21, g22]]`.
pub type Mat2 = [[f64; 2]; 2];

fn sym_to_mat(x: &SymMatrix2) -> Mat2 {
    x.to_array()
}

fn mat_dist_sym(g: &Mat2, x: &SymMatrix2) -> f64 {
    (g[0][0] - x.a11)
        .abs()
        .max((g[0][1] - x.a12).abs())
        .max((g[1][0] - x.a12).abs())
        .max((g[1][1] - x.a22).abs())
}

// ---------------------------------------------------------------------------
// Polygons
// ---------------------------------------------------------------------------

pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * ksum((0..n).map(|k| {
        let (p, q) = (poly[k], poly[(k + 1) % n]);
        p[0] * q[1] - q[0] * p[1]
    }))
}

pub fn polygon_perimeter(poly: &[Point]) -> f64 {
    let n = poly.len();
    ksum((0..n).map(|k| {
        let (p, q) = (poly[k], poly[(k + 1) % n]);
        (q[0] - p[0]).hypot(q[1] - p[1])
    }))
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Keeps `{x : a·x ≤ b}` (Sutherland–Hodgman).
fn clip(poly: &[Point], a: Point, b: f64) -> Vec<Point> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..n {
        let (p, q) = (poly[k], poly[(k + 1) % n]);
        let (fp, fq) = (dot(a, p) - b, dot(a, q) - b);
        if fp <= 0.0 {
            out.push(p);
        }
        if (fp < 0.0 && fq > 0.0) || (fp > 0.0 && fq < 0.0) {
            let t = fp / (fp - fq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    dedup(out)
}

fn dedup(mut poly: Vec<Point>) -> Vec<Point> {
    poly.dedup();
    while poly.len() > 1 && poly.first() == poly.last() {
        poly.pop();
    }
    poly
}

/// Inward unit normal `m` and offset `o` of every edge: `d_e(x) = m·x − o`.
fn edge_lines(poly: &[Point]) -> Vec<(Point, f64)> {
    let n = poly.len();
    (0..n)
        .filter_map(|k| {
            let (p, q) = (poly[k], poly[(k + 1) % n]);
            let (tx, ty) = (q[0] - p[0], q[1] - p[1]);
            let len = tx.hypot(ty);
            (len > 0.0).then(|| {
                let m = [-ty / len, tx / len];
                (m, dot(m, p))
            })
        })
        .collect()
}

fn contains(poly: &[Point], x: Point, tol: f64) -> bool {
    edge_lines(poly).iter().all(|&(m, o)| dot(m, x) - o >= -tol)
}

fn bbox(poly: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in poly {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

fn diameter(poly: &[Point]) -> f64 {
    let mut d: f64 = 0.0;
    for (k, p) in poly.iter().enumerate() {
        for q in &poly[k + 1..] {
            d = d.max((q[0] - p[0]).hypot(q[1] - p[1]));
        }
    }
    d
}

pub fn unit_square() -> Vec<Point> {
    vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
}

// ---------------------------------------------------------------------------
// Cells and maps
// ---------------------------------------------------------------------------

/// A convex polygon carrying the affine map `x ↦ Gx + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineCell {
    pub polygon: Vec<Point>,
    pub g: Mat2,
    pub c: Point,
    /// Atom this cell realises; `None` for transition layers.
    pub target: Option<SymMatrix2>,
    pub tag: String,
}

impl AffineCell {
    pub fn new(
        polygon: Vec<Point>,
        g: Mat2,
        c: Point,
        target: Option<SymMatrix2>,
        tag: String,
    ) -> Self {
        Self {
            polygon,
            g,
            c,
            target,
            tag,
        }
    }

    pub fn eval(&self, x: Point) -> Point {
        [
            self.g[0][0] * x[0] + self.g[0][1] * x[1] + self.c[0],
            self.g[1][0] * x[0] + self.g[1][1] * x[1] + self.c[1],
        ]
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.polygon)
    }

    /// `|G − Gᵀ|/2`, the off-symmetric residue.
    pub fn antisymmetry(&self) -> f64 {
        0.5 * (self.g[0][1] - self.g[1][0]).abs()
    }

    /// `self` plus `κ n (g·x + h)`.
    fn perturbed(&self, polygon: Vec<Point>, kn: Point, g: Point, h: f64) -> Self {
        let mut out = self.clone();
        out.polygon = polygon;
        for (row, (ci, k)) in out.g.iter_mut().zip(out.c.iter_mut().zip(kn)) {
            for (gij, gj) in row.iter_mut().zip(g) {
                *gij += k * gj;
            }
            *ci += k * h;
        }
        out
    }
}

/// A piecewise-affine map on a convex polygonal domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PAMap {
    pub domain: Vec<Point>,
    pub cells: Vec<AffineCell>,
    pub g0: Mat2,
    pub c0: Point,
}

/// Oscillation and budget parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscParams {
    /// Period as a multiple of the inradius proxy `area/perimeter`.
    pub theta: f64,
    /// Total area budget for transition layers.
    pub eta: f64,
    /// Sup-norm budget for the deviation from the affine boundary map;
    /// `None` leaves the period to `theta` alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup_budget: Option<f64>,
    /// Splits whose minority weight is below this are not realised
    /// geometrically; the cell is relabelled to the majority endpoint.
    pub skip_weight: f64,
    pub cell_cap: usize,
}

impl Default for OscParams {
    fn default() -> Self {
        Self {
            theta: 0.125,
            eta: 0.05,
            sup_budget: None,
            skip_weight: 1e-3,
            cell_cap: 1_000_000,
        }
    }
}

/// Per-split budgets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LamParams {
    pub theta: f64,
    pub eta: f64,
    pub sup_budget: Option<f64>,
}

/// `B2 − B1 = κ n⊗n` with `|n| = 1`.
fn rank_one_direction(b1: &SymMatrix2, b2: &SymMatrix2) -> Result<(f64, Point)> {
    let m = *b2 - *b1;
    let (lo, hi) = m.eigenvalues();
    let (slo, shi) = m.singular_values();
    if shi == 0.0 || slo > 1e-10 * shi {
        return Err(Error::InvalidSplit(format!(
            "B2 - B1 is not symmetric rank-one (singular values {slo:e}, {shi:e})"
        )));
    }
    let kappa = if hi.abs() >= lo.abs() { hi } else { lo };
    let v1 = [m.a12, kappa - m.a11];
    let v2 = [kappa - m.a22, m.a12];
    let v = if v1[0].hypot(v1[1]) >= v2[0].hypot(v2[1]) {
        v1
    } else {
        v2
    };
    let len = v[0].hypot(v[1]);
    Ok((kappa, [v[0] / len, v[1] / len]))
}

/// Realises one split on one cell. The cell's own map is the base, so the
/// boundary trace is preserved exactly; `tags` label the `B1` and `B2` parts.
pub fn simple_lamination(
    cell: &AffineCell,
    b1: &SymMatrix2,
    b2: &SymMatrix2,
    s: f64,
    params: &LamParams,
    tags: [&str; 2],
) -> Result<Vec<AffineCell>> {
    let retag = |target: &SymMatrix2, tag: &str| {
        let mut c = cell.clone();
        c.target = Some(*target);
        c.tag = tag.to_string();
        vec![c]
    };
    if s <= 0.0 {
        return Ok(retag(b1, tags[0]));
    }
    if s >= 1.0 {
        return Ok(retag(b2, tags[1]));
    }
    let (kappa, n) = rank_one_direction(b1, b2)?;
    let k = &cell.polygon;
    let area = polygon_area(k);
    let perim = polygon_perimeter(k);
    if !(area > 0.0) {
        return Err(Error::Input("cannot laminate a degenerate cell".into()));
    }
    let amp_per_h = s * (1.0 - s);
    let mut h = params.theta * area / perim;
    if let Some(eps) = params.sup_budget {
        h = h.min(eps / (kappa.abs() * amp_per_h));
    }
    let xi: Vec<f64> = k.iter().map(|&p| dot(n, p)).collect();
    let xi0 = xi.iter().copied().fold(f64::INFINITY, f64::min);
    let xi1 = xi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = xi1 - xi0;
    let periods = (width / h).ceil().max(1.0);
    if periods > 1e7 {
        return Err(Error::Infeasible(format!(
            "sup budget {:?} needs {periods} periods across a cell of width {width}",
            params.sup_budget
        )));
    }
    let periods = periods as usize;
    let h = width / periods as f64;
    let amp = amp_per_h * h;
    let w = params.eta * area / perim;
    let big_l = amp / (2.0 * w);
    let kn = [kappa * n[0], kappa * n[1]];
    let edges = edge_lines(k);
    let min_area = 1e-14 * area;

    // Core: dist ≥ w.
    let core_poly = edges
        .iter()
        .fold(k.clone(), |p, &(m, o)| clip(&p, [-m[0], -m[1]], -(o + w)));
    // Edge regions: d_e ≤ w and d_e ≤ d_f for every other edge.
    let regions: Vec<(Point, f64, Vec<Point>)> = edges
        .iter()
        .enumerate()
        .map(|(e, &(m, o))| {
            let mut p = clip(k, m, o + w);
            for (f, &(mf, of)) in edges.iter().enumerate() {
                if f != e {
                    p = clip(&p, [m[0] - mf[0], m[1] - mf[1]], o - of);
                }
            }
            (m, o, p)
        })
        .collect();

    let mut out = Vec::new();
    let mut push = |c: AffineCell| {
        if polygon_area(&c.polygon) > min_area {
            out.push(c);
        }
    };
    for q in 0..periods {
        let start = xi0 + q as f64 * h;
        let mid = start + (1.0 - s) * h;
        let end = if q + 1 == periods { xi1 } else { start + h };
        // ψ = α ξ + β on each sub-stripe, ranging over [−amp/2, amp/2].
        let subs = [
            (start, mid, -s, 0.5 * amp + s * start, 0usize),
            (mid, end, 1.0 - s, -0.5 * amp - (1.0 - s) * mid, 1usize),
        ];
        for (lo, hi, alpha, beta, which) in subs {
            let clip_stripe = |p: &[Point]| {
                let p = clip(p, [-n[0], -n[1]], -lo);
                clip(&p, n, hi)
            };
            let target = if which == 0 { b1 } else { b2 };
            let g_psi = [alpha * n[0], alpha * n[1]];
            let core = clip_stripe(&core_poly);
            if core.len() >= 3 {
                let mut c = cell.perturbed(core, kn, g_psi, beta);
                c.target = Some(*target);
                c.tag = tags[which].to_string();
                push(c);
            }
            for (m, o, region) in &regions {
                let band = clip_stripe(region);
                if band.len() < 3 {
                    continue;
                }
                // ψ − L d_e = (α n − L m)·x + β + L o
                let up = [g_psi[0] - big_l * m[0], g_psi[1] - big_l * m[1]];
                let up_c = beta + big_l * o;
                // ψ + L d_e
                let dn = [g_psi[0] + big_l * m[0], g_psi[1] + big_l * m[1]];
                let dn_c = beta - big_l * o;
                // Clamped above: ψ ≥ L d_e, so ψ̃ = L d_e.
                let high = clip(&band, [-up[0], -up[1]], up_c);
                if high.len() >= 3 {
                    let mut c = cell.perturbed(high, kn, [big_l * m[0], big_l * m[1]], -big_l * o);
                    c.target = None;
                    c.tag = "layer".into();
                    push(c);
                }
                // Clamped below: ψ ≤ −L d_e.
                let low = clip(&band, dn, -dn_c);
                if low.len() >= 3 {
                    let mut c = cell.perturbed(low, kn, [-big_l * m[0], -big_l * m[1]], big_l * o);
                    c.target = None;
                    c.tag = "layer".into();
                    push(c);
                }
                let free = clip(&clip(&band, up, -up_c), [-dn[0], -dn[1]], dn_c);
                // Unclamped band pieces keep the exact gradient but are not
                // refined further: they lie inside the layer budget.
                if free.len() >= 3 {
                    let mut c = cell.perturbed(free, kn, g_psi, beta);
                    c.target = None;
                    c.tag = format!("layer:{}", tags[which]);
                    push(c);
                }
            }
        }
    }
    Ok(out)
}

fn same(a: &SymMatrix2, b: &SymMatrix2) -> bool {
    a.dist_max(b) <= 1e-9 * a.max_abs().max(b.max_abs()).max(1.0)
}

/// Replays the certificate of `nu` on `cells`, splitting every cell whose
/// target is the split atom. `tag_of` names the atoms.
fn replay_certificate(
    mut cells: Vec<AffineCell>,
    nu: &Laminate,
    grad_tol: f64,
    opts: &OscParams,
    tag_of: &dyn Fn(&crate::laminate::AtomTag) -> String,
) -> Result<Vec<AffineCell>> {
    let steps = nu.certificate.len().max(1) as f64;
    let params = LamParams {
        theta: opts.theta,
        eta: opts.eta / steps,
        sup_budget: opts.sup_budget.map(|e| e / steps),
    };
    for st in &nu.certificate {
        if st.fraction != 1.0 {
            return Err(Error::Input(
                "partial splits (fraction < 1) cannot be realised".into(),
            ));
        }
        let x = st.barycenter();
        let tags = [tag_of(&st.tags[0]), tag_of(&st.tags[1])];
        let mut next = Vec::with_capacity(cells.len());
        for cell in cells {
            match cell.target {
                Some(t) if same(&t, &x) => {
                    next.extend(split_cell(&cell, st, &params, grad_tol, opts, &tags)?);
                }
                _ => next.push(cell),
            }
            if next.len() > opts.cell_cap {
                return Err(Error::CellCap {
                    cap: opts.cell_cap,
                    requested: next.len(),
                });
            }
        }
        cells = next;
    }
    Ok(cells)
}

fn split_cell(
    cell: &AffineCell,
    st: &SplitStep,
    params: &LamParams,
    grad_tol: f64,
    opts: &OscParams,
    tags: &[String; 2],
) -> Result<Vec<AffineCell>> {
    let minority = st.s.min(1.0 - st.s);
    if minority < opts.skip_weight {
        let (major, tag) = if st.s < 0.5 {
            (st.b1, &tags[0])
        } else {
            (st.b2, &tags[1])
        };
        if mat_dist_sym(&cell.g, &major) <= grad_tol {
            let mut c = cell.clone();
            c.target = Some(major);
            c.tag = tag.clone();
            return Ok(vec![c]);
        }
    }
    simple_lamination(cell, &st.b1, &st.b2, st.s, params, [&tags[0], &tags[1]])
}

/// Half the smallest entrywise distance between distinct atoms, times 1/2.
pub fn default_grad_tol(atoms: &[SymMatrix2]) -> f64 {
    let mut gap = f64::INFINITY;
    for (k, a) in atoms.iter().enumerate() {
        for b in &atoms[k + 1..] {
            gap = gap.min(a.dist_max(b));
        }
    }
    if gap.is_finite() {
        0.25 * gap
    } else {
        1.0
    }
}

/// Realises `nu` on `domain` with boundary map `x ↦ Ax + c0`, `A` the root
/// of the certificate.
pub fn realize_laminate(
    domain: &[Point],
    c0: Point,
    nu: &Laminate,
    grad_tol: Option<f64>,
    opts: &OscParams,
) -> Result<PAMap> {
    let report = crate::laminate::validate(nu);
    if !report.ok {
        return Err(Error::InvalidSplit(report.message.unwrap_or_default()));
    }
    let root = nu
        .certificate
        .first()
        .map(|s| s.barycenter())
        .unwrap_or(nu.atoms[0].x);
    let atoms: Vec<SymMatrix2> = nu.atoms.iter().map(|a| a.x).collect();
    let tol = grad_tol.unwrap_or_else(|| default_grad_tol(&atoms));
    let g0 = sym_to_mat(&root);
    let root_tag = nu
        .certificate
        .first()
        .map(|_| "root".to_string())
        .unwrap_or_else(|| nu.atoms[0].tag.to_string());
    let start = vec![AffineCell::new(
        domain.to_vec(),
        g0,
        c0,
        Some(root),
        root_tag,
    )];
    let cells = replay_certificate(start, nu, tol, opts, &|t| t.to_string())?;
    Ok(PAMap {
        domain: domain.to_vec(),
        cells,
        g0,
        c0,
    })
}

// ---------------------------------------------------------------------------
// Scheme realisation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramEntry {
    pub label: String,
    /// Mass of the label in the exact simulation.
    pub mass: f64,
    /// Area fraction whose gradient lies within `grad_tol` of the label matrix.
    pub area_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRealization {
    pub map: PAMap,
    pub depth: u32,
    pub grad_tol: f64,
    pub histogram: Vec<HistogramEntry>,
    /// Mean cell diameter after each stage.
    pub mean_diameter: Vec<f64>,
}

fn cell_label(c: &CellClass) -> String {
    format!("{:?}({})", c.kind, c.index)
}

fn atom_label(t: &crate::laminate::AtomTag) -> String {
    let kind = if t.kind == LabelKind::A {
        LabelKind::V
    } else {
        t.kind
    };
    format!("{:?}({})", kind, t.index)
}

fn mean_diameter(cells: &[AffineCell]) -> f64 {
    ksum(cells.iter().map(|c| diameter(&c.polygon))) / cells.len().max(1) as f64
}

/// Realises `depth` stages of the scheme on the unit square with boundary
/// map `x ↦ A_I(P₀)x`, each labelled cell relaminated by the same laminate
/// the exact simulation applies to its class.
pub fn realize_scheme(
    consts: &ScheduleConstants,
    p0: ParamPoint,
    depth: u32,
    grad_tol: Option<f64>,
    opts: &OscParams,
) -> Result<SchemeRealization> {
    if !(1..=4).contains(&depth) {
        return Err(Error::Config(format!(
            "realisation depth must lie in 1..=4, got {depth}"
        )));
    }
    let cfg = consts.stair();
    let mut ens: CellEnsemble = init(consts, p0)?;
    let root = family_matrix(&cfg, Family::A, consts.i, &p0);
    let domain = unit_square();
    let g0 = sym_to_mat(&root);
    let mut cells = vec![AffineCell::new(
        domain.clone(),
        g0,
        [0.0, 0.0],
        Some(root),
        cell_label(&ens.cells[0]),
    )];
    // Tolerance fixed from the final atoms.
    let mut probe = ens.clone();
    for _ in 0..depth {
        probe = step(&probe, consts)?;
    }
    let final_atoms: Vec<SymMatrix2> = probe.cells.iter().map(|c| c.x).collect();
    let tol = grad_tol.unwrap_or_else(|| default_grad_tol(&final_atoms));
    let stage_opts = OscParams {
        eta: opts.eta / depth as f64,
        sup_budget: opts.sup_budget.map(|e| e / depth as f64),
        ..*opts
    };
    let mut diam = vec![mean_diameter(&cells)];
    for _ in 0..depth {
        let mut groups: Vec<Vec<AffineCell>> = vec![Vec::new(); ens.cells.len()];
        let mut next = Vec::new();
        for c in cells {
            let slot = c
                .target
                .and_then(|t| ens.cells.iter().position(|k| same(&k.x, &t)));
            match (c.target, slot) {
                (None, _) => next.push(c),
                (Some(_), Some(k)) => groups[k].push(c),
                (Some(_), None) => {
                    return Err(Error::Internal(format!(
                        "realised cell {} has no class in the ensemble",
                        c.tag
                    )))
                }
            }
        }
        for (class, group) in ens.cells.iter().zip(groups) {
            if group.is_empty() {
                continue;
            }
            let nu = cell_laminate(consts, class, ens.stage)?;
            let realized = replay_certificate(group, &nu, tol, &stage_opts, &atom_label)?;
            next.extend(realized);
            if next.len() > opts.cell_cap {
                return Err(Error::CellCap {
                    cap: opts.cell_cap,
                    requested: next.len(),
                });
            }
        }
        cells = next;
        ens = step(&ens, consts)?;
        diam.push(mean_diameter(&cells));
    }
    let map = PAMap {
        domain,
        cells,
        g0,
        c0: [0.0, 0.0],
    };
    let histogram = ens
        .cells
        .iter()
        .map(|c| HistogramEntry {
            label: cell_label(c),
            mass: c.mass,
            area_fraction: area_fraction_near(&map, &c.x, tol),
        })
        .collect();
    Ok(SchemeRealization {
        map,
        depth,
        grad_tol: tol,
        histogram,
        mean_diameter: diam,
    })
}

// ---------------------------------------------------------------------------
// Measurements
// ---------------------------------------------------------------------------

/// Area fraction of the domain where `|Du − x|` (entrywise) is at most `tol`.
pub fn area_fraction_near(map: &PAMap, x: &SymMatrix2, tol: f64) -> f64 {
    let total = polygon_area(&map.domain);
    ksum(
        map.cells
            .iter()
            .filter(|c| mat_dist_sym(&c.g, x) <= tol)
            .map(AffineCell::area),
    ) / total
}

/// Uniform grid of buckets over the domain's bounding box.
struct Grid {
    lo: Point,
    size: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl Grid {
    fn new(map: &PAMap) -> Self {
        let (lo, hi) = bbox(&map.domain);
        let n = (map.cells.len() as f64).sqrt().ceil().clamp(1.0, 2048.0) as usize;
        let size = (hi[0] - lo[0]).max(hi[1] - lo[1]) / n as f64;
        let nx = ((hi[0] - lo[0]) / size).ceil() as usize + 1;
        let ny = ((hi[1] - lo[1]) / size).ceil() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        let mut g = Self {
            lo,
            size,
            nx,
            ny,
            buckets: Vec::new(),
        };
        for (k, c) in map.cells.iter().enumerate() {
            let (a, b) = bbox(&c.polygon);
            let (i0, j0) = g.index(a);
            let (i1, j1) = g.index(b);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    buckets[j * nx + i].push(k as u32);
                }
            }
        }
        g.buckets = buckets;
        g
    }

    fn index(&self, p: Point) -> (usize, usize) {
        let i = ((p[0] - self.lo[0]) / self.size)
            .floor()
            .clamp(0.0, (self.nx - 1) as f64);
        let j = ((p[1] - self.lo[1]) / self.size)
            .floor()
            .clamp(0.0, (self.ny - 1) as f64);
        (i as usize, j as usize)
    }

    fn candidates(&self, p: Point) -> &[u32] {
        let (i, j) = self.index(p);
        &self.buckets[j * self.nx + i]
    }
}

/// Geometric and analytic checks of a realised map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapChecks {
    pub cells: usize,
    /// `|Σ cell areas − domain area| / domain area`.
    pub tiling_defect: f64,
    /// Largest jump of the map between cells sharing a point.
    pub continuity: f64,
    /// Largest deviation from the boundary affine map on sampled boundary points.
    pub boundary: f64,
    /// Largest `|u(x) − (G₀x + c₀)|` over cell vertices.
    pub sup_deviation: f64,
    /// Area fraction where the antisymmetric part of `Du` exceeds `1e−6`.
    pub antisymmetric_fraction: f64,
}

const LOCATE_TOL: f64 = 1e-13;

pub fn check_map(map: &PAMap, boundary_samples: usize) -> MapChecks {
    let total = polygon_area(&map.domain);
    let covered = ksum(map.cells.iter().map(AffineCell::area));
    let grid = Grid::new(map);
    let scale = diameter(&map.domain);
    let tol = LOCATE_TOL * scale;
    let affine = |x: Point| {
        [
            map.g0[0][0] * x[0] + map.g0[0][1] * x[1] + map.c0[0],
            map.g0[1][0] * x[0] + map.g0[1][1] * x[1] + map.c0[1],
        ]
    };
    let dist = |a: Point, b: Point| (a[0] - b[0]).abs().max((a[1] - b[1]).abs());

    let mut continuity: f64 = 0.0;
    let mut sup_dev: f64 = 0.0;
    let mut seen: HashMap<(u64, u64), ()> = HashMap::new();
    for cell in &map.cells {
        for &v in &cell.polygon {
            if seen.insert((v[0].to_bits(), v[1].to_bits()), ()).is_some() {
                continue;
            }
            let u = cell.eval(v);
            sup_dev = sup_dev.max(dist(u, affine(v)));
            for &k in grid.candidates(v) {
                let other = &map.cells[k as usize];
                if contains(&other.polygon, v, tol) {
                    continuity = continuity.max(dist(u, other.eval(v)));
                }
            }
        }
    }

    let perim = polygon_perimeter(&map.domain);
    let n = map.domain.len();
    let mut boundary: f64 = 0.0;
    for k in 0..boundary_samples {
        let mut s = (k as f64 + 0.5) / boundary_samples as f64 * perim;
        let mut x = map.domain[0];
        for e in 0..n {
            let (p, q) = (map.domain[e], map.domain[(e + 1) % n]);
            let len = (q[0] - p[0]).hypot(q[1] - p[1]);
            if s <= len {
                let t = s / len;
                x = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
                break;
            }
            s -= len;
        }
        let mut found = false;
        for &c in grid.candidates(x) {
            let cell = &map.cells[c as usize];
            if contains(&cell.polygon, x, tol) {
                found = true;
                boundary = boundary.max(dist(cell.eval(x), affine(x)));
            }
        }
        if !found {
            boundary = f64::INFINITY;
        }
    }
    let antisym = ksum(
        map.cells
            .iter()
            .filter(|c| c.antisymmetry() > 1e-6)
            .map(AffineCell::area),
    ) / total;
    MapChecks {
        cells: map.cells.len(),
        tiling_defect: (covered - total).abs() / total,
        continuity,
        boundary,
        sup_deviation: sup_dev,
        antisymmetric_fraction: antisym,
    }
}

// ---------------------------------------------------------------------------
// Mesh files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MeshCell {
    verts: Vec<usize>,
    #[serde(rename = "G")]
    g: [f64; 4],
    c: Point,
    tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<SymMatrix2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MeshBoundary {
    #[serde(rename = "G0")]
    g0: [f64; 4],
    c0: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MeshFile {
    vertices: Vec<Point>,
    domain: Vec<usize>,
    cells: Vec<MeshCell>,
    boundary: MeshBoundary,
}

fn flat(g: &Mat2) -> [f64; 4] {
    [g[0][0], g[0][1], g[1][0], g[1][1]]
}

fn unflat(g: [f64; 4]) -> Mat2 {
    [[g[0], g[1]], [g[2], g[3]]]
}

pub fn mesh_to_json(map: &PAMap) -> Result<String> {
    let mut index: HashMap<(u64, u64), usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut id = |p: Point| {
        *index
            .entry((p[0].to_bits(), p[1].to_bits()))
            .or_insert_with(|| {
                vertices.push(p);
                vertices.len() - 1
            })
    };
    let domain = map.domain.iter().map(|&p| id(p)).collect();
    let cells = map
        .cells
        .iter()
        .map(|c| MeshCell {
            verts: c.polygon.iter().map(|&p| id(p)).collect(),
            g: flat(&c.g),
            c: c.c,
            tag: c.tag.clone(),
            target: c.target,
        })
        .collect();
    let file = MeshFile {
        vertices,
        domain,
        cells,
        boundary: MeshBoundary {
            g0: flat(&map.g0),
            c0: map.c0,
        },
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn mesh_from_json(s: &str) -> Result<PAMap> {
    let f: MeshFile = serde_json::from_str(s)?;
    let get = |k: usize| {
        f.vertices
            .get(k)
            .copied()
            .ok_or_else(|| Error::Input(format!("vertex index {k} out of range")))
    };
    let domain = f
        .domain
        .iter()
        .map(|&k| get(k))
        .collect::<Result<Vec<_>>>()?;
    let cells = f
        .cells
        .iter()
        .map(|c| {
            Ok(AffineCell {
                polygon: c
                    .verts
                    .iter()
                    .map(|&k| get(k))
                    .collect::<Result<Vec<_>>>()?,
                g: unflat(c.g),
                c: c.c,
                target: c.target,
                tag: c.tag.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PAMap {
        domain,
        cells,
        g0: unflat(f.boundary.g0),
        c0: f.boundary.c0,
    })
}

pub fn export_mesh(map: &PAMap, path: &Path) -> Result<()> {
    std::fs::write(path, mesh_to_json(map)?)?;
    Ok(())
}

pub fn import_mesh(path: &Path) -> Result<PAMap> {
    mesh_from_json(&std::fs::read_to_string(path)?)
}
