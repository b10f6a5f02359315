//! Regularity calculators: the integrability bootstrap, the pinching
//! interval for `β`, and a grid checker for the mollified one-sided bound
//! `(|Du|)_ε ≤ √n |Du_ε| + 2√n ‖L‖₂`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInput {
    pub n: u32,
    pub p: f64,
    pub gamma: f64,
}

impl BootstrapInput {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!(
                "n must be at least 2, got {}",
                self.n
            )));
        }
        if !(self.p > 1.0 && self.p < self.n as f64) {
            return Err(Error::Config(format!(
                "p must lie in (1, n) = (1, {}), got {}",
                self.n, self.p
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// `p⋆ = np/(n − p)`.
    pub fn p_star(&self) -> f64 {
        let n = self.n as f64;
        n * self.p / (n - self.p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub p_star: f64,
    /// `q₁, q₂, …` ending at `p⋆`.
    pub exponents: Vec<f64>,
    pub steps: usize,
}

/// `q₀ = 1`, `q_{k+1} = min(p⋆, q_k/γ)` until `p⋆` is reached.
pub fn bootstrap_exponents(inp: &BootstrapInput) -> Result<Bootstrap> {
    inp.validate()?;
    let p_star = inp.p_star();
    let mut exponents = Vec::new();
    if inp.gamma == 0.0 {
        exponents.push(p_star);
    } else {
        let mut q = 1.0;
        loop {
            q /= inp.gamma;
            // Relative slack absorbs rounding in q = γ^{-k}.
            if q >= p_star * (1.0 - 1e-12) {
                exponents.push(p_star);
                break;
            }
            exponents.push(q);
        }
    }
    Ok(Bootstrap {
        p_star,
        steps: exponents.len(),
        exponents,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinchInput {
    pub n: u32,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
}

impl PinchInput {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if !(self.lambda > 0.0 && self.lambda <= self.big_lambda && self.big_lambda.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < lambda <= Lambda < inf, got lambda = {}, Lambda = {}",
                self.lambda, self.big_lambda
            )));
        }
        Ok(())
    }

    /// `(n − 1)β² − 2nλβ + nΛ²`; negative exactly on the admissible `β`.
    pub fn quadratic(&self, beta: f64) -> f64 {
        let n = self.n as f64;
        (n - 1.0) * beta * beta - 2.0 * n * self.lambda * beta
            + n * self.big_lambda * self.big_lambda
    }
}

/// Open interval of admissible `β`; `hi = None` means `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaInterval {
    pub lo: f64,
    pub hi: Option<f64>,
}

impl BetaInterval {
    pub fn contains(&self, beta: f64) -> bool {
        beta > self.lo && self.hi.is_none_or(|h| beta < h)
    }
}

/// Solves `n(Λ²/β² − 2λ/β + 1) < 1` for `β > 0`.
pub fn pinching_beta(inp: &PinchInput) -> Result<BetaInterval> {
    inp.validate()?;
    let n = inp.n as f64;
    let (l, u) = (inp.lambda, inp.big_lambda);
    if inp.n == 1 {
        return Ok(BetaInterval {
            lo: u * u / (2.0 * l),
            hi: None,
        });
    }
    let disc = n * n * l * l - n * (n - 1.0) * u * u;
    if !(disc > 0.0) {
        return Err(Error::Pinching(format!(
            "Lambda^2 (1 - 1/n) < lambda^2 fails: {} >= {}",
            u * u * (1.0 - 1.0 / n),
            l * l
        )));
    }
    let hi = (n * l + disc.sqrt()) / (n - 1.0);
    // Product of the roots is nΛ²/(n − 1); avoids cancellation in the small root.
    let lo = n * u * u / ((n - 1.0) * hi);
    Ok(BetaInterval { lo, hi: Some(hi) })
}

/// Samples of `u` on a uniform grid, row-major: `values[j·nx + i] = u(x0 + i·hx, y0 + j·hy)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFn {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub values: Vec<f64>,
}

impl GridFn {
    pub fn sample(
        nx: usize,
        ny: usize,
        lo: [f64; 2],
        hi: [f64; 2],
        f: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let hx = (hi[0] - lo[0]) / (nx - 1) as f64;
        let hy = (hi[1] - lo[1]) / (ny - 1) as f64;
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                values.push(f(lo[0] + i as f64 * hx, lo[1] + j as f64 * hy));
            }
        }
        Self {
            nx,
            ny,
            hx,
            hy,
            values,
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    /// Forward differences at `(i, j)`, defined for `i < nx − 1`, `j < ny − 1`.
    fn grad(&self, i: usize, j: usize) -> [f64; 2] {
        let u = self.at(i, j);
        [
            (self.at(i + 1, j) - u) / self.hx,
            (self.at(i, j + 1) - u) / self.hy,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneSidedRow {
    pub i: usize,
    pub j: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneSidedReport {
    pub holds: bool,
    pub nodes: usize,
    pub min_slack: f64,
    pub max_slack: f64,
    pub rows: Vec<OneSidedRow>,
}

impl OneSidedReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,lhs,rhs,slack\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}:{},{:e},{:e},{:e}", r.i, r.j, r.lhs, r.rhs, r.slack);
        }
        out
    }
}

/// Normalised truncated bump `exp(−1/(1 − |x|²/ε²))` on grid offsets.
fn bump_stencil(hx: f64, hy: f64, eps: f64) -> Vec<(isize, isize, f64)> {
    let rx = (eps / hx).floor() as isize;
    let ry = (eps / hy).floor() as isize;
    let mut st = Vec::new();
    for b in -ry..=ry {
        for a in -rx..=rx {
            let q = ((a as f64 * hx).powi(2) + (b as f64 * hy).powi(2)) / (eps * eps);
            if q < 1.0 {
                st.push((a, b, (-1.0 / (1.0 - q)).exp()));
            }
        }
    }
    let total: f64 = st.iter().map(|s| s.2).sum();
    for s in &mut st {
        s.2 /= total;
    }
    st
}

/// Checks `(|Du|)_ε ≤ √2 |Du_ε| + 2√2 ‖L‖₂` on every node whose mollifier
/// stencil stays inside the grid, after checking `σ_i ∂_i u ≥ L_i`.
pub fn discrete_lemma41(
    u: &GridFn,
    sigma: [f64; 2],
    bounds: [f64; 2],
    eps: f64,
) -> Result<OneSidedReport> {
    if u.nx < 2 || u.ny < 2 || u.values.len() != u.nx * u.ny {
        return Err(Error::Input(
            "grid must be at least 2x2 and fully populated".into(),
        ));
    }
    if sigma.iter().any(|s| s.abs() != 1.0) {
        return Err(Error::Input(format!("signs must be +-1, got {sigma:?}")));
    }
    if !(eps > 0.0) {
        return Err(Error::Input(format!(
            "mollifier radius must be positive, got {eps}"
        )));
    }
    let (gx, gy) = (u.nx - 1, u.ny - 1);
    let mut offending = Vec::new();
    for j in 0..gy {
        for i in 0..gx {
            let g = u.grad(i, j);
            for k in 0..2 {
                let v = sigma[k] * g[k];
                if v < bounds[k] - 1e-12 * (1.0 + bounds[k].abs() + v.abs()) {
                    offending.push(format!("({i},{j}) axis {k}: {v} < {}", bounds[k]));
                }
            }
        }
    }
    if !offending.is_empty() {
        let shown = offending
            .iter()
            .take(10)
            .cloned()
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Input(format!(
            "one-sided bound fails at {} nodes: {shown}",
            offending.len()
        )));
    }
    let st = bump_stencil(u.hx, u.hy, eps);
    let rx = st.iter().map(|s| s.0.unsigned_abs()).max().unwrap_or(0);
    let ry = st.iter().map(|s| s.1.unsigned_abs()).max().unwrap_or(0);
    let sqrt_n = 2f64.sqrt();
    let extra = 2.0 * sqrt_n * bounds[0].hypot(bounds[1]);
    let mut rows = Vec::new();
    for j in ry..gy.saturating_sub(ry) {
        for i in rx..gx.saturating_sub(rx) {
            let (mut lhs, mut mx, mut my) = (0.0, 0.0, 0.0);
            for &(a, b, w) in &st {
                let g = u.grad((i as isize + a) as usize, (j as isize + b) as usize);
                lhs += w * g[0].hypot(g[1]);
                mx += w * g[0];
                my += w * g[1];
            }
            let rhs = sqrt_n * f64::hypot(mx, my) + extra;
            rows.push(OneSidedRow {
                i,
                j,
                lhs,
                rhs,
                slack: rhs - lhs,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Input(format!(
            "mollifier radius {eps} leaves no interior nodes"
        )));
    }
    let min_slack = rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
    let max_slack = rows
        .iter()
        .map(|r| r.slack)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(OneSidedReport {
        holds: min_slack >= 0.0,
        nodes: rows.len(),
        min_slack,
        max_slack,
        rows,
    })
}
