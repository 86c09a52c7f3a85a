//! Hypothesis reports, attractivity criteria, the `G_x` diagnostics and
//! empirical permanence / convergence experiments.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::check_periodicity;
use crate::integrator::{integrate, HistoryFunction, SolverConfig};
use crate::linalg::{
    find_positive_vector_periodic, witness_margin, Constraint, FeasibilityResult, LinearProgram,
    LpOutcome, Relation, FEASIBILITY_EPS,
};
use crate::model::{
    beta_i, community_matrices_with, Kernel, NonlinearityKind, SystemModel, DEFAULT_QUAD_NODES,
    VERIFICATION_GRID,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HypothesisStatus {
    Satisfied,
    SatisfiedWeak,
    Failed,
    NotCheckable,
}

impl HypothesisStatus {
    pub fn holds(self) -> bool {
        matches!(self, Self::Satisfied | Self::SatisfiedWeak)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct HypothesisEntry {
    pub status: HypothesisStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl HypothesisEntry {
    fn new(status: HypothesisStatus, margin: f64, worst_t: f64) -> Self {
        Self {
            status,
            margin: Some(margin),
            worst_t: Some(worst_t),
            note: None,
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Lower-envelope choice for one delay term: same family, `c = max_t c(t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EnvelopeEntry {
    pub equation: usize,
    pub term: usize,
    pub family: NonlinearityKind,
    pub c_min: f64,
    pub c_max: f64,
    pub alpha: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct HypothesisReport {
    pub grid_points: usize,
    pub h0: HypothesisEntry,
    pub h1: HypothesisEntry,
    pub h2: HypothesisEntry,
    pub h3: HypothesisEntry,
    pub h4: HypothesisEntry,
    pub h5: HypothesisEntry,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_u: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_v: Option<Vec<f64>>,
    pub envelope: Vec<EnvelopeEntry>,
}

impl HypothesisReport {
    pub fn entries(&self) -> [(&'static str, &HypothesisEntry); 6] {
        [
            ("H0", &self.h0),
            ("H1", &self.h1),
            ("H2", &self.h2),
            ("H3", &self.h3),
            ("H4", &self.h4),
            ("H5", &self.h5),
        ]
    }

    /// All of H0–H5 hold, weak H2 included.
    pub fn all_satisfied(&self) -> bool {
        self.entries().iter().all(|(_, e)| e.status.holds())
    }

    pub fn any_weak(&self) -> bool {
        self.entries()
            .iter()
            .any(|(_, e)| e.status == HypothesisStatus::SatisfiedWeak)
    }
}

fn grid_min<F: Fn(f64) -> Result<f64>>(omega: f64, points: usize, f: F) -> Result<(f64, f64)> {
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..points {
        let t = k as f64 * omega / points as f64;
        let v = f(t)?;
        if v < best.0 {
            best = (v, t);
        }
    }
    Ok(best)
}

pub fn check_hypotheses(model: &SystemModel) -> Result<HypothesisReport> {
    check_hypotheses_with(model, VERIFICATION_GRID, DEFAULT_QUAD_NODES)
}

pub fn check_hypotheses_with(
    model: &SystemModel,
    grid: usize,
    quad_nodes: usize,
) -> Result<HypothesisReport> {
    use HypothesisStatus::*;
    let omega = model.omega;
    let fine = 4 * grid;

    // H0
    let mut worst = (0.0_f64, 0.0);
    let mut periodic = true;
    for (_, _, e) in model.expressions() {
        let c = e.check_periodicity(grid)?;
        periodic &= c.periodic;
        if c.max_discrepancy > worst.0 {
            worst = (c.max_discrepancy, c.worst_t);
        }
    }
    let h0 = HypothesisEntry::new(if periodic { Satisfied } else { Failed }, worst.0, worst.1)
        .with_note("margin is the largest periodicity discrepancy");

    // H1: a_ij >= 0 is enforced at load; d_i > 0 is checked here
    let mut d_min = (f64::INFINITY, 0.0);
    for eq in &model.equations {
        let m = grid_min(omega, fine, |t| Ok(eq.d.eval(t)?))?;
        if m.0 < d_min.0 {
            d_min = m;
        }
    }
    let h1 = HypothesisEntry::new(
        if d_min.0 > 0.0 { Satisfied } else { Failed },
        d_min.0,
        d_min.1,
    )
    .with_note("margin is min d_i(t)");

    // H2
    let d_minus_a = |t: f64| -> Result<DMatrix<f64>> {
        let b = community_matrices_with(model, t, quad_nodes)?;
        Ok(b.d - b.a)
    };
    let (h2, witness_u) = classify_h2(omega, grid, &d_minus_a)?;

    // H3
    let mut b_min = (f64::INFINITY, 0.0);
    for i in 0..model.n {
        let m = grid_min(omega, grid, |t| beta_i(model, i, t, quad_nodes))?;
        if m.0 < b_min.0 {
            b_min = m;
        }
    }
    let h3 = HypothesisEntry::new(
        if b_min.0 > 0.0 { Satisfied } else { Failed },
        b_min.0,
        b_min.1,
    )
    .with_note("margin is min beta_i(t)");

    // H4
    let mut envelope = Vec::new();
    let mut c_low = (f64::INFINITY, 0.0);
    for (i, eq) in model.equations.iter().enumerate() {
        for (k, term) in eq.terms.iter().enumerate() {
            let nl = &term.nonlinearity;
            let (lo, hi) = nl.c().range(grid)?;
            let m = grid_min(omega, grid, |t| Ok(nl.c().eval(t)?))?;
            if m.0 < c_low.0 {
                c_low = m;
            }
            envelope.push(EnvelopeEntry {
                equation: i + 1,
                term: k + 1,
                family: nl.kind(),
                c_min: lo,
                c_max: hi,
                alpha: nl.alpha(),
                scale: nl.lower_envelope_scale(),
            });
        }
    }
    let h4 = if envelope.is_empty() {
        HypothesisEntry {
            status: Satisfied,
            margin: None,
            worst_t: None,
            note: Some("no delay terms".into()),
        }
    } else {
        HypothesisEntry::new(
            if c_low.0 > 0.0 { Satisfied } else { Failed },
            c_low.0,
            c_low.1,
        )
        .with_note("built-in families are bounded iff c(t) > 0; margin is min c(t)")
    };

    // H5
    let m_of = |t: f64| Ok(community_matrices_with(model, t, quad_nodes)?.m);
    let r5 = find_positive_vector_periodic(omega, grid, m_of)?;
    let h5 = HypothesisEntry::new(
        if r5.found { Satisfied } else { Failed },
        r5.margin,
        r5.worst_time.unwrap_or(0.0),
    );
    let witness_v = r5.found.then(|| r5.witness.clone());

    Ok(HypothesisReport {
        grid_points: grid,
        h0,
        h1,
        h2,
        h3,
        h4,
        h5,
        witness_u,
        witness_v,
        envelope,
    })
}

/// (H2): strict margin ⇒ satisfied; zero margin with a nonnegative profile
/// that is strictly positive at some `t0` ⇒ satisfied-weak.
fn classify_h2<F>(omega: f64, grid: usize, f: &F) -> Result<(HypothesisEntry, Option<Vec<f64>>)>
where
    F: Fn(f64) -> Result<DMatrix<f64>>,
{
    use HypothesisStatus::*;
    let r = find_positive_vector_periodic(omega, grid, f)?;
    let t_worst = r.worst_time.unwrap_or(0.0);
    if r.found {
        return Ok((
            HypothesisEntry::new(Satisfied, r.margin, t_worst),
            Some(r.witness),
        ));
    }
    if r.margin.abs() > FEASIBILITY_EPS {
        return Ok((HypothesisEntry::new(Failed, r.margin, t_worst), None));
    }
    let fine_points = 4 * grid;
    let fine: Vec<DMatrix<f64>> = (0..fine_points)
        .map(|k| f(k as f64 * omega / fine_points as f64))
        .collect::<Result<_>>()?;
    let weak_ok = |v: &[f64]| -> Option<f64> {
        if v.iter().any(|x| *x <= FEASIBILITY_EPS) {
            return None;
        }
        let (m, _) = witness_margin(&fine, v);
        if m < -FEASIBILITY_EPS {
            return None;
        }
        let vv = DVector::from_column_slice(v);
        fine.iter()
            .enumerate()
            .map(|(k, mat)| ((mat * &vv).min(), k))
            .filter(|(s, _)| *s > FEASIBILITY_EPS)
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, k)| k as f64 * omega / fine_points as f64)
    };
    let weak = |v: Vec<f64>, t0: f64| {
        (
            HypothesisEntry::new(SatisfiedWeak, r.margin, t_worst).with_note(format!(
                "nonnegative everywhere, strictly positive at t0 = {t0:.6}"
            )),
            Some(v),
        )
    };
    if let Some(t0) = weak_ok(&r.witness) {
        return Ok(weak(r.witness.clone(), t0));
    }
    // second LP: keep K v >= 0 on the grid, push strictness at candidate t0
    let coarse: Vec<DMatrix<f64>> = (0..grid)
        .map(|k| f(k as f64 * omega / grid as f64))
        .collect::<Result<_>>()?;
    let vv = DVector::from_column_slice(&r.witness);
    let mut candidates: Vec<(f64, usize)> = coarse
        .iter()
        .enumerate()
        .map(|(k, m)| ((m * &vv).min(), k))
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, k0) in candidates.iter().take(6) {
        if let Some(v) = strict_at(&coarse, k0)? {
            if let Some(t0) = weak_ok(&v) {
                return Ok(weak(v, t0));
            }
        }
    }
    Ok((
        HypothesisEntry::new(Failed, r.margin, t_worst)
            .with_note("zero margin but no strictly positive point found"),
        None,
    ))
}

/// `max s` s.t. `K_j v >= 0` ∀j, `K_{k0} v >= s`, `v >= s`, `Σv = n`.
fn strict_at(matrices: &[DMatrix<f64>], k0: usize) -> Result<Option<Vec<f64>>> {
    let n = matrices[0].nrows();
    let nv = n + 2;
    let mut objective = vec![0.0; nv];
    objective[n] = 1.0;
    objective[n + 1] = -1.0;
    let mut rows = Vec::new();
    let row = |m: &DMatrix<f64>, i: usize, with_s: bool| {
        let mut coeffs = vec![0.0; nv];
        for j in 0..n {
            coeffs[j] = m[(i, j)];
        }
        if with_s {
            coeffs[n] = -1.0;
            coeffs[n + 1] = 1.0;
        }
        Constraint {
            coeffs,
            relation: Relation::Ge,
            rhs: 0.0,
        }
    };
    for (k, m) in matrices.iter().enumerate() {
        for i in 0..n {
            rows.push(row(m, i, k == k0));
        }
    }
    let id = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        rows.push(row(&id, i, true));
    }
    let mut norm = vec![0.0; nv];
    norm[..n].fill(1.0);
    rows.push(Constraint {
        coeffs: norm,
        relation: Relation::Eq,
        rhs: n as f64,
    });
    match (LinearProgram { objective, rows }).maximize()? {
        LpOutcome::Optimal { x, value } if value > FEASIBILITY_EPS => Ok(Some(x[..n].to_vec())),
        _ => Ok(None),
    }
}

// ---------------------------------------------------------------------------
// Corollaries

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CorollaryCheck {
    pub holds: bool,
    pub margin: f64,
    pub worst_t: f64,
}

/// Scalar existence test `Σ_k β_k(t) > d(t)` (kernel masses included).
pub fn check_corollary_31(model: &SystemModel) -> Result<CorollaryCheck> {
    if model.n != 1 {
        return Err(Error::InvalidInput(
            "the scalar criterion needs n = 1".into(),
        ));
    }
    let (margin, worst_t) = grid_min(model.omega, VERIFICATION_GRID, |t| {
        Ok(beta_i(model, 0, t, DEFAULT_QUAD_NODES)? - model.equations[0].d.eval(t)?)
    })?;
    Ok(CorollaryCheck {
        holds: margin > 0.0,
        margin,
        worst_t,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Corollary33Report {
    pub condition_i: HypothesisStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_d1_over_a1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_a2_over_d2: Option<f64>,
    pub condition_ii: FeasibilityResult,
    /// Full (H2) LP, used when (i) cannot be evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h2_fallback: Option<FeasibilityResult>,
    pub holds: bool,
}

/// Planar criterion: (i) `min d₁/a₁ > max a₂/d₂`, (ii) `M(t)u ≫ 0`.
pub fn check_corollary_33(model: &SystemModel) -> Result<Corollary33Report> {
    if model.n != 2 {
        return Err(Error::InvalidInput(
            "the planar criterion needs n = 2".into(),
        ));
    }
    let single = |i: usize| -> Result<&crate::expr::PeriodicExpr> {
        match model.equations[i].off_diagonal.as_slice() {
            [(_, a)] => Ok(a),
            _ => Err(Error::InvalidInput(format!(
                "equation {} needs exactly one off-diagonal coefficient",
                i + 1
            ))),
        }
    };
    let (a1, a2) = (single(0)?, single(1)?);
    let (d1, d2) = (&model.equations[0].d, &model.equations[1].d);
    let omega = model.omega;
    let grid = VERIFICATION_GRID;
    let mut a1_min = f64::INFINITY;
    let mut d2_min = f64::INFINITY;
    let mut r1 = f64::INFINITY;
    let mut r2 = f64::NEG_INFINITY;
    for k in 0..grid {
        let t = k as f64 * omega / grid as f64;
        let (va1, va2, vd1, vd2) = (a1.eval(t)?, a2.eval(t)?, d1.eval(t)?, d2.eval(t)?);
        a1_min = a1_min.min(va1);
        d2_min = d2_min.min(vd2);
        if va1 > 0.0 {
            r1 = r1.min(vd1 / va1);
        }
        if vd2 > 0.0 {
            r2 = r2.max(va2 / vd2);
        }
    }
    let m_of = |t: f64| Ok(community_matrices_with(model, t, DEFAULT_QUAD_NODES)?.m);
    let condition_ii = find_positive_vector_periodic(omega, grid, m_of)?;
    let checkable = a1_min > 1e-12 && d2_min > 1e-12;
    let (condition_i, h2_fallback, h2_ok) = if checkable {
        let status = if r1 > r2 {
            HypothesisStatus::Satisfied
        } else {
            HypothesisStatus::Failed
        };
        (status, None, status.holds())
    } else {
        let d_minus_a = |t: f64| {
            let b = community_matrices_with(model, t, DEFAULT_QUAD_NODES)?;
            Ok(b.d - b.a)
        };
        let fb = find_positive_vector_periodic(omega, grid, d_minus_a)?;
        let ok = fb.found;
        (HypothesisStatus::NotCheckable, Some(fb), ok)
    };
    Ok(Corollary33Report {
        condition_i,
        min_d1_over_a1: checkable.then_some(r1),
        max_a2_over_d2: checkable.then_some(r2),
        holds: h2_ok && condition_ii.found,
        condition_ii,
        h2_fallback,
    })
}

// ---------------------------------------------------------------------------
// α_i(v), γ_i(v)

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AlphaGamma {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub alpha_t: Vec<f64>,
    pub gamma_t: Vec<f64>,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Minimizes `f` on `[a, b]` by golden-section search to `tol` in t.
fn golden_min<F: FnMut(f64) -> Result<f64>>(
    mut a: f64,
    mut b: f64,
    tol: f64,
    mut f: F,
) -> Result<(f64, f64)> {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d)?;
        }
    }
    let t = 0.5 * (a + b);
    Ok((f(t)?, t))
}

/// Grid extremum of a periodic function refined by golden section; `sign`
/// is +1 for the minimum and −1 for the maximum.
fn refined_extremum<F: FnMut(f64) -> Result<f64>>(
    omega: f64,
    grid: usize,
    sign: f64,
    mut f: F,
) -> Result<(f64, f64)> {
    let h = omega / grid as f64;
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..grid {
        let t = k as f64 * h;
        let v = sign * f(t)?;
        if v < best.0 {
            best = (v, t);
        }
    }
    let (v, t) = golden_min(best.1 - h, best.1 + h, 1e-10, |t| Ok(sign * f(t)?))?;
    let out = if v < best.0 { (v, t) } else { best };
    Ok((sign * out.0, out.1.rem_euclid(omega)))
}

/// `α_i(v) = min_t ρ_i(t)`, `γ_i(v) = max_t ρ_i(t)` for
/// `ρ_i = β_i v_i / (d_i v_i − Σ_j a_ij v_j)`.
pub fn compute_alpha_gamma(model: &SystemModel, v: &[f64]) -> Result<AlphaGamma> {
    if v.len() != model.n || v.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::InvalidInput(
            "v must be a positive vector of length n".into(),
        ));
    }
    let omega = model.omega;
    let grid = VERIFICATION_GRID;
    let mut out = AlphaGamma {
        alpha: Vec::with_capacity(model.n),
        gamma: Vec::with_capacity(model.n),
        alpha_t: Vec::with_capacity(model.n),
        gamma_t: Vec::with_capacity(model.n),
    };
    for (i, eq) in model.equations.iter().enumerate() {
        let ratio = |t: f64| -> Result<f64> {
            let mut den = eq.d.eval(t)? * v[i];
            for (j, a) in &eq.off_diagonal {
                den -= a.eval(t)? * v[*j];
            }
            if !(den > 0.0) {
                return Err(Error::Hypothesis(format!(
                    "d_{0}(t) v_{0} - Σ a_{0}j(t) v_j = {den:e} <= 0 at t = {t}",
                    i + 1
                )));
            }
            Ok(beta_i(model, i, t, DEFAULT_QUAD_NODES)? * v[i] / den)
        };
        let (lo, lo_t) = refined_extremum(omega, grid, 1.0, ratio)?;
        let (hi, hi_t) = refined_extremum(omega, grid, -1.0, ratio)?;
        out.alpha.push(lo);
        out.alpha_t.push(lo_t);
        out.gamma.push(hi);
        out.gamma_t.push(hi_t);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Attractivity

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AttractivityReport {
    pub v: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_i: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_i: Option<Vec<f64>>,
    pub c0: f64,
    pub c0_sup: f64,
    pub threshold: f64,
    /// Constant coefficients: delays need not be period multiples.
    pub autonomous: bool,
    pub delays_are_multiples: bool,
    /// `m_ik` per equation and term (multiples of `effective_period`).
    pub delay_multiples: Vec<Vec<Option<u32>>>,
    pub effective_period: f64,
    /// More than one delay term in some equation.
    pub extended_case: bool,
    pub condition_met: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Smallest `q <= 16` with `r·q` an integer (within tolerance), and that integer.
fn rational_multiple(r: f64, tol: f64) -> Option<(u32, u32)> {
    (1..=16u32).find_map(|q| {
        let p = (r * q as f64).round();
        ((r * q as f64 - p).abs() <= tol * q as f64 && p >= 1.0).then_some((p as u32, q))
    })
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Detects constant delays that are integer multiples of the period, or of
/// `ω/q` when every coefficient is also `ω/q`-periodic.
/// `(usable, m_ik, effective period, notes)`
type DelayMultiples = (bool, Vec<Vec<Option<u32>>>, f64, Vec<String>);

fn detect_multiples(model: &SystemModel) -> Result<DelayMultiples> {
    let omega = model.omega;
    let mut notes = Vec::new();
    let mut fractions: Vec<Vec<Option<(u32, u32)>>> = Vec::new();
    for (i, eq) in model.equations.iter().enumerate() {
        let mut row = Vec::new();
        for (k, term) in eq.terms.iter().enumerate() {
            let entry = match &term.kernel {
                Kernel::Discrete { tau } => {
                    let (lo, hi) = tau.range(VERIFICATION_GRID)?;
                    if hi - lo > 1e-9 {
                        notes.push(format!(
                            "equation {} term {}: delay is not constant",
                            i + 1,
                            k + 1
                        ));
                        None
                    } else {
                        rational_multiple(lo / omega, 1e-9 / omega)
                    }
                }
                Kernel::DistributedDensity { .. } => {
                    notes.push(format!(
                        "equation {} term {}: distributed delay",
                        i + 1,
                        k + 1
                    ));
                    None
                }
            };
            row.push(entry);
        }
        fractions.push(row);
    }
    if fractions.iter().flatten().any(Option::is_none) || fractions.iter().all(Vec::is_empty) {
        let multiples = fractions
            .iter()
            .map(|r| {
                r.iter()
                    .map(|e| e.filter(|(_, q)| *q == 1).map(|(p, _)| p))
                    .collect()
            })
            .collect();
        return Ok((false, multiples, omega, notes));
    }
    let q = fractions
        .iter()
        .flatten()
        .flatten()
        .fold(1u32, |acc, (_, q)| acc / gcd(acc, *q) * q);
    let mut usable = q == 1;
    if q > 1 {
        if q > 16 {
            notes.push(format!("common period denominator {q} exceeds 16"));
        } else {
            let period = omega / q as f64;
            usable = true;
            for (_, label, e) in model.expressions() {
                if !check_periodicity(e.ast(), period, VERIFICATION_GRID)?.periodic {
                    usable = false;
                    notes.push(format!(
                        "delay is a rational multiple of ω but {label} is not ω/{q}-periodic"
                    ));
                    break;
                }
            }
        }
    }
    let period = if usable { omega / q as f64 } else { omega };
    let multiples = fractions
        .iter()
        .map(|r| {
            r.iter()
                .map(|e| {
                    e.and_then(|(p, qi)| {
                        let m = p * (q / qi);
                        (usable || qi == 1).then_some(if usable { m } else { p })
                    })
                })
                .collect()
        })
        .collect::<Vec<Vec<Option<u32>>>>();
    if q > 1 && usable {
        notes.push(format!("period rescaled to ω/{q}"));
    }
    Ok((usable, multiples, period, notes))
}

pub fn check_attractivity(model: &SystemModel, v: &[f64]) -> Result<AttractivityReport> {
    if !model.all_ricker() {
        return Err(Error::Hypothesis(
            "attractivity criterion needs Ricker nonlinearities".into(),
        ));
    }
    if v.len() != model.n || v.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::InvalidInput(
            "v must be a positive vector of length n".into(),
        ));
    }
    let mut notes = Vec::new();
    let mut c0 = f64::INFINITY;
    let mut c0_sup = f64::NEG_INFINITY;
    for (i, eq) in model.equations.iter().enumerate() {
        for term in &eq.terms {
            let (lo, hi) = term.nonlinearity.c().range(VERIFICATION_GRID)?;
            c0 = c0.min(v[i] * lo);
            c0_sup = c0_sup.max(v[i] * hi);
        }
    }
    let has_terms = c0.is_finite();
    let threshold = if has_terms && c0_sup > 0.0 {
        (2.0 * c0 / c0_sup).exp()
    } else {
        f64::NAN
    };
    let (alpha_i, gamma_i) = match compute_alpha_gamma(model, v) {
        Ok(ag) => (Some(ag.alpha), Some(ag.gamma)),
        Err(Error::Hypothesis(msg)) => {
            notes.push(msg);
            (None, None)
        }
        Err(e) => return Err(e),
    };
    let autonomous = model.is_autonomous()? && {
        let mut constant_delays = true;
        for eq in &model.equations {
            for term in &eq.terms {
                let (lo, hi) = term.kernel.tau().range(VERIFICATION_GRID)?;
                constant_delays &=
                    hi - lo < 1e-12 && matches!(term.kernel, Kernel::Discrete { .. });
            }
        }
        constant_delays
    };
    let (multiples_ok, delay_multiples, effective_period, mut delay_notes) =
        detect_multiples(model)?;
    notes.append(&mut delay_notes);
    let extended_case = model.equations.iter().any(|eq| eq.terms.len() > 1);
    if extended_case {
        notes.push("several delay terms in one equation (extended case)".into());
    }
    let delays_ok = multiples_ok || autonomous;
    if autonomous && !multiples_ok {
        notes.push("constant coefficients: delays need not be multiples of the period".into());
    }
    let condition_met = match (&alpha_i, &gamma_i) {
        (Some(a), Some(g)) => {
            has_terms && a.iter().all(|x| *x > 1.0) && g.iter().all(|x| *x < threshold) && delays_ok
        }
        _ => false,
    };
    Ok(AttractivityReport {
        v: v.to_vec(),
        alpha_i,
        gamma_i,
        c0,
        c0_sup,
        threshold,
        autonomous,
        delays_are_multiples: multiples_ok,
        delay_multiples,
        effective_period,
        extended_case,
        condition_met,
        notes,
    })
}

// ---------------------------------------------------------------------------
// G_x and δ(x)

/// `G_x(y) = (h(y) − h(x))/(y − x)` for `h(y) = y e^{−y}`, `G_x(x) = h'(x)`.
pub fn g_x(x: f64, y: f64) -> f64 {
    let d = y - x;
    if d.abs() < 1e-6 {
        // h' + h'' d / 2 + h''' d² / 6
        let e = (-x).exp();
        (1.0 - x) * e + (x - 2.0) * e * d / 2.0 + (3.0 - x) * e * d * d / 6.0
    } else {
        (y * (-y).exp() - x * (-x).exp()) / d
    }
}

/// `δ(x) = max_{m <= y <= y_max} |G_x(y)|` by a 4096-point grid and
/// golden-section refinement around the best grid point.
pub fn delta_of_x(x: f64, m: f64, y_max: f64) -> Result<f64> {
    if !(x > 0.0 && x < 2.0) {
        return Err(Error::InvalidInput(format!("x = {x} must lie in (0, 2)")));
    }
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::InvalidInput(format!("m = {m} must lie in (0, 1)")));
    }
    if !(y_max > m) {
        return Err(Error::InvalidInput("y_max must exceed m".into()));
    }
    let points = 4096;
    let step = (y_max - m) / (points - 1) as f64;
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
    for k in 0..points {
        let v = g_x(x, m + k as f64 * step).abs();
        if v > best {
            best = v;
            arg = k;
        }
    }
    let a = (m + (arg as f64 - 1.0) * step).max(m);
    let b = (m + (arg as f64 + 1.0) * step).min(y_max);
    let (neg, _) = golden_min(a, b, 1e-12, |y| Ok(-g_x(x, y).abs()))?;
    Ok(best.max(-neg))
}

// ---------------------------------------------------------------------------
// Experiments

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PermanenceEstimate {
    pub m_emp: f64,
    pub l_emp: f64,
    pub trials: usize,
    pub horizon_periods: usize,
    pub tail_periods: usize,
    pub seed: u64,
    pub permanence_observed: bool,
}

/// Tail values below this count as extinction.
pub const EXTINCTION_LEVEL: f64 = 1e-6;

pub fn estimate_permanence(
    model: &SystemModel,
    trials: usize,
    horizon_periods: usize,
    tail_periods: usize,
    seed: u64,
    config: &SolverConfig,
) -> Result<PermanenceEstimate> {
    if trials == 0 || tail_periods == 0 || tail_periods > horizon_periods {
        return Err(Error::InvalidInput(
            "need trials >= 1 and 1 <= tailPeriods <= horizonPeriods".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (1e-3f64.ln(), 1e2f64.ln());
    let starts: Vec<Vec<f64>> = (0..trials)
        .map(|_| {
            (0..model.n)
                .map(|_| rng.random_range(lo..hi).exp())
                .collect()
        })
        .collect();
    let tails: Vec<(f64, f64)> = starts
        .par_iter()
        .map(|x0| -> Result<(f64, f64)> {
            let traj = integrate(
                model,
                HistoryFunction::constant(model, config, x0),
                horizon_periods as f64 * model.omega,
                config,
            )?;
            let h = &traj.history;
            let first = h.len() - 1 - tail_periods * config.steps_per_period;
            let mut range = (f64::INFINITY, f64::NEG_INFINITY);
            for k in first..h.len() {
                for v in h.knot_values(k) {
                    range = (range.0.min(*v), range.1.max(*v));
                }
            }
            Ok(range)
        })
        .collect::<Result<_>>()?;
    let m_emp = tails.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let l_emp = tails.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(PermanenceEstimate {
        m_emp,
        l_emp,
        trials,
        horizon_periods,
        tail_periods,
        seed,
        permanence_observed: m_emp > EXTINCTION_LEVEL && l_emp.is_finite(),
    })
}

/// Sup over the final period of `|x_A(t) − x_B(t)|` after `horizon_periods`.
pub fn convergence_experiment(
    model: &SystemModel,
    phi_a: HistoryFunction,
    phi_b: HistoryFunction,
    horizon_periods: usize,
    config: &SolverConfig,
) -> Result<f64> {
    let t_end = horizon_periods as f64 * model.omega;
    let (a, b) = rayon::join(
        || integrate(model, phi_a, t_end, config),
        || integrate(model, phi_b, t_end, config),
    );
    let (a, b) = (a?, b?);
    let (ha, hb) = (&a.history, &b.history);
    let steps = config.steps_per_period;
    let mut worst: f64 = 0.0;
    for k in ha.len() - 1 - steps..ha.len() {
        for (x, y) in ha.knot_values(k).iter().zip(hb.knot_values(k)) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_model;
    use std::f64::consts::{E, PI};

    fn nicholson(d: &str, beta: &str, c: &str, tau: &str, omega: f64) -> SystemModel {
        load_model(&format!(
            r#"{{"n":1,"omega":{omega},"equations":[{{"d":"{d}","terms":[{{"beta":"{beta}",
            "kernel":{{"type":"discrete","tau":"{tau}"}},"nonlinearity":{{"type":"ricker","c":"{c}"}}}}]}}]}}"#
        ))
        .unwrap()
    }

    fn mackey_glass_pair(eps: f64, delta: f64) -> SystemModel {
        let json = format!(
            r#"{{"n":2,"omega":{PI},"params":{{"eps1":{eps},"eps2":{eps},"delta1":{delta},"delta2":{delta}}},
            "equations":[
             {{"d":"eps1+sin(t)^2","a":{{"2":"abs(cos(2*t))"}},"terms":[{{"beta":"delta1+cos(t)^2",
               "kernel":{{"type":"discrete","tau":"sin(t)^2"}},"nonlinearity":{{"type":"mackey_glass","c":"exp(-sin(t)^2)","alpha":1}}}}]}},
             {{"d":"eps2+cos(t)^2","a":{{"1":"abs(cos(2*t))"}},"terms":[{{"beta":"delta2+sin(t)^2",
               "kernel":{{"type":"discrete","tau":"cos(t)^2"}},"nonlinearity":{{"type":"mackey_glass","c":"2+cos(2*t)","alpha":1}}}}]}}]}}"#
        );
        load_model(&json).unwrap()
    }

    fn ricker_density_pair(a12: f64, a21: f64, eps: f64, beta: f64) -> SystemModel {
        let json = format!(
            r#"{{"n":2,"omega":{PI},"params":{{"a12":{a12},"a21":{a21},"eps1":{eps},"eps2":{eps},"beta1":{beta},"beta2":{beta}}},
            "equations":[
             {{"d":"eps1+cos(t)^2","a":{{"2":"a12*exp(-2+sin(t)^2)"}},"terms":[{{"beta":"exp(cos(t)^2)",
               "kernel":{{"type":"density","tau":"beta1*exp(-cos(t)^2)+1","gamma":"1"}},"nonlinearity":{{"type":"ricker","c":"1+abs(sin(t))"}}}}]}},
             {{"d":"eps2+sin(t)^2","a":{{"1":"a21*exp(cos(t)^2)"}},"terms":[{{"beta":"exp(sin(t)^2)",
               "kernel":{{"type":"density","tau":"beta2*exp(-sin(t)^2)+1","gamma":"1"}},"nonlinearity":{{"type":"ricker","c":"exp(sin(2*t))"}}}}]}}]}}"#
        );
        load_model(&json).unwrap()
    }

    #[test]
    fn mackey_glass_pair_hypotheses() {
        let r = check_hypotheses(&mackey_glass_pair(1.0, 2.0)).unwrap();
        for (name, e) in r.entries() {
            assert!(e.status.holds(), "{name}: {e:?}");
        }
        // ε1 ε2 = 1 forces u = (1,1) with zero margin
        assert_eq!(r.h2.status, HypothesisStatus::SatisfiedWeak);
        let u = r.witness_u.unwrap();
        assert!((u[0] - u[1]).abs() < 1e-9);
        let v = r.witness_v.unwrap();
        assert!((v[0] - v[1]).abs() < 1e-9);
        // larger ε leaves room for a strict witness
        let strict = check_hypotheses(&mackey_glass_pair(2.0, 3.0)).unwrap();
        assert_eq!(strict.h2.status, HypothesisStatus::Satisfied);
    }

    #[test]
    fn ricker_density_pair_hypotheses() {
        let r = check_hypotheses(&ricker_density_pair(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert!(r.all_satisfied(), "{r:?}");
        // conditions on the parameters
        let (eps, a) = (1.0f64, 1.0f64);
        assert!(eps * eps + eps >= a * a);
        assert!(1.0 - eps + 1.0 >= 0.0);
    }

    #[test]
    fn h5_fails_when_births_below_deaths() {
        let m = nicholson("1", "0.5", "1", "1", 1.0);
        let r = check_hypotheses(&m).unwrap();
        assert_eq!(r.h5.status, HypothesisStatus::Failed);
        assert!(r.witness_v.is_none());
        assert!(!r.all_satisfied());
    }

    #[test]
    fn h5_implies_h2_on_fixtures() {
        for m in [
            mackey_glass_pair(1.0, 2.0),
            ricker_density_pair(1.0, 1.0, 1.0, 1.0),
        ] {
            let r = check_hypotheses(&m).unwrap();
            assert!(r.h5.status.holds() && r.h2.status.holds());
        }
    }

    #[test]
    fn scalar_existence_test() {
        let r = check_corollary_31(&nicholson("1", "exp(2)", "1", "1", 1.0)).unwrap();
        assert!(r.holds && (r.margin - (E * E - 1.0)).abs() < 1e-12);
        let r = check_corollary_31(&nicholson("2", "1+sin(t)^2", "1", "1", PI)).unwrap();
        assert!(!r.holds && r.margin <= 0.0);
        let r = check_corollary_31(&nicholson("1+cos(t)^2", "3", "1", "1", PI)).unwrap();
        assert!(r.holds && (r.margin - 1.0).abs() < 1e-12);
        assert!(check_corollary_31(&mackey_glass_pair(1.0, 2.0)).is_err());
    }

    fn planar(a1: &str, a2: &str, d1: &str, d2: &str, b1: &str, b2: &str) -> SystemModel {
        load_model(&format!(
            r#"{{"n":2,"omega":{PI},"equations":[
             {{"d":"{d1}","a":{{"2":"{a1}"}},"terms":[{{"beta":"{b1}","kernel":{{"type":"discrete","tau":"sin(t)^2"}},"nonlinearity":{{"type":"mackey_glass","c":"1","alpha":1}}}}]}},
             {{"d":"{d2}","a":{{"1":"{a2}"}},"terms":[{{"beta":"{b2}","kernel":{{"type":"discrete","tau":"cos(t)^2"}},"nonlinearity":{{"type":"mackey_glass","c":"1","alpha":1}}}}]}}]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn planar_existence_test() {
        // same diagonal coefficients, but with a strictly positive coupling
        let pass = planar(
            "0.5+0.25*cos(2*t)",
            "0.5+0.25*cos(2*t)",
            "1+sin(t)^2",
            "1+cos(t)^2",
            "2+cos(t)^2",
            "2+sin(t)^2",
        );
        let r = check_corollary_33(&pass).unwrap();
        // oracle: min (1+sin²)/(0.5+0.25cos2t) and max (0.5+0.25cos2t)/(1+cos²)
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..100_000 {
            let t = k as f64 * PI / 100_000.0;
            let a = 0.5 + 0.25 * (2.0 * t).cos();
            lo = lo.min((1.0 + t.sin().powi(2)) / a);
            hi = hi.max(a / (1.0 + t.cos().powi(2)));
        }
        assert!(lo > hi);
        assert!((r.min_d1_over_a1.unwrap() - lo).abs() < 1e-6);
        assert!((r.max_a2_over_d2.unwrap() - hi).abs() < 1e-6);
        assert_eq!(r.condition_i, HypothesisStatus::Satisfied);
        assert!(r.condition_ii.found && r.holds);

        let fail = planar("2", "2", "1", "1", "3", "3");
        let r = check_corollary_33(&fail).unwrap();
        assert_eq!(r.condition_i, HypothesisStatus::Failed);
        assert!(!r.holds);

        // β > d everywhere: (ii) holds with u = (1,1)
        let ii = planar("0.1", "0.1", "1", "1", "2+sin(t)^2", "2");
        assert!(check_corollary_33(&ii).unwrap().condition_ii.found);

        // vanishing coupling: (i) not checkable, full LP decides
        let r = check_corollary_33(&mackey_glass_pair(1.0, 2.0)).unwrap();
        assert_eq!(r.condition_i, HypothesisStatus::NotCheckable);
        assert!(r.h2_fallback.is_some());
    }

    #[test]
    fn alpha_gamma_examples() {
        let ag = compute_alpha_gamma(&nicholson("1", "exp(2)", "1", "1", 1.0), &[1.0]).unwrap();
        assert!((ag.alpha[0] - E * E).abs() < 1e-12 && (ag.gamma[0] - E * E).abs() < 1e-12);
        let ag = compute_alpha_gamma(&nicholson("1", "4+sin(t)^2", "1", "pi", PI), &[1.0]).unwrap();
        assert!((ag.alpha[0] - 4.0).abs() < 1e-12);
        assert!((ag.gamma[0] - 5.0).abs() < 1e-12);
        let bad = nicholson("1", "2", "1", "1", 1.0);
        let coupled =
            load_model(r#"{"n":2,"omega":1,"equations":[{"d":"1","a":{"2":"3"}},{"d":"1"}]}"#)
                .unwrap();
        assert!(matches!(
            compute_alpha_gamma(&coupled, &[1.0, 1.0]),
            Err(Error::Hypothesis(_))
        ));
        assert!(compute_alpha_gamma(&bad, &[0.0]).is_err());
    }

    fn planar_1_9() -> SystemModel {
        load_model(&format!(
            r#"{{"n":2,"omega":{PI},"equations":[
             {{"d":"2","a":{{"2":"0.5"}},"terms":[{{"beta":"4+sin(t)^2","kernel":{{"type":"discrete","tau":"pi"}},"nonlinearity":{{"type":"ricker","c":"1"}}}}]}},
             {{"d":"2","a":{{"1":"0.5"}},"terms":[{{"beta":"3+cos(t)^2","kernel":{{"type":"discrete","tau":"pi"}},"nonlinearity":{{"type":"ricker","c":"1"}}}}]}}]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn planar_ratios_inside_window() {
        let ag = compute_alpha_gamma(&planar_1_9(), &[1.0, 1.0]).unwrap();
        // c_i(t)/(a_i − b_i): (4+sin²)/1.5 ∈ [2.67, 3.33], (3+cos²)/1.5 ∈ [2, 2.67]
        assert!((ag.alpha[0] - 4.0 / 1.5).abs() < 1e-12 && (ag.gamma[0] - 5.0 / 1.5).abs() < 1e-12);
        assert!((ag.alpha[1] - 2.0).abs() < 1e-12 && (ag.gamma[1] - 4.0 / 1.5).abs() < 1e-12);
        for i in 0..2 {
            assert!(ag.alpha[i] > 1.0 && ag.gamma[i] < E * E);
        }
        let r = check_attractivity(&planar_1_9(), &[1.0, 1.0]).unwrap();
        assert!(r.condition_met && r.delays_are_multiples);
    }

    #[test]
    fn attractivity_examples() {
        let cor41 = nicholson("1", "4+sin(t)^2", "1", "pi", PI);
        let r = check_attractivity(&cor41, &[1.0]).unwrap();
        assert!(r.condition_met, "{r:?}");
        assert_eq!(r.delay_multiples, vec![vec![Some(1)]]);
        assert!((r.threshold - E * E).abs() < 1e-12);

        let boundary = nicholson("1", "exp(2)", "1", "pi", PI);
        assert!(!check_attractivity(&boundary, &[1.0]).unwrap().condition_met);

        let half = nicholson("1", "4+sin(t)^2", "1", "pi/2", PI);
        let r = check_attractivity(&half, &[1.0]).unwrap();
        assert!(!r.delays_are_multiples && !r.condition_met);

        // coefficients with period ω/2 make τ = ω/2 a multiple of the rescaled period
        let rescaled = nicholson("1", "4+sin(2*t)^2", "1", "pi/2", PI);
        let r = check_attractivity(&rescaled, &[1.0]).unwrap();
        assert!(r.delays_are_multiples && r.condition_met);
        assert!((r.effective_period - PI / 2.0).abs() < 1e-15);

        let mg = mackey_glass_pair(1.0, 2.0);
        assert!(check_attractivity(&mg, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn attractivity_scale_invariance() {
        for (m, v) in [
            (planar_1_9(), vec![1.0, 1.3]),
            (
                nicholson("1", "4+sin(t)^2", "1.5+0.2*sin(2*t)", "pi", PI),
                vec![0.7],
            ),
        ] {
            let a = check_attractivity(&m, &v).unwrap();
            let v2: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
            let b = check_attractivity(&m, &v2).unwrap();
            assert_eq!(a.condition_met, b.condition_met);
            for (x, y) in a.alpha_i.unwrap().iter().zip(b.alpha_i.unwrap()) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in a.gamma_i.unwrap().iter().zip(b.gamma_i.unwrap()) {
                assert!((x - y).abs() < 1e-12);
            }
            assert!((a.c0 / a.c0_sup - b.c0 / b.c0_sup).abs() < 1e-12);
        }
    }

    #[test]
    fn autonomous_corollary_waives_delay_multiples() {
        let m = load_model(
            r#"{"n":2,"omega":1,"equations":[
              {"d":"2","a":{"2":"0.5"},"terms":[{"beta":"3","kernel":{"type":"discrete","tau":"sqrt(2)"},"nonlinearity":{"type":"ricker","c":"1"}}]},
              {"d":"2.5","a":{"1":"0.5"},"terms":[{"beta":"4","kernel":{"type":"discrete","tau":"sqrt(3)/2"},"nonlinearity":{"type":"ricker","c":"1"}}]}]}"#,
        )
        .unwrap();
        let r = check_attractivity(&m, &[1.0, 1.0]).unwrap();
        assert!(r.autonomous && !r.delays_are_multiples && r.condition_met);
        // γ_i = β_i/(d_i − a_i) = 2 and 2
        for g in r.gamma_i.unwrap() {
            assert!((g - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn g_x_examples() {
        assert_eq!(g_x(1.0, 1.0), 0.0);
        assert!((g_x(0.5, 0.5) - 0.5 * (-0.5f64).exp()).abs() < 1e-15);
        // Taylor branch continuous with the quotient
        for x in [0.3, 1.0, 1.7] {
            let near = g_x(x, x + 2e-6);
            let taylor = g_x(x, x + 5e-7);
            assert!((near - taylor).abs() < 1e-6);
        }
    }

    #[test]
    fn delta_below_exp() {
        for x in [0.1, 0.5, 1.0, 1.5, 1.9] {
            let d = delta_of_x(x, 0.1, 50.0).unwrap();
            assert!(d < (-x).exp() - 1e-8, "x = {x}: δ = {d}");
        }
        assert!(delta_of_x(2.5, 0.1, 50.0).is_err());
    }

    #[test]
    fn delta_matches_brute_force() {
        let d = delta_of_x(1.0, 0.1, 50.0).unwrap();
        let n = 1_000_000;
        let brute = (0..n)
            .map(|k| g_x(1.0, 0.1 + k as f64 * (50.0 - 0.1) / (n - 1) as f64).abs())
            .fold(0.0, f64::max);
        assert!((d - brute).abs() < 1e-6);
        assert!(d >= brute - 1e-12);
    }

    #[test]
    fn permanence_scalar() {
        let m = nicholson("1", "exp(2)", "1", "1", 1.0);
        let cfg = SolverConfig::with_steps(64);
        let p = estimate_permanence(&m, 6, 80, 10, 42, &cfg).unwrap();
        assert!((p.m_emp - 2.0).abs() < 1e-3 && (p.l_emp - 2.0).abs() < 1e-3);
        assert!(p.permanence_observed);
        let again = estimate_permanence(&m, 6, 80, 10, 42, &cfg).unwrap();
        assert_eq!(p, again);
        let extinct = nicholson("1", "0.5", "1", "1", 1.0);
        let p = estimate_permanence(&extinct, 4, 60, 5, 1, &cfg).unwrap();
        assert!(p.l_emp < 1e-6 && !p.permanence_observed);
    }

    #[test]
    fn convergence_identical_histories() {
        let m = nicholson("1", "4+sin(t)^2", "1", "pi", PI);
        let cfg = SolverConfig::with_steps(64);
        let a = HistoryFunction::constant(&m, &cfg, &[0.5]);
        assert_eq!(
            convergence_experiment(&m, a.clone(), a, 5, &cfg).unwrap(),
            0.0
        );
    }
}
