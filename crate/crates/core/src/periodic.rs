//! Positive ω-periodic solutions: the fixed-point operator 𝓕, the period
//! map, and equilibria of autonomous systems.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::analysis::compute_alpha_gamma;
use crate::error::{Error, Result};
use crate::integrator::{
    csv_err, csv_header, delay_sum, write_row, HistoryFunction, Solver, SolverConfig, StateLookup,
};
use crate::linalg::{
    find_positive_vector, is_nonsingular_m_matrix, solve_i_minus_t, LinearFlowCache,
};
use crate::model::{community_matrices_with, Kernel, SystemModel, VERIFICATION_GRID};

// ---------------------------------------------------------------------------
// Profiles

/// Grid values over one period with a periodic cubic spline per component.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicProfile {
    n: usize,
    omega: f64,
    grid: usize,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl PeriodicProfile {
    /// `values[k * n + i]` is component `i` at `θ_k = kω/N`.
    pub fn new(omega: f64, n: usize, grid: usize, values: Vec<f64>) -> Self {
        assert!(grid >= 3, "profile grid needs at least 3 points");
        assert_eq!(values.len(), n * grid, "profile value count mismatch");
        let h = omega / grid as f64;
        let mut second = vec![0.0; n * grid];
        let mut column = vec![0.0; grid];
        for i in 0..n {
            for k in 0..grid {
                let prev = values[((k + grid - 1) % grid) * n + i];
                let next = values[((k + 1) % grid) * n + i];
                column[k] = 6.0 * (next - 2.0 * values[k * n + i] + prev) / (h * h);
            }
            let m = solve_cyclic_spline(&column);
            for k in 0..grid {
                second[k * n + i] = m[k];
            }
        }
        Self {
            n,
            omega,
            grid,
            values,
            second,
        }
    }

    pub fn constant(omega: f64, grid: usize, value: &[f64]) -> Self {
        let n = value.len();
        let values = (0..grid).flat_map(|_| value.iter().copied()).collect();
        Self::new(omega, n, grid, values)
    }

    pub fn from_fn<F: Fn(f64, &mut [f64])>(omega: f64, n: usize, grid: usize, f: F) -> Self {
        let mut values = vec![0.0; n * grid];
        for k in 0..grid {
            f(
                k as f64 * omega / grid as f64,
                &mut values[k * n..(k + 1) * n],
            );
        }
        Self::new(omega, n, grid, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn step(&self) -> f64 {
        self.omega / self.grid as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, k: usize) -> &[f64] {
        let k = k % self.grid;
        &self.values[k * self.n..(k + 1) * self.n]
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let u = (t / self.step()).rem_euclid(self.grid as f64);
        let r = u.round();
        if (u - r).abs() < 1e-9 {
            return ((r as usize) % self.grid, 0.0);
        }
        let k = (u.floor() as usize).min(self.grid - 1);
        (k, u - k as f64)
    }

    fn segment(&self, k: usize, s: f64, i: usize) -> f64 {
        let n = self.n;
        let k1 = (k + 1) % self.grid;
        let h = self.step();
        let (y0, y1) = (self.values[k * n + i], self.values[k1 * n + i]);
        let (m0, m1) = (self.second[k * n + i], self.second[k1 * n + i]);
        let r = 1.0 - s;
        r * y0 + s * y1 + h * h / 6.0 * ((r * r * r - r) * m0 + (s * s * s - s) * m1)
    }

    pub fn eval_component(&self, i: usize, t: f64) -> f64 {
        let (k, s) = self.locate(t);
        if s == 0.0 {
            self.values[k * self.n + i]
        } else {
            self.segment(k, s, i)
        }
    }

    pub fn derivative_component(&self, i: usize, t: f64) -> f64 {
        let (k, s) = self.locate(t);
        let n = self.n;
        let k1 = (k + 1) % self.grid;
        let h = self.step();
        let (y0, y1) = (self.values[k * n + i], self.values[k1 * n + i]);
        let (m0, m1) = (self.second[k * n + i], self.second[k1 * n + i]);
        let r = 1.0 - s;
        (y1 - y0) / h + h / 6.0 * (-(3.0 * r * r - 1.0) * m0 + (3.0 * s * s - 1.0) * m1)
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        (0..self.n).map(|i| self.eval_component(i, t)).collect()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn component_max(&self, i: usize) -> f64 {
        (0..self.grid)
            .map(|k| self.values[k * self.n + i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_distance(&self, other: &PeriodicProfile) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `max_i |φ_i(0) - φ_i(ω⁻)|`, the left limit taken on the last segment.
    pub fn periodicity_gap(&self) -> f64 {
        (0..self.n)
            .map(|i| (self.segment(self.grid - 1, 1.0, i) - self.values[i]).abs())
            .fold(0.0, f64::max)
    }

    fn blend(&self, other: &PeriodicProfile, weight: f64) -> PeriodicProfile {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (1.0 - weight) * a + weight * b)
            .collect();
        PeriodicProfile::new(self.omega, self.n, self.grid, values)
    }

    /// Periodic extension as an initial history on the solver grid.
    pub fn to_history(&self, model: &SystemModel, config: &SolverConfig) -> HistoryFunction {
        HistoryFunction::initial(model, config, |t, v, d| {
            for i in 0..self.n {
                v[i] = self.eval_component(i, t);
                d[i] = self.derivative_component(i, t);
            }
        })
    }

    /// `t,phi1,...,phin` over one period at grid resolution.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(csv_header("phi", self.n)).map_err(csv_err)?;
        for k in 0..self.grid {
            write_row(&mut w, k as f64 * self.step(), self.at(k))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Solves the cyclic system `m_{k-1} + 4 m_k + m_{k+1} = r_k` (Sherman–Morrison).
fn solve_cyclic_spline(r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let (alpha, beta) = (1.0, 1.0);
    let gamma = -4.0;
    let mut diag = vec![4.0; n];
    diag[0] -= gamma;
    diag[n - 1] -= alpha * beta / gamma;
    let x = solve_tridiagonal(&diag, r);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(&diag, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

/// Thomas algorithm with unit off-diagonals.
fn solve_tridiagonal(diag: &[f64], r: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = 1.0 / diag[0];
    d[0] = r[0] / diag[0];
    for k in 1..n {
        let m = diag[k] - c[k - 1];
        c[k] = 1.0 / m;
        d[k] = (r[k] - d[k - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for k in (0..n - 1).rev() {
        x[k] = d[k] - c[k] * x[k + 1];
    }
    x
}

struct PeriodicLookup<'a>(&'a PeriodicProfile);

impl StateLookup for PeriodicLookup<'_> {
    fn component(&self, i: usize, t: f64) -> Result<f64> {
        Ok(self.0.eval_component(i, t))
    }
}

// ---------------------------------------------------------------------------
// Operator 𝓕

/// `(𝓕φ)(θ) = (I - T(θ))⁻¹ X(ω+θ) ∫_θ^{θ+ω} X⁻¹(s) M(s, φ_s) ds` on the
/// profile grid. With `P(θ) = ∫_0^θ X⁻¹M` and `W = P(ω)` the bracket equals
/// `X(θ)[C(W - P(θ)) + P(θ)]`; `P` is accumulated by Simpson's rule.
pub fn operator_f(
    model: &SystemModel,
    cache: &LinearFlowCache,
    phi: &PeriodicProfile,
    quad_nodes: usize,
) -> Result<PeriodicProfile> {
    let n = model.n;
    let grid = cache.grid;
    if phi.grid != grid || phi.n != n {
        return Err(Error::InvalidInput(
            "profile grid does not match the flow cache".into(),
        ));
    }
    let lookup = PeriodicLookup(phi);
    let half = cache.step() / 2.0;
    let mut g = Vec::with_capacity(2 * grid + 1);
    let mut m_vec = DVector::<f64>::zeros(n);
    for j in 0..2 * grid {
        let s = j as f64 * half;
        for i in 0..n {
            m_vec[i] = delay_sum(model, i, s, &lookup, quad_nodes)?;
        }
        g.push(cache.x_inv_half(j) * &m_vec);
    }
    // M is ω-periodic; only X⁻¹ differs at the right end
    let m0 = {
        for i in 0..n {
            m_vec[i] = delay_sum(model, i, 0.0, &lookup, quad_nodes)?;
        }
        m_vec.clone()
    };
    g.push(cache.x_inv_half(2 * grid) * m0);

    let h = cache.step();
    let mut p = Vec::with_capacity(grid + 1);
    p.push(DVector::<f64>::zeros(n));
    for k in 0..grid {
        let next = &p[k] + (&g[2 * k] + &g[2 * k + 1] * 4.0 + &g[2 * k + 2]) * (h / 6.0);
        p.push(next);
    }
    let w = p[grid].clone();
    let c = cache.monodromy();
    let mut values = vec![0.0; n * grid];
    for k in 0..grid {
        let bracket = cache.x(k) * (c * (&w - &p[k]) + &p[k]);
        let y = solve_i_minus_t(cache, k, &bracket)?;
        values[k * n..(k + 1) * n].copy_from_slice(y.as_slice());
    }
    Ok(PeriodicProfile::new(model.omega, n, grid, values))
}

// ---------------------------------------------------------------------------
// Fixed-point iteration

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub damping: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-10,
            damping: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FixedPointDiagnostics {
    pub iterations: usize,
    pub final_delta: f64,
    pub operator_residual: f64,
    pub dde_residual: f64,
    pub final_damping: f64,
    pub converged: bool,
}

pub fn find_periodic_fixed_point(
    model: &SystemModel,
    cache: &LinearFlowCache,
    init: PeriodicProfile,
    options: FixedPointOptions,
    config: &SolverConfig,
) -> Result<(PeriodicProfile, FixedPointDiagnostics)> {
    let mut phi = init;
    let mut kappa = options.damping;
    let mut deltas: Vec<f64> = Vec::new();
    let mut since_adjust = 0;
    let mut final_delta = f64::INFINITY;
    let mut iterations = 0;
    while iterations < options.max_iter {
        iterations += 1;
        let f = operator_f(model, cache, &phi, config.quad_nodes)?;
        let next = phi.blend(&f, kappa);
        final_delta = next.sup_distance(&phi);
        phi = next;
        if final_delta <= options.tol {
            break;
        }
        deltas.push(final_delta);
        since_adjust += 1;
        if since_adjust >= 10 {
            // stalled: no halving of the step over the last 10 iterations
            let window = &deltas[deltas.len() - 10..];
            if window[9] > 0.5 * window[0] && kappa > 1.0 / 64.0 {
                kappa /= 2.0;
                since_adjust = 0;
            }
        }
    }
    let operator_residual = operator_f(model, cache, &phi, config.quad_nodes)?.sup_distance(&phi);
    let dde = if phi.min() > 0.0 {
        dde_residual(model, &phi, config)?
    } else {
        f64::INFINITY
    };
    let converged = final_delta <= options.tol && operator_residual <= 10.0 * options.tol;
    Ok((
        phi,
        FixedPointDiagnostics {
            iterations,
            final_delta,
            operator_residual,
            dde_residual: dde,
            final_damping: kappa,
            converged,
        },
    ))
}

/// Constant start inside the positive cone: half the a-priori bound for
/// Ricker models (with `v` or the all-ones vector), 1 otherwise.
pub fn default_initial_profile(
    model: &SystemModel,
    grid: usize,
    witness: Option<&[f64]>,
) -> PeriodicProfile {
    let value = if model.all_ricker() {
        let ones = vec![1.0; model.n];
        let v = witness.unwrap_or(&ones);
        lemma52_bound(model, v)
            .map(|b| b.iter().map(|x| 0.5 * x).collect())
            .unwrap_or_else(|_| vec![1.0; model.n])
    } else {
        vec![1.0; model.n]
    };
    PeriodicProfile::constant(model.omega, grid, &value)
}

// ---------------------------------------------------------------------------
// Period map and residual

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PoincareDiagnostics {
    pub periods: usize,
    pub final_gap: f64,
    pub converged: bool,
}

/// Integrates period by period until `sup |x(t+ω) - x(t)| <= tol` over the last period.
pub fn find_periodic_poincare(
    model: &SystemModel,
    init: HistoryFunction,
    config: &SolverConfig,
    max_periods: usize,
    tol: f64,
) -> Result<(PeriodicProfile, PoincareDiagnostics)> {
    let mut solver = Solver::new(model, init, *config)?;
    let steps = config.steps_per_period;
    let n = model.n;
    let mut gap = f64::INFINITY;
    for period in 1..=max_periods {
        solver.advance_steps(steps)?;
        if period < 2 {
            continue;
        }
        let hist = solver.history();
        let last = hist.len() - 1;
        gap = 0.0;
        for k in last - steps..=last {
            let a = hist.knot_values(k);
            let b = hist.knot_values(k - steps);
            for i in 0..n {
                gap = f64::max(gap, (a[i] - b[i]).abs());
            }
        }
        if gap <= tol {
            let start = last - steps;
            let mut values = Vec::with_capacity(n * steps);
            for k in start..last {
                values.extend_from_slice(hist.knot_values(k));
            }
            return Ok((
                PeriodicProfile::new(model.omega, n, steps, values),
                PoincareDiagnostics {
                    periods: period,
                    final_gap: gap,
                    converged: true,
                },
            ));
        }
    }
    Err(Error::NonConvergence(format!(
        "period map not Cauchy after {max_periods} periods (last gap {gap:e})"
    )))
}

/// Integrates one period from the periodic extension of `phi` and returns
/// the sup over the period's knots of `|x(θ_k) - φ(θ_k)|`.
pub fn dde_residual(
    model: &SystemModel,
    phi: &PeriodicProfile,
    config: &SolverConfig,
) -> Result<f64> {
    if phi.grid != config.steps_per_period {
        return Err(Error::InvalidInput(
            "profile grid must equal the solver steps per period".into(),
        ));
    }
    let mut solver = Solver::new(model, phi.to_history(model, config), *config)?;
    solver.advance_steps(config.steps_per_period)?;
    let hist = solver.history();
    let origin = hist.knot_position(0).expect("history contains t = 0");
    let mut worst: f64 = 0.0;
    for k in 0..=phi.grid {
        let x = hist.knot_values(origin + k);
        let p = phi.at(k);
        for i in 0..phi.n {
            worst = worst.max((x[i] - p[i]).abs());
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Autonomous equilibria

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EquilibriumResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// `D - A` is a nonsingular M-matrix.
    pub d_minus_a_m_matrix: bool,
    /// `M v ≫ 0` for some `v ≫ 0`.
    pub m_positive_witness: bool,
}

struct Autonomous {
    d: Vec<f64>,
    a: DMatrix<f64>,
    /// `(rate, c)` for each delay term of each equation
    rates: Vec<Vec<(f64, f64)>>,
}

fn frozen(
    model: &SystemModel,
    quad_nodes: usize,
) -> Result<(Autonomous, Vec<Vec<&crate::model::Nonlinearity>>)> {
    for (eq, label, e) in model.expressions() {
        let (lo, hi) = e.range(VERIFICATION_GRID)?;
        if hi - lo >= 1e-12 {
            return Err(Error::Hypothesis(format!(
                "equilibrium search needs constant coefficients; equation {eq} {label} varies by {:e}",
                hi - lo
            )));
        }
    }
    let n = model.n;
    let mut d = vec![0.0; n];
    let mut a = DMatrix::zeros(n, n);
    let mut rates = Vec::with_capacity(n);
    let mut nls = Vec::with_capacity(n);
    for (i, eq) in model.equations.iter().enumerate() {
        d[i] = eq.d.eval(0.0)?;
        for (j, aij) in &eq.off_diagonal {
            a[(i, *j)] = aij.eval(0.0)?;
        }
        let mut row = Vec::new();
        let mut nl_row = Vec::new();
        for term in &eq.terms {
            row.push((
                term.effective_rate(0.0, quad_nodes)?,
                term.nonlinearity.c().eval(0.0)?,
            ));
            nl_row.push(&term.nonlinearity);
        }
        rates.push(row);
        nls.push(nl_row);
    }
    Ok((Autonomous { d, a, rates }, nls))
}

/// Damped Newton on `-Dx + Ax + Σ_k β_k h_k(x) = 0`.
pub fn find_equilibrium(model: &SystemModel, quad_nodes: usize) -> Result<EquilibriumResult> {
    let (sys, nls) = frozen(model, quad_nodes)?;
    let n = model.n;
    let bundle = community_matrices_with(model, 0.0, quad_nodes)?;
    let d_minus_a = &bundle.d - &bundle.a;
    let d_minus_a_m_matrix = is_nonsingular_m_matrix(&d_minus_a)?;
    let m_positive_witness = find_positive_vector(std::slice::from_ref(&bundle.m))?.found;

    let residual = |x: &[f64]| -> DVector<f64> {
        DVector::from_fn(n, |i, _| {
            let mut g = -sys.d[i] * x[i];
            for (j, xj) in x.iter().enumerate() {
                g += sys.a[(i, j)] * xj;
            }
            for (k, (rate, c)) in sys.rates[i].iter().enumerate() {
                g += rate * nls[i][k].eval_with_c(*c, x[i]);
            }
            g
        })
    };
    let jacobian = |x: &[f64]| -> DMatrix<f64> {
        let mut j = sys.a.clone();
        for i in 0..n {
            let mut diag = -sys.d[i];
            for (k, (rate, c)) in sys.rates[i].iter().enumerate() {
                diag += rate * nls[i][k].derivative_with_c(*c, x[i]);
            }
            j[(i, i)] = diag;
        }
        j
    };

    let mut x: Vec<f64> = if model.all_ricker() {
        lemma52_bound(model, &vec![1.0; n])
            .map(|b| b.iter().map(|v| 0.5 * v).collect())
            .unwrap_or_else(|_| vec![1.0; n])
    } else {
        vec![1.0; n]
    };
    let mut g = residual(&x);
    let mut iterations = 0;
    while g.amax() > 1e-12 {
        if iterations == 200 {
            return Err(Error::NonConvergence(format!(
                "Newton iteration stagnated at |g| = {:e}",
                g.amax()
            )));
        }
        iterations += 1;
        let step = jacobian(&x)
            .lu()
            .solve(&(-&g))
            .ok_or_else(|| Error::Singular("equilibrium Jacobian is singular".into()))?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = x
                .iter()
                .zip(step.iter())
                .map(|(a, b)| a + lambda * b)
                .collect();
            let gt = residual(&trial);
            if gt.amax() < g.amax() || lambda < 1e-10 {
                x = trial;
                g = gt;
                break;
            }
            lambda /= 2.0;
        }
        if lambda < 1e-10 && g.amax() > 1e-12 {
            return Err(Error::NonConvergence(format!(
                "Newton line search failed at |g| = {:e}",
                g.amax()
            )));
        }
    }
    if x.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::NonConvergence(format!(
            "Newton iteration reached a non-positive equilibrium {x:?}"
        )));
    }
    Ok(EquilibriumResult {
        residual: g.amax(),
        x,
        iterations,
        d_minus_a_m_matrix,
        m_positive_witness,
    })
}

// ---------------------------------------------------------------------------
// A-priori bound

/// `bound_i = v_i · max_j ln γ_j(v) / (v_j c_j⁻)` for Ricker models.
pub fn lemma52_bound(model: &SystemModel, v: &[f64]) -> Result<Vec<f64>> {
    if !model.all_ricker() {
        return Err(Error::Hypothesis(
            "a-priori bound needs Ricker nonlinearities".into(),
        ));
    }
    if v.len() != model.n || v.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::InvalidInput(
            "v must be a positive vector of length n".into(),
        ));
    }
    let ag = compute_alpha_gamma(model, v)?;
    if let Some((i, a)) = ag.alpha.iter().enumerate().find(|(_, a)| **a <= 1.0) {
        return Err(Error::Hypothesis(format!(
            "alpha_{}(v) = {a} <= 1; the a-priori bound does not apply",
            i + 1
        )));
    }
    let mut worst = f64::NEG_INFINITY;
    for (j, eq) in model.equations.iter().enumerate() {
        let mut c_min = f64::INFINITY;
        for term in &eq.terms {
            c_min = c_min.min(term.nonlinearity.c().range(VERIFICATION_GRID)?.0);
        }
        if !(c_min > 0.0) {
            return Err(Error::Hypothesis(format!(
                "equation {}: c must be positive for the a-priori bound",
                j + 1
            )));
        }
        worst = worst.max(ag.gamma[j].ln() / (v[j] * c_min));
    }
    Ok(v.iter().map(|vi| vi * worst).collect())
}

/// True when every delay is a constant integer multiple of ω (the setting
/// in which the a-priori bound is derived).
pub fn delays_are_period_multiples(model: &SystemModel) -> Result<bool> {
    for eq in &model.equations {
        for term in &eq.terms {
            let Kernel::Discrete { tau } = &term.kernel else {
                return Ok(false);
            };
            let (lo, hi) = tau.range(VERIFICATION_GRID)?;
            let m = (lo / model.omega).round();
            if hi - lo > 1e-9 || m < 1.0 || (lo - m * model.omega).abs() > 1e-9 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
