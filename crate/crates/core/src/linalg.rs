//! Fundamental matrix and monodromy of the linear part, M-matrix tests and
//! the small dense LP used to find positive witness vectors.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::SolverConfig;
use crate::model::SystemModel;

/// Witness margins above this are treated as strictly positive.
pub const FEASIBILITY_EPS: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Fundamental matrix

/// `X(t)` of `X' = (A(t) - D(t)) X`, `X(0) = I`, on the grid `θ_k = kω/N`,
/// plus `X⁻¹` on the half-step grid and the factorizations of `I - T(θ_k)`.
#[derive(Debug, Clone)]
pub struct LinearFlowCache {
    pub n: usize,
    pub omega: f64,
    pub grid: usize,
    x: Vec<DMatrix<f64>>,
    x_inv_fine: Vec<DMatrix<f64>>,
    monodromy: DMatrix<f64>,
    t_mats: Vec<DMatrix<f64>>,
    i_minus_t: Vec<LU<f64, Dyn, Dyn>>,
}

impl LinearFlowCache {
    pub fn step(&self) -> f64 {
        self.omega / self.grid as f64
    }

    /// `X(θ_k)` for `k = 0..=N`.
    pub fn x(&self, k: usize) -> &DMatrix<f64> {
        &self.x[k]
    }

    /// `X⁻¹` at `j·ω/(2N)`, `j = 0..=2N`.
    pub fn x_inv_half(&self, j: usize) -> &DMatrix<f64> {
        &self.x_inv_fine[j]
    }

    pub fn monodromy(&self) -> &DMatrix<f64> {
        &self.monodromy
    }

    /// `T(θ_k) = X(θ_k) C X⁻¹(θ_k)` for `k = 0..N`.
    pub fn t_matrix(&self, k: usize) -> &DMatrix<f64> {
        &self.t_mats[k]
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        spectral_radius(&self.monodromy)
    }
}

pub fn fundamental_matrix(model: &SystemModel, config: &SolverConfig) -> Result<LinearFlowCache> {
    config.validate()?;
    let n = model.n;
    let grid = config.steps_per_period;
    let fine = 2 * grid;
    let h = model.omega / fine as f64;
    let mut x_fine = Vec::with_capacity(fine + 1);
    let mut x = DMatrix::<f64>::identity(n, n);
    x_fine.push(x.clone());
    for j in 0..fine {
        let t = j as f64 * h;
        let a0 = model.linear_matrix(t)?;
        let a1 = model.linear_matrix(t + 0.5 * h)?;
        let a2 = model.linear_matrix(t + h)?;
        let k1 = &a0 * &x;
        let k2 = &a1 * (&x + &k1 * (0.5 * h));
        let k3 = &a1 * (&x + &k2 * (0.5 * h));
        let k4 = &a2 * (&x + &k3 * h);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular(format!(
                "fundamental matrix blew up at t = {}",
                t + h
            )));
        }
        x_fine.push(x.clone());
    }
    let x_inv_fine = x_fine
        .iter()
        .enumerate()
        .map(|(j, m)| {
            m.clone()
                .try_inverse()
                .ok_or_else(|| Error::Singular(format!("X(t) is singular at t = {}", j as f64 * h)))
        })
        .collect::<Result<Vec<_>>>()?;
    let monodromy = x_fine[fine].clone();
    let xs: Vec<DMatrix<f64>> = (0..=grid).map(|k| x_fine[2 * k].clone()).collect();
    let mut t_mats = Vec::with_capacity(grid);
    let mut i_minus_t = Vec::with_capacity(grid);
    let identity = DMatrix::<f64>::identity(n, n);
    for k in 0..grid {
        let t = &xs[k] * &monodromy * &x_inv_fine[2 * k];
        let lu = (&identity - &t).lu();
        if !lu.is_invertible() {
            return Err(Error::Singular(format!(
                "I - T(θ) is singular at θ = {} (spectral radius of C >= 1?)",
                k as f64 * model.omega / grid as f64
            )));
        }
        t_mats.push(t);
        i_minus_t.push(lu);
    }
    Ok(LinearFlowCache {
        n,
        omega: model.omega,
        grid,
        x: xs,
        x_inv_fine,
        monodromy,
        t_mats,
        i_minus_t,
    })
}

/// Solves `(I - T(θ_k)) y = rhs` using the cached factorization.
pub fn solve_i_minus_t(
    cache: &LinearFlowCache,
    theta_index: usize,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>> {
    let lu = cache
        .i_minus_t
        .get(theta_index % cache.grid)
        .ok_or_else(|| Error::InvalidInput("theta index out of range".into()))?;
    lu.solve(rhs)
        .ok_or_else(|| Error::Singular("I - T(θ) solve failed".into()))
}

// ---------------------------------------------------------------------------
// Spectral radius

/// Perron root of a (numerically) nonnegative matrix by power iteration.
///
/// Iterates on `max(C, 0) + I`, whose Perron root is strictly dominant, and
/// shifts back at the end.
pub fn spectral_radius(c: &DMatrix<f64>) -> Result<f64> {
    assert!(c.is_square(), "spectral radius needs a square matrix");
    if let Some(v) = c.iter().find(|v| **v < -1e-9) {
        return Err(Error::InvalidInput(format!(
            "matrix has a negative entry {v:e}; power iteration needs C >= 0"
        )));
    }
    let n = c.nrows();
    let shifted = c.map(|v| v.max(0.0)) + DMatrix::<f64>::identity(n, n);
    let mut v = DVector::<f64>::from_element(n, 1.0);
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let w = &shifted * &v;
        let norm = w.amax();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let next = w / norm;
        let change = (&next - &v).amax();
        v = next;
        let prev = lambda;
        lambda = norm;
        if change <= 1e-12 && (lambda - prev).abs() <= 1e-12 * lambda.max(1.0) {
            return Ok(lambda - 1.0);
        }
    }
    Err(Error::NonConvergence(
        "power iteration did not converge in 10000 iterations".into(),
    ))
}

// ---------------------------------------------------------------------------
// Dense two-phase simplex

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize objective·x` subject to `rows`, `x >= 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

const PIVOT_EPS: f64 = 1e-11;

struct Tableau {
    rows: Vec<Vec<f64>>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Bland's rule iterations over columns `< allowed`. Returns false if unbounded.
    fn run(&mut self, allowed: usize, guard: &mut usize, limit: usize) -> Result<bool> {
        let rhs = self.width;
        loop {
            let Some(enter) = (0..allowed).find(|&j| self.obj[j] < -PIVOT_EPS) else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[enter];
                if a > PIVOT_EPS {
                    let ratio = row[rhs] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                            if ratio < br && !tie || tie && self.basis[i] < self.basis[bi] {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Ok(false);
            };
            self.pivot(r, enter);
            *guard += 1;
            if *guard > limit {
                return Err(Error::CyclingGuard(*guard));
            }
        }
    }
}

impl LinearProgram {
    pub fn maximize(&self) -> Result<LpOutcome> {
        let nv = self.objective.len();
        let mut rows: Vec<Constraint> = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            assert_eq!(row.coeffs.len(), nv, "constraint width mismatch");
            let mut row = row.clone();
            // keep rhs >= 0; homogeneous >= rows become <= rows with a slack basis
            let flip = row.rhs < 0.0 || (row.rhs == 0.0 && row.relation == Relation::Ge);
            if flip {
                row.coeffs.iter_mut().for_each(|v| *v = -*v);
                row.rhs = -row.rhs;
                row.relation = match row.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
            }
            rows.push(row);
        }
        let m = rows.len();
        let n_slack = rows.iter().filter(|r| r.relation != Relation::Eq).count();
        let n_art = rows.iter().filter(|r| r.relation != Relation::Le).count();
        let art_start = nv + n_slack;
        let width = art_start + n_art;
        let mut tab = Tableau {
            rows: vec![vec![0.0; width + 1]; m],
            obj: vec![0.0; width + 1],
            basis: vec![0; m],
            width,
        };
        let (mut s, mut a) = (nv, art_start);
        for (i, row) in rows.iter().enumerate() {
            tab.rows[i][..nv].copy_from_slice(&row.coeffs);
            tab.rows[i][width] = row.rhs;
            match row.relation {
                Relation::Le => {
                    tab.rows[i][s] = 1.0;
                    tab.basis[i] = s;
                    s += 1;
                }
                Relation::Ge => {
                    tab.rows[i][s] = -1.0;
                    tab.rows[i][a] = 1.0;
                    tab.basis[i] = a;
                    s += 1;
                    a += 1;
                }
                Relation::Eq => {
                    tab.rows[i][a] = 1.0;
                    tab.basis[i] = a;
                    a += 1;
                }
            }
        }
        let limit = 50 * (m + width) + 1000;
        let mut guard = 0;

        // phase 1: maximize -Σ artificials
        if n_art > 0 {
            for j in art_start..width {
                tab.obj[j] = 1.0;
            }
            for i in 0..m {
                if tab.basis[i] >= art_start {
                    for j in 0..=width {
                        tab.obj[j] -= tab.rows[i][j];
                    }
                }
            }
            tab.run(width, &mut guard, limit)?;
            let infeasibility = -tab.obj[width];
            let scale = 1.0 + rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
            if infeasibility > 1e-9 * scale {
                return Ok(LpOutcome::Infeasible);
            }
            // drive artificials out of the basis, dropping redundant rows
            let mut i = 0;
            while i < tab.rows.len() {
                if tab.basis[i] >= art_start {
                    let col = (0..art_start).find(|&j| tab.rows[i][j].abs() > 1e-9);
                    match col {
                        Some(j) => {
                            tab.pivot(i, j);
                            i += 1;
                        }
                        None => {
                            tab.rows.remove(i);
                            tab.basis.remove(i);
                        }
                    }
                } else {
                    i += 1;
                }
            }
        }

        // phase 2
        tab.obj.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..nv {
            tab.obj[j] = -self.objective[j];
        }
        for i in 0..tab.rows.len() {
            let cb = if tab.basis[i] < nv {
                self.objective[tab.basis[i]]
            } else {
                0.0
            };
            if cb != 0.0 {
                for j in 0..=width {
                    tab.obj[j] += cb * tab.rows[i][j];
                }
            }
        }
        if !tab.run(art_start, &mut guard, limit)? {
            return Ok(LpOutcome::Unbounded);
        }
        let mut x = vec![0.0; nv];
        for (i, &b) in tab.basis.iter().enumerate() {
            if b < nv {
                x[b] = tab.rows[i][width];
            }
        }
        let value = self.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpOutcome::Optimal { x, value })
    }
}

// ---------------------------------------------------------------------------
// Positive witness vectors

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FeasibilityResult {
    pub found: bool,
    pub witness: Vec<f64>,
    /// `min(min_k min_i (K_k v)_i, min_i v_i)` at the returned `v`.
    pub margin: f64,
    pub worst_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_time: Option<f64>,
    pub grid_points: usize,
}

/// `min(min_i v_i, min_i (K v)_i)`, and the constraint matrix attaining it.
pub fn witness_margin(matrices: &[DMatrix<f64>], v: &[f64]) -> (f64, usize) {
    let vv = DVector::from_column_slice(v);
    let mut best = (v.iter().copied().fold(f64::INFINITY, f64::min), 0);
    for (k, m) in matrices.iter().enumerate() {
        let row_min = (m * &vv).min();
        if row_min < best.0 {
            best = (row_min, k);
        }
    }
    best
}

/// Solves `max δ` s.t. `K v >= δ1` for all `K` in `subset`, `v >= δ`, `Σv = n`.
fn solve_witness_lp(matrices: &[&DMatrix<f64>], n: usize) -> Result<(Vec<f64>, f64)> {
    // variables: v_1..v_n, p, q with δ = p - q
    let nv = n + 2;
    let mut objective = vec![0.0; nv];
    objective[n] = 1.0;
    objective[n + 1] = -1.0;
    let mut rows = Vec::with_capacity(matrices.len() * n + n + 1);
    let delta_row = |mut coeffs: Vec<f64>| {
        coeffs[n] = -1.0;
        coeffs[n + 1] = 1.0;
        Constraint {
            coeffs,
            relation: Relation::Ge,
            rhs: 0.0,
        }
    };
    for m in matrices {
        for i in 0..n {
            let mut coeffs = vec![0.0; nv];
            for j in 0..n {
                coeffs[j] = m[(i, j)];
            }
            rows.push(delta_row(coeffs));
        }
    }
    for i in 0..n {
        let mut coeffs = vec![0.0; nv];
        coeffs[i] = 1.0;
        rows.push(delta_row(coeffs));
    }
    let mut norm = vec![0.0; nv];
    norm[..n].fill(1.0);
    rows.push(Constraint {
        coeffs: norm,
        relation: Relation::Eq,
        rhs: n as f64,
    });
    match (LinearProgram { objective, rows }).maximize()? {
        LpOutcome::Optimal { x, value } => Ok((x[..n].to_vec(), value)),
        // v = 1, δ = min over constraints is always feasible and δ <= 1
        other => Err(Error::NonConvergence(format!(
            "witness LP returned {other:?}"
        ))),
    }
}

/// Witness search over a list of constraint matrices by constraint
/// generation: solve on a subset, add the most violated matrices, repeat.
pub fn find_positive_vector(matrices: &[DMatrix<f64>]) -> Result<FeasibilityResult> {
    if matrices.is_empty() {
        return Err(Error::InvalidInput(
            "constraint matrix list is empty".into(),
        ));
    }
    let n = matrices[0].nrows();
    if matrices.iter().any(|m| m.nrows() != n || m.ncols() != n) {
        return Err(Error::InvalidInput(
            "constraint matrices must all be n×n".into(),
        ));
    }
    let count = matrices.len();
    let initial = count.min(16);
    let mut active: Vec<usize> = (0..initial).map(|k| k * count / initial).collect();
    active.dedup();
    loop {
        let subset: Vec<&DMatrix<f64>> = active.iter().map(|&k| &matrices[k]).collect();
        let (v, delta_s) = solve_witness_lp(&subset, n)?;
        let (margin, worst) = witness_margin(matrices, &v);
        if margin >= delta_s - 1e-12 || active.len() == count {
            return Ok(FeasibilityResult {
                found: margin > FEASIBILITY_EPS,
                witness: v,
                margin,
                worst_index: worst,
                worst_time: None,
                grid_points: count,
            });
        }
        let vv = DVector::from_column_slice(&v);
        let mut violated: Vec<(f64, usize)> = (0..count)
            .filter(|k| !active.contains(k))
            .map(|k| ((&matrices[k] * &vv).min(), k))
            .filter(|(m, _)| *m < delta_s - 1e-12)
            .collect();
        if violated.is_empty() {
            // only the v >= δ rows bind; the subset optimum is global
            return Ok(FeasibilityResult {
                found: margin > FEASIBILITY_EPS,
                witness: v,
                margin,
                worst_index: worst,
                worst_time: None,
                grid_points: count,
            });
        }
        violated.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        active.extend(violated.iter().take(8).map(|(_, k)| *k));
        active.sort_unstable();
    }
}

/// Witness search for a periodic family `t ↦ K(t)`: solves on `grid` samples,
/// verifies on a 4× finer grid and re-solves there (at most twice) if the
/// verification fails.
pub fn find_positive_vector_periodic<F>(omega: f64, grid: usize, f: F) -> Result<FeasibilityResult>
where
    F: Fn(f64) -> Result<DMatrix<f64>>,
{
    let sample = |points: usize| -> Result<Vec<DMatrix<f64>>> {
        (0..points)
            .map(|k| f(k as f64 * omega / points as f64))
            .collect()
    };
    let mut points = grid;
    let mut matrices = sample(points)?;
    let mut attempts = 0;
    loop {
        let mut result = find_positive_vector(&matrices)?;
        let fine_points = 4 * points;
        let fine = sample(fine_points)?;
        let (fine_margin, fine_worst) = witness_margin(&fine, &result.witness);
        let verified = fine_margin > FEASIBILITY_EPS;
        if !result.found || verified || attempts == 2 {
            result.margin = result.margin.min(fine_margin);
            result.found = result.found && verified;
            result.worst_index = fine_worst;
            result.worst_time = Some(fine_worst as f64 * omega / fine_points as f64);
            result.grid_points = points;
            return Ok(result);
        }
        attempts += 1;
        points = fine_points;
        matrices = fine;
    }
}

/// Nonsingular M-matrix test via `∃ u ≫ 0: A u ≫ 0`.
pub fn is_nonsingular_m_matrix(a: &DMatrix<f64>) -> Result<bool> {
    if !a.is_square() {
        return Err(Error::InvalidInput("matrix must be square".into()));
    }
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if i != j && a[(i, j)] > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "off-diagonal entry ({}, {}) = {} is positive",
                    i + 1,
                    j + 1,
                    a[(i, j)]
                )));
            }
        }
    }
    Ok(find_positive_vector(std::slice::from_ref(a))?.found)
}
