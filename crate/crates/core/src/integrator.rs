//! Fixed-step RK4 method of steps with dense cubic Hermite history.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Kernel, SystemModel, DEFAULT_QUAD_NODES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SolverConfig {
    pub steps_per_period: usize,
    pub quad_nodes: usize,
    pub positivity_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            steps_per_period: 256,
            quad_nodes: DEFAULT_QUAD_NODES,
            positivity_tolerance: 1e-10,
        }
    }
}

impl SolverConfig {
    pub fn with_steps(steps_per_period: usize) -> Self {
        Self {
            steps_per_period,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_period < 32 {
            return Err(Error::InvalidInput(format!(
                "stepsPerPeriod must be >= 32 (got {})",
                self.steps_per_period
            )));
        }
        if self.quad_nodes < 3 || self.quad_nodes.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "quadNodes must be odd and >= 3 (got {})",
                self.quad_nodes
            )));
        }
        if !(self.positivity_tolerance >= 0.0) {
            return Err(Error::InvalidInput(
                "positivity tolerance must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn step(&self, omega: f64) -> f64 {
        omega / self.steps_per_period as f64
    }
}

/// Read access to a state trajectory, one component at a time.
pub trait StateLookup {
    fn component(&self, i: usize, t: f64) -> Result<f64>;
}

/// `M_i(t, x_t)`: the summed delayed reproduction terms of equation `i`.
pub fn delay_sum<L: StateLookup + ?Sized>(
    model: &SystemModel,
    i: usize,
    t: f64,
    lookup: &L,
    quad_nodes: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for term in &model.equations[i].terms {
        let beta = term.beta.eval(t)?;
        if beta == 0.0 {
            continue;
        }
        let nl = &term.nonlinearity;
        match &term.kernel {
            Kernel::Discrete { tau } => {
                let x = lookup.component(i, t - tau.eval(t)?)?;
                total += beta * nl.eval_with_c(nl.c().eval(t)?, x);
            }
            Kernel::DistributedDensity { gamma, tau } => {
                let tau = tau.eval(t)?;
                if tau <= 0.0 {
                    continue;
                }
                let panels = (quad_nodes - 1) as f64;
                let ds = tau / panels;
                let mut sum = 0.0;
                for k in 0..quad_nodes {
                    let s = if k + 1 == quad_nodes {
                        t
                    } else {
                        t - tau + k as f64 * ds
                    };
                    let w = if k == 0 || k + 1 == quad_nodes {
                        0.5
                    } else {
                        1.0
                    };
                    let x = lookup.component(i, s)?;
                    sum += w * gamma.eval(s)? * nl.eval_with_c(nl.c().eval(s)?, x);
                }
                total += beta * sum * ds;
            }
        }
    }
    Ok(total)
}

/// Right side of the system at time `t`, with present state `x_now` and
/// delayed values taken from `lookup`.
pub fn rhs_with<L: StateLookup + ?Sized>(
    model: &SystemModel,
    t: f64,
    x_now: &[f64],
    lookup: &L,
    quad_nodes: usize,
    out: &mut [f64],
) -> Result<()> {
    model.linear_part(t, x_now, out)?;
    for (i, slot) in out.iter_mut().enumerate() {
        *slot += delay_sum(model, i, t, lookup, quad_nodes)?;
    }
    Ok(())
}

/// Right side evaluated entirely from a history that covers `[t - tauMax, t]`.
pub fn rhs(
    model: &SystemModel,
    t: f64,
    history: &HistoryFunction,
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    let x = history.eval(t)?;
    let mut out = vec![0.0; model.n];
    rhs_with(model, t, &x, history, config.quad_nodes, &mut out)?;
    Ok(out)
}

/// Piecewise cubic Hermite solution on the uniform knots `t_k = (k0 + k) h`.
///
/// Left and right derivatives are kept separately so the kink at the
/// initial time is represented exactly.
#[derive(Debug, Clone)]
pub struct HistoryFunction {
    n: usize,
    h: f64,
    k0: i64,
    values: Vec<f64>,
    d_left: Vec<f64>,
    d_right: Vec<f64>,
}

impl HistoryFunction {
    /// Knots `k0..=k_end` filled from `f(t, values, derivatives)`.
    pub fn from_fn_with_derivative<F>(n: usize, h: f64, k0: i64, k_end: i64, mut f: F) -> Self
    where
        F: FnMut(f64, &mut [f64], &mut [f64]),
    {
        assert!(k_end > k0, "history needs at least two knots");
        let len = (k_end - k0 + 1) as usize;
        let mut values = vec![0.0; len * n];
        let mut derivs = vec![0.0; len * n];
        for k in 0..len {
            let t = (k0 + k as i64) as f64 * h;
            f(
                t,
                &mut values[k * n..(k + 1) * n],
                &mut derivs[k * n..(k + 1) * n],
            );
        }
        Self {
            n,
            h,
            k0,
            values,
            d_left: derivs.clone(),
            d_right: derivs,
        }
    }

    /// Like [`Self::from_fn_with_derivative`], with central-difference derivatives.
    pub fn from_fn<F>(n: usize, h: f64, k0: i64, k_end: i64, f: F) -> Self
    where
        F: Fn(f64, &mut [f64]),
    {
        let eps = 1e-6 * h.max(1e-3);
        let mut plus = vec![0.0; n];
        let mut minus = vec![0.0; n];
        Self::from_fn_with_derivative(n, h, k0, k_end, |t, v, d| {
            f(t, v);
            f(t + eps, &mut plus);
            f(t - eps, &mut minus);
            for i in 0..n {
                d[i] = (plus[i] - minus[i]) / (2.0 * eps);
            }
        })
    }

    /// Initial segment `[-tauMax, 0]` (padded) on the solver grid of `model`.
    pub fn initial<F>(model: &SystemModel, config: &SolverConfig, f: F) -> Self
    where
        F: FnMut(f64, &mut [f64], &mut [f64]),
    {
        let h = config.step(model.omega);
        Self::from_fn_with_derivative(model.n, h, history_start_index(model.tau_max, h), 0, f)
    }

    pub fn constant(model: &SystemModel, config: &SolverConfig, value: &[f64]) -> Self {
        assert_eq!(value.len(), model.n);
        Self::initial(model, config, |_, v, d| {
            v.copy_from_slice(value);
            d.fill(0.0);
        })
    }

    pub fn component_count(&self) -> usize {
        self.n
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.k0 as f64 * self.h
    }

    pub fn end(&self) -> f64 {
        self.knot_time(self.len() - 1)
    }

    pub fn first_index(&self) -> i64 {
        self.k0
    }

    pub fn knot_time(&self, k: usize) -> f64 {
        (self.k0 + k as i64) as f64 * self.h
    }

    /// Storage position of the knot at absolute grid index `index`.
    pub fn knot_position(&self, index: i64) -> Option<usize> {
        let pos = index - self.k0;
        (pos >= 0 && (pos as usize) < self.len()).then_some(pos as usize)
    }

    pub fn knot_values(&self, k: usize) -> &[f64] {
        &self.values[k * self.n..(k + 1) * self.n]
    }

    fn locate(&self, t: f64) -> Result<Located> {
        let u = (t - self.start()) / self.h;
        let last = (self.len() - 1) as f64;
        let r = u.round();
        if (u - r).abs() < 1e-9 && r >= 0.0 && r <= last {
            return Ok(Located::Knot(r as usize));
        }
        if !(u >= 0.0 && u <= last) {
            return Err(Error::HistorySpan {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        let k = (u.floor() as usize).min(self.len() - 2);
        Ok(Located::Segment(k, u - k as f64))
    }

    fn hermite(&self, k: usize, s: f64, i: usize) -> f64 {
        let n = self.n;
        let y0 = self.values[k * n + i];
        let y1 = self.values[(k + 1) * n + i];
        let m0 = self.d_right[k * n + i];
        let m1 = self.d_left[(k + 1) * n + i];
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * self.h * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * self.h * m1
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        match self.locate(t)? {
            Located::Knot(k) => out.copy_from_slice(self.knot_values(k)),
            Located::Segment(k, s) => {
                for (i, slot) in out.iter_mut().enumerate() {
                    *slot = self.hermite(k, s, i);
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    fn push(&mut self, value: &[f64], derivative: &[f64]) {
        self.values.extend_from_slice(value);
        self.d_left.extend_from_slice(derivative);
        self.d_right.extend_from_slice(derivative);
    }

    fn set_right_derivative(&mut self, k: usize, derivative: &[f64]) {
        self.d_right[k * self.n..(k + 1) * self.n].copy_from_slice(derivative);
    }

    fn right_derivative(&self, k: usize) -> &[f64] {
        &self.d_right[k * self.n..(k + 1) * self.n]
    }
}

enum Located {
    Knot(usize),
    Segment(usize, f64),
}

impl StateLookup for HistoryFunction {
    fn component(&self, i: usize, t: f64) -> Result<f64> {
        match self.locate(t)? {
            Located::Knot(k) => Ok(self.values[k * self.n + i]),
            Located::Segment(k, s) => Ok(self.hermite(k, s, i)),
        }
    }
}

/// First knot index so that the history reaches back past `tau_max`.
pub fn history_start_index(tau_max: f64, h: f64) -> i64 {
    -((1.01 * tau_max / h).ceil() as i64) - 1
}

/// Lookup during an uncommitted step: committed history up to `t_n`, and a
/// quadratic through `(t_n, x_n)` with slope `f_n` and the stage value
/// `(t_s, y)` on `(t_n, t_s]`.
struct StageLookup<'a> {
    history: &'a HistoryFunction,
    t_n: f64,
    x_n: &'a [f64],
    f_n: &'a [f64],
    t_s: f64,
    y: &'a [f64],
}

impl StateLookup for StageLookup<'_> {
    fn component(&self, i: usize, t: f64) -> Result<f64> {
        let tol = 1e-12 * self.history.h;
        if t <= self.t_n + tol {
            return self.history.component(i, t);
        }
        let dt = t - self.t_n;
        let span = self.t_s - self.t_n;
        if span <= tol || t > self.t_s + tol {
            return Err(Error::HistorySpan {
                t,
                start: self.history.start(),
                end: self.t_s,
            });
        }
        let curvature = (self.y[i] - self.x_n[i] - self.f_n[i] * span) / (span * span);
        Ok(self.x_n[i] + self.f_n[i] * dt + curvature * dt * dt)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub history: HistoryFunction,
    pub model_name: Option<String>,
    pub config: SolverConfig,
    pub wall_time_secs: f64,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn sample(&self, t: f64) -> Result<Vec<f64>> {
        sample(self, t)
    }

    /// Knot index of `t = 0` in storage.
    pub fn origin(&self) -> usize {
        self.history
            .knot_position(0)
            .expect("trajectory contains t = 0")
    }

    pub fn end(&self) -> f64 {
        self.history.end()
    }

    /// Writes `t,x1,...,xn` for every knot with `t >= 0`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(csv_header("x", self.history.n))
            .map_err(csv_err)?;
        for k in self.origin()..self.history.len() {
            write_row(
                &mut w,
                self.history.knot_time(k),
                self.history.knot_values(k),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes rows at `t = 0, dt, 2dt, ...` up to the end of the run.
    pub fn write_sampled_csv<W: Write>(&self, dt: f64, writer: W) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidInput("sample spacing must be > 0".into()));
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(csv_header("x", self.history.n))
            .map_err(csv_err)?;
        let count = (self.end() / dt + 1e-9).floor() as usize;
        for k in 0..=count {
            let t = k as f64 * dt;
            write_row(&mut w, t, &self.sample(t)?)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_header(prefix: &str, n: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("{prefix}{i}")))
        .collect()
}

pub(crate) fn write_row<W: Write>(w: &mut csv::Writer<W>, t: f64, values: &[f64]) -> Result<()> {
    let mut record = Vec::with_capacity(values.len() + 1);
    record.push(format!("{t:.12e}"));
    record.extend(values.iter().map(|v| format!("{v:.12e}")));
    w.write_record(&record).map_err(csv_err)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn sample(trajectory: &Trajectory, t: f64) -> Result<Vec<f64>> {
    trajectory.history.eval(t)
}

/// Stepper that owns a growing history; `integrate` is a thin wrapper.
pub struct Solver<'m> {
    model: &'m SystemModel,
    config: SolverConfig,
    history: HistoryFunction,
    warnings: Vec<String>,
    // scratch
    x: Vec<f64>,
    f: Vec<f64>,
    y: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
}

impl<'m> Solver<'m> {
    pub fn new(
        model: &'m SystemModel,
        initial: HistoryFunction,
        config: SolverConfig,
    ) -> Result<Self> {
        config.validate()?;
        let h = config.step(model.omega);
        if initial.n != model.n {
            return Err(Error::InvalidInput(format!(
                "initial history has {} components, model has {}",
                initial.n, model.n
            )));
        }
        if (initial.h - h).abs() > 1e-12 * h {
            return Err(Error::InvalidInput(
                "initial history step does not match the solver step".into(),
            ));
        }
        let origin = initial.knot_position(0).filter(|&k| k + 1 == initial.len());
        let Some(origin) = origin else {
            return Err(Error::InvalidInput(
                "initial history must end at t = 0".into(),
            ));
        };
        if initial.start() > -model.tau_max + 1e-12 {
            return Err(Error::InvalidInput(format!(
                "initial history starts at {} but delays reach back to {}",
                initial.start(),
                -model.tau_max
            )));
        }
        // membership in C0: nonnegative, strictly positive at 0
        for k in 0..initial.len() {
            if initial.knot_values(k).iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "initial history is negative at t = {}",
                    initial.knot_time(k)
                )));
            }
        }
        if initial.knot_values(origin).iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput(
                "initial history must be strictly positive at t = 0".into(),
            ));
        }
        let mut warnings = Vec::new();
        if model.tau_min()? < h {
            warnings.push(format!(
                "some delay drops below the step size {h:.3e}; in-step lookups are extrapolated"
            ));
        }
        let n = model.n;
        let mut solver = Self {
            model,
            config,
            history: initial,
            warnings,
            x: vec![0.0; n],
            f: vec![0.0; n],
            y: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
        };
        // right derivative at t = 0 comes from the equation, not the history
        solver.x.copy_from_slice(solver.history.knot_values(origin));
        let mut f0 = vec![0.0; n];
        rhs_with(
            model,
            0.0,
            &solver.x,
            &solver.history,
            config.quad_nodes,
            &mut f0,
        )?;
        solver.history.set_right_derivative(origin, &f0);
        Ok(solver)
    }

    pub fn time(&self) -> f64 {
        self.history.end()
    }

    pub fn history(&self) -> &HistoryFunction {
        &self.history
    }

    pub fn step_once(&mut self) -> Result<()> {
        let n = self.model.n;
        let h = self.history.h;
        let last = self.history.len() - 1;
        let t_n = self.history.knot_time(last);
        self.x.copy_from_slice(self.history.knot_values(last));
        self.f.copy_from_slice(self.history.right_derivative(last));
        let q = self.config.quad_nodes;

        for i in 0..n {
            self.y[i] = self.x[i] + 0.5 * h * self.f[i];
        }
        self.stage(t_n, t_n + 0.5 * h, 2)?;
        for i in 0..n {
            self.y[i] = self.x[i] + 0.5 * h * self.k2[i];
        }
        self.stage(t_n, t_n + 0.5 * h, 3)?;
        for i in 0..n {
            self.y[i] = self.x[i] + h * self.k3[i];
        }
        self.stage(t_n, t_n + h, 4)?;
        let t_next = (self.history.k0 + last as i64 + 1) as f64 * h;
        for i in 0..n {
            let mut v = self.x[i]
                + h / 6.0 * (self.f[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
            if v < 0.0 {
                if v < -self.config.positivity_tolerance || !v.is_finite() {
                    return Err(Error::PositivityBreach {
                        t: t_next,
                        component: i + 1,
                        value: v,
                    });
                }
                v = 0.0;
            }
            if !v.is_finite() {
                return Err(Error::Eval(crate::expr::EvalError::NonFinite(format!(
                    "state component {} at t = {t_next}",
                    i + 1
                ))));
            }
            self.y[i] = v;
        }
        // derivative at the new knot (also the first stage of the next step)
        let mut f_next = vec![0.0; n];
        {
            let lookup = StageLookup {
                history: &self.history,
                t_n,
                x_n: &self.x,
                f_n: &self.f,
                t_s: t_next,
                y: &self.y,
            };
            rhs_with(self.model, t_next, &self.y, &lookup, q, &mut f_next)?;
        }
        let y = std::mem::take(&mut self.y);
        self.history.push(&y, &f_next);
        self.y = y;
        Ok(())
    }

    fn stage(&mut self, t_n: f64, t_s: f64, which: u8) -> Result<()> {
        let lookup = StageLookup {
            history: &self.history,
            t_n,
            x_n: &self.x,
            f_n: &self.f,
            t_s,
            y: &self.y,
        };
        let out = match which {
            2 => &mut self.k2,
            3 => &mut self.k3,
            _ => &mut self.k4,
        };
        rhs_with(
            self.model,
            t_s,
            &self.y,
            &lookup,
            self.config.quad_nodes,
            out,
        )
    }

    /// Steps until the last knot is at `t_end` (rounded to the grid).
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        let h = self.history.h;
        let target = (t_end / h - 1e-9).ceil() as i64;
        while self.history.k0 + (self.history.len() as i64 - 1) < target {
            self.step_once()?;
        }
        Ok(())
    }

    pub fn advance_steps(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step_once()?;
        }
        Ok(())
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn into_trajectory(self, wall_time_secs: f64) -> Trajectory {
        Trajectory {
            history: self.history,
            model_name: self.model.name.clone(),
            config: self.config,
            wall_time_secs,
            warnings: self.warnings,
        }
    }
}

pub fn integrate(
    model: &SystemModel,
    initial: HistoryFunction,
    t_end: f64,
    config: &SolverConfig,
) -> Result<Trajectory> {
    if !(t_end > 0.0) {
        return Err(Error::InvalidInput("tEnd must be > 0".into()));
    }
    let started = Instant::now();
    let mut solver = Solver::new(model, initial, *config)?;
    solver.advance_to(t_end)?;
    Ok(solver.into_trajectory(started.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_model;
    use std::f64::consts::E;

    fn scalar(d: &str, terms: &str, omega: f64) -> SystemModel {
        load_model(&format!(
            r#"{{"n":1,"omega":{omega},"equations":[{{"d":"{d}","terms":[{terms}]}}]}}"#
        ))
        .unwrap()
    }

    fn ricker_term(beta: &str, tau: &str, c: &str) -> String {
        format!(
            r#"{{"beta":"{beta}","kernel":{{"type":"discrete","tau":"{tau}"}},"nonlinearity":{{"type":"ricker","c":"{c}"}}}}"#
        )
    }

    /// x' = -x + x(t-1) as a Ricker term with c = 0.
    fn linear_delay() -> SystemModel {
        scalar("1", &ricker_term("1", "1", "0"), 1.0)
    }

    #[test]
    fn rhs_at_equilibrium() {
        let m = scalar("1", &ricker_term("exp(2)", "1", "1"), 1.0);
        let cfg = SolverConfig::default();
        let hist = HistoryFunction::constant(&m, &cfg, &[2.0]);
        let r = rhs(&m, 0.0, &hist, &cfg).unwrap();
        assert!(r[0].abs() < 1e-14);
    }

    #[test]
    fn rhs_without_delay_terms_is_linear_part() {
        let m = load_model(
            r#"{"n":2,"omega":1,"equations":[{"d":"2","a":{"2":"0.5"}},{"d":"3","a":{"1":"1"}}]}"#,
        )
        .unwrap();
        let cfg = SolverConfig::default();
        let hist = HistoryFunction::constant(&m, &cfg, &[1.0, 2.0]);
        let r = rhs(&m, 0.0, &hist, &cfg).unwrap();
        let expected = m.linear_matrix(0.0).unwrap() * nalgebra::DVector::from_vec(vec![1.0, 2.0]);
        assert!((r[0] - expected[0]).abs() < 1e-15 && (r[1] - expected[1]).abs() < 1e-15);
    }

    #[test]
    fn density_kernel_vanishes_on_zero_history() {
        let m = scalar(
            "1",
            r#"{"beta":"1","kernel":{"type":"density","tau":"1","gamma":"1"},"nonlinearity":{"type":"ricker","c":"1"}}"#,
            1.0,
        );
        let cfg = SolverConfig::default();
        let hist = HistoryFunction::initial(&m, &cfg, |_, v, d| {
            v.fill(0.0);
            d.fill(0.0);
        });
        assert_eq!(delay_sum(&m, 0, 0.0, &hist, 33).unwrap(), 0.0);
    }

    #[test]
    fn delay_contribution_bounded() {
        // density term: β · sup h · τ · max γ
        let m = scalar(
            "1",
            r#"{"beta":"2+sin(t)","kernel":{"type":"density","tau":"1+0.5*cos(t)","gamma":"1+sin(t)^2"},"nonlinearity":{"type":"ricker","c":"1"}}"#,
            std::f64::consts::TAU,
        );
        let cfg = SolverConfig::default();
        let traj = integrate(&m, HistoryFunction::constant(&m, &cfg, &[3.0]), 20.0, &cfg).unwrap();
        let bound_h = 1.0 / E;
        for k in 0..200 {
            let t = 2.0 + k as f64 * 0.09;
            let v = delay_sum(&m, 0, t, &traj.history, 33).unwrap();
            let cap = (2.0 + t.sin()) * bound_h * (1.0 + 0.5 * t.cos()) * 2.0;
            assert!(v >= 0.0 && v <= cap + 1e-12);
        }
    }

    #[test]
    fn exponential_decay() {
        let m = scalar("1", "", 1.0);
        let cfg = SolverConfig::default();
        let traj = integrate(&m, HistoryFunction::constant(&m, &cfg, &[1.0]), 1.0, &cfg).unwrap();
        assert!((traj.sample(1.0).unwrap()[0] - (-1.0f64).exp()).abs() < 1e-8);
        assert!((traj.sample(0.5).unwrap()[0] - (-0.5f64).exp()).abs() < 1e-8);
        // off-knot dense output
        assert!((traj.sample(0.123_456).unwrap()[0] - (-0.123_456f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn constant_equilibria_persist() {
        let m = scalar("1", &ricker_term("exp(2)", "1", "1"), 1.0);
        let cfg = SolverConfig::default();
        let traj = integrate(&m, HistoryFunction::constant(&m, &cfg, &[2.0]), 10.0, &cfg).unwrap();
        for k in traj.origin()..traj.history.len() {
            assert!((traj.history.knot_values(k)[0] - 2.0).abs() < 1e-9);
        }
        let m = linear_delay();
        let traj = integrate(&m, HistoryFunction::constant(&m, &cfg, &[5.0]), 10.0, &cfg).unwrap();
        assert!((traj.sample(10.0).unwrap()[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn knot_sampling_is_exact_and_linear_is_reproduced() {
        let m = scalar("1", "", 1.0);
        let cfg = SolverConfig::default();
        let traj = integrate(&m, HistoryFunction::constant(&m, &cfg, &[1.0]), 1.0, &cfg).unwrap();
        let k = traj.origin() + 17;
        assert_eq!(
            traj.sample(traj.history.knot_time(k)).unwrap()[0],
            traj.history.knot_values(k)[0]
        );
        let lin = HistoryFunction::from_fn_with_derivative(1, 0.25, -4, 4, |t, v, d| {
            v[0] = 3.0 * t - 1.0;
            d[0] = 3.0;
        });
        let mid = lin.eval(0.125 + 0.25).unwrap()[0];
        assert!((mid - (3.0 * 0.375 - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn history_span_is_enforced() {
        let lin = HistoryFunction::from_fn(1, 0.25, -4, 0, |t, v| v[0] = t);
        assert!(matches!(lin.eval(0.1), Err(Error::HistorySpan { .. })));
        assert!(matches!(lin.eval(-1.1), Err(Error::HistorySpan { .. })));
        assert!(lin.eval(-1.0).is_ok());
    }

    #[test]
    fn rejects_histories_outside_c0() {
        let m = linear_delay();
        let cfg = SolverConfig::default();
        let zero = HistoryFunction::constant(&m, &cfg, &[0.0]);
        assert!(matches!(
            integrate(&m, zero, 1.0, &cfg),
            Err(Error::InvalidInput(_))
        ));
        assert!(SolverConfig::with_steps(16).validate().is_err());
        let bad = SolverConfig {
            quad_nodes: 32,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    /// Max error over [0, 3] against a 16× finer reference.
    fn order_error(steps: usize, reference: &Trajectory) -> f64 {
        let m = linear_delay();
        let cfg = SolverConfig::with_steps(steps);
        let phi = HistoryFunction::initial(&m, &cfg, |t, v, d| {
            v[0] = 1.0 + 0.5 * (3.0 * t).sin();
            d[0] = 1.5 * (3.0 * t).cos();
        });
        let traj = integrate(&m, phi, 3.0, &cfg).unwrap();
        (traj.origin()..traj.history.len())
            .map(|k| {
                let t = traj.history.knot_time(k);
                (traj.history.knot_values(k)[0] - reference.sample(t).unwrap()[0]).abs()
            })
            .fold(0.0, f64::max)
    }

    pub(crate) fn order_ratio() -> f64 {
        let m = linear_delay();
        let cfg = SolverConfig::with_steps(32 * 16 * 2);
        let phi = HistoryFunction::initial(&m, &cfg, |t, v, d| {
            v[0] = 1.0 + 0.5 * (3.0 * t).sin();
            d[0] = 1.5 * (3.0 * t).cos();
        });
        let reference = integrate(&m, phi, 3.0, &cfg).unwrap();
        order_error(32, &reference) / order_error(64, &reference)
    }

    #[test]
    fn fourth_order_convergence() {
        let ratio = order_ratio();
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn positive_and_bounded_over_fifty_periods() {
        let m = scalar(
            "1+0.5*sin(t)",
            &ricker_term("4+sin(t)^2", "1", "1"),
            std::f64::consts::TAU,
        );
        let cfg = SolverConfig::default();
        for x0 in [1e-3, 1.0, 100.0] {
            let traj = integrate(
                &m,
                HistoryFunction::constant(&m, &cfg, &[x0]),
                50.0 * m.omega,
                &cfg,
            )
            .unwrap();
            let tail_start = traj.origin() + 10 * cfg.steps_per_period;
            for k in traj.origin() + 1..traj.history.len() {
                let v = traj.history.knot_values(k)[0];
                assert!(v > 0.0);
                if k >= tail_start {
                    // β sup h / min d bounds the absorbing box
                    assert!(v < 5.0 / E / 0.5 + 1e-6);
                }
            }
        }
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let m = scalar("1", "", 1.0);
        let cfg = SolverConfig::with_steps(32);
        let traj = integrate(&m, HistoryFunction::constant(&m, &cfg, &[1.0]), 1.0, &cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x1\n"));
        assert_eq!(text.lines().count(), 1 + 33);
        let mut buf = Vec::new();
        traj.write_sampled_csv(0.25, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 5);
    }
}
