//! System family: coefficients, kernels, nonlinearities, and the
//! community matrices `D`, `A`, `B`, `M = B + A - D`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, PeriodicExpr};

/// Points per period used for all sign and periodicity checks.
pub const VERIFICATION_GRID: usize = 512;
/// Default trapezoid node count for distributed kernels.
pub const DEFAULT_QUAD_NODES: usize = 33;

// ---------------------------------------------------------------------------
// Document schema

/// An expression value: either source text or a bare JSON number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExprValue {
    Number(f64),
    Text(String),
}

impl ExprValue {
    fn text(&self) -> String {
        match self {
            ExprValue::Number(v) => v.to_string(),
            ExprValue::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n: usize,
    pub omega: f64,
    /// Named scalar constants usable inside expressions.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    pub equations: Vec<EquationDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquationDocument {
    pub d: ExprValue,
    #[serde(default)]
    pub a: BTreeMap<String, ExprValue>,
    #[serde(default)]
    pub terms: Vec<TermDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermDocument {
    pub beta: ExprValue,
    pub kernel: KernelDocument,
    pub nonlinearity: NonlinearityDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelDocument {
    Discrete { tau: ExprValue },
    Density { tau: ExprValue, gamma: ExprValue },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearityDocument {
    Ricker { c: ExprValue },
    MackeyGlass { c: ExprValue, alpha: f64 },
    ScaledRicker { c: ExprValue, alpha: f64 },
}

// ---------------------------------------------------------------------------
// Validated model

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityKind {
    Ricker,
    MackeyGlass,
    ScaledRicker,
}

/// Birth function `h(t, x)`; every variant satisfies `h(t,0) = 0` and `∂h/∂x(t,0) = 1`.
#[derive(Debug, Clone)]
pub enum Nonlinearity {
    /// `x e^{-c(t) x}`
    Ricker { c: PeriodicExpr },
    /// `x / (1 + c(t) x^alpha)`, `alpha >= 1`
    MackeyGlass { c: PeriodicExpr, alpha: f64 },
    /// `x e^{-c(t) x^alpha}`, `alpha > 0`
    ScaledRicker { c: PeriodicExpr, alpha: f64 },
}

impl Nonlinearity {
    pub fn kind(&self) -> NonlinearityKind {
        match self {
            Nonlinearity::Ricker { .. } => NonlinearityKind::Ricker,
            Nonlinearity::MackeyGlass { .. } => NonlinearityKind::MackeyGlass,
            Nonlinearity::ScaledRicker { .. } => NonlinearityKind::ScaledRicker,
        }
    }

    pub fn c(&self) -> &PeriodicExpr {
        match self {
            Nonlinearity::Ricker { c }
            | Nonlinearity::MackeyGlass { c, .. }
            | Nonlinearity::ScaledRicker { c, .. } => c,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            Nonlinearity::Ricker { .. } => 1.0,
            Nonlinearity::MackeyGlass { alpha, .. } | Nonlinearity::ScaledRicker { alpha, .. } => {
                *alpha
            }
        }
    }

    /// Slope of the lower envelope `h^-` at zero. All built-in families are
    /// normalized so that no rescaling is needed.
    pub fn lower_envelope_scale(&self) -> f64 {
        1.0
    }

    pub fn eval(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.eval_with_c(self.c().eval(t)?, x))
    }

    /// `h` for a frozen value `c` of the coefficient. Negative `x` is treated as 0.
    #[inline]
    pub fn eval_with_c(&self, c: f64, x: f64) -> f64 {
        let x = x.max(0.0);
        match self {
            Nonlinearity::Ricker { .. } => x * (-c * x).exp(),
            Nonlinearity::MackeyGlass { alpha, .. } => x / (1.0 + c * x.powf(*alpha)),
            Nonlinearity::ScaledRicker { alpha, .. } => x * (-c * x.powf(*alpha)).exp(),
        }
    }

    /// `∂h/∂x` for a frozen coefficient value.
    pub fn derivative_with_c(&self, c: f64, x: f64) -> f64 {
        let x = x.max(0.0);
        match self {
            Nonlinearity::Ricker { .. } => (1.0 - c * x) * (-c * x).exp(),
            Nonlinearity::MackeyGlass { alpha, .. } => {
                let xa = x.powf(*alpha);
                (1.0 + c * xa - c * alpha * xa) / (1.0 + c * xa).powi(2)
            }
            Nonlinearity::ScaledRicker { alpha, .. } => {
                let xa = x.powf(*alpha);
                (1.0 - c * alpha * xa) * (-c * xa).exp()
            }
        }
    }

    /// Supremum of `h(·, x)` over `x >= 0` for a frozen `c > 0`.
    pub fn sup_with_c(&self, c: f64) -> f64 {
        match self {
            Nonlinearity::Ricker { .. } => 1.0 / (std::f64::consts::E * c),
            Nonlinearity::MackeyGlass { alpha, .. } => {
                if *alpha == 1.0 {
                    1.0 / c
                } else {
                    // maximized at x^alpha = 1/(c(alpha-1))
                    let xa = 1.0 / (c * (alpha - 1.0));
                    xa.powf(1.0 / alpha) / (1.0 + c * xa)
                }
            }
            Nonlinearity::ScaledRicker { alpha, .. } => {
                let xa = 1.0 / (c * alpha);
                xa.powf(1.0 / alpha) * (-1.0 / alpha).exp()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum Kernel {
    /// Point mass at `t - tau(t)`.
    Discrete { tau: PeriodicExpr },
    /// Density `gamma(s)` on `[t - tau(t), t]`.
    DistributedDensity {
        gamma: PeriodicExpr,
        tau: PeriodicExpr,
    },
}

impl Kernel {
    pub fn tau(&self) -> &PeriodicExpr {
        match self {
            Kernel::Discrete { tau } | Kernel::DistributedDensity { tau, .. } => tau,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DelayTerm {
    pub beta: PeriodicExpr,
    pub kernel: Kernel,
    pub nonlinearity: Nonlinearity,
}

impl DelayTerm {
    /// `beta(t)` times the kernel mass over `[t - tau(t), t]`.
    pub fn effective_rate(&self, t: f64, quad_nodes: usize) -> Result<f64> {
        let beta = self.beta.eval(t)?;
        match &self.kernel {
            Kernel::Discrete { .. } => Ok(beta),
            Kernel::DistributedDensity { gamma, tau } => {
                let tau = tau.eval(t)?;
                let mass = trapezoid(t - tau, t, quad_nodes, |s| {
                    gamma.eval(s).map_err(Error::from)
                })?;
                Ok(beta * mass)
            }
        }
    }
}

/// Composite trapezoid with `nodes` equispaced nodes on `[a, b]`.
pub fn trapezoid<F>(a: f64, b: f64, nodes: usize, mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    debug_assert!(nodes >= 2);
    if b <= a {
        return Ok(0.0);
    }
    let panels = (nodes - 1) as f64;
    let step = (b - a) / panels;
    let mut sum = 0.5 * (f(a)? + f(b)?);
    for k in 1..nodes - 1 {
        sum += f(a + k as f64 * step)?;
    }
    Ok(sum * step)
}

#[derive(Debug, Clone)]
pub struct Equation {
    pub d: PeriodicExpr,
    /// `(j, a_ij)` with 0-based `j != i`, sorted by `j`.
    pub off_diagonal: Vec<(usize, PeriodicExpr)>,
    pub terms: Vec<DelayTerm>,
}

#[derive(Debug, Clone)]
pub struct SystemModel {
    pub name: Option<String>,
    pub n: usize,
    pub omega: f64,
    pub equations: Vec<Equation>,
    /// Largest delay seen on a 4× refined verification grid.
    pub tau_max: f64,
    pub document: ModelDocument,
}

/// Community matrices at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixBundle {
    pub d: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub m: DMatrix<f64>,
}

pub fn load_model(json: &str) -> Result<SystemModel> {
    let document: ModelDocument =
        serde_json::from_str(json).map_err(|e| Error::Schema(e.to_string()))?;
    SystemModel::from_document(document)
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<SystemModel> {
    let text = std::fs::read_to_string(path.as_ref())?;
    load_model(&text)
}

struct Builder<'a> {
    omega: f64,
    params: &'a BTreeMap<String, f64>,
}

impl Builder<'_> {
    fn expr(&self, value: &ExprValue, equation: usize, coefficient: &str) -> Result<PeriodicExpr> {
        let text = value.text();
        let ast = expr::parse_with_params(&text, self.params).map_err(|error| Error::Parse {
            source_text: text.clone(),
            error,
        })?;
        let pe = PeriodicExpr::new(&text, ast, self.omega)?;
        let check = pe.check_periodicity(VERIFICATION_GRID)?;
        if !check.periodic {
            return Err(Error::Periodicity {
                equation,
                coefficient: coefficient.to_string(),
                discrepancy: check.max_discrepancy,
                t: check.worst_t,
            });
        }
        Ok(pe)
    }

    /// Enforces `f >= 0`, reporting the worst point located on a 4× refined grid.
    fn sign(&self, f: &PeriodicExpr, equation: usize, coefficient: &str) -> Result<()> {
        let (min, _) = sampled_min(f, VERIFICATION_GRID)?;
        if min < -1e-12 {
            let (value, t) = sampled_min(f, 4 * VERIFICATION_GRID)?;
            return Err(Error::SignViolation {
                equation,
                coefficient: coefficient.to_string(),
                requirement: ">= 0",
                value,
                t,
            });
        }
        Ok(())
    }
}

fn sampled_min(f: &PeriodicExpr, samples: usize) -> Result<(f64, f64)> {
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..samples {
        let t = k as f64 * f.period() / samples as f64;
        let v = f.eval(t)?;
        if v < best.0 {
            best = (v, t);
        }
    }
    Ok(best)
}

impl SystemModel {
    pub fn from_document(document: ModelDocument) -> Result<Self> {
        if document.n == 0 {
            return Err(Error::Schema("n must be >= 1".into()));
        }
        if document.equations.len() != document.n {
            return Err(Error::Schema(format!(
                "n = {} but {} equations given",
                document.n,
                document.equations.len()
            )));
        }
        if !(document.omega.is_finite() && document.omega > 0.0) {
            return Err(Error::Schema("omega must be a positive number".into()));
        }
        let builder = Builder {
            omega: document.omega,
            params: &document.params,
        };
        let n = document.n;
        let mut equations = Vec::with_capacity(n);
        let mut tau_max = 0.0_f64;
        for (i, eq) in document.equations.iter().enumerate() {
            let number = i + 1;
            let d = builder.expr(&eq.d, number, "d")?;
            // strict positivity of d is an (H1) matter, reported by the hypothesis check
            builder.sign(&d, number, "d")?;
            let mut off_diagonal = Vec::new();
            for (key, value) in &eq.a {
                let j: usize = key.trim().parse().map_err(|_| {
                    Error::Schema(format!("equation {number}: bad `a` index `{key}`"))
                })?;
                if j == 0 || j > n {
                    return Err(Error::Schema(format!(
                        "equation {number}: `a` index {j} out of range 1..={n}"
                    )));
                }
                if j == number {
                    return Err(Error::Schema(format!(
                        "equation {number}: `a` must not contain the diagonal index {j}"
                    )));
                }
                let name = format!("a{number}{j}");
                let a = builder.expr(value, number, &name)?;
                builder.sign(&a, number, &name)?;
                off_diagonal.push((j - 1, a));
            }
            off_diagonal.sort_by_key(|(j, _)| *j);
            let mut terms = Vec::with_capacity(eq.terms.len());
            for (k, term) in eq.terms.iter().enumerate() {
                let label = |what: &str| format!("terms[{}].{what}", k + 1);
                let beta = builder.expr(&term.beta, number, &label("beta"))?;
                builder.sign(&beta, number, &label("beta"))?;
                let kernel = match &term.kernel {
                    KernelDocument::Discrete { tau } => {
                        let tau = builder.expr(tau, number, &label("tau"))?;
                        builder.sign(&tau, number, &label("tau"))?;
                        Kernel::Discrete { tau }
                    }
                    KernelDocument::Density { tau, gamma } => {
                        let tau = builder.expr(tau, number, &label("tau"))?;
                        builder.sign(&tau, number, &label("tau"))?;
                        let gamma = builder.expr(gamma, number, &label("gamma"))?;
                        builder.sign(&gamma, number, &label("gamma"))?;
                        Kernel::DistributedDensity { gamma, tau }
                    }
                };
                let (_, tau_hi) = kernel.tau().range(4 * VERIFICATION_GRID)?;
                tau_max = tau_max.max(tau_hi);
                let nonlinearity = match &term.nonlinearity {
                    NonlinearityDocument::Ricker { c } => {
                        let c = builder.expr(c, number, &label("c"))?;
                        builder.sign(&c, number, &label("c"))?;
                        Nonlinearity::Ricker { c }
                    }
                    NonlinearityDocument::MackeyGlass { c, alpha } => {
                        if !(*alpha >= 1.0 && alpha.is_finite()) {
                            return Err(Error::Schema(format!(
                                "equation {number}: mackey_glass alpha must be >= 1"
                            )));
                        }
                        let c = builder.expr(c, number, &label("c"))?;
                        builder.sign(&c, number, &label("c"))?;
                        Nonlinearity::MackeyGlass { c, alpha: *alpha }
                    }
                    NonlinearityDocument::ScaledRicker { c, alpha } => {
                        if !(*alpha > 0.0 && alpha.is_finite()) {
                            return Err(Error::Schema(format!(
                                "equation {number}: scaled_ricker alpha must be > 0"
                            )));
                        }
                        let c = builder.expr(c, number, &label("c"))?;
                        builder.sign(&c, number, &label("c"))?;
                        Nonlinearity::ScaledRicker { c, alpha: *alpha }
                    }
                };
                terms.push(DelayTerm {
                    beta,
                    kernel,
                    nonlinearity,
                });
            }
            equations.push(Equation {
                d,
                off_diagonal,
                terms,
            });
        }
        Ok(Self {
            name: document.name.clone(),
            n,
            omega: document.omega,
            equations,
            tau_max,
            document,
        })
    }

    /// Reloads the document with one parameter overridden.
    pub fn with_param(&self, name: &str, value: f64) -> Result<Self> {
        let mut doc = self.document.clone();
        doc.params.insert(name.to_string(), value);
        Self::from_document(doc)
    }

    /// Every coefficient expression in the model, labelled.
    pub fn expressions(&self) -> Vec<(usize, String, &PeriodicExpr)> {
        let mut out = Vec::new();
        for (i, eq) in self.equations.iter().enumerate() {
            out.push((i + 1, "d".to_string(), &eq.d));
            for (j, a) in &eq.off_diagonal {
                out.push((i + 1, format!("a{}{}", i + 1, j + 1), a));
            }
            for (k, term) in eq.terms.iter().enumerate() {
                out.push((i + 1, format!("terms[{}].beta", k + 1), &term.beta));
                out.push((i + 1, format!("terms[{}].tau", k + 1), term.kernel.tau()));
                if let Kernel::DistributedDensity { gamma, .. } = &term.kernel {
                    out.push((i + 1, format!("terms[{}].gamma", k + 1), gamma));
                }
                out.push((i + 1, format!("terms[{}].c", k + 1), term.nonlinearity.c()));
            }
        }
        out
    }

    pub fn all_ricker(&self) -> bool {
        self.equations.iter().all(|eq| {
            eq.terms
                .iter()
                .all(|t| t.nonlinearity.kind() == NonlinearityKind::Ricker)
        })
    }

    pub fn has_density_kernels(&self) -> bool {
        self.equations.iter().any(|eq| {
            eq.terms
                .iter()
                .any(|t| matches!(t.kernel, Kernel::DistributedDensity { .. }))
        })
    }

    /// True when no coefficient (other than delays) varies over the verification grid.
    pub fn is_autonomous(&self) -> Result<bool> {
        for (_, label, e) in self.expressions() {
            if label.ends_with(".tau") {
                continue;
            }
            let (lo, hi) = e.range(VERIFICATION_GRID)?;
            if hi - lo >= 1e-12 {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Smallest delay on the verification grid.
    pub fn tau_min(&self) -> Result<f64> {
        let mut lo = f64::INFINITY;
        for eq in &self.equations {
            for term in &eq.terms {
                lo = lo.min(term.kernel.tau().range(VERIFICATION_GRID)?.0);
            }
        }
        Ok(if lo.is_finite() { lo } else { 0.0 })
    }

    /// `(D(t) - A(t)) x` written into `out` as `-(...)`, i.e. the linear part `(A - D) x`.
    pub fn linear_part(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        for (i, eq) in self.equations.iter().enumerate() {
            let mut acc = -eq.d.eval(t)? * x[i];
            for (j, a) in &eq.off_diagonal {
                acc += a.eval(t)? * x[*j];
            }
            out[i] = acc;
        }
        Ok(())
    }

    /// `A(t) - D(t)` as a dense matrix.
    pub fn linear_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, eq) in self.equations.iter().enumerate() {
            m[(i, i)] = -eq.d.eval(t)?;
            for (j, a) in &eq.off_diagonal {
                m[(i, *j)] = a.eval(t)?;
            }
        }
        Ok(m)
    }
}

/// `beta_i(t) = Σ_k beta_ik(t) ∫ gamma_ik dη_ik` (0-based `i`).
pub fn beta_i(model: &SystemModel, i: usize, t: f64, quad_nodes: usize) -> Result<f64> {
    assert!(quad_nodes >= 2, "quad_nodes must be >= 2");
    model.equations[i]
        .terms
        .iter()
        .map(|term| term.effective_rate(t, quad_nodes))
        .sum()
}

pub fn community_matrices(model: &SystemModel, t: f64) -> Result<MatrixBundle> {
    community_matrices_with(model, t, DEFAULT_QUAD_NODES)
}

pub fn community_matrices_with(
    model: &SystemModel,
    t: f64,
    quad_nodes: usize,
) -> Result<MatrixBundle> {
    let n = model.n;
    let mut d = DMatrix::zeros(n, n);
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    for (i, eq) in model.equations.iter().enumerate() {
        d[(i, i)] = eq.d.eval(t)?;
        for (j, aij) in &eq.off_diagonal {
            a[(i, *j)] = aij.eval(t)?;
        }
        b[(i, i)] = beta_i(model, i, t, quad_nodes)?;
    }
    let m = &b + &a - &d;
    Ok(MatrixBundle { d, a, b, m })
}

pub fn nonlinearity_eval(nl: &Nonlinearity, t: f64, x: f64) -> Result<f64> {
    nl.eval(t, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    pub(crate) fn scalar_nicholson(
        d: &str,
        beta: &str,
        c: &str,
        tau: &str,
        omega: f64,
    ) -> SystemModel {
        let json = format!(
            r#"{{"n":1,"omega":{omega},"equations":[{{"d":"{d}","terms":[{{"beta":"{beta}",
            "kernel":{{"type":"discrete","tau":"{tau}"}},"nonlinearity":{{"type":"ricker","c":"{c}"}}}}]}}]}}"#
        );
        load_model(&json).unwrap()
    }

    fn mackey_glass_pair() -> SystemModel {
        let json = r#"{
          "n": 2, "omega": 3.141592653589793,
          "params": {"eps1": 1, "eps2": 1, "delta1": 2, "delta2": 2},
          "equations": [
            {"d": "eps1+sin(t)^2", "a": {"2": "abs(cos(2*t))"},
             "terms": [{"beta": "delta1+cos(t)^2",
                        "kernel": {"type": "discrete", "tau": "sin(t)^2"},
                        "nonlinearity": {"type": "mackey_glass", "c": "exp(-sin(t)^2)", "alpha": 1}}]},
            {"d": "eps2+cos(t)^2", "a": {"1": "abs(cos(2*t))"},
             "terms": [{"beta": "delta2+sin(t)^2",
                        "kernel": {"type": "discrete", "tau": "cos(t)^2"},
                        "nonlinearity": {"type": "mackey_glass", "c": "2+cos(2*t)", "alpha": 1}}]}
          ]}"#;
        load_model(json).unwrap()
    }

    #[test]
    fn loads_mackey_glass_pair() {
        let m = mackey_glass_pair();
        assert_eq!(m.n, 2);
        assert!((m.tau_max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_constant_document() {
        let m = scalar_nicholson("1", "exp(2)", "1", "1", 1.0);
        assert_eq!(m.n, 1);
        assert!(m.is_autonomous().unwrap());
    }

    #[test]
    fn sign_violation_is_reported() {
        let json = r#"{"n":1,"omega":6.283185307179586,"equations":[{"d":"sin(t)"}]}"#;
        match load_model(json) {
            Err(Error::SignViolation {
                equation,
                coefficient,
                t,
                ..
            }) => {
                assert_eq!(equation, 1);
                assert_eq!(coefficient, "d");
                // worst point of sin on the refined grid is at 3π/2
                assert!((t - 1.5 * PI).abs() < 1e-2);
            }
            other => panic!("expected sign violation, got {other:?}"),
        }
    }

    #[test]
    fn periodicity_violation_is_reported() {
        let json = r#"{"n":1,"omega":3.141592653589793,"equations":[{"d":"2+sin(t)"}]}"#;
        assert!(matches!(load_model(json), Err(Error::Periodicity { .. })));
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(load_model("{}"), Err(Error::Schema(_))));
        let bad_index = r#"{"n":1,"omega":1,"equations":[{"d":"1","a":{"1":"1"}}]}"#;
        assert!(matches!(load_model(bad_index), Err(Error::Schema(_))));
        let bad_alpha = r#"{"n":1,"omega":1,"equations":[{"d":"1","terms":[{"beta":"1",
            "kernel":{"type":"discrete","tau":"1"},"nonlinearity":{"type":"mackey_glass","c":"1","alpha":0.5}}]}]}"#;
        assert!(matches!(load_model(bad_alpha), Err(Error::Schema(_))));
    }

    #[test]
    fn beta_examples() {
        // density kernel with gamma ≡ 1 and tau = b e^{-cos²t} + 1
        let json = r#"{"n":1,"omega":3.141592653589793,"params":{"b1":1.5},"equations":[{"d":"1",
          "terms":[{"beta":"exp(cos(t)^2)","kernel":{"type":"density","tau":"b1*exp(-cos(t)^2)+1","gamma":"1"},
          "nonlinearity":{"type":"ricker","c":"1+abs(sin(t))"}}]}]}"#;
        let m = load_model(json).unwrap();
        for k in 0..10 {
            let t = k as f64 * 0.37;
            let expected = 1.5 + (t.cos().powi(2)).exp();
            assert!((beta_i(&m, 0, t, 3).unwrap() - expected).abs() < 1e-12);
        }
        // pure discrete kernels sum
        let json = r#"{"n":1,"omega":1,"equations":[{"d":"1","terms":[
          {"beta":"2","kernel":{"type":"discrete","tau":"1"},"nonlinearity":{"type":"ricker","c":"1"}},
          {"beta":"3","kernel":{"type":"discrete","tau":"0.5"},"nonlinearity":{"type":"ricker","c":"1"}}]}]}"#;
        let m = load_model(json).unwrap();
        assert_eq!(beta_i(&m, 0, 0.3, 33).unwrap(), 5.0);
        let m = load_model(r#"{"n":1,"omega":1,"equations":[{"d":"1"}]}"#).unwrap();
        assert_eq!(beta_i(&m, 0, 0.3, 33).unwrap(), 0.0);
    }

    #[test]
    fn density_beta_converges_under_refinement() {
        let json = r#"{"n":1,"omega":6.283185307179586,"equations":[{"d":"1",
          "terms":[{"beta":"1","kernel":{"type":"density","tau":"1+0.5*sin(t)","gamma":"2+cos(t)"},
          "nonlinearity":{"type":"ricker","c":"1"}}]}]}"#;
        let m = load_model(json).unwrap();
        let t = 0.7;
        let coarse = beta_i(&m, 0, t, 4097).unwrap();
        let fine = beta_i(&m, 0, t, 8193).unwrap();
        assert!((coarse - fine).abs() < 1e-8);
        // exact: ∫_{t-τ}^t (2 + cos s) ds
        let tau = 1.0 + 0.5 * t.sin();
        let exact = 2.0 * tau + t.sin() - (t - tau).sin();
        assert!((fine - exact).abs() < 1e-8);
    }

    #[test]
    fn community_matrices_at_zero() {
        let m = mackey_glass_pair();
        let mb = community_matrices(&m, 0.0).unwrap();
        let dm_a = &mb.d - &mb.a;
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 2.0]);
        assert!((dm_a - expected).abs().max() < 1e-15);
        // (δ2 + sin²0) - (ε2 + cos²0) = 0 on the diagonal of the second row
        let expected_m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 0.0]);
        assert!((&mb.m - expected_m).abs().max() < 1e-15);
        assert_eq!(mb.m, &mb.b + &mb.a - &mb.d);
        for i in 0..2 {
            assert_eq!(mb.a[(i, i)], 0.0);
            assert_eq!(
                mb.b[(i, i)],
                beta_i(&m, i, 0.0, DEFAULT_QUAD_NODES).unwrap()
            );
        }
    }

    #[test]
    fn community_matrices_scalar_and_periodic() {
        let m = scalar_nicholson("1", "exp(2)", "1", "1", 1.0);
        let mb = community_matrices(&m, 0.4).unwrap();
        assert!((mb.m[(0, 0)] - (E * E - 1.0)).abs() < 1e-14);
        let ex = mackey_glass_pair();
        for k in 0..16 {
            let t = k as f64 * 0.217;
            let a = community_matrices(&ex, t).unwrap();
            let b = community_matrices(&ex, t + ex.omega).unwrap();
            assert!((a.m - b.m).abs().max() < 1e-9);
        }
    }

    #[test]
    fn nonlinearity_values() {
        let one = PeriodicExpr::constant(1.0, 1.0);
        let ricker = Nonlinearity::Ricker { c: one.clone() };
        assert!((ricker.eval(0.0, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        let mg = Nonlinearity::MackeyGlass {
            c: one.clone(),
            alpha: 1.0,
        };
        assert_eq!(mg.eval(0.0, 1.0).unwrap(), 0.5);
        let sr = Nonlinearity::ScaledRicker { c: one, alpha: 2.0 };
        for nl in [&ricker, &mg, &sr] {
            assert_eq!(nl.eval(0.3, 0.0).unwrap(), 0.0);
            // unit slope at the origin
            let slope = nl.eval_with_c(1.0, 1e-8) / 1e-8;
            assert!((slope - 1.0).abs() < 1e-6);
            // analytic derivative vs central difference
            for x in [0.3, 1.0, 2.5] {
                let fd = (nl.eval_with_c(1.3, x + 1e-6) - nl.eval_with_c(1.3, x - 1e-6)) / 2e-6;
                assert!((fd - nl.derivative_with_c(1.3, x)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn ricker_bounded_by_inverse_ec() {
        let m = scalar_nicholson("1", "2", "1.5+sin(t)^2", "1", PI);
        let nl = &m.equations[0].terms[0].nonlinearity;
        let (cmin, _) = nl.c().range(VERIFICATION_GRID).unwrap();
        let bound = 1.0 / (E * cmin);
        for k in 0..64 {
            let t = k as f64 * PI / 64.0;
            for j in 0..400 {
                let x = j as f64 * 0.05;
                let h = nl.eval(t, x).unwrap();
                assert!(h >= 0.0 && h <= bound + 1e-15);
            }
        }
        for nl in [
            Nonlinearity::MackeyGlass {
                c: PeriodicExpr::constant(1.0, 1.0),
                alpha: 3.0,
            },
            Nonlinearity::ScaledRicker {
                c: PeriodicExpr::constant(2.0, 1.0),
                alpha: 0.5,
            },
        ] {
            let c = nl.c().eval(0.0).unwrap();
            let sup = nl.sup_with_c(c);
            let sampled = (0..20000)
                .map(|j| nl.eval_with_c(c, j as f64 * 1e-3))
                .fold(0.0, f64::max);
            assert!(sampled <= sup + 1e-12 && sup - sampled < 1e-5);
        }
    }
}
