//! Central finite-difference audit of tape gradients (64-bit only).

use serde::Serialize;

use super::{Bound, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub h: f64,
    /// Pass threshold on the per-element relative error.
    pub tol: f64,
    /// Relative errors are taken against `max(|analytic|, |numeric|, floor·max(1, |f|))`;
    /// below that scale the finite difference is dominated by rounding.
    pub floor: f64,
    /// Check at most this many evenly spaced elements per parameter.
    pub max_checks_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-6,
            tol: 1e-5,
            floor: 1e-4,
            max_checks_per_param: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamError {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub params: Vec<ParamError>,
    pub tol: f64,
}

impl GradReport {
    pub fn max_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tol)
    }
}

/// Runs `f` once on a fresh tape and returns the scalar value and the
/// analytic gradient of every parameter.
pub fn analytic_gradients<F>(f: &F, params: &ParamStore<f64>) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let out = f(&mut tape, &bound)?;
    if tape.value(out).len() != 1 {
        return Err(Error::NonScalarRoot(tape.shape(out).to_vec()));
    }
    let value = tape.scalar_value(out);
    tape.backward(out)?;
    Ok((value, params.gradients(&tape, &bound)))
}

fn evaluate<F>(f: &F, params: &ParamStore<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let out = f(&mut tape, &bound)?;
    Ok(tape.scalar_value(out))
}

/// Compares supplied analytic gradients with central differences of `f`.
pub fn compare_gradients<F>(
    f: &F,
    params: &ParamStore<f64>,
    analytic: &[Vec<f64>],
    cfg: &GradCheckConfig,
) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let base = evaluate(f, params)?;
    let floor = cfg.floor * base.abs().max(1.0);
    let mut work = params.clone();
    let mut report = Vec::with_capacity(params.len());
    for (p, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let indices: Vec<usize> = match cfg.max_checks_per_param {
            Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
            _ => (0..n).collect(),
        };
        let mut worst = ParamError {
            name: params.names()[p].clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in indices {
            let orig = work.value(p)[i];
            work.value_mut(p)[i] = orig + cfg.h;
            let plus = evaluate(f, &work)?;
            work.value_mut(p)[i] = orig - cfg.h;
            let minus = evaluate(f, &work)?;
            work.value_mut(p)[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.h);
            let a = grad[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if err > worst.max_rel_error || i == 0 {
                worst = ParamError {
                    max_rel_error: err.max(worst.max_rel_error),
                    worst_index: i,
                    analytic: a,
                    numeric,
                    ..worst
                };
            }
        }
        report.push(worst);
    }
    Ok(GradReport {
        params: report,
        tol: cfg.tol,
    })
}

/// Finite-difference audit of every parameter of `f`.
pub fn check_gradients<F>(f: F, params: &ParamStore<f64>, cfg: &GradCheckConfig) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    let (_, analytic) = analytic_gradients(&f, params)?;
    compare_gradients(&f, params, &analytic, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamLayout;

    fn linear_program(layout: &mut ParamLayout) -> impl Fn(&mut Tape<f64>, &Bound) -> Result<Var> {
        let lin = layout.linear("lin", 3, 2);
        let x = layout.add("x", vec![4, 3], crate::autodiff::Init::Glorot { fan_in: 3, fan_out: 3 });
        move |t: &mut Tape<f64>, b: &Bound| {
            let y = lin.apply(t, b, b[x])?;
            t.sum(y)
        }
    }

    #[test]
    fn identity_linear_program_has_no_error() {
        let mut layout = ParamLayout::new();
        let f = linear_program(&mut layout);
        let params = ParamStore::init(&layout, 1);
        let report = check_gradients(f, &params, &GradCheckConfig::default()).unwrap();
        assert!(report.passed());
        assert!(report.max_error() < 1e-8, "{report:?}");
    }

    #[test]
    fn doubled_gradient_is_caught() {
        let mut layout = ParamLayout::new();
        let f = linear_program(&mut layout);
        let params = ParamStore::init(&layout, 2);
        let (_, mut grads) = analytic_gradients(&f, &params).unwrap();
        grads[0].iter_mut().for_each(|g| *g *= 2.0);
        let report = compare_gradients(&f, &params, &grads, &GradCheckConfig::default()).unwrap();
        assert!(!report.passed());
        assert!((report.params[0].max_rel_error - 0.5).abs() < 1e-6, "{report:?}");
    }
}
