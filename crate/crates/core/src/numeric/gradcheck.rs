//! Central finite-difference check of tape gradients.

use crate::error::{Error, Result};

use super::tape::{Tape, Var};
use super::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamError {
    pub param: usize,
    /// Flat index of the worst entry.
    pub entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_param
            .iter()
            .map(|p| p.rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamError> {
        self.per_param
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Evaluate `f` on a fresh tape with `params` as leaves.
pub fn evaluate<F>(params: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {value}")));
    }
    Ok(value)
}

/// Tape gradients of `f` at `params`.
pub fn analytic_gradients<F>(params: &[Tensor], f: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).item().is_finite() {
        return Err(Error::NonFinite("objective is not finite".into()));
    }
    let grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
        .collect())
}

/// Compare supplied gradients against central differences of `f`.
pub fn compare_gradients<F>(
    params: &[Tensor],
    analytic: &[Tensor],
    f: &F,
    step: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if analytic.len() != params.len() {
        return Err(Error::argument("one analytic gradient per parameter required"));
    }
    let mut work = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let mut worst = ParamError {
            param: pi,
            entry: 0,
            analytic: 0.0,
            numeric: 0.0,
            rel_error: 0.0,
        };
        for i in 0..params[pi].numel() {
            let orig = params[pi].data()[i];
            work[pi].data_mut()[i] = orig + step;
            let plus = evaluate(&work, f)?;
            work[pi].data_mut()[i] = orig - step;
            let minus = evaluate(&work, f)?;
            work[pi].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[i];
            let err = relative_error(a, numeric);
            if err > worst.rel_error || i == 0 {
                worst = ParamError {
                    param: pi,
                    entry: i,
                    analytic: a,
                    numeric,
                    rel_error: err,
                };
            }
        }
        per_param.push(worst);
    }
    Ok(GradCheckReport { per_param })
}

/// Tape gradients versus central differences at `step`.
pub fn grad_check<F>(params: &[Tensor], f: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(params, &f)?;
    compare_gradients(params, &analytic, &f, step)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_of_squares(tape: &mut Tape, v: &[Var]) -> Result<Var> {
        let sq = tape.mul(v[0], v[0])?;
        let n = tape.value(sq).numel();
        tape.weighted_sum(sq, vec![1.0; n])
    }

    #[test]
    fn quadratic_is_exact() {
        let p = [Tensor::from_vec(vec![1.0, -2.0, 0.25])];
        assert_eq!(evaluate(&p, &sum_of_squares).unwrap(), 5.0625);
        let report = grad_check(&p, sum_of_squares, DEFAULT_STEP).unwrap();
        assert!(report.passes(1e-7), "{report:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let p = [Tensor::from_vec(vec![1.0, -2.0, 0.25])];
        let mut analytic = analytic_gradients(&p, &sum_of_squares).unwrap();
        analytic[0].data_mut()[1] += 0.1;
        let report = compare_gradients(&p, &analytic, &sum_of_squares, DEFAULT_STEP).unwrap();
        assert!(!report.passes(1e-4));
        assert_eq!(report.worst().unwrap().entry, 1);
    }

    #[test]
    fn non_finite_objective_is_diagnosed() {
        let f = |tape: &mut Tape, v: &[Var]| Ok(tape.scale(v[0], f64::INFINITY));
        let err = grad_check(&[Tensor::scalar(1.0)], f, DEFAULT_STEP).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 2.1).abs() < 1e-15);
    }
}
