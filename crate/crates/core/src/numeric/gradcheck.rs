//! Central finite-difference verification of tape gradients (five-point stencil).

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Step of the five-point central difference.
    pub step: f64,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
    /// Check at most this many evenly spaced entries per parameter.
    pub max_entries: Option<usize>,
    /// Negative-control hook: perturbs the analytic gradient before comparing.
    pub corrupt: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-4, floor: 1e-6, max_entries: None, corrupt: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstEntry {
    pub param: usize,
    pub entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<WorstEntry>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::dim(format!("grad_check: f must be scalar, got {:?}", tape.shape(out))));
    }
    Ok((tape, vars, out))
}

/// Compares the tape gradient of scalar `f` against central differences and
/// returns the worst relative error over the checked entries.
pub fn grad_check<F>(f: F, params: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if params.iter().any(|p| !p.all_finite()) {
        return Err(Error::numeric("grad_check: non-finite parameter"));
    }
    let (tape, vars, out) = evaluate(&f, params)?;
    let grads = tape.backward(out)?;
    let mut analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    if analytic.iter().any(|g| !g.all_finite()) {
        return Err(Error::numeric("grad_check: non-finite analytic gradient"));
    }
    if opts.corrupt {
        if let Some(g) = analytic.iter_mut().find(|g| !g.is_empty()) {
            g.data_mut()[0] += 1e-2 * (1.0 + g.data()[0].abs());
        }
    }

    let scalar = |ps: &[Tensor]| -> Result<f64> {
        let (t, _, o) = evaluate(&f, ps)?;
        Ok(t.value(o).item())
    };
    let mut work = params.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, worst: None };
    for (pi, p) in params.iter().enumerate() {
        let n = p.len();
        let stride = opts.max_entries.map_or(1, |m| n.div_ceil(m.max(1)));
        for e in (0..n).step_by(stride) {
            let orig = p.data()[e];
            let mut at = |k: f64| -> Result<f64> {
                work[pi].data_mut()[e] = orig + k * opts.step;
                scalar(&work)
            };
            let (p1, m1, p2, m2) = (at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?);
            work[pi].data_mut()[e] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * opts.step);
            let a = analytic[pi].data()[e];
            let err = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst = Some(WorstEntry { param: pi, entry: e, analytic: a, numeric });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Tensor::from_fn(&[7], |i| i as f64 * 0.3 - 1.0);
        let rep = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            },
            &[x],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-8, "{rep:?}");
        assert_eq!(rep.checked, 7);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let x = Tensor::from_fn(&[3], |i| i as f64 + 0.5);
        let opts = GradCheckOptions { corrupt: true, ..Default::default() };
        let rep = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            },
            &[x],
            &opts,
        )
        .unwrap();
        assert!(rep.max_rel_error > 1e-3);
    }

    #[test]
    fn non_finite_parameter_rejected() {
        let x = Tensor::new(&[1], vec![f64::NAN]).unwrap();
        let r = grad_check(|t, v| Ok(t.sum(v[0])), &[x], &GradCheckOptions::default());
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
