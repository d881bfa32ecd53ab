//! Central-difference gradient checking against the tape.
//!
//! The error of a parameter is `‖a − n‖ / max(‖n‖, 1e-8)` over all of its
//! entries (Euclidean norms), and the report's headline is the maximum over
//! parameters. A per-entry ratio is also tracked, but only as a diagnostic:
//! for entries whose true gradient is near zero it measures the round-off
//! of the difference quotient rather than the gradient.

use crate::error::{Result, VlqaError};
use crate::parallel::Execution;
use crate::tape::{ParamId, ParamStore, Tape, Var};

/// Denominator floor for the relative error.
pub const RELATIVE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamError {
    pub name: String,
    pub relative_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter attaining `max_relative_error`.
    pub worst: Option<String>,
    pub per_parameter: Vec<ParamError>,
    /// Largest per-entry ratio `|a − n| / max(|n|, 1e-8)`, with its location.
    pub max_entry_error: f64,
    pub worst_entry: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Compare reverse-mode gradients of the scalar built by `f` with central
/// differences of step `step`, over every entry of every parameter.
pub fn grad_check<F>(store: &ParamStore, f: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var> + Sync + Send,
{
    let ids: Vec<ParamId> = store.ids().collect();
    grad_check_subset(store, &ids, f, step, Execution::Auto)
}

pub fn grad_check_subset<F>(
    store: &ParamStore,
    ids: &[ParamId],
    f: F,
    step: f64,
    exec: Execution,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var> + Sync + Send,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let base = tape.value(out).item();
    if !base.is_finite() {
        return Err(VlqaError::Numeric(format!("f = {base} at the base point")));
    }
    let analytic = tape.backward(out, store)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let v = f(&mut t, s)?;
        let y = t.value(v).item();
        if y.is_finite() {
            Ok(y)
        } else {
            Err(VlqaError::Numeric(format!("f = {y} at a perturbed point")))
        }
    };

    let entries: Vec<(ParamId, usize)> = ids
        .iter()
        .flat_map(|&id| (0..store.get(id).len()).map(move |k| (id, k)))
        .collect();
    let numeric = exec.map(&entries, |_, &(id, k)| -> Result<f64> {
        let mut probe = store.clone();
        let orig = store.get(id).data()[k];
        probe.get_mut(id).data_mut()[k] = orig + step;
        let plus = eval(&probe)?;
        probe.get_mut(id).data_mut()[k] = orig - step;
        let minus = eval(&probe)?;
        Ok((plus - minus) / (2.0 * step))
    });
    let numeric = numeric.into_iter().collect::<Result<Vec<f64>>>()?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        per_parameter: Vec::with_capacity(ids.len()),
        max_entry_error: 0.0,
        worst_entry: None,
        entries_checked: entries.len(),
    };
    let mut at = 0;
    for &id in ids {
        let len = store.get(id).len();
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for k in 0..len {
            let n = numeric[at + k];
            let a = analytic.get(id).data()[k];
            diff2 += (a - n).powi(2);
            a2 += a * a;
            n2 += n * n;
            let entry = (a - n).abs() / n.abs().max(RELATIVE_FLOOR);
            if report.worst_entry.is_none() || entry > report.max_entry_error {
                report.max_entry_error = entry;
                report.worst_entry = Some((store.name(id).to_string(), k));
            }
        }
        at += len;
        let err = diff2.sqrt() / n2.sqrt().max(RELATIVE_FLOOR);
        if report.worst.is_none() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some(store.name(id).to_string());
        }
        report.per_parameter.push(ParamError {
            name: store.name(id).to_string(),
            relative_error: err,
            analytic_norm: a2.sqrt(),
            numeric_norm: n2.sqrt(),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn square_at_three() {
        let mut store = ParamStore::new();
        let x = store.register("x", Tensor::scalar(3.0)).unwrap();
        let r = grad_check(
            &store,
            |t, s| {
                let v = t.param(s, x);
                t.mul(v, v)
            },
            1e-5,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-7, "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut store = ParamStore::new();
        store.register("x", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let r = grad_check(&store, |t, _| t.constant(Tensor::scalar(4.2)), 1e-5).unwrap();
        assert_eq!(r.max_relative_error, 0.0);
    }

    #[test]
    fn non_finite_function_is_an_error() {
        let mut store = ParamStore::new();
        let x = store.register("x", Tensor::scalar(1.0)).unwrap();
        let r = grad_check(
            &store,
            |t, s| {
                let v = t.param(s, x);
                t.scale(v, f64::MAX * 2.0)
            },
            1e-5,
        );
        assert!(matches!(r, Err(VlqaError::Numeric(_))));
    }
}
