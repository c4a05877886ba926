//! Central finite-difference oracle for tape gradients.
//!
//! The numeric side only re-runs forward passes; it never touches
//! [`Tape::backward`].

use super::{DiffError, ParamId, ParamStore, Tape, Var};

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const SCALE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `|analytic − numeric| / max(|analytic|, |numeric|, SCALE_FLOOR)`, worst case.
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

/// Compares analytic and central-difference gradients of the scalar built
/// by `f` for every scalar in `store` (or only `subset`, if given).
///
/// `f` must be deterministic: it is re-evaluated for every perturbation.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    step: f64,
    subset: Option<&[ParamId]>,
    f: F,
) -> Result<GradCheckReport, DiffError>
where
    F: for<'p> Fn(&mut Tape<'p>, &'p ParamStore) -> Result<Var, DiffError>,
{
    let analytic: Vec<(ParamId, Vec<f64>)> = {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        let grads = tape.backward(loss)?;
        let ids: Vec<ParamId> = match subset {
            Some(s) => s.to_vec(),
            None => store.ids().collect(),
        };
        ids.into_iter()
            .map(|id| {
                let g = grads
                    .get(store, id)
                    .map(|a| a.data().to_vec())
                    .unwrap_or_else(|| vec![0.0; store.value(id).len()]);
                (id, g)
            })
            .collect()
    };

    let eval = |store: &ParamStore| -> Result<f64, DiffError> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        Ok(tape.value(loss).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (id, grad) in analytic {
        for (k, &a) in grad.iter().enumerate() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + step;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig - step;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((store.name(id).to_string(), k, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
