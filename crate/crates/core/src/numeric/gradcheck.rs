use super::{Graph, NodeId, NumericError, ParamId, ParamStore};

/// Magnitude below which gradients are compared absolutely rather than
/// relatively. Central differences at eps = 1e-5 carry roughly 1e-10 of
/// round-off noise, well below this floor times the 1e-4 tolerance.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Parameter name and flat coordinate of the worst disagreement.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
    /// Coordinates whose analytic gradient is nonzero.
    pub nonzero: usize,
}

/// Compares the tape gradient of `loss` against central differences for
/// every coordinate of every parameter. `loss` must be deterministic.
pub fn finite_diff_check<F>(params: &ParamStore, eps: f64, loss: F) -> Result<FdReport, NumericError>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId, NumericError>,
{
    let analytic = {
        let mut g = Graph::with_params(params);
        let l = loss(&mut g)?;
        let grads = g.backward(l)?;
        g.param_gradients(&grads)
    };

    let eval = |store: &ParamStore| -> Result<f64, NumericError> {
        let mut g = Graph::with_params(store);
        let l = loss(&mut g)?;
        Ok(g.value(l).item())
    };

    let mut perturbed = params.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
        nonzero: 0,
    };
    for id in params.ids() {
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            set(&mut perturbed, id, k, orig + eps);
            let plus = eval(&perturbed)?;
            set(&mut perturbed, id, k, orig - eps);
            let minus = eval(&perturbed)?;
            set(&mut perturbed, id, k, orig);

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).data()[k];
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if a != 0.0 {
                report.nonzero += 1;
            }
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}

fn set(store: &mut ParamStore, id: ParamId, k: usize, v: f64) {
    store.get_mut(id).data_mut()[k] = v;
}
