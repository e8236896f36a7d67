use crate::numeric::{shape_err, NumericError, ParamGradients, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdadeltaParams {
    /// Constant multiplier on every update.
    pub lr_scale: f64,
    pub rho: f64,
    pub epsilon: f64,
}

/// Running averages `E[g^2]` and `E[dx^2]`, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    pub sq_grad: Vec<Tensor>,
    pub sq_update: Vec<Tensor>,
}

impl AdadeltaState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdadeltaState {
            sq_grad: zeros.clone(),
            sq_update: zeros,
        }
    }
}

/// One Adadelta update per coordinate:
///
/// ```text
/// Eg <- rho * Eg + (1 - rho) * g^2
/// dx  = -sqrt(Ex + eps) / sqrt(Eg + eps) * g
/// Ex <- rho * Ex + (1 - rho) * dx^2
/// x  <- x + lr_scale * dx
/// ```
///
/// Coordinates whose gradient is exactly zero are skipped, accumulators
/// included, so rows untouched by a batch (unused embeddings) keep their state.
pub fn adadelta_step(
    store: &mut ParamStore,
    grads: &ParamGradients,
    state: &mut AdadeltaState,
    hp: AdadeltaParams,
) -> Result<(), NumericError> {
    let n = store.len();
    if grads.0.len() != n || state.sq_grad.len() != n || state.sq_update.len() != n {
        return Err(shape_err("adadelta_step", "parameter, gradient and state counts differ"));
    }
    for (i, param) in store.tensors_mut().iter_mut().enumerate() {
        let grad = &grads.0[i];
        let (eg, ex) = (&mut state.sq_grad[i], &mut state.sq_update[i]);
        if grad.shape() != param.shape() || eg.shape() != param.shape() || ex.shape() != param.shape() {
            return Err(shape_err(
                "adadelta_step",
                format!("parameter {i}: {:?} vs gradient {:?}", param.shape(), grad.shape()),
            ));
        }
        let coords = param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(eg.data_mut().iter_mut().zip(ex.data_mut().iter_mut()));
        for ((x, &g), (eg, ex)) in coords {
            if g == 0.0 {
                continue;
            }
            *eg = hp.rho * *eg + (1.0 - hp.rho) * g * g;
            let dx = -((*ex + hp.epsilon).sqrt() / (*eg + hp.epsilon).sqrt()) * g;
            *ex = hp.rho * *ex + (1.0 - hp.rho) * dx * dx;
            *x += hp.lr_scale * dx;
        }
    }
    Ok(())
}
