use super::{Gradients, ParamSet};
use crate::error::{Error, Result};

/// Summary of one SGD application.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdStep {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Factor the gradients were multiplied by (1 when not clipped).
    pub clip_scale: f64,
}

/// Plain SGD with weight decay and global-norm clipping.
///
/// Gradients are rescaled by `clip / g` when their global norm `g` exceeds
/// `clip`; then every trainable entry moves by `-lr * (grad + l2 * p)`.
/// Frozen entries are not touched.
pub fn sgd_update(
    params: &mut ParamSet,
    grads: &Gradients,
    lr: f64,
    l2: f64,
    clip: f64,
) -> Result<SgdStep> {
    if !(lr >= 0.0) || !(clip > 0.0) || !(l2 >= 0.0) {
        return Err(Error::Config(format!(
            "sgd needs lr >= 0, l2 >= 0, clip > 0 (got lr={lr}, l2={l2}, clip={clip})"
        )));
    }
    let ids = params.trainable_ids();
    let mut sq = 0.0;
    for &id in &ids {
        let g = grads.get(id).ok_or_else(|| {
            Error::Numeric(format!(
                "missing gradient for trainable parameter `{}`",
                params.get(id).name
            ))
        })?;
        if g.shape() != params.value(id).shape() {
            return Err(Error::shape(
                "sgd_update",
                format!(
                    "gradient {:?} for `{}` {:?}",
                    g.shape(),
                    params.get(id).name,
                    params.value(id).shape()
                ),
            ));
        }
        sq += g.sq_norm();
    }
    let grad_norm = sq.sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::Numeric(format!("gradient norm is {grad_norm}")));
    }
    let clip_scale = if grad_norm > clip { clip / grad_norm } else { 1.0 };
    for id in ids {
        let g = grads.get(id).expect("checked above");
        let p = params.get_mut(id);
        for (w, &gv) in p.value.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * (gv * clip_scale + l2 * *w);
        }
    }
    Ok(SgdStep {
        grad_norm,
        clip_scale,
    })
}
