//! Attention selection, view composition and the classifier head.

use crate::numeric::{shape_err, Graph, NodeId, NumericError, ParamId, Tensor};

use super::Variant;

/// Attention parameters of one view: `w_s` has length `a`, `w` is `a x d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionHead {
    pub w_s: ParamId,
    pub w: ParamId,
}

/// Horizontal links between views. `matrices[j]` transforms interior view
/// `j + 2` (1-based); NoLinks has none.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewStack {
    pub variant: Variant,
    pub matrices: Vec<ParamId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Maps the concatenated views to class logits. With `hidden` present this
/// is `output * tanh(hidden * z + b_h) + b_o`, otherwise a single affine map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classifier {
    pub hidden: Option<Dense>,
    pub output: Dense,
    pub dropout: f64,
}

/// `m_h = <w_s, tanh(W b_h)>` for every row `b_h` of the feature matrix.
pub fn attention_scores(g: &mut Graph<'_>, head: &SelectionHead, b: NodeId) -> Result<NodeId, NumericError> {
    let w = g.param(head.w);
    let wt = g.transpose(w)?;
    let hidden = g.matmul(b, wt)?;
    let hidden = g.tanh(hidden)?;
    let w_s = g.param(head.w_s);
    g.matmul(hidden, w_s)
}

pub fn attention_weights(g: &mut Graph<'_>, scores: NodeId) -> Result<NodeId, NumericError> {
    g.softmax(scores)
}

/// Weighted sum of the feature rows.
pub fn select(g: &mut Graph<'_>, weights: NodeId, b: NodeId) -> Result<NodeId, NumericError> {
    let (wl, rows) = (g.shape(weights).to_vec(), g.shape(b)[0]);
    if wl != [rows] {
        return Err(shape_err("select", format!("weights {wl:?} over {rows} rows")));
    }
    g.matmul(weights, b)
}

/// Turns selections into views. The first and last view are their
/// selections unchanged; interior views depend on the variant.
pub fn compose_views(g: &mut Graph<'_>, selections: &[NodeId], stack: &ViewStack) -> Result<Vec<NodeId>, NumericError> {
    let v = selections.len();
    if v == 0 {
        return Err(NumericError::Empty("compose_views"));
    }
    let interior = v.saturating_sub(2);
    let expected = match stack.variant {
        Variant::NoLinks => 0,
        Variant::Full | Variant::Chain => interior,
    };
    if stack.matrices.len() != expected {
        return Err(shape_err(
            "compose_views",
            format!("{} view matrices for {v} views ({:?})", stack.matrices.len(), stack.variant),
        ));
    }
    let mut views: Vec<NodeId> = Vec::with_capacity(v);
    for (i, &sel) in selections.iter().enumerate() {
        if i == 0 || i == v - 1 || stack.variant == Variant::NoLinks {
            views.push(sel);
            continue;
        }
        let input = match stack.variant {
            Variant::Full => {
                let mut parts = views.clone();
                parts.push(sel);
                g.concat_rows(&parts)?
            }
            Variant::Chain => g.concat_rows(&[views[i - 1], sel])?,
            Variant::NoLinks => unreachable!(),
        };
        let w = g.param(stack.matrices[i - 1]);
        let z = g.matmul(w, input)?;
        views.push(g.tanh(z)?);
    }
    Ok(views)
}

/// Logits from the views. `dropout_mask`, when given, multiplies the
/// concatenated view vector (already scaled for inverted dropout).
pub fn classify(
    g: &mut Graph<'_>,
    views: &[NodeId],
    clf: &Classifier,
    dropout_mask: Option<&Tensor>,
) -> Result<NodeId, NumericError> {
    let mut z = g.concat_rows(views)?;
    if let Some(mask) = dropout_mask {
        z = g.mul_const(z, mask.clone())?;
    }
    if let Some(hidden) = &clf.hidden {
        let w = g.param(hidden.weight);
        let b = g.param(hidden.bias);
        let h = g.matmul(w, z)?;
        let h = g.add_bias(h, b)?;
        z = g.tanh(h)?;
    }
    let w = g.param(clf.output.weight);
    let b = g.param(clf.output.bias);
    let logits = g.matmul(w, z)?;
    g.add_bias(logits, b)
}

/// Scalar parameter count of the view stack.
pub fn view_stack_param_count(views: usize, view_dim: usize, variant: Variant) -> usize {
    let interior = views.saturating_sub(2);
    match variant {
        Variant::NoLinks => 0,
        Variant::Chain => interior * view_dim * 2 * view_dim,
        Variant::Full => (2..views).map(|i| view_dim * i * view_dim).sum(),
    }
}
