//! Neighbourhood contrastive loss and cross-entropy with hand-written gradients.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::head::{HeadGrads, ProjectionHead};
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Row-wise `−log softmax(sims / τ)[positive]`, averaged over rows.
///
/// `sims` is `anchors × views`; `positives[i]` is the column of anchor `i`'s neighbour.
/// Returns the loss and `∂L/∂sims`.
pub fn rncl_from_similarities<F: Scalar>(
    sims: ArrayView2<F>,
    positives: &[usize],
    tau: F,
) -> Result<(F, Array2<F>)> {
    let (b, e) = sims.dim();
    if b < 1 || positives.len() != b {
        return invalid("one positive per anchor row is required");
    }
    if !(tau > F::zero()) {
        return invalid("temperature must be positive");
    }
    if positives.iter().any(|&p| p >= e) {
        return invalid("positive index outside the view set");
    }
    let scale = F::one() / (tau * F::of(b as f64));
    let mut grad = Array2::zeros((b, e));
    let mut total = F::zero();
    for (i, row) in sims.outer_iter().enumerate() {
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v / tau));
        let exps: Vec<F> = row.iter().map(|&v| (v / tau - max).exp()).collect();
        let z: F = exps.iter().copied().sum();
        let lse = max + z.ln();
        total += lse - row[positives[i]] / tau;
        for (j, &ex) in exps.iter().enumerate() {
            grad[[i, j]] = ex / z * scale;
        }
        grad[[i, positives[i]]] -= scale;
    }
    Ok((total / F::of(b as f64), grad))
}

/// Contrastive loss over augmented views. The first `n_anchors` rows of `views` are the
/// batch; any further rows are out-of-batch positives. Every row enters the denominator,
/// the anchor's own view included. Returns the loss and `∂L/∂views`.
pub fn rncl_loss<F: Scalar>(
    views: ArrayView2<F>,
    n_anchors: usize,
    positives: &[usize],
    tau: F,
) -> Result<(F, Array2<F>)> {
    if n_anchors < 2 {
        return invalid("contrastive batch must hold at least two samples");
    }
    if n_anchors > views.nrows() {
        return invalid("more anchors than views");
    }
    if positives.iter().zip(0..).any(|(&p, i)| p == i) {
        return invalid("a sample cannot be its own positive");
    }
    let anchors = views.slice(s![..n_anchors, ..]);
    let sims = anchors.dot(&views.t());
    let (loss, ds) = rncl_from_similarities(sims.view(), positives, tau)?;
    let mut dv = ds.t().dot(&anchors);
    let da = ds.dot(&views);
    dv.slice_mut(s![..n_anchors, ..]).scaled_add(F::one(), &da);
    Ok((loss, dv))
}

/// Mean softmax cross-entropy and `∂L/∂logits`.
pub fn ce_from_logits<F: Scalar>(logits: ArrayView2<F>, classes: &[usize]) -> Result<(F, Array2<F>)> {
    let (n, c) = logits.dim();
    if n == 0 || classes.len() != n {
        return invalid("one class per logit row is required");
    }
    if let Some(&bad) = classes.iter().find(|&&k| k >= c) {
        return Err(Error::InvalidArgument(format!("class index {bad} outside {c} known classes")));
    }
    let inv_n = F::one() / F::of(n as f64);
    let mut grad = Array2::zeros((n, c));
    let mut total = F::zero();
    for (i, row) in logits.outer_iter().enumerate() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let exps: Vec<F> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: F = exps.iter().copied().sum();
        total += max + z.ln() - row[classes[i]];
        for (j, &ex) in exps.iter().enumerate() {
            grad[[i, j]] = ex / z * inv_n;
        }
        grad[[i, classes[i]]] -= inv_n;
    }
    Ok((total * inv_n, grad))
}

/// Augmented inputs for one contrastive step.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch<F> {
    /// Rows: batch members first, then out-of-batch positives.
    pub inputs: Array2<F>,
    pub n_anchors: usize,
    pub positives: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LabeledBatch<F> {
    pub inputs: Array2<F>,
    /// Index into the sorted known-category list.
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<F> {
    pub rncl: F,
    pub ce: F,
}

/// Total objective `rncl + ce_weight · ce` and its gradient with respect to every head
/// parameter.
pub fn objective<F: Scalar>(
    head: &ProjectionHead<F>,
    contrastive: Option<&ContrastiveBatch<F>>,
    labeled: Option<&LabeledBatch<F>>,
    tau: F,
    ce_weight: F,
) -> Result<(LossParts<F>, HeadGrads<F>)> {
    let mut grads = HeadGrads::zeros_like(head);
    let mut parts = LossParts {
        rncl: F::zero(),
        ce: F::zero(),
    };
    if let Some(cb) = contrastive {
        let cache = head.forward_batch(cb.inputs.view());
        let (loss, dv) = rncl_loss(cache.features.view(), cb.n_anchors, &cb.positives, tau)?;
        head.backward(&cache, dv.view(), &mut grads);
        parts.rncl = loss;
    }
    if let Some(lb) = labeled {
        let cache = head.forward_batch(lb.inputs.view());
        let logits = head.logits(cache.features.view());
        let (loss, dl) = ce_from_logits(logits.view(), &lb.classes)?;
        let dl = dl * ce_weight;
        grads.wc += &dl.t().dot(&cache.features);
        grads.bc += &dl.sum_axis(Axis(0));
        let du = dl.dot(&head.wc);
        head.backward(&cache, du.view(), &mut grads);
        parts.ce = loss;
    }
    let total = parts.rncl + ce_weight * parts.ce;
    if !total.is_finite() || !grads.all_finite() {
        return Err(Error::Numeric(format!(
            "non-finite objective (rncl = {}, ce = {})",
            parts.rncl, parts.ce
        )));
    }
    Ok((parts, grads))
}
