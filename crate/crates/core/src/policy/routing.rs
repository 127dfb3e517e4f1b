use crate::error::{Error, Result};

/// Floor on the previous expert's confidence in the routing ratio.
const RATIO_FLOOR: f64 = 1e-6;

/// Share of samples routed to the new expert, `min(1, r̃ₖ / r̃ₖ₋₁)`. With
/// `literal` the printed `max(1, ·)` form is used instead, which is never
/// below one and therefore always routes everything.
pub fn routing_fraction(current: f64, previous: f64, literal: bool) -> f64 {
    let ratio = current / previous.max(RATIO_FLOOR);
    if literal {
        ratio.max(1.0)
    } else {
        ratio.min(1.0)
    }
}

/// `ceil(β n)` clamped to `[1, n]`. A relative slack of `1e-12` keeps
/// products like `0.3 × 10` from rounding up to an extra sample.
pub fn routed_count(beta: f64, n: usize) -> usize {
    let x = beta.min(1.0) * n as f64;
    let c = (x - 1e-12 * x.max(1.0)).ceil();
    (c.max(1.0) as usize).min(n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDecision {
    pub beta: f64,
    /// Ascending candidate indices.
    pub selected: Vec<usize>,
    /// Confidences used for the ranking.
    pub confidences: Vec<f64>,
}

/// Keeps the `ceil(β n)` candidates with the lowest confidence, ties broken
/// by index.
pub fn select_routed(confidences: &[f64], beta: f64) -> Result<RoutingDecision> {
    if confidences.is_empty() {
        return Err(Error::Input("cannot route an empty batch".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::Input(format!("routing fraction {beta} must be positive")));
    }
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]).then(a.cmp(&b)));
    let mut selected = order[..routed_count(beta, confidences.len())].to_vec();
    selected.sort_unstable();
    Ok(RoutingDecision {
        beta,
        selected,
        confidences: confidences.to_vec(),
    })
}
