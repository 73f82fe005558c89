//! Mask search: cosine-annealed pruning rate, per-layer magnitude pruning,
//! and gradient-based regrowth. Per-layer ones-counts are conserved
//! exactly.

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::model::{Gradient, Model};

/// Pruning-rate schedule decaying from `alpha0` at round 0 to 0 at
/// `total_rounds`.
#[derive(Debug, Clone, Copy)]
pub struct AnnealSchedule {
    pub alpha0: f64,
    pub total_rounds: usize,
}

impl AnnealSchedule {
    pub fn new(alpha0: f64, total_rounds: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha0) || total_rounds == 0 {
            return Err(Error::Domain(format!(
                "anneal schedule: alpha0={alpha0}, total_rounds={total_rounds}"
            )));
        }
        Ok(AnnealSchedule {
            alpha0,
            total_rounds,
        })
    }
}

/// `alpha_t = alpha0/2 * (1 + cos(t * pi / T))`.
pub fn anneal_rate(sched: &AnnealSchedule, round: usize) -> Result<f64> {
    if round > sched.total_rounds {
        return Err(Error::Domain(format!(
            "round {round} past total_rounds {}",
            sched.total_rounds
        )));
    }
    let frac = round as f64 * std::f64::consts::PI / sched.total_rounds as f64;
    Ok(sched.alpha0 / 2.0 * (1.0 + frac.cos()))
}

/// Per layer, deactivate exactly `floor(alpha * ones_l)` active coordinates
/// of smallest |w|, ties broken by lowest flat index. Returns the pruned
/// mask and the per-layer removal counts.
pub fn prune_by_magnitude(
    model: &Model,
    mask: &Mask,
    alpha: f64,
) -> Result<(Mask, Vec<usize>)> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Domain(format!("prune rate {alpha} out of [0, 1)")));
    }
    let mut pruned = mask.clone();
    let mut counts = Vec::with_capacity(mask.num_layers());
    for l in 0..mask.num_layers() {
        let active: Vec<usize> = mask.layer(l)
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == 1)
            .map(|(i, _)| i)
            .collect();
        let n = (alpha * active.len() as f64).floor() as usize;
        counts.push(n);
        if n == 0 {
            continue;
        }
        let weights = &model.layers()[l].weights;
        let mut order = active;
        order.sort_by(|&a, &b| {
            weights[a]
                .abs()
                .partial_cmp(&weights[b].abs())
                .unwrap()
                .then(a.cmp(&b))
        });
        for &i in order.iter().take(n) {
            pruned.layer_mut(l)[i] = 0;
        }
    }
    Ok((pruned, counts))
}

/// Per layer, activate exactly `counts_l` coordinates that are inactive in
/// `pruned`, chosen by largest |grad|, ties broken by lowest flat index.
/// The resulting per-layer ones-count equals `original`'s.
pub fn regrow_by_gradient(
    pruned: &Mask,
    original: &Mask,
    dense_grad: &Gradient,
    counts: &[usize],
) -> Result<Mask> {
    let mut out = pruned.clone();
    for l in 0..pruned.num_layers() {
        let n = counts[l];
        if n == 0 {
            continue;
        }
        let inactive: Vec<usize> = pruned.layer(l)
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == 0)
            .map(|(i, _)| i)
            .collect();
        if inactive.len() < n {
            return Err(Error::RegrowExhausted {
                layer: l,
                need: n,
                have: inactive.len(),
            });
        }
        let grads = &dense_grad.layers[l].weights;
        let mut order = inactive;
        order.sort_by(|&a, &b| {
            grads[b]
                .abs()
                .partial_cmp(&grads[a].abs())
                .unwrap()
                .then(a.cmp(&b))
        });
        for &i in order.iter().take(n) {
            out.layer_mut(l)[i] = 1;
        }
        debug_assert_eq!(out.ones_in_layer(l), original.ones_in_layer(l));
    }
    Ok(out)
}

/// Outcome of one mask-search step.
pub struct Evolution {
    pub mask: Mask,
    /// Per-layer hamming distance between old and new mask.
    pub churn: Vec<usize>,
}

/// One Algorithm-2 step over an already-trained model: prune by magnitude,
/// regrow by the dense gradient of a freshly sampled batch, zero the
/// weights of coordinates pruned this step (regrown coordinates stay 0
/// until the next gossip average warms them up).
pub fn evolve_mask(
    model: &mut Model,
    mask: &Mask,
    dense_grad: &Gradient,
    sched: &AnnealSchedule,
    round: usize,
) -> Result<Evolution> {
    let alpha = anneal_rate(sched, round)?;
    let (pruned, counts) = prune_by_magnitude(model, mask, alpha)?;
    let new_mask = regrow_by_gradient(&pruned, mask, dense_grad, &counts)?;
    // coordinates leaving or re-entering the mask this step carry weight 0;
    // surviving (never-pruned) coordinates keep their values
    for (l, layer) in model.layers_mut().iter_mut().enumerate() {
        for (i, w) in layer.weights.iter_mut().enumerate() {
            if pruned.layer(l)[i] == 0 {
                *w = 0.0;
            }
        }
    }
    let mut churn = Vec::with_capacity(mask.num_layers());
    for l in 0..mask.num_layers() {
        let diff = mask.layer(l)
            .iter()
            .zip(new_mask.layer(l))
            .filter(|(a, b)| a != b)
            .count();
        churn.push(diff);
    }
    Ok(Evolution {
        mask: new_mask,
        churn,
    })
}
