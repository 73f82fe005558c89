//! Binary masks over model weight matrices: ERK initialization, density
//! and hamming-distance analytics.
//!
//! Masks cover weight matrices only; biases are never masked.

use crate::error::{Error, Result};
use crate::model::LayerShape;
use rand::Rng;

/// Per-layer binary mask aligned 1:1 with a model's weight matrices.
/// Entries are stored as 0/1 bytes in the same row-major flat order as the
/// weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    layers: Vec<Vec<u8>>,
}

impl Mask {
    pub fn new(layers: Vec<Vec<u8>>) -> Self {
        debug_assert!(layers.iter().all(|l| l.iter().all(|&b| b <= 1)));
        Mask { layers }
    }

    /// All-ones mask for the given layer shapes (the dense case).
    pub fn ones(shapes: &[LayerShape]) -> Self {
        Mask {
            layers: shapes.iter().map(|s| vec![1u8; s.weight_count()]).collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> &[u8] {
        &self.layers[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut Vec<u8> {
        &mut self.layers[l]
    }

    pub fn layers(&self) -> &[Vec<u8>] {
        &self.layers
    }

    pub fn ones_in_layer(&self, l: usize) -> usize {
        self.layers[l].iter().filter(|&&b| b == 1).count()
    }

    pub fn ones_per_layer(&self) -> Vec<usize> {
        (0..self.layers.len()).map(|l| self.ones_in_layer(l)).collect()
    }

    pub fn total_ones(&self) -> usize {
        self.layers.iter().flatten().filter(|&&b| b == 1).count()
    }

    pub fn total_entries(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.len() == b.len())
    }
}

/// Per-client target density beta_k.
#[derive(Debug, Clone)]
pub struct CapacityProfile {
    densities: Vec<f64>,
}

impl CapacityProfile {
    pub fn uniform(density: f64, clients: usize) -> Result<Self> {
        Self::new(vec![density; clients])
    }

    pub fn new(densities: Vec<f64>) -> Result<Self> {
        for &d in &densities {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::InvalidDensity(d));
            }
        }
        Ok(CapacityProfile { densities })
    }

    pub fn density(&self, client: usize) -> f64 {
        self.densities[client]
    }
}

/// ERK layer score: (fan_in + fan_out) / (fan_in * fan_out).
fn erk_score(shape: &LayerShape) -> f64 {
    (shape.fan_in + shape.fan_out) as f64 / (shape.fan_in * shape.fan_out) as f64
}

/// Solve the per-layer ERK densities for a global target density.
///
/// Densities are proportional to the ERK score, scaled by a common factor
/// so the weighted average equals the target. Layers whose scaled density
/// would exceed 1 are clamped to 1 and the factor is re-solved over the
/// remainder.
pub fn erk_layer_densities(shapes: &[LayerShape], density: f64) -> Result<Vec<f64>> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidDensity(density));
    }
    let total: f64 = shapes.iter().map(|s| s.weight_count() as f64).sum();
    let mut clamped = vec![false; shapes.len()];
    loop {
        let clamped_params: f64 = shapes
            .iter()
            .zip(&clamped)
            .filter(|(_, &c)| c)
            .map(|(s, _)| s.weight_count() as f64)
            .sum();
        let free_weight: f64 = shapes
            .iter()
            .zip(&clamped)
            .filter(|(_, &c)| !c)
            .map(|(s, _)| erk_score(s) * s.weight_count() as f64)
            .sum();
        let budget = density * total - clamped_params;
        if free_weight == 0.0 {
            break;
        }
        let scale = budget / free_weight;
        let mut newly_clamped = false;
        for (i, s) in shapes.iter().enumerate() {
            if !clamped[i] && scale * erk_score(s) > 1.0 {
                clamped[i] = true;
                newly_clamped = true;
            }
        }
        if !newly_clamped {
            return Ok(shapes
                .iter()
                .zip(&clamped)
                .map(|(s, &c)| if c { 1.0 } else { scale * erk_score(s) })
                .collect());
        }
    }
    Ok(vec![1.0; shapes.len()])
}

/// ERK-initialized random mask: per-layer density from [`erk_layer_densities`],
/// exactly `round(d_l * P_l)` ones per layer placed uniformly without
/// replacement.
pub fn erk_init<R: Rng>(shapes: &[LayerShape], density: f64, rng: &mut R) -> Result<Mask> {
    let densities = erk_layer_densities(shapes, density)?;
    let mut layers = Vec::with_capacity(shapes.len());
    for (s, d) in shapes.iter().zip(&densities) {
        let p = s.weight_count();
        let ones = (d * p as f64).round() as usize;
        let ones = ones.min(p);
        let mut layer = vec![0u8; p];
        for idx in rand::seq::index::sample(rng, p, ones) {
            layer[idx] = 1;
        }
        layers.push(layer);
    }
    Ok(Mask::new(layers))
}

/// Fraction of ones over all weight entries.
pub fn density(mask: &Mask) -> f64 {
    let total = mask.total_entries();
    if total == 0 {
        return 0.0;
    }
    mask.total_ones() as f64 / total as f64
}

/// Coordinate-wise hamming distance: raw count of differing entries and
/// the count normalized by the total number of weight entries.
pub fn hamming_distance(a: &Mask, b: &Mask) -> Result<(usize, f64)> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            layer: 0,
            expected: format!("{:?}", a.layers.iter().map(|l| l.len()).collect::<Vec<_>>()),
            got: format!("{:?}", b.layers.iter().map(|l| l.len()).collect::<Vec<_>>()),
        });
    }
    let mut raw = 0usize;
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        raw += la.iter().zip(lb).filter(|(x, y)| x != y).count();
    }
    let total = a.total_entries();
    Ok((raw, raw as f64 / total as f64))
}

/// Density of the elementwise OR of all masks: the aggregate proportion
/// beta of remaining parameters.
pub fn mask_union_density(masks: &[Mask]) -> Result<f64> {
    let first = masks.first().ok_or(Error::EmptyMaskList)?;
    for m in &masks[1..] {
        if !first.same_shape(m) {
            return Err(Error::ShapeMismatch {
                layer: 0,
                expected: "congruent masks".into(),
                got: "mismatched layer shapes".into(),
            });
        }
    }
    let mut union = first.clone();
    for m in &masks[1..] {
        for (lu, lm) in union.layers.iter_mut().zip(&m.layers) {
            for (u, &b) in lu.iter_mut().zip(lm) {
                *u |= b;
            }
        }
    }
    Ok(density(&union))
}
