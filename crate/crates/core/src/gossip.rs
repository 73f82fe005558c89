//! Intersection-weighted gossip averaging and the sparse wire payload.
//!
//! The averaging rule is
//! `w' = ((w_own + sum_j w_j) / (m_own + sum_j m_j)) (.) m_own`
//! elementwise over weights, with 0/0 := 0 (only reachable where the own
//! mask is 0, where the outer product zeroes the result anyway). Biases
//! are averaged arithmetically over own plus all received models.

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::model::{Layer, LayerShape, Model};

/// Weighted average on mask intersections. Every received model must
/// already satisfy `w (.) m == w`.
pub fn aggregate(own: (&Model, &Mask), received: &[(Model, Mask)]) -> Result<Model> {
    let (own_model, own_mask) = own;
    for (m, mask) in received {
        if m.shapes() != own_model.shapes() {
            return Err(Error::ShapeMismatch {
                layer: 0,
                expected: "congruent received model".into(),
                got: "mismatched shapes".into(),
            });
        }
        if let Some((layer, index)) = m.mask_violation(mask) {
            return Err(Error::ProtocolViolation { layer, index });
        }
    }
    let mut out = own_model.clone();
    for (l, shape) in own_model.shapes().iter().enumerate() {
        let layer = &mut out.layers_mut()[l];
        for i in 0..shape.weight_count() {
            if own_mask.layer(l)[i] == 0 {
                layer.weights[i] = 0.0;
                continue;
            }
            let mut num = own_model.layers()[l].weights[i] as f64;
            let mut den = 1.0f64;
            for (m, mask) in received {
                num += m.layers()[l].weights[i] as f64;
                den += mask.layer(l)[i] as f64;
            }
            layer.weights[i] = (num / den) as f32;
        }
        if shape.has_bias {
            let n = (received.len() + 1) as f64;
            let bias = layer.bias.as_mut().expect("shape says bias");
            for (o, b) in bias.iter_mut().enumerate() {
                let mut sum = own_model.layers()[l].bias.as_ref().unwrap()[o] as f64;
                for (m, _) in received {
                    sum += m.layers()[l].bias.as_ref().unwrap()[o] as f64;
                }
                *b = (sum / n) as f32;
            }
        }
    }
    Ok(out)
}

/// Wire form of a `(model, mask)` pair. Per layer: a bitset of
/// `ceil(P_l / 8)` bytes (LSB-first within each byte, flat weight-index
/// order), then 4-byte little-endian f32 surviving weights in flat-index
/// order, then 4-byte f32 bias values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePayload {
    pub shapes: Vec<LayerShape>,
    pub layers: Vec<PayloadLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayloadLayer {
    pub bitset: Vec<u8>,
    pub values: Vec<f32>,
    pub bias: Vec<f32>,
}

impl SparsePayload {
    /// Encoded size in bytes including the mask bitsets.
    pub fn byte_size_with_mask(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.bitset.len() + 4 * (l.values.len() + l.bias.len()))
            .sum()
    }

    /// Encoded size counting only weight and bias values (what a dense
    /// baseline with nothing to mask would send).
    pub fn byte_size_values_only(&self) -> usize {
        self.layers
            .iter()
            .map(|l| 4 * (l.values.len() + l.bias.len()))
            .sum()
    }
}

/// Serialize a model/mask pair. Requires `w (.) m == w`.
pub fn to_payload(model: &Model, mask: &Mask) -> Result<SparsePayload> {
    if let Some((layer, index)) = model.mask_violation(mask) {
        return Err(Error::ProtocolViolation { layer, index });
    }
    let mut layers = Vec::with_capacity(model.num_layers());
    for (l, shape) in model.shapes().iter().enumerate() {
        let p = shape.weight_count();
        let mut bitset = vec![0u8; p.div_ceil(8)];
        let mut values = Vec::new();
        for (i, &m) in mask.layer(l).iter().enumerate() {
            if m == 1 {
                bitset[i / 8] |= 1 << (i % 8);
                values.push(model.layers()[l].weights[i]);
            }
        }
        let bias = model.layers()[l].bias.clone().unwrap_or_default();
        layers.push(PayloadLayer {
            bitset,
            values,
            bias,
        });
    }
    Ok(SparsePayload {
        shapes: model.shapes().to_vec(),
        layers,
    })
}

/// Reconstruct the `(model, mask)` pair; bit-exact inverse of
/// [`to_payload`].
pub fn from_payload(payload: &SparsePayload) -> Result<(Model, Mask)> {
    let mut model_layers = Vec::with_capacity(payload.layers.len());
    let mut mask_layers = Vec::with_capacity(payload.layers.len());
    for (l, (shape, pl)) in payload.shapes.iter().zip(&payload.layers).enumerate() {
        let p = shape.weight_count();
        if pl.bitset.len() != p.div_ceil(8) {
            return Err(Error::CorruptPayload(format!(
                "layer {l}: bitset length {} != {}",
                pl.bitset.len(),
                p.div_ceil(8)
            )));
        }
        let mut mask = vec![0u8; p];
        let mut ones = 0usize;
        for (i, m) in mask.iter_mut().enumerate() {
            if pl.bitset[i / 8] >> (i % 8) & 1 == 1 {
                *m = 1;
                ones += 1;
            }
        }
        if pl.values.len() != ones {
            return Err(Error::CorruptPayload(format!(
                "layer {l}: {} values for {ones} mask ones",
                pl.values.len()
            )));
        }
        if shape.has_bias && pl.bias.len() != shape.fan_out {
            return Err(Error::CorruptPayload(format!(
                "layer {l}: bias length {} != {}",
                pl.bias.len(),
                shape.fan_out
            )));
        }
        let mut weights = vec![0.0f32; p];
        let mut cursor = 0usize;
        for (i, &m) in mask.iter().enumerate() {
            if m == 1 {
                weights[i] = pl.values[cursor];
                cursor += 1;
            }
        }
        model_layers.push(Layer {
            weights,
            bias: if shape.has_bias {
                Some(pl.bias.clone())
            } else {
                None
            },
        });
        mask_layers.push(mask);
    }
    let model = Model::new(payload.shapes.clone(), model_layers)?;
    Ok((model, Mask::new(mask_layers)))
}
