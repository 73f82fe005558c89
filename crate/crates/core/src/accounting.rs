//! Byte-exact communication accounting, closed-form FLOP accounting, and
//! per-round metric records with CSV/JSON emission.

use crate::error::Result;
use crate::mask::Mask;
use crate::model::LayerShape;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// Payload sizes for a mask over the given shapes:
/// `values_only = 4 * (ones + bias_count)`, `with_mask` adds the per-layer
/// bitset bytes `ceil(P_l / 8)`.
pub fn payload_bytes(mask: &Mask, shapes: &[LayerShape]) -> (usize, usize) {
    let ones = mask.total_ones();
    let biases: usize = shapes.iter().map(|s| s.bias_count()).sum();
    let values_only = 4 * (ones + biases);
    let bitset: usize = shapes.iter().map(|s| s.weight_count().div_ceil(8)).sum();
    (values_only, values_only + bitset)
}

/// Closed-form FLOP count for the local phase. Per step, the forward pass
/// costs `sum_l (2 * d_l * fan_in * fan_out + bias) * batch` and the
/// backward pass is costed at 2x forward, so the total is
/// `3 * forward * steps`.
pub fn training_flops(
    shapes: &[LayerShape],
    density_per_layer: &[f64],
    batch: usize,
    steps: usize,
) -> u64 {
    let forward: f64 = shapes
        .iter()
        .zip(density_per_layer)
        .map(|(s, &d)| {
            (2.0 * d * s.weight_count() as f64 + s.bias_count() as f64) * batch as f64
        })
        .sum();
    (3.0 * forward * steps as f64).round() as u64
}

/// The dense backward pass of one mask-search step: 2x a dense forward on
/// one batch.
pub fn mask_search_flops(shapes: &[LayerShape], batch: usize) -> u64 {
    let forward: f64 = shapes
        .iter()
        .map(|s| (2.0 * s.weight_count() as f64 + s.bias_count() as f64) * batch as f64)
        .sum();
    (2.0 * forward).round() as u64
}

#[derive(Debug, Clone, Serialize)]
pub struct ClientRoundMetrics {
    pub test_accuracy: f64,
    pub train_loss: f64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub flops: u64,
    pub mask_search_flops: u64,
    pub mask_churn: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub clients: Vec<ClientRoundMetrics>,
    pub busiest_node_bytes: u64,
    pub mean_personalized_accuracy: f64,
}

impl RoundMetrics {
    pub fn record(round: usize, clients: Vec<ClientRoundMetrics>) -> Self {
        let busiest_node_bytes = clients
            .iter()
            .map(|c| c.bytes_sent + c.bytes_received)
            .max()
            .unwrap_or(0);
        let mean_personalized_accuracy = if clients.is_empty() {
            0.0
        } else {
            clients.iter().map(|c| c.test_accuracy).sum::<f64>() / clients.len() as f64
        };
        RoundMetrics {
            round,
            clients,
            busiest_node_bytes,
            mean_personalized_accuracy,
        }
    }
}

/// CSV columns: round, client, acc, loss, bytes_sent, bytes_received,
/// flops, mask_churn.
pub fn write_csv(path: &Path, rounds: &[RoundMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "round",
        "client",
        "acc",
        "loss",
        "bytes_sent",
        "bytes_received",
        "flops",
        "mask_churn",
    ])?;
    for r in rounds {
        for (k, c) in r.clients.iter().enumerate() {
            w.write_record([
                r.round.to_string(),
                k.to_string(),
                format!("{:.6}", c.test_accuracy),
                format!("{:.6}", c.train_loss),
                c.bytes_sent.to_string(),
                c.bytes_received.to_string(),
                c.flops.to_string(),
                c.mask_churn.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Summary<'a, C: Serialize> {
    pub config: &'a C,
    pub rounds: usize,
    pub final_mean_accuracy: f64,
    pub final_per_client_accuracy: Vec<f64>,
    pub total_bytes_sent: u64,
    pub total_flops: u64,
    pub total_mask_search_flops: u64,
    pub busiest_node_total_bytes: u64,
}

pub fn summarize<'a, C: Serialize>(config: &'a C, rounds: &[RoundMetrics]) -> Summary<'a, C> {
    let last = rounds.last();
    let num_clients = last.map_or(0, |r| r.clients.len());
    let mut per_client_bytes = vec![0u64; num_clients];
    for r in rounds {
        for (k, c) in r.clients.iter().enumerate() {
            per_client_bytes[k] += c.bytes_sent + c.bytes_received;
        }
    }
    Summary {
        config,
        rounds: rounds.len(),
        final_mean_accuracy: last.map_or(0.0, |r| r.mean_personalized_accuracy),
        final_per_client_accuracy: last
            .map_or_else(Vec::new, |r| r.clients.iter().map(|c| c.test_accuracy).collect()),
        total_bytes_sent: rounds
            .iter()
            .flat_map(|r| r.clients.iter())
            .map(|c| c.bytes_sent)
            .sum(),
        total_flops: rounds
            .iter()
            .flat_map(|r| r.clients.iter())
            .map(|c| c.flops)
            .sum(),
        total_mask_search_flops: rounds
            .iter()
            .flat_map(|r| r.clients.iter())
            .map(|c| c.mask_search_flops)
            .sum(),
        busiest_node_total_bytes: per_client_bytes.iter().copied().max().unwrap_or(0),
    }
}

pub fn write_summary<C: Serialize>(path: &Path, summary: &Summary<'_, C>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let json = serde_json::to_string_pretty(summary)?;
    f.write_all(json.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}
