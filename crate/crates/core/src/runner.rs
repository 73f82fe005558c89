//! Experiment orchestration: wires gossip, training, mask evolution,
//! topology, data partitioning and accounting into the full round loop,
//! plus the local-only and decentralized-SGD baselines.
//!
//! Rounds use simultaneous-update semantics: every client aggregates
//! against the frozen previous-round states before any new state is
//! published. All randomness flows through per-client per-round streams,
//! so any worker count produces bit-identical results.

use crate::accounting::{self, ClientRoundMetrics, RoundMetrics};
use crate::data::{self, Dataset, LabelDistribution, Partition};
use crate::error::{Error, Result};
use crate::evolve::{self, AnnealSchedule};
use crate::gossip;
use crate::mask::{self, CapacityProfile, Mask};
use crate::model::{self, Model};
use crate::rng::{derive, Stream};
use crate::topology::{RoundSchedule, TopologySpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dispfl,
    Local,
    Dpsgd,
    DpsgdFt,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionSpec {
    Dirichlet { alpha: f64 },
    Pathological { classes_per_client: usize },
    Grouped { groups: usize, alpha: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CapacitySpec {
    /// Same target density for every client.
    Uniform(f64),
    /// Contiguous client groups cycle through these densities.
    Groups(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Training samples generated per class.
    pub per_class: usize,
    /// Test-pool samples generated per class.
    pub test_per_class: usize,
    pub class_sep: f64,
    /// Matched test-shard size per client.
    pub test_shard: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            num_classes: 10,
            feature_dim: 20,
            per_class: 100,
            test_per_class: 100,
            class_sep: 4.0,
            test_shard: 100,
        }
    }
}

fn default_lr_decay() -> f64 {
    0.998
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_alpha0() -> f64 {
    0.5
}
fn default_hidden() -> Vec<usize> {
    vec![30]
}
fn default_batch() -> usize {
    16
}
fn default_epochs() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub num_clients: usize,
    pub rounds: usize,
    pub lr: f64,
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_epochs")]
    pub local_epochs: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// `ring` | `full` | `random:<max_degree>`.
    pub topology: String,
    #[serde(default)]
    pub dropout_prob: f64,
    pub partition: PartitionSpec,
    pub capacity: CapacitySpec,
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(default = "default_hidden")]
    pub hidden_layers: Vec<usize>,
    #[serde(default)]
    pub data: DataConfig,
    pub seed: u64,
    /// Fine-tuning epochs for dpsgd_ft; defaults to `local_epochs`.
    #[serde(default)]
    pub fine_tune_epochs: Option<f64>,
    /// Worker threads; 0 or 1 means sequential.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("num_clients must be >= 1".into()));
        }
        if self.lr < 0.0 || self.lr_decay <= 0.0 {
            return Err(Error::Config("lr must be >= 0 and lr_decay > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.alpha0) {
            return Err(Error::Config("alpha0 must lie in [0, 1)".into()));
        }
        if self.num_clients > 1 {
            self.topology.parse::<TopologySpec>()?;
        }
        Ok(())
    }

    fn capacity_profile(&self) -> Result<CapacityProfile> {
        match &self.capacity {
            CapacitySpec::Uniform(d) => CapacityProfile::uniform(*d, self.num_clients),
            CapacitySpec::Groups(list) => {
                if list.is_empty() {
                    return Err(Error::Config("capacity group list is empty".into()));
                }
                // contiguous blocks, like the grouped heterogeneous setting
                let per = self.num_clients.div_ceil(list.len());
                CapacityProfile::new(
                    (0..self.num_clients)
                        .map(|k| list[(k / per).min(list.len() - 1)])
                        .collect(),
                )
            }
        }
    }

    fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.data.feature_dim];
        sizes.extend_from_slice(&self.hidden_layers);
        sizes.push(self.data.num_classes);
        sizes
    }
}

/// Full per-client state carried across rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub model: Model,
    pub mask: Mask,
    pub capacity: f64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub steps_per_round: usize,
}

pub struct RunOutput {
    pub rounds: Vec<RoundMetrics>,
    pub states: Vec<ClientState>,
    pub train_data: Dataset,
    pub test_pool: Dataset,
    pub partition: Partition,
}

impl RunOutput {
    pub fn final_mean_accuracy(&self) -> f64 {
        self.rounds
            .last()
            .map_or(0.0, |r| r.mean_personalized_accuracy)
    }
}

/// Generate train data and test pool from shared class means: one combined
/// draw, split per class so both sides come from identical distributions.
fn generate_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.data;
    let mut rng = derive(cfg.seed, Stream::DataGen, 0, 0);
    let combined = data::make_synthetic(
        d.num_classes,
        d.feature_dim,
        d.per_class + d.test_per_class,
        d.class_sep,
        &mut rng,
    )?;
    let per = d.per_class + d.test_per_class;
    let split = |take_test: bool| {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for c in 0..d.num_classes {
            let (lo, hi) = if take_test {
                (c * per + d.per_class, (c + 1) * per)
            } else {
                (c * per, c * per + d.per_class)
            };
            for i in lo..hi {
                features.extend_from_slice(
                    &combined.features[i * d.feature_dim..(i + 1) * d.feature_dim],
                );
                labels.push(combined.labels[i]);
            }
        }
        let n = labels.len();
        Dataset {
            features,
            labels,
            n,
            d: d.feature_dim,
            num_classes: d.num_classes,
        }
    };
    Ok((split(false), split(true)))
}

fn partition_data(cfg: &ExperimentConfig, train: &Dataset) -> Result<Partition> {
    let mut rng = derive(cfg.seed, Stream::Partition, 0, 0);
    match &cfg.partition {
        PartitionSpec::Dirichlet { alpha } => {
            data::dirichlet_partition(train, cfg.num_clients, *alpha, &mut rng)
        }
        PartitionSpec::Pathological { classes_per_client } => {
            data::pathological_partition(train, cfg.num_clients, *classes_per_client, &mut rng)
        }
        PartitionSpec::Grouped { groups, alpha } => {
            if !cfg.num_clients.is_multiple_of(*groups) {
                return Err(Error::Config(format!(
                    "num_clients {} not divisible by groups {groups}",
                    cfg.num_clients
                )));
            }
            data::grouped_dirichlet(train, *groups, cfg.num_clients / *groups, *alpha, &mut rng)
        }
    }
}

fn init_states(
    cfg: &ExperimentConfig,
    partition: &Partition,
    test_pool: &Dataset,
) -> Result<Vec<ClientState>> {
    let capacities = cfg.capacity_profile()?;
    let sizes = cfg.layer_sizes();
    let sparse = cfg.algorithm == Algorithm::Dispfl;
    let mut states = Vec::with_capacity(cfg.num_clients);
    for k in 0..cfg.num_clients {
        let mut model_rng = derive(cfg.seed, Stream::InitModel, k as u64, 0);
        let model = Model::init_mlp(&sizes, &mut model_rng)?;
        let mask = if sparse {
            let mut mask_rng = derive(cfg.seed, Stream::InitMask, k as u64, 0);
            mask::erk_init(model.shapes(), capacities.density(k), &mut mask_rng)?
        } else {
            Mask::ones(model.shapes())
        };
        let model = model.masked(&mask)?;
        let train_indices = partition.client_indices[k].clone();
        if train_indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let hist = &partition.histograms[k];
        let mut shard_rng = derive(cfg.seed, Stream::TestShard, k as u64, 0);
        let test_indices =
            data::matched_test_shard(hist, test_pool, cfg.data.test_shard, &mut shard_rng)?;
        let steps_per_round =
            ((cfg.local_epochs * train_indices.len() as f64) / cfg.batch_size as f64).ceil()
                as usize;
        states.push(ClientState {
            id: k,
            model,
            mask,
            capacity: capacities.density(k),
            train_indices,
            test_indices,
            steps_per_round,
        });
    }
    Ok(states)
}

fn sample_batch_indices<R: Rng>(indices: &[usize], batch: usize, rng: &mut R) -> Vec<usize> {
    if indices.len() >= batch {
        rand::seq::index::sample(rng, indices.len(), batch)
            .into_iter()
            .map(|i| indices[i])
            .collect()
    } else {
        (0..batch)
            .map(|_| indices[rng.gen_range(0..indices.len())])
            .collect()
    }
}

/// N masked SGD steps over the client's shard. Returns the mean batch
/// loss. Weight decay touches surviving weights only; masked coordinates
/// stay exactly zero throughout.
pub fn local_train(
    model: &mut Model,
    mask: &Mask,
    train: &Dataset,
    indices: &[usize],
    lr: f64,
    weight_decay: f64,
    batch_size: usize,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut loss_sum = 0.0;
    for _ in 0..steps {
        let picks = sample_batch_indices(indices, batch_size, rng);
        let batch = train.batch(&picks);
        let (loss, mut grad) = model::masked_loss_gradient(model, mask, &batch)?;
        loss_sum += loss;
        if weight_decay != 0.0 {
            for (l, gl) in grad.layers.iter_mut().enumerate() {
                for (i, g) in gl.weights.iter_mut().enumerate() {
                    if mask.layer(l)[i] == 1 {
                        *g += weight_decay * model.layers()[l].weights[i] as f64;
                    }
                }
            }
        }
        *model = model::sgd_step(model, &grad, lr)?;
    }
    if steps == 0 {
        // record the current loss without stepping
        let picks = sample_batch_indices(indices, batch_size.min(indices.len()), rng);
        let batch = train.batch(&picks);
        let (loss, _) = model::forward(model, mask, &batch)?;
        return Ok(loss);
    }
    Ok(loss_sum / steps as f64)
}

fn evaluate(state: &ClientState, test_pool: &Dataset) -> Result<(f64, f64)> {
    let batch = test_pool.batch(&state.test_indices);
    model::forward(&state.model, &state.mask, &batch)
}

struct RoundContext<'a> {
    cfg: &'a ExperimentConfig,
    train: &'a Dataset,
    test_pool: &'a Dataset,
    sched: &'a AnnealSchedule,
}

/// One client's full round: aggregate, train, (optionally) evolve the
/// mask, evaluate. Pure function of the frozen previous-round snapshot.
fn client_round(
    ctx: &RoundContext<'_>,
    snapshot: &[ClientState],
    payload_bytes: &[u64],
    schedule: &RoundSchedule,
    round: usize,
    k: usize,
) -> Result<(ClientState, ClientRoundMetrics)> {
    let cfg = ctx.cfg;
    let mut state = snapshot[k].clone();
    let lr = cfg.lr * cfg.lr_decay.powi(round as i32);
    let mut bytes_received = 0u64;
    let mut flops = 0u64;
    let mut search_flops = 0u64;
    let mut churn = 0u64;
    let mut train_loss = 0.0;

    if schedule.dropped[k] {
        let (_, acc) = evaluate(&state, ctx.test_pool)?;
        return Ok((
            state,
            ClientRoundMetrics {
                test_accuracy: acc,
                train_loss: 0.0,
                bytes_sent: 0,
                bytes_received: 0,
                flops: 0,
                mask_search_flops: 0,
                mask_churn: 0,
            },
        ));
    }

    let mut consensus_acc = None;
    if cfg.algorithm != Algorithm::Local {
        let received: Vec<(Model, Mask)> = schedule.neighbors[k]
            .iter()
            .map(|&j| {
                bytes_received += payload_bytes[j];
                // round-trip through the wire format: what the receiver
                // decodes is exactly what travels
                let payload = gossip::to_payload(&snapshot[j].model, &snapshot[j].mask)?;
                gossip::from_payload(&payload)
            })
            .collect::<Result<_>>()?;
        state.model = gossip::aggregate((&state.model, &state.mask), &received)?;
        if matches!(cfg.algorithm, Algorithm::Dpsgd | Algorithm::DpsgdFt) {
            // dense baselines report the consensus model's accuracy; the
            // locally trained model is only carried forward as gossip input
            let (_, acc) = evaluate(&state, ctx.test_pool)?;
            consensus_acc = Some(acc);
        }
    }

    let mut train_rng = derive(cfg.seed, Stream::TrainBatch, round as u64, k as u64);
    train_loss += local_train(
        &mut state.model,
        &state.mask,
        ctx.train,
        &state.train_indices,
        lr,
        cfg.weight_decay,
        cfg.batch_size,
        state.steps_per_round,
        &mut train_rng,
    )?;
    if let Some((layer, index)) = state.model.mask_violation(&state.mask) {
        return Err(Error::ProtocolViolation { layer, index });
    }
    let densities: Vec<f64> = (0..state.mask.num_layers())
        .map(|l| state.mask.ones_in_layer(l) as f64 / state.mask.layer(l).len() as f64)
        .collect();
    flops += accounting::training_flops(
        state.model.shapes(),
        &densities,
        cfg.batch_size,
        state.steps_per_round,
    );

    if cfg.algorithm == Algorithm::Dispfl {
        let mut search_rng = derive(cfg.seed, Stream::MaskSearch, round as u64, k as u64);
        let picks = sample_batch_indices(&state.train_indices, cfg.batch_size, &mut search_rng);
        let batch = ctx.train.batch(&picks);
        let dense_grad = model::dense_gradient(&state.model, &batch)?;
        let evo = evolve::evolve_mask(&mut state.model, &state.mask, &dense_grad, ctx.sched, round)?;
        churn = evo.churn.iter().sum::<usize>() as u64;
        state.mask = evo.mask;
        search_flops = accounting::mask_search_flops(state.model.shapes(), cfg.batch_size);
    }

    let acc = match consensus_acc {
        Some(a) => a,
        None => evaluate(&state, ctx.test_pool)?.1,
    };
    Ok((
        state,
        ClientRoundMetrics {
            test_accuracy: acc,
            train_loss,
            bytes_sent: 0, // filled in at the round barrier
            bytes_received,
            flops,
            mask_search_flops: search_flops,
            mask_churn: churn,
        },
    ))
}

/// Run the configured experiment end to end.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let (train, test_pool) = generate_data(cfg)?;
    let partition = partition_data(cfg, &train)?;
    let mut states = init_states(cfg, &partition, &test_pool)?;
    let sched = AnnealSchedule {
        alpha0: cfg.alpha0,
        total_rounds: cfg.rounds.max(1),
    };
    let topology = if cfg.algorithm == Algorithm::Local || cfg.num_clients == 1 {
        None
    } else {
        Some(cfg.topology.parse::<TopologySpec>()?)
    };

    let mut rounds = Vec::with_capacity(cfg.rounds);
    let baseline_counts: Vec<Vec<usize>> =
        states.iter().map(|s| s.mask.ones_per_layer()).collect();
    for t in 0..cfg.rounds {
        let schedule = match topology {
            Some(spec) => crate::topology::round_schedule(
                spec,
                cfg.num_clients,
                t,
                cfg.dropout_prob,
                cfg.seed,
            )?,
            // no communication, but dropping still idles the device
            None => crate::topology::apply_dropout(
                vec![Vec::new(); cfg.num_clients],
                cfg.dropout_prob,
                cfg.seed,
                t,
            )?,
        };
        // per-sender payload size, counted per receiving edge
        let payload_bytes: Vec<u64> = states
            .iter()
            .map(|s| {
                let (values_only, with_mask) =
                    accounting::payload_bytes(&s.mask, s.model.shapes());
                if cfg.algorithm == Algorithm::Dispfl {
                    with_mask as u64
                } else {
                    values_only as u64
                }
            })
            .collect();

        let ctx = RoundContext {
            cfg,
            train: &train,
            test_pool: &test_pool,
            sched: &sched,
        };
        let snapshot = &states;
        let results: Vec<(ClientState, ClientRoundMetrics)> = if cfg.workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| {
                (0..cfg.num_clients)
                    .into_par_iter()
                    .map(|k| client_round(&ctx, snapshot, &payload_bytes, &schedule, t, k))
                    .collect::<Result<Vec<_>>>()
            })?
        } else {
            (0..cfg.num_clients)
                .map(|k| client_round(&ctx, snapshot, &payload_bytes, &schedule, t, k))
                .collect::<Result<Vec<_>>>()?
        };

        // round barrier: publish new states, attribute sent bytes per edge
        let mut sent = vec![0u64; cfg.num_clients];
        for (k, row) in schedule.neighbors.iter().enumerate() {
            if !schedule.dropped[k] {
                for &j in row {
                    sent[j] += payload_bytes[j];
                }
            }
        }
        let mut client_metrics = Vec::with_capacity(cfg.num_clients);
        for (k, (state, mut metrics)) in results.into_iter().enumerate() {
            metrics.bytes_sent = sent[k];
            if state.mask.ones_per_layer() != baseline_counts[k] {
                return Err(Error::Config(format!(
                    "sparsity conservation breach at round {t}, client {k}"
                )));
            }
            states[k] = state;
            client_metrics.push(metrics);
        }
        rounds.push(RoundMetrics::record(t, client_metrics));
    }

    if cfg.algorithm == Algorithm::DpsgdFt {
        // final personalization pass before the last evaluation
        let ft_epochs = cfg.fine_tune_epochs.unwrap_or(cfg.local_epochs);
        let lr = cfg.lr * cfg.lr_decay.powi(cfg.rounds as i32);
        let mut client_metrics = Vec::with_capacity(cfg.num_clients);
        for state in states.iter_mut() {
            let steps = ((ft_epochs * state.train_indices.len() as f64)
                / cfg.batch_size as f64)
                .ceil() as usize;
            let mut rng = derive(cfg.seed, Stream::TrainBatch, cfg.rounds as u64, state.id as u64);
            let loss = local_train(
                &mut state.model,
                &state.mask,
                &train,
                &state.train_indices,
                lr,
                cfg.weight_decay,
                cfg.batch_size,
                steps,
                &mut rng,
            )?;
            let (_, acc) = evaluate(state, &test_pool)?;
            let densities = vec![1.0; state.mask.num_layers()];
            client_metrics.push(ClientRoundMetrics {
                test_accuracy: acc,
                train_loss: loss,
                bytes_sent: 0,
                bytes_received: 0,
                flops: accounting::training_flops(
                    state.model.shapes(),
                    &densities,
                    cfg.batch_size,
                    steps,
                ),
                mask_search_flops: 0,
                mask_churn: 0,
            });
        }
        rounds.push(RoundMetrics::record(cfg.rounds, client_metrics));
    }

    let output = RunOutput {
        rounds,
        states,
        train_data: train,
        test_pool,
        partition,
    };
    if let Some(dir) = &cfg.output_dir {
        write_outputs(cfg, &output, dir)?;
    }
    Ok(output)
}

fn write_outputs(cfg: &ExperimentConfig, out: &RunOutput, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    accounting::write_csv(&dir.join("metrics.csv"), &out.rounds)?;
    let summary = accounting::summarize(cfg, &out.rounds);
    accounting::write_summary(&dir.join("summary.json"), &summary)?;
    Ok(())
}

/// One summary row of a sparsity sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub density: f64,
    pub final_mean_accuracy: f64,
    pub total_bytes_sent: u64,
    pub total_flops: u64,
    pub busiest_node_total_bytes: u64,
}

/// Re-run the experiment at each density in `grid` (uniform capacity).
pub fn sweep(cfg: &ExperimentConfig, grid: &[f64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(grid.len());
    for &density in grid {
        let mut c = cfg.clone();
        c.capacity = CapacitySpec::Uniform(density);
        c.output_dir = None;
        let out = run(&c)?;
        let summary = accounting::summarize(&c, &out.rounds);
        rows.push(SweepRow {
            density,
            final_mean_accuracy: summary.final_mean_accuracy,
            total_bytes_sent: summary.total_bytes_sent,
            total_flops: summary.total_flops,
            busiest_node_total_bytes: summary.busiest_node_total_bytes,
        });
    }
    Ok(rows)
}

/// Pairwise mask-distance and label-similarity matrices of a finished run.
pub struct MaskAnalysis {
    pub hamming: Vec<Vec<f64>>,
    pub label_cosine: Vec<Vec<f64>>,
}

pub fn analyze_masks(out: &RunOutput) -> Result<MaskAnalysis> {
    let k = out.states.len();
    let mut hamming = vec![vec![0.0; k]; k];
    let mut label_cosine = vec![vec![0.0; k]; k];
    let hists: Vec<&LabelDistribution> = out.partition.histograms.iter().collect();
    for i in 0..k {
        for j in 0..k {
            if i == j {
                hamming[i][j] = 0.0;
                label_cosine[i][j] = 1.0;
                continue;
            }
            let (_, norm) = mask::hamming_distance(&out.states[i].mask, &out.states[j].mask)?;
            hamming[i][j] = norm;
            label_cosine[i][j] = data::label_cosine_similarity(hists[i], hists[j])?;
        }
    }
    Ok(MaskAnalysis {
        hamming,
        label_cosine,
    })
}

pub fn write_matrix(path: &std::path::Path, matrix: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in matrix {
        w.write_record(row.iter().map(|v| format!("{v:.6}")))?;
    }
    w.flush()?;
    Ok(())
}
