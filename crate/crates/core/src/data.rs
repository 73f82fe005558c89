//! Synthetic dataset generation, non-IID partitioners (Dirichlet and
//! pathological), matched per-client test shards, and label-distribution
//! analytics.

use crate::error::{Error, Result};
use crate::model::Batch;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use std::io::{Read, Write};
use std::path::Path;

/// Labeled dataset: `n x d` features row-major, integer labels in `[0, C)`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub n: usize,
    pub d: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(&self.features[i * self.d..(i + 1) * self.d]);
            labels.push(self.labels[i]);
        }
        Batch::new(features, labels, self.d)
    }

    fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        by_class
    }

    /// Flat binary dump: header (n, d, C as 8-byte LE unsigned), features
    /// as 4-byte floats row-major, labels as 4-byte unsigned.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&(self.n as u64).to_le_bytes())?;
        f.write_all(&(self.d as u64).to_le_bytes())?;
        f.write_all(&(self.num_classes as u64).to_le_bytes())?;
        for &x in &self.features {
            f.write_all(&(x as f32).to_le_bytes())?;
        }
        for &y in &self.labels {
            f.write_all(&(y as u32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut u64buf = [0u8; 8];
        f.read_exact(&mut u64buf)?;
        let n = u64::from_le_bytes(u64buf) as usize;
        f.read_exact(&mut u64buf)?;
        let d = u64::from_le_bytes(u64buf) as usize;
        f.read_exact(&mut u64buf)?;
        let num_classes = u64::from_le_bytes(u64buf) as usize;
        let mut f32buf = [0u8; 4];
        let mut features = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            f.read_exact(&mut f32buf)?;
            features.push(f32::from_le_bytes(f32buf) as f64);
        }
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            f.read_exact(&mut f32buf)?;
            labels.push(u32::from_le_bytes(f32buf) as usize);
        }
        Ok(Dataset {
            features,
            labels,
            n,
            d,
            num_classes,
        })
    }
}

/// Per-client index lists into a dataset plus their label histograms.
#[derive(Debug, Clone)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
    pub histograms: Vec<LabelDistribution>,
    /// Count of samples moved during empty-client repair.
    pub repairs: usize,
}

/// Per-class proportion vector summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    pub proportions: Vec<f64>,
}

impl LabelDistribution {
    pub fn from_labels(labels: impl Iterator<Item = usize>, num_classes: usize) -> Self {
        let mut counts = vec![0usize; num_classes];
        let mut n = 0usize;
        for y in labels {
            counts[y] += 1;
            n += 1;
        }
        let proportions = counts
            .iter()
            .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
            .collect();
        LabelDistribution { proportions }
    }

    pub fn support_size(&self) -> usize {
        self.proportions.iter().filter(|&&p| p > 0.0).count()
    }
}

/// Gaussian class clusters: each class mean sits on a sphere of radius
/// `class_sep`, samples have unit covariance around it.
pub fn make_synthetic<R: Rng>(
    num_classes: usize,
    d: usize,
    per_class: usize,
    class_sep: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if num_classes < 2 || per_class < 10 || d == 0 {
        return Err(Error::Domain(format!(
            "invalid synthetic sizes: C={num_classes}, d={d}, per_class={per_class}"
        )));
    }
    let mut means = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in v.iter_mut() {
                *x = *x / norm * class_sep;
            }
        }
        means.push(v);
    }
    let n = num_classes * per_class;
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for j in 0..d {
                let noise: f64 = StandardNormal.sample(rng);
                features.push(mean[j] + noise);
            }
            labels.push(c);
        }
    }
    Ok(Dataset {
        features,
        labels,
        n,
        d,
        num_classes,
    })
}

/// Largest-remainder apportionment of `total` items to `weights`.
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        let mut out = vec![0usize; weights.len()];
        if !out.is_empty() {
            out[0] = total;
        }
        return out;
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

fn finish_partition(ds: &Dataset, mut client_indices: Vec<Vec<usize>>) -> Partition {
    // empty-client repair: donate one sample from the largest client
    let mut repairs = 0usize;
    loop {
        let empty = client_indices.iter().position(|c| c.is_empty());
        let Some(e) = empty else { break };
        let largest = client_indices
            .iter()
            .enumerate()
            .max_by_key(|(_, c)| c.len())
            .map(|(i, _)| i)
            .unwrap();
        if client_indices[largest].len() <= 1 {
            break;
        }
        let moved = client_indices[largest].pop().unwrap();
        client_indices[e].push(moved);
        repairs += 1;
    }
    let histograms = client_indices
        .iter()
        .map(|idx| {
            LabelDistribution::from_labels(idx.iter().map(|&i| ds.labels[i]), ds.num_classes)
        })
        .collect();
    Partition {
        client_indices,
        histograms,
        repairs,
    }
}

fn sample_dirichlet<R: Rng>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&a| {
            let g = Gamma::new(a, 1.0).expect("alpha > 0");
            g.sample(rng)
        })
        .collect();
    let sum: f64 = draws.iter().sum();
    if sum <= 0.0 {
        // degenerate draw (tiny alpha); fall back to a single winner
        let mut out = vec![0.0; alpha.len()];
        out[rng.gen_range(0..alpha.len())] = 1.0;
        return out;
    }
    draws.into_iter().map(|x| x / sum).collect()
}

/// Dirichlet partition: for each class, draw `p ~ Dir(alpha * 1_K)` over
/// clients and split the class indices proportionally.
pub fn dirichlet_partition<R: Rng>(
    ds: &Dataset,
    num_clients: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Partition> {
    if alpha <= 0.0 || num_clients == 0 {
        return Err(Error::InvalidPartition(format!(
            "alpha={alpha}, K={num_clients}"
        )));
    }
    let mut client_indices = vec![Vec::new(); num_clients];
    for mut indices in ds.class_indices() {
        indices.shuffle(rng);
        let p = sample_dirichlet(&vec![alpha; num_clients], rng);
        let counts = largest_remainder(&p, indices.len());
        let mut cursor = 0usize;
        for (k, &c) in counts.iter().enumerate() {
            client_indices[k].extend_from_slice(&indices[cursor..cursor + c]);
            cursor += c;
        }
    }
    Ok(finish_partition(ds, client_indices))
}

/// Pathological partition: each class is cut into equal shards and every
/// client receives shards from exactly `classes_per_client` distinct classes.
pub fn pathological_partition<R: Rng>(
    ds: &Dataset,
    num_clients: usize,
    classes_per_client: usize,
    rng: &mut R,
) -> Result<Partition> {
    let c = ds.num_classes;
    if classes_per_client == 0 || classes_per_client > c {
        return Err(Error::InvalidPartition(format!(
            "classes_per_client={classes_per_client} with C={c}"
        )));
    }
    if num_clients * classes_per_client < c {
        return Err(Error::InvalidPartition(format!(
            "K * classes_per_client = {} < C = {c}",
            num_clients * classes_per_client
        )));
    }
    let total_slots = num_clients * classes_per_client;
    // class slot multiplicities: as even as possible, every class used
    let base = total_slots / c;
    let extra = total_slots % c;
    // deal grouped-by-class slots round-robin to a shuffled client order;
    // a class holds at most K slots, so two slots K apart never share one
    let mut class_order: Vec<usize> = (0..c).collect();
    class_order.shuffle(rng);
    let mut slot_classes = Vec::with_capacity(total_slots);
    for &class in &class_order {
        let copies = base + usize::from(class < extra);
        slot_classes.extend(std::iter::repeat_n(class, copies));
    }
    let mut perm: Vec<usize> = (0..num_clients).collect();
    perm.shuffle(rng);
    let mut assignment = vec![Vec::new(); num_clients];
    for (s, &class) in slot_classes.iter().enumerate() {
        assignment[perm[s % num_clients]].push(class);
    }
    debug_assert!(assignment.iter().all(|cs| {
        let mut sorted = cs.clone();
        sorted.sort_unstable();
        sorted.windows(2).all(|w| w[0] != w[1])
    }));

    // cut each class's samples into as many shards as it has slots
    let mut class_shards: Vec<Vec<Vec<usize>>> = Vec::with_capacity(c);
    for (class, mut indices) in ds.class_indices().into_iter().enumerate() {
        indices.shuffle(rng);
        let copies = base + usize::from(class < extra);
        if indices.len() < copies {
            return Err(Error::InvalidPartition(format!(
                "class {class} has {} samples but needs {copies} shards",
                indices.len()
            )));
        }
        let shard = indices.len() / copies;
        let mut shards: Vec<Vec<usize>> = Vec::with_capacity(copies);
        for s in 0..copies {
            let end = if s + 1 == copies {
                indices.len()
            } else {
                (s + 1) * shard
            };
            shards.push(indices[s * shard..end].to_vec());
        }
        class_shards.push(shards);
    }
    let mut client_indices = vec![Vec::new(); num_clients];
    for (k, classes) in assignment.iter().enumerate() {
        for &class in classes {
            let shard = class_shards[class].pop().expect("one shard per slot");
            client_indices[k].extend(shard);
        }
    }
    Ok(finish_partition(ds, client_indices))
}

/// Grouped Dirichlet: one Dir(alpha) label distribution per group, shared
/// by every client in the group; each client samples its shard counts from
/// that shared distribution.
pub fn grouped_dirichlet<R: Rng>(
    ds: &Dataset,
    groups: usize,
    clients_per_group: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Partition> {
    if groups == 0 || clients_per_group == 0 || alpha <= 0.0 {
        return Err(Error::InvalidPartition(format!(
            "groups={groups}, clients_per_group={clients_per_group}, alpha={alpha}"
        )));
    }
    let num_clients = groups * clients_per_group;
    let group_dists: Vec<Vec<f64>> = (0..groups)
        .map(|_| sample_dirichlet(&vec![alpha; ds.num_classes], rng))
        .collect();
    // per-client demand for each class, apportioned from the group distribution
    let per_client = ds.n / num_clients;
    let mut class_pools = ds.class_indices();
    for pool in class_pools.iter_mut() {
        pool.shuffle(rng);
    }
    let mut client_indices = vec![Vec::new(); num_clients];
    for k in 0..num_clients {
        let dist = &group_dists[k / clients_per_group];
        let wanted = largest_remainder(dist, per_client);
        for (class, &w) in wanted.iter().enumerate() {
            let pool = &mut class_pools[class];
            let take = w.min(pool.len());
            for _ in 0..take {
                client_indices[k].push(pool.pop().unwrap());
            }
        }
    }
    // leftovers (rounding or exhausted pools) go round-robin
    let mut k = 0usize;
    for pool in class_pools.iter_mut() {
        while let Some(i) = pool.pop() {
            client_indices[k % num_clients].push(i);
            k += 1;
        }
    }
    Ok(finish_partition(ds, client_indices))
}

/// Sample a matched test shard: `n_test` points whose label proportions
/// equal the largest-remainder rounding of the train histogram. Sampling
/// is with replacement across clients (the pool may be reused).
pub fn matched_test_shard<R: Rng>(
    train_hist: &LabelDistribution,
    test_pool: &Dataset,
    n_test: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let wanted = largest_remainder(&train_hist.proportions, n_test);
    let by_class = test_pool.class_indices();
    let mut out = Vec::with_capacity(n_test);
    for (class, &w) in wanted.iter().enumerate() {
        if w == 0 {
            continue;
        }
        let pool = &by_class[class];
        if pool.is_empty() {
            return Err(Error::InvalidPartition(format!(
                "class {class} has train mass but no test pool samples"
            )));
        }
        for _ in 0..w {
            out.push(pool[rng.gen_range(0..pool.len())]);
        }
    }
    Ok(out)
}

/// Cosine similarity a.b / (|a| |b|) between two label distributions.
pub fn label_cosine_similarity(a: &LabelDistribution, b: &LabelDistribution) -> Result<f64> {
    if a.proportions.len() != b.proportions.len() {
        return Err(Error::Domain("label distributions differ in length".into()));
    }
    let dot: f64 = a
        .proportions
        .iter()
        .zip(&b.proportions)
        .map(|(x, y)| x * y)
        .sum();
    let na: f64 = a.proportions.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.proportions.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("zero label distribution".into()));
    }
    Ok(dot / (na * nb))
}
