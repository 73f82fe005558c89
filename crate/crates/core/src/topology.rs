//! Per-round neighbor schedules: ring, fully-connected, and degree-capped
//! time-varying random graphs, plus random client dropout.
//!
//! Semantics are receive-from (pull): row `k` lists the clients whose
//! models `k` receives this round. Schedules are pure functions of
//! `(seed, K, t)` and the topology parameters.

use crate::error::{Error, Result};
use crate::rng::{derive, Stream};
use rand::Rng;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologySpec {
    Ring,
    FullyConnected,
    /// Each client pulls from exactly `max_degree` uniformly-chosen peers,
    /// redrawn every round.
    Random { max_degree: usize },
}

impl FromStr for TopologySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(TopologySpec::Ring),
            "full" => Ok(TopologySpec::FullyConnected),
            other => {
                if let Some(d) = other.strip_prefix("random:") {
                    let max_degree = d.parse::<usize>().map_err(|_| {
                        Error::InvalidTopology(format!("bad max_degree in {other:?}"))
                    })?;
                    Ok(TopologySpec::Random { max_degree })
                } else {
                    Err(Error::InvalidTopology(format!(
                        "unknown topology {other:?} (expected ring | full | random:<max_degree>)"
                    )))
                }
            }
        }
    }
}

impl std::fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TopologySpec::Ring => write!(f, "ring"),
            TopologySpec::FullyConnected => write!(f, "full"),
            TopologySpec::Random { max_degree } => write!(f, "random:{max_degree}"),
        }
    }
}

/// One round's receive-from lists, after dropout. `dropped[k]` means
/// client `k` neither sends, receives, nor trains this round.
#[derive(Debug, Clone)]
pub struct RoundSchedule {
    pub neighbors: Vec<Vec<usize>>,
    pub dropped: Vec<bool>,
}

pub fn ring(num_clients: usize) -> Result<Vec<Vec<usize>>> {
    if num_clients < 3 {
        return Err(Error::InvalidTopology(format!(
            "ring needs K >= 3, got {num_clients}"
        )));
    }
    Ok((0..num_clients)
        .map(|k| {
            let prev = (k + num_clients - 1) % num_clients;
            let next = (k + 1) % num_clients;
            vec![prev, next]
        })
        .collect())
}

pub fn fully_connected(num_clients: usize) -> Result<Vec<Vec<usize>>> {
    if num_clients < 2 {
        return Err(Error::InvalidTopology(format!(
            "fully-connected needs K >= 2, got {num_clients}"
        )));
    }
    Ok((0..num_clients)
        .map(|k| (0..num_clients).filter(|&j| j != k).collect())
        .collect())
}

pub fn time_varying(
    num_clients: usize,
    round: usize,
    max_degree: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if max_degree == 0 || max_degree >= num_clients {
        return Err(Error::InvalidTopology(format!(
            "max_degree {max_degree} out of range [1, {num_clients})"
        )));
    }
    let mut rows = Vec::with_capacity(num_clients);
    for k in 0..num_clients {
        let mut rng = derive(seed, Stream::Topology, round as u64, k as u64);
        // sample max_degree distinct peers from [0, K) \ {k}
        let picks = rand::seq::index::sample(&mut rng, num_clients - 1, max_degree);
        let row: Vec<usize> = picks
            .into_iter()
            .map(|i| if i >= k { i + 1 } else { i })
            .collect();
        rows.push(row);
    }
    Ok(rows)
}

/// Build the round-`t` schedule for a topology spec and apply dropout.
pub fn round_schedule(
    spec: TopologySpec,
    num_clients: usize,
    round: usize,
    dropout_prob: f64,
    seed: u64,
) -> Result<RoundSchedule> {
    let neighbors = match spec {
        TopologySpec::Ring => ring(num_clients)?,
        TopologySpec::FullyConnected => fully_connected(num_clients)?,
        TopologySpec::Random { max_degree } => time_varying(num_clients, round, max_degree, seed)?,
    };
    apply_dropout(neighbors, dropout_prob, seed, round)
}

/// Mark each client dropped independently with probability `dropout_prob`
/// and remove dropped ids from the surviving clients' neighbor lists.
pub fn apply_dropout(
    neighbors: Vec<Vec<usize>>,
    dropout_prob: f64,
    seed: u64,
    round: usize,
) -> Result<RoundSchedule> {
    if !(0.0..1.0).contains(&dropout_prob) {
        return Err(Error::InvalidTopology(format!(
            "dropout_prob {dropout_prob} out of [0, 1)"
        )));
    }
    let num_clients = neighbors.len();
    let dropped: Vec<bool> = if dropout_prob == 0.0 {
        vec![false; num_clients]
    } else {
        (0..num_clients)
            .map(|k| {
                let mut rng = derive(seed, Stream::Dropout, round as u64, k as u64);
                rng.gen_range(0.0..1.0) < dropout_prob
            })
            .collect()
    };
    let neighbors = neighbors
        .into_iter()
        .enumerate()
        .map(|(k, row)| {
            if dropped[k] {
                Vec::new()
            } else {
                row.into_iter().filter(|&j| !dropped[j]).collect()
            }
        })
        .collect();
    Ok(RoundSchedule { neighbors, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_rows() {
        let r = ring(4).unwrap();
        assert_eq!(r[2], vec![1, 3]);
        let r3 = ring(3).unwrap();
        let mut row0 = r3[0].clone();
        row0.sort_unstable();
        assert_eq!(row0, vec![1, 2]);
        assert!(ring(2).is_err());
    }

    #[test]
    fn fully_connected_rows() {
        let f = fully_connected(3).unwrap();
        assert_eq!(f[1], vec![0, 2]);
        for row in &f {
            assert_eq!(row.len(), 2);
        }
        // symmetric adjacency
        for (k, row) in f.iter().enumerate() {
            for &j in row {
                assert!(f[j].contains(&k));
            }
        }
        assert!(fully_connected(1).is_err());
    }

    #[test]
    fn time_varying_degree_and_determinism() {
        let a = time_varying(20, 3, 5, 42).unwrap();
        let b = time_varying(20, 3, 5, 42).unwrap();
        assert_eq!(a, b);
        for (k, row) in a.iter().enumerate() {
            assert_eq!(row.len(), 5);
            assert!(!row.contains(&k));
            let mut sorted = row.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 5);
        }
        let c = time_varying(20, 4, 5, 42).unwrap();
        assert_ne!(a, c, "schedules should differ across rounds");
    }

    #[test]
    fn time_varying_max_degree_equals_full() {
        let tv = time_varying(6, 0, 5, 7).unwrap();
        let fc = fully_connected(6).unwrap();
        for (mut row, full) in tv.into_iter().zip(fc) {
            row.sort_unstable();
            assert_eq!(row, full);
        }
    }

    #[test]
    fn time_varying_send_degree_statistics() {
        // receive-degree is exactly max_degree; mean send-degree matches
        let k = 100;
        let deg = 10;
        let rounds = 500;
        let mut total_sends = 0usize;
        for t in 0..rounds {
            let rows = time_varying(k, t, deg, 11).unwrap();
            let mut sends = vec![0usize; k];
            for row in &rows {
                assert_eq!(row.len(), deg);
                for &j in row {
                    sends[j] += 1;
                }
            }
            total_sends += sends.iter().sum::<usize>();
        }
        let mean_send = total_sends as f64 / (k * rounds) as f64;
        assert!((mean_send - deg as f64).abs() < 1e-9);
    }

    #[test]
    fn dropout_zero_is_identity() {
        let rows = ring(5).unwrap();
        let sched = apply_dropout(rows.clone(), 0.0, 1, 0).unwrap();
        assert_eq!(sched.neighbors, rows);
        assert!(sched.dropped.iter().all(|&d| !d));
    }

    #[test]
    fn dropout_binomial_rate() {
        let k = 100;
        let rounds = 200;
        let mut total = 0usize;
        for t in 0..rounds {
            let rows = fully_connected(k).unwrap();
            let sched = apply_dropout(rows, 0.3, 5, t).unwrap();
            total += sched.dropped.iter().filter(|&&d| d).count();
        }
        let mean = total as f64 / rounds as f64;
        assert!((mean - 30.0).abs() < 3.0, "mean dropped {mean}");
    }

    #[test]
    fn dropout_removes_dropped_neighbors() {
        let rows = fully_connected(10).unwrap();
        let sched = apply_dropout(rows, 0.5, 3, 7).unwrap();
        for (k, row) in sched.neighbors.iter().enumerate() {
            if sched.dropped[k] {
                assert!(row.is_empty());
            } else {
                assert!(row.iter().all(|&j| !sched.dropped[j]));
            }
        }
    }

    #[test]
    fn spec_parsing() {
        assert_eq!("ring".parse::<TopologySpec>().unwrap(), TopologySpec::Ring);
        assert_eq!(
            "full".parse::<TopologySpec>().unwrap(),
            TopologySpec::FullyConnected
        );
        assert_eq!(
            "random:10".parse::<TopologySpec>().unwrap(),
            TopologySpec::Random { max_degree: 10 }
        );
        assert!("mesh".parse::<TopologySpec>().is_err());
        assert!("random:x".parse::<TopologySpec>().is_err());
    }
}
