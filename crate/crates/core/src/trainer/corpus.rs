use std::collections::VecDeque;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structgraph::{build_radius_graph, read_graph, AtomGraph, Modality};

/// One JSONL line; `graph_file` is relative to the corpus file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub instruction: String,
    pub graph_file: String,
    pub answer: String,
}

/// A record with its graph loaded and connected.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub instruction: String,
    pub answer: String,
    pub graph: AtomGraph,
}

impl Sample {
    pub fn modality(&self) -> Modality {
        self.graph.modality
    }
}

pub fn read_records(path: &Path) -> Result<Vec<CorpusRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidArgument(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

/// Coordinates required; edges become radius edges within `cutoff` (molecule
/// bonds are kept).
pub fn prepare_graph(graph: &AtomGraph, cutoff: f64) -> Result<AtomGraph> {
    graph.validate()?;
    build_radius_graph(graph, cutoff)
}

/// Loads a JSONL corpus, resolving graph files next to it.
pub fn load_corpus(path: &Path, cutoff: f64) -> Result<Vec<Sample>> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let records = read_records(path)?;
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!("corpus {} is empty", path.display())));
    }
    records
        .into_iter()
        .map(|r| {
            let graph = prepare_graph(&read_graph(&base.join(&r.graph_file))?, cutoff)?;
            Ok(Sample {
                instruction: r.instruction,
                answer: r.answer,
                graph,
            })
        })
        .collect()
}

/// Round-robin over modality shards in `Modality::ALL` order, each shard
/// keeping input order; with `only`, a single shard.
pub fn interleave<T>(items: Vec<T>, modality: impl Fn(&T) -> Modality, only: Option<Modality>) -> Vec<T> {
    let mut shards: Vec<VecDeque<T>> = Modality::ALL.iter().map(|_| VecDeque::new()).collect();
    for item in items {
        let m = modality(&item);
        if only.map_or(true, |o| o == m) {
            let k = Modality::ALL.iter().position(|&a| a == m).unwrap_or(0);
            shards[k].push_back(item);
        }
    }
    let mut out = Vec::new();
    while shards.iter().any(|s| !s.is_empty()) {
        for shard in &mut shards {
            out.extend(shard.pop_front());
        }
    }
    out
}

/// Train and evaluation indices: the last `⌊ratio·n⌋` samples are held out;
/// when that is zero the training set doubles as the evaluation set.
pub fn split(n: usize, ratio: f64) -> (Vec<usize>, Vec<usize>) {
    let held = ((ratio * n as f64).floor() as usize).min(n.saturating_sub(1));
    let train: Vec<usize> = (0..n - held).collect();
    let eval = if held == 0 { train.clone() } else { (n - held..n).collect() };
    (train, eval)
}

/// Infinite sample order: each epoch is a fresh seeded shuffle of `train`.
pub struct SampleStream {
    train: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
}

impl SampleStream {
    pub fn new(train: Vec<usize>, seed: u64) -> Self {
        Self {
            train,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            seed,
        }
    }

    pub fn take(&mut self, count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count && !self.train.is_empty() {
            if self.cursor == self.order.len() {
                self.order = self.train.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
                self.order.shuffle(&mut rng);
                self.cursor = 0;
                self.epoch += 1;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}
