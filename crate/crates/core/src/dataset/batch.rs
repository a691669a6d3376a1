use rand::Rng;

use super::{ActionChunk, Demonstration, NormStats, ObservationWindow, CHUNK_DIM};
use crate::rng::standard_normals;

/// One training minibatch. Windows and chunks are normalized.
#[derive(Debug, Clone)]
pub struct Batch {
    pub windows: Vec<ObservationWindow>,
    pub chunks: Vec<ActionChunk>,
    /// Diffusion step per item, in `1..=K`.
    pub k: Vec<usize>,
    pub noise: Vec<[f64; CHUNK_DIM]>,
    /// `(demo index, t)` source of each item.
    pub sources: Vec<(usize, usize)>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }
}

/// Draws `batch_size` `(demo, t)` pairs uniformly over all pairs in `train`,
/// with `k ~ U{1..=steps}` and unit Gaussian noise.
pub fn sample_batch<R: Rng>(
    train: &[Demonstration],
    stats: &NormStats,
    batch_size: usize,
    steps: usize,
    rng: &mut R,
) -> Batch {
    let offsets: Vec<usize> = train
        .iter()
        .scan(0, |acc, d| {
            let start = *acc;
            *acc += d.len();
            Some(start)
        })
        .collect();
    let total: usize = train.iter().map(Demonstration::len).sum();
    assert!(total > 0, "sample_batch needs a non-empty training set");

    let mut batch = Batch {
        windows: Vec::with_capacity(batch_size),
        chunks: Vec::with_capacity(batch_size),
        k: Vec::with_capacity(batch_size),
        noise: Vec::with_capacity(batch_size),
        sources: Vec::with_capacity(batch_size),
    };
    for _ in 0..batch_size {
        let u = rng.random_range(0..total);
        let demo = offsets.partition_point(|&o| o <= u) - 1;
        let t = u - offsets[demo];
        let d = &train[demo];
        batch.windows.push(stats.normalize_window(&d.window(t)));
        batch.chunks.push(stats.normalize_chunk(&d.chunk(t)));
        batch.k.push(rng.random_range(1..=steps));
        let eps = standard_normals(rng, CHUNK_DIM);
        batch.noise.push(eps.try_into().expect("chunk-sized noise"));
        batch.sources.push((demo, t));
    }
    batch
}
