//! Threaded executor for the core's data-parallel kernels.
//!
//! Chunks are disjoint slices, so scheduling cannot change results; the core
//! reduces across chunks in index order either way. Thread count therefore
//! affects wall time only, never bytes.

use vcl_core::exec::ParallelFor;

pub struct Threads {
    n: usize,
}

impl Threads {
    pub fn new(n: usize) -> Self {
        Threads { n: n.max(1) }
    }

    /// One thread per available core, capped.
    pub fn auto() -> Self {
        let n = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        Threads::new(n.min(8))
    }
}

impl ParallelFor for Threads {
    fn run_chunks(&self, data: &mut [f64], chunk_len: usize, body: &(dyn Fn(usize, &mut [f64]) + Sync)) {
        if self.n == 1 || data.len() <= chunk_len {
            for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
                body(i, chunk);
            }
            return;
        }
        let mut chunks: Vec<(usize, &mut [f64])> = data.chunks_mut(chunk_len).enumerate().collect();
        let per = chunks.len().div_ceil(self.n);
        std::thread::scope(|scope| {
            while !chunks.is_empty() {
                let take = per.min(chunks.len());
                let group: Vec<(usize, &mut [f64])> = chunks.drain(..take).collect();
                scope.spawn(move || {
                    for (i, chunk) in group {
                        body(i, chunk);
                    }
                });
            }
        });
    }
}
