//! Executor hook for data-parallel kernels.
//!
//! The heavy kernels (3D conv forward/backward) split their output into
//! per-sample chunks and hand each chunk to the executor. Chunks are disjoint,
//! so any schedule produces bit-identical results; the std companion crate
//! provides a threaded implementation, this crate only the sequential one.

/// Runs `body(chunk_index, chunk)` over `data` split into `chunk_len` pieces.
pub trait ParallelFor: Sync {
    fn run_chunks(&self, data: &mut [f64], chunk_len: usize, body: &(dyn Fn(usize, &mut [f64]) + Sync));
}

/// Sequential executor. The reference schedule; always available.
pub struct Seq;

impl ParallelFor for Seq {
    fn run_chunks(&self, data: &mut [f64], chunk_len: usize, body: &(dyn Fn(usize, &mut [f64]) + Sync)) {
        for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
            body(i, chunk);
        }
    }
}
