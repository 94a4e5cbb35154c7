//! Rough conv3d throughput check.
use std::time::Instant;
use vcl_core::exec::Seq;
use vcl_core::rng::Rng;
use vcl_core::tensor::Tensor;
use vcl_core::graph::Graph;

fn main() {
    let mut rng = Rng::new(1);
    let b = 8;
    let stages: Vec<([usize;5],[usize;3])> = vec![
        ([6,1,3,3,3],[2,4,4]),
        ([12,6,3,3,3],[2,2,2]),
        ([24,12,3,3,3],[1,2,2]),
        ([48,24,3,3,3],[1,1,1]),
    ];
    let x0 = Tensor::randn(&[b,1,16,48,48], 1.0, &mut rng);
    let t0 = Instant::now();
    let reps = 10;
    for _ in 0..reps {
        let mut g = Graph::new();
        let mut x = g.leaf(x0.clone());
        for (ws, st) in &stages {
            let w = g.leaf(Tensor::randn(ws, 0.3, &mut rng));
            x = g.conv3d(&Seq, x, w, *st, [1,1,1]);
            x = g.relu(x);
        }
        let v = g.gap(x);
        let s = g.sq_sum(v);
        g.backward(s, &Seq);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("fwd+bwd for batch {b}: {:.1} ms/batch ({:.2} ms/sample-stream)", dt/reps as f64*1e3, dt/reps as f64/b as f64*1e3);
}
