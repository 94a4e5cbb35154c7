//! Pixel-space mean-frame baseline check.
use vcl_core::eval::{linear_probe, pooled_mean_frame, ProbeConfig};
use vcl_core::tensor::Tensor;
use vcl_core::trainer::{ClipSource, SynthSource};
use vcl_core::video::SynthConfig;

fn main() {
    let data = SynthSource {
        cfg: SynthConfig { n_static: 4, n_dynamic: 4, t: 16, h: 64, w: 64, ch: 1 },
        seed: 1,
        n: 600,
    };
    let side = 8;
    let mut px = Tensor::zeros(&[data.n, side * side]);
    let (mut st, mut dy) = (Vec::new(), Vec::new());
    for i in 0..data.n {
        let clip = data.clip(i).unwrap();
        let row = pooled_mean_frame(&clip, side);
        px.data_mut()[i * side * side..(i + 1) * side * side].copy_from_slice(&row);
        let (s, d) = data.labels(i).unwrap();
        st.push(s);
        dy.push(d);
    }
    let pc = ProbeConfig::default();
    let a_s = linear_probe(&px, &st, &pc).unwrap().accuracy;
    let out = linear_probe(&px, &dy, &pc).unwrap();
    let a_d = out.accuracy;
    let mut conf = [[0usize; 4]; 4];
    for (ti, &idx) in out.test_indices.iter().enumerate() {
        conf[dy[idx]][out.predictions[ti]] += 1;
    }
    println!("pixel mean-frame probe: static {a_s:.3} dynamic {a_d:.3}");
    for (r, row) in conf.iter().enumerate() {
        println!("true {r}: {row:?}");
    }
}
