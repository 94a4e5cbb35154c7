//! Scaled-down end-to-end: train on synthetic data, probe the code slices.
use std::time::Instant;
use vcl_core::concepts::AlignmentConfig;
use vcl_core::encoder::{EncoderConfig, EncoderVariant, SigmaConfig};
use vcl_core::eval::{extract_features, linear_probe, FeatureSource, ProbeConfig};
use vcl_core::exec::Seq;
use vcl_core::localcontrast::LocalContrastConfig;
use vcl_core::model::{ConceptModel, ModelConfig};
use vcl_core::tensor::Tensor;
use vcl_core::trainer::*;
use vcl_core::video::SynthConfig;

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(12);
    let model_cfg = ModelConfig {
        encoder: EncoderConfig {
            variant: EncoderVariant::Tiny3dConv,
            in_channels: 1,
            widths: vec![6, 12, 24, 48],
            strides: vec![[2, 4, 4], [2, 2, 2], [1, 2, 2], [1, 1, 1]],
            kernels: vec![[3, 3, 3], [3, 3, 3], [3, 3, 3], [1, 3, 3]],
            shared_backbone: true,
            sigma: SigmaConfig::Identity,
            final_norm: true,
        },
        k_s: std::env::var("VCL_K").ok().and_then(|s| s.parse().ok()).unwrap_or(12),
        k_d: std::env::var("VCL_K").ok().and_then(|s| s.parse().ok()).unwrap_or(12),
        align: AlignmentConfig::default(),
        head_hidden: None,
        local: LocalContrastConfig { k_top: std::env::var("VCL_KTOP").ok().and_then(|s| s.parse().ok()).unwrap_or(2), margin: 1.0 },
        attn_dim: None,
    };
    let mut model = ConceptModel::new(model_cfg, 1).unwrap();
    println!("params: {}", model.store.total_values());
    let source = SynthSource {
        cfg: SynthConfig { n_static: 4, n_dynamic: 4, t: 16, h: 64, w: 64, ch: 1 },
        seed: 42,
        n,
    };
    let weights = LossWeights { warmup_epochs: 5, ..Default::default() };
    let bs: usize = std::env::var("VCL_BS").ok().and_then(|s| s.parse().ok()).unwrap_or(32);
    let lr: f64 = std::env::var("VCL_LR").ok().and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let optim = OptimConfig { epochs, batch_size: bs, lr, seed: 7, ..Default::default() };
    let aug = AugmentConfig { crop: Some([16, 48, 48]), flip: true };
    if std::env::var("VCL_PINIT").as_deref() == Ok("data") {
        model.init_prototypes_from_data(&Seq, &source, 99).unwrap();
        println!("prototypes seeded from data");
    }
    let mut opt = Sgd::new(&model);
    let mut sink = MemorySink::default();
    let t0 = Instant::now();
    train(&mut model, &mut opt, &source, &weights, &optim, &aug, &Seq, &mut sink).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    for e in sink.epochs.iter().step_by(2.max(epochs / 12)) {
        println!(
            "epoch {:2}  total {:.4}  aln {:.4} loc {:.4} fid {:.4} div {:.4}",
            e.epoch, e.mean.total, e.mean.l_aln, e.mean.l_loc, e.mean.l_fid, e.mean.l_div
        );
    }
    let last = sink.epochs.last().unwrap();
    println!(
        "final epoch {}  total {:.4}  aln {:.4}",
        last.epoch, last.mean.total, last.mean.l_aln
    );
    println!("train wall: {dt:.1}s  ({:.1} ms/sample-pass)", dt * 1e3 / (n * epochs) as f64);

    let t1 = Instant::now();
    let crop = Some([16usize, 48, 48]);
    let pc = ProbeConfig::default();
    let n_eval = n.min(1000);
    let eval_src = SynthSource { cfg: source.cfg.clone(), seed: source.seed, n: n_eval };
    for (src, name) in [
        (FeatureSource::QvStatic, "q_v^s"),
        (FeatureSource::QvDynamic, "q_v^d"),
        (FeatureSource::V, "v"),
        (FeatureSource::Qv, "q_v"),
        (FeatureSource::Fv, "f_v"),
    ] {
        let (feats, labels) = extract_features(&model, &Seq, &eval_src, src, crop, 0.1).unwrap();
        let st: Vec<usize> = labels.iter().map(|&(s, _)| s).collect();
        let dy: Vec<usize> = labels.iter().map(|&(_, d)| d).collect();
        let joint: Vec<usize> = labels.iter().map(|&(s, d)| s * 4 + d).collect();
        let a_s = linear_probe(&feats, &st, &pc).unwrap().accuracy;
        let a_d = linear_probe(&feats, &dy, &pc).unwrap().accuracy;
        let a_j = linear_probe(&feats, &joint, &pc).unwrap().accuracy;
        println!("{name:6} -> static {a_s:.3}  dynamic {a_d:.3}  joint {a_j:.3}");
    }

    // direct stream codes: does q_s carry static, does q_d carry motion?
    let mut qs_mat = Tensor::zeros(&[n_eval, 12]);
    let mut qd_mat = Tensor::zeros(&[n_eval, 12]);
    let mut st = Vec::new();
    let mut dy = Vec::new();
    for i in 0..n_eval {
        let clip = eval_src.clip(i).unwrap();
        let codes = model.infer_stream_codes(&Seq, &clip, 5).unwrap();
        qs_mat.data_mut()[i * 12..(i + 1) * 12].copy_from_slice(&codes[0]);
        qd_mat.data_mut()[i * 12..(i + 1) * 12].copy_from_slice(&codes[1]);
        let (s, d) = eval_src.labels(i).unwrap();
        st.push(s);
        dy.push(d);
    }
    let qs_s = linear_probe(&qs_mat, &st, &pc).unwrap().accuracy;
    let qd_d = linear_probe(&qd_mat, &dy, &pc).unwrap().accuracy;
    println!("q_s -> static {qs_s:.3}   q_d -> dynamic {qd_d:.3}");

    let (qv, _) = extract_features(&model, &Seq, &eval_src, FeatureSource::Qv, crop, 0.1).unwrap();
    let (n_r, k_c) = (qv.shape()[0], qv.shape()[1]);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut ssum = 0.0;
    for j in 0..k_c {
        let col: Vec<f64> = (0..n_r).map(|i| qv.data()[i * k_c + j]).collect();
        let m = col.iter().sum::<f64>() / n_r as f64;
        let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n_r as f64).sqrt();
        ssum += sd;
        for &v in &col {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    println!("q_v stats: range [{lo:.3}, {hi:.3}], mean col std {:.4}", ssum / k_c as f64);
    println!("eval wall: {:.1}s", t1.elapsed().as_secs_f64());
}
