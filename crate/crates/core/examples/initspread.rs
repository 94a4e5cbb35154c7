//! Code spread at init: is there any between-sample signal for alignment?
use vcl_core::exec::Seq;
use vcl_core::model::{ConceptModel, ModelConfig};
use vcl_core::concepts::AlignmentConfig;
use vcl_core::encoder::{EncoderConfig, EncoderVariant, SigmaConfig};
use vcl_core::localcontrast::LocalContrastConfig;
use vcl_core::trainer::{ClipSource, SynthSource};
use vcl_core::video::SynthConfig;

fn main() {
    let cfg = ModelConfig {
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
        k_s: 12, k_d: 12,
        align: AlignmentConfig::default(),
        head_hidden: None,
        local: LocalContrastConfig { k_top: 2, margin: 1.0 },
        attn_dim: None,
    };
    let model = ConceptModel::new(cfg, 1).unwrap();
    let data = SynthSource {
        cfg: SynthConfig { n_static: 4, n_dynamic: 4, t: 16, h: 64, w: 64, ch: 1 },
        seed: 42, n: 64,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut vnorms = Vec::new();
    for i in 0..data.n {
        let clip = data.clip(i).unwrap();
        let f = model.infer_clip(&Seq, &clip).unwrap();
        vnorms.push(vcl_core::tensor::norm(&f.v));
        rows.push(f.q_v);
    }
    let k = rows[0].len();
    let mut spread = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for j in 0..k {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let m: f64 = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64).sqrt();
        spread += sd;
        for &v in &col { lo = lo.min(v); hi = hi.max(v); }
    }
    println!("init q_v: range [{lo:.4}, {hi:.4}], mean col std {:.5}", spread / k as f64);
    let vm: f64 = vnorms.iter().sum::<f64>() / vnorms.len() as f64;
    let vs = (vnorms.iter().map(|v| (v - vm) * (v - vm)).sum::<f64>() / vnorms.len() as f64).sqrt();
    println!("v-feature norms: mean {vm:.4} std {vs:.4}");
}
