//! Clips, triplet construction and the synthetic labeled corpus.
//!
//! A triplet is the model input: the clip itself, one frame of it repeated
//! along time, and the adjacent-frame difference. All augmentation is a
//! consistent spatio-temporal crop plus an optional horizontal flip applied
//! identically to the three members, so the static and dynamic streams stay
//! pixel-aligned with the clip.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// A video clip: `[T, H, W, Ch]`, values in [0, 1]. `fps` is metadata only.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub pixels: Vec<f32>,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub ch: usize,
    pub fps: f32,
}

impl VideoClip {
    pub fn new(t: usize, h: usize, w: usize, ch: usize) -> Self {
        VideoClip { pixels: vec![0.0; t * h * w * ch], t, h, w, ch, fps: 25.0 }
    }

    pub fn from_pixels(t: usize, h: usize, w: usize, ch: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != t * h * w * ch {
            return Err(Error::InvalidInput(format!(
                "clip buffer has {} values, shape [{t},{h},{w},{ch}] needs {}",
                pixels.len(),
                t * h * w * ch
            )));
        }
        Ok(VideoClip { pixels, t, h, w, ch, fps: 25.0 })
    }

    #[inline]
    pub fn at(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[((t * self.h + y) * self.w + x) * self.ch + c]
    }

    #[inline]
    pub fn at_mut(&mut self, t: usize, y: usize, x: usize, c: usize) -> &mut f32 {
        &mut self.pixels[((t * self.h + y) * self.w + x) * self.ch + c]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let fl = self.h * self.w * self.ch;
        &self.pixels[t * fl..(t + 1) * fl]
    }

    pub fn same_shape(&self, other: &VideoClip) -> bool {
        self.t == other.t && self.h == other.h && self.w == other.w && self.ch == other.ch
    }
}

/// Adjacent-frame difference: `[T, H, W, Ch]`, values in [-1, 1]. Signed so
/// the direction of motion is preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffClip {
    pub pixels: Vec<f32>,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub ch: usize,
}

/// The (v, s, d) input triple fed to the shared backbone.
#[derive(Debug, Clone)]
pub struct TripletInput {
    pub v: VideoClip,
    pub s: VideoClip,
    pub d: DiffClip,
}

/// One rendered synthetic sample. The background pattern is a function of
/// `static_label` only; the sprite trajectory is a function of
/// `dynamic_label` only; the two labels are drawn independently.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub clip: VideoClip,
    pub static_label: usize,
    pub dynamic_label: usize,
}

/// Repeat one uniformly chosen frame along the temporal axis.
pub fn make_static_frame(clip: &VideoClip, rng_seed: u64) -> Result<VideoClip> {
    if clip.t == 0 || clip.pixels.is_empty() {
        return Err(Error::InvalidInput("empty clip".into()));
    }
    let mut rng = Rng::new(rng_seed);
    let pick = rng.below(clip.t);
    let frame = clip.frame(pick).to_vec();
    let mut out = clip.clone();
    let fl = frame.len();
    for t in 0..clip.t {
        out.pixels[t * fl..(t + 1) * fl].copy_from_slice(&frame);
    }
    Ok(out)
}

/// d[t] = clip[t+1] - clip[t]; the last difference is duplicated so the
/// output keeps the clip's temporal length and one backbone serves all
/// three streams.
pub fn make_frame_difference(clip: &VideoClip) -> Result<DiffClip> {
    if clip.t < 2 {
        return Err(Error::InvalidInput(format!(
            "frame difference needs T >= 2, got {}",
            clip.t
        )));
    }
    let fl = clip.h * clip.w * clip.ch;
    let mut pixels = vec![0.0f32; clip.t * fl];
    for t in 0..clip.t - 1 {
        let a = clip.frame(t);
        let b = clip.frame(t + 1);
        for i in 0..fl {
            pixels[t * fl + i] = b[i] - a[i];
        }
    }
    let (head, tail) = pixels.split_at_mut((clip.t - 1) * fl);
    tail.copy_from_slice(&head[(clip.t - 2) * fl..]);
    Ok(DiffClip { pixels, t: clip.t, h: clip.h, w: clip.w, ch: clip.ch })
}

/// Augmentation window: a consistent spatio-temporal crop plus horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSpec {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub flip: bool,
}

impl CropSpec {
    /// Identity crop of the given clip (no flip).
    pub fn full(clip: &VideoClip) -> Self {
        CropSpec { t: clip.t, h: clip.h, w: clip.w, flip: false }
    }
}

fn crop_clip(clip: &VideoClip, t0: usize, y0: usize, x0: usize, spec: &CropSpec) -> VideoClip {
    let mut out = VideoClip::new(spec.t, spec.h, spec.w, clip.ch);
    out.fps = clip.fps;
    for t in 0..spec.t {
        for y in 0..spec.h {
            for x in 0..spec.w {
                let sx = if spec.flip { x0 + spec.w - 1 - x } else { x0 + x };
                for c in 0..clip.ch {
                    *out.at_mut(t, y, x, c) = clip.at(t0 + t, y0 + y, sx, c);
                }
            }
        }
    }
    out
}

/// Build the (v, s, d) triplet: crop+flip the clip, then derive the static
/// frame and the frame difference from the same cropped window. The static
/// frame index is sampled from within the cropped window.
pub fn make_triplet(clip: &VideoClip, crop: &CropSpec, rng_seed: u64) -> Result<TripletInput> {
    if clip.t < 2 {
        return Err(Error::InvalidInput("triplet needs T >= 2".into()));
    }
    if crop.t < 2 || crop.t > clip.t || crop.h > clip.h || crop.w > clip.w {
        return Err(Error::InvalidInput(format!(
            "crop [{},{},{}] incompatible with clip [{},{},{}]",
            crop.t, crop.h, crop.w, clip.t, clip.h, clip.w
        )));
    }
    let mut rng = Rng::derive(rng_seed, 0x7472_6970); // crop offsets + flip
    let t0 = if crop.t < clip.t { rng.below(clip.t - crop.t + 1) } else { 0 };
    let y0 = if crop.h < clip.h { rng.below(clip.h - crop.h + 1) } else { 0 };
    let x0 = if crop.w < clip.w { rng.below(clip.w - crop.w + 1) } else { 0 };
    let v = crop_clip(clip, t0, y0, x0, crop);
    let s = make_static_frame(&v, Rng::derive(rng_seed, 0x6672_616d).next_u64())?;
    let d = make_frame_difference(&v)?;
    Ok(TripletInput { v, s, d })
}

// ------------------------------------------------------------- synthetic --

/// Geometry of the synthetic corpus. Shapes too small for the sprite and its
/// trajectory are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_static: usize,
    pub n_dynamic: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub ch: usize,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_static < 2 || self.n_dynamic < 2 {
            return Err(Error::InvalidInput("class counts must be >= 2".into()));
        }
        if self.t < 2 {
            return Err(Error::InvalidInput("synthetic clips need T >= 2".into()));
        }
        let tempos = self.n_dynamic.div_ceil(2);
        if self.t < 4 * tempos {
            return Err(Error::InvalidInput(format!(
                "T = {} cannot resolve {tempos} oscillation tempos (need T >= {})",
                self.t,
                4 * tempos
            )));
        }
        if self.ch == 0 || self.ch > 3 {
            return Err(Error::InvalidInput("channels must be 1..=3".into()));
        }
        let (radius, amp) = sprite_geometry(self.h, self.w);
        let margin = amp + radius + 1;
        if self.h <= 2 * margin || self.w <= 2 * margin {
            return Err(Error::InvalidInput(format!(
                "shape {}x{} too small for sprite of radius {radius} and amplitude {amp}",
                self.h, self.w
            )));
        }
        Ok(())
    }
}

/// Sprite radius ~15% of the spatial extent (as diameter), trajectory
/// amplitude ~10% (small enough to leave the start position real entropy,
/// large enough for several pixels of motion per frame).
fn sprite_geometry(h: usize, w: usize) -> (usize, usize) {
    let extent = h.min(w);
    let radius = (extent * 15 / 200).max(2);
    let amp = (extent / 10).max(2);
    (radius, amp)
}

/// Background value in [0.32, 0.68]: four sinusoid orientations, inverted
/// for label >= 4 so up to 8 static classes stay distinguishable. Kept at
/// moderate contrast so the moving sprite, not the scene, dominates the
/// difference stream's dynamic range.
fn background(static_label: usize, y: usize, x: usize, h: usize, w: usize) -> f32 {
    let fx = x as f64 / w as f64;
    let fy = y as f64 / h as f64;
    let tau = 2.0 * core::f64::consts::PI;
    let phase = match static_label % 4 {
        0 => fx,
        1 => fy,
        2 => 0.5 * (fx + fy),
        _ => 0.5 * (fx - fy + 1.0),
    };
    let mut v = 0.5 + 0.18 * libm::sin(tau * phase);
    if (static_label / 4) % 2 == 1 {
        v = 1.0 - v;
    }
    v as f32
}

/// Sprite center offset and radius scale at frame t, relative to the start
/// position. All trajectories start at offset zero so the first frame
/// depends only on the start position, never on the dynamic label.
/// Sprite offset at frame t. Dynamic classes factor into an axis bit
/// (horizontal / vertical oscillation) and a tempo (1, 2, ... cycles per
/// clip): label = axis + 2 * (tempo - 1). The axis is visible in the clip's
/// spatio-temporal texture, the tempo dominates the frame-difference
/// magnitude, and every class shares the same dwell-time distribution along
/// its sweep, which keeps time-averaged frames nearly class-blind. The sweep
/// direction sign is a nuisance draw.
fn trajectory(dynamic_label: usize, t: usize, period: usize, amp: f64, dir: f64) -> (f64, f64) {
    let tau = 2.0 * core::f64::consts::PI;
    let cycles = (1 + dynamic_label / 2) as f64;
    let s = dir * amp * libm::sin(tau * cycles * t as f64 / period as f64);
    if dynamic_label % 2 == 0 {
        (s, 0.0)
    } else {
        (0.0, s)
    }
}

/// Render one sample. Pure in (config, seed, index): the corpus never needs
/// to be materialized to be consumed.
pub fn synth_sample(cfg: &SynthConfig, seed: u64, index: usize) -> Result<SynthSample> {
    cfg.validate()?;
    let mut label_rng = Rng::derive(seed, 0xabe1_0000 ^ index as u64);
    let static_label = label_rng.below(cfg.n_static);
    let dynamic_label = label_rng.below(cfg.n_dynamic);
    render_synth_sample(cfg, seed, index, static_label, dynamic_label)
}

/// Render with the labels pinned. Nuisance parameters (start position,
/// direction) come from a stream independent of the labels, so two samples
/// with the same seed and index share the sprite start position.
pub fn render_synth_sample(
    cfg: &SynthConfig,
    seed: u64,
    index: usize,
    static_label: usize,
    dynamic_label: usize,
) -> Result<SynthSample> {
    cfg.validate()?;
    if static_label >= cfg.n_static || dynamic_label >= cfg.n_dynamic {
        return Err(Error::InvalidInput("label out of range".into()));
    }
    let (radius, amp) = sprite_geometry(cfg.h, cfg.w);
    let margin = amp + radius + 1;
    let mut rng = Rng::derive(seed, 0x5e_ed00 ^ index as u64);
    let cy = margin as f64 + rng.uniform() * (cfg.h - 2 * margin) as f64;
    let cx = margin as f64 + rng.uniform() * (cfg.w - 2 * margin) as f64;
    // sweep direction is a nuisance draw, independent of both labels
    let dir = if rng.flip() { 1.0 } else { -1.0 };

    let mut clip = VideoClip::new(cfg.t, cfg.h, cfg.w, cfg.ch);
    for t in 0..cfg.t {
        let (dx, dy) = trajectory(dynamic_label, t, cfg.t, amp as f64, dir);
        let (sx, sy, sr) = (cx + dx, cy + dy, radius as f64);
        for y in 0..cfg.h {
            for x in 0..cfg.w {
                let bg = background(static_label, y, x, cfg.h, cfg.w);
                let dyy = y as f64 - sy;
                let dxx = x as f64 - sx;
                let inside = dxx * dxx + dyy * dyy <= sr * sr;
                for c in 0..cfg.ch {
                    let v = if inside {
                        if c == 0 {
                            1.0
                        } else {
                            0.9
                        }
                    } else {
                        bg
                    };
                    *clip.at_mut(t, y, x, c) = v;
                }
            }
        }
    }
    Ok(SynthSample { clip, static_label, dynamic_label })
}

/// Materialize a corpus. Labels are independent uniform draws, so the joint
/// distribution over (static, dynamic) cells is near-uniform.
pub fn generate_synth_dataset(
    n_samples: usize,
    cfg: &SynthConfig,
    rng_seed: u64,
) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    (0..n_samples).map(|i| synth_sample(cfg, rng_seed, i)).collect()
}
