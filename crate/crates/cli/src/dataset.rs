//! Dataset persistence and ingestion.
//!
//! A persisted dataset is a directory of per-sample numeric array files plus
//! a tab-separated manifest mapping sample id to labels and file path. Real
//! videos are ingested as directories of per-clip frame-image folders (PNG
//! or PGM/PPM frames); decoding compressed containers is delegated to
//! external tools.

use std::path::{Path, PathBuf};

use vcl_core::error::{Error, Result};
use vcl_core::trainer::ClipSource;
use vcl_core::video::VideoClip;

use crate::npy::{self, NpyArray};

pub struct ManifestEntry {
    pub id: usize,
    pub static_label: usize,
    pub dynamic_label: usize,
    pub path: String,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# id\tstatic_label\tdynamic_label\tpath")?;
    for e in entries {
        writeln!(f, "{}\t{}\t{}\t{}", e.id, e.static_label, e.dynamic_label, e.path)?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> std::io::Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("manifest line {} has {} fields, expected 4", ln + 1, parts.len()),
            ));
        }
        let parse = |s: &str, what: &str| -> std::io::Result<usize> {
            s.parse().map_err(|_| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("manifest line {}: bad {what} '{s}'", ln + 1),
                )
            })
        };
        out.push(ManifestEntry {
            id: parse(parts[0], "id")?,
            static_label: parse(parts[1], "static_label")?,
            dynamic_label: parse(parts[2], "dynamic_label")?,
            path: parts[3].to_string(),
        });
    }
    Ok(out)
}

/// Dataset of per-sample npy clips referenced by a manifest.
pub struct NpyDataset {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl NpyDataset {
    pub fn open(root: &Path) -> std::io::Result<Self> {
        let entries = read_manifest(&root.join("manifest.tsv"))?;
        Ok(NpyDataset { root: root.to_path_buf(), entries })
    }
}

impl ClipSource for NpyDataset {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn clip(&self, index: usize) -> Result<VideoClip> {
        let e = &self.entries[index];
        let arr = npy::load(&self.root.join(&e.path))
            .map_err(|err| Error::InvalidInput(format!("{}: {err}", e.path)))?;
        clip_from_array(&arr)
    }

    fn labels(&self, index: usize) -> Option<(usize, usize)> {
        let e = &self.entries[index];
        Some((e.static_label, e.dynamic_label))
    }
}

fn clip_from_array(arr: &NpyArray) -> Result<VideoClip> {
    if arr.shape.len() != 4 {
        return Err(Error::InvalidInput(format!(
            "clip array must be [T,H,W,Ch], got {:?}",
            arr.shape
        )));
    }
    VideoClip::from_pixels(arr.shape[0], arr.shape[1], arr.shape[2], arr.shape[3], arr.as_f32())
}

/// Quantize a clip to u8 for persistence (documented scale 1/255).
pub fn clip_to_array(clip: &VideoClip) -> NpyArray {
    let data: Vec<u8> =
        clip.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    NpyArray::from_u8(vec![clip.t, clip.h, clip.w, clip.ch], data)
}

/// Dataset ingested from per-clip folders of frame images. Frames are read
/// in lexicographic order. Labels come from an optional manifest.tsv (path
/// column = folder name); without it, clips are unlabeled.
pub struct FramesDataset {
    clips: Vec<PathBuf>,
    labels: Vec<Option<(usize, usize)>>,
}

impl FramesDataset {
    pub fn open(root: &Path) -> std::io::Result<Self> {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        if dirs.is_empty() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}: no per-clip frame folders found", root.display()),
            ));
        }
        let mut labels = vec![None; dirs.len()];
        let manifest = root.join("manifest.tsv");
        if manifest.exists() {
            let entries = read_manifest(&manifest)?;
            for e in entries {
                if let Some(pos) =
                    dirs.iter().position(|d| d.file_name().and_then(|n| n.to_str()) == Some(&e.path))
                {
                    labels[pos] = Some((e.static_label, e.dynamic_label));
                }
            }
        }
        Ok(FramesDataset { clips: dirs, labels })
    }
}

impl ClipSource for FramesDataset {
    fn len(&self) -> usize {
        self.clips.len()
    }

    fn clip(&self, index: usize) -> Result<VideoClip> {
        let dir = &self.clips[index];
        let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("png") | Some("pgm") | Some("ppm")
                )
            })
            .collect();
        frames.sort();
        if frames.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "{}: a clip needs at least 2 frames",
                dir.display()
            )));
        }
        let first = crate::imageio::read_image(&frames[0])
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", frames[0].display())))?;
        let (h, w, ch) = (first.height, first.width, first.channels);
        let mut clip = VideoClip::new(frames.len(), h, w, ch);
        for (t, f) in frames.iter().enumerate() {
            let img = crate::imageio::read_image(f)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", f.display())))?;
            if img.height != h || img.width != w || img.channels != ch {
                return Err(Error::InvalidInput(format!(
                    "{}: frame size differs within the clip",
                    f.display()
                )));
            }
            let fl = h * w * ch;
            for (dst, &src) in
                clip.pixels[t * fl..(t + 1) * fl].iter_mut().zip(img.pixels.iter())
            {
                *dst = src as f32 / 255.0;
            }
        }
        Ok(clip)
    }

    fn labels(&self, index: usize) -> Option<(usize, usize)> {
        self.labels[index]
    }
}

/// Open whatever kind of dataset lives at `path`: a manifest+npy dataset or
/// a directory of frame folders.
pub fn open_dataset(path: &Path) -> std::io::Result<Box<dyn ClipSource>> {
    if path.join("manifest.tsv").exists() && {
        let entries = read_manifest(&path.join("manifest.tsv"))?;
        entries.first().map(|e| e.path.ends_with(".npy")).unwrap_or(false)
    } {
        Ok(Box::new(NpyDataset::open(path)?))
    } else {
        Ok(Box::new(FramesDataset::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let dir = std::env::temp_dir().join(format!("vclman-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("manifest.tsv");
        let entries = vec![
            ManifestEntry { id: 0, static_label: 1, dynamic_label: 2, path: "clips/a.npy".into() },
            ManifestEntry { id: 1, static_label: 3, dynamic_label: 0, path: "clips/b.npy".into() },
        ];
        write_manifest(&path, &entries).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].static_label, 3);
        assert_eq!(back[0].path, "clips/a.npy");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn clip_array_round_trip_preserves_quantized_pixels() {
        let mut clip = VideoClip::new(2, 3, 3, 1);
        for (i, p) in clip.pixels.iter_mut().enumerate() {
            *p = (i as f32) / 17.0 % 1.0;
        }
        let arr = clip_to_array(&clip);
        let back = clip_from_array(&arr).unwrap();
        assert!(back.same_shape(&clip));
        for (a, b) in clip.pixels.iter().zip(&back.pixels) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
