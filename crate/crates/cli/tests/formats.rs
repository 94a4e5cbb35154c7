//! Format-level integration: frames-directory ingestion and dataset round
//! trips through the public interfaces.

use std::path::PathBuf;

use vcl_cli::dataset::{open_dataset, write_manifest, ManifestEntry};
use vcl_cli::imageio;

fn tmp(tag: &str) -> PathBuf {
    let p = std::env::temp_dir().join(format!("vcl-fmt-{}-{tag}", std::process::id()));
    std::fs::remove_dir_all(&p).ok();
    std::fs::create_dir_all(&p).unwrap();
    p
}

#[test]
fn frame_folder_ingestion_reads_clips_and_labels() {
    let root = tmp("frames");
    // two clips of 3 frames each: one PGM, one PNG
    for (ci, ext) in [(0usize, "pgm"), (1usize, "png")] {
        let dir = root.join(format!("clip{ci}"));
        std::fs::create_dir_all(&dir).unwrap();
        for t in 0..3 {
            let px: Vec<u8> = (0..6 * 5).map(|i| (i as usize * 7 + t * 40 + ci) as u8).collect();
            let path = dir.join(format!("frame_{t:03}.{ext}"));
            match ext {
                "pgm" => imageio::write_pgm(&path, 6, 5, &px).unwrap(),
                _ => imageio::write_png_gray(&path, 6, 5, &px).unwrap(),
            }
        }
    }
    write_manifest(
        &root.join("manifest.tsv"),
        &[
            ManifestEntry { id: 0, static_label: 2, dynamic_label: 1, path: "clip0".into() },
            ManifestEntry { id: 1, static_label: 0, dynamic_label: 3, path: "clip1".into() },
        ],
    )
    .unwrap();

    let ds = open_dataset(&root).unwrap();
    assert_eq!(ds.len(), 2);
    let c0 = ds.clip(0).unwrap();
    assert_eq!((c0.t, c0.h, c0.w, c0.ch), (3, 6, 5, 1));
    // frame ordering is lexicographic: frame t=1 differs from t=0 by +40/255
    let d = c0.at(1, 0, 0, 0) - c0.at(0, 0, 0, 0);
    assert!((d - 40.0 / 255.0).abs() < 1e-6);
    assert_eq!(ds.labels(0), Some((2, 1)));
    assert_eq!(ds.labels(1), Some((0, 3)));
    std::fs::remove_dir_all(&root).ok();
}

#[test]
fn frame_folder_with_single_frame_is_rejected() {
    let root = tmp("oneframe");
    let dir = root.join("clip0");
    std::fs::create_dir_all(&dir).unwrap();
    imageio::write_pgm(&dir.join("f0.pgm"), 4, 4, &[0u8; 16]).unwrap();
    let ds = open_dataset(&root).unwrap();
    assert!(ds.clip(0).is_err());
    std::fs::remove_dir_all(&root).ok();
}
