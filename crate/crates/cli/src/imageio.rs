//! Image reading/writing for frame ingestion and attention overlays.
//!
//! PNG via the `png` crate; PGM/PPM parsed directly (binary variants).

use std::io::{BufRead, Write};
use std::path::Path;

pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major, interleaved channels, 8-bit.
    pub pixels: Vec<u8>,
}

pub fn read_image(path: &Path) -> std::io::Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => read_png(path),
        Some("pgm") | Some("ppm") => read_pnm(path),
        other => Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unsupported image extension {other:?}"),
        )),
    }
}

fn read_png(path: &Path) -> std::io::Result<Image> {
    let decoder = png::Decoder::new(std::fs::File::open(path)?);
    let mut reader = decoder
        .read_info()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "only 8-bit PNG supported"));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("unsupported PNG color type {other:?}"),
            ))
        }
    };
    buf.truncate(info.buffer_size());
    // drop alpha if present
    let (channels, pixels) = if channels == 4 {
        let mut rgb = Vec::with_capacity(buf.len() / 4 * 3);
        for px in buf.chunks_exact(4) {
            rgb.extend_from_slice(&px[..3]);
        }
        (3, rgb)
    } else {
        (channels, buf)
    };
    Ok(Image { height: info.height as usize, width: info.width as usize, channels, pixels })
}

fn read_pnm(path: &Path) -> std::io::Result<Image> {
    let bytes = std::fs::read(path)?;
    let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    let mut pos = 0usize;
    let mut token = || -> std::io::Result<String> {
        // skip whitespace and comments
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated pnm header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(bad("only binary P5/P6 pnm supported")),
    };
    let width: usize = token()?.parse().map_err(|_| bad("bad width"))?;
    let height: usize = token()?.parse().map_err(|_| bad("bad height"))?;
    let maxval: usize = token()?.parse().map_err(|_| bad("bad maxval"))?;
    if maxval != 255 {
        return Err(bad("only maxval 255 supported"));
    }
    pos += 1; // single whitespace after maxval
    let need = width * height * channels;
    if bytes.len() < pos + need {
        return Err(bad("truncated pnm payload"));
    }
    Ok(Image { height, width, channels, pixels: bytes[pos..pos + need].to_vec() })
}

pub fn write_png_gray(path: &Path, height: usize, width: usize, pixels: &[u8]) -> std::io::Result<()> {
    debug_assert_eq!(pixels.len(), height * width);
    let file = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))?;
    writer
        .write_image_data(pixels)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
}

pub fn write_png_rgb(path: &Path, height: usize, width: usize, pixels: &[u8]) -> std::io::Result<()> {
    debug_assert_eq!(pixels.len(), height * width * 3);
    let file = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))?;
    writer
        .write_image_data(pixels)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))
}

pub fn write_pgm(path: &Path, height: usize, width: usize, pixels: &[u8]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(pixels)
}

/// Blend a [0,1] heat map over a grayscale frame into an RGB image: heat in
/// red, frame luminance preserved underneath.
pub fn heat_overlay_rgb(frame: &[f64], heat: &[f64], height: usize, width: usize) -> Vec<u8> {
    debug_assert_eq!(frame.len(), height * width);
    debug_assert_eq!(heat.len(), height * width);
    let mut out = Vec::with_capacity(height * width * 3);
    for i in 0..height * width {
        let f = frame[i].clamp(0.0, 1.0);
        let h = heat[i].clamp(0.0, 1.0);
        let base = f * 0.6;
        let r = ((base + 0.4 * h + 0.35 * h * f) * 255.0).clamp(0.0, 255.0) as u8;
        let g = ((base + 0.08 * h) * 255.0).clamp(0.0, 255.0) as u8;
        let b = ((base * (1.0 - 0.5 * h)) * 255.0).clamp(0.0, 255.0) as u8;
        out.extend_from_slice(&[r, g, b]);
    }
    out
}

/// Keep clippy quiet about unused BufRead when the png feature set changes.
#[allow(dead_code)]
fn _buf_read_marker<T: BufRead>(_t: T) {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = std::env::temp_dir().join(format!("vclimg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.pgm");
        let px: Vec<u8> = (0..20).map(|i| (i * 12) as u8).collect();
        write_pgm(&path, 4, 5, &px).unwrap();
        let img = read_image(&path).unwrap();
        assert_eq!((img.height, img.width, img.channels), (4, 5, 1));
        assert_eq!(img.pixels, px);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn png_round_trip() {
        let dir = std::env::temp_dir().join(format!("vclpng-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.png");
        let px: Vec<u8> = (0..24).map(|i| (i * 10) as u8).collect();
        write_png_gray(&path, 6, 4, &px).unwrap();
        let img = read_image(&path).unwrap();
        assert_eq!((img.height, img.width, img.channels), (6, 4, 1));
        assert_eq!(img.pixels, px);
        std::fs::remove_dir_all(&dir).ok();
    }
}
