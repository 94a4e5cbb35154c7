//! Minimal NPY v1.0 reader/writer for u8, f32 and f64 arrays.
//!
//! Covers exactly what the dataset and export paths need: C-order arrays
//! with a fixed dtype, little endian. Readable by any numpy-compatible tool.

use std::io::{self, Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    U8,
    F32,
    F64,
}

impl Dtype {
    fn descr(&self) -> &'static str {
        match self {
            Dtype::U8 => "|u1",
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    fn size(&self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NpyArray {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Raw little-endian buffer, len = product(shape) * dtype.size().
    pub data: Vec<u8>,
}

impl NpyArray {
    pub fn from_u8(shape: Vec<usize>, data: Vec<u8>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        NpyArray { dtype: Dtype::U8, shape, data }
    }

    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        let mut data = Vec::with_capacity(values.len() * 4);
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        NpyArray { dtype: Dtype::F32, shape, data }
    }

    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        let mut data = Vec::with_capacity(values.len() * 8);
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        NpyArray { dtype: Dtype::F64, shape, data }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f64(&self) -> Vec<f64> {
        match self.dtype {
            Dtype::U8 => self.data.iter().map(|&b| b as f64 / 255.0).collect(),
            Dtype::F32 => self
                .data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            Dtype::F64 => self
                .data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        }
    }

    pub fn as_f32(&self) -> Vec<f32> {
        match self.dtype {
            Dtype::U8 => self.data.iter().map(|&b| b as f32 / 255.0).collect(),
            Dtype::F32 => self
                .data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            Dtype::F64 => self
                .data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
                .collect(),
        }
    }
}

pub fn write<W: Write>(w: &mut W, arr: &NpyArray) -> io::Result<()> {
    let shape_str = match arr.shape.len() {
        1 => format!("({},)", arr.shape[0]),
        _ => format!(
            "({})",
            arr.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        arr.dtype.descr(),
        shape_str
    );
    // pad so magic(6)+version(2)+len(2)+header is a multiple of 64
    let unpadded = 10 + header.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    header.push_str(&" ".repeat(pad));
    header.push('\n');
    w.write_all(b"\x93NUMPY\x01\x00")?;
    w.write_all(&(header.len() as u16).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    w.write_all(&arr.data)
}

pub fn save(path: &Path, arr: &NpyArray) -> io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write(&mut f, arr)
}

pub fn read<R: Read>(r: &mut R) -> io::Result<NpyArray> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic[..6] != b"\x93NUMPY" {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "not an npy file"));
    }
    let mut len2 = [0u8; 2];
    r.read_exact(&mut len2)?;
    let hlen = u16::from_le_bytes(len2) as usize;
    let mut header = vec![0u8; hlen];
    r.read_exact(&mut header)?;
    let header = String::from_utf8_lossy(&header);
    let dtype = if header.contains("'|u1'") || header.contains("'u1'") {
        Dtype::U8
    } else if header.contains("'<f4'") {
        Dtype::F32
    } else if header.contains("'<f8'") {
        Dtype::F64
    } else {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unsupported npy dtype in header: {header}"),
        ));
    };
    if header.contains("'fortran_order': True") {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "fortran order not supported"));
    }
    let open = header
        .find('(')
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "npy header missing shape"))?;
    let close = header[open..]
        .find(')')
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "npy header missing shape"))?
        + open;
    let shape: Vec<usize> = header[open + 1..close]
        .split(',')
        .filter_map(|s| {
            let t = s.trim();
            if t.is_empty() {
                None
            } else {
                t.parse::<usize>().ok()
            }
        })
        .collect();
    let n =
        if shape.is_empty() { dtype.size() } else { shape.iter().product::<usize>() * dtype.size() };
    let mut data = vec![0u8; n];
    r.read_exact(&mut data)?;
    Ok(NpyArray { dtype, shape, data })
}

pub fn load(path: &Path) -> io::Result<NpyArray> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_f64() {
        let arr = NpyArray::from_f64(vec![2, 3], &[1.0, -2.5, 3.25, 0.0, 1e-12, 7e40]);
        let mut buf = Vec::new();
        write(&mut buf, &arr).unwrap();
        let back = read(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape, vec![2, 3]);
        assert_eq!(back.as_f64(), arr.as_f64());
    }

    #[test]
    fn round_trip_u8_and_1d_shape() {
        let arr = NpyArray::from_u8(vec![5], vec![0, 64, 128, 192, 255]);
        let mut buf = Vec::new();
        write(&mut buf, &arr).unwrap();
        assert!(buf.len() % 64 == 5 || buf.len() >= 69); // header padded to 64
        let back = read(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape, vec![5]);
        assert_eq!(back.data, arr.data);
        assert!((back.as_f32()[4] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_garbage() {
        let mut junk: &[u8] = b"not an npy file at all.....";
        assert!(read(&mut junk).is_err());
    }
}
