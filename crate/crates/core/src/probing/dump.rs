//! Representation dump format for external tooling (plotting, offline
//! probing): a fixed header followed by the row-major f64 payload, plus
//! labels as one integer per line.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::num::Matrix;

const MAGIC: &[u8; 4] = b"FSRD";
const VERSION: u8 = 1;
const DTYPE_F64: u8 = 1;

/// Header: magic "FSRD", version u8, dtype u8 (1 = f64), reserved u16,
/// rows u64 LE, cols u64 LE. Payload: rows×cols little-endian f64.
pub fn write_reps(reps: &Matrix, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&[VERSION, DTYPE_F64])?;
    file.write_all(&0u16.to_le_bytes())?;
    file.write_all(&(reps.rows() as u64).to_le_bytes())?;
    file.write_all(&(reps.cols() as u64).to_le_bytes())?;
    for v in reps.as_slice() {
        file.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_reps(path: &Path) -> Result<Matrix> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = [0u8; 24];
    file.read_exact(&mut header)?;
    if &header[0..4] != MAGIC {
        return Err(Error::Format("bad representation dump magic".into()));
    }
    if header[4] != VERSION {
        return Err(Error::Format(format!("unsupported dump version {}", header[4])));
    }
    if header[5] != DTYPE_F64 {
        return Err(Error::Format(format!("unsupported dtype tag {}", header[5])));
    }
    let rows = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; rows * cols * 8];
    file.read_exact(&mut payload)?;
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// One integer label per line.
pub fn write_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut out = String::new();
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            line.trim()
                .parse::<usize>()
                .map_err(|e| Error::Format(format!("label line {}: {e}", i + 1)))
        })
        .collect()
}
