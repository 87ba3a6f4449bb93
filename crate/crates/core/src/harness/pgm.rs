use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary 8-bit grayscale image of `|w|` for a rank-2 tensor, min-max
/// normalized (a constant image is all black). Width is the column count.
pub fn heatmap_pgm(t: &Tensor) -> Result<Vec<u8>> {
    let (rows, cols) = t.dims2()?;
    let mags: Vec<f64> = t.data().iter().map(|v| v.abs()).collect();
    let lo = mags.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mags.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(mags.iter().map(|&m| if span > 0.0 { ((m - lo) / span * 255.0).round() as u8 } else { 0 }));
    Ok(out)
}

pub fn write_heatmap(path: &Path, t: &Tensor) -> Result<()> {
    let bytes = heatmap_pgm(t)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

/// Parsed binary PGM.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn read_pgm(bytes: &[u8]) -> Result<Pgm> {
    let bad = || Error::InvalidArgument("not a binary 8-bit PGM".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let width: usize = fields[1].parse().map_err(|_| bad())?;
    let height: usize = fields[2].parse().map_err(|_| bad())?;
    let pixels = bytes.get(pos..pos + width * height).ok_or_else(bad)?.to_vec();
    Ok(Pgm { width, height, pixels })
}
