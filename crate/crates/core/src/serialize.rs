//! Binary/JSON envelope for tensors.
//!
//! A file is one JSON header line terminated by `\n`, followed by raw
//! little-endian `f64` pairs `(re, im)`.
//!
//! * CP: coefficients `β[l][k][s]`, term-major, then dimension, then mode.
//! * HT: node matrices in tree preorder (root first, left subtree before right),
//!   each stored column-major. The tree is the balanced tree over `n_dims`.

use std::io::{BufRead, Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, C64};
use crate::cp::CPTensor;
use crate::error::{Error, Result};
use crate::ht::{DimensionTree, HTTensor};

const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    n_dims: usize,
    modes: Vec<usize>,
    half_widths: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_shapes: Option<Vec<[usize; 2]>>,
}

impl Header {
    fn for_specs(format: &str, specs: &[BasisSpec]) -> Self {
        Header {
            format: format.into(),
            version: VERSION,
            n_dims: specs.len(),
            modes: specs.iter().map(|s| s.modes()).collect(),
            half_widths: specs.iter().map(|s| s.half_width()).collect(),
            rank: None,
            node_shapes: None,
        }
    }

    fn specs(&self) -> Result<Vec<BasisSpec>> {
        if self.version != VERSION {
            return Err(Error::Format(format!("unsupported version {}", self.version)));
        }
        if self.modes.len() != self.n_dims || self.half_widths.len() != self.n_dims {
            return Err(Error::Format("header dimension lists disagree with n_dims".into()));
        }
        self.modes.iter().zip(&self.half_widths).map(|(&q, &b)| BasisSpec::new(q, b)).collect()
    }
}

fn write_header<W: Write>(w: &mut W, h: &Header) -> Result<()> {
    let line = serde_json::to_string(h).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Header> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if !line.ends_with('\n') {
        return Err(Error::Format("missing header line".into()));
    }
    serde_json::from_str(line.trim_end()).map_err(|e| Error::Format(format!("bad header: {e}")))
}

fn write_c64<W: Write>(w: &mut W, c: C64) -> Result<()> {
    w.write_all(&c.re.to_le_bytes())?;
    w.write_all(&c.im.to_le_bytes())?;
    Ok(())
}

fn read_c64<R: Read>(r: &mut R) -> Result<C64> {
    let mut b = [0u8; 16];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
    let re = f64::from_le_bytes(b[..8].try_into().expect("8 bytes"));
    let im = f64::from_le_bytes(b[8..].try_into().expect("8 bytes"));
    Ok(C64::new(re, im))
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after payload".into())),
    }
}

pub fn write_cp<W: Write>(mut w: W, f: &CPTensor) -> Result<()> {
    let mut h = Header::for_specs("cp", f.specs());
    h.rank = Some(f.rank());
    write_header(&mut w, &h)?;
    for l in 0..f.rank() {
        for k in 0..f.ndims() {
            for c in f.factor(k).column(l).iter() {
                write_c64(&mut w, *c)?;
            }
        }
    }
    Ok(())
}

pub fn read_cp<R: BufRead>(mut r: R) -> Result<CPTensor> {
    let h = read_header(&mut r)?;
    if h.format != "cp" {
        return Err(Error::Format(format!("expected format cp, found {}", h.format)));
    }
    let specs = h.specs()?;
    let rank = h.rank.ok_or_else(|| Error::Format("cp header lacks rank".into()))?;
    let mut factors: Vec<DMatrix<C64>> = specs.iter().map(|s| DMatrix::zeros(s.modes(), rank)).collect();
    for l in 0..rank {
        for f in factors.iter_mut() {
            for s in 0..f.nrows() {
                f[(s, l)] = read_c64(&mut r)?;
            }
        }
    }
    expect_eof(&mut r)?;
    CPTensor::from_factors(specs, factors)
}

pub fn write_ht<W: Write>(mut w: W, h: &HTTensor) -> Result<()> {
    let mut hd = Header::for_specs("ht", h.specs());
    hd.node_shapes = Some(h.node_data().iter().map(|m| [m.nrows(), m.ncols()]).collect());
    write_header(&mut w, &hd)?;
    for m in h.node_data() {
        for c in m.iter() {
            write_c64(&mut w, *c)?;
        }
    }
    Ok(())
}

pub fn read_ht<R: BufRead>(mut r: R) -> Result<HTTensor> {
    let h = read_header(&mut r)?;
    if h.format != "ht" {
        return Err(Error::Format(format!("expected format ht, found {}", h.format)));
    }
    let specs = h.specs()?;
    let shapes = h.node_shapes.clone().ok_or_else(|| Error::Format("ht header lacks node_shapes".into()))?;
    let tree = DimensionTree::balanced(h.n_dims)?;
    if shapes.len() != tree.len() {
        return Err(Error::Format(format!("{} node shapes for a tree of {} nodes", shapes.len(), tree.len())));
    }
    let mut data = Vec::with_capacity(shapes.len());
    for [rows, cols] in shapes {
        let mut m = DMatrix::zeros(rows, cols);
        for c in m.iter_mut() {
            *c = read_c64(&mut r)?;
        }
        data.push(m);
    }
    expect_eof(&mut r)?;
    HTTensor::from_parts(specs, tree, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn sample_cp() -> CPTensor {
        let specs = vec![BasisSpec::new(3, 1.0).unwrap(), BasisSpec::new(5, 2.5).unwrap()];
        let f = vec![
            DMatrix::from_fn(3, 2, |i, j| C64::new(i as f64, j as f64 + 0.5)),
            DMatrix::from_fn(5, 2, |i, j| C64::new(-(i as f64), 1.0 / (1.0 + j as f64))),
        ];
        CPTensor::from_factors(specs, f).unwrap()
    }

    #[test]
    fn cp_round_trip_and_layout() {
        let f = sample_cp();
        let mut buf = Vec::new();
        write_cp(&mut buf, &f).unwrap();
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&buf[..nl]).unwrap();
        assert_eq!(header["format"], "cp");
        assert_eq!(header["rank"], 2);
        assert_eq!(buf.len() - nl - 1, 2 * (3 + 5) * 16);
        // second record is β[0][0][1]
        let off = nl + 1 + 16;
        assert_eq!(f64::from_le_bytes(buf[off..off + 8].try_into().unwrap()), 1.0);
        let g = read_cp(&buf[..]).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn ht_round_trip() {
        let h = HTTensor::from_cp(&sample_cp()).unwrap();
        let mut buf = Vec::new();
        write_ht(&mut buf, &h).unwrap();
        assert_eq!(read_ht(&buf[..]).unwrap(), h);
        assert!(read_cp(&buf[..]).is_err());
    }

    #[test]
    fn rejects_truncated_and_trailing() {
        let f = CPTensor::rank_one(vec![BasisSpec::new(3, 1.0).unwrap()], vec![DVector::from_element(3, C64::new(1.0, 0.0))]).unwrap();
        let mut buf = Vec::new();
        write_cp(&mut buf, &f).unwrap();
        assert!(read_cp(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(read_cp(&buf[..]).is_err());
    }
}
