//! Binary PGM/PPM image I/O.
//!
//! Depth maps are stored as 16-bit big-endian PGM (`P5`, maxval 65535) in
//! millimeters; 0 marks a hole. The camera intrinsics live in a sidecar text
//! file holding `fx fy cx cy width height max_depth`, whitespace-separated,
//! with `#` comments allowed. Heightmaps use the same PGM layout with a
//! signed offset: `stored = round(height_mm) + 32768`, 0 again marking holes.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use super::{ColorImage, DepthError, DepthMap, HeightMap};
use crate::fmt::sig9;
use crate::geometry::CameraIntrinsics;

pub const HEIGHT_OFFSET_MM: i64 = 32768;

fn format_err(msg: impl Into<String>) -> DepthError {
    DepthError::Format(msg.into())
}

/// Reads a PNM header (`magic width height maxval`), skipping comments, and
/// leaves the reader positioned at the first raster byte.
fn read_header<R: BufRead>(r: &mut R) -> Result<(String, usize, usize, u32), DepthError> {
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < 4 {
        let mut tok = String::new();
        let mut in_comment = false;
        loop {
            let mut b = [0u8; 1];
            if r.read(&mut b)? == 0 {
                return Err(format_err("truncated header"));
            }
            let c = b[0] as char;
            if in_comment {
                in_comment = c != '\n';
                continue;
            }
            if c == '#' {
                in_comment = true;
                continue;
            }
            if c.is_ascii_whitespace() {
                if !tok.is_empty() {
                    break;
                }
                continue;
            }
            tok.push(c);
        }
        tokens.push(tok);
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| format_err(format!("bad header value {s}")))
    };
    let maxval = num(&tokens[3])?;
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(format!("unsupported maxval {maxval}")));
    }
    Ok((tokens[0].clone(), num(&tokens[1])?, num(&tokens[2])?, maxval as u32))
}

fn read_u16_raster<R: BufRead>(r: &mut R, n: usize, maxval: u32) -> Result<Vec<u16>, DepthError> {
    if maxval < 256 {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf)?;
        Ok(buf.into_iter().map(u16::from).collect())
    } else {
        let mut buf = vec![0u8; 2 * n];
        r.read_exact(&mut buf)?;
        Ok(buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect())
    }
}

fn write_u16_pgm<W: Write>(mut w: W, width: usize, height: usize, data: &[u16]) -> Result<(), DepthError> {
    write!(w, "P5\n{width} {height}\n65535\n")?;
    let mut buf = Vec::with_capacity(2 * data.len());
    for v in data {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a millimeter depth PGM. Zero and values beyond `max_depth` become holes.
pub fn read_depth_pgm<R: BufRead>(mut r: R, max_depth: f64) -> Result<DepthMap, DepthError> {
    let (magic, width, height, maxval) = read_header(&mut r)?;
    if magic != "P5" {
        return Err(format_err(format!("expected P5 depth image, found {magic}")));
    }
    let raw = read_u16_raster(&mut r, width * height, maxval)?;
    let mut values = Vec::with_capacity(raw.len());
    let mut valid = Vec::with_capacity(raw.len());
    for mm in raw {
        let z = f64::from(mm) / 1000.0;
        let ok = mm > 0 && z <= max_depth;
        values.push(if ok { z } else { 0.0 });
        valid.push(ok);
    }
    DepthMap::new(width, height, values, valid)
}

pub fn write_depth_pgm<W: Write>(w: W, depth: &DepthMap) -> Result<(), DepthError> {
    let data: Vec<u16> = depth
        .values()
        .iter()
        .zip(depth.valid())
        .map(|(z, ok)| {
            if *ok {
                (z * 1000.0).round().clamp(1.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect();
    write_u16_pgm(w, depth.width(), depth.height(), &data)
}

pub fn write_height_pgm<W: Write>(w: W, hm: &HeightMap) -> Result<(), DepthError> {
    let data: Vec<u16> = hm
        .heights
        .iter()
        .zip(&hm.valid)
        .map(|(h, ok)| {
            if *ok {
                ((h * 1000.0).round() as i64 + HEIGHT_OFFSET_MM).clamp(1, 65535) as u16
            } else {
                0
            }
        })
        .collect();
    write_u16_pgm(w, hm.width, hm.height, &data)
}

/// Decodes a heightmap PGM written by [`write_height_pgm`] back to meters.
pub fn read_height_pgm<R: BufRead>(mut r: R) -> Result<HeightMap, DepthError> {
    let (magic, width, height, maxval) = read_header(&mut r)?;
    if magic != "P5" {
        return Err(format_err(format!("expected P5 heightmap, found {magic}")));
    }
    let raw = read_u16_raster(&mut r, width * height, maxval)?;
    let valid: Vec<bool> = raw.iter().map(|v| *v != 0).collect();
    let heights = raw
        .iter()
        .map(|v| {
            if *v == 0 {
                0.0
            } else {
                (i64::from(*v) - HEIGHT_OFFSET_MM) as f64 / 1000.0
            }
        })
        .collect();
    Ok(HeightMap {
        width,
        height,
        heights,
        valid,
    })
}

/// Reads an 8-bit binary PPM (`P6`).
pub fn read_ppm<R: BufRead>(mut r: R) -> Result<ColorImage, DepthError> {
    let (magic, width, height, maxval) = read_header(&mut r)?;
    if magic != "P6" || maxval > 255 {
        return Err(format_err("expected 8-bit P6 color image"));
    }
    let mut buf = vec![0u8; 3 * width * height];
    r.read_exact(&mut buf)?;
    ColorImage::new(width, height, buf.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

pub fn write_ppm<W: Write>(mut w: W, img: &ColorImage) -> Result<(), DepthError> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    let buf: Vec<u8> = img.rgb.iter().flatten().copied().collect();
    w.write_all(&buf)?;
    Ok(())
}

pub fn parse_intrinsics(text: &str) -> Result<CameraIntrinsics, DepthError> {
    let toks: Vec<&str> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .collect();
    if toks.len() != 7 {
        return Err(format_err(format!(
            "intrinsics need 7 values (fx fy cx cy width height max_depth), found {}",
            toks.len()
        )));
    }
    let f = |i: usize| {
        toks[i]
            .parse::<f64>()
            .map_err(|_| format_err(format!("bad intrinsics value {}", toks[i])))
    };
    let u = |i: usize| {
        toks[i]
            .parse::<usize>()
            .map_err(|_| format_err(format!("bad image size {}", toks[i])))
    };
    Ok(CameraIntrinsics::new(f(0)?, f(1)?, f(2)?, f(3)?, u(4)?, u(5)?, f(6)?)?)
}

pub fn format_intrinsics(intr: &CameraIntrinsics) -> String {
    format!(
        "# fx fy cx cy width height max_depth\n{} {} {} {} {} {} {}\n",
        sig9(intr.fx),
        sig9(intr.fy),
        sig9(intr.cx),
        sig9(intr.cy),
        intr.width,
        intr.height,
        sig9(intr.max_depth)
    )
}

/// Sidecar path convention: `frame.pgm` → `frame.intr`.
pub fn sidecar_path(depth_path: &Path) -> PathBuf {
    depth_path.with_extension("intr")
}
