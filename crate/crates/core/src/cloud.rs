//! Point clouds and ASCII PLY serialization.

use std::io::{BufRead, Write};

use nalgebra::Vector3;
use thiserror::Error;

use crate::fmt::sig9;
use crate::geometry::{Point3, RigidTransform3};

pub type Rgb = [u8; 3];

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("colors has {colors} entries for {points} points")]
    ColorLength { points: usize, colors: usize },
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("pixel provenance has {pixels} entries for {points} points")]
    ProvenanceLength { points: usize, pixels: usize },
    #[error("PLY: {0}")]
    Ply(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Source pixel of each point in a cloud produced by back-projection.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelProvenance {
    pub image_width: usize,
    pub image_height: usize,
    /// `(u, v)` = (column, row) per point.
    pub pixels: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
    colors: Option<Vec<Rgb>>,
    provenance: Option<PixelProvenance>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, colors: Option<Vec<Rgb>>) -> Result<Self, CloudError> {
        if let Some(c) = &colors {
            if c.len() != points.len() {
                return Err(CloudError::ColorLength {
                    points: points.len(),
                    colors: c.len(),
                });
            }
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(CloudError::NonFinite(i));
        }
        Ok(Self {
            points,
            colors,
            provenance: None,
        })
    }

    pub fn from_points(points: Vec<Point3>) -> Result<Self, CloudError> {
        Self::new(points, None)
    }

    pub fn with_provenance(mut self, provenance: PixelProvenance) -> Result<Self, CloudError> {
        if provenance.pixels.len() != self.points.len() {
            return Err(CloudError::ProvenanceLength {
                points: self.points.len(),
                pixels: provenance.pixels.len(),
            });
        }
        self.provenance = Some(provenance);
        Ok(self)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[Rgb]> {
        self.colors.as_deref()
    }

    pub fn provenance(&self) -> Option<&PixelProvenance> {
        self.provenance.as_ref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Rigidly transforms every point; colors and pixel provenance are kept.
    pub fn transformed(&self, t: &RigidTransform3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            colors: self.colors.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn write_ply<W: Write>(&self, mut w: W) -> Result<(), CloudError> {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", self.points.len())?;
        writeln!(w, "property float64 x")?;
        writeln!(w, "property float64 y")?;
        writeln!(w, "property float64 z")?;
        if self.colors.is_some() {
            writeln!(w, "property uint8 red")?;
            writeln!(w, "property uint8 green")?;
            writeln!(w, "property uint8 blue")?;
        }
        writeln!(w, "end_header")?;
        for (i, p) in self.points.iter().enumerate() {
            write!(w, "{} {} {}", sig9(p.x), sig9(p.y), sig9(p.z))?;
            if let Some(c) = &self.colors {
                let [r, g, b] = c[i];
                write!(w, " {r} {g} {b}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads an ASCII PLY whose vertex element carries `x y z` and optionally
    /// `red green blue`. Other vertex properties are ignored.
    pub fn read_ply<R: BufRead>(r: R) -> Result<PointCloud, CloudError> {
        let mut lines = r.lines();
        let mut next = || -> Result<Option<String>, CloudError> { Ok(lines.next().transpose()?) };
        if next()?.as_deref().map(str::trim) != Some("ply") {
            return Err(CloudError::Ply("missing magic".into()));
        }
        let mut count = None;
        let mut props: Vec<String> = Vec::new();
        let mut in_vertex = false;
        loop {
            let line = next()?.ok_or_else(|| CloudError::Ply("unterminated header".into()))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["end_header"] => break,
                ["format", fmt, ..] if *fmt != "ascii" => {
                    return Err(CloudError::Ply(format!("unsupported format {fmt}")))
                }
                ["element", name, n] => {
                    in_vertex = *name == "vertex";
                    if in_vertex {
                        count = Some(
                            n.parse::<usize>()
                                .map_err(|_| CloudError::Ply(format!("bad count {n}")))?,
                        );
                    }
                }
                ["property", _, name] if in_vertex => props.push(name.to_string()),
                _ => {}
            }
        }
        let count = count.ok_or_else(|| CloudError::Ply("no vertex element".into()))?;
        let idx = |name: &str| props.iter().position(|p| p == name);
        let (ix, iy, iz) = match (idx("x"), idx("y"), idx("z")) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(CloudError::Ply("vertex lacks x/y/z".into())),
        };
        let rgb = match (idx("red"), idx("green"), idx("blue")) {
            (Some(a), Some(b), Some(c)) => Some((a, b, c)),
            _ => None,
        };
        let mut points = Vec::with_capacity(count);
        let mut colors = rgb.map(|_| Vec::with_capacity(count));
        for i in 0..count {
            let line = next()?.ok_or_else(|| CloudError::Ply(format!("vertex {i} missing")))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() < props.len() {
                return Err(CloudError::Ply(format!("vertex {i} has too few values")));
            }
            let f = |k: usize| {
                toks[k]
                    .parse::<f64>()
                    .map_err(|_| CloudError::Ply(format!("vertex {i}: bad number {}", toks[k])))
            };
            points.push(Vector3::new(f(ix)?, f(iy)?, f(iz)?));
            if let (Some((r, g, b)), Some(c)) = (rgb, colors.as_mut()) {
                let u = |k: usize| {
                    toks[k]
                        .parse::<u8>()
                        .map_err(|_| CloudError::Ply(format!("vertex {i}: bad color {}", toks[k])))
                };
                c.push([u(r)?, u(g)?, u(b)?]);
            }
        }
        PointCloud::new(points, colors)
    }
}
