//! Height fields `h(x1, x2)` with exact first derivatives.
//!
//! Three families are provided: an affine [`PlaneMap`], a sum of isotropic
//! Gaussian bumps ([`GaussianFieldMap`]) and a lattice of samples interpolated
//! with C¹ Catmull-Rom bicubic patches ([`GridMap`]). All maps are immutable
//! once built, so queries can be issued from any number of threads.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `h = a·x1 + b·x2 + c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneMap {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PlaneMap {
    pub fn flat(c: f64) -> Self {
        PlaneMap { a: 0.0, b: 0.0, c }
    }
}

/// One isotropic bump `amplitude · exp(-|p - center|² / (2 width²))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: [f64; 2],
    pub amplitude: f64,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianFieldMap {
    pub bumps: Vec<Bump>,
}

impl GaussianFieldMap {
    pub fn new(bumps: Vec<Bump>) -> Result<Self> {
        for b in &bumps {
            if !(b.width > 0.0 && b.width.is_finite()) {
                return Err(Error::InvalidTerrain(format!(
                    "bump width must be positive, got {}",
                    b.width
                )));
            }
            if !b.amplitude.is_finite() || !b.center.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidTerrain("non-finite bump parameter".into()));
            }
        }
        Ok(GaussianFieldMap { bumps })
    }

    fn eval(&self, x1: f64, x2: f64) -> (f64, f64, f64) {
        let mut h = 0.0;
        let mut g1 = 0.0;
        let mut g2 = 0.0;
        for b in &self.bumps {
            let d1 = x1 - b.center[0];
            let d2 = x2 - b.center[1];
            let inv_w2 = 1.0 / (b.width * b.width);
            let v = b.amplitude * (-0.5 * (d1 * d1 + d2 * d2) * inv_w2).exp();
            h += v;
            g1 -= v * d1 * inv_w2;
            g2 -= v * d2 * inv_w2;
        }
        (h, g1, g2)
    }
}

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Bounds {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }
}

/// Rectangular lattice of height samples with bicubic (Catmull-Rom) interpolation.
///
/// Heights are stored row-major with `y` increasing by row. Border cells use
/// linearly extrapolated ghost nodes, which keeps affine data exact up to the
/// hull edge.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMap {
    origin: [f64; 2],
    spacing: f64,
    nx: usize,
    ny: usize,
    heights: Vec<f64>,
}

impl GridMap {
    pub fn new(origin: [f64; 2], spacing: f64, nx: usize, ny: usize, heights: Vec<f64>) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::TooSmallLattice { nx, ny });
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidTerrain(format!(
                "grid spacing must be positive, got {spacing}"
            )));
        }
        if heights.len() != nx * ny {
            return Err(Error::InvalidTerrain(format!(
                "expected {} heights, got {}",
                nx * ny,
                heights.len()
            )));
        }
        if !heights.iter().all(|h| h.is_finite()) || !origin.iter().all(|o| o.is_finite()) {
            return Err(Error::InvalidTerrain("non-finite grid value".into()));
        }
        Ok(GridMap {
            origin,
            spacing,
            nx,
            ny,
            heights,
        })
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.heights[j * self.nx + i]
    }

    pub fn hull(&self) -> Bounds {
        Bounds {
            x_min: self.origin[0],
            x_max: self.origin[0] + (self.nx - 1) as f64 * self.spacing,
            y_min: self.origin[1],
            y_max: self.origin[1] + (self.ny - 1) as f64 * self.spacing,
        }
    }

    pub fn contains(&self, x1: f64, x2: f64) -> bool {
        let h = self.hull();
        x1 >= h.x_min && x1 <= h.x_max && x2 >= h.y_min && x2 <= h.y_max
    }

    // Node value with linear ghost extrapolation one node past each edge.
    fn ghost(&self, i: isize, j: isize) -> f64 {
        let nx = self.nx as isize;
        let ny = self.ny as isize;
        if j < 0 {
            return 2.0 * self.ghost(i, 0) - self.ghost(i, 1);
        }
        if j >= ny {
            return 2.0 * self.ghost(i, ny - 1) - self.ghost(i, ny - 2);
        }
        if i < 0 {
            return 2.0 * self.ghost(0, j) - self.ghost(1, j);
        }
        if i >= nx {
            return 2.0 * self.ghost(nx - 1, j) - self.ghost(nx - 2, j);
        }
        self.heights[(j * nx + i) as usize]
    }

    fn locate(u: f64, n: usize) -> (usize, f64) {
        let cell = (u.floor().max(0.0) as usize).min(n - 2);
        (cell, u - cell as f64)
    }

    fn eval(&self, x1: f64, x2: f64) -> Result<(f64, f64, f64)> {
        if !self.contains(x1, x2) {
            return Err(Error::OutOfHull { x1, x2 });
        }
        let u = (x1 - self.origin[0]) / self.spacing;
        let v = (x2 - self.origin[1]) / self.spacing;
        let (ci, tx) = Self::locate(u, self.nx);
        let (cj, ty) = Self::locate(v, self.ny);
        Ok(self.eval_cell(ci, cj, tx, ty))
    }

    /// Evaluates the patch of cell `(ci, cj)` at local coordinates `(tx, ty)`.
    pub(crate) fn eval_cell(&self, ci: usize, cj: usize, tx: f64, ty: f64) -> (f64, f64, f64) {
        let (wx, dwx) = catmull_rom(tx);
        let (wy, dwy) = catmull_rom(ty);
        let mut h = 0.0;
        let mut hx = 0.0;
        let mut hy = 0.0;
        for (b, (wyb, dwyb)) in wy.iter().zip(dwy.iter()).enumerate() {
            let j = cj as isize - 1 + b as isize;
            let mut row = 0.0;
            let mut drow = 0.0;
            for (a, (wxa, dwxa)) in wx.iter().zip(dwx.iter()).enumerate() {
                let i = ci as isize - 1 + a as isize;
                let p = self.ghost(i, j);
                row += wxa * p;
                drow += dwxa * p;
            }
            h += wyb * row;
            hx += wyb * drow;
            hy += dwyb * row;
        }
        (h, hx / self.spacing, hy / self.spacing)
    }
}

// Catmull-Rom weights and their derivatives for the four nodes around t in [0, 1].
fn catmull_rom(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        [
            0.5 * (-t + 2.0 * t2 - t3),
            0.5 * (2.0 - 5.0 * t2 + 3.0 * t3),
            0.5 * (t + 4.0 * t2 - 3.0 * t3),
            0.5 * (-t2 + t3),
        ],
        [
            0.5 * (-1.0 + 4.0 * t - 3.0 * t2),
            0.5 * (-10.0 * t + 9.0 * t2),
            0.5 * (1.0 + 8.0 * t - 9.0 * t2),
            0.5 * (-2.0 * t + 3.0 * t2),
        ],
    )
}

#[derive(Clone, Debug, PartialEq)]
pub enum TerrainMap {
    Plane(PlaneMap),
    GaussianField(GaussianFieldMap),
    Grid(GridMap),
}

impl From<PlaneMap> for TerrainMap {
    fn from(p: PlaneMap) -> Self {
        TerrainMap::Plane(p)
    }
}

impl From<GaussianFieldMap> for TerrainMap {
    fn from(g: GaussianFieldMap) -> Self {
        TerrainMap::GaussianField(g)
    }
}

impl From<GridMap> for TerrainMap {
    fn from(g: GridMap) -> Self {
        TerrainMap::Grid(g)
    }
}

impl TerrainMap {
    pub fn height_at(&self, x1: f64, x2: f64) -> Result<f64> {
        self.height_and_gradient(x1, x2).map(|(h, _, _)| h)
    }

    pub fn gradient_at(&self, x1: f64, x2: f64) -> Result<(f64, f64)> {
        match self {
            TerrainMap::Plane(p) => Ok((p.a, p.b)),
            _ => self.height_and_gradient(x1, x2).map(|(_, g1, g2)| (g1, g2)),
        }
    }

    /// Height and both slopes from one evaluation.
    pub fn height_and_gradient(&self, x1: f64, x2: f64) -> Result<(f64, f64, f64)> {
        match self {
            TerrainMap::Plane(p) => Ok((p.a * x1 + p.b * x2 + p.c, p.a, p.b)),
            TerrainMap::GaussianField(g) => Ok(g.eval(x1, x2)),
            TerrainMap::Grid(g) => g.eval(x1, x2),
        }
    }

    /// Projects a query onto the valid domain, returning the projected point and
    /// the Euclidean distance that was removed. Analytic maps are unbounded.
    pub fn clamp_to_domain(&self, x1: f64, x2: f64) -> (f64, f64, f64) {
        match self {
            TerrainMap::Grid(g) => {
                let h = g.hull();
                let c1 = x1.clamp(h.x_min, h.x_max);
                let c2 = x2.clamp(h.y_min, h.y_max);
                (c1, c2, ((x1 - c1).powi(2) + (x2 - c2).powi(2)).sqrt())
            }
            _ => (x1, x2, 0.0),
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, TerrainMap::Grid(_))
    }

    pub fn as_plane(&self) -> Option<&PlaneMap> {
        match self {
            TerrainMap::Plane(p) => Some(p),
            _ => None,
        }
    }
}

/// Parses the grid CSV format: a `# origin_x,origin_y,spacing,nx,ny` header
/// followed by `ny` rows of `nx` heights, `y` increasing by row.
pub fn parse_grid(text: &str) -> Result<GridMap> {
    let mut header: Option<([f64; 2], f64, usize, usize)> = None;
    let mut heights = Vec::new();
    let mut rows = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if header.is_some() {
                continue;
            }
            let fields: Vec<&str> = rest.split(',').map(str::trim).collect();
            // A comment naming the columns is tolerated ahead of the numeric header.
            if fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
                continue;
            }
            if fields.len() != 5 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("header needs 5 fields, found {}", fields.len()),
                });
            }
            let num = |k: usize| {
                fields[k].parse::<f64>().map_err(|e| Error::Parse {
                    line: line_no,
                    msg: format!("header field {}: {e}", k + 1),
                })
            };
            let count = |k: usize| {
                fields[k].parse::<usize>().map_err(|e| Error::Parse {
                    line: line_no,
                    msg: format!("header field {}: {e}", k + 1),
                })
            };
            header = Some(([num(0)?, num(1)?], num(2)?, count(3)?, count(4)?));
            continue;
        }
        let Some((_, _, nx, _)) = header else {
            return Err(Error::Parse {
                line: line_no,
                msg: "data row before header".into(),
            });
        };
        let row: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: line_no,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != nx {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {nx} values, found {}", row.len()),
            });
        }
        heights.extend(row);
        rows += 1;
    }
    let (origin, spacing, nx, ny) = header.ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    if nx < 4 || ny < 4 {
        return Err(Error::TooSmallLattice { nx, ny });
    }
    if rows != ny {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!("expected {ny} rows, found {rows}"),
        });
    }
    GridMap::new(origin, spacing, nx, ny, heights)
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<GridMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_grid(&text)
}

/// Samples `map` on the lattice `x_min + i·resolution`, `y_min + j·resolution`
/// covering `bounds`.
pub fn sample_grid(map: &TerrainMap, bounds: Bounds, resolution: f64) -> Result<GridMap> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::InvalidTerrain(format!(
            "resolution must be positive, got {resolution}"
        )));
    }
    let extent_x = bounds.x_max - bounds.x_min;
    let extent_y = bounds.y_max - bounds.y_min;
    if !(extent_x >= 0.0 && extent_y >= 0.0 && extent_x.is_finite() && extent_y.is_finite()) {
        return Err(Error::InvalidTerrain("bounds must be finite and ordered".into()));
    }
    let nx = (extent_x / resolution + 1e-9).floor() as usize + 1;
    let ny = (extent_y / resolution + 1e-9).floor() as usize + 1;
    let mut heights = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x1 = bounds.x_min + i as f64 * resolution;
            let x2 = bounds.y_min + j as f64 * resolution;
            heights.push(map.height_at(x1, x2)?);
        }
    }
    GridMap::new([bounds.x_min, bounds.y_min], resolution, nx, ny, heights)
}

pub fn format_grid(grid: &GridMap) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {},{},{},{},{}",
        grid.origin[0], grid.origin[1], grid.spacing, grid.nx, grid.ny
    );
    for row in grid.heights.chunks(grid.nx) {
        let line: Vec<String> = row.iter().map(|h| h.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Writes `map` sampled over `bounds` as a grid CSV file.
pub fn export_grid(map: &TerrainMap, bounds: Bounds, resolution: f64, path: impl AsRef<Path>) -> Result<GridMap> {
    let grid = sample_grid(map, bounds, resolution)?;
    let path = path.as_ref();
    fs::write(path, format_grid(&grid)).map_err(|e| Error::io(path, e))?;
    Ok(grid)
}
