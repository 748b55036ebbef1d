//! Sampled scalar fields on node-centred rectangular grids.
//!
//! Grids are 1D or 2D, endpoints included. Points and multi-indices are
//! stored as two-component arrays; the unused component of a 1D grid is
//! always zero, which lets every formula downstream treat both dimensions
//! uniformly.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gallery::GalleryEntry;

/// A point in the plane. 1D points keep `[x, 0.0]`.
pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    lo: [f64; 2],
    hi: [f64; 2],
    n: [usize; 2],
    h: [f64; 2],
}

impl Grid {
    /// Builds a grid from per-axis bounds and node counts.
    ///
    /// Requires `dim` in {1, 2}, `hi > lo` and at least three nodes per axis.
    pub fn new(lo: &[f64], hi: &[f64], n: &[usize]) -> Result<Self> {
        let dim = lo.len();
        if !(1..=2).contains(&dim) || hi.len() != dim || n.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "need 1 or 2 axes with matching lo/hi/n, got {} / {} / {}",
                lo.len(),
                hi.len(),
                n.len()
            )));
        }
        let mut g = Grid {
            dim,
            lo: [0.0; 2],
            hi: [0.0; 2],
            n: [1, 1],
            h: [0.0; 2],
        };
        for k in 0..dim {
            if !(lo[k].is_finite() && hi[k].is_finite()) || hi[k] <= lo[k] {
                return Err(Error::InvalidGrid(format!(
                    "axis {k}: need finite lo < hi, got [{}, {}]",
                    lo[k], hi[k]
                )));
            }
            if n[k] < 3 {
                return Err(Error::InvalidGrid(format!(
                    "axis {k}: need at least 3 nodes, got {}",
                    n[k]
                )));
            }
            g.lo[k] = lo[k];
            g.hi[k] = hi[k];
            g.n[k] = n[k];
            g.h[k] = (hi[k] - lo[k]) / (n[k] - 1) as f64;
        }
        Ok(g)
    }

    pub fn line(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(&[lo], &[hi], &[n])
    }

    /// Square grid `[lo, hi]^2` with `n` nodes per axis.
    pub fn square(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(&[lo, lo], &[hi, hi], &[n, n])
    }

    /// Grid over a box whose spacing is `h` on every axis; `(hi - lo) / h`
    /// must be an integer up to rounding.
    pub fn with_spacing(lo: &[f64], hi: &[f64], h: f64) -> Result<Self> {
        let n: Vec<usize> = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| ((b - a) / h).round() as usize + 1)
            .collect();
        Self::new(lo, hi, &n)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo[..self.dim]
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi[..self.dim]
    }

    pub fn shape(&self) -> &[usize] {
        &self.n[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h[..self.dim]
    }

    /// Largest spacing over all axes; the `h` used by tolerances.
    pub fn h_max(&self) -> f64 {
        self.spacing().iter().cloned().fold(0.0, f64::max)
    }

    /// Volume element `h_0 h_1` (or `h_0` in 1D) of the node-sum quadrature.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, multi: [usize; 2]) -> usize {
        multi[0] + self.n[0] * multi[1]
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        [idx % self.n[0], idx / self.n[0]]
    }

    pub fn coord(&self, idx: usize) -> Point {
        let m = self.multi_index(idx);
        let mut x = [0.0; 2];
        for k in 0..self.dim {
            x[k] = self.lo[k] + m[k] as f64 * self.h[k];
        }
        x
    }

    /// Nearest node to `x`, or `None` when `x` lies outside the box by more
    /// than half a cell.
    pub fn nearest_node(&self, x: &[f64]) -> Option<usize> {
        let mut m = [0usize; 2];
        for k in 0..self.dim {
            let t = ((x[k] - self.lo[k]) / self.h[k]).round();
            if t < 0.0 || t > (self.n[k] - 1) as f64 {
                return None;
            }
            m[k] = t as usize;
        }
        Some(self.index(m))
    }

    /// Distance of a node to the boundary of the box, computed from its
    /// index so that it is exact at nodes.
    pub fn boundary_distance(&self, idx: usize) -> f64 {
        let m = self.multi_index(idx);
        (0..self.dim)
            .map(|k| m[k].min(self.n[k] - 1 - m[k]) as f64 * self.h[k])
            .fold(f64::INFINITY, f64::min)
    }

    /// True when the node has a neighbour on both sides along every axis.
    pub fn is_interior(&self, idx: usize) -> bool {
        let m = self.multi_index(idx);
        (0..self.dim).all(|k| m[k] > 0 && m[k] + 1 < self.n[k])
    }

    /// Index of the node offset by `delta` (in nodes), if it exists.
    pub fn offset(&self, idx: usize, delta: [i64; 2]) -> Option<usize> {
        let m = self.multi_index(idx);
        let mut out = [0usize; 2];
        for k in 0..2 {
            let v = m[k] as i64 + delta[k];
            if v < 0 || v >= self.n[k] as i64 {
                return None;
            }
            out[k] = v as usize;
        }
        Some(self.index(out))
    }

    pub fn nodes(&self) -> std::ops::Range<usize> {
        0..self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
    meta: Option<String>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ValueCount {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(ScalarField {
            grid,
            values,
            meta: None,
        })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&Point) -> f64) -> Result<Self> {
        let values = grid.nodes().map(|i| f(&grid.coord(i))).collect();
        Self::new(grid.clone(), values)
    }

    pub fn constant(grid: &Grid, c: f64) -> Result<Self> {
        Self::new(grid.clone(), vec![c; grid.len()])
    }

    pub fn with_meta(mut self, meta: impl Into<String>) -> Self {
        self.meta = Some(meta.into());
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn meta(&self) -> Option<&str> {
        self.meta.as_deref()
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut out = Self::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())?;
        out.meta = self.meta.clone();
        Ok(out)
    }

    pub fn negate(&self) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| -v).collect(),
            meta: self.meta.as_ref().map(|m| format!("-({m})")),
        }
    }
}

/// The nodes of Ω whose distance to ∂Ω exceeds `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrunkDomain {
    radius: f64,
    mask: Vec<bool>,
}

impl ShrunkDomain {
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }
}

/// Samples a gallery function at every node.
///
/// Singular entries must keep every node at least `2h` away from their
/// singular points; a violation is reported with the offending location.
pub fn sample(entry: &GalleryEntry, grid: &Grid) -> Result<ScalarField> {
    if entry.dim != grid.dim() {
        return Err(Error::Dimension {
            expected: entry.dim,
            got: grid.dim(),
        });
    }
    let clearance = 2.0 * grid.h_max();
    for s in entry.singular_points {
        for idx in grid.nodes() {
            let x = grid.coord(idx);
            if dist(&x, s) < clearance {
                return Err(Error::SingularNode {
                    entry: entry.name.to_string(),
                    index: idx,
                    point: s[..grid.dim()].to_vec(),
                    clearance,
                });
            }
        }
    }
    Ok(ScalarField::from_fn(grid, |x| entry.value(x))?.with_meta(entry.name))
}

/// `(sup u, inf u)` over the nodes.
pub fn oscillation(u: &ScalarField) -> (f64, f64) {
    u.values.iter().fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), &v| {
        (hi.max(v), lo.min(v))
    })
}

/// Mask of nodes with `dist(x, ∂Ω) > radius`. An empty mask is a valid
/// result; callers check [`ShrunkDomain::is_empty`].
pub fn shrink(grid: &Grid, radius: f64) -> Result<ShrunkDomain> {
    if !(radius >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "shrink radius must be >= 0, got {radius}"
        )));
    }
    let mask = grid
        .nodes()
        .map(|i| grid.boundary_distance(i) > radius)
        .collect();
    Ok(ShrunkDomain { radius, mask })
}

/// Independent uniform values in `[-1, 1)` at every node, drawn from
/// ChaCha8 seeded with `seed` in node order.
pub fn random_field(grid: &Grid, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = grid.nodes().map(|_| rng.gen_range(-1.0..1.0)).collect();
    ScalarField {
        grid: grid.clone(),
        values,
        meta: Some(format!("random-{seed}")),
    }
}

/// Pointwise `min(u, k)`.
pub fn truncate(u: &ScalarField, k: f64) -> ScalarField {
    ScalarField {
        grid: u.grid.clone(),
        values: u.values.iter().map(|&v| v.min(k)).collect(),
        meta: u.meta.clone(),
    }
}

pub(crate) fn dist(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a field as CSV: a `# grid:` header line, an optional `# meta:`
/// line, then one `index,x(,y),value` row per node. Numbers carry 17
/// significant digits so that reading the file back is bit-exact.
pub fn write_csv<W: Write>(u: &ScalarField, mut w: W) -> Result<()> {
    let g = &u.grid;
    let mut header: Vec<String> = vec![g.dim().to_string()];
    header.extend(g.lo().iter().map(|&v| fmt_f64(v)));
    header.extend(g.hi().iter().map(|&v| fmt_f64(v)));
    header.extend(g.shape().iter().map(|n| n.to_string()));
    writeln!(w, "# grid: {}", header.join(","))?;
    if let Some(meta) = &u.meta {
        writeln!(w, "# meta: {meta}")?;
    }
    for idx in g.nodes() {
        let x = g.coord(idx);
        let mut row = vec![idx.to_string()];
        row.extend(x[..g.dim()].iter().map(|&v| fmt_f64(v)));
        row.push(fmt_f64(u.values[idx]));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> Result<ScalarField> {
    let mut lines = r.lines().enumerate();
    let parse_err = |line: usize, msg: String| Error::Parse { line: line + 1, msg };

    let (ln, header) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty input".into()))?;
    let header = header?;
    let spec = header
        .strip_prefix("# grid: ")
        .ok_or_else(|| parse_err(ln, "missing `# grid:` header".into()))?;
    let parts: Vec<&str> = spec.split(',').collect();
    let dim: usize = parts[0]
        .trim()
        .parse()
        .map_err(|e| parse_err(ln, format!("bad dim: {e}")))?;
    if !(1..=2).contains(&dim) || parts.len() != 1 + 3 * dim {
        return Err(parse_err(ln, format!("malformed grid header `{spec}`")));
    }
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|e| parse_err(ln, format!("bad number `{s}`: {e}")))
    };
    let lo: Vec<f64> = parts[1..1 + dim].iter().map(|s| num(s)).collect::<Result<_>>()?;
    let hi: Vec<f64> = parts[1 + dim..1 + 2 * dim]
        .iter()
        .map(|s| num(s))
        .collect::<Result<_>>()?;
    let n: Vec<usize> = parts[1 + 2 * dim..]
        .iter()
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| parse_err(ln, format!("bad count `{s}`: {e}")))
        })
        .collect::<Result<_>>()?;
    let grid = Grid::new(&lo, &hi, &n)?;

    let mut meta = None;
    let mut values = vec![f64::NAN; grid.len()];
    let mut seen = 0usize;
    for (ln, line) in lines {
        let line = line?;
        if let Some(m) = line.strip_prefix("# meta: ") {
            meta = Some(m.to_string());
            continue;
        }
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != dim + 2 {
            return Err(parse_err(ln, format!("expected {} columns", dim + 2)));
        }
        let idx: usize = cols[0]
            .trim()
            .parse()
            .map_err(|e| parse_err(ln, format!("bad index: {e}")))?;
        if idx >= grid.len() {
            return Err(parse_err(ln, format!("index {idx} out of range")));
        }
        values[idx] = cols[dim + 1]
            .trim()
            .parse()
            .map_err(|e| parse_err(ln, format!("bad value: {e}")))?;
        seen += 1;
    }
    if seen != grid.len() {
        return Err(Error::ValueCount {
            expected: grid.len(),
            got: seen,
        });
    }
    let mut field = ScalarField::new(grid, values)?;
    field.meta = meta;
    Ok(field)
}
