//! Domains, structured grids, complex grid functions, and discrete norms.
//!
//! Grids are uniform tensor-product node lattices over an interval or a box;
//! ball domains carry measure/diameter information only (their PDEs are
//! handled in radial coordinates by [`crate::radial`]). Nodes are ordered
//! lexicographically with axis 0 fastest. Discrete Sobolev norms use
//! trapezoidal quadrature weights and centered difference quotients, with
//! one-sided stencils on the boundary so every grid function has a finite
//! H2 norm.

use std::io::{BufRead, Write};

use num_complex::Complex64;

use crate::{Error, Result};

/// Node-count guard for the O(N^2) Gagliardo double sum.
pub const GAGLIARDO_DEFAULT_CAP: usize = 5000;

/// Geometric shape of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    Interval,
    Box,
    Ball,
}

/// Geometric description of the domain Omega.
///
/// `extents` stores per-axis side lengths for intervals and boxes, and the
/// radius in `extents[0]` for balls. All lengths are dimensionless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub dimension: usize,
    extents: [f64; 3],
}

impl DomainSpec {
    pub fn interval(length: f64) -> Result<Self> {
        Self::new(DomainKind::Interval, 1, [length, 0.0, 0.0])
    }

    /// Axis-aligned box (0, l_1) x ... x (0, l_d) for d in 1..=3.
    pub fn box_nd(lengths: &[f64]) -> Result<Self> {
        if lengths.is_empty() || lengths.len() > 3 {
            return Err(Error::InvalidDomain(format!(
                "box dimension must be 1..=3, got {}",
                lengths.len()
            )));
        }
        let mut extents = [0.0; 3];
        extents[..lengths.len()].copy_from_slice(lengths);
        Self::new(DomainKind::Box, lengths.len(), extents)
    }

    /// Ball of radius `radius` in dimension 1..=3.
    pub fn ball(dimension: usize, radius: f64) -> Result<Self> {
        if !(1..=3).contains(&dimension) {
            return Err(Error::InvalidDomain(format!(
                "ball dimension must be 1..=3, got {dimension}"
            )));
        }
        Self::new(DomainKind::Ball, dimension, [radius, 0.0, 0.0])
    }

    fn new(kind: DomainKind, dimension: usize, extents: [f64; 3]) -> Result<Self> {
        let n_extents = match kind {
            DomainKind::Interval | DomainKind::Ball => 1,
            DomainKind::Box => dimension,
        };
        for &e in &extents[..n_extents] {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::InvalidDomain(format!(
                    "extents must be strictly positive and finite, got {e}"
                )));
            }
        }
        Ok(DomainSpec {
            kind,
            dimension,
            extents,
        })
    }

    /// Per-axis side length (interval/box only).
    pub fn extent(&self, axis: usize) -> f64 {
        match self.kind {
            DomainKind::Interval => self.extents[0],
            DomainKind::Box => self.extents[axis],
            DomainKind::Ball => panic!("ball domains have no per-axis extent"),
        }
    }

    pub fn radius(&self) -> Option<f64> {
        match self.kind {
            DomainKind::Ball => Some(self.extents[0]),
            _ => None,
        }
    }

    /// Lebesgue measure |Omega|.
    pub fn measure(&self) -> f64 {
        match self.kind {
            DomainKind::Interval => self.extents[0],
            DomainKind::Box => self.extents[..self.dimension].iter().product(),
            DomainKind::Ball => {
                let r = self.extents[0];
                match self.dimension {
                    1 => 2.0 * r,
                    2 => std::f64::consts::PI * r * r,
                    _ => 4.0 / 3.0 * std::f64::consts::PI * r * r * r,
                }
            }
        }
    }

    /// Diameter d_Omega = sup |x - y|.
    pub fn diameter(&self) -> f64 {
        match self.kind {
            DomainKind::Interval => self.extents[0],
            DomainKind::Box => self.extents[..self.dimension]
                .iter()
                .map(|l| l * l)
                .sum::<f64>()
                .sqrt(),
            DomainKind::Ball => 2.0 * self.extents[0],
        }
    }
}

/// Returns (|Omega|, d_Omega).
pub fn domain_measures(d: &DomainSpec) -> (f64, f64) {
    (d.measure(), d.diameter())
}

/// Uniform tensor-product grid over an interval or box.
///
/// Copyable by design: coordinates, weights, and index sets are derived on
/// demand from the per-axis node counts and spacings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub domain: DomainSpec,
    n: [usize; 3],
    h: [f64; 3],
}

impl Grid {
    /// Builds a Cartesian grid with `nodes[a]` nodes along axis `a`
    /// (endpoints included). Ball domains are rejected; they are handled in
    /// radial coordinates.
    pub fn cartesian(domain: DomainSpec, nodes: &[usize]) -> Result<Self> {
        if domain.kind == DomainKind::Ball {
            return Err(Error::InvalidGrid(
                "ball domains have no Cartesian grid; use the radial solver".into(),
            ));
        }
        if nodes.len() != domain.dimension {
            return Err(Error::InvalidGrid(format!(
                "expected {} per-axis node counts, got {}",
                domain.dimension,
                nodes.len()
            )));
        }
        let mut n = [1usize; 3];
        let mut h = [0.0f64; 3];
        for (a, &na) in nodes.iter().enumerate() {
            if na < 3 {
                return Err(Error::InvalidGrid(format!(
                    "need at least 3 nodes per axis, got {na}"
                )));
            }
            n[a] = na;
            h[a] = domain.extent(a) / (na - 1) as f64;
        }
        Ok(Grid { domain, n, h })
    }

    pub fn dim(&self) -> usize {
        self.domain.dimension
    }

    pub fn nodes(&self, axis: usize) -> usize {
        self.n[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    pub fn node_count(&self) -> usize {
        self.n[..self.dim()].iter().product()
    }

    pub fn interior_count(&self) -> usize {
        self.n[..self.dim()].iter().map(|&na| na - 2).product()
    }

    /// Lexicographic node index, axis 0 fastest.
    pub fn index(&self, mi: [usize; 3]) -> usize {
        let mut idx = 0;
        for a in (0..self.dim()).rev() {
            idx = idx * self.n[a] + mi[a];
        }
        idx
    }

    pub fn multi_index(&self, mut idx: usize) -> [usize; 3] {
        let mut mi = [0usize; 3];
        for a in 0..self.dim() {
            mi[a] = idx % self.n[a];
            idx /= self.n[a];
        }
        mi
    }

    pub fn coord(&self, idx: usize) -> [f64; 3] {
        let mi = self.multi_index(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim() {
            x[a] = mi[a] as f64 * self.h[a];
        }
        x
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let mi = self.multi_index(idx);
        (0..self.dim()).any(|a| mi[a] == 0 || mi[a] == self.n[a] - 1)
    }

    /// Ascending indices of the nodes on the topological boundary.
    pub fn boundary_indices(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&i| self.is_boundary(i))
            .collect()
    }

    /// Ascending indices of the interior nodes.
    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&i| !self.is_boundary(i))
            .collect()
    }

    /// Trapezoidal quadrature weight of node `idx` (product over axes).
    pub fn weight(&self, idx: usize) -> f64 {
        let mi = self.multi_index(idx);
        let mut w = 1.0;
        for a in 0..self.dim() {
            let wa = if mi[a] == 0 || mi[a] == self.n[a] - 1 {
                0.5 * self.h[a]
            } else {
                self.h[a]
            };
            w *= wa;
        }
        w
    }

    /// Grid with doubled resolution (2n-1 nodes per axis), for refinement
    /// studies.
    pub fn refined(&self) -> Grid {
        let mut n = self.n;
        let mut h = self.h;
        for a in 0..self.dim() {
            n[a] = 2 * n[a] - 1;
            h[a] = self.domain.extent(a) / (n[a] - 1) as f64;
        }
        Grid {
            domain: self.domain,
            n,
            h,
        }
    }
}

/// Which discrete Sobolev norm to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    H1,
    H2,
    LInf,
}

/// Complex-valued nodal field on a structured grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    values: Vec<Complex64>,
}

impl GridFunction {
    pub fn zeros(grid: Grid) -> Self {
        GridFunction {
            grid,
            values: vec![Complex64::ZERO; grid.node_count()],
        }
    }

    pub fn constant(grid: Grid, c: Complex64) -> Self {
        GridFunction {
            grid,
            values: vec![c; grid.node_count()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let values = (0..grid.node_count())
            .map(|i| f(&grid.coord(i)[..grid.dim()]))
            .collect();
        GridFunction { grid, values }
    }

    pub fn from_values(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "value count {} != node count {}",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn scaled(&self, c: Complex64) -> GridFunction {
        GridFunction {
            grid: self.grid,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn conjugated(&self) -> GridFunction {
        GridFunction {
            grid: self.grid,
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }

    /// self - other.
    pub fn difference(&self, other: &GridFunction) -> Result<GridFunction> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("difference of unrelated grids".into()));
        }
        Ok(GridFunction {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    /// Discrete norm per [`NormKind`]. L2 uses trapezoidal weights; H1/H2 add
    /// difference-quotient derivatives up to order 1/2; LInf is the max
    /// modulus.
    pub fn norm(&self, which: NormKind) -> f64 {
        match which {
            NormKind::LInf => self
                .values
                .iter()
                .map(|v| v.norm())
                .fold(0.0, f64::max),
            NormKind::L2 => weighted_sq(&self.grid, &self.values).sqrt(),
            NormKind::H1 => self.sobolev_sq(1).sqrt(),
            NormKind::H2 => self.sobolev_sq(2).sqrt(),
        }
    }

    fn sobolev_sq(&self, order: usize) -> f64 {
        let g = &self.grid;
        let mut total = weighted_sq(g, &self.values);
        let mut buf = vec![Complex64::ZERO; self.values.len()];
        for a in 0..g.dim() {
            diff1(g, a, &self.values, &mut buf);
            total += weighted_sq(g, &buf);
        }
        if order >= 2 {
            for a in 0..g.dim() {
                diff2(g, a, &self.values, &mut buf);
                total += weighted_sq(g, &buf);
            }
            let mut buf2 = vec![Complex64::ZERO; self.values.len()];
            for a in 0..g.dim() {
                for b in (a + 1)..g.dim() {
                    diff1(g, a, &self.values, &mut buf);
                    diff1(g, b, &buf, &mut buf2);
                    total += weighted_sq(g, &buf2);
                }
            }
        }
        total
    }

    /// Writes the node schema `index, x[, y, z], re, im`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let dim = self.grid.dim();
        let axes = ["x", "y", "z"];
        write!(out, "index")?;
        for a in &axes[..dim] {
            write!(out, ",{a}")?;
        }
        writeln!(out, ",re,im")?;
        for (i, v) in self.values.iter().enumerate() {
            let x = self.grid.coord(i);
            write!(out, "{i}")?;
            for xa in &x[..dim] {
                write!(out, ",{xa}")?;
            }
            writeln!(out, ",{},{}", v.re, v.im)?;
        }
        Ok(())
    }

    /// Reads the node schema written by [`GridFunction::write_csv`]. Node
    /// count must match the grid; coordinates are trusted, only `index`,
    /// `re`, `im` are consumed.
    pub fn read_csv<R: BufRead>(grid: Grid, reader: R) -> Result<Self> {
        let mut values = vec![Complex64::ZERO; grid.node_count()];
        let mut seen = vec![false; grid.node_count()];
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("index")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 3 {
                return Err(Error::Parse(format!(
                    "line {}: expected at least 3 fields",
                    lineno + 1
                )));
            }
            let idx: usize = fields[0]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: bad index: {e}", lineno + 1)))?;
            if idx >= values.len() {
                return Err(Error::Parse(format!(
                    "line {}: index {idx} out of range for {} nodes",
                    lineno + 1,
                    values.len()
                )));
            }
            let re: f64 = fields[fields.len() - 2]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: bad re: {e}", lineno + 1)))?;
            let im: f64 = fields[fields.len() - 1]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: bad im: {e}", lineno + 1)))?;
            values[idx] = Complex64::new(re, im);
            seen[idx] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Parse(format!("node {missing} missing from CSV")));
        }
        GridFunction::from_values(grid, values)
    }
}

fn weighted_sq(grid: &Grid, values: &[Complex64]) -> f64 {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| grid.weight(i) * v.norm_sqr())
        .sum()
}

/// First difference quotient along `axis`: centered in the interior,
/// one-sided (first order) at the two boundary layers.
pub(crate) fn diff1(grid: &Grid, axis: usize, src: &[Complex64], dst: &mut [Complex64]) {
    let stride = axis_stride(grid, axis);
    let na = grid.nodes(axis);
    let h = grid.spacing(axis);
    for idx in 0..src.len() {
        let ia = grid.multi_index(idx)[axis];
        dst[idx] = if ia == 0 {
            (src[idx + stride] - src[idx]) / h
        } else if ia == na - 1 {
            (src[idx] - src[idx - stride]) / h
        } else {
            (src[idx + stride] - src[idx - stride]) / (2.0 * h)
        };
    }
}

/// Transpose of [`diff1`] with respect to the unweighted inner product.
pub(crate) fn diff1_transpose(grid: &Grid, axis: usize, src: &[Complex64], dst: &mut [Complex64]) {
    let stride = axis_stride(grid, axis);
    let na = grid.nodes(axis);
    let h = grid.spacing(axis);
    dst.fill(Complex64::ZERO);
    for idx in 0..src.len() {
        let ia = grid.multi_index(idx)[axis];
        let v = src[idx];
        if ia == 0 {
            dst[idx + stride] += v / h;
            dst[idx] -= v / h;
        } else if ia == na - 1 {
            dst[idx] += v / h;
            dst[idx - stride] -= v / h;
        } else {
            dst[idx + stride] += v / (2.0 * h);
            dst[idx - stride] -= v / (2.0 * h);
        }
    }
}

/// Second difference quotient along `axis`: 3-point centered in the
/// interior, shifted 3-point stencil at the boundary layers.
pub(crate) fn diff2(grid: &Grid, axis: usize, src: &[Complex64], dst: &mut [Complex64]) {
    let stride = axis_stride(grid, axis);
    let na = grid.nodes(axis);
    let h2 = grid.spacing(axis) * grid.spacing(axis);
    for idx in 0..src.len() {
        let ia = grid.multi_index(idx)[axis];
        dst[idx] = if ia == 0 {
            (src[idx] - 2.0 * src[idx + stride] + src[idx + 2 * stride]) / h2
        } else if ia == na - 1 {
            (src[idx] - 2.0 * src[idx - stride] + src[idx - 2 * stride]) / h2
        } else {
            (src[idx + stride] - 2.0 * src[idx] + src[idx - stride]) / h2
        };
    }
}

/// Transpose of [`diff2`] with respect to the unweighted inner product.
pub(crate) fn diff2_transpose(grid: &Grid, axis: usize, src: &[Complex64], dst: &mut [Complex64]) {
    let stride = axis_stride(grid, axis);
    let na = grid.nodes(axis);
    let h2 = grid.spacing(axis) * grid.spacing(axis);
    dst.fill(Complex64::ZERO);
    for idx in 0..src.len() {
        let ia = grid.multi_index(idx)[axis];
        let v = src[idx] / h2;
        if ia == 0 {
            dst[idx] += v;
            dst[idx + stride] -= 2.0 * v;
            dst[idx + 2 * stride] += v;
        } else if ia == na - 1 {
            dst[idx] += v;
            dst[idx - stride] -= 2.0 * v;
            dst[idx - 2 * stride] += v;
        } else {
            dst[idx + stride] += v;
            dst[idx] -= 2.0 * v;
            dst[idx - stride] += v;
        }
    }
}

pub(crate) fn axis_stride(grid: &Grid, axis: usize) -> usize {
    let mut stride = 1;
    for a in 0..axis {
        stride *= grid.nodes(a);
    }
    stride
}

/// Brute-force Gagliardo seminorm `[u]_{s'}` with the default node cap.
pub fn gagliardo_seminorm(u: &GridFunction, s_prime: f64) -> Result<f64> {
    gagliardo_seminorm_with_cap(u, s_prime, GAGLIARDO_DEFAULT_CAP)
}

/// Brute-force double sum approximating
/// `(int int |u(x)-u(y)|^2 / |x-y|^{d+2s'} dx dy)^{1/2}`,
/// diagonal terms excluded. O(N^2); grids above `cap` nodes are rejected.
pub fn gagliardo_seminorm_with_cap(u: &GridFunction, s_prime: f64, cap: usize) -> Result<f64> {
    if !(s_prime > 0.0 && s_prime < 1.0) {
        return Err(Error::InvalidParameter {
            name: "s_prime",
            reason: format!("must lie in (0,1), got {s_prime}"),
        });
    }
    let n = u.grid.node_count();
    if n > cap {
        return Err(Error::InvalidGrid(format!(
            "gagliardo double sum needs node count <= {cap}, grid has {n}"
        )));
    }
    let g = &u.grid;
    let dim = g.dim() as f64;
    let exponent = dim + 2.0 * s_prime;
    let vals = u.values();
    let mut total = 0.0;
    for i in 0..n {
        let xi = g.coord(i);
        let wi = g.weight(i);
        for j in (i + 1)..n {
            let xj = g.coord(j);
            let mut dist_sq = 0.0;
            for a in 0..g.dim() {
                let d = xi[a] - xj[a];
                dist_sq += d * d;
            }
            let diff = (vals[i] - vals[j]).norm_sqr();
            total += 2.0 * wi * g.weight(j) * diff / dist_sq.powf(exponent / 2.0);
        }
    }
    Ok(total.sqrt())
}
