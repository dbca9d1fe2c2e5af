//! Rectangular domains, uniform MAC grids and the field containers living on them.
//!
//! Scalars sit at cell centers. Vector fields are stored face-normal on a
//! staggered (MAC) arrangement: component `a` lives on the faces orthogonal
//! to axis `a`, including the two boundary layers of faces. Cell storage is
//! x-fastest: `idx = i + nx * (j + ny * k)`.
//!
//! All integrals use the midpoint rule, i.e. `∫f ≈ h^N Σ f_cell`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ISOTROPY_TOL: f64 = 1e-12;
const MIN_CELLS: usize = 4;

/// Axis-aligned box `[0, Lx] × [0, Ly] (× [0, Lz])` with a uniform isotropic grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectDomain {
    dim: usize,
    lengths: [f64; 3],
    cells: [usize; 3],
    h: f64,
}

impl RectDomain {
    /// Two-dimensional grid with `nx × ny` cells.
    pub fn build_grid(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::new(&[lx, ly], &[nx, ny])
    }

    /// Grid of dimension `lengths.len()` (2 or 3).
    pub fn new(lengths: &[f64], cells: &[usize]) -> Result<Self> {
        let dim = lengths.len();
        if !(dim == 2 || dim == 3) || cells.len() != dim {
            return Err(Error::Grid(format!(
                "expected 2 or 3 axes with matching cell counts, got {} lengths and {} counts",
                lengths.len(),
                cells.len()
            )));
        }
        for a in 0..dim {
            if !(lengths[a].is_finite() && lengths[a] > 0.0) {
                return Err(Error::Grid(format!("length on axis {a} must be positive, got {}", lengths[a])));
            }
            if cells[a] < MIN_CELLS {
                return Err(Error::Grid(format!(
                    "axis {a} needs at least {MIN_CELLS} cells, got {}",
                    cells[a]
                )));
            }
        }
        let h = lengths[0] / cells[0] as f64;
        for a in 1..dim {
            let ha = lengths[a] / cells[a] as f64;
            if ((ha - h) / h).abs() > ISOTROPY_TOL {
                return Err(Error::Grid(format!(
                    "anisotropic spacing: h[0] = {h}, h[{a}] = {ha}"
                )));
            }
        }
        let mut l3 = [h; 3];
        let mut c3 = [1usize; 3];
        l3[..dim].copy_from_slice(lengths);
        c3[..dim].copy_from_slice(cells);
        Ok(Self { dim, lengths: l3, cells: c3, h })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Grid spacing.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    /// Cell counts padded to three axes (trailing axes have one cell).
    pub fn cells3(&self) -> [usize; 3] {
        self.cells
    }

    pub fn n_cells(&self) -> usize {
        self.cells.iter().product()
    }

    /// |Ω|
    pub fn volume(&self) -> f64 {
        self.lengths().iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn strides(&self) -> [usize; 3] {
        [1, self.cells[0], self.cells[0] * self.cells[1]]
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.cells;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        c[0] + self.cells[0] * (c[1] + self.cells[1] * c[2])
    }

    pub fn cell_center(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = (c[a] as f64 + 0.5) * self.h;
        }
        x
    }

    /// Shape of the face lattice carrying component `axis`.
    pub fn face_dims(&self, axis: usize) -> [usize; 3] {
        let mut d = self.cells;
        d[axis] += 1;
        d
    }

    pub fn face_count(&self, axis: usize) -> usize {
        self.face_dims(axis).iter().product()
    }

    pub fn face_strides(&self, axis: usize) -> [usize; 3] {
        let d = self.face_dims(axis);
        [1, d[0], d[0] * d[1]]
    }

    pub fn face_coords(&self, axis: usize, fidx: usize) -> [usize; 3] {
        let d = self.face_dims(axis);
        [fidx % d[0], (fidx / d[0]) % d[1], fidx / (d[0] * d[1])]
    }

    pub fn face_index(&self, axis: usize, c: [usize; 3]) -> usize {
        let d = self.face_dims(axis);
        c[0] + d[0] * (c[1] + d[1] * c[2])
    }

    pub fn face_center(&self, axis: usize, fidx: usize) -> [f64; 3] {
        let c = self.face_coords(axis, fidx);
        let mut x = [0.0; 3];
        for b in 0..self.dim {
            x[b] = if b == axis {
                c[b] as f64 * self.h
            } else {
                (c[b] as f64 + 0.5) * self.h
            };
        }
        x
    }

    /// True when the face lies on ∂Ω.
    pub fn is_boundary_face(&self, axis: usize, fidx: usize) -> bool {
        let c = self.face_coords(axis, fidx);
        c[axis] == 0 || c[axis] == self.cells[axis]
    }

    /// Distance from `x` to the nearest wall.
    pub fn wall_distance(&self, x: [f64; 3]) -> f64 {
        (0..self.dim)
            .map(|a| x[a].min(self.lengths[a] - x[a]))
            .fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn ensure_same(&self, other: &RectDomain, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::DomainMismatch(what.to_string()))
        }
    }
}

/// Midpoint-rule `L^p` norm of a list of nonnegative magnitudes.
pub(crate) fn lp_of_magnitudes(mags: impl Iterator<Item = f64> + Clone, p: f64, cell_volume: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidArgument(format!("L^p norm needs p >= 1, got {p}")));
    }
    let peak = mags.clone().fold(0.0, f64::max);
    if p.is_infinite() || peak == 0.0 {
        return Ok(peak);
    }
    // scale by the peak so tiny fields do not underflow in |v|^p
    let sum: f64 = mags.map(|m| (m / peak).powf(p)).sum();
    Ok(peak * (sum * cell_volume).powf(1.0 / p))
}

/// Cell-centered scalar field.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    domain: RectDomain,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(domain: &RectDomain) -> Self {
        Self::constant(domain, 0.0)
    }

    pub fn constant(domain: &RectDomain, value: f64) -> Self {
        Self { domain: *domain, values: vec![value; domain.n_cells()] }
    }

    /// Samples `f` at cell centers.
    pub fn from_fn(domain: &RectDomain, mut f: impl FnMut([f64; 3]) -> f64) -> Self {
        let values = (0..domain.n_cells()).map(|i| f(domain.cell_center(i))).collect();
        Self { domain: *domain, values }
    }

    pub fn from_values(domain: &RectDomain, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.n_cells() {
            return Err(Error::Grid(format!(
                "expected {} cell values, got {}",
                domain.n_cells(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scalar field".into()));
        }
        Ok(Self { domain: *domain, values })
    }

    pub fn domain(&self) -> &RectDomain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `∫_Ω f`
    pub fn integral(&self) -> f64 {
        self.sum() * self.domain.cell_volume()
    }

    /// `(1/|Ω|) ∫_Ω f`
    pub fn mean(&self) -> f64 {
        self.integral() / self.domain.volume()
    }

    /// Midpoint `L^p` norm; `p = f64::INFINITY` gives `max |f|`.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        lp_of_magnitudes(self.values.iter().map(|v| v.abs()), p, self.domain.cell_volume())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Discrete `L²` inner product.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.domain.cell_volume()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { domain: self.domain, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &ScalarField) {
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
    }

    /// `a * self + b * other`
    pub fn lin_comb(&self, a: f64, other: &ScalarField, b: f64) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Self { domain: self.domain, values }
    }

    pub fn add_constant(&mut self, c: f64) {
        for v in &mut self.values {
            *v += c;
        }
    }
}

/// Face-normal vector field on the staggered grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    domain: RectDomain,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(domain: &RectDomain) -> Self {
        let comps = (0..domain.dim()).map(|a| vec![0.0; domain.face_count(a)]).collect();
        Self { domain: *domain, comps }
    }

    /// Samples the normal component `f(axis, x)` at every face center.
    pub fn from_fn(domain: &RectDomain, mut f: impl FnMut(usize, [f64; 3]) -> f64) -> Self {
        let comps = (0..domain.dim())
            .map(|a| (0..domain.face_count(a)).map(|fi| f(a, domain.face_center(a, fi))).collect())
            .collect();
        Self { domain: *domain, comps }
    }

    /// Two-dimensional velocity `(∂ψ/∂y, −∂ψ/∂x)` differenced from node values of a
    /// stream function; its discrete divergence vanishes identically. Normal
    /// components on walls are set to zero.
    pub fn from_stream_function(domain: &RectDomain, psi: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if domain.dim() != 2 {
            return Err(Error::InvalidArgument("stream functions are two-dimensional".into()));
        }
        let h = domain.h();
        let mut v = Self::zeros(domain);
        for a in 0..2 {
            for fi in 0..domain.face_count(a) {
                if domain.is_boundary_face(a, fi) {
                    continue;
                }
                let c = domain.face_coords(a, fi);
                let (xi, yj) = (c[0] as f64 * h, c[1] as f64 * h);
                v.comps[a][fi] = if a == 0 {
                    (psi(xi, yj + h) - psi(xi, yj)) / h
                } else {
                    -(psi(xi + h, yj) - psi(xi, yj)) / h
                };
            }
        }
        Ok(v)
    }

    pub fn from_components(domain: &RectDomain, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != domain.dim() || (0..domain.dim()).any(|a| comps[a].len() != domain.face_count(a)) {
            return Err(Error::Grid("vector field component sizes do not match face counts".into()));
        }
        if comps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector field".into()));
        }
        Ok(Self { domain: *domain, comps })
    }

    pub fn domain(&self) -> &RectDomain {
        &self.domain
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.comps[axis]
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.comps[axis]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|v| v.is_finite())
    }

    /// Zeroes the normal component on every wall face (no penetration).
    pub fn zero_boundary_faces(&mut self) {
        let d = self.domain;
        for a in 0..d.dim() {
            for fi in 0..d.face_count(a) {
                if d.is_boundary_face(a, fi) {
                    self.comps[a][fi] = 0.0;
                }
            }
        }
    }

    /// Face-based discrete `L²` inner product.
    pub fn inner(&self, other: &VectorField) -> f64 {
        let s: f64 = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        s * self.domain.cell_volume()
    }

    /// Face-based discrete `L²` norm (kinetic-energy norm).
    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Face values averaged to cell centers.
    pub fn center_values(&self) -> Vec<[f64; 3]> {
        let d = &self.domain;
        let mut out = vec![[0.0; 3]; d.n_cells()];
        for a in 0..d.dim() {
            let fs = d.face_strides(a);
            for (idx, o) in out.iter_mut().enumerate() {
                let c = d.coords(idx);
                let lo = d.face_index(a, c);
                o[a] = 0.5 * (self.comps[a][lo] + self.comps[a][lo + fs[a]]);
            }
        }
        out
    }

    /// Euclidean magnitude of the center-averaged field.
    pub fn magnitude(&self) -> ScalarField {
        let values = self
            .center_values()
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .collect();
        ScalarField { domain: self.domain, values }
    }

    /// `L^p` norm of the center-averaged magnitude.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        self.magnitude().lp_norm(p)
    }

    pub fn scaled(&self, a: f64) -> Self {
        let comps = self.comps.iter().map(|c| c.iter().map(|v| a * v).collect()).collect();
        Self { domain: self.domain, comps }
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &VectorField) {
        for (s, o) in self.comps.iter_mut().zip(&other.comps) {
            for (x, y) in s.iter_mut().zip(o) {
                *x += a * y;
            }
        }
    }

    pub fn lin_comb(&self, a: f64, other: &VectorField, b: f64) -> Self {
        let mut out = self.scaled(a);
        out.axpy(b, other);
        out
    }
}

/// Read access to cell values, shared by plain fields and [`OffsetField`].
pub trait CellValues {
    fn grid(&self) -> &RectDomain;
    fn cell(&self, idx: usize) -> f64;
    /// Value up to a field-wide constant; differences of it are exact differences of the field.
    fn varying(&self, idx: usize) -> f64 {
        self.cell(idx)
    }
}

impl CellValues for ScalarField {
    fn grid(&self) -> &RectDomain {
        &self.domain
    }

    fn cell(&self, idx: usize) -> f64 {
        self.values[idx]
    }
}

/// A scalar stored as a constant level plus a deviation field.
///
/// The bacterial density is kept in this form so that `n − n̄` can decay far
/// below the rounding level of `n̄` without being swamped by it.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField {
    pub level: f64,
    pub deviation: ScalarField,
}

impl OffsetField {
    /// Splits `f` into its mean and the remainder.
    pub fn from_field(f: &ScalarField) -> Self {
        let level = f.mean();
        Self { level, deviation: f.map(|v| v - level) }
    }

    pub fn to_field(&self) -> ScalarField {
        self.deviation.map(|v| v + self.level)
    }

    pub fn domain(&self) -> &RectDomain {
        self.deviation.domain()
    }

    pub fn mean(&self) -> f64 {
        self.level + self.deviation.mean()
    }

    pub fn integral(&self) -> f64 {
        self.level * self.domain().volume() + self.deviation.integral()
    }

    pub fn min(&self) -> f64 {
        self.level + self.deviation.min()
    }

    /// Moves the mean of the deviation into the level.
    pub fn rebalance(&mut self) {
        let m = self.deviation.mean();
        self.level += m;
        self.deviation.add_constant(-m);
    }

    pub fn is_finite(&self) -> bool {
        self.level.is_finite() && self.deviation.is_finite()
    }

    /// `f − mean(f)` computed without ever forming `level + deviation`.
    pub fn centered(&self) -> ScalarField {
        let m = self.deviation.mean();
        self.deviation.map(|v| v - m)
    }
}

impl CellValues for OffsetField {
    fn grid(&self) -> &RectDomain {
        self.deviation.domain()
    }

    fn cell(&self, idx: usize) -> f64 {
        self.level + self.deviation.values()[idx]
    }

    fn varying(&self, idx: usize) -> f64 {
        self.deviation.values()[idx]
    }
}

/// Snapshot `(n, c, u, t)` of the coupled system.
///
/// Both scalars are stored as level plus deviation, so that their spatial
/// fluctuations keep full relative precision while they decay.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub n: OffsetField,
    pub c: OffsetField,
    pub u: VectorField,
    pub t: f64,
}

impl SystemState {
    pub fn new(n: &ScalarField, c: &ScalarField, u: VectorField) -> Result<Self> {
        let d = n.domain();
        d.ensure_same(c.domain(), "n and c live on different grids")?;
        d.ensure_same(u.domain(), "n and u live on different grids")?;
        if !(n.is_finite() && c.is_finite() && u.is_finite()) {
            return Err(Error::NonFinite("initial state".into()));
        }
        if n.min() < 0.0 {
            return Err(Error::InvalidArgument(format!("initial n must be nonnegative, min = {}", n.min())));
        }
        if c.min() < 0.0 {
            return Err(Error::InvalidArgument(format!("initial c must be nonnegative, min = {}", c.min())));
        }
        Ok(Self { n: OffsetField::from_field(n), c: OffsetField::from_field(c), u, t: 0.0 })
    }

    pub fn domain(&self) -> &RectDomain {
        self.c.domain()
    }

    pub fn is_finite(&self) -> bool {
        self.n.is_finite() && self.c.is_finite() && self.u.is_finite() && self.t.is_finite()
    }
}
