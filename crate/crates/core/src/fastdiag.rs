//! Separable fast diagonalization of the discrete Laplacians on a box.
//!
//! Every Laplacian used here (cell-centered Neumann, cell-centered with
//! Dirichlet ghosts, face-located Dirichlet) is a Kronecker sum of 1D
//! second-difference matrices. Each 1D matrix is diagonalized by an
//! orthonormal sine or cosine basis, so any spectral function `g(−L)` can be
//! applied by transforming axis by axis, scaling, and transforming back.

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};

use crate::grid::RectDomain;

/// Boundary treatment of one axis of a lattice of unknowns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxisKind {
    /// Cell centers, zero-flux walls (cosine basis, includes the constant mode).
    NeumannCell,
    /// Cell centers, homogeneous Dirichlet wall half a cell away (ghost = −value).
    DirichletCell,
    /// Interior nodes strictly between two Dirichlet walls (`n − 1` unknowns for `n` cells).
    DirichletNode,
}

#[derive(Clone, Debug)]
struct Axis1D {
    len: usize,
    /// Row `j` = physical index, column `k` = mode.
    basis: Array2<f64>,
    basis_t: Array2<f64>,
    /// Eigenvalues of the 1D `−δ²/h²`.
    lambda: Vec<f64>,
}

impl Axis1D {
    fn new(kind: AxisKind, cells: usize, h: f64) -> Self {
        use std::f64::consts::PI;
        let n = cells as f64;
        let eig = |k: f64| (2.0 * (PI * k / (2.0 * n)).sin() / h).powi(2);
        let (len, basis, lambda): (usize, Array2<f64>, Vec<f64>) = match kind {
            AxisKind::NeumannCell => {
                let b = Array2::from_shape_fn((cells, cells), |(j, k)| {
                    let norm = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                    norm * (PI * k as f64 * (j as f64 + 0.5) / n).cos()
                });
                (cells, b, (0..cells).map(|k| eig(k as f64)).collect())
            }
            AxisKind::DirichletCell => {
                let b = Array2::from_shape_fn((cells, cells), |(j, k)| {
                    let norm = if k + 1 == cells { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                    norm * (PI * (k + 1) as f64 * (j as f64 + 0.5) / n).sin()
                });
                (cells, b, (0..cells).map(|k| eig((k + 1) as f64)).collect())
            }
            AxisKind::DirichletNode => {
                let m = cells - 1;
                let b = Array2::from_shape_fn((m, m), |(j, k)| {
                    (2.0 / n).sqrt() * (PI * ((k + 1) * (j + 1)) as f64 / n).sin()
                });
                (m, b, (0..m).map(|k| eig((k + 1) as f64)).collect())
            }
        };
        let basis_t = basis.t().to_owned();
        Self { len, basis, basis_t, lambda }
    }
}

/// Spectral calculus for a separable Laplacian on a lattice of unknowns.
#[derive(Clone, Debug)]
pub struct FastDiag {
    dims: [usize; 3],
    axes: Vec<Axis1D>,
}

impl FastDiag {
    /// `kinds[a]` describes axis `a`; `cells[a]` is the number of grid cells along it.
    pub fn new(kinds: &[AxisKind], cells: &[usize], h: f64) -> Self {
        let axes: Vec<Axis1D> = kinds.iter().zip(cells).map(|(&k, &c)| Axis1D::new(k, c, h)).collect();
        let mut dims = [1usize; 3];
        for (a, ax) in axes.iter().enumerate() {
            dims[a] = ax.len;
        }
        Self { dims, axes }
    }

    /// Cell-centered Neumann Laplacian of a domain.
    pub fn neumann(domain: &RectDomain) -> Self {
        let kinds = vec![AxisKind::NeumannCell; domain.dim()];
        Self::new(&kinds, domain.cells(), domain.h())
    }

    /// No-slip vector Laplacian restricted to component `axis` (interior faces only).
    pub fn velocity_component(domain: &RectDomain, axis: usize) -> Self {
        let kinds: Vec<AxisKind> = (0..domain.dim())
            .map(|b| if b == axis { AxisKind::DirichletNode } else { AxisKind::DirichletCell })
            .collect();
        Self::new(&kinds, domain.cells(), domain.h())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Eigenvalue of `−L` for the multi-index of mode `idx` (x fastest).
    pub fn eigenvalue(&self, idx: usize) -> f64 {
        let [d0, d1, _] = self.dims;
        let k = [idx % d0, (idx / d0) % d1, idx / (d0 * d1)];
        self.axes.iter().enumerate().map(|(a, ax)| ax.lambda[k[a]]).sum()
    }

    /// All eigenvalues of `−L`, in storage order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.eigenvalue(i)).collect()
    }

    /// Forward transform (physical → modal), in place.
    pub fn forward(&self, data: &mut [f64]) {
        for (a, ax) in self.axes.iter().enumerate() {
            apply_axis(data, self.dims, a, &ax.basis_t);
        }
    }

    /// Inverse transform (modal → physical), in place.
    pub fn inverse(&self, data: &mut [f64]) {
        for (a, ax) in self.axes.iter().enumerate() {
            apply_axis(data, self.dims, a, &ax.basis);
        }
    }

    /// `data ← g(−L) data`.
    pub fn apply_fn(&self, data: &mut [f64], g: impl Fn(f64) -> f64) {
        assert_eq!(data.len(), self.len(), "lattice size mismatch");
        self.forward(data);
        for (i, v) in data.iter_mut().enumerate() {
            *v *= g(self.eigenvalue(i));
        }
        self.inverse(data);
    }

    /// `data ← e^{tL} data`.
    pub fn heat(&self, data: &mut [f64], t: f64) {
        self.apply_fn(data, |lam| (-t * lam).exp());
    }

    /// Solves `L x = data` on the complement of the kernel; the kernel
    /// component of the solution is set to zero.
    pub fn solve(&self, data: &mut [f64]) {
        self.apply_fn(data, |lam| if lam > 0.0 { -1.0 / lam } else { 0.0 });
    }
}

/// `out[.., k, ..] = Σ_j mat[k, j] · data[.., j, ..]` along `axis`.
fn apply_axis(data: &mut [f64], dims: [usize; 3], axis: usize, mat: &Array2<f64>) {
    let [d0, d1, d2] = dims;
    match axis {
        0 => {
            let view = ArrayView2::from_shape((d1 * d2, d0), &*data).expect("shape");
            let out = view.dot(&mat.t());
            data.copy_from_slice(out.as_slice().expect("contiguous"));
        }
        1 => {
            for z in 0..d2 {
                let slab = &mut data[z * d0 * d1..(z + 1) * d0 * d1];
                let view = ArrayView2::from_shape((d1, d0), &*slab).expect("shape");
                let out = mat.dot(&view);
                let mut dst = ArrayViewMut2::from_shape((d1, d0), slab).expect("shape");
                dst.assign(&out);
            }
        }
        _ => {
            let view = ArrayView2::from_shape((d2, d0 * d1), &*data).expect("shape");
            let out = mat.dot(&view);
            let mut dst = ArrayViewMut2::from_shape((d2, d0 * d1), data).expect("shape");
            dst.slice_mut(s![.., ..]).assign(&out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ScalarField;
    use crate::operators::laplacian_neumann;

    fn orthonormal(ax: &Axis1D) -> f64 {
        let g = ax.basis.t().dot(&ax.basis);
        let mut err: f64 = 0.0;
        for ((i, j), v) in g.indexed_iter() {
            err = err.max((v - if i == j { 1.0 } else { 0.0 }).abs());
        }
        err
    }

    #[test]
    fn bases_are_orthonormal() {
        for kind in [AxisKind::NeumannCell, AxisKind::DirichletCell, AxisKind::DirichletNode] {
            let ax = Axis1D::new(kind, 13, 0.1);
            assert!(orthonormal(&ax) < 1e-13, "{kind:?}");
        }
    }

    #[test]
    fn solve_inverts_neumann_laplacian() {
        let d = RectDomain::build_grid(2.0, 1.0, 16, 8).unwrap();
        let fd = FastDiag::neumann(&d);
        let f = ScalarField::from_fn(&d, |x| (x[0] * 3.0).sin() + x[1] * x[1] * x[0]);
        let rhs = laplacian_neumann(&f);
        let mut x = rhs.values().to_vec();
        fd.solve(&mut x);
        let fm = f.mean();
        for (a, b) in x.iter().zip(f.values()) {
            assert!((a - (b - fm)).abs() < 1e-11);
        }
    }

    #[test]
    fn three_dimensional_transform_round_trip() {
        let fd = FastDiag::new(
            &[AxisKind::NeumannCell, AxisKind::DirichletCell, AxisKind::DirichletNode],
            &[5, 6, 7],
            0.2,
        );
        let orig: Vec<f64> = (0..fd.len()).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        let mut v = orig.clone();
        fd.forward(&mut v);
        fd.inverse(&mut v);
        for (a, b) in v.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
