//! Finite-volume operators on the MAC grid.
//!
//! Conventions: a cell-centered Laplacian with reflected ghosts, face
//! gradients that vanish on walls, and flux-form divergences. Together they
//! satisfy `divergence(grad_to_faces(f)) == laplacian_neumann(f)` and every
//! flux-form operator sums to zero over the cells.

use crate::error::{Error, Result};
use crate::grid::{CellValues, RectDomain, ScalarField, VectorField};
use crate::sensitivity::SensitivitySpec;

/// Relative and absolute parts of the admissible discrete divergence.
pub const DIV_TOL_REL: f64 = 1e-9;
pub const DIV_TOL_ABS: f64 = 1e-12;

/// Boundary-face treatment for [`grad_to_faces`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    /// Zero normal derivative on walls.
    Neumann,
    /// Wall faces copy the nearest interior difference (used for potentials).
    OneSided,
}

pub(crate) fn laplacian_raw(d: &RectDomain, f: &[f64], out: &mut [f64]) {
    let cells = d.cells3();
    let strides = d.strides();
    let ih2 = 1.0 / (d.h() * d.h());
    for (idx, o) in out.iter_mut().enumerate() {
        let c = d.coords(idx);
        let fc = f[idx];
        let mut acc = 0.0;
        for a in 0..d.dim() {
            if c[a] > 0 {
                acc += f[idx - strides[a]] - fc;
            }
            if c[a] + 1 < cells[a] {
                acc += f[idx + strides[a]] - fc;
            }
        }
        *o = acc * ih2;
    }
}

/// Neumann Laplacian (2N+1-point stencil, reflected ghosts).
pub fn laplacian_neumann(f: &ScalarField) -> ScalarField {
    let d = *f.domain();
    let mut out = vec![0.0; d.n_cells()];
    laplacian_raw(&d, f.values(), &mut out);
    ScalarField::from_values(&d, out).expect("finite input gives finite output")
}

/// Centered face differences of a cell field.
pub fn grad_to_faces(f: &ScalarField, mode: GradMode) -> VectorField {
    let d = *f.domain();
    let mut g = VectorField::zeros(&d);
    grad_raw(&d, f.values(), mode, &mut g);
    g
}

pub(crate) fn grad_raw(d: &RectDomain, f: &[f64], mode: GradMode, g: &mut VectorField) {
    let h = d.h();
    let strides = d.strides();
    let cells = d.cells3();
    for a in 0..d.dim() {
        let comp = g.component_mut(a);
        let n = cells[a];
        for (fi, gv) in comp.iter_mut().enumerate() {
            let mut c = d.face_coords(a, fi);
            let k = c[a];
            if k == 0 || k == n {
                *gv = match mode {
                    GradMode::Neumann => 0.0,
                    GradMode::OneSided => {
                        c[a] = if k == 0 { 1 } else { n - 1 };
                        let hi = d.index(c);
                        (f[hi] - f[hi - strides[a]]) / h
                    }
                };
            } else {
                let hi = d.index(c);
                *gv = (f[hi] - f[hi - strides[a]]) / h;
            }
        }
    }
}

pub(crate) fn divergence_raw(v: &VectorField, out: &mut [f64]) {
    let d = *v.domain();
    let ih = 1.0 / d.h();
    out.iter_mut().for_each(|o| *o = 0.0);
    for a in 0..d.dim() {
        let comp = v.component(a);
        let fs = d.face_strides(a)[a];
        for (idx, o) in out.iter_mut().enumerate() {
            let lo = d.face_index(a, d.coords(idx));
            *o += (comp[lo + fs] - comp[lo]) * ih;
        }
    }
}

/// Net outward face flux per cell divided by `h`.
pub fn divergence(v: &VectorField) -> ScalarField {
    let d = *v.domain();
    let mut out = vec![0.0; d.n_cells()];
    divergence_raw(v, &mut out);
    ScalarField::from_values(&d, out).expect("finite input gives finite output")
}

/// `max |∇·v|` and the admissible bound `1e−9·‖v‖₂ + 1e−12`.
pub fn divergence_check(v: &VectorField) -> (f64, f64) {
    let max_div = divergence(v).max_abs();
    (max_div, DIV_TOL_REL * v.l2_norm() + DIV_TOL_ABS)
}

pub(crate) fn ensure_solenoidal(v: &VectorField) -> Result<()> {
    let (max_div, limit) = divergence_check(v);
    if max_div > limit {
        return Err(Error::Divergence { max_div, limit });
    }
    Ok(())
}

/// Face value of a transported quantity: `κ`·central + `(1−κ)`·upwind.
#[inline]
fn blend(w: f64, left: f64, right: f64, kappa: f64) -> f64 {
    let up = if w >= 0.0 { left } else { right };
    kappa * 0.5 * (left + right) + (1.0 - kappa) * up
}

/// `∇·(f u)` without the solenoidality check.
pub(crate) fn advect_raw(u: &VectorField, f: &[f64], kappa: f64, out: &mut [f64]) {
    let d = *u.domain();
    let ih = 1.0 / d.h();
    let strides = d.strides();
    let cells = d.cells3();
    out.iter_mut().for_each(|o| *o = 0.0);
    for a in 0..d.dim() {
        let comp = u.component(a);
        let n = cells[a];
        for (fi, &w) in comp.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let c = d.face_coords(a, fi);
            if c[a] == 0 || c[a] == n {
                continue;
            }
            let hi = d.index(c);
            let lo = hi - strides[a];
            let flux = w * blend(w, f[lo], f[hi], kappa) * ih;
            out[lo] += flux;
            out[hi] -= flux;
        }
    }
}

/// Conservative transport `∇·(f u)` with the blended central/upwind face value.
///
/// Requires a discretely solenoidal `u` with vanishing wall-normal components.
pub fn advect_scalar(u: &VectorField, f: &ScalarField, kappa: f64) -> Result<ScalarField> {
    u.domain().ensure_same(f.domain(), "advect_scalar: u and f")?;
    check_kappa(kappa)?;
    ensure_solenoidal(u)?;
    let mut out = vec![0.0; f.len()];
    advect_raw(u, f.values(), kappa, &mut out);
    ScalarField::from_values(f.domain(), out)
}

pub(crate) fn check_kappa(kappa: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::InvalidArgument(format!("advection blend must lie in [0, 1], got {kappa}")));
    }
    Ok(())
}

/// Centered cell-center difference of `f` along `axis` with reflected ghosts.
#[inline]
fn centered_diff(d: &RectDomain, f: &impl CellValues, idx: usize, axis: usize) -> f64 {
    let c = d.coords(idx)[axis];
    let s = d.strides()[axis];
    let n = d.cells3()[axis];
    let lo = if c > 0 { f.varying(idx - s) } else { f.varying(idx) };
    let hi = if c + 1 < n { f.varying(idx + s) } else { f.varying(idx) };
    (hi - lo) / (2.0 * d.h())
}

/// Face fluxes `n_f · (S ∇c)_f · e_a` on interior faces, zero on walls.
///
/// `∇c` on a face uses the normal difference across it and the average of
/// the two adjacent centered differences for tangential directions; `n` and
/// `c` are averaged to the face and `S` is evaluated at the face center.
pub fn chemo_face_flux(n: &impl CellValues, c: &impl CellValues, s: &SensitivitySpec) -> Result<VectorField> {
    let d = *n.grid();
    let mut flux = VectorField::zeros(&d);
    if s.is_zero() {
        return Ok(flux);
    }
    let h = d.h();
    let strides = d.strides();
    let cells = d.cells3();
    let dim = d.dim();
    for a in 0..dim {
        let comp = flux.component_mut(a);
        for (fi, out) in comp.iter_mut().enumerate() {
            let fc = d.face_coords(a, fi);
            if fc[a] == 0 || fc[a] == cells[a] {
                continue;
            }
            let hi = d.index(fc);
            let lo = hi - strides[a];
            let mut g = [0.0; 3];
            g[a] = (c.varying(hi) - c.varying(lo)) / h;
            for b in (0..dim).filter(|&b| b != a) {
                g[b] = 0.5 * (centered_diff(&d, c, lo, b) + centered_diff(&d, c, hi, b));
            }
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let nf = 0.5 * (n.cell(lo) + n.cell(hi));
            let cf = 0.5 * (c.cell(lo) + c.cell(hi));
            let t = s.eval_tensor(d.face_center(a, fi), nf, cf)?;
            let sg: f64 = (0..dim).map(|b| t[a][b] * g[b]).sum();
            *out = nf * sg;
        }
    }
    Ok(flux)
}

/// `∇·(n S(x, n, c) ∇c)` in flux form with zero total flux through walls.
///
/// The no-flux condition `(∇n − nS∇c)·ν = 0` is imposed by giving both the
/// diffusive and the chemotactic wall fluxes the value zero, so the pairing
/// with [`laplacian_neumann`] conserves `∫n` exactly.
pub fn chemo_flux_div(n: &impl CellValues, c: &impl CellValues, s: &SensitivitySpec) -> Result<ScalarField> {
    n.grid().ensure_same(c.grid(), "chemo_flux_div: n and c")?;
    n.grid().ensure_same(s.domain(), "chemo_flux_div: fields and sensitivity")?;
    let flux = chemo_face_flux(n, c, s)?;
    Ok(divergence(&flux))
}

/// Momentum transport `∇·(u ⊗ u)` on the faces (interior faces only).
pub(crate) fn momentum_advection(u: &VectorField, kappa: f64) -> VectorField {
    let d = *u.domain();
    let dim = d.dim();
    let ih = 1.0 / d.h();
    let cells = d.cells3();
    let mut out = VectorField::zeros(&d);
    for a in 0..dim {
        let ua = u.component(a);
        let fs_a = d.face_strides(a);
        let res = out.component_mut(a);
        // normal direction: fluxes at cell centers
        for idx in 0..d.n_cells() {
            let c = d.coords(idx);
            let lo = d.face_index(a, c);
            let hi = lo + fs_a[a];
            let w = 0.5 * (ua[lo] + ua[hi]);
            let flux = w * blend(w, ua[lo], ua[hi], kappa) * ih;
            if c[a] > 0 {
                res[lo] += flux;
            }
            if c[a] + 1 < cells[a] {
                res[hi] -= flux;
            }
        }
        // tangential directions: fluxes at edges between a-faces
        for b in (0..dim).filter(|&b| b != a) {
            let ub = u.component(b);
            let fs_b = d.face_strides(b);
            for (fi, r) in res.iter_mut().enumerate() {
                let fc = d.face_coords(a, fi);
                if fc[a] == 0 || fc[a] == cells[a] {
                    continue;
                }
                // edges below (j) and above (j+1) the face along b
                let mut edge_flux = [0.0; 2];
                for (e, j) in [fc[b], fc[b] + 1].into_iter().enumerate() {
                    if j == 0 || j == cells[b] {
                        continue;
                    }
                    // transport velocity: u_b at the b-faces of the two cells sharing the a-face
                    let mut bc = fc;
                    bc[b] = j;
                    bc[a] = fc[a] - 1;
                    let b_lo = d.face_index(b, bc);
                    let w = 0.5 * (ub[b_lo] + ub[b_lo + fs_b[a]]);
                    // transported: u_a on the a-faces below and above the edge
                    let mut ac = fc;
                    ac[b] = j - 1;
                    let below = ua[d.face_index(a, ac)];
                    let above = ua[d.face_index(a, ac) + fs_a[b]];
                    edge_flux[e] = w * blend(w, below, above, kappa);
                }
                *r += (edge_flux[1] - edge_flux[0]) * ih;
            }
        }
    }
    out
}

/// No-slip vector Laplacian on interior faces; wall faces are zero.
pub(crate) fn vector_laplacian(u: &VectorField) -> VectorField {
    let d = *u.domain();
    let ih2 = 1.0 / (d.h() * d.h());
    let cells = d.cells3();
    let mut out = VectorField::zeros(&d);
    for a in 0..d.dim() {
        let ua = u.component(a);
        let fs = d.face_strides(a);
        let res = out.component_mut(a);
        for (fi, r) in res.iter_mut().enumerate() {
            let fc = d.face_coords(a, fi);
            if fc[a] == 0 || fc[a] == cells[a] {
                continue;
            }
            let v = ua[fi];
            let mut acc = ua[fi - fs[a]] + ua[fi + fs[a]] - 2.0 * v;
            for b in (0..d.dim()).filter(|&b| b != a) {
                let lo = if fc[b] > 0 { ua[fi - fs[b]] } else { -v };
                let hi = if fc[b] + 1 < cells[b] { ua[fi + fs[b]] } else { -v };
                acc += lo + hi - 2.0 * v;
            }
            *r = acc * ih2;
        }
    }
    out
}

/// Cell-center gradient of `f` (face gradients averaged to centers).
pub fn center_gradient(f: &ScalarField) -> Vec<[f64; 3]> {
    grad_to_faces(f, GradMode::Neumann).center_values()
}

/// `|∇f|` at cell centers (face gradients averaged to centers).
pub fn gradient_magnitude(f: &ScalarField) -> ScalarField {
    let d = *f.domain();
    let vals = center_gradient(f).iter().map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    ScalarField::from_values(&d, vals).expect("finite input gives finite output")
}

/// Frobenius norm of the cell-center velocity gradient; tangential
/// differences use no-slip ghosts (`−u`) across walls.
pub fn velocity_gradient_norm(u: &VectorField) -> ScalarField {
    let d = *u.domain();
    let h = d.h();
    let centers = u.center_values();
    let strides = d.strides();
    let cells = d.cells3();
    let mut out = vec![0.0; d.n_cells()];
    for (idx, o) in out.iter_mut().enumerate() {
        let c = d.coords(idx);
        let mut s = 0.0;
        for a in 0..d.dim() {
            let ua = u.component(a);
            let lo = d.face_index(a, c);
            let dn = (ua[lo + d.face_strides(a)[a]] - ua[lo]) / h;
            s += dn * dn;
            for b in (0..d.dim()).filter(|&b| b != a) {
                let v = centers[idx][a];
                let lo = if c[b] > 0 { centers[idx - strides[b]][a] } else { -v };
                let hi = if c[b] + 1 < cells[b] { centers[idx + strides[b]][a] } else { -v };
                let g = (hi - lo) / (2.0 * h);
                s += g * g;
            }
        }
        *o = s.sqrt();
    }
    ScalarField::from_values(&d, out).expect("finite input gives finite output")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::OffsetField;
    use crate::sensitivity::SensitivityKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit(n: usize) -> RectDomain {
        RectDomain::build_grid(1.0, 1.0, n, n).unwrap()
    }

    fn random_field(d: &RectDomain, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..d.n_cells()).map(|_| rng.random_range(-1.0..1.0)).collect();
        ScalarField::from_values(d, v).unwrap()
    }

    fn stream_velocity(d: &RectDomain) -> VectorField {
        VectorField::from_stream_function(d, |x, y| (PI * x).sin().powi(2) * (PI * y).sin().powi(2) * (1.0 + x)).unwrap()
    }

    #[test]
    fn laplacian_of_constant_vanishes() {
        let d = unit(12);
        let l = laplacian_neumann(&ScalarField::constant(&d, 4.2));
        assert_eq!(l.max_abs(), 0.0);
    }

    #[test]
    fn laplacian_cosine_second_order() {
        let err = |n: usize| {
            let d = unit(n);
            let f = ScalarField::from_fn(&d, |x| (PI * x[0]).cos());
            let l = laplacian_neumann(&f);
            l.values()
                .iter()
                .zip(f.values())
                .map(|(a, b)| (a + PI * PI * b).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(32), err(64));
        let ratio = e1 / e2;
        assert!((3.6..4.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn gradient_examples() {
        let d = unit(16);
        let lin = ScalarField::from_fn(&d, |x| 2.0 * x[0] - 3.0 * x[1]);
        let g = grad_to_faces(&lin, GradMode::OneSided);
        assert!(g.component(0).iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert!(g.component(1).iter().all(|v| (v + 3.0).abs() < 1e-12));
        let z = grad_to_faces(&ScalarField::constant(&d, 1.5), GradMode::Neumann);
        assert_eq!(z.max_abs(), 0.0);

        let d = unit(64);
        let f = ScalarField::from_fn(&d, |x| (PI * x[0]).cos());
        let g = grad_to_faces(&f, GradMode::Neumann);
        for fi in 0..d.face_count(0) {
            if d.is_boundary_face(0, fi) {
                continue;
            }
            let x = d.face_center(0, fi)[0];
            assert!((g.component(0)[fi] + PI * (PI * x).sin()).abs() < 2e-3);
        }
    }

    #[test]
    fn divergence_of_gradient_is_laplacian() {
        let d = RectDomain::build_grid(2.0, 1.0, 20, 10).unwrap();
        let f = random_field(&d, 3);
        let a = divergence(&grad_to_faces(&f, GradMode::Neumann));
        let b = laplacian_neumann(&f);
        let scale = b.max_abs();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn translation_field_has_zero_interior_divergence() {
        let d = unit(10);
        let mut u = VectorField::from_fn(&d, |a, _| if a == 0 { 1.0 } else { 0.0 });
        u.zero_boundary_faces();
        let div = divergence(&u);
        for idx in 0..d.n_cells() {
            let c = d.coords(idx);
            if c[0] > 0 && c[0] + 1 < 10 {
                assert_eq!(div.values()[idx], 0.0);
            }
        }
    }

    #[test]
    fn advection_examples() {
        let d = unit(24);
        let zero = VectorField::zeros(&d);
        let f = random_field(&d, 1);
        assert_eq!(advect_scalar(&zero, &f, 0.9).unwrap().max_abs(), 0.0);

        let u = stream_velocity(&d);
        let c = advect_scalar(&u, &ScalarField::constant(&d, 2.5), 0.9).unwrap();
        assert!(c.max_abs() < 1e-11);

        let a = advect_scalar(&u, &f, 0.9).unwrap();
        assert!(a.sum().abs() < 1e-11 * a.max_abs().max(1.0));

        let bad = VectorField::from_fn(&d, |_, x| x[0]);
        assert!(matches!(advect_scalar(&bad, &f, 0.9), Err(Error::Divergence { .. })));
        assert!(advect_scalar(&u, &f, 1.5).is_err());
    }

    #[test]
    fn chemo_flux_examples() {
        let d = unit(16);
        let n = ScalarField::from_fn(&d, |x| 1.0 + 0.2 * x[1]);
        let c = ScalarField::from_fn(&d, |x| 1.0 + (PI * x[0]).cos() * (2.0 * PI * x[1]).cos());
        let zero = SensitivitySpec::zero(&d);
        assert_eq!(chemo_flux_div(&n, &c, &zero).unwrap().max_abs(), 0.0);
        let rot = SensitivitySpec::rotation(&d, 0.3, 0.7).unwrap();
        let flat = ScalarField::constant(&d, 0.4);
        assert_eq!(chemo_flux_div(&n, &flat, &rot).unwrap().max_abs(), 0.0);
        let q = chemo_flux_div(&n, &c, &rot).unwrap();
        assert!(q.max_abs() > 0.0);
        assert!(q.sum().abs() < 1e-12 * q.max_abs() * d.n_cells() as f64);
        let o = OffsetField::from_field(&n);
        let q2 = chemo_flux_div(&o, &c, &rot).unwrap();
        for (a, b) in q.values().iter().zip(q2.values()) {
            assert!((a - b).abs() < 1e-12 * q.max_abs());
        }
    }

    #[test]
    fn chemo_flux_vanishes_inside_the_cutoff_band() {
        let d = unit(32);
        let eta = 0.2;
        let s = SensitivitySpec::new(SensitivityKind::Rotation, 0.5, 1.0, 0.5 * 2f64.sqrt(), eta, &d).unwrap();
        let n = ScalarField::from_fn(&d, |x| 1.0 + x[0] * x[1]);
        let c = ScalarField::from_fn(&d, |x| (3.0 * x[0]).sin() + (2.0 * x[1]).cos());
        let q = chemo_flux_div(&n, &c, &s).unwrap();
        let h = d.h();
        for idx in 0..d.n_cells() {
            let x = d.cell_center(idx);
            if d.wall_distance(x) + 0.5 * h <= 0.5 * eta {
                assert_eq!(q.values()[idx], 0.0);
            }
        }
    }

    #[test]
    fn central_momentum_advection_conserves_energy() {
        let d = unit(16);
        let z = momentum_advection(&VectorField::zeros(&d), 0.9);
        assert_eq!(z.max_abs(), 0.0);
        let u = stream_velocity(&d);
        let m = momentum_advection(&u, 1.0);
        let e = m.inner(&u);
        assert!(e.abs() < 1e-12 * m.l2_norm() * u.l2_norm(), "{e}");
    }

    #[test]
    fn vector_laplacian_is_symmetric_negative() {
        let d = unit(12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rand_vec = || {
            let mut v = VectorField::from_fn(&d, |_, _| rng.random_range(-1.0..1.0));
            v.zero_boundary_faces();
            v
        };
        let (u, v) = (rand_vec(), rand_vec());
        let a = vector_laplacian(&u).inner(&v);
        let b = u.inner(&vector_laplacian(&v));
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        assert!(vector_laplacian(&u).inner(&u) < 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn laplacian_properties(seed in any::<u64>(), nx in 4usize..14, ny in 4usize..14) {
            let d = RectDomain::build_grid(nx as f64, ny as f64, nx, ny).unwrap();
            let f = random_field(&d, seed);
            let g = random_field(&d, seed.wrapping_add(1));
            let lf = laplacian_neumann(&f);
            let lg = laplacian_neumann(&g);
            prop_assert!(lf.sum().abs() <= 1e-11 * f.max_abs() * d.n_cells() as f64);
            let (a, b) = (lf.inner(&g), f.inner(&lg));
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1e-300) + 1e-13);
            prop_assert!(lf.inner(&f) <= 0.0);
        }

        #[test]
        fn flux_operators_sum_to_zero(seed in any::<u64>(), kappa in 0.0f64..=1.0) {
            let d = unit(12);
            let f = random_field(&d, seed);
            let u = stream_velocity(&d);
            let a = advect_scalar(&u, &f, kappa).unwrap();
            prop_assert!(a.sum().abs() <= 1e-12 * (a.max_abs() + 1.0) * d.n_cells() as f64);
            let n = f.map(|v| v + 2.0);
            let c = random_field(&d, seed ^ 7).map(|v| v + 2.0);
            let s = SensitivitySpec::rotation(&d, 0.2, 0.4).unwrap();
            let q = chemo_flux_div(&n, &c, &s).unwrap();
            prop_assert!(q.sum().abs() <= 1e-12 * (q.max_abs() + 1.0) * d.n_cells() as f64);
        }
    }
}
