//! Spectral differential and vertical-integral operators of the model.

use num_complex::Complex64;

use crate::grid::{forward, inverse, Parity, RealField, SpectralField};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Wavenumber used for first derivatives: the Nyquist mode is mapped to 0.
#[inline]
pub(crate) fn deriv_wavenumber(k: &[f64], i: usize) -> f64 {
    if i == k.len() / 2 {
        0.0
    } else {
        k[i]
    }
}

/// Visit every coefficient with its `(ix, iy, iz)` mode indices.
fn for_modes(out: &mut SpectralField, mut f: impl FnMut(usize, usize, usize, &mut Complex64)) {
    let g = out.grid().clone();
    let nx = g.nx();
    for (iz, plane) in out.coeffs_mut().chunks_mut(g.plane_len()).enumerate() {
        for (iy, row) in plane.chunks_mut(nx).enumerate() {
            for (ix, c) in row.iter_mut().enumerate() {
                f(ix, iy, iz, c);
            }
        }
    }
}

/// Multiply by `i k_axis`; flips parity for `Axis::Z`.
pub fn deriv_spec(s: &SpectralField, axis: Axis) -> SpectralField {
    let g = s.grid().clone();
    let mut out = s.clone();
    for_modes(&mut out, |ix, iy, iz, c| {
        let k = match axis {
            Axis::X => deriv_wavenumber(g.kx(), ix),
            Axis::Y => deriv_wavenumber(g.ky(), iy),
            Axis::Z => deriv_wavenumber(g.kz(), iz),
        };
        *c = Complex64::new(-k * c.im, k * c.re);
    });
    if axis == Axis::Z {
        out.set_parity(s.parity().flip());
    }
    out
}

/// Multiply by `-(kx^2 + ky^2)`.
pub fn laplacian_h_spec(s: &SpectralField) -> SpectralField {
    let g = s.grid().clone();
    let mut out = s.clone();
    for_modes(&mut out, |ix, iy, _, c| *c *= -(g.kx()[ix].powi(2) + g.ky()[iy].powi(2)));
    out
}

pub fn grad_h(f: &RealField) -> (RealField, RealField) {
    let s = forward(f);
    (inverse(&deriv_spec(&s, Axis::X)), inverse(&deriv_spec(&s, Axis::Y)))
}

pub fn laplacian_h(f: &RealField) -> RealField {
    inverse(&laplacian_h_spec(&forward(f)))
}

pub fn dz(f: &RealField) -> RealField {
    inverse(&deriv_spec(&forward(f), Axis::Z))
}

pub fn deriv(f: &RealField, axis: Axis) -> RealField {
    inverse(&deriv_spec(&forward(f), axis))
}

/// Keep only the vertically constant (kz = 0) modes.
pub fn vertical_mean_spec(s: &SpectralField) -> SpectralField {
    let g = s.grid().clone();
    let mut out = s.clone();
    for (idx, c) in out.coeffs_mut().iter_mut().enumerate() {
        if idx / g.plane_len() != 0 {
            *c = Complex64::default();
        }
    }
    out.with_parity(Parity::Even)
}

/// Periodic part of `z -> int_{-h}^z f`, vanishing at `z = -h`.
///
/// The kz = 0 part of the input is ignored; it would contribute the
/// non-periodic term `(z + h) * mean_z(f)`.
pub fn antiderivative_z_spec(s: &SpectralField) -> SpectralField {
    let g = s.grid().clone();
    let plane = g.plane_len();
    let nz = g.nz();
    let mut out = SpectralField::zeros(&g, s.parity().flip());
    let coeffs = s.coeffs();
    let o = out.coeffs_mut();
    for p in 0..plane {
        let mut sum = Complex64::default();
        for iz in 1..nz {
            let k = deriv_wavenumber(g.kz(), iz);
            if k == 0.0 {
                continue;
            }
            let c = coeffs[p + plane * iz] / Complex64::new(0.0, k);
            o[p + plane * iz] = c;
            sum += c;
        }
        o[p] = -sum;
    }
    out
}

/// `z -> int_{-h}^z f(x, y, xi) d xi` at collocation points.
///
/// Exact antiderivative of the trigonometric interpolant; the output is zero
/// on the `z = -h` plane. When `f` has a nonzero vertical mean the result
/// carries the linear term `(z + h) * mean_z(f)` and is not periodic.
pub fn integral_from_bottom(f: &RealField) -> RealField {
    let s = forward(f);
    let periodic = inverse(&antiderivative_z_spec(&s));
    let mean = inverse(&vertical_mean_spec(&s));
    let g = f.grid();
    let plane = g.plane_len();
    let mut values = periodic.into_values();
    for iz in 0..g.nz() {
        let zh = g.z(iz) + g.h();
        for p in 0..plane {
            values[p + plane * iz] += zh * mean.values()[p];
        }
    }
    let parity = match f.parity() {
        Parity::Odd => Parity::Even,
        _ => Parity::None,
    };
    RealField::from_parts(g, values, parity)
}

/// Horizontal divergence in spectral space.
pub fn divergence_h_spec(v1: &SpectralField, v2: &SpectralField) -> SpectralField {
    let mut d = deriv_spec(v1, Axis::X);
    d.add_scaled(1.0, &deriv_spec(v2, Axis::Y));
    d
}

/// `w = -int_{-h}^z div_H v`, tagged Odd.
pub fn diagnose_w(v1: &RealField, v2: &RealField) -> RealField {
    let d = inverse(&divergence_h_spec(&forward(v1), &forward(v2)));
    integral_from_bottom(&d).scaled(-1.0).with_parity(Parity::Odd)
}

/// Periodic `w` from spectral velocity, ignoring any barotropic divergence.
pub fn diagnose_w_spec(v1: &SpectralField, v2: &SpectralField) -> SpectralField {
    let mut w = antiderivative_z_spec(&divergence_h_spec(v1, v2));
    w.scale(-1.0);
    w.with_parity(Parity::Odd)
}

/// `max_{x,y} |int_{-h}^h div_H v dz|`.
pub fn barotropic_residual_spec(v1: &SpectralField, v2: &SpectralField) -> f64 {
    let mean = vertical_mean_spec(&divergence_h_spec(v1, v2));
    inverse(&mean).max_abs() * v1.grid().volume()
}

pub fn barotropic_residual(v1: &RealField, v2: &RealField) -> f64 {
    barotropic_residual_spec(&forward(v1), &forward(v2))
}

/// `max_{x,y} |w(x, y, h)|`; `w(-h) = 0` by construction.
pub fn w_top(v1: &RealField, v2: &RealField) -> f64 {
    barotropic_residual(v1, v2)
}

/// Remove the horizontal gradient part of the vertical mean in place.
pub fn barotropic_project_spec(v1: &mut SpectralField, v2: &mut SpectralField) {
    let g = v1.grid().clone();
    let (a, b) = (v1.coeffs_mut(), v2.coeffs_mut());
    for p in 0..g.plane_len() {
        let (ix, iy, _) = g.coords_of(p);
        let kx = deriv_wavenumber(g.kx(), ix);
        let ky = deriv_wavenumber(g.ky(), iy);
        let k2 = kx * kx + ky * ky;
        if k2 == 0.0 {
            continue;
        }
        let kv = (a[p] * kx + b[p] * ky) / k2;
        a[p] -= kv * kx;
        b[p] -= kv * ky;
    }
}

/// `v - grad_H phi` with `Delta_H phi = mean_z div_H v`.
pub fn barotropic_project(v1: &RealField, v2: &RealField) -> (RealField, RealField) {
    let (mut a, mut b) = (forward(v1), forward(v2));
    barotropic_project_spec(&mut a, &mut b);
    (inverse(&a), inverse(&b))
}

/// `-int_{-h}^z T`.
pub fn hydrostatic_pressure(temp: &RealField) -> RealField {
    integral_from_bottom(temp)
        .scaled(-1.0)
        .with_parity(Parity::None)
}

/// Solution of `Delta_H p_s = (1/2h) int div_H f1 dz` with zero mean.
#[derive(Clone, Debug)]
pub struct SurfacePressure {
    /// z-independent, stored on the full grid.
    pub p_s: RealField,
    /// Magnitude of the discarded zero mode of the right-hand side.
    pub rhs_zero_mode: f64,
}

pub fn solve_surface_pressure_spec(f1: &SpectralField, f2: &SpectralField) -> (SpectralField, f64) {
    let g = f1.grid().clone();
    let mut p = SpectralField::zeros(&g, Parity::Even);
    let (a, b) = (f1.coeffs(), f2.coeffs());
    let rhs_zero = (a[0] * Complex64::new(0.0, deriv_wavenumber(g.kx(), 0))
        + b[0] * Complex64::new(0.0, deriv_wavenumber(g.ky(), 0)))
    .norm();
    let o = p.coeffs_mut();
    for q in 1..g.plane_len() {
        let (ix, iy, _) = g.coords_of(q);
        let kx = deriv_wavenumber(g.kx(), ix);
        let ky = deriv_wavenumber(g.ky(), iy);
        let k2 = kx * kx + ky * ky;
        if k2 == 0.0 {
            continue;
        }
        let div = Complex64::new(0.0, kx) * a[q] + Complex64::new(0.0, ky) * b[q];
        o[q] = -div / k2;
    }
    (p, rhs_zero)
}

pub fn solve_surface_pressure(f1: &RealField, f2: &RealField) -> SurfacePressure {
    let (p, rhs_zero_mode) = solve_surface_pressure_spec(&forward(f1), &forward(f2));
    SurfacePressure {
        p_s: inverse(&p),
        rhs_zero_mode,
    }
}

/// Surface and hydrostatic parts of the pressure.
#[derive(Clone, Debug)]
pub struct PressureDecomposition {
    pub p_s: RealField,
    pub p_hydro: RealField,
}

/// Grid-level helper used by tests and the solver: the kz = 0 slab of a
/// spectral field evaluated as a z-independent physical field.
pub fn vertical_mean(f: &RealField) -> RealField {
    inverse(&vertical_mean_spec(&forward(f)))
}
