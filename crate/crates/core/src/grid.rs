//! Periodic computational domain, collocation fields and spectral transforms.
//!
//! The domain is the extended box `[0,1) x [0,1) x [-h,h)`, periodic in all
//! three directions. Collocation points are
//! `x_i = i/nx`, `y_j = j/ny`, `z_k = -h + 2h k/nz`, stored x-fastest
//! (`index = ix + nx*(iy + ny*iz)`).
//!
//! Spectral coefficients use the same flat layout, DFT ordering in every
//! direction (`0, 1, .., n/2-1, -n/2, .., -1`) and the normalization
//! `f(x) = sum_k c_k exp(i k.(x - x0))` with `x0 = (0, 0, -h)`, so that the
//! forward transform divides by the number of points and the inverse does not.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetry of a field under `z -> -z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
    None,
}

impl Parity {
    /// Parity after one z-derivative.
    pub fn flip(self) -> Parity {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
            Parity::None => Parity::None,
        }
    }

    /// Parity of a pointwise product.
    pub fn product(self, other: Parity) -> Parity {
        match (self, other) {
            (Parity::None, _) | (_, Parity::None) => Parity::None,
            (a, b) if a == b => Parity::Even,
            _ => Parity::Odd,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Parity::Even => "even",
            Parity::Odd => "odd",
            Parity::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Parity> {
        match s {
            "even" => Some(Parity::Even),
            "odd" => Some(Parity::Odd),
            "none" => Some(Parity::None),
            _ => None,
        }
    }
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

struct Plans {
    fwd: [Arc<dyn Fft<f64>>; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
}

struct GridInner {
    nx: usize,
    ny: usize,
    nz: usize,
    h: f64,
    kx: Vec<f64>,
    ky: Vec<f64>,
    kz: Vec<f64>,
    retained: Vec<bool>,
    plans: Plans,
}

/// Resolution, extents and wavenumber tables. Cheap to clone.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.nx() == other.nx()
                && self.ny() == other.ny()
                && self.nz() == other.nz()
                && self.h() == other.h())
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("nx", &self.nx())
            .field("ny", &self.ny())
            .field("nz", &self.nz())
            .field("h", &self.h())
            .finish()
    }
}

/// Signed DFT mode number of index `i` on an `n`-point axis.
pub fn signed_mode(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

fn wavenumbers(n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|i| scale * signed_mode(i, n) as f64).collect()
}

/// Build a grid, rejecting odd or too-small resolutions and `h <= 0`.
pub fn make_grid(nx: usize, ny: usize, nz: usize, h: f64) -> Result<Grid> {
    Grid::new(nx, ny, nz, h)
}

impl Grid {
    pub fn new(nx: usize, ny: usize, nz: usize, h: f64) -> Result<Grid> {
        for (name, n) in [("nx", nx), ("ny", ny), ("nz", nz)] {
            if n < 4 || n % 2 != 0 {
                return Err(Error::InvalidGrid(format!(
                    "{name}={n} must be even and at least 4"
                )));
            }
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidGrid(format!("h={h} must be positive")));
        }
        let mut planner = FftPlanner::new();
        let plans = Plans {
            fwd: [
                planner.plan_fft_forward(nx),
                planner.plan_fft_forward(ny),
                planner.plan_fft_forward(nz),
            ],
            inv: [
                planner.plan_fft_inverse(nx),
                planner.plan_fft_inverse(ny),
                planner.plan_fft_inverse(nz),
            ],
        };
        let cut = |i: usize, n: usize| signed_mode(i, n).unsigned_abs() as usize <= (n - 1) / 3;
        let mut retained = Vec::with_capacity(nx * ny * nz);
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    retained.push(cut(ix, nx) && cut(iy, ny) && cut(iz, nz));
                }
            }
        }
        Ok(Grid {
            inner: Arc::new(GridInner {
                nx,
                ny,
                nz,
                h,
                kx: wavenumbers(nx, 2.0 * PI),
                ky: wavenumbers(ny, 2.0 * PI),
                kz: wavenumbers(nz, PI / h),
                retained,
                plans,
            }),
        })
    }

    pub fn nx(&self) -> usize {
        self.inner.nx
    }
    pub fn ny(&self) -> usize {
        self.inner.ny
    }
    pub fn nz(&self) -> usize {
        self.inner.nz
    }
    pub fn h(&self) -> f64 {
        self.inner.h
    }
    pub fn len(&self) -> usize {
        self.nx() * self.ny() * self.nz()
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    /// Points per horizontal plane.
    pub fn plane_len(&self) -> usize {
        self.nx() * self.ny()
    }
    pub fn kx(&self) -> &[f64] {
        &self.inner.kx
    }
    pub fn ky(&self) -> &[f64] {
        &self.inner.ky
    }
    pub fn kz(&self) -> &[f64] {
        &self.inner.kz
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.nx() * (iy + self.ny() * iz)
    }

    #[inline]
    pub fn coords_of(&self, idx: usize) -> (usize, usize, usize) {
        let nx = self.nx();
        let ny = self.ny();
        (idx % nx, (idx / nx) % ny, idx / (nx * ny))
    }

    pub fn x(&self, ix: usize) -> f64 {
        ix as f64 / self.nx() as f64
    }
    pub fn y(&self, iy: usize) -> f64 {
        iy as f64 / self.ny() as f64
    }
    pub fn z(&self, iz: usize) -> f64 {
        -self.h() + 2.0 * self.h() * iz as f64 / self.nz() as f64
    }
    pub fn dx(&self) -> f64 {
        1.0 / self.nx() as f64
    }
    pub fn dy(&self) -> f64 {
        1.0 / self.ny() as f64
    }
    pub fn dz(&self) -> f64 {
        2.0 * self.h() / self.nz() as f64
    }

    /// Index of the collocation plane at `-z_k`.
    #[inline]
    pub fn mirror_z(&self, iz: usize) -> usize {
        (self.nz() - iz) % self.nz()
    }

    /// |Omega| = 1 * 1 * 2h.
    pub fn volume(&self) -> f64 {
        2.0 * self.h()
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx() * self.dy() * self.dz()
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    /// Largest retained |mode| per direction under the two-thirds rule.
    pub fn cutoff(&self) -> [usize; 3] {
        [
            (self.nx() - 1) / 3,
            (self.ny() - 1) / 3,
            (self.nz() - 1) / 3,
        ]
    }

    /// Whether flat spectral index `idx` survives dealiasing.
    #[inline]
    pub fn retained(&self, idx: usize) -> bool {
        self.inner.retained[idx]
    }

    /// Flat index of the mode `-k` for the mode stored at `idx`.
    pub fn conjugate_index(&self, idx: usize) -> usize {
        let (ix, iy, iz) = self.coords_of(idx);
        self.index(
            (self.nx() - ix) % self.nx(),
            (self.ny() - iy) % self.ny(),
            (self.nz() - iz) % self.nz(),
        )
    }

    /// Flat index with only the z-mode negated.
    pub fn z_reflected_index(&self, idx: usize) -> usize {
        let (ix, iy, iz) = self.coords_of(idx);
        self.index(ix, iy, (self.nz() - iz) % self.nz())
    }

    pub(crate) fn fft3(&self, data: &mut [Complex64], inverse: bool) {
        let plans = if inverse {
            &self.inner.plans.inv
        } else {
            &self.inner.plans.fwd
        };
        let (nx, ny, nz) = (self.nx(), self.ny(), self.nz());
        let slab = nx * ny;

        // x lines are contiguous; rustfft batches a whole slab
        let px = &plans[0];
        data.par_chunks_mut(slab).for_each_init(
            || vec![Complex64::default(); px.get_inplace_scratch_len()],
            |scratch, s| px.process_with_scratch(s, scratch),
        );

        // y lines, one z slab per task
        let py = &plans[1];
        data.par_chunks_mut(slab).for_each_init(
            || {
                (
                    vec![Complex64::default(); ny],
                    vec![Complex64::default(); py.get_inplace_scratch_len()],
                )
            },
            |(line, scratch), s| {
                for ix in 0..nx {
                    for iy in 0..ny {
                        line[iy] = s[ix + nx * iy];
                    }
                    py.process_with_scratch(line, scratch);
                    for iy in 0..ny {
                        s[ix + nx * iy] = line[iy];
                    }
                }
            },
        );

        // z lines through a transpose
        let pz = &plans[2];
        let src: &[Complex64] = data;
        let mut t = vec![Complex64::default(); data.len()];
        let batch = nz * nx;
        t.par_chunks_mut(batch).enumerate().for_each(|(b, lines)| {
            for (j, line) in lines.chunks_mut(nz).enumerate() {
                let c = b * nx + j;
                for (iz, v) in line.iter_mut().enumerate() {
                    *v = src[c + slab * iz];
                }
            }
        });
        t.par_chunks_mut(batch).for_each_init(
            || vec![Complex64::default(); pz.get_inplace_scratch_len()],
            |scratch, lines| pz.process_with_scratch(lines, scratch),
        );
        data.par_chunks_mut(slab)
            .enumerate()
            .for_each(|(iz, s)| {
                for (c, v) in s.iter_mut().enumerate() {
                    *v = t[iz + nz * c];
                }
            });
    }
}

/// Real values at collocation points with a declared z-parity.
#[derive(Clone, Debug, PartialEq)]
pub struct RealField {
    grid: Grid,
    values: Vec<f64>,
    parity: Parity,
}

impl RealField {
    /// Validates shape and finiteness.
    pub fn new(grid: &Grid, values: Vec<f64>, parity: Parity) -> Result<RealField> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(RealField {
            grid: grid.clone(),
            values,
            parity,
        })
    }

    pub(crate) fn from_parts(grid: &Grid, values: Vec<f64>, parity: Parity) -> RealField {
        debug_assert_eq!(values.len(), grid.len());
        RealField {
            grid: grid.clone(),
            values,
            parity,
        }
    }

    pub fn zeros(grid: &Grid, parity: Parity) -> RealField {
        RealField::from_parts(grid, vec![0.0; grid.len()], parity)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
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
    pub fn parity(&self) -> Parity {
        self.parity
    }
    pub fn with_parity(mut self, parity: Parity) -> RealField {
        self.parity = parity;
        self
    }
    pub fn set_parity(&mut self, parity: Parity) {
        self.parity = parity;
    }

    pub fn at(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.grid.index(ix, iy, iz)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Pointwise map keeping grid and parity.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealField {
        RealField::from_parts(
            &self.grid,
            self.values.iter().map(|&v| f(v)).collect(),
            self.parity,
        )
    }

    pub fn scaled(&self, a: f64) -> RealField {
        self.map(|v| a * v)
    }

    /// `self + a * other`; the parity is kept only if both agree.
    pub fn axpy(&self, a: f64, other: &RealField) -> RealField {
        let parity = if self.parity == other.parity {
            self.parity
        } else {
            Parity::None
        };
        RealField::from_parts(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
            parity,
        )
    }

    /// Pointwise product in physical space, without dealiasing.
    pub fn mul(&self, other: &RealField) -> RealField {
        RealField::from_parts(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x * y)
                .collect(),
            self.parity.product(other.parity),
        )
    }

    /// Largest deviation from the declared z-symmetry at mirrored points.
    pub fn parity_residual(&self) -> f64 {
        let sign = match self.parity {
            Parity::Even => -1.0,
            Parity::Odd => 1.0,
            Parity::None => return 0.0,
        };
        let g = &self.grid;
        let plane = g.plane_len();
        let mut worst = 0.0_f64;
        for iz in 0..g.nz() {
            let mz = g.mirror_z(iz);
            for p in 0..plane {
                let a = self.values[p + plane * iz];
                let b = self.values[p + plane * mz];
                worst = worst.max((a + sign * b).abs());
            }
        }
        worst
    }

    /// Values on the horizontal plane `iz`.
    pub fn plane(&self, iz: usize) -> &[f64] {
        let n = self.grid.plane_len();
        &self.values[n * iz..n * (iz + 1)]
    }

    /// Shift by whole grid cells in x and y (periodic).
    pub fn shift_horizontal(&self, sx: usize, sy: usize) -> RealField {
        let g = &self.grid;
        let mut out = vec![0.0; g.len()];
        for iz in 0..g.nz() {
            for iy in 0..g.ny() {
                for ix in 0..g.nx() {
                    out[g.index((ix + sx) % g.nx(), (iy + sy) % g.ny(), iz)] =
                        self.values[g.index(ix, iy, iz)];
                }
            }
        }
        RealField::from_parts(g, out, self.parity)
    }
}

/// Complex Fourier coefficients of a real field.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    coeffs: Vec<Complex64>,
    parity: Parity,
}

impl SpectralField {
    pub fn new(grid: &Grid, coeffs: Vec<Complex64>, parity: Parity) -> Result<SpectralField> {
        if coeffs.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                actual: coeffs.len(),
            });
        }
        Ok(SpectralField {
            grid: grid.clone(),
            coeffs,
            parity,
        })
    }

    pub(crate) fn from_parts(grid: &Grid, coeffs: Vec<Complex64>, parity: Parity) -> SpectralField {
        debug_assert_eq!(coeffs.len(), grid.len());
        SpectralField {
            grid: grid.clone(),
            coeffs,
            parity,
        }
    }

    pub fn zeros(grid: &Grid, parity: Parity) -> SpectralField {
        SpectralField::from_parts(grid, vec![Complex64::default(); grid.len()], parity)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }
    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }
    pub fn parity(&self) -> Parity {
        self.parity
    }
    pub fn set_parity(&mut self, parity: Parity) {
        self.parity = parity;
    }
    pub fn with_parity(mut self, parity: Parity) -> SpectralField {
        self.parity = parity;
        self
    }

    /// Zero every mode beyond the two-thirds cutoff (Nyquist included).
    pub fn dealias(&mut self) {
        for (c, &keep) in self.coeffs.iter_mut().zip(&self.grid.inner.retained) {
            if !keep {
                *c = Complex64::default();
            }
        }
    }

    pub fn dealiased(mut self) -> SpectralField {
        self.dealias();
        self
    }

    /// Whether every coefficient outside the cutoff is exactly zero.
    pub fn is_dealiased(&self) -> bool {
        self.coeffs
            .iter()
            .enumerate()
            .all(|(i, c)| self.grid.retained(i) || (c.re == 0.0 && c.im == 0.0))
    }

    /// Largest |c(-k) - conj(c(k))|.
    pub fn hermitian_defect(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (self.coeffs[self.grid.conjugate_index(i)] - c.conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Symmetric (Even) or antisymmetric (Odd) part in z, in coefficient space.
    pub fn project_parity(&mut self) {
        let sign = match self.parity {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
            Parity::None => return,
        };
        let (plane, nz) = (self.grid.plane_len(), self.grid.nz());
        let old = self.coeffs.clone();
        for (iz, out) in self.coeffs.chunks_mut(plane).enumerate() {
            let a = &old[iz * plane..(iz + 1) * plane];
            let b = &old[((nz - iz) % nz) * plane..][..plane];
            for ((c, x), y) in out.iter_mut().zip(a).zip(b) {
                *c = (x + y * sign) * 0.5;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for c in &mut self.coeffs {
            *c *= a;
        }
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: f64, other: &SpectralField) {
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += o * a;
        }
    }

    /// Real inner product `integral f g` over the domain, by Parseval.
    pub fn inner(&self, other: &SpectralField) -> f64 {
        let s: f64 = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a * b.conj()).re)
            .sum();
        s * self.grid.volume()
    }

    /// `integral f^2`, by Parseval.
    pub fn norm2_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.grid.volume()
    }

    /// `sum_k w(k) |c_k|^2 * |Omega|` for a per-mode weight.
    pub fn weighted_norm_sq(&self, weight: impl Fn(f64, f64, f64) -> f64) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for (i, c) in self.coeffs.iter().enumerate() {
            let (ix, iy, iz) = g.coords_of(i);
            s += weight(g.kx()[ix], g.ky()[iy], g.kz()[iz]) * c.norm_sqr();
        }
        s * g.volume()
    }
}

/// Transform collocation values to Fourier coefficients.
pub fn forward(field: &RealField) -> SpectralField {
    let g = field.grid();
    let mut data: Vec<Complex64> = field
        .values()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    g.fft3(&mut data, false);
    let inv_n = 1.0 / g.len() as f64;
    for c in &mut data {
        *c *= inv_n;
    }
    SpectralField::from_parts(g, data, field.parity())
}

/// Transform Fourier coefficients back to collocation values (real part).
pub fn inverse(spec: &SpectralField) -> RealField {
    let g = spec.grid();
    let mut data = spec.coeffs().to_vec();
    g.fft3(&mut data, true);
    RealField::from_parts(g, data.into_iter().map(|c| c.re).collect(), spec.parity())
}

/// Symmetric (Even) or antisymmetric (Odd) part of the field in z.
///
/// Odd outputs are exactly zero on the `z = 0` and `z = -h` planes, and the
/// projection is bitwise idempotent.
pub fn enforce_parity(field: &RealField) -> RealField {
    let sign = match field.parity() {
        Parity::Even => 1.0,
        Parity::Odd => -1.0,
        Parity::None => return field.clone(),
    };
    let g = field.grid();
    let plane = g.plane_len();
    let v = field.values();
    let mut out = vec![0.0; g.len()];
    for iz in 0..g.nz() {
        let mz = g.mirror_z(iz);
        for p in 0..plane {
            out[p + plane * iz] = if sign < 0.0 && mz == iz {
                0.0
            } else {
                0.5 * (v[p + plane * iz] + sign * v[p + plane * mz])
            };
        }
    }
    RealField::from_parts(g, out, field.parity())
}

/// Evaluate a pointwise initializer at every collocation point.
pub fn sample(grid: &Grid, init: impl Fn(f64, f64, f64) -> f64) -> Result<RealField> {
    sample_with_parity(grid, Parity::None, init)
}

pub fn sample_with_parity(
    grid: &Grid,
    parity: Parity,
    init: impl Fn(f64, f64, f64) -> f64,
) -> Result<RealField> {
    let mut values = Vec::with_capacity(grid.len());
    for iz in 0..grid.nz() {
        let z = grid.z(iz);
        for iy in 0..grid.ny() {
            let y = grid.y(iy);
            for ix in 0..grid.nx() {
                values.push(init(grid.x(ix), y, z));
            }
        }
    }
    RealField::new(grid, values, parity)
}

/// Product of two fields computed at collocation points, then truncated to
/// the two-thirds cutoff.
pub fn dealiased_product(a: &RealField, b: &RealField) -> SpectralField {
    forward(&a.mul(b)).dealiased()
}

/// Band-limit a real field: forward, truncate, inverse.
pub fn truncate(field: &RealField) -> RealField {
    inverse(&forward(field).dealiased())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_grid_wavenumbers() {
        let g = make_grid(4, 4, 4, 1.0).unwrap();
        let expect: Vec<f64> = [0.0, 1.0, -2.0, -1.0].iter().map(|m| PI * m).collect();
        assert_eq!(g.kz(), expect.as_slice());
        assert_eq!(g.kx().len(), 4);
    }

    #[test]
    fn kz_spacing_for_half_depth() {
        let g = make_grid(32, 32, 16, 0.5).unwrap();
        assert!((g.kz()[1] - 2.0 * PI).abs() < 1e-15);
        assert!((g.kx()[1] - 2.0 * PI).abs() < 1e-15);
        assert_eq!(g.kz().len(), 16);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(make_grid(3, 4, 4, 1.0).is_err());
        assert!(make_grid(2, 4, 4, 1.0).is_err());
        assert!(make_grid(4, 4, 4, 0.0).is_err());
        assert!(make_grid(4, 4, 4, -1.0).is_err());
    }

    #[test]
    fn constant_maps_to_zero_mode() {
        let g = make_grid(8, 8, 4, 1.0).unwrap();
        let f = sample(&g, |_, _, _| 2.5).unwrap();
        let s = forward(&f);
        assert!((s.coeffs()[0] - Complex64::new(2.5, 0.0)).norm() < 1e-15);
        assert!(s.coeffs()[1..].iter().all(|c| c.norm() < 1e-15));
    }

    #[test]
    fn sine_has_two_conjugate_coefficients() {
        let g = make_grid(8, 8, 4, 1.0).unwrap();
        let f = sample(&g, |x, _, _| (2.0 * PI * x).sin()).unwrap();
        let s = forward(&f);
        let nonzero: Vec<usize> = (0..g.len()).filter(|&i| s.coeffs()[i].norm() > 1e-14).collect();
        assert_eq!(nonzero, vec![1, 7]);
        assert!((s.coeffs()[1] - s.coeffs()[7].conj()).norm() < 1e-15);
        assert!((s.coeffs()[1] - Complex64::new(0.0, -0.5)).norm() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g = make_grid(4, 4, 4, 1.0).unwrap();
        assert!(matches!(
            RealField::new(&g, vec![0.0; 10], Parity::None),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(RealField::new(&g, vec![f64::NAN; 64], Parity::None).is_err());
    }

    #[test]
    fn parity_projection_examples() {
        let g = make_grid(8, 8, 16, 1.0).unwrap();
        let h = g.h();
        let lin = sample(&g, |_, _, z| z).unwrap().with_parity(Parity::Even);
        // z = -h has no mirror partner other than itself; the sawtooth is
        // antisymmetric everywhere else
        let p = enforce_parity(&lin);
        for iz in 1..g.nz() {
            assert!(p.at(0, 0, iz).abs() < 1e-15, "iz={iz}");
        }
        let c = sample(&g, |_, _, z| (PI * z / h).cos()).unwrap().with_parity(Parity::Odd);
        assert!(enforce_parity(&c).max_abs() < 1e-15);

        let mixed = sample(&g, |_, _, z| (PI * z / h).sin() + (PI * z / h).cos())
            .unwrap()
            .with_parity(Parity::Odd);
        let p = enforce_parity(&mixed);
        let expect = sample(&g, |_, _, z| (PI * z / h).sin()).unwrap();
        for (a, b) in p.values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(p.plane(g.nz() / 2).iter().fold(0.0_f64, |m, v| m.max(v.abs())), 0.0);
    }

    #[test]
    fn sample_examples() {
        let g = make_grid(8, 8, 8, 0.5).unwrap();
        assert_eq!(sample(&g, |_, _, _| 0.0).unwrap().max_abs(), 0.0);
        let f = sample(&g, |_, y, _| (2.0 * PI * y).sin()).unwrap();
        assert_eq!(f.parity(), Parity::None);
        assert!((f.at(0, 2, 0) - 1.0).abs() < 1e-15);
        let c = sample(&g, |_, _, z| (PI * z / 0.5).cos()).unwrap().with_parity(Parity::Even);
        assert!(c.parity_residual() < 1e-14);
        assert!(sample(&g, |_, _, _| f64::INFINITY).is_err());
    }

    #[test]
    fn odd_z_zero_plane_is_index_half() {
        let g = make_grid(4, 4, 8, 2.0).unwrap();
        assert_eq!(g.z(4), 0.0);
        assert_eq!(g.mirror_z(4), 4);
        assert_eq!(g.mirror_z(0), 0);
        assert_eq!(g.mirror_z(1), 7);
    }

    #[test]
    fn cutoff_two_thirds() {
        let g = make_grid(32, 8, 4, 1.0).unwrap();
        assert_eq!(g.cutoff(), [10, 2, 1]);
    }
}
