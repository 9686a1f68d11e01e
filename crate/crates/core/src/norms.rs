//! Lebesgue, Sobolev and mixed norms over the domain, horizontal planes and
//! disk cylinders.
//!
//! Quadrature is the uniform collocation sum times the cell volume, which
//! is exact for products of band-limited periodic fields. Disks live on the
//! horizontal torus: a collocation column belongs to `D_r(c)` when its
//! periodic distance to `c` is at most `r`.

use crate::error::{Error, Result};
use crate::grid::{forward, Grid, RealField};

/// Exponent of a Lebesgue norm. `f64::INFINITY` selects the max norm.
pub type Exponent = f64;

fn check_exponent(q: Exponent) -> Result<()> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::InvalidArgument(format!("norm exponent q={q} must be >= 1")));
    }
    Ok(())
}

/// `(sum |v|^q w)^(1/q)`, evaluated as
/// `exp(log M + (1/q) log sum exp(q (log|v| - log M) + log w))` with
/// `M = max |v|` so that large exponents neither overflow nor underflow.
fn lq_of(values: impl Iterator<Item = f64> + Clone, weight: f64, q: Exponent) -> f64 {
    let m = values.clone().fold(0.0_f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    if q.is_infinite() {
        return m;
    }
    let s: f64 = if q == 2.0 {
        values.map(|v| (v / m) * (v / m)).sum()
    } else {
        values.map(|v| (v.abs() / m).powf(q)).sum()
    };
    m * (s * weight).powf(1.0 / q)
}

/// `||f||_q` over the whole domain.
pub fn lq_norm(f: &RealField, q: Exponent) -> Result<f64> {
    check_exponent(q)?;
    Ok(lq_of(f.values().iter().copied(), f.grid().cell_volume(), q))
}

/// Pointwise Euclidean magnitude of a vector field.
pub fn magnitude(components: &[&RealField]) -> RealField {
    let first = components[0];
    let mut out = vec![0.0; first.values().len()];
    for c in components {
        for (o, v) in out.iter_mut().zip(c.values()) {
            *o += v * v;
        }
    }
    for o in &mut out {
        *o = o.sqrt();
    }
    RealField::new(first.grid(), out, crate::grid::Parity::None)
        .expect("magnitude of finite fields is finite")
}

/// `||grad_H f||_2`, by Parseval.
pub fn grad_h_l2(f: &RealField) -> f64 {
    let g = f.grid().clone();
    forward(f)
        .weighted_norm_sq(|kx, ky, _| dk2(&g, kx, ky, 0.0))
        .sqrt()
}

/// `||f||_{H^1} = (||f||_2^2 + ||grad f||_2^2)^(1/2)`, by Parseval.
pub fn h1_norm(f: &RealField) -> f64 {
    let g = f.grid().clone();
    forward(f)
        .weighted_norm_sq(|kx, ky, kz| 1.0 + dk2(&g, kx, ky, kz))
        .sqrt()
}

/// Squared derivative wavenumber with Nyquist modes mapped to 0.
fn dk2(g: &Grid, kx: f64, ky: f64, kz: f64) -> f64 {
    let nyq = |k: f64, table: &[f64]| if k == table[table.len() / 2] { 0.0 } else { k * k };
    nyq(kx, g.kx()) + nyq(ky, g.ky()) + nyq(kz, g.kz())
}

/// `||d_z f||_q`.
pub fn dz_lq(f: &RealField, q: Exponent) -> Result<f64> {
    lq_norm(&crate::operators::dz(f), q)
}

/// Horizontal region for plane and cylinder norms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    Full,
    Disk { center: (f64, f64), r: f64 },
}

/// Periodic distance on the unit circle.
fn torus_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Plane mask (length `nx*ny`) of columns inside the region.
pub fn region_mask(grid: &Grid, region: Region) -> Result<Vec<bool>> {
    match region {
        Region::Full => Ok(vec![true; grid.plane_len()]),
        Region::Disk { center, r } => {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument(format!("disk radius r={r} must be > 0")));
            }
            let mut mask = Vec::with_capacity(grid.plane_len());
            for iy in 0..grid.ny() {
                let dy = torus_gap(grid.y(iy), center.1);
                for ix in 0..grid.nx() {
                    let dx = torus_gap(grid.x(ix), center.0);
                    mask.push(dx * dx + dy * dy <= r * r);
                }
            }
            if !mask.iter().any(|&m| m) {
                return Err(Error::InvalidArgument(format!(
                    "disk of radius {r} contains no collocation column"
                )));
            }
            Ok(mask)
        }
    }
}

/// `||f||_q` over the cylinder `region x (-h, h)`.
pub fn masked_lq(f: &RealField, mask: &[bool], q: Exponent) -> Result<f64> {
    check_exponent(q)?;
    let plane = f.grid().plane_len();
    let vals = f
        .values()
        .iter()
        .enumerate()
        .filter(move |(i, _)| mask[i % plane])
        .map(|(_, &v)| v);
    Ok(lq_of(vals, f.grid().cell_volume(), q))
}

/// `sup_z ||f(., z)||_{q, region}` over collocation planes.
pub fn sup_z_norm(f: &RealField, q: Exponent, region: Region) -> Result<f64> {
    check_exponent(q)?;
    let g = f.grid();
    let mask = region_mask(g, region)?;
    let mut best = 0.0_f64;
    for iz in 0..g.nz() {
        let vals = f
            .plane(iz)
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v);
        best = best.max(lq_of(vals, g.cell_area(), q));
    }
    Ok(best)
}

/// Vertically integrated `|f|^2` per column, times the cell area.
fn column_energy(f: &RealField) -> Vec<f64> {
    let g = f.grid();
    let plane = g.plane_len();
    let w = g.cell_volume();
    let mut col = vec![0.0; plane];
    for (i, v) in f.values().iter().enumerate() {
        col[i % plane] += v * v * w;
    }
    col
}

/// `max_c int_{D_r(c) x (-h,h)} |f|^2` over a lattice of centers taken from
/// every `stride`-th collocation column in x and y.
///
/// The lattice maximum is a lower bound for the supremum over all centers.
pub fn local_energy_profile(f: &RealField, r: f64, stride: usize) -> Result<f64> {
    local_energy_profile_multi(&[f], r, stride)
}

/// Same as [`local_energy_profile`] for `|f|^2 = sum_i |f_i|^2`.
pub fn local_energy_profile_multi(fields: &[&RealField], r: f64, stride: usize) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("disk radius r={r} must be > 0")));
    }
    let stride = stride.max(1);
    let g = fields[0].grid();
    let (nx, ny) = (g.nx(), g.ny());
    let mut col = vec![0.0; g.plane_len()];
    for f in fields {
        for (c, e) in col.iter_mut().zip(column_energy(f)) {
            *c += e;
        }
    }
    let mut offsets = Vec::new();
    let (hx, hy) = ((nx / 2) as i64, (ny / 2) as i64);
    for dj in -hy..(ny as i64 - hy) {
        for di in -hx..(nx as i64 - hx) {
            let dx = di as f64 * g.dx();
            let dy = dj as f64 * g.dy();
            if dx * dx + dy * dy <= r * r {
                offsets.push((di, dj));
            }
        }
    }
    let mut best = 0.0_f64;
    for cy in (0..ny).step_by(stride) {
        for cx in (0..nx).step_by(stride) {
            let mut s = 0.0;
            for &(di, dj) in &offsets {
                let ix = (cx as i64 + di).rem_euclid(nx as i64) as usize;
                let iy = (cy as i64 + dj).rem_euclid(ny as i64) as usize;
                s += col[ix + nx * iy];
            }
            best = best.max(s);
        }
    }
    Ok(best)
}

/// `max_{q = 2..=qmax} ||f||_q / sqrt(q)` over integer exponents.
///
/// Powers are accumulated by repeated multiplication of `|f|/max|f|`, so the
/// whole scan costs one multiply-add per point and exponent.
pub fn weighted_lq_sup(f: &RealField, qmax: usize) -> Result<f64> {
    Ok(lq_scan(f, qmax)?
        .into_iter()
        .map(|(q, n)| n / (q as f64).sqrt())
        .fold(0.0, f64::max))
}

/// `(q, ||f||_q)` for every integer `q` in `2..=qmax`.
pub fn lq_scan(f: &RealField, qmax: usize) -> Result<Vec<(usize, f64)>> {
    if qmax < 2 {
        return Err(Error::InvalidArgument(format!("qmax={qmax} must be >= 2")));
    }
    let m = f.max_abs();
    if m == 0.0 {
        return Ok((2..=qmax).map(|q| (q, 0.0)).collect());
    }
    let w = f.grid().cell_volume();
    let a: Vec<f64> = f.values().iter().map(|v| v.abs() / m).collect();
    let mut p = a.clone();
    let mut out = Vec::with_capacity(qmax - 1);
    for q in 2..=qmax {
        let mut s = 0.0;
        for (pi, ai) in p.iter_mut().zip(&a) {
            let next = *pi * ai;
            // keep clear of subnormals, which are slow and below any useful precision
            *pi = if next < 1e-280 { 0.0 } else { next };
            s += *pi;
        }
        out.push((q, m * (s * w).powf(1.0 / q as f64)));
    }
    Ok(out)
}

/// What a [`NormRequest`] evaluates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormKind {
    Lq(Exponent),
    H1,
    SupZL2(Region),
    SupZL4(Region),
    LocalDiskL2 { r: f64, center: (f64, f64) },
    GradHL2,
    DzLq(Exponent),
}

/// A norm of one scalar field, or of the magnitude of a vector field.
#[derive(Clone, Debug)]
pub struct NormRequest<'a> {
    pub kind: NormKind,
    pub fields: Vec<&'a RealField>,
}

impl NormRequest<'_> {
    pub fn evaluate(&self) -> Result<f64> {
        if self.fields.is_empty() {
            return Err(Error::InvalidArgument("norm request without fields".into()));
        }
        let mag = || {
            if self.fields.len() == 1 {
                self.fields[0].clone()
            } else {
                magnitude(&self.fields)
            }
        };
        let sum_sq = |f: &dyn Fn(&RealField) -> f64| {
            self.fields.iter().map(|c| f(c).powi(2)).sum::<f64>().sqrt()
        };
        match self.kind {
            NormKind::Lq(q) => lq_norm(&mag(), q),
            NormKind::H1 => Ok(sum_sq(&h1_norm)),
            NormKind::SupZL2(region) => sup_z_norm(&mag(), 2.0, region),
            NormKind::SupZL4(region) => sup_z_norm(&mag(), 4.0, region),
            NormKind::LocalDiskL2 { r, center } => {
                let m = region_mask(self.fields[0].grid(), Region::Disk { center, r })?;
                masked_lq(&mag(), &m, 2.0)
            }
            NormKind::GradHL2 => Ok(sum_sq(&grad_h_l2)),
            NormKind::DzLq(q) => {
                let d: Vec<RealField> = self.fields.iter().map(|f| crate::operators::dz(f)).collect();
                let refs: Vec<&RealField> = d.iter().collect();
                lq_norm(&magnitude(&refs), q)
            }
        }
    }
}

/// Largest column distance from any center to the farthest torus point.
pub fn torus_diameter() -> f64 {
    std::f64::consts::FRAC_1_SQRT_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, sample};
    use std::f64::consts::PI;

    #[test]
    fn constant_norms() {
        let g = make_grid(8, 8, 8, 0.75).unwrap();
        let f = sample(&g, |_, _, _| 3.0).unwrap();
        for q in [1.0, 2.0, 3.5, 6.0] {
            let e = 3.0 * (2.0 * 0.75_f64).powf(1.0 / q);
            assert!((lq_norm(&f, q).unwrap() - e).abs() < 1e-13 * e, "q={q}");
        }
        assert_eq!(lq_norm(&f, f64::INFINITY).unwrap(), 3.0);
        assert!(lq_norm(&f, 0.5).is_err());
    }

    #[test]
    fn sine_l2_and_max() {
        let g = make_grid(16, 8, 8, 0.4).unwrap();
        let f = sample(&g, |x, _, _| (2.0 * PI * x).sin()).unwrap();
        assert!((lq_norm(&f, 2.0).unwrap() - 0.4_f64.sqrt()).abs() < 1e-14);
        assert!((lq_norm(&f, f64::INFINITY).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sup_z_examples() {
        let g = make_grid(16, 16, 16, 0.5).unwrap();
        let one = sample(&g, |_, _, _| 1.0).unwrap();
        assert!((sup_z_norm(&one, 2.0, Region::Full).unwrap() - 1.0).abs() < 1e-14);
        let f = sample(&g, |x, y, _| (2.0 * PI * x).sin() + (2.0 * PI * y).cos()).unwrap();
        let horizontal = (0.5_f64 + 0.5).sqrt();
        assert!((sup_z_norm(&f, 2.0, Region::Full).unwrap() - horizontal).abs() < 1e-14);
        let s = sample(&g, |_, _, z| (PI * z / 0.5).sin()).unwrap();
        let expect = (0..g.nz()).map(|k| (PI * g.z(k) / 0.5).sin().abs()).fold(0.0, f64::max);
        assert!((sup_z_norm(&s, 2.0, Region::Full).unwrap() - expect).abs() < 1e-14);
        assert!(sup_z_norm(&s, 2.0, Region::Disk { center: (0.01, 0.01), r: 1e-6 }).is_err());
    }

    #[test]
    fn local_energy_examples() {
        let g = make_grid(64, 64, 4, 0.5).unwrap();
        let zero = RealField::zeros(&g, crate::grid::Parity::None);
        assert_eq!(local_energy_profile(&zero, 0.3, 4).unwrap(), 0.0);
        let one = sample(&g, |_, _, _| 1.0).unwrap();
        let r = 0.25;
        let e = PI * r * r * 2.0 * 0.5;
        let got = local_energy_profile(&one, r, 8).unwrap();
        assert!((got - e).abs() / e < 0.03, "{got} vs {e}");
        let full = local_energy_profile(&one, 0.75, 8).unwrap();
        assert!((full - 1.0).abs() < 1e-13);
    }

    #[test]
    fn weighted_sup_examples() {
        let g = make_grid(8, 8, 4, 0.5).unwrap();
        let zero = RealField::zeros(&g, crate::grid::Parity::None);
        assert_eq!(weighted_lq_sup(&zero, 16).unwrap(), 0.0);
        let one = sample(&g, |_, _, _| 1.0).unwrap();
        let scan = (2..=16)
            .map(|q| 1.0_f64.powf(1.0 / q as f64) / (q as f64).sqrt())
            .fold(0.0, f64::max);
        assert!((weighted_lq_sup(&one, 16).unwrap() - scan).abs() < 1e-14);
        assert!((scan - 1.0 / 2.0_f64.sqrt()).abs() < 1e-15);
        let f = sample(&g, |x, _, z| (2.0 * PI * x).sin() * (z + 0.3)).unwrap();
        let a = weighted_lq_sup(&f, 32).unwrap();
        let b = weighted_lq_sup(&f.scaled(2.0), 32).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-13 * b);
        // repeated multiplication agrees with powf
        for (q, n) in lq_scan(&f, 32).unwrap() {
            let d = lq_norm(&f, q as f64).unwrap();
            assert!((n - d).abs() < 1e-12 * d, "q={q}");
        }
    }

    #[test]
    fn request_dispatch() {
        let g = make_grid(8, 8, 8, 0.5).unwrap();
        let a = sample(&g, |x, _, _| (2.0 * PI * x).sin()).unwrap();
        let b = sample(&g, |x, _, _| (2.0 * PI * x).cos()).unwrap();
        let r = NormRequest { kind: NormKind::Lq(f64::INFINITY), fields: vec![&a, &b] };
        assert!((r.evaluate().unwrap() - 1.0).abs() < 1e-14);
        let r = NormRequest { kind: NormKind::GradHL2, fields: vec![&a] };
        assert!((r.evaluate().unwrap() - 2.0 * PI * 0.5_f64.sqrt()).abs() < 1e-12);
        let r = NormRequest { kind: NormKind::H1, fields: vec![&a] };
        let e = (0.5 + 4.0 * PI * PI * 0.5_f64).sqrt();
        assert!((r.evaluate().unwrap() - e).abs() < 1e-12);
    }
}
