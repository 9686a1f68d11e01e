//! Two-sided evaluation of the anisotropic inequalities with `C = 1`.
//!
//! All `L^2`-type norms are over the cylinder `S x (-h, h)`. On the full
//! torus face `M` the length scale is its diameter `sqrt(2)`; on a disk it
//! is the radius.

use crate::error::{Error, Result};
use crate::grid::{forward, RealField};
use crate::lab::samples::{PlaneEvaluator, Sample};
use crate::norms::{grad_h_l2, lq_norm, lq_scan, masked_lq, region_mask, Region};
use crate::operators::{deriv_spec, Axis};

/// Diameter of the unit torus face.
pub const TORUS_DIAMETER: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ladyzhenskaya {
    N21,
    N22,
    N23,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SupZ {
    L2,
    L4,
    Disk { r: f64, center: (f64, f64) },
}

/// Parameters of the logarithmic Sobolev check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogSobolev {
    pub p: [f64; 3],
    pub lambda: f64,
    pub qmax: usize,
}

impl Default for LogSobolev {
    fn default() -> Self {
        LogSobolev { p: [4.0, 4.0, 4.0], lambda: 0.5, qmax: 128 }
    }
}

impl LogSobolev {
    pub fn validate(&self) -> Result<()> {
        if self.p.iter().any(|&p| !(p > 1.0 && p.is_finite())) {
            return Err(Error::InvalidArgument(format!("exponents {:?} must lie in (1, inf)", self.p)));
        }
        let s: f64 = self.p.iter().map(|p| 1.0 / p).sum();
        if s >= 1.0 {
            return Err(Error::InvalidArgument(format!("sum of 1/p_i = {s} must be < 1")));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda={} must be > 0", self.lambda)));
        }
        if self.qmax < 2 {
            return Err(Error::InvalidArgument("qmax must be >= 2".into()));
        }
        Ok(())
    }
}

fn same_grid(fields: &[&RealField]) -> Result<()> {
    let g = fields[0].grid();
    if fields.iter().any(|f| f.grid() != g) {
        return Err(Error::GridMismatch("inequality arguments live on different grids".into()));
    }
    Ok(())
}

/// Norms of one function over a cylinder.
struct Cyl {
    l2: f64,
    grad_h: f64,
}

fn cyl(f: &RealField, mask: Option<&[bool]>) -> Cyl {
    match mask {
        None => Cyl {
            l2: lq_norm(f, 2.0).expect("q = 2"),
            grad_h: grad_h_l2(f),
        },
        Some(m) => {
            let s = forward(f);
            let gx = crate::grid::inverse(&deriv_spec(&s, Axis::X));
            let gy = crate::grid::inverse(&deriv_spec(&s, Axis::Y));
            let gx2 = masked_lq(&gx, m, 2.0).expect("q = 2");
            let gy2 = masked_lq(&gy, m, 2.0).expect("q = 2");
            Cyl {
                l2: masked_lq(f, m, 2.0).expect("q = 2"),
                grad_h: gx2.hypot(gy2),
            }
        }
    }
}

/// `int_S (int |a| dz)(int |b c| dz)` or, with `square`, `int_S (int a^2)(int b^2)`.
fn nested(a: &RealField, b: &RealField, c: &RealField, square: bool, mask: Option<&[bool]>) -> f64 {
    let g = a.grid();
    let plane = g.plane_len();
    let mut ca = vec![0.0; plane];
    let mut cb = vec![0.0; plane];
    for (i, ((x, y), z)) in a.values().iter().zip(b.values()).zip(c.values()).enumerate() {
        let p = i % plane;
        if square {
            ca[p] += x * x;
            cb[p] += y * y;
        } else {
            ca[p] += x.abs();
            cb[p] += (y * z).abs();
        }
    }
    let dz = g.dz();
    (0..plane)
        .filter(|&p| mask.is_none_or(|m| m[p]))
        .map(|p| ca[p] * dz * cb[p] * dz)
        .sum::<f64>()
        * g.cell_area()
}

fn lady(phi: &RealField, vphi: &RealField, psi: &RealField, variant: Ladyzhenskaya, mask: Option<&[bool]>, l: f64) -> (f64, f64) {
    let h = phi.grid().h();
    let a = |n: &Cyl| (n.l2 * (n.l2 / l + n.grad_h)).sqrt();
    match variant {
        Ladyzhenskaya::N21 => {
            let (p, q, r) = (cyl(phi, mask), cyl(vphi, mask), cyl(psi, mask));
            let lhs = nested(phi, vphi, psi, false, mask);
            let rhs = h.sqrt() * (p.l2 * a(&q) * a(&r)).min(a(&p) * a(&q) * r.l2);
            (lhs, rhs)
        }
        Ladyzhenskaya::N22 => {
            let q = cyl(vphi, mask);
            let r = cyl(psi, mask);
            let p6 = match mask {
                None => lq_norm(phi, 6.0).expect("q = 6"),
                Some(m) => masked_lq(phi, m, 6.0).expect("q = 6"),
            };
            let lhs = nested(phi, vphi, psi, false, mask);
            let rhs = h.powf(5.0 / 6.0) * p6 * q.l2.powf(2.0 / 3.0) * (q.l2 / l + q.grad_h).powf(1.0 / 3.0) * r.l2;
            (lhs, rhs)
        }
        Ladyzhenskaya::N23 => {
            let (p, q) = (cyl(phi, mask), cyl(vphi, mask));
            let lhs = nested(phi, vphi, vphi, true, mask);
            let rhs = p.l2 * (p.l2 / l + p.grad_h) * q.l2 * (q.l2 / l + q.grad_h);
            (lhs, rhs)
        }
    }
}

/// `(LHS, RHS)` of the vertically nested Ladyzhenskaya-type inequality on
/// the full torus face, `L = sqrt(2)`. For `N23` the third field is unused.
pub fn check_ladyzhenskaya(phi: &RealField, vphi: &RealField, psi: &RealField, variant: Ladyzhenskaya) -> Result<(f64, f64)> {
    same_grid(&[phi, vphi, psi])?;
    Ok(lady(phi, vphi, psi, variant, None, TORUS_DIAMETER))
}

fn disk_mask(f: &RealField, r: f64, center: (f64, f64)) -> Result<Vec<bool>> {
    if !(r > 0.0 && r <= 0.5) {
        return Err(Error::InvalidArgument(format!("disk radius r={r} must lie in (0, 0.5]")));
    }
    region_mask(f.grid(), Region::Disk { center, r })
}

/// Disk version: integrals over `D_r(center) x (-h, h)` and `L = r`.
/// Only the `N21` and `N22` forms exist for disks.
pub fn check_disk_ladyzhenskaya(
    phi: &RealField,
    vphi: &RealField,
    psi: &RealField,
    r: f64,
    center: (f64, f64),
    variant: Ladyzhenskaya,
) -> Result<(f64, f64)> {
    same_grid(&[phi, vphi, psi])?;
    if variant == Ladyzhenskaya::N23 {
        return Err(Error::InvalidArgument("the disk inequality has no n2.3 form".into()));
    }
    let m = disk_mask(phi, r, center)?;
    Ok(lady(phi, vphi, psi, variant, Some(&m), r))
}

fn plane_norm(vals: &[f64], mask: Option<&[bool]>, q: f64, area: f64) -> f64 {
    let s: f64 = vals
        .iter()
        .enumerate()
        .filter(|(p, _)| mask.is_none_or(|m| m[*p]))
        .map(|(_, v)| v.abs().powf(q))
        .sum();
    (s * area).powf(1.0 / q)
}

/// `sup_z ||f(., z)||_{q, S}` over the trigonometric interpolant: the best
/// collocation planes are refined by a local search in z.
pub fn sup_z_refined(sample: &Sample, q: f64, mask: Option<&[bool]>, planes: &PlaneEvaluator) -> f64 {
    let g = sample.grid();
    let area = g.cell_area();
    let coarse: Vec<f64> = (0..g.nz()).map(|iz| plane_norm(sample.field.plane(iz), mask, q, area)).collect();
    let mut order: Vec<usize> = (0..g.nz()).collect();
    order.sort_by(|&a, &b| coarse[b].total_cmp(&coarse[a]));
    let mut best = coarse[order[0]];
    for &iz in order.iter().take(3) {
        let mut z = g.z(iz);
        let mut cur = coarse[iz];
        let mut step = 0.5 * g.dz();
        while step > g.dz() * 1e-4 {
            let mut moved = false;
            for s in [-1.0, 1.0] {
                let v = plane_norm(&planes.plane(sample, z + s * step), mask, q, area);
                if v > cur {
                    cur = v;
                    z += s * step;
                    moved = true;
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        best = best.max(cur);
    }
    best
}

/// `(LHS, RHS)` of the sup-in-z embedding. The `L2` form carries explicit
/// constants; `L4` and `Disk` carry an unknown constant set to 1.
pub fn check_sup_z_embedding(f: &RealField, variant: SupZ) -> Result<(f64, f64)> {
    let sample = Sample::from_field(f);
    let planes = PlaneEvaluator::new(f.grid());
    check_sup_z_sample(&sample, variant, &planes)
}

pub fn check_sup_z_sample(sample: &Sample, variant: SupZ, planes: &PlaneEvaluator) -> Result<(f64, f64)> {
    let f = &sample.field;
    let h = f.grid().h();
    let dz = crate::operators::dz(f);
    Ok(match variant {
        SupZ::L2 => {
            let n = lq_norm(f, 2.0)?;
            let lhs = sup_z_refined(sample, 2.0, None, planes);
            (lhs, (n * (n / (2.0 * h) + 2.0 * lq_norm(&dz, 2.0)?)).sqrt())
        }
        SupZ::L4 => {
            let n = cyl(f, None);
            let lhs = sup_z_refined(sample, 4.0, None, planes);
            let rhs = ((n.l2 / h + lq_norm(&dz, 2.0)?) * (n.l2 / TORUS_DIAMETER + n.grad_h)).sqrt();
            (lhs, rhs)
        }
        SupZ::Disk { r, center } => {
            let m = disk_mask(f, r, center)?;
            let n = cyl(f, Some(&m));
            let lhs = sup_z_refined(sample, 4.0, Some(&m), planes);
            let rhs = ((n.l2 / r + n.grad_h) * (n.l2 / h + masked_lq(&dz, &m, 2.0)?)).sqrt();
            (lhs, rhs)
        }
    })
}

/// `(||F||_inf, RHS without the constant)` of the logarithmic Sobolev
/// inequality; the sup over `r >= 2` runs over integers up to `qmax`.
pub fn check_log_sobolev(f: &RealField, params: &LogSobolev) -> Result<(f64, f64)> {
    check_log_sobolev_sample(&Sample::from_field(f), params).map(|(l, r, _)| (l, r))
}

/// Also returns the relative change of the `r`-sup when `qmax` is halved.
pub fn check_log_sobolev_sample(sample: &Sample, params: &LogSobolev) -> Result<(f64, f64, f64)> {
    params.validate()?;
    let f = &sample.field;
    let lhs = sample.max_abs_refined();
    let scan = lq_scan(f, params.qmax)?;
    let weighted = |upto: usize| {
        scan.iter()
            .filter(|(r, _)| *r <= upto)
            .map(|(r, n)| n / (*r as f64).powf(params.lambda))
            .fold(0.0, f64::max)
    };
    let full = weighted(params.qmax);
    let half = weighted((params.qmax / 2).max(2));
    let trunc = if full > 0.0 { (full - half) / full } else { 0.0 };
    let s = forward(f);
    let mut sum = 0.0;
    for (axis, p) in [Axis::X, Axis::Y, Axis::Z].into_iter().zip(params.p) {
        let d = crate::grid::inverse(&deriv_spec(&s, axis));
        sum += lq_norm(f, p)? + lq_norm(&d, p)?;
    }
    let rhs = full.max(1.0) * (sum + std::f64::consts::E).ln().powf(params.lambda);
    Ok((lhs, rhs, trunc))
}
