//! Seeded random test functions.
//!
//! Every sample is a finite Fourier series described independently of the
//! grid, so one seed gives the same function on every resolution whose
//! dealiasing cutoff covers the band limit.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{forward, inverse, Grid, Parity, RealField, SpectralField};

/// Shape family of a random sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    /// Random coefficients on a box of modes, independent horizontal and
    /// vertical degrees up to `max_degree`.
    TrigPoly { max_degree: usize },
    /// Sum of `count` periodic (von Mises) bumps with widths drawn per axis
    /// from `width`, measured as a fraction of the period.
    GaussianBump { count: usize, width: (f64, f64) },
    /// `exp(-s (1 - cos(pi (z - z0)/h)))` times a horizontal wave, with
    /// `s` drawn from `sharpness`.
    BoundaryLayer { sharpness: (f64, f64) },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleSpec {
    pub family: Family,
    pub seed: u64,
    /// Root-mean-square value is drawn log-uniformly from this range.
    pub amplitude: (f64, f64),
    pub parity: Parity,
    /// Largest |mode| kept in each direction.
    pub band: usize,
}

impl SampleSpec {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let cut = grid.cutoff();
        if cut.iter().any(|&c| c < self.band) {
            return Err(Error::InvalidArgument(format!(
                "band {} exceeds the dealiasing cutoff {:?} of the grid",
                self.band, cut
            )));
        }
        let (lo, hi) = self.amplitude;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::InvalidArgument(format!("amplitude range ({lo}, {hi}) is invalid")));
        }
        match self.family {
            Family::TrigPoly { max_degree } if max_degree == 0 => {
                Err(Error::InvalidArgument("trig_poly needs max_degree >= 1".into()))
            }
            Family::GaussianBump { count, width } => {
                let min_cells = 2.0 / grid.nx().min(grid.ny()).min(grid.nz()) as f64;
                if count == 0 || !(width.0 > min_cells && width.1 >= width.0) {
                    return Err(Error::InvalidArgument(format!(
                        "gaussian_bump widths {width:?} must exceed two grid cells ({min_cells})"
                    )));
                }
                Ok(())
            }
            Family::BoundaryLayer { sharpness } if !(sharpness.0 > 0.0 && sharpness.1 >= sharpness.0) => {
                Err(Error::InvalidArgument(format!("sharpness range {sharpness:?} is invalid")))
            }
            _ => Ok(()),
        }
    }
}

/// Fourier coefficients keyed by signed mode numbers `(jx, jy, m)`, in the
/// basis `exp(2 pi i (jx x + jy y) + i m pi (z + h)/h)`.
pub type Modes = BTreeMap<(i64, i64, i64), Complex64>;

/// `I_n(k) e^{-k}` by its power series.
fn scaled_bessel_i(n: usize, k: f64) -> f64 {
    let half = 0.5 * k;
    let mut term = half.powi(n as i32) / (1..=n).map(|j| j as f64).product::<f64>();
    let mut sum = 0.0;
    for m in 0..200 {
        sum += term;
        term *= half * half / ((m + 1) as f64 * (m + 1 + n) as f64);
        if term < 1e-18 * sum {
            break;
        }
    }
    sum * (-k).exp()
}

/// Coefficients of `exp(k (cos(theta - theta0) - 1))` in `exp(i n theta)`.
fn von_mises(k: f64, theta0: f64, band: usize) -> Vec<(i64, Complex64)> {
    (-(band as i64)..=band as i64)
        .map(|n| {
            let a = scaled_bessel_i(n.unsigned_abs() as usize, k);
            (n, Complex64::from_polar(a, -(n as f64) * theta0))
        })
        .collect()
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi <= lo {
        return lo;
    }
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn add(modes: &mut Modes, key: (i64, i64, i64), c: Complex64) {
    *modes.entry(key).or_default() += c;
}

fn tensor(modes: &mut Modes, scale: f64, x: &[(i64, Complex64)], y: &[(i64, Complex64)], z: &[(i64, Complex64)]) {
    for &(a, ca) in x {
        for &(b, cb) in y {
            for &(m, cm) in z {
                add(modes, (a, b, m), ca * cb * cm * scale);
            }
        }
    }
}

/// Mode dictionary of one sample; `h` fixes the z-phase of bumps and layers.
pub fn sample_modes(spec: &SampleSpec, h: f64) -> Modes {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let band = spec.band as i64;
    let mut modes = Modes::new();
    match spec.family {
        Family::TrigPoly { max_degree } => {
            let dmax = max_degree.min(spec.band) as i64;
            let dh = rng.gen_range(1..=dmax);
            let dz = rng.gen_range(0..=dmax);
            let decay = rng.gen_range(0.0..3.0);
            for jx in -dh..=dh {
                for jy in -dh..=dh {
                    for m in -dz..=dz {
                        let w = (1.0 + (jx * jx + jy * jy + m * m) as f64).powf(-0.5 * decay);
                        let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * w;
                        add(&mut modes, (jx, jy, m), c);
                    }
                }
            }
        }
        Family::GaussianBump { count, width } => {
            for _ in 0..count {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let kappa = |rng: &mut ChaCha8Rng| {
                    let w: f64 = rng.gen_range(width.0..=width.1);
                    1.0 / (2.0 * PI * w).powi(2)
                };
                let (kx, ky, kz) = (kappa(&mut rng), kappa(&mut rng), kappa(&mut rng));
                let (x0, y0): (f64, f64) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
                let z0: f64 = rng.gen_range(-h..h);
                let fx = von_mises(kx, 2.0 * PI * x0, spec.band);
                let fy = von_mises(ky, 2.0 * PI * y0, spec.band);
                let fz = von_mises(kz, PI * (z0 + h) / h, spec.band);
                tensor(&mut modes, sign * rng.gen_range(0.5..1.0), &fx, &fy, &fz);
            }
        }
        Family::BoundaryLayer { sharpness } => {
            let s = rng.gen_range(sharpness.0..=sharpness.1);
            let z0: f64 = if rng.gen_bool(0.5) { -h } else { rng.gen_range(-h..h) };
            let fz = von_mises(s, PI * (z0 + h) / h, spec.band);
            let jx = rng.gen_range(-band.min(3)..=band.min(3));
            let jy = rng.gen_range(-band.min(3)..=band.min(3));
            let a: f64 = rng.gen_range(0.0..1.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let mut fxy = vec![((0, 0), Complex64::new(1.0, 0.0))];
            if (jx, jy) != (0, 0) {
                fxy.push(((jx, jy), Complex64::from_polar(0.5 * a, phase)));
                fxy.push(((-jx, -jy), Complex64::from_polar(0.5 * a, -phase)));
            }
            for ((a, b), c) in fxy {
                for &(m, cm) in &fz {
                    add(&mut modes, (a, b, m), c * cm);
                }
            }
        }
    }
    modes.retain(|&(a, b, m), _| a.abs() <= band && b.abs() <= band && m.abs() <= band);
    // real-valued: c(-k) = conj c(k)
    let keys: Vec<_> = modes.keys().copied().collect();
    let mut sym = Modes::new();
    for k in keys {
        let neg = (-k.0, -k.1, -k.2);
        let c = modes[&k];
        let d = modes.get(&neg).copied().unwrap_or_default();
        sym.insert(k, 0.5 * (c + d.conj()));
    }
    let sign = match spec.parity {
        Parity::Even => Some(1.0),
        Parity::Odd => Some(-1.0),
        Parity::None => None,
    };
    if let Some(sign) = sign {
        let keys: Vec<_> = sym.keys().copied().collect();
        let mut par = Modes::new();
        for k in keys {
            let refl = sym.get(&(k.0, k.1, -k.2)).copied().unwrap_or_default();
            par.insert(k, 0.5 * (sym[&k] + refl * sign));
            par.entry((k.0, k.1, -k.2)).or_insert(0.5 * (refl + sym[&k] * sign));
        }
        sym = par;
    }
    let energy: f64 = sym.values().map(|c| c.norm_sqr()).sum();
    if energy > 0.0 {
        let amp = log_uniform(&mut rng, spec.amplitude);
        let s = amp / energy.sqrt();
        for c in sym.values_mut() {
            *c *= s;
        }
    }
    sym
}

/// A sample realized on a grid.
#[derive(Clone, Debug)]
pub struct Sample {
    pub field: RealField,
    pub spectral: SpectralField,
    /// Nonzero modes as `(kx, ky, kz, c)` for off-grid evaluation.
    sparse: Vec<([f64; 3], Complex64)>,
}

fn grid_index(grid: &Grid, (a, b, m): (i64, i64, i64)) -> usize {
    let wrap = |j: i64, n: usize| j.rem_euclid(n as i64) as usize;
    grid.index(wrap(a, grid.nx()), wrap(b, grid.ny()), wrap(m, grid.nz()))
}

impl Sample {
    pub fn from_modes(grid: &Grid, modes: &Modes, parity: Parity) -> Sample {
        let mut coeffs = vec![Complex64::default(); grid.len()];
        let mut sparse = Vec::with_capacity(modes.len());
        for (&k, &c) in modes {
            coeffs[grid_index(grid, k)] += c;
            let kv = [
                2.0 * PI * k.0 as f64,
                2.0 * PI * k.1 as f64,
                PI * k.2 as f64 / grid.h(),
            ];
            sparse.push((kv, c));
        }
        let spectral = SpectralField::new(grid, coeffs, parity).expect("sized to the grid");
        let field = inverse(&spectral);
        Sample { field, spectral, sparse }
    }

    /// Draw the described function on the grid.
    pub fn draw(grid: &Grid, spec: &SampleSpec) -> Result<Sample> {
        spec.validate(grid)?;
        Ok(Sample::from_modes(grid, &sample_modes(spec, grid.h()), spec.parity))
    }

    /// Wrap an arbitrary field; off-grid evaluation uses its interpolant.
    pub fn from_field(field: &RealField) -> Sample {
        let spectral = forward(field);
        let g = field.grid().clone();
        let big = spectral.coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max);
        let mut sparse = Vec::new();
        for (i, &c) in spectral.coeffs().iter().enumerate() {
            if c.norm() > 1e-14 * big && big > 0.0 {
                let (ix, iy, iz) = g.coords_of(i);
                sparse.push(([g.kx()[ix], g.ky()[iy], g.kz()[iz]], c));
            }
        }
        Sample { field: field.clone(), spectral, sparse }
    }

    /// Value of the trigonometric interpolant at an arbitrary point.
    pub fn eval(&self, x: f64, y: f64, z: f64) -> f64 {
        let zh = z + self.field.grid().h();
        self.sparse
            .iter()
            .map(|(k, c)| (c * Complex64::from_polar(1.0, k[0] * x + k[1] * y + k[2] * zh)).re)
            .sum()
    }

    pub fn grid(&self) -> &Grid {
        self.field.grid()
    }

    /// `max |f|` refined off the grid by pattern search around the best
    /// collocation points.
    pub fn max_abs_refined(&self) -> f64 {
        let g = self.grid();
        let vals = self.field.values();
        let mut order: Vec<usize> = (0..vals.len()).collect();
        let top = 4.min(order.len());
        order.select_nth_unstable_by(top - 1, |&a, &b| vals[b].abs().total_cmp(&vals[a].abs()));
        let mut best = self.field.max_abs();
        for &i in &order[..top] {
            let (ix, iy, iz) = g.coords_of(i);
            let mut p = [g.x(ix), g.y(iy), g.z(iz)];
            let mut cur = self.eval(p[0], p[1], p[2]).abs();
            let mut step = [0.5 * g.dx(), 0.5 * g.dy(), 0.5 * g.dz()];
            while step[0] > g.dx() * 1e-4 {
                let mut moved = false;
                for axis in 0..3 {
                    for s in [-1.0, 1.0] {
                        let mut q = p;
                        q[axis] += s * step[axis];
                        let v = self.eval(q[0], q[1], q[2]).abs();
                        if v > cur {
                            cur = v;
                            p = q;
                            moved = true;
                        }
                    }
                }
                if !moved {
                    for s in &mut step {
                        *s *= 0.5;
                    }
                }
            }
            best = best.max(cur);
        }
        best
    }
}

/// Evaluates horizontal planes `f(., ., z)` of a sparse Fourier series at
/// arbitrary heights.
pub struct PlaneEvaluator {
    nx: usize,
    ny: usize,
    fx: Arc<dyn Fft<f64>>,
    fy: Arc<dyn Fft<f64>>,
}

impl PlaneEvaluator {
    pub fn new(grid: &Grid) -> PlaneEvaluator {
        let mut planner = FftPlanner::new();
        PlaneEvaluator {
            nx: grid.nx(),
            ny: grid.ny(),
            fx: planner.plan_fft_inverse(grid.nx()),
            fy: planner.plan_fft_inverse(grid.ny()),
        }
    }

    /// Collocation values of the plane at height `z`, x fastest.
    pub fn plane(&self, sample: &Sample, z: f64) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let g = sample.grid();
        let zh = z + g.h();
        let mut data = vec![Complex64::default(); nx * ny];
        for (k, c) in &sample.sparse {
            let ix = ((k[0] / (2.0 * PI)).round() as i64).rem_euclid(nx as i64) as usize;
            let iy = ((k[1] / (2.0 * PI)).round() as i64).rem_euclid(ny as i64) as usize;
            data[ix + nx * iy] += c * Complex64::from_polar(1.0, k[2] * zh);
        }
        for row in data.chunks_mut(nx) {
            self.fx.process(row);
        }
        let mut col = vec![Complex64::default(); ny];
        for ix in 0..nx {
            for iy in 0..ny {
                col[iy] = data[ix + nx * iy];
            }
            self.fy.process(&mut col);
            for iy in 0..ny {
                data[ix + nx * iy] = col[iy];
            }
        }
        data.into_iter().map(|c| c.re).collect()
    }
}

/// Draw a spec for ensemble member `index`, cycling through the families.
pub fn ensemble_spec(master: u64, index: u64, band: usize) -> (SampleSpec, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    let family = match rng.gen_range(0..3) {
        0 => Family::TrigPoly { max_degree: band },
        1 => Family::GaussianBump { count: rng.gen_range(1..=3), width: (0.08, 0.25) },
        _ => Family::BoundaryLayer { sharpness: (1.0, 6.0) },
    };
    let spec = SampleSpec {
        family,
        seed: rng.gen(),
        amplitude: (0.1, 10.0),
        parity: Parity::None,
        band,
    };
    (spec, rng)
}
