//! Norms and differential inequalities tracked along solver trajectories.
//!
//! Constants in the majorants are set to 1 and fitted afterwards as
//! `C* = max LHS/RHS`. Time derivatives of tracked quantities are discrete
//! differences of the recorded series.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{inverse, RealField, SpectralField};
use crate::norms::{local_energy_profile_multi, lq_norm, magnitude, weighted_lq_sup};
use crate::operators::{deriv_spec, laplacian_h_spec, Axis};
use crate::solver::{Accumulators, State};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonitorConfig {
    /// Exponent of the `||d_z v||_m^m` entry, `m > 2`.
    pub m: f64,
    /// Exponent of the `||u||_q^q` inequality.
    pub q: f64,
    /// Exponent `r > 2` of the `||u||_r^{4r/(r-2)}` majorant.
    pub r: f64,
    pub qmax: usize,
    /// Radius of the local energy profile of `u = d_z v`.
    pub r0: f64,
    /// Disk centers are taken every `stride` columns.
    pub stride: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig { m: 4.0, q: 4.0, r: 4.0, qmax: 128, r0: 0.25, stride: 2 }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 2.0 && self.m.is_finite()) {
            return Err(Error::Config(format!("m={} must lie in (2, inf)", self.m)));
        }
        if !(self.q >= 2.0 && self.q.is_finite()) {
            return Err(Error::Config(format!("q={} must lie in [2, inf)", self.q)));
        }
        if !(self.r > 2.0 && self.r.is_finite()) {
            return Err(Error::Config(format!("r={} must lie in (2, inf)", self.r)));
        }
        if self.qmax < 2 {
            return Err(Error::Config(format!("qmax={} must be >= 2", self.qmax)));
        }
        if !(self.r0 > 0.0) {
            return Err(Error::Config(format!("r0={} must be > 0", self.r0)));
        }
        Ok(())
    }
}

macro_rules! row {
    ($($(#[$doc:meta])* $name:ident),* $(,)?) => {
        /// One recorded time. Squared norms carry a `_sq` suffix.
        #[derive(Clone, Copy, Debug, Default, PartialEq)]
        pub struct MonitorRow {
            $($(#[$doc])* pub $name: f64,)*
        }

        impl MonitorRow {
            pub const COLUMNS: &'static [&'static str] = &[$(stringify!($name)),*];

            pub fn values(&self) -> Vec<f64> {
                vec![$(self.$name),*]
            }

            pub fn from_values(v: &[f64]) -> Result<MonitorRow> {
                if v.len() != Self::COLUMNS.len() {
                    return Err(Error::ShapeMismatch { expected: Self::COLUMNS.len(), actual: v.len() });
                }
                let mut it = v.iter().copied();
                Ok(MonitorRow { $($name: it.next().expect("length checked")),* })
            }
        }
    };
}

row! {
    t,
    eps,
    v_l2,
    v_l6,
    t_l6,
    int_grad_h_v,
    int_eps_dz_v,
    int_grad_h_t,
    /// `||u||_2^2` with `u = d_z v`.
    u_sq,
    /// `||u||_m^m`.
    u_lm,
    grad_h_v_sq,
    grad_t_sq,
    /// `sup_{2 <= q <= qmax} ||v||_q / sqrt(q)`.
    v_weighted,
    /// `sup_x int_{D_r0(x) x (-h,h)} |u|^2`.
    u_local,
    dt_v_sq,
    dt_t_sq,
    v_inf,
    lap_h_v_sq,
    eps_grad_h_u_sq,
    grad_h_u_sq,
    /// `||u||_q^q`.
    u_lq,
    /// `int |u|^{q-2} (|grad_H u|^2 + eps |d_z u|^2)`.
    u_lq_dissipation,
    u_lr,
    grad_h_t_sq,
    grad_v_sq,
    grad_h_grad_v_sq,
    grad_h_grad_t_sq,
    eps_dz_grad_t_sq,
    dz_u_sq,
    dzz_t_sq,
    v_h1_sq,
    t_h1_sq,
    grad_h_v_h1_sq,
    grad_h_t_h1_sq,
}

/// Time series of monitor rows for one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct MonitorState {
    pub config: MonitorConfig,
    pub rows: Vec<MonitorRow>,
    /// `|local profile at full cover - ||u||_2^2|` relative, at the first record.
    pub cover_defect: Option<f64>,
}

fn sq(s: &SpectralField) -> f64 {
    s.norm2_sq()
}

fn d(s: &SpectralField, a: Axis) -> SpectralField {
    deriv_spec(s, a)
}

/// `sum_i ||d_a s_i||^2` over the given axes.
fn grad_sq(fields: &[&SpectralField], axes: &[Axis]) -> f64 {
    fields.iter().map(|f| axes.iter().map(|&a| sq(&d(f, a))).sum::<f64>()).sum()
}

const H: [Axis; 2] = [Axis::X, Axis::Y];
const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

impl MonitorState {
    pub fn new(config: MonitorConfig) -> Result<MonitorState> {
        config.validate()?;
        Ok(MonitorState { config, rows: Vec::new(), cover_defect: None })
    }

    /// Evaluate all tracked quantities at `state`; `acc` holds the running
    /// dissipation integrals up to `state.time`.
    pub fn evaluate(&self, state: &State, acc: &Accumulators) -> Result<MonitorRow> {
        let c = &self.config;
        let eps = state.physics().eps;
        let [s1, s2, st] = state.spectral();
        let (u1s, u2s) = (d(s1, Axis::Z), d(s2, Axis::Z));
        let (u1, u2) = (inverse(&u1s), inverse(&u2s));
        let vmag = magnitude(&[&state.v1, &state.v2]);
        let umag = magnitude(&[&u1, &u2]);
        let (dtv, dtt) = state.time_derivative_norms();

        // |u|^{q-2}(|grad_H u|^2 + eps |d_z u|^2), pointwise
        let grads: Vec<RealField> = [&u1s, &u2s]
            .iter()
            .flat_map(|s| [inverse(&d(s, Axis::X)), inverse(&d(s, Axis::Y)), inverse(&d(s, Axis::Z))])
            .collect();
        let w = state.grid().cell_volume();
        let mut diss = 0.0;
        for (i, um) in umag.values().iter().enumerate() {
            let gh: f64 = [0, 1, 3, 4].iter().map(|&k| grads[k].values()[i].powi(2)).sum();
            let gz: f64 = [2, 5].iter().map(|&k| grads[k].values()[i].powi(2)).sum();
            diss += um.powf(c.q - 2.0) * (gh + eps * gz);
        }
        diss *= w;

        let grad_h_v = grad_sq(&[s1, s2], &H);
        let grad_v = grad_sq(&[s1, s2], &ALL);
        let grad_t = grad_sq(&[st], &ALL);
        let grad_h_t = grad_sq(&[st], &H);
        let v_sq = sq(s1) + sq(s2);
        let t_sq = sq(st);
        // second derivatives d_a d_b with a horizontal
        let hess = |f: &SpectralField, bs: &[Axis]| -> f64 {
            H.iter().map(|&a| grad_sq(&[&d(f, a)], bs)).sum()
        };
        let grad_h_grad_v = hess(s1, &ALL) + hess(s2, &ALL);
        let grad_h_grad_t = hess(st, &ALL);
        let dz_grad_t = grad_sq(&[&d(st, Axis::Z)], &ALL);
        let u_lq = lq_norm(&umag, c.q)?.powf(c.q);

        Ok(MonitorRow {
            t: state.time,
            eps,
            v_l2: v_sq.sqrt(),
            v_l6: lq_norm(&vmag, 6.0)?,
            t_l6: lq_norm(&state.temp, 6.0)?,
            int_grad_h_v: acc.grad_v,
            int_eps_dz_v: acc.eps_dz_v,
            int_grad_h_t: acc.grad_t,
            u_sq: sq(&u1s) + sq(&u2s),
            u_lm: lq_norm(&umag, c.m)?.powf(c.m),
            grad_h_v_sq: grad_h_v,
            grad_t_sq: grad_t,
            v_weighted: weighted_lq_sup(&vmag, c.qmax)?,
            u_local: local_energy_profile_multi(&[&u1, &u2], c.r0, c.stride)?,
            dt_v_sq: dtv,
            dt_t_sq: dtt,
            v_inf: vmag.max_abs(),
            lap_h_v_sq: sq(&laplacian_h_spec(s1)) + sq(&laplacian_h_spec(s2)),
            eps_grad_h_u_sq: eps * grad_sq(&[&u1s, &u2s], &H),
            grad_h_u_sq: grad_sq(&[&u1s, &u2s], &H),
            u_lq,
            u_lq_dissipation: diss,
            u_lr: lq_norm(&umag, c.r)?,
            grad_h_t_sq: grad_h_t,
            grad_v_sq: grad_v,
            grad_h_grad_v_sq: grad_h_grad_v,
            grad_h_grad_t_sq: grad_h_grad_t,
            eps_dz_grad_t_sq: eps * dz_grad_t,
            dz_u_sq: sq(&d(&u1s, Axis::Z)) + sq(&d(&u2s, Axis::Z)),
            dzz_t_sq: sq(&d(&d(st, Axis::Z), Axis::Z)),
            v_h1_sq: v_sq + grad_v,
            t_h1_sq: t_sq + grad_t,
            grad_h_v_h1_sq: grad_h_v + grad_h_grad_v,
            grad_h_t_h1_sq: grad_h_t + grad_h_grad_t,
        })
    }

    /// Append the quantities at `state`.
    pub fn record(&mut self, state: &State, acc: &Accumulators) -> Result<&MonitorRow> {
        if let Some(last) = self.rows.last() {
            if !(state.time > last.t) {
                return Err(Error::InvalidArgument(format!(
                    "monitor times must increase: {} after {}",
                    state.time, last.t
                )));
            }
        }
        let row = self.evaluate(state, acc)?;
        if self.cover_defect.is_none() {
            let [s1, s2, _] = state.spectral();
            let (u1, u2) = (inverse(&d(s1, Axis::Z)), inverse(&d(s2, Axis::Z)));
            let full = local_energy_profile_multi(&[&u1, &u2], 1.0, usize::MAX)?;
            self.cover_defect = Some((full - row.u_sq).abs() / row.u_sq.max(f64::MIN_POSITIVE));
        }
        self.rows.push(row);
        Ok(self.rows.last().expect("just pushed"))
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    /// Running value `sup_{s<=t}(||v||_6^2 + ||T||_6^2) + int_0^t (dissipation)`.
    pub fn l6_series(&self) -> Vec<f64> {
        let mut sup = 0.0_f64;
        self.rows
            .iter()
            .map(|r| {
                sup = sup.max(r.v_l6.powi(2) + r.t_l6.powi(2));
                sup + r.int_grad_h_v + r.int_eps_dz_v + r.int_grad_h_t
            })
            .collect()
    }
}

/// Discrete `d/dt` of a series: three-point differences inside, one-sided
/// at the ends.
pub fn discrete_derivative(t: &[f64], x: &[f64]) -> Vec<f64> {
    let n = t.len();
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| {
                if i == 0 {
                    (x[1] - x[0]) / (t[1] - t[0])
                } else if i == n - 1 {
                    (x[n - 1] - x[n - 2]) / (t[n - 1] - t[n - 2])
                } else {
                    let (h0, h1) = (t[i] - t[i - 1], t[i + 1] - t[i]);
                    (-h1 / (h0 * (h0 + h1))) * x[i - 1] + ((h1 - h0) / (h0 * h1)) * x[i]
                        + (h0 / (h1 * (h0 + h1))) * x[i + 1]
                }
            })
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedLq {
    pub initial: f64,
    pub sup: f64,
    /// `sup` exceeded ten times the initial value.
    pub flagged: bool,
}

/// `sup_t sup_{2<=q<=qmax} ||v||_q / sqrt(q)` against its initial value.
pub fn check_weighted_lq(monitor: &MonitorState) -> WeightedLq {
    let initial = monitor.rows.first().map_or(0.0, |r| r.v_weighted);
    let sup = monitor.rows.iter().map(|r| r.v_weighted).fold(0.0, f64::max);
    WeightedLq { initial, sup, flagged: sup > 10.0 * initial }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Inequality {
    /// `d/dt ||u||_q^q + int |u|^{q-2}(|grad_H u|^2 + eps|d_z u|^2)`.
    LqEnergy(f64),
    /// `d/dt ||grad_H v||^2 + ...` with `||u||_r^{4r/(r-2)}`.
    GradVLr(f64),
    GradHV,
    GradT,
    TimeDerivative,
}

impl fmt::Display for Inequality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inequality::LqEnergy(q) => write!(f, "lq-energy(q={q})"),
            Inequality::GradVLr(r) => write!(f, "grad-v-lr(r={r})"),
            Inequality::GradHV => f.write_str("grad-h-v"),
            Inequality::GradT => f.write_str("grad-t"),
            Inequality::TimeDerivative => f.write_str("time-derivative"),
        }
    }
}

/// Majorants below this fraction of their largest value are treated as
/// numerically zero and left out of the fit.
pub const RHS_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct DiffIneqCheck {
    pub id: Inequality,
    pub t: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// `LHS/RHS`, or 0 where the majorant is below the floor.
    pub ratio: Vec<f64>,
    /// `max(0, max_t LHS/RHS)` over resolved times.
    pub c_star: f64,
    /// Times left out because the majorant was below the floor.
    pub excluded: usize,
}

impl DiffIneqCheck {
    fn new(id: Inequality, t: Vec<f64>, lhs: Vec<f64>, rhs: Vec<f64>) -> Result<DiffIneqCheck> {
        if let Some((index, &value)) = lhs.iter().chain(&rhs).enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        if rhs.iter().any(|r| *r < 0.0) {
            return Err(Error::InvalidArgument(format!("{id}: negative majorant")));
        }
        let floor = RHS_FLOOR * rhs.iter().copied().fold(0.0, f64::max);
        let mut excluded = 0;
        let ratio: Vec<f64> = lhs
            .iter()
            .zip(&rhs)
            .map(|(l, r)| {
                if *r > floor {
                    l / r
                } else {
                    excluded += 1;
                    0.0
                }
            })
            .collect();
        let c_star = ratio.iter().copied().fold(0.0, f64::max);
        Ok(DiffIneqCheck { id, t, lhs, rhs, ratio, c_star, excluded })
    }
}

/// Evaluate one differential inequality on the recorded series.
pub fn check_diff_inequality(monitor: &MonitorState, id: Inequality) -> Result<DiffIneqCheck> {
    let rows = &monitor.rows;
    let t = monitor.times();
    let c = &monitor.config;
    let series = |f: fn(&MonitorRow) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    let (x, rest, rhs): (Vec<f64>, Vec<f64>, Vec<f64>) = match id {
        Inequality::LqEnergy(q) => {
            if q != c.q {
                return Err(Error::InvalidArgument(format!("monitor tracked q={}, not {q}", c.q)));
            }
            (
                series(|r| r.u_lq),
                series(|r| r.u_lq_dissipation),
                rows.iter().map(|r| (1.0 + r.v_inf.powi(2)) * (1.0 + r.u_lq)).collect(),
            )
        }
        Inequality::GradVLr(rr) => {
            if rr != c.r {
                return Err(Error::InvalidArgument(format!("monitor tracked r={}, not {rr}", c.r)));
            }
            let e = 4.0 * rr / (rr - 2.0);
            (
                series(|r| r.grad_h_v_sq),
                series(|r| r.lap_h_v_sq + r.eps_grad_h_u_sq),
                rows.iter()
                    .map(|r| r.v_inf.powi(2) * r.grad_h_v_sq + r.u_lr.powf(e) + r.grad_h_t_sq + 1.0)
                    .collect(),
            )
        }
        Inequality::GradHV => (
            series(|r| r.grad_h_v_sq),
            series(|r| r.lap_h_v_sq + r.eps_grad_h_u_sq),
            rows.iter()
                .map(|r| {
                    (r.v_l2.powi(2) + r.u_sq + 1.0).powi(2) * (r.grad_h_v_sq + r.grad_h_u_sq + 1.0) * r.grad_h_v_sq
                })
                .collect(),
        ),
        Inequality::GradT => (
            series(|r| r.grad_t_sq),
            series(|r| r.grad_h_grad_t_sq + r.eps_dz_grad_t_sq),
            rows.iter()
                .map(|r| {
                    (r.v_l2.powi(2) + r.grad_v_sq + 1.0).powi(2)
                        * (r.grad_h_v_sq + r.grad_h_grad_v_sq + 1.0)
                        * (r.grad_t_sq + 1.0)
                })
                .collect(),
        ),
        Inequality::TimeDerivative => return check_time_derivative(monitor),
    };
    let dx = discrete_derivative(&t, &x);
    let lhs = dx.iter().zip(&rest).map(|(a, b)| a + b).collect();
    DiffIneqCheck::new(id, t, lhs, rhs)
}

/// `||d_t v||^2 + ||d_t T||^2` against its majorant.
pub fn check_time_derivative(monitor: &MonitorState) -> Result<DiffIneqCheck> {
    let rows = &monitor.rows;
    let lhs = rows.iter().map(|r| r.dt_v_sq + r.dt_t_sq).collect();
    let rhs = rows
        .iter()
        .map(|r| {
            r.eps * r.eps * (r.dz_u_sq + r.dzz_t_sq)
                + (r.v_h1_sq + r.t_h1_sq + 1.0).powi(2) * (r.grad_h_v_h1_sq + r.grad_h_t_h1_sq + 1.0)
        })
        .collect();
    DiffIneqCheck::new(Inequality::TimeDerivative, monitor.times(), lhs, rhs)
}

/// `|C*_fine - C*_coarse| / C*_coarse`; above `tolerance` the constant is
/// treated as diverging under refinement.
pub fn refinement_drift(coarse: &DiffIneqCheck, fine: &DiffIneqCheck, tolerance: f64) -> (f64, bool) {
    if coarse.c_star == 0.0 && fine.c_star == 0.0 {
        return (0.0, false);
    }
    let drift = (fine.c_star - coarse.c_star).abs() / coarse.c_star.max(f64::MIN_POSITIVE);
    (drift, drift > tolerance)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalEnergy {
    /// First recorded time with profile above `8 delta0^2`, else the last time.
    pub t0: f64,
    pub exceeded: bool,
    pub threshold: f64,
    pub series: Vec<(f64, f64)>,
}

/// Observed exceedance of the local energy of `d_z v` over `8 delta0^2`.
pub fn check_local_energy(monitor: &MonitorState, delta0: f64, r0: f64) -> Result<LocalEnergy> {
    if r0 != monitor.config.r0 {
        return Err(Error::InvalidArgument(format!(
            "profile was tracked at r0={}, not {r0}",
            monitor.config.r0
        )));
    }
    if !(delta0 > 0.0) {
        return Err(Error::InvalidArgument(format!("delta0={delta0} must be > 0")));
    }
    let threshold = 8.0 * delta0 * delta0;
    let series: Vec<(f64, f64)> = monitor.rows.iter().map(|r| (r.t, r.u_local)).collect();
    let hit = series.iter().find(|(_, p)| *p > threshold);
    Ok(LocalEnergy {
        t0: hit.or(series.last()).map_or(0.0, |s| s.0),
        exceeded: hit.is_some(),
        threshold,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::solver::{run_with, InitialData, Physics, SolverConfig, Start};
    use std::f64::consts::PI;

    fn monitored(initial: InitialData, grid: (usize, usize, usize), physics: Physics, dt: f64, t_end: f64) -> MonitorState {
        let g = make_grid(grid.0, grid.1, grid.2, 0.5).unwrap();
        let state = initial.state(&g, physics).unwrap();
        let cfg = SolverConfig::fixed(physics, dt, t_end);
        let mut m = MonitorState::new(MonitorConfig::default()).unwrap();
        let s = run_with(&cfg, Start::new(state), |s| m.record(s.state, s.acc).map(|_| ())).unwrap();
        assert!(s.failure.is_none());
        m
    }

    #[test]
    fn zero_run_is_all_zero() {
        let m = monitored(InitialData::Zero, (8, 8, 8), Physics::default(), 0.1, 0.3);
        assert_eq!(m.rows.len(), 4);
        for r in &m.rows {
            let v = r.values();
            assert!(v[2..].iter().all(|&x| x == 0.0), "{r:?}");
        }
        assert_eq!(check_weighted_lq(&m).sup, 0.0);
        for id in [Inequality::LqEnergy(4.0), Inequality::GradVLr(4.0), Inequality::GradHV, Inequality::GradT, Inequality::TimeDerivative] {
            let c = check_diff_inequality(&m, id).unwrap();
            assert_eq!(c.c_star, 0.0);
            assert!(c.lhs.iter().all(|&l| l == 0.0));
        }
        let le = check_local_energy(&m, 0.1, 0.25).unwrap();
        assert!(!le.exceeded);
        assert_eq!(le.t0, 0.3);
    }

    #[test]
    fn taylor_run_matches_closed_forms() {
        let a = 0.7;
        let m = monitored(InitialData::Taylor { a }, (16, 16, 8), Physics { eps: 0.1, f0: 1.0 }, 1e-3, 0.05);
        let k = 8.0 * PI * PI;
        for r in &m.rows {
            let e = a * a * 0.5 * (-k * r.t).exp();
            assert!((r.v_l2.powi(2) - e).abs() < 1e-8 * e);
            // int_0^t ||grad_H v||^2 = 4 pi^2 A^2 h (1 - e^{-8 pi^2 t}) / (8 pi^2)
            let g = 4.0 * PI * PI * a * a * 0.5 * (1.0 - (-k * r.t).exp()) / k;
            assert!((r.int_grad_h_v - g).abs() < 1e-8 * g.max(1e-12), "{} {}", r.int_grad_h_v, g);
            assert_eq!(r.u_sq, 0.0);
            // d_t v = -4 pi^2 v
            let dt = 16.0 * PI.powi(4) * r.v_l2.powi(2);
            assert!((r.dt_v_sq - dt).abs() < 1e-6 * dt);
        }
        let c = check_diff_inequality(&m, Inequality::LqEnergy(4.0)).unwrap();
        assert!(c.lhs.iter().all(|&l| l == 0.0));
        let p = check_time_derivative(&m).unwrap();
        assert!(p.c_star.is_finite() && p.c_star > 0.0);
        // the running sums never decrease
        for w in m.rows.windows(2) {
            assert!(w[1].int_grad_h_v >= w[0].int_grad_h_v);
        }
    }

    #[test]
    fn constant_velocity_gives_constant_weighted_sup() {
        // z-independent shear with no viscosity decay in z: use a uniform flow
        let g = make_grid(8, 8, 8, 0.5).unwrap();
        let physics = Physics { eps: 0.0, f0: 0.0 };
        let one = crate::grid::sample(&g, |_, _, _| 0.4).unwrap().with_parity(crate::grid::Parity::Even);
        let zero_e = RealField::zeros(&g, crate::grid::Parity::Even);
        let zero_o = RealField::zeros(&g, crate::grid::Parity::Odd);
        let state = State::from_initial(&one, &zero_e, &zero_o, physics).unwrap();
        let cfg = SolverConfig::fixed(physics, 0.05, 0.2);
        let mut m = MonitorState::new(MonitorConfig::default()).unwrap();
        run_with(&cfg, Start::new(state), |s| m.record(s.state, s.acc).map(|_| ())).unwrap();
        let first = m.rows[0].v_weighted;
        assert!(m.rows.iter().all(|r| (r.v_weighted - first).abs() <= 1e-12 * first));
        assert!(!check_weighted_lq(&m).flagged);
        // eps = 0: eps-weighted entries vanish exactly
        assert!(m.rows.iter().all(|r| r.int_eps_dz_v == 0.0 && r.eps_grad_h_u_sq == 0.0 && r.eps_dz_grad_t_sq == 0.0));
    }

    #[test]
    fn derivative_of_quadratic_is_exact() {
        let t = [0.0, 0.1, 0.25, 0.3, 0.7];
        let x: Vec<f64> = t.iter().map(|s| 3.0 * s * s - s).collect();
        let d = discrete_derivative(&t, &x);
        for i in 1..4 {
            assert!((d[i] - (6.0 * t[i] - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn local_energy_and_cover_consistency() {
        let m = monitored(
            InitialData::Smooth3d { amp: 0.5, seed: 4 },
            (16, 16, 16),
            Physics { eps: 0.01, f0: 1.0 },
            0.01,
            0.1,
        );
        assert!(m.cover_defect.unwrap() < 1e-12);
        let p0 = m.rows[0].u_local;
        // initial profile exactly delta0^2: no exceedance at t = 0
        let le = check_local_energy(&m, p0.sqrt(), 0.25).unwrap();
        assert!(le.t0 > 0.0);
        assert!(!check_local_energy(&m, 1e6, 0.25).unwrap().exceeded);
        assert!(check_local_energy(&m, 0.1, 0.3).is_err());
        let running = m.l6_series();
        assert!(running.windows(2).all(|w| w[1] >= w[0]) && running.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn config_rejects_bad_exponents() {
        assert!(MonitorConfig { m: 2.0, ..Default::default() }.validate().is_err());
        assert!(MonitorConfig { r: 2.0, ..Default::default() }.validate().is_err());
        let cols = MonitorRow::COLUMNS.len();
        let r = MonitorRow::from_values(&vec![1.5; cols]).unwrap();
        assert_eq!(r.values(), vec![1.5; cols]);
    }
}
