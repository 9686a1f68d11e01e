//! Logarithmic Gronwall comparison: instances where `A' + B = K A log B + f`
//! holds with equality, integrated to high accuracy and compared with
//! `e^Q (1 + 2Q)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Polynomial with nonnegative coefficients, lowest degree first.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn eval(&self, t: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    /// `int_0^t p`.
    pub fn integral(&self, t: f64) -> f64 {
        self.0.iter().enumerate().rev().fold(0.0, |acc, (i, c)| acc * t + c / (i + 1) as f64) * t
    }
}

/// How `B` depends on the state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Closure {
    /// `B = b0 + gamma A`.
    Linear { b0: f64, gamma: f64 },
    /// `B = b`, with `A` clamped at zero when the flow would push it negative.
    Constant { b: f64 },
}

impl Closure {
    fn b(&self, a: f64) -> f64 {
        match *self {
            Closure::Linear { b0, gamma } => b0 + gamma * a,
            Closure::Constant { b } => b,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GronwallInstance {
    pub k: f64,
    pub a0: f64,
    pub f: Poly,
    pub closure: Closure,
    pub horizon: f64,
}

impl GronwallInstance {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.k >= 1.0 && self.k.is_finite()) {
            return bad(format!("K={} must be >= 1", self.k));
        }
        if !(self.a0 >= 0.0 && self.a0.is_finite()) {
            return bad(format!("A0={} must be >= 0", self.a0));
        }
        if self.f.0.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return bad(format!("f coefficients {:?} must be nonnegative", self.f.0));
        }
        let bmin = match self.closure {
            Closure::Linear { gamma, .. } if gamma < 0.0 => return bad(format!("gamma={gamma} must be >= 0")),
            Closure::Linear { b0, .. } => b0,
            Closure::Constant { b } => b,
        };
        if !(bmin >= std::f64::consts::E) {
            return bad(format!("B={bmin} must be >= e"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon={} must be positive", self.horizon));
        }
        Ok(())
    }

    /// Right side of `(A, int B)'`; the flag reports an engaged clamp.
    fn flow(&self, t: f64, a: f64) -> (f64, f64, bool) {
        let a = a.max(0.0);
        let b = self.closure.b(a);
        let da = self.k * a * b.ln() + self.f.eval(t) - b;
        if a <= 0.0 && da < 0.0 {
            (0.0, b, true)
        } else {
            (da, b, false)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GronwallBound {
    pub q: f64,
    /// `e^Q (1 + 2Q)`, `+inf` on overflow.
    pub bound: f64,
    pub log_bound: f64,
    pub overflow: bool,
}

/// `Q(t) = e^{Kt}(log(A0 + 1) + (2K^2 + 1) t + int_0^t f)` and the bound.
pub fn gronwall_bound(inst: &GronwallInstance, t: f64) -> GronwallBound {
    let k = inst.k;
    let q = (k * t).exp() * ((inst.a0 + 1.0).ln() + (2.0 * k * k + 1.0) * t + inst.f.integral(t));
    let log_bound = q + (1.0 + 2.0 * q).ln();
    let bound = q.exp() * (1.0 + 2.0 * q);
    GronwallBound { q, bound, log_bound, overflow: !bound.is_finite() }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GronwallRow {
    pub t: f64,
    pub a: f64,
    pub int_b: f64,
    pub q: f64,
    /// `(A + int B) / bound`, evaluated in log space.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GronwallReport {
    pub rows: Vec<GronwallRow>,
    pub max_ratio: f64,
    pub violations: usize,
    /// Last time reached; below the final output time when `A` overflowed.
    pub reached: f64,
    pub partial: bool,
    /// The nonnegativity clamp engaged, so the hypothesis held only with slack.
    pub degenerate: bool,
}

const TOL: f64 = 1e-10;
const A_MAX: f64 = 1e300;

fn rk4(inst: &GronwallInstance, t: f64, y: [f64; 2], h: f64, clamp: &mut bool) -> [f64; 2] {
    let mut f = |t: f64, a: f64| {
        let (da, b, c) = inst.flow(t, a);
        *clamp |= c;
        [da, b]
    };
    let k1 = f(t, y[0]);
    let k2 = f(t + h / 2.0, y[0] + h / 2.0 * k1[0]);
    let k3 = f(t + h / 2.0, y[0] + h / 2.0 * k2[0]);
    let k4 = f(t + h, y[0] + h * k3[0]);
    let mut out = [0.0; 2];
    for i in 0..2 {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out[0] = out[0].max(0.0);
    out
}

/// Integrate the instance with step-doubling RK4 and compare with the bound
/// at every output time.
pub fn check_gronwall(inst: &GronwallInstance, times: &[f64]) -> Result<GronwallReport> {
    inst.validate()?;
    if times.windows(2).any(|w| w[1] <= w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidArgument("output times must be nonnegative and increasing".into()));
    }
    let mut t = 0.0;
    let mut y = [inst.a0, 0.0];
    let mut h: f64 = 1e-3;
    let mut degenerate = false;
    let mut rows = Vec::with_capacity(times.len());
    let mut partial = false;
    'outer: for &target in times {
        while t < target {
            let step = h.min(target - t);
            let mut c = false;
            let full = rk4(inst, t, y, step, &mut c);
            let half = rk4(inst, t, y, step / 2.0, &mut c);
            let two = rk4(inst, t + step / 2.0, half, step / 2.0, &mut c);
            let err = (0..2)
                .map(|i| (two[i] - full[i]).abs() / 15.0 / two[i].abs().max(1.0))
                .fold(0.0, f64::max);
            if !err.is_finite() || two[0] > A_MAX {
                partial = true;
                break 'outer;
            }
            if err <= TOL {
                t += step;
                for i in 0..2 {
                    y[i] = two[i] + (two[i] - full[i]) / 15.0;
                }
                y[0] = y[0].max(0.0);
                degenerate |= c;
                h = step * (0.9 * (TOL / err.max(1e-300)).powf(0.2)).min(4.0);
            } else {
                h = step * (0.9 * (TOL / err).powf(0.2)).max(0.1);
            }
            if h < 1e-14 {
                partial = true;
                break 'outer;
            }
        }
        let b = gronwall_bound(inst, target);
        let lhs = y[0] + y[1];
        let ratio = if lhs > 0.0 { (lhs.ln() - b.log_bound).exp() } else { 0.0 };
        rows.push(GronwallRow { t: target, a: y[0], int_b: y[1], q: b.q, ratio });
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let violations = rows.iter().filter(|r| r.ratio > 1.0).count();
    Ok(GronwallReport { rows, max_ratio, violations, reached: t, partial, degenerate })
}

/// A seeded instance with `B >= e` and `f(0) >= B(0)` so that `A` stays
/// nonnegative without the clamp.
pub fn random_instance(master: u64, index: u64) -> GronwallInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    let k = rng.gen_range(1.0..=3.0);
    let a0 = rng.gen_range(0.0..5.0);
    let b0 = rng.gen_range(std::f64::consts::E..5.0);
    let gamma = rng.gen_range(0.0..2.0);
    let degree = rng.gen_range(0..=3);
    let mut f: Vec<f64> = (0..=degree).map(|_| rng.gen_range(0.0..2.0)).collect();
    f[0] += b0;
    GronwallInstance { k, a0, f: Poly(f), closure: Closure::Linear { b0, gamma }, horizon: 1.0 }
}

/// `n` evenly spaced output times in `(0, horizon]`.
pub fn output_times(horizon: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| horizon * i as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn inst(a0: f64, k: f64, f: Vec<f64>, closure: Closure) -> GronwallInstance {
        GronwallInstance { k, a0, f: Poly(f), closure, horizon: 1.0 }
    }

    #[test]
    fn closed_form_bounds() {
        let i = inst(0.0, 1.0, vec![], Closure::Constant { b: E });
        let b = gronwall_bound(&i, 0.0);
        assert_eq!((b.q, b.bound), (0.0, 1.0));
        let i = inst(E - 1.0, 1.0, vec![], Closure::Constant { b: E });
        let b = gronwall_bound(&i, 1.0);
        assert!((b.q - 4.0 * E).abs() < 1e-12);
        assert!((b.bound / ((4.0 * E).exp() * (1.0 + 8.0 * E)) - 1.0).abs() < 1e-12);
        let i = inst(0.0, 1.0, vec![1.0], Closure::Constant { b: E });
        assert!((gronwall_bound(&i, 1.0).q - 4.0 * E).abs() < 1e-12);
    }

    #[test]
    fn overflow_is_flagged() {
        let i = inst(1e10, 3.0, vec![1e3], Closure::Constant { b: E });
        let b = gronwall_bound(&i, 50.0);
        assert!(b.overflow && b.bound.is_infinite() && b.log_bound.is_finite());
    }

    #[test]
    fn constant_closure_matches_explicit_solution() {
        let a0 = 4.0;
        let i = inst(a0, 1.0, vec![], Closure::Constant { b: E });
        let times = output_times(1.0, 10);
        let r = check_gronwall(&i, &times).unwrap();
        for row in &r.rows {
            let exact = (a0 - E) * row.t.exp() + E;
            assert!((row.a - exact).abs() < 1e-9 * exact, "{} {}", row.a, exact);
            assert!((row.int_b - E * row.t).abs() < 1e-12);
        }
        assert_eq!(r.violations, 0);
        assert!(!r.degenerate);
    }

    #[test]
    fn degenerate_clamp_is_reported() {
        let i = inst(0.0, 1.0, vec![], Closure::Constant { b: E });
        let r = check_gronwall(&i, &output_times(1.0, 4)).unwrap();
        assert!(r.degenerate);
        assert!(r.rows.iter().all(|row| row.a == 0.0));
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn rejects_invalid_instances() {
        assert!(check_gronwall(&inst(0.0, 0.5, vec![], Closure::Constant { b: E }), &[1.0]).is_err());
        assert!(check_gronwall(&inst(0.0, 1.0, vec![-1.0], Closure::Constant { b: E }), &[1.0]).is_err());
        assert!(check_gronwall(&inst(0.0, 1.0, vec![], Closure::Constant { b: 2.0 }), &[1.0]).is_err());
    }

    #[test]
    fn random_instances_hold() {
        for n in 0..20 {
            let i = random_instance(9, n);
            let r = check_gronwall(&i, &output_times(i.horizon, 20)).unwrap();
            assert!(!r.partial && !r.degenerate);
            assert_eq!(r.violations, 0, "{i:?}");
        }
    }
}
