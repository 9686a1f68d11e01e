//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero when any criterion fails.

use std::f64::consts::E;
use std::process::ExitCode;
use std::time::Instant;

use anisopede::io::{self, RunConfig};
use anisopede::lab::{self, Closure, GronwallInstance, LabOptions, Ladyzhenskaya, LemmaId, Poly};
use anisopede::monitors::{self, Inequality, MonitorConfig, MonitorState};
use anisopede::solver::{
    eps_sweep, run_with, taylor_exact, InitialData, InvariantLog, Physics, RunSummary, SolverConfig, Start, State,
};
use anisopede::{make_grid, sample, Grid, RealField};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn max_diff(a: &RealField, b: &RealField) -> f64 {
    a.values().iter().zip(b.values()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn max_abs(a: &RealField) -> f64 {
    a.values().iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Every run's invariant log, for criterion 3.
#[derive(Default)]
struct Logs(Vec<(String, InvariantLog, bool)>);

impl Logs {
    fn push(&mut self, name: &str, s: &RunSummary, eps_zero: bool) {
        self.0.push((name.to_string(), s.invariants, eps_zero && s.acc.eps_dz_v == 0.0));
    }
}

fn plain(config: &SolverConfig, state: State) -> RunSummary {
    let s = run_with(config, Start::new(state), |_| Ok(())).expect("valid configuration");
    if let Some(e) = &s.failure {
        panic!("run failed: {e}");
    }
    s
}

fn criterion_1(logs: &mut Logs) -> Outcome {
    let clock = Instant::now();
    let g = make_grid(32, 32, 8, 0.5).unwrap();
    let a = 1.0;
    let mut worst: f64 = 0.0;
    for eps in [0.0, 0.1] {
        let phys = Physics { eps, f0: 1.0 };
        let s0 = InitialData::Taylor { a }.state(&g, phys).unwrap();
        let s = plain(&SolverConfig::fixed(phys, 1e-4, 0.1), s0);
        let exact = taylor_exact(&g, a, 0.1).unwrap();
        worst = worst.max(max_diff(&s.last.v1, &exact)).max(max_abs(&s.last.v2)).max(max_abs(&s.last.temp));
        logs.push(&format!("taylor eps={eps}"), &s, eps == 0.0);
    }
    let secs = clock.elapsed().as_secs_f64() / 2.0;
    outcome(worst < 1e-8 && secs < 30.0, format!("max error {worst:.3e} (< 1e-8), {secs:.1} s per run (< 30 s)"))
}

fn criterion_2(logs: &mut Logs) -> Outcome {
    let g = make_grid(32, 32, 32, 0.5).unwrap();
    let phys = Physics { eps: 0.01, f0: 1.0 };
    let s0 = InitialData::Smooth3d { amp: 0.5, seed: 11 }.state(&g, phys).unwrap();
    let finals: Vec<State> = (0..5)
        .map(|k| {
            let dt = 0.01 / f64::from(1 << k);
            let s = plain(&SolverConfig::fixed(phys, dt, 0.2), s0.clone());
            logs.push(&format!("smooth3d dt={dt}"), &s, false);
            s.last
        })
        .collect();
    let err: Vec<f64> = finals
        .windows(2)
        .map(|w| max_diff(&w[0].v1, &w[1].v1) + max_diff(&w[0].v2, &w[1].v2) + max_diff(&w[0].temp, &w[1].temp))
        .collect();
    let ratios: Vec<f64> = err.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = ratios.len() == 3 && ratios.iter().all(|r| *r >= 7.0);
    outcome(pass, format!("Richardson ratios {:?} (each >= 7)", ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>()))
}

fn criterion_3(logs: &mut Logs) -> Outcome {
    let g = make_grid(16, 16, 16, 0.5).unwrap();
    let phys = Physics { eps: 0.0, f0: 1.0 };
    let s0 = InitialData::Smooth3d { amp: 0.5, seed: 4 }.state(&g, phys).unwrap();
    let s = plain(&SolverConfig::fixed(phys, 0.005, 0.1), s0);
    logs.push("smooth3d eps=0", &s, true);
    let mut bad = Vec::new();
    let mut worst = InvariantLog::default();
    let mut steps = 0;
    for (name, l, eps_ok) in &logs.0 {
        steps += l.steps;
        worst.barotropic = worst.barotropic.max(l.barotropic);
        worst.parity = worst.parity.max(l.parity);
        worst.w_boundary = worst.w_boundary.max(l.w_boundary);
        if !(l.barotropic < 1e-9 && l.parity < 1e-10 && l.w_boundary < 1e-10) {
            bad.push(name.clone());
        }
        let eps_zero_run = name.ends_with("eps=0");
        if eps_zero_run && !(*eps_ok && l.eps_increment == 0.0) {
            bad.push(format!("{name} (eps terms)"));
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "{} runs, {steps} steps: barotropic {:.1e}, parity {:.1e}, w(+-h) {:.1e}{}",
            logs.0.len(),
            worst.barotropic,
            worst.parity,
            worst.w_boundary,
            if bad.is_empty() { String::new() } else { format!("; failing {bad:?}") }
        ),
    )
}

fn criterion_4(logs: &mut Logs) -> Outcome {
    let g = make_grid(64, 64, 4, 0.5).unwrap();
    let phys = Physics { eps: 0.01, f0: 0.0 };
    let s0 = InitialData::Ns2d { amp: 1.0, seed: 5 }.state(&g, phys).unwrap();
    let energy = |s: &State| 0.5 * (s.v1.values().iter().chain(s.v2.values()).map(|v| v * v).sum::<f64>()) * g.cell_volume();
    let e0 = energy(&s0);
    let t = 0.1;
    let s = plain(&SolverConfig::fixed(phys, 2.5e-4, t), s0);
    logs.push("ns2d", &s, false);
    let residual = (energy(&s.last) - e0 + s.acc.grad_v + s.acc.eps_dz_v).abs() / t;
    outcome(residual < 1e-8, format!("energy identity residual {residual:.3e} per unit time (< 1e-8)"))
}

fn criterion_5() -> Outcome {
    let clock = Instant::now();
    let opts = LabOptions::default();
    let mut detail = Vec::new();
    let mut violations = 0;
    for n in [32, 48] {
        let g = make_grid(n, n, n, 0.5).unwrap();
        let r = lab::run_ensemble(LemmaId::SupZL2, &g, 1000, 2024, &opts).unwrap();
        violations += r.violations;
        detail.push(format!("{n}^3 max ratio {:.6}", r.c_star));
    }
    let secs = clock.elapsed().as_secs_f64();
    outcome(
        violations == 0 && secs < 120.0,
        format!("{violations} violations over 2x1000 samples; {}; {secs:.0} s (< 120 s)", detail.join(", ")),
    )
}

fn criterion_6() -> Outcome {
    let opts = LabOptions::default();
    let (g32, g48) = (make_grid(32, 32, 32, 0.5).unwrap(), make_grid(48, 48, 48, 0.5).unwrap());
    let mut pass = true;
    let mut parts = Vec::new();
    for lemma in [LemmaId::N21, LemmaId::N22, LemmaId::N23, LemmaId::Disk, LemmaId::SupZL4, LemmaId::LogSobolev] {
        let a = lab::run_ensemble(lemma, &g32, 1000, 2025, &opts).unwrap();
        let b = lab::run_ensemble(lemma, &g48, 1000, 2025, &opts).unwrap();
        let drift = lab::resolution_drift(&a, &b);
        let ok = a.c_star.is_finite() && b.c_star.is_finite() && b.c_star > 0.0 && drift < 0.1;
        pass &= ok;
        parts.push(format!("{lemma} C*={:.4} drift {:.2}%", b.c_star, 100.0 * drift));
    }
    let g = make_grid(16, 16, 16, 0.5).unwrap();
    let one = sample(&g, |_, _, _| 1.0).unwrap();
    let (lhs, rhs) = lab::check_ladyzhenskaya(&one, &one, &one, Ladyzhenskaya::N23).unwrap();
    let hand = (lhs - 1.0).abs().max((rhs - 0.5).abs());
    pass &= hand < 1e-10;
    parts.push(format!("n2.3 constants off by {hand:.1e}"));
    outcome(pass, parts.join("; "))
}

fn criterion_7() -> Outcome {
    let mut violations = 0;
    let mut partial = 0;
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let inst = lab::random_instance(7, i);
        let r = lab::check_gronwall(&inst, &lab::output_times(inst.horizon, 20)).unwrap();
        violations += r.violations;
        partial += usize::from(r.partial);
        worst = worst.max(r.max_ratio);
    }
    let closed = GronwallInstance { k: 1.0, a0: E - 1.0, f: Poly(vec![]), closure: Closure::Constant { b: E }, horizon: 1.0 };
    let q = lab::gronwall_bound(&closed, 1.0).q;
    let off = (q - 4.0 * E).abs();
    outcome(
        violations == 0 && partial == 0 && off < 1e-12,
        format!("100 instances: {violations} violations, max ratio {worst:.3e}; Q(1) - 4e = {off:.1e}"),
    )
}

fn criterion_8() -> Outcome {
    let g = make_grid(32, 32, 32, 0.5).unwrap();
    let (a, b, c) = InitialData::Smooth3d { amp: 0.5, seed: 11 }.fields(&g).unwrap();
    let cfg = SolverConfig::fixed(Physics { eps: 0.1, f0: 1.0 }, 0.01, 0.5).with_cadence(5);
    let rows = eps_sweep(&cfg, &[1e-1, 1e-2, 1e-3, 1e-4], &a, &b, &c).unwrap();
    let d: Vec<Option<f64>> = rows.iter().map(|r| r.distance).collect();
    let pass = d.iter().all(Option::is_some) && d.windows(2).all(|w| w[1] < w[0]);
    outcome(pass, format!("sup_t H1 distances {:?} (decreasing)", d.iter().map(|x| x.map(|v| format!("{v:.3e}"))).collect::<Vec<_>>()))
}

fn monitored(logs: &mut Logs, g: &Grid, dt: f64, cadence: usize) -> MonitorState {
    let phys = Physics { eps: 0.01, f0: 1.0 };
    let s0 = InitialData::Smooth3d { amp: 0.5, seed: 11 }.state(g, phys).unwrap();
    let mut m = MonitorState::new(MonitorConfig::default()).unwrap();
    let cfg = SolverConfig::fixed(phys, dt, 1.0).with_cadence(cadence);
    let s = run_with(&cfg, Start::new(s0), |x| m.record(x.state, x.acc).map(|_| ())).unwrap();
    assert!(s.failure.is_none(), "{:?}", s.failure);
    logs.push(&format!("monitored dt={dt}"), &s, false);
    m
}

fn criterion_9(logs: &mut Logs) -> Outcome {
    let g = make_grid(32, 32, 32, 0.5).unwrap();
    let coarse = monitored(logs, &g, 0.01, 1);
    let fine = monitored(logs, &g, 0.005, 2);
    let wl = monitors::check_weighted_lq(&coarse);
    let sixth: Vec<f64> = coarse.rows.iter().map(|r| r.v_l6.powi(2) + r.t_l6.powi(2)).collect();
    let sixth_sup = sixth.iter().copied().fold(0.0, f64::max);
    let mut pass = !wl.flagged && sixth_sup < 10.0 * sixth[0];
    let mut parts = vec![
        format!("sup weighted Lq {:.4} vs initial {:.4}", wl.sup, wl.initial),
        format!("sup L6 sum {:.4} vs initial {:.4}", sixth_sup, sixth[0]),
    ];
    let c = coarse.config;
    for id in [Inequality::LqEnergy(c.q), Inequality::GradVLr(c.r), Inequality::GradHV, Inequality::GradT, Inequality::TimeDerivative] {
        let a = monitors::check_diff_inequality(&coarse, id).unwrap();
        let b = monitors::check_diff_inequality(&fine, id).unwrap();
        let (drift, diverging) = monitors::refinement_drift(&a, &b, 0.2);
        pass &= !diverging && a.c_star.is_finite();
        parts.push(format!("{id} C*={:.4e} drift {:.1e}", a.c_star, drift));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_10() -> Outcome {
    let text = r#"
seed = 42
[initial]
builtin = "smooth3d,amp=0.5,seed=9"
[grid]
nx = 16
ny = 16
nz = 16
[physics]
eps = 0.01
f0 = 1.0
[time]
t_end = 0.1
dt = 0.005
[output]
checkpoint_every = 5
[monitor]
"#;
    let cfg = RunConfig::parse(text, "determinism").unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let files: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| {
            io::simulate(&cfg, d.path(), None).unwrap();
            std::fs::read(d.path().join(&cfg.output.diagnostics)).unwrap()
        })
        .collect();
    let same = files[0] == files[1];
    outcome(same && !files[0].is_empty(), format!("two runs, {} bytes each, identical: {same}", files[0].len()))
}

fn main() -> ExitCode {
    // Single worker so runtime figures are single-threaded.
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().ok();
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: usize| filter.is_empty() || filter.iter().any(|f| f == &n.to_string());
    let mut logs = Logs::default();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut(&mut Logs) -> Outcome, logs: &mut Logs| {
        if !wanted(n) {
            return;
        }
        let clock = Instant::now();
        let o = f(logs);
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {:<32} {}  {} [{:.1} s]",
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            clock.elapsed().as_secs_f64()
        );
    };
    report(1, "exact solution", &mut criterion_1, &mut logs);
    report(2, "temporal self-convergence", &mut criterion_2, &mut logs);
    report(4, "2D energy balance", &mut criterion_4, &mut logs);
    report(9, "monitor sanity", &mut criterion_9, &mut logs);
    report(3, "structural invariants", &mut criterion_3, &mut logs);
    report(5, "explicit sup-z embedding", &mut |_| criterion_5(), &mut logs);
    report(6, "fitted inequality constants", &mut |_| criterion_6(), &mut logs);
    report(7, "log-Gronwall bound", &mut |_| criterion_7(), &mut logs);
    report(8, "vanishing viscosity", &mut |_| criterion_8(), &mut logs);
    report(10, "determinism", &mut |_| criterion_10(), &mut logs);
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
