use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use anisopede::io::{self, RunConfig};
use anisopede::lab::{self, LabOptions, LemmaId};
use anisopede::make_grid;
use anisopede::monitors::{self, Inequality, MonitorConfig};
use anisopede::solver::eps_sweep;

#[derive(Parser)]
#[command(name = "anisopede", version, about = "Anisotropic primitive equations: solver, inequality lab and monitors")]
struct Cli {
    /// Directory that all relative paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a configuration, writing diagnostics, checkpoints and a manifest.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint directory (inside the output directory).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compare trajectories at decreasing eps in the H^1 distance.
    EpsSweep {
        #[arg(long)]
        config: PathBuf,
        /// Strictly decreasing list, e.g. `1e-1,1e-2,1e-3`.
        #[arg(long, value_delimiter = ',', default_value = "1e-1,1e-2,1e-3,1e-4")]
        eps: Vec<f64>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Sample one inequality over a seeded random ensemble.
    Verify {
        #[arg(long)]
        lemma: LemmaId,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `nx,ny,nz,h`.
        #[arg(long, default_value = "32,32,32,0.5")]
        grid: String,
        #[arg(long)]
        report: PathBuf,
        /// Optional config whose `[lab]` section sets the sampling options.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Integrate random log-Gronwall instances and compare with the bound.
    GronwallCheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        outputs: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Evaluate the monitored a priori inequalities from a diagnostics file.
    MonitorReport {
        #[arg(long)]
        diagnostics: PathBuf,
        /// Config whose `[monitor]` section produced the diagnostics.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Diagnostics of the same run at half the step, for drift.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
}

fn threads() -> Result<()> {
    let Ok(v) = std::env::var("ANISOPEDE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .with_context(|| format!("ANISOPEDE_THREADS={v:?} must be a positive integer"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn parse_grid(s: &str) -> Result<anisopede::Grid> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        bail!("--grid {s:?}: expected nx,ny,nz,h");
    }
    let n = |i: usize| -> Result<usize> { parts[i].trim().parse().with_context(|| format!("--grid: bad size {:?}", parts[i])) };
    let h: f64 = parts[3].trim().parse().with_context(|| format!("--grid: bad h {:?}", parts[3]))?;
    Ok(make_grid(n(0)?, n(1)?, n(2)?, h).context("--grid")?)
}

fn load(workdir: &Path, p: &Path) -> Result<RunConfig> {
    Ok(io::parse_config(&workdir.join(p))?)
}

fn simulate(workdir: &Path, config: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = load(workdir, config)?;
    let m = io::simulate(&cfg, workdir, resume)?;
    println!("status: {}", m.status);
    println!("diagnostics: {}", m.diagnostics);
    for s in &m.snapshots {
        println!("checkpoint: step {} t={} {}", s.step, s.time, s.dir);
    }
    Ok(())
}

fn sweep(workdir: &Path, config: &Path, eps: &[f64], report: &Path) -> Result<()> {
    let cfg = load(workdir, config)?;
    let start = cfg.initial_start(workdir)?;
    let s = &start.state;
    let rows = eps_sweep(&cfg.solver(), eps, &s.v1, &s.v2, &s.temp)?;
    let table: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.eps, r.eps_next, r.distance.unwrap_or(f64::NAN)]).collect();
    io::write_table(&workdir.join(report), &["eps", "eps_next", "h1_distance"], &table, &[])?;
    let mut failed = Vec::new();
    for r in &rows {
        match (&r.distance, &r.failure) {
            (Some(d), _) => println!("eps {:e} vs {:e}: sup_t H1 distance {d:.6e}", r.eps, r.eps_next),
            (None, Some(f)) => failed.push(f.clone()),
            (None, None) => {}
        }
    }
    if !failed.is_empty() {
        bail!("sweep members failed: {}", failed.join("; "));
    }
    Ok(())
}

fn verify(workdir: &Path, lemma: LemmaId, samples: usize, seed: u64, grid: &str, report: &Path, config: Option<&Path>) -> Result<()> {
    let grid = parse_grid(grid)?;
    let opts = match config {
        Some(c) => load(workdir, c)?.lab.map(|l| l.options()).unwrap_or_default(),
        None => LabOptions::default(),
    };
    let r = lab::run_ensemble(lemma, &grid, samples, seed, &opts)?;
    let rows: Vec<Vec<f64>> = r.rows.iter().map(|x| vec![x.sample as f64, x.lhs, x.rhs, x.ratio]).collect();
    let mut footer = vec![("C_star", r.c_star), ("violations", r.violations as f64)];
    let notes: Vec<(String, f64)> = r.notes.clone();
    footer.extend(notes.iter().map(|(k, v)| (k.as_str(), *v)));
    io::write_table(&workdir.join(report), &["sample", "lhs", "rhs", "ratio"], &rows, &footer)?;
    println!("{lemma}: C_star={:.6e} violations={} samples={samples}", r.c_star, r.violations);
    for (lo, hi, n) in &r.histogram {
        println!("  [{lo:.3e}, {hi:.3e}) {n}");
    }
    if r.violations > 0 {
        bail!("{lemma}: {} violations", r.violations);
    }
    Ok(())
}

fn gronwall(workdir: &Path, instances: usize, seed: u64, outputs: usize, report: &Path) -> Result<()> {
    if instances == 0 || outputs == 0 {
        bail!("--instances and --outputs must be positive");
    }
    let mut rows = Vec::new();
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for i in 0..instances as u64 {
        let inst = lab::random_instance(seed, i);
        let r = lab::check_gronwall(&inst, &lab::output_times(inst.horizon, outputs))?;
        if r.partial {
            bail!("instance {i}: integration stopped at t={}", r.reached);
        }
        violations += r.violations;
        worst = worst.max(r.max_ratio);
        let q = r.rows.last().map_or(0.0, |x| x.q);
        rows.push(vec![i as f64, inst.k, inst.a0, q, r.max_ratio, r.violations as f64, r.degenerate as u8 as f64]);
    }
    io::write_table(
        &workdir.join(report),
        &["instance", "k", "a0", "q_end", "max_ratio", "violations", "degenerate"],
        &rows,
        &[("C_star", worst), ("violations", violations as f64)],
    )?;
    println!("gronwall: {instances} instances, max ratio {worst:.6e}, violations {violations}");
    if violations > 0 {
        bail!("{violations} bound violations");
    }
    Ok(())
}

fn monitor_report(workdir: &Path, diagnostics: &Path, config: Option<&Path>, compare: Option<&Path>, report: &Path) -> Result<()> {
    let mc = match config {
        Some(c) => load(workdir, c)?.monitor.map(|m| m.config()).unwrap_or_default(),
        None => MonitorConfig::default(),
    };
    let read = |p: &Path| -> Result<_> {
        let p = workdir.join(p);
        let t = io::read_table(&p)?;
        io::monitor_from_table(&t, mc).with_context(|| format!("{}", p.display()))
    };
    let m = read(diagnostics)?;
    let other = compare.map(read).transpose()?;
    let ids = [Inequality::LqEnergy(mc.q), Inequality::GradVLr(mc.r), Inequality::GradHV, Inequality::GradT, Inequality::TimeDerivative];
    let mut names = vec!["t".to_string()];
    let mut cols = vec![m.times()];
    let mut footer: Vec<(String, f64)> = Vec::new();
    let wl = monitors::check_weighted_lq(&m);
    footer.push(("weighted_lq_initial".into(), wl.initial));
    footer.push(("weighted_lq_sup".into(), wl.sup));
    let sixth: Vec<f64> = m.rows.iter().map(|r| r.v_l6.powi(2) + r.t_l6.powi(2)).collect();
    footer.push(("l6_initial".into(), sixth.first().copied().unwrap_or(0.0)));
    footer.push(("l6_sup".into(), sixth.iter().copied().fold(0.0, f64::max)));
    println!("sup weighted Lq {:.6e} (initial {:.6e}){}", wl.sup, wl.initial, if wl.flagged { " FLAGGED" } else { "" });
    for id in ids {
        let c = monitors::check_diff_inequality(&m, id)?;
        let tag = match id {
            Inequality::LqEnergy(_) => "lq_energy",
            Inequality::GradVLr(_) => "grad_v_lr",
            Inequality::GradHV => "grad_h_v",
            Inequality::GradT => "grad_t",
            Inequality::TimeDerivative => "time_derivative",
        };
        for (suffix, v) in [("lhs", &c.lhs), ("rhs", &c.rhs), ("ratio", &c.ratio)] {
            names.push(format!("{tag}_{suffix}"));
            cols.push(v.clone());
        }
        footer.push((format!("C_star_{tag}"), c.c_star));
        footer.push((format!("excluded_{tag}"), c.excluded as f64));
        let mut line = format!("{id}: C_star={:.6e} excluded={}", c.c_star, c.excluded);
        if let Some(o) = &other {
            let fine = monitors::check_diff_inequality(o, id)?;
            let (drift, big) = monitors::refinement_drift(&c, &fine, 0.2);
            footer.push((format!("drift_{tag}"), drift));
            line += &format!(" drift={drift:.3e}{}", if big { " DIVERGING" } else { "" });
        }
        println!("{line}");
    }
    let rows: Vec<Vec<f64>> = (0..cols[0].len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let footer: Vec<(&str, f64)> = footer.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    io::write_table(&workdir.join(report), &names, &rows, &footer)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let w = cli.workdir.as_path();
    let result = threads().and_then(|_| match &cli.command {
        Command::Simulate { config, resume } => simulate(w, config, resume.as_deref()),
        Command::EpsSweep { config, eps, report } => sweep(w, config, eps, report),
        Command::Verify { lemma, samples, seed, grid, report, config } => {
            verify(w, *lemma, *samples, *seed, grid, report, config.as_deref())
        }
        Command::GronwallCheck { instances, seed, outputs, report } => gronwall(w, *instances, *seed, *outputs, report),
        Command::MonitorReport { diagnostics, config, compare, report } => {
            monitor_report(w, diagnostics, config.as_deref(), compare.as_deref(), report)
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
