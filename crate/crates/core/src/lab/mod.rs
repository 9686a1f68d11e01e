//! Randomized verification of anisotropic functional inequalities and the
//! logarithmic Gronwall lemma.

pub mod gronwall;
pub mod inequalities;
pub mod samples;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;

pub use gronwall::{
    check_gronwall, gronwall_bound, output_times, random_instance, Closure, GronwallBound, GronwallInstance,
    GronwallReport, GronwallRow, Poly,
};
pub use inequalities::{
    check_disk_ladyzhenskaya, check_ladyzhenskaya, check_log_sobolev, check_sup_z_embedding, Ladyzhenskaya,
    LogSobolev, SupZ, TORUS_DIAMETER,
};
pub use samples::{ensemble_spec, Family, Sample, SampleSpec};

use inequalities::{check_log_sobolev_sample, check_sup_z_sample};
use samples::PlaneEvaluator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LemmaId {
    N21,
    N22,
    N23,
    Disk,
    DiskN22,
    SupZL2,
    SupZL4,
    SupZDisk,
    LogSobolev,
    Gronwall,
}

impl LemmaId {
    pub const ALL: [LemmaId; 10] = [
        LemmaId::N21,
        LemmaId::N22,
        LemmaId::N23,
        LemmaId::Disk,
        LemmaId::DiskN22,
        LemmaId::SupZL2,
        LemmaId::SupZL4,
        LemmaId::SupZDisk,
        LemmaId::LogSobolev,
        LemmaId::Gronwall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LemmaId::N21 => "n2.1",
            LemmaId::N22 => "n2.2",
            LemmaId::N23 => "n2.3",
            LemmaId::Disk => "disk",
            LemmaId::DiskN22 => "disk-n2.2",
            LemmaId::SupZL2 => "sup-z-l2",
            LemmaId::SupZL4 => "sup-z-l4",
            LemmaId::SupZDisk => "sup-z-disk",
            LemmaId::LogSobolev => "log-sobolev",
            LemmaId::Gronwall => "gronwall",
        }
    }

    /// Inequalities whose constants are explicit: any ratio above one is a
    /// violation.
    pub fn explicit(self) -> bool {
        matches!(self, LemmaId::SupZL2 | LemmaId::Gronwall)
    }
}

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LemmaId {
    type Err = Error;
    fn from_str(s: &str) -> Result<LemmaId> {
        LemmaId::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown lemma '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReportRow {
    pub sample: u64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    }
}

/// Histogram over log-spaced bins: `(lower edge, upper edge, count)`.
pub type Histogram = Vec<(f64, f64, usize)>;

/// `C* = max ratio` and a histogram with ten bins per decade.
pub fn fit_constant(ratios: &[f64]) -> Result<(f64, Histogram)> {
    if ratios.is_empty() {
        return Err(Error::InvalidArgument("no ratios to fit".into()));
    }
    if let Some((index, &value)) = ratios.iter().enumerate().find(|(_, r)| !r.is_finite() || **r < 0.0) {
        return Err(Error::NonFinite { index, value });
    }
    let c_star = ratios.iter().copied().fold(0.0, f64::max);
    let positive: Vec<f64> = ratios.iter().copied().filter(|&r| r > 0.0).collect();
    let mut hist = Histogram::new();
    let zeros = ratios.len() - positive.len();
    if zeros > 0 {
        hist.push((0.0, 0.0, zeros));
    }
    if !positive.is_empty() {
        let bin = |r: f64| (r.log10() * 10.0).floor() as i64;
        let lo = positive.iter().map(|&r| bin(r)).min().unwrap();
        let hi = positive.iter().map(|&r| bin(r)).max().unwrap();
        let mut counts = vec![0usize; (hi - lo + 1) as usize];
        for &r in &positive {
            counts[(bin(r) - lo) as usize] += 1;
        }
        for (i, c) in counts.into_iter().enumerate() {
            let b = (lo + i as i64) as f64 / 10.0;
            hist.push((10f64.powf(b), 10f64.powf(b + 0.1), c));
        }
    }
    Ok((c_star, hist))
}

#[derive(Clone, Debug, PartialEq)]
pub struct InequalityReport {
    pub lemma: LemmaId,
    pub rows: Vec<ReportRow>,
    pub c_star: f64,
    pub histogram: Histogram,
    pub margin: f64,
    /// Ratios above `C*(1 + margin)`, or above one for explicit constants.
    pub violations: usize,
    pub notes: Vec<(String, f64)>,
}

impl InequalityReport {
    pub fn from_rows(lemma: LemmaId, rows: Vec<ReportRow>, margin: f64) -> Result<InequalityReport> {
        let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
        let (c_star, histogram) = fit_constant(&ratios)?;
        let limit = if lemma.explicit() { 1.0 + margin } else { c_star * (1.0 + margin) };
        let violations = ratios.iter().filter(|&&r| r > limit).count();
        Ok(InequalityReport { lemma, rows, c_star, histogram, margin, violations, notes: Vec::new() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabOptions {
    /// Band limit of random samples.
    pub band: usize,
    pub log_sobolev: LogSobolev,
    pub margin: f64,
    /// Disk radii are drawn from this range.
    pub radius: (f64, f64),
}

impl Default for LabOptions {
    fn default() -> Self {
        LabOptions { band: 6, log_sobolev: LogSobolev::default(), margin: 1e-12, radius: (0.2, 0.45) }
    }
}

fn member(grid: &Grid, seed: u64, index: u64, opts: &LabOptions) -> Result<(Vec<Sample>, f64, (f64, f64))> {
    let mut out = Vec::with_capacity(3);
    let mut disk = (0.0, (0.0, 0.0));
    for j in 0..3 {
        let (spec, mut rng) = ensemble_spec(seed, 3 * index + j, opts.band);
        if j == 0 {
            disk = (
                rng.gen_range(opts.radius.0..=opts.radius.1),
                (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)),
            );
        }
        out.push(Sample::draw(grid, &spec)?);
    }
    Ok((out, disk.0, disk.1))
}

/// Evaluate one lemma on `samples` seeded random members. Gronwall members
/// are random instances integrated over twenty output times.
pub fn run_ensemble(lemma: LemmaId, grid: &Grid, samples: usize, seed: u64, opts: &LabOptions) -> Result<InequalityReport> {
    if samples == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one sample".into()));
    }
    if lemma == LemmaId::Gronwall {
        let rows = (0..samples as u64)
            .into_par_iter()
            .map(|i| {
                let inst = random_instance(seed, i);
                let r = check_gronwall(&inst, &output_times(inst.horizon, 20))?;
                if r.partial {
                    return Err(Error::BlowUp { time: r.reached, detail: format!("instance {i} overflowed") });
                }
                let worst = r.rows.iter().max_by(|a, b| a.ratio.total_cmp(&b.ratio)).expect("twenty rows");
                let b = gronwall_bound(&inst, worst.t);
                Ok(ReportRow { sample: i, lhs: worst.a + worst.int_b, rhs: b.bound, ratio: worst.ratio })
            })
            .collect::<Result<Vec<_>>>()?;
        return InequalityReport::from_rows(lemma, rows, opts.margin);
    }
    let planes = PlaneEvaluator::new(grid);
    let evaluated = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let (s, r, center) = member(grid, seed, i, opts)?;
            let (a, b, c) = (&s[0].field, &s[1].field, &s[2].field);
            let mut trunc = 0.0;
            let (lhs, rhs) = match lemma {
                LemmaId::N21 => check_ladyzhenskaya(a, b, c, Ladyzhenskaya::N21)?,
                LemmaId::N22 => check_ladyzhenskaya(a, b, c, Ladyzhenskaya::N22)?,
                LemmaId::N23 => check_ladyzhenskaya(a, b, c, Ladyzhenskaya::N23)?,
                LemmaId::Disk => check_disk_ladyzhenskaya(a, b, c, r, center, Ladyzhenskaya::N21)?,
                LemmaId::DiskN22 => check_disk_ladyzhenskaya(a, b, c, r, center, Ladyzhenskaya::N22)?,
                LemmaId::SupZL2 => check_sup_z_sample(&s[0], SupZ::L2, &planes)?,
                LemmaId::SupZL4 => check_sup_z_sample(&s[0], SupZ::L4, &planes)?,
                LemmaId::SupZDisk => check_sup_z_sample(&s[0], SupZ::Disk { r, center }, &planes)?,
                LemmaId::LogSobolev => {
                    let (l, rr, t) = check_log_sobolev_sample(&s[0], &opts.log_sobolev)?;
                    trunc = t;
                    (l, rr)
                }
                LemmaId::Gronwall => unreachable!(),
            };
            Ok((ReportRow { sample: i, lhs, rhs, ratio: ratio(lhs, rhs) }, trunc))
        })
        .collect::<Result<Vec<_>>>()?;
    let trunc = evaluated.iter().map(|e| e.1).fold(0.0, f64::max);
    let mut report = InequalityReport::from_rows(lemma, evaluated.into_iter().map(|e| e.0).collect(), opts.margin)?;
    if lemma == LemmaId::LogSobolev {
        report.notes.push(("qmax_truncation".into(), trunc));
    }
    Ok(report)
}

/// `|C*(a) - C*(b)| / C*(b)`.
pub fn resolution_drift(a: &InequalityReport, b: &InequalityReport) -> f64 {
    (a.c_star - b.c_star).abs() / b.c_star
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn fit_constant_cases() {
        let (c, h) = fit_constant(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c, 3.0);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 3);
        let (c, h) = fit_constant(&[0.7; 5]).unwrap();
        assert_eq!(c, 0.7);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].2, 5);
        assert!(fit_constant(&[]).is_err());
        assert!(fit_constant(&[f64::NAN]).is_err());
    }

    #[test]
    fn lemma_names_round_trip() {
        for l in LemmaId::ALL {
            assert_eq!(l.name().parse::<LemmaId>().unwrap(), l);
        }
        assert!("n9".parse::<LemmaId>().is_err());
    }

    #[test]
    fn small_ensembles_are_reproducible() {
        let g = make_grid(26, 26, 26, 0.5).unwrap();
        let opts = LabOptions { band: 4, ..LabOptions::default() };
        for lemma in LemmaId::ALL {
            let a = run_ensemble(lemma, &g, 6, 3, &opts).unwrap();
            let b = run_ensemble(lemma, &g, 6, 3, &opts).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.violations, 0, "{lemma}");
            assert!(a.c_star.is_finite() && a.c_star > 0.0, "{lemma}");
        }
    }
}
