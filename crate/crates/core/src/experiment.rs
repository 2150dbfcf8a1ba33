//! Replicated experiments: flow validation against observed counts and the
//! carpool-capacity sweep.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::config::ScenarioConfig;
use crate::demand::Shares;
use crate::error::{Error, Result};
use crate::network::{flow_distribution, LaneClass, LinkId, Network};
use crate::sim::{init_simulation, SimReport};

/// Seed of replication `r` in an experiment seeded with `seed`. Every level of
/// a sweep reuses the same replication seeds.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(r as u64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquaredTest {
    pub statistic: f64,
    pub df: usize,
    pub critical: f64,
    pub alpha: f64,
    pub reject: bool,
}

/// Pearson goodness-of-fit of `observed` counts against `expected`
/// proportions.
pub fn chi_squared_gof(observed: &[f64], expected: &[f64], alpha: f64) -> Result<ChiSquaredTest> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(Error::Domain(format!(
            "need matching category counts (got {} observed, {} expected, at least 2)",
            observed.len(),
            expected.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("significance level {alpha} outside (0, 1)")));
    }
    if observed.iter().any(|o| !(*o >= 0.0)) {
        return Err(Error::Domain("observed counts must be non-negative".into()));
    }
    let n: f64 = observed.iter().sum();
    if !(n > 0.0) {
        return Err(Error::Domain("no observations".into()));
    }
    let total: f64 = expected.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("expected proportions sum to {total}, not 1")));
    }
    let mut statistic = 0.0;
    for (o, p) in observed.iter().zip(expected) {
        let e = p * n;
        if !(e > 0.0) {
            return Err(Error::Domain("expected count of zero".into()));
        }
        statistic += (o - e).powi(2) / e;
    }
    let df = observed.len() - 1;
    let dist = ChiSquared::new(df as f64).map_err(|e| Error::Domain(e.to_string()))?;
    let critical = dist.inverse_cdf(1.0 - alpha);
    Ok(ChiSquaredTest {
        statistic,
        df,
        critical,
        alpha,
        reject: statistic > critical,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub link: LinkId,
    pub real: f64,
    pub simulated: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    pub mean_error: f64,
    pub test: ChiSquaredTest,
    /// Mean link entries per replication.
    pub mean_vehicles: f64,
    pub seeds: Vec<u64>,
    pub fingerprint: String,
}

fn run_replications(
    cfg: &ScenarioConfig,
    network: &Network,
    seeds: &[u64],
    unused: Option<f64>,
) -> Result<Vec<SimReport>> {
    let spec = cfg.demand_spec(network)?;
    let params = cfg.sim_params();
    seeds
        .par_iter()
        .map(|&s| Ok(init_simulation(&params, &spec, network, s, unused)?.run(params.horizon)))
        .collect()
}

/// Simulate the baseline (no ridesharing) and compare link-entry shares with
/// the observed flows.
pub fn run_validation(
    cfg: &ScenarioConfig,
    network: &Network,
    replications: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if replications == 0 {
        return Err(Error::Validation("replications must be at least 1".into()));
    }
    let observed: BTreeMap<LinkId, f64> =
        network.links().iter().map(|l| (l.id, l.observed_daily_flow)).collect();
    if let Some(l) = network.links().iter().find(|l| !(l.observed_daily_flow > 0.0)) {
        return Err(Error::Validation(format!("link {} has no observed flow", l.id)));
    }
    let real = flow_distribution(&observed)?;

    let mut baseline = cfg.clone();
    baseline.shares = Shares::BASELINE;
    let seeds: Vec<u64> = (0..replications).map(|r| replication_seed(seed, r)).collect();
    let reports = run_replications(&baseline, network, &seeds, None)?;

    let mut share_sum: BTreeMap<LinkId, f64> = real.keys().map(|l| (*l, 0.0)).collect();
    let mut count_sum: BTreeMap<LinkId, f64> = real.keys().map(|l| (*l, 0.0)).collect();
    for rep in &reports {
        let counts: BTreeMap<LinkId, f64> =
            rep.link_entries().into_iter().map(|(l, c)| (l, c as f64)).collect();
        let total: f64 = counts.values().sum();
        if total == 0.0 {
            return Err(Error::Domain("a replication produced no vehicles".into()));
        }
        for (l, c) in &counts {
            *share_sum.get_mut(l).unwrap() += c / total;
            *count_sum.get_mut(l).unwrap() += c;
        }
    }
    let k = reports.len() as f64;
    let rows: Vec<ValidationRow> = real
        .iter()
        .map(|(l, r)| {
            let s = share_sum[l] / k;
            ValidationRow {
                link: *l,
                real: *r,
                simulated: s,
                error: (s - r).abs(),
            }
        })
        .collect();
    let mean_error = rows.iter().map(|r| r.error).sum::<f64>() / rows.len() as f64;
    let mean_counts: Vec<f64> = count_sum.values().map(|c| c / k).collect();
    let expected: Vec<f64> = real.values().copied().collect();
    let test = chi_squared_gof(&mean_counts, &expected, cfg.significance)?;
    Ok(ValidationReport {
        rows,
        mean_error,
        test,
        mean_vehicles: mean_counts.iter().sum(),
        seeds,
        fingerprint: baseline.fingerprint(network),
    })
}

impl ValidationReport {
    /// Per-link table: link, real share, simulated share, absolute error,
    /// closed by an average row.
    pub fn write_table<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["link_id", "real", "simulated", "error"])?;
        for r in &self.rows {
            w.write_record([
                r.link.to_string(),
                format!("{:.6}", r.real),
                format!("{:.6}", r.simulated),
                format!("{:.6}", r.error),
            ])?;
        }
        w.write_record(["average", "", "", &format!("{:.6}", self.mean_error)])?;
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["key", "value"])?;
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let rows = [
            ("mean_error", format!("{:.6}", self.mean_error)),
            ("chi_squared", format!("{:.6}", self.test.statistic)),
            ("df", self.test.df.to_string()),
            ("alpha", format!("{}", self.test.alpha)),
            ("critical", format!("{:.6}", self.test.critical)),
            ("reject", self.test.reject.to_string()),
            ("mean_vehicles", format!("{:.3}", self.mean_vehicles)),
            ("replications", self.seeds.len().to_string()),
            ("fingerprint", self.fingerprint.clone()),
            ("seeds", seeds.join(" ")),
        ];
        for (k, v) in rows {
            w.write_record([k, v.as_str()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub unused_fraction: f64,
    pub replications: usize,
    pub mean_match_rate: f64,
    pub std_match_rate: f64,
    pub riders: usize,
    pub matched: usize,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub shares: Shares,
    pub fingerprint: String,
    pub seeds: Vec<u64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Match rate at each unused carpool fraction, in the order given, with the
/// participation shares fixed at 10% riders, 40% drivers, 50% regular.
pub fn run_capacity_sweep(
    cfg: &ScenarioConfig,
    network: &Network,
    levels: &[f64],
    replications: usize,
    seed: u64,
) -> Result<SweepReport> {
    if replications == 0 {
        return Err(Error::Validation("replications must be at least 1".into()));
    }
    if let Some(u) = levels.iter().find(|u| !(0.0..=1.0).contains(*u)) {
        return Err(Error::Domain(format!("unused fraction {u} outside [0, 1]")));
    }
    let mut sweep = cfg.clone();
    sweep.shares = Shares::RIDESHARING;
    sweep.record_trace = false;
    let spec = sweep.demand_spec(network)?;
    let params = sweep.sim_params();
    let seeds: Vec<u64> = (0..replications).map(|r| replication_seed(seed, r)).collect();
    let jobs: Vec<(usize, u64)> = (0..levels.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<(usize, usize)> = jobs
        .par_iter()
        .map(|&(i, s)| {
            let report = init_simulation(&params, &spec, network, s, Some(levels[i]))?.run(params.horizon);
            Ok((report.riders(), report.matched_riders()))
        })
        .collect::<Result<_>>()?;

    let rows = levels
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let chunk = &results[i * replications..(i + 1) * replications];
            let rates: Vec<f64> = chunk
                .iter()
                .map(|&(n, m)| if n == 0 { 0.0 } else { m as f64 / n as f64 })
                .collect();
            let (mean, std) = mean_std(&rates);
            let riders = chunk.iter().map(|c| c.0).sum();
            let empty = chunk.iter().filter(|c| c.0 == 0).count();
            let warning = (empty > 0).then(|| format!("{empty} of {replications} replications had no riders"));
            SweepRow {
                unused_fraction: u,
                replications,
                mean_match_rate: mean,
                std_match_rate: std,
                riders,
                matched: chunk.iter().map(|c| c.1).sum(),
                warning,
            }
        })
        .collect();
    Ok(SweepReport {
        rows,
        shares: sweep.shares,
        fingerprint: sweep.fingerprint(network),
        seeds,
    })
}

impl SweepReport {
    pub fn means(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean_match_rate).collect()
    }

    /// One row per level: experiment id, unused capacity, shares, match rate.
    pub fn write_table<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "experiment_id",
            "unused_capacity",
            "rider",
            "driver",
            "regular_driver",
            "replications",
            "match_rate_mean",
            "match_rate_std",
            "riders",
            "matched",
            "warning",
        ])?;
        for (i, r) in self.rows.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                format!("{:.4}", r.unused_fraction),
                format!("{:.4}", self.shares.rider),
                format!("{:.4}", self.shares.driver),
                format!("{:.4}", self.shares.regular),
                r.replications.to_string(),
                format!("{:.6}", r.mean_match_rate),
                format!("{:.6}", r.std_match_rate),
                r.riders.to_string(),
                r.matched.to_string(),
                r.warning.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["key", "value"])?;
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        w.write_record(["fingerprint", self.fingerprint.as_str()])?;
        w.write_record(["seeds", seeds.join(" ").as_str()])?;
        w.write_record(["levels", self.rows.len().to_string().as_str()])?;
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Realized flow on a carpool lane against the per-lane flow of the general
/// lanes of the same link.
#[derive(Debug, Clone, PartialEq)]
pub struct CarpoolAnchor {
    pub link: LinkId,
    pub unused_fraction: f64,
    pub carpool_flow: f64,
    pub general_lane_flow: f64,
}

impl CarpoolAnchor {
    pub fn relative_gap(&self) -> f64 {
        (self.carpool_flow - self.general_lane_flow).abs() / self.general_lane_flow
    }
}

/// Replication-averaged hourly flows on every carpool link of the baseline
/// scenario with background carpool traffic at `unused_fraction`.
pub fn run_carpool_anchor(
    cfg: &ScenarioConfig,
    network: &Network,
    unused_fraction: f64,
    replications: usize,
    seed: u64,
) -> Result<Vec<CarpoolAnchor>> {
    let mut baseline = cfg.clone();
    baseline.shares = Shares::BASELINE;
    let seeds: Vec<u64> = (0..replications).map(|r| replication_seed(seed, r)).collect();
    let reports = run_replications(&baseline, network, &seeds, Some(unused_fraction))?;
    let k = reports.len() as f64;
    Ok(network
        .links()
        .iter()
        .filter(|l| l.has_carpool_lane)
        .map(|l| {
            let cp: f64 = reports.iter().map(|r| r.lane_hourly_flow(l.id, LaneClass::Carpool)).sum();
            let gen: f64 = reports.iter().map(|r| r.lane_hourly_flow(l.id, LaneClass::General)).sum();
            CarpoolAnchor {
                link: l.id,
                unused_fraction,
                carpool_flow: cp / k,
                general_lane_flow: gen / k / f64::from(l.general_lanes),
            }
        })
        .collect())
}
