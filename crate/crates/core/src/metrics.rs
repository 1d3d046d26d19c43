//! Platooning error and speed difference, per run and aggregated over
//! packet-error-rate sweeps.

use std::io::Write;

use thiserror::Error;

use crate::model::VehicleId;
use crate::sim::Trace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
    #[error("empty input")]
    EmptyInput,
    #[error("incomplete sweep: no runs for per {0}")]
    IncompleteSweep(f64),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for MetricsError {
    fn from(e: std::io::Error) -> Self {
        MetricsError::Io(e.to_string())
    }
}

/// A labelled time series.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub label: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl MetricSeries {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn push(&mut self, time: f64, value: f64) {
        self.times.push(time);
        self.values.push(value);
    }

    pub fn mean(&self) -> Result<f64, MetricsError> {
        if self.values.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        Ok(self.values.iter().sum::<f64>() / self.values.len() as f64)
    }

    pub fn max(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::max)
    }

    /// Drops samples with `start <= t < start + width` for any start.
    pub fn excluding_windows(&self, starts: &[f64], width: f64) -> MetricSeries {
        let mut out = MetricSeries::new(self.label.clone());
        for (t, v) in self.times.iter().zip(&self.values) {
            if !starts.iter().any(|s| *t >= *s && *t < s + width) {
                out.push(*t, *v);
            }
        }
        out
    }
}

/// `|gap − desired_gap|` for every follower at every tick where the gap is known.
pub fn platooning_error(
    trace: &Trace,
    desired_gap: f64,
) -> Result<Vec<MetricSeries>, MetricsError> {
    if trace.rows.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut out: Vec<MetricSeries> = trace
        .vehicle_ids
        .iter()
        .filter(|id| !id.is_leader())
        .map(|id| MetricSeries::new(format!("v{}_error_m", id.0)))
        .collect();
    for row in &trace.rows {
        let followers = row.vehicles.iter().filter(|v| !v.id.is_leader());
        for (series, v) in out.iter_mut().zip(followers) {
            let link = v.link.ok_or_else(|| {
                MetricsError::MalformedTrace(format!("missing column v{}_gap_m", v.id.0))
            })?;
            if let Some(gap) = link.gap {
                series.push(row.time, (gap - desired_gap).abs());
            }
        }
    }
    Ok(out)
}

/// Nearest-rank percentile, `p` in percent: sorted ascending, element
/// `⌈p·N/100⌉ − 1`.
pub fn nearest_rank_percentile(values: &[f64], p: u32) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (p as usize * n).div_ceil(100).max(1);
    Ok(sorted[rank.min(n) - 1])
}

pub fn percentile_95(series: &MetricSeries) -> Result<f64, MetricsError> {
    nearest_rank_percentile(&series.values, 95)
}

/// Per tick, fastest minus slowest speed across the whole string.
pub fn speed_difference(trace: &Trace) -> Result<MetricSeries, MetricsError> {
    if trace.rows.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut out = MetricSeries::new("speed_difference_mps");
    for row in &trace.rows {
        if row.vehicles.is_empty() {
            return Err(MetricsError::MalformedTrace(format!(
                "no vehicles at t={}",
                row.time
            )));
        }
        let (lo, hi) = row
            .vehicles
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v.speed), hi.max(v.speed))
            });
        out.push(row.time, hi - lo);
    }
    Ok(out)
}

/// Scalar metrics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub per: f64,
    pub seed: u64,
    /// Time-mean of the speed difference, m/s.
    pub mean_speed_difference: f64,
    /// 95th-percentile platooning error per follower, metres.
    pub follower_p95: Vec<(VehicleId, f64)>,
    /// Worst follower's 95th-percentile platooning error, metres.
    pub p95_platooning_error: f64,
}

pub fn run_metrics(
    trace: &Trace,
    desired_gap: f64,
    per: f64,
    seed: u64,
) -> Result<RunMetrics, MetricsError> {
    let mean_speed_difference = speed_difference(trace)?.mean()?;
    let errors = platooning_error(trace, desired_gap)?;
    let follower_ids = trace.vehicle_ids.iter().filter(|id| !id.is_leader());
    let mut follower_p95 = Vec::new();
    for (id, series) in follower_ids.zip(&errors) {
        follower_p95.push((*id, percentile_95(series)?));
    }
    let p95_platooning_error = follower_p95
        .iter()
        .map(|(_, v)| *v)
        .reduce(f64::max)
        .ok_or_else(|| MetricsError::MalformedTrace("no followers".into()))?;
    Ok(RunMetrics {
        per,
        seed,
        mean_speed_difference,
        follower_p95,
        p95_platooning_error,
    })
}

/// Aggregate for one packet error rate.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSummary {
    pub per: f64,
    pub seeds: Vec<u64>,
    /// Mean over seeds of the time-mean speed difference, m/s.
    pub mean_speed_difference: f64,
    /// Mean over seeds of the worst follower's p95 platooning error, metres.
    pub p95_platooning_error: f64,
    /// Mean over seeds of each follower's p95, metres.
    pub follower_p95: Vec<(VehicleId, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub runs: Vec<RunMetrics>,
    /// Ascending by PER.
    pub levels: Vec<LevelSummary>,
}

/// Averages per-run metrics within each requested PER level.
pub fn aggregate_runs(
    mut runs: Vec<RunMetrics>,
    levels: &[f64],
) -> Result<SweepSummary, MetricsError> {
    if levels.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    runs.sort_by(|a, b| a.per.total_cmp(&b.per).then(a.seed.cmp(&b.seed)));
    let mut sorted_levels = levels.to_vec();
    sorted_levels.sort_by(f64::total_cmp);
    sorted_levels.dedup();
    let mut out = Vec::with_capacity(sorted_levels.len());
    for per in sorted_levels {
        let cell: Vec<&RunMetrics> = runs.iter().filter(|r| r.per == per).collect();
        if cell.is_empty() {
            return Err(MetricsError::IncompleteSweep(per));
        }
        let n = cell.len() as f64;
        let mut follower_p95: Vec<(VehicleId, f64)> = cell[0]
            .follower_p95
            .iter()
            .map(|(id, _)| (*id, 0.0))
            .collect();
        for r in &cell {
            for (acc, (_, v)) in follower_p95.iter_mut().zip(&r.follower_p95) {
                acc.1 += v / n;
            }
        }
        out.push(LevelSummary {
            per,
            seeds: cell.iter().map(|r| r.seed).collect(),
            mean_speed_difference: cell.iter().map(|r| r.mean_speed_difference).sum::<f64>() / n,
            p95_platooning_error: cell.iter().map(|r| r.p95_platooning_error).sum::<f64>() / n,
            follower_p95,
        });
    }
    Ok(SweepSummary { runs, levels: out })
}

/// One simulated run of a sweep.
#[derive(Debug, Clone)]
pub struct SweepRun<'a> {
    pub per: f64,
    pub seed: u64,
    pub trace: &'a Trace,
}

pub fn sweep_aggregate(
    runs: &[SweepRun<'_>],
    levels: &[f64],
    desired_gap: f64,
) -> Result<SweepSummary, MetricsError> {
    let metrics = runs
        .iter()
        .map(|r| run_metrics(r.trace, desired_gap, r.per, r.seed))
        .collect::<Result<Vec<_>, _>>()?;
    aggregate_runs(metrics, levels)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // ties share the mean of their 1-based ranks
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of tie-averaged ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

pub const SCHEMA_LINE: &str = "# schema=1";

/// Writes series sharing one time axis as columns: `time_s,<label>...`.
/// Series with differing time axes are written as `time_s,label,value` rows.
pub fn write_series_csv<W: Write>(mut out: W, series: &[MetricSeries]) -> Result<(), MetricsError> {
    writeln!(out, "{SCHEMA_LINE}")?;
    let aligned = series.windows(2).all(|w| w[0].times == w[1].times);
    if aligned && !series.is_empty() {
        let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
        writeln!(out, "time_s,{}", labels.join(","))?;
        for (k, t) in series[0].times.iter().enumerate() {
            write!(out, "{t}")?;
            for s in series {
                write!(out, ",{}", s.values[k])?;
            }
            writeln!(out)?;
        }
    } else {
        writeln!(out, "time_s,series,value")?;
        for s in series {
            for (t, v) in s.times.iter().zip(&s.values) {
                writeln!(out, "{t},{},{v}", s.label)?;
            }
        }
    }
    Ok(())
}

/// `metric,value` rows for one run.
pub fn write_run_summary_csv<W: Write>(mut out: W, m: &RunMetrics) -> Result<(), MetricsError> {
    writeln!(out, "{SCHEMA_LINE}")?;
    writeln!(out, "metric,value")?;
    writeln!(out, "mean_speed_difference_mps,{}", m.mean_speed_difference)?;
    for (id, v) in &m.follower_p95 {
        writeln!(out, "v{}_p95_error_m,{v}", id.0)?;
    }
    writeln!(out, "p95_platooning_error_m,{}", m.p95_platooning_error)?;
    Ok(())
}

/// One row per run: `per,seed,mean_speed_difference_mps,p95_platooning_error_m,v<i>_p95_error_m...`.
pub fn write_runs_csv<W: Write>(mut out: W, runs: &[RunMetrics]) -> Result<(), MetricsError> {
    writeln!(out, "{SCHEMA_LINE}")?;
    write!(
        out,
        "per,seed,mean_speed_difference_mps,p95_platooning_error_m"
    )?;
    if let Some(first) = runs.first() {
        for (id, _) in &first.follower_p95 {
            write!(out, ",v{}_p95_error_m", id.0)?;
        }
    }
    writeln!(out)?;
    for r in runs {
        write!(
            out,
            "{},{},{},{}",
            r.per, r.seed, r.mean_speed_difference, r.p95_platooning_error
        )?;
        for (_, v) in &r.follower_p95 {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// One row per PER level.
pub fn write_sweep_summary_csv<W: Write>(mut out: W, s: &SweepSummary) -> Result<(), MetricsError> {
    writeln!(out, "{SCHEMA_LINE}")?;
    let followers: Vec<VehicleId> = s
        .levels
        .first()
        .map(|l| l.follower_p95.iter().map(|(id, _)| *id).collect())
        .unwrap_or_default();
    write!(
        out,
        "per,seeds,mean_speed_difference_mps,p95_platooning_error_m"
    )?;
    for id in &followers {
        write!(out, ",v{}_p95_error_m", id.0)?;
    }
    writeln!(out)?;
    for l in &s.levels {
        write!(
            out,
            "{},{},{},{}",
            l.per,
            l.seeds.len(),
            l.mean_speed_difference,
            l.p95_platooning_error
        )?;
        for (_, v) in &l.follower_p95 {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
