//! Executes experiments and renders their artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, ExperimentConfig, Mode, Plan};
use crate::analysis::{
    classify_trace, detect_refresh_interval, summarize_sweep, sweep_csv, LatencyHistogram, Population, RefreshEstimate,
    SweepPoint, SweepRow,
};
use crate::engine::{Engine, EngineError, EngineOptions, LatencyTrace, ThroughputReport};
use crate::timing::TimingParams;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
    #[error("writing {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("unknown preset {name:?}; valid presets: {valid}")]
    UnknownPreset { name: String, valid: String },
    #[error("{0}")]
    Usage(String),
}

impl RunError {
    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Engine(_) => "engine",
            RunError::Io { .. } => "io",
            RunError::UnknownPreset { .. } => "unknown_preset",
            RunError::Usage(_) => "usage",
        }
    }

    /// Machine-readable form for the command line.
    pub fn to_json(&self) -> serde_json::Value {
        let mut err = serde_json::json!({ "kind": self.kind(), "message": self.to_string() });
        if let RunError::Config(c) = self {
            err["field"] = serde_json::Value::String(c.field.clone());
        }
        serde_json::json!({ "error": err })
    }
}

/// Most frequent latency in each population.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationLatency {
    pub hit: Option<u32>,
    pub closed: Option<u32>,
    pub miss: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub samples: usize,
    pub histogram: LatencyHistogram,
    pub population_latency: PopulationLatency,
    /// `None` when the trace holds fewer than two refresh spikes.
    pub refresh: Option<RefreshEstimate>,
    pub trace_file: String,
    #[serde(skip)]
    pub trace: LatencyTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelResult {
    pub axi: usize,
    pub hbm: usize,
    pub route_extra_cycles: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub throughput: Option<ThroughputReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub policy: String,
    pub layout: String,
    pub a: u64,
    pub b: u64,
    pub s: u64,
    pub w: u64,
    pub n: u64,
    pub channels: Vec<ChannelResult>,
    /// Sum over channels, throughput modes only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate_gbps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub timing: TimingParams,
    pub points: Vec<PointResult>,
}

impl ExperimentResult {
    /// One sweep row per point, using the aggregate over channels.
    pub fn sweep_rows(&self) -> Vec<SweepRow> {
        let points: Vec<SweepPoint> = self
            .points
            .iter()
            .filter_map(|p| {
                let first = p.channels.first()?.throughput.clone()?;
                let report = ThroughputReport { gbps: p.aggregate_gbps?, ..first };
                Some(SweepPoint { policy: p.policy.clone(), burst: p.b, stride: p.s, working_set: p.w, report })
            })
            .collect();
        summarize_sweep(&points)
    }

    pub fn point(&self, policy: &str, b: u64, s: u64, w: u64) -> Option<&PointResult> {
        self.points.iter().find(|p| p.policy.eq_ignore_ascii_case(policy) && p.b == b && p.s == s && p.w == w)
    }
}

fn population_latency(hist: &LatencyHistogram, trace: &LatencyTrace) -> PopulationLatency {
    let mut counts: BTreeMap<(Population, u32), u64> = BTreeMap::new();
    for (entry, label) in trace.entries.iter().zip(&hist.labels) {
        *counts.entry((*label, entry.latency)).or_insert(0) += 1;
    }
    let mode = |pop: Population| {
        counts
            .iter()
            .filter(|((p, _), _)| *p == pop)
            .fold(None, |best: Option<(u32, u64)>, (&(_, lat), &n)| match best {
                Some((_, m)) if m >= n => best,
                _ => Some((lat, n)),
            })
            .map(|(lat, _)| lat)
    };
    PopulationLatency {
        hit: mode(Population::Hit),
        closed: mode(Population::Closed),
        miss: mode(Population::Miss),
    }
}

fn trace_file_name(exp: &str, policy: &str, axi: usize, hbm: usize, b: u64, s: u64, w: u64) -> String {
    format!("traces/{exp}_{policy}_ch{axi}-{hbm}_B{b}_S{s}_W{w}.csv")
}

pub fn trace_csv(trace: &LatencyTrace, labels: &[Population]) -> String {
    let mut out = String::from("index,issue_cycle,latency,class,refresh_stalled,population\n");
    for (e, label) in trace.entries.iter().zip(labels) {
        let class = serde_json::to_value(e.truth.class).expect("class serializes");
        let pop = serde_json::to_value(label).expect("population serializes");
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.index,
            e.issue_cycle,
            e.latency,
            class.as_str().unwrap_or_default(),
            e.truth.refresh_stalled,
            pop.as_str().unwrap_or_default()
        ));
    }
    out
}

/// Runs every (point, channel) pair. Pairs run in parallel; results keep
/// config order.
pub fn execute(plan: &Plan) -> Result<ExperimentResult, RunError> {
    let cfg = &plan.config;
    let options = EngineOptions { outstanding_limit: cfg.outstanding_limit, trace_capacity: cfg.trace_capacity };
    let jobs: Vec<(usize, usize)> =
        (0..plan.points.len()).flat_map(|p| (0..plan.routes.len()).map(move |c| (p, c))).collect();

    let outcomes: Vec<Result<ChannelResult, RunError>> = jobs
        .par_iter()
        .map(|&(pi, ci)| {
            let point = &plan.points[pi];
            let route = plan.routes[ci];
            let mut engine = Engine::new(point.policy.clone(), plan.timing.clone(), route)?.with_options(options);
            let mut result = ChannelResult {
                axi: route.axi,
                hbm: route.hbm,
                route_extra_cycles: route.extra_cycles,
                throughput: None,
                latency: None,
            };
            match cfg.mode {
                Mode::Latency => {
                    let trace = engine.run_read_latency(&point.rst)?;
                    let histogram = classify_trace(&trace, &plan.timing, route.extra_cycles);
                    let r = &point.rst;
                    result.latency = Some(LatencySummary {
                        samples: trace.len(),
                        population_latency: population_latency(&histogram, &trace),
                        refresh: detect_refresh_interval(&trace, &plan.timing).ok(),
                        trace_file: trace_file_name(
                            &cfg.name,
                            point.policy.label(),
                            route.axi,
                            route.hbm,
                            r.burst,
                            r.stride,
                            r.working_set,
                        ),
                        histogram,
                        trace,
                    });
                }
                Mode::ReadThroughput => result.throughput = Some(engine.run_read_throughput(&point.rst)?),
                Mode::WriteThroughput => result.throughput = Some(engine.run_write_throughput(&point.rst)?),
            }
            Ok(result)
        })
        .collect();

    let mut outcomes = outcomes.into_iter();
    let mut points = Vec::with_capacity(plan.points.len());
    for point in &plan.points {
        let channels = outcomes.by_ref().take(plan.routes.len()).collect::<Result<Vec<_>, _>>()?;
        let aggregate_gbps = cfg
            .mode
            .is_throughput()
            .then(|| channels.iter().filter_map(|c| c.throughput.as_ref()).map(|t| t.gbps).sum());
        let r = &point.rst;
        points.push(PointResult {
            policy: point.policy.label().to_string(),
            layout: point.policy.layout_string(),
            a: r.start,
            b: r.burst,
            s: r.stride,
            w: r.working_set,
            n: r.count,
            channels,
            aggregate_gbps,
        });
    }
    Ok(ExperimentResult { config: cfg.clone(), timing: plan.timing.clone(), points })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, RunError> {
    execute(&cfg.plan()?)
}

/// Throughput-mode run; the artifact always carries `sweep.csv`.
pub fn sweep(cfg: &ExperimentConfig) -> Result<ExperimentResult, RunError> {
    if !cfg.mode.is_throughput() {
        return Err(ConfigError::new("mode", "sweep needs read_throughput or write_throughput").into());
    }
    run_experiment(cfg)
}

/// Output files keyed by path relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunArtifact {
    pub files: BTreeMap<String, String>,
}

impl RunArtifact {
    pub fn summary(&self) -> Option<&str> {
        self.files.get("summary.json").map(String::as_str)
    }

    pub fn insert(&mut self, path: impl Into<String>, contents: String) {
        self.files.insert(path.into(), contents);
    }

    /// Merges another artifact with every path under `prefix/`.
    pub fn nest(&mut self, prefix: &str, other: RunArtifact) {
        for (path, contents) in other.files {
            self.files.insert(format!("{prefix}/{path}"), contents);
        }
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), RunError> {
        for (rel, contents) in &self.files {
            let path = dir.join(rel);
            let io_err = |source| RunError::Io { path: path.display().to_string(), source };
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io_err)?;
            }
            fs::write(&path, contents).map_err(io_err)?;
        }
        Ok(())
    }
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("result serializes");
    s.push('\n');
    s
}

fn sweep_gnuplot(rows: &[SweepRow], csv: &str) -> String {
    let mut policies: Vec<&str> = Vec::new();
    let mut bursts: Vec<u64> = Vec::new();
    for r in rows {
        if !policies.contains(&r.policy.as_str()) {
            policies.push(&r.policy);
        }
        if !bursts.contains(&r.burst) {
            bursts.push(r.burst);
        }
    }
    bursts.sort_unstable();
    let mut gp = String::from(
        "set datafile separator ','\nset logscale x 2\nset xlabel 'stride S (bytes)'\nset ylabel 'throughput (GB/s)'\nset key outside\nset terminal pngcairo size 900,600\n",
    );
    for b in bursts {
        gp.push_str(&format!(
            "set output 'sweep_B{b}.png'\nset title 'B = {b}'\nplot for [p in \"{}\"] '{csv}' skip 1 using ($2 == {b} && strcol(1) eq p ? $3 : 1/0):5 with linespoints title p\n",
            policies.join(" ")
        ));
    }
    gp
}

fn latency_gnuplot(files: &[&str]) -> String {
    let mut gp = String::from(
        "set datafile separator ','\nset xlabel 'transaction'\nset ylabel 'latency (cycles)'\nset terminal pngcairo size 900,600\n",
    );
    for f in files {
        let png = f.trim_start_matches("traces/").trim_end_matches(".csv");
        gp.push_str(&format!("set output '{png}.png'\nplot '{f}' skip 1 using 1:3 with points pt 7 ps 0.4 notitle\n"));
    }
    gp
}

/// Files for one experiment: `summary.json`, trace CSVs, and for throughput
/// modes `sweep.csv`; each data file comes with a gnuplot script.
pub fn render(result: &ExperimentResult) -> RunArtifact {
    let mut art = RunArtifact::default();
    art.insert("summary.json", to_pretty_json(result));
    if result.config.mode.is_throughput() {
        let rows = result.sweep_rows();
        art.insert("sweep.csv", sweep_csv(&rows));
        art.insert("sweep.gp", sweep_gnuplot(&rows, "sweep.csv"));
    } else {
        let mut names = Vec::new();
        for p in &result.points {
            for c in &p.channels {
                if let Some(l) = &c.latency {
                    art.insert(l.trace_file.clone(), trace_csv(&l.trace, &l.histogram.labels));
                    names.push(l.trace_file.as_str());
                }
            }
        }
        art.insert("latency.gp", latency_gnuplot(&names));
    }
    art
}
