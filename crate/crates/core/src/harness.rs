//! Named experiment suites, seed sweeps, on-disk output layout and the
//! per-suite summary tables.
//!
//! A [`Plan`] is a list of labelled configurations ("arms") crossed with a
//! seed range. Executing a plan runs every (arm, seed) pair independently and
//! optionally writes `<root>/<label>/<seed>/...` plus `<root>/summary.csv` and
//! `<root>/runs.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagination::{candidates_to_csv, EmitterKind};
use crate::qd::fnv1a;
use crate::runner::{run, Mode, RegionConfig, ResetRule, RunConfig, RunCounters, RunReport, Variant};
use crate::selection::{Priorities, SafetyConstraintKind};

pub const GENERATOR: &str = concat!("rfqd-core ", env!("CARGO_PKG_VERSION"));

/// Number of evenly spaced checkpoints kept for learning curves.
pub const CURVE_POINTS: usize = 20;

/// Obstacle counts of the complexity suite.
pub const OBSTACLE_COUNTS: [usize; 4] = [0, 5, 10, 15];

/// Named prioritisation presets.
pub const PRIORITY_PRESETS: [(&str, Priorities); 5] = [
    ("safety", Priorities::SAFETY),
    ("high-disagreement", Priorities::HIGH_DISAGREEMENT),
    ("low-disagreement", Priorities::LOW_DISAGREEMENT),
    ("novelty", Priorities::NOVELTY),
    ("safety-low-disagreement", Priorities::SAFE_AND_CERTAIN),
];

/// Prioritisations crossed with every emitter in the emitter suite.
pub const EMITTER_SUITE_PRIORITIES: [(&str, Priorities); 3] = [
    ("safety", Priorities::SAFETY),
    ("disagreement", Priorities::HIGH_DISAGREEMENT),
    ("novelty", Priorities::NOVELTY),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Baselines,
    PolicyGrid,
    Complexity,
    Emitters,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Baselines, Suite::PolicyGrid, Suite::Complexity, Suite::Emitters];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Baselines => "baselines",
            Suite::PolicyGrid => "policy-grid",
            Suite::Complexity => "complexity",
            Suite::Emitters => "emitters",
        }
    }

    pub fn arms(self) -> Vec<Arm> {
        match self {
            Suite::Baselines => baseline_arms(),
            Suite::PolicyGrid => policy_grid_arms(),
            Suite::Complexity => complexity_arms(),
            Suite::Emitters => emitter_arms(),
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite {s:?}")))
    }
}

/// Half-open seed interval, written `a..b`; `a..=b` is accepted too.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRange {
    pub start: u64,
    pub end: u64,
}

impl SeedRange {
    pub fn new(start: u64, end: u64) -> Result<Self> {
        if end <= start {
            return Err(Error::Config(format!("empty seed range {start}..{end}")));
        }
        Ok(Self { start, end })
    }

    pub fn single(seed: u64) -> Self {
        Self {
            start: seed,
            end: seed + 1,
        }
    }

    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn iter(&self) -> std::ops::Range<u64> {
        self.start..self.end
    }
}

impl Default for SeedRange {
    fn default() -> Self {
        Self { start: 0, end: 10 }
    }
}

impl std::fmt::Display for SeedRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

impl FromStr for SeedRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("seed range must look like a..b, got {s:?}"));
        let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
            (a, b, true)
        } else if let Some((a, b)) = s.split_once("..") {
            (a, b, false)
        } else {
            return Err(bad());
        };
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        SeedRange::new(a, if inclusive { b + 1 } else { b })
    }
}

/// One labelled configuration of a plan.
#[derive(Clone, Debug, PartialEq)]
pub struct Arm {
    pub label: String,
    pub config: RunConfig,
    /// Room layouts are drawn from the run seed rather than the config.
    pub layout_follows_seed: bool,
}

impl Arm {
    pub fn new(label: impl Into<String>, config: RunConfig) -> Self {
        Self {
            label: label.into(),
            config,
            layout_follows_seed: false,
        }
    }

    /// Concrete configuration of one seed at the given scale.
    pub fn config_for(&self, seed: u64, scale: usize) -> RunConfig {
        let mut cfg = self.config.clone().scaled(scale);
        cfg.seed = seed;
        if self.layout_follows_seed {
            if let RegionConfig::Room { layout_seed, .. } = &mut cfg.env.region {
                *layout_seed = seed;
            }
        }
        cfg
    }
}

fn baseline_arms() -> Vec<Arm> {
    [Variant::VanillaQd, Variant::Daqd, Variant::Rfqd]
        .into_iter()
        .map(|variant| {
            Arm::new(
                variant.name(),
                RunConfig {
                    variant,
                    constraint: SafetyConstraintKind::GradientContextual,
                    priorities: Priorities::NOVELTY,
                    ..RunConfig::default()
                },
            )
        })
        .collect()
}

fn policy_grid_arms() -> Vec<Arm> {
    let mut arms = Vec::new();
    for constraint in SafetyConstraintKind::ALL {
        for (pname, priorities) in PRIORITY_PRESETS {
            arms.push(Arm::new(
                format!("{}+{pname}", constraint.name()),
                RunConfig {
                    constraint,
                    priorities,
                    ..RunConfig::default()
                },
            ));
        }
    }
    arms
}

fn room(n: usize) -> crate::runner::EnvConfig {
    crate::runner::EnvConfig {
        region: RegionConfig::Room {
            n_obstacles: n,
            layout_seed: 0,
        },
        ..Default::default()
    }
}

fn complexity_arms() -> Vec<Arm> {
    let mut arms = Vec::new();
    for n in OBSTACLE_COUNTS {
        let variants = [
            (
                "rfqd",
                RunConfig {
                    variant: Variant::Rfqd,
                    constraint: SafetyConstraintKind::Minimal,
                    priorities: Priorities::SAFE_AND_CERTAIN,
                    reset: ResetRule::Never,
                    env: room(n),
                    ..RunConfig::default()
                },
            ),
            (
                "daqd-resets",
                RunConfig {
                    variant: Variant::Daqd,
                    reset: ResetRule::Collision,
                    env: room(n),
                    ..RunConfig::default()
                },
            ),
            (
                "daqd-naive",
                RunConfig {
                    variant: Variant::Daqd,
                    reset: ResetRule::Never,
                    invalidate_collisions: true,
                    env: room(n),
                    ..RunConfig::default()
                },
            ),
        ];
        for (name, config) in variants {
            arms.push(Arm {
                label: complexity_label(name, n),
                config,
                layout_follows_seed: true,
            });
        }
    }
    arms
}

pub fn complexity_label(variant: &str, n_obstacles: usize) -> String {
    format!("{variant}-n{n_obstacles:02}")
}

fn emitter_arms() -> Vec<Arm> {
    let mut arms = Vec::new();
    for (pname, priorities) in EMITTER_SUITE_PRIORITIES {
        for emitter in EmitterKind::ALL {
            arms.push(Arm::new(
                format!("{}+{pname}", emitter.name()),
                RunConfig {
                    emitter,
                    priorities,
                    constraint: SafetyConstraintKind::GradientContextual,
                    ..RunConfig::default()
                },
            ));
        }
    }
    arms
}

/// Which files a run directory receives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Artifacts {
    /// metrics, trajectory, archive, counters, selection log and config.
    #[default]
    Standard,
    /// Standard plus replay buffer, model checkpoint and candidate dump.
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub name: String,
    pub arms: Vec<Arm>,
    pub seeds: SeedRange,
    pub scale: usize,
    pub artifacts: Artifacts,
}

impl Plan {
    pub fn suite(suite: Suite, seeds: SeedRange, scale: usize) -> Self {
        Self {
            name: suite.name().into(),
            arms: suite.arms(),
            seeds,
            scale: scale.max(1),
            artifacts: Artifacts::Standard,
        }
    }

    /// A single configuration over a seed range, labelled by its variant.
    pub fn sweep(config: RunConfig, seeds: SeedRange, scale: usize) -> Self {
        Self {
            name: "sweep".into(),
            arms: vec![Arm::new(config.variant.name(), config)],
            seeds,
            scale: scale.max(1),
            artifacts: Artifacts::Standard,
        }
    }

    /// One seeded run with every artifact.
    pub fn single(config: RunConfig, seed: u64, scale: usize) -> Self {
        Self {
            name: "run".into(),
            arms: vec![Arm::new(config.variant.name(), config)],
            seeds: SeedRange::single(seed),
            scale: scale.max(1),
            artifacts: Artifacts::Full,
        }
    }

    pub fn total_runs(&self) -> usize {
        self.arms.len() * self.seeds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("plan has no runs".into()));
        }
        for arm in &self.arms {
            arm.config_for(self.seeds.start, self.scale).validate()?;
        }
        Ok(())
    }

    fn jobs(&self) -> Vec<(usize, u64)> {
        (0..self.arms.len())
            .flat_map(|a| self.seeds.iter().map(move |s| (a, s)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub eval: u64,
    pub coverage: f64,
    pub qd_score: f64,
    pub archive_size: f64,
    /// Median predicted disagreement of behaviours selected since the
    /// previous checkpoint.
    pub mu_d: f64,
}

/// Compact outcome of one run, enough for every summary and check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub seed: u64,
    pub counters: RunCounters,
    pub coverage: f64,
    pub qd_score: f64,
    pub archive_size: usize,
    pub median_mu_d: f64,
    pub archive_checksum: u64,
    pub curve: Vec<CurvePoint>,
}

impl RunRecord {
    pub fn from_report(label: &str, report: &RunReport) -> Self {
        let last = report.metrics.last();
        let max_eval = report.config.max_evaluations as u64;
        let mut curve = Vec::with_capacity(CURVE_POINTS);
        let mut prev = 0;
        for k in 1..=CURVE_POINTS as u64 {
            let eval = (max_eval * k / CURVE_POINTS as u64).max(1);
            if eval == prev {
                continue;
            }
            let row = report
                .metrics
                .iter()
                .take_while(|m| m.eval <= eval)
                .last()
                .or(last);
            let window: Vec<f64> = report
                .selections
                .iter()
                .filter(|s| s.mode == Mode::Normal && s.mu_d.is_finite() && s.eval_idx > prev && s.eval_idx <= eval)
                .map(|s| s.mu_d)
                .collect();
            curve.push(CurvePoint {
                eval,
                coverage: row.map_or(0.0, |m| m.coverage),
                qd_score: row.map_or(0.0, |m| m.qd_score),
                archive_size: row.map_or(0.0, |m| m.archive_size as f64),
                mu_d: median(&window),
            });
            prev = eval;
        }
        Self {
            label: label.to_string(),
            seed: report.config.seed,
            counters: report.counters,
            coverage: report.archive.coverage(),
            qd_score: report.archive.qd_score(crate::env::FITNESS_FLOOR),
            archive_size: report.archive.fill_count(),
            median_mu_d: median(&report.selected_disagreements()),
            archive_checksum: report.archive.checksum(),
            curve,
        }
    }

    /// Named final metrics in summary order.
    pub fn finals(&self) -> [(&'static str, f64); 11] {
        let c = &self.counters;
        [
            ("coverage", self.coverage),
            ("qd_score", self.qd_score),
            ("archive_size", self.archive_size as f64),
            ("resets", c.resets as f64),
            ("steps_outside_safety", c.steps_outside_safety as f64),
            ("recovery_steps", c.recovery_steps as f64),
            ("collisions", c.collisions as f64),
            ("invalid_evaluations", c.invalid_evaluations as f64),
            ("imagined_evaluations", c.imagined_evaluations as f64),
            ("fallback_selections", c.fallback_selections as f64),
            ("mu_d", self.median_mu_d),
        ]
    }

    pub fn final_metric(&self, name: &str) -> Option<f64> {
        self.finals().into_iter().find(|(n, _)| *n == name).map(|(_, v)| v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanReport {
    pub name: String,
    pub seeds: SeedRange,
    pub scale: usize,
    pub labels: Vec<String>,
    pub records: Vec<RunRecord>,
}

impl PlanReport {
    pub fn records_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.records.iter().filter(move |r| r.label == label)
    }

    /// Values of a final metric across the seeds of one arm, in seed order.
    pub fn finals(&self, label: &str, metric: &str) -> Vec<f64> {
        self.records_for(label)
            .filter_map(|r| r.final_metric(metric))
            .collect()
    }

    pub fn median_final(&self, label: &str, metric: &str) -> f64 {
        median(&self.finals(label, metric))
    }
}

/// Linearly interpolated quantile of the finite values; NaN when none.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Mean and sample standard deviation of the finite values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        v.to_string()
    }
}

/// `# key=value` lines identifying what produced a file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance(Vec<(String, String)>);

impl Provenance {
    pub fn new() -> Self {
        Self(vec![("generator".into(), GENERATOR.into())])
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    pub fn header(&self) -> String {
        self.0.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
    }

    fn json(&self) -> serde_json::Map<String, serde_json::Value> {
        self.0
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect()
    }
}

/// Drops leading `#` comment lines.
pub fn strip_provenance(text: &str) -> &str {
    let mut rest = text;
    while rest.starts_with('#') {
        rest = rest.split_once('\n').map_or("", |(_, r)| r);
    }
    rest
}

pub fn config_digest(config: &RunConfig) -> String {
    format!("{:016x}", fnv1a(config.to_toml().as_bytes()))
}

fn run_provenance(plan: &Plan, label: &str, config: &RunConfig) -> Provenance {
    Provenance::new()
        .with("plan", &plan.name)
        .with("label", label)
        .with("variant", config.variant.name())
        .with("seed", config.seed)
        .with("scale", plan.scale)
        .with("config", config_digest(config))
}

fn plan_provenance(plan: &Plan) -> Provenance {
    let mut p = Provenance::new()
        .with("plan", &plan.name)
        .with("seeds", plan.seeds)
        .with("scale", plan.scale);
    for arm in &plan.arms {
        let cfg = arm.config_for(plan.seeds.start, plan.scale);
        p = p.with(&format!("config[{}]", arm.label), config_digest(&cfg));
    }
    p
}

/// Relative file names of a run directory for the given artifact set.
pub fn run_files(artifacts: Artifacts, uses_model: bool) -> Vec<&'static str> {
    let mut files = vec![
        "config.toml",
        "metrics.csv",
        "trajectory.csv",
        "archive.txt",
        "counters.json",
        "selection.log",
    ];
    if artifacts == Artifacts::Full {
        files.push("buffer.csv");
        if uses_model {
            files.extend(["model.txt", "candidates.csv"]);
        }
    }
    files
}

/// Writes one run directory.
pub fn write_run(dir: &Path, report: &RunReport, provenance: &Provenance, artifacts: Artifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    let head = provenance.header();
    let with_head = |body: String| format!("{head}{body}");
    fs::write(dir.join("config.toml"), with_head(report.config.to_toml()))?;
    fs::write(dir.join("metrics.csv"), with_head(report.metrics_csv()))?;
    fs::write(dir.join("trajectory.csv"), with_head(report.trajectory_csv()))?;
    fs::write(dir.join("archive.txt"), report.archive.to_text())?;
    fs::write(dir.join("selection.log"), with_head(report.selection_log()))?;
    let mut counters: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&report.counters_json())?;
    counters.insert("provenance".into(), serde_json::Value::Object(provenance.json()));
    fs::write(dir.join("counters.json"), serde_json::to_string_pretty(&counters)? + "\n")?;
    if artifacts == Artifacts::Full {
        fs::write(dir.join("buffer.csv"), report.buffer.to_csv())?;
        if let Some(model) = &report.model {
            fs::write(dir.join("model.txt"), model.to_text())?;
            fs::write(dir.join("candidates.csv"), candidates_to_csv(&report.final_candidates))?;
        }
    }
    Ok(())
}

pub const SUMMARY_HEADER: &str = "section,label,eval,metric,n,mean,std,median,q1,q3";
pub const RUNS_HEADER: &str = "label,seed,coverage,qd_score,archive_size,resets,steps_outside_safety,recovery_steps,collisions,invalid_evaluations,imagined_evaluations,refills,fallback_selections,reset_free_violations,median_mu_d,archive_checksum";

fn stat_row(out: &mut String, section: &str, label: &str, eval: u64, metric: &str, values: &[f64]) {
    let finite = values.iter().filter(|v| v.is_finite()).count();
    let (mean, std) = mean_std(values);
    let _ = writeln!(
        out,
        "{section},{label},{eval},{metric},{finite},{},{},{},{},{}",
        fmt_num(mean),
        fmt_num(std),
        fmt_num(median(values)),
        fmt_num(quantile(values, 0.25)),
        fmt_num(quantile(values, 0.75)),
    );
}

impl PlanReport {
    /// Long-format aggregate table: final metrics per arm, then learning
    /// curves per arm and checkpoint.
    pub fn summary_csv(&self, provenance: &Provenance) -> String {
        let mut out = provenance.header();
        out.push_str(SUMMARY_HEADER);
        out.push('\n');
        for label in &self.labels {
            let recs: Vec<&RunRecord> = self.records_for(label).collect();
            let Some(first) = recs.first() else { continue };
            let eval = first.curve.last().map_or(0, |p| p.eval);
            for (i, (metric, _)) in first.finals().iter().enumerate() {
                let values: Vec<f64> = recs.iter().map(|r| r.finals()[i].1).collect();
                stat_row(&mut out, "final", label, eval, metric, &values);
            }
        }
        for label in &self.labels {
            let recs: Vec<&RunRecord> = self.records_for(label).collect();
            let Some(first) = recs.first() else { continue };
            for (k, point) in first.curve.iter().enumerate() {
                let column = |f: fn(&CurvePoint) -> f64| -> Vec<f64> {
                    recs.iter().filter_map(|r| r.curve.get(k).map(f)).collect()
                };
                stat_row(&mut out, "curve", label, point.eval, "coverage", &column(|p| p.coverage));
                stat_row(&mut out, "curve", label, point.eval, "qd_score", &column(|p| p.qd_score));
                stat_row(&mut out, "curve", label, point.eval, "archive_size", &column(|p| p.archive_size));
                stat_row(&mut out, "curve", label, point.eval, "mu_d", &column(|p| p.mu_d));
            }
        }
        out
    }

    /// One row per run.
    pub fn runs_csv(&self, provenance: &Provenance) -> String {
        let mut out = provenance.header();
        out.push_str(RUNS_HEADER);
        out.push('\n');
        for r in &self.records {
            let c = &r.counters;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:016x}",
                r.label,
                r.seed,
                r.coverage,
                r.qd_score,
                r.archive_size,
                c.resets,
                c.steps_outside_safety,
                c.recovery_steps,
                c.collisions,
                c.invalid_evaluations,
                c.imagined_evaluations,
                c.refills,
                c.fallback_selections,
                c.reset_free_violations,
                fmt_num(r.median_mu_d),
                r.archive_checksum
            );
        }
        out
    }
}

/// Progress callback: the finished record, runs completed so far, total.
pub type Progress<'a> = &'a (dyn Fn(&RunRecord, usize, usize) + Sync);

/// Runs every (arm, seed) pair of the plan. With `out` set, run directories
/// and the two tables are written below it. Records come back in arm-major,
/// seed-minor order regardless of scheduling.
pub fn execute(plan: &Plan, out: Option<&Path>, progress: Option<Progress<'_>>) -> Result<PlanReport> {
    plan.validate()?;
    let jobs = plan.jobs();
    let total = jobs.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let records = jobs
        .par_iter()
        .map(|&(a, seed)| -> Result<RunRecord> {
            let arm = &plan.arms[a];
            let mut cfg = arm.config_for(seed, plan.scale);
            if out.is_none() {
                cfg.record_trajectory = false;
            }
            let report = run(&cfg)?;
            if let Some(root) = out {
                let dir = root.join(&arm.label).join(seed.to_string());
                write_run(&dir, &report, &run_provenance(plan, &arm.label, &cfg), plan.artifacts)?;
            }
            let record = RunRecord::from_report(&arm.label, &report);
            let n = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
            if let Some(p) = progress {
                p(&record, n, total);
            }
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = PlanReport {
        name: plan.name.clone(),
        seeds: plan.seeds,
        scale: plan.scale,
        labels: plan.arms.iter().map(|a| a.label.clone()).collect(),
        records,
    };
    if let Some(root) = out {
        fs::create_dir_all(root)?;
        let prov = plan_provenance(plan);
        fs::write(root.join("summary.csv"), report.summary_csv(&prov))?;
        fs::write(root.join("runs.csv"), report.runs_csv(&prov))?;
    }
    Ok(report)
}
