//! The reset-free loop and the two baselines it is compared against.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{make_room, EpisodeResult, RobotParams, RobotState, SafetyRegion, Simulator, FITNESS_FLOOR};
use crate::error::{Error, Result};
use crate::imagination::{emit_iso_dd, generate_candidates, Candidate, EmitterKind, ImaginationConfig};
use crate::model::{imagine_batch, EnsembleModel, ModelConfig, ReplayBuffer, RolloutSpec, TrainConfig};
use crate::qd::{iso_dd, AddOutcome, novelty, Archive, Genotype, GridSpec, Origin, Solution};
use crate::selection::{
    apply_safety_constraint, prioritize_candidates, recovery_policy, Priorities, SafetyConstraintKind,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Rfqd,
    Daqd,
    VanillaQd,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Rfqd => "rfqd",
            Variant::Daqd => "daqd",
            Variant::VanillaQd => "vanilla-qd",
        }
    }

    pub fn uses_model(self) -> bool {
        self != Variant::VanillaQd
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionConfig {
    Circle { radius: f64 },
    /// 4 x 4 m room with seeded column layout.
    Room { n_obstacles: usize, layout_seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub region: RegionConfig,
    pub beta: f64,
    pub noise: bool,
    pub steps: usize,
    pub dt: f64,
    pub a_max: f64,
    pub bd_max: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            region: RegionConfig::Circle { radius: 2.0 },
            beta: 0.0,
            noise: true,
            steps: 20,
            dt: RobotParams::default().dt,
            a_max: RobotParams::default().a_max,
            bd_max: 0.5,
        }
    }
}

impl EnvConfig {
    pub fn params(&self) -> RobotParams {
        RobotParams {
            dt: self.dt,
            a_max: self.a_max,
            ..RobotParams::default()
        }
    }

    pub fn region(&self) -> Result<SafetyRegion> {
        match self.region {
            RegionConfig::Circle { radius } => SafetyRegion::circle(radius, self.beta),
            RegionConfig::Room {
                n_obstacles,
                layout_seed,
            } => make_room(n_obstacles, layout_seed, self.beta),
        }
    }

    pub fn simulator(&self) -> Result<Simulator> {
        if self.steps == 0 || self.dt <= 0.0 || self.a_max <= 0.0 || self.bd_max <= 0.0 {
            return Err(Error::Config("steps, dt, a_max and bd_max must be positive".into()));
        }
        Ok(Simulator::new(self.params(), self.region()?, self.steps, self.noise, self.bd_max))
    }
}

/// When a baseline gets teleported back to the start pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResetRule {
    Never,
    /// The behaviour ended more than `margin` metres inside the dangerous set.
    Outside { margin: f64 },
    /// The behaviour touched an obstacle.
    Collision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub variant: Variant,
    pub seed: u64,
    pub max_evaluations: usize,
    pub init_evaluations: usize,
    pub train_every: usize,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub constraint: SafetyConstraintKind,
    pub priorities: Priorities,
    pub emitter: EmitterKind,
    pub imagination: ImaginationConfig,
    pub env: EnvConfig,
    /// Manual-reset rule of the baselines; the reset-free variant ignores it.
    pub reset: ResetRule,
    /// Obstacle contact voids the evaluation.
    pub invalidate_collisions: bool,
    pub novelty_k: usize,
    pub resolution: usize,
    pub dims: usize,
    /// Consecutive empty safe sets before the least unsafe candidate runs.
    pub max_selection_failures: usize,
    pub record_trajectory: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Rfqd,
            seed: 0,
            max_evaluations: 10_000,
            init_evaluations: 50,
            train_every: 50,
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            constraint: SafetyConstraintKind::GradientContextual,
            priorities: Priorities::NOVELTY,
            emitter: EmitterKind::IsoDd,
            imagination: ImaginationConfig::default(),
            env: EnvConfig::default(),
            reset: ResetRule::Outside { margin: 0.5 },
            invalidate_collisions: false,
            novelty_k: 15,
            resolution: 40,
            dims: 8,
            max_selection_failures: 3,
            record_trajectory: true,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.init_evaluations == 0 || self.max_evaluations < self.init_evaluations {
            return Err(Error::Config(format!(
                "need 1 <= init_evaluations ({}) <= max_evaluations ({})",
                self.init_evaluations, self.max_evaluations
            )));
        }
        if self.resolution == 0 || self.novelty_k == 0 || self.train_every == 0 {
            return Err(Error::Config("resolution, novelty_k and train_every must be positive".into()));
        }
        if self.variant.uses_model() && self.model.members < 2 {
            return Err(Error::TooFewMembers(self.model.members));
        }
        self.priorities.validate()?;
        self.env.simulator().map(|_| ())
    }

    /// Divides the real-evaluation budget by `scale`. Per-refill imagination
    /// budget, initialisation size and training cadence are left alone, so
    /// the total imagined work shrinks with the number of refills.
    pub fn scaled(mut self, scale: usize) -> Self {
        let scale = scale.max(1);
        self.max_evaluations = (self.max_evaluations / scale).max(self.init_evaluations);
        self
    }

    fn grid(&self) -> GridSpec {
        GridSpec {
            resolution: self.resolution,
            bd_max: self.env.bd_max,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounters {
    pub resets: u64,
    pub steps_outside_safety: u64,
    pub recovery_steps: u64,
    pub real_evaluations: u64,
    pub imagined_evaluations: u64,
    /// Behaviours that touched an obstacle column.
    pub collisions: u64,
    pub invalid_evaluations: u64,
    pub refills: u64,
    pub fallback_selections: u64,
    pub added: u64,
    pub replaced: u64,
    pub rejected: u64,
    /// Manual resets outside initialisation with an empty archive; must stay
    /// zero for the reset-free variant.
    pub reset_free_violations: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Init,
    Normal,
    Recovery,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Init => "init",
            Mode::Normal => "normal",
            Mode::Recovery => "recovery",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub eval: u64,
    pub mode: Mode,
    pub coverage: f64,
    pub qd_score: f64,
    pub archive_size: usize,
    pub resets: u64,
    pub steps_outside_safety: u64,
    pub recovery_steps: u64,
    pub imagined_evaluations: u64,
    pub eps_end: f64,
    /// Predicted disagreement of the executed behaviour; NaN when it was not
    /// chosen from imagination.
    pub mu_d: f64,
}

pub const METRICS_HEADER: &str = "eval,mode,coverage,qd_score,archive_size,resets,steps_outside_safety,recovery_steps,imagined_evaluations,eps_end,mu_d";

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SelectionRecord {
    pub eval_idx: u64,
    /// `None` when no constraint was consulted.
    pub constraint: Option<SafetyConstraintKind>,
    pub candidates: usize,
    pub safe: usize,
    pub chosen_cell: (usize, usize),
    pub eps_s: f64,
    pub eps_pred: f64,
    pub mu_d: f64,
    pub novelty: f64,
    pub mode: Mode,
}

pub const SELECTION_HEADER: &str = "eval_idx,constraint_kind,n_candidates,n_safe,chosen_cell,eps_s,eps_s_pred,mu_d,novelty,mode";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Event {
    None,
    Outside,
    Recovery,
    Reset,
}

impl Event {
    pub fn name(self) -> &'static str {
        match self {
            Event::None => "none",
            Event::Outside => "outside",
            Event::Recovery => "recovery",
            Event::Reset => "reset",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub step: u64,
    pub state: RobotState,
    pub eps: f64,
    pub event: Event,
}

pub const TRAJECTORY_HEADER: &str = "step,x,y,theta,eps,event";

#[derive(Clone, Debug)]
pub struct RunReport {
    pub config: RunConfig,
    pub archive: Archive,
    pub counters: RunCounters,
    pub metrics: Vec<MetricRow>,
    pub selections: Vec<SelectionRecord>,
    pub trajectory: Vec<TrajectoryRow>,
    pub buffer: ReplayBuffer,
    pub model: Option<EnsembleModel>,
    pub final_candidates: Vec<Candidate>,
}

fn fmt_f(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        v.to_string()
    }
}

impl RunReport {
    pub fn metrics_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for m in &self.metrics {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                m.eval,
                m.mode.name(),
                m.coverage,
                m.qd_score,
                m.archive_size,
                m.resets,
                m.steps_outside_safety,
                m.recovery_steps,
                m.imagined_evaluations,
                fmt_f(m.eps_end),
                fmt_f(m.mu_d)
            );
        }
        out
    }

    pub fn selection_log(&self) -> String {
        let mut out = format!("{SELECTION_HEADER}\n");
        for s in &self.selections {
            let _ = writeln!(
                out,
                "{},{},{},{},{}:{},{},{},{},{},{}",
                s.eval_idx,
                s.constraint.map_or("none", |c| c.name()),
                s.candidates,
                s.safe,
                s.chosen_cell.0,
                s.chosen_cell.1,
                fmt_f(s.eps_s),
                fmt_f(s.eps_pred),
                fmt_f(s.mu_d),
                fmt_f(s.novelty),
                s.mode.name()
            );
        }
        out
    }

    pub fn trajectory_csv(&self) -> String {
        let mut out = String::with_capacity(self.trajectory.len() * 64);
        out.push_str(TRAJECTORY_HEADER);
        out.push('\n');
        for t in &self.trajectory {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                t.step,
                t.state.x,
                t.state.y,
                t.state.theta,
                t.eps,
                t.event.name()
            );
        }
        out
    }

    pub fn counters_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            variant: &'a str,
            seed: u64,
            #[serde(flatten)]
            counters: &'a RunCounters,
            coverage: f64,
            qd_score: f64,
            archive_size: usize,
            archive_checksum: String,
        }
        serde_json::to_string_pretty(&Summary {
            variant: self.config.variant.name(),
            seed: self.config.seed,
            counters: &self.counters,
            coverage: self.archive.coverage(),
            qd_score: self.archive.qd_score(FITNESS_FLOOR),
            archive_size: self.archive.fill_count(),
            archive_checksum: format!("{:016x}", self.archive.checksum()),
        })
        .expect("summary serialises")
    }

    /// Predicted disagreement of every behaviour picked by the selection
    /// policy.
    pub fn selected_disagreements(&self) -> Vec<f64> {
        self.selections
            .iter()
            .filter(|s| s.mode == Mode::Normal && s.mu_d.is_finite())
            .map(|s| s.mu_d)
            .collect()
    }
}

/// Independent random streams of a run.
struct Streams {
    env: ChaCha8Rng,
    qd: ChaCha8Rng,
    model: ChaCha8Rng,
    imagination: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Self {
            env: stream(1),
            qd: stream(2),
            model: stream(3),
            imagination: stream(4),
        }
    }
}

/// What the loop decided to execute next.
struct Choice {
    genotype: Genotype,
    mode: Mode,
    record: Option<SelectionRecord>,
}

struct Runner {
    cfg: RunConfig,
    sim: Simulator,
    spec: RolloutSpec,
    start: RobotState,
    archive: Archive,
    buffer: ReplayBuffer,
    model: Option<EnsembleModel>,
    candidates: VecDeque<Candidate>,
    pose: RobotState,
    counters: RunCounters,
    rng: Streams,
    metrics: Vec<MetricRow>,
    selections: Vec<SelectionRecord>,
    trajectory: Vec<TrajectoryRow>,
    step: u64,
    since_train: usize,
    /// ε at the end of the last behaviour, before any reset.
    last_eps_end: f64,
}

impl Runner {
    fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let sim = cfg.env.simulator()?;
        let spec = RolloutSpec {
            params: sim.params,
            steps: sim.steps,
            bd_max: sim.bd_max,
        };
        let mut rng = Streams::new(cfg.seed);
        let model = cfg
            .variant
            .uses_model()
            .then(|| EnsembleModel::new(cfg.model, &mut rng.model));
        let start = RobotState::default();
        let mut r = Self {
            archive: Archive::new(cfg.grid(), cfg.dims),
            sim,
            spec,
            start,
            buffer: ReplayBuffer::new(),
            model,
            candidates: VecDeque::new(),
            pose: start,
            counters: RunCounters::default(),
            rng,
            metrics: Vec::new(),
            selections: Vec::new(),
            trajectory: Vec::new(),
            step: 0,
            since_train: 0,
            last_eps_end: 1.0,
            cfg,
        };
        r.log_state(start, Event::None);
        Ok(r)
    }

    fn eps(&self, s: &RobotState) -> f64 {
        self.sim.region.epsilon(s.x, s.y)
    }

    fn log_state(&mut self, state: RobotState, event: Event) {
        if self.cfg.record_trajectory {
            let eps = self.eps(&state);
            self.trajectory.push(TrajectoryRow {
                step: self.step,
                state,
                eps,
                event,
            });
        }
    }

    fn teleport(&mut self) {
        if self.cfg.variant == Variant::Rfqd && !self.archive.is_empty() {
            self.counters.reset_free_violations += 1;
        }
        self.pose = self.start;
        self.counters.resets += 1;
        self.log_state(self.start, Event::Reset);
    }

    /// Runs one behaviour on the robot and does all per-evaluation
    /// bookkeeping except archive insertion.
    fn execute(&mut self, g: &Genotype, mode: Mode) -> Result<EpisodeResult> {
        let ep = self.sim.execute_behaviour(self.pose, g, &mut self.rng.env)?;
        for s in &ep.states[1..] {
            self.step += 1;
            let event = if mode == Mode::Recovery {
                Event::Recovery
            } else if self.eps(s) <= 0.0 {
                Event::Outside
            } else {
                Event::None
            };
            self.log_state(*s, event);
        }
        self.buffer.push_episode(&ep);
        self.pose = ep.end();
        self.counters.real_evaluations += 1;
        self.last_eps_end = self.eps(&self.pose);
        if self.last_eps_end <= 0.0 {
            self.counters.steps_outside_safety += 1;
        }
        if ep.obstacle_contact {
            self.counters.collisions += 1;
        }
        if mode == Mode::Recovery {
            self.counters.recovery_steps += 1;
        }
        Ok(ep)
    }

    fn offer(&mut self, ep: &EpisodeResult, g: Genotype) {
        if ep.obstacle_contact && self.cfg.invalidate_collisions {
            self.counters.invalid_evaluations += 1;
            return;
        }
        match self.archive.try_add(Solution::real(g, ep.bd, ep.fitness)) {
            AddOutcome::AddedNew => self.counters.added += 1,
            AddOutcome::Replaced => self.counters.replaced += 1,
            AddOutcome::Rejected => self.counters.rejected += 1,
        }
    }

    fn apply_reset_rule(&mut self, ep: &EpisodeResult) {
        let triggered = match self.cfg.reset {
            ResetRule::Never => false,
            ResetRule::Outside { margin } => self.sim.region.distance(self.pose.x, self.pose.y) < -margin,
            ResetRule::Collision => ep.obstacle_contact,
        };
        if triggered {
            self.teleport();
        }
    }

    fn after_evaluation(&mut self, mode: Mode, mu_d: f64) -> Result<()> {
        self.since_train += 1;
        if self.model.is_some() && self.since_train >= self.cfg.train_every {
            self.retrain()?;
        }
        let eps_end = self.last_eps_end;
        self.metrics.push(MetricRow {
            eval: self.counters.real_evaluations,
            mode,
            coverage: self.archive.coverage(),
            qd_score: self.archive.qd_score(FITNESS_FLOOR),
            archive_size: self.archive.fill_count(),
            resets: self.counters.resets,
            steps_outside_safety: self.counters.steps_outside_safety,
            recovery_steps: self.counters.recovery_steps,
            imagined_evaluations: self.counters.imagined_evaluations,
            eps_end,
            mu_d,
        });
        Ok(())
    }

    fn retrain(&mut self) -> Result<()> {
        if let Some(model) = self.model.as_mut() {
            model.train(&self.buffer, &self.cfg.train, &mut self.rng.model)?;
        }
        self.since_train = 0;
        Ok(())
    }

    fn recovery_choice(&self) -> Result<Choice> {
        let rec = recovery_policy(&self.archive, &self.pose, &self.sim.region)?;
        Ok(Choice {
            genotype: rec.genotype,
            mode: Mode::Recovery,
            record: Some(SelectionRecord {
                eval_idx: self.counters.real_evaluations + 1,
                constraint: Some(self.cfg.constraint),
                candidates: self.candidates.len(),
                safe: 0,
                chosen_cell: rec.cell,
                eps_s: self.eps(&self.pose),
                eps_pred: rec.eps_next,
                mu_d: f64::NAN,
                novelty: f64::NAN,
                mode: Mode::Recovery,
            }),
        })
    }

    fn initialise(&mut self) -> Result<()> {
        while (self.counters.real_evaluations as usize) < self.cfg.init_evaluations {
            let unsafe_now = self.eps(&self.pose) <= 0.0;
            if self.cfg.variant == Variant::Rfqd && unsafe_now {
                if self.archive.is_empty() {
                    self.teleport();
                } else {
                    let choice = self.recovery_choice()?;
                    self.step_with(choice)?;
                    continue;
                }
            }
            let g = Genotype::random(self.cfg.dims, &mut self.rng.qd);
            let ep = self.execute(&g, Mode::Init)?;
            self.offer(&ep, g);
            if self.cfg.variant != Variant::Rfqd {
                self.apply_reset_rule(&ep);
            }
            self.after_evaluation(Mode::Init, f64::NAN)?;
        }
        if self.model.is_some() {
            self.retrain()?;
        }
        Ok(())
    }

    fn step_with(&mut self, choice: Choice) -> Result<()> {
        let mu_d = choice.record.map_or(f64::NAN, |r| r.mu_d);
        if let Some(r) = choice.record {
            self.selections.push(r);
        }
        let ep = self.execute(&choice.genotype, choice.mode)?;
        if choice.mode != Mode::Recovery {
            self.offer(&ep, choice.genotype);
        }
        if self.cfg.variant != Variant::Rfqd {
            self.apply_reset_rule(&ep);
        }
        self.after_evaluation(choice.mode, mu_d)
    }

    /// Drops candidates the real archive would no longer accept.
    fn purge(&mut self) {
        let archive = &self.archive;
        self.candidates.retain(|c| archive.would_add(&c.solution).accepted());
    }

    fn refill(&mut self) -> Result<()> {
        let model = self.model.as_ref().expect("model-based variant");
        let out = generate_candidates(
            &self.archive,
            model,
            self.cfg.emitter,
            &self.cfg.imagination,
            &self.spec,
            self.cfg.novelty_k,
            &mut self.rng.imagination,
        )?;
        self.counters.refills += 1;
        self.counters.imagined_evaluations += out.evaluations as u64;
        self.candidates = out.candidates.into();
        if self.candidates.is_empty() {
            // imagination found nothing new; fall back to plain offspring
            let n = self.cfg.imagination.batch_size.max(1);
            let genotypes = (0..n)
                .map(|_| emit_iso_dd(&self.archive, &self.cfg.imagination, &mut self.rng.imagination))
                .collect::<Result<Vec<_>>>()?;
            let eps = imagine_batch(model, &genotypes, &self.spec)?;
            self.counters.imagined_evaluations += n as u64;
            for (g, ep) in genotypes.into_iter().zip(eps) {
                let solution = Solution {
                    genotype: g,
                    bd: ep.predicted_bd,
                    fitness: ep.predicted_fitness,
                    origin: Origin::Imagined,
                    disagreement: ep.disagreement,
                };
                self.candidates.push_back(Candidate {
                    novelty_at_generation: novelty(&self.archive, &solution.bd, self.cfg.novelty_k),
                    solution,
                    imagined: ep,
                });
            }
        }
        Ok(())
    }

    /// Purges stale candidates and refills when nothing is left. The refill
    /// fallback guarantees a non-empty buffer afterwards.
    fn ensure_candidates(&mut self) -> Result<()> {
        self.purge();
        if self.candidates.is_empty() {
            self.refill()?;
        }
        Ok(())
    }

    fn candidate_record(&self, c: &Candidate, constraint: Option<SafetyConstraintKind>, safe: usize, eps_pred: f64, nov: f64) -> SelectionRecord {
        SelectionRecord {
            eval_idx: self.counters.real_evaluations + 1,
            constraint,
            candidates: self.candidates.len(),
            safe,
            chosen_cell: self.archive.grid().cell_index(&c.solution.bd),
            eps_s: self.eps(&self.pose),
            eps_pred,
            mu_d: c.solution.disagreement,
            novelty: nov,
            mode: Mode::Normal,
        }
    }

    fn daqd_choice(&mut self) -> Result<Choice> {
        self.ensure_candidates()?;
        let c = self.candidates.front().expect("non-empty buffer");
        let end = c.imagined.end_state(&self.pose);
        let nov = novelty(&self.archive, &c.solution.bd, self.cfg.novelty_k);
        let n = self.candidates.len();
        let record = self.candidate_record(c, None, n, self.eps(&end), nov);
        let c = self.candidates.pop_front().expect("non-empty buffer");
        Ok(Choice {
            genotype: c.solution.genotype,
            mode: Mode::Normal,
            record: Some(record),
        })
    }

    fn rfqd_choice(&mut self) -> Result<Choice> {
        if self.eps(&self.pose) <= 0.0 {
            return self.recovery_choice();
        }
        let mut failures = 0;
        loop {
            self.ensure_candidates()?;
            let list: Vec<Candidate> = self.candidates.iter().cloned().collect();
            let safe = apply_safety_constraint(&list, &self.pose, &self.sim.region, self.cfg.constraint);
            if !safe.is_empty() {
                let scored = prioritize_candidates(
                    &list,
                    &safe,
                    &self.pose,
                    &self.cfg.priorities,
                    &self.archive,
                    &self.sim.region,
                    self.cfg.novelty_k,
                )?;
                let best = scored[0];
                let nov = novelty(&self.archive, &list[best.index].solution.bd, self.cfg.novelty_k);
                let record = self.candidate_record(&list[best.index], Some(self.cfg.constraint), safe.len(), best.eps_next, nov);
                let c = self.candidates.remove(best.index).expect("index in range");
                return Ok(Choice {
                    genotype: c.solution.genotype,
                    mode: Mode::Normal,
                    record: Some(record),
                });
            }
            failures += 1;
            if failures >= self.cfg.max_selection_failures.max(1) {
                let region = &self.sim.region;
                let pose = self.pose;
                let (idx, eps_pred) = list
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let e = c.imagined.end_state(&pose);
                        (i, region.epsilon(e.x, e.y))
                    })
                    .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
                let nov = novelty(&self.archive, &list[idx].solution.bd, self.cfg.novelty_k);
                let record = self.candidate_record(&list[idx], Some(self.cfg.constraint), 0, eps_pred, nov);
                self.counters.fallback_selections += 1;
                let c = self.candidates.remove(idx).expect("index in range");
                return Ok(Choice {
                    genotype: c.solution.genotype,
                    mode: Mode::Normal,
                    record: Some(record),
                });
            }
            self.candidates.clear();
        }
    }

    fn vanilla_choice(&mut self) -> Result<Choice> {
        let p1 = self.archive.sample(&mut self.rng.qd).ok_or(Error::EmptyArchive)?.solution.genotype.clone();
        let p2 = self.archive.sample(&mut self.rng.qd).ok_or(Error::EmptyArchive)?.solution.genotype.clone();
        let im = &self.cfg.imagination;
        let g = iso_dd(&p1, &p2, im.sigma_iso, im.sigma_line, &mut self.rng.qd);
        Ok(Choice {
            genotype: g,
            mode: Mode::Normal,
            record: None,
        })
    }

    fn run(mut self) -> Result<RunReport> {
        self.initialise()?;
        while (self.counters.real_evaluations as usize) < self.cfg.max_evaluations {
            if self.archive.is_empty() {
                // every initial evaluation was voided; keep sampling at random
                let g = Genotype::random(self.cfg.dims, &mut self.rng.qd);
                self.step_with(Choice {
                    genotype: g,
                    mode: Mode::Normal,
                    record: None,
                })?;
                continue;
            }
            let choice = match self.cfg.variant {
                Variant::VanillaQd => self.vanilla_choice()?,
                Variant::Daqd => self.daqd_choice()?,
                Variant::Rfqd => self.rfqd_choice()?,
            };
            self.step_with(choice)?;
        }
        Ok(RunReport {
            archive: self.archive,
            counters: self.counters,
            metrics: self.metrics,
            selections: self.selections,
            trajectory: self.trajectory,
            buffer: self.buffer,
            model: self.model,
            final_candidates: self.candidates.into(),
            config: self.cfg,
        })
    }
}

/// Runs one configured experiment to completion.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    Runner::new(config.clone())?.run()
}

/// Executes `n` uniform random genotypes from `start` without resets and
/// returns the resulting archive and replay buffer.
pub fn random_archive_initialization<R: Rng + ?Sized>(
    sim: &Simulator,
    start: RobotState,
    n: usize,
    grid: GridSpec,
    dims: usize,
    rng: &mut R,
) -> Result<(Archive, ReplayBuffer, RobotState)> {
    let mut archive = Archive::new(grid, dims);
    let mut buffer = ReplayBuffer::new();
    let mut pose = start;
    for _ in 0..n {
        let g = Genotype::random(dims, rng);
        let ep = sim.execute_behaviour(pose, &g, rng)?;
        buffer.push_episode(&ep);
        pose = ep.end();
        archive.try_add(Solution::real(g, ep.bd, ep.fitness));
    }
    Ok((archive, buffer, pose))
}
