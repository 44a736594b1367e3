//! QD in imagination: a copy of the real archive is grown with model-evaluated
//! offspring, and whatever it gains over the real archive becomes the
//! candidate buffer.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{imagine_batch, ForwardModel, ImaginedEpisode, RolloutSpec};
use crate::qd::{iso_dd, novelty, Archive, Genotype, Origin, Solution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmitterKind {
    IsoDd,
    MaxDisagreement,
    MinDisagreement,
    RandomDirection,
}

impl EmitterKind {
    pub const ALL: [EmitterKind; 4] = [
        EmitterKind::IsoDd,
        EmitterKind::MaxDisagreement,
        EmitterKind::MinDisagreement,
        EmitterKind::RandomDirection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmitterKind::IsoDd => "iso-dd",
            EmitterKind::MaxDisagreement => "max-disagreement",
            EmitterKind::MinDisagreement => "min-disagreement",
            EmitterKind::RandomDirection => "random-direction",
        }
    }

    fn objective(self) -> Option<Objective> {
        match self {
            EmitterKind::IsoDd => None,
            EmitterKind::MaxDisagreement => Some(Objective::MaxDisagreement),
            EmitterKind::MinDisagreement => Some(Objective::MinDisagreement),
            EmitterKind::RandomDirection => Some(Objective::RandomDirection),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    MaxDisagreement,
    MinDisagreement,
    RandomDirection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsConfig {
    pub lambda: usize,
    pub mu: usize,
    pub initial_sigma: f64,
    /// Step-size multiplier applied on failure; its inverse on success.
    pub shrink: f64,
    pub min_sigma: f64,
    pub max_sigma: f64,
    pub max_iterations: usize,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            lambda: 16,
            mu: 8,
            initial_sigma: 0.05,
            shrink: 0.82,
            min_sigma: 1e-3,
            max_sigma: 0.5,
            max_iterations: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImaginationConfig {
    /// Imagined evaluations per candidate-buffer refill.
    pub budget: usize,
    /// Offspring evaluated together in one imagined Iso-DD generation.
    pub batch_size: usize,
    pub sigma_iso: f64,
    pub sigma_line: f64,
    pub es: EsConfig,
}

impl Default for ImaginationConfig {
    fn default() -> Self {
        Self {
            budget: 2000,
            batch_size: 64,
            sigma_iso: 0.01,
            sigma_line: 0.2,
            es: EsConfig::default(),
        }
    }
}

/// An imagined solution waiting to be tried on the robot.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub solution: Solution,
    pub imagined: ImaginedEpisode,
    pub novelty_at_generation: f64,
}

/// Offspring of two parents drawn uniformly from `archive`.
pub fn emit_iso_dd<R: Rng + ?Sized>(archive: &Archive, cfg: &ImaginationConfig, rng: &mut R) -> Result<Genotype> {
    let p1 = archive.sample(rng).ok_or(Error::EmptyArchive)?;
    let p2 = archive.sample(rng).ok_or(Error::EmptyArchive)?;
    Ok(iso_dd(
        &p1.solution.genotype,
        &p2.solution.genotype,
        cfg.sigma_iso,
        cfg.sigma_line,
        rng,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Restart {
    StepSize,
    Iterations,
}

/// Isotropic `(mu, lambda)` evolution strategy with one-fifth success
/// step-size control, restarted from a random elite when it stalls.
#[derive(Clone, Debug)]
pub struct ObjectiveEmitter {
    objective: Objective,
    cfg: EsConfig,
    mean: Vec<f64>,
    sigma: f64,
    iteration: usize,
    direction: [f64; 2],
    reference: Option<f64>,
    restarts: Vec<Restart>,
}

impl ObjectiveEmitter {
    pub fn new<R: Rng + ?Sized>(archive: &Archive, objective: Objective, cfg: EsConfig, rng: &mut R) -> Result<Self> {
        let mut e = Self {
            objective,
            cfg,
            mean: Vec::new(),
            sigma: cfg.initial_sigma,
            iteration: 0,
            direction: [1.0, 0.0],
            reference: None,
            restarts: Vec::new(),
        };
        e.reinitialise(archive, rng)?;
        Ok(e)
    }

    fn reinitialise<R: Rng + ?Sized>(&mut self, archive: &Archive, rng: &mut R) -> Result<()> {
        let elite = archive.sample(rng).ok_or(Error::EmptyArchive)?;
        self.mean = elite.solution.genotype.as_slice().to_vec();
        self.sigma = self.cfg.initial_sigma;
        self.iteration = 0;
        self.reference = None;
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        self.direction = [angle.cos(), angle.sin()];
        Ok(())
    }

    /// Fixes the projection direction of a random-direction objective.
    pub fn set_direction(&mut self, direction: [f64; 2]) {
        let n = direction[0].hypot(direction[1]);
        self.direction = [direction[0] / n, direction[1] / n];
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn restarts(&self) -> &[Restart] {
        &self.restarts
    }

    pub fn score(&self, ep: &ImaginedEpisode) -> f64 {
        match self.objective {
            Objective::MaxDisagreement => ep.disagreement,
            Objective::MinDisagreement => -ep.disagreement,
            Objective::RandomDirection => {
                ep.predicted_bd.x * self.direction[0] + ep.predicted_bd.y * self.direction[1]
            }
        }
    }

    pub fn ask<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Genotype> {
        (0..count)
            .map(|_| {
                Genotype::clamped(
                    self.mean
                        .iter()
                        .map(|m| m + self.sigma * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                )
            })
            .collect()
    }

    /// Recombines the best `mu` samples into the new mean and adapts the
    /// step size. Returns the restart reason when one was triggered.
    pub fn tell<R: Rng + ?Sized>(
        &mut self,
        samples: &[Genotype],
        episodes: &[ImaginedEpisode],
        archive: &Archive,
        rng: &mut R,
    ) -> Result<Option<Restart>> {
        let scores: Vec<f64> = episodes.iter().map(|e| self.score(e)).collect();
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mu = self.cfg.mu.min(order.len()).max(1);
        let dims = self.mean.len();
        let mut mean = vec![0.0; dims];
        for &i in &order[..mu] {
            for (m, g) in mean.iter_mut().zip(samples[i].as_slice()) {
                *m += g / mu as f64;
            }
        }
        self.mean = mean;

        let best = scores[order[0]];
        if let Some(reference) = self.reference {
            let successes = scores.iter().filter(|s| **s > reference).count();
            let rate = successes as f64 / scores.len() as f64;
            if rate > 0.2 {
                self.sigma = (self.sigma / self.cfg.shrink).min(self.cfg.max_sigma);
            } else if rate < 0.2 {
                self.sigma *= self.cfg.shrink;
            }
        }
        self.reference = Some(best);
        self.iteration += 1;

        let reason = if self.sigma < self.cfg.min_sigma {
            Some(Restart::StepSize)
        } else if self.iteration >= self.cfg.max_iterations {
            Some(Restart::Iterations)
        } else {
            None
        };
        if let Some(r) = reason {
            self.restarts.push(r);
            self.reinitialise(archive, rng)?;
        }
        Ok(reason)
    }
}

/// Output of one imagination phase.
#[derive(Clone, Debug)]
pub struct Imagination {
    pub candidates: Vec<Candidate>,
    pub imagined_archive: Archive,
    pub evaluations: usize,
}

/// Grows a copy of `archive` in imagination for `budget` model evaluations
/// and returns every solution it gained over `archive`, in insertion order.
pub fn generate_candidates<M, R>(
    archive: &Archive,
    model: &M,
    emitter: EmitterKind,
    cfg: &ImaginationConfig,
    spec: &RolloutSpec,
    novelty_k: usize,
    rng: &mut R,
) -> Result<Imagination>
where
    M: ForwardModel + ?Sized,
    R: Rng + ?Sized,
{
    if archive.is_empty() {
        return Err(Error::EmptyArchive);
    }
    let mut imagined = archive.clone();
    let mut spent = 0;
    let offer = |imagined: &mut Archive, g: Genotype, ep: &ImaginedEpisode| {
        imagined.try_add(Solution {
            genotype: g,
            bd: ep.predicted_bd,
            fitness: ep.predicted_fitness,
            origin: Origin::Imagined,
            disagreement: ep.disagreement,
        });
    };
    match emitter.objective() {
        None => {
            while spent < cfg.budget {
                let n = cfg.batch_size.max(1).min(cfg.budget - spent);
                let batch = (0..n)
                    .map(|_| emit_iso_dd(&imagined, cfg, rng))
                    .collect::<Result<Vec<_>>>()?;
                let eps = imagine_batch(model, &batch, spec)?;
                for (g, ep) in batch.into_iter().zip(&eps) {
                    offer(&mut imagined, g, ep);
                }
                spent += n;
            }
        }
        Some(objective) => {
            let mut es = ObjectiveEmitter::new(&imagined, objective, cfg.es, rng)?;
            while spent < cfg.budget {
                let n = cfg.es.lambda.max(1).min(cfg.budget - spent);
                let batch = es.ask(n, rng);
                let eps = imagine_batch(model, &batch, spec)?;
                for (g, ep) in batch.iter().zip(&eps) {
                    offer(&mut imagined, g.clone(), ep);
                }
                es.tell(&batch, &eps, &imagined, rng)?;
                spent += n;
            }
        }
    }
    // Ego displacement is not part of a stored solution, so re-run the
    // survivors once; rollouts are deterministic.
    let mut gained: Vec<(u64, Solution)> = imagined
        .iter()
        .filter(|(_, e)| e.solution.origin == Origin::Imagined)
        .map(|(_, e)| (e.inserted_at, e.solution.clone()))
        .collect();
    gained.sort_by_key(|(seq, _)| *seq);
    let genotypes: Vec<Genotype> = gained.iter().map(|(_, s)| s.genotype.clone()).collect();
    let episodes = imagine_batch(model, &genotypes, spec)?;
    let candidates = gained
        .into_iter()
        .zip(episodes)
        .map(|((_, solution), imagined)| Candidate {
            novelty_at_generation: novelty(archive, &solution.bd, novelty_k),
            solution,
            imagined,
        })
        .collect();
    Ok(Imagination {
        candidates,
        imagined_archive: imagined,
        evaluations: spent,
    })
}

pub const CANDIDATE_CSV_HEADER: &str = "genotype,bd_x,bd_y,fitness,mu_d,novelty";

/// Diagnostic dump of a candidate buffer. Genotype components are joined by
/// `;` inside the first column.
pub fn candidates_to_csv(candidates: &[Candidate]) -> String {
    let mut out = String::from(CANDIDATE_CSV_HEADER);
    out.push('\n');
    for c in candidates {
        let g = c
            .solution
            .genotype
            .as_slice()
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let s = &c.solution;
        let _ = writeln!(
            out,
            "{g},{},{},{},{},{}",
            s.bd.x, s.bd.y, s.fitness, s.disagreement, c.novelty_at_generation
        );
    }
    out
}
