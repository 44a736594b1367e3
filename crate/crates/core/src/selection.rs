//! Behaviour selection: hard safety constraints, prioritisation of the
//! surviving candidates, and the greedy recovery policy.

use serde::{Deserialize, Serialize};

use crate::env::{RobotState, SafetyRegion};
use crate::error::{Error, Result};
use crate::imagination::Candidate;
use crate::qd::{novelty, Archive, Genotype};

/// Below this planar displacement a candidate has no direction to judge.
pub const MIN_MOVEMENT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SafetyConstraintKind {
    Minimal,
    Contextual,
    GradientMinimal,
    GradientContextual,
    SoftOnly,
}

impl SafetyConstraintKind {
    pub const ALL: [SafetyConstraintKind; 5] = [
        SafetyConstraintKind::Minimal,
        SafetyConstraintKind::Contextual,
        SafetyConstraintKind::GradientMinimal,
        SafetyConstraintKind::GradientContextual,
        SafetyConstraintKind::SoftOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SafetyConstraintKind::Minimal => "minimal",
            SafetyConstraintKind::Contextual => "contextual",
            SafetyConstraintKind::GradientMinimal => "gradient-minimal",
            SafetyConstraintKind::GradientContextual => "gradient-contextual",
            SafetyConstraintKind::SoftOnly => "soft-only",
        }
    }

    pub fn is_gradient(self) -> bool {
        matches!(
            self,
            SafetyConstraintKind::GradientMinimal | SafetyConstraintKind::GradientContextual
        )
    }
}

/// `eps * (1 - eps)` with `eps` clamped to `[0, 1]` first.
pub fn contextual_threshold(eps: f64) -> f64 {
    let e = eps.clamp(0.0, 1.0);
    e * (1.0 - e)
}

/// Whether a move from `s` to `s_next` satisfies `kind`. Gradient kinds fall
/// back to the minimal test where the safety gradient vanishes.
pub fn passes(kind: SafetyConstraintKind, s: &RobotState, s_next: &RobotState, region: &SafetyRegion) -> bool {
    let eps = region.epsilon(s.x, s.y);
    let eps_next = region.epsilon(s_next.x, s_next.y);
    match kind {
        SafetyConstraintKind::SoftOnly => true,
        SafetyConstraintKind::Minimal => eps_next > 0.0,
        SafetyConstraintKind::Contextual => eps_next > contextual_threshold(eps),
        SafetyConstraintKind::GradientMinimal | SafetyConstraintKind::GradientContextual => {
            let g = region.epsilon_gradient(s.x, s.y);
            let gn = g[0].hypot(g[1]);
            if gn == 0.0 {
                return eps_next > 0.0;
            }
            let (ux, uy) = (s_next.x - s.x, s_next.y - s.y);
            let un = ux.hypot(uy);
            if un < MIN_MOVEMENT {
                return true;
            }
            let dot = (ux * g[0] + uy * g[1]) / (un * gn);
            let bound = if kind == SafetyConstraintKind::GradientMinimal {
                0.0
            } else {
                contextual_threshold(eps)
            };
            dot >= bound
        }
    }
}

/// Indices of the candidates whose predicted end state from `s` passes.
pub fn apply_safety_constraint(
    candidates: &[Candidate],
    s: &RobotState,
    region: &SafetyRegion,
    kind: SafetyConstraintKind,
) -> Vec<usize> {
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| passes(kind, s, &c.imagined.end_state(s), region))
        .map(|(i, _)| i)
        .collect()
}

/// Weights of the prioritisation measures. A negative disagreement weight
/// favours low disagreement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priorities {
    pub safety: f64,
    pub disagreement: f64,
    pub novelty: f64,
}

impl Default for Priorities {
    fn default() -> Self {
        Self::NOVELTY
    }
}

impl Priorities {
    pub const SAFETY: Priorities = Priorities {
        safety: 1.0,
        disagreement: 0.0,
        novelty: 0.0,
    };
    pub const HIGH_DISAGREEMENT: Priorities = Priorities {
        safety: 0.0,
        disagreement: 1.0,
        novelty: 0.0,
    };
    pub const LOW_DISAGREEMENT: Priorities = Priorities {
        safety: 0.0,
        disagreement: -1.0,
        novelty: 0.0,
    };
    pub const NOVELTY: Priorities = Priorities {
        safety: 0.0,
        disagreement: 0.0,
        novelty: 1.0,
    };
    pub const SAFE_AND_CERTAIN: Priorities = Priorities {
        safety: 0.5,
        disagreement: -0.5,
        novelty: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let w = [self.safety, self.disagreement, self.novelty];
        if w.iter().any(|v| !v.is_finite()) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::Config("prioritisation needs a nonzero finite weight".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredCandidate {
    /// Position in the candidate list passed to the scorer.
    pub index: usize,
    pub end_state: RobotState,
    pub eps_next: f64,
    pub disagreement: f64,
    pub novelty: f64,
    pub score: f64,
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > 0.0 {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; values.len()]
    }
}

/// Scores `candidates[safe]` from the current pose, best first. Equal scores
/// keep their order in `safe`.
pub fn prioritize_candidates(
    candidates: &[Candidate],
    safe: &[usize],
    s: &RobotState,
    weights: &Priorities,
    archive: &Archive,
    region: &SafetyRegion,
    novelty_k: usize,
) -> Result<Vec<ScoredCandidate>> {
    if safe.is_empty() {
        return Err(Error::Config("no safe candidate to prioritise".into()));
    }
    let mut scored: Vec<ScoredCandidate> = safe
        .iter()
        .map(|&i| {
            let c = &candidates[i];
            let end_state = c.imagined.end_state(s);
            ScoredCandidate {
                index: i,
                end_state,
                eps_next: region.epsilon(end_state.x, end_state.y),
                disagreement: c.solution.disagreement,
                novelty: if weights.novelty != 0.0 {
                    novelty(archive, &c.solution.bd, novelty_k)
                } else {
                    0.0
                },
                score: 0.0,
            }
        })
        .collect();
    let eps = min_max(&scored.iter().map(|c| c.eps_next).collect::<Vec<_>>());
    let dis = min_max(&scored.iter().map(|c| c.disagreement).collect::<Vec<_>>());
    let nov = min_max(&scored.iter().map(|c| c.novelty).collect::<Vec<_>>());
    for (k, c) in scored.iter_mut().enumerate() {
        let d = if weights.disagreement >= 0.0 {
            weights.disagreement * dis[k]
        } else {
            -weights.disagreement * (1.0 - dis[k])
        };
        c.score = weights.safety * eps[k] + d + weights.novelty * nov[k];
    }
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(scored)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recovery {
    pub genotype: Genotype,
    pub cell: (usize, usize),
    pub projected: RobotState,
    pub eps_next: f64,
}

/// Greedy choice of the archived behaviour whose measured displacement,
/// replayed from `s`, ends at the safest point.
pub fn recovery_policy(archive: &Archive, s: &RobotState, region: &SafetyRegion) -> Result<Recovery> {
    let mut best: Option<(f64, f64, u64, Recovery)> = None;
    for (cell, e) in archive.iter() {
        let bd = e.solution.bd;
        let projected = s.compose([bd.x, bd.y, 0.0]);
        let eps = region.epsilon(projected.x, projected.y);
        let key = (eps, e.solution.fitness, e.inserted_at);
        let better = match &best {
            None => true,
            Some((be, bf, bi, _)) => {
                key.0 > *be || (key.0 == *be && (key.1 > *bf || (key.1 == *bf && key.2 < *bi)))
            }
        };
        if better {
            best = Some((
                key.0,
                key.1,
                key.2,
                Recovery {
                    genotype: e.solution.genotype.clone(),
                    cell,
                    projected,
                    eps_next: eps,
                },
            ));
        }
    }
    best.map(|b| b.3).ok_or(Error::EmptyArchive)
}
