//! Planar surrogate robot, sinusoidal controller decoding and the safety
//! geometry it walks in.

mod region;

pub use region::{make_room, Feature, Obstacle, RegionKind, SafetyRegion, OBSTACLE_RADIUS};

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qd::{Descriptor, Genotype};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let a = theta.rem_euclid(TAU);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    /// Applies a displacement expressed in this pose's body frame.
    pub fn compose(&self, ego: [f64; 3]) -> RobotState {
        let (s, c) = self.theta.sin_cos();
        RobotState::new(
            self.x + c * ego[0] - s * ego[1],
            self.y + s * ego[0] + c * ego[1],
            self.theta + ego[2],
        )
    }

    /// Displacement from `self` to `other` in `self`'s body frame.
    pub fn ego_delta(&self, other: &RobotState) -> [f64; 3] {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (other.x - self.x, other.y - self.y);
        [c * dx + s * dy, -s * dx + c * dy, wrap_angle(other.theta - self.theta)]
    }
}

/// Physical constants of the surrogate robot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    pub v_max: f64,
    pub l_max: f64,
    pub omega_max: f64,
    pub dt: f64,
    pub sigma_pos: f64,
    pub sigma_theta: f64,
    /// Upper bound of decoded amplitudes.
    pub a_max: f64,
    pub coupling: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            v_max: 0.4,
            l_max: 0.2,
            omega_max: 1.5,
            dt: 0.05,
            sigma_pos: 0.002,
            sigma_theta: 0.005,
            a_max: 8.0,
            coupling: 0.3,
        }
    }
}

/// Sinusoidal open-loop controller for the forward, lateral and turning
/// channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub amplitudes: [f64; 3],
    /// Cycles per episode.
    pub frequencies: [f64; 3],
    pub phases: [f64; 3],
}

pub const MIN_FREQUENCY: f64 = 0.5;
pub const MAX_FREQUENCY: f64 = 2.0;

impl Controller {
    /// Affine decoding: genes 0..3 are amplitudes, 3..6 frequencies, and the
    /// remaining genes phases. With eight genes the lateral channel keeps
    /// phase zero and genes 6, 7 set the forward and turning phases.
    pub fn decode(g: &Genotype, a_max: f64) -> Result<Self> {
        let p = g.as_slice();
        if p.len() != 8 && p.len() != 9 {
            return Err(Error::Dimension {
                expected: 8,
                got: p.len(),
            });
        }
        let phase = |v: f64| (TAU * v).rem_euclid(TAU);
        let phases = if p.len() == 9 {
            [phase(p[6]), phase(p[7]), phase(p[8])]
        } else {
            [phase(p[6]), 0.0, phase(p[7])]
        };
        let freq = |v: f64| MIN_FREQUENCY + (MAX_FREQUENCY - MIN_FREQUENCY) * v;
        Ok(Self {
            amplitudes: [a_max * p[0], a_max * p[1], a_max * p[2]],
            frequencies: [freq(p[3]), freq(p[4]), freq(p[5])],
            phases,
        })
    }

    pub fn action(&self, t: usize, steps: usize) -> [f64; 3] {
        let tau = t as f64 / steps as f64;
        std::array::from_fn(|i| {
            self.amplitudes[i] * (TAU * self.frequencies[i] * tau + self.phases[i]).sin()
        })
    }

    pub fn actions(&self, steps: usize) -> Vec<[f64; 3]> {
        (0..steps).map(|t| self.action(t, steps)).collect()
    }
}

/// Negative normalised control effort, in `[-1, 0]`.
pub fn effort_fitness(actions: &[[f64; 3]], a_max: f64) -> f64 {
    if actions.is_empty() {
        return 0.0;
    }
    let total: f64 = actions
        .iter()
        .map(|a| a.iter().map(|v| v * v).sum::<f64>())
        .sum();
    -(total / actions.len() as f64) / (3.0 * a_max * a_max)
}

/// Lowest value `effort_fitness` can take.
pub const FITNESS_FLOOR: f64 = -1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    /// World-frame states, `steps + 1` of them.
    pub states: Vec<RobotState>,
    pub actions: Vec<[f64; 3]>,
    pub bd: Descriptor,
    pub fitness: f64,
    /// Some state reached the unsafe set (distance to it at most zero).
    pub collided: bool,
    /// Some state touched an obstacle column.
    pub obstacle_contact: bool,
    pub steps_outside_safety: usize,
}

impl EpisodeResult {
    pub fn start(&self) -> RobotState {
        self.states[0]
    }

    pub fn end(&self) -> RobotState {
        *self.states.last().expect("episode has states")
    }
}

/// Descriptor of the displacement between two poses, in the start pose's
/// frame.
pub fn descriptor_between(start: &RobotState, end: &RobotState, bd_max: f64) -> Descriptor {
    let d = start.ego_delta(end);
    Descriptor::clamped(d[0], d[1], bd_max)
}

/// Ground-truth world: robot dynamics plus the region it moves in.
#[derive(Clone, Debug)]
pub struct Simulator {
    pub params: RobotParams,
    pub region: SafetyRegion,
    pub steps: usize,
    pub noise: bool,
    pub bd_max: f64,
}

impl Simulator {
    pub fn new(params: RobotParams, region: SafetyRegion, steps: usize, noise: bool, bd_max: f64) -> Self {
        Self {
            params,
            region,
            steps: steps.max(1),
            noise,
            bd_max,
        }
    }

    /// Noise-free ego-frame displacement produced by one action.
    pub fn ego_step(params: &RobotParams, a: [f64; 3]) -> [f64; 3] {
        let v = params.v_max * (a[0] + params.coupling * a[1] * a[2]).tanh();
        let l = params.l_max * a[1].tanh();
        let w = params.omega_max * a[2].tanh();
        [params.dt * v, params.dt * l, params.dt * w]
    }

    pub fn true_step<R: Rng + ?Sized>(&self, s: &RobotState, a: [f64; 3], rng: &mut R) -> RobotState {
        let d = Self::ego_step(&self.params, a);
        let (sin, cos) = s.theta.sin_cos();
        let mut x = s.x + d[0] * cos - d[1] * sin;
        let mut y = s.y + d[0] * sin + d[1] * cos;
        let mut theta = s.theta + d[2];
        if self.noise {
            let pos = Normal::new(0.0, self.params.sigma_pos).expect("finite sigma");
            let rot = Normal::new(0.0, self.params.sigma_theta).expect("finite sigma");
            x += pos.sample(rng);
            y += pos.sample(rng);
            theta += rot.sample(rng);
        }
        let (x, y) = self.region.project_free(x, y);
        RobotState::new(x, y, theta)
    }

    pub fn execute_behaviour<R: Rng + ?Sized>(
        &self,
        s0: RobotState,
        g: &Genotype,
        rng: &mut R,
    ) -> Result<EpisodeResult> {
        let controller = Controller::decode(g, self.params.a_max)?;
        let actions = controller.actions(self.steps);
        let mut states = Vec::with_capacity(self.steps + 1);
        states.push(s0);
        let mut s = s0;
        for a in &actions {
            s = self.true_step(&s, *a, rng);
            states.push(s);
        }
        let collided = states.iter().any(|s| self.region.distance(s.x, s.y) <= 0.0);
        let obstacle_contact = states.iter().any(|s| self.region.touches_obstacle(s.x, s.y));
        let steps_outside_safety = states
            .iter()
            .filter(|s| self.region.epsilon(s.x, s.y) <= 0.0)
            .count();
        Ok(EpisodeResult {
            bd: descriptor_between(&s0, &s, self.bd_max),
            fitness: effort_fitness(&actions, self.params.a_max),
            states,
            actions,
            collided,
            obstacle_contact,
            steps_outside_safety,
        })
    }
}
