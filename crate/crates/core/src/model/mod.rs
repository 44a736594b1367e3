//! Ensemble of probabilistic forward models over ego-frame state deltas,
//! trained online from the replay buffer and rolled out in imagination.

mod buffer;
mod mlp;

pub use buffer::{episode_transitions, ReplayBuffer, Transition, CSV_HEADER as BUFFER_CSV_HEADER};
pub use mlp::{Adam, Dense, Mlp, LOGVAR_MAX, LOGVAR_MIN};

use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{effort_fitness, Controller, RobotParams, RobotState};
use crate::error::{Error, Result};
use crate::qd::{fnv1a, Descriptor, Genotype};

pub const INPUT_DIM: usize = 6;
pub const OUTPUT_DIM: usize = 3;

/// Anything that predicts the mean ego-frame delta of several ensemble
/// members. Implemented by the learnt ensemble and by test oracles.
pub trait ForwardModel {
    fn num_members(&self) -> usize;

    /// For each member, an `n x 3` matrix of mean deltas for the `n x 6`
    /// input rows `(ego_delta_in, action)`.
    fn member_means(&self, inputs: &Array2<f64>) -> Vec<Array2<f64>>;
}

/// Mean L2 distance over all ordered pairs of distinct members.
pub fn pairwise_disagreement(means: &[[f64; 3]]) -> f64 {
    let m = means.len();
    if m < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let d: f64 = (0..3).map(|k| (means[i][k] - means[j][k]).powi(2)).sum();
            total += d.sqrt();
        }
    }
    // each unordered pair stands for two ordered ones
    2.0 * total / (m * (m - 1)) as f64
}

/// Disagreement of the ensemble at a single `(ego_delta_in, action)` pair.
pub fn disagreement_step<M: ForwardModel + ?Sized>(model: &M, ego_delta_in: [f64; 3], action: [f64; 3]) -> Result<f64> {
    let m = model.num_members();
    if m < 2 {
        return Err(Error::TooFewMembers(m));
    }
    let x = Array2::from_shape_vec(
        (1, INPUT_DIM),
        ego_delta_in.iter().chain(&action).copied().collect(),
    )
    .expect("shape");
    let means: Vec<[f64; 3]> = model
        .member_means(&x)
        .iter()
        .map(|p| [p[[0, 0]], p[[0, 1]], p[[0, 2]]])
        .collect();
    Ok(pairwise_disagreement(&means))
}

/// What an imagined rollout predicts about one genotype, relative to its
/// start pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImaginedEpisode {
    pub predicted_bd: Descriptor,
    pub predicted_fitness: f64,
    pub disagreement: f64,
    /// Predicted displacement `(dx, dy, dtheta)` in the start pose's frame.
    pub ego_displacement: [f64; 3],
}

impl ImaginedEpisode {
    /// Predicted world pose after the behaviour when started from `s`.
    pub fn end_state(&self, s: &RobotState) -> RobotState {
        s.compose(self.ego_displacement)
    }
}

/// Everything besides the model that an imagined rollout needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutSpec {
    pub params: RobotParams,
    pub steps: usize,
    pub bd_max: f64,
}

/// Rolls every genotype through the ensemble, propagating the mean of the
/// member means. Deterministic.
pub fn imagine_batch<M: ForwardModel + ?Sized>(
    model: &M,
    genotypes: &[Genotype],
    spec: &RolloutSpec,
) -> Result<Vec<ImaginedEpisode>> {
    let n = genotypes.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let actions: Vec<Vec<[f64; 3]>> = genotypes
        .iter()
        .map(|g| Controller::decode(g, spec.params.a_max).map(|c| c.actions(spec.steps)))
        .collect::<Result<_>>()?;
    let members = model.num_members();
    let mut prev = vec![[0.0f64; 3]; n];
    let mut pose = vec![RobotState::default(); n];
    let mut disagreement = vec![0.0f64; n];
    let mut means = vec![[0.0f64; 3]; members];
    #[allow(clippy::needless_range_loop)]
    for t in 0..spec.steps {
        let x = Array2::from_shape_fn((n, INPUT_DIM), |(i, k)| {
            if k < 3 {
                prev[i][k]
            } else {
                actions[i][t][k - 3]
            }
        });
        let preds = model.member_means(&x);
        for i in 0..n {
            for (m, p) in preds.iter().enumerate() {
                means[m] = [p[[i, 0]], p[[i, 1]], p[[i, 2]]];
            }
            disagreement[i] += pairwise_disagreement(&means);
            let avg: [f64; 3] =
                std::array::from_fn(|k| means.iter().map(|v| v[k]).sum::<f64>() / members as f64);
            pose[i] = pose[i].compose(avg);
            prev[i] = avg;
        }
    }
    let start = RobotState::default();
    Ok((0..n)
        .map(|i| {
            let ego = start.ego_delta(&pose[i]);
            ImaginedEpisode {
                predicted_bd: Descriptor::clamped(ego[0], ego[1], spec.bd_max),
                predicted_fitness: effort_fitness(&actions[i], spec.params.a_max),
                disagreement: disagreement[i] / spec.steps as f64,
                ego_displacement: [pose[i].x, pose[i].y, pose[i].theta],
            }
        })
        .collect())
}

pub fn imagine_episode<M: ForwardModel + ?Sized>(model: &M, g: &Genotype, spec: &RolloutSpec) -> Result<ImaginedEpisode> {
    Ok(imagine_batch(model, std::slice::from_ref(g), spec)?.remove(0))
}

/// Predicted world pose after executing `g` from `s`.
pub fn predict_world_end_state<M: ForwardModel + ?Sized>(
    model: &M,
    g: &Genotype,
    s: &RobotState,
    spec: &RolloutSpec,
) -> Result<RobotState> {
    Ok(imagine_episode(model, g, spec)?.end_state(s))
}

/// Noise-free true dynamics, repeated `members` times. Useful as a perfect
/// model in tests and diagnostics.
#[derive(Clone, Debug)]
pub struct OracleModel {
    pub params: RobotParams,
    pub members: usize,
}

impl ForwardModel for OracleModel {
    fn num_members(&self) -> usize {
        self.members
    }

    fn member_means(&self, inputs: &Array2<f64>) -> Vec<Array2<f64>> {
        let out = Array2::from_shape_fn((inputs.nrows(), OUTPUT_DIM), |(i, k)| {
            let a = [inputs[[i, 3]], inputs[[i, 4]], inputs[[i, 5]]];
            crate::env::Simulator::ego_step(&self.params, a)[k]
        });
        vec![out; self.members]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub members: usize,
    pub hidden: usize,
    pub learning_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            members: 4,
            hidden: 64,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Bootstrap sample size per member; the whole training split when
    /// `None`.
    pub max_samples: Option<usize>,
    /// Held-out rows used to report the NLL.
    pub max_holdout: usize,
    /// Record the held-out NLL after every epoch.
    pub track_epochs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 64,
            max_samples: Some(1024),
            max_holdout: 512,
            track_epochs: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    /// Final held-out NLL per member.
    pub holdout_nll: Vec<f64>,
    /// Held-out NLL per member after each epoch, when tracked.
    pub epoch_nll: Vec<Vec<f64>>,
    pub train_rows: usize,
    pub holdout_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub in_mean: [f64; INPUT_DIM],
    pub in_std: [f64; INPUT_DIM],
    pub out_mean: [f64; OUTPUT_DIM],
    pub out_std: [f64; OUTPUT_DIM],
}

const STD_FLOOR: f64 = 1e-6;

impl Default for Normalizer {
    fn default() -> Self {
        Self {
            in_mean: [0.0; INPUT_DIM],
            in_std: [1.0; INPUT_DIM],
            out_mean: [0.0; OUTPUT_DIM],
            out_std: [1.0; OUTPUT_DIM],
        }
    }
}

impl Normalizer {
    fn fit(samples: &[Transition]) -> Self {
        fn stats<const N: usize>(rows: impl Iterator<Item = [f64; N]> + Clone, n: f64) -> ([f64; N], [f64; N]) {
            let mut mean = [0.0; N];
            for r in rows.clone() {
                for k in 0..N {
                    mean[k] += r[k] / n;
                }
            }
            let mut var = [0.0; N];
            for r in rows {
                for k in 0..N {
                    var[k] += (r[k] - mean[k]).powi(2) / n;
                }
            }
            (mean, var.map(|v| v.sqrt().max(STD_FLOOR)))
        }
        let n = samples.len() as f64;
        let (in_mean, in_std) = stats(samples.iter().map(Transition::input), n);
        let (out_mean, out_std) = stats(samples.iter().map(|t| t.ego_delta_out), n);
        Self {
            in_mean,
            in_std,
            out_mean,
            out_std,
        }
    }

    fn inputs(&self, raw: &Array2<f64>) -> Array2<f64> {
        let mut x = raw.clone();
        for mut row in x.rows_mut() {
            for k in 0..INPUT_DIM {
                row[k] = (row[k] - self.in_mean[k]) / self.in_std[k];
            }
        }
        x
    }

    fn target(&self, t: &Transition, k: usize) -> f64 {
        (t.ego_delta_out[k] - self.out_mean[k]) / self.out_std[k]
    }
}

#[derive(Clone, Debug)]
struct Member {
    net: Mlp,
    adam: Adam,
}

#[derive(Clone, Debug)]
pub struct EnsembleModel {
    config: ModelConfig,
    norm: Normalizer,
    members: Vec<Member>,
}

impl EnsembleModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Self {
        let members = (0..config.members)
            .map(|_| {
                let net = Mlp::new(INPUT_DIM, config.hidden, OUTPUT_DIM, rng);
                let adam = Adam::new(&net, config.learning_rate);
                Member { net, adam }
            })
            .collect();
        Self {
            config,
            norm: Normalizer::default(),
            members,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.norm
    }

    pub fn member_net(&self, i: usize) -> &Mlp {
        &self.members[i].net
    }

    /// Trains each member on its own bootstrap resample of the buffer's
    /// training split with the Gaussian NLL, warm-starting from the current
    /// parameters.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<TrainReport> {
        let samples = buffer.samples();
        if samples.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        self.norm = Normalizer::fit(samples);
        let norm = &self.norm;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(rng);
        let (holdout, train) = if samples.len() >= 2 {
            let h = (samples.len() / 10).max(1);
            order.split_at(h)
        } else {
            (&order[..], &order[..])
        };
        let holdout = &holdout[..holdout.len().min(cfg.max_holdout.max(1))];

        let gather = |idx: &[usize]| -> (Array2<f64>, Array2<f64>) {
            let raw = Array2::from_shape_fn((idx.len(), INPUT_DIM), |(i, k)| samples[idx[i]].input()[k]);
            let y = Array2::from_shape_fn((idx.len(), OUTPUT_DIM), |(i, k)| norm.target(&samples[idx[i]], k));
            (norm.inputs(&raw), y)
        };
        let (hx, hy) = gather(holdout);
        let batch = cfg.batch_size.max(1);
        let draw = cfg.max_samples.map_or(train.len(), |m| m.min(train.len()));

        let mut epoch_nll = Vec::with_capacity(self.members.len());
        for member in &mut self.members {
            let mut boot: Vec<usize> = (0..draw).map(|_| train[rng.random_range(0..train.len())]).collect();
            let mut trace = Vec::new();
            for _ in 0..cfg.epochs {
                boot.shuffle(rng);
                for chunk in boot.chunks(batch) {
                    let (x, y) = gather(chunk);
                    let (_, grad) = member.net.nll_grad(&x.view(), &y.view());
                    member.adam.apply(&mut member.net, &grad);
                }
                if !member.net.all_finite() {
                    return Err(Error::NonFinite);
                }
                if cfg.track_epochs {
                    trace.push(member.net.nll(&hx.view(), &hy.view()));
                }
            }
            epoch_nll.push(trace);
        }
        let holdout_nll = self
            .members
            .iter()
            .map(|m| m.net.nll(&hx.view(), &hy.view()))
            .collect();
        Ok(TrainReport {
            holdout_nll,
            epoch_nll,
            train_rows: draw,
            holdout_rows: holdout.len(),
        })
    }

    /// Hash of every parameter's bit pattern and the normaliser.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        for m in &self.members {
            for p in m.net.params() {
                bytes.extend_from_slice(&p.to_bits().to_le_bytes());
            }
        }
        for v in self
            .norm
            .in_mean
            .iter()
            .chain(&self.norm.in_std)
            .chain(&self.norm.out_mean)
            .chain(&self.norm.out_std)
        {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        fnv1a(&bytes)
    }

    /// Text checkpoint: architecture header, normaliser, then one line of
    /// flat parameters per member.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# rfqd-ensemble members={} input={} hidden={} output={}\n",
            self.members.len(),
            INPUT_DIM,
            self.config.hidden,
            OUTPUT_DIM
        );
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "in_mean {}", join(&self.norm.in_mean));
        let _ = writeln!(out, "in_std {}", join(&self.norm.in_std));
        let _ = writeln!(out, "out_mean {}", join(&self.norm.out_mean));
        let _ = writeln!(out, "out_std {}", join(&self.norm.out_std));
        for (i, m) in self.members.iter().enumerate() {
            let params: Vec<f64> = m.net.params().collect();
            let _ = writeln!(out, "member{i} {}", join(&params));
        }
        out
    }

    pub fn from_text(text: &str, learning_rate: f64) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err(1, "missing header"))?;
        let field = |key: &str| -> Result<usize> {
            header
                .split_whitespace()
                .find_map(|t| t.strip_prefix(key))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err(1, key))
        };
        let (members, input, hidden, output) = (
            field("members=")?,
            field("input=")?,
            field("hidden=")?,
            field("output=")?,
        );
        if input != INPUT_DIM || output != OUTPUT_DIM {
            return Err(err(1, "unsupported input/output width"));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut toks = line.split_whitespace();
            let _name = toks.next().ok_or_else(|| err(i + 2, "empty line"))?;
            let vals = toks
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| err(i + 2, &e.to_string()))?;
            rows.push(vals);
        }
        if rows.len() != 4 + members {
            return Err(err(rows.len() + 1, "wrong number of lines"));
        }
        let to6 = |l: usize| <[f64; INPUT_DIM]>::try_from(rows[l].as_slice()).map_err(|_| err(l + 2, "expected 6 values"));
        let to3 = |l: usize| <[f64; OUTPUT_DIM]>::try_from(rows[l].as_slice()).map_err(|_| err(l + 2, "expected 3 values"));
        let norm = Normalizer {
            in_mean: to6(0)?,
            in_std: to6(1)?,
            out_mean: to3(2)?,
            out_std: to3(3)?,
        };
        let config = ModelConfig {
            members,
            hidden,
            learning_rate,
        };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = EnsembleModel::new(config, &mut rng);
        model.norm = norm;
        for (i, m) in model.members.iter_mut().enumerate() {
            let vals = &rows[4 + i];
            if vals.len() != m.net.num_params() {
                return Err(err(6 + i, "parameter count mismatch"));
            }
            for (p, v) in m.net.params_mut().zip(vals) {
                *p = *v;
            }
        }
        Ok(model)
    }
}

impl ForwardModel for EnsembleModel {
    fn num_members(&self) -> usize {
        self.members.len()
    }

    fn member_means(&self, inputs: &Array2<f64>) -> Vec<Array2<f64>> {
        let x = self.norm.inputs(inputs);
        self.members
            .iter()
            .map(|m| {
                let mut p = m.net.predict_mean(&x.view());
                for mut row in p.axis_iter_mut(Axis(0)) {
                    for k in 0..OUTPUT_DIM {
                        row[k] = row[k] * self.norm.out_std[k] + self.norm.out_mean[k];
                    }
                }
                p
            })
            .collect()
    }
}
