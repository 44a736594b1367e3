use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::env::EpisodeResult;
use crate::error::{Error, Result};

/// One ego-frame transition: previous step's delta and the action in, this
/// step's delta out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub ego_delta_in: [f64; 3],
    pub action: [f64; 3],
    pub ego_delta_out: [f64; 3],
}

impl Transition {
    pub fn input(&self) -> [f64; 6] {
        let [a, b, c] = self.ego_delta_in;
        let [d, e, f] = self.action;
        [a, b, c, d, e, f]
    }
}

/// Transitions of one episode; the first input delta is zero.
pub fn episode_transitions(ep: &EpisodeResult) -> Vec<Transition> {
    let mut prev = [0.0; 3];
    ep.actions
        .iter()
        .zip(ep.states.windows(2))
        .map(|(a, w)| {
            let out = w[0].ego_delta(&w[1]);
            let t = Transition {
                ego_delta_in: prev,
                action: *a,
                ego_delta_out: out,
            };
            prev = out;
            t
        })
        .collect()
}

pub const CSV_HEADER: &str = "in_dx,in_dy,in_dtheta,a_v,a_l,a_w,out_dx,out_dy,out_dtheta";

/// Append-only store of real transitions.
#[derive(Clone, Debug, Default)]
pub struct ReplayBuffer {
    samples: Vec<Transition>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: Transition) {
        self.samples.push(t);
    }

    pub fn push_episode(&mut self, ep: &EpisodeResult) {
        self.samples.extend(episode_transitions(ep));
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Transition] {
        &self.samples
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 96);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for t in &self.samples {
            let row = t
                .ego_delta_in
                .iter()
                .chain(&t.action)
                .chain(&t.ego_delta_out)
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            let _ = writeln!(out, "{row}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut buf = ReplayBuffer::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let v = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            if v.len() != 9 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected 9 columns, got {}", v.len()),
                });
            }
            buf.push(Transition {
                ego_delta_in: [v[0], v[1], v[2]],
                action: [v[3], v[4], v[5]],
                ego_delta_out: [v[6], v[7], v[8]],
            });
        }
        Ok(buf)
    }
}
