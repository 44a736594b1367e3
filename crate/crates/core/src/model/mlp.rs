//! Two-hidden-layer softsign network with a Gaussian head, its NLL gradient and
//! an Adam optimiser.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 2.0;

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `x / (1 + |x|)`: saturating like tanh at a fraction of the cost.
fn softsign(x: f64) -> f64 {
    x / (1.0 + x.abs())
}

/// Derivative of softsign expressed through its output.
fn softsign_grad(h: f64) -> f64 {
    let c = 1.0 - h.abs();
    c * c
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Smoothly squashes a raw log-variance into `(LOGVAR_MIN, LOGVAR_MAX)`.
/// Returns the value and its derivative.
fn bound_logvar(raw: f64) -> (f64, f64) {
    let upper = LOGVAR_MAX - softplus(LOGVAR_MAX - raw);
    let lv = LOGVAR_MIN + softplus(upper - LOGVAR_MIN);
    if !(LOGVAR_MIN..=LOGVAR_MAX).contains(&lv) {
        // the double softplus overshoots by ~1e-5 in the far tails
        return (lv.clamp(LOGVAR_MIN, LOGVAR_MAX), 0.0);
    }
    let d = sigmoid(LOGVAR_MAX - raw) * sigmoid(upper - LOGVAR_MIN);
    (lv, d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let lim = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((inputs, outputs), |_| rng.random_range(-lim..lim)),
            b: Array1::zeros(outputs),
        }
    }

    fn zeros_like(other: &Dense) -> Self {
        Self {
            w: Array2::zeros(other.w.raw_dim()),
            b: Array1::zeros(other.b.raw_dim()),
        }
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }
}

/// Probabilistic MLP mapping an input row to a mean and a bounded
/// log-variance per output dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: [Dense; 3],
    pub outputs: usize,
}

pub struct Forward {
    h1: Array2<f64>,
    h2: Array2<f64>,
    pub mean: Array2<f64>,
    pub logvar: Array2<f64>,
    dlogvar: Array2<f64>,
}

pub struct Gradient {
    pub layers: [Dense; 3],
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            layers: [
                Dense::new(inputs, hidden, rng),
                Dense::new(hidden, hidden, rng),
                Dense::new(hidden, 2 * outputs, rng),
            ],
            outputs,
        }
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Forward {
        let h1 = self.layers[0].apply(x).mapv_into(softsign);
        let h2 = self.layers[1].apply(&h1.view()).mapv_into(softsign);
        let z = self.layers[2].apply(&h2.view());
        let o = self.outputs;
        let mean = z.slice(ndarray::s![.., ..o]).to_owned();
        let raw = z.slice(ndarray::s![.., o..]);
        let mut logvar = Array2::zeros(raw.raw_dim());
        let mut dlogvar = Array2::zeros(raw.raw_dim());
        Zip::from(&mut logvar)
            .and(&mut dlogvar)
            .and(&raw)
            .for_each(|lv, d, &r| (*lv, *d) = bound_logvar(r));
        Forward {
            h1,
            h2,
            mean,
            logvar,
            dlogvar,
        }
    }

    /// Means only, for rollouts.
    pub fn predict_mean(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let h1 = self.layers[0].apply(x).mapv_into(softsign);
        let h2 = self.layers[1].apply(&h1.view()).mapv_into(softsign);
        let w = self.layers[2].w.slice(ndarray::s![.., ..self.outputs]);
        let b = self.layers[2].b.slice(ndarray::s![..self.outputs]);
        h2.dot(&w) + b
    }

    /// Mean Gaussian negative log-likelihood over the rows of `y`.
    pub fn nll(&self, x: &ArrayView2<f64>, y: &ArrayView2<f64>) -> f64 {
        let f = self.forward(x);
        nll_of(&f, y)
    }

    /// NLL and its gradient with respect to every parameter.
    pub fn nll_grad(&self, x: &ArrayView2<f64>, y: &ArrayView2<f64>) -> (f64, Gradient) {
        let f = self.forward(x);
        let loss = nll_of(&f, y);
        let n = x.nrows() as f64;
        let o = self.outputs;

        let mut dz = Array2::zeros((x.nrows(), 2 * o));
        for i in 0..x.nrows() {
            for d in 0..o {
                let err = y[[i, d]] - f.mean[[i, d]];
                let inv_var = (-f.logvar[[i, d]]).exp();
                dz[[i, d]] = -err * inv_var / n;
                dz[[i, o + d]] = 0.5 * (1.0 - err * err * inv_var) * f.dlogvar[[i, d]] / n;
            }
        }
        let g3 = Dense {
            w: f.h2.t().dot(&dz),
            b: dz.sum_axis(Axis(0)),
        };
        let mut da2 = dz.dot(&self.layers[2].w.t());
        Zip::from(&mut da2).and(&f.h2).for_each(|g, &h| *g *= softsign_grad(h));
        let g2 = Dense {
            w: f.h1.t().dot(&da2),
            b: da2.sum_axis(Axis(0)),
        };
        let mut da1 = da2.dot(&self.layers[1].w.t());
        Zip::from(&mut da1).and(&f.h1).for_each(|g, &h| *g *= softsign_grad(h));
        let g1 = Dense {
            w: x.t().dot(&da1),
            b: da1.sum_axis(Axis(0)),
        };
        (loss, Gradient { layers: [g1, g2, g3] })
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params().all(f64::is_finite)
    }
}

fn nll_of(f: &Forward, y: &ArrayView2<f64>) -> f64 {
    let mut total = 0.0;
    Zip::from(&f.mean)
        .and(&f.logvar)
        .and(y)
        .for_each(|&m, &lv, &t| {
            let e = t - m;
            total += 0.5 * (e * e * (-lv).exp() + lv) + HALF_LN_TAU;
        });
    total / y.nrows() as f64
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: [Dense; 3],
    v: [Dense; 3],
}

impl Adam {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        let zeros = || std::array::from_fn(|i| Dense::zeros_like(&net.layers[i]));
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn apply(&mut self, net: &mut Mlp, grad: &Gradient) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = self.learning_rate;
        let eps = self.eps;
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for i in 0..3 {
            Zip::from(&mut net.layers[i].w)
                .and(&mut self.m[i].w)
                .and(&mut self.v[i].w)
                .and(&grad.layers[i].w)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut net.layers[i].b)
                .and(&mut self.m[i].b)
                .and(&mut self.v[i].b)
                .and(&grad.layers[i].b)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}
