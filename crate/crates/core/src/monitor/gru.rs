//! A small gated recurrent cell with a scalar readout, trained by full-batch
//! gradient descent through time.
//!
//! ```text
//! z_t = sigmoid(Wz x_t + Uz h_{t-1} + bz)
//! r_t = sigmoid(Wr x_t + Ur h_{t-1} + br)
//! c_t = tanh(Wc x_t + Uc (r_t * h_{t-1}) + bc)
//! h_t = (1 - z_t) * h_{t-1} + z_t * c_t
//! y   = w . h_T + b
//! ```
//!
//! Matrices serialize as nested arrays, row-major: `w` is `hidden x input`,
//! `u` is `hidden x hidden`.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gate {
    pub w: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Gate {
    fn zeros(hidden: usize, input: usize) -> Self {
        Self {
            w: vec![vec![0.0; input]; hidden],
            u: vec![vec![0.0; hidden]; hidden],
            b: vec![0.0; hidden],
        }
    }

    fn random(hidden: usize, input: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut g = Self::zeros(hidden, input);
        for v in g.values_mut() {
            *v = rng.random_range(-scale..scale);
        }
        g
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().flatten().chain(self.u.iter().flatten()).chain(self.b.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w
            .iter_mut()
            .flatten()
            .chain(self.u.iter_mut().flatten())
            .chain(self.b.iter_mut())
    }

    /// `W x + U h + b`, written into `out`.
    fn pre(&self, x: &[f64], h: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let wx: f64 = self.w[i].iter().zip(x).map(|(a, b)| a * b).sum();
            let uh: f64 = self.u[i].iter().zip(h).map(|(a, b)| a * b).sum();
            *o = wx + uh + self.b[i];
        }
    }

    /// Accumulates `d_pre x^T`, `d_pre h^T`, `d_pre` into this gradient.
    fn accumulate(&mut self, d_pre: &[f64], x: &[f64], h: &[f64]) {
        for (i, &d) in d_pre.iter().enumerate() {
            for (g, xv) in self.w[i].iter_mut().zip(x) {
                *g += d * xv;
            }
            for (g, hv) in self.u[i].iter_mut().zip(h) {
                *g += d * hv;
            }
            self.b[i] += d;
        }
    }

    /// `U^T d`, added into `out`.
    fn back_u(&self, d: &[f64], out: &mut [f64]) {
        for (i, &di) in d.iter().enumerate() {
            for (o, u) in out.iter_mut().zip(&self.u[i]) {
                *o += u * di;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub update: Gate,
    pub reset: Gate,
    pub candidate: Gate,
    pub readout_w: Vec<f64>,
    pub readout_b: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GruError {
    #[error("sequence is empty")]
    EmptySequence,
    #[error("input has {found} features, cell expects {expected}")]
    Shape { expected: usize, found: usize },
    #[error("parameter shapes do not match the declared sizes")]
    BadParams,
    #[error("training set is empty")]
    EmptyDataset,
    #[error("window {index} has length {found}, expected {expected}")]
    WindowLength { index: usize, expected: usize, found: usize },
    #[error("training diverged at epoch {epoch}: loss became non-finite")]
    Diverged { epoch: usize },
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            update: Gate::zeros(hidden, input_dim),
            reset: Gate::zeros(hidden, input_dim),
            candidate: Gate::zeros(hidden, input_dim),
            readout_w: vec![0.0; hidden],
            readout_b: 0.0,
        }
    }

    /// Uniform init in `±1/sqrt(hidden)`.
    pub fn random(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let s = 1.0 / (hidden as f64).sqrt();
        let readout_w = (0..hidden).map(|_| rng.random_range(-s..s)).collect();
        Self {
            input_dim,
            hidden,
            update: Gate::random(hidden, input_dim, s, rng),
            reset: Gate::random(hidden, input_dim, s, rng),
            candidate: Gate::random(hidden, input_dim, s, rng),
            readout_w,
            readout_b: 0.0,
        }
    }

    pub fn check_shapes(&self) -> Result<(), GruError> {
        let (h, d) = (self.hidden, self.input_dim);
        let gate_ok = |g: &Gate| {
            g.w.len() == h
                && g.w.iter().all(|r| r.len() == d)
                && g.u.len() == h
                && g.u.iter().all(|r| r.len() == h)
                && g.b.len() == h
        };
        if h >= 1
            && gate_ok(&self.update)
            && gate_ok(&self.reset)
            && gate_ok(&self.candidate)
            && self.readout_w.len() == h
        {
            Ok(())
        } else {
            Err(GruError::BadParams)
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.update
            .values()
            .chain(self.reset.values())
            .chain(self.candidate.values())
            .chain(self.readout_w.iter())
            .chain(std::iter::once(&self.readout_b))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.update
            .values_mut()
            .chain(self.reset.values_mut())
            .chain(self.candidate.values_mut())
            .chain(self.readout_w.iter_mut())
            .chain(std::iter::once(&mut self.readout_b))
    }

    pub fn len(&self) -> usize {
        self.values().count()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

/// Per-step activations kept for the backward pass.
struct Step {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    rh: Vec<f64>,
}

fn run(seq: &[Vec<f64>], p: &GruParams, keep: bool) -> Result<(Vec<Vec<f64>>, Vec<Step>), GruError> {
    if seq.is_empty() {
        return Err(GruError::EmptySequence);
    }
    p.check_shapes()?;
    let hdim = p.hidden;
    let mut h = vec![0.0; hdim];
    let mut traj = Vec::with_capacity(seq.len());
    let mut steps = Vec::new();
    let mut z = vec![0.0; hdim];
    let mut r = vec![0.0; hdim];
    let mut c = vec![0.0; hdim];
    let zeros = vec![0.0; hdim];
    for x in seq {
        if x.len() != p.input_dim {
            return Err(GruError::Shape {
                expected: p.input_dim,
                found: x.len(),
            });
        }
        p.update.pre(x, &h, &mut z);
        p.reset.pre(x, &h, &mut r);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
        // Candidate: W x + U (r*h) + b.
        p.candidate.pre(x, &zeros, &mut c);
        for (i, ci) in c.iter_mut().enumerate() {
            let u: f64 = p.candidate.u[i].iter().zip(&rh).map(|(a, b)| a * b).sum();
            *ci = (*ci + u).tanh();
        }
        let h_new: Vec<f64> = (0..hdim).map(|i| (1.0 - z[i]) * h[i] + z[i] * c[i]).collect();
        if keep {
            steps.push(Step {
                h_prev: h.clone(),
                z: z.clone(),
                r: r.clone(),
                c: c.clone(),
                rh,
            });
        }
        traj.push(h_new.clone());
        h = h_new;
    }
    Ok((traj, steps))
}

fn readout(p: &GruParams, h: &[f64]) -> f64 {
    p.readout_w.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + p.readout_b
}

/// Hidden trajectory and the scalar prediction from the last state.
pub fn gru_forward(seq: &[Vec<f64>], params: &GruParams) -> Result<(Vec<Vec<f64>>, f64), GruError> {
    let (traj, _) = run(seq, params, false)?;
    let y = readout(params, traj.last().expect("non-empty"));
    Ok((traj, y))
}

/// One training example: a window of inputs and the next-day target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub inputs: Vec<Vec<f64>>,
    pub target: f64,
}

/// Mean squared error over `data` and its gradient.
pub fn loss_and_grad(data: &[Window], p: &GruParams) -> Result<(f64, GruParams), GruError> {
    let mut grad = GruParams::zeros(p.input_dim, p.hidden);
    let n = data.len() as f64;
    let hdim = p.hidden;
    let mut loss = 0.0;
    for w in data {
        let (traj, steps) = run(&w.inputs, p, true)?;
        let h_last = traj.last().expect("non-empty");
        let y = readout(p, h_last);
        let err = y - w.target;
        loss += err * err / n;
        let dy = 2.0 * err / n;
        for (g, h) in grad.readout_w.iter_mut().zip(h_last) {
            *g += dy * h;
        }
        grad.readout_b += dy;

        let mut dh: Vec<f64> = p.readout_w.iter().map(|w| w * dy).collect();
        let mut d_z = vec![0.0; hdim];
        let mut d_r = vec![0.0; hdim];
        let mut d_c = vec![0.0; hdim];
        for (t, s) in steps.iter().enumerate().rev() {
            let x = &w.inputs[t];
            let mut dh_prev = vec![0.0; hdim];
            for i in 0..hdim {
                d_z[i] = dh[i] * (s.c[i] - s.h_prev[i]) * s.z[i] * (1.0 - s.z[i]);
                d_c[i] = dh[i] * s.z[i] * (1.0 - s.c[i] * s.c[i]);
                dh_prev[i] = dh[i] * (1.0 - s.z[i]);
            }
            grad.candidate.accumulate(&d_c, x, &s.rh);
            let mut d_rh = vec![0.0; hdim];
            p.candidate.back_u(&d_c, &mut d_rh);
            for i in 0..hdim {
                d_r[i] = d_rh[i] * s.h_prev[i] * s.r[i] * (1.0 - s.r[i]);
                dh_prev[i] += d_rh[i] * s.r[i];
            }
            grad.update.accumulate(&d_z, x, &s.h_prev);
            grad.reset.accumulate(&d_r, x, &s.h_prev);
            p.update.back_u(&d_z, &mut dh_prev);
            p.reset.back_u(&d_r, &mut dh_prev);
            dh = dh_prev;
        }
    }
    Ok((loss, grad))
}

pub fn mse(data: &[Window], p: &GruParams) -> Result<f64, GruError> {
    let mut total = 0.0;
    for w in data {
        let (_, y) = gru_forward(&w.inputs, p)?;
        total += (y - w.target).powi(2);
    }
    Ok(total / data.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub params: GruParams,
    /// Loss before each epoch's step, then the final loss.
    pub losses: Vec<f64>,
    /// Root mean squared residual on the training set.
    pub sigma_residual: f64,
}

/// Full-batch gradient descent, deterministic given `init`.
pub fn gru_train(data: &[Window], window: usize, init: GruParams, lr: f64, epochs: usize) -> Result<TrainReport, GruError> {
    if data.is_empty() {
        return Err(GruError::EmptyDataset);
    }
    for (index, w) in data.iter().enumerate() {
        if w.inputs.len() != window {
            return Err(GruError::WindowLength {
                index,
                expected: window,
                found: w.inputs.len(),
            });
        }
    }
    let mut p = init;
    let mut losses = Vec::with_capacity(epochs + 1);
    for epoch in 0..epochs {
        let (loss, grad) = loss_and_grad(data, &p)?;
        if !loss.is_finite() {
            return Err(GruError::Diverged { epoch });
        }
        losses.push(loss);
        for (v, g) in p.values_mut().zip(grad.values()) {
            *v -= lr * g;
        }
        if !p.is_finite() {
            return Err(GruError::Diverged { epoch });
        }
    }
    let final_loss = mse(data, &p)?;
    if !final_loss.is_finite() {
        return Err(GruError::Diverged { epoch: epochs });
    }
    losses.push(final_loss);
    Ok(TrainReport {
        params: p,
        losses,
        sigma_residual: final_loss.sqrt(),
    })
}
