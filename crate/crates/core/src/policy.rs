//! Softmax readout over filtered reservoir traces, trained with an
//! eligibility-trace policy gradient.
//!
//! Per control step the readout keeps, for every weight,
//!
//! ```text
//! E[k,i]  <- gamma * E[k,i] + (pi_k - 1{a = k}) * s_i
//! dW[k,i] <- dW[k,i] - alpha * r * E[k,i]
//! ```
//!
//! which unrolls to `dW[k,i] = -alpha * sum_t r_t * sum_{t' <= t}
//! gamma^(t - t') * (pi_k(t') - 1{a(t') = k}) * s_i(t')`. The eligibility
//! `E` restarts at every episode; `dW` accumulates across episodes until
//! [`ReadoutState::apply_update`] folds it into the weights.

use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::env::Action;
use crate::error::{Error, Result};
use crate::snn::{parse_field, read_csv_rows};

pub const N_ACTIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutConfig {
    pub alpha: f64,
    pub gamma: f64,
}

/// The default step size is tiny because the activations sum raw filtered
/// spike counts over the whole reservoir; larger steps saturate the softmax
/// early and the update then stops moving it.
impl Default for ReadoutConfig {
    fn default() -> Self {
        ReadoutConfig { alpha: 4e-7, gamma: 0.99 }
    }
}

impl ReadoutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("readout.alpha must be finite and >= 0".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("readout.gamma must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySample {
    pub activations: [f64; N_ACTIONS],
    pub probs: [f64; N_ACTIONS],
    pub action: Action,
}

/// Numerically stable two-way softmax.
pub fn softmax(a: [f64; N_ACTIONS]) -> [f64; N_ACTIONS] {
    let m = a[0].max(a[1]);
    let e0 = (a[0] - m).exp();
    let e1 = (a[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutState {
    n_hidden: usize,
    /// Row-major `[action][neuron]`.
    weights: Vec<f64>,
    eligibility: Vec<f64>,
    pending: Vec<f64>,
    cfg: ReadoutConfig,
    updates_applied: u64,
}

impl ReadoutState {
    /// Zero weights, i.e. a uniform initial policy.
    pub fn new(n_hidden: usize, cfg: ReadoutConfig) -> Result<Self> {
        cfg.validate()?;
        let n = N_ACTIONS * n_hidden;
        Ok(ReadoutState {
            n_hidden,
            weights: vec![0.0; n],
            eligibility: vec![0.0; n],
            pending: vec![0.0; n],
            cfg,
            updates_applied: 0,
        })
    }

    pub fn with_weights(weights: Vec<f64>, n_hidden: usize, cfg: ReadoutConfig) -> Result<Self> {
        if weights.len() != N_ACTIONS * n_hidden {
            return Err(Error::Input(format!(
                "weight vector has {} entries, expected {} x {n_hidden}",
                weights.len(),
                N_ACTIONS
            )));
        }
        let mut s = Self::new(n_hidden, cfg)?;
        s.weights = weights;
        s.check_finite()?;
        Ok(s)
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn config(&self) -> &ReadoutConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eligibility(&self) -> &[f64] {
        &self.eligibility
    }

    pub fn pending(&self) -> &[f64] {
        &self.pending
    }

    pub fn updates_applied(&self) -> u64 {
        self.updates_applied
    }

    pub fn activations(&self, traces: &[f64]) -> [f64; N_ACTIONS] {
        let mut a = [0.0; N_ACTIONS];
        for (k, ak) in a.iter_mut().enumerate() {
            let row = &self.weights[k * self.n_hidden..(k + 1) * self.n_hidden];
            *ak = row.iter().zip(traces).map(|(w, s)| w * s).sum();
        }
        a
    }

    /// Evaluates the policy without sampling.
    pub fn probabilities(&self, traces: &[f64]) -> Result<([f64; N_ACTIONS], [f64; N_ACTIONS])> {
        if traces.len() != self.n_hidden {
            return Err(Error::Input(format!("trace vector has {} entries, expected {}", traces.len(), self.n_hidden)));
        }
        if let Some(i) = traces.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numerical(format!("trace {i} is not finite")));
        }
        let a = self.activations(traces);
        if !(a[0].is_finite() && a[1].is_finite()) {
            let wmax = self.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
            return Err(Error::Numerical(format!(
                "readout activation is not finite ({:?}); max |w| = {wmax:e}",
                a
            )));
        }
        Ok((a, softmax(a)))
    }

    /// Readout activations, softmax probabilities and a sampled action.
    /// Consumes exactly one uniform draw.
    pub fn policy_forward<R: Rng + ?Sized>(&self, traces: &[f64], rng: &mut R) -> Result<PolicySample> {
        let (activations, probs) = self.probabilities(traces)?;
        let u: f64 = rng.random();
        let action = if u < probs[0] { Action::Home } else { Action::Forward };
        Ok(PolicySample { activations, probs, action })
    }

    /// Clears the eligibility at an episode boundary.
    pub fn begin_episode(&mut self) {
        self.eligibility.fill(0.0);
    }

    /// Folds one control step into the eligibility and the pending update.
    pub fn accumulate_step(&mut self, probs: &[f64; N_ACTIONS], action: Action, traces: &[f64], reward: f64) {
        let n = self.n_hidden;
        let gamma = self.cfg.gamma;
        let scale = self.cfg.alpha * reward;
        for k in 0..N_ACTIONS {
            let g = probs[k] - if action.index() == k { 1.0 } else { 0.0 };
            let e = &mut self.eligibility[k * n..(k + 1) * n];
            let p = &mut self.pending[k * n..(k + 1) * n];
            for ((e, p), &s) in e.iter_mut().zip(p.iter_mut()).zip(traces) {
                *e = gamma * *e + g * s;
                *p -= scale * *e;
            }
        }
    }

    /// `W <- W + dW`, then clears `dW`. Fails without modifying `W` if the
    /// result would not be finite.
    pub fn apply_update(&mut self) -> Result<()> {
        if let Some(i) = self.weights.iter().zip(&self.pending).position(|(w, d)| !(w + d).is_finite()) {
            return Err(Error::Numerical(format!(
                "weight update diverged at action {} neuron {} (w = {}, dw = {})",
                i / self.n_hidden,
                i % self.n_hidden,
                self.weights[i],
                self.pending[i]
            )));
        }
        for (w, d) in self.weights.iter_mut().zip(self.pending.iter_mut()) {
            *w += *d;
            *d = 0.0;
        }
        self.updates_applied += 1;
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        match self.weights.iter().position(|w| !w.is_finite()) {
            Some(i) => Err(Error::Numerical(format!("weight {i} is not finite"))),
            None => Ok(()),
        }
    }

    /// Writes `action_id,neuron_id,weight` rows.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        write_weights_csv(path, &self.weights, self.n_hidden)
    }
}

pub fn write_weights_csv(path: &Path, weights: &[f64], n_hidden: usize) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "action_id,neuron_id,weight")?;
        for (idx, v) in weights.iter().enumerate() {
            writeln!(w, "{},{},{}", idx / n_hidden, idx % n_hidden, v)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads a weight snapshot. The snapshot must cover exactly `n_hidden`
/// neurons for both actions.
pub fn read_weights_csv(path: &Path, n_hidden: usize) -> Result<Vec<f64>> {
    let mut weights = vec![f64::NAN; N_ACTIONS * n_hidden];
    let rows = read_csv_rows(path, 3)?;
    if rows.len() != weights.len() {
        return Err(Error::Input(format!(
            "{}: snapshot has {} entries, config expects {} x {n_hidden}",
            path.display(),
            rows.len(),
            N_ACTIONS
        )));
    }
    for (line, r) in rows {
        let k: usize = parse_field(path, line, &r[0])?;
        let i: usize = parse_field(path, line, &r[1])?;
        if k >= N_ACTIONS || i >= n_hidden {
            return Err(Error::Input(format!("{}:{line}: index ({k}, {i}) out of shape", path.display())));
        }
        weights[k * n_hidden + i] = parse_field(path, line, &r[2])?;
    }
    if weights.iter().any(|w| w.is_nan()) {
        return Err(Error::Input(format!("{}: snapshot does not cover every weight", path.display())));
    }
    Ok(weights)
}
