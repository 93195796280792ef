//! Fixed random spiking reservoir: leaky integrate-and-fire neurons with
//! delta-current input synapses and per-neuron parameter mismatch.
//!
//! Membranes follow `v <- v * exp(-dt / tau_i) + sum_j W[i, j] * s_j` on a
//! grid of `sim_dt` slots. There is no bias current, so between input spikes
//! a membrane only decays and can never cross a positive threshold. The
//! simulator therefore touches a neuron only in slots where one of its input
//! channels spikes and applies the accumulated decay `exp(-dt / tau_i)^k`
//! lazily. Refractory neurons hold `v_reset` and ignore input.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::encoding::{SpikePattern, N_CHANNELS, WINDOW_S};
use crate::error::{Error, Result};
use crate::rng::{substream, Substream};

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirConfig {
    pub n_hidden: usize,
    pub n_inputs: usize,
    pub fan_in: usize,
    pub weight_std: f64,
    /// Membrane time constant, seconds.
    pub tau_m: f64,
    pub v_threshold: f64,
    pub v_reset: f64,
    pub t_refractory: f64,
    /// Coefficient of variation of the `tau_m` and threshold jitter.
    pub mismatch_cv: f64,
    pub sim_dt: f64,
    /// Trace filter time constant, seconds.
    pub tau_s: f64,
    pub seed: u64,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        ReservoirConfig {
            n_hidden: 1020,
            n_inputs: N_CHANNELS,
            fan_in: 16,
            weight_std: 0.45,
            tau_m: 0.020,
            v_threshold: 1.0,
            v_reset: 0.0,
            t_refractory: 0.002,
            mismatch_cv: 0.1,
            sim_dt: 0.0001,
            tau_s: 0.100,
            seed: 0,
        }
    }
}

impl ReservoirConfig {
    pub fn slots_per_window(&self) -> usize {
        (WINDOW_S / self.sim_dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.n_hidden < 1 {
            bad.push("n_hidden >= 1".to_string());
        }
        if self.n_inputs < 1 {
            bad.push("n_inputs >= 1".to_string());
        }
        if self.fan_in < 1 || self.fan_in > self.n_inputs {
            bad.push(format!("1 <= fan_in <= {}", self.n_inputs));
        }
        if !(self.weight_std >= 0.0 && self.weight_std.is_finite()) {
            bad.push("weight_std >= 0".to_string());
        }
        if !(self.tau_m > 0.0 && self.tau_m.is_finite()) {
            bad.push("tau_m > 0".to_string());
        }
        if !(self.v_threshold > 0.0 && self.v_threshold.is_finite()) {
            bad.push("v_threshold > 0".to_string());
        }
        if !(self.v_reset < self.v_threshold && self.v_reset.is_finite()) {
            bad.push("v_reset < v_threshold".to_string());
        }
        if !(self.t_refractory >= 0.0 && self.t_refractory.is_finite()) {
            bad.push("t_refractory >= 0".to_string());
        }
        if !(0.0..=0.5).contains(&self.mismatch_cv) {
            bad.push("mismatch_cv in [0, 0.5]".to_string());
        }
        let slots = WINDOW_S / self.sim_dt;
        if !(self.sim_dt > 0.0) || (slots - slots.round()).abs() > 1e-9 || slots.round() < 1.0 {
            bad.push("sim_dt divides the 20 ms window".to_string());
        }
        if !(self.tau_s > 0.0) {
            bad.push("tau_s > 0".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("reservoir config violates: {}", bad.join(", "))))
        }
    }
}

/// One input synapse of a hidden neuron.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Synapse {
    pub channel: u32,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct Reservoir {
    cfg: ReservoirConfig,
    /// Row-major, `fan_in` synapses per neuron, channels ascending.
    synapses: Vec<Synapse>,
    tau_m: Vec<f64>,
    v_th: Vec<f64>,
    decay: Vec<f64>,
    /// Channel -> (neuron, weight), neurons ascending.
    fanout_start: Vec<usize>,
    fanout: Vec<(u32, f64)>,
    n_slots: usize,
    refractory_slots: i64,
    // Mutable membrane state. `last[i]` is the absolute slot up to which
    // `v[i]` is current (or the end of the refractory period).
    v: Vec<f64>,
    last: Vec<i64>,
    clock: i64,
    touched_at: Vec<i64>,
    touched: Vec<u32>,
}

impl Reservoir {
    /// Samples connectivity and mismatch from `cfg.seed`.
    pub fn build(cfg: &ReservoirConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(substream(Substream::ReservoirBuild, 0));

        let mut synapses = Vec::with_capacity(cfg.n_hidden * cfg.fan_in);
        let mut tau_m = Vec::with_capacity(cfg.n_hidden);
        let mut v_th = Vec::with_capacity(cfg.n_hidden);
        for _ in 0..cfg.n_hidden {
            let mut chans = index::sample(&mut rng, cfg.n_inputs, cfg.fan_in).into_vec();
            chans.sort_unstable();
            for c in chans {
                let z: f64 = rng.sample(StandardNormal);
                synapses.push(Synapse { channel: c as u32, weight: cfg.weight_std * z });
            }
            let eta: f64 = rng.sample(StandardNormal);
            let zeta: f64 = rng.sample(StandardNormal);
            tau_m.push(cfg.tau_m * (1.0 + cfg.mismatch_cv * eta).max(0.1));
            let floor = cfg.v_reset.max(0.0) + 0.05 * (cfg.v_threshold - cfg.v_reset.max(0.0)).abs();
            v_th.push((cfg.v_threshold * (1.0 + cfg.mismatch_cv * zeta)).max(floor));
        }
        Self::assemble(cfg.clone(), synapses, tau_m, v_th)
    }

    /// Rebuilds a reservoir from exported parts.
    pub fn from_parts(cfg: &ReservoirConfig, synapses: Vec<Synapse>, tau_m: Vec<f64>, v_th: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        if synapses.len() != cfg.n_hidden * cfg.fan_in || tau_m.len() != cfg.n_hidden || v_th.len() != cfg.n_hidden {
            return Err(Error::Input(format!(
                "reservoir parts do not match n_hidden={} fan_in={}: {} synapses, {} neurons",
                cfg.n_hidden,
                cfg.fan_in,
                synapses.len(),
                tau_m.len()
            )));
        }
        if let Some(s) = synapses.iter().find(|s| s.channel as usize >= cfg.n_inputs || !s.weight.is_finite()) {
            return Err(Error::Input(format!("bad synapse {s:?}")));
        }
        if tau_m.iter().any(|&t| !(t > 0.0)) || v_th.iter().any(|&t| !(t > cfg.v_reset)) {
            return Err(Error::Input("neuron parameters must have tau_m > 0 and v_threshold > v_reset".into()));
        }
        Self::assemble(cfg.clone(), synapses, tau_m, v_th)
    }

    fn assemble(cfg: ReservoirConfig, synapses: Vec<Synapse>, tau_m: Vec<f64>, v_th: Vec<f64>) -> Result<Self> {
        let n = cfg.n_hidden;
        let decay = tau_m.iter().map(|&t| (-cfg.sim_dt / t).exp()).collect();

        let mut per_channel: Vec<Vec<(u32, f64)>> = vec![Vec::new(); cfg.n_inputs];
        for (i, row) in synapses.chunks(cfg.fan_in).enumerate() {
            for s in row {
                per_channel[s.channel as usize].push((i as u32, s.weight));
            }
        }
        let mut fanout_start = Vec::with_capacity(cfg.n_inputs + 1);
        let mut fanout = Vec::with_capacity(synapses.len());
        for list in per_channel {
            fanout_start.push(fanout.len());
            fanout.extend(list);
        }
        fanout_start.push(fanout.len());

        let n_slots = cfg.slots_per_window();
        let refractory_slots = (cfg.t_refractory / cfg.sim_dt).round() as i64;
        let v_reset = cfg.v_reset;
        Ok(Reservoir {
            cfg,
            synapses,
            tau_m,
            v_th,
            decay,
            fanout_start,
            fanout,
            n_slots,
            refractory_slots,
            v: vec![v_reset; n],
            last: vec![-1; n],
            clock: 0,
            touched_at: vec![-1; n],
            touched: Vec::new(),
        })
    }

    pub fn config(&self) -> &ReservoirConfig {
        &self.cfg
    }

    pub fn n_hidden(&self) -> usize {
        self.cfg.n_hidden
    }

    pub fn synapses(&self) -> &[Synapse] {
        &self.synapses
    }

    /// Synapses of one hidden neuron.
    pub fn row(&self, neuron: usize) -> &[Synapse] {
        &self.synapses[neuron * self.cfg.fan_in..(neuron + 1) * self.cfg.fan_in]
    }

    pub fn tau_m(&self) -> &[f64] {
        &self.tau_m
    }

    pub fn v_threshold(&self) -> &[f64] {
        &self.v_th
    }

    /// Membrane potential of `neuron` at the end of the last simulated window.
    pub fn membrane(&self, neuron: usize) -> f64 {
        let gap = self.clock - 1 - self.last[neuron];
        if gap > 0 {
            self.v[neuron] * self.decay[neuron].powi(gap as i32)
        } else {
            self.v[neuron]
        }
    }

    /// Rests every membrane and clears refractory state. Weights are untouched.
    pub fn reset_state(&mut self) {
        self.v.fill(self.cfg.v_reset);
        self.last.fill(-1);
        self.touched_at.fill(-1);
        self.clock = 0;
    }

    /// Runs one 20 ms window and returns the spike count of every hidden
    /// neuron. Membrane state carries over to the next call.
    pub fn simulate_window(&mut self, input: &SpikePattern) -> Result<Vec<u32>> {
        let mut counts = vec![0u32; self.cfg.n_hidden];
        self.simulate_window_into(input, &mut counts)?;
        Ok(counts)
    }

    pub fn simulate_window_into(&mut self, input: &SpikePattern, counts: &mut [u32]) -> Result<()> {
        if input.n_channels() != self.cfg.n_inputs {
            return Err(Error::Input(format!(
                "spike pattern has {} channels, reservoir expects {}",
                input.n_channels(),
                self.cfg.n_inputs
            )));
        }
        if counts.len() != self.cfg.n_hidden {
            return Err(Error::Input("count buffer length differs from n_hidden".into()));
        }
        // (slot, channel), ascending
        let mut events: Vec<(usize, u32)> = Vec::with_capacity(input.total_spikes());
        for (c, times) in input.channel_spikes.iter().enumerate() {
            for &t in times {
                if !(0.0..WINDOW_S).contains(&t) {
                    return Err(Error::Input(format!("spike at {t} s on channel {c} lies outside [0, {WINDOW_S})")));
                }
                let slot = ((t / self.cfg.sim_dt) + 1e-9).floor() as usize;
                events.push((slot.min(self.n_slots - 1), c as u32));
            }
        }
        events.sort_unstable();
        counts.fill(0);

        let mut k = 0;
        while k < events.len() {
            let slot = events[k].0;
            let abs = self.clock + slot as i64;
            while k < events.len() && events[k].0 == slot {
                self.deliver(events[k].1, abs);
                k += 1;
            }
            self.fire(abs, counts);
        }
        self.clock += self.n_slots as i64;
        Ok(())
    }

    fn deliver(&mut self, channel: u32, abs: i64) {
        let range = self.fanout_start[channel as usize]..self.fanout_start[channel as usize + 1];
        for &(i, w) in &self.fanout[range] {
            let i = i as usize;
            if self.touched_at[i] != abs {
                if abs <= self.last[i] {
                    continue;
                }
                let gap = abs - self.last[i];
                self.v[i] *= self.decay[i].powi(gap as i32);
                self.last[i] = abs;
                self.touched_at[i] = abs;
                self.touched.push(i as u32);
            }
            self.v[i] += w;
        }
    }

    fn fire(&mut self, abs: i64, counts: &mut [u32]) {
        for &i in &self.touched {
            let i = i as usize;
            if self.v[i] >= self.v_th[i] {
                counts[i] += 1;
                self.v[i] = self.cfg.v_reset;
                self.last[i] = abs + self.refractory_slots;
            }
        }
        self.touched.clear();
    }

    /// Writes `neuron_id,channel_id,weight` rows.
    pub fn export_weights_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "neuron_id,channel_id,weight")?;
            for (i, row) in self.synapses.chunks(self.cfg.fan_in).enumerate() {
                for s in row {
                    writeln!(w, "{},{},{}", i, s.channel, s.weight)?;
                }
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    /// Writes `neuron_id,tau_m,v_threshold` rows.
    pub fn export_params_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let mut write = || -> std::io::Result<()> {
            writeln!(w, "neuron_id,tau_m,v_threshold")?;
            for i in 0..self.cfg.n_hidden {
                writeln!(w, "{},{},{}", i, self.tau_m[i], self.v_th[i])?;
            }
            w.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    /// Loads a reservoir written by the two export functions. `cfg` supplies
    /// the shared constants (reset, refractory, `sim_dt`, sizes).
    pub fn import_csv(cfg: &ReservoirConfig, weights: &Path, params: &Path) -> Result<Self> {
        let rows = read_csv_rows(weights, 3)?;
        let mut per_neuron: Vec<Vec<Synapse>> = vec![Vec::new(); cfg.n_hidden];
        for (line, r) in rows {
            let i: usize = parse_field(weights, line, &r[0])?;
            let c: u32 = parse_field(weights, line, &r[1])?;
            let w: f64 = parse_field(weights, line, &r[2])?;
            let slot = per_neuron
                .get_mut(i)
                .ok_or_else(|| Error::Parse(format!("{}:{line}: neuron {i} >= n_hidden", weights.display())))?;
            slot.push(Synapse { channel: c, weight: w });
        }
        let mut synapses = Vec::with_capacity(cfg.n_hidden * cfg.fan_in);
        for (i, mut row) in per_neuron.into_iter().enumerate() {
            if row.len() != cfg.fan_in {
                return Err(Error::Input(format!("neuron {i} has {} synapses, expected {}", row.len(), cfg.fan_in)));
            }
            row.sort_by_key(|s| s.channel);
            synapses.extend(row);
        }

        let mut tau_m = vec![f64::NAN; cfg.n_hidden];
        let mut v_th = vec![f64::NAN; cfg.n_hidden];
        for (line, r) in read_csv_rows(params, 3)? {
            let i: usize = parse_field(params, line, &r[0])?;
            if i >= cfg.n_hidden {
                return Err(Error::Parse(format!("{}:{line}: neuron {i} >= n_hidden", params.display())));
            }
            tau_m[i] = parse_field(params, line, &r[1])?;
            v_th[i] = parse_field(params, line, &r[2])?;
        }
        Self::from_parts(cfg, synapses, tau_m, v_th)
    }
}

/// Reads a headered CSV, returning `(line_number, fields)` per data row.
pub(crate) fn read_csv_rows(path: &Path, n_fields: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate().skip(1) {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if fields.len() < n_fields {
            return Err(Error::Parse(format!("{}:{}: expected {n_fields} fields", path.display(), n + 1)));
        }
        out.push((n + 1, fields));
    }
    Ok(out)
}

pub(crate) fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse(format!("{}:{line}: cannot parse `{s}`", path.display())))
}

/// Exponentially filtered spike counts, one per hidden neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredTraces {
    values: Vec<f64>,
    tau_s: f64,
    decay: f64,
}

impl FilteredTraces {
    /// Traces updated once per `dt` seconds with time constant `tau_s`.
    /// An infinite `tau_s` accumulates without decay.
    pub fn new(n: usize, tau_s: f64, dt: f64) -> Self {
        FilteredTraces { values: vec![0.0; n], tau_s, decay: (-dt / tau_s).exp() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tau_s(&self) -> f64 {
        self.tau_s
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn reset(&mut self) {
        self.values.fill(0.0);
    }

    /// `s <- s * exp(-dt / tau_s) + counts`.
    pub fn update(&mut self, counts: &[u32]) {
        for (s, &c) in self.values.iter_mut().zip(counts) {
            *s = *s * self.decay + c as f64;
        }
    }
}
