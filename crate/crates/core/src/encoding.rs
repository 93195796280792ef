//! Gaussian population coding of the six observed variables and expansion
//! of the resulting rates into deterministic spike trains.

use crate::env::EnvState;
use crate::error::{Error, Result};

pub const N_VARIABLES: usize = 6;
pub const CENTERS_PER_VARIABLE: usize = 10;
pub const N_CHANNELS: usize = N_VARIABLES * CENTERS_PER_VARIABLE;
/// Length of one inference window, seconds.
pub const WINDOW_S: f64 = 0.020;

/// Value range tiled by one variable's tuning curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariableRange {
    pub min: f64,
    pub max: f64,
}

impl VariableRange {
    pub fn new(min: f64, max: f64) -> Self {
        VariableRange { min, max }
    }

    /// Distance between adjacent centres when the range endpoints are the
    /// outermost centres.
    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (CENTERS_PER_VARIABLE - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    /// Ranges in observation order `(x_p, y_p, v_x, v_y, x_ee, y_ee)`.
    pub ranges: [VariableRange; N_VARIABLES],
    pub r_max: f64,
    /// Tuning width as a multiple of the centre spacing.
    pub sigma_scale: f64,
}

impl CodecConfig {
    /// Default tiling: positions along the length cover the far part of the
    /// table from `length_x - 9 * 0.1493` up to `length_x`, positions across
    /// cover the full width, and velocities cover `±(v_max + margin)`.
    pub fn for_speed(v_max: f64, v_margin: f64) -> Self {
        let length_x = crate::env::TableGeometry::STANDARD.length_x;
        let half_w = crate::env::TableGeometry::STANDARD.half_width();
        let x = VariableRange::new(length_x - 9.0 * 0.1493, length_x);
        let y = VariableRange::new(-half_w, half_w);
        let vmax = v_max + v_margin;
        let v = VariableRange::new(-vmax, vmax);
        CodecConfig { ranges: [x, y, v, v, x, y], r_max: 200.0, sigma_scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.ranges.iter().enumerate() {
            if !(r.min.is_finite() && r.max.is_finite() && r.max > r.min) {
                return Err(Error::Config(format!("encoding range {i} [{}, {}] must have max > min", r.min, r.max)));
            }
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(Error::Config("encoding.r_max must be > 0".into()));
        }
        if !(self.sigma_scale > 0.0 && self.sigma_scale.is_finite()) {
            return Err(Error::Config("encoding.sigma_scale must be > 0".into()));
        }
        Ok(())
    }
}

/// Ten evenly spaced Gaussian tuning curves per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationCodec {
    centers: [[f64; CENTERS_PER_VARIABLE]; N_VARIABLES],
    sigma: [f64; N_VARIABLES],
    r_max: f64,
}

impl PopulationCodec {
    pub fn new(cfg: &CodecConfig) -> Result<Self> {
        cfg.validate()?;
        let mut centers = [[0.0; CENTERS_PER_VARIABLE]; N_VARIABLES];
        let mut sigma = [0.0; N_VARIABLES];
        for (v, r) in cfg.ranges.iter().enumerate() {
            let spacing = r.spacing();
            for (j, c) in centers[v].iter_mut().enumerate() {
                *c = r.min + spacing * j as f64;
            }
            sigma[v] = spacing * cfg.sigma_scale;
        }
        Ok(PopulationCodec { centers, sigma, r_max: cfg.r_max })
    }

    pub fn centers(&self, variable: usize) -> &[f64; CENTERS_PER_VARIABLE] {
        &self.centers[variable]
    }

    pub fn sigma(&self, variable: usize) -> f64 {
        self.sigma[variable]
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Firing rate (Hz) of every channel, grouped by variable: channel
    /// `v * 10 + j` is centre `j` of variable `v`.
    pub fn encode_rates(&self, obs: &EnvState) -> Result<[f64; N_CHANNELS]> {
        self.encode_values(&obs.to_array())
    }

    pub fn encode_values(&self, values: &[f64; N_VARIABLES]) -> Result<[f64; N_CHANNELS]> {
        let mut rates = [0.0; N_CHANNELS];
        for (v, &x) in values.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::Input(format!("observation component {v} is not finite ({x})")));
            }
            let two_s2 = 2.0 * self.sigma[v] * self.sigma[v];
            for (j, &mu) in self.centers[v].iter().enumerate() {
                let d = x - mu;
                rates[v * CENTERS_PER_VARIABLE + j] = self.r_max * (-(d * d) / two_s2).exp();
            }
        }
        Ok(rates)
    }
}

/// Spike times (seconds from window start) per input channel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpikePattern {
    pub channel_spikes: Vec<Vec<f64>>,
}

impl SpikePattern {
    pub fn empty(n_channels: usize) -> Self {
        SpikePattern { channel_spikes: vec![Vec::new(); n_channels] }
    }

    pub fn n_channels(&self) -> usize {
        self.channel_spikes.len()
    }

    pub fn total_spikes(&self) -> usize {
        self.channel_spikes.iter().map(Vec::len).sum()
    }
}

/// Regular spike trains: a channel at rate `r` fires `floor(r * window)`
/// times, at the centres of equal sub-bins of the window.
pub fn rates_to_spikes(rates: &[f64], window: f64) -> SpikePattern {
    let channel_spikes = rates
        .iter()
        .map(|&r| {
            let n = if r > 0.0 { (r * window).floor() as usize } else { 0 };
            (0..n).map(|k| (k as f64 + 0.5) * window / n as f64).collect()
        })
        .collect();
    SpikePattern { channel_spikes }
}
