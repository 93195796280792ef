//! Run configuration as flat `key=value` text with dotted namespaces.
//!
//! ```text
//! preset=C4_pos_and_speed
//! episodes=2000
//! seeds=0,1,2
//! reservoir.n_hidden=1020
//! readout.alpha=0.0000004
//! ```
//!
//! `preset` is applied first and fills in the condition-specific defaults
//! (speed range, spawn window, velocity encoding range); every other key
//! overrides a single field. Unknown keys are rejected. Floats are written
//! in shortest round-trip form so a manifest reproduces its run bit-exactly.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoding::{CodecConfig, VariableRange};
use crate::env::{ConditionPreset, EnvConfig, PresetName, TableGeometry};
use crate::error::{Error, Result};
use crate::policy::ReadoutConfig;
use crate::snn::ReservoirConfig;

/// Encoder parameters that are not derived from the preset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingParams {
    pub r_max: f64,
    pub sigma_scale: f64,
    /// Velocity channels tile `±(speed_max + v_margin)`.
    pub v_margin: f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Default for EncodingParams {
    fn default() -> Self {
        let c = CodecConfig::for_speed(0.0, 0.0);
        EncodingParams {
            r_max: c.r_max,
            sigma_scale: c.sigma_scale,
            v_margin: 0.2,
            x_range: (c.ranges[0].min, c.ranges[0].max),
            y_range: (c.ranges[1].min, c.ranges[1].max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: ConditionPreset,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub env: EnvConfig,
    pub encoding: EncodingParams,
    pub reservoir: ReservoirConfig,
    pub readout: ReadoutConfig,
    /// Weight snapshots are written before every episode index divisible by
    /// this; 0 writes only the final weights.
    pub snapshot_interval: usize,
    /// Frozen-policy episodes run per seed after training; 0 disables.
    pub eval_episodes: usize,
    pub output_dir: Option<PathBuf>,
    pub export_reservoir: bool,
}

impl RunConfig {
    pub fn for_preset(name: PresetName) -> Self {
        RunConfig {
            preset: ConditionPreset::new(name),
            episodes: 2000,
            seeds: (0..10).collect(),
            env: EnvConfig::default(),
            encoding: EncodingParams::default(),
            reservoir: ReservoirConfig::default(),
            readout: ReadoutConfig::default(),
            snapshot_interval: 0,
            eval_episodes: 0,
            output_dir: None,
            export_reservoir: false,
        }
    }

    pub fn codec_config(&self) -> CodecConfig {
        let e = &self.encoding;
        let vmax = self.preset.speed_range.1 + e.v_margin;
        let v = VariableRange::new(-vmax, vmax);
        let x = VariableRange::new(e.x_range.0, e.x_range.1);
        let y = VariableRange::new(e.y_range.0, e.y_range.1);
        CodecConfig { ranges: [x, y, v, v, x, y], r_max: e.r_max, sigma_scale: e.sigma_scale }
    }

    /// Reservoir config for one seed of the run.
    pub fn reservoir_for_seed(&self, seed: u64) -> ReservoirConfig {
        ReservoirConfig { seed, ..self.reservoir.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes < 1 {
            return Err(Error::Config("episodes must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        self.preset.validate(&TableGeometry::STANDARD)?;
        self.env.validate()?;
        self.codec_config().validate()?;
        if self.encoding.v_margin < 0.0 {
            return Err(Error::Config("encoding.v_margin must be >= 0".into()));
        }
        self.reservoir.validate()?;
        self.readout.validate()?;
        Ok(())
    }

    /// Sets one dotted key. `preset` resets every preset-derived field.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "preset" => {
                self.preset = ConditionPreset::new(value.parse()?);
            }
            "episodes" => self.episodes = parse(key, value)?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "env.max_steps" => self.env.max_steps = parse(key, value)?,
            "env.primitive_duration" => self.env.primitive_duration = parse(key, value)?,
            "env.speed_min" => self.preset.speed_range.0 = parse(key, value)?,
            "env.speed_max" => self.preset.speed_range.1 = parse(key, value)?,
            "env.spawn_x_center" => self.preset.spawn_x_center = parse(key, value)?,
            "env.spawn_x_window" => self.preset.spawn_x_window = parse(key, value)?,
            "encoding.r_max" => self.encoding.r_max = parse(key, value)?,
            "encoding.sigma_scale" => self.encoding.sigma_scale = parse(key, value)?,
            "encoding.v_margin" => self.encoding.v_margin = parse(key, value)?,
            "encoding.x_min" => self.encoding.x_range.0 = parse(key, value)?,
            "encoding.x_max" => self.encoding.x_range.1 = parse(key, value)?,
            "encoding.y_min" => self.encoding.y_range.0 = parse(key, value)?,
            "encoding.y_max" => self.encoding.y_range.1 = parse(key, value)?,
            "reservoir.n_hidden" => self.reservoir.n_hidden = parse(key, value)?,
            "reservoir.fan_in" => self.reservoir.fan_in = parse(key, value)?,
            "reservoir.weight_std" => self.reservoir.weight_std = parse(key, value)?,
            "reservoir.tau_m" => self.reservoir.tau_m = parse(key, value)?,
            "reservoir.v_threshold" => self.reservoir.v_threshold = parse(key, value)?,
            "reservoir.v_reset" => self.reservoir.v_reset = parse(key, value)?,
            "reservoir.t_refractory" => self.reservoir.t_refractory = parse(key, value)?,
            "reservoir.mismatch_cv" => self.reservoir.mismatch_cv = parse(key, value)?,
            "reservoir.sim_dt" => self.reservoir.sim_dt = parse(key, value)?,
            "reservoir.tau_s" => self.reservoir.tau_s = parse(key, value)?,
            "readout.alpha" => self.readout.alpha = parse(key, value)?,
            "readout.gamma" => self.readout.gamma = parse(key, value)?,
            "train.snapshot_interval" => self.snapshot_interval = parse(key, value)?,
            "train.eval_episodes" => self.eval_episodes = parse(key, value)?,
            "output.dir" => self.output_dir = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            "output.export_reservoir" => self.export_reservoir = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Every resolved parameter, in a fixed order, `preset` first.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        fn s<T: Display>(v: T) -> String {
            v.to_string()
        }
        let seeds = self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
        let r = &self.reservoir;
        vec![
            ("preset", s(self.preset.name)),
            ("episodes", s(self.episodes)),
            ("seeds", seeds),
            ("env.max_steps", s(self.env.max_steps)),
            ("env.primitive_duration", s(self.env.primitive_duration)),
            ("env.speed_min", s(self.preset.speed_range.0)),
            ("env.speed_max", s(self.preset.speed_range.1)),
            ("env.spawn_x_center", s(self.preset.spawn_x_center)),
            ("env.spawn_x_window", s(self.preset.spawn_x_window)),
            ("encoding.r_max", s(self.encoding.r_max)),
            ("encoding.sigma_scale", s(self.encoding.sigma_scale)),
            ("encoding.v_margin", s(self.encoding.v_margin)),
            ("encoding.x_min", s(self.encoding.x_range.0)),
            ("encoding.x_max", s(self.encoding.x_range.1)),
            ("encoding.y_min", s(self.encoding.y_range.0)),
            ("encoding.y_max", s(self.encoding.y_range.1)),
            ("reservoir.n_hidden", s(r.n_hidden)),
            ("reservoir.fan_in", s(r.fan_in)),
            ("reservoir.weight_std", s(r.weight_std)),
            ("reservoir.tau_m", s(r.tau_m)),
            ("reservoir.v_threshold", s(r.v_threshold)),
            ("reservoir.v_reset", s(r.v_reset)),
            ("reservoir.t_refractory", s(r.t_refractory)),
            ("reservoir.mismatch_cv", s(r.mismatch_cv)),
            ("reservoir.sim_dt", s(r.sim_dt)),
            ("reservoir.tau_s", s(r.tau_s)),
            ("readout.alpha", s(self.readout.alpha)),
            ("readout.gamma", s(self.readout.gamma)),
            ("train.snapshot_interval", s(self.snapshot_interval)),
            ("train.eval_episodes", s(self.eval_episodes)),
            ("output.dir", self.output_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("output.export_reservoir", s(self.export_reservoir)),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Parses config text. Without a `preset` line the defaults of
    /// `C1_stationary` apply.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let preset = match pairs.iter().find(|(k, _)| k == "preset") {
            Some((_, v)) => v.parse()?,
            None => PresetName::C1Stationary,
        };
        let mut cfg = RunConfig::for_preset(preset);
        cfg.apply_overrides(pairs.iter().filter(|(k, _)| k != "preset").map(|(k, v)| (k.as_str(), v.as_str())))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Applies `key=value` strings as given on the command line.
    pub fn apply_override_strings<S: AsRef<str>>(&mut self, items: &[S]) -> Result<()> {
        for item in items {
            let item = item.as_ref();
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("cannot parse `{value}` for `{key}`")))
}

pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse::<u64>("seeds", s.trim()))
        .collect()
}
