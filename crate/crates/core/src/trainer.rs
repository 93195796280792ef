//! Closed-loop training: encode, reservoir, readout, environment, with the
//! readout update applied after every second episode.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::encoding::{rates_to_spikes, PopulationCodec, WINDOW_S};
use crate::env::{Action, AirHockeyEnv, EnvState, Outcome, CONTROL_DT};
use crate::error::{Error, Result};
use crate::policy::{write_weights_csv, ReadoutState, N_ACTIONS};
use crate::rng::{stream_rng, Substream};
use crate::snn::{FilteredTraces, Reservoir};

/// Moving-average window used for learning curves.
pub const CURVE_WINDOW: usize = 30;

/// Everything on the agent side of the loop.
#[derive(Debug, Clone)]
pub struct Agent {
    pub codec: PopulationCodec,
    pub reservoir: Reservoir,
    pub traces: FilteredTraces,
    pub readout: ReadoutState,
    counts: Vec<u32>,
}

impl Agent {
    pub fn new(codec: PopulationCodec, reservoir: Reservoir, readout: ReadoutState) -> Result<Self> {
        let n = reservoir.n_hidden();
        if readout.n_hidden() != n {
            return Err(Error::Input(format!("readout covers {} neurons, reservoir has {n}", readout.n_hidden())));
        }
        let traces = FilteredTraces::new(n, reservoir.config().tau_s, CONTROL_DT);
        Ok(Agent { codec, reservoir, traces, readout, counts: vec![0; n] })
    }

    /// Fresh agent for `seed` of `cfg`: new reservoir sample, zero readout.
    pub fn from_config(cfg: &RunConfig, seed: u64) -> Result<Self> {
        let codec = PopulationCodec::new(&cfg.codec_config())?;
        let reservoir = Reservoir::build(&cfg.reservoir_for_seed(seed))?;
        let readout = ReadoutState::new(cfg.reservoir.n_hidden, cfg.readout)?;
        Self::new(codec, reservoir, readout)
    }

    /// Encodes `obs`, runs one reservoir window and refreshes the traces.
    /// Returns the number of hidden spikes in the window.
    pub fn sense(&mut self, obs: &EnvState) -> Result<u64> {
        let rates = self.codec.encode_rates(obs)?;
        let spikes = rates_to_spikes(&rates, WINDOW_S);
        self.reservoir.simulate_window_into(&spikes, &mut self.counts)?;
        self.traces.update(&self.counts);
        Ok(self.counts.iter().map(|&c| c as u64).sum())
    }
}

/// Per-episode random sources.
#[derive(Debug, Clone)]
pub struct EpisodeRngs {
    pub spawn: ChaCha8Rng,
    pub action: ChaCha8Rng,
}

impl EpisodeRngs {
    pub fn for_episode(seed: u64, episode: usize) -> Self {
        EpisodeRngs {
            spawn: stream_rng(seed, Substream::EnvSpawn, episode as u64),
            action: stream_rng(seed, Substream::ActionSampling, episode as u64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    /// Sample from the readout's softmax.
    Sample,
    /// Ignore the readout and always take this action.
    Fixed(Action),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub seed: u64,
    pub episode: usize,
    pub outcome: Outcome,
    pub total_reward: f64,
    pub steps: u32,
    pub action_counts: [u32; N_ACTIONS],
    pub first_contact_step: Option<u32>,
    pub hidden_spikes: u64,
}

impl EpisodeLog {
    pub fn success(&self) -> bool {
        self.outcome == Outcome::Success
    }
}

/// One control step as seen by an observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub episode: usize,
    pub step: u32,
    /// Observation the decision was based on.
    pub obs: EnvState,
    pub probs: [f64; N_ACTIONS],
    pub action: Action,
    pub reward: f64,
    pub outcome: Outcome,
}

/// Runs one episode to completion. Membranes, traces and eligibility are
/// reset first; with `learn` set, every step feeds the readout's pending
/// update.
pub fn run_episode(
    env: &mut AirHockeyEnv,
    agent: &mut Agent,
    rngs: &mut EpisodeRngs,
    seed: u64,
    episode: usize,
    mode: ActionMode,
    learn: bool,
    mut observer: Option<&mut dyn FnMut(&StepRecord)>,
) -> Result<EpisodeLog> {
    agent.reservoir.reset_state();
    agent.traces.reset();
    agent.readout.begin_episode();
    let mut obs = env.reset(&mut rngs.spawn);

    let mut log = EpisodeLog {
        seed,
        episode,
        outcome: Outcome::Running,
        total_reward: 0.0,
        steps: 0,
        action_counts: [0; N_ACTIONS],
        first_contact_step: None,
        hidden_spikes: 0,
    };
    loop {
        log.hidden_spikes += agent.sense(&obs)?;
        let sample = agent.readout.policy_forward(agent.traces.values(), &mut rngs.action)?;
        let action = match mode {
            ActionMode::Sample => sample.action,
            ActionMode::Fixed(a) => a,
        };
        let res = env.step_control(action)?;
        if learn {
            agent.readout.accumulate_step(&sample.probs, action, agent.traces.values(), res.reward);
        }
        log.total_reward += res.reward;
        log.action_counts[action.index()] += 1;
        log.steps += 1;
        if let Some(f) = observer.as_deref_mut() {
            f(&StepRecord {
                episode,
                step: log.steps,
                obs,
                probs: sample.probs,
                action,
                reward: res.reward,
                outcome: res.outcome,
            });
        }
        obs = res.obs;
        if res.done {
            log.outcome = res.outcome;
            break;
        }
    }
    log.first_contact_step = env.first_contact_step();
    Ok(log)
}

/// `out[e]` is the mean of `flags[max(0, e + 1 - window)..=e]`.
pub fn moving_average(flags: &[bool], window: usize) -> Vec<f64> {
    assert!(window >= 1, "moving average window must be >= 1");
    let mut out = Vec::with_capacity(flags.len());
    let mut hits = 0usize;
    for (e, &f) in flags.iter().enumerate() {
        hits += f as usize;
        if e >= window {
            hits -= flags[e - window] as usize;
        }
        out.push(hits as f64 / window.min(e + 1) as f64);
    }
    out
}

/// Linearly interpolated quantile of unsorted data (`q` in `[0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Smoothed success curves per seed plus their cross-seed summary.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
}

impl LearningCurve {
    /// Seeds with fewer episodes than the longest are ignored past their end.
    pub fn from_flags(seeds: Vec<u64>, flags: &[Vec<bool>], window: usize) -> Self {
        let per_seed: Vec<Vec<f64>> = flags.iter().map(|f| moving_average(f, window)).collect();
        let len = per_seed.iter().map(Vec::len).max().unwrap_or(0);
        let mut mean = Vec::with_capacity(len);
        let mut q25 = Vec::with_capacity(len);
        let mut q75 = Vec::with_capacity(len);
        for e in 0..len {
            let col: Vec<f64> = per_seed.iter().filter_map(|c| c.get(e).copied()).collect();
            mean.push(col.iter().sum::<f64>() / col.len() as f64);
            q25.push(quantile(&col, 0.25));
            q75.push(quantile(&col, 0.75));
        }
        LearningCurve { seeds, per_seed, mean, q25, q75 }
    }

    /// First episode at which the mean curve reaches `threshold`.
    pub fn episodes_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.mean.iter().position(|&m| m >= threshold)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("episode");
        for s in &self.seeds {
            let _ = write!(text, ",seed_{s}");
        }
        text.push_str(",mean,q25,q75\n");
        for e in 0..self.mean.len() {
            let _ = write!(text, "{e}");
            for c in &self.per_seed {
                match c.get(e) {
                    Some(v) => {
                        let _ = write!(text, ",{v}");
                    }
                    None => text.push(','),
                }
            }
            let _ = writeln!(text, ",{},{},{}", self.mean[e], self.q25[e], self.q75[e]);
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Fraction of successes among the last `n` episodes (all if fewer).
pub fn final_success_rate(logs: &[EpisodeLog], n: usize) -> f64 {
    let tail = &logs[logs.len().saturating_sub(n)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().filter(|l| l.success()).count() as f64 / tail.len() as f64
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub logs: Vec<EpisodeLog>,
    pub final_weights: Vec<f64>,
    pub updates_applied: u64,
    /// `(episode, weights in effect when that episode started)`.
    pub snapshots: Vec<(usize, Vec<f64>)>,
    /// Reservoir `W_in` for cross-seed comparison and export.
    pub reservoir: Reservoir,
    /// Success rate of the frozen final policy, when evaluation is enabled.
    pub eval_success: Option<f64>,
}

impl SeedResult {
    pub fn success_flags(&self) -> Vec<bool> {
        self.logs.iter().map(EpisodeLog::success).collect()
    }
}

/// Trains one seed from scratch.
pub fn train_seed(cfg: &RunConfig, seed: u64) -> Result<SeedResult> {
    let wrap = |episode: usize| move |e: Error| Error::Episode { seed, episode, source: Box::new(e) };
    let mut agent = Agent::from_config(cfg, seed).map_err(wrap(0))?;
    let mut env = AirHockeyEnv::new(cfg.preset, cfg.env).map_err(wrap(0))?;
    let n_hidden = cfg.reservoir.n_hidden;
    let mut logs = Vec::with_capacity(cfg.episodes);
    let mut snapshots = Vec::new();

    for episode in 0..cfg.episodes {
        if cfg.snapshot_interval > 0 && episode % cfg.snapshot_interval == 0 {
            snapshots.push((episode, agent.readout.weights().to_vec()));
        }
        let mut rngs = EpisodeRngs::for_episode(seed, episode);
        let log = run_episode(&mut env, &mut agent, &mut rngs, seed, episode, ActionMode::Sample, true, None)
            .map_err(wrap(episode))?;
        logs.push(log);
        if episode % 2 == 1 {
            agent.readout.apply_update().map_err(wrap(episode))?;
        }
    }

    let eval_success = if cfg.eval_episodes > 0 {
        let mut wins = 0;
        for j in 0..cfg.eval_episodes {
            let episode = cfg.episodes + j;
            let mut rngs = EpisodeRngs::for_episode(seed, episode);
            let log = run_episode(&mut env, &mut agent, &mut rngs, seed, episode, ActionMode::Sample, false, None)
                .map_err(wrap(episode))?;
            wins += log.success() as usize;
        }
        Some(wins as f64 / cfg.eval_episodes as f64)
    } else {
        None
    };
    debug_assert_eq!(agent.readout.n_hidden(), n_hidden);

    Ok(SeedResult {
        seed,
        logs,
        final_weights: agent.readout.weights().to_vec(),
        updates_applied: agent.readout.updates_applied(),
        snapshots,
        reservoir: agent.reservoir,
        eval_success,
    })
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub seeds: Vec<SeedResult>,
    pub curve: LearningCurve,
    pub output_dir: Option<PathBuf>,
}

impl TrainingReport {
    pub fn seed(&self, seed: u64) -> Option<&SeedResult> {
        self.seeds.iter().find(|s| s.seed == seed)
    }
}

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const WEIGHTS_DIR: &str = "weights";

pub fn snapshot_path(dir: &Path, seed: u64, episode: usize) -> PathBuf {
    dir.join(WEIGHTS_DIR).join(format!("seed{seed}_ep{episode:05}.csv"))
}

pub fn final_weights_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(WEIGHTS_DIR).join(format!("seed{seed}_final.csv"))
}

/// Trains every seed (in parallel) and, when an output directory is set,
/// writes the manifest, episode log, curve and weight snapshots.
pub fn run_training(cfg: &RunConfig) -> Result<TrainingReport> {
    cfg.validate()?;
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir.join(WEIGHTS_DIR)).map_err(|e| Error::io(dir, e))?;
        write_manifest(dir, cfg)?;
    }

    let seeds: Vec<SeedResult> = cfg.seeds.par_iter().map(|&s| train_seed(cfg, s)).collect::<Result<_>>()?;
    let flags: Vec<Vec<bool>> = seeds.iter().map(SeedResult::success_flags).collect();
    let curve = LearningCurve::from_flags(cfg.seeds.clone(), &flags, CURVE_WINDOW);

    if let Some(dir) = &cfg.output_dir {
        write_episodes_csv(&dir.join(EPISODES_FILE), seeds.iter().flat_map(|s| s.logs.iter()))?;
        curve.write_csv(&dir.join(CURVE_FILE))?;
        for s in &seeds {
            for (e, w) in &s.snapshots {
                write_weights_csv(&snapshot_path(dir, s.seed, *e), w, cfg.reservoir.n_hidden)?;
            }
            write_weights_csv(&final_weights_path(dir, s.seed), &s.final_weights, cfg.reservoir.n_hidden)?;
            if cfg.export_reservoir {
                s.reservoir.export_weights_csv(&dir.join(format!("reservoir_seed{}_weights.csv", s.seed)))?;
                s.reservoir.export_params_csv(&dir.join(format!("reservoir_seed{}_params.csv", s.seed)))?;
            }
        }
    }
    Ok(TrainingReport { seeds, curve, output_dir: cfg.output_dir.clone() })
}

pub fn write_manifest(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let mut text = String::from("# resolved run configuration; pass back with --config to reproduce\n");
    text.push_str(&cfg.to_text());
    let codec = cfg.codec_config();
    let names = ["x_p", "y_p", "v_x", "v_y", "x_ee", "y_ee"];
    for (n, r) in names.iter().zip(codec.ranges.iter()) {
        let _ = writeln!(text, "# encoding {n}: [{}, {}] spacing {}", r.min, r.max, r.spacing());
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

pub const EPISODES_HEADER: &str =
    "seed,episode,outcome,return,steps,action0_count,action1_count,first_contact_step,hidden_spikes";

pub fn write_episodes_csv<'a>(path: &Path, logs: impl IntoIterator<Item = &'a EpisodeLog>) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let write = || -> std::io::Result<()> {
        writeln!(w, "{EPISODES_HEADER}")?;
        for l in logs {
            let contact = l.first_contact_step.map(|s| s.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                l.seed,
                l.episode,
                l.outcome,
                l.total_reward,
                l.steps,
                l.action_counts[0],
                l.action_counts[1],
                contact,
                l.hidden_spikes
            )?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_episodes_csv(path: &Path) -> Result<Vec<EpisodeLog>> {
    use crate::snn::{parse_field, read_csv_rows};
    let mut out = Vec::new();
    for (line, r) in read_csv_rows(path, 7)? {
        let contact = r.get(7).filter(|s| !s.is_empty());
        out.push(EpisodeLog {
            seed: parse_field(path, line, &r[0])?,
            episode: parse_field(path, line, &r[1])?,
            outcome: parse_field(path, line, &r[2])?,
            total_reward: parse_field(path, line, &r[3])?,
            steps: parse_field(path, line, &r[4])?,
            action_counts: [parse_field(path, line, &r[5])?, parse_field(path, line, &r[6])?],
            first_contact_step: contact.map(|s| parse_field(path, line, s)).transpose()?,
            hidden_spikes: match r.get(8) {
                Some(s) if !s.is_empty() => parse_field(path, line, s)?,
                _ => 0,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::PresetName;

    fn small_cfg(preset: PresetName) -> RunConfig {
        let mut cfg = RunConfig::for_preset(preset);
        cfg.reservoir.n_hidden = 64;
        cfg.seeds = vec![1];
        cfg.episodes = 4;
        cfg
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[true, false, true, false], 2), vec![1.0, 0.5, 0.5, 0.5]);
        assert_eq!(moving_average(&[true; 5], 30), vec![1.0; 5]);
        let f = [true, false, false, true];
        assert_eq!(moving_average(&f, 1), vec![1.0, 0.0, 0.0, 1.0]);
        assert!(moving_average(&[], 30).is_empty());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.5), 2.5);
    }

    #[test]
    fn aggregate_is_mean_of_seed_curves() {
        let flags = vec![vec![true, false, true], vec![false, false, true]];
        let c = LearningCurve::from_flags(vec![0, 1], &flags, 2);
        for e in 0..3 {
            assert_eq!(c.mean[e], 0.5 * (c.per_seed[0][e] + c.per_seed[1][e]));
        }
    }

    #[test]
    fn forced_forward_scores_stationary_puck() {
        let cfg = small_cfg(PresetName::C1Stationary);
        let mut agent = Agent::from_config(&cfg, 1).unwrap();
        let mut env = AirHockeyEnv::new(cfg.preset, cfg.env).unwrap();
        let mut rngs = EpisodeRngs::for_episode(1, 0);
        let log = run_episode(&mut env, &mut agent, &mut rngs, 1, 0, ActionMode::Fixed(Action::Forward), false, None)
            .unwrap();
        assert_eq!(log.outcome, Outcome::Success);
        assert_eq!(log.action_counts[0], 0);
        assert!(log.first_contact_step.is_some());
    }

    #[test]
    fn two_episodes_one_update() {
        let mut cfg = small_cfg(PresetName::C3SpeedRange);
        cfg.episodes = 2;
        let r = train_seed(&cfg, 1).unwrap();
        assert_eq!(r.updates_applied, 1);
        cfg.episodes = 5;
        assert_eq!(train_seed(&cfg, 1).unwrap().updates_applied, 2);
    }

    #[test]
    fn episode_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(PresetName::C2LateralConst);
        let r = train_seed(&cfg, 1).unwrap();
        let p = dir.path().join("e.csv");
        write_episodes_csv(&p, &r.logs).unwrap();
        assert_eq!(read_episodes_csv(&p).unwrap(), r.logs);
    }
}
