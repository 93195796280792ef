//! Command-line front end: `train`, `replay`, `report`, `validate-config`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_seeds, RunConfig};
use crate::env::{AirHockeyEnv, PresetName};
use crate::error::{Error, Result};
use crate::policy::{read_weights_csv, ReadoutState};
use crate::snn::Reservoir;
use crate::trainer::{
    final_success_rate, read_episodes_csv, run_episode, run_training, ActionMode, Agent, EpisodeLog, EpisodeRngs,
    LearningCurve, StepRecord, CURVE_WINDOW, EPISODES_FILE, MANIFEST_FILE,
};

/// Environment variable naming the default output root for `train`.
pub const OUTPUT_ROOT_ENV: &str = "SPIKING_HOCKEY_OUT";

#[derive(Debug, Parser)]
#[command(name = "spiking-hockey", version, about = "Spiking reservoir + e-prop readout for simulated air hockey")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one preset over one or more seeds and write run artifacts.
    Train(TrainArgs),
    /// Roll out a frozen weight snapshot and log every control step.
    Replay(ReplayArgs),
    /// Summarise run directories into a success table and curve plots.
    Report(ReportArgs),
    /// Parse a configuration, apply overrides and print the resolved result.
    ValidateConfig(ConfigArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Key-value configuration file (a run manifest works too).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Condition preset; applied before any other key.
    #[arg(long)]
    pub preset: Option<String>,
    /// Dotted `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Number of seeds; runs seeds 0..N.
    #[arg(long, conflicts_with = "seed_list")]
    pub seeds: Option<u64>,
    /// Explicit comma-separated seed list.
    #[arg(long)]
    pub seed_list: Option<String>,
    /// Output directory. Defaults to `$SPIKING_HOCKEY_OUT/<preset>` or
    /// `runs/<preset>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Run directory holding `manifest.txt`.
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Weight snapshot CSV (`action_id,neuron_id,weight`). Omit for zero weights.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Seed whose reservoir and random streams are used.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Index of the first episode; selects the per-episode random streams.
    #[arg(long, default_value_t = 0)]
    pub start_episode: usize,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    /// Reservoir exported by `train` (`output.export_reservoir=true`);
    /// rebuilt from the seed when omitted.
    #[arg(long, requires = "reservoir_params")]
    pub reservoir_weights: Option<PathBuf>,
    #[arg(long, requires = "reservoir_weights")]
    pub reservoir_params: Option<PathBuf>,
    /// Trajectory CSV to write.
    #[arg(long, default_value = "trajectory.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories produced by `train`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Directory for `report.csv` and plots.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
    /// Success level for the episodes-to-threshold column.
    #[arg(long, default_value_t = 0.97)]
    pub threshold: f64,
    /// Episodes at the end of each seed used for the asymptotic success rate.
    #[arg(long, default_value_t = 200)]
    pub tail: usize,
    /// Skip SVG plot output.
    #[arg(long)]
    pub no_plots: bool,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

enum Failure {
    Usage(Error),
    Runtime(Error),
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e)
}

fn runtime(e: Error) -> Failure {
    Failure::Runtime(e)
}

fn dispatch(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Replay(a) => replay(&a),
        Command::Report(a) => report(&a).map_err(runtime),
        Command::ValidateConfig(a) => {
            let cfg = resolve_config(&a).map_err(usage)?;
            cfg.validate().map_err(usage)?;
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

/// Builds a configuration from file, preset flag and overrides, in that order.
pub fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::for_preset(PresetName::C1Stationary),
    };
    if let Some(p) = &args.preset {
        cfg.set("preset", p)?;
    }
    cfg.apply_override_strings(&args.overrides)?;
    Ok(cfg)
}

fn train(a: &TrainArgs) -> std::result::Result<(), Failure> {
    let mut cfg = resolve_config(&a.config).map_err(usage)?;
    if let Some(n) = a.episodes {
        cfg.episodes = n;
    }
    if let Some(n) = a.seeds {
        cfg.seeds = (0..n).collect();
    }
    if let Some(list) = &a.seed_list {
        cfg.seeds = parse_seeds(list).map_err(usage)?;
    }
    if let Some(out) = &a.out {
        cfg.output_dir = Some(out.clone());
    } else if cfg.output_dir.is_none() {
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        cfg.output_dir = Some(root.join(cfg.preset.name.as_str()));
    }
    cfg.validate().map_err(usage)?;

    let report = run_training(&cfg).map_err(runtime)?;
    let dir = cfg.output_dir.as_deref().unwrap_or(Path::new("."));
    println!("preset {} -> {}", cfg.preset.name, dir.display());
    let tail = cfg.episodes.min(100);
    for s in &report.seeds {
        println!(
            "seed {:>4}: success {:.3} (last {tail} episodes), {} updates",
            s.seed,
            final_success_rate(&s.logs, tail),
            s.updates_applied
        );
    }
    Ok(())
}

const TRAJECTORY_HEADER: &str = "episode,step,action,pi0,pi1,reward,outcome,x_p,y_p,v_x,v_y,x_ee,y_ee";

fn replay(a: &ReplayArgs) -> std::result::Result<(), Failure> {
    let mut cargs = a.config.clone();
    if let Some(run) = &a.run {
        if cargs.config.is_none() {
            cargs.config = Some(run.join(MANIFEST_FILE));
        }
    }
    let cfg = resolve_config(&cargs).map_err(usage)?;
    cfg.validate().map_err(usage)?;
    let logs = replay_episodes(&cfg, a).map_err(|e| match e {
        Error::Input(_) | Error::Config(_) | Error::Parse(_) => usage(e),
        other => runtime(other),
    })?;
    for l in &logs {
        println!("episode {:>5}: {} after {} steps, return {:.2}", l.episode, l.outcome, l.steps, l.total_reward);
    }
    Ok(())
}

/// Frozen-policy rollout used by `replay`; returns one log per episode and
/// writes the per-step trajectory CSV.
pub fn replay_episodes(cfg: &RunConfig, a: &ReplayArgs) -> Result<Vec<EpisodeLog>> {
    let n_hidden = cfg.reservoir.n_hidden;
    let res_cfg = cfg.reservoir_for_seed(a.seed);
    let reservoir = match (&a.reservoir_weights, &a.reservoir_params) {
        (Some(w), Some(p)) => Reservoir::import_csv(&res_cfg, w, p)?,
        _ => Reservoir::build(&res_cfg)?,
    };
    let readout = match &a.weights {
        Some(p) => ReadoutState::with_weights(read_weights_csv(p, n_hidden)?, n_hidden, cfg.readout)?,
        None => ReadoutState::new(n_hidden, cfg.readout)?,
    };
    let codec = crate::encoding::PopulationCodec::new(&cfg.codec_config())?;
    let mut agent = Agent::new(codec, reservoir, readout)?;
    let mut env = AirHockeyEnv::new(cfg.preset, cfg.env)?;

    let f = fs::File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut w = BufWriter::new(f);
    let mut io_err: Option<std::io::Error> = None;
    writeln!(w, "{TRAJECTORY_HEADER}").map_err(|e| Error::io(&a.out, e))?;
    let mut logs = Vec::with_capacity(a.episodes);
    for episode in a.start_episode..a.start_episode + a.episodes {
        let mut rngs = EpisodeRngs::for_episode(a.seed, episode);
        let mut sink = |r: &StepRecord| {
            let o = &r.obs;
            let res = writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.episode,
                r.step,
                r.action.index(),
                r.probs[0],
                r.probs[1],
                r.reward,
                r.outcome,
                o.puck.x,
                o.puck.y,
                o.puck.vx,
                o.puck.vy,
                o.x_ee,
                o.y_ee
            );
            if let Err(e) = res {
                io_err.get_or_insert(e);
            }
        };
        let log = run_episode(&mut env, &mut agent, &mut rngs, a.seed, episode, ActionMode::Sample, false, Some(&mut sink))?;
        logs.push(log);
    }
    if let Some(e) = io_err {
        return Err(Error::io(&a.out, e));
    }
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    Ok(logs)
}

/// Aggregate row of the report table.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetSummary {
    pub preset: String,
    pub seeds: usize,
    pub episodes: usize,
    /// Mean over seeds of the success rate in the final `tail` episodes.
    pub asymptotic_success: f64,
    pub episodes_to_threshold: Option<usize>,
    pub curve: LearningCurve,
}

/// Loads run directories, grouping seeds by preset. Unreadable runs are
/// reported on stderr and skipped.
pub fn summarize_runs(runs: &[PathBuf], threshold: f64, tail: usize) -> Result<Vec<PresetSummary>> {
    let mut groups: BTreeMap<String, Vec<(u64, Vec<EpisodeLog>)>> = BTreeMap::new();
    let mut loaded = 0;
    for dir in runs {
        match load_run(dir) {
            Ok((preset, per_seed)) => {
                loaded += 1;
                groups.entry(preset).or_default().extend(per_seed);
            }
            Err(e) => eprintln!("warning: skipping {}: {e}", dir.display()),
        }
    }
    if loaded == 0 {
        return Err(Error::Input("no readable run directories".into()));
    }
    Ok(groups
        .into_iter()
        .map(|(preset, per_seed)| {
            let flags: Vec<Vec<bool>> =
                per_seed.iter().map(|(_, logs)| logs.iter().map(EpisodeLog::success).collect()).collect();
            let seeds = per_seed.iter().map(|(s, _)| *s).collect();
            let curve = LearningCurve::from_flags(seeds, &flags, CURVE_WINDOW);
            let asymptotic_success =
                per_seed.iter().map(|(_, l)| final_success_rate(l, tail)).sum::<f64>() / per_seed.len() as f64;
            PresetSummary {
                preset,
                seeds: per_seed.len(),
                episodes: per_seed.iter().map(|(_, l)| l.len()).max().unwrap_or(0),
                asymptotic_success,
                episodes_to_threshold: curve.episodes_to_threshold(threshold),
                curve,
            }
        })
        .collect())
}

fn load_run(dir: &Path) -> Result<(String, Vec<(u64, Vec<EpisodeLog>)>)> {
    let cfg = RunConfig::from_file(&dir.join(MANIFEST_FILE))?;
    let logs = read_episodes_csv(&dir.join(EPISODES_FILE))?;
    if logs.is_empty() {
        return Err(Error::Input("episodes.csv has no rows".into()));
    }
    let mut per_seed: BTreeMap<u64, Vec<EpisodeLog>> = BTreeMap::new();
    for l in logs {
        per_seed.entry(l.seed).or_default().push(l);
    }
    Ok((cfg.preset.name.to_string(), per_seed.into_iter().collect()))
}

fn report(a: &ReportArgs) -> Result<()> {
    let rows = summarize_runs(&a.runs, a.threshold, a.tail)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;

    let mut csv = String::from("preset,seeds,episodes,asymptotic_success,episodes_to_threshold\n");
    println!("{:<18} {:>5} {:>8} {:>12} {:>14}", "preset", "seeds", "episodes", "final succ.", format!("ep. to {:.0}%", a.threshold * 100.0));
    for r in &rows {
        let ett = r.episodes_to_threshold.map(|e| e.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(csv, "{},{},{},{},{}", r.preset, r.seeds, r.episodes, r.asymptotic_success, ett);
        println!(
            "{:<18} {:>5} {:>8} {:>11.1}% {:>14}",
            r.preset,
            r.seeds,
            r.episodes,
            100.0 * r.asymptotic_success,
            ett
        );
    }
    let path = a.out.join("report.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;

    if !a.no_plots {
        for r in &rows {
            let p = a.out.join(format!("curve_{}.svg", r.preset));
            fs::write(&p, render_svg(std::slice::from_ref(r))).map_err(|e| Error::io(&p, e))?;
        }
        let p = a.out.join("curves.svg");
        fs::write(&p, render_svg(&rows)).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Mean success curves with a shaded inter-quartile band.
pub fn render_svg(rows: &[PresetSummary]) -> String {
    let (w, h, ml, mr, mt, mb) = (720.0, 420.0, 60.0, 160.0, 20.0, 50.0);
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let n = rows.iter().map(|r| r.curve.mean.len()).max().unwrap_or(1).max(2);
    let sx = |e: usize| ml + pw * e as f64 / (n - 1) as f64;
    let sy = |v: f64| mt + ph * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(s, r##"<line x1="{ml}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/>"##, ml + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.0}%</text>"#, ml - 6.0, y + 4.0, v * 100.0);
    }
    for i in 0..=4 {
        let e = (n - 1) * i / 4;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{e}</text>"#, sx(e), h - mb + 18.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">episode</text>"#, ml + pw / 2.0, h - 8.0);
    let _ = writeln!(
        s,
        r#"<text transform="translate(14 {}) rotate(-90)" text-anchor="middle">success ({CURVE_WINDOW}-episode moving average)</text>"#,
        mt + ph / 2.0
    );
    for (k, r) in rows.iter().enumerate() {
        let col = PALETTE[k % PALETTE.len()];
        let c = &r.curve;
        let mut band = String::new();
        for (e, v) in c.q75.iter().enumerate() {
            let _ = write!(band, "{:.2},{:.2} ", sx(e), sy(*v));
        }
        for (e, v) in c.q25.iter().enumerate().rev() {
            let _ = write!(band, "{:.2},{:.2} ", sx(e), sy(*v));
        }
        let _ = writeln!(s, r#"<polygon points="{band}" fill="{col}" fill-opacity="0.2" stroke="none"/>"#);
        let mut line = String::new();
        for (e, v) in c.mean.iter().enumerate() {
            let _ = write!(line, "{:.2},{:.2} ", sx(e), sy(*v));
        }
        let _ = writeln!(s, r#"<polyline points="{line}" fill="none" stroke="{col}" stroke-width="1.5"/>"#);
        let ly = mt + 16.0 * (k as f64 + 1.0);
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="12" height="3" fill="{col}"/>"#, ml + pw + 12.0, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{} (n={})</text>"#, ml + pw + 30.0, r.preset, r.seeds);
    }
    s.push_str("</svg>\n");
    s
}
