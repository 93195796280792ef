//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.
//!
//! Set `ACCEPTANCE_ONLY=1,5` to run a subset.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spiking_hockey::cli;
use spiking_hockey::config::RunConfig;
use spiking_hockey::encoding::{PopulationCodec, CENTERS_PER_VARIABLE, N_VARIABLES};
use spiking_hockey::env::{
    Action, AirHockeyEnv, ConditionPreset, EnvConfig, MalletState, PresetName, PuckState, SUBSTEPS_PER_CONTROL,
};
use spiking_hockey::policy::{softmax, ReadoutConfig, ReadoutState};
use spiking_hockey::trainer::{final_success_rate, moving_average, run_training, train_seed, TrainingReport};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

// ---------------------------------------------------------------------------
// Literal double-sum oracle for the readout update and the surrogate it
// ascends. Independent of ReadoutState's incremental path.

struct Episode {
    traces: Vec<Vec<f64>>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
}

fn random_episode(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Episode {
    Episode {
        traces: (0..t).map(|_| (0..n).map(|_| rng.random_range(0.0..5.0)).collect()).collect(),
        actions: (0..t).map(|_| rng.random_range(0..2)).collect(),
        rewards: (0..t).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

fn probs_for(w: &[f64], n: usize, s: &[f64]) -> [f64; 2] {
    let a0: f64 = (0..n).map(|i| w[i] * s[i]).sum();
    let a1: f64 = (0..n).map(|i| w[n + i] * s[i]).sum();
    softmax([a0, a1])
}

/// dW[k,i] = -alpha * sum_t r_t sum_{t'<=t} gamma^(t-t') (pi_k(t') - 1{a(t')=k}) s_i(t')
fn double_sum(ep: &Episode, probs: &[[f64; 2]], n: usize, alpha: f64, gamma: f64) -> Vec<f64> {
    let mut dw = vec![0.0; 2 * n];
    for k in 0..2 {
        for i in 0..n {
            let mut outer = 0.0;
            for t in 0..ep.rewards.len() {
                let mut inner = 0.0;
                for tp in 0..=t {
                    let ind = if ep.actions[tp] == k { 1.0 } else { 0.0 };
                    inner += gamma.powi((t - tp) as i32) * (probs[tp][k] - ind) * ep.traces[tp][i];
                }
                outer += ep.rewards[t] * inner;
            }
            dw[k * n + i] = -alpha * outer;
        }
    }
    dw
}

/// L(W) = sum_t r_t sum_{t'<=t} gamma^(t-t') log pi_{a(t')}(W)
fn surrogate(ep: &Episode, w: &[f64], n: usize, gamma: f64) -> f64 {
    let logp: Vec<f64> = ep
        .traces
        .iter()
        .zip(&ep.actions)
        .map(|(s, &a)| probs_for(w, n, s)[a].ln())
        .collect();
    let mut total = 0.0;
    for t in 0..ep.rewards.len() {
        let mut inner = 0.0;
        for tp in 0..=t {
            inner += gamma.powi((t - tp) as i32) * logp[tp];
        }
        total += ep.rewards[t] * inner;
    }
    total
}

fn incremental(ep: &Episode, w: &[f64], n: usize, cfg: ReadoutConfig) -> (Vec<f64>, Vec<[f64; 2]>) {
    let mut r = ReadoutState::with_weights(w.to_vec(), n, cfg).unwrap();
    r.begin_episode();
    let mut probs = Vec::new();
    for t in 0..ep.rewards.len() {
        let (_, p) = r.probabilities(&ep.traces[t]).unwrap();
        probs.push(p);
        let a = Action::from_index(ep.actions[t]).unwrap();
        r.accumulate_step(&p, a, &ep.traces[t], ep.rewards[t]);
    }
    (r.pending().to_vec(), probs)
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=20);
        let t = rng.random_range(1..=50);
        let cfg = ReadoutConfig { alpha: rng.random_range(1e-4..1.0), gamma: rng.random_range(0.5..=1.0) };
        let ep = random_episode(&mut rng, n, t);
        let w: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-0.3..0.3)).collect();
        let (got, probs) = incremental(&ep, &w, n, cfg);
        let want = double_sum(&ep, &probs, n, cfg.alpha, cfg.gamma);
        for (g, e) in got.iter().zip(&want) {
            worst = worst.max((g - e).abs());
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-10 && elapsed < Duration::from_secs(1),
        format!("max |incremental - double sum| = {worst:.2e} (<= 1e-10), {:.0} ms (< 1 s)", elapsed.as_secs_f64() * 1e3),
    )
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(2..=10);
        let t = rng.random_range(5..=30);
        let cfg = ReadoutConfig { alpha: rng.random_range(0.01..1.0), gamma: rng.random_range(0.8..=1.0) };
        let ep = random_episode(&mut rng, n, t);
        let w: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-0.2..0.2)).collect();
        let (pending, _) = incremental(&ep, &w, n, cfg);
        let mut fd = vec![0.0; 2 * n];
        for j in 0..2 * n {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            fd[j] = cfg.alpha * (surrogate(&ep, &wp, n, cfg.gamma) - surrogate(&ep, &wm, n, cfg.gamma)) / (2.0 * h);
        }
        let num = fd.iter().zip(&pending).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let den = pending.iter().map(|v| v.abs()).fold(0.0, f64::max);
        worst = worst.max(num / den);
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-5 && elapsed < Duration::from_secs(10),
        format!("max relative error vs central differences = {worst:.2e} (<= 1e-5), {:.2} s (< 10 s)", elapsed.as_secs_f64()),
    )
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut env = AirHockeyEnv::new(ConditionPreset::new(PresetName::C1Stationary), EnvConfig::default()).unwrap();
    env.set_mallet(MalletState::at_rest((1.0, 0.0)));
    let (mut walls, mut mallet_hits) = (0u64, 0u64);
    let mut worst: f64 = 0.0;
    let mut drift_violations = 0u64;
    while walls + mallet_hits < 100_000 {
        let speed = rng.random_range(2.0..20.0);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let puck = PuckState {
            x: rng.random_range(0.2..0.8),
            y: rng.random_range(-0.4..0.4),
            vx: speed * angle.cos(),
            vy: speed * angle.sin(),
        };
        env.set_puck(puck);
        let s0 = puck.speed();
        for _ in 0..2000 {
            let before = *env.puck();
            env.integrate_physics(0.001);
            let after = *env.puck();
            if (after.vx, after.vy) != (before.vx, before.vy) {
                let d = (after.x - 1.0).hypot(after.y);
                if d <= 0.08 + 1e-12 {
                    mallet_hits += 1;
                } else {
                    walls += 1;
                }
                worst = worst.max((after.speed() - s0).abs());
            } else {
                let dx = after.x - before.x - before.vx * 0.001;
                let dy = after.y - before.y - before.vy * 0.001;
                if dx.abs() > 1e-12 || dy.abs() > 1e-12 {
                    drift_violations += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-9 && drift_violations == 0 && mallet_hits > 0 && elapsed < Duration::from_secs(5),
        format!(
            "{walls} wall + {mallet_hits} mallet contacts, max |dspeed| = {worst:.2e} (<= 1e-9), \
             {drift_violations} non-ballistic free steps, {:.2} s (< 5 s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad_steps = 0;
    let mut steps = 0;
    for preset in PresetName::ALL {
        let mut env = AirHockeyEnv::new(ConditionPreset::new(preset), EnvConfig::default()).unwrap();
        for _ in 0..20 {
            env.reset(&mut rng);
            loop {
                let before = env.physics_steps();
                let a = if rng.random_bool(0.5) { Action::Home } else { Action::Forward };
                let r = env.step_control(a).unwrap();
                steps += 1;
                if env.physics_steps() - before != SUBSTEPS_PER_CONTROL as u64 {
                    bad_steps += 1;
                }
                if r.done {
                    break;
                }
            }
        }
    }
    let mut cfg = RunConfig::for_preset(PresetName::C3SpeedRange);
    cfg.reservoir.n_hidden = 32;
    let mut schedule_ok = true;
    let mut seen = Vec::new();
    for e in 1..=9 {
        cfg.episodes = e;
        let applied = train_seed(&cfg, 7).unwrap().updates_applied;
        seen.push(applied);
        schedule_ok &= applied == (e / 2) as u64;
    }
    verdict(
        bad_steps == 0 && schedule_ok && SUBSTEPS_PER_CONTROL == 20,
        format!("{steps} control steps, {bad_steps} with != 20 substeps; updates for E=1..9: {seen:?} (floor(E/2))"),
    )
}

fn seed_rates(report: &TrainingReport, tail: usize) -> Vec<f64> {
    report.seeds.iter().map(|s| final_success_rate(&s.logs, tail)).collect()
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let mut cfg = RunConfig::for_preset(PresetName::C1Stationary);
    cfg.episodes = 500;
    cfg.seeds = (0..5).collect();
    cfg.reservoir.n_hidden = 256;
    let rep = run_training(&cfg).unwrap();
    let rates = seed_rates(&rep, 100);
    let good = rates.iter().filter(|&&r| r >= 0.90).count();

    let mut full = RunConfig::for_preset(PresetName::C1Stationary);
    full.episodes = 100;
    full.seeds = vec![0];
    let full_ok = run_training(&full).is_ok();
    let elapsed = start.elapsed();
    verdict(
        good >= 4 && full_ok && elapsed < Duration::from_secs(15 * 60),
        format!(
            "C1 n_hidden=256, final-100 success per seed {:?}: {good}/5 >= 90% (need 4); n_hidden=1020 run ok: {full_ok}; {:.0} s",
            fmt_rates(&rates),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let mut cfg = RunConfig::for_preset(PresetName::C4PosAndSpeed);
    cfg.episodes = 2000;
    cfg.seeds = (0..3).collect();
    let rep = run_training(&cfg).unwrap();
    let rates = seed_rates(&rep, 200);
    let good = rates.iter().filter(|&&r| r >= 0.80).count();
    let elapsed = start.elapsed();
    verdict(
        good >= 2 && elapsed < Duration::from_secs(2 * 3600),
        format!(
            "C4 final-200 success per seed {:?}: {good}/3 >= 80% (need 2); {:.0} s",
            fmt_rates(&rates),
            elapsed.as_secs_f64()
        ),
    )
}

/// Success level used for the episodes-to-threshold comparison.
const RANGE_THRESHOLD: f64 = 0.80;

fn criterion_7() -> Verdict {
    let presets = [PresetName::ENarrow, PresetName::EMedium, PresetName::EWide, PresetName::EExtreme];
    let mut asym = Vec::new();
    let mut reach = Vec::new();
    for p in presets {
        let mut cfg = RunConfig::for_preset(p);
        cfg.episodes = 2000;
        cfg.seeds = (0..3).collect();
        let rep = run_training(&cfg).unwrap();
        let rates = seed_rates(&rep, 200);
        asym.push(rates.iter().sum::<f64>() / rates.len() as f64);
        reach.push(rep.curve.episodes_to_threshold(RANGE_THRESHOLD));
    }
    let ordered = asym.windows(2).all(|w| w[0] >= w[1]);
    let faster = match (reach[0], reach[1]) {
        (Some(n), Some(m)) => n < m,
        (Some(_), None) => true,
        _ => false,
    };
    verdict(
        ordered && faster,
        format!(
            "final-200 success narrow/medium/wide/extreme = {:?} (non-increasing: {ordered}); \
             episodes to {:.0}% narrow {:?} vs medium {:?} (narrow faster: {faster})",
            fmt_rates(&asym),
            RANGE_THRESHOLD * 100.0,
            reach[0],
            reach[1]
        ),
    )
}

fn criterion_8() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let code_a = cli::run_from([
        "spiking-hockey",
        "train",
        "--preset",
        "C4_pos_and_speed",
        "--episodes",
        "40",
        "--seeds",
        "2",
        "--set",
        "reservoir.n_hidden=128",
        "--set",
        "readout.alpha=1e-5",
        "--out",
        a.to_str().unwrap(),
    ]);
    let manifest = a.join("manifest.txt");
    let code_b = cli::run_from([
        "spiking-hockey",
        "train",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    let same = |rel: &str| -> bool {
        match (std::fs::read(a.join(rel)), std::fs::read(b.join(rel))) {
            (Ok(x), Ok(y)) => x == y,
            _ => false,
        }
    };
    let files = ["episodes.csv", "weights/seed0_final.csv", "weights/seed1_final.csv"];
    let identical = files.iter().all(|f| same(f));
    let nontrivial = std::fs::read_to_string(a.join("weights/seed0_final.csv"))
        .map(|s| s.lines().skip(1).any(|l| !l.ends_with(",0")))
        .unwrap_or(false);
    verdict(
        code_a == 0 && code_b == 0 && identical && nontrivial,
        format!("exit codes {code_a}/{code_b}; {files:?} bit-identical: {identical}; weights moved: {nontrivial}"),
    )
}

fn criterion_9() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut argmax_fail = 0;
    let mut sigma_err: f64 = 0.0;
    let mut checked = 0;
    for preset in PresetName::ALL {
        let cfg = RunConfig::for_preset(preset);
        let codec = PopulationCodec::new(&cfg.codec_config()).unwrap();
        let ranges = cfg.codec_config().ranges;
        for _ in 0..1250 {
            let mut vals = [0.0; N_VARIABLES];
            for (v, r) in ranges.iter().enumerate() {
                vals[v] = rng.random_range(r.min..=r.max);
            }
            let rates = codec.encode_values(&vals).unwrap();
            for v in 0..N_VARIABLES {
                let group = &rates[v * CENTERS_PER_VARIABLE..(v + 1) * CENTERS_PER_VARIABLE];
                let centers = codec.centers(v);
                let best = (0..CENTERS_PER_VARIABLE).max_by(|&a, &b| group[a].total_cmp(&group[b])).unwrap();
                let dmin = centers.iter().map(|c| (vals[v] - c).abs()).fold(f64::INFINITY, f64::min);
                if (vals[v] - centers[best]).abs() > dmin + 1e-12 {
                    argmax_fail += 1;
                }
            }
            // One sigma above a random centre of a random variable.
            let v = rng.random_range(0..N_VARIABLES);
            let j = rng.random_range(0..CENTERS_PER_VARIABLE);
            let mut probe = vals;
            probe[v] = codec.centers(v)[j] + codec.sigma(v);
            let r = codec.encode_values(&probe).unwrap()[v * CENTERS_PER_VARIABLE + j];
            sigma_err = sigma_err.max((r - codec.r_max() * (-0.5f64).exp()).abs());
            sigma_err = sigma_err.max(((r / codec.r_max() - 0.6065).abs() - 1e-4).max(0.0));
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        argmax_fail == 0 && sigma_err <= 1e-12 && checked == 10_000 && elapsed < Duration::from_secs(1),
        format!(
            "{checked} observations: {argmax_fail} argmax != nearest centre; one-sigma max error {sigma_err:.1e} (<= 1e-12); {:.0} ms",
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let len = rng.random_range(0..300);
        let p = rng.random_range(0.0..=1.0);
        let flags: Vec<bool> = (0..len).map(|_| rng.random_bool(p)).collect();
        let got = moving_average(&flags, 30);
        let want: Vec<f64> = (0..len)
            .map(|e| {
                let lo = (e + 1usize).saturating_sub(30);
                let w = &flags[lo..=e];
                w.iter().map(|&f| if f { 1.0 } else { 0.0 }).sum::<f64>() / w.len() as f64
            })
            .collect();
        if got != want {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("1000 random sequences, {mismatches} differ from the brute-force window mean"))
}

fn fmt_rates(r: &[f64]) -> Vec<String> {
    r.iter().map(|v| format!("{v:.3}")).collect()
}

fn main() {
    let criteria: [(u32, &str, fn() -> Verdict); 10] = [
        (1, "readout update equals the literal double sum", criterion_1),
        (2, "readout update is alpha * surrogate gradient", criterion_2),
        (3, "physics conserves puck speed", criterion_3),
        (4, "substep and update-schedule exactness", criterion_4),
        (5, "stationary-puck learning", criterion_5),
        (6, "randomised-condition learning", criterion_6),
        (7, "encoding-range trend", criterion_7),
        (8, "train determinism", criterion_8),
        (9, "encoder properties", criterion_9),
        (10, "moving-average correctness", criterion_10),
    ];
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());


    let mut failed = 0;
    for (id, name, f) in criteria {
        if let Some(o) = &only {
            if !o.contains(&id) {
                continue;
            }
        }
        let v = f();
        println!("{} criterion {id:>2} ({name}): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += !v.pass as usize;
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
