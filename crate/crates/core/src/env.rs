//! Planar air-hockey table with a task-space mallet.
//!
//! The physics runs at 1 kHz and the agent acts at 50 Hz: every call to
//! [`AirHockeyEnv::step_control`] advances exactly [`SUBSTEPS_PER_CONTROL`]
//! substeps of [`PHYSICS_DT`] seconds. The puck slides without friction and
//! bounces elastically off the walls and off the mallet, which is treated as
//! an infinite-mass body driven along quintic motion primitives.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

/// Physics integration step, seconds.
pub const PHYSICS_DT: f64 = 0.001;
/// Agent decision period, seconds.
pub const CONTROL_DT: f64 = 0.020;
/// Physics substeps per agent decision.
pub const SUBSTEPS_PER_CONTROL: u32 = 20;

/// Home target (action 0), robot frame.
pub const HOME_TARGET: (f64, f64) = (0.70, 0.0);
/// Forward target (action 1), robot frame.
pub const FORWARD_TARGET: (f64, f64) = (1.50, 0.0);

/// Puck x beyond which a forward-moving puck counts as a goal.
pub const SUCCESS_X: f64 = 1.5;
/// Minimum forward puck speed for the terminal reward.
pub const SUCCESS_VX: f64 = 0.1;
pub const TERMINAL_REWARD: f64 = 20.0;
pub const SHAPING_GAIN: f64 = 0.2;
pub const TIME_COST: f64 = -0.1;

/// Table extents and body radii. `x` runs along the table length away from
/// the robot, `y` across it with the centre line at `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableGeometry {
    pub length_x: f64,
    pub width_y: f64,
    pub puck_radius: f64,
    pub mallet_radius: f64,
    /// Centre distance at contact. Kept as its own field so the reward uses
    /// exactly 0.08 instead of a rounded sum.
    pub contact_dist: f64,
}

impl TableGeometry {
    pub const STANDARD: TableGeometry = TableGeometry {
        length_x: 1.948,
        width_y: 1.038,
        puck_radius: 0.03165,
        mallet_radius: 0.04835,
        contact_dist: 0.08,
    };

    pub fn half_width(&self) -> f64 {
        0.5 * self.width_y
    }
}

impl Default for TableGeometry {
    fn default() -> Self {
        Self::STANDARD
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PuckState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl PuckState {
    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

/// Discrete action: which motion primitive to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Home = 0,
    Forward = 1,
}

impl Action {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        match i {
            0 => Some(Action::Home),
            1 => Some(Action::Forward),
            _ => None,
        }
    }

    pub fn target(self) -> (f64, f64) {
        match self {
            Action::Home => HOME_TARGET,
            Action::Forward => FORWARD_TARGET,
        }
    }
}

/// Rest-matched quintic (minimum-jerk when starting from rest) from the
/// mallet's kinematic state at planning time to a target reached at zero
/// velocity and acceleration after `duration` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivePrimitive {
    pub target: (f64, f64),
    pub t_elapsed: f64,
    pub duration: f64,
    /// Polynomial coefficients `c0 + c1 t + ... + c5 t^5`, one row per axis.
    pub coeffs: [[f64; 6]; 2],
}

impl ActivePrimitive {
    /// Plans from position `p0`, velocity `v0` and acceleration `a0`.
    pub fn plan(p0: (f64, f64), v0: (f64, f64), a0: (f64, f64), target: (f64, f64), duration: f64) -> Self {
        let cx = quintic_coeffs(p0.0, v0.0, a0.0, target.0, duration);
        let cy = quintic_coeffs(p0.1, v0.1, a0.1, target.1, duration);
        ActivePrimitive { target, t_elapsed: 0.0, duration, coeffs: [cx, cy] }
    }

    pub fn is_finished(&self) -> bool {
        self.t_elapsed >= self.duration
    }

    /// Position, velocity and acceleration at the current elapsed time.
    pub fn sample(&self) -> ((f64, f64), (f64, f64), (f64, f64)) {
        if self.is_finished() {
            return (self.target, (0.0, 0.0), (0.0, 0.0));
        }
        let (px, vx, ax) = eval_quintic(&self.coeffs[0], self.t_elapsed);
        let (py, vy, ay) = eval_quintic(&self.coeffs[1], self.t_elapsed);
        ((px, py), (vx, vy), (ax, ay))
    }
}

fn quintic_coeffs(p0: f64, v0: f64, a0: f64, pf: f64, t: f64) -> [f64; 6] {
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    let d = pf - p0;
    [
        p0,
        v0,
        0.5 * a0,
        (20.0 * d - 12.0 * v0 * t - 3.0 * a0 * t2) / (2.0 * t3),
        (-30.0 * d + 16.0 * v0 * t + 3.0 * a0 * t2) / (2.0 * t4),
        (12.0 * d - 6.0 * v0 * t - a0 * t2) / (2.0 * t5),
    ]
}

fn eval_quintic(c: &[f64; 6], t: f64) -> (f64, f64, f64) {
    let p = c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))));
    let v = c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])));
    let a = 2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5]));
    (p, v, a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MalletState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
    pub primitive: Option<ActivePrimitive>,
}

impl MalletState {
    pub fn at_rest(pos: (f64, f64)) -> Self {
        MalletState { x: pos.0, y: pos.1, vx: 0.0, vy: 0.0, ax: 0.0, ay: 0.0, primitive: None }
    }
}

/// Plans the primitive for `action` from the mallet's current state. A
/// request for the target that is already being pursued keeps the running
/// primitive.
pub fn plan_primitive(action: Action, current: &MalletState, duration: f64) -> ActivePrimitive {
    let target = action.target();
    if let Some(p) = current.primitive {
        if p.target == target {
            return p;
        }
    }
    ActivePrimitive::plan(
        (current.x, current.y),
        (current.vx, current.vy),
        (current.ax, current.ay),
        target,
        duration,
    )
}

/// The observation handed to the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnvState {
    pub puck: PuckState,
    pub x_ee: f64,
    pub y_ee: f64,
}

impl EnvState {
    /// `(x_p, y_p, v_x, v_y, x_ee, y_ee)`.
    pub fn to_array(&self) -> [f64; 6] {
        [self.puck.x, self.puck.y, self.puck.vx, self.puck.vy, self.x_ee, self.y_ee]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Running,
    Success,
    OutOfPlay,
    Timeout,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::Success => "success",
            Outcome::OutOfPlay => "out_of_play",
            Outcome::Timeout => "timeout",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "running" => Ok(Outcome::Running),
            "success" => Ok(Outcome::Success),
            "out_of_play" => Ok(Outcome::OutOfPlay),
            "timeout" => Ok(Outcome::Timeout),
            other => Err(Error::Parse(format!("unknown outcome `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub obs: EnvState,
    pub reward: f64,
    pub done: bool,
    pub outcome: Outcome,
}

/// Which branch of the reward fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardCase {
    Terminal,
    Shaping,
    TimeCost,
}

pub fn classify_reward(puck: &PuckState, mallet_pos: (f64, f64)) -> RewardCase {
    if puck.x > SUCCESS_X && puck.vx > SUCCESS_VX {
        RewardCase::Terminal
    } else if (puck.x - mallet_pos.0).hypot(puck.y - mallet_pos.1) <= TableGeometry::STANDARD.contact_dist {
        RewardCase::Shaping
    } else {
        RewardCase::TimeCost
    }
}

/// Per-step reward: goal first, then contact shaping proportional to the
/// forward puck speed, then a constant time cost.
pub fn reward(puck: &PuckState, mallet: &MalletState) -> f64 {
    match classify_reward(puck, (mallet.x, mallet.y)) {
        RewardCase::Terminal => TERMINAL_REWARD,
        RewardCase::Shaping => SHAPING_GAIN * puck.vx,
        RewardCase::TimeCost => TIME_COST,
    }
}

/// Infinite-mass elastic contact. Returns the puck unchanged when the bodies
/// are apart or separating.
pub fn resolve_mallet_collision(puck: &PuckState, mallet: &MalletState, contact_dist: f64) -> PuckState {
    let dx = puck.x - mallet.x;
    let dy = puck.y - mallet.y;
    let dist = dx.hypot(dy);
    if dist > contact_dist {
        return *puck;
    }
    let (nx, ny) = if dist > 0.0 {
        (dx / dist, dy / dist)
    } else {
        // Coincident centres: push along the mallet's direction of travel.
        let s = mallet.vx.hypot(mallet.vy);
        if s > 0.0 {
            (mallet.vx / s, mallet.vy / s)
        } else {
            (1.0, 0.0)
        }
    };
    let rel_n = (puck.vx - mallet.vx) * nx + (puck.vy - mallet.vy) * ny;
    if rel_n >= 0.0 {
        return *puck;
    }
    PuckState {
        x: mallet.x + nx * contact_dist,
        y: mallet.y + ny * contact_dist,
        vx: puck.vx - 2.0 * rel_n * nx,
        vy: puck.vy - 2.0 * rel_n * ny,
    }
}

/// Named task conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PresetName {
    C1Stationary,
    C2LateralConst,
    C3SpeedRange,
    C4PosAndSpeed,
    ENarrow,
    EMedium,
    EWide,
    EExtreme,
}

impl PresetName {
    pub const ALL: [PresetName; 8] = [
        PresetName::C1Stationary,
        PresetName::C2LateralConst,
        PresetName::C3SpeedRange,
        PresetName::C4PosAndSpeed,
        PresetName::ENarrow,
        PresetName::EMedium,
        PresetName::EWide,
        PresetName::EExtreme,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::C1Stationary => "C1_stationary",
            PresetName::C2LateralConst => "C2_lateral_const",
            PresetName::C3SpeedRange => "C3_speed_range",
            PresetName::C4PosAndSpeed => "C4_pos_and_speed",
            PresetName::ENarrow => "E_narrow",
            PresetName::EMedium => "E_medium",
            PresetName::EWide => "E_wide",
            PresetName::EExtreme => "E_extreme",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

/// Puck launch distribution for one experimental condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionPreset {
    pub name: PresetName,
    /// Launch speed bounds, m/s. Equal bounds give a fixed speed.
    pub speed_range: (f64, f64),
    /// Spawn x is drawn uniformly from `spawn_x_center ± spawn_x_window / 2`.
    pub spawn_x_center: f64,
    pub spawn_x_window: f64,
}

impl ConditionPreset {
    pub fn new(name: PresetName) -> Self {
        let (speed_range, spawn_x_window) = match name {
            PresetName::C1Stationary => ((0.0, 0.0), 0.0),
            PresetName::C2LateralConst => ((1.0, 1.0), 0.0),
            PresetName::C3SpeedRange => ((1.0, 1.5), 0.0),
            PresetName::C4PosAndSpeed => ((1.0, 1.5), 0.10),
            PresetName::ENarrow => ((0.7, 0.9), 0.0),
            PresetName::EMedium => ((0.7, 1.2), 0.0),
            PresetName::EWide => ((0.7, 1.5), 0.0),
            PresetName::EExtreme => ((0.5, 2.0), 0.0),
        };
        ConditionPreset { name, speed_range, spawn_x_center: 1.0, spawn_x_window }
    }

    /// Stationary presets park the puck on the centre line in front of the
    /// mallet; every other preset launches it laterally from the near edge.
    pub fn is_stationary(&self) -> bool {
        self.speed_range.1 == 0.0
    }

    pub fn validate(&self, geom: &TableGeometry) -> Result<()> {
        let (lo, hi) = self.speed_range;
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
            return Err(Error::Config(format!("speed range [{lo}, {hi}] must satisfy 0 <= min <= max")));
        }
        if !(self.spawn_x_window >= 0.0) {
            return Err(Error::Config("spawn_x_window must be >= 0".into()));
        }
        let xmin = self.spawn_x_center - 0.5 * self.spawn_x_window;
        let xmax = self.spawn_x_center + 0.5 * self.spawn_x_window;
        if xmin < geom.puck_radius || xmax > geom.length_x - geom.puck_radius {
            return Err(Error::Config(format!("spawn x window [{xmin}, {xmax}] leaves the table")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub max_steps: u32,
    pub primitive_duration: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { max_steps: 150, primitive_duration: 0.4 }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::Config("env.max_steps must be >= 1".into()));
        }
        if !(self.primitive_duration > 0.0 && self.primitive_duration.is_finite()) {
            return Err(Error::Config("env.primitive_duration must be > 0".into()));
        }
        Ok(())
    }
}

/// Wall contacts seen during the current control step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct WallHits {
    side: bool,
    near: bool,
    far: bool,
}

#[derive(Debug, Clone)]
pub struct AirHockeyEnv {
    geometry: TableGeometry,
    config: EnvConfig,
    preset: ConditionPreset,
    puck: PuckState,
    mallet: MalletState,
    steps: u32,
    physics_steps: u64,
    outcome: Outcome,
    first_contact_step: Option<u32>,
    contact_this_step: bool,
    hits: WallHits,
}

impl AirHockeyEnv {
    pub fn new(preset: ConditionPreset, config: EnvConfig) -> Result<Self> {
        Self::with_geometry(preset, config, TableGeometry::STANDARD)
    }

    pub fn with_geometry(preset: ConditionPreset, config: EnvConfig, geometry: TableGeometry) -> Result<Self> {
        preset.validate(&geometry)?;
        config.validate()?;
        let mut env = AirHockeyEnv {
            geometry,
            config,
            preset,
            puck: PuckState::default(),
            mallet: MalletState::at_rest(HOME_TARGET),
            steps: 0,
            physics_steps: 0,
            outcome: Outcome::Running,
            first_contact_step: None,
            contact_this_step: false,
            hits: WallHits::default(),
        };
        env.reset_with_draws(0.5, 0.5);
        Ok(env)
    }

    /// Starts a new episode. Always consumes exactly two uniform draws
    /// (spawn x, then speed) so the stream position does not depend on the
    /// preset.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> EnvState {
        let ux: f64 = rng.random();
        let us: f64 = rng.random();
        self.reset_with_draws(ux, us)
    }

    /// Starts a new episode from explicit unit-interval draws.
    pub fn reset_with_draws(&mut self, u_x: f64, u_speed: f64) -> EnvState {
        let p = &self.preset;
        let x = p.spawn_x_center + p.spawn_x_window * (u_x - 0.5);
        let (lo, hi) = p.speed_range;
        let speed = lo + (hi - lo) * u_speed;
        self.puck = if p.is_stationary() {
            PuckState { x, y: 0.0, vx: 0.0, vy: 0.0 }
        } else {
            let y = -self.geometry.half_width() + self.geometry.puck_radius;
            PuckState { x, y, vx: 0.0, vy: speed }
        };
        self.mallet = MalletState::at_rest(HOME_TARGET);
        self.steps = 0;
        self.outcome = Outcome::Running;
        self.first_contact_step = None;
        self.hits = WallHits::default();
        self.observe()
    }

    pub fn observe(&self) -> EnvState {
        EnvState { puck: self.puck, x_ee: self.mallet.x, y_ee: self.mallet.y }
    }

    pub fn puck(&self) -> &PuckState {
        &self.puck
    }

    pub fn mallet(&self) -> &MalletState {
        &self.mallet
    }

    pub fn geometry(&self) -> &TableGeometry {
        &self.geometry
    }

    pub fn preset(&self) -> &ConditionPreset {
        &self.preset
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// Total physics substeps since construction.
    pub fn physics_steps(&self) -> u64 {
        self.physics_steps
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }

    pub fn first_contact_step(&self) -> Option<u32> {
        self.first_contact_step
    }

    /// Overwrites the puck state. Meant for tests and scripted scenarios.
    pub fn set_puck(&mut self, puck: PuckState) {
        self.puck = puck;
    }

    /// Overwrites the mallet state. Meant for tests and scripted scenarios.
    pub fn set_mallet(&mut self, mallet: MalletState) {
        self.mallet = mallet;
    }

    /// One 50 Hz agent step: replan toward the action's target, integrate
    /// 20 physics substeps, then score the resulting state.
    pub fn step_control(&mut self, action: Action) -> Result<StepResult> {
        if self.outcome != Outcome::Running {
            return Err(Error::EpisodeFinished);
        }
        self.mallet.primitive = Some(plan_primitive(action, &self.mallet, self.config.primitive_duration));
        self.hits = WallHits::default();
        self.contact_this_step = false;
        for _ in 0..SUBSTEPS_PER_CONTROL {
            self.integrate_physics(PHYSICS_DT);
        }
        self.steps += 1;
        if self.contact_this_step && self.first_contact_step.is_none() {
            self.first_contact_step = Some(self.steps);
        }

        let r = reward(&self.puck, &self.mallet);
        self.outcome = if self.puck.x > SUCCESS_X && self.puck.vx > SUCCESS_VX {
            Outcome::Success
        } else if self.hits.side || self.hits.near {
            Outcome::OutOfPlay
        } else if self.steps >= self.config.max_steps {
            Outcome::Timeout
        } else {
            Outcome::Running
        };
        Ok(StepResult { obs: self.observe(), reward: r, done: self.outcome != Outcome::Running, outcome: self.outcome })
    }

    /// Advances mallet and puck by `dt` and resolves contacts.
    pub fn integrate_physics(&mut self, dt: f64) {
        self.advance_mallet(dt);

        let p = &mut self.puck;
        p.x += p.vx * dt;
        p.y += p.vy * dt;

        let before = self.puck;
        self.puck = resolve_mallet_collision(&self.puck, &self.mallet, self.geometry.contact_dist);
        if self.puck != before {
            self.contact_this_step = true;
        }
        self.reflect_walls();
        self.physics_steps += 1;
    }

    fn advance_mallet(&mut self, dt: f64) {
        let Some(mut prim) = self.mallet.primitive else {
            return;
        };
        prim.t_elapsed += dt;
        let ((px, py), (vx, vy), (ax, ay)) = prim.sample();
        let g = &self.geometry;
        let (lo_x, hi_x) = (g.mallet_radius, g.length_x - g.mallet_radius);
        let (lo_y, hi_y) = (-g.half_width() + g.mallet_radius, g.half_width() - g.mallet_radius);
        let m = &mut self.mallet;
        m.x = px;
        m.y = py;
        m.vx = vx;
        m.vy = vy;
        m.ax = ax;
        m.ay = ay;
        if m.x < lo_x || m.x > hi_x {
            m.x = m.x.clamp(lo_x, hi_x);
            m.vx = 0.0;
            m.ax = 0.0;
        }
        if m.y < lo_y || m.y > hi_y {
            m.y = m.y.clamp(lo_y, hi_y);
            m.vy = 0.0;
            m.ay = 0.0;
        }
        m.primitive = Some(prim);
    }

    fn reflect_walls(&mut self) {
        let g = self.geometry;
        let r = g.puck_radius;
        let p = &mut self.puck;
        let (lo_x, hi_x) = (r, g.length_x - r);
        let (lo_y, hi_y) = (-g.half_width() + r, g.half_width() - r);
        if p.x < lo_x {
            p.x = 2.0 * lo_x - p.x;
            p.vx = -p.vx;
            self.hits.near = true;
        } else if p.x > hi_x {
            p.x = 2.0 * hi_x - p.x;
            p.vx = -p.vx;
            self.hits.far = true;
        }
        if p.y < lo_y {
            p.y = 2.0 * lo_y - p.y;
            p.vy = -p.vy;
            self.hits.side = true;
        } else if p.y > hi_y {
            p.y = 2.0 * hi_y - p.y;
            p.vy = -p.vy;
            self.hits.side = true;
        }
    }
}
