//! Deterministic highway and roundabout micro-simulator.
//!
//! Positions are metres in a right-handed world frame, headings are radians
//! counter-clockwise from +x. On the highway traffic drives along +x and lane
//! 0 is the leftmost lane (largest y). The roundabout is a single circulating
//! lane of radius 30 m with four radial arms; the ego enters from the south
//! arm, circulates counter-clockwise and leaves through the north arm.

pub mod geometry;
mod io;
mod render;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use geometry::Rect;
pub use io::{pgm_bytes, write_pgm, TrajectoryLog, TrajectoryRow};
pub use render::{
    cast_lidar, lidar_raster, lidar_to_image, luminance_resample, render_bev, LidarImageSpec, LidarRaster,
    BEV_SIZE,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LANE_WIDTH: f64 = 4.0;
pub const EGO_LENGTH: f64 = 5.0;
pub const EGO_WIDTH: f64 = 2.0;
pub const ROUNDABOUT_RADIUS: f64 = 30.0;
/// Length of the south approach arm the ego starts on.
pub const APPROACH_LENGTH: f64 = 50.0;
/// Minimum centre-to-centre spacing between spawned vehicles along a lane.
pub const SPAWN_GAP: f64 = 20.0;
const SPAWN_BEHIND: f64 = 60.0;
const SPAWN_AHEAD: f64 = 240.0;
const SPAWN_JITTER: f64 = 3.0;
const EGO_START_SPEED: f64 = 25.0;
const ROUNDABOUT_START_SPEED: f64 = 20.0;
const SPEED_STEP: f64 = 5.0;
const HEADWAY: f64 = 2.0;
const EGO_GAIN: f64 = 1.5;
const TRAFFIC_GAIN: f64 = 2.0;
const MAX_ACCEL: f64 = 4.0;
const MAX_BRAKE: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Highway,
    Roundabout,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "highway" => Ok(Scenario::Highway),
            "roundabout" => Ok(Scenario::Roundabout),
            other => Err(Error::Config(format!("unknown scenario `{other}` (expected highway or roundabout)"))),
        }
    }
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Highway => "highway",
            Scenario::Roundabout => "roundabout",
        }
    }
}

/// The discrete meta-actions, in network output order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    LaneLeft = 0,
    Idle = 1,
    LaneRight = 2,
    Faster = 3,
    Slower = 4,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::LaneLeft, Action::Idle, Action::LaneRight, Action::Faster, Action::Slower];

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Usage(format!("action index {i} out of range 0..5")))
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Per-step reward `alpha * speednorm - beta * crash + gamma * lane_change + delta * on_road`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl RewardParams {
    pub fn highway() -> Self {
        RewardParams {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.0,
            delta: 0.0,
            v_min: 20.0,
            v_max: 30.0,
        }
    }

    pub fn roundabout() -> Self {
        RewardParams {
            alpha: 0.2,
            beta: 1.0,
            gamma: 0.05,
            delta: 0.5,
            ..Self::highway()
        }
    }

    pub fn speednorm(&self, v: f64) -> f64 {
        ((v - self.v_min) / (self.v_max - self.v_min)).clamp(0.0, 1.0)
    }

    pub fn reward(&self, v: f64, crashed: bool, lane_changed: bool, on_road: bool) -> f64 {
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        self.alpha * self.speednorm(v) - self.beta * ind(crashed) + self.gamma * ind(lane_changed)
            + self.delta * ind(on_road)
    }
}

pub fn reward_highway(v: f64, crashed: bool) -> f64 {
    RewardParams::highway().reward(v, crashed, false, false)
}

pub fn reward_roundabout(v: f64, crashed: bool, lane_changed: bool, on_road: bool) -> f64 {
    RewardParams::roundabout().reward(v, crashed, lane_changed, on_road)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub lanes: usize,
    pub n_vehicles: usize,
    pub sim_hz: u32,
    pub policy_hz: u32,
    /// Seconds of simulated time per episode.
    pub episode_len: f64,
    /// Half-width of the square BEV window, metres.
    pub bev_fov: f64,
    pub lidar_range: f64,
    pub lidar_beams: usize,
    pub reward: RewardParams,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::highway()
    }
}

impl ScenarioConfig {
    pub fn highway() -> Self {
        ScenarioConfig {
            scenario: Scenario::Highway,
            lanes: 4,
            n_vehicles: 20,
            sim_hz: 15,
            policy_hz: 1,
            episode_len: 40.0,
            bev_fov: 35.0,
            lidar_range: 60.0,
            lidar_beams: 32,
            reward: RewardParams::highway(),
            seed: 0,
        }
    }

    pub fn roundabout() -> Self {
        ScenarioConfig {
            scenario: Scenario::Roundabout,
            lanes: 1,
            n_vehicles: 5,
            reward: RewardParams::roundabout(),
            ..Self::highway()
        }
    }

    pub fn for_scenario(s: Scenario) -> Self {
        match s {
            Scenario::Highway => Self::highway(),
            Scenario::Roundabout => Self::roundabout(),
        }
    }

    /// Parses `key = value` TOML. Missing keys take the defaults of the
    /// scenario named by the `scenario` key (highway when absent).
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse()?;
        Self::from_table(&user)
    }

    pub fn from_table(user: &toml::Table) -> Result<Self> {
        let scenario = match user.get("scenario") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => return Err(Error::Config(format!("`scenario` must be a string, found {other}"))),
            None => Scenario::Highway,
        };
        let mut base = toml::Table::try_from(Self::for_scenario(scenario))
            .map_err(|e| Error::Config(format!("serializing defaults: {e}")))?;
        merge_tables(&mut base, user);
        let cfg: ScenarioConfig = base.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sim_hz == 0 || self.policy_hz == 0 {
            return bad("sim_hz and policy_hz must be positive".into());
        }
        if self.sim_hz % self.policy_hz != 0 {
            return bad(format!("sim_hz {} is not a multiple of policy_hz {}", self.sim_hz, self.policy_hz));
        }
        if self.lanes == 0 {
            return bad("lanes must be at least 1".into());
        }
        if self.scenario == Scenario::Roundabout && self.lanes != 1 {
            return bad(format!("the roundabout has a single lane, got lanes = {}", self.lanes));
        }
        for (name, v) in [
            ("episode_len", self.episode_len),
            ("bev_fov", self.bev_fov),
            ("lidar_range", self.lidar_range),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.lidar_beams == 0 {
            return bad("lidar_beams must be at least 1".into());
        }
        let r = &self.reward;
        if !(r.v_max > r.v_min && r.v_min >= 0.0) {
            return bad(format!("reward speeds need 0 <= v_min < v_max, got {} and {}", r.v_min, r.v_max));
        }
        if ![r.alpha, r.beta, r.gamma, r.delta].iter().all(|v| v.is_finite()) {
            return bad("reward coefficients must be finite".into());
        }
        Ok(())
    }

    pub fn substeps(&self) -> u32 {
        self.sim_hz / self.policy_hz
    }

    /// Decision steps per episode.
    pub fn horizon(&self) -> u64 {
        (self.episode_len * self.policy_hz as f64).round() as u64
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sim_hz as f64
    }

    pub fn lidar_image_spec(&self) -> LidarImageSpec {
        LidarImageSpec {
            d_max: self.lidar_range,
            v_max: self.reward.v_max,
            ..LidarImageSpec::default()
        }
    }
}

fn merge_tables(base: &mut toml::Table, user: &toml::Table) {
    for (k, v) in user {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge_tables(b, u),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub heading: f64,
    pub lane: usize,
    pub length: f64,
    pub width: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, speed: f64, heading: f64, lane: usize) -> Self {
        VehicleState {
            x,
            y,
            speed,
            heading,
            lane,
            length: EGO_LENGTH,
            width: EGO_WIDTH,
        }
    }

    pub fn rect(&self) -> Rect {
        Rect {
            cx: self.x,
            cy: self.y,
            heading: self.heading,
            length: self.length,
            width: self.width,
        }
    }

    pub fn velocity(&self) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        (self.speed * c, self.speed * s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Driver {
    /// Tracks a desired speed and keeps a two-second headway to its leader.
    Follow { desired: f64 },
    /// Constant velocity along the heading; used by scripted scenes.
    Constant,
}

#[derive(Clone, Debug, PartialEq)]
struct TrafficCar {
    state: VehicleState,
    driver: Driver,
    /// Angle on the ring for roundabout traffic.
    phi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LaneChange {
    from_y: f64,
    to_y: f64,
    elapsed: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// `[1, 64, 64]`, values in `[0, 1]`.
    pub bev: Tensor,
    /// `[N, 2]`: normalised distance and radial velocity per beam.
    pub lidar_beams: Tensor,
    pub ego_speed: f64,
    pub ego_heading: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub crashed: bool,
    pub ego_speed: f64,
    pub on_road: bool,
    pub lane_changed: bool,
    /// The action actually executed (invalid lane changes become IDLE).
    pub applied: Action,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    cfg: ScenarioConfig,
    origin: (f64, f64),
    ego: VehicleState,
    target_speed: f64,
    maneuver: Option<LaneChange>,
    /// Arc length along the roundabout route.
    route_s: f64,
    traffic: Vec<TrafficCar>,
    steps: u64,
    crashed: bool,
    done: bool,
}

impl EnvState {
    /// Seeds a fresh episode and returns its first observation.
    pub fn reset(cfg: &ScenarioConfig) -> Result<(EnvState, Observation)> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let state = match cfg.scenario {
            Scenario::Highway => Self::spawn_highway(cfg, &mut rng)?,
            Scenario::Roundabout => Self::spawn_roundabout(cfg, &mut rng)?,
        };
        let obs = state.observe();
        Ok((state, obs))
    }

    fn blank(cfg: &ScenarioConfig, ego: VehicleState) -> EnvState {
        EnvState {
            cfg: cfg.clone(),
            origin: (0.0, 0.0),
            ego,
            target_speed: ego.speed,
            maneuver: None,
            route_s: 0.0,
            traffic: Vec::new(),
            steps: 0,
            crashed: false,
            done: false,
        }
    }

    fn spawn_highway(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<EnvState> {
        let ego_lane = rng.random_range(0..cfg.lanes);
        let ego = VehicleState::new(0.0, lane_center(ego_lane, 0.0), EGO_START_SPEED, 0.0, ego_lane);
        let mut slots = Vec::new();
        let per_lane = ((SPAWN_BEHIND + SPAWN_AHEAD) / SPAWN_GAP) as usize + 1;
        for lane in 0..cfg.lanes {
            for j in 0..per_lane {
                let x = -SPAWN_BEHIND + j as f64 * SPAWN_GAP;
                if lane == ego_lane && x.abs() < SPAWN_GAP {
                    continue;
                }
                slots.push((lane, x));
            }
        }
        if cfg.n_vehicles > slots.len() {
            return Err(Error::Config(format!(
                "cannot place {} vehicles: the {}-lane spawn window holds at most {}",
                cfg.n_vehicles,
                cfg.lanes,
                slots.len()
            )));
        }
        slots.shuffle(rng);
        let mut state = Self::blank(cfg, ego);
        for &(lane, x) in &slots[..cfg.n_vehicles] {
            let jitter = rng.random_range(-SPAWN_JITTER..SPAWN_JITTER);
            let desired = rng.random_range(18.0..24.0);
            state.traffic.push(TrafficCar {
                state: VehicleState::new(x + jitter, lane_center(lane, 0.0), desired, 0.0, lane),
                driver: Driver::Follow { desired },
                phi: 0.0,
            });
        }
        Ok(state)
    }

    fn spawn_roundabout(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<EnvState> {
        let slots = (std::f64::consts::TAU * ROUNDABOUT_RADIUS / SPAWN_GAP) as usize;
        if cfg.n_vehicles > slots {
            return Err(Error::Config(format!(
                "cannot place {} vehicles: the ring holds at most {slots}",
                cfg.n_vehicles
            )));
        }
        let mut ego = VehicleState::new(0.0, 0.0, ROUNDABOUT_START_SPEED, 0.0, 0);
        let (x, y, h) = route_pose(0.0);
        (ego.x, ego.y, ego.heading) = (x, y, h);
        let mut state = Self::blank(cfg, ego);
        let offset = rng.random_range(0.0..std::f64::consts::TAU);
        let mut idx: Vec<usize> = (0..slots).collect();
        idx.shuffle(rng);
        for &j in &idx[..cfg.n_vehicles] {
            let phi = offset + j as f64 * std::f64::consts::TAU / slots as f64;
            let desired = rng.random_range(15.0..20.0);
            let mut car = TrafficCar {
                state: VehicleState::new(0.0, 0.0, desired, 0.0, 0),
                driver: Driver::Follow { desired },
                phi,
            };
            place_on_ring(&mut car, (0.0, 0.0));
            state.traffic.push(car);
        }
        Ok(state)
    }

    /// A hand-built scene: the ego plus constant-velocity vehicles.
    pub fn scripted(cfg: &ScenarioConfig, ego: VehicleState, others: Vec<VehicleState>) -> Result<EnvState> {
        cfg.validate()?;
        if cfg.scenario != Scenario::Highway {
            return Err(Error::Usage("scripted scenes are highway-only".into()));
        }
        if ego.lane >= cfg.lanes {
            return Err(Error::Usage(format!("ego lane {} outside 0..{}", ego.lane, cfg.lanes)));
        }
        let mut state = Self::blank(cfg, ego);
        state.traffic = others
            .into_iter()
            .map(|s| TrafficCar {
                state: s,
                driver: Driver::Constant,
                phi: 0.0,
            })
            .collect();
        Ok(state)
    }

    /// The same scene shifted rigidly by `(dx, dy)`, road included.
    pub fn translated(&self, dx: f64, dy: f64) -> EnvState {
        let mut s = self.clone();
        s.origin = (s.origin.0 + dx, s.origin.1 + dy);
        s.ego.x += dx;
        s.ego.y += dy;
        if let Some(m) = &mut s.maneuver {
            m.from_y += dy;
            m.to_y += dy;
        }
        for c in &mut s.traffic {
            c.state.x += dx;
            c.state.y += dy;
        }
        s
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn ego(&self) -> &VehicleState {
        &self.ego
    }

    pub fn traffic(&self) -> impl Iterator<Item = &VehicleState> {
        self.traffic.iter().map(|c| &c.state)
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn target_speed(&self) -> f64 {
        self.target_speed
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn crashed(&self) -> bool {
        self.crashed
    }

    pub fn observe(&self) -> Observation {
        Observation {
            bev: render_bev(self, self.cfg.bev_fov),
            lidar_beams: cast_lidar(self, self.cfg.lidar_beams, self.cfg.lidar_range),
            ego_speed: self.ego.speed,
            ego_heading: self.ego.heading,
        }
    }

    /// Whether `(x, y)` lies on the road surface.
    pub fn on_road_at(&self, x: f64, y: f64) -> bool {
        road_kind(&self.cfg, x - self.origin.0, y - self.origin.1, 0.0).0
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let action = Action::from_index(action)?;
        if self.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let applied = self.apply(action);
        let dt = self.cfg.dt();
        for _ in 0..self.cfg.substeps() {
            self.advance(dt);
            if self.collides() {
                self.crashed = true;
                break;
            }
        }
        self.steps += 1;
        self.done = self.crashed || self.steps >= self.cfg.horizon();
        let on_road = self.on_road_at(self.ego.x, self.ego.y);
        let lane_changed = matches!(applied, Action::LaneLeft | Action::LaneRight);
        let reward = self.cfg.reward.reward(self.ego.speed, self.crashed, lane_changed, on_road);
        Ok(StepOutcome {
            obs: self.observe(),
            reward,
            done: self.done,
            info: StepInfo {
                crashed: self.crashed,
                ego_speed: self.ego.speed,
                on_road,
                lane_changed,
                applied,
            },
        })
    }

    fn apply(&mut self, action: Action) -> Action {
        let v_max = self.cfg.reward.v_max;
        match action {
            Action::Faster => {
                self.target_speed = (self.target_speed + SPEED_STEP).clamp(0.0, v_max);
                action
            }
            Action::Slower => {
                self.target_speed = (self.target_speed - SPEED_STEP).clamp(0.0, v_max);
                action
            }
            Action::Idle => action,
            Action::LaneLeft | Action::LaneRight => {
                let lane = self.ego.lane;
                let target = match action {
                    Action::LaneLeft => lane.checked_sub(1),
                    _ => Some(lane + 1).filter(|&l| l < self.cfg.lanes),
                };
                match target {
                    Some(t) if self.cfg.scenario == Scenario::Highway && self.maneuver.is_none() => {
                        self.maneuver = Some(LaneChange {
                            from_y: self.ego.y,
                            to_y: lane_center(t, self.origin.1),
                            elapsed: 0,
                        });
                        self.ego.lane = t;
                        action
                    }
                    _ => Action::Idle,
                }
            }
        }
    }

    fn advance(&mut self, dt: f64) {
        // Traffic reacts to the pre-step scene, then everyone moves.
        let accels: Vec<f64> = (0..self.traffic.len()).map(|i| self.traffic_accel(i)).collect();
        for (car, a) in self.traffic.iter_mut().zip(accels) {
            car.state.speed = (car.state.speed + a * dt).max(0.0);
            match self.cfg.scenario {
                Scenario::Highway => {
                    let (vx, vy) = car.state.velocity();
                    car.state.x += vx * dt;
                    car.state.y += vy * dt;
                }
                Scenario::Roundabout => {
                    car.phi += car.state.speed * dt / ROUNDABOUT_RADIUS;
                    place_on_ring(car, self.origin);
                }
            }
        }
        let a = (EGO_GAIN * (self.target_speed - self.ego.speed)).clamp(-MAX_BRAKE, MAX_ACCEL);
        self.ego.speed = (self.ego.speed + a * dt).max(0.0);
        match self.cfg.scenario {
            Scenario::Highway => self.advance_highway_ego(dt),
            Scenario::Roundabout => {
                self.route_s += self.ego.speed * dt;
                let (x, y, h) = route_pose(self.route_s);
                self.ego.x = x + self.origin.0;
                self.ego.y = y + self.origin.1;
                self.ego.heading = h;
            }
        }
    }

    fn advance_highway_ego(&mut self, dt: f64) {
        self.ego.x += self.ego.speed * dt;
        let duration = self.cfg.sim_hz;
        let Some(m) = &mut self.maneuver else {
            self.ego.heading = 0.0;
            return;
        };
        m.elapsed += 1;
        let s = m.elapsed as f64 / duration as f64;
        let dy = m.to_y - m.from_y;
        self.ego.y = m.from_y + dy * (3.0 * s * s - 2.0 * s * s * s);
        if m.elapsed >= duration {
            self.ego.y = m.to_y;
            self.ego.heading = 0.0;
            self.maneuver = None;
        } else {
            let lateral = dy * (6.0 * s - 6.0 * s * s) / (duration as f64 * dt);
            self.ego.heading = lateral.atan2(self.ego.speed.max(1e-6));
        }
    }

    fn traffic_accel(&self, i: usize) -> f64 {
        let car = &self.traffic[i];
        let Driver::Follow { desired } = car.driver else {
            return 0.0;
        };
        let v = car.state.speed;
        let mut target = desired;
        if let Some((gap, leader_v)) = self.leader(i) {
            let safe = HEADWAY * v;
            if gap < safe {
                target = target.min(leader_v * (gap / safe).max(0.0));
            }
        }
        (TRAFFIC_GAIN * (target - v)).clamp(-MAX_BRAKE, MAX_ACCEL)
    }

    /// Bumper-to-bumper gap and speed of the nearest vehicle ahead in the
    /// same lane (highway) or on the ring (roundabout), the ego included.
    fn leader(&self, i: usize) -> Option<(f64, f64)> {
        let me = &self.traffic[i];
        let mut best: Option<(f64, f64)> = None;
        let mut consider = |gap: f64, v: f64| {
            if best.is_none_or(|(g, _)| gap < g) {
                best = Some((gap, v));
            }
        };
        match self.cfg.scenario {
            Scenario::Highway => {
                let (fx, fy) = (me.state.heading.cos(), me.state.heading.sin());
                let others = self
                    .traffic
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, c)| &c.state)
                    .chain(std::iter::once(&self.ego));
                for o in others {
                    let (dx, dy) = (o.x - me.state.x, o.y - me.state.y);
                    let ahead = dx * fx + dy * fy;
                    let side = -dx * fy + dy * fx;
                    if ahead > 0.0 && side.abs() < (me.state.width + o.width) / 2.0 + 0.5 {
                        consider(ahead - (me.state.length + o.length) / 2.0, o.speed);
                    }
                }
            }
            Scenario::Roundabout => {
                let tau = std::f64::consts::TAU;
                let arc = |phi: f64| (phi - me.phi).rem_euclid(tau) * ROUNDABOUT_RADIUS;
                for (j, c) in self.traffic.iter().enumerate() {
                    if j != i {
                        consider(arc(c.phi) - (me.state.length + c.state.length) / 2.0, c.state.speed);
                    }
                }
                if let Some(phi) = route_ring_angle(self.route_s) {
                    consider(arc(phi) - (me.state.length + self.ego.length) / 2.0, self.ego.speed);
                }
            }
        }
        best
    }

    fn collides(&self) -> bool {
        let ego = self.ego.rect();
        let reach = self.ego.length + 10.0;
        self.traffic.iter().any(|c| {
            (c.state.x - self.ego.x).abs() < reach && (c.state.y - self.ego.y).abs() < reach && ego.overlaps(&c.state.rect())
        })
    }
}

pub(crate) fn lane_center(lane: usize, origin_y: f64) -> f64 {
    origin_y - lane as f64 * LANE_WIDTH
}

fn place_on_ring(car: &mut TrafficCar, origin: (f64, f64)) {
    car.phi = car.phi.rem_euclid(std::f64::consts::TAU);
    let (s, c) = car.phi.sin_cos();
    car.state.x = origin.0 + ROUNDABOUT_RADIUS * c;
    car.state.y = origin.1 + ROUNDABOUT_RADIUS * s;
    car.state.heading = geometry::wrap_angle(car.phi + std::f64::consts::FRAC_PI_2);
}

/// Ego pose along the roundabout route relative to the ring centre.
fn route_pose(s: f64) -> (f64, f64, f64) {
    let r = ROUNDABOUT_RADIUS;
    let half_pi = std::f64::consts::FRAC_PI_2;
    if s < APPROACH_LENGTH {
        return (0.0, -r - APPROACH_LENGTH + s, half_pi);
    }
    if let Some(phi) = route_ring_angle(s) {
        let (sn, cs) = phi.sin_cos();
        return (r * cs, r * sn, geometry::wrap_angle(phi + half_pi));
    }
    (0.0, r + (s - APPROACH_LENGTH - std::f64::consts::PI * r), half_pi)
}

fn route_ring_angle(s: f64) -> Option<f64> {
    let along = s - APPROACH_LENGTH;
    (along >= 0.0 && along < std::f64::consts::PI * ROUNDABOUT_RADIUS)
        .then(|| -std::f64::consts::FRAC_PI_2 + along / ROUNDABOUT_RADIUS)
}

/// Road membership and distance-to-marking test at a point given relative
/// to the road origin. Returns `(on_road, on_marking)` where markings are
/// lane boundaries within `band / 2`.
pub(crate) fn road_kind(cfg: &ScenarioConfig, qx: f64, qy: f64, band: f64) -> (bool, bool) {
    let half = LANE_WIDTH / 2.0;
    match cfg.scenario {
        Scenario::Highway => {
            let top = half;
            let bottom = half - cfg.lanes as f64 * LANE_WIDTH;
            let on = qy <= top && qy >= bottom;
            let k = ((top - qy) / LANE_WIDTH).round();
            let near = (0.0..=cfg.lanes as f64).contains(&k) && (qy - (top - k * LANE_WIDTH)).abs() < band / 2.0;
            (on, near)
        }
        Scenario::Roundabout => {
            let r = ROUNDABOUT_RADIUS;
            let dist = qx.hypot(qy);
            let ring = (dist - r).abs() <= half;
            let arm = (qx.abs() <= half && qy.abs() >= r) || (qy.abs() <= half && qx.abs() >= r);
            (ring || arm, false)
        }
    }
}
