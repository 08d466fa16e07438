//! Scenario definition, ground truth and synthetic measurements.
//!
//! Scenarios are TOML documents. Unknown keys are rejected. A minimal file:
//!
//! ```toml
//! surfaces = [[-6.0, 0.0], [10.0, 0.0]]
//!
//! [signal]
//! f_c = 6.0e9
//! beta_bw = 5.0e8
//!
//! [model]
//! period = 0.1
//! sigma_v2 = 1e-3
//!
//! [[anchors]]
//! position = [0.0, 0.0]
//! aperture = { kind = "isotropic", d2 = 1e-2 }
//!
//! [trajectory]
//! kind = "waypoints"
//! steps = 40
//! waypoints = [{ t = 0.0, position = [-1.0, 0.5] }, { t = 4.0, position = [3.0, 1.0] }]
//!
//! [amplitude_model]
//! u_ref = 10.0
//! ```

use nalgebra::{DMatrix, DVector, Vector2};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{BoundsError, Result};
use crate::fim::{
    channel_fim, global_jacobian, global_snapshot_fim, ArrayApertureModel, ChannelFim,
    ComponentOrder, ComponentVariances, GlobalJacobian, SignalParams,
};
use crate::geometry::{
    wrap_angle, AgentPose, Anchor, ChannelParams, MvaPoint, PathComponent, PathGeometry, PathKind,
    SurfaceMap,
};
use crate::layout;
use crate::pcrlb::{gain_matrix, StateSpaceModel};
use crate::rng::{RunStream, TRAJECTORY_STREAM};

fn default_orientation_var() -> f64 {
    10f64.to_radians().powi(2)
}

/// Diagonal prior covariance of the joint state (variances).
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default = "one")]
    pub position: f64,
    #[serde(default = "one")]
    pub velocity: f64,
    #[serde(default = "default_orientation_var")]
    pub orientation: f64,
    #[serde(default = "hundred")]
    pub surface: f64,
}

fn one() -> f64 {
    1.0
}

fn hundred() -> f64 {
    100.0
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            position: 1.0,
            velocity: 1.0,
            orientation: default_orientation_var(),
            surface: 100.0,
        }
    }
}

impl PriorConfig {
    pub fn variances(&self, surface_count: usize) -> DVector<f64> {
        let mut v = DVector::from_element(layout::state_dim(surface_count), self.surface);
        v[0] = self.position;
        v[1] = self.position;
        v[2] = self.velocity;
        v[3] = self.velocity;
        v[layout::ORIENTATION] = self.orientation;
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_runs() -> usize {
    100
}

impl Default for McConfig {
    fn default() -> Self {
        Self { runs: 100, seed: 0 }
    }
}

/// Path amplitude `u(d) = u_ref * (1 m / d) * bounce_loss^bounces`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplitudeModel {
    pub u_ref: f64,
    #[serde(default = "half")]
    pub bounce_loss: f64,
}

fn half() -> f64 {
    0.5
}

impl AmplitudeModel {
    pub fn amplitude(&self, distance: f64, bounces: usize) -> f64 {
        self.u_ref / distance * self.bounce_loss.powi(bounces as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedPoint {
    pub t: f64,
    pub position: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub position: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
    #[serde(default)]
    pub orientation: f64,
}

/// Ground-truth trajectory. `steps` is the number of measurement epochs `N`;
/// the generated trajectory has `N + 1` poses, pose 0 being the prior epoch.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    /// Piecewise-linear motion through timed waypoints, sampled every
    /// `period` from the first timestamp. Orientation follows the heading
    /// unless fixed.
    Waypoints {
        steps: usize,
        waypoints: Vec<TimedPoint>,
        #[serde(default)]
        orientation: Option<f64>,
    },
    /// One realization of the NCV model, drawn from the trajectory stream.
    SampledNcv { steps: usize, initial: InitialState },
}

impl TrajectorySpec {
    pub fn steps(&self) -> usize {
        match self {
            TrajectorySpec::Waypoints { steps, .. } | TrajectorySpec::SampledNcv { steps, .. } => {
                *steps
            }
        }
    }

    pub fn needs_rng(&self) -> bool {
        matches!(self, TrajectorySpec::SampledNcv { .. })
    }
}

/// Generate `N + 1` ground-truth poses. The stream is consumed only by the
/// sampled variant.
pub fn generate_trajectory(
    spec: &TrajectorySpec,
    model: &StateSpaceModel,
    rng: Option<&mut RunStream>,
) -> Result<Vec<AgentPose>> {
    match spec {
        TrajectorySpec::Waypoints {
            steps,
            waypoints,
            orientation,
        } => waypoint_trajectory(*steps, waypoints, *orientation, model.period),
        TrajectorySpec::SampledNcv { steps, initial } => {
            let rng = rng.ok_or_else(|| {
                BoundsError::InvalidScenario("sampled trajectory requires a random stream".into())
            })?;
            Ok(sampled_ncv(*steps, initial, model, rng))
        }
    }
}

fn waypoint_trajectory(
    steps: usize,
    waypoints: &[TimedPoint],
    fixed_orientation: Option<f64>,
    period: f64,
) -> Result<Vec<AgentPose>> {
    let first = waypoints
        .first()
        .ok_or_else(|| BoundsError::InvalidScenario("trajectory has no waypoints".into()))?;
    if waypoints.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(BoundsError::InvalidScenario(
            "waypoint timestamps must strictly increase".into(),
        ));
    }
    let last = waypoints.last().unwrap();
    let t_end = first.t + steps as f64 * period;
    if waypoints.len() > 1 && t_end > last.t + 1e-9 * period {
        return Err(BoundsError::InvalidScenario(format!(
            "trajectory needs waypoints up to t = {t_end}, last is at t = {}",
            last.t
        )));
    }
    let to_vec = |p: &[f64; 2]| Vector2::new(p[0], p[1]);
    let mut heading = fixed_orientation.unwrap_or(0.0);
    let mut poses = Vec::with_capacity(steps + 1);
    for n in 0..=steps {
        let t = first.t + n as f64 * period;
        let (position, velocity) = if waypoints.len() == 1 {
            (to_vec(&first.position), Vector2::zeros())
        } else {
            let seg = waypoints
                .windows(2)
                .position(|w| t < w[1].t)
                .unwrap_or(waypoints.len() - 2);
            let (a, b) = (&waypoints[seg], &waypoints[seg + 1]);
            let v = (to_vec(&b.position) - to_vec(&a.position)) / (b.t - a.t);
            (to_vec(&a.position) + v * (t - a.t), v)
        };
        if fixed_orientation.is_none() && velocity.norm() > 0.0 {
            heading = velocity.y.atan2(velocity.x);
        }
        poses.push(AgentPose::new(position, velocity, heading));
    }
    Ok(poses)
}

fn sampled_ncv(
    steps: usize,
    init: &InitialState,
    model: &StateSpaceModel,
    rng: &mut RunStream,
) -> Vec<AgentPose> {
    let g = gain_matrix(model.period);
    let mut pose = AgentPose::new(
        Vector2::new(init.position[0], init.position[1]),
        Vector2::new(init.velocity[0], init.velocity[1]),
        init.orientation,
    );
    let mut poses = vec![pose];
    for _ in 0..steps {
        let w = process_noise_sample(&g, model, rng);
        let p = pose.position + pose.velocity * model.period + Vector2::new(w[0], w[1]);
        let v = pose.velocity + Vector2::new(w[2], w[3]);
        pose = AgentPose::new(p, v, pose.orientation + w[4]);
        poses.push(pose);
    }
    poses
}

/// One draw of the agent part of the process noise: `[G a; o]` with
/// `a ~ N(0, sigma_v2 I)` and `o ~ N(0, sigma_o2)`.
pub fn process_noise_sample(
    g: &DMatrix<f64>,
    model: &StateSpaceModel,
    rng: &mut RunStream,
) -> [f64; 5] {
    let ax = rng.normal(0.0, model.sigma_v2);
    let ay = rng.normal(0.0, model.sigma_v2);
    let o = rng.normal(0.0, model.sigma_o2);
    [
        g[(0, 0)] * ax,
        g[(1, 1)] * ay,
        g[(2, 0)] * ax,
        g[(3, 1)] * ay,
        o,
    ]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisibilityRule {
    /// 1-based anchor id.
    pub anchor: usize,
    /// `los`, `sb:<s>` or `db:<s>,<s'>`.
    pub path: String,
    /// Inclusive step ranges `[first, last]` during which the path exists.
    #[serde(default)]
    pub visible: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisibilityConfig {
    #[serde(default = "yes")]
    pub default_visible: bool,
    #[serde(default)]
    pub rules: Vec<VisibilityRule>,
}

fn yes() -> bool {
    true
}

impl Default for VisibilityConfig {
    fn default() -> Self {
        Self {
            default_visible: true,
            rules: Vec::new(),
        }
    }
}

/// Existence flags `r` per (anchor, component, step). Steps are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilitySchedule {
    steps: usize,
    default_visible: bool,
    overrides: BTreeMap<(usize, PathKind), Vec<bool>>,
}

impl VisibilitySchedule {
    pub fn all_visible(steps: usize) -> Self {
        Self {
            steps,
            default_visible: true,
            overrides: BTreeMap::new(),
        }
    }

    /// Set the steps (1-based) at which `kind` exists at anchor `j` (0-based).
    pub fn set(
        &mut self,
        j: usize,
        kind: PathKind,
        visible_steps: impl IntoIterator<Item = usize>,
    ) -> Result<()> {
        let mut flags = vec![false; self.steps + 1];
        for n in visible_steps {
            if n == 0 || n > self.steps {
                return Err(BoundsError::InvalidScenario(format!(
                    "visibility step {n} outside 1..={}",
                    self.steps
                )));
            }
            flags[n] = true;
        }
        self.overrides.insert((j, kind), flags);
        Ok(())
    }

    pub fn exists(&self, j: usize, kind: &PathKind, n: usize) -> bool {
        match self.overrides.get(&(j, *kind)) {
            Some(flags) => flags.get(n).copied().unwrap_or(false),
            None => self.default_visible,
        }
    }

    /// True when the path is visible at every step.
    pub fn persistent(&self, j: usize, kind: &PathKind) -> bool {
        (1..=self.steps).all(|n| self.exists(j, kind, n))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    pub position: [f64; 2],
    #[serde(default)]
    pub orientation: f64,
    pub aperture: ArrayApertureModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub period: f64,
    #[serde(default)]
    pub sigma_v2: f64,
    #[serde(default)]
    pub sigma_o2: f64,
    #[serde(default)]
    pub sigma_p2: f64,
}

/// Raw scenario document as read from TOML.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub anchors: Vec<AnchorConfig>,
    pub surfaces: Vec<[f64; 2]>,
    pub signal: SignalParams,
    #[serde(default = "default_agent_aperture")]
    pub agent_aperture: ArrayApertureModel,
    pub model: ModelConfig,
    pub trajectory: TrajectorySpec,
    pub amplitude_model: AmplitudeModel,
    #[serde(default)]
    pub visibility: VisibilityConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub mc: McConfig,
}

fn default_agent_aperture() -> ArrayApertureModel {
    ArrayApertureModel::Isotropic { d2: 1e-2 }
}

/// Validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub anchors: Vec<Anchor>,
    pub surfaces: SurfaceMap,
    pub signal: SignalParams,
    pub agent_aperture: ArrayApertureModel,
    pub model: StateSpaceModel,
    pub trajectory: TrajectorySpec,
    pub amplitude_model: AmplitudeModel,
    pub visibility: VisibilitySchedule,
    pub prior: PriorConfig,
    pub mc: McConfig,
    pub order: ComponentOrder,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| BoundsError::InvalidScenario(e.to_string()))?;
        Self::from_config(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BoundsError::InvalidScenario(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_config(cfg: ScenarioConfig) -> Result<Self> {
        let invalid = |m: String| BoundsError::InvalidScenario(m);
        if cfg.anchors.is_empty() {
            return Err(invalid("at least one anchor is required".into()));
        }
        let surfaces = cfg
            .surfaces
            .iter()
            .enumerate()
            .map(|(i, c)| {
                MvaPoint::from_xy(c[0], c[1])
                    .map_err(|e| invalid(format!("surfaces[{}]: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()
            .map(SurfaceMap::new)?;
        let s_count = surfaces.len();
        let anchors = cfg
            .anchors
            .iter()
            .enumerate()
            .map(|(i, a)| {
                a.aperture
                    .validate()
                    .map_err(|e| invalid(format!("anchors[{}]: {e}", i + 1)))?;
                if !(a.position.iter().all(|v| v.is_finite()) && a.orientation.is_finite()) {
                    return Err(invalid(format!("anchors[{}]: non-finite pose", i + 1)));
                }
                Ok(Anchor::new(
                    Vector2::new(a.position[0], a.position[1]),
                    a.orientation,
                    a.aperture,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        cfg.agent_aperture.validate()?;
        if !(cfg.signal.f_c > 0.0 && cfg.signal.beta_bw > 0.0) {
            return Err(invalid(
                "signal.f_c and signal.beta_bw must be positive".into(),
            ));
        }
        let m = cfg.model;
        let model = StateSpaceModel::new(m.period, s_count, m.sigma_v2, m.sigma_o2, m.sigma_p2)?;
        let steps = cfg.trajectory.steps();
        if steps == 0 {
            return Err(invalid("trajectory.steps must be >= 1".into()));
        }
        let a = cfg.amplitude_model;
        if !(a.u_ref > 0.0 && a.bounce_loss > 0.0 && a.bounce_loss <= 1.0) {
            return Err(invalid(
                "amplitude_model needs u_ref > 0 and bounce_loss in (0, 1]".into(),
            ));
        }
        let order = ComponentOrder::canonical(s_count);
        let mut visibility = VisibilitySchedule {
            steps,
            default_visible: cfg.visibility.default_visible,
            overrides: BTreeMap::new(),
        };
        for rule in &cfg.visibility.rules {
            let kind: PathKind = rule.path.parse()?;
            kind.validate(s_count)
                .map_err(|e| invalid(format!("visibility rule '{}': {e}", rule.path)))?;
            if rule.anchor == 0 || rule.anchor > anchors.len() {
                return Err(invalid(format!(
                    "visibility rule anchor {} out of range",
                    rule.anchor
                )));
            }
            let mut visible = Vec::new();
            for r in &rule.visible {
                if r[0] > r[1] {
                    return Err(invalid(format!("visibility range {:?} is reversed", r)));
                }
                visible.extend(r[0]..=r[1]);
            }
            visibility.set(rule.anchor - 1, kind, visible)?;
        }
        let p = cfg.prior;
        for v in [p.position, p.velocity, p.orientation, p.surface] {
            if !(v > 0.0) {
                return Err(invalid(format!(
                    "prior variances must be positive, got {v}"
                )));
            }
        }
        if cfg.mc.runs == 0 {
            return Err(invalid("mc.runs must be >= 1".into()));
        }
        Ok(Self {
            anchors,
            surfaces,
            signal: cfg.signal,
            agent_aperture: cfg.agent_aperture,
            model,
            trajectory: cfg.trajectory,
            amplitude_model: cfg.amplitude_model,
            visibility,
            prior: cfg.prior,
            mc: cfg.mc,
            order,
        })
    }

    pub fn steps(&self) -> usize {
        self.trajectory.steps()
    }

    pub fn surface_count(&self) -> usize {
        self.surfaces.len()
    }

    pub fn state_dim(&self) -> usize {
        layout::state_dim(self.surface_count())
    }

    /// Ground truth poses `0..=N`. Waypoint trajectories use no randomness.
    pub fn ground_truth(&self) -> Result<Vec<AgentPose>> {
        if self.trajectory.needs_rng() {
            let mut stream = RunStream::new(self.mc.seed, TRAJECTORY_STREAM);
            generate_trajectory(&self.trajectory, &self.model, Some(&mut stream))
        } else {
            generate_trajectory(&self.trajectory, &self.model, None)
        }
    }

    /// Joint state vector for a pose with the true map.
    pub fn joint_state(&self, pose: &AgentPose) -> DVector<f64> {
        joint_state(pose, &self.surfaces)
    }

    /// Components seen at anchor `j` (0-based) at step `n`, with
    /// noise-free parameters. Parameters of absent components are zero
    /// placeholders and their geometry is not evaluated.
    pub fn components_at(
        &self,
        j: usize,
        pose: &AgentPose,
        n: usize,
    ) -> Result<(Vec<ChannelParams>, Vec<PathComponent>)> {
        let anchor = &self.anchors[j];
        let mut params = Vec::with_capacity(self.order.len());
        let mut comps = Vec::with_capacity(self.order.len());
        for kind in self.order.kinds() {
            if self.visibility.exists(j, kind, n) {
                let p = PathGeometry::new(pose, anchor, kind, &self.surfaces)
                    .map_err(|e| degenerate_at(e, n, j))?
                    .params();
                let u = self
                    .amplitude_model
                    .amplitude(p.distance, kind.bounce_count());
                params.push(p);
                comps.push(PathComponent::new(*kind, true, u)?);
            } else {
                params.push(ChannelParams {
                    distance: 0.0,
                    aoa: 0.0,
                    aod: 0.0,
                });
                comps.push(PathComponent::new(*kind, false, 0.0)?);
            }
        }
        Ok((params, comps))
    }

    /// Per-anchor Jacobian and channel FIM at the true state of step `n`.
    pub fn anchor_terms(
        &self,
        pose: &AgentPose,
        n: usize,
    ) -> Result<Vec<(GlobalJacobian, ChannelFim)>> {
        (0..self.anchors.len())
            .map(|j| {
                let anchor = &self.anchors[j];
                let (params, comps) = self.components_at(j, pose, n)?;
                let exists: Vec<bool> = comps.iter().map(|c| c.exists).collect();
                let h = global_jacobian(pose, anchor, &self.order, &self.surfaces, &exists)
                    .map_err(|e| degenerate_at(e, n, j))?;
                let lam = channel_fim(
                    &self.order,
                    &params,
                    &comps,
                    &self.signal,
                    &self.agent_aperture,
                    &anchor.aperture,
                )?;
                Ok((h, lam))
            })
            .collect()
    }

    pub fn snapshot_fim(&self, pose: &AgentPose, n: usize) -> Result<DMatrix<f64>> {
        global_snapshot_fim(&self.anchor_terms(pose, n)?)
    }
}

fn degenerate_at(e: BoundsError, n: usize, j: usize) -> BoundsError {
    match e {
        BoundsError::DegenerateGeometry(m) => {
            BoundsError::DegenerateGeometry(format!("step {n}, anchor {}: {m}", j + 1))
        }
        other => other,
    }
}

pub fn joint_state(pose: &AgentPose, map: &SurfaceMap) -> DVector<f64> {
    let mut x = DVector::zeros(layout::state_dim(map.len()));
    x[0] = pose.position.x;
    x[1] = pose.position.y;
    x[2] = pose.velocity.x;
    x[3] = pose.velocity.y;
    x[layout::ORIENTATION] = pose.orientation;
    for (i, p) in map.points().iter().enumerate() {
        let o = layout::surface_offset(i + 1);
        x[o] = p.point().x;
        x[o + 1] = p.point().y;
    }
    x
}

/// Inverse of [`joint_state`] for a state holding `surface_count` surfaces.
pub fn split_state(x: &DVector<f64>, surface_count: usize) -> Result<(AgentPose, SurfaceMap)> {
    let dim = layout::state_dim(surface_count);
    if x.len() != dim {
        return Err(BoundsError::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    let pose = AgentPose::new(
        Vector2::new(x[0], x[1]),
        Vector2::new(x[2], x[3]),
        x[layout::ORIENTATION],
    );
    let points = (1..=surface_count)
        .map(|s| {
            let o = layout::surface_offset(s);
            MvaPoint::from_xy(x[o], x[o + 1]).map_err(|_| {
                BoundsError::DegenerateGeometry(format!("surface {s} collapsed to the origin"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((pose, SurfaceMap::new(points)))
}

/// One noisy observation of a visible component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub n: usize,
    /// 0-based anchor index.
    pub anchor: usize,
    /// Index into the scenario's component order.
    pub component: usize,
    pub kind: PathKind,
    pub z_d: f64,
    pub z_aoa: f64,
    pub z_aod: f64,
    /// Amplitude observation; carries the true amplitude.
    pub z_u: f64,
}

/// Draw measurements for steps `1..=N` of `truth` (which holds poses
/// `0..=N`). Per step, anchors and components are visited in order and
/// each visible component consumes three normals: distance, AoA, AoD.
pub fn generate_measurements(
    scenario: &Scenario,
    truth: &[AgentPose],
    rng: &mut RunStream,
) -> Result<Vec<Measurement>> {
    let mut out = Vec::new();
    for (n, pose) in truth.iter().enumerate().skip(1) {
        for j in 0..scenario.anchors.len() {
            let (params, comps) = scenario.components_at(j, pose, n)?;
            for (k, (p, c)) in params.iter().zip(&comps).enumerate() {
                if !c.exists {
                    continue;
                }
                let v = ComponentVariances::evaluate(
                    c.amplitude,
                    p.aoa,
                    p.aod,
                    &scenario.signal,
                    &scenario.agent_aperture,
                    &scenario.anchors[j].aperture,
                )?;
                let z_d = rng.normal(p.distance, v.distance);
                let z_aoa = wrap_angle(rng.normal(p.aoa, v.aoa));
                let z_aod = wrap_angle(rng.normal(p.aod, v.aod));
                out.push(Measurement {
                    n,
                    anchor: j,
                    component: k,
                    kind: c.kind,
                    z_d,
                    z_aoa,
                    z_aod,
                    z_u: c.amplitude,
                });
            }
        }
    }
    Ok(out)
}
