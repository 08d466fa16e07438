//! Specular-reflection geometry in 2-D.
//!
//! A flat surface is encoded by its master virtual anchor (MVA): the mirror
//! image of the global origin about the surface line. With `p` the MVA and
//! `u = p / |p|`, the surface is `{x : u^T x = |p| / 2}` and reflecting a point
//! about it is the affine map `x -> H x + p`, `H = I - 2 u u^T`.
//!
//! Paths are LOS, single-bounce or double-bounce. A double bounce `(s, s')`
//! reflects first at `s` (anchor side) and then at `s'` (agent side). The
//! virtual anchor folds the reflections over that sequence starting from the
//! anchor; the mirrored agent folds them in reverse starting from the agent.
//! Surface ids are 1-based throughout.

use nalgebra::{Matrix2, Vector2};
use std::f64::consts::PI;
use std::fmt;

use crate::error::{BoundsError, Result};
use crate::fim::ArrayApertureModel;

/// Direction vectors shorter than this are treated as degenerate.
pub const DEGENERACY_THRESHOLD: f64 = 1e-9;

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = x.sin().atan2(x.cos());
    // atan2 returns -pi for the negative branch cut; fold it onto +pi.
    if y <= -PI {
        PI
    } else {
        y
    }
}

/// Counter-clockwise rotation by `phi`.
pub fn rotation_matrix(phi: f64) -> Matrix2<f64> {
    let (s, c) = phi.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Derivative of [`rotation_matrix`] with respect to the angle.
pub fn rotation_matrix_derivative(phi: f64) -> Matrix2<f64> {
    let (s, c) = phi.sin_cos();
    Matrix2::new(-s, -c, c, -s)
}

/// Master virtual anchor of one flat surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvaPoint(Vector2<f64>);

impl MvaPoint {
    pub fn new(p: Vector2<f64>) -> Result<Self> {
        if !p.iter().all(|v| v.is_finite()) || p.norm() < DEGENERACY_THRESHOLD {
            return Err(BoundsError::DegenerateSurface([p.x, p.y]));
        }
        Ok(Self(p))
    }

    pub fn from_xy(x: f64, y: f64) -> Result<Self> {
        Self::new(Vector2::new(x, y))
    }

    pub fn point(&self) -> Vector2<f64> {
        self.0
    }

    /// Unit normal of the surface, pointing away from the origin.
    pub fn normal(&self) -> Vector2<f64> {
        self.0 / self.0.norm()
    }

    /// Householder reflection `I - 2 p p^T / |p|^2`.
    pub fn householder(&self) -> Matrix2<f64> {
        householder(self)
    }

    /// Reflect `x` about the surface.
    pub fn mirror(&self, x: &Vector2<f64>) -> Vector2<f64> {
        mirror_point(x, self)
    }
}

pub fn householder(p: &MvaPoint) -> Matrix2<f64> {
    let v = p.0;
    Matrix2::identity() - (v * v.transpose()) * (2.0 / v.norm_squared())
}

pub fn mirror_point(x: &Vector2<f64>, p: &MvaPoint) -> Vector2<f64> {
    householder(p) * x + p.0
}

/// The environment map: one MVA point per surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMap {
    points: Vec<MvaPoint>,
}

impl SurfaceMap {
    pub fn new(points: Vec<MvaPoint>) -> Self {
        Self { points }
    }

    pub fn from_coords(coords: &[[f64; 2]]) -> Result<Self> {
        coords
            .iter()
            .map(|c| MvaPoint::from_xy(c[0], c[1]))
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Surface by 1-based id.
    pub fn get(&self, s: usize) -> Result<&MvaPoint> {
        if s == 0 || s > self.points.len() {
            return Err(BoundsError::InvalidSurfaceIndex {
                index: s,
                count: self.points.len(),
            });
        }
        Ok(&self.points[s - 1])
    }

    pub fn points(&self) -> &[MvaPoint] {
        &self.points
    }

    /// Copy of the map with surface `s` (1-based) moved to `p`.
    pub fn with_point(&self, s: usize, p: Vector2<f64>) -> Result<Self> {
        self.get(s)?;
        let mut points = self.points.clone();
        points[s - 1] = MvaPoint::new(p)?;
        Ok(Self { points })
    }
}

/// Physical anchor with a known pose and array.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub position: Vector2<f64>,
    pub orientation: f64,
    pub aperture: ArrayApertureModel,
}

impl Anchor {
    pub fn new(position: Vector2<f64>, orientation: f64, aperture: ArrayApertureModel) -> Self {
        Self {
            position,
            orientation: wrap_angle(orientation),
            aperture,
        }
    }
}

/// Kinematic agent state `[p, v, delta_phi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentPose {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub orientation: f64,
}

impl AgentPose {
    pub fn new(position: Vector2<f64>, velocity: Vector2<f64>, orientation: f64) -> Self {
        Self {
            position,
            velocity,
            orientation: wrap_angle(orientation),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(self.velocity.iter())
            .all(|v| v.is_finite())
            && self.orientation.is_finite()
    }
}

/// Propagation path type. Surface ids are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PathKind {
    Los,
    SingleBounce(usize),
    /// First reflection at `.0` (anchor side), second at `.1` (agent side).
    DoubleBounce(usize, usize),
}

impl PathKind {
    pub fn bounce_count(&self) -> usize {
        match self {
            PathKind::Los => 0,
            PathKind::SingleBounce(_) => 1,
            PathKind::DoubleBounce(..) => 2,
        }
    }

    /// Check surface ids against a map of `surface_count` surfaces.
    pub fn validate(&self, surface_count: usize) -> Result<()> {
        let check = |s: usize| {
            if s == 0 || s > surface_count {
                Err(BoundsError::InvalidSurfaceIndex {
                    index: s,
                    count: surface_count,
                })
            } else {
                Ok(())
            }
        };
        match *self {
            PathKind::Los => Ok(()),
            PathKind::SingleBounce(s) => check(s),
            PathKind::DoubleBounce(s, t) => {
                check(s)?;
                check(t)?;
                if s == t {
                    Err(BoundsError::RepeatedSurface(s))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn involves(&self, s: usize) -> bool {
        bounce_sequence(self).contains(&s)
    }
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathKind::Los => write!(f, "los"),
            PathKind::SingleBounce(s) => write!(f, "sb:{s}"),
            PathKind::DoubleBounce(s, t) => write!(f, "db:{s},{t}"),
        }
    }
}

impl std::str::FromStr for PathKind {
    type Err = BoundsError;

    /// Parses `los`, `sb:<s>` or `db:<s>,<s'>`.
    fn from_str(text: &str) -> Result<Self> {
        let bad = || BoundsError::InvalidScenario(format!("unrecognized path '{text}'"));
        let text = text.trim();
        if text.eq_ignore_ascii_case("los") {
            return Ok(PathKind::Los);
        }
        let (tag, rest) = text.split_once(':').ok_or_else(bad)?;
        let ids = rest
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        match (tag.trim().to_ascii_lowercase().as_str(), ids.as_slice()) {
            ("sb", [s]) => Ok(PathKind::SingleBounce(*s)),
            ("db", [s, t]) => Ok(PathKind::DoubleBounce(*s, *t)),
            _ => Err(bad()),
        }
    }
}

/// One multipath component seen at an anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    pub kind: PathKind,
    pub exists: bool,
    /// Normalized amplitude (square root of the component SNR).
    pub amplitude: f64,
}

impl PathComponent {
    pub fn new(kind: PathKind, exists: bool, amplitude: f64) -> Result<Self> {
        if exists && !(amplitude > 0.0) {
            return Err(BoundsError::NonPositiveAmplitude(amplitude));
        }
        if amplitude < 0.0 {
            return Err(BoundsError::NonPositiveAmplitude(amplitude));
        }
        Ok(Self {
            kind,
            exists,
            amplitude,
        })
    }
}

/// Surfaces visited by the path, anchor side first.
pub fn bounce_sequence(kind: &PathKind) -> Vec<usize> {
    match *kind {
        PathKind::Los => vec![],
        PathKind::SingleBounce(s) => vec![s],
        PathKind::DoubleBounce(s, t) => vec![s, t],
    }
}

pub fn virtual_anchor(anchor: &Anchor, kind: &PathKind, map: &SurfaceMap) -> Result<Vector2<f64>> {
    kind.validate(map.len())?;
    bounce_sequence(kind)
        .into_iter()
        .try_fold(anchor.position, |x, s| Ok(map.get(s)?.mirror(&x)))
}

pub fn mirrored_agent(
    agent_pos: &Vector2<f64>,
    kind: &PathKind,
    map: &SurfaceMap,
) -> Result<Vector2<f64>> {
    kind.validate(map.len())?;
    bounce_sequence(kind)
        .into_iter()
        .rev()
        .try_fold(*agent_pos, |x, s| Ok(map.get(s)?.mirror(&x)))
}

/// `d r_t^T / d p_n`, the product of Householders mapping the VA-to-agent
/// vector onto the anchor-to-mirrored-agent vector (transposed layout).
/// Identity for LOS, `H_s` for a single bounce and `H_s' H_s` for `(s, s')`.
pub fn transfer_matrix(kind: &PathKind, map: &SurfaceMap) -> Result<Matrix2<f64>> {
    kind.validate(map.len())?;
    bounce_sequence(kind)
        .into_iter()
        .try_fold(Matrix2::identity(), |acc, s| {
            Ok(map.get(s)?.householder() * acc)
        })
}

/// Noise-free channel parameters of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    /// Path length in meters.
    pub distance: f64,
    /// Angle of arrival in the agent frame.
    pub aoa: f64,
    /// Angle of departure in the anchor frame.
    pub aod: f64,
}

/// All intermediate vectors of one path, shared by the channel parameters
/// and their Jacobians.
#[derive(Debug, Clone, Copy)]
pub struct PathGeometry {
    pub virtual_anchor: Vector2<f64>,
    pub mirrored_agent: Vector2<f64>,
    /// Virtual anchor to agent, global frame.
    pub r: Vector2<f64>,
    /// Anchor to mirrored agent, global frame.
    pub r_t: Vector2<f64>,
    /// `r_t` in the anchor frame.
    pub r_anchor: Vector2<f64>,
    /// Agent-to-VA direction in the agent frame.
    pub r_agent: Vector2<f64>,
}

impl PathGeometry {
    pub fn new(
        agent: &AgentPose,
        anchor: &Anchor,
        kind: &PathKind,
        map: &SurfaceMap,
    ) -> Result<Self> {
        let va = virtual_anchor(anchor, kind, map)?;
        let vm = mirrored_agent(&agent.position, kind, map)?;
        let r = agent.position - va;
        let r_t = vm - anchor.position;
        if r.norm() < DEGENERACY_THRESHOLD || r_t.norm() < DEGENERACY_THRESHOLD {
            return Err(BoundsError::DegenerateGeometry(format!(
                "agent at ({:.6}, {:.6}) coincides with the virtual anchor of path {kind}",
                agent.position.x, agent.position.y
            )));
        }
        let r_anchor = rotation_matrix(anchor.orientation).transpose() * r_t;
        let r_agent = -(rotation_matrix(agent.orientation).transpose() * r);
        Ok(Self {
            virtual_anchor: va,
            mirrored_agent: vm,
            r,
            r_t,
            r_anchor,
            r_agent,
        })
    }

    pub fn params(&self) -> ChannelParams {
        ChannelParams {
            distance: self.r.norm(),
            aoa: wrap_angle(self.r_agent.y.atan2(self.r_agent.x)),
            aod: wrap_angle(self.r_anchor.y.atan2(self.r_anchor.x)),
        }
    }
}

pub fn channel_params(
    agent: &AgentPose,
    anchor: &Anchor,
    kind: &PathKind,
    map: &SurfaceMap,
) -> Result<ChannelParams> {
    PathGeometry::new(agent, anchor, kind, map).map(|g| g.params())
}
