//! Per-anchor channel Fisher information and its mapping onto the joint
//! agent + map state.
//!
//! The channel parameter vector of anchor `j` stacks `[d | AoA | AoD]` over
//! the `K` components of a [`ComponentOrder`]. Under Gaussian likelihoods with
//! known variances its FIM is diagonal; it is lifted to the joint state with
//! the Jacobian `H_j = d eta_ch^T / d eta_global` and summed over anchors.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{BoundsError, Result};
use crate::geometry::{
    rotation_matrix, rotation_matrix_derivative, transfer_matrix, AgentPose, Anchor, ChannelParams,
    MvaPoint, PathComponent, PathGeometry, PathKind, SurfaceMap, DEGENERACY_THRESHOLD,
};
use crate::layout;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Squared apertures below this are treated as the endfire singularity.
pub const MIN_SQUARED_APERTURE: f64 = 1e-18;

/// Squared array aperture `D^2(psi)` as a function of the local azimuth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrayApertureModel {
    /// Direction-independent aperture, in m^2.
    Isotropic { d2: f64 },
    /// `M` elements with spacing `element_spacing` meters, axis normal to
    /// `broadside` (radians, local frame).
    UniformLinearArray {
        num_elements: usize,
        element_spacing: f64,
        broadside: f64,
    },
}

impl ArrayApertureModel {
    pub fn squared_aperture(&self, psi: f64) -> f64 {
        match *self {
            ArrayApertureModel::Isotropic { d2 } => d2,
            ArrayApertureModel::UniformLinearArray {
                num_elements,
                element_spacing,
                broadside,
            } => {
                let m = num_elements as f64;
                let c = (psi - broadside).cos();
                element_spacing * element_spacing * c * c * m * (m * m - 1.0) / 12.0
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ArrayApertureModel::Isotropic { d2 } if !(d2 > 0.0 && d2.is_finite()) => {
                Err(BoundsError::InvalidScenario(format!(
                    "isotropic aperture must be positive, got {d2}"
                )))
            }
            ArrayApertureModel::UniformLinearArray {
                num_elements,
                element_spacing,
                broadside,
            } if num_elements < 2 || !(element_spacing > 0.0) || !broadside.is_finite() => {
                Err(BoundsError::InvalidScenario(
                    "linear array needs >= 2 elements and positive spacing".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Carrier frequency and RMS bandwidth of the transmit pulse, both in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalParams {
    pub f_c: f64,
    pub beta_bw: f64,
}

/// `c^2 / (8 pi^2 beta^2 u^2)` in m^2.
pub fn ranging_variance(u: f64, beta_bw: f64) -> Result<f64> {
    if !(u > 0.0) {
        return Err(BoundsError::NonPositiveAmplitude(u));
    }
    if !(beta_bw > 0.0) {
        return Err(BoundsError::NonPositiveBandwidth(beta_bw));
    }
    Ok(SPEED_OF_LIGHT.powi(2) / (8.0 * PI * PI * beta_bw * beta_bw * u * u))
}

/// `c^2 / (8 pi^2 f_c^2 u^2 D^2)` in rad^2. The same expression serves AoA
/// (agent array) and AoD (anchor array).
pub fn angle_variance(u: f64, f_c: f64, d2: f64) -> Result<f64> {
    if !(u > 0.0) {
        return Err(BoundsError::NonPositiveAmplitude(u));
    }
    if !(f_c > 0.0) {
        return Err(BoundsError::NonPositiveCarrier(f_c));
    }
    if !(d2 >= MIN_SQUARED_APERTURE) {
        return Err(BoundsError::ZeroAperture(d2));
    }
    Ok(SPEED_OF_LIGHT.powi(2) / (8.0 * PI * PI * f_c * f_c * u * u * d2))
}

/// Measurement variances of one component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentVariances {
    pub distance: f64,
    pub aoa: f64,
    pub aod: f64,
}

impl ComponentVariances {
    pub fn evaluate(
        u: f64,
        aoa: f64,
        aod: f64,
        signal: &SignalParams,
        rx_aperture: &ArrayApertureModel,
        tx_aperture: &ArrayApertureModel,
    ) -> Result<Self> {
        Ok(Self {
            distance: ranging_variance(u, signal.beta_bw)?,
            aoa: angle_variance(u, signal.f_c, rx_aperture.squared_aperture(aoa))?,
            aod: angle_variance(u, signal.f_c, tx_aperture.squared_aperture(aod))?,
        })
    }
}

/// Canonical component set: LOS, single bounces by ascending surface, then
/// double bounces in lexicographic `(s, s')` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentOrder {
    kinds: Vec<PathKind>,
}

impl ComponentOrder {
    pub fn canonical(surface_count: usize) -> Self {
        let mut kinds = vec![PathKind::Los];
        kinds.extend((1..=surface_count).map(PathKind::SingleBounce));
        for s in 1..=surface_count {
            for t in (1..=surface_count).filter(|&t| t != s) {
                kinds.push(PathKind::DoubleBounce(s, t));
            }
        }
        Self { kinds }
    }

    /// Explicit order; kinds must be distinct.
    pub fn from_kinds(kinds: Vec<PathKind>) -> Result<Self> {
        let mut seen = kinds.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != kinds.len() {
            return Err(BoundsError::InvalidScenario(
                "duplicate path component".into(),
            ));
        }
        Ok(Self { kinds })
    }

    /// Number of components `K`.
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kinds(&self) -> &[PathKind] {
        &self.kinds
    }

    pub fn position(&self, kind: &PathKind) -> Option<usize> {
        self.kinds.iter().position(|k| k == kind)
    }

    /// Local parameter dimension `3K`.
    pub fn local_dim(&self) -> usize {
        3 * self.kinds.len()
    }

    pub fn distance_index(&self, k: usize) -> usize {
        k
    }

    pub fn aoa_index(&self, k: usize) -> usize {
        self.kinds.len() + k
    }

    pub fn aod_index(&self, k: usize) -> usize {
        2 * self.kinds.len() + k
    }
}

/// Per-anchor channel FIM. The diagonal form is the default model; a dense
/// PSD matrix may be supplied for correlated channel estimates.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelFim {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl ChannelFim {
    pub fn dim(&self) -> usize {
        match self {
            ChannelFim::Diagonal(d) => d.len(),
            ChannelFim::Dense(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            ChannelFim::Diagonal(d) => DMatrix::from_diagonal(d),
            ChannelFim::Dense(m) => m.clone(),
        }
    }
}

/// Diagonal channel FIM with existence flags absorbed: entries of absent
/// components are zero and their parameters are never inspected.
pub fn channel_fim(
    order: &ComponentOrder,
    params: &[ChannelParams],
    components: &[PathComponent],
    signal: &SignalParams,
    rx_aperture: &ArrayApertureModel,
    tx_aperture: &ArrayApertureModel,
) -> Result<ChannelFim> {
    let k = order.len();
    for len in [params.len(), components.len()] {
        if len != k {
            return Err(BoundsError::DimensionMismatch {
                expected: k,
                got: len,
            });
        }
    }
    let mut diag = DVector::zeros(3 * k);
    for (i, (p, c)) in params.iter().zip(components).enumerate() {
        if !c.exists {
            continue;
        }
        let v = ComponentVariances::evaluate(
            c.amplitude,
            p.aoa,
            p.aod,
            signal,
            rx_aperture,
            tx_aperture,
        )?;
        diag[order.distance_index(i)] = 1.0 / v.distance;
        diag[order.aoa_index(i)] = 1.0 / v.aoa;
        diag[order.aod_index(i)] = 1.0 / v.aod;
    }
    Ok(ChannelFim::Diagonal(diag))
}

/// Gradient of `atan2(r_y, r_x)` with respect to `r`.
pub fn azimuth_gradient(r: &Vector2<f64>) -> Result<Vector2<f64>> {
    let n2 = r.norm_squared();
    if n2.sqrt() < DEGENERACY_THRESHOLD {
        return Err(BoundsError::DegenerateGeometry(
            "azimuth of a zero vector".into(),
        ));
    }
    Ok(Vector2::new(-r.y, r.x) / n2)
}

/// Gradient of `|r|` with respect to `r`.
pub fn distance_gradient(r: &Vector2<f64>) -> Result<Vector2<f64>> {
    let n = r.norm();
    if n < DEGENERACY_THRESHOLD {
        return Err(BoundsError::DegenerateGeometry(
            "distance gradient at zero".into(),
        ));
    }
    Ok(r / n)
}

/// `d (x - mirror_s(a))^T / d p_s` for a fixed point `a`:
/// `2 a p^T / |p|^2 + 2 (a^T p) / |p|^2 H - I`.
pub fn single_bounce_block(a: &Vector2<f64>, p: &MvaPoint) -> Matrix2<f64> {
    let v = p.point();
    let n2 = v.norm_squared();
    (a * v.transpose()) * (2.0 / n2) + p.householder() * (2.0 * a.dot(&v) / n2)
        - Matrix2::identity()
}

/// `d r^T / d p_s` with `r` the virtual-anchor-to-agent vector. Zero when the
/// path does not reflect at `s`.
pub fn mapping_block(
    anchor: &Anchor,
    kind: &PathKind,
    map: &SurfaceMap,
    s: usize,
) -> Result<Matrix2<f64>> {
    kind.validate(map.len())?;
    let p_s = map.get(s)?;
    Ok(match *kind {
        PathKind::SingleBounce(a) if a == s => single_bounce_block(&anchor.position, p_s),
        PathKind::DoubleBounce(first, second) if first == s => {
            single_bounce_block(&anchor.position, p_s) * map.get(second)?.householder()
        }
        PathKind::DoubleBounce(first, second) if second == s => {
            let inner = map.get(first)?.mirror(&anchor.position);
            single_bounce_block(&inner, p_s)
        }
        _ => Matrix2::zeros(),
    })
}

/// `d r_t^T / d p_s` with `r_t` the anchor-to-mirrored-agent vector. The
/// mirrored agent folds reflections in reverse order starting from the agent,
/// so the closed forms mirror [`mapping_block`] with the roles of anchor and
/// agent exchanged and an overall sign flip.
pub fn mirrored_agent_block(
    agent_pos: &Vector2<f64>,
    kind: &PathKind,
    map: &SurfaceMap,
    s: usize,
) -> Result<Matrix2<f64>> {
    kind.validate(map.len())?;
    let p_s = map.get(s)?;
    Ok(match *kind {
        PathKind::SingleBounce(a) if a == s => -single_bounce_block(agent_pos, p_s),
        PathKind::DoubleBounce(first, second) if second == s => {
            -single_bounce_block(agent_pos, p_s) * map.get(first)?.householder()
        }
        PathKind::DoubleBounce(first, second) if first == s => {
            let inner = map.get(second)?.mirror(agent_pos);
            -single_bounce_block(&inner, p_s)
        }
        _ => Matrix2::zeros(),
    })
}

/// Gradients of `(distance, AoA, AoD)` of one component with respect to a
/// 2-D block of the joint state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterColumns {
    pub distance: Vector2<f64>,
    pub aoa: Vector2<f64>,
    pub aod: Vector2<f64>,
}

impl ParameterColumns {
    pub fn zeros() -> Self {
        Self {
            distance: Vector2::zeros(),
            aoa: Vector2::zeros(),
            aod: Vector2::zeros(),
        }
    }
}

/// Columns of the positioning submatrices for one component.
pub fn positioning_submatrices(
    agent: &AgentPose,
    anchor: &Anchor,
    kind: &PathKind,
    map: &SurfaceMap,
) -> Result<ParameterColumns> {
    let g = PathGeometry::new(agent, anchor, kind, map)?;
    positioning_from_geometry(&g, agent, anchor, kind, map)
}

fn positioning_from_geometry(
    g: &PathGeometry,
    agent: &AgentPose,
    anchor: &Anchor,
    kind: &PathKind,
    map: &SurfaceMap,
) -> Result<ParameterColumns> {
    let to_global = transfer_matrix(kind, map)? * rotation_matrix(anchor.orientation);
    let r_n = rotation_matrix(agent.orientation);
    Ok(ParameterColumns {
        distance: to_global * distance_gradient(&g.r_anchor)?,
        aoa: -r_n * azimuth_gradient(&g.r_agent)?,
        aod: to_global * azimuth_gradient(&g.r_anchor)?,
    })
}

/// AoA sensitivity to the agent orientation, evaluated in closed form as
/// `-r^T Rdot(delta_phi) grad atan2(r'')`. Identically -1 in 2-D.
pub fn orientation_submatrix(
    agent: &AgentPose,
    anchor: &Anchor,
    kind: &PathKind,
    map: &SurfaceMap,
) -> Result<f64> {
    let g = PathGeometry::new(agent, anchor, kind, map)?;
    orientation_from_geometry(&g, agent)
}

fn orientation_from_geometry(g: &PathGeometry, agent: &AgentPose) -> Result<f64> {
    let row = -(g.r.transpose() * rotation_matrix_derivative(agent.orientation));
    Ok((row * azimuth_gradient(&g.r_agent)?)[(0, 0)])
}

/// Columns of the mapping submatrices for one component and surface `s`.
pub fn mapping_submatrices(
    agent: &AgentPose,
    anchor: &Anchor,
    kind: &PathKind,
    map: &SurfaceMap,
    s: usize,
) -> Result<ParameterColumns> {
    let g = PathGeometry::new(agent, anchor, kind, map)?;
    mapping_from_geometry(&g, agent, anchor, kind, map, s)
}

fn mapping_from_geometry(
    g: &PathGeometry,
    agent: &AgentPose,
    anchor: &Anchor,
    kind: &PathKind,
    map: &SurfaceMap,
    s: usize,
) -> Result<ParameterColumns> {
    if !kind.involves(s) {
        map.get(s)?;
        return Ok(ParameterColumns::zeros());
    }
    let va_block = mapping_block(anchor, kind, map, s)?;
    let vm_block = mirrored_agent_block(&agent.position, kind, map, s)?;
    let r_j = rotation_matrix(anchor.orientation);
    let r_n = rotation_matrix(agent.orientation);
    Ok(ParameterColumns {
        distance: va_block * transfer_matrix(kind, map)? * r_j * distance_gradient(&g.r_anchor)?,
        aoa: va_block * (-r_n) * azimuth_gradient(&g.r_agent)?,
        // The Householder chain linking r_t to r depends on p_s itself, so the
        // AoD column goes through the mirrored-agent block directly.
        aod: vm_block * r_j * azimuth_gradient(&g.r_anchor)?,
    })
}

/// `(5 + 2S) x 3K` Jacobian of one anchor's channel parameters with respect
/// to the joint state.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalJacobian(pub DMatrix<f64>);

impl GlobalJacobian {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Assemble the global Jacobian of one anchor. Components whose flag in
/// `exists` is false get zero columns and their geometry is not evaluated.
pub fn global_jacobian(
    agent: &AgentPose,
    anchor: &Anchor,
    order: &ComponentOrder,
    map: &SurfaceMap,
    exists: &[bool],
) -> Result<GlobalJacobian> {
    let k = order.len();
    if exists.len() != k {
        return Err(BoundsError::DimensionMismatch {
            expected: k,
            got: exists.len(),
        });
    }
    let s_count = map.len();
    let mut h = DMatrix::zeros(layout::state_dim(s_count), 3 * k);
    for (c, kind) in order.kinds().iter().enumerate() {
        if !exists[c] {
            continue;
        }
        let g = PathGeometry::new(agent, anchor, kind, map)?;
        let (cd, ca, co) = (
            order.distance_index(c),
            order.aoa_index(c),
            order.aod_index(c),
        );
        let pos = positioning_from_geometry(&g, agent, anchor, kind, map)?;
        set_block(&mut h, layout::POSITION, cd, &pos.distance);
        set_block(&mut h, layout::POSITION, ca, &pos.aoa);
        set_block(&mut h, layout::POSITION, co, &pos.aod);
        h[(layout::ORIENTATION, ca)] = orientation_from_geometry(&g, agent)?;
        for s in crate::geometry::bounce_sequence(kind) {
            let m = mapping_from_geometry(&g, agent, anchor, kind, map, s)?;
            let row = layout::surface_offset(s);
            set_block(&mut h, row, cd, &m.distance);
            set_block(&mut h, row, ca, &m.aoa);
            set_block(&mut h, row, co, &m.aod);
        }
    }
    Ok(GlobalJacobian(h))
}

fn set_block(h: &mut DMatrix<f64>, row: usize, col: usize, v: &Vector2<f64>) {
    h[(row, col)] = v.x;
    h[(row + 1, col)] = v.y;
}

/// `sum_j H_j Lambda_j H_j^T`, accumulated in anchor order and symmetrized.
pub fn global_snapshot_fim(terms: &[(GlobalJacobian, ChannelFim)]) -> Result<DMatrix<f64>> {
    let first = terms.first().ok_or(BoundsError::DimensionMismatch {
        expected: 1,
        got: 0,
    })?;
    let n = first.0 .0.nrows();
    let mut total = DMatrix::zeros(n, n);
    for (jac, fim) in terms {
        let h = &jac.0;
        if h.nrows() != n {
            return Err(BoundsError::DimensionMismatch {
                expected: n,
                got: h.nrows(),
            });
        }
        if fim.dim() != h.ncols() {
            return Err(BoundsError::DimensionMismatch {
                expected: h.ncols(),
                got: fim.dim(),
            });
        }
        match fim {
            ChannelFim::Diagonal(d) => {
                let mut weighted = h.clone();
                for (mut col, w) in weighted.column_iter_mut().zip(d.iter()) {
                    col *= *w;
                }
                total += &weighted * h.transpose();
            }
            ChannelFim::Dense(m) => total += h * m * h.transpose(),
        }
    }
    Ok(crate::linalg::symmetrize(&total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::channel_params;
    use approx::assert_relative_eq;

    fn iso() -> ArrayApertureModel {
        ArrayApertureModel::Isotropic { d2: 1e-2 }
    }

    fn anchor(x: f64, y: f64, phi: f64) -> Anchor {
        Anchor::new(Vector2::new(x, y), phi, iso())
    }

    fn pose(x: f64, y: f64, phi: f64) -> AgentPose {
        AgentPose::new(Vector2::new(x, y), Vector2::zeros(), phi)
    }

    fn angle_diff(a: f64, b: f64) -> f64 {
        crate::geometry::wrap_angle(a - b)
    }

    // Central differences of channel_params; independent of the Jacobian code.
    fn fd_columns(f: impl Fn(Vector2<f64>) -> ChannelParams, x0: Vector2<f64>) -> ParameterColumns {
        let mut out = ParameterColumns::zeros();
        for i in 0..2 {
            let h = 1e-6 * x0[i].abs().max(1.0);
            let mut xp = x0;
            let mut xm = x0;
            xp[i] += h;
            xm[i] -= h;
            let (p, m) = (f(xp), f(xm));
            out.distance[i] = (p.distance - m.distance) / (2.0 * h);
            out.aoa[i] = angle_diff(p.aoa, m.aoa) / (2.0 * h);
            out.aod[i] = angle_diff(p.aod, m.aod) / (2.0 * h);
        }
        out
    }

    fn assert_cols_close(a: &ParameterColumns, b: &ParameterColumns, tol: f64) {
        for (x, y) in [(a.distance, b.distance), (a.aoa, b.aoa), (a.aod, b.aod)] {
            let scale = y.norm().max(1e-3);
            assert!((x - y).norm() / scale < tol, "analytic {x:?} vs fd {y:?}");
        }
    }

    #[test]
    fn ranging_variance_examples() {
        let v1 = ranging_variance(1.0, 1e8).unwrap();
        let v2 = ranging_variance(2.0, 1e8).unwrap();
        assert_relative_eq!(v1 / v2, 4.0, epsilon = 1e-12);
        let beta = SPEED_OF_LIGHT / (8f64.sqrt() * PI);
        assert_relative_eq!(ranging_variance(1.0, beta).unwrap(), 1.0, epsilon = 1e-12);
        let mut last = f64::INFINITY;
        for u in [0.5, 1.0, 10.0, 1e3, 1e6] {
            let v = ranging_variance(u, 1e8).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(matches!(
            ranging_variance(0.0, 1e8),
            Err(BoundsError::NonPositiveAmplitude(_))
        ));
        assert!(matches!(
            ranging_variance(1.0, 0.0),
            Err(BoundsError::NonPositiveBandwidth(_))
        ));
    }

    #[test]
    fn angle_variance_examples() {
        let a = angle_variance(1.5, 3e9, 0.02).unwrap();
        let b = angle_variance(1.5, 6e9, 0.02).unwrap();
        assert_relative_eq!(a / b, 4.0, epsilon = 1e-12);
        // c / f_c = 2 pi D  =>  variance = (2 pi D)^2 / (8 pi^2 D^2) = 1/2
        let d: f64 = 0.05;
        let f_c = SPEED_OF_LIGHT / (2.0 * PI * d);
        assert_relative_eq!(
            angle_variance(1.0, f_c, d * d).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert!(matches!(
            angle_variance(1.0, 1e9, 1e-20),
            Err(BoundsError::ZeroAperture(_))
        ));
    }

    #[test]
    fn ula_aperture_zero_at_endfire() {
        let ula = ArrayApertureModel::UniformLinearArray {
            num_elements: 4,
            element_spacing: 0.025,
            broadside: 0.0,
        };
        assert_relative_eq!(
            ula.squared_aperture(0.0),
            0.025f64.powi(2) * 5.0,
            epsilon = 1e-15
        );
        assert!(ula.squared_aperture(PI / 2.0) < 1e-18);
        assert!(angle_variance(1.0, 6e9, ula.squared_aperture(PI / 2.0)).is_err());
    }

    #[test]
    fn canonical_order() {
        let o = ComponentOrder::canonical(3);
        assert_eq!(o.len(), 1 + 3 + 6);
        assert_eq!(o.kinds()[0], PathKind::Los);
        assert_eq!(o.kinds()[1], PathKind::SingleBounce(1));
        assert_eq!(o.kinds()[4], PathKind::DoubleBounce(1, 2));
        assert_eq!(o.kinds()[9], PathKind::DoubleBounce(3, 2));
        assert_eq!(
            (o.distance_index(2), o.aoa_index(2), o.aod_index(2)),
            (2, 12, 22)
        );
        assert!(ComponentOrder::from_kinds(vec![PathKind::Los, PathKind::Los]).is_err());
    }

    #[test]
    fn channel_fim_existence_zeroing() {
        let order =
            ComponentOrder::from_kinds(vec![PathKind::Los, PathKind::SingleBounce(1)]).unwrap();
        let sig = SignalParams {
            f_c: 6e9,
            beta_bw: SPEED_OF_LIGHT / (8f64.sqrt() * PI) * 10.0,
        };
        // sigma_d^2 = 0.01 at u = 1
        let p = ChannelParams {
            distance: 1.0,
            aoa: 0.1,
            aod: 0.2,
        };
        let comps = [
            PathComponent::new(PathKind::Los, true, 1.0).unwrap(),
            PathComponent::new(PathKind::SingleBounce(1), false, 1.0).unwrap(),
        ];
        let fim = channel_fim(&order, &[p, p], &comps, &sig, &iso(), &iso()).unwrap();
        let ChannelFim::Diagonal(d) = fim else {
            panic!()
        };
        assert_relative_eq!(d[0], 100.0, epsilon = 1e-9);
        for i in [1, 3, 5] {
            assert_eq!(d[i], 0.0);
        }

        let none = [
            PathComponent::new(PathKind::Los, false, 1.0).unwrap(),
            PathComponent::new(PathKind::SingleBounce(1), false, 1.0).unwrap(),
        ];
        let ChannelFim::Diagonal(z) =
            channel_fim(&order, &[p, p], &none, &sig, &iso(), &iso()).unwrap()
        else {
            panic!()
        };
        assert!(z.iter().all(|v| *v == 0.0));

        let scaled = [
            PathComponent::new(PathKind::Los, true, 3.0).unwrap(),
            PathComponent::new(PathKind::SingleBounce(1), false, 3.0).unwrap(),
        ];
        let ChannelFim::Diagonal(s) =
            channel_fim(&order, &[p, p], &scaled, &sig, &iso(), &iso()).unwrap()
        else {
            panic!()
        };
        for i in 0..6 {
            assert_relative_eq!(s[i], 9.0 * d[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn gradient_examples() {
        assert_relative_eq!(
            azimuth_gradient(&Vector2::new(1.0, 0.0)).unwrap(),
            Vector2::new(0.0, 1.0)
        );
        assert_relative_eq!(
            azimuth_gradient(&Vector2::new(0.0, 2.0)).unwrap(),
            Vector2::new(-0.5, 0.0)
        );
        let r = Vector2::new(3.0, 4.0);
        let h = 1e-6;
        let fd = Vector2::new(
            ((4.0f64).atan2(3.0 + h) - (4.0f64).atan2(3.0 - h)) / (2.0 * h),
            ((4.0 + h).atan2(3.0) - (4.0 - h).atan2(3.0)) / (2.0 * h),
        );
        assert_relative_eq!(azimuth_gradient(&r).unwrap(), fd, epsilon = 1e-7);
        assert_relative_eq!(distance_gradient(&r).unwrap(), Vector2::new(0.6, 0.8));
        let q = Vector2::new(-1.0, 2.0);
        let fd = Vector2::new(
            (Vector2::new(-1.0 + h, 2.0).norm() - Vector2::new(-1.0 - h, 2.0).norm()) / (2.0 * h),
            (Vector2::new(-1.0, 2.0 + h).norm() - Vector2::new(-1.0, 2.0 - h).norm()) / (2.0 * h),
        );
        assert_relative_eq!(distance_gradient(&q).unwrap(), fd, epsilon = 1e-7);
        assert!(azimuth_gradient(&Vector2::zeros()).is_err());
        assert!(distance_gradient(&Vector2::zeros()).is_err());
    }

    #[test]
    fn mapping_block_examples() {
        let map = SurfaceMap::from_coords(&[[2.0, 0.0], [0.5, 3.0]]).unwrap();
        let a = anchor(0.0, 0.0, 0.0);
        assert_eq!(
            mapping_block(&a, &PathKind::Los, &map, 1).unwrap(),
            Matrix2::zeros()
        );
        assert_relative_eq!(
            mapping_block(&a, &PathKind::SingleBounce(1), &map, 1).unwrap(),
            -Matrix2::identity()
        );
        assert_eq!(
            mapping_block(&a, &PathKind::SingleBounce(1), &map, 2).unwrap(),
            Matrix2::zeros()
        );
    }

    #[test]
    fn mapping_block_matches_finite_differences() {
        let map = SurfaceMap::from_coords(&[[4.0, 1.0], [-1.5, 5.0], [1.0, -6.0]]).unwrap();
        let a = anchor(0.7, 0.4, 0.3);
        let agent = Vector2::new(1.1, 1.9);
        for (kind, s) in [
            (PathKind::SingleBounce(2), 2),
            (PathKind::DoubleBounce(1, 3), 1),
            (PathKind::DoubleBounce(1, 3), 3),
            (PathKind::DoubleBounce(3, 2), 2),
        ] {
            let analytic = mapping_block(&a, &kind, &map, s).unwrap();
            let analytic_vm = mirrored_agent_block(&agent, &kind, &map, s).unwrap();
            let p0 = map.get(s).unwrap().point();
            for i in 0..2 {
                let h = 1e-6 * p0[i].abs().max(1.0);
                let mut pp = p0;
                let mut pm = p0;
                pp[i] += h;
                pm[i] -= h;
                let mp = map.with_point(s, pp).unwrap();
                let mm = map.with_point(s, pm).unwrap();
                let r =
                    |m: &SurfaceMap| agent - crate::geometry::virtual_anchor(&a, &kind, m).unwrap();
                let rt = |m: &SurfaceMap| {
                    crate::geometry::mirrored_agent(&agent, &kind, m).unwrap() - a.position
                };
                // row i of the transposed Jacobian is d r / d p_s[i]
                let dr = (r(&mp) - r(&mm)) / (2.0 * h);
                let drt = (rt(&mp) - rt(&mm)) / (2.0 * h);
                for c in 0..2 {
                    assert_relative_eq!(analytic[(i, c)], dr[c], epsilon = 1e-6);
                    assert_relative_eq!(analytic_vm[(i, c)], drt[c], epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn positioning_examples() {
        let map = SurfaceMap::from_coords(&[[2.0, 0.0]]).unwrap();
        let a = anchor(0.0, 0.0, 0.0);
        let agent = pose(3.0, 4.0, 0.0);
        let cols = positioning_submatrices(&agent, &a, &PathKind::Los, &map).unwrap();
        assert_relative_eq!(cols.distance, Vector2::new(0.6, 0.8), epsilon = 1e-14);
        assert_relative_eq!(cols.aoa.norm(), 1.0 / 5.0, epsilon = 1e-14);
    }

    #[test]
    fn positioning_matches_finite_differences() {
        let map = SurfaceMap::from_coords(&[[4.0, 1.0], [-1.5, 5.0], [1.0, -6.0]]).unwrap();
        let a = anchor(0.7, 0.4, 2.1);
        let agent = pose(1.1, 1.9, -0.6);
        for kind in ComponentOrder::canonical(3).kinds() {
            let analytic = positioning_submatrices(&agent, &a, kind, &map).unwrap();
            let fd = fd_columns(
                |p| {
                    channel_params(
                        &AgentPose {
                            position: p,
                            ..agent
                        },
                        &a,
                        kind,
                        &map,
                    )
                    .unwrap()
                },
                agent.position,
            );
            assert_cols_close(&analytic, &fd, 1e-6);
        }
    }

    #[test]
    fn orientation_is_minus_one() {
        let map = SurfaceMap::from_coords(&[[4.0, 1.0], [-1.5, 5.0]]).unwrap();
        let a = anchor(0.7, 0.4, 2.1);
        for (i, kind) in ComponentOrder::canonical(2).kinds().iter().enumerate() {
            let agent = pose(1.1 - 0.1 * i as f64, 1.9, -0.6 + 0.5 * i as f64);
            let o = orientation_submatrix(&agent, &a, kind, &map).unwrap();
            assert!((o + 1.0).abs() < 1e-12, "{kind}: {o}");
        }
    }

    #[test]
    fn mapping_examples() {
        let map = SurfaceMap::from_coords(&[[2.0, 0.0]]).unwrap();
        let a = anchor(0.0, 0.0, 0.0);
        let agent = pose(0.3, 2.0, 0.2);
        let los = mapping_submatrices(&agent, &a, &PathKind::Los, &map, 1).unwrap();
        assert_eq!(los, ParameterColumns::zeros());
        let pos = positioning_submatrices(&agent, &a, &PathKind::SingleBounce(1), &map).unwrap();
        let m = mapping_submatrices(&agent, &a, &PathKind::SingleBounce(1), &map, 1).unwrap();
        assert_relative_eq!(m.distance, -pos.distance, epsilon = 1e-14);
    }

    #[test]
    fn mapping_matches_finite_differences() {
        let map = SurfaceMap::from_coords(&[[4.0, 1.0], [-1.5, 5.0], [1.0, -6.0]]).unwrap();
        let a = anchor(0.7, 0.4, 2.1);
        let agent = pose(1.1, 1.9, -0.6);
        for kind in ComponentOrder::canonical(3).kinds() {
            for s in 1..=3 {
                let analytic = mapping_submatrices(&agent, &a, kind, &map, s).unwrap();
                let fd = fd_columns(
                    |p| channel_params(&agent, &a, kind, &map.with_point(s, p).unwrap()).unwrap(),
                    map.get(s).unwrap().point(),
                );
                assert_cols_close(&analytic, &fd, 1e-6);
            }
        }
    }

    #[test]
    fn global_jacobian_structure() {
        let map = SurfaceMap::from_coords(&[[4.0, 1.0], [-1.5, 5.0]]).unwrap();
        let order = ComponentOrder::canonical(2);
        let a = anchor(0.7, 0.4, 2.1);
        let agent = pose(1.1, 1.9, -0.6);
        let all = vec![true; order.len()];
        let h = global_jacobian(&agent, &a, &order, &map, &all).unwrap().0;
        let k = order.len();
        assert_eq!(h.shape(), (9, 3 * k));
        for c in 0..3 * k {
            assert_eq!(h[(2, c)], 0.0);
            assert_eq!(h[(3, c)], 0.0);
            if (k..2 * k).contains(&c) {
                assert!((h[(4, c)] + 1.0).abs() < 1e-12);
            } else {
                assert_eq!(h[(4, c)], 0.0);
            }
        }

        let single = SurfaceMap::from_coords(&[[4.0, 1.0]]).unwrap();
        let los_only = ComponentOrder::from_kinds(vec![PathKind::Los]).unwrap();
        let h = global_jacobian(&agent, &a, &los_only, &single, &[true])
            .unwrap()
            .0;
        assert!(h.rows(5, 2).iter().all(|v| *v == 0.0));

        let mut some = all.clone();
        some[1] = false;
        let h = global_jacobian(&agent, &a, &order, &map, &some).unwrap().0;
        for c in [1, k + 1, 2 * k + 1] {
            assert!(h.column(c).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn snapshot_fim_additivity() {
        let map = SurfaceMap::from_coords(&[[4.0, 1.0], [-1.5, 5.0]]).unwrap();
        let order = ComponentOrder::canonical(2);
        let a = anchor(0.7, 0.4, 2.1);
        let agent = pose(1.1, 1.9, -0.6);
        let all = vec![true; order.len()];
        let h = global_jacobian(&agent, &a, &order, &map, &all).unwrap();
        let lam = ChannelFim::Diagonal(DVector::from_fn(3 * order.len(), |i, _| 1.0 + i as f64));
        let one = global_snapshot_fim(&[(h.clone(), lam.clone())]).unwrap();
        let two =
            global_snapshot_fim(&[(h.clone(), lam.clone()), (h.clone(), lam.clone())]).unwrap();
        assert_relative_eq!(two, one.clone() * 2.0, max_relative = 1e-14);
        assert!(crate::linalg::is_psd(&one, 1e-10));

        let dense = global_snapshot_fim(&[(h.clone(), ChannelFim::Dense(lam.to_dense()))]).unwrap();
        assert_relative_eq!(dense, one, max_relative = 1e-12);

        let zero = ChannelFim::Diagonal(DVector::zeros(3 * order.len()));
        assert!(global_snapshot_fim(&[(h.clone(), zero)])
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));

        let bad = ChannelFim::Diagonal(DVector::zeros(4));
        assert!(matches!(
            global_snapshot_fim(&[(h, bad)]),
            Err(BoundsError::DimensionMismatch { .. })
        ));
    }
}
