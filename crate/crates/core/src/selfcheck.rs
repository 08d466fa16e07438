//! Randomized invariant suite behind `--self-check`.
//!
//! Every check draws its instances from a dedicated random stream, so a
//! failure is reproducible from the seed and the instance index alone.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::Result;
use crate::exec::{map_indexed, Execution};
use crate::fim::{
    channel_fim, global_jacobian, global_snapshot_fim, orientation_submatrix, ArrayApertureModel,
    ComponentOrder, SignalParams,
};
use crate::geometry::{
    channel_params, mirrored_agent, transfer_matrix, wrap_angle, AgentPose, Anchor, MvaPoint,
    PathComponent, PathGeometry, PathKind, SurfaceMap,
};
use crate::layout;
use crate::linalg::min_eigenvalue;
use crate::rng::RunStream;
use crate::scenario::{joint_state, split_state};

pub const JACOBIAN_INSTANCES: usize = 200;
pub const MIRROR_INSTANCES: usize = 1000;
pub const JACOBIAN_TOL: f64 = 1e-6;
pub const ORIENTATION_TOL: f64 = 1e-12;
pub const MIRROR_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-10;

/// Minimum clearance between the agent and any virtual anchor, so that
/// finite differences stay far from the `|r| = 0` singularity.
const MIN_CLEARANCE: f64 = 0.5;

/// One nondegenerate random geometry.
#[derive(Debug, Clone)]
pub struct Instance {
    pub agent: AgentPose,
    pub anchor: Anchor,
    pub map: SurfaceMap,
    /// Path under test; always valid for `map`.
    pub kind: PathKind,
}

fn uniform_in(rng: &mut RunStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

fn random_point(rng: &mut RunStream, half_width: f64) -> Vector2<f64> {
    Vector2::new(
        uniform_in(rng, -half_width, half_width),
        uniform_in(rng, -half_width, half_width),
    )
}

fn random_mva(rng: &mut RunStream) -> MvaPoint {
    // Walls 1-8 m from the origin in any direction.
    let dist = uniform_in(rng, 1.0, 8.0);
    let dir = uniform_in(rng, -PI, PI);
    MvaPoint::new(Vector2::new(dir.cos(), dir.sin()) * dist).expect("nonzero by construction")
}

/// Draw a random path of the requested bounce count.
fn random_kind(rng: &mut RunStream, bounces: usize, surface_count: usize) -> PathKind {
    let pick = |rng: &mut RunStream| {
        1 + ((rng.uniform() * surface_count as f64) as usize).min(surface_count - 1)
    };
    match bounces {
        0 => PathKind::Los,
        1 => PathKind::SingleBounce(pick(rng)),
        _ => {
            let s = pick(rng);
            let mut t = pick(rng);
            while t == s {
                t = pick(rng);
            }
            PathKind::DoubleBounce(s, t)
        }
    }
}

fn clearance_ok(agent: &AgentPose, anchor: &Anchor, map: &SurfaceMap) -> bool {
    ComponentOrder::canonical(map.len())
        .kinds()
        .iter()
        .all(|kind| {
            PathGeometry::new(agent, anchor, kind, map)
                .map(|g| g.r.norm() > MIN_CLEARANCE && g.r_t.norm() > MIN_CLEARANCE)
                .unwrap_or(false)
        })
}

/// Random instance with 1-5 surfaces (at least 2 for double bounces).
/// Rejection sampling guarantees clearance for every path of the map.
pub fn random_instance(rng: &mut RunStream, bounces: usize) -> Instance {
    loop {
        let min_s = if bounces >= 2 { 2 } else { 1 };
        let surface_count = min_s + ((rng.uniform() * (6 - min_s) as f64) as usize).min(5 - min_s);
        let map = SurfaceMap::new((0..surface_count).map(|_| random_mva(rng)).collect());
        let anchor = Anchor::new(
            random_point(rng, 3.0),
            uniform_in(rng, -PI, PI),
            ArrayApertureModel::Isotropic { d2: 1e-2 },
        );
        let agent = AgentPose::new(
            random_point(rng, 3.0),
            random_point(rng, 1.0),
            uniform_in(rng, -PI, PI),
        );
        if !clearance_ok(&agent, &anchor, &map) {
            continue;
        }
        let kind = random_kind(rng, bounces, surface_count);
        return Instance {
            agent,
            anchor,
            map,
            kind,
        };
    }
}

/// Instance `i` of a check: path kinds cycle LOS, single, double.
pub fn nth_instance(seed: u64, i: usize) -> Instance {
    let mut rng = RunStream::new(seed, i as u64);
    random_instance(&mut rng, i % 3)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed violation measure (error, or negative eigenvalue ratio).
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<24} worst {:.3e} (tol {:.0e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.detail
        )
    }
}

/// Fold per-instance `(error, description)` results into one outcome.
fn summarize(
    name: &'static str,
    tolerance: f64,
    results: Vec<Result<(f64, String)>>,
) -> CheckOutcome {
    let total = results.len();
    let mut worst = 0.0_f64;
    let mut worst_desc = String::new();
    let mut failures = 0;
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok((err, desc)) => {
                if !(err <= tolerance) {
                    failures += 1;
                }
                if !(err <= worst) {
                    worst = err;
                    worst_desc = format!("instance {i}: {desc}");
                }
            }
            Err(e) => {
                failures += 1;
                worst = f64::INFINITY;
                worst_desc = format!("instance {i}: {e}");
            }
        }
    }
    CheckOutcome {
        name,
        passed: failures == 0,
        worst,
        tolerance,
        detail: if failures == 0 {
            format!("{total} instances")
        } else {
            format!("{failures}/{total} violated; worst at {worst_desc}")
        },
    }
}

/// Stacked `[d | AoA | AoD]` channel parameters of every path in `order`.
fn channel_vector(
    x: &DVector<f64>,
    anchor: &Anchor,
    order: &ComponentOrder,
    surface_count: usize,
) -> Result<DVector<f64>> {
    let (pose, map) = split_state(x, surface_count)?;
    let k = order.len();
    let mut out = DVector::zeros(3 * k);
    for (c, kind) in order.kinds().iter().enumerate() {
        let p = channel_params(&pose, anchor, kind, &map)?;
        out[order.distance_index(c)] = p.distance;
        out[order.aoa_index(c)] = p.aoa;
        out[order.aod_index(c)] = p.aod;
    }
    Ok(out)
}

/// Central-difference Jacobian of the channel vector, laid out like
/// [`global_jacobian`]. Angle differences are wrapped.
pub fn finite_difference_jacobian(
    agent: &AgentPose,
    anchor: &Anchor,
    order: &ComponentOrder,
    map: &SurfaceMap,
) -> Result<DMatrix<f64>> {
    let x0 = joint_state(agent, map);
    let k = order.len();
    let mut jac = DMatrix::zeros(x0.len(), 3 * k);
    for i in 0..x0.len() {
        let h = 1e-6 * x0[i].abs().max(1.0);
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[i] += h;
        xm[i] -= h;
        let fp = channel_vector(&xp, anchor, order, map.len())?;
        let fm = channel_vector(&xm, anchor, order, map.len())?;
        for c in 0..3 * k {
            let diff = if c < k {
                fp[c] - fm[c]
            } else {
                wrap_angle(fp[c] - fm[c])
            };
            jac[(i, c)] = diff / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Worst column-wise relative error between two Jacobians. Columns whose
/// reference norm is below `floor` are compared in absolute terms.
pub fn column_relative_error(analytic: &DMatrix<f64>, reference: &DMatrix<f64>, floor: f64) -> f64 {
    analytic
        .column_iter()
        .zip(reference.column_iter())
        .map(|(a, r)| (a - r).norm() / r.norm().max(floor))
        .fold(0.0, f64::max)
}

/// Global Jacobian against central finite differences of the channel
/// parameters, every component of the canonical order present.
pub fn check_jacobian(seed: u64, instances: usize, exec: Execution) -> CheckOutcome {
    let results = map_indexed(instances, exec, |i| {
        let inst = nth_instance(seed, i);
        let order = ComponentOrder::canonical(inst.map.len());
        let exists = vec![true; order.len()];
        let analytic = global_jacobian(&inst.agent, &inst.anchor, &order, &inst.map, &exists)?;
        let fd = finite_difference_jacobian(&inst.agent, &inst.anchor, &order, &inst.map)?;
        Ok((
            column_relative_error(&analytic.0, &fd, 1e-3),
            format!("{} surfaces", inst.map.len()),
        ))
    });
    summarize("jacobian_vs_fd", JACOBIAN_TOL, results)
}

pub fn check_orientation_identity(seed: u64, instances: usize, exec: Execution) -> CheckOutcome {
    let results = map_indexed(instances, exec, |i| {
        let inst = nth_instance(seed, i);
        let v = orientation_submatrix(&inst.agent, &inst.anchor, &inst.kind, &inst.map)?;
        Ok(((v + 1.0).abs(), format!("{} gave {v}", inst.kind)))
    });
    summarize("orientation_identity", ORIENTATION_TOL, results)
}

fn all_present_fim(inst: &Instance) -> Result<(ComponentOrder, DMatrix<f64>, DMatrix<f64>)> {
    let order = ComponentOrder::canonical(inst.map.len());
    let exists = vec![true; order.len()];
    let jac = global_jacobian(&inst.agent, &inst.anchor, &order, &inst.map, &exists)?;
    let signal = SignalParams {
        f_c: 6e9,
        beta_bw: 5e8,
    };
    let components = order
        .kinds()
        .iter()
        .map(|k| PathComponent::new(*k, true, 5.0 * 0.5_f64.powi(k.bounce_count() as i32)))
        .collect::<Result<Vec<_>>>()?;
    let params = order
        .kinds()
        .iter()
        .map(|k| channel_params(&inst.agent, &inst.anchor, k, &inst.map))
        .collect::<Result<Vec<_>>>()?;
    let fim = channel_fim(
        &order,
        &params,
        &components,
        &signal,
        &ArrayApertureModel::Isotropic { d2: 1e-2 },
        &inst.anchor.aperture,
    )?;
    let snapshot = global_snapshot_fim(&[(jac.clone(), fim)])?;
    Ok((order, jac.0, snapshot))
}

/// Velocity rows/columns of the snapshot FIM and LOS mapping entries of the
/// Jacobian are exactly zero.
pub fn check_structural_zeros(seed: u64, instances: usize, exec: Execution) -> CheckOutcome {
    let results = map_indexed(instances, exec, |i| {
        let inst = nth_instance(seed, i);
        let (order, jac, fim) = all_present_fim(&inst)?;
        let vel = layout::VELOCITY;
        let mut worst = fim.rows(vel, 2).amax().max(fim.columns(vel, 2).amax());
        let los = order
            .position(&PathKind::Los)
            .expect("canonical order has LOS");
        for c in [
            order.distance_index(los),
            order.aoa_index(los),
            order.aod_index(los),
        ] {
            worst = worst.max(
                jac.view((layout::surface_offset(1), c), (2 * inst.map.len(), 1))
                    .amax(),
            );
        }
        Ok((worst, "nonzero entry".to_string()))
    });
    summarize("structural_zeros", 0.0, results)
}

/// Snapshot FIM is PSD: `min eig >= -tol * trace`. The reported measure is
/// `-min_eig / trace`.
pub fn check_psd(seed: u64, instances: usize, exec: Execution) -> CheckOutcome {
    let results = map_indexed(instances, exec, |i| {
        let inst = nth_instance(seed, i);
        let (_, _, fim) = all_present_fim(&inst)?;
        let ratio = -min_eigenvalue(&fim) / fim.trace();
        Ok((ratio, format!("trace {:.3e}", fim.trace())))
    });
    summarize("snapshot_fim_psd", PSD_TOL, results)
}

fn reflected_instance(seed: u64, i: usize) -> Instance {
    let mut rng = RunStream::new(seed, i as u64);
    random_instance(&mut rng, 1 + i % 2)
}

/// `|r_t| = |r|` for reflected paths.
pub fn check_mirror_length(seed: u64, instances: usize, exec: Execution) -> CheckOutcome {
    let results = map_indexed(instances, exec, |i| {
        let inst = reflected_instance(seed, i);
        let g = PathGeometry::new(&inst.agent, &inst.anchor, &inst.kind, &inst.map)?;
        Ok(((g.r_t.norm() - g.r.norm()).abs(), inst.kind.to_string()))
    });
    summarize("mirror_length", MIRROR_TOL, results)
}

/// `d r_t / d p_n` by central differences against the Householder product.
pub fn check_transfer(seed: u64, instances: usize, exec: Execution) -> CheckOutcome {
    let results = map_indexed(instances, exec, |i| {
        let inst = reflected_instance(seed, i);
        let p0 = inst.agent.position;
        let mut fd = Matrix2::zeros();
        for c in 0..2 {
            let h = 1e-6 * p0[c].abs().max(1.0);
            let (mut pp, mut pm) = (p0, p0);
            pp[c] += h;
            pm[c] -= h;
            let d = (mirrored_agent(&pp, &inst.kind, &inst.map)?
                - mirrored_agent(&pm, &inst.kind, &inst.map)?)
                / (2.0 * h);
            fd.set_column(c, &d);
        }
        // transfer_matrix holds the transposed layout d r_t^T / d p_n.
        let analytic = transfer_matrix(&inst.kind, &inst.map)?.transpose();
        Ok(((analytic - fd).norm() / fd.norm(), inst.kind.to_string()))
    });
    summarize("transfer_vs_fd", JACOBIAN_TOL, results)
}

/// The full suite. Each check gets its own sub-seed.
pub fn run_all(seed: u64, exec: Execution) -> Vec<CheckOutcome> {
    vec![
        check_jacobian(seed, JACOBIAN_INSTANCES, exec),
        check_orientation_identity(seed.wrapping_add(1), JACOBIAN_INSTANCES, exec),
        check_structural_zeros(seed.wrapping_add(2), JACOBIAN_INSTANCES, exec),
        check_psd(seed.wrapping_add(3), JACOBIAN_INSTANCES, exec),
        check_mirror_length(seed.wrapping_add(4), MIRROR_INSTANCES, exec),
        check_transfer(seed.wrapping_add(5), MIRROR_INSTANCES, exec),
    ]
}
