//! Recursive posterior FIM and the error bounds extracted from it.
//!
//! The joint state follows a nearly-constant-velocity model for the agent, a
//! random walk for its orientation and (optionally) for the surfaces. The
//! posterior information at step `n` is the predicted information plus the
//! snapshot FIM of that step; bounds are square roots of traces of the
//! blocks of its inverse.

use nalgebra::{DMatrix, DVector};

use crate::error::{BoundsError, Result};
use crate::geometry::AgentPose;
use crate::layout;
use crate::linalg::{spd_inverse, symmetrize};
use crate::scenario::Scenario;

/// Parameters of the state-transition model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSpaceModel {
    /// Observation interval `T` in seconds.
    pub period: f64,
    pub surface_count: usize,
    /// Kinematic process noise variance, (m/s^2)^2.
    pub sigma_v2: f64,
    /// Orientation process noise variance, rad^2.
    pub sigma_o2: f64,
    /// Surface process noise variance, m^2.
    pub sigma_p2: f64,
}

impl StateSpaceModel {
    pub fn new(
        period: f64,
        surface_count: usize,
        sigma_v2: f64,
        sigma_o2: f64,
        sigma_p2: f64,
    ) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(BoundsError::InvalidScenario(format!(
                "period must be positive, got {period}"
            )));
        }
        for (name, v) in [
            ("sigma_v2", sigma_v2),
            ("sigma_o2", sigma_o2),
            ("sigma_p2", sigma_p2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(BoundsError::InvalidScenario(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        Ok(Self {
            period,
            surface_count,
            sigma_v2,
            sigma_o2,
            sigma_p2,
        })
    }

    pub fn dim(&self) -> usize {
        layout::state_dim(self.surface_count)
    }
}

pub fn transition_matrix(model: &StateSpaceModel) -> DMatrix<f64> {
    let mut f = DMatrix::identity(model.dim(), model.dim());
    f[(0, 2)] = model.period;
    f[(1, 3)] = model.period;
    f
}

/// 4x2 gain of the white-acceleration model.
pub fn gain_matrix(t: f64) -> DMatrix<f64> {
    let h = 0.5 * t * t;
    DMatrix::from_row_slice(4, 2, &[h, 0.0, 0.0, h, t, 0.0, 0.0, t])
}

pub fn process_noise_cov(model: &StateSpaceModel) -> DMatrix<f64> {
    let n = model.dim();
    let mut q = DMatrix::zeros(n, n);
    let g = gain_matrix(model.period);
    let kin = &g * g.transpose() * model.sigma_v2;
    q.view_mut((0, 0), (4, 4)).copy_from(&kin);
    q[(layout::ORIENTATION, layout::ORIENTATION)] = model.sigma_o2;
    for i in layout::AGENT_DIM..n {
        q[(i, i)] = model.sigma_p2;
    }
    q
}

/// Posterior information matrix at step `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorFim {
    pub matrix: DMatrix<f64>,
    pub n: usize,
}

/// Error bounds at one time step. Surface bounds are indexed by id - 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRecord {
    pub n: usize,
    pub peb: f64,
    pub veb: f64,
    pub oeb: f64,
    pub meb: Vec<f64>,
}

/// `(F J^-1 F^T + Q)^-1` for explicit `F` and `Q`.
pub fn predict_fim_with(
    j_prev: &DMatrix<f64>,
    f: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = j_prev.nrows();
    for m in [f, q] {
        if m.nrows() != n || m.ncols() != n {
            return Err(BoundsError::DimensionMismatch {
                expected: n,
                got: m.nrows(),
            });
        }
    }
    let p = spd_inverse(j_prev)?;
    let p_pred = symmetrize(&(f * p * f.transpose() + q));
    spd_inverse(&p_pred)
}

pub fn predict_fim(j_prev: &PosteriorFim, model: &StateSpaceModel) -> Result<DMatrix<f64>> {
    predict_fim_with(
        &j_prev.matrix,
        &transition_matrix(model),
        &process_noise_cov(model),
    )
    .map_err(|e| e.at_step(j_prev.n + 1))
}

pub fn fuse(j_pred: &DMatrix<f64>, j_snapshot: &DMatrix<f64>, n: usize) -> Result<PosteriorFim> {
    if j_pred.shape() != j_snapshot.shape() {
        return Err(BoundsError::DimensionMismatch {
            expected: j_pred.nrows(),
            got: j_snapshot.nrows(),
        });
    }
    Ok(PosteriorFim {
        matrix: symmetrize(&(j_snapshot + j_pred)),
        n,
    })
}

/// Bounds from a covariance (inverse posterior FIM).
pub fn bounds_from_covariance(p: &DMatrix<f64>, n: usize, surface_count: usize) -> BoundRecord {
    let block_rms = |start: usize| {
        (p[(start, start)] + p[(start + 1, start + 1)])
            .max(0.0)
            .sqrt()
    };
    BoundRecord {
        n,
        peb: block_rms(layout::POSITION),
        veb: block_rms(layout::VELOCITY),
        oeb: p[(layout::ORIENTATION, layout::ORIENTATION)]
            .max(0.0)
            .sqrt(),
        meb: (1..=surface_count)
            .map(|s| block_rms(layout::surface_offset(s)))
            .collect(),
    }
}

pub fn extract_bounds(j_post: &PosteriorFim, surface_count: usize) -> Result<BoundRecord> {
    let expected = layout::state_dim(surface_count);
    if j_post.matrix.nrows() != expected {
        return Err(BoundsError::DimensionMismatch {
            expected,
            got: j_post.matrix.nrows(),
        });
    }
    let p = spd_inverse(&j_post.matrix).map_err(|e| e.at_step(j_post.n))?;
    Ok(bounds_from_covariance(&p, j_post.n, surface_count))
}

/// Information matrix of a diagonal prior covariance.
pub fn prior_information(variances: &DVector<f64>) -> Result<PosteriorFim> {
    if let Some(v) = variances.iter().find(|v| !(**v > 0.0)) {
        return Err(BoundsError::InvalidScenario(format!(
            "prior variances must be positive, got {v}"
        )));
    }
    Ok(PosteriorFim {
        matrix: DMatrix::from_diagonal(&variances.map(|v| 1.0 / v)),
        n: 0,
    })
}

/// Run the predict/fuse/extract loop over a sequence of snapshot FIMs
/// (`snapshots[i]` belongs to step `i + 1`). Returns the bounds and the
/// final posterior.
pub fn recurse<I>(
    prior: PosteriorFim,
    model: &StateSpaceModel,
    snapshots: I,
) -> Result<(Vec<BoundRecord>, PosteriorFim)>
where
    I: IntoIterator<Item = Result<DMatrix<f64>>>,
{
    let f = transition_matrix(model);
    let q = process_noise_cov(model);
    let mut post = prior;
    let mut out = Vec::new();
    for snap in snapshots {
        let n = post.n + 1;
        let snap = snap.map_err(|e| e.at_step(n))?;
        let pred = predict_fim_with(&post.matrix, &f, &q).map_err(|e| e.at_step(n))?;
        post = fuse(&pred, &snap, n)?;
        out.push(extract_bounds(&post, model.surface_count)?);
    }
    Ok((out, post))
}

/// Bounds along the scenario's ground truth: `J_0|0` from the diagonal
/// prior, then predict, fuse the snapshot FIM of each step and extract.
pub fn run_recursion(scenario: &Scenario) -> Result<Vec<BoundRecord>> {
    let truth = scenario.ground_truth()?;
    run_recursion_on(scenario, &truth)
}

/// As [`run_recursion`] with an explicit trajectory (`N + 1` poses).
pub fn run_recursion_on(scenario: &Scenario, truth: &[AgentPose]) -> Result<Vec<BoundRecord>> {
    let prior = prior_information(&scenario.prior.variances(scenario.surface_count()))?;
    let snapshots = truth
        .iter()
        .enumerate()
        .skip(1)
        .map(|(n, pose)| scenario.snapshot_fim(pose, n));
    recurse(prior, &scenario.model, snapshots).map(|(records, _)| records)
}
