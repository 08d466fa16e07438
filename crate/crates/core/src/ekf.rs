//! Reference EKF-SLAM with oracle data association.
//!
//! The filter runs on the same joint state layout as the bound recursion and
//! linearizes with the same Jacobians, so its achieved errors can be compared
//! directly against the bounds. Each Monte-Carlo run draws an initial
//! estimate from the prior around the true initial state and then a fresh set
//! of measurements; the ground-truth trajectory is shared by all runs.

use nalgebra::{DMatrix, DVector};

use crate::error::{BoundsError, Result};
use crate::exec::{map_indexed, Execution};
use crate::fim::{global_jacobian, ComponentVariances};
use crate::geometry::{wrap_angle, AgentPose, PathGeometry, SurfaceMap};
use crate::layout;
use crate::linalg::symmetrize;
use crate::pcrlb::{
    process_noise_cov, run_recursion_on, transition_matrix, BoundRecord, StateSpaceModel,
};
use crate::rng::derive_run_stream;
use crate::scenario::{generate_measurements, joint_state, split_state, Measurement, Scenario};

#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl EkfState {
    /// Agent pose and surface map implied by the mean.
    pub fn decode(&self, surface_count: usize) -> Result<(AgentPose, SurfaceMap)> {
        split_state(&self.mean, surface_count)
    }
}

pub fn ekf_predict(state: &EkfState, model: &StateSpaceModel) -> EkfState {
    let f = transition_matrix(model);
    let mut mean = &f * &state.mean;
    mean[layout::ORIENTATION] = wrap_angle(mean[layout::ORIENTATION]);
    EkfState {
        mean,
        covariance: symmetrize(
            &(&f * &state.covariance * f.transpose() + process_noise_cov(model)),
        ),
    }
}

/// Linearized measurement model for one anchor's measurements.
#[derive(Debug, Clone)]
pub struct MeasurementBlock {
    /// Stacked `[d... | AoA... | AoD...]` observations.
    pub z: DVector<f64>,
    /// Predicted observations at the current mean.
    pub predicted: DVector<f64>,
    /// `rows x state_dim` measurement matrix.
    pub h: DMatrix<f64>,
    /// Diagonal of the noise covariance.
    pub noise: DVector<f64>,
    /// Rows holding angles (innovations are wrapped).
    pub angle_from: usize,
}

/// Measurement matrix of anchor `j` for the listed components: the
/// transposed global Jacobian restricted to those components' columns.
pub fn measurement_matrix(
    state: &EkfState,
    scenario: &Scenario,
    j: usize,
    components: &[usize],
) -> Result<DMatrix<f64>> {
    let (pose, map) = state.decode(scenario.surface_count())?;
    let order = &scenario.order;
    let mut exists = vec![false; order.len()];
    for &k in components {
        exists[k] = true;
    }
    let jac = global_jacobian(&pose, &scenario.anchors[j], order, &map, &exists)?;
    let cols: Vec<usize> = components
        .iter()
        .map(|&k| order.distance_index(k))
        .chain(components.iter().map(|&k| order.aoa_index(k)))
        .chain(components.iter().map(|&k| order.aod_index(k)))
        .collect();
    Ok(jac.0.select_columns(&cols).transpose())
}

fn measurement_block(
    state: &EkfState,
    scenario: &Scenario,
    j: usize,
    ms: &[&Measurement],
) -> Result<MeasurementBlock> {
    let (pose, map) = state.decode(scenario.surface_count())?;
    let anchor = &scenario.anchors[j];
    let m = ms.len();
    let mut z = DVector::zeros(3 * m);
    let mut predicted = DVector::zeros(3 * m);
    let mut noise = DVector::zeros(3 * m);
    for (i, meas) in ms.iter().enumerate() {
        let p = PathGeometry::new(&pose, anchor, &meas.kind, &map)?.params();
        let v = ComponentVariances::evaluate(
            meas.z_u,
            meas.z_aoa,
            meas.z_aod,
            &scenario.signal,
            &scenario.agent_aperture,
            &anchor.aperture,
        )?;
        z[i] = meas.z_d;
        z[m + i] = meas.z_aoa;
        z[2 * m + i] = meas.z_aod;
        predicted[i] = p.distance;
        predicted[m + i] = p.aoa;
        predicted[2 * m + i] = p.aod;
        noise[i] = v.distance;
        noise[m + i] = v.aoa;
        noise[2 * m + i] = v.aod;
    }
    let components: Vec<usize> = ms.iter().map(|m| m.component).collect();
    let h = measurement_matrix(state, scenario, j, &components)?;
    Ok(MeasurementBlock {
        z,
        predicted,
        h,
        noise,
        angle_from: m,
    })
}

fn stack(blocks: &[MeasurementBlock], dim: usize) -> MeasurementBlock {
    let rows: usize = blocks.iter().map(|b| b.z.len()).sum();
    let mut out = MeasurementBlock {
        z: DVector::zeros(rows),
        predicted: DVector::zeros(rows),
        h: DMatrix::zeros(rows, dim),
        noise: DVector::zeros(rows),
        angle_from: 0,
    };
    let mut r = 0;
    for b in blocks {
        let len = b.z.len();
        out.z.rows_mut(r, len).copy_from(&b.z);
        out.h.rows_mut(r, len).copy_from(&b.h);
        out.noise.rows_mut(r, len).copy_from(&b.noise);
        // Wrap angle innovations ahead of stacking so the stacked block can
        // treat every row as linear.
        let mut pred = b.predicted.clone();
        for i in b.angle_from..len {
            pred[i] = b.z[i] - wrap_angle(b.z[i] - b.predicted[i]);
        }
        out.predicted.rows_mut(r, len).copy_from(&pred);
        r += len;
    }
    out.angle_from = rows;
    out
}

fn apply_update(state: &EkfState, block: &MeasurementBlock) -> Option<EkfState> {
    let p = &state.covariance;
    let r = DMatrix::from_diagonal(&block.noise);
    let hp = &block.h * p;
    let s = symmetrize(&(&hp * block.h.transpose() + &r));
    let chol = s.cholesky()?;
    let gain = chol.solve(&hp).transpose();
    let mut innovation = &block.z - &block.predicted;
    for i in block.angle_from..innovation.len() {
        innovation[i] = wrap_angle(innovation[i]);
    }
    let mut mean = &state.mean + &gain * innovation;
    mean[layout::ORIENTATION] = wrap_angle(mean[layout::ORIENTATION]);
    let a = DMatrix::identity(p.nrows(), p.ncols()) - &gain * &block.h;
    let covariance = symmetrize(&(&a * p * a.transpose() + &gain * r * gain.transpose()));
    Some(EkfState { mean, covariance })
}

/// Joint update with all measurements of one step. If the stacked
/// innovation covariance is singular, anchors are applied one at a time and
/// singular ones are skipped.
pub fn ekf_update(
    state: &EkfState,
    measurements: &[Measurement],
    scenario: &Scenario,
) -> Result<EkfState> {
    if measurements.is_empty() {
        return Ok(state.clone());
    }
    let dim = state.mean.len();
    let blocks = (0..scenario.anchors.len())
        .map(|j| {
            let ms: Vec<&Measurement> = measurements.iter().filter(|m| m.anchor == j).collect();
            if ms.is_empty() {
                Ok(None)
            } else {
                measurement_block(state, scenario, j, &ms).map(|b| Some((j, b)))
            }
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    let all: Vec<MeasurementBlock> = blocks.iter().map(|(_, b)| b.clone()).collect();
    if let Some(next) = apply_update(state, &stack(&all, dim)) {
        return Ok(next);
    }
    let mut current = state.clone();
    for (j, b) in &blocks {
        match apply_update(&current, &stack(std::slice::from_ref(b), dim)) {
            Some(next) => current = next,
            None => log::warn!(
                "step {}: singular innovation covariance for anchor {}, update skipped",
                measurements[0].n,
                j + 1
            ),
        }
    }
    Ok(current)
}

/// Squared errors of one run for steps `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    /// Squared wrapped orientation difference.
    pub orientation: Vec<f64>,
    /// `map[n-1][s-1] = |p_s - p_s_hat|^2`.
    pub map: Vec<Vec<f64>>,
}

/// RMSE over runs at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseRecord {
    pub n: usize,
    pub position: f64,
    pub velocity: f64,
    pub orientation: f64,
    pub map: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub runs: usize,
    pub bounds: Vec<BoundRecord>,
    pub rmse: Vec<RmseRecord>,
}

fn squared_errors(
    est: &EkfState,
    truth: &DVector<f64>,
    surface_count: usize,
) -> (f64, f64, f64, Vec<f64>) {
    let d = &est.mean - truth;
    let block = |o: usize| d[o] * d[o] + d[o + 1] * d[o + 1];
    let orient = wrap_angle(d[layout::ORIENTATION]);
    (
        block(layout::POSITION),
        block(layout::VELOCITY),
        orient * orient,
        (1..=surface_count)
            .map(|s| block(layout::surface_offset(s)))
            .collect(),
    )
}

/// One Monte-Carlo run over a fixed ground truth.
pub fn run_single(
    scenario: &Scenario,
    truth: &[AgentPose],
    run_index: usize,
) -> Result<RunMetrics> {
    let s_count = scenario.surface_count();
    let mut stream = derive_run_stream(scenario.mc.seed, run_index as u64);
    let prior_var = scenario.prior.variances(s_count);
    let x0 = joint_state(&truth[0], &scenario.surfaces);
    let mut mean = x0.clone();
    for i in 0..mean.len() {
        mean[i] += prior_var[i].sqrt() * stream.standard_normal();
    }
    mean[layout::ORIENTATION] = wrap_angle(mean[layout::ORIENTATION]);
    let mut state = EkfState {
        mean,
        covariance: DMatrix::from_diagonal(&prior_var),
    };
    let measurements = generate_measurements(scenario, truth, &mut stream)?;
    let steps = truth.len() - 1;
    let mut metrics = RunMetrics {
        position: Vec::with_capacity(steps),
        velocity: Vec::with_capacity(steps),
        orientation: Vec::with_capacity(steps),
        map: Vec::with_capacity(steps),
    };
    let mut cursor = 0;
    for (n, pose) in truth.iter().enumerate().skip(1) {
        let start = cursor;
        while cursor < measurements.len() && measurements[cursor].n == n {
            cursor += 1;
        }
        state = ekf_predict(&state, &scenario.model);
        state =
            ekf_update(&state, &measurements[start..cursor], scenario).map_err(|e| e.at_step(n))?;
        let (p, v, o, m) = squared_errors(&state, &joint_state(pose, &scenario.surfaces), s_count);
        metrics.position.push(p);
        metrics.velocity.push(v);
        metrics.orientation.push(o);
        metrics.map.push(m);
    }
    Ok(metrics)
}

/// RMSE per step, accumulated over runs in run order.
pub fn aggregate(runs: &[RunMetrics], surface_count: usize) -> Vec<RmseRecord> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let count = runs.len() as f64;
    (0..first.position.len())
        .map(|i| {
            let mean_sqrt =
                |f: &dyn Fn(&RunMetrics) -> f64| (runs.iter().map(f).sum::<f64>() / count).sqrt();
            RmseRecord {
                n: i + 1,
                position: mean_sqrt(&|r| r.position[i]),
                velocity: mean_sqrt(&|r| r.velocity[i]),
                orientation: mean_sqrt(&|r| r.orientation[i]),
                map: (0..surface_count)
                    .map(|s| mean_sqrt(&|r| r.map[i][s]))
                    .collect(),
            }
        })
        .collect()
}

pub fn run_monte_carlo(scenario: &Scenario) -> Result<MonteCarloReport> {
    run_monte_carlo_with(scenario, Execution::default())
}

pub fn run_monte_carlo_with(scenario: &Scenario, exec: Execution) -> Result<MonteCarloReport> {
    let truth = scenario.ground_truth()?;
    let bounds = run_recursion_on(scenario, &truth)?;
    let runs = scenario.mc.runs;
    let results = map_indexed(runs, exec, |r| run_single(scenario, &truth, r));
    let metrics = results
        .into_iter()
        .enumerate()
        .map(|(run, res)| {
            res.map_err(|e| BoundsError::RunFailed {
                run,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloReport {
        runs,
        bounds,
        rmse: aggregate(&metrics, scenario.surface_count()),
    })
}
