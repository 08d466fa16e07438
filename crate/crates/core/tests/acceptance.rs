//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use mpslam_bounds::ekf::run_monte_carlo_with;
use mpslam_bounds::exec::Execution;
use mpslam_bounds::fim::ComponentVariances;
use mpslam_bounds::geometry::{channel_params, wrap_angle, PathKind};
use mpslam_bounds::linalg::min_eigenvalue;
use mpslam_bounds::pcrlb::{
    fuse, predict_fim_with, prior_information, run_recursion, transition_matrix, BoundRecord,
};
use mpslam_bounds::rng::derive_run_stream;
use mpslam_bounds::scenario::{generate_measurements, Scenario};
use mpslam_bounds::selfcheck::{self, CheckOutcome};

const SEED: u64 = 20240611;

struct Verdict {
    passed: bool,
    detail: String,
}

fn desk_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/desk.toml")
}

fn desk_text() -> String {
    std::fs::read_to_string(desk_path()).expect("desk scenario")
}

fn desk() -> Scenario {
    Scenario::from_toml_str(&desk_text()).expect("desk scenario parses")
}

fn checks(outcomes: &[CheckOutcome], elapsed: Option<(Duration, Duration)>) -> Verdict {
    let mut passed = outcomes.iter().all(|o| o.passed);
    let mut detail: Vec<String> = outcomes
        .iter()
        .map(|o| {
            format!(
                "{} worst {:.2e} (tol {:.0e}, {})",
                o.name, o.worst, o.tolerance, o.detail
            )
        })
        .collect();
    if let Some((took, limit)) = elapsed {
        passed &= took < limit;
        detail.push(format!(
            "{:.2} s (limit {} s)",
            took.as_secs_f64(),
            limit.as_secs()
        ));
    }
    Verdict {
        passed,
        detail: detail.join("; "),
    }
}

fn jacobian_correctness() -> Verdict {
    let start = Instant::now();
    let o = selfcheck::check_jacobian(SEED, selfcheck::JACOBIAN_INSTANCES, Execution::Sequential);
    checks(&[o], Some((start.elapsed(), Duration::from_secs(5))))
}

fn orientation_identity() -> Verdict {
    checks(
        &[selfcheck::check_orientation_identity(
            SEED,
            selfcheck::JACOBIAN_INSTANCES,
            Execution::Sequential,
        )],
        None,
    )
}

fn structural_zeros() -> Verdict {
    let mut v = checks(
        &[selfcheck::check_structural_zeros(
            SEED,
            selfcheck::JACOBIAN_INSTANCES,
            Execution::Sequential,
        )],
        None,
    );
    // Also on every snapshot of the desk scenario.
    let s = desk();
    let truth = s.ground_truth().unwrap();
    let worst = (1..truth.len())
        .map(|n| {
            let j = s.snapshot_fim(&truth[n], n).unwrap();
            j.rows(2, 2).amax().max(j.columns(2, 2).amax())
        })
        .fold(0.0, f64::max);
    v.passed &= worst == 0.0;
    v.detail
        .push_str(&format!("; desk velocity block max |J| = {worst:e}"));
    v
}

fn bounds_dominated(more: &[BoundRecord], less: &[BoundRecord]) -> (bool, String) {
    let tol = 1e-9;
    for (a, b) in more.iter().zip(less) {
        let pairs = [(a.peb, b.peb), (a.veb, b.veb), (a.oeb, b.oeb)]
            .into_iter()
            .chain(a.meb.iter().copied().zip(b.meb.iter().copied()));
        for (x, y) in pairs {
            if x > y * (1.0 + tol) {
                return (
                    false,
                    format!("bound increased at n = {}: {x:e} > {y:e}", a.n),
                );
            }
        }
    }
    (true, String::new())
}

/// Snapshot increments between `more` and `less` informative scenarios.
fn increment_check(more: &Scenario, less: &Scenario) -> (f64, bool, String) {
    let truth = more.ground_truth().unwrap();
    let mut worst = f64::NEG_INFINITY;
    for (n, pose) in truth.iter().enumerate().skip(1) {
        let jm = more.snapshot_fim(pose, n).unwrap();
        let jl = less.snapshot_fim(pose, n).unwrap();
        worst = worst.max(-min_eigenvalue(&(&jm - &jl)) / jm.trace());
    }
    let (dominated, why) =
        bounds_dominated(&run_recursion(more).unwrap(), &run_recursion(less).unwrap());
    (worst, worst <= 1e-10 && dominated, why)
}

fn psd_and_ordering() -> Verdict {
    let psd = selfcheck::check_psd(SEED, selfcheck::JACOBIAN_INSTANCES, Execution::Sequential);
    let base = desk();
    let truth = base.ground_truth().unwrap();
    let desk_psd = (1..truth.len())
        .map(|n| {
            let j = base.snapshot_fim(&truth[n], n).unwrap();
            -min_eigenvalue(&j) / j.trace()
        })
        .fold(f64::NEG_INFINITY, f64::max);

    let extra_anchor = desk_text()
        + "\n[[anchors]]\nposition = [1.0, 3.5]\norientation = -1.6\naperture = { kind = \"isotropic\", d2 = 1e-2 }\n";
    let with_anchor = Scenario::from_toml_str(&extra_anchor).unwrap();
    let (inc_anchor, ok_anchor, why_anchor) = increment_check(&with_anchor, &base);

    // Existence flags: a single bounce enabled only for part of the run, and
    // a double bounce switched off entirely, against the all-visible desk.
    let fewer = desk_text()
        + "\n[visibility]\nrules = [\n  { anchor = 1, path = \"sb:2\", visible = [[1, 15]] },\n  { anchor = 2, path = \"db:3,1\", visible = [] },\n]\n";
    let with_fewer = Scenario::from_toml_str(&fewer).unwrap();
    let (inc_flag, ok_flag, why_flag) = increment_check(&base, &with_fewer);

    let passed = psd.passed && desk_psd <= 1e-10 && ok_anchor && ok_flag;
    Verdict {
        passed,
        detail: format!(
            "random -min_eig/trace {:.2e}; desk {desk_psd:.2e}; anchor increment {inc_anchor:.2e}{}; flag increment {inc_flag:.2e}{}",
            psd.worst,
            if why_anchor.is_empty() { String::new() } else { format!(" ({why_anchor})") },
            if why_flag.is_empty() { String::new() } else { format!(" ({why_flag})") },
        ),
    }
}

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn recursion_sanity() -> Verdict {
    let s = desk();
    let truth = s.ground_truth().unwrap();
    let dim = s.state_dim();
    let prior = prior_information(&s.prior.variances(s.surface_count())).unwrap();
    let snapshots: Vec<DMatrix<f64>> = (1..truth.len())
        .map(|n| s.snapshot_fim(&truth[n], n).unwrap())
        .collect();
    let zero_q = DMatrix::zeros(dim, dim);

    // F = I, Q = 0: pure accumulation.
    let identity = DMatrix::identity(dim, dim);
    let mut post = prior.clone();
    let mut sum = prior.matrix.clone();
    let mut worst_identity = 0.0_f64;
    for (i, snap) in snapshots.iter().enumerate() {
        let pred = predict_fim_with(&post.matrix, &identity, &zero_q).unwrap();
        post = fuse(&pred, snap, i + 1).unwrap();
        sum += snap;
        worst_identity = worst_identity.max(rel_diff(&post.matrix, &sum));
    }

    // NCV transition, Q = 0: information is carried through F exactly.
    let f = transition_matrix(&s.model);
    let f_inv = f.clone().try_inverse().unwrap();
    let mut post = prior.clone();
    let mut carried = prior.matrix.clone();
    let mut worst_coupled = 0.0_f64;
    for (i, snap) in snapshots.iter().enumerate() {
        let pred = predict_fim_with(&post.matrix, &f, &zero_q).unwrap();
        post = fuse(&pred, snap, i + 1).unwrap();
        carried = f_inv.transpose() * &carried * &f_inv + snap;
        worst_coupled = worst_coupled.max(rel_diff(&post.matrix, &carried));
    }
    Verdict {
        passed: worst_identity <= 1e-9 && worst_coupled <= 1e-9,
        detail: format!(
            "F = I: rel err {worst_identity:.2e}; F = NCV: rel err {worst_coupled:.2e} (tol 1e-9)"
        ),
    }
}

fn mirror_length() -> Verdict {
    checks(
        &[
            selfcheck::check_mirror_length(
                SEED,
                selfcheck::MIRROR_INSTANCES,
                Execution::Sequential,
            ),
            selfcheck::check_transfer(SEED, selfcheck::MIRROR_INSTANCES, Execution::Sequential),
        ],
        None,
    )
}

fn bound_attainment() -> Verdict {
    let s = desk();
    let start = Instant::now();
    let report = run_monte_carlo_with(&s, Execution::Sequential).unwrap();
    let took = start.elapsed();
    let persistent: Vec<usize> = (1..=s.surface_count())
        .filter(|&k| {
            (0..s.anchors.len()).any(|j| s.visibility.persistent(j, &PathKind::SingleBounce(k)))
        })
        .collect();

    let mut failures = Vec::new();
    let mut range = |name: String, ratios: Vec<(usize, f64)>, lo: f64, hi: f64| {
        let (n_min, min) =
            ratios
                .iter()
                .copied()
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        let (n_max, max) = ratios
            .iter()
            .copied()
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        if min < lo || max > hi {
            failures.push(format!(
                "{name} outside [{lo}, {hi}]: min {min:.3} at n={n_min}, max {max:.3} at n={n_max}"
            ));
        }
        format!("{name} {min:.3}..{max:.3}")
    };
    let steady: Vec<(&BoundRecord, _)> = report
        .bounds
        .iter()
        .zip(&report.rmse)
        .filter(|(b, _)| b.n >= 10)
        .collect();
    let mut summary = vec![
        range(
            "pos".into(),
            steady
                .iter()
                .map(|(b, r)| (b.n, r.position / b.peb))
                .collect(),
            0.9,
            1.6,
        ),
        range(
            "orient".into(),
            steady
                .iter()
                .map(|(b, r)| (b.n, r.orientation / b.oeb))
                .collect(),
            0.9,
            1.6,
        ),
    ];
    for &k in &persistent {
        summary.push(range(
            format!("map_{k}"),
            steady
                .iter()
                .map(|(b, r)| (b.n, r.map[k - 1] / b.meb[k - 1]))
                .collect(),
            0.9,
            2.0,
        ));
    }
    let fast = took < Duration::from_secs(60);
    if !fast {
        failures.push(format!("runtime {:.1} s exceeds 60 s", took.as_secs_f64()));
    }
    Verdict {
        passed: failures.is_empty(),
        detail: format!(
            "{} runs, seed {}, {:.1} s single-threaded; ratios {}{}",
            report.runs,
            s.mc.seed,
            took.as_secs_f64(),
            summary.join(", "),
            if failures.is_empty() {
                String::new()
            } else {
                format!(" | {}", failures.join("; "))
            }
        ),
    }
}

fn generator_calibration() -> Verdict {
    let s = desk();
    let truth = s.ground_truth().unwrap();
    let pose = &truth[1];
    let draws = 10_000;
    let checked = [
        PathKind::Los,
        PathKind::SingleBounce(1),
        PathKind::DoubleBounce(1, 2),
    ];
    let k_of = |kind: &PathKind| s.order.position(kind).unwrap();

    // residuals[j][c] = (d, aoa, aod) residual lists
    let mut residuals =
        vec![vec![[Vec::new(), Vec::new(), Vec::new()]; checked.len()]; s.anchors.len()];
    for r in 0..draws {
        let mut rng = derive_run_stream(SEED, r as u64);
        for m in generate_measurements(&s, &truth[..2], &mut rng).unwrap() {
            let Some(c) = checked.iter().position(|k| *k == m.kind) else {
                continue;
            };
            let p = channel_params(pose, &s.anchors[m.anchor], &m.kind, &s.surfaces).unwrap();
            let slot = &mut residuals[m.anchor][c];
            slot[0].push(m.z_d - p.distance);
            slot[1].push(wrap_angle(m.z_aoa - p.aoa));
            slot[2].push(wrap_angle(m.z_aod - p.aod));
        }
    }
    let mut worst = 0.0_f64;
    let mut where_ = String::new();
    let mut count = 0;
    for (j, anchor) in s.anchors.iter().enumerate() {
        let (_, comps) = s.components_at(j, pose, 1).unwrap();
        for (c, kind) in checked.iter().enumerate() {
            let comp = &comps[k_of(kind)];
            let p = channel_params(pose, anchor, kind, &s.surfaces).unwrap();
            let v = ComponentVariances::evaluate(
                comp.amplitude,
                p.aoa,
                p.aod,
                &s.signal,
                &s.agent_aperture,
                &anchor.aperture,
            )
            .unwrap();
            for (q, (name, expected)) in [("d", v.distance), ("aoa", v.aoa), ("aod", v.aod)]
                .into_iter()
                .enumerate()
            {
                let xs = &residuals[j][c][q];
                assert_eq!(xs.len(), draws);
                let mean = xs.iter().sum::<f64>() / draws as f64;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
                let rel = (var / expected - 1.0).abs();
                count += 1;
                if rel > worst {
                    worst = rel;
                    where_ = format!("anchor {} {kind} {name}", j + 1);
                }
            }
        }
    }
    Verdict {
        passed: worst <= 0.05,
        detail: format!(
            "{count} variances over {draws} draws; worst rel dev {:.2}% ({where_}), tol 5%",
            worst * 100.0
        ),
    }
}

fn reproducibility() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let run = |mode: &str, name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_mpslam-bounds"))
            .arg("--scenario")
            .arg(desk_path())
            .args(["--mode", mode, "--seed", "77", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        std::fs::read(out).unwrap()
    };
    let (a, b) = (run("validate", "a.csv"), run("validate", "b.csv"));
    let (c, d) = (run("bounds", "c.csv"), run("bounds", "d.csv"));
    Verdict {
        passed: a == b && c == d && !a.is_empty(),
        detail: format!(
            "validate CSVs {} ({} bytes), bounds CSVs {} ({} bytes)",
            if a == b { "identical" } else { "differ" },
            a.len(),
            if c == d { "identical" } else { "differ" },
            c.len()
        ),
    }
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Verdict);
    let criteria: [Criterion; 9] = [
        ("Jacobian correctness", jacobian_correctness),
        ("orientation identity", orientation_identity),
        ("structural zeros", structural_zeros),
        ("PSD and ordering", psd_and_ordering),
        ("recursion sanity", recursion_sanity),
        ("mirror-length invariant", mirror_length),
        ("bound attainment", bound_attainment),
        ("generator calibration", generator_calibration),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let v = f();
        failed += usize::from(!v.passed);
        println!(
            "criterion {} {:<24} {}  {}",
            i + 1,
            name,
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
