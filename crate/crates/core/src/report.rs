//! CSV output and the human-readable summary.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::ekf::RmseRecord;
use crate::pcrlb::BoundRecord;

/// Conditions under which the bounds hold, echoed in every summary.
pub const ASSUMPTIONS: [&str; 5] = [
    "A1: correct detection and data association (existences and measurement-to-path assignment known)",
    "A2: amplitudes carry negligible information and are treated as known",
    "A3: measurement variances carry negligible information and are treated as known",
    "A4: anchors observe independently",
    "A5: per-path likelihoods factorize and measurements of different paths are uncorrelated",
];

pub fn csv_header(surface_count: usize, with_rmse: bool) -> String {
    let mut cols: Vec<String> = ["n", "peb", "veb", "oeb"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((1..=surface_count).map(|s| format!("meb_{s}")));
    if with_rmse {
        cols.extend(
            ["rmse_pos", "rmse_vel", "rmse_orient"]
                .iter()
                .map(|s| s.to_string()),
        );
        cols.extend((1..=surface_count).map(|s| format!("maperr_{s}")));
    }
    cols.join(",")
}

fn num(x: f64) -> String {
    format!("{x:.12e}")
}

/// One row per step. `rmse`, if given, must be aligned with `bounds`.
pub fn write_csv<W: Write>(
    out: &mut W,
    bounds: &[BoundRecord],
    rmse: Option<&[RmseRecord]>,
) -> io::Result<()> {
    let surface_count = bounds.first().map_or(0, |b| b.meb.len());
    writeln!(out, "{}", csv_header(surface_count, rmse.is_some()))?;
    for (i, b) in bounds.iter().enumerate() {
        let mut row = vec![b.n.to_string(), num(b.peb), num(b.veb), num(b.oeb)];
        row.extend(b.meb.iter().map(|&m| num(m)));
        if let Some(r) = rmse.map(|r| &r[i]) {
            debug_assert_eq!(r.n, b.n);
            row.extend([num(r.position), num(r.velocity), num(r.orientation)]);
            row.extend(r.map.iter().map(|&m| num(m)));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Summary block: bound ranges, final RMSE/bound ratios, assumptions.
pub fn summary(bounds: &[BoundRecord], rmse: Option<&[RmseRecord]>, runs: Option<usize>) -> String {
    let mut s = String::new();
    let surface_count = bounds.first().map_or(0, |b| b.meb.len());
    let _ = writeln!(s, "bounds over {} steps (min .. max):", bounds.len());
    let mut series = vec![
        (
            "PEB [m]".to_string(),
            bounds.iter().map(|b| b.peb).collect::<Vec<_>>(),
        ),
        (
            "VEB [m/s]".to_string(),
            bounds.iter().map(|b| b.veb).collect(),
        ),
        (
            "OEB [rad]".to_string(),
            bounds.iter().map(|b| b.oeb).collect(),
        ),
    ];
    for k in 0..surface_count {
        series.push((
            format!("MEB_{} [m]", k + 1),
            bounds.iter().map(|b| b.meb[k]).collect(),
        ));
    }
    for (name, values) in &series {
        let (lo, hi) = min_max(values.iter().copied());
        let _ = writeln!(s, "  {name:<11} {lo:.6e} .. {hi:.6e}");
    }
    if let (Some(rmse), Some(last)) = (rmse, bounds.last()) {
        let r = &rmse[rmse.len() - 1];
        let _ = writeln!(
            s,
            "final RMSE/bound ratios at n = {} ({} runs, fixed trajectory, averaged over prior and measurement noise):",
            last.n,
            runs.unwrap_or(0)
        );
        let _ = writeln!(s, "  position    {:.4}", r.position / last.peb);
        let _ = writeln!(s, "  velocity    {:.4}", r.velocity / last.veb);
        let _ = writeln!(s, "  orientation {:.4}", r.orientation / last.oeb);
        for (k, (e, b)) in r.map.iter().zip(&last.meb).enumerate() {
            let _ = writeln!(s, "  surface {:<3} {:.4}", k + 1, e / b);
        }
    }
    let _ = writeln!(s, "bounds assume:");
    for a in ASSUMPTIONS {
        let _ = writeln!(s, "  {a}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bounds() -> Vec<BoundRecord> {
        (1..=3)
            .map(|n| BoundRecord {
                n,
                peb: 1.0 / n as f64,
                veb: 2.0,
                oeb: 0.1,
                meb: vec![0.5, 0.25],
            })
            .collect()
    }

    #[test]
    fn header_schema() {
        assert_eq!(csv_header(2, false), "n,peb,veb,oeb,meb_1,meb_2");
        assert_eq!(
            csv_header(1, true),
            "n,peb,veb,oeb,meb_1,rmse_pos,rmse_vel,rmse_orient,maperr_1"
        );
    }

    #[test]
    fn rows_and_precision() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &bounds(), None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with('\n'));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[3], "3,3.333333333333e-1,2.000000000000e0,1.000000000000e-1,5.000000000000e-1,2.500000000000e-1");
        let parsed: f64 = lines[3].split(',').nth(1).unwrap().parse().unwrap();
        assert!((parsed - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rmse_columns() {
        let rmse: Vec<RmseRecord> = (1..=3)
            .map(|n| RmseRecord {
                n,
                position: 1.0,
                velocity: 2.0,
                orientation: 0.2,
                map: vec![0.5, 0.5],
            })
            .collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &bounds(), Some(&rmse)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().all(|l| l.split(',').count() == 11));
        let s = summary(&bounds(), Some(&rmse), Some(4));
        assert!(s.contains("orientation 2.0000"), "{s}");
        assert!(s.contains("A5"));
    }
}
