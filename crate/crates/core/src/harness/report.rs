//! Aggregation and byte-stable CSV/JSON output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentSpec;
use super::experiments::{EveDistOutput, PsRecord, RunRecord, Scheme};
use super::HarnessError;
use crate::sysmodel::linear_to_db;

pub const POWER_SWEEP_FILE: &str = "power_sweep.csv";
pub const EVE_DIST_FILE: &str = "eve_dist.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PS_SENSITIVITY_FILE: &str = "ps_sensitivity.csv";

pub const POWER_SWEEP_COLUMNS: [&str; 9] = [
    "eps",
    "r_b_db",
    "r_e_db",
    "mean_power_robust",
    "mean_power_nonrobust",
    "n_feasible",
    "n_trials",
    "mean_relaxed_robust",
    "mean_relaxed_nonrobust",
];
pub const EVE_DIST_COLUMNS: [&str; 5] = ["scheme", "eps", "r_e_db", "snr_e_db", "trial"];
pub const PS_SENSITIVITY_COLUMNS: [&str; 6] = [
    "p_s",
    "trial",
    "status",
    "iterations",
    "relaxed_power",
    "rounded_power",
];

/// 17 significant digits; parses back to the identical `f64`.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

/// Sweep aggregate at one `(ε, r_b, r_e)`. Means run over trials where both
/// schemes produced a feasible rounded design.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub eps: f64,
    pub r_b_db: f64,
    pub r_e_db: f64,
    pub mean_power_robust: f64,
    pub mean_power_nonrobust: f64,
    pub n_feasible: usize,
    pub n_trials: usize,
    pub mean_relaxed_robust: f64,
    pub mean_relaxed_nonrobust: f64,
    pub n_robust_infeasible: usize,
    pub n_nonrobust_infeasible: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Points in first-seen record order.
pub fn aggregate_sweep(records: &[RunRecord]) -> Vec<SweepPoint> {
    let mut keys: Vec<(f64, f64, f64)> = Vec::new();
    for r in records {
        let k = (r.eps, r.r_b_db, r.r_e_db);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(eps, r_b_db, r_e_db)| {
            let at: Vec<&RunRecord> = records
                .iter()
                .filter(|r| (r.eps, r.r_b_db, r.r_e_db) == (eps, r_b_db, r_e_db))
                .collect();
            let ok: Vec<&&RunRecord> = at
                .iter()
                .filter(|r| r.robust.feasible() && r.nonrobust.feasible())
                .collect();
            let pick = |f: fn(&RunRecord) -> Option<f64>| mean(ok.iter().filter_map(|r| f(r)));
            SweepPoint {
                eps,
                r_b_db,
                r_e_db,
                mean_power_robust: pick(|r| r.robust.rounded_power),
                mean_power_nonrobust: pick(|r| r.nonrobust.rounded_power),
                n_feasible: ok.len(),
                n_trials: at.len(),
                mean_relaxed_robust: pick(|r| r.robust.relaxed_power),
                mean_relaxed_nonrobust: pick(|r| r.nonrobust.relaxed_power),
                n_robust_infeasible: at.iter().filter(|r| !r.robust.feasible()).count(),
                n_nonrobust_infeasible: at.iter().filter(|r| !r.nonrobust.feasible()).count(),
            }
        })
        .collect()
}

/// Exceedance aggregate for one scheme at one `(ε, r_e)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EveSummary {
    pub scheme: Scheme,
    pub eps: f64,
    pub r_e_db: f64,
    pub n_designs: usize,
    pub n_infeasible: usize,
    /// Exceedances over all samples of all designs.
    pub exceed_fraction: f64,
    /// Trials in which this scheme's fraction was below the other's, over
    /// trials where both designs exist.
    pub share_below_other: f64,
}

pub fn aggregate_eve(out: &EveDistOutput) -> Vec<EveSummary> {
    let mut keys: Vec<(Scheme, f64, f64)> = Vec::new();
    for r in &out.records {
        if !keys.contains(&(r.scheme, r.eps, r.r_e_db)) {
            keys.push((r.scheme, r.eps, r.r_e_db));
        }
    }
    for &(s, eps, r_e, _) in &out.infeasible {
        if !keys.contains(&(s, eps, r_e)) {
            keys.push((s, eps, r_e));
        }
    }
    keys.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
    });
    keys.into_iter()
        .map(|(scheme, eps, r_e_db)| {
            let here = |s: Scheme| {
                out.records
                    .iter()
                    .filter(move |r| r.scheme == s && r.eps == eps && r.r_e_db == r_e_db)
            };
            let other = if scheme == Scheme::Robust {
                Scheme::NonRobust
            } else {
                Scheme::Robust
            };
            let (exceed, total) = here(scheme).fold((0.0, 0usize), |(e, n), r| {
                (
                    e + r.exceed_fraction * r.snr_e.len() as f64,
                    n + r.snr_e.len(),
                )
            });
            let paired: Vec<bool> = here(scheme)
                .filter_map(|a| {
                    here(other)
                        .find(|b| b.trial == a.trial)
                        .map(|b| a.exceed_fraction < b.exceed_fraction)
                })
                .collect();
            EveSummary {
                scheme,
                eps,
                r_e_db,
                n_designs: here(scheme).count(),
                n_infeasible: out
                    .infeasible
                    .iter()
                    .find(|c| c.0 == scheme && c.1 == eps && c.2 == r_e_db)
                    .map_or(0, |c| c.3),
                exceed_fraction: if total == 0 {
                    f64::NAN
                } else {
                    exceed / total as f64
                },
                share_below_other: mean(paired.iter().map(|&b| b as u8 as f64)),
            }
        })
        .collect()
}

#[derive(Serialize)]
struct Summary<'a> {
    artifact_version: &'static str,
    root_seed: u64,
    spec: &'a ExperimentSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    power_sweep: Option<Vec<SweepPoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eve_dist: Option<Vec<EveSummary>>,
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Io(e.to_string())
}

fn write_power_sweep(path: &Path, points: &[SweepPoint]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(POWER_SWEEP_COLUMNS).map_err(csv_err)?;
    for p in points {
        w.write_record([
            fmt_float(p.eps),
            fmt_float(p.r_b_db),
            fmt_float(p.r_e_db),
            fmt_float(p.mean_power_robust),
            fmt_float(p.mean_power_nonrobust),
            p.n_feasible.to_string(),
            p.n_trials.to_string(),
            fmt_float(p.mean_relaxed_robust),
            fmt_float(p.mean_relaxed_nonrobust),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))
}

fn write_eve_dist(path: &Path, out: &EveDistOutput) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(EVE_DIST_COLUMNS).map_err(csv_err)?;
    for r in &out.records {
        for &s in &r.snr_e {
            w.write_record([
                r.scheme.label().to_string(),
                fmt_float(r.eps),
                fmt_float(r.r_e_db),
                fmt_float(linear_to_db(s)),
                r.trial.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))
}

/// Writes whichever of the two experiments are given, plus `summary.json`.
/// Returns the paths written.
pub fn emit_reports(
    spec: &ExperimentSpec,
    sweep: Option<&[RunRecord]>,
    eve: Option<&EveDistOutput>,
) -> Result<Vec<PathBuf>, HarnessError> {
    if let Some(records) = sweep {
        if records.is_empty() {
            return Err(HarnessError::Empty(
                "power sweep records (no trial produced a record)".into(),
            ));
        }
    }
    if let Some(out) = eve {
        if out.records.is_empty() {
            return Err(HarnessError::Empty(
                "eavesdropper distribution records (no feasible design)".into(),
            ));
        }
    }
    if sweep.is_none() && eve.is_none() {
        return Err(HarnessError::Empty(
            "experiments (neither sweep nor distribution given)".into(),
        ));
    }
    let dir = &spec.output_dir;
    fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();

    let points = sweep.map(aggregate_sweep);
    if let Some(points) = &points {
        let path = dir.join(POWER_SWEEP_FILE);
        write_power_sweep(&path, points)?;
        written.push(path);
    }
    let eve_summary = eve.map(aggregate_eve);
    if let Some(out) = eve {
        let path = dir.join(EVE_DIST_FILE);
        write_eve_dist(&path, out)?;
        written.push(path);
    }
    let summary = Summary {
        artifact_version: env!("CARGO_PKG_VERSION"),
        root_seed: spec.root_seed,
        spec,
        power_sweep: points,
        eve_dist: eve_summary,
    };
    let mut json =
        serde_json::to_string_pretty(&summary).map_err(|e| HarnessError::Io(e.to_string()))?;
    json.push('\n');
    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, json).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    written.push(path);
    Ok(written)
}

/// Writes `ps_sensitivity.csv`; infeasible runs leave the power cells as NaN.
pub fn emit_ps_sensitivity(
    spec: &ExperimentSpec,
    records: &[PsRecord],
) -> Result<PathBuf, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Empty(
            "P_s sensitivity records (no P_s value given)".into(),
        ));
    }
    let dir = &spec.output_dir;
    fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(PS_SENSITIVITY_FILE);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&path)
        .map_err(csv_err)?;
    w.write_record(PS_SENSITIVITY_COLUMNS).map_err(csv_err)?;
    for r in records {
        let status = serde_json::to_value(r.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        w.write_record([
            fmt_float(r.p_s),
            r.trial.to_string(),
            status,
            r.iterations.to_string(),
            fmt_float(r.relaxed_power.unwrap_or(f64::NAN)),
            fmt_float(r.rounded_power.unwrap_or(f64::NAN)),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(path)
}

/// Reads `power_sweep.csv` back into its aggregate columns.
pub fn read_power_sweep(path: &Path) -> Result<Vec<SweepPoint>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != POWER_SWEEP_COLUMNS {
        return Err(HarnessError::Io(format!("unexpected header {headers:?}")));
    }
    let f = |s: &str| {
        s.parse::<f64>()
            .map_err(|e| HarnessError::Io(format!("{s}: {e}")))
    };
    let u = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| HarnessError::Io(format!("{s}: {e}")))
    };
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(SweepPoint {
                eps: f(&rec[0])?,
                r_b_db: f(&rec[1])?,
                r_e_db: f(&rec[2])?,
                mean_power_robust: f(&rec[3])?,
                mean_power_nonrobust: f(&rec[4])?,
                n_feasible: u(&rec[5])?,
                n_trials: u(&rec[6])?,
                mean_relaxed_robust: f(&rec[7])?,
                mean_relaxed_nonrobust: f(&rec[8])?,
                n_robust_infeasible: 0,
                n_nonrobust_infeasible: 0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alternating::AltStatus;
    use crate::harness::experiments::{EveDistRecord, SchemeResult};

    fn scheme(p: Option<f64>) -> SchemeResult {
        SchemeResult {
            status: AltStatus::Converged,
            iterations: 3,
            refinements: 0,
            relaxed_power: p.map(|x| x - 0.25),
            rounded_power: p,
            source: None,
        }
    }

    fn record(trial: usize, robust: Option<f64>, nonrobust: Option<f64>) -> RunRecord {
        RunRecord {
            trial,
            channel_seed: trial as u64,
            eps: 0.01,
            r_b_db: 3.0,
            r_e_db: 0.0,
            robust: scheme(robust),
            nonrobust: scheme(nonrobust),
            wall_secs: 1.5,
        }
    }

    #[test]
    fn float_format_round_trips() {
        for x in [
            0.1,
            1.0 / 3.0,
            6.02214076e23,
            -2.5e-300,
            0.0,
            f64::MIN_POSITIVE,
        ] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_float(f64::NAN), "NaN");
        assert!(fmt_float(f64::NAN).parse::<f64>().unwrap().is_nan());
    }

    #[test]
    fn aggregates_skip_infeasible_trials() {
        let recs = vec![
            record(0, Some(2.0), Some(1.0)),
            record(1, None, Some(5.0)),
            record(2, Some(4.0), Some(3.0)),
        ];
        let pts = aggregate_sweep(&recs);
        assert_eq!(pts.len(), 1);
        let p = &pts[0];
        assert_eq!(
            (
                p.n_feasible,
                p.n_trials,
                p.n_robust_infeasible,
                p.n_nonrobust_infeasible
            ),
            (2, 3, 1, 0)
        );
        assert_eq!(p.mean_power_robust, 3.0);
        assert_eq!(p.mean_power_nonrobust, 2.0);
        assert_eq!(p.mean_relaxed_robust, 2.75);
    }

    #[test]
    fn csv_round_trip_and_byte_stability() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec {
            output_dir: dir.path().join("a"),
            ..Default::default()
        };
        let recs = vec![
            record(0, Some(2.0 / 3.0), Some(0.1)),
            record(1, Some(1e-7), Some(7.0)),
        ];
        let eve = EveDistOutput {
            records: vec![EveDistRecord {
                trial: 0,
                scheme: Scheme::Robust,
                eps: 0.01,
                r_e_db: 0.0,
                snr_e: vec![0.5, 2.0],
                exceed_fraction: 0.5,
                worst_case_snr_e: 2.5,
            }],
            infeasible: vec![],
        };
        let paths = emit_reports(&spec, Some(&recs), Some(&eve)).unwrap();
        assert_eq!(paths.len(), 3);
        let back = read_power_sweep(&paths[0]).unwrap();
        let expect = aggregate_sweep(&recs);
        assert_eq!(back[0].mean_power_robust, expect[0].mean_power_robust);
        assert_eq!(
            back[0].mean_relaxed_nonrobust,
            expect[0].mean_relaxed_nonrobust
        );
        assert_eq!(back[0].n_feasible, 2);

        let text = fs::read_to_string(&paths[1]).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "scheme,eps,r_e_db,snr_e_db,trial"
        );
        assert_eq!(text.lines().count(), 3);
        assert!(!text.contains('\r'));

        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&paths[2]).unwrap()).unwrap();
        assert_eq!(json["root_seed"], spec.root_seed);
        assert_eq!(json["spec"]["trials"], spec.trials);

        let spec_b = ExperimentSpec {
            output_dir: dir.path().join("b"),
            ..spec.clone()
        };
        let again = emit_reports(&spec_b, Some(&recs), Some(&eve)).unwrap();
        for (a, b) in paths.iter().zip(&again).take(2) {
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
        }
    }

    #[test]
    fn empty_inputs_name_the_filter() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec {
            output_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        let err = emit_reports(&spec, Some(&[]), None).unwrap_err();
        assert!(err.to_string().contains("power sweep"), "{err}");
        let empty = EveDistOutput {
            records: vec![],
            infeasible: vec![],
        };
        let err = emit_reports(&spec, None, Some(&empty)).unwrap_err();
        assert!(err.to_string().contains("distribution"), "{err}");
    }
}
