//! Experiment commands behind the CLI: capacity plans, single runs and
//! parameter sweeps. Every command writes its artifacts into an output
//! directory, which is created when missing.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::metrics::{
    native_traffic_share_where, native_upload_fraction_where, write_streams, MetricsError, Recorder, SummaryRow,
    Window,
};
use crate::planner::{plan_report, PlanError, PlanReport};
use crate::sim::{SimError, SimSummary, Simulation};
use crate::units::MB;
use crate::PeerId;

pub const PLAN_REPORT: &str = "plan_report.txt";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const SWEEP_CSV: &str = "sweep.csv";

/// Process exit codes of the CLI.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VIOLATED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const RUNTIME: i32 = 3;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("writing {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{failed} of {total} sweep points failed")]
    SweepFailures { failed: usize, total: usize },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) | HarnessError::Config(_) | HarnessError::Plan(_) => exit::USAGE,
            _ => exit::RUNTIME,
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---- plan -----------------------------------------------------------------

#[derive(Debug)]
pub struct PlanOutcome {
    pub report: PlanReport,
    pub text: String,
}

impl PlanOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.is_safe() {
            exit::OK
        } else {
            exit::VIOLATED
        }
    }
}

/// Evaluates the capacity model for a config; writes plan_report.txt into
/// `out` when given.
pub fn cmd_plan(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<PlanOutcome, HarnessError> {
    let plan = cfg.to_plan()?;
    let report = plan_report(&plan)?;
    let mut text = String::new();
    let per_node: Vec<String> = plan.peers.iter().map(u64::to_string).collect();
    let _ = writeln!(text, "peers per node: {}", per_node.join(", "));
    let cap = |c: Option<f64>| c.map_or("unlimited".to_string(), |x| format!("{:.2} MB/s", x / MB));
    let _ = writeln!(
        text,
        "per-peer caps: upload {}, download {}; observed rate {}",
        cap(plan.max_upload),
        cap(plan.max_download),
        cap(plan.observed_rate)
    );
    text.push_str(&report.to_string());
    if let Some(dir) = out {
        write_file(&dir.join(PLAN_REPORT), &text)?;
    }
    Ok(PlanOutcome { report, text })
}

// ---- simulate ---------------------------------------------------------------

#[derive(Debug)]
pub struct RunOutcome {
    pub summary: SimSummary,
    pub rows: Vec<SummaryRow>,
    pub text: String,
}

impl RunOutcome {
    /// The row covering every leecher.
    pub fn overall(&self) -> &SummaryRow {
        self.rows.last().expect("summary always has the overall row")
    }
}

/// Per-group and overall summary rows. Native fractions are pooled over the
/// leechers' snapshots for the whole run; the original seed is excluded.
pub fn summary_rows(summary: &SimSummary, rec: &Recorder) -> Vec<SummaryRow> {
    let group_of: HashMap<PeerId, Option<usize>> = summary.peers.iter().map(|p| (p.id, p.group)).collect();
    let window = Window::all();
    let row = |name: String, group: Option<usize>| {
        let member = |id: PeerId| match group_of.get(&id) {
            Some(Some(g)) => group.is_none_or(|want| *g == want),
            _ => false,
        };
        SummaryRow {
            group: name,
            peers: summary.leechers(group).count(),
            avg_dl: summary.average_download_rate(group).ok(),
            agg_dl: summary.aggregated_bandwidth(group).ok(),
            native_conn_frac: native_upload_fraction_where(&rec.snapshots, |s| member(s.peer), window).ok(),
            native_traffic_frac: native_traffic_share_where(&rec.snapshots, |s| member(s.peer), window).ok(),
        }
    };
    let mut rows: Vec<SummaryRow> = summary
        .group_names
        .iter()
        .enumerate()
        .map(|(i, name)| row(name.clone(), Some(i)))
        .collect();
    rows.push(row("all".to_string(), None));
    rows
}

fn fmt_opt(v: Option<f64>, scale: f64, prec: usize) -> String {
    v.map_or("n/a".to_string(), |x| format!("{:.prec$}", x / scale))
}

fn summary_text(summary: &SimSummary, rows: &[SummaryRow]) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "simulated time: {:.1} s ({} ticks)", summary.end_time, summary.ticks);
    let _ = writeln!(
        t,
        "leechers finished: {}/{}",
        summary.completed(),
        summary.leechers(None).count()
    );
    let _ = writeln!(t, "bytes up/down: {} / {}", summary.total_bytes_up(), summary.total_bytes_down());
    for r in rows {
        let _ = writeln!(
            t,
            "group {}: peers {}, avg download {} MB/s, aggregated {} MB/s, native connections {}, native traffic {}",
            r.group,
            r.peers,
            fmt_opt(r.avg_dl, MB, 3),
            fmt_opt(r.agg_dl, MB, 1),
            fmt_opt(r.native_conn_frac, 1.0, 3),
            fmt_opt(r.native_traffic_frac, 1.0, 3),
        );
    }
    t
}

/// Runs one simulation and writes snapshots.csv, events.csv, summary.csv and
/// summary.txt into `out`. If the run exhausts its time budget the streams
/// collected so far are still written before the error is returned.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome, HarnessError> {
    let sim_cfg = cfg.to_sim_config()?;
    let mut sim = Simulation::new(sim_cfg)?;
    let mut rec = Recorder::default();
    let mut failure = None;
    loop {
        match sim.step(&mut rec) {
            Ok(false) => continue,
            Ok(true) => break,
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let summary = sim.summary();
    let rows = summary_rows(&summary, &rec);
    write_streams(out, &rec.snapshots, &rec.events, &rows)?;
    let mut text = summary_text(&summary, &rows);
    if let Some(e) = &failure {
        let _ = writeln!(text, "run failed: {e}");
    }
    write_file(&out.join(SUMMARY_TXT), &text)?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(RunOutcome { summary, rows, text })
}

// ---- sweep ------------------------------------------------------------------

/// Parses `peers=a:b:s` (inclusive range) or `peers=a,b,c`.
pub fn parse_vary(arg: &str) -> Result<Vec<u32>, HarnessError> {
    let usage = |m: &str| HarnessError::Usage(format!("bad --vary {arg:?}: {m}"));
    let (key, list) = arg.split_once('=').ok_or_else(|| usage("expected peers=..."))?;
    if key.trim() != "peers" {
        return Err(usage("only `peers` can be varied"));
    }
    let num = |s: &str| s.trim().parse::<u32>().map_err(|_| usage("not a positive integer"));
    let points: Vec<u32> = if list.contains(':') {
        let parts: Vec<&str> = list.split(':').collect();
        if parts.len() != 3 {
            return Err(usage("range must be start:end:step"));
        }
        let (a, b, s) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if s == 0 {
            return Err(usage("step must be positive"));
        }
        (a..=b).step_by(s as usize).collect()
    } else {
        list.split(',').filter(|x| !x.trim().is_empty()).map(num).collect::<Result<_, _>>()?
    };
    if points.is_empty() {
        return Err(usage("no sweep points"));
    }
    if points.contains(&0) {
        return Err(usage("peer counts must be positive"));
    }
    Ok(points)
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub peers_per_node: u32,
    pub dir: PathBuf,
    pub result: Result<SummaryRow, String>,
}

/// Runs one simulation per point, each in `out/peers_<m>`, on up to `jobs`
/// threads, then writes sweep.csv. A failing point is recorded and the
/// sweep carries on.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    points: &[u32],
    out: &Path,
    jobs: usize,
) -> Result<Vec<SweepPoint>, HarnessError> {
    if points.is_empty() {
        return Err(HarnessError::Usage("empty sweep".into()));
    }
    fs::create_dir_all(out).map_err(|source| HarnessError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SweepPoint>>> = Mutex::new(vec![None; points.len()]);
    let workers = jobs.clamp(1, points.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&m) = points.get(i) else {
                    break;
                };
                let dir = out.join(format!("peers_{m}"));
                log::info!("sweep point {m} peers/node -> {}", dir.display());
                let result = cmd_simulate(&cfg.with_group_size(m), &dir)
                    .map(|o| o.overall().clone())
                    .map_err(|e| e.to_string());
                if let Err(e) = &result {
                    log::warn!("sweep point {m} failed: {e}");
                }
                results.lock().expect("no panics while holding the lock")[i] = Some(SweepPoint {
                    peers_per_node: m,
                    dir,
                    result,
                });
            });
        }
    });
    let done: Vec<SweepPoint> = results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|p| p.expect("every point ran"))
        .collect();
    write_sweep_csv(&out.join(SWEEP_CSV), &done)?;
    Ok(done)
}

fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<(), HarnessError> {
    let opt = |v: Option<f64>, prec: usize| v.map(|x| format!("{x:.prec$}")).unwrap_or_default();
    let mut w = csv::Writer::from_path(path).map_err(MetricsError::from)?;
    let header = [
        "peers_per_node",
        "avg_dl_Bps",
        "agg_dl_Bps",
        "native_conn_frac",
        "native_traffic_frac",
        "status",
    ];
    w.write_record(header).map_err(MetricsError::from)?;
    for p in points {
        let rec = match &p.result {
            Ok(r) => [
                p.peers_per_node.to_string(),
                opt(r.avg_dl, 1),
                opt(r.agg_dl, 1),
                opt(r.native_conn_frac, 6),
                opt(r.native_traffic_frac, 6),
                "ok".to_string(),
            ],
            Err(e) => [
                p.peers_per_node.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                format!("failed: {e}"),
            ],
        };
        w.write_record(rec).map_err(MetricsError::from)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMOKE: &str = r#"
[cluster]
nodes = [{ loopback_MBps = 500.0, nic_ul_MBps = 125.0, nic_dl_MBps = 125.0 }]

[torrent]
file_size_MB = 4.0
piece_rule = "v5"

[[peers]]
count = 3
node = 0
ul_cap_MBps = 5.0

[seedpeer]
node = 0
ul_cap_MBps = 5.0

[plan]
observed_dl_MBps = 4.25
"#;

    #[test]
    fn vary_syntax() {
        assert_eq!(parse_vary("peers=20:200:20").unwrap().len(), 10);
        assert_eq!(parse_vary("peers=5:5:1").unwrap(), vec![5]);
        assert_eq!(parse_vary("peers=3,1,2").unwrap(), vec![3, 1, 2]);
        for bad in ["peers=", "nodes=1:2:1", "peers=1:2", "peers=5:1:0", "peers=0,1", "peers=x", "20:40:20"] {
            let e = parse_vary(bad).unwrap_err();
            assert_eq!(e.exit_code(), exit::USAGE, "{bad}");
        }
        assert!(parse_vary("peers=9:1:1").is_err());
    }

    #[test]
    fn single_node_plan_is_safe() {
        let cfg = ExperimentConfig::parse(SMOKE).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = cmd_plan(&cfg, Some(dir.path())).unwrap();
        assert_eq!(out.exit_code(), exit::OK);
        let text = fs::read_to_string(dir.path().join(PLAN_REPORT)).unwrap();
        assert!(text.contains("verdict: SAFE"));
    }

    #[test]
    fn simulate_writes_everything() {
        let cfg = ExperimentConfig::parse(SMOKE).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("a/b");
        let run = cmd_simulate(&cfg, &out).unwrap();
        assert!(run.summary.all_complete());
        for f in ["snapshots.csv", "events.csv", "summary.csv", SUMMARY_TXT] {
            assert!(out.join(f).exists(), "{f}");
        }
        let all = run.overall();
        assert_eq!(all.peers, 3);
        assert_eq!(all.native_conn_frac, Some(1.0));
        assert_eq!(all.native_traffic_frac, Some(1.0));
        assert_eq!(run.rows.len(), 2);
    }

    #[test]
    fn budget_failure_still_writes_streams() {
        let text = SMOKE.replace("[plan]", "[sim]\nmax_time_s = 1.0\n\n[plan]");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_simulate(&cfg, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), exit::RUNTIME);
        assert!(dir.path().join("snapshots.csv").exists());
        let summary = fs::read_to_string(dir.path().join(SUMMARY_TXT)).unwrap();
        assert!(summary.contains("run failed"));
    }

    #[test]
    fn sweep_of_one_point_matches_simulate() {
        let cfg = ExperimentConfig::parse(SMOKE).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let pts = cmd_sweep(&cfg, &[3], &dir.path().join("sweep"), 2).unwrap();
        assert_eq!(pts.len(), 1);
        cmd_simulate(&cfg, &dir.path().join("single")).unwrap();
        for f in ["snapshots.csv", "events.csv", "summary.csv"] {
            let a = fs::read(dir.path().join("sweep/peers_3").join(f)).unwrap();
            let b = fs::read(dir.path().join("single").join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
        let csv = fs::read_to_string(dir.path().join("sweep").join(SWEEP_CSV)).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().ends_with(",ok"));
    }

    #[test]
    fn failing_points_are_recorded() {
        let text = SMOKE.replace("[plan]", "[sim]\nmax_time_s = 1.0\n\n[plan]");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let pts = cmd_sweep(&cfg, &[1, 2, 3], dir.path(), 3).unwrap();
        assert!(pts.iter().all(|p| p.result.is_err()));
        let csv = fs::read_to_string(dir.path().join(SWEEP_CSV)).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.contains("failed:"));
        assert_eq!(pts.iter().map(|p| p.peers_per_node).collect::<Vec<_>>(), vec![1, 2, 3]);
    }
}
