use std::fs;
use std::path::Path;

use super::{EventRecord, MetricsError, Snapshot};

pub const SNAPSHOTS_CSV: &str = "snapshots.csv";
pub const EVENTS_CSV: &str = "events.csv";
pub const SUMMARY_CSV: &str = "summary.csv";

const SNAPSHOT_HEADER: [&str; 12] = [
    "time_s",
    "peer_id",
    "node_id",
    "role",
    "ul_Bps",
    "dl_Bps",
    "share_ratio",
    "bytes_up",
    "bytes_down",
    "buddies",
    "unchoked_native",
    "unchoked_foreign",
];
const EVENT_HEADER: [&str; 3] = ["time_s", "peer_id", "kind"];
const SUMMARY_HEADER: [&str; 6] = [
    "group",
    "peers",
    "avg_dl_Bps",
    "agg_dl_Bps",
    "native_conn_frac",
    "native_traffic_frac",
];

/// One line of summary.csv. Missing values are written as empty fields.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub group: String,
    pub peers: usize,
    pub avg_dl: Option<f64>,
    pub agg_dl: Option<f64>,
    pub native_conn_frac: Option<f64>,
    pub native_traffic_frac: Option<f64>,
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map(|x| format!("{x:.prec$}")).unwrap_or_default()
}

/// Writes snapshots.csv, events.csv and summary.csv into `dir`, creating it
/// if needed.
pub fn write_streams(
    dir: &Path,
    snapshots: &[Snapshot],
    events: &[EventRecord],
    summary: &[SummaryRow],
) -> Result<(), MetricsError> {
    fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join(SNAPSHOTS_CSV))?;
    w.write_record(SNAPSHOT_HEADER)?;
    for s in snapshots {
        w.write_record([
            format!("{:.1}", s.time),
            s.peer.0.to_string(),
            s.node.0.to_string(),
            s.role.as_str().to_string(),
            format!("{:.1}", s.ul_rate),
            format!("{:.1}", s.dl_rate),
            opt(s.share_ratio, 6),
            s.bytes_up.to_string(),
            s.bytes_down.to_string(),
            s.buddies.to_string(),
            s.unchoked_native().to_string(),
            s.unchoked_foreign().to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(EVENTS_CSV))?;
    w.write_record(EVENT_HEADER)?;
    for e in events {
        w.write_record([format!("{:.1}", e.time), e.peer.0.to_string(), e.kind.as_str().to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(SUMMARY_CSV))?;
    w.write_record(SUMMARY_HEADER)?;
    for r in summary {
        w.write_record([
            r.group.clone(),
            r.peers.to_string(),
            opt(r.avg_dl, 1),
            opt(r.agg_dl, 1),
            opt(r.native_conn_frac, 6),
            opt(r.native_traffic_frac, 6),
        ])?;
    }
    w.flush()?;
    Ok(())
}
