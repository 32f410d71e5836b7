//! Per-second snapshots, lifecycle events and the native/foreign accounting
//! built on top of them.

mod csvout;

pub use csvout::{write_streams, SummaryRow, EVENTS_CSV, SNAPSHOTS_CSV, SUMMARY_CSV};

use serde::Serialize;
use thiserror::Error;

use crate::peer::Role;
use crate::{NodeId, PeerId};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no snapshots in window [{start}, {end}]")]
    EmptyWindow { start: f64, end: f64 },
    #[error("no upload connections or traffic in window [{start}, {end}]")]
    NoActivity { start: f64, end: f64 },
    #[error("writing metrics: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing metrics: {0}")]
    Csv(#[from] csv::Error),
}

/// An unchoked, interested buddy at snapshot time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UnchokedConn {
    pub buddy: PeerId,
    pub buddy_node: NodeId,
    pub native: bool,
}

/// State of one peer at one snapshot instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub peer: PeerId,
    pub node: NodeId,
    pub role: Role,
    /// Rates averaged over the snapshot interval, bytes/s.
    pub ul_rate: f64,
    pub dl_rate: f64,
    /// bytes_up / bytes_down, undefined before the first byte arrives.
    pub share_ratio: Option<f64>,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub buddies: u32,
    pub unchoked: Vec<UnchokedConn>,
    /// Bytes received during the interval from native / foreign buddies.
    pub dl_native_bytes: f64,
    pub dl_foreign_bytes: f64,
}

impl Snapshot {
    pub fn unchoked_native(&self) -> usize {
        self.unchoked.iter().filter(|c| c.native).count()
    }

    pub fn unchoked_foreign(&self) -> usize {
        self.unchoked.len() - self.unchoked_native()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Started,
    Joined,
    PieceComplete(u32),
    DownloadFinished,
    Left,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Started => "started",
            EventKind::Joined => "joined",
            EventKind::PieceComplete(_) => "piece-complete",
            EventKind::DownloadFinished => "download-finished",
            EventKind::Left => "left",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub peer: PeerId,
    pub kind: EventKind,
}

/// Receives the metric streams of one run, in order.
pub trait MetricsSink {
    fn snapshot(&mut self, snapshot: Snapshot);
    fn event(&mut self, event: EventRecord);
}

/// In-memory sink.
#[derive(Debug, Default, Clone)]
pub struct Recorder {
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<EventRecord>,
}

impl MetricsSink for Recorder {
    fn snapshot(&mut self, snapshot: Snapshot) {
        self.snapshots.push(snapshot);
    }

    fn event(&mut self, event: EventRecord) {
        self.events.push(event);
    }
}

/// Closed time interval used to select snapshots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Self {
        Window { start, end }
    }

    pub fn all() -> Self {
        Window {
            start: f64::NEG_INFINITY,
            end: f64::INFINITY,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

/// Pooled native and total counts over matching snapshots.
fn pooled<'a>(
    snapshots: impl IntoIterator<Item = &'a Snapshot>,
    filter: impl Fn(&Snapshot) -> bool,
    window: Window,
    measure: impl Fn(&Snapshot) -> (f64, f64),
) -> Result<f64, MetricsError> {
    let mut seen = false;
    let (mut native, mut total) = (0.0, 0.0);
    for s in snapshots {
        if !window.contains(s.time) || !filter(s) {
            continue;
        }
        seen = true;
        let (n, t) = measure(s);
        native += n;
        total += t;
    }
    if !seen {
        return Err(MetricsError::EmptyWindow {
            start: window.start,
            end: window.end,
        });
    }
    if total <= 0.0 {
        return Err(MetricsError::NoActivity {
            start: window.start,
            end: window.end,
        });
    }
    Ok(native / total)
}

/// Share of upload connections that go to native buddies, pooled over all
/// snapshots of peers on `node` within `window`.
pub fn native_upload_fraction(snapshots: &[Snapshot], node: NodeId, window: Window) -> Result<f64, MetricsError> {
    native_upload_fraction_where(snapshots, |s| s.node == node, window)
}

pub fn native_upload_fraction_where(
    snapshots: &[Snapshot],
    filter: impl Fn(&Snapshot) -> bool,
    window: Window,
) -> Result<f64, MetricsError> {
    pooled(snapshots, filter, window, |s| {
        (s.unchoked_native() as f64, s.unchoked.len() as f64)
    })
}

/// Byte-weighted analogue of [`native_upload_fraction`]: the share of data
/// received by peers on `node` that came from native buddies.
pub fn native_traffic_share(snapshots: &[Snapshot], node: NodeId, window: Window) -> Result<f64, MetricsError> {
    native_traffic_share_where(snapshots, |s| s.node == node, window)
}

pub fn native_traffic_share_where(
    snapshots: &[Snapshot],
    filter: impl Fn(&Snapshot) -> bool,
    window: Window,
) -> Result<f64, MetricsError> {
    pooled(snapshots, filter, window, |s| {
        (s.dl_native_bytes, s.dl_native_bytes + s.dl_foreign_bytes)
    })
}
