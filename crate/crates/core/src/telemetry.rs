//! Aggregation of completion and transaction records into the run report:
//! bandwidth, latency distribution, garbage-collection work, wear and
//! resource utilization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Tick;
use crate::ftl::SubOp;
use crate::hil::CompletionRecord;
use crate::pal::TransactionRecord;

/// Latency samples retained for exact percentiles; beyond this a
/// deterministic reservoir keeps a uniform subset.
const RESERVOIR_CAP: usize = 1_000_000;

/// Streaming per-run (or per-sweep-point) accumulator.
pub struct Stats {
    samples: Vec<Tick>,
    seen: u64,
    rng: ChaCha8Rng,
    n_requests: u64,
    total_bytes: u64,
    first_start: Option<Tick>,
    last_finish: Tick,
    channel_busy: Vec<Tick>,
    die_busy: Vec<Tick>,
    host_pages_written: u64,
    host_pages_read: u64,
    gc_pages_moved: u64,
    erases: u64,
    gc_invocations: u64,
}

impl Stats {
    pub fn new(channels: u64, dies: u64) -> Stats {
        Stats {
            samples: Vec::new(),
            seen: 0,
            rng: ChaCha8Rng::seed_from_u64(0x5eed),
            n_requests: 0,
            total_bytes: 0,
            first_start: None,
            last_finish: 0,
            channel_busy: vec![0; channels as usize],
            die_busy: vec![0; dies as usize],
            host_pages_written: 0,
            host_pages_read: 0,
            gc_pages_moved: 0,
            erases: 0,
            gc_invocations: 0,
        }
    }

    pub fn on_transaction(&mut self, rec: &TransactionRecord) {
        self.channel_busy[rec.channel as usize] += rec.phases.t_cmd + rec.phases.t_bus;
        self.die_busy[rec.die as usize] += rec.finish_tick - rec.start_tick;
        match rec.op {
            SubOp::Write => self.host_pages_written += 1,
            SubOp::Read => self.host_pages_read += 1,
            SubOp::GcWrite => self.gc_pages_moved += 1,
            SubOp::Erase => self.erases += 1,
            SubOp::GcRead => {}
        }
    }

    pub fn on_completion(&mut self, rec: &CompletionRecord, bytes: u64) {
        self.n_requests += 1;
        self.total_bytes += bytes;
        let arrival = rec.finish_tick - rec.device_latency;
        self.first_start = Some(self.first_start.map_or(arrival, |f| f.min(arrival)));
        self.last_finish = self.last_finish.max(rec.finish_tick);
        self.push_sample(rec.device_latency);
    }

    fn push_sample(&mut self, v: Tick) {
        self.seen += 1;
        if self.samples.len() < RESERVOIR_CAP {
            self.samples.push(v);
        } else {
            let j = self.rng.gen_range(0..self.seen);
            if (j as usize) < RESERVOIR_CAP {
                self.samples[j as usize] = v;
            }
        }
    }

    pub fn add_gc_invocations(&mut self, n: u64) {
        self.gc_invocations += n;
    }

    pub fn gc_invocations(&self) -> u64 {
        self.gc_invocations
    }

    /// Simulated span covered by the accumulated completions.
    pub fn span_ns(&self) -> Tick {
        match self.first_start {
            Some(first) => self.last_finish.saturating_sub(first),
            None => 0,
        }
    }

    pub fn into_row(self, label: &str, pattern: &str, op: &str, request_size: u64) -> ReportRow {
        let span = self.span_ns();
        let bandwidth_mbps = if span > 0 {
            self.total_bytes as f64 * 1000.0 / span as f64
        } else {
            0.0
        };
        let mut sorted = self.samples.clone();
        sorted.sort_unstable();
        let mean = if sorted.is_empty() {
            0.0
        } else {
            sorted.iter().sum::<u64>() as f64 / sorted.len() as f64
        };
        let pct = |q: f64| -> Tick {
            if sorted.is_empty() {
                return 0;
            }
            let rank = (q * sorted.len() as f64).ceil() as usize;
            sorted[rank.clamp(1, sorted.len()) - 1]
        };
        let wa_defined = self.host_pages_written > 0;
        let write_amplification = if wa_defined {
            (self.host_pages_written + self.gc_pages_moved) as f64 / self.host_pages_written as f64
        } else {
            1.0
        };
        let frac = |busy: &[Tick]| -> (f64, f64) {
            if span == 0 || busy.is_empty() {
                return (0.0, 0.0);
            }
            let mut sum = 0.0;
            let mut max = 0.0f64;
            for &b in busy {
                let f = b as f64 / span as f64;
                sum += f;
                max = max.max(f);
            }
            (sum / busy.len() as f64, max)
        };
        let (channel_busy_mean, channel_busy_max) = frac(&self.channel_busy);
        let (die_busy_mean, die_busy_max) = frac(&self.die_busy);
        ReportRow {
            label: label.to_string(),
            pattern: pattern.to_string(),
            op: op.to_string(),
            request_size,
            n_requests: self.n_requests,
            total_bytes: self.total_bytes,
            span_ns: span,
            bandwidth_mbps,
            lat_mean_ns: mean,
            lat_median_ns: pct(0.50),
            lat_p99_ns: pct(0.99),
            host_pages_written: self.host_pages_written,
            host_pages_read: self.host_pages_read,
            gc_invocations: self.gc_invocations,
            gc_pages_moved: self.gc_pages_moved,
            erases: self.erases,
            write_amplification,
            wa_defined,
            channel_busy_mean,
            channel_busy_max,
            die_busy_mean,
            die_busy_max,
        }
    }
}

/// One line of the run report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub pattern: String,
    pub op: String,
    pub request_size: u64,
    pub n_requests: u64,
    pub total_bytes: u64,
    pub span_ns: Tick,
    pub bandwidth_mbps: f64,
    pub lat_mean_ns: f64,
    pub lat_median_ns: Tick,
    pub lat_p99_ns: Tick,
    pub host_pages_written: u64,
    pub host_pages_read: u64,
    pub gc_invocations: u64,
    pub gc_pages_moved: u64,
    pub erases: u64,
    pub write_amplification: f64,
    pub wa_defined: bool,
    pub channel_busy_mean: f64,
    pub channel_busy_max: f64,
    pub die_busy_mean: f64,
    pub die_busy_max: f64,
}

pub const REPORT_COLUMNS: [&str; 21] = [
    "label",
    "pattern",
    "op",
    "request_size",
    "n_requests",
    "total_bytes",
    "span_ns",
    "bandwidth_mbps",
    "lat_mean_ns",
    "lat_median_ns",
    "lat_p99_ns",
    "host_pages_written",
    "host_pages_read",
    "gc_invocations",
    "gc_pages_moved",
    "erases",
    "write_amplification",
    "wa_defined",
    "channel_busy_mean",
    "channel_busy_max",
    "die_busy_mean",
    "die_busy_max",
];

impl ReportRow {
    pub fn csv_values(&self) -> Vec<String> {
        vec![
            self.label.clone(),
            self.pattern.clone(),
            self.op.clone(),
            self.request_size.to_string(),
            self.n_requests.to_string(),
            self.total_bytes.to_string(),
            self.span_ns.to_string(),
            format!("{:.3}", self.bandwidth_mbps),
            format!("{:.1}", self.lat_mean_ns),
            self.lat_median_ns.to_string(),
            self.lat_p99_ns.to_string(),
            self.host_pages_written.to_string(),
            self.host_pages_read.to_string(),
            self.gc_invocations.to_string(),
            self.gc_pages_moved.to_string(),
            self.erases.to_string(),
            format!("{:.4}", self.write_amplification),
            self.wa_defined.to_string(),
            format!("{:.4}", self.channel_busy_mean),
            format!("{:.4}", self.channel_busy_max),
            format!("{:.4}", self.die_busy_mean),
            format!("{:.4}", self.die_busy_max),
        ]
    }
}

/// Render rows as the stable-column CSV report.
pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = REPORT_COLUMNS.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_values().join(","));
        out.push('\n');
    }
    out
}

/// Render rows for terminal reading; carries every CSV field.
pub fn report_human(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&format!(
            "--- {} ({} {} @ {} B) ---\n",
            row.label, row.pattern, row.op, row.request_size
        ));
        let values = row.csv_values();
        for (name, value) in REPORT_COLUMNS.iter().zip(values.iter()) {
            out.push_str(&format!("  {name:<20} {value}\n"));
        }
        if !row.wa_defined {
            out.push_str("  (no host writes: write amplification reported as 1.0)\n");
        }
    }
    out
}
