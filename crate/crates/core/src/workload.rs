//! Workload sources: block-level trace replay and synthetic request-size
//! sweeps.
//!
//! Traces are CSV lines of `tick,op,lba,n_sector` (an optional header line
//! starting with `tick` is skipped) and are streamed, never slurped. Sweeps
//! run one simulation per request size and issue closed-loop: every event
//! carries tick zero and the driver admits it as soon as the device queue
//! has room.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_size, ConfigError, RawConfig, SectionReader, Tick};
use crate::hil::ReqOp;

/// One workload event: a request the host will issue at `tick`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub tick: Tick,
    pub op: ReqOp,
    pub lba: u64,
    pub n_sector: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("cannot open trace {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("trace parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace order error at line {line}: tick {tick} is before {prev}")]
    Order { line: usize, tick: Tick, prev: Tick },
}

/// Streaming trace reader with line-accurate diagnostics.
pub struct TraceReader<R: BufRead> {
    inner: std::io::Lines<R>,
    line: usize,
    prev_tick: Option<Tick>,
    path: String,
}

impl TraceReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(TraceReader::new(BufReader::new(file), path.display().to_string()))
    }
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(reader: R, path: String) -> Self {
        TraceReader {
            inner: reader.lines(),
            line: 0,
            prev_tick: None,
            path,
        }
    }

    fn parse_line(&self, line: &str) -> Result<TraceEvent, TraceError> {
        let err = |msg: String| TraceError::Parse {
            line: self.line,
            msg,
        };
        let mut fields = line.split(',');
        let mut next = |name: &str| {
            fields
                .next()
                .map(str::trim)
                .filter(|f| !f.is_empty())
                .ok_or_else(|| err(format!("missing field `{name}`")))
        };
        let tick = next("tick")?;
        let op = next("op")?;
        let lba = next("lba")?;
        let n_sector = next("n_sector")?;
        let tick: Tick = tick
            .parse()
            .map_err(|_| err(format!("bad tick `{tick}`")))?;
        let op = match op {
            "R" | "r" => ReqOp::Read,
            "W" | "w" => ReqOp::Write,
            other => return Err(err(format!("bad op `{other}` (expected R or W)"))),
        };
        let lba: u64 = lba.parse().map_err(|_| err(format!("bad lba `{lba}`")))?;
        let n_sector: u64 = n_sector
            .parse()
            .map_err(|_| err(format!("bad sector count `{n_sector}`")))?;
        if fields.next().is_some() {
            return Err(err("too many fields".into()));
        }
        Ok(TraceEvent {
            tick,
            op,
            lba,
            n_sector,
        })
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<TraceEvent, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.inner.next()? {
                Ok(l) => l,
                Err(source) => {
                    return Some(Err(TraceError::Io {
                        path: self.path.clone(),
                        source,
                    }))
                }
            };
            self.line += 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            // Header line is optional; recognize it by the leading column name.
            if self.line == 1 && trimmed.to_ascii_lowercase().starts_with("tick") {
                continue;
            }
            let event = match self.parse_line(trimmed) {
                Ok(ev) => ev,
                Err(e) => return Some(Err(e)),
            };
            if let Some(prev) = self.prev_tick {
                if event.tick < prev {
                    return Some(Err(TraceError::Order {
                        line: self.line,
                        tick: event.tick,
                        prev,
                    }));
                }
            }
            self.prev_tick = Some(event.tick);
            return Some(Ok(event));
        }
    }
}

/// Convenience for the documented operation shape: stream a trace file.
pub fn parse_trace(
    path: impl AsRef<Path>,
) -> Result<impl Iterator<Item = Result<TraceEvent, TraceError>>, TraceError> {
    TraceReader::open(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Sequential,
    Random,
}

impl Pattern {
    pub fn label(self) -> &'static str {
        match self {
            Pattern::Sequential => "sequential",
            Pattern::Random => "random",
        }
    }
}

/// Parameterized request-size sweep, embeddable as the `[workload]` config
/// section.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub pattern: Pattern,
    pub op: ReqOp,
    pub request_sizes: Vec<u64>,
    /// Bytes issued at each size; also the LBA span covered.
    pub total_bytes: u64,
    /// Closed-loop outstanding-request budget.
    pub queue_depth: u64,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            pattern: Pattern::Sequential,
            op: ReqOp::Write,
            request_sizes: (0..13).map(|i| 8192u64 << i).collect(),
            total_bytes: 128 << 20,
            queue_depth: 32,
            seed: 42,
        }
    }
}

impl SweepSpec {
    /// Read the `[workload]` section if present.
    pub fn from_raw(raw: &RawConfig) -> Result<Option<SweepSpec>, ConfigError> {
        if raw.section("workload").is_none() {
            return Ok(None);
        }
        let d = SweepSpec::default();
        let mut s = SectionReader::new(raw, "workload");
        let pattern = match s.get_str("pattern") {
            None => d.pattern,
            Some("sequential") => Pattern::Sequential,
            Some("random") => Pattern::Random,
            Some(other) => {
                return Err(ConfigError::Validation {
                    key: "workload.pattern".into(),
                    msg: format!("`{other}` is not `sequential` or `random`"),
                })
            }
        };
        let op = match s.get_str("op") {
            None => d.op,
            Some("read") => ReqOp::Read,
            Some("write") => ReqOp::Write,
            Some(other) => {
                return Err(ConfigError::Validation {
                    key: "workload.op".into(),
                    msg: format!("`{other}` is not `read` or `write`"),
                })
            }
        };
        let request_sizes = match s.get_str("request_sizes") {
            None => d.request_sizes,
            Some(list) => {
                let mut sizes = Vec::new();
                for part in list.split(',') {
                    let sz = parse_size(part).ok_or_else(|| ConfigError::Validation {
                        key: "workload.request_sizes".into(),
                        msg: format!("`{}` is not a size", part.trim()),
                    })?;
                    sizes.push(sz);
                }
                sizes
            }
        };
        let total_bytes = s.get_u64("total_bytes", d.total_bytes)?;
        let queue_depth = s.get_u64("queue_depth", d.queue_depth)?;
        let seed = s.get_u64("seed", d.seed)?;
        s.finish()?;
        let spec = SweepSpec {
            pattern,
            op,
            request_sizes,
            total_bytes,
            queue_depth,
            seed,
        };
        Ok(Some(spec))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.request_sizes.is_empty() {
            return Err(ConfigError::Validation {
                key: "workload.request_sizes".into(),
                msg: "at least one request size is required".into(),
            });
        }
        for &sz in &self.request_sizes {
            if sz == 0 || sz % 512 != 0 {
                return Err(ConfigError::Validation {
                    key: "workload.request_sizes".into(),
                    msg: format!("{sz} is not a positive multiple of 512"),
                });
            }
        }
        if self.total_bytes == 0 || self.total_bytes % 512 != 0 {
            return Err(ConfigError::Validation {
                key: "workload.total_bytes".into(),
                msg: "must be a positive multiple of 512".into(),
            });
        }
        if self.queue_depth == 0 {
            return Err(ConfigError::Validation {
                key: "workload.queue_depth".into(),
                msg: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub fn to_config_section(&self) -> String {
        let sizes: Vec<String> = self.request_sizes.iter().map(|s| s.to_string()).collect();
        format!(
            "pattern = {}\nop = {}\nrequest_sizes = {}\ntotal_bytes = {}\nqueue_depth = {}\nseed = {}\n",
            self.pattern.label(),
            match self.op {
                ReqOp::Read => "read",
                ReqOp::Write => "write",
            },
            sizes.join(","),
            self.total_bytes,
            self.queue_depth,
            self.seed,
        )
    }

    /// Events for one sweep point. Deterministic in (spec, size): the
    /// per-point generator seeds its own stream so points are independent
    /// of evaluation order.
    pub fn events_for_size(&self, size: u64) -> Vec<TraceEvent> {
        assert!(size > 0 && size % 512 == 0);
        let n_requests = (self.total_bytes / size).max(1);
        let sectors = size / 512;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ size.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut events = Vec::with_capacity(n_requests as usize);
        for i in 0..n_requests {
            let lba = match self.pattern {
                Pattern::Sequential => i * sectors,
                Pattern::Random => rng.gen_range(0..n_requests) * sectors,
            };
            events.push(TraceEvent {
                tick: 0,
                op: self.op,
                lba,
                n_sector: sectors,
            });
        }
        events
    }

    /// Bytes of the LBA span a point touches; reads are preconditioned by
    /// writing this span first.
    pub fn span_bytes(&self, size: u64) -> u64 {
        (self.total_bytes / size).max(1) * size
    }
}

/// All sweep events across every size, in size order.
pub fn generate_sweep(spec: &SweepSpec) -> Vec<TraceEvent> {
    spec.request_sizes
        .iter()
        .flat_map(|&sz| spec.events_for_size(sz))
        .collect()
}
