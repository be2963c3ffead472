//! SSD topology, flash timing and firmware policy parameters, loaded from a
//! flat sectioned key/value file.
//!
//! The file format is line oriented: `[section]` headers followed by
//! `key = value` pairs, `#` starts a comment. Unknown keys are rejected so
//! typos surface immediately; missing keys fall back to the documented
//! defaults (the baseline eight-channel TLC drive).

use std::fmt;
use std::path::Path;

use crate::workload::SweepSpec;

/// Nanosecond simulation tick. One global unit for the whole simulator.
pub type Tick = u64;

/// Parallelism dimension used by the striping order permutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StripeDim {
    Channel,
    Way,
    Die,
    Plane,
}

impl StripeDim {
    fn letter(self) -> char {
        match self {
            StripeDim::Channel => 'C',
            StripeDim::Way => 'W',
            StripeDim::Die => 'D',
            StripeDim::Plane => 'P',
        }
    }
}

/// Order in which consecutive physical page numbers advance over the four
/// parallelism dimensions, fastest first. The page and block digits always
/// sit above these four.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StripeOrder(pub [StripeDim; 4]);

impl StripeOrder {
    pub fn parse(s: &str) -> Option<StripeOrder> {
        let mut dims = [StripeDim::Channel; 4];
        let mut seen = [false; 4];
        if s.len() != 4 {
            return None;
        }
        for (i, c) in s.chars().enumerate() {
            let d = match c.to_ascii_uppercase() {
                'C' => StripeDim::Channel,
                'W' => StripeDim::Way,
                'D' => StripeDim::Die,
                'P' => StripeDim::Plane,
                _ => return None,
            };
            let idx = d as usize;
            if seen[idx] {
                return None;
            }
            seen[idx] = true;
            dims[i] = d;
        }
        Some(StripeOrder(dims))
    }
}

impl Default for StripeOrder {
    fn default() -> Self {
        StripeOrder([
            StripeDim::Channel,
            StripeDim::Way,
            StripeDim::Die,
            StripeDim::Plane,
        ])
    }
}

impl fmt::Display for StripeOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.0 {
            write!(f, "{}", d.letter())?;
        }
        Ok(())
    }
}

/// Physical layout of the drive: channel/package/die/plane/block/page counts
/// plus the shared DMA bus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub channels: u64,
    /// Packages per channel.
    pub packages: u64,
    /// Dies per package.
    pub dies: u64,
    /// Planes per die.
    pub planes: u64,
    /// Blocks per plane.
    pub blocks: u64,
    pub pages_per_block: u64,
    /// Page size in bytes; power of two, at least 512.
    pub page_size: u64,
    /// Bus rate in mega-transfers per second.
    pub dma_mhz: u64,
    /// Bytes moved per bus transfer.
    pub dma_width: u64,
    pub striping_order: StripeOrder,
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            channels: 8,
            packages: 8,
            dies: 4,
            planes: 2,
            blocks: 1024,
            pages_per_block: 256,
            page_size: 8192,
            dma_mhz: 400,
            dma_width: 1,
            striping_order: StripeOrder::default(),
        }
    }
}

impl Topology {
    /// Channel * package * die * plane: how many block-sized resources one
    /// page stripe spans.
    pub fn parallel_units(&self) -> u64 {
        self.channels * self.packages * self.dies * self.planes
    }

    /// Flat die count (channel * package * die).
    pub fn total_dies(&self) -> u64 {
        self.channels * self.packages * self.dies
    }

    pub fn total_blocks(&self) -> u64 {
        self.parallel_units() * self.blocks
    }

    pub fn total_physical_pages(&self) -> u64 {
        self.total_blocks() * self.pages_per_block
    }

    /// One page worth of bus time, in nanoseconds.
    pub fn page_transfer_ns(&self) -> Tick {
        self.page_size * 1000 / (self.dma_mhz * self.dma_width)
    }

    pub fn sectors_per_page(&self) -> u64 {
        self.page_size / 512
    }
}

/// Per-page-type latency slot. `Lsb` is the only slot used for single-state
/// cells; `Csb` joins for two states and `Msb` for three.
pub const PAGE_TYPE_SLOTS: usize = 3;

/// Cell timing parameters, per page type where the technology differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingModel {
    /// States per cell: 1, 2 or 3.
    pub n_state: u64,
    /// Leading pages of every block that behave like fast pages.
    pub n_meta: u64,
    /// Lumped command/address overhead per transaction, ns.
    pub t_cmd_ns: Tick,
    /// Cell read time per page type slot (LSB, CSB, MSB), ns.
    pub t_read_ns: [Tick; PAGE_TYPE_SLOTS],
    /// Cell program time per page type slot, ns.
    pub t_prog_ns: [Tick; PAGE_TYPE_SLOTS],
    /// Block erase time, ns.
    pub t_erase_ns: Tick,
}

impl Default for TimingModel {
    fn default() -> Self {
        // MSB-to-LSB read ratio 1.84, MSB-to-CSB 1.37; program ratios 8 and
        // 1.3. Base LSB values are typical TLC datasheet magnitudes and the
        // derived slots round to whole nanoseconds.
        TimingModel {
            n_state: 3,
            n_meta: 8,
            t_cmd_ns: 250,
            t_read_ns: [45_000, 60_438, 82_800],
            t_prog_ns: [250_000, 1_538_462, 2_000_000],
            t_erase_ns: 3_500_000,
        }
    }
}

/// FTL and HIL policy knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct FirmwarePolicy {
    /// Fraction of physical capacity hidden from the host.
    pub op_ratio: f64,
    /// Free-block fraction below which garbage collection runs.
    pub gc_threshold: f64,
    /// Log blocks one mapping set may hold at once.
    pub log_blocks_per_set: u64,
    /// Logical data blocks grouped into one mapping set.
    pub blocks_per_set: u64,
    /// Device queue capacity (requests in flight).
    pub queue_depth: u64,
}

impl Default for FirmwarePolicy {
    fn default() -> Self {
        FirmwarePolicy {
            op_ratio: 0.2,
            gc_threshold: 0.05,
            log_blocks_per_set: 8,
            blocks_per_set: 1,
            queue_depth: 32,
        }
    }
}

/// Everything a run needs: geometry, timing, policy and the optional
/// embedded sweep description.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimConfig {
    pub topology: Topology,
    pub timing: TimingModel,
    pub firmware: FirmwarePolicy,
    pub workload: Option<SweepSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid value for {key}: {msg}")]
    Validation { key: String, msg: String },
}

fn validation(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        key: key.to_string(),
        msg: msg.into(),
    }
}

/// Parse a byte count that may carry a binary K/M/G suffix.
pub fn parse_size(s: &str) -> Option<u64> {
    let s = s.trim();
    let (num, mult) = match s.chars().last()? {
        'k' | 'K' => (&s[..s.len() - 1], 1u64 << 10),
        'm' | 'M' => (&s[..s.len() - 1], 1u64 << 20),
        'g' | 'G' => (&s[..s.len() - 1], 1u64 << 30),
        _ => (s, 1),
    };
    num.trim().parse::<u64>().ok()?.checked_mul(mult)
}

/// One `key = value` occurrence, with its file line for diagnostics.
#[derive(Debug, Clone)]
pub struct RawValue {
    pub value: String,
    pub line: usize,
}

/// Parsed sections before typing: section -> key -> value.
#[derive(Debug, Default)]
pub struct RawConfig {
    sections: Vec<(String, Vec<(String, RawValue)>)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig, ConfigError> {
        let mut raw = RawConfig::default();
        let mut current: Option<usize> = None;
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = match line.find('#') {
                Some(p) => &line[..p],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| ConfigError::Parse {
                    line: lineno,
                    msg: "unterminated section header".into(),
                })?;
                let name = name.trim().to_ascii_lowercase();
                current = Some(match raw.sections.iter().position(|(n, _)| *n == name) {
                    Some(i) => i,
                    None => {
                        raw.sections.push((name, Vec::new()));
                        raw.sections.len() - 1
                    }
                });
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: lineno,
                msg: "expected `key = value`".into(),
            })?;
            let section = current.ok_or_else(|| ConfigError::Parse {
                line: lineno,
                msg: "key/value pair before any [section] header".into(),
            })?;
            raw.sections[section].1.push((
                key.trim().to_ascii_lowercase(),
                RawValue {
                    value: value.trim().to_string(),
                    line: lineno,
                },
            ));
        }
        Ok(raw)
    }

    pub fn section(&self, name: &str) -> Option<&[(String, RawValue)]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, kvs)| kvs.as_slice())
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }
}

/// Typed view over one section; tracks which keys were consumed so leftovers
/// can be reported by name.
pub struct SectionReader<'a> {
    name: &'a str,
    entries: &'a [(String, RawValue)],
    used: Vec<bool>,
}

impl<'a> SectionReader<'a> {
    pub fn new(raw: &'a RawConfig, name: &'a str) -> SectionReader<'a> {
        let entries = raw.section(name).unwrap_or(&[]);
        SectionReader {
            name,
            entries,
            used: vec![false; entries.len()],
        }
    }

    fn take(&mut self, key: &str) -> Option<&'a str> {
        let mut found = None;
        for (i, (k, v)) in self.entries.iter().enumerate() {
            if k == key {
                self.used[i] = true;
                found = Some(v.value.as_str());
            }
        }
        found
    }

    pub fn qualified(&self, key: &str) -> String {
        format!("{}.{}", self.name, key)
    }

    pub fn get_u64(&mut self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => parse_size(v)
                .ok_or_else(|| validation(&self.qualified(key), format!("`{v}` is not a count"))),
        }
    }

    pub fn get_f64(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<f64>()
                .map_err(|_| validation(&self.qualified(key), format!("`{v}` is not a number"))),
        }
    }

    pub fn get_str(&mut self, key: &str) -> Option<&'a str> {
        self.take(key)
    }

    /// Error out if any key in the section was never consumed.
    pub fn finish(self) -> Result<(), ConfigError> {
        for (i, (k, v)) in self.entries.iter().enumerate() {
            if !self.used[i] {
                return Err(ConfigError::Validation {
                    key: format!("{}.{}", self.name, k),
                    msg: format!("unknown key (line {})", v.line),
                });
            }
        }
        Ok(())
    }
}

const KNOWN_SECTIONS: [&str; 4] = ["topology", "timing", "firmware", "workload"];

impl SimConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<SimConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        SimConfig::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<SimConfig, ConfigError> {
        let raw = RawConfig::parse(text)?;
        for name in raw.section_names() {
            if !KNOWN_SECTIONS.contains(&name) {
                return Err(validation(name, "unknown section"));
            }
        }
        let topology = Self::read_topology(&raw)?;
        let timing = Self::read_timing(&raw)?;
        let firmware = Self::read_firmware(&raw)?;
        let workload = SweepSpec::from_raw(&raw)?;
        let cfg = SimConfig {
            topology,
            timing,
            firmware,
            workload,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn read_topology(raw: &RawConfig) -> Result<Topology, ConfigError> {
        let d = Topology::default();
        let mut s = SectionReader::new(raw, "topology");
        let topo = Topology {
            channels: s.get_u64("channels", d.channels)?,
            packages: s.get_u64("packages", d.packages)?,
            dies: s.get_u64("dies", d.dies)?,
            planes: s.get_u64("planes", d.planes)?,
            blocks: s.get_u64("blocks", d.blocks)?,
            pages_per_block: s.get_u64("pages_per_block", d.pages_per_block)?,
            page_size: s.get_u64("page_size", d.page_size)?,
            dma_mhz: s.get_u64("dma_mhz", d.dma_mhz)?,
            dma_width: s.get_u64("dma_width", d.dma_width)?,
            striping_order: match s.get_str("striping_order") {
                None => d.striping_order,
                Some(v) => StripeOrder::parse(v).ok_or_else(|| {
                    validation(
                        "topology.striping_order",
                        format!("`{v}` is not a permutation of CWDP"),
                    )
                })?,
            },
        };
        s.finish()?;
        Ok(topo)
    }

    fn read_timing(raw: &RawConfig) -> Result<TimingModel, ConfigError> {
        let d = TimingModel::default();
        let mut s = SectionReader::new(raw, "timing");
        let timing = TimingModel {
            n_state: s.get_u64("n_state", d.n_state)?,
            n_meta: s.get_u64("n_meta", d.n_meta)?,
            t_cmd_ns: s.get_u64("t_cmd_ns", d.t_cmd_ns)?,
            t_read_ns: [
                s.get_u64("t_read_lsb_ns", d.t_read_ns[0])?,
                s.get_u64("t_read_csb_ns", d.t_read_ns[1])?,
                s.get_u64("t_read_msb_ns", d.t_read_ns[2])?,
            ],
            t_prog_ns: [
                s.get_u64("t_prog_lsb_ns", d.t_prog_ns[0])?,
                s.get_u64("t_prog_csb_ns", d.t_prog_ns[1])?,
                s.get_u64("t_prog_msb_ns", d.t_prog_ns[2])?,
            ],
            t_erase_ns: s.get_u64("t_erase_ns", d.t_erase_ns)?,
        };
        s.finish()?;
        Ok(timing)
    }

    fn read_firmware(raw: &RawConfig) -> Result<FirmwarePolicy, ConfigError> {
        let d = FirmwarePolicy::default();
        let mut s = SectionReader::new(raw, "firmware");
        let fw = FirmwarePolicy {
            op_ratio: s.get_f64("op_ratio", d.op_ratio)?,
            gc_threshold: s.get_f64("gc_threshold", d.gc_threshold)?,
            log_blocks_per_set: s.get_u64("log_blocks_per_set", d.log_blocks_per_set)?,
            blocks_per_set: s.get_u64("blocks_per_set", d.blocks_per_set)?,
            queue_depth: s.get_u64("queue_depth", d.queue_depth)?,
        };
        s.finish()?;
        Ok(fw)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.topology;
        for (key, v) in [
            ("topology.channels", t.channels),
            ("topology.packages", t.packages),
            ("topology.dies", t.dies),
            ("topology.planes", t.planes),
            ("topology.blocks", t.blocks),
            ("topology.pages_per_block", t.pages_per_block),
            ("topology.dma_mhz", t.dma_mhz),
            ("topology.dma_width", t.dma_width),
        ] {
            if v < 1 {
                return Err(validation(key, "must be at least 1"));
            }
        }
        if t.page_size < 512 || !t.page_size.is_power_of_two() {
            return Err(validation(
                "topology.page_size",
                "must be a power of two of at least 512 bytes",
            ));
        }
        if t.pages_per_block > u16::MAX as u64 + 1 {
            return Err(validation("topology.pages_per_block", "must fit in 16 bits"));
        }
        // Physical page count must fit the PPN width with room for the
        // arithmetic below.
        t.channels
            .checked_mul(t.packages)
            .and_then(|v| v.checked_mul(t.dies))
            .and_then(|v| v.checked_mul(t.planes))
            .and_then(|v| v.checked_mul(t.blocks))
            .and_then(|v| v.checked_mul(t.pages_per_block))
            .filter(|v| *v < (1 << 62))
            .ok_or_else(|| validation("topology", "total page count overflows the PPN width"))?;

        let m = &self.timing;
        if !(1..=3).contains(&m.n_state) {
            return Err(validation("timing.n_state", "must be 1, 2 or 3"));
        }
        if m.n_meta > t.pages_per_block {
            return Err(validation(
                "timing.n_meta",
                "cannot exceed pages_per_block",
            ));
        }
        for (key, v) in [
            ("timing.t_cmd_ns", m.t_cmd_ns),
            ("timing.t_erase_ns", m.t_erase_ns),
        ] {
            if v == 0 {
                return Err(validation(key, "must be positive"));
            }
        }
        for i in 0..m.n_state as usize {
            if m.t_read_ns[i] == 0 || m.t_prog_ns[i] == 0 {
                return Err(validation(
                    "timing",
                    format!("read/program latency slot {i} must be positive"),
                ));
            }
        }

        let f = &self.firmware;
        if !(f.op_ratio > 0.0 && f.op_ratio < 1.0) {
            return Err(validation("firmware.op_ratio", "must satisfy 0 < r < 1"));
        }
        if !(f.gc_threshold > 0.0 && f.gc_threshold < f.op_ratio) {
            return Err(validation(
                "firmware.gc_threshold",
                "must satisfy 0 < gc_threshold < op_ratio",
            ));
        }
        if f.log_blocks_per_set < 1 {
            return Err(validation("firmware.log_blocks_per_set", "must be at least 1"));
        }
        if f.blocks_per_set < 1 {
            return Err(validation("firmware.blocks_per_set", "must be at least 1"));
        }
        if f.queue_depth < 1 {
            return Err(validation("firmware.queue_depth", "must be at least 1"));
        }
        if let Some(w) = &self.workload {
            w.validate()?;
        }
        Ok(())
    }

    /// Canonical text form; loading it back yields an equal config.
    pub fn to_config_string(&self) -> String {
        let t = &self.topology;
        let m = &self.timing;
        let f = &self.firmware;
        let mut out = String::new();
        out.push_str("[topology]\n");
        out.push_str(&format!("channels = {}\n", t.channels));
        out.push_str(&format!("packages = {}\n", t.packages));
        out.push_str(&format!("dies = {}\n", t.dies));
        out.push_str(&format!("planes = {}\n", t.planes));
        out.push_str(&format!("blocks = {}\n", t.blocks));
        out.push_str(&format!("pages_per_block = {}\n", t.pages_per_block));
        out.push_str(&format!("page_size = {}\n", t.page_size));
        out.push_str(&format!("dma_mhz = {}\n", t.dma_mhz));
        out.push_str(&format!("dma_width = {}\n", t.dma_width));
        out.push_str(&format!("striping_order = {}\n", t.striping_order));
        out.push_str("\n[timing]\n");
        out.push_str(&format!("n_state = {}\n", m.n_state));
        out.push_str(&format!("n_meta = {}\n", m.n_meta));
        out.push_str(&format!("t_cmd_ns = {}\n", m.t_cmd_ns));
        out.push_str(&format!("t_read_lsb_ns = {}\n", m.t_read_ns[0]));
        out.push_str(&format!("t_read_csb_ns = {}\n", m.t_read_ns[1]));
        out.push_str(&format!("t_read_msb_ns = {}\n", m.t_read_ns[2]));
        out.push_str(&format!("t_prog_lsb_ns = {}\n", m.t_prog_ns[0]));
        out.push_str(&format!("t_prog_csb_ns = {}\n", m.t_prog_ns[1]));
        out.push_str(&format!("t_prog_msb_ns = {}\n", m.t_prog_ns[2]));
        out.push_str(&format!("t_erase_ns = {}\n", m.t_erase_ns));
        out.push_str("\n[firmware]\n");
        out.push_str(&format!("op_ratio = {}\n", f.op_ratio));
        out.push_str(&format!("gc_threshold = {}\n", f.gc_threshold));
        out.push_str(&format!("log_blocks_per_set = {}\n", f.log_blocks_per_set));
        out.push_str(&format!("blocks_per_set = {}\n", f.blocks_per_set));
        out.push_str(&format!("queue_depth = {}\n", f.queue_depth));
        if let Some(w) = &self.workload {
            out.push_str("\n[workload]\n");
            out.push_str(&w.to_config_section());
        }
        out
    }
}

/// Pages the host may address: physical capacity minus over-provisioning,
/// rounded down.
pub fn total_logical_pages(topology: &Topology, firmware: &FirmwarePolicy) -> u64 {
    let physical = topology.total_physical_pages();
    // The epsilon keeps an exact integer product from landing a hair below
    // itself in floating point.
    ((physical as f64) * (1.0 - firmware.op_ratio) + 1e-6).floor() as u64
}
