//! Host-side transfer timing: PCIe link, DMA engine, SMMU and the two access
//! paths into memory.
//!
//! * Direct Cache (DC): the payload is split into cache-line requests that go
//!   through the LLC. Requests are issued one per link slot; each returns
//!   after the LLC hit latency, or hit + DRAM latency on a miss, and then
//!   queues for the link.
//! * Direct Memory (DM): the payload goes to the memory controller in bursts
//!   of up to `max_payload` bytes, bypassing the LLC. Each burst pays the DRAM
//!   latency once; data streams at the slower of link and DRAM bandwidth.
//!
//! Both paths pay the link's base (round-trip) latency once per transfer.

mod cache;
mod tlb;

pub use cache::{LastLevelCache, TouchStats};
pub use tlb::Tlb;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::PAGE_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub lanes: u32,
    /// Signalling rate of one lane in Gb/s.
    #[serde(rename = "gbps")]
    pub per_lane_gbps: f64,
    /// Fraction of raw bandwidth left after encoding and protocol overhead.
    pub eta: f64,
    pub base_latency_ns: f64,
    #[serde(rename = "max_payload")]
    pub max_payload_bytes: u64,
}

impl Default for LinkConfig {
    /// 16 lanes, 64 Gb/s aggregate.
    fn default() -> Self {
        LinkConfig::aggregate(16, 64.0)
    }
}

impl LinkConfig {
    /// A link of `lanes` lanes whose combined raw rate is `total_gbps`.
    pub fn aggregate(lanes: u32, total_gbps: f64) -> Self {
        LinkConfig {
            lanes,
            per_lane_gbps: total_gbps / lanes as f64,
            eta: 0.85,
            base_latency_ns: 500.0,
            max_payload_bytes: PAGE_BYTES as u64,
        }
    }

    /// Usable bandwidth in bytes per ns.
    pub fn effective_bw(&self) -> f64 {
        self.lanes as f64 * self.per_lane_gbps * self.eta / 8.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.lanes == 0 {
            return Err(Error::InvalidConfig("link.lanes must be >= 1".into()));
        }
        if !(self.per_lane_gbps > 0.0) {
            return Err(Error::InvalidConfig("link.gbps must be > 0".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidConfig("link.eta must be in (0, 1]".into()));
        }
        if !(self.base_latency_ns >= 0.0) {
            return Err(Error::InvalidConfig("link.base_latency_ns must be >= 0".into()));
        }
        if self.max_payload_bytes == 0 {
            return Err(Error::InvalidConfig("link.max_payload must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub llc_bytes: u64,
    pub line_bytes: u64,
    pub llc_ways: usize,
    pub llc_hit_ns: f64,
    pub dram_latency_ns: f64,
    /// DDR3-1600 x64: 12.8 GB/s.
    pub dram_bw_bytes_per_ns: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            llc_bytes: 2 << 20,
            line_bytes: 64,
            llc_ways: 16,
            llc_hit_ns: 20.0,
            dram_latency_ns: 60.0,
            dram_bw_bytes_per_ns: 12.8,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.line_bytes == 0 || self.llc_ways == 0 {
            return Err(Error::InvalidConfig("memory.line_bytes and memory.llc_ways must be >= 1".into()));
        }
        if self.llc_bytes == 0 || self.llc_bytes % (self.line_bytes * self.llc_ways as u64) != 0 {
            return Err(Error::InvalidConfig(
                "memory.llc_bytes must be a non-zero multiple of line_bytes * llc_ways".into(),
            ));
        }
        if !(self.llc_hit_ns >= 0.0 && self.dram_latency_ns >= 0.0) {
            return Err(Error::InvalidConfig("memory latencies must be >= 0".into()));
        }
        if !(self.dram_bw_bytes_per_ns > 0.0) {
            return Err(Error::InvalidConfig("memory.dram_bw_bytes_per_ns must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmmuConfig {
    pub tlb_entries: usize,
    /// Page-walk cost charged on each TLB miss.
    pub translate_ns: f64,
}

impl Default for SmmuConfig {
    fn default() -> Self {
        SmmuConfig { tlb_entries: 2048, translate_ns: 100.0 }
    }
}

impl SmmuConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.translate_ns >= 0.0) {
            return Err(Error::InvalidConfig("smmu.translate_ns must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum AccessMode {
    /// Fine-grained requests through the last-level cache.
    #[default]
    DC,
    /// Large bursts straight to the memory controller.
    DM,
}

impl fmt::Display for AccessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessMode::DC => "DC",
            AccessMode::DM => "DM",
        })
    }
}

impl FromStr for AccessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dc" => Ok(AccessMode::DC),
            "dm" => Ok(AccessMode::DM),
            other => Err(Error::InvalidConfig(format!("unknown access mode `{other}` (expected dc or dm)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Memory to accelerator.
    Read,
    /// Accelerator to memory.
    Write,
}

/// Counters of one simulation run. All fields only grow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TransferLedger {
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub block_fetches: u64,
    pub block_writebacks: u64,
    pub descriptor_fetches: u64,
    pub tlb_lookups: u64,
    pub tlb_misses: u64,
    pub llc_hits: u64,
    pub llc_misses: u64,
    /// Busy time of data movement (not necessarily on the critical path).
    pub data_ns: u64,
    /// Busy time of descriptor fetches and translations.
    pub control_ns: u64,
}

impl TransferLedger {
    pub fn bytes_moved(&self) -> u64 {
        self.bytes_read + self.bytes_written
    }
}

/// Cost of one DMA block transfer, split by category, in whole ns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DmaCost {
    pub control_ns: u64,
    pub data_ns: u64,
}

impl DmaCost {
    pub fn total(&self) -> u64 {
        self.control_ns + self.data_ns
    }
}

/// Time in ns to move `bytes` starting at `addr`.
///
/// In DC mode the LLC state is updated; DM never touches it.
pub fn transfer_time(
    addr: u64,
    bytes: u64,
    mode: AccessMode,
    link: &LinkConfig,
    mem: &MemoryConfig,
    llc: &mut LastLevelCache,
) -> (f64, TouchStats) {
    if bytes == 0 {
        return (0.0, TouchStats::default());
    }
    let link_bw = link.effective_bw();
    match mode {
        AccessMode::DM => {
            let bursts = bytes.div_ceil(link.max_payload_bytes);
            let stream_bw = link_bw.min(mem.dram_bw_bytes_per_ns);
            let t = link.base_latency_ns + bursts as f64 * mem.dram_latency_ns + bytes as f64 / stream_bw;
            (t, TouchStats::default())
        }
        AccessMode::DC => {
            let line = mem.line_bytes;
            let first = addr / line;
            let last = (addr + bytes - 1) / line;
            let slot = line as f64 / link_bw;
            let dram_line = line as f64 / mem.dram_bw_bytes_per_ns;
            let mut link_free = 0.0f64;
            let mut dram_free = 0.0f64;
            let mut stats = TouchStats::default();
            let mut remaining = bytes;
            for (n, l) in (first..=last).enumerate() {
                let issue = n as f64 * slot;
                let lo = (l * line).max(addr);
                let hi = ((l + 1) * line).min(addr + bytes);
                let chunk = hi - lo;
                remaining -= chunk;
                let ready = if llc.access(l * line) {
                    stats.hits += 1;
                    issue + mem.llc_hit_ns
                } else {
                    stats.misses += 1;
                    let start = (issue + mem.llc_hit_ns).max(dram_free);
                    dram_free = start + dram_line;
                    start + mem.dram_latency_ns
                };
                link_free = ready.max(link_free) + chunk as f64 / link_bw;
            }
            debug_assert_eq!(remaining, 0);
            (link.base_latency_ns + link_free, stats)
        }
    }
}

/// Base of the DMA descriptor ring in the simulated physical address space.
pub const DESCRIPTOR_RING_BASE: u64 = 0x7000_0000;
pub const DESCRIPTOR_BYTES: u64 = 64;
const DESCRIPTOR_RING_ENTRIES: u64 = 256;

/// Link, LLC, SMMU and DMA state of one simulation run.
#[derive(Debug, Clone)]
pub struct MemorySystem {
    pub link: LinkConfig,
    pub mem: MemoryConfig,
    pub smmu: SmmuConfig,
    pub mode: AccessMode,
    llc: LastLevelCache,
    tlb: Tlb,
    ledger: TransferLedger,
    next_descriptor: u64,
}

fn ceil_ns(t: f64) -> u64 {
    t.ceil() as u64
}

impl MemorySystem {
    pub fn new(link: LinkConfig, mem: MemoryConfig, smmu: SmmuConfig, mode: AccessMode) -> Self {
        MemorySystem {
            link,
            mem,
            smmu,
            mode,
            llc: LastLevelCache::new(mem.llc_bytes, mem.line_bytes, mem.llc_ways),
            tlb: Tlb::new(smmu.tlb_entries),
            ledger: TransferLedger::default(),
            next_descriptor: 0,
        }
    }

    pub fn ledger(&self) -> &TransferLedger {
        &self.ledger
    }

    pub fn llc(&self) -> &LastLevelCache {
        &self.llc
    }

    /// CPU-side writes (packing, descriptor setup) that leave lines resident
    /// in the LLC. Not counted in the ledger.
    pub fn cpu_touch(&mut self, addr: u64, bytes: u64) {
        self.llc.touch(addr, bytes);
    }

    /// Transfer without descriptor or translation, updating LLC counters.
    pub fn raw_transfer(&mut self, addr: u64, bytes: u64) -> f64 {
        let (t, stats) = transfer_time(addr, bytes, self.mode, &self.link, &self.mem, &mut self.llc);
        self.ledger.llc_hits += stats.hits;
        self.ledger.llc_misses += stats.misses;
        t
    }

    /// One DMA-driven page transfer: descriptor fetch and SMMU lookup
    /// (control), then the payload (data).
    pub fn dma_block_transfer(&mut self, page_addr: u64, bytes: u64, direction: Direction) -> DmaCost {
        let desc_addr = DESCRIPTOR_RING_BASE + (self.next_descriptor % DESCRIPTOR_RING_ENTRIES) * DESCRIPTOR_BYTES;
        self.next_descriptor += 1;
        let mut control = self.raw_transfer(desc_addr, DESCRIPTOR_BYTES);
        self.ledger.descriptor_fetches += 1;

        self.ledger.tlb_lookups += 1;
        if !self.tlb.lookup(page_addr / PAGE_BYTES as u64) {
            self.ledger.tlb_misses += 1;
            control += self.smmu.translate_ns;
        }

        let data = self.raw_transfer(page_addr, bytes);
        match direction {
            Direction::Read => {
                self.ledger.block_fetches += 1;
                self.ledger.bytes_read += bytes;
            }
            Direction::Write => {
                self.ledger.block_writebacks += 1;
                self.ledger.bytes_written += bytes;
            }
        }
        let cost = DmaCost { control_ns: ceil_ns(control), data_ns: ceil_ns(data) };
        self.ledger.control_ns += cost.control_ns;
        self.ledger.data_ns += cost.data_ns;
        cost
    }
}
