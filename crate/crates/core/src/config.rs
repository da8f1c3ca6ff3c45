//! Whole-system configuration and its JSON form.
//!
//! Every section is optional in JSON; missing fields take their defaults.
//!
//! ```json
//! {
//!   "link":   {"lanes": 16, "gbps": 4.0, "eta": 0.85, "base_latency_ns": 500, "max_payload": 4096},
//!   "memory": {"llc_bytes": 2097152, "line_bytes": 64, "llc_ways": 16,
//!              "llc_hit_ns": 20, "dram_latency_ns": 60, "dram_bw_bytes_per_ns": 12.8},
//!   "smmu":   {"tlb_entries": 2048, "translate_ns": 100},
//!   "mode": "DC",
//!   "channels": 1
//! }
//! ```

use serde::{Deserialize, Serialize};

use crate::dtype::{DType, PpaTable};
use crate::error::{Error, Result};
use crate::systolic::ArrayConfig;
use crate::sysmodel::{AccessMode, LinkConfig, MemoryConfig, MemorySystem, SmmuConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Two slots per input buffer so the next fetch overlaps compute.
    pub double_buffer: bool,
    /// CPU command that starts one offloaded GEMM.
    pub command_ns: u64,
    /// Operands written by the CPU right before offload start out in the LLC.
    pub prewarm_operands: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { double_buffer: true, command_ns: 200, prewarm_operands: true }
    }
}

/// Cycle costs of the host CPU for the single-threaded loop baseline and the
/// non-GEMM layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpuCostModel {
    pub cpu_freq_hz: f64,
    pub cycles_per_mac: PerDType,
    pub softmax_cycles_per_element: f64,
    pub layernorm_cycles_per_element: f64,
    pub transpose_cycles_per_element: f64,
    pub activation_cycles_per_element: f64,
    /// Writing one element into blocked layout.
    pub pack_cycles_per_element: f64,
    /// Half <-> single conversion; a loop MAC converts both operands.
    pub fp16_convert_cycles_per_element: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerDType {
    pub int8: f64,
    pub int16: f64,
    pub int32: f64,
    pub fp16: f64,
    pub fp32: f64,
}

impl PerDType {
    pub fn get(&self, dtype: DType) -> f64 {
        match dtype {
            DType::Int8 => self.int8,
            DType::Int16 => self.int16,
            DType::Int32 => self.int32,
            DType::Fp16 => self.fp16,
            DType::Fp32 => self.fp32,
        }
    }

    pub fn uniform(v: f64) -> Self {
        PerDType { int8: v, int16: v, int32: v, fp16: v, fp32: v }
    }
}

impl Default for PerDType {
    fn default() -> Self {
        PerDType { int8: 4.0, int16: 4.0, int32: 4.0, fp16: 6.0, fp32: 6.0 }
    }
}

impl Default for CpuCostModel {
    fn default() -> Self {
        CpuCostModel {
            cpu_freq_hz: 1e9,
            cycles_per_mac: PerDType::default(),
            softmax_cycles_per_element: 40.0,
            layernorm_cycles_per_element: 12.0,
            transpose_cycles_per_element: 3.0,
            activation_cycles_per_element: 30.0,
            pack_cycles_per_element: 2.0,
            fp16_convert_cycles_per_element: 2.0,
        }
    }
}

impl CpuCostModel {
    /// Effective cycles of one loop-baseline MAC, conversions included.
    pub fn mac_cycles(&self, dtype: DType) -> f64 {
        let base = self.cycles_per_mac.get(dtype);
        if dtype == DType::Fp16 {
            base + 2.0 * self.fp16_convert_cycles_per_element
        } else {
            base
        }
    }

    /// `cycles` CPU cycles in whole ns, rounded up.
    pub fn cycles_to_ns(&self, cycles: f64) -> u64 {
        (cycles * 1e9 / self.cpu_freq_hz).ceil() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.cycles_per_mac;
        let all = [
            self.cpu_freq_hz,
            p.int8,
            p.int16,
            p.int32,
            p.fp16,
            p.fp32,
            self.softmax_cycles_per_element,
            self.layernorm_cycles_per_element,
            self.transpose_cycles_per_element,
            self.activation_cycles_per_element,
            self.pack_cycles_per_element,
            self.fp16_convert_cycles_per_element,
        ];
        if all.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig("cpu cost model parameters must all be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub array: ArrayConfig,
    pub link: LinkConfig,
    pub memory: MemoryConfig,
    pub smmu: SmmuConfig,
    pub mode: AccessMode,
    /// Accelerator channels time-sharing one link.
    pub channels: usize,
    pub engine: EngineConfig,
    pub cpu: CpuCostModel,
    pub ppa: PpaTable,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            array: ArrayConfig::default(),
            link: LinkConfig::default(),
            memory: MemoryConfig::default(),
            smmu: SmmuConfig::default(),
            mode: AccessMode::DC,
            channels: 1,
            engine: EngineConfig::default(),
            cpu: CpuCostModel::default(),
            ppa: PpaTable::default(),
        }
    }
}

impl SystemConfig {
    /// Parses and validates a JSON config. Errors name the offending field
    /// path and its line/column.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: SystemConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::InvalidConfig(format!(
                "line {} column {}: field `{}`: {}",
                inner.line(),
                inner.column(),
                path,
                inner
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        self.link.validate()?;
        self.memory.validate()?;
        self.smmu.validate()?;
        self.cpu.validate()?;
        if self.channels == 0 {
            return Err(Error::InvalidConfig("channels must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_mode(mut self, mode: AccessMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_link(mut self, link: LinkConfig) -> Self {
        self.link = link;
        self
    }

    pub fn memory_system(&self) -> MemorySystem {
        MemorySystem::new(self.link, self.memory, self.smmu, self.mode)
    }
}
