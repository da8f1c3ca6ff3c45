//! Output-stationary PE array: functional pulse model and block timing.
//!
//! Row `r` of an A page enters the left edge delayed by `r` cycles, column
//! `c` of a B page enters the top edge delayed by `c` cycles. Every cycle each
//! PE multiplies the pair it holds into its private accumulator and forwards
//! A right and B down. PE `(r, c)` therefore sees element `l` of its row and
//! column at cycle `l + r + c`; the last MAC fires at `L + 2(W-1) - 1`, and
//! one more cycle latches the tile into Buffer C.

use serde::{Deserialize, Serialize};

use crate::dtype::{DType, Element, PpaEntry};
use crate::error::{Error, Result};
use crate::layout::{BlockGeometry, DEFAULT_ARRAY_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub dim: usize,
    /// Input skew before the last PE row/column starts receiving data.
    pub fill_skew: u64,
    /// Propagation to the far corner plus the latch into Buffer C.
    pub drain: u64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig::with_dim(DEFAULT_ARRAY_DIM)
    }
}

impl ArrayConfig {
    pub fn with_dim(dim: usize) -> Self {
        ArrayConfig { dim, fill_skew: dim.saturating_sub(1) as u64, drain: dim as u64 }
    }

    /// Cycles to stream one `W x L` by `L x W` block pair through the array.
    pub fn sa_cycles(&self, l: usize) -> u64 {
        l as u64 + self.fill_skew + self.drain
    }

    /// Wall time of one block op in ns at the dtype's array clock.
    pub fn block_ns(&self, l: usize, ppa: &PpaEntry) -> f64 {
        self.sa_cycles(l) as f64 * 1e9 / ppa.freq_hz
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("array.dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// `L + 2(W-1) + 1` for the default 16x16 array.
pub fn sa_cycles(l: usize) -> u64 {
    ArrayConfig::default().sa_cycles(l)
}

/// Energy of `cycles` array cycles, in mJ.
pub fn block_energy(ppa: &PpaEntry, cycles: u64) -> f64 {
    // mW * s = mJ
    ppa.power_mw * cycles as f64 / ppa.freq_hz
}

/// Same as [`block_energy`] with the built-in table row for `dtype`.
pub fn block_energy_for(dtype: DType, cycles: u64) -> f64 {
    ppa_for(dtype).power_mw * cycles as f64 / dtype.array_freq_hz()
}

fn ppa_for(dtype: DType) -> PpaEntry {
    PpaEntry {
        kind: dtype,
        freq_hz: dtype.array_freq_hz(),
        power_mw: dtype.array_power_mw(),
        area_mm2: dtype.array_area_mm2(),
    }
}

/// Pulses one block pair through a `W x W` array, accumulating into `acc`.
///
/// Returns the number of cycles until the tile is latched. Values match
/// [`crate::gemm::multi_acc`] exactly: every PE sees its `L` products in
/// ascending `l` order.
pub fn sa_compute_block<T: Element>(
    array: &ArrayConfig,
    geometry: &BlockGeometry,
    a: &[T],
    b: &[T],
    acc: &mut [T::Acc],
) -> Result<u64> {
    let (w, l) = (geometry.w, geometry.l);
    if w != array.dim {
        return Err(Error::GeometryMismatch(format!("block rows {w} != array dimension {}", array.dim)));
    }
    if a.len() != w * l || b.len() != w * l || acc.len() != w * w {
        return Err(Error::GeometryMismatch(format!(
            "expected {w}x{l} operands and a {w}x{w} accumulator, got {}, {} and {} elements",
            a.len(),
            b.len(),
            acc.len()
        )));
    }

    // a_reg[r][c]: A operand held by PE (r,c) this cycle; same for b_reg.
    let mut a_reg: Vec<Option<T>> = vec![None; w * w];
    let mut b_reg: Vec<Option<T>> = vec![None; w * w];
    let mut next_a = a_reg.clone();
    let mut next_b = b_reg.clone();
    let mut cycle: u64 = 0;
    let mut pending_macs = w * w * l;

    while pending_macs > 0 {
        let t = cycle as usize;
        for r in 0..w {
            for c in 0..w {
                next_a[r * w + c] = if c == 0 {
                    t.checked_sub(r).filter(|&li| li < l).map(|li| a[r * l + li])
                } else {
                    a_reg[r * w + c - 1]
                };
                next_b[r * w + c] = if r == 0 {
                    t.checked_sub(c).filter(|&li| li < l).map(|li| b[c * l + li])
                } else {
                    b_reg[(r - 1) * w + c]
                };
            }
        }
        std::mem::swap(&mut a_reg, &mut next_a);
        std::mem::swap(&mut b_reg, &mut next_b);
        for idx in 0..w * w {
            if let (Some(x), Some(y)) = (a_reg[idx], b_reg[idx]) {
                acc[idx] = T::mac(acc[idx], x, y);
                pending_macs -= 1;
            }
        }
        cycle += 1;
    }
    // latch into Buffer C
    Ok(cycle + 1)
}
