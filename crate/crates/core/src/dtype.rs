//! Element types supported by the array and their arithmetic.
//!
//! Each [`DType`] carries its storage width and the frequency/power of the
//! MAC array synthesized for it. Multiplication semantics live on the
//! [`Element`] trait: integer kinds widen into a wrapping 32-bit
//! accumulator, float kinds accumulate in `f32`. Outputs are narrowed once,
//! after the full reduction.

use std::fmt;
use std::str::FromStr;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "int8")]
    Int8,
    #[serde(rename = "int16")]
    Int16,
    #[serde(rename = "int32")]
    Int32,
    #[serde(rename = "fp16")]
    Fp16,
    #[serde(rename = "fp32")]
    Fp32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccRule {
    /// Widen to 32-bit integers, wrap on overflow.
    WrappingInt32,
    /// Accumulate in IEEE single precision.
    Fp32,
}

impl DType {
    pub const ALL: [DType; 5] = [DType::Int8, DType::Int16, DType::Int32, DType::Fp16, DType::Fp32];

    pub const fn byte_width(self) -> usize {
        match self {
            DType::Int8 => 1,
            DType::Int16 | DType::Fp16 => 2,
            DType::Int32 | DType::Fp32 => 4,
        }
    }

    pub const fn is_float(self) -> bool {
        matches!(self, DType::Fp16 | DType::Fp32)
    }

    pub const fn acc_rule(self) -> AccRule {
        if self.is_float() {
            AccRule::Fp32
        } else {
            AccRule::WrappingInt32
        }
    }

    /// Clock of the synthesized array for this type.
    pub const fn array_freq_hz(self) -> f64 {
        if self.is_float() {
            0.6e9
        } else {
            1.0e9
        }
    }

    /// Power of the 16x16 array for this type, in mW.
    pub const fn array_power_mw(self) -> f64 {
        match self {
            DType::Int32 => 585.20,
            DType::Int16 => 409.74,
            DType::Int8 => 353.64,
            DType::Fp32 => 320.32,
            DType::Fp16 => 245.661,
        }
    }

    pub const fn array_area_mm2(self) -> f64 {
        match self {
            DType::Int32 => 0.611,
            DType::Int16 => 0.193,
            DType::Int8 => 0.054,
            DType::Fp32 => 0.694,
            DType::Fp16 => 0.199,
        }
    }

    /// Stable on-disk code.
    pub const fn code(self) -> u8 {
        match self {
            DType::Int8 => 0,
            DType::Int16 => 1,
            DType::Int32 => 2,
            DType::Fp16 => 3,
            DType::Fp32 => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<DType> {
        DType::ALL.into_iter().find(|d| d.code() == code)
    }

    pub const fn name(self) -> &'static str {
        match self {
            DType::Int8 => "int8",
            DType::Int16 => "int16",
            DType::Int32 => "int32",
            DType::Fp16 => "fp16",
            DType::Fp32 => "fp32",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "int8" | "i8" => Ok(DType::Int8),
            "int16" | "i16" => Ok(DType::Int16),
            "int32" | "i32" => Ok(DType::Int32),
            "fp16" | "f16" | "float16" => Ok(DType::Fp16),
            "fp32" | "f32" | "float32" => Ok(DType::Fp32),
            other => Err(Error::InvalidConfig(format!("unknown dtype `{other}`"))),
        }
    }
}

/// One row of the power/performance/area table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpaEntry {
    pub kind: DType,
    pub freq_hz: f64,
    pub power_mw: f64,
    pub area_mm2: f64,
}

/// Per-type array frequency, power and area. Defaults to the synthesized
/// values; a JSON table can replace individual rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PpaTable {
    entries: Vec<PpaEntry>,
}

impl Default for PpaTable {
    fn default() -> Self {
        let entries = DType::ALL
            .into_iter()
            .map(|kind| PpaEntry {
                kind,
                freq_hz: kind.array_freq_hz(),
                power_mw: kind.array_power_mw(),
                area_mm2: kind.array_area_mm2(),
            })
            .collect();
        PpaTable { entries }
    }
}

impl PpaTable {
    /// Parses a JSON array of entries. Kinds missing from the array keep
    /// their built-in values.
    pub fn from_json(text: &str) -> Result<Self> {
        let rows: Vec<PpaEntry> =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("ppa table: {e}")))?;
        let mut table = PpaTable::default();
        for row in rows {
            table.set(row)?;
        }
        Ok(table)
    }

    pub fn set(&mut self, row: PpaEntry) -> Result<()> {
        if !(row.freq_hz > 0.0) || row.power_mw < 0.0 {
            return Err(Error::InvalidConfig(format!("ppa row for {} must have freq > 0 and power >= 0", row.kind)));
        }
        match self.entries.iter_mut().find(|e| e.kind == row.kind) {
            Some(slot) => *slot = row,
            None => self.entries.push(row),
        }
        Ok(())
    }

    pub fn get(&self, kind: DType) -> PpaEntry {
        self.entries.iter().copied().find(|e| e.kind == kind).unwrap_or(PpaEntry {
            kind,
            freq_hz: kind.array_freq_hz(),
            power_mw: kind.array_power_mw(),
            area_mm2: kind.array_area_mm2(),
        })
    }

    pub fn entries(&self) -> &[PpaEntry] {
        &self.entries
    }
}

/// Scalar element stored in blocked pages.
pub trait Element: Copy + Default + PartialEq + fmt::Debug + Send + Sync + 'static {
    const DTYPE: DType;
    type Acc: Copy + Default + PartialEq + fmt::Debug + Send + Sync;

    /// `acc + widen(a) * widen(b)` under the type's accumulation rule.
    fn mac(acc: Self::Acc, a: Self, b: Self) -> Self::Acc;
    /// Final cast back to the storage type.
    fn narrow(acc: Self::Acc) -> Self;
    fn to_f64(self) -> f64;
    fn read_le(bytes: &[u8]) -> Self;
    fn write_le(self, out: &mut [u8]);
}

macro_rules! int_element {
    ($t:ty, $dtype:expr) => {
        impl Element for $t {
            const DTYPE: DType = $dtype;
            type Acc = i32;

            #[inline]
            fn mac(acc: i32, a: Self, b: Self) -> i32 {
                acc.wrapping_add((a as i32).wrapping_mul(b as i32))
            }

            #[inline]
            fn narrow(acc: i32) -> Self {
                acc as $t
            }

            fn to_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes[..std::mem::size_of::<$t>()].try_into().unwrap())
            }

            #[inline]
            fn write_le(self, out: &mut [u8]) {
                out[..std::mem::size_of::<$t>()].copy_from_slice(&self.to_le_bytes());
            }
        }
    };
}

int_element!(i8, DType::Int8);
int_element!(i16, DType::Int16);
int_element!(i32, DType::Int32);

impl Element for f32 {
    const DTYPE: DType = DType::Fp32;
    type Acc = f32;

    #[inline]
    fn mac(acc: f32, a: f32, b: f32) -> f32 {
        acc + a * b
    }

    #[inline]
    fn narrow(acc: f32) -> f32 {
        acc
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }

    #[inline]
    fn write_le(self, out: &mut [u8]) {
        out[..4].copy_from_slice(&self.to_le_bytes());
    }
}

impl Element for f16 {
    const DTYPE: DType = DType::Fp16;
    type Acc = f32;

    #[inline]
    fn mac(acc: f32, a: f16, b: f16) -> f32 {
        acc + a.to_f32() * b.to_f32()
    }

    /// Round to nearest, ties to even.
    #[inline]
    fn narrow(acc: f32) -> f16 {
        f16::from_f32(acc)
    }

    fn to_f64(self) -> f64 {
        self.to_f64()
    }

    #[inline]
    fn read_le(bytes: &[u8]) -> Self {
        f16::from_le_bytes(bytes[..2].try_into().unwrap())
    }

    #[inline]
    fn write_le(self, out: &mut [u8]) {
        out[..2].copy_from_slice(&self.to_le_bytes());
    }
}

/// Calls `$body` with `$T` bound to the element type of `$dtype`.
#[macro_export]
macro_rules! dispatch_dtype {
    ($dtype:expr, $T:ident => $body:expr) => {
        match $dtype {
            $crate::DType::Int8 => {
                type $T = i8;
                $body
            }
            $crate::DType::Int16 => {
                type $T = i16;
                $body
            }
            $crate::DType::Int32 => {
                type $T = i32;
                $body
            }
            $crate::DType::Fp16 => {
                type $T = $crate::f16;
                $body
            }
            $crate::DType::Fp32 => {
                type $T = f32;
                $body
            }
        }
    };
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths_match_kind() {
        for d in DType::ALL {
            let expected = match d {
                DType::Int8 => std::mem::size_of::<i8>(),
                DType::Int16 => std::mem::size_of::<i16>(),
                DType::Int32 => std::mem::size_of::<i32>(),
                DType::Fp16 => std::mem::size_of::<f16>(),
                DType::Fp32 => std::mem::size_of::<f32>(),
            };
            assert_eq!(d.byte_width(), expected);
            assert_eq!(DType::from_code(d.code()), Some(d));
            assert_eq!(d.name().parse::<DType>().unwrap(), d);
        }
    }

    #[test]
    fn int8_narrow_wraps() {
        let acc = <i8 as Element>::mac(0, 127, 127);
        assert_eq!(acc, 16129);
        // brute-force modular reduction into [-128, 127]
        let wrapped = ((16129i64 % 256) + 256) % 256;
        let wrapped = if wrapped > 127 { wrapped - 256 } else { wrapped };
        assert_eq!(<i8 as Element>::narrow(acc) as i64, wrapped);
        assert_eq!(<i8 as Element>::narrow(acc), 1);
    }

    #[test]
    fn int32_accumulator_wraps() {
        let acc = <i32 as Element>::mac(i32::MAX, 1, 1);
        assert_eq!(acc, i32::MIN);
    }

    #[test]
    fn fp16_narrow_is_round_to_nearest_even() {
        // 1 + 2^-11 lies exactly between 1 and the next f16 (1 + 2^-10): ties to even -> 1.
        let halfway = 1.0f32 + 2f32.powi(-11);
        assert_eq!(<f16 as Element>::narrow(halfway), f16::from_f32(1.0));
        // 1 + 3*2^-11 ties between 1+2^-10 (odd) and 1+2^-9 (even).
        let halfway = 1.0f32 + 3.0 * 2f32.powi(-11);
        assert_eq!(<f16 as Element>::narrow(halfway).to_f32(), 1.0 + 2f32.powi(-9));
    }

    #[test]
    fn ppa_override_replaces_one_row() {
        let table = PpaTable::from_json(r#"[{"kind":"int8","freq_hz":2e9,"power_mw":100.0,"area_mm2":0.1}]"#).unwrap();
        assert_eq!(table.get(DType::Int8).freq_hz, 2e9);
        assert_eq!(table.get(DType::Int32).power_mw, 585.20);
        assert!(PpaTable::from_json(r#"[{"kind":"int8","freq_hz":0,"power_mw":1,"area_mm2":0}]"#).is_err());
    }
}
