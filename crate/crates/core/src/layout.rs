//! Page-sized block storage for GEMM operands.
//!
//! A matrix is cut into `W x L` tiles that each fill exactly one 4096-byte
//! page, where `W` is the array dimension and `L = 4096 / (W * width)`.
//!
//! * [`Layout::ARowBand`] (left operand, and results): block `(i, k)` holds
//!   rows `[iW, (i+1)W)` and columns `[kL, (k+1)L)`, row-major in the page.
//!   Pages are ordered row-band by row-band.
//! * [`Layout::BRestructured`] (right operand): block `(j, k)` holds rows
//!   `[kL, (k+1)L)` and columns `[jW, (j+1)W)`, column-major in the page, so
//!   each of the `W` array columns reads one contiguous run of `L` elements.
//!   All `k` blocks of a column band are adjacent in memory.
//!
//! Padding up to whole blocks is zero and never shows up in [`BlockedMatrix::unpack`].

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dtype::{DType, Element};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const PAGE_BYTES: usize = 4096;
pub const DEFAULT_ARRAY_DIM: usize = 16;

const MAGIC: &[u8; 4] = b"MXFB";
const FORMAT_VERSION: u16 = 1;
const HEADER_BYTES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockGeometry {
    /// Rows per block; equals the array dimension.
    pub w: usize,
    /// Columns per block.
    pub l: usize,
    pub page_bytes: usize,
    pub dtype: DType,
}

impl BlockGeometry {
    pub fn elements(&self) -> usize {
        self.w * self.l
    }

    /// Number of `W x W` result tiles that share one page.
    pub fn tiles_per_page(&self) -> usize {
        self.l / self.w
    }
}

/// Sizes a block so that `W x L` elements of `dtype` fill one page.
pub fn block_geometry(dtype: DType, w: usize) -> Result<BlockGeometry> {
    let width = dtype.byte_width();
    if w == 0 || PAGE_BYTES % (w * width) != 0 {
        return Err(Error::NonDivisiblePage { page: PAGE_BYTES, dim: w, width });
    }
    Ok(BlockGeometry { w, l: PAGE_BYTES / (w * width), page_bytes: PAGE_BYTES, dtype })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    ARowBand,
    BRestructured,
}

impl Layout {
    fn code(self) -> u8 {
        match self {
            Layout::ARowBand => 0,
            Layout::BRestructured => 1,
        }
    }

    fn from_code(code: u8) -> Option<Layout> {
        match code {
            0 => Some(Layout::ARowBand),
            1 => Some(Layout::BRestructured),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockedMatrix {
    logical_rows: usize,
    logical_cols: usize,
    geometry: BlockGeometry,
    layout: Layout,
    /// (outer, inner): `(i, k)` for A, `(j, k)` for B.
    grid: (usize, usize),
    pages: Vec<u8>,
}

impl BlockedMatrix {
    /// All-zero blocked matrix.
    pub fn zeros(rows: usize, cols: usize, layout: Layout, geometry: BlockGeometry) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        let grid = match layout {
            Layout::ARowBand => (rows.div_ceil(geometry.w), cols.div_ceil(geometry.l)),
            Layout::BRestructured => (cols.div_ceil(geometry.w), rows.div_ceil(geometry.l)),
        };
        Ok(BlockedMatrix {
            logical_rows: rows,
            logical_cols: cols,
            geometry,
            layout,
            grid,
            pages: vec![0; grid.0 * grid.1 * geometry.page_bytes],
        })
    }

    /// Packs a left operand (or any matrix) into row-band blocks.
    pub fn pack_a<T: Element>(dense: &Matrix<T>, w: usize) -> Result<Self> {
        let geometry = block_geometry(T::DTYPE, w)?;
        let mut m = Self::zeros(dense.rows(), dense.cols(), Layout::ARowBand, geometry)?;
        let width = T::DTYPE.byte_width();
        let (w, l) = (geometry.w, geometry.l);
        for r in 0..dense.rows() {
            let (i, rr) = (r / w, r % w);
            for c in 0..dense.cols() {
                let (k, cc) = (c / l, c % l);
                let off = m.page_offset(i, k) + (rr * l + cc) * width;
                dense.get(r, c).write_le(&mut m.pages[off..off + width]);
            }
        }
        Ok(m)
    }

    /// Packs a right operand into column-streamable blocks.
    pub fn pack_b<T: Element>(dense: &Matrix<T>, w: usize) -> Result<Self> {
        let geometry = block_geometry(T::DTYPE, w)?;
        let mut m = Self::zeros(dense.rows(), dense.cols(), Layout::BRestructured, geometry)?;
        let width = T::DTYPE.byte_width();
        let (w, l) = (geometry.w, geometry.l);
        for r in 0..dense.rows() {
            let (k, rr) = (r / l, r % l);
            for c in 0..dense.cols() {
                let (j, cc) = (c / w, c % w);
                let off = m.page_offset(j, k) + (cc * l + rr) * width;
                dense.get(r, c).write_le(&mut m.pages[off..off + width]);
            }
        }
        Ok(m)
    }

    /// Dense row-major copy of the logical region.
    pub fn unpack<T: Element>(&self) -> Result<Matrix<T>> {
        self.expect_dtype(T::DTYPE)?;
        let width = T::DTYPE.byte_width();
        let mut data = Vec::with_capacity(self.logical_rows * self.logical_cols);
        for r in 0..self.logical_rows {
            for c in 0..self.logical_cols {
                let off = self.element_offset(r, c);
                data.push(T::read_le(&self.pages[off..off + width]));
            }
        }
        Matrix::new(self.logical_rows, self.logical_cols, data)
    }

    /// Byte offset of logical element `(r, c)`, padding included.
    pub fn element_offset(&self, r: usize, c: usize) -> usize {
        let (w, l) = (self.geometry.w, self.geometry.l);
        let width = self.geometry.dtype.byte_width();
        match self.layout {
            Layout::ARowBand => self.page_offset(r / w, c / l) + ((r % w) * l + c % l) * width,
            Layout::BRestructured => self.page_offset(c / w, r / l) + ((c % w) * l + r % l) * width,
        }
    }

    #[inline]
    fn page_offset(&self, outer: usize, inner: usize) -> usize {
        (outer * self.grid.1 + inner) * self.geometry.page_bytes
    }

    /// Index of page `(outer, inner)` in storage order.
    pub fn page_index(&self, outer: usize, inner: usize) -> Result<usize> {
        self.check_index(outer, inner)?;
        Ok(outer * self.grid.1 + inner)
    }

    fn check_index(&self, outer: usize, inner: usize) -> Result<()> {
        if outer >= self.grid.0 || inner >= self.grid.1 {
            return Err(Error::IndexOutOfRange { i: outer, k: inner, rows: self.grid.0, cols: self.grid.1 });
        }
        Ok(())
    }

    pub fn get_block(&self, outer: usize, inner: usize) -> Result<&[u8]> {
        self.check_index(outer, inner)?;
        let off = self.page_offset(outer, inner);
        Ok(&self.pages[off..off + self.geometry.page_bytes])
    }

    pub fn set_block(&mut self, outer: usize, inner: usize, block: &[u8]) -> Result<()> {
        self.check_index(outer, inner)?;
        if block.len() != self.geometry.page_bytes {
            return Err(Error::BlockSizeMismatch { expected: self.geometry.page_bytes, got: block.len() });
        }
        let off = self.page_offset(outer, inner);
        self.pages[off..off + self.geometry.page_bytes].copy_from_slice(block);
        Ok(())
    }

    /// Writes a row-major `W x W` result tile at tile coordinates `(i, j)`
    /// of a row-band matrix. Tile `(i, j)` lives in page `(i, j*W / L)`.
    pub fn set_tile<T: Element>(&mut self, i: usize, j: usize, tile: &[T]) -> Result<()> {
        self.expect_dtype(T::DTYPE)?;
        if self.layout != Layout::ARowBand {
            return Err(Error::LayoutMismatch("result tiles are stored in row-band layout".into()));
        }
        let (w, l) = (self.geometry.w, self.geometry.l);
        if l % w != 0 {
            return Err(Error::GeometryMismatch(format!("block width {l} is not a multiple of tile size {w}")));
        }
        if tile.len() != w * w {
            return Err(Error::BlockSizeMismatch { expected: w * w, got: tile.len() });
        }
        let (page_col, col0) = ((j * w) / l, (j * w) % l);
        self.check_index(i, page_col)?;
        let width = T::DTYPE.byte_width();
        let base = self.page_offset(i, page_col);
        for r in 0..w {
            for c in 0..w {
                let off = base + (r * l + col0 + c) * width;
                tile[r * w + c].write_le(&mut self.pages[off..off + width]);
            }
        }
        Ok(())
    }

    /// Decodes one page into `W * L` elements in page order.
    pub fn decode_block<T: Element>(&self, outer: usize, inner: usize) -> Result<Vec<T>> {
        self.expect_dtype(T::DTYPE)?;
        let width = T::DTYPE.byte_width();
        Ok(self.get_block(outer, inner)?.chunks_exact(width).map(T::read_le).collect())
    }

    fn expect_dtype(&self, dtype: DType) -> Result<()> {
        if self.geometry.dtype != dtype {
            return Err(Error::DTypeMismatch { expected: self.geometry.dtype, got: dtype });
        }
        Ok(())
    }

    pub fn logical_rows(&self) -> usize {
        self.logical_rows
    }

    pub fn logical_cols(&self) -> usize {
        self.logical_cols
    }

    pub fn padded_rows(&self) -> usize {
        match self.layout {
            Layout::ARowBand => self.grid.0 * self.geometry.w,
            Layout::BRestructured => self.grid.1 * self.geometry.l,
        }
    }

    pub fn padded_cols(&self) -> usize {
        match self.layout {
            Layout::ARowBand => self.grid.1 * self.geometry.l,
            Layout::BRestructured => self.grid.0 * self.geometry.w,
        }
    }

    pub fn dtype(&self) -> DType {
        self.geometry.dtype
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn geometry(&self) -> BlockGeometry {
        self.geometry
    }

    pub fn block_grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn num_blocks(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// All pages, contiguous.
    pub fn pages(&self) -> &[u8] {
        &self.pages
    }

    pub(crate) fn pages_mut(&mut self) -> &mut [u8] {
        &mut self.pages
    }

    pub fn byte_len(&self) -> usize {
        self.pages.len()
    }

    /// Serializes as a 32-byte little-endian header followed by raw pages.
    ///
    /// | offset | size | field |
    /// |---|---|---|
    /// | 0 | 4 | magic `MXFB` |
    /// | 4 | 2 | format version |
    /// | 6 | 1 | dtype code |
    /// | 7 | 1 | layout code |
    /// | 8 | 4 | block rows `W` |
    /// | 12 | 8 | logical rows |
    /// | 20 | 8 | logical cols |
    /// | 28 | 4 | reserved, zero |
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = [0u8; HEADER_BYTES];
        header[0..4].copy_from_slice(MAGIC);
        header[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        header[6] = self.geometry.dtype.code();
        header[7] = self.layout.code();
        header[8..12].copy_from_slice(&(self.geometry.w as u32).to_le_bytes());
        header[12..20].copy_from_slice(&(self.logical_rows as u64).to_le_bytes());
        header[20..28].copy_from_slice(&(self.logical_cols as u64).to_le_bytes());
        out.write_all(&header)?;
        out.write_all(&self.pages)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.pages.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut header = [0u8; HEADER_BYTES];
        input.read_exact(&mut header).map_err(|e| Error::Format(format!("header: {e}")))?;
        if &header[0..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dtype = DType::from_code(header[6]).ok_or_else(|| Error::Format(format!("dtype code {}", header[6])))?;
        let layout =
            Layout::from_code(header[7]).ok_or_else(|| Error::Format(format!("layout code {}", header[7])))?;
        let w = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let rows = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(header[20..28].try_into().unwrap()) as usize;
        let geometry = block_geometry(dtype, w)?;
        let mut m = Self::zeros(rows, cols, layout, geometry)?;
        input.read_exact(&mut m.pages).map_err(|e| Error::Format(format!("pages: {e}")))?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use half::f16;

    fn pattern<T: Element>(rows: usize, cols: usize, f: impl Fn(usize) -> T) -> Matrix<T> {
        Matrix::from_fn(rows, cols, |r, c| f(r * cols + c)).unwrap()
    }

    #[test]
    fn geometry_per_dtype() {
        assert_eq!(block_geometry(DType::Int8, 16).unwrap().l, 256);
        assert_eq!(block_geometry(DType::Int32, 16).unwrap().l, 64);
        assert_eq!(block_geometry(DType::Fp16, 16).unwrap().l, 128);
        assert_eq!(block_geometry(DType::Int16, 16).unwrap().l, 128);
        assert_eq!(block_geometry(DType::Fp32, 16).unwrap().l, 64);
        for d in DType::ALL {
            let g = block_geometry(d, 16).unwrap();
            assert_eq!(g.w * g.l * d.byte_width(), PAGE_BYTES);
        }
    }

    #[test]
    fn geometry_rejects_non_divisible() {
        assert!(matches!(block_geometry(DType::Int8, 3), Err(Error::NonDivisiblePage { .. })));
        assert!(matches!(block_geometry(DType::Int32, 0), Err(Error::NonDivisiblePage { .. })));
        assert!(matches!(block_geometry(DType::Int32, 2048), Err(Error::NonDivisiblePage { .. })));
    }

    #[test]
    fn one_block_a_is_identity_on_bytes() {
        let x = pattern::<i8>(16, 256, |n| (n % 251) as i8);
        let m = BlockedMatrix::pack_a(&x, 16).unwrap();
        assert_eq!(m.num_blocks(), 1);
        assert_eq!(m.get_block(0, 0).unwrap(), x.to_le_bytes().as_slice());
    }

    #[test]
    fn ragged_a_pads_with_zeros() {
        let x = pattern::<i8>(17, 257, |n| (n % 127) as i8 + 1);
        let m = BlockedMatrix::pack_a(&x, 16).unwrap();
        assert_eq!(m.block_grid(), (2, 2));
        assert_eq!((m.padded_rows(), m.padded_cols()), (32, 512));
        // every byte outside the logical region is zero
        let mut live = vec![false; m.byte_len()];
        for r in 0..17 {
            for c in 0..257 {
                live[m.element_offset(r, c)] = true;
            }
        }
        for (b, is_live) in m.pages().iter().zip(&live) {
            if !is_live {
                assert_eq!(*b, 0);
            }
        }
        assert_eq!(m.unpack::<i8>().unwrap(), x);
    }

    #[test]
    fn b_page_is_column_major_region() {
        // identity-like pattern: one-hot per column, plus a row index marker
        let x = Matrix::<i8>::from_fn(256, 16, |r, c| if r == c { 1 } else { (r % 7) as i8 - 3 }).unwrap();
        let m = BlockedMatrix::pack_b(&x, 16).unwrap();
        assert_eq!(m.num_blocks(), 1);
        // scalar transposition oracle
        let mut expected = Vec::new();
        for c in 0..16 {
            for r in 0..256 {
                expected.push(x.get(r, c) as u8);
            }
        }
        assert_eq!(m.get_block(0, 0).unwrap(), expected.as_slice());
    }

    #[test]
    fn tiny_int32_b() {
        let x = Matrix::<i32>::new(1, 1, vec![-7]).unwrap();
        let m = BlockedMatrix::pack_b(&x, 16).unwrap();
        assert_eq!(m.num_blocks(), 1);
        let elems = m.decode_block::<i32>(0, 0).unwrap();
        assert_eq!(elems.len(), 1024);
        assert_eq!(elems[0], -7);
        assert!(elems[1..].iter().all(|&v| v == 0));
        assert_eq!(m.unpack::<i32>().unwrap(), x);
    }

    #[test]
    fn zero_matrix_round_trips() {
        let x = Matrix::<f32>::zeros(64, 64).unwrap();
        assert_eq!(BlockedMatrix::pack_a(&x, 16).unwrap().unpack::<f32>().unwrap(), x);
        assert_eq!(BlockedMatrix::pack_b(&x, 16).unwrap().unpack::<f32>().unwrap(), x);
    }

    #[test]
    fn byte_pattern_single_block() {
        let x = pattern::<i8>(16, 256, |n| (n % 256) as u8 as i8);
        let m = BlockedMatrix::pack_a(&x, 16).unwrap();
        let expected: Vec<u8> = (0..4096).map(|n| (n % 256) as u8).collect();
        assert_eq!(m.pages(), expected.as_slice());
        assert_eq!(m.unpack::<i8>().unwrap(), x);
    }

    #[test]
    fn empty_matrix_rejected() {
        assert!(matches!(Matrix::<i8>::zeros(0, 4), Err(Error::EmptyMatrix { .. })));
        assert!(matches!(
            BlockedMatrix::zeros(3, 0, Layout::ARowBand, block_geometry(DType::Int8, 16).unwrap()),
            Err(Error::EmptyMatrix { .. })
        ));
    }

    #[test]
    fn get_block_slices_the_dense_region() {
        let x = pattern::<i8>(32, 512, |n| (n % 253) as i8);
        let m = BlockedMatrix::pack_a(&x, 16).unwrap();
        let block = m.get_block(1, 1).unwrap();
        let mut expected = Vec::new();
        for r in 16..32 {
            for c in 256..512 {
                expected.push(x.get(r, c) as u8);
            }
        }
        assert_eq!(block, expected.as_slice());
        assert!(matches!(m.get_block(2, 0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(m.get_block(0, 2), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn set_block_then_get() {
        let g = block_geometry(DType::Int16, 16).unwrap();
        let mut m = BlockedMatrix::zeros(40, 200, Layout::ARowBand, g).unwrap();
        let page: Vec<u8> = (0..4096).map(|n| (n * 7 % 256) as u8).collect();
        m.set_block(2, 1, &page).unwrap();
        assert_eq!(m.get_block(2, 1).unwrap(), page.as_slice());
        assert!(matches!(m.set_block(0, 0, &page[..100]), Err(Error::BlockSizeMismatch { .. })));
        assert!(matches!(m.set_block(3, 0, &page), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn set_all_blocks_from_oracle() {
        let oracle = pattern::<i16>(48, 300, |n| (n as i16).wrapping_mul(31));
        let src = BlockedMatrix::pack_a(&oracle, 16).unwrap();
        let mut dst = BlockedMatrix::zeros(48, 300, Layout::ARowBand, src.geometry()).unwrap();
        let (rb, cb) = src.block_grid();
        for i in 0..rb {
            for k in 0..cb {
                dst.set_block(i, k, src.get_block(i, k).unwrap()).unwrap();
            }
        }
        assert_eq!(dst.unpack::<i16>().unwrap(), oracle);
    }

    #[test]
    fn set_tile_lands_in_shared_page() {
        let g = block_geometry(DType::Int32, 16).unwrap();
        let mut c = BlockedMatrix::zeros(16, 64, Layout::ARowBand, g).unwrap();
        assert_eq!(g.tiles_per_page(), 4);
        for j in 0..4 {
            let tile: Vec<i32> = (0..256).map(|n| (j * 1000 + n) as i32).collect();
            c.set_tile(0, j, &tile).unwrap();
        }
        assert_eq!(c.num_blocks(), 1);
        let dense = c.unpack::<i32>().unwrap();
        for r in 0..16 {
            for col in 0..64 {
                let (j, cc) = (col / 16, col % 16);
                assert_eq!(dense.get(r, col), (j * 1000 + r * 16 + cc) as i32);
            }
        }
    }

    #[test]
    fn dump_and_load_are_bit_exact() {
        let x = pattern::<f16>(20, 30, |n| f16::from_f32(n as f32 * 0.25 - 3.0));
        let m = BlockedMatrix::pack_b(&x, 16).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[0..4], b"MXFB");
        assert_eq!(bytes.len(), 32 + m.byte_len());
        assert_eq!(bytes[6], DType::Fp16.code());
        assert_eq!(bytes[7], 1);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 20);
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 30);
        let back = BlockedMatrix::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, m);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(BlockedMatrix::read_from(bad.as_slice()), Err(Error::Format(_))));
        assert!(matches!(BlockedMatrix::read_from(&bytes[..100]), Err(Error::Format(_))));
    }
}
