//! IEEE 802.11 standard feedback: uniform quantization of the Givens angles
//! and bit-exact packing of the compressed beamforming report.
//!
//! The φ grid places 2^bφ levels at k·π/2^(bφ-1) + π/2^bφ covering [0, 2π)
//! with circular nearest-level selection; the ψ grid places 2^bψ levels at
//! k·π/2^(bψ+1) + π/2^(bψ+2) covering [0, π/2). Ties go to the lower index.
//! Report bits follow the per-subcarrier feedback order: for each sweep, the
//! φ indices of that sweep then its ψ indices, each as a big-endian field.

use byteorder::{ByteOrder, LittleEndian};

use crate::givens::AngleSet;
use crate::{Error, Result};

const TAU: f64 = std::f64::consts::TAU;

/// Bit widths of the uniform angle quantizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct UniformGrid {
    pub b_phi: u32,
    pub b_psi: u32,
}

impl UniformGrid {
    pub fn new(b_phi: u32, b_psi: u32) -> Result<Self> {
        if !(1..=16).contains(&b_phi) || !(1..=16).contains(&b_psi) {
            return Err(Error::InvalidConfig(format!(
                "grid bits must be in 1..=16, got ({b_phi}, {b_psi})"
            )));
        }
        Ok(Self { b_phi, b_psi })
    }

    pub fn phi_level(&self, k: u32) -> f64 {
        k as f64 * std::f64::consts::PI / (1u64 << (self.b_phi - 1)) as f64
            + std::f64::consts::PI / (1u64 << self.b_phi) as f64
    }

    pub fn psi_level(&self, k: u32) -> f64 {
        k as f64 * std::f64::consts::PI / (1u64 << (self.b_psi + 1)) as f64
            + std::f64::consts::PI / (1u64 << (self.b_psi + 2)) as f64
    }
}

/// Quantized index planes, same layout as the angle planes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPlanes {
    pub n_a: usize,
    pub n_c: usize,
    pub phi: Vec<u32>,
    pub psi: Vec<u32>,
}

fn quantize_linear(x: f64, step: f64, count: u32) -> u32 {
    // Levels sit at (k + 1/2)·step; cell k covers [k·step, (k+1)·step). A
    // point on a cell boundary is equidistant to two levels; the tie goes to
    // the lower index, so boundary m·step maps to level m-1 (clamped at 0).
    let pos = x / step;
    let mut k = pos.floor();
    if pos == k && k > 0.0 {
        k -= 1.0;
    }
    (k.max(0.0) as u32).min(count - 1)
}

fn quantize_phi(x: f64, grid: &UniformGrid) -> u32 {
    let count = 1u32 << grid.b_phi;
    let step = TAU / count as f64;
    let mut y = x % TAU;
    if y < 0.0 {
        y += TAU;
    }
    let pos = y / step;
    let k = pos.floor();
    if pos == k {
        // Boundary: equidistant to levels k and k-1 (mod count); pick the
        // lower index. At y = 0 the circular neighbors are 0 and count-1.
        let a = k as u32 % count;
        let b = (k as u32 + count - 1) % count;
        a.min(b)
    } else {
        k as u32 % count
    }
}

/// Quantize angle planes to grid indices.
pub fn quantize_uniform(angles: &AngleSet, grid: &UniformGrid) -> IndexPlanes {
    let psi_count = 1u32 << grid.b_psi;
    let psi_step = std::f64::consts::PI / (1u64 << (grid.b_psi + 1)) as f64;
    IndexPlanes {
        n_a: angles.n_a,
        n_c: angles.n_c,
        phi: angles.phi.iter().map(|&x| quantize_phi(x, grid)).collect(),
        psi: angles
            .psi
            .iter()
            .map(|&x| quantize_linear(x, psi_step, psi_count))
            .collect(),
    }
}

/// Map grid indices back to angle values (the level midpoints).
pub fn dequantize_uniform(idx: &IndexPlanes, grid: &UniformGrid) -> AngleSet {
    AngleSet {
        n_a: idx.n_a,
        n_c: idx.n_c,
        phi: idx.phi.iter().map(|&k| grid.phi_level(k)).collect(),
        psi: idx.psi.iter().map(|&k| grid.psi_level(k)).collect(),
    }
}

/// Packed compressed beamforming report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CbrBits {
    pub n_a: usize,
    pub n_c: usize,
    pub grid: UniformGrid,
    pub bit_len: usize,
    pub bytes: Vec<u8>,
}

/// Feedback bits for one report: N_c · N_a · (bφ + bψ).
pub fn standard_overhead_bits(n_a: usize, n_c: usize, grid: &UniformGrid) -> usize {
    n_c * n_a * (grid.b_phi + grid.b_psi) as usize
}

pub(crate) struct BitWriter {
    pub bytes: Vec<u8>,
    pub bit_len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self { bytes: Vec::new(), bit_len: 0 }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    /// Append the low `width` bits of `value`, most significant bit first.
    pub fn push(&mut self, value: u32, width: u32) {
        for i in (0..width).rev() {
            let bit = (value >> i) & 1;
            let byte = self.bit_len / 8;
            if byte == self.bytes.len() {
                self.bytes.push(0);
            }
            self.bytes[byte] |= (bit as u8) << (7 - self.bit_len % 8);
            self.bit_len += 1;
        }
    }
}

pub(crate) struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    len: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], bit_len: usize) -> Self {
        Self { bytes, pos: 0, len: bit_len }
    }

    pub fn pull(&mut self, width: u32) -> Result<u32> {
        let mut v = 0u32;
        for _ in 0..width {
            if self.pos >= self.len {
                return Err(Error::Truncated("bit buffer exhausted".into()));
            }
            let bit = (self.bytes[self.pos / 8] >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | bit as u32;
            self.pos += 1;
        }
        Ok(v)
    }
}

/// Sweep row ranges of the angle planes: for geometry (N_t derived from N_a
/// row structure), each sweep `i` owns rows base..base+len in both planes.
fn sweep_rows(n_t: usize, n_s: usize) -> Vec<(usize, usize)> {
    let sweeps = n_s.min(n_t - 1);
    let mut out = Vec::new();
    let mut base = 0;
    for i in 1..=sweeps {
        out.push((base, n_t - i));
        base += n_t - i;
    }
    out
}

/// Pack index planes into report bits in feedback order.
pub fn pack_cbr(idx: &IndexPlanes, grid: &UniformGrid, n_t: usize, n_s: usize) -> Result<CbrBits> {
    let rows = sweep_rows(n_t, n_s);
    let total: usize = rows.iter().map(|&(_, len)| len).sum::<usize>().max(1);
    if total != idx.n_a {
        return Err(Error::ShapeMismatch(format!(
            "index planes have N_a={}, geometry ({n_t},{n_s}) implies {total}", idx.n_a
        )));
    }
    let mut w = BitWriter::new();
    for k in 0..idx.n_c {
        for &(base, len) in &rows {
            for a in base..base + len {
                w.push(idx.phi[a * idx.n_c + k], grid.b_phi);
            }
            for a in base..base + len {
                w.push(idx.psi[a * idx.n_c + k], grid.b_psi);
            }
        }
    }
    Ok(CbrBits { n_a: idx.n_a, n_c: idx.n_c, grid: *grid, bit_len: w.bit_len, bytes: w.bytes })
}

/// Unpack report bits back into index planes.
pub fn unpack_cbr(bits: &CbrBits, n_t: usize, n_s: usize) -> Result<IndexPlanes> {
    let rows = sweep_rows(n_t, n_s);
    let total: usize = rows.iter().map(|&(_, len)| len).sum::<usize>().max(1);
    if total != bits.n_a {
        return Err(Error::ShapeMismatch(format!(
            "report has N_a={}, geometry ({n_t},{n_s}) implies {total}", bits.n_a
        )));
    }
    let expect = standard_overhead_bits(
        rows.iter().map(|&(_, l)| l).sum::<usize>(),
        bits.n_c,
        &bits.grid,
    );
    if bits.bit_len != expect {
        return Err(Error::Truncated(format!(
            "report carries {} bits, expected {expect}",
            bits.bit_len
        )));
    }
    let mut r = BitReader::new(&bits.bytes, bits.bit_len);
    let mut idx = IndexPlanes {
        n_a: bits.n_a,
        n_c: bits.n_c,
        phi: vec![0; bits.n_a * bits.n_c],
        psi: vec![0; bits.n_a * bits.n_c],
    };
    for k in 0..bits.n_c {
        for &(base, len) in &rows {
            for a in base..base + len {
                idx.phi[a * bits.n_c + k] = r.pull(bits.grid.b_phi)?;
            }
            for a in base..base + len {
                idx.psi[a * bits.n_c + k] = r.pull(bits.grid.b_psi)?;
            }
        }
    }
    Ok(idx)
}

impl CbrBits {
    /// Serialize as a u32 bit-length prefix followed by the zero-padded bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; 4];
        LittleEndian::write_u32(&mut out, self.bit_len as u32);
        out.extend_from_slice(&self.bytes);
        out
    }
}
