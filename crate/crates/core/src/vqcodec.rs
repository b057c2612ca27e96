//! Encoder/decoder networks and the trainable product vector quantizer.
//!
//! A latent vector of length M = N * D is quantized sub-vector by
//! sub-vector against a single shared codebook of 2^B D-dimensional
//! codewords, by minimum Euclidean distance with ties to the lowest index.
//! The two-stage variant quantizes the stage-1 residual with a second,
//! smaller codebook. Index serialization reuses the big-endian bit packing
//! of the standard feedback report.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::baseline::{BitReader, BitWriter};
use crate::{Error, Result};

/// Fully connected network with leaky-ReLU between layers and a linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub dims: Vec<usize>,
    /// Per layer, [out, in] row-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Kaiming-style uniform initialization, biases zero.
    pub fn new_random(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "need at least one layer");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for win in dims.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            weights.push((0..fan_out * fan_in).map(|_| rng.gen_range(-bound..bound)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        Self { dims: dims.to_vec(), weights, biases }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let weights = dims.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = dims.windows(2).map(|w| vec![0.0; w[1]]).collect();
        Self { dims: dims.to_vec(), weights, biases }
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Sizes of all parameter slots (weight, bias per layer, in order),
    /// matching [`Mlp::stage`]'s handle order.
    pub fn param_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for l in 0..self.layer_count() {
            out.push(self.weights[l].len());
            out.push(self.biases[l].len());
        }
        out
    }

    /// Register the parameters on a tape; returns (weight, bias) handles.
    pub fn stage(&self, tape: &mut Tape) -> Vec<(Tensor, Tensor)> {
        (0..self.layer_count())
            .map(|l| {
                let (o, i) = (self.dims[l + 1], self.dims[l]);
                let w = tape.input(&[o, i], &self.weights[l]);
                let b = tape.input(&[o], &self.biases[l]);
                (w, b)
            })
            .collect()
    }

    /// Differentiable forward pass through staged parameters.
    pub fn apply(&self, tape: &mut Tape, staged: &[(Tensor, Tensor)], x: Tensor) -> Tensor {
        assert_eq!(staged.len(), self.layer_count());
        let mut cur = x;
        for (l, &(w, b)) in staged.iter().enumerate() {
            cur = tape.dense(cur, w, b);
            if l + 1 < self.layer_count() {
                cur = tape.leaky_relu(cur);
            }
        }
        cur
    }

    /// Plain inference; `x` is batch * in_dim, returns batch * out_dim.
    /// Matches the tape path bit for bit (same loop order).
    pub fn forward_plain(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len() % self.in_dim(), 0, "input not a whole batch");
        let batch = x.len() / self.in_dim();
        let mut cur = x.to_vec();
        for l in 0..self.layer_count() {
            let (in_dim, out_dim) = (self.dims[l], self.dims[l + 1]);
            let last = l + 1 == self.layer_count();
            let mut next = vec![0.0; batch * out_dim];
            for bi in 0..batch {
                let xrow = &cur[bi * in_dim..(bi + 1) * in_dim];
                let orow = &mut next[bi * out_dim..(bi + 1) * out_dim];
                for (o, oo) in orow.iter_mut().enumerate() {
                    let wrow = &self.weights[l][o * in_dim..(o + 1) * in_dim];
                    let mut acc = self.biases[l][o];
                    for i in 0..in_dim {
                        acc += xrow[i] * wrow[i];
                    }
                    *oo = if last || acc >= 0.0 { acc } else { 0.2 * acc };
                }
            }
            cur = next;
        }
        cur
    }

    /// Update parameters in place from staged-handle gradients using a
    /// caller-provided Adam slot range.
    pub fn adam_update(
        &mut self,
        adam: &mut crate::autodiff::AdamState,
        first_slot: usize,
        tape: &Tape,
        staged: &[(Tensor, Tensor)],
    ) {
        for (l, &(w, b)) in staged.iter().enumerate() {
            adam.update(first_slot + 2 * l, &mut self.weights[l], tape.grad(w));
            adam.update(first_slot + 2 * l + 1, &mut self.biases[l], tape.grad(b));
        }
    }
}

/// Shared vector codebook: 2^bits codewords of `dim` reals each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub dim: usize,
    pub bits: u32,
    /// [2^bits, dim] row-major.
    pub words: Vec<f64>,
}

impl Codebook {
    pub fn new_random(dim: usize, bits: u32, rng: &mut ChaCha8Rng) -> Result<Self> {
        if bits == 0 || bits > 16 {
            return Err(Error::InvalidConfig(format!("codebook bits {bits} outside 1..=16")));
        }
        if dim == 0 {
            return Err(Error::InvalidConfig("codeword dimension must be positive".into()));
        }
        let n = 1usize << bits;
        let words = (0..n * dim).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.1).collect();
        Ok(Self { dim, bits, words })
    }

    pub fn len(&self) -> usize {
        1 << self.bits
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn word(&self, k: usize) -> &[f64] {
        &self.words[k * self.dim..(k + 1) * self.dim]
    }

    /// Index of the nearest codeword by squared Euclidean distance; strict
    /// inequality breaks ties toward the lowest index.
    pub fn nearest(&self, v: &[f64]) -> usize {
        assert_eq!(v.len(), self.dim, "sub-vector length mismatch");
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for k in 0..self.len() {
            let w = self.word(k);
            let mut d = 0.0;
            for i in 0..self.dim {
                let e = v[i] - w[i];
                d += e * e;
            }
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// Quantize a full latent (length divisible by `dim`) sub-vector-wise.
    pub fn quantize(&self, z: &[f64]) -> (Vec<f64>, Vec<usize>) {
        assert_eq!(z.len() % self.dim, 0, "latent length not divisible by D");
        let n = z.len() / self.dim;
        let mut zq = Vec::with_capacity(z.len());
        let mut idx = Vec::with_capacity(n);
        for s in 0..n {
            let k = self.nearest(&z[s * self.dim..(s + 1) * self.dim]);
            idx.push(k);
            zq.extend_from_slice(self.word(k));
        }
        (zq, idx)
    }

    /// Reconstruct a latent from sub-vector indices.
    pub fn lookup(&self, idx: &[usize]) -> Vec<f64> {
        let mut z = Vec::with_capacity(idx.len() * self.dim);
        for &k in idx {
            assert!(k < self.len(), "index {k} out of codebook range");
            z.extend_from_slice(self.word(k));
        }
        z
    }

    /// Lloyd iterations over `samples` (rows of `dim`); empty clusters are
    /// re-seeded to random samples so every codeword stays live.
    pub fn fit_kmeans(&mut self, samples: &[f64], iters: usize, rng: &mut ChaCha8Rng) {
        assert_eq!(samples.len() % self.dim, 0);
        let n = samples.len() / self.dim;
        if n == 0 {
            return;
        }
        let k = self.len();
        let picks = rand::seq::index::sample(rng, n, k.min(n));
        for (c, i) in picks.iter().enumerate() {
            self.words[c * self.dim..(c + 1) * self.dim]
                .copy_from_slice(&samples[i * self.dim..(i + 1) * self.dim]);
        }
        for c in k.min(n)..k {
            let i = rng.gen_range(0..n);
            for d in 0..self.dim {
                self.words[c * self.dim + d] =
                    samples[i * self.dim + d] + 1e-3 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let mut sums = vec![0.0; k * self.dim];
        let mut counts = vec![0usize; k];
        for _ in 0..iters {
            sums.fill(0.0);
            counts.fill(0);
            for s in 0..n {
                let v = &samples[s * self.dim..(s + 1) * self.dim];
                let c = self.nearest(v);
                counts[c] += 1;
                for d in 0..self.dim {
                    sums[c * self.dim + d] += v[d];
                }
            }
            for c in 0..k {
                if counts[c] == 0 {
                    let i = rng.gen_range(0..n);
                    self.words[c * self.dim..(c + 1) * self.dim]
                        .copy_from_slice(&samples[i * self.dim..(i + 1) * self.dim]);
                } else {
                    for d in 0..self.dim {
                        self.words[c * self.dim + d] = sums[c * self.dim + d] / counts[c] as f64;
                    }
                }
            }
        }
    }
}

/// Result of residual (two-stage) quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStage {
    pub zq1: Vec<f64>,
    pub zq2: Vec<f64>,
    pub idx1: Vec<usize>,
    pub idx2: Vec<usize>,
}

impl TwoStage {
    /// Combined reconstruction zq1 + zq2.
    pub fn combined(&self) -> Vec<f64> {
        self.zq1.iter().zip(&self.zq2).map(|(a, b)| a + b).collect()
    }
}

/// Stage-1 quantization of `z`, stage-2 quantization of the residual.
pub fn two_stage_quantize(stage1: &Codebook, stage2: &Codebook, z: &[f64]) -> Result<TwoStage> {
    if stage1.dim != stage2.dim {
        return Err(Error::ShapeMismatch(format!(
            "stage dims differ: {} vs {}",
            stage1.dim, stage2.dim
        )));
    }
    let (zq1, idx1) = stage1.quantize(z);
    let residual: Vec<f64> = z.iter().zip(&zq1).map(|(a, b)| a - b).collect();
    let (zq2, idx2) = stage2.quantize(&residual);
    Ok(TwoStage { zq1, zq2, idx1, idx2 })
}

/// Pack sub-vector indices as consecutive `bits`-wide big-endian fields.
pub fn indices_to_bits(indices: &[usize], bits: u32) -> Result<Vec<u8>> {
    let mut w = BitWriter::new();
    for &i in indices {
        if i >= (1usize << bits) {
            return Err(Error::InvalidConfig(format!("index {i} needs more than {bits} bits")));
        }
        w.push(i as u32, bits);
    }
    Ok(w.into_bytes())
}

/// Inverse of [`indices_to_bits`] for `count` indices.
pub fn bits_to_indices(bytes: &[u8], count: usize, bits: u32) -> Result<Vec<usize>> {
    let mut r = BitReader::new(bytes, count * bits as usize);
    (0..count).map(|_| Ok(r.pull(bits)? as usize)).collect()
}

/// Decode a packed index buffer straight to a reconstructed latent.
pub fn bits_to_zq(bytes: &[u8], count: usize, codebook: &Codebook) -> Result<Vec<f64>> {
    let idx = bits_to_indices(bytes, count, codebook.bits)?;
    Ok(codebook.lookup(&idx))
}

/// Which feedback scheme a trained model implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Initial,
    AdNaive,
    AdParallel,
    AdUnified,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Initial => "initial",
            Variant::AdNaive => "ad_naive",
            Variant::AdParallel => "ad_parallel",
            Variant::AdUnified => "ad_unified",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "initial" => Ok(Variant::Initial),
            "ad_naive" => Ok(Variant::AdNaive),
            "ad_parallel" => Ok(Variant::AdParallel),
            "ad_unified" => Ok(Variant::AdUnified),
            other => Err(Error::InvalidConfig(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Input/latent geometry shared by all codec variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecGeometry {
    pub n_a: usize,
    pub n_c: usize,
    /// N: sub-vectors per latent.
    pub n_sub: usize,
    /// D: dimensions per sub-vector.
    pub dim: usize,
}

impl CodecGeometry {
    /// Flattened angle input length: phi plane then psi plane.
    pub fn input_len(&self) -> usize {
        2 * self.n_a * self.n_c
    }

    /// Encoder input length: cosine and sine planes of the flattened angles.
    pub fn feature_len(&self) -> usize {
        2 * self.input_len()
    }

    pub fn latent_len(&self) -> usize {
        self.n_sub * self.dim
    }
}

/// Wrap-free encoder features for an angle vector: the cosine plane followed
/// by the sine plane.  Angles that differ by 2*pi map to the same point, so
/// encoders never see the branch cut of the raw parameterization, and every
/// feature lands in [-1, 1] regardless of the angle range.
pub fn angle_features(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.cos()).chain(x.iter().map(|v| v.sin())).collect()
}

/// A trained feedback codec: Type-I (and for AD variants Type-II)
/// encoder-decoder pairs plus their codebooks.
///
/// Codebook roles by variant:
/// - initial / ad_naive / ad_unified: `book1` (B bits) serves every branch.
/// - ad_parallel: `book1` (B bits) quantizes initial-mode content,
///   `book1_diff` (B - B_r bits) quantizes difference-mode content, and the
///   shared `book2` (B_r bits) quantizes previous-step residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecModel {
    pub variant: Variant,
    pub geom: CodecGeometry,
    /// B: bits per sub-vector of payload.
    pub bits: u32,
    /// B_r: stage-2 bits (parallel variant only, else 0).
    pub bits_residual: u32,
    pub enc1: Mlp,
    pub dec1: Mlp,
    pub enc2: Option<Mlp>,
    pub dec2: Option<Mlp>,
    pub book1: Codebook,
    pub book1_diff: Option<Codebook>,
    pub book2: Option<Codebook>,
}

impl CodecModel {
    /// Payload bits per feedback message, excluding the indicator.
    pub fn payload_bits(&self) -> usize {
        self.geom.n_sub * self.bits as usize
    }

    pub fn validate(&self) -> Result<()> {
        let glen = self.geom.input_len();
        let flen = self.geom.feature_len();
        let m = self.geom.latent_len();
        if self.enc1.in_dim() != flen || self.enc1.out_dim() != m {
            return Err(Error::ShapeMismatch(format!(
                "Type-I encoder {} -> {} does not match geometry {flen} -> {m}",
                self.enc1.in_dim(),
                self.enc1.out_dim()
            )));
        }
        if self.dec1.in_dim() != m || self.dec1.out_dim() != glen {
            return Err(Error::ShapeMismatch("Type-I decoder shape mismatch".into()));
        }
        if self.book1.dim != self.geom.dim || self.book1.bits != self.bits {
            return Err(Error::ShapeMismatch("stage-1 codebook geometry mismatch".into()));
        }
        let needs_type2 = !matches!(self.variant, Variant::Initial);
        if needs_type2 {
            let enc2 = self.enc2.as_ref().ok_or_else(|| {
                Error::InvalidConfig(format!("{} needs a Type-II encoder", self.variant.as_str()))
            })?;
            let dec2 = self.dec2.as_ref().ok_or_else(|| {
                Error::InvalidConfig(format!("{} needs a Type-II decoder", self.variant.as_str()))
            })?;
            if enc2.in_dim() != flen || enc2.out_dim() != m || dec2.in_dim() != m || dec2.out_dim() != glen {
                return Err(Error::ShapeMismatch("Type-II network shape mismatch".into()));
            }
        }
        if self.variant == Variant::AdParallel {
            if self.bits_residual == 0 || self.bits_residual >= self.bits {
                return Err(Error::InvalidConfig(format!(
                    "parallel VQ needs 0 < B_r < B, got B_r={}, B={}",
                    self.bits_residual, self.bits
                )));
            }
            let bd = self.book1_diff.as_ref().ok_or_else(|| {
                Error::InvalidConfig("parallel VQ needs a difference-content codebook".into())
            })?;
            let b2 = self
                .book2
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("parallel VQ needs a stage-2 codebook".into()))?;
            if bd.bits != self.bits - self.bits_residual || bd.dim != self.geom.dim {
                return Err(Error::ShapeMismatch("difference codebook geometry mismatch".into()));
            }
            if b2.bits != self.bits_residual || b2.dim != self.geom.dim {
                return Err(Error::ShapeMismatch("stage-2 codebook geometry mismatch".into()));
            }
        }
        Ok(())
    }

    /// Type-I encode (plain inference).  Takes raw angles and featurizes them.
    pub fn encode1(&self, x: &[f64]) -> Vec<f64> {
        self.enc1.forward_plain(&angle_features(x))
    }

    /// Type-I decode (plain inference).
    pub fn decode1(&self, z: &[f64]) -> Vec<f64> {
        self.dec1.forward_plain(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_network_maps_anything_to_zero_latent() {
        let mlp = Mlp::zeros(&[6, 4, 3]);
        let out = mlp.forward_plain(&[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]);
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn latent_length_matches_bit_budget_geometry() {
        // 576 payload bits at B=8 means N=72 sub-vectors; with D=16 the
        // latent must have 1152 entries.
        let geom = CodecGeometry { n_a: 13, n_c: 64, n_sub: 72, dim: 16 };
        assert_eq!(geom.latent_len(), 1152);
        assert_eq!(72 * 8, 576);
        let mlp = Mlp::new_random(&[geom.input_len(), 32, geom.latent_len()], &mut rng(1));
        let out = mlp.forward_plain(&vec![0.1; geom.input_len()]);
        assert_eq!(out.len(), 1152);
    }

    #[test]
    fn angle_features_are_wrap_invariant_and_bounded() {
        let x = [0.0, 0.3, 3.1, 6.2, -2.9];
        let shifted: Vec<f64> = x.iter().map(|v| v + std::f64::consts::TAU).collect();
        let fa = angle_features(&x);
        let fb = angle_features(&shifted);
        assert_eq!(fa.len(), 2 * x.len());
        for (a, b) in fa.iter().zip(&fb) {
            assert!((a - b).abs() < 1e-12);
            assert!(a.abs() <= 1.0);
        }
        // Layout: cosine plane first, then sine plane.
        assert_eq!(fa[0], 1.0);
        assert_eq!(fa[x.len()], 0.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let mlp = Mlp::new_random(&[8, 16, 4], &mut rng(2));
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
        assert_eq!(mlp.forward_plain(&x), mlp.forward_plain(&x));
    }

    #[test]
    fn plain_forward_matches_tape_forward() {
        let mlp = Mlp::new_random(&[5, 7, 3], &mut rng(3));
        let x: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let plain = mlp.forward_plain(&x);
        let mut tape = Tape::new();
        let xin = tape.input(&[2, 5], &x);
        let staged = mlp.stage(&mut tape);
        let y = mlp.apply(&mut tape, &staged, xin);
        assert_eq!(tape.values(y), plain.as_slice());
    }

    #[test]
    fn nearest_picks_the_closer_codeword() {
        let book = Codebook { dim: 2, bits: 1, words: vec![0.0, 0.0, 1.0, 1.0] };
        assert_eq!(book.nearest(&[0.9, 0.8]), 1);
        assert_eq!(book.nearest(&[0.1, -0.2]), 0);
    }

    #[test]
    fn codeword_input_is_a_fixed_point() {
        let book = Codebook::new_random(3, 4, &mut rng(4)).unwrap();
        for k in [0usize, 5, 15] {
            let v = book.word(k).to_vec();
            assert_eq!(book.nearest(&v), k);
            let (zq, idx) = book.quantize(&v);
            assert_eq!(zq, v);
            assert_eq!(idx, vec![k]);
        }
    }

    #[test]
    fn equidistant_tie_goes_to_lower_index() {
        let book = Codebook { dim: 1, bits: 2, words: vec![-1.0, 1.0, 1.0, 3.0] };
        // 0.0 is equidistant from -1.0 and 1.0 (indices 0, 1, 2).
        assert_eq!(book.nearest(&[0.0]), 0);
        // 1.0 hits words 1 and 2 exactly; lower index wins.
        assert_eq!(book.nearest(&[1.0]), 1);
    }

    #[test]
    fn argmin_matches_brute_force_oracle() {
        let book = Codebook::new_random(2, 3, &mut rng(5)).unwrap();
        let mut r = rng(6);
        for _ in 0..2000 {
            let v = [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)];
            // Oracle: independent scan computing distances in reverse order,
            // keeping the lowest index among exact minima.
            let mut dists: Vec<f64> = Vec::new();
            for k in (0..book.len()).rev() {
                let w = book.word(k);
                dists.push((v[0] - w[0]).powi(2) + (v[1] - w[1]).powi(2));
            }
            dists.reverse();
            let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let oracle = dists.iter().position(|&d| d == min).unwrap();
            assert_eq!(book.nearest(&v), oracle);
        }
    }

    #[test]
    fn quantization_is_idempotent() {
        let book = Codebook::new_random(4, 5, &mut rng(7)).unwrap();
        let mut r = rng(8);
        let z: Vec<f64> = (0..4 * 6).map(|_| r.gen_range(-1.0..1.0)).collect();
        let (zq, idx) = book.quantize(&z);
        let (zq2, idx2) = book.quantize(&zq);
        assert_eq!(zq, zq2);
        assert_eq!(idx, idx2);
    }

    #[test]
    fn two_stage_never_hurts_with_zero_codeword() {
        let stage1 = Codebook::new_random(3, 4, &mut rng(9)).unwrap();
        let mut stage2 = Codebook::new_random(3, 2, &mut rng(10)).unwrap();
        stage2.words[..3].fill(0.0);
        let mut r = rng(11);
        for _ in 0..500 {
            let z: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
            let ts = two_stage_quantize(&stage1, &stage2, &z).unwrap();
            let e1: f64 = z.iter().zip(&ts.zq1).map(|(a, b)| (a - b) * (a - b)).sum();
            let e2: f64 =
                z.iter().zip(&ts.combined()).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!(e2 <= e1 + 1e-12);
        }
    }

    #[test]
    fn exact_stage1_hit_leaves_zero_residual() {
        let stage1 = Codebook::new_random(3, 3, &mut rng(12)).unwrap();
        let mut stage2 = Codebook::new_random(3, 2, &mut rng(13)).unwrap();
        stage2.words[3..6].fill(0.0); // zero codeword at index 1
        let z = stage1.word(2).to_vec();
        let ts = two_stage_quantize(&stage1, &stage2, &z).unwrap();
        assert_eq!(ts.idx1, vec![2]);
        // Residual is exactly zero, so stage 2 must pick the zero codeword.
        assert_eq!(ts.zq2, vec![0.0, 0.0, 0.0]);
        assert_eq!(ts.combined(), z);
    }

    #[test]
    fn trained_two_stage_beats_one_stage_on_gaussian_latents() {
        let dim = 4;
        let mut r = rng(14);
        let train: Vec<f64> = (0..3000 * dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let mut stage1 = Codebook::new_random(dim, 5, &mut r).unwrap();
        stage1.fit_kmeans(&train, 20, &mut r);
        let residuals: Vec<f64> = train
            .chunks(dim)
            .flat_map(|z| {
                let (zq, _) = stage1.quantize(z);
                z.iter().zip(zq).map(|(a, b)| a - b).collect::<Vec<_>>()
            })
            .collect();
        let mut stage2 = Codebook::new_random(dim, 3, &mut r).unwrap();
        stage2.fit_kmeans(&residuals, 20, &mut r);
        let test: Vec<f64> = (0..2000 * dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let (mut one, mut two) = (0.0, 0.0);
        for z in test.chunks(dim) {
            let ts = two_stage_quantize(&stage1, &stage2, z).unwrap();
            one += z.iter().zip(&ts.zq1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            two += z.iter().zip(&ts.combined()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        assert!(two < one, "two-stage {two} vs one-stage {one}");
    }

    #[test]
    fn kmeans_reduces_quantization_error() {
        let dim = 3;
        let mut r = rng(15);
        let data: Vec<f64> = (0..2000 * dim).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
        let random = Codebook::new_random(dim, 4, &mut r).unwrap();
        let mut trained = random.clone();
        trained.fit_kmeans(&data, 20, &mut r);
        let err = |book: &Codebook| -> f64 {
            data.chunks(dim)
                .map(|z| {
                    let (zq, _) = book.quantize(z);
                    z.iter().zip(zq).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                })
                .sum()
        };
        assert!(err(&trained) < err(&random));
    }

    #[test]
    fn index_bits_roundtrip_and_sizes() {
        let idx: Vec<usize> = (0..72).map(|i| (i * 37) % 256).collect();
        let bytes = indices_to_bits(&idx, 8).unwrap();
        assert_eq!(bytes.len(), 72); // 576 bits
        let back = bits_to_indices(&bytes, 72, 8).unwrap();
        assert_eq!(back, idx);
    }

    #[test]
    fn max_index_fills_a_byte() {
        let bytes = indices_to_bits(&[255], 8).unwrap();
        assert_eq!(bytes, vec![0xFF]);
    }

    #[test]
    fn oversized_index_is_rejected() {
        assert!(indices_to_bits(&[8], 3).is_err());
        assert!(indices_to_bits(&[7], 3).is_ok());
    }

    #[test]
    fn bits_to_zq_reconstructs_codewords() {
        let book = Codebook::new_random(2, 3, &mut rng(16)).unwrap();
        let idx = vec![1usize, 7, 0, 3];
        let bytes = indices_to_bits(&idx, 3).unwrap();
        let z = bits_to_zq(&bytes, 4, &book).unwrap();
        assert_eq!(z, book.lookup(&idx));
    }

    #[test]
    fn model_validation_catches_geometry_errors() {
        let geom = CodecGeometry { n_a: 5, n_c: 16, n_sub: 8, dim: 16 };
        let mut r = rng(17);
        let model = CodecModel {
            variant: Variant::Initial,
            geom,
            bits: 8,
            bits_residual: 0,
            enc1: Mlp::new_random(&[geom.feature_len(), 32, geom.latent_len()], &mut r),
            dec1: Mlp::new_random(&[geom.latent_len(), 32, geom.input_len()], &mut r),
            enc2: None,
            dec2: None,
            book1: Codebook::new_random(16, 8, &mut r).unwrap(),
            book1_diff: None,
            book2: None,
        };
        model.validate().unwrap();
        assert_eq!(model.payload_bits(), 64);

        let mut bad = model.clone();
        bad.book1 = Codebook::new_random(8, 8, &mut r).unwrap();
        assert!(bad.validate().is_err());

        let mut ad = model.clone();
        ad.variant = Variant::AdUnified;
        assert!(ad.validate().is_err(), "missing Type-II pair must be rejected");
    }
}
