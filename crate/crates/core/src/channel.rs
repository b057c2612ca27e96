//! Temporally correlated MIMO-OFDM channel sequences, SVD beamforming
//! targets, and the bit-exact dataset file format.
//!
//! The synthetic model is clustered multipath over uniform linear arrays:
//! each path has fixed departure/arrival angles and delay drawn per sequence,
//! while its complex gain follows a first-order Gauss-Markov recursion
//! `g_t = rho * g_{t-1} + sqrt(1 - rho^2) * w_t` with unit-variance circular
//! Gaussian innovations, so the per-entry channel statistics are stationary
//! and the temporal correlation is exactly `rho` per step.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::givens::{canonicalize, extract_angles, AngleSet, GivensConfig};
use crate::{Error, Result};

/// Generator and geometry parameters for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub n_s: usize,
    pub n_c: usize,
    /// Snapshots per sequence.
    pub t_len: usize,
    /// Multipath component count.
    pub paths: usize,
    /// Per-step temporal correlation of the path gains, in [0, 1].
    pub rho: f64,
    /// Maximum path delay, seconds.
    pub delay_spread: f64,
    /// Spacing of the sampled subcarriers, Hz.
    pub subcarrier_spacing: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            n_t: 4,
            n_r: 2,
            n_s: 2,
            n_c: 16,
            t_len: 32,
            paths: 4,
            rho: 0.99,
            delay_spread: 50e-9,
            subcarrier_spacing: 312.5e3,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_s == 0 || self.n_s > self.n_t.min(self.n_r) {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= N_s <= min(N_t, N_r), got N_s={}, N_t={}, N_r={}",
                self.n_s, self.n_t, self.n_r
            )));
        }
        if self.n_c == 0 || self.t_len == 0 || self.paths == 0 {
            return Err(Error::InvalidConfig("counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!("rho={} outside [0, 1]", self.rho)));
        }
        Ok(())
    }
}

/// One time-indexed CFR tensor, entries in `[t][k][r][c]` order.
#[derive(Debug, Clone, PartialEq)]
pub struct CfrSequence {
    pub t_len: usize,
    pub n_c: usize,
    pub n_r: usize,
    pub n_t: usize,
    pub seed: u64,
    pub data: Vec<Complex64>,
}

impl CfrSequence {
    pub fn entry(&self, t: usize, k: usize, r: usize, c: usize) -> Complex64 {
        self.data[((t * self.n_c + k) * self.n_r + r) * self.n_t + c]
    }

    /// Channel matrix H_t[k], `N_r x N_t`.
    pub fn matrix(&self, t: usize, k: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n_r, self.n_t, |r, c| self.entry(t, k, r, c))
    }
}

fn steering(angle: f64, n: usize) -> Vec<Complex64> {
    // Half-wavelength ULA response.
    (0..n)
        .map(|i| Complex64::from_polar(1.0, std::f64::consts::PI * angle.sin() * i as f64))
        .collect()
}

fn complex_normal(rng: &mut impl Rng) -> Complex64 {
    // Unit-variance circular Gaussian: each part has variance 1/2.
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Generate one sequence deterministically from (config, seed).
pub fn generate_cfr_sequence(cfg: &ChannelConfig, seed: u64) -> Result<CfrSequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = cfg.paths;
    // Fixed per-sequence geometry.
    let aod: Vec<Vec<Complex64>> = (0..p)
        .map(|_| steering(rng.gen_range(0.0..std::f64::consts::TAU), cfg.n_t))
        .collect();
    let aoa: Vec<Vec<Complex64>> = (0..p)
        .map(|_| steering(rng.gen_range(0.0..std::f64::consts::TAU), cfg.n_r))
        .collect();
    let delays: Vec<f64> = (0..p).map(|_| rng.gen_range(0.0..=cfg.delay_spread)).collect();
    let amp = 1.0 / (p as f64).sqrt();
    // Per-path, per-subcarrier phase ramps e^{-j 2π f_k τ_p}.
    let ramps: Vec<Vec<Complex64>> = (0..p)
        .map(|pi| {
            (0..cfg.n_c)
                .map(|k| {
                    Complex64::from_polar(
                        1.0,
                        -std::f64::consts::TAU * cfg.subcarrier_spacing * k as f64 * delays[pi],
                    )
                })
                .collect()
        })
        .collect();

    let mut gains: Vec<Complex64> = (0..p).map(|_| complex_normal(&mut rng)).collect();
    let excite = (1.0 - cfg.rho * cfg.rho).sqrt();

    let mut data = vec![Complex64::new(0.0, 0.0); cfg.t_len * cfg.n_c * cfg.n_r * cfg.n_t];
    for t in 0..cfg.t_len {
        if t > 0 {
            for g in gains.iter_mut() {
                *g = cfg.rho * *g + excite * complex_normal(&mut rng);
            }
        }
        for k in 0..cfg.n_c {
            for pi in 0..p {
                let w = gains[pi] * amp * ramps[pi][k];
                for r in 0..cfg.n_r {
                    let wr = w * aoa[pi][r];
                    let base = ((t * cfg.n_c + k) * cfg.n_r + r) * cfg.n_t;
                    for c in 0..cfg.n_t {
                        data[base + c] += wr * aod[pi][c].conj();
                    }
                }
            }
        }
    }
    Ok(CfrSequence { t_len: cfg.t_len, n_c: cfg.n_c, n_r: cfg.n_r, n_t: cfg.n_t, seed, data })
}

/// Per-sequence seed derived from a master seed; stable across worker counts.
pub fn sequence_seed(master: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined value.
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generate `count` sequences, optionally across threads. The output is
/// identical for any worker count because each slot owns its seed.
pub fn generate_dataset(cfg: &ChannelConfig, master_seed: u64, count: usize) -> Result<Vec<CfrSequence>> {
    cfg.validate()?;
    let workers = worker_count().min(count.max(1));
    if workers <= 1 {
        return (0..count)
            .map(|i| generate_cfr_sequence(cfg, sequence_seed(master_seed, i as u64)))
            .collect();
    }
    let mut out: Vec<Option<CfrSequence>> = (0..count).map(|_| None).collect();
    let err = std::sync::Mutex::new(None);
    let per = count.div_ceil(workers);
    std::thread::scope(|scope| {
        for (ci, chunk) in out.chunks_mut(per).enumerate() {
            let base = ci * per;
            let cfg = cfg.clone();
            let err = &err;
            scope.spawn(move || {
                for (off, slot) in chunk.iter_mut().enumerate() {
                    match generate_cfr_sequence(&cfg, sequence_seed(master_seed, (base + off) as u64)) {
                        Ok(seq) => *slot = Some(seq),
                        Err(e) => {
                            *err.lock().unwrap() = Some(e);
                            return;
                        }
                    }
                }
            });
        }
    });
    if let Some(e) = err.into_inner().unwrap() {
        return Err(e);
    }
    Ok(out.into_iter().map(|s| s.unwrap()).collect())
}

/// Worker cap: CSILAB_THREADS if set, else available parallelism.
pub fn worker_count() -> usize {
    if let Ok(v) = std::env::var("CSILAB_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// First `n_s` right singular vectors of H, singular values descending.
///
/// Near-degenerate singular values (gap < 1e-9) are ordered by the sign of
/// the column's first non-negligible real component, then original index, so
/// extraction stays reproducible.
pub fn beamforming_target(h: &DMatrix<Complex64>, n_s: usize) -> Result<DMatrix<Complex64>> {
    if h.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(Error::NonFinite("channel matrix".into()));
    }
    if n_s > h.nrows().min(h.ncols()) {
        return Err(Error::InvalidConfig(format!(
            "N_s={n_s} exceeds rank bound {}",
            h.nrows().min(h.ncols())
        )));
    }
    let svd = h.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let order = sorted_order(&sv, &v_t);
    let mut v = DMatrix::<Complex64>::zeros(h.ncols(), n_s);
    for (col, &i) in order.iter().take(n_s).enumerate() {
        for r in 0..h.ncols() {
            v[(r, col)] = v_t[(i, r)].conj();
        }
    }
    Ok(v)
}

/// Descending singular-value order with a reproducible rule for
/// near-degenerate values (gap < 1e-9): such neighbors are reordered by the
/// sign of the vector's first non-negligible real component, then by index.
/// Sorting by value first keeps the comparator a total order.
fn sorted_order(sv: &[f64], v_t: &DMatrix<Complex64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap().then(a.cmp(&b)));
    let key = |i: usize| {
        let row = v_t.row(i);
        let first = row.iter().find(|x| x.norm() > 1e-9);
        let sign = first.map(|x| if x.re >= 0.0 { 0u8 } else { 1 }).unwrap_or(2);
        (sign, i)
    };
    let mut lo = 0;
    while lo < order.len() {
        let mut hi = lo + 1;
        while hi < order.len() && (sv[order[hi - 1]] - sv[order[hi]]).abs() < 1e-9 {
            hi += 1;
        }
        order[lo..hi].sort_by_key(|&i| key(i));
        lo = hi;
    }
    order
}

/// Singular values of H, descending (for the EVM receiver).
pub fn singular_values(h: &DMatrix<Complex64>) -> Vec<f64> {
    let svd = h.clone().svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Left singular vectors paired with [`beamforming_target`]'s ordering plus
/// the singular values, for receiver construction.
pub fn full_svd_sorted(
    h: &DMatrix<Complex64>,
    n_s: usize,
) -> Result<(DMatrix<Complex64>, Vec<f64>, DMatrix<Complex64>)> {
    let svd = h.clone().svd(true, true);
    let u = svd.u.expect("left vectors");
    let v_t = svd.v_t.expect("right vectors");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let order = sorted_order(&sv, &v_t);
    if n_s > order.len() {
        return Err(Error::InvalidConfig(format!("N_s={n_s} exceeds rank bound {}", order.len())));
    }
    let mut u1 = DMatrix::<Complex64>::zeros(h.nrows(), n_s);
    let mut v1 = DMatrix::<Complex64>::zeros(h.ncols(), n_s);
    let mut s1 = Vec::with_capacity(n_s);
    for (col, &i) in order.iter().take(n_s).enumerate() {
        for r in 0..h.nrows() {
            u1[(r, col)] = u[(r, i)];
        }
        for r in 0..h.ncols() {
            v1[(r, col)] = v_t[(i, r)].conj();
        }
        s1.push(sv[i]);
    }
    Ok((u1, s1, v1))
}

/// Canonicalized beamforming targets for every (t, k) of a sequence.
pub fn targets_from_cfr(seq: &CfrSequence, n_s: usize) -> Result<Vec<Vec<DMatrix<Complex64>>>> {
    (0..seq.t_len)
        .map(|t| {
            (0..seq.n_c)
                .map(|k| Ok(canonicalize(&beamforming_target(&seq.matrix(t, k), n_s)?).v))
                .collect()
        })
        .collect()
}

/// Angle parameters for every sequence of a dataset, extracted on up to
/// [`worker_count`] threads.
pub fn angles_dataset(seqs: &[CfrSequence], n_s: usize) -> Result<Vec<Vec<AngleSet>>> {
    let workers = worker_count().min(seqs.len().max(1));
    if workers <= 1 {
        return seqs.iter().map(|s| angles_from_cfr(s, n_s)).collect();
    }
    let mut out: Vec<Option<Vec<AngleSet>>> = (0..seqs.len()).map(|_| None).collect();
    let err = std::sync::Mutex::new(None);
    let per = seqs.len().div_ceil(workers);
    std::thread::scope(|scope| {
        for (ci, chunk) in out.chunks_mut(per).enumerate() {
            let base = ci * per;
            let err = &err;
            scope.spawn(move || {
                for (off, slot) in chunk.iter_mut().enumerate() {
                    match angles_from_cfr(&seqs[base + off], n_s) {
                        Ok(a) => *slot = Some(a),
                        Err(e) => {
                            *err.lock().unwrap() = Some(e);
                            return;
                        }
                    }
                }
            });
        }
    });
    if let Some(e) = err.into_inner().unwrap() {
        return Err(e);
    }
    Ok(out.into_iter().map(|s| s.unwrap()).collect())
}

/// Angle parameters for every snapshot of a sequence.
pub fn angles_from_cfr(seq: &CfrSequence, n_s: usize) -> Result<Vec<AngleSet>> {
    let cfg = GivensConfig::new(seq.n_t, n_s)?;
    (0..seq.t_len)
        .map(|t| {
            let targets: Vec<DMatrix<Complex64>> = (0..seq.n_c)
                .map(|k| beamforming_target(&seq.matrix(t, k), n_s))
                .collect::<Result<_>>()?;
            extract_angles(&cfg, &targets)
        })
        .collect()
}

const MAGIC: [u8; 4] = *b"CFRD";
const VERSION: u16 = 1;

/// Write sequences plus a JSON sidecar (same basename, ".json") carrying the
/// channel config.
pub fn save_dataset(path: &Path, cfg: &ChannelConfig, seqs: &[CfrSequence]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u16::<LittleEndian>(0)?;
    w.write_u32::<LittleEndian>(seqs.len() as u32)?;
    for s in seqs {
        w.write_u32::<LittleEndian>(s.t_len as u32)?;
        w.write_u32::<LittleEndian>(s.n_c as u32)?;
        w.write_u32::<LittleEndian>(s.n_r as u32)?;
        w.write_u32::<LittleEndian>(s.n_t as u32)?;
        w.write_u64::<LittleEndian>(s.seed)?;
        for x in &s.data {
            w.write_f32::<LittleEndian>(x.re as f32)?;
            w.write_f32::<LittleEndian>(x.im as f32)?;
        }
    }
    w.flush()?;
    let sidecar = path.with_extension("json");
    std::fs::write(sidecar, serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}

/// Read a dataset file; the sidecar is read separately by the harness.
pub fn load_dataset(path: &Path) -> Result<Vec<CfrSequence>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found: magic });
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let _reserved = r.read_u16::<LittleEndian>()?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut seqs = Vec::with_capacity(count);
    for i in 0..count {
        let t_len = r.read_u32::<LittleEndian>()? as usize;
        let n_c = r.read_u32::<LittleEndian>()? as usize;
        let n_r = r.read_u32::<LittleEndian>()? as usize;
        let n_t = r.read_u32::<LittleEndian>()? as usize;
        let seed = r.read_u64::<LittleEndian>()?;
        let n = t_len
            .checked_mul(n_c)
            .and_then(|x| x.checked_mul(n_r))
            .and_then(|x| x.checked_mul(n_t))
            .ok_or_else(|| Error::Truncated(format!("sequence {i} header overflows")))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let re = r
                .read_f32::<LittleEndian>()
                .map_err(|_| Error::Truncated(format!("sequence {i} payload short")))?;
            let im = r
                .read_f32::<LittleEndian>()
                .map_err(|_| Error::Truncated(format!("sequence {i} payload short")))?;
            data.push(Complex64::new(re as f64, im as f64));
        }
        seqs.push(CfrSequence { t_len, n_c, n_r, n_t, seed, data });
    }
    Ok(seqs)
}

/// Load the JSON sidecar written next to a dataset.
pub fn load_sidecar(path: &Path) -> Result<ChannelConfig> {
    let text = std::fs::read_to_string(path.with_extension("json"))?;
    Ok(serde_json::from_str(&text)?)
}
