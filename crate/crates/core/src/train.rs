//! Joint training of encoder, decoder, and codebook parameters.
//!
//! Gradient conventions follow the VQ-VAE recipe: decoder inputs use the
//! straight-through correction z_q <- z + sg(z_q - z), codebooks learn only
//! from their dedicated ‖sg(z) - z_q‖² terms, and residual latents are
//! z - sg(z_q) so commitment pressure reaches the encoder but not the
//! codebook. Angle-difference variants train on short chains whose first
//! step is always initial mode: half the sampled chains are pairs and half
//! triples, so the difference path also sees residuals produced by its own
//! previous difference step. Losses are evaluated on the final chain step
//! only; gradients still flow through the teacher steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Tape, Tensor};
use crate::pipeline::{select_mode, wrap_diff, SelectionConfig};
use crate::vqcodec::{angle_features, Codebook, CodecGeometry, CodecModel, Mlp, Variant};
use crate::{Error, Result};

/// Hyperparameters shared by all training drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Plain-autoencoder epochs before k-means codebook initialization
    /// (initial scheme only).
    pub warmup_epochs: usize,
    pub batch: usize,
    /// Snapshots (or chains) drawn per epoch.
    pub samples_per_epoch: usize,
    /// Commitment weight β (also β₁ for the parallel loss).
    pub beta: f64,
    /// Stage-2 commitment weight β₂ (parallel loss).
    pub beta2: f64,
    pub seed: u64,
    /// Hidden layer widths of encoders; decoders mirror them.
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 150,
            warmup_epochs: 1,
            batch: 200,
            samples_per_epoch: 600,
            beta: 0.25,
            beta2: 0.25,
            seed: 1,
            hidden: vec![512, 256],
        }
    }
}

/// Per-epoch mean training loss, for monotonicity checks and logging.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Elementwise wrapped difference of two flattened angle snapshots.
pub fn wrapped_diff_flat(cur: &[f64], prev: &[f64]) -> Vec<f64> {
    assert_eq!(cur.len(), prev.len(), "snapshot length mismatch");
    cur.iter().zip(prev).map(|(&c, &p)| wrap_diff(c - p)).collect()
}

/// Tape handles for every trainable tensor of a codec model.
pub struct StagedModel {
    pub enc1: Vec<(Tensor, Tensor)>,
    pub dec1: Vec<(Tensor, Tensor)>,
    pub enc2: Option<Vec<(Tensor, Tensor)>>,
    pub dec2: Option<Vec<(Tensor, Tensor)>>,
    pub book1: Tensor,
    pub book1_diff: Option<Tensor>,
    pub book2: Option<Tensor>,
}

/// Register all model parameters as tape inputs.
pub fn stage_model(tape: &mut Tape, model: &CodecModel) -> StagedModel {
    StagedModel {
        enc1: model.enc1.stage(tape),
        dec1: model.dec1.stage(tape),
        enc2: model.enc2.as_ref().map(|m| m.stage(tape)),
        dec2: model.dec2.as_ref().map(|m| m.stage(tape)),
        book1: tape.input(&[model.book1.len(), model.book1.dim], &model.book1.words),
        book1_diff: model
            .book1_diff
            .as_ref()
            .map(|b| tape.input(&[b.len(), b.dim], &b.words)),
        book2: model.book2.as_ref().map(|b| tape.input(&[b.len(), b.dim], &b.words)),
    }
}

/// Codeword picks and the latents that produced them for one codebook, so
/// the training loop can spot dead codewords and reseed them from data.
#[derive(Debug, Clone, Default)]
pub struct BookStats {
    pub indices: Vec<usize>,
    pub latents: Vec<f64>,
}

impl BookStats {
    fn record(&mut self, idx: &[usize], latent: &[f64]) {
        // A few thousand stashed sub-vectors are plenty for reseeding.
        if self.latents.len() < 4096 * (latent.len() / idx.len().max(1)) {
            self.latents.extend_from_slice(latent);
        }
        self.indices.extend_from_slice(idx);
    }

    fn tally(&self, n_words: usize) -> Vec<usize> {
        let mut counts = vec![0usize; n_words];
        for &i in &self.indices {
            counts[i] += 1;
        }
        counts
    }

    fn absorb(&mut self, other: BookStats) {
        let cap = 4096 * 64;
        if self.latents.len() < cap {
            self.latents.extend(other.latents);
        }
        self.indices.extend(other.indices);
    }
}

/// Quantization activity of one loss graph, keyed by codebook role.
#[derive(Debug, Clone, Default)]
pub struct QuantStats {
    pub book1: BookStats,
    pub book1_diff: BookStats,
    pub book2: BookStats,
}

impl QuantStats {
    fn absorb(&mut self, other: QuantStats) {
        self.book1.absorb(other.book1);
        self.book1_diff.absorb(other.book1_diff);
        self.book2.absorb(other.book2);
    }
}

/// A loss tensor plus the codeword picks made while building it.
pub struct LossBuild {
    pub loss: Tensor,
    pub stats: QuantStats,
}

/// Nearest-codeword indices of each D-sized sub-vector of `z` against the
/// codebook rows stored in tape node `book`.
fn nearest_indices(tape: &Tape, book: Tensor, z: Tensor, dim: usize) -> Vec<usize> {
    let words = tape.values(book);
    let n_words = tape.shape(book)[0];
    let zv = tape.values(z);
    assert_eq!(zv.len() % dim, 0, "latent not divisible into sub-vectors");
    zv.chunks(dim)
        .map(|sub| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for k in 0..n_words {
                let w = &words[k * dim..(k + 1) * dim];
                let mut d = 0.0;
                for i in 0..dim {
                    let e = sub[i] - w[i];
                    d += e * e;
                }
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Quantization subgraph: returns the straight-through decoder input and
/// the raw gathered codewords (the codebook's gradient path).
fn quantize_on_tape(
    tape: &mut Tape,
    book: Tensor,
    z: Tensor,
    dim: usize,
    stats: &mut BookStats,
) -> (Tensor, Tensor) {
    let idx = nearest_indices(tape, book, z, dim);
    let latent = tape.values(z).to_vec();
    stats.record(&idx, &latent);
    let rows = tape.gather_rows(book, &idx);
    let shape = tape.shape(z).to_vec();
    let zq = tape.reshape(rows, &shape);
    let st = tape.straight_through(z, zq);
    (st, zq)
}

/// Residual latent z - sg(z_q): commitment reaches the encoder only.
fn residual_on_tape(tape: &mut Tape, z: Tensor, zq: Tensor) -> Tensor {
    let frozen = tape.stop_grad(zq);
    tape.add_scaled(z, frozen, -1.0)
}

/// The two VQ penalty terms ‖sg(z) - z_q‖² + β‖z - sg(z_q)‖².
fn vq_terms(tape: &mut Tape, z: Tensor, zq: Tensor, beta: f64) -> Tensor {
    let sgz = tape.stop_grad(z);
    let book_term = tape.sq_dist_sum(sgz, zq);
    let sgq = tape.stop_grad(zq);
    let commit = tape.sq_dist_sum(z, sgq);
    tape.add_scaled(book_term, commit, beta)
}

/// Initial-scheme loss for one snapshot: squared-error distortion
/// `d(X, X-hat) = ||X - X-hat||_F^2` plus VQ terms. The distortion is a
/// sum, like the VQ penalties, so neither side of the loss is scaled down
/// by the input size. The encoder consumes wrap-free trig features of the
/// snapshot; the distortion compares raw angles.
pub fn build_initial_loss(
    tape: &mut Tape,
    sm: &StagedModel,
    model: &CodecModel,
    x: &[f64],
    beta: f64,
) -> LossBuild {
    let mut stats = QuantStats::default();
    let xin = tape.input(&[1, x.len()], x);
    let feats = angle_features(x);
    let fin = tape.input(&[1, feats.len()], &feats);
    let z = model.enc1.apply(tape, &sm.enc1, fin);
    let (st, zq) = quantize_on_tape(tape, sm.book1, z, model.geom.dim, &mut stats.book1);
    let xhat = model.dec1.apply(tape, &sm.dec1, st);
    let d = tape.sq_dist_sum(xhat, xin);
    let vq = vq_terms(tape, z, zq, beta);
    LossBuild { loss: tape.add(d, vq), stats }
}

/// Record of one chain step kept for use by later steps.
struct ChainStep {
    z: Tensor,
    st1: Tensor,
    zq1: Tensor,
}

/// Shared chain machinery for the naive and unified schemes, which differ
/// only in whether the previous step's quantization residual is added back
/// into the difference latent.
fn build_chain_loss(
    tape: &mut Tape,
    sm: &StagedModel,
    model: &CodecModel,
    chain: &[&[f64]],
    modes: &[bool],
    beta: f64,
    with_residual: bool,
) -> LossBuild {
    assert_eq!(chain.len(), modes.len(), "one mode per chain step");
    assert!(!modes[0], "chains must start in initial mode");
    let enc2 = sm.enc2.as_ref().expect("difference chain needs a Type-II encoder");
    let dec2 = sm.dec2.as_ref().expect("difference chain needs a Type-II decoder");
    let dim = model.geom.dim;
    let mut stats = QuantStats::default();
    let mut prev: Option<ChainStep> = None;
    let mut prev_phi_hat: Option<Tensor> = None;
    let mut last = None;
    for (i, (&phi, &mode)) in chain.iter().zip(modes).enumerate() {
        let x = tape.input(&[1, phi.len()], phi);
        let z = if !mode {
            let feats = angle_features(phi);
            let fin = tape.input(&[1, feats.len()], &feats);
            model.enc1.apply(tape, &sm.enc1, fin)
        } else {
            let diff = angle_features(&wrapped_diff_flat(phi, chain[i - 1]));
            let din = tape.input(&[1, diff.len()], &diff);
            let e = model.enc2.as_ref().unwrap().apply(tape, enc2, din);
            if with_residual {
                let p = prev.as_ref().unwrap();
                let r = residual_on_tape(tape, p.z, p.zq1);
                tape.add(e, r)
            } else {
                e
            }
        };
        let (st, zq) = quantize_on_tape(tape, sm.book1, z, dim, &mut stats.book1);
        let phi_hat = if !mode {
            model.dec1.apply(tape, &sm.dec1, st)
        } else {
            let d = model.dec2.as_ref().unwrap().apply(tape, dec2, st);
            tape.add(d, prev_phi_hat.unwrap())
        };
        prev = Some(ChainStep { z, st1: st, zq1: zq });
        prev_phi_hat = Some(phi_hat);
        last = Some((x, z, zq, phi_hat));
    }
    let (x, z, zq, phi_hat) = last.unwrap();
    let recon = tape.angular_sq_dist(x, phi_hat);
    let vq = vq_terms(tape, z, zq, beta);
    LossBuild { loss: tape.add(recon, vq), stats }
}

/// Naive angle-difference loss: difference latents share the single
/// codebook and no residual compensation is applied.
pub fn build_naive_loss(
    tape: &mut Tape,
    sm: &StagedModel,
    model: &CodecModel,
    chain: &[&[f64]],
    modes: &[bool],
    beta: f64,
) -> LossBuild {
    build_chain_loss(tape, sm, model, chain, modes, beta, false)
}

/// Unified-VQ angle-difference loss: the previous step's quantization
/// residual is added to the difference latent before quantization.
pub fn build_unified_loss(
    tape: &mut Tape,
    sm: &StagedModel,
    model: &CodecModel,
    chain: &[&[f64]],
    modes: &[bool],
    beta: f64,
) -> LossBuild {
    build_chain_loss(tape, sm, model, chain, modes, beta, true)
}

/// Parallel-VQ chain loss: the final step's stage-1 VQ terms plus the
/// stage-2 terms of the previous step's residual, with the reconstruction
/// built on the refined previous estimate.
pub fn build_parallel_loss(
    tape: &mut Tape,
    sm: &StagedModel,
    model: &CodecModel,
    chain: &[&[f64]],
    modes: &[bool],
    beta1: f64,
    beta2: f64,
) -> LossBuild {
    assert_eq!(chain.len(), modes.len(), "one mode per chain step");
    assert!(!modes[0], "chains must start in initial mode");
    let enc2 = sm.enc2.as_ref().expect("parallel chain needs a Type-II encoder");
    let dec2 = sm.dec2.as_ref().expect("parallel chain needs a Type-II decoder");
    let book_diff = sm.book1_diff.expect("parallel chain needs a difference codebook");
    let book2 = sm.book2.expect("parallel chain needs a stage-2 codebook");
    let dim = model.geom.dim;
    let mut stats = QuantStats::default();

    let mut steps: Vec<ChainStep> = Vec::with_capacity(chain.len());
    // Refined estimate of step i-1, available while processing step i.
    let mut refined_prev: Option<Tensor> = None;
    // Stage-2 VQ terms belonging to the final step's refinement.
    let mut final_residual_terms: Option<Tensor> = None;
    let mut last = None;
    for (i, (&phi, &mode)) in chain.iter().zip(modes).enumerate() {
        let x = tape.input(&[1, phi.len()], phi);
        let (z, st1, zq1, phi_hat) = if !mode {
            let feats = angle_features(phi);
            let fin = tape.input(&[1, feats.len()], &feats);
            let z = model.enc1.apply(tape, &sm.enc1, fin);
            let (st, zq) = quantize_on_tape(tape, sm.book1, z, dim, &mut stats.book1);
            let phi_hat = model.dec1.apply(tape, &sm.dec1, st);
            (z, st, zq, phi_hat)
        } else {
            // Refine the previous estimate: its stage-1 latent plus the
            // stage-2 quantization of its residual, through its decoder.
            let p = &steps[i - 1];
            let r_prev = residual_on_tape(tape, p.z, p.zq1);
            let (st2, zq2) = quantize_on_tape(tape, book2, r_prev, dim, &mut stats.book2);
            let agg = tape.add(p.st1, st2);
            let refined = if !modes[i - 1] {
                model.dec1.apply(tape, &sm.dec1, agg)
            } else {
                let d = model.dec2.as_ref().unwrap().apply(tape, dec2, agg);
                let earlier = refined_prev.expect("refinement chain needs an earlier estimate");
                tape.add(d, earlier)
            };
            if i + 1 == chain.len() {
                final_residual_terms = Some(vq_terms(tape, r_prev, zq2, beta2));
            }
            refined_prev = Some(refined);

            let diff = angle_features(&wrapped_diff_flat(phi, chain[i - 1]));
            let din = tape.input(&[1, diff.len()], &diff);
            let z = model.enc2.as_ref().unwrap().apply(tape, enc2, din);
            let (st, zq) = quantize_on_tape(tape, book_diff, z, dim, &mut stats.book1_diff);
            let d = model.dec2.as_ref().unwrap().apply(tape, dec2, st);
            let phi_hat = tape.add(d, refined);
            (z, st, zq, phi_hat)
        };
        steps.push(ChainStep { z, st1, zq1 });
        last = Some((x, z, zq1, phi_hat));
    }
    let (x, z, zq1, phi_hat) = last.unwrap();
    let recon = tape.angular_sq_dist(x, phi_hat);
    let vq1 = vq_terms(tape, z, zq1, beta1);
    let mut loss = tape.add(recon, vq1);
    if let Some(t) = final_residual_terms {
        loss = tape.add(loss, t);
    }
    LossBuild { loss, stats }
}

fn adam_slot_sizes(model: &CodecModel) -> Vec<usize> {
    let mut sizes = model.enc1.param_sizes();
    sizes.extend(model.dec1.param_sizes());
    if let Some(m) = &model.enc2 {
        sizes.extend(m.param_sizes());
    }
    if let Some(m) = &model.dec2 {
        sizes.extend(m.param_sizes());
    }
    sizes.push(model.book1.words.len());
    if let Some(b) = &model.book1_diff {
        sizes.push(b.words.len());
    }
    if let Some(b) = &model.book2 {
        sizes.push(b.words.len());
    }
    sizes
}

/// One Adam step over every parameter of the model from tape gradients.
fn apply_updates(model: &mut CodecModel, adam: &mut AdamState, tape: &Tape, sm: &StagedModel) {
    adam.begin_step();
    let mut slot = 0;
    model.enc1.adam_update(adam, slot, tape, &sm.enc1);
    slot += sm.enc1.len() * 2;
    model.dec1.adam_update(adam, slot, tape, &sm.dec1);
    slot += sm.dec1.len() * 2;
    if let (Some(m), Some(s)) = (&mut model.enc2, &sm.enc2) {
        m.adam_update(adam, slot, tape, s);
        slot += s.len() * 2;
    }
    if let (Some(m), Some(s)) = (&mut model.dec2, &sm.dec2) {
        m.adam_update(adam, slot, tape, s);
        slot += s.len() * 2;
    }
    adam.update(slot, &mut model.book1.words, tape.grad(sm.book1));
    slot += 1;
    if let (Some(b), Some(&h)) = (&mut model.book1_diff, sm.book1_diff.as_ref()) {
        adam.update(slot, &mut b.words, tape.grad(h));
        slot += 1;
    }
    if let (Some(b), Some(&h)) = (&mut model.book2, sm.book2.as_ref()) {
        adam.update(slot, &mut b.words, tape.grad(h));
    }
}

/// Replace codewords never picked this epoch with random latent
/// sub-vectors observed during the same epoch.
fn reseed_dead(book: &mut Codebook, stats: &BookStats, rng: &mut ChaCha8Rng) {
    let dim = book.dim;
    if stats.latents.len() < dim || stats.indices.is_empty() {
        return;
    }
    let counts = stats.tally(book.len());
    let pool = stats.latents.len() / dim;
    for (k, &count) in counts.iter().enumerate() {
        if count == 0 {
            let pick = rng.gen_range(0..pool);
            book.words[k * dim..(k + 1) * dim]
                .copy_from_slice(&stats.latents[pick * dim..(pick + 1) * dim]);
        }
    }
}

pub(crate) fn check_finite(loss: f64, context: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!("{context}: loss became {loss}")))
    }
}

fn validate_dataset(sequences: &[Vec<Vec<f64>>], in_len: usize, min_len: usize) -> Result<()> {
    if sequences.is_empty() {
        return Err(Error::InvalidConfig("training data is empty".into()));
    }
    for seq in sequences {
        if seq.len() < min_len {
            return Err(Error::InvalidConfig(format!(
                "sequence shorter than {min_len} snapshots"
            )));
        }
        for snap in seq {
            if snap.len() != in_len {
                return Err(Error::ShapeMismatch(format!(
                    "snapshot length {} does not match geometry {in_len}",
                    snap.len()
                )));
            }
        }
    }
    Ok(())
}

fn draw_snapshot<'a>(sequences: &'a [Vec<Vec<f64>>], rng: &mut ChaCha8Rng) -> &'a [f64] {
    let s = rng.gen_range(0..sequences.len());
    let t = rng.gen_range(0..sequences[s].len());
    &sequences[s][t]
}

/// Draw a pair or triple of consecutive snapshots plus their data-driven
/// mode indicators (the first step is always treated as initial mode).
fn draw_chain<'a>(
    sequences: &'a [Vec<Vec<f64>>],
    sel: &SelectionConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<&'a [f64]>, Vec<bool>) {
    let s = rng.gen_range(0..sequences.len());
    let seq = &sequences[s];
    let triple = seq.len() >= 3 && rng.gen_bool(0.5);
    let len = if triple { 3 } else { 2 };
    let end = rng.gen_range(len - 1..seq.len());
    let chain: Vec<&[f64]> = (0..len).map(|j| seq[end + 1 - len + j].as_slice()).collect();
    let mut modes = vec![false];
    for j in 1..len {
        let diff = wrapped_diff_flat(chain[j], chain[j - 1]);
        modes.push(select_mode(&diff, sel).0);
    }
    (chain, modes)
}

/// Train the Type-I pair plus its codebook on independent snapshots.
///
/// Warm-up epochs run the plain autoencoder (no quantization), after which
/// the codebook is initialized by k-means over encoder latents; the main
/// epochs then minimize the full VQ loss. Codewords unused for a whole
/// epoch are reseeded from that epoch's latents.
pub fn train_initial(
    sequences: &[Vec<Vec<f64>>],
    geom: CodecGeometry,
    bits: u32,
    cfg: &TrainConfig,
) -> Result<(CodecModel, TrainReport)> {
    let in_len = geom.input_len();
    validate_dataset(sequences, in_len, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut enc_dims = vec![in_len];
    enc_dims.extend_from_slice(&cfg.hidden);
    enc_dims.push(geom.latent_len());
    let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
    let mut model = CodecModel {
        variant: Variant::Initial,
        geom,
        bits,
        bits_residual: 0,
        enc1: Mlp::new_random(&enc_dims, &mut rng),
        dec1: Mlp::new_random(&dec_dims, &mut rng),
        enc2: None,
        dec2: None,
        book1: Codebook::new_random(geom.dim, bits, &mut rng)?,
        book1_diff: None,
        book2: None,
    };
    model.validate()?;
    let mut report = TrainReport::default();
    let steps = cfg.samples_per_epoch.div_ceil(cfg.batch).max(1);

    // Warm-up: plain autoencoder.
    let warm_sizes: Vec<usize> = model
        .enc1
        .param_sizes()
        .into_iter()
        .chain(model.dec1.param_sizes())
        .collect();
    let enc_slots = model.enc1.param_sizes().len();
    let mut adam = AdamState::new(cfg.lr, &warm_sizes);
    for epoch in 0..cfg.warmup_epochs {
        for step in 0..steps {
            let mut tape = Tape::new();
            let enc_staged = model.enc1.stage(&mut tape);
            let dec_staged = model.dec1.stage(&mut tape);
            let mut total: Option<Tensor> = None;
            for _ in 0..cfg.batch {
                let x = draw_snapshot(sequences, &mut rng);
                let xin = tape.input(&[1, in_len], x);
                let z = model.enc1.apply(&mut tape, &enc_staged, xin);
                let xhat = model.dec1.apply(&mut tape, &dec_staged, z);
                let d = tape.mse(xhat, xin);
                total = Some(match total {
                    Some(t) => tape.add(t, d),
                    None => d,
                });
            }
            let loss = tape.scale(total.unwrap(), 1.0 / cfg.batch as f64);
            check_finite(tape.scalar(loss), &format!("warm-up epoch {epoch} step {step}"))?;
            tape.backward(loss);
            adam.begin_step();
            model.enc1.adam_update(&mut adam, 0, &tape, &enc_staged);
            model.dec1.adam_update(&mut adam, enc_slots, &tape, &dec_staged);
        }
    }

    // K-means over encoder latent sub-vectors.
    let pool = 2048.max(cfg.batch);
    let mut latents = Vec::with_capacity(pool * geom.latent_len());
    for _ in 0..pool {
        let x = draw_snapshot(sequences, &mut rng);
        latents.extend(model.enc1.forward_plain(x));
    }
    model.book1.fit_kmeans(&latents, 20, &mut rng);

    // Main VQ training.
    let mut adam = AdamState::new(cfg.lr, &adam_slot_sizes(&model));
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_stats = QuantStats::default();
        for step in 0..steps {
            let mut tape = Tape::new();
            let sm = stage_model(&mut tape, &model);
            let mut total: Option<Tensor> = None;
            for _ in 0..cfg.batch {
                let x = draw_snapshot(sequences, &mut rng);
                let built = build_initial_loss(&mut tape, &sm, &model, x, cfg.beta);
                epoch_stats.absorb(built.stats);
                total = Some(match total {
                    Some(t) => tape.add(t, built.loss),
                    None => built.loss,
                });
            }
            let loss = tape.scale(total.unwrap(), 1.0 / cfg.batch as f64);
            let loss_val = tape.scalar(loss);
            check_finite(loss_val, &format!("epoch {epoch} step {step}"))?;
            epoch_loss += loss_val;
            tape.backward(loss);
            apply_updates(&mut model, &mut adam, &tape, &sm);
        }
        reseed_dead(&mut model.book1, &epoch_stats.book1, &mut rng);
        report.epoch_losses.push(epoch_loss / steps as f64);
    }
    Ok((model, report))
}

/// Train an angle-difference variant starting from a trained initial model.
///
/// The Type-I pair and its codebook are copied from `initial` and keep
/// training jointly; the Type-II pair (and for the parallel variant its
/// codebooks) start from random initialization. `bits_residual` is only
/// used by the parallel variant.
pub fn train_ad(
    variant: Variant,
    sequences: &[Vec<Vec<f64>>],
    initial: &CodecModel,
    sel: &SelectionConfig,
    bits_residual: u32,
    cfg: &TrainConfig,
) -> Result<(CodecModel, TrainReport)> {
    if variant == Variant::Initial {
        return Err(Error::InvalidConfig(
            "angle-difference training needs a difference variant".into(),
        ));
    }
    if initial.variant != Variant::Initial {
        return Err(Error::InvalidConfig(
            "the starting model must be an initial-scheme codec".into(),
        ));
    }
    sel.validate()?;
    validate_dataset(sequences, initial.geom.input_len(), 2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let enc_dims = initial.enc1.dims.clone();
    let dec_dims = initial.dec1.dims.clone();
    let dim = initial.geom.dim;
    let mut model = CodecModel {
        variant,
        geom: initial.geom,
        bits: initial.bits,
        bits_residual: if variant == Variant::AdParallel { bits_residual } else { 0 },
        enc1: initial.enc1.clone(),
        dec1: initial.dec1.clone(),
        enc2: Some(Mlp::new_random(&enc_dims, &mut rng)),
        dec2: Some(Mlp::new_random(&dec_dims, &mut rng)),
        book1: initial.book1.clone(),
        book1_diff: None,
        book2: None,
    };
    if variant == Variant::AdParallel {
        if bits_residual == 0 || bits_residual >= initial.bits {
            return Err(Error::InvalidConfig(format!(
                "stage-2 bits {bits_residual} must be in 1..{}",
                initial.bits
            )));
        }
        model.book1_diff =
            Some(Codebook::new_random(dim, initial.bits - bits_residual, &mut rng)?);
        model.book2 = Some(Codebook::new_random(dim, bits_residual, &mut rng)?);
    }
    model.validate()?;

    let mut report = TrainReport::default();
    let steps = cfg.samples_per_epoch.div_ceil(cfg.batch).max(1);
    let mut adam = AdamState::new(cfg.lr, &adam_slot_sizes(&model));
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_stats = QuantStats::default();
        for step in 0..steps {
            let mut tape = Tape::new();
            let sm = stage_model(&mut tape, &model);
            let mut total: Option<Tensor> = None;
            for _ in 0..cfg.batch {
                let (chain, modes) = draw_chain(sequences, sel, &mut rng);
                let built = match variant {
                    Variant::AdNaive => {
                        build_naive_loss(&mut tape, &sm, &model, &chain, &modes, cfg.beta)
                    }
                    Variant::AdUnified => {
                        build_unified_loss(&mut tape, &sm, &model, &chain, &modes, cfg.beta)
                    }
                    Variant::AdParallel => build_parallel_loss(
                        &mut tape, &sm, &model, &chain, &modes, cfg.beta, cfg.beta2,
                    ),
                    Variant::Initial => unreachable!(),
                };
                epoch_stats.absorb(built.stats);
                total = Some(match total {
                    Some(t) => tape.add(t, built.loss),
                    None => built.loss,
                });
            }
            let loss = tape.scale(total.unwrap(), 1.0 / cfg.batch as f64);
            let loss_val = tape.scalar(loss);
            check_finite(loss_val, &format!("epoch {epoch} step {step}"))?;
            epoch_loss += loss_val;
            tape.backward(loss);
            apply_updates(&mut model, &mut adam, &tape, &sm);
        }
        reseed_dead(&mut model.book1, &epoch_stats.book1, &mut rng);
        if let Some(b) = &mut model.book1_diff {
            reseed_dead(b, &epoch_stats.book1_diff, &mut rng);
        }
        if let Some(b) = &mut model.book2 {
            reseed_dead(b, &epoch_stats.book2, &mut rng);
        }
        report.epoch_losses.push(epoch_loss / steps as f64);
    }
    Ok((model, report))
}
