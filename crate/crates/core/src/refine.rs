//! Receiver-side refinement of reconstructed angle parameters.
//!
//! A small convolutional network slides over the `T` most recently
//! reconstructed angle frames — stacked as `2T` planes over the
//! `N_a x N_c` angle grid — and emits a residual correction for the newest
//! frame. Refinement is applied purely at the receive side: it never
//! changes what is sent over the air, and in difference modes the
//! decoder's additive history keeps consuming the *unrefined*
//! reconstructions. The refined frame is only the emitted estimate.
//!
//! Training runs in two phases: first on windows of raw reconstructions,
//! then recursively, where already-refined frames re-enter the window as
//! constants (no gradient flows through them).

use crate::autodiff::{AdamState, Tape, Tensor};
use crate::error::Error;
use crate::Result;
use crate::givens::AngleSet;
use crate::pipeline::{run_sequence, SelectionConfig};
use crate::train::check_finite;
use crate::vqcodec::CodecModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
/// Default sliding-window length.
pub const DEFAULT_WINDOW: usize = 3;

/// How many samples of a recursive-phase batch share one sequence (so the
/// refined prefix is computed once per group instead of once per sample).
const RECURSIVE_GROUP: usize = 25;

/// Convolutional residual refiner over a window of `t_len` angle frames.
///
/// Input is `[n, 2*t_len, n_a, n_c]` (each frame contributes its phi plane
/// then its psi plane), output is `[n, 2, n_a, n_c]` and is added to the
/// newest frame. The final layer is zero-initialized, so an untrained
/// refiner is exactly the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinerModel {
    pub t_len: usize,
    pub n_a: usize,
    pub n_c: usize,
    /// Channel counts per stage, input first: `[2*t_len, hidden.., 2]`.
    pub channels: Vec<usize>,
    /// Per layer, `[c_out, c_in, 3, 3]` row-major flattened.
    pub weights: Vec<Vec<f64>>,
    /// Per layer, `[c_out]`.
    pub biases: Vec<Vec<f64>>,
}

impl RefinerModel {
    /// Kaiming-style uniform init for the hidden convolutions; the output
    /// convolution (weights and bias) starts at zero so the residual head
    /// cannot perturb the input before training.
    pub fn new_random(
        t_len: usize,
        n_a: usize,
        n_c: usize,
        hidden: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if t_len == 0 {
            return Err(Error::InvalidConfig("refiner window length must be positive".into()));
        }
        if n_a == 0 || n_c == 0 {
            return Err(Error::InvalidConfig("refiner grid dimensions must be positive".into()));
        }
        if hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("refiner hidden channel counts must be positive".into()));
        }
        let mut channels = Vec::with_capacity(hidden.len() + 2);
        channels.push(2 * t_len);
        channels.extend_from_slice(hidden);
        channels.push(2);
        let layers = channels.len() - 1;
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for li in 0..layers {
            let (c_in, c_out) = (channels[li], channels[li + 1]);
            let n = c_out * c_in * 9;
            if li + 1 == layers {
                weights.push(vec![0.0; n]);
            } else {
                let bound = (6.0 / (c_in as f64 * 9.0)).sqrt();
                weights.push((0..n).map(|_| rng.gen_range(-bound..bound)).collect());
            }
            biases.push(vec![0.0; c_out]);
        }
        Ok(Self { t_len, n_a, n_c, channels, weights, biases })
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_len == 0 || self.n_a == 0 || self.n_c == 0 {
            return Err(Error::InvalidConfig("refiner dimensions must be positive".into()));
        }
        if self.channels.len() < 2
            || self.channels[0] != 2 * self.t_len
            || *self.channels.last().unwrap() != 2
        {
            return Err(Error::ShapeMismatch(format!(
                "refiner channels {:?} do not run 2*{} -> 2",
                self.channels, self.t_len
            )));
        }
        let layers = self.channels.len() - 1;
        if self.weights.len() != layers || self.biases.len() != layers {
            return Err(Error::ShapeMismatch("refiner layer count mismatch".into()));
        }
        for li in 0..layers {
            let (c_in, c_out) = (self.channels[li], self.channels[li + 1]);
            if self.weights[li].len() != c_out * c_in * 9 || self.biases[li].len() != c_out {
                return Err(Error::ShapeMismatch(format!("refiner layer {li} parameter size mismatch")));
            }
        }
        Ok(())
    }

    /// Parameter vector lengths in update order: `[w0, b0, w1, b1, ..]`.
    pub fn param_sizes(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for li in 0..self.weights.len() {
            out.push(self.weights[li].len());
            out.push(self.biases[li].len());
        }
        out
    }

    /// Put all parameters on a tape; returns `(weights, bias)` per layer.
    fn stage(&self, tape: &mut Tape) -> Vec<(Tensor, Tensor)> {
        (0..self.weights.len())
            .map(|li| {
                let (c_in, c_out) = (self.channels[li], self.channels[li + 1]);
                let w = tape.input(&[c_out, c_in, 3, 3], &self.weights[li]);
                let b = tape.input(&[c_out], &self.biases[li]);
                (w, b)
            })
            .collect()
    }

    /// Run the convolution stack (leaky-ReLU between layers, linear head).
    fn apply(tape: &mut Tape, staged: &[(Tensor, Tensor)], x: Tensor) -> Tensor {
        let mut h = x;
        for (li, &(w, b)) in staged.iter().enumerate() {
            h = tape.conv3x3(h, w, b);
            if li + 1 < staged.len() {
                h = tape.leaky_relu(h);
            }
        }
        h
    }

    fn check_frame(&self, frame: &AngleSet) -> Result<()> {
        if frame.n_a != self.n_a || frame.n_c != self.n_c {
            return Err(Error::ShapeMismatch(format!(
                "window frame grid {}x{} does not match refiner {}x{}",
                frame.n_a, frame.n_c, self.n_a, self.n_c
            )));
        }
        Ok(())
    }

    /// Refine the newest frame of a full window (oldest first, length
    /// exactly `t_len`): the network's residual is added to the last frame.
    /// Values stay in whatever real-valued representation the decoder
    /// emitted — no rewrapping, since downstream consumers are invariant to
    /// 2 pi shifts and rewrapping would cut discontinuities into windows
    /// that later refinements slide over.
    pub fn refine(&self, window: &[AngleSet]) -> Result<AngleSet> {
        if window.len() != self.t_len {
            return Err(Error::ShapeMismatch(format!(
                "refiner window has {} frames, expected {}",
                window.len(),
                self.t_len
            )));
        }
        for frame in window {
            self.check_frame(frame)?;
        }
        let plane = self.n_a * self.n_c;
        let mut vals = Vec::with_capacity(2 * self.t_len * plane);
        for frame in window {
            vals.extend_from_slice(&frame.to_flat());
        }
        let mut tape = Tape::new();
        let staged = self.stage(&mut tape);
        let x = tape.input(&[1, 2 * self.t_len, self.n_a, self.n_c], &vals);
        let y = Self::apply(&mut tape, &staged, x);
        let residual = tape.values(y);
        let current = window[self.t_len - 1].to_flat();
        let flat: Vec<f64> =
            current.iter().zip(residual).map(|(&c, &r)| c + r).collect();
        AngleSet::from_flat(self.n_a, self.n_c, &flat)
    }
}

/// Which source a window position reads from when refining frame `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowSlot {
    /// Unrefined reconstruction at this index.
    Raw(usize),
    /// Previously refined output at this index.
    Refined(usize),
}

/// Window composition for refining frame `t` with window length `t_len`:
/// positions run `t-t_len+1 ..= t`; the newest frame is always the raw
/// reconstruction, indices below `t_len` (which were never refined) stay
/// raw, and everything between reads the already-refined frames.
/// Requires `t >= t_len` (earlier frames pass through unrefined).
pub fn window_slots(t: usize, t_len: usize) -> Vec<WindowSlot> {
    assert!(t_len >= 1 && t >= t_len, "window undefined before {t_len} refined steps");
    (t + 1 - t_len..=t)
        .map(|j| {
            if j == t || j < t_len {
                WindowSlot::Raw(j)
            } else {
                WindowSlot::Refined(j)
            }
        })
        .collect()
}

fn gather_window<'a>(
    raw: &'a [AngleSet],
    refined: &'a [AngleSet],
    t: usize,
    t_len: usize,
) -> Vec<&'a AngleSet> {
    window_slots(t, t_len)
        .into_iter()
        .map(|slot| match slot {
            WindowSlot::Raw(j) => &raw[j],
            WindowSlot::Refined(j) => &refined[j],
        })
        .collect()
}

/// Refine a whole reconstruction sequence. The first `t_len` frames pass
/// through unchanged; each later frame is refined from its sliding window,
/// with earlier refined outputs feeding back in per [`window_slots`].
pub fn run_refined_sequence(model: &RefinerModel, raw: &[AngleSet]) -> Result<Vec<AngleSet>> {
    let mut refined: Vec<AngleSet> = raw.iter().take(model.t_len).cloned().collect();
    for t in model.t_len..raw.len() {
        let window = gather_window(raw, &refined, t, model.t_len);
        let frames: Vec<AngleSet> = window.into_iter().cloned().collect();
        refined.push(model.refine(&frames)?);
    }
    Ok(refined)
}

/// Hyper-parameters for the two-phase refiner fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinerTrainConfig {
    /// Learning rate for the non-recursive warm-up phase.
    pub lr_pre: f64,
    /// Learning rate for the recursive phase.
    pub lr_recursive: f64,
    /// Epochs trained on raw-reconstruction windows.
    pub epochs_pre: usize,
    /// Epochs trained with refined frames fed back as constants.
    pub epochs_recursive: usize,
    pub batch: usize,
    pub samples_per_epoch: usize,
    /// Hidden channel counts of the convolution stack.
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for RefinerTrainConfig {
    fn default() -> Self {
        Self {
            lr_pre: 1e-3,
            lr_recursive: 1e-4,
            epochs_pre: 80,
            epochs_recursive: 40,
            batch: 200,
            samples_per_epoch: 600,
            hidden: vec![32, 32],
            seed: 1,
        }
    }
}

/// Mean training loss per epoch for both phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinerReport {
    pub pre_losses: Vec<f64>,
    pub recursive_losses: Vec<f64>,
}

/// Train a refiner against a frozen feedback codec: every ground-truth
/// sequence is first pushed through the codec to obtain the raw
/// reconstructions, then the refiner is fit on (truth, reconstruction)
/// pairs. The codec itself is read-only throughout — its parameters
/// receive no gradient and are bit-identical afterwards.
pub fn train_refiner(
    codec: &CodecModel,
    sel: &SelectionConfig,
    truth: &[Vec<AngleSet>],
    t_len: usize,
    cfg: &RefinerTrainConfig,
) -> Result<(RefinerModel, RefinerReport)> {
    let mut recons = Vec::with_capacity(truth.len());
    for seq in truth {
        recons.push(run_sequence(codec, sel, seq)?.reconstructions);
    }
    train_refiner_on_pairs(truth, &recons, t_len, cfg)
}

/// Train a refiner directly on aligned (ground truth, reconstruction)
/// sequence pairs. Phase one fits on windows of raw reconstructions;
/// phase two recomputes refined prefixes with the current parameters each
/// step and feeds them back as constants, so gradients only flow through
/// the final window application. The loss is the angular distortion
/// between the refined frame and the ground truth, averaged per sample.
pub fn train_refiner_on_pairs(
    truth: &[Vec<AngleSet>],
    recon: &[Vec<AngleSet>],
    t_len: usize,
    cfg: &RefinerTrainConfig,
) -> Result<(RefinerModel, RefinerReport)> {
    if truth.is_empty() || truth.len() != recon.len() {
        return Err(Error::InvalidConfig(format!(
            "need matching non-empty truth/reconstruction sets, got {} and {}",
            truth.len(),
            recon.len()
        )));
    }
    if t_len == 0 {
        return Err(Error::InvalidConfig("refiner window length must be positive".into()));
    }
    if cfg.batch == 0 || cfg.samples_per_epoch == 0 {
        return Err(Error::InvalidConfig("refiner batch and samples per epoch must be positive".into()));
    }
    let (n_a, n_c) = (recon[0][0].n_a, recon[0][0].n_c);
    for (s, (ts, rs)) in truth.iter().zip(recon).enumerate() {
        if ts.len() != rs.len() {
            return Err(Error::ShapeMismatch(format!(
                "sequence {s}: truth has {} frames, reconstruction {}",
                ts.len(),
                rs.len()
            )));
        }
        if rs.len() <= t_len {
            return Err(Error::InvalidConfig(format!(
                "sequence {s} has {} frames; refiner training needs more than the window length {t_len}",
                rs.len()
            )));
        }
        for frame in ts.iter().chain(rs.iter()) {
            if frame.n_a != n_a || frame.n_c != n_c {
                return Err(Error::ShapeMismatch(format!("sequence {s} mixes angle grid sizes")));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = RefinerModel::new_random(t_len, n_a, n_c, &cfg.hidden, &mut rng)?;
    let mut report = RefinerReport { pre_losses: Vec::new(), recursive_losses: Vec::new() };

    run_phase(&mut model, truth, recon, false, cfg.lr_pre, cfg.epochs_pre, cfg, &mut rng, &mut report.pre_losses)?;
    run_phase(
        &mut model,
        truth,
        recon,
        true,
        cfg.lr_recursive,
        cfg.epochs_recursive,
        cfg,
        &mut rng,
        &mut report.recursive_losses,
    )?;
    Ok((model, report))
}

/// One batch worth of stacked window / current-frame / target values.
struct BatchBuffers {
    window: Vec<f64>,
    current: Vec<f64>,
    target: Vec<f64>,
    count: usize,
}

impl BatchBuffers {
    fn new() -> Self {
        Self { window: Vec::new(), current: Vec::new(), target: Vec::new(), count: 0 }
    }

    fn push(&mut self, frames: &[&AngleSet], current: &AngleSet, target: &AngleSet) {
        for frame in frames {
            self.window.extend_from_slice(&frame.to_flat());
        }
        self.current.extend_from_slice(&current.to_flat());
        self.target.extend_from_slice(&target.to_flat());
        self.count += 1;
    }
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    model: &mut RefinerModel,
    truth: &[Vec<AngleSet>],
    recon: &[Vec<AngleSet>],
    recursive: bool,
    lr: f64,
    epochs: usize,
    cfg: &RefinerTrainConfig,
    rng: &mut ChaCha8Rng,
    losses: &mut Vec<f64>,
) -> Result<()> {
    let t_len = model.t_len;
    let sizes = model.param_sizes();
    let mut adam = AdamState::new(lr, &sizes);
    let steps = cfg.samples_per_epoch.div_ceil(cfg.batch).max(1);
    let phase = if recursive { "recursive" } else { "pre" };
    for epoch in 0..epochs {
        let mut acc = 0.0;
        for step in 0..steps {
            let mut buf = BatchBuffers::new();
            if recursive {
                let mut remaining = cfg.batch;
                while remaining > 0 {
                    let take = remaining.min(RECURSIVE_GROUP);
                    let s = rng.gen_range(0..recon.len());
                    let len = recon[s].len();
                    let ts: Vec<usize> = (0..take).map(|_| rng.gen_range(t_len..len)).collect();
                    let max_t = *ts.iter().max().unwrap();
                    // Refined prefix under the current parameters; entered
                    // into the window as plain values, so no gradient can
                    // reach the parameters through it.
                    let refined = run_refined_sequence(model, &recon[s][..max_t])?;
                    for &t in &ts {
                        let frames = gather_window(&recon[s], &refined, t, t_len);
                        buf.push(&frames, &recon[s][t], &truth[s][t]);
                    }
                    remaining -= take;
                }
            } else {
                for _ in 0..cfg.batch {
                    let s = rng.gen_range(0..recon.len());
                    let t = rng.gen_range(t_len..recon[s].len());
                    let frames: Vec<&AngleSet> = recon[s][t + 1 - t_len..=t].iter().collect();
                    buf.push(&frames, &recon[s][t], &truth[s][t]);
                }
            }

            let mut tape = Tape::new();
            let staged = model.stage(&mut tape);
            let n = buf.count;
            let x = tape.input(&[n, 2 * t_len, model.n_a, model.n_c], &buf.window);
            let cur = tape.input(&[n, 2, model.n_a, model.n_c], &buf.current);
            let tgt = tape.input(&[n, 2, model.n_a, model.n_c], &buf.target);
            let y = RefinerModel::apply(&mut tape, &staged, x);
            let refined = tape.add(cur, y);
            let dist = tape.angular_sq_dist(tgt, refined);
            let loss = tape.scale(dist, 1.0 / n as f64);
            tape.backward(loss);
            check_finite(tape.scalar(loss), &format!("refiner {phase} epoch {epoch} step {step}"))?;
            adam.begin_step();
            for (li, &(w, b)) in staged.iter().enumerate() {
                adam.update(2 * li, &mut model.weights[li], tape.grad(w));
                adam.update(2 * li + 1, &mut model.biases[li], tape.grad(b));
            }
            acc += tape.scalar(loss);
        }
        losses.push(acc / steps as f64);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::angular_distortion;
    use std::f64::consts::{FRAC_PI_2, TAU};
    use crate::vqcodec::{Codebook, CodecGeometry, CodecModel, Mlp, Variant};
    use rand_distr::{Distribution, Normal};

    fn rand_frame(n_a: usize, n_c: usize, rng: &mut ChaCha8Rng) -> AngleSet {
        let plane = n_a * n_c;
        AngleSet {
            n_a,
            n_c,
            phi: (0..plane).map(|_| rng.gen_range(0.0..TAU)).collect(),
            psi: (0..plane).map(|_| rng.gen_range(0.0..FRAC_PI_2)).collect(),
        }
    }

    /// Slow random-walk sequences. Values drift freely without rewrapping,
    /// mirroring how decoded angles are unconstrained reals.
    fn drift_sequences(
        n_seq: usize,
        len: usize,
        n_a: usize,
        n_c: usize,
        step: f64,
        seed: u64,
    ) -> Vec<Vec<AngleSet>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let walk = Normal::new(0.0, step).unwrap();
        (0..n_seq)
            .map(|_| {
                let mut cur = rand_frame(n_a, n_c, &mut rng);
                let mut seq = vec![cur.clone()];
                for _ in 1..len {
                    for v in cur.phi.iter_mut().chain(cur.psi.iter_mut()) {
                        *v += walk.sample(&mut rng);
                    }
                    seq.push(cur.clone());
                }
                seq
            })
            .collect()
    }

    /// Independently noised copy of each frame (quantization-like error).
    fn add_noise(
        seqs: &[Vec<AngleSet>],
        phi_sd: f64,
        psi_sd: f64,
        seed: u64,
    ) -> Vec<Vec<AngleSet>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dphi = Normal::new(0.0, phi_sd).unwrap();
        let dpsi = Normal::new(0.0, psi_sd).unwrap();
        seqs.iter()
            .map(|seq| {
                seq.iter()
                    .map(|f| {
                        let mut g = f.clone();
                        for v in g.phi.iter_mut() {
                            *v += dphi.sample(&mut rng);
                        }
                        for v in g.psi.iter_mut() {
                            *v += dpsi.sample(&mut rng);
                        }
                        g
                    })
                    .collect()
            })
            .collect()
    }

    fn small_cfg() -> RefinerTrainConfig {
        RefinerTrainConfig {
            lr_pre: 1e-3,
            lr_recursive: 1e-4,
            epochs_pre: 8,
            epochs_recursive: 4,
            batch: 16,
            samples_per_epoch: 32,
            hidden: vec![8],
            seed: 7,
        }
    }

    #[test]
    fn zero_initialized_refiner_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = RefinerModel::new_random(3, 2, 4, &[8, 8], &mut rng).unwrap();
        let window: Vec<AngleSet> = (0..3).map(|_| rand_frame(2, 4, &mut rng)).collect();
        let out = model.refine(&window).unwrap();
        assert_eq!(out, window[2], "zero residual head must reproduce the newest frame exactly");

        let seq = drift_sequences(1, 9, 2, 4, 0.05, 11).remove(0);
        let refined = run_refined_sequence(&model, &seq).unwrap();
        assert_eq!(refined, seq, "identity refiner must pass whole sequences through");
    }

    #[test]
    fn window_slots_match_recursion_oracle() {
        // Independent statement of the two-branch recursion: once t is past
        // 2T-2 every history slot is refined; before that, slots below T
        // stay raw and slots in T..t are refined; the newest slot is raw.
        for t_len in [2usize, 3, 5] {
            for t in t_len..=3 * t_len {
                let expect: Vec<WindowSlot> = (t + 1 - t_len..=t)
                    .map(|j| {
                        if j == t {
                            WindowSlot::Raw(j)
                        } else if t >= 2 * t_len - 1 {
                            WindowSlot::Refined(j)
                        } else if j >= t_len {
                            WindowSlot::Refined(j)
                        } else {
                            WindowSlot::Raw(j)
                        }
                    })
                    .collect();
                assert_eq!(window_slots(t, t_len), expect, "t={t} T={t_len}");
            }
        }
        use WindowSlot::{Raw, Refined};
        assert_eq!(window_slots(5, 3), vec![Refined(3), Refined(4), Raw(5)]);
        assert_eq!(window_slots(4, 3), vec![Raw(2), Refined(3), Raw(4)]);
    }

    #[test]
    fn refined_sequence_composes_windows_per_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = RefinerModel::new_random(3, 2, 3, &[6], &mut rng).unwrap();
        // Give the residual head small non-zero weights so refined frames
        // actually differ from raw ones and feed back into later windows.
        let last = model.weights.len() - 1;
        for v in model.weights[last].iter_mut() {
            *v = rng.gen_range(-0.05..0.05);
        }
        let raw = drift_sequences(1, 11, 2, 3, 0.05, 21).remove(0);

        let mut expect: Vec<AngleSet> = raw[..3].to_vec();
        for t in 3..raw.len() {
            let frames: Vec<AngleSet> = window_slots(t, 3)
                .into_iter()
                .map(|slot| match slot {
                    WindowSlot::Raw(j) => raw[j].clone(),
                    WindowSlot::Refined(j) => expect[j].clone(),
                })
                .collect();
            expect.push(model.refine(&frames).unwrap());
        }
        let got = run_refined_sequence(&model, &raw).unwrap();
        assert_eq!(got, expect);
        assert_ne!(got[5], raw[5], "non-zero head should actually change later frames");
    }

    #[test]
    fn refine_rejects_malformed_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = RefinerModel::new_random(3, 2, 3, &[4], &mut rng).unwrap();
        let short: Vec<AngleSet> = (0..2).map(|_| rand_frame(2, 3, &mut rng)).collect();
        assert!(model.refine(&short).is_err(), "short window must be rejected");
        let mut bad: Vec<AngleSet> = (0..3).map(|_| rand_frame(2, 3, &mut rng)).collect();
        bad[1] = rand_frame(3, 3, &mut rng);
        assert!(model.refine(&bad).is_err(), "mismatched grid must be rejected");
    }

    #[test]
    fn training_rejects_bad_setups() {
        let truth = drift_sequences(2, 6, 2, 3, 0.05, 1);
        let cfg = small_cfg();
        assert!(train_refiner_on_pairs(&truth, &truth[..1], 3, &cfg).is_err(), "length mismatch");
        assert!(train_refiner_on_pairs(&truth, &truth, 0, &cfg).is_err(), "zero window");
        let short = drift_sequences(2, 3, 2, 3, 0.05, 2);
        assert!(
            train_refiner_on_pairs(&short, &short, 3, &cfg).is_err(),
            "sequences no longer than the window must be rejected"
        );
        let mut uneven = truth.clone();
        uneven[0].pop();
        assert!(
            train_refiner_on_pairs(&truth, &uneven, 3, &cfg).is_err(),
            "per-sequence frame-count mismatch must be rejected"
        );
    }

    #[test]
    fn trained_refiner_denoises_reconstructions() {
        // Truth drifts slowly; reconstructions carry i.i.d. per-frame noise,
        // so temporal averaging over the window is learnable and should cut
        // the angular distortion well below the unrefined level.
        let truth = drift_sequences(75, 12, 2, 3, 0.02, 31);
        let recon = add_noise(&truth, 0.20, 0.10, 32);
        let (train_truth, eval_truth) = truth.split_at(60);
        let (train_recon, eval_recon) = recon.split_at(60);

        let cfg = RefinerTrainConfig {
            lr_pre: 1e-3,
            lr_recursive: 2e-4,
            epochs_pre: 80,
            epochs_recursive: 25,
            batch: 50,
            samples_per_epoch: 300,
            hidden: vec![12],
            seed: 5,
        };
        let (model, report) =
            train_refiner_on_pairs(train_truth, train_recon, 3, &cfg).unwrap();

        assert!(
            report.pre_losses.last().unwrap() < report.pre_losses.first().unwrap(),
            "warm-up loss should fall: {:?}",
            report.pre_losses
        );
        let tail = |v: &[f64]| v.iter().rev().take(5).sum::<f64>() / 5.0_f64.min(v.len() as f64);
        assert!(
            tail(&report.recursive_losses) <= tail(&report.pre_losses),
            "recursive phase should not regress: pre tail {} vs recursive tail {}",
            tail(&report.pre_losses),
            tail(&report.recursive_losses)
        );

        let (mut before, mut after, mut frames) = (0.0, 0.0, 0);
        for (ts, rs) in eval_truth.iter().zip(eval_recon) {
            let refined = run_refined_sequence(&model, rs).unwrap();
            for t in 3..ts.len() {
                before += angular_distortion(&rs[t].to_flat(), &ts[t].to_flat());
                after += angular_distortion(&refined[t].to_flat(), &ts[t].to_flat());
                frames += 1;
            }
        }
        before /= frames as f64;
        after /= frames as f64;
        eprintln!("held-out distortion per frame: raw {before:.4}, refined {after:.4}");
        assert!(
            after < 0.8 * before,
            "refinement should cut held-out distortion: before {before}, after {after}"
        );
    }

    #[test]
    fn degenerate_constant_training_leaves_output_unchanged() {
        // All frames equal and reconstructions already perfect: training has
        // nothing to fix, so the refiner must stay (numerically) an identity.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let truth: Vec<Vec<AngleSet>> = (0..6)
            .map(|_| {
                let f = rand_frame(2, 3, &mut rng);
                vec![f; 8]
            })
            .collect();
        let (model, _) = train_refiner_on_pairs(&truth, &truth, 3, &small_cfg()).unwrap();
        let mut total = 0.0;
        let mut count = 0;
        for seq in &truth {
            let refined = run_refined_sequence(&model, seq).unwrap();
            for t in 3..seq.len() {
                let a = refined[t].to_flat();
                let b = seq[t].to_flat();
                total += a
                    .iter()
                    .zip(&b)
                    .map(|(&x, &y)| {
                        let d = (x - y).abs();
                        d.min(TAU - d)
                    })
                    .sum::<f64>();
                count += a.len();
            }
        }
        assert!(
            total / count as f64 <= 0.05,
            "constant windows should stay put, mean change {}",
            total / count as f64
        );
    }

    #[test]
    fn refiner_training_leaves_codec_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let geom = CodecGeometry { n_a: 2, n_c: 3, n_sub: 2, dim: 3 };
        let codec = CodecModel {
            variant: Variant::Initial,
            geom,
            bits: 3,
            bits_residual: 0,
            enc1: Mlp::new_random(&[12, 16, 6], &mut rng),
            dec1: Mlp::new_random(&[6, 16, 12], &mut rng),
            enc2: None,
            dec2: None,
            book1: Codebook::new_random(3, 3, &mut rng).unwrap(),
            book1_diff: None,
            book2: None,
        };
        codec.validate().unwrap();
        let snapshot = codec.clone();
        let truth = drift_sequences(5, 7, 2, 3, 0.05, 41);
        let sel = SelectionConfig { mu_th: 0.1 * std::f64::consts::PI, n_th: 8 };
        let (model, report) = train_refiner(&codec, &sel, &truth, 2, &small_cfg()).unwrap();
        assert_eq!(codec, snapshot, "feedback codec must be bit-identical after refiner training");
        assert_eq!(report.pre_losses.len(), small_cfg().epochs_pre);
        assert_eq!(report.recursive_losses.len(), small_cfg().epochs_recursive);
        assert_eq!((model.t_len, model.n_a, model.n_c), (2, 2, 3));
        model.validate().unwrap();
    }
}
