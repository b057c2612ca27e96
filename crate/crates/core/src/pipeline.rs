//! STA/AP feedback protocol: initial feedback plus the three
//! angle-difference variants (naive, parallel VQ, unified VQ).
//!
//! The STA owns the mode decision (it knows its own angle history); the AP
//! reconstructs purely from received messages, so a lossless feedback
//! channel keeps both state machines in lockstep. Every message carries
//! exactly N * B payload bits plus the one-bit mode indicator, in every
//! mode of every variant.

use serde::{Deserialize, Serialize};

use crate::baseline::{BitReader, BitWriter};
use crate::givens::AngleSet;
use crate::vqcodec::{angle_features, CodecModel, Variant};
use crate::{Error, Result};

/// Angle-difference mode selection thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Entry magnitude above which a wrapped difference counts as changed.
    pub mu_th: f64,
    /// Difference mode engages when fewer than this many entries changed.
    pub n_th: usize,
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_th > 0.0 && self.mu_th < std::f64::consts::PI) {
            return Err(Error::InvalidConfig(format!(
                "mu_th={} outside (0, pi)",
                self.mu_th
            )));
        }
        Ok(())
    }
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { mu_th: 0.1 * std::f64::consts::PI, n_th: 8 }
    }
}

/// Map an angle difference in (-2pi, 2pi) onto the minimal rotation in
/// [-pi, pi): h(x) = x when -pi <= x < pi, else -sgn(x) * (2pi - |x|).
/// Preserves e^{jx} exactly.
pub fn wrap_diff(x: f64) -> f64 {
    assert!(x.abs() < std::f64::consts::TAU, "difference {x} outside (-2pi, 2pi)");
    if (-std::f64::consts::PI..std::f64::consts::PI).contains(&x) {
        x
    } else {
        -x.signum() * (std::f64::consts::TAU - x.abs())
    }
}

/// Flattened h'(cur - prev) over both angle planes.
pub fn wrapped_diff(cur: &AngleSet, prev: &AngleSet) -> Vec<f64> {
    assert_eq!((cur.n_a, cur.n_c), (prev.n_a, prev.n_c), "angle geometry mismatch");
    cur.to_flat().iter().zip(prev.to_flat()).map(|(&c, p)| wrap_diff(c - p)).collect()
}

/// Count entries whose wrapped difference exceeds `mu_th` (strictly) and
/// decide the mode: `true` (difference mode) when fewer than `n_th` moved.
pub fn select_mode(diff_wrapped: &[f64], cfg: &SelectionConfig) -> (bool, usize) {
    let n_d = diff_wrapped.iter().filter(|x| x.abs() > cfg.mu_th).count();
    (n_d < cfg.n_th, n_d)
}

/// Squared Frobenius distance between elementwise complex exponentials:
/// sum of 2 - 2 cos(a_i - b_i). Invariant to 2 pi shifts of any entry.
pub fn angular_distortion(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "angular distortion length mismatch");
    a.iter().zip(b).map(|(&x, &y)| 2.0 - 2.0 * (x - y).cos()).sum()
}

/// One feedback transmission: indicator bit plus fixed-width index fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedbackMessage {
    /// `true` = difference mode (I_t = 1).
    pub indicator: bool,
    /// (value, bit width) in send order.
    pub fields: Vec<(u32, u32)>,
}

impl FeedbackMessage {
    pub fn payload_bits(&self) -> usize {
        self.fields.iter().map(|&(_, w)| w as usize).sum()
    }

    pub fn total_bits(&self) -> usize {
        self.payload_bits() + 1
    }

    /// Wire format: u32 little-endian total bit count, then the indicator
    /// in bit 7 of byte 0 followed by big-endian fields, zero-padded.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BitWriter::new();
        w.push(self.indicator as u32, 1);
        for &(v, width) in &self.fields {
            w.push(v, width);
        }
        let mut out = (w.bit_len as u32).to_le_bytes().to_vec();
        out.extend_from_slice(&w.into_bytes());
        out
    }

    /// Parse against the field schema implied by `model` (and, for the
    /// parallel variant, by the indicator bit).
    pub fn from_bytes(bytes: &[u8], model: &CodecModel) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated("message shorter than its length prefix".into()));
        }
        let declared = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let expected = model.payload_bits() + 1;
        if declared != expected {
            return Err(Error::Protocol(format!(
                "message declares {declared} bits, scheme requires {expected}"
            )));
        }
        if bytes.len() != 4 + declared.div_ceil(8) {
            return Err(Error::Truncated(format!(
                "message body has {} bytes, expected {}",
                bytes.len() - 4,
                declared.div_ceil(8)
            )));
        }
        let mut r = BitReader::new(&bytes[4..], declared);
        let indicator = r.pull(1)? == 1;
        let widths = field_widths(model, indicator);
        let mut fields = Vec::with_capacity(widths.len());
        for w in widths {
            fields.push((r.pull(w)?, w));
        }
        Ok(Self { indicator, fields })
    }
}

/// Field widths for one message of this scheme and mode.
fn field_widths(model: &CodecModel, difference_mode: bool) -> Vec<u32> {
    let n = model.geom.n_sub;
    if model.variant == Variant::AdParallel && difference_mode {
        let mut w = vec![model.bits - model.bits_residual; n];
        w.extend(std::iter::repeat(model.bits_residual).take(n));
        w
    } else {
        vec![model.bits; n]
    }
}

/// Transmitter-side protocol state.
#[derive(Debug, Clone, Default)]
pub struct StaState {
    /// Ground-truth angles of the previous step.
    pub prev_phi: Option<AngleSet>,
    /// Previous effective latent z_{t-1}.
    pub prev_z: Option<Vec<f64>>,
    /// Previous stage-1 (or unified) quantized latent.
    pub prev_zq1: Option<Vec<f64>>,
    /// Previous mode indicator.
    pub prev_mode: Option<bool>,
}

/// Receiver-side protocol state.
#[derive(Debug, Clone, Default)]
pub struct ApState {
    /// Quantized latent received at the previous step.
    pub prev_zq1: Option<Vec<f64>>,
    /// Previous reconstruction (chain value for naive/unified).
    pub prev_recon: Option<Vec<f64>>,
    /// Parallel variant: refined previous estimate chain.
    pub prev_refined: Option<Vec<f64>>,
    pub prev_mode: Option<bool>,
}

fn sub_count(model: &CodecModel) -> usize {
    model.geom.n_sub
}

fn to_fields(idx: &[usize], width: u32) -> Vec<(u32, u32)> {
    idx.iter().map(|&i| (i as u32, width)).collect()
}

fn fields_to_idx(fields: &[(u32, u32)]) -> Vec<usize> {
    fields.iter().map(|&(v, _)| v as usize).collect()
}

/// One STA step: decide the mode, encode, quantize, emit the message, and
/// advance the state. The first step always uses initial mode.
pub fn sta_step(
    model: &CodecModel,
    sel: &SelectionConfig,
    state: &mut StaState,
    phi: &AngleSet,
) -> Result<FeedbackMessage> {
    let flat = phi.to_flat();
    let diff_mode = match (&state.prev_phi, model.variant) {
        (_, Variant::Initial) | (None, _) => false,
        (Some(prev), _) => select_mode(&wrapped_diff(phi, prev), sel).0,
    };
    let msg = if !diff_mode {
        let z = model.enc1.forward_plain(&angle_features(&flat));
        let (zq, idx) = model.book1.quantize(&z);
        state.prev_z = Some(z);
        state.prev_zq1 = Some(zq);
        FeedbackMessage { indicator: false, fields: to_fields(&idx, model.bits) }
    } else {
        let prev = state.prev_phi.as_ref().unwrap();
        let diff = angle_features(&wrapped_diff(phi, prev));
        let enc2 = model
            .enc2
            .as_ref()
            .ok_or_else(|| Error::Protocol("difference mode without a Type-II encoder".into()))?;
        let prev_z = state
            .prev_z
            .as_ref()
            .ok_or_else(|| Error::Protocol("difference mode without a stored latent".into()))?;
        let prev_zq1 = state.prev_zq1.as_ref().unwrap();
        let residual: Vec<f64> = prev_z.iter().zip(prev_zq1).map(|(a, b)| a - b).collect();
        match model.variant {
            Variant::AdNaive => {
                let z = enc2.forward_plain(&diff);
                let (zq, idx) = model.book1.quantize(&z);
                state.prev_z = Some(z);
                state.prev_zq1 = Some(zq);
                FeedbackMessage { indicator: true, fields: to_fields(&idx, model.bits) }
            }
            Variant::AdUnified => {
                let raw = enc2.forward_plain(&diff);
                let z: Vec<f64> = raw.iter().zip(&residual).map(|(a, b)| a + b).collect();
                let (zq, idx) = model.book1.quantize(&z);
                state.prev_z = Some(z);
                state.prev_zq1 = Some(zq);
                FeedbackMessage { indicator: true, fields: to_fields(&idx, model.bits) }
            }
            Variant::AdParallel => {
                let book_diff = model.book1_diff.as_ref().unwrap();
                let book2 = model.book2.as_ref().unwrap();
                let z = enc2.forward_plain(&diff);
                let (zq1, idx1) = book_diff.quantize(&z);
                let (_, idx2) = book2.quantize(&residual);
                let mut fields = to_fields(&idx1, model.bits - model.bits_residual);
                fields.extend(to_fields(&idx2, model.bits_residual));
                state.prev_z = Some(z);
                state.prev_zq1 = Some(zq1);
                FeedbackMessage { indicator: true, fields }
            }
            Variant::Initial => unreachable!("initial variant never selects difference mode"),
        }
    };
    state.prev_phi = Some(phi.clone());
    state.prev_mode = Some(msg.indicator);
    Ok(msg)
}

/// One AP step: reconstruct the flattened angle estimate and advance state.
pub fn ap_step(model: &CodecModel, state: &mut ApState, msg: &FeedbackMessage) -> Result<Vec<f64>> {
    let n = sub_count(model);
    if msg.payload_bits() != model.payload_bits() {
        return Err(Error::Protocol(format!(
            "payload carries {} bits, scheme requires {}",
            msg.payload_bits(),
            model.payload_bits()
        )));
    }
    let recon = if !msg.indicator {
        let idx = fields_to_idx(&msg.fields);
        let zq = model.book1.lookup(&idx);
        let out = model.dec1.forward_plain(&zq);
        state.prev_zq1 = Some(zq);
        state.prev_refined = None;
        out
    } else {
        let dec2 = model
            .dec2
            .as_ref()
            .ok_or_else(|| Error::Protocol("difference mode without a Type-II decoder".into()))?;
        let prev_mode = state
            .prev_mode
            .ok_or_else(|| Error::Protocol("difference mode with no history".into()))?;
        match model.variant {
            Variant::AdNaive | Variant::AdUnified => {
                let prev = state
                    .prev_recon
                    .clone()
                    .ok_or_else(|| Error::Protocol("difference mode with no reconstruction".into()))?;
                let idx = fields_to_idx(&msg.fields);
                let zq = model.book1.lookup(&idx);
                let d = dec2.forward_plain(&zq);
                state.prev_zq1 = Some(zq);
                d.iter().zip(prev).map(|(a, b)| a + b).collect()
            }
            Variant::AdParallel => {
                let book_diff = model.book1_diff.as_ref().unwrap();
                let book2 = model.book2.as_ref().unwrap();
                let idx1 = fields_to_idx(&msg.fields[..n]);
                let idx2 = fields_to_idx(&msg.fields[n..]);
                let zq2_prev = book2.lookup(&idx2);
                let prev_zq1 = state
                    .prev_zq1
                    .as_ref()
                    .ok_or_else(|| Error::Protocol("residual refinement with no stored latent".into()))?;
                let agg: Vec<f64> = prev_zq1.iter().zip(&zq2_prev).map(|(a, b)| a + b).collect();
                let refined_prev = if !prev_mode {
                    model.dec1.forward_plain(&agg)
                } else {
                    let chain = state.prev_refined.as_ref().ok_or_else(|| {
                        Error::Protocol("refinement chain broken: missing earlier estimate".into())
                    })?;
                    let d = dec2.forward_plain(&agg);
                    d.iter().zip(chain).map(|(a, b)| a + b).collect()
                };
                let zq1 = book_diff.lookup(&idx1);
                let d = dec2.forward_plain(&zq1);
                let out: Vec<f64> = d.iter().zip(&refined_prev).map(|(a, b)| a + b).collect();
                state.prev_zq1 = Some(zq1);
                state.prev_refined = Some(refined_prev);
                out
            }
            Variant::Initial => {
                return Err(Error::Protocol("initial scheme received a difference message".into()))
            }
        }
    };
    state.prev_recon = Some(recon.clone());
    state.prev_mode = Some(msg.indicator);
    Ok(recon)
}

/// Outcome of simulating one angle sequence through the feedback loop.
#[derive(Debug, Clone)]
pub struct SequenceRun {
    /// Reconstructed angles per step.
    pub reconstructions: Vec<AngleSet>,
    /// Mode indicator per step.
    pub modes: Vec<bool>,
    /// Total bits on the wire per step (payload + indicator).
    pub message_bits: Vec<usize>,
}

/// Feed a whole angle sequence through STA -> wire bytes -> AP.
pub fn run_sequence(
    model: &CodecModel,
    sel: &SelectionConfig,
    angles: &[AngleSet],
) -> Result<SequenceRun> {
    let mut sta = StaState::default();
    let mut ap = ApState::default();
    let mut out = SequenceRun {
        reconstructions: Vec::with_capacity(angles.len()),
        modes: Vec::with_capacity(angles.len()),
        message_bits: Vec::with_capacity(angles.len()),
    };
    for phi in angles {
        let msg = sta_step(model, sel, &mut sta, phi)?;
        let wire = msg.to_bytes();
        let parsed = FeedbackMessage::from_bytes(&wire, model)?;
        if parsed != msg {
            return Err(Error::Protocol("wire roundtrip altered the message".into()));
        }
        let flat = ap_step(model, &mut ap, &parsed)?;
        out.reconstructions.push(AngleSet::from_flat(phi.n_a, phi.n_c, &flat)?);
        out.modes.push(msg.indicator);
        out.message_bits.push(msg.total_bits());
    }
    Ok(out)
}
