//! The ".cfm" model container: a JSON manifest (geometry, layer dims, and a
//! named tensor table with byte offsets) followed by one raw little-endian
//! float32 blob holding every parameter.
//!
//! Layout: 4-byte magic, u16 version, u32 manifest length, manifest JSON,
//! blob. Parameters are stored at float32 precision: the first save rounds
//! them once, after which save/load cycles are bit-exact. Sections other
//! than the known ones ("codec", "refiner") are skipped with a warning so
//! future writers stay readable.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::refine::RefinerModel;
use crate::vqcodec::{Codebook, CodecGeometry, CodecModel, Mlp, Variant};
use crate::{Error, Result};

const MAGIC: [u8; 4] = *b"CFM0";
const VERSION: u16 = 1;

/// Everything one trained experiment persists: the feedback codec plus an
/// optional refinement network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub codec: CodecModel,
    pub refiner: Option<RefinerModel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SectionEntry {
    name: String,
    meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    sections: Vec<SectionEntry>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CodecMeta {
    variant: Variant,
    geom: CodecGeometry,
    bits: u32,
    bits_residual: u32,
    enc1: Vec<usize>,
    dec1: Vec<usize>,
    enc2: Option<Vec<usize>>,
    dec2: Option<Vec<usize>>,
    book1: BookMeta,
    book1_diff: Option<BookMeta>,
    book2: Option<BookMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BookMeta {
    dim: usize,
    bits: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct RefinerMeta {
    t_len: usize,
    n_a: usize,
    n_c: usize,
    channels: Vec<usize>,
}

struct BlobWriter {
    tensors: Vec<TensorEntry>,
    blob: Vec<u8>,
}

impl BlobWriter {
    fn new() -> Self {
        Self { tensors: Vec::new(), blob: Vec::new() }
    }

    fn push(&mut self, name: &str, shape: &[usize], values: &[f64]) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len(), "{name}");
        let offset = self.blob.len() as u64;
        for &v in values {
            self.blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.tensors.push(TensorEntry { name: name.into(), shape: shape.to_vec(), offset });
    }

    fn push_mlp(&mut self, prefix: &str, mlp: &Mlp) {
        for (i, win) in mlp.dims.windows(2).enumerate() {
            self.push(&format!("{prefix}.w{i}"), &[win[1], win[0]], &mlp.weights[i]);
            self.push(&format!("{prefix}.b{i}"), &[win[1]], &mlp.biases[i]);
        }
    }

    fn push_book(&mut self, name: &str, book: &Codebook) {
        self.push(name, &[book.len(), book.dim], &book.words);
    }
}

struct BlobReader<'a> {
    blob: &'a [u8],
    map: HashMap<&'a str, &'a TensorEntry>,
}

impl<'a> BlobReader<'a> {
    fn new(blob: &'a [u8], tensors: &'a [TensorEntry]) -> Self {
        let map = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        Self { blob, map }
    }

    fn tensor(&self, name: &str, expect_shape: &[usize]) -> Result<Vec<f64>> {
        let entry = self
            .map
            .get(name)
            .ok_or_else(|| Error::Container(format!("manifest lists no tensor '{name}'")))?;
        if entry.shape != expect_shape {
            return Err(Error::Container(format!(
                "tensor '{name}' has shape {:?}, metadata requires {:?}",
                entry.shape, expect_shape
            )));
        }
        let count: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start
            .checked_add(count * 4)
            .ok_or_else(|| Error::Container(format!("tensor '{name}' offset overflow")))?;
        if end > self.blob.len() {
            return Err(Error::Truncated(format!(
                "tensor '{name}' needs bytes {start}..{end}, blob holds {}",
                self.blob.len()
            )));
        }
        let mut out = Vec::with_capacity(count);
        let mut cur = &self.blob[start..end];
        for _ in 0..count {
            out.push(cur.read_f32::<LittleEndian>().expect("length checked") as f64);
        }
        Ok(out)
    }

    fn mlp(&self, prefix: &str, dims: &[usize]) -> Result<Mlp> {
        if dims.len() < 2 {
            return Err(Error::Container(format!("network '{prefix}' has fewer than two dims")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, win) in dims.windows(2).enumerate() {
            weights.push(self.tensor(&format!("{prefix}.w{i}"), &[win[1], win[0]])?);
            biases.push(self.tensor(&format!("{prefix}.b{i}"), &[win[1]])?);
        }
        Ok(Mlp { dims: dims.to_vec(), weights, biases })
    }

    fn book(&self, name: &str, meta: &BookMeta) -> Result<Codebook> {
        if meta.bits == 0 || meta.bits > 16 {
            return Err(Error::Container(format!("codebook '{name}' bits {} out of range", meta.bits)));
        }
        let words = self.tensor(name, &[1usize << meta.bits, meta.dim])?;
        Ok(Codebook { dim: meta.dim, bits: meta.bits, words })
    }
}

/// Serialize to the container byte format.
pub fn to_bytes(file: &ModelFile) -> Result<Vec<u8>> {
    file.codec.validate()?;
    if let Some(r) = &file.refiner {
        r.validate()?;
    }
    let mut w = BlobWriter::new();
    let codec = &file.codec;
    w.push_mlp("codec.enc1", &codec.enc1);
    w.push_mlp("codec.dec1", &codec.dec1);
    if let Some(m) = &codec.enc2 {
        w.push_mlp("codec.enc2", m);
    }
    if let Some(m) = &codec.dec2 {
        w.push_mlp("codec.dec2", m);
    }
    w.push_book("codec.book1", &codec.book1);
    if let Some(b) = &codec.book1_diff {
        w.push_book("codec.book1_diff", b);
    }
    if let Some(b) = &codec.book2 {
        w.push_book("codec.book2", b);
    }
    let book_meta = |b: &Codebook| BookMeta { dim: b.dim, bits: b.bits };
    let mut sections = vec![SectionEntry {
        name: "codec".into(),
        meta: serde_json::to_value(CodecMeta {
            variant: codec.variant,
            geom: codec.geom,
            bits: codec.bits,
            bits_residual: codec.bits_residual,
            enc1: codec.enc1.dims.clone(),
            dec1: codec.dec1.dims.clone(),
            enc2: codec.enc2.as_ref().map(|m| m.dims.clone()),
            dec2: codec.dec2.as_ref().map(|m| m.dims.clone()),
            book1: book_meta(&codec.book1),
            book1_diff: codec.book1_diff.as_ref().map(&book_meta),
            book2: codec.book2.as_ref().map(&book_meta),
        })
        .map_err(|e| Error::Container(format!("codec metadata: {e}")))?,
    }];
    if let Some(r) = &file.refiner {
        for (i, (wt, bs)) in r.weights.iter().zip(&r.biases).enumerate() {
            let (c_in, c_out) = (r.channels[i], r.channels[i + 1]);
            w.push(&format!("refiner.w{i}"), &[c_out, c_in, 3, 3], wt);
            w.push(&format!("refiner.b{i}"), &[c_out], bs);
        }
        sections.push(SectionEntry {
            name: "refiner".into(),
            meta: serde_json::to_value(RefinerMeta {
                t_len: r.t_len,
                n_a: r.n_a,
                n_c: r.n_c,
                channels: r.channels.clone(),
            })
            .map_err(|e| Error::Container(format!("refiner metadata: {e}")))?,
        });
    }
    let manifest = serde_json::to_vec(&Manifest { sections, tensors: w.tensors })
        .map_err(|e| Error::Container(format!("manifest: {e}")))?;
    let mut out = Vec::with_capacity(4 + 2 + 4 + manifest.len() + w.blob.len());
    out.extend_from_slice(&MAGIC);
    out.write_u16::<LittleEndian>(VERSION)?;
    out.write_u32::<LittleEndian>(manifest.len() as u32)?;
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&w.blob);
    Ok(out)
}

/// Parse the container byte format.
pub fn from_bytes(bytes: &[u8]) -> Result<ModelFile> {
    let mut cur = bytes;
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| Error::Truncated("missing magic".into()))?;
    if magic != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found: magic });
    }
    let version = cur.read_u16::<LittleEndian>().map_err(|_| Error::Truncated("missing version".into()))?;
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let mlen = cur.read_u32::<LittleEndian>().map_err(|_| Error::Truncated("missing manifest length".into()))? as usize;
    if cur.len() < mlen {
        return Err(Error::Truncated(format!(
            "manifest claims {mlen} bytes, {} remain",
            cur.len()
        )));
    }
    let (mbytes, blob) = cur.split_at(mlen);
    let manifest: Manifest = serde_json::from_slice(mbytes)
        .map_err(|e| Error::Container(format!("manifest parse: {e}")))?;
    let reader = BlobReader::new(blob, &manifest.tensors);

    let mut codec: Option<CodecModel> = None;
    let mut refiner: Option<RefinerModel> = None;
    for section in &manifest.sections {
        match section.name.as_str() {
            "codec" => {
                let meta: CodecMeta = serde_json::from_value(section.meta.clone())
                    .map_err(|e| Error::Container(format!("codec metadata: {e}")))?;
                codec = Some(CodecModel {
                    variant: meta.variant,
                    geom: meta.geom,
                    bits: meta.bits,
                    bits_residual: meta.bits_residual,
                    enc1: reader.mlp("codec.enc1", &meta.enc1)?,
                    dec1: reader.mlp("codec.dec1", &meta.dec1)?,
                    enc2: meta.enc2.as_deref().map(|d| reader.mlp("codec.enc2", d)).transpose()?,
                    dec2: meta.dec2.as_deref().map(|d| reader.mlp("codec.dec2", d)).transpose()?,
                    book1: reader.book("codec.book1", &meta.book1)?,
                    book1_diff: meta
                        .book1_diff
                        .as_ref()
                        .map(|b| reader.book("codec.book1_diff", b))
                        .transpose()?,
                    book2: meta.book2.as_ref().map(|b| reader.book("codec.book2", b)).transpose()?,
                });
            }
            "refiner" => {
                let meta: RefinerMeta = serde_json::from_value(section.meta.clone())
                    .map_err(|e| Error::Container(format!("refiner metadata: {e}")))?;
                if meta.channels.len() < 2 {
                    return Err(Error::Container("refiner channel list too short".into()));
                }
                let layers = meta.channels.len() - 1;
                let mut weights = Vec::with_capacity(layers);
                let mut biases = Vec::with_capacity(layers);
                for i in 0..layers {
                    let (c_in, c_out) = (meta.channels[i], meta.channels[i + 1]);
                    weights.push(reader.tensor(&format!("refiner.w{i}"), &[c_out, c_in, 3, 3])?);
                    biases.push(reader.tensor(&format!("refiner.b{i}"), &[c_out])?);
                }
                refiner = Some(RefinerModel {
                    t_len: meta.t_len,
                    n_a: meta.n_a,
                    n_c: meta.n_c,
                    channels: meta.channels,
                    weights,
                    biases,
                });
            }
            other => {
                eprintln!("warning: ignoring unknown model section '{other}'");
            }
        }
    }
    let codec = codec.ok_or_else(|| Error::Container("container has no codec section".into()))?;
    codec.validate()?;
    if let Some(r) = &refiner {
        r.validate()?;
    }
    Ok(ModelFile { codec, refiner })
}

/// Write a ".cfm" file.
pub fn save_model(path: &Path, file: &ModelFile) -> Result<()> {
    let bytes = to_bytes(file)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&bytes)?;
    Ok(())
}

/// Read a ".cfm" file.
pub fn load_model(path: &Path) -> Result<ModelFile> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_file(with_refiner: bool) -> ModelFile {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let geom = CodecGeometry { n_a: 2, n_c: 3, n_sub: 2, dim: 3 };
        let codec = CodecModel {
            variant: Variant::AdParallel,
            geom,
            bits: 3,
            bits_residual: 1,
            enc1: Mlp::new_random(&[12, 10, 6], &mut rng),
            dec1: Mlp::new_random(&[6, 10, 12], &mut rng),
            enc2: Some(Mlp::new_random(&[12, 10, 6], &mut rng)),
            dec2: Some(Mlp::new_random(&[6, 10, 12], &mut rng)),
            book1: Codebook::new_random(3, 3, &mut rng).unwrap(),
            book1_diff: Some(Codebook::new_random(3, 2, &mut rng).unwrap()),
            book2: Some(Codebook::new_random(3, 1, &mut rng).unwrap()),
        };
        codec.validate().unwrap();
        let refiner = with_refiner
            .then(|| RefinerModel::new_random(3, 2, 3, &[8], &mut rng).unwrap());
        ModelFile { codec, refiner }
    }

    #[test]
    fn roundtrip_is_exact_after_float32_settling() {
        for with_refiner in [false, true] {
            let original = sample_file(with_refiner);
            let once = from_bytes(&to_bytes(&original).unwrap()).unwrap();
            // First pass rounds f64 parameters to f32 storage...
            let close = original
                .codec
                .enc1
                .weights
                .iter()
                .flatten()
                .zip(once.codec.enc1.weights.iter().flatten())
                .all(|(a, b)| (a - b).abs() < 1e-6);
            assert!(close, "f32 rounding must stay within f32 epsilon");
            // ...after which the cycle is bit-exact.
            let twice = from_bytes(&to_bytes(&once).unwrap()).unwrap();
            assert_eq!(once, twice);
            assert_eq!(once.refiner.is_some(), with_refiner);
        }
    }

    #[test]
    fn file_roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.cfm");
        let file = sample_file(true);
        save_model(&path, &file).unwrap();
        let once = load_model(&path).unwrap();
        save_model(&path, &once).unwrap();
        assert_eq!(load_model(&path).unwrap(), once);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = to_bytes(&sample_file(false)).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] ^= 0xff;
        assert!(matches!(from_bytes(&bad_magic), Err(Error::BadMagic { .. })));

        let mut bad_version = bytes.clone();
        bad_version[4] = 0x7f;
        assert!(matches!(from_bytes(&bad_version), Err(Error::BadVersion(_))));

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(from_bytes(truncated), Err(Error::Truncated(_))));

        let mut bad_manifest = bytes.clone();
        bad_manifest[12] = b'!';
        assert!(from_bytes(&bad_manifest).is_err());
    }

    #[test]
    fn unknown_sections_are_skipped() {
        let file = sample_file(false);
        let bytes = to_bytes(&file).unwrap();
        // Rebuild the container with an extra section the reader has never
        // heard of; it must load and ignore it.
        let mlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let mut manifest: Manifest = serde_json::from_slice(&bytes[10..10 + mlen]).unwrap();
        manifest.sections.push(SectionEntry {
            name: "experimental".into(),
            meta: serde_json::json!({"answer": 42}),
        });
        let mjson = serde_json::to_vec(&manifest).unwrap();
        let mut rebuilt = Vec::new();
        rebuilt.extend_from_slice(&bytes[..6]);
        rebuilt.extend_from_slice(&(mjson.len() as u32).to_le_bytes());
        rebuilt.extend_from_slice(&mjson);
        rebuilt.extend_from_slice(&bytes[10 + mlen..]);
        let loaded = from_bytes(&rebuilt).unwrap();
        let expect = from_bytes(&bytes).unwrap();
        assert_eq!(loaded, expect);
    }

    #[test]
    fn missing_tensor_is_reported() {
        let bytes = to_bytes(&sample_file(false)).unwrap();
        let mlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let mut manifest: Manifest = serde_json::from_slice(&bytes[10..10 + mlen]).unwrap();
        manifest.tensors.retain(|t| t.name != "codec.book1");
        let mjson = serde_json::to_vec(&manifest).unwrap();
        let mut rebuilt = Vec::new();
        rebuilt.extend_from_slice(&bytes[..6]);
        rebuilt.extend_from_slice(&(mjson.len() as u32).to_le_bytes());
        rebuilt.extend_from_slice(&mjson);
        rebuilt.extend_from_slice(&bytes[10 + mlen..]);
        let err = from_bytes(&rebuilt).unwrap_err();
        assert!(err.to_string().contains("codec.book1"), "got: {err}");
    }
}
