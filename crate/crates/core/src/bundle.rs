//! Versioned binary container for trained artifacts.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "GRASPDL\0" | u32 version | u32 section count | sections...
//! section: u32 name length | name | u8 kind | u64 body length | body
//! matrix body (kind 0): u64 rows | u64 cols | rows*cols f64, row-major
//! text body (kind 1): UTF-8 JSON with sorted keys
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde_json::Value;
use thiserror::Error;

use crate::evaluation::Pipeline;
use crate::features::{Codebook, EncoderConfig};
use crate::imageproc::{MultiChannelImage, NUM_CHANNELS};
use crate::model::LinearModel;
use crate::sparse::Dictionary;
use crate::whitening::Whitener;

pub const MAGIC: [u8; 8] = *b"GRASPDL\0";
pub const FORMAT_VERSION: u32 = 1;

const KIND_MATRIX: u8 = 0;
const KIND_TEXT: u8 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("not an artifact bundle (bad magic)")]
    BadMagic,
    #[error("bundle format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated section `{0}`")]
    TruncatedSection(String),
    #[error("malformed bundle: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One named section.
#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    Matrix(DMatrix<f64>),
    Text(String),
}

/// Trained artifacts plus a provenance manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactBundle {
    pub codebook: Codebook,
    pub whitener: Whitener,
    pub encoder: Option<EncoderConfig>,
    pub model: Option<LinearModel>,
    pub manifest: BTreeMap<String, Value>,
}

impl ArtifactBundle {
    pub fn from_pipeline(p: &Pipeline, manifest: BTreeMap<String, Value>) -> Self {
        Self {
            codebook: p.codebook.clone(),
            whitener: p.whitener.clone(),
            encoder: Some(p.encoder),
            model: Some(p.model.clone()),
            manifest,
        }
    }

    /// The scoring pipeline, if the bundle holds a model and encoder.
    pub fn pipeline(&self) -> Option<Pipeline> {
        Some(Pipeline {
            codebook: self.codebook.clone(),
            whitener: self.whitener.clone(),
            encoder: self.encoder?,
            model: self.model.clone()?,
        })
    }

    fn sections(&self) -> Vec<(String, Section)> {
        let row = |v: &[f64]| Section::Matrix(DMatrix::from_row_slice(1, v.len(), v));
        let mut out = vec![(
            "dictionary".to_string(),
            Section::Matrix(self.codebook.dictionary.atoms().transpose()),
        )];
        if let Some(c) = &self.codebook.centroids {
            out.push(("centroids".into(), Section::Matrix(c.transpose())));
        }
        out.push(("whitener.mean".into(), row(self.whitener.mean().as_slice())));
        out.push((
            "whitener.transform".into(),
            Section::Matrix(self.whitener.transform().clone()),
        ));
        out.push((
            "whitener.params".into(),
            row(&[self.whitener.epsilon(), self.whitener.fitted_on() as f64]),
        ));
        if let Some(m) = &self.model {
            out.push(("model.weights".into(), row(&m.weights)));
            out.push(("model.params".into(), row(&[m.bias, m.c])));
            out.push(("model.feature_mean".into(), row(&m.feature_mean)));
            out.push(("model.feature_scale".into(), row(&m.feature_scale)));
        }
        if let Some(e) = &self.encoder {
            let v = serde_json::to_value(e).expect("encoder config serializes");
            out.push(("encoder".into(), Section::Text(canonical_json(&v))));
        }
        let manifest = Value::Object(self.manifest.clone().into_iter().collect());
        out.push(("manifest".into(), Section::Text(canonical_json(&manifest))));
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_sections(&self.sections())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BundleError> {
        let mut sections: BTreeMap<String, Section> = decode_sections(bytes)?.into_iter().collect();
        let mut take_matrix = |name: &str| -> Result<Option<DMatrix<f64>>, BundleError> {
            match sections.remove(name) {
                None => Ok(None),
                Some(Section::Matrix(m)) => Ok(Some(m)),
                Some(Section::Text(_)) => Err(BundleError::Malformed(format!(
                    "section `{name}` should be a matrix"
                ))),
            }
        };
        let need = |m: Option<DMatrix<f64>>, name: &str| {
            m.ok_or_else(|| BundleError::Malformed(format!("missing section `{name}`")))
        };
        let malformed = |e: &dyn std::fmt::Display| BundleError::Malformed(e.to_string());

        let dict = need(take_matrix("dictionary")?, "dictionary")?;
        let dictionary = Dictionary::new(dict.transpose()).map_err(|e| malformed(&e))?;
        let centroids = take_matrix("centroids")?.map(|c| c.transpose());
        let mean = need(take_matrix("whitener.mean")?, "whitener.mean")?;
        let transform = need(take_matrix("whitener.transform")?, "whitener.transform")?;
        let wp = need(take_matrix("whitener.params")?, "whitener.params")?;
        if wp.len() != 2 {
            return Err(BundleError::Malformed(
                "whitener.params needs 2 values".into(),
            ));
        }
        let whitener = Whitener::from_parts(
            DVector::from_column_slice(mean.as_slice()),
            transform,
            wp[0],
            wp[1] as usize,
        )
        .map_err(|e| malformed(&e))?;
        let model = match take_matrix("model.weights")? {
            None => None,
            Some(w) => {
                let p = need(take_matrix("model.params")?, "model.params")?;
                let mean = need(take_matrix("model.feature_mean")?, "model.feature_mean")?;
                let scale = need(take_matrix("model.feature_scale")?, "model.feature_scale")?;
                if p.len() != 2 || mean.len() != w.len() || scale.len() != w.len() {
                    return Err(BundleError::Malformed("inconsistent model sections".into()));
                }
                Some(LinearModel {
                    weights: w.as_slice().to_vec(),
                    bias: p[0],
                    c: p[1],
                    feature_mean: mean.as_slice().to_vec(),
                    feature_scale: scale.as_slice().to_vec(),
                })
            }
        };
        let mut take_text = |name: &str| -> Result<Option<Value>, BundleError> {
            match sections.remove(name) {
                None => Ok(None),
                Some(Section::Text(t)) => serde_json::from_str(&t)
                    .map(Some)
                    .map_err(|e| malformed(&e)),
                Some(Section::Matrix(_)) => Err(BundleError::Malformed(format!(
                    "section `{name}` should be text"
                ))),
            }
        };
        let encoder = take_text("encoder")?
            .map(serde_json::from_value::<EncoderConfig>)
            .transpose()
            .map_err(|e| malformed(&e))?;
        let manifest = match take_text("manifest")? {
            Some(Value::Object(m)) => m.into_iter().collect(),
            Some(_) => return Err(BundleError::Malformed("manifest must be an object".into())),
            None => BTreeMap::new(),
        };
        if let Some(name) = sections.keys().next() {
            return Err(BundleError::Malformed(format!("unknown section `{name}`")));
        }
        Ok(Self {
            codebook: Codebook {
                dictionary,
                centroids,
            },
            whitener,
            encoder,
            model,
            manifest,
        })
    }
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json(v: &Value) -> String {
    fn sort(v: &Value) -> Value {
        match v {
            Value::Object(m) => {
                let sorted: BTreeMap<&String, Value> =
                    m.iter().map(|(k, v)| (k, sort(v))).collect();
                Value::Object(sorted.into_iter().map(|(k, v)| (k.clone(), v)).collect())
            }
            Value::Array(a) => Value::Array(a.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    serde_json::to_string(&sort(v)).expect("json values serialize")
}

pub fn encode_sections(sections: &[(String, Section)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (name, section) in sections {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        match section {
            Section::Matrix(m) => {
                out.push(KIND_MATRIX);
                out.extend_from_slice(&(16 + 8 * m.len() as u64).to_le_bytes());
                out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
                out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
                for r in 0..m.nrows() {
                    for c in 0..m.ncols() {
                        out.extend_from_slice(&m[(r, c)].to_le_bytes());
                    }
                }
            }
            Section::Text(t) => {
                out.push(KIND_TEXT);
                out.extend_from_slice(&(t.len() as u64).to_le_bytes());
                out.extend_from_slice(t.as_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8], BundleError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| BundleError::TruncatedSection(section.to_string()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, section: &str) -> Result<u32, BundleError> {
        Ok(u32::from_le_bytes(
            self.take(4, section)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, section: &str) -> Result<u64, BundleError> {
        Ok(u64::from_le_bytes(
            self.take(8, section)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode_sections(bytes: &[u8]) -> Result<Vec<(String, Section)>, BundleError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(BundleError::BadMagic);
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let version = r.u32("header")?;
    if version != FORMAT_VERSION {
        return Err(BundleError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = r.u32("header")?;
    let mut out = Vec::new();
    for i in 0..count {
        let placeholder = format!("#{i}");
        let name_len = r.u32(&placeholder)? as usize;
        let name = String::from_utf8(r.take(name_len, &placeholder)?.to_vec())
            .map_err(|_| BundleError::Malformed(format!("section {i} name is not UTF-8")))?;
        let kind = r.take(1, &name)?[0];
        let len = usize::try_from(r.u64(&name)?)
            .map_err(|_| BundleError::TruncatedSection(name.clone()))?;
        let body = r.take(len, &name)?;
        let section =
            match kind {
                KIND_MATRIX => {
                    let mut b = Reader {
                        bytes: body,
                        pos: 0,
                    };
                    let rows = b.u64(&name)? as usize;
                    let cols = b.u64(&name)? as usize;
                    let n = rows.checked_mul(cols).ok_or_else(|| {
                        BundleError::Malformed(format!("section `{name}` size overflows"))
                    })?;
                    if len != 16 + 8 * n {
                        return Err(BundleError::TruncatedSection(name));
                    }
                    let data: Vec<f64> = body[16..]
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    Section::Matrix(DMatrix::from_row_slice(rows, cols, &data))
                }
                KIND_TEXT => Section::Text(String::from_utf8(body.to_vec()).map_err(|_| {
                    BundleError::Malformed(format!("section `{name}` is not UTF-8"))
                })?),
                k => {
                    return Err(BundleError::Malformed(format!(
                        "section `{name}` has unknown kind {k}"
                    )))
                }
            };
        out.push((name, section));
    }
    if r.pos != bytes.len() {
        return Err(BundleError::Malformed(
            "trailing bytes after last section".into(),
        ));
    }
    Ok(out)
}

pub fn save_bundle(bundle: &ArtifactBundle, path: &Path) -> Result<(), BundleError> {
    fs::write(path, bundle.to_bytes()).map_err(|source| BundleError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_bundle(path: &Path) -> Result<ArtifactBundle, BundleError> {
    let bytes = fs::read(path).map_err(|source| BundleError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ArtifactBundle::from_bytes(&bytes)
}

/// Cached 8-channel image of one scene, tagged with the scene's content hash.
pub fn channel_cache_bytes(img: &MultiChannelImage, scene_id: &str, scene_hash: &str) -> Vec<u8> {
    let pixels = img.height() * img.width();
    let mask: Vec<f64> = img
        .mask()
        .iter()
        .map(|&m| if m { 1.0 } else { 0.0 })
        .collect();
    let source = serde_json::json!({
        "scene": scene_id,
        "hash": scene_hash,
        "height": img.height(),
        "width": img.width(),
    });
    encode_sections(&[
        (
            "channels".into(),
            Section::Matrix(DMatrix::from_row_slice(pixels, NUM_CHANNELS, img.data())),
        ),
        (
            "mask".into(),
            Section::Matrix(DMatrix::from_row_slice(pixels, NUM_CHANNELS, &mask)),
        ),
        ("source".into(), Section::Text(canonical_json(&source))),
    ])
}

/// Decode a channel cache. Returns `None` when it was made from a scene with
/// a different content hash.
pub fn channel_cache_from_bytes(
    bytes: &[u8],
    scene_hash: &str,
) -> Result<Option<MultiChannelImage>, BundleError> {
    let sections: BTreeMap<String, Section> = decode_sections(bytes)?.into_iter().collect();
    let malformed = |m: &str| BundleError::Malformed(format!("channel cache: {m}"));
    let Some(Section::Text(source)) = sections.get("source") else {
        return Err(malformed("missing source section"));
    };
    let source: Value = serde_json::from_str(source).map_err(|e| malformed(&e.to_string()))?;
    if source["hash"].as_str() != Some(scene_hash) {
        return Ok(None);
    }
    let dims = |k: &str| {
        source[k]
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| malformed(k))
    };
    let (h, w) = (dims("height")?, dims("width")?);
    let (Some(Section::Matrix(data)), Some(Section::Matrix(mask))) =
        (sections.get("channels"), sections.get("mask"))
    else {
        return Err(malformed("missing channel sections"));
    };
    if data.shape() != (h * w, NUM_CHANNELS) || mask.shape() != data.shape() {
        return Err(malformed("shape does not match the recorded size"));
    }
    // row-major flattening of an (h*w) x 8 matrix is the pixel-major layout
    let flat = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
    let mask: Vec<bool> = flat(mask).into_iter().map(|v| v != 0.0).collect();
    Ok(Some(MultiChannelImage::from_parts(h, w, flat(data), mask)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::EncoderKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(d: usize, with_model: bool) -> ArtifactBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = crate::dataset::PATCH_LEN;
        let raw = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
        let f = 8 * d;
        let mut manifest = BTreeMap::new();
        manifest.insert("seed".to_string(), Value::from(7));
        manifest.insert("command".to_string(), Value::from("learn-dict"));
        ArtifactBundle {
            codebook: Codebook {
                dictionary: Dictionary::from_unnormalized(raw.clone()).unwrap(),
                centroids: Some(raw),
            },
            whitener: Whitener::identity(n),
            encoder: Some(EncoderConfig::new(EncoderKind::Sc, 1.5)),
            model: with_model.then(|| LinearModel {
                weights: (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                bias: 0.25,
                c: 10.0,
                feature_mean: vec![0.5; f],
                feature_scale: vec![2.0; f],
            }),
            manifest,
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for with_model in [false, true] {
            let b = sample(12, with_model);
            let bytes = b.to_bytes();
            let back = ArtifactBundle::from_bytes(&bytes).unwrap();
            assert_eq!(back, b);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn dictionary_payload_size() {
        let b = sample(300, false);
        let sections = decode_sections(&b.to_bytes()).unwrap();
        let (_, dict) = &sections[0];
        let Section::Matrix(m) = dict else { panic!() };
        assert_eq!((m.nrows(), m.ncols()), (300, 288));
        let encoded = encode_sections(&sections[..1]);
        // header 16, name length 4 + "dictionary" 10, kind 1, length 8, dims 16
        assert_eq!(encoded.len() - (16 + 4 + 10 + 1 + 8 + 16), 300 * 288 * 8);
    }

    #[test]
    fn header_errors() {
        let mut bytes = sample(4, false).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            ArtifactBundle::from_bytes(&bad),
            Err(BundleError::BadMagic)
        ));
        bytes[8] = 2;
        assert!(matches!(
            ArtifactBundle::from_bytes(&bytes),
            Err(BundleError::VersionMismatch {
                found: 2,
                expected: 1
            })
        ));
        let good = sample(4, false).to_bytes();
        assert!(matches!(
            ArtifactBundle::from_bytes(&good[..good.len() - 3]),
            Err(BundleError::TruncatedSection(_))
        ));
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let v: Value =
            serde_json::from_str(r#"{"b":1,"a":{"d":2,"c":[3,{"f":4,"e":5}]}}"#).unwrap();
        assert_eq!(
            canonical_json(&v),
            r#"{"a":{"c":[3,{"e":5,"f":4}],"d":2},"b":1}"#
        );
    }

    #[test]
    fn channel_cache_round_trip() {
        let scene = crate::synth::generate(&crate::synth::SynthConfig::detection(1, 4)).remove(0);
        let img = crate::imageproc::derive_channels(&scene);
        let bytes = channel_cache_bytes(&img, &scene.id, "abc");
        assert_eq!(channel_cache_from_bytes(&bytes, "abc").unwrap(), Some(img));
        assert_eq!(channel_cache_from_bytes(&bytes, "other").unwrap(), None);
    }
}
