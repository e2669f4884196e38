//! Single-file model container.
//!
//! Layout: a UTF-8 header of `[section]` blocks ending in `[end]` and a
//! newline, followed by every parameter array as little-endian fp32. The
//! `[tensors]` manifest lists `name shape offset` with offsets in bytes from
//! the first byte after the header.
//!
//! ```text
//! SRLARCHIVE 1
//! [config]
//! hidden = 350
//! ...
//! [meta]
//! seed = 1
//! best_epoch = 12
//! dev_f1 = 0.8123
//! [vocab words 3]
//! <pad>
//! ...
//! [tensors 41]
//! word_emb 3x100 0
//! ...
//! [end]
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{Config, TrainConfig};
use crate::corpus::{Vocab, Vocabulary};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const ARCHIVE_MAGIC: &str = "SRLARCHIVE";
pub const ARCHIVE_VERSION: u32 = 1;

const VOCAB_NAMES: [&str; 4] = ["words", "pos", "chars", "roles"];

/// Training provenance stored next to the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveMeta {
    pub seed: u64,
    pub best_epoch: usize,
    pub dev_f1: f64,
}

#[derive(Clone, Debug)]
pub struct ModelArchive {
    pub config: Config,
    pub meta: ArchiveMeta,
    pub vocab: Vocabulary,
    /// `(name, shape, values)` in parameter registration order.
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

fn escape(item: &str) -> String {
    let mut out = String::with_capacity(item.len() + 1);
    // A leading bracket would read as a section line.
    if item.starts_with('[') {
        out.push('\\');
    }
    for c in item.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(line: &str) -> Result<String> {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('[') => out.push('['),
            other => return Err(Error::Archive(format!("bad escape \\{other:?} in {line:?}"))),
        }
    }
    Ok(out)
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

impl ModelArchive {
    /// Snapshot of `model`; values are rounded to fp32.
    pub fn from_model<T: Scalar>(model: &Model<T>, train: &TrainConfig, meta: ArchiveMeta) -> Self {
        let tensors = model
            .params
            .iter()
            .map(|(_, p)| {
                let values = p.value.data().iter().map(|x| x.as_f64() as f32).collect();
                (p.name.clone(), p.value.shape().to_vec(), values)
            })
            .collect();
        ModelArchive {
            config: Config {
                model: model.config.clone(),
                train: train.clone(),
            },
            meta,
            vocab: model.vocab.clone(),
            tensors,
        }
    }

    /// Rebuilds the model. Every registered parameter must be present with
    /// its registered shape, and nothing else may be.
    pub fn to_model<T: Scalar>(&self) -> Result<Model<T>> {
        let mut model = Model::<T>::new(self.config.model.clone(), self.vocab.clone(), self.meta.seed, None)?;
        if model.params.len() != self.tensors.len() {
            return Err(Error::Archive(format!(
                "{} tensors stored, model has {}",
                self.tensors.len(),
                model.params.len()
            )));
        }
        for (name, shape, values) in &self.tensors {
            let id = model
                .params
                .find(name)
                .ok_or_else(|| Error::Archive(format!("unknown tensor {name}")))?;
            let slot = model.params.value_mut(id);
            if slot.shape() != shape.as_slice() {
                return Err(Error::Archive(format!(
                    "tensor {name} has shape {}, model expects {}",
                    shape_text(shape),
                    shape_text(slot.shape())
                )));
            }
            *slot = Tensor::new(shape, values.iter().map(|&x| T::of(x as f64)).collect())?;
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = String::new();
        let _ = writeln!(head, "{ARCHIVE_MAGIC} {ARCHIVE_VERSION}");
        head.push_str("[config]\n");
        head.push_str(&self.config.to_text());
        head.push_str("[meta]\n");
        let _ = writeln!(head, "seed = {}", self.meta.seed);
        let _ = writeln!(head, "best_epoch = {}", self.meta.best_epoch);
        let _ = writeln!(head, "dev_f1 = {}", self.meta.dev_f1);
        let v = &self.vocab;
        for (name, table) in VOCAB_NAMES.iter().zip([&v.words, &v.pos, &v.chars, &v.roles]) {
            let _ = writeln!(head, "[vocab {name} {}]", table.len());
            for item in table.items() {
                head.push_str(&escape(item));
                head.push('\n');
            }
        }
        let _ = writeln!(head, "[tensors {}]", self.tensors.len());
        let mut offset = 0usize;
        for (name, shape, values) in &self.tensors {
            let _ = writeln!(head, "{name} {} {offset}", shape_text(shape));
            offset += 4 * values.len();
        }
        head.push_str("[end]\n");

        let mut out = head.into_bytes();
        out.reserve(offset);
        for (_, _, values) in &self.tensors {
            for x in values {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let first_end = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
        let first = std::str::from_utf8(&bytes[..first_end]).map_err(|_| Error::Archive("header is not UTF-8".into()))?;
        match first.split_once(' ') {
            Some((ARCHIVE_MAGIC, v)) if v.trim() == ARCHIVE_VERSION.to_string() => {}
            Some((ARCHIVE_MAGIC, v)) => {
                return Err(Error::ArchiveVersion {
                    found: v.trim().to_string(),
                    expected: ARCHIVE_VERSION,
                })
            }
            _ => return Err(Error::Archive("missing archive magic".into())),
        }
        let marker = b"\n[end]\n";
        let end = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| Error::Archive("header has no [end] marker".into()))?;
        let data = &bytes[end + marker.len()..];
        let head = std::str::from_utf8(&bytes[first_end + 1..end + 1])
            .map_err(|_| Error::Archive("header is not UTF-8".into()))?;
        let mut lines = head.lines().peekable();

        let expect = |line: Option<&str>, want: &str| -> Result<()> {
            match line {
                Some(l) if l == want => Ok(()),
                other => Err(Error::Archive(format!("expected {want}, found {other:?}"))),
            }
        };
        expect(lines.next(), "[config]")?;
        let mut config_text = String::new();
        while let Some(l) = lines.next_if(|l| !l.starts_with('[')) {
            config_text.push_str(l);
            config_text.push('\n');
        }
        let config = Config::parse(&config_text)?;

        expect(lines.next(), "[meta]")?;
        let mut meta = ArchiveMeta {
            seed: 0,
            best_epoch: 0,
            dev_f1: 0.0,
        };
        while let Some(l) = lines.next_if(|l| !l.starts_with('[')) {
            let (k, v) = l
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Archive(format!("bad meta line {l:?}")))?;
            let bad = || Error::Archive(format!("bad meta value {l:?}"));
            match k {
                "seed" => meta.seed = v.parse().map_err(|_| bad())?,
                "best_epoch" => meta.best_epoch = v.parse().map_err(|_| bad())?,
                "dev_f1" => meta.dev_f1 = v.parse().map_err(|_| bad())?,
                _ => return Err(Error::Archive(format!("unknown meta key {k}"))),
            }
        }

        let mut tables = Vec::with_capacity(4);
        for name in VOCAB_NAMES {
            let header = lines.next().unwrap_or("");
            let count = header
                .strip_prefix(&format!("[vocab {name} "))
                .and_then(|r| r.strip_suffix(']'))
                .and_then(|c| c.parse::<usize>().ok())
                .ok_or_else(|| Error::Archive(format!("expected [vocab {name} N], found {header:?}")))?;
            let mut items = Vec::with_capacity(count);
            for _ in 0..count {
                let l = lines
                    .next()
                    .ok_or_else(|| Error::Archive(format!("vocab {name} is truncated")))?;
                items.push(unescape(l)?);
            }
            tables.push(Vocab::from_items(items)?);
        }
        let roles = tables.pop().unwrap_or_default();
        let chars = tables.pop().unwrap_or_default();
        let pos = tables.pop().unwrap_or_default();
        let words = tables.pop().unwrap_or_default();
        let vocab = Vocabulary {
            words,
            pos,
            chars,
            roles,
        };

        let header = lines.next().unwrap_or("");
        let count = header
            .strip_prefix("[tensors ")
            .and_then(|r| r.strip_suffix(']'))
            .and_then(|c| c.parse::<usize>().ok())
            .ok_or_else(|| Error::Archive(format!("expected [tensors N], found {header:?}")))?;
        let mut tensors = Vec::with_capacity(count);
        let mut expected_offset = 0usize;
        for _ in 0..count {
            let l = lines.next().ok_or_else(|| Error::Archive("tensor manifest is truncated".into()))?;
            let fields: Vec<&str> = l.split(' ').collect();
            let [name, shape, offset] = fields[..] else {
                return Err(Error::Archive(format!("bad manifest line {l:?}")));
            };
            let bad = || Error::Archive(format!("bad manifest line {l:?}"));
            let shape: Vec<usize> = shape
                .split('x')
                .map(|d| d.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            let offset: usize = offset.parse().map_err(|_| bad())?;
            if offset != expected_offset {
                return Err(Error::Archive(format!("tensor {name} at offset {offset}, expected {expected_offset}")));
            }
            let len: usize = shape.iter().product();
            let raw = data
                .get(offset..offset + 4 * len)
                .ok_or_else(|| Error::Archive(format!("tensor {name} runs past the end of the file")))?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name.to_string(), shape, values));
            expected_offset += 4 * len;
        }
        if lines.next().is_some() {
            return Err(Error::Archive("unexpected lines after the tensor manifest".into()));
        }
        if data.len() != expected_offset {
            return Err(Error::Archive(format!(
                "{} data bytes, manifest describes {expected_offset}",
                data.len()
            )));
        }
        Ok(ModelArchive {
            config,
            meta,
            vocab,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::corpus::{build_vocab, Sentence, Token, Triplet};

    fn model() -> Model<f32> {
        let mut s = Sentence::default();
        for (i, f) in ["ab\\c", "x y", "猫"].iter().enumerate() {
            s.tokens.push(Token::new(i + 1, f, "NN"));
        }
        s.gold.insert(Triplet::new(1, 2, "A0"));
        let vocab = build_vocab(&[s], 1).unwrap();
        Model::new(ModelConfig::tiny(), vocab, 9, None).unwrap()
    }

    fn meta() -> ArchiveMeta {
        ArchiveMeta {
            seed: 9,
            best_epoch: 3,
            dev_f1: 0.25,
        }
    }

    #[test]
    fn bytes_round_trip() {
        let m = model();
        let a = ModelArchive::from_model(&m, &TrainConfig::default(), meta());
        let b = ModelArchive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(a.config, b.config);
        assert_eq!(a.meta, b.meta);
        assert_eq!(a.vocab, b.vocab);
        assert_eq!(a.tensors, b.tensors);
        let back: Model<f32> = b.to_model().unwrap();
        for (id, p) in m.params.iter() {
            assert_eq!(p.value, *back.params.value(id), "{}", p.name);
        }
    }

    #[test]
    fn escapes_survive() {
        for item in ["a\\b", "x\ny", "\\n", "plain", "[end]", "a[b"] {
            assert_eq!(unescape(&escape(item)).unwrap(), item);
        }
    }

    #[test]
    fn other_versions_are_rejected() {
        let a = ModelArchive::from_model(&model(), &TrainConfig::default(), meta());
        let mut bytes = a.to_bytes();
        let text = format!("{ARCHIVE_MAGIC} {ARCHIVE_VERSION}");
        let bumped = format!("{ARCHIVE_MAGIC} {}", ARCHIVE_VERSION + 1);
        bytes.splice(0..text.len(), bumped.bytes());
        match ModelArchive::from_bytes(&bytes) {
            Err(Error::ArchiveVersion { found, expected }) => {
                assert_eq!(found, "2");
                assert_eq!(expected, ARCHIVE_VERSION);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_data_is_rejected() {
        let a = ModelArchive::from_model(&model(), &TrainConfig::default(), meta());
        let mut bytes = a.to_bytes();
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(ModelArchive::from_bytes(&bytes), Err(Error::Archive(_))));
    }
}
