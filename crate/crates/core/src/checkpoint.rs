//! Single-file model container shared by every model kind.
//!
//! Layout: the magic bytes `HICDCKPT`, a little-endian `u32` format
//! version, a `u64` manifest length, the JSON manifest, then each array of
//! the manifest as little-endian `f32` values in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baseline::{BrConfig, BrModel, LabelWeights, NgramVocabulary};
use crate::classifier::{ClassifierConfig, ClassifierParams, Variant};
use crate::data::LabelSpace;
use crate::embedding::{EmbeddingTable, UNK_ID};
use crate::error::{Error, Result};
use crate::numcore::{ParamSet, Tensor2};
use crate::tagger::{TaggerConfig, TaggerParams};

pub const MAGIC: &[u8; 8] = b"HICDCKPT";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

const EMBEDDING_ARRAY: &str = "embedding.vectors";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Tagger,
    Classifier,
    BinaryRelevance,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Tagger => "tagger",
            ModelKind::Classifier => "classifier",
            ModelKind::BinaryRelevance => "binary-relevance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ArrayMeta {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingInfo {
    /// Hash of the table training started from.
    pub base_hash: String,
    /// Hash of the table inference uses (differs after fine-tuning).
    pub hash: String,
    pub dim: usize,
    /// Words of rows 1.. when the table is stored in the checkpoint (row 0
    /// is the UNK row).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub words: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineInfo {
    pub ngrams: Vec<String>,
    pub threshold: f64,
    pub absent: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: ModelKind,
    pub arrays: Vec<ArrayMeta>,
    /// Model-level configuration (the kind's config struct).
    pub hyperparameters: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelSpace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_weights: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    /// Resolved run configuration, echoed for provenance.
    #[serde(default)]
    pub run_config: Value,
}

/// Embedding table a model was trained with.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSource {
    /// Stored in the checkpoint (random init or fine-tuned).
    Stored(EmbeddingTable),
    /// Supplied at inference time; must hash to `hash`.
    External { hash: String, dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub base_hash: String,
    pub source: EmbeddingSource,
}

impl EmbeddingRecord {
    /// Records `table` as used during training. Tables that cannot be
    /// reproduced from a file (random init, fine-tuned) are stored.
    pub fn new(base: &EmbeddingTable, trained: Option<&EmbeddingTable>, store_base: bool) -> Self {
        let source = match trained {
            Some(t) => EmbeddingSource::Stored(t.clone()),
            None if store_base => EmbeddingSource::Stored(base.clone()),
            None => EmbeddingSource::External {
                hash: base.content_hash(),
                dim: base.dim(),
            },
        };
        EmbeddingRecord {
            base_hash: base.content_hash(),
            source,
        }
    }

    pub fn hash(&self) -> String {
        match &self.source {
            EmbeddingSource::Stored(t) => t.content_hash(),
            EmbeddingSource::External { hash, .. } => hash.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.source {
            EmbeddingSource::Stored(t) => t.dim(),
            EmbeddingSource::External { dim, .. } => *dim,
        }
    }

    /// The inference table: the stored one, or `external` after checking
    /// its hash.
    pub fn resolve(&self, external: Option<&EmbeddingTable>) -> Result<EmbeddingTable> {
        match &self.source {
            EmbeddingSource::Stored(t) => Ok(t.clone()),
            EmbeddingSource::External { hash, .. } => {
                let table = external.ok_or_else(|| {
                    Error::config(format!(
                        "checkpoint needs the embedding table it was trained with (hash {hash}); pass it with --embeddings"
                    ))
                })?;
                let got = table.content_hash();
                if &got != hash {
                    return Err(Error::config(format!(
                        "embedding table hash {got} does not match the checkpoint's {hash}"
                    )));
                }
                Ok(table.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerCheckpoint {
    pub params: TaggerParams,
    pub class_weights: [f64; 2],
    pub embedding: EmbeddingRecord,
    pub config: TaggerConfig,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierCheckpoint {
    pub params: ClassifierParams,
    pub labels: LabelSpace,
    pub embedding: EmbeddingRecord,
    pub config: ClassifierConfig,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrCheckpoint {
    pub model: BrModel,
    pub config: BrConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Tagger(TaggerCheckpoint),
    Classifier(ClassifierCheckpoint),
    BinaryRelevance(BrCheckpoint),
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        match self {
            Checkpoint::Tagger(_) => ModelKind::Tagger,
            Checkpoint::Classifier(_) => ModelKind::Classifier,
            Checkpoint::BinaryRelevance(_) => ModelKind::BinaryRelevance,
        }
    }

    fn kind_error(&self, want: ModelKind) -> Error {
        Error::config(format!(
            "expected a {} checkpoint, got a {} checkpoint",
            want.name(),
            self.kind().name()
        ))
    }

    pub fn into_tagger(self) -> Result<TaggerCheckpoint> {
        match self {
            Checkpoint::Tagger(t) => Ok(t),
            other => Err(other.kind_error(ModelKind::Tagger)),
        }
    }

    pub fn into_classifier(self) -> Result<ClassifierCheckpoint> {
        match self {
            Checkpoint::Classifier(c) => Ok(c),
            other => Err(other.kind_error(ModelKind::Classifier)),
        }
    }

    pub fn into_baseline(self) -> Result<BrCheckpoint> {
        match self {
            Checkpoint::BinaryRelevance(b) => Ok(b),
            other => Err(other.kind_error(ModelKind::BinaryRelevance)),
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

/// Arrays collected in write order.
#[derive(Default)]
struct Arrays {
    meta: Vec<ArrayMeta>,
    data: Vec<f64>,
}

impl Arrays {
    fn push(&mut self, name: &str, shape: Vec<usize>, values: &[f64]) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.meta.push(ArrayMeta {
            name: name.to_string(),
            shape,
        });
        self.data.extend_from_slice(values);
    }

    fn push_params<P: ParamSet>(&mut self, p: &P) {
        for v in p.views() {
            self.push(&v.name, v.shape.clone(), v.values);
        }
    }

    fn push_embedding(&mut self, record: &EmbeddingRecord) -> EmbeddingInfo {
        let words = match &record.source {
            EmbeddingSource::Stored(t) => {
                let m = t.vectors();
                self.push(EMBEDDING_ARRAY, vec![m.rows(), m.cols()], m.as_slice());
                Some(t.words().to_vec())
            }
            EmbeddingSource::External { .. } => None,
        };
        EmbeddingInfo {
            base_hash: record.base_hash.clone(),
            hash: record.hash(),
            dim: record.dim(),
            words,
        }
    }
}

fn manifest(kind: ModelKind, hyperparameters: Value, run_config: &Value) -> Manifest {
    Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        kind,
        arrays: Vec::new(),
        hyperparameters,
        labels: None,
        variant: None,
        lambda: None,
        class_weights: None,
        embedding: None,
        baseline: None,
        best_epoch: None,
        run_config: run_config.clone(),
    }
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, run_config: &Value, mut w: W) -> Result<()> {
    let mut arrays = Arrays::default();
    let mut m = match ckpt {
        Checkpoint::Tagger(t) => {
            let mut m = manifest(ModelKind::Tagger, to_value(&t.config)?, run_config);
            arrays.push_params(&t.params);
            m.embedding = Some(arrays.push_embedding(&t.embedding));
            m.class_weights = Some(t.class_weights);
            m.best_epoch = Some(t.best_epoch);
            m
        }
        Checkpoint::Classifier(c) => {
            let mut m = manifest(ModelKind::Classifier, to_value(&c.config)?, run_config);
            arrays.push_params(&c.params);
            m.embedding = Some(arrays.push_embedding(&c.embedding));
            m.labels = Some(c.labels.clone());
            m.variant = Some(c.params.variant);
            m.lambda = Some(c.config.lambda);
            m.best_epoch = Some(c.best_epoch);
            m
        }
        Checkpoint::BinaryRelevance(b) => {
            let mut m = manifest(ModelKind::BinaryRelevance, to_value(&b.config)?, run_config);
            for (code, clf) in b.model.labels.codes().iter().zip(&b.model.classifiers) {
                arrays.push(&format!("{code}.w"), vec![clf.w.len()], &clf.w);
                arrays.push(&format!("{code}.b"), vec![1], &[clf.b]);
            }
            m.labels = Some(b.model.labels.clone());
            m.baseline = Some(BaselineInfo {
                ngrams: b.model.vocab.grams().to_vec(),
                threshold: b.model.threshold,
                absent: b.model.absent.clone(),
            });
            m
        }
    };
    m.arrays = arrays.meta;
    let json = serde_json::to_vec(&m)?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(arrays.data.len() * 4);
    for x in &arrays.data {
        buf.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint(ckpt: &Checkpoint, run_config: &Value, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path.as_ref())?;
    write_checkpoint(ckpt, run_config, BufWriter::new(f))
}

fn format_error(msg: impl Into<String>) -> Error {
    Error::data(format!("malformed checkpoint: {}", msg.into()))
}

/// Array values keyed by position in the manifest.
struct Loaded {
    meta: Vec<ArrayMeta>,
    values: Vec<Vec<f64>>,
    next: usize,
}

impl Loaded {
    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let i = self.next;
        let meta = self
            .meta
            .get(i)
            .ok_or_else(|| format_error(format!("missing array {name}")))?;
        if meta.name != name || meta.shape != shape {
            return Err(format_error(format!(
                "array {i} is {} {:?}, expected {name} {shape:?}",
                meta.name, meta.shape
            )));
        }
        self.next += 1;
        Ok(std::mem::take(&mut self.values[i]))
    }

    fn fill<P: ParamSet>(&mut self, p: &mut P) -> Result<()> {
        let shapes = p.shapes();
        let mut flat = Vec::with_capacity(p.num_params());
        for (name, shape) in shapes {
            flat.extend(self.take(&name, &shape)?);
        }
        p.assign_flat(&flat)
    }

    fn embedding(&mut self, info: &EmbeddingInfo) -> Result<EmbeddingRecord> {
        let source = match &info.words {
            Some(words) => {
                let rows = words.len() + 1;
                let data = self.take(EMBEDDING_ARRAY, &[rows, info.dim])?;
                let m = Tensor2::from_vec(rows, info.dim, data)?;
                if m.row(UNK_ID).iter().any(|&x| x != 0.0) {
                    return Err(format_error("stored embedding table has a non-zero UNK row"));
                }
                let pairs = words
                    .iter()
                    .enumerate()
                    .map(|(i, w)| (w.clone(), m.row(i + 1).to_vec()));
                let table = EmbeddingTable::from_pairs(info.dim, pairs)?;
                if table.content_hash() != info.hash {
                    return Err(format_error("stored embedding table does not match its recorded hash"));
                }
                EmbeddingSource::Stored(table)
            }
            None => EmbeddingSource::External {
                hash: info.hash.clone(),
                dim: info.dim,
            },
        };
        Ok(EmbeddingRecord {
            base_hash: info.base_hash.clone(),
            source,
        })
    }

    fn finish(&self) -> Result<()> {
        if self.next != self.meta.len() {
            return Err(format_error(format!(
                "{} unused arrays",
                self.meta.len() - self.next
            )));
        }
        Ok(())
    }
}

fn from_hyper<T: for<'de> Deserialize<'de>>(v: &Value) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| format_error(format!("hyperparameters: {e}")))
}

pub fn read_manifest<R: Read>(r: &mut R) -> Result<Manifest> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| format_error("file too short"))?;
    if &magic != MAGIC {
        return Err(format_error("not a checkpoint file (bad magic bytes)"));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v).map_err(|_| format_error("truncated header"))?;
    let version = u32::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(format_error(format!(
            "unsupported format version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    let mut n = [0u8; 8];
    r.read_exact(&mut n).map_err(|_| format_error("truncated header"))?;
    let len = u64::from_le_bytes(n);
    let mut json = Vec::new();
    r.take(len).read_to_end(&mut json)?;
    if json.len() as u64 != len {
        return Err(format_error("truncated manifest"));
    }
    let m: Manifest = serde_json::from_slice(&json).map_err(|e| format_error(format!("manifest: {e}")))?;
    if m.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(format_error(format!(
            "unsupported manifest schema version {}",
            m.schema_version
        )));
    }
    Ok(m)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Checkpoint, Manifest)> {
    let m = read_manifest(&mut r)?;
    let mut values = Vec::with_capacity(m.arrays.len());
    for a in &m.arrays {
        let mut bytes = vec![0u8; a.len() * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| format_error(format!("array {} is truncated", a.name)))?;
        let v: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("array {} holds non-finite values", a.name)));
        }
        values.push(v);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(format_error("trailing bytes after the last array"));
    }
    let mut loaded = Loaded {
        meta: m.arrays.clone(),
        values,
        next: 0,
    };
    let missing = |what: &str| format_error(format!("manifest lacks {what}"));
    let ckpt = match m.kind {
        ModelKind::Tagger => {
            let config: TaggerConfig = from_hyper(&m.hyperparameters)?;
            let info = m.embedding.as_ref().ok_or_else(|| missing("embedding"))?;
            let mut params = TaggerParams::zeros(info.dim, config.hidden);
            loaded.fill(&mut params)?;
            let embedding = loaded.embedding(info)?;
            Checkpoint::Tagger(TaggerCheckpoint {
                params,
                class_weights: m.class_weights.ok_or_else(|| missing("class weights"))?,
                embedding,
                config,
                best_epoch: m.best_epoch.unwrap_or(0),
            })
        }
        ModelKind::Classifier => {
            let config: ClassifierConfig = from_hyper(&m.hyperparameters)?;
            let info = m.embedding.as_ref().ok_or_else(|| missing("embedding"))?;
            let labels = m.labels.clone().ok_or_else(|| missing("labels"))?;
            let variant = m.variant.ok_or_else(|| missing("variant"))?;
            let mut params = ClassifierParams::zeros(
                variant,
                info.dim,
                config.hidden,
                config.attention,
                labels.len(),
            );
            loaded.fill(&mut params)?;
            let embedding = loaded.embedding(info)?;
            Checkpoint::Classifier(ClassifierCheckpoint {
                params,
                labels,
                embedding,
                config,
                best_epoch: m.best_epoch.unwrap_or(0),
            })
        }
        ModelKind::BinaryRelevance => {
            let config: BrConfig = from_hyper(&m.hyperparameters)?;
            let labels = m.labels.clone().ok_or_else(|| missing("labels"))?;
            let info = m.baseline.as_ref().ok_or_else(|| missing("baseline block"))?;
            let vocab = NgramVocabulary::new(info.ngrams.clone(), config.min_df, config.include_r4v);
            if vocab.len() != info.ngrams.len() {
                return Err(format_error("n-gram list is not sorted and unique"));
            }
            let mut classifiers = Vec::with_capacity(labels.len());
            for code in labels.codes() {
                let w = loaded.take(&format!("{code}.w"), &[vocab.len()])?;
                let b = loaded.take(&format!("{code}.b"), &[1])?[0];
                classifiers.push(LabelWeights { w, b });
            }
            Checkpoint::BinaryRelevance(BrCheckpoint {
                model: BrModel {
                    vocab,
                    labels,
                    classifiers,
                    threshold: info.threshold,
                    absent: info.absent.clone(),
                },
                config,
            })
        }
    };
    loaded.finish()?;
    Ok((ckpt, m))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Checkpoint, Manifest)> {
    let f = File::open(path.as_ref())?;
    read_checkpoint(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Encoder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table() -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let words: Vec<String> = ["lung", "nodule", "met"].iter().map(|s| s.to_string()).collect();
        EmbeddingTable::random(&words, 4, &mut rng).unwrap()
    }

    fn round_trip(c: &Checkpoint) -> (Checkpoint, Manifest, Vec<u8>) {
        let mut bytes = Vec::new();
        write_checkpoint(c, &serde_json::json!({"seed": 3}), &mut bytes).unwrap();
        let (back, m) = read_checkpoint(bytes.as_slice()).unwrap();
        (back, m, bytes)
    }

    fn quantized<P: ParamSet>(mut p: P) -> P {
        p.quantize_f32();
        p
    }

    #[test]
    fn tagger_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = table();
        let c = Checkpoint::Tagger(TaggerCheckpoint {
            params: quantized(TaggerParams::init(4, 5, &mut rng)),
            class_weights: [0.5, 1.5],
            embedding: EmbeddingRecord::new(&t, None, true),
            config: TaggerConfig {
                hidden: 5,
                ..TaggerConfig::default()
            },
            best_epoch: 7,
        });
        let (back, m, bytes) = round_trip(&c);
        assert_eq!(back, c);
        assert_eq!(m.kind, ModelKind::Tagger);
        assert_eq!(&bytes[..8], MAGIC);
        // second write is byte-identical
        let (_, _, again) = round_trip(&back);
        assert_eq!(bytes, again);
    }

    #[test]
    fn classifier_with_external_embeddings_checks_hash() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = table();
        let variant = Variant::new(Encoder::Supervised, true);
        let c = Checkpoint::Classifier(ClassifierCheckpoint {
            params: quantized(ClassifierParams::init(variant, 4, 3, 2, 2, &mut rng)),
            labels: LabelSpace::new(vec!["C34.90".into(), "D22.5".into()]).unwrap(),
            embedding: EmbeddingRecord::new(&t, None, false),
            config: ClassifierConfig {
                variant,
                hidden: 3,
                attention: 2,
                ..ClassifierConfig::default()
            },
            best_epoch: 1,
        });
        let (back, m, _) = round_trip(&c);
        assert_eq!(back, c);
        assert_eq!(m.variant, Some(variant));
        assert_eq!(m.lambda, Some(100.0));
        let rec = back.into_classifier().unwrap().embedding;
        assert!(rec.resolve(None).unwrap_err().is_config());
        assert_eq!(rec.resolve(Some(&t)).unwrap(), t);
        let other = EmbeddingTable::random(&["x".to_string()], 4, &mut rng).unwrap();
        assert!(rec.resolve(Some(&other)).unwrap_err().is_config());
    }

    #[test]
    fn baseline_round_trip() {
        let labels = LabelSpace::new(vec!["A".into(), "B".into()]).unwrap();
        let c = Checkpoint::BinaryRelevance(BrCheckpoint {
            model: BrModel {
                vocab: NgramVocabulary::new(vec!["a".into(), "a b".into()], 2, true),
                labels,
                classifiers: vec![
                    LabelWeights { w: vec![0.5, -1.25], b: 0.25 },
                    LabelWeights { w: vec![0.0, 2.0], b: -1.0 },
                ],
                threshold: 0.5,
                absent: vec![],
            },
            config: BrConfig::default(),
        });
        let (back, _, _) = round_trip(&c);
        assert_eq!(back, c);
    }

    #[test]
    fn kind_mismatch_is_config_error() {
        let c = Checkpoint::BinaryRelevance(BrCheckpoint {
            model: BrModel {
                vocab: NgramVocabulary::new(vec![], 2, true),
                labels: LabelSpace::new(vec!["A".into()]).unwrap(),
                classifiers: vec![LabelWeights::zeros(0)],
                threshold: 0.5,
                absent: vec![],
            },
            config: BrConfig::default(),
        });
        assert!(c.into_tagger().unwrap_err().is_config());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(read_checkpoint(&b"NOTACKPT"[..]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Checkpoint::Tagger(TaggerCheckpoint {
            params: quantized(TaggerParams::init(4, 2, &mut rng)),
            class_weights: [1.0, 1.0],
            embedding: EmbeddingRecord::new(&table(), None, true),
            config: TaggerConfig {
                hidden: 2,
                ..TaggerConfig::default()
            },
            best_epoch: 1,
        });
        let (_, _, bytes) = round_trip(&c);
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint(extra.as_slice()).is_err());
        let mut bad_version = bytes.clone();
        bad_version[8] = 9;
        assert!(read_checkpoint(bad_version.as_slice()).is_err());
    }
}
