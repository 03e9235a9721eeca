//! Knowledge-base ingestion and the binary/JSON persistence formats.
//!
//! A manifest is JSON-lines, one object per line:
//!
//! ```text
//! {"id": "m1", "modalities": {"text": {"inline": "a foggy sky"}, "image": {"path": "img/m1.png"}}}
//! {"id": "m2", "modalities": {"vec": {"vector": [0.1, 0.2, 0.3]}}}
//! ```
//!
//! Objects keep manifest order; position `i` is vertex id `i` in every index
//! built over the collection.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::WeightVector;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    pub dimension: usize,
}

impl ModalitySpec {
    pub fn new(name: impl Into<String>, dimension: usize) -> Self {
        Self {
            name: name.into(),
            dimension,
        }
    }
}

/// Raw content of one modality of one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityPayload {
    /// Inline UTF-8 text.
    Inline(String),
    /// A precomputed vector; its length must match the modality dimension.
    Vector(Vec<f32>),
    /// A file relative to the manifest directory.
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiModalObject {
    pub id: String,
    pub payloads: BTreeMap<String, ModalityPayload>,
    /// Per-modality vectors, populated after encoding.
    pub vectors: Option<BTreeMap<String, Vec<f32>>>,
}

impl MultiModalObject {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            payloads: BTreeMap::new(),
            vectors: None,
        }
    }

    pub fn with_payload(mut self, modality: impl Into<String>, payload: ModalityPayload) -> Self {
        self.payloads.insert(modality.into(), payload);
        self
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    id: String,
    #[serde(default)]
    modalities: BTreeMap<String, ModalityPayload>,
}

/// Summary of an ingest: object count and how many objects carry each modality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub objects: usize,
    pub coverage: Vec<(String, usize)>,
}

#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    pub name: String,
    pub modalities: Vec<ModalitySpec>,
    pub objects: Vec<MultiModalObject>,
    pub ingest_enabled: bool,
    base_dir: PathBuf,
    by_id: HashMap<String, usize>,
}

impl KnowledgeBase {
    /// Builds a knowledge base from in-memory objects, applying the same checks
    /// as [`ingest`]. File payloads resolve against `base_dir`.
    pub fn from_objects(
        name: impl Into<String>,
        modalities: Vec<ModalitySpec>,
        objects: Vec<MultiModalObject>,
        base_dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        let mut kb = Self::empty(name, modalities, base_dir)?;
        for object in objects {
            kb.insert(object)?;
        }
        Ok(kb)
    }

    fn empty(
        name: impl Into<String>,
        modalities: Vec<ModalitySpec>,
        base_dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        validate_schema(&modalities)?;
        Ok(Self {
            name: name.into(),
            modalities,
            objects: Vec::new(),
            ingest_enabled: true,
            base_dir: base_dir.into(),
            by_id: HashMap::new(),
        })
    }

    fn insert(&mut self, object: MultiModalObject) -> Result<()> {
        if object.id.is_empty() {
            return Err(Error::SchemaViolation("object id must be non-empty".into()));
        }
        if self.by_id.contains_key(&object.id) {
            return Err(Error::DuplicateId(object.id));
        }
        for (modality, payload) in &object.payloads {
            let spec = self.modality(modality).ok_or_else(|| {
                Error::SchemaViolation(format!(
                    "object {:?} uses undeclared modality {modality:?}",
                    object.id
                ))
            })?;
            match payload {
                ModalityPayload::Vector(v) if v.len() != spec.dimension => {
                    return Err(Error::SchemaViolation(format!(
                        "object {:?} modality {modality:?}: vector has {} dims, schema says {}",
                        object.id,
                        v.len(),
                        spec.dimension
                    )));
                }
                ModalityPayload::Path(p) => {
                    if p.is_absolute() {
                        return Err(Error::SchemaViolation(format!(
                            "object {:?}: file path {} must be relative",
                            object.id,
                            p.display()
                        )));
                    }
                    let resolved = self.base_dir.join(p);
                    if !resolved.is_file() {
                        return Err(Error::MissingFile(resolved));
                    }
                }
                _ => {}
            }
        }
        self.by_id.insert(object.id.clone(), self.objects.len());
        self.objects.push(object);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn modality(&self, name: &str) -> Option<&ModalitySpec> {
        self.modalities.iter().find(|m| m.name == name)
    }

    pub fn modality_names(&self) -> Vec<String> {
        self.modalities.iter().map(|m| m.name.clone()).collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.modalities.iter().map(|m| m.dimension).collect()
    }

    pub fn get_object(&self, id: &str) -> Result<&MultiModalObject> {
        self.vertex_of(id)
            .map(|v| &self.objects[v as usize])
            .ok_or_else(|| Error::NotFound(id.to_string()))
    }

    pub fn vertex_of(&self, id: &str) -> Option<u32> {
        self.by_id.get(id).map(|&i| i as u32)
    }

    pub fn id_of(&self, vertex: u32) -> &str {
        &self.objects[vertex as usize].id
    }

    pub fn report(&self) -> IngestReport {
        let coverage = self
            .modalities
            .iter()
            .map(|m| {
                let n = self
                    .objects
                    .iter()
                    .filter(|o| o.payloads.contains_key(&m.name))
                    .count();
                (m.name.clone(), n)
            })
            .collect();
        IngestReport {
            objects: self.objects.len(),
            coverage,
        }
    }

    /// Raw bytes of one payload: inline text as UTF-8, inline vectors as a JSON
    /// array, files verbatim.
    pub fn payload_bytes(&self, id: &str, modality: &str) -> Result<Vec<u8>> {
        let object = self.get_object(id)?;
        let payload = object
            .payloads
            .get(modality)
            .ok_or_else(|| Error::NotFound(format!("{id}/{modality}")))?;
        match payload {
            ModalityPayload::Inline(text) => Ok(text.as_bytes().to_vec()),
            ModalityPayload::Vector(v) => {
                Ok(serde_json::to_vec(v).expect("f32 slices always serialize"))
            }
            ModalityPayload::Path(p) => Ok(fs::read(self.base_dir.join(p))?),
        }
    }

    /// Attaches encoded vectors, one map per object in collection order.
    pub fn set_vectors(&mut self, vectors: Vec<BTreeMap<String, Vec<f32>>>) -> Result<()> {
        if vectors.len() != self.objects.len() {
            return Err(Error::DimensionMismatch {
                expected: self.objects.len(),
                actual: vectors.len(),
            });
        }
        for map in &vectors {
            for m in &self.modalities {
                let got = map.get(&m.name).map(Vec::len).unwrap_or(0);
                if got != m.dimension {
                    return Err(Error::DimensionMismatch {
                        expected: m.dimension,
                        actual: got,
                    });
                }
            }
        }
        for (object, map) in self.objects.iter_mut().zip(vectors) {
            object.vectors = Some(map);
        }
        Ok(())
    }

    pub fn is_encoded(&self) -> bool {
        self.objects.iter().all(|o| o.vectors.is_some())
    }

    /// Stored vector of one modality for one vertex.
    pub fn stored_vector(&self, vertex: u32, modality: &str) -> Result<&[f32]> {
        let object = &self.objects[vertex as usize];
        object
            .vectors
            .as_ref()
            .and_then(|v| v.get(modality))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::IndexNotBuilt(format!("object {:?} is not encoded", object.id)))
    }
}

fn validate_schema(modalities: &[ModalitySpec]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for m in modalities {
        if m.name.is_empty() || m.dimension == 0 {
            return Err(Error::SchemaViolation(format!(
                "modality {:?} needs a name and a positive dimension",
                m.name
            )));
        }
        if !seen.insert(m.name.as_str()) {
            return Err(Error::SchemaViolation(format!(
                "modality {:?} declared twice",
                m.name
            )));
        }
    }
    Ok(())
}

/// Reads a JSON-lines manifest. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn ingest(
    manifest: impl AsRef<Path>,
    name: impl Into<String>,
    schema: Vec<ModalitySpec>,
) -> Result<KnowledgeBase> {
    let manifest = manifest.as_ref();
    let file = fs::File::open(manifest).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(manifest.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let base_dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut kb = KnowledgeBase::empty(name, schema, base_dir)?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        kb.insert(MultiModalObject {
            id: record.id,
            payloads: record.modalities,
            vectors: None,
        })?;
    }
    log::info!("ingested {} objects from {}", kb.len(), manifest.display());
    Ok(kb)
}

const VECTORS_MAGIC: &[u8; 4] = b"MQAV";
const FORMAT_VERSION: u32 = 1;

/// Vectors as read back from disk: `data` holds one row per object, each row
/// the concatenation of its modality vectors in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredVectors {
    pub ids: Vec<String>,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl StoredVectors {
    pub fn row_len(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn object_vectors(&self, i: usize) -> Vec<&[f32]> {
        let row = &self.data[i * self.row_len()..(i + 1) * self.row_len()];
        let mut out = Vec::with_capacity(self.dims.len());
        let mut offset = 0;
        for &d in &self.dims {
            out.push(&row[offset..offset + d]);
            offset += d;
        }
        out
    }
}

/// Path of the JSON id table written next to a vectors file.
pub fn ids_sidecar(path: &Path) -> PathBuf {
    path.with_extension("ids.json")
}

/// Writes every object's vectors (`MQAV` format) plus the id sidecar. Returns
/// the size of the vectors file in bytes.
pub fn save_vectors(kb: &KnowledgeBase, path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let dims = kb.dims();
    let row: usize = dims.iter().sum();
    let mut buf = Vec::with_capacity(16 + 4 * dims.len() + 4 * row * kb.len());
    buf.extend_from_slice(VECTORS_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(kb.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in &dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for object in &kb.objects {
        let vectors = object.vectors.as_ref().ok_or_else(|| {
            Error::IndexNotBuilt(format!("object {:?} is not encoded", object.id))
        })?;
        for m in &kb.modalities {
            let v = vectors.get(&m.name).ok_or_else(|| Error::DimensionMismatch {
                expected: m.dimension,
                actual: 0,
            })?;
            if v.len() != m.dimension {
                return Err(Error::DimensionMismatch {
                    expected: m.dimension,
                    actual: v.len(),
                });
            }
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    fs::write(path, &buf)?;
    let ids: Vec<&str> = kb.objects.iter().map(|o| o.id.as_str()).collect();
    fs::write(ids_sidecar(path), serde_json::to_vec(&ids).expect("strings serialize"))?;
    Ok(buf.len() as u64)
}

pub fn load_vectors(path: impl AsRef<Path>) -> Result<StoredVectors> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut r = LeReader::new(&bytes);
    if r.take(4)? != VECTORS_MAGIC {
        return Err(Error::Format("bad magic, expected MQAV".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let modalities = r.u32()? as usize;
    let dims = (0..modalities)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let row: usize = dims.iter().sum();
    let expected = count
        .checked_mul(row)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    if r.remaining() != expected {
        return Err(Error::Format(format!(
            "body holds {} bytes, header implies {expected}",
            r.remaining()
        )));
    }
    let data = (0..count * row).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;

    let ids_path = ids_sidecar(path);
    let ids: Vec<String> = serde_json::from_slice(&fs::read(&ids_path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", ids_path.display())))?;
    if ids.len() != count {
        return Err(Error::Format(format!(
            "id table lists {} ids for {count} objects",
            ids.len()
        )));
    }
    Ok(StoredVectors { ids, dims, data })
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsFile {
    modalities: Vec<String>,
    weights: Vec<f64>,
}

pub fn save_weights(path: impl AsRef<Path>, modalities: &[String], weights: &WeightVector) -> Result<()> {
    if modalities.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: modalities.len(),
            actual: weights.len(),
        });
    }
    let file = WeightsFile {
        modalities: modalities.to_vec(),
        weights: weights.as_slice().to_vec(),
    };
    fs::write(path, serde_json::to_vec_pretty(&file).expect("weights serialize"))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(Vec<String>, WeightVector)> {
    let file: WeightsFile = serde_json::from_slice(&fs::read(path)?)
        .map_err(|e| Error::Format(format!("weights file: {e}")))?;
    if file.modalities.len() != file.weights.len() {
        return Err(Error::Format(format!(
            "{} modalities but {} weights",
            file.modalities.len(),
            file.weights.len()
        )));
    }
    let weights = WeightVector::new(file.weights)?;
    Ok((file.modalities, weights))
}

/// Little-endian cursor over a byte buffer; every read past the end is a
/// [`Error::Format`].
pub(crate) struct LeReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> LeReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!(
                "truncated: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
