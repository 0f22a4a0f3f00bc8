//! Line-delimited manifest, query and qrels formats.
//!
//! Corpus manifest, one JSON object per line:
//!
//! ```text
//! {"type":"header","dimension":4}
//! {"type":"parent","parent_id":"p1","kind":"page","metadata":{"project":"a"}}
//! {"type":"child","child_id":"c1","parent_id":"p1","modality":"text","vector":[0.5,0.5,0.5,0.5]}
//! {"type":"child","child_id":"c2","parent_id":"p1","modality":"image",
//!  "vector":{"blob_file":"vectors.f32","offset":0,"count":4}}
//! ```
//!
//! Blob references point into a sidecar of little-endian `f32` values;
//! `offset` is in bytes, `count` in floats, and `blob_file` is resolved
//! relative to the manifest's directory. The header is optional; without it
//! the dimension is taken from the first child.
//!
//! Query files use the same framing with records
//! `{"query_id":"q1","tokens":[[...], {"blob_file":...}]}` (`"type":"query"`
//! is optional). Qrels are whitespace-separated `query_id parent_id grade`
//! lines; a four-column trec line `query_id iter parent_id grade` is also
//! accepted.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, Loaded, Qrels};
use crate::error::{Error, Result};
use crate::model::{
    l2_normalize, ChildEmbedding, Metadata, Modality, ParentDoc, ParentKind, QueryEmbedding,
    Vector,
};
use crate::scalar::Scalar;

/// Inputs whose norm deviates from 1 by more than this are reported.
const NORM_WARNING_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobRef {
    pub blob_file: String,
    pub offset: u64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSource {
    Inline(Vec<f64>),
    Blob(BlobRef),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum ManifestRecord {
    Header {
        dimension: usize,
    },
    Parent {
        parent_id: String,
        kind: ParentKind,
        #[serde(default)]
        metadata: Metadata,
    },
    Child {
        child_id: String,
        parent_id: String,
        modality: Modality,
        #[serde(default)]
        metadata: Metadata,
        vector: VectorSource,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRecord {
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    query_id: String,
    tokens: Vec<VectorSource>,
}

/// How vectors are laid out when writing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VectorLayout {
    Inline,
    /// Sidecar file name, created next to the manifest.
    Blob(String),
}

/// Lazily reads sidecar blobs, caching their contents.
struct BlobCache {
    base: PathBuf,
    files: HashMap<String, Vec<u8>>,
}

impl BlobCache {
    fn new(manifest: &Path) -> Self {
        BlobCache {
            base: manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
            files: HashMap::new(),
        }
    }

    fn read<S: Scalar>(&mut self, blob: &BlobRef, locator: &str) -> Result<Vec<S>> {
        if !self.files.contains_key(&blob.blob_file) {
            let path = self.base.join(&blob.blob_file);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            self.files.insert(blob.blob_file.clone(), bytes);
        }
        let bytes = &self.files[&blob.blob_file];
        let start = usize::try_from(blob.offset)
            .map_err(|_| Error::parse(locator, "blob offset overflows"))?;
        let end = start
            .checked_add(blob.count * 4)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                Error::parse(
                    locator,
                    format!(
                        "blob range {}+{}f32 exceeds `{}` ({} bytes)",
                        blob.offset,
                        blob.count,
                        blob.blob_file,
                        bytes.len()
                    ),
                )
            })?;
        Ok(bytes[start..end]
            .chunks_exact(4)
            .map(|c| S::from_storage(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect())
    }

    fn resolve<S: Scalar>(&mut self, source: &VectorSource, locator: &str) -> Result<Vec<S>> {
        match source {
            VectorSource::Inline(values) => values
                .iter()
                .map(|&x| S::from_f64(x).ok_or_else(|| Error::NonFinite(locator.to_string())))
                .collect(),
            VectorSource::Blob(blob) => self.read(blob, locator),
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

fn locate(path: &Path, line: usize) -> String {
    format!("{}:{line}", path.display())
}

/// Normalizes `values`, noting a warning when the input was far from unit.
fn normalize_input<S: Scalar>(
    values: Vec<S>,
    locator: &str,
    warnings: &mut Vec<String>,
) -> Result<Vector<S>> {
    let raw = Vector::new(values);
    let normalized = l2_normalize(&raw).map_err(|e| match e {
        Error::ZeroVector(_) => Error::ZeroVector(locator.to_string()),
        Error::NonFinite(_) => Error::NonFinite(locator.to_string()),
        other => other,
    })?;
    let deviation = raw.norm_deviation();
    if deviation > NORM_WARNING_THRESHOLD {
        let msg = format!(
            "{locator}: input norm {:.6} renormalized to 1",
            raw.norm().to_f64().unwrap_or(f64::NAN)
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(normalized)
}

/// Loads and validates a corpus manifest. All vectors come back unit-norm.
pub fn load_corpus<S: Scalar>(manifest: &Path) -> Result<Loaded<Corpus<S>>> {
    let mut blobs = BlobCache::new(manifest);
    let mut warnings = Vec::new();
    let mut dimension: Option<usize> = None;
    let mut parents = Vec::new();
    let mut parent_ids = HashSet::new();
    let mut children = Vec::new();
    let mut child_ids = HashSet::new();
    // Source line of each child, for dangling-parent errors reported after the scan.
    let mut child_lines = Vec::new();
    let mut parent_lines = Vec::new();

    for (line, text) in read_lines(manifest)? {
        let locator = locate(manifest, line);
        let record: ManifestRecord =
            serde_json::from_str(&text).map_err(|e| Error::parse(&locator, e))?;
        match record {
            ManifestRecord::Header { dimension: d } => {
                if d == 0 {
                    return Err(Error::parse(&locator, "dimension must be positive"));
                }
                if !parents.is_empty() || !children.is_empty() {
                    return Err(Error::parse(&locator, "header must precede all records"));
                }
                dimension = Some(d);
            }
            ManifestRecord::Parent {
                parent_id,
                kind,
                metadata,
            } => {
                if !parent_ids.insert(parent_id.clone()) {
                    return Err(Error::DuplicateParent { parent_id, locator });
                }
                parent_lines.push((parent_id.clone(), line));
                parents.push(ParentDoc {
                    parent_id,
                    kind,
                    metadata,
                    child_count_by_modality: BTreeMap::new(),
                });
            }
            ManifestRecord::Child {
                child_id,
                parent_id,
                modality,
                metadata,
                vector,
            } => {
                let locator = format!("{locator} child {child_id}");
                if !child_ids.insert(child_id.clone()) {
                    return Err(Error::DuplicateChild { child_id, locator: locate(manifest, line) });
                }
                let values: Vec<S> = blobs.resolve(&vector, &locator)?;
                let expected = *dimension.get_or_insert(values.len());
                if values.len() != expected {
                    return Err(Error::DimensionMismatch {
                        expected,
                        found: values.len(),
                        locator,
                    });
                }
                let vector = normalize_input(values, &locator, &mut warnings)?;
                child_lines.push(line);
                children.push(ChildEmbedding {
                    child_id,
                    parent_id,
                    modality,
                    vector,
                    metadata,
                });
            }
        }
    }

    for (child, &line) in children.iter().zip(&child_lines) {
        if !parent_ids.contains(&child.parent_id) {
            return Err(Error::DanglingParent {
                parent_id: child.parent_id.clone(),
                child_id: child.child_id.clone(),
                locator: locate(manifest, line),
            });
        }
    }

    // Corpus::new reports positions among parent records; map back to lines.
    let parent_lines: HashMap<String, usize> = parent_lines.into_iter().collect();
    let corpus = Corpus::new(dimension.unwrap_or(0), parents, children).map_err(|e| match e {
        Error::EmptyParent { parent_id, .. } => Error::EmptyParent {
            locator: locate(manifest, parent_lines[&parent_id]),
            parent_id,
        },
        other => other,
    })?;
    Ok(Loaded {
        value: corpus,
        warnings,
    })
}

/// Loads a query file, normalizing every token, in file order.
pub fn load_queries<S: Scalar>(
    path: &Path,
    dimension: usize,
) -> Result<Loaded<Vec<QueryEmbedding<S>>>> {
    let mut blobs = BlobCache::new(path);
    let mut warnings = Vec::new();
    let mut queries = Vec::new();
    let mut seen = HashSet::new();

    for (line, text) in read_lines(path)? {
        let locator = locate(path, line);
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::parse(&locator, e))?;
        if value.get("type").and_then(|t| t.as_str()) == Some("header") {
            let declared = value.get("dimension").and_then(|d| d.as_u64());
            if declared != Some(dimension as u64) {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    found: declared.unwrap_or(0) as usize,
                    locator,
                });
            }
            continue;
        }
        let record: QueryRecord =
            serde_json::from_value(value).map_err(|e| Error::parse(&locator, e))?;
        if let Some(kind) = &record.kind {
            if kind != "query" {
                return Err(Error::parse(&locator, format!("unexpected record type `{kind}`")));
            }
        }
        if !seen.insert(record.query_id.clone()) {
            return Err(Error::parse(
                &locator,
                format!("duplicate query id `{}`", record.query_id),
            ));
        }
        if record.tokens.is_empty() {
            return Err(Error::EmptyQuery(record.query_id));
        }
        let mut tokens = Vec::with_capacity(record.tokens.len());
        for (i, source) in record.tokens.iter().enumerate() {
            let token_locator = format!("{locator} query {} token {i}", record.query_id);
            let values: Vec<S> = blobs.resolve(source, &token_locator)?;
            if values.len() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    found: values.len(),
                    locator: token_locator,
                });
            }
            tokens.push(normalize_input(values, &token_locator, &mut warnings)?);
        }
        queries.push(QueryEmbedding::new(record.query_id, tokens)?);
    }

    Ok(Loaded {
        value: queries,
        warnings,
    })
}

/// Loads `query_id parent_id grade` lines. Duplicate pairs: last wins.
pub fn load_qrels(path: &Path) -> Result<Loaded<Qrels>> {
    let mut qrels = Qrels::new();
    let mut warnings = Vec::new();
    for (line, text) in read_lines(path)? {
        let locator = locate(path, line);
        let fields: Vec<&str> = text.split_whitespace().collect();
        let (query_id, parent_id, grade) = match fields.as_slice() {
            [q, p, g] | [q, _, p, g] => (*q, *p, *g),
            _ => {
                return Err(Error::parse(
                    &locator,
                    format!("expected `query_id parent_id grade`, got {} fields", fields.len()),
                ))
            }
        };
        let grade: i64 = grade
            .parse()
            .map_err(|_| Error::parse(&locator, format!("grade `{grade}` is not an integer")))?;
        if grade < 0 {
            return Err(Error::NegativeGrade {
                query_id: query_id.into(),
                parent_id: parent_id.into(),
                grade,
                line,
            });
        }
        let grade = u32::try_from(grade)
            .map_err(|_| Error::parse(&locator, format!("grade {grade} out of range")))?;
        if let Some(old) = qrels.insert(query_id, parent_id, grade) {
            let msg = format!(
                "{locator}: duplicate judgment ({query_id}, {parent_id}); {old} replaced by {grade}"
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(Loaded {
        value: qrels,
        warnings,
    })
}

/// Appends `values` to the blob and returns its reference.
struct BlobWriter {
    name: String,
    out: BufWriter<fs::File>,
    path: PathBuf,
    offset: u64,
}

impl BlobWriter {
    fn create(manifest: &Path, name: &str) -> Result<Self> {
        let path = manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
            .join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(BlobWriter {
            name: name.to_string(),
            out: BufWriter::new(file),
            path,
            offset: 0,
        })
    }

    fn push<S: Scalar>(&mut self, values: &[S]) -> Result<BlobRef> {
        for &v in values {
            self.out
                .write_all(&v.to_storage().to_le_bytes())
                .map_err(|e| Error::io(&self.path, e))?;
        }
        let blob = BlobRef {
            blob_file: self.name.clone(),
            offset: self.offset,
            count: values.len(),
        };
        self.offset += 4 * values.len() as u64;
        Ok(blob)
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn vector_source<S: Scalar>(
    values: &[S],
    blob: &mut Option<BlobWriter>,
) -> Result<VectorSource> {
    match blob {
        Some(w) => Ok(VectorSource::Blob(w.push(values)?)),
        None => Ok(VectorSource::Inline(
            values.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
        )),
    }
}

fn write_record<T: Serialize>(out: &mut impl Write, path: &Path, record: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, record).map_err(|e| Error::parse(path.display().to_string(), e))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes a manifest that [`load_corpus`] reads back to the same corpus.
pub fn write_corpus<S: Scalar>(corpus: &Corpus<S>, path: &Path, layout: &VectorLayout) -> Result<()> {
    let mut out = create(path)?;
    let mut blob = match layout {
        VectorLayout::Inline => None,
        VectorLayout::Blob(name) => Some(BlobWriter::create(path, name)?),
    };
    write_record(
        &mut out,
        path,
        &ManifestRecord::Header {
            dimension: corpus.dimension(),
        },
    )?;
    for p in corpus.parents() {
        write_record(
            &mut out,
            path,
            &ManifestRecord::Parent {
                parent_id: p.parent_id.clone(),
                kind: p.kind,
                metadata: p.metadata.clone(),
            },
        )?;
    }
    for c in corpus.children() {
        write_record(
            &mut out,
            path,
            &ManifestRecord::Child {
                child_id: c.child_id.clone(),
                parent_id: c.parent_id.clone(),
                modality: c.modality,
                metadata: c.metadata.clone(),
                vector: vector_source(c.vector.as_slice(), &mut blob)?,
            },
        )?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    blob.map_or(Ok(()), BlobWriter::finish)
}

pub fn write_queries<S: Scalar>(
    queries: &[QueryEmbedding<S>],
    path: &Path,
    layout: &VectorLayout,
) -> Result<()> {
    let mut out = create(path)?;
    let mut blob = match layout {
        VectorLayout::Inline => None,
        VectorLayout::Blob(name) => Some(BlobWriter::create(path, name)?),
    };
    for q in queries {
        let tokens = q
            .tokens()
            .iter()
            .map(|t| vector_source(t.as_slice(), &mut blob))
            .collect::<Result<Vec<_>>>()?;
        write_record(
            &mut out,
            path,
            &QueryRecord {
                kind: Some("query".into()),
                query_id: q.query_id.clone(),
                tokens,
            },
        )?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    blob.map_or(Ok(()), BlobWriter::finish)
}

pub fn write_qrels(qrels: &Qrels, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    for q in qrels.queries() {
        for (p, g) in qrels.judgments(q) {
            writeln!(out, "{q} {p} {g}").map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}
