//! Single-file index persistence.
//!
//! Layout: a fixed little-endian header
//!
//! | bytes | field |
//! | ----- | ----- |
//! | 8 | magic `MXSIMIDX` |
//! | 4 | format version (u32) |
//! | 1 | scalar width in bytes |
//! | 1 | ann mode (0 = exact flat, 1 = graph) |
//! | 4 | dimension (u32) |
//! | 8 | parent count (u64) |
//! | 8 | child count (u64) |
//!
//! followed by a bincode body holding the build parameters, the corpus and
//! the graph. Loading rejects any header that does not match this build.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Graph, Index, IndexParams};
use crate::error::{Error, Result};
use crate::ingest::Corpus;
use crate::model::AnnMode;
use crate::scalar::Scalar;

pub const INDEX_MAGIC: [u8; 8] = *b"MXSIMIDX";
pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct Body<S> {
    params: IndexParams,
    corpus: Corpus<S>,
    graph: Option<Graph>,
}

fn mode_tag(mode: AnnMode) -> u8 {
    match mode {
        AnnMode::ExactFlat => 0,
        AnnMode::ApproximateGraph => 1,
    }
}

impl<S: Scalar> Index<S> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);

        let dim = u32::try_from(self.dim())
            .map_err(|_| Error::IndexFormat("dimension exceeds u32".into()))?;
        let mut header = Vec::with_capacity(34);
        header.extend_from_slice(&INDEX_MAGIC);
        header.extend_from_slice(&INDEX_FORMAT_VERSION.to_le_bytes());
        header.push(S::BYTES);
        header.push(mode_tag(self.params.ann_mode));
        header.extend_from_slice(&dim.to_le_bytes());
        header.extend_from_slice(&(self.corpus.num_parents() as u64).to_le_bytes());
        header.extend_from_slice(&(self.corpus.num_children() as u64).to_le_bytes());
        out.write_all(&header).map_err(io)?;

        let body = BodyRef {
            params: &self.params,
            corpus: &self.corpus,
            graph: &self.graph,
        };
        bincode::serialize_into(&mut out, &body)
            .map_err(|e| Error::IndexFormat(format!("encoding body: {e}")))?;
        out.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut input = BufReader::new(file);
        let mut header = [0u8; 34];
        input
            .read_exact(&mut header)
            .map_err(|_| Error::IndexFormat("truncated header".into()))?;

        if header[0..8] != INDEX_MAGIC {
            return Err(Error::IndexFormat("bad magic".into()));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != INDEX_FORMAT_VERSION {
            return Err(Error::IndexFormat(format!(
                "format version {version}, this build reads {INDEX_FORMAT_VERSION}"
            )));
        }
        if header[12] != S::BYTES {
            return Err(Error::IndexFormat(format!(
                "index stores {}-byte scalars, expected {}",
                header[12],
                S::BYTES
            )));
        }
        let mode = header[13];
        let dim = u32::from_le_bytes(header[14..18].try_into().unwrap()) as usize;
        let parents = u64::from_le_bytes(header[18..26].try_into().unwrap()) as usize;
        let children = u64::from_le_bytes(header[26..34].try_into().unwrap()) as usize;

        let body: Body<S> = bincode::deserialize_from(&mut input)
            .map_err(|e| Error::IndexFormat(format!("decoding body: {e}")))?;
        let consistent = body.corpus.dimension() == dim
            && body.corpus.num_parents() == parents
            && body.corpus.num_children() == children
            && mode_tag(body.params.ann_mode) == mode
            && body.graph.is_some() == (body.params.ann_mode == AnnMode::ApproximateGraph)
            && body.graph.as_ref().is_none_or(|g| g.len() == children);
        if !consistent {
            return Err(Error::IndexFormat("header does not match body".into()));
        }
        Ok(Index::assemble(body.corpus, body.params, body.graph))
    }
}

#[derive(Serialize)]
#[serde(bound = "S: Scalar")]
struct BodyRef<'a, S> {
    params: &'a IndexParams,
    corpus: &'a Corpus<S>,
    graph: &'a Option<Graph>,
}
