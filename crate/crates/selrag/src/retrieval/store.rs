//! Binary persistence of codebase indexes.
//!
//! Layout (version 1): magic `SRIX`, format version as little-endian u32,
//! header length as little-endian u32, a JSON header (embedder spec,
//! retrieval mode, dimension, pair metadata), then per entry the semantic,
//! structural and hybrid vectors as little-endian 32-bit floats. Writing is
//! deterministic: identical indexes serialize to identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbedderSpec, FeatureVector};
use crate::error::{Error, Result};
use crate::retrieval::{BugFixPair, CodebaseIndex, IndexEntry, RetrievalMode};

const MAGIC: &[u8; 4] = b"SRIX";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    embedder: EmbedderSpec,
    mode: RetrievalMode,
    dim: usize,
    pairs: Vec<BugFixPair>,
}

pub fn save_index(index: &CodebaseIndex, path: &Path) -> Result<()> {
    let header = Header {
        embedder: index.embedder.clone(),
        mode: index.mode,
        dim: index.embedder.dim,
        pairs: index.entries.iter().map(|e| e.pair.clone()).collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for entry in &index.entries {
        for vector in [&entry.semantic, &entry.structural, &entry.hybrid] {
            write_vector(&mut out, vector, index.embedder.dim)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn write_vector<W: Write>(out: &mut W, vector: &FeatureVector, dim: usize) -> Result<()> {
    if vector.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: vector.dim(),
        });
    }
    for value in vector.as_slice() {
        out.write_all(&(*value as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn load_index(path: &Path) -> Result<CodebaseIndex> {
    let file = File::open(path).map_err(|_| Error::IndexMissing(path.display().to_string()))?;
    let mut input = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::IndexFormat("bad magic, not an index file".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::IndexFormat(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let header_len = read_u32(&mut input)? as usize;
    let mut header_bytes = vec![0u8; header_len];
    read_exact(&mut input, &mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::IndexFormat(format!("header: {e}")))?;

    let mut entries = Vec::with_capacity(header.pairs.len());
    for pair in header.pairs {
        let semantic = read_vector(&mut input, header.dim)?;
        let structural = read_vector(&mut input, header.dim)?;
        let hybrid = read_vector(&mut input, header.dim)?;
        entries.push(IndexEntry {
            pair,
            semantic,
            structural,
            hybrid,
        });
    }
    Ok(CodebaseIndex {
        entries,
        embedder: header.embedder,
        mode: header.mode,
    })
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|e| Error::IndexFormat(format!("truncated file: {e}")))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(input, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_vector<R: Read>(input: &mut R, dim: usize) -> Result<FeatureVector> {
    let mut bytes = vec![0u8; dim * 4];
    read_exact(input, &mut bytes)?;
    let values = bytes
        .chunks_exact(4)
        .map(|chunk| f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64)
        .collect();
    FeatureVector::new(values).map_err(|e| Error::IndexFormat(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::Embedder;
    use crate::retrieval::build_index;

    fn sample_pairs() -> Vec<BugFixPair> {
        (0..3)
            .map(|i| BugFixPair {
                id: format!("p{i}"),
                buggy_code: format!("int x{i} = {i} ;"),
                fixed_code: format!("int x{i} = {} ;", i + 1),
                language: "java".to_string(),
            })
            .collect()
    }

    #[test]
    fn round_trip_preserves_structure() {
        let embedder = Embedder::baseline();
        let (index, _) = build_index(&sample_pairs(), &embedder, RetrievalMode::Hybrid).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codebase.idx");
        save_index(&index, &path).unwrap();
        let loaded = load_index(&path).unwrap();
        assert_eq!(loaded.len(), index.len());
        assert_eq!(loaded.embedder, index.embedder);
        assert_eq!(loaded.mode, index.mode);
        for (a, b) in index.entries.iter().zip(&loaded.entries) {
            assert_eq!(a.pair, b.pair);
            // Vectors go through f32 on disk.
            for (x, y) in a.hybrid.as_slice().iter().zip(b.hybrid.as_slice()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_builds_persist_to_identical_bytes() {
        let embedder = Embedder::baseline();
        let dir = tempfile::tempdir().unwrap();
        let mut digests = Vec::new();
        for name in ["a.idx", "b.idx"] {
            let (index, _) =
                build_index(&sample_pairs(), &embedder, RetrievalMode::Hybrid).unwrap();
            let path = dir.path().join(name);
            save_index(&index, &path).unwrap();
            digests.push(std::fs::read(&path).unwrap());
        }
        assert_eq!(digests[0], digests[1]);
    }

    #[test]
    fn missing_file_reports_index_missing() {
        let err = load_index(Path::new("/nonexistent/codebase.idx")).unwrap_err();
        assert!(matches!(err, Error::IndexMissing(_)));
    }

    #[test]
    fn garbage_file_reports_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.idx");
        std::fs::write(&path, b"not an index").unwrap();
        assert!(matches!(load_index(&path), Err(Error::IndexFormat(_))));
    }
}
