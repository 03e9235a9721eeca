//! `MQAG` graph files: magic, u32 version, u32 N, u32 R, u32 entry, then for
//! each vertex a u32 degree followed by its u32 neighbor ids. Little-endian.

use std::fs;
use std::path::Path;

use super::NavGraph;
use crate::catalog::LeReader;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MQAG";
const VERSION: u32 = 1;

impl NavGraph {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(20 + 4 * (self.len() + self.edge_count()));
        buf.extend_from_slice(MAGIC);
        for x in [VERSION, self.len() as u32, self.r as u32, self.entry] {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for list in &self.adjacency {
            buf.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for v in list {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = LeReader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, expected MQAG".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported graph version {version}")));
        }
        let n = r.u32()? as usize;
        let max_degree = r.u32()? as usize;
        let entry = r.u32()?;
        if n > 0 && entry as usize >= n {
            return Err(Error::Format(format!("entry {entry} out of range for {n} vertices")));
        }
        let mut adjacency = Vec::with_capacity(n.min(r.remaining() / 4));
        for _ in 0..n {
            let degree = r.u32()? as usize;
            if degree * 4 > r.remaining() {
                return Err(Error::Format("truncated adjacency list".into()));
            }
            adjacency.push((0..degree).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            adjacency,
            entry,
            r: max_degree,
        })
    }
}

pub fn save_graph(graph: &NavGraph, path: impl AsRef<Path>) -> Result<u64> {
    let bytes = graph.to_bytes();
    fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<NavGraph> {
    NavGraph::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let g = NavGraph::from_parts(vec![vec![1, 2], vec![0], vec![]], 1, 2);
        let bytes = g.to_bytes();
        assert_eq!(&bytes[..4], b"MQAG");
        assert_eq!(bytes.len(), 20 + 3 * 4 + 3 * 4);
        assert_eq!(NavGraph::from_bytes(&bytes).unwrap(), g);
    }

    #[test]
    fn corrupt_files() {
        let g = NavGraph::from_parts(vec![vec![1, 2], vec![0], vec![1]], 0, 2);
        let good = g.to_bytes();
        let mut bad = good.clone();
        bad[1] = b'X';
        assert!(matches!(NavGraph::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(NavGraph::from_bytes(&good[..good.len() - 2]), Err(Error::Format(_))));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(NavGraph::from_bytes(&long), Err(Error::Format(_))));
        let mut version = good;
        version[4] = 9;
        assert!(matches!(NavGraph::from_bytes(&version), Err(Error::Format(_))));
    }
}
