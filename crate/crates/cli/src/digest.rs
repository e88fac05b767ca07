//! SHA-256 digests of run inputs.

use std::fs;
use std::io::{self, BufRead, Read};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub sha256: String,
    pub bytes: u64,
}

/// Incremental digest over files and directories.
#[derive(Debug, Clone, Default)]
pub struct Hasher {
    inner: Sha256,
    bytes: u64,
}

impl Hasher {
    pub fn update(&mut self, data: &[u8]) {
        self.inner.update(data);
        self.bytes += data.len() as u64;
    }

    /// Hashes a file's name and contents.
    pub fn file(&mut self, path: &Path) -> Result<()> {
        let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.inner.update((name.len() as u64).to_le_bytes());
        self.inner.update(name.as_bytes());
        self.inner.update((data.len() as u64).to_le_bytes());
        self.update(&data);
        Ok(())
    }

    /// Hashes the regular files directly inside `dir`, in name order.
    pub fn dir(&mut self, dir: &Path) -> Result<()> {
        let mut files: Vec<_> = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<io::Result<_>>()?;
        files.retain(|p| p.is_file());
        files.sort();
        for f in files {
            self.file(&f)?;
        }
        Ok(())
    }

    pub fn finish(self) -> InputDigest {
        InputDigest { sha256: hex::encode(self.inner.finalize()), bytes: self.bytes }
    }
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut h = Hasher::default();
    h.update(&data);
    Ok(h.finish())
}

pub fn digest_dir(dir: &Path) -> Result<InputDigest> {
    let mut h = Hasher::default();
    h.dir(dir)?;
    Ok(h.finish())
}

/// A buffered reader that hashes exactly the bytes its consumer takes, so a
/// stream abandoned part-way is digested up to the last line read.
pub struct HashingReader<R> {
    inner: R,
    hasher: Hasher,
}

impl<R: BufRead> HashingReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, hasher: Hasher::default() }
    }

    pub fn digest(&self) -> InputDigest {
        self.hasher.clone().finish()
    }
}

impl<R: BufRead> Read for HashingReader<R> {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        let n = {
            let buf = self.fill_buf()?;
            let n = buf.len().min(out.len());
            out[..n].copy_from_slice(&buf[..n]);
            n
        };
        self.consume(n);
        Ok(n)
    }
}

impl<R: BufRead> BufRead for HashingReader<R> {
    fn fill_buf(&mut self) -> io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        if let Ok(buf) = self.inner.fill_buf() {
            let n = amt.min(buf.len());
            self.hasher.update(&buf[..n]);
        }
        self.inner.consume(amt);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reader_digest_covers_consumed_lines_only() {
        let text = b"line one\nline two\nline three\n";
        let mut r = HashingReader::new(&text[..]);
        let mut line = String::new();
        r.read_line(&mut line).unwrap();
        r.read_line(&mut line).unwrap();
        let mut h = Hasher::default();
        h.update(b"line one\nline two\n");
        assert_eq!(r.digest(), h.finish());
    }

    #[test]
    fn full_read_matches_file_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        fs::write(&path, "abc\n").unwrap();
        let mut r = HashingReader::new(io::BufReader::new(fs::File::open(&path).unwrap()));
        io::copy(&mut r, &mut io::sink()).unwrap();
        let d = digest_file(&path).unwrap();
        assert_eq!(r.digest(), d);
        assert_eq!(d.sha256, "edeaaff3f1774ad2888673770c6d64097e391bc362d7d6fb34982ddf0efd18cb");
    }
}
