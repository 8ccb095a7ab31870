//! Staged output files and run manifests.
//!
//! Files are written into a hidden staging directory and moved into the
//! output directory only when the whole command succeeded, so a failed run
//! never leaves a mix of old and new artifacts behind.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dissem_core::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct Staging {
    out: PathBuf,
    dir: PathBuf,
    files: Vec<String>,
}

impl Staging {
    pub fn new(out: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(out)?;
        let dir = out.join(format!(".staging-{command}"));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(Staging {
            out: out.to_path_buf(),
            dir,
            files: Vec::new(),
        })
    }

    /// Writes `name` (a relative path) through `f`.
    pub fn write<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(fs::File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
            writeln!(w)
        })
    }

    /// Hashes of the staged files, keyed by name.
    pub fn hashes(&self) -> Result<BTreeMap<String, String>> {
        self.files
            .iter()
            .map(|f| Ok((f.clone(), sha256_file(&self.dir.join(f))?)))
            .collect()
    }

    /// Moves every staged file into the output directory.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut moved = Vec::with_capacity(self.files.len());
        for f in &self.files {
            let target = self.out.join(f);
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::rename(self.dir.join(f), &target)?;
            moved.push(target);
        }
        fs::remove_dir_all(&self.dir)?;
        Ok(moved)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if self.dir.exists() {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

/// Everything needed to repeat a command bit-for-bit.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize, S: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: &'a C,
    pub seeds: Vec<u64>,
    /// SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every output file except the manifest itself.
    pub outputs: BTreeMap<String, String>,
    pub stats: S,
}

pub fn input_hashes(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
        .collect()
}
