//! Artifact files: value-field dumps, region masks, trajectories and the
//! content-hashed manifest that lists every file written by a run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hjb::{Grid, TerminalSelector, ValueField};
use crate::model::ValidatedProblem;
use crate::regions::{region_boundary, SwitchingRegions};
use crate::simulate::Trajectory;

pub const MANIFEST_FILE: &str = "manifest.json";
/// Wall-clock timings live outside the manifest so reruns hash identically.
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed value dump: {0}")]
    Malformed(String),
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub files: Vec<ManifestEntry>,
    /// Hash over the sorted `(path, sha256)` list.
    pub artifacts_digest: String,
    pub timings_file: String,
}

impl Manifest {
    pub fn digest(files: &[ManifestEntry]) -> String {
        let mut h = Sha256::new();
        for f in files {
            h.update(f.path.as_bytes());
            h.update([0]);
            h.update(f.sha256.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn read(dir: &Path) -> Result<Manifest, IoError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| IoError::File { path, source })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Paths whose current content no longer matches the recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>, IoError> {
        let mut bad = Vec::new();
        for f in &self.files {
            let path = dir.join(&f.path);
            let bytes = fs::read(&path).map_err(|source| IoError::File { path, source })?;
            if sha256_hex(&bytes) != f.sha256 {
                bad.push(f.path.clone());
            }
        }
        Ok(bad)
    }
}

/// Writes files under one output directory and records each in the
/// manifest. All writes go through this type.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    files: BTreeMap<String, ManifestEntry>,
    timings: BTreeMap<String, f64>,
}

impl ArtifactWriter {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, IoError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| IoError::File {
            path: root.clone(),
            source,
        })?;
        Ok(ArtifactWriter {
            root,
            files: BTreeMap::new(),
            timings: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<(), IoError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| IoError::File {
                path: parent.to_owned(),
                source,
            })?;
        }
        fs::write(&path, bytes).map_err(|source| IoError::File { path, source })?;
        self.files.insert(
            rel.to_owned(),
            ManifestEntry {
                path: rel.to_owned(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<(), IoError> {
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), IoError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(rel, &text)
    }

    pub fn record_timing(&mut self, label: &str, seconds: f64) {
        self.timings.insert(label.to_owned(), seconds);
    }

    /// Writes the timings file and the manifest, and returns the manifest.
    pub fn finish(self, command: &str, config_hash: &str) -> Result<Manifest, IoError> {
        let files: Vec<ManifestEntry> = self.files.into_values().collect();
        let manifest = Manifest {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config_hash: config_hash.to_owned(),
            artifacts_digest: Manifest::digest(&files),
            files,
            timings_file: TIMINGS_FILE.to_owned(),
        };
        let write = |name: &str, text: String| {
            let path = self.root.join(name);
            fs::write(&path, text).map_err(|source| IoError::File { path, source })
        };
        write(
            TIMINGS_FILE,
            serde_json::to_string_pretty(&self.timings)? + "\n",
        )?;
        write(
            MANIFEST_FILE,
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(manifest)
    }
}

/// Sidecar describing a raw value dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFieldMeta {
    pub dtype: String,
    /// Array order, slowest index first.
    pub layout: Vec<String>,
    pub n_regimes: usize,
    pub grid: Grid,
    pub terminal: TerminalSelector,
    pub problem_hash: String,
    pub start_value: f64,
}

/// Little-endian `f64` dump laid out `[regime][time][space]`.
pub fn value_field_bytes(v: &ValueField) -> Vec<u8> {
    v.as_slice().iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn value_field_meta(v: &ValueField) -> ValueFieldMeta {
    ValueFieldMeta {
        dtype: "f64le".into(),
        layout: vec!["regime".into(), "time".into(), "space".into()],
        n_regimes: v.n_regimes(),
        grid: *v.grid(),
        terminal: v.terminal(),
        problem_hash: v.problem().source_hash().to_owned(),
        start_value: v.start_value(),
    }
}

/// Writes `{stem}.bin` and `{stem}.json`.
pub fn write_value_field(
    w: &mut ArtifactWriter,
    stem: &str,
    v: &ValueField,
) -> Result<(), IoError> {
    w.write_bytes(&format!("{stem}.bin"), &value_field_bytes(v))?;
    w.write_json(&format!("{stem}.json"), &value_field_meta(v))
}

/// Decodes a dump written by [`write_value_field`].
pub fn read_value_field(bytes: &[u8], meta: &ValueFieldMeta) -> Result<Vec<f64>, IoError> {
    let expected = meta.n_regimes * meta.grid.nodes_per_slice() * 8;
    if bytes.len() != expected {
        return Err(IoError::Malformed(format!(
            "{} bytes, expected {expected}",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// One nonempty mask, run-length encoded over the `[time][space]` order as
/// `[offset, length]` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedMask {
    pub from: usize,
    pub to: usize,
    pub count: usize,
    pub runs: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedRegions {
    pub nx: usize,
    pub nt: usize,
    pub tolerance: f64,
    pub masks: Vec<EncodedMask>,
}

pub fn encode_regions(r: &SwitchingRegions) -> EncodedRegions {
    let m = r.n_regimes();
    let mut masks = Vec::new();
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let mask = r.mask(i, j);
            let mut runs = Vec::new();
            let mut k = 0;
            while k < mask.len() {
                if mask[k] {
                    let start = k;
                    while k < mask.len() && mask[k] {
                        k += 1;
                    }
                    runs.push([start, k - start]);
                } else {
                    k += 1;
                }
            }
            if !runs.is_empty() {
                masks.push(EncodedMask {
                    from: i,
                    to: j,
                    count: runs.iter().map(|r| r[1]).sum(),
                    runs,
                });
            }
        }
    }
    EncodedRegions {
        nx: r.grid().nx,
        nt: r.grid().nt,
        tolerance: r.tolerance(),
        masks,
    }
}

/// `from,to,m,n,t,x` per switching node.
pub fn region_nodes_csv(r: &SwitchingRegions) -> String {
    let g = r.grid();
    let mut out = String::from("from,to,m,n,t,x\n");
    for i in 0..r.n_regimes() {
        for j in 0..r.n_regimes() {
            if i == j {
                continue;
            }
            for m in 0..=g.nt {
                for n in 0..g.nx {
                    if r.contains(i, j, m, n) {
                        out += &format!("{i},{j},{m},{n},{},{}\n", g.t(m), g.x(n));
                    }
                }
            }
        }
    }
    out
}

/// `from,to,m,n,t,x` per boundary cell of each mask.
pub fn region_boundary_csv(r: &SwitchingRegions) -> String {
    let g = r.grid();
    let mut out = String::from("from,to,m,n,t,x\n");
    for i in 0..r.n_regimes() {
        for j in 0..r.n_regimes() {
            if i == j {
                continue;
            }
            for (m, n) in region_boundary(r, i, j) {
                out += &format!("{i},{j},{m},{n},{},{}\n", g.t(m), g.x(n));
            }
        }
    }
    out
}

/// `path,t,x,regime` rows for paths simulated with step recording.
pub fn trajectories_csv(paths: &[(usize, &Trajectory)]) -> String {
    let mut out = String::from("path,t,x,regime\n");
    for (k, p) in paths {
        for s in &p.steps {
            out += &format!("{k},{},{},{}\n", s.time, s.position, s.regime);
        }
    }
    out
}

/// `path,arrival_time` for arriving paths.
pub fn arrivals_csv(paths: &[Trajectory]) -> String {
    let mut out = String::from("path,arrival_time\n");
    for (k, p) in paths.iter().enumerate() {
        if let Some(t) = p.arrival_time() {
            out += &format!("{k},{t}\n");
        }
    }
    out
}

/// Resolved problem written next to the artifacts, in model units.
pub fn problem_json(problem: &ValidatedProblem) -> serde_json::Value {
    serde_json::json!({
        "source_hash": problem.source_hash(),
        "model_units": problem.spec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::solve_backward;
    use crate::model::validate_problem;
    use crate::presets;
    use crate::regions::{default_tolerance, extract_regions};

    #[test]
    fn value_dump_round_trips() {
        let p = validate_problem(&presets::table2()).unwrap();
        let g = Grid::for_problem(&p, 21, 35).unwrap();
        let v = solve_backward(&p, &g, TerminalSelector::Model).unwrap();
        let bytes = value_field_bytes(&v);
        let back = read_value_field(&bytes, &value_field_meta(&v)).unwrap();
        assert_eq!(back, v.as_slice());
        assert!(read_value_field(&bytes[8..], &value_field_meta(&v)).is_err());
    }

    #[test]
    fn rle_matches_counts() {
        let p = validate_problem(&presets::table2()).unwrap();
        let g = Grid::for_problem(&p, 51, 140).unwrap();
        let v = solve_backward(&p, &g, TerminalSelector::Model).unwrap();
        let r = extract_regions(&v, default_tolerance(&v));
        let enc = encode_regions(&r);
        for m in &enc.masks {
            assert_eq!(m.count, r.count(m.from, m.to));
            for run in &m.runs {
                assert!(r.mask(m.from, m.to)[run[0]..run[0] + run[1]]
                    .iter()
                    .all(|&b| b));
            }
        }
        let listed: usize = enc.masks.iter().map(|m| m.count).sum();
        assert_eq!(region_nodes_csv(&r).lines().count(), listed + 1);
    }

    #[test]
    fn manifest_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::create(dir.path()).unwrap();
        w.write_text("a.csv", "x\n1\n").unwrap();
        w.write_json("sub/b.json", &vec![1, 2]).unwrap();
        w.record_timing("total", 0.5);
        let m = w.finish("test", "abc").unwrap();
        assert_eq!(m.files.len(), 2);
        assert_eq!(Manifest::read(dir.path()).unwrap(), m);
        assert!(m.verify(dir.path()).unwrap().is_empty());
        fs::write(dir.path().join("a.csv"), "x\n2\n").unwrap();
        assert_eq!(m.verify(dir.path()).unwrap(), vec!["a.csv".to_string()]);
    }
}
