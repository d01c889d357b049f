//! Checkpoint directories: `meta.json` plus one `branch_<i>.bin` per branch.
//!
//! Each branch file is a sequence of arrays, every array being a text header
//! `name rows cols\n` followed by `rows * cols` little-endian `f32` values in
//! row-major order.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{BranchParams, ModelConfig, TENSOR_NAMES};
use crate::error::{Error, Result};
use crate::fleet_graph::GraphMeta;

pub const FORMAT_VERSION: &str = "gtrend-checkpoint/1";

/// A trained model: the config plus `k + 1` branches. Branches trained on
/// temporal slices have a series length shorter than `config.series_len` and
/// are applied window by window.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub branches: Vec<BranchParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: String,
    pub config: ModelConfig,
    pub n_branches: usize,
    pub branch_series_len: Vec<usize>,
    #[serde(default)]
    pub graph: Option<GraphMeta>,
}

fn write_branch(path: &Path, params: &BranchParams) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for (name, t) in TENSOR_NAMES.iter().zip(params.tensors()) {
        writeln!(w, "{name} {} {}", t.nrows(), t.ncols())?;
        for v in t.iter() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_branch(path: &Path, template: &mut BranchParams) -> Result<()> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
    for (name, slot) in TENSOR_NAMES.iter().zip(template.tensors_mut()) {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != *name {
            return Err(bad(format!("expected header for {name}, got {:?}", header.trim_end())));
        }
        let rows: usize = parts[1].parse().map_err(|_| bad(format!("bad rows in {header:?}")))?;
        let cols: usize = parts[2].parse().map_err(|_| bad(format!("bad cols in {header:?}")))?;
        let mut buf = vec![0u8; rows * cols * 4];
        r.read_exact(&mut buf)?;
        let data: Vec<f64> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        *slot = Array2::from_shape_vec((rows, cols), data).expect("length matches header");
    }
    Ok(())
}

impl TrainedModel {
    pub fn save(&self, dir: &Path, graph: Option<GraphMeta>) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = CheckpointMeta {
            format_version: FORMAT_VERSION.to_string(),
            config: self.config.clone(),
            n_branches: self.branches.len(),
            branch_series_len: self.branches.iter().map(|b| b.series_len()).collect(),
            graph,
        };
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        for (i, b) in self.branches.iter().enumerate() {
            write_branch(&dir.join(format!("branch_{i}.bin")), b)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, CheckpointMeta)> {
        let text = std::fs::read_to_string(dir.join("meta.json"))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("meta.json: {e}")))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {:?} does not match {FORMAT_VERSION:?}",
                meta.format_version
            )));
        }
        meta.config.validate()?;
        if meta.n_branches != meta.config.n_branches() || meta.branch_series_len.len() != meta.n_branches {
            return Err(Error::Checkpoint("branch count disagrees with config".into()));
        }
        let mut branches = Vec::with_capacity(meta.n_branches);
        for (i, &len) in meta.branch_series_len.iter().enumerate() {
            let mut b = BranchParams::zeros(len, meta.config.hidden_dim, meta.config.latent_dim);
            let expected = b.clone();
            read_branch(&dir.join(format!("branch_{i}.bin")), &mut b)?;
            if !b.same_shape(&expected) {
                return Err(Error::Checkpoint(format!("branch {i} tensor shapes disagree with meta.json")));
            }
            branches.push(b);
        }
        Ok((
            Self {
                config: meta.config.clone(),
                branches,
            },
            meta,
        ))
    }
}
