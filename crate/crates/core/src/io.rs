//! On-disk artifacts: the weighted sample CSV, the run manifest and the tree.
//!
//! The CSV starts with a `# schema=1` comment line, then a header
//! `x0,…,x{m-1},weight,log_density,subspace_id,chain_id`. Floats are written
//! in scientific notation with 17 significant digits, so values round-trip
//! exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::SampleMatrix;
use crate::partition::{PartitionTree, TreeJson};
use crate::pipeline::Manifest;
use crate::stitch::WeightedSampleSet;

pub const CSV_SCHEMA: u32 = 1;
const TRAILING: [&str; 4] = ["weight", "log_density", "subspace_id", "chain_id"];

fn header(dim: usize) -> String {
    let mut cols: Vec<String> = (0..dim).map(|j| format!("x{j}")).collect();
    cols.extend(TRAILING.iter().map(|s| s.to_string()));
    cols.join(",")
}

pub fn write_samples_csv<W: Write>(ws: &WeightedSampleSet, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "# schema={CSV_SCHEMA}")?;
    writeln!(out, "{}", header(ws.dim()))?;
    let mut line = String::new();
    for i in 0..ws.len() {
        line.clear();
        for v in ws.samples.row(i) {
            write!(line, "{v:.16e},").unwrap();
        }
        write!(
            line,
            "{:.16e},{:.16e},{},{}",
            ws.weights[i], ws.log_densities[i], ws.subspace_ids[i], ws.chain_ids[i]
        )
        .unwrap();
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_samples_file(ws: &WeightedSampleSet, path: &Path) -> Result<()> {
    write_samples_csv(ws, fs::File::create(path)?)
}

/// Weighted samples as read back from a CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub samples: SampleMatrix,
    pub weights: Vec<f64>,
    pub log_densities: Vec<f64>,
    pub subspace_ids: Vec<u32>,
    pub chain_ids: Vec<u32>,
}

impl SampleTable {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }

    /// Contiguous ranges of each (subspace, chain) pair.
    pub fn chain_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let keys: Vec<(u32, u32)> = self
            .subspace_ids
            .iter()
            .copied()
            .zip(self.chain_ids.iter().copied())
            .collect();
        crate::sampler::contiguous_runs(&keys)
    }

    /// Ranges of rows per subspace, keyed by subspace id.
    pub fn subspace_ranges(&self) -> Vec<(u32, std::ops::Range<usize>)> {
        crate::sampler::contiguous_runs(&self.subspace_ids)
            .into_iter()
            .map(|r| (self.subspace_ids[r.start], r))
            .collect()
    }
}

pub fn read_samples_csv<R: Read>(input: R) -> Result<SampleTable> {
    let mut lines = BufReader::new(input).lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::Schema("empty file".into()))?;
    let first = first?;
    let version = first
        .trim()
        .strip_prefix("# schema=")
        .ok_or_else(|| Error::Schema("missing `# schema=` line".into()))?;
    if version.trim() != CSV_SCHEMA.to_string() {
        return Err(Error::Schema(format!("unsupported schema version {}", version.trim())));
    }
    let (_, head) = lines.next().ok_or_else(|| Error::Schema("missing header".into()))?;
    let head = head?;
    let cols: Vec<&str> = head.trim().split(',').collect();
    if cols.len() < TRAILING.len() + 1 {
        return Err(Error::Schema(format!("header has only {} columns", cols.len())));
    }
    let dim = cols.len() - TRAILING.len();
    for (j, c) in cols.iter().enumerate() {
        let expect = if j < dim {
            format!("x{j}")
        } else {
            TRAILING[j - dim].to_string()
        };
        if *c != expect {
            return Err(Error::Schema(format!("column {} is `{c}`, expected `{expect}`", j + 1)));
        }
    }
    let mut t = SampleTable {
        samples: SampleMatrix::new(dim),
        weights: Vec::new(),
        log_densities: Vec::new(),
        subspace_ids: Vec::new(),
        chain_ids: Vec::new(),
    };
    let mut row = vec![0.0; dim];
    for (ln, line) in lines {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Schema(format!(
                "line {}: {} fields, expected {}",
                ln + 1,
                fields.len(),
                cols.len()
            )));
        }
        let float = |j: usize| -> Result<f64> {
            fields[j]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Schema(format!("line {}: column `{}` is not a number", ln + 1, cols[j])))
        };
        let int = |j: usize| -> Result<u32> {
            fields[j]
                .trim()
                .parse::<u32>()
                .map_err(|_| Error::Schema(format!("line {}: column `{}` is not an integer", ln + 1, cols[j])))
        };
        for (j, r) in row.iter_mut().enumerate() {
            *r = float(j)?;
        }
        t.samples.push(&row);
        t.weights.push(float(dim)?);
        t.log_densities.push(float(dim + 1)?);
        t.subspace_ids.push(int(dim + 2)?);
        t.chain_ids.push(int(dim + 3)?);
    }
    Ok(t)
}

pub fn read_samples_file(path: &Path) -> Result<SampleTable> {
    read_samples_csv(fs::File::open(path)?)
}

pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("manifest: {e}")))
}

pub fn read_tree(path: &Path) -> Result<PartitionTree> {
    let text = fs::read_to_string(path)?;
    let json: TreeJson = serde_json::from_str(&text).map_err(|e| Error::Schema(format!("tree: {e}")))?;
    PartitionTree::from_json(&json)
}

/// File names written for a run.
pub const SAMPLES_FILE: &str = "samples.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TREE_FILE: &str = "tree.json";

/// Writes samples, manifest and tree into `dir`, creating it if needed.
pub fn write_run(result: &crate::pipeline::RunResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_samples_file(&result.samples, &dir.join(SAMPLES_FILE))?;
    write_json(&result.manifest, &dir.join(MANIFEST_FILE))?;
    write_json(&result.tree.to_json(), &dir.join(TREE_FILE))?;
    Ok(())
}
