//! File formats: the `SCCN1` binary matrix, CSV matrices, voxel
//! coordinates, covariates, dataset directories and detection outputs.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SccnError, Violation};
use crate::model::{Bipartition, DetectionReport, Labeling, Matrix, Subject, SubjectDataset, Voxel, VoxelGrid};

pub const MATRIX_MAGIC: &[u8; 5] = b"SCCN1";
pub const DATASET_FORMAT: &str = "sccn-dataset-1";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const COORDS_FILE: &str = "coords.csv";
pub const COVARIATES_FILE: &str = "covariates.csv";
pub const CONNECTIVITY_DIR: &str = "connectivity";
pub const TRUTH_FILE: &str = "truth.json";
pub const REPORT_FILE: &str = "report.json";
pub const PARTITION_FILE: &str = "partition.csv";
pub const REORDERED_FILE: &str = "reordered_W.csv";

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| SccnError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| SccnError::io(parent, e))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| SccnError::io(path, e))?))
}

fn invalid(msg: String) -> SccnError {
    SccnError::Validation(vec![Violation::Other(msg)])
}

fn csv_err(path: &Path, e: csv::Error) -> SccnError {
    SccnError::Parse(format!("{}: {e}", path.display()))
}

/// `SCCN1`, `u32` rows, `u32` cols, then row-major little-endian `f64`.
pub fn write_matrix_bin(path: &Path, m: &Matrix) -> Result<()> {
    let (rows, cols) = m.shape();
    let dims = |v: usize| {
        u32::try_from(v).map_err(|_| SccnError::InvalidArgument(format!("dimension {v} exceeds u32")))
    };
    let mut out = create(path)?;
    let mut buf = Vec::with_capacity(13 + 8 * rows * cols);
    buf.extend_from_slice(MATRIX_MAGIC);
    buf.extend_from_slice(&dims(rows)?.to_le_bytes());
    buf.extend_from_slice(&dims(cols)?.to_le_bytes());
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf).and_then(|_| out.flush()).map_err(|e| SccnError::io(path, e))
}

pub fn read_matrix_bin(path: &Path) -> Result<Matrix> {
    let mut bytes = Vec::new();
    BufReader::new(open(path)?)
        .read_to_end(&mut bytes)
        .map_err(|e| SccnError::io(path, e))?;
    decode_matrix(&bytes).map_err(|e| SccnError::Parse(format!("{}: {e}", path.display())))
}

pub fn decode_matrix(bytes: &[u8]) -> std::result::Result<Matrix, String> {
    if bytes.len() < 13 || &bytes[..5] != MATRIX_MAGIC {
        return Err("not an SCCN1 matrix".into());
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let body = &bytes[13..];
    if body.len() != 8 * rows * cols {
        return Err(format!(
            "{rows}x{cols} matrix needs {} data bytes, found {}",
            8 * rows * cols,
            body.len()
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())
}

/// Headerless comma-separated rows.
pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| SccnError::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if cols.get_or_insert(rec.len()) != &rec.len() {
            return Err(SccnError::Parse(format!("{}: ragged row {}", path.display(), rows + 1)));
        }
        for field in rec.iter() {
            data.push(parse_f64(field, path)?);
        }
        rows += 1;
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

fn parse_f64(field: &str, path: &Path) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| SccnError::Parse(format!("{}: not a number: {field:?}", path.display())))
}

/// Reads either format, chosen by the leading magic bytes.
pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let mut head = [0u8; 5];
    let n = open(path)?.read(&mut head).map_err(|e| SccnError::io(path, e))?;
    if n == 5 && &head == MATRIX_MAGIC {
        read_matrix_bin(path)
    } else {
        read_matrix_csv(path)
    }
}

/// Writes `.csv` paths as CSV and anything else as `SCCN1`.
pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        write_matrix_csv(path, m)
    } else {
        write_matrix_bin(path, m)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CoordRow {
    region: String,
    voxel_id: u32,
    x: i32,
    y: i32,
    z: i32,
}

/// Header `region,voxel_id,x,y,z`; regions in the given order.
pub fn write_coords(path: &Path, grids: &[&VoxelGrid]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for g in grids {
        for v in &g.voxels {
            w.serialize(CoordRow {
                region: g.region_id.clone(),
                voxel_id: v.id,
                x: v.x,
                y: v.y,
                z: v.z,
            })
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| SccnError::io(path, e))
}

/// One grid per region, in order of first appearance; rows keep file order.
pub fn read_coords(path: &Path) -> Result<Vec<VoxelGrid>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let mut regions: Vec<(String, Vec<Voxel>)> = Vec::new();
    for row in r.deserialize::<CoordRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let voxel = Voxel {
            id: row.voxel_id,
            x: row.x,
            y: row.y,
            z: row.z,
        };
        match regions.iter_mut().find(|(id, _)| *id == row.region) {
            Some((_, vs)) => vs.push(voxel),
            None => regions.push((row.region, vec![voxel])),
        }
    }
    regions
        .into_iter()
        .map(|(id, vs)| VoxelGrid::new(id, vs))
        .collect()
}

/// Exactly two regions, in file order, or the one named pair.
pub fn read_region_pair(path: &Path, names: Option<(&str, &str)>) -> Result<(VoxelGrid, VoxelGrid)> {
    let mut grids = read_coords(path)?;
    match names {
        Some((a, b)) => {
            let mut take = |name: &str| {
                grids
                    .iter()
                    .position(|g| g.region_id == name)
                    .map(|k| grids.remove(k))
                    .ok_or_else(|| SccnError::InvalidArgument(format!("region {name} not in {}", path.display())))
            };
            let ga = take(a)?;
            let gb = take(b)?;
            Ok((ga, gb))
        }
        None if grids.len() == 2 => {
            let gb = grids.pop().unwrap();
            Ok((grids.pop().unwrap(), gb))
        }
        None => Err(SccnError::InvalidArgument(format!(
            "{} holds {} regions, expected 2",
            path.display(),
            grids.len()
        ))),
    }
}

/// Header `subject_id,<covariate names>`.
pub fn write_covariates(path: &Path, ds: &SubjectDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let header = std::iter::once("subject_id").chain(ds.covariate_names.iter().map(|s| s.as_str()));
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for s in &ds.subjects {
        let row = std::iter::once(s.subject_id.clone()).chain(s.covariates.iter().map(|v| v.to_string()));
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| SccnError::io(path, e))
}

/// Covariate names and `(subject_id, covariates)` rows.
pub fn read_covariates(path: &Path) -> Result<(Vec<String>, Vec<(String, Vec<f64>)>)> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.get(0) != Some("subject_id") {
        return Err(SccnError::Parse(format!("{}: first column must be subject_id", path.display())));
    }
    let names: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let vals = rec.iter().skip(1).map(|f| parse_f64(f, path)).collect::<Result<Vec<f64>>>()?;
        rows.push((rec[0].to_string(), vals));
    }
    Ok((names, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub region_a: String,
    pub region_b: String,
    pub n: usize,
    pub m: usize,
    pub subjects: usize,
    pub primary: String,
    /// Digest of the generating simulation spec, when simulated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_digest: Option<String>,
    pub seed: Option<u64>,
}

fn subject_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(CONNECTIVITY_DIR).join(format!("{id}.bin"))
}

fn check_subject_id(id: &str) -> Result<()> {
    let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && id != "." && id != "..";
    if ok {
        Ok(())
    } else {
        Err(SccnError::InvalidArgument(format!("subject_id {id:?} is not a safe file name")))
    }
}

/// Writes `manifest.json`, `coords.csv`, `covariates.csv` and one `SCCN1`
/// matrix per subject under `connectivity/`.
pub fn write_dataset(
    dir: &Path,
    ds: &SubjectDataset,
    ga: &VoxelGrid,
    gb: &VoxelGrid,
    spec_digest: Option<String>,
    seed: Option<u64>,
) -> Result<()> {
    for s in &ds.subjects {
        check_subject_id(&s.subject_id)?;
    }
    let (n, m) = ds.shape();
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        region_a: ga.region_id.clone(),
        region_b: gb.region_id.clone(),
        n,
        m,
        subjects: ds.len(),
        primary: ds.primary_name().to_string(),
        spec_digest,
        seed,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    write_coords(&dir.join(COORDS_FILE), &[ga, gb])?;
    write_covariates(&dir.join(COVARIATES_FILE), ds)?;
    for s in &ds.subjects {
        write_matrix_bin(&subject_path(dir, &s.subject_id), &s.connectivity)?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format != DATASET_FORMAT {
        return Err(SccnError::Parse(format!("unknown dataset format {:?}", manifest.format)));
    }
    Ok(manifest)
}

/// Reads a directory written by [`write_dataset`]. Subjects keep the row
/// order of `covariates.csv`.
pub fn read_dataset(dir: &Path) -> Result<(SubjectDataset, VoxelGrid, VoxelGrid)> {
    let manifest = read_manifest(dir)?;
    let (ga, gb) = read_region_pair(
        &dir.join(COORDS_FILE),
        Some((&manifest.region_a, &manifest.region_b)),
    )?;
    let (names, rows) = read_covariates(&dir.join(COVARIATES_FILE))?;
    let primary_index = names
        .iter()
        .position(|n| *n == manifest.primary)
        .ok_or_else(|| SccnError::Parse(format!("primary covariate {} missing", manifest.primary)))?;
    if rows.len() != manifest.subjects {
        return Err(SccnError::Parse(format!(
            "manifest lists {} subjects, covariates.csv {}",
            manifest.subjects,
            rows.len()
        )));
    }
    let subjects = rows
        .into_iter()
        .map(|(id, covariates)| {
            check_subject_id(&id)?;
            let connectivity = read_matrix_bin(&subject_path(dir, &id))?;
            Ok(Subject {
                subject_id: id,
                covariates,
                connectivity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = SubjectDataset {
        subjects,
        covariate_names: names,
        primary_index,
    };
    Ok((ds, ga, gb))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| SccnError::Parse(e.to_string()))?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(|e| SccnError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(BufReader::new(open(path)?))
        .map_err(|e| SccnError::Parse(format!("{}: {e}", path.display())))
}

/// Header `region,voxel_id,label`, region A first.
pub fn write_partition(path: &Path, part: &Bipartition, ga: &VoxelGrid, gb: &VoxelGrid) -> Result<()> {
    write_labels(path, &[(ga, &part.u_labels), (gb, &part.v_labels)])
}

/// `region,voxel_id,label` rows for each `(grid, labels)` in order.
pub fn write_labels(path: &Path, groups: &[(&VoxelGrid, &[usize])]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["region", "voxel_id", "label"]).map_err(|e| csv_err(path, e))?;
    for &(g, labels) in groups {
        if g.len() != labels.len() {
            return Err(SccnError::Dimension(format!(
                "region {} has {} voxels, partition {}",
                g.region_id,
                g.len(),
                labels.len()
            )));
        }
        for (v, l) in g.voxels.iter().zip(labels.iter()) {
            w.write_record([g.region_id.clone(), v.id.to_string(), l.to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| SccnError::io(path, e))
}

#[derive(Deserialize)]
struct PartitionRow {
    region: String,
    voxel_id: u32,
    label: usize,
}

/// Reads a `region,voxel_id,label` file covering every voxel of both
/// regions exactly once. Labels are compacted in order of first appearance.
pub fn read_partition(path: &Path, ga: &VoxelGrid, gb: &VoxelGrid) -> Result<Bipartition> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let mut raw = [vec![None; ga.len()], vec![None; gb.len()]];
    for row in r.deserialize::<PartitionRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let side = if row.region == ga.region_id {
            0
        } else if row.region == gb.region_id {
            1
        } else {
            return Err(invalid(format!("{}: unknown region {}", path.display(), row.region)));
        };
        let g = if side == 0 { ga } else { gb };
        let pos = g
            .voxels
            .iter()
            .position(|v| v.id == row.voxel_id)
            .ok_or_else(|| invalid(format!("{}: voxel {} not in region {}", path.display(), row.voxel_id, row.region)))?;
        if raw[side][pos].replace(row.label).is_some() {
            return Err(invalid(format!("{}: voxel {} of {} labeled twice", path.display(), row.voxel_id, row.region)));
        }
    }
    let mut labelings = Vec::new();
    for (g, labels) in [(ga, &raw[0]), (gb, &raw[1])] {
        let labels = labels
            .iter()
            .zip(&g.voxels)
            .map(|(l, v)| l.ok_or_else(|| invalid(format!("{}: voxel {} of {} has no label", path.display(), v.id, g.region_id))))
            .collect::<Result<Vec<usize>>>()?;
        labelings.push(Labeling::compact(&labels));
    }
    let v = labelings.pop().unwrap();
    Ok(Bipartition::new(labelings.pop().unwrap(), v))
}

/// `W` with rows and columns grouped by sub-area. The first row holds the
/// column voxel ids and the first column the row voxel ids.
pub fn write_reordered(path: &Path, w: &Matrix, part: &Bipartition, ga: &VoxelGrid, gb: &VoxelGrid) -> Result<()> {
    let rows = part.u().grouped_order();
    let cols = part.v().grouped_order();
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(create(path)?);
    let header = std::iter::once("voxel_id".to_string()).chain(cols.iter().map(|&j| gb.voxels[j].id.to_string()));
    out.write_record(header).map_err(|e| csv_err(path, e))?;
    for &i in &rows {
        let row = w.row(i);
        let rec = std::iter::once(ga.voxels[i].id.to_string()).chain(cols.iter().map(|&j| row[j].to_string()));
        out.write_record(rec).map_err(|e| csv_err(path, e))?;
    }
    out.flush().map_err(|e| SccnError::io(path, e))
}

/// `report.json`, `partition.csv` and `reordered_W.csv` in `dir`.
pub fn write_detection(dir: &Path, report: &DetectionReport, w: &Matrix, ga: &VoxelGrid, gb: &VoxelGrid) -> Result<()> {
    write_json(&dir.join(REPORT_FILE), report)?;
    write_partition(&dir.join(PARTITION_FILE), &report.partition, ga, gb)?;
    write_reordered(&dir.join(REORDERED_FILE), w, &report.partition, ga, gb)
}
