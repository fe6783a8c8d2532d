use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::MultiViewDataset;
use crate::error::{Error, Result};

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn records(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut out = Vec::new();
    for (i, rec) in reader(path)?.records().enumerate() {
        let rec = rec.map_err(|e| parse_error(path, i + 1, e.to_string()))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        out.push((i + 1, rec));
    }
    Ok(out)
}

/// Read a headerless numeric matrix.
pub(crate) fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let rows = records(path)?;
    let Some((_, first)) = rows.first() else {
        return Err(parse_error(path, 1, "file is empty"));
    };
    let width = first.len();
    let mut data = Vec::with_capacity(rows.len() * width);
    for (line, rec) in &rows {
        if rec.len() != width {
            return Err(parse_error(
                path,
                *line,
                format!("expected {width} columns, found {}", rec.len()),
            ));
        }
        for cell in rec.iter() {
            let value: f64 = cell
                .parse()
                .map_err(|_| parse_error(path, *line, format!("non-numeric cell {cell:?}")))?;
            data.push(value);
        }
    }
    Array2::from_shape_vec((rows.len(), width), data)
        .map_err(|e| parse_error(path, 1, e.to_string()))
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    records(path)?
        .into_iter()
        .map(|(line, rec)| {
            if rec.len() != 1 {
                return Err(parse_error(path, line, "expected one label per line"));
            }
            rec[0]
                .parse::<usize>()
                .map_err(|_| parse_error(path, line, format!("label {:?} is not a class index", &rec[0])))
        })
        .collect()
}

/// Read an `N × V` mask of 0/1 cells.
pub fn read_mask(path: &Path) -> Result<Array2<bool>> {
    let m = read_matrix(path)?;
    if let Some(((r, _), _)) = m.indexed_iter().find(|(_, &x)| x != 0.0 && x != 1.0) {
        return Err(parse_error(path, r + 1, "mask cells must be 0 or 1"));
    }
    Ok(m.mapv(|x| x == 1.0))
}

pub fn write_mask(path: &Path, mask: &Array2<bool>) -> Result<()> {
    let mut out = String::with_capacity(mask.len() * 2);
    for row in mask.rows() {
        let cells: Vec<&str> = row.iter().map(|&m| if m { "1" } else { "0" }).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut out = String::with_capacity(m.len() * 12);
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write `bytes` to a sibling temporary file, then rename it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn view_path(root: &Path, v: usize) -> PathBuf {
    root.join(format!("view_{v}.csv"))
}

/// Load `view_0.csv … view_{V-1}.csv`, `labels.csv` and the optional
/// `mask.csv` from a directory.
pub fn load_dataset(root: &Path) -> Result<MultiViewDataset> {
    if !root.is_dir() {
        return Err(Error::InvalidDataset(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let mut views = Vec::new();
    while view_path(root, views.len()).is_file() {
        views.push(read_matrix(&view_path(root, views.len()))?);
    }
    if views.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "no view_0.csv in {}",
            root.display()
        )));
    }
    let labels = read_labels(&root.join("labels.csv"))?;
    let mask_path = root.join("mask.csv");
    let mask = if mask_path.is_file() {
        Some(read_mask(&mask_path)?)
    } else {
        None
    };
    MultiViewDataset::new(views, labels, mask)
}

/// Write a dataset in the layout read by [`load_dataset`], including its mask.
pub fn save_dataset(data: &MultiViewDataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for (v, view) in data.views().iter().enumerate() {
        write_matrix(&view_path(root, v), view)?;
    }
    let labels: String = data.labels().iter().map(|y| format!("{y}\n")).collect();
    let path = root.join("labels.csv");
    fs::write(&path, labels).map_err(|e| Error::io(&path, e))?;
    write_mask(&root.join("mask.csv"), data.mask())
}
