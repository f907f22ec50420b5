//! Dataset CSV files: header `f0,…,f{d−1},label`, one sample per row.
//! The label column holds a class index or `ood` (`-1` is accepted too).

use std::fs::File;
use std::io::Write;
use std::path::Path;

use evidra_core::datagen::{Dataset, Label};
use evidra_core::Matrix;

use crate::error::{CliError, CliResult};

fn data_err(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {msg}", path.display()))
}

fn parse_label(cell: &str) -> Option<Label> {
    if cell.eq_ignore_ascii_case("ood") || cell == "-1" {
        return Some(Label::Ood);
    }
    cell.parse::<usize>().ok().map(Label::Class)
}

/// Reads a dataset, naming it after the file stem.
///
/// Errors cite the 1-based line number (the header is line 1) and the
/// column name.
pub fn load_csv(path: &Path) -> CliResult<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader.headers().map_err(|e| data_err(path, format!("cannot read header: {e}")))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let d = cols.len().saturating_sub(1);
    let well_formed = cols.len() >= 2 && cols[d] == "label" && cols[..d].iter().enumerate().all(|(j, c)| *c == format!("f{j}"));
    if !well_formed {
        return Err(data_err(path, format!("malformed header {:?}; expected f0,…,f{{d-1}},label", header.iter().collect::<Vec<_>>().join(","))));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, .. } => data_err(path, format!("line {line}: expected {} fields, found {len}", d + 1)),
            _ => data_err(path, format!("line {line}: {e}")),
        })?;
        for (j, cell) in record.iter().take(d).enumerate() {
            let v: f64 = cell.parse().map_err(|_| data_err(path, format!("line {line}, column f{j}: {cell:?} is not a number")))?;
            if !v.is_finite() {
                return Err(data_err(path, format!("line {line}, column f{j}: non-finite value {cell:?}")));
            }
            data.push(v);
        }
        let cell = &record[d];
        labels.push(parse_label(cell).ok_or_else(|| data_err(path, format!("line {line}, column label: {cell:?} is neither a class index nor \"ood\"")))?);
    }
    let name = path.file_stem().map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    let features = Matrix::from_vec(labels.len(), d, data)?;
    Ok(Dataset::new(name, features, labels)?)
}

/// Writes a dataset in the format [`load_csv`] reads. Values are printed in
/// shortest round-trip form, so a reload is bit-exact.
pub fn write_csv(path: &Path, dataset: &Dataset) -> CliResult<()> {
    let mut out = String::new();
    let d = dataset.dim();
    for j in 0..d {
        out.push_str(&format!("f{j},"));
    }
    out.push_str("label\n");
    for (row, label) in dataset.features.iter_rows().zip(&dataset.labels) {
        for v in row {
            out.push_str(&format!("{v:?},"));
        }
        match label {
            Label::Class(c) => out.push_str(&c.to_string()),
            Label::Ood => out.push_str("ood"),
        }
        out.push('\n');
    }
    let mut file = File::create(path).map_err(|e| CliError::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| CliError::io(path, e))
}
