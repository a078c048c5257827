//! Minimal CSV reading/writing (RFC 4180 subset: numeric fields and bit
//! strings, comma separators, '.' decimal point, no quoting needed).

use nalgebra::DMatrix;
use relu_lawn::data::Dataset;
use relu_lawn::{Error, Result};
use std::path::Path;

pub fn write_csv<R>(path: &Path, header: &[&str], rows: R) -> Result<()>
where
    R: IntoIterator<Item = Vec<String>>,
{
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse {
            offset: 0,
            message: format!("{}: empty CSV", path.display()),
        })?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

pub fn column_index(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
        offset: 0,
        message: format!("{}: missing column '{name}'", path.display()),
    })
}

pub fn parse_f64(field: &str, path: &Path, row: usize) -> Result<f64> {
    field.trim().parse().map_err(|_| Error::Parse {
        offset: row as u64,
        message: format!("{}: row {row}: '{field}' is not a number", path.display()),
    })
}

/// Dataset files: columns x0..x{d-1},label.
pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let dim = data.dim();
    let names: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.push("label");
    let rows = (0..data.len()).map(|r| {
        let mut row: Vec<String> = (0..dim).map(|c| data.inputs[(r, c)].to_string()).collect();
        row.push(data.labels[r].to_string());
        row
    });
    write_csv(path, &header, rows)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (header, rows) = read_csv(path)?;
    if header.last().map(String::as_str) != Some("label") {
        return Err(Error::Parse {
            offset: 0,
            message: format!("{}: last column must be 'label'", path.display()),
        });
    }
    let dim = header.len() - 1;
    let mut inputs = DMatrix::zeros(rows.len(), dim);
    let mut labels = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        if row.len() != dim + 1 {
            return Err(Error::Parse {
                offset: r as u64,
                message: format!("{}: row {r} has {} fields, expected {}", path.display(), row.len(), dim + 1),
            });
        }
        for c in 0..dim {
            inputs[(r, c)] = parse_f64(&row[c], path, r)?;
        }
        labels.push(row[dim].trim().parse().map_err(|_| Error::Parse {
            offset: r as u64,
            message: format!("{}: row {r}: bad label '{}'", path.display(), row[dim]),
        })?);
    }
    Dataset::new(inputs, labels)
}
