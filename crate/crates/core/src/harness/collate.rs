use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// CSV rows from several files that share one header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    /// Source file (relative to the collated directory) and fields.
    pub rows: Vec<(String, Vec<String>)>,
}

/// Every `*.csv` under a directory, grouped by header.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Collated {
    pub files: Vec<PathBuf>,
    pub tables: Vec<Table>,
}

fn csv_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            csv_files(&path, out)?;
        } else if path.extension().is_some_and(|x| x == "csv") {
            out.push(path);
        }
    }
    Ok(())
}

/// Reads every CSV below `dir` (sorted by path).
pub fn collate(dir: &Path) -> Result<Collated> {
    let mut files = Vec::new();
    csv_files(dir, &mut files)?;
    let mut tables: Vec<Table> = Vec::new();
    for f in &files {
        let mut r = csv::Reader::from_path(f).map_err(super::csv_error)?;
        let header: Vec<String> = r.headers().map_err(super::csv_error)?.iter().map(String::from).collect();
        let name = f.strip_prefix(dir).unwrap_or(f).to_string_lossy().into_owned();
        let pos = match tables.iter().position(|t| t.header == header) {
            Some(p) => p,
            None => {
                tables.push(Table { header, rows: Vec::new() });
                tables.len() - 1
            }
        };
        for rec in r.records() {
            let rec = rec.map_err(super::csv_error)?;
            tables[pos].rows.push((name.clone(), rec.iter().map(String::from).collect()));
        }
    }
    Ok(Collated { files, tables })
}

impl Collated {
    pub fn is_empty(&self) -> bool {
        self.tables.iter().all(|t| t.rows.is_empty())
    }

    /// Each table as CSV with a leading `file` column, tables separated by
    /// a blank line.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        for (i, t) in self.tables.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(std::iter::once("file").chain(t.header.iter().map(String::as_str)))
                .map_err(super::csv_error)?;
            for (file, fields) in &t.rows {
                w.write_record(std::iter::once(file.as_str()).chain(fields.iter().map(String::as_str)))
                    .map_err(super::csv_error)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
            out.push_str(&String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))?);
        }
        Ok(out)
    }
}
