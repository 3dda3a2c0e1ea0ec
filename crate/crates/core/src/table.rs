//! Delimited-text helpers shared by every ingestion and export schema.
//!
//! Readers check the header row against the expected column list and report
//! parse failures with the file path, the 1-based line number, and the
//! offending column name.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// A parsed table: the header and every data row with its line number.
pub struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

/// One data row, borrowed from a [`Table`].
pub struct Row<'a> {
    table: &'a Table,
    line: u64,
    record: &'a csv::StringRecord,
}

impl Table {
    /// Reads `path`, requiring the header to start with `expected` (extra trailing columns allowed).
    pub fn read(path: &Path, expected: &[&str]) -> Result<Self> {
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| csv_error(path, 1, e))?
            .iter()
            .map(|h| h.trim_start_matches('\u{feff}').to_string())
            .collect();
        for (i, want) in expected.iter().enumerate() {
            match headers.get(i) {
                Some(got) if got == want => {}
                Some(got) => {
                    return Err(Error::Schema {
                        path: path.to_path_buf(),
                        line: 1,
                        column: (*want).to_string(),
                        message: format!("expected header `{want}` at position {}, found `{got}`", i + 1),
                    })
                }
                None => {
                    return Err(Error::Schema {
                        path: path.to_path_buf(),
                        line: 1,
                        column: (*want).to_string(),
                        message: "missing header column".into(),
                    })
                }
            }
        }
        let mut rows = Vec::new();
        for result in reader.records() {
            let record = result.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                csv_error(path, line, e)
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() < expected.len() {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    line,
                    column: expected[record.len()].to_string(),
                    message: format!("row has {} fields, expected {}", record.len(), expected.len()),
                });
            }
            rows.push((line, record));
        }
        Ok(Table {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = Row<'_>> {
        self.rows.iter().map(move |(line, record)| Row {
            table: self,
            line: *line,
            record,
        })
    }
}

impl<'a> Row<'a> {
    pub fn line(&self) -> u64 {
        self.line
    }

    fn index_of(&self, column: &str) -> Result<usize> {
        self.table
            .headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| self.error(column, "missing column"))
    }

    /// Raw string value; rejects empty fields.
    pub fn str(&self, column: &str) -> Result<&'a str> {
        let idx = self.index_of(column)?;
        let value = self.record.get(idx).unwrap_or("");
        if value.is_empty() {
            return Err(self.error(column, "empty value"));
        }
        Ok(value)
    }

    pub fn parse<T>(&self, column: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        let raw = self.str(column)?;
        raw.parse::<T>()
            .map_err(|e| self.error(column, format!("cannot parse `{raw}`: {e}")))
    }

    /// Parses a finite float.
    pub fn float(&self, column: &str) -> Result<f64> {
        let v: f64 = self.parse(column)?;
        if !v.is_finite() {
            return Err(self.error(column, "value is not finite"));
        }
        Ok(v)
    }

    pub fn error(&self, column: &str, message: impl Into<String>) -> Error {
        Error::Schema {
            path: self.table.path.clone(),
            line: self.line,
            column: column.to_string(),
            message: message.into(),
        }
    }
}

fn csv_error(path: &Path, line: u64, e: csv::Error) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        line,
        column: String::new(),
        message: e.to_string(),
    }
}

/// Buffered CSV writer with an explicit header. Floats go through `Display`,
/// which is the shortest representation that round-trips exactly.
pub struct TableWriter {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl TableWriter {
    pub fn create(path: &Path, headers: &[&str]) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|source| Error::Io {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
        }
        let file = File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut inner = csv::WriterBuilder::new().from_writer(BufWriter::new(file));
        inner
            .write_record(headers)
            .map_err(|e| write_error(path, e))?;
        Ok(TableWriter {
            path: path.to_path_buf(),
            inner,
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner
            .write_record(fields)
            .map_err(|e| write_error(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|source| Error::Io {
            path: self.path.clone(),
            source,
        })
    }
}

fn write_error(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Writes a whole text file, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    let mut file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(contents.as_bytes())
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
