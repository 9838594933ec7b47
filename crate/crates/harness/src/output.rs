use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

/// Serialize `rows` as CSV with a header line.
pub fn csv_string<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn write_csv<R: Serialize>(rows: &[R], path: Option<&Path>) -> Result<()> {
    let text = csv_string(rows)?;
    let mut out = sink(path)?;
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn write_lines(lines: &[String], path: Option<&Path>) -> Result<()> {
    let mut out = sink(path)?;
    for l in lines {
        writeln!(out, "{l}")?;
    }
    out.flush()?;
    Ok(())
}
