//! Change-log CSV: `step,action,u,v,loss_after`, one row per applied flip.

use std::path::Path;

use graphdefense_core::attack::EdgeChange;

use crate::error::{Error, Result};
use crate::fsio::write_atomic;

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

pub fn render_change_log(changes: &[EdgeChange]) -> Vec<u8> {
    // Header written by hand so an empty log still has one.
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(["step", "action", "u", "v", "loss_after"])
        .expect("in-memory write");
    for c in changes {
        w.serialize(c).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

pub fn write_change_log(changes: &[EdgeChange], path: &Path) -> Result<()> {
    write_atomic(path, &render_change_log(changes))
}

pub fn parse_change_log(bytes: &[u8], path: &Path) -> Result<Vec<EdgeChange>> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

pub fn read_change_log(path: &Path) -> Result<Vec<EdgeChange>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_change_log(&bytes, path)
}
