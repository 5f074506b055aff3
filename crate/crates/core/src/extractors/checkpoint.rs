//! JSON checkpoints: an object mapping each parameter name to
//! `{"shape": [...], "values": [...]}` with values in row-major order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::{ParamStore, SavedParam};
use crate::error::Result;

pub fn write_checkpoint<W: Write>(store: &ParamStore, w: W) -> Result<()> {
    serde_json::to_writer(w, &store.to_saved())?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<BTreeMap<String, SavedParam>> {
    Ok(serde_json::from_reader(r)?)
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(store, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Overwrites every parameter of `store` from the file at `path`.
pub fn load_checkpoint(store: &mut ParamStore, path: &Path) -> Result<()> {
    let saved = read_checkpoint(BufReader::new(File::open(path)?))?;
    store.load_saved(&saved)?;
    Ok(())
}
