//! Writes a synthetic graph in the four-file TSV layout, reads it back and
//! prints the validation report.
//!
//! `cargo run --example dataset_io -- <dir>` keeps the files in `<dir>`.

use anyhow::{Context, Result};
use bpgnn::data::{load_dataset, save_dataset, synthetic, validate, SyntheticConfig};

fn main() -> Result<()> {
    let ds = synthetic(&SyntheticConfig::default())?;
    let tmp;
    let dir = match std::env::args().nth(1) {
        Some(d) => std::path::PathBuf::from(d),
        None => {
            tmp = tempfile::tempdir()?;
            tmp.path().join("synthetic")
        }
    };
    save_dataset(&ds, &dir).with_context(|| format!("writing {}", dir.display()))?;
    let loaded = load_dataset(&dir)?;
    let report = validate(&loaded);
    println!("{}: {report:#?}", loaded.name);
    println!("round trip identical: {}", loaded.features == ds.features && loaded.edges == ds.edges);
    Ok(())
}
