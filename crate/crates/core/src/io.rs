//! File helpers shared by the CSV writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::Result;

/// Creates `path` (truncating) and hands a buffered writer to `write`.
pub fn save_with<F>(path: impl AsRef<Path>, write: F) -> Result<()>
where
    F: FnOnce(BufWriter<File>) -> Result<()>,
{
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write(BufWriter::new(File::create(path)?))
}

/// Plain numeric table with a header row.
pub fn write_table<W: Write, S: AsRef<str>>(
    w: W,
    header: &[S],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header.iter().map(|s| s.as_ref()))?;
    for r in rows {
        wr.write_record(&r)?;
    }
    wr.flush()?;
    Ok(())
}
