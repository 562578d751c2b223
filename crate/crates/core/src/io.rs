//! Shared formatting for tabular exports.

use std::io::Write;

use crate::error::{CoagError, Result};
use crate::model::Composition;

/// Formats a real with 17 significant digits, which round-trips any `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_real(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| CoagError::InvalidArgument(format!("bad number {s:?}: {e}")))
}

/// Writes `n_1,...,n_m,<columns...>` rows for a composition-keyed table.
pub fn write_composition_table<'a, W, I>(writer: W, m: usize, columns: &[&str], rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a Composition, Vec<f64>)>,
{
    let mut out = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=m).map(|i| format!("n_{i}")).collect();
    header.extend(columns.iter().map(|c| (*c).to_string()));
    out.write_record(&header)?;
    for (n, values) in rows {
        let mut row: Vec<String> = n.counts().iter().map(u32::to_string).collect();
        row.extend(values.into_iter().map(format_real));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
