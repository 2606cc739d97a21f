//! CSV and JSON rendering shared by the sweep and profile tables.

use serde::Serialize;

/// Renders rows as UTF-8 CSV with a header row.
///
/// Floats use the shortest round-trip representation with a `.` decimal
/// separator, so equal tables render to equal bytes.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Header line for row type `T` even when there are no rows.
pub fn csv_header(columns: &[&str]) -> String {
    let mut s = columns.join(",");
    s.push('\n');
    s
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
