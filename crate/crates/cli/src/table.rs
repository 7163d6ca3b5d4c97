use std::path::Path;

use anyhow::Result;

use crate::workspace::write_text;

/// Comma-separated table with a header row.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(header.iter().map(|s| s.as_ref()))
            .expect("in-memory write");
        Table { writer }
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        self.writer
            .write_record(fields.iter().map(|s| s.as_ref()))
            .expect("in-memory write");
    }

    pub fn into_string(self) -> String {
        String::from_utf8(self.writer.into_inner().expect("in-memory flush")).expect("utf8 fields")
    }

    pub fn save(self, path: &Path) -> Result<()> {
        write_text(path, &self.into_string())
    }
}

pub fn num(v: f64) -> String {
    format!("{v:.6}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Median, min and max of a nonempty sample.
pub fn median_min_max(values: &[f64]) -> (f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    (median, v[0], v[n - 1])
}
