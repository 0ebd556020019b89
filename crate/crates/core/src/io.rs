//! Text formats shared by the exporters: 17-significant-digit decimals,
//! comma-separated tables with a header row and LF line endings.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

/// Shortest form is not used on purpose: every float is written with
/// 17 significant digits so files are stable across formatter versions.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // normalise -0
        return "0.0000000000000000e0".to_string();
    }
    format!("{x:.16e}")
}

/// A CSV table held in memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [std::f64::consts::LN_2, 1.0 / 3.0, -2.5e-300, 1e300, 0.1] {
            let s = fmt_f64(x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(-0.0), fmt_f64(0.0));
    }

    #[test]
    fn table_rendering() {
        let mut t = CsvTable::new(&["t", "w"]);
        t.push(vec!["0".into(), "1".into()]);
        assert_eq!(t.render(), "t,w\n0,1\n");
    }
}
