//! Minimal CSV emission with round-trip float formatting.

use std::io::{self, Write};

/// Shortest decimal string that parses back to exactly `x`.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let a = x.abs();
    if (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn write_csv<W: Write>(mut w: W, header: &str, rows: &[Vec<String>]) -> io::Result<()> {
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{}", r.join(","))?;
    }
    Ok(())
}
