//! Fixed-format tabular output shared by the pipeline and the CLI.

use std::io::Write;

use crate::numeric::Tensor;

/// Nine significant digits in scientific notation, so CSV output diffs cleanly.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.8e}")
}

/// `id,<id_1>,...,<id_n>` header followed by one row per id.
pub fn write_matrix_csv<W: Write>(mut out: W, ids: &[String], m: &Tensor) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(&mut out);
    let mut header = vec!["id".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(m.row(i).iter().map(|&v| fmt_real(v)));
        w.write_record(&rec)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_real(0.75), "7.50000000e-1");
        assert_eq!(fmt_real(1.0 / 3.0), "3.33333333e-1");
        assert_eq!(fmt_real(-1234.5), "-1.23450000e3");
    }
}
