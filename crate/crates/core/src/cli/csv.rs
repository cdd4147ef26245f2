use std::fmt::Write as _;

/// Formats a number with at most nine significant digits. Integers print
/// without a fraction and undefined values print as `NaN`.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "NaN".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..15).contains(&exp) {
        return format!("{x:.8e}");
    }
    let decimals = (8 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding can carry into a new leading digit; that only adds a zero
    let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

/// Quotes a text cell when it would otherwise break the row.
pub fn fmt_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV document: `#` comment lines, a header row, then data rows.
#[derive(Debug, Default)]
pub struct Table {
    comments: Vec<String>,
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<&'static str>) -> Self {
        Table { header, ..Table::default() }
    }

    pub fn comment(&mut self, line: impl Into<String>) {
        self.comments.push(line.into());
    }

    pub fn row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.header.len(), "row width must match the header");
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            for line in c.lines() {
                let _ = writeln!(out, "# {line}");
            }
        }
        let _ = writeln!(out, "{}", self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.join(","));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_num(787.298_334_620_742), "787.298335");
        assert_eq!(fmt_num(0.440_520_370_557_695_8), "0.440520371");
        assert_eq!(fmt_num(800.0), "800");
        assert_eq!(fmt_num(0.0625), "0.0625");
        assert_eq!(fmt_num(1e-7), "1.00000000e-7");
        assert_eq!(fmt_num(-2.5), "-2.5");
        assert_eq!(fmt_num(0.999_999_999_9), "1");
        assert_eq!(fmt_num(f64::NAN), "NaN");
        assert_eq!(fmt_num(123_456_789_012.0), "123456789012");
    }

    #[test]
    fn table_layout() {
        let mut t = Table::new(vec!["a", "b"]);
        t.comment("x = 1\ny = 2");
        t.row(vec!["1".into(), fmt_text("p,q")]);
        assert_eq!(t.render(), "# x = 1\n# y = 2\na,b\n1,\"p,q\"\n");
    }
}
