use std::fmt::Write as _;
use std::io;

use super::LinearProgram;

fn sanitize(tag: &str) -> String {
    tag.chars()
        .map(|c| match c {
            '[' => '(',
            ']' => ')',
            c if c.is_ascii_alphanumeric() || "_(),.".contains(c) => c,
            _ => '_',
        })
        .collect()
}

fn term(out: &mut String, first: &mut bool, coef: f64, name: &str) {
    if *first {
        if coef < 0.0 {
            out.push_str(" -");
        }
    } else if coef < 0.0 {
        out.push_str(" -");
    } else {
        out.push_str(" +");
    }
    *first = false;
    let _ = write!(out, " {} {}", coef.abs(), name);
}

/// Writes `lp` in CPLEX LP text format. Ranged rows are split into a `_lo`
/// and a `_hi` row. Tags are sanitized for the format; each name is preceded
/// by a comment carrying the original tag.
pub fn write_lp(lp: &LinearProgram, mut w: impl io::Write) -> io::Result<()> {
    let names: Vec<String> = lp.vars().iter().map(|v| sanitize(&v.tag.to_string())).collect();
    let mut out = String::new();
    out.push_str("\\ variables\n");
    for (v, name) in lp.vars().iter().zip(&names) {
        let _ = writeln!(out, "\\ {name} = {}", v.tag);
    }
    out.push_str("Minimize\n obj:");
    let mut first = true;
    for (v, name) in lp.vars().iter().zip(&names) {
        if v.cost != 0.0 {
            term(&mut out, &mut first, v.cost, name);
        }
    }
    if lp.offset() != 0.0 || first {
        let _ = write!(out, " {} {}", if lp.offset() < 0.0 { "-" } else { "+" }, lp.offset().abs());
    }
    out.push_str("\nSubject To\n");
    for row in lp.rows() {
        let base = sanitize(&row.tag.to_string());
        let mut expr = String::new();
        let mut first = true;
        for &(v, a) in &row.coeffs {
            term(&mut expr, &mut first, a, &names[v.0]);
        }
        if first {
            expr.push_str(" 0 ");
            expr.push_str(names.first().map(String::as_str).unwrap_or("x"));
        }
        let _ = writeln!(out, "\\ {}", row.tag);
        if row.is_equality() {
            let _ = writeln!(out, " {base}:{expr} = {}", row.lower);
            continue;
        }
        let both = row.lower.is_finite() && row.upper.is_finite();
        if row.lower.is_finite() {
            let name = if both { format!("{base}_lo") } else { base.clone() };
            let _ = writeln!(out, " {name}:{expr} >= {}", row.lower);
        }
        if row.upper.is_finite() {
            let name = if both { format!("{base}_hi") } else { base.clone() };
            let _ = writeln!(out, " {name}:{expr} <= {}", row.upper);
        }
    }
    out.push_str("Bounds\n");
    for (v, name) in lp.vars().iter().zip(&names) {
        match (v.lower.is_finite(), v.upper.is_finite()) {
            (false, false) => {
                let _ = writeln!(out, " {name} free");
            }
            (true, true) if v.lower == v.upper => {
                let _ = writeln!(out, " {name} = {}", v.lower);
            }
            (true, true) => {
                let _ = writeln!(out, " {} <= {name} <= {}", v.lower, v.upper);
            }
            (true, false) => {
                let _ = writeln!(out, " {name} >= {}", v.lower);
            }
            (false, true) => {
                let _ = writeln!(out, " -inf <= {name} <= {}", v.upper);
            }
        }
    }
    out.push_str("End\n");
    w.write_all(out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::super::{RowBounds, Tag};
    use super::*;

    #[test]
    fn dump_contains_tags_and_sections() {
        let mut lp = LinearProgram::new();
        let a = lp.add_var(Tag::at("gd", &[0, 1]), 25.0, 0.0, 500.0).unwrap();
        let b = lp.add_var(Tag::at("gd", &[1, 1]), 30.0, 0.0, f64::INFINITY).unwrap();
        lp.add_row(Tag::at("balance", &[1]), vec![(a, 1.0), (b, 1.0)], RowBounds::Eq(420.0))
            .unwrap();
        lp.add_row(Tag::at("ramp_d", &[1, 1]), vec![(b, 1.0)], RowBounds::Range(-5.0, 5.0))
            .unwrap();
        let mut buf = Vec::new();
        write_lp(&lp, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("Minimize\n obj: 25 gd(0,1) + 30 gd(1,1)"));
        assert!(text.contains(" balance(1): 1 gd(0,1) + 1 gd(1,1) = 420"));
        assert!(text.contains(" ramp_d(1,1)_lo: 1 gd(1,1) >= -5"));
        assert!(text.contains(" ramp_d(1,1)_hi: 1 gd(1,1) <= 5"));
        assert!(text.contains("\\ ramp_d[1,1]"));
        assert!(text.contains(" gd(1,1) >= 0"));
        assert!(text.ends_with("End\n"));
    }
}
