//! Plain-text table layout shared by the report writers.

use std::fmt::Write as _;

/// Left-aligns the first column and right-aligns the rest, two spaces apart.
pub(crate) fn aligned(header: &[&str], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                let pad = " ".repeat(w.saturating_sub(c.chars().count()));
                if i == 0 {
                    format!("{c}{pad}")
                } else {
                    format!("{pad}{c}")
                }
            })
            .collect();
        writeln!(out, "{}", parts.join("  ").trim_end()).expect("write to String");
    };
    line(header.to_vec());
    for row in body {
        line(row.iter().map(String::as_str).collect());
    }
    out
}
