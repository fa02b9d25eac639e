//! Text rendering of result sets.

use crate::backend::ResultSet;

/// Aligned plain-text table: header, dashed rule, one line per row.
/// Column widths are the maximum over header and cells (in chars), so
/// removing rows never makes the rendering longer.
pub fn render_table(rs: &ResultSet) -> String {
    let cells: Vec<Vec<String>> = rs.rows.iter().map(|r| r.iter().map(|v| clean(&v.render())).collect()).collect();
    let mut widths: Vec<usize> = rs.columns.iter().map(|c| c.chars().count()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    push_line(&mut out, rs.columns.iter().map(String::as_str), &widths);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    push_line(&mut out, rule.iter().map(String::as_str), &widths);
    for row in &cells {
        push_line(&mut out, row.iter().map(String::as_str), &widths);
    }
    out
}

fn clean(s: &str) -> String {
    s.replace(['\n', '\r', '\t'], " ")
}

fn push_line<'a>(out: &mut String, cells: impl Iterator<Item = &'a str>, widths: &[usize]) {
    let mut line = String::new();
    for (i, (cell, w)) in cells.zip(widths).enumerate() {
        if i > 0 {
            line.push_str(" | ");
        }
        line.push_str(cell);
        let pad = w.saturating_sub(cell.chars().count());
        line.extend(std::iter::repeat_n(' ', pad));
    }
    out.push_str(line.trim_end());
    out.push('\n');
}

/// Wraps executed SQL as the final text block of a tool result.
pub fn sql_block(sql: &str) -> String {
    format!("Executed SQL:\n```sql\n{sql}\n```")
}

/// Inverse of [`sql_block`].
pub fn parse_sql_block(block: &str) -> Option<&str> {
    block.strip_prefix("Executed SQL:\n```sql\n")?.strip_suffix("\n```")
}
