//! Score files, MAP evaluation, image quality reports and FID.

pub mod fid;
pub mod quality;
pub mod scores;

/// Splits a tab-separated line, skipping blanks and `#` comments.
pub(crate) fn tsv_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(n, l)| (n + 1, l.split('\t').map(str::trim).collect()))
}
