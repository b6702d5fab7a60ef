//! Plain-text point clouds.
//!
//! One point per line, whitespace separated: `x y z [nx ny nz] [label]`, so
//! 3, 4, 6 or 7 columns, identical on every line of a file. Blank lines and
//! anything after `#` are ignored. Values are written with 9 significant
//! digits, enough to round-trip any `f32` exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub fn parse_cloud(text: &str) -> Result<PointCloud> {
    let mut cols = None;
    let (mut positions, mut normals, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let expected = *cols.get_or_insert(tokens.len());
        if tokens.len() != expected {
            return Err(Error::RaggedRow {
                line,
                expected,
                found: tokens.len(),
            });
        }
        if !matches!(expected, 3 | 4 | 6 | 7) {
            return Err(Error::ColumnCount { line, count: expected });
        }
        let has_label = expected % 3 == 1;
        let n_float = if has_label { expected - 1 } else { expected };
        for (c, tok) in tokens[..n_float].iter().enumerate() {
            let v: f32 = tok.parse().map_err(|_| Error::BadToken {
                line,
                token: tok.to_string(),
            })?;
            if c < 3 {
                positions.push(v);
            } else {
                normals.push(v);
            }
        }
        if has_label {
            let tok = tokens[expected - 1];
            labels.push(tok.parse::<usize>().map_err(|_| Error::BadToken {
                line,
                token: tok.to_string(),
            })?);
        }
    }
    let Some(cols) = cols else {
        return Err(Error::EmptyFile);
    };
    PointCloud::new(
        positions,
        (cols >= 6).then_some(normals),
        (cols % 3 == 1).then_some(labels),
    )
}

pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    let fmt = |v: f32| format!("{v:.8e}");
    for i in 0..cloud.len() {
        let mut fields: Vec<String> = cloud.positions()[3 * i..3 * i + 3].iter().map(|&v| fmt(v)).collect();
        if let Some(n) = cloud.normals() {
            fields.extend(n[3 * i..3 * i + 3].iter().map(|&v| fmt(v)));
        }
        if let Some(l) = cloud.labels() {
            fields.push(l[i].to_string());
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    parse_cloud(&fs::read_to_string(path)?)
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    fs::write(path, format_cloud(cloud))?;
    Ok(())
}
