//! Boxes CSV: header `image_id,cu,cv,w,h,score`, one box per line. The
//! score column may be left out entirely (ground truth) or left empty on
//! individual rows.

use std::collections::BTreeMap;
use std::path::Path;

use crate::codec::{BBox, Detection};
use crate::error::{Error, Result};

const COLUMNS: [&str; 6] = ["image_id", "cu", "cv", "w", "h", "score"];

#[derive(Debug, Clone, PartialEq)]
pub struct BoxRecord {
    pub image_id: String,
    pub bbox: BBox,
    pub score: Option<f64>,
}

impl BoxRecord {
    /// Ground-truth rows without a score count as certain.
    pub fn detection(&self) -> Result<Detection> {
        Detection::new(self.bbox, self.score.unwrap_or(1.0))
    }
}

pub fn parse_boxes_csv(bytes: &[u8], path: &Path) -> Result<Vec<BoxRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let line_err = |line: u64, msg: String| Error::format(path, format!("line {line}"), msg);
    let headers = reader
        .headers()
        .map_err(|e| line_err(1, e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let has_score = match names.as_slice() {
        n if n == COLUMNS => true,
        n if n == &COLUMNS[..5] => false,
        _ => {
            return Err(line_err(
                1,
                format!("expected header {} (score optional), got {}", COLUMNS.join(","), names.join(",")),
            ))
        }
    };

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            line_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            let field = &row[i];
            let v: f64 = field
                .parse()
                .map_err(|_| line_err(line, format!("column {}: {field:?} is not a number", COLUMNS[i])))?;
            if !v.is_finite() {
                return Err(line_err(line, format!("column {}: {v} is not finite", COLUMNS[i])));
            }
            Ok(v)
        };
        let bbox = BBox::new(num(1)?, num(2)?, num(3)?, num(4)?)
            .map_err(|e| line_err(line, e.to_string()))?;
        let score = if has_score && !row[5].is_empty() {
            let s = num(5)?;
            if !(0.0..=1.0).contains(&s) {
                return Err(line_err(line, format!("score {s} outside [0, 1]")));
            }
            Some(s)
        } else {
            None
        };
        if row[0].is_empty() {
            return Err(line_err(line, "empty image_id".to_string()));
        }
        out.push(BoxRecord {
            image_id: row[0].to_string(),
            bbox,
            score,
        });
    }
    Ok(out)
}

pub fn read_boxes_csv(path: impl AsRef<Path>) -> Result<Vec<BoxRecord>> {
    let path = path.as_ref();
    parse_boxes_csv(&super::read_bytes(path)?, path)
}

/// Writes the score column only when at least one record has a score.
pub fn encode_boxes_csv(records: &[BoxRecord]) -> Vec<u8> {
    let with_score = records.iter().any(|r| r.score.is_some());
    let mut out = String::new();
    out.push_str(&COLUMNS[..if with_score { 6 } else { 5 }].join(","));
    out.push('\n');
    for r in records {
        let b = r.bbox;
        out.push_str(&format!("{},{},{},{},{}", r.image_id, b.cu, b.cv, b.w, b.h));
        if with_score {
            out.push(',');
            if let Some(s) = r.score {
                out.push_str(&s.to_string());
            }
        }
        out.push('\n');
    }
    out.into_bytes()
}

pub fn write_boxes_csv(path: impl AsRef<Path>, records: &[BoxRecord]) -> Result<()> {
    let path = path.as_ref();
    if let Some(r) = records
        .iter()
        .find(|r| r.image_id.is_empty() || r.image_id.contains([',', '"', '\n', '\r']))
    {
        return Err(Error::usage(format!("image id {:?} cannot be written to CSV", r.image_id)));
    }
    super::write_bytes(path, &encode_boxes_csv(records))
}

/// Records grouped by image id, ids sorted, file order kept within an image.
pub fn group_by_image(records: &[BoxRecord]) -> BTreeMap<String, Vec<BoxRecord>> {
    let mut groups: BTreeMap<String, Vec<BoxRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.image_id.clone()).or_default().push(r.clone());
    }
    groups
}
