//! Line-delimited detection records.
//!
//! One record per line, comma separated:
//!
//! ```text
//! image_id,x_center,y_center,width,height,raw_score,car_probability,class:prob,class:prob,...
//! ```
//!
//! `car_probability` may be empty. Up to 20 `class:prob` pairs follow. Blank
//! lines and lines starting with `#` are skipped. Files are expected to be
//! sorted by `image_id`; [`ImageGroups`] enforces it.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::ingest::{BBox, ClassProb, DetectionRecord};
use crate::taxonomy::ClassTable;

/// Streaming reader over detection records; memory use is one line.
pub struct DetectionReader<R> {
    source: R,
    line: String,
    offset: u64,
    class_count: Option<u32>,
}

pub fn read_detections<R: BufRead>(source: R) -> DetectionReader<R> {
    DetectionReader { source, line: String::new(), offset: 0, class_count: None }
}

impl<R: BufRead> DetectionReader<R> {
    /// Rejects class ids outside the given table.
    pub fn validate_against(mut self, table: &ClassTable) -> Self {
        self.class_count = Some(table.len() as u32);
        self
    }

    /// Groups consecutive records by image.
    pub fn by_image(self) -> ImageGroups<Self> {
        ImageGroups { inner: self.peekable(), previous: None }
    }
}

impl<R: BufRead> Iterator for DetectionReader<R> {
    type Item = Result<DetectionRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line.clear();
            let start = self.offset;
            match self.source.read_line(&mut self.line) {
                Ok(0) => return None,
                Ok(n) => self.offset += n as u64,
                Err(e) => return Some(Err(e.into())),
            }
            let text = self.line.trim_end_matches(['\n', '\r']);
            if text.trim().is_empty() || text.starts_with('#') {
                continue;
            }
            let parsed =
                parse_record(text, self.class_count).map_err(|message| Error::Record { offset: start, message });
            return Some(parsed);
        }
    }
}

fn parse_f64(field: Option<&str>, name: &str) -> std::result::Result<f64, String> {
    let s = field.ok_or_else(|| format!("missing field `{name}`"))?.trim();
    s.parse::<f64>().map_err(|_| format!("bad {name} `{s}`"))
}

fn parse_record(line: &str, class_count: Option<u32>) -> std::result::Result<DetectionRecord, String> {
    let mut fields = line.split(',');
    let image_id = fields.next().unwrap_or("").trim();
    if image_id.is_empty() {
        return Err("empty image_id".into());
    }
    let x = parse_f64(fields.next(), "x_center")?;
    let y = parse_f64(fields.next(), "y_center")?;
    let w = parse_f64(fields.next(), "width")?;
    let h = parse_f64(fields.next(), "height")?;
    let raw_score = parse_f64(fields.next(), "raw_score")?;
    let car_probability = match fields.next().map(str::trim) {
        None | Some("") => None,
        Some(s) => Some(s.parse::<f64>().map_err(|_| format!("bad car_probability `{s}`"))?),
    };
    let mut class_probs = Vec::new();
    for pair in fields {
        let pair = pair.trim();
        if pair.is_empty() {
            continue;
        }
        let (c, p) = pair.split_once(':').ok_or_else(|| format!("bad class pair `{pair}`"))?;
        let class_id = c.parse::<u32>().map_err(|_| format!("bad class id `{c}`"))?;
        if let Some(n) = class_count {
            if class_id >= n {
                return Err(format!("class id {class_id} is not in the taxonomy"));
            }
        }
        let prob = p.parse::<f64>().map_err(|_| format!("bad probability `{p}`"))?;
        class_probs.push(ClassProb { class_id, prob });
    }
    let bbox = BBox::new(x, y, w, h).map_err(|e| e.to_string())?;
    let record = DetectionRecord { image_id: image_id.to_string(), bbox, raw_score, car_probability, class_probs };
    record.validate().map_err(|e| e.to_string())?;
    Ok(record)
}

pub fn write_detection<W: Write>(out: &mut W, record: &DetectionRecord) -> std::io::Result<()> {
    let b = &record.bbox;
    write!(out, "{},{},{},{},{},{},", record.image_id, b.x_center, b.y_center, b.width, b.height, record.raw_score)?;
    if let Some(p) = record.car_probability {
        write!(out, "{p}")?;
    }
    for cp in &record.class_probs {
        write!(out, ",{}:{}", cp.class_id, cp.prob)?;
    }
    writeln!(out)
}

/// Yields `(image_id, records)` for each run of consecutive records with the
/// same image id; errors if ids go backwards.
pub struct ImageGroups<I: Iterator<Item = Result<DetectionRecord>>> {
    inner: std::iter::Peekable<I>,
    previous: Option<String>,
}

impl<I: Iterator<Item = Result<DetectionRecord>>> ImageGroups<I> {
    pub fn new(inner: I) -> Self {
        ImageGroups { inner: inner.peekable(), previous: None }
    }
}

impl<I: Iterator<Item = Result<DetectionRecord>>> Iterator for ImageGroups<I> {
    type Item = Result<(String, Vec<DetectionRecord>)>;

    fn next(&mut self) -> Option<Self::Item> {
        let first = match self.inner.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(e)),
        };
        if let Some(prev) = &self.previous {
            if first.image_id.as_str() < prev.as_str() {
                return Some(Err(Error::Validation(format!(
                    "detections not sorted by image_id: `{}` after `{prev}`",
                    first.image_id
                ))));
            }
        }
        let id = first.image_id.clone();
        let mut group = vec![first];
        while let Some(Ok(next)) = self.inner.peek() {
            if next.image_id != id {
                break;
            }
            if let Some(Ok(r)) = self.inner.next() {
                group.push(r);
            }
        }
        self.previous = Some(id.clone());
        Some(Ok((id, group)))
    }
}
