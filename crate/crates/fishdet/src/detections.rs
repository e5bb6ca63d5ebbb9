//! Detection results as CSV: a mandatory header, then one detection per
//! line. Coordinates use the in-memory continuous convention.

use std::io::{Read, Write};
use std::path::Path;

use fishdet_core::eval::DetectionRecord;
use fishdet_core::BoundingBox;

use crate::Error;

pub const HEADER: [&str; 7] = ["image_id", "species_label", "score", "xmin", "ymin", "xmax", "ymax"];

/// Parses CSV text; `path` only labels diagnostics.
pub fn parse_detections<R: Read>(reader: R, path: &Path) -> Result<Vec<DetectionRecord>, Error> {
    let err = |line: u64, message: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    let mut saw_header = false;
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if !saw_header {
            if row.iter().ne(HEADER.iter().copied()) {
                return Err(err(line, format!("header must be '{}'", HEADER.join(","))));
            }
            saw_header = true;
            continue;
        }
        if row.len() != HEADER.len() {
            return Err(err(line, format!("expected {} fields, found {}", HEADER.len(), row.len())));
        }
        let num = |i: usize| -> Result<f64, Error> {
            row[i]
                .parse::<f64>()
                .map_err(|_| err(line, format!("{}: '{}' is not a number", HEADER[i], &row[i])))
        };
        let bbox = BoundingBox::new(num(3)?, num(4)?, num(5)?, num(6)?).map_err(|e| err(line, e.to_string()))?;
        let det = DetectionRecord::new(&row[0], &row[1], num(2)?, bbox).map_err(|e| err(line, e.to_string()))?;
        out.push(det);
    }
    if !saw_header {
        return Err(err(1, "missing header line".into()));
    }
    Ok(out)
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>, Error> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_detections(f, path)
}

/// CSV text of `dets`. Floats print in shortest round-trip form.
pub fn format_detections(dets: &[DetectionRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for d in dets {
        let b = &d.bbox;
        w.write_record([
            d.image_id.clone(),
            d.label.clone(),
            d.score().to_string(),
            b.xmin().to_string(),
            b.ymin().to_string(),
            b.xmax().to_string(),
            b.ymax().to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 input")
}

pub fn write_detections(path: &Path, dets: &[DetectionRecord]) -> Result<(), Error> {
    crate::write_file(path, format_detections(dets).as_bytes())
}

/// Writes to any sink, for stdout.
pub fn emit_detections<W: Write>(mut out: W, dets: &[DetectionRecord]) -> std::io::Result<()> {
    out.write_all(format_detections(dets).as_bytes())
}
