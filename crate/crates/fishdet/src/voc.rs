//! PASCAL VOC annotation files. Files use 1-based inclusive pixel
//! indices; in memory boxes are continuous, so `xmin`/`ymin` shift by one
//! on the way in and back on the way out.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fishdet_core::dataset::{AnnotationRecord, DatasetIndex, ObjectAnnotation};
use fishdet_core::BoundingBox;

use crate::Error;

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn text<'a>(node: roxmltree::Node<'a, '_>, path: &str) -> Result<&'a str, Error> {
    node.text()
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .ok_or_else(|| Error::Voc(format!("{path} is empty")))
}

fn require<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str, path: &str) -> Result<roxmltree::Node<'a, 'i>, Error> {
    child(node, name).ok_or_else(|| Error::Voc(format!("{path}/{name} missing")))
}

fn number(node: roxmltree::Node<'_, '_>, name: &str, path: &str) -> Result<f64, Error> {
    let n = require(node, name, path)?;
    let full = format!("{path}/{name}");
    let t = text(n, &full)?;
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Voc(format!("{full}: '{t}' is not a number")))
}

/// Parses one annotation document. The image id is the file stem of
/// `<filename>`.
pub fn parse_voc_xml(document: &[u8]) -> Result<AnnotationRecord, Error> {
    let s = std::str::from_utf8(document).map_err(|e| Error::Voc(format!("not UTF-8: {e}")))?;
    let doc = roxmltree::Document::parse(s).map_err(|e| Error::Voc(format!("malformed XML: {e}")))?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(Error::Voc("annotation missing".into()));
    }
    let filename = text(require(root, "filename", "annotation")?, "annotation/filename")?;
    let image_id = Path::new(filename)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(filename)
        .to_string();
    let size = require(root, "size", "annotation")?;
    let width = number(size, "width", "annotation/size")?;
    let height = number(size, "height", "annotation/size")?;
    if width < 1.0 || height < 1.0 || width.fract() != 0.0 || height.fract() != 0.0 {
        return Err(Error::Voc("annotation/size must hold positive integers".into()));
    }

    let mut objects = Vec::new();
    for obj in root.children().filter(|c| c.has_tag_name("object")) {
        let label = text(require(obj, "name", "object")?, "object/name")?.to_string();
        let bb = require(obj, "bndbox", "object")?;
        let p = "object/bndbox";
        let (x0, y0, x1, y1) = (
            number(bb, "xmin", p)?,
            number(bb, "ymin", p)?,
            number(bb, "xmax", p)?,
            number(bb, "ymax", p)?,
        );
        let bbox = BoundingBox::new(x0 - 1.0, y0 - 1.0, x1, y1).map_err(|e| {
            Error::Voc(format!("object '{label}' box ({x0}, {y0}, {x1}, {y1}): {e}"))
        })?;
        objects.push(ObjectAnnotation { label, bbox });
    }
    let record = AnnotationRecord {
        image_id,
        width: width as u32,
        height: height as u32,
        objects,
    };
    record.validate()?;
    Ok(record)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Serializes a record; `image_ext` names the image file (`"png"`).
pub fn write_voc_xml(record: &AnnotationRecord, image_ext: &str) -> String {
    let mut s = String::new();
    s.push_str("<annotation>\n");
    let _ = writeln!(s, "  <filename>{}.{image_ext}</filename>", escape(&record.image_id));
    s.push_str("  <size>\n");
    let _ = writeln!(s, "    <width>{}</width>", record.width);
    let _ = writeln!(s, "    <height>{}</height>", record.height);
    s.push_str("    <depth>3</depth>\n  </size>\n");
    for o in &record.objects {
        s.push_str("  <object>\n");
        let _ = writeln!(s, "    <name>{}</name>", escape(&o.label));
        s.push_str("    <bndbox>\n");
        let b = &o.bbox;
        for (tag, v) in [
            ("xmin", b.xmin() + 1.0),
            ("ymin", b.ymin() + 1.0),
            ("xmax", b.xmax()),
            ("ymax", b.ymax()),
        ] {
            let _ = writeln!(s, "      <{tag}>{v}</{tag}>");
        }
        s.push_str("    </bndbox>\n  </object>\n");
    }
    s.push_str("</annotation>\n");
    s
}

pub fn read_voc_file(path: &Path) -> Result<AnnotationRecord, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_voc_xml(&bytes).map_err(|e| e.in_file(path))
}

/// Every `*.xml` file of `dir`, in file-name order.
pub fn read_voc_dir(dir: &Path) -> Result<DatasetIndex, Error> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "xml"))
        .collect();
    paths.sort();
    let records = paths
        .iter()
        .map(|p| read_voc_file(p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DatasetIndex::new(records)?)
}
