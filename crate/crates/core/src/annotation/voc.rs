//! Pascal VOC XML subset: `size/{width,height}` and
//! `object/{name, bndbox/{xmin,ymin,xmax,ymax}}`.
//!
//! VOC corners are 1-based and inclusive. Only the minimum corner is
//! shifted by one on the way in (and back on the way out), so a box spanning
//! pixels 1..=10 becomes `[0, 10]`.

use std::fmt::Write as _;

use roxmltree::{Document, Node};

use super::{FormatError, GroundTruthItem};
use crate::class::ClassRegistry;
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocImage {
    pub image_id: String,
    pub filename: Option<String>,
    pub width: u32,
    pub height: u32,
}

struct Ctx<'a, 'input> {
    doc: &'a Document<'input>,
}

impl Ctx<'_, '_> {
    fn err(&self, node: Node, path: &str, reason: impl Into<String>) -> FormatError {
        let pos = self.doc.text_pos_at(node.range().start);
        FormatError::Element { path: path.to_string(), line: pos.row, column: pos.col, reason: reason.into() }
    }

    fn child<'a, 'i>(&self, node: Node<'a, 'i>, name: &str, path: &str) -> Result<Node<'a, 'i>, FormatError> {
        node.children().find(|c| c.has_tag_name(name)).ok_or_else(|| self.err(node, path, "missing required element"))
    }

    fn text<'a>(&self, node: Node<'a, '_>, path: &str) -> Result<&'a str, FormatError> {
        node.text().map(str::trim).filter(|t| !t.is_empty()).ok_or_else(|| self.err(node, path, "element is empty"))
    }

    fn number(&self, parent: Node, name: &str, path: &str) -> Result<f64, FormatError> {
        let path = format!("{path}/{name}");
        let node = self.child(parent, name, &path)?;
        let text = self.text(node, &path)?;
        text.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.err(node, &path, format!("{text:?} is not a number")))
    }
}

/// Parses one VOC document. The image id is the `filename` stem when present,
/// else `fallback_id`.
pub fn parse_voc_xml(
    xml: &str,
    fallback_id: &str,
    registry: &ClassRegistry,
) -> Result<(VocImage, Vec<GroundTruthItem>), FormatError> {
    let doc = Document::parse(xml)?;
    let cx = Ctx { doc: &doc };
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(cx.err(root, "annotation", format!("unexpected root <{}>", root.tag_name().name())));
    }

    let size = cx.child(root, "size", "annotation/size")?;
    let dim = |name: &str| -> Result<u32, FormatError> {
        let path = format!("annotation/size/{name}");
        let v = cx.number(size, name, "annotation/size")?;
        if v < 1.0 || v.fract() != 0.0 || v > f64::from(u32::MAX) {
            let node = cx.child(size, name, &path)?;
            return Err(cx.err(node, &path, format!("{v} is not a positive integer")));
        }
        Ok(v as u32)
    };
    let (width, height) = (dim("width")?, dim("height")?);

    let filename = root
        .children()
        .find(|c| c.has_tag_name("filename"))
        .and_then(|n| n.text())
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty());
    let image_id = filename
        .as_deref()
        .map(|f| std::path::Path::new(f).file_stem().map_or(f.to_string(), |s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| fallback_id.to_string());

    let mut items = Vec::new();
    for (i, obj) in root.children().filter(|c| c.has_tag_name("object")).enumerate() {
        let base = format!("annotation/object[{}]", i + 1);
        let name_path = format!("{base}/name");
        let name_node = cx.child(obj, "name", &name_path)?;
        let name = cx.text(name_node, &name_path)?;
        let class_id =
            registry.resolve(name).ok_or_else(|| cx.err(name_node, &name_path, format!("unknown class {name:?}")))?;

        let bb_path = format!("{base}/bndbox");
        let bb = cx.child(obj, "bndbox", &bb_path)?;
        let xmin = cx.number(bb, "xmin", &bb_path)?;
        let ymin = cx.number(bb, "ymin", &bb_path)?;
        let xmax = cx.number(bb, "xmax", &bb_path)?;
        let ymax = cx.number(bb, "ymax", &bb_path)?;
        if xmin > xmax || ymin > ymax {
            return Err(cx.err(bb, &bb_path, format!("malformed box: ({xmin}, {ymin}) > ({xmax}, {ymax})")));
        }
        let bbox =
            BoundingBox::pixel(xmin - 1.0, ymin - 1.0, xmax, ymax).map_err(|e| cx.err(bb, &bb_path, e.to_string()))?;
        items.push(GroundTruthItem { image_id: image_id.clone(), class_id, bbox });
    }

    Ok((VocImage { image_id, filename, width, height }, items))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders a VOC document. Coordinates use the shortest exact decimal form.
pub fn emit_voc_xml(
    image: &VocImage,
    items: &[GroundTruthItem],
    registry: &ClassRegistry,
) -> Result<String, FormatError> {
    let mut out = String::from("<annotation>\n");
    let w = &mut out;
    if let Some(f) = &image.filename {
        let _ = writeln!(w, "  <filename>{}</filename>", escape(f));
    }
    let _ = writeln!(
        w,
        "  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>3</depth>\n  </size>",
        image.width, image.height
    );
    for (index, item) in items.iter().enumerate() {
        let name = registry
            .name(item.class_id)
            .ok_or_else(|| FormatError::Item { index, reason: format!("class {} is not registered", item.class_id) })?;
        let b = item.bbox.to_pixel(f64::from(image.width), f64::from(image.height))?;
        let _ = writeln!(
            w,
            "  <object>\n    <name>{}</name>\n    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>\n  </object>",
            escape(name),
            b.x_min() + 1.0,
            b.y_min() + 1.0,
            b.x_max(),
            b.y_max()
        );
    }
    out.push_str("</annotation>\n");
    Ok(out)
}
