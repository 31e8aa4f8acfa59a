//! Text formats for ground-truth annotations and detections.
//!
//! Annotations: `image_id,x,y,width,height[,tag]` with integer pixel
//! coordinates. Detections: `image_id,x,y,w,h,score,component` under a header
//! line. Both accept blank lines and `#` comments.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::Detection;
use crate::postproc::Rect;

pub const DETECTIONS_HEADER: &str = "image_id,x,y,w,h,score,component";

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image_id: String,
    pub bbox: Rect,
    pub tag: Option<String>,
}

fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn field<T: std::str::FromStr>(line: usize, name: &str, raw: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad {name} {raw:?}"),
    })
}

pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (line, rec) in records(text) {
        let parts: Vec<&str> = rec.split(',').collect();
        if parts.len() != 5 && parts.len() != 6 {
            return Err(Error::Parse {
                line,
                message: format!("expected 5 or 6 fields, found {}", parts.len()),
            });
        }
        let image_id = parts[0].trim();
        if image_id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty image id".into(),
            });
        }
        let x: i64 = field(line, "x", parts[1])?;
        let y: i64 = field(line, "y", parts[2])?;
        let w: i64 = field(line, "width", parts[3])?;
        let h: i64 = field(line, "height", parts[4])?;
        if w <= 0 || h <= 0 {
            return Err(Error::Parse {
                line,
                message: format!("non-positive box size {w}x{h}"),
            });
        }
        out.push(Annotation {
            image_id: image_id.to_string(),
            bbox: Rect::new(x as f64, y as f64, w as f64, h as f64),
            tag: parts.get(5).map(|t| t.trim().to_string()),
        });
    }
    Ok(out)
}

pub fn write_annotations<W: Write>(anns: &[Annotation], out: &mut W) -> Result<()> {
    for a in anns {
        write!(
            out,
            "{},{},{},{},{}",
            a.image_id,
            a.bbox.x.round() as i64,
            a.bbox.y.round() as i64,
            a.bbox.w.round() as i64,
            a.bbox.h.round() as i64
        )?;
        if let Some(t) = &a.tag {
            write!(out, ",{t}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Boxes per image id, in file order.
pub fn group_by_image(anns: &[Annotation]) -> BTreeMap<String, Vec<Rect>> {
    let mut map: BTreeMap<String, Vec<Rect>> = BTreeMap::new();
    for a in anns {
        map.entry(a.image_id.clone()).or_default().push(a.bbox);
    }
    map
}

/// Writes the header, one `# key=value` line per comment, then the rows.
pub fn write_detections<W: Write>(dets: &[Detection], comments: &[(&str, &str)], out: &mut W) -> Result<()> {
    for (k, v) in comments {
        writeln!(out, "# {k}={v}")?;
    }
    writeln!(out, "{DETECTIONS_HEADER}")?;
    for d in dets {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            d.image_id, d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, d.score, d.component_id
        )?;
    }
    Ok(())
}

/// Parses a detections file. The header line is optional; level and cell
/// are not stored and come back as zero.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (line, rec) in records(text) {
        if rec == DETECTIONS_HEADER {
            continue;
        }
        let parts: Vec<&str> = rec.split(',').collect();
        if parts.len() != 7 {
            return Err(Error::Parse {
                line,
                message: format!("expected 7 fields, found {}", parts.len()),
            });
        }
        let x: f64 = field(line, "x", parts[1])?;
        let y: f64 = field(line, "y", parts[2])?;
        let w: f64 = field(line, "w", parts[3])?;
        let h: f64 = field(line, "h", parts[4])?;
        let score: f64 = field(line, "score", parts[5])?;
        if ![x, y, w, h].iter().all(|v| v.is_finite()) || score.is_nan() {
            return Err(Error::Parse {
                line,
                message: "non-finite value".into(),
            });
        }
        out.push(Detection {
            image_id: parts[0].trim().to_string(),
            bbox: Rect::new(x, y, w, h),
            score,
            component_id: field(line, "component", parts[6])?,
            level_index: 0,
            cell: (0, 0),
        });
    }
    Ok(out)
}

/// Value of a `# key=value` comment line, if present.
pub fn comment_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| {
        l.trim()
            .strip_prefix('#')
            .and_then(|r| r.trim().strip_prefix(key))
            .and_then(|r| r.strip_prefix('='))
            .map(str::trim)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotations_with_comments_and_tags() {
        let text = "# faces\nimg1,10,20,30,40\n\nimg2, 1, 2, 3, 4 ,occluded\n";
        let a = parse_annotations(text).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].bbox, Rect::new(10.0, 20.0, 30.0, 40.0));
        assert_eq!(a[1].tag.as_deref(), Some("occluded"));
        let mut buf = Vec::new();
        write_annotations(&a, &mut buf).unwrap();
        assert_eq!(parse_annotations(std::str::from_utf8(&buf).unwrap()).unwrap(), a);
    }

    #[test]
    fn annotation_errors_name_the_line() {
        let err = parse_annotations("a,1,2,3,4\n# c\nb,1,2,x,4\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        assert!(matches!(parse_annotations("a,1,2,0,4").unwrap_err(), Error::Parse { line: 1, .. }));
        assert!(matches!(parse_annotations("a,1,2").unwrap_err(), Error::Parse { line: 1, .. }));
    }

    #[test]
    fn detections_round_trip() {
        let dets = vec![Detection {
            image_id: "im".into(),
            bbox: Rect::new(0.1, 2.0 / 3.0, 100.0, 1e-3),
            score: -0.25,
            component_id: 1,
            level_index: 0,
            cell: (0, 0),
        }];
        let mut buf = Vec::new();
        write_detections(&dets, &[("config_digest", "ab12")], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# config_digest=ab12\nimage_id,"));
        assert_eq!(parse_detections(&text).unwrap(), dets);
        assert_eq!(comment_value(&text, "config_digest"), Some("ab12"));
    }

    #[test]
    fn malformed_detection_line() {
        let text = format!("{DETECTIONS_HEADER}\na,1,2,3,4,0.5,0\na,1,2,3,4,zz,0\n");
        assert!(matches!(parse_detections(&text).unwrap_err(), Error::Parse { line: 3, .. }));
    }
}
