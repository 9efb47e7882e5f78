//! Track file parsing and writing.
//!
//! A track file is UTF-8 CSV with one detection per line:
//! `frame,id,x,y,w,h,class,score` where (x, y) is the top-left corner in
//! pixels. A header line is optional.

use super::{DetectedObject, OBJECT_CLASS_COUNT};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::scalar::{real, Scalar};
use std::io::{BufRead, Write};

/// Frame geometry and filtering applied while parsing a track file.
#[derive(Debug, Clone)]
pub struct TrackParseConfig {
    pub frame_width: f64,
    pub frame_height: f64,
    /// Detections scoring below this are dropped.
    pub score_threshold: f64,
}

impl Default for TrackParseConfig {
    fn default() -> Self {
        Self { frame_width: 1280.0, frame_height: 720.0, score_threshold: 0.5 }
    }
}

/// Parse a track file. Boxes are clamped to the frame; lines under the score
/// threshold are dropped.
pub fn parse_track_file<S: Scalar, R: BufRead>(
    reader: R,
    cfg: &TrackParseConfig,
) -> Result<Vec<DetectedObject<S>>> {
    let mut objects = Vec::new();
    let mut first_content_line = true;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if first_content_line {
            first_content_line = false;
            // header detection: first field of the first line is not numeric
            let head = trimmed.split(',').next().unwrap_or("").trim();
            if head.parse::<f64>().is_err() {
                continue;
            }
        }
        if let Some(obj) = parse_line(trimmed, line_no, cfg)? {
            objects.push(obj);
        }
    }
    Ok(objects)
}

fn parse_line<S: Scalar>(
    line: &str,
    line_no: usize,
    cfg: &TrackParseConfig,
) -> Result<Option<DetectedObject<S>>> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 8 {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("expected 8 fields `frame,id,x,y,w,h,class,score`, got {}", fields.len()),
        });
    }
    let num = |i: usize, name: &str| -> Result<f64> {
        fields[i].parse::<f64>().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("field '{name}' is not a number: '{}'", fields[i]),
        })
    };
    let frame = num(0, "frame")?;
    if frame < 0.0 || frame.fract() != 0.0 {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("frame index must be a non-negative integer, got '{}'", fields[0]),
        });
    }
    let instance = num(1, "id")?;
    if instance.fract() != 0.0 {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("track id must be an integer, got '{}'", fields[1]),
        });
    }
    let x = num(2, "x")?;
    let y = num(3, "y")?;
    let w = num(4, "w")?;
    let h = num(5, "h")?;
    let class = num(6, "class")?;
    let score = num(7, "score")?;

    if score < cfg.score_threshold {
        return Ok(None);
    }
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::RejectedRecord {
            line: line_no,
            msg: format!("box size must be positive, got {w}x{h}"),
        });
    }
    if class.fract() != 0.0 || class < 0.0 || class >= OBJECT_CLASS_COUNT as f64 {
        return Err(Error::RejectedRecord {
            line: line_no,
            msg: format!("class must be an integer in [0, {OBJECT_CLASS_COUNT}), got '{}'", fields[6]),
        });
    }
    let bbox = BoundingBox::new(x, y, w, h).clamped(cfg.frame_width, cfg.frame_height);
    if bbox.is_empty() {
        return Err(Error::RejectedRecord {
            line: line_no,
            msg: format!(
                "box ({x},{y}) {w}x{h} lies outside the {}x{} frame",
                cfg.frame_width, cfg.frame_height
            ),
        });
    }
    Ok(Some(DetectedObject {
        frame: frame as usize,
        instance: instance as i64,
        class: class as u8,
        bbox: BoundingBox::new(
            real(bbox.x_min),
            real(bbox.y_min),
            real(bbox.width),
            real(bbox.height),
        ),
    }))
}

/// Write detections in the track file format (score column fixed at 1).
pub fn write_track_file<S: Scalar, W: Write>(
    mut writer: W,
    objects: &[DetectedObject<S>],
) -> Result<()> {
    writeln!(writer, "frame,id,x,y,w,h,class,score")?;
    for o in objects {
        writeln!(
            writer,
            "{},{},{},{},{},{},{},1",
            o.frame, o.instance, o.bbox.x_min, o.bbox.y_min, o.bbox.width, o.bbox.height, o.class
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> TrackParseConfig {
        TrackParseConfig { frame_width: 100.0, frame_height: 100.0, score_threshold: 0.5 }
    }

    #[test]
    fn parses_a_plain_line() {
        let objs: Vec<DetectedObject> =
            parse_track_file("3,7,10,20,30,40,2,0.9".as_bytes(), &cfg()).unwrap();
        assert_eq!(objs.len(), 1);
        let o = &objs[0];
        assert_eq!((o.frame, o.instance, o.class), (3, 7, 2));
        assert_eq!(o.bbox, BoundingBox::new(10.0, 20.0, 30.0, 40.0));
    }

    #[test]
    fn empty_stream_gives_empty_list() {
        let objs: Vec<DetectedObject> = parse_track_file("".as_bytes(), &cfg()).unwrap();
        assert!(objs.is_empty());
    }

    #[test]
    fn negative_width_is_rejected_with_line_number() {
        let err =
            parse_track_file::<f64, _>("3,7,10,20,-5,40,2,0.9".as_bytes(), &cfg()).unwrap_err();
        assert!(matches!(err, Error::RejectedRecord { line: 1, .. }), "{err}");
    }

    #[test]
    fn malformed_line_reports_its_line_number() {
        let data = "1,1,5,5,5,5,2,0.9\nnot,a,valid,row\n";
        let err = parse_track_file::<f64, _>(data.as_bytes(), &cfg()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn class_out_of_range_is_rejected() {
        let err =
            parse_track_file::<f64, _>("3,7,10,20,5,5,8,0.9".as_bytes(), &cfg()).unwrap_err();
        assert!(matches!(err, Error::RejectedRecord { line: 1, .. }), "{err}");
    }

    #[test]
    fn low_scores_are_dropped() {
        let data = "0,1,5,5,5,5,2,0.4\n0,2,5,5,5,5,2,0.6\n";
        let objs: Vec<DetectedObject> = parse_track_file(data.as_bytes(), &cfg()).unwrap();
        assert_eq!(objs.len(), 1);
        assert_eq!(objs[0].instance, 2);
    }

    #[test]
    fn header_line_is_skipped() {
        let data = "frame,id,x,y,w,h,class,score\n0,1,5,5,5,5,2,0.9\n";
        let objs: Vec<DetectedObject> = parse_track_file(data.as_bytes(), &cfg()).unwrap();
        assert_eq!(objs.len(), 1);
    }

    #[test]
    fn boxes_are_clamped_to_the_frame() {
        let objs: Vec<DetectedObject> =
            parse_track_file("0,1,95,95,20,20,2,0.9".as_bytes(), &cfg()).unwrap();
        assert_eq!(objs[0].bbox, BoundingBox::new(95.0, 95.0, 5.0, 5.0));
    }

    #[test]
    fn fully_outside_box_is_rejected() {
        let err =
            parse_track_file::<f64, _>("0,1,200,200,20,20,2,0.9".as_bytes(), &cfg()).unwrap_err();
        assert!(matches!(err, Error::RejectedRecord { .. }), "{err}");
    }

    proptest! {
        /// Valid in-frame detections survive a write/parse round trip exactly.
        #[test]
        fn write_then_parse_round_trips(
            entries in proptest::collection::vec(
                (0usize..50, 0i64..20, 0.0..80.0f64, 0.0..80.0f64, 0.1..20.0f64, 0.1..20.0f64, 0u8..8),
                0..40,
            )
        ) {
            let mut objects: Vec<DetectedObject> = entries
                .into_iter()
                .map(|(frame, instance, x, y, w, h, class)| DetectedObject {
                    frame,
                    instance,
                    class,
                    bbox: BoundingBox::new(x, y, w, h),
                })
                .collect();
            objects.sort_by_key(|o| (o.frame, o.instance));
            objects.dedup_by_key(|o| (o.frame, o.instance));

            let mut buf = Vec::new();
            write_track_file(&mut buf, &objects).unwrap();
            let reparsed: Vec<DetectedObject> = parse_track_file(buf.as_slice(), &cfg()).unwrap();
            prop_assert_eq!(reparsed, objects);
        }
    }
}
