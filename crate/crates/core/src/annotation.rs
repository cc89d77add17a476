//! Strongly segmented gesture annotations and their CSV table form:
//!
//! ```text
//! video_id,class_id,start_frame,end_frame
//! train_00000,3,4,11
//! ```
//!
//! Frames are zero-based and `end_frame` is inclusive. Class ids run from 1;
//! id 0 is reserved for no-gesture and never appears in the table.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NO_GESTURE: usize = 0;
pub const ANNOTATION_HEADER: [&str; 4] = ["video_id", "class_id", "start_frame", "end_frame"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub video_id: String,
    pub class_id: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl FrameAnnotation {
    pub fn new(video_id: impl Into<String>, class_id: usize, start_frame: usize, end_frame: usize) -> Self {
        FrameAnnotation {
            video_id: video_id.into(),
            class_id,
            start_frame,
            end_frame,
        }
    }

    /// Inclusive frame count.
    pub fn len(&self) -> usize {
        self.end_frame + 1 - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.start_frame..=self.end_frame).contains(&frame)
    }
}

/// Checks one video's segments: ordered bounds, inside `[0, frames)`,
/// gesture class ids, no overlap. Returns them sorted by start frame.
pub fn validate_segments(segments: &[FrameAnnotation], frames: usize) -> Result<Vec<FrameAnnotation>> {
    let mut sorted = segments.to_vec();
    sorted.sort_by_key(|a| (a.start_frame, a.end_frame));
    for a in &sorted {
        if a.start_frame > a.end_frame {
            return Err(Error::Annotation(format!(
                "{}: start frame {} after end frame {}",
                a.video_id, a.start_frame, a.end_frame
            )));
        }
        if a.end_frame >= frames {
            return Err(Error::Annotation(format!(
                "{}: segment [{}, {}] outside a {frames}-frame video",
                a.video_id, a.start_frame, a.end_frame
            )));
        }
        if a.class_id == NO_GESTURE {
            return Err(Error::Annotation(format!("{}: class id 0 is reserved", a.video_id)));
        }
    }
    for w in sorted.windows(2) {
        if w[1].start_frame <= w[0].end_frame {
            return Err(Error::Annotation(format!(
                "{}: segments [{}, {}] and [{}, {}] overlap",
                w[0].video_id, w[0].start_frame, w[0].end_frame, w[1].start_frame, w[1].end_frame
            )));
        }
    }
    Ok(sorted)
}

/// Per-frame class labels (0 for background).
pub fn frame_labels(segments: &[FrameAnnotation], frames: usize) -> Result<Vec<usize>> {
    let sorted = validate_segments(segments, frames)?;
    let mut labels = vec![NO_GESTURE; frames];
    for a in &sorted {
        labels[a.start_frame..=a.end_frame].fill(a.class_id);
    }
    Ok(labels)
}

/// Parses an annotation table, grouping rows by video id.
pub fn parse_annotation_table<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<FrameAnnotation>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Annotation(format!("header: {e}")))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ANNOTATION_HEADER {
        return Err(Error::Annotation(format!(
            "expected header {}, got {}",
            ANNOTATION_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out: BTreeMap<String, Vec<FrameAnnotation>> = BTreeMap::new();
    for (line, row) in rdr.deserialize::<FrameAnnotation>().enumerate() {
        let a = row.map_err(|e| Error::Annotation(format!("row {}: {e}", line + 1)))?;
        if a.start_frame > a.end_frame || a.class_id == NO_GESTURE {
            return Err(Error::Annotation(format!("row {}: invalid segment {a:?}", line + 1)));
        }
        out.entry(a.video_id.clone()).or_default().push(a);
    }
    Ok(out)
}

pub fn write_annotation_table<W: Write>(writer: W, rows: &[FrameAnnotation]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(ANNOTATION_HEADER)
        .and_then(|_| {
            rows.iter().try_for_each(|r| {
                wtr.write_record([
                    r.video_id.clone(),
                    r.class_id.to_string(),
                    r.start_frame.to_string(),
                    r.end_frame.to_string(),
                ])
            })
        })
        .and_then(|_| wtr.flush().map_err(Into::into))
        .map_err(|e| Error::Data(format!("writing annotation table: {e}")))
}
