//! CSV exchange for annotations, ground truth, predicted segments and
//! single-frame detections. Every file carries a header row.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{FrameDetection, Segment};
use crate::mining::FrameAnnotation;

#[derive(Serialize, Deserialize)]
struct AnnotationRow {
    video_id: u32,
    frame: usize,
    class: usize,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthRow {
    video_id: u32,
    start: usize,
    end: usize,
    class: usize,
}

#[derive(Serialize, Deserialize)]
struct SegmentRow {
    video_id: u32,
    class: usize,
    start: usize,
    end: usize,
    confidence: f64,
}

#[derive(Serialize, Deserialize)]
struct DetectionRow {
    video_id: u32,
    class: usize,
    frame: usize,
    confidence: f64,
}

fn csv_error(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    Error::parse(offset, e.to_string())
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("flushing csv", e))
}

fn read_rows<R: Read, T: DeserializeOwned>(input: R) -> Result<Vec<T>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input)
        .deserialize()
        .map(|r| r.map_err(csv_error))
        .collect()
}

pub fn write_annotations<W: Write>(out: W, anns: &[FrameAnnotation]) -> Result<()> {
    write_rows(
        out,
        anns.iter().map(|a| AnnotationRow {
            video_id: a.video,
            frame: a.frame,
            class: a.class,
        }),
    )
}

pub fn read_annotations<R: Read>(input: R) -> Result<Vec<FrameAnnotation>> {
    let rows: Vec<AnnotationRow> = read_rows(input)?;
    Ok(rows
        .into_iter()
        .map(|r| FrameAnnotation {
            video: r.video_id,
            frame: r.frame,
            class: r.class,
        })
        .collect())
}

pub fn write_ground_truth<W: Write>(out: W, segments: &[Segment]) -> Result<()> {
    write_rows(
        out,
        segments.iter().map(|s| GroundTruthRow {
            video_id: s.video,
            start: s.start,
            end: s.end,
            class: s.class,
        }),
    )
}

pub fn read_ground_truth<R: Read>(input: R) -> Result<Vec<Segment>> {
    let rows: Vec<GroundTruthRow> = read_rows(input)?;
    rows.into_iter()
        .map(|r| {
            checked(Segment {
                video: r.video_id,
                start: r.start,
                end: r.end,
                class: r.class,
                confidence: 1.0,
            })
        })
        .collect()
}

fn checked(s: Segment) -> Result<Segment> {
    if s.start > s.end {
        return Err(Error::argument(format!("segment of video {} ends before it starts", s.video)));
    }
    Ok(s)
}

pub fn write_segments<W: Write>(out: W, segments: &[Segment]) -> Result<()> {
    write_rows(
        out,
        segments.iter().map(|s| SegmentRow {
            video_id: s.video,
            start: s.start,
            end: s.end,
            class: s.class,
            confidence: s.confidence,
        }),
    )
}

pub fn read_segments<R: Read>(input: R) -> Result<Vec<Segment>> {
    let rows: Vec<SegmentRow> = read_rows(input)?;
    rows.into_iter()
        .map(|r| {
            checked(Segment {
                video: r.video_id,
                start: r.start,
                end: r.end,
                class: r.class,
                confidence: r.confidence,
            })
        })
        .collect()
}

pub fn write_detections<W: Write>(out: W, detections: &[FrameDetection]) -> Result<()> {
    write_rows(
        out,
        detections.iter().map(|d| DetectionRow {
            video_id: d.video,
            frame: d.frame,
            class: d.class,
            confidence: d.confidence,
        }),
    )
}

pub fn read_detections<R: Read>(input: R) -> Result<Vec<FrameDetection>> {
    let rows: Vec<DetectionRow> = read_rows(input)?;
    Ok(rows
        .into_iter()
        .map(|r| FrameDetection {
            video: r.video_id,
            frame: r.frame,
            class: r.class,
            confidence: r.confidence,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotation_csv_layout() {
        let anns = [FrameAnnotation { video: 3, frame: 17, class: 2 }];
        let mut buf = Vec::new();
        write_annotations(&mut buf, &anns).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "video_id,frame,class\n3,17,2\n");
        assert_eq!(read_annotations(buf.as_slice()).unwrap(), anns);
    }

    #[test]
    fn ground_truth_csv_layout() {
        let text = "video_id,start,end,class\n0, 4, 9, 1\n2,0,0,3\n";
        let gt = read_ground_truth(text.as_bytes()).unwrap();
        assert_eq!(gt.len(), 2);
        assert_eq!((gt[0].start, gt[0].end, gt[1].class), (4, 9, 3));
        assert!(read_ground_truth("video_id,start,end,class\n0,9,4,1\n".as_bytes()).is_err());
        assert!(matches!(
            read_ground_truth("video_id,start,end,class\n0,x,4,1\n".as_bytes()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn prediction_csv_layout() {
        let s = [Segment { video: 1, start: 2, end: 5, class: 1, confidence: 1.25 }];
        let mut buf = Vec::new();
        write_segments(&mut buf, &s).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "video_id,class,start,end,confidence\n1,1,2,5,1.25\n"
        );
        assert_eq!(read_segments(buf.as_slice()).unwrap(), s);
        let d = [FrameDetection { video: 1, frame: 4, class: 2, confidence: 0.5 }];
        let mut buf = Vec::new();
        write_detections(&mut buf, &d).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "video_id,class,frame,confidence\n1,2,4,0.5\n");
        assert_eq!(read_detections(buf.as_slice()).unwrap(), d);
    }
}
