use std::fs;
use std::path::Path;

use corstitch::ingest::{
    frame_file_name, green_channel, parse_gps_reader, write_frame, Frame, FrameSequence, IngestError,
};
use image::{Rgb, RgbImage};

fn solid(w: u32, h: u32, g: u8) -> RgbImage {
    RgbImage::from_pixel(w, h, Rgb([1, g, 3]))
}

fn write_frames(dir: &Path, count: usize, w: u32, h: u32) {
    for i in 0..count {
        write_frame(dir, &Frame::new(i, 30.0, solid(w, h, i as u8))).unwrap();
    }
}

#[test]
fn timestamps_follow_index_over_fps() {
    let dir = tempfile::tempdir().unwrap();
    write_frames(dir.path(), 3, 40, 40);
    let seq = FrameSequence::open(dir.path(), 30.0).unwrap();
    let frames: Vec<Frame> = seq.iter().collect::<Result<_, _>>().unwrap();
    let times: Vec<f64> = frames.iter().map(|f| f.timestamp).collect();
    assert_eq!(times, vec![0.0, 1.0 / 30.0, 2.0 / 30.0]);
    assert_eq!(frames[2].pixels.get_pixel(0, 0)[1], 2);
}

#[test]
fn last_of_150_frames_at_149_over_30() {
    let dir = tempfile::tempdir().unwrap();
    write_frames(dir.path(), 150, 32, 32);
    let seq = FrameSequence::open(dir.path(), 30.0).unwrap();
    assert_eq!(seq.len(), 150);
    let last = seq.prefetch(4).last().unwrap().unwrap();
    assert_eq!(last.index, 149);
    assert_eq!(last.timestamp, 149.0 / 30.0);
}

#[test]
fn gap_in_numbering_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_frames(dir.path(), 3, 40, 40);
    fs::remove_file(dir.path().join(frame_file_name(1, "png"))).unwrap();
    let err = FrameSequence::open(dir.path(), 30.0).unwrap_err();
    assert!(matches!(err, IngestError::MissingFrame(1)));
    assert_eq!(err.to_string(), "missing frame 1");
}

#[test]
fn dimension_change_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_frames(dir.path(), 2, 40, 40);
    write_frame(dir.path(), &Frame::new(2, 30.0, solid(41, 40, 0))).unwrap();
    let seq = FrameSequence::open(dir.path(), 30.0).unwrap();
    let results: Vec<_> = seq.iter().collect();
    assert!(results[0].is_ok() && results[1].is_ok());
    assert!(matches!(results[2], Err(IngestError::DimensionMismatch { index: 2, .. })));
}

#[test]
fn ppm_frames_are_read() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..2 {
        solid(40, 40, 7).save(dir.path().join(frame_file_name(i, "ppm"))).unwrap();
    }
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let seq = FrameSequence::open(dir.path(), 25.0).unwrap();
    assert_eq!(seq.len(), 2);
    let f = seq.load(1).unwrap();
    assert_eq!(f.timestamp, 1.0 / 25.0);
    assert_eq!(green_channel(&f)[(0, 0)], 7.0);
}

#[test]
fn empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(FrameSequence::open(dir.path(), 30.0), Err(IngestError::EmptyDirectory(_))));
}

#[test]
fn strip_is_central_band_of_green() {
    let img = RgbImage::from_fn(10, 100, |_, y| Rgb([255, y as u8, 0]));
    let strip = Frame::new(0, 30.0, img).strip(0.2).unwrap();
    assert_eq!(strip.height(), 20);
    assert_eq!(strip.width(), 10);
    assert_eq!(strip.pixels[(0, 0)], 40.0);
    assert_eq!(strip.pixels[(19, 9)], 59.0);
}

#[test]
fn gps_rows_parse_to_epoch_seconds() {
    let csv = "date,time,latitude,longitude\n\
               2024-01-01,00:00:00,13.8,120.6\n\
               2024-01-01,00:00:01.5,13.80001,120.6\n\
               2024-01-01,00:00:01.5,13.80003,120.6\n";
    let track = parse_gps_reader(csv.as_bytes()).unwrap();
    let fixes = track.fixes();
    assert_eq!(fixes.len(), 2);
    assert_eq!(fixes[0].time, 1_704_067_200.0);
    assert_eq!(fixes[1].time, 1_704_067_201.5);
    assert!((fixes[1].lat - 13.80002).abs() < 1e-12);
}

#[test]
fn gps_errors_name_the_problem() {
    let missing = parse_gps_reader("date,time,latitude\n2024-01-01,00:00:00,1\n".as_bytes());
    assert!(matches!(missing, Err(IngestError::MissingColumn("longitude"))));
    let bad_lat = parse_gps_reader(
        "date,time,latitude,longitude\n2024-01-01,00:00:00,91,0\n2024-01-01,00:00:01,0,0\n".as_bytes(),
    );
    assert!(matches!(bad_lat, Err(IngestError::LatitudeOutOfRange(_))));
    let one = parse_gps_reader("date,time,latitude,longitude\n2024-01-01,00:00:00,1,1\n".as_bytes());
    assert!(one.is_err());
}
