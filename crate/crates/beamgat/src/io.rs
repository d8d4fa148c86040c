//! File formats: KITTI Velodyne `.bin` reading, CSV/PLY export of point
//! clouds, masked-frame persistence with a truth sidecar, and small CSV
//! writers for metrics artifacts.
//!
//! CSV clouds carry the header `x,y,z,reflectance,beam,masked` with 9 decimal
//! digits, an empty beam column when the channel is unknown, and `masked` as
//! 0/1; round trips are lossless at that precision.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::beam::MaskedFrame;
use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

const CSV_HEADER: &str = "x,y,z,reflectance,beam,masked";

/// Read a raw Velodyne scan: consecutive 16-byte little-endian records of
/// `f32 x, y, z, reflectance`, promoted to f64. Returns the cloud and the
/// number of records dropped for non-finite values.
pub fn read_kitti_bin(path: &Path) -> Result<(PointCloud, usize)> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(Error::format(
            path,
            format!("length {} is not a multiple of 16-byte records", bytes.len()),
        ));
    }
    let frame_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "frame".into());
    let mut points = Vec::with_capacity(bytes.len() / 16);
    let mut dropped = 0usize;
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        let (x, y, z, refl) = (f(0), f(1), f(2), f(3));
        if [x, y, z, refl].iter().all(|v| v.is_finite()) {
            points.push(Point::new(x, y, z, refl));
        } else {
            dropped += 1;
        }
    }
    Ok((PointCloud::new(frame_id, points), dropped))
}

fn fmt_point(p: &Point) -> String {
    let beam = p.beam.map(|b| b.to_string()).unwrap_or_default();
    format!(
        "{:.9},{:.9},{:.9},{:.9},{},{}",
        p.x,
        p.y,
        p.z,
        p.reflectance,
        beam,
        p.masked as u8
    )
}

/// Write the cloud as CSV with header `x,y,z,reflectance,beam,masked`.
pub fn write_csv(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut out = String::with_capacity(64 * (cloud.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for p in &cloud.points {
        out.push_str(&fmt_point(p));
        out.push('\n');
    }
    w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a CSV cloud written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<PointCloud> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == CSV_HEADER => {}
        Some(Ok(h)) => return Err(Error::format(path, format!("unexpected header {h:?}"))),
        Some(Err(e)) => return Err(Error::io(path, e)),
        None => return Err(Error::format(path, "empty file, expected a header row")),
    }
    let frame_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "frame".into());
    let mut points = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::format(
                path,
                format!("row {}: expected 6 fields, got {}", lineno + 2, fields.len()),
            ));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::format(path, format!("row {}: bad {what} {s:?}", lineno + 2)))
        };
        let mut p = Point::new(
            num(fields[0], "x")?,
            num(fields[1], "y")?,
            num(fields[2], "z")?,
            num(fields[3], "reflectance")?,
        );
        let beam_field = fields[4].trim();
        p.beam = if beam_field.is_empty() {
            None
        } else {
            Some(beam_field.parse::<u32>().map_err(|_| {
                Error::format(path, format!("row {}: bad beam {beam_field:?}", lineno + 2))
            })?)
        };
        p.masked = match fields[5].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::format(
                    path,
                    format!("row {}: bad masked flag {other:?}", lineno + 2),
                ))
            }
        };
        points.push(p);
    }
    Ok(PointCloud::new(frame_id, points))
}

/// Write the cloud as ASCII PLY with `x,y,z,reflectance,beam,masked` vertex
/// properties (beam −1 when unknown).
pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut out = String::with_capacity(64 * cloud.len() + 256);
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", cloud.len()));
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    out.push_str("property double reflectance\nproperty int beam\nproperty uchar masked\n");
    out.push_str("end_header\n");
    for p in &cloud.points {
        let beam = p.beam.map(|b| b as i64).unwrap_or(-1);
        out.push_str(&format!(
            "{:.9} {:.9} {:.9} {:.9} {} {}\n",
            p.x, p.y, p.z, p.reflectance, beam, p.masked as u8
        ));
    }
    w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Persist a masked frame as the masked cloud CSV plus a truth sidecar
/// (`index,beam,truth_z` rows for each masked point).
pub fn write_masked_frame(frame: &MaskedFrame, cloud_path: &Path, truth_path: &Path) -> Result<()> {
    write_csv(&frame.cloud, cloud_path)?;
    let mut w = BufWriter::new(File::create(truth_path).map_err(|e| Error::io(truth_path, e))?);
    let mut out = String::from("index,beam,truth_z\n");
    let mut truth = frame.truth_z.iter();
    for (i, p) in frame.cloud.points.iter().enumerate() {
        if p.masked {
            let tz = truth.next().ok_or_else(|| {
                Error::Internal("truth list shorter than masked points".into())
            })?;
            out.push_str(&format!("{},{},{:.9}\n", i, p.beam.unwrap_or(0), tz));
        }
    }
    w.write_all(out.as_bytes()).map_err(|e| Error::io(truth_path, e))?;
    w.flush().map_err(|e| Error::io(truth_path, e))
}

/// Load a masked frame written by [`write_masked_frame`].
pub fn read_masked_frame(cloud_path: &Path, truth_path: &Path) -> Result<MaskedFrame> {
    let cloud = read_csv(cloud_path)?;
    let file = File::open(truth_path).map_err(|e| Error::io(truth_path, e))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "index,beam,truth_z" => {}
        Some(Ok(h)) => return Err(Error::format(truth_path, format!("unexpected header {h:?}"))),
        Some(Err(e)) => return Err(Error::io(truth_path, e)),
        None => return Err(Error::format(truth_path, "empty truth sidecar")),
    }
    let mut truth_z = Vec::new();
    let mut indices = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(truth_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::format(truth_path, "expected index,beam,truth_z rows"));
        }
        indices.push(fields[0].trim().parse::<usize>().map_err(|_| {
            Error::format(truth_path, format!("bad index {:?}", fields[0]))
        })?);
        truth_z.push(fields[2].trim().parse::<f64>().map_err(|_| {
            Error::format(truth_path, format!("bad truth_z {:?}", fields[2]))
        })?);
    }
    let masked: Vec<usize> = cloud
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.masked.then_some(i))
        .collect();
    if masked != indices {
        return Err(Error::format(
            truth_path,
            "truth sidecar does not match the masked points of the cloud",
        ));
    }
    let dropped_beams: BTreeSet<u32> = cloud
        .points
        .iter()
        .filter(|p| p.masked)
        .filter_map(|p| p.beam)
        .collect();
    Ok(MaskedFrame {
        cloud,
        truth_z,
        dropped_beams,
    })
}

/// Write generic CSV rows (header + preformatted lines); used for metrics,
/// training logs, sweeps and CDF tables.
pub fn write_csv_rows(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut out = String::with_capacity(header.len() + 1 + rows.iter().map(|r| r.len() + 1).sum::<usize>());
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beam::{apply_channel_dropout, DropoutPattern};

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn kitti_bin_round_trip_against_handcrafted_bytes() {
        // craft the bytes independently: two records (1,2,3,0.5), (4,5,6,0.25)
        let dir = tmpdir();
        let path = dir.path().join("scan.bin");
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5, 4.0, 5.0, 6.0, 0.25] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        let (cloud, dropped) = read_kitti_bin(&path).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(cloud.len(), 2);
        assert_eq!(
            (cloud.points[0].x, cloud.points[0].y, cloud.points[0].z),
            (1.0, 2.0, 3.0)
        );
        assert_eq!(cloud.points[1].reflectance, 0.25);
        assert!(cloud.points[0].beam.is_none());
        assert!(!cloud.points[0].masked);
    }

    #[test]
    fn kitti_bin_empty_and_truncated() {
        let dir = tmpdir();
        let empty = dir.path().join("empty.bin");
        std::fs::write(&empty, b"").unwrap();
        let (cloud, _) = read_kitti_bin(&empty).unwrap();
        assert!(cloud.is_empty());

        let bad = dir.path().join("bad.bin");
        std::fs::write(&bad, vec![0u8; 17]).unwrap();
        assert!(matches!(read_kitti_bin(&bad), Err(Error::Format { .. })));
    }

    #[test]
    fn kitti_bin_drops_non_finite_records() {
        let dir = tmpdir();
        let path = dir.path().join("nan.bin");
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in [f32::NAN, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        let (cloud, dropped) = read_kitti_bin(&path).unwrap();
        assert_eq!((cloud.len(), dropped), (1, 1));
    }

    #[test]
    fn csv_round_trip_at_stated_precision() {
        let dir = tmpdir();
        let path = dir.path().join("cloud.csv");
        let mut points = vec![
            Point::new(-79.123456789, 71.77, -1.7301234, 0.333333333),
            Point::new(0.1, -0.2, 0.0, 1.0),
        ];
        points[0].beam = Some(12);
        points[0].masked = true;
        let cloud = PointCloud::new("cloud", points);
        write_csv(&cloud, &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.len(), cloud.len());
        for (a, b) in back.points.iter().zip(&cloud.points) {
            assert!((a.x - b.x).abs() < 1e-9);
            assert!((a.y - b.y).abs() < 1e-9);
            assert!((a.z - b.z).abs() < 1e-9);
            assert!((a.reflectance - b.reflectance).abs() < 1e-9);
            assert_eq!(a.beam, b.beam);
            assert_eq!(a.masked, b.masked);
        }
    }

    #[test]
    fn csv_empty_cloud_is_header_only() {
        let dir = tmpdir();
        let path = dir.path().join("empty.csv");
        write_csv(&PointCloud::new("e", vec![]), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n"));
        assert!(read_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn csv_serializes_masked_as_zero_one() {
        let dir = tmpdir();
        let path = dir.path().join("m.csv");
        let mut p = Point::new(1.0, 2.0, 3.0, 0.5);
        p.masked = true;
        write_csv(&PointCloud::new("m", vec![p]), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(",1"));
    }

    #[test]
    fn ply_has_declared_vertex_count() {
        let dir = tmpdir();
        let path = dir.path().join("cloud.ply");
        let mut p = Point::new(1.0, 2.0, -3.0, 0.5);
        p.beam = Some(3);
        write_ply(&PointCloud::new("p", vec![p]), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("element vertex 1"));
        assert!(text.contains("end_header"));
        assert_eq!(text.lines().count(), 11);
    }

    #[test]
    fn masked_frame_round_trip() {
        let mut points = Vec::new();
        for b in 0..8u32 {
            let mut p = Point::new(b as f64 + 1.0, 0.5, -1.5 + 0.01 * b as f64, 0.9);
            p.beam = Some(b);
            points.push(p);
        }
        let cloud = PointCloud::new("f3", points);
        let frame =
            apply_channel_dropout(&cloud, &DropoutPattern::EveryNth { n: 4, phase_offset: 1 }, 8)
                .unwrap();
        let dir = tmpdir();
        let cpath = dir.path().join("f3.masked.csv");
        let tpath = dir.path().join("f3.truth.csv");
        write_masked_frame(&frame, &cpath, &tpath).unwrap();
        let back = read_masked_frame(&cpath, &tpath).unwrap();
        assert_eq!(back.masked_count(), frame.masked_count());
        assert_eq!(back.truth_z.len(), frame.truth_z.len());
        assert_eq!(back.dropped_beams, frame.dropped_beams);
        for (a, b) in back.truth_z.iter().zip(&frame.truth_z) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
