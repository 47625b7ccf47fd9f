//! File formats shared by the command-line tools.
//!
//! All formats are little-endian or plain text and designed for bit-exact
//! round trips:
//!
//! * events: text header (`EVT1`, key-value lines, `data`) followed by
//!   binary records of `u32` timestamp offset (µs from `t_start_us`),
//!   `u16` u, `u16` v in fixed-point pixels (`fp_bits` fractional bits),
//!   and `i8` polarity — 9 bytes per event;
//! * map: text lines `id x1 y1 z1 x2 y2 z2` in metres, ids sequential
//!   from 0 in file order;
//! * calib: text key-value `fx fy cx cy k1 k2 w h`;
//! * trajectory/ground truth: text lines `t_us rx ry rz qw qx qy qz` with
//!   six optional per-axis standard-deviation columns appended.
//!
//! Floats are printed with Rust's shortest round-trip formatting, so text
//! values re-read exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::camera::{CameraCalib, Event, Segment3D};
use crate::filter::TrajectoryRecord;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Self::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}

/// Header of the binary event container.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventFileHeader {
    pub width: u32,
    pub height: u32,
    pub t_start_us: i64,
    pub duration_us: i64,
    /// Fractional bits of the fixed-point pixel coordinates.
    pub fp_bits: u8,
    /// True when coordinates are raw sensor pixels (lens distortion applied).
    pub distorted: bool,
}

impl Default for EventFileHeader {
    fn default() -> Self {
        Self {
            width: 240,
            height: 180,
            t_start_us: 0,
            duration_us: 0,
            fp_bits: 8,
            distorted: true,
        }
    }
}

pub const EVENT_MAGIC: &str = "EVT1";

pub fn write_events(
    path: &Path,
    header: &EventFileHeader,
    events: &[Event],
) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let scale = (1u32 << header.fp_bits) as f64;
    (|| -> std::io::Result<()> {
        writeln!(w, "{EVENT_MAGIC}")?;
        writeln!(w, "width {}", header.width)?;
        writeln!(w, "height {}", header.height)?;
        writeln!(w, "t_start_us {}", header.t_start_us)?;
        writeln!(w, "duration_us {}", header.duration_us)?;
        writeln!(w, "count {}", events.len())?;
        writeln!(w, "fp_bits {}", header.fp_bits)?;
        writeln!(w, "distorted {}", header.distorted as u8)?;
        writeln!(w, "data")?;
        for e in events {
            let dt = (e.t_us - header.t_start_us).max(0) as u32;
            let u = (e.u * scale).round() as u16;
            let v = (e.v * scale).round() as u16;
            w.write_all(&dt.to_le_bytes())?;
            w.write_all(&u.to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
            w.write_all(&e.polarity.to_le_bytes())?;
        }
        Ok(())
    })()
    .map_err(|e| FormatError::io(path, e))
}

pub fn read_events(path: &Path) -> Result<(EventFileHeader, Vec<Event>), FormatError> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut header = EventFileHeader::default();
    let mut count = 0usize;
    let mut line_no = 0usize;
    let mut line = String::new();
    // Header lines until the data marker.
    loop {
        line.clear();
        let n = r
            .read_line(&mut line)
            .map_err(|e| FormatError::io(path, e))?;
        line_no += 1;
        if n == 0 {
            return Err(FormatError::parse(path, line_no, "missing data section"));
        }
        let t = line.trim();
        if line_no == 1 {
            if t != EVENT_MAGIC {
                return Err(FormatError::parse(path, 1, format!("bad magic {t:?}")));
            }
            continue;
        }
        if t == "data" {
            break;
        }
        let (key, value) = t
            .split_once(' ')
            .ok_or_else(|| FormatError::parse(path, line_no, "expected `key value`"))?;
        let parse_u64 = |v: &str| -> Result<u64, FormatError> {
            v.parse()
                .map_err(|_| FormatError::parse(path, line_no, format!("bad integer {v:?}")))
        };
        match key {
            "width" => header.width = parse_u64(value)? as u32,
            "height" => header.height = parse_u64(value)? as u32,
            "t_start_us" => {
                header.t_start_us = value.parse().map_err(|_| {
                    FormatError::parse(path, line_no, format!("bad integer {value:?}"))
                })?
            }
            "duration_us" => {
                header.duration_us = value.parse().map_err(|_| {
                    FormatError::parse(path, line_no, format!("bad integer {value:?}"))
                })?
            }
            "count" => count = parse_u64(value)? as usize,
            "fp_bits" => header.fp_bits = parse_u64(value)? as u8,
            "distorted" => header.distorted = parse_u64(value)? != 0,
            other => {
                return Err(FormatError::parse(
                    path,
                    line_no,
                    format!("unknown header key {other:?}"),
                ))
            }
        }
    }
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| FormatError::io(path, e))?;
    if raw.len() != count * 9 {
        return Err(FormatError::parse(
            path,
            line_no,
            format!("expected {} bytes of records, found {}", count * 9, raw.len()),
        ));
    }
    let scale = (1u32 << header.fp_bits) as f64;
    let mut events = Vec::with_capacity(count);
    for rec in raw.chunks_exact(9) {
        let dt = u32::from_le_bytes([rec[0], rec[1], rec[2], rec[3]]);
        let u = u16::from_le_bytes([rec[4], rec[5]]);
        let v = u16::from_le_bytes([rec[6], rec[7]]);
        let polarity = rec[8] as i8;
        events.push(Event {
            t_us: header.t_start_us + dt as i64,
            u: u as f64 / scale,
            v: v as f64 / scale,
            polarity,
        });
    }
    Ok((header, events))
}

pub fn write_map(path: &Path, map: &[Segment3D]) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "# id x1 y1 z1 x2 y2 z2")?;
        for s in map {
            writeln!(
                w,
                "{} {} {} {} {} {} {}",
                s.id, s.p1.x, s.p1.y, s.p1.z, s.p2.x, s.p2.y, s.p2.z
            )?;
        }
        Ok(())
    })()
    .map_err(|e| FormatError::io(path, e))
}

pub fn read_map(path: &Path) -> Result<Vec<Segment3D>, FormatError> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut map = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        let line_no = i + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(FormatError::parse(path, line_no, "expected 7 fields"));
        }
        let id: u32 = fields[0]
            .parse()
            .map_err(|_| FormatError::parse(path, line_no, "bad segment id"))?;
        if id as usize != map.len() {
            return Err(FormatError::parse(
                path,
                line_no,
                format!("segment ids must be sequential from 0, found {id}"),
            ));
        }
        let mut vals = [0.0f64; 6];
        for (k, f) in fields[1..].iter().enumerate() {
            vals[k] = f
                .parse()
                .map_err(|_| FormatError::parse(path, line_no, format!("bad float {f:?}")))?;
        }
        if vals[..3] == vals[3..] {
            return Err(FormatError::parse(path, line_no, "degenerate segment"));
        }
        map.push(Segment3D {
            id,
            p1: Vector3::new(vals[0], vals[1], vals[2]),
            p2: Vector3::new(vals[3], vals[4], vals[5]),
        });
    }
    Ok(map)
}

pub fn write_calib(path: &Path, calib: &CameraCalib) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "fx {}", calib.fx)?;
        writeln!(w, "fy {}", calib.fy)?;
        writeln!(w, "cx {}", calib.cx)?;
        writeln!(w, "cy {}", calib.cy)?;
        writeln!(w, "k1 {}", calib.k1)?;
        writeln!(w, "k2 {}", calib.k2)?;
        writeln!(w, "w {}", calib.width)?;
        writeln!(w, "h {}", calib.height)?;
        Ok(())
    })()
    .map_err(|e| FormatError::io(path, e))
}

pub fn read_calib(path: &Path) -> Result<CameraCalib, FormatError> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut calib = CameraCalib {
        fx: 0.0,
        fy: 0.0,
        cx: 0.0,
        cy: 0.0,
        k1: 0.0,
        k2: 0.0,
        width: 0,
        height: 0,
    };
    let mut seen = [false; 8];
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        let line_no = i + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (key, value) = t
            .split_once(char::is_whitespace)
            .ok_or_else(|| FormatError::parse(path, line_no, "expected `key value`"))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| FormatError::parse(path, line_no, format!("bad number {value:?}")))?;
        match key {
            "fx" => (calib.fx, seen[0]) = (v, true),
            "fy" => (calib.fy, seen[1]) = (v, true),
            "cx" => (calib.cx, seen[2]) = (v, true),
            "cy" => (calib.cy, seen[3]) = (v, true),
            "k1" => (calib.k1, seen[4]) = (v, true),
            "k2" => (calib.k2, seen[5]) = (v, true),
            "w" => (calib.width, seen[6]) = (v as u32, true),
            "h" => (calib.height, seen[7]) = (v as u32, true),
            other => {
                return Err(FormatError::parse(
                    path,
                    line_no,
                    format!("unknown calib key {other:?}"),
                ))
            }
        }
    }
    if !seen.iter().all(|&s| s) {
        return Err(FormatError::parse(path, 0, "missing calib fields"));
    }
    if calib.fx <= 0.0 || calib.fy <= 0.0 || calib.width == 0 || calib.height == 0 {
        return Err(FormatError::parse(path, 0, "calib values out of range"));
    }
    Ok(calib)
}

pub fn write_trajectory(
    path: &Path,
    records: &[TrajectoryRecord],
    with_sigma: bool,
) -> Result<(), FormatError> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        if with_sigma {
            writeln!(w, "# t_us rx ry rz qw qx qy qz s_rx s_ry s_rz s_tx s_ty s_tz")?;
        } else {
            writeln!(w, "# t_us rx ry rz qw qx qy qz")?;
        }
        for r in records {
            write!(
                w,
                "{} {} {} {} {} {} {} {}",
                r.t_us, r.pos.x, r.pos.y, r.pos.z, r.quat[0], r.quat[1], r.quat[2], r.quat[3]
            )?;
            if with_sigma {
                for s in r.sigma {
                    write!(w, " {s}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    })()
    .map_err(|e| FormatError::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRecord>, FormatError> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        let line_no = i + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        if fields.len() != 8 && fields.len() != 14 {
            return Err(FormatError::parse(
                path,
                line_no,
                format!("expected 8 or 14 fields, found {}", fields.len()),
            ));
        }
        let t_us: i64 = fields[0]
            .parse()
            .map_err(|_| FormatError::parse(path, line_no, "bad timestamp"))?;
        let mut vals = [0.0f64; 13];
        for (k, f) in fields[1..].iter().enumerate() {
            vals[k] = f
                .parse()
                .map_err(|_| FormatError::parse(path, line_no, format!("bad float {f:?}")))?;
        }
        let mut sigma = [0.0f64; 6];
        if fields.len() == 14 {
            sigma.copy_from_slice(&vals[7..13]);
        }
        let qn = (vals[3] * vals[3] + vals[4] * vals[4] + vals[5] * vals[5] + vals[6] * vals[6])
            .sqrt();
        if (qn - 1.0).abs() > 1e-6 {
            return Err(FormatError::parse(
                path,
                line_no,
                format!("quaternion norm {qn} is not 1"),
            ));
        }
        out.push(TrajectoryRecord {
            t_us,
            pos: Vector3::new(vals[0], vals[1], vals[2]),
            quat: [vals[3], vals[4], vals[5], vals[6]],
            sigma,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn event_file_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.evt");
        let header = EventFileHeader {
            width: 240,
            height: 180,
            t_start_us: 1000,
            duration_us: 5000,
            fp_bits: 8,
            distorted: true,
        };
        // Coordinates on the fixed-point lattice round-trip bit-exactly.
        let events = vec![
            Event {
                t_us: 1000,
                u: 12.5,
                v: 33.25,
                polarity: 1,
            },
            Event {
                t_us: 1001,
                u: 239.99609375,
                v: 0.0,
                polarity: -1,
            },
        ];
        write_events(&path, &header, &events).unwrap();
        let (h2, e2) = read_events(&path).unwrap();
        assert_eq!(h2, header);
        assert_eq!(e2, events);
        // Re-writing what was read reproduces the same file.
        let path2 = dir.path().join("s2.evt");
        write_events(&path2, &h2, &e2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn calib_and_map_round_trip() {
        let dir = tempdir().unwrap();
        let calib = crate::camera::tests::test_calib();
        let cpath = dir.path().join("c.calib");
        write_calib(&cpath, &calib).unwrap();
        assert_eq!(read_calib(&cpath).unwrap(), calib);

        let map = crate::sim::default_wireframe_map();
        let mpath = dir.path().join("m.map");
        write_map(&mpath, &map).unwrap();
        assert_eq!(read_map(&mpath).unwrap(), map);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.map");
        std::fs::write(&path, "# comment\n0 0 0 0 1 1 1\n1 nope 0 0 1 1 1\n").unwrap();
        match read_map(&path) {
            Err(FormatError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_sequential_map_ids_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ids.map");
        std::fs::write(&path, "0 0 0 0 1 1 1\n2 0 0 0 2 2 2\n").unwrap();
        assert!(matches!(read_map(&path), Err(FormatError::Parse { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn trajectory_round_trip(
            seed in 0u64..1000,
            n in 1usize..20,
            with_sigma in proptest::bool::ANY,
        ) {
            let mut rng = crate::rng::SplitMix64::new(seed);
            let dir = tempdir().unwrap();
            let path = dir.path().join("t.traj");
            let mut records = Vec::new();
            for i in 0..n {
                let axis = nalgebra::Vector3::new(
                    rng.uniform_in(-1.0, 1.0),
                    rng.uniform_in(-1.0, 1.0),
                    rng.uniform_in(-1.0, 1.0),
                );
                let q = nalgebra::UnitQuaternion::from_scaled_axis(axis);
                let mut sigma = [0.0; 6];
                if with_sigma {
                    for s in &mut sigma {
                        *s = rng.uniform();
                    }
                }
                records.push(TrajectoryRecord {
                    t_us: i as i64 * 100,
                    pos: nalgebra::Vector3::new(
                        rng.uniform_in(-1.0, 1.0),
                        rng.uniform_in(-1.0, 1.0),
                        rng.uniform_in(-1.0, 1.0),
                    ),
                    quat: [q.w, q.i, q.j, q.k],
                    sigma,
                });
            }
            write_trajectory(&path, &records, with_sigma).unwrap();
            let back = read_trajectory(&path).unwrap();
            prop_assert_eq!(back.len(), records.len());
            for (a, b) in records.iter().zip(&back) {
                prop_assert_eq!(a.t_us, b.t_us);
                // Shortest round-trip float formatting reproduces bits.
                prop_assert_eq!(a.pos, b.pos);
                prop_assert_eq!(a.quat, b.quat);
                prop_assert_eq!(a.sigma, b.sigma);
            }
        }
    }
}
