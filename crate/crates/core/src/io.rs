//! Plain-text file formats.
//!
//! Every writer formats floats with Rust's shortest round-trip representation,
//! so reading a file back yields bit-identical values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Se3, StereoRig, TrajectoryDb};
use crate::mapping::SemiDenseDepthMap;
use crate::time_surface::{Event, Polarity};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn field<T: std::str::FromStr>(
    tok: Option<&str>,
    name: &str,
    path: &Path,
    line: usize,
) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(path, line, format!("missing {name}")))?;
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("invalid {name} `{tok}`")))
}

fn is_blank(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

/// Streams events from "t x y p" lines (p is 0 or 1).
pub struct EventReader<R> {
    lines: std::io::Lines<R>,
    path: PathBuf,
    line: usize,
}

impl<R: BufRead> EventReader<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Self {
        Self {
            lines: reader.lines(),
            path: path.into(),
            line: 0,
        }
    }

    fn parse(&self, text: &str) -> Result<Event> {
        let mut it = text.split_whitespace();
        let t: f64 = field(it.next(), "timestamp", &self.path, self.line)?;
        let x: u16 = field(it.next(), "x", &self.path, self.line)?;
        let y: u16 = field(it.next(), "y", &self.path, self.line)?;
        let p: u8 = field(it.next(), "polarity", &self.path, self.line)?;
        if it.next().is_some() {
            return Err(parse_err(&self.path, self.line, "trailing fields"));
        }
        if !t.is_finite() {
            return Err(parse_err(&self.path, self.line, "non-finite timestamp"));
        }
        let polarity = match p {
            0 => Polarity::Negative,
            1 => Polarity::Positive,
            _ => return Err(parse_err(&self.path, self.line, "polarity must be 0 or 1")),
        };
        Ok(Event::new(t, x, y, polarity))
    }
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<Event>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if is_blank(&text) {
                continue;
            }
            return Some(self.parse(&text));
        }
    }
}

pub fn open_events(path: &Path) -> Result<EventReader<BufReader<File>>> {
    Ok(EventReader::new(BufReader::new(File::open(path)?), path))
}

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    open_events(path)?.collect()
}

pub fn write_events_to<W: Write>(mut w: W, events: &[Event]) -> Result<()> {
    for e in events {
        let p = match e.polarity {
            Polarity::Positive => 1,
            Polarity::Negative => 0,
        };
        writeln!(w, "{} {} {} {}", e.t, e.x, e.y, p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events(path: &Path, events: &[Event]) -> Result<()> {
    write_events_to(BufWriter::new(File::create(path)?), events)
}

/// Parses `key = value` lines; `#` starts a comment. Returns `(key, value, line)`.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, i + 1, "expected key=value"))?;
        out.push((k.trim().to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

const CALIBRATION_KEYS: [&str; 11] = [
    "fx_l", "fy_l", "cx_l", "cy_l", "fx_r", "fy_r", "cx_r", "cy_r", "width", "height", "baseline_m",
];

/// Reads a rectified stereo calibration.
pub fn read_calibration(path: &Path) -> Result<StereoRig> {
    let text = std::fs::read_to_string(path)?;
    let mut values = [f64::NAN; 11];
    let mut seen = [false; 11];
    for (k, v, line) in parse_key_values(&text, path)? {
        let idx = CALIBRATION_KEYS
            .iter()
            .position(|&c| c == k)
            .ok_or(Error::UnknownKey(k.clone()))?;
        values[idx] = field(Some(v.as_str()), &k, path, line)?;
        seen[idx] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::MissingKey(CALIBRATION_KEYS[i].to_string()));
    }
    let dim = |v: f64, name: &str| {
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::InvalidCamera(format!("{name} must be a positive integer")))
        }
    };
    let (w, h) = (dim(values[8], "width")?, dim(values[9], "height")?);
    let left = CameraModel::new(values[0], values[1], values[2], values[3], w, h)?;
    let right = CameraModel::new(values[4], values[5], values[6], values[7], w, h)?;
    StereoRig::rectified(left, right, values[10])
}

pub fn write_calibration(path: &Path, rig: &StereoRig) -> Result<()> {
    let (l, r) = (&rig.left, &rig.right);
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "fx_l = {}\nfy_l = {}\ncx_l = {}\ncy_l = {}", l.fx, l.fy, l.cx, l.cy)?;
    writeln!(w, "fx_r = {}\nfy_r = {}\ncx_r = {}\ncy_r = {}", r.fx, r.fy, r.cx, r.cy)?;
    writeln!(w, "width = {}\nheight = {}", l.width, l.height)?;
    writeln!(w, "baseline_m = {}", -rig.right_from_left.translation().x)?;
    w.flush()?;
    Ok(())
}

/// Reads "t tx ty tz qx qy qz qw" lines.
pub fn read_trajectory(path: &Path) -> Result<TrajectoryDb> {
    let reader = BufReader::new(File::open(path)?);
    let mut db = TrajectoryDb::new();
    for (i, text) in reader.lines().enumerate() {
        let text = text?;
        if is_blank(&text) {
            continue;
        }
        let line = i + 1;
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|tok| field(Some(tok), "number", path, line))
            .collect::<Result<_>>()?;
        if vals.len() != 8 {
            return Err(parse_err(path, line, format!("expected 8 fields, got {}", vals.len())));
        }
        let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
        let n = q.norm();
        if !((n - 1.0).abs() < 1e-6) {
            return Err(parse_err(path, line, format!("quaternion norm {n} is not 1")));
        }
        // Stored as written so that a write/read cycle is lossless.
        let rot = UnitQuaternion::new_unchecked(q);
        let pose = Se3::from_parts(rot, Vector3::new(vals[1], vals[2], vals[3]));
        db.push(vals[0], pose)
            .map_err(|e| parse_err(path, line, e.to_string()))?;
    }
    Ok(db)
}

pub fn write_trajectory(path: &Path, traj: &TrajectoryDb) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (t, pose) in traj.knots() {
        let p = pose.translation();
        let q = pose.rotation().into_inner();
        writeln!(
            w,
            "{} {} {} {} {} {} {} {}",
            t, p.x, p.y, p.z, q.i, q.j, q.k, q.w
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Row-major float image with a timestamp; NaN marks empty pixels.
#[derive(Clone, Debug)]
pub struct FloatMap {
    pub width: usize,
    pub height: usize,
    pub t: f64,
    pub data: Vec<f64>,
}

impl FloatMap {
    pub fn new(width: usize, height: usize, t: f64, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "value count mismatch");
        Self {
            width,
            height,
            t,
            data,
        }
    }

    pub fn at(&self, x: usize, y: usize) -> Option<f64> {
        let v = self.data[y * self.width + x];
        (!v.is_nan()).then_some(v)
    }

    /// Mean inverse depth and standard deviation of every map entry.
    pub fn from_depth_map(map: &SemiDenseDepthMap) -> (FloatMap, FloatMap) {
        let n = map.width() * map.height();
        let mut mu = vec![f64::NAN; n];
        let mut sigma = vec![f64::NAN; n];
        for ((x, y), e) in map.iter() {
            let i = y * map.width() + x;
            mu[i] = e.mean;
            sigma[i] = e.std_dev().unwrap_or(f64::INFINITY);
        }
        (
            FloatMap::new(map.width(), map.height(), map.t, mu),
            FloatMap::new(map.width(), map.height(), map.t, sigma),
        )
    }

    /// Bitwise equality, treating NaN payloads as values.
    pub fn bit_eq(&self, other: &FloatMap) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.t.to_bits() == other.t.to_bits()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub fn write_float_map(path: &Path, map: &FloatMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{} {} {}", map.width, map.height, map.t)?;
    for row in map.data.chunks(map.width) {
        let mut first = true;
        for v in row {
            if !first {
                w.write_all(b" ")?;
            }
            first = false;
            write!(w, "{v}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_float_map(path: &Path) -> Result<FloatMap> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing header"))?;
    let mut h = header.split_whitespace();
    let width: usize = field(h.next(), "width", path, 1)?;
    let height: usize = field(h.next(), "height", path, 1)?;
    let t: f64 = field(h.next(), "timestamp", path, 1)?;
    let mut data = Vec::with_capacity(width * height);
    for (i, line) in lines {
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(field::<f64>(Some(tok), "value", path, i + 1)?);
        }
        if data.len() - before != width {
            return Err(parse_err(path, i + 1, format!("expected {width} values")));
        }
    }
    if data.len() != width * height {
        return Err(parse_err(path, 1, format!("expected {height} rows")));
    }
    Ok(FloatMap::new(width, height, t, data))
}

/// Writes `<stem>_mu.txt` and `<stem>_sigma.txt` for a depth map.
pub fn write_depth_map(dir: &Path, stem: &str, map: &SemiDenseDepthMap) -> Result<(PathBuf, PathBuf)> {
    let (mu, sigma) = FloatMap::from_depth_map(map);
    let mu_path = dir.join(format!("{stem}_mu.txt"));
    let sigma_path = dir.join(format!("{stem}_sigma.txt"));
    write_float_map(&mu_path, &mu)?;
    write_float_map(&sigma_path, &sigma)?;
    Ok((mu_path, sigma_path))
}

pub fn write_ply(path: &Path, points: &[Vector3<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", points.len())?;
    writeln!(w, "property double x\nproperty double y\nproperty double z\nend_header")?;
    for p in points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ply(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let mut count = None;
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(path, 1, "not a PLY file")),
    }
    for (i, line) in lines.by_ref() {
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        if let Some(rest) = line.strip_prefix("element vertex ") {
            count = Some(field::<usize>(Some(rest.trim()), "vertex count", path, i + 1)?);
        } else if line.starts_with("format") && line != "format ascii 1.0" {
            return Err(parse_err(path, i + 1, "only ASCII PLY is supported"));
        }
    }
    let count = count.ok_or_else(|| parse_err(path, 1, "missing vertex count"))?;
    let mut points = Vec::with_capacity(count);
    for (i, line) in lines.take(count) {
        let mut it = line.split_whitespace();
        let x = field(it.next(), "x", path, i + 1)?;
        let y = field(it.next(), "y", path, i + 1)?;
        let z = field(it.next(), "z", path, i + 1)?;
        points.push(Vector3::new(x, y, z));
    }
    if points.len() != count {
        return Err(parse_err(path, 0, "truncated vertex list"));
    }
    Ok(points)
}
