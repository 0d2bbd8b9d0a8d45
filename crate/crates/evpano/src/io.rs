//! File formats: trajectories, calibration, panorama rasters, key-value
//! configs, run manifests. All writers go through [`atomic_write`] so a
//! crashed run never leaves torn files.

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::so3::Rotation;
use crate::trajectory::RotationTrajectory;
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Maximum unit-norm deviation accepted for quaternions in trajectory files.
pub const QUAT_NORM_TOL: f64 = 1e-6;

/// Writes `path` atomically: the callback writes a temp file in the same
/// directory, which is then renamed over the target.
pub fn atomic_write<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut File) -> std::io::Result<()>,
{
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::data(dir, e.to_string()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| Error::data(path, format!("temp file: {e}")))?;
    write(tmp.as_file_mut()).map_err(|e| Error::data(path, e.to_string()))?;
    tmp.as_file_mut().sync_all().map_err(|e| Error::data(path, e.to_string()))?;
    tmp.persist(path).map_err(|e| Error::data(path, e.to_string()))?;
    Ok(())
}

/// SHA-256 of a file, lowercase hex.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::data(path, e.to_string()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::data(path, e.to_string()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

// ---------------------------------------------------------------- key-value

/// Parses a flat `key = value` text file (`#` comments, blank lines
/// allowed). Returns pairs in file order; duplicate keys are rejected.
pub fn parse_kv_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::data(path, e.to_string()))?;
    let mut out: Vec<(String, String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| {
            Error::data(path, format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let k = k.trim().to_string();
        let v = v.trim().to_string();
        if k.is_empty() {
            return Err(Error::data(path, format!("line {}: empty key", lineno + 1)));
        }
        if out.iter().any(|(existing, _)| *existing == k) {
            return Err(Error::data(path, format!("line {}: duplicate key {k}", lineno + 1)));
        }
        out.push((k, v));
    }
    Ok(out)
}

// ------------------------------------------------------------- calibration

/// Loads a calibration file: flat key-value with `width`, `height`, `fx`,
/// `fy`, `cx`, `cy`.
pub fn load_calibration(path: &Path) -> Result<CameraModel> {
    let kv = parse_kv_file(path)?;
    let get = |key: &str| -> Result<f64> {
        kv.iter()
            .find(|(k, _)| k == key)
            .ok_or_else(|| Error::data(path, format!("missing key {key}")))?
            .1
            .parse()
            .map_err(|_| Error::data(path, format!("cannot parse {key}")))
    };
    let width = get("width")? as u32;
    let height = get("height")? as u32;
    CameraModel::new(width, height, get("fx")?, get("fy")?, get("cx")?, get("cy")?)
}

pub fn save_calibration(cam: &CameraModel, path: &Path) -> Result<()> {
    atomic_write(path, |f| {
        let mut w = BufWriter::new(f);
        writeln!(w, "width = {}", cam.width)?;
        writeln!(w, "height = {}", cam.height)?;
        writeln!(w, "fx = {:.17}", cam.fx)?;
        writeln!(w, "fy = {:.17}", cam.fy)?;
        writeln!(w, "cx = {:.17}", cam.cx)?;
        writeln!(w, "cy = {:.17}", cam.cy)?;
        w.flush()
    })
}

// -------------------------------------------------------------- trajectory

/// Loads a trajectory text file: `t qx qy qz qw` per line (Hamilton
/// convention), `#` comments. Quaternions deviating from unit norm by more
/// than [`QUAT_NORM_TOL`] are rejected; control timestamps must be uniform.
pub fn load_trajectory(path: &Path) -> Result<RotationTrajectory> {
    let file = File::open(path).map_err(|e| Error::data(path, e.to_string()))?;
    let mut times = Vec::new();
    let mut poses = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::data(path, e.to_string()))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<f64> = body
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    Error::data(path, format!("line {}: cannot parse {s:?}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if fields.len() != 5 {
            return Err(Error::data(
                path,
                format!("line {}: expected `t qx qy qz qw`, got {} fields", lineno + 1, fields.len()),
            ));
        }
        let q = [fields[1], fields[2], fields[3], fields[4]];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > QUAT_NORM_TOL {
            return Err(Error::data(
                path,
                format!("line {}: quaternion norm {norm} deviates beyond {QUAT_NORM_TOL}", lineno + 1),
            ));
        }
        times.push(fields[0]);
        poses.push(Rotation::from_quaternion(q));
    }
    RotationTrajectory::from_timestamped(&times, poses)
        .map_err(|e| Error::data(path, e.to_string()))
}

pub fn save_trajectory(traj: &RotationTrajectory, path: &Path) -> Result<()> {
    atomic_write(path, |f| {
        let mut w = BufWriter::new(f);
        writeln!(w, "# t qx qy qz qw")?;
        for (i, pose) in traj.poses().iter().enumerate() {
            let q = pose.to_quaternion();
            writeln!(
                w,
                "{:.12} {:.17} {:.17} {:.17} {:.17}",
                traj.time_at(i),
                q[0],
                q[1],
                q[2],
                q[3]
            )?;
        }
        w.flush()
    })
}

// ------------------------------------------------------------- map rasters

/// Saves a panorama raster: 16-byte header (`width`, `height` as 64-bit
/// little-endian unsigned), then float32 little-endian row-major samples.
pub fn save_map_raw(width: usize, height: usize, values: &[f64], path: &Path) -> Result<()> {
    assert_eq!(values.len(), width * height);
    atomic_write(path, |f| {
        let mut w = BufWriter::new(f);
        w.write_all(&(width as u64).to_le_bytes())?;
        w.write_all(&(height as u64).to_le_bytes())?;
        for v in values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        w.flush()
    })
}

/// Loads a raster saved by [`save_map_raw`]; values come back as f64.
pub fn load_map_raw(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::data(path, e.to_string()))?;
    if bytes.len() < 16 {
        return Err(Error::data(path, "missing 16-byte raster header"));
    }
    let width = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let height = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expected = 16 + 4 * width * height;
    if bytes.len() != expected {
        return Err(Error::data(
            path,
            format!("raster payload is {} bytes, expected {} for {width}x{height}", bytes.len(), expected),
        ));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((width, height, values))
}

/// Writes a 16-bit PGM preview with an affine tonemap (min -> 0,
/// max -> 65535 over the pixels marked valid; all pixels when `valid` is
/// `None`). Invalid pixels render as 0. The tonemap parameters go to a
/// `<stem>.tonemap.txt` sidecar next to the image.
pub fn save_map_pgm16(
    width: usize,
    height: usize,
    values: &[f64],
    valid: Option<&[bool]>,
    path: &Path,
) -> Result<()> {
    assert_eq!(values.len(), width * height);
    let included = |i: usize| valid.map_or(true, |m| m[i]);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if included(i) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 0.0);
    }
    let scale = if hi > lo { 65535.0 / (hi - lo) } else { 0.0 };
    atomic_write(path, |f| {
        let mut w = BufWriter::new(f);
        write!(w, "P5\n{width} {height}\n65535\n")?;
        for (i, &v) in values.iter().enumerate() {
            let level = if included(i) {
                ((v - lo) * scale).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            };
            // PGM stores 16-bit samples most significant byte first.
            w.write_all(&level.to_be_bytes())?;
        }
        w.flush()
    })?;
    let sidecar = path.with_extension("tonemap.txt");
    atomic_write(&sidecar, |f| {
        let mut w = BufWriter::new(f);
        writeln!(w, "min = {lo:.17}")?;
        writeln!(w, "max = {hi:.17}")?;
        w.flush()
    })
}

/// Writes a binary mask as 8-bit PGM with values {0, 255}.
pub fn save_mask_pgm(width: usize, height: usize, mask: &[bool], path: &Path) -> Result<()> {
    assert_eq!(mask.len(), width * height);
    atomic_write(path, |f| {
        let mut w = BufWriter::new(f);
        write!(w, "P5\n{width} {height}\n255\n")?;
        for &m in mask {
            w.write_all(&[if m { 255 } else { 0 }])?;
        }
        w.flush()
    })
}

/// Loads a mask written by [`save_mask_pgm`].
pub fn load_mask_pgm(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::data(path, e.to_string()))?;
    let mut fields = Vec::new(); // magic, width, height, maxval
    let mut pos = 0;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    if fields.len() != 4 || fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::data(path, "expected binary 8-bit PGM (P5, maxval 255)"));
    }
    pos += 1; // single whitespace after maxval
    let width: usize =
        fields[1].parse().map_err(|_| Error::data(path, "bad width"))?;
    let height: usize =
        fields[2].parse().map_err(|_| Error::data(path, "bad height"))?;
    let data = &bytes[pos..];
    if data.len() != width * height {
        return Err(Error::data(path, format!("mask payload {} != {}", data.len(), width * height)));
    }
    let mask = data
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            255 => Ok(true),
            other => Err(Error::data(path, format!("mask value {other} not in {{0, 255}}"))),
        })
        .collect::<Result<_>>()?;
    Ok((width, height, mask))
}

// ---------------------------------------------------------------- manifest

/// Writes a run manifest: software version, all configuration values in
/// order, then one SHA-256 digest per produced file. Flat key-value text so
/// manifests diff cleanly.
pub fn write_manifest(
    path: &Path,
    command: &str,
    config: &[(String, String)],
    files: &[PathBuf],
) -> Result<()> {
    let mut digests = Vec::new();
    for file in files {
        let name = file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| file.display().to_string());
        digests.push((name, file_digest(file)?));
    }
    atomic_write(path, |f| {
        let mut w = BufWriter::new(f);
        writeln!(w, "command = {command}")?;
        writeln!(w, "version = {}", env!("CARGO_PKG_VERSION"))?;
        for (k, v) in config {
            writeln!(w, "{k} = {v}")?;
        }
        for (name, digest) in &digests {
            writeln!(w, "sha256.{name} = {digest}")?;
        }
        w.flush()
    })
}

/// Writes an iteration log CSV with the solver's per-iteration records.
pub fn save_iteration_log(records: &[crate::solver::IterationRecord], path: &Path) -> Result<()> {
    atomic_write(path, |f| {
        let mut w = BufWriter::new(f);
        writeln!(w, "iter, lambda, phe, robust_loss, step_norm_pose, step_norm_map, accepted, skipped_pairs")?;
        for r in records {
            writeln!(
                w,
                "{}, {:e}, {:.17e}, {:.17e}, {:.17e}, {:.17e}, {}, {}",
                r.iter,
                r.lambda,
                r.phe,
                r.robust_loss,
                r.step_norm_pose,
                r.step_norm_map,
                if r.accepted { 1 } else { 0 },
                r.skipped_pairs
            )?;
        }
        w.flush()
    })
}
