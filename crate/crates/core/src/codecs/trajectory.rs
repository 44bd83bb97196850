//! Keypoint trajectories as CSV (`frame,kp,x,y`) with a `<file>.json` sidecar holding `{fps}`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_json, write_json};
use crate::error::{Error, Result};
use crate::stability::KeypointTrajectory;

pub const HEADER: &str = "frame,kp,x,y";

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    fps: f64,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn to_csv(traj: &KeypointTrajectory) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for t in 0..traj.num_frames() {
        for k in 0..traj.num_keypoints() {
            let p = traj.point(t, k);
            out.push_str(&format!("{t},{k},{},{}\n", p[0], p[1]));
        }
    }
    out
}

pub fn parse_csv(text: &str, fps: f64, path: &Path) -> Result<KeypointTrajectory> {
    let bad = |line: usize, message: String| Error::Malformed {
        format: "trajectory CSV",
        path: path.to_path_buf(),
        location: format!("line {line}"),
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        _ => return Err(bad(1, format!("expected header `{HEADER}`"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(bad(i + 1, format!("expected 4 fields, found {}", fields.len())));
        }
        let t: usize = fields[0].parse().map_err(|_| bad(i + 1, format!("bad frame index {:?}", fields[0])))?;
        let k: usize = fields[1].parse().map_err(|_| bad(i + 1, format!("bad keypoint index {:?}", fields[1])))?;
        let x: f64 = fields[2].parse().map_err(|_| bad(i + 1, format!("bad x {:?}", fields[2])))?;
        let y: f64 = fields[3].parse().map_err(|_| bad(i + 1, format!("bad y {:?}", fields[3])))?;
        rows.push((t, k, [x, y], i + 1));
    }
    let num_frames = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let num_keypoints = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    let mut grid: Vec<Option<[f64; 2]>> = vec![None; num_frames * num_keypoints];
    for (t, k, p, line) in rows {
        let slot = &mut grid[t * num_keypoints + k];
        if slot.is_some() {
            return Err(bad(line, format!("duplicate entry for frame {t}, keypoint {k}")));
        }
        *slot = Some(p);
    }
    let points = grid
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            p.ok_or_else(|| {
                bad(
                    text.lines().count(),
                    format!("missing frame {}, keypoint {}", i / num_keypoints, i % num_keypoints),
                )
            })
        })
        .collect::<Result<Vec<_>>>()?;
    KeypointTrajectory::new(points, num_frames, num_keypoints, fps)
}

pub fn write_trajectory(traj: &KeypointTrajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_csv(traj)).map_err(|e| Error::io(path, e))?;
    write_json(&Sidecar { fps: traj.fps }, sidecar_path(path))
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<KeypointTrajectory> {
    let path = path.as_ref();
    let Sidecar { fps } = read_json(sidecar_path(path))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, fps, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let t = KeypointTrajectory::new(vec![[0.1, 2.5], [1e-300, -3.0], [7.0, 8.0], [0.3, 1e10]], 2, 2, 30.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trajectory(&t, &p).unwrap();
        assert_eq!(read_trajectory(&p).unwrap(), t);

        let e = parse_csv("frame,kp,x,y\n0,0,1,2\n0,0,1,2\n", 25.0, &p).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let e = parse_csv("frame,kp,x,y\n0,0,1\n", 25.0, &p).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(parse_csv("x,y\n", 25.0, &p).is_err());
    }
}
