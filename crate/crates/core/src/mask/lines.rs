//! Text format, one instance per line:
//! `frame_index track_id class_id height width counts` where `counts` is
//! comma-separated and `track_id` is -1 for detections without identity.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{BinaryMask, InstanceObservation};
use crate::error::{Error, Result};

pub fn format_line(obs: &InstanceObservation) -> String {
    let mut s = String::new();
    let track = obs.track_id.map(|t| t as i64).unwrap_or(-1);
    write!(
        s,
        "{} {} {} {} {} ",
        obs.frame_index,
        track,
        obs.class_id,
        obs.mask.height(),
        obs.mask.width()
    )
    .unwrap();
    for (i, c) in obs.mask.counts().iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{c}").unwrap();
    }
    s
}

/// Parses one line. The error string is wrapped with location by the caller.
pub fn parse_line(line: &str) -> std::result::Result<InstanceObservation, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 fields, found {}", fields.len()));
    }
    let num = |i: usize, name: &str| -> std::result::Result<i64, String> {
        fields[i]
            .parse::<i64>()
            .map_err(|e| format!("bad {name} '{}': {e}", fields[i]))
    };
    let frame = num(0, "frame_index")?;
    let track = num(1, "track_id")?;
    let class = num(2, "class_id")?;
    let h = num(3, "height")?;
    let w = num(4, "width")?;
    if frame < 0 || class < 0 || h <= 0 || w <= 0 || track < -1 {
        return Err("negative or zero field".into());
    }
    let counts = fields[5]
        .split(',')
        .map(|c| c.parse::<u32>().map_err(|e| format!("bad count '{c}': {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mask = BinaryMask::from_counts(h as u32, w as u32, counts).map_err(|e| e.to_string())?;
    if mask.is_empty() {
        return Err("empty mask".into());
    }
    Ok(InstanceObservation {
        frame_index: frame as u32,
        class_id: class as u32,
        mask,
        track_id: (track >= 0).then_some(track as u64),
    })
}

pub fn read_mask_file(path: &Path) -> Result<Vec<InstanceObservation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_line(l).map_err(|reason| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            })
        })
        .collect()
}

pub fn write_mask_file(path: &Path, instances: &[InstanceObservation]) -> Result<()> {
    let mut out = String::new();
    for obs in instances {
        out.push_str(&format_line(obs));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
