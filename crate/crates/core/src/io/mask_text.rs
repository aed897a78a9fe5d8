//! Plain-text masks: `# key value` header lines, then one `line value`
//! pair per phase-encode line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sampling::{MaskKind, PhaseAxis, SamplingMask};

pub fn mask_to_text(mask: &SamplingMask) -> String {
    let kind = match mask.kind() {
        MaskKind::Uniform => "uniform",
        MaskKind::Random => "random",
    };
    let axis = match mask.phase_axis() {
        PhaseAxis::Rows => "rows",
        PhaseAxis::Cols => "cols",
    };
    let mut s = String::new();
    let _ = writeln!(s, "# shape {} {}", mask.height(), mask.width());
    let _ = writeln!(s, "# kind {kind}");
    let _ = writeln!(s, "# acceleration {}", mask.acceleration());
    let _ = writeln!(s, "# acs {}", mask.acs_lines());
    let _ = writeln!(s, "# axis {axis}");
    let _ = writeln!(s, "# offset {}", mask.offset());
    match mask.seed() {
        Some(seed) => {
            let _ = writeln!(s, "# seed {seed}");
        }
        None => s.push_str("# seed none\n"),
    }
    for (i, v) in mask.pattern().iter().enumerate() {
        let _ = writeln!(s, "{i} {v}");
    }
    s
}

pub fn mask_from_text(text: &str) -> Result<SamplingMask> {
    let mut shape = None;
    let mut kind = None;
    let mut acceleration = None;
    let mut acs = None;
    let mut axis = PhaseAxis::Cols;
    let mut offset = 0;
    let mut seed = None;
    let mut pattern = Vec::new();
    let mut byte = 0u64;
    for line in text.lines() {
        let at = byte;
        byte += line.len() as u64 + 1;
        let bad = |what: &str| Error::format(at, format!("{what}: {line:?}"));
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut it = rest.split_whitespace();
            let key = it.next().unwrap_or("");
            let vals: Vec<&str> = it.collect();
            let one = || vals.first().copied().ok_or_else(|| bad("missing value"));
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number"));
            match key {
                "shape" if vals.len() == 2 => shape = Some((num(vals[0])?, num(vals[1])?)),
                "kind" => {
                    kind = Some(match one()? {
                        "uniform" => MaskKind::Uniform,
                        "random" => MaskKind::Random,
                        _ => return Err(bad("unknown mask kind")),
                    })
                }
                "acceleration" => acceleration = Some(num(one()?)?),
                "acs" => acs = Some(num(one()?)?),
                "axis" => {
                    axis = match one()? {
                        "rows" => PhaseAxis::Rows,
                        "cols" => PhaseAxis::Cols,
                        _ => return Err(bad("unknown axis")),
                    }
                }
                "offset" => offset = num(one()?)?,
                "seed" => {
                    seed = match one()? {
                        "none" => None,
                        s => Some(s.parse().map_err(|_| bad("bad seed"))?),
                    }
                }
                _ => {}
            }
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(i), Some(v), None) = (it.next(), it.next(), it.next()) else {
            return Err(bad("expected `line value`"));
        };
        let i: usize = i.parse().map_err(|_| bad("bad line index"))?;
        if i != pattern.len() {
            return Err(bad("line indices must be consecutive from 0"));
        }
        pattern.push(match v {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad("value must be 0 or 1")),
        });
    }
    let missing = |k: &str| Error::format(byte, format!("missing `# {k}` header"));
    let (h, w) = shape.ok_or_else(|| missing("shape"))?;
    SamplingMask::from_parts(
        h,
        w,
        kind.ok_or_else(|| missing("kind"))?,
        acceleration.ok_or_else(|| missing("acceleration"))?,
        acs.ok_or_else(|| missing("acs"))?,
        axis,
        offset,
        seed,
        pattern,
    )
}

pub fn write_mask_text(mask: &SamplingMask, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, mask_to_text(mask))?;
    Ok(())
}

pub fn read_mask_text(path: impl AsRef<Path>) -> Result<SamplingMask> {
    mask_from_text(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{make_random_mask, make_uniform_mask};

    #[test]
    fn round_trips() {
        for mask in [
            make_uniform_mask(20, 32, 4, 6, PhaseAxis::Cols, 1).unwrap(),
            make_random_mask(24, 16, 3, 4, 11, PhaseAxis::Rows).unwrap(),
        ] {
            assert_eq!(mask_from_text(&mask_to_text(&mask)).unwrap(), mask);
        }
    }

    #[test]
    fn rejects_gaps_and_bad_values() {
        let mask = make_uniform_mask(8, 8, 2, 2, PhaseAxis::Cols, 0).unwrap();
        let text = mask_to_text(&mask);
        assert!(mask_from_text(&text.replace("\n3 ", "\n4 ")).is_err());
        assert!(mask_from_text(&text.replace("\n0 1", "\n0 2")).is_err());
        assert!(mask_from_text(&text.replace("# kind uniform\n", "")).is_err());
    }
}
