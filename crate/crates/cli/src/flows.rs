//! Flow directories: `forward_NNNN.flo` holds `O(t → t+1)` and
//! `backward_NNNN.flo` holds `O(t+1 → t)`, for `t` in `0..T-1`.

use std::fs;
use std::path::{Path, PathBuf};

use bsst_core::{Flow, FlowSequence};

use crate::error::{CliError, Result};
use crate::flo;

pub fn flow_path(dir: &Path, direction: &str, t: usize) -> PathBuf {
    dir.join(format!("{direction}_{t:04}.flo"))
}

fn count(dir: &Path, direction: &str) -> Result<usize> {
    let prefix = format!("{direction}_");
    let mut n = 0;
    for entry in fs::read_dir(dir).map_err(CliError::io(dir))? {
        let name = entry.map_err(CliError::io(dir))?.file_name();
        let name = name.to_string_lossy();
        if name.starts_with(&prefix) && name.ends_with(".flo") {
            n += 1;
        }
    }
    Ok(n)
}

/// Reads a flow directory. With `frames` given, both directions must hold
/// exactly `frames - 1` files.
pub fn read_dir(dir: &Path, frames: Option<usize>) -> Result<FlowSequence> {
    let forward_n = count(dir, "forward")?;
    let expected = match frames {
        Some(t) => t.saturating_sub(1),
        None => forward_n,
    };
    for direction in ["forward", "backward"] {
        let actual = count(dir, direction)?;
        if actual != expected {
            return Err(CliError::Count {
                what: format!("{direction} flow files in {}", dir.display()),
                expected,
                actual,
                missing: (0..expected)
                    .map(|t| flow_path(dir, direction, t))
                    .find(|p| !p.exists()),
            });
        }
    }
    if expected == 0 {
        return Err(CliError::Usage(format!("{}: no flow files", dir.display())));
    }

    let mut first: Option<(PathBuf, [usize; 2])> = None;
    let mut load = |direction: &str, t: usize| -> Result<Flow> {
        let path = flow_path(dir, direction, t);
        let flow = flo::read(&path)?;
        let shape = [flow.height(), flow.width()];
        match &first {
            None => first = Some((path, shape)),
            Some((p, s)) if *s != shape => {
                return Err(CliError::FlowShape {
                    first: p.clone(),
                    first_shape: *s,
                    other: path,
                    other_shape: shape,
                })
            }
            Some(_) => {}
        }
        Ok(flow)
    };
    let forward = (0..expected)
        .map(|t| load("forward", t))
        .collect::<Result<Vec<_>>>()?;
    let backward = (0..expected)
        .map(|t| load("backward", t))
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowSequence::new(forward, backward)?)
}

pub fn write_dir(dir: &Path, flows: &FlowSequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    for (t, f) in flows.forward().iter().enumerate() {
        flo::write(&flow_path(dir, "forward", t), f)?;
    }
    for (t, f) in flows.backward().iter().enumerate() {
        flo::write(&flow_path(dir, "backward", t), f)?;
    }
    Ok(())
}
