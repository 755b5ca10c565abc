//! Debug raster dumps and trajectory logs.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary PGM (P5) of a `[H, W]` or `[1, H, W]` plane with values in `[0, 1]`.
pub fn pgm_bytes(plane: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match plane.shape() {
        [h, w] | [1, h, w] => (*h, *w),
        s => return Err(Error::dim("pgm", format!("expected [H, W] or [1, H, W], got {s:?}"))),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(plane.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write_pgm(path: &Path, plane: &Tensor) -> Result<()> {
    std::fs::write(path, pgm_bytes(plane)?)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub step: u64,
    pub action: usize,
    pub reward: f64,
    pub crashed: bool,
    pub ego_speed: f64,
    pub ego_x: f64,
    pub ego_y: f64,
}

/// CSV writer with header `step,action,reward,crashed,ego_speed,ego_x,ego_y`.
pub struct TrajectoryLog {
    out: csv::Writer<BufWriter<File>>,
}

impl TrajectoryLog {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(File::create(path)?));
        out.write_record(["step", "action", "reward", "crashed", "ego_speed", "ego_x", "ego_y"])?;
        Ok(TrajectoryLog { out })
    }

    pub fn push(&mut self, row: &TrajectoryRow) -> Result<()> {
        self.out.serialize(row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
