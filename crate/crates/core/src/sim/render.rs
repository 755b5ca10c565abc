//! Sensor models: top-down raster, ray-cast LiDAR and the LiDAR-to-image
//! converter.

use serde::{Deserialize, Serialize};

use super::{road_kind, EnvState, Rect, EGO_LENGTH, EGO_WIDTH};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BEV_SIZE: usize = 64;
const ROAD: f32 = 0.3;
const MARKING: f32 = 0.6;
const VEHICLE: f32 = 1.0;

/// Ego-centred, heading-aligned `[1, 64, 64]` raster of a `2 fov` square.
///
/// Row 0 is the far-forward edge, column 0 the far-left edge. Every quantity
/// is formed relative to the ego before rotation, so a rigid translation of
/// the whole scene cannot change the raster.
pub fn render_bev(state: &EnvState, fov: f64) -> Tensor {
    let n = BEV_SIZE;
    let px = 2.0 * fov / n as f64;
    let ego = state.ego();
    let (sn, cs) = ego.heading.sin_cos();
    let road_x = ego.x - state.origin().0;
    let road_y = ego.y - state.origin().1;
    let reach = fov * std::f64::consts::SQRT_2 + 10.0;
    let rects: Vec<Rect> = std::iter::once(ego)
        .chain(state.traffic())
        .filter_map(|v| {
            let (dx, dy) = (v.x - ego.x, v.y - ego.y);
            (dx.abs() < reach && dy.abs() < reach).then(|| Rect { cx: dx, cy: dy, ..v.rect() })
        })
        .collect();
    // Ego-frame offsets (forward, left) to world offsets.
    let world = |f: f64, l: f64| (f * cs - l * sn, f * sn + l * cs);
    let road = |f: f64, l: f64, band: f64| {
        let (dx, dy) = world(f, l);
        road_kind(state.config(), road_x + dx, road_y + dy, band)
    };
    let mut out = vec![0.0f32; n * n];
    for r in 0..n {
        let f = fov - (r as f64 + 0.5) * px;
        for c in 0..n {
            let l = fov - (c as f64 + 0.5) * px;
            let (dx, dy) = world(f, l);
            let v = if rects.iter().any(|rc| rc.contains(dx, dy)) {
                VEHICLE
            } else {
                let (on, line) = road(f, l, px);
                if !on {
                    0.0
                } else if line || [(px, 0.0), (-px, 0.0), (0.0, px), (0.0, -px)].iter().any(|&(a, b)| !road(f + a, l + b, 0.0).0) {
                    MARKING
                } else {
                    ROAD
                }
            };
            out[r * n + c] = v;
        }
    }
    Tensor::new([1, n, n], out).expect("bev shape")
}

/// `n` beams at equal angles starting dead ahead and turning left. Each row
/// holds the nearest hit distance over `d_max` (1 when nothing is within
/// range) and the relative velocity projected on the beam (0 without a hit).
pub fn cast_lidar(state: &EnvState, n: usize, d_max: f64) -> Tensor {
    let ego = state.ego();
    let (evx, evy) = ego.velocity();
    let reach = d_max + 10.0;
    let near: Vec<_> = state
        .traffic()
        .filter(|v| (v.x - ego.x).abs() < reach && (v.y - ego.y).abs() < reach)
        .map(|v| (Rect { cx: v.x - ego.x, cy: v.y - ego.y, ..v.rect() }, v.velocity()))
        .collect();
    let mut out = Vec::with_capacity(n * 2);
    for i in 0..n {
        let a = ego.heading + i as f64 * std::f64::consts::TAU / n as f64;
        let (dy, dx) = a.sin_cos();
        let mut best: Option<(f64, (f64, f64))> = None;
        for (rect, vel) in &near {
            if let Some(t) = rect.ray_hit(0.0, 0.0, dx, dy) {
                if t <= d_max && best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, *vel));
                }
            }
        }
        match best {
            Some((t, (vx, vy))) => {
                out.push((t / d_max) as f32);
                out.push(((vx - evx) * dx + (vy - evy) * dy) as f32);
            }
            None => out.extend([1.0, 0.0]),
        }
    }
    Tensor::new([n, 2], out).expect("lidar shape")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarImageSpec {
    pub d_max: f64,
    pub voxel_size: f64,
    pub decay: f64,
    /// Normalisation constant, the maximum speed.
    pub v_max: f64,
    pub ego_length: f64,
    pub ego_width: f64,
}

impl Default for LidarImageSpec {
    fn default() -> Self {
        LidarImageSpec {
            d_max: 60.0,
            voxel_size: 1.0,
            decay: 0.98,
            v_max: 30.0,
            ego_length: EGO_LENGTH,
            ego_width: EGO_WIDTH,
        }
    }
}

impl LidarImageSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return Err(Error::Config(format!("voxel_size must be positive, got {}", self.voxel_size)));
        }
        if !(self.d_max.is_finite() && self.d_max > 0.0) {
            return Err(Error::Config(format!("d_max must be positive, got {}", self.d_max)));
        }
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            return Err(Error::Config(format!("v_max must be positive, got {}", self.v_max)));
        }
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::Config(format!("decay must lie in [0, 1], got {}", self.decay)));
        }
        Ok(())
    }

    pub fn side(&self) -> usize {
        (2.0 * self.d_max / self.voxel_size).ceil() as usize
    }
}

/// Raw velocity intensities on the north-up voxel grid, before scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct LidarRaster {
    pub side: usize,
    pub d_max: f64,
    pub voxel_size: f64,
    pub cells: Vec<f64>,
}

impl LidarRaster {
    /// Cell holding the ego-relative world offset `(dx, dy)`; row 0 is north.
    pub fn cell_of(&self, dx: f64, dy: f64) -> Option<(usize, usize)> {
        let col = ((dx + self.d_max) / self.voxel_size).floor();
        let row = ((self.d_max - dy) / self.voxel_size).floor();
        let n = self.side as f64;
        (col >= 0.0 && row >= 0.0 && col < n && row < n).then_some((row as usize, col as usize))
    }

    /// Centre of a cell as an ego-relative offset.
    pub fn center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            -self.d_max + (col as f64 + 0.5) * self.voxel_size,
            self.d_max - (row as f64 + 0.5) * self.voxel_size,
        )
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.side + col]
    }
}

/// Projects beams back onto the voxel grid: each hit beam writes
/// `decay^k (v_i + v_ego)` at `K_i = floor((d_max - r_i d_max) / voxel)`
/// samples from the hit outward, keeping the larger value where samples
/// share a cell; then the ego footprint is stamped with `v_ego`.
pub fn lidar_raster(beams: &Tensor, ego_speed: f64, ego_heading: f64, spec: &LidarImageSpec) -> Result<LidarRaster> {
    spec.validate()?;
    if beams.rank() != 2 || beams.shape()[1] != 2 {
        return Err(Error::dim("lidar_to_image", format!("beams must be [N, 2], got {:?}", beams.shape())));
    }
    let n_beams = beams.shape()[0];
    let side = spec.side();
    let mut raster = LidarRaster {
        side,
        d_max: spec.d_max,
        voxel_size: spec.voxel_size,
        cells: vec![0.0; side * side],
    };
    for (i, row) in beams.data().chunks_exact(2).enumerate() {
        let (r, v) = (row[0] as f64, row[1] as f64);
        if !(0.0..1.0).contains(&r) {
            continue;
        }
        let a = ego_heading + i as f64 * std::f64::consts::TAU / n_beams as f64;
        let (sn, cs) = a.sin_cos();
        let start = r * spec.d_max;
        let k_i = ((spec.d_max - start) / spec.voxel_size).floor() as usize;
        let z0 = v + ego_speed;
        let mut w = 1.0;
        for k in 0..k_i {
            let d = start + k as f64 * spec.voxel_size;
            if let Some((rr, cc)) = raster.cell_of(d * cs, d * sn) {
                let cell = &mut raster.cells[rr * side + cc];
                *cell = cell.max(w * z0);
            }
            w *= spec.decay;
        }
    }
    let ego = Rect {
        cx: 0.0,
        cy: 0.0,
        heading: ego_heading,
        length: spec.ego_length,
        width: spec.ego_width,
    };
    let reach = spec.ego_length.hypot(spec.ego_width) / 2.0 + spec.voxel_size;
    let lo = raster.cell_of(-reach, reach).unwrap_or((0, 0));
    let hi = raster.cell_of(reach, -reach).unwrap_or((side - 1, side - 1));
    for rr in lo.0..=hi.0 {
        for cc in lo.1..=hi.1 {
            let (x, y) = raster.center(rr, cc);
            if ego.contains(x, y) {
                raster.cells[rr * side + cc] = ego_speed;
            }
        }
    }
    Ok(raster)
}

/// `[3, side, side]` grayscale image: intensities over `v_max`, clamped to
/// `[0, 1]`, replicated across channels.
pub fn lidar_to_image(beams: &Tensor, ego_speed: f64, ego_heading: f64, spec: &LidarImageSpec) -> Result<Tensor> {
    let raster = lidar_raster(beams, ego_speed, ego_heading, spec)?;
    let plane: Vec<f32> = raster.cells.iter().map(|&z| (z / spec.v_max).clamp(0.0, 1.0) as f32).collect();
    let mut data = Vec::with_capacity(plane.len() * 3);
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Tensor::new([3, raster.side, raster.side], data)
}

/// Channel-mean luminance of a `[C, H, H]` image, area-resampled to
/// `[1, out, out]`.
pub fn luminance_resample(img: &Tensor, out: usize) -> Result<Tensor> {
    let s = img.shape();
    if s.len() != 3 || s[1] != s[2] || s[0] == 0 || out == 0 {
        return Err(Error::dim("luminance_resample", format!("expected [C, H, H], got {s:?}")));
    }
    let (c, n) = (s[0], s[1]);
    let mut lum = vec![0.0f64; n * n];
    for ch in img.data().chunks_exact(n * n) {
        for (l, &v) in lum.iter_mut().zip(ch) {
            *l += v as f64;
        }
    }
    lum.iter_mut().for_each(|l| *l /= c as f64);
    let weights = area_weights(n, out);
    // Rows, then columns.
    let mut tmp = vec![0.0f64; out * n];
    for (o, ws) in weights.iter().enumerate() {
        for &(i, w) in ws {
            for x in 0..n {
                tmp[o * n + x] += w * lum[i * n + x];
            }
        }
    }
    let mut res = vec![0.0f32; out * out];
    for y in 0..out {
        for (o, ws) in weights.iter().enumerate() {
            res[y * out + o] = ws.iter().map(|&(i, w)| w * tmp[y * n + i]).sum::<f64>() as f32;
        }
    }
    Tensor::new([1, out, out], res)
}

/// For each output bin, the input indices it overlaps and their normalised
/// overlap weights.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (a, b) = (o as f64 * scale, (o + 1) as f64 * scale);
            let mut ws = Vec::new();
            let mut i = a.floor() as usize;
            while (i as f64) < b && i < n_in {
                let w = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
                if w > 0.0 {
                    ws.push((i, w / scale));
                }
                i += 1;
            }
            ws
        })
        .collect()
}
