//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export is a thin wrapper over a plain function that native tests can
//! call directly.

use spiketrans_core::analysis::{prop2_demo, AnalysisReport};
use spiketrans_core::sim::{lidar_to_image, LidarImageSpec};
use spiketrans_core::spike::{bsn_step, tsn_step, LifParams, NeuronState, ResetMode};
use spiketrans_core::tensor::SpikeKind;
use spiketrans_core::{Result, Tensor};
use wasm_bindgen::prelude::*;

/// Side of the LiDAR image in pixels.
pub fn image_side() -> usize {
    LidarImageSpec::default().side()
}

/// Grey levels (row-major, `side * side` bytes) of the LiDAR image for beams
/// spread evenly around the ego vehicle.
pub fn lidar_pixels(distances: &[f32], velocities: &[f32], ego_speed: f64, heading: f64) -> Result<Vec<u8>> {
    if distances.len() != velocities.len() || distances.is_empty() {
        return Err(spiketrans_core::Error::Usage(format!(
            "need one velocity per beam, got {} distances and {} velocities",
            distances.len(),
            velocities.len()
        )));
    }
    let data = distances.iter().zip(velocities).flat_map(|(&d, &v)| [d, v]).collect();
    let beams = Tensor::new([distances.len(), 2], data)?;
    let img = lidar_to_image(&beams, ego_speed, heading, &LidarImageSpec::default())?;
    let plane = img.shape()[1] * img.shape()[2];
    Ok(img.data()[..plane].iter().map(|v| (v * 255.0).round() as u8).collect())
}

/// Spikes followed by post-step membranes of one neuron driven by `inputs`.
pub fn trace(ternary: bool, hard_reset: bool, inputs: &[f32]) -> Result<Vec<f32>> {
    let mut p = if ternary { LifParams::ternary() } else { LifParams::binary() };
    if hard_reset {
        p = p.with_reset(ResetMode::Hard);
    }
    let mut st = NeuronState::new([1], p)?;
    let mut spikes = Vec::with_capacity(inputs.len());
    let mut membranes = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let x = Tensor::new([1], vec![x])?;
        let s = match p.kind {
            SpikeKind::Binary => bsn_step(&x, &mut st)?,
            SpikeKind::Ternary => tsn_step(&x, &mut st)?,
        };
        spikes.push(s.data()[0]);
        membranes.push(st.v().data()[0]);
    }
    spikes.extend(membranes);
    Ok(spikes)
}

/// `key: value` report of random all-negative query/key pairs.
pub fn prop2_text(dim: usize, trials: usize, seed: u64) -> Result<String> {
    let report = AnalysisReport {
        prop2: Some(prop2_demo(dim, trials, seed)?),
        ..AnalysisReport::default()
    };
    Ok(report.to_text())
}

fn js(e: spiketrans_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = imageSide)]
pub fn image_side_js() -> usize {
    image_side()
}

#[wasm_bindgen(js_name = lidarImage)]
pub fn lidar_image_js(distances: &[f32], velocities: &[f32], ego_speed: f64, heading: f64) -> std::result::Result<Vec<u8>, JsError> {
    lidar_pixels(distances, velocities, ego_speed, heading).map_err(js)
}

#[wasm_bindgen(js_name = neuronTrace)]
pub fn neuron_trace_js(ternary: bool, hard_reset: bool, inputs: &[f32]) -> std::result::Result<Vec<f32>, JsError> {
    trace(ternary, hard_reset, inputs).map_err(js)
}

#[wasm_bindgen(js_name = prop2Report)]
pub fn prop2_report_js(dim: usize, trials: usize, seed: u32) -> std::result::Result<String, JsError> {
    prop2_text(dim, trials, seed as u64).map_err(js)
}
