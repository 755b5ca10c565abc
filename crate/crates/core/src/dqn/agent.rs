//! Turning simulator observations into network inputs.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{NetInput, NetworkSpec};
use crate::sim::{lidar_to_image, luminance_resample, LidarImageSpec, Observation};
use crate::tensor::Tensor;

/// Network-ready state: the newest `k` BEV frames (oldest first) and, for
/// multi-modal variants, the LiDAR image. Frames are shared between
/// consecutive states.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentObs {
    pub frames: Vec<Arc<Tensor>>,
    pub lidar: Option<Arc<Tensor>>,
}

/// Keeps the frame history of one episode.
#[derive(Clone, Debug)]
pub struct ObsEncoder {
    frames: usize,
    lidar_channels: Option<usize>,
    size: usize,
    lidar_spec: LidarImageSpec,
    history: VecDeque<Arc<Tensor>>,
}

impl ObsEncoder {
    pub fn new(spec: &NetworkSpec, lidar_spec: LidarImageSpec) -> Self {
        ObsEncoder {
            frames: spec.variant.frames(),
            lidar_channels: spec.variant.is_multimodal().then_some(spec.lidar_channels),
            size: spec.input_size,
            lidar_spec,
            history: VecDeque::new(),
        }
    }

    /// First observation of an episode; the history is padded with it.
    pub fn start(&mut self, obs: &Observation) -> Result<AgentObs> {
        self.history.clear();
        let frame = self.bev_frame(obs)?;
        for _ in 0..self.frames {
            self.history.push_back(frame.clone());
        }
        self.current(obs)
    }

    pub fn push(&mut self, obs: &Observation) -> Result<AgentObs> {
        if self.history.is_empty() {
            return self.start(obs);
        }
        let frame = self.bev_frame(obs)?;
        self.history.push_back(frame);
        while self.history.len() > self.frames {
            self.history.pop_front();
        }
        self.current(obs)
    }

    fn bev_frame(&self, obs: &Observation) -> Result<Arc<Tensor>> {
        if obs.bev.shape() != [1, self.size, self.size] {
            return Err(Error::Config(format!(
                "network expects a {0}x{0} BEV, the environment renders {1:?}",
                self.size,
                obs.bev.shape()
            )));
        }
        Ok(Arc::new(obs.bev.clone()))
    }

    fn current(&self, obs: &Observation) -> Result<AgentObs> {
        let lidar = match self.lidar_channels {
            None => None,
            Some(c) => {
                let img = lidar_to_image(&obs.lidar_beams, obs.ego_speed, obs.ego_heading, &self.lidar_spec)?;
                let lum = luminance_resample(&img, self.size)?;
                let data = lum.data().repeat(c);
                Some(Arc::new(Tensor::new([c, self.size, self.size], data)?))
            }
        };
        Ok(AgentObs {
            frames: self.history.iter().cloned().collect(),
            lidar,
        })
    }
}

/// Stacks states into `[B, k, S, S]` BEV and `[B, C, S, S]` LiDAR batches.
pub fn batch_input(items: &[&AgentObs]) -> Result<NetInput> {
    let first = items.first().ok_or_else(|| Error::Usage("empty batch".into()))?;
    let k = first.frames.len();
    let plane = first.frames.first().map(|f| f.shape().to_vec()).unwrap_or_default();
    if k == 0 || plane.len() != 3 {
        return Err(Error::Usage("states need at least one [1, S, S] frame".into()));
    }
    let s = plane[1];
    let mut bev = Vec::with_capacity(items.len() * k * s * s);
    let mut lidar = first.lidar.as_ref().map(|l| Vec::with_capacity(items.len() * l.numel()));
    for it in items {
        if it.frames.len() != k || it.lidar.is_some() != lidar.is_some() {
            return Err(Error::Usage("inconsistent states in one batch".into()));
        }
        for f in &it.frames {
            bev.extend_from_slice(f.data());
        }
        if let (Some(dst), Some(l)) = (lidar.as_mut(), it.lidar.as_ref()) {
            dst.extend_from_slice(l.data());
        }
    }
    let b = items.len();
    let lidar = match (lidar, &first.lidar) {
        (Some(d), Some(l)) => {
            let mut shape = vec![b];
            shape.extend_from_slice(l.shape());
            Some(Tensor::new(shape, d)?)
        }
        _ => None,
    };
    Ok(NetInput {
        bev: Tensor::new([b, k, s, s], bev)?,
        lidar,
    })
}
