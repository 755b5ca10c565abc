use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub events: u64,
    pub element_steps: u64,
}

impl LayerCount {
    pub fn density(&self) -> f64 {
        if self.element_steps == 0 {
            0.0
        } else {
            self.events as f64 / self.element_steps as f64
        }
    }
}

/// Per-layer spike events over element-steps (elements x T).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpikeStats {
    layers: BTreeMap<String, LayerCount>,
}

impl SpikeStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one layer observation: `spikes` is the full `[T, ..]` output.
    pub fn record(&mut self, layer: &str, spikes: &[f32]) {
        let events = crate::spike::count_events(spikes);
        self.add(layer, events, spikes.len() as u64);
    }

    pub fn add(&mut self, layer: &str, events: u64, element_steps: u64) {
        let c = self.layers.entry(layer.to_string()).or_default();
        c.events += events;
        c.element_steps += element_steps;
    }

    pub fn merge(&mut self, other: &SpikeStats) {
        for (k, v) in &other.layers {
            self.add(k, v.events, v.element_steps);
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &LayerCount)> {
        self.layers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, layer: &str) -> Option<&LayerCount> {
        self.layers.get(layer)
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Events over element-steps pooled across every layer.
    pub fn aggregate(&self) -> LayerCount {
        self.layers.values().fold(LayerCount::default(), |a, c| LayerCount {
            events: a.events + c.events,
            element_steps: a.element_steps + c.element_steps,
        })
    }

    /// CSV with header `layer,events,element_steps,density`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Usage("no spike layers were recorded".into()));
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["layer", "events", "element_steps", "density"])?;
        for (name, c) in &self.layers {
            out.write_record([
                name.clone(),
                c.events.to_string(),
                c.element_steps.to_string(),
                format!("{:.6}", c.density()),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
