//! Structured `key: value` analysis report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{count_ops, EnergyReport, Prop2Report, SpikeStats};
use crate::error::Result;
use crate::model::{NetInput, NetworkSpec, QNetwork, Variant};
use crate::tensor::Tensor;

/// Multiply-accumulates of one single-sample forward through the dense
/// network with the same layer sizes as `spec`.
pub fn network_macs(spec: &NetworkSpec) -> Result<u64> {
    let mut dense = spec.clone();
    dense.variant = match spec.variant {
        Variant::Ssa | Variant::Ttsa => Variant::Dense,
        v => v,
    };
    let net = QNetwork::new(dense.clone(), 0)?;
    let s = dense.input_size;
    let input = NetInput {
        bev: Tensor::zeros([1, dense.variant.frames(), s, s]),
        lidar: dense
            .variant
            .is_multimodal()
            .then(|| Tensor::zeros([1, dense.lidar_channels, s, s])),
    };
    let (q, counts) = count_ops(|| net.q_values(&input, 0));
    q?;
    Ok(counts.multiplies)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub variant: Option<String>,
    pub density: Option<SpikeStats>,
    pub energy: Option<EnergyReport>,
    pub prop2: Option<Prop2Report>,
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(v) = &self.variant {
            let _ = writeln!(s, "variant: {v}");
        }
        if let Some(d) = &self.density {
            let agg = d.aggregate();
            let _ = writeln!(s, "density.mean: {:.6}", agg.density());
            for (name, c) in d.layers() {
                let _ = writeln!(s, "density.{name}: {:.6}", c.density());
            }
        }
        if let Some(e) = &self.energy {
            let _ = writeln!(s, "energy.flops: {}", e.flops);
            let _ = writeln!(s, "energy.t_len: {}", e.t_len);
            let _ = writeln!(s, "energy.density: {:.6}", e.density);
            let _ = writeln!(s, "energy.ann_pj_per_op: {:.4}", e.ann_per_op());
            let _ = writeln!(s, "energy.snn_pj_per_op: {:.4}", e.snn_per_op());
            let _ = writeln!(s, "energy.e_ann_pj: {:.1}", e.e_ann);
            let _ = writeln!(s, "energy.e_snn_pj: {:.1}", e.e_snn);
            let _ = writeln!(s, "energy.ratio: {:.6}", e.ratio());
        }
        if let Some(p) = &self.prop2 {
            let _ = writeln!(s, "prop2.d: {}", p.d);
            let _ = writeln!(s, "prop2.trials: {}", p.trials);
            let _ = writeln!(s, "prop2.dot_positive_rate: {:.1}", p.dot_positive_rate);
            let _ = writeln!(s, "prop2.violation_rate: {:.1}", p.violation_rate);
            let _ = writeln!(s, "prop2.ternary_nonzero_rate: {:.4}", p.ternary_nonzero_rate);
            if let Some(w) = &p.witness {
                let _ = writeln!(s, "prop2.witness.q: {:?}", w.q);
                let _ = writeln!(s, "prop2.witness.k: {:?}", w.k);
                let _ = writeln!(s, "prop2.witness.dot: {:.4}", w.dot);
                let _ = writeln!(s, "prop2.witness.binary_map: {}", w.binary_map);
                let _ = writeln!(s, "prop2.witness.ternary_map: {}", w.ternary_map);
            }
        }
        s
    }
}
