use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsLog;
use crate::rational::Rational;
use crate::schedule::{run_slowstream, RunOptions};
use crate::stream::{build_stream, DriftMode, DriftSchedule, StreamSource, StreamSpec};

use super::{Learner, LearnerSpec};

/// Relative tolerance when reporting a measured ratio as a simple fraction.
pub const REPORT_TOLERANCE: f64 = 0.02;
const MAX_REPORT_DENOM: u64 = 12;

/// Small stream and model used to measure training cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSetup {
    pub stream: StreamSpec,
    pub layer_dims: Vec<usize>,
    pub buffer_capacity: usize,
    pub seed: u64,
}

impl ProbeSetup {
    /// 100 steps of 10 samples.
    pub fn standard(layer_dims: &[usize], buffer_capacity: usize, seed: u64) -> Self {
        let d = layer_dims[0];
        let classes = *layer_dims.last().expect("non-empty dims");
        ProbeSetup {
            stream: StreamSpec {
                source: StreamSource::Synthetic(DriftSchedule {
                    mode: DriftMode::PrototypeWalk,
                    sigma_drift: 0.01,
                    sigma_noise: 1.0,
                    active_classes: 1,
                    phase_length: 1,
                }),
                steps: 100,
                batch_size: 10,
                feature_dim: d,
                classes,
                seed,
            },
            layer_dims: layer_dims.to_vec(),
            buffer_capacity,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityMeasurement {
    pub method_flops: u64,
    pub reference_flops: u64,
    pub ratio: f64,
    /// `ratio` as the smallest-denominator fraction within 2%, if any.
    pub reported: Option<Rational>,
}

fn probe_flops(spec: &LearnerSpec, probe: &ProbeSetup) -> Result<u64> {
    let mut learner = Learner::new(
        spec.clone(),
        &probe.layer_dims,
        probe.buffer_capacity,
        probe.seed,
    )?;
    let stream = build_stream(&probe.stream)?;
    let mut log = MetricsLog::default();
    run_slowstream(stream, &mut learner, &mut log, &RunOptions::default())?;
    Ok(learner.meter().raw_flops())
}

/// Trains `spec` and `reference` on the same probe in slow-stream mode and
/// returns the ratio of their raw FLOPs charges.
pub fn measure_relative_complexity(
    spec: &LearnerSpec,
    reference: &LearnerSpec,
    probe: &ProbeSetup,
) -> Result<ComplexityMeasurement> {
    let reference_flops = probe_flops(reference, probe)?;
    if reference_flops == 0 {
        return Err(Error::InvalidArgument(
            "reference learner charged zero flops".into(),
        ));
    }
    let method_flops = probe_flops(spec, probe)?;
    let ratio = method_flops as f64 / reference_flops as f64;
    Ok(ComplexityMeasurement {
        method_flops,
        reference_flops,
        ratio,
        reported: Rational::approximate(ratio, REPORT_TOLERANCE, MAX_REPORT_DENOM),
    })
}
