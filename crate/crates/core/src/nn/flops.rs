use serde::{Deserialize, Serialize};

/// Analytic training-cost meter.
///
/// One backward sample-unit is charged as two forward sample-units, so
/// `raw_flops = per_sample_forward_cost * (forward + 2 * backward)` where the
/// per-sample forward cost of a dense stack is `2 * sum(d_in * d_out)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsCounter {
    per_sample_forward_cost: u64,
    forward_sample_units: u64,
    backward_sample_units: u64,
}

impl FlopsCounter {
    pub fn new(per_sample_forward_cost: u64) -> Self {
        FlopsCounter {
            per_sample_forward_cost,
            ..Default::default()
        }
    }

    pub fn for_layer_dims(dims: &[usize]) -> Self {
        let cost = dims.windows(2).map(|w| 2 * (w[0] * w[1]) as u64).sum();
        FlopsCounter::new(cost)
    }

    pub fn charge_forward(&mut self, samples: usize) {
        self.forward_sample_units += samples as u64;
    }

    pub fn charge_backward(&mut self, samples: usize) {
        self.backward_sample_units += samples as u64;
    }

    pub fn forward_sample_units(&self) -> u64 {
        self.forward_sample_units
    }

    pub fn backward_sample_units(&self) -> u64 {
        self.backward_sample_units
    }

    pub fn per_sample_forward_cost(&self) -> u64 {
        self.per_sample_forward_cost
    }

    /// Charge expressed in forward sample-units.
    pub fn forward_equivalents(&self) -> u64 {
        self.forward_sample_units + 2 * self.backward_sample_units
    }

    pub fn raw_flops(&self) -> u64 {
        self.per_sample_forward_cost * self.forward_equivalents()
    }
}
