use std::fmt;

use num_rational::Rational64;
use serde::Serialize;

use super::receptive::{Interval, ReceptiveField};

/// Static metadata describing how a layer maps input time to output time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerProperties {
    /// Output timesteps per input timestep.
    pub output_ratio: Rational64,
    /// Input timesteps accepted by one `step` call must be a multiple of this.
    pub block_size: usize,
    /// Leading step-mode outputs that precede the first layer-mode output.
    pub output_latency: usize,
    pub receptive_field: ReceptiveField,
    pub supports_step: bool,
    /// Step state may change shape between calls.
    pub grows_state: bool,
    /// Step output depends on absolute stream position, so the layer cannot
    /// be fed a delayed stream.
    pub position_sensitive: bool,
}

impl LayerProperties {
    /// Ratio 1, block 1, no latency, each output reads only its own step.
    pub fn pointwise() -> LayerProperties {
        LayerProperties {
            output_ratio: Rational64::from_integer(1),
            block_size: 1,
            output_latency: 0,
            receptive_field: ReceptiveField::pointwise(),
            supports_step: true,
            grows_state: false,
            position_sensitive: false,
        }
    }

    /// Invalid input timesteps needed after end of stream to flush every
    /// valid output.
    pub fn input_latency(&self) -> usize {
        let needed = Rational64::from_integer(self.output_latency as i64) / self.output_ratio;
        needed.ceil().to_integer() as usize
    }

    pub fn overall_receptive_field(&self) -> Option<Interval> {
        self.receptive_field.overall(self.output_ratio)
    }

    /// Exact output length for an input of `time` steps, if integral.
    pub fn output_time(&self, time: usize) -> Option<usize> {
        let t = Rational64::from_integer(time as i64) * self.output_ratio;
        t.is_integer().then(|| t.to_integer() as usize)
    }

    pub fn summary(&self) -> PropertiesSummary {
        PropertiesSummary {
            output_ratio: format_ratio(self.output_ratio),
            block_size: self.block_size,
            input_latency: self.input_latency(),
            output_latency: self.output_latency,
            receptive_field: self
                .overall_receptive_field()
                .map(|iv| iv.to_string())
                .unwrap_or_else(|| "None".into()),
            receptive_field_per_step: self.receptive_field.clone(),
            supports_step: self.supports_step,
        }
    }
}

pub fn format_ratio(r: Rational64) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Serializable view of [`LayerProperties`].
#[derive(Clone, Debug, Serialize)]
pub struct PropertiesSummary {
    pub output_ratio: String,
    pub block_size: usize,
    pub input_latency: usize,
    pub output_latency: usize,
    pub receptive_field: String,
    pub receptive_field_per_step: ReceptiveField,
    pub supports_step: bool,
}

impl fmt::Display for LayerProperties {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.summary();
        writeln!(f, "output_ratio: {}", s.output_ratio)?;
        writeln!(f, "block_size: {}", s.block_size)?;
        writeln!(f, "input_latency: {}", s.input_latency)?;
        writeln!(f, "output_latency: {}", s.output_latency)?;
        writeln!(f, "receptive_field: {}", s.receptive_field)?;
        writeln!(f, "receptive_field_per_step: {}", self.receptive_field)?;
        write!(f, "supports_step: {}", s.supports_step)
    }
}
