//! Neural layers: 1-D convolution, batch normalization, dense, global
//! average pooling, and the adaptive soft-threshold subnetwork.

mod batchnorm;
mod conv;
mod dense;
mod threshold;

pub use batchnorm::BatchNorm1d;
pub use conv::Conv1d;
pub use dense::Dense;
pub use threshold::{ThresholdMode, ThresholdResult, ThresholdSubnet};

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};

/// Which axes global average pooling collapses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapOver {
    /// `[N, C, W] -> [N, C]`
    Width,
    /// `[N, C, W] -> [N]`
    WidthAndChannels,
}

/// Global average pooling over a `[N, C, W]` feature map.
pub fn gap(tape: &mut Tape, x: NodeId, over: GapOver) -> Result<NodeId> {
    if tape.value(x).rank() != 3 {
        return Err(Error::dimension(
            "gap expects [batch, channels, width]",
            tape.value(x).shape(),
            &[],
        ));
    }
    match over {
        GapOver::Width => tape.reduce_mean(x, &[2]),
        GapOver::WidthAndChannels => tape.reduce_mean(x, &[1, 2]),
    }
}
