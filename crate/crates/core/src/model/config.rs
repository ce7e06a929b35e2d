use serde::{Deserialize, Serialize};

use crate::{Error, Result, CHANNELS, SAMPLES_PER_DAY};

/// Autoencoder hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub seq_len: usize,
    pub channels: usize,
    pub kernels: [usize; 3],
    pub filters: [usize; 3],
    pub fc_hidden: usize,
    pub bottleneck: usize,
    pub dropout_rate: f64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ArchitectureConfig {
    /// Full-size network: kernels 8/6/4, filters 64/128/256 on 288-step days.
    pub fn paper() -> Self {
        ArchitectureConfig {
            seq_len: SAMPLES_PER_DAY,
            channels: CHANNELS,
            kernels: [8, 6, 4],
            filters: [64, 128, 256],
            fc_hidden: 32,
            bottleneck: 16,
            dropout_rate: 0.1,
        }
    }

    /// Desk-scale network on 15-minute days.
    pub fn small() -> Self {
        ArchitectureConfig {
            seq_len: 96,
            filters: [8, 16, 32],
            fc_hidden: 16,
            bottleneck: 8,
            ..Self::paper()
        }
    }

    /// Gradient-check network.
    pub fn tiny() -> Self {
        ArchitectureConfig {
            seq_len: 16,
            channels: CHANNELS,
            kernels: [3, 3, 3],
            filters: [2, 3, 4],
            fc_hidden: 4,
            bottleneck: 2,
            dropout_rate: 0.0,
        }
    }

    /// Output lengths of the three encoder convolutions, if all positive.
    pub fn conv_lengths(&self) -> Option<[usize; 3]> {
        let mut len = self.seq_len;
        let mut out = [0; 3];
        for (slot, &k) in out.iter_mut().zip(&self.kernels) {
            if k == 0 || len < k {
                return None;
            }
            len = len - k + 1;
            *slot = len;
        }
        Some(out)
    }

    pub fn flatten_width(&self) -> Option<usize> {
        self.conv_lengths().map(|l| l[2] * self.filters[2])
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.seq_len, self.channels, self.fc_hidden, self.bottleneck]
            .iter()
            .chain(&self.kernels)
            .chain(&self.filters)
            .all(|&v| v > 0);
        if !positive {
            return Err(Error::Config(format!("all extents must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        let flatten = self.flatten_width().ok_or_else(|| {
            Error::Config(format!(
                "sequence length {} too short for kernels {:?}",
                self.seq_len, self.kernels
            ))
        })?;
        if self.bottleneck >= flatten {
            return Err(Error::Config(format!(
                "bottleneck {} must be narrower than flatten width {flatten}",
                self.bottleneck
            )));
        }
        Ok(())
    }
}
