//! Shared fixtures for the benchmarks.

use signalroot::{ChannelData, CoverageConfig, Dataset};

/// One channel: `y = (1, 8, 14)`, `t = 27`, `u = 80`.
pub fn single_channel() -> Dataset {
    Dataset::single(ChannelData::new(1, 8, 14, 27.0, 80.0).expect("valid channel")).expect("valid dataset")
}

/// Ten channels with exposures rising across channels.
pub fn ten_channels() -> Dataset {
    let counts = [
        (1, 7, 5),
        (1, 5, 12),
        (2, 4, 2),
        (2, 7, 9),
        (1, 9, 6),
        (1, 3, 5),
        (2, 10, 10),
        (3, 6, 12),
        (2, 9, 7),
        (1, 13, 13),
    ];
    let channels = counts
        .iter()
        .enumerate()
        .map(|(k, &(y1, y2, y3))| {
            ChannelData::new(y1, y2, y3, 15.0 + 2.0 * k as f64, 50.0 + 5.0 * k as f64).expect("valid channel")
        })
        .collect();
    Dataset::new(channels).expect("valid dataset")
}

pub fn single_channel_design(replications: usize) -> CoverageConfig {
    CoverageConfig {
        replications,
        seed: 1,
        threads: 1,
        ..CoverageConfig::single(1.0, 1.1f64.exp(), 1.0, 33.0, 100.0)
    }
}
