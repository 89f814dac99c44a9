//! Data-parallel helpers with a sequential fallback.
//!
//! Work is split into fixed-size chunks that do not depend on the thread
//! count. Chunk results are always combined left to right on the calling
//! thread, so both execution modes produce bit-identical floating point
//! results. Without the `parallel` feature every mode runs sequentially.

use serde::{Deserialize, Serialize};

/// Items per work unit in [`map_chunks`].
pub const CHUNK_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// The mode that will actually run, given the compiled feature set.
    pub fn effective(self) -> Self {
        if cfg!(feature = "parallel") {
            self
        } else {
            ExecMode::Sequential
        }
    }
}

impl std::str::FromStr for ExecMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(ExecMode::Sequential),
            "parallel" => Ok(ExecMode::Parallel),
            other => Err(format!(
                "expected `sequential` or `parallel`, got `{other}`"
            )),
        }
    }
}

impl std::fmt::Display for ExecMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExecMode::Sequential => "sequential",
            ExecMode::Parallel => "parallel",
        })
    }
}

/// Applies `f` to consecutive chunks of `items` and returns the chunk results
/// in chunk order.
pub fn map_chunks<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    match mode.effective() {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.par_chunks(CHUNK_LEN).map(f).collect()
        }
        _ => items.chunks(CHUNK_LEN).map(f).collect(),
    }
}

/// Order-preserving map over a slice.
pub fn map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode.effective() {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_bitwise() {
        let xs: Vec<f64> = (0..1000)
            .map(|i| (i as f64).sin() * 1e-3 + 1.0 / (i as f64 + 1.0))
            .collect();
        let sum = |mode| {
            map_chunks(mode, &xs, |c| c.iter().sum::<f64>())
                .into_iter()
                .fold(0.0, |a, b| a + b)
        };
        assert_eq!(
            sum(ExecMode::Sequential).to_bits(),
            sum(ExecMode::Parallel).to_bits()
        );
    }

    #[test]
    fn map_preserves_order() {
        let xs: Vec<usize> = (0..257).collect();
        assert_eq!(
            map(ExecMode::Parallel, &xs, |x| x * 2),
            map(ExecMode::Sequential, &xs, |x| x * 2)
        );
    }

    #[test]
    fn parse_round_trip() {
        for m in [ExecMode::Sequential, ExecMode::Parallel] {
            assert_eq!(m.to_string().parse::<ExecMode>().unwrap(), m);
        }
        assert!("threads".parse::<ExecMode>().is_err());
    }
}
