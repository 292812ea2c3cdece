use thiserror::Error;

use crate::model::ConfigViolation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", join(.0))]
    Config(Vec<ConfigViolation>),

    #[error("channel {channel}: timestamps not strictly ascending at index {index}")]
    Unsorted { channel: u8, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("({order}!)^{stages} overflows u128")]
    Overflow { order: u32, stages: u32 },

    #[error("too many events for brute-force counting: {0} (limit 10000)")]
    SizeGuard(usize),

    #[error("zero event rate on channel {0}")]
    ZeroRate(u8),

    #[error("degenerate profile: {0}")]
    DegenerateProfile(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join(v: &[ConfigViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
