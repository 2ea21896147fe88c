pub mod capacity_opt;
pub mod channel_oracle;
pub mod cli;
pub mod fmt;
pub mod gap_checker;
pub mod queue_sim;
pub mod distributions;
pub mod error;
