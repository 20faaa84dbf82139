pub mod evalmetrics;
pub mod expcli;
pub mod landmark;
pub mod navagent;
pub mod numcore;
pub mod syfis;
pub mod translator;
pub mod worldsim;
