pub mod eval;
pub mod generate;
pub mod synth;
pub mod train;
