pub mod cnn;
pub mod dsp;
pub mod features;
pub mod ml;
pub mod pipeline;
pub mod rcs;
pub mod seed;
pub mod siggen;
pub mod touchstone;
