pub mod cli;
pub mod econ;
pub mod lp;
pub mod malmquist;
pub mod netdea;
pub mod panel;
pub mod rng;
pub mod synth;
