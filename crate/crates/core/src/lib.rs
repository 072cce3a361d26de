pub mod cluster;
pub mod fixtures;
pub mod hmm;
pub mod mapgen;
pub mod qsim;
pub mod stats;
pub mod synth;
pub mod trace;
