pub mod checkpoint;
pub mod codebook;
pub mod config;
pub mod diffcore;
pub mod eval;
pub mod motion;
pub mod policy;
pub mod toysim;
pub mod trainer;
pub mod worldmodel;
