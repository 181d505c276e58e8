pub mod critique;
pub mod dqn;
pub mod harness;
pub mod netmodel;
pub mod nn;
pub mod pressure;
pub mod simcore;
pub mod tune;
