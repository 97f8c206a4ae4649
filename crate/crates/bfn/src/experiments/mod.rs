//! Reference experiments: the detuned oscillator source-estimation sweep and
//! the 1-D wave-equation inverse potential problem.

pub mod oscillator;
pub mod wave;
