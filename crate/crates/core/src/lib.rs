//! Bird-call classification from soundscape audio: WAV I/O, log-mel features,
//! augmentation, a synthetic soundscape generator, a compact convolutional
//! classifier with hand-written backpropagation, training, evaluation
//! statistics and streaming inference.

pub mod audio;
pub mod augment;
pub mod cli;
pub mod dataset;
pub mod eval;
pub mod features;
pub mod nn;
pub mod seed;
pub mod stream;
pub mod synth;
pub mod training;
