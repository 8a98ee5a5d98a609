//! Compressed-domain action recognition: block motion vectors from an
//! emulated codec feed a temporal CNN, which is trained with help from an
//! optical-flow teacher network.

pub mod nn;
pub mod motion;
pub mod videoio;
pub mod distill;
pub mod pipeline;
pub mod bench;
pub mod cli;
