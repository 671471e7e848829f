//! Stride length estimation from foot-mounted IMU data.
//!
//! Raw 6-axis recordings are segmented into strides ([`segment`]), turned
//! into `1 × 6 × 600` tensors ([`data`]) and fed to a convolutional
//! encoder-decoder ([`model`]) built on a small autodiff engine
//! ([`tensor`]). The encoder is pretrained to reconstruct corrupted windows
//! ([`augment`]), then reused for stride length regression and run/walk
//! classification ([`train`]). [`checkpoint`] saves and loads weights and
//! [`rng`] derives every random stream from one seed.

pub mod augment;
pub mod checkpoint;
pub mod data;
pub mod model;
pub mod rng;
pub mod segment;
pub mod tensor;
pub mod train;
