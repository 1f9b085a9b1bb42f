//! Graph neural network cooperative localization under mixed LOS/NLOS
//! ranging noise.

pub mod analysis;
pub mod eval;
pub mod graphcore;
pub mod models;
pub mod num;
pub mod scenario;
pub mod train;
