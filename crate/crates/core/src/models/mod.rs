//! Concrete system models.

pub mod blocks;
pub mod lidar_inertial;
pub mod linear;
