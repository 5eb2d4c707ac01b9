//! Latent-conditioned tri-plane radiance fields for lifting posed 2D views of
//! objects into 3D, compositing rendered objects into driving scenes, and
//! measuring multi-view consistency.
//!
//! The crate is `no_std` + `alloc`. The default `std` feature only enables
//! `std::error::Error` integration, and `parallel` evaluates independent
//! pixels, rays and objects on the rayon pool. Results are bit-identical with
//! and without `parallel`: every reduction runs in a fixed order.
//!
//! Conventions used throughout:
//! - world frame is y-up; the ground is a plane `y = const`,
//! - a camera looks down its local +z axis with x to the right and y up, so
//!   pixel rows grow opposite to camera y,
//! - a [`geometry::RigidPose`] maps local coordinates into its parent frame,
//! - depth is distance along the unit ray direction.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod compose;
pub mod error;
pub mod eval;
pub mod generator;
pub mod geometry;
pub mod image;
pub mod loss;
pub mod math;
pub mod optim;
pub mod oracle;
mod par;
pub mod render;
pub mod rng;

pub use error::{Error, Result};
