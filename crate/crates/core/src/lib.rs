//! Formal verification of neural-network controllers over latent-space
//! polytopes.
//!
//! The pipeline has three stages. [`geometry`] turns action-labelled latent
//! samples into convex polytopes. [`nnmodel`] loads the decoder and controller
//! and composes them into one ReLU network from latent space to actions.
//! [`verifier`] bounds that network's output over a polytope and decides
//! specifications written in [`speclang`].

pub mod geometry;
pub mod lpsolve;
pub mod nnmodel;
pub mod speclang;
pub mod verifier;

pub use geometry::{Halfspace, LatentSample, Polytope, SampleTag, UNBOUNDED};
pub use nnmodel::{compose, Activation, AffineLayer, Network};
