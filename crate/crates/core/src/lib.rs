//! Unsupervised single-image intrinsic decomposition.
//!
//! A natural image `I` is modelled as the pixel-wise product of a
//! reflectance `R` and an achromatic shading `S`. Three unpaired image
//! collections (natural images, reflectances, shadings) are enough to learn
//! encoders and generators that split `I` into `(R, S)`:
//!
//! * [`imaging`] holds the image type, the synthetic Lambertian scene
//!   generator, PNG IO and the unpaired batch sampler.
//! * [`networks`] defines the content and prior encoders, the prior mapping
//!   MLP, AdaIN generators and multi-scale discriminators.
//! * [`losses`] implements every training objective term.
//! * [`trainer`] runs alternating LSGAN optimisation with checkpointing.
//! * [`metrics`] scores decompositions (scale-invariant MSE, LMSE, DSSIM,
//!   WHDR) against ground truth.

pub mod error;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod trainer;

pub use error::{Error, Result};
