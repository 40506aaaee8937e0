pub mod covariance;
pub mod error;
pub mod inference;
pub mod io;
pub mod kernel;
pub mod montecarlo;
pub mod phantom;
pub mod poly;
pub mod quadrature;
pub mod reconstructor;
pub mod rng;
pub mod sampling;
pub mod scanmap;
pub mod special;

pub use error::{Result, SmaError};
pub use kernel::{Kernel, KernelKind};
pub use phantom::{Disk, EdgePoint, Phantom};
pub use sampling::{NoiseFamily, NoiseModel, SamplingGrid, SigmaProfile, Sinogram};
