//! Joint semantic segmentation and exemplar replacement for 3D scans.

pub mod error;
pub mod eval;
pub mod exemplar;
pub mod experiment;
pub mod forest;
pub mod geometry;
pub mod init;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use exemplar::{ExemplarModel, ExemplarSet};
pub use forest::{Forest, ForestConfig, PointScores};
pub use geometry::{PointCloud, RigidTransform, Vec3};
pub use optim::{EnergyCoefficients, RegistrationMode};
pub use pipeline::{run_pipeline, PipelineConfig, Placement, RunOutput};
