//! The six-term energy and its alternating minimization.

pub mod energy;
pub mod icp;
pub mod reference;
pub mod segmentation;
pub mod voting;

pub use energy::{
    default_schedule, exemplar_distances, irls_weights, segmentation_energy, smoothed_penalty, total_energy, EnergyCoefficients,
    EnergyTerms, LAMBDA6_SCHEDULE,
};
pub use icp::{align, fit_rigid, weighted_icp, weighted_icp_with_tree, IcpOptions, IcpResult, RegistrationMode};
pub use reference::{segmentation_step_reference, ReferenceSolution};
pub use segmentation::{segmentation_step, solve_surrogate, IrlsRound, SegmentationInputs, SegmentationOutcome, SolveInfo, Subspace};
pub use voting::{collision_matrix, voting_objective, voting_step, VotingOptions, VotingOutcome};
