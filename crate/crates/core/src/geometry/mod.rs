//! Point clouds, voxel grids, neighbourhood graphs and their spectra.

pub mod cloud;
pub mod graph;
pub mod io;
pub mod kdtree;
pub mod mesh;
pub mod spectral;
pub mod transform;
pub mod voxel;

pub use cloud::{PointCloud, Vec3};
pub use graph::{build_knn_graph, laplacian, Graph, LaplacianOperator};
pub use io::{read_off, read_ply, write_off, write_ply, PlyFormat};
pub use kdtree::KdTree;
pub use mesh::Mesh;
pub use spectral::{spectral_basis, SpectralBasis};
pub use transform::RigidTransform;
pub use voxel::{distance_transform, voxelize, VoxelGrid};
