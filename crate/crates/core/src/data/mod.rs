//! Synthetic shapes, rigid and deformed pairs, and their on-disk formats.

mod io;
mod manifest;
mod pairs;
mod shapes;

pub use io::{read_pair, write_pair, PAIR_MAGIC, PAIR_VERSION};
pub use manifest::{
    generate_dataset, DatasetManifest, GenParams, ManifestEntry, PairMode, Split, MANIFEST_NAME,
};
pub use pairs::{
    apply_rigid, make_deformed_pair, make_rigid_pair, random_permutation, random_rotation,
    DeformKernel, DeformMeta, PairSample, DEFORM_KERNEL_WIDTH,
};
pub use shapes::{gen_gaussian_clusters, gen_shape, ShapeKind, CLUSTER_COUNT, MIN_SHAPE_POINTS};
