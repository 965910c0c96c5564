//! Element kernels, sparse storage and global assembly.

pub mod hex8;
pub mod sparse;
pub mod assembly;
