//! Filter pruning via geometric median.
//!
//! Filters of a layer are treated as points in `R^d`. The filters closest to
//! the layer's geometric median carry information the others can replace,
//! so they are zeroized during training and removed at the end.

pub mod analysis;
pub mod criteria;
pub mod filters;
pub mod flops;
pub mod model_io;
pub mod pruner;
pub mod rng;
pub mod toytrain;

pub use filters::FilterMatrix;
pub use model_io::{load_bundle, save_bundle, LayerKind, LayerShape, LayerSpec, ModelBundle};
