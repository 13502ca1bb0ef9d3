//! Grids, band stacks, lattice resampling, standardization and the `CRYO`
//! binary container.

mod grid;
pub mod io;
mod normalize;
mod resample;
mod stack;

pub use grid::{is_nodata, GridGeometry, RasterGrid, DEFAULT_NODATA};
pub use io::{read_stack, write_stack};
pub use normalize::{band_moments, normalize_stack, read_stats, write_stats, BandStats, STD_EPS};
pub use resample::{resample, resample_stack, ResampleMethod};
pub use stack::{Band, BandRole, BandStack};
