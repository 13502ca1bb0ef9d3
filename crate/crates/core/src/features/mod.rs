//! Derived input layers: spectral indices, Horn terrain parameters, GLCM
//! texture, principal components and tasseled-cap axes.

mod glcm;
mod index;
mod pca;
mod tasseled_cap;
mod terrain;

pub use glcm::{glcm_dissimilarity, GlcmConfig, GlcmStatistic, Texture};
pub use index::{normalized_difference, normalized_difference_grid, spectral_index, IndexKind, INDEX_DENOM_EPS};
pub use pca::{band_covariance, pca, PcaModel};
pub use tasseled_cap::{tasseled_cap, TasseledCapCoefficients};
pub use terrain::{aspect, horn_gradient, slope, FLAT_ASPECT};
