use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::grid::{GridGeometry, RasterGrid};
use crate::error::{Error, Result};

/// Semantic role of a band in the model input stack. The numeric code is the
/// on-disk role tag (0 is reserved for untagged bands).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum BandRole {
    Blue,
    Green,
    Red,
    RedEdge1,
    RedEdge2,
    RedEdge3,
    Nir,
    NarrowNir,
    WaterVapour,
    Swir1,
    Swir2,
    Cirrus,
    Elevation,
    Slope,
    Aspect,
    Ndvi,
    Ndsi,
    Ndwi,
    Ndgi,
    Lst,
    Glcm,
    Velocity,
    Coherence,
    Phase,
    Pca1,
    Pca2,
    Pca3,
    Tcb,
    Tcg,
    Tcw,
}

impl BandRole {
    pub const ALL: [BandRole; 30] = [
        BandRole::Blue,
        BandRole::Green,
        BandRole::Red,
        BandRole::RedEdge1,
        BandRole::RedEdge2,
        BandRole::RedEdge3,
        BandRole::Nir,
        BandRole::NarrowNir,
        BandRole::WaterVapour,
        BandRole::Swir1,
        BandRole::Swir2,
        BandRole::Cirrus,
        BandRole::Elevation,
        BandRole::Slope,
        BandRole::Aspect,
        BandRole::Ndvi,
        BandRole::Ndsi,
        BandRole::Ndwi,
        BandRole::Ndgi,
        BandRole::Lst,
        BandRole::Glcm,
        BandRole::Velocity,
        BandRole::Coherence,
        BandRole::Phase,
        BandRole::Pca1,
        BandRole::Pca2,
        BandRole::Pca3,
        BandRole::Tcb,
        BandRole::Tcg,
        BandRole::Tcw,
    ];

    /// The twelve optical bands, in stack order.
    pub const OPTICAL: [BandRole; 12] = [
        BandRole::Blue,
        BandRole::Green,
        BandRole::Red,
        BandRole::RedEdge1,
        BandRole::RedEdge2,
        BandRole::RedEdge3,
        BandRole::Nir,
        BandRole::NarrowNir,
        BandRole::WaterVapour,
        BandRole::Swir1,
        BandRole::Swir2,
        BandRole::Cirrus,
    ];

    pub fn code(self) -> u16 {
        Self::ALL.iter().position(|&r| r == self).unwrap() as u16 + 1
    }

    pub fn from_code(code: u16) -> Option<BandRole> {
        if code == 0 {
            return None;
        }
        Self::ALL.get(code as usize - 1).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BandRole::Blue => "Blue",
            BandRole::Green => "Green",
            BandRole::Red => "Red",
            BandRole::RedEdge1 => "RedEdge1",
            BandRole::RedEdge2 => "RedEdge2",
            BandRole::RedEdge3 => "RedEdge3",
            BandRole::Nir => "NIR",
            BandRole::NarrowNir => "NarrowNIR",
            BandRole::WaterVapour => "WaterVapour",
            BandRole::Swir1 => "SWIR1",
            BandRole::Swir2 => "SWIR2",
            BandRole::Cirrus => "Cirrus",
            BandRole::Elevation => "Elevation",
            BandRole::Slope => "Slope",
            BandRole::Aspect => "Aspect",
            BandRole::Ndvi => "NDVI",
            BandRole::Ndsi => "NDSI",
            BandRole::Ndwi => "NDWI",
            BandRole::Ndgi => "NDGI",
            BandRole::Lst => "LST",
            BandRole::Glcm => "GLCM",
            BandRole::Velocity => "Velocity",
            BandRole::Coherence => "Coherence",
            BandRole::Phase => "Phase",
            BandRole::Pca1 => "PCA1",
            BandRole::Pca2 => "PCA2",
            BandRole::Pca3 => "PCA3",
            BandRole::Tcb => "TCB",
            BandRole::Tcg => "TCG",
            BandRole::Tcw => "TCW",
        }
    }

    /// Whether the band holds a categorical quantity (resampled with nearest).
    pub fn is_categorical(self) -> bool {
        false
    }
}

impl fmt::Display for BandRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<BandRole> for String {
    fn from(r: BandRole) -> String {
        r.name().to_string()
    }
}

impl TryFrom<String> for BandRole {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for BandRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::RoleNotFound(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub name: String,
    pub role: Option<BandRole>,
    pub grid: RasterGrid,
}

/// Ordered, named bands sharing one lattice and nodata sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStack {
    geometry: GridGeometry,
    nodata: f32,
    bands: Vec<Band>,
}

impl BandStack {
    pub fn new(geometry: GridGeometry, nodata: f32) -> Result<Self> {
        geometry.validate()?;
        Ok(Self {
            geometry,
            nodata,
            bands: Vec::new(),
        })
    }

    /// Builds a stack from a non-empty list of bands; geometry and nodata come
    /// from the first band.
    pub fn from_bands(bands: Vec<Band>) -> Result<Self> {
        let first = bands
            .first()
            .ok_or_else(|| Error::InvalidGrid("a stack needs at least one band".into()))?;
        let mut stack = Self::new(*first.grid.geometry(), first.grid.nodata())?;
        for b in bands {
            stack.push_band(b)?;
        }
        Ok(stack)
    }

    pub fn push(&mut self, name: impl Into<String>, role: Option<BandRole>, grid: RasterGrid) -> Result<()> {
        self.push_band(Band {
            name: name.into(),
            role,
            grid,
        })
    }

    pub fn push_band(&mut self, band: Band) -> Result<()> {
        self.geometry
            .ensure_same(band.grid.geometry(), &format!("band '{}'", band.name))?;
        if band.grid.nodata().to_bits() != self.nodata.to_bits() {
            return Err(Error::Geometry(format!(
                "band '{}' nodata {} differs from stack nodata {}",
                band.name,
                band.grid.nodata(),
                self.nodata
            )));
        }
        if self.bands.iter().any(|b| b.name == band.name) {
            return Err(Error::InvalidGrid(format!("duplicate band name '{}'", band.name)));
        }
        if let Some(role) = band.role {
            if self.bands.iter().any(|b| b.role == Some(role)) {
                return Err(Error::InvalidGrid(format!("duplicate band role {role}")));
            }
        }
        self.bands.push(band);
        Ok(())
    }

    /// Appends every band of `other`.
    pub fn extend(&mut self, other: BandStack) -> Result<()> {
        for b in other.bands {
            self.push_band(b)?;
        }
        Ok(())
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn nodata(&self) -> f32 {
        self.nodata
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn band(&self, index: usize) -> &Band {
        &self.bands[index]
    }

    pub fn names(&self) -> Vec<String> {
        self.bands.iter().map(|b| b.name.clone()).collect()
    }

    pub fn by_role(&self, role: BandRole) -> Result<&RasterGrid> {
        self.bands
            .iter()
            .find(|b| b.role == Some(role))
            .map(|b| &b.grid)
            .ok_or_else(|| Error::RoleNotFound(role.name().to_string()))
    }

    pub fn by_name(&self, name: &str) -> Result<&RasterGrid> {
        self.bands
            .iter()
            .find(|b| b.name == name)
            .map(|b| &b.grid)
            .ok_or_else(|| Error::BandNotFound(name.to_string()))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.bands.iter().position(|b| b.name == name)
    }

    /// Keeps only the bands whose names appear in `names`, in that order.
    pub fn select(&self, names: &[String]) -> Result<BandStack> {
        let mut out = BandStack::new(self.geometry, self.nodata)?;
        for n in names {
            let i = self.index_of(n).ok_or_else(|| Error::BandNotFound(n.clone()))?;
            out.push_band(self.bands[i].clone())?;
        }
        Ok(out)
    }

    pub fn into_bands(self) -> Vec<Band> {
        self.bands
    }

}
