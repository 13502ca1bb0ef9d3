use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{is_nodata, Band, BandRole, BandStack, RasterGrid};

/// Brightness/greenness/wetness rows over a declared list of band roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TasseledCapCoefficients {
    pub bands: Vec<BandRole>,
    pub brightness: Vec<f64>,
    pub greenness: Vec<f64>,
    pub wetness: Vec<f64>,
}

impl TasseledCapCoefficients {
    /// Six-band Sentinel-2 table (Blue, Green, Red, NIR, SWIR1, SWIR2).
    /// Also shipped as `config/tasseled_cap_sentinel2.json`.
    pub fn sentinel2() -> Self {
        Self {
            bands: vec![
                BandRole::Blue,
                BandRole::Green,
                BandRole::Red,
                BandRole::Nir,
                BandRole::Swir1,
                BandRole::Swir2,
            ],
            brightness: vec![0.3510, 0.3813, 0.3437, 0.7196, 0.2396, 0.1949],
            greenness: vec![-0.3599, -0.3533, -0.4734, 0.6633, 0.0087, -0.2856],
            wetness: vec![0.2578, 0.2305, 0.0883, 0.1071, -0.7611, -0.5308],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.bands.len();
        for (name, row) in [
            ("brightness coefficients", &self.brightness),
            ("greenness coefficients", &self.greenness),
            ("wetness coefficients", &self.wetness),
        ] {
            if row.len() != n {
                return Err(Error::Arity {
                    what: name,
                    expected: n,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("{name} row has non-finite coefficients")));
            }
        }
        if n == 0 {
            return Err(Error::Config("tasseled-cap table declares no bands".into()));
        }
        Ok(())
    }

    pub fn rows(&self) -> [&[f64]; 3] {
        [&self.brightness, &self.greenness, &self.wetness]
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: Self = serde_json::from_str(&text)?;
        t.validate()?;
        Ok(t)
    }
}

/// Per-pixel dot products with the three coefficient rows; outputs are named
/// TCB, TCG and TCW.
pub fn tasseled_cap(stack: &BandStack, coeffs: &TasseledCapCoefficients) -> Result<BandStack> {
    coeffs.validate()?;
    let inputs: Vec<&[f32]> = coeffs
        .bands
        .iter()
        .map(|&r| stack.by_role(r).map(|g| g.values()))
        .collect::<Result<_>>()?;
    let geom = *stack.geometry();
    let nodata = stack.nodata();
    let mut out = BandStack::new(geom, nodata)?;
    let outputs = [
        ("TCB", BandRole::Tcb),
        ("TCG", BandRole::Tcg),
        ("TCW", BandRole::Tcw),
    ];
    for (row, (name, role)) in coeffs.rows().into_iter().zip(outputs) {
        let values = (0..geom.len())
            .map(|i| {
                let mut acc = 0.0f64;
                for (vals, &w) in inputs.iter().zip(row) {
                    let v = vals[i];
                    if is_nodata(v, nodata) {
                        return nodata;
                    }
                    acc += w * v as f64;
                }
                acc as f32
            })
            .collect();
        out.push_band(Band {
            name: name.to_string(),
            role: Some(role),
            grid: RasterGrid::from_parts_unchecked(geom, nodata, values),
        })?;
    }
    Ok(out)
}
