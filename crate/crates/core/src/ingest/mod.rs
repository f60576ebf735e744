//! City bundles: tiles, POIs, building footprints, a nightlight raster and
//! district boundaries, plus a synthetic generator with planted ground truth.

mod io;
mod synth;
mod wkt;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

pub use io::{load_bundle, write_bundle};
pub(crate) use io::csv_err;
pub use synth::{synth_city, DistrictLatent, SynthLedger, SynthParams, SyntheticCity, TileLedger};
pub use wkt::{parse_polygon_wkt, polygon_to_wkt};

use crate::error::{Error, Result};
use crate::geoindex::{GeoPoint, Polygon, TileRef};
use crate::imagery::TilePixels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PoiCategory {
    Hospital,
    School,
    Townhall,
    Bank,
}

impl PoiCategory {
    /// Canonical order used by distance vectors and label columns.
    pub const ALL: [PoiCategory; 4] = [
        PoiCategory::Hospital,
        PoiCategory::School,
        PoiCategory::Townhall,
        PoiCategory::Bank,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PoiCategory::Hospital => "hospital",
            PoiCategory::School => "school",
            PoiCategory::Townhall => "townhall",
            PoiCategory::Bank => "bank",
        }
    }
}

impl fmt::Display for PoiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoiCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hospital" => Ok(PoiCategory::Hospital),
            "school" => Ok(PoiCategory::School),
            "townhall" => Ok(PoiCategory::Townhall),
            "bank" => Ok(PoiCategory::Bank),
            other => Err(Error::Domain(format!("unknown POI category `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoiRecord {
    pub category: PoiCategory,
    pub location: GeoPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTile {
    pub tile_id: String,
    pub tile: TileRef,
    pub pixels: TilePixels,
    pub district_id: Option<u32>,
}

/// Regular lon/lat grid of radiance values. Row 0 is the northern edge.
#[derive(Debug, Clone, PartialEq)]
pub struct NightlightRaster {
    pub lon_min: f64,
    pub lat_min: f64,
    pub lon_max: f64,
    pub lat_max: f64,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl NightlightRaster {
    pub fn validate(&self) -> Result<()> {
        let rec = "nightlight";
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::validation(rec, "rows/cols", "raster must be non-empty"));
        }
        if self.rows * self.cols != self.values.len() {
            return Err(Error::validation(
                rec,
                "values",
                format!(
                    "{} values for a {}x{} raster",
                    self.values.len(),
                    self.rows,
                    self.cols
                ),
            ));
        }
        if !(self.lon_min < self.lon_max && self.lat_min < self.lat_max)
            || ![self.lon_min, self.lat_min, self.lon_max, self.lat_max]
                .iter()
                .all(|v| v.is_finite())
        {
            return Err(Error::validation(rec, "bounds", "degenerate or non-finite bounds"));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation(
                rec,
                "values",
                format!("cell {i} has invalid radiance {}", self.values[i]),
            ));
        }
        Ok(())
    }

    pub fn cell_width(&self) -> f64 {
        (self.lon_max - self.lon_min) / self.cols as f64
    }

    pub fn cell_height(&self) -> f64 {
        (self.lat_max - self.lat_min) / self.rows as f64
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistrictRecord {
    pub district_id: u32,
    pub name: String,
    pub boundary: Polygon,
    pub population: u64,
    pub poverty_rate: f64,
}

impl DistrictRecord {
    pub fn validate(&self) -> Result<()> {
        let rec = format!("district {}", self.district_id);
        if !self.poverty_rate.is_finite() || !(0.0..=1.0).contains(&self.poverty_rate) {
            return Err(Error::validation(
                rec,
                "poverty_rate",
                format!("{} not in [0, 1]", self.poverty_rate),
            ));
        }
        self.boundary
            .validate()
            .map_err(|e| Error::validation(rec, "boundary_wkt", e.to_string()))
    }
}

/// Poverty headcount: `round(population * poverty_rate)`, halves away from zero.
pub fn poverty_headcount(d: &DistrictRecord) -> u64 {
    (d.population as f64 * d.poverty_rate).round() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct CityBundle {
    pub tiles: Vec<ImageTile>,
    pub pois: Vec<PoiRecord>,
    pub buildings: Vec<Polygon>,
    pub nightlight: NightlightRaster,
    pub districts: Vec<DistrictRecord>,
}

impl CityBundle {
    /// Checks record invariants and tile/district referential integrity.
    pub fn validate(&self) -> Result<()> {
        let mut district_ids = BTreeSet::new();
        for d in &self.districts {
            d.validate()?;
            if !district_ids.insert(d.district_id) {
                return Err(Error::validation(
                    format!("district {}", d.district_id),
                    "district_id",
                    "duplicate district id",
                ));
            }
        }
        let mut tile_ids = BTreeSet::new();
        for t in &self.tiles {
            let rec = format!("tile {}", t.tile_id);
            t.tile
                .validate()
                .map_err(|e| Error::validation(rec.clone(), "z/x/y", e.to_string()))?;
            if !tile_ids.insert(t.tile_id.as_str()) {
                return Err(Error::validation(rec, "tile_id", "duplicate tile id"));
            }
            if let Some(d) = t.district_id {
                if !district_ids.contains(&d) {
                    return Err(Error::validation(
                        rec,
                        "district_id",
                        format!("unknown district {d}"),
                    ));
                }
            }
        }
        for (i, b) in self.buildings.iter().enumerate() {
            b.validate()
                .map_err(|e| Error::validation(format!("building {i}"), "geometry", e.to_string()))?;
        }
        for (i, p) in self.pois.iter().enumerate() {
            GeoPoint::new(p.location.lon, p.location.lat)
                .map_err(|e| Error::validation(format!("poi {i}"), "geometry", e.to_string()))?;
        }
        self.nightlight.validate()
    }

    pub fn district(&self, id: u32) -> Option<&DistrictRecord> {
        self.districts.iter().find(|d| d.district_id == id)
    }
}
