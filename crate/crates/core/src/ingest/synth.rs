//! Deterministic synthetic cities with planted poverty.
//!
//! Each district carries a latent poverty level `u ~ U(0, 1)` that becomes its
//! poverty rate. Three noisy views of `u` drive what the imagery shows:
//!
//! * the morphological view sets building footprint sizes (smaller and denser
//!   when poorer); footprints are drawn as rectangles whose brightness grows
//!   with area,
//! * the accessibility view sets POI density; tiles near POIs get more roads,
//! * the economic view sets residential radiance and a roof tint.
//!
//! A `confound_fraction` of tiles are "industrial": no buildings, a striped
//! compound texture and radiance above every residential tile. Industrial
//! tiles cluster in randomly chosen districts, independent of `u`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};

use super::{
    CityBundle, DistrictRecord, ImageTile, NightlightRaster, PoiCategory, PoiRecord,
};
use crate::error::{Error, Result};
use crate::geoindex::{
    geo_distance_m, polygon_area_m2, tile_containing, tile_ground_size_m, GeoPoint, Polygon,
    TileRef, DEFAULT_ZOOM,
};
use crate::imagery::{Image, TilePixels, TILE_PX};
use crate::rng::{self, StreamRng};

/// City anchor (north-west corner).
const ORIGIN_LON: f64 = 104.88;
const ORIGIN_LAT: f64 = 11.58;
/// Fixed population of every synthetic district.
pub const DISTRICT_POPULATION: u64 = 50_000;
/// Standard deviation of the district-level noise on each trait view.
const VIEW_NOISE: f64 = 0.1;
/// Expected POIs of one category in the most accessible district.
const POI_RATE: f64 = 1.5;
/// Nightlight raster cells per tile edge.
const RASTER_CELLS_PER_TILE: usize = 4;
/// Uniform pixel noise with this standard deviation.
const PIXEL_NOISE_SD: f64 = 0.05;
const INDUSTRIAL_RADIANCE: (f64, f64) = (90.0, 140.0);
const BACKGROUND: [f64; 3] = [0.18, 0.20, 0.16];
const ROAD: [f64; 3] = [0.55, 0.55, 0.52];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub n_districts: usize,
    pub tiles_per_district: usize,
    pub confound_fraction: f64,
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_districts < 2 {
            return Err(Error::Domain("n_districts must be at least 2".into()));
        }
        if self.tiles_per_district < 4 {
            return Err(Error::Domain("tiles_per_district must be at least 4".into()));
        }
        if !(0.0..1.0).contains(&self.confound_fraction) {
            return Err(Error::Domain(format!(
                "confound_fraction {} not in [0, 1)",
                self.confound_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistrictLatent {
    pub district_id: u32,
    pub poverty: f64,
    pub morph_view: f64,
    pub access_view: f64,
    pub econ_view: f64,
    pub industrial_tiles: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileLedger {
    pub tile_id: String,
    pub district_id: u32,
    pub industrial: bool,
    /// Footprint areas (m²) of the tile's buildings, in bundle order.
    pub building_areas: Vec<f64>,
    /// Mean footprint area, 0 when the tile has no buildings.
    pub floor_area: f64,
    /// Planted radiance written into the raster cells covering the tile.
    pub radiance: f64,
    /// Pixel rectangles `(x0, y0, x1, y1)` of industrial compounds.
    pub compounds: Vec<(usize, usize, usize, usize)>,
}

/// What the generator planted, for checking downstream stages.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthLedger {
    pub districts: Vec<DistrictLatent>,
    pub tiles: Vec<TileLedger>,
}

impl SynthLedger {
    pub fn tile(&self, tile_id: &str) -> Option<&TileLedger> {
        self.tiles.iter().find(|t| t.tile_id == tile_id)
    }

    /// Writes the ledger as JSON (`ledger.json` next to a bundle by convention).
    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        let districts: Vec<_> = self
            .districts
            .iter()
            .map(|d| {
                serde_json::json!({
                    "district_id": d.district_id,
                    "poverty": d.poverty,
                    "morph_view": d.morph_view,
                    "access_view": d.access_view,
                    "econ_view": d.econ_view,
                    "industrial_tiles": d.industrial_tiles,
                })
            })
            .collect();
        let tiles: Vec<_> = self
            .tiles
            .iter()
            .map(|t| {
                serde_json::json!({
                    "tile_id": t.tile_id,
                    "district_id": t.district_id,
                    "industrial": t.industrial,
                    "building_areas": t.building_areas,
                    "floor_area": t.floor_area,
                    "radiance": t.radiance,
                    "compounds": t.compounds,
                })
            })
            .collect();
        let doc = serde_json::json!({ "districts": districts, "tiles": tiles });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub bundle: CityBundle,
    pub ledger: SynthLedger,
}

struct Layout {
    z: u8,
    x0: u32,
    y0: u32,
    block_w: usize,
    block_h: usize,
    grid_cols: usize,
    grid_rows: usize,
}

impl Layout {
    fn new(p: &SynthParams) -> Result<Self> {
        let origin = tile_containing(GeoPoint::new(ORIGIN_LON, ORIGIN_LAT)?, DEFAULT_ZOOM)?;
        let block_w = (p.tiles_per_district as f64).sqrt().ceil() as usize;
        let block_h = p.tiles_per_district.div_ceil(block_w);
        let grid_cols = (p.n_districts as f64).sqrt().ceil() as usize;
        let grid_rows = p.n_districts.div_ceil(grid_cols);
        Ok(Layout {
            z: DEFAULT_ZOOM,
            x0: origin.x,
            y0: origin.y,
            block_w,
            block_h,
            grid_cols,
            grid_rows,
        })
    }

    /// Geographic position of a fractional global tile coordinate.
    fn lonlat(&self, gx: f64, gy: f64) -> GeoPoint {
        let n = (1u64 << self.z) as f64;
        let lon = gx / n * 360.0 - 180.0;
        let lat = (std::f64::consts::PI * (1.0 - 2.0 * gy / n))
            .sinh()
            .atan()
            .to_degrees();
        GeoPoint { lon, lat }
    }

    fn district_origin(&self, k: usize) -> (u32, u32) {
        let (row, col) = (k / self.grid_cols, k % self.grid_cols);
        (
            self.x0 + (col * self.block_w) as u32,
            self.y0 + (row * self.block_h) as u32,
        )
    }

    fn district_polygon(&self, k: usize) -> Result<Polygon> {
        let (x, y) = self.district_origin(k);
        let (x, y) = (x as f64, y as f64);
        let (w, h) = (self.block_w as f64, self.block_h as f64);
        Polygon::new(vec![
            self.lonlat(x, y + h),
            self.lonlat(x + w, y + h),
            self.lonlat(x + w, y),
            self.lonlat(x, y),
        ])
    }

    fn tile(&self, k: usize, slot: usize) -> Result<TileRef> {
        let (x, y) = self.district_origin(k);
        TileRef::new(
            self.z,
            x + (slot % self.block_w) as u32,
            y + (slot / self.block_w) as u32,
        )
    }

    /// `(west, south, east, north)` of the whole district grid.
    fn city_bounds(&self) -> (f64, f64, f64, f64) {
        let nw = self.lonlat(self.x0 as f64, self.y0 as f64);
        let se = self.lonlat(
            (self.x0 as usize + self.grid_cols * self.block_w) as f64,
            (self.y0 as usize + self.grid_rows * self.block_h) as f64,
        );
        (nw.lon, se.lat, se.lon, nw.lat)
    }
}

/// Generates a synthetic city. Identical parameters give identical output.
pub fn synth_city(params: SynthParams) -> Result<SyntheticCity> {
    params.validate()?;
    let layout = Layout::new(&params)?;
    let mut rng = rng::stream(params.seed, rng::SYNTH);
    let n = params.n_districts;
    let t = params.tiles_per_district;

    let view_noise = Normal::new(0.0, VIEW_NOISE).expect("valid normal");
    let mut latents: Vec<DistrictLatent> = (0..n)
        .map(|k| {
            let u: f64 = rng.random();
            DistrictLatent {
                district_id: k as u32 + 1,
                poverty: u,
                morph_view: u + view_noise.sample(&mut rng),
                access_view: u + view_noise.sample(&mut rng),
                econ_view: u + view_noise.sample(&mut rng),
                industrial_tiles: 0,
            }
        })
        .collect();

    let pois = place_pois(&layout, &latents, &mut rng)?;
    let industrial = choose_industrial(&params, &mut latents, &mut rng);

    let mut tiles = Vec::with_capacity(n * t);
    let mut buildings = Vec::new();
    let mut ledger_tiles = Vec::with_capacity(n * t);
    for k in 0..n {
        for slot in 0..t {
            let tile = layout.tile(k, slot)?;
            let idx = (k * t + slot) as u64;
            let mut trng = rng::indexed_stream(params.seed, "synth.tile", idx);
            let rendered = render_tile(
                &layout,
                &tile,
                &latents[k],
                industrial[k * t + slot],
                &pois,
                &mut trng,
            )?;
            let areas: Vec<f64> = rendered
                .buildings
                .iter()
                .map(polygon_area_m2)
                .collect::<Result<_>>()?;
            let floor_area = if areas.is_empty() {
                0.0
            } else {
                areas.iter().sum::<f64>() / areas.len() as f64
            };
            ledger_tiles.push(TileLedger {
                tile_id: tile.tile_id.clone(),
                district_id: latents[k].district_id,
                industrial: industrial[k * t + slot],
                building_areas: areas,
                floor_area,
                radiance: rendered.radiance,
                compounds: rendered.compounds,
            });
            buildings.extend(rendered.buildings);
            tiles.push(ImageTile {
                tile_id: tile.tile_id.clone(),
                tile,
                pixels: TilePixels::quantize(&rendered.image)?,
                district_id: Some(latents[k].district_id),
            });
        }
    }

    let nightlight = build_raster(&layout, &tiles, &ledger_tiles);
    let districts = (0..n)
        .map(|k| {
            Ok(DistrictRecord {
                district_id: latents[k].district_id,
                name: format!("District {:02}", k + 1),
                boundary: layout.district_polygon(k)?,
                population: DISTRICT_POPULATION,
                poverty_rate: latents[k].poverty,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let bundle = CityBundle {
        tiles,
        pois,
        buildings,
        nightlight,
        districts,
    };
    bundle.validate()?;
    Ok(SyntheticCity {
        bundle,
        ledger: SynthLedger {
            districts: latents,
            tiles: ledger_tiles,
        },
    })
}

fn place_pois(
    layout: &Layout,
    latents: &[DistrictLatent],
    rng: &mut StreamRng,
) -> Result<Vec<PoiRecord>> {
    let mut pois = Vec::new();
    for (k, lat) in latents.iter().enumerate() {
        let (x, y) = layout.district_origin(k);
        let access = lat.access_view.clamp(0.0, 1.0);
        let rate = POI_RATE * (1.0 - access).powf(1.5);
        for category in PoiCategory::ALL {
            let count = if rate > 0.0 {
                Poisson::new(rate).expect("positive rate").sample(rng) as usize
            } else {
                0
            };
            for _ in 0..count {
                let gx = x as f64 + rng.random::<f64>() * layout.block_w as f64;
                let gy = y as f64 + rng.random::<f64>() * layout.block_h as f64;
                pois.push(PoiRecord {
                    category,
                    location: layout.lonlat(gx, gy),
                });
            }
        }
    }
    // Every category must exist somewhere in the city.
    let best = latents
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.access_view.total_cmp(&b.1.access_view))
        .map(|(k, _)| k)
        .unwrap_or(0);
    for category in PoiCategory::ALL {
        if !pois.iter().any(|p| p.category == category) {
            let (x, y) = layout.district_origin(best);
            pois.push(PoiRecord {
                category,
                location: layout.lonlat(
                    x as f64 + layout.block_w as f64 / 2.0,
                    y as f64 + layout.block_h as f64 / 2.0,
                ),
            });
        }
    }
    Ok(pois)
}

/// Marks `round(confound_fraction * N)` tiles industrial, clustered by a
/// per-district gamma weight.
fn choose_industrial(
    params: &SynthParams,
    latents: &mut [DistrictLatent],
    rng: &mut StreamRng,
) -> Vec<bool> {
    let (n, t) = (params.n_districts, params.tiles_per_district);
    let total = n * t;
    let target = (params.confound_fraction * total as f64).round() as usize;
    let mut flags = vec![false; total];
    if target == 0 {
        return flags;
    }
    let gamma = Gamma::new(0.6, 1.0).expect("valid gamma");
    let weights: Vec<f64> = (0..n).map(|_| gamma.sample(rng) + 1e-3).collect();
    let cap = [(t * 3) / 5, t - 1, t]
        .into_iter()
        .find(|&c| c * n >= target)
        .unwrap_or(t);
    let mut counts = vec![0usize; n];
    for _ in 0..target {
        let open: f64 = (0..n).filter(|&k| counts[k] < cap).map(|k| weights[k]).sum();
        let mut pick = rng.random::<f64>() * open;
        let mut chosen = None;
        for k in 0..n {
            if counts[k] >= cap {
                continue;
            }
            chosen = Some(k);
            if pick < weights[k] {
                break;
            }
            pick -= weights[k];
        }
        let k = chosen.expect("capacity covers target");
        let free: Vec<usize> = (0..t).filter(|&s| !flags[k * t + s]).collect();
        let slot = free[rng.random_range(0..free.len())];
        flags[k * t + slot] = true;
        counts[k] += 1;
    }
    for (lat, c) in latents.iter_mut().zip(counts) {
        lat.industrial_tiles = c;
    }
    flags
}

struct RenderedTile {
    image: Image,
    buildings: Vec<Polygon>,
    radiance: f64,
    compounds: Vec<(usize, usize, usize, usize)>,
}

fn fill_rect(img: &mut Image, x0: usize, y0: usize, x1: usize, y1: usize, color: [f64; 3]) {
    for y in y0..y1.min(TILE_PX) {
        for x in x0..x1.min(TILE_PX) {
            for (c, v) in color.iter().enumerate() {
                img.set(y, x, c, *v);
            }
        }
    }
}

fn render_tile(
    layout: &Layout,
    tile: &TileRef,
    latent: &DistrictLatent,
    industrial: bool,
    pois: &[PoiRecord],
    rng: &mut StreamRng,
) -> Result<RenderedTile> {
    let mut img = Image::zeros(TILE_PX, TILE_PX);
    fill_rect(&mut img, 0, 0, TILE_PX, TILE_PX, BACKGROUND);

    // Roads: denser where POIs are close.
    let center = crate::geoindex::tile_center(tile)?;
    let gravity: f64 = PoiCategory::ALL
        .iter()
        .map(|&c| {
            let d = pois
                .iter()
                .filter(|p| p.category == c)
                .map(|p| geo_distance_m(center, p.location))
                .fold(f64::INFINITY, f64::min);
            1.0 / (d / 1000.0).max(0.05)
        })
        .sum();
    let n_roads = ((2.0 * (1.0 + gravity).ln()).round() as usize).min(6);
    for r in 0..n_roads {
        let pos = rng.random_range(16..TILE_PX - 20);
        if r % 2 == 0 {
            fill_rect(&mut img, 0, pos, TILE_PX, pos + 5, ROAD);
        } else {
            fill_rect(&mut img, pos, 0, pos + 5, TILE_PX, ROAD);
        }
    }

    let mut buildings = Vec::new();
    let mut compounds = Vec::new();
    if industrial {
        let w = rng.random_range(70..=120);
        let h = rng.random_range(70..=120);
        let x0 = rng.random_range(0..=TILE_PX - w);
        let y0 = rng.random_range(0..=TILE_PX - h);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let v = if ((x + y) / 6) % 2 == 0 { 0.92 } else { 0.70 };
                img.set(y, x, 0, v * 0.85);
                img.set(y, x, 1, v * 0.90);
                img.set(y, x, 2, v);
            }
        }
        compounds.push((x0, y0, x0 + w, y0 + h));
    }

    // Residential fabric; industrial tiles have none.
    let morph = latent.morph_view.clamp(0.0, 1.0);
    let count = if industrial {
        0
    } else {
        (6 + (24.0 * morph).round() as i64 + rng.random_range(-2..=2)).max(3) as usize
    };
    let mean_area = 400.0 * 10f64.powf(-morph);
    let mpp = tile_ground_size_m(tile)? / TILE_PX as f64;
    let tint = (0.5 - latent.econ_view).clamp(-0.6, 0.6);
    let area_noise = Normal::<f64>::new(0.0, 0.25).expect("valid normal");
    for _ in 0..count {
        let area = mean_area * area_noise.sample(rng).exp();
        let aspect: f64 = rng.random_range(0.6..1.6);
        let w_px = (area * aspect).sqrt() / mpp;
        let h_px = (area / aspect).sqrt() / mpp;
        let cx = rng.random_range(w_px / 2.0 + 2.0..TILE_PX as f64 - w_px / 2.0 - 2.0);
        let cy = rng.random_range(h_px / 2.0 + 2.0..TILE_PX as f64 - h_px / 2.0 - 2.0);
        let (x0, x1) = (cx - w_px / 2.0, cx + w_px / 2.0);
        let (y0, y1) = (cy - h_px / 2.0, cy + h_px / 2.0);
        let intensity = (0.3 + 0.0014 * area).min(0.95);
        let color = [
            (intensity * (1.0 + 0.35 * tint)).min(1.0),
            intensity,
            (intensity * (1.0 - 0.35 * tint)).min(1.0),
        ];
        let px0 = (x0 - 0.5).ceil().max(0.0) as usize;
        let py0 = (y0 - 0.5).ceil().max(0.0) as usize;
        let px1 = ((x1 - 0.5).floor() + 1.0).max(0.0) as usize;
        let py1 = ((y1 - 0.5).floor() + 1.0).max(0.0) as usize;
        fill_rect(&mut img, px0, py0, px1, py1, color);
        let to_geo = |px: f64, py: f64| {
            layout.lonlat(
                tile.x as f64 + px / TILE_PX as f64,
                tile.y as f64 + py / TILE_PX as f64,
            )
        };
        buildings.push(Polygon::new(vec![
            to_geo(x0, y1),
            to_geo(x1, y1),
            to_geo(x1, y0),
            to_geo(x0, y0),
        ])?);
    }
    let radiance = if industrial {
        rng.random_range(INDUSTRIAL_RADIANCE.0..INDUSTRIAL_RADIANCE.1)
    } else {
        let econ = latent.econ_view.clamp(-0.2, 1.2);
        let jitter = Normal::<f64>::new(0.0, 0.15).expect("valid normal");
        60.0 * (-2.5 * econ).exp() * jitter.sample(rng).exp()
    };

    let half_width = PIXEL_NOISE_SD * 3f64.sqrt();
    for v in img.as_mut_slice() {
        *v = (*v + rng.random_range(-half_width..half_width)).clamp(0.0, 1.0);
    }
    Ok(RenderedTile {
        image: img,
        buildings,
        radiance,
        compounds,
    })
}

/// Lon/lat raster with `RASTER_CELLS_PER_TILE` cells per tile edge; every cell
/// takes the radiance of the tile containing its center, or a dim background
/// outside all tiles.
fn build_raster(layout: &Layout, tiles: &[ImageTile], ledger: &[TileLedger]) -> NightlightRaster {
    let (west, south, east, north) = layout.city_bounds();
    let cols = layout.grid_cols * layout.block_w * RASTER_CELLS_PER_TILE;
    let rows = layout.grid_rows * layout.block_h * RASTER_CELLS_PER_TILE;
    let mut lookup = std::collections::HashMap::new();
    for (t, l) in tiles.iter().zip(ledger) {
        lookup.insert((t.tile.x, t.tile.y), l.radiance);
    }
    let (cw, ch) = ((east - west) / cols as f64, (north - south) / rows as f64);
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let p = GeoPoint {
                lon: west + (c as f64 + 0.5) * cw,
                lat: north - (r as f64 + 0.5) * ch,
            };
            let v = tile_containing(p, layout.z)
                .ok()
                .and_then(|t| lookup.get(&(t.x, t.y)).copied())
                .unwrap_or(0.5);
            values.push(v);
        }
    }
    NightlightRaster {
        lon_min: west,
        lat_min: south,
        lon_max: east,
        lat_max: north,
        rows,
        cols,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{load_bundle, write_bundle};

    fn params(seed: u64, n: usize, t: usize, f: f64) -> SynthParams {
        SynthParams {
            seed,
            n_districts: n,
            tiles_per_district: t,
            confound_fraction: f,
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(synth_city(params(1, 1, 10, 0.0)).is_err());
        assert!(synth_city(params(1, 3, 3, 0.0)).is_err());
        assert!(synth_city(params(1, 3, 4, 1.0)).is_err());
        assert!(synth_city(params(1, 3, 4, -0.1)).is_err());
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = synth_city(params(5, 3, 6, 0.2)).unwrap();
        let b = synth_city(params(5, 3, 6, 0.2)).unwrap();
        assert_eq!(a.bundle, b.bundle);
        assert_eq!(a.ledger, b.ledger);
        let c = synth_city(params(6, 3, 6, 0.2)).unwrap();
        assert_ne!(a.bundle, c.bundle);
    }

    #[test]
    fn counts_and_assignment() {
        let city = synth_city(params(3, 4, 9, 0.25)).unwrap();
        assert_eq!(city.bundle.tiles.len(), 36);
        assert!(city.bundle.tiles.iter().all(|t| t.district_id.is_some()));
        let industrial = city.ledger.tiles.iter().filter(|t| t.industrial).count();
        assert_eq!(industrial, 9);
        for t in &city.ledger.tiles {
            assert_eq!(t.industrial, t.building_areas.is_empty());
        }
        for c in PoiCategory::ALL {
            assert!(city.bundle.pois.iter().any(|p| p.category == c));
        }
    }

    #[test]
    fn tile_centers_fall_in_their_district() {
        let city = synth_city(params(4, 5, 7, 0.0)).unwrap();
        for t in &city.bundle.tiles {
            let c = crate::geoindex::tile_center(&t.tile).unwrap();
            let owners: Vec<u32> = city
                .bundle
                .districts
                .iter()
                .filter(|d| crate::geoindex::point_in_polygon(c, &d.boundary))
                .map(|d| d.district_id)
                .collect();
            assert_eq!(owners, vec![t.district_id.unwrap()]);
        }
    }

    #[test]
    fn write_then_load_is_lossless() {
        let city = synth_city(params(9, 2, 4, 0.25)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&city.bundle, dir.path()).unwrap();
        let loaded = load_bundle(dir.path()).unwrap();
        assert_eq!(loaded, city.bundle);
    }
}
