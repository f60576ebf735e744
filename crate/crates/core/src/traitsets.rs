//! Per-tile training labels for the three trait encoders: POI distances and
//! radius labels (accessibility), mean building footprint (morphology) and
//! mean nightlight radiance (economic activity).

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geoindex::{geo_distance_m, point_in_polygon, tile_center, GeoPoint, Polygon};
use crate::ingest::{csv_err, CityBundle, ImageTile, NightlightRaster, PoiCategory, PoiRecord};

/// Lower clamp on POI distances, in meters.
pub const DISTANCE_FLOOR_M: f64 = 1.0;
/// Default radius for the accessibility multi-label, in meters.
pub const DEFAULT_GAMMA_M: f64 = 2000.0;
pub const N_CATEGORIES: usize = PoiCategory::ALL.len();

/// Distance (m) from a tile center to the nearest POI of each category, in
/// `PoiCategory::ALL` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceVector {
    pub d: [f64; N_CATEGORIES],
}

impl DistanceVector {
    /// Gravity weights `1 / d_j` with distances in kilometers.
    pub fn gravity_coefficients(&self) -> [f64; N_CATEGORIES] {
        self.d.map(|d| 1000.0 / d)
    }
}

/// One embedding vector per POI category, row-major `4 x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoiEmbeddingTable {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl PoiEmbeddingTable {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != N_CATEGORIES * dim {
            return Err(Error::Domain(format!(
                "POI table needs {} values, got {}",
                N_CATEGORIES * dim,
                data.len()
            )));
        }
        Ok(PoiEmbeddingTable { dim, data })
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccessSample {
    pub tile_id: String,
    pub distances: DistanceVector,
    pub multilabel: [bool; N_CATEGORIES],
}

impl AccessSample {
    pub fn gravity(&self, table: &PoiEmbeddingTable) -> Vec<f64> {
        gravity_embedding(&self.distances, table)
    }

    pub fn labels(&self) -> [f64; N_CATEGORIES] {
        self.multilabel.map(|b| if b { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorphSample {
    pub tile_id: String,
    pub floor_area: f64,
    pub log_fa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EconSample {
    pub tile_id: String,
    pub nightlight: f64,
    pub log_ni: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraitSets {
    pub access: Vec<AccessSample>,
    pub morph: Vec<MorphSample>,
    pub econ: Vec<EconSample>,
}

pub fn distance_vector(tile: &ImageTile, pois: &[PoiRecord]) -> Result<DistanceVector> {
    let center = tile_center(&tile.tile)?;
    distances_from(center, pois)
}

fn distances_from(center: GeoPoint, pois: &[PoiRecord]) -> Result<DistanceVector> {
    let mut d = [f64::INFINITY; N_CATEGORIES];
    for p in pois {
        let j = p.category.index();
        d[j] = d[j].min(geo_distance_m(center, p.location));
    }
    for (j, v) in d.iter_mut().enumerate() {
        if v.is_infinite() {
            return Err(Error::Dataset(format!(
                "no POI of category `{}` in bundle",
                PoiCategory::ALL[j]
            )));
        }
        *v = v.max(DISTANCE_FLOOR_M);
    }
    Ok(DistanceVector { d })
}

/// `sum_j p_j / d_j` with `d_j` in kilometers.
pub fn gravity_embedding(d: &DistanceVector, table: &PoiEmbeddingTable) -> Vec<f64> {
    let coef = d.gravity_coefficients();
    let mut out = vec![0.0; table.dim];
    for (j, c) in coef.iter().enumerate() {
        for (o, p) in out.iter_mut().zip(table.row(j)) {
            *o += c * p;
        }
    }
    out
}

/// `y_j = 1` iff `d_j < gamma` (strict).
pub fn radius_multilabel(d: &DistanceVector, gamma_m: f64) -> Result<[bool; N_CATEGORIES]> {
    if !(gamma_m > 0.0) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma_m}")));
    }
    Ok(d.d.map(|v| v < gamma_m))
}

/// Mean area of the buildings whose area centroid lies in the tile footprint;
/// 0 when there are none.
pub fn floor_area(tile: &ImageTile, buildings: &[Polygon]) -> Result<f64> {
    let centroids: Vec<GeoPoint> = buildings.iter().map(Polygon::centroid).collect();
    floor_area_indexed(tile, buildings, &centroids)
}

fn floor_area_indexed(tile: &ImageTile, buildings: &[Polygon], centroids: &[GeoPoint]) -> Result<f64> {
    let footprint = tile.tile.footprint();
    let (w, s, e, n) = tile.tile.bounds();
    let mut total = 0.0;
    let mut count = 0usize;
    for (b, c) in buildings.iter().zip(centroids) {
        if c.lon < w || c.lon > e || c.lat < s || c.lat > n {
            continue;
        }
        if point_in_polygon(*c, &footprint) {
            total += crate::geoindex::polygon_area_m2(b)?;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Mean of the raster cells overlapping the tile footprint, weighted by
/// overlap area in lon/lat space.
pub fn nightlight_intensity(tile: &ImageTile, raster: &NightlightRaster) -> Result<f64> {
    let (w, s, e, n) = tile.tile.bounds();
    raster_mean(raster, w, s, e, n).ok_or_else(|| {
        Error::Dataset(format!(
            "tile {} does not overlap the nightlight raster",
            tile.tile_id
        ))
    })
}

fn raster_mean(r: &NightlightRaster, w: f64, s: f64, e: f64, n: f64) -> Option<f64> {
    let (cw, ch) = (r.cell_width(), r.cell_height());
    let span = |lo: f64, hi: f64, count: usize| {
        let a = lo.floor().max(0.0) as usize;
        let b = ((hi.floor() + 1.0).max(0.0) as usize).min(count);
        a..b
    };
    let cols = span((w - r.lon_min) / cw, (e - r.lon_min) / cw, r.cols);
    // rows count downward from the northern edge
    let rows = span((r.lat_max - n) / ch, (r.lat_max - s) / ch, r.rows);
    let mut weight = 0.0;
    let mut acc = 0.0;
    for row in rows {
        let top = r.lat_max - row as f64 * ch;
        let bottom = top - ch;
        let dy = n.min(top) - s.max(bottom);
        if dy <= 0.0 {
            continue;
        }
        for col in cols.clone() {
            let left = r.lon_min + col as f64 * cw;
            let dx = e.min(left + cw) - w.max(left);
            if dx <= 0.0 {
                continue;
            }
            weight += dx * dy;
            acc += dx * dy * r.value(row, col);
        }
    }
    (weight > 0.0).then(|| acc / weight)
}

/// Builds all three sample lists, one entry per tile, sorted by tile id.
pub fn build_all(bundle: &CityBundle, gamma_m: f64) -> Result<TraitSets> {
    if !(gamma_m > 0.0) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma_m}")));
    }
    let mut seen = std::collections::BTreeSet::new();
    for t in &bundle.tiles {
        if !seen.insert(t.tile_id.as_str()) {
            return Err(Error::validation(
                format!("tile {}", t.tile_id),
                "tile_id",
                "duplicate tile id",
            ));
        }
    }
    let mut order: Vec<&ImageTile> = bundle.tiles.iter().collect();
    order.sort_by(|a, b| a.tile_id.cmp(&b.tile_id));
    let centroids: Vec<GeoPoint> = bundle.buildings.iter().map(Polygon::centroid).collect();

    let rows: Vec<(AccessSample, MorphSample, EconSample)> = order
        .par_iter()
        .map(|t| {
            let distances = distance_vector(t, &bundle.pois)?;
            let multilabel = radius_multilabel(&distances, gamma_m)?;
            let fa = floor_area_indexed(t, &bundle.buildings, &centroids)?;
            let ni = nightlight_intensity(t, &bundle.nightlight)?;
            Ok((
                AccessSample {
                    tile_id: t.tile_id.clone(),
                    distances,
                    multilabel,
                },
                MorphSample {
                    tile_id: t.tile_id.clone(),
                    floor_area: fa,
                    log_fa: fa.ln_1p(),
                },
                EconSample {
                    tile_id: t.tile_id.clone(),
                    nightlight: ni,
                    log_ni: ni.ln_1p(),
                },
            ))
        })
        .collect::<Result<_>>()?;

    let mut sets = TraitSets::default();
    for (a, m, e) in rows {
        sets.access.push(a);
        sets.morph.push(m);
        sets.econ.push(e);
    }
    Ok(sets)
}

/// Writes `access.csv`, `morph.csv` and `econ.csv` into `dir`.
pub fn write_csvs(sets: &TraitSets, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join("access.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let mut header = vec!["tile_id".to_string()];
    header.extend(PoiCategory::ALL.iter().map(|c| format!("d_{c}_m")));
    header.extend(PoiCategory::ALL.iter().map(|c| format!("within_{c}")));
    w.write_record(&header).map_err(|e| csv_err(&path, e))?;
    for s in &sets.access {
        let mut rec = vec![s.tile_id.clone()];
        rec.extend(s.distances.d.iter().map(|v| format!("{v:?}")));
        rec.extend(s.multilabel.iter().map(|&b| u8::from(b).to_string()));
        w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("morph.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["tile_id", "floor_area_m2", "log_fa"])
        .map_err(|e| csv_err(&path, e))?;
    for s in &sets.morph {
        w.write_record([
            s.tile_id.clone(),
            format!("{:?}", s.floor_area),
            format!("{:?}", s.log_fa),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("econ.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["tile_id", "nightlight", "log_ni"])
        .map_err(|e| csv_err(&path, e))?;
    for s in &sets.econ {
        w.write_record([
            s.tile_id.clone(),
            format!("{:?}", s.nightlight),
            format!("{:?}", s.log_ni),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoindex::{aeqd_inverse, TileRef};
    use crate::imagery::{TilePixels, CHANNELS, TILE_PX};
    use crate::ingest::{synth_city, SynthParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn tile(z: u8, x: u32, y: u32) -> ImageTile {
        let t = TileRef::new(z, x, y).unwrap();
        ImageTile {
            tile_id: t.tile_id.clone(),
            tile: t,
            pixels: TilePixels::from_raw(vec![0; TILE_PX * TILE_PX * CHANNELS]).unwrap(),
            district_id: None,
        }
    }

    fn poi(category: PoiCategory, location: GeoPoint) -> PoiRecord {
        PoiRecord { category, location }
    }

    fn all_at(location: GeoPoint) -> Vec<PoiRecord> {
        PoiCategory::ALL.iter().map(|&c| poi(c, location)).collect()
    }

    #[test]
    fn poi_at_center_is_clamped() {
        let t = tile(18, 208_000, 120_000);
        let c = tile_center(&t.tile).unwrap();
        let d = distance_vector(&t, &all_at(c)).unwrap();
        assert_eq!(d.d, [DISTANCE_FLOOR_M; 4]);
    }

    #[test]
    fn nearest_instance_per_category() {
        let t = tile(18, 208_000, 120_000);
        let c = tile_center(&t.tile).unwrap();
        let far = aeqd_inverse(c, 0.0, 10_000.0);
        let mut pois = all_at(far);
        pois.push(poi(PoiCategory::Hospital, aeqd_inverse(c, 1500.0, 0.0)));
        pois.push(poi(PoiCategory::School, aeqd_inverse(c, 800.0, 0.0)));
        pois.push(poi(PoiCategory::School, aeqd_inverse(c, 0.0, 3000.0)));
        let d = distance_vector(&t, &pois).unwrap();
        assert!((d.d[0] - 1500.0).abs() < 1.0, "{}", d.d[0]);
        assert!((d.d[1] - 800.0).abs() < 1.0, "{}", d.d[1]);
        assert!((d.d[2] - 10_000.0).abs() < 1.0);
    }

    #[test]
    fn missing_category_is_named() {
        let t = tile(18, 208_000, 120_000);
        let c = tile_center(&t.tile).unwrap();
        let pois = vec![
            poi(PoiCategory::Hospital, c),
            poi(PoiCategory::School, c),
            poi(PoiCategory::Bank, c),
        ];
        let err = distance_vector(&t, &pois).unwrap_err().to_string();
        assert!(err.contains("townhall"), "{err}");
    }

    #[test]
    fn gravity_examples() {
        let mut data = vec![0.0; 4 * 3];
        data[0] = 1.0;
        let table = PoiEmbeddingTable::new(3, data).unwrap();
        let d = DistanceVector { d: [2000.0, 1e12, 1e12, 1e12] };
        let g = gravity_embedding(&d, &table);
        assert!((g[0] - 0.5).abs() < 1e-9 && g[1].abs() < 1e-12 && g[2].abs() < 1e-12);

        let table = PoiEmbeddingTable::new(2, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.5, -2.0, 4.0]).unwrap();
        let g = gravity_embedding(&DistanceVector { d: [500.0; 4] }, &table);
        // all distances equal: 2 * sum of rows
        assert_eq!(g, vec![2.0 * 2.5, 2.0 * 5.5]);
    }

    #[test]
    fn gravity_matches_dot_product_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let dim = rng.random_range(1..9);
            let data: Vec<f64> = (0..4 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let table = PoiEmbeddingTable::new(dim, data.clone()).unwrap();
            let d = DistanceVector { d: [(); 4].map(|_| rng.random_range(1.0..20_000.0)) };
            let g = gravity_embedding(&d, &table);
            for k in 0..dim {
                let oracle: f64 = (0..4).map(|j| data[j * dim + k] / (d.d[j] / 1000.0)).sum();
                assert!((g[k] - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn radius_examples() {
        let d = DistanceVector { d: [1500.0, 2500.0, 1999.9, 2000.0] };
        assert_eq!(radius_multilabel(&d, 2000.0).unwrap(), [true, false, true, false]);
        assert_eq!(radius_multilabel(&d, 1e12).unwrap(), [true; 4]);
        assert_eq!(radius_multilabel(&d, 1.0).unwrap(), [false; 4]);
        assert!(radius_multilabel(&d, 0.0).is_err());
    }

    fn square_at(center: GeoPoint, side: f64) -> Polygon {
        let h = side / 2.0;
        Polygon::new(vec![
            aeqd_inverse(center, -h, -h),
            aeqd_inverse(center, h, -h),
            aeqd_inverse(center, h, h),
            aeqd_inverse(center, -h, h),
        ])
        .unwrap()
    }

    #[test]
    fn floor_area_examples() {
        let t = tile(18, 208_000, 120_000);
        let c = tile_center(&t.tile).unwrap();
        assert_eq!(floor_area(&t, &[]).unwrap(), 0.0);
        let a = square_at(aeqd_inverse(c, -20.0, 0.0), 50f64.sqrt());
        let b = square_at(aeqd_inverse(c, 20.0, 10.0), 150f64.sqrt());
        let outside = square_at(aeqd_inverse(c, 500.0, 0.0), 30.0);
        let fa = floor_area(&t, &[a, b, outside]).unwrap();
        assert!((fa - 100.0).abs() < 0.01, "{fa}");
    }

    fn raster(bounds: (f64, f64, f64, f64), rows: usize, cols: usize, values: Vec<f64>) -> NightlightRaster {
        NightlightRaster {
            lon_min: bounds.0,
            lat_min: bounds.1,
            lon_max: bounds.2,
            lat_max: bounds.3,
            rows,
            cols,
            values,
        }
    }

    #[test]
    fn nightlight_examples() {
        let t = tile(18, 208_000, 120_000);
        let (w, s, e, n) = t.tile.bounds();
        let (dw, dh) = (e - w, n - s);

        let r = raster((w - dw, s - dh, e + dw, n + dh), 1, 1, vec![7.5]);
        assert!((nightlight_intensity(&t, &r).unwrap() - 7.5).abs() < 1e-12);

        let mid = (w + e) / 2.0;
        let r = raster((mid - 2.0 * dw, s - dh, mid + 2.0 * dw, n + dh), 1, 2, vec![2.0, 4.0]);
        assert!((nightlight_intensity(&t, &r).unwrap() - 3.0).abs() < 1e-9);

        let r = raster((e + dw, s, e + 2.0 * dw, n), 1, 1, vec![1.0]);
        assert!(matches!(nightlight_intensity(&t, &r), Err(Error::Dataset(_))));
    }

    #[test]
    fn nightlight_matches_monte_carlo() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let t = tile(18, 208_000, 120_000);
        let (w, s, e, n) = t.tile.bounds();
        let (dw, dh) = (e - w, n - s);
        for _ in 0..5 {
            let rows = rng.random_range(1..6);
            let cols = rng.random_range(1..6);
            let r = raster(
                (
                    w - rng.random_range(0.0..1.5) * dw,
                    s - rng.random_range(0.0..1.5) * dh,
                    e + rng.random_range(0.0..1.5) * dw,
                    n + rng.random_range(0.0..1.5) * dh,
                ),
                rows,
                cols,
                (0..rows * cols).map(|_| rng.random_range(0.0..50.0)).collect(),
            );
            let mut acc = 0.0;
            let samples = 100_000;
            for _ in 0..samples {
                let lon = rng.random_range(w..e);
                let lat = rng.random_range(s..n);
                let col = ((lon - r.lon_min) / r.cell_width()) as usize;
                let row = ((r.lat_max - lat) / r.cell_height()) as usize;
                acc += r.value(row, col);
            }
            let mc = acc / samples as f64;
            let ni = nightlight_intensity(&t, &r).unwrap();
            assert!((ni - mc).abs() <= 0.01 * mc.abs().max(1e-9), "{ni} vs {mc}");
        }
    }

    #[test]
    fn build_all_matches_ledger() {
        let city = synth_city(SynthParams {
            seed: 7,
            n_districts: 5,
            tiles_per_district: 10,
            confound_fraction: 0.0,
        })
        .unwrap();
        let sets = build_all(&city.bundle, DEFAULT_GAMMA_M).unwrap();
        assert_eq!(sets.access.len(), 50);
        assert_eq!(sets.morph.len(), 50);
        assert_eq!(sets.econ.len(), 50);
        assert!(sets.morph.windows(2).all(|w| w[0].tile_id < w[1].tile_id));
        for (m, e) in sets.morph.iter().zip(&sets.econ) {
            let l = city.ledger.tile(&m.tile_id).unwrap();
            assert_eq!(m.floor_area, l.floor_area, "tile {}", m.tile_id);
            assert_eq!(m.log_fa, l.floor_area.ln_1p());
            assert!(
                (e.nightlight - l.radiance).abs() <= 0.01 * l.radiance,
                "tile {}: {} vs {}",
                e.tile_id,
                e.nightlight,
                l.radiance
            );
        }
    }

    #[test]
    fn build_all_empty_and_duplicates() {
        let mut city = synth_city(SynthParams {
            seed: 1,
            n_districts: 2,
            tiles_per_district: 4,
            confound_fraction: 0.0,
        })
        .unwrap();
        let mut empty = city.bundle.clone();
        empty.tiles.clear();
        assert_eq!(build_all(&empty, 2000.0).unwrap(), TraitSets::default());
        let dup = city.bundle.tiles[0].clone();
        city.bundle.tiles.push(dup);
        assert!(matches!(
            build_all(&city.bundle, 2000.0),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn labels_independent_of_tile_order() {
        let city = synth_city(SynthParams {
            seed: 2,
            n_districts: 2,
            tiles_per_district: 6,
            confound_fraction: 0.25,
        })
        .unwrap();
        let a = build_all(&city.bundle, 2000.0).unwrap();
        let mut shuffled = city.bundle.clone();
        shuffled.tiles.reverse();
        shuffled.tiles.swap(0, 5);
        assert_eq!(build_all(&shuffled, 2000.0).unwrap(), a);
    }

    proptest! {
        #[test]
        fn gravity_coefficient_monotone(d in proptest::array::uniform4(1.0f64..50_000.0), j in 0usize..4, f in 0.05f64..0.95) {
            let before = DistanceVector { d }.gravity_coefficients();
            let mut closer = d;
            closer[j] = (closer[j] * f).max(DISTANCE_FLOOR_M);
            prop_assume!(closer[j] < d[j]);
            let after = DistanceVector { d: closer }.gravity_coefficients();
            prop_assert!(after[j] > before[j]);
        }

        #[test]
        fn multilabel_monotone_in_gamma(d in proptest::array::uniform4(1.0f64..10_000.0), g1 in 1.0f64..10_000.0, g2 in 1.0f64..10_000.0) {
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            let dv = DistanceVector { d };
            let a = radius_multilabel(&dv, lo).unwrap();
            let b = radius_multilabel(&dv, hi).unwrap();
            for k in 0..4 {
                prop_assert!(!a[k] || b[k]);
            }
        }
    }
}
