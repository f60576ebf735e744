//! On-disk bundle layout:
//!
//! ```text
//! <root>/manifest.csv      tile_id,z,x,y,district_id,path
//! <root>/pois.geojson      FeatureCollection of Points, property "category"
//! <root>/buildings.geojson FeatureCollection of Polygons (exterior ring only)
//! <root>/nightlight.csv    lon_min,lat_min,lon_max,lat_max,rows,cols header,
//!                          one line of those values, then `rows` lines of
//!                          `cols` radiance values (row 0 = north)
//! <root>/districts.csv     district_id,name,population,poverty_rate,boundary_wkt
//! <root>/tiles/*.png       256x256 8-bit RGB
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};

use super::{
    parse_polygon_wkt, polygon_to_wkt, CityBundle, DistrictRecord, ImageTile, NightlightRaster,
    PoiCategory, PoiRecord,
};
use crate::error::{Error, Result};
use crate::geoindex::{GeoPoint, Polygon, TileRef};
use crate::imagery::TilePixels;

const MANIFEST: &str = "manifest.csv";
const POIS: &str = "pois.geojson";
const BUILDINGS: &str = "buildings.geojson";
const NIGHTLIGHT: &str = "nightlight.csv";
const DISTRICTS: &str = "districts.csv";
const TILES_DIR: &str = "tiles";

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn parse_field<T: std::str::FromStr>(record: &str, field: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::validation(record, field, format!("cannot parse `{raw}`")))
}

struct ManifestRow {
    tile: TileRef,
    district_id: Option<u32>,
    path: String,
}

fn read_manifest(root: &Path) -> Result<Vec<ManifestRow>> {
    let path = root.join(MANIFEST);
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(&path, e))?.clone();
    let expected = ["tile_id", "z", "x", "y", "district_id", "path"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format(format!(
            "{}: expected header {}",
            path.display(),
            expected.join(",")
        )));
    }
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        let tile_id = rec[0].to_string();
        let name = format!("tile {tile_id}");
        if !seen.insert(tile_id.clone()) {
            return Err(Error::validation(name, "tile_id", "duplicate tile id"));
        }
        let z: u8 = parse_field(&name, "z", &rec[1])?;
        let x: u32 = parse_field(&name, "x", &rec[2])?;
        let y: u32 = parse_field(&name, "y", &rec[3])?;
        let tile = TileRef::with_id(z, x, y, tile_id)
            .map_err(|e| Error::validation(name.clone(), "z/x/y", e.to_string()))?;
        let district_id = match rec[4].trim() {
            "" => None,
            s => Some(parse_field(&name, "district_id", s)?),
        };
        rows.push(ManifestRow {
            tile,
            district_id,
            path: rec[5].to_string(),
        });
    }
    Ok(rows)
}

fn read_districts(root: &Path) -> Result<Vec<DistrictRecord>> {
    let path = root.join(DISTRICTS);
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        if rec.len() != 5 {
            return Err(Error::Format(format!(
                "{}: expected 5 columns, got {}",
                path.display(),
                rec.len()
            )));
        }
        let name = format!("district {}", &rec[0]);
        let district_id: u32 = parse_field(&name, "district_id", &rec[0])?;
        let population: u64 = parse_field(&name, "population", &rec[2])?;
        let poverty_rate: f64 = parse_field(&name, "poverty_rate", &rec[3])?;
        let boundary = parse_polygon_wkt(&rec[4])
            .map_err(|e| Error::validation(name.clone(), "boundary_wkt", e.to_string()))?;
        let d = DistrictRecord {
            district_id,
            name: rec[1].to_string(),
            boundary,
            population,
            poverty_rate,
        };
        d.validate()?;
        out.push(d);
    }
    Ok(out)
}

fn read_nightlight(root: &Path) -> Result<NightlightRaster> {
    let path = root.join(NIGHTLIGHT);
    let text = read_to_string(&path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().unwrap_or_default();
    if header.trim() != "lon_min,lat_min,lon_max,lat_max,rows,cols" {
        return Err(Error::Format(format!("{}: bad header", path.display())));
    }
    let meta: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    if meta.len() != 6 {
        return Err(Error::Format(format!("{}: bad raster metadata", path.display())));
    }
    let rec = "nightlight";
    let mut raster = NightlightRaster {
        lon_min: parse_field(rec, "lon_min", meta[0])?,
        lat_min: parse_field(rec, "lat_min", meta[1])?,
        lon_max: parse_field(rec, "lon_max", meta[2])?,
        lat_max: parse_field(rec, "lat_max", meta[3])?,
        rows: parse_field(rec, "rows", meta[4])?,
        cols: parse_field(rec, "cols", meta[5])?,
        values: Vec::new(),
    };
    for line in lines {
        for v in line.split(',') {
            raster.values.push(parse_field(rec, "values", v)?);
        }
    }
    raster.validate()?;
    Ok(raster)
}

fn read_geojson_features(path: &Path) -> Result<Vec<Value>> {
    let text = read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if v.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::Format(format!(
            "{}: not a FeatureCollection",
            path.display()
        )));
    }
    match v.get("features") {
        Some(Value::Array(a)) => Ok(a.clone()),
        _ => Err(Error::Format(format!("{}: missing features", path.display()))),
    }
}

fn coord(v: &Value, record: &str) -> Result<GeoPoint> {
    let pair = v
        .as_array()
        .filter(|a| a.len() >= 2)
        .ok_or_else(|| Error::validation(record, "coordinates", "expected [lon, lat]"))?;
    let lon = pair[0]
        .as_f64()
        .ok_or_else(|| Error::validation(record, "coordinates", "non-numeric lon"))?;
    let lat = pair[1]
        .as_f64()
        .ok_or_else(|| Error::validation(record, "coordinates", "non-numeric lat"))?;
    GeoPoint::new(lon, lat).map_err(|e| Error::validation(record, "coordinates", e.to_string()))
}

fn read_pois(root: &Path) -> Result<Vec<PoiRecord>> {
    let features = read_geojson_features(&root.join(POIS))?;
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let rec = format!("poi {i}");
            let geom = &f["geometry"];
            if geom["type"].as_str() != Some("Point") {
                return Err(Error::validation(rec, "geometry", "expected Point"));
            }
            let location = coord(&geom["coordinates"], &rec)?;
            let category = f["properties"]["category"]
                .as_str()
                .ok_or_else(|| Error::validation(rec.clone(), "category", "missing"))?
                .parse::<PoiCategory>()
                .map_err(|e| Error::validation(rec.clone(), "category", e.to_string()))?;
            Ok(PoiRecord { category, location })
        })
        .collect()
}

fn read_buildings(root: &Path) -> Result<Vec<Polygon>> {
    let features = read_geojson_features(&root.join(BUILDINGS))?;
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let rec = format!("building {i}");
            let geom = &f["geometry"];
            if geom["type"].as_str() != Some("Polygon") {
                return Err(Error::validation(rec, "geometry", "expected Polygon"));
            }
            let ring = geom["coordinates"]
                .get(0)
                .and_then(Value::as_array)
                .ok_or_else(|| Error::validation(rec.clone(), "coordinates", "missing ring"))?;
            let pts = ring
                .iter()
                .map(|c| coord(c, &rec))
                .collect::<Result<Vec<_>>>()?;
            Polygon::new(pts).map_err(|e| Error::validation(rec, "geometry", e.to_string()))
        })
        .collect()
}

/// Reads and validates a bundle directory.
pub fn load_bundle(root: impl AsRef<Path>) -> Result<CityBundle> {
    let root = root.as_ref();
    let manifest = read_manifest(root)?;
    let districts = read_districts(root)?;
    let nightlight = read_nightlight(root)?;
    let pois = read_pois(root)?;
    let buildings = read_buildings(root)?;

    let missing: Vec<&str> = manifest
        .iter()
        .filter(|r| !root.join(&r.path).is_file())
        .map(|r| r.tile.tile_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::validation(
            "manifest",
            "path",
            format!("missing tile images for: {}", missing.join(", ")),
        ));
    }

    let tiles = manifest
        .into_par_iter()
        .map(|row| {
            let pixels = TilePixels::read_png(&root.join(&row.path)).map_err(|e| {
                Error::validation(format!("tile {}", row.tile.tile_id), "path", e.to_string())
            })?;
            Ok(ImageTile {
                tile_id: row.tile.tile_id.clone(),
                tile: row.tile,
                pixels,
                district_id: row.district_id,
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
    Ok(bundle)
}

fn write_string(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Relative PNG path for a tile inside a bundle.
pub(crate) fn tile_path(tile_id: &str) -> String {
    format!("{TILES_DIR}/{tile_id}.png")
}

/// Writes a bundle in the layout read by [`load_bundle`]. Floats are written
/// in shortest round-trip form, so loading reproduces the bundle exactly.
pub fn write_bundle(bundle: &CityBundle, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    bundle.validate()?;
    fs::create_dir_all(root.join(TILES_DIR)).map_err(|e| Error::io(root, e))?;

    let mut manifest = String::from("tile_id,z,x,y,district_id,path\n");
    for t in &bundle.tiles {
        let d = t.district_id.map(|d| d.to_string()).unwrap_or_default();
        manifest.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.tile_id,
            t.tile.z,
            t.tile.x,
            t.tile.y,
            d,
            tile_path(&t.tile_id)
        ));
    }
    write_string(&root.join(MANIFEST), &manifest)?;

    bundle
        .tiles
        .par_iter()
        .map(|t| t.pixels.write_png(&root.join(tile_path(&t.tile_id))))
        .collect::<Result<Vec<()>>>()?;

    let path = root.join(DISTRICTS);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["district_id", "name", "population", "poverty_rate", "boundary_wkt"])
        .map_err(|e| csv_err(&path, e))?;
    for d in &bundle.districts {
        w.write_record([
            d.district_id.to_string(),
            d.name.clone(),
            d.population.to_string(),
            format!("{:?}", d.poverty_rate),
            polygon_to_wkt(&d.boundary),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let nl = &bundle.nightlight;
    let mut text = String::from("lon_min,lat_min,lon_max,lat_max,rows,cols\n");
    text.push_str(&format!(
        "{:?},{:?},{:?},{:?},{},{}\n",
        nl.lon_min, nl.lat_min, nl.lon_max, nl.lat_max, nl.rows, nl.cols
    ));
    for r in 0..nl.rows {
        let row: Vec<String> = (0..nl.cols).map(|c| format!("{:?}", nl.value(r, c))).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_string(&root.join(NIGHTLIGHT), &text)?;

    let pois: Vec<Value> = bundle
        .pois
        .iter()
        .map(|p| {
            json!({
                "type": "Feature",
                "properties": { "category": p.category.as_str() },
                "geometry": { "type": "Point", "coordinates": [p.location.lon, p.location.lat] },
            })
        })
        .collect();
    write_feature_collection(&root.join(POIS), pois)?;

    let buildings: Vec<Value> = bundle
        .buildings
        .iter()
        .map(|b| {
            let ring: Vec<Value> = b.exterior.iter().map(|p| json!([p.lon, p.lat])).collect();
            json!({
                "type": "Feature",
                "properties": {},
                "geometry": { "type": "Polygon", "coordinates": [ring] },
            })
        })
        .collect();
    write_feature_collection(&root.join(BUILDINGS), buildings)
}

fn write_feature_collection(path: &Path, features: Vec<Value>) -> Result<()> {
    let fc = json!({ "type": "FeatureCollection", "features": features });
    let text = serde_json::to_string(&fc).map_err(|e| Error::Format(e.to_string()))?;
    write_string(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_bundle() -> CityBundle {
        let boundary = Polygon::new(vec![
            GeoPoint { lon: 104.9, lat: 11.5 },
            GeoPoint { lon: 105.0, lat: 11.5 },
            GeoPoint { lon: 105.0, lat: 11.6 },
            GeoPoint { lon: 104.9, lat: 11.6 },
        ])
        .unwrap();
        CityBundle {
            tiles: vec![],
            pois: vec![PoiRecord {
                category: PoiCategory::Bank,
                location: GeoPoint { lon: 104.95, lat: 11.55 },
            }],
            buildings: vec![boundary.clone()],
            nightlight: NightlightRaster {
                lon_min: 104.9,
                lat_min: 11.5,
                lon_max: 105.0,
                lat_max: 11.6,
                rows: 2,
                cols: 2,
                values: vec![1.0, 2.5, 0.0, 3.25],
            },
            districts: vec![DistrictRecord {
                district_id: 3,
                name: "Three, with comma".into(),
                boundary,
                population: 1000,
                poverty_rate: 0.1,
            }],
        }
    }

    #[test]
    fn empty_tiles_directory_loads() {
        let dir = tempfile::tempdir().unwrap();
        let b = tiny_bundle();
        write_bundle(&b, dir.path()).unwrap();
        let loaded = load_bundle(dir.path()).unwrap();
        assert_eq!(loaded.tiles.len(), 0);
        assert_eq!(loaded, b);
    }

    #[test]
    fn missing_png_names_tile() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&tiny_bundle(), dir.path()).unwrap();
        fs::write(
            dir.path().join(MANIFEST),
            "tile_id,z,x,y,district_id,path\nghost,18,1,1,3,tiles/ghost.png\n",
        )
        .unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
        assert!(err.to_string().contains("ghost"), "{err}");
    }

    #[test]
    fn duplicate_tile_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&tiny_bundle(), dir.path()).unwrap();
        fs::write(
            dir.path().join(MANIFEST),
            "tile_id,z,x,y,district_id,path\na,18,1,1,3,tiles/a.png\na,18,1,2,3,tiles/a.png\n",
        )
        .unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn unknown_district_reference_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&tiny_bundle(), dir.path()).unwrap();
        let px = TilePixels::from_raw(vec![0; 256 * 256 * 3]).unwrap();
        fs::create_dir_all(dir.path().join("tiles")).unwrap();
        px.write_png(&dir.path().join("tiles/a.png")).unwrap();
        fs::write(
            dir.path().join(MANIFEST),
            "tile_id,z,x,y,district_id,path\na,18,1,1,9,tiles/a.png\n",
        )
        .unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        assert!(err.to_string().contains("district_id"), "{err}");
    }
}
