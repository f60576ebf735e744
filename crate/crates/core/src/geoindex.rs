//! Slippy-map tile geometry, great-circle distance and planar joins.
//!
//! Tiles follow the usual XYZ web-mercator scheme (origin top-left, `y`
//! growing southward). Distances and areas use a mean-radius sphere.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Mean earth radius used for haversine distance and local projections.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;
/// Equatorial circumference used for tile ground size.
pub const EQUATORIAL_CIRCUMFERENCE_M: f64 = 40_075_016.686;
/// Latitude limit of the web-mercator square.
pub const MAX_MERCATOR_LAT: f64 = 85.051_128_779_806_59;
pub const DEFAULT_ZOOM: u8 = 18;
/// Highest zoom for which `2^z` tile indices fit comfortably in `u32`.
pub const MAX_ZOOM: u8 = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !lon.is_finite() || !lat.is_finite() {
            return Err(Error::Domain(format!("non-finite coordinate ({lon}, {lat})")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Domain(format!("longitude {lon} outside [-180, 180]")));
        }
        if lat.abs() >= MAX_MERCATOR_LAT {
            return Err(Error::Domain(format!(
                "latitude {lat} outside the web-mercator band"
            )));
        }
        Ok(GeoPoint { lon, lat })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TileRef {
    pub z: u8,
    pub x: u32,
    pub y: u32,
    pub tile_id: String,
}

impl TileRef {
    /// Builds a tile with the conventional `z_x_y` id.
    pub fn new(z: u8, x: u32, y: u32) -> Result<Self> {
        Self::with_id(z, x, y, format!("{z}_{x}_{y}"))
    }

    pub fn with_id(z: u8, x: u32, y: u32, tile_id: impl Into<String>) -> Result<Self> {
        let t = TileRef {
            z,
            x,
            y,
            tile_id: tile_id.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.z > MAX_ZOOM {
            return Err(Error::Domain(format!("zoom {} exceeds {MAX_ZOOM}", self.z)));
        }
        let n = 1u64 << self.z;
        if u64::from(self.x) >= n || u64::from(self.y) >= n {
            return Err(Error::Domain(format!(
                "tile ({}, {}) out of range at zoom {}",
                self.x, self.y, self.z
            )));
        }
        Ok(())
    }

    /// Geographic bounds `(lon_min, lat_min, lon_max, lat_max)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let n = (1u64 << self.z) as f64;
        let lon_min = self.x as f64 / n * 360.0 - 180.0;
        let lon_max = (self.x as f64 + 1.0) / n * 360.0 - 180.0;
        let lat_max = mercator_lat(self.y as f64 / n);
        let lat_min = mercator_lat((self.y as f64 + 1.0) / n);
        (lon_min, lat_min, lon_max, lat_max)
    }

    /// The tile's footprint as a closed polygon.
    pub fn footprint(&self) -> Polygon {
        let (w, s, e, n) = self.bounds();
        Polygon {
            exterior: vec![
                GeoPoint { lon: w, lat: s },
                GeoPoint { lon: e, lat: s },
                GeoPoint { lon: e, lat: n },
                GeoPoint { lon: w, lat: n },
                GeoPoint { lon: w, lat: s },
            ],
        }
    }
}

/// Latitude of a normalised mercator row coordinate in `[0, 1]`.
fn mercator_lat(v: f64) -> f64 {
    (PI * (1.0 - 2.0 * v)).sinh().atan().to_degrees()
}

/// Web-mercator inverse of the tile's center pixel.
pub fn tile_center(t: &TileRef) -> Result<GeoPoint> {
    t.validate()?;
    let n = (1u64 << t.z) as f64;
    let lon = (t.x as f64 + 0.5) / n * 360.0 - 180.0;
    let lat = mercator_lat((t.y as f64 + 0.5) / n);
    Ok(GeoPoint { lon, lat })
}

/// The tile at zoom `z` that contains `p`.
pub fn tile_containing(p: GeoPoint, z: u8) -> Result<TileRef> {
    if z > MAX_ZOOM {
        return Err(Error::Domain(format!("zoom {z} exceeds {MAX_ZOOM}")));
    }
    let n = (1u64 << z) as f64;
    let xf = (p.lon + 180.0) / 360.0 * n;
    let lat = p.lat.to_radians();
    let yf = (1.0 - (lat.tan() + 1.0 / lat.cos()).ln() / PI) / 2.0 * n;
    let clamp = |v: f64| (v.floor().max(0.0) as u64).min((1u64 << z) - 1) as u32;
    TileRef::new(z, clamp(xf), clamp(yf))
}

/// Haversine distance on the mean-radius sphere.
pub fn geo_distance_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// East-west ground extent of a tile at its center latitude.
pub fn tile_ground_size_m(t: &TileRef) -> Result<f64> {
    let c = tile_center(t)?;
    Ok(EQUATORIAL_CIRCUMFERENCE_M / (1u64 << t.z) as f64 * c.lat.to_radians().cos())
}

/// A single exterior ring. Stored closed (first vertex repeated at the end).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub exterior: Vec<GeoPoint>,
}

impl Polygon {
    /// Normalises the ring to closed form and checks it has at least three
    /// distinct vertices.
    pub fn new(mut ring: Vec<GeoPoint>) -> Result<Self> {
        if let (Some(first), Some(last)) = (ring.first().copied(), ring.last().copied()) {
            if first != last {
                ring.push(first);
            }
        }
        let poly = Polygon { exterior: ring };
        poly.validate()?;
        Ok(poly)
    }

    pub fn validate(&self) -> Result<()> {
        if self.exterior.iter().any(|p| !p.lon.is_finite() || !p.lat.is_finite()) {
            return Err(Error::Domain("polygon has non-finite vertex".into()));
        }
        if self.distinct_vertices().len() < 3 {
            return Err(Error::Domain(
                "polygon needs at least 3 distinct vertices".into(),
            ));
        }
        if self.exterior.first() != self.exterior.last() {
            return Err(Error::Domain("polygon ring is not closed".into()));
        }
        Ok(())
    }

    /// Ring vertices without the closing repeat.
    pub fn open_ring(&self) -> &[GeoPoint] {
        match self.exterior.len() {
            0 => &[],
            n if self.exterior[0] == self.exterior[n - 1] => &self.exterior[..n - 1],
            _ => &self.exterior,
        }
    }

    fn distinct_vertices(&self) -> Vec<GeoPoint> {
        let mut out: Vec<GeoPoint> = Vec::new();
        for p in &self.exterior {
            if !out.contains(p) {
                out.push(*p);
            }
        }
        out
    }

    /// Vertex mean of the open ring.
    pub fn vertex_centroid(&self) -> GeoPoint {
        let ring = self.open_ring();
        let n = ring.len() as f64;
        let (sx, sy) = ring
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.lon, sy + p.lat));
        GeoPoint {
            lon: sx / n,
            lat: sy / n,
        }
    }

    /// Area centroid in lon/lat space (falls back to the vertex mean for
    /// zero-area rings).
    pub fn centroid(&self) -> GeoPoint {
        let ring = self.open_ring();
        let origin = ring[0];
        let mut a2 = 0.0;
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..ring.len() {
            let p = ring[i];
            let q = ring[(i + 1) % ring.len()];
            let (x0, y0) = (p.lon - origin.lon, p.lat - origin.lat);
            let (x1, y1) = (q.lon - origin.lon, q.lat - origin.lat);
            let cross = x0 * y1 - x1 * y0;
            a2 += cross;
            cx += (x0 + x1) * cross;
            cy += (y0 + y1) * cross;
        }
        if a2.abs() < 1e-300 {
            return self.vertex_centroid();
        }
        GeoPoint {
            lon: origin.lon + cx / (3.0 * a2),
            lat: origin.lat + cy / (3.0 * a2),
        }
    }

    /// `(lon_min, lat_min, lon_max, lat_max)`.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.exterior.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p.lon), b.min(p.lat), c.max(p.lon), d.max(p.lat)),
        )
    }
}

/// Even-odd ray casting in lon/lat space; points on an edge or vertex count
/// as inside.
pub fn point_in_polygon(p: GeoPoint, poly: &Polygon) -> bool {
    let ring = poly.open_ring();
    let n = ring.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        if on_segment(p, ring[i], ring[(i + 1) % n]) {
            return true;
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) / (b.lat - a.lat) * (b.lon - a.lon);
            if p.lon < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn on_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> bool {
    let cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    let scale = ((b.lon - a.lon).abs() + (b.lat - a.lat).abs()).max(1e-300);
    if cross.abs() > 1e-12 * scale {
        return false;
    }
    let within = |v: f64, lo: f64, hi: f64| v >= lo.min(hi) - 1e-15 && v <= lo.max(hi) + 1e-15;
    within(p.lon, a.lon, b.lon) && within(p.lat, a.lat, b.lat)
}

/// Azimuthal-equidistant projection of `p` about `center`, in meters.
pub fn aeqd_forward(center: GeoPoint, p: GeoPoint) -> (f64, f64) {
    let (phi0, lam0) = (center.lat.to_radians(), center.lon.to_radians());
    let (phi, lam) = (p.lat.to_radians(), p.lon.to_radians());
    let dlam = lam - lam0;
    // Haversine form for the angular distance; acos loses precision at the
    // sub-kilometre scale of building footprints.
    let c = geo_distance_m(center, p) / EARTH_RADIUS_M;
    let k = if c < 1e-12 { 1.0 } else { c / c.sin() };
    let x = k * phi.cos() * dlam.sin();
    let y = k * (phi0.cos() * phi.sin() - phi0.sin() * phi.cos() * dlam.cos());
    (EARTH_RADIUS_M * x, EARTH_RADIUS_M * y)
}

/// Inverse azimuthal-equidistant projection.
pub fn aeqd_inverse(center: GeoPoint, x: f64, y: f64) -> GeoPoint {
    let (phi0, lam0) = (center.lat.to_radians(), center.lon.to_radians());
    let rho = (x * x + y * y).sqrt();
    if rho < 1e-12 {
        return center;
    }
    let c = rho / EARTH_RADIUS_M;
    let phi = (c.cos() * phi0.sin() + y * c.sin() * phi0.cos() / rho).asin();
    let lam = lam0
        + (x * c.sin()).atan2(rho * phi0.cos() * c.cos() - y * phi0.sin() * c.sin());
    GeoPoint {
        lon: lam.to_degrees(),
        lat: phi.to_degrees(),
    }
}

/// Shoelace area on a local azimuthal-equidistant projection centred on the
/// ring's vertex mean.
pub fn polygon_area_m2(poly: &Polygon) -> Result<f64> {
    poly.validate()?;
    let center = poly.vertex_centroid();
    let pts: Vec<(f64, f64)> = poly
        .open_ring()
        .iter()
        .map(|&p| aeqd_forward(center, p))
        .collect();
    let n = pts.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (x0, y0) = pts[i];
            let (x1, y1) = pts[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum();
    Ok(twice.abs() / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(center: GeoPoint, side_m: f64) -> Polygon {
        let h = side_m / 2.0;
        Polygon::new(vec![
            aeqd_inverse(center, -h, -h),
            aeqd_inverse(center, h, -h),
            aeqd_inverse(center, h, h),
            aeqd_inverse(center, -h, h),
        ])
        .unwrap()
    }

    #[test]
    fn tile_center_examples() {
        let c = tile_center(&TileRef::new(1, 0, 0).unwrap()).unwrap();
        assert!((c.lon + 90.0).abs() < 1e-12);
        // atan(sinh(pi/2)) in degrees
        assert!((c.lat - 66.513_260_443_111_84).abs() < 1e-9);

        let c = tile_center(&TileRef::new(0, 0, 0).unwrap()).unwrap();
        assert_eq!((c.lon, c.lat), (0.0, 0.0));

        let c = tile_center(&TileRef::new(18, 131_072, 131_072).unwrap()).unwrap();
        assert!((c.lon - 0.000_686_645_507_812_5).abs() < 1e-12);
        assert!((c.lat + 0.000_686_645_507_796_063_8).abs() < 1e-12);
    }

    #[test]
    fn tile_out_of_range_is_domain_error() {
        assert!(matches!(TileRef::new(1, 2, 0), Err(Error::Domain(_))));
        assert!(matches!(TileRef::new(40, 0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn haversine_examples() {
        let o = GeoPoint::new(0.0, 0.0).unwrap();
        assert_eq!(geo_distance_m(o, o), 0.0);
        let e = GeoPoint::new(1.0, 0.0).unwrap();
        let n = GeoPoint::new(0.0, 1.0).unwrap();
        // R * pi / 180 on the 6371008.8 m sphere
        let one_degree = 111_195.080_233_532_92;
        assert!((geo_distance_m(o, e) - one_degree).abs() < 1e-6);
        assert!((geo_distance_m(o, n) - one_degree).abs() < 1e-6);
        assert!((geo_distance_m(o, e) - 111_194.9).abs() < 0.5);
    }

    #[test]
    fn ground_size_examples() {
        let eq18 = TileRef::new(18, 131_072, 131_071).unwrap();
        let s = tile_ground_size_m(&eq18).unwrap();
        assert!((s - 152.874).abs() < 0.01, "{s}");
        let eq17 = TileRef::new(17, 65_536, 65_535).unwrap();
        assert!((tile_ground_size_m(&eq17).unwrap() - 305.748).abs() < 0.02);
        let t60 = tile_containing(GeoPoint::new(0.0, 60.0).unwrap(), 18).unwrap();
        let s60 = tile_ground_size_m(&t60).unwrap();
        assert!((s60 - 76.44).abs() < 0.01, "{s60}");
    }

    #[test]
    fn point_in_polygon_examples() {
        let sq = Polygon::new(vec![
            GeoPoint { lon: 0.0, lat: 0.0 },
            GeoPoint { lon: 1.0, lat: 0.0 },
            GeoPoint { lon: 1.0, lat: 1.0 },
            GeoPoint { lon: 0.0, lat: 1.0 },
        ])
        .unwrap();
        assert!(point_in_polygon(GeoPoint { lon: 0.5, lat: 0.5 }, &sq));
        assert!(!point_in_polygon(GeoPoint { lon: 2.0, lat: 0.5 }, &sq));
        assert!(point_in_polygon(GeoPoint { lon: 1.0, lat: 0.3 }, &sq));
        assert!(point_in_polygon(GeoPoint { lon: 0.4, lat: 0.0 }, &sq));
        assert!(point_in_polygon(GeoPoint { lon: 0.0, lat: 0.0 }, &sq));
    }

    /// Winding number by summing signed angles; boundary handled separately.
    fn winding_inside(p: GeoPoint, poly: &Polygon) -> bool {
        let ring = poly.open_ring();
        let mut total = 0.0;
        for i in 0..ring.len() {
            let a = ring[i];
            let b = ring[(i + 1) % ring.len()];
            let (ax, ay) = (a.lon - p.lon, a.lat - p.lat);
            let (bx, by) = (b.lon - p.lon, b.lat - p.lat);
            total += (ax * by - ay * bx).atan2(ax * bx + ay * by);
        }
        total.abs() > PI
    }

    #[test]
    fn ray_casting_agrees_with_winding_on_grid() {
        let poly = Polygon::new(vec![
            GeoPoint { lon: 0.0, lat: 0.0 },
            GeoPoint { lon: 4.0, lat: 0.0 },
            GeoPoint { lon: 4.0, lat: 3.0 },
            GeoPoint { lon: 2.0, lat: 1.0 },
            GeoPoint { lon: 0.0, lat: 3.0 },
        ])
        .unwrap();
        for i in 0..=40 {
            for j in 0..=30 {
                let p = GeoPoint {
                    lon: -0.05 + i as f64 * 0.1037,
                    lat: -0.05 + j as f64 * 0.1013,
                };
                let on_edge = {
                    let r = poly.open_ring();
                    (0..r.len()).any(|k| on_segment(p, r[k], r[(k + 1) % r.len()]))
                };
                let expected = on_edge || winding_inside(p, &poly);
                assert_eq!(point_in_polygon(p, &poly), expected, "{p:?}");
            }
        }
    }

    #[test]
    fn polygon_area_examples() {
        let c = GeoPoint::new(104.9, 11.55).unwrap();
        let sq = square(c, 100.0);
        let a = polygon_area_m2(&sq).unwrap();
        assert!((a - 10_000.0).abs() < 1.0, "{a}");

        let mut rev = sq.exterior.clone();
        rev.reverse();
        let rev = Polygon::new(rev).unwrap();
        assert!((polygon_area_m2(&rev).unwrap() - a).abs() < 1e-9);

        let r = sq.open_ring();
        let tri = Polygon::new(vec![r[0], r[1], r[2]]).unwrap();
        let ta = polygon_area_m2(&tri).unwrap();
        assert!((ta - 5_000.0).abs() < 1.0, "{ta}");
    }

    #[test]
    fn degenerate_polygon_rejected() {
        let p = GeoPoint { lon: 1.0, lat: 1.0 };
        let q = GeoPoint { lon: 2.0, lat: 1.0 };
        assert!(matches!(Polygon::new(vec![p, q, p]), Err(Error::Domain(_))));
        let bad = Polygon {
            exterior: vec![p, q, p],
        };
        assert!(polygon_area_m2(&bad).is_err());
    }

    #[test]
    fn aeqd_round_trip() {
        let c = GeoPoint::new(104.9, 11.55).unwrap();
        for &(x, y) in &[(120.0, -40.0), (-3000.0, 2500.0), (0.5, 0.25)] {
            let p = aeqd_inverse(c, x, y);
            let (x2, y2) = aeqd_forward(c, p);
            assert!((x - x2).abs() < 1e-6 && (y - y2).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn tile_center_round_trip(lon in -179.9f64..179.9, lat in -85.0f64..85.0) {
            let p = GeoPoint::new(lon, lat).unwrap();
            let t = tile_containing(p, DEFAULT_ZOOM).unwrap();
            let c = tile_center(&t).unwrap();
            let (w, s, e, n) = t.bounds();
            let diag = geo_distance_m(GeoPoint { lon: w, lat: s }, GeoPoint { lon: e, lat: n });
            prop_assert!(geo_distance_m(p, c) <= diag);
        }

        #[test]
        fn haversine_metric_properties(
            a in (-170f64..170.0, -80f64..80.0),
            b in (-170f64..170.0, -80f64..80.0),
            c in (-170f64..170.0, -80f64..80.0),
        ) {
            let (a, b, c) = (
                GeoPoint::new(a.0, a.1).unwrap(),
                GeoPoint::new(b.0, b.1).unwrap(),
                GeoPoint::new(c.0, c.1).unwrap(),
            );
            let ab = geo_distance_m(a, b);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - geo_distance_m(b, a)).abs() <= 1e-6 * ab.max(1.0));
            let bound = geo_distance_m(a, c) + geo_distance_m(c, b);
            prop_assert!(ab <= bound * (1.0 + 1e-6) + 1e-9);
        }

        #[test]
        fn area_invariant_under_rotation_and_reversal(
            pts in proptest::collection::vec((-200f64..200.0, -200f64..200.0), 3..8),
            shift in 0usize..8,
        ) {
            let c = GeoPoint::new(30.0, -20.0).unwrap();
            let ring: Vec<GeoPoint> = pts.iter().map(|&(x, y)| aeqd_inverse(c, x, y)).collect();
            let Ok(poly) = Polygon::new(ring.clone()) else { return Ok(()); };
            let a = polygon_area_m2(&poly).unwrap();
            let mut rot = ring.clone();
            rot.rotate_left(shift % ring.len());
            let ra = polygon_area_m2(&Polygon::new(rot).unwrap()).unwrap();
            let mut rev = ring;
            rev.reverse();
            let va = polygon_area_m2(&Polygon::new(rev).unwrap()).unwrap();
            prop_assert!((a - ra).abs() <= 1e-6 * a.max(1.0));
            prop_assert!((a - va).abs() <= 1e-6 * a.max(1.0));
        }
    }
}
