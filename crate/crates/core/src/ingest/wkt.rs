use crate::error::{Error, Result};
use crate::geoindex::{GeoPoint, Polygon};

/// `POLYGON((lon lat, ...))` with shortest round-trip float formatting.
pub fn polygon_to_wkt(poly: &Polygon) -> String {
    let coords: Vec<String> = poly
        .exterior
        .iter()
        .map(|p| format!("{:?} {:?}", p.lon, p.lat))
        .collect();
    format!("POLYGON(({}))", coords.join(", "))
}

/// Parses the exterior ring of a WKT polygon. Interior rings are rejected.
pub fn parse_polygon_wkt(s: &str) -> Result<Polygon> {
    let t = s.trim();
    let upper = t.to_ascii_uppercase();
    let rest = upper
        .strip_prefix("POLYGON")
        .ok_or_else(|| Error::Format(format!("not a POLYGON: `{s}`")))?;
    let offset = t.len() - rest.len();
    let body = t[offset..].trim();
    let inner = body
        .strip_prefix("((")
        .and_then(|b| b.strip_suffix("))"))
        .ok_or_else(|| Error::Format(format!("malformed POLYGON body: `{s}`")))?;
    if inner.contains('(') || inner.contains(')') {
        return Err(Error::Format(
            "polygons with interior rings are not supported".into(),
        ));
    }
    let mut ring = Vec::new();
    for pair in inner.split(',') {
        let mut it = pair.split_whitespace();
        let (Some(x), Some(y), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Format(format!("bad coordinate `{pair}`")));
        };
        let lon: f64 = x
            .parse()
            .map_err(|_| Error::Format(format!("bad longitude `{x}`")))?;
        let lat: f64 = y
            .parse()
            .map_err(|_| Error::Format(format!("bad latitude `{y}`")))?;
        ring.push(GeoPoint { lon, lat });
    }
    Polygon::new(ring)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_exact() {
        let poly = Polygon::new(vec![
            GeoPoint { lon: 104.900_000_000_000_01, lat: 11.55 },
            GeoPoint { lon: 104.91, lat: 11.550_000_3 },
            GeoPoint { lon: 104.91, lat: 11.56 },
        ])
        .unwrap();
        let s = polygon_to_wkt(&poly);
        assert_eq!(parse_polygon_wkt(&s).unwrap(), poly);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_polygon_wkt("POINT(1 2)").is_err());
        assert!(parse_polygon_wkt("POLYGON((0 0, 1 0, 1 1, 0 0), (0.1 0.1, 0.2 0.1, 0.2 0.2, 0.1 0.1))").is_err());
        assert!(parse_polygon_wkt("POLYGON((0 0, 1 x, 1 1))").is_err());
    }
}
