//! Slippy-map tile math, great-circle distance and footprint areas.

use povmap::geoindex::{
    geo_distance_m, point_in_polygon, polygon_area_m2, tile_center, tile_containing,
    tile_ground_size_m, GeoPoint, TileRef, DEFAULT_ZOOM,
};

fn main() -> povmap::Result<()> {
    let phnom_penh = GeoPoint::new(104.9160, 11.5564)?;
    let tile = tile_containing(phnom_penh, DEFAULT_ZOOM)?;
    let c = tile_center(&tile)?;
    println!("z{} tile ({}, {}) centered at {:.6}, {:.6}", tile.z, tile.x, tile.y, c.lon, c.lat);
    println!("ground size {:.2} m, footprint {:.0} m²", tile_ground_size_m(&tile)?, polygon_area_m2(&tile.footprint())?);
    println!("center inside footprint: {}", point_in_polygon(c, &tile.footprint()));

    for z in [0u8, 1, 18] {
        let t = TileRef::new(z, (1u32 << z) / 2, (1u32 << z) / 2)?;
        let c = tile_center(&t)?;
        println!("z{z:<2} tile {:>6},{:<6} -> lon {:>10.6} lat {:>10.6}", t.x, t.y, c.lon, c.lat);
    }

    let airport = GeoPoint::new(104.8441, 11.5466)?;
    println!("city center to airport: {:.1} m", geo_distance_m(phnom_penh, airport));
    Ok(())
}
