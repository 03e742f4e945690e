use crate::error::{Error, Result};

/// Web Mercator ground resolution at the equator, zoom 0 (metres per pixel).
pub const EQUATOR_RESOLUTION: f64 = 156_543.033_92;

/// Latitude beyond which Web Mercator is undefined in practice.
pub const MAX_LATITUDE: f64 = 85.05;

pub const MAX_ZOOM: u8 = 22;

/// Metres of ground covered by one tile pixel.
pub fn ground_resolution(latitude: f64, zoom: u8) -> Result<f64> {
    if !latitude.is_finite() || latitude.abs() >= MAX_LATITUDE {
        return Err(Error::invalid(format!("latitude {latitude} outside Web Mercator range (|lat| < {MAX_LATITUDE})")));
    }
    if zoom > MAX_ZOOM {
        return Err(Error::invalid(format!("zoom {zoom} outside 0..={MAX_ZOOM}")));
    }
    Ok(EQUATOR_RESOLUTION * latitude.to_radians().cos() / f64::powi(2.0, zoom as i32))
}

/// Ground span in metres of a tile `pixels` wide.
pub fn tile_extent(latitude: f64, zoom: u8, pixels: u32) -> Result<f64> {
    Ok(ground_resolution(latitude, zoom)? * pixels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(ground_resolution(0.0, 0).unwrap(), EQUATOR_RESOLUTION);
        assert!((ground_resolution(0.0, 20).unwrap() - 0.14930).abs() < 1e-5);
        let camden = ground_resolution(51.54, 20).unwrap();
        assert!((camden - 0.0929).abs() < 1e-4, "{camden}");
        assert!((tile_extent(51.54, 20, 200).unwrap() - 18.6).abs() < 0.05);
    }

    #[test]
    fn rejects_polar_latitudes_and_deep_zoom() {
        assert!(ground_resolution(85.05, 10).is_err());
        assert!(ground_resolution(-89.0, 10).is_err());
        assert!(ground_resolution(10.0, 23).is_err());
    }

    #[test]
    fn decreasing_in_zoom_and_latitude() {
        for z in 0..MAX_ZOOM {
            assert!(ground_resolution(40.0, z + 1).unwrap() < ground_resolution(40.0, z).unwrap());
        }
        let mut prev = f64::INFINITY;
        for lat in (0..85).map(f64::from) {
            let r = ground_resolution(-lat, 18).unwrap();
            assert!(r < prev);
            prev = r;
        }
    }
}
