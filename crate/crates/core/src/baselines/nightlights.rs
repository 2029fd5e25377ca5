use crate::data::{center_crop, RasterPatch, Source};
use crate::error::{Error, Result};

/// Window side used for each nightlights source.
pub fn nightlights_side(source: Source) -> Result<usize> {
    match source {
        Source::Dmsp => Ok(7),
        Source::Viirs => Ok(14),
        other => Err(Error::InvalidArgument(format!(
            "{} is not a nightlights source",
            other.name()
        ))),
    }
}

/// Center window of a single-band nightlights patch, flattened row-major.
pub fn nightlights_features(patch: &RasterPatch, source: Source) -> Result<Vec<f64>> {
    let side = nightlights_side(source)?;
    if patch.bands != 1 {
        return Err(Error::InvalidArgument(format!(
            "nightlights patch must have one band, found {}",
            patch.bands
        )));
    }
    if patch.height < side || patch.width < side {
        return Err(Error::InvalidArgument(format!(
            "{} patch of {}x{} is smaller than {side}x{side}",
            source.name(),
            patch.height,
            patch.width
        )));
    }
    let crop = center_crop(patch, side)?;
    Ok(crop.pixels.iter().map(|&v| v as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_flatten() {
        let p = RasterPatch::new(Source::Dmsp, 1, 7, 7, vec![1.0; 49]).unwrap();
        assert_eq!(nightlights_features(&p, Source::Dmsp).unwrap(), vec![1.0; 49]);
    }

    #[test]
    fn viirs_center_window() {
        let px: Vec<f32> = (0..400).map(|i| i as f32).collect();
        let p = RasterPatch::new(Source::Viirs, 1, 20, 20, px).unwrap();
        let f = nightlights_features(&p, Source::Viirs).unwrap();
        assert_eq!(f.len(), 196);
        // (20 - 14) / 2 = 3 rows and columns trimmed from the top left
        for r in 0..14 {
            for c in 0..14 {
                assert_eq!(f[r * 14 + c], ((r + 3) * 20 + c + 3) as f64);
            }
        }
    }

    #[test]
    fn rejects_bad_patches() {
        let multi = RasterPatch::new(Source::Synthetic, 2, 7, 7, vec![0.0; 98]).unwrap();
        assert!(nightlights_features(&multi, Source::Dmsp).is_err());
        let small = RasterPatch::new(Source::Viirs, 1, 10, 10, vec![0.0; 100]).unwrap();
        assert!(nightlights_features(&small, Source::Viirs).is_err());
        let one = RasterPatch::new(Source::Dmsp, 1, 7, 7, vec![0.0; 49]).unwrap();
        assert!(nightlights_features(&one, Source::Landsat8).is_err());
    }
}
