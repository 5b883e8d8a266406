//! Fréchet distance between the feature distributions of two image sets.

use std::path::{Path, PathBuf};

use stablemorph_core::metrics::{frechet_between, moments_from_features, Moments};

use super::quality::list_images;
use crate::backend::{backend_error, FeatureExtractor};
use crate::error::{Error, Result};
use crate::pipeline::parallel_map;

/// Feature vectors for every image in `dir`, in path order.
pub fn extract_features(dir: &Path, extractor: &dyn FeatureExtractor, jobs: usize) -> Result<Vec<Vec<f64>>> {
    let images = list_images(dir)?;
    if images.len() < 2 {
        return Err(Error::input(format!(
            "{}: need at least 2 images for a covariance estimate, found {}",
            dir.display(),
            images.len()
        )));
    }
    let rows = parallel_map(&images, jobs, |p: &PathBuf| {
        extractor
            .features(p)
            .map_err(|e| backend_error(extractor.name(), format!("{}: {e}", p.display())))
    });
    rows.into_iter().collect()
}

pub fn image_set_moments(dir: &Path, extractor: &dyn FeatureExtractor, jobs: usize) -> Result<Moments> {
    let feats = extract_features(dir, extractor, jobs)?;
    Ok(moments_from_features(&feats)?)
}

pub fn fid_between_dirs(real: &Path, generated: &Path, extractor: &dyn FeatureExtractor, jobs: usize) -> Result<f64> {
    let a = image_set_moments(real, extractor, jobs)?;
    let b = image_set_moments(generated, extractor, jobs)?;
    Ok(frechet_between(&a, &b)?)
}
