//! From decoder outputs to parcels: thresholding, mask fusion, tile
//! stitching, and connected-component parcel extraction.

use crate::error::{Error, Result};
use crate::raster::{Domain, Raster, TileGrid};
use ndarray::{Array2, Array3};

/// Decision threshold used when none is configured.
pub const DEFAULT_BINARIZE_THRESHOLD: f64 = 0.5;

/// Smallest connected component kept as a parcel, in pixels.
pub const DEFAULT_MIN_PARCEL_AREA: usize = 16;

/// Threshold a single-channel probability raster into a binary mask
/// (strictly greater than `threshold` becomes foreground).
pub fn binarize(probabilities: &Raster, threshold: f64) -> Result<Raster> {
    if probabilities.domain() != Domain::Probability {
        return Err(Error::InvalidArgument(format!(
            "binarize expects a probability raster, got {}",
            probabilities.domain().name()
        )));
    }
    if probabilities.channels() != 1 {
        return Err(Error::ShapeError(format!(
            "binarize expects a single channel, got {}",
            probabilities.channels()
        )));
    }
    if !threshold.is_finite() || !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidRange(format!("threshold {threshold} is outside [0, 1]")));
    }
    let mask = probabilities.pixels().mapv(|v| if v > threshold { 1.0 } else { 0.0 });
    Raster::new(mask, Domain::Binary, probabilities.channel_meaning())
}

/// Per-pixel exclusive-or of two binary masks (the fused
/// region-versus-boundary map).
pub fn symmetric_difference(region: &Raster, boundary: &Raster) -> Result<Raster> {
    for (name, r) in [("region", region), ("boundary", boundary)] {
        if r.domain() != Domain::Binary {
            return Err(Error::InvalidArgument(format!(
                "{name} mask must be binary, got {}",
                r.domain().name()
            )));
        }
        if r.channels() != 1 {
            return Err(Error::ShapeError(format!(
                "{name} mask must be single-channel, got {} channels",
                r.channels()
            )));
        }
    }
    if region.height() != boundary.height() || region.width() != boundary.width() {
        return Err(Error::ShapeError(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            region.height(),
            region.width(),
            boundary.height(),
            boundary.width()
        )));
    }
    let fused = ndarray::Zip::from(region.pixels())
        .and(boundary.pixels())
        .map_collect(|&a, &b| if a != b { 1.0 } else { 0.0 });
    Raster::new(fused, Domain::Binary, "fused")
}

/// Reassemble a tile grid into one raster, discarding the padding that
/// tiling added along the bottom and right edges. Inverse of tiling for any
/// source size.
pub fn stitch_tiles(grid: &TileGrid) -> Result<Raster> {
    let ts = grid.tile_size();
    let c = grid.tiles()[0].channels();
    let mut full = Array3::<f64>::zeros((grid.rows() * ts, grid.cols() * ts, c));
    for r in 0..grid.rows() {
        for col in 0..grid.cols() {
            full.slice_mut(ndarray::s![r * ts..(r + 1) * ts, col * ts..(col + 1) * ts, ..])
                .assign(grid.tile(r, col).pixels());
        }
    }
    let cropped = full
        .slice(ndarray::s![..grid.source_height(), ..grid.source_width(), ..])
        .to_owned();
    Raster::new(cropped, grid.tiles()[0].domain(), grid.tiles()[0].channel_meaning())
}

/// Parcel instance labels: 0 is background, parcels are numbered 1..=count
/// in scan order of first encounter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParcelMap {
    pub labels: Array2<u32>,
    pub parcel_count: u32,
}

/// Split the region mask into individual parcels.
///
/// Seeds are region pixels that are not boundary pixels (the region-boundary
/// symmetric difference restricted to the region), grouped by 4-connectivity;
/// components smaller than `min_area` pixels are discarded.
pub fn extract_parcels(region: &Raster, boundary: &Raster, min_area: usize) -> Result<ParcelMap> {
    let fused = symmetric_difference(region, boundary)?;
    let (h, w) = (region.height(), region.width());
    let region_plane = region.binary_plane()?;
    let fused_plane = fused.binary_plane()?;

    let mut labels = Array2::<u32>::zeros((h, w));
    let mut next_label = 0u32;
    let mut component: Vec<(usize, usize)> = Vec::new();
    let mut queue: std::collections::VecDeque<(usize, usize)> = std::collections::VecDeque::new();
    let mut visited = Array2::<bool>::from_elem((h, w), false);

    for sy in 0..h {
        for sx in 0..w {
            let interior = region_plane[(sy, sx)] == 1 && fused_plane[(sy, sx)] == 1;
            if !interior || visited[(sy, sx)] {
                continue;
            }
            component.clear();
            queue.clear();
            visited[(sy, sx)] = true;
            queue.push_back((sy, sx));
            while let Some((y, x)) = queue.pop_front() {
                component.push((y, x));
                let mut push = |ny: usize, nx: usize, visited: &mut Array2<bool>| {
                    let seed = region_plane[(ny, nx)] == 1 && fused_plane[(ny, nx)] == 1;
                    if seed && !visited[(ny, nx)] {
                        visited[(ny, nx)] = true;
                        queue.push_back((ny, nx));
                    }
                };
                if y > 0 {
                    push(y - 1, x, &mut visited);
                }
                if y + 1 < h {
                    push(y + 1, x, &mut visited);
                }
                if x > 0 {
                    push(y, x - 1, &mut visited);
                }
                if x + 1 < w {
                    push(y, x + 1, &mut visited);
                }
            }
            if component.len() < min_area {
                continue;
            }
            next_label += 1;
            for &(y, x) in &component {
                labels[(y, x)] = next_label;
            }
        }
    }
    Ok(ParcelMap { labels, parcel_count: next_label })
}
