//! Data preparation: band rendering, tiling, dataset splits, synthetic
//! scenes, and manifest handling.

use crate::error::{Error, Result};
use crate::raster::{Domain, Raster, RawTile, TileGrid};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Linearly rescale raw integer bands into display range.
///
/// Each value is clamped to `[lo, hi]`, mapped affinely onto `[0, 255]`, and
/// rounded half-up. Rendering an already-rendered uint8 raster with
/// `(lo, hi) = (0, 255)` is the identity.
pub fn render_bands(tile: &RawTile, lo: i64, hi: i64) -> Result<Raster> {
    if lo >= hi {
        return Err(Error::InvalidRange(format!(
            "band render range must satisfy lo < hi, got ({lo}, {hi})"
        )));
    }
    let span = (hi - lo) as f64;
    let rendered = tile.pixels().mapv(|raw| {
        let v = (raw as i64).clamp(lo, hi);
        let scaled = 255.0 * (v - lo) as f64 / span;
        (scaled + 0.5).floor()
    });
    Raster::new(rendered, Domain::Uint8, "rendered bands")
}

/// Cut a raster into a row-major grid of square tiles, padding the bottom and
/// right edges with `pad_value`.
pub fn crop_tiles(image: &Raster, tile_size: usize, pad_value: f64) -> Result<TileGrid> {
    if tile_size == 0 {
        return Err(Error::InvalidArgument("tile_size must be at least 1".into()));
    }
    let (h, w, c) = image.pixels().dim();
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::EmptyInput("cannot tile an empty image".into()));
    }
    // The pad value must live in the same domain as the image, or the padded
    // tiles would not be valid rasters.
    match Raster::new(
        Array3::from_elem((1, 1, 1), pad_value),
        image.domain(),
        image.channel_meaning(),
    ) {
        Ok(_) => {}
        Err(_) => {
            return Err(Error::InvalidRange(format!(
                "pad value {pad_value} is outside the {} domain",
                image.domain().name()
            )))
        }
    }

    let rows = h.div_ceil(tile_size);
    let cols = w.div_ceil(tile_size);
    let mut tiles = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for col in 0..cols {
            let mut tile = Array3::from_elem((tile_size, tile_size, c), pad_value);
            let y0 = r * tile_size;
            let x0 = col * tile_size;
            let ylen = tile_size.min(h - y0);
            let xlen = tile_size.min(w - x0);
            tile.slice_mut(ndarray::s![..ylen, ..xlen, ..])
                .assign(&image.pixels().slice(ndarray::s![y0..y0 + ylen, x0..x0 + xlen, ..]));
            tiles.push(Raster::new(tile, image.domain(), image.channel_meaning())?);
        }
    }
    TileGrid::new(rows, cols, tile_size, h, w, tiles)
}

/// Scene-level train/val/test assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Shuffle `ids` with a seeded generator and split by the given ratios.
///
/// Group sizes are the floors of `n * ratio`; every leftover id goes to
/// train. Ratios must be non-negative and sum to 1 (within 1e-9).
pub fn split_dataset(ids: &[String], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    if ids.is_empty() {
        return Err(Error::EmptyInput("cannot split an empty id list".into()));
    }
    let (rt, rv, rs) = ratios;
    if rt < 0.0 || rv < 0.0 || rs < 0.0 {
        return Err(Error::InvalidRange(format!("split ratios must be non-negative, got {ratios:?}")));
    }
    if ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidRange(format!("split ratios must sum to 1, got {ratios:?}")));
    }

    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates, spelled out so the draw sequence is pinned by this crate
    // rather than by a library's shuffle internals.
    for i in (1..shuffled.len()).rev() {
        let j = rng.random_range(0..=i);
        shuffled.swap(i, j);
    }

    let n = shuffled.len() as f64;
    // The epsilon absorbs dust like 20 * 0.7 = 14.000000000000002.
    let n_val = (n * rv + 1e-9).floor() as usize;
    let n_test = (n * rs + 1e-9).floor() as usize;
    let n_train = shuffled.len() - n_val - n_test;

    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok(DatasetSplit { train: shuffled, val, test, seed })
}

/// A generated scene: image plus aligned region and boundary ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    /// Uint8 RGB image, `(size, size, 3)`.
    pub image: Raster,
    /// Binary parcel-interior mask, `(size, size, 1)`.
    pub region_mask: Raster,
    /// Binary one-pixel parcel-edge mask, `(size, size, 1)`.
    pub boundary_mask: Raster,
}

/// Andrew's monotone chain; returns the hull in counter-clockwise order.
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn point_in_convex(hull: &[(f64, f64)], q: (f64, f64)) -> bool {
    // Hull is counter-clockwise; inside means never strictly to the right of
    // an edge.
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let cross = (b.0 - a.0) * (q.1 - a.1) - (b.1 - a.1) * (q.0 - a.0);
        if cross < -1e-9 {
            return false;
        }
    }
    true
}

/// Generate a deterministic synthetic farmland scene.
///
/// Parcels are random convex polygons placed on a jittered grid with
/// guaranteed separation, textured brighter than the background; parcel edge
/// pixels are darkened so boundaries are visually distinct. The boundary mask
/// is the one-pixel inner morphological gradient of the parcels, so it is a
/// subset of the region mask and every parcel interior is boundary-free.
pub fn generate_synthetic_scene(seed: u64, n_parcels: usize, size: usize) -> Result<SyntheticScene> {
    if n_parcels == 0 {
        return Err(Error::InvalidArgument("a scene needs at least one parcel".into()));
    }
    if size < 32 {
        return Err(Error::InvalidArgument(format!("scene size must be at least 32, got {size}")));
    }
    let grid = (n_parcels as f64).sqrt().ceil() as usize;
    let cell = size as f64 / grid as f64;
    let jitter = 0.06 * cell;
    let r_max = 0.5 * cell - 1.6 - jitter;
    if r_max < 2.0 {
        return Err(Error::InvalidArgument(format!(
            "{n_parcels} parcels do not fit a {size}x{size} scene with clear separation"
        )));
    }
    let r_min = (0.55 * r_max).max(2.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Pick which grid cells host a parcel.
    let mut cells: Vec<(usize, usize)> = (0..grid)
        .flat_map(|r| (0..grid).map(move |c| (r, c)))
        .collect();
    for i in (1..cells.len()).rev() {
        let j = rng.random_range(0..=i);
        cells.swap(i, j);
    }
    cells.truncate(n_parcels);

    let mut labels = Array2::<u32>::zeros((size, size));
    for (k, &(cr, cc)) in cells.iter().enumerate() {
        let cy = cell * (cr as f64 + 0.5) + rng.random_range(-jitter..=jitter);
        let cx = cell * (cc as f64 + 0.5) + rng.random_range(-jitter..=jitter);
        let radius = rng.random_range(r_min..=r_max);

        // Random points on an annulus, plus three fixed spokes so the hull
        // can never degenerate.
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(13);
        for s in 0..3 {
            let a = s as f64 * 2.0 * std::f64::consts::PI / 3.0;
            pts.push((cx + 0.8 * radius * a.cos(), cy + 0.8 * radius * a.sin()));
        }
        for _ in 0..10 {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let r = radius * (0.55 + 0.45 * rng.random_range(0.0f64..1.0).sqrt());
            pts.push((cx + r * a.cos(), cy + r * a.sin()));
        }
        let hull = convex_hull(pts);

        let x_lo = hull.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let x_hi = (hull.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(size - 1);
        let y_lo = hull.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let y_hi = (hull.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(size - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                if point_in_convex(&hull, (x as f64, y as f64)) {
                    labels[(y, x)] = (k + 1) as u32;
                }
            }
        }
    }

    // Masks from labels: edge = parcel pixel with a differing 4-neighbour.
    let mut region = Array2::<f64>::zeros((size, size));
    let mut boundary = Array2::<f64>::zeros((size, size));
    for y in 0..size {
        for x in 0..size {
            let l = labels[(y, x)];
            if l == 0 {
                continue;
            }
            region[(y, x)] = 1.0;
            let mut edge = false;
            if y == 0 || labels[(y - 1, x)] != l {
                edge = true;
            }
            if y + 1 >= size || labels[(y + 1, x)] != l {
                edge = true;
            }
            if x == 0 || labels[(y, x - 1)] != l {
                edge = true;
            }
            if x + 1 >= size || labels[(y, x + 1)] != l {
                edge = true;
            }
            if edge {
                boundary[(y, x)] = 1.0;
            }
        }
    }

    // Texture: dark noisy background, bright per-parcel colour, darkened edges.
    let bg_base: [f64; 3] = [
        rng.random_range(20.0..45.0),
        rng.random_range(20.0..45.0),
        rng.random_range(20.0..45.0),
    ];
    let mut parcel_base: Vec<[f64; 3]> = Vec::with_capacity(n_parcels);
    for _ in 0..n_parcels {
        parcel_base.push([
            rng.random_range(90.0..220.0),
            rng.random_range(90.0..220.0),
            rng.random_range(90.0..220.0),
        ]);
    }
    let mut image = Array3::<f64>::zeros((size, size, 3));
    for y in 0..size {
        for x in 0..size {
            let l = labels[(y, x)] as usize;
            for ch in 0..3 {
                let mut v = if l == 0 {
                    bg_base[ch] + rng.random_range(-10.0..=10.0)
                } else {
                    let mut base = parcel_base[l - 1][ch];
                    if boundary[(y, x)] == 1.0 {
                        base *= 0.45;
                    }
                    base + rng.random_range(-10.0..=10.0)
                };
                v = v.clamp(0.0, 255.0);
                image[(y, x, ch)] = (v + 0.5).floor().min(255.0);
            }
        }
    }

    Ok(SyntheticScene {
        image: Raster::new(image, Domain::Uint8, "rgb")?,
        region_mask: Raster::from_plane(region, Domain::Binary, "region")?,
        boundary_mask: Raster::from_plane(boundary, Domain::Binary, "boundary")?,
    })
}

/// One dataset row: an image and its two ground-truth masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub region: PathBuf,
    pub boundary: PathBuf,
}

/// Read a tab-separated `image<TAB>region<TAB>boundary` manifest. Relative
/// paths are resolved against the manifest's directory; blank lines are
/// skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::DataError(format!("cannot read manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let resolve = |p: &str| {
        let pb = PathBuf::from(p);
        if pb.is_absolute() {
            pb
        } else {
            base.join(pb)
        }
    };
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::DataError(format!(
                "manifest {} line {}: expected 3 tab-separated columns, got {}",
                path.display(),
                lineno + 1,
                cols.len()
            )));
        }
        entries.push(ManifestEntry {
            image: resolve(cols[0]),
            region: resolve(cols[1]),
            boundary: resolve(cols[2]),
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyInput(format!("manifest {} lists no samples", path.display())));
    }
    Ok(entries)
}

/// Write a manifest with the given (already relative or absolute) paths.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&format!(
            "{}\t{}\t{}\n",
            e.image.display(),
            e.region.display(),
            e.boundary.display()
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// An in-memory training sample in network layout.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    /// `(3, h, w)`, values in `[0, 1]`.
    pub image: Array3<f64>,
    /// `(h, w)` in `{0, 1}`.
    pub region: Array2<f64>,
    /// `(h, w)` in `{0, 1}`.
    pub boundary: Array2<f64>,
}

/// Load every manifest row into memory, normalizing images to `[0, 1]` CHW.
pub fn load_samples(entries: &[ManifestEntry]) -> Result<Vec<Sample>> {
    if entries.is_empty() {
        return Err(Error::EmptyInput("no manifest entries to load".into()));
    }
    let mut samples = Vec::with_capacity(entries.len());
    for e in entries {
        let image = crate::imageio::load_rgb8(&e.image)?;
        let region = crate::imageio::load_mask(&e.region)?;
        let boundary = crate::imageio::load_mask(&e.boundary)?;
        let (h, w) = (image.height(), image.width());
        if region.height() != h || region.width() != w || boundary.height() != h || boundary.width() != w {
            return Err(Error::DataError(format!(
                "sample {}: mask sizes do not match the {h}x{w} image",
                e.image.display()
            )));
        }
        let mut chw = Array3::<f64>::zeros((3, h, w));
        for y in 0..h {
            for x in 0..w {
                for ch in 0..3 {
                    chw[(ch, y, x)] = image.pixels()[(y, x, ch)] / 255.0;
                }
            }
        }
        let id = e
            .image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| e.image.display().to_string());
        samples.push(Sample { id, image: chw, region: region.plane()?, boundary: boundary.plane()? });
    }
    Ok(samples)
}
