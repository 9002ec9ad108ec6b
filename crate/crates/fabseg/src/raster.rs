//! Core raster types: raw sensor tiles, validated rasters, and tile grids.

use crate::error::{Error, Result};
use ndarray::{Array2, Array3};

/// Value domain of a [`Raster`], checked at construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    /// Integers in `[0, 255]`.
    Uint8,
    /// Exactly `{0, 1}`.
    Binary,
    /// Any finite real (pre-activation scores).
    Logits,
    /// Reals in `[0, 1]`.
    Probability,
}

impl Domain {
    fn admits(self, v: f64) -> bool {
        match self {
            Domain::Uint8 => v.is_finite() && v >= 0.0 && v <= 255.0 && v.fract() == 0.0,
            Domain::Binary => v == 0.0 || v == 1.0,
            Domain::Logits => v.is_finite(),
            Domain::Probability => v.is_finite() && (0.0..=1.0).contains(&v),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Uint8 => "uint8",
            Domain::Binary => "binary",
            Domain::Logits => "logits",
            Domain::Probability => "probability",
        }
    }
}

/// Raw multi-band pixels straight off a data source, before rendering.
/// Band values are unsigned integers of whatever bit depth the source used.
#[derive(Clone, Debug)]
pub struct RawTile {
    pixels: Array3<u32>,
    geo_id: String,
}

impl RawTile {
    /// Errors with `EmptyInput` if any dimension is zero.
    pub fn new(pixels: Array3<u32>, geo_id: impl Into<String>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::EmptyInput(format!(
                "raw tile dimensions must all be at least 1, got {h}x{w}x{c}"
            )));
        }
        Ok(RawTile { pixels, geo_id: geo_id.into() })
    }

    pub fn pixels(&self) -> &Array3<u32> {
        &self.pixels
    }

    pub fn geo_id(&self) -> &str {
        &self.geo_id
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().2
    }
}

/// An `(h, w, c)` grid of reals with a declared, validated value domain.
#[derive(Clone, Debug)]
pub struct Raster {
    pixels: Array3<f64>,
    domain: Domain,
    channel_meaning: String,
}

impl Raster {
    /// Errors with `InvalidRange` if any pixel falls outside `domain`.
    pub fn new(pixels: Array3<f64>, domain: Domain, channel_meaning: impl Into<String>) -> Result<Self> {
        for &v in pixels.iter() {
            if !domain.admits(v) {
                return Err(Error::InvalidRange(format!(
                    "pixel value {v} is outside the {} domain",
                    domain.name()
                )));
            }
        }
        Ok(Raster { pixels, domain, channel_meaning: channel_meaning.into() })
    }

    /// Single-channel raster from a plane.
    pub fn from_plane(plane: Array2<f64>, domain: Domain, channel_meaning: impl Into<String>) -> Result<Self> {
        let (h, w) = plane.dim();
        let pixels = plane.into_shape_with_order((h, w, 1)).expect("plane reshape");
        Raster::new(pixels, domain, channel_meaning)
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn channel_meaning(&self) -> &str {
        &self.channel_meaning
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().2
    }

    /// The single plane of a one-channel raster.
    pub fn plane(&self) -> Result<Array2<f64>> {
        if self.channels() != 1 {
            return Err(Error::ShapeError(format!(
                "expected a single-channel raster, got {} channels",
                self.channels()
            )));
        }
        let (h, w) = (self.height(), self.width());
        Ok(self
            .pixels
            .clone()
            .into_shape_with_order((h, w))
            .expect("single-channel reshape"))
    }

    /// The plane of a one-channel binary raster as `u8` in `{0, 1}`.
    pub fn binary_plane(&self) -> Result<Array2<u8>> {
        if self.domain != Domain::Binary {
            return Err(Error::InvalidArgument(format!(
                "expected a binary raster, got domain {}",
                self.domain.name()
            )));
        }
        Ok(self.plane()?.mapv(|v| v as u8))
    }
}

/// Row-major rectangular arrangement of equally sized square tiles covering a
/// source raster (the last row/column carry padding).
#[derive(Clone, Debug)]
pub struct TileGrid {
    rows: usize,
    cols: usize,
    tile_size: usize,
    source_height: usize,
    source_width: usize,
    tiles: Vec<Raster>,
}

impl TileGrid {
    /// Errors with `InvalidGrid` if the tile count, tile shapes, domains, or
    /// grid arithmetic are inconsistent.
    pub fn new(
        rows: usize,
        cols: usize,
        tile_size: usize,
        source_height: usize,
        source_width: usize,
        tiles: Vec<Raster>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || tile_size == 0 {
            return Err(Error::InvalidGrid("grid dimensions must all be at least 1".into()));
        }
        if tiles.len() != rows * cols {
            return Err(Error::InvalidGrid(format!(
                "expected {} tiles for a {rows}x{cols} grid, got {}",
                rows * cols,
                tiles.len()
            )));
        }
        if rows != source_height.div_ceil(tile_size) || cols != source_width.div_ceil(tile_size) {
            return Err(Error::InvalidGrid(format!(
                "a {source_height}x{source_width} source with tile size {tile_size} needs a {}x{} grid, got {rows}x{cols}",
                source_height.div_ceil(tile_size),
                source_width.div_ceil(tile_size)
            )));
        }
        let domain = tiles[0].domain();
        let channels = tiles[0].channels();
        for (i, t) in tiles.iter().enumerate() {
            if t.height() != tile_size || t.width() != tile_size {
                return Err(Error::InvalidGrid(format!(
                    "tile {i} is {}x{}, expected {tile_size}x{tile_size}",
                    t.height(),
                    t.width()
                )));
            }
            if t.domain() != domain || t.channels() != channels {
                return Err(Error::InvalidGrid(format!(
                    "tile {i} domain/channels differ from the first tile"
                )));
            }
        }
        Ok(TileGrid { rows, cols, tile_size, source_height, source_width, tiles })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn tile_size(&self) -> usize {
        self.tile_size
    }

    pub fn source_height(&self) -> usize {
        self.source_height
    }

    pub fn source_width(&self) -> usize {
        self.source_width
    }

    pub fn tiles(&self) -> &[Raster] {
        &self.tiles
    }

    pub fn tile(&self, row: usize, col: usize) -> &Raster {
        &self.tiles[row * self.cols + col]
    }

    /// Rebuild a grid around transformed tiles (e.g. predictions), keeping
    /// this grid's geometry. The replacement tiles must still be consistent.
    pub fn with_tiles(&self, tiles: Vec<Raster>) -> Result<TileGrid> {
        TileGrid::new(self.rows, self.cols, self.tile_size, self.source_height, self.source_width, tiles)
    }
}
