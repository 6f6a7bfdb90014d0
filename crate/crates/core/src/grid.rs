//! Gridify: packs up to `d²` retrieved images into one `h×h` RGB composite.
//!
//! Cells are filled row-major in retrieval order, cell `k` (1-based) carries a
//! numeric badge, and cells past the last image stay black.

use std::io::Cursor;
use std::path::PathBuf;

use image::imageops::{self, FilterType};
use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on the fraction of a cell a badge may cover.
pub const MAX_BADGE_FRACTION: f64 = 0.12;

const GLYPH_W: u32 = 5;
const GLYPH_H: u32 = 7;

// 5×7 digit raster, one row per byte, bit 4 is the leftmost column.
const DIGITS: [[u8; 7]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
];

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid side must be positive")]
    ZeroSide,
    #[error("resolution {h} is not divisible by grid side {d}")]
    Indivisible { d: u32, h: u32 },
    #[error("{count} images do not fit a {d}x{d} grid")]
    TooManyImages { count: usize, d: u32 },
    #[error("cannot decode image {image_id}: {message}")]
    Undecodable { image_id: String, message: String },
    #[error("cell {k} out of range 1..={max}")]
    CellOutOfRange { k: usize, max: usize },
    #[error("png encoding: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BadgeCorner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStyle {
    pub position: BadgeCorner,
    /// Glyph height in pixels; 0 picks a size from the cell width.
    pub font_px: u32,
    pub fg: [u8; 3],
    pub bg: [u8; 3],
}

impl Default for LabelStyle {
    fn default() -> Self {
        Self {
            position: BadgeCorner::TopLeft,
            font_px: 0,
            fg: [255, 255, 255],
            bg: [0, 0, 0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: u32,
    pub h: u32,
    #[serde(default)]
    pub label: LabelStyle,
}

impl GridSpec {
    pub fn new(d: u32, h: u32) -> Result<Self, GridError> {
        let spec = Self {
            d,
            h,
            label: LabelStyle::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 8×8 cells at 896 px.
    pub fn paligemma() -> Self {
        Self::new(8, 896).expect("valid preset")
    }

    /// 7×7 cells at 980 px; 980 is not divisible by 8.
    pub fn minicpm() -> Self {
        Self::new(7, 980).expect("valid preset")
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.d == 0 {
            return Err(GridError::ZeroSide);
        }
        if self.h == 0 || !self.h.is_multiple_of(self.d) {
            return Err(GridError::Indivisible { d: self.d, h: self.h });
        }
        Ok(())
    }

    pub fn cell(&self) -> u32 {
        self.h / self.d
    }

    pub fn capacity(&self) -> usize {
        (self.d * self.d) as usize
    }

    /// Top-left pixel of cell `k` (1-based, row-major).
    pub fn cell_origin(&self, k: usize) -> (u32, u32) {
        let i = (k - 1) as u32;
        ((i % self.d) * self.cell(), (i / self.d) * self.cell())
    }

    fn glyph_scale(&self) -> u32 {
        if self.label.font_px > 0 {
            (self.label.font_px / GLYPH_H).max(1)
        } else {
            (self.cell() / 56).max(1)
        }
    }

    /// Badge rectangle `(x, y, w, h)` for cell `k`, relative to the cell origin,
    /// or `None` if the cell is too small to hold a readable badge.
    pub fn badge_rect(&self, k: usize) -> Option<(u32, u32, u32, u32)> {
        let s = self.glyph_scale();
        let digits = k.to_string().len() as u32;
        let pad = s;
        let w = pad + digits * (GLYPH_W * s + s);
        let h = 2 * pad + GLYPH_H * s;
        let cell = self.cell();
        let area = f64::from(cell) * f64::from(cell);
        if w > cell || h > cell || f64::from(w * h) > MAX_BADGE_FRACTION * area {
            return None;
        }
        let (x, y) = match self.label.position {
            BadgeCorner::TopLeft => (0, 0),
            BadgeCorner::TopRight => (cell - w, 0),
            BadgeCorner::BottomLeft => (0, cell - h),
            BadgeCorner::BottomRight => (cell - w, cell - h),
        };
        Some((x, y, w, h))
    }
}

/// Where a grid source image comes from.
#[derive(Debug, Clone)]
pub enum SourcePixels {
    Decoded(RgbImage),
    Encoded(Vec<u8>),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct GridSource {
    pub image_id: String,
    pub pixels: SourcePixels,
}

impl GridSource {
    pub fn decoded(image_id: impl Into<String>, img: RgbImage) -> Self {
        Self {
            image_id: image_id.into(),
            pixels: SourcePixels::Decoded(img),
        }
    }

    fn decode(&self) -> Result<RgbImage, GridError> {
        let err = |message: String| GridError::Undecodable {
            image_id: self.image_id.clone(),
            message,
        };
        let img = match &self.pixels {
            SourcePixels::Decoded(img) => return Ok(img.clone()),
            SourcePixels::Encoded(bytes) => image::load_from_memory(bytes).map_err(|e| err(e.to_string()))?,
            SourcePixels::File(path) => image::open(path).map_err(|e| err(e.to_string()))?,
        };
        if img.width() == 0 || img.height() == 0 {
            return Err(err("empty image".into()));
        }
        Ok(img.to_rgb8())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub k: usize,
    /// `None` marks a padding cell.
    pub image_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridImage {
    pub spec: GridSpec,
    pub pixels: RgbImage,
    pub cell_map: Vec<CellEntry>,
}

/// Sidecar written next to a composite PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub query_id: String,
    pub d: u32,
    pub h: u32,
    pub cells: Vec<CellEntry>,
}

impl GridImage {
    pub fn filled(&self) -> usize {
        self.cell_map.iter().filter(|c| c.image_id.is_some()).count()
    }

    pub fn to_png(&self) -> Result<Vec<u8>, GridError> {
        let mut out = Cursor::new(Vec::new());
        self.pixels
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|e| GridError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn sidecar(&self, query_id: &str) -> GridSidecar {
        GridSidecar {
            query_id: query_id.to_string(),
            d: self.spec.d,
            h: self.spec.h,
            cells: self.cell_map.clone(),
        }
    }
}

/// Resizes a source to the cell size with bilinear filtering.
pub fn resize_to_cell(img: &RgbImage, cell: u32) -> RgbImage {
    if img.width() == cell && img.height() == cell {
        return img.clone();
    }
    imageops::resize(img, cell, cell, FilterType::Triangle)
}

pub fn gridify(images: &[GridSource], spec: &GridSpec) -> Result<GridImage, GridError> {
    spec.validate()?;
    if images.len() > spec.capacity() {
        return Err(GridError::TooManyImages {
            count: images.len(),
            d: spec.d,
        });
    }
    let cell = spec.cell();
    let mut pixels = RgbImage::new(spec.h, spec.h);
    let mut cell_map = Vec::with_capacity(spec.capacity());
    for (i, src) in images.iter().enumerate() {
        let k = i + 1;
        let tile = resize_to_cell(&src.decode()?, cell);
        let (x0, y0) = spec.cell_origin(k);
        imageops::replace(&mut pixels, &tile, i64::from(x0), i64::from(y0));
        draw_badge(&mut pixels, spec, k);
        cell_map.push(CellEntry {
            k,
            image_id: Some(src.image_id.clone()),
        });
    }
    for k in images.len() + 1..=spec.capacity() {
        cell_map.push(CellEntry { k, image_id: None });
    }
    Ok(GridImage {
        spec: *spec,
        pixels,
        cell_map,
    })
}

fn draw_badge(pixels: &mut RgbImage, spec: &GridSpec, k: usize) {
    let Some((bx, by, bw, bh)) = spec.badge_rect(k) else {
        return;
    };
    let (x0, y0) = spec.cell_origin(k);
    let (ox, oy) = (x0 + bx, y0 + by);
    let bg = Rgb(spec.label.bg);
    let fg = Rgb(spec.label.fg);
    for y in 0..bh {
        for x in 0..bw {
            pixels.put_pixel(ox + x, oy + y, bg);
        }
    }
    let s = spec.glyph_scale();
    for (n, ch) in k.to_string().bytes().enumerate() {
        let glyph = &DIGITS[(ch - b'0') as usize];
        let gx = ox + s + n as u32 * (GLYPH_W * s + s);
        let gy = oy + s;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits & (0x10 >> col) == 0 {
                    continue;
                }
                for dy in 0..s {
                    for dx in 0..s {
                        pixels.put_pixel(gx + col * s + dx, gy + row as u32 * s + dy, fg);
                    }
                }
            }
        }
    }
}

/// Copies out the pixel block of cell `k` (1-based).
pub fn extract_cell(grid: &GridImage, k: usize) -> Result<RgbImage, GridError> {
    let max = grid.spec.capacity();
    if k == 0 || k > max {
        return Err(GridError::CellOutOfRange { k, max });
    }
    let (x, y) = grid.spec.cell_origin(k);
    let c = grid.spec.cell();
    Ok(imageops::crop_imm(&grid.pixels, x, y, c, c).to_image())
}

/// True when `(x, y)` (cell-relative) lies inside cell `k`'s badge.
pub fn in_badge(spec: &GridSpec, k: usize, x: u32, y: u32) -> bool {
    spec.badge_rect(k)
        .is_some_and(|(bx, by, bw, bh)| x >= bx && x < bx + bw && y >= by && y < by + bh)
}
