//! Scene rasterization: the binary occupancy tensor fed to the Q-network and
//! color renders for humans.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::EnvState;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::geometry::Rect;
use crate::scene::Scene;

pub const CHANNELS: usize = 6;
pub const CH_WALLS: usize = 0;
pub const CH_DOORS: usize = 1;
pub const CH_WINDOWS: usize = 2;
pub const CH_FURNITURE: usize = 3;
pub const CH_MOVABLE: usize = 4;
pub const CH_GOAL: usize = 5;

/// Dense `channels x height x width` image, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.height + row) * self.width + col]
    }

    pub fn pack(&self) -> PackedImage {
        let mut bits = vec![0u64; self.data.len().div_ceil(64)];
        for (i, &v) in self.data.iter().enumerate() {
            if v != 0.0 {
                bits[i / 64] |= 1 << (i % 64);
            }
        }
        PackedImage { channels: self.channels, height: self.height, width: self.width, bits }
    }
}

/// Bit-packed binary image; replay memory stores observations this way.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PackedImage {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    bits: Vec<u64>,
}

impl PackedImage {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes 0/1 values into `out` (length `len()`).
    pub fn unpack_into<T: From<u8>>(&self, out: &mut [T]) {
        assert_eq!(out.len(), self.len());
        for (i, o) in out.iter_mut().enumerate() {
            *o = T::from(((self.bits[i / 64] >> (i % 64)) & 1) as u8);
        }
    }

    pub fn unpack(&self) -> ImageTensor {
        let mut data = vec![0.0f32; self.len()];
        self.unpack_into(&mut data);
        ImageTensor { channels: self.channels, height: self.height, width: self.width, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 132x132 input, the architecture with a 7200-wide flatten.
    Paper,
    /// 68x68 input for CPU-scale training.
    Desk,
}

impl Preset {
    pub fn resolution(self) -> (usize, usize) {
        match self {
            Preset::Paper => (132, 132),
            Preset::Desk => (68, 68),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(format!("unknown preset `{s}` (paper|desk)")),
        }
    }
}

/// Maps scene coordinates onto a pixel grid, preserving aspect ratio and
/// centering the scene bounds with zero padding. Row 0 is the top (max y).
#[derive(Debug, Clone, Copy)]
pub struct PixelMap {
    min_x: f64,
    max_y: f64,
    scale: f64,
    off_x: f64,
    off_y: f64,
    pub height: usize,
    pub width: usize,
}

impl PixelMap {
    pub fn new(bounds: &Rect, height: usize, width: usize) -> Self {
        let scale = (width as f64 / bounds.width()).min(height as f64 / bounds.height());
        let off_x = 0.5 * (width as f64 - bounds.width() * scale);
        let off_y = 0.5 * (height as f64 - bounds.height() * scale);
        Self { min_x: bounds.min_x(), max_y: bounds.max_y(), scale, off_x, off_y, height, width }
    }

    pub fn for_scene(scene: &Scene, height: usize, width: usize) -> Self {
        Self::new(&scene.bounds(), height, width)
    }

    /// Scene units per pixel.
    pub fn units_per_pixel(&self) -> f64 {
        1.0 / self.scale
    }

    fn col_center_x(&self, col: usize) -> f64 {
        self.min_x + (col as f64 + 0.5 - self.off_x) / self.scale
    }

    fn row_center_y(&self, row: usize) -> f64 {
        self.max_y - (row as f64 + 0.5 - self.off_y) / self.scale
    }

    /// Half-open column and row ranges whose pixel centers fall in `r`.
    pub fn covered(&self, r: &Rect) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let cols = span(self.width, |c| {
            let x = self.col_center_x(c);
            x >= r.min_x() && x <= r.max_x()
        });
        let rows = span(self.height, |row| {
            let y = self.row_center_y(row);
            y >= r.min_y() && y <= r.max_y()
        });
        (cols, rows)
    }
}

/// Contiguous run of indices satisfying `inside` (centers are monotone, so
/// the hits form one interval).
fn span(n: usize, inside: impl Fn(usize) -> bool) -> std::ops::Range<usize> {
    let mut start = None;
    let mut end = 0;
    for i in 0..n {
        if inside(i) {
            start.get_or_insert(i);
            end = i + 1;
        } else if start.is_some() {
            break;
        }
    }
    match start {
        Some(s) => s..end,
        None => 0..0,
    }
}

fn fill(img: &mut ImageTensor, channel: usize, map: &PixelMap, r: &Rect) {
    let (cols, rows) = map.covered(r);
    let plane = channel * img.height * img.width;
    for row in rows {
        let base = plane + row * img.width;
        img.data[base + cols.start..base + cols.end].fill(1.0);
    }
}

/// Six binary channels: walls, doors, windows, static furniture, movable,
/// goal. A pixel is set iff its center lies inside the element.
pub fn rasterize(state: &EnvState, height: usize, width: usize) -> ImageTensor {
    let scene = &state.scene;
    let map = PixelMap::for_scene(scene, height, width);
    let mut img = ImageTensor::zeros(CHANNELS, height, width);
    for e in &scene.walls {
        fill(&mut img, CH_WALLS, &map, &e.rect);
    }
    for e in &scene.doors {
        fill(&mut img, CH_DOORS, &map, &e.rect);
    }
    for e in &scene.windows {
        fill(&mut img, CH_WINDOWS, &map, &e.rect);
    }
    for e in &scene.static_furniture {
        fill(&mut img, CH_FURNITURE, &map, &e.rect);
    }
    fill(&mut img, CH_MOVABLE, &map, &state.movable_rect());
    fill(&mut img, CH_GOAL, &map, &scene.goal);
    img
}

pub type Rgb = [u8; 3];

pub const BACKGROUND: Rgb = [255, 255, 255];
pub const WALL: Rgb = [0, 0, 0];
pub const DOOR: Rgb = [0, 160, 0];
pub const WINDOW: Rgb = [0, 90, 255];
pub const MOVABLE: Rgb = [220, 0, 0];
pub const GOAL: Rgb = [255, 200, 200];

pub fn furniture_color(category: &str) -> Rgb {
    match category {
        "cabinet" => [240, 200, 0],
        "nightstand" => [255, 150, 40],
        "wardrobe" => [140, 90, 40],
        "desk" => [120, 70, 160],
        "bookcase" => [90, 60, 30],
        "chair" => [200, 120, 200],
        "toilet" => [0, 180, 180],
        "sink" => [100, 200, 230],
        "shower" => [60, 140, 200],
        "cook_top" => [80, 80, 80],
        "fridge" => [180, 180, 200],
        "tv_stand" => [60, 60, 120],
        "coffee_table" => [170, 130, 90],
        "sideboard" => [150, 110, 70],
        "tatami" => [180, 200, 120],
        "plant" => [40, 150, 60],
        _ => [150, 150, 150],
    }
}

/// RGB8 render, `width x height` row-major. Painted back to front: goal,
/// furniture, openings, walls, movable.
pub fn render_rgb(state: &EnvState, height: usize, width: usize) -> Vec<u8> {
    let scene = &state.scene;
    let map = PixelMap::for_scene(scene, height, width);
    let mut buf = BACKGROUND.repeat(width * height);
    let mut paint = |r: &Rect, color: Rgb| {
        let (cols, rows) = map.covered(r);
        for row in rows {
            for col in cols.clone() {
                let i = 3 * (row * width + col);
                buf[i..i + 3].copy_from_slice(&color);
            }
        }
    };
    paint(&scene.goal, GOAL);
    for e in &scene.static_furniture {
        paint(&e.rect, furniture_color(&e.category));
    }
    for e in &scene.doors {
        paint(&e.rect, DOOR);
    }
    for e in &scene.windows {
        paint(&e.rect, WINDOW);
    }
    for e in &scene.walls {
        paint(&e.rect, WALL);
    }
    paint(&state.movable_rect(), MOVABLE);
    buf
}

/// Output size for a render whose longer side is `max_side` pixels.
pub fn render_size(scene: &Scene, max_side: usize) -> (usize, usize) {
    let b = scene.bounds();
    let aspect = b.width() / b.height();
    if aspect >= 1.0 {
        (((max_side as f64) / aspect).round().max(1.0) as usize, max_side)
    } else {
        (max_side, ((max_side as f64) * aspect).round().max(1.0) as usize)
    }
}

pub fn encode_png(rgb: &[u8], height: usize, width: usize) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Shape(format!("png header: {e}")))?;
        w.write_image_data(rgb).map_err(|e| Error::Shape(format!("png data: {e}")))?;
    }
    Ok(out)
}

/// Writes a PNG whose longer side is `max_side` pixels.
pub fn render_png(state: &EnvState, path: &Path, max_side: usize) -> Result<()> {
    let (h, w) = render_size(&state.scene, max_side);
    let rgb = render_rgb(state, h, w);
    fsutil::atomic_write(path, &encode_png(&rgb, h, w)?)
}
