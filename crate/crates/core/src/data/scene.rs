//! Procedural shape scenes and their captions.
//!
//! The image is split into a 2×2 grid of cells. Each shape occupies its own
//! cell, has its own color, and is rasterized with hard edges on black.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Result, VoraError};
use crate::vision::Image;

use super::vocab::{COLORS, COLS, ROWS, SHAPES, SIZES};

pub const MAX_SHAPES: usize = 4;
pub const MIN_SIDE: usize = 4;
pub const MAX_SIDE: usize = 64;

/// Background plus one class per (color, shape).
pub const PATCH_CLASSES: usize = 1 + COLORS.len() * SHAPES.len();

pub const PALETTE: [[u8; 3]; 8] = [
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 255, 0],
    [0, 255, 255],
    [255, 0, 255],
    [255, 255, 255],
    [255, 128, 0],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneShape {
    pub kind: ShapeKind,
    /// Index into [`COLORS`] / [`PALETTE`].
    pub color: usize,
    pub big: bool,
    /// Cell index, row-major over the 2×2 grid.
    pub cell: usize,
}

impl SceneShape {
    pub fn class(&self) -> usize {
        1 + self.color * SHAPES.len() + self.kind.index()
    }
}

/// Scene graph; shapes are kept in cell order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub shapes: Vec<SceneShape>,
}

pub fn check_resolution(height: usize, width: usize) -> Result<()> {
    for (name, v) in [("height", height), ("width", width)] {
        if !(MIN_SIDE..=MAX_SIDE).contains(&v) || v % 2 != 0 {
            return Err(VoraError::Data(format!(
                "{name} {v} must be even and within [{MIN_SIDE}, {MAX_SIDE}]"
            )));
        }
    }
    Ok(())
}

impl Scene {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize, max_shapes: usize) -> Result<Self> {
        check_resolution(height, width)?;
        let max_shapes = max_shapes.clamp(1, MAX_SHAPES);
        let n = rng.random_range(1..=max_shapes);
        let mut cells: Vec<usize> = (0..4).collect();
        cells.shuffle(rng);
        let mut colors: Vec<usize> = (0..COLORS.len()).collect();
        colors.shuffle(rng);
        let mut shapes: Vec<SceneShape> = (0..n)
            .map(|i| SceneShape {
                kind: ShapeKind::ALL[rng.random_range(0..ShapeKind::ALL.len())],
                color: colors[i],
                big: rng.random_bool(0.5),
                cell: cells[i],
            })
            .collect();
        shapes.sort_by_key(|s| s.cell);
        Ok(Self { height, width, shapes })
    }

    /// `"a big red circle top left and a small blue square bottom right"`.
    pub fn caption(&self) -> String {
        self.shapes
            .iter()
            .map(|s| {
                format!(
                    "a {} {} {} {} {}",
                    SIZES[s.big as usize],
                    COLORS[s.color],
                    SHAPES[s.kind.index()],
                    ROWS[s.cell / 2],
                    COLS[s.cell % 2]
                )
            })
            .collect::<Vec<_>>()
            .join(" and ")
    }

    /// Per-pixel class map (0 = background), row-major.
    pub fn label_map(&self) -> Vec<usize> {
        let mut labels = vec![0; self.height * self.width];
        for s in &self.shapes {
            for y in 0..self.height {
                for x in 0..self.width {
                    if self.covers(s, y, x) {
                        labels[y * self.width + x] = s.class();
                    }
                }
            }
        }
        labels
    }

    fn covers(&self, s: &SceneShape, y: usize, x: usize) -> bool {
        let (ch, cw) = (self.height as f32 / 2.0, self.width as f32 / 2.0);
        let cy = (s.cell / 2) as f32 * ch + ch / 2.0;
        let cx = (s.cell % 2) as f32 * cw + cw / 2.0;
        let r = ch.min(cw) * if s.big { 0.45 } else { 0.25 };
        let (py, px) = (y as f32 + 0.5, x as f32 + 0.5);
        let (dy, dx) = (py - cy, px - cx);
        match s.kind {
            ShapeKind::Circle => dy * dy + dx * dx <= r * r,
            ShapeKind::Square => dy.abs() <= r && dx.abs() <= r,
            ShapeKind::Triangle => dy.abs() <= r && dx.abs() <= (dy + r) / 2.0,
        }
    }

    pub fn render(&self) -> Image {
        let mut img = Image::filled(self.height, self.width, [0.0; 3]);
        let labels = self.label_map();
        for y in 0..self.height {
            for x in 0..self.width {
                let c = labels[y * self.width + x];
                if c > 0 {
                    let rgb = PALETTE[(c - 1) / SHAPES.len()];
                    img.set_pixel(y, x, rgb.map(|v| v as f32 / 255.0));
                }
            }
        }
        img
    }

    /// One class per patch: the dominant shape class if shapes cover at least a
    /// quarter of the patch, background otherwise.
    pub fn patch_labels(&self, patch: usize) -> Result<Vec<usize>> {
        if patch == 0 || !self.height.is_multiple_of(patch) || !self.width.is_multiple_of(patch) {
            return Err(VoraError::Data(format!(
                "{}x{} image is not divisible by patch {patch}",
                self.height, self.width
            )));
        }
        let labels = self.label_map();
        let (gr, gc) = (self.height / patch, self.width / patch);
        let mut out = Vec::with_capacity(gr * gc);
        for r in 0..gr {
            for c in 0..gc {
                let mut counts = [0usize; PATCH_CLASSES];
                for y in r * patch..(r + 1) * patch {
                    for x in c * patch..(c + 1) * patch {
                        counts[labels[y * self.width + x]] += 1;
                    }
                }
                let fg: usize = counts[1..].iter().sum();
                let best = (1..PATCH_CLASSES).max_by_key(|&k| (counts[k], usize::MAX - k)).unwrap_or(0);
                out.push(if fg * 4 >= patch * patch && counts[best] > 0 { best } else { 0 });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn shapes_are_distinct() {
        for i in 0..200 {
            let s = Scene::random(&mut rng_for(5, "scene", i), 32, 32, 4).unwrap();
            assert!((1..=4).contains(&s.shapes.len()));
            for (j, a) in s.shapes.iter().enumerate() {
                for b in &s.shapes[j + 1..] {
                    assert_ne!(a.cell, b.cell);
                    assert_ne!(a.color, b.color);
                }
            }
        }
    }

    #[test]
    fn every_shape_is_visible() {
        for i in 0..100 {
            let s = Scene::random(&mut rng_for(6, "scene", i), 16, 16, 4).unwrap();
            let labels = s.label_map();
            for sh in &s.shapes {
                assert!(labels.contains(&sh.class()), "{sh:?} invisible");
            }
        }
    }

    #[test]
    fn resolution_bounds() {
        assert!(check_resolution(2, 32).is_err());
        assert!(check_resolution(32, 66).is_err());
        assert!(check_resolution(31, 32).is_err());
        assert!(check_resolution(16, 48).is_ok());
    }

    #[test]
    fn patch_labels_cover_grid() {
        let s = Scene::random(&mut rng_for(1, "scene", 0), 32, 48, 4).unwrap();
        let l = s.patch_labels(8).unwrap();
        assert_eq!(l.len(), 24);
        assert!(l.iter().all(|&c| c < PATCH_CLASSES));
        assert!(l.iter().any(|&c| c > 0));
    }
}
