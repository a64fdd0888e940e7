//! Images, patchification, the vision embedding layer and the teacher ViT.

pub mod embed;
pub mod teacher;

pub use embed::{embed_vision, init_vision_embed, sincos_2d};
pub use teacher::{Teacher, TeacherStates};

use serde::{Deserialize, Serialize};

use crate::error::{Result, VoraError};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;

/// RGB image, row-major HWC, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width * CHANNELS {
            return Err(VoraError::InvalidTensor(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width * CHANNELS,
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self { height, width, pixels }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// `(rows, cols)` of the patch grid.
    pub fn grid(&self, patch: usize) -> Result<(usize, usize)> {
        for (name, v) in [("height", self.height), ("width", self.width)] {
            if patch == 0 || v == 0 || v % patch != 0 {
                return Err(VoraError::InvalidTensor(format!(
                    "image {name} {v} is not a positive multiple of patch {patch}"
                )));
            }
        }
        Ok((self.height / patch, self.width / patch))
    }
}

/// Cuts `image` into `[S, patch·patch·3]`, patches in row-major grid order,
/// each row flattened as (py, px, channel).
pub fn patchify(image: &Image, patch: usize) -> Result<Tensor> {
    let (rows, cols) = image.grid(patch)?;
    let row_len = patch * patch * CHANNELS;
    let mut data = Vec::with_capacity(rows * cols * row_len);
    for gy in 0..rows {
        for gx in 0..cols {
            for py in 0..patch {
                let y = gy * patch + py;
                let start = (y * image.width + gx * patch) * CHANNELS;
                data.extend_from_slice(&image.pixels[start..start + patch * CHANNELS]);
            }
        }
    }
    Tensor::new(vec![rows * cols, row_len], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_counts() {
        let img = Image::filled(32, 32, [0.5; 3]);
        let p = patchify(&img, 8).unwrap();
        assert_eq!(p.shape(), &[16, 192]);
        let img = Image::filled(32, 48, [0.5; 3]);
        assert_eq!(patchify(&img, 8).unwrap().shape(), &[24, 192]);
    }

    #[test]
    fn constant_image_gives_identical_rows() {
        let img = Image::filled(16, 24, [0.1, 0.2, 0.3]);
        let p = patchify(&img, 8).unwrap();
        for r in 1..p.rows() {
            assert_eq!(p.row(r), p.row(0));
        }
    }

    #[test]
    fn non_divisible_dims_name_the_dimension() {
        let img = Image::filled(32, 30, [0.0; 3]);
        let err = patchify(&img, 8).unwrap_err().to_string();
        assert!(err.contains("width 30"), "{err}");
    }

    #[test]
    fn patch_rows_follow_grid_order() {
        let mut img = Image::filled(4, 4, [0.0; 3]);
        // mark the top-left pixel of each 2x2 patch with its grid index
        for gy in 0..2 {
            for gx in 0..2 {
                img.set_pixel(gy * 2, gx * 2, [(gy * 2 + gx) as f32, 0.0, 0.0]);
            }
        }
        let p = patchify(&img, 2).unwrap();
        for s in 0..4 {
            assert_eq!(p.row(s)[0], s as f32);
        }
    }
}
