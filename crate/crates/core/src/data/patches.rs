//! Non-overlapping patch extraction.
//!
//! Patches are enumerated row-major over the patch grid. Each patch is
//! flattened channel-first, then row-major within the patch: element
//! `(c, dy, dx)` lands at `c·p² + dy·p + dx`.

use crate::autodiff::{Real, Tensor};

use super::{DataError, Image};

/// Copies the patches of one `C×s×s` image into `dst` (`N × p²C`, row-major).
pub(crate) fn patchify_into<T: Copy>(src: &[T], channels: usize, size: usize, patch: usize, dst: &mut [T]) {
    let grid = size / patch;
    let patch_len = patch * patch * channels;
    debug_assert_eq!(src.len(), channels * size * size);
    debug_assert_eq!(dst.len(), grid * grid * patch_len);
    for py in 0..grid {
        for px in 0..grid {
            let out = &mut dst[(py * grid + px) * patch_len..][..patch_len];
            let mut o = 0;
            for c in 0..channels {
                for dy in 0..patch {
                    let row = c * size * size + (py * patch + dy) * size + px * patch;
                    out[o..o + patch].copy_from_slice(&src[row..row + patch]);
                    o += patch;
                }
            }
        }
    }
}

pub(crate) fn unpatchify_into<T: Copy>(src: &[T], channels: usize, size: usize, patch: usize, dst: &mut [T]) {
    let grid = size / patch;
    let patch_len = patch * patch * channels;
    for py in 0..grid {
        for px in 0..grid {
            let inp = &src[(py * grid + px) * patch_len..][..patch_len];
            let mut o = 0;
            for c in 0..channels {
                for dy in 0..patch {
                    let row = c * size * size + (py * patch + dy) * size + px * patch;
                    dst[row..row + patch].copy_from_slice(&inp[o..o + patch]);
                    o += patch;
                }
            }
        }
    }
}

/// `N × p²C` matrix of flattened patches, N = (s/p)².
pub fn extract_patches<T: Real>(image: &Image, patch: usize) -> Result<Tensor<T>, DataError> {
    let size = image.size();
    if patch == 0 || !size.is_multiple_of(patch) {
        return Err(DataError::PatchDivisibility { size, patch });
    }
    let channels = image.channels();
    let src: Vec<T> = image.pixels().iter().map(|&v| T::real(v as f64)).collect();
    let grid = size / patch;
    let mut dst = vec![T::zero(); src.len()];
    patchify_into(&src, channels, size, patch, &mut dst);
    Ok(Tensor::new(vec![grid * grid, patch * patch * channels], dst).expect("patch geometry"))
}

/// Inverse of [`extract_patches`].
pub fn reassemble_patches<T: Real>(
    patches: &Tensor<T>,
    channels: usize,
    size: usize,
    patch: usize,
) -> Result<Image, DataError> {
    if patch == 0 || !size.is_multiple_of(patch) {
        return Err(DataError::PatchDivisibility { size, patch });
    }
    let grid = size / patch;
    let expected = [grid * grid, patch * patch * channels];
    if patches.shape() != expected {
        return Err(DataError::Geometry {
            expected: expected.to_vec(),
            found: patches.shape().to_vec(),
        });
    }
    let mut pixels = vec![0.0f32; channels * size * size];
    let src: Vec<f32> = patches.data().iter().map(|v| v.as_f64() as f32).collect();
    unpatchify_into(&src, channels, size, patch, &mut pixels);
    Image::new(channels, size, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(channels: usize, size: usize) -> Image {
        let n = channels * size * size;
        Image::new(channels, size, (0..n).map(|i| i as f32 / n as f32).collect()).unwrap()
    }

    #[test]
    fn patch_counts_follow_geometry() {
        let p: Tensor<f32> = extract_patches(&ramp(1, 32), 2).unwrap();
        assert_eq!(p.shape(), &[256, 4]);
        let p: Tensor<f32> = extract_patches(&ramp(3, 128), 16).unwrap();
        assert_eq!(p.shape(), &[64, 768]);
        let p: Tensor<f32> = extract_patches(&ramp(1, 4), 2).unwrap();
        assert_eq!(p.shape(), &[4, 4]);
    }

    #[test]
    fn patch_layout_is_row_major() {
        let img = Image::new(1, 4, (0..16).map(|i| i as f32).collect()).unwrap();
        let p: Tensor<f64> = extract_patches(&img, 2).unwrap();
        assert_eq!(&p.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&p.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(&p.data()[8..12], &[8.0, 9.0, 12.0, 13.0]);
    }

    #[test]
    fn round_trip_reconstructs_image() {
        for (c, s, p) in [(1, 32, 2), (3, 16, 4), (2, 8, 8), (3, 12, 3)] {
            let img = ramp(c, s);
            let patches: Tensor<f32> = extract_patches(&img, p).unwrap();
            assert_eq!(reassemble_patches(&patches, c, s, p).unwrap(), img);
        }
    }

    #[test]
    fn divisibility_error() {
        assert!(matches!(
            extract_patches::<f32>(&ramp(1, 10), 4),
            Err(DataError::PatchDivisibility { size: 10, patch: 4 })
        ));
    }
}
