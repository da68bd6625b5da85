use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};

use super::DataError;

/// Square multi-channel image with intensities in `[0, 1]`, stored `C×s×s`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    size: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, size: usize, pixels: Vec<f32>) -> Result<Self, DataError> {
        if channels == 0 || size == 0 || pixels.len() != channels * size * size {
            return Err(DataError::Geometry {
                expected: vec![channels, size, size],
                found: vec![pixels.len()],
            });
        }
        Ok(Self { channels, size, pixels })
    }

    pub fn filled(channels: usize, size: usize, value: f32) -> Self {
        Self {
            channels,
            size,
            pixels: vec![value; channels * size * size],
        }
    }

    pub fn from_bytes(channels: usize, size: usize, bytes: &[u8]) -> Result<Self, DataError> {
        Self::new(channels, size, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// Quantizes back to 8-bit intensities.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.size + y) * self.size + x]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.size * self.size;
        &self.pixels[c * plane..(c + 1) * plane]
    }
}

/// Stacks same-geometry images into a `B×C×s×s` tensor.
pub fn images_to_tensor<T: Real>(images: &[Image]) -> Result<Tensor<T>, DataError> {
    let first = images.first().ok_or(DataError::Geometry {
        expected: vec![1],
        found: vec![0],
    })?;
    let (c, s) = (first.channels, first.size);
    let mut data = Vec::with_capacity(images.len() * c * s * s);
    for img in images {
        if img.channels != c || img.size != s {
            return Err(DataError::Geometry {
                expected: vec![c, s, s],
                found: vec![img.channels, img.size, img.size],
            });
        }
        data.extend(img.pixels.iter().map(|&v| T::real(v as f64)));
    }
    Ok(Tensor::new(vec![images.len(), c, s, s], data).expect("stacked geometry"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labelled 8-bit images, `B×C×s×s`. Intensities are normalized to `[0, 1]`
/// when read out as [`Image`]s or tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    images: Vec<u8>,
    labels: Vec<usize>,
    channels: usize,
    size: usize,
    classes: usize,
    split: Split,
}

impl ImageDataset {
    pub fn new(
        images: Vec<u8>,
        labels: Vec<usize>,
        channels: usize,
        size: usize,
        classes: usize,
        split: Split,
    ) -> Result<Self, DataError> {
        let per = channels * size * size;
        if per == 0 || !images.len().is_multiple_of(per) {
            return Err(DataError::Geometry {
                expected: vec![0, channels, size, size],
                found: vec![images.len()],
            });
        }
        if images.len() / per != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.len() / per,
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            images,
            labels,
            channels,
            size,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn raw_images(&self) -> &[u8] {
        &self.images
    }

    pub fn image_bytes(&self, i: usize) -> &[u8] {
        let per = self.channels * self.size * self.size;
        &self.images[i * per..(i + 1) * per]
    }

    pub fn image(&self, i: usize) -> Image {
        Image::from_bytes(self.channels, self.size, self.image_bytes(i)).expect("dataset geometry")
    }

    /// The first `n` samples (all of them if `n` exceeds the size).
    pub fn take(&self, n: usize) -> Self {
        self.select(&(0..n.min(self.len())).collect::<Vec<_>>())
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut images = Vec::with_capacity(indices.len() * self.channels * self.size * self.size);
        for &i in indices {
            images.extend_from_slice(self.image_bytes(i));
        }
        Self {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            images: Vec::new(),
            labels: Vec::new(),
            channels: self.channels,
            size: self.size,
            classes: self.classes,
            split: self.split,
        }
    }

    /// `B×C×s×s` tensor of the samples at `indices`, normalized to `[0, 1]`.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> Tensor<T> {
        let per = self.channels * self.size * self.size;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend(self.image_bytes(i).iter().map(|&b| T::real(b as f64 / 255.0)));
        }
        Tensor::new(vec![indices.len(), self.channels, self.size, self.size], data).expect("batch geometry")
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub(crate) fn with_images(&self, images: Vec<u8>, size: usize) -> Self {
        Self {
            images,
            labels: self.labels.clone(),
            size,
            ..self.clone_meta()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_counts_and_labels() {
        assert!(matches!(
            ImageDataset::new(vec![0; 8], vec![0], 1, 2, 2, Split::Train),
            Err(DataError::CountMismatch { images: 2, labels: 1 })
        ));
        assert!(matches!(
            ImageDataset::new(vec![0; 4], vec![2], 1, 2, 2, Split::Train),
            Err(DataError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn batch_normalizes_and_select_reorders() {
        let ds = ImageDataset::new(vec![0, 255, 51, 102, 1, 2, 3, 4], vec![1, 0], 1, 2, 2, Split::Test).unwrap();
        let t: Tensor<f64> = ds.batch(&[0]);
        assert_eq!(t.shape(), &[1, 1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.2, 0.4]);
        let swapped = ds.select(&[1, 0]);
        assert_eq!(swapped.labels(), &[0, 1]);
        assert_eq!(swapped.image_bytes(0), &[1, 2, 3, 4]);
        assert_eq!(ds.take(10).len(), 2);
        assert_eq!(ds.class_counts(), vec![1, 1]);
    }

    #[test]
    fn bytes_round_trip_through_image() {
        let bytes: Vec<u8> = (0..=255).collect();
        let img = Image::from_bytes(1, 16, &bytes).unwrap();
        assert_eq!(img.to_bytes(), bytes);
    }
}
