use super::{DataError, Image, ImageDataset};

/// Source coordinate of output pixel `i` under half-pixel-center alignment,
/// clamped to the valid sample range. Returns the two neighbours and the
/// weight of the second.
fn source_taps(i: usize, input: usize, output: usize) -> (usize, usize, f64) {
    let scale = input as f64 / output as f64;
    let x = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
    let lo = x.floor() as usize;
    let hi = (lo + 1).min(input - 1);
    (lo, hi, x - lo as f64)
}

fn resize_plane(src: &[f32], input: usize, output: usize, dst: &mut [f32]) {
    let taps: Vec<_> = (0..output).map(|i| source_taps(i, input, output)).collect();
    for (y, &(y0, y1, fy)) in taps.iter().enumerate() {
        for (x, &(x0, x1, fx)) in taps.iter().enumerate() {
            let at = |yy: usize, xx: usize| src[yy * input + xx] as f64;
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            dst[y * output + x] = (top * (1.0 - fy) + bottom * fy) as f32;
        }
    }
}

/// Bilinear resampling to `size×size`, per channel.
pub fn resize(image: &Image, size: usize) -> Result<Image, DataError> {
    if size == 0 {
        return Err(DataError::Geometry {
            expected: vec![image.channels(), 1, 1],
            found: vec![image.channels(), 0, 0],
        });
    }
    let (c, s) = (image.channels(), image.size());
    let mut out = vec![0.0; c * size * size];
    for ch in 0..c {
        resize_plane(
            image.channel(ch),
            s,
            size,
            &mut out[ch * size * size..(ch + 1) * size * size],
        );
    }
    Image::new(c, size, out)
}

/// Resizes every image, re-quantizing to 8 bits.
pub fn resize_dataset(ds: &ImageDataset, size: usize) -> Result<ImageDataset, DataError> {
    if size == ds.size() {
        return Ok(ds.clone());
    }
    let mut images = Vec::with_capacity(ds.len() * ds.channels() * size * size);
    for i in 0..ds.len() {
        images.extend(resize(&ds.image(i), size)?.to_bytes());
    }
    Ok(ds.with_images(images, size))
}
