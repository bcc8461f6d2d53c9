//! Random patch masking of map images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::MaskSpec;
use crate::error::{HarnessError, Result};

/// Number of masked patches: `round(ratio * n)`, at least one.
pub fn mask_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Patch grid over an `h x w` image; edge patches may be partial.
pub fn patch_grid(h: usize, w: usize, patch: usize) -> (usize, usize) {
    (h.div_ceil(patch), w.div_ceil(patch))
}

/// Exactly `count` of `n` flags set, chosen uniformly by a partial
/// Fisher-Yates shuffle.
pub fn choose_patches(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut out = vec![false; n];
    for i in 0..count.min(n) {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
        out[idx[i]] = true;
    }
    out
}

/// Patch flags for `spec` over an `h x w` image, drawn from stream
/// `stream` of the mask seed.
pub fn patch_mask(h: usize, w: usize, spec: &MaskSpec, stream: u64) -> Result<Vec<bool>> {
    if spec.patch == 0 || !(spec.ratio > 0.0 && spec.ratio < 1.0) {
        return Err(HarnessError::config("mask ratio must lie in (0, 1) with a positive patch"));
    }
    if h == 0 || w == 0 {
        return Err(HarnessError::input("cannot mask an empty image"));
    }
    let (gh, gw) = patch_grid(h, w, spec.patch);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    Ok(choose_patches(gh * gw, mask_count(spec.ratio, gh * gw), &mut rng))
}

/// Sets every channel of each masked patch of an HWC image to `fill` and
/// returns the element mask (same length as `image`).
pub fn apply_patch_mask(image: &mut [f64], h: usize, w: usize, patch: usize, patches: &[bool], fill: f64) -> Vec<bool> {
    let c = image.len() / (h * w);
    let gw = w.div_ceil(patch);
    let mut mask = vec![false; image.len()];
    for y in 0..h {
        for x in 0..w {
            if patches[(y / patch) * gw + x / patch] {
                for k in 0..c {
                    let i = (y * w + x) * c + k;
                    image[i] = fill;
                    mask[i] = true;
                }
            }
        }
    }
    mask
}

/// Draws a mask and applies it in one go.
pub fn mask_image(image: &mut [f64], h: usize, w: usize, spec: &MaskSpec, fill: f64, stream: u64) -> Result<Vec<bool>> {
    if image.is_empty() || !image.len().is_multiple_of(h * w) {
        return Err(HarnessError::input("image size is not a multiple of its extent"));
    }
    let patches = patch_mask(h, w, spec, stream)?;
    Ok(apply_patch_mask(image, h, w, spec.patch, &patches, fill))
}
