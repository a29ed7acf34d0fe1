//! Dense 31-channel histogram-of-oriented-gradient features on a square cell
//! grid, patch cropping, and dense filter correlation.
//!
//! Channel layout per cell:
//! - `0..18`  contrast-sensitive orientations (20 degree bins over 360)
//! - `18..27` contrast-insensitive orientations (20 degree bins over 180)
//! - `27..31` gradient energy under each of the four 2x2 block normalizers

use rayon::prelude::*;

use crate::error::{PoseError, Result};
use crate::grid::Grid;
use crate::image::ImageBuffer;
use crate::skeleton::BoxSize;

pub const FEATURE_DIM: usize = 31;
pub const SIGNED_BINS: usize = 18;
pub const UNSIGNED_BINS: usize = 9;
pub const CLIP: f64 = 0.2;
const NORM_EPS: f64 = 1e-4;
const TEXTURE_SCALE: f64 = 0.2357;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    cells_wide: usize,
    cells_high: usize,
    feature_dim: usize,
    cell_size: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        cells_wide: usize,
        cells_high: usize,
        feature_dim: usize,
        cell_size: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let expected = cells_wide * cells_high * feature_dim;
        if data.len() != expected {
            return Err(PoseError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        Ok(FeatureMap {
            cells_wide,
            cells_high,
            feature_dim,
            cell_size,
            data,
        })
    }

    pub fn cells_wide(&self) -> usize {
        self.cells_wide
    }

    pub fn cells_high(&self) -> usize {
        self.cells_high
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn cell_size(&self) -> usize {
        self.cell_size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn num_cells(&self) -> usize {
        self.cells_wide * self.cells_high
    }

    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.cells_wide + x) * self.feature_dim;
        &self.data[i..i + self.feature_dim]
    }

    pub fn channel(&self, k: usize) -> Grid {
        let data = self
            .data
            .chunks_exact(self.feature_dim)
            .map(|c| c[k])
            .collect();
        Grid::new(self.cells_wide, self.cells_high, data)
    }

    /// Cell containing a pixel coordinate, clamped to the grid.
    pub fn pixel_to_cell(&self, p: [f64; 2]) -> (usize, usize) {
        let cs = self.cell_size as f64;
        let cx = (p[0] / cs).floor().clamp(0.0, (self.cells_wide - 1) as f64);
        let cy = (p[1] / cs).floor().clamp(0.0, (self.cells_high - 1) as f64);
        (cx as usize, cy as usize)
    }

    /// Pixel coordinate of a cell's center.
    pub fn cell_to_pixel(&self, cell: (usize, usize)) -> [f64; 2] {
        cell_center(cell, self.cell_size)
    }
}

pub fn cell_center(cell: (usize, usize), cell_size: usize) -> [f64; 2] {
    let cs = cell_size as f64;
    [cell.0 as f64 * cs + 0.5 * cs, cell.1 as f64 * cs + 0.5 * cs]
}

/// Unit vectors of the nine undirected orientation bins.
fn orientation_basis() -> [(f64, f64); UNSIGNED_BINS] {
    std::array::from_fn(|o| {
        let theta = o as f64 * std::f64::consts::PI / UNSIGNED_BINS as f64;
        (theta.cos(), theta.sin())
    })
}

pub fn extract_features(image: &ImageBuffer, cell_size: usize) -> Result<FeatureMap> {
    if cell_size < 2 {
        return Err(PoseError::InvalidArgument(format!(
            "cell size {cell_size} < 2"
        )));
    }
    let (w, h) = (image.width(), image.height());
    if w < cell_size || h < cell_size {
        return Err(PoseError::ImageTooSmall {
            width: w,
            height: h,
            cell_size,
        });
    }
    let cw = w / cell_size;
    let ch = h / cell_size;
    let gray = image.to_gray_f64();
    let basis = orientation_basis();

    let mut hist = vec![0.0f64; cw * ch * SIGNED_BINS];
    for y in 1..(ch * cell_size).min(h - 1) {
        for x in 1..(cw * cell_size).min(w - 1) {
            let dx = gray[y * w + x + 1] - gray[y * w + x - 1];
            let dy = gray[(y + 1) * w + x] - gray[(y - 1) * w + x];
            let mag = (dx * dx + dy * dy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut best = 0;
            let mut best_dot = 0.0;
            let mut best_abs = -1.0;
            for (o, &(u, v)) in basis.iter().enumerate() {
                let dot = u * dx + v * dy;
                if dot.abs() > best_abs {
                    best_abs = dot.abs();
                    best_dot = dot;
                    best = o;
                }
            }
            let bin = if best_dot >= 0.0 {
                best
            } else {
                best + UNSIGNED_BINS
            };
            let cell = (y / cell_size) * cw + x / cell_size;
            hist[cell * SIGNED_BINS + bin] += mag;
        }
    }

    let energy: Vec<f64> = hist
        .chunks_exact(SIGNED_BINS)
        .map(|c| {
            (0..UNSIGNED_BINS)
                .map(|o| {
                    let s = c[o] + c[o + UNSIGNED_BINS];
                    s * s
                })
                .sum()
        })
        .collect();
    let e = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= cw as isize || y >= ch as isize {
            0.0
        } else {
            energy[y as usize * cw + x as usize]
        }
    };

    let mut data = vec![0.0; cw * ch * FEATURE_DIM];
    for cy in 0..ch {
        for cx in 0..cw {
            let (x, y) = (cx as isize, cy as isize);
            let blocks = [(0, 0), (-1, 0), (0, -1), (-1, -1)];
            let norms = blocks.map(|(ox, oy)| {
                let (bx, by) = (x + ox, y + oy);
                let s = e(bx, by) + e(bx + 1, by) + e(bx, by + 1) + e(bx + 1, by + 1);
                1.0 / (s + NORM_EPS).sqrt()
            });
            let cell = cy * cw + cx;
            let hc = &hist[cell * SIGNED_BINS..(cell + 1) * SIGNED_BINS];
            let out = &mut data[cell * FEATURE_DIM..(cell + 1) * FEATURE_DIM];
            let mut texture = [0.0; 4];
            for o in 0..SIGNED_BINS {
                let mut sum = 0.0;
                for (k, n) in norms.iter().enumerate() {
                    let v = (hc[o] * n).min(CLIP);
                    sum += v;
                    texture[k] += v;
                }
                out[o] = 0.5 * sum;
            }
            for o in 0..UNSIGNED_BINS {
                let s = hc[o] + hc[o + UNSIGNED_BINS];
                out[SIGNED_BINS + o] = 0.5 * norms.iter().map(|n| (s * n).min(CLIP)).sum::<f64>();
            }
            for k in 0..4 {
                out[SIGNED_BINS + UNSIGNED_BINS + k] = TEXTURE_SCALE * texture[k];
            }
        }
    }
    FeatureMap::new(cw, ch, FEATURE_DIM, cell_size, data)
}

/// Top-left cell of a box centered at `location`.
#[inline]
pub fn box_origin(location: (usize, usize), size: BoxSize) -> (isize, isize) {
    (
        location.0 as isize - (size.width / 2) as isize,
        location.1 as isize - (size.height / 2) as isize,
    )
}

/// Row-major (box row, box column, channel) patch, zero outside the map.
pub fn crop_patch_feature(map: &FeatureMap, location: (usize, usize), size: BoxSize) -> Vec<f64> {
    let d = map.feature_dim;
    let (ox, oy) = box_origin(location, size);
    let mut out = vec![0.0; size.area() * d];
    for by in 0..size.height {
        let y = oy + by as isize;
        if y < 0 || y >= map.cells_high as isize {
            continue;
        }
        for bx in 0..size.width {
            let x = ox + bx as isize;
            if x < 0 || x >= map.cells_wide as isize {
                continue;
            }
            let dst = (by * size.width + bx) * d;
            out[dst..dst + d].copy_from_slice(map.cell(x as usize, y as usize));
        }
    }
    out
}

/// Dense response of a box filter at every cell, with the same box
/// placement and zero padding as [`crop_patch_feature`].
pub fn correlate_filter(map: &FeatureMap, filter: &[f64], size: BoxSize) -> Result<Grid> {
    let d = map.feature_dim;
    let expected = size.area() * d;
    if filter.len() != expected {
        return Err(PoseError::LengthMismatch {
            expected,
            actual: filter.len(),
        });
    }
    let (cw, ch) = (map.cells_wide as isize, map.cells_high as isize);
    let hw = (size.width / 2) as isize;
    let hh = (size.height / 2) as isize;
    let mut out = vec![0.0; map.num_cells()];
    out.par_chunks_mut(map.cells_wide)
        .enumerate()
        .for_each(|(y, row)| {
            let y = y as isize;
            for by in 0..size.height as isize {
                let sy = y - hh + by;
                if sy < 0 || sy >= ch {
                    continue;
                }
                for bx in 0..size.width as isize {
                    let f = &filter[((by as usize) * size.width + bx as usize) * d..][..d];
                    if f.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    // output x such that 0 <= x - hw + bx < cw
                    let lo = (hw - bx).max(0);
                    let hi = (cw + hw - bx).min(cw);
                    let src_row = &map.data[(sy * cw) as usize * d..((sy + 1) * cw) as usize * d];
                    for x in lo..hi {
                        let sx = (x - hw + bx) as usize;
                        let cell = &src_row[sx * d..sx * d + d];
                        row[x as usize] += dot(f, cell);
                    }
                }
            }
        });
    Ok(Grid::new(map.cells_wide, map.cells_high, out))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> FeatureMap {
        let data = (0..w * h * FEATURE_DIM)
            .map(|_| rng.random::<f64>())
            .collect();
        FeatureMap::new(w, h, FEATURE_DIM, 4, data).unwrap()
    }

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageBuffer {
        let data = (0..w * h).map(|_| rng.random::<u8>()).collect();
        ImageBuffer::new(w, h, 1, data).unwrap()
    }

    #[test]
    fn constant_image_has_zero_features() {
        let img = ImageBuffer::filled(40, 32, 1, 77);
        let f = extract_features(&img, 4).unwrap();
        assert_eq!((f.cells_wide(), f.cells_high()), (10, 8));
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_small_image_is_rejected() {
        let img = ImageBuffer::filled(3, 10, 1, 0);
        assert!(matches!(
            extract_features(&img, 4),
            Err(PoseError::ImageTooSmall { .. })
        ));
        assert!(extract_features(&ImageBuffer::filled(10, 10, 1, 0), 1).is_err());
    }

    #[test]
    fn vertical_step_edge_uses_horizontal_gradient_bins() {
        // Dark left half, bright right half; edge between pixel 15 and 16,
        // which is the boundary of cell columns 3 and 4.
        let (w, h) = (32, 32);
        let mut data = vec![0u8; w * h];
        for y in 0..h {
            for x in 16..w {
                data[y * w + x] = 200;
            }
        }
        let img = ImageBuffer::new(w, h, 1, data).unwrap();
        let f = extract_features(&img, 4).unwrap();
        // centered differences: dx = 200 at x = 15 and x = 16, dy = 0, so all
        // energy is in signed bin 0 (gradient pointing +x) and unsigned bin 0.
        for cy in 1..7 {
            for cx in [3, 4] {
                let c = f.cell(cx, cy);
                assert!(c[0] > 0.0);
                for o in 1..SIGNED_BINS {
                    assert_eq!(c[o], 0.0, "cell ({cx},{cy}) bin {o}");
                }
                assert!(c[SIGNED_BINS] > 0.0);
                for o in 1..UNSIGNED_BINS {
                    assert_eq!(c[SIGNED_BINS + o], 0.0);
                }
            }
            for cx in [0, 1, 6, 7] {
                assert!(f.cell(cx, cy)[..27].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn rotation_by_180_shifts_signed_bins_by_nine() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let img = random_image(&mut rng, 36, 28);
            let a = extract_features(&img, 4).unwrap();
            let b = extract_features(&img.rotate180(), 4).unwrap();
            let (cw, ch) = (a.cells_wide(), a.cells_high());
            for y in 1..ch - 1 {
                for x in 1..cw - 1 {
                    let ca = a.cell(x, y);
                    let cb = b.cell(cw - 1 - x, ch - 1 - y);
                    for o in 0..SIGNED_BINS {
                        let expect = ca[(o + UNSIGNED_BINS) % SIGNED_BINS];
                        assert!((cb[o] - expect).abs() < 1e-12);
                    }
                    for o in 0..UNSIGNED_BINS {
                        assert!((cb[SIGNED_BINS + o] - ca[SIGNED_BINS + o]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn feature_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = random_image(&mut rng, 48, 40);
        let f = extract_features(&img, 4).unwrap();
        for c in f.data().chunks_exact(FEATURE_DIM) {
            assert!(c.iter().all(|v| v.is_finite() && *v >= 0.0));
            assert!(c[..27].iter().all(|&v| v <= 4.0 * 0.5 * CLIP + 1e-12));
            assert!(c[27..].iter().all(|&v| v <= 1.0));
        }
    }

    #[test]
    fn shifting_image_by_one_cell_shifts_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (w, h) = (40, 36);
        let img = random_image(&mut rng, w, h);
        // shift right by 4 pixels
        let mut shifted = vec![0u8; w * h];
        for y in 0..h {
            for x in 4..w {
                shifted[y * w + x] = img.data()[y * w + x - 4];
            }
        }
        let img2 = ImageBuffer::new(w, h, 1, shifted).unwrap();
        let a = extract_features(&img, 4).unwrap();
        let b = extract_features(&img2, 4).unwrap();
        let size = BoxSize::new(3, 3);
        let filter: Vec<f64> = (0..size.area() * FEATURE_DIM)
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        let sa = correlate_filter(&a, &filter, size).unwrap();
        let sb = correlate_filter(&b, &filter, size).unwrap();
        // interior: box and its normalizer neighbourhood clear of borders and
        // of the zero-filled strip in the shifted image
        for y in 3..a.cells_high() - 3 {
            for x in 4..a.cells_wide() - 3 {
                assert!((sb.at(x, y) - sa.at(x - 1, y)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn crop_interior_is_exact_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = random_map(&mut rng, 10, 8);
        let size = BoxSize::new(3, 2);
        let patch = crop_patch_feature(&map, (5, 4), size);
        // origin (4, 3)
        for by in 0..2 {
            for bx in 0..3 {
                let got = &patch[(by * 3 + bx) * FEATURE_DIM..][..FEATURE_DIM];
                assert_eq!(got, map.cell(4 + bx, 3 + by));
            }
        }
    }

    #[test]
    fn crop_at_corner_is_zero_padded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let map = random_map(&mut rng, 10, 8);
        let size = BoxSize::new(5, 5);
        let patch = crop_patch_feature(&map, (0, 0), size);
        for by in 0..5 {
            for bx in 0..5 {
                let got = &patch[(by * 5 + bx) * FEATURE_DIM..][..FEATURE_DIM];
                if bx < 2 || by < 2 {
                    assert!(got.iter().all(|&v| v == 0.0));
                } else {
                    assert_eq!(got, map.cell(bx - 2, by - 2));
                }
            }
        }
    }

    #[test]
    fn zero_filter_gives_zero_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map = random_map(&mut rng, 7, 6);
        let size = BoxSize::new(2, 3);
        let s = correlate_filter(&map, &vec![0.0; size.area() * FEATURE_DIM], size).unwrap();
        assert!(s.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_filter_projects_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let map = random_map(&mut rng, 7, 6);
        for k in [0, 12, 30] {
            let mut f = vec![0.0; FEATURE_DIM];
            f[k] = 1.0;
            let s = correlate_filter(&map, &f, BoxSize::new(1, 1)).unwrap();
            assert_eq!(s, map.channel(k));
        }
    }

    #[test]
    fn correlation_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let map = random_map(&mut rng, 13, 11);
        let size = BoxSize::new(6, 9);
        let filter: Vec<f64> = (0..size.area() * FEATURE_DIM)
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        let s = correlate_filter(&map, &filter, size).unwrap();
        for y in 0..map.cells_high() {
            for x in 0..map.cells_wide() {
                // naive double loop directly over the map, independent of crop
                let mut acc = 0.0;
                for by in 0..9isize {
                    for bx in 0..6isize {
                        let sx = x as isize - 3 + bx;
                        let sy = y as isize - 4 + by;
                        if sx < 0 || sy < 0 || sx >= 13 || sy >= 11 {
                            continue;
                        }
                        for c in 0..FEATURE_DIM {
                            acc += filter[((by * 6 + bx) as usize) * FEATURE_DIM + c]
                                * map.cell(sx as usize, sy as usize)[c];
                        }
                    }
                }
                assert!((s.at(x, y) - acc).abs() < 1e-9);
                let patch = crop_patch_feature(&map, (x, y), size);
                assert!((dot(&patch, &filter) - acc).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let map = FeatureMap::new(2, 2, FEATURE_DIM, 4, vec![0.0; 4 * FEATURE_DIM]).unwrap();
        assert!(matches!(
            correlate_filter(&map, &[0.0; 3], BoxSize::new(1, 1)),
            Err(PoseError::LengthMismatch { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn correlation_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let map = random_map(&mut rng, 8, 7);
            let size = BoxSize::new(3, 2);
            let n = size.area() * FEATURE_DIM;
            let f1: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let f2: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let mix: Vec<f64> = f1.iter().zip(&f2).map(|(x, y)| a * x + b * y).collect();
            let s1 = correlate_filter(&map, &f1, size).unwrap();
            let s2 = correlate_filter(&map, &f2, size).unwrap();
            let sm = correlate_filter(&map, &mix, size).unwrap();
            for i in 0..sm.len() {
                proptest::prop_assert!((sm.data[i] - (a * s1.data[i] + b * s2.data[i])).abs() < 1e-9);
            }
        }
    }
}
