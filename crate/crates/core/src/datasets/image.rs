use crate::error::{Error, Result};
use crate::params::Hyperparams;

/// Square-or-not grayscale image with raw `[0, 255]` intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub side_rows: usize,
    pub side_cols: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f64>) -> Result<GrayImage> {
        if pixels.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} pixels for a {rows}x{cols} image",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            side_rows: rows,
            side_cols: cols,
            pixels,
        })
    }

    pub fn from_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<GrayImage> {
        GrayImage::new(rows, cols, bytes.iter().map(|&b| b as f64).collect())
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.side_cols + c]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preprocess {
    /// 2x2 mean pooling (28x28 -> 14x14).
    Vanilla,
    /// Crop the zero border to a square, then area-resize to 10x10.
    Kernelised,
}

/// Side of kernelised inputs after resizing.
pub const KERNELISED_SIDE: usize = 10;

/// `floor(v * (2^alpha - 1))` for `v` in `[0, 1]`.
pub fn discretize_pixel(v: f64, hp: &Hyperparams) -> Result<i64> {
    hp.validate_alpha()?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Range(format!("pixel value {v} outside [0, 1]")));
    }
    let levels = ((1u64 << hp.alpha) - 1) as f64;
    Ok((v * levels).floor() as i64)
}

/// Resize by area averaging: each output cell is the overlap-weighted mean of
/// the source cells it covers.
fn area_resize(img: &GrayImage, r0: usize, c0: usize, side: usize, out_side: usize) -> Vec<f64> {
    let scale = side as f64 / out_side as f64;
    let mut out = Vec::with_capacity(out_side * out_side);
    for orow in 0..out_side {
        let (y0, y1) = (orow as f64 * scale, (orow + 1) as f64 * scale);
        for ocol in 0..out_side {
            let (x0, x1) = (ocol as f64 * scale, (ocol + 1) as f64 * scale);
            let mut acc = 0.0;
            for r in y0.floor() as usize..(y1.ceil() as usize).min(side) {
                let wy = (y1.min(r as f64 + 1.0) - y0.max(r as f64)).max(0.0);
                for c in x0.floor() as usize..(x1.ceil() as usize).min(side) {
                    let wx = (x1.min(c as f64 + 1.0) - x0.max(c as f64)).max(0.0);
                    acc += wy * wx * img.at(r0 + r, c0 + c);
                }
            }
            out.push(acc / (scale * scale));
        }
    }
    out
}

/// Smallest square window containing every non-zero pixel, clamped inside
/// the image. `None` for an all-zero image.
fn nonzero_square(img: &GrayImage) -> Option<(usize, usize, usize)> {
    let n = img.side_rows;
    let (mut rmin, mut rmax, mut cmin, mut cmax) = (n, 0, n, 0);
    for r in 0..n {
        for c in 0..n {
            if img.at(r, c) != 0.0 {
                rmin = rmin.min(r);
                rmax = rmax.max(r);
                cmin = cmin.min(c);
                cmax = cmax.max(c);
            }
        }
    }
    if rmin > rmax {
        return None;
    }
    let side = (rmax - rmin + 1).max(cmax - cmin + 1);
    // grow the shorter extent symmetrically, then shift back inside the frame
    let place = |lo: usize, hi: usize| {
        let extra = side - (hi - lo + 1);
        let start = lo.saturating_sub(extra / 2);
        start.min(n - side)
    };
    Some((place(rmin, rmax), place(cmin, cmax), side))
}

/// Pools, flattens row-major and discretizes an image.
pub fn preprocess_image(img: &GrayImage, scheme: Preprocess, hp: &Hyperparams) -> Result<Vec<i64>> {
    if img.side_rows != img.side_cols || img.side_rows == 0 {
        return Err(Error::Shape(format!(
            "expected a square image, got {}x{}",
            img.side_rows, img.side_cols
        )));
    }
    let n = img.side_rows;
    let pooled = match scheme {
        Preprocess::Vanilla => {
            if n < 2 {
                return Err(Error::Shape("image too small to pool".into()));
            }
            area_resize(img, 0, 0, n, n / 2)
        }
        Preprocess::Kernelised => match nonzero_square(img) {
            Some((r0, c0, side)) => area_resize(img, r0, c0, side, KERNELISED_SIDE),
            None => vec![0.0; KERNELISED_SIDE * KERNELISED_SIDE],
        },
    };
    pooled
        .into_iter()
        .map(|v| discretize_pixel((v / 255.0).clamp(0.0, 1.0), hp))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp() -> Hyperparams {
        Hyperparams::default()
    }

    #[test]
    fn discretize_examples() {
        assert_eq!(discretize_pixel(1.0, &hp()).unwrap(), 3);
        assert_eq!(discretize_pixel(0.0, &hp()).unwrap(), 0);
        assert_eq!(discretize_pixel(0.4, &hp()).unwrap(), 1);
        assert!(discretize_pixel(1.5, &hp()).is_err());
        assert!(discretize_pixel(-0.1, &hp()).is_err());
    }

    #[test]
    fn discretize_is_monotone() {
        let mut prev = 0;
        for i in 0..=1000 {
            let k = discretize_pixel(i as f64 / 1000.0, &hp()).unwrap();
            assert!(k >= prev);
            assert!(k < 1 << (hp().num_bits - 1));
            prev = k;
        }
    }

    #[test]
    fn vanilla_pooling() {
        let zero = GrayImage::new(28, 28, vec![0.0; 784]).unwrap();
        assert_eq!(preprocess_image(&zero, Preprocess::Vanilla, &hp()).unwrap(), vec![0; 196]);

        let v = 200.0;
        let constant = GrayImage::new(28, 28, vec![v; 784]).unwrap();
        let expected = discretize_pixel(v / 255.0, &hp()).unwrap();
        assert!(preprocess_image(&constant, Preprocess::Vanilla, &hp())
            .unwrap()
            .iter()
            .all(|&k| k == expected));

        let checker: Vec<f64> = (0..784)
            .map(|i| if (i / 28 + i % 28) % 2 == 0 { 0.0 } else { 255.0 })
            .collect();
        let img = GrayImage::new(28, 28, checker).unwrap();
        // every 2x2 block averages to 127.5 -> floor(0.5 * 3) = 1
        assert_eq!(preprocess_image(&img, Preprocess::Vanilla, &hp()).unwrap(), vec![1; 196]);
    }

    #[test]
    fn kernelised_crops_zero_border() {
        // a 10x10 bright block centered in a 28x28 frame resizes to all-bright
        let mut px = vec![0.0; 784];
        for r in 9..19 {
            for c in 9..19 {
                px[r * 28 + c] = 255.0;
            }
        }
        let img = GrayImage::new(28, 28, px).unwrap();
        let feats = preprocess_image(&img, Preprocess::Kernelised, &hp()).unwrap();
        assert_eq!(feats, vec![3; 100]);

        let zero = GrayImage::new(28, 28, vec![0.0; 784]).unwrap();
        assert_eq!(preprocess_image(&zero, Preprocess::Kernelised, &hp()).unwrap(), vec![0; 100]);
    }

    #[test]
    fn kernelised_keeps_square_when_content_is_wide() {
        let mut px = vec![0.0; 28 * 28];
        for c in 4..24 {
            px[14 * 28 + c] = 255.0;
        }
        let img = GrayImage::new(28, 28, px).unwrap();
        assert_eq!(nonzero_square(&img), Some((5, 4, 20)));
    }

    #[test]
    fn non_square_is_rejected() {
        let img = GrayImage::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(
            preprocess_image(&img, Preprocess::Vanilla, &hp()),
            Err(Error::Shape(_))
        ));
    }
}
