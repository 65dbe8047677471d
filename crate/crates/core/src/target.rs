use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::phosphene::{GridSpec, Percept};

const DIGIT_WORDS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

/// Text shown to a participant in place of the target bitmap.
pub fn digit_label(digit: u8) -> String {
    match DIGIT_WORDS.get(digit as usize) {
        Some(word) => format!("number {word}"),
        None => format!("symbol {digit}"),
    }
}

/// A grayscale target in `[0, 1]` plus its text description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub label: String,
}

impl TargetImage {
    /// Pixels are clamped into `[0, 1]`; NaN becomes 0.
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(shape_err(height * width, pixels.len()));
        }
        let label = label.into();
        if label.trim().is_empty() {
            return Err(Error::InvalidParam("target label must be non-empty".into()));
        }
        let pixels = pixels
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Ok(Self {
            height,
            width,
            pixels,
            label,
        })
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8], label: impl Into<String>) -> Result<Self> {
        Self::new(
            height,
            width,
            bytes.iter().map(|&b| b as f64 / 255.0).collect(),
            label,
        )
    }

    /// Area-weighted resampling to `height × width`.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: area_resample(&self.pixels, self.height, self.width, height, width),
            label: self.label.clone(),
        }
    }

    /// The target as a percept on `grid`, one pixel per grid cell.
    pub fn as_percept(&self, grid: &GridSpec) -> Result<Percept> {
        if grid.height != self.height || grid.width != self.width {
            return Err(shape_err(
                format!("{}x{}", grid.height, grid.width),
                format!("{}x{}", self.height, self.width),
            ));
        }
        Percept::from_data(self.height, self.width, grid.half_extent_deg, self.pixels.clone())
    }
}

/// Overlap weights of source cells onto each destination cell along one axis.
fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let lo = d as f64 * scale;
            let hi = lo + scale;
            let mut w = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    w.push((s, overlap / scale));
                }
                s += 1;
            }
            w
        })
        .collect()
}

/// Box-filter resampling of a row-major grid. Each output cell is the
/// area-weighted mean of the input cells it covers.
pub fn area_resample(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let wy = axis_weights(sh, dh);
    let wx = axis_weights(sw, dw);
    let mut out = vec![0.0; dh * dw];
    for (i, rows) in wy.iter().enumerate() {
        for (j, cols) in wx.iter().enumerate() {
            let mut acc = 0.0;
            for &(r, a) in rows {
                for &(c, b) in cols {
                    acc += a * b * src[r * sw + c];
                }
            }
            out[i * dw + j] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(digit_label(8), "number eight");
        assert_eq!(digit_label(0), "number zero");
    }

    #[test]
    fn clamps_and_requires_label() {
        let t = TargetImage::new(1, 3, vec![-1.0, 0.5, 2.0], "x").unwrap();
        assert_eq!(t.pixels, vec![0.0, 0.5, 1.0]);
        assert!(TargetImage::new(1, 1, vec![0.0], " ").is_err());
        assert!(TargetImage::new(2, 2, vec![0.0], "x").is_err());
    }

    #[test]
    fn resample_preserves_mean_and_blocks() {
        let src: Vec<f64> = (0..28 * 28).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
        let out = area_resample(&src, 28, 28, 16, 16);
        let m_src = src.iter().sum::<f64>() / src.len() as f64;
        let m_out = out.iter().sum::<f64>() / out.len() as f64;
        assert!((m_src - m_out).abs() < 1e-12);

        // integer factor reduces to block means
        let src = vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        assert_eq!(area_resample(&src, 2, 4, 1, 2), vec![1.0, 0.0]);
    }
}
