//! Procedural handwritten-style digits in the MNIST layout (28×28, the glyph
//! inside a central 20×20 box). Used when no IDX files are available.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mnist::IdxImages;

pub const SIDE: usize = 28;

type Stroke = Vec<[f64; 2]>;

/// Arc around `c` with radius `(rx, ry)` from angle `t0` to `t1` (degrees,
/// y pointing down so -90 is the top).
fn arc(c: [f64; 2], rx: f64, ry: f64, t0: f64, t1: f64) -> Stroke {
    let n = 20;
    (0..=n)
        .map(|k| {
            let t = (t0 + (t1 - t0) * k as f64 / n as f64) * PI / 180.0;
            [c[0] + rx * t.cos(), c[1] + ry * t.sin()]
        })
        .collect()
}

/// Skeleton strokes in the unit square, y pointing down.
fn skeleton(digit: u8) -> Vec<Stroke> {
    match digit {
        0 => vec![arc([0.5, 0.5], 0.28, 0.4, 0.0, 360.0)],
        1 => vec![vec![[0.36, 0.24], [0.52, 0.1], [0.52, 0.9]]],
        2 => {
            let mut s = arc([0.5, 0.32], 0.24, 0.22, 180.0, 380.0);
            s.extend([[0.24, 0.9], [0.78, 0.9]]);
            vec![s]
        }
        3 => vec![
            arc([0.48, 0.3], 0.22, 0.2, -160.0, 90.0),
            arc([0.48, 0.7], 0.24, 0.2, -90.0, 160.0),
        ],
        4 => vec![vec![[0.66, 0.9], [0.66, 0.1], [0.22, 0.64], [0.8, 0.64]]],
        5 => {
            let mut s = vec![[0.76, 0.1], [0.32, 0.1], [0.28, 0.46]];
            s.extend(arc([0.5, 0.66], 0.25, 0.24, -130.0, 150.0));
            vec![s]
        }
        6 => vec![
            vec![[0.7, 0.1], [0.42, 0.3], [0.29, 0.62]],
            arc([0.5, 0.68], 0.22, 0.22, 0.0, 360.0),
        ],
        7 => vec![vec![[0.22, 0.1], [0.78, 0.1], [0.42, 0.9]]],
        8 => vec![
            arc([0.5, 0.29], 0.19, 0.19, 0.0, 360.0),
            arc([0.5, 0.7], 0.23, 0.21, 0.0, 360.0),
        ],
        _ => vec![
            arc([0.5, 0.32], 0.21, 0.21, 0.0, 360.0),
            vec![[0.71, 0.32], [0.62, 0.9]],
        ],
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

/// Renders one jittered digit as 28×28 bytes.
pub fn render_digit<R: Rng + ?Sized>(digit: u8, rng: &mut R) -> Vec<u8> {
    let rot = rng.random_range(-0.2..0.2);
    let shear = rng.random_range(-0.2..0.2);
    let sx = rng.random_range(0.8..1.1);
    let sy = rng.random_range(0.85..1.1);
    let tx = rng.random_range(-0.06..0.06);
    let ty = rng.random_range(-0.06..0.06);
    let radius = rng.random_range(0.05..0.09);
    let (s, c) = f64::sin_cos(rot);

    // glyph unit square -> 20x20 box centered in the 28x28 frame
    let strokes: Vec<Stroke> = skeleton(digit % 10)
        .into_iter()
        .map(|stroke| {
            stroke
                .into_iter()
                .map(|p| {
                    let jitter = [rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02)];
                    let x = (p[0] - 0.5 + jitter[0]) * sx;
                    let y = (p[1] - 0.5 + jitter[1]) * sy;
                    let x = x + shear * y;
                    let (xr, yr) = (c * x - s * y, s * x + c * y);
                    [(xr + 0.5 + tx) * 20.0 + 4.0, (yr + 0.5 + ty) * 20.0 + 4.0]
                })
                .collect()
        })
        .collect();

    let r_px = radius * 20.0;
    let mut out = vec![0u8; SIDE * SIDE];
    for i in 0..SIDE {
        for j in 0..SIDE {
            let p = [j as f64 + 0.5, i as f64 + 0.5];
            let d = strokes
                .iter()
                .flat_map(|s| s.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                .fold(f64::INFINITY, f64::min);
            let v = (r_px - d + 0.5).clamp(0.0, 1.0);
            out[i * SIDE + j] = (v * 255.0).round() as u8;
        }
    }
    out
}

/// `n` digits with labels cycling through 0-9 in shuffled order.
pub fn synthetic_digits(n: usize, seed: u64) -> (IdxImages, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let d: u8 = rng.random_range(0..10);
        pixels.extend(render_digit(d, &mut rng));
        labels.push(d);
    }
    (
        IdxImages {
            rows: SIDE,
            cols: SIDE,
            pixels,
        },
        labels,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_inked() {
        let (a, la) = synthetic_digits(20, 3);
        let (b, lb) = synthetic_digits(20, 3);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        for i in 0..a.len() {
            let ink: u32 = a.image(i).iter().map(|&v| v as u32).sum();
            assert!(ink > 255 * 20, "digit {} nearly empty", la[i]);
            // border rows stay blank like MNIST
            assert!(a.image(i)[..SIDE].iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn digits_are_distinguishable() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = render_digit(1, &mut rng);
        let eight = render_digit(8, &mut rng);
        let ink = |v: &[u8]| v.iter().map(|&x| x as u32).sum::<u32>();
        assert!(ink(&eight) > ink(&one));
    }
}
