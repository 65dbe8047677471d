use crate::error::{Error, Result};
use crate::phosphene::{ArraySpec, Pulse, Stimulus, REFERENCE_FREQUENCY_HZ};
use crate::target::{area_resample, TargetImage};

/// The conventional encoder: average-pool the target to the array
/// resolution and scale each cell's gray level linearly to amplitude.
pub fn naive_encode(target: &TargetImage, array: &ArraySpec, amp_max_ua: f64) -> Result<Stimulus> {
    if !(amp_max_ua > 0.0) || !amp_max_ua.is_finite() {
        return Err(Error::InvalidParam(format!("amp_max must be positive, got {amp_max_ua}")));
    }
    let pooled = area_resample(&target.pixels, target.height, target.width, array.rows, array.cols);
    Ok(Stimulus {
        pulses: pooled
            .into_iter()
            .map(|v| Pulse::new(v * amp_max_ua, REFERENCE_FREQUENCY_HZ))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn target(px: Vec<f64>, h: usize, w: usize) -> TargetImage {
        TargetImage::new(h, w, px, "number one").unwrap()
    }

    #[test]
    fn black_and_gray() {
        let spec = ArraySpec::default();
        let s = naive_encode(&target(vec![0.0; 256], 16, 16), &spec, 60.0).unwrap();
        assert!(s.pulses.iter().all(|p| p.amplitude_ua == 0.0));
        let s = naive_encode(&target(vec![0.5; 256], 16, 16), &spec, 60.0).unwrap();
        assert!(s.pulses.iter().all(|p| (p.amplitude_ua - 30.0).abs() < 1e-12));
        assert!(s.pulses.iter().all(|p| p.frequency_hz == REFERENCE_FREQUENCY_HZ));
    }

    #[test]
    fn one_bright_quadrant() {
        let spec = ArraySpec { rows: 2, cols: 2, pitch_um: 400.0 };
        let mut px = vec![0.0; 16];
        for i in 0..2 {
            for j in 2..4 {
                px[i * 4 + j] = 1.0;
            }
        }
        let s = naive_encode(&target(px, 4, 4), &spec, 10.0).unwrap();
        let amps: Vec<f64> = s.pulses.iter().map(|p| p.amplitude_ua).collect();
        assert_eq!(amps, vec![0.0, 10.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_nonpositive_scale() {
        assert!(naive_encode(&target(vec![0.0; 4], 2, 2), &ArraySpec::default(), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn pixelwise_order_is_preserved(
            a in prop::collection::vec(0.0f64..1.0, 256),
            bump in prop::collection::vec(0.0f64..0.5, 256),
        ) {
            let b: Vec<f64> = a.iter().zip(&bump).map(|(x, d)| x + d).collect();
            let spec = ArraySpec::default();
            let sa = naive_encode(&target(a, 16, 16), &spec, 60.0).unwrap();
            let sb = naive_encode(&target(b, 16, 16), &spec, 60.0).unwrap();
            for (pa, pb) in sa.pulses.iter().zip(&sb.pulses) {
                prop_assert!(pb.amplitude_ua >= pa.amplitude_ua - 1e-12);
            }
        }
    }
}
