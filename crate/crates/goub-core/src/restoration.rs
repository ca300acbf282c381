//! Toy image-restoration harness: synthetic degradations, end-to-end
//! restoration through a trained predictor, and PSNR/SSIM metrics.
//!
//! Images are grayscale `H x W` states with values in `[0, 1]`, flattened
//! row-major. Files are binary PGM (P5, maxval 255) with a linear value
//! mapping.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;

use crate::bridge::BridgeModel;
use crate::error::{Error, Result};
use crate::predictor::NoisePredictor;
use crate::rng::Rng;
use crate::samplers::{sample_reverse, SamplerKind, ScoreSource};
use crate::state::State;

/// PSNR reported for identical images instead of infinity.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Degradation {
    /// Zero out a random pixel fraction.
    Mask { fraction: f64 },
    /// Box-average by `factor`, then nearest-neighbor upsample back.
    DownUp { factor: usize },
    /// Additive fixed-direction stripes, clamped to `[0, 1]`.
    Stripes { period: usize, amplitude: f64 },
}

#[derive(Debug, Clone)]
pub struct ImagePair {
    pub hq: State,
    pub lq: State,
    pub degradation: Degradation,
}

fn image_dims(img: &State) -> Result<(usize, usize)> {
    match img.shape() {
        [h, w] => Ok((*h, *w)),
        other => Err(Error::ShapeMismatch {
            expected: vec![0, 0],
            got: other.to_vec(),
        }),
    }
}

/// Applies a degradation; deterministic given the RNG state.
pub fn degrade(hq: &State, kind: &Degradation, rng: &mut Rng) -> Result<State> {
    let (h, w) = image_dims(hq)?;
    match *kind {
        Degradation::Mask { fraction } => {
            if !(0.0..1.0).contains(&fraction) {
                return Err(Error::invalid("mask.fraction", "must be in [0, 1)"));
            }
            let mut out = hq.clone();
            let total = h * w;
            let to_mask = (fraction * total as f64).round() as usize;
            // partial Fisher-Yates over pixel indices
            let mut indices: Vec<usize> = (0..total).collect();
            for i in 0..to_mask.min(total) {
                let j = rng.gen_range(i..total);
                indices.swap(i, j);
                out.data_mut()[indices[i]] = 0.0;
            }
            Ok(out)
        }
        Degradation::DownUp { factor } => {
            if factor == 0 || h % factor != 0 || w % factor != 0 {
                return Err(Error::invalid(
                    "downup.factor",
                    format!("factor must divide image dims {h}x{w}"),
                ));
            }
            if factor == 1 {
                return Ok(hq.clone());
            }
            let (bh, bw) = (h / factor, w / factor);
            let mut out = State::zeros_like(hq);
            for by in 0..bh {
                for bx in 0..bw {
                    let mut acc = 0.0;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += hq.data()[(by * factor + dy) * w + bx * factor + dx];
                        }
                    }
                    let mean = acc / (factor * factor) as f64;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            out.data_mut()[(by * factor + dy) * w + bx * factor + dx] = mean;
                        }
                    }
                }
            }
            Ok(out)
        }
        Degradation::Stripes { period, amplitude } => {
            if period == 0 {
                return Err(Error::invalid("stripes.period", "must be >= 1"));
            }
            let mut out = hq.clone();
            for y in 0..h {
                for x in 0..w {
                    if x % period == 0 {
                        out.data_mut()[y * w + x] += amplitude;
                    }
                }
            }
            Ok(out.clamp(0.0, 1.0))
        }
    }
}

/// Peak signal-to-noise ratio in dB; identical inputs return the cap.
pub fn psnr(a: &State, b: &State, max_val: f64) -> Result<f64> {
    a.check_same_shape(b)?;
    let mse = a.mean_sq_diff(b);
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean local structural similarity with a uniform window.
pub fn ssim(a: &State, b: &State, window: usize, k1: f64, k2: f64) -> Result<f64> {
    a.check_same_shape(b)?;
    let (h, w) = image_dims(a)?;
    if window % 2 == 0 || window > h.min(w) {
        return Err(Error::invalid(
            "window",
            format!("must be odd and <= min dim {}", h.min(w)),
        ));
    }
    let l = 1.0;
    let c1 = (k1 * l) * (k1 * l);
    let c2 = (k2 * l) * (k2 * l);
    let half = window / 2;
    let count = (window * window) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for cy in half..h - half {
        for cx in half..w - half {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..window {
                for dx in 0..window {
                    let idx = (cy - half + dy) * w + (cx - half + dx);
                    let va = a.data()[idx];
                    let vb = b.data()[idx];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            let mu_a = sa / count;
            let mu_b = sb / count;
            let var_a = saa / count - mu_a * mu_a;
            let var_b = sbb / count - mu_b * mu_b;
            let cov = sab / count - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// Runs the chosen sampler from the degraded image and clamps to `[0, 1]`.
pub fn restore(
    lq: &State,
    predictor: &NoisePredictor,
    bridge: &BridgeModel,
    sampler: SamplerKind,
    rng: Option<&mut Rng>,
) -> Result<State> {
    if predictor.state_dim() != lq.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![predictor.state_dim()],
            got: vec![lq.len()],
        });
    }
    let source = ScoreSource::Predictor(predictor);
    let out = sample_reverse(bridge, lq, &source, sampler, rng)?;
    Ok(out.clamp(0.0, 1.0))
}

/// Writes a `[0, 1]` grayscale state as binary PGM (P5, maxval 255).
pub fn write_pgm(path: &Path, img: &State) -> Result<()> {
    let (h, w) = image_dims(img)?;
    let mut buf = format!("P5\n{w} {h}\n255\n").into_bytes();
    for &v in img.data() {
        buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a binary PGM into a `[0, 1]` grayscale state.
pub fn read_pgm(path: &Path) -> Result<State> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::invalid("pgm", "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P5" {
        return Err(Error::invalid("pgm", "not a binary PGM (P5) file"));
    }
    let w: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::invalid("pgm", "bad width"))?;
    let h: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::invalid("pgm", "bad height"))?;
    let maxval: usize = token(&bytes)?
        .parse()
        .map_err(|_| Error::invalid("pgm", "bad maxval"))?;
    if maxval != 255 {
        return Err(Error::invalid("pgm", "only maxval 255 is supported"));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + w * h {
        return Err(Error::invalid("pgm", "truncated pixel data"));
    }
    let data = bytes[pos..pos + w * h]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    State::new(data, vec![h, w])
}

/// Deterministic smooth test images: mixtures of Gaussian bumps on a
/// gradient background, seeded per image index.
pub fn synthetic_image(size: usize, seed: u64, index: u64) -> State {
    let mut rng = crate::rng::stream_rng(seed, index);
    let n_bumps = rng.gen_range(2..5);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..n_bumps)
        .map(|_| {
            (
                rng.gen_range(0.0..size as f64),
                rng.gen_range(0.0..size as f64),
                rng.gen_range(size as f64 / 8.0..size as f64 / 3.0),
                rng.gen_range(0.3..0.9),
            )
        })
        .collect();
    let gx = rng.gen_range(-0.3..0.3) / size as f64;
    let gy = rng.gen_range(-0.3..0.3) / size as f64;
    let base = rng.gen_range(0.1..0.4);
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let mut v = base + gx * x as f64 + gy * y as f64;
            for &(cx, cy, width, amp) in &bumps {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                v += amp * (-d2 / (2.0 * width * width)).exp();
            }
            data.push(v.clamp(0.0, 1.0));
        }
    }
    State::new(data, vec![size, size]).expect("sized construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::root_rng;

    fn ramp_image(size: usize) -> State {
        let data = (0..size * size)
            .map(|i| (i % size) as f64 / size as f64)
            .collect();
        State::new(data, vec![size, size]).unwrap()
    }

    #[test]
    fn mask_zero_fraction_is_identity() {
        let img = ramp_image(8);
        let out = degrade(&img, &Degradation::Mask { fraction: 0.0 }, &mut root_rng(1)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn mask_zeroes_requested_fraction() {
        let img = State::filled(1.0, &[16, 16]);
        let out = degrade(&img, &Degradation::Mask { fraction: 0.5 }, &mut root_rng(1)).unwrap();
        let zeros = out.data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, 128);
    }

    #[test]
    fn degrade_deterministic_given_seed() {
        let img = ramp_image(16);
        let kind = Degradation::Mask { fraction: 0.3 };
        let a = degrade(&img, &kind, &mut root_rng(5)).unwrap();
        let b = degrade(&img, &kind, &mut root_rng(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn downup_identity_and_constant_fixed_point() {
        let img = ramp_image(8);
        let out = degrade(&img, &Degradation::DownUp { factor: 1 }, &mut root_rng(1)).unwrap();
        assert_eq!(out, img);
        let flat = State::filled(0.42, &[8, 8]);
        for factor in [2usize, 4] {
            let out = degrade(&flat, &Degradation::DownUp { factor }, &mut root_rng(1)).unwrap();
            assert!(out.max_abs_diff(&flat) < 1e-15);
        }
        assert!(degrade(&img, &Degradation::DownUp { factor: 3 }, &mut root_rng(1)).is_err());
    }

    #[test]
    fn stripes_clamp_to_unit_range() {
        let img = State::filled(0.9, &[8, 8]);
        let out = degrade(
            &img,
            &Degradation::Stripes {
                period: 2,
                amplitude: 0.5,
            },
            &mut root_rng(1),
        )
        .unwrap();
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(out.data()[0], 1.0);
        assert_eq!(out.data()[1], 0.9);
    }

    #[test]
    fn psnr_values() {
        let a = State::filled(0.0, &[4, 4]);
        let b = State::filled(0.5, &[4, 4]);
        let got = psnr(&a, &b, 1.0).unwrap();
        assert!((got - 6.0206).abs() < 1e-4);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        // mse 0.01 -> 20 dB
        let c = State::filled(0.1, &[4, 4]);
        assert!((psnr(&a, &c, 1.0).unwrap() - 20.0).abs() < 1e-10);
    }

    #[test]
    fn psnr_monotone_in_mse() {
        let a = ramp_image(8);
        let mut prev = f64::INFINITY;
        for scale in [0.01, 0.05, 0.1, 0.2] {
            let mut b = a.clone();
            for (i, v) in b.data_mut().iter_mut().enumerate() {
                *v += scale * if i % 2 == 0 { 1.0 } else { -1.0 };
            }
            let p = psnr(&a, &b, 1.0).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn ssim_identity_symmetry_and_constant_case() {
        let a = ramp_image(16);
        assert!((ssim(&a, &a, 7, 0.01, 0.03).unwrap() - 1.0).abs() < 1e-12);
        let b = degrade(&a, &Degradation::Mask { fraction: 0.2 }, &mut root_rng(2)).unwrap();
        let ab = ssim(&a, &b, 7, 0.01, 0.03).unwrap();
        let ba = ssim(&b, &a, 7, 0.01, 0.03).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
        // constant 0 vs constant 1: constant-dominated small value
        let zero = State::filled(0.0, &[8, 8]);
        let one = State::filled(1.0, &[8, 8]);
        let s = ssim(&zero, &one, 3, 0.01, 0.03).unwrap();
        assert!(s < 0.01, "ssim {s}");
        let expect = 1e-4 / (1.0 + 1e-4);
        assert!((s - expect).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_bad_window() {
        let a = ramp_image(8);
        assert!(ssim(&a, &a, 4, 0.01, 0.03).is_err());
        assert!(ssim(&a, &a, 9, 0.01, 0.03).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let dir = std::env::temp_dir().join("goub-core-pgm-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("img.pgm");
        let img = ramp_image(16);
        write_pgm(&path, &img).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        // quantized to 1/255
        assert!(img.max_abs_diff(&back) <= 0.5 / 255.0 + 1e-12);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn synthetic_images_deterministic_and_in_range() {
        let a = synthetic_image(16, 7, 3);
        let b = synthetic_image(16, 7, 3);
        assert_eq!(a, b);
        let c = synthetic_image(16, 7, 4);
        assert_ne!(a, c);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
