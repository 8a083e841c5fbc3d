//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the library's math; each function is a direct
//! transcription of the textbook formula.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use vizpipe::cnn::{self, CnnConfig, CnnModel, Shape, SpatialLayer};
use vizpipe::correlation::CorrelationMatrix;
use vizpipe::layout::ImageTensor;

fn all_equal(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[0] == w[1])
}

/// Zero when either column is constant.
pub fn oracle_pearson_abs(x: &[f64], y: &[f64]) -> f64 {
    if all_equal(x) || all_equal(y) {
        return 0.0;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    (cov / (vx * vy).sqrt()).abs()
}

pub fn oracle_cramers_v(a: &[String], b: &[String]) -> f64 {
    let n = a.len() as f64;
    let mut joint: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    let mut ra: BTreeMap<&str, f64> = BTreeMap::new();
    let mut cb: BTreeMap<&str, f64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *ra.entry(x).or_default() += 1.0;
        *cb.entry(y).or_default() += 1.0;
    }
    let k = ra.len().min(cb.len());
    if k < 2 {
        return 0.0;
    }
    let mut chi2 = 0.0;
    for (x, nx) in &ra {
        for (y, ny) in &cb {
            let e = nx * ny / n;
            let o = joint.get(&(*x, *y)).copied().unwrap_or(0.0);
            chi2 += (o - e).powi(2) / e;
        }
    }
    (chi2 / (n * (k - 1) as f64)).sqrt()
}

/// Zero when the numeric column is constant.
pub fn oracle_eta(cat: &[String], num: &[f64]) -> f64 {
    if all_equal(num) {
        return 0.0;
    }
    let n = num.len() as f64;
    let mean = num.iter().sum::<f64>() / n;
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (c, v) in cat.iter().zip(num) {
        groups.entry(c).or_default().push(*v);
    }
    let ss_total: f64 = num.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_total == 0.0 {
        return 0.0;
    }
    let ss_between: f64 = groups
        .values()
        .map(|g| {
            let gm = g.iter().sum::<f64>() / g.len() as f64;
            g.len() as f64 * (gm - mean).powi(2)
        })
        .sum();
    (ss_between / ss_total).sqrt()
}

/// Symmetric, unit diagonal, off-diagonal uniform in [0, 1).
pub fn random_correlation(n: usize, rng: &mut ChaCha8Rng) -> CorrelationMatrix {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
        for j in i + 1..n {
            let x: f64 = rng.random();
            v[i * n + j] = x;
            v[j * n + i] = x;
        }
    }
    let names = (0..n).map(|i| format!("a{i}")).collect();
    CorrelationMatrix::new(names, v).unwrap()
}

pub fn path_score(order: &[usize], m: &CorrelationMatrix) -> f64 {
    order.windows(2).map(|w| m.get(w[0], w[1])).sum()
}

/// Best path score over all n! orders (Heap's algorithm).
pub fn brute_force_best(m: &CorrelationMatrix) -> f64 {
    let n = m.len();
    let mut p: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    let mut best = path_score(&p, m);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            best = best.max(path_score(&p, m));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ 0xEDB8_8320
            } else {
                crc >> 1
            };
        }
    }
    !crc
}

fn paeth(a: u8, b: u8, c: u8) -> u8 {
    let p = a as i16 + b as i16 - c as i16;
    let (pa, pb, pc) = (
        (p - a as i16).abs(),
        (p - b as i16).abs(),
        (p - c as i16).abs(),
    );
    if pa <= pb && pa <= pc {
        a
    } else if pb <= pc {
        b
    } else {
        c
    }
}

/// Minimal decoder for 8-bit truecolor, non-interlaced PNGs.
///
/// Returns (width, height, raw RGB bytes). Chunk CRCs are verified.
pub fn decode_png_rgb8(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), String> {
    const SIG: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];
    if bytes.len() < 8 || bytes[..8] != SIG {
        return Err("bad signature".into());
    }
    let mut pos = 8;
    let (mut width, mut height) = (0usize, 0usize);
    let mut idat = Vec::new();
    let mut seen_end = false;
    while pos + 12 <= bytes.len() {
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let kind = &bytes[pos + 4..pos + 8];
        let data = &bytes[pos + 8..pos + 8 + len];
        let crc = u32::from_be_bytes(bytes[pos + 8 + len..pos + 12 + len].try_into().unwrap());
        if crc32(&bytes[pos + 4..pos + 8 + len]) != crc {
            return Err(format!("crc mismatch in {}", String::from_utf8_lossy(kind)));
        }
        match kind {
            b"IHDR" => {
                width = u32::from_be_bytes(data[0..4].try_into().unwrap()) as usize;
                height = u32::from_be_bytes(data[4..8].try_into().unwrap()) as usize;
                if data[8] != 8 || data[9] != 2 || data[12] != 0 {
                    return Err("expected 8-bit RGB, non-interlaced".into());
                }
            }
            b"IDAT" => idat.extend_from_slice(data),
            b"IEND" => seen_end = true,
            _ => {}
        }
        pos += 12 + len;
    }
    if !seen_end {
        return Err("missing IEND".into());
    }
    let raw = miniz_oxide::inflate::decompress_to_vec_zlib(&idat).map_err(|e| format!("{e:?}"))?;
    let stride = width * 3;
    if raw.len() != height * (stride + 1) {
        return Err("wrong decompressed size".into());
    }
    let mut out = vec![0u8; height * stride];
    for y in 0..height {
        let filter = raw[y * (stride + 1)];
        let line = &raw[y * (stride + 1) + 1..(y + 1) * (stride + 1)];
        for x in 0..stride {
            let a = if x >= 3 { out[y * stride + x - 3] } else { 0 };
            let b = if y > 0 { out[(y - 1) * stride + x] } else { 0 };
            let c = if x >= 3 && y > 0 {
                out[(y - 1) * stride + x - 3]
            } else {
                0
            };
            let pred = match filter {
                0 => 0,
                1 => a,
                2 => b,
                3 => ((a as u16 + b as u16) / 2) as u8,
                4 => paeth(a, b, c),
                f => return Err(format!("unknown filter {f}")),
            };
            out[y * stride + x] = line[x].wrapping_add(pred);
        }
    }
    Ok((width, height, out))
}

pub fn random_image(h: usize, w: usize, label: Option<usize>, rng: &mut ChaCha8Rng) -> ImageTensor {
    ImageTensor {
        height: h,
        width: w,
        pixels: (0..h * w * 3).map(|_| rng.random()).collect(),
        label,
    }
}

pub fn sha256_file(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

/// A small random architecture for inputs of at most 8×8.
pub fn random_tiny_config(rng: &mut ChaCha8Rng) -> (CnnConfig, Shape) {
    let input = Shape::new(rng.random_range(4..=8), rng.random_range(4..=8), 3);
    let mut layers = vec![SpatialLayer::Conv {
        filters: rng.random_range(1..=3),
        kernel: rng.random_range(1..=3),
        stride: rng.random_range(1..=2),
    }];
    if rng.random_bool(0.5) {
        layers.push(SpatialLayer::MaxPool {
            window: 2,
            stride: rng.random_range(1..=2),
        });
    }
    if rng.random_bool(0.5) {
        layers.push(SpatialLayer::Conv {
            filters: 2,
            kernel: 1,
            stride: 1,
        });
    }
    let dense_units = if rng.random_bool(0.5) {
        vec![rng.random_range(2..=5)]
    } else {
        vec![]
    };
    let cfg = CnnConfig {
        layers,
        dense_units,
        num_classes: rng.random_range(2..=4),
        seed: rng.random(),
        ..CnnConfig::default()
    }
    .trimmed_to(input);
    (cfg, input)
}

/// Replaces every parameter, biases included, with an N(0, 0.5²) draw.
///
/// Zero biases over dead units put pre-activations exactly on the ReLU kink,
/// where the loss has no derivative to check against.
pub fn randomize_parameters(model: &mut CnnModel, rng: &mut ChaCha8Rng) {
    let p: Vec<f64> = (0..model.num_parameters())
        .map(|_| 0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    model.set_parameters(&p).unwrap();
}

pub struct GradientCheck {
    /// Largest `|a − n| / max(|a|, |n|, 1e-6)` over all parameters. The floor
    /// keeps gradients that are zero up to rounding from dividing noise by noise.
    pub worst_relative_error: f64,
    /// Some parameter's ±ε window straddles a ReLU or max-pool switch: the
    /// one-sided differences disagree by more than curvature can explain.
    pub kink_in_window: bool,
}

/// Backprop against central differences, parameter by parameter.
pub fn gradient_check(model: &CnnModel, batch: &[ImageTensor], eps: f64) -> GradientCheck {
    let (center, grads) = cnn::loss_and_gradients(batch, model).unwrap();
    let analytic = grads.flatten();
    let params = model.parameters();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let mut kink = false;
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] = params[i] + eps;
        probe.set_parameters(&p).unwrap();
        let (plus, _) = cnn::loss_and_gradients(batch, &probe).unwrap();
        p[i] = params[i] - eps;
        probe.set_parameters(&p).unwrap();
        let (minus, _) = cnn::loss_and_gradients(batch, &probe).unwrap();
        let numeric = (plus - minus) / (2.0 * eps);
        let (forward, backward) = ((plus - center) / eps, (center - minus) / eps);
        kink |= (forward - backward).abs() > 1e-3 * forward.abs().max(backward.abs()).max(1.0);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    GradientCheck {
        worst_relative_error: worst,
        kink_in_window: kink,
    }
}
