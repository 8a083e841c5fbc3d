//! Correlation-driven attribute ordering and RGB grid placement.
//!
//! Attributes are ordered so that the sum of correlations between
//! neighbours in the order is as large as possible (a maximum-weight
//! Hamiltonian path over the correlation matrix). The expanded channels are
//! then written in that order into a square pixel grid, filling R, G and B of
//! each pixel before moving on to the next pixel in raster order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationMatrix;
use crate::encoding::{ChannelVector, EncoderModel};
use crate::error::{Error, Result};

/// Attribute counts up to this size are ordered by exhaustive search.
pub const EXACT_ORDER_LIMIT: usize = 9;

const IMPROVEMENT_EPS: f64 = 1e-12;

fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::Permutation(format!(
            "order has {} entries, expected {n}",
            order.len()
        )));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Permutation(format!(
                "index {i} is out of range or repeated"
            )));
        }
    }
    Ok(())
}

fn path_score(order: &[usize], m: &CorrelationMatrix) -> f64 {
    order.windows(2).map(|w| m.get(w[0], w[1])).sum()
}

/// Sum of correlations over consecutive attributes of `order`.
pub fn adjacency_score(order: &[usize], m: &CorrelationMatrix) -> Result<f64> {
    check_permutation(order, m.len())?;
    Ok(path_score(order, m))
}

/// Rearranges `p` into the next lexicographic permutation; false at the last one.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len())
        .rev()
        .find(|&j| p[j] > p[i - 1])
        .expect("pivot exists");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

fn exhaustive_order(m: &CorrelationMatrix) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..m.len()).collect();
    let mut best = perm.clone();
    let mut best_score = path_score(&perm, m);
    while next_permutation(&mut perm) {
        let s = path_score(&perm, m);
        if s > best_score {
            best_score = s;
            best.copy_from_slice(&perm);
        }
    }
    best
}

/// Endpoint-extension greedy path, seeded with the strongest pair.
pub fn greedy_order(m: &CorrelationMatrix) -> Vec<usize> {
    let n = m.len();
    if n < 2 {
        return (0..n).collect();
    }
    let (mut a, mut b, mut best) = (0, 1, f64::NEG_INFINITY);
    for i in 0..n {
        for j in i + 1..n {
            if m.get(i, j) > best {
                (a, b, best) = (i, j, m.get(i, j));
            }
        }
    }
    let mut path = std::collections::VecDeque::with_capacity(n);
    path.push_back(a);
    path.push_back(b);
    let mut placed = vec![false; n];
    placed[a] = true;
    placed[b] = true;

    let best_for = |end: usize, placed: &[bool]| -> (usize, f64) {
        let mut pick = (usize::MAX, f64::NEG_INFINITY);
        for c in (0..n).filter(|&c| !placed[c]) {
            if m.get(end, c) > pick.1 {
                pick = (c, m.get(end, c));
            }
        }
        pick
    };
    while path.len() < n {
        let front = best_for(*path.front().expect("non-empty"), &placed);
        let back = best_for(*path.back().expect("non-empty"), &placed);
        // higher value wins; equal values go to the smaller index, then the back end
        let use_front = front.1 > back.1 || (front.1 == back.1 && front.0 < back.0);
        if use_front {
            placed[front.0] = true;
            path.push_front(front.0);
        } else {
            placed[back.0] = true;
            path.push_back(back.0);
        }
    }
    path.into()
}

/// Best-improvement segment reversal until no reversal gains.
pub fn two_opt(order: &mut [usize], m: &CorrelationMatrix) {
    let n = order.len();
    if n < 3 {
        return;
    }
    loop {
        let mut best = (0, 0, IMPROVEMENT_EPS);
        for i in 0..n - 1 {
            for j in i + 1..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let mut gain = 0.0;
                if i > 0 {
                    gain += m.get(order[i - 1], order[j]) - m.get(order[i - 1], order[i]);
                }
                if j + 1 < n {
                    gain += m.get(order[i], order[j + 1]) - m.get(order[j], order[j + 1]);
                }
                if gain > best.2 {
                    best = (i, j, gain);
                }
            }
        }
        if best.2 <= IMPROVEMENT_EPS || best.0 == best.1 {
            return;
        }
        order[best.0..=best.1].reverse();
    }
}

/// Heuristic maximizer of [`adjacency_score`]; exact for small matrices.
pub fn order_attributes(m: &CorrelationMatrix) -> Vec<usize> {
    let n = m.len();
    if n <= 2 {
        return (0..n).collect();
    }
    if n <= EXACT_ORDER_LIMIT {
        return exhaustive_order(m);
    }
    let mut greedy = greedy_order(m);
    two_opt(&mut greedy, m);
    let mut identity: Vec<usize> = (0..n).collect();
    two_opt(&mut identity, m);
    if path_score(&identity, m) > path_score(&greedy, m) {
        identity
    } else {
        greedy
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rgb {
    R,
    G,
    B,
}

impl Rgb {
    const ALL: [Rgb; 3] = [Rgb::R, Rgb::G, Rgb::B];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Slot {
    pub row: usize,
    pub col: usize,
    pub channel: Rgb,
}

impl Slot {
    fn from_linear(i: usize, width: usize) -> Slot {
        let pixel = i / 3;
        Slot {
            row: pixel / width,
            col: pixel % width,
            channel: Rgb::ALL[i % 3],
        }
    }

    /// Offset into a row-major `H × W × 3` buffer.
    pub fn linear(&self, width: usize) -> usize {
        (self.row * width + self.col) * 3 + self.channel.index()
    }
}

/// Frozen mapping from expanded channels to grid slots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutPlan {
    attribute_order: Vec<usize>,
    height: usize,
    width: usize,
    /// Indexed by expanded channel, in encoder order.
    channel_slots: Vec<Slot>,
    padding_slots: Vec<Slot>,
}

/// Side of the smallest square grid holding `channels` values, three per pixel.
pub fn grid_side(channels: usize) -> usize {
    let pixels = channels.div_ceil(3);
    let mut side = (pixels as f64).sqrt() as usize;
    while side * side < pixels {
        side += 1;
    }
    while side > 0 && (side - 1) * (side - 1) >= pixels {
        side -= 1;
    }
    side
}

pub fn build_layout(m: &EncoderModel, order: &[usize]) -> Result<LayoutPlan> {
    check_permutation(order, m.num_attributes())?;
    let channels = m.num_channels();
    if channels == 0 {
        return Err(Error::Geometry("encoder has no channels".into()));
    }
    let side = grid_side(channels);
    let mut channel_slots = vec![
        Slot {
            row: 0,
            col: 0,
            channel: Rgb::R
        };
        channels
    ];
    let mut position = 0;
    for &a in order {
        for ch in m.block(a) {
            channel_slots[ch] = Slot::from_linear(position, side);
            position += 1;
        }
    }
    let padding_slots = (position..side * side * 3)
        .map(|i| Slot::from_linear(i, side))
        .collect();
    Ok(LayoutPlan {
        attribute_order: order.to_vec(),
        height: side,
        width: side,
        channel_slots,
        padding_slots,
    })
}

impl LayoutPlan {
    pub fn attribute_order(&self) -> &[usize] {
        &self.attribute_order
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channel_slots(&self) -> &[Slot] {
        &self.channel_slots
    }

    pub fn padding_slots(&self) -> &[Slot] {
        &self.padding_slots
    }

    pub fn num_slots(&self) -> usize {
        self.height * self.width * 3
    }

    /// Checks the plan against the encoder it is meant to serve.
    pub fn validate(&self, m: &EncoderModel) -> Result<()> {
        let rebuilt = build_layout(m, &self.attribute_order)?;
        if &rebuilt != self {
            return Err(Error::format(
                "layout plan",
                "slot table does not match the encoder and attribute order",
            ));
        }
        let mut used = vec![false; self.num_slots()];
        for s in self.channel_slots.iter().chain(&self.padding_slots) {
            if s.row >= self.height || s.col >= self.width {
                return Err(Error::format(
                    "layout plan",
                    format!("slot {s:?} outside grid"),
                ));
            }
            if std::mem::replace(&mut used[s.linear(self.width)], true) {
                return Err(Error::format(
                    "layout plan",
                    format!("slot {s:?} used twice"),
                ));
            }
        }
        if used.iter().any(|u| !u) {
            return Err(Error::format("layout plan", "grid has unassigned slots"));
        }
        Ok(())
    }
}

/// One record as an `H × W × 3` grid of 8-bit values, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
    pub label: Option<usize>,
}

impl ImageTensor {
    pub fn zeros(height: usize, width: usize) -> Self {
        ImageTensor {
            height,
            width,
            pixels: vec![0; height * width * 3],
            label: None,
        }
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> u8 {
        self.pixels[(row * self.width + col) * 3 + channel]
    }
}

pub fn render_record(cv: &ChannelVector, plan: &LayoutPlan) -> Result<ImageTensor> {
    if cv.len() != plan.channel_slots.len() {
        return Err(Error::LengthMismatch {
            expected: plan.channel_slots.len(),
            found: cv.len(),
        });
    }
    let mut img = ImageTensor::zeros(plan.height, plan.width);
    for (&v, slot) in cv.as_slice().iter().zip(&plan.channel_slots) {
        img.pixels[slot.linear(plan.width)] = v;
    }
    Ok(img)
}

/// Reads channel values back out of a rendered image.
pub fn read_channels(img: &ImageTensor, plan: &LayoutPlan) -> Result<ChannelVector> {
    if img.height != plan.height || img.width != plan.width {
        return Err(Error::Geometry(format!(
            "image is {}x{}, plan is {}x{}",
            img.height, img.width, plan.height, plan.width
        )));
    }
    Ok(ChannelVector(
        plan.channel_slots
            .iter()
            .map(|s| img.pixels[s.linear(plan.width)])
            .collect(),
    ))
}

/// 8-bit truecolor, non-interlaced PNG.
pub fn write_png<W: Write>(img: &ImageTensor, writer: W) -> Result<()> {
    if img.pixels.len() != img.height * img.width * 3 || img.height == 0 || img.width == 0 {
        return Err(Error::Geometry(format!(
            "cannot write a {}x{} image with {} bytes",
            img.height,
            img.width,
            img.pixels.len()
        )));
    }
    let mut enc = png::Encoder::new(writer, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header()?;
    w.write_image_data(&img.pixels)?;
    w.finish()?;
    Ok(())
}

pub fn export_png(img: &ImageTensor, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_png(img, &mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}
