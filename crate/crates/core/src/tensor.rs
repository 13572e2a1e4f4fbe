//! Numeric containers and the image-space primitives shared by every stage:
//! channel-major logit tensors, 2-D grids, boxes, mask patches, bilinear
//! resampling and per-pixel channel reductions.

use std::fmt::Debug;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Side length of an instance mask patch.
pub const MASK_SIDE: usize = 28;

/// Storage element of logit tensors. Reductions always accumulate in `f64`.
pub trait Scalar: Float + Debug + Default + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self
    }
}

/// Row-major 2-D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(invalid(format!(
                "grid data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Channel-major `C x H x W` tensor of finite logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTensor<T = f32> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> LogitTensor<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(invalid(format!(
                "tensor dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(invalid(format!(
                "tensor data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite logit at flat index {pos}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![T::zero(); channels * height * width])
    }

    /// Stacks equally sized planes into a tensor.
    pub fn from_planes(planes: &[Grid<T>]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| invalid("cannot stack zero planes"))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            if p.height() != h || p.width() != w {
                return Err(invalid("plane dims differ"));
            }
            data.extend_from_slice(p.as_slice());
        }
        Self::new(planes.len(), h, w, data)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn channel(&self, k: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn at(&self, k: usize, row: usize, col: usize) -> T {
        self.data[(k * self.height + row) * self.width + col]
    }

    pub fn plane(&self, k: usize) -> Grid<T> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.channel(k).to_vec(),
        }
    }

    pub fn same_dims<U>(&self, other: &LogitTensor<U>) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    /// Converts the element type, rounding through `f64`.
    pub fn cast<U: Scalar>(&self) -> LogitTensor<U> {
        LogitTensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.into_f64()))
                .collect(),
        }
    }
}

/// Axis-aligned box in real pixel coordinates, half-open on the high side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

/// Integer pixel rectangle `[row0, row1) x [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelRect {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl PixelRect {
    #[inline]
    pub fn height(&self) -> usize {
        self.row1.saturating_sub(self.row0)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.col1.saturating_sub(self.col0)
    }

    #[inline]
    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row1 && col >= self.col0 && col < self.col1
    }

    /// Intersection; empty rectangles collapse to a zero-area rect.
    pub fn intersect(&self, other: &PixelRect) -> PixelRect {
        let row0 = self.row0.max(other.row0);
        let col0 = self.col0.max(other.col0);
        PixelRect {
            row0,
            col0,
            row1: self.row1.min(other.row1).max(row0),
            col1: self.col1.min(other.col1).max(col0),
        }
    }
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = Self { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite()) {
            return Err(invalid(format!("non-finite box {self:?}")));
        }
        if self.x0 > self.x1 || self.y0 > self.y1 {
            return Err(invalid(format!("inverted box {self:?}")));
        }
        Ok(())
    }

    pub fn from_rect(rect: &PixelRect) -> Self {
        Self {
            x0: rect.col0 as f64,
            y0: rect.row0 as f64,
            x1: rect.col1 as f64,
            y1: rect.row1 as f64,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let ih = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    /// Pixels whose centers fall inside the box, clamped to the image.
    pub fn rasterize(&self, height: usize, width: usize) -> PixelRect {
        let span = |lo: f64, hi: f64, limit: usize| {
            let clamp = |v: f64| v.max(0.0).min(limit as f64) as usize;
            let start = clamp((lo - 0.5).ceil());
            let end = clamp((hi - 0.5).ceil()).max(start);
            (start, end)
        };
        let (row0, row1) = span(self.y0, self.y1, height);
        let (col0, col1) = span(self.x0, self.x1, width);
        PixelRect {
            row0,
            col0,
            row1,
            col1,
        }
    }
}

/// `28 x 28` instance mask logits, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPatch {
    values: Vec<f32>,
}

impl MaskPatch {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != MASK_SIDE * MASK_SIDE {
            return Err(invalid(format!(
                "mask patch needs {} values, got {}",
                MASK_SIDE * MASK_SIDE,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite mask logit"));
        }
        Ok(Self { values })
    }

    pub fn constant(value: f32) -> Self {
        Self {
            values: vec![value; MASK_SIDE * MASK_SIDE],
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_grid<T: Scalar>(&self) -> Grid<T> {
        Grid {
            height: MASK_SIDE,
            width: MASK_SIDE,
            data: self.values.iter().map(|&v| T::from_f64(v as f64)).collect(),
        }
    }
}

/// Source taps for one output coordinate: `v = a[lo] + frac * (a[hi] - a[lo])`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Half-pixel-center sampling positions along one axis.
pub(crate) fn axis_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    let last = (input - 1) as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = src.floor() as usize;
            Tap {
                lo,
                hi: (lo + 1).min(input - 1),
                frac: src - lo as f64,
            }
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn bilinear_resize<T: Scalar>(grid: &Grid<T>, out_h: usize, out_w: usize) -> Result<Grid<T>> {
    if grid.height == 0 || grid.width == 0 || out_h == 0 || out_w == 0 {
        return Err(invalid(format!(
            "cannot resize {}x{} to {out_h}x{out_w}",
            grid.height, grid.width
        )));
    }
    if grid.height == out_h && grid.width == out_w {
        return Ok(grid.clone());
    }
    let rows = axis_taps(grid.height, out_h);
    let cols = axis_taps(grid.width, out_w);
    let at = |r: usize, c: usize| grid.data[r * grid.width + c].into_f64();
    let mut data = Vec::with_capacity(out_h * out_w);
    for rt in &rows {
        for ct in &cols {
            let top = lerp(at(rt.lo, ct.lo), at(rt.lo, ct.hi), ct.frac);
            let bottom = lerp(at(rt.hi, ct.lo), at(rt.hi, ct.hi), ct.frac);
            data.push(T::from_f64(lerp(top, bottom, rt.frac)));
        }
    }
    Ok(Grid {
        height: out_h,
        width: out_w,
        data,
    })
}

/// Adjoint of [`bilinear_resize`]: scatters an output-space gradient back onto
/// an `in_h x in_w` grid.
pub(crate) fn bilinear_resize_adjoint(
    grad_out: &Grid<f64>,
    in_h: usize,
    in_w: usize,
) -> Grid<f64> {
    let mut out = Grid::filled(in_h, in_w, 0.0);
    if in_h == grad_out.height && in_w == grad_out.width {
        out.data.copy_from_slice(&grad_out.data);
        return out;
    }
    let rows = axis_taps(in_h, grad_out.height);
    let cols = axis_taps(in_w, grad_out.width);
    for (r, rt) in rows.iter().enumerate() {
        for (c, ct) in cols.iter().enumerate() {
            let g = grad_out.data[r * grad_out.width + c];
            let wr = [(rt.lo, 1.0 - rt.frac), (rt.hi, rt.frac)];
            let wc = [(ct.lo, 1.0 - ct.frac), (ct.hi, ct.frac)];
            for &(ri, a) in &wr {
                for &(ci, b) in &wc {
                    out.data[ri * in_w + ci] += g * a * b;
                }
            }
        }
    }
    out
}

/// Per-pixel softmax over channels, stabilised by max subtraction.
pub fn channel_softmax<T: Scalar>(t: &LogitTensor<T>) -> LogitTensor<T> {
    let n = t.plane_len();
    let c = t.channels;
    let mut out = vec![T::zero(); t.data.len()];
    let mut exps = vec![0.0f64; c];
    for p in 0..n {
        let max = (0..c)
            .map(|k| t.data[k * n + p].into_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (k, e) in exps.iter_mut().enumerate() {
            *e = (t.data[k * n + p].into_f64() - max).exp();
            sum += *e;
        }
        for (k, e) in exps.iter().enumerate() {
            out[k * n + p] = T::from_f64(e / sum);
        }
    }
    LogitTensor {
        channels: c,
        height: t.height,
        width: t.width,
        data: out,
    }
}

/// Pixels per block in channel reductions, so the running state stays in cache.
pub(crate) const PIXEL_BLOCK: usize = 4096;

/// Per-pixel index of the largest channel; ties go to the lowest index.
pub fn channel_argmax<T: Scalar>(t: &LogitTensor<T>) -> Grid<u32> {
    channel_argmax_range(t, 0..t.channels)
}

/// Argmax restricted to a contiguous channel range; indices are relative to
/// `range.start`.
pub fn channel_argmax_range<T: Scalar>(
    t: &LogitTensor<T>,
    range: std::ops::Range<usize>,
) -> Grid<u32> {
    let n = t.plane_len();
    let mut idx = vec![0u32; n];
    let mut best = vec![T::zero(); PIXEL_BLOCK.min(n)];
    for start in (0..n).step_by(PIXEL_BLOCK) {
        let end = (start + PIXEL_BLOCK).min(n);
        let best = &mut best[..end - start];
        let idx = &mut idx[start..end];
        best.copy_from_slice(&t.channel(range.start)[start..end]);
        for k in range.clone().skip(1) {
            let rel = (k - range.start) as u32;
            for ((b, i), &v) in best.iter_mut().zip(idx.iter_mut()).zip(&t.channel(k)[start..end]) {
                if v > *b {
                    *b = v;
                    *i = rel;
                }
            }
        }
    }
    Grid {
        height: t.height,
        width: t.width,
        data: idx,
    }
}

/// Element-wise mean of equally shaped logit maps (multi-scale test-time
/// averaging; callers resize and unflip beforehand).
pub fn average_logit_maps<T: Scalar>(maps: &[LogitTensor<T>]) -> Result<LogitTensor<T>> {
    let first = maps
        .first()
        .ok_or_else(|| invalid("cannot average an empty list of logit maps"))?;
    if let Some(bad) = maps.iter().position(|m| !m.same_dims(first)) {
        return Err(invalid(format!(
            "logit map {bad} has dims {}x{}x{}, expected {}x{}x{}",
            maps[bad].channels,
            maps[bad].height,
            maps[bad].width,
            first.channels,
            first.height,
            first.width
        )));
    }
    let count = maps.len() as f64;
    let data = (0..first.data.len())
        .map(|i| {
            let sum: f64 = maps.iter().map(|m| m.data[i].into_f64()).sum();
            T::from_f64(sum / count)
        })
        .collect();
    LogitTensor::new(first.channels, first.height, first.width, data)
}
