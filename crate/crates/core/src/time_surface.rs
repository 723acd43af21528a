//! Per-pixel last-event timestamps and the exponentially decayed time surfaces
//! rendered from them.

use std::collections::VecDeque;
use std::sync::{Arc, RwLock};

use nalgebra::Vector2;

use crate::error::{Error, Result};

/// Maximum tolerated timestamp regression inside an event stream.
pub const MONOTONIC_TOLERANCE: f64 = 1e-6;

pub const SURFACE_MAX: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t: f64, x: u16, y: u16, polarity: Polarity) -> Self {
        Self { t, x, y, polarity }
    }

    pub fn pixel(&self) -> Vector2<f64> {
        Vector2::new(self.x as f64, self.y as f64)
    }
}

/// Timestamp of the most recent event at every pixel.
#[derive(Clone, Debug)]
pub struct LastEventMap {
    width: usize,
    height: usize,
    // NEG_INFINITY marks pixels that never fired.
    t_last: Vec<f64>,
    latest: f64,
}

impl LastEventMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            t_last: vec![f64::NEG_INFINITY; width * height],
            latest: f64::NEG_INFINITY,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Latest timestamp ingested so far.
    pub fn latest(&self) -> f64 {
        self.latest
    }

    pub fn last_at(&self, x: usize, y: usize) -> Option<f64> {
        let t = self.t_last[y * self.width + x];
        t.is_finite().then_some(t)
    }

    /// Applies a time-ordered batch. The map is left untouched if any event is rejected.
    pub fn ingest(&mut self, batch: &[Event]) -> Result<()> {
        let mut prev = self.latest;
        for e in batch {
            if e.x as usize >= self.width || e.y as usize >= self.height {
                return Err(Error::PixelOutOfRange {
                    x: e.x as i64,
                    y: e.y as i64,
                    width: self.width,
                    height: self.height,
                });
            }
            if e.t < prev - MONOTONIC_TOLERANCE {
                return Err(Error::NonMonotonicStream {
                    prev,
                    next: e.t,
                });
            }
            prev = prev.max(e.t);
        }
        for e in batch {
            let slot = &mut self.t_last[e.y as usize * self.width + e.x as usize];
            *slot = slot.max(e.t);
        }
        self.latest = prev;
        Ok(())
    }

    /// Renders `255 * exp(-(t - t_last) / decay)`; never-fired pixels are 0.
    pub fn render(&self, t: f64, decay: f64) -> Result<TimeSurface> {
        if !(decay > 0.0) {
            return Err(Error::InvalidDecay(decay));
        }
        let inv = 1.0 / decay;
        let data = self
            .t_last
            .iter()
            .map(|&tl| {
                if tl.is_finite() {
                    let age = (t - tl).max(0.0);
                    (SURFACE_MAX * (-age * inv).exp()) as f32
                } else {
                    0.0
                }
            })
            .collect();
        Ok(TimeSurface {
            t,
            decay,
            width: self.width,
            height: self.height,
            data,
            negated: false,
        })
    }
}

/// A rendered time surface. Values live in `[0, 255]`.
///
/// Negation is stored as a flag so that applying it twice restores the
/// original surface bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSurface {
    t: f64,
    decay: f64,
    width: usize,
    height: usize,
    data: Vec<f32>,
    negated: bool,
}

impl TimeSurface {
    /// Builds a surface directly from values (row-major).
    pub fn from_values(t: f64, decay: f64, width: usize, height: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), width * height, "value count mismatch");
        Self {
            t,
            decay,
            width,
            height,
            data: values,
            negated: false,
        }
    }

    pub fn from_fn(
        t: f64,
        decay: f64,
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> f64,
    ) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y) as f32);
            }
        }
        Self::from_values(t, decay, width, height, values)
    }

    pub fn timestamp(&self) -> f64 {
        self.t
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_negative(&self) -> bool {
        self.negated
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.effective(self.data[y * self.width + x] as f64)
    }

    #[inline]
    fn effective(&self, raw: f64) -> f64 {
        if self.negated {
            SURFACE_MAX - raw
        } else {
            raw
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.data.iter().map(|&v| self.effective(v as f64)).collect()
    }

    /// `255 - value` at every pixel.
    pub fn negative(&self) -> TimeSurface {
        let mut out = self.clone();
        out.negated = !out.negated;
        out
    }

    /// Number of pixels whose value is at least `min_value`.
    pub fn count_at_least(&self, min_value: f64) -> usize {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.value(x, y) >= min_value)
            .count()
    }

    /// Gaussian blur with `sigma = kernel_size / 6` and replicated borders.
    pub fn blur(&self, kernel_size: usize) -> Result<TimeSurface> {
        if kernel_size == 0 || kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidKernel(kernel_size));
        }
        if kernel_size == 1 {
            return Ok(self.clone());
        }
        let kernel = gaussian_kernel(kernel_size);
        let half = (kernel_size / 2) as isize;
        let (w, h) = (self.width as isize, self.height as isize);
        let mut tmp = vec![0f32; self.data.len()];
        for y in 0..h {
            let row = &self.data[(y * w) as usize..((y + 1) * w) as usize];
            for x in 0..w {
                let mut acc = 0.0f64;
                for (k, wk) in kernel.iter().enumerate() {
                    let xx = (x + k as isize - half).clamp(0, w - 1);
                    acc += wk * row[xx as usize] as f64;
                }
                tmp[(y * w + x) as usize] = acc as f32;
            }
        }
        let mut data = vec![0f32; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for (k, wk) in kernel.iter().enumerate() {
                    let yy = (y + k as isize - half).clamp(0, h - 1);
                    acc += wk * tmp[(yy * w + x) as usize] as f64;
                }
                data[(y * w + x) as usize] = (acc as f32).clamp(0.0, SURFACE_MAX as f32);
            }
        }
        Ok(TimeSurface {
            data,
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> TimeSurface {
        TimeSurface {
            t: self.t,
            decay: self.decay,
            width: self.width,
            height: self.height,
            data: Vec::new(),
            negated: self.negated,
        }
    }

    #[inline]
    fn in_sample_bounds(&self, p: &Vector2<f64>) -> bool {
        p.x >= 0.0
            && p.y >= 0.0
            && p.x <= (self.width - 1) as f64
            && p.y <= (self.height - 1) as f64
    }

    /// Bilinear interpolation at a fractional pixel inside `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, p: &Vector2<f64>) -> Result<f64> {
        self.sample(p).ok_or(Error::SampleOutOfBounds(p.x, p.y))
    }

    #[inline]
    pub fn sample(&self, p: &Vector2<f64>) -> Option<f64> {
        self.sample_with_gradient(p).map(|(v, _)| v)
    }

    /// Bilinear value together with the exact derivative of the interpolant.
    ///
    /// Solver Jacobians use this derivative so that they agree with finite
    /// differences of [`TimeSurface::sample_bilinear`].
    #[inline]
    pub fn sample_with_gradient(&self, p: &Vector2<f64>) -> Option<(f64, Vector2<f64>)> {
        if !self.in_sample_bounds(p) {
            return None;
        }
        let x0 = (p.x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (p.y.floor() as usize).min(self.height.saturating_sub(2));
        let fx = p.x - x0 as f64;
        let fy = p.y - y0 as f64;
        let i = y0 * self.width + x0;
        let v00 = self.data[i] as f64;
        let v10 = self.data[i + 1] as f64;
        let v01 = self.data[i + self.width] as f64;
        let v11 = self.data[i + self.width + 1] as f64;
        let top = v00 + fx * (v10 - v00);
        let bottom = v01 + fx * (v11 - v01);
        let value = top + fy * (bottom - top);
        let gx = (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy;
        let gy = bottom - top;
        if self.negated {
            Some((SURFACE_MAX - value, Vector2::new(-gx, -gy)))
        } else {
            Some((value, Vector2::new(gx, gy)))
        }
    }

    /// Central differences (unit step) of bilinear samples.
    pub fn gradient(&self, p: &Vector2<f64>) -> Result<Vector2<f64>> {
        let inside = p.x >= 1.0
            && p.y >= 1.0
            && p.x <= (self.width as f64 - 2.0)
            && p.y <= (self.height as f64 - 2.0);
        if !inside {
            return Err(Error::GradientOutOfBounds(p.x, p.y));
        }
        let s = |dx: f64, dy: f64| self.sample(&Vector2::new(p.x + dx, p.y + dy)).unwrap_or(0.0);
        Ok(Vector2::new(
            0.5 * (s(1.0, 0.0) - s(-1.0, 0.0)),
            0.5 * (s(0.0, 1.0) - s(0.0, -1.0)),
        ))
    }
}

/// Normalized 1-D Gaussian taps for an odd kernel size, `sigma = size / 6`.
pub fn gaussian_kernel(size: usize) -> Vec<f64> {
    let sigma = size as f64 / 6.0;
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / sum).collect()
}

/// Bounded history of immutable snapshots with a single writer and any number of readers.
#[derive(Debug)]
pub struct SnapshotHistory<T> {
    capacity: usize,
    items: RwLock<VecDeque<Arc<T>>>,
}

impl<T> SnapshotHistory<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "history capacity must be positive");
        Self {
            capacity,
            items: RwLock::new(VecDeque::with_capacity(capacity)),
        }
    }

    pub fn push(&self, item: T) -> Arc<T> {
        let item = Arc::new(item);
        let mut items = self.items.write().expect("history lock poisoned");
        if items.len() == self.capacity {
            items.pop_front();
        }
        items.push_back(item.clone());
        item
    }

    pub fn latest(&self) -> Option<Arc<T>> {
        self.items.read().expect("history lock poisoned").back().cloned()
    }

    /// The newest `n` snapshots, oldest first.
    pub fn recent(&self, n: usize) -> Vec<Arc<T>> {
        let items = self.items.read().expect("history lock poisoned");
        let skip = items.len().saturating_sub(n);
        items.iter().skip(skip).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.items.read().expect("history lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.items.write().expect("history lock poisoned").clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ev(t: f64, x: u16, y: u16) -> Event {
        Event::new(t, x, y, Polarity::Positive)
    }

    #[test]
    fn ingest_empty_batch_is_noop() {
        let mut map = LastEventMap::new(4, 3);
        map.ingest(&[ev(0.5, 1, 1)]).unwrap();
        let before = map.clone();
        map.ingest(&[]).unwrap();
        assert_eq!(before.t_last, map.t_last);
    }

    #[test]
    fn ingest_keeps_latest_timestamp() {
        let mut map = LastEventMap::new(4, 3);
        map.ingest(&[ev(1.0, 2, 1), ev(2.0, 2, 1)]).unwrap();
        assert_eq!(map.last_at(2, 1), Some(2.0));
        assert_eq!(map.last_at(0, 0), None);
    }

    #[test]
    fn ingest_rejects_bad_events() {
        let mut map = LastEventMap::new(4, 3);
        assert!(matches!(
            map.ingest(&[ev(0.0, 4, 0)]),
            Err(Error::PixelOutOfRange { .. })
        ));
        map.ingest(&[ev(1.0, 0, 0)]).unwrap();
        assert!(matches!(
            map.ingest(&[ev(0.5, 1, 0)]),
            Err(Error::NonMonotonicStream { .. })
        ));
        // within tolerance
        map.ingest(&[ev(1.0 - 1e-7, 1, 0)]).unwrap();
        // rejected batches leave the map untouched
        assert!(map.ingest(&[ev(2.0, 3, 2), ev(2.0, 9, 9)]).is_err());
        assert_eq!(map.last_at(3, 2), None);
    }

    #[test]
    fn render_examples() {
        let mut map = LastEventMap::new(3, 1);
        let eta = 0.03;
        map.ingest(&[ev(1.0 - eta, 1, 0), ev(1.0, 0, 0)]).unwrap();
        let ts = map.render(1.0, eta).unwrap();
        assert_eq!(ts.value(0, 0), 255.0);
        assert_relative_eq!(ts.value(1, 0), 255.0 * (-1.0f64).exp(), epsilon = 1e-4);
        assert_relative_eq!(ts.value(1, 0), 93.80, epsilon = 0.01);
        assert_eq!(ts.value(2, 0), 0.0);
        assert!(matches!(map.render(1.0, 0.0), Err(Error::InvalidDecay(_))));
    }

    #[test]
    fn single_event_surface() {
        let mut map = LastEventMap::new(5, 4);
        map.ingest(&[ev(0.25, 3, 2)]).unwrap();
        let ts = map.render(0.25, 0.03).unwrap();
        let vals = ts.values();
        assert_eq!(vals.iter().filter(|&&v| v == 255.0).count(), 1);
        assert_eq!(vals.iter().filter(|&&v| v == 0.0).count(), 19);
        assert_eq!(ts.value(3, 2), 255.0);
    }

    #[test]
    fn negative_examples() {
        let ts = TimeSurface::from_values(0.0, 0.03, 3, 1, vec![255.0, 0.0, 100.0]);
        let neg = ts.negative();
        assert_eq!(neg.values(), vec![0.0, 255.0, 155.0]);
        assert_eq!(neg.negative(), ts);
    }

    #[test]
    fn blur_identity_and_constant() {
        let ts = TimeSurface::from_fn(0.0, 0.03, 9, 7, |x, y| (x * 7 + y) as f64);
        assert_eq!(ts.blur(1).unwrap(), ts);
        let c = TimeSurface::from_fn(0.0, 0.03, 9, 7, |_, _| 42.0);
        for v in c.blur(5).unwrap().values() {
            assert_relative_eq!(v, 42.0, epsilon = 1e-4);
        }
        assert!(matches!(ts.blur(4), Err(Error::InvalidKernel(4))));
        assert!(matches!(ts.blur(0), Err(Error::InvalidKernel(0))));
    }

    #[test]
    fn blur_impulse_matches_direct_convolution() {
        // Independent 2-D convolution with explicitly built 5x5 weights.
        let sigma: f64 = 5.0 / 6.0;
        let mut weights = [[0.0f64; 5]; 5];
        let mut total = 0.0;
        for (i, row) in weights.iter_mut().enumerate() {
            for (j, w) in row.iter_mut().enumerate() {
                let (dx, dy) = (j as f64 - 2.0, i as f64 - 2.0);
                *w = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                total += *w;
            }
        }
        let ts = TimeSurface::from_fn(0.0, 0.03, 11, 11, |x, y| {
            if x == 5 && y == 5 {
                255.0
            } else {
                0.0
            }
        });
        let blurred = ts.blur(5).unwrap();
        for y in 3..8 {
            for x in 3..8 {
                let expected = 255.0 * weights[y + 2 - 5][x + 2 - 5] / total;
                assert_relative_eq!(blurred.value(x, y), expected, epsilon = 1e-4);
            }
        }
        assert_relative_eq!(blurred.value(5, 5), 255.0 * weights[2][2] / total, epsilon = 1e-4);
    }

    #[test]
    fn blur_commutes_with_negative() {
        let ts = TimeSurface::from_fn(0.0, 0.03, 12, 9, |x, y| ((x * 31 + y * 17) % 256) as f64);
        let a = ts.negative().blur(5).unwrap();
        let b = ts.blur(5).unwrap().negative();
        assert_eq!(a, b);
    }

    #[test]
    fn bilinear_examples() {
        let ts = TimeSurface::from_values(0.0, 0.03, 2, 2, vec![0.0, 255.0, 0.0, 255.0]);
        assert_eq!(ts.sample_bilinear(&Vector2::new(1.0, 0.0)).unwrap(), 255.0);
        assert_eq!(ts.sample_bilinear(&Vector2::new(0.5, 0.0)).unwrap(), 127.5);
        assert!(matches!(
            ts.sample_bilinear(&Vector2::new(-0.5, 0.0)),
            Err(Error::SampleOutOfBounds(..))
        ));
        assert!(ts.sample_bilinear(&Vector2::new(1.0, 1.0)).is_ok());
        assert!(ts.sample_bilinear(&Vector2::new(1.0001, 1.0)).is_err());
    }

    #[test]
    fn gradient_examples() {
        let flat = TimeSurface::from_fn(0.0, 0.03, 6, 6, |_, _| 7.0);
        assert_eq!(
            flat.gradient(&Vector2::new(2.5, 2.5)).unwrap(),
            Vector2::zeros()
        );
        let ramp = TimeSurface::from_fn(0.0, 0.03, 8, 6, |x, _| 2.0 * x as f64);
        let g = ramp.gradient(&Vector2::new(3.3, 2.7)).unwrap();
        assert_relative_eq!(g, Vector2::new(2.0, 0.0), epsilon = 1e-9);
        assert!(matches!(
            ramp.gradient(&Vector2::new(0.0, 3.0)),
            Err(Error::GradientOutOfBounds(..))
        ));
        assert!(ramp.gradient(&Vector2::new(3.0, 5.0)).is_err());
    }

    #[test]
    fn interpolant_gradient_matches_finite_differences() {
        let ts = TimeSurface::from_fn(0.0, 0.03, 10, 10, |x, y| {
            ((x as f64 * 0.7).sin() + (y as f64 * 0.3).cos()) * 60.0 + 120.0
        })
        .negative();
        let p = Vector2::new(4.37, 6.81);
        let (_, g) = ts.sample_with_gradient(&p).unwrap();
        let h = 1e-6;
        let fdx = (ts.sample(&Vector2::new(p.x + h, p.y)).unwrap()
            - ts.sample(&Vector2::new(p.x - h, p.y)).unwrap())
            / (2.0 * h);
        let fdy = (ts.sample(&Vector2::new(p.x, p.y + h)).unwrap()
            - ts.sample(&Vector2::new(p.x, p.y - h)).unwrap())
            / (2.0 * h);
        assert_relative_eq!(g.x, fdx, max_relative = 1e-6);
        assert_relative_eq!(g.y, fdy, max_relative = 1e-6);
    }

    #[test]
    fn history_is_bounded() {
        let h = SnapshotHistory::new(3);
        for i in 0..5 {
            h.push(i);
        }
        assert_eq!(h.len(), 3);
        assert_eq!(*h.latest().unwrap(), 4);
        let recent: Vec<i32> = h.recent(2).iter().map(|v| **v).collect();
        assert_eq!(recent, vec![3, 4]);
        let all: Vec<i32> = h.recent(10).iter().map(|v| **v).collect();
        assert_eq!(all, vec![2, 3, 4]);
    }

    proptest! {
        #[test]
        fn render_bounded_and_monotone(
            ages in prop::collection::vec(0.0..1.0f64, 1..40),
            eta in 0.001..0.5f64,
        ) {
            let n = ages.len();
            let now = 2.0;
            let mut map = LastEventMap::new(n, 1);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| ages[b].total_cmp(&ages[a]));
            let events: Vec<Event> = order
                .iter()
                .map(|&i| ev(now - ages[i], i as u16, 0))
                .collect();
            map.ingest(&events).unwrap();
            let ts = map.render(now, eta).unwrap();
            for i in 0..n {
                let v = ts.value(i, 0);
                prop_assert!((0.0..=255.0).contains(&v));
                for j in 0..n {
                    if ages[i] < ages[j] {
                        prop_assert!(v >= ts.value(j, 0));
                    }
                }
            }
        }

        #[test]
        fn bilinear_exact_on_grid(x in 0usize..7, y in 0usize..5) {
            let ts = TimeSurface::from_fn(0.0, 0.03, 7, 5, |x, y| ((x * 13 + y * 29) % 255) as f64);
            let v = ts.sample_bilinear(&Vector2::new(x as f64, y as f64)).unwrap();
            prop_assert_eq!(v, ts.value(x, y));
        }
    }
}
