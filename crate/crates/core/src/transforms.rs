//! Complex array types, centered orthonormal 2D FFTs and coil combination.
//!
//! All arrays are stored row-major. Multi-coil stacks are coil-major, so
//! coil `c` occupies `data[c * h * w..(c + 1) * h * w]`.
//!
//! The Fourier pair used throughout is
//!
//! ```text
//! fft2c(x)  = fftshift(fft2(ifftshift(x)))  / sqrt(h * w)
//! ifft2c(k) = fftshift(ifft2(ifftshift(k))) * sqrt(h * w) / (h * w)
//! ```
//!
//! so DC sits at `(h / 2, w / 2)` (floor division) and Parseval holds with
//! equality.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// A single complex-valued slice, in either image space or k-space.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

/// A single real-valued slice (magnitude images, gradient maps, filters).
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// A coil-major stack of complex slices. Used both for per-coil k-space
/// and for per-coil images.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilStack {
    coils: usize,
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

/// Per-coil frequency-domain measurements.
pub type MultiCoilKSpace = CoilStack;

/// Complex coil sensitivities with unit root-sum-of-squares on every pixel
/// where any coil is nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMaps(CoilStack);

fn check_finite(data: &[Complex64]) -> Result<()> {
    if let Some(i) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::invalid(format!("non-finite value at index {i}")));
    }
    Ok(())
}

impl ComplexImage {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![ZERO; height * width],
        }
    }

    pub fn from_real(img: &RealImage) -> Self {
        Self {
            height: img.height,
            width: img.width,
            data: img.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn magnitude(&self) -> RealImage {
        RealImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|z| z.norm()).collect(),
        }
    }

    pub fn real_part(&self) -> RealImage {
        RealImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|z| z.re).collect(),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

impl RealImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at index {i}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealImage {
        RealImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> RealImage {
        RealImage::from_fn(self.width, self.height, |r, c| self.get(c, r))
    }

    pub(crate) fn same_shape(&self, other: &RealImage, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::invalid(format!(
                "{what}: shape {:?} does not match {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

impl CoilStack {
    pub fn new(coils: usize, height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if coils == 0 {
            return Err(Error::invalid("coil count must be at least 1"));
        }
        if data.len() != coils * height * width {
            return Err(Error::invalid(format!(
                "data length {} does not match {coils}x{height}x{width}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Self {
            coils,
            height,
            width,
            data,
        })
    }

    pub fn zeros(coils: usize, height: usize, width: usize) -> Self {
        Self {
            coils,
            height,
            width,
            data: vec![ZERO; coils * height * width],
        }
    }

    pub fn from_images(images: &[ComplexImage]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("coil stack needs at least one image"))?;
        let (h, w) = first.shape();
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            if img.shape() != (h, w) {
                return Err(Error::invalid("coil images differ in shape"));
            }
            data.extend_from_slice(img.data());
        }
        Ok(Self {
            coils: images.len(),
            height: h,
            width: w,
            data,
        })
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.coils, self.height, self.width)
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn coil(&self, c: usize) -> &[Complex64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn coil_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn coil_image(&self, c: usize) -> ComplexImage {
        ComplexImage {
            height: self.height,
            width: self.width,
            data: self.coil(c).to_vec(),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scale(&self, alpha: Complex64) -> CoilStack {
        CoilStack {
            data: self.data.iter().map(|&z| z * alpha).collect(),
            ..*self
        }
    }

    pub(crate) fn same_shape(&self, other: &CoilStack, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::invalid(format!(
                "{what}: shape {:?} does not match {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

impl SensitivityMaps {
    /// RSS floor below which a pixel is treated as outside every coil's view.
    pub const RSS_FLOOR: f64 = 1e-12;

    /// Normalizes raw coil profiles to unit RSS. Pixels whose RSS falls
    /// below [`Self::RSS_FLOOR`] get zero maps.
    pub fn normalize(raw: CoilStack) -> Self {
        let n = raw.pixels();
        let mut stack = raw;
        for p in 0..n {
            let rss = (0..stack.coils)
                .map(|c| stack.data[c * n + p].norm_sqr())
                .sum::<f64>()
                .sqrt();
            for c in 0..stack.coils {
                let z = &mut stack.data[c * n + p];
                *z = if rss < Self::RSS_FLOOR { ZERO } else { *z / rss };
            }
        }
        SensitivityMaps(stack)
    }

    /// Wraps maps that are already normalized, checking the unit-RSS
    /// invariant to within `1e-6`.
    pub fn from_normalized(stack: CoilStack) -> Result<Self> {
        let n = stack.pixels();
        for p in 0..n {
            let ss: f64 = (0..stack.coils).map(|c| stack.data[c * n + p].norm_sqr()).sum();
            if ss != 0.0 && (ss - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "sensitivity maps not unit-RSS at pixel {p}: sum of squares {ss}"
                )));
            }
        }
        Ok(SensitivityMaps(stack))
    }

    pub fn stack(&self) -> &CoilStack {
        &self.0
    }

    pub fn into_stack(self) -> CoilStack {
        self.0
    }

    pub fn coils(&self) -> usize {
        self.0.coils
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.0.shape()
    }

    pub fn coil(&self, c: usize) -> &[Complex64] {
        self.0.coil(c)
    }

    /// Per-pixel sum of squared map magnitudes (0 or 1 up to rounding).
    pub fn rss_sqr(&self) -> RealImage {
        let n = self.0.pixels();
        RealImage::from_fn(self.0.height, self.0.width, |r, c| {
            let p = r * self.0.width + c;
            (0..self.0.coils).map(|k| self.0.data[k * n + p].norm_sqr()).sum()
        })
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn shift_axis(len: usize, forward: bool) -> impl Fn(usize) -> usize {
    // fftshift moves index 0 to floor(len / 2); ifftshift undoes it.
    let half = len / 2;
    move |i| {
        if forward {
            (i + half) % len
        } else {
            (i + len - half) % len
        }
    }
}

/// Applies fftshift (`forward`) or ifftshift to a row-major 2D array.
fn shift2(data: &[Complex64], h: usize, w: usize, forward: bool) -> Vec<Complex64> {
    let sr = shift_axis(h, forward);
    let sc = shift_axis(w, forward);
    let mut out = vec![ZERO; data.len()];
    for r in 0..h {
        let rr = sr(r);
        for c in 0..w {
            out[rr * w + sc(c)] = data[r * w + c];
        }
    }
    out
}

/// Unnormalized 2D DFT in place.
fn fft2_raw(data: &mut [Complex64], h: usize, w: usize, direction: FftDirection) {
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row_fft = planner.plan_fft(w, direction);
        let col_fft = planner.plan_fft(h, direction);

        let mut scratch = vec![ZERO; row_fft.get_inplace_scratch_len().max(col_fft.get_inplace_scratch_len())];
        for row in data.chunks_exact_mut(w) {
            row_fft.process_with_scratch(row, &mut scratch);
        }
        let mut column = vec![ZERO; h];
        for c in 0..w {
            for r in 0..h {
                column[r] = data[r * w + c];
            }
            col_fft.process_with_scratch(&mut column, &mut scratch);
            for r in 0..h {
                data[r * w + c] = column[r];
            }
        }
    });
}

fn centered_transform(data: &[Complex64], h: usize, w: usize, direction: FftDirection) -> Vec<Complex64> {
    let mut buf = shift2(data, h, w, false);
    fft2_raw(&mut buf, h, w, direction);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for z in buf.iter_mut() {
        *z *= scale;
    }
    shift2(&buf, h, w, true)
}

fn check_dims(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::invalid(format!("FFT needs nonzero dimensions, got {h}x{w}")));
    }
    Ok(())
}

/// Centered, orthonormal forward 2D FFT.
pub fn fft2c(img: &ComplexImage) -> Result<ComplexImage> {
    check_dims(img.height, img.width)?;
    Ok(ComplexImage {
        height: img.height,
        width: img.width,
        data: centered_transform(&img.data, img.height, img.width, FftDirection::Forward),
    })
}

/// Centered, orthonormal inverse 2D FFT; exact inverse of [`fft2c`].
pub fn ifft2c(ksp: &ComplexImage) -> Result<ComplexImage> {
    check_dims(ksp.height, ksp.width)?;
    Ok(ComplexImage {
        height: ksp.height,
        width: ksp.width,
        data: centered_transform(&ksp.data, ksp.height, ksp.width, FftDirection::Inverse),
    })
}

fn per_coil(stack: &CoilStack, direction: FftDirection) -> Result<CoilStack> {
    check_dims(stack.height, stack.width)?;
    let mut data = Vec::with_capacity(stack.data.len());
    for c in 0..stack.coils {
        data.extend(centered_transform(stack.coil(c), stack.height, stack.width, direction));
    }
    Ok(CoilStack { data, ..*stack })
}

/// [`fft2c`] applied to every coil.
pub fn fft2c_coils(stack: &CoilStack) -> Result<CoilStack> {
    per_coil(stack, FftDirection::Forward)
}

/// [`ifft2c`] applied to every coil.
pub fn ifft2c_coils(stack: &CoilStack) -> Result<CoilStack> {
    per_coil(stack, FftDirection::Inverse)
}

/// Root-sum-of-squares coil combination: `sqrt(sum_c |I_c|^2)` per pixel.
pub fn rss_combine(coil_imgs: &CoilStack) -> RealImage {
    let n = coil_imgs.pixels();
    let mut out = vec![0.0; n];
    for c in 0..coil_imgs.coils {
        for (acc, z) in out.iter_mut().zip(coil_imgs.coil(c)) {
            *acc += z.norm_sqr();
        }
    }
    for v in out.iter_mut() {
        *v = v.sqrt();
    }
    RealImage {
        height: coil_imgs.height,
        width: coil_imgs.width,
        data: out,
    }
}

/// Vector-Jacobian product of [`rss_combine`]: given `dL/d(rss)`, returns
/// `dL/dI_c` in the packed `d/dre + i d/dim` convention. Pixels with zero
/// RSS receive zero gradient.
pub fn rss_backward(coil_imgs: &CoilStack, rss: &RealImage, upstream: &RealImage) -> CoilStack {
    let n = coil_imgs.pixels();
    let mut grad = CoilStack::zeros(coil_imgs.coils, coil_imgs.height, coil_imgs.width);
    for c in 0..coil_imgs.coils {
        let src = coil_imgs.coil(c);
        let dst = grad.coil_mut(c);
        for p in 0..n {
            let r = rss.data[p];
            if r > 0.0 {
                dst[p] = src[p] * (upstream.data[p] / r);
            }
        }
    }
    grad
}

/// Forward SENSE model in image space: `I_c = S_c * img`.
pub fn sense_expand(img: &ComplexImage, maps: &SensitivityMaps) -> Result<CoilStack> {
    let (coils, h, w) = maps.shape();
    if (h, w) != img.shape() {
        return Err(Error::invalid(format!(
            "image {:?} does not match sensitivity maps {:?}",
            img.shape(),
            (h, w)
        )));
    }
    let mut data = Vec::with_capacity(coils * h * w);
    for c in 0..coils {
        data.extend(maps.coil(c).iter().zip(&img.data).map(|(s, x)| s * x));
    }
    Ok(CoilStack {
        coils,
        height: h,
        width: w,
        data,
    })
}

/// Adjoint of [`sense_expand`]: `sum_c conj(S_c) * I_c`.
pub fn sense_combine(coil_imgs: &CoilStack, maps: &SensitivityMaps) -> Result<ComplexImage> {
    coil_imgs.same_shape(maps.stack(), "sense_combine")?;
    let n = coil_imgs.pixels();
    let mut out = vec![ZERO; n];
    for c in 0..coil_imgs.coils {
        for ((acc, s), z) in out.iter_mut().zip(maps.coil(c)).zip(coil_imgs.coil(c)) {
            *acc += s.conj() * z;
        }
    }
    Ok(ComplexImage {
        height: coil_imgs.height,
        width: coil_imgs.width,
        data: out,
    })
}
