//! Paired image/mask augmentation: flips, affine warps (shift, rotate, zoom,
//! shear), elastic deformation, and salt-and-pepper noise.
//!
//! Geometric ops resample the image bilinearly and the mask by thresholding
//! the bilinearly-interpolated mask field at 0.5. Both paths run the same
//! arithmetic on the same sampled transform, so feeding the mask in as the
//! image and binarizing the result reproduces the transformed mask exactly.
//! Noise touches the image only. Out-of-bounds samples are 0; output size
//! always equals input size.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, UdetError};
use crate::metrics::BinaryMask;
use crate::tensor::{Shape4, Tensor4};

use super::Sample;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    pub flip_h: bool,
    pub flip_v: bool,
    /// Max |shift| per axis as a fraction of the image size.
    pub shift_frac: Option<f64>,
    /// Max |rotation| in degrees.
    pub rotate_deg: Option<f64>,
    /// Zoom factor range.
    pub zoom: Option<(f64, f64)>,
    /// Max |shear| in degrees.
    pub shear_deg: Option<f64>,
    /// (alpha, sigma): displacement magnitude and field smoothing.
    pub elastic: Option<(f64, f64)>,
    /// Impulse-noise density on the image.
    pub salt_pepper: Option<f64>,
}

impl AugmentSpec {
    /// Every op disabled: augment becomes the identity.
    pub fn none() -> Self {
        AugmentSpec {
            flip_h: false,
            flip_v: false,
            shift_frac: None,
            rotate_deg: None,
            zoom: None,
            shear_deg: None,
            elastic: None,
            salt_pepper: None,
        }
    }

    /// Default ranges: shift up to 10%, rotation up to 15 degrees, zoom
    /// 0.9-1.1, shear up to 10 degrees, mild elastic warp, 1% impulse noise.
    pub fn standard() -> Self {
        AugmentSpec {
            flip_h: true,
            flip_v: true,
            shift_frac: Some(0.10),
            rotate_deg: Some(15.0),
            zoom: Some((0.9, 1.1)),
            shear_deg: Some(10.0),
            elastic: Some((30.0, 4.0)),
            salt_pepper: Some(0.01),
        }
    }

    /// Same geometry with the image-only noise removed.
    pub fn without_noise(&self) -> Self {
        AugmentSpec { salt_pepper: None, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(f) = self.shift_frac {
            if !(0.0..=0.1).contains(&f) {
                return Err(UdetError::InvalidArgument(format!("shift fraction {f} > 10%")));
            }
        }
        if let Some(d) = self.rotate_deg {
            if !(0.0..=15.0).contains(&d) {
                return Err(UdetError::InvalidArgument(format!("rotation {d} > 15 degrees")));
            }
        }
        if let Some((lo, hi)) = self.zoom {
            if !(0.9..=1.1).contains(&lo) || !(0.9..=1.1).contains(&hi) || lo > hi {
                return Err(UdetError::InvalidArgument(format!("zoom range {lo}..{hi}")));
            }
        }
        if let Some(d) = self.shear_deg {
            if !(0.0..=10.0).contains(&d) {
                return Err(UdetError::InvalidArgument(format!("shear {d} > 10 degrees")));
            }
        }
        if let Some((a, s)) = self.elastic {
            if a < 0.0 || s <= 0.0 {
                return Err(UdetError::InvalidArgument(format!("elastic alpha {a}, sigma {s}")));
            }
        }
        if let Some(d) = self.salt_pepper {
            if !(0.0..=0.02).contains(&d) {
                return Err(UdetError::InvalidArgument(format!("noise density {d} > 0.02")));
            }
        }
        Ok(())
    }
}

/// Concrete sampled affine transform (applied about the image center).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub shift: (f64, f64),
    pub rotate_deg: f64,
    pub zoom: f64,
    pub shear_deg: f64,
}

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams { shift: (0.0, 0.0), rotate_deg: 0.0, zoom: 1.0, shear_deg: 0.0 }
    }
}

#[inline]
fn bilinear(field: &[f32], h: usize, w: usize, sx: f64, sy: f64) -> f32 {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = (sx - x0) as f32;
    let fy = (sy - y0) as f32;
    let fetch = |yy: f64, xx: f64| -> f32 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            field[yy as usize * w + xx as usize]
        }
    };
    let v00 = fetch(y0, x0);
    let v01 = fetch(y0, x0 + 1.0);
    let v10 = fetch(y0 + 1.0, x0);
    let v11 = fetch(y0 + 1.0, x0 + 1.0);
    (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)
}

/// Warp image and mask through `map: (y, x) -> source (sx, sy)`. The mask is
/// carried as floats through the identical interpolation and re-thresholded,
/// which keeps it binary and geometry-consistent with the image path.
fn resample(s: &Sample, map: impl Fn(usize, usize) -> (f64, f64)) -> Result<Sample> {
    let (h, w) = s.size();
    let img = s.image.data();
    let maskf: Vec<f32> = s.mask.to_float();
    let mut out_img = vec![0.0f32; h * w];
    let mut out_mask = BinaryMask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(y, x);
            out_img[y * w + x] = bilinear(img, h, w, sx, sy);
            if bilinear(&maskf, h, w, sx, sy) >= 0.5 {
                out_mask.set(y, x, 1);
            }
        }
    }
    Sample::new(
        Tensor4::new(Shape4::new(1, 1, h, w), out_img)?,
        out_mask,
        s.meta.clone(),
    )
}

/// Horizontal mirror (exact pixel permutation).
pub fn flip_h(s: &Sample) -> Sample {
    let (h, w) = s.size();
    let img = s.image.data();
    let mut out_img = vec![0.0f32; h * w];
    let mut out_mask = BinaryMask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            out_img[y * w + x] = img[y * w + (w - 1 - x)];
            out_mask.set(y, x, s.mask.get(y, w - 1 - x));
        }
    }
    Sample::new(Tensor4::new(Shape4::new(1, 1, h, w), out_img).unwrap(), out_mask, s.meta.clone())
        .expect("flip preserves validity")
}

/// Vertical mirror (exact pixel permutation).
pub fn flip_v(s: &Sample) -> Sample {
    let (h, w) = s.size();
    let img = s.image.data();
    let mut out_img = vec![0.0f32; h * w];
    let mut out_mask = BinaryMask::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            out_img[y * w + x] = img[(h - 1 - y) * w + x];
            out_mask.set(y, x, s.mask.get(h - 1 - y, x));
        }
    }
    Sample::new(Tensor4::new(Shape4::new(1, 1, h, w), out_img).unwrap(), out_mask, s.meta.clone())
        .expect("flip preserves validity")
}

/// Inverse affine sampling map: output pixel to source coordinates.
struct AffineInv {
    ia: f64,
    ib: f64,
    ic: f64,
    id: f64,
    cx: f64,
    cy: f64,
    shift: (f64, f64),
}

impl AffineInv {
    fn new(p: &AffineParams, h: usize, w: usize) -> Result<Self> {
        if p.zoom <= 0.0 {
            return Err(UdetError::InvalidArgument(format!("zoom {} must be positive", p.zoom)));
        }
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let th = p.rotate_deg.to_radians();
        let sh = p.shear_deg.to_radians().tan();
        // forward: out = R * Sh * (z * (in - c)) + c + shift
        // R * Sh = [cos, cos*sh - sin; sin, sin*sh + cos]
        let (cos, sin) = (th.cos(), th.sin());
        let (fa, fb) = (cos * p.zoom, (cos * sh - sin) * p.zoom);
        let (fc, fd) = (sin * p.zoom, (sin * sh + cos) * p.zoom);
        let det = fa * fd - fb * fc;
        if det.abs() < 1e-12 {
            return Err(UdetError::Numerical("degenerate affine transform".into()));
        }
        Ok(AffineInv {
            ia: fd / det,
            ib: -fb / det,
            ic: -fc / det,
            id: fa / det,
            cx,
            cy,
            shift: p.shift,
        })
    }

    #[inline]
    fn map(&self, sx: f64, sy: f64) -> (f64, f64) {
        let vx = sx - self.cx - self.shift.0;
        let vy = sy - self.cy - self.shift.1;
        (self.ia * vx + self.ib * vy + self.cx, self.ic * vx + self.id * vy + self.cy)
    }
}

/// Rotation, shear, zoom about the center, then translation.
pub fn apply_affine(s: &Sample, p: &AffineParams) -> Result<Sample> {
    let (h, w) = s.size();
    let inv = AffineInv::new(p, h, w)?;
    resample(s, |y, x| inv.map(x as f64, y as f64))
}

/// Separable Gaussian smoothing with reflected boundaries.
fn gaussian_smooth(field: &mut Vec<f64>, h: usize, w: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }
    let reflect = |i: isize, n: isize| -> usize {
        let mut i = i;
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - i - 1;
        }
        i.clamp(0, n - 1) as usize
    };
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sx = reflect(x as isize + ki as isize - radius, w as isize);
                acc += kv * field[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sy = reflect(y as isize + ki as isize - radius, h as isize);
                acc += kv * tmp[sy * w + x];
            }
            field[y * w + x] = acc;
        }
    }
}

/// Smooth random displacement fields on the output grid, already scaled:
/// `(alpha / sigma) * gaussian_smooth(U(-1,1), sigma)`. Dividing by the
/// smoothing scale keeps the warp of a given alpha area-preserving to a few
/// percent on nodule-sized structures.
fn elastic_fields(
    h: usize,
    w: usize,
    alpha: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let mut dx: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let mut dy: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    gaussian_smooth(&mut dx, h, w, sigma);
    gaussian_smooth(&mut dy, h, w, sigma);
    let scale = alpha / sigma;
    for v in dx.iter_mut().chain(dy.iter_mut()) {
        *v *= scale;
    }
    (dx, dy)
}

/// Random smooth displacement warp.
pub fn elastic_deform(
    s: &Sample,
    alpha: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    if alpha < 0.0 || sigma <= 0.0 {
        return Err(UdetError::InvalidArgument(format!("elastic alpha {alpha}, sigma {sigma}")));
    }
    let (h, w) = s.size();
    if alpha == 0.0 {
        return Ok(s.clone());
    }
    let (dx, dy) = elastic_fields(h, w, alpha, sigma, rng);
    resample(s, |y, x| {
        let i = y * w + x;
        (x as f64 + dx[i], y as f64 + dy[i])
    })
}

/// Impulse noise: each pixel independently becomes 0 or 1 with probability
/// `density`. Image only; the caller's mask is untouched by contract.
pub fn salt_pepper(image: &mut Tensor4<f32>, density: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    if !(0.0..=0.5).contains(&density) {
        return Err(UdetError::InvalidArgument(format!("noise density {density}")));
    }
    for v in image.data_mut() {
        if rng.random::<f64>() < density {
            *v = if rng.random::<f64>() < 0.5 { 0.0 } else { 1.0 };
        }
    }
    Ok(())
}

/// Sample one transform from the spec and apply it. All geometric ops
/// (flips, affine, elastic) compose into a single resampling pass so the
/// image and mask see exactly the same interpolation of the original
/// fields; noise then hits the image only.
pub fn augment(s: &Sample, spec: &AugmentSpec, rng: &mut ChaCha8Rng) -> Result<Sample> {
    spec.validate()?;
    let (h, w) = s.size();

    let do_fh = spec.flip_h && rng.random::<f64>() < 0.5;
    let do_fv = spec.flip_v && rng.random::<f64>() < 0.5;

    let affine_enabled = spec.shift_frac.is_some()
        || spec.rotate_deg.is_some()
        || spec.zoom.is_some()
        || spec.shear_deg.is_some();
    let affine = if affine_enabled {
        let size = w as f64;
        let sym = |rng: &mut ChaCha8Rng, m: f64| rng.random::<f64>() * 2.0 * m - m;
        let mut p = AffineParams::identity();
        if let Some(f) = spec.shift_frac {
            p.shift = (sym(rng, f * size), sym(rng, f * size));
        }
        if let Some(d) = spec.rotate_deg {
            p.rotate_deg = sym(rng, d);
        }
        if let Some((lo, hi)) = spec.zoom {
            p.zoom = lo + rng.random::<f64>() * (hi - lo);
        }
        if let Some(d) = spec.shear_deg {
            p.shear_deg = sym(rng, d);
        }
        Some(AffineInv::new(&p, h, w)?)
    } else {
        None
    };

    let elastic = match spec.elastic {
        Some((alpha, sigma)) if alpha > 0.0 => Some(elastic_fields(h, w, alpha, sigma, rng)),
        _ => None,
    };

    let mut out = if !do_fh && !do_fv && affine.is_none() && elastic.is_none() {
        s.clone()
    } else {
        // order of application: flips, then affine, then elastic; the
        // sampling map composes in reverse
        resample(s, |y, x| {
            let (mut sx, mut sy) = (x as f64, y as f64);
            if let Some((dx, dy)) = &elastic {
                let i = y * w + x;
                sx += dx[i];
                sy += dy[i];
            }
            if let Some(aff) = &affine {
                let (mx, my) = aff.map(sx, sy);
                sx = mx;
                sy = my;
            }
            if do_fh {
                sx = (w - 1) as f64 - sx;
            }
            if do_fv {
                sy = (h - 1) as f64 - sy;
            }
            (sx, sy)
        })?
    };

    if let Some(density) = spec.salt_pepper {
        salt_pepper(&mut out.image, density, rng)?;
    }
    Ok(out)
}
