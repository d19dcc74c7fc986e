//! Synthetic lung phantoms with exactly known masks, for desk-scale
//! training and verification.
//!
//! The image is a smooth thorax-like background: a bright body ellipse, two
//! dark lung fields, Gaussian texture. Nodules are bright discs placed
//! inside a lung; the mask is their exact rasterized support. An attached
//! nodule is placed tangent to the lung boundary from the inside
//! (juxtapleural analogue).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, UdetError};
use crate::metrics::BinaryMask;
use crate::tensor::{Shape4, Tensor4};

use super::{Sample, SampleMeta};

#[derive(Clone, Debug)]
pub struct NoduleSpec {
    pub count: usize,
    pub radius_range: (f64, f64),
    pub intensity_range: (f64, f64),
    pub attach_to_wall: bool,
}

impl Default for NoduleSpec {
    fn default() -> Self {
        NoduleSpec {
            count: 2,
            radius_range: (3.0, 7.0),
            intensity_range: (0.65, 0.9),
            attach_to_wall: false,
        }
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.ax;
        let dy = (y - self.cy) / self.ay;
        dx * dx + dy * dy <= 1.0
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + rng.random::<f64>() * (hi - lo)
}

pub fn generate_phantom(
    rng: &mut ChaCha8Rng,
    size: usize,
    spec: &NoduleSpec,
    id: &str,
) -> Result<Sample> {
    if size < 16 {
        return Err(UdetError::InvalidArgument(format!("phantom size {size} too small")));
    }
    let (r_lo, r_hi) = spec.radius_range;
    if !(r_lo > 0.0 && r_hi >= r_lo) {
        return Err(UdetError::InvalidArgument(format!(
            "bad radius range {:?}",
            spec.radius_range
        )));
    }
    let s = size as f64;
    let body = Ellipse { cx: 0.50 * s, cy: 0.52 * s, ax: 0.46 * s, ay: 0.46 * s };
    let lungs = [
        Ellipse { cx: 0.32 * s, cy: 0.50 * s, ax: 0.17 * s, ay: 0.31 * s },
        Ellipse { cx: 0.68 * s, cy: 0.50 * s, ax: 0.17 * s, ay: 0.31 * s },
    ];
    let min_axis = lungs[0].ax.min(lungs[0].ay);
    if spec.count > 0 && r_hi + 2.0 >= min_axis {
        return Err(UdetError::InvalidArgument(format!(
            "nodule radius up to {r_hi} does not fit a lung field of semi-axis {min_axis:.1}"
        )));
    }

    // Background.
    let mut img = vec![0.0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let v = if lungs.iter().any(|l| l.contains(fx, fy)) {
                0.12
            } else if body.contains(fx, fy) {
                0.55
            } else {
                0.02
            };
            let noise: f64 = StandardNormal.sample(rng);
            img[y * size + x] = ((v + 0.02 * noise).clamp(0.0, 1.0)) as f32;
        }
    }

    // Nodules.
    let mut mask = BinaryMask::zeros(size, size);
    let mut max_diameter: Option<f64> = None;
    for k in 0..spec.count {
        let r = uniform_in(rng, r_lo, r_hi);
        let intensity = uniform_in(rng, spec.intensity_range.0, spec.intensity_range.1) as f32;
        let lung = &lungs[rng.random_range(0..lungs.len())];

        let (cx, cy) = if spec.attach_to_wall && k == 0 {
            // boundary point, then inward along the ellipse normal by r
            let theta = uniform_in(rng, 0.0, std::f64::consts::TAU);
            let bx = lung.cx + lung.ax * theta.cos();
            let by = lung.cy + lung.ay * theta.sin();
            let (nx, ny) = (theta.cos() / lung.ax, theta.sin() / lung.ay);
            let norm = (nx * nx + ny * ny).sqrt();
            (bx - r * nx / norm, by - r * ny / norm)
        } else {
            // uniform inside the lung shrunk so the disc fits
            let margin = 1.0 - (r + 1.0) / min_axis;
            let phi = uniform_in(rng, 0.0, std::f64::consts::TAU);
            let rho = rng.random::<f64>().sqrt() * margin;
            (lung.cx + lung.ax * rho * phi.cos(), lung.cy + lung.ay * rho * phi.sin())
        };

        let r2 = r * r;
        let y0 = ((cy - r).floor().max(0.0)) as usize;
        let y1 = ((cy + r).ceil().min(s - 1.0)) as usize;
        let x0 = ((cx - r).floor().max(0.0)) as usize;
        let x1 = ((cx + r).ceil().min(s - 1.0)) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                if dx * dx + dy * dy <= r2 {
                    mask.set(y, x, 1);
                    img[y * size + x] = intensity;
                }
            }
        }
        let d = 2.0 * r;
        max_diameter = Some(max_diameter.map_or(d, |m: f64| m.max(d)));
    }

    let image = Tensor4::new(Shape4::new(1, 1, size, size), img)?;
    Sample::new(
        image,
        mask,
        SampleMeta {
            id: id.to_string(),
            diameter_mm: max_diameter,
            attached: if spec.count > 0 { Some(spec.attach_to_wall) } else { None },
        },
    )
}
