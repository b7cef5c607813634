//! sRGB to CIELAB conversion (D65 white point).

use image::RgbImage;

const XN: f64 = 0.950_47;
const YN: f64 = 1.0;
const ZN: f64 = 1.088_83;

fn srgb_to_linear(c: u8) -> f64 {
    let c = f64::from(c) / 255.0;
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Converts one 8-bit sRGB pixel to `[L, a, b]` with L in [0, 100].
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let r = srgb_to_linear(rgb[0]);
    let g = srgb_to_linear(rgb[1]);
    let b = srgb_to_linear(rgb[2]);
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let fx = lab_f(x / XN);
    let fy = lab_f(y / YN);
    let fz = lab_f(z / ZN);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Row-major CIELAB raster.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl LabImage {
    pub fn from_rgb(image: &RgbImage) -> Self {
        let data = image.pixels().map(|p| srgb_to_lab(p.0)).collect();
        Self {
            width: image.width() as usize,
            height: image.height() as usize,
            data,
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> [f64; 3] {
        self.data[row * self.width + col]
    }

    /// Central-difference gradient of the lightness channel, clamped at the
    /// borders. Returns `(magnitude, orientation in [0, pi))` per pixel.
    pub fn lightness_gradient(&self) -> Vec<(f64, f64)> {
        let (w, h) = (self.width, self.height);
        let mut out = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                let l = |rr: usize, cc: usize| self.data[rr * w + cc][0];
                let gx = l(r, (c + 1).min(w - 1)) - l(r, c.saturating_sub(1));
                let gy = l((r + 1).min(h - 1), c) - l(r.saturating_sub(1), c);
                let mag = (gx * gx + gy * gy).sqrt();
                let mut theta = gy.atan2(gx);
                if theta < 0.0 {
                    theta += std::f64::consts::PI;
                }
                if theta >= std::f64::consts::PI {
                    theta -= std::f64::consts::PI;
                }
                out.push((mag, theta));
            }
        }
        out
    }
}
