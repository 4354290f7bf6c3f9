//! Image-quality and pose-accuracy metrics.

use crate::err::{Error, Result};
use crate::img::Image;
use crate::se3::Pose;

/// PSNR cap returned for a zero (or numerically zero) MSE.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak signal-to-noise ratio in dB for images in [0, 1], capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let mse = a.mse(b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, channel-averaged, valid-window coverage.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::ImageTooSmall(a.width, a.height));
    }
    let window = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let half = SSIM_WINDOW / 2;
    let mut total = 0.0;
    let mut count = 0usize;
    for cy in half..a.height - half {
        for cx in half..a.width - half {
            for ch in 0..3 {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for wy in 0..SSIM_WINDOW {
                    for wx in 0..SSIM_WINDOW {
                        let w = window[wy][wx];
                        let pa = a.pixel(cx + wx - half, cy + wy - half)[ch];
                        let pb = b.pixel(cx + wx - half, cy + wy - half)[ch];
                        mu_a += w * pa;
                        mu_b += w * pb;
                        aa += w * pa * pa;
                        bb += w * pb * pb;
                        ab += w * pa * pb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                total += s;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

fn gaussian_window() -> [[f64; SSIM_WINDOW]; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut w = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dx = (x as isize - half) as f64;
            let dy = (y as isize - half) as f64;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y][x] = v;
            sum += v;
        }
    }
    for row in &mut w {
        for v in row {
            *v /= sum;
        }
    }
    w
}

/// Rotation error (degrees, geodesic) and camera-center distance.
pub fn pose_error(estimate: &Pose, truth: &Pose) -> (f64, f64) {
    let rot_rad = estimate.rotation.angle_to(&truth.rotation);
    let ce = estimate.center();
    let ct = truth.center();
    let d = ((ce[0] - ct[0]).powi(2) + (ce[1] - ct[1]).powi(2) + (ce[2] - ct[2]).powi(2)).sqrt();
    (rot_rad.to_degrees(), d)
}

/// Variance of the 3x3 Laplacian response on the Rec. 709 luminance,
/// replicate-padded at the borders. Higher means sharper.
pub fn laplacian_sharpness(img: &Image) -> f64 {
    let lum = img.luminance();
    let w = img.width;
    let h = img.height;
    let at = |x: isize, y: isize| {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        lum[yc * w + xc]
    };
    let mut responses = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let r = at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y);
            responses.push(r);
        }
    }
    let mean = responses.iter().sum::<f64>() / responses.len() as f64;
    responses.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / responses.len() as f64
}
