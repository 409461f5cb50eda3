//! PSNR and SSIM on `[0, 1]` RGB images.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) applied as a zero-padded
//! same-size separable convolution, K1 = 0.01, K2 = 0.03, dynamic range 1,
//! averaged over every pixel and channel.

use crate::scene::Image;
use crate::{Error, Result};

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Validation(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.data().len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// `10·log10(1 / mse)`; `+∞` when `mse == 0`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-(x * x) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Zero-padded same-size separable Gaussian filter. The kernel is symmetric,
/// so this operator is its own adjoint.
fn blur(plane: &[f64], w: usize, h: usize, kernel: &[f64; WINDOW]) -> Vec<f64> {
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM and, when requested, its gradient w.r.t. `a`.
fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> (f64, Option<Image>) {
    let (w, h) = (a.width(), a.height());
    let n = w * h;
    let kernel = gaussian_kernel();
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(w, h));
    let denom = (n * 3) as f64;
    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mu_x = blur(&x, w, h, &kernel);
        let mu_y = blur(&y, w, h, &kernel);
        let e_xx = blur(&xx, w, h, &kernel);
        let e_yy = blur(&yy, w, h, &kernel);
        let e_xy = blur(&xy, w, h, &kernel);

        let mut d_mu = vec![0.0; if want_grad { n } else { 0 }];
        let mut d_exx = d_mu.clone();
        let mut d_exy = d_mu.clone();
        for i in 0..n {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * (e_xy[i] - mx * my) + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = (e_xx[i] - mx * mx) + (e_yy[i] - my * my) + C2;
            let s = (a1 * a2) / (b1 * b2);
            total += s;
            if want_grad {
                // grouped so each bracket cancels exactly when a == b
                d_mu[i] = s * ((2.0 * my / a1 - 2.0 * mx / b1) + (2.0 * mx / b2 - 2.0 * my / a2)) / denom;
                d_exx[i] = -s / b2 / denom;
                d_exy[i] = 2.0 * s / a2 / denom;
            }
        }
        if let Some(g) = grad.as_mut() {
            let g_mu = blur(&d_mu, w, h, &kernel);
            let g_xx = blur(&d_exx, w, h, &kernel);
            let g_xy = blur(&d_exy, w, h, &kernel);
            let data = g.data_mut();
            for i in 0..n {
                data[i * 3 + c] = g_mu[i] + 2.0 * x[i] * g_xx[i] + y[i] * g_xy[i];
            }
        }
    }
    (total / denom, grad)
}

/// Structural similarity, in `[−1, 1]`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(ssim_impl(a, b, false).0)
}

/// SSIM together with `∂SSIM/∂a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    check_shapes(a, b)?;
    let (s, g) = ssim_impl(a, b, true);
    Ok((s, g.expect("gradient requested")))
}
