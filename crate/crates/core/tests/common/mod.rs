//! Test-only oracles, written independently of the library's rasterizer.
#![allow(dead_code)]

use gslam::scene::{CameraFrame, Gaussian3D, GaussianMap, Image, Intrinsics, Se3};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct RefSplat {
    pub id: usize,
    pub depth: f64,
    pub mean2d: Vector2<f64>,
    pub conic: Matrix2<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
}

/// Straightforward EWA projection of one Gaussian; `None` if culled.
pub fn ref_project(g: &Gaussian3D, id: usize, cam: &CameraFrame) -> Option<RefSplat> {
    let k = &cam.intrinsics;
    let t = cam.pose.rotation * g.mean + cam.pose.translation;
    if t.z <= 0.01 {
        return None;
    }
    let q = UnitQuaternion::from_quaternion(Quaternion::new(
        g.rotation[0],
        g.rotation[1],
        g.rotation[2],
        g.rotation[3],
    ));
    let r = q.to_rotation_matrix().into_inner();
    let s = Matrix3::from_diagonal(&g.log_scale.map(f64::exp));
    let sigma = r * s * s * r.transpose();
    let w = cam.pose.rotation.to_rotation_matrix().into_inner();
    let j = Matrix2x3::new(
        k.fx / t.z,
        0.0,
        -k.fx * t.x / (t.z * t.z),
        0.0,
        k.fy / t.z,
        -k.fy * t.y / (t.z * t.z),
    );
    let cov = j * w * sigma * w.transpose() * j.transpose() + Matrix2::identity() * 0.3;
    if cov.determinant() < 1e-12 {
        return None;
    }
    Some(RefSplat {
        id,
        depth: t.z,
        mean2d: Vector2::new(k.fx * t.x / t.z + k.cx, k.fy * t.y / t.z + k.cy),
        conic: cov.try_inverse()?,
        opacity: 1.0 / (1.0 + (-g.opacity_logit).exp()),
        color: g.color,
    })
}

pub fn ref_sorted(map: &GaussianMap, cam: &CameraFrame) -> Vec<RefSplat> {
    let mut v: Vec<RefSplat> = (0..map.len())
        .filter_map(|i| ref_project(&map.get(i), i, cam))
        .collect();
    v.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.id.cmp(&b.id)));
    v
}

pub struct RefRender {
    pub color: Image,
    pub dominant: Vec<Option<usize>>,
    /// Per pixel, the ids actually composited, front to back.
    pub active: Vec<Vec<usize>>,
}

/// Brute force: every pixel loops over every Gaussian, no tiling.
pub fn reference_render(map: &GaussianMap, cam: &CameraFrame, bg: &Vector3<f64>) -> RefRender {
    let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
    let splats = ref_sorted(map, cam);
    let mut color = Image::new(w, h);
    let mut dominant = vec![None; w * h];
    let mut active = vec![Vec::new(); w * h];
    for y in 0..h {
        for x in 0..w {
            let p = Vector2::new(x as f64, y as f64);
            let mut t = 1.0;
            let mut c = Vector3::zeros();
            let mut best = (0.0, None);
            let list = &mut active[y * w + x];
            for s in &splats {
                let d = p - s.mean2d;
                let m = (d.transpose() * s.conic * d)[(0, 0)];
                if m > 9.0 {
                    continue;
                }
                let a = s.opacity * (-0.5 * m).exp();
                if a <= 0.0 {
                    continue;
                }
                let wgt = a * t;
                c += s.color * wgt;
                if wgt > best.0 {
                    best = (wgt, Some(s.id));
                }
                list.push(s.id);
                t *= 1.0 - a;
                if t < 1e-4 || list.len() >= 512 {
                    break;
                }
            }
            c += bg * t;
            color.set_pixel(x, y, &c);
            dominant[y * w + x] = best.1;
        }
    }
    RefRender {
        color,
        dominant,
        active,
    }
}

/// Composites the frozen per-pixel active lists with the current parameters.
pub fn render_frozen(
    map: &GaussianMap,
    cam: &CameraFrame,
    bg: &Vector3<f64>,
    active: &[Vec<usize>],
) -> Image {
    let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
    let splats: Vec<Option<RefSplat>> = (0..map.len()).map(|i| ref_project(&map.get(i), i, cam)).collect();
    let mut color = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = Vector2::new(x as f64, y as f64);
            let mut t = 1.0;
            let mut c = Vector3::zeros();
            for &id in &active[y * w + x] {
                let s = splats[id].as_ref().expect("frozen Gaussian left the frustum");
                let d = p - s.mean2d;
                let m = (d.transpose() * s.conic * d)[(0, 0)];
                let a = s.opacity * (-0.5 * m).exp();
                c += s.color * (a * t);
                t *= 1.0 - a;
            }
            c += bg * t;
            color.set_pixel(x, y, &c);
        }
    }
    color
}

pub fn sq_loss(img: &Image, target: &Image) -> f64 {
    img.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn cam(w: usize, h: usize, f: f64) -> CameraFrame {
    CameraFrame::blank(
        Intrinsics::new(f, f, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap(),
        Se3::identity(),
    )
}

/// Random Gaussian roughly in front of an identity camera.
pub fn random_gaussian(rng: &mut ChaCha8Rng, spread: f64) -> Gaussian3D {
    let z = rng.random_range(2.0..5.0);
    let mean = Vector3::new(
        rng.random_range(-spread..spread) * z,
        rng.random_range(-spread..spread) * z,
        z,
    );
    let q = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
    let scale = Vector3::from_fn(|_, _| rng.random_range(0.05..0.35));
    let color = Vector3::from_fn(|_, _| rng.random::<f64>());
    Gaussian3D::new(mean, q, scale, rng.random_range(0.2..0.9), color)
}

pub fn random_scene(seed: u64, n: usize) -> GaussianMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GaussianMap::from_gaussians(0.5, (0..n).map(|_| random_gaussian(&mut rng, 0.4)))
}

pub fn random_image(seed: u64, w: usize, h: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_raw(w, h, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
}

/// Worst relative error per parameter group between the analytic gradient and
/// central finite differences over frozen per-pixel active sets.
#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub mean: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    pub color: f64,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.mean.max(self.rotation).max(self.log_scale).max(self.opacity).max(self.color)
    }
}

fn rel_err(a: &[f64], f: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(f).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nf: f64 = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nf).max(1e-6)
}

pub fn gradient_check(map: &GaussianMap, cam: &CameraFrame, bg: &Vector3<f64>, target: &Image, h: f64) -> GradCheck {
    let base = reference_render(map, cam, bg);
    let rendered = gslam::splat::render(map, cam, bg).color;
    let up = Image::from_raw(
        target.width(),
        target.height(),
        rendered.data().iter().zip(target.data()).map(|(c, t)| 2.0 * (c - t)).collect(),
    )
    .unwrap();
    let grads = gslam::splat::render_backward(map, cam, bg, &up);

    let loss_with = |i: usize, edit: &dyn Fn(&mut Gaussian3D)| {
        let mut m = map.clone();
        let mut g = m.get(i);
        edit(&mut g);
        m.set(i, g);
        sq_loss(&render_frozen(&m, cam, bg, &base.active), target)
    };
    let fd = |i: usize, get: &dyn Fn(&mut Gaussian3D) -> &mut f64| {
        let p = loss_with(i, &|g| *get(g) += h);
        let m = loss_with(i, &|g| *get(g) -= h);
        (p - m) / (2.0 * h)
    };

    let mut out = GradCheck::default();
    for i in 0..map.len() {
        let f_mean: Vec<f64> = (0..3).map(|k| fd(i, &|g| &mut g.mean[k])).collect();
        let f_rot: Vec<f64> = (0..4).map(|k| fd(i, &|g| &mut g.rotation[k])).collect();
        let f_ls: Vec<f64> = (0..3).map(|k| fd(i, &|g| &mut g.log_scale[k])).collect();
        let f_op = vec![fd(i, &|g| &mut g.opacity_logit)];
        let f_col: Vec<f64> = (0..3).map(|k| fd(i, &|g| &mut g.color[k])).collect();
        out.mean = out.mean.max(rel_err(grads.means[i].as_slice(), &f_mean));
        out.rotation = out.rotation.max(rel_err(grads.rotations[i].as_slice(), &f_rot));
        out.log_scale = out.log_scale.max(rel_err(grads.log_scales[i].as_slice(), &f_ls));
        out.opacity = out.opacity.max(rel_err(&[grads.opacity_logits[i]], &f_op));
        out.color = out.color.max(rel_err(grads.colors[i].as_slice(), &f_col));
    }
    out
}
