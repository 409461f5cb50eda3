//! Per-Gaussian Adam state over the packed parameter vector.

use super::densify::Origins;
use super::LearningRates;
use crate::scene::ParamsMut;
use crate::splat::ParamGradients;

/// Mean (3), raw quaternion (4), log-scale (3), opacity logit (1), color (3).
const DIM: usize = 14;
pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

#[derive(Clone, Debug, Default)]
pub(crate) struct Adam {
    m: Vec<[f64; DIM]>,
    v: Vec<[f64; DIM]>,
    /// Steps taken per Gaussian, for bias correction.
    t: Vec<u32>,
}

fn pack(g: &ParamGradients, i: usize) -> [f64; DIM] {
    let mut out = [0.0; DIM];
    out[0..3].copy_from_slice(g.means[i].as_slice());
    out[3..7].copy_from_slice(g.rotations[i].as_slice());
    out[7..10].copy_from_slice(g.log_scales[i].as_slice());
    out[10] = g.opacity_logits[i];
    out[11..14].copy_from_slice(g.colors[i].as_slice());
    out
}

fn rates(lr: &LearningRates, extent: f64) -> [f64; DIM] {
    let mut out = [0.0; DIM];
    out[0..3].fill(lr.means * extent);
    out[3..7].fill(lr.rotations);
    out[7..10].fill(lr.log_scales);
    out[10] = lr.opacity_logits;
    out[11..14].fill(lr.colors);
    out
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![[0.0; DIM]; n],
            v: vec![[0.0; DIM]; n],
            t: vec![0; n],
        }
    }

    /// Zeroed state for Gaussians appended to the map.
    pub fn grow(&mut self, n: usize) {
        self.m.resize(n, [0.0; DIM]);
        self.v.resize(n, [0.0; DIM]);
        self.t.resize(n, 0);
    }

    /// Survivors keep their moments; new Gaussians start fresh.
    pub fn remap(&mut self, origins: &Origins) {
        let pick = |o: &Option<usize>, src: &[[f64; DIM]]| o.map_or([0.0; DIM], |i| src[i]);
        self.m = origins.iter().map(|o| pick(o, &self.m)).collect();
        self.v = origins.iter().map(|o| pick(o, &self.v)).collect();
        self.t = origins.iter().map(|o| o.map_or(0, |i| self.t[i])).collect();
    }

    /// One update of the Gaussians in `active`; rotations are renormalized.
    pub fn step(
        &mut self,
        params: &mut ParamsMut<'_>,
        grads: &ParamGradients,
        active: &[usize],
        lr: &LearningRates,
        extent: f64,
    ) {
        let rate = rates(lr, extent);
        for &i in active {
            let g = pack(grads, i);
            self.t[i] += 1;
            let t = self.t[i] as i32;
            let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
            let mut delta = [0.0; DIM];
            for k in 0..DIM {
                let m = BETA1 * self.m[i][k] + (1.0 - BETA1) * g[k];
                let v = BETA2 * self.v[i][k] + (1.0 - BETA2) * g[k] * g[k];
                self.m[i][k] = m;
                self.v[i][k] = v;
                delta[k] = rate[k] * (m / c1) / ((v / c2).sqrt() + EPSILON);
            }
            params.means[i] -= nalgebra::Vector3::new(delta[0], delta[1], delta[2]);
            let q = &mut params.rotations[i];
            *q -= nalgebra::Vector4::new(delta[3], delta[4], delta[5], delta[6]);
            let n = q.norm();
            *q = if n > 0.0 && n.is_finite() {
                *q / n
            } else {
                nalgebra::Vector4::new(1.0, 0.0, 0.0, 0.0)
            };
            params.log_scales[i] -= nalgebra::Vector3::new(delta[7], delta[8], delta[9]);
            params.opacity_logits[i] -= delta[10];
            params.colors[i] -= nalgebra::Vector3::new(delta[11], delta[12], delta[13]);
        }
    }
}
