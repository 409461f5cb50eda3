//! The mapping back end: owns the Gaussian map and its optimizer state.

use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::densify::{densify_clarity_tracked, densify_gradient_and_prune_tracked, DensifyCounts, GradientAccumulator, Origins};
use super::init::{initialize_from_seeds, keyframe_seeds, SeedPoint};
use super::insert::{insert_dynamic, insert_unconditional};
use super::loss::{loss_and_grad, reg_grad_log_scale, LossBreakdown};
use super::MapperConfig;
use crate::scene::{CameraFrame, GaussianMap};
use crate::splat::{render, render_backward};
use crate::track::Keyframe;
use crate::{Error, Result};

/// One optimization step as written to the loss CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub l_photo: f64,
    pub l_ssim: f64,
    pub l_reg: f64,
    pub total: f64,
    pub num_gaussians: usize,
}

pub const LOSS_CSV_HEADER: &str = "step,l_photo,l_ssim,l_reg,total,num_gaussians";

pub fn format_loss_csv(records: &[LossRecord]) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{}",
            r.step, r.l_photo, r.l_ssim, r.l_reg, r.total, r.num_gaussians
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Map lifecycle: initialization, insertion, densification and windowed
/// optimization. A mapper exclusively owns its map.
#[derive(Clone, Debug)]
pub struct Mapper {
    cfg: MapperConfig,
    map: GaussianMap,
    extent: f64,
    adam: Adam,
    grads: GradientAccumulator,
    step: usize,
    records: Vec<LossRecord>,
    densify_log: Vec<DensifyCounts>,
    rng: ChaCha8Rng,
}

impl Mapper {
    /// An uninitialized mapper; call [`Mapper::initialize`] once tracking has
    /// produced its first keyframes.
    pub fn new(cfg: MapperConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            map: GaussianMap::new(cfg.tau.unwrap_or(1.0)),
            cfg,
            extent: 1.0,
            adam: Adam::default(),
            grads: GradientAccumulator::default(),
            step: 0,
            records: Vec::new(),
            densify_log: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// A mapper over an existing map; the map's cell size is used as `τ`.
    pub fn with_map(map: GaussianMap, cfg: MapperConfig, seed: u64) -> Result<Self> {
        let mut m = Self::new(cfg, seed)?;
        m.map = map;
        m.reset_state();
        Ok(m)
    }

    fn reset_state(&mut self) {
        let n = self.map.len();
        self.adam = Adam::new(n);
        self.grads = GradientAccumulator::new(n);
        self.refresh_extent();
    }

    fn refresh_extent(&mut self) {
        let e = self.map.extent();
        self.extent = if e > 0.0 { e } else { 1.0 };
    }

    fn apply_origins(&mut self, origins: &Origins) {
        self.adam.remap(origins);
        self.grads.reset(self.map.len());
    }

    fn grow_state(&mut self) {
        self.adam.grow(self.map.len());
        self.grads.grow(self.map.len());
    }

    pub fn config(&self) -> &MapperConfig {
        &self.cfg
    }

    pub fn map(&self) -> &GaussianMap {
        &self.map
    }

    pub fn into_map(self) -> GaussianMap {
        self.map
    }

    pub fn is_initialized(&self) -> bool {
        !self.map.is_empty()
    }

    /// Insertion threshold; also the spatial index cell size.
    pub fn tau(&self) -> f64 {
        self.map.cell_size()
    }

    /// Scene radius used to scale the mean learning rate and the clone/split
    /// decision.
    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// Optimization steps taken so far.
    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn loss_records(&self) -> &[LossRecord] {
        &self.records
    }

    /// Results of each periodic gradient densification.
    pub fn densify_log(&self) -> &[DensifyCounts] {
        &self.densify_log
    }

    /// Builds the map from the patches of `keyframes`. Returns its size.
    pub fn initialize(&mut self, keyframes: &[Keyframe]) -> Result<usize> {
        let seeds: Vec<SeedPoint> = keyframes.iter().flat_map(keyframe_seeds).collect();
        self.initialize_from_seeds(&seeds)
    }

    pub fn initialize_from_seeds(&mut self, seeds: &[SeedPoint]) -> Result<usize> {
        self.map = initialize_from_seeds(seeds, &self.cfg)?;
        self.reset_state();
        Ok(self.map.len())
    }

    /// Adds new points, gated by distance when dynamic insertion is enabled.
    pub fn insert(&mut self, seeds: &[SeedPoint]) -> usize {
        let n = if self.cfg.dynamic_insertion {
            let tau = self.tau();
            insert_dynamic(&mut self.map, seeds, tau, self.cfg.init_opacity)
        } else {
            insert_unconditional(&mut self.map, seeds, self.cfg.init_opacity)
        };
        if n > 0 {
            self.grow_state();
            self.refresh_extent();
        }
        n
    }

    /// Splits Gaussians that dominate too many pixels of `frame`'s render.
    /// A no-op when clarity densification is disabled.
    pub fn densify_clarity(&mut self, frame: &CameraFrame) -> Result<usize> {
        if !self.cfg.clarity_densify || self.map.is_empty() {
            return Ok(0);
        }
        let bg = Vector3::from(self.cfg.background);
        let out = render(&self.map, frame, &bg);
        let sigma = self.cfg.sigma_split_for(frame.intrinsics.width, frame.intrinsics.height);
        let (n, origins) =
            densify_clarity_tracked(&mut self.map, &out, sigma, self.cfg.split_scale_divisor, &mut self.rng)?;
        if n > 0 {
            self.apply_origins(&origins);
        }
        Ok(n)
    }

    fn loss_at(&self, frame: &CameraFrame) -> Result<LossBreakdown> {
        let out = render(&self.map, frame, &Vector3::from(self.cfg.background));
        let scales: Vec<Vector3<f64>> = out.visible().map(|i| self.map.get(i).scale()).collect();
        Ok(loss_and_grad(&out.color, &frame.image, &scales, &self.cfg, false)?.0)
    }

    /// Mean objective over `keyframes`.
    pub fn evaluate(&self, keyframes: &[CameraFrame]) -> Result<LossBreakdown> {
        if keyframes.is_empty() {
            return Err(Error::Validation("no keyframes to evaluate".into()));
        }
        let mut sum = LossBreakdown::default();
        for kf in keyframes {
            let l = self.loss_at(kf)?;
            sum.l_photo += l.l_photo;
            sum.l_ssim += l.l_ssim;
            sum.l_color += l.l_color;
            sum.l_reg += l.l_reg;
            sum.total += l.total;
        }
        let n = keyframes.len() as f64;
        Ok(LossBreakdown {
            l_photo: sum.l_photo / n,
            l_ssim: sum.l_ssim / n,
            l_color: sum.l_color / n,
            l_reg: sum.l_reg / n,
            total: sum.total / n,
        })
    }

    /// Runs `iters` optimization steps over `keyframes` (newest first,
    /// round-robin) and returns the mean objective over the window afterward.
    ///
    /// A step with a non-finite loss or gradient is discarded and the learning
    /// rates are halved for the rest of the call. Gradient densification and
    /// pruning run every `densify_every` steps counted across calls.
    pub fn optimize_window(&mut self, keyframes: &[CameraFrame], iters: usize) -> Result<LossBreakdown> {
        if keyframes.is_empty() {
            return Err(Error::Validation("optimize_window needs at least one keyframe".into()));
        }
        if self.map.is_empty() {
            return Err(Error::Validation("optimize_window needs a non-empty map".into()));
        }
        let bg = Vector3::from(self.cfg.background);
        let mut lr = self.cfg.learning_rates.clone();
        let n = keyframes.len();
        for i in 0..iters {
            if self.map.is_empty() {
                break;
            }
            let kf = &keyframes[n - 1 - i % n];
            let out = render(&self.map, kf, &bg);
            let visible: Vec<usize> = out.visible().collect();
            let scales: Vec<Vector3<f64>> = visible.iter().map(|&j| self.map.get(j).scale()).collect();
            let (loss, upstream) = loss_and_grad(&out.color, &kf.image, &scales, &self.cfg, true)?;
            if !loss.is_finite() {
                log::warn!("non-finite loss at step {}; halving learning rates", self.step);
                lr.halve();
                continue;
            }
            let upstream = upstream.expect("gradient requested");
            let mut grads = render_backward(&self.map, kf, &bg, &upstream);
            for (&j, s) in visible.iter().zip(&scales) {
                grads.log_scales[j] += reg_grad_log_scale(s, visible.len(), &self.cfg);
            }
            if !grads.is_finite() {
                log::warn!("non-finite gradient at step {}; halving learning rates", self.step);
                lr.halve();
                continue;
            }
            self.adam.step(&mut self.map.params_mut(), &grads, &visible, &lr, self.extent);
            self.grads.add(&grads.means2d, visible.iter().copied(), out.width(), out.height());
            self.step += 1;
            self.records.push(LossRecord {
                step: self.step,
                l_photo: loss.l_photo,
                l_ssim: loss.l_ssim,
                l_reg: loss.l_reg,
                total: loss.total,
                num_gaussians: self.map.len(),
            });
            if self.cfg.densify_every > 0 && self.step % self.cfg.densify_every == 0 {
                let (counts, origins) = densify_gradient_and_prune_tracked(
                    &mut self.map,
                    &self.grads,
                    &self.cfg,
                    self.extent,
                    self.cfg.gradient_densify,
                    &mut self.rng,
                )?;
                self.apply_origins(&origins);
                self.densify_log.push(counts);
            }
        }
        if self.map.is_empty() {
            return Err(Error::Validation("every Gaussian was pruned".into()));
        }
        self.evaluate(keyframes)
    }
}
