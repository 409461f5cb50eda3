use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::trajectory::{associate, Trajectory, ASSOCIATION_WINDOW};
use crate::scene::Sim3;
use crate::{Error, Result};

/// How the estimate is registered to ground truth before measuring ATE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    None,
    Se3,
    #[default]
    Sim3,
}

impl std::str::FromStr for AlignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "off" => Ok(AlignMode::None),
            "se3" => Ok(AlignMode::Se3),
            "sim3" => Ok(AlignMode::Sim3),
            other => Err(Error::Config(format!("unknown alignment mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Alignment {
    /// Maps estimated positions onto ground truth.
    pub transform: Sim3,
    /// Associated pair count.
    pub pairs: usize,
    /// Set when the points are (nearly) collinear and the rotation about
    /// their line is arbitrary.
    pub degenerate: bool,
}

/// Closed-form least-squares registration of `src` onto `dst` (Umeyama).
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Result<Alignment> {
    let n = src.len();
    if n < 3 || dst.len() != n {
        return Err(Error::Association(format!(
            "alignment needs at least 3 associated pairs, got {n}"
        )));
    }
    let nf = n as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / nf;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (cs, cd) = (s - mu_s, d - mu_d);
        cov += cd * cs.transpose();
        var_s += cs.norm_squared();
    }
    cov /= nf;
    var_s /= nf;

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let degenerate = sv[order[1]] <= 1e-10 * sv[order[0]].max(f64::MIN_POSITIVE);

    let mut s_diag = Vector3::repeat(1.0);
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s_diag[order[2]] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&s_diag) * v_t;
    let scale = if with_scale {
        if var_s <= 0.0 {
            return Err(Error::Association("estimated positions are all identical".into()));
        }
        sv.component_mul(&s_diag).sum() / var_s
    } else {
        1.0
    };
    let translation = mu_d - rotation * mu_s * scale;
    Ok(Alignment {
        transform: Sim3 {
            scale,
            rotation,
            translation,
        },
        pairs: n,
        degenerate,
    })
}

fn associated_positions(est: &Trajectory, gt: &Trajectory) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let pairs = associate(est, gt, ASSOCIATION_WINDOW);
    let e = est.entries();
    let g = gt.entries();
    pairs
        .iter()
        .map(|&(i, j)| (e[i].1.translation, g[j].1.translation))
        .unzip()
}

/// Similarity transform aligning `est` onto `gt` over timestamp-associated pairs.
pub fn align_sim3(est: &Trajectory, gt: &Trajectory) -> Result<Alignment> {
    let (src, dst) = associated_positions(est, gt);
    umeyama(&src, &dst, true)
}

/// Root-mean-square translational error in centimeters (inputs in meters).
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory, align: AlignMode) -> Result<f64> {
    let (src, dst) = associated_positions(est, gt);
    if src.is_empty() {
        return Err(Error::Association(
            "no estimated pose has a ground-truth sample within 0.02 s".into(),
        ));
    }
    let transform = match align {
        AlignMode::None => Sim3::identity(),
        AlignMode::Se3 => umeyama(&src, &dst, false)?.transform,
        AlignMode::Sim3 => umeyama(&src, &dst, true)?.transform,
    };
    let sq: f64 = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| (transform.apply(s) - d).norm_squared())
        .sum();
    Ok((sq / src.len() as f64).sqrt() * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Se3;
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Vector6};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj(points: &[Vector3<f64>]) -> Trajectory {
        Trajectory::from_entries(
            points
                .iter()
                .enumerate()
                .map(|(i, p)| (i as f64, Se3::from_translation(*p)))
                .collect(),
        )
        .unwrap()
    }

    fn helix(n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|i| {
                let a = i as f64 * 0.3;
                Vector3::new(a.cos(), a.sin(), 0.1 * a)
            })
            .collect()
    }

    #[test]
    fn identical_trajectories_give_identity() {
        let pts = helix(10);
        let a = align_sim3(&traj(&pts), &traj(&pts)).unwrap();
        assert_relative_eq!(a.transform.scale, 1.0, epsilon = 1e-12);
        assert_relative_eq!(a.transform.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(a.transform.translation, Vector3::zeros(), epsilon = 1e-12);
        assert!(!a.degenerate);
    }

    #[test]
    fn recovers_rotation_and_scale() {
        let gt = helix(12);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        // est = gt rotated and scaled, so the alignment is the inverse.
        let est: Vec<_> = gt.iter().map(|p| rz * p * 2.0).collect();
        let a = align_sim3(&traj(&est), &traj(&gt)).unwrap();
        assert_relative_eq!(a.transform.scale, 0.5, epsilon = 1e-12);
        assert_relative_eq!(a.transform.rotation, *rz.inverse().matrix(), epsilon = 1e-12);
        assert!(ate_rmse(&traj(&est), &traj(&gt), AlignMode::Sim3).unwrap() < 1e-9);
    }

    #[test]
    fn random_similarity_residual_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let gt: Vec<Vector3<f64>> = (0..20)
                .map(|_| Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)))
                .collect();
            let xi = Vector6::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let pose = Se3::exp(&xi);
            let s = rng.random_range(0.1..10.0);
            let est: Vec<_> = gt.iter().map(|p| pose.transform_point(p) * s).collect();
            let a = align_sim3(&traj(&est), &traj(&gt)).unwrap();
            let worst = est
                .iter()
                .zip(&gt)
                .map(|(e, g)| (a.transform.apply(e) - g).norm())
                .fold(0.0, f64::max);
            assert!(worst < 1e-9, "residual {worst}");
        }
    }

    #[test]
    fn collinear_points_are_flagged() {
        let gt: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let a = align_sim3(&traj(&gt), &traj(&gt)).unwrap();
        assert!(a.degenerate);
        assert_relative_eq!(a.transform.scale, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn too_few_pairs() {
        let pts = helix(2);
        assert!(matches!(align_sim3(&traj(&pts), &traj(&pts)), Err(Error::Association(_))));
    }

    #[test]
    fn hand_computed_unaligned_case() {
        let gt = traj(&[Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0)]);
        let est = traj(&[Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(2.0, 1.0, 0.0)]);
        let ate = ate_rmse(&est, &gt, AlignMode::None).unwrap();
        assert!((ate - 100.0 * (1.0f64 / 3.0).sqrt()).abs() < 1e-9);
        assert!((ate - 57.735).abs() < 1e-3);
    }

    #[test]
    fn no_association_is_an_error() {
        let a = traj(&helix(4));
        let b = Trajectory::from_entries(vec![(100.0, Se3::identity())]).unwrap();
        assert!(matches!(ate_rmse(&a, &b, AlignMode::None), Err(Error::Association(_))));
    }
}
