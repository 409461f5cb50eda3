use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eval::{ate_rmse, psnr, ssim, AlignMode};
use crate::io::{read_image, read_trajectory};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub enum EvalInput {
    Trajectories { est: PathBuf, gt: PathBuf, align: AlignMode },
    /// PNGs in `render_dir` are matched by file name against `gt_dir`.
    Renders { render_dir: PathBuf, gt_dir: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ate_rmse_cm: Option<f64>,
    /// `None` when every pair is pixel-identical.
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub pairs: usize,
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

pub fn cmd_eval(input: &EvalInput) -> Result<EvalReport> {
    match input {
        EvalInput::Trajectories { est, gt, align } => {
            let (est, gt) = (read_trajectory(est)?, read_trajectory(gt)?);
            let n = est.len();
            Ok(EvalReport {
                ate_rmse_cm: Some(ate_rmse(&est, &gt, *align)?),
                pairs: n,
                ..Default::default()
            })
        }
        EvalInput::Renders { render_dir, gt_dir } => {
            let names = png_names(render_dir)?;
            if names.is_empty() {
                return Err(Error::Association(format!("no PNG renders in {}", render_dir.display())));
            }
            let (mut psnrs, mut total_ssim) = (Vec::new(), 0.0);
            for name in &names {
                let gt_path = gt_dir.join(name);
                if !gt_path.is_file() {
                    return Err(Error::Association(format!("{name} has no counterpart in {}", gt_dir.display())));
                }
                let (a, b) = (read_image(&render_dir.join(name))?, read_image(&gt_path)?);
                psnrs.push(psnr(&a, &b)?);
                total_ssim += ssim(&a, &b)?;
            }
            let finite: Vec<f64> = psnrs.into_iter().filter(|p| p.is_finite()).collect();
            Ok(EvalReport {
                ate_rmse_cm: None,
                psnr_db: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
                ssim: Some(total_ssim / names.len() as f64),
                pairs: names.len(),
            })
        }
    }
}
