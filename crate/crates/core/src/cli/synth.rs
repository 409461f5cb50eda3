use std::path::Path;

use crate::io::{write_synthetic, SyntheticScene};
use crate::Result;

/// Writes a synthetic sequence loadable with the `synthetic` format.
pub fn cmd_synth(scene: &SyntheticScene, out: &Path) -> Result<()> {
    write_synthetic(scene, out)
}
