//! Reproducibility stamp written into every output directory.

use std::path::Path;

use udet_core::Result;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// seed, config hash, and version, one per line.
pub fn write_stamp(dir: &Path, command: &str, seed: u64, config_text: &str) -> Result<()> {
    let text = format!(
        "command = {command}\nseed = {seed}\nconfig_hash = {:016x}\nversion = {}\n",
        fnv1a64(config_text.as_bytes()),
        env!("CARGO_PKG_VERSION")
    );
    std::fs::write(dir.join("run_stamp.txt"), text)?;
    Ok(())
}
