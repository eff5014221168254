//! Amplitude-level simulation of quantum Value-at-Risk and CVaR estimators.
//!
//! Scenario prices are encoded either through a canonical amplitude
//! estimation comparator ([`qae_sim`]) or through a bounded threshold
//! polynomial applied to the price amplitude ([`qsp_sim`], fitted in
//! [`threshold_fit`]). Outer amplitude estimation is modelled as an interval
//! oracle with worst-case call accounting ([`ae_sim`]), and [`risk_engine`]
//! drives the bisection searches. [`resource_model`] turns oracle counts into
//! T-depth and logical clock-rate requirements.

pub mod ae_sim;
pub mod chebyshev;
pub mod error;
pub mod lp;
pub mod qae_sim;
pub mod qsp_sim;
pub mod resource_model;
pub mod risk_engine;
pub mod scenario_gen;
pub mod threshold_fit;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

pub use error::{Error, Result};

/// Writes `bytes` to a sibling temp file and renames it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| error::invalid(format!("{} has no file name", path.display())))?;
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let tmp = dir.join(format!(
        ".{}.{}.{}.tmp",
        name.to_string_lossy(),
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
