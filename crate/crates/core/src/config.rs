//! Run configuration files: flat `key = value` pairs under `[section]`
//! headers, with keys that mirror the configuration struct fields. `#`
//! starts a comment. See `configs/` in the repository for examples.

use crate::error::{Result, SimError};
use crate::grid::GridSpec;
use crate::initial::DataParams;
use crate::math::Vec3;
use crate::state::RunConfig;
use std::collections::BTreeMap;
use std::path::Path;

struct RawConfig {
    values: BTreeMap<String, String>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(SimError::InvalidConfig(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            let full = if section.is_empty() {
                key.trim().to_string()
            } else {
                format!("{section}.{}", key.trim())
            };
            if values.insert(full.clone(), value.trim().to_string()).is_some() {
                return Err(SimError::InvalidConfig(format!("duplicate key `{full}`")));
            }
        }
        Ok(Self {
            values,
            used: Default::default(),
        })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.values.get(key).map(String::as_str)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| SimError::InvalidConfig(format!("key `{key}`: cannot parse `{s}` as a number"))),
        }
    }

    fn f64_required(&self, key: &str) -> Result<f64> {
        self.get(key)
            .ok_or_else(|| SimError::InvalidConfig(format!("missing required key `{key}`")))?
            .parse()
            .map_err(|_| SimError::InvalidConfig(format!("key `{key}`: cannot parse as a number")))
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| SimError::InvalidConfig(format!("key `{key}`: cannot parse `{s}` as an integer"))),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| SimError::InvalidConfig(format!("key `{key}`: cannot parse `{s}` as an integer"))),
        }
    }

    fn vec3_or(&self, key: &str, default: Vec3) -> Result<Vec3> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => {
                let parts: Vec<&str> = s.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(SimError::InvalidConfig(format!(
                        "key `{key}`: expected three space-separated numbers, got `{s}`"
                    )));
                }
                let mut v = Vec3::zero();
                for (d, part) in parts.iter().enumerate() {
                    v[d] = part.parse().map_err(|_| {
                        SimError::InvalidConfig(format!("key `{key}`: cannot parse `{part}` as a number"))
                    })?;
                }
                Ok(v)
            }
        }
    }

    fn reject_unknown(&self) -> Result<()> {
        let used = self.used.borrow();
        for key in self.values.keys() {
            if !used.contains(key) {
                return Err(SimError::InvalidConfig(format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }
}

/// Parse a configuration from text. Validation of the resulting
/// [`RunConfig`] is the caller's responsibility (the driver always
/// validates before running).
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw = RawConfig::parse(text)?;

    let cells = raw.usize_or("grid.cells_per_axis", 0)?;
    if cells == 0 {
        return Err(SimError::InvalidConfig("missing required key `grid.cells_per_axis`".into()));
    }
    let half_width = raw.f64_required("grid.half_width")?;
    let center = raw.vec3_or("grid.center", Vec3::zero())?;
    let grid = GridSpec::new(center, half_width, cells)?;

    let t_end = raw.f64_required("time.t_end")?;
    let cfl_safety = raw.f64_or("time.cfl_safety", 0.4)?;
    let dt_default = cfl_safety * grid.dx / 3.0_f64.sqrt();
    let dt = raw.f64_or("time.dt", dt_default)?;

    let data = DataParams {
        a_f: raw.f64_or("data.a_f", 0.0)?,
        r_x: raw.f64_or("data.r_x", 1.0)?,
        r_p: raw.f64_or("data.r_p", 1.0)?,
        a_phi: raw.f64_or("data.a_phi", 0.0)?,
        r_phi: raw.f64_or("data.r_phi", 1.0)?,
        a_pi: raw.f64_or("data.a_pi", 0.0)?,
        r_pi: raw.f64_or("data.r_pi", 1.0)?,
        f0_center: raw.vec3_or("data.f0_center", Vec3::zero())?,
        phi_center: raw.vec3_or("data.phi_center", Vec3::zero())?,
        pi_center: raw.vec3_or("data.pi_center", Vec3::zero())?,
    };

    let cfg = RunConfig {
        grid,
        dt,
        t_end,
        cfl_safety,
        data,
        nx_per_axis: raw.usize_or("sampling.nx_per_axis", 16)?,
        np_per_axis: raw.usize_or("sampling.np_per_axis", 16)?,
        history_stride: raw.usize_or("output.history_stride", 0)?,
        history_t_max: raw.f64_or("output.history_t_max", t_end)?,
        output_every: raw.usize_or("output.output_every", 1)?,
        snapshot_every: raw.usize_or("output.snapshot_every", 0)?,
        rng_seed: raw.u64_or("output.rng_seed", 0)?,
    };
    raw.reject_unknown()?;
    Ok(cfg)
}

/// Read and parse a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
