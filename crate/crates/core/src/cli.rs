//! Run configuration, manifests and the 3D attractor projection used by the
//! `ybmap` binary.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelParams, SurvivalDenominator};

pub const DESK_ENSEMBLE_SIZE: usize = 50;
pub const DESK_SNAPSHOTS: usize = 256;
/// Coordinates averaged per projection axis.
pub const WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    pub master_seed: u64,
    pub ensemble_size: usize,
    pub burn_pairs: usize,
    pub snapshot_count: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: ModelParams::default(),
            master_seed: 2024,
            ensemble_size: 400,
            burn_pairs: crate::ensemble::DEFAULT_BURN_PAIRS,
            snapshot_count: crate::ensemble::DEFAULT_SNAPSHOTS,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Format {
        what: "config",
        detail: format!("line {line}: bad value {value:?} for {key}"),
    })
}

impl RunConfig {
    pub fn desk(mut self) -> Self {
        self.ensemble_size = DESK_ENSEMBLE_SIZE;
        self.snapshot_count = DESK_SNAPSHOTS;
        self
    }

    pub fn paper_scale(mut self) -> Self {
        self.ensemble_size = 400;
        self.snapshot_count = crate::ensemble::DEFAULT_SNAPSHOTS;
        self
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped; unknown keys are an error.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| Error::Format {
                what: "config",
                detail: format!("line {line}: expected key = value"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let p = &mut self.params;
            match key {
                "maturation_age" => p.maturation_age = parse_num(key, value, line)?,
                "steps_per_year" => p.steps_per_year = parse_num(key, value, line)?,
                "fecundity_cap" => p.fecundity_cap = parse_num(key, value, line)?,
                "decay_exponent" => p.decay_exponent = parse_num(key, value, line)?,
                "winter_fraction" => p.winter_fraction = parse_num(key, value, line)?,
                "season_slack" => p.season_slack = parse_num(key, value, line)?,
                "survival_denominator" => {
                    p.survival_denominator = match value {
                        "2p" => SurvivalDenominator::TwoP,
                        "2p+1" => SurvivalDenominator::TwoPPlusOne,
                        _ => {
                            return Err(Error::Format {
                                what: "config",
                                detail: format!("line {line}: survival_denominator must be 2p or 2p+1"),
                            })
                        }
                    }
                }
                "master_seed" => self.master_seed = parse_num(key, value, line)?,
                "ensemble_size" => self.ensemble_size = parse_num(key, value, line)?,
                "burn_pairs" => self.burn_pairs = parse_num(key, value, line)?,
                "snapshot_count" => self.snapshot_count = parse_num(key, value, line)?,
                "output_dir" => self.output_dir = PathBuf::from(value),
                _ => {
                    return Err(Error::Format {
                        what: "config",
                        detail: format!("line {line}: unknown key {key:?}"),
                    })
                }
            }
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.ensemble_size == 0 || self.burn_pairs == 0 || self.snapshot_count == 0 {
            return Err(Error::InvalidParams("ensemble_size, burn_pairs and snapshot_count must be at least 1".into()));
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal config. Floats use the
    /// shortest representation that round-trips.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let _ = writeln!(s, "maturation_age = {:?}", p.maturation_age);
        let _ = writeln!(s, "steps_per_year = {}", p.steps_per_year);
        let _ = writeln!(s, "fecundity_cap = {:?}", p.fecundity_cap);
        let _ = writeln!(s, "decay_exponent = {:?}", p.decay_exponent);
        let _ = writeln!(s, "winter_fraction = {:?}", p.winter_fraction);
        let _ = writeln!(s, "season_slack = {:?}", p.season_slack);
        let den = match p.survival_denominator {
            SurvivalDenominator::TwoP => "2p",
            SurvivalDenominator::TwoPPlusOne => "2p+1",
        };
        let _ = writeln!(s, "survival_denominator = {den}");
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let _ = writeln!(s, "ensemble_size = {}", self.ensemble_size);
        let _ = writeln!(s, "burn_pairs = {}", self.burn_pairs);
        let _ = writeln!(s, "snapshot_count = {}", self.snapshot_count);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        s
    }

    /// SHA-256 of [`RunConfig::to_text`], lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Writes a manifest that is itself a valid config file: the provenance
/// lines are comments, followed by the canonical config.
pub fn write_manifest(path: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# command: {command}")?;
    writeln!(f, "# ybmap {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(f, "# config sha256: {}", cfg.hash())?;
    writeln!(f, "# seed: {}", cfg.master_seed)?;
    f.write_all(cfg.to_text().as_bytes())?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// First coordinate of each averaging window: year start, mid-year, and
/// just after the winter gate opens.
pub fn projection_windows(params: &ModelParams) -> [usize; 3] {
    let p = params.steps_per_year;
    [0, p / 2, ((params.winter_fraction + 0.05) * p as f64).ceil() as usize]
}

pub fn project(state: &[f64], params: &ModelParams) -> Result<Projection3> {
    let w = projection_windows(params);
    if w.iter().any(|&s| s + WINDOW > state.len()) {
        return Err(Error::Dimension {
            expected: w.iter().max().unwrap() + WINDOW,
            found: state.len(),
        });
    }
    let mean = |s: usize| state[s..s + WINDOW].iter().sum::<f64>() / WINDOW as f64;
    Ok(Projection3 {
        x: mean(w[0]),
        y: mean(w[1]),
        z: mean(w[2]),
    })
}

pub fn write_projection_csv<W: Write>(mut w: W, params: &ModelParams, rows: &[Projection3]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Precondition("nothing to project".into()));
    }
    let [a, b, c] = projection_windows(params);
    let e = WINDOW - 1;
    writeln!(w, "# x = mean N[{a}..={}], y = mean N[{b}..={}], z = mean N[{c}..={}]", a + e, b + e, c + e)?;
    writeln!(w, "x,y,z")?;
    for r in rows {
        writeln!(w, "{:.16e},{:.16e},{:.16e}", r.x, r.y, r.z)?;
    }
    Ok(())
}

/// Fraction of the box `inner` covered by the box `outer`, per axis
/// product. Boxes are `[min, max]` triples.
pub fn box_overlap(inner: &([f64; 3], [f64; 3]), outer: &([f64; 3], [f64; 3])) -> f64 {
    let mut frac = 1.0;
    for k in 0..3 {
        let len = inner.1[k] - inner.0[k];
        let shared = (inner.1[k].min(outer.1[k]) - inner.0[k].max(outer.0[k])).max(0.0);
        frac *= if len > 0.0 { shared / len } else { 1.0 };
    }
    frac
}

pub fn bounding_box(rows: &[Projection3]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for r in rows {
        for (k, v) in [r.x, r.y, r.z].into_iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    (lo, hi)
}
