//! Order-2 Kolmogorov entropy from escape times of close pairs of attractor
//! snapshots taken from different trajectories.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::ensemble::{read_exact, read_u32, read_u64, read_values, write_values, SnapshotFile};
use crate::error::{Error, Result};
use crate::model::{Model, StateVector};

/// True iff every coordinate but the last differs by less than `d`.
pub fn within(a: &[f64], b: &[f64], d: f64) -> bool {
    let n = a.len().min(b.len()).saturating_sub(1);
    a[..n].iter().zip(&b[..n]).all(|(x, y)| (x - y).abs() < d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchRecord {
    pub file_j: u32,
    pub iter_j: u64,
    pub state_j: StateVector,
    pub file_i: u32,
    pub iter_i: u64,
    pub state_i: StateVector,
}

/// Position of a match inside an ensemble: file slots and post-burn record
/// indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct MatchRef {
    pub slot_j: usize,
    pub snap_j: usize,
    pub slot_i: usize,
    pub snap_i: usize,
}

impl MatchRef {
    pub fn resolve(&self, files: &[SnapshotFile]) -> MatchRecord {
        let a = &files[self.slot_j];
        let b = &files[self.slot_i];
        let ra = &a.post_burn()[self.snap_j];
        let rb = &b.post_burn()[self.snap_i];
        MatchRecord {
            file_j: a.file_id,
            iter_j: ra.label,
            state_j: ra.state.clone(),
            file_i: b.file_id,
            iter_i: rb.label,
            state_i: rb.state.clone(),
        }
    }
}

fn check_files(files: &[SnapshotFile]) -> Result<()> {
    if files.windows(2).any(|w| w[0].file_id >= w[1].file_id) {
        return Err(Error::Precondition("files must be ordered by strictly increasing id".into()));
    }
    let dims: Vec<usize> = files
        .iter()
        .flat_map(|f| f.records.first())
        .map(|r| r.state.len())
        .collect();
    if dims.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Precondition("files have different state dimensions".into()));
    }
    Ok(())
}

/// All cross-file post-burn pairs closer than `d`, in canonical order:
/// file `j`, snapshot of `j`, file `i > j`, snapshot of `i`.
pub fn match_refs(files: &[SnapshotFile], d: f64) -> Result<Vec<MatchRef>> {
    if !(d > 0.0) {
        return Err(Error::Precondition(format!("distance {d} must be positive")));
    }
    check_files(files)?;
    // Candidate pruning on coordinate 0.
    let sorted: Vec<Vec<(f64, usize)>> = files
        .iter()
        .map(|f| {
            let mut v: Vec<(f64, usize)> = f.post_burn().iter().enumerate().map(|(k, r)| (r.state[0], k)).collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            v
        })
        .collect();
    let per_j: Vec<Vec<MatchRef>> = (0..files.len())
        .into_par_iter()
        .map(|slot_j| {
            let mut out = Vec::new();
            let mut hits = Vec::new();
            for (snap_j, a) in files[slot_j].post_burn().iter().enumerate() {
                let key = a.state[0];
                for slot_i in slot_j + 1..files.len() {
                    let cand = &sorted[slot_i];
                    let lo = cand.partition_point(|c| c.0 <= key - d);
                    hits.clear();
                    for &(x0, snap_i) in &cand[lo..] {
                        if x0 >= key + d {
                            break;
                        }
                        if within(&a.state, &files[slot_i].post_burn()[snap_i].state, d) {
                            hits.push(snap_i);
                        }
                    }
                    hits.sort_unstable();
                    out.extend(hits.iter().map(|&snap_i| MatchRef {
                        slot_j,
                        snap_j,
                        slot_i,
                        snap_i,
                    }));
                }
            }
            out
        })
        .collect();
    Ok(per_j.into_iter().flatten().collect())
}

pub fn collect_matches(files: &[SnapshotFile], d: f64) -> Result<Vec<MatchRecord>> {
    Ok(match_refs(files, d)?.iter().map(|m| m.resolve(files)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EscapeTime {
    pub steps: usize,
    /// The pair was still within `d` after `cap` steps.
    pub capped: bool,
}

/// Number of joint `T^2` steps until the pair is no longer within `d`.
pub fn escape_time(model: &Model, a: &StateVector, b: &StateVector, d: f64, cap: usize) -> Result<EscapeTime> {
    if !within(a, b, d) {
        return Err(Error::Precondition("escape time needs a pair that starts within d".into()));
    }
    let mut x = a.clone();
    let mut y = b.clone();
    for step in 1..=cap {
        x = model.advance_two(&x)?;
        y = model.advance_two(&y)?;
        if !within(&x, &y, d) {
            return Ok(EscapeTime { steps: step, capped: false });
        }
    }
    Ok(EscapeTime { steps: cap, capped: true })
}

/// A match reduced to what deduplication and estimation look at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
    pub file_j: u32,
    pub iter_j: u64,
    pub file_i: u32,
    pub iter_i: u64,
    pub escape: usize,
}

/// Consecutive-overlap filter: a sample is dropped when it continues the
/// previously retained one, i.e. shares its `file_i` and starts no later
/// than `iter_i + escape`, or shares its `file_j` and starts no later than
/// `iter_j + escape`. Labels count `T` steps while escapes count `T^2`
/// steps; the comparison mixes them exactly like the original tool did.
pub fn dedup(samples: &[Sample]) -> Vec<Sample> {
    let mut kept: Vec<Sample> = Vec::with_capacity(samples.len());
    for s in samples {
        if let Some(prev) = kept.last() {
            let b = prev.escape as u64;
            if s.file_i == prev.file_i && prev.iter_i + b >= s.iter_i {
                continue;
            }
            if s.file_j == prev.file_j && prev.iter_j + b >= s.iter_j {
                continue;
            }
        }
        kept.push(*s);
    }
    kept
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyEstimate {
    pub d: f64,
    pub sample_count: usize,
    pub mean_escape: f64,
    pub k_hat: f64,
    /// `1 / (sqrt(M) k_hat sqrt(b (b - 1)))`, the formula the reference
    /// tables were printed with.
    pub sigma_k: f64,
    pub tau_s: f64,
}

impl EntropyEstimate {
    /// Delta-method standard deviation of `k_hat` for geometric escape
    /// times; equals `k_hat * sigma_k` when `tau_s = 1`.
    pub fn propagated_sigma(&self) -> f64 {
        let b = self.mean_escape;
        1.0 / ((self.sample_count as f64).sqrt() * (b * (b - 1.0)).sqrt() * self.tau_s)
    }

    /// Entropy per application of `T`, given `tau_s` counts `T^2` steps.
    pub fn per_year(&self) -> f64 {
        self.k_hat / 2.0
    }
}

/// `-(1/tau_s) ln|1 - 1/b|`.
pub fn k_from_mean_escape(mean_escape: f64, tau_s: f64) -> f64 {
    -(1.0 - 1.0 / mean_escape).abs().ln() / tau_s
}

/// Inverse of [`k_from_mean_escape`] for `k > 0`.
pub fn mean_escape_from_k(k: f64, tau_s: f64) -> f64 {
    1.0 / (1.0 - (-k * tau_s).exp())
}

pub fn estimate_from_mean(mean_escape: f64, sample_count: usize, d: f64, tau_s: f64) -> Result<EntropyEstimate> {
    if sample_count == 0 {
        return Err(Error::Undefined("no samples".into()));
    }
    if !(mean_escape > 1.0) {
        return Err(Error::Undefined(format!("mean escape time {mean_escape} must exceed 1")));
    }
    if !(tau_s > 0.0) {
        return Err(Error::Precondition(format!("sample interval {tau_s} must be positive")));
    }
    let k_hat = k_from_mean_escape(mean_escape, tau_s);
    Ok(EntropyEstimate {
        d,
        sample_count,
        mean_escape,
        k_hat,
        sigma_k: 1.0 / ((sample_count as f64).sqrt() * k_hat * (mean_escape * (mean_escape - 1.0)).sqrt()),
        tau_s,
    })
}

pub fn estimate(escapes: &[usize], d: f64, tau_s: f64) -> Result<EntropyEstimate> {
    let mean = escapes.iter().sum::<usize>() as f64 / escapes.len() as f64;
    estimate_from_mean(mean, escapes.len(), d, tau_s)
}

/// Everything computed for one `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyRun {
    pub d: f64,
    pub matches: usize,
    /// Pairs still together at the escape cap; left out of the estimate.
    pub capped: usize,
    pub retained: Vec<Sample>,
    pub estimate: Option<EntropyEstimate>,
}

/// Escape time of a stored pair. Stored successors are exact `T^2` images,
/// so the walk reads them back and only iterates once a file runs out.
fn stored_escape_time(model: &Model, files: &[SnapshotFile], m: &MatchRef, d: f64, cap: usize) -> Result<EscapeTime> {
    let a = &files[m.slot_j].post_burn()[m.snap_j..];
    let b = &files[m.slot_i].post_burn()[m.snap_i..];
    if !within(&a[0].state, &b[0].state, d) {
        return Err(Error::Precondition("escape time needs a pair that starts within d".into()));
    }
    let stored = a.len().min(b.len()) - 1;
    for step in 1..=stored.min(cap) {
        if !within(&a[step].state, &b[step].state, d) {
            return Ok(EscapeTime { steps: step, capped: false });
        }
    }
    if stored >= cap {
        return Ok(EscapeTime { steps: cap, capped: true });
    }
    let rest = escape_time(model, &a[stored].state, &b[stored].state, d, cap - stored)?;
    Ok(EscapeTime {
        steps: stored + rest.steps,
        capped: rest.capped,
    })
}

fn samples_for(model: &Model, files: &[SnapshotFile], refs: &[MatchRef], d: f64, cap: usize) -> Result<(Vec<Sample>, usize)> {
    let timed: Vec<(Sample, bool)> = refs
        .par_iter()
        .map(|m| {
            let e = stored_escape_time(model, files, m, d, cap)?;
            Ok((
                Sample {
                    file_j: files[m.slot_j].file_id,
                    iter_j: files[m.slot_j].post_burn()[m.snap_j].label,
                    file_i: files[m.slot_i].file_id,
                    iter_i: files[m.slot_i].post_burn()[m.snap_i].label,
                    escape: e.steps,
                },
                e.capped,
            ))
        })
        .collect::<Result<_>>()?;
    let capped = timed.iter().filter(|t| t.1).count();
    Ok((timed.into_iter().filter(|t| !t.1).map(|t| t.0).collect(), capped))
}

fn run_from_refs(model: &Model, files: &[SnapshotFile], refs: &[MatchRef], d: f64, cap: usize, tau_s: f64) -> Result<EntropyRun> {
    let (samples, capped) = samples_for(model, files, refs, d, cap)?;
    let retained = dedup(&samples);
    let escapes: Vec<usize> = retained.iter().map(|s| s.escape).collect();
    let estimate = match estimate(&escapes, d, tau_s) {
        Ok(e) => Some(e),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EntropyRun {
        d,
        matches: refs.len(),
        capped,
        retained,
        estimate,
    })
}

/// Collect, time, deduplicate and estimate at one distance.
pub fn entropy_at(model: &Model, files: &[SnapshotFile], d: f64, cap: usize, tau_s: f64) -> Result<EntropyRun> {
    let refs = match_refs(files, d)?;
    run_from_refs(model, files, &refs, d, cap, tau_s)
}

/// `k/2048` and `k/65536` for `k = 16..1`.
pub fn sweep_grid() -> Vec<f64> {
    let coarse = (1..=16).rev().map(|k| k as f64 / 2048.0);
    let fine = (1..=16).rev().map(|k| k as f64 / 65536.0);
    coarse.chain(fine).collect()
}

/// Entropy at every distance of [`sweep_grid`]. Matches are collected once
/// at the largest distance and filtered down, which yields the same
/// canonical stream as collecting at each distance separately.
pub fn sweep(model: &Model, files: &[SnapshotFile], cap: usize, tau_s: f64) -> Result<Vec<EntropyRun>> {
    let grid = sweep_grid();
    let all = match_refs(files, grid[0])?;
    grid.iter()
        .map(|&d| {
            let refs: Vec<MatchRef> = all
                .iter()
                .filter(|m| {
                    within(
                        &files[m.slot_j].post_burn()[m.snap_j].state,
                        &files[m.slot_i].post_burn()[m.snap_i].state,
                        d,
                    )
                })
                .copied()
                .collect();
            run_from_refs(model, files, &refs, d, cap, tau_s)
        })
        .collect()
}

/// `entropy,sigma,d`; rows without an estimate carry `NaN`.
pub fn write_sweep_csv<W: Write>(mut w: W, runs: &[EntropyRun]) -> Result<()> {
    writeln!(w, "entropy,sigma,d")?;
    for r in runs {
        match &r.estimate {
            Some(e) => writeln!(w, "{:.16e},{:.16e},{:.16e}", e.k_hat, e.sigma_k, r.d)?,
            None => writeln!(w, "NaN,NaN,{:.16e}", r.d)?,
        }
    }
    Ok(())
}

pub fn write_matches<W: Write>(mut w: W, records: &[MatchRecord]) -> Result<()> {
    for m in records {
        w.write_all(&m.file_j.to_le_bytes())?;
        w.write_all(&m.iter_j.to_le_bytes())?;
        write_values(&mut w, &m.state_j)?;
        w.write_all(&m.file_i.to_le_bytes())?;
        w.write_all(&m.iter_i.to_le_bytes())?;
        write_values(&mut w, &m.state_i)?;
    }
    Ok(())
}

/// Reads a match stream of states with `2p+1` coordinates until EOF.
pub fn read_matches<R: Read>(mut r: R, p: usize) -> Result<Vec<MatchRecord>> {
    const WHAT: &str = "match stream";
    let dim = 2 * p + 1;
    let mut out = Vec::new();
    loop {
        let mut first = [0u8; 4];
        let got = r.read(&mut first)?;
        if got == 0 {
            return Ok(out);
        }
        read_exact(&mut r, &mut first[got..], WHAT)?;
        let file_j = u32::from_le_bytes(first);
        let iter_j = read_u64(&mut r, WHAT)?;
        let state_j = StateVector::new(read_values(&mut r, dim, WHAT)?)?;
        let file_i = read_u32(&mut r, WHAT)?;
        let iter_i = read_u64(&mut r, WHAT)?;
        let state_i = StateVector::new(read_values(&mut r, dim, WHAT)?)?;
        out.push(MatchRecord {
            file_j,
            iter_j,
            state_j,
            file_i,
            iter_i,
            state_i,
        });
    }
}
