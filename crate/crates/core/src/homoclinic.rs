//! Numerical search for a transversal homoclinic point of the period-2
//! point: an unstable-segment proxy, a scan for close returns, controlled
//! marching of a short arc around the best return, and angle diagnostics.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Model, StateVector};

pub const DEFAULT_SEGMENT_POWER: usize = 19;
pub const DEFAULT_SUBDIVISIONS: usize = 10_000;
pub const DEFAULT_MAX_PAIRS: usize = 1024;
pub const DEFAULT_SKIP: usize = 20;
/// Returns at or beyond this many `T^2` steps are discarded.
pub const RETURN_CEILING: usize = 700;
pub const DEFAULT_RATIO_TOL: f64 = 1.0001;
pub const DEFAULT_MAX_LENGTH: f64 = 1e-4;
/// Below this the arc has lost all resolution.
pub const MIN_LENGTH: f64 = 1e-16;
pub const DIAGNOSTIC_ITERATES: usize = 8;

const CROSSING_ANGLE: f64 = 3.0;
const SAME_SIDE_ANGLE: f64 = 1e-2;

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn axpy(x: &[f64], t: f64, dir: &[f64]) -> Vec<f64> {
    x.iter().zip(dir).map(|(a, d)| a + t * d).collect()
}

fn max_abs(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |m, x| m.max(x.abs()))
}

/// Euclidean distance, computed on differences rescaled by their largest
/// magnitude.
pub fn scaled_distance(a: &[f64], b: &[f64]) -> f64 {
    let m = max_abs(a.iter().zip(b).map(|(x, y)| x - y));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    let s: f64 = a.iter().zip(b).map(|(x, y)| ((x - y) / m).powi(2)).sum();
    m * s.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Angle {
    /// In `[0, pi]`.
    pub radians: f64,
    /// One of the vectors was zero; `radians` is then 0.
    pub degenerate: bool,
}

impl Angle {
    pub fn degrees(&self) -> f64 {
        self.radians.to_degrees()
    }
}

pub fn angle(u: &[f64], v: &[f64]) -> Angle {
    let mu = max_abs(u.iter().copied());
    let mv = max_abs(v.iter().copied());
    if mu == 0.0 || mv == 0.0 {
        return Angle {
            radians: 0.0,
            degenerate: true,
        };
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (a, b) = (a / mu, b / mv);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    Angle {
        radians: (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0).acos(),
        degenerate: false,
    }
}

/// `[T^(2s)(p), T^(2s+2)(p)]`, a stand-in for the local unstable manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct UnstableSegment {
    pub left: StateVector,
    pub right: StateVector,
    pub s: usize,
    pub length: f64,
}

impl UnstableSegment {
    /// `right - left`.
    pub fn direction(&self) -> Vec<f64> {
        diff(&self.right, &self.left)
    }

    /// Lattice point `m` of a subdivision into `n` equal parts.
    pub fn lattice_point(&self, m: usize, n: usize) -> Vec<f64> {
        let unit: Vec<f64> = self.direction().iter().map(|d| d / n as f64).collect();
        axpy(&self.left, m as f64, &unit)
    }
}

/// Upper bound on the segment length for the two standard choices of `s`.
/// The unpolished tabulated point misses the `s = 19` bound (about 3.4e-3);
/// its Newton-polished form is well inside it.
pub fn segment_length_bound(s: usize) -> Option<f64> {
    match s {
        19 => Some(1e-3),
        15 => Some(1e-4),
        _ => None,
    }
}

pub fn unstable_segment(model: &Model, fixed_point: &StateVector, s: usize) -> Result<UnstableSegment> {
    let residual = fixed_point.sup_distance(&model.advance_two(fixed_point)?);
    if residual > 1e-10 {
        return Err(Error::Precondition(format!(
            "period-2 point has sup residual {residual:e}, need at most 1e-10"
        )));
    }
    let left = model.advance_two_n(fixed_point, s)?;
    let right = model.advance_two(&left)?;
    let length = scaled_distance(&left, &right);
    if let Some(bound) = segment_length_bound(s) {
        if !(length < bound) {
            return Err(Error::Precondition(format!(
                "segment for s = {s} has length {length:e}, expected below {bound:e}; the period-2 point is not accurate enough"
            )));
        }
    }
    Ok(UnstableSegment { left, right, s, length })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanConfig {
    pub subdivisions: usize,
    pub max_pairs: usize,
    pub skip: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            subdivisions: DEFAULT_SUBDIVISIONS,
            max_pairs: DEFAULT_MAX_PAIRS,
            skip: DEFAULT_SKIP,
        }
    }
}

/// Closest approach of one lattice point's orbit to the fixed point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReturnCandidate {
    pub m: usize,
    pub min_distance: f64,
    /// Number of `T^2` steps at the closest approach.
    pub j0: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanOutcome {
    pub best: ReturnCandidate,
    /// One entry per lattice point, `m = 0..=subdivisions`.
    pub per_point: Vec<ReturnCandidate>,
    pub rejected: usize,
}

impl ReturnCandidate {
    /// Returns in the first allowed step are the orbit leaving, not coming
    /// back; late ones are beyond the usable horizon.
    pub fn acceptable(&self, skip: usize) -> bool {
        self.j0 > skip + 1 && self.j0 < RETURN_CEILING
    }
}

pub fn scan_returns(model: &Model, fixed_point: &StateVector, segment: &UnstableSegment, cfg: ScanConfig) -> Result<ScanOutcome> {
    if cfg.subdivisions == 0 || cfg.max_pairs <= cfg.skip + 1 {
        return Err(Error::Precondition(format!(
            "need subdivisions >= 1 and max_pairs > skip + 1, got {cfg:?}"
        )));
    }
    let n = cfg.subdivisions;
    let unit: Vec<f64> = segment.direction().iter().map(|d| d / n as f64).collect();
    let per_point: Vec<ReturnCandidate> = (0..=n)
        .into_par_iter()
        .map(|m| {
            let mut y = StateVector::new(axpy(&segment.left, m as f64, &unit))?;
            let mut best = ReturnCandidate {
                m,
                min_distance: f64::INFINITY,
                j0: 0,
            };
            for j in 1..=cfg.max_pairs {
                y = model.advance_two(&y)?;
                if j <= cfg.skip {
                    continue;
                }
                let dist = scaled_distance(&y, fixed_point);
                if dist < best.min_distance {
                    best.min_distance = dist;
                    best.j0 = j;
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let mut best: Option<ReturnCandidate> = None;
    let mut rejected = 0;
    for c in &per_point {
        if !c.acceptable(cfg.skip) {
            rejected += 1;
            continue;
        }
        // strict comparison keeps the lowest index on ties
        if best.map_or(true, |b| c.min_distance < b.min_distance) {
            best = Some(*c);
        }
    }
    let best = best.ok_or_else(|| Error::Inconclusive("every lattice point was rejected".into()))?;
    Ok(ScanOutcome {
        best,
        per_point,
        rejected,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    /// Chunk sizes in `T^2` steps, tried in order when a chunk is rejected.
    pub chunks: Vec<usize>,
    pub max_length: f64,
    pub ratio_tol: f64,
    /// Subdivision count the candidate lattice was built with.
    pub subdivisions: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            chunks: vec![10, 8, 2],
            max_length: DEFAULT_MAX_LENGTH,
            ratio_tol: DEFAULT_RATIO_TOL,
            subdivisions: DEFAULT_SUBDIVISIONS,
        }
    }
}

/// Five points of the marched arc. The four outer points are stored as
/// offsets from `mid`, which follows the same orbit as the scan.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinementState {
    pub mid: Vec<f64>,
    /// Offsets of `L`, `Lq`, `Rq`, `R` from `mid`.
    pub offsets: [Vec<f64>; 4],
    pub iterations_done: usize,
    pub budget_remaining: usize,
}

impl RefinementState {
    fn centered(mid: Vec<f64>, dir: &[f64], gap: f64, iterations_done: usize, budget_remaining: usize) -> Self {
        let at = |c: f64| dir.iter().map(|d| c * d / gap).collect();
        Self {
            mid,
            offsets: [at(-1.0), at(-0.5), at(0.5), at(1.0)],
            iterations_done,
            budget_remaining,
        }
    }

    fn point(&self, i: usize) -> Vec<f64> {
        self.mid.iter().zip(&self.offsets[i]).map(|(m, d)| m + d).collect()
    }

    pub fn l(&self) -> Vec<f64> {
        self.point(0)
    }

    pub fn r(&self) -> Vec<f64> {
        self.point(3)
    }

    /// `R - L`.
    pub fn chord(&self) -> Vec<f64> {
        diff(&self.offsets[3], &self.offsets[0])
    }

    pub fn length(&self) -> f64 {
        scaled_distance(&self.offsets[0], &self.offsets[3])
    }

    /// Sum of the four sub-arc lengths.
    pub fn arc_sum(&self) -> f64 {
        let zero = vec![0.0; self.mid.len()];
        let [l, lq, rq, r] = &self.offsets;
        scaled_distance(l, lq) + scaled_distance(lq, &zero) + scaled_distance(&zero, rq) + scaled_distance(rq, r)
    }

    fn march(&self, model: &Model, steps: usize) -> Result<Self> {
        let mut mid = self.mid.clone();
        let mut offsets = self.offsets.clone();
        for _ in 0..steps {
            let refs: Vec<&[f64]> = offsets.iter().map(|o| o.as_slice()).collect();
            let (next, images) = model.advance_two_offsets(&mid, &refs)?;
            mid = next.into_inner();
            offsets = images.try_into().unwrap();
        }
        Ok(Self {
            mid,
            offsets,
            iterations_done: self.iterations_done + steps,
            budget_remaining: self.budget_remaining - steps,
        })
    }
}

/// One attempted march step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChunkRecord {
    /// `T^2` steps done before the chunk.
    pub start: usize,
    pub steps: usize,
    pub length_before: f64,
    pub length_after: f64,
    pub arc_sum_after: f64,
    pub accepted: bool,
    /// The closing remainder step, which only lands on `j0` and is not
    /// subject to the length and straightness guards.
    pub landing: bool,
}

impl ChunkRecord {
    pub fn ratio(&self) -> f64 {
        self.arc_sum_after / self.length_after
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    CrossingEvidence,
    SameSide,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::CrossingEvidence => "CROSSING_EVIDENCE",
            Verdict::SameSide => "SAME_SIDE",
            Verdict::Inconclusive => "INCONCLUSIVE",
        })
    }
}

/// Crossing: the angle climbs above 3.0 rad by iterate 3 and stays there
/// through the last one. Same side: non-increasing until it first drops
/// below 1e-2, which happens by iterate 3.
pub fn classify(angles: &[f64]) -> Verdict {
    if angles.len() < DIAGNOSTIC_ITERATES {
        return Verdict::Inconclusive;
    }
    let angles = &angles[..DIAGNOSTIC_ITERATES];
    if let Some(first) = angles[..4].iter().position(|&a| a > CROSSING_ANGLE) {
        if angles[first..].iter().all(|&a| a >= CROSSING_ANGLE) {
            return Verdict::CrossingEvidence;
        }
    }
    if let Some(k) = angles[..4].iter().position(|&a| a < SAME_SIDE_ANGLE) {
        if angles[..=k].windows(2).all(|w| w[1] <= w[0]) {
            return Verdict::SameSide;
        }
    }
    Verdict::Inconclusive
}

#[derive(Clone, Debug, PartialEq)]
pub struct AngleDiagnostics {
    /// Between the final arc and the unstable segment; near 0 or pi away
    /// from tangencies.
    pub far_from_tangency_angle: f64,
    /// Angle between `T^2j(L) - p` and `T^2j(R) - p` for `j = 0..8`.
    pub per_iterate_angles: Vec<f64>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refinement {
    pub gap_exponent: f64,
    pub initial_length: f64,
    pub state: RefinementState,
    pub chunks: Vec<ChunkRecord>,
    pub diagnostics: AngleDiagnostics,
    pub mid_distance: f64,
    pub mid_sup_distance: f64,
    pub mid_l1_distance: f64,
    pub l_distance: f64,
    pub r_distance: f64,
    pub expansion: f64,
}

impl Refinement {
    /// Guarded chunks that were accepted.
    pub fn accepted_chunks(&self) -> impl Iterator<Item = &ChunkRecord> {
        self.chunks.iter().filter(|c| c.accepted && !c.landing)
    }
}

/// Marches an arc of half-width `unit / 2^gap_exponent` around lattice
/// point `candidate.m` for `candidate.j0` steps of `T^2`, then measures
/// how the endpoints sit relative to the fixed point.
pub fn refine(
    model: &Model,
    fixed_point: &StateVector,
    segment: &UnstableSegment,
    candidate: &ReturnCandidate,
    gap_exponent: f64,
    cfg: &RefineConfig,
) -> Result<Refinement> {
    if !(gap_exponent > 3.0 && gap_exponent <= 20.0) {
        return Err(Error::Precondition(format!("gap exponent {gap_exponent} must lie in (3, 20]")));
    }
    if cfg.chunks.is_empty() || cfg.chunks.contains(&0) || cfg.subdivisions == 0 {
        return Err(Error::Precondition("chunk plan and subdivisions must be positive".into()));
    }
    let gap = gap_exponent.exp2();
    let n = cfg.subdivisions;
    let unit: Vec<f64> = segment.direction().iter().map(|d| d / n as f64).collect();
    let mid = axpy(&segment.left, candidate.m as f64, &unit);
    let mut state = RefinementState::centered(mid, &unit, gap, 0, candidate.j0);
    let initial_length = state.length();
    let mut log = Vec::new();
    let largest = cfg.chunks[0];

    while state.budget_remaining > 0 {
        let length_before = state.length();
        if length_before <= MIN_LENGTH {
            return Err(Error::GapTooSmall { length: length_before });
        }
        if state.budget_remaining < largest {
            let steps = state.budget_remaining;
            let trial = state.march(model, steps)?;
            let zero = vec![0.0; trial.mid.len()];
            log.push(ChunkRecord {
                start: state.iterations_done,
                steps,
                length_before,
                length_after: trial.length(),
                arc_sum_after: scaled_distance(&trial.offsets[0], &zero) + scaled_distance(&zero, &trial.offsets[3]),
                accepted: true,
                landing: true,
            });
            state = trial;
            break;
        }
        let mut accepted = None;
        for &steps in cfg.chunks.iter().filter(|&&s| s <= state.budget_remaining) {
            let trial = state.march(model, steps)?;
            let length_after = trial.length();
            let arc_sum_after = trial.arc_sum();
            let ok = length_after <= cfg.max_length && arc_sum_after <= cfg.ratio_tol * length_after;
            log.push(ChunkRecord {
                start: state.iterations_done,
                steps,
                length_before,
                length_after,
                arc_sum_after,
                accepted: ok,
                landing: false,
            });
            if ok {
                accepted = Some(trial);
                break;
            }
        }
        let trial = accepted.ok_or_else(|| {
            let last = log.last().copied();
            Error::RefinementAborted {
                iterate: state.iterations_done,
                reason: match last {
                    Some(c) => format!(
                        "every chunk size failed; last tried {} steps: length {:e}, arc ratio {:.9}",
                        c.steps,
                        c.length_after,
                        c.ratio()
                    ),
                    None => "no chunk size fits the remaining budget".into(),
                },
            }
        })?;
        let dir = trial.chord();
        state = RefinementState::centered(trial.mid, &dir, gap, trial.iterations_done, trial.budget_remaining);
    }

    let p = fixed_point.as_slice();
    let mut probe = state.clone();
    let mut per_iterate_angles = Vec::with_capacity(DIAGNOSTIC_ITERATES);
    for j in 0..DIAGNOSTIC_ITERATES {
        if j > 0 {
            probe.budget_remaining = 1;
            probe = probe.march(model, 1)?;
        }
        let to_mid = diff(p, &probe.mid);
        per_iterate_angles.push(angle(&diff(&to_mid, &probe.offsets[0]), &diff(&to_mid, &probe.offsets[3])).radians);
    }
    let far_from_tangency_angle = angle(&segment.direction(), &state.chord()).radians;
    let verdict = classify(&per_iterate_angles);
    let expansion = {
        let mut next = state.clone();
        next.budget_remaining = 1;
        next.march(model, 1)?.length() / state.length()
    };
    let (l, r) = (state.l(), state.r());
    Ok(Refinement {
        gap_exponent,
        initial_length,
        mid_distance: scaled_distance(&state.mid, p),
        mid_sup_distance: max_abs(state.mid.iter().zip(p).map(|(a, b)| a - b)),
        mid_l1_distance: state.mid.iter().zip(p).map(|(a, b)| (a - b).abs()).sum(),
        l_distance: scaled_distance(&l, p),
        r_distance: scaled_distance(&r, p),
        expansion,
        state,
        chunks: log,
        diagnostics: AngleDiagnostics {
            far_from_tangency_angle,
            per_iterate_angles,
            verdict,
        },
    })
}

/// Growth of the distance between `l` and `r` under one `T^2`.
pub fn expansion_rate(model: &Model, l: &[f64], r: &[f64]) -> Result<f64> {
    let before = scaled_distance(l, r);
    if before == 0.0 {
        return Err(Error::Precondition("expansion rate needs distinct points".into()));
    }
    Ok(scaled_distance(&model.advance_two(l)?, &model.advance_two(r)?) / before)
}

/// Human-readable run log.
pub fn transcript(candidate: &ReturnCandidate, run: &Refinement) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "gap = {:.10} exponent = {:.8}",
        run.gap_exponent.exp2(),
        run.gap_exponent
    );
    let _ = writeln!(
        s,
        "candidate m = {} closest return j0 = {} distance = {:.11e}",
        candidate.m, candidate.j0, candidate.min_distance
    );
    for c in &run.chunks {
        let _ = writeln!(s, "iter= {}, dist(L,R) previous to iteration is {:.16e}", c.start, c.length_before);
        let _ = writeln!(s, " dist between L and R after applying T^{} is {:.16e}", 2 * c.steps, c.length_after);
        if !c.landing {
            let _ = writeln!(s, " dist(L,L1)+dist(L1,M)+dist(M,R1)+dist(R1,R)= {:.16e}", c.arc_sum_after);
        }
        if !c.accepted {
            let _ = writeln!(s, " distance between iterates is too large or curvature is big");
        }
    }
    let t = 2 * run.state.iterations_done;
    let _ = writeln!(s, "Sup distance from fixed point p to point T^{t}(y0) is {:.11}", run.mid_sup_distance);
    let _ = writeln!(s, "L1 distance from fixed point p to point T^{t}(y0) is {:.11}", run.mid_l1_distance);
    let _ = writeln!(s, "Euclidean distance from fixed point p to point T^{t}(y0) is {:.11}", run.mid_distance);
    let _ = writeln!(s, "Euclidean distance from fixed point p to point L is {:.11}", run.l_distance);
    let _ = writeln!(s, "Euclidean distance from fixed point p to point R is {:.11}", run.r_distance);
    let _ = writeln!(s, "Euclidean distance between L and R is {:.11}", run.state.length());
    let _ = writeln!(s, "rate of dist between L, R and their iterates by T^2 is {:.6}", run.expansion);
    let far = run.diagnostics.far_from_tangency_angle;
    let _ = writeln!(
        s,
        "angle between unstable segment and iterated arc LR = {:.5} radians, angle in degrees is approx {}",
        far,
        far.to_degrees().round()
    );
    for (j, a) in run.diagnostics.per_iterate_angles.iter().enumerate() {
        let _ = writeln!(
            s,
            "angle between vectors (p, T^{}(L)) and (p, T^{}(R)) is {:.5} radians, angle in degrees is approx {}",
            2 * j,
            2 * j,
            a,
            a.to_degrees().round()
        );
    }
    let _ = writeln!(s, "verdict: {}", run.diagnostics.verdict);
    s
}

/// `j,radians,degrees` for each diagnostic iterate.
pub fn write_angles_csv<W: Write>(mut w: W, run: &Refinement) -> Result<()> {
    writeln!(w, "j,radians,degrees")?;
    for (j, a) in run.diagnostics.per_iterate_angles.iter().enumerate() {
        writeln!(w, "{j},{a:.16e},{:.16e}", a.to_degrees())?;
    }
    Ok(())
}
