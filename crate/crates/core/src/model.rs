//! The discretized delay recurrence and its one- and two-year maps.
//!
//! A state holds `2p + 1` consecutive values `N_0..N_{2p}` of the female
//! population sampled `p` times per year. Each new value is
//!
//! ```text
//! N_t = (1/p) * sum_{h = floor(A0 p)}^{A1 p} N_{t-h} m(N_{t-h}) m_rho(t-h) S(h)
//! ```
//!
//! Buffer index `k` (0-based) sits on calendar step `k + 1`; the seasonal
//! gate is evaluated on calendar steps. The lag range and the calendar
//! origin are the ones under which the tabulated period-2 point shipped in
//! `data/` is a fixed point of the two-year map to ~1e-13.

use std::ops::Deref;

use crate::error::{Error, Result};

/// Maximal age in years. The state dimension `A1 p + 1` assumes it.
pub const MAX_AGE: f64 = 2.0;

/// Calendar step of buffer index 0.
pub const CALENDAR_OFFSET: usize = 1;

/// Guards `floor`/`trunc` of products such as `0.18 * 100` against
/// representation error.
const INDEX_EPS: f64 = 1e-9;

/// Denominator of the linear survival kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurvivalDenominator {
    /// `S(h) = 1 - h / (2p)`; vanishes at the maximal lag.
    TwoP,
    /// `S(h) = 1 - h / (2p + 1)`; old females still reproduce at `2p`.
    TwoPPlusOne,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `A0`, years.
    pub maturation_age: f64,
    /// `p`, samples per year.
    pub steps_per_year: usize,
    /// `m0`, births per female per year at low density.
    pub fecundity_cap: f64,
    /// `gamma`, crowding exponent.
    pub decay_exponent: f64,
    /// `rho`, fraction of the year without reproduction.
    pub winter_fraction: f64,
    /// `epsilon`, years.
    pub season_slack: f64,
    pub survival_denominator: SurvivalDenominator,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            maturation_age: 0.18,
            steps_per_year: 100,
            fecundity_cap: 50.0,
            decay_exponent: 8.25,
            winter_fraction: 0.30,
            season_slack: 0.0,
            survival_denominator: SurvivalDenominator::TwoPPlusOne,
        }
    }
}

impl ModelParams {
    pub fn max_age(&self) -> f64 {
        MAX_AGE
    }

    /// Length of a state vector, `2p + 1`.
    pub fn dim(&self) -> usize {
        2 * self.steps_per_year + 1
    }

    /// Smallest lag, `floor(A0 p)`.
    pub fn min_lag(&self) -> usize {
        (self.maturation_age * self.steps_per_year as f64 + INDEX_EPS).floor() as usize
    }

    /// Largest lag, `A1 p`.
    pub fn max_lag(&self) -> usize {
        2 * self.steps_per_year
    }

    /// Number of gated steps at the start of every year, `trunc(rho p)`.
    pub fn winter_steps(&self) -> usize {
        (self.winter_fraction * self.steps_per_year as f64 + INDEX_EPS).trunc() as usize
    }

    /// Checks the standing restrictions on the parameters, including
    /// `c0 m0 > 2`.
    pub fn validate(&self) -> Result<()> {
        let a0 = self.maturation_age;
        let a1 = MAX_AGE;
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.steps_per_year == 0 {
            return bad("steps_per_year must be positive".into());
        }
        if !(a0.is_finite() && 0.0 < 2.0 * a0 && 2.0 * a0 < a1 && a0 + 1.0 < a1) {
            return bad(format!("maturation_age {a0} violates 0 < 2 A0 < A1 and A0 + 1 < A1"));
        }
        if self.min_lag() < 1 {
            return bad(format!(
                "floor(A0 p) = {} must be at least 1",
                self.min_lag()
            ));
        }
        if !(self.decay_exponent.is_finite() && self.decay_exponent > 1.0) {
            return bad(format!("decay_exponent {} must exceed 1", self.decay_exponent));
        }
        if !(self.fecundity_cap.is_finite() && self.fecundity_cap > 0.0) {
            return bad(format!("fecundity_cap {} must be positive", self.fecundity_cap));
        }
        if !(0.0..1.0).contains(&self.winter_fraction) {
            return bad(format!("winter_fraction {} not in [0, 1)", self.winter_fraction));
        }
        if !(self.season_slack.is_finite() && self.season_slack >= 0.0) {
            return bad(format!("season_slack {} must be >= 0", self.season_slack));
        }
        if 1.0 - self.winter_fraction - self.season_slack <= 0.0 {
            return bad("the breeding season 1 - rho - epsilon must be positive".into());
        }
        let c0m0 = self.permanence_constant() * self.fecundity_cap;
        if c0m0 <= 2.0 {
            return bad(format!("c0 m0 = {c0m0} must exceed 2"));
        }
        Ok(())
    }

    /// `c0 = (1 - rho - eps) (1 - ((1 + rho + eps) + 2 A0) / (2 A1))`.
    pub fn permanence_constant(&self) -> f64 {
        let season = self.winter_fraction + self.season_slack;
        (1.0 - season) * (1.0 - ((1.0 + season) + 2.0 * self.maturation_age) / (2.0 * MAX_AGE))
    }

    /// Survival probability at lag `h` steps; zero outside `[0, A1 p]`.
    pub fn survival(&self, h: i64) -> f64 {
        let top = self.max_lag() as i64;
        if h < 0 || h > top {
            return 0.0;
        }
        let denom = match self.survival_denominator {
            SurvivalDenominator::TwoP => top as f64,
            SurvivalDenominator::TwoPPlusOne => (top + 1) as f64,
        };
        1.0 - h as f64 / denom
    }

    /// Seasonal reproduction gate at calendar step `step`.
    pub fn season_gate(&self, step: usize) -> f64 {
        if step % self.steps_per_year < self.winter_steps() {
            0.0
        } else {
            1.0
        }
    }

    /// `m(N)`: `m0` up to `N = 1`, then `m0 N^-gamma`.
    pub fn fecundity(&self, n: f64) -> f64 {
        if n <= 1.0 {
            self.fecundity_cap
        } else {
            self.fecundity_cap * n.powf(-self.decay_exponent)
        }
    }

    pub fn bounds(&self) -> DerivedBounds {
        let a0 = self.maturation_age;
        let m0 = self.fecundity_cap;
        let gamma = self.decay_exponent;
        let n_max = m0 * (MAX_AGE - a0).powi(2) / (2.0 * MAX_AGE);
        let c0 = self.permanence_constant();
        DerivedBounds {
            n_max,
            c0,
            permanence_floor: c0 * m0 / 2.0 * n_max.powf(1.0 - gamma),
            lipschitz_bound: (MAX_AGE - a0) * m0.max(m0 * (gamma - 1.0)),
        }
    }
}

/// Analytic constants that follow from the parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedBounds {
    /// Ceiling on every value after the first `floor(A0 p)` fresh steps.
    pub n_max: f64,
    pub c0: f64,
    /// Eventual floor `(c0 m0 / 2) n_max^(1 - gamma)`.
    pub permanence_floor: f64,
    /// Sup-norm Lipschitz constant of the one-year map on the positive cone.
    pub lipschitz_bound: f64,
}

/// One point of `R^(2p+1)`: finite, nonnegative population values.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Domain { index, value });
        }
        Ok(Self(values))
    }

    pub fn constant(dim: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// True when every coordinate is strictly positive.
    pub fn in_positive_cone(&self) -> bool {
        self.0.iter().all(|&v| v > 0.0)
    }

    pub fn sup_distance(&self, other: &StateVector) -> f64 {
        sup_norm_diff(&self.0, &other.0)
    }

    pub fn l1_distance(&self, other: &StateVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }
}

impl Deref for StateVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Validated parameters plus the kernel tables used on the hot path.
#[derive(Clone, Debug)]
pub struct Model {
    params: ModelParams,
    survival: Vec<f64>,
    gate: Vec<f64>,
    min_lag: usize,
    max_lag: usize,
    steps_f: f64,
}

impl Model {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let max_lag = params.max_lag();
        let survival = (0..=max_lag as i64).map(|h| params.survival(h)).collect();
        let gate = (0..params.steps_per_year).map(|s| params.season_gate(s)).collect();
        Ok(Self {
            min_lag: params.min_lag(),
            max_lag,
            steps_f: params.steps_per_year as f64,
            survival,
            gate,
            params,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn steps_per_year(&self) -> usize {
        self.params.steps_per_year
    }

    pub fn bounds(&self) -> DerivedBounds {
        self.params.bounds()
    }

    /// Gate value for buffer index `index`.
    #[inline]
    pub fn gate_at_index(&self, index: usize) -> f64 {
        self.gate[(index + CALENDAR_OFFSET) % self.params.steps_per_year]
    }

    /// Weight `N m(N) m_rho` carried by buffer index `index`.
    #[inline]
    fn weight(&self, value: f64, index: usize) -> f64 {
        value * self.params.fecundity(value) * self.gate_at_index(index)
    }

    #[inline]
    fn survival_at(&self, h: usize) -> f64 {
        self.survival[h]
    }

    /// Value at buffer index `t` computed from `history[..t]`.
    ///
    /// Requires `t >= 2p` and `history.len() >= t`; entries at or beyond
    /// `t` are ignored.
    pub fn next_component(&self, t: usize, history: &[f64]) -> Result<f64> {
        if t < self.max_lag || history.len() < t {
            return Err(Error::Precondition(format!(
                "next_component at t = {t} needs t >= {} and at least t history values, got {}",
                self.max_lag,
                history.len()
            )));
        }
        let mut acc = 0.0;
        for h in self.min_lag..=self.max_lag {
            let k = t - h;
            acc += self.weight(history[k], k) * self.survival_at(h);
        }
        Ok(acc / self.steps_f)
    }

    /// Extends `values` in place by `fresh` new values.
    ///
    /// Values less than `floor(A0 p)` steps apart do not depend on each
    /// other, so up to `BLOCK` of them are accumulated side by side. Each
    /// one still sums its own terms in ascending lag order.
    fn extend(&self, values: &mut Vec<f64>, fresh: usize) {
        const BLOCK: usize = 16;
        let start = values.len();
        let end = start + fresh;
        let mut weights: Vec<f64> = values
            .iter()
            .enumerate()
            .map(|(k, &v)| self.weight(v, k))
            .collect();
        values.reserve(fresh);
        weights.reserve(fresh);
        let width = BLOCK.min(self.min_lag);
        let mut t = start;
        while t < end {
            let block = width.min(end - t);
            let mut acc = [0.0f64; BLOCK];
            for h in self.min_lag..=self.max_lag {
                let s = self.survival[h];
                let w = &weights[t - h..t - h + block];
                for (a, &x) in acc.iter_mut().zip(w) {
                    *a += x * s;
                }
            }
            for (j, a) in acc.iter().take(block).enumerate() {
                let v = a / self.steps_f;
                values.push(v);
                weights.push(self.weight(v, t + j));
            }
            t += block;
        }
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                found: state.len(),
            });
        }
        if let Some((index, &value)) = state
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::Domain { index, value });
        }
        Ok(())
    }

    fn advance_years(&self, state: &[f64], years: usize) -> Result<StateVector> {
        self.check_state(state)?;
        let p = self.steps_per_year();
        let mut buf = Vec::with_capacity(self.dim() + years * p);
        buf.extend_from_slice(state);
        self.extend(&mut buf, years * p);
        Ok(StateVector(buf.split_off(years * p)))
    }

    /// The one-year map `T`.
    pub fn advance(&self, state: &[f64]) -> Result<StateVector> {
        self.advance_years(state, 1)
    }

    /// The two-year map `T^2`.
    pub fn advance_two(&self, state: &[f64]) -> Result<StateVector> {
        self.advance_years(state, 2)
    }

    /// `T^(2n)`.
    pub fn advance_two_n(&self, state: &[f64], n: usize) -> Result<StateVector> {
        let mut s = StateVector(state.to_vec());
        for _ in 0..n {
            s = self.advance_two(&s)?;
        }
        Ok(s)
    }

    /// `w(v + d) - w(v)` at buffer index `index`, accurate relative to the
    /// difference itself rather than to `w(v)`.
    fn weight_delta(&self, v: f64, d: f64, index: usize) -> f64 {
        let g = self.gate_at_index(index);
        if g == 0.0 || d == 0.0 {
            return 0.0;
        }
        let u = v + d;
        let m0 = self.params.fecundity_cap;
        let dw = if v > 1.0 && u > 1.0 {
            let e = 1.0 - self.params.decay_exponent;
            m0 * v.powf(e) * (e * (d / v).ln_1p()).exp_m1()
        } else if v <= 1.0 && u <= 1.0 {
            m0 * d
        } else {
            u * self.params.fecundity(u) - v * self.params.fecundity(v)
        };
        dw * g
    }

    /// `T^2` of `base` together with `T^2(base + d) - T^2(base)` for each
    /// offset `d`. The offsets are carried through the recurrence as exact
    /// differences, so their relative precision does not degrade as they
    /// shrink.
    pub fn advance_two_offsets(&self, base: &[f64], offsets: &[&[f64]]) -> Result<(StateVector, Vec<Vec<f64>>)> {
        let p = self.steps_per_year();
        let fresh = 2 * p;
        let buf = self.simulate(base, fresh)?;
        let n = self.dim();
        let mut images = Vec::with_capacity(offsets.len());
        for d in offsets {
            if d.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    found: d.len(),
                });
            }
            let mut dx = d.to_vec();
            dx.reserve(fresh);
            let mut dw: Vec<f64> = (0..n).map(|k| self.weight_delta(buf[k], dx[k], k)).collect();
            dw.reserve(fresh);
            for t in n..n + fresh {
                let mut acc = 0.0;
                for h in self.min_lag..=self.max_lag {
                    acc += dw[t - h] * self.survival[h];
                }
                let v = acc / self.steps_f;
                dx.push(v);
                dw.push(self.weight_delta(buf[t], v, t));
            }
            images.push(dx.split_off(fresh));
        }
        Ok((StateVector(buf[fresh..].to_vec()), images))
    }

    /// Full series: the initial `2p + 1` values followed by `fresh` new ones.
    pub fn simulate(&self, state: &[f64], fresh: usize) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let mut buf = state.to_vec();
        self.extend(&mut buf, fresh);
        Ok(buf)
    }

    /// Builds a state from its first `2p` values, computing the last one
    /// from the recurrence.
    pub fn complete_state(&self, head: &[f64]) -> Result<StateVector> {
        let n = self.max_lag;
        if head.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: head.len(),
            });
        }
        let last = self.next_component(n, head)?;
        let mut v = head.to_vec();
        v.push(last);
        StateVector::new(v)
    }
}
