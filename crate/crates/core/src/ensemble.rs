//! Seeded trajectory ensembles: generation, perturbation, persistence and
//! the sensitivity and dispersion statistics computed from them.

use std::io::{self, Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Model, StateVector};

pub const MAGIC: &[u8; 4] = b"YBV1";

/// Initial populations are at least this many animals...
const MIN_ANIMALS: u32 = 500;
/// ...plus a uniform integer below this.
const ANIMAL_SPREAD: u32 = 200_000;
/// Animals represented by `N = 1`.
const ANIMALS_PER_UNIT: f64 = 55_000.0;

pub const DEFAULT_BURN_PAIRS: usize = 10_000;
pub const DEFAULT_SNAPSHOTS: usize = 1024;
pub const DEFAULT_ESCAPE_CAP: usize = 10_000;
/// Perturbation half-width used by the long-run sensitivity experiment.
pub const DEFAULT_PERTURBATION: f64 = 1.0 / (1u64 << 50) as f64;

/// Independent generator for one file of an ensemble.
pub fn file_rng(master_seed: u64, file_id: u32) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(file_id as u64);
    rng
}

/// Sup norm of `a - b` over all coordinates but the last.
///
/// Sup distance over the first `2p` coordinates.
pub fn head_distance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()).saturating_sub(1);
    a[..n]
        .iter()
        .zip(&b[..n])
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn random_initial<R: Rng + ?Sized>(model: &Model, rng: &mut R) -> StateVector {
    let head: Vec<f64> = (0..model.dim() - 1)
        .map(|_| (MIN_ANIMALS + rng.gen_range(0..ANIMAL_SPREAD)) as f64 / ANIMALS_PER_UNIT)
        .collect();
    model
        .complete_state(&head)
        .expect("generated head is positive and of the right length")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    /// Number of applications of `T` that produced `state`.
    pub label: u64,
    pub state: StateVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotFile {
    pub file_id: u32,
    pub seed: u64,
    pub records: Vec<Snapshot>,
}

impl SnapshotFile {
    /// Records after the raw initial state.
    pub fn post_burn(&self) -> &[Snapshot] {
        self.records.get(1..).unwrap_or(&[])
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = self.records.first().map_or(0, |r| r.state.len());
        let p = dim.saturating_sub(1) / 2;
        w.write_all(MAGIC)?;
        w.write_all(&(p as u32).to_le_bytes())?;
        w.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for rec in &self.records {
            if rec.state.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: rec.state.len(),
                });
            }
            w.write_all(&rec.label.to_le_bytes())?;
            write_values(&mut w, &rec.state)?;
        }
        Ok(())
    }

    /// Reads the binary format. `file_id` and `seed` are not stored in it
    /// and are attached by the caller.
    pub fn read_from<R: Read>(mut r: R, file_id: u32, seed: u64) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "snapshot file")?;
        if &magic != MAGIC {
            return Err(Error::Format {
                what: "snapshot file",
                detail: format!("bad magic {magic:?}"),
            });
        }
        let p = read_u32(&mut r, "snapshot file")? as usize;
        let count = read_u32(&mut r, "snapshot file")? as usize;
        let dim = 2 * p + 1;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let label = read_u64(&mut r, "snapshot file")?;
            let state = StateVector::new(read_values(&mut r, dim, "snapshot file")?)?;
            records.push(Snapshot { label, state });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format {
                what: "snapshot file",
                detail: "trailing bytes after last record".into(),
            });
        }
        Ok(Self {
            file_id,
            seed,
            records,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "label")?;
        for k in 0..self.records.first().map_or(0, |r| r.state.len()) {
            write!(w, ",n{k}")?;
        }
        writeln!(w)?;
        for rec in &self.records {
            write!(w, "{}", rec.label)?;
            for v in rec.state.iter() {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Checks the label layout and that each post-burn record is exactly
    /// `T^2` of the one before.
    pub fn verify_chain(&self, model: &Model) -> Result<()> {
        let post = self.post_burn();
        if self.records.first().map(|r| r.label) != Some(0) {
            return Err(Error::Format {
                what: "snapshot file",
                detail: "record 0 must carry label 0".into(),
            });
        }
        for (k, pair) in post.windows(2).enumerate() {
            if pair[1].label != pair[0].label + 2 {
                return Err(Error::Format {
                    what: "snapshot file",
                    detail: format!("labels of records {} and {} are not two apart", k + 1, k + 2),
                });
            }
            if model.advance_two(&pair[0].state)? != pair[1].state {
                return Err(Error::Format {
                    what: "snapshot file",
                    detail: format!("record {} is not T^2 of record {}", k + 2, k + 1),
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn write_values<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Format {
            what,
            detail: "truncated".into(),
        },
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &'static str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_values<R: Read>(r: &mut R, n: usize, what: &'static str) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    read_exact(r, &mut buf, what)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Runs one trajectory: raw initial state, `burn_pairs` applications of
/// `T^2`, then `snapshots` states two years apart starting at label
/// `2 * burn_pairs`.
pub fn generate_file(model: &Model, file_id: u32, seed: u64, burn_pairs: usize, snapshots: usize) -> Result<SnapshotFile> {
    if burn_pairs == 0 || snapshots == 0 {
        return Err(Error::Precondition("burn-in and snapshot count must be at least 1".into()));
    }
    let mut rng = file_rng(seed, file_id);
    let initial = random_initial(model, &mut rng);
    let mut records = Vec::with_capacity(snapshots + 1);
    let mut x = model.advance_two_n(&initial, burn_pairs)?;
    records.push(Snapshot {
        label: 0,
        state: initial,
    });
    let mut label = 2 * burn_pairs as u64;
    for k in 0..snapshots {
        if k > 0 {
            x = model.advance_two(&x)?;
            label += 2;
        }
        records.push(Snapshot {
            label,
            state: x.clone(),
        });
    }
    Ok(SnapshotFile {
        file_id,
        seed,
        records,
    })
}

/// Files `0..files`, generated in parallel.
pub fn generate_ensemble(model: &Model, files: usize, seed: u64, burn_pairs: usize, snapshots: usize) -> Result<Vec<SnapshotFile>> {
    (0..files as u32)
        .into_par_iter()
        .map(|id| generate_file(model, id, seed, burn_pairs, snapshots))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perturbed {
    pub state: StateVector,
    /// Some coordinate would have gone non-positive and was set to half its
    /// original value instead.
    pub clamped: bool,
}

/// Adds uniform noise in `[-u, u]` to every coordinate but the last, which
/// is recomputed from the others.
pub fn perturb<R: Rng + ?Sized>(model: &Model, state: &StateVector, u: f64, rng: &mut R) -> Result<Perturbed> {
    if !(u >= 0.0 && u.is_finite()) {
        return Err(Error::Precondition(format!("perturbation magnitude {u} must be nonnegative")));
    }
    let n = model.dim();
    if state.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: state.len(),
        });
    }
    if u == 0.0 {
        return Ok(Perturbed {
            state: state.clone(),
            clamped: false,
        });
    }
    let mut clamped = false;
    let head: Vec<f64> = state[..n - 1]
        .iter()
        .map(|&v| {
            let w = v + rng.gen_range(-u..=u);
            if w > 0.0 {
                w
            } else {
                clamped = true;
                v / 2.0
            }
        })
        .collect();
    Ok(Perturbed {
        state: model.complete_state(&head)?,
        clamped,
    })
}

/// Least `b >= 1` such that `T^2b(a)` and `T^2b(b)` are more than `d0` apart
/// in [`head_distance`]; `cap + 1` if that never happens within `cap` steps.
pub fn divergence_time(model: &Model, a: &StateVector, b: &StateVector, d0: f64, cap: usize) -> Result<usize> {
    if !(d0 > 0.0) {
        return Err(Error::Precondition(format!("threshold {d0} must be positive")));
    }
    let mut x = a.clone();
    let mut y = b.clone();
    for step in 1..=cap {
        x = model.advance_two(&x)?;
        y = model.advance_two(&y)?;
        if head_distance(&x, &y) > d0 {
            return Ok(step);
        }
    }
    Ok(cap + 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityReport {
    pub per_file_b: Vec<usize>,
    pub mean_b: f64,
    pub threshold: f64,
    pub perturbation_magnitude: f64,
    /// Files whose perturbation changed no coordinate at all (the noise was
    /// below half an ulp everywhere).
    pub unperturbed_files: usize,
    pub clamped_files: usize,
}

impl SensitivityReport {
    pub fn max_b(&self) -> usize {
        self.per_file_b.iter().copied().max().unwrap_or(0)
    }
}

/// Perturbs the first post-burn record of every file and measures how long
/// the two trajectories stay within `d0`.
pub fn sensitivity(model: &Model, files: &[SnapshotFile], u: f64, d0: f64, cap: usize, seed: u64) -> Result<SensitivityReport> {
    if files.is_empty() {
        return Err(Error::Precondition("sensitivity needs at least one file".into()));
    }
    let rows: Vec<(usize, bool, bool)> = files
        .par_iter()
        .map(|f| {
            let start = &f
                .post_burn()
                .first()
                .ok_or_else(|| Error::Precondition(format!("file {} has no post-burn record", f.file_id)))?
                .state;
            let mut rng = file_rng(seed, f.file_id);
            let moved = perturb(model, start, u, &mut rng)?;
            let b = divergence_time(model, start, &moved.state, d0, cap)?;
            Ok((b, moved.state == *start, moved.clamped))
        })
        .collect::<Result<_>>()?;
    let per_file_b: Vec<usize> = rows.iter().map(|r| r.0).collect();
    Ok(SensitivityReport {
        mean_b: per_file_b.iter().sum::<usize>() as f64 / per_file_b.len() as f64,
        per_file_b,
        threshold: d0,
        perturbation_magnitude: u,
        unperturbed_files: rows.iter().filter(|r| r.1).count(),
        clamped_files: rows.iter().filter(|r| r.2).count(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DispersionReport {
    /// Mean population over files, snapshots and the first `2p` coordinates.
    pub grand_mean: f64,
    /// Mean absolute deviation from `grand_mean` over the same values.
    pub abs_deviation: f64,
    pub per_file_means: Vec<f64>,
}

/// Post-burn records only; the last coordinate of each state is excluded.
pub fn dispersion(files: &[SnapshotFile]) -> Result<DispersionReport> {
    let nonempty = files.iter().any(|f| !f.post_burn().is_empty());
    if !nonempty {
        return Err(Error::Precondition("dispersion needs at least one post-burn record".into()));
    }
    let head = |s: &StateVector| s.len() - 1;
    let per_file_means: Vec<f64> = files
        .iter()
        .filter(|f| !f.post_burn().is_empty())
        .map(|f| {
            let snaps = f.post_burn();
            snaps
                .iter()
                .map(|r| r.state[..head(&r.state)].iter().sum::<f64>() / head(&r.state) as f64)
                .sum::<f64>()
                / snaps.len() as f64
        })
        .collect();
    let grand_mean = per_file_means.iter().sum::<f64>() / per_file_means.len() as f64;
    let (mut total, mut count) = (0.0, 0usize);
    for f in files {
        for r in f.post_burn() {
            let h = head(&r.state);
            total += r.state[..h].iter().map(|v| (v - grand_mean).abs()).sum::<f64>();
            count += h;
        }
    }
    Ok(DispersionReport {
        grand_mean,
        abs_deviation: total / count as f64,
        per_file_means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    fn model() -> Model {
        Model::new(ModelParams::default()).unwrap()
    }

    #[test]
    fn initial_state_range_and_determinism() {
        let m = model();
        let a = random_initial(&m, &mut file_rng(5, 3));
        let b = random_initial(&m, &mut file_rng(5, 3));
        let c = random_initial(&m, &mut file_rng(5, 4));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a[..200].iter().all(|&v| (501.0 / 55000.0..=200499.0 / 55000.0).contains(&v)));
        assert_eq!(a[200], m.next_component(200, &a[..200]).unwrap());
    }

    #[test]
    fn labels_for_short_run() {
        let m = model();
        let f = generate_file(&m, 0, 1, 1, 2).unwrap();
        let labels: Vec<u64> = f.records.iter().map(|r| r.label).collect();
        assert_eq!(labels, vec![0, 2, 4]);
        f.verify_chain(&m).unwrap();
        assert!(generate_file(&m, 0, 1, 0, 2).is_err());
    }

    #[test]
    fn perturbation_size() {
        let m = model();
        let x = generate_file(&m, 0, 9, 50, 1).unwrap().records[1].state.clone();
        let mut rng = file_rng(1, 1);
        let y = perturb(&m, &x, 1e-10, &mut rng).unwrap();
        let d = head_distance(&x, &y.state);
        assert!(d > 0.0 && d <= 1e-10 * (1.0 + 1e-4));
        assert!(!y.clamped);
        assert_eq!(perturb(&m, &x, 0.0, &mut rng).unwrap().state, x);
    }

    #[test]
    fn perturbation_clamps() {
        let m = model();
        let x = StateVector::constant(201, 1e-3).unwrap();
        let y = perturb(&m, &x, 1.0, &mut file_rng(2, 0)).unwrap();
        assert!(y.clamped);
        assert!(y.state.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn identical_states_never_diverge() {
        let m = model();
        let x = StateVector::constant(201, 1.5).unwrap();
        assert_eq!(divergence_time(&m, &x, &x, 0.1, 7).unwrap(), 8);
    }

    #[test]
    fn head_distance_skips_last() {
        let a = [1.0, 2.0, 3.0];
        let b = [1.0, 2.5, 300.0];
        assert_eq!(head_distance(&a, &b), 0.5);
    }

    #[test]
    fn dispersion_of_constant_file() {
        let c = StateVector::constant(201, 2.0).unwrap();
        let f = SnapshotFile {
            file_id: 0,
            seed: 0,
            records: vec![
                Snapshot {
                    label: 0,
                    state: StateVector::constant(201, 9.0).unwrap(),
                },
                Snapshot {
                    label: 2,
                    state: c.clone(),
                },
                Snapshot { label: 4, state: c },
            ],
        };
        let d = dispersion(&[f]).unwrap();
        assert_eq!(d.grand_mean, 2.0);
        assert_eq!(d.abs_deviation, 0.0);
        assert!(dispersion(&[]).is_err());
    }
}
