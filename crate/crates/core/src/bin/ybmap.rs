use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ybmap::cli::{self, RunConfig};
use ybmap::ensemble::{self, SnapshotFile};
use ybmap::spectral::{self, JacobianScheme};
use ybmap::{entropy, homoclinic, Model, StateVector};

#[derive(Parser)]
#[command(name = "ybmap", version, about = "Chaos diagnostics for the discretized vole population map")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// key = value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// 50 files of 256 snapshots
    #[arg(long, global = true, conflicts_with = "paper_scale")]
    desk: bool,
    /// 400 files of 1024 snapshots
    #[arg(long, global = true)]
    paper_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Trajectory CSV from a seeded initial state.
    Simulate {
        #[arg(long, default_value_t = 10)]
        years: usize,
    },
    /// Polish the period-2 point and report its spectrum.
    FixedPoint {
        /// Starting guess; the bundled point when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Generate the snapshot files.
    Ensemble,
    /// Perturb the first post-burn state of one ensemble file.
    Perturb {
        #[arg(long, default_value_t = 0)]
        file: u32,
        #[arg(long, default_value_t = ensemble::DEFAULT_PERTURBATION)]
        u: f64,
    },
    /// Divergence times of perturbed ensemble states.
    Sensitivity {
        #[arg(long, default_value_t = ensemble::DEFAULT_PERTURBATION)]
        u: f64,
        #[arg(long, default_value_t = 0.1)]
        d0: f64,
        #[arg(long, default_value_t = ensemble::DEFAULT_ESCAPE_CAP)]
        cap: usize,
    },
    /// Mean population and mean absolute deviation over the ensemble.
    Dispersion,
    /// Write all cross-file pairs closer than d.
    EntropyCollect {
        /// Decimal or a fraction such as 1/1024.
        #[arg(long, value_parser = parse_d)]
        d: f64,
    },
    /// Escape times and entropy estimate from collected matches.
    EntropyEstimate {
        #[arg(long, default_value_t = ensemble::DEFAULT_ESCAPE_CAP)]
        cap: usize,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
    },
    /// Entropy estimate over the standard grid of distances.
    EntropySweep {
        #[arg(long, default_value_t = ensemble::DEFAULT_ESCAPE_CAP)]
        cap: usize,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
    },
    /// Scan the unstable segment for the closest return to the period-2 point.
    HomoclinicScan {
        /// Period-2 point to use instead of the `fixed-point` output.
        #[arg(long)]
        point: Option<PathBuf>,
        #[arg(long, default_value_t = homoclinic::DEFAULT_SEGMENT_POWER)]
        s: usize,
        #[arg(long, default_value_t = homoclinic::DEFAULT_SUBDIVISIONS)]
        subdivisions: usize,
        #[arg(long, default_value_t = homoclinic::DEFAULT_MAX_PAIRS)]
        max_pairs: usize,
    },
    /// March a short arc around the scanned candidate and classify it.
    HomoclinicRefine {
        #[arg(long)]
        gap_exponent: f64,
        #[arg(long, default_value_t = homoclinic::DEFAULT_RATIO_TOL)]
        ratio_tol: f64,
    },
    /// Window-averaged 3D coordinates of the ensemble snapshots.
    Project {
        /// Project 1000 T^2 images of the scanned segment point instead.
        #[arg(long)]
        unstable: bool,
    },
}

fn parse_d(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad numerator in {s}"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad denominator in {s}"))?;
            a / b
        }
        None => s.parse().map_err(|_| format!("bad number {s}"))?,
    };
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s} is not a positive distance"))
    }
}

enum Failure {
    Usage(String),
    Numerical(String),
    Missing(String),
}

impl From<ybmap::Error> for Failure {
    fn from(e: ybmap::Error) -> Self {
        match e {
            ybmap::Error::InvalidParams(_) => Failure::Usage(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numerical(format!("i/o: {e}"))
    }
}

type Outcome = Result<(), Failure>;

struct Ctx {
    cfg: RunConfig,
    model: Model,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn manifest(&self, command: &str) -> Outcome {
        cli::write_manifest(&self.path(&format!("manifest_{command}.txt")), command, &self.cfg)?;
        Ok(())
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, Failure> {
        let p = self.path(name);
        File::create(&p)
            .map(BufWriter::new)
            .map_err(|e| Failure::Numerical(format!("cannot write {}: {e}", p.display())))
    }

    fn require(&self, name: &str, producer: &str) -> Result<PathBuf, Failure> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Failure::Missing(format!("{} not found; run `ybmap {producer}` first", p.display())))
        }
    }

    fn ensemble_dir(&self) -> PathBuf {
        self.path("ensemble")
    }

    fn load_ensemble(&self) -> Result<Vec<SnapshotFile>, Failure> {
        let dir = self.ensemble_dir();
        let missing = || Failure::Missing(format!("no ensemble in {}; run `ybmap ensemble` first", dir.display()));
        let mut ids: Vec<(u32, PathBuf)> = fs::read_dir(&dir)
            .map_err(|_| missing())?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let id = name.strip_prefix("file_")?.strip_suffix(".ybv")?.parse().ok()?;
                Some((id, e.path()))
            })
            .collect();
        if ids.is_empty() {
            return Err(missing());
        }
        ids.sort();
        ids.into_iter()
            .map(|(id, p)| Ok(SnapshotFile::read_from(BufReader::new(File::open(p)?), id, self.cfg.master_seed)?))
            .collect()
    }

    /// The point the last scan was run from.
    fn scanned_point(&self) -> Result<StateVector, Failure> {
        let p = self.require("homoclinic_point.txt", "homoclinic-scan")?;
        Ok(spectral::read_state_text(&p)?)
    }
}

fn load_config(g: &Global) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &g.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        cfg = cfg.apply_text(&text).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if g.desk {
        cfg = cfg.desk();
    }
    if g.paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(s) = g.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &g.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn write_state(path: &Path, state: &StateVector) -> Outcome {
    fs::write(path, spectral::format_state_text(state))?;
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let cfg = load_config(&cli.global)?;
    let model = Model::new(cfg.params.clone()).map_err(|e| Failure::Usage(e.to_string()))?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Failure::Numerical(format!("cannot create {}: {e}", out.display())))?;
    let ctx = Ctx { cfg, model, out };
    let m = &ctx.model;
    match cli.command {
        Command::Simulate { years } => {
            let mut rng = ensemble::file_rng(ctx.cfg.master_seed, 0);
            let x = ensemble::random_initial(m, &mut rng);
            let fresh = years * m.steps_per_year();
            let values = m.simulate(&x, fresh)?;
            let mut w = ctx.create("trajectory.csv")?;
            writeln!(w, "t,n")?;
            for (t, v) in values.iter().enumerate() {
                writeln!(w, "{t},{v:.16e}")?;
            }
            w.flush()?;
            ctx.manifest("simulate")?;
            println!("wrote {} values to {}", values.len(), ctx.path("trajectory.csv").display());
        }
        Command::FixedPoint { input, tol } => {
            let guess = match input {
                Some(p) => spectral::read_state_text(&p)?,
                None => spectral::reference_point(),
            };
            let r = spectral::newton_polish(m, &guess, 0.0, 8)?;
            let j = spectral::jacobian_t2(m, &r.point, JacobianScheme::AnalyticChain)?;
            let s = spectral::spectrum(&j.matrix)?;
            let report = format!(
                "sup residual {:.6e}\nl1 residual {:.6e}\nnewton iterations {}\nfirst coordinate {:.16}\ndominant eigenvalue {:.9}\nsubdominant modulus {:.6e}\nunstable directions {}\n",
                r.sup_residual,
                r.l1_residual,
                r.iterations_used,
                r.point[0],
                s.dominant,
                s.subdominant_modulus,
                s.unstable_count()
            );
            print!("{report}");
            fs::write(ctx.path("fixed_point_report.txt"), &report)?;
            write_state(&ctx.path("period2_point.txt"), &r.point)?;
            ctx.manifest("fixed-point")?;
            if !(r.sup_residual <= tol) {
                return Err(Failure::Numerical(format!(
                    "Newton reached sup residual {:e}, above tolerance {tol:e}",
                    r.sup_residual
                )));
            }
        }
        Command::Ensemble => {
            let c = &ctx.cfg;
            let files = ensemble::generate_ensemble(m, c.ensemble_size, c.master_seed, c.burn_pairs, c.snapshot_count)?;
            let dir = ctx.ensemble_dir();
            fs::create_dir_all(&dir)?;
            for f in &files {
                let mut w = BufWriter::new(File::create(dir.join(format!("file_{:04}.ybv", f.file_id)))?);
                f.write_to(&mut w)?;
                w.flush()?;
            }
            ctx.manifest("ensemble")?;
            println!("wrote {} files to {}", files.len(), dir.display());
        }
        Command::Perturb { file, u } => {
            let files = ctx.load_ensemble()?;
            let f = files
                .iter()
                .find(|f| f.file_id == file)
                .ok_or_else(|| Failure::Usage(format!("ensemble has no file {file}")))?;
            let start = &f
                .post_burn()
                .first()
                .ok_or_else(|| Failure::Numerical(format!("file {file} has no post-burn record")))?
                .state;
            let mut rng = ensemble::file_rng(ctx.cfg.master_seed, file);
            let p = ensemble::perturb(m, start, u, &mut rng)?;
            write_state(&ctx.path("perturbed.txt"), &p.state)?;
            ctx.manifest("perturb")?;
            println!(
                "sup distance {:.6e}{}",
                ensemble::head_distance(&p.state, start),
                if p.clamped { " (clamped)" } else { "" }
            );
        }
        Command::Sensitivity { u, d0, cap } => {
            let files = ctx.load_ensemble()?;
            let r = ensemble::sensitivity(m, &files, u, d0, cap, ctx.cfg.master_seed)?;
            let mut w = ctx.create("sensitivity.csv")?;
            writeln!(w, "file,b")?;
            for (f, b) in files.iter().zip(&r.per_file_b) {
                writeln!(w, "{},{b}", f.file_id)?;
            }
            w.flush()?;
            ctx.manifest("sensitivity")?;
            println!(
                "u {u:e} d0 {d0}: mean b {:.3}, max b {}, unperturbed files {}",
                r.mean_b,
                r.max_b(),
                r.unperturbed_files
            );
        }
        Command::Dispersion => {
            let files = ctx.load_ensemble()?;
            let r = ensemble::dispersion(&files)?;
            let text = format!("mean {:.16e}\nabs_deviation {:.16e}\n", r.grand_mean, r.abs_deviation);
            fs::write(ctx.path("dispersion.txt"), &text)?;
            ctx.manifest("dispersion")?;
            print!("{text}");
        }
        Command::EntropyCollect { d } => {
            let files = ctx.load_ensemble()?;
            let recs = entropy::collect_matches(&files, d)?;
            let mut w = ctx.create("matches.bin")?;
            entropy::write_matches(&mut w, &recs)?;
            w.flush()?;
            fs::write(ctx.path("matches_d.txt"), format!("{d:?}\n"))?;
            ctx.manifest("entropy-collect")?;
            println!("{} matches at d = {d}", recs.len());
        }
        Command::EntropyEstimate { cap, tau } => {
            let bin = ctx.require("matches.bin", "entropy-collect")?;
            let dtxt = fs::read_to_string(ctx.require("matches_d.txt", "entropy-collect")?)?;
            let d: f64 = dtxt.trim().parse().map_err(|_| Failure::Numerical("unreadable matches_d.txt".into()))?;
            let recs = entropy::read_matches(BufReader::new(File::open(bin)?), m.steps_per_year())?;
            let mut samples = Vec::with_capacity(recs.len());
            let mut capped = 0;
            for r in &recs {
                let e = entropy::escape_time(m, &r.state_j, &r.state_i, d, cap)?;
                if e.capped {
                    capped += 1;
                    continue;
                }
                samples.push(entropy::Sample {
                    file_j: r.file_j,
                    iter_j: r.iter_j,
                    file_i: r.file_i,
                    iter_i: r.iter_i,
                    escape: e.steps,
                });
            }
            let kept = entropy::dedup(&samples);
            let escapes: Vec<usize> = kept.iter().map(|s| s.escape).collect();
            let e = entropy::estimate(&escapes, d, tau)?;
            let text = format!(
                "d {d:e}\nmatches {}\ncapped {capped}\nretained {}\nmean_escape {:.16e}\nk_hat {:.16e}\nsigma {:.16e}\nper_year {:.16e}\n",
                recs.len(),
                e.sample_count,
                e.mean_escape,
                e.k_hat,
                e.sigma_k,
                e.per_year()
            );
            fs::write(ctx.path("entropy.txt"), &text)?;
            ctx.manifest("entropy-estimate")?;
            print!("{text}");
        }
        Command::EntropySweep { cap, tau } => {
            let files = ctx.load_ensemble()?;
            let runs = entropy::sweep(m, &files, cap, tau)?;
            let mut w = ctx.create("entropy_sweep.csv")?;
            entropy::write_sweep_csv(&mut w, &runs)?;
            w.flush()?;
            ctx.manifest("entropy-sweep")?;
            for r in &runs {
                match &r.estimate {
                    Some(e) => println!("d {:.6e}: k_hat {:.5} sigma {:.5} M {}", r.d, e.k_hat, e.sigma_k, e.sample_count),
                    None => println!("d {:.6e}: no samples", r.d),
                }
            }
        }
        Command::HomoclinicScan {
            point,
            s,
            subdivisions,
            max_pairs,
        } => {
            let path = match point {
                Some(path) => path,
                None => ctx.require("period2_point.txt", "fixed-point")?,
            };
            let p = spectral::read_state_text(&path)?;
            let seg = homoclinic::unstable_segment(m, &p, s)?;
            let out = homoclinic::scan_returns(
                m,
                &p,
                &seg,
                homoclinic::ScanConfig {
                    subdivisions,
                    max_pairs,
                    skip: homoclinic::DEFAULT_SKIP,
                },
            )?;
            let mut w = ctx.create("homoclinic_scan.csv")?;
            writeln!(w, "m,j0,min_distance")?;
            for c in &out.per_point {
                writeln!(w, "{},{},{:.16e}", c.m, c.j0, c.min_distance)?;
            }
            w.flush()?;
            write_state(&ctx.path("homoclinic_point.txt"), &p)?;
            let b = out.best;
            fs::write(
                ctx.path("homoclinic_candidate.txt"),
                format!("s = {s}\nsubdivisions = {subdivisions}\nm = {}\nj0 = {}\nmin_distance = {:?}\n", b.m, b.j0, b.min_distance),
            )?;
            ctx.manifest("homoclinic-scan")?;
            println!("segment length {:.6e}; best m = {}, j0 = {}, distance {:.6e}", seg.length, b.m, b.j0, b.min_distance);
        }
        Command::HomoclinicRefine { gap_exponent, ratio_tol } => {
            let p = ctx.scanned_point()?;
            let (s, subdivisions, cand) = read_candidate(&ctx)?;
            let seg = homoclinic::unstable_segment(m, &p, s)?;
            let cfg = homoclinic::RefineConfig {
                ratio_tol,
                subdivisions,
                ..Default::default()
            };
            let run = homoclinic::refine(m, &p, &seg, &cand, gap_exponent, &cfg)?;
            let text = homoclinic::transcript(&cand, &run);
            fs::write(ctx.path("homoclinic_transcript.txt"), &text)?;
            let mut w = ctx.create("homoclinic_angles.csv")?;
            homoclinic::write_angles_csv(&mut w, &run)?;
            w.flush()?;
            ctx.manifest("homoclinic-refine")?;
            print!("{text}");
        }
        Command::Project { unstable } => {
            let params = &ctx.cfg.params;
            let (rows, name) = if unstable {
                let p = ctx.scanned_point()?;
                let (s, subdivisions, cand) = read_candidate(&ctx)?;
                let seg = homoclinic::unstable_segment(m, &p, s)?;
                let mut y = StateVector::new(seg.lattice_point(cand.m, subdivisions))?;
                let mut rows = Vec::with_capacity(1000);
                for _ in 0..1000 {
                    y = m.advance_two(&y)?;
                    rows.push(cli::project(&y, params)?);
                }
                (rows, "projection_unstable.csv")
            } else {
                let files = ctx.load_ensemble()?;
                let rows = files
                    .iter()
                    .flat_map(|f| f.post_burn())
                    .map(|r| cli::project(&r.state, params))
                    .collect::<ybmap::Result<Vec<_>>>()?;
                (rows, "projection.csv")
            };
            let mut w = ctx.create(name)?;
            cli::write_projection_csv(&mut w, params, &rows)?;
            w.flush()?;
            ctx.manifest("project")?;
            println!("wrote {} rows to {}", rows.len(), ctx.path(name).display());
        }
    }
    Ok(())
}

fn read_candidate(ctx: &Ctx) -> Result<(usize, usize, homoclinic::ReturnCandidate), Failure> {
    let text = fs::read_to_string(ctx.require("homoclinic_candidate.txt", "homoclinic-scan")?)?;
    let bad = || Failure::Numerical("malformed homoclinic_candidate.txt".into());
    let get = |key: &str| -> Result<&str, Failure> {
        text.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim())
            .ok_or_else(bad)
    };
    let s = get("s")?.parse().map_err(|_| bad())?;
    let subdivisions = get("subdivisions")?.parse().map_err(|_| bad())?;
    let cand = homoclinic::ReturnCandidate {
        m: get("m")?.parse().map_err(|_| bad())?,
        j0: get("j0")?.parse().map_err(|_| bad())?,
        min_distance: get("min_distance")?.parse().map_err(|_| bad())?,
    };
    Ok((s, subdivisions, cand))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (1, m),
                Failure::Numerical(m) => (2, m),
                Failure::Missing(m) => (3, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
