//! Command-line front end: every subcommand emits a JSON report.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rollhol::connections::{cone_spec, verify_cone_isomorphism};
use rollhol::curve::{CurveFile, DEFAULT_STEPS};
use rollhol::geometry::{orthonormal_frame, ricci, stereographic_differential, stereographic_to_sphere};
use rollhol::holonomy::{
    self, classify_counts, commutant_skew, controllability, estimate_algebra, generate_loops, trig_loops,
    HolonomyOptions, DEFAULT_LOOPS, DEFAULT_RANK_TOL, DEFAULT_SEED,
};
use rollhol::manifold::{Builtin, DEFAULT_CONE_RANGE};
use rollhol::rolling::{develop, holonomy_crosscheck, rolling_residuals};
use rollhol::speclang::{
    ConeEntry, ConeSection, DescribeSection, HolonomySection, RollingSection, SasakiSection,
};
use rollhol::structures::{
    build_jr_from_structure, build_jr_triple, extract_3sasaki, extract_sasaki, invariant_complex_structure,
    jr_lattice, reference_structures, sphere_seed, verify_sasaki, InvariantStructure, DEFAULT_LATTICE_STEP,
};
use rollhol::{resolve_spec, Error, HolonomyAlgebra, ManifoldSpec, Report, RollingState};

/// Identity residual bound for extracted Sasakian structures.
pub const SASAKI_TOL: f64 = 1e-4;
/// Bound for 3-Sasakian cross relations and converse parallelism.
pub const STRUCTURE_TOL: f64 = 1e-5;
pub const OMEGA_FLOOR: f64 = 0.1;
pub const CONE_TOL: f64 = 1e-5;
pub const CONE_SHRINK: f64 = 8.0;
pub const ROLLING_TOL: f64 = 1e-6;
pub const CROSSCHECK_TOL: f64 = 1e-4;
/// Rank decisions with a smaller singular-value gap are reported as failures.
pub const MIN_GAP: f64 = 1e3;

#[derive(Parser, Debug)]
#[command(name = "rollhol", version, about = "Rolling-connection holonomy of manifolds rolling on the unit sphere")]
pub struct Cli {
    /// Output file for the JSON report; `-` for standard output.
    #[arg(long, global = true, default_value = "-")]
    pub out: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Summarize a manifold: chart data and Ricci at the base point.
    Describe {
        spec: String,
        #[arg(long)]
        base: Option<String>,
    },
    /// Estimate the holonomy algebra of the rolling connection and classify it.
    Holonomy(HolonomyArgs),
    /// Classify from a manifold or from the holonomy section of a report.
    Classify(HolonomyArgs),
    /// Sasakian structures.
    Sasaki {
        #[command(subcommand)]
        action: SasakiAction,
    },
    /// Cone isomorphism checks.
    Cone {
        #[command(subcommand)]
        action: ConeAction,
    },
    /// Kinematic rolling on the unit sphere.
    Roll {
        #[command(subcommand)]
        action: RollAction,
    },
}

#[derive(Args, Debug, Clone)]
pub struct HolonomyArgs {
    /// Built-in name or manifold file (for `classify`, also a report file).
    pub spec: String,
    #[arg(long, default_value_t = DEFAULT_LOOPS)]
    pub loops: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long = "rank-tol", default_value_t = DEFAULT_RANK_TOL)]
    pub rank_tol: f64,
    /// Comma-separated base point coordinates.
    #[arg(long)]
    pub base: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum SasakiAction {
    /// Read (Z, α, J) off the parallel complex structure(s) and check them.
    Extract(SasakiArgs),
    /// Build J^R from the reference structure of a built-in and check
    /// parallelism along loops.
    Verify(SasakiArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SasakiArgs {
    pub spec: String,
    /// Lattice spacing of the difference stencils.
    #[arg(long, default_value_t = DEFAULT_LATTICE_STEP)]
    pub lattice: f64,
    /// Lattice centres besides the base point.
    #[arg(long, default_value_t = 16)]
    pub centers: usize,
    #[arg(long, default_value_t = DEFAULT_LOOPS)]
    pub loops: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long)]
    pub base: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum ConeAction {
    /// Compare conjugated cone transport with rolling transport on loops.
    Verify {
        spec: String,
        /// Comma-separated cone heights.
        #[arg(long, default_value = "0.5,1,3")]
        s0: String,
        #[arg(long, default_value_t = 100)]
        loops: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_STEPS)]
        steps: usize,
        #[arg(long)]
        base: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
pub enum RollAction {
    /// Develop a curve and report the (NS)/(NT) residuals and trajectory.
    Develop {
        spec: String,
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Compare kinematic and connection holonomy around a loop.
    Crosscheck {
        spec: String,
        #[arg(long = "loop")]
        loop_file: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
}

/// Failure of a command: bad input, or a verdict that no report can carry.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NoInvariantStructure(_) | Error::Hypothesis(_) | Error::NonFinite(_) => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Exit code convention: 0 success, 1 input error, 2 tolerance failure.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let out = cli.out.clone();
    match execute(&cli) {
        Ok(report) => {
            let text = match report.to_json() {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {e}");
                    return 2;
                }
            };
            if let Err(e) = write_output(&out, &text) {
                eprintln!("error: cannot write report: {e}");
                return 1;
            }
            if report.failures.is_empty() {
                0
            } else {
                eprintln!("tolerance failures: {}", report.failures.join(", "));
                2
            }
        }
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("verification failed: {msg}");
            2
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("ROLLHOL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn write_output(out: &str, text: &str) -> std::io::Result<()> {
    if out == "-" {
        let mut stdout = std::io::stdout().lock();
        stdout.write_all(text.as_bytes())?;
        stdout.flush()
    } else {
        std::fs::write(out, text)
    }
}

pub fn execute(cli: &Cli) -> CliResult<Report> {
    match &cli.command {
        Command::Describe { spec, base } => describe(spec, base.as_deref()),
        Command::Holonomy(args) => holonomy_report("holonomy", args),
        Command::Classify(args) => classify(args),
        Command::Sasaki { action: SasakiAction::Extract(args) } => sasaki_extract(args),
        Command::Sasaki { action: SasakiAction::Verify(args) } => sasaki_verify(args),
        Command::Cone { action: ConeAction::Verify { spec, s0, loops, seed, steps, base } } => {
            cone_verify(spec, s0, *loops, *seed, *steps, base.as_deref())
        }
        Command::Roll { action: RollAction::Develop { spec, curve, steps } } => roll_develop(spec, curve, *steps),
        Command::Roll { action: RollAction::Crosscheck { spec, loop_file, steps } } => {
            roll_crosscheck(spec, loop_file, *steps)
        }
    }
}

fn parse_list(text: &str, what: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|c| c.trim().parse::<f64>().map_err(|_| CliError::Input(format!("invalid {what} `{text}`"))))
        .collect()
}

fn base_point(spec: &ManifoldSpec, base: Option<&str>) -> CliResult<Vec<f64>> {
    let x = match base {
        Some(text) => parse_list(text, "base point")?,
        None => spec.default_base(),
    };
    spec.check_point(&x)?;
    Ok(x)
}

fn describe(name: &str, base: Option<&str>) -> CliResult<Report> {
    let spec = resolve_spec(name)?;
    let x = base_point(&spec, base)?;
    let ric = ricci(&spec, &x, None)?;
    let mut report = Report::new("describe", &spec, 0, 0);
    report.describe = Some(DescribeSection {
        builtin: spec.builtin.as_ref().map(|b| b.to_string()),
        coords: spec.coords.clone(),
        metric: spec.metric.iter().map(|r| r.iter().map(|e| e.display(&spec.coords).to_string()).collect()).collect(),
        has_frame: spec.frame.is_some(),
        base: x,
        ricci: ric.row_iter().map(|r| r.iter().copied().collect()).collect(),
    });
    Ok(report)
}

fn run_holonomy(spec: &ManifoldSpec, args: &HolonomyArgs) -> CliResult<(Vec<f64>, HolonomyAlgebra)> {
    if args.steps == 0 {
        return Err(CliError::Input("steps must be positive".into()));
    }
    let x = base_point(spec, args.base.as_deref())?;
    let loops: Vec<_> =
        generate_loops(spec, &x, args.loops, args.seed)?.into_iter().map(|l| l.with_steps(args.steps)).collect();
    let opts = HolonomyOptions { rank_tol: args.rank_tol, steps: args.steps, ..Default::default() };
    let alg = estimate_algebra(spec, &x, &loops, &opts)?;
    Ok((x, alg))
}

fn holonomy_section(alg: &HolonomyAlgebra, loops: usize, rank_tol: f64) -> CliResult<HolonomySection> {
    let verdict = holonomy::classify(alg)?;
    let (controllable, text) = controllability(&verdict);
    let gap = alg.gap();
    Ok(HolonomySection {
        base: alg.base.clone(),
        loops,
        rank_tol,
        algebra_dim: verdict.algebra_dim,
        commutant_skew_dim: verdict.commutant_skew_dim,
        singular_values: alg.singular_values.clone(),
        gap: gap.is_finite().then_some(gap),
        noise_floor: alg.noise_floor,
        closure_residual: alg.closure_residual(),
        label: verdict.label.to_string(),
        controllable,
        controllability: text,
        notes: verdict.notes,
    })
}

fn holonomy_failures(section: &HolonomySection) -> Vec<String> {
    let mut f = Vec::new();
    if section.gap.is_some_and(|g| g < MIN_GAP) {
        f.push("holonomy.gap".to_string());
    }
    f
}

fn holonomy_report(command: &str, args: &HolonomyArgs) -> CliResult<Report> {
    let spec = resolve_spec(&args.spec)?;
    let (_, alg) = run_holonomy(&spec, args)?;
    let section = holonomy_section(&alg, alg.samples.len(), args.rank_tol)?;
    let mut report = Report::new(command, &spec, args.seed, args.steps);
    report.failures = holonomy_failures(&section);
    report.holonomy = Some(section);
    Ok(report)
}

fn classify(args: &HolonomyArgs) -> CliResult<Report> {
    let path = Path::new(&args.spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(e.to_string()))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Input(e.to_string()))?;
        if value.get("tool_version").is_some() {
            return classify_report(&value);
        }
    }
    holonomy_report("classify", args)
}

/// Re-reads the counts of an earlier holonomy report.
fn classify_report(value: &serde_json::Value) -> CliResult<Report> {
    let bad = |what: &str| CliError::Input(format!("report lacks {what}"));
    let section: HolonomySection =
        serde_json::from_value(value.get("holonomy").cloned().ok_or_else(|| bad("a holonomy section"))?)
            .map_err(|e| CliError::Input(e.to_string()))?;
    let dim = value.get("dim").and_then(|d| d.as_u64()).ok_or_else(|| bad("`dim`"))? as usize;
    let verdict = classify_counts(section.algebra_dim, section.commutant_skew_dim, dim, None)?;
    let (controllable, text) = controllability(&verdict);
    let get_str = |k: &str| value.get(k).and_then(|v| v.as_str()).map(str::to_string).ok_or_else(|| bad(k));
    let mut report = Report {
        tool_version: rollhol::speclang::TOOL_VERSION.to_string(),
        command: "classify".into(),
        spec_name: get_str("spec_name")?,
        spec_digest: get_str("spec_digest")?,
        dim,
        seed: value.get("seed").and_then(|v| v.as_u64()).unwrap_or(0),
        steps: value.get("steps").and_then(|v| v.as_u64()).unwrap_or(0) as usize,
        failures: Vec::new(),
        describe: None,
        holonomy: None,
        sasaki: None,
        cone: None,
        rolling: None,
    };
    let mut notes = section.notes.clone();
    notes.extend(verdict.notes.iter().cloned());
    let section = HolonomySection { label: verdict.label.to_string(), controllable, controllability: text, notes, ..section };
    report.failures = holonomy_failures(&section);
    report.holonomy = Some(section);
    Ok(report)
}

fn lattice_centers(spec: &ManifoldSpec, base: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![base.to_vec()];
    centers.extend((0..count).map(|_| spec.sample_point(&mut rng)));
    centers
}

/// Sign of the first nonzero frame component of Z at the base.
fn z_sign(spec: &ManifoldSpec, base: &[f64], z: &[f64]) -> CliResult<f64> {
    let e = orthonormal_frame(spec, base)?;
    let g = spec.metric_at(base);
    let zf = e.transpose() * g * rollhol::Vector::from_column_slice(z);
    Ok(zf.iter().find(|v| v.abs() > 1e-8).map_or(1.0, |v| v.signum()))
}

fn sasaki_extract(args: &SasakiArgs) -> CliResult<Report> {
    let spec = resolve_spec(&args.spec)?;
    let hargs = HolonomyArgs {
        spec: args.spec.clone(),
        loops: args.loops,
        seed: args.seed,
        steps: args.steps,
        rank_tol: DEFAULT_RANK_TOL,
        base: args.base.clone(),
    };
    let (x, alg) = run_holonomy(&spec, &hargs)?;
    let commutant = commutant_skew(&alg).len();
    let seed = if commutant == 1 || commutant == 3 { None } else { sphere_seed(&spec, &x)? };
    let structure = invariant_complex_structure(&alg, seed.as_ref())?;
    let centers = lattice_centers(&spec, &x, args.centers, args.seed);
    let lattice = jr_lattice(&spec, &structure.matrices(), &x, &centers, args.lattice, args.steps)?;
    let path_residual = lattice.sites.iter().map(|s| s.path_residual).fold(0.0, f64::max);

    let mut report = Report::new("sasaki extract", &spec, args.seed, args.steps);
    let mut residuals = Vec::new();
    let mut three = None;
    let structures = match &structure {
        InvariantStructure::Single(_) => vec![extract_sasaki(&spec, &lattice, 0)?],
        InvariantStructure::Triple(_) => {
            let t = extract_3sasaki(&spec, &lattice)?;
            three = Some(t.residuals.clone());
            t.structures.to_vec()
        }
    };
    for st in &structures {
        let r = verify_sasaki(&spec, st)?;
        if r.max_identity() > SASAKI_TOL {
            report.failures.push("sasaki.identities".into());
        }
        if r.omega_nondegeneracy < OMEGA_FLOOR {
            report.failures.push("sasaki.omega_nondegeneracy".into());
        }
        residuals.push(r);
    }
    if let Some(t) = &three {
        if [t.z_orthonormal, t.bracket, t.j_z, t.epsilon].into_iter().any(|v| v > STRUCTURE_TOL) {
            report.failures.push("three_sasaki.relations".into());
        }
    }
    if path_residual > STRUCTURE_TOL {
        report.failures.push("sasaki.path_independence".into());
    }
    report.failures.dedup();
    let sign = z_sign(&spec, &x, &structures[0].sites[0].center.z)?;
    report.holonomy = Some(holonomy_section(&alg, alg.samples.len(), DEFAULT_RANK_TOL)?);
    report.sasaki = Some(SasakiSection {
        mode: "extract".into(),
        lattice_step: args.lattice,
        sites: lattice.sites.len(),
        sign,
        residuals,
        three_sasaki: three,
        converse: None,
        triple: None,
    });
    Ok(report)
}

fn sasaki_verify(args: &SasakiArgs) -> CliResult<Report> {
    let spec = resolve_spec(&args.spec)?;
    let x = base_point(&spec, args.base.as_deref())?;
    let fields = reference_structures(&spec)
        .ok_or_else(|| CliError::Input(format!("no reference Sasakian structure is known for {}", spec.name)))?;
    let mut report = Report::new("sasaki verify", &spec, args.seed, args.steps);
    let converse = build_jr_from_structure(&spec, &fields[0].0, &fields[0].1, &x, args.loops, args.seed)?;
    if converse.loop_commutator > STRUCTURE_TOL {
        report.failures.push("sasaki.loop_commutator".into());
    }
    let triple = if fields.len() == 3 {
        let arr = [fields[0].clone(), fields[1].clone(), fields[2].clone()];
        let t = build_jr_triple(&spec, &arr, 20, args.seed)?;
        if t.max_relation() > STRUCTURE_TOL {
            report.failures.push("three_sasaki.relations".into());
        }
        Some(t)
    } else {
        None
    };
    let sign = z_sign(&spec, &x, &fields[0].0.eval(&x))?;
    report.sasaki = Some(SasakiSection {
        mode: "verify".into(),
        lattice_step: args.lattice,
        sites: 0,
        sign,
        residuals: Vec::new(),
        three_sasaki: None,
        converse: Some(converse),
        triple,
    });
    Ok(report)
}

fn cone_verify(name: &str, s0: &str, loops: usize, seed: u64, steps: usize, base: Option<&str>) -> CliResult<Report> {
    let spec = resolve_spec(name)?;
    let (base_spec, cone) = match &spec.builtin {
        Some(Builtin::Cone { child, s_range }) => {
            let b = ManifoldSpec::builtin(child);
            let c = cone_spec(&b, *s_range)?;
            (b, c)
        }
        _ => {
            let c = cone_spec(&spec, DEFAULT_CONE_RANGE)?;
            (spec.clone(), c)
        }
    };
    if steps == 0 {
        return Err(CliError::Input("steps must be positive".into()));
    }
    let x = base_point(&base_spec, base)?;
    let heights = parse_list(s0, "s0 list")?;
    let mut report = Report::new("cone verify", &base_spec, seed, steps);
    let mut entries = Vec::new();
    for &h in &heights {
        let mut p = x.clone();
        p.push(h);
        cone.check_point(&p)?;
        let family = trig_loops(&cone, &p, loops, seed)?;
        let run = |k: usize| -> CliResult<Vec<rollhol::connections::ConeResidual>> {
            family
                .iter()
                .map(|l| verify_cone_isomorphism(&cone, &base_spec, &l.clone().with_steps(k), h).map_err(CliError::from))
                .collect()
        };
        let samples = run(steps)?;
        let refined = run(2 * steps)?;
        let max_residual = samples.iter().map(|r| r.residual).fold(0.0, f64::max);
        let refined_residual = refined.iter().map(|r| r.residual).fold(0.0, f64::max);
        let shrink = if refined_residual > 0.0 { max_residual / refined_residual } else { f64::MAX };
        if max_residual > CONE_TOL {
            report.failures.push(format!("cone.residual(s0={h})"));
        }
        if max_residual > 0.0 && shrink < CONE_SHRINK {
            report.failures.push(format!("cone.shrink(s0={h})"));
        }
        entries.push(ConeEntry { s0: h, max_residual, refined_residual, shrink, samples });
    }
    report.cone = Some(ConeSection { loops, entries });
    Ok(report)
}

fn read_curve(path: &Path, steps: Option<usize>) -> CliResult<rollhol::CurvePath> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let file: CurveFile = serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut curve = file.to_path()?;
    if let Some(k) = steps {
        curve = curve.with_steps(k);
    }
    Ok(curve)
}

/// Embedded contact for unit spheres (M rolls onto itself), the standard one
/// otherwise.
fn initial_state(spec: &ManifoldSpec, x0: &[f64]) -> CliResult<RollingState> {
    if let Some(Builtin::Sphere { radius, .. }) = spec.builtin {
        if radius == 1.0 {
            let e = orthonormal_frame(spec, x0)?;
            return Ok(RollingState::new(
                x0.to_vec(),
                stereographic_to_sphere(x0, 1.0),
                stereographic_differential(x0, 1.0) * e,
            )?);
        }
    }
    Ok(RollingState::standard(x0))
}

fn roll_develop(name: &str, curve: &Path, steps: Option<usize>) -> CliResult<Report> {
    let spec = resolve_spec(name)?;
    let curve = read_curve(curve, steps)?;
    let q0 = initial_state(&spec, &curve.start())?;
    let traj = develop(&spec, &curve, &q0)?;
    let residuals = rolling_residuals(&traj);
    let mut report = Report::new("roll develop", &spec, 0, curve.steps_per_segment);
    if residuals.ns > ROLLING_TOL {
        report.failures.push("rolling.ns".into());
    }
    if residuals.nt > ROLLING_TOL {
        report.failures.push("rolling.nt".into());
    }
    report.rolling = Some(RollingSection { residuals, crosscheck: None, trajectory: Some(traj.records()) });
    Ok(report)
}

fn roll_crosscheck(name: &str, loop_file: &Path, steps: Option<usize>) -> CliResult<Report> {
    let spec = resolve_spec(name)?;
    let mut curve = read_curve(loop_file, steps)?;
    curve.is_loop = true;
    let q0 = initial_state(&spec, &curve.start())?;
    let check = holonomy_crosscheck(&spec, &curve, &q0)?;
    let traj = develop(&spec, &curve, &q0)?;
    let mut report = Report::new("roll crosscheck", &spec, 0, curve.steps_per_segment);
    if check.residual > CROSSCHECK_TOL {
        report.failures.push("rolling.crosscheck".into());
    }
    report.rolling = Some(RollingSection { residuals: rolling_residuals(&traj), crosscheck: Some(check), trajectory: None });
    Ok(report)
}
