//! Config-driven experiment runs: one TOML file, one output directory with
//! per-analysis CSV files, a pass/fail summary and a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytic::{
    annulus_samples, barrier_admissible, counterexample, BarrierParams, CounterexampleParams, Profile,
};
use crate::error::{Error, Result};
use crate::expr::{Coefficient, Expr};
use crate::geometry::{
    box_dimension, default_zero_threshold, density_ratio, extract_dead_core, free_boundary, unit_ball_volume,
    DeadCoreSet, FreeBoundarySet,
};
use crate::grid::{csv_err, CartesianGrid, ScalarField};
use crate::model::{
    beta_exponent, rescale_spec, BoundaryData, CoefficientFields, DerivedExponents, Domain, EllipticityPair,
    ExponentTriple, OperatorKind, ProblemSpec, ScalingMap, SymMatrix,
};
use crate::rates::{
    check_nondegeneracy, check_nondegeneracy_near, check_upper_growth, dyadic_decay_check, flatness_probe, geometric_radii, growth_fit,
    NondegeneracyVerdict,
};
use crate::solver::{
    comparison_check, discrete_residual, solve_dirichlet, verify_viscosity_inequalities, ComparisonOptions,
    SolveConfig, SolveReport,
};

/// Version of the output layout.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    OracleResidual,
    Rates,
    Nondegeneracy,
    Dyadic,
    Density,
    Dimension,
    Comparison,
    Barrier,
    Counterexample,
    Flatness,
}

impl Analysis {
    pub const ALL: [Analysis; 10] = [
        Analysis::OracleResidual,
        Analysis::Rates,
        Analysis::Nondegeneracy,
        Analysis::Dyadic,
        Analysis::Density,
        Analysis::Dimension,
        Analysis::Comparison,
        Analysis::Barrier,
        Analysis::Counterexample,
        Analysis::Flatness,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Analysis::OracleResidual => "oracle-residual",
            Analysis::Rates => "rates",
            Analysis::Nondegeneracy => "nondegeneracy",
            Analysis::Dyadic => "dyadic",
            Analysis::Density => "density",
            Analysis::Dimension => "dimension",
            Analysis::Comparison => "comparison",
            Analysis::Barrier => "barrier",
            Analysis::Counterexample => "counterexample",
            Analysis::Flatness => "flatness",
        }
    }

    /// Whether the analysis reads the solution of the configured problem.
    pub fn needs_solution(&self) -> bool {
        !matches!(self, Analysis::Comparison | Analysis::Barrier | Analysis::Counterexample)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Must agree with the domain when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Intervals along the first axis.
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierConfig {
    pub p: f64,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub upper: f64,
    pub sup_lambda0: f64,
    pub d0: f64,
    pub eta: f64,
    /// Distance from the centre to the boundary used for the gradient bound.
    pub dist: Option<f64>,
    pub samples: usize,
    pub s_max: f64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self {
            p: 0.0,
            lambda: 1.0,
            upper: 2.0,
            sup_lambda0: 1.0,
            d0: 1.0,
            eta: 1.0,
            dist: None,
            samples: 10_000,
            s_max: 7.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    pub draws: usize,
    pub cells: usize,
    pub ordering_tol: f64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            draws: 10,
            cells: 32,
            ordering_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterexampleConfig {
    pub n: usize,
    pub p: f64,
    pub mu: f64,
    pub eps: f64,
    pub gamma: f64,
    pub points: usize,
    pub residual_tol: f64,
    pub step_tol: f64,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self {
            n: 2,
            p: 0.0,
            mu: 0.5,
            eps: 0.1,
            gamma: 1.0,
            points: 100,
            residual_tol: 1e-10,
            step_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlatnessConfig {
    pub gammas: Vec<f64>,
    pub cells: usize,
}

impl Default for FlatnessConfig {
    fn default() -> Self {
        Self {
            gammas: vec![1.0, 0.1, 0.01],
            cells: 64,
        }
    }
}

/// Parameters of the analyses; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisParams {
    /// Values at or below count as zero; defaults to [`default_zero_threshold`].
    pub zero_threshold: Option<f64>,
    /// Free boundary points probed by the rate analyses.
    pub points: usize,
    /// Points that must pass the exponent band.
    pub min_points: usize,
    /// Allowed fitted exponent range as multiples of `beta`.
    pub rate_band: [f64; 2],
    pub upper_growth_tol: f64,
    /// Radii in the growth fit, spread geometrically over `[4h, rho/4]`.
    pub fit_radii: usize,
    pub nondegeneracy_radii_cells: Vec<u32>,
    /// Required `min ratio / median ratio`.
    pub nondegeneracy_floor: f64,
    /// Smallness target of the normalization.
    pub gamma: f64,
    pub k_max: u32,
    pub density_radii_cells: Vec<u32>,
    /// Required density as a fraction of the unit ball volume.
    pub density_floor: f64,
    pub box_sizes_cells: Vec<u32>,
    /// Defaults to `n - 0.5`.
    pub max_dimension: Option<f64>,
    /// Exact solution for the error column of the oracle-residual analysis.
    pub exact: Option<Coefficient>,
    pub error_tol: Option<f64>,
    pub counterexample: CounterexampleConfig,
    pub barrier: BarrierConfig,
    pub comparison: ComparisonConfig,
    pub flatness: FlatnessConfig,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            zero_threshold: None,
            points: 8,
            min_points: 5,
            rate_band: [0.85, 1.15],
            upper_growth_tol: 0.15,
            fit_radii: 6,
            nondegeneracy_radii_cells: vec![4, 8, 16, 32],
            nondegeneracy_floor: 0.1,
            gamma: 1.0,
            k_max: 4,
            density_radii_cells: vec![8, 16, 32],
            density_floor: 0.05,
            box_sizes_cells: vec![2, 4, 8, 16],
            max_dimension: None,
            exact: None,
            error_tol: None,
            counterexample: CounterexampleConfig::default(),
            barrier: BarrierConfig::default(),
            comparison: ComparisonConfig::default(),
            flatness: FlatnessConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub analyses: Vec<Analysis>,
    pub grid: GridConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub params: AnalysisParams,
    pub spec: ProblemSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn build_grid(&self) -> Result<CartesianGrid> {
        CartesianGrid::for_domain(&self.spec.domain, self.grid.cells)
    }
}

/// Every violated invariant of the configuration, without running anything.
pub fn validate(config: &ExperimentConfig) -> Vec<Error> {
    let mut errs = config.spec.violations();
    if let Err(e) = config.solve.validate() {
        errs.push(e);
    }
    if let Some(d) = config.grid.dim {
        if d != config.spec.domain.dim {
            errs.push(Error::InvalidGrid(format!(
                "grid dimension {d} differs from domain dimension {}",
                config.spec.domain.dim
            )));
        }
    }
    if config.spec.domain.validate().is_ok() {
        if let Err(e) = config.build_grid() {
            errs.push(e);
        }
    }
    let p = &config.params;
    let bad = |m: String| Error::InvalidSpec(m);
    if let Some(t) = p.zero_threshold {
        if !(t > 0.0) {
            errs.push(bad(format!("zero_threshold = {t} must be positive")));
        }
    }
    if p.points == 0 || p.min_points > p.points {
        errs.push(bad(format!("need 1 <= min_points <= points, got {} and {}", p.min_points, p.points)));
    }
    if !(p.rate_band[0] > 0.0 && p.rate_band[0] <= p.rate_band[1]) {
        errs.push(bad(format!("rate_band {:?} is not an interval", p.rate_band)));
    }
    if p.fit_radii < 5 {
        errs.push(bad(format!("fit_radii = {} must be at least 5", p.fit_radii)));
    }
    if !(p.gamma > 0.0) {
        errs.push(bad(format!("gamma = {} must be positive", p.gamma)));
    }
    if p.k_max == 0 {
        errs.push(bad("k_max must be positive".into()));
    }
    if p.nondegeneracy_radii_cells.len() < 2 || p.nondegeneracy_radii_cells.contains(&0) {
        errs.push(bad("nondegeneracy_radii_cells needs at least two positive entries".into()));
    }
    if p.density_radii_cells.is_empty() || p.density_radii_cells.iter().any(|&c| c < 3) {
        errs.push(bad("density radii must be at least 3 cells".into()));
    }
    if p.box_sizes_cells.len() < 4 || p.box_sizes_cells.contains(&0) {
        errs.push(bad("box_sizes_cells needs at least four positive entries".into()));
    }
    if p.error_tol.is_some() && p.exact.is_none() {
        errs.push(bad("error_tol given without an exact solution".into()));
    }
    let c = &p.counterexample;
    if let Err(e) = CounterexampleParams::new(c.n, c.p, c.mu, c.eps, c.gamma) {
        errs.push(e);
    }
    let b = &p.barrier;
    if let Err(e) = barrier_admissible(b.p, b.lambda, b.upper, b.sup_lambda0, b.d0) {
        errs.push(e);
    }
    if !(b.eta > 0.0) || b.samples == 0 {
        errs.push(bad("barrier needs eta > 0 and at least one sample".into()));
    }
    if p.comparison.cells < 4 {
        errs.push(bad("comparison grids need at least 4 cells".into()));
    }
    if p.flatness.gammas.is_empty() || p.flatness.gammas.iter().any(|&g| !(g > 0.0)) || p.flatness.cells < 4 {
        errs.push(bad("flatness needs positive gammas and at least 4 cells".into()));
    }
    errs
}

/// One pass/fail line of the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub analysis: Analysis,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub all_passed: bool,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub package: String,
    pub version: String,
    pub format_version: u32,
    pub config_sha256: String,
    pub seed: u64,
    pub analyses: Vec<Analysis>,
    pub files: Vec<String>,
    /// Wall-clock seconds per step; the only non-reproducible content.
    pub timings_s: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    /// `None` when nothing was run.
    pub summary: Option<Summary>,
    pub solve_report: Option<SolveReport>,
}

/// What [`run_with`] should do beyond the configured analyses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Replaces `config.analyses`.
    pub analyses: Option<Vec<Analysis>>,
    /// Solve and write the solution even without analyses needing it.
    pub force_solve: bool,
}

pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    run_with(config, &RunOptions::default())
}

/// Solved problem with its dead core and probe points.
struct Solved {
    field: ScalarField,
    derived: DerivedExponents,
    threshold: f64,
    dead: DeadCoreSet,
    fb: FreeBoundarySet,
    points: Vec<usize>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn create(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(fs::File::create(self.dir.join(name))?))
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut wr = csv::Writer::from_writer(self.create(name)?);
        wr.write_record(header).map_err(csv_err)?;
        for r in rows {
            wr.write_record(r).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
        let mut f = self.create(name)?;
        f.write_all(text.as_bytes())?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }
}

fn f(v: f64) -> String {
    format!("{v:?}")
}

/// Runs the configured analyses and writes all artifacts. Fails on an invalid
/// configuration (first violation) or a solver failure; failing checks are
/// reported in the summary instead.
pub fn run_with(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    if let Some(e) = validate(config).into_iter().next() {
        return Err(e);
    }
    let out_dir = config
        .out
        .clone()
        .ok_or_else(|| Error::InvalidSpec("no output directory given".into()))?;
    fs::create_dir_all(&out_dir)?;
    let mut analyses = opts.analyses.clone().unwrap_or_else(|| config.analyses.clone());
    analyses.sort();
    analyses.dedup();
    let mut w = Writer {
        dir: out_dir.clone(),
        files: Vec::new(),
    };
    let mut timings = BTreeMap::new();
    let mut checks = Vec::new();
    let mut solve_report = None;

    let mut solved = None;
    if opts.force_solve || analyses.iter().any(|a| a.needs_solution()) {
        let t = Instant::now();
        let grid = config.build_grid()?;
        let result = solve_dirichlet(&config.spec, &grid, &config.solve);
        timings.insert("solve".to_string(), t.elapsed().as_secs_f64());
        let (field, report) = match result {
            Ok(v) => v,
            Err(Error::NotConverged {
                residual,
                sweeps,
                report,
            }) => {
                w.json("solve_report.json", &report)?;
                return Err(Error::NotConverged {
                    residual,
                    sweeps,
                    report,
                });
            }
            Err(e) => return Err(e),
        };
        field.write_csv(w.create("solution.csv")?)?;
        w.json("solve_report.json", &report)?;
        solve_report = Some(report);
        solved = Some(prepare(config, field)?);
    }

    for a in &analyses {
        let t = Instant::now();
        let new_checks = match a {
            Analysis::OracleResidual => oracle_residual(config, need(&solved)?, &mut w)?,
            Analysis::Rates => rates(config, need(&solved)?, &mut w)?,
            Analysis::Nondegeneracy => nondegeneracy(config, need(&solved)?, &mut w)?,
            Analysis::Dyadic => dyadic(config, need(&solved)?, &mut w)?,
            Analysis::Density => density(config, need(&solved)?, &mut w)?,
            Analysis::Dimension => dimension(config, need(&solved)?, &mut w)?,
            Analysis::Flatness => flatness(config, need(&solved)?, &mut w)?,
            Analysis::Comparison => comparison(config, &mut w)?,
            Analysis::Barrier => barrier(config, &mut w)?,
            Analysis::Counterexample => counterexample_analysis(config, &mut w)?,
        };
        timings.insert(a.name().to_string(), t.elapsed().as_secs_f64());
        checks.extend(new_checks.into_iter().map(|(name, passed, detail)| Check {
            analysis: *a,
            name,
            passed,
            detail,
        }));
    }

    let summary = if analyses.is_empty() && solved.is_none() {
        None
    } else {
        let s = Summary {
            all_passed: checks.iter().all(|c| c.passed),
            checks,
        };
        w.json("summary.json", &s)?;
        Some(s)
    };

    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        format_version: FORMAT_VERSION,
        config_sha256: config.hash()?,
        seed: config.seed,
        analyses,
        files: w.files.clone(),
        timings_s: timings,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let tmp = out_dir.join("manifest.json.tmp");
    fs::write(&tmp, text + "\n")?;
    fs::rename(&tmp, out_dir.join("manifest.json"))?;
    Ok(RunOutcome {
        out_dir,
        manifest,
        summary,
        solve_report,
    })
}

fn need(solved: &Option<Solved>) -> Result<&Solved> {
    solved
        .as_ref()
        .ok_or_else(|| Error::Precondition("analysis needs a solution".into()))
}

type Checks = Vec<(String, bool, String)>;

fn prepare(config: &ExperimentConfig, field: ScalarField) -> Result<Solved> {
    let grid = *field.grid();
    let h = grid.h();
    let p = &config.params;
    let derived = beta_exponent(config.spec.exponents)?;
    let threshold = match p.zero_threshold {
        Some(t) => t,
        None => default_zero_threshold(config.spec.exponents, config.solve.tol_residual, h)?,
    };
    let dead = extract_dead_core(&field, threshold)?;
    let fb = free_boundary(&dead);
    let reach = p
        .nondegeneracy_radii_cells
        .iter()
        .chain(&p.density_radii_cells)
        .copied()
        .max()
        .unwrap_or(4)
        .max(4) as f64
        * h;
    let points = select_free_boundary_points(&fb, &config.spec.domain, p.points, reach);
    Ok(Solved {
        field,
        derived,
        threshold,
        dead,
        fb,
        points,
    })
}

/// Up to `count` dead-side free boundary nodes at distance at least `margin`
/// from the boundary, evenly spread in angle about their centroid.
pub fn select_free_boundary_points(fb: &FreeBoundarySet, domain: &Domain, count: usize, margin: f64) -> Vec<usize> {
    let g = fb.grid();
    let cand = fb.interior_dead_side(domain, margin);
    if cand.is_empty() || count == 0 {
        return Vec::new();
    }
    let m = cand.len() as f64;
    let c = cand.iter().fold([0.0, 0.0], |acc, &k| {
        let x = g.coord(k);
        [acc[0] + x[0] / m, acc[1] + x[1] / m]
    });
    let mut keyed: Vec<(f64, usize)> = cand
        .iter()
        .map(|&k| {
            let x = g.coord(k);
            ((x[1] - c[1]).atan2(x[0] - c[0]), k)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = (0..count.min(keyed.len()))
        .map(|i| keyed[i * keyed.len() / count.min(keyed.len())].1)
        .collect();
    out.dedup();
    out
}

fn no_points(s: &Solved, name: &str) -> Option<Checks> {
    if s.points.is_empty() {
        Some(vec![(
            name.to_string(),
            false,
            format!("no interior free boundary point (dead nodes: {})", s.dead.dead_count()),
        )])
    } else {
        None
    }
}

fn oracle_residual(config: &ExperimentConfig, s: &Solved, w: &mut Writer) -> Result<Checks> {
    let grid = *s.field.grid();
    let n = grid.dim();
    let eps = *config.solve.stages(config.spec.exponents.p, grid.h()).last().expect("non-empty");
    let res = discrete_residual(&s.field, &config.spec, eps)?;
    let visc = verify_viscosity_inequalities(&s.field, &config.spec, eps, config.solve.tol_residual)?;
    let exact = config.params.exact.as_ref();
    let mut rows = Vec::with_capacity(grid.len());
    let mut max_err: f64 = 0.0;
    for k in 0..grid.len() {
        let (i, j) = grid.ij(k);
        let x = grid.coord(k);
        let mut row = vec![i.to_string(), j.to_string(), f(x[0]), f(x[1]), f(s.field.get(k)), f(res.get(k))];
        if let Some(e) = exact {
            let v = e.eval(&x[..n]);
            max_err = max_err.max((v - s.field.get(k)).abs());
            row.push(f(v));
            row.push(f(s.field.get(k) - v));
        }
        rows.push(row);
    }
    let mut header = vec!["i", "j", "x1", "x2", "u", "residual"];
    if exact.is_some() {
        header.extend(["exact", "error"]);
    }
    w.csv("oracle_residual.csv", &header, &rows)?;
    let mut checks = vec![(
        "viscosity_classification".to_string(),
        visc.all_solution(),
        format!(
            "solution {} sub-only {} super-only {} neither {} at tol {:e}",
            visc.solution, visc.sub_only, visc.super_only, visc.neither, visc.tol
        ),
    )];
    if exact.is_some() {
        let tol = config.params.error_tol;
        checks.push((
            "error_vs_exact".to_string(),
            tol.is_none_or(|t| max_err <= t),
            format!("max error {max_err:e}, tolerance {tol:?}"),
        ));
    }
    Ok(checks)
}

fn fit_radii(config: &ExperimentConfig, s: &Solved, node: usize) -> Result<(ScalingMap, Vec<f64>)> {
    let g = s.field.grid();
    let n = g.dim();
    let c = g.coord(node);
    let dist = config.spec.domain.signed_distance(&c[..n]);
    let norms = config.spec.norms_over(&config.spec.domain.sample_points(65));
    let map = ScalingMap::standard(
        config.spec.exponents,
        s.field.max().max(0.0),
        &norms,
        c,
        dist,
        config.params.gamma,
    )?;
    let r_min = 4.0 * g.h();
    let r_max = (map.rho / 4.0).max(2.0 * r_min);
    Ok((map, geometric_radii(r_min, r_max, config.params.fit_radii)))
}

fn rates(config: &ExperimentConfig, s: &Solved, w: &mut Writer) -> Result<Checks> {
    let nonempty = (
        "dead_core_nonempty".to_string(),
        s.dead.dead_count() > 0,
        format!(
            "{} dead nodes at threshold {:e}, {} free boundary nodes",
            s.dead.dead_count(),
            s.threshold,
            s.fb.nodes().len()
        ),
    );
    if let Some(mut c) = no_points(s, "exponent_band") {
        c.insert(0, nonempty);
        return Ok(c);
    }
    let p = &config.params;
    let beta = s.derived.beta;
    let (lo, hi) = (p.rate_band[0] * beta, p.rate_band[1] * beta);
    let mut rows = Vec::new();
    let mut fit_rows = Vec::new();
    let mut in_band = 0;
    let mut upper_ok = true;
    for (id, &k) in s.points.iter().enumerate() {
        let (_, radii) = fit_radii(config, s, k)?;
        let fit = growth_fit(&s.field, &config.spec.domain, k, &radii, s.threshold)?;
        let up = check_upper_growth(&fit, &s.derived, p.upper_growth_tol);
        let band = fit.fitted_exponent >= lo && fit.fitted_exponent <= hi;
        in_band += band as usize;
        upper_ok &= up.passes;
        rows.push(vec![
            id.to_string(),
            f(fit.point[0]),
            f(fit.point[1]),
            f(fit.fitted_exponent),
            f(fit.fitted_constant),
            f(fit.residual),
            f(fit.r_min),
            f(fit.r_max),
            band.to_string(),
            up.passes.to_string(),
        ]);
        for (r, v) in fit.radii.iter().zip(&fit.sups) {
            fit_rows.push(vec![id.to_string(), f(*r), f(*v)]);
        }
    }
    w.csv(
        "rates.csv",
        &["point", "x1", "x2", "exponent", "constant", "fit_residual", "r_min", "r_max", "in_band", "upper_growth"],
        &rows,
    )?;
    w.csv("rates_fits.csv", &["point", "r", "sup"], &fit_rows)?;
    Ok(vec![
        nonempty,
        (
            "exponent_band".to_string(),
            in_band >= p.min_points,
            format!(
                "{in_band}/{} points with exponent in [{lo:.3}, {hi:.3}], need {}",
                s.points.len(),
                p.min_points
            ),
        ),
        (
            "upper_growth".to_string(),
            upper_ok,
            format!("fitted exponent >= beta (1 - {}) at every point", p.upper_growth_tol),
        ),
    ])
}

fn nondegeneracy(config: &ExperimentConfig, s: &Solved, w: &mut Writer) -> Result<Checks> {
    if let Some(c) = no_points(s, "min_over_median") {
        return Ok(c);
    }
    let h = s.field.grid().h();
    let radii: Vec<f64> = config.params.nondegeneracy_radii_cells.iter().map(|&c| c as f64 * h).collect();
    let floor = config.params.nondegeneracy_floor;
    let mut rows = Vec::new();
    let mut ok = true;
    let mut verdict_ok = true;
    let mut worst = f64::INFINITY;
    for (id, &k) in s.points.iter().enumerate() {
        // A detected node is within one cell of the true free boundary.
        let rep = check_nondegeneracy_near(&s.field, &config.spec.domain, k, &radii, &s.derived, h)?;
        ok &= rep.min_ratio >= floor * rep.median_ratio;
        verdict_ok &= rep.verdict == NondegeneracyVerdict::NonDegenerate;
        worst = worst.min(rep.min_ratio / rep.median_ratio);
        for ((r, sup), q) in rep.radii.iter().zip(&rep.sups).zip(&rep.ratios) {
            rows.push(vec![id.to_string(), f(rep.point[0]), f(rep.point[1]), f(*r), f(*sup), f(*q)]);
        }
    }
    w.csv("nondegeneracy.csv", &["point", "x1", "x2", "r", "sup", "ratio"], &rows)?;
    let mut checks = vec![(
        "min_over_median".to_string(),
        ok,
        format!("smallest min/median ratio {worst:.4}, need >= {floor}"),
    )];
    if s.derived.nondegenerate {
        checks.push((
            "verdict".to_string(),
            verdict_ok,
            "ratio sequences show no monotone decay".to_string(),
        ));
    }
    Ok(checks)
}

fn dyadic(config: &ExperimentConfig, s: &Solved, w: &mut Writer) -> Result<Checks> {
    if let Some(c) = no_points(s, "decay_bound") {
        return Ok(c);
    }
    let mut rows = Vec::new();
    let mut ok = true;
    let mut resolved = 0;
    let mut total = 0;
    for (id, &k) in s.points.iter().enumerate() {
        let rep = dyadic_decay_check(&s.field, &config.spec, k, &s.derived, config.params.k_max, config.params.gamma)?;
        ok &= rep.all_pass;
        for r in &rep.rows {
            total += 1;
            resolved += r.resolved as usize;
            rows.push(vec![
                id.to_string(),
                r.k.to_string(),
                f(rep.scaling.tau),
                f(rep.scaling.rho),
                f(r.radius),
                f(r.sup),
                f(r.bound),
                f(r.slack),
                r.passes.to_string(),
                r.resolved.to_string(),
            ]);
        }
    }
    w.csv(
        "dyadic.csv",
        &["point", "k", "tau", "rho", "radius", "sup", "bound", "slack", "passes", "resolved"],
        &rows,
    )?;
    Ok(vec![(
        "decay_bound".to_string(),
        ok,
        format!("{total} rows, {resolved} resolved by at least 3 cells"),
    )])
}

fn density(config: &ExperimentConfig, s: &Solved, w: &mut Writer) -> Result<Checks> {
    let g = s.field.grid();
    let n = g.dim();
    let h = g.h();
    let radii: Vec<f64> = config.params.density_radii_cells.iter().map(|&c| c as f64 * h).collect();
    let r_max = radii.iter().copied().fold(0.0, f64::max);
    let nodes: Vec<usize> = s
        .fb
        .nodes()
        .into_iter()
        .filter(|&k| config.spec.domain.signed_distance(&g.coord(k)[..n]) >= r_max)
        .collect();
    if nodes.is_empty() {
        return Ok(vec![("density_floor".to_string(), false, "no interior free boundary node".to_string())]);
    }
    let floor = config.params.density_floor * unit_ball_volume(n);
    let mut rows = Vec::new();
    let mut min_ratio = f64::INFINITY;
    for &k in &nodes {
        let (i, j) = g.ij(k);
        let x = g.coord(k);
        for &r in &radii {
            let q = density_ratio(&s.dead, &config.spec.domain, k, r)?;
            min_ratio = min_ratio.min(q);
            rows.push(vec![i.to_string(), j.to_string(), f(x[0]), f(x[1]), f(r), f(q)]);
        }
    }
    w.csv("density.csv", &["i", "j", "x1", "x2", "r", "ratio"], &rows)?;
    Ok(vec![(
        "density_floor".to_string(),
        min_ratio >= floor,
        format!("{} nodes, min ratio {min_ratio:.4}, need >= {floor:.4}", nodes.len()),
    )])
}

fn dimension(config: &ExperimentConfig, s: &Solved, w: &mut Writer) -> Result<Checks> {
    let g = s.field.grid();
    if s.fb.is_empty() {
        return Ok(vec![("box_dimension".to_string(), false, "empty free boundary".to_string())]);
    }
    let sizes: Vec<f64> = config.params.box_sizes_cells.iter().map(|&c| c as f64 * g.h()).collect();
    let rep = box_dimension(&s.fb, &sizes)?;
    let cap = config.params.max_dimension.unwrap_or(g.dim() as f64 - 0.5);
    let rows: Vec<Vec<String>> = rep
        .box_sizes
        .iter()
        .zip(&rep.counts)
        .map(|(s, c)| vec![f(*s), c.to_string()])
        .collect();
    w.csv("dimension.csv", &["size", "count"], &rows)?;
    Ok(vec![(
        "box_dimension".to_string(),
        rep.dimension <= cap,
        format!("dimension {:.4} (fit residual {:.3e}), cap {cap}", rep.dimension, rep.fit_residual),
    )])
}

fn flatness(config: &ExperimentConfig, s: &Solved, w: &mut Writer) -> Result<Checks> {
    let Some(&x0) = s.points.first() else {
        return Ok(no_points(s, "monotone_in_gamma").unwrap_or_default());
    };
    let g = s.field.grid();
    let n = g.dim();
    let c = g.coord(x0);
    let spec = &config.spec;
    let dist = spec.domain.signed_distance(&c[..n]);
    let norms = spec.norms_over(&spec.domain.sample_points(65));
    let fc = &config.params.flatness;
    let unit = CartesianGrid::for_domain(
        &if n == 1 { Domain::interval(-1.0, 1.0) } else { Domain::square(1.0) },
        fc.cells,
    )?;
    let mut rows = Vec::new();
    let mut probes = Vec::new();
    let mut slack = 0.0f64;
    for &gamma in &fc.gammas {
        let map = ScalingMap::standard(spec.exponents, s.field.max().max(0.0), &norms, c, dist, gamma)?;
        let scaled = rescale_spec(spec, &map)?;
        let v = ScalarField::from_fn(unit, |y| {
            let x = [c[0] + map.rho * y[0], c[1] + map.rho * y.get(1).copied().unwrap_or(0.0)];
            s.field.interpolate(&x[..n]).unwrap_or(f64::NAN) / map.tau
        })?;
        let probe = flatness_probe(&v, &scaled, gamma, s.threshold / map.tau)?;
        slack = slack.max(s.threshold / map.tau);
        rows.push(vec![f(gamma), f(map.rho), f(map.tau), f(probe)]);
        probes.push((gamma, probe));
    }
    w.csv("flatness.csv", &["gamma", "rho", "tau", "probe"], &rows)?;
    // Along the rescaled family a smaller gamma shrinks rho, so the profile
    // must get flatter. Values under the zero threshold count as equal.
    let mut by_gamma = probes.clone();
    by_gamma.sort_by(|a, b| b.0.total_cmp(&a.0));
    let monotone = by_gamma.windows(2).all(|p| p[1].1 <= p[0].1 * (1.0 + 1e-12) + slack);
    Ok(vec![(
        "monotone_in_gamma".to_string(),
        monotone,
        format!("probes {probes:?} of the rescaled family at {c:?}, non-decreasing in gamma"),
    )])
}

/// A random problem and a second one with boundary data raised by a positive
/// amount, on `[-1/2, 1/2]^2`.
pub fn comparison_draw(rng: &mut ChaCha8Rng) -> Result<(ProblemSpec, ProblemSpec)> {
    let p = rng.gen_range(-0.5..=1.0);
    let q = rng.gen_range(0.0..=0.9 * (p + 1.0));
    let mu = rng.gen_range(0.0..=0.9 * (p + 1.0));
    let upper = rng.gen_range(1.0..=2.0);
    let ell = EllipticityPair::new(1.0, upper)?;
    let operator = match rng.gen_range(0..4) {
        0 => OperatorKind::Trace,
        1 => OperatorKind::PucciPlus,
        2 => OperatorKind::PucciMinus,
        _ => OperatorKind::MinOfTwoTraces {
            weights: [SymMatrix::sym2(1.0, 0.0, upper), SymMatrix::identity(2).scaled(0.5 * (1.0 + upper))],
        },
    };
    let ca: f64 = rng.gen_range(0.0..=1.0);
    let a = if rng.gen_bool(0.5) {
        Coefficient::constant(ca)
    } else {
        Coefficient::new(Expr::power_law(ca, 1.0))
    };
    let l1: f64 = rng.gen_range(0.0..=2.0);
    let lambda0 = Coefficient::new(Expr::Add(
        Box::new(Expr::constant(0.5)),
        Box::new(Expr::power_law(l1, 2.0)),
    ));
    let c0: f64 = rng.gen_range(0.0..=1.0);
    let c1: f64 = rng.gen_range(0.0..=2.0);
    let delta: f64 = rng.gen_range(0.05..=0.5);
    let datum = |shift: f64| {
        Coefficient::new(Expr::Add(
            Box::new(Expr::constant(c0 + shift)),
            Box::new(Expr::power_law(c1, 2.0)),
        ))
    };
    let s1 = ProblemSpec {
        exponents: ExponentTriple::new(p, q, mu)?,
        ellipticity: ell,
        operator,
        coeff: CoefficientFields { a, lambda0 },
        boundary: BoundaryData { g: datum(0.0) },
        domain: Domain::square(0.5),
    };
    let mut s2 = s1.clone();
    s2.boundary.g = datum(delta);
    s1.validate()?;
    s2.validate()?;
    Ok((s1, s2))
}

fn comparison(config: &ExperimentConfig, w: &mut Writer) -> Result<Checks> {
    let cc = &config.params.comparison;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = Vec::new();
    let mut ok = true;
    let mut worst = f64::NEG_INFINITY;
    for draw in 0..cc.draws {
        let (s1, s2) = comparison_draw(&mut rng)?;
        let grid = CartesianGrid::for_domain(&s1.domain, cc.cells)?;
        let (u1, _) = solve_dirichlet(&s1, &grid, &config.solve)?;
        let (u2, _) = solve_dirichlet(&s2, &grid, &config.solve)?;
        let zero = ScalarField::constant(grid, 0.0);
        let eps = *config.solve.stages(s1.exponents.p, grid.h()).last().expect("non-empty");
        let opts = ComparisonOptions {
            eps_reg: eps,
            ordering_tol: cc.ordering_tol,
            residual_tol: 10.0 * config.solve.tol_residual,
            ..ComparisonOptions::default()
        };
        let rep = comparison_check(&u1, &u2, &s1, &zero, &zero, &opts)?;
        ok &= rep.passed;
        worst = worst.max(rep.max_difference);
        let e = s1.exponents;
        rows.push(vec![
            draw.to_string(),
            f(e.p),
            f(e.q),
            f(e.mu),
            s1.operator.name().to_string(),
            f(s1.ellipticity.upper),
            s1.coeff.a.to_string(),
            s1.coeff.lambda0.to_string(),
            s1.boundary.g.to_string(),
            s2.boundary.g.to_string(),
            f(rep.max_difference),
            format!("{:?}", rep.hypothesis),
            rep.passed.to_string(),
        ]);
    }
    w.csv(
        "comparison.csv",
        &["draw", "p", "q", "mu", "operator", "Lambda", "a", "lambda0", "g1", "g2", "max_u1_minus_u2", "hypothesis", "passed"],
        &rows,
    )?;
    Ok(vec![(
        "ordering".to_string(),
        ok,
        format!("{} draws, max(u1 - u2) = {worst:e}, tolerance {:e}", cc.draws, cc.ordering_tol),
    )])
}

fn barrier(config: &ExperimentConfig, w: &mut Writer) -> Result<Checks> {
    let b = &config.params.barrier;
    let s = barrier_admissible(b.p, b.lambda, b.upper, b.sup_lambda0, b.d0)?;
    let params = BarrierParams::new(b.eta, s, b.d0, [0.0; 2], 2)?;
    let ell = EllipticityPair::new(b.lambda, b.upper)?;
    // Extremal case of the sign condition: lower Pucci operator, no Hamiltonian,
    // constant absorption at its sup. The absorption exponent is p + 1.
    let spec = ProblemSpec {
        exponents: ExponentTriple { p: b.p, q: 0.0, mu: 0.0 },
        ellipticity: ell,
        operator: OperatorKind::PucciMinus,
        coeff: CoefficientFields {
            a: Coefficient::constant(0.0),
            lambda0: Coefficient::constant(b.sup_lambda0),
        },
        boundary: BoundaryData {
            g: Coefficient::constant(0.0),
        },
        domain: Domain::ball(&[0.0, 0.0], b.dist.unwrap_or(6.0 * b.d0)),
    };
    let dist = b.dist.unwrap_or(6.0 * b.d0);
    let sigma = params.sigma_lower(dist)?;
    let mut rows = Vec::with_capacity(b.samples);
    let mut min_l = f64::INFINITY;
    let mut min_grad = f64::INFINITY;
    for x in annulus_samples(2, [0.0; 2], b.d0 / 2.0, b.d0, b.samples, config.seed) {
        let j = params.jet(&x)?;
        let l = params.barrier_operator(&x, &spec)?;
        min_l = min_l.min(l);
        min_grad = min_grad.min(j.grad_norm());
        rows.push(vec![f(x[0]), f(x[1]), f(j.value), f(j.grad_norm()), f(l)]);
    }
    w.csv("barrier.csv", &["x1", "x2", "theta", "grad_norm", "L_theta"], &rows)?;
    Ok(vec![
        ("s_star".to_string(), s <= b.s_max, format!("s* = {s:.10}, cap {}", b.s_max)),
        (
            "sign_condition".to_string(),
            params.is_admissible(b.p, ell, b.sup_lambda0),
            format!("margin {:e}, d0 = {}", params.sign_condition_margin(b.p, ell, b.sup_lambda0), b.d0),
        ),
        (
            "operator_nonnegative".to_string(),
            min_l >= -1e-8,
            format!("min L[theta] = {min_l:e} over {} samples", b.samples),
        ),
        (
            "gradient_lower_bound".to_string(),
            min_grad >= sigma,
            format!("min |D theta| = {min_grad:.6e}, bound {sigma:.6e}, exact minimum {:.6e}", params.grad_min_exact()),
        ),
    ])
}

fn counterexample_analysis(config: &ExperimentConfig, w: &mut Writer) -> Result<Checks> {
    let c = &config.params.counterexample;
    let params = CounterexampleParams::new(c.n, c.p, c.mu, c.eps, c.gamma)?;
    let ce = counterexample(params)?;
    let mut rows = Vec::with_capacity(c.points);
    let mut max_res: f64 = 0.0;
    for x in annulus_samples(c.n, [0.0; 2], 0.05, 1.0, c.points, config.seed) {
        let r = ce.residual(&x[..c.n])?;
        max_res = max_res.max(r.abs());
        rows.push(vec![f(x[0]), f(x[1]), f(r)]);
    }
    w.csv("counterexample_residual.csv", &["x1", "x2", "residual"], &rows)?;

    // Growth ratios from the sampled profile; radii 2^-k are grid distances.
    let dom = if c.n == 1 { Domain::interval(-1.0, 1.0) } else { Domain::square(1.0) };
    let grid = CartesianGrid::for_domain(&dom, 256)?;
    let field = ScalarField::from_fn(grid, |x| ce.value(x))?;
    let radii: Vec<f64> = (1..=6).map(|k| 2f64.powi(-k)).collect();
    let derived = beta_exponent(params.exponents())?;
    let rep = check_nondegeneracy(&field, &dom, grid.nearest(&[0.0, 0.0]), &radii, &derived)?;
    let step = 2f64.powf(-c.eps);
    let mut steps_ok = true;
    let mut grows = Vec::new();
    for (i, (r, q)) in rep.radii.iter().zip(&rep.ratios).enumerate() {
        let ratio_step = if i + 1 < rep.ratios.len() { q / rep.ratios[i + 1] } else { f64::NAN };
        if i + 1 < rep.ratios.len() {
            steps_ok &= (ratio_step - step).abs() <= c.step_tol;
        }
        grows.push(vec![f(*r), f(rep.sups[i]), f(*q), f(ratio_step)]);
    }
    w.csv("counterexample_growth.csv", &["r", "sup", "ratio", "step_to_next"], &grows)?;
    Ok(vec![
        (
            "residual".to_string(),
            max_res <= c.residual_tol,
            format!("max |residual| {max_res:e} over {} points", c.points),
        ),
        (
            "ratio_steps".to_string(),
            steps_ok,
            format!("ratios {:?}, expected step 2^-eps = {step:.8}", rep.ratios),
        ),
        (
            "degenerate_verdict".to_string(),
            rep.verdict == NondegeneracyVerdict::Degenerate && !derived.nondegenerate,
            format!("verdict {:?}, decay exponent {:.4}", rep.verdict, rep.decay_exponent),
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        let text = r#"
            seed = 3
            analyses = []
            [grid]
            cells = 16
            [spec]
            exponents = { p = 0.0, q = 0.0, mu = 0.0 }
            ellipticity = { lambda = 1.0, Lambda = 1.0 }
            operator = { kind = "trace" }
            coeff = { a = "0", lambda0 = "4" }
            boundary = { g = "|x|^2" }
            domain = { dim = 2, kind = "box", extent = [-0.5, 0.5, -0.5, 0.5] }
        "#;
        ExperimentConfig::from_toml(text).unwrap()
    }

    #[test]
    fn valid_config_has_no_violations() {
        assert!(validate(&base()).is_empty());
        let back = ExperimentConfig::from_toml(&base().to_toml().unwrap()).unwrap();
        assert_eq!(back, base());
        assert_eq!(back.hash().unwrap(), base().hash().unwrap());
    }

    #[test]
    fn violations_are_named() {
        let mut c = base();
        c.spec.exponents.q = 1.0;
        c.spec.coeff.lambda0 = Coefficient::constant(0.0);
        let errs = validate(&c);
        assert!(errs.iter().any(|e| matches!(e, Error::ExponentRange(_))));
        assert!(errs.iter().any(|e| e.to_string().contains("lambda0 must be positive")));
        assert!(ExperimentConfig::from_toml("seed = 1\n[grid]\ncells = 4\nbogus = 1").is_err());
    }

    #[test]
    fn empty_run_writes_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = base();
        c.out = Some(dir.path().to_path_buf());
        let out = run(&c).unwrap();
        assert!(out.summary.is_none());
        let names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["manifest.json".to_string()]);
    }

    #[test]
    fn counterexample_and_oracle_runs_pass() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = base();
        c.out = Some(dir.path().to_path_buf());
        c.analyses = vec![Analysis::Counterexample, Analysis::OracleResidual, Analysis::Barrier];
        c.params.exact = Some(Coefficient::parse("|x|^2").unwrap());
        c.params.error_tol = Some(1e-6);
        c.solve.tol_residual = 1e-10;
        let out = run(&c).unwrap();
        let s = out.summary.unwrap();
        assert!(s.all_passed, "{s:#?}");
        for name in ["counterexample_residual.csv", "oracle_residual.csv", "barrier.csv", "summary.json", "solution.csv"] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
    }

    #[test]
    fn comparison_draws_are_ordered_and_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (s1, s2) = comparison_draw(&mut rng).unwrap();
            let x = [0.5, 0.1];
            assert!(s2.g(&x) > s1.g(&x));
            assert!(s1.lambda0(&x) >= 0.5);
        }
    }
}
