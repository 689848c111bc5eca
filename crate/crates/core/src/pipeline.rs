//! Config-driven runs: build, check, solve, price, decompose or recover a
//! habit, then write the artifacts and a manifest in a fixed order.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::conditions::{
    check_eventual_strong_positivity, check_irreducibility_markov, check_kernel_positivity_ab, check_no_arbitrage_sufficient,
    check_positivity, check_power_compactness, check_yield_nondegeneracy, detect_degenerate_transition, CompactnessOptions,
    ConditionReport,
};
use crate::config::{CheckKind, Format, RunConfig};
use crate::error::{Error, Result};
use crate::habit::{build_habit_operator, recover_habit_with};
use crate::io::{csv_bytes, read_columns};
use crate::operator::{build_pricing_operator_seeded, DiscreteOperator, SdfSpec};
use crate::pricing::{decompose, decompose_along_path, fit_log_slope, long_run_limit_check, payoff_battery, yield_curve};
use crate::rng::stream;
use crate::spectral::{dominant_eigenpair, verify_theorem_conclusions_with, Eigenpair, OracleConfig};
use crate::statemodels::{simulate_path_on_stream, stationary_grid_truncated, Grid, StateModel};

pub const MANIFEST: &str = "manifest.txt";
pub const PLOTDATA_DIR: &str = "plotdata";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Check,
    Solve,
    Price,
    Decompose,
    Habit,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Check => "check",
            Stage::Solve => "solve",
            Stage::Price => "price",
            Stage::Decompose => "decompose",
            Stage::Habit => "habit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    RuntimeError,
    ConfigError,
    CheckFailed,
    NoConvergence,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::RuntimeError => 1,
            ExitStatus::ConfigError => 2,
            ExitStatus::CheckFailed => 3,
            ExitStatus::NoConvergence => 4,
        }
    }

    fn of_error(e: &Error) -> Self {
        match e {
            Error::Config(_) => ExitStatus::ConfigError,
            Error::NoConvergence(_) | Error::NonPositiveIterate { .. } => ExitStatus::NoConvergence,
            Error::UniquenessFailed(_) => ExitStatus::CheckFailed,
            _ => ExitStatus::RuntimeError,
        }
    }
}

/// Command-line overrides of the config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub dense_limit: Option<usize>,
    /// Stop after the checks when any requested check does not pass.
    pub strict: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub status: ExitStatus,
    pub out_dir: PathBuf,
    /// Written files in order, manifest last.
    pub artifacts: Vec<PathBuf>,
    pub error: Option<String>,
    pub rho: Option<f64>,
}

/// Artifacts held in memory until the run ends.
struct Artifacts {
    formats: Vec<Format>,
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn json(&mut self, name: &str, v: &Value) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(v)?;
        text.push(b'\n');
        self.files.push((name.into(), text));
        Ok(())
    }

    fn table(&mut self, stem: &str, header: &[String], columns: &[&[f64]]) -> Result<()> {
        self.files.push((format!("{stem}.csv"), csv_bytes(header, columns)?));
        if self.formats.contains(&Format::Json) {
            let rows: Vec<Vec<f64>> = (0..columns.first().map_or(0, |c| c.len())).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
            self.json(&format!("{stem}.json"), &json!({"header": header, "rows": rows}))?;
        }
        Ok(())
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    oracle: OracleConfig,
    model: StateModel,
    sdf: SdfSpec,
    grid: Grid,
    op: DiscreteOperator,
}

struct Partial {
    status: ExitStatus,
    rho: Option<f64>,
    compare: Vec<String>,
}

/// Runs `stage` and writes artifacts into the output directory. Never panics
/// on bad input; failures are reported through the exit status.
pub fn run(cfg: &RunConfig, stage: Stage, opts: &RunOptions) -> RunOutcome {
    let out_dir = opts.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let mut arts = Artifacts { formats: cfg.output.formats.clone(), files: Vec::new() };
    let (partial, error) = match execute(cfg, stage, opts, &mut arts) {
        Ok(p) => (p, None),
        Err(e) => (Partial { status: ExitStatus::of_error(&e), rho: None, compare: Vec::new() }, Some(e.to_string())),
    };
    if let Some(e) = &error {
        tracing::error!("{e}");
    }
    let mut outcome = RunOutcome { status: partial.status, out_dir: out_dir.clone(), artifacts: Vec::new(), error, rho: partial.rho };
    if let Err(e) = write_all(cfg, stage, opts, &out_dir, &arts, &partial, &mut outcome) {
        tracing::error!("writing artifacts: {e}");
        outcome.status = ExitStatus::RuntimeError;
        outcome.error = Some(e.to_string());
    }
    outcome
}

fn setup<'a>(cfg: &'a RunConfig, stage: Stage, opts: &RunOptions) -> Result<Ctx<'a>> {
    let config_err = |e: Error| match e {
        Error::InvalidModel(m) | Error::NonStationaryModel(m) => Error::Config(m),
        other => other,
    };
    let model = cfg.model.build().map_err(config_err)?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let oracle = OracleConfig { dense_limit: opts.dense_limit.unwrap_or(cfg.solver.dense_limit), adjoint: cfg.solver.adjoint_census };
    let grid = stationary_grid_truncated(&model, cfg.grid.points, cfg.grid.truncation)?;
    let (sdf, op) = match (stage, &cfg.sdf, &cfg.habit) {
        (Stage::Habit, _, Some(h)) => {
            let hm = h.build(&model).map_err(config_err)?;
            let op = build_habit_operator(&hm, &grid)?;
            (hm.sdf(), op)
        }
        (Stage::Habit, _, None) => return Err(Error::Config("habit needs a [habit] section".into())),
        (_, Some(s), _) => {
            let sdf = s.build(&model)?;
            let op = build_pricing_operator_seeded(&model, &sdf, &grid, cfg.solver.mc_draws, seed)?;
            (sdf, op)
        }
        (_, None, _) => return Err(Error::Config(format!("{} needs an [sdf] section", stage.name()))),
    };
    Ok(Ctx { cfg, seed, oracle, model, sdf, grid, op })
}

fn execute(cfg: &RunConfig, stage: Stage, opts: &RunOptions, arts: &mut Artifacts) -> Result<Partial> {
    let ctx = setup(cfg, stage, opts)?;
    let reports = run_checks(&ctx)?;
    let checks_ok = reports.iter().all(ConditionReport::passed);
    arts.json("conditions.json", &serde_json::to_value(&reports)?)?;
    arts.json(
        "operator.json",
        &json!({
            "label": ctx.op.label(),
            "size": ctx.op.len(),
            "dim": ctx.grid.dim(),
            "meta": ctx.op.meta(),
        }),
    )?;
    let check_status = if checks_ok { ExitStatus::Success } else { ExitStatus::CheckFailed };
    let mut partial = Partial { status: check_status, rho: None, compare: Vec::new() };
    if stage == Stage::Check || (opts.strict && !checks_ok) {
        return Ok(partial);
    }
    if stage == Stage::Habit {
        return habit_stage(&ctx, arts, partial);
    }

    let pair = dominant_eigenpair(&ctx.op, cfg.solver.tol, cfg.solver.max_iter)?;
    partial.rho = Some(pair.rho);
    if let Some(reference) = cfg.compare.as_ref().and_then(|c| c.rho) {
        partial.compare.push(compare_line("rho", pair.rho, reference));
    }
    write_eigenpair(&ctx, &pair, arts)?;
    arts.json("spectrum.json", &spectrum_json(&ctx, &pair)?)?;
    if stage == Stage::Solve {
        return Ok(partial);
    }

    let yc = yield_curve(&ctx.op, cfg.output.yield_horizons)?;
    let horizons: Vec<f64> = yc.horizons.iter().map(|h| *h as f64).collect();
    let mut header = vec!["horizon".to_string()];
    header.extend((0..ctx.op.len()).map(|i| format!("pt{i}")));
    let transpose = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> { (0..ctx.op.len()).map(|i| rows.iter().map(|r| r[i]).collect()).collect() };
    let (ycols, pcols) = (transpose(&yc.yields), transpose(&yc.prices));
    let mut cols: Vec<&[f64]> = vec![&horizons];
    cols.extend(ycols.iter().map(Vec::as_slice));
    arts.table("yield_curve", &header, &cols)?;
    let mut cols: Vec<&[f64]> = vec![&horizons];
    cols.extend(pcols.iter().map(Vec::as_slice));
    arts.table("bond_prices", &header, &cols)?;

    let battery = payoff_battery(&ctx.grid);
    let n_lr = cfg.output.long_run_horizons;
    let ns: Vec<f64> = (1..=n_lr).map(|n| n as f64).collect();
    let mut lr_header = vec!["n".to_string()];
    let mut lr_cols = Vec::new();
    let mut fits = serde_json::Map::new();
    for (name, psi) in &battery {
        let e = long_run_limit_check(&ctx.op, &pair, psi, n_lr)?;
        fits.insert(name.clone(), serde_json::to_value(fit_log_slope(&e, 1e-11))?);
        lr_header.push(name.clone());
        lr_cols.push(e);
    }
    let mut cols: Vec<&[f64]> = vec![&ns];
    cols.extend(lr_cols.iter().map(Vec::as_slice));
    arts.table("long_run", &lr_header, &cols)?;
    arts.json("long_run_fit.json", &json!({"log_gap_estimate": pair.gap.ln(), "fits": fits}))?;
    if stage == Stage::Price {
        return Ok(partial);
    }

    let d = decompose(&ctx.op, &pair)?;
    let mut header: Vec<String> = (0..ctx.grid.dim()).map(|k| format!("x{k}")).collect();
    header.extend(["weight", "phi", "phi_star", "pi_tilde"].map(String::from));
    let coords: Vec<Vec<f64>> = (0..ctx.grid.dim()).map(|k| ctx.grid.coordinate(k)).collect();
    let mut cols: Vec<&[f64]> = coords.iter().map(Vec::as_slice).collect();
    cols.extend([ctx.grid.weights(), &pair.phi, &pair.phi_star, &d.pi_tilde]);
    arts.table("decomposition", &header, &cols)?;
    let path = simulate_path_on_stream(&ctx.model, ctx.seed, stream::DECOMPOSITION_PATH, cfg.output.path_length)?;
    let pd = decompose_along_path(&ctx.sdf, &ctx.model, &ctx.op, &pair, &path)?;
    let t: Vec<f64> = (0..pd.sdf.len()).map(|t| t as f64).collect();
    let header = ["t", "sdf", "transitory", "permanent"].map(String::from);
    arts.table("path_decomposition", &header, &[&t, &pd.sdf, &pd.transitory, &pd.permanent])?;
    let constants: Vec<Value> = d.long_run_constants.iter().map(|c| json!({"payoff": c.name, "constant": c.constant})).collect();
    arts.json(
        "decomposition.json",
        &json!({
            "rho": pair.rho,
            "max_row_sum_error": d.max_row_sum_error,
            "long_run_constants": constants,
            "path": {
                "length": pd.sdf.len(),
                "max_product_error": pd.max_product_error,
                "permanent_mean": pd.permanent_mean,
                "permanent_sd": pd.permanent_sd,
                "band": pd.band(),
            },
        }),
    )?;
    Ok(partial)
}

fn habit_stage(ctx: &Ctx, arts: &mut Artifacts, mut partial: Partial) -> Result<Partial> {
    let sol = match recover_habit_with(&ctx.op, &ctx.oracle) {
        Ok(s) => s,
        Err(Error::UniquenessFailed(k)) => {
            arts.json("habit.json", &json!({"uniqueness": "Fail", "positive_eigenvector_count": k}))?;
            partial.status = ExitStatus::CheckFailed;
            return Ok(partial);
        }
        Err(e) => return Err(e),
    };
    partial.rho = Some(1.0 / sol.beta);
    if let Some(reference) = ctx.cfg.compare.as_ref().and_then(|c| c.beta) {
        partial.compare.push(compare_line("beta", sol.beta, reference));
    }
    let mut header: Vec<String> = (0..ctx.grid.dim()).map(|k| format!("x{k}")).collect();
    header.push("h".into());
    let coords: Vec<Vec<f64>> = (0..ctx.grid.dim()).map(|k| ctx.grid.coordinate(k)).collect();
    let mut cols: Vec<&[f64]> = coords.iter().map(Vec::as_slice).collect();
    cols.push(&sol.h);
    arts.table("habit", &header, &cols)?;
    arts.json(
        "habit.json",
        &json!({
            "beta": sol.beta,
            "residual": sol.residual,
            "uniqueness": "Pass",
            "certificate": sol.uniqueness_certificate,
        }),
    )?;
    Ok(partial)
}

fn run_checks(ctx: &Ctx) -> Result<Vec<ConditionReport>> {
    let c = &ctx.cfg.checks;
    let mut out = Vec::with_capacity(c.run.len());
    for kind in &c.run {
        out.push(match kind {
            CheckKind::Positivity => check_positivity(&ctx.op),
            CheckKind::EventualStrongPositivity => check_eventual_strong_positivity(&ctx.op, c.esp_n_max),
            CheckKind::Irreducibility => check_irreducibility_markov(&ctx.model, &ctx.grid, c.irreducibility_n_max)?,
            CheckKind::NoArbitrage => {
                check_no_arbitrage_sufficient(&ctx.sdf, &ctx.model, c.no_arbitrage_horizon, c.no_arbitrage_samples, ctx.seed)?
            }
            CheckKind::PowerCompactness => {
                check_power_compactness(&ctx.model, &ctx.sdf, &ctx.grid, c.compactness_horizon, &CompactnessOptions::default())?
            }
            CheckKind::YieldNondegeneracy => check_yield_nondegeneracy(&ctx.op, c.yield_n_max)?,
            CheckKind::DegenerateTransition => detect_degenerate_transition(&ctx.model)?,
            CheckKind::KernelPositivityAb => check_kernel_positivity_ab(&ctx.model, &ctx.sdf, &ctx.op)?,
        });
    }
    Ok(out)
}

fn write_eigenpair(ctx: &Ctx, pair: &Eigenpair, arts: &mut Artifacts) -> Result<()> {
    let mut header: Vec<String> = (0..ctx.grid.dim()).map(|k| format!("x{k}")).collect();
    header.extend(["weight", "phi", "phi_star"].map(String::from));
    let coords: Vec<Vec<f64>> = (0..ctx.grid.dim()).map(|k| ctx.grid.coordinate(k)).collect();
    let mut cols: Vec<&[f64]> = coords.iter().map(Vec::as_slice).collect();
    cols.extend([ctx.grid.weights(), &pair.phi, &pair.phi_star]);
    arts.table("eigenpair", &header, &cols)
}

fn spectrum_json(ctx: &Ctx, pair: &Eigenpair) -> Result<Value> {
    let summary = json!({
        "rho": pair.rho,
        "gap": pair.gap,
        "residual": pair.residual,
        "iterations": pair.iterations,
    });
    if ctx.op.len() > ctx.oracle.dense_limit {
        return Ok(json!({"eigenpair": summary, "oracle": Value::Null, "note": "operator exceeds the dense limit"}));
    }
    let (oracle, assertions) = match verify_theorem_conclusions_with(&ctx.op, pair, &ctx.oracle) {
        Ok(r) => (r.spectrum, r.assertions),
        Err(Error::ConclusionViolated(r)) => (r.spectrum, r.assertions),
        Err(e) => return Err(e),
    };
    Ok(json!({"eigenpair": summary, "oracle": oracle, "assertions": assertions}))
}

fn compare_line(name: &str, computed: f64, reference: f64) -> String {
    let rel = (computed - reference).abs() / reference.abs().max(f64::MIN_POSITIVE);
    format!("compare {name} computed={computed:e} reference={reference:e} rel_error={rel:e}")
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_all(
    cfg: &RunConfig,
    stage: Stage,
    opts: &RunOptions,
    dir: &Path,
    arts: &Artifacts,
    partial: &Partial,
    outcome: &mut RunOutcome,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    manifest.push_str(&format!("eigenprice {}\n", env!("CARGO_PKG_VERSION")));
    manifest.push_str(&format!("subcommand {}\n", stage.name()));
    let mut effective = cfg.clone();
    effective.seed = opts.seed.unwrap_or(cfg.seed);
    manifest.push_str(&format!("config_sha256 {}\n", sha256_hex(effective.canonical_json()?.as_bytes())));
    manifest.push_str(&format!("seed {}\n", effective.seed));
    manifest.push_str(&format!("exit_code {}\n", outcome.status.code()));
    if let Some(e) = &outcome.error {
        manifest.push_str(&format!("error {}\n", e.replace('\n', " ")));
    }
    for line in &partial.compare {
        manifest.push_str(line);
        manifest.push('\n');
    }
    for (name, bytes) in &arts.files {
        let p = dir.join(name);
        std::fs::write(&p, bytes)?;
        manifest.push_str(&format!("artifact {} {name}\n", sha256_hex(bytes)));
        outcome.artifacts.push(p);
    }
    let p = dir.join(MANIFEST);
    std::fs::write(&p, manifest)?;
    outcome.artifacts.push(p);
    Ok(())
}

/// Re-emits existing artifacts in `dir` as two-column `(x, y)` CSVs under
/// `dir/plotdata`. Only top-level artifacts are read, so reruns are idempotent.
pub fn plotdata(dir: &Path) -> Result<Vec<PathBuf>> {
    let out = dir.join(PLOTDATA_DIR);
    std::fs::create_dir_all(&out)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, x: &[f64], y: &[f64]| -> Result<()> {
        let p = out.join(name);
        std::fs::write(&p, csv_bytes(&["x", "y"], &[x, y])?)?;
        written.push(p);
        Ok(())
    };
    let weights = match read_columns(&dir.join("eigenpair.csv")) {
        Ok((h, c)) => {
            let get = |n: &str| h.iter().position(|v| v == n).map(|i| c[i].clone());
            if let (Some(x), Some(phi), Some(star)) = (get("x0"), get("phi"), get("phi_star")) {
                emit("phi.csv", &x, &phi)?;
                emit("phi_star.csv", &x, &star)?;
            }
            get("weight")
        }
        Err(_) => None,
    };
    if let Ok((_, c)) = read_columns(&dir.join("yield_curve.csv")) {
        let n_pts = c.len() - 1;
        let w = weights.filter(|w| w.len() == n_pts).unwrap_or_else(|| vec![1.0 / n_pts as f64; n_pts]);
        let mean: Vec<f64> = (0..c[0].len()).map(|r| (0..n_pts).map(|i| w[i] * c[i + 1][r]).sum()).collect();
        emit("yield_curve_mean.csv", &c[0], &mean)?;
    }
    if let Ok((h, c)) = read_columns(&dir.join("long_run.csv")) {
        for (name, col) in h.iter().zip(&c).skip(1) {
            emit(&format!("long_run_{name}.csv"), &c[0], col)?;
        }
    }
    if let Ok((h, c)) = read_columns(&dir.join("habit.csv")) {
        if let Some(i) = h.iter().position(|v| v == "h") {
            emit("habit_h.csv", &c[0], &c[i])?;
        }
    }
    Ok(written)
}
