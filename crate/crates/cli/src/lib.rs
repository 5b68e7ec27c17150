//! Experiment orchestration behind the `mabesov` binary.

pub mod config;
pub mod error;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mabesov_core::approx_id::{build_stack_with, scale_limits, verify_ai_properties};
use mabesov_core::besov::{
    column_norm_check, decompose, duality_pairing_check, equivalence_ensemble, in_band_noise, BesovParams,
    BESOV_CSV_HEADER,
};
use mabesov_core::calderon::{discover_n0, max_band, p_label, reproduction_csv, reproduction_sweep, CalderonOperator};
use mabesov_core::geometry::estimate_constants;
use mabesov_core::ma_sio::{
    besov_bound_experiment, build_canonical_family, build_mean_shifted_family, build_two_bump_family, family_range,
    l2_bound_experiment, pointwise_ao_check, random_signs, verify_d_conditions, MAKernelFamily, BOUNDS_CSV_HEADER,
};
use mabesov_core::{build_grid, AIStack, BumpProfile};

pub use config::ExperimentConfig;
pub use error::CliError;

/// Tolerance for the exact identities and (D3).
pub const EXACT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Constants,
    AiCheck,
    Reproduce,
    Besov,
    Sio,
}

/// Files written by one command.
pub type Written = Vec<PathBuf>;

/// Write `body` plus the trailing hash line through a temporary file in the
/// same directory, then rename it into place.
pub fn write_csv(dir: &Path, name: &str, body: &str, hash: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(body.as_bytes())?;
    writeln!(tmp, "# config_hash={hash}")?;
    tmp.flush()?;
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| CliError::Io(e.error))?;
    Ok(path)
}

fn grid_and_stack(cfg: &ExperimentConfig, profile: BumpProfile) -> Result<AIStack, CliError> {
    let grid = Arc::new(build_grid(&cfg.potential()?, cfg.resolution)?);
    let (lo, hi) = match cfg.scales {
        Some(r) => r,
        None => {
            let (lo, hi) = scale_limits(&grid)?;
            if lo > hi {
                eprintln!("mabesov: warning: resolution {} resolves no scale, using {lo}..={}", cfg.resolution, lo + 1);
                (lo, lo + 1)
            } else {
                (lo, hi)
            }
        }
    };
    Ok(build_stack_with(grid, profile, lo, hi)?)
}

pub fn stack_for(cfg: &ExperimentConfig) -> Result<AIStack, CliError> {
    let mut stack = grid_and_stack(cfg, BumpProfile::default())?;
    if cfg.inject_asymmetry {
        let n = stack.grid().len();
        let k = stack.k_max();
        let i = n / 2;
        let j = stack.s(k).row(i).0.iter().copied().find(|&j| j != i).unwrap_or(i);
        stack.perturb_s_entry(k, i, j, 1e-3);
    }
    Ok(stack)
}

fn resolve_params(spec: &config::ParamSpec, eps: f64, what: &str) -> Result<BesovParams, CliError> {
    let alpha = spec.alpha.resolve(eps);
    let params = BesovParams::new(alpha, spec.p, spec.q)?;
    if alpha.abs() >= eps / 4.0 {
        return Err(CliError::Config(format!(
            "alpha={alpha} is inadmissible: |alpha| must stay below {} for the measured {what}={eps}",
            eps / 4.0
        )));
    }
    Ok(params)
}

pub fn cmd_constants(cfg: &ExperimentConfig) -> Result<Written, CliError> {
    let grid = build_grid(&cfg.potential()?, cfg.resolution)?;
    let c = estimate_constants(&grid, cfg.samples.max(100), cfg.seed)?;
    let mut body = String::from("quantity,value\n");
    let _ = writeln!(body, "a0,{:e}", c.a0);
    let _ = writeln!(body, "theta,{:e}", c.theta);
    let _ = writeln!(body, "doubling,{:e}", c.doubling);
    let _ = writeln!(body, "eps_reg,{:e}", c.eps_reg);
    let _ = writeln!(body, "sample_count,{}", c.sample_count);
    Ok(vec![write_csv(&cfg.output_dir, "constants.csv", &body, &cfg.hash())?])
}

pub fn cmd_ai_check(cfg: &ExperimentConfig) -> Result<Written, CliError> {
    let stack = stack_for(cfg)?;
    let rep = verify_ai_properties(&stack, cfg.samples, cfg.seed);
    let path = write_csv(&cfg.output_dir, "ai_properties.csv", &rep.to_csv(), &cfg.hash())?;
    if !rep.exact_identities_hold(EXACT_TOL) {
        return Err(CliError::Property(format!("exact identities fail beyond {EXACT_TOL}")));
    }
    Ok(vec![path])
}

pub fn cmd_reproduce(cfg: &ExperimentConfig) -> Result<Written, CliError> {
    let stack = stack_for(cfg)?;
    let n_max = cfg.n_max.clamp(1, max_band(&stack).max(1));
    let ops = CalderonOperator::sequence(&stack, n_max)?;
    let f = in_band_noise(&stack, cfg.seed, 0);
    let rows = reproduction_sweep(&ops, &f)?;
    let path = write_csv(&cfg.output_dir, "reproduce.csv", &reproduction_csv(&rows), &cfg.hash())?;
    if discover_n0(&ops).is_none() {
        return Err(CliError::Numerical(format!("R_N is not a contraction for any N <= {n_max}")));
    }
    Ok(vec![path])
}

pub fn cmd_besov(cfg: &ExperimentConfig) -> Result<Written, CliError> {
    let stack = stack_for(cfg)?;
    let eps = stack.eps_fit();
    let params: Vec<BesovParams> =
        cfg.besov_params.iter().map(|s| resolve_params(s, eps, "eps")).collect::<Result<_, _>>()?;
    let hash = cfg.hash();
    let f = in_band_noise(&stack, cfg.seed, 0);

    let mut besov = format!("{BESOV_CSV_HEADER}\n");
    let mut checks = String::from("check,alpha,p,q,value\n");
    for pr in &params {
        besov.push_str(&decompose(&stack, &f, pr)?.csv_rows());
        let col = column_norm_check(&stack, pr, cfg.samples.min(50), cfg.seed)?;
        let dual = duality_pairing_check(&stack, pr, cfg.ensemble, cfg.seed)?;
        let tag = format!("{},{},{}", pr.alpha, p_label(pr.p), p_label(pr.q));
        let _ = writeln!(checks, "column_norm,{tag},{:e}", col.max_ratio);
        let _ = writeln!(checks, "duality,{tag},{:e}", dual.constant);
    }
    let (r1, r2) = cfg.second_profile;
    let other = grid_and_stack_shared(&stack, BumpProfile::new(r1, r2)?)?;
    let eq = equivalence_ensemble(&stack, &other, &params[0], cfg.ensemble, cfg.seed)?;
    let _ = writeln!(checks, "equivalence,{},{},{},{:e}", params[0].alpha, p_label(params[0].p), p_label(params[0].q), eq.constant());

    Ok(vec![
        write_csv(&cfg.output_dir, "besov.csv", &besov, &hash)?,
        write_csv(&cfg.output_dir, "equivalence.csv", &eq.to_csv(), &hash)?,
        write_csv(&cfg.output_dir, "besov_checks.csv", &checks, &hash)?,
    ])
}

fn grid_and_stack_shared(stack: &AIStack, profile: BumpProfile) -> Result<AIStack, CliError> {
    Ok(build_stack_with(stack.grid().clone(), profile, stack.k_min(), stack.k_max())?)
}

pub fn family_for(cfg: &ExperimentConfig, stack: &Arc<AIStack>) -> Result<MAKernelFamily, CliError> {
    let range = cfg.i_range.unwrap_or_else(|| family_range(stack));
    let count = (range.1 - range.0 + 1).max(0) as usize;
    let signs = match cfg.signs {
        config::SignChoice::Random => random_signs(count, cfg.signs_seed),
        config::SignChoice::Plus => vec![1.0; count],
    };
    Ok(match cfg.family {
        config::FamilyChoice::Canonical => build_canonical_family(stack, &signs, range)?,
        config::FamilyChoice::MeanShifted => build_mean_shifted_family(stack, &signs, range)?,
        config::FamilyChoice::TwoBump => {
            let (r1, r2) = cfg.second_profile;
            let other = grid_and_stack_shared(stack, BumpProfile::new(r1, r2)?)?;
            build_two_bump_family(stack, &other, &signs, range)?
        }
    })
}

pub fn cmd_sio(cfg: &ExperimentConfig) -> Result<Written, CliError> {
    let stack = Arc::new(stack_for(cfg)?);
    let family = family_for(cfg, &stack)?;
    let smooth = family.smoothness();
    let params: Vec<BesovParams> = cfg
        .sio_params
        .iter()
        .map(|s| resolve_params(s, smooth, "min(eps, gamma*eps1)"))
        .collect::<Result<_, _>>()?;
    let hash = cfg.hash();

    let rep = verify_d_conditions(&family, cfg.samples, cfg.seed)?;
    let l2 = l2_bound_experiment(&family, cfg.ensemble, cfg.seed)?;
    let mut conditions = rep.to_csv();
    let _ = writeln!(conditions, "l2_ratio,all,{:e},0e0", l2.max_ratio);
    let _ = writeln!(conditions, "op_norm2,all,{:e},0e0", l2.op_norm2);

    let mut bounds = format!("{BOUNDS_CSV_HEADER}\n");
    for pr in &params {
        bounds.push_str(&besov_bound_experiment(&family, &stack, pr, cfg.ensemble, cfg.seed)?.csv_row());
    }
    let mut written = vec![
        write_csv(&cfg.output_dir, "sio_conditions.csv", &conditions, &hash)?,
        write_csv(&cfg.output_dir, "sio_bounds.csv", &bounds, &hash)?,
    ];
    if cfg.sio_pointwise {
        let pw = pointwise_ao_check(&family, &stack, usize::MAX, 6)?;
        written.push(write_csv(&cfg.output_dir, "sio_pointwise.csv", &pw.to_csv(), &hash)?);
    }
    if !rep.all_pass(EXACT_TOL) {
        let failed: Vec<&str> = rep.verdicts(EXACT_TOL).into_iter().filter(|(_, ok)| !ok).map(|(c, _)| c).collect();
        return Err(CliError::Property(format!("conditions {} fail", failed.join(", "))));
    }
    Ok(written)
}

pub fn run(cmd: Command, cfg: &ExperimentConfig) -> Result<Written, CliError> {
    match cmd {
        Command::Constants => cmd_constants(cfg),
        Command::AiCheck => cmd_ai_check(cfg),
        Command::Reproduce => cmd_reproduce(cfg),
        Command::Besov => cmd_besov(cfg),
        Command::Sio => cmd_sio(cfg),
    }
}

/// Cap the global thread pool from `MABESOV_THREADS`.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("MABESOV_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("MABESOV_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}
