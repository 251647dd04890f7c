//! The experiment runners behind `selfsim run` and `selfsim sweep`.
//!
//! Each tag builds its domain objects from a validated configuration, runs
//! the computation, writes its artifacts into the run directory, and records
//! metrics plus pass/fail checks in the manifest.  Nothing here consults a
//! clock or a random source, and every container is either ordered by
//! construction or sorted before writing, so a rerun of the same
//! configuration reproduces every artifact byte for byte.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use anyhow::{bail, Context, Result};
use selfsim_core::classify::{
    classify, fit_correction_matrix, mode_norms, trajectory_difference, write_mode_norms_csv,
    Classification, ClassifyOptions,
};
use selfsim_core::field::FieldState;
use selfsim_core::kernel::{apply_semigroup, mehler_kernel};
use selfsim_core::modes::write_series_csv;
use selfsim_core::physical::{
    difference_bound_report, write_bound_report_csv, BlowupFrame, BoundReportOptions,
};
use selfsim_core::shooting::{
    shoot, sweep, write_history_csv, write_sweep_csv, RecordKind, SearchBox, ShootConfig,
};
use selfsim_core::solver::{
    dilation_shift, generate_reference, load_trajectory, save_trajectory, ReferenceTrajectory,
    Trajectory,
};
use selfsim_core::spectral::{inner_rho, phi_field, phi_norm_sq, rho_1d};
use selfsim_core::MultiIndex;

use crate::config::{RunConfig, Tag, ValidatedConfig};
use crate::manifest::RunManifest;

/// Execute the tagged experiment into `dir` (assumed claimed and created).
pub fn execute_run(config: &RunConfig, v: &ValidatedConfig, dir: &Path) -> Result<RunManifest> {
    let mut manifest = RunManifest::new(config.tag.to_string(), "run", config.sha256());
    write_config_copy(config, dir, &mut manifest)?;
    match config.tag {
        Tag::Reference => run_reference(config, v, dir, &mut manifest)?,
        Tag::Shoot => run_shoot(config, v, dir, &mut manifest)?,
        Tag::Dilation => run_dilation(config, v, dir, &mut manifest)?,
        Tag::Classify => run_classify(config, v, dir, &mut manifest)?,
        Tag::KernelSuite => run_kernel_suite(config, v, dir, &mut manifest)?,
        Tag::Theorem2Report => run_theorem2_report(config, v, dir, &mut manifest)?,
    }
    manifest.save(dir)?;
    Ok(manifest)
}

/// Execute the exit-map lattice (`selfsim sweep`) into `dir`.
pub fn execute_sweep(config: &RunConfig, v: &ValidatedConfig, dir: &Path) -> Result<RunManifest> {
    if config.tag != Tag::Shoot {
        bail!(
            "tag: sweep explores the shooting search box and needs tag = \"shoot\", got \"{}\"",
            config.tag
        );
    }
    let mut manifest = RunManifest::new(config.tag.to_string(), "sweep", config.sha256());
    write_config_copy(config, dir, &mut manifest)?;

    let exp = &config.experiment;
    let reference = build_reference(config, v, exp.horizon + 2.0)?;
    let shoot_config = shoot_config_from(config, v);
    let box_ = SearchBox::standard(v.params.dim());
    let rows = sweep(
        &v.params,
        &reference,
        &v.set,
        &shoot_config,
        &box_,
        exp.sweep_resolution,
    )?;

    let out = artifact(dir, "sweep.csv", &mut manifest)?;
    write_sweep_csv(out, v.params.dim(), &rows)?;

    let survivors = rows.iter().filter(|r| r.survived).count();
    let levels = 1 + v.params.dim() + v.params.dim() * (v.params.dim() + 1) / 2;
    let expected_rows = exp.sweep_resolution.pow(levels as u32);
    manifest.metric("rows", rows.len() as f64);
    manifest.metric("survivors", survivors as f64);
    manifest.check("lattice_complete", rows.len() == expected_rows);
    manifest.save(dir)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

/// Open `name` in `dir` for buffered writing and record it as an artifact.
fn artifact(dir: &Path, name: &str, manifest: &mut RunManifest) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    manifest.artifacts.push(name.to_string());
    Ok(BufWriter::new(file))
}

/// Store the canonical configuration next to the results so the directory is
/// self-describing and re-runnable.
fn write_config_copy(config: &RunConfig, dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    let mut out = artifact(dir, "config.toml", manifest)?;
    out.write_all(config.canonical_toml().as_bytes())?;
    Ok(())
}

fn build_reference(
    config: &RunConfig,
    v: &ValidatedConfig,
    horizon: f64,
) -> Result<ReferenceTrajectory> {
    generate_reference(
        &v.params,
        &v.grid,
        &v.solver,
        config.experiment.s0,
        horizon,
    )
    .context("reference trajectory generation")
}

fn shoot_config_from(config: &RunConfig, v: &ValidatedConfig) -> ShootConfig {
    let exp = &config.experiment;
    ShootConfig {
        s0: exp.s0,
        horizon: exp.horizon,
        post_exit_strides: exp.post_exit_strides,
        solver: v.solver,
        max_level_iters: exp.max_level_iters,
    }
}

/// Build the dilation pair difference `D_λ ŵ − ŵ` used by the dilation,
/// classify, and theorem2 tags.
fn dilation_difference(
    config: &RunConfig,
    v: &ValidatedConfig,
) -> Result<(Trajectory, Trajectory)> {
    let exp = &config.experiment;
    let reference = build_reference(config, v, exp.horizon)?;
    let base = reference.into_trajectory();
    let shifted = dilation_shift(&base, exp.lambda)?;
    Ok((base, shifted))
}

// ---------------------------------------------------------------------------
// tag: reference
// ---------------------------------------------------------------------------

fn run_reference(
    config: &RunConfig,
    v: &ValidatedConfig,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let exp = &config.experiment;
    let reference = build_reference(config, v, exp.horizon)?;

    let mut stages = artifact(dir, "stages.csv", manifest)?;
    writeln!(stages, "start_s,parameter,iterations,reached_s")?;
    for stage in reference.stages() {
        writeln!(
            stages,
            "{},{},{},{}",
            stage.start_s, stage.parameter, stage.iterations, stage.reached_s
        )?;
    }
    drop(stages);

    // center-line excess s·(ŵ(0, s) − κ) against its limit Nκ/(2p)
    let kappa = v.params.kappa();
    let target = v.params.dim() as f64 * kappa / (2.0 * v.params.p());
    let traj = reference.trajectory();
    let center = v.grid.len() / 2;
    let mut excess_end = f64::NAN;
    let mut csv = artifact(dir, "center_excess.csv", manifest)?;
    writeln!(csv, "s,w_center,excess,target")?;
    for frame in traj.frames() {
        let w0 = frame.values[center];
        let excess = frame.s * (w0 - kappa);
        excess_end = excess;
        writeln!(csv, "{},{},{excess},{target}", frame.s, w0)?;
    }
    drop(csv);

    save_trajectory(&dir.join("reference.traj"), traj)?;
    manifest.artifacts.push("reference.traj".to_string());

    let rel_err = (excess_end - target).abs() / target;
    manifest.metric("tuned_d0", reference.tuned_d0());
    manifest.metric("stages", reference.stages().len() as f64);
    manifest.metric("center_excess_end", excess_end);
    manifest.metric("center_excess_target", target);
    manifest.metric("center_excess_rel_err", rel_err);
    manifest.check("center_excess_within_25_percent", rel_err <= 0.25);
    Ok(())
}

// ---------------------------------------------------------------------------
// tag: shoot
// ---------------------------------------------------------------------------

fn run_shoot(
    config: &RunConfig,
    v: &ValidatedConfig,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let exp = &config.experiment;
    let reference = build_reference(
        config,
        v,
        exp.horizon + exp.post_exit_strides as f64 * v.solver.store_stride + 1.0,
    )?;
    let shoot_config = shoot_config_from(config, v);
    let box_ = SearchBox::standard(v.params.dim());
    let report = shoot(
        &v.params,
        &reference,
        &v.set,
        &shoot_config,
        &box_,
        RecordKind::Modes,
    )?;

    let out = artifact(dir, "history.csv", manifest)?;
    write_history_csv(out, v.params.dim(), &report.history)?;
    let out = artifact(dir, "best_modes.csv", manifest)?;
    write_series_csv(out, &report.best.modes, &v.set)?;

    let best = &report.best;
    let worst_margin = best
        .reports
        .iter()
        .map(|r| r.worst().1)
        .fold(0.0f64, f64::max);
    manifest.metric("best_d0", best.point.d0);
    for (i, d) in best.point.d1.iter().enumerate() {
        manifest.metric(&format!("best_d1_{i}"), *d);
    }
    for (i, d) in best.point.d2.iter().enumerate() {
        manifest.metric(&format!("best_d2_{i}"), *d);
    }
    manifest.metric("stop_s", best.outcome.stop_s(&shoot_config));
    manifest.metric("worst_margin", worst_margin);
    manifest.metric("trials", report.history.len() as f64);
    manifest.check("survived", best.outcome.survived());
    manifest.check("margins_within_allowance", worst_margin <= 1.0 + 1e-9);
    for warning in &report.warnings {
        eprintln!("shoot warning: {warning}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// tag: dilation
// ---------------------------------------------------------------------------

fn run_dilation(
    config: &RunConfig,
    v: &ValidatedConfig,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let exp = &config.experiment;
    let (base, shifted) = dilation_difference(config, v)?;
    let diff = trajectory_difference(&shifted, &base)?;
    let series = mode_norms(&diff, &v.cutoff)?;
    let out = artifact(dir, "mode_norms.csv", manifest)?;
    write_mode_norms_csv(out, &series)?;

    let window = (v.fit_window[0], v.fit_window[1]);
    let (fitted, spread) = fit_correction_matrix(&series, window, 1.0)?;
    let expected = v.params.kappa() * exp.lambda.ln() / v.params.p();

    let mut worst_rel = 0.0f64;
    for i in 0..v.params.dim() {
        for j in i..v.params.dim() {
            let value = fitted.get(i, j);
            manifest.metric(&format!("fitted_b_{i}{j}"), value);
            let reference_value = if i == j { expected } else { 0.0 };
            worst_rel = worst_rel.max((value - reference_value).abs() / expected.abs());
        }
    }
    manifest.metric("expected_b", expected);
    manifest.metric("rel_err", worst_rel);
    manifest.metric("spread", spread);
    manifest.check("fitted_b_within_10_percent", worst_rel <= 0.10);
    Ok(())
}

// ---------------------------------------------------------------------------
// tag: classify
// ---------------------------------------------------------------------------

fn run_classify(
    config: &RunConfig,
    v: &ValidatedConfig,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let exp = &config.experiment;
    let diff = match (&exp.trajectory_a, &exp.trajectory_b) {
        (Some(a), Some(b)) => {
            let ta = load_trajectory(a)
                .with_context(|| format!("loading trajectory_a from {}", a.display()))?;
            let tb = load_trajectory(b)
                .with_context(|| format!("loading trajectory_b from {}", b.display()))?;
            trajectory_difference(&ta, &tb)?
        }
        (None, None) => {
            let (base, shifted) = dilation_difference(config, v)?;
            trajectory_difference(&shifted, &base)?
        }
        _ => bail!(
            "experiment.trajectory_a/trajectory_b: classify needs either both \
             trajectories or neither (the dilation pair is built when both are absent)"
        ),
    };

    let series = mode_norms(&diff, &v.cutoff)?;
    let out = artifact(dir, "mode_norms.csv", manifest)?;
    write_mode_norms_csv(out, &series)?;

    let window = (v.fit_window[0], v.fit_window[1]);
    let verdict = classify(&diff, &v.cutoff, window, &ClassifyOptions::default())?;
    let (name, classified) = match &verdict {
        Classification::ExactMatch { residual } => {
            manifest.metric("residual", *residual);
            ("exact-match", true)
        }
        Classification::QuadraticNull {
            correction,
            spread,
            dominance,
        } => {
            for i in 0..v.params.dim() {
                for j in i..v.params.dim() {
                    manifest.metric(&format!("correction_{i}{j}"), correction.get(i, j));
                }
            }
            manifest.metric("spread", *spread);
            manifest.metric("dominance", *dominance);
            ("quadratic-null", true)
        }
        Classification::ExponentialCollapse { rate, residual } => {
            manifest.metric("rate", *rate);
            manifest.metric("residual", *residual);
            ("exponential-collapse", true)
        }
        Classification::Undetermined => ("undetermined", false),
    };
    manifest.verdict = Some(name.to_string());
    manifest.check("classified", classified);
    Ok(())
}

// ---------------------------------------------------------------------------
// tag: kernel-suite
// ---------------------------------------------------------------------------

fn run_kernel_suite(
    _config: &RunConfig,
    v: &ValidatedConfig,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let grid = &v.grid;

    // orthogonality of the eigenbasis, degrees 0..=8, relative to the
    // geometric mean of the exact norms
    let max_degree = 8u32;
    let fields: Vec<Vec<f64>> = (0..=max_degree)
        .map(|k| {
            let beta = MultiIndex::new(vec![k])?;
            phi_field(grid, &beta)
        })
        .collect::<Result<_, _>>()?;
    let norms_sq: Vec<f64> = (0..=max_degree)
        .map(|k| phi_norm_sq(&MultiIndex::new(vec![k]).expect("1-D index")))
        .collect();

    let mut gram = artifact(dir, "gram.csv", manifest)?;
    writeln!(gram, "k,n,inner,expected,rel_err")?;
    let mut worst_gram = 0.0f64;
    for k in 0..=max_degree as usize {
        for n in 0..=max_degree as usize {
            let ip = inner_rho(grid, &fields[k], &fields[n]);
            let expected = if k == n { norms_sq[k] } else { 0.0 };
            let rel = (ip - expected).abs() / (norms_sq[k] * norms_sq[n]).sqrt();
            worst_gram = worst_gram.max(rel);
            writeln!(gram, "{k},{n},{ip},{expected},{rel}")?;
        }
    }
    drop(gram);

    // semigroup eigenrelation e^{tL} φ_k = e^{(1−k/2)t} φ_k
    let mut eigen = artifact(dir, "eigenrelation.csv", manifest)?;
    writeln!(eigen, "k,t,rel_err")?;
    let mut worst_eigen = 0.0f64;
    for k in 0..=4u32 {
        let values = &fields[k as usize];
        let phi = FieldState::new(grid.clone(), values.clone(), 1.0)?;
        let norm = norms_sq[k as usize].sqrt();
        for t in [0.25, 1.0] {
            let out = apply_semigroup(t, &phi)?;
            let factor = ((1.0 - k as f64 / 2.0) * t).exp();
            let diff: Vec<f64> = out
                .values()
                .iter()
                .zip(values)
                .map(|(&o, &f)| o - factor * f)
                .collect();
            let err = inner_rho(grid, &diff, &diff).sqrt() / (factor * norm);
            worst_eigen = worst_eigen.max(err);
            writeln!(eigen, "{k},{t},{err}")?;
        }
    }
    drop(eigen);

    // detailed balance ρ(y) K_t(y, x) = ρ(x) K_t(x, y) on a fixed lattice
    let mut worst_balance = 0.0f64;
    for i in 0..10 {
        let t = 0.1 + 0.1 * i as f64;
        for j in 0..10 {
            let y = -9.0 + 2.0 * j as f64;
            for l in 0..10 {
                let x = -8.5 + 1.9 * l as f64;
                let forward = rho_1d(y) * mehler_kernel(t, &[y], &[x])?;
                let backward = rho_1d(x) * mehler_kernel(t, &[x], &[y])?;
                let scale = forward.abs().max(backward.abs()).max(1e-300);
                worst_balance = worst_balance.max((forward - backward).abs() / scale);
            }
        }
    }

    manifest.metric("orthogonality_worst_rel", worst_gram);
    manifest.metric("eigenrelation_worst_rel", worst_eigen);
    manifest.metric("detailed_balance_worst_rel", worst_balance);
    manifest.check("orthogonality", worst_gram < 1e-8);
    manifest.check("eigenrelation", worst_eigen < 1e-6);
    manifest.check("detailed_balance", worst_balance < 1e-12);
    Ok(())
}

// ---------------------------------------------------------------------------
// tag: theorem2-report
// ---------------------------------------------------------------------------

fn run_theorem2_report(
    config: &RunConfig,
    v: &ValidatedConfig,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let exp = &config.experiment;
    let (base, shifted) = dilation_difference(config, v)?;
    // the physical frame is pinned by T = 1; the trajectories' s-window maps
    // to t = 1 − e^{−s} just below blow-up
    let frame = BlowupFrame::at_origin(1.0, v.params.dim())?;
    let options = BoundReportOptions {
        k_const: v.cutoff.scale(),
        epsilon0: exp.epsilon0,
    };
    let report = difference_bound_report(&shifted, &base, &frame, &options)?;

    let out = artifact(dir, "bound_report.csv", manifest)?;
    write_bound_report_csv(out, &report)?;

    let finite = report.inner_prefactor.is_finite()
        && report.intermediate_prefactor.is_finite()
        && report.combined_prefactor.is_finite();
    manifest.metric("rows", report.rows.len() as f64);
    manifest.metric("inner_prefactor", report.inner_prefactor);
    manifest.metric("intermediate_prefactor", report.intermediate_prefactor);
    manifest.metric("combined_prefactor", report.combined_prefactor);
    manifest.check("bands_sampled", !report.rows.is_empty());
    manifest.check("prefactors_finite", finite);
    Ok(())
}
