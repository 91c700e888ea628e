//! `gradcheck`, `conjbench` and `calibcheck`.

use std::path::Path;
use std::time::{Duration, Instant};

use efy_core::calibration::{calibration_check, hamming_decomposition, LabelDistribution};
use efy_core::conjugate::conjugate_iterative;
use efy_core::instances::EnergyFamily;
use efy_core::losses::{evaluate, loss_grad_finite_difference, loss_value};
use efy_core::numerics::{default_step, relative_error, seeded_rng, symmetrize};
use efy_core::training::sample_gradient;
use efy_core::{
    conjugate, ConjugateResult, Energy, EnergyInput, Error, Matrix, Method, Model, ModelSpec, OutputSet, Regularizer,
    Rng, SolveStatus, Task, TrainConfig, Vector,
};
use rand::Rng as _;

use crate::config::{
    ensure_dir, load, CalibcheckConfig, ConjbenchConfig, DistributionSpec, Document, GradcheckConfig, Loaded,
};
use crate::failure::Failure;

const CLOSED_FORM_THRESHOLD: f64 = 1e-5;
const ITERATIVE_THRESHOLD: f64 = 1e-4;

fn method_name(m: Method) -> &'static str {
    match m {
        Method::ClosedForm => "closed_form",
        Method::CoordinateAscent => "coordinate_ascent",
        Method::ProjectedGradient => "projected_gradient",
        Method::FaceEnumeration => "face_enumeration",
    }
}

fn status_name(s: &SolveStatus) -> &'static str {
    match s {
        SolveStatus::ClosedForm => "closed_form",
        SolveStatus::Converged { .. } => "converged",
        SolveStatus::MaxIters { .. } => "max_iters",
        SolveStatus::LocalOnly { .. } => "local_only",
        SolveStatus::Stalled { .. } => "stalled",
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn regularizer(kind: efy_core::RegularizerKind, k: usize) -> Result<Regularizer, Failure> {
    Regularizer::with_default_domain(kind, k).map_err(|e| Failure::Config(format!("regularizer: {e}")))
}

/// A target in the output set: a vertex of a box, a corner of the simplex,
/// or a Gaussian point of `ℝ^k`.
fn random_target(set: &OutputSet, rng: &mut Rng) -> Vector {
    let k = set.dim();
    match set {
        OutputSet::Box { lower, upper } => {
            Vector::from_fn(k, |j, _| if rng.gen_bool(0.5) { upper[j] } else { lower[j] })
        }
        OutputSet::Simplex { .. } => {
            let j = rng.gen_range(0..k);
            Vector::from_fn(k, |i, _| (i == j) as u8 as f64)
        }
        OutputSet::Reals { .. } => Vector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0)),
    }
}

struct GradRow {
    method: &'static str,
    status: &'static str,
    rel_err: f64,
}

fn grad_row(conj: Option<&ConjugateResult>, rel_err: f64) -> GradRow {
    match conj {
        Some(c) => GradRow { method: method_name(c.method), status: status_name(&c.status), rel_err },
        None => GradRow { method: "none", status: "closed_form", rel_err },
    }
}

fn energy_gradcheck(cfg: &GradcheckConfig, family: EnergyFamily, seed: u64) -> Result<Vec<GradRow>, Failure> {
    let reg = regularizer(cfg.regularizer, family.output_dim(cfg.k))?;
    let mut rng = seeded_rng(seed);
    let mut rows = Vec::with_capacity(cfg.instances);
    for _ in 0..cfg.instances {
        let (energy, v) = family.instance(cfg.k, cfg.d, &mut rng)?;
        let y = random_target(reg.domain(), &mut rng);
        let l = evaluate(cfg.loss, &energy, &reg, &v, &y, &cfg.solver)?;
        let numeric = loss_grad_finite_difference(cfg.loss, &energy, &reg, &v, &y, &cfg.solver)?;
        rows.push(grad_row(l.conjugate.as_ref(), relative_error(&l.grad_v.to_flat(), &numeric.to_flat())));
    }
    Ok(rows)
}

fn model_gradcheck(cfg: &GradcheckConfig, arch: efy_core::Architecture, seed: u64) -> Result<Vec<GradRow>, Failure> {
    let spec = ModelSpec::new(arch, cfg.d, cfg.k);
    let task = Task { spec: spec.clone(), reg: regularizer(cfg.regularizer, cfg.k)?, loss: cfg.loss };
    task.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let train_cfg = TrainConfig { solver: cfg.solver, ..TrainConfig::default() };
    let mut rng = seeded_rng(seed);
    let mut rows = Vec::with_capacity(cfg.instances);
    for i in 0..cfg.instances {
        let model = Model::init(spec.clone(), seed.wrapping_add(i as u64))?;
        let x = Vector::from_fn(cfg.d, |_, _| rng.gen_range(-1.5..1.5));
        let y = random_target(task.reg.domain(), &mut rng);
        let (_, analytic) = sample_gradient(&model, &task, &x, &y, &train_cfg)?;
        let loss_at = |m: &Model| -> Result<f64, Failure> {
            Ok(loss_value(task.loss, &m.energy(), &task.reg, &m.forward(&x)?, &y, &cfg.solver)?)
        };
        let mut numeric = vec![0.0; model.theta.len()];
        let mut probe = model.clone();
        for (j, slot) in numeric.iter_mut().enumerate() {
            let t = model.theta[j];
            let h = default_step(t);
            probe.theta[j] = t + h;
            let plus = loss_at(&probe)?;
            probe.theta[j] = t - h;
            let minus = loss_at(&probe)?;
            probe.theta[j] = t;
            *slot = (plus - minus) / (2.0 * h);
        }
        let conj = match task.loss {
            efy_core::LossKind::Energy => None,
            loss => Some(conjugate(
                &model.energy(),
                &loss.inference_regularizer(&task.reg),
                &model.forward(&x)?,
                &cfg.solver,
            )?),
        };
        rows.push(grad_row(conj.as_ref(), relative_error(&analytic, &numeric)));
    }
    Ok(rows)
}

pub fn cmd_gradcheck(config: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let run: Loaded<GradcheckConfig> = load(config, Document::Gradcheck)?;
    let cfg = &run.config;
    let (target, rows) = match (cfg.energy, cfg.architecture) {
        (Some(family), None) => (format!("energy={}", family_name(family)), energy_gradcheck(cfg, family, run.seed)?),
        (None, Some(arch)) => (format!("architecture={}", arch.name()), model_gradcheck(cfg, arch, run.seed)?),
        _ => return Err(Failure::Config("exactly one of energy and architecture must be set".into())),
    };
    let closed = rows.iter().filter(|r| r.status == "closed_form").count();
    let threshold =
        cfg.threshold.unwrap_or(if closed == rows.len() { CLOSED_FORM_THRESHOLD } else { ITERATIVE_THRESHOLD });
    let max_err = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);

    let out_dir = out.map(Path::to_path_buf).or_else(|| cfg.output_dir.as_ref().map(|p| run.resolve(p)));
    if let Some(dir) = out_dir {
        ensure_dir(&dir)?;
        let mut w = run.provenance("gradcheck").csv(&dir.join("gradcheck.csv"))?;
        w.write_record(["instance", "method", "status", "rel_err"])?;
        for (i, r) in rows.iter().enumerate() {
            w.write_record([i.to_string(), r.method.into(), r.status.into(), r.rel_err.to_string()])?;
        }
        w.flush()?;
    }

    let passed = max_err <= threshold;
    println!(
        "gradcheck {target} loss={} instances={} closed_form={closed} iterative={} max_rel_err={max_err:.3e} threshold={threshold:.1e} {}",
        cfg.loss.name(),
        rows.len(),
        rows.len() - closed,
        if passed { "PASS" } else { "FAIL" }
    );
    if passed {
        Ok(())
    } else {
        Err(Failure::Check(format!("max relative error {max_err:.3e} exceeds {threshold:.1e}")))
    }
}

fn family_name(f: EnergyFamily) -> String {
    serde_json::to_value(f).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

/// Relative slack for comparing the dispatched solve against projected gradient ascent.
const AGREEMENT_TOLERANCE: f64 = 1e-6;
const IDENTITY_TOLERANCE: f64 = 1e-9;

pub fn cmd_conjbench(config: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let run: Loaded<ConjbenchConfig> = load(config, Document::Conjbench)?;
    let cfg = &run.config;
    let reg = regularizer(cfg.regularizer, cfg.energy.output_dim(cfg.k))?;
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| run.resolve(&cfg.output_dir));
    ensure_dir(&out_dir)?;
    let mut w = run.provenance("conjbench").csv(&out_dir.join("conjbench.csv"))?;
    w.write_record(["instance", "solver", "method", "status", "iters", "gap", "value", "argmax", "grad_norm"])?;

    let mut rng = seeded_rng(run.seed);
    let (mut fast_time, mut slow_time) = (Duration::ZERO, Duration::ZERO);
    let mut slow_count = 0usize;
    let mut violations = Vec::new();
    let mut first: Option<ConjugateResult> = None;
    for i in 0..cfg.instances {
        let (energy, v) = cfg.energy.instance(cfg.k, cfg.d, &mut rng)?;
        let t = Instant::now();
        let fast = conjugate(&energy, &reg, &v, &cfg.solver)?;
        fast_time += t.elapsed();
        let t = Instant::now();
        let slow = match conjugate_iterative(&energy, &reg, &v, &cfg.solver) {
            Ok(r) => {
                slow_time += t.elapsed();
                slow_count += 1;
                Some(r)
            }
            Err(Error::Unsupported(_)) => None,
            Err(e) => return Err(e.into()),
        };

        if !reg.domain().contains(&fast.argmax, IDENTITY_TOLERANCE) {
            violations.push(format!("instance {i}: argmax outside the output set"));
        }
        let direct = energy.value(&v, &fast.argmax)? - reg.value(&fast.argmax);
        if (fast.value - direct).abs() > IDENTITY_TOLERANCE * (1.0 + direct.abs()) {
            violations.push(format!("instance {i}: value {} differs from objective at argmax {direct}", fast.value));
        }
        if let Some(s) = &slow {
            if s.value > fast.value + AGREEMENT_TOLERANCE * (1.0 + fast.value.abs()) {
                violations.push(format!(
                    "instance {i}: projected gradient found {} above dispatched {}",
                    s.value, fast.value
                ));
            }
        }
        for (name, r) in std::iter::once(("dispatch", &fast)).chain(slow.as_ref().map(|s| ("projected_gradient", s))) {
            w.write_record([
                i.to_string(),
                name.into(),
                method_name(r.method).into(),
                status_name(&r.status).into(),
                r.status.iters().to_string(),
                r.status.gap().to_string(),
                r.value.to_string(),
                join(r.argmax.as_slice()),
                r.envelope_grad.norm().to_string(),
            ])?;
        }
        first.get_or_insert(fast);
    }
    w.flush()?;

    if let Some(r) = &first {
        println!(
            "instance 0: value {} argmax [{}] gradient [{}] via {} ({}, {} iters)",
            r.value,
            join(r.argmax.as_slice()),
            join(&r.envelope_grad.to_flat()),
            method_name(r.method),
            status_name(&r.status),
            r.status.iters()
        );
    }
    let mean_us = |d: Duration, n: usize| if n == 0 { 0.0 } else { d.as_secs_f64() * 1e6 / n as f64 };
    println!(
        "timing: dispatch {:.2} µs/solve over {}, projected gradient {:.2} µs/solve over {}",
        mean_us(fast_time, cfg.instances),
        cfg.instances,
        mean_us(slow_time, slow_count),
        slow_count
    );
    if violations.is_empty() {
        println!("conjbench: {} instances, all checks PASS", cfg.instances);
        Ok(())
    } else {
        for v in &violations {
            eprintln!("{v}");
        }
        Err(Failure::Check(format!("{} invariant violations", violations.len())))
    }
}

/// Most grid points a calibration sweep may evaluate.
const MAX_GRID_POINTS: usize = 200_000;

fn calibration_samples(cfg: &CalibcheckConfig, energy: &Energy, seed: u64) -> Result<Vec<EnergyInput>, Failure> {
    let k = cfg.k;
    if let Some(grid) = &cfg.grid {
        if !matches!(energy, Energy::Bilinear { .. }) {
            return Err(Failure::Config("grid: only the bilinear energy has a grid sweep; use samples".into()));
        }
        let axis = grid.points();
        let total = axis.len().checked_pow(k as u32).filter(|&n| n <= MAX_GRID_POINTS);
        let total = total.ok_or_else(|| {
            Failure::Config(format!("grid: more than {MAX_GRID_POINTS} points; raise step or narrow [lo, hi]"))
        })?;
        if total == 0 {
            return Err(Failure::Config("grid: lo must not exceed hi".into()));
        }
        return Ok((0..total)
            .map(|mut idx| {
                EnergyInput::Dense(Vector::from_fn(k, |_, _| {
                    let x = axis[idx % axis.len()];
                    idx /= axis.len();
                    x
                }))
            })
            .collect());
    }
    let mut rng = seeded_rng(seed);
    let s = cfg.scale;
    let uniform = |rng: &mut Rng| Vector::from_fn(k, |_, _| rng.gen_range(-s..s));
    Ok((0..cfg.samples)
        .map(|_| match energy {
            Energy::Bilinear { .. } => EnergyInput::Dense(uniform(&mut rng)),
            _ => {
                let lin = uniform(&mut rng);
                let b = Matrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
                let quad = symmetrize(&-(&b * b.transpose()));
                match energy {
                    Energy::Pairwise { .. } => EnergyInput::Pairwise { unary: lin, pairwise: quad },
                    _ => EnergyInput::LinearQuadratic { a: quad, b: lin },
                }
            }
        })
        .collect())
}

pub fn cmd_calibcheck(config: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let run: Loaded<CalibcheckConfig> = load(config, Document::Calibcheck)?;
    let cfg = &run.config;
    let k = cfg.k;
    let energy = match cfg.energy {
        EnergyFamily::Bilinear => Energy::identity(k),
        EnergyFamily::LinearQuadratic => Energy::linear_quadratic(k),
        EnergyFamily::Pairwise => Energy::pairwise(k),
        other => return Err(Failure::Config(format!("energy: {} is not linear in v", family_name(other)))),
    };
    let reg = regularizer(cfg.regularizer, k)?;
    let decomp = hamming_decomposition(k)?;
    let q = match &cfg.distribution {
        DistributionSpec::Bernoulli(means) if means.len() != k => {
            return Err(Failure::Config(format!("distribution.bernoulli: expected {k} means, got {}", means.len())))
        }
        DistributionSpec::Bernoulli(means) => LabelDistribution::product_bernoulli(means),
        DistributionSpec::Weights(w) => LabelDistribution::from_weights(k, w),
    }
    .map_err(|e| Failure::Config(format!("distribution: {e}")))?;
    let samples = calibration_samples(cfg, &energy, run.seed)?;
    let report = calibration_check(&energy, &reg, &decomp, &q, &samples, cfg.smoothness, &cfg.solver)?;

    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| run.resolve(&cfg.output_dir));
    ensure_dir(&out_dir)?;
    let mut w = run.provenance("calibcheck").csv(&out_dir.join("calibcheck.csv"))?;
    w.write_record(["v", "target_excess", "surrogate_excess", "xi", "holds"])?;
    for row in &report.rows {
        w.write_record([
            join(&row.v),
            row.target_excess.to_string(),
            row.surrogate_excess.to_string(),
            row.xi.to_string(),
            row.holds(report.slack).to_string(),
        ])?;
    }
    w.flush()?;

    let source = serde_json::to_value(report.smoothness_source)?;
    println!(
        "calibcheck energy={} k={k} rows={} sigma={:.6} smoothness={:.6} ({}) bayes_risk={:.6} violations={} {}",
        family_name(cfg.energy),
        report.rows.len(),
        report.sigma,
        report.smoothness,
        source.as_str().unwrap_or("?"),
        report.bayes_surrogate_risk,
        report.violations,
        if report.passed() { "PASS" } else { "FAIL" }
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "{} of {} rows violate the calibration bound",
            report.violations,
            report.rows.len()
        )))
    }
}
