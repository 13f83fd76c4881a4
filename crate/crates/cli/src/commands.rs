use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ldct_core::ct::{fbp, LinearFidelity, Projector};
use ldct_core::diagnostics::{run_suite, Suite, SuiteReport};
use ldct_core::io::{read_image, read_sinogram, tensor_paths, write_tensor, Tensor};
use ldct_core::regularizers::Regularizer;
use ldct_core::sim::{scaled_phantom, simulate_noisy_sinogram, QualityReport};
use ldct_core::solver::{run_recorded, Method, SolverTrace, CSV_HEADER};
use ldct_core::Image;
use rayon::prelude::*;
use serde_json::json;

use crate::config::Config;
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::png::write_png;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReconMethod {
    Fbp,
    Elda,
    #[value(name = "plain_gd")]
    PlainGd,
}

impl ReconMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ReconMethod::Fbp => "fbp",
            ReconMethod::Elda => "elda",
            ReconMethod::PlainGd => "plain_gd",
        }
    }
}

/// Settings shared by every command.
pub struct Context {
    pub config: Config,
    pub config_path: Option<PathBuf>,
    pub pool: rayon::ThreadPool,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

/// `<dir>/<name>.bin` plus sidecar, and `<name>.png` if asked.
fn save_image(ctx: &Context, dir: &Path, name: &str, x: &Image, png: bool, outputs: &mut Vec<String>) -> Result<(), CliError> {
    write_tensor(&Tensor::Image(x.clone()), &dir.join(name))?;
    outputs.push(format!("{name}.bin"));
    outputs.push(format!("{name}.json"));
    if png {
        write_png(x, &ctx.config.display, &dir.join(format!("{name}.png")))?;
        outputs.push(format!("{name}.png"));
    }
    Ok(())
}

/// File name for dose `i0`, e.g. `noisy_I0_2.5e4`.
pub fn noisy_name(i0: f64) -> String {
    format!("noisy_I0_{i0:e}")
}

pub fn simulate(ctx: &Context, out: &Path, png: bool) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let geo = &cfg.geometry.scanner;
    let models = cfg.dose.models()?;
    let names: Vec<String> = models.iter().map(|m| noisy_name(m.i0)).collect();
    if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
        return Err(CliError::Config("dose.I0 lists the same level twice".into()));
    }
    create_dir(out)?;

    let proj = Projector::new(geo.clone())?;
    let truth = scaled_phantom(geo.image_size, geo.pixel_size(), cfg.phantom.mu_scale)?;
    let clean = proj.forward(&truth)?;
    let noisy = ctx.pool.install(|| {
        models
            .par_iter()
            .map(|m| simulate_noisy_sinogram(&clean, m))
            .collect::<ldct_core::Result<Vec<_>>>()
    })?;

    let mut manifest = RunManifest::new("simulate", ctx.config_path.as_deref(), cfg);
    save_image(ctx, out, "phantom", &truth, png, &mut manifest.outputs)?;
    write_tensor(&Tensor::Sinogram(clean), &out.join("clean"))?;
    manifest.outputs.extend(["clean.bin".into(), "clean.json".into()]);
    for (name, s) in names.iter().zip(noisy) {
        write_tensor(&Tensor::Sinogram(s), &out.join(name))?;
        manifest.outputs.push(format!("{name}.bin"));
        manifest.outputs.push(format!("{name}.json"));
    }
    manifest.write(out)
}

/// Base name of a tensor path: `dir/noisy_I0_1e5.bin` -> `noisy_I0_1e5`.
fn stem(path: &Path) -> String {
    let (bin, _) = tensor_paths(path);
    bin.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
}

fn trace_tail(csv: &str, lines: usize) -> String {
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    let start = rows.len().saturating_sub(lines);
    std::iter::once(CSV_HEADER)
        .chain(rows[start..].iter().copied())
        .collect::<Vec<_>>()
        .join("\n")
}

struct Reconstruction {
    name: String,
    image: Image,
    trace: Option<SolverTrace>,
}

fn reconstruct_one(ctx: &Context, input: &Path, method: ReconMethod, out: &Path) -> Result<Reconstruction, CliError> {
    let cfg = &ctx.config;
    let geo = &cfg.geometry.scanner;
    let sino = read_sinogram(input)?;
    if (sino.n_views(), sino.n_detectors()) != (geo.n_views, geo.n_detectors) {
        return Err(CliError::Config(format!(
            "{}: sinogram is {}x{}, geometry expects {}x{}",
            input.display(),
            sino.n_views(),
            sino.n_detectors(),
            geo.n_views,
            geo.n_detectors
        )));
    }
    let name = format!("{}_{}", stem(input), method.as_str());
    let x0 = fbp(&sino, geo, cfg.fbp.filter)?;
    let solver_method = match method {
        ReconMethod::Fbp => {
            return Ok(Reconstruction {
                name,
                image: x0,
                trace: None,
            })
        }
        ReconMethod::Elda => Method::Elda,
        ReconMethod::PlainGd => Method::PlainGd,
    };
    let reg = Regularizer::new(cfg.filters.build()?, cfg.graph.regularizer(), &x0)?;
    let fid = LinearFidelity::new(Projector::new(geo.clone())?, sino)?;
    match run_recorded(x0.values(), &fid, &reg, &cfg.solver, solver_method) {
        Ok(res) => Ok(Reconstruction {
            name,
            image: x0.with_values(res.x)?,
            trace: Some(res.trace),
        }),
        Err(failure) => {
            let partial = SolverTrace {
                records: failure.records,
                locations: reg.locations(),
                eps0: cfg.solver.eps0,
                gamma: cfg.solver.gamma,
                iota: cfg.solver.iota,
                tau: cfg.solver.tau,
                final_phi: f64::NAN,
                final_eps: f64::NAN,
                final_grad_norm: f64::NAN,
                termination: ldct_core::solver::Termination::MaxIterations,
            };
            let csv = partial.to_csv();
            write_text(&out.join(format!("{name}_trace.csv")), &csv)?;
            let err = CliError::from(failure.error);
            let tail = trace_tail(&csv, 5);
            Err(match err {
                CliError::Numeric(msg) => CliError::Numeric(format!("{}: {msg}\nlast iterations:\n{tail}", input.display())),
                other => other,
            })
        }
    }
}

pub fn reconstruct(ctx: &Context, inputs: &[PathBuf], method: ReconMethod, out: &Path, png: bool) -> Result<(), CliError> {
    create_dir(out)?;
    let results: Vec<Result<Reconstruction, CliError>> =
        ctx.pool.install(|| inputs.par_iter().map(|p| reconstruct_one(ctx, p, method, out)).collect());

    let mut manifest = RunManifest::new("reconstruct", ctx.config_path.as_deref(), &ctx.config);
    manifest.method = Some(method.as_str().into());
    manifest.inputs = inputs.iter().map(|p| p.display().to_string()).collect();
    let mut first_error = None;
    for (input, result) in inputs.iter().zip(results) {
        match result {
            Ok(r) => {
                save_image(ctx, out, &r.name, &r.image, png, &mut manifest.outputs)?;
                let mut summary = json!({ "input": input.display().to_string(), "output": r.name });
                if let Some(trace) = &r.trace {
                    let file = format!("{}_trace.csv", r.name);
                    write_text(&out.join(&file), &trace.to_csv())?;
                    manifest.outputs.push(file);
                    summary["iterations"] = json!(trace.len());
                    summary["termination"] = json!(trace.termination);
                    summary["final_phi"] = json!(trace.final_phi);
                    summary["final_eps"] = json!(trace.final_eps);
                    summary["final_grad_norm"] = json!(trace.final_grad_norm);
                    summary["u_ratio"] = json!(trace.u_ratio());
                }
                manifest.results.push(summary);
            }
            Err(e) => {
                eprintln!("error: {e}");
                manifest.results.push(json!({ "input": input.display().to_string(), "error": e.to_string() }));
                first_error.get_or_insert(e);
            }
        }
    }
    manifest.write(out)?;
    first_error.map_or(Ok(()), Err)
}

pub fn evaluate(ctx: &Context, reference: &Path, images: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    let reference_image = read_image(reference)?;
    let mut report = QualityReport::default();
    let mut failures = Vec::new();
    for path in images {
        let row = read_image(path).map_err(CliError::from).and_then(|x| {
            report
                .push(stem(path), &x, &reference_image, None)
                .map_err(CliError::from)
        });
        if let Err(e) = row {
            eprintln!("skipping {}: {e}", path.display());
            failures.push(path.display().to_string());
        }
    }
    let csv = report.to_csv();
    match out {
        Some(dir) => {
            create_dir(dir)?;
            write_text(&dir.join("quality.csv"), &csv)?;
            let mut manifest = RunManifest::new("evaluate", ctx.config_path.as_deref(), &ctx.config);
            manifest.inputs = std::iter::once(reference)
                .chain(images.iter().map(PathBuf::as_path))
                .map(|p| p.display().to_string())
                .collect();
            manifest.outputs.push("quality.csv".into());
            manifest.write(dir)?;
        }
        None => print!("{csv}"),
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(format!("could not evaluate: {}", failures.join(", "))))
    }
}

pub fn verify(ctx: &Context, suites: &[Suite], seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let reports = ctx.pool.install(|| {
        suites
            .iter()
            .map(|&s| run_suite(s, seed))
            .collect::<ldct_core::Result<Vec<SuiteReport>>>()
    })?;
    for r in &reports {
        for c in &r.checks {
            eprintln!("[{}] {c}", r.suite.as_str());
        }
        println!("{}", serde_json::to_string(r).expect("report serializes"));
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        let mut text = serde_json::to_string_pretty(&reports).expect("reports serialize");
        text.push('\n');
        write_text(&dir.join("verify.json"), &text)?;
        let mut manifest = RunManifest::new("verify", ctx.config_path.as_deref(), &ctx.config);
        manifest.seed = seed;
        manifest.outputs.push("verify.json".into());
        manifest.write(dir)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.suite.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::SuiteFailed(failed.join(", ")))
    }
}
