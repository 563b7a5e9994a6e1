//! Command implementations behind the `innerns` binary.

pub mod args;
pub mod error;
pub mod ingest;
pub mod report;

use std::cell::RefCell;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use innerns::dirichlet::log_simplex_volume;
use innerns::engine::NSRunResult;
use innerns::expr::FunctionalExpr;
use innerns::inner::{DifferentialAtlas, RefreshMode};
use innerns::moments::{estimate_moments, model_posterior, weighted_values};
use innerns::numerics::LogValue;
use innerns::oracle::{
    ellipse_contour_area, ellipse_likelihood, grid_integrate, sector_radii, sorted_area_curve, write_curve_csv,
    GridSpec,
};
use innerns::pipeline::{integrate_box, run_dirichlet, run_inner_volume, stream_seed, BoxModel, DirichletConfig};
use serde::Serialize;

use args::{Cli, Command, CompareArgs, DirichletArgs, Domain, InnerVolumeArgs, IntegrateArgs, OracleArgs};
pub use error::CliError;
pub use ingest::ingest_counts;
use ingest::ModelFile;
use report::{
    finite, AtlasSection, DataSection, ModelSection, MomentsSection, OracleSection, OutputReport, PyramidSection,
};

/// Runs one parsed command and writes its report.
pub fn run(cli: &Cli) -> Result<OutputReport, CliError> {
    let start = Instant::now();
    let mut report = match &cli.command {
        Command::Integrate(a) => integrate(a)?,
        Command::OracleGrid(a) => oracle_grid(a)?,
        Command::Dirichlet(a) => dirichlet(a)?,
        Command::InnerVolume(a) => inner_volume(a)?,
        Command::EvidenceCompare(a) => evidence_compare(a)?,
    };
    report.wall_time_seconds = start.elapsed().as_secs_f64();
    let output = match &cli.command {
        Command::Integrate(a) => &a.common.output,
        Command::OracleGrid(a) => &a.common.output,
        Command::Dirichlet(a) => &a.common.output,
        Command::InnerVolume(a) => &a.common.output,
        Command::EvidenceCompare(a) => &a.common.output,
    };
    match output {
        Some(path) => write_file(path, |w| w.write_all(report.to_json().as_bytes()))?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(report.to_json().as_bytes())
                .map_err(|source| CliError::Write {
                    path: "<stdout>".into(),
                    source,
                })?;
        }
    }
    Ok(report)
}

fn config_of<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn write_file<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
{
    let wrap = |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(wrap)?);
    body(&mut w).map_err(wrap)?;
    w.flush().map_err(wrap)
}

fn parse_functional(src: &str, m: usize) -> Result<FunctionalExpr, CliError> {
    FunctionalExpr::parse(src, m).map_err(|err| CliError::Functional {
        source_text: src.to_string(),
        err,
    })
}

/// The integrand and box named by the flags; the built-in Gaussian when no
/// integrand is given.
fn resolve_domain(d: &Domain) -> Result<BoxModel, CliError> {
    let Some(src) = &d.integrand else {
        let base = BoxModel::gaussian();
        let lower = d.lower.clone().unwrap_or(base.lower.clone());
        let upper = d.upper.clone().unwrap_or(base.upper.clone());
        return Ok(BoxModel::new(base.integrand, lower, upper)?);
    };
    let (Some(lower), Some(upper)) = (&d.lower, &d.upper) else {
        return Err(CliError::Usage("--integrand needs --lower and --upper".into()));
    };
    let integrand = parse_functional(src, lower.len())?;
    Ok(BoxModel::new(integrand, lower.clone(), upper.clone())?)
}

fn fill_run(report: &mut OutputReport, run: &NSRunResult) {
    report.log_z = finite(run.log_z.ln());
    report.termination_reason = Some(run.termination.as_str().to_string());
    report.iterations = Some(run.iterations);
}

fn write_trace(path: &Option<std::path::PathBuf>, run: &NSRunResult) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, |w| run.write_trace_csv(w)),
        None => Ok(()),
    }
}

fn write_atlas(path: &Option<std::path::PathBuf>, atlas: &DifferentialAtlas) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, |w| atlas.write_csv(w)),
        None => Ok(()),
    }
}

fn integrate(a: &IntegrateArgs) -> Result<OutputReport, CliError> {
    let model = resolve_domain(&a.domain)?;
    let run = integrate_box(&model, a.objects, a.common.seed, a.common.termination_factor)?;
    write_trace(&a.trace, &run)?;
    let mut report = OutputReport::new("integrate", config_of(a), a.common.seed);
    fill_run(&mut report, &run);
    Ok(report)
}

fn oracle_grid(a: &OracleArgs) -> Result<OutputReport, CliError> {
    let model = resolve_domain(&a.domain)?;
    let dim = model.lower.len();
    let cells = match a.cells.as_slice() {
        [c] => vec![*c; dim],
        list => list.to_vec(),
    };
    let spec = GridSpec::new(model.lower.clone(), model.upper.clone(), cells)?;
    let failure = RefCell::new(None);
    let f = |x: &[f64]| match model.integrand.eval(x) {
        Ok(v) => v,
        Err(e) => {
            failure.borrow_mut().get_or_insert((x.to_vec(), e));
            f64::NAN
        }
    };
    let integral = grid_integrate(f, &spec);
    if let Some((point, source)) = failure.into_inner() {
        return Err(innerns::pipeline::PipelineError::Integrand { point, source }.into());
    }
    if let Some(p) = &a.curve {
        let curve = sorted_area_curve(|x| model.integrand.eval(x).unwrap_or(f64::NAN), &spec);
        write_file(p, |w| write_curve_csv(&curve, w))?;
    }
    let pyramid = match a.ellipse_level {
        Some(level) => {
            if !(level > 0.0 && level < innerns::oracle::ELLIPSE_PEAK) || a.sectors == 0 {
                return Err(CliError::Usage(format!(
                    "--ellipse-level must lie in (0, {}) and --sectors be positive",
                    innerns::oracle::ELLIPSE_PEAK
                )));
            }
            let radii = sector_radii(&ellipse_likelihood, level, a.sectors);
            if let Some(p) = &a.radii {
                write_file(p, |w| {
                    writeln!(w, "angle,R")?;
                    radii.iter().try_for_each(|(t, r)| writeln!(w, "{t},{r}"))
                })?;
            }
            let ds = 2.0 * std::f64::consts::PI / a.sectors as f64;
            Some(PyramidSection {
                level,
                sectors: a.sectors,
                sum: radii.iter().map(|(_, r)| r * r / 2.0 * ds).sum(),
                analytic_area: ellipse_contour_area(level),
            })
        }
        None => None,
    };
    let mut report = OutputReport::new("oracle-grid", config_of(a), a.common.seed);
    report.log_z = finite(integral.ln());
    report.oracle = Some(OracleSection {
        grid_integral: integral,
        cells: spec.n_cells(),
        cell_measure: spec.cell_measure(),
        pyramid,
    });
    Ok(report)
}

fn dirichlet(a: &DirichletArgs) -> Result<OutputReport, CliError> {
    let counts = ingest_counts(&a.counts)?;
    let u = parse_functional(&a.functional, counts.dim())?;
    let mut cfg = DirichletConfig::new(a.common.seed)
        .with_objects(a.objects)
        .with_inner_objects(a.inner_objects);
    cfg.termination_factor = a.common.termination_factor;
    cfg.center = a.center.clone();
    cfg.refresh = if a.refresh_every > 1 {
        RefreshMode::Interpolated { every: a.refresh_every }
    } else {
        RefreshMode::Full
    };
    let run = run_dirichlet(&counts, &cfg)?;
    let moments = estimate_moments(&run.result, &u, a.common.seed)?;
    write_trace(&a.trace, &run.result)?;
    write_atlas(&a.atlas_dump, &run.atlas)?;
    if let Some(p) = &a.u_points {
        let points = weighted_values(&run.result, &u)?;
        write_file(p, |w| {
            writeln!(w, "u,weight")?;
            points.iter().try_for_each(|(v, wt)| writeln!(w, "{v},{wt}"))
        })?;
    }

    let mut report = OutputReport::new("dirichlet", config_of(a), a.common.seed);
    fill_run(&mut report, &run.result);
    report.atlas_size = Some(run.atlas.len());
    report.data = Some(DataSection {
        cells: counts.dim(),
        total: counts.total(),
        shape: counts.shape(),
    });
    let sd = moments.variance.max(0.0).sqrt();
    report.moments = Some(MomentsSection {
        functional: u.source().to_string(),
        m1: moments.m1,
        m2: moments.m2,
        variance: moments.variance,
        sd,
        lower: moments.lower,
        upper: moments.upper,
    });
    report.atlas = Some(AtlasSection {
        ambient_dim: run.atlas.ambient_dim(),
        inner_objects: a.inner_objects,
        log_v_star: finite(run.atlas.log_v_star().ln()),
        log_v_exact: None,
        initial_size: Some(run.initial_atlas_size),
        log_l0: finite(run.log_l0),
        walk_acceptance: finite(run.atlas.walk_stats().walk_acceptance()),
        proposals: Some(run.stats),
    });
    Ok(report)
}

fn inner_volume(a: &InnerVolumeArgs) -> Result<OutputReport, CliError> {
    if a.dimension < 2 {
        return Err(CliError::Usage(format!("--dimension must be at least 2, got {}", a.dimension)));
    }
    let atlas = run_inner_volume(a.dimension, a.inner_objects, a.common.seed, a.common.termination_factor)?;
    write_atlas(&a.atlas_dump, &atlas)?;
    let mut report = OutputReport::new("inner-volume", config_of(a), a.common.seed);
    report.log_z = finite(atlas.log_v_star().ln());
    report.termination_reason = Some(atlas.termination().as_str().to_string());
    report.iterations = Some(atlas.len());
    report.atlas_size = Some(atlas.len());
    report.atlas = Some(AtlasSection {
        ambient_dim: atlas.ambient_dim(),
        inner_objects: a.inner_objects,
        log_v_star: finite(atlas.log_v_star().ln()),
        log_v_exact: Some(log_simplex_volume(a.dimension).ln()),
        initial_size: None,
        log_l0: None,
        walk_acceptance: finite(atlas.walk_stats().walk_acceptance()),
        proposals: None,
    });
    Ok(report)
}

fn evidence_compare(a: &CompareArgs) -> Result<OutputReport, CliError> {
    if a.models.len() < 2 {
        return Err(CliError::Usage("evidence-compare needs at least two --model files".into()));
    }
    // every file must parse before any sampling starts
    let files: Vec<ModelFile> = a.models.iter().map(|p| ModelFile::read(p)).collect::<Result<_, _>>()?;
    let mut sections = Vec::with_capacity(files.len());
    let mut ok = Vec::new();
    for (j, (path, file)) in a.models.iter().zip(&files).enumerate() {
        let mut section = ModelSection {
            path: path.display().to_string(),
            name: file.name.clone(),
            log_prior: file.log_prior,
            log_z: None,
            iterations: None,
            termination_reason: None,
            posterior: None,
            error: None,
        };
        let outcome = file.to_box_model(path).and_then(|model| {
            integrate_box(
                &model,
                a.objects,
                stream_seed(a.common.seed, j as u64),
                a.common.termination_factor,
            )
            .map_err(CliError::from)
        });
        match outcome {
            Ok(run) => {
                section.log_z = finite(run.log_z.ln());
                section.iterations = Some(run.iterations);
                section.termination_reason = Some(run.termination.as_str().to_string());
                ok.push((j, run.log_z, LogValue::from_ln(file.log_prior)));
            }
            Err(e) => section.error = Some(e.render()),
        }
        sections.push(section);
    }
    if ok.len() < 2 {
        let failures = sections
            .iter()
            .filter_map(|s| s.error.as_ref().map(|e| format!("{}: {e}", s.path)))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(CliError::TooFewModels {
            succeeded: ok.len(),
            total: sections.len(),
            failures,
        });
    }
    let z: Vec<LogValue> = ok.iter().map(|(_, z, _)| *z).collect();
    let priors: Vec<LogValue> = ok.iter().map(|(_, _, p)| *p).collect();
    let post = model_posterior(&z, Some(&priors))?;
    for ((j, _, _), p) in ok.iter().zip(post) {
        sections[*j].posterior = Some(p);
    }
    let mut report = OutputReport::new("evidence-compare", config_of(a), a.common.seed);
    report.models = Some(sections);
    Ok(report)
}
