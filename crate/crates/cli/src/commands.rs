use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use simec_core::fixtures;
use simec_core::io::{format_float, load_model, read_walk, write_model, write_walk, write_walk_csv, WalkRecord};
use simec_core::metric::analyze_point_with;
use simec_core::network::UnitState;
use simec_core::oracle::{audit_invariance, brute_force_level_set};
use simec_core::walk::{run_walks, WalkConfig, WalkMode};
use simec_core::NetworkSpec;

use crate::args::{parse_box, parse_metric, parse_vector, resolve_point, usage};
use crate::manifest::{write_manifest, Clock};
use crate::{ExampleArgs, ExampleName, OracleArgs, PullbackArgs, VerifyArgs, WalkArgs};

/// Output deviation above tolerance. Maps to exit code 5.
#[derive(Debug)]
pub struct Violation(pub String);

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Violation {}

fn open_model(path: &Path) -> Result<NetworkSpec> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format_float(*x)).collect::<Vec<_>>().join(",")
}

#[derive(Serialize)]
struct WalkSummary {
    start: String,
    steps_taken: usize,
    termination: String,
    energy: f64,
    pseudolength: f64,
    max_output_deviation: f64,
    argmax_flips: usize,
}

pub fn walk(a: WalkArgs) -> Result<()> {
    let clock = Clock::start();
    if a.tau.is_some() && a.mode != WalkMode::SimecGuarded {
        return Err(usage("--tau applies only to --mode simec_guarded"));
    }
    if a.direction.is_some() && a.mode != WalkMode::Simec1dLeaky {
        return Err(usage("--direction applies only to --mode simec_1d_leaky"));
    }
    if a.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let metric = parse_metric(&a.metric)?;
    let table = a.table.options();
    let resolved = a.starts.iter().map(|s| resolve_point(s, &table)).collect::<Result<Vec<_>>>()?;
    let net = open_model(&a.model)?;

    let cfg = WalkConfig {
        mode: a.mode,
        steps: a.steps,
        delta: a.delta,
        eps: a.eps,
        relative_eps: a.relative_eps,
        tau: a.tau,
        seed: a.seed,
        energy_budget: a.energy_budget,
        initial_direction: a.direction.as_deref().map(parse_vector).transpose()?,
    };
    cfg.validate()?;

    let starts: Vec<_> = resolved.iter().map(|r| r.point.clone()).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs).build()?;
    let results = pool.install(|| run_walks(&net, &starts, &cfg, &metric));

    out_dir(&a.out_dir)?;
    let mut outputs = Vec::new();
    let mut summaries = Vec::new();
    for (i, res) in results.into_iter().enumerate() {
        let res = res.with_context(|| format!("walk {i} from `{}`", a.starts[i]))?;
        let stem = if starts.len() == 1 { a.name.clone() } else { format!("{}-{i}", a.name) };
        let record = WalkRecord::from_result(&cfg, &res);
        let csv_path = a.out_dir.join(format!("{stem}.csv"));
        let bin_path = a.out_dir.join(format!("{stem}.walk"));
        let mut w = create(&csv_path)?;
        write_walk_csv(&record, &mut w)?;
        w.flush()?;
        write_walk(&record, &bin_path).with_context(|| format!("writing {}", bin_path.display()))?;

        let y0 = &res.outputs[0];
        let a0 = y0.argmax();
        let summary = WalkSummary {
            start: a.starts[i].clone(),
            steps_taken: res.steps_taken(),
            termination: res.termination.to_string(),
            energy: res.energy,
            pseudolength: res.pseudolength,
            max_output_deviation: res.outputs.iter().map(|o| o.sub(y0).norm_inf()).fold(0.0, f64::max),
            argmax_flips: if y0.dim() > 1 { res.outputs.iter().filter(|o| o.argmax() != a0).count() } else { 0 },
        };
        println!(
            "walk {i}: {} steps, termination {}, energy {}, pseudolength {}, max output deviation {}, argmax flips {}",
            summary.steps_taken,
            summary.termination,
            format_float(summary.energy),
            format_float(summary.pseudolength),
            format_float(summary.max_output_deviation),
            summary.argmax_flips
        );
        summaries.push(summary);
        outputs.push(csv_path);
        outputs.push(bin_path);
    }

    #[derive(Serialize)]
    struct Config<'a> {
        walk: &'a WalkConfig,
        metric: &'a str,
        starts: &'a [String],
        jobs: usize,
    }
    let datasets: Vec<PathBuf> = resolved.iter().filter_map(|r| r.dataset.clone()).collect();
    let manifest = a.out_dir.join(format!("{}.manifest.json", a.name));
    write_manifest(
        &manifest,
        "walk",
        Config { walk: &cfg, metric: &a.metric, starts: &a.starts, jobs: a.jobs },
        &a.model,
        &datasets,
        &outputs,
        summaries,
        &clock,
    )?;
    println!("manifest {}", manifest.display());
    Ok(())
}

fn state_char(s: UnitState) -> char {
    match s {
        UnitState::Inactive => '0',
        UnitState::Active => '1',
        UnitState::Below => 'b',
        UnitState::Middle => 'm',
        UnitState::Above => 'a',
    }
}

pub fn pullback(a: PullbackArgs) -> Result<()> {
    let metric = parse_metric(&a.metric)?;
    let point = resolve_point(&a.point, &a.table.options())?.point;
    if !(a.eps > 0.0) {
        return Err(usage("--eps must be positive"));
    }
    let net = open_model(&a.model)?;
    let threshold = WalkConfig {
        eps: a.eps,
        relative_eps: a.relative_eps,
        ..WalkConfig::new(WalkMode::Simec, 1, 1.0, a.eps, 0)
    }
    .null_threshold();
    let pa = analyze_point_with(&net, &point, &metric, threshold)?;
    let pm = &pa.metric;
    let signature: String = pa.signature.states.iter().map(|s| state_char(*s)).collect();

    if a.json {
        #[derive(Serialize)]
        struct Report<'a> {
            point: &'a [f64],
            output: &'a [f64],
            h: Vec<Vec<f64>>,
            eigenvalues: &'a [f64],
            kernel_dim: usize,
            signature: String,
        }
        let report = Report {
            point: &point,
            output: &pa.output,
            h: (0..pm.dim()).map(|i| pm.h.row(i).to_vec()).collect(),
            eigenvalues: &pm.eigen.eigenvalues,
            kernel_dim: pm.kernel_dim(),
            signature,
        };
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!("point {}", join(&point));
    println!("output {}", join(&pa.output));
    println!("kernel_dim {}", pm.kernel_dim());
    println!("eigenvalues {}", join(&pm.eigen.eigenvalues));
    println!("signature {}", if signature.is_empty() { "-" } else { &signature });
    println!("h");
    for i in 0..pm.dim() {
        println!("{}", join(pm.h.row(i)));
    }
    Ok(())
}

pub fn verify(a: VerifyArgs) -> Result<()> {
    if !(a.tol >= 0.0) {
        return Err(usage("--tol must be non-negative"));
    }
    let net = open_model(&a.model)?;
    let record = read_walk(&a.walk).with_context(|| format!("reading walk {}", a.walk.display()))?;
    let report = audit_invariance(&net, &record, a.tol)?;
    println!(
        "points {}, max output deviation {}, argmax flips {}, tol {}",
        record.len(),
        format_float(report.max_output_deviation),
        report.argmax_flips,
        format_float(a.tol)
    );
    if !report.within_tol {
        return Err(Violation(format!(
            "max output deviation {} exceeds tol {}",
            format_float(report.max_output_deviation),
            format_float(a.tol)
        ))
        .into());
    }
    Ok(())
}

pub fn oracle(a: OracleArgs) -> Result<()> {
    let clock = Clock::start();
    let bounds = parse_box(&a.bounds)?;
    let table = a.table.options();
    let reference = resolve_point(&a.reference, &table)?;
    let net = open_model(&a.model)?;
    let set = brute_force_level_set(&net, &bounds, a.resolution, &reference.point, a.tol)?;
    println!("level set: {} of {} grid nodes within {}", set.count(), set.grid.len(), format_float(a.tol));

    #[derive(Serialize, Default)]
    struct Containment {
        inside: usize,
        outside: usize,
        outside_box: usize,
    }
    let mut containment = None;
    if let Some(walk) = &a.walk {
        let record = read_walk(walk).with_context(|| format!("reading walk {}", walk.display()))?;
        let mut c = Containment::default();
        for p in &record.points {
            match set.contains_snapped(p) {
                Some(true) => c.inside += 1,
                Some(false) => c.outside += 1,
                None => c.outside_box += 1,
            }
        }
        println!(
            "walk points: {} in level set, {} outside, {} outside the box",
            c.inside, c.outside, c.outside_box
        );
        containment = Some(c);
    }

    out_dir(&a.out_dir)?;
    let csv_path = a.out_dir.join(format!("{}.csv", a.name));
    let mut w = create(&csv_path)?;
    let header: Vec<String> = (0..set.grid.dim()).map(|i| format!("x{i}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for p in set.points() {
        writeln!(w, "{}", join(&p))?;
    }
    w.flush()?;

    #[derive(Serialize)]
    struct Config<'a> {
        bounds: &'a [(f64, f64)],
        resolution: usize,
        reference: &'a str,
        tol: f64,
        walk: &'a Option<PathBuf>,
    }
    #[derive(Serialize)]
    struct Summary {
        members: usize,
        grid_nodes: usize,
        containment: Option<Containment>,
    }
    let mut datasets: Vec<PathBuf> = reference.dataset.into_iter().collect();
    datasets.extend(a.walk.clone());
    let manifest = a.out_dir.join(format!("{}.manifest.json", a.name));
    write_manifest(
        &manifest,
        "oracle",
        Config { bounds: &bounds, resolution: a.resolution, reference: &a.reference, tol: a.tol, walk: &a.walk },
        &a.model,
        &datasets,
        &[csv_path],
        Summary { members: set.count(), grid_nodes: set.grid.len(), containment },
        &clock,
    )?;
    println!("manifest {}", manifest.display());
    Ok(())
}

pub fn example(a: ExampleArgs) -> Result<()> {
    let text = match a.name {
        ExampleName::DigitFour => {
            let img = fixtures::digit_four();
            let header: Vec<String> = (0..img.dim()).map(|i| format!("p{i}")).collect();
            format!("{}\n{}\n", header.join(","), join(&img))
        }
        name => write_model(&match name {
            ExampleName::ReluLine => fixtures::relu_line(),
            ExampleName::ReluPlane => fixtures::relu_plane(),
            ExampleName::ReluOctant => fixtures::relu_octant(),
            ExampleName::LeakyLine => fixtures::leaky_line(),
            ExampleName::LeakySum => fixtures::leaky_sum(),
            ExampleName::LeakyPair => fixtures::leaky_pair(),
            ExampleName::Identity => fixtures::identity(a.dim),
            ExampleName::Residual => fixtures::residual_net(a.seed, a.dim),
            ExampleName::Lstm => fixtures::lstm_net(a.seed, a.dim, a.dim + 1),
            ExampleName::ImageNet => fixtures::image_net(a.seed),
            ExampleName::DigitFour => unreachable!(),
        }),
    };
    match &a.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
