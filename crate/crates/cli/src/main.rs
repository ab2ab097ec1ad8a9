mod args;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use satnet_core::datasets::{
    gen_parity, load_idx_images, load_idx_labels, perceptron_toyset, preprocess_image, sample_batch_indices, Dataset,
    DatasetMeta, Example, GrayImage, Label, ParityCount, Preprocess,
};
use satnet_core::driver::{job_seed, merge_lambda, run_batch_jobs, write_job_manifest, Job, JobMode, JobOutput, JobSpec};
use satnet_core::encoder::encode_batch;
use satnet_core::params::Hyperparams;
use satnet_core::pipeline::{evaluate, train, EvalSummary, RunManifest, TrainOptions, TrainOutput, CSV_HEADER};
use satnet_core::runtime::TrainedModel;
use satnet_core::seeds::derive_seed;
use satnet_core::Error;

use args::{load_dataset, solver_command, Cli, Command, ConfigFile, EncodeArgs, EvalArgs, GenKind, ReportArgs, Scheme, TrainArgs};

const EXIT_USAGE: u8 = 2;
const EXIT_UNSAT: u8 = 3;
const EXIT_ENVIRONMENT: u8 = 4;

pub const MANIFEST_FILE: &str = "run.manifest";
pub const TIMINGS_FILE: &str = "timings.json";

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::TrainingFailed(_)) => EXIT_UNSAT,
        Some(err) if err.is_environment() => EXIT_ENVIRONMENT,
        Some(Error::Config(_) | Error::Shape(_)) => EXIT_USAGE,
        Some(_) => 1,
        // errors raised by argument resolution in this binary
        None => EXIT_USAGE,
    }
}

fn run(cli: Cli) -> Result<()> {
    let solver = solver_command(cli.solver.as_deref());
    match cli.command {
        Command::GenData(a) => gen_data(a.kind),
        Command::Encode(a) => encode(a),
        Command::Train(a) => train_cmd(a, solver, false),
        Command::LearnClauses(a) => train_cmd(a, solver, true),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::File { path: path.into(), source: e }.into())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::File { path: dir.into(), source: e }.into())
}

fn summarize(ds: &Dataset) {
    println!(
        "{} examples, dim {}, {} positive / {} negative",
        ds.len(),
        ds.dim(),
        ds.positives(),
        ds.len() - ds.positives()
    );
}

fn gen_data(kind: GenKind) -> Result<()> {
    let (ds, out) = match kind {
        GenKind::Parity { dim, positions, exhaustive, count, seed, out } => {
            let count = match (exhaustive, count) {
                (true, _) => ParityCount::Exhaustive,
                (false, Some(n)) => ParityCount::Sampled(n),
                (false, None) => bail!("either --exhaustive or --count is required"),
            };
            (gen_parity(dim, &positions, count, seed)?, out)
        }
        GenKind::Perceptron { out } => (perceptron_toyset(), out),
        GenKind::Images {
            images,
            labels,
            positive,
            negative,
            scheme,
            per_class,
            alpha,
            num_bits,
            seed,
            out,
        } => {
            let hp = Hyperparams { num_bits, alpha, ..Hyperparams::default() };
            hp.validate_alpha()?;
            let imgs = load_idx_images(&images)?;
            let labs = load_idx_labels(&labels)?;
            if imgs.images.len() != labs.len() {
                bail!("{} images but {} labels", imgs.images.len(), labs.len());
            }
            let pos: Vec<usize> = (0..labs.len()).filter(|&i| labs[i] == positive).collect();
            let neg: Vec<usize> = (0..labs.len())
                .filter(|&i| labs[i] != positive && negative.is_none_or(|n| labs[i] == n))
                .collect();
            let pick = |idx: &[usize], stream: u64| -> Result<Vec<usize>> {
                Ok(match per_class {
                    None => idx.to_vec(),
                    Some(k) => {
                        let mut chosen = sample_batch_indices(idx.len(), 1, k, derive_seed(seed, stream))?.remove(0);
                        chosen.sort_unstable();
                        chosen.into_iter().map(|j| idx[j]).collect()
                    }
                })
            };
            let scheme = match scheme {
                Scheme::Vanilla => Preprocess::Vanilla,
                Scheme::Kernelised => Preprocess::Kernelised,
            };
            let mut examples = Vec::new();
            for (idx, label) in [(pick(&pos, 0)?, Label::Positive), (pick(&neg, 1)?, Label::Negative)] {
                for i in idx {
                    let img = GrayImage::from_bytes(imgs.rows, imgs.cols, &imgs.images[i])?;
                    examples.push(Example::new(preprocess_image(&img, scheme, &hp)?, label));
                }
            }
            let source = format!(
                "idx {} positive={positive} negative={} alpha={alpha}",
                images.display(),
                negative.map_or("rest".to_string(), |n| n.to_string())
            );
            let meta = DatasetMeta { source, seed: per_class.map(|_| seed) };
            (Dataset::new(examples, meta)?, out)
        }
    };
    ds.save(&out)?;
    summarize(&ds);
    Ok(())
}

fn batch_stem(b: usize) -> String {
    format!("batch{b:03}")
}

/// `label<TAB>dimacs id` per labeled variable, in id order.
fn var_map(formula: &satnet_core::cnf::CnfFormula) -> String {
    formula.labels().iter().map(|(v, l)| format!("{l}\t{v}\n")).collect()
}

fn encode(a: EncodeArgs) -> Result<()> {
    let file = ConfigFile::load(a.hp.config.as_deref())?;
    let hp = a.hp.resolve(&file)?;
    let ds = load_dataset(&a.dataset)?;
    let net = a.net.resolve(ds.dim())?;
    let mode = JobMode::parse(&a.mode).with_context(|| format!("bad job mode `{}`", a.mode))?;
    create_dir(&a.out)?;
    // same batch and job seeds as `train --seed`
    let indices = sample_batch_indices(ds.len(), hp.num_batches, hp.batch_size, derive_seed(a.seed, 0))?;
    let job_cfg = satnet_core::driver::SolverConfig {
        seed: derive_seed(a.seed, 1),
        ..satnet_core::driver::SolverConfig::new("unused")
    };
    let mut specs = Vec::new();
    for (b, idx) in indices.iter().enumerate() {
        let batch: Vec<Example> = idx.iter().map(|&i| ds.examples[i].clone()).collect();
        let enc = encode_batch(&net, &batch, &hp)?;
        let cnf = a.out.join(format!("{}.cnf", batch_stem(b)));
        let mut text = Vec::new();
        enc.formula.write_dimacs(&mut text, &[])?;
        write(&cnf, text)?;
        write(&a.out.join(format!("{}.vars", batch_stem(b))), var_map(&enc.formula))?;
        println!("{}: {} vars, {} clauses", cnf.display(), enc.formula.var_count(), enc.formula.num_clauses());
        specs.push(JobSpec { batch_id: b, cnf_path: cnf, mode, seed: job_seed(&job_cfg, b) });
    }
    write(&a.out.join("jobs.manifest"), write_job_manifest(&specs))?;
    Ok(())
}

fn write_run(out: &Path, result: &TrainOutput) -> Result<()> {
    for (b, enc) in result.batches.iter().enumerate() {
        let mut text = Vec::new();
        enc.formula.write_dimacs(&mut text, &[])?;
        write(&out.join(format!("{}.cnf", batch_stem(b))), text)?;
    }
    for set in &result.lambdas {
        let b = set.origin.expect("per-batch clause sets carry their origin");
        write(&out.join(format!("{}.lambda", batch_stem(b))), set.to_text())?;
    }
    let models_dir = out.join("models");
    create_dir(&models_dir)?;
    for (m, r) in result.models.iter().zip(&result.manifest.ranking) {
        m.save(&models_dir.join(&r.file))?;
    }
    write(&out.join(MANIFEST_FILE), result.manifest.to_json())?;
    write(&out.join(TIMINGS_FILE), serde_json::to_string_pretty(&result.timings)? + "\n")?;
    Ok(())
}

fn train_cmd(a: TrainArgs, solver: String, learn_only: bool) -> Result<()> {
    let file = ConfigFile::load(a.hp.config.as_deref())?;
    let hp = a.hp.resolve(&file)?;
    let cfg = a.solver.resolve(solver, &file)?;
    let ds = load_dataset(&a.dataset)?;
    let test = a.test.as_deref().map(load_dataset).transpose()?;
    let net = a.net.resolve(ds.dim())?;
    create_dir(&a.out)?;

    if learn_only {
        return learn_clauses(&ds, &net, &hp, cfg, a.seed, &a.out);
    }
    let opts = TrainOptions {
        share_clauses: a.share_clauses,
        num_sols: a.num_sols,
        seed: a.seed,
        fallback_solve: !a.no_fallback,
    };
    match train(&ds, &net, &hp, &cfg, &opts, test.as_ref()) {
        Ok(result) => {
            write_run(&a.out, &result)?;
            print!("{}", result.manifest);
            println!("{} models written to {}", result.models.len(), a.out.join("models").display());
            if let Some(best) = result.manifest.ranking.first() {
                if let Some(acc) = best.holdout_accuracy {
                    println!("best held-out accuracy {:.2}% ({})", 100.0 * acc, best.file);
                }
            }
            Ok(())
        }
        Err(Error::TrainingFailed(manifest)) => {
            write(&a.out.join(MANIFEST_FILE), manifest.to_json())?;
            Err(Error::TrainingFailed(manifest).into())
        }
        Err(e) => Err(e.into()),
    }
}

fn learn_clauses(
    ds: &Dataset,
    net: &satnet_core::encoder::NetworkSpec,
    hp: &Hyperparams,
    cfg: satnet_core::driver::SolverConfig,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let indices = sample_batch_indices(ds.len(), hp.num_batches, hp.batch_size, derive_seed(seed, 0))?;
    let cfg = satnet_core::driver::SolverConfig { seed: derive_seed(seed, 1), ..cfg };
    let encoded = indices
        .iter()
        .map(|idx| {
            let batch: Vec<Example> = idx.iter().map(|&i| ds.examples[i].clone()).collect();
            encode_batch(net, &batch, hp)
        })
        .collect::<satnet_core::Result<Vec<_>>>()?;
    let jobs: Vec<Job> = encoded
        .iter()
        .enumerate()
        .map(|(b, enc)| Job {
            batch_id: b,
            formula: &enc.formula,
            weight_vars: enc.weights.model_vars(),
            mode: JobMode::ImpliedClauses,
        })
        .collect();
    let mut sets = Vec::new();
    for (b, res) in run_batch_jobs(&jobs, &cfg)?.into_iter().enumerate() {
        match res {
            Ok(JobOutput::Clauses(set)) => {
                write(&out.join(format!("{}.lambda", batch_stem(b))), set.to_text())?;
                println!("batch {b}: {} clauses", set.len());
                sets.push(set);
            }
            Ok(_) => unreachable!("clause jobs return clause sets"),
            Err(e) if e.is_environment() => return Err(e.into()),
            Err(e) => eprintln!("batch {b}: {e}"),
        }
    }
    let merged = merge_lambda(&sets);
    write(&out.join("lambda_all.lambda"), merged.to_text())?;
    println!("{} distinct clauses after merging", merged.len());
    Ok(())
}

fn load_models(path: &Path) -> Result<Vec<TrainedModel>> {
    if path.is_file() {
        return Ok(vec![TrainedModel::load(path)?]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::File { path: path.into(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no model files in {}", path.display());
    }
    files.iter().map(|f| Ok(TrainedModel::load(f)?)).collect()
}

fn eval(a: EvalArgs) -> Result<()> {
    let models = load_models(&a.models)?;
    let test = load_dataset(&a.test)?;
    let summary = evaluate(&models, &test)?;
    let config = a.config.unwrap_or_else(|| a.models.display().to_string());
    let row = summary.csv_row(&config);
    println!("{CSV_HEADER}");
    println!("{row}");
    if let Some(csv) = a.append {
        let fresh = !csv.exists();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&csv)
            .map_err(|e| Error::File { path: csv.clone(), source: e })?;
        if fresh {
            writeln!(f, "{CSV_HEADER}")?;
        }
        writeln!(f, "{row}")?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    println!("{CSV_HEADER}");
    for path in &a.manifests {
        let text = fs::read_to_string(path).map_err(|e| Error::File { path: path.clone(), source: e })?;
        let manifest = RunManifest::from_json(&text)?;
        let accs: Vec<f64> = manifest.ranking.iter().filter_map(|r| r.holdout_accuracy).collect();
        if accs.is_empty() {
            bail!("{}: no held-out accuracies recorded (train with --test)", path.display());
        }
        let label = path
            .parent()
            .and_then(|d| d.file_name())
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        println!("{}", EvalSummary::from_accuracies(accs)?.csv_row(&label));
    }
    Ok(())
}
