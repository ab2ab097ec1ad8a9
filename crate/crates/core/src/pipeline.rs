//! Two-phase training: per-batch clause learning and sharing, then model
//! search on each (optionally augmented) batch formula, with every model
//! certified by the interpreter.

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::cnf::CnfFormula;
use crate::datasets::{sample_batch_indices, Dataset, DatasetMeta, Example};
use crate::driver::{job_seed, merge_lambda, run_batch_jobs, run_jobs_with_seeds, Job, JobMode, JobOutput, LearnedClauseSet, SolveStatus, SolverConfig};
use crate::encoder::{encode_batch, EncodedBatch, NetworkSpec};
use crate::error::{Error, Result};
use crate::params::Hyperparams;
use crate::runtime::{accuracy, decode_weights, infer, satisfies_margin, EvalMode, Provenance, TrainedModel};
use crate::seeds::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub share_clauses: bool,
    /// Models requested per batch.
    pub num_sols: usize,
    /// Seed for batch sampling and every solver job.
    pub seed: u64,
    /// Run one unassumed solve for batches where probing found no model, so
    /// every batch ends with a SAT/UNSAT verdict.
    pub fallback_solve: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            share_clauses: false,
            num_sols: 1,
            seed: 0,
            fallback_solve: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub meta: DatasetMeta,
    pub len: usize,
    pub dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchStatus {
    /// At least one certified model.
    Sat,
    Unsat,
    /// Neither a model nor a refutation within the budgets.
    Unknown,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub batch_id: usize,
    pub indices: Vec<usize>,
    pub seed: u64,
    pub num_vars: u32,
    pub num_clauses: usize,
    pub learned_clauses: Option<usize>,
    pub status: BatchStatus,
    pub probes: usize,
    pub shortfall: bool,
    /// Model file names in ranking order.
    pub models: Vec<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    pub file: String,
    pub batch_id: usize,
    pub seed: u64,
    pub holdout_accuracy: Option<f64>,
}

/// Everything needed to reproduce and audit a run. Contains no timings, so
/// identical inputs give identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub hyperparams: Hyperparams,
    pub network: NetworkSpec,
    pub dataset: DatasetDescriptor,
    pub options: TrainOptions,
    pub solver_timeout_secs: f64,
    pub lambda_all: Option<usize>,
    pub batches: Vec<BatchOutcome>,
    /// Best held-out accuracy first.
    pub ranking: Vec<RankedModel>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl fmt::Display for RunManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.batches {
            write!(f, "batch {}: {:?}", b.batch_id, b.status)?;
            if let Some(e) = &b.error {
                write!(f, " ({e})")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Wall-clock phase durations, kept out of the manifest.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub encode_secs: f64,
    pub learn_secs: f64,
    pub solve_secs: f64,
    pub solver_wall_secs: Vec<f64>,
}

pub struct TrainOutput {
    /// Certified models, best held-out accuracy first.
    pub models: Vec<TrainedModel>,
    pub manifest: RunManifest,
    pub timings: PhaseTimings,
    /// Batch formulas before any learned clauses were conjoined.
    pub batches: Vec<EncodedBatch>,
    pub lambdas: Vec<LearnedClauseSet>,
}

pub fn model_file_name(batch_id: usize, solution: usize) -> String {
    format!("batch{batch_id:03}_sol{solution:02}.json")
}

fn certify_model(model: &TrainedModel, batch: &[Example]) -> Result<()> {
    for (i, ex) in batch.iter().enumerate() {
        let y = infer(model, &ex.features)?;
        if !satisfies_margin(y, ex.label, &model.hp) {
            return Err(Error::Certification(format!(
                "batch example {i}: output {y} misses the margin for {:?}",
                ex.label
            )));
        }
    }
    Ok(())
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Runs both phases over `num_batches` sampled batches. Fails with
/// [`Error::TrainingFailed`] when no batch yields a certified model, and with
/// the first environment error if the solver cannot be run at all.
pub fn train(
    ds: &Dataset,
    net: &NetworkSpec,
    hp: &Hyperparams,
    cfg: &SolverConfig,
    opts: &TrainOptions,
    holdout: Option<&Dataset>,
) -> Result<TrainOutput> {
    hp.validate()?;
    net.validate()?;
    cfg.validate()?;
    if opts.num_sols == 0 {
        return Err(Error::Config("num_sols must be at least 1".into()));
    }
    if ds.dim() != net.input_dim {
        return Err(Error::Shape(format!(
            "dataset dimension {} does not match input_dim {}",
            ds.dim(),
            net.input_dim
        )));
    }
    let cfg = SolverConfig {
        seed: derive_seed(opts.seed, 1),
        ..cfg.clone()
    };
    let mut timings = PhaseTimings::default();

    let t = Instant::now();
    let indices = sample_batch_indices(ds.len(), hp.num_batches, hp.batch_size, derive_seed(opts.seed, 0))?;
    let examples: Vec<Vec<Example>> = indices
        .iter()
        .map(|idx| idx.iter().map(|&i| ds.examples[i].clone()).collect())
        .collect();
    let batches = examples
        .iter()
        .map(|b| encode_batch(net, b, hp))
        .collect::<Result<Vec<_>>>()?;
    timings.encode_secs = secs(t.elapsed());

    let mut outcomes: Vec<BatchOutcome> = batches
        .iter()
        .enumerate()
        .map(|(b, enc)| BatchOutcome {
            batch_id: b,
            indices: indices[b].clone(),
            seed: job_seed(&cfg, b),
            num_vars: enc.formula.var_count(),
            num_clauses: enc.formula.num_clauses(),
            learned_clauses: None,
            status: BatchStatus::Unknown,
            probes: 0,
            shortfall: false,
            models: Vec::new(),
            error: None,
        })
        .collect();

    // phase 1
    let t = Instant::now();
    let mut lambdas = Vec::new();
    let mut lambda_all = None;
    let mut environment: Option<Error> = None;
    let augmented: Vec<CnfFormula> = if opts.share_clauses {
        let jobs: Vec<Job> = batches
            .iter()
            .enumerate()
            .map(|(b, enc)| Job {
                batch_id: b,
                formula: &enc.formula,
                weight_vars: enc.weights.model_vars(),
                mode: JobMode::ImpliedClauses,
            })
            .collect();
        for (b, res) in run_batch_jobs(&jobs, &cfg)?.into_iter().enumerate() {
            match res {
                Ok(JobOutput::Clauses(set)) => {
                    outcomes[b].learned_clauses = Some(set.len());
                    lambdas.push(set);
                }
                Ok(_) => unreachable!("clause job returns clauses"),
                Err(e) => {
                    outcomes[b].status = BatchStatus::Error;
                    outcomes[b].error = Some(e.to_string());
                    if e.is_environment() {
                        environment.get_or_insert(e);
                    }
                }
            }
        }
        let merged = merge_lambda(&lambdas);
        lambda_all = Some(merged.len());
        batches
            .iter()
            .map(|enc| {
                let mut f = enc.formula.clone();
                merged.apply_to(&mut f);
                f
            })
            .collect()
    } else {
        Vec::new()
    };
    timings.learn_secs = secs(t.elapsed());
    if let Some(e) = environment {
        return Err(e);
    }

    // phase 2
    let t = Instant::now();
    let formula_of = |b: usize| augmented.get(b).unwrap_or(&batches[b].formula);
    let live: Vec<usize> = (0..batches.len())
        .filter(|&b| outcomes[b].status != BatchStatus::Error)
        .collect();
    let jobs: Vec<Job> = live
        .iter()
        .map(|&b| Job {
            batch_id: b,
            formula: formula_of(b),
            weight_vars: batches[b].weights.model_vars(),
            mode: JobMode::AssumptionSolve { num_sols: opts.num_sols },
        })
        .collect();
    let seeds: Vec<u64> = live.iter().map(|&b| outcomes[b].seed).collect();
    let results = run_jobs_with_seeds(&jobs, &seeds, &cfg)?;

    let mut fallback = Vec::new();
    let mut found: Vec<Vec<(usize, crate::cnf::Assignment)>> = vec![Vec::new(); batches.len()];
    for (&b, res) in live.iter().zip(results) {
        match res {
            Ok(JobOutput::Models(out)) => {
                outcomes[b].probes = out.probes;
                outcomes[b].shortfall = out.shortfall;
                for r in out.models {
                    timings.solver_wall_secs.push(secs(r.wall_time));
                    let k = found[b].len();
                    found[b].push((k, r.assignment.expect("SAT has a model")));
                }
                if found[b].is_empty() && opts.fallback_solve {
                    fallback.push(b);
                }
            }
            Ok(_) => unreachable!("assumption job returns models"),
            Err(e) => {
                outcomes[b].status = BatchStatus::Error;
                outcomes[b].error = Some(e.to_string());
                if e.is_environment() {
                    return Err(e);
                }
            }
        }
    }
    if !fallback.is_empty() {
        let jobs: Vec<Job> = fallback
            .iter()
            .map(|&b| Job {
                batch_id: b,
                formula: formula_of(b),
                weight_vars: batches[b].weights.model_vars(),
                mode: JobMode::Solve,
            })
            .collect();
        let seeds: Vec<u64> = fallback.iter().map(|&b| derive_seed(outcomes[b].seed, 1)).collect();
        for (&b, res) in fallback.iter().zip(run_jobs_with_seeds(&jobs, &seeds, &cfg)?) {
            match res {
                Ok(JobOutput::Solve(r)) => {
                    timings.solver_wall_secs.push(secs(r.wall_time));
                    outcomes[b].probes += 1;
                    match r.status {
                        SolveStatus::Sat => found[b].push((0, r.assignment.expect("SAT has a model"))),
                        SolveStatus::Unsat => outcomes[b].status = BatchStatus::Unsat,
                        SolveStatus::Timeout => {}
                    }
                }
                Ok(_) => unreachable!("solve job returns a result"),
                Err(e) => {
                    outcomes[b].status = BatchStatus::Error;
                    outcomes[b].error = Some(e.to_string());
                }
            }
        }
    }
    timings.solve_secs = secs(t.elapsed());

    let mut models: Vec<(RankedModel, TrainedModel)> = Vec::new();
    for (b, sols) in found.into_iter().enumerate() {
        for (k, asg) in sols {
            let decoded = decode_weights(&asg, &batches[b].weights, net, hp).and_then(|mut m| {
                m.provenance = Provenance {
                    batch_id: b,
                    seed: outcomes[b].seed,
                    solution: k,
                };
                certify_model(&m, &examples[b])?;
                Ok(m)
            });
            match decoded {
                Ok(m) => {
                    outcomes[b].status = BatchStatus::Sat;
                    let ranked = RankedModel {
                        file: model_file_name(b, k),
                        batch_id: b,
                        seed: outcomes[b].seed,
                        holdout_accuracy: holdout.map(|h| accuracy(&m, &h.examples, EvalMode::Sign)),
                    };
                    models.push((ranked, m));
                }
                Err(e) => {
                    log::warn!("batch {b} solution {k} rejected: {e}");
                    outcomes[b].error.get_or_insert_with(|| e.to_string());
                }
            }
        }
    }
    // stable: ties keep batch/solution order
    models.sort_by(|a, b| {
        let key = |r: &RankedModel| r.holdout_accuracy.unwrap_or(0.0);
        key(&b.0).total_cmp(&key(&a.0))
    });
    for (r, _) in &models {
        outcomes[r.batch_id].models.push(r.file.clone());
    }
    let (ranking, models): (Vec<_>, Vec<_>) = models.into_iter().unzip();

    let manifest = RunManifest {
        hyperparams: hp.clone(),
        network: net.clone(),
        dataset: DatasetDescriptor {
            meta: ds.meta.clone(),
            len: ds.len(),
            dim: ds.dim(),
        },
        options: opts.clone(),
        solver_timeout_secs: cfg.timeout.as_secs_f64(),
        lambda_all,
        batches: outcomes,
        ranking,
    };
    if models.is_empty() {
        return Err(Error::TrainingFailed(Box::new(manifest)));
    }
    Ok(TrainOutput {
        models,
        manifest,
        timings,
        batches,
        lambdas,
    })
}

/// Order statistics of per-model test accuracies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracies: Vec<f64>,
    pub min: f64,
    /// Lower median for an even count.
    pub median: f64,
    pub max: f64,
}

pub const CSV_HEADER: &str = "config,min,median,max";

impl EvalSummary {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Result<Self> {
        if accuracies.is_empty() {
            return Err(Error::Config("no models to evaluate".into()));
        }
        let mut sorted = accuracies.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(EvalSummary {
            min: sorted[0],
            median: sorted[(sorted.len() - 1) / 2],
            max: sorted[sorted.len() - 1],
            accuracies,
        })
    }

    /// Percentages with two decimals.
    pub fn csv_row(&self, config: &str) -> String {
        format!(
            "{config},{:.2},{:.2},{:.2}",
            100.0 * self.min,
            100.0 * self.median,
            100.0 * self.max
        )
    }
}

/// Plain-mode (sign threshold) accuracy of every model on `test`.
pub fn evaluate(models: &[TrainedModel], test: &Dataset) -> Result<EvalSummary> {
    EvalSummary::from_accuracies(
        models
            .iter()
            .map(|m| accuracy(m, &test.examples, EvalMode::Sign))
            .collect(),
    )
}
