//! External SAT solver invocation, the randomized-assumption probing
//! curriculum (clause learning and model search) and the parallel job runner.
//!
//! Every probe writes a copy of the formula with its assumptions appended as
//! unit clauses, so any solver that reads DIMACS and prints competition-style
//! `s`/`v` lines works. All parallelism in the crate lives here.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::cnf::{Assignment, CnfFormula, Lit, Var};
use crate::error::{Error, Result};
use crate::seeds::derive_seed;

/// Budgets and decay schedule of the probing curriculum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    /// Outer iterations per round; each runs `ceil(n / chunk)` probes.
    pub probes_per_round: usize,
    pub max_rounds: usize,
    /// Clause learning stops once this many distinct clauses are known.
    pub max_clauses: usize,
    /// Chunk size never decays below this (unless it starts below it).
    pub chunk_floor: usize,
    /// Fraction removed from the chunk size after each round.
    pub decay: f64,
}

impl Default for Curriculum {
    fn default() -> Self {
        Curriculum {
            probes_per_round: 100,
            max_rounds: 20,
            max_clauses: 500,
            chunk_floor: 50,
            decay: 0.05,
        }
    }
}

impl Curriculum {
    /// Chunk size for the round after one run at `chunk`; never increases.
    pub fn next_chunk(&self, chunk: usize) -> usize {
        let decayed = (chunk as f64 - self.decay * chunk as f64).floor() as usize;
        decayed.max(self.chunk_floor).min(chunk)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Executable and arguments, whitespace separated. `{input}` is replaced
    /// by the DIMACS path and `{seed}` by the probe seed; without `{input}`
    /// the path is appended as the last argument.
    pub solver_command: String,
    pub timeout: Duration,
    pub seed: u64,
    pub max_parallel: usize,
    pub curriculum: Curriculum,
}

impl SolverConfig {
    pub fn new(solver_command: impl Into<String>) -> Self {
        SolverConfig {
            solver_command: solver_command.into(),
            timeout: Duration::from_secs(180),
            seed: 0,
            max_parallel: 1,
            curriculum: Curriculum::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout.is_zero() {
            return Err(Error::Config("solver timeout must be positive".into()));
        }
        if self.max_parallel == 0 {
            return Err(Error::Config("max_parallel must be at least 1".into()));
        }
        if self.solver_command.split_whitespace().next().is_none() {
            return Err(Error::Config("empty solver command".into()));
        }
        if self.curriculum.probes_per_round == 0 {
            return Err(Error::Config("probes_per_round must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.curriculum.decay) {
            return Err(Error::Config("curriculum decay must be in [0, 1)".into()));
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.max_parallel)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }

    fn argv(&self, input: &Path, seed: u64) -> Vec<String> {
        let input = input.to_string_lossy();
        let mut saw_input = false;
        let mut argv: Vec<String> = self
            .solver_command
            .split_whitespace()
            .map(|tok| {
                saw_input |= tok.contains("{input}");
                tok.replace("{input}", &input).replace("{seed}", &seed.to_string())
            })
            .collect();
        if !saw_input {
            argv.push(input.into_owned());
        }
        argv
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SolveStatus {
    Sat,
    Unsat,
    Timeout,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Present iff `status` is SAT; certified against the submitted clauses.
    pub assignment: Option<Assignment>,
    pub wall_time: Duration,
}

impl SolveResult {
    fn without_model(status: SolveStatus, wall_time: Duration) -> Self {
        SolveResult {
            status,
            assignment: None,
            wall_time,
        }
    }
}

/// A formula rendered once to DIMACS clause lines, reused by every probe.
pub struct PreparedFormula<'a> {
    formula: &'a CnfFormula,
    body: String,
}

impl<'a> PreparedFormula<'a> {
    pub fn new(formula: &'a CnfFormula) -> Self {
        let mut body = String::with_capacity(formula.num_clauses() * 16);
        for clause in formula.clauses() {
            for lit in clause {
                write!(body, "{} ", lit.to_dimacs()).unwrap();
            }
            body.push_str("0\n");
        }
        PreparedFormula { formula, body }
    }

    pub fn formula(&self) -> &CnfFormula {
        self.formula
    }

    fn write_with_units(&self, path: &Path, units: &[Lit]) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::file(path, e))?);
        let io = |e| Error::file(path, e);
        writeln!(out, "p cnf {} {}", self.formula.var_count(), self.formula.num_clauses() + units.len()).map_err(io)?;
        out.write_all(self.body.as_bytes()).map_err(io)?;
        for lit in units {
            writeln!(out, "{} 0", lit.to_dimacs()).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Solves `formula` under `assumptions` with the configured seed.
pub fn solve(formula: &CnfFormula, assumptions: &[Lit], cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    solve_prepared(&PreparedFormula::new(formula), assumptions, cfg, cfg.seed)
}

/// One solver process over a prepared formula.
pub fn solve_prepared(
    prepared: &PreparedFormula<'_>,
    assumptions: &[Lit],
    cfg: &SolverConfig,
    seed: u64,
) -> Result<SolveResult> {
    let start = Instant::now();
    // constant assumptions never reach the file
    let mut units = Vec::with_capacity(assumptions.len());
    for &lit in assumptions {
        match lit.as_const() {
            Some(true) => {}
            Some(false) => return Ok(SolveResult::without_model(SolveStatus::Unsat, start.elapsed())),
            None => units.push(lit),
        }
    }
    let dir = tempfile::Builder::new().prefix("satnet-probe").tempdir()?;
    let input = dir.path().join("input.cnf");
    let output = dir.path().join("output.txt");
    prepared.write_with_units(&input, &units)?;

    let argv = cfg.argv(&input, seed);
    let stdout = fs::File::create(&output).map_err(|e| Error::file(&output, e))?;
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(stdout)
        .stderr(Stdio::null())
        .spawn()
        .map_err(|source| Error::SolverMissing {
            command: argv[0].clone(),
            source,
        })?;
    let exit = match child.wait_timeout(cfg.timeout)? {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            log::debug!("solver timed out after {:?}", cfg.timeout);
            return Ok(SolveResult::without_model(SolveStatus::Timeout, start.elapsed()));
        }
    };
    let wall_time = start.elapsed();
    let text = fs::read_to_string(&output).map_err(|e| Error::file(&output, e))?;
    let (status, assignment) = parse_solver_output(&text, exit.code())?;
    if status != SolveStatus::Sat {
        return Ok(SolveResult::without_model(status, wall_time));
    }
    let assignment = assignment.ok_or_else(|| Error::SolverOutput("SAT answer without value lines".into()))?;
    certify_assignment(prepared.formula, &units, &assignment)?;
    Ok(SolveResult {
        status,
        assignment: Some(assignment),
        wall_time,
    })
}

/// Checks a model against every clause and assumption.
pub fn certify_assignment(formula: &CnfFormula, assumptions: &[Lit], assignment: &Assignment) -> Result<()> {
    if let Some(i) = formula.first_violated(assignment) {
        return Err(Error::Certification(format!("solver model violates clause {i}")));
    }
    if let Some(lit) = assumptions.iter().find(|&&l| assignment.lit(l) != Some(true)) {
        return Err(Error::Certification(format!("solver model violates assumption {lit}")));
    }
    Ok(())
}

/// Parses competition output; exit codes 10/20 are used only when no status
/// line is present. `s UNKNOWN` counts as a timeout.
pub fn parse_solver_output(text: &str, exit_code: Option<i32>) -> Result<(SolveStatus, Option<Assignment>)> {
    let mut status = None;
    let mut values: Option<Assignment> = None;
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("s ") {
            status = Some(match rest.trim() {
                "SATISFIABLE" => SolveStatus::Sat,
                "UNSATISFIABLE" => SolveStatus::Unsat,
                "UNKNOWN" => SolveStatus::Timeout,
                other => return Err(Error::SolverOutput(format!("unknown status `{other}`"))),
            });
        } else if let Some(rest) = line.strip_prefix("v ").or_else(|| (line == "v").then_some("")) {
            let asg = values.get_or_insert_with(Assignment::new);
            for tok in rest.split_whitespace() {
                let code: i32 = tok
                    .parse()
                    .map_err(|_| Error::SolverOutput(format!("bad value token `{tok}`")))?;
                if code == 0 {
                    break;
                }
                let lit = Lit::from_dimacs(code)
                    .ok_or_else(|| Error::SolverOutput(format!("bad literal {code}")))?;
                asg.set(lit.var().expect("non-constant"), lit.is_positive());
            }
        }
    }
    let status = match (status, exit_code) {
        (Some(s), _) => s,
        (None, Some(10)) => SolveStatus::Sat,
        (None, Some(20)) => SolveStatus::Unsat,
        (None, code) => {
            return Err(Error::SolverOutput(format!(
                "no status line (exit code {code:?})"
            )))
        }
    };
    Ok((status, values))
}

/// Clauses implied by one batch formula (or a merge of several).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LearnedClauseSet {
    /// Originating batch; `None` after merging.
    pub origin: Option<usize>,
    pub clauses: Vec<Vec<Lit>>,
}

fn normalized(clause: &[Lit]) -> Vec<Lit> {
    let mut c = clause.to_vec();
    c.sort_by_key(|l| (l.var(), l.is_positive()));
    c.dedup();
    c
}

impl LearnedClauseSet {
    pub fn new(origin: Option<usize>) -> Self {
        LearnedClauseSet {
            origin,
            clauses: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    /// Conjoins every clause into `formula`.
    pub fn apply_to(&self, formula: &mut CnfFormula) {
        for c in &self.clauses {
            formula.add_clause(c.iter().copied());
        }
    }

    /// `c origin <id>` header (omitted when merged), then one DIMACS clause
    /// per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(o) = self.origin {
            writeln!(out, "c origin {o}").unwrap();
        }
        for c in &self.clauses {
            for l in c {
                write!(out, "{} ", l.to_dimacs()).unwrap();
            }
            out.push_str("0\n");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut set = LearnedClauseSet::new(None);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
            if let Some(rest) = line.strip_prefix("c origin ") {
                set.origin = Some(rest.trim().parse().map_err(|_| parse_err("bad origin".into()))?);
                continue;
            }
            if line.is_empty() || line.starts_with('c') {
                continue;
            }
            let codes = line
                .split_whitespace()
                .map(|t| t.parse::<i32>().map_err(|_| parse_err(format!("bad literal `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
            if codes.last() != Some(&0) {
                return Err(parse_err("clause not terminated by 0".into()));
            }
            let clause = codes[..codes.len() - 1]
                .iter()
                .map(|&c| Lit::from_dimacs(c).ok_or_else(|| parse_err(format!("bad literal {c}"))))
                .collect::<Result<Vec<_>>>()?;
            set.clauses.push(clause);
        }
        Ok(set)
    }
}

/// Concatenation with duplicate clauses (up to literal order) removed.
pub fn merge_lambda(sets: &[LearnedClauseSet]) -> LearnedClauseSet {
    let mut seen = HashSet::new();
    let mut merged = LearnedClauseSet::new(match sets {
        [one] => one.origin,
        _ => None,
    });
    for c in sets.iter().flat_map(|s| &s.clauses) {
        let key = normalized(c);
        if seen.insert(key.clone()) {
            merged.clauses.push(key);
        }
    }
    merged
}

/// Re-solves `formula ∧ ¬c` for every clause; `true` where that is UNSAT.
pub fn certify_clauses(formula: &CnfFormula, set: &LearnedClauseSet, cfg: &SolverConfig) -> Result<Vec<bool>> {
    cfg.validate()?;
    let prepared = PreparedFormula::new(formula);
    cfg.pool()?.install(|| {
        set.clauses
            .par_iter()
            .map(|c| {
                let negated: Vec<Lit> = c.iter().map(|&l| !l).collect();
                let r = solve_prepared(&prepared, &negated, cfg, cfg.seed)?;
                Ok(r.status == SolveStatus::Unsat)
            })
            .collect()
    })
}

struct Probe {
    assumptions: Vec<Lit>,
    seed: u64,
}

fn round_probes(rng: &mut ChaCha8Rng, vars: &[Var], chunk: usize, cur: &Curriculum) -> Vec<Probe> {
    let outer = vars.len().div_ceil(chunk);
    (0..cur.probes_per_round * outer)
        .map(|_| {
            let assumptions = sample(rng, vars.len(), chunk)
                .into_iter()
                .map(|i| Lit::new(vars[i], rng.random_bool(0.5)))
                .collect();
            Probe {
                assumptions,
                seed: rng.random(),
            }
        })
        .collect()
}

/// Solves probes in windows of `max_parallel` on the current pool and hands
/// results to `visit` in probe order; `visit` returns `false` to stop.
fn run_probes(
    prepared: &PreparedFormula<'_>,
    probes: &[Probe],
    cfg: &SolverConfig,
    mut visit: impl FnMut(&Probe, SolveResult) -> bool,
) -> Result<bool> {
    for window in probes.chunks(cfg.max_parallel) {
        let results: Vec<Result<SolveResult>> = window
            .par_iter()
            .map(|p| solve_prepared(prepared, &p.assumptions, cfg, p.seed))
            .collect();
        for (probe, result) in window.iter().zip(results) {
            if !visit(probe, result?) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn implied_clauses_with(
    formula: &CnfFormula,
    weight_vars: &[Var],
    cfg: &SolverConfig,
    seed: u64,
    origin: Option<usize>,
) -> Result<LearnedClauseSet> {
    let cur = &cfg.curriculum;
    let mut set = LearnedClauseSet::new(origin);
    if weight_vars.is_empty() || cur.max_clauses == 0 {
        return Ok(set);
    }
    let prepared = PreparedFormula::new(formula);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut chunk = weight_vars.len();
    for round in 0..cur.max_rounds {
        let probes = round_probes(&mut rng, weight_vars, chunk, cur);
        let before = set.len();
        let open = run_probes(&prepared, &probes, cfg, |probe, r| {
            if r.status == SolveStatus::Unsat {
                let clause: Vec<Lit> = probe.assumptions.iter().map(|&l| !l).collect();
                if seen.insert(normalized(&clause)) {
                    set.clauses.push(clause);
                }
            }
            set.len() < cur.max_clauses
        })?;
        log::debug!("round {round}: chunk {chunk}, {} clauses", set.len());
        if !open || set.len() == before {
            break;
        }
        chunk = cur.next_chunk(chunk);
    }
    Ok(set)
}

/// Learns blocking clauses over `weight_vars` from UNSAT random-assumption
/// probes. Each returned clause `c` has `formula ∧ ¬c` UNSAT by construction.
/// Stops at the round or clause budget, or after a round that learned nothing
/// new.
pub fn implied_clauses(formula: &CnfFormula, weight_vars: &[Var], cfg: &SolverConfig) -> Result<LearnedClauseSet> {
    cfg.validate()?;
    cfg.pool()?
        .install(|| implied_clauses_with(formula, weight_vars, cfg, cfg.seed, None))
}

#[derive(Clone, Debug)]
pub struct AssumptionOutcome {
    /// Certified SAT results with pairwise-distinct weight projections.
    pub models: Vec<SolveResult>,
    /// The budget ran out before `num_sols` models were found.
    pub shortfall: bool,
    pub probes: usize,
}

fn assumption_solve_with(
    formula: &CnfFormula,
    weight_vars: &[Var],
    num_sols: usize,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<AssumptionOutcome> {
    if num_sols == 0 {
        return Err(Error::Config("num_sols must be at least 1".into()));
    }
    let cur = &cfg.curriculum;
    let prepared = PreparedFormula::new(formula);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = AssumptionOutcome {
        models: Vec::new(),
        shortfall: false,
        probes: 0,
    };
    if weight_vars.is_empty() {
        let r = solve_prepared(&prepared, &[], cfg, rng.random())?;
        out.probes = 1;
        if r.status == SolveStatus::Sat {
            out.models.push(r);
        }
        out.shortfall = out.models.len() < num_sols;
        return Ok(out);
    }
    let mut chunk = ((0.9 * weight_vars.len() as f64).round() as usize).max(1);
    for _ in 0..cur.max_rounds {
        let probes = round_probes(&mut rng, weight_vars, chunk, cur);
        let open = run_probes(&prepared, &probes, cfg, |_, r| {
            out.probes += 1;
            if r.status == SolveStatus::Sat {
                let key = r.assignment.as_ref().expect("SAT has a model").restricted_to(weight_vars);
                if seen.insert(key) {
                    out.models.push(r);
                }
            }
            out.models.len() < num_sols
        })?;
        if !open {
            return Ok(out);
        }
        chunk = cur.next_chunk(chunk);
    }
    out.shortfall = true;
    Ok(out)
}

/// Collects up to `num_sols` models by solving under random partial weight
/// assignments, starting with 90% of the weight variables fixed.
pub fn assumption_solve(
    formula: &CnfFormula,
    weight_vars: &[Var],
    num_sols: usize,
    cfg: &SolverConfig,
) -> Result<AssumptionOutcome> {
    cfg.validate()?;
    cfg.pool()?
        .install(|| assumption_solve_with(formula, weight_vars, num_sols, cfg, cfg.seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobMode {
    /// One plain solve without assumptions.
    Solve,
    ImpliedClauses,
    AssumptionSolve { num_sols: usize },
}

impl JobMode {
    pub fn as_text(&self) -> String {
        match self {
            JobMode::Solve => "solve".into(),
            JobMode::ImpliedClauses => "implied".into(),
            JobMode::AssumptionSolve { num_sols } => format!("assume:{num_sols}"),
        }
    }

    pub fn parse(text: &str) -> Option<JobMode> {
        match text {
            "solve" => Some(JobMode::Solve),
            "implied" => Some(JobMode::ImpliedClauses),
            _ => {
                let n = text.strip_prefix("assume:")?.parse().ok()?;
                (n > 0).then_some(JobMode::AssumptionSolve { num_sols: n })
            }
        }
    }
}

pub struct Job<'a> {
    pub batch_id: usize,
    pub formula: &'a CnfFormula,
    pub weight_vars: &'a [Var],
    pub mode: JobMode,
}

#[derive(Clone, Debug)]
pub enum JobOutput {
    Solve(SolveResult),
    Clauses(LearnedClauseSet),
    Models(AssumptionOutcome),
}

/// Seed of the job at position `index`.
pub fn job_seed(cfg: &SolverConfig, index: usize) -> u64 {
    derive_seed(cfg.seed, index as u64)
}

/// Runs jobs on a pool of `max_parallel` workers. Results come back in job
/// order, each job's randomness depends only on `(cfg.seed, index)`, and a
/// failing job does not affect its siblings.
pub fn run_batch_jobs(jobs: &[Job<'_>], cfg: &SolverConfig) -> Result<Vec<Result<JobOutput>>> {
    let seeds: Vec<u64> = (0..jobs.len()).map(|i| job_seed(cfg, i)).collect();
    run_jobs_with_seeds(jobs, &seeds, cfg)
}

/// [`run_batch_jobs`] with caller-chosen per-job seeds.
pub fn run_jobs_with_seeds(jobs: &[Job<'_>], seeds: &[u64], cfg: &SolverConfig) -> Result<Vec<Result<JobOutput>>> {
    cfg.validate()?;
    if seeds.len() != jobs.len() {
        return Err(Error::Config(format!("{} seeds for {} jobs", seeds.len(), jobs.len())));
    }
    let pool = cfg.pool()?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .zip(seeds)
            .map(|(job, &seed)| run_job(job, seed, cfg))
            .collect()
    }))
}

fn run_job(job: &Job<'_>, seed: u64, cfg: &SolverConfig) -> Result<JobOutput> {
    match job.mode {
        JobMode::Solve => solve_prepared(&PreparedFormula::new(job.formula), &[], cfg, seed).map(JobOutput::Solve),
        JobMode::ImpliedClauses => {
            implied_clauses_with(job.formula, job.weight_vars, cfg, seed, Some(job.batch_id)).map(JobOutput::Clauses)
        }
        JobMode::AssumptionSolve { num_sols } => {
            assumption_solve_with(job.formula, job.weight_vars, num_sols, cfg, seed).map(JobOutput::Models)
        }
    }
}

/// One line of a job manifest for manual distribution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JobSpec {
    pub batch_id: usize,
    pub cnf_path: PathBuf,
    pub mode: JobMode,
    pub seed: u64,
}

/// Tab-separated `batch_id cnf_path mode seed` lines.
pub fn write_job_manifest(specs: &[JobSpec]) -> String {
    specs
        .iter()
        .map(|s| {
            format!(
                "{}\t{}\t{}\t{}\n",
                s.batch_id,
                s.cnf_path.display(),
                s.mode.as_text(),
                s.seed
            )
        })
        .collect()
}

pub fn parse_job_manifest(text: &str) -> Result<Vec<JobSpec>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, line)| {
            let err = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [batch, path, mode, seed] = fields[..] else {
                return Err(err("expected 4 tab-separated fields"));
            };
            Ok(JobSpec {
                batch_id: batch.parse().map_err(|_| err("bad batch id"))?,
                cnf_path: PathBuf::from(path),
                mode: JobMode::parse(mode).ok_or_else(|| err("bad mode"))?,
                seed: seed.parse().map_err(|_| err("bad seed"))?,
            })
        })
        .collect()
}
