//! Reads a DIMACS CNF file, solves it with CaDiCaL and prints the result in
//! SAT-competition format. Exit code 10 for SAT, 20 for UNSAT, 0 otherwise.
//!
//! A non-zero `--seed` renames variables and reorders clauses with a seeded
//! permutation before solving, which changes the search without changing
//! the answer.

use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use satnet_core::cnf::CnfFormula;

#[derive(Parser)]
#[command(version, about = "CaDiCaL behind a DIMACS file interface")]
struct Args {
    /// DIMACS input file.
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("satnet-cadical: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(args: Args) -> Result<u8> {
    let text = std::fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let formula = CnfFormula::parse_dimacs(&text)?;
    let n = formula.var_count() as usize;

    // rename[v] is the solver-side id of variable v
    let mut rename: Vec<i32> = (0..=n as i32).collect();
    let mut order: Vec<usize> = (0..formula.num_clauses()).collect();
    if args.seed != 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        rename[1..].shuffle(&mut rng);
        order.shuffle(&mut rng);
    }
    let map = |code: i32| code.signum() * rename[code.unsigned_abs() as usize];

    let mut solver: cadical::Solver = cadical::Solver::new();
    solver.reserve(n as i32);
    for &i in &order {
        solver.add_clause(formula.clauses()[i].iter().map(|l| map(l.to_dimacs())));
    }

    let out = io::stdout();
    let mut out = BufWriter::new(out.lock());
    match solver.solve() {
        Some(true) => {
            writeln!(out, "s SATISFIABLE")?;
            let mut line = String::from("v");
            for v in 1..=n as i32 {
                let value = solver.value(rename[v as usize]).unwrap_or(false);
                line.push_str(&format!(" {}", if value { v } else { -v }));
                if line.len() > 72 {
                    writeln!(out, "{line}")?;
                    line = String::from("v");
                }
            }
            writeln!(out, "{line} 0")?;
            out.flush()?;
            Ok(10)
        }
        Some(false) => {
            writeln!(out, "s UNSATISFIABLE")?;
            out.flush()?;
            Ok(20)
        }
        None => {
            writeln!(out, "s UNKNOWN")?;
            out.flush()?;
            Ok(0)
        }
    }
}
