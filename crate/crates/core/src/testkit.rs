// Test-only reference checker: unit propagation and a small DPLL. Shared by
// unit tests (as `crate::testkit`) and integration tests (via `#[path]`), and
// independent of the external solver path.
#![allow(dead_code)]

// `super::cnf` is `crate::cnf` in-crate; integration tests `use satnet_core::cnf;` at their root.
use super::cnf::{Assignment, CnfFormula, Lit, Var};

/// Extends `asg` by unit propagation; `None` on conflict.
pub fn propagate(f: &CnfFormula, mut asg: Assignment) -> Option<Assignment> {
    loop {
        let mut changed = false;
        for clause in f.clauses() {
            let mut unassigned: Option<Lit> = None;
            let mut open = 0;
            let mut satisfied = false;
            for &l in clause {
                match asg.lit(l) {
                    Some(true) => {
                        satisfied = true;
                        break;
                    }
                    Some(false) => {}
                    None => {
                        open += 1;
                        unassigned = Some(l);
                    }
                }
            }
            if satisfied {
                continue;
            }
            match open {
                0 => return None,
                1 => {
                    let l = unassigned.unwrap();
                    asg.set(l.var().unwrap(), l.is_positive());
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            return Some(asg);
        }
    }
}

/// Finds a model extending `assumptions`, or `None` if there is none.
pub fn solve(f: &CnfFormula, assumptions: &[Lit]) -> Option<Assignment> {
    let mut asg = Assignment::new();
    for &l in assumptions {
        match l.as_const() {
            Some(true) => continue,
            Some(false) => return None,
            None => {}
        }
        if asg.lit(l) == Some(false) {
            return None;
        }
        asg.set(l.var().unwrap(), l.is_positive());
    }
    let mut model = dpll(f, asg)?;
    for v in 1..=f.var_count() {
        if model.get(v).is_none() {
            model.set(v, false);
        }
    }
    debug_assert!(f.is_satisfied_by(&model));
    Some(model)
}

fn dpll(f: &CnfFormula, asg: Assignment) -> Option<Assignment> {
    let asg = propagate(f, asg)?;
    let branch: Option<Var> = f.clauses().iter().find_map(|c| {
        if c.iter().any(|&l| asg.lit(l) == Some(true)) {
            return None;
        }
        c.iter().find(|&&l| asg.lit(l).is_none()).and_then(|l| l.var())
    });
    let Some(v) = branch else {
        return Some(asg);
    };
    for value in [true, false] {
        let mut next = asg.clone();
        next.set(v, value);
        if let Some(m) = dpll(f, next) {
            return Some(m);
        }
    }
    None
}

pub fn is_sat(f: &CnfFormula, assumptions: &[Lit]) -> bool {
    solve(f, assumptions).is_some()
}

/// All distinct projections of the models onto `vars` (blocking-clause loop).
pub fn projected_models(f: &CnfFormula, vars: &[Var]) -> Vec<Vec<bool>> {
    let mut g = f.clone();
    let mut out = Vec::new();
    while let Some(m) = solve(&g, &[]) {
        let proj: Vec<bool> = vars.iter().map(|&v| m.get(v).unwrap()).collect();
        g.add_clause(
            vars.iter()
                .zip(&proj)
                .map(|(&v, &b)| Lit::new(v, !b)),
        );
        out.push(proj);
        if vars.is_empty() {
            break;
        }
    }
    out
}

/// Literals fixing `bits` to `value` in two's complement.
pub fn fix_value(bits: &[Lit], value: i64) -> Vec<Lit> {
    let w = bits.len();
    bits.iter()
        .enumerate()
        .map(|(i, &l)| if (value >> (w - 1 - i)) & 1 == 1 { l } else { !l })
        .collect()
}
