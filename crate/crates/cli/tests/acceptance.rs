//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remat_cli::curves::{chen_fixed_budget, cost_at_fixed_memory, memory_at_fixed_cost};
use remat_core::baselines::{check_bounds, chen_budget, chen_sqrt, state_space_oracle};
use remat_core::hetero::{solve_hetero, ChainSpec};
use remat_core::policy::naive_cost;
use remat_core::refchain::{
    finite_difference_error, full_bptt_reference, run_under_policy, seeded_inputs, ReferenceCell,
};
use remat_core::{
    solve, solve_hsm, solve_ism, solve_msm, Algorithm, CostModel, MemoryBudget, SolveRequest,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn budget(m: usize) -> MemoryBudget {
    MemoryBudget::new(m).unwrap()
}

fn boundary_exactness() -> Outcome {
    let n = 200;
    let hsm = solve_hsm(n, n).unwrap();
    let ism = solve_ism(n, n).unwrap();
    let mut checked = 0u64;
    for t in 1..=n {
        ensure(hsm.cost(t, 1).get() == naive_cost(t), || {
            format!("HSM cost({t}, 1)")
        })?;
        for m in t..=n {
            ensure(hsm.cost(t, m).get() == 2 * t as u64 - 1, || {
                format!("HSM cost({t}, {m})")
            })?;
            ensure(ism.cost(t, m).get() == t as u64, || {
                format!("ISM cost({t}, {m})")
            })?;
            checked += 2;
        }
    }
    for m in 0..=n {
        ensure(ism.cost(0, m).get() == 0, || format!("ISM cost(0, {m})"))?;
    }
    for (alpha, beta) in [(2, 1), (5, 4)] {
        let model = CostModel::new(alpha, beta).unwrap();
        let top = alpha as usize * n;
        for dedup in [false, true] {
            let msm = solve_msm(n, budget(top), model, dedup).unwrap();
            for t in 1..=n {
                for m in alpha as usize * t..=top {
                    ensure(msm.cost(t, m).get() == t as u64, || {
                        format!("MSM alpha={alpha} dedup={dedup} cost({t}, {m})")
                    })?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} boundary cells exact"))
}

fn oracle_equivalence() -> Outcome {
    let model = CostModel::new(2, 1).unwrap();
    let mut checked = 0;
    for alg in [
        Algorithm::Hsm,
        Algorithm::Ism,
        Algorithm::Msm,
        Algorithm::MsmDedup,
    ] {
        let table = solve(&SolveRequest::new(alg, 10, 4).with_model(model)).unwrap();
        for t in 0..=10 {
            for m in 1..=4 {
                let o = state_space_oracle(t, budget(m), &model, alg).map_err(|e| e.to_string())?;
                ensure(o == table.cost(t, m), || {
                    format!("{alg} t={t} m={m}: oracle {o}, solver {}", table.cost(t, m))
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!(
        "{checked} cells agree (HSM, ISM, MSM, MSM_DEDUP at alpha=2, beta=1)"
    ))
}

fn bound_suite() -> Outcome {
    let hsm = solve_hsm(3000, 64).unwrap();
    let ism = solve_ism(3000, 64).unwrap();
    let mut violations = check_bounds(&hsm).unwrap();
    violations.extend(check_bounds(&ism).unwrap());
    ensure(violations.is_empty(), || {
        format!("{} violations, first: {}", violations.len(), violations[0])
    })?;
    Ok("0 violations on t <= 3000, m <= 64".into())
}

fn headline_claim() -> Outcome {
    let ism = solve_ism(1000, 50).unwrap();
    let c = ism.cost(1000, 50).get();
    ensure(c <= 2000, || format!("ISM cost(1000, 50) = {c} > 2000"))?;
    let overhead = (c as f64 / 1000.0 + 2.0) / 3.0;
    Ok(format!(
        "ISM cost(1000, 50) = {c}; simulated time ratio {overhead:.4}"
    ))
}

fn dominance() -> Outcome {
    let n = 512;
    let slots = 32;
    for (alpha, beta) in [(2u32, 1u32), (5, 4)] {
        let model = CostModel::new(alpha, beta).unwrap();
        let units = alpha as usize * slots;
        let hsm = solve_hsm(n, units).unwrap();
        let ism = solve_ism(n, slots).unwrap();
        let msm = solve_msm(n, budget(units), model, false).unwrap();
        let dedup = solve_msm(n, budget(units), model, true).unwrap();
        for t in 1..=n {
            for m in 1..=units {
                ensure(msm.cost(t, m) <= hsm.cost(t, m), || {
                    format!("MSM > HSM at ({t}, {m}), alpha={alpha}")
                })?;
                ensure(dedup.cost(t, m) <= msm.cost(t, m), || {
                    format!("dedup > plain at ({t}, {m}), alpha={alpha}")
                })?;
            }
            for m in 1..=slots {
                ensure(msm.cost(t, alpha as usize * m) <= ism.cost(t, m), || {
                    format!(
                        "MSM({}) > ISM({m}) at t={t}, alpha={alpha}",
                        alpha as usize * m
                    )
                })?;
            }
            // alpha = beta + 1 for both models, the setting of Chen's scheme.
            let cb = chen_budget(t, &model);
            let chen = chen_sqrt(t, &model).total_forwards;
            ensure(cb <= units && dedup.cost(t, cb).get() <= chen, || {
                format!(
                    "solver {} > Chen {chen} at t={t}, budget {cb}",
                    dedup.cost(t, cb)
                )
            })?;
        }
    }
    Ok("t <= 512 at alpha/beta = 2/1 and 5/4".into())
}

fn executor_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2016);
    let algs = [
        Algorithm::Hsm,
        Algorithm::Ism,
        Algorithm::Msm,
        Algorithm::MsmDedup,
    ];
    for case in 0..200 {
        let cell = ReferenceCell::seeded(rng.gen());
        let model = cell.measured_model();
        let t = rng.gen_range(1..=64);
        let alg = algs[rng.gen_range(0..algs.len())];
        let top = alg.saturation(t, model.alpha) + 2;
        let m = rng.gen_range(1..=top);
        let inputs = seeded_inputs(t, cell.input_dim, rng.gen());
        let table = solve(&SolveRequest::new(alg, t, m).with_model(model)).unwrap();
        let (grads, trace) = run_under_policy(&cell, &inputs, &table, budget(m), Some(&model))
            .map_err(|e| e.to_string())?;
        let reference = full_bptt_reference(&cell, &inputs);
        ensure(grads == reference, || {
            format!("case {case}: {alg} t={t} m={m} gradients differ")
        })?;
        ensure(trace.forward_ops == table.cost(t, m).get(), || {
            format!(
                "case {case}: {alg} t={t} m={m} ran {} forwards, table says {}",
                trace.forward_ops,
                table.cost(t, m)
            )
        })?;
        ensure(trace.peak_memory_units <= m, || {
            format!(
                "case {case}: {alg} t={t} m={m} peak {}",
                trace.peak_memory_units
            )
        })?;
    }
    let cell = ReferenceCell::seeded(7);
    let err = finite_difference_error(&cell, &seeded_inputs(32, cell.input_dim, 8), 1e-6);
    ensure(err < 1e-5, || {
        format!("finite-difference relative error {err:e}")
    })?;
    Ok(format!(
        "200 cases bit-exact; finite-difference relative error {err:.2e}"
    ))
}

fn hetero_reduction() -> Outcome {
    let n = 64;
    let chain = ChainSpec::uniform(n, 1.0, 1, 1).unwrap();
    let h = solve_hetero(&chain, n + 1).unwrap();
    let hsm = solve_hsm(n, 8).unwrap();
    for t in 1..=n {
        for m in 1..=8 {
            let (a, b) = (h.cost(t, m as i64, 0), hsm.cost(t, m).get() as f64);
            ensure(a == b, || format!("hetero({t}, {m}) = {a}, HSM = {b}"))?;
        }
        let plentiful = h.cost(t, (n + 1) as i64, 0);
        ensure(plentiful == (2 * t - 1) as f64, || {
            format!("plentiful({t}) = {plentiful}")
        })?;
        // One unit holds the working layer and leaves no room for checkpoints.
        let bare = h.cost(t, 1, 0);
        ensure(bare == naive_cost(t) as f64, || {
            format!("no-checkpoint({t}) = {bare}")
        })?;
    }
    Ok("unit chain equals HSM for t <= 64, m <= 8; boundaries 2t-1 and t(t+1)/2".into())
}

fn chen_comparison() -> Outcome {
    let ts = [16, 64, 256, 1024];
    let mut worst_cost: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for beta in [2u32, 5, 10] {
        let model = CostModel::new(beta + 1, beta).unwrap();
        for pt in cost_at_fixed_memory(&ts, &model).unwrap() {
            if pt.algorithm != "MSM_DEDUP" {
                continue;
            }
            let per_step = pt.forwards as f64 / pt.t as f64;
            ensure(pt.m == chen_fixed_budget(pt.t, &model), || {
                "budget mismatch".into()
            })?;
            ensure(per_step <= 2.0, || {
                format!("beta={beta} t={}: {per_step} forwards/step", pt.t)
            })?;
            worst_cost = worst_cost.max(per_step);
        }
        for pt in memory_at_fixed_cost(&[1024], &model).unwrap() {
            if pt.algorithm != "MSM_DEDUP" {
                continue;
            }
            ensure(pt.memory <= 1.0, || {
                format!("beta={beta}: memory ratio {}", pt.memory)
            })?;
            worst_ratio = worst_ratio.max(pt.memory);
        }
    }
    Ok(format!(
        "max {worst_cost:.4} forwards/step at Chen's budget; max memory ratio {worst_ratio:.4} at t=1024"
    ))
}

fn determinism() -> Outcome {
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_remat"))
            .args(args)
            .env_remove("REMAT_MAX_T")
            .output()
            .map_err(|e| e.to_string())
    };
    let mut bytes = 0;
    for args in [
        &["curves", "--figure", "strategy_compare", "--t", "300"][..],
        &[
            "curves",
            "--figure",
            "chen_cost_fixed_memory",
            "--t",
            "256",
            "--t-step",
            "5",
        ][..],
    ] {
        let a = run(args)?;
        let b = run(args)?;
        ensure(a.status.success() && b.status.success(), || {
            format!("{args:?} failed: {}", String::from_utf8_lossy(&a.stderr))
        })?;
        ensure(a.stdout == b.stdout, || {
            format!("{args:?} output differs between runs")
        })?;
        bytes += a.stdout.len();
    }
    Ok(format!("byte-identical output ({bytes} bytes)"))
}

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: 1,
            name: "boundary exactness",
            limit: Some(Duration::from_secs(1)),
            run: boundary_exactness,
        },
        Criterion {
            id: 2,
            name: "oracle equivalence",
            limit: Some(Duration::from_secs(300)),
            run: oracle_equivalence,
        },
        Criterion {
            id: 3,
            name: "bound suite",
            limit: Some(Duration::from_secs(120)),
            run: bound_suite,
        },
        Criterion {
            id: 4,
            name: "ISM headline claim",
            limit: None,
            run: headline_claim,
        },
        Criterion {
            id: 5,
            name: "dominance",
            limit: None,
            run: dominance,
        },
        Criterion {
            id: 6,
            name: "executor fidelity",
            limit: None,
            run: executor_fidelity,
        },
        Criterion {
            id: 7,
            name: "heterogeneous reduction",
            limit: None,
            run: hetero_reduction,
        },
        Criterion {
            id: 8,
            name: "Chen comparison",
            limit: None,
            run: chen_comparison,
        },
        Criterion {
            id: 9,
            name: "determinism",
            limit: None,
            run: determinism,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => {
                Err(format!("took {elapsed:.2?}, limit {limit:?}"))
            }
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS [{}] {}: {detail} ({elapsed:.2?})", c.id, c.name),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {}: {detail} ({elapsed:.2?})", c.id, c.name);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
