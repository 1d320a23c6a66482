//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p lincomb --test acceptance`. Set `ACCEPTANCE_ONLY`
//! to a comma-separated list of criterion numbers to run a subset.

use std::collections::BTreeSet;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lincomb::alignment::{gsa_gengrad, solve_gsa, AlignGrid, DEFAULT_GAMMA};
use lincomb::assignment::{matching_loss, solve_assignment, CostMatrix, MatchingLayer};
use lincomb::cli::{fit_exponent, run_bench, BenchKind};
use lincomb::experiments::{
    train_bags, train_seq, FeedKind, LossKind, MetricsRow, Recorder, TrainConfig, TrainOutcome,
};
use lincomb::lpref::{
    check_theorem1, enumerate_paths, enumerate_permutations, random_feasible_lp, solve_lp, FD_EPS, FD_REL_TOL,
};
use lincomb::matrix::dot;
use lincomb::tape::{log_softmax_rows, Tape, Var};
use lincomb::{Error, Matrix, Result};

const EXACT: f64 = 1e-9;
const ORACLE_SECONDS: f64 = 30.0;
const TAPE_EPS: f64 = 1e-4;
const TAPE_REL: f64 = 1e-5;
const BAG_SECONDS: f64 = 300.0;
const SEQ_SECONDS: f64 = 600.0;
/// Independent training runs per configuration in the trend criteria.
const SEEDS: u64 = 5;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xacce_0000 + tag)
}

fn random_square(rng: &mut ChaCha8Rng, n: usize) -> CostMatrix {
    CostMatrix::new(Matrix::from_fn(n, n, |_, _| rng.random_range(-10.0..10.0))).unwrap()
}

fn c1_assignment_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = rng(1);
    let mut worst = 0.0_f64;
    for b in 2..=8 {
        for _ in 0..200 {
            let c = random_square(&mut rng, b);
            let z = solve_assignment(&c).unwrap().z_star;
            worst = worst.max((z - enumerate_permutations(&c).0).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= EXACT && secs < ORACLE_SECONDS,
        format!("1400 instances, b in 2..=8, max |dz| = {worst:.2e}, {secs:.1} s"),
    )
}

fn c2_dual_certificates() -> Verdict {
    let mut rng = rng(2);
    let (mut total, mut bad) = (0, 0);
    let mut worst = 0.0_f64;
    for b in 2..=8 {
        for _ in 0..200 {
            let c = random_square(&mut rng, b);
            let r = solve_assignment(&c).unwrap();
            let m = c.matrix();
            let mut err = 0.0_f64;
            for j in 0..b {
                for k in 0..b {
                    err = err.max(r.duals_u[j] + r.duals_v[k] - m[(j, k)]);
                }
                err = err.max((r.duals_u[j] + r.duals_v[r.perm[j]] - m[(j, r.perm[j])]).abs());
            }
            let sum: f64 = r.duals_u.iter().chain(&r.duals_v).sum();
            err = err.max((sum - r.z_star).abs());
            worst = worst.max(err);
            total += 1;
            bad += usize::from(err > EXACT);
        }
    }
    verdict(
        bad == 0,
        format!("{}/{total} certified (feasibility, slackness, sum), worst {worst:.2e}", total - bad),
    )
}

fn c3_alignment_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = rng(3);
    let mut worst = 0.0_f64;
    let mut count = 0;
    for tp in 1..=7 {
        for tt in 1..=7 {
            for _ in 0..200 {
                let m = Matrix::from_fn(tp, tt, |_, _| rng.random_range(0.0..5.0));
                let g = AlignGrid::new(m, DEFAULT_GAMMA).unwrap();
                worst = worst.max((solve_gsa(&g).z_star - enumerate_paths(&g).0).abs());
                count += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= EXACT && secs < ORACLE_SECONDS,
        format!("{count} grids, every shape up to 7x7, max |dz| = {worst:.2e}, {secs:.1} s"),
    )
}

/// Central quotient of `z*` along the reported A-block direction.
fn a_block_central_error(spec: &lincomb::grad::LpSpec, dir: &[f64], analytic: f64) -> f64 {
    let (m, p) = (spec.num_constraints(), spec.num_vars());
    let z = |s: f64| {
        let a = Matrix::from_fn(m, p, |i, j| spec.a()[(i, j)] + s * FD_EPS * dir[i * p + j]);
        solve_lp(&spec.with_a(a).unwrap()).unwrap().z_star
    };
    let numeric = (z(1.0) - z(-1.0)) / (2.0 * FD_EPS);
    (numeric - analytic).abs() / analytic.abs().max(1.0)
}

fn c4_lp_blocks() -> Verdict {
    let mut rng = rng(4);
    let (mut checked, mut sampled, mut failed, mut degenerate) = (0, 0, 0, 0);
    let mut notes = Vec::new();
    while checked < 100 {
        let p = rng.random_range(2..=8);
        let m = rng.random_range(1..=(p - 1).min(5));
        let spec = random_feasible_lp(&mut rng, p, m);
        sampled += 1;
        let outcome = solve_lp(&spec).unwrap();
        match check_theorem1(&spec, &outcome, FD_EPS, FD_REL_TOL, &mut rng) {
            Ok(rep) => {
                checked += 1;
                for (name, block) in [("c", &rep.c_block), ("b", &rep.b_block), ("A", &rep.a_block)] {
                    if !block.pass {
                        failed += 1;
                        let rel = block.abs_error / block.analytic.abs().max(1.0);
                        let mut note = format!("LP {checked} {name}-block forward rel err {rel:.2e}");
                        if name == "A" {
                            let central = a_block_central_error(&spec, &block.direction, block.analytic);
                            note.push_str(&format!(", central rel err {central:.2e}"));
                        }
                        notes.push(note);
                    }
                }
            }
            Err(Error::DegenerateInstance(_)) => degenerate += 1,
            Err(e) => panic!("unexpected error: {e}"),
        }
    }
    let rate = checked as f64 / sampled as f64;
    let mut detail = format!(
        "{checked} nondegenerate LPs, {failed} of {} blocks outside tolerance, {degenerate} flagged degenerate, \
         nondegenerate rate {:.1}%",
        3 * checked,
        100.0 * rate
    );
    if !notes.is_empty() {
        detail.push_str(&format!(" ({})", notes.join("; ")));
    }
    verdict(failed == 0 && rate >= 0.95, detail)
}

fn c5_supergradients() -> Verdict {
    let mut rng = rng(5);
    let mut worst_m = f64::INFINITY;
    for _ in 0..100 {
        let b = rng.random_range(2..=8);
        let c = random_square(&mut rng, b);
        let c2 = random_square(&mut rng, b);
        let r = solve_assignment(&c).unwrap();
        let delta: Vec<f64> = c2.matrix().as_slice().iter().zip(c.matrix().as_slice()).map(|(x, y)| x - y).collect();
        let slack = r.z_star + dot(r.permutation_matrix().as_slice(), &delta) - solve_assignment(&c2).unwrap().z_star;
        worst_m = worst_m.min(slack);
    }
    let mut worst_g = f64::INFINITY;
    for _ in 0..100 {
        let (tp, tt) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let mut grid = || AlignGrid::new(Matrix::from_fn(tp, tt, |_, _| rng.random_range(0.0..5.0)), DEFAULT_GAMMA).unwrap();
        let (g1, g2) = (grid(), grid());
        let r = solve_gsa(&g1);
        let grad = gsa_gengrad(&r, &g1);
        let delta: Vec<f64> =
            g2.match_costs().as_slice().iter().zip(g1.match_costs().as_slice()).map(|(x, y)| x - y).collect();
        let slack = r.z_star + dot(grad.as_slice(), &delta) - solve_gsa(&g2).z_star;
        worst_g = worst_g.min(slack);
    }
    verdict(
        worst_m >= -EXACT && worst_g >= -EXACT,
        format!("min slack: matching {worst_m:.2e}, alignment {worst_g:.2e} (100 pairs each)"),
    )
}

/// Largest relative error between tape gradients (plus `corrupt` on the first
/// entry) and central differences.
fn tape_fd_error<F>(leaves: &[Matrix], build: F, corrupt: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Matrix]| {
        let mut t = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|m| t.leaf(m.clone()).unwrap()).collect();
        let out = build(&mut t, &vars).unwrap();
        t.scalar(out)
    };
    let mut t = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|m| t.leaf(m.clone()).unwrap()).collect();
    let out = build(&mut t, &vars).unwrap();
    let grads = t.backward(out).unwrap();
    let mut worst = 0.0_f64;
    for (li, leaf) in leaves.iter().enumerate() {
        let mut g = grads.get(vars[li]);
        if li == 0 {
            g.as_mut_slice()[0] += corrupt;
        }
        for k in 0..leaf.as_slice().len() {
            let (mut plus, mut minus) = (leaves.to_vec(), leaves.to_vec());
            plus[li].as_mut_slice()[k] += TAPE_EPS;
            minus[li].as_mut_slice()[k] -= TAPE_EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * TAPE_EPS);
            let analytic = g.as_slice()[k];
            worst = worst.max((numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(1.0));
        }
    }
    worst
}

fn weighted(t: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let v = t.value(x);
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let w = Matrix::from_fn(v.rows(), v.cols(), |_, _| r.random_range(-1.0..1.0));
    let w = t.leaf(w)?;
    let y = t.mul(x, w)?;
    Ok(t.sum(y))
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn tape_cases() -> Vec<(&'static str, Vec<(usize, usize)>, Build)> {
    vec![
        ("matmul+add_bias", vec![(3, 4), (4, 2), (1, 2)], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            let y = t.add_bias(y, v[2])?;
            weighted(t, y, 1)
        })),
        ("add+mul+scale", vec![(3, 4), (3, 4)], Box::new(|t, v| {
            let a = t.add(v[0], v[1])?;
            let m = t.mul(a, v[1])?;
            let s = t.scale(m, -1.5);
            weighted(t, s, 2)
        })),
        ("tanh+exp+mean", vec![(3, 4)], Box::new(|t, v| {
            let a = t.tanh(v[0]);
            let e = t.exp(a);
            Ok(t.mean(e))
        })),
        ("relu", vec![(3, 4)], Box::new(|t, v| {
            // Shift away from the kink.
            let one = t.leaf(Matrix::from_fn(1, 4, |_, j| if j % 2 == 0 { 3.0 } else { -3.0 }))?;
            let x = t.add_bias(v[0], one)?;
            let r = t.relu(x);
            weighted(t, r, 3)
        })),
        ("log_softmax+nll", vec![(4, 6)], Box::new(|t, v| {
            let lp = t.log_softmax(v[0]);
            t.nll(lp, &[1, 5, 0, 1])
        })),
        ("embed+concat", vec![(5, 3), (4, 2)], Box::new(|t, v| {
            let e = t.embed(v[0], &[4, 1, 4, 0])?;
            let c = t.concat(e, v[1])?;
            weighted(t, c, 4)
        })),
        ("select_row+slice_rows+vstack", vec![(5, 3)], Box::new(|t, v| {
            let a = t.select_row(v[0], 2)?;
            let b = t.slice_rows(v[0], 0, 3)?;
            let s = t.vstack(&[b, a, a])?;
            weighted(t, s, 5)
        })),
        ("comb_node (z^2 of matching)", vec![(4, 5)], Box::new(|t, v| {
            let layer = MatchingLayer::new(vec![2, 0, 4, 1], 5)?;
            let lp = t.log_softmax(v[0]);
            let z = t.comb(lp, &layer)?;
            t.mul(z, z)
        })),
    ]
}

fn c6_autodiff() -> Verdict {
    let mut worst = 0.0_f64;
    let mut worst_name = "";
    let cases = tape_cases();
    for (i, (name, shapes, build)) in cases.iter().enumerate() {
        let mut r = rng(60 + i as u64);
        let leaves: Vec<Matrix> =
            shapes.iter().map(|&(a, b)| Matrix::from_fn(a, b, |_, _| r.random_range(-1.0..1.0))).collect();
        let e = tape_fd_error(&leaves, build, 0.0);
        if e > worst {
            worst = e;
            worst_name = name;
        }
    }
    // The comb case needs a unique matching for its difference quotients.
    let mut r = rng(60 + cases.len() as u64 - 1);
    let x = Matrix::from_fn(4, 5, |_, _| r.random_range(-1.0..1.0));
    let unique = matching_loss(&log_softmax_rows(&x), &[2, 0, 4, 1]).unwrap().matching.unique;

    let mut r = rng(60);
    let leaves: Vec<Matrix> =
        cases[0].1.iter().map(|&(a, b)| Matrix::from_fn(a, b, |_, _| r.random_range(-1.0..1.0))).collect();
    let control = tape_fd_error(&leaves, &cases[0].2, 1e-2);
    verdict(
        worst < TAPE_REL && unique && control >= TAPE_REL,
        format!(
            "{} primitive groups + comb node, max rel err {worst:.2e} ({worst_name}); corrupted gradient rel err {control:.2e} (rejected)",
            cases.len() - 1
        ),
    )
}

fn final_metric(out: &TrainOutcome, split: &str, metric: &str) -> f64 {
    out.metric(out.last_epoch(), split, metric).unwrap()
}

fn c7_bags() -> Verdict {
    let mut means = Vec::new();
    let mut slowest = 0.0_f64;
    for (b, threshold) in [(1usize, 0.75), (4, 0.75), (16, 0.5)] {
        let mut accs = Vec::new();
        for seed in 0..SEEDS {
            let mut cfg = TrainConfig::bags(b);
            cfg.bag_threshold = threshold;
            cfg.seed = seed;
            let start = Instant::now();
            let out = train_bags(&cfg, &mut Recorder::new()).unwrap();
            slowest = slowest.max(start.elapsed().as_secs_f64());
            accs.push(final_metric(&out, "test", "accuracy"));
        }
        means.push(accs.iter().sum::<f64>() / accs.len() as f64);
    }
    let (a1, a4, a16) = (means[0], means[1], means[2]);
    let pass = a1 - a4 <= 0.05 && a16 < a4 && slowest < BAG_SECONDS;
    verdict(
        pass,
        format!(
            "mean test accuracy over {SEEDS} seeds after 30 epochs: b=1 {:.2}%, b=4 {:.2}%, b=16 {:.2}%; slowest run {slowest:.1} s",
            100.0 * a1,
            100.0 * a4,
            100.0 * a16
        ),
    )
}

fn c8_sequence() -> Verdict {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut slowest = 0.0_f64;
    for feed in [FeedKind::Softmax, FeedKind::GumbelSt] {
        let (mut reduction, mut em_gsa, mut em_mle) = (0.0, 0.0, 0.0);
        let mut worst_reduction = f64::INFINITY;
        for seed in 0..SEEDS {
            let mut run = |loss| {
                let mut cfg = TrainConfig::seq(loss, feed);
                cfg.seed = seed;
                let start = Instant::now();
                let out = train_seq(&cfg, &mut Recorder::new()).unwrap();
                slowest = slowest.max(start.elapsed().as_secs_f64());
                out
            };
            let (gsa, mle) = (run(LossKind::Gsa), run(LossKind::Mle));
            let c0 = gsa.metric(0, "test", "alignment_cost").unwrap();
            let r = 1.0 - final_metric(&gsa, "test", "alignment_cost") / c0;
            worst_reduction = worst_reduction.min(r);
            reduction += r / SEEDS as f64;
            em_gsa += final_metric(&gsa, "test", "exact_match") / SEEDS as f64;
            em_mle += final_metric(&mle, "test", "exact_match") / SEEDS as f64;
        }
        pass &= worst_reduction >= 0.5 && em_gsa >= em_mle - 0.02;
        lines.push(format!(
            "{feed:?}: cost reduction mean {:.0}% (min {:.0}%), exact match GSA {:.1}% vs MLE {:.1}%",
            100.0 * reduction,
            100.0 * worst_reduction,
            100.0 * em_gsa,
            100.0 * em_mle
        ));
    }
    pass &= slowest < SEQ_SECONDS;
    verdict(
        pass,
        format!("means over {SEEDS} seeds after 20 epochs; {}; slowest run {slowest:.1} s", lines.join("; ")),
    )
}

fn values(rows: &[MetricsRow]) -> Vec<(usize, String, String, u64)> {
    rows.iter()
        .map(|r| (r.epoch, r.split.clone(), r.metric.clone(), r.value.to_bits()))
        .collect()
}

fn cli(args: &[&str]) -> (Option<i32>, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_lincomb")).args(args).output().unwrap();
    (out.status.code(), out.stdout)
}

/// Drops the trailing `seconds` column.
fn strip_timing(csv: &str) -> Vec<String> {
    csv.lines().map(|l| l.rsplit_once(',').map_or(l, |p| p.0).to_string()).collect()
}

fn c9_determinism() -> Verdict {
    let mut problems = Vec::new();

    let mut bags = TrainConfig::bags(4);
    bags.epochs = 3;
    bags.bag_data.samples = 1000;
    let mut seq = TrainConfig::seq(LossKind::Gsa, FeedKind::GumbelSt);
    seq.epochs = 2;
    seq.seq_data.examples = 300;
    let twice = |f: &dyn Fn() -> TrainOutcome| {
        let (a, b) = (f(), f());
        values(&a.metrics) == values(&b.metrics) && a.params.to_checkpoint_string() == b.params.to_checkpoint_string()
    };
    if !twice(&|| train_bags(&bags, &mut Recorder::new()).unwrap()) {
        problems.push("bag training");
    }
    if !twice(&|| train_seq(&seq, &mut Recorder::new()).unwrap()) {
        problems.push("sequence training");
    }

    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("a.json");
    std::fs::write(&input, r#"{"cost": [[4, 1, 3], [2, 0, 5], [3, 2, 2]]}"#).unwrap();
    let config = dir.path().join("cfg.json");
    std::fs::write(&config, serde_json::to_string(&bags).unwrap()).unwrap();
    let commands: Vec<Vec<String>> = vec![
        vec!["solve".into(), "assignment".into(), input.display().to_string()],
        vec!["--seed".into(), "3".into(), "gradcheck".into(), "lp".into(), "--instances".into(), "10".into()],
        vec!["--seed".into(), "3".into(), "gradcheck".into(), "gsa".into(), "--instances".into(), "10".into()],
    ];
    for args in &commands {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        if cli(&args) != cli(&args) {
            problems.push("cli solve/gradcheck");
        }
    }
    let bench = |tag: &str| {
        let path = dir.path().join(format!("bench-{tag}.csv"));
        let p = path.to_str().unwrap();
        cli(&["--seed", "9", "--out", p, "bench", "lp", "--sizes", "4,6", "--repeats", "2"]);
        strip_timing(&std::fs::read_to_string(&path).unwrap())
    };
    if bench("a") != bench("b") {
        problems.push("cli bench");
    }
    let train = |tag: &str| {
        let out = dir.path().join(tag);
        let code = cli(&["--out", out.to_str().unwrap(), "train", "bags", config.to_str().unwrap()]).0;
        let read = |f: &str| std::fs::read_to_string(out.join(f)).unwrap();
        (code, strip_timing(&read("metrics.csv")), read("model.ckpt"), read("dataset.jsonl"))
    };
    let (a, b) = (train("run-a"), train("run-b"));
    if a.0 != Some(0) || a != b {
        problems.push("cli train");
    }
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            "bag and sequence training, solve, gradcheck, bench and train outputs repeat bitwise".into()
        } else {
            format!("differences in: {}", problems.join(", "))
        },
    )
}

fn c10_complexity() -> Verdict {
    let mut rng = rng(10);
    let rows = run_bench(BenchKind::Assignment, &[8, 16, 32, 64], 5, &mut rng).unwrap();
    let exponent = fit_exponent(&rows).unwrap();
    let mut single = rows.iter().all(|r| r.solves_per_pair == 1.0);
    for kind in [BenchKind::Gsa, BenchKind::Lp] {
        let rows = run_bench(kind, &[4, 8], 1, &mut rng).unwrap();
        single &= rows.iter().all(|r| r.solves_per_pair == 1.0);
    }
    verdict(
        (2.5..=3.5).contains(&exponent) && single,
        format!("assignment exponent {exponent:.2} over b in 8..64; one solver run per forward/backward pair: {single}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("assignment oracle equivalence", c1_assignment_oracle),
        ("assignment dual certificates", c2_dual_certificates),
        ("alignment oracle equivalence", c3_alignment_oracle),
        ("LP three-block difference quotients", c4_lp_blocks),
        ("supergradient inequalities", c5_supergradients),
        ("autodiff soundness", c6_autodiff),
        ("bag-learning trend", c7_bags),
        ("alignment-loss training trend", c8_sequence),
        ("determinism", c9_determinism),
        ("complexity and single solve", c10_complexity),
    ];
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    // `cargo test` passes harness flags such as `--list`; there is nothing to list.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let status = if v.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!v.pass);
        println!(
            "criterion {n:>2} {status} {name}: {} [{:.1} s]",
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} criteria failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
