//! End-to-end acceptance suite. Runs without the libtest harness so the
//! per-criterion PASS/FAIL lines always reach stdout; exits non-zero if any
//! criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use migrate_core::archive::{Archive, IslandConfig, SelectionPath};
use migrate_core::grpo::{grpo_loss_and_grad, update_policy, ClipConfig, Group, Optimizer};
use migrate_core::harness::trace::{csv_string, jsonl_string, CsvRow};
use migrate_core::harness::{run, Method, RunConfig};
use migrate_core::policy::{ContextId, PolicyParams};
use migrate_core::sampler::{Completion, Provenance};
use migrate_core::tasks::grids::{random_grid, random_program, Grid, GridPair, Op};
use migrate_core::tasks::{compute_metrics, scalarize, DslProgram, GridTask, ProgramRecord, Split, TaskKind};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- helpers

fn random_sequence(rng: &mut ChaCha8Rng, v: usize, max_len: usize) -> Vec<usize> {
    let len = rng.gen_range(1..=max_len);
    let mut t: Vec<usize> = (0..len).map(|_| rng.gen_range(0..v - 1)).collect();
    if len < max_len && rng.gen_bool(0.5) {
        t.push(v - 1);
    }
    t
}

fn scored(tokens: Vec<usize>, score: f64) -> Completion {
    let mut c = Completion::new(tokens, String::new(), Provenance::Online, 1);
    c.set_score(score).unwrap();
    c
}

fn loss_at(params: &PolicyParams, weights: Vec<f64>, group: &Group, clip: ClipConfig) -> f64 {
    let p = PolicyParams::from_weights(params.vocab_size(), params.position_buckets(), params.max_len(), weights).unwrap();
    grpo_loss_and_grad(&p, group, clip).unwrap().0.loss
}

// ---------------------------------------------------------------- 1

fn gradient_correctness() -> Result<String, String> {
    let start = Instant::now();
    let clip = ClipConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut instances, mut saturated, mut worst) = (0, 0, 0.0f64);
    while instances < 120 {
        let v = rng.gen_range(2..=8);
        let max_len = rng.gen_range(1..=5);
        let buckets = rng.gen_range(1..=max_len);
        let n = rng.gen_range(2..=6);
        let params = PolicyParams::random(v, buckets, max_len, 1.0, &mut rng).unwrap();
        let seqs: Vec<Vec<usize>> = (0..n).map(|_| random_sequence(&mut rng, v, max_len)).collect();
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Shift the reference log-probs so ratios spread across both clip edges.
        let old: Vec<Vec<f64>> = seqs
            .iter()
            .map(|s| {
                params
                    .logprobs(ContextId::task(), s)
                    .unwrap()
                    .into_iter()
                    .map(|lp| lp + rng.gen_range(-0.6..0.6))
                    .collect()
            })
            .collect();
        // Skip instances with a ratio sitting on a kink of the clipped objective.
        let near_kink = seqs.iter().zip(&old).any(|(s, o)| {
            let new = params.logprobs(ContextId::task(), s).unwrap();
            new.iter().zip(o).any(|(a, b)| {
                let r = (a - b).exp();
                (r - (1.0 - clip.eps_low)).abs() < 1e-4 || (r - (1.0 + clip.eps_high)).abs() < 1e-4
            })
        });
        if near_kink {
            continue;
        }
        let members: Vec<Completion> = seqs.iter().zip(&rewards).map(|(s, &r)| scored(s.clone(), r)).collect();
        let group = Group::from_parts(members, rewards, old, 1).unwrap();
        let (report, grad) = grpo_loss_and_grad(&params, &group, clip).unwrap();
        if report.clip_low_frac + report.clip_high_frac > 0.0 {
            saturated += 1;
        }
        let h = 1e-6;
        let w0 = params.weights().to_vec();
        let fd: Vec<f64> = (0..w0.len())
            .map(|j| {
                let mut plus = w0.clone();
                let mut minus = w0.clone();
                plus[j] += h;
                minus[j] -= h;
                (loss_at(&params, plus, &group, clip) - loss_at(&params, minus, &group, clip)) / (2.0 * h)
            })
            .collect();
        let diff = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = grad
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(fd.iter().map(|b| b * b).sum::<f64>().sqrt());
        let rel = if scale == 0.0 { diff } else { diff / scale };
        worst = worst.max(rel);
        ensure(rel <= 1e-6, || format!("instance {instances}: relative error {rel:e}"))?;
        instances += 1;
    }
    let elapsed = start.elapsed();
    ensure(saturated >= 10, || format!("only {saturated} instances exercised clipping"))?;
    ensure(elapsed <= Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{instances} instances, {saturated} with clipped tokens, worst relative error {worst:.2e}, {elapsed:.2?}"
    ))
}

// ---------------------------------------------------------------- 2

fn structural_checks() -> Result<String, String> {
    let clip = ClipConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_sum = 0.0f64;
    let mut worst_gap = 0.0f64;
    for case in 0..300 {
        let v = rng.gen_range(2..=8);
        let max_len = rng.gen_range(1..=5);
        let params = PolicyParams::random(v, max_len, max_len, 0.8, &mut rng).unwrap();
        let n = rng.gen_range(2..=6);
        let members: Vec<Completion> = (0..n)
            .map(|_| {
                let s = random_sequence(&mut rng, v, max_len);
                scored(s, rng.gen_range(-2.0..2.0))
            })
            .collect();
        let group = Group::new(members, &params, 1).unwrap();
        let adv_sum: f64 = group.advantages().iter().sum();
        worst_sum = worst_sum.max(adv_sum.abs());
        ensure(adv_sum.abs() <= 1e-12, || format!("case {case}: advantage sum {adv_sum:e}"))?;

        let (report, _) = grpo_loss_and_grad(&params, &group, clip).unwrap();
        ensure(report.mean_ratio == 1.0 && report.clip_low_frac == 0.0 && report.clip_high_frac == 0.0, || {
            format!("case {case}: first-step ratios are not all 1 ({report:?})")
        })?;
        // Unclipped surrogate evaluated independently.
        let tokens: usize = group.completions().iter().map(|c| c.tokens.len()).sum();
        let mut unclipped = 0.0;
        for (c, a) in group.completions().iter().zip(group.advantages()) {
            let new = params.logprobs(ContextId::task(), &c.tokens).unwrap();
            let old = params.logprobs(ContextId::task(), &c.tokens).unwrap();
            for (x, y) in new.iter().zip(&old) {
                unclipped += (x - y).exp() * a;
            }
        }
        let unclipped = -unclipped / tokens as f64;
        let gap = (unclipped - report.loss).abs();
        worst_gap = worst_gap.max(gap);
        ensure(gap <= 1e-12, || format!("case {case}: clipped/unclipped gap {gap:e}"))?;

        // mu = 2 against two hand-rolled steps with frozen reference log-probs.
        let lr = rng.gen_range(0.01..1.0);
        let (auto, reports) = update_policy(&params, &group, clip, &mut Optimizer::sgd(lr), 2).unwrap();
        ensure(reports.len() == 2, || "expected two reports".into())?;
        let mut manual = params.clone();
        if !group.is_degenerate() {
            for _ in 0..2 {
                let (_, g) = grpo_loss_and_grad(&manual, &group, clip).unwrap();
                let step: Vec<f64> = g.iter().map(|x| lr * x).collect();
                manual = manual.apply_step(&step).unwrap();
            }
        }
        let same = auto.weights().iter().zip(manual.weights()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || format!("case {case}: mu=2 replay differs from manual steps"))?;
    }
    Ok(format!(
        "300 groups, max |sum A| {worst_sum:.1e}, max clipped/unclipped gap {worst_gap:.1e}, mu=2 replay bit-exact"
    ))
}

// ---------------------------------------------------------------- 3

fn fuzz_config(rng: &mut ChaCha8Rng) -> RunConfig {
    let method = Method::ALL[rng.gen_range(0..Method::ALL.len())];
    let task = [TaskKind::Words, TaskKind::Molecules, TaskKind::Grids][rng.gen_range(0..3)];
    let mut c = RunConfig::defaults(task, method);
    c.task.words.vocab_size = 150;
    c.task.words.alphabet = 5;
    c.task.words.dim = 8;
    let (alpha, beta, gamma) = match method {
        Method::Random | Method::Grpo => (rng.gen_range(2..=6), 0, 0),
        Method::GrpoGreedy => (rng.gen_range(1..=5), rng.gen_range(1..=3), 0),
        _ => {
            let gamma = rng.gen_range(1..=4);
            (rng.gen_range(0..=3), rng.gen_range(0..=2), gamma)
        }
    };
    c = c.with_mix(alpha, beta, gamma);
    if method.is_ttt() && c.n < 2 {
        c = c.with_mix(alpha + 1, beta, gamma);
    }
    c.k = rng.gen_range(1..=4);
    c.mu = rng.gen_range(1..=2);
    c.mutation_rate = rng.gen_range(0.05..=1.0);
    c.warmstart = if task == TaskKind::Words { rng.gen_range(0..=10) } else { 0 };
    c.budget = c.warmstart + rng.gen_range(1..=60);
    c.stop_threshold = if rng.gen_bool(0.3) { Some(rng.gen_range(0.5..1.0)) } else { None };
    if rng.gen_bool(0.4) {
        c.islands = Some(IslandConfig {
            count: rng.gen_range(1..=4),
            exploit_prob: rng.gen_range(0.0..=1.0),
            migration_interval: rng.gen_range(3..=10),
            migration_fraction: rng.gen_range(0.05..=0.3),
        });
    }
    c.seed = rng.gen();
    c
}

fn group_budget_contracts() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut per_method = [0usize; 7];
    let (mut iterations, mut stopped) = (0usize, 0usize);
    for i in 0..1000 {
        let c = fuzz_config(&mut rng);
        c.validate().map_err(|e| format!("config {i} invalid: {e}"))?;
        per_method[Method::ALL.iter().position(|m| *m == c.method).unwrap()] += 1;
        let out = run(&c).map_err(|e| format!("config {i}: {e}"))?;
        let trace = &out.trace;
        let fresh = c.alpha + c.gamma;
        let mut prev_eval = 0;
        let mut prev_best = f64::NEG_INFINITY;
        let last = trace.records.len().saturating_sub(1);
        for (j, r) in trace.records.iter().enumerate() {
            let added = r.evaluations - prev_eval;
            if r.iteration > 0 {
                iterations += 1;
                ensure(r.group_size == c.n, || format!("config {i} iter {}: group {} != N {}", r.iteration, r.group_size, c.n))?;
                let expected = if r.cold_start { c.n } else { fresh };
                let truncated = j == last && r.evaluations == c.budget && added < expected;
                ensure(added == expected || truncated, || {
                    format!("config {i} iter {}: {added} new evaluations, expected {expected}", r.iteration)
                })?;
                ensure(r.new.len() == added, || format!("config {i}: record lists {} new, counted {added}", r.new.len()))?;
            }
            ensure(r.best_so_far >= prev_best, || format!("config {i}: best-so-far decreased"))?;
            prev_best = r.best_so_far;
            prev_eval = r.evaluations;
        }
        ensure(trace.summary.evaluations <= c.budget, || format!("config {i}: {} > budget", trace.summary.evaluations))?;
        ensure(out.archive.evaluated_count() == trace.summary.evaluations, || format!("config {i}: count mismatch"))?;
        if trace.summary.evaluations < c.budget {
            stopped += 1;
            let t = c.stop_threshold.ok_or_else(|| format!("config {i}: undershoot without a stop threshold"))?;
            ensure(trace.summary.best_score >= t, || format!("config {i}: stopped below threshold"))?;
        }
    }
    let elapsed = start.elapsed();
    ensure(per_method.iter().all(|&n| n > 0), || format!("methods not all covered: {per_method:?}"))?;
    ensure(elapsed <= Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "1000 configs ({iterations} iterations, {stopped} early stops), per-method counts {per_method:?}, {elapsed:.2?}"
    ))
}

// ---------------------------------------------------------------- 4

fn ordering_reproduction() -> Result<String, String> {
    let start = Instant::now();
    let methods = [Method::Migrate, Method::Grpo, Method::Random];
    let mut found = [0usize; 3];
    let mut best = [0.0f64; 3];
    for seed in 0..20 {
        for (m, method) in methods.iter().enumerate() {
            let mut c = RunConfig::defaults(TaskKind::Words, *method);
            c.seed = seed;
            let out = run(&c).map_err(|e| e.to_string())?;
            found[m] += out.trace.summary.found as usize;
            best[m] += out.trace.summary.best_score / 20.0;
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "found MIGRATE {}/20 GRPO {}/20 Random {}/20; mean best {:.4} / {:.4} / {:.4}; {elapsed:.2?}",
        found[0], found[1], found[2], best[0], best[1], best[2]
    );
    ensure(found[0] >= found[1] && found[0] >= found[2], || format!("found-rate ordering violated: {detail}"))?;
    ensure(best[0] - best[1] >= 0.02 && best[0] - best[2] >= 0.02, || format!("margin below 0.02: {detail}"))?;
    ensure(elapsed <= Duration::from_secs(300), || format!("too slow: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 5

fn scalarization() -> Result<String, String> {
    ensure(scalarize(-13.0, 1.0) == 1.0, || format!("s(-13, 1) = {}", scalarize(-13.0, 1.0)))?;
    ensure(scalarize(0.0, 0.0) == 0.0, || format!("s(0, 0) = {}", scalarize(0.0, 0.0)))?;
    // Full-range effect of each objective.
    let vina_span = scalarize(-13.0, 0.5) - scalarize(0.0, 0.5);
    let qed_span = scalarize(-6.5, 1.0) - scalarize(-6.5, 0.0);
    let range_ratio = vina_span / qed_span;
    ensure((range_ratio - 13.0).abs() < 1e-9, || format!("range sensitivity ratio {range_ratio}"))?;
    // One kcal/mol against 0.1 QED.
    let d_vina = scalarize(-7.0, 0.5) - scalarize(-6.0, 0.5);
    let d_qed = scalarize(-6.0, 0.6) - scalarize(-6.0, 0.5);
    let unit_ratio = d_vina / d_qed;
    ensure((d_vina - 1.0 / 14.0).abs() < 1e-12, || format!("1 kcal/mol moves s by {d_vina}"))?;
    ensure((unit_ratio - 10.0).abs() < 1e-9, || format!("1 kcal/mol vs 0.1 QED ratio {unit_ratio}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..10_000 {
        let (v, q) = (rng.gen_range(-13.0..=0.0), rng.gen_range(0.0..=1.0));
        let s = scalarize(v, q);
        ensure((0.0..=1.0).contains(&s), || format!("pair {i}: s = {s} out of [0, 1]"))?;
        let dv = rng.gen_range(1e-6..1.0);
        let dq = rng.gen_range(1e-6..0.5);
        ensure(scalarize(v - dv, q) > s, || format!("pair {i}: not decreasing in vina"))?;
        ensure(scalarize(v, q + dq) > s, || format!("pair {i}: not increasing in qed"))?;
    }
    Ok(format!(
        "endpoints exact; range sensitivity {range_ratio:.3}:1; 1 kcal/mol = {unit_ratio:.3} x 0.1 QED; 10^4 monotone pairs"
    ))
}

// ---------------------------------------------------------------- 6

/// Independent interpreter used as the oracle.
fn oracle_apply(op: &Op, g: &Grid) -> Grid {
    let (h, w) = (g.len(), g[0].len());
    let mut out;
    match *op {
        Op::Identity => out = g.clone(),
        Op::FlipH => {
            out = g.clone();
            for r in 0..h {
                for c in 0..w {
                    out[r][c] = g[r][w - 1 - c];
                }
            }
        }
        Op::FlipV => {
            out = g.clone();
            for r in 0..h {
                out[r] = g[h - 1 - r].clone();
            }
        }
        Op::Rot90 => {
            out = vec![vec![0; h]; w];
            for r in 0..h {
                for c in 0..w {
                    out[c][h - 1 - r] = g[r][c];
                }
            }
        }
        Op::Recolor(a, b) => {
            out = g.clone();
            for row in out.iter_mut() {
                for x in row.iter_mut() {
                    if *x == a {
                        *x = b;
                    }
                }
            }
        }
        Op::Translate(dx, dy) => {
            out = g.clone();
            for r in 0..h {
                for c in 0..w {
                    let nr = ((r as i32 + dy).rem_euclid(h as i32)) as usize;
                    let nc = ((c as i32 + dx).rem_euclid(w as i32)) as usize;
                    out[nr][nc] = g[r][c];
                }
            }
        }
        Op::FillBorder(col) => {
            out = g.clone();
            for r in 0..h {
                for c in 0..w {
                    if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
                        out[r][c] = col;
                    }
                }
            }
        }
    }
    out
}

fn oracle_pair(program: &DslProgram, input: &Grid, truth: &Grid, limit: u64) -> (f64, &'static str) {
    let cells = (input.len() * input[0].len()) as u64;
    if program.ops().len() as u64 * cells > limit {
        return (0.0, "step-limit");
    }
    let mut g = input.clone();
    for op in program.ops() {
        g = oracle_apply(op, &g);
    }
    let (th, tw) = (truth.len(), truth[0].len());
    if g.len() > th || g[0].len() > tw {
        return (0.0, "oversize");
    }
    let mut matched = 0;
    for r in 0..th {
        for c in 0..tw {
            if r < g.len() && c < g[0].len() && g[r][c] == truth[r][c] {
                matched += 1;
            }
        }
    }
    (matched as f64 / (th * tw) as f64, "scored")
}

fn hamming_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut paths = std::collections::BTreeMap::new();
    for i in 0..1000 {
        let n_pairs = rng.gen_range(1..=3);
        let len = rng.gen_range(0..=4);
        let program = random_program(&mut rng, len);
        let pairs: Vec<GridPair> = (0..n_pairs)
            .map(|_| {
                let input = random_grid(&mut rng, 1..=8, 5);
                // Mostly the program's own output with noise, sometimes an unrelated grid.
                let output = if rng.gen_bool(0.6) {
                    let mut o = program.run(&input, u64::MAX).unwrap();
                    for row in o.iter_mut() {
                        for x in row.iter_mut() {
                            if rng.gen_bool(0.2) {
                                *x = rng.gen_range(0..10);
                            }
                        }
                    }
                    o
                } else {
                    random_grid(&mut rng, 1..=8, 5)
                };
                GridPair { input, output }
            })
            .collect();
        let limit = if rng.gen_bool(0.2) { rng.gen_range(1..=100) } else { 10_000 };
        let task = GridTask::new(pairs.clone(), pairs.clone(), 900, limit).unwrap();
        let got = task.eval_program(Some(&program), Split::Train);
        let mut want = 0.0;
        for p in &pairs {
            let (s, path) = oracle_pair(&program, &p.input, &p.output, limit);
            *paths.entry(path).or_insert(0usize) += 1;
            want += s;
        }
        want /= pairs.len() as f64;
        ensure((got - want).abs() < 1e-12, || format!("case {i}: got {got}, oracle {want} for {:?}", program.to_text()))?;
    }
    for p in ["scored", "oversize", "step-limit"] {
        ensure(paths.get(p).copied().unwrap_or(0) > 0, || format!("path {p} never exercised: {paths:?}"))?;
    }
    Ok(format!("1000 programs agree with the cell-by-cell oracle; pair paths {paths:?}"))
}

// ---------------------------------------------------------------- 7

fn islands_invariants() -> Result<String, String> {
    let p = 0.7;
    let (mut exploit, mut draws) = (0usize, 0usize);
    let mut migrations = 0;
    for run_id in 0..100u64 {
        let count = 2 + (run_id as usize % 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + run_id);
        let config = IslandConfig {
            count,
            exploit_prob: p,
            migration_interval: 3,
            migration_fraction: rng.gen_range(0.1..=0.5),
        };
        let mut archive = Archive::with_islands(config).unwrap();
        for iteration in 1..=12 {
            let batch: Vec<Completion> = (0..rng.gen_range(1..=5))
                .map(|_| {
                    let mut c = Completion::new(vec![rng.gen_range(0..5)], String::new(), Provenance::Online, iteration);
                    c.set_score(rng.gen_range(0.0..1.0)).unwrap();
                    c
                })
                .collect();
            archive.insert(batch).unwrap();
            for _ in 0..100 / 12 + 1 {
                if draws >= 10_000 {
                    break;
                }
                let pick = archive.island_select(3, &mut rng).unwrap();
                draws += 1;
                if pick.intended == SelectionPath::Exploit {
                    exploit += 1;
                }
                ensure(archive.island_of(pick.index) == Some(pick.island), || format!("run {run_id}: pick outside island"))?;
            }
            if iteration % config.migration_interval == 0 {
                let before: Vec<(Completion, usize)> = archive
                    .entries()
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (c.clone(), archive.island_of(i).unwrap()))
                    .collect();
                let members = archive.island_members().unwrap();
                let evaluated = archive.evaluated_count();
                let copies = archive.migrate().unwrap();
                migrations += 1;
                ensure(archive.evaluated_count() == evaluated, || format!("run {run_id}: copies counted as evaluations"))?;
                ensure(archive.len() == before.len() + copies, || format!("run {run_id}: entry count changed"))?;
                for (i, (c, isl)) in before.iter().enumerate() {
                    ensure(&archive.entries()[i] == c && archive.island_of(i) == Some(*isl), || {
                        format!("run {run_id}: entry {i} altered by migration")
                    })?;
                }
                let expected: usize = members
                    .iter()
                    .map(|m| (config.migration_fraction * m.len() as f64).ceil() as usize)
                    .sum();
                ensure(copies == expected, || format!("run {run_id}: {copies} copies, expected {expected}"))?;
                for i in before.len()..archive.len() {
                    let dest = archive.island_of(i).unwrap();
                    let src = (dest + count - 1) % count;
                    let ok = members[src].iter().any(|&j| before[j].0 == archive.entries()[i]);
                    ensure(ok, || format!("run {run_id}: copy into island {dest} not from island {src}"))?;
                }
            }
        }
    }
    ensure(draws == 10_000, || format!("only {draws} draws"))?;
    let mean = p * draws as f64;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    let z = (exploit as f64 - mean) / sigma;
    ensure(z.abs() <= 3.0, || format!("exploit count {exploit} is {z:.2} sigma from {mean}"))?;
    Ok(format!(
        "100 runs, {migrations} migrations preserve entries and ring order; exploit {exploit}/{draws} (z = {z:.2})"
    ))
}

// ---------------------------------------------------------------- 8

fn determinism() -> Result<String, String> {
    let mut checked = 0;
    for task in [TaskKind::Words, TaskKind::Molecules, TaskKind::Grids] {
        for method in Method::ALL {
            for islands in [false, true] {
                let mut c = RunConfig::defaults(task, method);
                c.seed = 17;
                c.budget = c.budget.min(300);
                if islands {
                    c.islands = Some(IslandConfig::default());
                }
                let render = |c: &RunConfig| -> Result<(String, String), String> {
                    let out = run(c).map_err(|e| e.to_string())?;
                    let rows: Vec<CsvRow> = out.trace.records.iter().map(CsvRow::from).collect();
                    Ok((csv_string(&rows).unwrap(), jsonl_string(&out.trace.records).unwrap()))
                };
                let a = render(&c)?;
                let b = render(&c)?;
                ensure(a == b, || format!("{task:?}/{method:?}/islands={islands}: outputs differ"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} task/method/island combinations byte-identical across two invocations"))
}

// ---------------------------------------------------------------- 9

fn metrics_correctness() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut pass_pos, mut oracle_pos, mut total) = (0, 0, 0);
    for set in 0..200 {
        let (task, truth_program) = GridTask::synthesize(&mut rng);
        let truth: Vec<Grid> = task.test().iter().map(|p| p.output.clone()).collect();
        let n = rng.gen_range(1..=12);
        let records: Vec<ProgramRecord> = (0..n)
            .map(|_| {
                let text = match rng.gen_range(0..4) {
                    0 => truth_program.to_text(),
                    1 => format!("{} identity", truth_program.to_text()),
                    2 => "identity".to_string(),
                    _ => {
                        let len = rng.gen_range(1..=3);
                        random_program(&mut rng, len).to_text()
                    }
                };
                task.record(&text)
            })
            .collect();
        // Pseudo-programs that fit the training data but disagree on the test output.
        let mut records = records;
        if rng.gen_bool(0.3) {
            for _ in 0..rng.gen_range(1..=3) {
                records.push(ProgramRecord {
                    train_score: 1.0,
                    test_outputs: Some(vec![random_grid(&mut rng, 3..=6, 6)]),
                });
            }
        }
        let m = compute_metrics(&records, &task);

        // Brute-force counting: (output, votes, first index) by linear scan.
        let mut tally: Vec<(Vec<Grid>, usize, usize)> = Vec::new();
        for (i, r) in records.iter().enumerate() {
            if r.train_score != 1.0 {
                continue;
            }
            let Some(out) = &r.test_outputs else { continue };
            match tally.iter_mut().find(|t| &t.0 == out) {
                Some(t) => t.1 += 1,
                None => tally.push((out.clone(), 1, i)),
            }
        }
        let mut top2 = Vec::new();
        for _ in 0..2 {
            let best = tally
                .iter()
                .enumerate()
                .filter(|(j, _)| !top2.contains(j))
                .max_by(|a, b| a.1 .1.cmp(&b.1 .1).then(b.1 .2.cmp(&a.1 .2)))
                .map(|(j, _)| j);
            if let Some(j) = best {
                top2.push(j);
            }
        }
        let want_pass = top2.iter().any(|&j| tally[j].0 == truth);
        let want_oracle = records.iter().any(|r| match &r.test_outputs {
            Some(outs) => outs
                .iter()
                .zip(&task.test().to_vec())
                .all(|(o, p)| oracle_pair(&DslProgram::default(), o, &p.output, u64::MAX).0 == 1.0),
            None => false,
        });
        ensure(m.pass_at_2 == want_pass, || format!("set {set}: pass@2 {} vs oracle {want_pass}", m.pass_at_2))?;
        ensure(m.oracle == want_oracle, || format!("set {set}: oracle {} vs brute force {want_oracle}", m.oracle))?;
        pass_pos += want_pass as usize;
        oracle_pos += want_oracle as usize;
        total += 1;
    }
    ensure(pass_pos > 0 && pass_pos < total, || format!("pass@2 never varied ({pass_pos}/{total})"))?;
    ensure(oracle_pos > pass_pos || oracle_pos < total, || "oracle never varied".into())?;
    Ok(format!("{total} program sets; pass@2 true in {pass_pos}, oracle true in {oracle_pos}"))
}

// ---------------------------------------------------------------- suite

fn main() {
    let suite_start = Instant::now();
    let checks: [(&str, Check); 9] = [
        ("gradient correctness", gradient_correctness),
        ("advantage and ratio structure", structural_checks),
        ("group and budget contracts", group_budget_contracts),
        ("ordering on the word task", ordering_reproduction),
        ("scalarization endpoints and weighting", scalarization),
        ("matched-cell reward oracle", hamming_oracle),
        ("islands invariants", islands_invariants),
        ("determinism", determinism),
        ("grid metrics", metrics_correctness),
    ];
    let mut failures = Vec::new();
    for (i, (name, check)) in checks.iter().enumerate() {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{:.2?}]", i + 1, t.elapsed()),
            Err(why) => {
                println!("criterion {:>2} FAIL  {name}: {why} [{:.2?}]", i + 1, t.elapsed());
                failures.push(i + 1);
            }
        }
    }
    let total = suite_start.elapsed();
    if total <= Duration::from_secs(600) {
        println!("criterion 10 PASS  suite runtime: {total:.2?} (limit 10 min)");
    } else {
        println!("criterion 10 FAIL  suite runtime: {total:.2?} (limit 10 min)");
        failures.push(10);
    }
    if !failures.is_empty() {
        println!("failed criteria: {failures:?}");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
