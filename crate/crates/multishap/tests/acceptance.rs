//! One test per acceptance criterion. `cargo test --test acceptance` prints
//! one `ok`/`FAILED` line for each; run with `--nocapture` for the measured
//! quantities.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use multishap::matrix_io::MatrixDocument;
use multishap::SyntheticScorer;
use multishap_core::{
    classify_interaction, estimate, exact_sii, instance_metrics, sii_weight, CellMatrix, Coalition, EstimatorConfig,
    ExactOracle, FeatureSpace, FnScorer, InteractionEstimate, InteractionType, Mode, Normalization, Scorer,
    SyntheticGame,
};

const BIN: &str = env!("CARGO_BIN_EXE_multishap");
const FLOOR: f64 = 1e-12;

fn factorial(k: usize) -> f64 {
    (1..=k).map(|x| x as f64).product()
}

fn within(label: &str, started: Instant, limit: Duration) {
    let took = started.elapsed();
    println!("{label}: {took:?} (limit {limit:?})");
    assert!(took < limit, "{label} took {took:?}");
}

#[test]
fn kernel_weights_sum_to_one_half() {
    let started = Instant::now();
    for total in 2..=12usize {
        // Brute force over every subset of the M - 2 remaining features.
        let rest = total - 2;
        let mut sum = 0.0;
        for mask in 0u32..1 << rest {
            let s = mask.count_ones() as usize;
            let w = sii_weight(s, total).unwrap();
            let independent = factorial(s) * factorial(total - s - 2) / (2.0 * factorial(total - 1));
            assert!((w - independent).abs() <= 1e-15, "M={total} s={s}");
            sum += w;
        }
        println!("M={total:2}: sum={sum:.17}");
        assert!((sum - 0.5).abs() <= 1e-12, "M={total}: {sum}");
    }
    within("kernel identity", started, Duration::from_secs(1));
}

fn multilinear_fixture(m: usize, n: usize) -> (SyntheticGame, Vec<Vec<f64>>) {
    let space = FeatureSpace::new(m, n).unwrap();
    let total = m + n;
    let mut cross = vec![vec![0.0; n]; m];
    let mut pairs = Vec::new();
    for k in 0..total {
        for l in k + 1..total {
            let b = ((3 * k + 5 * l) % 7) as f64 / 4.0 - 0.75;
            pairs.push(((k, l), b));
            if k < m && l >= m {
                cross[k][l - m] = b;
            }
        }
    }
    let linear = (0..total).map(|k| k as f64 * 0.5 - 1.0).collect();
    (SyntheticGame::multilinear(space, 0.3, linear, pairs).unwrap(), cross)
}

#[test]
fn exact_oracle_on_closed_form_games() {
    let started = Instant::now();
    for size in 1..=3usize {
        let space = FeatureSpace::new(size, size).unwrap();
        let total = 2 * size;
        let mut pair = SyntheticGame::pure_pair(space.clone(), 0, size, 1.0).unwrap();
        let mut additive = SyntheticGame::additive(space.clone(), (1..=total).map(|k| k as f64).collect()).unwrap();
        let (mut multi, cross) = multilinear_fixture(size, size);
        let tabulated = [
            ExactOracle::tabulate(&mut pair, &space, 20).unwrap(),
            ExactOracle::tabulate(&mut additive, &space, 20).unwrap(),
            ExactOracle::tabulate(&mut multi, &space, 20).unwrap(),
        ];
        for i in 0..size {
            for j in 0..size {
                let t = size + j;
                let expected = [if (i, j) == (0, 0) { 0.5 } else { 0.0 }, 0.0, cross[i][j] / 2.0];
                let games: [&mut SyntheticGame; 3] = [&mut pair, &mut additive, &mut multi];
                for ((game, oracle), want) in games.into_iter().zip(&tabulated).zip(expected) {
                    let direct = exact_sii(game, &space, i, t, Normalization::Half, 20).unwrap();
                    let memo = oracle.sii(i, t, Normalization::Half).unwrap();
                    assert!((direct - want).abs() <= FLOOR, "m=n={size} ({i},{j}): {direct} vs {want}");
                    assert!((memo - want).abs() <= FLOOR, "m=n={size} ({i},{j}): {memo} vs {want}");
                }
            }
        }
    }
    within("exact oracle", started, Duration::from_secs(5));
}

#[test]
fn estimator_is_exact_on_constant_difference_games() {
    let started = Instant::now();
    let mut checked = 0usize;
    for (m, n) in [(1, 1), (2, 2), (3, 2), (2, 4)] {
        let space = FeatureSpace::new(m, n).unwrap();
        for amp in [1.0, -2.5, 0.125] {
            let (patch, token) = (m - 1, m + n - 1);
            let mut game = SyntheticGame::pure_pair(space.clone(), patch, token, amp).unwrap();
            for k in [1usize, 2, 3, 7, 16, 64] {
                for seed in 0..10u64 {
                    for (mode, scale) in [(Mode::Uniform, 1.0), (Mode::Stratified, 0.5)] {
                        let est = estimate(&mut game, &space, &EstimatorConfig::new(mode, k, seed)).unwrap();
                        for i in 0..m {
                            for j in 0..n {
                                let want = if (i, m + j) == (patch, token) { scale * amp } else { 0.0 };
                                if let Some(v) = est.phi.get(i, j) {
                                    assert_eq!(v, want, "{mode:?} K={k} seed={seed} ({i},{j})");
                                    checked += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    println!("covered cells checked: {checked}");
    within("estimator exactness", started, Duration::from_secs(1));
}

/// Runs `trials` seeds and returns per-cell grand means and pooled standard
/// errors, plus the mean within-run stderr over covered cells.
fn repeated(
    scorer: &mut dyn Scorer,
    space: &FeatureSpace,
    mode: Mode,
    k: usize,
    trials: u64,
) -> (Vec<Option<(f64, f64)>>, f64) {
    let runs: Vec<InteractionEstimate> =
        (0..trials).map(|seed| estimate(scorer, space, &EstimatorConfig::new(mode, k, seed)).unwrap()).collect();
    let mut cells = Vec::new();
    let (mut se_sum, mut se_count) = (0.0, 0usize);
    for i in 0..space.patches() {
        for j in 0..space.tokens() {
            let values: Vec<f64> = runs.iter().filter_map(|r| r.phi.get(i, j)).collect();
            for r in &runs {
                if let Some(se) = r.stderr.get(i, j) {
                    se_sum += se;
                    se_count += 1;
                }
            }
            cells.push(match values.len() {
                0 => None,
                1 => Some((values[0], runs.iter().find_map(|r| r.stderr.get(i, j)).unwrap_or(0.0))),
                c => {
                    let (mean, std) = multishap_core::mean_std(&values);
                    Some((mean, std / (c as f64).sqrt()))
                }
            });
        }
    }
    (cells, se_sum / se_count.max(1) as f64)
}

fn check_consistency(label: &str, cells: &[Option<(f64, f64)>], truth: &CellMatrix) -> usize {
    let mut worst = 0.0f64;
    for (idx, cell) in cells.iter().enumerate() {
        let want = truth.cells()[idx].unwrap();
        let (mean, se) = cell.unwrap_or_else(|| panic!("{label}: cell {idx} never covered"));
        let z = (mean - want).abs() / (4.0 * se + FLOOR);
        worst = worst.max(z);
        assert!((mean - want).abs() <= 4.0 * se + FLOOR, "{label} cell {idx}: {mean} vs {want} (se {se})");
    }
    println!("{label}: worst |err| / band = {worst:.3}");
    cells.len()
}

#[test]
fn statistical_consistency() {
    let started = Instant::now();
    let space = FeatureSpace::new(5, 5).unwrap();
    let mut game = SyntheticGame::random_multilinear(space.clone(), 7, 0.5).unwrap();
    let oracle = ExactOracle::tabulate(&mut game.clone(), &space, 20).unwrap();
    let (uniform, _) = repeated(&mut game, &space, Mode::Uniform, 256, 200);
    let (stratified, _) = repeated(&mut game, &space, Mode::Stratified, 256, 200);
    check_consistency("multilinear uniform vs banzhaf", &uniform, &oracle.banzhaf_matrix());
    check_consistency("multilinear stratified vs sii", &stratified, &oracle.sii_matrix(Normalization::Half));

    // Same check on a game with higher-order structure, where the
    // differences actually vary across coalitions.
    let small = FeatureSpace::new(3, 3).unwrap();
    let table = random_table(small.total(), 11);
    let mut scorer = FnScorer(|c: &Coalition| table[c.mask().unwrap() as usize]);
    let oracle = ExactOracle::tabulate(&mut scorer, &small, 20).unwrap();
    let (uniform, _) = repeated(&mut scorer, &small, Mode::Uniform, 256, 200);
    let (stratified, _) = repeated(&mut scorer, &small, Mode::Stratified, 256, 200);
    check_consistency("table uniform vs banzhaf", &uniform, &oracle.banzhaf_matrix());
    check_consistency("table stratified vs sii", &stratified, &oracle.sii_matrix(Normalization::Half));
    within("statistical consistency", started, Duration::from_secs(120));
}

fn random_table(total: usize, seed: u64) -> Vec<f64> {
    let mut x = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..1usize << total)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

#[test]
fn stratified_variance_is_not_larger() {
    let space = FeatureSpace::new(5, 5).unwrap();
    let mut game = SyntheticGame::random_multilinear(space.clone(), 7, 0.5).unwrap();
    let (_, uniform) = repeated(&mut game, &space, Mode::Uniform, 256, 20);
    let (_, stratified) = repeated(&mut game, &space, Mode::Stratified, 256, 20);
    println!("mean stderr: uniform {uniform:.3e}, stratified {stratified:.3e}");
    assert!(stratified <= uniform + FLOOR);

    // Reported only: the ratio on a game where the differences vary.
    let small = FeatureSpace::new(3, 3).unwrap();
    let table = random_table(small.total(), 11);
    let mut scorer = FnScorer(|c: &Coalition| table[c.mask().unwrap() as usize]);
    let (_, u) = repeated(&mut scorer, &small, Mode::Uniform, 256, 20);
    let (_, s) = repeated(&mut scorer, &small, Mode::Stratified, 256, 20);
    println!("table game mean stderr: uniform {u:.4}, stratified {s:.4}, ratio {:.3}", s / u);
}

#[test]
fn evaluation_budget_ceiling() {
    let mut worst = 0.0f64;
    for (m, n) in [(1, 1), (2, 3), (4, 4), (5, 5), (3, 7)] {
        for game in ["purepair", "additive", "multilinear:seed=7"] {
            for mode in ["uniform", "stratified"] {
                for k in ["1", "8", "64"] {
                    let (m_s, n_s) = (m.to_string(), n.to_string());
                    let out = Command::new(BIN)
                        .args(["validate", "--game", game, "--m", &m_s, "--n", &n_s, "--mode", mode, "--K", k, "--json"])
                        .output()
                        .unwrap();
                    let text = String::from_utf8(out.stdout).unwrap();
                    let summary: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
                    let used = summary["max_evals"].as_u64().unwrap();
                    let k: u64 = k.parse().unwrap();
                    let bound = k * (1 + (m + n) as u64 + (m * n) as u64) + 1;
                    assert_eq!(summary["eval_budget"].as_u64(), Some(bound));
                    assert!(used <= bound, "{game} {mode} m={m} n={n} K={k}: {used} > {bound}");
                    worst = worst.max(used as f64 / bound as f64);
                }
            }
        }
    }
    println!("largest evals_used / ceiling: {worst:.3}");
}

/// Published example rows: (S, P, T, R, synergistic).
const EXAMPLES: [(f64, f64, f64, f64, bool); 10] = [
    (45.59, 38.92, 84.51, 0.5394, true),
    (23.36, 27.41, 67.78, 0.4601, false),
    (47.23, 36.22, 83.45, 0.5652, true),
    (32.74, 46.64, 79.38, 0.4084, false),
    (46.48, 28.25, 74.73, 0.6219, true),
    (22.21, 30.87, 67.65, 0.4188, false),
    (55.05, 41.38, 96.43, 0.5709, true),
    (41.74, 46.31, 88.05, 0.4741, false),
    (38.01, 25.65, 63.66, 0.5970, true),
    (32.93, 34.06, 66.09, 0.4982, false),
];

#[test]
fn published_example_metrics_are_consistent() {
    let mut failures = Vec::new();
    for (row, &(s, p, t, r, synergistic)) in EXAMPLES.iter().enumerate() {
        let phi = CellMatrix::from_rows(&[vec![s, -p]]).unwrap();
        let metrics = instance_metrics(&phi).unwrap();
        let ratio = metrics.ratio.unwrap();
        let label = classify_interaction(&metrics);
        let want = if synergistic { InteractionType::Synergistic } else { InteractionType::Suppressive };
        let (dt, dr) = ((metrics.total - t).abs(), (ratio - r).abs());
        let ok = dt <= 0.02 && dr <= 0.0005 && label == want;
        println!(
            "example {:2}: T {:.2} vs {t:.2} (diff {dt:.4}), R {ratio:.4} vs {r:.4} (diff {dr:.5}), {label:?} {}",
            row + 1,
            metrics.total,
            if ok { "ok" } else { "MISMATCH" }
        );
        if !ok {
            failures.push(row + 1);
        }
    }
    assert!(failures.is_empty(), "rows inconsistent with their own S and P: {failures:?}");
}

fn write_doc(path: &Path, r: f64) {
    let doc = MatrixDocument {
        v: 1,
        sample_id: "s".into(),
        m: 1,
        n: 2,
        grid: None,
        token_labels: None,
        phi: vec![vec![Some(r), Some(-(1.0 - r))]],
        evidence: vec![vec![1.0, 1.0]],
        stderr: None,
        metrics: None,
        manifest: None,
        heatmap: None,
        correct: None,
    };
    doc.save(path).unwrap();
}

fn report(ratios: &[f64]) -> (f64, f64) {
    let dir = tempfile::tempdir().unwrap();
    for (k, &r) in ratios.iter().enumerate() {
        write_doc(&dir.path().join(format!("s{k}.phi.json")), r);
    }
    let out = Command::new(BIN).args(["report", "--as-json", "--in"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    (v["metrics"]["MSR"].as_f64().unwrap(), v["metrics"]["SDR"].as_f64().unwrap())
}

#[test]
fn report_msr_and_sdr() {
    assert_eq!(report(&[0.6, 0.4]), (0.5, 0.5));
    assert_eq!(report(&[0.5, 0.5]), (0.5, 0.0));
    let (msr, sdr) = report(&[0.5394, 0.4601]);
    assert!((msr - 0.49975).abs() <= FLOOR, "{msr}");
    assert_eq!(sdr, 0.5);
}

#[test]
fn explain_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(BIN)
            .args(["explain", "--scorer", "synthetic:multilinear:seed=7,m=4,n=3", "--K", "64", "--seed", "5", "--per-token"])
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["sample.phi.json", "sample.agg.png", "sample.tok0.png", "sample.tok2.png"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn runtime_scales_linearly_in_k() {
    // Large enough that cache hits between samples are rare, as with real
    // images and captions.
    let space = FeatureSpace::new(16, 8).unwrap();
    let game = SyntheticGame::random_multilinear(space.clone(), 7, 0.5).unwrap();
    let time = |k: usize| {
        let mut scorer = SyntheticScorer::new(game.clone()).with_delay(Duration::from_millis(10));
        let started = Instant::now();
        estimate(&mut scorer, &space, &EstimatorConfig::new(Mode::Stratified, k, 0)).unwrap();
        (started.elapsed().as_secs_f64(), scorer.calls())
    };
    let (t32, c32) = time(32);
    let (t128, c128) = time(128);
    let ratio = t128 / t32;
    println!("K=32: {t32:.3}s ({c32} calls), K=128: {t128:.3}s ({c128} calls), ratio {ratio:.3}");
    assert!((ratio - 4.0).abs() <= 0.8, "ratio {ratio}");
}
