//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line with
//! the measured quantities and then asserts the criterion.
//!
//! The training experiments (criteria 5, 6, 7 and 9) share one set of runs on
//! seeds 1..=5, computed once per process.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use idml::augment::{mix_batch, AugmentConfig};
use idml::data::SynthConfig;
use idml::eval::retrieval::{rank_stats_from_table, recall_at_k_from_table};
use idml::eval::nmi;
use idml::harness::{self, DataSource, RunConfig, RunOutput};
use idml::losses::{LossKind, LossParams, Objective};
use idml::model::gradcheck::{gradcheck, h_factor_check, GradcheckOptions};
use idml::model::{EncoderConfig, Model};
use idml::{LabelSet, Metric, MetricParams, Rng, Sample, Vector};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Written to the process stdout directly so the line shows without
/// `--nocapture`.
fn report(n: usize, ok: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
}

fn small_encoder(head_u_scale: f64) -> EncoderConfig {
    EncoderConfig {
        hidden: vec![8],
        semantic_dim: 4,
        uncertainty_dim: 3,
        head_u_scale,
        ..EncoderConfig::new(6)
    }
}

/// Two clean samples for each of four classes plus mixed ones.
fn random_batch(rng: &mut Rng, mix_fraction: f64) -> Vec<Sample> {
    let mut clean = Vec::new();
    for c in 0..4u32 {
        for _ in 0..2 {
            let x: Vec<f64> = (0..6).map(|d| if d as u32 == c { 2.0 } else { 0.0 } + rng.normal()).collect();
            clean.push(Sample::clean(Vector::new(x).unwrap(), c));
        }
    }
    let cfg = AugmentConfig {
        mix_fraction,
        ..AugmentConfig::none()
    };
    let mixed = mix_batch(&clean, &cfg, rng).unwrap();
    clean.extend(mixed);
    clean
}

fn objective(loss: LossKind, metric: Metric, mp: MetricParams) -> Objective {
    Objective::new(loss, metric).with_params(mp, LossParams::default())
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// `|a - b|_inf / max(|a|_inf, |b|_inf)`.
fn rel_vec(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[test]
fn criterion_1_degeneration() {
    let started = Instant::now();
    let mp = MetricParams {
        gamma: 0.0,
        ..MetricParams::default()
    };
    let mut worst: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    let mut rng = Rng::new(11);
    for loss in LossKind::ALL {
        let proxies = if loss.uses_proxies() { vec![0, 1, 2, 3] } else { vec![] };
        let entry = worst.entry(loss.name()).or_insert((0.0, 0.0));
        for _ in 0..100 {
            let mut model = Model::new(small_encoder(1.0), proxies.clone(), &mut rng).unwrap();
            model.freeze_uncertainty();
            let batch = random_batch(&mut rng, 0.5);
            let mining_seed = rng.below(1 << 30) as u64;
            let idml = model
                .loss_and_grad(&batch, &objective(loss, Metric::Ism, mp), None, &mut Rng::new(mining_seed))
                .unwrap();
            let base = model
                .loss_and_grad(&batch, &objective(loss, Metric::Euclidean, mp), None, &mut Rng::new(mining_seed))
                .unwrap();
            assert!(idml.embeddings.iter().all(|e| e.uncertainty.as_slice().iter().all(|&v| v == 0.0)));
            entry.0 = entry.0.max(rel(idml.value.value, base.value.value));
            entry.1 = entry.1.max(rel_vec(&idml.grads, &base.grads));
        }
    }
    let elapsed = started.elapsed();
    let max_err = worst.values().map(|(v, g)| v.max(*g)).fold(0.0, f64::max);
    let ok = max_err <= 1e-12 && elapsed < Duration::from_secs(60);
    let per_loss: Vec<String> = worst
        .iter()
        .map(|(name, (v, g))| format!("{name}={v:.1e}/{g:.1e}"))
        .collect();
    report(
        1,
        ok,
        &format!(
            "max rel err {max_err:.2e} (value/grad per loss: {}) in {:.1}s",
            per_loss.join(" "),
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_2_gradient_weight_identity() {
    let settings = [(0.0, 5.0), (0.3, 2.0), (0.0, 0.5)];
    let mut details = Vec::new();
    let mut ok = true;
    for (i, &(gamma, tau)) in settings.iter().enumerate() {
        let mp = MetricParams::new(gamma, tau).unwrap();
        let r = h_factor_check(1000, 8, &mp, &mut Rng::new(20 + i as u64)).unwrap();
        ok &= r.max_ratio_err <= 1e-6 && r.bound_violations == 0 && r.max_h <= 1.0;
        details.push(format!(
            "gamma={gamma} tau={tau}: ratio err {:.1e}, max H {:.6}, bound violations {}",
            r.max_ratio_err, r.max_h, r.bound_violations
        ));
    }
    report(2, ok, &details.join("; "));
    assert!(ok);
}

#[test]
fn criterion_3_gradchecks() {
    let started = Instant::now();
    let opts = GradcheckOptions::default();
    let mp = MetricParams::new(0.1, 5.0).unwrap();
    let mut failures = Vec::new();
    let mut max_err: f64 = 0.0;
    let mut rng = Rng::new(31);
    for loss in LossKind::ALL {
        for metric in [Metric::Ism, Metric::Euclidean, Metric::IsmDis] {
            let proxies = if loss.uses_proxies() { vec![0, 1, 2, 3] } else { vec![] };
            let model = Model::new(small_encoder(1.0), proxies, &mut rng).unwrap();
            let r = gradcheck(
                &model,
                |r| random_batch(r, 0.5),
                &objective(loss, metric, mp),
                &opts,
                &mut rng,
            )
            .unwrap();
            max_err = max_err.max(r.summary.max_rel_err);
            if !r.passed {
                failures.push(format!("{loss}/{metric} ({:.1e})", r.summary.max_rel_err));
            }
        }
    }
    let elapsed = started.elapsed();
    let ok = failures.is_empty() && max_err < 1e-4 && elapsed < Duration::from_secs(300);
    report(
        3,
        ok,
        &format!(
            "21 checks, max rel err {max_err:.2e}, failures [{}] in {:.1}s",
            failures.join(", "),
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

fn brute_rank(dists: &[Vec<f64>], q: usize, j: usize) -> usize {
    (0..dists.len())
        .filter(|&m| m != q && (dists[q][m] < dists[q][j] || (dists[q][m] == dists[q][j] && m < j)))
        .count()
}

fn brute_recall(dists: &[Vec<f64>], labels: &[LabelSet], k: usize) -> f64 {
    let n = labels.len();
    let hits = (0..n)
        .filter(|&q| (0..n).any(|j| j != q && labels[q].matches(&labels[j]) && brute_rank(dists, q, j) < k))
        .count();
    hits as f64 / n as f64
}

/// Mean R-precision and MAP@R over queries with at least one partner.
fn brute_rank_stats(dists: &[Vec<f64>], labels: &[LabelSet]) -> Option<(f64, f64)> {
    let n = labels.len();
    let (mut rp_sum, mut map_sum, mut queries) = (0.0, 0.0, 0usize);
    for q in 0..n {
        let mut by_rank = vec![0usize; n - 1];
        for j in (0..n).filter(|&j| j != q) {
            by_rank[brute_rank(dists, q, j)] = j;
        }
        let r = (0..n).filter(|&j| j != q && labels[q].matches(&labels[j])).count();
        if r == 0 {
            continue;
        }
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (pos, &j) in by_rank.iter().enumerate().take(r) {
            if labels[q].matches(&labels[j]) {
                hits += 1;
                ap += hits as f64 / (pos + 1) as f64;
            }
        }
        rp_sum += hits as f64 / r as f64;
        map_sum += ap / r as f64;
        queries += 1;
    }
    (queries > 0).then(|| (rp_sum / queries as f64, map_sum / queries as f64))
}

/// `(H(L) + H(C) - H(L, C)) * 2 / (H(L) + H(C))` from explicit counts.
fn brute_nmi(labels: &[u32], clusters: &[usize]) -> f64 {
    let n = labels.len() as f64;
    let h = |counts: Vec<usize>| -> f64 {
        counts
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let max_l = *labels.iter().max().unwrap() as usize;
    let max_c = *clusters.iter().max().unwrap();
    let mut joint = vec![vec![0usize; max_c + 1]; max_l + 1];
    for (&l, &c) in labels.iter().zip(clusters) {
        joint[l as usize][c] += 1;
    }
    let hl = h(joint.iter().map(|row| row.iter().sum()).collect());
    let hc = h((0..=max_c).map(|c| joint.iter().map(|row| row[c]).sum()).collect());
    let hlc = h(joint.iter().flatten().copied().collect());
    if hl + hc == 0.0 {
        1.0
    } else {
        (2.0 * (hl + hc - hlc) / (hl + hc)).clamp(0.0, 1.0)
    }
}

#[test]
fn criterion_4_metrics_match_brute_force() {
    let mut rng = Rng::new(41);
    let mut rank_mismatches = 0;
    let mut max_nmi_err: f64 = 0.0;
    let mut checked_k = 0;
    for inst in 0..200 {
        let n = 5 + rng.below(46);
        let dim = 1 + rng.below(4);
        let n_classes = 1 + rng.below(6) as u32;
        // integer coordinates on odd instances produce distance ties
        let grid = inst % 2 == 1;
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..dim)
                    .map(|_| if grid { rng.below(4) as f64 } else { rng.normal() })
                    .collect()
            })
            .collect();
        let labels: Vec<LabelSet> = (0..n)
            .map(|_| {
                let a = rng.below(n_classes as usize) as u32;
                if rng.bernoulli(0.1) {
                    LabelSet::new([a, rng.below(n_classes as usize) as u32]).unwrap()
                } else {
                    LabelSet::single(a)
                }
            })
            .collect();
        let dists: Vec<Vec<f64>> = points
            .iter()
            .map(|p| {
                points
                    .iter()
                    .map(|q| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                    .collect()
            })
            .collect();
        for k in 1..n.min(9) {
            checked_k += 1;
            if recall_at_k_from_table(&dists, &labels, k).unwrap() != brute_recall(&dists, &labels, k) {
                rank_mismatches += 1;
            }
        }
        match (rank_stats_from_table(&dists, &labels), brute_rank_stats(&dists, &labels)) {
            (Ok(s), Some((rp, map))) => {
                if s.r_precision != rp || s.map_at_r != map {
                    rank_mismatches += 1;
                }
            }
            (Err(_), None) => {}
            _ => rank_mismatches += 1,
        }
        let primary: Vec<u32> = labels.iter().map(|l| l.primary()).collect();
        let n_clusters = 1 + rng.below(6);
        let clusters: Vec<usize> = (0..n).map(|_| rng.below(n_clusters)).collect();
        max_nmi_err = max_nmi_err.max((nmi(&primary, &clusters).unwrap() - brute_nmi(&primary, &clusters)).abs());
    }
    let ok = rank_mismatches == 0 && max_nmi_err <= 1e-12;
    report(
        4,
        ok,
        &format!(
            "200 instances, {checked_k} recall@K checks, rank mismatches {rank_mismatches}, max NMI err {max_nmi_err:.1e}"
        ),
    );
    assert!(ok);
}

struct Arm {
    runs: Vec<RunOutput>,
    configs: Vec<RunConfig>,
}

impl Arm {
    fn r1(&self) -> Vec<f64> {
        self.runs
            .iter()
            .map(|r| r.record.eval.as_ref().unwrap().recall_at_k[&1])
            .collect()
    }

    fn mean_r1(&self) -> f64 {
        mean(&self.r1())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Desk defaults on data with 30% ambiguous and 5% mislabeled samples.
fn noisy_config(loss: LossKind, metric: Metric, mixup: bool, seed: u64) -> RunConfig {
    let mut c = RunConfig::desk();
    c.data = DataSource::Synthetic(SynthConfig {
        ambiguous_frac: 0.3,
        mislabel_frac: 0.05,
        seed,
        ..SynthConfig::default()
    });
    c.seed = seed;
    c.loss = loss;
    c.metric = metric;
    if !mixup {
        c.augment.mix_fraction = 0.0;
    }
    c
}

struct Experiments {
    arms: BTreeMap<&'static str, Arm>,
    elapsed: Duration,
}

fn experiments() -> &'static Experiments {
    static CELL: OnceLock<Experiments> = OnceLock::new();
    CELL.get_or_init(|| {
        let started = Instant::now();
        let plan: [(&str, LossKind, Metric, bool); 6] = [
            ("contrastive", LossKind::Contrastive, Metric::Euclidean, false),
            ("idml_contrastive", LossKind::Contrastive, Metric::Ism, true),
            ("idml_dis_contrastive", LossKind::Contrastive, Metric::IsmDis, true),
            ("proxy_anchor", LossKind::ProxyAnchor, Metric::Euclidean, false),
            ("idml_proxy_anchor", LossKind::ProxyAnchor, Metric::Ism, true),
            ("idml_dis_proxy_anchor", LossKind::ProxyAnchor, Metric::IsmDis, true),
        ];
        let mut arms = BTreeMap::new();
        for (name, loss, metric, mixup) in plan {
            let configs: Vec<RunConfig> = SEEDS.iter().map(|&s| noisy_config(loss, metric, mixup, s)).collect();
            let runs = configs.iter().map(|c| harness::train(c).unwrap()).collect();
            arms.insert(name, Arm { runs, configs });
        }
        Experiments {
            arms,
            elapsed: started.elapsed(),
        }
    })
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

#[test]
fn criterion_5_idml_beats_baselines_on_noisy_data() {
    let ex = experiments();
    let mut ok = ex.elapsed < Duration::from_secs(600);
    let mut details = Vec::new();
    for (idml, base) in [("idml_contrastive", "contrastive"), ("idml_proxy_anchor", "proxy_anchor")] {
        let (a, b) = (&ex.arms[idml], &ex.arms[base]);
        ok &= a.mean_r1() >= b.mean_r1();
        details.push(format!(
            "{idml} R@1 {:.4} [{}] vs {base} {:.4} [{}]",
            a.mean_r1(),
            fmt_list(&a.r1()),
            b.mean_r1(),
            fmt_list(&b.r1())
        ));
    }
    details.push(format!("{:.0}s for 30 runs", ex.elapsed.as_secs_f64()));
    report(5, ok, &details.join("; "));
    assert!(ok);
}

#[test]
fn criterion_6_mixed_samples_carry_more_uncertainty() {
    let ex = experiments();
    let mut ok = true;
    let mut details = Vec::new();
    for name in ["idml_contrastive", "idml_proxy_anchor"] {
        let arm = &ex.arms[name];
        let last: Vec<(f64, f64)> = arm
            .runs
            .iter()
            .map(|r| {
                let e = r.record.epochs.last().unwrap();
                (e.mean_u_clean, e.mean_u_mixed.unwrap())
            })
            .collect();
        let wins = last.iter().filter(|(c, m)| m > c).count();
        let test_wins = arm
            .runs
            .iter()
            .filter(|r| {
                let e = r.record.eval.as_ref().unwrap();
                e.mean_uncert_mixed.unwrap() > e.mean_uncert_clean
            })
            .count();
        ok &= wins >= 4;
        let ratio = mean(&last.iter().map(|(c, m)| m / c).collect::<Vec<_>>());
        details.push(format!(
            "{name}: training mixed > clean in {wins}/5 seeds (mean ratio {ratio:.3}), test split {test_wins}/5"
        ));
    }
    report(6, ok, &details.join("; "));
    assert!(ok);
}

#[test]
fn criterion_7_ablations() {
    let ex = experiments();
    let mut ok = true;
    let mut details = Vec::new();
    for (sim, dis) in [
        ("idml_contrastive", "idml_dis_contrastive"),
        ("idml_proxy_anchor", "idml_dis_proxy_anchor"),
    ] {
        let (a, b) = (ex.arms[sim].mean_r1(), ex.arms[dis].mean_r1());
        ok &= a >= b;
        details.push(format!("{sim} {a:.4} vs {dis} {b:.4}"));
    }
    for name in ["idml_contrastive", "idml_proxy_anchor"] {
        let arm = &ex.arms[name];
        let ism_r1: Vec<f64> = arm
            .runs
            .iter()
            .zip(&arm.configs)
            .map(|(r, c)| {
                let mut c = c.clone();
                c.eval.test_metric = Metric::Ism;
                harness::evaluate_checkpoint(&c, &r.model).unwrap().report.recall_at_k[&1]
            })
            .collect();
        let (euc, ism) = (arm.mean_r1(), mean(&ism_r1));
        ok &= euc >= ism;
        details.push(format!("{name} test metric euclidean {euc:.4} vs ism {ism:.4}"));
    }
    report(7, ok, &details.join("; "));
    assert!(ok);
}

fn train_cli(config: &Path, out: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_idml"))
        .args(["train", "--config"])
        .arg(config)
        .arg("--output")
        .arg(out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
}

#[test]
fn criterion_8_reproducible_records() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    noisy_config(LossKind::Contrastive, Metric::Ism, true, 7).save(&config).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_cli(&config, &a);
    train_cli(&config, &b);
    let ra = std::fs::read(a.join("record.json")).unwrap();
    let rb = std::fs::read(b.join("record.json")).unwrap();
    let ok = !ra.is_empty() && ra == rb;
    report(8, ok, &format!("record.json {} vs {} bytes, identical: {}", ra.len(), rb.len(), ra == rb));
    assert!(ok);
}

#[test]
fn criterion_9_uncertainty_decorrelated_from_semantics() {
    let ex = experiments();
    let mut all = Vec::new();
    let mut details = Vec::new();
    for name in ["idml_contrastive", "idml_proxy_anchor"] {
        let cos: Vec<f64> = ex.arms[name]
            .runs
            .iter()
            .map(|r| r.record.eval.as_ref().unwrap().corr.unwrap().cosine)
            .collect();
        details.push(format!("{name} cosine [{}]", fmt_list(&cos)));
        all.extend(cos);
    }
    let mean_abs = mean(&all.iter().map(|c| c.abs()).collect::<Vec<_>>());
    let ok = mean_abs < 0.2;
    report(9, ok, &format!("mean |cosine| {mean_abs:.3} over 10 runs; {}", details.join("; ")));
    assert!(ok);
}
