//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! criterion fails. Pass criterion numbers as arguments to run a subset.
//!
//! Criterion 4 needs the MNIST IDX files (`train-images-idx3-ubyte`,
//! `train-labels-idx1-ubyte`, `t10k-images-idx3-ubyte`,
//! `t10k-labels-idx1-ubyte`) in `$DSC_MNIST_DIR`, default `data/mnist` at the
//! workspace root. Without them it reports BLOCKED instead of running.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::fixtures::{accuracy, open_set_trial, scatter, ten_blobs, OPEN_SET};
use common::grad::{self, LOSS_TOL, NET_TOL};
use common::{brute_force_auc, lcg_values, normal_values, numerical_rank};
use dsc_core::datakit::{gen_blobs, gen_probe_fixture, load_idx, BlobSpec};
use dsc_core::evalkit::{auc_roc, center_distance_matrix, closed_set_accuracy, per_class_recall, TrialSummary};
use dsc_core::inference::{predict_batch, predict_cosine, predict_euclid};
use dsc_core::matrix::{dot, squared_distance};
use dsc_core::trainer::{embed, train};
use dsc_core::{
    build_centers, Centers, Dataset, LayerSpec, LossKind, LossSpec, Mat, Model, Model32, OptimizerKind, TrainConfig,
};

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Blocked,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: String) -> Self {
        Self {
            status: if ok { Status::Pass } else { Status::Fail },
            detail,
        }
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria = [
        Criterion { id: 1, name: "simplex geometry", limit: Some(Duration::from_secs(1)), run: simplex_geometry },
        Criterion { id: 2, name: "gradient oracles", limit: Some(Duration::from_secs(30)), run: gradient_oracles },
        Criterion { id: 3, name: "euclidean/cosine agreement", limit: None, run: euclid_cosine_agreement },
        Criterion { id: 4, name: "MNIST closed-set accuracy", limit: Some(Duration::from_secs(15 * 60)), run: mnist_closed_set },
        Criterion { id: 5, name: "open-set AUC over 5 trials", limit: Some(Duration::from_secs(5 * 60)), run: open_set_auc },
        Criterion { id: 6, name: "radius insensitivity", limit: None, run: radius_sweep },
        Criterion { id: 7, name: "DAM rank", limit: Some(Duration::from_secs(10)), run: dam_rank },
        Criterion { id: 8, name: "loss-variant scatter ordering", limit: None, run: loss_variants },
        Criterion { id: 9, name: "imbalance robustness", limit: None, run: imbalance },
        Criterion { id: 10, name: "AUC oracle", limit: Some(Duration::from_secs(5)), run: auc_oracle },
        Criterion { id: 11, name: "probe semantic neighbors", limit: None, run: probe_neighbors },
    ];

    let (mut passed, mut failed, mut blocked) = (0, 0, 0);
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let started = Instant::now();
        let mut outcome = (c.run)();
        let elapsed = started.elapsed();
        if let Some(limit) = c.limit {
            if outcome.status == Status::Pass && elapsed > limit {
                outcome.status = Status::Fail;
                outcome.detail += &format!("; exceeded {:.0} s limit", limit.as_secs_f64());
            }
        }
        let tag = match outcome.status {
            Status::Pass => {
                passed += 1;
                "PASS"
            }
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Blocked => {
                blocked += 1;
                "BLOCKED"
            }
        };
        println!("[{tag}] criterion {:>2} {}: {} ({:.2} s)", c.id, c.name, outcome.detail, elapsed.as_secs_f64());
    }
    println!("acceptance: {passed} passed, {failed} failed, {blocked} blocked");
    if failed > 0 {
        std::process::exit(1);
    }
}

fn simplex_geometry() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut configs = 0;
    for c in 2..=64usize {
        for d in [c - 1, 2 * c] {
            for u in [1.0, 64.0] {
                let centers = build_centers::<f64>(c, d, u).unwrap();
                let m = centers.matrix();
                let cf = c as f64;
                let dist = u * (2.0 * cf / (cf - 1.0)).sqrt();
                let inner = -u * u / (cf - 1.0);
                for i in 0..c {
                    worst = worst.max((dot(m.row(i), m.row(i)).sqrt() - u).abs() / u);
                    for j in i + 1..c {
                        worst = worst.max((squared_distance(m.row(i), m.row(j)).sqrt() - dist).abs() / dist);
                        worst = worst.max((dot(m.row(i), m.row(j)) - inner).abs() / inner.abs());
                    }
                }
                let centroid: f64 = (0..d)
                    .map(|k| (0..c).map(|i| m[(i, k)]).sum::<f64>().powi(2))
                    .sum::<f64>()
                    .sqrt()
                    / cf;
                worst = worst.max(centroid / u);
                configs += 1;
            }
        }
    }
    Outcome::check(worst < 1e-9, format!("worst relative deviation {worst:.2e} over {configs} configurations (tol 1e-9)"))
}

fn gradient_oracles() -> Outcome {
    let losses = grad::loss_cases();
    let nets = grad::network_cases();
    let worst_loss = losses.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    let worst_net = nets.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    let bad: Vec<&str> = losses
        .iter()
        .filter(|c| !(c.rel_err < LOSS_TOL))
        .chain(nets.iter().filter(|c| !(c.rel_err < NET_TOL)))
        .map(|c| c.name.as_str())
        .collect();
    Outcome::check(
        bad.is_empty(),
        format!(
            "{} loss cases worst {worst_loss:.2e} (tol {LOSS_TOL:.0e}), {} network cases worst {worst_net:.2e} (tol {NET_TOL:.0e}){}",
            losses.len(),
            nets.len(),
            if bad.is_empty() { String::new() } else { format!("; failing: {}", bad.join(", ")) }
        ),
    )
}

fn euclid_cosine_agreement() -> Outcome {
    let mut disagreements = 0;
    let mut compared = 0;
    let mut skipped = 0;
    for (k, c) in [2usize, 5, 16].into_iter().enumerate() {
        let d = c + 1;
        let centers: Centers = build_centers(c, d, 64.0).unwrap();
        let values = normal_values(1000 + k as u64, 10_000 * d);
        for f in values.chunks(d) {
            let f: Vec<f64> = f.iter().map(|v| 40.0 * v).collect();
            let mut dists: Vec<f64> = (0..c).map(|j| squared_distance(&f, centers.center(j))).collect();
            dists.sort_by(f64::total_cmp);
            if dists[0] == dists[1] {
                skipped += 1;
                continue;
            }
            compared += 1;
            if predict_euclid(&f, &centers).unwrap().label != predict_cosine(&f, &centers).unwrap().label {
                disagreements += 1;
            }
        }
    }
    Outcome::check(
        disagreements == 0,
        format!("{disagreements} disagreements over {compared} features with a unique argmin ({skipped} ties skipped)"),
    )
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("DSC_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn mnist_closed_set() -> Outcome {
    let dir = mnist_dir();
    let names = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];
    let missing: Vec<&str> = names.iter().copied().filter(|n| !dir.join(n).is_file()).collect();
    if !missing.is_empty() {
        return Outcome {
            status: Status::Blocked,
            detail: format!("MNIST IDX files not found in {} (missing {}); set DSC_MNIST_DIR", dir.display(), missing.join(", ")),
        };
    }
    let load = |images: &str, labels: &str| load_idx::<f32>(dir.join(images), dir.join(labels));
    let (train_set, test_set) = match (load(names[0], names[1]), load(names[2], names[3])) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::check(false, format!("could not load MNIST: {e}")),
    };
    const EPOCHS: usize = 12;
    let classes = train_set.num_classes();
    let centers = build_centers::<f32>(classes, classes - 1, 64.0).unwrap();
    let model = Model32::mlp(&[train_set.dim(), 256, 128, classes - 1], 0).unwrap();
    let config = TrainConfig::new(EPOCHS, 128, 0).with_optimizer(OptimizerKind::adam(), 1e-3);
    let (model, _) = match train(model, &train_set, &centers, &config, None) {
        Ok(r) => r,
        Err(e) => return Outcome::check(false, format!("training failed: {e}")),
    };
    let f = embed(&model, &test_set.samples, 2048).unwrap();
    let preds: Vec<_> = predict_batch(&f, &centers).unwrap().iter().map(|p| p.label).collect();
    let acc = closed_set_accuracy(&preds, &test_set.labels).unwrap();
    Outcome::check(
        acc >= 0.97,
        format!("test accuracy {:.2}% after {EPOCHS} epochs on {} training images (need >= 97.0%)", 100.0 * acc, train_set.len()),
    )
}

fn open_set_auc() -> Outcome {
    let data = ten_blobs(1);
    let run = |kind| {
        let trials: Vec<_> = (0..5).map(|t| open_set_trial(&data, 6, 100 + t, &OPEN_SET, kind)).collect();
        TrialSummary::new(trials.iter().map(|t| t.auc).collect(), trials.iter().map(|t| t.closed_accuracy).collect())
    };
    let plain = run(LossKind::Dsc);
    let background = run(LossKind::DscBackground);
    let table_ok = plain.auc_table.contains(" ± ") && plain.aucs.len() == 5;
    Outcome::check(
        plain.auc_mean >= 0.95 && background.auc_mean >= plain.auc_mean && table_ok,
        format!(
            "dsc AUC {} (mean {:.7}), dsc_background AUC {} (mean {:.7}); need dsc >= 95.0 and background not lower",
            plain.auc_table, plain.auc_mean, background.auc_table, background.auc_mean
        ),
    )
}

fn radius_sweep() -> Outcome {
    let train_set: Dataset = gen_blobs(&BlobSpec::new(10, 32, 100, 1.0, 1)).unwrap();
    let test_set: Dataset = gen_blobs(&BlobSpec::new(10, 32, 100, 1.0, 2)).unwrap();
    let accs: Vec<f64> = [32.0, 64.0, 100.0, 150.0, 200.0]
        .iter()
        .map(|&u| {
            let centers = build_centers::<f64>(10, 9, u).unwrap();
            let model = Model::mlp(&[32, 64, 9], 3).unwrap();
            let config = TrainConfig::new(20, 32, 3).with_optimizer(OptimizerKind::adam(), 1e-2);
            let (model, _) = train(model, &train_set, &centers, &config, None).unwrap();
            accuracy(&model, &test_set, &centers)
        })
        .collect();
    let spread = accs.iter().cloned().fold(f64::MIN, f64::max) - accs.iter().cloned().fold(f64::MAX, f64::min);
    let listed: Vec<String> = accs.iter().map(|a| format!("{:.1}", 100.0 * a)).collect();
    Outcome::check(
        spread <= 0.02,
        format!("accuracies for u = 32/64/100/150/200: {} %, spread {:.1} points (limit 2)", listed.join("/"), 100.0 * spread),
    )
}

fn dam_rank() -> Outcome {
    let rank_of = |activation: bool, seed: u64| {
        let model = Model::new(&[LayerSpec::Dam { input: 4, classes: 10, activation }], seed).unwrap();
        let x = Mat::from_vec(200, 4, normal_values(5000 + seed, 800)).unwrap();
        numerical_rank(&model.predict(&x).unwrap(), 1e-8)
    };
    let with: Vec<usize> = (0..20).map(|s| rank_of(true, s)).collect();
    let without: Vec<usize> = (0..20).map(|s| rank_of(false, s)).collect();
    let high = with.iter().filter(|&&r| r > 5).count();
    let low = without.iter().filter(|&&r| r <= 5).count();
    Outcome::check(
        high >= 18 && low == 20,
        format!("rank > 5 with ReLU in {high}/20 seeds (need 18), rank <= 5 ablated in {low}/20 (need 20)"),
    )
}

fn loss_variants() -> Outcome {
    let train_set: Dataset = gen_blobs(&BlobSpec::new(3, 4, 200, 1.0, 1)).unwrap();
    let test_set: Dataset = gen_blobs(&BlobSpec::new(3, 4, 200, 1.0, 2)).unwrap();
    let centers = build_centers::<f64>(3, 2, 5.0).unwrap();
    let run = |loss| {
        let model = Model::mlp(&[4, 32, 2], 3).unwrap();
        let config = TrainConfig::new(30, 32, 3).with_loss(loss).with_optimizer(OptimizerKind::adam(), 1e-2);
        let (model, _) = train(model, &train_set, &centers, &config, None).unwrap();
        (scatter(&model, &train_set, &centers), accuracy(&model, &test_set, &centers))
    };
    let (dsc, _) = run(LossSpec::dsc());
    let (hinge, _) = run(LossSpec::hinge(4.0));
    let (softmax, softmax_acc) = run(LossSpec::fixed_softmax());
    let ordered = (0..3).all(|c| dsc[c] < hinge[c] && hinge[c] < softmax[c]);
    let fmt = |s: &[f64]| s.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join("/");
    Outcome::check(
        ordered && softmax_acc >= 0.95,
        format!(
            "per-class scatter dsc {} < hinge {} < softmax {}; softmax test accuracy {:.3} (need >= 0.95)",
            fmt(&dsc),
            fmt(&hinge),
            fmt(&softmax),
            softmax_acc
        ),
    )
}

/// Converged means every class scatter is below 1% of the squared center spacing.
fn imbalance() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for seed in 0..3u64 {
        let train_set: Dataset =
            gen_blobs(&BlobSpec::new(5, 16, 0, 1.0, seed).with_counts(vec![20, 200, 200, 200, 200])).unwrap();
        let test_set: Dataset = gen_blobs(&BlobSpec::new(5, 16, 200, 1.0, 100 + seed)).unwrap();
        let centers = build_centers::<f64>(5, 4, 5.0).unwrap();
        let model = Model::mlp(&[16, 128, 128, 4], seed).unwrap();
        let config = TrainConfig::new(100, 64, seed).with_optimizer(OptimizerKind::adam(), 1e-3);
        let (model, _) = train(model, &train_set, &centers, &config, None).unwrap();
        let s = scatter(&model, &train_set, &centers);
        let balanced = s[1..].iter().sum::<f64>() / 4.0;
        let ratio = s[0] / balanced;
        let converged = s.iter().all(|&v| v < 0.01 * centers.expected_pairwise_distance().powi(2));
        let f = embed(&model, &test_set.samples, 1024).unwrap();
        let preds: Vec<_> = predict_batch(&f, &centers).unwrap().iter().map(|p| p.label).collect();
        let recall = per_class_recall(&preds, &test_set.labels, 5)[0].unwrap();
        ok &= converged && ratio <= 2.0 && recall >= 0.95;
        notes.push(format!("seed {seed}: ratio {ratio:.2}, recall {recall:.3}{}", if converged { "" } else { ", not converged" }));
    }
    Outcome::check(ok, format!("minority/balanced scatter (limit 2) and minority recall (need 0.95): {}", notes.join("; ")))
}

fn auc_oracle() -> Outcome {
    let mut mismatches = 0;
    let mut with_ties = 0;
    for inst in 0..200u64 {
        let sizes = lcg_values(inst, 2, 1.0);
        let nk = 1 + ((sizes[0] + 1.0) * 150.0) as usize;
        let nu = 1 + ((sizes[1] + 1.0) * 150.0) as usize;
        // Coarse grids force ties; the rest are continuous.
        let grid = if inst % 2 == 0 { Some(1 + inst % 7) } else { None };
        let draw = |seed: u64, n: usize| -> Vec<f64> {
            lcg_values(seed, n, 1.0)
                .into_iter()
                .map(|v| match grid {
                    Some(g) => (v * g as f64).round(),
                    None => v,
                })
                .collect()
        };
        let known = draw(10_000 + inst, nk);
        let unknown = draw(20_000 + inst, nu);
        if known.iter().any(|k| unknown.contains(k)) {
            with_ties += 1;
        }
        if auc_roc(&known, &unknown).unwrap() != brute_force_auc(&known, &unknown) {
            mismatches += 1;
        }
    }
    Outcome::check(mismatches == 0, format!("{mismatches} mismatches over 200 instances ({with_ties} with cross ties)"))
}

fn probe_neighbors() -> Outcome {
    let mut hits = 0;
    let mut notes = Vec::new();
    for seed in 0..5u64 {
        let fx = gen_probe_fixture::<f64>(6, 4, 12, 200, 1.0, 3.0, seed).unwrap();
        let known: Vec<usize> = (0..fx.data.len()).filter(|&i| fx.data.labels[i] < fx.num_known).collect();
        let train_set = fx.data.subset(&known);
        let centers = build_centers::<f64>(6, 5, 64.0).unwrap();
        let model = Model::mlp(&[12, 64, 5], seed).unwrap();
        let config = TrainConfig::new(15, 32, seed).with_optimizer(OptimizerKind::adam(), 1e-3);
        let (model, _) = train(model, &train_set, &centers, &config, None).unwrap();
        let f = embed(&model, &fx.data.samples, 1024).unwrap();
        let dm = center_distance_matrix(&f, &fx.data.labels).unwrap();
        let known_ids: Vec<usize> = (0..fx.num_known).collect();
        let nearest: Vec<usize> = (0..fx.neighbors.len())
            .map(|p| dm.nearest_among(fx.num_known + p, &known_ids).unwrap())
            .collect();
        if nearest == fx.neighbors {
            hits += 1;
        }
        notes.push(format!("{:.2}", dm.spread_ratio(&known_ids).unwrap()));
    }
    Outcome::check(
        hits == 5,
        format!("designated neighbor nearest in {hits}/5 seeds; known-center spread ratios {}", notes.join("/")),
    )
}
