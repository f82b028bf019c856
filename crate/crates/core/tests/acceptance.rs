//! Acceptance suite. Prints one PASS/FAIL line per criterion, then fails the
//! test if any criterion failed or overran its time budget.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use dualens::classifiers::adaboost::AdaBoostModel;
use dualens::classifiers::gbt::{GbtModel, GbtParams};
use dualens::classifiers::knn::{KnnModel, Metric, Weighting};
use dualens::classifiers::mlp::{Activation, LossKind, Network};
use dualens::classifiers::svm::{Kernel, KernelKind, SvmModel, SvmParams};
use dualens::classifiers::{self, ClassifierSpec, Family, ParamValue};
use dualens::data::{FeatureMatrix, LabeledDataset};
use dualens::ensemble::{select_top_k, EvaluationTable, FamilyRule};
use dualens::harness::{RunConfig, Workspace};
use dualens::hpo::{self, GridSpec, SearchOptions};
use dualens::imgprep::{self, CropBounds, CropParams, GrayImage};
use dualens::par::Execution;
use dualens::transforms::{self, SmoteConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn selection_fixture_replay() -> Outcome {
    let cases = [
        ("bt_small_2c.csv", ["vit_base_patch16_224", "vit_small_patch32_224", "vit_small_patch16_224"]),
        ("bt_large_4c.csv", ["vgg16", "mnasnet0_5", "vit_small_patch32_224"]),
    ];
    for (file, expected) in cases {
        let table = EvaluationTable::read_csv(&common::fixture(file)).map_err(|e| e.to_string())?;
        let sel = select_top_k(&table, 3, &FamilyRule::standard()).map_err(|e| e.to_string())?;
        let got: BTreeSet<&str> = sel.ids.iter().map(String::as_str).collect();
        let want: BTreeSet<&str> = expected.into_iter().collect();
        ensure(got == want, || format!("{file}: selected {got:?}, expected {want:?}"))?;
    }
    Ok(())
}

fn gnb_oracle() -> Outcome {
    let rows = vec![vec![1.0, 2.0], vec![2.0, 1.5], vec![1.5, 2.5], vec![4.0, 0.5], vec![5.0, 1.0], vec![4.5, 0.0], vec![5.5, 0.8]];
    let raw = [0, 0, 0, 1, 1, 1, 1];
    let ds = LabeledDataset::from_raw_labels(FeatureMatrix::from_rows(&rows).unwrap(), &raw, "gnb").unwrap();
    let model = classifiers::fit(&ClassifierSpec::new(Family::GaussianNb, 0), &ds).map_err(|e| e.to_string())?;

    let col_var = |j: usize| {
        let m = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
        rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / rows.len() as f64
    };
    let eps = 1e-9 * col_var(0).max(col_var(1));
    let class_stats = |c: i64| {
        let members: Vec<&Vec<f64>> = rows.iter().zip(raw).filter(|(_, l)| *l == c).map(|(r, _)| r).collect();
        let n = members.len() as f64;
        let mean: Vec<f64> = (0..2).map(|j| members.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let var: Vec<f64> = (0..2).map(|j| members.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n + eps).collect();
        (n / rows.len() as f64, mean, var)
    };
    let stats = [class_stats(0), class_stats(1)];
    for q in [[1.2, 2.1], [3.0, 1.2], [4.8, 0.4], [2.9, 1.0]] {
        let joint: Vec<f64> = stats
            .iter()
            .map(|(prior, mean, var)| {
                prior
                    * (0..2)
                        .map(|j| (-(q[j] - mean[j]).powi(2) / (2.0 * var[j])).exp() / (2.0 * std::f64::consts::PI * var[j]).sqrt())
                        .product::<f64>()
            })
            .collect();
        let total: f64 = joint.iter().sum();
        let got = model.predict_proba(&FeatureMatrix::from_rows(&[q.to_vec()]).unwrap()).unwrap();
        for c in 0..2 {
            let want = joint[c] / total;
            ensure((got[0][c] - want).abs() < 1e-9, || format!("GNB posterior at {q:?} class {c}: {} vs {want}", got[0][c]))?;
        }
    }
    Ok(())
}

fn knn_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let n = rng.gen_range(5..40);
        let d = rng.gen_range(1..5);
        // Integer coordinates make distance ties common.
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(0..5) as f64).collect()).collect();
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let k = rng.gen_range(1..=n.min(7));
        let metric = [Metric::Euclidean, Metric::Manhattan, Metric::Minkowski(3.0)][case % 3];
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let model = KnnModel::fit(&x, &y, 3, k, metric, Weighting::Uniform).map_err(|e| e.to_string())?;
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(0..5) as f64 + 0.5 * rng.gen_range(0..2) as f64).collect();
        let dist = |r: &[f64]| -> f64 {
            match metric {
                Metric::Euclidean => r.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
                Metric::Manhattan => r.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum(),
                Metric::Minkowski(p) => r.iter().zip(&q).map(|(a, b)| (a - b).abs().powf(p)).sum::<f64>().powf(1.0 / p),
            }
        };
        let mut brute: Vec<(f64, usize)> = rows.iter().enumerate().map(|(i, r)| (dist(r), i)).collect();
        brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let want: Vec<usize> = brute[..k].iter().map(|p| p.1).collect();
        let got: Vec<usize> = model.neighbors(&q).iter().map(|p| p.0).collect();
        ensure(got == want, || format!("case {case}: neighbors {got:?}, brute force {want:?}"))?;
    }
    Ok(())
}

fn svm_separable_kkt() -> Outcome {
    let ds = common::blobs(80, 2, 2, 0.6, 31);
    let (x, y) = (&ds.features, &ds.labels);
    let c = 1.0;
    let params = SvmParams { kernel: Kernel { kind: KernelKind::Linear, gamma: 0.0, coef0: 0.0 }, c, tol: 1e-3, balanced: false, max_iter: None };
    let model = SvmModel::fit(x, y, 2, &params).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 0..x.rows() {
        let f = model.decision_row(x.row(i))[0];
        let yi = if y[i] == 1 { 1.0 } else { -1.0 };
        ensure(yi * f > 0.0, || format!("training row {i} misclassified (margin {})", yi * f))?;
        let alpha = model
            .support_vectors
            .iter()
            .position(|s| s.as_slice() == x.row(i))
            .map_or(0.0, |s| model.dual_coef[0][s] * yi);
        let m = yi * f;
        let violation = if alpha <= 1e-12 {
            (1.0 - m).max(0.0)
        } else if alpha >= c - 1e-12 {
            (m - 1.0).max(0.0)
        } else {
            (1.0 - m).abs()
        };
        worst = worst.max(violation);
    }
    let balance: f64 = model.dual_coef[0].iter().sum();
    ensure(worst < 1e-3, || format!("KKT residual {worst}"))?;
    ensure(balance.abs() < 1e-9, || format!("sum alpha_i y_i = {balance}"))
}

fn mlp_gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = DMatrix::from_fn(7, 4, |_, _| rng.gen_range(-1.5..1.5));
    let y = DMatrix::from_fn(7, 3, |r, c| f64::from(u8::from(r % 3 == c)));
    for activation in [Activation::Tanh, Activation::Logistic, Activation::Relu] {
        for loss in [LossKind::Mse, LossKind::CrossEntropy] {
            let net = Network { sizes: vec![4, 6, 5, 3], activation, loss, alpha: 1e-2 };
            let theta = net.init(&mut rng);
            let (_, grad) = net.loss_and_grad(&theta, &x, &y);
            let h = 1e-6;
            let numeric: Vec<f64> = (0..theta.len())
                .map(|p| {
                    let mut plus = theta.clone();
                    let mut minus = theta.clone();
                    plus[p] += h;
                    minus[p] -= h;
                    (net.loss_and_grad(&plus, &x, &y).0 - net.loss_and_grad(&minus, &x, &y).0) / (2.0 * h)
                })
                .collect();
            let diff: f64 = grad.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
            let rel = diff / scale;
            ensure(rel < 1e-4, || format!("{activation:?}/{loss:?}: relative gradient error {rel:e}"))?;
        }
    }
    Ok(())
}

fn adaboost_error_recomputation() -> Outcome {
    let ds = common::blobs(150, 3, 2, 2.5, 17);
    let (model, rounds) = AdaBoostModel::fit_traced(&ds.features, &ds.labels, 3, 25, 0.5, 4);
    ensure(!rounds.is_empty(), || "no boosting rounds".into())?;
    for (r, round) in rounds.iter().enumerate() {
        let total: f64 = round.sample_weights.iter().sum();
        let wrong: f64 = round
            .sample_weights
            .iter()
            .zip(&round.predictions)
            .zip(&ds.labels)
            .filter(|((_, p), y)| p != y)
            .map(|((w, _), _)| w)
            .sum();
        let recomputed = wrong / total;
        ensure((recomputed - round.weighted_error).abs() < 1e-12, || {
            format!("round {r}: recomputed {recomputed}, reported {}", round.weighted_error)
        })?;
        if let Some(stage) = model.stages.get(r) {
            ensure((stage.weighted_error - recomputed).abs() < 1e-12, || format!("stage {r} error differs from round"))?;
        }
    }
    Ok(())
}

fn gbt_loss_monotone() -> Outcome {
    for (classes, seed) in [(2, 3), (3, 4)] {
        let ds = common::blobs(120, classes, 3, 3.0, seed);
        let params = GbtParams { n_estimators: 40, learning_rate: 0.3, max_depth: 3, subsample: 1.0, lambda: 1.0, min_child_weight: 1.0 };
        let (_, losses) = GbtModel::fit_with_loss(&ds.features, &ds.labels, classes, &params, 1);
        for w in losses.windows(2) {
            ensure(w[1] <= w[0], || format!("{classes} classes: training loss rose from {} to {}", w[0], w[1]))?;
        }
    }
    Ok(())
}

fn rf_single_tree_memorizes() -> Outcome {
    let ds = common::blobs(200, 3, 4, 4.0, 12);
    let spec = ClassifierSpec::new(Family::RandomForest, 0)
        .with("n_estimators", ParamValue::Int(1))
        .and_then(|s| s.with("bootstrap", ParamValue::Bool(false)))
        .and_then(|s| s.with("max_features", ParamValue::None))
        .map_err(|e| e.to_string())?;
    let model = classifiers::fit(&spec, &ds).map_err(|e| e.to_string())?;
    let acc = classifiers::accuracy(&model.predict(&ds.features).unwrap(), &ds.labels);
    ensure(acc == 1.0, || format!("training accuracy {acc}"))
}

fn classifier_oracle_suite() -> Outcome {
    let parts: [(&str, fn() -> Outcome); 7] = [
        ("GNB posteriors", gnb_oracle),
        ("KNN brute force", knn_brute_force),
        ("SVM separable KKT", svm_separable_kkt),
        ("MLP gradient", mlp_gradient_check),
        ("AdaBoost errors", adaboost_error_recomputation),
        ("GBT loss", gbt_loss_monotone),
        ("RF memorization", rf_single_tree_memorizes),
    ];
    for (name, f) in parts {
        f().map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(())
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

fn transform_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..6).map(|j| rng.gen_range(-3.0..3.0) * (j + 1) as f64).collect()).collect();
    let x = FeatureMatrix::from_rows(&rows).unwrap();

    let stats = transforms::minmax_fit(&x);
    let scaled = transforms::minmax_apply(&x, &stats).map_err(|e| e.to_string())?;
    for j in 0..6 {
        let col: Vec<f64> = (0..10).map(|i| scaled.get(i, j)).collect();
        let (lo, hi) = (col.iter().copied().fold(f64::INFINITY, f64::min), col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        ensure(lo == 0.0 && hi == 1.0, || format!("Min-Max column {j} spans [{lo}, {hi}]"))?;
    }

    let pca = transforms::pca_fit(&x).map_err(|e| e.to_string())?;
    for (a, ca) in pca.components.iter().enumerate() {
        for (b, cb) in pca.components.iter().enumerate() {
            let dot: f64 = ca.iter().zip(cb).map(|(u, v)| u * v).sum();
            let want = if a == b { 1.0 } else { 0.0 };
            ensure((dot - want).abs() < 1e-8, || format!("PCA components {a},{b} dot {dot}"))?;
        }
    }
    let mean: Vec<f64> = (0..6).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / 10.0).collect();
    let cov: Vec<Vec<f64>> = (0..6)
        .map(|a| (0..6).map(|b| rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / 9.0).collect())
        .collect();
    let oracle = jacobi_eigenvalues(cov);
    ensure(pca.explained_variance.len() == 3, || format!("PCA kept {} components", pca.explained_variance.len()))?;
    for (k, (got, want)) in pca.explained_variance.iter().zip(&oracle).enumerate() {
        ensure((got - want).abs() < 1e-8, || format!("PCA eigenvalue {k}: {got} vs oracle {want}"))?;
    }

    let mut srows = Vec::new();
    let mut raw = Vec::new();
    for i in 0..253 {
        let minority = i >= 155;
        srows.push(vec![rng.gen_range(0.0..1.0) + if minority { 3.0 } else { 0.0 }, rng.gen_range(0.0..1.0), rng.gen_range(-1.0..1.0)]);
        raw.push(i64::from(minority));
    }
    let ds = LabeledDataset::from_raw_labels(FeatureMatrix::from_rows(&srows).unwrap(), &raw, "smote").unwrap();
    let cfg = SmoteConfig { k_neighbors: 5, seed: 9 };
    let (out, origins) = transforms::smote_with_origins(&ds, &cfg).map_err(|e| e.to_string())?;
    ensure(ds.class_counts() == vec![155, 98], || format!("input counts {:?}", ds.class_counts()))?;
    ensure(out.class_counts() == vec![155, 155], || format!("SMOTE counts {:?}", out.class_counts()))?;
    ensure(origins.len() == 57, || format!("{} synthetic rows", origins.len()))?;
    for (s, o) in origins.iter().enumerate() {
        let row = out.features.row(ds.len() + s);
        let (p, nb) = (ds.features.row(o.parent), ds.features.row(o.neighbor));
        let residual = row.iter().zip(p).zip(nb).map(|((r, a), b)| (r - (a + o.t * (b - a))).abs()).fold(0.0, f64::max);
        ensure(residual < 1e-10 && (0.0..=1.0).contains(&o.t), || format!("synthetic {s}: residual {residual}, t {}", o.t))?;
        ensure(ds.labels[o.parent] == o.class && ds.labels[o.neighbor] == o.class, || format!("synthetic {s} crosses classes"))?;
        let d = |i: usize| ds.features.row(o.parent).iter().zip(ds.features.row(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut peers: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == o.class && i != o.parent).collect();
        peers.sort_by(|&a, &b| d(a).total_cmp(&d(b)).then(a.cmp(&b)));
        ensure(peers[..5].contains(&o.neighbor), || format!("synthetic {s}: neighbor {} is not among the 5 nearest", o.neighbor))?;
    }
    ensure(out.features.select_rows(&(0..ds.len()).collect::<Vec<_>>()) == ds.features, || "originals altered".into())
}

fn independent_winner(data: &LabeledDataset, grid: &GridSpec, folds: usize, seed: u64) -> (Vec<String>, f64) {
    let fold_sets = hpo::stratified_folds(&data.labels, data.class_count, folds, seed).unwrap();
    let mut points: Vec<Vec<(String, ParamValue)>> = vec![vec![]];
    for (name, values) in &grid.axes {
        let mut next = Vec::new();
        for p in &points {
            for v in values {
                let mut q = p.clone();
                q.push((name.clone(), v.clone()));
                next.push(q);
            }
        }
        points = next;
    }
    let mut best: Option<(f64, f64, usize)> = None;
    for (i, point) in points.iter().enumerate() {
        let mut spec = ClassifierSpec::new(grid.family, dualens::par::derive_seed(seed, i as u64));
        for (k, v) in point {
            spec.set(k, v.clone()).unwrap();
        }
        let mut accs = Vec::new();
        for test in &fold_sets {
            let train: Vec<usize> = (0..data.len()).filter(|r| !test.contains(r)).collect();
            let model = classifiers::fit(&spec, &data.subset(&train)).unwrap();
            let pred = model.predict(&data.features.select_rows(test)).unwrap();
            let hits = pred.iter().zip(test).filter(|(p, &r)| **p == data.labels[r]).count();
            accs.push(hits as f64 / test.len() as f64);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64).sqrt();
        let better = match best {
            None => true,
            Some((bm, bs, _)) => mean > bm || (mean == bm && std < bs),
        };
        if better {
            best = Some((mean, std, i));
        }
    }
    let (mean, _, i) = best.unwrap();
    (points[i].iter().map(|(k, v)| format!("{k}={v}")).collect(), mean)
}

fn grid_search_correctness() -> Outcome {
    let data = common::blobs(200, 2, 2, 3.5, 21);
    let knn = hpo::compact_grid(Family::Knn);
    let rbf = GridSpec::new(Family::SvmRbf)
        .axis("C", vec![ParamValue::Float(0.1), ParamValue::Float(1.0), ParamValue::Float(10.0)])
        .and_then(|g| g.axis("gamma", vec![ParamValue::str("scale"), ParamValue::Float(0.1), ParamValue::Float(5.0)]))
        .map_err(|e| e.to_string())?;
    for grid in [knn, rbf] {
        let serial = SearchOptions::new(5, 42).with_execution(Execution::Serial);
        let parallel = SearchOptions::new(5, 42).with_execution(Execution::Parallel);
        let (best_s, trials_s) = hpo::grid_search_with(&data, &grid, &serial).map_err(|e| e.to_string())?;
        let (best_p, trials_p) = hpo::grid_search_with(&data, &grid, &parallel).map_err(|e| e.to_string())?;
        ensure(trials_s == trials_p, || format!("{}: serial and parallel trials differ", grid.family))?;
        ensure(best_s == best_p, || format!("{}: serial and parallel winners differ", grid.family))?;
        let winner = &trials_s[hpo::best_trial(&trials_s).unwrap()];
        let got: Vec<String> = winner.assignment.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let (want, want_mean) = independent_winner(&data, &grid, 5, 42);
        ensure(got == want, || format!("{}: grid search picked {got:?}, independent loop {want:?}", grid.family))?;
        ensure(winner.mean == want_mean, || format!("{}: mean {} vs {want_mean}", grid.family, winner.mean))?;
    }
    Ok(())
}

fn end_to_end_synthetic() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let features = dir.path().join("features");
    std::fs::create_dir(&features).unwrap();
    common::write_synthetic_extractors(&features);
    let mut reports = Vec::new();
    for run in 0..2 {
        let mut cfg = RunConfig::new(&features, dir.path().join(format!("out{run}")));
        cfg.k_top = 2;
        cfg.seed = 42;
        let ws = Workspace::load(cfg).map_err(|e| e.to_string())?;
        let (report, _) = ws.run().map_err(|e| e.to_string())?;
        let selected: BTreeSet<&str> = report.selection.ids.iter().map(String::as_str).collect();
        ensure(selected == BTreeSet::from(["alphanet", "betanet"]), || format!("selected {selected:?}"))?;
        let vote = report.vote.as_ref().ok_or("no vote table")?;
        let row = vote.extractors.iter().position(|r| r.contains('+')).ok_or("no fused row in the vote table")?;
        let triple = vote.columns.iter().position(|c| c.matches('+').count() == 2).ok_or("no three-way vote column")?;
        let acc = vote.cells[row][triple];
        ensure(acc >= 0.9, || format!("fused three-way vote accuracy {acc} ({} / {})", vote.extractors[row], vote.columns[triple]))?;
        reports.push(std::fs::read(dir.path().join(format!("out{run}/report.json"))).map_err(|e| e.to_string())?);
    }
    ensure(reports[0] == reports[1], || "two runs with the same seed wrote different reports".into())
}

fn crop_contract() -> Outcome {
    let mut img = GrayImage::filled(60, 80, 10);
    for y in 12..=41 {
        for x in 20..=65 {
            img.set(y, x, 200);
        }
    }
    let p = CropParams { threshold: 45, morph_iterations: 2, blur_radius: 0, target_size: (32, 32) };
    let b = imgprep::crop_bounds(&img, &p).map_err(|e| e.to_string())?;
    let want = CropBounds { top: 12, bottom: 41, left: 20, right: 65 };
    ensure(b == want, || format!("bounds {b:?}, expected {want:?}"))?;
    let (out, fallback) = imgprep::preprocess(&img, &p).map_err(|e| e.to_string())?;
    ensure(!fallback && out.height() == 32 && out.width() == 32, || "rectangle crop took the fallback".into())?;

    let empty = GrayImage::filled(60, 80, 10);
    let (out, fallback) = imgprep::preprocess(&empty, &CropParams::default()).map_err(|e| e.to_string())?;
    ensure(fallback, || "empty foreground did not fall back".into())?;
    let resized = imgprep::resize_bicubic(&empty, (224, 224));
    ensure(out == resized, || "fallback is not the whole-image resize".into())
}

#[test]
fn acceptance() {
    let criteria: [(&str, u64, fn() -> Outcome); 6] = [
        ("selection fixture replay", 1, selection_fixture_replay),
        ("classifier oracle suite", 120, classifier_oracle_suite),
        ("transform suite", 30, transform_suite),
        ("grid-search correctness", 180, grid_search_correctness),
        ("end-to-end synthetic double ensemble", 300, end_to_end_synthetic),
        ("crop contract", 1, crop_contract),
    ];
    let mut failed = Vec::new();
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let verdict = match result {
            Ok(()) if elapsed <= Duration::from_secs(budget) => Ok(()),
            Ok(()) => Err(format!("took {:.2}s, budget {budget}s", elapsed.as_secs_f64())),
            Err(e) => Err(e),
        };
        match &verdict {
            Ok(()) => println!("PASS {name} ({:.2}s)", elapsed.as_secs_f64()),
            Err(e) => println!("FAIL {name} ({:.2}s): {e}", elapsed.as_secs_f64()),
        }
        if verdict.is_err() {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
