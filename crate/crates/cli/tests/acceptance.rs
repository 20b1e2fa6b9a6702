//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crl::data::{gen_dnf, gen_leakage_pair, split, ConceptDataset, DnfSpec, LeakagePairSpec};
use crl::eval::{evaluate, leakage_benchmark, predict, BaselineConfig, LeakageConfig};
use crl::gradcheck::{check_layer, check_model};
use crl::logic::LogicLayer;
use crl::matrix::Matrix;
use crl::model::{CrlModel, InitOptions, ModelConfig, PredictorSpec};
use crl::rules::{explain_output, extract_rules, formulas_equivalent, Formula};
use crl::train::{train, TrainConfig};
use crl_cli::RunConfig;

type Outcome = Result<String, String>;

fn single_core<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn dnf_spec() -> DnfSpec {
    DnfSpec {
        concepts: 8,
        terms: vec![vec![0, 1], vec![2, 3], vec![4]],
        samples: 2000,
        concept_noise: 0.0,
        label_noise: 0.0,
        seed: 0,
    }
}

fn scaled_default(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::default()
    }
}

struct DnfRun {
    model: CrlModel,
    test: ConceptDataset,
    elapsed: Duration,
}

/// The trained DNF model, shared by the criteria that need one.
fn dnf_run() -> &'static DnfRun {
    static RUN: OnceLock<DnfRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let ds = gen_dnf(&dnf_spec()).unwrap();
        let parts = split(&ds, &[0.8, 0.2], 0).unwrap();
        let start = Instant::now();
        let outcome = single_core(|| train(&scaled_default(150), &parts[0], None)).unwrap();
        DnfRun {
            model: outcome.best_model,
            test: parts[1].clone(),
            elapsed: start.elapsed(),
        }
    })
}

fn leakage_spec() -> LeakagePairSpec {
    LeakagePairSpec {
        base: DnfSpec { seed: 1, ..dnf_spec() },
        shift: 0.2,
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("{what} took {elapsed:.1?}, limit {limit:?}"))
    }
}

fn bits(mask: u64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (mask >> i & 1) as f64).collect()
}

fn max_layer_gap(layer: &LogicLayer, x: &[f64]) -> f64 {
    let d = layer.forward_discrete(x).unwrap();
    let (c, _) = layer.forward_continuous(x).unwrap();
    d.iter().zip(&c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0usize;
    for n in 1..=4 {
        for m in 1..=4 {
            for wmask in 0u64..(1 << (n * m)) {
                let w = Matrix::from_fn(m, n, |i, j| (wmask >> (i * n + j) & 1) as f64);
                let layer = LogicLayer::new(w.clone(), w).unwrap();
                for xmask in 0u64..(1 << n) {
                    worst = worst.max(max_layer_gap(&layer, &bits(xmask, n)));
                    cases += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let mut draw = || Matrix::from_fn(64, 64, |_, _| f64::from(u8::from(rng.gen_bool(0.5))));
        let layer = LogicLayer::new(draw(), draw()).unwrap();
        let x: Vec<f64> = (0..64).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
        worst = worst.max(max_layer_gap(&layer, &x));
        cases += 1;
    }
    within(start.elapsed(), Duration::from_secs(10), "equivalence sweep")?;
    if worst < 1e-12 {
        Ok(format!("{cases} cases, max abs diff {worst:e}, {:.1?}", start.elapsed()))
    } else {
        Err(format!("max abs diff {worst:e}"))
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let layer = check_layer(1000, 11).map_err(|e| e.to_string())?;
    let model = check_model(1000, 11).map_err(|e| e.to_string())?;
    within(start.elapsed(), Duration::from_secs(60), "gradient checks")?;
    let msg = format!("{}; {}", layer.summary(), model.summary());
    if layer.passed && model.passed && layer.max_rel_err < 1e-5 && model.max_rel_err < 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_3() -> Outcome {
    let run = dnf_run();
    let acc = evaluate(&run.model, &run.test).map_err(|e| e.to_string())?.diag_acc;
    let rules = extract_rules(&run.model);
    let union = rules.class_union(1);
    let truth = Formula::or(
        dnf_spec()
            .terms
            .iter()
            .map(|t| Formula::and(t.iter().map(|&i| Formula::Literal(i)))),
    );
    let equivalent = formulas_equivalent(&union, &truth, 8).map_err(|e| e.to_string())?;
    let msg = format!(
        "test ACC {acc:.4}, positive-rule union equivalent: {equivalent}, union = {}, training {:.1?}",
        union.render(&rules.concept_names),
        run.elapsed
    );
    within(run.elapsed, Duration::from_secs(300), "training")?;
    if acc >= 0.99 && equivalent {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let config = LeakageConfig {
        spec: leakage_spec(),
        train_fraction: 0.8,
        split_seed: 0,
        crl: scaled_default(150),
        baseline: BaselineConfig::default(),
    };
    let report = single_core(|| leakage_benchmark(&config)).map_err(|e| e.to_string())?;
    within(start.elapsed(), Duration::from_secs(600), "leakage benchmark")?;
    let crl = report.row("CRL").unwrap();
    let soft = report.row("soft-logistic").unwrap();
    let consistent = report.rows.iter().all(|r| r.drop == r.in_domain_acc - r.ood_acc);
    let msg = format!(
        "CRL drop {:.2} pts ({} paired mismatches), soft-logistic drop {:.2} pts, {:.1?}",
        crl.drop,
        report.crl_paired_mismatches,
        soft.drop,
        start.elapsed()
    );
    if crl.drop <= 1.0 && report.crl_paired_mismatches == 0 && soft.drop >= 5.0 && crl.drop < soft.drop && consistent {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// A dense random model: most nodes are non-constant.
fn random_model(seed: u64, k: usize) -> CrlModel {
    let config = ModelConfig::new(
        (0..k).map(|i| format!("c{i}")).collect(),
        vec!["a".into(), "b".into(), "c".into()],
        vec![16, 16],
    );
    let init = InitOptions {
        logic_init_min: 0.0,
        logic_init_max: 0.75,
        head_init_scale: 1.0,
    };
    CrlModel::initialize(config, PredictorSpec::Passthrough, &init, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn criterion_5() -> Outcome {
    let run = dnf_run();
    let (id, ood) = gen_leakage_pair(&leakage_spec()).map_err(|e| e.to_string())?;
    let random = random_model(5, 8);
    let cases: Vec<(&CrlModel, &ConceptDataset)> =
        vec![(&run.model, &run.test), (&run.model, &id), (&run.model, &ood), (&random, &id), (&random, &run.test)];
    let mut checked = 0;
    for (model, ds) in cases {
        let rules = extract_rules(model);
        for (record, out) in ds.records.iter().zip(predict(model, ds).map_err(|e| e.to_string())?) {
            let exp = explain_output(&rules, &record.id, &out).map_err(|e| e.to_string())?;
            let same = exp.logits.iter().zip(&out.logits).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same || exp.predicted_class != out.predicted_class() {
                return Err(format!("record {}: {:?} vs {:?}", record.id, exp.logits, out.logits));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} explanations reproduce the logits bitwise"))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let models = [dnf_run().model.clone(), random_model(6, 8)];
    let threshold = 0.5;
    for i in 0..10_000 {
        let model = &models[i % 2];
        let p: Vec<f64> = (0..8).map(|_| rng.gen::<f64>()).collect();
        let moved: Vec<f64> = p
            .iter()
            .map(|&v| {
                let up = v + 0.2;
                let down = v - 0.2;
                let up_ok = up <= 1.0 && ((v >= threshold) == (up >= threshold));
                let down_ok = down >= 0.0 && ((v >= threshold) == (down >= threshold));
                match (up_ok, down_ok) {
                    (true, true) => if rng.gen_bool(0.5) { up } else { down },
                    (true, false) => up,
                    _ => down,
                }
            })
            .collect();
        let a = model.forward_discrete(&p).map_err(|e| e.to_string())?;
        let b = model.forward_discrete(&moved).map_err(|e| e.to_string())?;
        if a.concepts != b.concepts {
            return Err(format!("sample {i}: perturbation crossed the threshold"));
        }
        if a.logits.iter().zip(&b.logits).any(|(x, y)| x.to_bits() != y.to_bits()) {
            return Err(format!("sample {i}: logits changed"));
        }
    }
    Ok("10000 perturbed samples, logits bitwise unchanged".into())
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ds = gen_dnf(&DnfSpec { samples: 400, ..dnf_spec() }).map_err(|e| e.to_string())?;
    let data = dir.path().join("dnf.csv");
    ds.write_csv(&data).map_err(|e| e.to_string())?;
    let config = dir.path().join("run.json");
    let run = RunConfig {
        train: scaled_default(5),
        ..RunConfig::default()
    };
    std::fs::write(&config, run.to_json()).map_err(|e| e.to_string())?;
    let train_into = |out: &Path, threads: &str| -> Result<Vec<u8>, String> {
        let status = Command::new(env!("CARGO_BIN_EXE_crl"))
            .args(["train", "--config"])
            .arg(&config)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(out)
            .arg("--seed")
            .arg("7")
            .env("CRL_THREADS", threads)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        std::fs::read(out.join("model.json")).map_err(|e| e.to_string())
    };
    let a = train_into(&dir.path().join("a"), "1")?;
    let b = train_into(&dir.path().join("b"), "3")?;
    if a == b {
        Ok(format!("two runs (1 and 3 threads) wrote identical {}-byte checkpoints", a.len()))
    } else {
        Err("checkpoints differ".into())
    }
}

fn criterion_8() -> Outcome {
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/default_run_config.json");
    let golden = std::fs::read_to_string(&golden_path).map_err(|e| e.to_string())?;
    if RunConfig::default().to_json() + "\n" != golden {
        return Err("default RunConfig does not serialize to the golden file".into());
    }
    let v: serde_json::Value = serde_json::from_str(&golden).map_err(|e| e.to_string())?;
    let t = &v["train"];
    let expected = [
        ("layer_sizes", serde_json::json!([256, 256])),
        ("lambda", serde_json::json!(5e-6)),
        ("lr_init", serde_json::json!(5e-5)),
        ("weight_decay", serde_json::json!(0.01)),
        ("epochs", serde_json::json!(300)),
        ("batch_size", serde_json::json!(64)),
        ("concept_loss_weight", serde_json::json!(1.0)),
    ];
    for (key, want) in &expected {
        if &t[key] != want {
            return Err(format!("{key} = {} but expected {want}", t[key]));
        }
    }
    Ok("golden file matches; 2x256 nodes, lambda 5e-6, lr 5e-5, wd 0.01, 300 epochs, batch 64, alpha 1".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("discrete-continuous equivalence", criterion_1),
        ("gradient correctness", criterion_2),
        ("rule recovery", criterion_3),
        ("leakage / OOD", criterion_4),
        ("explanation additivity", criterion_5),
        ("anti-leakage invariance", criterion_6),
        ("determinism", criterion_7),
        ("hyperparameter defaults", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
