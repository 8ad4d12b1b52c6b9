//! Acceptance suite. Each test writes one `PASS` or `FAIL` line for its
//! criterion to stderr, uncaptured, before asserting.
//!
//! The C-MNIST criteria read MNIST from `GPFR_MNIST_DIR` (default
//! `data/mnist` at the workspace root).

mod common;

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use common::{check_stack, random_case, seeded, KINDS};
use gpfr_core::cmnist::{self, CMnist, ColorPalette, Mnist};
use gpfr_core::dataio::{self, FeatureTable, SplitSpec};
use gpfr_core::eval::{
    self, average_precision, evaluate_unseen, mean_average_precision, rank_by_score, run_supervised_comparison,
    train_seen_stage, CslmSettings, PipelineConfig, RepositoryRule, SeenStage, ZslTask,
};
use gpfr_core::jafe::{AttributeScheme, AttributeSpec, EncoderSpec, Extraction, TrainSettings, UnitSpec};
use gpfr_core::nn::{Activation, Tensor};
use gpfr_core::predictor::{self, TrainingPlan};
use gpfr_core::repository::{build_repository, ConfidenceMargins, RepositoryOptions};
use gpfr_core::synthesis::{synthesize_class, ClassDescription};
use gpfr_core::Dataset;
use rand::{seq::SliceRandom, Rng as _};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_CONFIGS_PER_KIND: usize = 20;
const PREDICATE_SAMPLES: usize = 10_000;
const SYNTH_DRAWS: usize = 10_000;
const SYNTH_BAND: (f64, f64) = (0.68, 0.72);
const CHI_ALPHA: f64 = 0.01;
const AP_LISTS: usize = 1_000;
const ZSL_50_MIN: f64 = 0.90;
const ZSL_800_MIN: f64 = 0.75;
const SUPERVISED_IMAGES_PER_CLASS: usize = 10;
const SMOKE_CHANCE_FACTOR: f64 = 3.0;
const SEED: u64 = 7;

fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {criterion} [{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = seeded(101);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut failures = Vec::new();
    for kind in KINDS {
        let mut kind_worst: f64 = 0.0;
        for _ in 0..GRAD_CONFIGS_PER_KIND {
            let (stack, x, probe) = random_case(kind, &mut rng);
            let out = check_stack(&stack, &x, &probe, 6, &mut rng);
            kind_worst = kind_worst.max(out.worst);
            checked += out.checked;
        }
        if kind_worst > GRAD_TOLERANCE {
            failures.push(format!("{kind} {kind_worst:.2e}"));
        }
        worst = worst.max(kind_worst);
    }
    let pass = failures.is_empty();
    report(
        1,
        "analytic gradients",
        pass,
        &format!(
            "{} kinds x {GRAD_CONFIGS_PER_KIND} configs, {checked} coordinates, worst relative error {worst:.2e} (tolerance {GRAD_TOLERANCE:.0e}), {:.1}s",
            KINDS.len(),
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass, "{failures:?}");
}

/// Binary extraction where sample `j`'s slice for attribute `a` is the
/// single value `±(j + 1)`, signed by the annotation.
fn planted_extraction(annotations: &[u32], probs: Vec<Vec<f32>>, m: usize) -> Extraction {
    let n = annotations.len() / m;
    let combined = (0..n * m)
        .map(|i| {
            let j = (i / m) as f32 + 1.0;
            if annotations[i] == 1 { j } else { -j }
        })
        .collect();
    Extraction {
        dim: m,
        combined,
        probs,
        arities: vec![2; m],
    }
}

fn random_binary_extraction(n: usize, m: usize, rng: &mut gpfr_core::nn::Rng) -> (Extraction, Vec<u32>) {
    let annotations: Vec<u32> = (0..n * m).map(|_| rng.gen_range(0..2)).collect();
    let probs = (0..m)
        .map(|_| {
            (0..n)
                .flat_map(|_| {
                    let p: f32 = rng.gen();
                    [1.0 - p, p]
                })
                .collect()
        })
        .collect();
    (planted_extraction(&annotations, probs, m), annotations)
}

#[test]
fn criterion_2_repository_predicates() {
    let start = Instant::now();
    let mut rng = seeded(202);
    let (n, m) = (500, 4);
    let scheme = AttributeScheme::binary(m, 1.0, 1).unwrap();
    let mut samples = 0;
    let mut violations = Vec::new();
    while samples < PREDICATE_SAMPLES {
        let (ext, ann) = random_binary_extraction(n, m, &mut rng);
        let pos = rng.gen_range(0.5..0.95);
        let neg = rng.gen_range(0.05..=0.5);
        let loose = ConfidenceMargins::new(pos, neg).unwrap();
        let tight = ConfidenceMargins::new(rng.gen_range(pos..0.99), rng.gen_range(0.01..=neg)).unwrap();
        let opts = RepositoryOptions::default();
        let r_loose = build_repository(&scheme, &ext, &ann, loose, opts).unwrap();
        let r_tight = build_repository(&scheme, &ext, &ann, tight, opts).unwrap();
        for a in 0..m {
            let members = |r: &gpfr_core::repository::CognitiveRepository, v: usize| -> BTreeSet<usize> {
                r.attribute(a).buckets[v].iter().map(|e| e.sample).collect()
            };
            let expected = |mg: ConfidenceMargins, v: u32| -> BTreeSet<usize> {
                (0..n)
                    .filter(|&j| {
                        let p = ext.probabilities(j, a)[1] as f64;
                        let label = ann[j * m + a];
                        label == v
                            && if v == 1 {
                                p >= mg.positive() as f32 as f64
                            } else {
                                p <= mg.negative() as f32 as f64
                            }
                    })
                    .collect()
            };
            for v in 0..2 {
                if members(&r_loose, v) != expected(loose, v as u32) {
                    violations.push(format!("membership a{a} v{v}"));
                }
                if !members(&r_tight, v).is_subset(&members(&r_loose, v)) {
                    violations.push(format!("shrinkage a{a} v{v}"));
                }
                for e in &r_loose.attribute(a).buckets[v] {
                    if ann[e.sample * m + a] as usize != v || (e.vector[0] > 0.0) != (v == 1) {
                        violations.push(format!("label-inconsistent entry a{a} v{v} sample {}", e.sample));
                    }
                }
            }
        }
        samples += n * m;
    }
    let pass = violations.is_empty();
    report(
        2,
        "repository membership, shrinkage and label consistency",
        pass,
        &format!("{samples} samples, {} violations, {:.1}s", violations.len(), start.elapsed().as_secs_f64()),
    );
    assert!(pass, "{:?}", &violations[..violations.len().min(10)]);
}

#[test]
fn criterion_3_synthesis_distribution() {
    let start = Instant::now();
    let mut rng = seeded(303);
    let m = 8;
    let scheme = AttributeScheme::binary(m, 1.0, 1).unwrap();
    let (ext, ann) = random_binary_extraction(400, m, &mut rng);
    let repo = build_repository(&scheme, &ext, &ann, ConfidenceMargins::default(), RepositoryOptions::default()).unwrap();
    let bucket_values = |a: usize, v: usize| -> BTreeSet<u32> {
        repo.attribute(a).buckets[v].iter().map(|e| e.vector[0].to_bits()).collect()
    };

    let mut z = vec![0.5; m];
    z[0] = 0.7;
    let single = synthesize_class(&repo, &ClassDescription::presence(0, &z), SYNTH_DRAWS, SEED).unwrap();
    let freq = (0..SYNTH_DRAWS).filter(|&i| single.representation(i)[0] > 0.0).count() as f64 / SYNTH_DRAWS as f64;
    let freq_ok = (SYNTH_BAND.0..=SYNTH_BAND.1).contains(&freq);

    let z: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..0.95)).collect();
    let set = synthesize_class(&repo, &ClassDescription::presence(1, &z), SYNTH_DRAWS, SEED).unwrap();
    let mut statistic = 0.0;
    let mut slice_violations = 0;
    for (a, &za) in z.iter().enumerate() {
        let (pos, neg) = (bucket_values(a, 1), bucket_values(a, 0));
        let mut observed = 0usize;
        for i in 0..SYNTH_DRAWS {
            let x = set.representation(i)[a];
            let positive = x > 0.0;
            observed += usize::from(positive);
            let bucket = if positive { &pos } else { &neg };
            slice_violations += usize::from(!bucket.contains(&x.to_bits()));
        }
        let n = SYNTH_DRAWS as f64;
        let (e1, e0) = (n * za, n * (1.0 - za));
        let o1 = observed as f64;
        statistic += (o1 - e1).powi(2) / e1 + ((n - o1) - e0).powi(2) / e0;
    }
    let critical = ChiSquared::new(m as f64).unwrap().inverse_cdf(1.0 - CHI_ALPHA);
    let pass = freq_ok && statistic <= critical && slice_violations == 0;
    report(
        3,
        "synthesis distribution",
        pass,
        &format!(
            "positive frequency at z=0.7 {freq:.4} (band {SYNTH_BAND:?}), chi-square {statistic:.2} vs critical {critical:.2} (df {m}, alpha {CHI_ALPHA}), slice violations {slice_violations}, {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("GPFR_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn cmnist_data() -> &'static (CMnist, CMnist) {
    static DATA: OnceLock<(CMnist, CMnist)> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = mnist_dir();
        let (train, test) = cmnist::load_mnist(&dir)
            .unwrap_or_else(|e| panic!("MNIST not readable from {} ({e}); set GPFR_MNIST_DIR", dir.display()));
        cmnist::generate(&train, &test, &ColorPalette::generate(SEED), SEED).unwrap()
    })
}

fn cmnist_config(jafe_epochs: usize) -> PipelineConfig {
    let specs = cmnist::scheme(32)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, a)| AttributeSpec {
            weight: if i == 0 { 1.0 } else { 0.1 },
            ..a.clone()
        })
        .collect();
    PipelineConfig {
        scheme: AttributeScheme::new(specs).unwrap(),
        encoder: EncoderSpec::SmallCnn { dropout: 0.25 },
        unit: UnitSpec::single(Activation::Tanh),
        jafe: TrainSettings::new(jafe_epochs, 32, SEED),
        rule: RepositoryRule::TopScore,
        repository: RepositoryOptions::default(),
        plan: TrainingPlan {
            batch_size: 32,
            ..TrainingPlan::new(5, 1, 100, SEED)
        },
        extract_batch: 256,
    }
}

struct ZslFixture {
    split: SplitSpec,
    config: PipelineConfig,
    seen: SeenStage,
    seconds: f64,
}

/// 200 seen classes (10 of them held out for validation) and JAFE trained
/// for 10 epochs; shared by the 50- and 800-unseen runs.
fn zsl_fixture() -> &'static ZslFixture {
    static FIXTURE: OnceLock<ZslFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let start = Instant::now();
        let (train, _) = cmnist_data();
        let s = cmnist::make_split(200, Some(50), SEED).unwrap();
        let split = SplitSpec::new(s.seen, s.unseen, vec![]).unwrap().with_validation(10, SEED).unwrap();
        let config = cmnist_config(10);
        let seen = train_seen_stage(&train.to_dataset(&train.indices_of(&split.training())).unwrap(), &config).unwrap();
        ZslFixture {
            split,
            config,
            seen,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

fn zsl_accuracy(unseen: &[usize]) -> (f64, f64, usize, f64) {
    let start = Instant::now();
    let f = zsl_fixture();
    let (train, test) = cmnist_data();
    let describe = |cs: &[usize]| cs.iter().map(|&c| cmnist::description(c)).collect::<Vec<_>>();
    let (unseen_desc, val_desc) = (describe(unseen), describe(&f.split.validation));
    let val_data = train.to_dataset(&train.indices_of(&f.split.validation)).unwrap();
    let test_data = test.to_dataset(&test.indices_of(unseen)).unwrap();
    let task = ZslTask {
        unseen: &unseen_desc,
        validation: &val_desc,
        validation_data: &val_data,
        test: &test_data,
    };
    let out = evaluate_unseen(&f.seen, &task, &f.config).unwrap();
    (out.report.accuracy.overall, out.report.retrieval.map, test_data.len(), start.elapsed().as_secs_f64())
}

fn zsl_50() -> &'static (f64, f64, usize, f64) {
    static RESULT: OnceLock<(f64, f64, usize, f64)> = OnceLock::new();
    RESULT.get_or_init(|| zsl_accuracy(&zsl_fixture().split.unseen))
}

#[test]
fn criterion_4_cmnist_zero_shot_50_unseen() {
    let &(acc, map, n, secs) = zsl_50();
    let pass = acc >= ZSL_50_MIN;
    report(
        4,
        "C-MNIST 200 seen / 50 unseen",
        pass,
        &format!(
            "accuracy {:.2}% on {n} test images (threshold {:.0}%), mAP {map:.4}, seen stage {:.0}s, unseen stage {secs:.0}s",
            acc * 100.0,
            ZSL_50_MIN * 100.0,
            zsl_fixture().seconds
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_cmnist_zero_shot_scaling() {
    let f = zsl_fixture();
    let seen: BTreeSet<usize> = f.split.seen.iter().copied().collect();
    let unseen: Vec<usize> = (0..cmnist::CLASSES).filter(|c| !seen.contains(c)).collect();
    assert_eq!(unseen.len(), 800);
    let (acc800, _, n, secs) = zsl_accuracy(&unseen);
    let acc50 = zsl_50().0;
    let pass = acc800 < acc50 && acc800 >= ZSL_800_MIN;
    report(
        5,
        "C-MNIST scaling to 800 unseen",
        pass,
        &format!(
            "accuracy {:.2}% on {n} test images vs {:.2}% at 50 unseen (floor {:.0}%), {secs:.0}s",
            acc800 * 100.0,
            acc50 * 100.0,
            ZSL_800_MIN * 100.0
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_supervised_against_baseline() {
    let start = Instant::now();
    let (train, test) = cmnist_data();
    let mut counts = vec![0usize; cmnist::CLASSES];
    let picked: Vec<usize> = (0..train.len())
        .filter(|&i| {
            let c = train.class_of(i);
            counts[c] += 1;
            counts[c] <= SUPERVISED_IMAGES_PER_CLASS
        })
        .collect();
    let train_ds = train.to_dataset(&picked).unwrap();
    let test_ds = test.to_dataset(&(0..test.len()).collect::<Vec<_>>()).unwrap();
    let descriptions: Vec<_> = (0..cmnist::CLASSES).map(cmnist::description).collect();
    let baseline = CslmSettings::new(EncoderSpec::SmallCnn { dropout: 0.25 }, 96, SEED);
    let r = run_supervised_comparison(&train_ds, &test_ds, &descriptions, &cmnist_config(10), &[50, 100], &baseline).unwrap();
    let pass = r.gpfr.iter().all(|&(_, acc)| acc > r.baseline_accuracy);
    let gpfr: Vec<String> = r.gpfr.iter().map(|(n, a)| format!("n={n} {:.2}%", a * 100.0)).collect();
    report(
        6,
        "supervised GPFR beats CSLM",
        pass,
        &format!(
            "{} training images ({:.1}/class), GPFR [{}] vs CSLM {:.2}%, {:.0}s",
            r.total_images,
            r.images_per_class,
            gpfr.join(", "),
            r.baseline_accuracy * 100.0,
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

/// Precision at every relevant rank, counted from scratch each time.
fn brute_force_ap(relevance: &[bool]) -> f64 {
    let relevant: Vec<usize> = (0..relevance.len()).filter(|&k| relevance[k]).collect();
    if relevant.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &k in &relevant {
        let hits = relevance[..=k].iter().filter(|&&r| r).count();
        sum += hits as f64 / (k + 1) as f64;
    }
    sum / relevant.len() as f64
}

#[test]
fn criterion_7_metric_oracles() {
    let start = Instant::now();
    let mut rng = seeded(707);
    let mut mismatches = Vec::new();
    for list in 0..AP_LISTS {
        let len = rng.gen_range(1..=100);
        let classes = rng.gen_range(1..=5);
        let truth: Vec<usize> = (0..len).map(|_| rng.gen_range(0..classes)).collect();
        let mut ranks: Vec<f32> = (0..len * classes).map(|i| i as f32).collect();
        ranks.shuffle(&mut rng);
        let scores = Tensor::new(vec![len, classes], ranks.clone()).unwrap();
        let class_ids: Vec<usize> = (0..classes).collect();
        let ret = eval::retrieval(&scores, &truth, &class_ids).unwrap();
        let mut aps = Vec::new();
        for c in 0..classes {
            let column: Vec<f32> = (0..len).map(|i| ranks[i * classes + c]).collect();
            let rel: Vec<bool> = rank_by_score(&column).into_iter().map(|i| truth[i] == c).collect();
            let oracle = brute_force_ap(&rel);
            if average_precision(&rel) != oracle {
                mismatches.push(format!("list {list} class {c}: AP"));
            }
            let transforms: [fn(f32) -> f32; 3] = [|s| 3.0 * s + 7.0, |s| s.powi(3), |s| (s / 50.0).exp()];
            for t in transforms {
                let moved: Vec<f32> = column.iter().map(|&s| t(s)).collect();
                let rel_t: Vec<bool> = rank_by_score(&moved).into_iter().map(|i| truth[i] == c).collect();
                if average_precision(&rel_t) != oracle {
                    mismatches.push(format!("list {list} class {c}: AP not invariant"));
                }
            }
            if rel.iter().any(|&r| r) {
                aps.push(oracle);
                if ret.per_class.iter().find(|p| p.class == c).map(|p| p.ap) != Some(oracle) {
                    mismatches.push(format!("list {list} class {c}: retrieval AP"));
                }
            }
        }
        let oracle_map = aps.iter().sum::<f64>() / aps.len() as f64;
        if ret.map != oracle_map || mean_average_precision(&aps) != oracle_map {
            mismatches.push(format!("list {list}: mAP"));
        }
    }
    let pass = mismatches.is_empty();
    report(
        7,
        "AP and mAP oracles",
        pass,
        &format!("{AP_LISTS} ranked lists, {} mismatches, {:.1}s", mismatches.len(), start.elapsed().as_secs_f64()),
    );
    assert!(pass, "{:?}", &mismatches[..mismatches.len().min(10)]);
}

struct SmokeTable {
    _dir: tempfile::TempDir,
    table: FeatureTable,
    split: SplitSpec,
}

/// Feature table with planted attribute structure: every binary attribute
/// owns a random direction, and a sample is the signed sum of its class's
/// attribute directions plus noise. Written to disk and read back.
fn smoke_table(seen: usize, unseen: usize, per_class: usize, dim: usize, m: usize, seed: u64) -> SmokeTable {
    let mut rng = seeded(seed);
    let classes = seen + unseen;
    let directions: Vec<Vec<f32>> = (0..m).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let signatures: Vec<Vec<u32>> = loop {
        let s: Vec<Vec<u32>> = (0..classes).map(|_| (0..m).map(|_| rng.gen_range(0..2)).collect()).collect();
        let distinct = s.iter().collect::<BTreeSet<_>>().len() == classes;
        let covered = (0..m).all(|a| (0..2).all(|v| s[..seen].iter().any(|sig| sig[a] == v)));
        if distinct && covered {
            break s;
        }
    };
    let (mut features, mut labels, mut attributes) = (Vec::new(), Vec::new(), Vec::new());
    for (class, sig) in signatures.iter().enumerate() {
        for _ in 0..per_class {
            let mut x: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for (a, &bit) in sig.iter().enumerate() {
                let s = if bit == 1 { 1.0 } else { -1.0 };
                x.iter_mut().zip(&directions[a]).for_each(|(xi, d)| *xi += s * d);
            }
            features.extend(x);
            labels.push(class);
            attributes.extend(sig.iter().map(|&b| b as f32));
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    dataio::write_features(&p("features.gpft"), dim, &features).unwrap();
    dataio::write_labels(&p("labels.csv"), &labels).unwrap();
    let names: Vec<String> = (0..m).map(|a| format!("attr{a}")).collect();
    dataio::write_attributes(&p("attributes.csv"), &names, &attributes).unwrap();
    let order: Vec<usize> = (0..classes).collect();
    SplitSpec::new(order[..seen].to_vec(), order[seen..].to_vec(), vec![])
        .unwrap()
        .write(&p("split.csv"))
        .unwrap();
    let table = FeatureTable::load(&p("features.gpft"), &p("labels.csv"), Some(&p("attributes.csv"))).unwrap();
    let split = SplitSpec::read(&p("split.csv")).unwrap().with_validation(2, seed).unwrap();
    SmokeTable { _dir: dir, table, split }
}

fn smoke_config(m: usize, seed: u64, jafe_epochs: usize) -> PipelineConfig {
    PipelineConfig {
        scheme: AttributeScheme::binary(m, 1.0, 16).unwrap(),
        encoder: EncoderSpec::Identity,
        unit: UnitSpec::two_layer(64, Activation::Relu),
        jafe: TrainSettings {
            learning_rate: 3e-3,
            ..TrainSettings::new(jafe_epochs, 32, seed)
        },
        rule: RepositoryRule::Margins(ConfidenceMargins::default()),
        repository: RepositoryOptions::default(),
        plan: TrainingPlan::new(3, 2, 60, seed),
        extract_batch: 256,
    }
}

struct SmokeParts {
    train: Dataset,
    validation: Dataset,
    test: Dataset,
    unseen: Vec<ClassDescription>,
    validation_desc: Vec<ClassDescription>,
}

fn smoke_parts(t: &SmokeTable) -> SmokeParts {
    let ds = |classes: &[usize]| t.table.to_dataset(&t.table.indices_of(classes), 0.5).unwrap();
    SmokeParts {
        train: ds(&t.split.training()),
        validation: ds(&t.split.validation),
        test: ds(&t.split.unseen),
        unseen: t.table.class_descriptions(&t.split.unseen).unwrap(),
        validation_desc: t.table.class_descriptions(&t.split.validation).unwrap(),
    }
}

/// Serialized output of every stage, with the report's wall-clock line
/// removed.
fn stage_artifacts(parts: &SmokeParts, config: &PipelineConfig) -> Vec<(&'static str, Vec<u8>)> {
    let seen = train_seen_stage(&parts.train, config).unwrap();
    let pseudo = predictor::first_pseudo_set(&seen.repository, &parts.unseen, &parts.validation_desc, &config.plan).unwrap();
    let task = ZslTask {
        unseen: &parts.unseen,
        validation: &parts.validation_desc,
        validation_data: &parts.validation,
        test: &parts.test,
    };
    let out = evaluate_unseen(&seen, &task, config).unwrap();
    let report: String = out
        .report
        .to_text()
        .lines()
        .filter(|l| !l.starts_with("wall_clock"))
        .map(|l| format!("{l}\n"))
        .collect();
    vec![
        ("jafe", seen.jafe.to_container("h").to_bytes()),
        ("repository", seen.repository.to_container("h").to_bytes()),
        ("pseudo", pseudo.to_container("h").to_bytes()),
        ("predictor", out.predictor.to_container("h").to_bytes()),
        ("report", report.into_bytes()),
        ("per_class", out.report.per_class_csv().into_bytes()),
        ("pr", out.report.pr_csv().into_bytes()),
    ]
}

fn tiny_mnist(n: usize, seed: u64) -> Mnist {
    let mut rng = seeded(seed);
    Mnist {
        images: (0..n * cmnist::PIXELS).map(|_| rng.gen()).collect(),
        labels: (0..n).map(|i| (i % 10) as u8).collect(),
    }
}

#[test]
fn criterion_8_determinism() {
    let start = Instant::now();
    let t = smoke_table(8, 4, 30, 32, 5, 808);
    let parts = smoke_parts(&t);
    let config = smoke_config(5, 808, 3);
    let (a, b) = (stage_artifacts(&parts, &config), stage_artifacts(&parts, &config));
    let mut differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0).collect();

    let gen = || {
        let (train, test) = (tiny_mnist(40, 1), tiny_mnist(20, 2));
        let palette = ColorPalette::generate(SEED);
        let (ctrain, ctest) = cmnist::generate(&train, &test, &palette, SEED).unwrap();
        (ctrain.to_bytes(), ctest.to_bytes(), palette.to_text())
    };
    if gen() != gen() {
        differing.push("cmnist");
    }
    let pass = differing.is_empty();
    report(
        8,
        "determinism",
        pass,
        &format!(
            "{} stage artifacts plus C-MNIST generation compared byte for byte, differing: {differing:?}, {:.1}s",
            a.len(),
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_feature_table_smoke() {
    let start = Instant::now();
    let (seen, unseen, m) = (20, 12, 10);
    let t = smoke_table(seen, unseen, 2000 / (seen + unseen), 256, m, 909);
    let parts = smoke_parts(&t);
    let config = smoke_config(m, 909, 10);
    let seen_stage = train_seen_stage(&parts.train, &config).unwrap();
    let task = ZslTask {
        unseen: &parts.unseen,
        validation: &parts.validation_desc,
        validation_data: &parts.validation,
        test: &parts.test,
    };
    let out = evaluate_unseen(&seen_stage, &task, &config).unwrap();
    let acc = out.report.accuracy.overall;
    let chance = 1.0 / unseen as f64;
    let pass = acc > SMOKE_CHANCE_FACTOR * chance;
    report(
        9,
        "feature-table smoke test",
        pass,
        &format!(
            "{} x 256 table, {seen} seen / {unseen} unseen, accuracy {:.2}% vs {:.0}x chance {:.2}%, mAP {:.4}, {:.1}s",
            t.table.len(),
            acc * 100.0,
            SMOKE_CHANCE_FACTOR,
            SMOKE_CHANCE_FACTOR * chance * 100.0,
            out.report.retrieval.map,
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}
