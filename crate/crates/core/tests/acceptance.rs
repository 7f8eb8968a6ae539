//! Acceptance suite. Runs every criterion in sequence, so the throughput
//! measurements never share the CPU with other tests, and prints one
//! PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use paraserve::backbone::{forward_sequence, generate, generate_uncached, Session, TokenId};
use paraserve::clock::{Clock, MonotonicClock, StubClock};
use paraserve::format::{deserialize_adapter, serialize_adapter, FormatError};
use paraserve::peft::{count_params, AdapterHyper, AdapterSet, Method, Projection};
use paraserve::serving::{flop_model, run_bench, BenchReport, BenchSpec, TenantRegistry};
use paraserve::tensor::Rng;
use paraserve::training::{
    evaluate, gradcheck, make_task, pretrain_backbone, train, Example, GradCheckSpec, GradMode,
    LrSchedule, TaskKind, TaskSpec, TrainConfig,
};
use paraserve::{Model, ModelConfig, Scalar};

const IDENTITY_TOL: f64 = 1e-12;
const IDENTITY_PROMPTS: usize = 20;
const CACHE_CASES: u64 = 50;
const CACHE_LOGIT_TOL: f64 = 1e-9;
const GRAD_EPS: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-5;
const PARAM_COUNT_7B: u64 = 8_945_664;
const SHIFT_MIN_ACC: f64 = 0.90;
const FROZEN_MAX_ACC: f64 = 0.20;
const KEYED_MIN_MARGIN: f64 = 0.10;
const PARA_OVER_LORA: f64 = 1.05;
const PARA_IA3_GAP: f64 = 0.10;
const ROUND_TRIPS: u64 = 100;

struct Verdict {
    pass: bool,
    detail: String,
    artifact: Value,
}

fn report(n: u32, name: &str, v: &Verdict, elapsed: Duration) -> bool {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    println!("criterion {n:>2} {tag} {name}: {} [{:.1}s]", v.detail, elapsed.as_secs_f64());
    v.pass
}

fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).fold(0.0, f64::max)
}

fn random_prompt(rng: &mut Rng, vocab: usize, len: usize) -> Vec<TokenId> {
    (0..len).map(|_| rng.below(vocab) as TokenId).collect()
}

fn perturbed(config: &ModelConfig, method: Method, hyper: &AdapterHyper, seed: u64, std: f64) -> AdapterSet<f64> {
    let mut a = AdapterSet::init(config, method, hyper, seed).unwrap();
    a.perturb(std, &mut Rng::new(seed).fork(0xacc));
    a
}

// Identity at init.
fn identity_at_init(seed: u64) -> Verdict {
    let c = ModelConfig::desk();
    let model = Model::<f64>::random(c, seed).unwrap();
    let none = AdapterSet::none(&c);
    let hyper = AdapterHyper::default();
    let mut rng = Rng::new(seed).fork(1);
    let prompts: Vec<Vec<TokenId>> = (0..IDENTITY_PROMPTS)
        .map(|_| {
            let len = 1 + rng.below(40);
            random_prompt(&mut rng, c.vocab_size, len)
        })
        .collect();
    let mut worst = BTreeMap::new();
    for method in [Method::Para, Method::Lora, Method::Ia3] {
        let fresh = AdapterSet::<f64>::init(&c, method, &hyper, seed + 1).unwrap();
        let mut m = 0.0f64;
        for p in &prompts {
            let base = forward_sequence(&model, &none, p, p.len(), false).unwrap().logits;
            let tuned = forward_sequence(&model, &fresh, p, p.len(), false).unwrap().logits;
            m = m.max(max_abs_diff(base.as_slice(), tuned.as_slice()));
        }
        worst.insert(method.name(), m);
    }
    let pass = worst.values().all(|&m| m <= IDENTITY_TOL);
    Verdict {
        pass,
        detail: format!(
            "max |logit diff| over {IDENTITY_PROMPTS} prompts: para {:.1e}, lora {:.1e}, ia3 {:.1e} (tol {IDENTITY_TOL:.0e})",
            worst["para"], worst["lora"], worst["ia3"]
        ),
        artifact: json!({ "prompts": prompts, "max_abs_diff": worst }),
    }
}

// Parameter-count reproduction.
fn parameter_count() -> Verdict {
    let n = count_params(&ModelConfig::llama2_7b(), Method::Para, &AdapterHyper::default()).unwrap();
    Verdict {
        pass: n.headline == PARAM_COUNT_7B,
        detail: format!("PARA r=12 at 32/4096/11008: {} (expected {PARAM_COUNT_7B})", n.headline),
        artifact: json!({ "headline": n.headline, "with_bias": n.with_bias }),
    }
}

// KV-cache equivalence.
fn cache_equivalence(seed: u64) -> Verdict {
    let c = ModelConfig::desk();
    let model = Arc::new(Model::<f64>::random(c, seed).unwrap());
    let hyper = AdapterHyper::default();
    let methods = [Method::None, Method::Para, Method::Lora, Method::Ia3];
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    let mut cases = Vec::new();
    for case in 0..CACHE_CASES {
        let mut rng = Rng::new(seed).fork(100 + case);
        let method = methods[case as usize % methods.len()];
        let adapter = Arc::new(perturbed(&c, method, &hyper, seed + case, 0.3));
        let len = 1 + rng.below(24);
        let prompt = random_prompt(&mut rng, c.vocab_size, len);
        let max_new = 1 + rng.below(12);
        let mut tokens = BTreeMap::new();
        for beam in [1, 3] {
            let cached = generate(&model, &adapter, &prompt, max_new, beam).unwrap();
            let full = generate_uncached(&model, &adapter, &prompt, max_new, beam).unwrap();
            if cached.tokens != full.tokens {
                mismatches += 1;
            }
            tokens.insert(beam, cached.tokens);
        }
        // Logits along the greedy continuation, cached step by step versus
        // one full forward over the whole sequence.
        let greedy = &tokens[&1];
        let mut s = Session::new(Arc::clone(&model), Arc::clone(&adapter)).unwrap();
        let mut stepped = vec![s.prefill(&prompt).unwrap()];
        for &t in &greedy[..greedy.len() - 1] {
            stepped.push(s.decode_step(t).unwrap());
        }
        let seq: Vec<TokenId> = prompt.iter().chain(&greedy[..greedy.len() - 1]).copied().collect();
        let full = forward_sequence(&model, &adapter, &seq, prompt.len(), false).unwrap().logits;
        for (k, row) in stepped.iter().enumerate() {
            worst = worst.max(max_abs_diff(row, full.row(prompt.len() - 1 + k)));
        }
        cases.push(json!({ "method": method, "prompt": prompt, "max_new": max_new, "greedy": tokens[&1], "beam3": tokens[&3] }));
    }
    Verdict {
        pass: mismatches == 0 && worst <= CACHE_LOGIT_TOL,
        detail: format!(
            "{CACHE_CASES} cases x beams {{1,3}}: {mismatches} token mismatches, max |logit diff| {worst:.1e} (tol {CACHE_LOGIT_TOL:.0e})"
        ),
        artifact: json!({ "cases": cases, "mismatches": mismatches, "max_abs_diff": worst }),
    }
}

// Vector-generator amortization.
fn generator_amortization(seed: u64) -> Verdict {
    let c = ModelConfig::desk();
    let model = Arc::new(Model::<f64>::random(c, seed).unwrap());
    let adapter = Arc::new(perturbed(&c, Method::Para, &AdapterHyper::default(), seed, 0.1));
    let prompt = random_prompt(&mut Rng::new(seed).fork(4), c.vocab_size, 16);
    let mut counts = Vec::new();
    for max_new in [1, 8, 32] {
        for beam in [1, 3] {
            let g = generate(&model, &adapter, &prompt, max_new, beam).unwrap();
            counts.push(json!({ "max_new": max_new, "beam": beam, "invocations": g.generator_invocations }));
        }
    }
    let pass = counts.iter().all(|x| x["invocations"] == c.n_layers);
    Verdict {
        pass,
        detail: format!(
            "invocations per request for max_new {{1,8,32}} x beam {{1,3}}: {:?} (n_layers {})",
            counts.iter().map(|x| x["invocations"].as_u64().unwrap()).collect::<Vec<_>>(),
            c.n_layers
        ),
        artifact: json!({ "counts": counts }),
    }
}

// Gradient correctness.
fn gradient_check(seed: u64) -> Verdict {
    let c = ModelConfig {
        n_layers: 2,
        d_model: 8,
        d_ffn: 20,
        n_heads: 2,
        vocab_size: 16,
        max_seq_len: 32,
        ..ModelConfig::desk()
    };
    let model = Model::<f64>::random(c, seed).unwrap();
    let mut hyper = AdapterHyper::default();
    hyper.lora.rank = 4;
    hyper.lora.alpha = 8.0;
    hyper.lora.targets = Projection::ALL.to_vec();
    let task = TaskSpec { kind: TaskKind::Shift(1), alphabet: 8, n_train: 3, n_dev: 1, n_test: 1, seed, ..TaskSpec::default() };
    let batch: Vec<Example> = make_task(&task, c.vocab_size, c.max_seq_len).unwrap().train;
    let spec = GradCheckSpec { epsilon: GRAD_EPS, tolerance: GRAD_TOL };
    let mut worst = BTreeMap::new();
    let mut pass = true;
    let mut blocks = 0;
    for method in [Method::Para, Method::Lora, Method::Ia3] {
        let a = perturbed(&c, method, &hyper, seed + 7, 0.3);
        let r = gradcheck(&model, &a, &batch, GradMode::Adapter, &spec).unwrap();
        pass &= r.pass && r.worst() < GRAD_TOL;
        blocks += r.blocks.len();
        worst.insert(method.name(), r.worst());
    }
    Verdict {
        pass,
        detail: format!(
            "{blocks} blocks, worst relative error para {:.1e}, lora {:.1e}, ia3 {:.1e} (eps {GRAD_EPS:.0e}, tol {GRAD_TOL:.0e})",
            worst["para"], worst["lora"], worst["ia3"]
        ),
        artifact: json!({ "worst": worst, "blocks": blocks }),
    }
}

fn adapter_train_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig { lr: 3e-3, max_epochs: epochs, seed, ..TrainConfig::default() }
}

// Learnability ordering.
fn learnability(seed: u64, clock: &dyn Clock) -> Verdict {
    let c = ModelConfig::desk();
    let none = AdapterSet::none(&c);
    let hyper = AdapterHyper::default();

    let copy = TaskSpec { kind: TaskKind::Copy, specials: 8, n_train: 8000, seed, ..TaskSpec::default() };
    let copy_data = make_task(&copy, c.vocab_size, c.max_seq_len).unwrap();
    let pre_cfg = TrainConfig { lr: 3e-3, max_epochs: 6, patience: 1000, seed, ..TrainConfig::default() };
    let pre = pretrain_backbone(Model::<f64>::random(c, seed + 1).unwrap(), &copy_data, &pre_cfg, clock).unwrap();
    let backbone = pre.trained;
    let copy_acc = evaluate(&backbone, &none, &copy_data.test).unwrap().accuracy;

    let shift = TaskSpec { kind: TaskKind::Shift(1), seed: seed + 100, ..TaskSpec::default() };
    let shift_data = make_task(&shift, c.vocab_size, c.max_seq_len).unwrap();
    let frozen = evaluate(&backbone, &none, &shift_data.test).unwrap();
    let frozen_dev = evaluate(&backbone, &none, &shift_data.dev).unwrap().loss;
    let cfg = adapter_train_config(seed, 30);
    let para = AdapterSet::init(&c, Method::Para, &hyper, seed).unwrap();
    let out = train(&backbone, para, &shift_data, &cfg, clock).unwrap();
    let para_test = evaluate(&backbone, &out.trained, &shift_data.test).unwrap();
    let total = out.steps_run.max(1);
    let warmup = LrSchedule::new(cfg.lr, cfg.warmup_fraction, cfg.steps_per_epoch(shift_data.train.len()) * cfg.max_epochs)
        .warmup_steps;
    let after: Vec<_> = out.history.iter().filter(|h| h.step > warmup).collect();
    let below = after.iter().all(|h| h.dev_loss < frozen_dev);
    let shift_ok = para_test.accuracy >= SHIFT_MIN_ACC && frozen.accuracy <= FROZEN_MAX_ACC && below && !after.is_empty();

    let mut margins = Vec::new();
    let mut keyed = Vec::new();
    for s in 0..3u64 {
        let spec = TaskSpec { kind: TaskKind::KeyedLookup, specials: 2, seed: seed + 200 + s, ..TaskSpec::default() };
        let data = make_task(&spec, c.vocab_size, c.max_seq_len).unwrap();
        let cfg = adapter_train_config(seed + s, 15);
        let mut acc = BTreeMap::new();
        for method in [Method::Para, Method::Ia3] {
            let a = AdapterSet::init(&c, method, &hyper, seed + s).unwrap();
            let o = train(&backbone, a, &data, &cfg, clock).unwrap();
            acc.insert(method.name(), evaluate(&backbone, &o.trained, &data.test).unwrap().accuracy);
        }
        margins.push(acc["para"] - acc["ia3"]);
        keyed.push(json!({ "seed": seed + s, "para": acc["para"], "ia3": acc["ia3"] }));
    }
    let mut sorted = margins.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[1];
    let keyed_ok = median >= KEYED_MIN_MARGIN;

    Verdict {
        pass: shift_ok && keyed_ok,
        detail: format!(
            "shift_1 PARA test acc {:.3} (>= {SHIFT_MIN_ACC}), frozen {:.3} (<= {FROZEN_MAX_ACC}), dev below frozen at all {} evals after warmup: {below}; keyed_lookup median PARA-IA3 margin {:.3} (>= {KEYED_MIN_MARGIN})",
            para_test.accuracy,
            frozen.accuracy,
            after.len(),
            median
        ),
        artifact: json!({
            "copy_pretrain": { "steps": pre.steps_run, "test_accuracy": copy_acc, "history": pre.history },
            "shift_1": {
                "frozen_test": frozen,
                "frozen_dev_loss": frozen_dev,
                "para_test": para_test,
                "steps": total,
                "warmup_steps": warmup,
                "history": out.history,
            },
            "keyed_lookup": keyed,
            "keyed_margin_median": median,
        }),
    }
}

fn bench_spec(seed: u64) -> BenchSpec {
    BenchSpec { seed, ..BenchSpec::default() }
}

fn bench_registry(seed: u64) -> (TenantRegistry<f32>, AdapterHyper) {
    let c = ModelConfig::bench();
    let hyper = AdapterHyper::default();
    let registry = TenantRegistry::new(Arc::new(Model::<f32>::random(c, seed).unwrap()));
    for m in Method::ALL {
        let mut a = AdapterSet::<f32>::init(&c, m, &hyper, seed).unwrap();
        a.perturb(0.02, &mut Rng::new(seed).fork(m.tag() as u64));
        registry.register(m.name(), a).unwrap();
    }
    (registry, hyper)
}

fn run_efficiency_bench(seed: u64, clock: &dyn Clock) -> BenchReport {
    let (registry, hyper) = bench_registry(seed);
    run_bench(&bench_spec(seed), &registry, &hyper, clock).unwrap()
}

// Efficiency ordering.
fn efficiency(report: &BenchReport) -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for beam in [1, 3] {
        let cell = |m| report.cell(m, beam).unwrap();
        let (p, l, i) = (cell(Method::Para), cell(Method::Lora), cell(Method::Ia3));
        let ratio = p.tps_median / l.tps_median;
        let gap = (p.tps_median - i.tps_median).abs() / i.tps_median;
        pass &= ratio >= PARA_OVER_LORA && gap <= PARA_IA3_GAP && p.peak_alloc_bytes <= l.peak_alloc_bytes;
        parts.push(format!(
            "beam {beam}: PARA/LoRA tps {ratio:.3} (>= {PARA_OVER_LORA}), |PARA-IA3|/IA3 {gap:.3} (<= {PARA_IA3_GAP}), peak PARA {} vs LoRA {}",
            p.peak_alloc_bytes, l.peak_alloc_bytes
        ));
    }
    Verdict { pass, detail: parts.join("; "), artifact: serde_json::to_value(report).unwrap() }
}

// FLOP-model consistency.
fn flop_consistency(report: &BenchReport) -> Verdict {
    let c = report.meta.config;
    let hyper = AdapterHyper::default();
    let ctx = report.meta.spec.prompt_length;
    let order = [Method::None, Method::Para, Method::Lora];
    let predicted: Vec<u64> = order.iter().map(|&m| flop_model(&c, m, &hyper, ctx).overhead_per_token).collect();
    let predicted_ok = predicted.windows(2).all(|w| w[0] < w[1]);
    let mut parts = vec![format!("predicted overhead/token none {} < para {} < lora {}: {predicted_ok}", predicted[0], predicted[1], predicted[2])];
    let mut measured_ok = true;
    for beam in [1, 3] {
        let tps: Vec<f64> = order.iter().map(|&m| report.cell(m, beam).unwrap().tps_median).collect();
        let ok = tps.windows(2).all(|w| w[0] > w[1]);
        measured_ok &= ok;
        parts.push(format!("beam {beam} median tps none {:.2} > para {:.2} > lora {:.2}: {ok}", tps[0], tps[1], tps[2]));
    }
    Verdict {
        pass: predicted_ok && measured_ok,
        detail: parts.join("; "),
        artifact: json!({ "predicted": predicted }),
    }
}

fn random_config(rng: &mut Rng) -> ModelConfig {
    let heads = 1 + rng.below(3);
    ModelConfig {
        n_layers: 1 + rng.below(3),
        d_model: 2 * heads * (1 + rng.below(4)),
        d_ffn: 1 + rng.below(24),
        n_heads: heads,
        vocab_size: 4 + rng.below(30),
        max_seq_len: 16,
        ..ModelConfig::desk()
    }
}

fn round_trip<T: Scalar>(rng: &mut Rng, method: Method, k: u64) -> (bool, bool) {
    let c = random_config(rng);
    let mut hyper = AdapterHyper::default();
    hyper.para.r = 1 + rng.below(12);
    hyper.lora.rank = 1 + rng.below(8);
    hyper.lora.alpha = rng.uniform(0.5, 32.0);
    hyper.lora.targets = Projection::ALL.into_iter().filter(|_| rng.below(2) == 1).collect();
    if hyper.lora.targets.is_empty() {
        hyper.lora.targets.push(Projection::V);
    }
    let mut set = AdapterSet::<T>::init(&c, method, &hyper, k).unwrap();
    set.perturb(1.0, rng);
    let bytes = serialize_adapter(&set);
    let exact = deserialize_adapter::<T>(&bytes).map(|b| b.bit_eq(&set)).unwrap_or(false);

    // One corruption of each kind must surface as a typed error.
    let mut flipped = bytes.clone();
    let at = rng.below(flipped.len());
    flipped[at] ^= 1 << rng.below(8);
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    let cut = rng.below(bytes.len());
    let typed = deserialize_adapter::<T>(&flipped).is_err()
        && matches!(deserialize_adapter::<T>(&bad_magic), Err(FormatError::BadMagic { .. }))
        && deserialize_adapter::<T>(&bytes[..cut]).is_err();
    (exact, typed)
}

// Serialization.
fn serialization(seed: u64) -> Verdict {
    let mut rng = Rng::new(seed).fork(9);
    let mut exact = 0;
    let mut typed = 0;
    let methods = [Method::None, Method::Para, Method::Lora, Method::Ia3];
    for &m in &methods {
        for k in 0..ROUND_TRIPS {
            let (e, t) = if k % 2 == 0 { round_trip::<f64>(&mut rng, m, k) } else { round_trip::<f32>(&mut rng, m, k) };
            exact += e as usize;
            typed += t as usize;
        }
    }
    let total = methods.len() * ROUND_TRIPS as usize;
    Verdict {
        pass: exact == total && typed == total,
        detail: format!("{exact}/{total} bit-exact round trips, {typed}/{total} corruption sets rejected with typed errors"),
        artifact: json!({ "exact": exact, "typed": typed }),
    }
}

/// Criteria 1 to 7 with a stub clock; every artifact serialized to JSON.
fn deterministic_run(seed: u64, dir: &Path, timings: &mut Vec<(u32, Duration)>) -> (Vec<(u32, Verdict)>, BTreeMap<String, String>) {
    std::fs::create_dir_all(dir).unwrap();
    let clock = StubClock::new(Duration::from_millis(1));
    let mut verdicts = Vec::new();
    let mut timed = |n: u32, f: &dyn Fn() -> Verdict| {
        let t = Instant::now();
        let v = f();
        timings.push((n, t.elapsed()));
        verdicts.push((n, v));
    };
    timed(1, &|| identity_at_init(seed));
    timed(2, &parameter_count);
    timed(3, &|| cache_equivalence(seed));
    timed(4, &|| generator_amortization(seed));
    timed(5, &|| gradient_check(seed));
    timed(6, &|| learnability(seed, &clock));
    timed(7, &|| {
        let r = run_efficiency_bench(seed, &clock);
        Verdict { pass: true, detail: String::new(), artifact: serde_json::to_value(&r).unwrap() }
    });
    let mut files = BTreeMap::new();
    for (n, v) in &verdicts {
        let name = format!("criterion_{n}.json");
        let text = serde_json::to_string_pretty(&v.artifact).unwrap() + "\n";
        std::fs::write(dir.join(&name), &text).unwrap();
        files.insert(name, text);
    }
    (verdicts, files)
}

fn artifact_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn main() {
    let seed = 0;
    let start = Instant::now();
    let mut all = true;
    let names = [
        "",
        "identity at init",
        "parameter count at 7B dims",
        "KV-cache equivalence",
        "generator amortization",
        "gradient correctness",
        "learnability ordering",
        "efficiency ordering",
        "FLOP-model consistency",
        "serialization",
        "determinism",
    ];
    let limits: BTreeMap<u32, Duration> = [(1, 10), (3, 60), (5, 120), (6, 900), (7, 600)]
        .into_iter()
        .map(|(n, s)| (n, Duration::from_secs(s)))
        .collect();

    // Run A: criteria 1 to 6 are judged here; its artifacts are half of the
    // determinism comparison.
    let mut times_a = Vec::new();
    let (verdicts, files_a) = deterministic_run(seed, &artifact_dir().join("run_a"), &mut times_a);
    for ((n, v), (_, t)) in verdicts.iter().zip(&times_a) {
        if *n == 7 {
            continue;
        }
        let within = limits.get(n).is_none_or(|lim| t <= lim);
        let mut v = Verdict { pass: v.pass && within, detail: v.detail.clone(), artifact: Value::Null };
        if let Some(lim) = limits.get(n) {
            v.detail.push_str(&format!(", runtime limit {}s", lim.as_secs()));
        }
        all &= report(*n, names[*n as usize], &v, *t);
    }

    // Throughput needs the wall clock.
    let t = Instant::now();
    let bench = run_efficiency_bench(seed, &MonotonicClock::new());
    let bench_time = t.elapsed();
    std::fs::write(artifact_dir().join("bench_wallclock.json"), bench.to_json()).unwrap();
    let mut v = efficiency(&bench);
    let within = bench_time <= limits[&7];
    v.pass &= within;
    v.detail.push_str(&format!(", runtime limit {}s", limits[&7].as_secs()));
    all &= report(7, names[7], &v, bench_time);

    let t = Instant::now();
    let v = flop_consistency(&bench);
    all &= report(8, names[8], &v, t.elapsed());

    let t = Instant::now();
    let v = serialization(seed);
    all &= report(9, names[9], &v, t.elapsed());

    let t = Instant::now();
    let mut times_b = Vec::new();
    let (_, files_b) = deterministic_run(seed, &artifact_dir().join("run_b"), &mut times_b);
    let differing: Vec<&String> = files_a.keys().filter(|k| files_a.get(*k) != files_b.get(*k)).collect();
    let bytes: usize = files_a.values().map(String::len).sum();
    let v = Verdict {
        pass: differing.is_empty() && files_a.len() == 7,
        detail: format!(
            "two runs of criteria 1-7 (stub clock): {} artifacts, {bytes} bytes, differing: {differing:?}",
            files_a.len()
        ),
        artifact: Value::Null,
    };
    all &= report(10, names[10], &v, t.elapsed());

    println!(
        "acceptance: {} in {:.0}s (artifacts in {})",
        if all { "all criteria pass" } else { "FAILURES" },
        start.elapsed().as_secs_f64(),
        artifact_dir().display()
    );
    if !all {
        std::process::exit(1);
    }
}
