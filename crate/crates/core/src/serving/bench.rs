use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::TokenId;
use crate::clock::Clock;
use crate::config::ModelConfig;
use crate::peft::{AdapterHyper, Method};
use crate::tensor::{AllocScope, Precision, Rng, Scalar};

use super::{flop_model, ServingError, TenantRegistry};

/// Benchmark protocol. Each method is served by the tenant whose id is the
/// method name (`para`, `lora`, `ia3`, `none`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    pub prompt_length: usize,
    pub max_new_tokens: usize,
    pub beams: Vec<usize>,
    pub repetitions: usize,
    pub warmup_runs: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            prompt_length: 274,
            max_new_tokens: 32,
            beams: vec![1, 3],
            repetitions: 100,
            warmup_runs: 5,
            methods: vec![Method::None, Method::Para, Method::Lora, Method::Ia3],
            seed: 0,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self, config: &ModelConfig) -> Result<(), ServingError> {
        let bad = |m: String| Err(ServingError::InvalidSpec(m));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.prompt_length == 0 {
            return bad("prompt_length must be at least 1".into());
        }
        if self.beams.is_empty() || self.beams.contains(&0) {
            return bad("beams must be non-empty and each at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("no methods to benchmark".into());
        }
        let widest = *self.beams.iter().max().unwrap();
        let need = self.prompt_length + self.max_new_tokens * widest;
        if need > config.max_seq_len {
            return bad(format!(
                "prompt_length + max_new_tokens * beam = {need} exceeds max_seq_len {}",
                config.max_seq_len
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchMeta {
    pub config: ModelConfig,
    pub config_fingerprint: String,
    pub precision: Precision,
    pub spec: BenchSpec,
    pub prompt: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub method: Method,
    pub beam: usize,
    pub samples: usize,
    pub tps_mean: f64,
    pub tps_median: f64,
    pub tps_stdev: f64,
    /// Largest tracked allocation growth seen during one request.
    pub peak_alloc_bytes: i64,
    /// Vector-generator runs per request.
    pub generator_invocations: usize,
    pub tokens: Vec<TokenId>,
    pub predicted_flops_per_token: u64,
    pub predicted_overhead_per_token: u64,
}

/// One ordering or closeness property evaluated on the measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCheck {
    pub name: String,
    pub beam: usize,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub meta: BenchMeta,
    pub cells: Vec<BenchCell>,
    pub checks: Vec<BenchCheck>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    beam: usize,
    samples: usize,
    tps_mean: f64,
    tps_median: f64,
    tps_stdev: f64,
    peak_alloc_bytes: i64,
    generator_invocations: usize,
    predicted_flops_per_token: u64,
    predicted_overhead_per_token: u64,
}

impl BenchReport {
    pub fn cell(&self, method: Method, beam: usize) -> Option<&BenchCell> {
        self.cells.iter().find(|c| c.method == method && c.beam == beam)
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_csv(&self) -> Result<String, ServingError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in &self.cells {
            w.serialize(CsvRow {
                method: c.method.name(),
                beam: c.beam,
                samples: c.samples,
                tps_mean: c.tps_mean,
                tps_median: c.tps_median,
                tps_stdev: c.tps_stdev,
                peak_alloc_bytes: c.peak_alloc_bytes,
                generator_invocations: c.generator_invocations,
                predicted_flops_per_token: c.predicted_flops_per_token,
                predicted_overhead_per_token: c.predicted_overhead_per_token,
            })
            .map_err(|e| ServingError::Output(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| ServingError::Output(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| ServingError::Output(e.to_string()))
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(), ServingError> {
        let out = |name: String, body: String| -> Result<(), ServingError> {
            let mut f = std::fs::File::create(dir.join(&name)).map_err(|e| ServingError::Output(format!("{name}: {e}")))?;
            f.write_all(body.as_bytes()).map_err(|e| ServingError::Output(format!("{name}: {e}")))
        };
        out(format!("{stem}.json"), self.to_json())?;
        out(format!("{stem}.csv"), self.to_csv()?)
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn mean_stdev(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Minimum median-tps ratio of PARA over un-merged LoRA.
const PARA_OVER_LORA: f64 = 1.05;
/// Maximum relative median-tps gap between PARA and (IA)³.
const PARA_IA3_GAP: f64 = 0.10;

fn checks(cells: &[BenchCell], beams: &[usize]) -> Vec<BenchCheck> {
    let mut out = Vec::new();
    let find = |m: Method, b: usize| cells.iter().find(|c| c.method == m && c.beam == b);
    for &beam in beams {
        if let (Some(p), Some(l)) = (find(Method::Para, beam), find(Method::Lora, beam)) {
            let ratio = p.tps_median / l.tps_median;
            out.push(BenchCheck { name: "para_over_lora_tps".into(), beam, value: ratio, threshold: PARA_OVER_LORA, pass: ratio >= PARA_OVER_LORA });
            out.push(BenchCheck {
                name: "para_peak_le_lora_peak".into(),
                beam,
                value: p.peak_alloc_bytes as f64,
                threshold: l.peak_alloc_bytes as f64,
                pass: p.peak_alloc_bytes <= l.peak_alloc_bytes,
            });
        }
        if let (Some(p), Some(i)) = (find(Method::Para, beam), find(Method::Ia3, beam)) {
            let gap = (p.tps_median - i.tps_median).abs() / i.tps_median;
            out.push(BenchCheck { name: "para_ia3_tps_gap".into(), beam, value: gap, threshold: PARA_IA3_GAP, pass: gap <= PARA_IA3_GAP });
        }
        // Fewer predicted FLOPs must mean higher measured throughput.
        let here: Vec<&BenchCell> = cells.iter().filter(|c| c.beam == beam).collect();
        let mut violations = 0;
        let mut pairs = 0;
        for a in &here {
            for b in &here {
                if a.predicted_flops_per_token < b.predicted_flops_per_token {
                    pairs += 1;
                    if a.tps_median <= b.tps_median {
                        violations += 1;
                    }
                }
            }
        }
        if pairs > 0 {
            out.push(BenchCheck { name: "flop_order_matches_tps".into(), beam, value: violations as f64, threshold: 0.0, pass: violations == 0 });
        }
    }
    out
}

/// Runs the benchmark. Within each beam width, repetitions cycle through the
/// methods so slow drift in machine speed affects all of them alike.
pub fn run_bench<T: Scalar>(
    spec: &BenchSpec,
    registry: &TenantRegistry<T>,
    hyper: &AdapterHyper,
    clock: &dyn Clock,
) -> Result<BenchReport, ServingError> {
    let config = *registry.model().config();
    spec.validate(&config)?;
    let factories = spec
        .methods
        .iter()
        .map(|&m| registry.resolve(m.name()).map_err(|_| ServingError::MissingMethod(m)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = Rng::new(spec.seed).fork(0xbe4c);
    let prompt: Vec<TokenId> = (0..spec.prompt_length).map(|_| rng.below(config.vocab_size) as TokenId).collect();

    let mut cells = Vec::new();
    for &beam in &spec.beams {
        for f in &factories {
            for _ in 0..spec.warmup_runs {
                f.generate(&prompt, spec.max_new_tokens, beam)?;
            }
        }
        let mut tps = vec![Vec::with_capacity(spec.repetitions); factories.len()];
        let mut peaks = vec![0i64; factories.len()];
        let mut outputs = vec![None; factories.len()];
        for _ in 0..spec.repetitions {
            for (k, f) in factories.iter().enumerate() {
                let scope = AllocScope::begin();
                let t0 = clock.now();
                let g = f.generate(&prompt, spec.max_new_tokens, beam)?;
                let secs = (clock.now() - t0).as_secs_f64();
                peaks[k] = peaks[k].max(scope.peak_delta());
                drop(scope);
                tps[k].push(spec.max_new_tokens as f64 / secs.max(f64::MIN_POSITIVE));
                match &outputs[k] {
                    None => outputs[k] = Some(g),
                    Some(prev) if *prev != g => {
                        return Err(ServingError::Nondeterministic { method: spec.methods[k], beam })
                    }
                    Some(_) => {}
                }
            }
        }
        for (k, &method) in spec.methods.iter().enumerate() {
            let g = outputs[k].take().expect("at least one repetition");
            let (mean, stdev) = mean_stdev(&tps[k]);
            let flops = flop_model(&config, method, hyper, spec.prompt_length);
            cells.push(BenchCell {
                method,
                beam,
                samples: tps[k].len(),
                tps_mean: mean,
                tps_median: median(&tps[k]),
                tps_stdev: stdev,
                peak_alloc_bytes: peaks[k],
                generator_invocations: g.generator_invocations,
                tokens: g.tokens,
                predicted_flops_per_token: flops.total_per_token,
                predicted_overhead_per_token: flops.overhead_per_token,
            });
        }
    }
    let checks = checks(&cells, &spec.beams);
    Ok(BenchReport {
        meta: BenchMeta {
            config,
            config_fingerprint: format!("{:016x}", config.fingerprint()),
            precision: T::PRECISION,
            spec: spec.clone(),
            prompt,
        },
        cells,
        checks,
    })
}
