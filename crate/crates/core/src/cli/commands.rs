use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use crate::backbone::{generate, Model, TokenId};
use crate::clock::{Clock, MonotonicClock, StubClock};
use crate::format::{load_adapter_for, load_model, save_adapter, save_model};
use crate::peft::{count_params, AdapterMeta, AdapterSet, Method};
use crate::serving::{run_bench, TenantRegistry};
use crate::tensor::{Precision, Rng, Scalar};
use crate::training::{
    evaluate, gradcheck, make_task, pretrain_backbone, train, Evaluation, GradCheckSpec, GradMode,
    HistoryRecord, TaskSpec,
};

use super::{Cli, CliError, Command, Resolved, RunConfig};

pub(super) fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let r = RunConfig::load(cli.config.as_deref(), cli.seed)?;
    let clock: Box<dyn Clock> = if cli.stub_clock {
        Box::new(StubClock::new(Duration::from_millis(1)))
    } else {
        Box::new(MonotonicClock::new())
    };
    let clock = clock.as_ref();
    let f64_mode = r.run.precision == Precision::F64;
    match &cli.command {
        Command::Init { pretrain } if f64_mode => init::<f64>(&r, *pretrain, clock, out),
        Command::Init { pretrain } => init::<f32>(&r, *pretrain, clock, out),
        Command::Train if f64_mode => train_cmd::<f64>(&r, clock, out),
        Command::Train => train_cmd::<f32>(&r, clock, out),
        Command::Generate { prompt, prompt_file, beam, max_new, adapter } => {
            let prompt = read_prompt(prompt.as_deref(), prompt_file.as_deref())?;
            let adapter = adapter.as_deref();
            if f64_mode {
                generate_cmd::<f64>(&r, &prompt, *beam, *max_new, adapter, out)
            } else {
                generate_cmd::<f32>(&r, &prompt, *beam, *max_new, adapter, out)
            }
        }
        Command::Bench if f64_mode => bench::<f64>(&r, clock, out),
        Command::Bench => bench::<f32>(&r, clock, out),
        Command::CountParams => count(&r, out),
        Command::Gradcheck { method } => gradcheck_cmd(&r, method.unwrap_or(r.run.adapter.method), out),
    }
}

fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

fn say(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(io("stdout"))
}

fn output_file(r: &Resolved, name: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&r.output_dir).map_err(io(r.output_dir.display().to_string()))?;
    Ok(r.output_dir.join(name))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io(path.display().to_string()))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes") + "\n";
    write_text(path, &text)
}

/// `1234567` → `1,234,567`.
pub fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn parse_ids(text: &str) -> Result<Vec<TokenId>, CliError> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<TokenId>()
                .map_err(|_| CliError::Usage(format!("prompt token {s:?} is not a token id")))
        })
        .collect()
}

fn read_prompt(inline: Option<&str>, file: Option<&Path>) -> Result<Vec<TokenId>, CliError> {
    match (inline, file) {
        (Some(t), _) => parse_ids(t),
        (None, Some(p)) => {
            let text = std::fs::read_to_string(p).map_err(io(p.display().to_string()))?;
            parse_ids(&text)
        }
        (None, None) => Err(CliError::Usage("generate needs --prompt or --prompt-file".into())),
    }
}

/// Backbones larger than this are only used for accounting.
const MAX_BACKBONE_BYTES: u64 = 2 << 30;

fn check_size<T: Scalar>(r: &Resolved) -> Result<(), CliError> {
    let bytes = r.model.backbone_params() * T::PRECISION.bytes() as u64;
    if bytes > MAX_BACKBONE_BYTES {
        return Err(CliError::Config(format!(
            "model `{}` needs {} bytes of weights; this engine materializes at most {}",
            r.run.model,
            thousands(bytes),
            thousands(MAX_BACKBONE_BYTES)
        )));
    }
    Ok(())
}

fn random_backbone<T: Scalar>(r: &Resolved) -> Result<Model<T>, CliError> {
    check_size::<T>(r)?;
    Ok(Model::random(r.model, r.run.seed)?)
}

fn load_backbone<T: Scalar>(r: &Resolved) -> Result<Model<T>, CliError> {
    check_size::<T>(r)?;
    let model: Model<T> = load_model(&r.weights)?;
    if *model.config() != r.model {
        return Err(CliError::Config(format!(
            "{} holds a backbone of a different shape than the configured model `{}`",
            r.weights.display(),
            r.run.model
        )));
    }
    Ok(model)
}

fn init<T: Scalar>(r: &Resolved, pretrain: bool, clock: &dyn Clock, out: &mut dyn Write) -> Result<(), CliError> {
    let mut model = random_backbone::<T>(r)?;
    if pretrain || r.run.pretrain.enabled {
        let p = &r.run.pretrain;
        let data = make_task(&p.task, r.model.vocab_size, r.model.max_seq_len)?;
        let outcome = pretrain_backbone(model, &data, &p.train, clock)?;
        write_text(&output_file(r, "pretrain_history.jsonl")?, &HistoryRecord::to_jsonl(&outcome.history))?;
        model = outcome.trained;
        let test = evaluate(&model, &AdapterSet::none(&r.model), &data.test)?;
        say(out, format_args!(
            "pretrained on {} for {} steps: test loss {:.4}, accuracy {:.4}",
            data.name, outcome.steps_run, test.loss, test.accuracy
        ))?;
    }
    let path = output_file(r, "model.bin")?;
    save_model(&path, &model)?;
    say(out, format_args!("wrote {}", path.display()))
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    method: Method,
    task: &'a str,
    task_spec: &'a TaskSpec,
    seed: u64,
    steps_run: usize,
    best_step: usize,
    initial_dev_loss: f64,
    best_dev_loss: f64,
    stopped_early: bool,
    frozen_test: Evaluation,
    test: Evaluation,
}

fn train_cmd<T: Scalar>(r: &Resolved, clock: &dyn Clock, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_backbone::<T>(r)?;
    let data = make_task(&r.run.task, r.model.vocab_size, r.model.max_seq_len)?;
    let method = r.run.adapter.method;
    let seed = r.run.seed;
    let adapter = AdapterSet::init(&r.model, method, &r.run.adapter.hyper(), seed)?.with_meta(AdapterMeta {
        tenant_id: method.name().into(),
        seed,
        run_id: format!("{}-{}-{seed}", data.name, method),
    });
    let frozen_test = evaluate(&model, &AdapterSet::none(&r.model), &data.test)?;
    let outcome = train(&model, adapter, &data, &r.run.train, clock)?;
    let test = evaluate(&model, &outcome.trained, &data.test)?;

    save_adapter(&output_file(r, "adapter.bin")?, &outcome.trained)?;
    write_text(&output_file(r, "history.jsonl")?, &HistoryRecord::to_jsonl(&outcome.history))?;
    write_json(
        &output_file(r, "train_summary.json")?,
        &TrainSummary {
            method,
            task: &data.name,
            task_spec: &data.spec,
            seed,
            steps_run: outcome.steps_run,
            best_step: outcome.best_step,
            initial_dev_loss: outcome.initial_dev_loss,
            best_dev_loss: outcome.best_dev_loss,
            stopped_early: outcome.stopped_early,
            frozen_test,
            test,
        },
    )?;
    say(out, format_args!(
        "{method} on {}: {} steps, dev loss {:.4} -> {:.4} (step {}), test accuracy {:.4} (frozen {:.4})",
        data.name,
        outcome.steps_run,
        outcome.initial_dev_loss,
        outcome.best_dev_loss,
        outcome.best_step,
        test.accuracy,
        frozen_test.accuracy
    ))
}

fn generate_cmd<T: Scalar>(
    r: &Resolved,
    prompt: &[TokenId],
    beam: usize,
    max_new: usize,
    adapter: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let model = load_backbone::<T>(r)?;
    let set = match adapter {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(io(p.display().to_string()))?;
            load_adapter_for::<T>(&bytes, &r.model)?
        }
        None => AdapterSet::none(&r.model),
    };
    let g = generate(&Arc::new(model), &Arc::new(set), prompt, max_new, beam)?;
    if g.tokens.is_empty() {
        return Ok(());
    }
    let ids: Vec<String> = g.tokens.iter().map(|t| t.to_string()).collect();
    say(out, format_args!("{}", ids.join(" ")))
}

fn bench<T: Scalar>(r: &Resolved, clock: &dyn Clock, out: &mut dyn Write) -> Result<(), CliError> {
    let model = if r.weights.exists() {
        load_backbone::<T>(r)?
    } else {
        random_backbone::<T>(r)?
    };
    let registry = TenantRegistry::new(Arc::new(model));
    let hyper = r.run.adapter.hyper();
    for &m in &r.run.bench.methods {
        registry.register(m.name(), AdapterSet::init(&r.model, m, &hyper, r.run.seed)?)?;
    }
    let report = run_bench(&r.run.bench, &registry, &hyper, clock)?;
    output_file(r, "bench.json")?;
    report.write(&r.output_dir, "bench")?;
    say(out, format_args!("{:<6} {:>4} {:>12} {:>12} {:>14}", "method", "beam", "median_tps", "stdev_tps", "peak_bytes"))?;
    for c in &report.cells {
        say(out, format_args!(
            "{:<6} {:>4} {:>12.2} {:>12.2} {:>14}",
            c.method.name(),
            c.beam,
            c.tps_median,
            c.tps_stdev,
            thousands(c.peak_alloc_bytes.max(0) as u64)
        ))?;
    }
    for c in &report.checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        say(out, format_args!("{verdict} {} beam {}: {:.4} vs {:.4}", c.name, c.beam, c.value, c.threshold))?;
    }
    if report.all_checks_pass() {
        Ok(())
    } else {
        Err(CliError::Numerical("benchmark ordering checks failed".into()))
    }
}

fn count(r: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let c = &r.model;
    let hyper = r.run.adapter.hyper();
    say(out, format_args!(
        "model {}: {} layers, d_model {}, d_ffn {}",
        r.run.model, c.n_layers, c.d_model, c.d_ffn
    ))?;
    say(out, format_args!("{:<6} {:>14} {:>14}", "method", "tunable", "with_bias"))?;
    for m in [Method::Para, Method::Lora, Method::Ia3] {
        let n = count_params(c, m, &hyper)?;
        say(out, format_args!("{:<6} {:>14} {:>14}", m.name(), thousands(n.headline), thousands(n.with_bias)))?;
    }
    Ok(())
}

fn gradcheck_cmd(r: &Resolved, method: Method, out: &mut dyn Write) -> Result<(), CliError> {
    let g = &r.run.gradcheck;
    let model = random_backbone::<f64>(r)?;
    let spec = TaskSpec {
        n_train: g.examples,
        n_dev: 1,
        n_test: 1,
        ..r.run.task.clone()
    };
    let data = make_task(&spec, r.model.vocab_size, r.model.max_seq_len)?;
    let mut adapter = AdapterSet::init(&r.model, method, &r.run.adapter.hyper(), r.run.seed)?;
    adapter.perturb(g.perturb_std, &mut Rng::new(r.run.seed).fork(0x9c));
    let mode = if method == Method::None { GradMode::Full } else { GradMode::Adapter };
    let check = GradCheckSpec {
        epsilon: g.epsilon,
        tolerance: g.tolerance,
    };
    let report = gradcheck(&model, &adapter, &data.train, mode, &check)?;
    write_json(&output_file(r, "gradcheck.json")?, &report)?;
    for b in &report.blocks {
        say(out, format_args!("{:<24} {:>7} {:.3e}", b.name, b.len, b.max_rel_error))?;
    }
    let verdict = if report.pass { "PASS" } else { "FAIL" };
    say(out, format_args!("{verdict} {method}: worst {:.3e} (tolerance {:.0e})", report.worst(), report.tolerance))?;
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("gradient check failed for {method}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thousands_separators() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(1000), "1,000");
        assert_eq!(thousands(8_945_664), "8,945,664");
        assert_eq!(thousands(123_456_789_012), "123,456,789,012");
    }

    #[test]
    fn prompt_parsing() {
        assert_eq!(parse_ids("1, 2 3\n4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_ids("").unwrap(), Vec::<TokenId>::new());
        assert!(matches!(parse_ids("1 x"), Err(CliError::Usage(_))));
        assert!(matches!(read_prompt(None, None), Err(CliError::Usage(_))));
    }
}
