use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use prefopt::analysis::{collapse_metrics, curves_to_csv, curves_to_svg, decile_bin_map, derivative_curve};
use prefopt::data::{apply_pairing_mask, gen_near_duplicate_pairs, gen_pairwise_dataset};
use prefopt::model::init_params;
use prefopt::trainer::{evaluate, train_run_threads};
use prefopt::{
    run_gradcheck, shift_report, Dataset, EvalSource, GradcheckConfig, MetricsLog, ModelParams, Precision, Scalar,
    SeededRng, ShiftAnalysis,
};
use serde::Serialize;

use crate::config::{
    absolute, load, resolved, seed_override, AnalyzeCommand, BinMapCommand, CurveCommand, GenDataConfig, Generator,
    SourceSpec, TrainCommand,
};
use crate::{CliError, RunArgs};

const MASK_STREAM: u64 = 0x6d61_736b;
const RESOLVED: &str = "config.resolved.json";

fn require_config<'a>(a: &'a RunArgs, command: &str) -> Result<&'a Path, CliError> {
    a.config
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("{command} requires --config <path>")))
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn gen_data(a: &RunArgs) -> Result<String, CliError> {
    let mut cfg: GenDataConfig = load(require_config(a, "gen-data")?, "gen-data")?;
    if let Some(s) = seed_override(a.seed)? {
        cfg.seed = s;
    }
    let mut rng = SeededRng::new(cfg.seed);
    let full = match &cfg.generator {
        Generator::Pairwise(p) => gen_pairwise_dataset(&mut rng, p)?,
        Generator::NearDuplicate(n) => gen_near_duplicate_pairs(&mut rng, n)?,
    };
    let data = apply_pairing_mask(&mut SeededRng::new(cfg.seed).split(MASK_STREAM), &full, cfg.pairing_ratio)?;
    write_out(&a.out, "dataset.jsonl", &data.to_jsonl_string()?)?;
    write_out(&a.out, RESOLVED, &resolved("gen-data", &cfg)?)?;
    let pairs = data.examples.iter().filter(|e| e.pair_id.is_some()).count() / 2;
    Ok(format!(
        "gen-data: {} examples ({pairs} pairs) -> {}",
        data.examples.len(),
        a.out.join("dataset.jsonl").display()
    ))
}

pub fn gradcheck(a: &RunArgs) -> Result<String, CliError> {
    let mut cfg = match &a.config {
        Some(p) => load(p, "gradcheck")?,
        None => GradcheckConfig::default(),
    };
    if let Some(s) = seed_override(a.seed)? {
        cfg.seed = s;
    }
    let report = run_gradcheck(&cfg)?;
    write_out(&a.out, "gradcheck.json", &to_json(&report)?)?;
    write_out(&a.out, RESOLVED, &resolved("gradcheck", &cfg)?)?;
    let mut summary = String::new();
    for m in &report.methods {
        let _ = writeln!(
            summary,
            "{:<8} max relative error {:.3e} over {} instances ({})",
            m.method.name(),
            m.max_rel_error,
            m.instances,
            if m.passed { "ok" } else { "FAIL" }
        );
    }
    let _ = write!(summary, "gradcheck: tolerance {:e}, {}", report.tolerance, if report.passed { "all passed" } else { "FAILED" });
    if report.passed {
        Ok(summary)
    } else {
        Err(CliError::Numerical(summary))
    }
}

#[derive(Serialize)]
struct TrainSummary {
    method: String,
    steps: usize,
    final_loss: Option<f64>,
    initial: prefopt::trainer::EvalSummary,
    final_eval: prefopt::trainer::EvalSummary,
    collapse: Option<prefopt::CollapseReport>,
}

pub fn train(a: &RunArgs) -> Result<String, CliError> {
    let mut cmd: TrainCommand = load(require_config(a, "train")?, "train")?;
    if let Some(s) = seed_override(a.seed)? {
        cmd.train.seed = s;
        cmd.model.seed = Some(s);
    }
    cmd.model.seed.get_or_insert(cmd.train.seed);
    cmd.dataset = absolute(&cmd.dataset)?;
    cmd.train.validate()?;
    let data = Dataset::read_jsonl(&cmd.dataset)?;
    match cmd.train.precision {
        Precision::Double => run_train::<f64>(a, &cmd, &data),
        Precision::Single => run_train::<f32>(a, &cmd, &data),
    }
}

fn run_train<T: Scalar>(a: &RunArgs, cmd: &TrainCommand, data: &Dataset) -> Result<String, CliError> {
    let m = &cmd.model;
    let seed = m.seed.unwrap_or(cmd.train.seed);
    let init = init_params::<T>(&mut SeededRng::new(seed), m.arch, data.vocab_size, m.embed_dim, m.hidden_dim, m.init_scale)?;
    let out = train_run_threads(&cmd.train, &init, data, a.threads)?;
    let collapse = match &cmd.collapse_guard {
        _ if out.log.rows.is_empty() => None,
        Some(t) => Some(collapse_metrics(&out.log, *t)?),
        None => Some(collapse_metrics(&out.log, prefopt::analysis::COLLAPSE_THRESHOLD)?),
    };
    let summary = TrainSummary {
        method: cmd.train.method.name().to_string(),
        steps: cmd.train.steps,
        final_loss: out.log.rows.last().map(|r| r.loss),
        initial: evaluate(&out.reference, data)?,
        final_eval: evaluate(&out.params, data)?,
        collapse: collapse.clone(),
    };
    write_out(&a.out, "metrics.csv", &out.log.to_csv())?;
    write_out(&a.out, "checkpoint.json", &out.params.to_json()?)?;
    write_out(&a.out, "reference.json", &out.reference.to_json()?)?;
    write_out(&a.out, "summary.json", &to_json(&summary)?)?;
    write_out(&a.out, RESOLVED, &resolved("train", cmd)?)?;
    let line = format!(
        "train: {} for {} steps, mean log p(y_w) {:.4} -> {:.4}, mean log p(y_l) {:.4} -> {:.4}",
        summary.method,
        summary.steps,
        summary.initial.mean_logp_w,
        summary.final_eval.mean_logp_w,
        summary.initial.mean_logp_l,
        summary.final_eval.mean_logp_l
    );
    if let (Some(t), Some(c)) = (cmd.collapse_guard, &collapse) {
        if c.collapsed {
            return Err(CliError::Numerical(format!(
                "{line}\ncollapse guard: mean per-token log p(y_l) fell below {t} at step {}",
                c.first_crossing.unwrap_or_default()
            )));
        }
    }
    Ok(line)
}

pub fn curve(a: &RunArgs) -> Result<String, CliError> {
    let cfg: CurveCommand = load(require_config(a, "curve")?, "curve")?;
    if cfg.kinds.is_empty() {
        return Err(CliError::Usage("config field `kinds`: at least one curve is required".into()));
    }
    let curves = cfg
        .kinds
        .iter()
        .map(|&k| derivative_curve(k, cfg.pi_ref, cfg.grid_size).map(|c| (k, c)))
        .collect::<prefopt::Result<Vec<_>>>()?;
    write_out(&a.out, "curve.csv", &curves_to_csv(&curves))?;
    let title = format!("gradient magnitude vs likelihood (π_ref = {})", cfg.pi_ref);
    write_out(&a.out, "curve.svg", &curves_to_svg(&curves, &title))?;
    write_out(&a.out, RESOLVED, &resolved("curve", &cfg)?)?;
    let names: Vec<&str> = cfg.kinds.iter().map(|k| k.name()).collect();
    Ok(format!("curve: {} series ({}) on {} grid points -> {}", names.len(), names.join(", "), cfg.grid_size, a.out.display()))
}

pub fn analyze(a: &RunArgs) -> Result<String, CliError> {
    let mut cfg: AnalyzeCommand = load(require_config(a, "analyze")?, "analyze")?;
    cfg.policy = absolute(&cfg.policy)?;
    cfg.reference = absolute(&cfg.reference)?;
    cfg.dataset = absolute(&cfg.dataset)?;
    if let Some(m) = &cfg.metrics {
        cfg.metrics = Some(absolute(m)?);
    }
    let policy = ModelParams::<f64>::load(&cfg.policy)?;
    let reference = ModelParams::<f64>::load(&cfg.reference)?;
    let data = Dataset::read_jsonl(&cfg.dataset)?;
    let source = *cfg.source.get_or_insert(SourceSpec::Greedy {
        max_len: data.examples.iter().map(|e| e.response.len()).max().unwrap_or(1),
    });
    let eval = match source {
        SourceSpec::Dataset => EvalSource::Dataset(&data),
        SourceSpec::Greedy { max_len } => EvalSource::Greedy { prompts: &data, max_len },
    };
    let report = shift_report(&policy, &reference, eval)?;
    write_out(&a.out, "report.json", &to_json(&report)?)?;
    write_out(&a.out, "report.csv", &report.to_csv())?;
    let mut collapsed = String::new();
    if let Some(path) = &cfg.metrics {
        let log = MetricsLog::from_csv(&fs::read_to_string(path)?)?;
        let c = collapse_metrics(&log, cfg.collapse_threshold)?;
        collapsed = format!(", collapsed = {}", c.collapsed);
        write_out(&a.out, "collapse.json", &to_json(&c)?)?;
    }
    write_out(&a.out, RESOLVED, &resolved("analyze", &cfg)?)?;
    let s = &report.summary;
    Ok(format!(
        "analyze: {} sequences, mean Δ log-likelihood {:.4}, mean logit shift {:.4}{collapsed}",
        s.sequences, s.delta_loglik.mean, s.logit_shift_norm.mean
    ))
}

#[derive(Serialize)]
struct BinMapOutput {
    anchor_tokens: usize,
    other_tokens: usize,
    fractions: [f64; 10],
}

fn read_report(path: &Path) -> Result<ShiftAnalysis, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a shift report: {e}", path.display())))
}

pub fn bin_map(a: &RunArgs) -> Result<String, CliError> {
    let mut cfg: BinMapCommand = load(require_config(a, "bin-map")?, "bin-map")?;
    cfg.anchor = absolute(&cfg.anchor)?;
    cfg.other = absolute(&cfg.other)?;
    let anchor = read_report(&cfg.anchor)?.token_deltas();
    let other = read_report(&cfg.other)?.token_deltas();
    let fractions = decile_bin_map(&anchor, &other)?;
    let out = BinMapOutput { anchor_tokens: anchor.len(), other_tokens: other.len(), fractions };
    let mut csv = String::from("bin,fraction\n");
    for (k, f) in fractions.iter().enumerate() {
        let _ = writeln!(csv, "{},{f}", k + 1);
    }
    write_out(&a.out, "bin_map.json", &to_json(&out)?)?;
    write_out(&a.out, "bin_map.csv", &csv)?;
    write_out(&a.out, RESOLVED, &resolved("bin-map", &cfg)?)?;
    let shown: Vec<String> = fractions.iter().map(|f| format!("{f:.3}")).collect();
    Ok(format!("bin-map: {} tokens binned by {} anchor tokens: [{}]", other.len(), anchor.len(), shown.join(", ")))
}
