use std::io::Write;
use std::path::Path;

use promise_core::breach::BreachCorrector;
use promise_core::evalkit::{self, LegModelSpec, TrainRequest};
use promise_core::pipeline::{FeatureRecipe, ModelLeg, ModelSet};
use promise_core::simnet::{Scenario, SimFiles, SimOutput};
use promise_core::{fsio, Error, LossSpec, Order};

use crate::args::{EvaluateArgs, QuoteArgs, SimulateArgs, TrainArgs, TuneArgs};
use crate::config::RunConfig;
use crate::{CliError, CliResult};

/// File written next to the corrector with the tuning outcome.
pub const TUNING_FILE: &str = "tuning.json";

fn load_scenario(name: &str) -> promise_core::Result<Scenario> {
    match name {
        "default" => Ok(Scenario::default_scenario()),
        "hrd" => Ok(Scenario::hrd_scenario()),
        path => Scenario::from_path(Path::new(path)),
    }
}

/// Reads a simulate output directory through its delivery log.
fn load_sim(deliveries: &Path) -> promise_core::Result<(Scenario, SimOutput)> {
    let dir = deliveries.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    SimFiles::read(dir, Some(deliveries))
}

fn stdout_line(line: &str) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").map_err(|e| Error::Io { path: "<stdout>".into(), source: e }.into())
}

pub fn simulate(a: SimulateArgs) -> CliResult<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let name = cfg.scenario.clone().filter(|_| a.scenario == "default").unwrap_or(a.scenario);
    let mut scenario = load_scenario(&name)?;
    if let Some(days) = a.days {
        scenario.days = days;
        let end = scenario.end_date();
        scenario.events.retain(|e| e.start < end);
    }
    scenario.validate()?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let out = scenario.generate(seed)?;
    SimFiles::write(&a.out, &scenario, &out)?;
    stdout_line(&format!("wrote {} deliveries over {} days to {}", out.records.len(), scenario.days, a.out.display()))
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let leg = ModelLeg::parse(&a.leg)?;
    let loss = a.loss.as_deref().map(LossSpec::parse).transpose()?;
    let model = LegModelSpec::parse(&a.model, loss)?;
    let recipe = match a.recipe.as_ref().or(cfg.recipe.as_ref()) {
        Some(p) => Some(FeatureRecipe::from_path(p)?),
        None => None,
    };
    let corrector = match &a.corrector {
        Some(_) if leg != ModelLeg::Shipping => {
            return Err(CliError::Usage("--corrector applies to the shipping leg only".into()));
        }
        Some(dir) => Some(BreachCorrector::load(dir)?),
        None => None,
    };
    let (scenario, sim) = load_sim(&a.data)?;
    let req = TrainRequest { leg, model, recipe, params: cfg.params.get(leg.as_str()).cloned(), seed: a.seed.or(cfg.seed).unwrap_or(0) };
    let (mut artifact, trace) = evalkit::train_leg(&scenario, &sim, &req)?;
    artifact.corrector = corrector;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    artifact.save(&a.out)?;
    if trace.is_empty() {
        stdout_line(&format!("{} has no iterative training loss", artifact.tag()))?;
    }
    for (i, loss) in trace.iter().enumerate() {
        stdout_line(&format!("iteration {} loss {loss:.6}", i + 1))?;
    }
    stdout_line(&format!("wrote {} model {} to {}", leg.as_str(), artifact.tag(), a.out.display()))
}

pub fn tune_breach(a: TuneArgs) -> CliResult<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let cutoff = a
        .cutoff
        .or(cfg.breach_cutoff)
        .ok_or_else(|| CliError::Usage("a breach cutoff is required (--cutoff or breach_cutoff in --config)".into()))?;
    let (scenario, sim) = load_sim(&a.history)?;
    let (corrector, outcome) = evalkit::tune_breach(&scenario, &sim, cutoff, a.seed.or(cfg.seed).unwrap_or(0))?;
    corrector.save(&a.out)?;
    let summary = serde_json::to_string_pretty(&outcome).map_err(Error::from)?;
    fsio::write_atomic(&a.out.join(TUNING_FILE), summary.as_bytes())?;
    stdout_line(&serde_json::to_string(&outcome).map_err(Error::from)?)
}

pub fn parse_order(text: &str) -> promise_core::Result<Order> {
    let order: Order = serde_json::from_str(text)?;
    order.validate()?;
    Ok(order)
}

/// One JSON document, or JSON lines.
fn parse_orders(text: &str) -> promise_core::Result<Vec<Order>> {
    if let Ok(one) = parse_order(text) {
        return Ok(vec![one]);
    }
    text.lines().filter(|l| !l.trim().is_empty()).map(parse_order).collect()
}

pub fn quote(a: QuoteArgs) -> CliResult<()> {
    let models = ModelSet::load(&a.models)?;
    let text = if a.order.trim_start().starts_with('{') {
        a.order.clone()
    } else {
        String::from_utf8(fsio::read(Path::new(&a.order))?).map_err(|e| Error::InvalidInput(format!("{}: {e}", a.order)))?
    };
    let orders = parse_orders(&text)?;
    if orders.is_empty() {
        return Err(CliError::Usage("no order given".into()));
    }
    let mut lines = Vec::with_capacity(orders.len());
    for o in &orders {
        lines.push(serde_json::to_string(&models.quote(o)?).map_err(Error::from)?);
    }
    stdout_line(&lines.join("\n"))
}

pub fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let models = ModelSet::load(&a.models)?;
    let (scenario, sim) = load_sim(&a.data)?;
    let (report, skipped) = evalkit::evaluate_models(&models, &scenario, &sim, a.window)?;
    report.write(&a.out)?;
    if skipped > 0 {
        eprintln!("skipped {skipped} orders whose legs have no model");
    }
    stdout_line(report.to_markdown().trim_end())
}
