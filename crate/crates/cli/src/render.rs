//! Text, CSV and JSON renderings. Text tables use six decimals; CSV and JSON
//! carry full precision.

use std::io::{self, Write};

use covadj::simulation::{RandomizationScheme, Scenario, StudyReport, TrueEffect};
use covadj::MethodOutcome;
use serde::Serialize;

use crate::OutputFormat;

#[derive(Debug, Serialize)]
struct AnalysisRow {
    method: String,
    label: String,
    rd: Option<f64>,
    se: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    p_value: Option<f64>,
    fallback_steps: Option<usize>,
    error: Option<String>,
}

fn rows(outcomes: &[MethodOutcome]) -> Vec<AnalysisRow> {
    outcomes
        .iter()
        .map(|o| match o {
            Ok(s) => AnalysisRow {
                method: s.method.to_string(),
                label: s.method.label(),
                rd: Some(s.rd),
                se: Some(s.se),
                ci_low: Some(s.ci_low),
                ci_high: Some(s.ci_high),
                p_value: Some(s.p_value),
                fallback_steps: Some(s.fallback_steps),
                error: None,
            },
            Err(f) => AnalysisRow {
                method: f.method.to_string(),
                label: f.method.label(),
                rd: None,
                se: None,
                ci_low: None,
                ci_high: None,
                p_value: None,
                fallback_steps: None,
                error: Some(f.message.clone()),
            },
        })
        .collect()
}

fn csv_rows<W: Write, T: Serialize>(w: &mut W, rows: &[T]) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(io::Error::other)?;
    }
    out.flush()
}

fn json<W: Write, T: Serialize + ?Sized>(w: &mut W, value: &T) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(io::Error::other)?;
    writeln!(w)
}

pub fn analysis<W: Write>(w: &mut W, format: OutputFormat, outcomes: &[MethodOutcome]) -> io::Result<()> {
    let rows = rows(outcomes);
    match format {
        OutputFormat::Csv => csv_rows(w, &rows),
        OutputFormat::Json => json(w, &rows),
        OutputFormat::Text => {
            writeln!(
                w,
                "{:<16} {:<24} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8}",
                "method", "label", "rd", "se", "ci_low", "ci_high", "p_value", "dropped"
            )?;
            for r in &rows {
                match (&r.error, r.rd, r.se, r.ci_low, r.ci_high, r.p_value, r.fallback_steps) {
                    (None, Some(rd), Some(se), Some(lo), Some(hi), Some(p), Some(k)) => writeln!(
                        w,
                        "{:<16} {:<24} {rd:>10.6} {se:>10.6} {lo:>10.6} {hi:>10.6} {p:>10.6} {k:>8}",
                        r.method, r.label
                    )?,
                    _ => writeln!(
                        w,
                        "{:<16} {:<24} failed: {}",
                        r.method,
                        r.label,
                        r.error.as_deref().unwrap_or("unknown error")
                    )?,
                }
            }
            Ok(())
        }
    }
}

fn scheme_text(s: &RandomizationScheme) -> String {
    match s {
        RandomizationScheme::Stratified { ratio } => format!("stratified {}:{}", ratio[0], ratio[1]),
        RandomizationScheme::Simple { p_treat } => format!("simple p={p_treat}"),
    }
}

pub fn study<W: Write>(w: &mut W, format: OutputFormat, report: &StudyReport) -> io::Result<()> {
    match format {
        OutputFormat::Json => json(w, report),
        OutputFormat::Csv => csv_rows(w, &report.metrics.methods),
        OutputFormat::Text => {
            let c = &report.config;
            let label = if c.scenario.label.is_empty() { "scenario" } else { &c.scenario.label };
            writeln!(w, "{label}")?;
            writeln!(
                w,
                "n = {}, {}, {} replications, seed {}, alpha {}",
                c.n_total,
                scheme_text(&c.scheme),
                c.replications,
                c.master_seed,
                c.alpha
            )?;
            let e = &report.true_effect;
            writeln!(w, "true pi0 {:.6}, pi1 {:.6}, rd {:.6}", e.pi0, e.pi1, e.rd)?;
            writeln!(w)?;
            writeln!(
                w,
                "{:<16} {:<24} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
                "method", "label", "mean_se", "coverage", "rejection", "mean_rd", "sd_rd", "nonconv", "fallback"
            )?;
            for m in &report.metrics.methods {
                writeln!(
                    w,
                    "{:<16} {:<24} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
                    m.method.to_string(),
                    m.label,
                    m.mean_se,
                    m.coverage,
                    m.rejection_rate,
                    m.mean_rd,
                    m.empirical_sd_rd,
                    m.nonconvergence_rate,
                    m.fallback_rate
                )?;
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct TrueEffectRow<'a> {
    label: &'a str,
    beta: [f64; 7],
    pi0: f64,
    pi1: f64,
    rd: f64,
}

pub fn true_effect<W: Write>(
    w: &mut W,
    format: OutputFormat,
    scenario: &Scenario,
    effect: &TrueEffect,
) -> io::Result<()> {
    let row = TrueEffectRow {
        label: &scenario.label,
        beta: scenario.beta,
        pi0: effect.pi0,
        pi1: effect.pi1,
        rd: effect.rd,
    };
    match format {
        OutputFormat::Json => json(w, &row),
        OutputFormat::Csv => {
            writeln!(w, "pi0,pi1,rd")?;
            writeln!(w, "{:?},{:?},{:?}", row.pi0, row.pi1, row.rd)
        }
        OutputFormat::Text => {
            writeln!(w, "{}", row.label)?;
            writeln!(w, "pi0 {:.6}", row.pi0)?;
            writeln!(w, "pi1 {:.6}", row.pi1)?;
            writeln!(w, "rd  {:.6}", row.rd)
        }
    }
}
