use std::path::PathBuf;

use clap::Args;
use flipkit::interchange::read_json;
use serde::de::DeserializeOwned;

use super::OutArgs;
use crate::ctx::Run;
use crate::error::CliResult;
use crate::outputs::{AttentionReport, ClampReport, MetricsReport, PatchReport};
use crate::table::Table;
use crate::tables;

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// metrics.json from `metrics`.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// attention.json from `grounding-attn`.
    #[arg(long)]
    attention: Option<PathBuf>,
    /// patch.json from `flipbank patch`.
    #[arg(long)]
    patch: Option<PathBuf>,
    /// clamp_eval.json from `flipbank clamp-eval`; repeat for several methods.
    #[arg(long)]
    clamp_eval: Vec<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

fn load<T: DeserializeOwned>(run: &mut Run, path: Option<&PathBuf>) -> CliResult<Option<T>> {
    path.map(|p| Ok(read_json(run.input(p)?)?)).transpose()
}

fn section(md: &mut String, title: &str, t: &Table) {
    md.push_str(&format!("## {title}\n\n"));
    md.push_str(&t.markdown());
    md.push('\n');
}

pub fn report(a: ReportArgs) -> CliResult<()> {
    let mut run = Run::new("report", &a.out.out_dir)?;
    let metrics: Option<MetricsReport> = load(&mut run, a.metrics.as_ref())?;
    let attention: Option<AttentionReport> = load(&mut run, a.attention.as_ref())?;
    let patch: Option<PatchReport> = load(&mut run, a.patch.as_ref())?;
    let mut clamps: Vec<ClampReport> = Vec::new();
    for p in &a.clamp_eval {
        clamps.push(read_json(run.input(p)?)?);
    }

    let behavior = tables::behavior(metrics.as_ref());
    let grounding = tables::grounding(metrics.as_ref());
    let attn = tables::attention(attention.as_ref());
    let patch_t = tables::patch(patch.as_ref());
    let mitigation = tables::mitigation(&clamps);

    let mut md = String::from("# Paraphrase sensitivity report\n\n");
    section(&mut md, "Accuracy and flip rates", &behavior);
    section(&mut md, "Visual grounding", &grounding);
    section(&mut md, "Attention overlap", &attn);
    section(&mut md, "Feature patching", &patch_t);
    section(&mut md, "Mitigation", &mitigation);

    run.write_text("report.md", &md)?;
    run.write_csv("behavior.csv", &behavior)?;
    run.write_csv("grounding.csv", &grounding)?;
    run.write_csv("attention.csv", &attn)?;
    run.write_csv("patch.csv", &patch_t)?;
    run.write_csv("mitigation.csv", &mitigation)?;
    run.finish()
}
