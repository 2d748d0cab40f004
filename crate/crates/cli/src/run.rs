//! Non-interactive execution of the whole workflow.

use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use covbal_service::report::{build_report, render_markdown};
use covbal_service::session::{EffectRequest, Session};
use serde_json::json;

use crate::config::{MethodSelection, RunConfig};

/// Exit status when every step completed but no weights met the balance
/// threshold, so the effect is associational only.
const EXIT_ASSOCIATIONAL: u8 = 2;

pub fn run(config_path: &Path, data_path: &Path, out: &Path) -> Result<ExitCode> {
    let cfg = RunConfig::load(config_path)?;
    let bytes = std::fs::read(data_path).with_context(|| format!("reading {}", data_path.display()))?;
    let id = data_path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());

    let mut s = Session::from_csv(id, &bytes, &cfg.parse_options()?).context("data")?;
    s.set_roles(cfg.roles()?).context("roles")?;
    s.set_estimand(cfg.analysis.estimand);
    if !cfg.trim.is_empty() {
        let t = s.trim(&cfg.trim, false).context("trim")?;
        eprintln!("trimmed {} rows ({} treated, {} control)", t.removed, t.removed_treated, t.removed_control);
    }

    let job = s.weights_job(cfg.estimators.clone()).context("weights")?;
    let rev = job.revision;
    let stage = job.run(None).context("weights")?;
    for (m, e) in &stage.run.failures {
        eprintln!("warning: {m} failed: {e}");
    }
    s.install_weights(rev, stage)?;

    match &cfg.analysis.method {
        MethodSelection::Named(m) => {
            s.choose_method(Some(m)).context("method")?;
        }
        MethodSelection::Auto => {
            let rec = &s.weights_stage()?.recommendation;
            // with nothing feasible, carry on with the best-ranked fit; the effect gets stamped
            let pick = rec.recommended.clone().or_else(|| rec.ranking.first().map(|r| r.method.clone()));
            let pick = pick.ok_or_else(|| anyhow!("method: no weighting method could be fitted"))?;
            s.choose_method(Some(&pick)).context("method")?;
        }
    }

    let req = EffectRequest { model: cfg.analysis.effect_model, covariate_subset: cfg.analysis.covariate_subset.clone() };
    s.estimate_effect(&req).context("effect")?;

    if cfg.sensitivity.enabled {
        let job = s.sensitivity_job(cfg.sensitivity.config.clone()).context("sensitivity")?;
        let rev = job.revision;
        let result = job.run(None).context("sensitivity")?;
        s.install_sensitivity(rev, result)?;
    }

    let report = build_report(&s)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let write = |name: &str, body: &str| {
        let p = out.join(name);
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
    };
    write("report.json", &serde_json::to_string_pretty(&report)?)?;
    write("report.md", &render_markdown(&report))?;
    write("weights.csv", &s.weights_csv()?)?;
    write("balance.csv", &s.balance_csv()?)?;
    match &s.sensitivity {
        Some(r) => {
            write("sensitivity.json", &serde_json::to_string_pretty(r)?)?;
            write("sensitivity_grid.csv", &grid_csv(r))?;
        }
        None => write(
            "sensitivity.json",
            &serde_json::to_string_pretty(&json!({ "skipped": true, "reason": "disabled in configuration" }))?,
        )?,
    }

    let e = &report.effect.estimate;
    println!(
        "{} ({}): {:.4} (95% CI {:.4} to {:.4}), p = {:.4}",
        e.estimand, e.method_id, e.estimate, e.ci_low, e.ci_high, e.p_value
    );
    Ok(match &report.effect.stamp {
        Some(stamp) => {
            eprintln!("note: {stamp}");
            ExitCode::from(EXIT_ASSOCIATIONAL)
        }
        None => ExitCode::SUCCESS,
    })
}

/// Long-format grid for external contour plotting.
fn grid_csv(r: &covbal_core::SensitivityResult) -> String {
    let g = &r.grid;
    let mut out = String::from("es_t,rho_y,effect,p_value\n");
    for (i, rho) in g.rho_y.iter().enumerate() {
        for (j, es) in g.es_t.iter().enumerate() {
            let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            let _ = writeln!(out, "{es},{rho},{},{}", cell(g.effect[i][j]), cell(g.p_value[i][j]));
        }
    }
    out
}
