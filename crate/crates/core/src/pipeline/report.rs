use std::fmt::Write as _;
use std::path::Path;

use super::artifact as a;
use super::io::read_json;
use super::stages::{read_models, ImpactSummary, StabilityArtifact, VarSummary};
use super::{Manifest, PipelineError};
use crate::flow::{Vec8, COMPONENT_NAMES, DIM};
use crate::pca_modes::ModeBasis;
use crate::var_model::significance_filter;

fn row(out: &mut String, head: &str, v: &Vec8<f64>) {
    let _ = write!(out, "{head:<14}");
    for x in v {
        let _ = write!(out, "{x:>9.4}");
    }
    out.push('\n');
}

fn header(out: &mut String, head: &str, names: &[String]) {
    let _ = write!(out, "{head:<14}");
    for n in names {
        let _ = write!(out, "{n:>9}");
    }
    out.push('\n');
}

/// Plain-text summary of whatever artifacts exist in `dir`.
pub fn emit_report(dir: &Path) -> Result<String, PipelineError> {
    let mut out = String::new();
    let significance = Manifest::load(dir)?
        .and_then(|m| m.config.pointer("/var/significance").and_then(|v| v.as_f64()))
        .unwrap_or(0.05);

    let basis: Option<ModeBasis<f64>> = match dir.join(a::BASIS) {
        p if p.exists() => Some(read_json(&p)?),
        _ => None,
    };
    let names = basis.as_ref().map(|b| b.mode_names()).unwrap_or_default();
    let flow_names: Vec<String> = COMPONENT_NAMES.iter().map(|s| s.to_string()).collect();

    if let Some(b) = &basis {
        let total: f64 = b.eigvals.iter().sum();
        out.push_str("== modes ==\n");
        let _ = writeln!(out, "{:<6}{:>6}{:>12}{:>9}", "mode", "sym", "lambda", "share");
        for (i, l) in b.eigvals.iter().enumerate() {
            let _ = writeln!(out, "{:<6}{:>6}{:>12.5}{:>9.4}", names[i], b.labels[i].tag(), l, l / total);
        }
        let _ = writeln!(out, "sum lambda = {total:.6}");
        header(&mut out, "loading", &flow_names);
        for (i, u) in b.eigvecs.iter().enumerate() {
            row(&mut out, &names[i], u);
        }
        out.push('\n');
    }

    let var_path = dir.join(a::VAR);
    if var_path.exists() {
        let s: VarSummary = read_json(&var_path)?;
        let _ = writeln!(
            out,
            "== VAR fit ({} calibration days, {} evaluation days) ==",
            s.train_days.len(),
            s.test_days.len()
        );
        for (title, pick, cols) in [
            ("R2 mode space, in sample", 0, &names),
            ("R2 mode space, out of sample", 1, &names),
            ("R2 flow space, in sample", 2, &flow_names),
            ("R2 flow space, out of sample", 3, &flow_names),
        ] {
            let rows: Vec<(usize, Vec8<f64>)> = s
                .scores
                .iter()
                .filter_map(|t| {
                    let v = match pick {
                        0 => Some(t.mode_in),
                        1 => t.mode_out,
                        2 => Some(t.original_in),
                        _ => t.original_out,
                    };
                    v.map(|v| (t.p, v))
                })
                .collect();
            if rows.is_empty() {
                continue;
            }
            let _ = writeln!(out, "-- {title} --");
            header(&mut out, "p", cols);
            for (p, v) in rows {
                row(&mut out, &p.to_string(), &v);
            }
        }
        out.push('\n');
    }

    let models_path = dir.join(a::MODELS);
    if models_path.exists() {
        let models = read_models(&models_path)?;
        if let Some(m) = models.iter().find(|m| m.p == 1).or(models.first()) {
            let shown = significance_filter(&m.phis[0], &m.p_values[0], significance);
            let labels: Vec<String> = if names.len() == DIM {
                names.clone()
            } else {
                (1..=DIM).map(|i| i.to_string()).collect()
            };
            let _ = writeln!(
                out,
                "== Phi_1 of the p = {} model (entries with p-value > {significance} blanked) ==",
                m.p
            );
            header(&mut out, "", &labels);
            for i in 0..DIM {
                let _ = write!(out, "{:<14}", labels[i]);
                for j in 0..DIM {
                    let x = shown[(i, j)];
                    if x == 0.0 {
                        let _ = write!(out, "{:>9}", ".");
                    } else {
                        let _ = write!(out, "{x:>9.4}");
                    }
                }
                out.push('\n');
            }
            let _ = writeln!(out, "spectral radius of the companion matrix: {:.4}", m.spectral_radius);
            out.push('\n');
        }
    }

    let stab_path = dir.join(a::STABILITY);
    if stab_path.exists() {
        let s: StabilityArtifact = read_json(&stab_path)?;
        out.push_str("== unit-root gamma ==\n");
        let _ = writeln!(out, "{:<4}{:>12}{:>12}{:>14}", "p", "gamma_1", "gamma_2", "companion");
        for e in &s.report.per_lag {
            let g = |i: usize| e.roots.get(i).map_or("-".to_string(), |r| format!("{:.5}", r.gamma));
            let _ = writeln!(out, "{:<4}{:>12}{:>12}{:>14.5}", e.p, g(0), g(1), e.companion_radius);
        }
        for (i, b) in s.report.branches.iter().enumerate() {
            match &b.fit {
                Some(f) => {
                    let _ = writeln!(
                        out,
                        "branch {}: gamma(p) = {:.4} - {:.4}/p, rms {:.2e}",
                        i + 1,
                        f.intercept,
                        f.c,
                        f.rms
                    );
                }
                None => {
                    let _ = writeln!(out, "branch {}: too few roots to fit", i + 1);
                }
            }
            if !b.ambiguous.is_empty() {
                let _ = writeln!(out, "  ambiguous continuation at p = {:?}", b.ambiguous);
            }
        }
        if let Some(d) = s.directions.iter().find(|d| d.p == s.report.per_lag.last().map_or(0, |e| e.p)) {
            let _ = writeln!(out, "dominant direction at p = {} ({}):", d.p, d.label.tag());
            header(&mut out, "", &flow_names);
            row(&mut out, "", &d.flow);
        }
        out.push('\n');
    }

    let imp_path = dir.join(a::IMPACT_SUMMARY);
    if imp_path.exists() {
        let s: ImpactSummary = read_json(&imp_path)?;
        out.push_str("== simulated metaorder impact ==\n");
        let _ = writeln!(
            out,
            "model p = {}, N = {}, q = {:.4}, k = {}, horizon = {}, paths = {}",
            s.lag, s.n, s.q, s.k, s.horizon, s.paths
        );
        match (s.peak, s.plateau, s.reversion_fraction) {
            (Some(pk), Some(pl), Some(r)) => {
                let _ = writeln!(
                    out,
                    "peak {pk:.4e}, plateau {pl:.4e}, reversion fraction {r:.4}, plateau/peak {:.4}",
                    pl / pk
                );
            }
            _ => out.push_str("impact path has no peak\n"),
        }
    }

    if out.is_empty() {
        out.push_str("no artifacts\n");
    }
    Ok(out)
}
