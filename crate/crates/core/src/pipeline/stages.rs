use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::artifact as a;
use super::io::{read_json, read_records, read_tprime, write_json, write_records, write_text, write_tprime};
use super::{PipelineError, Runner, Stage};
use crate::coarse_grain::{choose_bin_size, detect_with_report, return_autocorrelation, BinChoice, DetectionOptions, DetectionReport, PriceChangeRecord};
use crate::flow::{Vec8, COMPONENT_NAMES, EX_A};
use crate::impact::{
    aggregate_imbalance_impact, fit_sigmoid, simulate_metaorder, Background, ImbalanceCurve, ImpactError, ImpactMap,
    ImpactScaling, SimulationOptions,
};
use crate::ingest::{read_tape_file, validate_tape, write_tape_file, ValidationReport};
use crate::pca_modes::{eigendecompose, estimate_covariance, symmetrize_from_covariance, ModeBasis, PcaError, TrainingSpan};
use crate::preprocess::{deseasonalize, preprocess as run_preprocess, PreprocessError, PreprocessSidecar, TransformedVector};
use crate::stability::{dominant_directions, stability_report, Direction, SearchOptions, StabilityReport};
use crate::synth::generate_tape;
use crate::var_model::{fit_var, residual_diagnostics, score_table, ResidualDiagnostics, ScoreTable, VarError, VarModel, VarOptions};

fn preprocess_err(e: PreprocessError) -> PipelineError {
    match e {
        PreprocessError::FitDiverged | PreprocessError::ZeroVariance { .. } => PipelineError::numerical(Stage::Preprocess, e),
        _ => PipelineError::data(Stage::Preprocess, e),
    }
}

fn pca_err(e: PcaError) -> PipelineError {
    match e {
        PcaError::InsufficientData { .. } => PipelineError::data(Stage::Modes, e),
        _ => PipelineError::numerical(Stage::Modes, e),
    }
}

fn var_err(e: VarError) -> PipelineError {
    match e {
        VarError::InsufficientData { .. } | VarError::ShortHistory { .. } => PipelineError::data(Stage::Var, e),
        _ => PipelineError::numerical(Stage::Var, e),
    }
}

fn impact_err(e: ImpactError) -> PipelineError {
    match e {
        ImpactError::InsufficientData { .. }
        | ImpactError::InsufficientCurves
        | ImpactError::ShortBackground { .. }
        | ImpactError::MissingDay(_) => PipelineError::data(Stage::Impact, e),
        _ => PipelineError::numerical(Stage::Impact, e),
    }
}

fn params<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("parameters serialise")
}

pub(super) fn synth(r: &mut Runner) -> Result<(), PipelineError> {
    let cfg = r.cfg.synth_config();
    r.execute(Stage::Synth, &[], &params(&cfg), &[a::TAPE], |r| {
        let tape = generate_tape(&cfg).map_err(|e| PipelineError::Config(format!("synth: {e}")))?;
        write_tape_file(&r.path(a::TAPE), &tape).map_err(|e| PipelineError::data(Stage::Synth, e))
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoarseArtifact {
    pub validation: ValidationReport,
    pub detection: DetectionReport,
    pub records: usize,
    pub return_acf: Vec<f64>,
    pub bin_choice: Option<BinChoice>,
}

pub(super) fn coarse(r: &mut Runner) -> Result<(), PipelineError> {
    let tape_path = match (&r.cfg.tape, r.cfg.stages.synth) {
        (Some(p), false) if !r.overrides.contains_key(a::TAPE) => p.clone(),
        _ => r.path(a::TAPE),
    };
    let p = json!({ "coarse": r.cfg.coarse, "session": r.cfg.session });
    let c = r.cfg.coarse.clone();
    r.execute(Stage::Coarse, &[(a::TAPE, tape_path.clone())], &p, &[a::RECORDS, a::COARSE], |r| {
        let tape = read_tape_file(&tape_path).map_err(|e| PipelineError::data(Stage::Coarse, e))?;
        let validation = validate_tape(&tape);
        if !validation.is_clean() {
            log::warn!("tape has {} validation violations", validation.violations.len());
        }
        let opts = DetectionOptions {
            min_spread: c.min_spread,
            ..Default::default()
        };
        let (records, detection) = detect_with_report::<f64>(&tape, &opts).map_err(|e| PipelineError::data(Stage::Coarse, e))?;
        let acf = return_autocorrelation(&records, c.max_lag).ok();
        let bin_choice = acf.as_ref().map(|acf| choose_bin_size(acf, c.bin_threshold));
        write_records(&r.path(a::RECORDS), &records)?;
        write_json(
            &r.path(a::COARSE),
            &CoarseArtifact {
                validation,
                detection,
                records: records.len(),
                return_acf: acf.unwrap_or_default(),
                bin_choice,
            },
        )
    })
}

pub(super) fn preprocess(r: &mut Runner) -> Result<(), PipelineError> {
    let p = json!({ "preprocess": r.cfg.preprocess, "session": r.cfg.session });
    let inputs = [(a::RECORDS, r.path(a::RECORDS))];
    r.execute(Stage::Preprocess, &inputs, &p, &[a::BINNED, a::TPRIME, a::SIDECAR], |r| {
        let raw = read_records(&r.path(a::RECORDS))?;
        let out = run_preprocess(&raw, &r.cfg.session.clock(), &r.cfg.preprocess).map_err(preprocess_err)?;
        write_records(&r.path(a::BINNED), &out.binned)?;
        write_tprime(&r.path(a::TPRIME), &out.vectors)?;
        write_json(&r.path(a::SIDECAR), &out.sidecar)
    })
}

/// Normalised days split into calibration and evaluation sets.
struct Split {
    train: Vec<u32>,
    test: Vec<u32>,
}

fn split_days(r: &Runner, vectors: &[TransformedVector<f64>]) -> Result<Split, PipelineError> {
    let mut days: Vec<u32> = vectors.iter().map(|v| v.day).collect();
    days.dedup();
    days.sort_unstable();
    days.dedup();
    let (train, _) = r.cfg.split(days.len())?;
    Ok(Split {
        train: days[..train].to_vec(),
        test: days[train..].to_vec(),
    })
}

fn by_day(vectors: &[Vec8<f64>], days: &[u32], wanted: &[u32]) -> Vec<Vec<Vec8<f64>>> {
    let mut map: BTreeMap<u32, Vec<Vec8<f64>>> = wanted.iter().map(|&d| (d, Vec::new())).collect();
    for (v, d) in vectors.iter().zip(days) {
        if let Some(seg) = map.get_mut(d) {
            seg.push(*v);
        }
    }
    map.into_values().collect()
}

pub(super) fn modes(r: &mut Runner) -> Result<(), PipelineError> {
    let p = json!({ "modes": r.cfg.modes, "split": [r.cfg.var.train_days, r.cfg.var.test_days] });
    let inputs = [(a::TPRIME, r.path(a::TPRIME))];
    r.execute(Stage::Modes, &inputs, &p, &[a::BASIS, a::MODES], |r| {
        let vectors = read_tprime(&r.path(a::TPRIME))?;
        let split = split_days(r, &vectors)?;
        let train: Vec<Vec8<f64>> = vectors
            .iter()
            .filter(|v| split.train.binary_search(&v.day).is_ok())
            .map(|v| v.values)
            .collect();
        let cov = estimate_covariance(&train).map_err(pca_err)?;
        let mut basis = if r.cfg.modes.symmetrize {
            symmetrize_from_covariance(&cov)
        } else {
            eigendecompose(&cov)
        }
        .map_err(pca_err)?;
        let span = TrainingSpan {
            first_day: split.train[0],
            last_day: *split.train.last().expect("non-empty split"),
            vectors: train.len(),
        };
        basis.fit_projection(&train, Some(span)).map_err(pca_err)?;
        write_json(&r.path(a::BASIS), &basis)?;
        let mut csv = String::from("mode,label,eigenvalue");
        for n in COMPONENT_NAMES {
            let _ = write!(csv, ",{n}");
        }
        csv.push('\n');
        for (i, name) in basis.mode_names().iter().enumerate() {
            let _ = write!(csv, "{},{},{}", i + 1, name, basis.eigvals[i]);
            for x in basis.eigvecs[i] {
                let _ = write!(csv, ",{x}");
            }
            csv.push('\n');
        }
        write_text(&r.path(a::MODES), &csv)
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VarSummary {
    pub train_days: Vec<u32>,
    pub test_days: Vec<u32>,
    pub scores: Vec<ScoreTable<f64>>,
    /// Residual diagnostics of each fitted model, in lag order.
    pub residuals: Vec<ResidualDiagnostics>,
}

pub(super) fn var(r: &mut Runner) -> Result<(), PipelineError> {
    let p = params(&r.cfg.var);
    let inputs = [(a::TPRIME, r.path(a::TPRIME)), (a::BASIS, r.path(a::BASIS))];
    r.execute(Stage::Var, &inputs, &p, &[a::MODELS, a::SCORES, a::VAR], |r| {
        let vectors = read_tprime(&r.path(a::TPRIME))?;
        let basis: ModeBasis<f64> = read_json(&r.path(a::BASIS))?;
        let split = split_days(r, &vectors)?;
        let ys: Vec<Vec8<f64>> = vectors.iter().map(|v| basis.project(&v.values)).collect();
        let days: Vec<u32> = vectors.iter().map(|v| v.day).collect();
        let train = by_day(&ys, &days, &split.train);
        let test = by_day(&ys, &days, &split.test);
        let train_refs: Vec<&[Vec8<f64>]> = train.iter().map(|s| s.as_slice()).collect();
        let test_refs: Vec<&[Vec8<f64>]> = test.iter().map(|s| s.as_slice()).collect();
        let opts = VarOptions { robust: r.cfg.var.robust };
        let mut models = Vec::new();
        let mut scores = Vec::new();
        let mut residuals = Vec::new();
        for p in 1..=r.cfg.var.max_lags {
            let m = fit_var(&train_refs, p, &basis.labels, opts).map_err(var_err)?;
            scores.push(score_table(&m, &train_refs, &test_refs, &basis));
            residuals.push(residual_diagnostics(&m, &train_refs, r.cfg.var.residual_lags));
            models.push(m);
        }
        write_json(&r.path(a::MODELS), &models)?;
        let mut csv = String::from("p,space,sample,index,name,r2\n");
        let names = basis.mode_names();
        for s in &scores {
            let rows: [(&str, &str, Option<&Vec8<f64>>); 4] = [
                ("mode", "in", Some(&s.mode_in)),
                ("mode", "out", s.mode_out.as_ref()),
                ("original", "in", Some(&s.original_in)),
                ("original", "out", s.original_out.as_ref()),
            ];
            for (space, sample, v) in rows {
                let Some(v) = v else { continue };
                for (i, x) in v.iter().enumerate() {
                    let name = if space == "mode" { names[i].as_str() } else { COMPONENT_NAMES[i] };
                    let _ = writeln!(csv, "{},{space},{sample},{},{name},{x}", s.p, i + 1);
                }
            }
        }
        write_text(&r.path(a::SCORES), &csv)?;
        write_json(
            &r.path(a::VAR),
            &VarSummary {
                train_days: split.train,
                test_days: split.test,
                scores,
                residuals,
            },
        )
    })
}

/// Reads either a list of models or a single model.
pub(crate) fn read_models(path: &std::path::Path) -> Result<Vec<VarModel<f64>>, PipelineError> {
    match read_json::<Vec<VarModel<f64>>>(path) {
        Ok(v) => Ok(v),
        Err(_) => read_json::<VarModel<f64>>(path).map(|m| vec![m]),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityArtifact {
    pub report: StabilityReport<f64>,
    pub directions: Vec<Direction<f64>>,
}

pub(super) fn stability(r: &mut Runner) -> Result<(), PipelineError> {
    let p = params(&r.cfg.stability);
    let inputs = [(a::MODELS, r.path(a::MODELS)), (a::BASIS, r.path(a::BASIS))];
    r.execute(Stage::Stability, &inputs, &p, &[a::STABILITY, a::GAMMA], |r| {
        let cfg = &r.cfg.stability;
        let models: Vec<VarModel<f64>> = read_models(&r.path(a::MODELS))?
            .into_iter()
            .filter(|m| m.p <= cfg.max_lags)
            .collect();
        if models.is_empty() {
            return Err(PipelineError::data(Stage::Stability, "no model with a lag order in range"));
        }
        let basis: ModeBasis<f64> = read_json(&r.path(a::BASIS))?;
        let opts = SearchOptions {
            lo: 0.0,
            hi: cfg.gamma_max,
            grid: cfg.grid,
        };
        let report = stability_report(&models, opts, cfg.branches);
        let directions = dominant_directions(&report, &basis);
        let mut csv = String::from("p,rank,gamma,multiplicity,residual,companion_gap,source\n");
        for e in &report.per_lag {
            for (i, root) in e.roots.iter().enumerate() {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{:?}",
                    e.p,
                    i + 1,
                    root.gamma,
                    root.multiplicity,
                    root.residual,
                    root.companion_gap,
                    root.source
                );
            }
        }
        write_text(&r.path(a::GAMMA), &csv)?;
        write_json(&r.path(a::STABILITY), &StabilityArtifact { report, directions })
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImpactSummary {
    pub lag: usize,
    pub n: usize,
    pub q: f64,
    pub k: usize,
    pub horizon: usize,
    pub paths: usize,
    pub peak: Option<f64>,
    pub plateau: Option<f64>,
    pub reversion_fraction: Option<f64>,
    pub peak_per_unit: Option<f64>,
}

pub(super) fn impact(r: &mut Runner) -> Result<(), PipelineError> {
    let p = json!({ "impact": r.cfg.impact, "session": r.cfg.session, "bin": r.cfg.preprocess.bin });
    let inputs = [
        (a::RECORDS, r.path(a::RECORDS)),
        (a::BINNED, r.path(a::BINNED)),
        (a::SIDECAR, r.path(a::SIDECAR)),
        (a::BASIS, r.path(a::BASIS)),
        (a::MODELS, r.path(a::MODELS)),
    ];
    let outputs = [a::CURVES, a::SCALING, a::IMPACT, a::IMPACT_SUMMARY];
    r.execute(Stage::Impact, &inputs, &p, &outputs, |r| {
        let cfg = &r.cfg.impact;
        let raw = read_records(&r.path(a::RECORDS))?;
        let sidecar: PreprocessSidecar<f64> = read_json(&r.path(a::SIDECAR))?;
        let seasonal = match &sidecar.profile {
            Some(fit) => deseasonalize(&raw, fit, &r.cfg.session.clock()).map_err(preprocess_err)?,
            None => raw,
        };
        let curves: Vec<ImbalanceCurve<f64>> = cfg
            .curve_sizes
            .iter()
            .map(|&n| aggregate_imbalance_impact(&seasonal, n, cfg.buckets))
            .collect::<Result<_, _>>()
            .map_err(impact_err)?;
        let scaling: ImpactScaling<f64> = fit_sigmoid(&curves).map_err(impact_err)?;

        let models = read_models(&r.path(a::MODELS))?;
        let lag = cfg.lag.unwrap_or_else(|| models.iter().map(|m| m.p).max().unwrap_or(1));
        let model = models
            .iter()
            .find(|m| m.p == lag)
            .ok_or_else(|| PipelineError::Config(format!("impact.lag = {lag} but no such model was fitted")))?;
        let basis: ModeBasis<f64> = read_json(&r.path(a::BASIS))?;
        let binned = read_records(&r.path(a::BINNED))?;
        let background = backgrounds(&binned, &sidecar);
        let mean_ex_a = {
            let v: Vec<f64> = background.iter().flat_map(|b| b.vectors.iter().map(|x| x[EX_A])).collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        let n = cfg.n.unwrap_or(r.cfg.preprocess.bin);
        let opts = SimulationOptions {
            q: cfg.q.unwrap_or(0.1 * mean_ex_a),
            k: cfg.k,
            horizon: cfg.horizon,
            side: cfg.side,
            stride: cfg.stride.unwrap_or(cfg.horizon + 1),
            min_paths: cfg.min_paths,
            max_paths: None,
            suppress_same_side: true,
            full_suppression: cfg.full_suppression,
            mirror_background: false,
        };
        let map = ImpactMap::Sigmoid {
            scaling: scaling.clone(),
            n,
        };
        let curve = simulate_metaorder(model, &basis, &sidecar, &map, &background, &opts).map_err(impact_err)?;
        let rev = curve.reversion().ok();

        let mut csv = String::from("n,bucket,imbalance,response,count,stderr\n");
        for c in &curves {
            for (i, b) in c.buckets.iter().enumerate() {
                let _ = writeln!(csv, "{},{},{},{},{},{}", c.n, i, b.imbalance, b.response, b.count, b.stderr);
            }
        }
        write_text(&r.path(a::CURVES), &csv)?;
        write_json(&r.path(a::SCALING), &scaling)?;
        let mut csv = String::from("step,mean_impact,stderr\n");
        for (l, (m, s)) in curve.mean.iter().zip(&curve.stderr).enumerate() {
            let _ = writeln!(csv, "{l},{m},{s}");
        }
        write_text(&r.path(a::IMPACT), &csv)?;
        write_json(
            &r.path(a::IMPACT_SUMMARY),
            &ImpactSummary {
                lag,
                n,
                q: opts.q,
                k: opts.k,
                horizon: opts.horizon,
                paths: curve.paths,
                peak: rev.map(|v| v.peak),
                plateau: rev.map(|v| v.plateau),
                reversion_fraction: rev.map(|v| v.reversion_fraction),
                peak_per_unit: rev.map(|v| v.peak / opts.q),
            },
        )
    })
}

/// Binned flows of every day that has normalisation constants.
pub fn backgrounds(binned: &[PriceChangeRecord<f64>], sidecar: &PreprocessSidecar<f64>) -> Vec<Background<f64>> {
    let mut out: Vec<Background<f64>> = Vec::new();
    for rec in binned {
        if sidecar.normalization.for_day(rec.day).is_none() {
            continue;
        }
        match out.last_mut() {
            Some(b) if b.day == rec.day => b.vectors.push(rec.to_vector()),
            _ => out.push(Background {
                day: rec.day,
                vectors: vec![rec.to_vector()],
            }),
        }
    }
    out
}
