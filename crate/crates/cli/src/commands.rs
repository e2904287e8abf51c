//! The four subcommands: dataset generation, the two fitting sweeps, and
//! predictive-density evaluation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use varbayes::datagen::{GeneratedData, GeneratorSpec};
use varbayes::dataset::{format_value, Dataset};
use varbayes::ensemble::{map_structure, predictive_log_density, RefitConfig, StructurePosterior};
use varbayes::vbbss::{
    self, reconstruct_sources, signed_permutation_error, AlphaMode, BssConfig,
};
use varbayes::vbgmm::{self, GmmConfig};
use varbayes::{Result, VbError};

use crate::genspec::parse_generator_spec;
use crate::model_file::{load_model, save_model};

fn write_matrix_csv(
    path: &Path,
    prefix: &str,
    matrix: &nalgebra::DMatrix<f64>,
) -> Result<()> {
    let columns: Vec<String> = (0..matrix.ncols()).map(|j| format!("{prefix}{j}")).collect();
    Dataset::new(matrix.clone(), columns)?.write_csv(path)
}

pub struct GenArgs {
    pub spec: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub labels_out: Option<PathBuf>,
    pub sources_out: Option<PathBuf>,
    pub mixing_out: Option<PathBuf>,
    pub noise_out: Option<PathBuf>,
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| VbError::Parse(format!("cannot read {}: {e}", args.spec.display())))?;
    let spec = parse_generator_spec(&text, args.seed)?;
    let GeneratedData {
        dataset,
        labels,
        sources,
        mixing,
        noise_vars,
    } = spec.generate()?;
    dataset.write_csv(&args.out)?;
    log::info!(
        "wrote {} instances of dimension {} to {}",
        dataset.len(),
        dataset.dim(),
        args.out.display()
    );

    if let Some(path) = &args.labels_out {
        match &labels {
            Some(labels) => {
                let mut out = String::from("label\n");
                for l in labels {
                    let _ = writeln!(out, "{l}");
                }
                std::fs::write(path, out)?;
            }
            None => {
                return Err(VbError::InvalidParameter(
                    "--labels-out: this generator kind has no labels".into(),
                ))
            }
        }
    }
    if let Some(path) = &args.sources_out {
        match &sources {
            Some(s) => write_matrix_csv(path, "x", s)?,
            None => {
                return Err(VbError::InvalidParameter(
                    "--sources-out: this generator kind has no sources".into(),
                ))
            }
        }
    }
    if let Some(path) = &args.mixing_out {
        match &mixing {
            Some(a) => write_matrix_csv(path, "a", a)?,
            None => {
                return Err(VbError::InvalidParameter(
                    "--mixing-out: this generator kind has no mixing matrix".into(),
                ))
            }
        }
    }
    if let Some(path) = &args.noise_out {
        match &noise_vars {
            Some(v) => {
                let row = nalgebra::DMatrix::from_fn(1, v.len(), |_, j| v[j]);
                write_matrix_csv(path, "var", &row)?
            }
            None => {
                return Err(VbError::InvalidParameter(
                    "--noise-out: this generator kind has no noise variances".into(),
                ))
            }
        }
    }
    Ok(())
}

fn write_structure_posterior(
    path: &Path,
    k_max: usize,
    posterior: &StructurePosterior,
    warnings: &[(usize, String)],
) -> Result<()> {
    let mut out = String::from("m,status,free_energy,log_prior,log_posterior,posterior\n");
    for m in 1..=k_max {
        match posterior.entries.get(&m) {
            Some(e) => {
                let _ = writeln!(
                    out,
                    "{m},ok,{},{},{},{}",
                    format_value(e.free_energy),
                    format_value(e.log_prior),
                    format_value(e.log_posterior),
                    format_value(e.log_posterior.exp())
                );
            }
            None => {
                let _ = writeln!(out, "{m},failed,,,,");
            }
        }
    }
    std::fs::write(path, out)?;
    if !warnings.is_empty() {
        let mut w = String::new();
        for (m, msg) in warnings {
            let _ = writeln!(w, "m={m}: {msg}");
        }
        std::fs::write(path.with_file_name("warnings.txt"), w)?;
    }
    Ok(())
}

fn write_trace(path: &Path, history: &[(usize, f64, usize)]) -> Result<()> {
    let mut out = String::from("iteration,free_energy,alive_components\n");
    for &(iter, f, alive) in history {
        let _ = writeln!(out, "{iter},{},{alive}", format_value(f));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub struct FitGmmArgs {
    pub data: PathBuf,
    pub max_structures: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub prior_eps: f64,
}

pub fn cmd_fit_gmm(args: &FitGmmArgs) -> Result<()> {
    let data = Dataset::read_csv(&args.data)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let config = GmmConfig {
        seed: args.seed,
        tol: args.tol,
        max_iter: args.max_iter,
        prior_eps: args.prior_eps,
        ..GmmConfig::default()
    };
    let sweep = vbgmm::fit_all(&data, args.max_structures, &config)?;
    write_structure_posterior(
        &args.out_dir.join("structure_posterior.csv"),
        args.max_structures,
        &sweep.posterior,
        &sweep.warnings,
    )?;
    for (m, model) in &sweep.fits {
        write_trace(
            &args.out_dir.join(format!("free_energy_trace_m{m}.csv")),
            &model.report.history,
        )?;
    }
    let chosen = map_structure(&sweep.posterior)?;
    save_model(&sweep.fits[&chosen], &args.out_dir.join("model.txt"))?;
    println!("m={chosen}");
    Ok(())
}

pub struct FitBssArgs {
    pub data: Option<PathBuf>,
    pub max_structures: usize,
    pub out_dir: PathBuf,
    pub tol: f64,
    pub max_iter: usize,
    pub alpha_mode: AlphaMode,
    pub lambda_update: bool,
    pub noise_vars: Option<Vec<f64>>,
    pub sources: Option<PathBuf>,
    pub snr_sweep: bool,
    pub gen_spec: Option<PathBuf>,
    pub snr_list: Vec<f64>,
}

fn bss_config(args: &FitBssArgs, noise_vars: Option<&DVector<f64>>) -> BssConfig {
    BssConfig {
        tol: args.tol,
        max_iter: args.max_iter,
        alpha_mode: args.alpha_mode,
        update_lambdas: args.lambda_update,
        lambdas: noise_vars.map(|v| v.map(|x| 1.0 / x)),
        ..BssConfig::default()
    }
}

pub fn cmd_fit_bss(args: &FitBssArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)?;
    if args.snr_sweep {
        return snr_sweep(args);
    }
    let data_path = args.data.as_ref().ok_or_else(|| {
        VbError::InvalidParameter("--data is required unless --snr-sweep is used".into())
    })?;
    let data = Dataset::read_csv(data_path)?;
    let noise_vars = args
        .noise_vars
        .as_ref()
        .map(|v| DVector::from_column_slice(v));
    if let Some(nv) = &noise_vars {
        if nv.len() != data.dim() {
            return Err(VbError::DimensionMismatch(format!(
                "--noise-vars has {} entries for {} sensors",
                nv.len(),
                data.dim()
            )));
        }
    }
    let config = bss_config(args, noise_vars.as_ref());
    let sweep = vbbss::fit_all(&data, args.max_structures, &config)?;
    write_structure_posterior(
        &args.out_dir.join("structure_posterior.csv"),
        args.max_structures,
        &sweep.posterior,
        &sweep.warnings,
    )?;
    for (m, model) in &sweep.fits {
        write_trace(
            &args.out_dir.join(format!("free_energy_trace_m{m}.csv")),
            &model.report.history,
        )?;
    }
    let chosen = map_structure(&sweep.posterior)?;
    let best = &sweep.fits[&chosen];
    let reconstructed = reconstruct_sources(best, None)?;
    write_matrix_csv(
        &args.out_dir.join("sources_reconstructed.csv"),
        "x",
        &reconstructed,
    )?;

    if let Some(truth_path) = &args.sources {
        let truth = Dataset::read_csv(truth_path)?;
        if truth.len() != reconstructed.nrows() {
            return Err(VbError::DimensionMismatch(
                "ground-truth sources have a different number of instances".into(),
            ));
        }
        if truth.dim() == reconstructed.ncols() {
            let aligned = signed_permutation_error(&reconstructed, truth.values())?;
            let mut out = String::new();
            let _ = writeln!(
                out,
                "relative_error = {}",
                format_value(aligned.relative_error)
            );
            let _ = writeln!(
                out,
                "log10_relative_error = {}",
                format_value(aligned.relative_error.log10())
            );
            std::fs::write(args.out_dir.join("alignment_error.txt"), out)?;
        } else {
            log::warn!(
                "chosen m = {} differs from the {} true sources; skipping alignment",
                reconstructed.ncols(),
                truth.dim()
            );
        }
    }
    println!("m={chosen}");
    Ok(())
}

/// Regenerate the mixing scenario at each requested SNR, fit the true source
/// count, and report the aligned reconstruction error per SNR.
fn snr_sweep(args: &FitBssArgs) -> Result<()> {
    let spec_path = args.gen_spec.as_ref().ok_or_else(|| {
        VbError::InvalidParameter("--snr-sweep requires --gen-spec".into())
    })?;
    if args.snr_list.is_empty() {
        return Err(VbError::InvalidParameter(
            "--snr-sweep requires a nonempty --snr-list".into(),
        ));
    }
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| VbError::Parse(format!("cannot read {}: {e}", spec_path.display())))?;
    let spec = parse_generator_spec(&text, None)?;
    let GeneratorSpec::BssMix(base) = spec else {
        return Err(VbError::InvalidParameter(
            "--snr-sweep needs a bss-mix generator spec".into(),
        ));
    };

    let mut out = String::from("snr_db,relative_error,log10_relative_error\n");
    for &snr in &args.snr_list {
        let scenario = GeneratorSpec::BssMix(varbayes::datagen::BssMixSpec {
            snr_db: snr,
            ..base.clone()
        });
        let generated = scenario.generate()?;
        let truth = generated.sources.expect("bss-mix always has sources");
        let config = bss_config(args, generated.noise_vars.as_ref());
        let model = vbbss::fit(&generated.dataset, base.sources, &config)?;
        let reconstructed = reconstruct_sources(&model, None)?;
        let aligned = signed_permutation_error(&reconstructed, &truth)?;
        let _ = writeln!(
            out,
            "{snr},{},{}",
            format_value(aligned.relative_error),
            format_value(aligned.relative_error.log10())
        );
        log::info!("snr {snr} dB: aligned error {}", aligned.relative_error);
    }
    std::fs::write(args.out_dir.join("error_vs_snr.csv"), out)?;
    println!("snr-sweep complete");
    Ok(())
}

pub struct PredictArgs {
    pub model: PathBuf,
    pub query: PathBuf,
    pub out: PathBuf,
    pub fast: bool,
    pub tol: f64,
    pub max_iter: usize,
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let text = std::fs::read_to_string(&args.query)
        .map_err(|e| VbError::Parse(format!("cannot read {}: {e}", args.query.display())))?;
    if text.trim().is_empty() {
        std::fs::write(&args.out, "")?;
        return Ok(());
    }
    let query = Dataset::from_csv_str(&text)?;
    if query.dim() != model.data.dim() {
        return Err(VbError::DimensionMismatch(format!(
            "query has dimension {}, model expects {}",
            query.dim(),
            model.data.dim()
        )));
    }
    let refit = RefitConfig {
        tol: args.tol,
        max_iter: args.max_iter,
        fast: args.fast,
    };
    let mut out = String::new();
    let _ = writeln!(out, "{},log_density", query.columns().join(","));
    for r in 0..query.len() {
        let y = query.row(r);
        let log_p = predictive_log_density(&model, &y, &refit)?;
        for c in 0..query.dim() {
            let _ = write!(out, "{},", format_value(query.values()[(r, c)]));
        }
        let _ = writeln!(out, "{}", format_value(log_p));
    }
    std::fs::write(&args.out, out)?;
    Ok(())
}
