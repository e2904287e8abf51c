//! Plain-text persistence of a fitted mixture model.
//!
//! Layout: `key = value` lines holding the priors, the run configuration,
//! the free-energy split and the per-component posterior hyperparameters
//! (components indexed from 1, vectors comma-separated, matrix rows joined
//! by semicolons), followed by a `[data]` section embedding the training
//! dataset as CSV so predictive refits work from the file alone.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use varbayes::dataset::{format_value, Dataset};
use varbayes::vbgmm::{
    rehydrate, GmmComponent, GmmConfig, GmmInit, GmmModel, GmmPriors, GmmVarState,
    MeanPrecisionCoupling,
};
use varbayes::{Result, VbError};

use crate::kv::{format_matrix, format_vector, KvFile};

const FORMAT_TAG: &str = "vb-gmm-model v1";

pub fn save_model(model: &GmmModel, path: &Path) -> Result<()> {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    kv("format", FORMAT_TAG.into());
    kv("initial_components", model.initial_components.to_string());
    kv("converged", model.converged.to_string());
    kv("iterations", model.iterations.to_string());
    kv(
        "likelihood_term",
        format_value(model.report.likelihood_term),
    );
    kv("kl_term", format_value(model.report.kl_term));

    kv("prior_lambda0", format_value(model.priors.lambda0));
    kv("prior_a0", format_value(model.priors.a0));
    kv("prior_beta0", format_value(model.priors.beta0));
    kv("prior_xi0", format_vector(&model.priors.xi0));
    kv("prior_b0", format_matrix(&model.priors.b0));
    kv(
        "prior_coupling",
        match model.priors.coupling {
            MeanPrecisionCoupling::NormalWishart => "normal-wishart".into(),
            MeanPrecisionCoupling::Factorized => "factorized".into(),
        },
    );

    kv("config_seed", model.config.seed.to_string());
    kv("config_tol", format_value(model.config.tol));
    kv("config_max_iter", model.config.max_iter.to_string());
    kv("config_prior_eps", format_value(model.config.prior_eps));

    kv("lambda", format_vector(&model.state.lambda));
    for (i, comp) in model.state.components.iter().enumerate() {
        let tag = format!("component.{}", i + 1);
        kv(&format!("{tag}.alive"), comp.alive.to_string());
        kv(&format!("{tag}.mean"), format_vector(&comp.mean));
        kv(
            &format!("{tag}.mean_precision"),
            format_matrix(&comp.mean_precision),
        );
        kv(&format!("{tag}.shape"), format_value(comp.shape));
        kv(&format!("{tag}.rate"), format_matrix(&comp.rate));
    }

    out.push_str("[data]\n");
    out.push_str(&model.data.to_csv_string());
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GmmModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| VbError::Parse(format!("cannot read {}: {e}", path.display())))?;
    let kv = KvFile::parse(&text)?;
    let format = kv.require("format")?;
    if format != FORMAT_TAG {
        return Err(VbError::Parse(format!(
            "unsupported model format {format:?} (expected {FORMAT_TAG:?})"
        )));
    }
    let data_csv = kv
        .data_section
        .as_deref()
        .ok_or_else(|| VbError::Parse("model file is missing its [data] section".into()))?;
    let data = Dataset::from_csv_str(data_csv)?;

    let coupling = match kv.require("prior_coupling")? {
        "normal-wishart" => MeanPrecisionCoupling::NormalWishart,
        "factorized" => MeanPrecisionCoupling::Factorized,
        other => {
            return Err(VbError::Parse(format!(
                "unknown prior coupling {other:?}"
            )))
        }
    };
    let priors = GmmPriors {
        lambda0: kv.parse_value("prior_lambda0")?,
        a0: kv.parse_value("prior_a0")?,
        beta0: kv.parse_value("prior_beta0")?,
        xi0: kv.parse_vector("prior_xi0")?,
        b0: kv.parse_matrix("prior_b0")?,
        coupling,
    };
    let config = GmmConfig {
        seed: kv.parse_value("config_seed")?,
        tol: kv.parse_value("config_tol")?,
        max_iter: kv.parse_value("config_max_iter")?,
        prior_eps: kv.parse_value("config_prior_eps")?,
        priors: Some(priors.clone()),
        init: GmmInit::KmeansPlusPlus,
    };

    let lambda: DVector<f64> = kv.parse_vector("lambda")?;
    let m = lambda.len();
    let mut components = Vec::with_capacity(m);
    for i in 1..=m {
        let tag = format!("component.{i}");
        components.push(GmmComponent {
            alive: kv.parse_value(&format!("{tag}.alive"))?,
            mean: kv.parse_vector(&format!("{tag}.mean"))?,
            mean_precision: kv.parse_matrix(&format!("{tag}.mean_precision"))?,
            shape: kv.parse_value(&format!("{tag}.shape"))?,
            rate: kv.parse_matrix(&format!("{tag}.rate"))?,
        });
    }
    let state = GmmVarState { lambda, components };

    let likelihood_term: f64 = kv.parse_value("likelihood_term")?;
    let kl_term: f64 = kv.parse_value("kl_term")?;
    let initial_components: usize = kv.parse_value("initial_components")?;
    let converged: bool = kv.parse_value("converged")?;
    let iterations: usize = kv.parse_value("iterations")?;
    kv.reject_unknown()?;

    rehydrate(
        state,
        priors,
        config,
        data,
        likelihood_term,
        kl_term,
        initial_components,
        converged,
        iterations,
    )
}
