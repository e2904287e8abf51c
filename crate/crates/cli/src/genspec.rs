//! Generator-spec files: a flat key = value description of one synthetic
//! dataset. Three kinds are understood.
//!
//! ```text
//! kind = gmm            | kind = spiral              | kind = bss-mix
//! seed = 7              | seed = 3                   | seed = 1
//! n = 600               | n = 800                    | n = 4000
//! components = 3        | c = 0.3                    | sensors = 11
//! weight.1 = 0.334      | t_min = 0                  | sources = 5
//! mean.1 = 0, 0         | t_max = 12.566             | snr_db = 20   (or inf)
//! cov.1 = 1, 0; 0, 1    | noise = 0.05               |
//! ... weight.k/mean.k/cov.k indexed from 1
//! ```

use varbayes::datagen::{BssMixSpec, GeneratorSpec, GmmGenSpec, SpiralGenSpec};
use varbayes::{Result, VbError};

use crate::kv::KvFile;

pub fn parse_generator_spec(text: &str, seed_override: Option<u64>) -> Result<GeneratorSpec> {
    let kv = KvFile::parse(text)?;
    let kind = kv.require("kind")?.to_string();
    let seed = match seed_override {
        Some(s) => {
            let _ = kv.get("seed");
            s
        }
        None => kv.parse_value("seed")?,
    };
    let spec = match kind.as_str() {
        "gmm" => {
            let n: usize = kv.parse_value("n")?;
            let k: usize = kv.parse_value("components")?;
            if k == 0 {
                return Err(VbError::Parse("components must be >= 1".into()));
            }
            let mut weights = Vec::with_capacity(k);
            let mut means = Vec::with_capacity(k);
            let mut covariances = Vec::with_capacity(k);
            for s in 1..=k {
                weights.push(kv.parse_value(&format!("weight.{s}"))?);
                means.push(kv.parse_vector(&format!("mean.{s}"))?);
                covariances.push(kv.parse_matrix(&format!("cov.{s}"))?);
            }
            GeneratorSpec::Gmm(GmmGenSpec {
                seed,
                n,
                weights,
                means,
                covariances,
            })
        }
        "spiral" => GeneratorSpec::Spiral(SpiralGenSpec {
            seed,
            n: kv.parse_value("n")?,
            c: kv.parse_optional("c")?.unwrap_or(0.3),
            t_min: kv.parse_optional("t_min")?.unwrap_or(0.0),
            t_max: kv
                .parse_optional("t_max")?
                .unwrap_or(4.0 * std::f64::consts::PI),
            noise_sigma: kv.parse_optional("noise")?.unwrap_or(0.05),
        }),
        "bss-mix" => {
            let snr_raw = kv.require("snr_db")?;
            let snr_db = if snr_raw == "inf" {
                f64::INFINITY
            } else {
                snr_raw.parse().map_err(|_| {
                    VbError::Parse(format!("key \"snr_db\": cannot parse {snr_raw:?}"))
                })?
            };
            GeneratorSpec::BssMix(BssMixSpec {
                seed,
                n: kv.parse_value("n")?,
                sensors: kv.parse_value("sensors")?,
                sources: kv.parse_value("sources")?,
                snr_db,
            })
        }
        other => {
            return Err(VbError::Parse(format!(
                "unknown kind {other:?} (expected gmm, spiral or bss-mix)"
            )))
        }
    };
    kv.reject_unknown()?;
    Ok(spec)
}
