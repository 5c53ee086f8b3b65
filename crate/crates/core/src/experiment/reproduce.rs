//! Bundled configurations and the recipes behind `reproduce <table-id>`.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::metrics::{format_table, TableRow};

use super::config::{ExperimentConfig, Method, Scale};
use super::data::DataSource;
use super::run::{bench_with, lambda_label, run_label};

const BUNDLED: [(&str, &str); 8] = [
    ("synthetic", include_str!("../../../../configs/synthetic.json")),
    ("mnist-100", include_str!("../../../../configs/mnist-100.json")),
    ("mnist-600", include_str!("../../../../configs/mnist-600.json")),
    ("mnist-balanced", include_str!("../../../../configs/mnist-balanced.json")),
    ("fashion-100", include_str!("../../../../configs/fashion-100.json")),
    ("fashion-600", include_str!("../../../../configs/fashion-600.json")),
    ("fashion-balanced", include_str!("../../../../configs/fashion-balanced.json")),
    ("musk", include_str!("../../../../configs/musk.json")),
];

pub fn bundled_config_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

pub fn bundled_config(name: &str) -> Result<ExperimentConfig> {
    let text = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Config(format!("no bundled config named {name:?}")))?;
    ExperimentConfig::from_json(text)
}

pub const TABLE_IDS: [&str; 7] = ["synthetic", "mnist", "fashion-mnist", "musk", "ablation", "lambda", "upper-bound"];

/// Settings shared by every run of a reproduction.
#[derive(Debug, Clone, Default)]
pub struct ReproduceOptions {
    pub output_dir: PathBuf,
    pub scale: Option<Scale>,
    pub seeds: Option<Vec<u64>>,
}

/// A method plus the generative ablation switches.
#[derive(Debug, Clone, Copy)]
struct Variant {
    method: Method,
    disable_pretrain: bool,
    disable_ewc: bool,
}

const fn plain(method: Method) -> Variant {
    Variant {
        method,
        disable_pretrain: false,
        disable_ewc: false,
    }
}

const COMPARISON: [Variant; 8] = [
    plain(Method::Erm),
    plain(Method::Ros),
    plain(Method::Smote),
    plain(Method::Rw),
    plain(Method::Cbrw),
    plain(Method::Focal),
    plain(Method::Ldam),
    plain(Method::Mgvae),
];

/// Standard-prior VAE, then MGVAE with pretraining and EWC removed one
/// after the other.
const ABLATION: [Variant; 4] = [
    plain(Method::VaeAblation),
    Variant {
        method: Method::Mgvae,
        disable_pretrain: true,
        disable_ewc: true,
    },
    Variant {
        method: Method::Mgvae,
        disable_pretrain: false,
        disable_ewc: true,
    },
    plain(Method::Mgvae),
];

enum Recipe {
    Methods(&'static [&'static str], Vec<Variant>),
    Lambda(&'static [&'static str]),
}

fn recipe(table_id: &str) -> Result<Recipe> {
    Ok(match table_id {
        "synthetic" => Recipe::Methods(&["synthetic"], Method::ALL.into_iter().map(plain).collect()),
        "mnist" => Recipe::Methods(&["mnist-100", "mnist-600"], COMPARISON.to_vec()),
        "fashion-mnist" => Recipe::Methods(&["fashion-100", "fashion-600"], COMPARISON.to_vec()),
        "musk" => Recipe::Methods(&["musk"], COMPARISON.to_vec()),
        "ablation" => Recipe::Methods(&["mnist-100", "mnist-600"], ABLATION.to_vec()),
        "lambda" => Recipe::Lambda(&["fashion-100", "fashion-600"]),
        "upper-bound" => Recipe::Methods(&["mnist-balanced", "fashion-balanced"], vec![plain(Method::Erm)]),
        other => {
            return Err(Error::Config(format!(
                "unknown table id {other:?}; expected one of {}",
                TABLE_IDS.join(", ")
            )))
        }
    })
}

fn configure(name: &str, opts: &ReproduceOptions) -> Result<ExperimentConfig> {
    let mut cfg = bundled_config(name)?;
    if let Some(s) = opts.scale {
        cfg.scale = s;
    }
    if let Some(s) = &opts.seeds {
        cfg.seeds = s.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs every bench behind `table_id` under `output_dir/<table_id>/` and
/// writes the combined `table.txt`, which is also returned.
pub fn reproduce(table_id: &str, opts: &ReproduceOptions) -> Result<String> {
    let recipe = recipe(table_id)?;
    let root = opts.output_dir.join(table_id);
    let mut text = String::new();
    let names = match &recipe {
        Recipe::Methods(n, _) | Recipe::Lambda(n) => *n,
    };
    // Every config is checked before the first run starts.
    let configs: Vec<ExperimentConfig> = names.iter().map(|n| configure(n, opts)).collect::<Result<_>>()?;
    for (name, base) in names.iter().zip(configs) {
        let source = DataSource::open(&base.dataset, base.scale)?;
        let mut rows = Vec::new();
        match &recipe {
            Recipe::Methods(_, variants) => {
                for v in variants {
                    let mut cfg = base.clone();
                    cfg.method = v.method;
                    cfg.train.disable_pretrain = v.disable_pretrain;
                    cfg.train.disable_ewc = v.disable_ewc;
                    let label = run_label(&cfg);
                    cfg.output_dir = root.join(name).join(&label);
                    let out = bench_with(&cfg, &source)?;
                    rows.push(TableRow { label, summary: out.summary });
                }
            }
            Recipe::Lambda(_) => {
                for &lambda in &base.train.lambda_candidates {
                    let mut cfg = base.clone();
                    cfg.method = Method::Mgvae;
                    cfg.train.lambda = lambda;
                    cfg.output_dir = root.join(name).join(format!("lambda-{}", lambda_label(lambda)));
                    let out = bench_with(&cfg, &source)?;
                    rows.push(TableRow {
                        label: lambda_label(lambda),
                        summary: out.summary,
                    });
                }
            }
        }
        let header = if matches!(recipe, Recipe::Lambda(_)) { "lambda" } else { "method" };
        text.push_str(&format_table(name, header, &rows));
        text.push('\n');
    }
    atomic_write(&root.join("table.txt"), text.as_bytes())?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_configs_parse_and_validate() {
        for name in bundled_config_names() {
            let cfg = bundled_config(name).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.dataset.name, name);
        }
    }

    #[test]
    fn schema_lists_every_config_field() {
        let schema: serde_json::Value = serde_json::from_str(include_str!("../../../../configs/schema.json")).unwrap();
        let cfg: serde_json::Value = serde_json::from_str(&bundled_config("musk").unwrap().to_json()).unwrap();
        let props = &schema["properties"];
        for section in ["", "train", "classifier", "baselines", "model", "grid"] {
            let (have, want) = if section.is_empty() {
                (props, &cfg)
            } else {
                (&props[section]["properties"], &cfg[section])
            };
            for key in want.as_object().unwrap().keys() {
                assert!(have.get(key).is_some(), "schema lacks {section}.{key}");
            }
        }
    }

    #[test]
    fn unknown_table_is_config_error() {
        assert!(matches!(reproduce("table-99", &ReproduceOptions::default()), Err(Error::Config(_))));
    }

    #[test]
    fn every_table_id_has_a_recipe() {
        for id in TABLE_IDS {
            recipe(id).unwrap();
        }
    }
}
