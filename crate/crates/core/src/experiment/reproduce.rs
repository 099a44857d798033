use std::str::FromStr;

use super::config::Method;
use super::runner::Runner;
use crate::error::{Error, Result};

/// Named report bundles; each trains only what its reports need.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipe {
    /// Point-estimate accuracy against examples per class, both policies.
    Table2,
    /// Abstention under MC-dropout at the largest size.
    Table4,
    /// Every marginalization method at the largest size.
    Table6,
    /// Confusion matrix and per-class precision/recall/F1.
    Figure6,
    /// Accuracy binned by DN_med.
    Figure7,
    All,
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "table2" | "figure4" => Recipe::Table2,
            "table4" => Recipe::Table4,
            "table6" => Recipe::Table6,
            "figure6" | "table5" => Recipe::Figure6,
            "figure7" => Recipe::Figure7,
            "all" => Recipe::All,
            other => {
                return Err(Error::Config(format!(
                    "unknown recipe `{other}`; expected table2, figure4, table4, table5, table6, figure6, figure7 or all"
                )))
            }
        })
    }
}

impl Recipe {
    pub fn name(self) -> &'static str {
        match self {
            Recipe::Table2 => "table2",
            Recipe::Table4 => "table4",
            Recipe::Table6 => "table6",
            Recipe::Figure6 => "figure6",
            Recipe::Figure7 => "figure7",
            Recipe::All => "all",
        }
    }

    fn parts(self) -> Vec<Recipe> {
        match self {
            Recipe::All => vec![Recipe::Table2, Recipe::Table4, Recipe::Table6, Recipe::Figure6, Recipe::Figure7],
            r => vec![r],
        }
    }
}

/// Run every stage the recipe needs (cached stages are skipped) and write
/// its reports under `reports/<recipe>/`.
pub fn reproduce(runner: &mut Runner, recipe: Recipe) -> Result<()> {
    let parts = recipe.parts();
    runner.simulate()?;
    runner.curate()?;
    let primary = runner.primary_run();
    let mut runs = Vec::new();
    if parts.contains(&Recipe::Table2) {
        runs.extend(runner.all_runs(1));
    }
    let ensemble = if parts.contains(&Recipe::Table6) {
        runner.cfg.marginalization.n_models
    } else {
        1
    };
    if let Some(r) = runs.iter_mut().find(|(k, _)| *k == primary) {
        r.1 = r.1.max(ensemble);
    } else {
        runs.push((primary, ensemble));
    }
    runner.train(&runs)?;
    for part in parts {
        let dir = runner.reports_dir(part.name());
        match part {
            Recipe::Table2 => {
                runner.report_accuracy_vs_size(&dir, Method::Point)?;
            }
            Recipe::Table4 => {
                runner.report_abstention(&dir, primary, Method::Dropout)?;
            }
            Recipe::Table6 => {
                runner.report_ensembles(&dir, primary)?;
            }
            Recipe::Figure6 => runner.report_confusion(&dir, primary, runner.cfg.marginalization.method)?,
            Recipe::Figure7 => {
                runner.report_dnmed(&dir, primary, Method::Point)?;
            }
            Recipe::All => unreachable!("expanded above"),
        }
    }
    Ok(())
}
