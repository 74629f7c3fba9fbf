//! Plain-text `key=value` forest configuration files. Keys mirror the
//! `ForestConfig` fields; unknown keys are rejected so typos surface early.
//! Command line flags override file values.

use anyhow::{bail, Context, Result};
use stillflow::ForestConfig;

pub fn parse_forest_config(text: &str, mut cfg: ForestConfig) -> Result<ForestConfig> {
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!(
                "config line {}: expected key=value, got {:?}",
                lineno + 1,
                line
            );
        };
        let (key, value) = (key.trim(), value.trim());
        let ctx = || format!("config line {}: bad value for {}", lineno + 1, key);
        match key {
            "trees" => cfg.trees = value.parse().with_context(ctx)?,
            "max_leaves" => cfg.max_leaves = value.parse().with_context(ctx)?,
            "var_threshold" => cfg.var_threshold = value.parse().with_context(ctx)?,
            "split_candidates" => cfg.split_candidates = value.parse().with_context(ctx)?,
            "thresholds_per_candidate" => {
                cfg.thresholds_per_candidate = value.parse().with_context(ctx)?
            }
            "pairs_per_tree" => cfg.pairs_per_tree = value.parse().with_context(ctx)?,
            "min_child" => cfg.min_child = value.parse().with_context(ctx)?,
            "seed" => cfg.seed = value.parse().with_context(ctx)?,
            other => bail!("config line {}: unknown key {:?}", lineno + 1, other),
        }
    }
    Ok(cfg)
}
