//! A whole experiment from a config string: data, all models, bandits and
//! the report tables, at a size that finishes in a few minutes.

use promobench::config::parse_config;
use promobench::experiment::{render_summary, run_experiment_with};

const CONFIG: &str = r#"
global_seed = 11
output_dir = "runs/example"
bandit_model = "wide_deep"

[gen]
n_samples = 30000
n_customers = 30
n_campaigns = 10

[variants.reduced_variance]
customer_sd_caps = [0.05, 0.1]
customer_hidden_sd_cap = 0.05

[train]
max_epochs = 15

[[models]]
spec = { kind = "wide" }

[[models]]
spec = { kind = "deep", deep_input_variant = 3, hidden_widths = [32, 16] }

[[models]]
spec = { kind = "wide_deep", hidden_widths = [32, 16] }

[[models]]
name = "deep-v3-seq"
split = "sequential"
spec = { kind = "deep", deep_input_variant = 3, hidden_widths = [32, 16] }

[[models]]
name = "deep-v1-reduced_variance"
dataset = "reduced_variance"
spec = { kind = "deep", deep_input_variant = 1, hidden_widths = [32, 16] }

[[bandit]]
algorithm = "none"

[[bandit]]
algorithm = "ts"

[[bandit]]
algorithm = "ucb"
"#;

fn main() -> promobench::Result<()> {
    let mut cfg = parse_config(CONFIG)?;
    cfg.output_dir = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("promobench-full-experiment"));
    let report = run_experiment_with(&cfg, |line| eprintln!("{line}"))?;
    print!("{}", render_summary(&report));
    println!("\nfiles in {}", cfg.output_dir.display());
    Ok(())
}
