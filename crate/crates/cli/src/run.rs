use std::path::PathBuf;

use clap::Args;
use partmc::io::{write_json, write_run, MANIFEST_FILE};
use partmc::pipeline::{run_pipeline, RunPlan};
use partmc::sampler::SamplingMode;

use crate::{read_text, Failure};

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Run configuration (JSON). Flags below override its fields.
    pub config: Option<PathBuf>,
    /// Built-in target name, e.g. mix2d or mix9d.
    #[arg(long)]
    pub target: Option<String>,
    /// Output directory.
    #[arg(long, short, default_value = "run")]
    pub out: PathBuf,
    #[arg(long)]
    pub explore_chains: Option<usize>,
    #[arg(long)]
    pub explore_samples_per_chain: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_subspaces: Option<usize>,
    #[arg(long)]
    pub min_rel_gain: Option<f64>,
    /// Axes the partition may cut, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub partition_axes: Option<Vec<usize>>,
    #[arg(long)]
    pub chains_per_subspace: Option<usize>,
    #[arg(long, conflicts_with = "wall_clock_seconds")]
    pub samples_per_chain: Option<usize>,
    /// Sample each subspace for this many seconds instead of a fixed count.
    #[arg(long)]
    pub wall_clock_seconds: Option<f64>,
    #[arg(long)]
    pub rhat: Option<f64>,
    /// Acceptance window as `lo,hi`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub accept_window: Option<Vec<f64>>,
    #[arg(long)]
    pub integrator: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
}

fn json_error(path: &str, e: serde_json::Error) -> Failure {
    if e.is_syntax() || e.is_eof() {
        Failure::Usage(format!("{path}: line {}, column {}: {e}", e.line(), e.column()))
    } else {
        Failure::Usage(format!("{path}: {e}"))
    }
}

/// Plan from the config file (if any) with `--target` folded in.
fn base_plan(args: &RunArgs) -> Result<RunPlan, Failure> {
    let (label, text) = match &args.config {
        Some(p) => (p.display().to_string(), read_text(p, "config")?),
        None => ("config".to_string(), "{}".to_string()),
    };
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| json_error(&label, e))?;
    if let Some(t) = &args.target {
        match value.as_object_mut() {
            Some(obj) => {
                obj.insert("target".into(), serde_json::Value::String(t.clone()));
            }
            None => return Err(Failure::Usage(format!("{label}: top level must be an object"))),
        }
    } else if args.config.is_some() {
        // parse from the text so errors keep their line numbers
        return serde_json::from_str(&text).map_err(|e| json_error(&label, e));
    }
    serde_json::from_value(value).map_err(|e| {
        let hint = if e.to_string().contains("missing field `target`") {
            " (pass --target or set `target` in the config)"
        } else {
            ""
        };
        Failure::Usage(format!("{label}: {e}{hint}"))
    })
}

pub fn plan_from_args(args: &RunArgs) -> Result<RunPlan, Failure> {
    let mut plan = base_plan(args)?;
    if let Some(v) = args.explore_chains {
        plan.exploration.n_chains = v;
    }
    if let Some(v) = args.explore_samples_per_chain {
        plan.exploration.samples_per_chain = v;
    }
    if let Some(v) = args.seed {
        plan.seed = v;
    }
    if let Some(v) = args.max_subspaces {
        plan.partition.max_subspaces = v;
    }
    if let Some(v) = args.min_rel_gain {
        plan.partition.min_rel_gain = v;
    }
    if let Some(v) = &args.partition_axes {
        plan.partition.allowed_axes = Some(v.clone());
    }
    if let Some(v) = args.chains_per_subspace {
        plan.sampling.n_chains = v;
    }
    if let Some(n) = args.samples_per_chain {
        plan.sampling.mode = SamplingMode::FixedCount { samples_per_chain: n };
    }
    if let Some(seconds) = args.wall_clock_seconds {
        plan.sampling.mode = SamplingMode::WallClock { seconds };
    }
    if let Some(v) = args.rhat {
        plan.sampling.rhat_threshold = v;
    }
    if let Some(w) = &args.accept_window {
        plan.sampling.accept_window = (w[0], w[1]);
    }
    if let Some(v) = &args.integrator {
        plan.integrator = v.clone();
    }
    if let Some(v) = args.workers {
        plan.workers = v;
    }
    plan.validate()?;
    Ok(plan)
}

pub fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let plan = plan_from_args(&args)?;
    match run_pipeline(&plan) {
        Ok(result) => {
            write_run(&result, &args.out)?;
            for w in &result.manifest.warnings {
                eprintln!("warning: {w}");
            }
            let t = result.total();
            println!(
                "{} subspaces, {} samples, integral {:.6e} ± {:.2e}{}",
                result.tree.n_leaves(),
                result.samples.len(),
                t.value,
                t.std_error,
                if t.degraded { " (degraded)" } else { "" }
            );
            println!("wrote {}", args.out.display());
            Ok(())
        }
        Err(partmc::Error::PipelineFailed(manifest)) => {
            std::fs::create_dir_all(&args.out).map_err(partmc::Error::from)?;
            write_json(&manifest, &args.out.join(MANIFEST_FILE))?;
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            Err(Failure::Pipeline(format!(
                "every subspace failed; manifest written to {}",
                args.out.join(MANIFEST_FILE).display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}
