use std::fmt::Write as _;
use std::ops::Range;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use partmc::diagnostics::{
    ess_report_groups, group_ess, ks_two_sample, marginal_ks, rate_report, stitched_n_eff, EssReport, KsResult,
    RateReport,
};
use partmc::io::{read_manifest, read_samples_file, SampleTable, MANIFEST_FILE, SAMPLES_FILE};
use partmc::rng::chain_rng;
use serde::Serialize;

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Reference {
    /// Independent draws from the target, when it supports them.
    Oracle,
    /// Even-numbered chains against odd-numbered chains of the same run.
    SplitHalves,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    /// Run directory holding samples.csv and manifest.json.
    pub run: Option<PathBuf>,
    /// Samples CSV, overriding the run directory.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Manifest, overriding the run directory.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Manifest (or run directory) of a single-subspace run used as the rate
    /// baseline.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "oracle")]
    pub reference: Reference,
    /// Size of the independent reference sample.
    #[arg(long, default_value_t = 100_000)]
    pub oracle_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Diagnostics JSON; printed to stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Flat table with one row per dimension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct KsSection {
    reference: &'static str,
    results: Vec<KsResult>,
}

#[derive(Debug, Serialize)]
struct Diagnostics {
    n_samples: usize,
    dim: usize,
    ess: EssReport,
    /// Effective size of the weighted sample per dimension.
    stitched_n_eff: Vec<f64>,
    ks: Option<KsSection>,
    rates: Option<RateReport>,
    warnings: Vec<String>,
}

fn path_or(explicit: &Option<PathBuf>, run: &Option<PathBuf>, file: &str, what: &str) -> Result<PathBuf, Failure> {
    match (explicit, run) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(dir)) => Ok(dir.join(file)),
        (None, None) => Err(Failure::Usage(format!(
            "no {what} given: pass a run directory or --{what}"
        ))),
    }
}

/// Chain ranges of each subspace, keeping only chains accepted by `keep`.
fn groups(table: &SampleTable, keep: impl Fn(u32) -> bool) -> Vec<Vec<Range<usize>>> {
    let chains = table.chain_ranges();
    table
        .subspace_ranges()
        .into_iter()
        .map(|(_, sub)| {
            chains
                .iter()
                .filter(|c| c.start >= sub.start && c.end <= sub.end && keep(table.chain_ids[c.start]))
                .cloned()
                .collect::<Vec<_>>()
        })
        .filter(|g| !g.is_empty())
        .collect()
}

/// Per-dimension effective size of the rows in `groups`, weighting each
/// subspace by its share of the total weight.
fn weighted_n_eff(table: &SampleTable, groups: &[Vec<Range<usize>>]) -> Vec<f64> {
    let per_group: Vec<(f64, Vec<Option<f64>>)> = groups
        .iter()
        .map(|g| {
            let w: f64 = g.iter().flat_map(|r| r.clone()).map(|i| table.weights[i]).sum();
            (w, group_ess(&table.samples, g))
        })
        .collect();
    (0..table.dim())
        .map(|j| {
            let parts: Vec<(f64, Option<f64>)> = per_group.iter().map(|(w, e)| (*w, e[j])).collect();
            stitched_n_eff(&parts)
        })
        .collect()
}

fn rows_of(groups: &[Vec<Range<usize>>]) -> Vec<usize> {
    groups.iter().flatten().flat_map(|r| r.clone()).collect()
}

fn split_halves(table: &SampleTable) -> Result<Vec<KsResult>, Failure> {
    let even = groups(table, |c| c % 2 == 0);
    let odd = groups(table, |c| c % 2 == 1);
    if odd.is_empty() {
        return Err(Failure::Usage(
            "split halves need at least two chains per subspace".into(),
        ));
    }
    let (ra, rb) = (rows_of(&even), rows_of(&odd));
    let (na, nb) = (weighted_n_eff(table, &even), weighted_n_eff(table, &odd));
    let wa: Vec<f64> = ra.iter().map(|&i| table.weights[i]).collect();
    let wb: Vec<f64> = rb.iter().map(|&i| table.weights[i]).collect();
    (0..table.dim())
        .map(|j| {
            let a: Vec<f64> = ra.iter().map(|&i| table.samples.row(i)[j]).collect();
            let b: Vec<f64> = rb.iter().map(|&i| table.samples.row(i)[j]).collect();
            ks_two_sample(&a, Some(&wa), &b, Some(&wb), na[j], nb[j]).map_err(Failure::from)
        })
        .collect()
}

pub fn cmd_diagnose(args: DiagnoseArgs) -> Result<(), Failure> {
    let samples_path = path_or(&args.samples, &args.run, SAMPLES_FILE, "samples")?;
    let manifest_path = path_or(&args.manifest, &args.run, MANIFEST_FILE, "manifest")?;
    let table =
        read_samples_file(&samples_path).map_err(|e| Failure::Usage(format!("{}: {e}", samples_path.display())))?;
    let manifest =
        read_manifest(&manifest_path).map_err(|e| Failure::Usage(format!("{}: {e}", manifest_path.display())))?;
    if table.dim() != manifest.support.dim() {
        return Err(Failure::Usage(format!(
            "samples have {} coordinate columns but the manifest target has dimension {}",
            table.dim(),
            manifest.support.dim()
        )));
    }
    let mut warnings = Vec::new();

    let all = groups(&table, |_| true);
    let ess = ess_report_groups(&table.samples, &all)?;
    let n_eff = weighted_n_eff(&table, &all);

    let ks = match args.reference {
        Reference::Oracle => {
            let target = manifest.plan.target.resolve()?;
            match target.sample_iid(args.oracle_samples, &mut chain_rng(args.seed)) {
                Some(oracle) => Some(KsSection {
                    reference: "oracle",
                    results: marginal_ks(&table.samples, &table.weights, &oracle, &n_eff)?,
                }),
                None => {
                    warnings.push(format!(
                        "target `{}` has no independent sampler; KS section omitted",
                        target.name
                    ));
                    None
                }
            }
        }
        Reference::SplitHalves => Some(KsSection {
            reference: "split-halves",
            results: split_halves(&table)?,
        }),
    };

    let rates = match &args.baseline {
        None => None,
        Some(p) => {
            let p = if p.is_dir() { p.join(MANIFEST_FILE) } else { p.clone() };
            let base = read_manifest(&p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            match (base.timing, manifest.timing) {
                (Some(b), Some(r)) => match rate_report(&b, &r) {
                    Ok(rep) => Some(rep),
                    Err(e) => {
                        warnings.push(format!("rate section omitted: {e}"));
                        None
                    }
                },
                _ => {
                    warnings.push("timing missing from a manifest; rate section omitted".into());
                    None
                }
            }
        }
    };

    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let report = Diagnostics {
        n_samples: table.len(),
        dim: table.dim(),
        ess,
        stitched_n_eff: n_eff,
        ks,
        rates,
        warnings,
    };
    let json = serde_json::to_string_pretty(&report).expect("diagnostics serialize");
    match &args.out {
        Some(p) => std::fs::write(p, json).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", p.display())))?,
        None => println!("{json}"),
    }
    if let Some(p) = &args.csv {
        std::fs::write(p, flat_table(&report))
            .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(())
}

fn flat_table(d: &Diagnostics) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.12e}"));
    let mut out = String::from("# schema=1\ndim,n_eff,n_eff_fraction,stitched_n_eff,ks_statistic,ks_p_value\n");
    for j in 0..d.dim {
        let ks = d.ks.as_ref().map(|k| k.results[j]);
        let n_eff = d.ess.n_eff[j];
        writeln!(
            out,
            "{j},{},{},{:.12e},{},{}",
            opt(n_eff),
            opt(n_eff.map(|e| e / d.n_samples as f64)),
            d.stitched_n_eff[j],
            opt(ks.map(|k| k.statistic)),
            opt(ks.map(|k| k.p_value)),
        )
        .unwrap();
    }
    out
}
