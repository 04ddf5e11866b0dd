use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use pfedmb::federation::run_protocol;
use pfedmb::metrics::{emit_results, fmt_sig, ExperimentResult};
use pfedmb::nn::{compare_gradients, AlphaParams, GradCheckReport, GroupReport, Matrix, Network, Wrt};
use pfedmb::rng;
use rand::Rng;

use crate::config::{prepare, ExperimentConfig};
use crate::{CompareArgs, GradcheckArgs};

fn write(path: &Path, body: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

/// Trains, fine-tunes, and writes `rounds.csv`, `final.json` and
/// `alpha_trajectory.csv` into the configured output directory.
pub fn run(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentResult> {
    let prepared = prepare(cfg)?;
    let outcome = run_protocol(&cfg.protocol(), prepared.shards()?)
        .with_context(|| format!("running method {}", cfg.method))?;
    let result = ExperimentResult::from_outcome(&outcome, cfg.fingerprint(), Some(serde_json::to_value(cfg)?))?;
    emit_results(&result, &cfg.output_dir)
        .with_context(|| format!("writing results to {}", cfg.output_dir.display()))?;
    println!(
        "{} rounds={} final_mean_acc={} out={}",
        cfg.method,
        cfg.rounds,
        fmt_sig(result.final_mean_accuracy),
        cfg.output_dir.display()
    );
    Ok(result)
}

fn differing_keys(a: &str, b: &str) -> Vec<String> {
    let (Ok(a), Ok(b)) = (
        serde_json::from_str::<serde_json::Value>(a),
        serde_json::from_str::<serde_json::Value>(b),
    ) else {
        return vec!["<unparseable>".into()];
    };
    let (Some(a), Some(b)) = (a.as_object(), b.as_object()) else {
        return vec!["<not an object>".into()];
    };
    a.keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// The configs a comparison runs, labelled by column name.
pub fn comparison_configs(args: &CompareArgs) -> anyhow::Result<Vec<(String, ExperimentConfig)>> {
    let base = args.base.resolve()?;
    let mut configs: Vec<ExperimentConfig> = if args.methods.is_empty() {
        vec![base.clone()]
    } else {
        args.methods.iter().map(|&m| base.with_method(m)).collect()
    };
    for path in &args.with {
        let extra = crate::ConfigArgs {
            config: Some(path.clone()),
            ..args.base.clone()
        };
        let cfg = extra
            .resolve()
            .with_context(|| format!("in {}", path.display()))?;
        configs.push(cfg);
    }
    let reference = configs[0].shared_setup();
    for (i, c) in configs.iter().enumerate().skip(1) {
        let diff = differing_keys(&reference, &c.shared_setup());
        if !diff.is_empty() {
            bail!(
                "compare: config #{i} ({}) must differ from the first only in method/branches, but also differs in: {}",
                c.method,
                diff.join(", ")
            );
        }
    }
    let mut labelled: Vec<(String, ExperimentConfig)> = Vec::with_capacity(configs.len());
    let mut seen: std::collections::HashMap<&'static str, usize> = Default::default();
    for c in configs {
        let base = c.method.name();
        let n = seen.entry(base).or_default();
        *n += 1;
        let label = if *n == 1 { base.to_string() } else { format!("{base}_{n}") };
        labelled.push((label, c));
    }
    Ok(labelled)
}

/// Side-by-side final mean accuracies, one row per seed.
pub fn compare(args: &CompareArgs) -> anyhow::Result<String> {
    let configs = comparison_configs(args)?;
    let out_dir = configs[0].1.output_dir.clone();
    let seeds = if args.seeds.is_empty() {
        vec![configs[0].1.seed]
    } else {
        args.seeds.clone()
    };
    let mut table = String::from("seed");
    for (label, _) in &configs {
        table.push(',');
        table.push_str(label);
    }
    table.push('\n');
    let mut sums = vec![0.0; configs.len()];
    for &seed in &seeds {
        let _ = write!(table, "{seed}");
        for (k, (label, cfg)) in configs.iter().enumerate() {
            let mut c = cfg.with_seed(seed);
            c.output_dir = out_dir.join(label).join(format!("seed-{seed}"));
            let acc = run(&c)?.final_mean_accuracy;
            sums[k] += acc;
            let _ = write!(table, ",{}", fmt_sig(acc));
        }
        table.push('\n');
    }
    if seeds.len() > 1 {
        table.push_str("mean");
        for s in &sums {
            let _ = write!(table, ",{}", fmt_sig(s / seeds.len() as f64));
        }
        table.push('\n');
    }
    write(&out_dir.join("compare.csv"), &table)?;
    print!("{table}");
    Ok(table)
}

/// Random network, mixing logits and batch for a gradient check.
pub fn gradcheck_fixture(args: &GradcheckArgs) -> anyhow::Result<(Network, AlphaParams, Matrix, Vec<usize>)> {
    if args.dims.len() < 2 {
        bail!("dims: need at least an input and an output width");
    }
    if args.batch == 0 {
        bail!("batch: must be at least 1");
    }
    let mut r = rng::stream(args.seed, &[rng::tag::INIT]);
    let net = Network::he_uniform(&args.dims, args.branches, &mut r)?;
    let rows = if args.shared_alpha { 1 } else { net.num_layers() };
    let logits = (0..rows)
        .map(|_| (0..args.branches).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let alpha = AlphaParams::from_logits(logits, args.shared_alpha)?;
    let x = Matrix::from_fn(args.batch, args.dims[0], |_, _| r.random_range(-1.0..1.0));
    let classes = net.num_classes();
    let labels = (0..args.batch).map(|_| r.random_range(0..classes)).collect();
    Ok((net, alpha, x, labels))
}

pub fn gradcheck_report(args: &GradcheckArgs) -> anyhow::Result<GradCheckReport> {
    let (net, alpha, x, labels) = gradcheck_fixture(args)?;
    let (_, mut grads) = net.loss_and_grads(&alpha, &x, &labels, Wrt::Both)?;
    if args.inject_fault {
        grads.d_branch_weights[0][0].as_mut_slice()[0] += 1.0;
    }
    Ok(compare_gradients(&net, &alpha, &x, &labels, &grads, args.h, args.tolerance)?)
}

fn group_line(name: &str, g: &GroupReport) -> String {
    if g.skipped {
        return format!("{name}: skipped (identically zero with a single branch) PASS");
    }
    format!(
        "{name}: entries={} max_rel_error={:.3e} worst_index={} {}",
        g.entries,
        g.max_rel_error,
        g.worst_index,
        if g.passed { "PASS" } else { "FAIL" }
    )
}

/// Prints the report; returns whether both groups passed.
pub fn gradcheck(args: &GradcheckArgs) -> anyhow::Result<bool> {
    let report = gradcheck_report(args)?;
    println!(
        "gradcheck dims={:?} branches={} batch={} h={:e} tolerance={:e}",
        args.dims, args.branches, args.batch, report.h, report.tolerance
    );
    println!("{}", group_line("weights", &report.weights));
    println!("{}", group_line("alpha", &report.alpha));
    Ok(report.passed())
}

/// Writes `partition_stats.csv` (class counts per split and client) and
/// `partition.json` (the index lists) into the output directory.
pub fn partition_stats(cfg: &ExperimentConfig) -> anyhow::Result<String> {
    let prepared = prepare(cfg)?;
    let names: &[&str] = if prepared.splits.len() == 3 {
        &["train", "validation", "test"]
    } else {
        &["train", "test"]
    };
    let mut csv = String::from("split,client,class,count\n");
    for (s, (data, name)) in prepared.splits.iter().zip(names).enumerate() {
        for client in 0..prepared.partition.num_clients() {
            let mut hist = vec![0usize; data.num_classes()];
            for &i in prepared.partition.client(s, client) {
                hist[data.labels()[i]] += 1;
            }
            for (class, count) in hist.iter().enumerate() {
                let _ = writeln!(csv, "{name},{client},{class},{count}");
            }
        }
    }
    write(&cfg.output_dir.join("partition_stats.csv"), &csv)?;
    write(
        &cfg.output_dir.join("partition.json"),
        &serde_json::to_string_pretty(&prepared.partition)?,
    )?;
    println!(
        "partition clients={} attempts={} out={}",
        prepared.partition.num_clients(),
        prepared.partition.attempts,
        cfg.output_dir.display()
    );
    Ok(csv)
}
