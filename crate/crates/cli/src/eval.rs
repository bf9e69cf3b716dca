use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use log::warn;
use rayon::prelude::*;
use trackmpnn::data::{read_kitti_file, Sequence, Vocabulary};
use trackmpnn::metrics::{evaluate_counts, format_table, MotCounts, MATCH_IOU};

use crate::util::{create_file, list_sequences, usage, CliResult, Classify};

#[derive(Args)]
pub struct EvalArgs {
    /// Ground-truth label files.
    #[arg(long)]
    gt: PathBuf,
    /// Result files with the same names.
    #[arg(long)]
    results: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Minimum IoU of a match.
    #[arg(long, default_value_t = MATCH_IOU)]
    iou: f64,
    /// Comma-separated evaluated categories.
    #[arg(long, default_value = "Car,Pedestrian,Cyclist")]
    categories: String,
}

pub fn run(args: EvalArgs) -> CliResult<()> {
    if !(args.iou > 0.0 && args.iou <= 1.0) {
        return Err(usage(format!("--iou must be in (0, 1], got {}", args.iou)));
    }
    let categories: Vec<String> = args.categories.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if categories.is_empty() {
        return Err(usage("--categories is empty"));
    }
    let vocab = Vocabulary::new(&categories);
    let files = list_sequences(&args.gt)?;
    list_sequences(&args.results)?;

    let counts: Vec<CliResult<MotCounts>> = files
        .par_iter()
        .map(|(name, path)| {
            let gt = read_kitti_file(path, &vocab).runtime_err(|| format!("cannot read {}", path.display()))?;
            let hyp_path = args.results.join(format!("{name}.txt"));
            let hyp = if hyp_path.is_file() {
                read_kitti_file(&hyp_path, &vocab).runtime_err(|| format!("cannot read {}", hyp_path.display()))?
            } else {
                warn!("no result for sequence `{name}`; counting every object as missed");
                Sequence::new(name)
            };
            evaluate_counts(&gt, &hyp, args.iou).runtime_err(|| format!("cannot evaluate `{name}`"))
        })
        .collect();

    let mut rows = Vec::new();
    let mut total = MotCounts::default();
    for ((name, _), c) in files.iter().zip(counts) {
        let c = c?;
        total.merge(&c);
        rows.push((name.clone(), c.report()));
    }
    rows.push(("all".to_string(), total.report()));
    let mut report = format_table(&rows);
    report.push('\n');
    for (name, r) in &rows {
        report.push_str(&r.to_kv(name));
    }
    print!("{report}");
    if let Some(path) = &args.out {
        let mut w = create_file(path)?;
        w.write_all(report.as_bytes())
            .and_then(|()| w.flush())
            .runtime_err(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}
