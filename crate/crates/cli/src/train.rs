use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use trackmpnn::data::{label_detections, read_kitti_file, Sequence, LABEL_IOU};
use trackmpnn::trainer::{EpochLog, Trainer};
use trackmpnn::{Error, RunConfig};

use crate::util::{create_file, list_sequences, load_checkpoint, load_config, save_checkpoint, usage, vocabulary, CliResult, Classify};

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Ground-truth label files.
    #[arg(long)]
    gt: PathBuf,
    /// Detection files with the same names; defaults to the ground truth.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Checkpoint written at the end (and at every interval).
    #[arg(long)]
    out: PathBuf,
    /// Epoch log; defaults to the checkpoint path with a `.log` extension.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from a checkpoint, keeping its model, window and optimizer.
    #[arg(long)]
    resume: Option<PathBuf>,
}

struct Data {
    train: Vec<Sequence>,
    val: Vec<(Sequence, Sequence)>,
}

fn load_data(config: &RunConfig, gt_dir: &Path, det_dir: Option<&Path>) -> CliResult<Data> {
    let vocab = vocabulary(config);
    let files = list_sequences(gt_dir)?;
    if files.is_empty() {
        return Err(usage(format!("no sequences in {}", gt_dir.display())));
    }
    if let Some(d) = det_dir {
        list_sequences(d)?;
    }
    for v in &config.data.validation {
        if !files.iter().any(|(n, _)| n == v) {
            return Err(usage(format!("validation sequence `{v}` not found in {}", gt_dir.display())));
        }
    }
    let mut data = Data {
        train: Vec::new(),
        val: Vec::new(),
    };
    for (name, path) in files {
        let read = |p: &Path| read_kitti_file(p, &vocab).runtime_err(|| format!("cannot read {}", p.display()));
        let mut gt = read(&path)?;
        gt.name = name.clone();
        let mut dets = match det_dir {
            Some(d) => {
                let p = d.join(format!("{name}.txt"));
                if !p.is_file() {
                    return Err(usage(format!("no detections for sequence `{name}` ({})", p.display())));
                }
                read(&p)?
            }
            None => gt.clone(),
        };
        dets.image_width = dets.image_width.or(Some(config.data.image_width));
        dets.image_height = dets.image_height.or(Some(config.data.image_height));
        if config.data.validation.contains(&name) {
            for d in dets.frames.iter_mut().flatten() {
                d.track_id = None;
            }
            data.val.push((dets, gt));
        } else {
            let labeled = label_detections(&dets, &gt, LABEL_IOU).runtime_err(|| format!("cannot label `{name}`"))?;
            data.train.push(labeled);
        }
    }
    if data.train.is_empty() {
        return Err(usage("every sequence is held out for validation"));
    }
    Ok(data)
}

pub fn run(args: TrainArgs) -> CliResult<()> {
    let mut config = load_config(args.config.as_deref(), &args.sets)?;
    let mut trainer = match &args.resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            config.model = ck.config.model.clone();
            config.window = ck.config.window.clone();
            let mut t = Trainer::<f64>::from_checkpoint(&ck).usage_err(|| format!("cannot resume from {}", p.display()))?;
            t.config = config.train.clone();
            t
        }
        None => Trainer::<f64>::new(config.model.clone(), config.window.clone(), config.train.clone())
            .usage_err(|| "invalid configuration".into())?,
    };
    let data = load_data(&config, &args.gt, args.detections.as_deref())?;
    info!(
        "training on {} sequences, validating on {}",
        data.train.len(),
        data.val.len()
    );

    let log_path = args.log.clone().unwrap_or_else(|| args.out.with_extension("log"));
    let mut log = create_file(&log_path)?;
    let interval = config.train.checkpoint_interval;
    let mut failure = None;
    let summary = trainer.fit(&data.train, &data.val, &config.decode, |t, e: &EpochLog| {
        println!("{e}");
        let written = writeln!(log, "{e}").and_then(|()| log.flush());
        if let Err(f) = written.runtime_err(|| format!("cannot write {}", log_path.display())) {
            failure = Some(f);
            return Err(Error::Contract("log write failed".into()));
        }
        if interval > 0 && e.epoch.is_multiple_of(interval) {
            let path = args.out.with_extension(format!("epoch{}.ckpt", e.epoch));
            if let Err(f) = save_checkpoint(&path, &t.checkpoint(&config)) {
                failure = Some(f);
                return Err(Error::Contract("checkpoint write failed".into()));
            }
        }
        Ok(())
    });
    if let Some(f) = failure {
        return Err(f);
    }
    let summary = summary.runtime_err(|| "training failed".into())?;
    save_checkpoint(&args.out, &trainer.checkpoint(&config))?;
    if let (Some(e), Some(m)) = (summary.best_epoch, summary.best_mota) {
        println!("best_epoch={e} best_val_mota={m:.4}");
    }
    if summary.stopped_early {
        println!("stopped early after {} epochs", summary.epochs_run);
    }
    println!("checkpoint={}", args.out.display());
    Ok(())
}
