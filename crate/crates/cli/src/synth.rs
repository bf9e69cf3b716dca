use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use trackmpnn::data::{synth_generate, write_kitti};

use crate::util::{create_dir, create_file, load_config, CliResult, Classify};

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory; `gt/` and `det/` are created inside.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// `random` or `crossing`.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    objects: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    fp_rate: Option<f64>,
    #[arg(long)]
    miss_rate: Option<f64>,
    #[arg(long)]
    occlusion_gap: Option<usize>,
    /// Seed of the first sequence; sequence `i` uses `seed + i`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sequences: Option<usize>,
}

impl SynthArgs {
    fn overrides(&self) -> Vec<String> {
        let mut s = self.sets.clone();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                s.push(format!("{k}={v}"));
            }
        };
        push("synth.scenario", self.scenario.clone());
        push("synth.objects", self.objects.map(|v| v.to_string()));
        push("synth.frames", self.frames.map(|v| v.to_string()));
        push("synth.fp_rate", self.fp_rate.map(|v| v.to_string()));
        push("synth.miss_rate", self.miss_rate.map(|v| v.to_string()));
        push("synth.occlusion_gap", self.occlusion_gap.map(|v| v.to_string()));
        push("synth.seed", self.seed.map(|v| v.to_string()));
        push("synth.sequences", self.sequences.map(|v| v.to_string()));
        s
    }
}

pub fn run(args: SynthArgs) -> CliResult<()> {
    let config = load_config(args.config.as_deref(), &args.overrides())?;
    let (gt_dir, det_dir) = (args.out.join("gt"), args.out.join("det"));
    create_dir(&gt_dir)?;
    create_dir(&det_dir)?;
    (0..config.synth_sequences).into_par_iter().try_for_each(|i| {
        let mut cfg = config.synth.clone();
        cfg.seed = cfg.seed.wrapping_add(i as u64);
        let (det, gt) = synth_generate(&cfg).runtime_err(|| format!("cannot generate sequence {i}"))?;
        let name = format!("{i:04}.txt");
        for (dir, seq) in [(&gt_dir, &gt), (&det_dir, &det)] {
            let path = dir.join(&name);
            let mut w = create_file(&path)?;
            w.write_all(write_kitti(seq).as_bytes())
                .and_then(|()| w.flush())
                .runtime_err(|| format!("cannot write {}", path.display()))?;
        }
        Ok(())
    })?;
    println!("wrote {} sequences to {}", config.synth_sequences, args.out.display());
    Ok(())
}
