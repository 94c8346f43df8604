use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;

use camforge_core::forge::{build_dataset, dataset, ClipSample, DatasetManifest};
use camforge_core::net::{
    make_samples, surgery_prune, train_loop, BatchPlan, Checkpoint, LatentCodec, Target,
};
use camforge_core::probe::{
    default_prompts, fep_compare, fep_embed, parse_prompts, svp_ingest, write_fep_csv, FepMonitor,
    FepSetup, FrameStatsProvider,
};
use camforge_core::spectra::{
    checkpoint_showdown, depth_sweep, write_spectrum_csv, ShowdownConfig, SpectraSummary,
};
use camforge_core::{ControlScalar, SampledCondition};

use crate::config::RunConfig;
use crate::{Cli, Command, FepArgs, ForgeArgs, SpectraArgs, SurgeryArgs, SurgeryMode, SvpArgs, TrainArgs};

pub const CONFIG_SNAPSHOT: &str = "config.snapshot";
pub const LOCK_FILE: &str = ".lock";
pub const FEP_CSV: &str = "fep.csv";

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg = cfg.with_seed(s);
    }
    let out = |name: &str| cli.global.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(name));
    match &cli.command {
        Command::Forge(a) => forge(cfg, a, &out("forge")),
        Command::Train(a) => train(cfg, a, &out("train")),
        Command::Surgery(a) => surgery(a),
        Command::Fep(a) => fep(&cfg, a, cli.global.seed, cli.global.out.as_deref()),
        Command::Spectra(a) => spectra(a, &out("spectra")),
        Command::SvpIngest(a) => svp(a, cli.global.out.as_deref()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| camforge_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| camforge_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn forge(mut cfg: RunConfig, a: &ForgeArgs, out: &Path) -> Result<()> {
    if let Some(e) = a.effect {
        cfg.forge.effect = e;
    }
    if a.one_shot {
        cfg.forge.one_shot = Some(7);
    }
    if let Some(c) = a.canvas {
        cfg.forge.canvas = c;
    }
    if let Some(s) = a.style {
        cfg.forge.style = s.into();
    }
    cfg.validate()?;
    create_dir(out)?;
    let manifest = build_dataset(&cfg.forge_config(), out)?;
    write_file(&out.join(CONFIG_SNAPSHOT), cfg.to_toml()?.as_bytes())?;
    info!(
        "forged {} {} entries into {}",
        manifest.entries.len(),
        manifest.effect,
        out.display()
    );
    Ok(())
}

/// Exclusive marker held for the lifetime of a training run.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| format!("run directory {} is locked ({})", dir.display(), path.display()))?;
        Ok(Self(path))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn load_clips(root: &Path) -> Result<Vec<ClipSample>> {
    let manifest = DatasetManifest::read(&root.join(dataset::MANIFEST_FILE))?;
    manifest
        .entries
        .iter()
        .map(|e| {
            Ok(ClipSample {
                frames: dataset::load_entry_frames(root, e)?,
                condition: SampledCondition {
                    layer_index: e.layer,
                    bin_index: 0,
                    c: ControlScalar::new(e.c)?,
                },
                physical_value: e.physical_value,
                unit: manifest.effect.unit(),
                scene_id: e.scene_id.clone(),
                effect: manifest.effect,
            })
        })
        .collect()
}

fn prompts(path: Option<&Path>) -> Result<Vec<String>> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| camforge_core::Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            let list = parse_prompts(&text);
            if list.is_empty() {
                bail!("prompt file {} is empty", p.display());
            }
            Ok(list)
        }
        None => Ok(default_prompts()),
    }
}

fn checkpoint_name(step: u64) -> String {
    format!("step-{step:06}.ckpt")
}

fn train(mut cfg: RunConfig, a: &TrainArgs, out: &Path) -> Result<()> {
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(c) = a.cadence {
        cfg.train.cadence = c;
    }
    if let Some(lr) = a.lr {
        cfg.optim.lr = lr;
    }
    if a.adapter_only {
        cfg.optim.train_lora = false;
    }
    if let Some(d) = &a.dataset {
        cfg.train.dataset = Some(d.clone());
    }
    cfg.validate()?;
    create_dir(out)?;
    let _lock = RunLock::acquire(out)?;
    write_file(&out.join(CONFIG_SNAPSHOT), cfg.to_toml()?.as_bytes())?;
    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;

    let data_root = cfg.train.dataset.clone().unwrap_or_else(|| out.to_path_buf());
    let clips = load_clips(&data_root)?;
    let codec = LatentCodec::new(cfg.model.model_dim, cfg.fep.codec_seed);
    let samples = make_samples(&clips, &codec, &cfg.train.caption, cfg.model.text_dim, cfg.seed)?;
    info!("loaded {} samples from {}", samples.len(), data_root.display());

    let mut ckpt = Checkpoint::init(cfg.model.clone(), cfg.seed)?;
    let pristine = ckpt.pristine();
    let setup = FepSetup::new(codec, prompts(cfg.fep.prompts.as_deref())?);
    let mut monitor = FepMonitor::new(
        &pristine,
        setup,
        Box::new(FrameStatsProvider::default()),
        cfg.fep.latent_seed,
        &cfg.fep.baseline_seeds,
    )?;
    info!(
        "fep baseline: ssf {:.6}, ssfd {:.6}",
        monitor.baseline.ssf_base, monitor.baseline.ssfd_base
    );
    ckpt.save(&ckpt_dir.join(checkpoint_name(0)))?;

    let mut last_good = ckpt.clone();
    let result = train_loop(
        &mut ckpt,
        &samples,
        cfg.train.steps,
        BatchPlan {
            batch_size: cfg.train.batch_size,
        },
        &cfg.optim,
        cfg.train.cadence,
        |c| {
            let m = monitor.observe(c)?;
            info!("step {}: ssf {:.6} ssfd {:.6}", c.step, m.ssf, m.ssfd);
            c.save(&ckpt_dir.join(checkpoint_name(c.step)))?;
            last_good = c.clone();
            Ok(())
        },
    );

    let mut csv = Vec::new();
    write_fep_csv(&monitor.series, &monitor.baseline, &mut csv)?;
    write_file(&out.join(FEP_CSV), &csv)?;

    match result {
        Ok(losses) => {
            if cfg.train.cadence == 0 || !ckpt.step.is_multiple_of(cfg.train.cadence) {
                ckpt.save(&ckpt_dir.join(checkpoint_name(ckpt.step)))?;
            }
            if let Some(l) = losses.last() {
                info!("finished {} steps, last loss {l:.6}", ckpt.step);
            }
            Ok(())
        }
        Err(e) => {
            let keep = ckpt_dir.join("last-good.ckpt");
            last_good.save(&keep)?;
            Err(anyhow::Error::new(e).context(format!("training aborted; last good checkpoint kept at {}", keep.display())))
        }
    }
}

fn surgery(a: &SurgeryArgs) -> Result<()> {
    if a.input == a.output {
        bail!("surgery output must differ from its input");
    }
    let ck = Checkpoint::load(&a.input)?;
    match a.mode {
        SurgeryMode::Dirty => {
            let bytes = fs::read(&a.input).map_err(|e| camforge_core::Error::Io {
                path: a.input.clone(),
                source: e,
            })?;
            write_file(&a.output, &bytes)?;
        }
        SurgeryMode::Clean => surgery_prune(&ck).save(&a.output)?,
    }
    for i in 0..ck.config.n_blocks {
        let keep = a.mode == SurgeryMode::Dirty || ck.config.is_adapter_block(i);
        let adapter = if ck.params.adapters.contains_key(&i) { " + adapter" } else { "" };
        println!("block {i:2}: lora {}{adapter}", if keep { "retained" } else { "discarded" });
    }
    Ok(())
}

fn fep(cfg: &RunConfig, a: &FepArgs, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let ca = Checkpoint::load(&a.checkpoint_a)?;
    let cb = Checkpoint::load(&a.checkpoint_b)?;
    if ca.config.model_dim != cb.config.model_dim || ca.config.text_dim != cb.config.text_dim {
        bail!("checkpoints have different model or text dimensions");
    }
    let seed_a = seed.unwrap_or(cfg.fep.latent_seed);
    let seed_b = a.seed_b.unwrap_or(seed_a);
    let codec = LatentCodec::new(ca.config.model_dim, cfg.fep.codec_seed);
    let setup = FepSetup::new(codec, prompts(a.prompts.as_deref().or(cfg.fep.prompts.as_deref()))?);
    let provider = FrameStatsProvider::default();
    let ea = fep_embed(&ca, &setup, seed_a, &provider)?;
    let eb = fep_embed(&cb, &setup, seed_b, &provider)?;
    let m = fep_compare(&ea, &eb)?;
    let text = format!("seed_a,seed_b,ssf,ssfd\n{seed_a},{seed_b},{},{}\n", m.ssf, m.ssfd);
    print!("{text}");
    if let Some(p) = out {
        write_file(p, text.as_bytes())?;
    }
    Ok(())
}

fn spectra(a: &SpectraArgs, out: &Path) -> Result<()> {
    let pre = Checkpoint::load(&a.checkpoint_pre)?;
    let post = Checkpoint::load(&a.checkpoint_post)?;
    let sweep = depth_sweep(&pre, &post, &Target::ALL, a.k, a.eps)?;
    let dir = out.join("spectra");
    create_dir(&dir)?;
    let mut buf = Vec::new();
    sweep.write_heatmap_csv(&mut buf)?;
    write_file(&dir.join("heatmap.csv"), &buf)?;

    let sc = ShowdownConfig {
        c_strong: a.c_strong,
        tau: a.tau,
        ..ShowdownConfig::default()
    };
    let mut showdown = Vec::new();
    for &i in post.params.adapters.keys() {
        let r = checkpoint_showdown(&post, i, &sc)?;
        let mut buf = Vec::new();
        write_spectrum_csv(&r, &mut buf)?;
        write_file(&dir.join(format!("spectrum_block{i:02}.csv")), &buf)?;
        println!("block {i:2}: R_text {} R_cond {}", r.r_text, r.r_cond);
        showdown.push(r);
    }
    let summary = SpectraSummary {
        k: a.k,
        epsilon: a.eps,
        tau: a.tau,
        intruders_per_block: sweep.per_block(),
        total_intruders: sweep.total(),
        showdown,
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    write_file(&dir.join("summary.json"), json.as_bytes())?;
    println!("intruders per block: {:?} (total {})", summary.intruders_per_block, summary.total_intruders);
    Ok(())
}

fn svp(a: &SvpArgs, out: Option<&Path>) -> Result<()> {
    let file = fs::File::open(&a.scores).map_err(|e| camforge_core::Error::Io {
        path: a.scores.clone(),
        source: e,
    })?;
    let table = svp_ingest(file)?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    std::io::stdout().write_all(&buf)?;
    if !table.unknown_metrics.is_empty() {
        eprintln!("unknown metrics: {}", table.unknown_metrics.join(", "));
    }
    if let Some(p) = out {
        write_file(p, &buf)?;
    }
    Ok(())
}
