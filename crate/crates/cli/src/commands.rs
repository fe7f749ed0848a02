use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use pel_core::experiments::{self, ablation_csv};
use pel_core::metrics::perturb_csv;
use pel_core::net::{Checkpoint, ModuleKind, NetworkConfig, PelNetwork, StreamKind, Trainer, LOG_HEADER};
use pel_core::synth::{self, Label, PerturbSpec, Splits};
use pel_core::viz::{self, min_max_normalize};
use pel_core::{freq, Error, GrayImage, Result, RgbImage};

use crate::Common;

fn config(common: &Common) -> Result<NetworkConfig> {
    let mut cfg = match &common.config {
        Some(path) => NetworkConfig::load(path)?,
        None => NetworkConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn dataset(cfg: &NetworkConfig) -> Result<Splits> {
    synth::build_dataset(cfg.train_size, cfg.val_size, cfg.test_size, cfg.seed, cfg.input_size)
}

fn out_dir(common: &Common) -> Result<&Path> {
    fs::create_dir_all(&common.out)?;
    Ok(&common.out)
}

fn checkpoint_path(common: &Common, explicit: Option<&Path>) -> PathBuf {
    explicit.map_or_else(|| common.out.join("model.ckpt"), Path::to_path_buf)
}

/// Trained network plus its test data; `--seed` picks a different data seed.
fn load_model(common: &Common, explicit: Option<&Path>) -> Result<(PelNetwork, Splits)> {
    let path = checkpoint_path(common, explicit);
    let net = Checkpoint::load(&path)
        .map_err(|e| match e {
            Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
            other => other,
        })?
        .to_network()?;
    let mut data_cfg = net.config.clone();
    if let Some(seed) = common.seed {
        data_cfg.seed = seed;
    }
    let splits = dataset(&data_cfg)?;
    Ok((net, splits))
}

pub fn gen_data(common: &Common) -> Result<()> {
    let cfg = config(common)?;
    let dir = out_dir(common)?;
    synth::export_dataset(&dataset(&cfg)?, dir)?;
    println!(
        "wrote {} + {} + {} samples to {}",
        cfg.train_size,
        cfg.val_size,
        cfg.test_size,
        dir.display()
    );
    Ok(())
}

pub fn decompose(common: &Common, input: &Path, stride: usize) -> Result<()> {
    let img = RgbImage::read_ppm(input)?;
    let dir = out_dir(common)?;
    let f = freq::decompose(&img, stride)?;
    let d = f.flat.dims();
    for (c, &(plane, k)) in f.band_order.iter().enumerate() {
        let values = min_max_normalize(f.flat.plane(0, c));
        let name = format!("band_{plane:?}_{k:02}.pgm").to_lowercase();
        GrayImage::from_unit(d.w, d.h, &values)?.write_pgm(dir.join(name))?;
    }
    println!("wrote {} band maps of {}x{} to {}", d.c, d.w, d.h, dir.display());
    Ok(())
}

pub fn train(common: &Common, resume: Option<&Path>) -> Result<()> {
    let (mut trainer, fresh) = match resume {
        Some(path) => (Trainer::from_checkpoint(&Checkpoint::load(path)?)?, false),
        None => (Trainer::new(PelNetwork::new(config(common)?)?), true),
    };
    let dir = out_dir(common)?.to_path_buf();
    let cfg = trainer.net.config.clone();
    fs::write(dir.join("config.cfg"), cfg.to_text())?;
    let splits = dataset(&cfg)?;
    let log_path = dir.join("train_log.csv");
    if fresh {
        trainer.fit_freq_norm(&splits.train)?;
        fs::write(&log_path, format!("{LOG_HEADER}\n"))?;
    }
    println!("training {} parameters for {} epochs", trainer.net.num_params(), cfg.epochs);
    let ckpt_path = dir.join("model.ckpt");
    trainer.fit(&splits.train, &splits.val, |t, log| {
        let mut f = OpenOptions::new().create(true).append(true).open(&log_path)?;
        writeln!(f, "{log}")?;
        println!("{LOG_HEADER}: {log}");
        t.checkpoint().save(&ckpt_path)
    })?;
    trainer.checkpoint().save(&ckpt_path)?;
    println!("saved {}", ckpt_path.display());
    Ok(())
}

pub fn eval(common: &Common, checkpoint: Option<&Path>) -> Result<()> {
    let (net, splits) = load_model(common, checkpoint)?;
    let report = experiments::evaluate(&net, &splits.test)?;
    let path = out_dir(common)?.join("report.csv");
    report.write_csv(&path)?;
    println!("acc {} auc {} eer {} -> {}", report.acc, report.auc, report.eer, path.display());
    Ok(())
}

pub fn perturb_eval(common: &Common, checkpoint: Option<&Path>) -> Result<()> {
    let (net, splits) = load_model(common, checkpoint)?;
    let seed = common.seed.unwrap_or(net.config.seed);
    let report = experiments::perturb_eval(&net, &splits.test, &PerturbSpec::defaults(), seed)?;
    let table = perturb_csv(&report.deltas);
    fs::write(out_dir(common)?.join("perturb.csv"), &table)?;
    println!("clean acc {} auc {}", report.acc, report.auc);
    print!("{table}");
    Ok(())
}

pub fn ablate(common: &Common) -> Result<()> {
    let cfg = config(common)?;
    let splits = dataset(&cfg)?;
    let rows = experiments::run_ablation(&cfg, cfg.seed, &splits, |row, _| {
        println!("{:<18} acc {:.4} auc {:.4}", row.variant.name, row.acc, row.auc);
    })?;
    let path = out_dir(common)?.join("ablation.csv");
    fs::write(&path, ablation_csv(&rows))?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cam(common: &Common, checkpoint: Option<&Path>, stream: &str, block: usize, count: usize) -> Result<()> {
    let stream = StreamKind::parse(stream)?;
    let (net, splits) = load_model(common, checkpoint)?;
    let dir = out_dir(common)?.join("cam");
    fs::create_dir_all(&dir)?;
    for s in splits.test.iter().filter(|s| s.label == Label::Fake).take(count) {
        let map = viz::grad_cam(&net, &s.image, stream, block)?;
        let stem = format!("{}_{}_b{block}", s.id, stream.name());
        map.to_gray().write_pgm(dir.join(format!("{stem}.pgm")))?;
        map.overlay(&s.image).write_ppm(dir.join(format!("{stem}_overlay.ppm")))?;
        s.mask_image().write_pgm(dir.join(format!("{}_mask.pgm", s.id)))?;
        let (inside, outside) = map.inside_outside(&s.mask)?;
        println!("{stem}: mean inside mask {inside:.4}, outside {outside:.4}");
    }
    Ok(())
}

pub fn residuals(common: &Common, checkpoint: Option<&Path>, module: &str, block: usize, count: usize) -> Result<()> {
    let module = ModuleKind::parse(module)?;
    let (net, splits) = load_model(common, checkpoint)?;
    let dir = out_dir(common)?.join("residuals");
    fs::create_dir_all(&dir)?;
    for s in splits.test.iter().take(count) {
        for map in viz::enhancement_residual(&net, &s.image, block, module)? {
            let stem = format!("{}_{}_{}_b{block}", s.id, map.kind.name(), map.stream.name());
            map.to_gray().write_pgm(dir.join(format!("{stem}.pgm")))?;
            map.overlay(&s.image).write_ppm(dir.join(format!("{stem}_overlay.ppm")))?;
            println!("{stem}: mean residual {:.6}", map.raw_mean());
        }
    }
    Ok(())
}

