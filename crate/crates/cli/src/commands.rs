use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sardine_core::dataset::{
    build_reference, extract_real_patches, make_synthetic_set, read_patch_set, read_raster, write_patch_set,
    write_raster, ReferenceConfig, Region, TemporalStack,
};
use sardine_core::metrics::{self, BlockSpec, MetricReport};
use sardine_core::model::{despeckle, load_checkpoint, save_checkpoint, train, Schedule, TileConfig, TrainConfig};
use sardine_core::speckle::{log_speckle_mean, simulate_speckle};
use sardine_core::{Format, Raster, SarCnnModel, SpeckleConfig};

use crate::args::*;
use crate::config::sidecar_path;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(command: &Command, effective: &str) -> Result<()> {
    let output = match command {
        Command::Simulate(a) => simulate(a)?,
        Command::BuildDataset(a) => build_dataset(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Despeckle(a) => despeckle_cmd(a)?,
        Command::Evaluate(a) => evaluate(a)?,
    };
    if let Some(out) = output {
        fs::write(sidecar_path(&out), effective)?;
    }
    Ok(())
}

/// Regular files of `dir`, sorted by name.
fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::usage(format!("cannot read {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn read(path: &Path) -> Result<Raster> {
    read_raster(path).map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })
}

fn read_all(dir: &Path) -> Result<Vec<Raster>> {
    let files = list_files(dir)?;
    if files.is_empty() {
        return Err(CliError::usage("no input rasters"));
    }
    files.iter().map(|f| read(f)).collect()
}

fn speckle_config(s: &Speckle, seed: u64) -> Result<SpeckleConfig> {
    Ok(SpeckleConfig::new(s.looks, s.format.into(), seed)?)
}

fn simulate(a: &SimulateArgs) -> Result<Option<PathBuf>> {
    let files = list_files(&a.input_dir)?;
    if files.is_empty() {
        return Err(CliError::usage("no input rasters"));
    }
    fs::create_dir_all(&a.output_dir)?;
    let mut manifest = String::from("file,seed_offset\n");
    let mut failed = 0;
    for (i, file) in files.iter().enumerate() {
        let cfg = speckle_config(&a.speckle, a.common.seed.wrapping_add(i as u64))?;
        let result = read(file).and_then(|clean| Ok(simulate_speckle(&clean, &cfg)?));
        let name = file.file_name().expect("listed files have names").to_string_lossy();
        match result {
            Ok(noisy) => {
                let stem = file.file_stem().expect("listed files have names").to_string_lossy();
                write_raster(&noisy, a.output_dir.join(format!("{stem}.sarf")))?;
                manifest.push_str(&format!("{name},{i}\n"));
            }
            Err(e) => {
                log::error!("{}", e.message);
                failed += 1;
            }
        }
    }
    fs::write(a.output_dir.join("manifest.csv"), manifest)?;
    if failed > 0 {
        return Err(CliError::usage(format!("{failed} of {} inputs failed", files.len())));
    }
    log::info!("simulated {} rasters", files.len());
    Ok(Some(a.output_dir.clone()))
}

fn parse_region(text: &str) -> Result<Region> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::usage(format!("split must be row,col,height,width, got {text:?}")))?;
    match parts[..] {
        [row, col, height, width] => Ok(Region { row, col, height, width }),
        _ => Err(CliError::usage(format!("split must be row,col,height,width, got {text:?}"))),
    }
}

/// Offsets and speckle use separate generator seeds.
fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x5DEE_CE66_D1CE_5EED
}

fn build_dataset(a: &BuildDatasetArgs) -> Result<Option<PathBuf>> {
    let seed = a.common.seed;
    let mut report = format!("mode={:?}\n", a.mode).to_lowercase();
    let (pairs, shortfall) = match a.mode {
        Mode::Synthetic => {
            let images = if a.input.is_dir() { read_all(&a.input)? } else { vec![read(&a.input)?] };
            let cfg = speckle_config(&a.speckle, noise_seed(seed))?;
            let (pairs, rep) = make_synthetic_set(&images, &cfg, a.count, seed)?;
            let requested = a.count * images.len();
            report += &format!(
                "images={}\nskipped={}\nrequested={requested}\ngenerated={}\n",
                images.len(),
                rep.skipped.len(),
                rep.generated
            );
            for (id, msg) in &rep.skipped {
                report += &format!("skipped_source_{id}={msg}\n");
            }
            (pairs, requested - rep.generated)
        }
        Mode::Multitemporal => {
            let looks = read_all(&a.input)?;
            if a.noisy_index >= looks.len() {
                return Err(CliError::usage(format!(
                    "noisy index {} out of range for {} acquisitions",
                    a.noisy_index,
                    looks.len()
                )));
            }
            let noisy = looks[a.noisy_index].clone();
            let stack = TemporalStack::new(looks, a.speckle.format.into())?;
            let cfg = ReferenceConfig { threshold: a.threshold, looks: a.speckle.looks, ..Default::default() };
            let (reference, mask) = build_reference(&stack, &cfg)?;
            let region = a.split.as_deref().map(parse_region).transpose()?;
            let (pairs, rep) = extract_real_patches(&reference, &noisy, &mask, a.count, seed, region)?;
            report += &format!(
                "acquisitions={}\ncandidates={}\neligible={}\nrequested={}\ngenerated={}\nmask_coverage={}\n",
                stack.len(),
                rep.candidates,
                rep.eligible,
                rep.requested,
                rep.returned,
                rep.mask_coverage
            );
            (pairs, rep.shortfall)
        }
    };
    report += &format!("shortfall={shortfall}\nshortfall_flag={}\n", shortfall > 0);
    if shortfall > 0 {
        log::warn!("patch set is {shortfall} patches short of the request");
    }
    write_patch_set(&pairs, &a.output)?;
    let mut report_path = a.output.as_os_str().to_owned();
    report_path.push(".report");
    fs::write(PathBuf::from(report_path), report)?;
    log::info!("wrote {} patch pairs to {}", pairs.len(), a.output.display());
    Ok(Some(a.output.clone()))
}

fn train_cmd(a: &TrainArgs) -> Result<Option<PathBuf>> {
    let schedule: Schedule = a.schedule.parse()?;
    let pairs = read_patch_set(&a.patches)?;
    let c = log_speckle_mean(a.speckle.looks, a.speckle.format.into());
    let mut model = SarCnnModel::<f32>::build(a.depth, a.width, a.common.seed)?;
    let cfg = TrainConfig { schedule: schedule.clone(), batch_size: a.batch, seed: a.common.seed, c };
    let rates: Vec<f64> = schedule.rates().collect();
    let mut csv = String::from("epoch,learning_rate,mean_loss\n");
    log::info!(
        "training depth {} width {} ({} parameters) on {} pairs",
        a.depth,
        a.width,
        model.parameter_count(),
        pairs.len()
    );
    let result = train(&mut model, &pairs, &cfg, |epoch, loss| {
        csv.push_str(&format!("{epoch},{},{}\n", rates[epoch - 1], metrics::format_value(loss)));
    });
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| {
        let mut p = a.output.as_os_str().to_owned();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    fs::write(&loss_path, csv)?;
    result?;
    save_checkpoint(&model, &a.output)?;
    Ok(Some(a.output.clone()))
}

fn despeckle_cmd(a: &DespeckleArgs) -> Result<Option<PathBuf>> {
    let model = load_checkpoint(&a.checkpoint)?;
    let noisy = read(&a.input)?;
    let c = a.c.unwrap_or_else(|| log_speckle_mean(a.speckle.looks, a.speckle.format.into()));
    let start = Instant::now();
    let out = despeckle(&model, &noisy, c, TileConfig { tile: a.tile, overlap: a.overlap })?;
    let seconds = start.elapsed().as_secs_f64();
    write_raster(&out, &a.output)?;
    println!("despeckle_seconds={seconds:.6}");
    let _ = std::io::stdout().flush();
    Ok(Some(a.output.clone()))
}

fn evaluate(a: &EvaluateArgs) -> Result<Option<PathBuf>> {
    if a.reference.is_none() && a.noisy.is_none() && a.blocks.is_none() {
        return Err(CliError::usage("no computable metric: give --reference, --noisy or --blocks"));
    }
    let format: Format = a.speckle.format.into();
    let filtered = read(&a.filtered)?;
    let name = a
        .name
        .clone()
        .unwrap_or_else(|| a.filtered.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()));
    let mut report = MetricReport { name, ..Default::default() };
    if let Some(path) = &a.reference {
        let reference = read(path)?;
        let peak = match a.peak.as_str() {
            "auto" => metrics::auto_peak(&reference),
            p => p.parse().map_err(|_| CliError::usage(format!("peak must be a number or `auto`, got {p:?}")))?,
        };
        report.psnr = Some(metrics::psnr(&reference, &filtered, peak)?);
        report.ssim = Some(metrics::ssim(&reference, &filtered, peak)?);
    }
    if let Some(path) = &a.noisy {
        let noisy = read(path)?;
        report.ratio = Some(metrics::ratio_metrics(&noisy, &filtered, format, a.speckle.looks)?);
    }
    if let Some(path) = &a.blocks {
        let blocks = BlockSpec::read(path)?;
        report.enl = Some(metrics::enl(&filtered, &blocks, format)?);
    }
    let csv = metrics::to_csv(std::slice::from_ref(&report));
    match &a.output {
        Some(path) => {
            fs::write(path, &csv)?;
            Ok(Some(path.clone()))
        }
        None => {
            print!("{csv}");
            Ok(None)
        }
    }
}
