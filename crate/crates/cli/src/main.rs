//! `csilab`: experiment runner for the CSI feedback lab.
//!
//! Subcommands cover the full loop: `gen-data` writes channel datasets,
//! `train` fits a feedback codec (and optionally the receiver-side
//! refiner), `evaluate` scores a model or the grid baseline on a test set,
//! `sweep` chains all of that over several schemes, and `report` merges
//! CSV reports. `CSILAB_THREADS` caps the worker threads used for data
//! generation, angle extraction, and the symbol simulation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use csilab_core::baseline::{dequantize_uniform, quantize_uniform, standard_overhead_bits, UniformGrid};
use csilab_core::channel::{
    angles_dataset, generate_dataset, load_dataset, load_sidecar, save_dataset, targets_from_cfr,
    CfrSequence, ChannelConfig,
};
use csilab_core::config::{load_config, resolve_config, ExperimentConfig, Scheme};
use csilab_core::eval::{
    gamma_from_evm, gross_throughput, net_throughput, nmse, report_csv, simulate_evm_parallel,
    ReportRow, REPORT_HEADER,
};
use csilab_core::givens::{AngleSet, GivensConfig};
use csilab_core::model::{load_model, save_model, ModelFile};
use csilab_core::pipeline::run_sequence;
use csilab_core::refine::{run_refined_sequence, train_refiner_on_pairs};
use csilab_core::train::{train_ad, train_initial};
use csilab_core::vqcodec::{CodecGeometry, Variant};

#[derive(Parser)]
#[command(
    name = "csilab",
    version,
    about = "Wi-Fi CSI feedback lab: datasets, codecs, refinement, link metrics",
    after_help = "Set CSILAB_THREADS to cap worker threads. Config files are JSON, \
deep-merged onto built-in defaults; --set key.path=value overrides single keys."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a channel dataset (.cfrd plus a .json sidecar).
    GenData {
        /// Experiment config (JSON) merged onto defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dot-path overrides, e.g. --set channel.n_c=8
        #[arg(long = "set")]
        set: Vec<String>,
        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,
        /// Which split to generate: "train" (master seed) or "test"
        /// (master seed + 1).
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Train a feedback codec (and refiner if configured) on a dataset.
    Train {
        /// Scheme shorthand; same as --set scheme=<value>.
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        data: PathBuf,
        /// Output model path (.cfm).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Score a model (or the standard grid baseline) on a test dataset.
    Evaluate {
        /// Trained model; omit to evaluate the standard scheme.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        report: PathBuf,
        /// Scheme shorthand; same as --set scheme=<value>.
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Generate data, train, and evaluate several schemes end to end.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
        /// Directory for datasets, models, and the combined report.
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated schemes (default: the config's scheme).
        #[arg(long, value_delimiter = ',')]
        schemes: Vec<String>,
    },
    /// Merge evaluation CSVs and print an aligned table.
    Report {
        /// Comma-separated input CSVs.
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        /// Optional merged CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::GenData { config, set, out, split } => gen_data(config.as_deref(), &set, &out, &split),
        Cmd::Train { scheme, data, out, config, set } => {
            let cfg = config_with_scheme(config.as_deref(), &set, scheme.as_deref())?;
            train_cmd(&cfg, &data, &out)
        }
        Cmd::Evaluate { model, data, report, scheme, config, set } => {
            let cfg = config_with_scheme(config.as_deref(), &set, scheme.as_deref())?;
            evaluate_cmd(&cfg, model.as_deref(), &data, &report)
        }
        Cmd::Sweep { config, set, out_dir, schemes } => {
            let cfg = config_with_scheme(config.as_deref(), &set, None)?;
            sweep_cmd(&cfg, &out_dir, &schemes)
        }
        Cmd::Report { inputs, out } => report_cmd(&inputs, out.as_deref()),
    }
}

fn config_with_scheme(
    config: Option<&Path>,
    set: &[String],
    scheme: Option<&str>,
) -> anyhow::Result<ExperimentConfig> {
    let mut overrides: Vec<String> = set.to_vec();
    if let Some(s) = scheme {
        Scheme::parse(s)?; // fail fast with the scheme list
        overrides.push(format!("scheme={s}"));
    }
    let cfg = match config {
        Some(path) => load_config(path, &overrides)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => resolve_config(None, &overrides)?,
    };
    Ok(cfg)
}

fn gen_data(config: Option<&Path>, set: &[String], out: &Path, split: &str) -> anyhow::Result<()> {
    let cfg = config_with_scheme(config, set, None)?;
    let (count, seed) = match split {
        "train" => (cfg.dataset.train_sequences, cfg.dataset.master_seed),
        "test" => (cfg.dataset.test_sequences, cfg.dataset.master_seed + 1),
        other => bail!("unknown split '{other}' (expected train or test)"),
    };
    let seqs = generate_dataset(&cfg.channel, seed, count)?;
    save_dataset(out, &cfg.channel, &seqs)?;
    println!(
        "wrote {} ({split}: {count} sequences of {} snapshots, seed {seed})",
        out.display(),
        cfg.channel.t_len
    );
    Ok(())
}

/// Load a dataset and check that its geometry matches the experiment.
fn load_matching_dataset(
    cfg: &ExperimentConfig,
    path: &Path,
) -> anyhow::Result<(ChannelConfig, Vec<CfrSequence>)> {
    let sidecar = load_sidecar(path)
        .with_context(|| format!("reading sidecar of {}", path.display()))?;
    let c = &cfg.channel;
    if (sidecar.n_t, sidecar.n_r, sidecar.n_s, sidecar.n_c) != (c.n_t, c.n_r, c.n_s, c.n_c) {
        bail!(
            "dataset geometry N_t={} N_r={} N_s={} N_c={} does not match the config's \
             N_t={} N_r={} N_s={} N_c={}",
            sidecar.n_t,
            sidecar.n_r,
            sidecar.n_s,
            sidecar.n_c,
            c.n_t,
            c.n_r,
            c.n_s,
            c.n_c
        );
    }
    let seqs = load_dataset(path).with_context(|| format!("reading {}", path.display()))?;
    Ok((sidecar, seqs))
}

fn flatten(seqs: &[Vec<AngleSet>]) -> Vec<Vec<Vec<f64>>> {
    seqs.iter().map(|s| s.iter().map(AngleSet::to_flat).collect()).collect()
}

fn train_model(cfg: &ExperimentConfig, angles: &[Vec<AngleSet>]) -> anyhow::Result<ModelFile> {
    let Some(variant) = cfg.scheme.variant() else {
        bail!("the standard scheme is a fixed quantizer; there is nothing to train");
    };
    let geom = CodecGeometry {
        n_a: cfg.n_a(),
        n_c: cfg.channel.n_c,
        n_sub: cfg.n_sub,
        dim: cfg.dim,
    };
    let flat = flatten(angles);
    let (initial, report) = train_initial(&flat, geom, cfg.bits, &cfg.train_initial)?;
    println!(
        "trained initial codec: {} epochs, loss {:.4} -> {:.4}",
        report.epoch_losses.len(),
        report.epoch_losses.first().copied().unwrap_or(f64::NAN),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    let codec = if variant == Variant::Initial {
        initial
    } else {
        let (codec, report) = train_ad(
            variant,
            &flat,
            &initial,
            &cfg.selection,
            cfg.bits_residual,
            &cfg.train_ad,
        )?;
        println!(
            "trained {} stage: {} epochs, loss {:.4} -> {:.4}",
            variant.as_str(),
            report.epoch_losses.len(),
            report.epoch_losses.first().copied().unwrap_or(f64::NAN),
            report.epoch_losses.last().copied().unwrap_or(f64::NAN)
        );
        codec
    };
    let refiner = if cfg.refined {
        let mut recons = Vec::with_capacity(angles.len());
        for seq in angles {
            recons.push(run_sequence(&codec, &cfg.selection, seq)?.reconstructions);
        }
        let (refiner, report) = train_refiner_on_pairs(angles, &recons, cfg.window, &cfg.refiner)?;
        println!(
            "trained refiner: {}+{} epochs, recursive loss {:.4}",
            report.pre_losses.len(),
            report.recursive_losses.len(),
            report.recursive_losses.last().copied().unwrap_or(f64::NAN)
        );
        Some(refiner)
    } else {
        None
    };
    Ok(ModelFile { codec, refiner })
}

fn train_cmd(cfg: &ExperimentConfig, data: &Path, out: &Path) -> anyhow::Result<()> {
    let (_, seqs) = load_matching_dataset(cfg, data)?;
    let angles = angles_dataset(&seqs, cfg.channel.n_s)?;
    let file = train_model(cfg, &angles)?;
    save_model(out, &file)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Everything evaluate needs about one scheme's reconstructions.
struct SchemeRun {
    label: String,
    feedback_bits: usize,
    /// Emitted angle estimates per sequence.
    emitted: Vec<Vec<AngleSet>>,
}

fn run_standard(cfg: &ExperimentConfig, angles: &[Vec<AngleSet>]) -> anyhow::Result<SchemeRun> {
    let grid = UniformGrid::new(cfg.bits_phi, cfg.bits_psi)?;
    let n_a = cfg.n_a();
    let emitted = angles
        .iter()
        .map(|seq| seq.iter().map(|a| dequantize_uniform(&quantize_uniform(a, &grid), &grid)).collect())
        .collect();
    Ok(SchemeRun {
        label: format!("standard_b{}_{}", cfg.bits_phi, cfg.bits_psi),
        feedback_bits: standard_overhead_bits(n_a, cfg.channel.n_c, &grid),
        emitted,
    })
}

fn run_model_scheme(
    cfg: &ExperimentConfig,
    file: &ModelFile,
    angles: &[Vec<AngleSet>],
) -> anyhow::Result<SchemeRun> {
    let mut emitted = Vec::with_capacity(angles.len());
    let mut feedback_bits = 0;
    for seq in angles {
        let run = run_sequence(&file.codec, &cfg.selection, seq)?;
        feedback_bits = run.message_bits.iter().copied().max().unwrap_or(0).max(feedback_bits);
        let est = match &file.refiner {
            Some(r) => run_refined_sequence(r, &run.reconstructions)?,
            None => run.reconstructions,
        };
        emitted.push(est);
    }
    let mut label = file.codec.variant.as_str().to_string();
    if file.refiner.is_some() {
        label.push_str("+refined");
    }
    Ok(SchemeRun { label, feedback_bits, emitted })
}

fn evaluate_run(
    cfg: &ExperimentConfig,
    seqs: &[CfrSequence],
    run: &SchemeRun,
) -> anyhow::Result<ReportRow> {
    let gcfg = GivensConfig::new(cfg.channel.n_t, cfg.channel.n_s)?;
    let mut references = Vec::new();
    let mut precoders = Vec::new();
    let mut channels = Vec::new();
    for (seq, est) in seqs.iter().zip(&run.emitted) {
        let targets = targets_from_cfr(seq, cfg.channel.n_s)?;
        for (t, est_t) in est.iter().enumerate() {
            let recon = csilab_core::givens::reconstruct_target(&gcfg, est_t)?;
            for (k, v_hat) in recon.into_iter().enumerate() {
                references.push(targets[t][k].clone());
                precoders.push(v_hat);
                channels.push(seq.matrix(t, k));
            }
        }
    }
    let nm = nmse(&references, &precoders)?;
    let evm = simulate_evm_parallel(
        &channels,
        &precoders,
        cfg.channel.n_s,
        cfg.eval.symbols_per_channel,
        cfg.eval.snr_db,
        cfg.dataset.master_seed,
    )?;
    let gamma = gamma_from_evm(evm.db);
    let gross = gross_throughput(gamma, &cfg.eval.phy);
    let net = net_throughput(gross, &cfg.eval.overhead, &cfg.eval.phy, run.feedback_bits);
    Ok(ReportRow {
        scheme: run.label.clone(),
        feedback_bits: run.feedback_bits,
        nmse_db: nm.db,
        evm_db: evm.db,
        gamma,
        gross_mbps: gross / 1e6,
        net_mbps: net / 1e6,
    })
}

fn cap_sequences<'a>(cfg: &ExperimentConfig, seqs: &'a [CfrSequence]) -> &'a [CfrSequence] {
    match cfg.eval.max_sequences {
        0 => seqs,
        n => &seqs[..n.min(seqs.len())],
    }
}

fn evaluate_cmd(
    cfg: &ExperimentConfig,
    model: Option<&Path>,
    data: &Path,
    report: &Path,
) -> anyhow::Result<()> {
    let (_, seqs) = load_matching_dataset(cfg, data)?;
    let seqs = cap_sequences(cfg, seqs.as_slice());
    let truth = angles_dataset(seqs, cfg.channel.n_s)?;
    let run = match model {
        Some(path) => {
            let file = load_model(path).with_context(|| format!("reading {}", path.display()))?;
            run_model_scheme(cfg, &file, &truth)?
        }
        None => {
            if cfg.scheme != Scheme::Standard {
                bail!(
                    "scheme '{}' needs --model; only the standard grid baseline runs without one",
                    cfg.scheme.as_str()
                );
            }
            run_standard(cfg, &truth)?
        }
    };
    let row = evaluate_run(cfg, seqs, &run)?;
    std::fs::write(report, report_csv(std::slice::from_ref(&row)))?;
    println!(
        "{}: {} bits, NMSE {:.2} dB, EVM {:.2} dB, net {:.2} Mb/s -> {}",
        row.scheme,
        row.feedback_bits,
        row.nmse_db,
        row.evm_db,
        row.net_mbps,
        report.display()
    );
    Ok(())
}

fn sweep_cmd(cfg: &ExperimentConfig, out_dir: &Path, schemes: &[String]) -> anyhow::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let schemes: Vec<Scheme> = if schemes.is_empty() {
        vec![cfg.scheme]
    } else {
        schemes.iter().map(|s| Scheme::parse(s)).collect::<csilab_core::Result<_>>()?
    };
    let train_path = out_dir.join("train.cfrd");
    let test_path = out_dir.join("test.cfrd");
    let train_seqs =
        generate_dataset(&cfg.channel, cfg.dataset.master_seed, cfg.dataset.train_sequences)?;
    save_dataset(&train_path, &cfg.channel, &train_seqs)?;
    let test_seqs =
        generate_dataset(&cfg.channel, cfg.dataset.master_seed + 1, cfg.dataset.test_sequences)?;
    save_dataset(&test_path, &cfg.channel, &test_seqs)?;
    println!(
        "datasets: {} train / {} test sequences under {}",
        train_seqs.len(),
        test_seqs.len(),
        out_dir.display()
    );

    let train_angles = angles_dataset(&train_seqs, cfg.channel.n_s)?;
    let eval_seqs = cap_sequences(cfg, &test_seqs);
    let test_angles = angles_dataset(eval_seqs, cfg.channel.n_s)?;

    let mut rows = Vec::new();
    for scheme in schemes {
        let mut scfg = cfg.clone();
        scfg.scheme = scheme;
        scfg.validate()?;
        let run = if scheme == Scheme::Standard {
            run_standard(&scfg, &test_angles)?
        } else {
            let file = train_model(&scfg, &train_angles)?;
            let model_path = out_dir.join(format!("{}.cfm", scheme.as_str()));
            save_model(&model_path, &file)?;
            println!("wrote {}", model_path.display());
            run_model_scheme(&scfg, &file, &test_angles)?
        };
        let row = evaluate_run(&scfg, eval_seqs, &run)?;
        println!(
            "{}: {} bits, NMSE {:.2} dB, EVM {:.2} dB, net {:.2} Mb/s",
            row.scheme, row.feedback_bits, row.nmse_db, row.evm_db, row.net_mbps
        );
        rows.push(row);
    }
    let report_path = out_dir.join("report.csv");
    std::fs::write(&report_path, report_csv(&rows))?;
    println!("wrote {}", report_path.display());
    Ok(())
}

fn report_cmd(inputs: &[PathBuf], out: Option<&Path>) -> anyhow::Result<()> {
    let mut rows: Vec<Vec<String>> = Vec::new();
    for path in inputs {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == REPORT_HEADER => {}
            other => bail!(
                "{}: expected header '{REPORT_HEADER}', found {:?}",
                path.display(),
                other.unwrap_or("")
            ),
        }
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let fields: Vec<String> = line.split(',').map(str::to_string).collect();
            if fields.len() != REPORT_HEADER.split(',').count() {
                bail!("{}: malformed row '{line}'", path.display());
            }
            rows.push(fields);
        }
    }
    let header: Vec<&str> = REPORT_HEADER.split(',').collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, f) in widths.iter_mut().zip(row) {
            *w = (*w).max(f.len());
        }
    }
    let print_row = |fields: &[String]| {
        let cells: Vec<String> =
            fields.iter().zip(&widths).map(|(f, w)| format!("{f:>w$}", w = w)).collect();
        println!("{}", cells.join("  "));
    };
    print_row(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    for row in &rows {
        print_row(row);
    }
    if let Some(path) = out {
        let mut text = String::from(REPORT_HEADER);
        text.push('\n');
        for row in &rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        std::fs::write(path, text)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
