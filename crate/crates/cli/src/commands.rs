//! Command implementations. Each returns `csifeed::Result<()>`; main maps
//! error variants onto process exit codes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use csifeed::bitstream::Bitstream;
use csifeed::channel::{self, CsiDataset, CsiSample};
use csifeed::checkpoint::Checkpoint;
use csifeed::codec;
use csifeed::csibin;
use csifeed::error::{Error, Result};
use csifeed::finetune::{
    self, finetune_encoder_only, finetune_full_model, genie_aided, no_finetune_eval, schedule,
    train_backbone, Mode, RdPoint, SessionResult, TrainConfig,
};
use csifeed::rng::derive_seed;
use csifeed::update::{SpikeSlabPrior, UpdatePrior, UpdateQuantizer};
use serde::Serialize;

use crate::spec::{file_hash, ExperimentSpec};
use crate::svg;
use crate::table::{ResultTable, Row};

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| Error::Config(format!("cannot create {}: {}", path.display(), e)))
}

fn lambda_tag(lambda: f64) -> String {
    format!("{:e}", lambda).replace('-', "m")
}

// ── gen ──────────────────────────────────────────────────────────────

pub fn cmd_gen(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    spec.validate()?;
    ensure_dir(out)?;
    let base_cfg = spec.dataset.base_config(spec.seed);
    let base = channel::normalize(&channel::generate(&base_cfg, spec.dataset.count)?)?;
    let (train, val, test) = channel::split(&base, spec.dataset.fractions, spec.seed)?;
    csibin::write_with_manifest(&train, Some(&base_cfg), &out.join("train.csib"))?;
    csibin::write_with_manifest(&val, Some(&base_cfg), &out.join("val.csib"))?;
    csibin::write_with_manifest(&test, Some(&base_cfg), &out.join("test.csib"))?;

    let eval_cfg = spec.dataset.shifted_config(derive_seed(spec.seed, "eval-scene", 0));
    let mut stream = channel::normalize(&channel::generate(&eval_cfg, spec.dataset.eval_count)?)?;
    stream.tag = Some("eval-stream".into());
    csibin::write_with_manifest(&stream, Some(&eval_cfg), &out.join("eval.csib"))?;

    println!(
        "gen: {} train / {} val / {} test (base), {} eval-stream (shifted) -> {}",
        train.len(),
        val.len(),
        test.len(),
        stream.len(),
        out.display()
    );
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────

pub fn cmd_train(spec: &ExperimentSpec, data: &Path, out: &Path, resume: bool) -> Result<()> {
    spec.validate()?;
    ensure_dir(out)?;
    let train = csibin::read(&data.join("train.csib"))?;
    let val = csibin::read(&data.join("val.csib"))?;
    let test = csibin::read(&data.join("test.csib"))?;

    let mut frontier = ResultTable::new();
    for &lambda in &spec.train.lambdas {
        let tag = lambda_tag(lambda);
        let best_path = out.join(format!("model_lambda{}.ckpt", tag));
        let last_path = out.join(format!("model_lambda{}.last.ckpt", tag));
        let mut cfg = TrainConfig::backbone(lambda, spec.seed);
        cfg.epochs = spec.train.epochs;
        cfg.batch = spec.train.batch;
        cfg.lr = spec.train.lr;

        let resume_ck = if resume && last_path.exists() {
            Some(Checkpoint::load(&last_path)?)
        } else {
            None
        };
        let t0 = Instant::now();
        let outcome = train_backbone(&train, &val, &cfg, resume_ck.as_ref())?;
        let wall = t0.elapsed().as_secs_f64();
        outcome.best.save(&best_path)?;
        outcome.last.save(&last_path)?;

        let mut hist = String::from("epoch,train_loss,val_metric\n");
        for h in &outcome.history {
            hist.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, h.val_metric));
        }
        std::fs::write(out.join(format!("history_lambda{}.csv", tag)), hist)?;

        let eval = no_finetune_eval(&outcome.best, &test.samples)?;
        println!(
            "train lambda={}: rate {:.4} b/elem, NMSE {:.2} dB ({:.0}s) -> {}",
            lambda,
            eval.aggregate.rate_latent,
            eval.aggregate.nmse_db,
            wall,
            best_path.display()
        );
        frontier.rows.push(Row {
            experiment: "backbone".into(),
            mode: "backbone".into(),
            lambda,
            interval: 0,
            n_bins: 0,
            rate_latent: eval.aggregate.rate_latent,
            rate_update: 0.0,
            rate_total: eval.aggregate.rate_total,
            nmse_db: eval.aggregate.nmse_db,
            nonzero_updates: 0,
            wall_time_s: wall,
        });
    }
    frontier.write(&out.join("rd_frontier.csv"))?;
    Ok(())
}

// ── finetune ─────────────────────────────────────────────────────────

fn parse_mode(name: &str) -> Result<Option<Mode>> {
    match name {
        "no_ft" => Ok(None),
        "encoder_only" | "eo" => Ok(Some(Mode::EncoderOnly)),
        "full_model" | "fm" => Ok(Some(Mode::FullModel)),
        "genie_aided" | "ga" => Ok(Some(Mode::GenieAided)),
        other => Err(Error::Config(format!(
            "unknown mode {:?} (expected no_ft, encoder_only, full_model, genie_aided)",
            other
        ))),
    }
}

fn finetune_config(spec: &ExperimentSpec, mode: Mode, seed: u64) -> Result<TrainConfig> {
    let f = &spec.finetune;
    let quantizer = UpdateQuantizer::new(f.t, f.n_bins)?;
    let update_prior = if f.uniform_prior {
        UpdatePrior::Uniform
    } else {
        UpdatePrior::SpikeSlab(SpikeSlabPrior::new(f.sigma, f.t, f.alpha)?)
    };
    Ok(TrainConfig {
        mode,
        lambda: f.lambda,
        lambda_m: f.lambda_m,
        lr: f.lr,
        batch: f.batch,
        epochs: f.epochs,
        seed,
        quantizer,
        update_prior,
        patience: f.patience,
        holdout_frac: 0.2,
        val_cap: 64,
    })
}

#[derive(Serialize)]
struct SessionManifest<'a> {
    mode: String,
    seed: u64,
    lambda: f64,
    ft_count: usize,
    eval_count: usize,
    checkpoint_hash: String,
    bitstream: Option<String>,
    nonzero_updates: usize,
    epochs_run: usize,
    aggregate: RdPoint,
    per_sample: &'a [RdPoint],
}

fn mode_name(mode: Option<Mode>) -> String {
    mode.map(|m| m.to_string()).unwrap_or_else(|| "no_ft".into())
}

fn write_recon(
    session: &SessionResult,
    h_e: &[CsiSample],
    out: &Path,
    stem: &str,
) -> Result<PathBuf> {
    // encoder-side reconstructions through the real coding path
    let prior = codec::FactorizedPrior::from_params(&session.decoder)?;
    let mut recon = Vec::with_capacity(h_e.len());
    for s in h_e {
        let z = codec::encode_features(&s.h, &session.encoder)?;
        let zbar = csifeed::latent::quantize_unit(&z);
        let _ = &prior;
        let hhat = codec::decode_features(&csifeed::latent::dequantize(&zbar), &session.decoder)?;
        recon.push(CsiSample { h: hhat });
    }
    let ds = CsiDataset {
        samples: recon,
        n_tx: h_e[0].h.shape()[1],
        n_sub: h_e[0].h.shape()[2],
        normalized: false,
        fingerprint: format!("recon-{}", stem),
        tag: Some("reconstruction".into()),
    };
    let path = out.join(format!("{}_recon.csib", stem));
    csibin::write(&ds, &path)?;
    Ok(path)
}

pub fn cmd_finetune(spec: &ExperimentSpec, data: &Path, ckpt_path: &Path, out: &Path) -> Result<()> {
    spec.validate()?;
    ensure_dir(out)?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let stream = csibin::read(&data.join("eval.csib"))?;
    let ft_count = spec.finetune.ft_count.min(stream.len().saturating_sub(1));
    if ft_count == 0 || stream.len() <= ft_count {
        return Err(Error::Config(format!(
            "eval stream of {} samples cannot supply {} fine-tuning samples",
            stream.len(),
            spec.finetune.ft_count
        )));
    }
    let h_t = &stream.samples[..ft_count];
    let h_e = &stream.samples[ft_count..];
    let ckpt_hash = file_hash(ckpt_path)?;

    let mut table = ResultTable::new();
    let mut manifests = Vec::new();
    for mode_name_str in &spec.finetune.modes {
        let mode = parse_mode(mode_name_str)?;
        for &seed in &spec.finetune.seeds {
            let t0 = Instant::now();
            let session = match mode {
                None => no_finetune_eval(&ckpt, h_e)?,
                Some(Mode::EncoderOnly) => {
                    finetune_encoder_only(&ckpt, h_t, h_e, &finetune_config(spec, Mode::EncoderOnly, seed)?)?
                }
                Some(Mode::FullModel) => {
                    finetune_full_model(&ckpt, h_t, h_e, &finetune_config(spec, Mode::FullModel, seed)?)?
                }
                Some(Mode::GenieAided) => {
                    genie_aided(&ckpt, h_t, h_e, &finetune_config(spec, Mode::GenieAided, seed)?)?
                }
                Some(Mode::Backbone) => unreachable!(),
            };
            let wall = t0.elapsed().as_secs_f64();
            let stem = format!("{}_seed{}", mode_name(session.mode), seed);
            let bits_path = out.join(format!("{}.bits", stem));
            session.bitstream.write_to(&bits_path)?;
            write_recon(&session, h_e, out, &stem)?;

            println!(
                "{}: rate {:.4} (latent {:.4} + update {:.4}), NMSE {:.2} dB, nonzero {} ({:.0}s)",
                stem,
                session.aggregate.rate_total,
                session.aggregate.rate_latent,
                session.aggregate.rate_update,
                session.aggregate.nmse_db,
                session.nonzero_updates,
                wall
            );
            table.rows.push(Row {
                experiment: "finetune".into(),
                mode: mode_name(session.mode),
                lambda: spec.finetune.lambda,
                interval: stream.len(),
                n_bins: spec.finetune.n_bins,
                rate_latent: session.aggregate.rate_latent,
                rate_update: session.aggregate.rate_update,
                rate_total: session.aggregate.rate_total,
                nmse_db: session.aggregate.nmse_db,
                nonzero_updates: session.nonzero_updates,
                wall_time_s: wall,
            });
            manifests.push(serde_json::to_value(SessionManifest {
                mode: mode_name(session.mode),
                seed,
                lambda: spec.finetune.lambda,
                ft_count,
                eval_count: h_e.len(),
                checkpoint_hash: ckpt_hash.clone(),
                bitstream: Some(bits_path.display().to_string()),
                nonzero_updates: session.nonzero_updates,
                epochs_run: session.epochs_run,
                aggregate: session.aggregate,
                per_sample: &session.per_sample,
            })?);
        }
    }
    table.write(&out.join("results.csv"))?;
    std::fs::write(out.join("sessions.json"), serde_json::to_vec_pretty(&manifests)?)?;
    Ok(())
}

// ── decode ───────────────────────────────────────────────────────────

#[allow(clippy::too_many_arguments)]
pub fn cmd_decode(
    spec: &ExperimentSpec,
    bits_path: &Path,
    ckpt_path: &Path,
    out_path: &Path,
    expect: Option<&Path>,
    eval_path: Option<&Path>,
    manifest_path: Option<&Path>,
) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let bs = Bitstream::read_from(bits_path)?;
    let f = &spec.finetune;
    let quantizer = UpdateQuantizer::new(f.t, f.n_bins)?;
    let update_prior = if f.uniform_prior {
        UpdatePrior::Uniform
    } else {
        UpdatePrior::SpikeSlab(SpikeSlabPrior::new(f.sigma, f.t, f.alpha)?)
    };
    let latent_shape = [codec::LATENT_CHANNELS, ckpt.n_tx / 4, ckpt.n_sub / 4];
    let (_, recons) = finetune::decode_session(&bs, &ckpt.decoder, &quantizer, &update_prior, &latent_shape)?;
    if recons.is_empty() {
        return Err(Error::Coder("bitstream carries no latent sections".into()));
    }

    let ds = CsiDataset {
        samples: recons.iter().map(|h| CsiSample { h: h.clone() }).collect(),
        n_tx: ckpt.n_tx,
        n_sub: ckpt.n_sub,
        normalized: false,
        fingerprint: "decoded".into(),
        tag: Some("reconstruction".into()),
    };
    csibin::write(&ds, out_path)?;
    println!("decode: {} reconstructions -> {}", recons.len(), out_path.display());

    if let Some(expect_path) = expect {
        let ours = std::fs::read(out_path)?;
        let theirs = std::fs::read(expect_path)?;
        if ours != theirs {
            return Err(Error::Coder(format!(
                "decoded reconstructions differ from {}",
                expect_path.display()
            )));
        }
        println!("decode: bit-exact match with {}", expect_path.display());
    }

    if let (Some(eval_path), Some(manifest_path)) = (eval_path, manifest_path) {
        let stream = csibin::read(eval_path)?;
        let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(manifest_path)?)?;
        let entry = manifest
            .as_array()
            .and_then(|a| {
                a.iter().find(|m| {
                    m.get("bitstream").and_then(|b| b.as_str()).map(|s| s.ends_with(
                        bits_path.file_name().unwrap().to_str().unwrap(),
                    )) == Some(true)
                })
            })
            .ok_or_else(|| Error::Config("bitstream not found in session manifest".into()))?;
        let ft_count = entry["ft_count"].as_u64().unwrap_or(0) as usize;
        let recorded = entry["aggregate"]["nmse_db"].as_f64().unwrap_or(f64::NAN);
        let h_e = &stream.samples[ft_count..];
        if h_e.len() != recons.len() {
            return Err(Error::Coder(format!(
                "{} reconstructions for {} evaluation samples",
                recons.len(),
                h_e.len()
            )));
        }
        let mut ratio = 0.0;
        for (h, r) in h_e.iter().zip(&recons) {
            ratio += finetune::nmse_ratio(&h.h, r);
        }
        let nmse = finetune::nmse_db(ratio / recons.len() as f64);
        // recomputation must agree with the manifest; decoded planes pass
        // through f32 on disk, the in-memory path is exact
        if (nmse - recorded).abs() > 1e-12 {
            return Err(Error::Coder(format!(
                "recomputed NMSE {} differs from manifest {}",
                nmse, recorded
            )));
        }
        println!("decode: NMSE recomputed {:.4} dB matches manifest", nmse);
    }
    Ok(())
}

// ── sweep ────────────────────────────────────────────────────────────

pub fn cmd_sweep(
    spec: &ExperimentSpec,
    data: &Path,
    ckpt_path: &Path,
    out: &Path,
    kind: &str,
) -> Result<()> {
    spec.validate()?;
    ensure_dir(out)?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let stream = csibin::read(&data.join("eval.csib"))?;

    if kind == "interval" || kind == "both" {
        let mut table = ResultTable::new();
        for &interval in &spec.sweep.intervals {
            let cfg = finetune_config(spec, Mode::FullModel, spec.seed)?;
            let ft = spec.finetune.ft_count.min(interval.saturating_sub(1)).max(1);
            let t0 = Instant::now();
            let sessions = schedule(&ckpt, &stream, interval, ft, &cfg)?;
            let wall = t0.elapsed().as_secs_f64();
            // pool coded bits and errors over all windows
            let mut update_bits = 0.0;
            let mut latent_bits = 0.0;
            let mut ratio = 0.0;
            let mut evaluated = 0usize;
            let mut nonzero = 0usize;
            let csi = (stream.n_tx * stream.n_sub) as f64;
            for s in &sessions {
                evaluated += s.per_sample.len();
                nonzero += s.nonzero_updates;
                for p in &s.per_sample {
                    latent_bits += p.rate_latent * csi;
                    ratio += 10f64.powf(p.nmse_db / 10.0);
                }
                update_bits += s.aggregate.rate_update * csi * s.per_sample.len() as f64;
            }
            let rate_latent = latent_bits / (evaluated as f64 * csi);
            let rate_update = update_bits / (evaluated as f64 * csi);
            let row = Row {
                experiment: "interval-sweep".into(),
                mode: "full_model".into(),
                lambda: spec.finetune.lambda,
                interval,
                n_bins: spec.finetune.n_bins,
                rate_latent,
                rate_update,
                rate_total: rate_latent + rate_update,
                nmse_db: finetune::nmse_db(ratio / evaluated as f64),
                nonzero_updates: nonzero,
                wall_time_s: wall,
            };
            println!(
                "interval {}: rate_update {:.5}, rate_total {:.4}, NMSE {:.2} dB ({} sessions)",
                interval,
                row.rate_update,
                row.rate_total,
                row.nmse_db,
                sessions.len()
            );
            table.rows.push(row);
        }
        table.write(&out.join("sweep_interval.csv"))?;
    }

    if kind == "nbins" || kind == "both" {
        let ft_count = spec.finetune.ft_count.min(stream.len().saturating_sub(1));
        let h_t = &stream.samples[..ft_count];
        let h_e = &stream.samples[ft_count..];
        let mut table = ResultTable::new();
        for &n in &spec.sweep.n_bins_list {
            let mut fspec = spec.clone();
            fspec.finetune.n_bins = n;
            let cfg = finetune_config(&fspec, Mode::FullModel, spec.seed)?;
            let t0 = Instant::now();
            let session = finetune_full_model(&ckpt, h_t, h_e, &cfg)?;
            let wall = t0.elapsed().as_secs_f64();
            println!(
                "n_bins {}: rate {:.4}, NMSE {:.2} dB, nonzero {}",
                n, session.aggregate.rate_total, session.aggregate.nmse_db, session.nonzero_updates
            );
            table.rows.push(Row {
                experiment: "nbins-sweep".into(),
                mode: "full_model".into(),
                lambda: spec.finetune.lambda,
                interval: stream.len(),
                n_bins: n,
                rate_latent: session.aggregate.rate_latent,
                rate_update: session.aggregate.rate_update,
                rate_total: session.aggregate.rate_total,
                nmse_db: session.aggregate.nmse_db,
                nonzero_updates: session.nonzero_updates,
                wall_time_s: wall,
            });
        }
        table.write(&out.join("sweep_nbins.csv"))?;
    }
    Ok(())
}

// ── plot ─────────────────────────────────────────────────────────────

fn column_value(row: &Row, col: &str) -> Result<f64> {
    Ok(match col {
        "lambda" => row.lambda,
        "interval" => row.interval as f64,
        "n_bins" => row.n_bins as f64,
        "rate_latent" => row.rate_latent,
        "rate_update" => row.rate_update,
        "rate_total" => row.rate_total,
        "nmse_db" => row.nmse_db,
        "nonzero_updates" => row.nonzero_updates as f64,
        "wall_time_s" => row.wall_time_s,
        other => return Err(Error::Config(format!("unknown column {:?}", other))),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_plot(
    table_path: &Path,
    out_path: &Path,
    kind: &str,
    x: &str,
    y: &str,
    title: Option<&str>,
) -> Result<()> {
    let table = ResultTable::read(table_path)?;
    if table.rows.is_empty() {
        return Err(Error::Config("result table has no rows".into()));
    }
    let svg_text = match kind {
        "line" => {
            // one series per distinct mode, rows in stored order
            let mut names: Vec<String> = Vec::new();
            for r in &table.rows {
                if !names.contains(&r.mode) {
                    names.push(r.mode.clone());
                }
            }
            let mut series = Vec::new();
            for name in names {
                let pts: Result<Vec<(f64, f64)>> = table
                    .rows
                    .iter()
                    .filter(|r| r.mode == name)
                    .map(|r| Ok((column_value(r, x)?, column_value(r, y)?)))
                    .collect();
                series.push(svg::Series { name, points: pts? });
            }
            svg::line_plot(title.unwrap_or("rd"), x, y, &series)
        }
        "bars" => {
            let labels: Vec<String> =
                table.rows.iter().map(|r| format!("{} l={:e}", r.mode, r.lambda)).collect();
            let latent: Vec<f64> = table.rows.iter().map(|r| r.rate_latent).collect();
            let update: Vec<f64> = table.rows.iter().map(|r| r.rate_update).collect();
            svg::stacked_bars(
                title.unwrap_or("rate breakdown"),
                &labels,
                &[("rate_latent".into(), latent), ("rate_update".into(), update)],
            )
        }
        other => return Err(Error::Config(format!("unknown plot kind {:?}", other))),
    };
    std::fs::write(out_path, &svg_text)?;
    // companion CSV with exactly the plotted values
    let mut csv = format!("{},{},mode\n", x, y);
    for r in &table.rows {
        csv.push_str(&format!("{},{},{}\n", column_value(r, x)?, column_value(r, y)?, r.mode));
    }
    std::fs::write(out_path.with_extension("csv"), csv)?;
    println!("plot: {} -> {}", table_path.display(), out_path.display());
    Ok(())
}
