// Scratch calibration harness: backbone convergence, shift degradation,
// full-model recovery. Not part of the test suite.
use csifeed::channel::{generate, normalize, split, ChannelConfig};
use csifeed::finetune::*;
use csifeed::update::{SpikeSlabPrior, UpdatePrior, UpdateQuantizer};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(15);
    let ft_epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let lambda: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5e4);
    let count: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(320);

    let base = ChannelConfig { seed: 100, ..Default::default() };
    let ds = normalize(&generate(&base, count).unwrap()).unwrap();
    let (train, val, test) = split(&ds, (0.4, 0.4, 0.2), 1).unwrap();
    eprintln!("dataset {} -> {}/{}/{}", count, train.len(), val.len(), test.len());

    let mut cfg = TrainConfig::backbone(lambda, 42);
    cfg.epochs = epochs;
    cfg.batch = 8;
    cfg.val_cap = 32;
    let t0 = Instant::now();
    let out = train_backbone(&train, &val, &cfg, None).unwrap();
    eprintln!("backbone {} epochs in {:.1}s", epochs, t0.elapsed().as_secs_f64());
    for h in &out.history {
        eprintln!("  epoch {:3} train {:10.3} val {:10.3}", h.epoch, h.train_loss, h.val_metric);
    }

    // in-distribution coded eval
    let indist = no_finetune_eval(&out.best, &test.samples).unwrap();
    eprintln!(
        "in-dist: rate_latent {:.4} b/elem, NMSE {:.2} dB",
        indist.aggregate.rate_latent, indist.aggregate.nmse_db
    );

    // shifted scenario
    let shifted_cfg = ChannelConfig { seed: 999, ..base }.shift(0.5, 2.0, 0);
    let shifted = normalize(&generate(&shifted_cfg, 300).unwrap()).unwrap();
    let h_t = &shifted.samples[..100];
    let h_e = &shifted.samples[100..300];
    let noft = no_finetune_eval(&out.best, h_e).unwrap();
    eprintln!(
        "shifted No-FT: rate_latent {:.4}, NMSE {:.2} dB (degradation {:.2} dB)",
        noft.aggregate.rate_latent,
        noft.aggregate.nmse_db,
        noft.aggregate.nmse_db - indist.aggregate.nmse_db
    );

    let mut fcfg = TrainConfig::finetune(Mode::FullModel, lambda, 7);
    fcfg.epochs = ft_epochs;
    fcfg.batch = 8;
    fcfg.patience = 10;
    fcfg.quantizer = UpdateQuantizer::default();
    fcfg.update_prior = UpdatePrior::SpikeSlab(SpikeSlabPrior::default());
    let t1 = Instant::now();
    let fm = finetune_full_model(&out.best, h_t, h_e, &fcfg).unwrap();
    eprintln!(
        "FM ({} epochs run, {:.1}s): rate_total {:.4} (latent {:.4} + update {:.4}), NMSE {:.2} dB, nonzero {} / {}",
        fm.epochs_run,
        t1.elapsed().as_secs_f64(),
        fm.aggregate.rate_total,
        fm.aggregate.rate_latent,
        fm.aggregate.rate_update,
        fm.aggregate.nmse_db,
        fm.nonzero_updates,
        fm.decoder.n_scalars()
    );
    eprintln!(
        "FM recovery {:.2} dB; rate vs NoFT latent: {:.1}%",
        noft.aggregate.nmse_db - fm.aggregate.nmse_db,
        100.0 * fm.aggregate.rate_total / noft.aggregate.rate_latent
    );
}
