//! Self-supervised repainting: train one stream's encoder and decoder to map
//! its input cloud onto the fully colorized target under the Chamfer loss.

use log::info;
use rand::seq::SliceRandom;

use crate::chamfer::Point6;
use crate::error::{Error, Result};
use crate::net::{repaint_loss_grad, RepaintModel};
use crate::par;
use crate::rng::{derive_indexed, derive_seed, Rng};
use crate::training::config::PretrainConfig;
use crate::training::data::{model_input, repaint_target, UnlabeledSet};
use crate::training::optim::{epoch_lr, mean_grads, Adam};

use rand::SeedableRng;

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: RepaintModel,
    /// Mean repainting loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

/// Initial model for a stream: seeded from the run seed and the scheme name,
/// so streams never share weights.
pub fn init_stream_model(cfg: &PretrainConfig, max_points: usize) -> Result<RepaintModel> {
    let seed = derive_seed(cfg.seed, &format!("pretrain/init/{}", cfg.scheme));
    RepaintModel::new(cfg.model_config(max_points), seed)
}

pub fn pretrain_stream(data: &UnlabeledSet, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("pretraining needs at least one sequence".into()));
    }
    let mut model = init_stream_model(cfg, data.max_points())?;
    let (scheme, mode) = (model.config.scheme, model.config.input);
    let pairs: Vec<(Vec<Point6>, Vec<Point6>)> = par::try_map(data.clouds(), |c| {
        Ok::<_, Error>((model_input(c, scheme, mode)?, repaint_target(c, scheme)?))
    })?;

    let mut enc_opt = Adam::new(cfg.adam, model.encoder.matrices());
    let mut dec_opt = Adam::new(cfg.adam, model.decoder.matrices());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = epoch_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min);
        let mut rng = Rng::seed_from_u64(derive_indexed(
            cfg.seed,
            &format!("pretrain/shuffle/{scheme}"),
            epoch as u64,
        ));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(pairs.len());
        for batch in order.chunks(cfg.batch_size) {
            let results = par::try_map(batch, |&i| {
                let (input, target) = &pairs[i];
                repaint_loss_grad(&model, input, target, &cfg.chamfer)
            })?;
            losses.extend(results.iter().map(|r| r.loss));
            let enc: Vec<_> = results.iter().map(|r| r.encoder.clone()).collect();
            let dec: Vec<_> = results.iter().map(|r| r.decoder.clone()).collect();
            enc_opt.step(model.encoder.matrices_mut().collect(), &mean_grads(&enc), lr)?;
            dec_opt.step(model.decoder.matrices_mut().collect(), &mean_grads(&dec), lr)?;
        }
        let mean = par::pairwise_sum(&losses) / losses.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NaNDetected("pretraining loss"));
        }
        info!("pretrain {scheme} epoch {} lr {lr:.3e} loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }
    Ok(PretrainOutcome { model, epoch_losses })
}

/// A never-pretrained encoder on raw, uncolored input: the control for every
/// protocol. It shares the initial weights of the stream it is compared to.
pub fn baseline_model(cfg: &PretrainConfig, max_points: usize) -> Result<RepaintModel> {
    let mut model = init_stream_model(cfg, max_points)?;
    model.config.input = crate::net::InputMode::Raw;
    Ok(model)
}
