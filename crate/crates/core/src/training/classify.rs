//! Classification on top of stream encoders: feature fusion, the linear
//! classifier, the frozen linear probe and joint fine-tuning.

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};

use crate::autodiff::{Matrix, Tape, Var};
use crate::chamfer::Point6;
use crate::colorize::{ColorScheme, SkeletonCloud};
use crate::error::{Error, Result};
use crate::evalbench::Metrics;
use crate::net::{collect_grads, encode, encoder_forward, Blob, Checkpoint, RepaintModel};
use crate::par;
use crate::rng::{derive_indexed, derive_seed, rng_for, Rng};
use crate::training::config::{ClassifierConfig, Fusion, Protocol};
use crate::training::data::{model_input, LabeledSet};
use crate::training::optim::{epoch_lr, mean_grads, NesterovSgd};
use crate::training::subset::sample_from_pools;

fn scheme_rank(s: ColorScheme) -> usize {
    ColorScheme::ALL.iter().position(|&x| x == s).unwrap()
}

/// Concatenates per-stream features in temporal, spatial, person order,
/// whatever order they are given in.
pub fn fuse_features(streams: &[(ColorScheme, &[f64])]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..streams.len()).collect();
    order.sort_by_key(|&i| scheme_rank(streams[i].0));
    order.iter().flat_map(|&i| streams[i].1.iter().copied()).collect()
}

/// Sorts models into fusion order (stable for repeated schemes).
pub fn sort_streams(models: &mut [RepaintModel]) {
    models.sort_by_key(|m| scheme_rank(m.config.scheme));
}

fn check_models(models: &[RepaintModel]) -> Result<()> {
    if models.is_empty() {
        return Err(Error::Config("classification needs at least one stream model".into()));
    }
    Ok(())
}

/// Fused features of every cloud, computed with frozen encoders.
pub fn extract_features(models: &[RepaintModel], clouds: &[SkeletonCloud]) -> Result<Vec<Vec<f64>>> {
    check_models(models)?;
    par::try_map(clouds, |cloud| {
        let feats = models
            .iter()
            .map(|m| encode(m, &model_input(cloud, m.config.scheme, m.config.input)?))
            .collect::<Result<Vec<_>>>()?;
        let streams: Vec<(ColorScheme, &[f64])> = models
            .iter()
            .zip(&feats)
            .map(|(m, f)| (m.config.scheme, f.as_slice()))
            .collect();
        Ok(fuse_features(&streams))
    })
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `logits = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// `input_dim x classes`.
    pub weight: Matrix,
    /// `1 x classes`.
    pub bias: Matrix,
}

impl LinearClassifier {
    /// Uniform init in `[-1/sqrt(input_dim), 1/sqrt(input_dim)]`.
    pub fn new(input_dim: usize, class_count: usize, seed: u64) -> Self {
        let bound = 1.0 / (input_dim.max(1) as f64).sqrt();
        let mut rng = rng_for(seed, "init/classifier");
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-bound..=bound)).collect::<Vec<_>>();
        LinearClassifier {
            weight: Matrix::from_vec(input_dim, class_count, draw(input_dim * class_count)).unwrap(),
            bias: Matrix::from_vec(1, class_count, draw(class_count)).unwrap(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn class_count(&self) -> usize {
        self.weight.cols()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let c = self.class_count();
        let mut out = self.bias.data().to_vec();
        for (i, &xi) in x.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(&self.weight.data()[i * c..(i + 1) * c]) {
                *o += xi * w;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.is_finite()
    }
}

/// Z-scoring with statistics from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Reciprocal standard deviation; 1 for constant features.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for r in rows {
            var.iter_mut()
                .zip(r.iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 1e-24 { 1.0 / v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) * s)
            .collect()
    }
}

/// One linear head reading a subset of the fused streams.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    /// Indices into [`FusedClassifier::streams`].
    pub streams: Vec<usize>,
    pub standardizer: Option<Standardizer>,
    pub linear: LinearClassifier,
}

/// The classifier on top of fused stream features. With concatenation there
/// is a single head over all streams; with score fusion there is one head per
/// stream and their softmax outputs are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedClassifier {
    pub fusion: Fusion,
    /// Scheme and feature width of each stream, in fusion order.
    pub streams: Vec<(ColorScheme, usize)>,
    pub heads: Vec<Head>,
    pub class_count: usize,
}

impl FusedClassifier {
    pub fn new(fusion: Fusion, streams: Vec<(ColorScheme, usize)>, class_count: usize, seed: u64) -> Self {
        let groups: Vec<Vec<usize>> = match fusion {
            Fusion::Concat => vec![(0..streams.len()).collect()],
            Fusion::Score => (0..streams.len()).map(|i| vec![i]).collect(),
        };
        let heads = groups
            .into_iter()
            .enumerate()
            .map(|(h, group)| {
                let dim = group.iter().map(|&i| streams[i].1).sum();
                Head {
                    streams: group,
                    standardizer: None,
                    linear: LinearClassifier::new(dim, class_count, derive_indexed(seed, "classifier/head", h as u64)),
                }
            })
            .collect();
        FusedClassifier {
            fusion,
            streams,
            heads,
            class_count,
        }
    }

    /// Builds an untrained classifier sized for `models`, which must already
    /// be in fusion order.
    pub fn for_models(models: &[RepaintModel], fusion: Fusion, class_count: usize, seed: u64) -> Self {
        let streams = models
            .iter()
            .map(|m| (m.config.scheme, m.config.encoder.feature_dim))
            .collect();
        Self::new(fusion, streams, class_count, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.streams.iter().map(|s| s.1).sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for s in &self.streams {
            off.push(off.last().unwrap() + s.1);
        }
        off
    }

    /// The head's input: its streams' slices of the fused vector, standardized
    /// if the head carries statistics.
    pub fn head_input(&self, head: usize, fused: &[f64]) -> Vec<f64> {
        let off = self.offsets();
        let h = &self.heads[head];
        let x: Vec<f64> = h
            .streams
            .iter()
            .flat_map(|&s| fused[off[s]..off[s + 1]].iter().copied())
            .collect();
        match &h.standardizer {
            Some(st) => st.apply(&x),
            None => x,
        }
    }

    pub fn probabilities(&self, fused: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.class_count];
        for h in 0..self.heads.len() {
            let q = softmax(&self.heads[h].linear.logits(&self.head_input(h, fused)));
            p.iter_mut().zip(q).for_each(|(a, b)| *a += b);
        }
        let k = self.heads.len() as f64;
        p.iter_mut().for_each(|v| *v /= k);
        p
    }

    pub fn predict(&self, fused: &[f64]) -> usize {
        argmax(&self.probabilities(fused))
    }

    pub fn is_finite(&self) -> bool {
        self.heads.iter().all(|h| h.linear.is_finite())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        let streams: Vec<String> = self.streams.iter().map(|(s, d)| format!("{}:{d}", s.name())).collect();
        let fusion = match self.fusion {
            Fusion::Concat => "concat",
            Fusion::Score => "score",
        };
        let mut header = vec![
            ("kind".to_string(), "classifier".to_string()),
            ("fusion".to_string(), fusion.to_string()),
            ("class_count".to_string(), self.class_count.to_string()),
            ("streams".to_string(), streams.join(",")),
            ("heads".to_string(), self.heads.len().to_string()),
        ];
        for (i, h) in self.heads.iter().enumerate() {
            let ids: Vec<String> = h.streams.iter().map(|s| s.to_string()).collect();
            header.push((format!("head{i}.streams"), ids.join(",")));
            let blob = |name: String, m: &Matrix| Blob {
                name,
                shape: vec![m.rows(), m.cols()],
                data: m.data().to_vec(),
            };
            ckpt.blobs.push(blob(format!("head{i}.weight"), &h.linear.weight));
            ckpt.blobs.push(blob(format!("head{i}.bias"), &h.linear.bias));
            if let Some(st) = &h.standardizer {
                for (name, v) in [("mean", &st.mean), ("scale", &st.scale)] {
                    ckpt.blobs.push(Blob {
                        name: format!("head{i}.{name}"),
                        shape: vec![v.len()],
                        data: v.clone(),
                    });
                }
            }
        }
        ckpt.header = header.into_iter().collect();
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let bad = |what: &str| Error::Checkpoint(format!("bad classifier field `{what}`"));
        if ckpt.header_value("kind")? != "classifier" {
            return Err(Error::Checkpoint("not a classifier checkpoint".into()));
        }
        let fusion = match ckpt.header_value("fusion")? {
            "concat" => Fusion::Concat,
            "score" => Fusion::Score,
            _ => return Err(bad("fusion")),
        };
        let class_count: usize = ckpt
            .header_value("class_count")?
            .parse()
            .map_err(|_| bad("class_count"))?;
        let streams = ckpt
            .header_value("streams")?
            .split(',')
            .map(|s| {
                let (name, dim) = s.split_once(':').ok_or_else(|| bad("streams"))?;
                Ok((
                    name.parse::<ColorScheme>()?,
                    dim.parse::<usize>().map_err(|_| bad("streams"))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let head_count: usize = ckpt.header_value("heads")?.parse().map_err(|_| bad("heads"))?;
        let mut heads = Vec::with_capacity(head_count);
        for i in 0..head_count {
            let ids = ckpt
                .header_value(&format!("head{i}.streams"))?
                .split(',')
                .map(|s| s.parse::<usize>().ok().filter(|&v| v < streams.len()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("head streams"))?;
            let dim: usize = ids.iter().map(|&s| streams[s].1).sum();
            let matrix = |name: String, rows: usize, cols: usize| -> Result<Matrix> {
                let b = ckpt
                    .get(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing blob `{name}`")))?;
                if b.shape != [rows, cols] {
                    return Err(Error::Checkpoint(format!("blob `{name}` has shape {:?}", b.shape)));
                }
                Matrix::from_vec(rows, cols, b.data.clone())
            };
            let linear = LinearClassifier {
                weight: matrix(format!("head{i}.weight"), dim, class_count)?,
                bias: matrix(format!("head{i}.bias"), 1, class_count)?,
            };
            let standardizer = match (ckpt.get(&format!("head{i}.mean")), ckpt.get(&format!("head{i}.scale"))) {
                (Some(m), Some(s)) if m.data.len() == dim && s.data.len() == dim => Some(Standardizer {
                    mean: m.data.clone(),
                    scale: s.data.clone(),
                }),
                (None, None) => None,
                _ => return Err(bad("standardizer")),
            };
            heads.push(Head {
                streams: ids,
                standardizer,
                linear,
            });
        }
        Ok(FusedClassifier {
            fusion,
            streams,
            heads,
            class_count,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

/// `epoch,split,loss,accuracy` CSV.
pub fn metrics_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,split,loss,accuracy\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.split, r.loss, r.accuracy);
    }
    s
}

pub fn write_metrics_csv(records: &[EpochRecord], path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(records)).map_err(|e| Error::io(path, e))
}

/// Class probabilities for every cloud.
pub fn predict_probabilities(
    classifier: &FusedClassifier,
    models: &[RepaintModel],
    clouds: &[SkeletonCloud],
) -> Result<Vec<Vec<f64>>> {
    let feats = extract_features(models, clouds)?;
    if feats.first().is_some_and(|f| f.len() != classifier.input_dim()) {
        return Err(Error::shape("classify", "feature width does not match the classifier"));
    }
    Ok(par::map(&feats, |f| classifier.probabilities(f)))
}

/// Mean negative log-likelihood of the true labels.
pub fn mean_nll(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let terms: Vec<f64> = probs
        .iter()
        .zip(labels)
        .map(|(p, &l)| -p[l].max(f64::MIN_POSITIVE).ln())
        .collect();
    par::pairwise_sum(&terms) / terms.len().max(1) as f64
}

/// Result of training a classifier under any protocol.
#[derive(Debug, Clone)]
pub struct ClassifyOutcome {
    pub classifier: FusedClassifier,
    /// Per-epoch training rows followed by one `test` row.
    pub records: Vec<EpochRecord>,
    pub test: Metrics,
}

fn test_record(
    classifier: &FusedClassifier,
    models: &[RepaintModel],
    test: &LabeledSet,
    epoch: usize,
) -> Result<(EpochRecord, Metrics)> {
    let probs = predict_probabilities(classifier, models, &test.clouds)?;
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let metrics = Metrics::from_predictions(&pred, &test.labels, classifier.class_count)?;
    let record = EpochRecord {
        epoch,
        split: "test".into(),
        loss: mean_nll(&probs, &test.labels),
        accuracy: metrics.accuracy,
    };
    Ok((record, metrics))
}

fn check_sets(train: &LabeledSet, test: &LabeledSet) -> Result<()> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptySet);
    }
    if train.class_count != test.class_count {
        return Err(Error::Config(
            "train and test splits disagree on the class count".into(),
        ));
    }
    Ok(())
}

fn head_logits(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let z = tape.matmul(x, w)?;
    tape.add_bias(z, b)
}

/// Trains only the classifier on frozen encoder features and reports top-1
/// accuracy on `test`. The encoders are borrowed immutably and their bytes
/// are re-checked afterwards.
pub fn linear_probe(
    models: &[RepaintModel],
    train: &LabeledSet,
    test: &LabeledSet,
    cfg: &ClassifierConfig,
) -> Result<ClassifyOutcome> {
    cfg.validate()?;
    check_sets(train, test)?;
    check_models(models)?;
    let mut models_sorted = models.to_vec();
    sort_streams(&mut models_sorted);
    let models = models_sorted.as_slice();
    let before: Vec<Vec<u64>> = models.iter().map(|m| m.encoder.to_bits()).collect();

    let feats = extract_features(models, &train.clouds)?;
    let mut classifier = FusedClassifier::for_models(models, cfg.fusion, train.class_count, cfg.seed);
    let head_inputs: Vec<Vec<Vec<f64>>> = (0..classifier.heads.len())
        .map(|h| {
            let raw: Vec<Vec<f64>> = feats.iter().map(|f| classifier.head_input(h, f)).collect();
            if cfg.standardize {
                let st = Standardizer::fit(&raw);
                let out = raw.iter().map(|r| st.apply(r)).collect();
                classifier.heads[h].standardizer = Some(st);
                out
            } else {
                raw
            }
        })
        .collect();

    let mut opts: Vec<NesterovSgd> = classifier
        .heads
        .iter()
        .map(|h| NesterovSgd::new(cfg.momentum, [&h.linear.weight, &h.linear.bias]))
        .collect();
    let mut records = Vec::with_capacity(cfg.epochs + 1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = epoch_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min);
        let mut rng = Rng::seed_from_u64(derive_indexed(cfg.seed, "probe/shuffle", epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            for (h, opt) in opts.iter_mut().enumerate() {
                let head = &mut classifier.heads[h];
                let dim = head.linear.input_dim();
                let rows: Vec<f64> = batch.iter().flat_map(|&i| head_inputs[h][i].iter().copied()).collect();
                let mut tape = Tape::new();
                let x = tape.constant(Matrix::from_vec(batch.len(), dim, rows)?);
                let w = tape.param(head.linear.weight.clone());
                let b = tape.param(head.linear.bias.clone());
                let logits = head_logits(&mut tape, x, w, b)?;
                let loss = tape.cross_entropy(logits, &labels)?;
                let grads = tape.backward(loss)?;
                loss_sum += tape.value(loss).data()[0] * batch.len() as f64;
                let g = [
                    grads.get_or_zero(w, head.linear.weight.shape()),
                    grads.get_or_zero(b, head.linear.bias.shape()),
                ];
                opt.step(vec![&mut head.linear.weight, &mut head.linear.bias], &g, lr)?;
            }
        }
        if !classifier.is_finite() {
            return Err(Error::NaNDetected("linear probe weights"));
        }
        let correct = feats
            .iter()
            .zip(&train.labels)
            .filter(|(f, &l)| classifier.predict(f) == l)
            .count();
        let record = EpochRecord {
            epoch: epoch + 1,
            split: "train".into(),
            loss: loss_sum / (train.len() * classifier.heads.len()) as f64,
            accuracy: correct as f64 / train.len() as f64,
        };
        info!(
            "probe epoch {} lr {lr:.3e} loss {:.5} acc {:.4}",
            record.epoch, record.loss, record.accuracy
        );
        records.push(record);
    }
    let (record, metrics) = test_record(&classifier, models, test, cfg.epochs)?;
    records.push(record);

    let after: Vec<Vec<u64>> = models.iter().map(|m| m.encoder.to_bits()).collect();
    assert_eq!(before, after, "linear probe modified a frozen encoder");
    Ok(ClassifyOutcome {
        classifier,
        records,
        test: metrics,
    })
}

struct SampleStep {
    loss: f64,
    correct: bool,
    grads: Vec<Matrix>,
}

/// Forward and backward for one labeled sample through every encoder and
/// every head. Gradients are ordered like [`trainable_params`].
fn finetune_sample(
    models: &[RepaintModel],
    classifier: &FusedClassifier,
    inputs: &[Vec<Point6>],
    label: usize,
) -> Result<SampleStep> {
    let mut tape = Tape::new();
    let mut enc_vars = Vec::with_capacity(models.len());
    let mut feats = Vec::with_capacity(models.len());
    for (m, input) in models.iter().zip(inputs) {
        let vars = m.encoder.bind(&mut tape, true);
        let x = tape.constant(Matrix::from_rows(input));
        feats.push(encoder_forward(&mut tape, &m.config.encoder, &vars, x)?);
        enc_vars.push(vars);
    }
    let mut probs = vec![0.0; classifier.class_count];
    let mut head_vars = Vec::with_capacity(classifier.heads.len());
    let mut total: Option<Var> = None;
    for head in &classifier.heads {
        let mut x = feats[head.streams[0]];
        for &s in &head.streams[1..] {
            x = tape.concat_cols(x, feats[s])?;
        }
        let w = tape.param(head.linear.weight.clone());
        let b = tape.param(head.linear.bias.clone());
        let logits = head_logits(&mut tape, x, w, b)?;
        probs
            .iter_mut()
            .zip(softmax(tape.value(logits).data()))
            .for_each(|(a, q)| *a += q);
        let l = tape.cross_entropy(logits, &[label])?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
        head_vars.push((w, b));
    }
    let loss = tape.scale(total.expect("at least one head"), 1.0 / classifier.heads.len() as f64);
    let grads = tape.backward(loss)?;
    let mut out = Vec::new();
    for (m, vars) in models.iter().zip(&enc_vars) {
        out.extend(collect_grads(&grads, vars, &m.encoder));
    }
    for (head, (w, b)) in classifier.heads.iter().zip(head_vars) {
        out.push(grads.get_or_zero(w, head.linear.weight.shape()));
        out.push(grads.get_or_zero(b, head.linear.bias.shape()));
    }
    Ok(SampleStep {
        loss: tape.value(loss).data()[0],
        correct: argmax(&probs) == label,
        grads: out,
    })
}

/// Encoder parameters of every model, then each head's weight and bias.
fn trainable_params<'a>(models: &'a mut [RepaintModel], classifier: &'a mut FusedClassifier) -> Vec<&'a mut Matrix> {
    let mut out: Vec<&mut Matrix> = models.iter_mut().flat_map(|m| m.encoder.matrices_mut()).collect();
    for h in &mut classifier.heads {
        out.push(&mut h.linear.weight);
        out.push(&mut h.linear.bias);
    }
    out
}

/// Jointly trains the encoders and a fresh classifier on `train` with
/// cross-entropy, then reports accuracy on `test`. Decoders are untouched.
/// With zero epochs the models come back exactly as given.
pub fn finetune(
    mut models: Vec<RepaintModel>,
    train: &LabeledSet,
    test: &LabeledSet,
    cfg: &ClassifierConfig,
) -> Result<(Vec<RepaintModel>, ClassifyOutcome)> {
    cfg.validate()?;
    check_sets(train, test)?;
    check_models(&models)?;
    sort_streams(&mut models);
    let mut classifier = FusedClassifier::for_models(&models, cfg.fusion, train.class_count, cfg.seed);
    let inputs: Vec<Vec<Vec<Point6>>> = par::try_map(&train.clouds, |c| {
        models
            .iter()
            .map(|m| model_input(c, m.config.scheme, m.config.input))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut opt = {
        let params = trainable_params(&mut models, &mut classifier);
        NesterovSgd::new(cfg.momentum, params.into_iter().map(|m| &*m))
    };
    let mut records = Vec::with_capacity(cfg.epochs + 1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = epoch_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min);
        let mut rng = Rng::seed_from_u64(derive_indexed(cfg.seed, "finetune/shuffle", epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(train.len());
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let steps = par::try_map(batch, |&i| {
                finetune_sample(&models, &classifier, &inputs[i], train.labels[i])
            })?;
            losses.extend(steps.iter().map(|s| s.loss));
            correct += steps.iter().filter(|s| s.correct).count();
            let grads: Vec<Vec<Matrix>> = steps.into_iter().map(|s| s.grads).collect();
            opt.step(trainable_params(&mut models, &mut classifier), &mean_grads(&grads), lr)?;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            split: "train".into(),
            loss: par::pairwise_sum(&losses) / losses.len() as f64,
            accuracy: correct as f64 / train.len() as f64,
        };
        if !record.loss.is_finite() {
            return Err(Error::NaNDetected("fine-tuning loss"));
        }
        info!(
            "finetune epoch {} lr {lr:.3e} loss {:.5} acc {:.4}",
            record.epoch, record.loss, record.accuracy
        );
        records.push(record);
    }
    let (record, metrics) = test_record(&classifier, &models, test, cfg.epochs)?;
    records.push(record);
    Ok((
        models,
        ClassifyOutcome {
            classifier,
            records,
            test: metrics,
        },
    ))
}

/// Runs the configured protocol: a linear probe for `unsupervised`,
/// fine-tuning on a per-class labeled subset for `semi`, fine-tuning on the
/// whole training split for `supervised`. Returned models are in fusion order.
pub fn run_protocol(
    mut models: Vec<RepaintModel>,
    train: &LabeledSet,
    test: &LabeledSet,
    cfg: &ClassifierConfig,
) -> Result<(Vec<RepaintModel>, ClassifyOutcome)> {
    match cfg.protocol() {
        Protocol::Unsupervised => {
            let out = linear_probe(&models, train, test, cfg)?;
            sort_streams(&mut models);
            Ok((models, out))
        }
        Protocol::SemiSupervised(fraction) => {
            let subset = sample_from_pools(&train.class_pools(), fraction, derive_seed(cfg.seed, "subset"))?;
            info!(
                "semi-supervised subset: {} labeled samples ({:?} per class)",
                subset.len(),
                subset.counts()
            );
            finetune(models, &train.subset(&subset.ids()), test, cfg)
        }
        Protocol::Supervised => finetune(models, train, test, cfg),
    }
}
