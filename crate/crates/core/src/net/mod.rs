//! The repainting network: an EdgeConv encoder that maps a 6-channel cloud
//! to a global feature, and a two-stage folding decoder that deforms a fixed
//! 2D grid, conditioned on that feature, into a 6-channel cloud.

pub mod checkpoint;
pub mod layers;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Matrix, Tape, Var};
use crate::chamfer::{ChamferConfig, Point6};
use crate::colorize::ColorScheme;
use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};

pub use checkpoint::{Blob, Checkpoint};
pub use layers::{edge_conv, knn_graph, EdgeMlp};

/// Half-width of the decoder's seed grid, which spans `[-0.3, 0.3]^2`.
pub const GRID_EXTENT: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Neighbors per point in every EdgeConv block.
    pub k: usize,
    /// Output width of each EdgeConv block.
    pub block_widths: Vec<usize>,
    /// Length of the global feature.
    pub feature_dim: usize,
    /// Leaky-ReLU slope after every layer.
    pub slope: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            k: 6,
            block_widths: vec![16, 16, 32],
            feature_dim: 128,
            slope: 0.2,
        }
    }
}

impl EncoderConfig {
    /// Full-size backbone: blocks (64, 64, 128), k = 20, 1024-d feature.
    pub fn full_scale() -> Self {
        EncoderConfig {
            k: 20,
            block_widths: vec![64, 64, 128],
            feature_dim: 1024,
            slope: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// The seed grid has `grid_side^2` points, which is also the output size.
    /// Zero means "pick `ceil(sqrt(N))` for the training clouds".
    pub grid_side: usize,
    /// Hidden width of both 3-layer folding MLPs.
    pub hidden: usize,
    pub slope: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            grid_side: 0,
            hidden: 64,
            slope: 0.2,
        }
    }
}

impl DecoderConfig {
    /// Smallest grid covering `points` outputs: `ceil(sqrt(points))` per side.
    pub fn grid_for(points: usize) -> usize {
        let mut g = (points as f64).sqrt().ceil() as usize;
        while g * g < points {
            g += 1;
        }
        g.max(1)
    }

    pub fn full_scale(points: usize) -> Self {
        DecoderConfig {
            grid_side: Self::grid_for(points),
            hidden: 512,
            slope: 0.2,
        }
    }
}

/// What the encoder sees: the uncolored cloud, or the scheme colors kept on
/// a `ratio` fraction of frames/joints as hints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InputMode {
    Raw,
    Hint(f64),
}

impl Default for InputMode {
    fn default() -> Self {
        InputMode::Hint(0.5)
    }
}

impl std::fmt::Display for InputMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InputMode::Raw => f.write_str("raw"),
            InputMode::Hint(r) => write!(f, "hint:{r}"),
        }
    }
}

impl From<InputMode> for String {
    fn from(m: InputMode) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for InputMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "raw" {
            return Ok(InputMode::Raw);
        }
        let ratio = match s {
            "hint" => Some(0.5),
            _ => s.strip_prefix("hint:").and_then(|r| r.parse::<f64>().ok()),
        };
        match ratio {
            Some(r) if (0.0..=1.0).contains(&r) => Ok(InputMode::Hint(r)),
            _ => Err(Error::Config(format!(
                "bad input mode `{s}` (raw, hint or hint:<ratio>)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub scheme: ColorScheme,
    pub input: InputMode,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.k == 0 || e.block_widths.is_empty() || e.block_widths.contains(&0) || e.feature_dim == 0 {
            return Err(Error::Config("encoder needs k >= 1 and non-zero widths".into()));
        }
        if self.decoder.grid_side == 0 || self.decoder.hidden == 0 {
            return Err(Error::Config("decoder needs a non-empty grid and hidden width".into()));
        }
        Ok(())
    }
}

/// Named parameter matrices in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<(String, Matrix)>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, value: Matrix) {
        self.entries.push((name.into(), value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn matrices(&self) -> impl Iterator<Item = &Matrix> {
        self.entries.iter().map(|(_, m)| m)
    }

    pub fn matrices_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.entries.iter_mut().map(|(_, m)| m)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.data().len()).sum()
    }

    /// Exact bit pattern of every value, in order.
    pub fn to_bits(&self) -> Vec<u64> {
        self.matrices()
            .flat_map(|m| m.data().iter().map(|v| v.to_bits()))
            .collect()
    }

    /// Registers every matrix on `tape`, as parameters or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.matrices()
            .map(|m| {
                if trainable {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                }
            })
            .collect()
    }

    pub fn to_blobs(&self) -> Vec<Blob> {
        self.iter()
            .map(|(n, m)| Blob {
                name: n.to_string(),
                shape: m.shape().to_vec(),
                data: m.data().to_vec(),
            })
            .collect()
    }

    /// Rebuilds a store with the same names and shapes as `template` from `ckpt`.
    pub fn from_checkpoint(template: &ParamStore, ckpt: &Checkpoint) -> Result<Self> {
        let mut out = ParamStore::default();
        for (name, m) in template.iter() {
            let blob = ckpt
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if blob.shape != m.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    blob.shape,
                    m.shape()
                )));
            }
            out.push(name, Matrix::from_vec(m.rows(), m.cols(), blob.data.clone())?);
        }
        Ok(out)
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`].
pub type ParamGrads = Vec<Matrix>;

pub fn collect_grads(grads: &Gradients, vars: &[Var], store: &ParamStore) -> ParamGrads {
    vars.iter()
        .zip(store.matrices())
        .map(|(&v, m)| grads.get_or_zero(v, m.shape()))
        .collect()
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for a weight and its bias.
fn init_linear(rng: &mut Rng, store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-bound..=bound)).collect::<Vec<_>>();
    let w = Matrix::from_vec(fan_in, fan_out, draw(fan_in * fan_out)).unwrap();
    let b = Matrix::from_vec(1, fan_out, draw(fan_out)).unwrap();
    store.push(format!("{name}.weight"), w);
    store.push(format!("{name}.bias"), b);
}

pub const INPUT_CHANNELS: usize = 6;

pub fn init_encoder(cfg: &EncoderConfig, rng: &mut Rng) -> ParamStore {
    let mut store = ParamStore::default();
    let mut width = INPUT_CHANNELS;
    for (b, &w) in cfg.block_widths.iter().enumerate() {
        init_linear(rng, &mut store, &format!("encoder.block{b}"), 2 * width, w);
        width = w;
    }
    let concat: usize = cfg.block_widths.iter().sum();
    init_linear(rng, &mut store, "encoder.proj", concat, cfg.feature_dim);
    store
}

pub fn init_decoder(cfg: &DecoderConfig, feature_dim: usize, rng: &mut Rng) -> ParamStore {
    let mut store = ParamStore::default();
    for (fold, seed_dim) in [(1, 2), (2, 6)] {
        let dims = [seed_dim + feature_dim, cfg.hidden, cfg.hidden, 6];
        for l in 0..3 {
            init_linear(
                rng,
                &mut store,
                &format!("decoder.fold{fold}.layer{l}"),
                dims[l],
                dims[l + 1],
            );
        }
    }
    store
}

/// Encoder and decoder of one colorization stream.
#[derive(Debug, Clone, PartialEq)]
pub struct RepaintModel {
    pub config: ModelConfig,
    pub encoder: ParamStore,
    pub decoder: ParamStore,
}

impl RepaintModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let encoder = init_encoder(&config.encoder, &mut rng_for(seed, "init/encoder"));
        let decoder = init_decoder(
            &config.decoder,
            config.encoder.feature_dim,
            &mut rng_for(seed, "init/decoder"),
        );
        Ok(RepaintModel {
            config,
            encoder,
            decoder,
        })
    }

    pub fn output_points(&self) -> usize {
        self.config.decoder.grid_side * self.config.decoder.grid_side
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        let c = &self.config;
        let widths: Vec<String> = c.encoder.block_widths.iter().map(|w| w.to_string()).collect();
        for (k, v) in [
            ("kind", "repaint_model".to_string()),
            ("scheme", c.scheme.name().to_string()),
            ("input", c.input.to_string()),
            ("encoder.k", c.encoder.k.to_string()),
            ("encoder.block_widths", widths.join(",")),
            ("encoder.feature_dim", c.encoder.feature_dim.to_string()),
            ("encoder.slope", c.encoder.slope.to_string()),
            ("decoder.grid_side", c.decoder.grid_side.to_string()),
            ("decoder.hidden", c.decoder.hidden.to_string()),
            ("decoder.slope", c.decoder.slope.to_string()),
        ] {
            ckpt.header.insert(k.to_string(), v);
        }
        ckpt.blobs = self.encoder.to_blobs();
        ckpt.blobs.extend(self.decoder.to_blobs());
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.header_value("kind")? != "repaint_model" {
            return Err(Error::Checkpoint("not a repaint model checkpoint".into()));
        }
        fn num<T: std::str::FromStr>(ckpt: &Checkpoint, key: &str) -> Result<T> {
            ckpt.header_value(key)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad value for `{key}`")))
        }
        let widths = ckpt
            .header_value("encoder.block_widths")?
            .split(',')
            .map(|w| w.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Checkpoint("bad encoder.block_widths".into()))?;
        let config = ModelConfig {
            scheme: ckpt.header_value("scheme")?.parse()?,
            input: ckpt.header_value("input")?.parse()?,
            encoder: EncoderConfig {
                k: num(ckpt, "encoder.k")?,
                block_widths: widths,
                feature_dim: num(ckpt, "encoder.feature_dim")?,
                slope: num(ckpt, "encoder.slope")?,
            },
            decoder: DecoderConfig {
                grid_side: num(ckpt, "decoder.grid_side")?,
                hidden: num(ckpt, "decoder.hidden")?,
                slope: num(ckpt, "decoder.slope")?,
            },
        };
        let template = RepaintModel::new(config, 0)?;
        Ok(RepaintModel {
            encoder: ParamStore::from_checkpoint(&template.encoder, ckpt)?,
            decoder: ParamStore::from_checkpoint(&template.decoder, ckpt)?,
            config: template.config,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Encoder forward pass on a tape: `input` is `n x 6`, the result `1 x F`.
/// `params` are the encoder store's vars in store order.
pub fn encoder_forward(tape: &mut Tape, cfg: &EncoderConfig, params: &[Var], input: Var) -> Result<Var> {
    let n = tape.value(input).rows();
    if n <= cfg.k {
        return Err(Error::TooFewPoints { n, k: cfg.k });
    }
    if tape.value(input).cols() != INPUT_CHANNELS {
        return Err(Error::shape(
            "encode",
            format!("input has {} channels", tape.value(input).cols()),
        ));
    }
    let mut x = input;
    let mut outputs = Vec::with_capacity(cfg.block_widths.len());
    for b in 0..cfg.block_widths.len() {
        // the graph is rebuilt in the current feature space for every block
        let graph = knn_graph(tape.value(x), cfg.k)?;
        let layer = [(params[2 * b], params[2 * b + 1])];
        x = edge_conv(
            tape,
            x,
            &graph,
            cfg.k,
            EdgeMlp {
                layers: &layer,
                slope: cfg.slope,
            },
        )?;
        outputs.push(x);
    }
    let mut cat = outputs[0];
    for &o in &outputs[1..] {
        cat = tape.concat_cols(cat, o)?;
    }
    let p = 2 * cfg.block_widths.len();
    let z = tape.matmul(cat, params[p])?;
    let z = tape.add_bias(z, params[p + 1])?;
    let z = tape.leaky_relu(z, cfg.slope);
    tape.max_rows(z)
}

/// The `grid_side^2 x 2` seed grid, row-major over a regular lattice.
pub fn folding_grid(side: usize) -> Matrix {
    let coord = |i: usize| {
        if side == 1 {
            0.0
        } else {
            -GRID_EXTENT + 2.0 * GRID_EXTENT * i as f64 / (side - 1) as f64
        }
    };
    let mut data = Vec::with_capacity(side * side * 2);
    for a in 0..side {
        for b in 0..side {
            data.push(coord(a));
            data.push(coord(b));
        }
    }
    Matrix::from_vec(side * side, 2, data).unwrap()
}

fn mlp3(tape: &mut Tape, mut h: Var, params: &[Var], slope: f64) -> Result<Var> {
    for l in 0..3 {
        let z = tape.matmul(h, params[2 * l])?;
        let z = tape.add_bias(z, params[2 * l + 1])?;
        h = if l < 2 { tape.leaky_relu(z, slope) } else { z };
    }
    Ok(h)
}

/// Decoder forward pass: `feature` is `1 x F`, the result `G^2 x 6`.
pub fn decoder_forward(tape: &mut Tape, cfg: &DecoderConfig, params: &[Var], feature: Var) -> Result<Var> {
    let m = cfg.grid_side * cfg.grid_side;
    let grid = tape.constant(folding_grid(cfg.grid_side));
    let codeword = tape.gather_rows(feature, vec![0; m])?;
    let in1 = tape.concat_cols(grid, codeword)?;
    let fold1 = mlp3(tape, in1, &params[..6], cfg.slope)?;
    let in2 = tape.concat_cols(fold1, codeword)?;
    let out = mlp3(tape, in2, &params[6..12], cfg.slope)?;
    tape.check_finite()?;
    Ok(out)
}

fn rows_of(m: &Matrix) -> Vec<Point6> {
    m.data().chunks(6).map(|c| c.try_into().unwrap()).collect()
}

pub fn encode(model: &RepaintModel, cloud: &[Point6]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = model.encoder.bind(&mut tape, false);
    let input = tape.constant(Matrix::from_rows(cloud));
    let f = encoder_forward(&mut tape, &model.config.encoder, &vars, input)?;
    tape.check_finite()?;
    Ok(tape.value(f).data().to_vec())
}

pub fn decode(model: &RepaintModel, feature: &[f64]) -> Result<Vec<Point6>> {
    if feature.len() != model.config.encoder.feature_dim {
        return Err(Error::shape(
            "decode",
            format!(
                "feature of length {}, expected {}",
                feature.len(),
                model.config.encoder.feature_dim
            ),
        ));
    }
    if feature.iter().any(|v| !v.is_finite()) {
        return Err(Error::NaNDetected("decode input"));
    }
    let mut tape = Tape::new();
    let vars = model.decoder.bind(&mut tape, false);
    let f = tape.constant(Matrix::from_vec(1, feature.len(), feature.to_vec())?);
    let out = decoder_forward(&mut tape, &model.config.decoder, &vars, f)?;
    Ok(rows_of(tape.value(out)))
}

pub fn forward_repaint(model: &RepaintModel, cloud: &[Point6]) -> Result<Vec<Point6>> {
    decode(model, &encode(model, cloud)?)
}

/// One repainting step's worth of work: the Chamfer loss between `target`
/// and the repainted `input`, with gradients for every encoder and decoder
/// parameter.
#[derive(Debug, Clone)]
pub struct RepaintGrads {
    pub loss: f64,
    pub encoder: ParamGrads,
    pub decoder: ParamGrads,
}

pub fn repaint_loss_grad(
    model: &RepaintModel,
    input: &[Point6],
    target: &[Point6],
    chamfer: &ChamferConfig,
) -> Result<RepaintGrads> {
    let mut tape = Tape::new();
    let enc = model.encoder.bind(&mut tape, true);
    let dec = model.decoder.bind(&mut tape, true);
    let x = tape.constant(Matrix::from_rows(input));
    let f = encoder_forward(&mut tape, &model.config.encoder, &enc, x)?;
    let out = decoder_forward(&mut tape, &model.config.decoder, &dec, f)?;
    let loss = tape.chamfer(out, target, chamfer)?;
    let grads = tape.backward(loss)?;
    Ok(RepaintGrads {
        loss: tape.value(loss).data()[0],
        encoder: collect_grads(&grads, &enc, &model.encoder),
        decoder: collect_grads(&grads, &dec, &model.decoder),
    })
}
