//! Mention typing: a four-channel classifier that reads a mention's left
//! context, its surface form through two embedding spaces, and its right
//! context, and predicts the cluster the mention's entity belongs to.

use crate::artifact::{ArtifactReader, ArtifactWriter};
use crate::contexts::{ContextFormat, ContextWindow, TypingInstance};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::{
    self, clip_global_norm, dropout_mask, softmax, Linear, Lstm, LstmTrace, Parameters, Sgd,
    Tensor,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::path::Path;

/// How each channel turns a token sequence into a fixed vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// Average pooling followed by an affine map and tanh.
    Mean,
    /// LSTM encoders: unidirectional over the contexts (the right context is
    /// read inward, i.e. reversed), bidirectional over the surface channels.
    Recurrent,
}

impl EncoderKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EncoderKind::Mean => "mean",
            EncoderKind::Recurrent => "recurrent",
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(EncoderKind::Mean),
            "recurrent" => Ok(EncoderKind::Recurrent),
            "cnn" => Err(Error::invalid(
                "the cnn encoder is not supported; use `mean` or `recurrent`",
            )),
            other => Err(Error::invalid(format!("unknown encoder kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct TypingConfig {
    pub encoder: EncoderKind,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub epochs: usize,
    /// Context sequences are truncated to this many tokens per channel,
    /// keeping the tokens nearest the mention.
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for TypingConfig {
    fn default() -> Self {
        TypingConfig {
            encoder: EncoderKind::Recurrent,
            hidden_dim: 600,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1.2e-6,
            clip_norm: 2.0,
            batch_size: 200,
            dropout: 0.5,
            epochs: 20,
            max_tokens: 50,
            seed: 1,
        }
    }
}

impl TypingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.batch_size == 0 || self.epochs == 0 || self.max_tokens == 0
        {
            return Err(Error::invalid("typing config sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must be in [0, 1)"));
        }
        if self.learning_rate <= 0.0 || self.clip_norm <= 0.0 {
            return Err(Error::invalid("learning rate and clip norm must be positive"));
        }
        Ok(())
    }
}

/// Token lookup for one embedding space.
#[derive(Debug, Clone)]
struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_table(table: &EmbeddingTable) -> Vocabulary {
        let tokens: Vec<String> = table.vocab().to_vec();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary> {
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }
}

fn tensor_from_table(table: &EmbeddingTable) -> Tensor {
    let rows = (0..table.len()).map(|i| table.vector(i).to_vec()).collect();
    Tensor::from_rows(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Channel {
    Left,
    Surface1,
    Surface2,
    Right,
}

const CHANNELS: [Channel; 4] = [Channel::Left, Channel::Surface1, Channel::Surface2, Channel::Right];

#[derive(Debug, Clone)]
enum Encoder {
    Mean(Linear),
    Uni(Lstm),
    Bi(Lstm, Lstm),
}

impl Encoder {
    fn output_dim(&self, hidden: usize) -> usize {
        match self {
            Encoder::Mean(_) | Encoder::Uni(_) => hidden,
            Encoder::Bi(_, _) => 2 * hidden,
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        match self {
            Encoder::Mean(l) => l.visit(f),
            Encoder::Uni(l) => l.visit(f),
            Encoder::Bi(a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        match self {
            Encoder::Mean(l) => l.visit_mut(f),
            Encoder::Uni(l) => l.visit_mut(f),
            Encoder::Bi(a, b) => {
                a.visit_mut(f);
                b.visit_mut(f);
            }
        }
    }
}

/// The typing model. The left and right channels share one embedding table;
/// each channel has its own trainable vector for out-of-vocabulary tokens.
#[derive(Debug, Clone)]
pub struct TypingModel {
    pub config: TypingConfig,
    pub format: ContextFormat,
    pub num_classes: u32,
    context_vocab: Vocabulary,
    context_table: Tensor,
    surface1_vocab: Vocabulary,
    surface1_table: Tensor,
    surface2: Option<(Vocabulary, Tensor)>,
    unknown_left: Tensor,
    unknown_surface1: Tensor,
    unknown_surface2: Option<Tensor>,
    unknown_right: Tensor,
    enc_left: Encoder,
    enc_surface1: Encoder,
    enc_surface2: Option<Encoder>,
    enc_right: Encoder,
    output: Linear,
}

impl Parameters for TypingModel {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        f(&self.context_table);
        f(&self.surface1_table);
        if let Some((_, t)) = &self.surface2 {
            f(t);
        }
        f(&self.unknown_left);
        f(&self.unknown_surface1);
        if let Some(t) = &self.unknown_surface2 {
            f(t);
        }
        f(&self.unknown_right);
        self.enc_left.visit(f);
        self.enc_surface1.visit(f);
        if let Some(e) = &self.enc_surface2 {
            e.visit(f);
        }
        self.enc_right.visit(f);
        self.output.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.context_table);
        f(&mut self.surface1_table);
        if let Some((_, t)) = &mut self.surface2 {
            f(t);
        }
        f(&mut self.unknown_left);
        f(&mut self.unknown_surface1);
        if let Some(t) = &mut self.unknown_surface2 {
            f(t);
        }
        f(&mut self.unknown_right);
        self.enc_left.visit_mut(f);
        self.enc_surface1.visit_mut(f);
        if let Some(e) = &mut self.enc_surface2 {
            e.visit_mut(f);
        }
        self.enc_right.visit_mut(f);
        self.output.visit_mut(f);
    }
}

/// Forward-pass cache for one channel, kept for the backward pass.
struct ChannelTrace {
    /// Embedding row per kept token; None marks the unknown vector.
    rows: Vec<Option<usize>>,
    /// Embedded vectors after input dropout.
    inputs: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    mean: Option<(Vec<f64>, Vec<f64>)>,
    uni: Option<LstmTrace>,
    bi: Option<(LstmTrace, LstmTrace)>,
    output: Vec<f64>,
}

struct ForwardTrace {
    channels: Vec<ChannelTrace>,
    concat: Vec<f64>,
    concat_mask: Vec<f64>,
    concat_dropped: Vec<f64>,
    probs: Vec<f64>,
}

impl TypingModel {
    /// Builds a model whose embeddings start from the given pretrained
    /// tables. `context` embeds the left/right channels (words for WC and
    /// SFC, entity ids for EC), `surface1` and the optional `surface2` embed
    /// the mention's surface words.
    pub fn new(
        config: TypingConfig,
        format: ContextFormat,
        num_classes: u32,
        context: &EmbeddingTable,
        surface1: &EmbeddingTable,
        surface2: Option<&EmbeddingTable>,
    ) -> Result<TypingModel> {
        config.validate()?;
        if num_classes < 2 {
            return Err(Error::invalid("typing model needs at least two classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.hidden_dim;
        let (cd, s1d) = (context.dim(), surface1.dim());
        let make_context_enc = |dim: usize, rng: &mut ChaCha8Rng| match config.encoder {
            EncoderKind::Mean => Encoder::Mean(Linear::new(dim, h, rng)),
            EncoderKind::Recurrent => Encoder::Uni(Lstm::new(dim, h, rng)),
        };
        let make_surface_enc = |dim: usize, rng: &mut ChaCha8Rng| match config.encoder {
            EncoderKind::Mean => Encoder::Mean(Linear::new(dim, h, rng)),
            EncoderKind::Recurrent => Encoder::Bi(Lstm::new(dim, h, rng), Lstm::new(dim, h, rng)),
        };
        let enc_left = make_context_enc(cd, &mut rng);
        let enc_surface1 = make_surface_enc(s1d, &mut rng);
        let (surface2_data, unknown_surface2, enc_surface2) = match surface2 {
            Some(t) => (
                Some((Vocabulary::from_table(t), tensor_from_table(t))),
                Some(Tensor::zeros(1, t.dim())),
                Some(make_surface_enc(t.dim(), &mut rng)),
            ),
            None => (None, None, None),
        };
        let enc_right = make_context_enc(cd, &mut rng);
        let concat_dim = enc_left.output_dim(h)
            + enc_surface1.output_dim(h)
            + enc_surface2.as_ref().map_or(0, |e| e.output_dim(h))
            + enc_right.output_dim(h);
        let output = Linear::new(concat_dim, num_classes as usize, &mut rng);
        Ok(TypingModel {
            config,
            format,
            num_classes,
            context_vocab: Vocabulary::from_table(context),
            context_table: tensor_from_table(context),
            surface1_vocab: Vocabulary::from_table(surface1),
            surface1_table: tensor_from_table(surface1),
            surface2: surface2_data,
            unknown_left: Tensor::zeros(1, cd),
            unknown_surface1: Tensor::zeros(1, s1d),
            unknown_surface2,
            unknown_right: Tensor::zeros(1, cd),
            enc_left,
            enc_surface1,
            enc_surface2,
            enc_right,
            output,
        })
    }

    pub fn has_surface2(&self) -> bool {
        self.surface2.is_some()
    }

    fn channel_tokens<'a>(&self, window: &'a ContextWindow, channel: Channel) -> Vec<&'a str> {
        let max = self.config.max_tokens;
        match channel {
            Channel::Left => {
                let start = window.left.len().saturating_sub(max);
                window.left[start..].iter().map(String::as_str).collect()
            }
            Channel::Surface1 | Channel::Surface2 => {
                window.surface.iter().take(max).map(String::as_str).collect()
            }
            Channel::Right => window.right.iter().take(max).map(String::as_str).collect(),
        }
    }

    fn channel_vocab(&self, channel: Channel) -> &Vocabulary {
        match channel {
            Channel::Left | Channel::Right => &self.context_vocab,
            Channel::Surface1 => &self.surface1_vocab,
            Channel::Surface2 => &self.surface2.as_ref().expect("channel disabled").0,
        }
    }

    fn channel_table(&self, channel: Channel) -> &Tensor {
        match channel {
            Channel::Left | Channel::Right => &self.context_table,
            Channel::Surface1 => &self.surface1_table,
            Channel::Surface2 => &self.surface2.as_ref().expect("channel disabled").1,
        }
    }

    fn channel_unknown(&self, channel: Channel) -> &Tensor {
        match channel {
            Channel::Left => &self.unknown_left,
            Channel::Surface1 => &self.unknown_surface1,
            Channel::Surface2 => self.unknown_surface2.as_ref().expect("channel disabled"),
            Channel::Right => &self.unknown_right,
        }
    }

    fn channel_encoder(&self, channel: Channel) -> &Encoder {
        match channel {
            Channel::Left => &self.enc_left,
            Channel::Surface1 => &self.enc_surface1,
            Channel::Surface2 => self.enc_surface2.as_ref().expect("channel disabled"),
            Channel::Right => &self.enc_right,
        }
    }

    fn active_channels(&self) -> Vec<Channel> {
        CHANNELS
            .iter()
            .copied()
            .filter(|c| *c != Channel::Surface2 || self.surface2.is_some())
            .collect()
    }

    /// Forward pass. `dropout_rng` enables training-time dropout; None runs
    /// the deterministic inference path.
    fn forward(&self, window: &ContextWindow, mut dropout_rng: Option<&mut ChaCha8Rng>) -> ForwardTrace {
        let h = self.config.hidden_dim;
        let p = self.config.dropout;
        let mut channels = Vec::new();
        let mut concat = Vec::new();
        for channel in self.active_channels() {
            let tokens = self.channel_tokens(window, channel);
            let vocab = self.channel_vocab(channel);
            let table = self.channel_table(channel);
            let unknown = self.channel_unknown(channel);
            let rows: Vec<Option<usize>> =
                tokens.iter().map(|t| vocab.index.get(*t).copied()).collect();
            let mut inputs = Vec::with_capacity(rows.len());
            let mut masks = Vec::with_capacity(rows.len());
            for &row in &rows {
                let vec = match row {
                    Some(r) => table.row(r).to_vec(),
                    None => unknown.data.clone(),
                };
                let mask = match dropout_rng.as_deref_mut() {
                    Some(rng) => dropout_mask(vec.len(), p, rng),
                    None => vec![1.0; vec.len()],
                };
                inputs.push(nn::apply_mask(&vec, &mask));
                masks.push(mask);
            }
            // Right context is read inward when recurrent.
            let reversed: Vec<Vec<f64>>;
            let enc_inputs: &[Vec<f64>] = if channel == Channel::Right
                && matches!(self.channel_encoder(channel), Encoder::Uni(_))
            {
                reversed = inputs.iter().rev().cloned().collect();
                &reversed
            } else {
                &inputs
            };
            let mut trace = ChannelTrace {
                rows,
                inputs: inputs.clone(),
                masks,
                mean: None,
                uni: None,
                bi: None,
                output: Vec::new(),
            };
            let encoder = self.channel_encoder(channel);
            let out_dim = encoder.output_dim(h);
            trace.output = if inputs.is_empty() {
                vec![0.0; out_dim]
            } else {
                match encoder {
                    Encoder::Mean(linear) => {
                        let n = inputs.len() as f64;
                        let dim = inputs[0].len();
                        let mut mean = vec![0.0; dim];
                        for v in &inputs {
                            for (m, x) in mean.iter_mut().zip(v) {
                                *m += x / n;
                            }
                        }
                        let pre = linear.forward(&mean);
                        let out: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
                        trace.mean = Some((mean, out.clone()));
                        out
                    }
                    Encoder::Uni(lstm) => {
                        let t = lstm.forward(enc_inputs);
                        let out = t.final_hidden(h);
                        trace.uni = Some(t);
                        out
                    }
                    Encoder::Bi(fwd, bwd) => {
                        let rev: Vec<Vec<f64>> = inputs.iter().rev().cloned().collect();
                        let tf = fwd.forward(&inputs);
                        let tb = bwd.forward(&rev);
                        let mut out = tf.final_hidden(h);
                        out.extend(tb.final_hidden(h));
                        trace.bi = Some((tf, tb));
                        out
                    }
                }
            };
            concat.extend_from_slice(&trace.output);
            channels.push(trace);
        }
        let concat_mask = match dropout_rng.as_deref_mut() {
            Some(rng) => dropout_mask(concat.len(), p, rng),
            None => vec![1.0; concat.len()],
        };
        let concat_dropped = nn::apply_mask(&concat, &concat_mask);
        let logits = self.output.forward(&concat_dropped);
        let probs = softmax(&logits);
        ForwardTrace { channels, concat, concat_mask, concat_dropped, probs }
    }

    /// Backward pass for one instance; accumulates gradients.
    fn backward(&mut self, trace: &ForwardTrace, label: u32) {
        let h = self.config.hidden_dim;
        let mut dlogits = trace.probs.clone();
        dlogits[label as usize] -= 1.0;
        let dconcat_dropped = self.output.backward(&trace.concat_dropped, &dlogits);
        let dconcat = nn::apply_mask(&dconcat_dropped, &trace.concat_mask);
        let mut off = 0;
        let active = self.active_channels();
        for (channel, ct) in active.into_iter().zip(&trace.channels) {
            let out_dim = self.channel_encoder(channel).output_dim(h);
            let dout = &dconcat[off..off + out_dim];
            off += out_dim;
            if ct.inputs.is_empty() {
                continue;
            }
            // d wrt the dropped-out embedded inputs.
            let d_inputs: Vec<Vec<f64>> = match channel {
                Channel::Left | Channel::Right => match self.enc_left_right_mut(channel) {
                    Encoder::Mean(linear) => {
                        let (mean, out) = ct.mean.as_ref().expect("mean trace");
                        let dz: Vec<f64> =
                            dout.iter().zip(out).map(|(d, y)| d * (1.0 - y * y)).collect();
                        let dmean = linear.backward(mean, &dz);
                        let n = ct.inputs.len() as f64;
                        ct.inputs
                            .iter()
                            .map(|_| dmean.iter().map(|d| d / n).collect())
                            .collect()
                    }
                    Encoder::Uni(lstm) => {
                        let t = ct.uni.as_ref().expect("uni trace");
                        let mut d = lstm.backward(t, dout);
                        if channel == Channel::Right {
                            d.reverse();
                        }
                        d
                    }
                    Encoder::Bi(_, _) => unreachable!("context channels are unidirectional"),
                },
                Channel::Surface1 | Channel::Surface2 => match self.enc_surface_mut(channel) {
                    Encoder::Mean(linear) => {
                        let (mean, out) = ct.mean.as_ref().expect("mean trace");
                        let dz: Vec<f64> =
                            dout.iter().zip(out).map(|(d, y)| d * (1.0 - y * y)).collect();
                        let dmean = linear.backward(mean, &dz);
                        let n = ct.inputs.len() as f64;
                        ct.inputs
                            .iter()
                            .map(|_| dmean.iter().map(|d| d / n).collect())
                            .collect()
                    }
                    Encoder::Bi(fwd, bwd) => {
                        let (tf, tb) = ct.bi.as_ref().expect("bi trace");
                        let df = fwd.backward(tf, &dout[..h]);
                        let mut db = bwd.backward(tb, &dout[h..]);
                        db.reverse();
                        df.iter()
                            .zip(&db)
                            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                            .collect()
                    }
                    Encoder::Uni(_) => unreachable!("surface channels are bidirectional"),
                },
            };
            // Through input dropout into the embeddings.
            for ((row, d), mask) in ct.rows.iter().zip(&d_inputs).zip(&ct.masks) {
                let d_embed = nn::apply_mask(d, mask);
                match row {
                    Some(r) => {
                        let table = self.channel_table_mut(channel);
                        for (g, dv) in table.grad_row_mut(*r).iter_mut().zip(&d_embed) {
                            *g += dv;
                        }
                    }
                    None => {
                        let unk = self.channel_unknown_mut(channel);
                        for (g, dv) in unk.grad.iter_mut().zip(&d_embed) {
                            *g += dv;
                        }
                    }
                }
            }
        }
    }

    fn enc_left_right_mut(&mut self, channel: Channel) -> &mut Encoder {
        match channel {
            Channel::Left => &mut self.enc_left,
            Channel::Right => &mut self.enc_right,
            _ => unreachable!(),
        }
    }

    fn enc_surface_mut(&mut self, channel: Channel) -> &mut Encoder {
        match channel {
            Channel::Surface1 => &mut self.enc_surface1,
            Channel::Surface2 => self.enc_surface2.as_mut().expect("channel disabled"),
            _ => unreachable!(),
        }
    }

    fn channel_table_mut(&mut self, channel: Channel) -> &mut Tensor {
        match channel {
            Channel::Left | Channel::Right => &mut self.context_table,
            Channel::Surface1 => &mut self.surface1_table,
            Channel::Surface2 => &mut self.surface2.as_mut().expect("channel disabled").1,
        }
    }

    fn channel_unknown_mut(&mut self, channel: Channel) -> &mut Tensor {
        match channel {
            Channel::Left => &mut self.unknown_left,
            Channel::Surface1 => &mut self.unknown_surface1,
            Channel::Surface2 => self.unknown_surface2.as_mut().expect("channel disabled"),
            Channel::Right => &mut self.unknown_right,
        }
    }

    fn check_instance(&self, window: &ContextWindow) -> Result<()> {
        if window.format != self.format {
            return Err(Error::invalid(format!(
                "instance format {} does not match model format {}",
                window.format, self.format
            )));
        }
        Ok(())
    }

    /// Class probabilities for one mention window. Deterministic.
    pub fn predict(&self, window: &ContextWindow) -> Result<Vec<f64>> {
        self.check_instance(window)?;
        Ok(self.forward(window, None).probs)
    }

    /// One training run over `train`. Calls `log` after every epoch.
    pub fn train(
        &mut self,
        train: &[TypingInstance],
        dev: Option<&[TypingInstance]>,
        mut log: impl FnMut(&EpochStats),
    ) -> Result<Vec<EpochStats>> {
        if train.is_empty() {
            return Err(Error::invalid("typing training set is empty"));
        }
        for inst in train.iter().chain(dev.unwrap_or(&[])) {
            self.check_instance(&inst.window)?;
            if inst.label >= self.num_classes {
                return Err(Error::invalid(format!(
                    "label {} out of range ({} classes)",
                    inst.label, self.num_classes
                )));
            }
        }
        let mut opt = Sgd::new(
            self.config.learning_rate,
            self.config.momentum,
            self.config.weight_decay,
            self,
        );
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(0x5u64));
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(0xDu64));
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut stats = Vec::new();
        for epoch in 1..=self.config.epochs {
            order.shuffle(&mut shuffle_rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(self.config.batch_size) {
                nn::zero_grads(self);
                let mut batch_loss = 0.0;
                for &i in batch {
                    let inst = &train[i];
                    let trace = self.forward(&inst.window, Some(&mut dropout_rng));
                    batch_loss -= trace.probs[inst.label as usize].max(f64::MIN_POSITIVE).ln();
                    self.backward(&trace, inst.label);
                }
                let scale = 1.0 / batch.len() as f64;
                self.visit_mut(&mut |t| t.grad.iter_mut().for_each(|g| *g *= scale));
                let clip = self.config.clip_norm;
                clip_global_norm(self, clip);
                opt.step(self);
                epoch_loss += batch_loss;
            }
            let (dev_accuracy, dev_loss) = match dev {
                Some(d) if !d.is_empty() => {
                    let (acc, ce) = self.evaluate(d)?;
                    (Some(acc), Some(ce))
                }
                _ => (None, None),
            };
            let stat = EpochStats {
                epoch,
                train_loss: epoch_loss / train.len() as f64,
                dev_loss,
                dev_accuracy,
            };
            log(&stat);
            stats.push(stat);
        }
        Ok(stats)
    }

    /// Accuracy (micro-averaged F1 over single-label classes) and mean cross
    /// entropy on a labeled set.
    pub fn evaluate(&self, data: &[TypingInstance]) -> Result<(f64, f64)> {
        if data.is_empty() {
            return Err(Error::invalid("cannot evaluate on an empty set"));
        }
        let mut correct = 0usize;
        let mut ce = 0.0;
        for inst in data {
            let probs = self.predict(&inst.window)?;
            let best = argmax(&probs);
            if best == inst.label as usize {
                correct += 1;
            }
            ce -= probs[inst.label as usize].max(f64::MIN_POSITIVE).ln();
        }
        Ok((correct as f64 / data.len() as f64, ce / data.len() as f64))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = ArtifactWriter::create(path, "typing-model")?;
        w.line(format_args!(
            "#config format={} classes={} encoder={} hidden={} dropout={} max_tokens={} surface2={}",
            self.format,
            self.num_classes,
            self.config.encoder,
            self.config.hidden_dim,
            self.config.dropout,
            self.config.max_tokens,
            if self.surface2.is_some() { 1 } else { 0 },
        ))?;
        write_vocab(&mut w, "context", &self.context_vocab)?;
        write_vocab(&mut w, "surface1", &self.surface1_vocab)?;
        if let Some((v, _)) = &self.surface2 {
            write_vocab(&mut w, "surface2", v)?;
        }
        let mut tensors = Vec::new();
        self.visit(&mut |t| tensors.push(t.clone()));
        for (i, t) in tensors.iter().enumerate() {
            write_tensor(&mut w, &format!("t{i}"), t)?;
        }
        w.finish()
    }

    pub fn load(path: &Path) -> Result<TypingModel> {
        let mut r = ArtifactReader::open(path, "typing-model", true)?;
        let (no, line) = r.next_line()?.ok_or_else(|| r.err(0, "missing config line"))?;
        let body = line
            .strip_prefix("#config ")
            .ok_or_else(|| r.err(no, "expected `#config ...`"))?;
        let mut fields: HashMap<&str, &str> = HashMap::new();
        for part in body.split_whitespace() {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| r.err(no, format!("bad config field `{part}`")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| -> Result<&str> {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::invalid(format!("missing config field `{k}`")))
        };
        let format: ContextFormat = get("format")?.parse()?;
        let num_classes: u32 = parse_num(get("classes")?)?;
        let config = TypingConfig {
            encoder: get("encoder")?.parse()?,
            hidden_dim: parse_num(get("hidden")?)?,
            dropout: get("dropout")?
                .parse()
                .map_err(|_| Error::invalid("bad dropout value"))?,
            max_tokens: parse_num(get("max_tokens")?)?,
            ..TypingConfig::default()
        };
        config.validate()?;
        let has_surface2 = get("surface2")? == "1";
        let context_vocab = read_vocab(&mut r, "context")?;
        let surface1_vocab = read_vocab(&mut r, "surface1")?;
        let surface2_vocab = if has_surface2 {
            Some(read_vocab(&mut r, "surface2")?)
        } else {
            None
        };
        // Tensor shapes are validated structurally: build an empty model of
        // the right shape, then fill its tensors in visit order.
        let h = config.hidden_dim;
        let mut idx = 0usize;
        let mut tensors = Vec::new();
        while let Some(t) = read_tensor_opt(&mut r, &format!("t{idx}"))? {
            tensors.push(t);
            idx += 1;
        }
        let context_dim = tensors
            .first()
            .map(|t| t.cols)
            .ok_or_else(|| Error::invalid("model file has no tensors"))?;
        let surface1_dim = tensors.get(1).map(|t| t.cols).unwrap_or(0);
        let surface2_dim = if has_surface2 {
            tensors.get(2).map(|t| t.cols).unwrap_or(0)
        } else {
            0
        };
        let make_context_enc = |dim: usize| match config.encoder {
            EncoderKind::Mean => Encoder::Mean(Linear {
                w: Tensor::zeros(h, dim),
                b: Tensor::zeros(1, h),
            }),
            EncoderKind::Recurrent => Encoder::Uni(Lstm {
                input_dim: dim,
                hidden_dim: h,
                w: Tensor::zeros(4 * h, dim + h),
                b: Tensor::zeros(4 * h, 1),
            }),
        };
        let make_surface_enc = |dim: usize| match config.encoder {
            EncoderKind::Mean => Encoder::Mean(Linear {
                w: Tensor::zeros(h, dim),
                b: Tensor::zeros(1, h),
            }),
            EncoderKind::Recurrent => Encoder::Bi(
                Lstm {
                    input_dim: dim,
                    hidden_dim: h,
                    w: Tensor::zeros(4 * h, dim + h),
                    b: Tensor::zeros(4 * h, 1),
                },
                Lstm {
                    input_dim: dim,
                    hidden_dim: h,
                    w: Tensor::zeros(4 * h, dim + h),
                    b: Tensor::zeros(4 * h, 1),
                },
            ),
        };
        let enc_left = make_context_enc(context_dim);
        let enc_surface1 = make_surface_enc(surface1_dim);
        let enc_surface2 = surface2_vocab.as_ref().map(|_| make_surface_enc(surface2_dim));
        let enc_right = make_context_enc(context_dim);
        let concat_dim = enc_left.output_dim(h)
            + enc_surface1.output_dim(h)
            + enc_surface2.as_ref().map_or(0, |e| e.output_dim(h))
            + enc_right.output_dim(h);
        let mut model = TypingModel {
            config,
            format,
            num_classes,
            context_table: Tensor::zeros(context_vocab.tokens.len(), context_dim),
            context_vocab,
            surface1_table: Tensor::zeros(surface1_vocab.tokens.len(), surface1_dim),
            surface1_vocab,
            surface2: surface2_vocab
                .map(|v| {
                    let n = v.tokens.len();
                    (v, Tensor::zeros(n, surface2_dim))
                }),
            unknown_left: Tensor::zeros(1, context_dim),
            unknown_surface1: Tensor::zeros(1, surface1_dim),
            unknown_surface2: if has_surface2 {
                Some(Tensor::zeros(1, surface2_dim))
            } else {
                None
            },
            unknown_right: Tensor::zeros(1, context_dim),
            enc_left,
            enc_surface1,
            enc_surface2,
            enc_right,
            output: Linear {
                w: Tensor::zeros(num_classes as usize, concat_dim),
                b: Tensor::zeros(1, num_classes as usize),
            },
        };
        let mut shapes = Vec::new();
        model.visit(&mut |t| shapes.push((t.rows, t.cols)));
        if shapes.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "model file has {} tensors, expected {}",
                tensors.len(),
                shapes.len()
            )));
        }
        for (i, ((rows, cols), t)) in shapes.iter().zip(&tensors).enumerate() {
            if t.rows != *rows || t.cols != *cols {
                return Err(Error::invalid(format!(
                    "tensor {i} has shape {}x{}, expected {rows}x{cols}",
                    t.rows, t.cols
                )));
            }
        }
        let mut it = tensors.into_iter();
        model.visit_mut(&mut |t| {
            let src = it.next().expect("tensor count checked above");
            t.data = src.data;
        });
        Ok(model)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::invalid(format!("invalid number `{s}`")))
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub dev_accuracy: Option<f64>,
}

fn write_vocab(w: &mut ArtifactWriter, name: &str, vocab: &Vocabulary) -> Result<()> {
    w.line(format_args!("#vocab {name} {}", vocab.tokens.len()))?;
    for t in &vocab.tokens {
        w.line(t)?;
    }
    Ok(())
}

fn read_vocab(r: &mut ArtifactReader, name: &str) -> Result<Vocabulary> {
    let (no, line) = r
        .next_line()?
        .ok_or_else(|| r.err(0, format!("missing vocab `{name}`")))?;
    let rest = line
        .strip_prefix(&format!("#vocab {name} "))
        .ok_or_else(|| r.err(no, format!("expected `#vocab {name} <n>`")))?;
    let n: usize = parse_num(rest)?;
    let mut tokens = Vec::with_capacity(n);
    for _ in 0..n {
        let (_, t) = r
            .next_line()?
            .ok_or_else(|| r.err(0, "vocab ended early"))?;
        tokens.push(t);
    }
    Vocabulary::from_tokens(tokens)
}

fn write_tensor(w: &mut ArtifactWriter, name: &str, t: &Tensor) -> Result<()> {
    w.line(format_args!("#tensor {name} {} {}", t.rows, t.cols))?;
    let mut buf = String::new();
    for r in 0..t.rows {
        buf.clear();
        for (i, v) in t.row(r).iter().enumerate() {
            if i > 0 {
                buf.push(' ');
            }
            buf.push_str(&format!("{v:.17e}"));
        }
        w.line(&buf)?;
    }
    Ok(())
}

fn read_tensor_opt(r: &mut ArtifactReader, name: &str) -> Result<Option<Tensor>> {
    let Some((no, line)) = r.next_line()? else {
        return Ok(None);
    };
    let rest = line
        .strip_prefix(&format!("#tensor {name} "))
        .ok_or_else(|| r.err(no, format!("expected `#tensor {name} <rows> <cols>`")))?;
    let mut parts = rest.split_whitespace();
    let rows: usize = parse_num(parts.next().unwrap_or(""))?;
    let cols: usize = parse_num(parts.next().unwrap_or(""))?;
    let mut t = Tensor::zeros(rows, cols);
    for row in 0..rows {
        let (no, line) = r
            .next_line()?
            .ok_or_else(|| r.err(0, "tensor ended early"))?;
        let mut count = 0;
        for (i, tok) in line.split_whitespace().enumerate() {
            if i >= cols {
                return Err(r.err(no, "too many values in tensor row"));
            }
            t.data[row * cols + i] = tok
                .parse()
                .map_err(|_| r.err(no, format!("bad float `{tok}`")))?;
            count += 1;
        }
        if count != cols {
            return Err(r.err(no, format!("tensor row has {count} values, expected {cols}")));
        }
    }
    Ok(Some(t))
}

/// TSV of per-row class probabilities, `row \t p_0 \t p_1 ...`, aligned with
/// the dataset rows the predictions were computed for.
pub fn write_predictions(probs: &[Vec<f64>], path: &Path) -> Result<()> {
    let mut w = ArtifactWriter::create(path, "typing-pred")?;
    for (i, row) in probs.iter().enumerate() {
        let mut line = i.to_string();
        for p in row {
            line.push('\t');
            line.push_str(&format!("{p:.6}"));
        }
        w.line(&line)?;
    }
    w.finish()
}

pub fn read_predictions(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = ArtifactReader::open(path, "typing-pred", true)?;
    let mut out: Vec<Vec<f64>> = Vec::new();
    while let Some((no, line)) = r.next_line()? {
        let mut parts = line.split('\t');
        let row: usize = parse_num(parts.next().unwrap_or("")).map_err(|e| r.err(no, e.to_string()))?;
        if row != out.len() {
            return Err(r.err(no, format!("expected row {}, found {row}", out.len())));
        }
        let probs: Vec<f64> = parts
            .map(|p| p.parse().map_err(|_| r.err(no, format!("bad float `{p}`"))))
            .collect::<Result<_>>()?;
        if probs.is_empty() {
            return Err(r.err(no, "prediction row has no probabilities"));
        }
        out.push(probs);
    }
    Ok(out)
}
