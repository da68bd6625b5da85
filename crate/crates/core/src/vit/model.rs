use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Parameter, Real, Tape, Tensor, Var, LAYER_NORM_EPS};
use crate::data::patches::patchify_into;

use super::config::ModelConfig;
use super::ModelError;

#[derive(Clone, Debug, PartialEq)]
struct Affine {
    weight: usize,
    bias: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
struct Norm {
    gain: usize,
    shift: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Head {
    query: Affine,
    key: Affine,
    value: Affine,
}

#[derive(Clone, Debug, PartialEq)]
struct Encoder {
    norm1: Norm,
    heads: Vec<Head>,
    output: Affine,
    norm2: Norm,
    fc1: Affine,
    fc2: Affine,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embed: Affine,
    positional: usize,
    encoders: Vec<Encoder>,
    classifier: Affine,
}

/// Encoder-only Vision Transformer with pre-norm residual blocks and mean
/// pooling over tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct VisionTransformer<T> {
    config: ModelConfig,
    params: Vec<Parameter<T>>,
    layout: Layout,
}

/// Tape handles for every parameter of one model, indexed like
/// [`VisionTransformer::params`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    fn get(&self, id: usize) -> Var {
        self.vars[id]
    }
}

/// Logits plus the attention matrices produced on the way, `[encoder][head]`,
/// each of shape `B × N × N`.
pub struct ForwardTrace {
    pub logits: Var,
    pub attention: Vec<Vec<Var>>,
}

/// Deterministic initializer; parameters are created and drawn in a fixed order.
struct Builder<T> {
    rng: ChaCha8Rng,
    params: Vec<Parameter<T>>,
}

impl<T: Real> Builder<T> {
    fn push(&mut self, name: String, value: Tensor<T>) -> usize {
        self.params.push(Parameter::new(name, value));
        self.params.len() - 1
    }

    /// Uniform(-a, a), a = sqrt(6 / (fan_in + fan_out)).
    fn matrix(&mut self, name: String, fan_in: usize, fan_out: usize) -> usize {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values: Vec<T> = (0..fan_in * fan_out)
            .map(|_| T::real(self.rng.random_range(-bound..bound)))
            .collect();
        let t = Tensor::new(vec![fan_in, fan_out], values).expect("matrix shape");
        self.push(name, t)
    }

    fn affine(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Affine {
        let weight = self.matrix(format!("{name}.weight"), fan_in, fan_out);
        let bias = bias.then(|| self.push(format!("{name}.bias"), Tensor::zeros(vec![fan_out])));
        Affine { weight, bias }
    }

    fn norm(&mut self, name: &str, width: usize) -> Norm {
        Norm {
            gain: self.push(format!("{name}.gain"), Tensor::filled(vec![width], T::one())),
            shift: self.push(format!("{name}.shift"), Tensor::zeros(vec![width])),
        }
    }
}

impl<T: Real> VisionTransformer<T> {
    /// Builds a model with weights drawn from `seed`. Weight matrices use
    /// Glorot-uniform initialization; biases and the positional table start
    /// at zero, layer-norm gains at one.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config;
        let bias = c.use_bias;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
        };
        let embed = b.affine("patch_embed", c.patch_dim(), c.d_model, bias);
        let positional = b.push("pos_embed".into(), Tensor::zeros(vec![c.tokens(), c.d_model]));
        let encoders = (0..c.encoders)
            .map(|e| {
                let norm1 = b.norm(&format!("encoder.{e}.norm1"), c.d_model);
                let heads = (0..c.heads)
                    .map(|h| {
                        let prefix = format!("encoder.{e}.head.{h}");
                        Head {
                            query: b.affine(&format!("{prefix}.query"), c.d_model, c.d_key, bias),
                            key: b.affine(&format!("{prefix}.key"), c.d_model, c.d_key, bias),
                            value: b.affine(&format!("{prefix}.value"), c.d_model, c.d_value, bias),
                        }
                    })
                    .collect();
                let output = b.affine(&format!("encoder.{e}.attn_out"), c.heads * c.d_value, c.d_model, bias);
                let norm2 = b.norm(&format!("encoder.{e}.norm2"), c.d_model);
                let fc1 = b.affine(&format!("encoder.{e}.ffn.fc1"), c.d_model, c.d_ff, bias);
                let fc2 = b.affine(&format!("encoder.{e}.ffn.fc2"), c.d_ff, c.d_model, bias);
                Encoder {
                    norm1,
                    heads,
                    output,
                    norm2,
                    fc1,
                    fc2,
                }
            })
            .collect();
        let classifier = b.affine("classifier", c.d_model, c.classes, bias);
        Ok(Self {
            config: c.clone(),
            params: b.params,
            layout: Layout {
                embed,
                positional,
                encoders,
                classifier,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name() == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.iter_mut().find(|p| p.name() == name)
    }

    /// Parameter count by enumerating every stored array.
    pub fn enumerate_params(&self) -> u64 {
        self.params.iter().map(|p| p.len() as u64).sum()
    }

    pub fn zero_grad(&mut self) {
        crate::autodiff::zero_grad(&mut self.params);
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .enumerate()
                .map(|(i, p)| tape.parameter(i, p))
                .collect(),
        }
    }

    fn apply_affine(&self, tape: &mut Tape<T>, bound: &Bound, a: &Affine, x: Var) -> Result<Var, ModelError> {
        let y = tape.matmul(x, bound.get(a.weight))?;
        Ok(match a.bias {
            Some(b) => tape.add_broadcast(y, bound.get(b))?,
            None => y,
        })
    }

    /// Affine map over the last axis of a rank-3 `[B, N, din]` input.
    fn apply_affine_3d(&self, tape: &mut Tape<T>, bound: &Bound, a: &Affine, x: Var) -> Result<Var, ModelError> {
        let s = tape.shape(x).to_vec();
        let flat = tape.reshape(x, &[s[0] * s[1], s[2]])?;
        let y = self.apply_affine(tape, bound, a, flat)?;
        let width = tape.shape(y)[1];
        Ok(tape.reshape(y, &[s[0], s[1], width])?)
    }

    fn check_images(&self, images: &Tensor<T>) -> Result<usize, ModelError> {
        let c = &self.config;
        let s = images.shape();
        if s.len() != 4 || s[1] != c.channels || s[2] != c.image_size || s[3] != c.image_size {
            return Err(ModelError::Geometry {
                expected: vec![0, c.channels, c.image_size, c.image_size],
                found: s.to_vec(),
            });
        }
        Ok(s[0])
    }

    /// Flattens the patches of a `B×C×s×s` batch, projects them to `d_model`
    /// and adds the positional table. Returns `B × N × d_model`.
    pub fn patch_embed(&self, tape: &mut Tape<T>, bound: &Bound, images: &Tensor<T>) -> Result<Var, ModelError> {
        let batch = self.check_images(images)?;
        let c = &self.config;
        let (n, width) = (c.tokens(), c.patch_dim());
        let image_len = c.channels * c.image_size * c.image_size;
        let mut flat = vec![T::zero(); batch * n * width];
        for (img, dst) in images
            .data()
            .chunks_exact(image_len)
            .zip(flat.chunks_exact_mut(n * width))
        {
            patchify_into(img, c.channels, c.image_size, c.patch_size, dst);
        }
        let patches = tape.constant(Tensor::new(vec![batch * n, width], flat)?);
        let tokens = self.apply_affine(tape, bound, &self.layout.embed, patches)?;
        let tokens = tape.reshape(tokens, &[batch, n, c.d_model])?;
        Ok(tape.add_broadcast(tokens, bound.get(self.layout.positional))?)
    }

    fn as_batch(&self, tape: &mut Tape<T>, tokens: Var) -> Result<(Var, bool), ModelError> {
        let s = tape.shape(tokens).to_vec();
        match *s.as_slice() {
            [n, d] if d == self.config.d_model => Ok((tape.reshape(tokens, &[1, n, d])?, true)),
            [_, _, d] if d == self.config.d_model => Ok((tokens, false)),
            _ => Err(ModelError::Geometry {
                expected: vec![0, 0, self.config.d_model],
                found: s,
            }),
        }
    }

    fn encoder(&self, index: usize) -> Result<&Encoder, ModelError> {
        self.layout.encoders.get(index).ok_or(ModelError::NoSuchEncoder {
            index,
            encoders: self.config.encoders,
        })
    }

    fn attention_inner(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        enc: &Encoder,
        x: Var,
        mut trace: Option<&mut Vec<Var>>,
    ) -> Result<Var, ModelError> {
        let s = tape.shape(x).to_vec();
        let (batch, n) = (s[0], s[1]);
        let scale = T::real(1.0 / (self.config.d_key as f64).sqrt());
        let mut outputs = Vec::with_capacity(enc.heads.len());
        for head in &enc.heads {
            let q = self.apply_affine_3d(tape, bound, &head.query, x)?;
            let k = self.apply_affine_3d(tape, bound, &head.key, x)?;
            let v = self.apply_affine_3d(tape, bound, &head.value, x)?;
            let kt = tape.transpose(k)?;
            let scores = tape.batch_matmul(q, kt)?;
            let scores = tape.scale(scores, scale)?;
            let weights = tape.softmax_rows(scores)?;
            if let Some(t) = trace.as_deref_mut() {
                t.push(weights);
            }
            let mixed = tape.batch_matmul(weights, v)?;
            outputs.push(tape.reshape(mixed, &[batch * n, self.config.d_value])?);
        }
        let joined = if outputs.len() == 1 {
            outputs[0]
        } else {
            tape.concat(&outputs, 1)?
        };
        let projected = self.apply_affine(tape, bound, &enc.output, joined)?;
        Ok(tape.reshape(projected, &[batch, n, self.config.d_model])?)
    }

    /// Multi-head self-attention of encoder `index`. `tokens` is `N × d_model`
    /// or `B × N × d_model`; the output has the same shape.
    pub fn multi_head_attention(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        index: usize,
        tokens: Var,
    ) -> Result<Var, ModelError> {
        let enc = self.encoder(index)?;
        let (x, squeeze) = self.as_batch(tape, tokens)?;
        let y = self.attention_inner(tape, bound, enc, x, None)?;
        self.unbatch(tape, y, squeeze)
    }

    fn unbatch(&self, tape: &mut Tape<T>, y: Var, squeeze: bool) -> Result<Var, ModelError> {
        if squeeze {
            let s = tape.shape(y).to_vec();
            Ok(tape.reshape(y, &[s[1], s[2]])?)
        } else {
            Ok(y)
        }
    }

    fn encoder_inner(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        enc: &Encoder,
        x: Var,
        trace: Option<&mut Vec<Var>>,
    ) -> Result<Var, ModelError> {
        let normed = tape.layer_norm(x, bound.get(enc.norm1.gain), bound.get(enc.norm1.shift), LAYER_NORM_EPS)?;
        let attended = self.attention_inner(tape, bound, enc, normed, trace)?;
        let x = tape.add(x, attended)?;
        let normed = tape.layer_norm(x, bound.get(enc.norm2.gain), bound.get(enc.norm2.shift), LAYER_NORM_EPS)?;
        let hidden = self.apply_affine_3d(tape, bound, &enc.fc1, normed)?;
        let hidden = tape.gelu(hidden)?;
        let ff = self.apply_affine_3d(tape, bound, &enc.fc2, hidden)?;
        Ok(tape.add(x, ff)?)
    }

    /// One pre-norm encoder block:
    /// `x + MHA(LN₁(x))`, then `x + W₂·gelu(W₁·LN₂(x) + b₁) + b₂`.
    pub fn encoder_forward(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        index: usize,
        tokens: Var,
    ) -> Result<Var, ModelError> {
        let enc = self.encoder(index)?;
        let (x, squeeze) = self.as_batch(tape, tokens)?;
        let y = self.encoder_inner(tape, bound, enc, x, None)?;
        self.unbatch(tape, y, squeeze)
    }

    /// Runs the encoder stack on `B × N × d_model` tokens.
    pub fn encode(&self, tape: &mut Tape<T>, bound: &Bound, tokens: Var) -> Result<Var, ModelError> {
        let mut x = tokens;
        for enc in &self.layout.encoders {
            x = self.encoder_inner(tape, bound, enc, x, None)?;
        }
        Ok(x)
    }

    /// Logits (`B × M`) for a `B×C×s×s` batch.
    pub fn forward(&self, tape: &mut Tape<T>, images: &Tensor<T>) -> Result<Var, ModelError> {
        Ok(self.forward_traced(tape, images)?.logits)
    }

    pub fn forward_traced(&self, tape: &mut Tape<T>, images: &Tensor<T>) -> Result<ForwardTrace, ModelError> {
        let bound = self.bind(tape);
        self.forward_bound(tape, &bound, images)
    }

    pub fn forward_bound(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        images: &Tensor<T>,
    ) -> Result<ForwardTrace, ModelError> {
        let mut x = self.patch_embed(tape, bound, images)?;
        let mut attention = Vec::with_capacity(self.layout.encoders.len());
        for enc in &self.layout.encoders {
            let mut heads = Vec::with_capacity(enc.heads.len());
            x = self.encoder_inner(tape, bound, enc, x, Some(&mut heads))?;
            attention.push(heads);
        }
        let pooled = tape.mean_axis(x, 1)?;
        let logits = self.apply_affine(tape, bound, &self.layout.classifier, pooled)?;
        Ok(ForwardTrace { logits, attention })
    }

    /// Forward pass without gradient tracking.
    pub fn logits(&self, images: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::inference();
        let out = self.forward(&mut tape, images)?;
        Ok(tape.value(out).clone())
    }

    /// Records forward + mean cross-entropy, backpropagates, and accumulates
    /// into the parameter gradients. Returns the batch loss.
    pub fn accumulate_gradients(&mut self, images: &Tensor<T>, labels: &[usize]) -> Result<T, ModelError> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, images)?;
        let loss = tape.cross_entropy(logits, labels)?;
        let value = tape.value(loss).item();
        tape.backward_into(loss, &mut self.params)?;
        Ok(value)
    }

    pub(crate) fn replace_values(&mut self, values: Vec<(String, Tensor<T>)>) -> Result<(), ModelError> {
        if values.len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, (name, value)) in self.params.iter_mut().zip(values) {
            if p.name() != name || p.value().shape() != value.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {name} {:?} does not match {} {:?}",
                    value.shape(),
                    p.name(),
                    p.value().shape()
                )));
            }
            *p.value_mut() = value;
            p.zero_grad();
        }
        Ok(())
    }
}
