//! Two-pathway hashing network.
//!
//! Each modality (image, text) gets its own pathway: an intermediate
//! fully-connected layer with a rectifier, then a fully-connected hash
//! layer with a logistic activation so outputs land in `(0, 1)^q`. Training
//! operates on those relaxed continuous activations; [`binarize`] is
//! applied only when codes are actually emitted (encoding, evaluation).

use crate::tensor::{
    hinge_subgrad, relu, sigmoid, sigmoid_grad_from_output, Matrix, Vector,
};
use crate::{fnv1a64, Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// The two input modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn other(self) -> Modality {
        match self {
            Modality::Image => Modality::Text,
            Modality::Text => Modality::Image,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Modality::Image),
            "text" => Ok(Modality::Text),
            other => Err(Error::Config(format!("unknown modality `{other}`"))),
        }
    }
}

/// A retrieval direction: queries of one modality against a database of the
/// other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Text query, image database.
    #[serde(rename = "t2i")]
    TextToImage,
    /// Image query, text database.
    #[serde(rename = "i2t")]
    ImageToText,
}

impl Direction {
    pub fn query_modality(self) -> Modality {
        match self {
            Direction::TextToImage => Modality::Text,
            Direction::ImageToText => Modality::Image,
        }
    }

    pub fn target_modality(self) -> Modality {
        self.query_modality().other()
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::TextToImage => "t2i",
            Direction::ImageToText => "i2t",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t2i" => Ok(Direction::TextToImage),
            "i2t" => Ok(Direction::ImageToText),
            other => Err(Error::Config(format!("unknown direction `{other}`"))),
        }
    }
}

/// Gradients for both pathways of one network.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub image: PathwayGrads,
    pub text: PathwayGrads,
}

impl NetGrads {
    pub fn zeros_like(net: &TwoPathwayNet) -> Self {
        NetGrads {
            image: PathwayGrads::zeros_like(&net.image),
            text: PathwayGrads::zeros_like(&net.text),
        }
    }

    pub fn pathway_mut(&mut self, m: Modality) -> &mut PathwayGrads {
        match m {
            Modality::Image => &mut self.image,
            Modality::Text => &mut self.text,
        }
    }

    pub fn add_scaled(&mut self, other: &NetGrads, c: f64) {
        self.image.add_scaled(&other.image, c);
        self.text.add_scaled(&other.text, c);
    }

    pub fn scale(&mut self, c: f64) {
        self.image.scale(c);
        self.text.scale(c);
    }
}

/// Network shape shared by both players.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_input_dim: usize,
    pub text_input_dim: usize,
    /// Width of the intermediate layer. Production-scale configs use 4096;
    /// desk-scale tests use 64.
    #[serde(default = "default_inter_dim")]
    pub inter_dim: usize,
    /// Hash code length in bits.
    #[serde(default = "default_code_len")]
    pub code_len: usize,
}

fn default_inter_dim() -> usize {
    4096
}

fn default_code_len() -> usize {
    16
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_input_dim == 0 || self.text_input_dim == 0 || self.inter_dim == 0 {
            return Err(Error::Config("model dims must be >= 1".into()));
        }
        if !(8..=256).contains(&self.code_len) {
            return Err(Error::Config(format!(
                "code_len must be in 8..=256, got {}",
                self.code_len
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Image => self.image_input_dim,
            Modality::Text => self.text_input_dim,
        }
    }
}

/// Parameters of one pathway: two fully-connected layers.
///
/// Weights are stored input-major (`w1: input_dim × inter_dim`,
/// `w2: inter_dim × code_len`) and applied transposed, so a layer computes
/// `y = Wᵀx + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayParams {
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub b2: Vector,
}

/// All intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Vector,
    pub inter_pre: Vector,
    pub inter_post: Vector,
    pub hash_pre: Vector,
    /// Hash activations, each in `(0, 1)`.
    pub hash_out: Vector,
}

impl ForwardTrace {
    pub fn hash(&self) -> &[f64] {
        self.hash_out.as_slice()
    }
}

/// Gradients for one pathway, same shapes as [`PathwayParams`], plus the
/// gradient with respect to the input feature.
#[derive(Debug, Clone)]
pub struct PathwayGrads {
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub b2: Vector,
    pub input: Vector,
}

impl PathwayGrads {
    pub fn zeros_like(p: &PathwayParams) -> Self {
        PathwayGrads {
            w1: Matrix::zeros(p.w1.rows(), p.w1.cols()),
            b1: Vector::zeros(p.b1.dim()),
            w2: Matrix::zeros(p.w2.rows(), p.w2.cols()),
            b2: Vector::zeros(p.b2.dim()),
            input: Vector::zeros(p.w1.rows()),
        }
    }

    pub fn add_scaled(&mut self, other: &PathwayGrads, c: f64) {
        self.w1.add_scaled(&other.w1, c);
        self.b1.add_scaled(&other.b1, c);
        self.w2.add_scaled(&other.w2, c);
        self.b2.add_scaled(&other.b2, c);
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.w1.as_mut_slice() {
            *v *= c;
        }
        for v in self.b1.as_mut_slice() {
            *v *= c;
        }
        for v in self.w2.as_mut_slice() {
            *v *= c;
        }
        for v in self.b2.as_mut_slice() {
            *v *= c;
        }
    }
}

impl PathwayParams {
    /// Random initialization: weights uniform in `[−a, a]` with
    /// `a = sqrt(6 / (fan_in + fan_out))`, biases zero. Keeps the logistic
    /// hash layer away from saturation at the start.
    pub fn init(input_dim: usize, inter_dim: usize, code_len: usize, rng: &mut impl Rng) -> Self {
        let mut layer = |fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-a..=a))
                .collect();
            Matrix::from_vec(fan_in, fan_out, data).expect("init shape")
        };
        PathwayParams {
            w1: layer(input_dim, inter_dim),
            b1: Vector::zeros(inter_dim),
            w2: layer(inter_dim, code_len),
            b2: Vector::zeros(code_len),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn code_len(&self) -> usize {
        self.w2.cols()
    }

    /// Forward pass: rectified intermediate layer, logistic hash layer.
    pub fn forward(&self, input: &[f64]) -> Result<ForwardTrace> {
        if input.len() != self.w1.rows() {
            return Err(Error::DimMismatch {
                op: "pathway forward",
                expected: self.w1.rows(),
                got: input.len(),
            });
        }
        let x = Vector::from_raw(input.to_vec());
        let mut inter_pre = self.w1.matvec_transposed(&x)?;
        inter_pre.add_scaled(&self.b1, 1.0);
        let inter_post = relu(&inter_pre);
        let mut hash_pre = self.w2.matvec_transposed(&inter_post)?;
        hash_pre.add_scaled(&self.b2, 1.0);
        let hash_out = sigmoid(&hash_pre);
        Ok(ForwardTrace {
            input: x,
            inter_pre,
            inter_post,
            hash_pre,
            hash_out,
        })
    }

    /// Backprop from a gradient on the hash activations down to parameter
    /// gradients and the input gradient.
    pub fn backward(&self, trace: &ForwardTrace, grad_hash: &[f64]) -> Result<PathwayGrads> {
        let mut grads = PathwayGrads::zeros_like(self);
        self.backward_into(trace, grad_hash, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Accumulating form of [`backward`](Self::backward): adds
    /// `scale ·` gradients into `acc`. Hot loops use this to avoid
    /// reallocating gradient buffers per trace.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        grad_hash: &[f64],
        scale: f64,
        acc: &mut PathwayGrads,
    ) -> Result<()> {
        if grad_hash.len() != self.code_len() {
            return Err(Error::DimMismatch {
                op: "pathway backward",
                expected: self.code_len(),
                got: grad_hash.len(),
            });
        }
        // hash layer: dz2 = grad_h ⊙ σ'(z2)
        let dz2: Vec<f64> = grad_hash
            .iter()
            .zip(trace.hash_out.as_slice())
            .map(|(&g, &h)| g * sigmoid_grad_from_output(h))
            .collect();
        acc.w2
            .add_scaled_outer(trace.inter_post.as_slice(), &dz2, scale);
        for (b, &d) in acc.b2.as_mut_slice().iter_mut().zip(&dz2) {
            *b += scale * d;
        }
        // back through w2: da1 = w2 · dz2
        let da1 = self.w2.matvec(&Vector::from_raw(dz2))?;
        // rectifier subgradient (0 at the kink)
        let dz1: Vec<f64> = da1
            .as_slice()
            .iter()
            .zip(trace.inter_pre.as_slice())
            .map(|(&g, &z)| g * hinge_subgrad(z))
            .collect();
        acc.w1.add_scaled_outer(trace.input.as_slice(), &dz1, scale);
        for (b, &d) in acc.b1.as_mut_slice().iter_mut().zip(&dz1) {
            *b += scale * d;
        }
        let dx = self.w1.matvec(&Vector::from_raw(dz1))?;
        acc.input.add_scaled(&dx, scale);
        Ok(())
    }

    /// `params += c · grads` (pass `c = −lr` for descent, `+lr` for ascent).
    pub fn apply_grads(&mut self, grads: &PathwayGrads, c: f64) {
        self.w1.add_scaled(&grads.w1, c);
        self.b1.add_scaled(&grads.b1, c);
        self.w2.add_scaled(&grads.w2, c);
        self.b2.add_scaled(&grads.b2, c);
    }

    fn params_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(self.b1.as_slice());
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(self.b2.as_slice());
    }

    fn set_params_flat(&mut self, flat: &[f64]) -> usize {
        let mut off = 0;
        for part in [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ] {
            part.copy_from_slice(&flat[off..off + part.len()]);
            off += part.len();
        }
        off
    }
}

/// One player's network: an image pathway and a text pathway mapping into
/// the same `q`-bit code space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPathwayNet {
    pub image: PathwayParams,
    pub text: PathwayParams,
    pub config: ModelConfig,
}

impl TwoPathwayNet {
    /// All-zero parameters in the shape of `config`; mostly a carrier for
    /// [`set_params_flat`](Self::set_params_flat) when deserializing.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let zero_pathway = |input_dim: usize| PathwayParams {
            w1: Matrix::zeros(input_dim, config.inter_dim),
            b1: Vector::zeros(config.inter_dim),
            w2: Matrix::zeros(config.inter_dim, config.code_len),
            b2: Vector::zeros(config.code_len),
        };
        Ok(TwoPathwayNet {
            image: zero_pathway(config.image_input_dim),
            text: zero_pathway(config.text_input_dim),
            config: config.clone(),
        })
    }

    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        Ok(TwoPathwayNet {
            image: PathwayParams::init(
                config.image_input_dim,
                config.inter_dim,
                config.code_len,
                rng,
            ),
            text: PathwayParams::init(
                config.text_input_dim,
                config.inter_dim,
                config.code_len,
                rng,
            ),
            config: config.clone(),
        })
    }

    pub fn pathway(&self, m: Modality) -> &PathwayParams {
        match m {
            Modality::Image => &self.image,
            Modality::Text => &self.text,
        }
    }

    pub fn pathway_mut(&mut self, m: Modality) -> &mut PathwayParams {
        match m {
            Modality::Image => &mut self.image,
            Modality::Text => &mut self.text,
        }
    }

    pub fn forward(&self, m: Modality, input: &[f64]) -> Result<ForwardTrace> {
        self.pathway(m).forward(input)
    }

    /// Hash activations only, when the trace is not needed.
    pub fn hash(&self, m: Modality, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(m, input)?.hash_out.as_slice().to_vec())
    }

    /// `params += c · grads` on both pathways.
    pub fn apply_grads(&mut self, grads: &NetGrads, c: f64) {
        self.image.apply_grads(&grads.image, c);
        self.text.apply_grads(&grads.text, c);
    }

    /// Flattened parameter view, image pathway first. Order is stable and
    /// is relied on by checkpointing and finite-difference tests.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.image.params_flat(&mut out);
        self.text.params_flat(&mut out);
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.params_flat().len();
        if flat.len() != expected {
            return Err(Error::DimMismatch {
                op: "set_params_flat",
                expected,
                got: flat.len(),
            });
        }
        let used = self.image.set_params_flat(flat);
        self.text.set_params_flat(&flat[used..]);
        Ok(())
    }

    /// FNV-1a over the exact parameter bits. Two nets compare equal iff
    /// their checksums match (up to hash collisions); used to assert the
    /// freeze contract during alternating training.
    pub fn checksum(&self) -> u64 {
        fnv1a64(
            self.params_flat()
                .into_iter()
                .flat_map(|v| v.to_le_bytes()),
        )
    }
}

/// Bit-packed binary hash code of length `q`. Padding bits are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashCode {
    len_bits: usize,
    blocks: Vec<u64>,
}

impl HashCode {
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut blocks = vec![0u64; bits.len().div_ceil(64)];
        for (k, &b) in bits.iter().enumerate() {
            if b {
                blocks[k / 64] |= 1u64 << (k % 64);
            }
        }
        HashCode {
            len_bits: bits.len(),
            blocks,
        }
    }

    pub fn len_bits(&self) -> usize {
        self.len_bits
    }

    pub fn bit(&self, k: usize) -> bool {
        (self.blocks[k / 64] >> (k % 64)) & 1 == 1
    }

    /// Hamming distance via XOR + popcount.
    pub fn hamming(&self, other: &HashCode) -> Result<u32> {
        if self.len_bits != other.len_bits {
            return Err(Error::DimMismatch {
                op: "hamming",
                expected: self.len_bits,
                got: other.len_bits,
            });
        }
        Ok(self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum())
    }

    /// Packs into bytes, LSB-first within each byte, `ceil(q/8)` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len_bits.div_ceil(8);
        let mut out = vec![0u8; n];
        for k in 0..self.len_bits {
            if self.bit(k) {
                out[k / 8] |= 1 << (k % 8);
            }
        }
        out
    }

    pub fn from_bytes(len_bits: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != len_bits.div_ceil(8) {
            return Err(Error::Data(format!(
                "code byte length {} does not match {} bits",
                bytes.len(),
                len_bits
            )));
        }
        let bits: Vec<bool> = (0..len_bits)
            .map(|k| (bytes[k / 8] >> (k % 8)) & 1 == 1)
            .collect();
        // reject set padding bits so codes have a unique byte form
        for (k, &byte) in bytes.iter().enumerate() {
            for b in 0..8 {
                if k * 8 + b >= len_bits && (byte >> b) & 1 == 1 {
                    return Err(Error::Data("nonzero padding bits in hash code".into()));
                }
            }
        }
        Ok(HashCode::from_bits(&bits))
    }
}

/// Thresholds relaxed hash activations into a binary code. Bit `k` is 1 iff
/// `h_k >= 0.5`; the boundary value 0.5 maps to 1 so codes are
/// deterministic.
pub fn binarize(hash_out: &[f64]) -> HashCode {
    let bits: Vec<bool> = hash_out.iter().map(|&h| h >= 0.5).collect();
    HashCode::from_bits(&bits)
}
