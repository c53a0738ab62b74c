//! Projection heads: two linear layers with a ReLU between them, mapping
//! per-modality features into the shared embedding space.
//!
//! The checkpoint format (`ASEM`) stores one audio head and one text head:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ASEM"
//! 4       4     format version, u32 LE (currently 1)
//! 8       4     head count, u32 LE (always 2: audio, text)
//! 12      48    per head: d_in, d_hidden, d_out as u64 LE
//! 60      ...   f64 LE values: audio w1, b1, w2, b2, then text w1, b1, w2, b2
//! ```
//!
//! Weight matrices are row-major (`w1` is `d_in × d_hidden`). A JSON
//! sidecar at `<checkpoint>.json` repeats the dimensions and the seed.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ASEM";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Default width of the shared embedding space.
pub const DEFAULT_EMBED_DIM: usize = 1024;

/// Mixed into the seed of the text head so both heads differ.
const TEXT_HEAD_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpDims {
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Gradients with the same layout as [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Activations retained by the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Matrix,
    hidden_pre: Matrix,
    hidden: Matrix,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.x.rows()
    }
}

fn add_bias(m: &mut Matrix, bias: &[f64]) {
    for i in 0..m.rows() {
        for (v, b) in m.row_mut(i).iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for row in m.row_iter() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

impl MlpParams {
    pub fn zeros(dims: MlpDims) -> Self {
        Self {
            w1: Matrix::zeros(dims.d_in, dims.d_hidden),
            b1: vec![0.0; dims.d_hidden],
            w2: Matrix::zeros(dims.d_hidden, dims.d_out),
            b2: vec![0.0; dims.d_out],
        }
    }

    /// Weights uniform in `±√(6/fan_in)`, zero biases, fully determined by
    /// `seed`.
    pub fn init(dims: MlpDims, seed: u64) -> Result<Self> {
        if dims.d_in == 0 || dims.d_hidden == 0 || dims.d_out == 0 {
            return Err(Error::DimMismatch(format!(
                "MLP dims must be >= 1, got {dims:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = (6.0 / dims.d_in as f64).sqrt();
        let b2 = (6.0 / dims.d_hidden as f64).sqrt();
        let w1 = Matrix::from_fn(dims.d_in, dims.d_hidden, |_, _| rng.random_range(-b1..=b1));
        let w2 = Matrix::from_fn(dims.d_hidden, dims.d_out, |_, _| rng.random_range(-b2..=b2));
        Ok(Self {
            w1,
            b1: vec![0.0; dims.d_hidden],
            w2,
            b2: vec![0.0; dims.d_out],
        })
    }

    pub fn dims(&self) -> MlpDims {
        MlpDims {
            d_in: self.w1.rows(),
            d_hidden: self.w1.cols(),
            d_out: self.w2.cols(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameter tensors in declaration order: `w1, b1, w2, b2`.
    pub fn tensors(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `y = ReLU(x·w1 + b1)·w2 + b2`.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let dims = self.dims();
        if x.cols() != dims.d_in {
            return Err(Error::shape(
                "mlp_forward",
                format!("{} input columns", dims.d_in),
                x.cols(),
            ));
        }
        let mut hidden_pre = matmul(x, &self.w1)?;
        add_bias(&mut hidden_pre, &self.b1);
        let mut hidden = hidden_pre.clone();
        for v in hidden.as_mut_slice() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let mut y = matmul(&hidden, &self.w2)?;
        add_bias(&mut y, &self.b2);
        Ok((
            y,
            ForwardCache {
                x: x.clone(),
                hidden_pre,
                hidden,
            },
        ))
    }

    /// Embeds without keeping activations.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Exact gradients of a downstream loss given `∂L/∂y`. The ReLU
    /// derivative at exactly zero is taken as zero.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_y: &Matrix,
    ) -> Result<(MlpGradients, Matrix)> {
        let dims = self.dims();
        let b = cache.x.rows();
        if cache.x.cols() != dims.d_in || cache.hidden_pre.shape() != (b, dims.d_hidden) {
            return Err(Error::CacheMismatch(format!(
                "cache holds {}x{} input / {:?} hidden, parameters are {dims:?}",
                b,
                cache.x.cols(),
                cache.hidden_pre.shape()
            )));
        }
        if grad_y.shape() != (b, dims.d_out) {
            return Err(Error::CacheMismatch(format!(
                "gradient is {:?}, forward output was {:?}",
                grad_y.shape(),
                (b, dims.d_out)
            )));
        }
        let gw2 = matmul_tn(&cache.hidden, grad_y)?;
        let gb2 = column_sums(grad_y);
        let mut g_hidden = matmul_nt(grad_y, &self.w2)?;
        for (g, &pre) in g_hidden
            .as_mut_slice()
            .iter_mut()
            .zip(cache.hidden_pre.as_slice())
        {
            if pre <= 0.0 {
                *g = 0.0;
            }
        }
        let gw1 = matmul_tn(&cache.x, &g_hidden)?;
        let gb1 = column_sums(&g_hidden);
        let gx = matmul_nt(&g_hidden, &self.w1)?;
        Ok((
            MlpGradients {
                w1: gw1,
                b1: gb1,
                w2: gw2,
                b2: gb2,
            },
            gx,
        ))
    }
}

impl MlpGradients {
    pub fn tensors(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }
}

pub fn mlp_init(d_in: usize, d_hidden: usize, d_out: usize, seed: u64) -> Result<MlpParams> {
    MlpParams::init(
        MlpDims {
            d_in,
            d_hidden,
            d_out,
        },
        seed,
    )
}

pub fn mlp_forward(params: &MlpParams, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
    params.forward(x)
}

pub fn mlp_backward(
    params: &MlpParams,
    cache: &ForwardCache,
    grad_y: &Matrix,
) -> Result<(MlpGradients, Matrix)> {
    params.backward(cache, grad_y)
}

/// One projection head per modality.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    pub audio: MlpParams,
    pub text: MlpParams,
}

impl DualEncoder {
    pub fn init(
        d_audio: usize,
        d_text: usize,
        d_hidden: usize,
        d_out: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            audio: mlp_init(d_audio, d_hidden, d_out, seed)?,
            text: mlp_init(d_text, d_hidden, d_out, seed ^ TEXT_HEAD_SEED_SALT)?,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.audio.dims().d_out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.audio
            .tensors()
            .into_iter()
            .chain(self.text.tensors())
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Self { audio, text } = self;
        audio
            .tensors_mut()
            .into_iter()
            .chain(text.tensors_mut())
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(60 + 8 * (self.audio.num_params() + self.text.num_params()));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        for head in [&self.audio, &self.text] {
            let d = head.dims();
            for v in [d.d_in, d.d_hidden, d.d_out] {
                out.extend_from_slice(&(v as u64).to_le_bytes());
            }
        }
        for t in self.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut r = crate::io::ByteReader::new(bytes);
        let magic = r.take(4).ok_or_else(|| bad("truncated header".into()))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(bad(format!("bad magic {magic:?}, expected \"ASEM\"")));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let heads = r.u32().ok_or_else(|| bad("truncated header".into()))?;
        if heads != 2 {
            return Err(bad(format!("expected 2 heads, found {heads}")));
        }
        let mut dims = Vec::with_capacity(2);
        for _ in 0..2 {
            let mut d = [0usize; 3];
            for v in &mut d {
                *v = r.u64().ok_or_else(|| bad("truncated header".into()))? as usize;
            }
            dims.push(MlpDims {
                d_in: d[0],
                d_hidden: d[1],
                d_out: d[2],
            });
        }
        let mut enc = DualEncoder {
            audio: MlpParams::zeros(dims[0]),
            text: MlpParams::zeros(dims[1]),
        };
        let expected: usize = enc.tensors().iter().map(|t| t.len()).sum();
        if r.remaining() != expected * 8 {
            return Err(bad(format!(
                "payload holds {} bytes, dims require {}",
                r.remaining(),
                expected * 8
            )));
        }
        for t in enc.tensors_mut() {
            for v in t.iter_mut() {
                *v = r.f64().expect("length checked");
                if !v.is_finite() {
                    return Err(bad("non-finite parameter".into()));
                }
            }
        }
        Ok(enc)
    }

    /// Writes the binary checkpoint and its JSON sidecar.
    pub fn save(&self, path: &Path, seed: Option<u64>) -> Result<()> {
        write_atomic(path, &self.to_bytes())?;
        let sidecar = CheckpointSidecar {
            format_version: CHECKPOINT_VERSION,
            audio: self.audio.dims(),
            text: self.text.dims(),
            seed,
        };
        let mut json = serde_json::to_string_pretty(&sidecar)?;
        json.push('\n');
        write_atomic(&sidecar_path(path), json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_bytes(&bytes, path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub format_version: u32,
    pub audio: MlpDims,
    pub text: MlpDims,
    pub seed: Option<u64>,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}
