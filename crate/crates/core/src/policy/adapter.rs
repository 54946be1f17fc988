//! Geometry-fusion adapter: a seeded per-token two-layer perceptron that
//! projects pooled geometry tokens from the observation and the goal into
//! a shared space, plus the goal-alignment score built on it.
//!
//! The adapter stands in for a learned module: the contracts implemented
//! here are the interface ones — pooling, token-wise projection, fused
//! alignment — with weights drawn from a seeded Gaussian rather than
//! trained.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    cosine_similarity, flatten_tokens, spatial_average_pool, Embedding, TokenGrid,
};
use crate::rng::substream;
use crate::simworld::ObservationFrame;

/// Default hidden width of the adapter perceptron.
pub const DEFAULT_HIDDEN_DIM: usize = 32;
/// Default output (policy) dimension C_p.
pub const DEFAULT_OUTPUT_DIM: usize = 32;
/// Default spatial pooling factor applied to both grids before fusion.
pub const DEFAULT_POOL_FACTOR: usize = 2;

/// Weights of the per-token projection: input channels -> hidden (ReLU)
/// -> output. Reproducible from `seed`; biases start at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    pub input_channels: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub seed: u64,
    /// hidden x input, row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// output x hidden, row-major.
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl AdapterParams {
    /// Gaussian init scaled by 1/sqrt(fan-in), zero biases, all drawn from
    /// the seed's dedicated substream.
    pub fn seeded(
        input_channels: usize,
        hidden_dim: usize,
        output_dim: usize,
        seed: u64,
    ) -> Result<AdapterParams> {
        if input_channels == 0 || hidden_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidParameter(
                "adapter dimensions must be positive".into(),
            ));
        }
        let mut rng = substream(seed, "adapter-init");
        let scale1 = 1.0 / (input_channels as f64).sqrt();
        let w1 = (0..hidden_dim * input_channels)
            .map(|_| scale1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let scale2 = 1.0 / (hidden_dim as f64).sqrt();
        let w2 = (0..output_dim * hidden_dim)
            .map(|_| scale2 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(AdapterParams {
            input_channels,
            hidden_dim,
            output_dim,
            seed,
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; output_dim],
        })
    }

    /// Project one token through the perceptron.
    pub fn apply(&self, token: &[f64]) -> Result<Vec<f64>> {
        if token.len() != self.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "token dim {} != adapter input {}",
                token.len(),
                self.input_channels
            )));
        }
        let mut hidden = vec![0.0; self.hidden_dim];
        for (h, out) in hidden.iter_mut().enumerate() {
            let row = &self.w1[h * self.input_channels..(h + 1) * self.input_channels];
            let pre: f64 =
                row.iter().zip(token).map(|(w, x)| w * x).sum::<f64>() + self.b1[h];
            *out = pre.max(0.0); // ReLU
        }
        let mut output = vec![0.0; self.output_dim];
        for (o, out) in output.iter_mut().enumerate() {
            let row = &self.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
            *out = row.iter().zip(&hidden).map(|(w, x)| w * x).sum::<f64>() + self.b2[o];
        }
        Ok(output)
    }

    fn matrices(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }
}

/// Pool both geometry grids, flatten each to a token sequence, concatenate
/// (observation tokens first), and project every token. Output length is
/// exactly L_obs + L_goal, each token of the adapter's output dimension.
pub fn geometry_fuse(
    obs_grid: &TokenGrid,
    goal_grid: &TokenGrid,
    params: &AdapterParams,
    pool_factor: usize,
) -> Result<Vec<Vec<f64>>> {
    if obs_grid.channels() != goal_grid.channels() {
        return Err(Error::ShapeMismatch(format!(
            "geometry channel mismatch: obs {} vs goal {}",
            obs_grid.channels(),
            goal_grid.channels()
        )));
    }
    if obs_grid.channels() != params.input_channels {
        return Err(Error::ShapeMismatch(format!(
            "geometry channels {} != adapter input {}",
            obs_grid.channels(),
            params.input_channels
        )));
    }
    let obs_pooled = spatial_average_pool(obs_grid, pool_factor)?;
    let goal_pooled = spatial_average_pool(goal_grid, pool_factor)?;
    flatten_tokens(&obs_pooled)
        .iter()
        .chain(flatten_tokens(&goal_pooled).iter())
        .map(|token| params.apply(token))
        .collect()
}

/// How well the current observation lines up with the goal observation:
/// an even blend of raw frame-embedding similarity and the similarity of
/// the mean fused geometry tokens of each half, floored at zero.
pub fn goal_alignment(
    obs: &ObservationFrame,
    goal: &ObservationFrame,
    params: &AdapterParams,
) -> Result<f64> {
    let fused = geometry_fuse(
        &obs.geometry_grid,
        &goal.geometry_grid,
        params,
        DEFAULT_POOL_FACTOR,
    )?;
    let obs_tokens = fused.len() / 2;
    let obs_mean = mean_token(&fused[..obs_tokens]);
    let goal_mean = mean_token(&fused[obs_tokens..]);
    let visual = cosine_similarity(&obs.frame_embedding, &goal.frame_embedding);
    let fused_sim = cosine_raw(&obs_mean, &goal_mean);
    Ok((0.5 * visual + 0.5 * fused_sim).max(0.0))
}

fn mean_token(tokens: &[Vec<f64>]) -> Vec<f64> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let dim = tokens[0].len();
    let mut mean = vec![0.0; dim];
    for token in tokens {
        for (m, v) in mean.iter_mut().zip(token) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= tokens.len() as f64;
    }
    mean
}

/// Cosine over raw slices; zero or degenerate vectors score 0.
fn cosine_raw(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

// --- Weights file: versioned header + row-major matrices, bit-exact. ---

const WEIGHTS_MAGIC: &[u8; 8] = b"MGNADPT1";

/// Serialize the adapter to its weights-file format.
pub fn encode_weights(params: &AdapterParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    for dim in [
        params.input_channels as u64,
        params.hidden_dim as u64,
        params.output_dim as u64,
        params.seed,
    ] {
        out.extend_from_slice(&dim.to_le_bytes());
    }
    for matrix in params.matrices() {
        for &v in matrix {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parse a weights file; every structural defect is a distinct error.
pub fn decode_weights(bytes: &[u8]) -> Result<AdapterParams> {
    let header_len = WEIGHTS_MAGIC.len() + 4 * 8;
    if bytes.len() < header_len {
        return Err(Error::Format("adapter weights file truncated".into()));
    }
    if &bytes[..WEIGHTS_MAGIC.len()] != WEIGHTS_MAGIC {
        return Err(Error::Format("bad adapter weights magic".into()));
    }
    let mut cursor = WEIGHTS_MAGIC.len();
    let mut read_u64 = || {
        let v = u64::from_le_bytes(bytes[cursor..cursor + 8].try_into().unwrap());
        cursor += 8;
        v
    };
    let input_channels = read_u64() as usize;
    let hidden_dim = read_u64() as usize;
    let output_dim = read_u64() as usize;
    let seed = read_u64();
    if input_channels == 0 || hidden_dim == 0 || output_dim == 0 {
        return Err(Error::Format("adapter weights header has zero dim".into()));
    }

    let counts = [
        hidden_dim * input_channels,
        hidden_dim,
        output_dim * hidden_dim,
        output_dim,
    ];
    let expected = header_len + 8 * counts.iter().sum::<usize>();
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "adapter weights length {} != expected {expected}",
            bytes.len()
        )));
    }
    let mut matrices: Vec<Vec<f64>> = Vec::with_capacity(4);
    for count in counts {
        let mut m = Vec::with_capacity(count);
        for _ in 0..count {
            let v = f64::from_le_bytes(bytes[cursor..cursor + 8].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format("adapter weights contain non-finite".into()));
            }
            m.push(v);
            cursor += 8;
        }
        matrices.push(m);
    }
    let b2 = matrices.pop().unwrap();
    let w2 = matrices.pop().unwrap();
    let b1 = matrices.pop().unwrap();
    let w1 = matrices.pop().unwrap();
    Ok(AdapterParams {
        input_channels,
        hidden_dim,
        output_dim,
        seed,
        w1,
        b1,
        w2,
        b2,
    })
}
