//! Feature vectors and token grids: the currency of visual similarity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit-norm feature vector. The only constructor is [`Embedding::normalize`],
/// so every value in circulation has L2 norm 1 (within 1e-6).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Normalize a raw vector to unit length.
    ///
    /// Zero or non-finite input is a hard error: it signals a degenerate
    /// observation upstream, not something to paper over.
    pub fn normalize(raw: &[f64]) -> Result<Embedding> {
        if raw.is_empty() {
            return Err(Error::DegenerateVector("empty vector".into()));
        }
        if !raw.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateVector(
                "vector has non-finite components".into(),
            ));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateVector("vector has zero norm".into()));
        }
        Ok(Embedding {
            values: raw.iter().map(|v| v / norm).collect(),
        })
    }

    /// Rebuild an embedding from values that are already unit-norm (e.g.
    /// read back from a file), without renormalizing — renormalization
    /// would perturb the stored bits by a ulp and break round-tripping.
    pub(crate) fn from_unit_values(values: Vec<f64>) -> Result<Embedding> {
        let norm_sq: f64 = values.iter().map(|v| v * v).sum();
        if !norm_sq.is_finite() || (norm_sq - 1.0).abs() > 1e-6 {
            return Err(Error::DegenerateVector(format!(
                "values are not unit-norm (|v|^2 = {norm_sq})"
            )));
        }
        Ok(Embedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Cosine similarity of two unit-norm embeddings: their dot product,
/// clamped to [-1, 1] to absorb rounding.
///
/// Panics on dimension mismatch; mixing feature spaces is a programming
/// error, not a runtime condition.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> f64 {
    assert_eq!(
        a.dim(),
        b.dim(),
        "cosine_similarity: dimension mismatch ({} vs {})",
        a.dim(),
        b.dim()
    );
    let dot: f64 = a
        .values
        .iter()
        .zip(b.values.iter())
        .map(|(x, y)| x * y)
        .sum();
    dot.clamp(-1.0, 1.0)
}

/// Dense height x width x channels grid of real values, row-major with
/// channels innermost. Holds geometry feature maps before pooling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl TokenGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<TokenGrid> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "grid data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateVector(
                "grid has non-finite values".into(),
            ));
        }
        Ok(TokenGrid {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> TokenGrid {
        TokenGrid {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + channel] = value;
    }
}

/// Average-pool a grid by an integer factor, per channel.
///
/// Output dims are (height/factor, width/factor, channels); each output
/// cell is the arithmetic mean of its factor x factor input block.
pub fn spatial_average_pool(grid: &TokenGrid, factor: usize) -> Result<TokenGrid> {
    if factor == 0 || grid.height % factor != 0 || grid.width % factor != 0 {
        return Err(Error::ShapeMismatch(format!(
            "pool factor {} does not divide {}x{}",
            factor, grid.height, grid.width
        )));
    }
    let oh = grid.height / factor;
    let ow = grid.width / factor;
    let mut out = TokenGrid::zeros(oh, ow, grid.channels);
    let inv = 1.0 / (factor * factor) as f64;
    for r in 0..oh {
        for c in 0..ow {
            for ch in 0..grid.channels {
                let mut sum = 0.0;
                for dr in 0..factor {
                    for dc in 0..factor {
                        sum += grid.get(r * factor + dr, c * factor + dc, ch);
                    }
                }
                out.set(r, c, ch, sum * inv);
            }
        }
    }
    Ok(out)
}

/// Flatten a grid into its row-major token sequence: height*width tokens,
/// each of length channels.
pub fn flatten_tokens(grid: &TokenGrid) -> Vec<Vec<f64>> {
    grid.data
        .chunks(grid.channels)
        .map(|chunk| chunk.to_vec())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basis(dim: usize, axis: usize) -> Embedding {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Embedding::normalize(&v).unwrap()
    }

    #[test]
    fn cosine_self_and_antipodal() {
        let e = Embedding::normalize(&[0.2, -0.5, 1.0, 0.3]).unwrap();
        let neg: Vec<f64> = e.values().iter().map(|v| -v).collect();
        let neg = Embedding::normalize(&neg).unwrap();
        assert!((cosine_similarity(&e, &e) - 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&e, &neg) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal_basis() {
        let a = basis(8, 0);
        let b = basis(8, 1);
        assert_eq!(cosine_similarity(&a, &b), 0.0);
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn cosine_dimension_mismatch_panics() {
        let a = basis(4, 0);
        let b = basis(5, 0);
        cosine_similarity(&a, &b);
    }

    #[test]
    fn normalize_three_four_five() {
        let e = Embedding::normalize(&[3.0, 4.0]).unwrap();
        assert!((e.values()[0] - 0.6).abs() < 1e-12);
        assert!((e.values()[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn normalize_idempotent_and_scaling() {
        let e = Embedding::normalize(&[2.0, 0.0, 0.0]).unwrap();
        assert_eq!(e.values(), &[1.0, 0.0, 0.0]);
        let again = Embedding::normalize(e.values()).unwrap();
        assert_eq!(again.values(), e.values());
    }

    #[test]
    fn normalize_rejects_degenerate() {
        assert!(Embedding::normalize(&[]).is_err());
        assert!(Embedding::normalize(&[0.0, 0.0]).is_err());
        assert!(Embedding::normalize(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn pool_two_by_two_mean() {
        let grid = TokenGrid::new(2, 2, 1, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let pooled = spatial_average_pool(&grid, 2).unwrap();
        assert_eq!(pooled.height(), 1);
        assert_eq!(pooled.width(), 1);
        assert_eq!(pooled.data(), &[4.0]);
    }

    #[test]
    fn pool_constant_and_identity() {
        let grid = TokenGrid::new(4, 4, 2, vec![2.5; 32]).unwrap();
        let pooled = spatial_average_pool(&grid, 2).unwrap();
        assert!(pooled.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
        let identity = spatial_average_pool(&grid, 1).unwrap();
        assert_eq!(identity, grid);
    }

    #[test]
    fn pool_rejects_non_divisible() {
        let grid = TokenGrid::zeros(3, 3, 1);
        assert!(spatial_average_pool(&grid, 2).is_err());
    }

    #[test]
    fn flatten_single_cell_and_order() {
        let grid = TokenGrid::new(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(flatten_tokens(&grid), vec![vec![1.0, 2.0, 3.0]]);

        let grid = TokenGrid::new(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(
            flatten_tokens(&grid),
            vec![vec![1.0, 2.0], vec![3.0, 4.0]]
        );
    }

    // Index-arithmetic oracle: token t, channel c must equal
    // data[t * channels + c] for row-major order.
    #[test]
    fn flatten_matches_index_oracle() {
        let mut data = Vec::new();
        for i in 0..(4 * 4 * 8) {
            data.push((i as f64) * 0.37 - 5.0);
        }
        let grid = TokenGrid::new(4, 4, 8, data.clone()).unwrap();
        let tokens = flatten_tokens(&grid);
        assert_eq!(tokens.len(), 16);
        for (t, token) in tokens.iter().enumerate() {
            for (c, &v) in token.iter().enumerate() {
                assert_eq!(v, data[t * 8 + c]);
            }
        }
    }

    proptest! {
        #[test]
        fn cosine_symmetric(a in proptest::collection::vec(-10.0f64..10.0, 6),
                            b in proptest::collection::vec(-10.0f64..10.0, 6)) {
            prop_assume!(a.iter().map(|v| v*v).sum::<f64>() > 1e-6);
            prop_assume!(b.iter().map(|v| v*v).sum::<f64>() > 1e-6);
            let ea = Embedding::normalize(&a).unwrap();
            let eb = Embedding::normalize(&b).unwrap();
            let ab = cosine_similarity(&ea, &eb);
            let ba = cosine_similarity(&eb, &ea);
            prop_assert_eq!(ab, ba);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn normalize_scale_invariant(v in proptest::collection::vec(-10.0f64..10.0, 5),
                                     k in 0.001f64..1000.0) {
            prop_assume!(v.iter().map(|x| x*x).sum::<f64>() > 1e-6);
            let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
            let e1 = Embedding::normalize(&v).unwrap();
            let e2 = Embedding::normalize(&scaled).unwrap();
            for (x, y) in e1.values().iter().zip(e2.values()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn pool_preserves_channel_means(data in proptest::collection::vec(-5.0f64..5.0, 4 * 6 * 3)) {
            let grid = TokenGrid::new(4, 6, 3, data).unwrap();
            let pooled = spatial_average_pool(&grid, 2).unwrap();
            for ch in 0..3 {
                let mean_in: f64 = (0..4)
                    .flat_map(|r| (0..6).map(move |c| (r, c)))
                    .map(|(r, c)| grid.get(r, c, ch))
                    .sum::<f64>() / 24.0;
                let mean_out: f64 = (0..2)
                    .flat_map(|r| (0..3).map(move |c| (r, c)))
                    .map(|(r, c)| pooled.get(r, c, ch))
                    .sum::<f64>() / 6.0;
                prop_assert!((mean_in - mean_out).abs() < 1e-9);
            }
        }
    }
}
