//! The mixed masking protocol.
//!
//! With relative frequency `r` a whole audio channel is hidden; otherwise a
//! random subset of tokens across both channels is hidden. The mode is chosen
//! once per training batch; token indices are drawn per clip. Finetuning on
//! downstream tasks always masks a full channel.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tokenizer::AudioTokenGrid;

/// Masking hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskingConfig {
    /// Relative frequency of channel masking.
    pub r: f64,
    /// Fraction of tokens hidden in token mode.
    pub token_ratio: f64,
    pub seed: u64,
}

impl Default for MaskingConfig {
    fn default() -> Self {
        Self {
            r: 0.20,
            token_ratio: 0.50,
            seed: 0,
        }
    }
}

impl MaskingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(CoreError::InvalidConfig(format!("r out of range: {}", self.r)));
        }
        if self.token_ratio <= 0.0 || self.token_ratio >= 1.0 {
            return Err(CoreError::InvalidConfig(format!(
                "token_ratio out of range: {}",
                self.token_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Channel,
    Token,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelChoice {
    L,
    R,
    #[serde(rename = "none")]
    None,
}

/// Which channel to hide when building a finetune mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinetuneChannel {
    Left,
    Right,
    Random,
}

/// A concrete set of hidden token indices into the flattened audio grid.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct MaskSpec {
    pub mode: MaskMode,
    /// Sorted, unique indices in `[0, q)`.
    pub masked_indices: Vec<usize>,
    pub s: usize,
    pub channel_choice: ChannelChoice,
    /// Total token count the indices refer to.
    pub q: usize,
}

impl MaskSpec {
    pub fn channel(channel: ChannelChoice, per_channel: usize) -> Self {
        let q = 2 * per_channel;
        let range = match channel {
            ChannelChoice::L => 0..per_channel,
            ChannelChoice::R => per_channel..q,
            ChannelChoice::None => 0..0,
        };
        let masked_indices: Vec<usize> = range.collect();
        Self {
            mode: MaskMode::Channel,
            s: masked_indices.len(),
            masked_indices,
            channel_choice: channel,
            q,
        }
    }

    pub fn empty(q: usize) -> Self {
        Self {
            mode: MaskMode::Token,
            masked_indices: Vec::new(),
            s: 0,
            channel_choice: ChannelChoice::None,
            q,
        }
    }

    /// Indices NOT in the mask, in raster order.
    pub fn unmasked_indices(&self) -> Vec<usize> {
        let mut mask = vec![false; self.q];
        for &i in &self.masked_indices {
            mask[i] = true;
        }
        (0..self.q).filter(|&i| !mask[i]).collect()
    }
}

/// Pick the mask mode for one training batch.
pub fn sample_batch_mode(config: &MaskingConfig, rng: &mut ChaCha8Rng) -> MaskMode {
    if rng.gen::<f64>() < config.r {
        MaskMode::Channel
    } else {
        MaskMode::Token
    }
}

/// Draw a mask for one clip given the batch mode.
pub fn sample_mask_with_mode(
    config: &MaskingConfig,
    mode: MaskMode,
    q: usize,
    per_channel: usize,
    rng: &mut ChaCha8Rng,
) -> MaskSpec {
    match mode {
        MaskMode::Channel => {
            let ch = if rng.gen::<f64>() < 0.5 {
                ChannelChoice::L
            } else {
                ChannelChoice::R
            };
            MaskSpec::channel(ch, per_channel)
        }
        MaskMode::Token => {
            let s = (config.token_ratio * q as f64).round() as usize;
            let mut all: Vec<usize> = (0..q).collect();
            all.shuffle(rng);
            let mut masked: Vec<usize> = all[..s].to_vec();
            masked.sort_unstable();
            MaskSpec {
                mode: MaskMode::Token,
                s,
                masked_indices: masked,
                channel_choice: ChannelChoice::None,
                q,
            }
        }
    }
}

/// Mode choice plus a single clip's mask in one call.
pub fn sample_mask(
    config: &MaskingConfig,
    q: usize,
    per_channel: usize,
    rng: &mut ChaCha8Rng,
) -> MaskSpec {
    let mode = sample_batch_mode(config, rng);
    sample_mask_with_mode(config, mode, q, per_channel, rng)
}

/// Deterministic-channel mask used when finetuning.
pub fn finetune_mask(
    choice: FinetuneChannel,
    per_channel: usize,
    rng: &mut ChaCha8Rng,
) -> MaskSpec {
    let ch = match choice {
        FinetuneChannel::Left => ChannelChoice::L,
        FinetuneChannel::Right => ChannelChoice::R,
        FinetuneChannel::Random => {
            if rng.gen::<f64>() < 0.5 {
                ChannelChoice::L
            } else {
                ChannelChoice::R
            }
        }
    };
    MaskSpec::channel(ch, per_channel)
}

/// Split a token grid into survivors (raster order, with coordinates) and
/// the ground-truth masked patches (masked-index order).
pub fn apply_mask(
    grid: &AudioTokenGrid,
    spec: &MaskSpec,
) -> Result<(Array2<f32>, Vec<(usize, usize, usize)>, Array2<f32>)> {
    let q = grid.total_tokens();
    for &i in &spec.masked_indices {
        if i >= q {
            return Err(CoreError::IndexOutOfRange { idx: i, q });
        }
    }
    let unmasked = spec.unmasked_indices();
    let d = grid.tokens.shape()[1];
    let mut survivors = Array2::zeros((unmasked.len(), d));
    let mut coords = Vec::with_capacity(unmasked.len());
    for (row, &i) in unmasked.iter().enumerate() {
        survivors.row_mut(row).assign(&grid.tokens.row(i));
        coords.push(grid.coords[i]);
    }
    let mut targets = Array2::zeros((spec.s, d));
    for (row, &i) in spec.masked_indices.iter().enumerate() {
        targets.row_mut(row).assign(&grid.tokens.row(i));
    }
    Ok((survivors, coords, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::mel::MelSpectrogramPair;
    use crate::tokenizer::tokenize_audio;
    use ndarray::Array2;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn standard_grid() -> AudioTokenGrid {
        let pair = MelSpectrogramPair {
            left: Array2::from_shape_fn((98, 128), |(t, m)| (t * 128 + m) as f32),
            right: Array2::from_shape_fn((98, 128), |(t, m)| -((t * 128 + m) as f32)),
        };
        tokenize_audio(&pair).unwrap()
    }

    #[test]
    fn r_one_always_channel() {
        let config = MaskingConfig {
            r: 1.0,
            ..Default::default()
        };
        let mut rng = rng(1);
        for _ in 0..50 {
            let spec = sample_mask(&config, 784, 392, &mut rng);
            assert_eq!(spec.mode, MaskMode::Channel);
            assert_eq!(spec.s, 392);
        }
    }

    #[test]
    fn r_zero_token_mode_s_is_half() {
        let config = MaskingConfig {
            r: 0.0,
            token_ratio: 0.5,
            seed: 0,
        };
        let mut rng = rng(2);
        let spec = sample_mask(&config, 784, 392, &mut rng);
        assert_eq!(spec.mode, MaskMode::Token);
        assert_eq!(spec.s, 392);
    }

    #[test]
    fn channel_mode_fraction_within_binomial_interval() {
        // oracle: 99% binomial interval for n=10000, p=0.2 is within
        // 0.2 +- 2.58*sqrt(0.2*0.8/10000) ~= [0.1897, 0.2103] c [0.18, 0.22]
        let config = MaskingConfig::default();
        let mut rng = rng(3);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| sample_batch_mode(&config, &mut rng) == MaskMode::Channel)
            .count();
        let frac = hits as f64 / n as f64;
        assert!((0.18..=0.22).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn finetune_left_and_right_index_ranges() {
        let mut r = rng(4);
        let left = finetune_mask(FinetuneChannel::Left, 392, &mut r);
        assert_eq!(left.masked_indices, (0..392).collect::<Vec<_>>());
        let right = finetune_mask(FinetuneChannel::Right, 392, &mut r);
        assert_eq!(right.masked_indices, (392..784).collect::<Vec<_>>());
    }

    #[test]
    fn finetune_random_is_balanced() {
        let mut r = rng(5);
        let n = 10_000;
        let lefts = (0..n)
            .filter(|_| {
                finetune_mask(FinetuneChannel::Random, 392, &mut r).channel_choice
                    == ChannelChoice::L
            })
            .count();
        let frac = lefts as f64 / n as f64;
        assert!((0.48..=0.52).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn empty_mask_keeps_everything() {
        let grid = standard_grid();
        let spec = MaskSpec::empty(784);
        let (survivors, coords, targets) = apply_mask(&grid, &spec).unwrap();
        assert_eq!(survivors.shape()[0], 784);
        assert_eq!(coords.len(), 784);
        assert_eq!(targets.shape()[0], 0);
        assert_eq!(survivors, grid.tokens);
    }

    #[test]
    fn channel_mask_survivors_are_all_right() {
        let grid = standard_grid();
        let spec = MaskSpec::channel(ChannelChoice::L, 392);
        let (_, coords, _) = apply_mask(&grid, &spec).unwrap();
        assert!(coords.iter().all(|&(ch, _, _)| ch == 1));
    }

    #[test]
    fn targets_match_direct_indexing() {
        let grid = standard_grid();
        let config = MaskingConfig {
            r: 0.0,
            token_ratio: 0.3,
            seed: 0,
        };
        let mut r = rng(6);
        let spec = sample_mask(&config, 784, 392, &mut r);
        let (_, _, targets) = apply_mask(&grid, &spec).unwrap();
        for (row, &i) in spec.masked_indices.iter().enumerate() {
            assert_eq!(targets.row(row), grid.tokens.row(i));
        }
    }

    #[test]
    fn out_of_range_index_rejected() {
        let grid = standard_grid();
        let spec = MaskSpec {
            mode: MaskMode::Token,
            masked_indices: vec![784],
            s: 1,
            channel_choice: ChannelChoice::None,
            q: 785,
        };
        assert!(matches!(
            apply_mask(&grid, &spec),
            Err(CoreError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn partition_property() {
        let config = MaskingConfig::default();
        let mut r = rng(7);
        for _ in 0..20 {
            let spec = sample_mask(&config, 784, 392, &mut r);
            let mut all: Vec<usize> = spec.masked_indices.clone();
            all.extend(spec.unmasked_indices());
            all.sort_unstable();
            assert_eq!(all, (0..784).collect::<Vec<_>>());
        }
    }

    #[test]
    fn same_rng_state_reproduces_sequence() {
        let config = MaskingConfig::default();
        let seq_a: Vec<MaskSpec> = {
            let mut r = rng(42);
            (0..10).map(|_| sample_mask(&config, 784, 392, &mut r)).collect()
        };
        let seq_b: Vec<MaskSpec> = {
            let mut r = rng(42);
            (0..10).map(|_| sample_mask(&config, 784, 392, &mut r)).collect()
        };
        assert_eq!(seq_a, seq_b);
    }

    #[test]
    fn mask_spec_json_round_trip() {
        let spec = MaskSpec::channel(ChannelChoice::R, 392);
        let json = serde_json::to_string(&spec).unwrap();
        let back: MaskSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
