//! Per-tile model selection and per-channel image-dependent distributions.
//!
//! Every tile takes the dictionary entry with the lowest cross-entropy code
//! length. A channel whose tiles are poorly covered may additionally estimate
//! one distribution of its own: tiles whose best dictionary code length
//! exceeds their self-entropy length by more than the inclusion threshold are
//! averaged, and the result is transmitted (8-bit quantized) only when the
//! bits it saves exceed its estimated transmission cost. Reassigned tiles use
//! the reserved index 255.

use crate::coder::CdfTable;
use crate::dictionary::{
    cross_entropy_bits, Dictionary, Multinomial, CUSTOM_MODEL_INDEX, DEFAULT_EPSILON,
};
use crate::error::{Error, Result};
use crate::tensor::{tile_histogram, Alphabet, Tile};

/// Relative code-length gap above which a tile joins the custom average.
pub const DEFAULT_THRESHOLD: f64 = 0.005;
/// Transmission-cost estimate per occupied bin of a custom distribution.
pub const COST_BITS_PER_BIN: f64 = 7.0;

/// A custom distribution quantized for the wire: 8-bit weights over the span
/// between the first and last nonzero bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedDist {
    pub first_symbol: i32,
    pub last_symbol: i32,
    pub weights: Vec<u8>,
}

impl QuantizedDist {
    pub fn span(&self) -> usize {
        (self.last_symbol as i64 - self.first_symbol as i64 + 1) as usize
    }
}

/// Candidate image-dependent distribution for one channel, before quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomEstimate {
    /// Smoothed mean of the included tiles' histograms.
    pub dist: Multinomial,
    /// First nonzero bin of the pre-smoothing mean (alphabet index).
    pub support_first: usize,
    /// Last nonzero bin of the pre-smoothing mean (alphabet index).
    pub support_last: usize,
    /// Positions (within the channel's tile slice) of the included tiles.
    pub included: Vec<usize>,
}

/// Side information for a whole tensor: per-tile model indices in canonical
/// order plus one optional custom distribution per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TilePlan {
    pub tile_size: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub channels: usize,
    /// One byte per tile, channel-major then row-major; 255 addresses the
    /// owning channel's custom distribution.
    pub indices: Vec<u8>,
    pub custom: Vec<Option<QuantizedDist>>,
    pub accounting: Vec<ChannelAccounting>,
}

impl TilePlan {
    pub fn tiles_per_channel(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Structural checks shared by encoder and decoder: index 255 only in
    /// channels that carry a custom distribution, all other indices < K.
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.indices.len() != self.tiles_per_channel() * self.channels {
            return Err(Error::invalid("index plane size mismatch"));
        }
        if self.custom.len() != self.channels {
            return Err(Error::invalid("one custom slot required per channel"));
        }
        let tpc = self.tiles_per_channel();
        for (z, chunk) in self.indices.chunks(tpc).enumerate() {
            for &idx in chunk {
                if idx == CUSTOM_MODEL_INDEX {
                    if self.custom[z].is_none() {
                        return Err(Error::invalid(format!(
                            "channel {z} uses index 255 without a custom distribution"
                        )));
                    }
                } else if idx as usize >= k {
                    return Err(Error::invalid(format!(
                        "model index {idx} out of range for dictionary of {k}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-channel rate accounting gathered while planning.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelAccounting {
    /// Payload bits if every tile used its best dictionary entry.
    pub dict_bits: f64,
    /// Payload bits under the final plan.
    pub planned_bits: f64,
    /// Bits saved by tiles reassigned to the custom distribution.
    pub custom_saved_bits: f64,
    /// 7-bits-per-bin estimate used for the send decision (0 without a candidate).
    pub custom_cost_estimate_bits: f64,
    /// Bits the custom block actually spends on this channel, flag included.
    pub custom_wire_bits: u64,
}

/// Plan for one channel, ready for container assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPlan {
    pub indices: Vec<u8>,
    pub custom: Option<QuantizedDist>,
    pub accounting: ChannelAccounting,
}

/// Nonzero (symbol index, count) pairs of a tile histogram.
fn tile_pairs(tile: &Tile, alphabet: Alphabet) -> Result<Vec<(usize, u64)>> {
    let h = tile_histogram(tile, alphabet)?;
    Ok(h.counts()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(s, &c)| (s, c))
        .collect())
}

fn bits_under(pairs: &[(usize, u64)], log2_probs: &[f64]) -> f64 {
    pairs
        .iter()
        .map(|&(s, c)| -(c as f64) * log2_probs[s])
        .sum()
}

fn select_pairs(pairs: &[(usize, u64)], dict: &Dictionary) -> (usize, f64) {
    let mut best_i = 0;
    let mut best_bits = f64::INFINITY;
    for i in 0..dict.k() {
        let bits = bits_under(pairs, dict.log2_probs(i));
        if bits < best_bits {
            best_i = i;
            best_bits = bits;
        }
    }
    (best_i, best_bits)
}

/// Pick the dictionary entry with the minimum code length for a tile.
/// Ties break toward the lowest index. Returns (index, bits).
pub fn select_model(tile: &Tile, dict: &Dictionary) -> Result<(usize, f64)> {
    let pairs = tile_pairs(tile, dict.alphabet())?;
    Ok(select_pairs(&pairs, dict))
}

/// Estimate a channel's custom distribution from its poorly modeled tiles.
///
/// A tile is included when its best dictionary code length exceeds its
/// self-entropy code length (the tile's own smoothed empirical distribution)
/// by more than `inclusion_threshold`, relative to the dictionary length.
/// Returns the smoothed unweighted mean of the included histograms, or `None`
/// when no tile qualifies.
pub fn estimate_custom(
    tiles: &[Tile],
    dict: &Dictionary,
    inclusion_threshold: f64,
) -> Result<Option<CustomEstimate>> {
    let alphabet = dict.alphabet();
    let selections = tiles
        .iter()
        .map(|t| Ok(select_pairs(&tile_pairs(t, alphabet)?, dict)))
        .collect::<Result<Vec<_>>>()?;
    estimate_custom_inner(
        tiles,
        &selections,
        alphabet,
        inclusion_threshold,
        Averaging::PerTile,
    )
}

/// Experimental variant that pools raw counts of the included tiles instead of
/// giving each tile one vote; large tiles then weigh more.
pub fn estimate_custom_pooled(
    tiles: &[Tile],
    dict: &Dictionary,
    inclusion_threshold: f64,
) -> Result<Option<CustomEstimate>> {
    let alphabet = dict.alphabet();
    let selections = tiles
        .iter()
        .map(|t| Ok(select_pairs(&tile_pairs(t, alphabet)?, dict)))
        .collect::<Result<Vec<_>>>()?;
    estimate_custom_inner(
        tiles,
        &selections,
        alphabet,
        inclusion_threshold,
        Averaging::PooledCounts,
    )
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Averaging {
    PerTile,
    PooledCounts,
}

fn estimate_custom_inner(
    tiles: &[Tile],
    selections: &[(usize, f64)],
    alphabet: Alphabet,
    inclusion_threshold: f64,
    averaging: Averaging,
) -> Result<Option<CustomEstimate>> {
    if !(inclusion_threshold >= 0.0 && inclusion_threshold.is_finite()) {
        return Err(Error::invalid(
            "inclusion threshold must be finite and >= 0",
        ));
    }
    let n = alphabet.size();
    let mut included = Vec::new();
    let mut acc = vec![0.0f64; n];
    let mut votes = 0.0f64;
    for (pos, tile) in tiles.iter().enumerate() {
        let h = tile_histogram(tile, alphabet)?;
        let q = h.normalized();
        let l_dict = selections[pos].1;
        if l_dict <= 0.0 {
            continue;
        }
        let l_true = cross_entropy_bits(&h, &Multinomial::smooth(&q, DEFAULT_EPSILON)?);
        if (l_dict - l_true) / l_dict > inclusion_threshold {
            included.push(pos);
            match averaging {
                Averaging::PerTile => {
                    votes += 1.0;
                    for (m, v) in acc.iter_mut().zip(&q) {
                        *m += v;
                    }
                }
                Averaging::PooledCounts => {
                    votes += h.total() as f64;
                    for (m, &c) in acc.iter_mut().zip(h.counts()) {
                        *m += c as f64;
                    }
                }
            }
        }
    }
    if included.is_empty() {
        return Ok(None);
    }
    for m in &mut acc {
        *m /= votes;
    }
    let support_first = acc.iter().position(|&v| v > 0.0).expect("mean sums to 1");
    let support_last = acc.iter().rposition(|&v| v > 0.0).unwrap();
    Ok(Some(CustomEstimate {
        dist: Multinomial::smooth(&acc, DEFAULT_EPSILON)?,
        support_first,
        support_last,
        included,
    }))
}

/// Transmission-cost estimate for the send decision: occupied span times 7 bits.
pub fn custom_cost_bits(est: &CustomEstimate) -> f64 {
    (est.support_last - est.support_first + 1) as f64 * COST_BITS_PER_BIN
}

/// Quantize a custom estimate to 8-bit weights over its pre-smoothing support
/// span. In-span weights that round to zero are promoted to 1 so every spanned
/// symbol stays decodable.
pub fn quantize_dist(est: &CustomEstimate, alphabet: Alphabet) -> QuantizedDist {
    let mut weights: Vec<u8> = (est.support_first..=est.support_last)
        .map(|s| (est.dist.probs()[s] * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    for w in &mut weights {
        if *w == 0 {
            *w = 1;
        }
    }
    QuantizedDist {
        first_symbol: alphabet.value_at(est.support_first),
        last_symbol: alphabet.value_at(est.support_last),
        weights,
    }
}

/// Reconstruct the full-alphabet distribution a quantized custom describes:
/// normalized weights inside the span, epsilon smoothing outside. Encoder and
/// decoder both evaluate the custom model through this function, so their
/// coding tables agree exactly.
pub fn dequantize_dist(qd: &QuantizedDist, alphabet: Alphabet) -> Result<Multinomial> {
    if qd.first_symbol > qd.last_symbol {
        return Err(Error::invalid("custom span is empty"));
    }
    if !alphabet.contains(qd.first_symbol) || !alphabet.contains(qd.last_symbol) {
        return Err(Error::invalid("custom span outside the alphabet"));
    }
    if qd.weights.len() != qd.span() {
        return Err(Error::invalid(format!(
            "custom span of {} bins carries {} weights",
            qd.span(),
            qd.weights.len()
        )));
    }
    let total: u64 = qd.weights.iter().map(|&w| w as u64).sum();
    if total == 0 {
        return Err(Error::invalid("custom weights are all zero"));
    }
    let mut probs = vec![0.0f64; alphabet.size()];
    let first = alphabet.index_of(qd.first_symbol);
    for (i, &w) in qd.weights.iter().enumerate() {
        probs[first + i] = w as f64 / total as f64;
    }
    Multinomial::smooth(&probs, DEFAULT_EPSILON)
}

/// Plan one channel: select per-tile dictionary entries, then decide whether a
/// custom distribution pays for itself. A tile moves to index 255 exactly when
/// the dequantized custom model codes it in strictly fewer bits than its best
/// dictionary entry, and the custom is sent only when those savings strictly
/// exceed the 7-bits-per-bin cost estimate.
pub fn plan_channel(tiles: &[Tile], dict: &Dictionary, threshold: f64) -> Result<ChannelPlan> {
    if tiles.is_empty() {
        return Err(Error::invalid("channel holds no tiles"));
    }
    let alphabet = dict.alphabet();
    let mut pairs = Vec::with_capacity(tiles.len());
    let mut selections = Vec::with_capacity(tiles.len());
    for tile in tiles {
        let p = tile_pairs(tile, alphabet)?;
        let sel = select_pairs(&p, dict);
        pairs.push(p);
        selections.push(sel);
    }
    let dict_bits: f64 = selections.iter().map(|s| s.1).sum();
    let mut indices: Vec<u8> = selections.iter().map(|s| s.0 as u8).collect();
    let mut accounting = ChannelAccounting {
        dict_bits,
        planned_bits: dict_bits,
        custom_wire_bits: 8,
        ..Default::default()
    };

    let est = estimate_custom_inner(tiles, &selections, alphabet, threshold, Averaging::PerTile)?;
    let Some(est) = est else {
        return Ok(ChannelPlan {
            indices,
            custom: None,
            accounting,
        });
    };

    let qd = quantize_dist(&est, alphabet);
    let dequantized = dequantize_dist(&qd, alphabet)?;
    let custom_cdf = dequantized.to_cdf()?;
    let custom_log2: Vec<f64> = (0..alphabet.size())
        .map(|s| custom_cdf.prob(s).log2())
        .collect();

    let mut savings = 0.0;
    let mut better = Vec::new();
    for (pos, p) in pairs.iter().enumerate() {
        let c_bits = bits_under(p, &custom_log2);
        if c_bits < selections[pos].1 {
            savings += selections[pos].1 - c_bits;
            better.push((pos, c_bits));
        }
    }
    let cost = custom_cost_bits(&est);
    accounting.custom_cost_estimate_bits = cost;

    if savings > cost {
        for &(pos, c_bits) in &better {
            indices[pos] = CUSTOM_MODEL_INDEX;
            accounting.planned_bits += c_bits - selections[pos].1;
        }
        accounting.custom_saved_bits = savings;
        accounting.custom_wire_bits = (1 + 4 + 4 + qd.weights.len() as u64) * 8;
        Ok(ChannelPlan {
            indices,
            custom: Some(qd),
            accounting,
        })
    } else {
        Ok(ChannelPlan {
            indices,
            custom: None,
            accounting,
        })
    }
}

/// Coding table for a channel's custom distribution.
pub(crate) fn custom_coding_table(qd: &QuantizedDist, alphabet: Alphabet) -> Result<CdfTable> {
    dequantize_dist(qd, alphabet)?.to_cdf()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Provenance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dict_of(probsets: &[&[f64]], alphabet: Alphabet) -> Dictionary {
        let models = probsets
            .iter()
            .map(|p| Multinomial::smooth(p, 1e-9).unwrap())
            .collect();
        Dictionary::new(
            models,
            alphabet,
            Provenance {
                seed: 0,
                corpus_digest: 0,
                iterations: 0,
            },
        )
        .unwrap()
    }

    fn tile(codes: &[i32]) -> Tile {
        Tile {
            y: 0,
            x: 0,
            z: 0,
            codes: codes.to_vec(),
        }
    }

    #[test]
    fn select_prefers_lower_code_length() {
        let a = Alphabet::new(0, 1).unwrap();
        let d = dict_of(&[&[0.5, 0.5], &[0.9, 0.1]], a);
        let (idx, bits) = select_model(&tile(&[0, 0, 1]), &d).unwrap();
        assert_eq!(idx, 0);
        assert_eq!(bits, 3.0);
    }

    #[test]
    fn select_single_model_dictionary() {
        let a = Alphabet::new(0, 1).unwrap();
        let d = dict_of(&[&[0.3, 0.7]], a);
        let (idx, _) = select_model(&tile(&[1, 1, 0]), &d).unwrap();
        assert_eq!(idx, 0);
    }

    #[test]
    fn select_matches_brute_force_oracle() {
        let a = Alphabet::new(0, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sets: Vec<Vec<f64>> = (0..50)
            .map(|_| {
                let w: Vec<f64> = (0..8).map(|_| rng.gen_range(0.01..1.0)).collect();
                let t: f64 = w.iter().sum();
                w.iter().map(|x| x / t).collect()
            })
            .collect();
        let refs: Vec<&[f64]> = sets.iter().map(|s| s.as_slice()).collect();
        let d = dict_of(&refs, a);
        for _ in 0..200 {
            let codes: Vec<i32> = (0..64).map(|_| rng.gen_range(0..8)).collect();
            let t = tile(&codes);
            let (idx, bits) = select_model(&t, &d).unwrap();
            // Independent scan over cross_entropy_bits on the stored models.
            let h = tile_histogram(&t, a).unwrap();
            let mut best = (0usize, f64::INFINITY);
            for i in 0..d.k() {
                let b = cross_entropy_bits(&h, d.model(i));
                if b < best.1 {
                    best = (i, b);
                }
            }
            assert_eq!(idx, best.0);
            assert!((bits - best.1).abs() < 1e-9);
        }
    }

    #[test]
    fn selection_ignores_code_order_within_tile() {
        let a = Alphabet::new(0, 3).unwrap();
        let d = dict_of(&[&[0.4, 0.3, 0.2, 0.1], &[0.1, 0.2, 0.3, 0.4]], a);
        let (i1, b1) = select_model(&tile(&[0, 1, 2, 3, 0, 0]), &d).unwrap();
        let (i2, b2) = select_model(&tile(&[0, 0, 3, 2, 1, 0]), &d).unwrap();
        assert_eq!(i1, i2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn estimate_none_when_dictionary_fits_well() {
        // Tiles whose empirical distribution matches a dictionary entry stay out.
        let a = Alphabet::new(0, 1).unwrap();
        let d = dict_of(&[&[2.0 / 3.0, 1.0 / 3.0]], a);
        let est = estimate_custom(&[tile(&[0, 0, 1]), tile(&[1, 0, 0])], &d, 0.005).unwrap();
        assert!(est.is_none());
    }

    #[test]
    fn estimate_mean_of_two_point_masses_is_fair() {
        let a = Alphabet::new(0, 1).unwrap();
        let d = dict_of(&[&[0.2, 0.8]], a);
        let tiles = [tile(&[0; 32]), tile(&[1; 32])];
        let est = estimate_custom(&tiles, &d, 0.005).unwrap().unwrap();
        assert_eq!(est.included, vec![0, 1]);
        assert_eq!(est.dist.probs(), &[0.5, 0.5]);
        assert_eq!((est.support_first, est.support_last), (0, 1));
    }

    #[test]
    fn estimate_constant_channel_vs_laplacian_dictionary() {
        let a = Alphabet::new(-8, 8).unwrap();
        let lap: Vec<f64> = {
            let w: Vec<f64> = (0..a.size())
                .map(|i| (-(a.value_at(i) as f64).abs() / 2.0).exp())
                .collect();
            let t: f64 = w.iter().sum();
            w.iter().map(|x| x / t).collect()
        };
        let d = dict_of(&[&lap], a);
        let tiles: Vec<Tile> = (0..4).map(|_| tile(&[3; 256])).collect();
        let est = estimate_custom(&tiles, &d, 0.005).unwrap().unwrap();
        assert!(
            est.dist.probs()[a.index_of(3)] >= 0.99,
            "custom should concentrate on the constant symbol"
        );
    }

    #[test]
    fn threshold_monotonicity_of_inclusion() {
        let a = Alphabet::new(0, 3).unwrap();
        let d = dict_of(&[&[0.25, 0.25, 0.25, 0.25]], a);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tiles: Vec<Tile> = (0..30)
            .map(|_| {
                let codes: Vec<i32> = (0..40)
                    .map(|_| {
                        if rng.gen_bool(0.8) {
                            0
                        } else {
                            rng.gen_range(0..4)
                        }
                    })
                    .collect();
                tile(&codes)
            })
            .collect();
        let mut prev: Option<Vec<usize>> = None;
        for t in [0.0, 0.002, 0.01, 0.05, 0.2] {
            let included = estimate_custom(&tiles, &d, t)
                .unwrap()
                .map(|e| e.included)
                .unwrap_or_default();
            if let Some(prev) = &prev {
                assert!(
                    included.iter().all(|i| prev.contains(i)),
                    "threshold {t} included a tile the lower threshold skipped"
                );
            }
            prev = Some(included);
        }
    }

    #[test]
    fn pooled_averaging_weighs_tiles_by_size() {
        // One all-zeros tile of 4 codes, one all-ones tile of 12: per-tile
        // voting gives a fair split, pooling tilts toward the bigger tile.
        let a = Alphabet::new(0, 1).unwrap();
        let d = dict_of(&[&[0.35, 0.65]], a);
        let tiles = [tile(&[0; 4]), tile(&[1; 12])];
        let per_tile = estimate_custom(&tiles, &d, 0.005).unwrap().unwrap();
        assert_eq!(per_tile.dist.probs(), &[0.5, 0.5]);
        let pooled = estimate_custom_pooled(&tiles, &d, 0.005).unwrap().unwrap();
        assert_eq!(pooled.dist.probs(), &[0.25, 0.75]);
        assert_eq!(per_tile.included, pooled.included);
    }

    #[test]
    fn cost_is_span_times_seven() {
        let a = Alphabet::new(0, 255).unwrap();
        let mk = |first: usize, last: usize| {
            let mut raw = vec![0.0; a.size()];
            let span = last - first + 1;
            for item in &mut raw[first..=last] {
                *item = 1.0 / span as f64;
            }
            CustomEstimate {
                dist: Multinomial::smooth(&raw, 1e-9).unwrap(),
                support_first: first,
                support_last: last,
                included: vec![0],
            }
        };
        assert_eq!(custom_cost_bits(&mk(5, 5)), 7.0);
        assert_eq!(custom_cost_bits(&mk(2, 10)), 63.0);
        assert_eq!(custom_cost_bits(&mk(0, 255)), 1792.0);
    }

    #[test]
    fn quantize_point_mass_and_uniform() {
        let a = Alphabet::new(0, 3).unwrap();
        let point = CustomEstimate {
            dist: Multinomial::smooth(&[0.0, 1.0, 0.0, 0.0], 1e-9).unwrap(),
            support_first: 1,
            support_last: 1,
            included: vec![0],
        };
        let qd = quantize_dist(&point, a);
        assert_eq!(qd.weights, vec![255]);
        assert_eq!((qd.first_symbol, qd.last_symbol), (1, 1));

        let uniform = CustomEstimate {
            dist: Multinomial::smooth(&[0.25; 4], 1e-9).unwrap(),
            support_first: 0,
            support_last: 3,
            included: vec![0],
        };
        let qd = quantize_dist(&uniform, a);
        assert_eq!(qd.weights, vec![64, 64, 64, 64]);
    }

    #[test]
    fn dequantize_round_trip_l1_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let n = rng.gen_range(2..24);
            let a = Alphabet::new(0, n as i32 - 1).unwrap();
            let first = rng.gen_range(0..n);
            let last = rng.gen_range(first..n);
            let mut raw = vec![0.0f64; n];
            for item in &mut raw[first..=last] {
                *item = rng.gen_range(0.001..1.0);
            }
            let t: f64 = raw.iter().sum();
            for v in &mut raw {
                *v /= t;
            }
            let est = CustomEstimate {
                dist: Multinomial::smooth(&raw, DEFAULT_EPSILON).unwrap(),
                support_first: first,
                support_last: last,
                included: vec![0],
            };
            let qd = quantize_dist(&est, a);
            let dq = dequantize_dist(&qd, a).unwrap();
            let span = last - first + 1;
            let total: u64 = qd.weights.iter().map(|&w| w as u64).sum();
            let l1: f64 = (0..n)
                .map(|s| (dq.probs()[s] - est.dist.probs()[s]).abs())
                .sum();
            let bound = 2.0 * span as f64 / total as f64 + 4.0 * n as f64 * DEFAULT_EPSILON;
            assert!(l1 <= bound, "L1 {l1} above bound {bound} (span {span})");
        }
    }

    #[test]
    fn plan_skips_custom_for_well_modeled_channel() {
        let a = Alphabet::new(0, 3).unwrap();
        let probs = [0.4, 0.3, 0.2, 0.1];
        let d = dict_of(&[&probs], a);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tiles: Vec<Tile> = (0..16)
            .map(|_| {
                let codes: Vec<i32> = (0..256)
                    .map(|_| {
                        let u: f64 = rng.gen();
                        let mut acc = 0.0;
                        for (i, &p) in probs.iter().enumerate() {
                            acc += p;
                            if u < acc {
                                return i as i32;
                            }
                        }
                        3
                    })
                    .collect();
                tile(&codes)
            })
            .collect();
        let plan = plan_channel(&tiles, &d, 0.005).unwrap();
        assert!(plan.custom.is_none());
        assert!(plan.indices.iter().all(|&i| i == 0));
        assert_eq!(plan.accounting.planned_bits, plan.accounting.dict_bits);
    }

    #[test]
    fn plan_emits_custom_for_constant_tiles_vs_near_uniform_dictionary() {
        // 16 constant tiles of 256 codes against a near-uniform 256-symbol model:
        // dictionary cost about 16*256*8 bits, custom cost about 7 bits. The
        // savings dwarf the transmission estimate.
        let a = Alphabet::new(0, 255).unwrap();
        let uniform = vec![1.0 / 256.0; 256];
        let d = dict_of(&[&uniform], a);
        let tiles: Vec<Tile> = (0..16).map(|_| tile(&[42; 256])).collect();
        let plan = plan_channel(&tiles, &d, 0.005).unwrap();
        let qd = plan.custom.as_ref().expect("custom must be emitted");
        assert_eq!((qd.first_symbol, qd.last_symbol), (42, 42));
        assert!(plan.indices.iter().all(|&i| i == CUSTOM_MODEL_INDEX));
        assert!(plan.accounting.dict_bits > 16.0 * 256.0 * 7.9);
        assert!(plan.accounting.custom_saved_bits > plan.accounting.custom_cost_estimate_bits);
        assert!(plan.accounting.planned_bits < plan.accounting.dict_bits / 100.0);
    }

    #[test]
    fn plan_custom_never_hurts_and_emission_is_strict() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let n: i32 = rng.gen_range(2..10);
            let a = Alphabet::new(0, n - 1).unwrap();
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let t: f64 = w.iter().sum();
            let probs: Vec<f64> = w.iter().map(|x| x / t).collect();
            let d = dict_of(&[&probs], a);
            let tiles: Vec<Tile> = (0..rng.gen_range(1..12))
                .map(|_| {
                    let len = rng.gen_range(1..80);
                    let codes: Vec<i32> = (0..len).map(|_| rng.gen_range(0..n)).collect();
                    tile(&codes)
                })
                .collect();
            let threshold = [0.0, 0.005, 0.05][rng.gen_range(0..3)];
            let plan = plan_channel(&tiles, &d, threshold).unwrap();
            // Custom never hurts: the plan's payload never exceeds the
            // dictionary-only payload.
            assert!(plan.accounting.planned_bits <= plan.accounting.dict_bits + 1e-9);
            if plan.custom.is_some() {
                // Emission requires strictly positive net benefit.
                assert!(
                    plan.accounting.custom_saved_bits > plan.accounting.custom_cost_estimate_bits
                );
            } else {
                assert!(plan.indices.iter().all(|&i| i != CUSTOM_MODEL_INDEX));
            }
        }
    }

    #[test]
    fn index_255_iff_custom_is_strictly_better() {
        let a = Alphabet::new(0, 7).unwrap();
        let lap: Vec<f64> = {
            let w: Vec<f64> = (0..8).map(|i| (-(i as f64 - 3.5).abs()).exp()).collect();
            let t: f64 = w.iter().sum();
            w.iter().map(|x| x / t).collect()
        };
        let d = dict_of(&[&lap], a);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let tiles: Vec<Tile> = (0..12)
            .map(|i| {
                if i % 2 == 0 {
                    tile(&[1; 64])
                } else {
                    let codes: Vec<i32> = (0..64).map(|_| rng.gen_range(0..8)).collect();
                    tile(&codes)
                }
            })
            .collect();
        let plan = plan_channel(&tiles, &d, 0.005).unwrap();
        let Some(qd) = &plan.custom else {
            panic!("constant tiles must trigger a custom model")
        };
        let dq = dequantize_dist(qd, a).unwrap();
        let c_cdf = dq.to_cdf().unwrap();
        let c_log2: Vec<f64> = (0..8).map(|s| c_cdf.prob(s).log2()).collect();
        for (pos, t) in tiles.iter().enumerate() {
            let pairs = tile_pairs(t, a).unwrap();
            let (_, d_bits) = select_pairs(&pairs, &d);
            let c_bits = bits_under(&pairs, &c_log2);
            let expected = c_bits < d_bits;
            assert_eq!(
                plan.indices[pos] == CUSTOM_MODEL_INDEX,
                expected,
                "tile {pos}: custom {c_bits} vs dict {d_bits}"
            );
        }
    }
}
