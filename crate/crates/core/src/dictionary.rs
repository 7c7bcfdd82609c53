//! Learned dictionary of multinomial entropy models.
//!
//! Training minimizes the summed KL divergence from tile histograms to their
//! nearest model: K-means++ seeding in squared Euclidean distance, then Lloyd
//! iterations that assign by KL divergence, update centroids to the arithmetic
//! mean of their assigned histograms (the exact minimizer of the summed
//! divergence), and reseed empty centroids from the corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coder::{build_cdf, CdfTable, TOTAL_FREQ};
use crate::error::{Error, Result};
use crate::tensor::{tile_histogram, tile_partition, Alphabet, CodeTensor, Histogram};

/// Magic bytes opening a dictionary file.
pub const DICT_MAGIC: [u8; 4] = *b"SLDC";
/// Dictionary file format version.
pub const DICT_VERSION: u16 = 1;
/// Smoothing floor applied wherever a distribution must stay strictly positive.
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Largest dictionary size. Index 255 is reserved for the per-channel
/// image-dependent model, so at most 255 pre-learned entries (0..=254).
pub const MAX_MODELS: usize = 255;
/// Reserved tile index addressing a channel's image-dependent distribution.
pub const CUSTOM_MODEL_INDEX: u8 = 255;

/// Probability vector over the symbol alphabet; one local entropy model.
///
/// Every entry is at least the construction floor, so any symbol has finite
/// code length, and the entries sum to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct Multinomial {
    probs: Vec<f64>,
    epsilon: f64,
}

impl Multinomial {
    /// Floor a raw probability vector at `epsilon_floor` and renormalize.
    ///
    /// Entries below the floor are pinned to it; the remaining entries are
    /// scaled down proportionally, repeating if the scaling pushes more
    /// entries under the floor. The result is the exact minimizer of the
    /// summed KL divergence subject to the floor constraint.
    pub fn smooth(raw: &[f64], epsilon_floor: f64) -> Result<Self> {
        let n = raw.len();
        if n == 0 {
            return Err(Error::invalid("empty distribution"));
        }
        if let Some(bad) = raw.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::invalid(format!("invalid probability {bad}")));
        }
        if !(epsilon_floor > 0.0 && epsilon_floor < 1.0 / n as f64) {
            return Err(Error::invalid(format!(
                "epsilon floor {epsilon_floor} outside (0, 1/{n})"
            )));
        }
        let sum: f64 = raw.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        let mut floored = vec![false; n];
        loop {
            let pinned = floored.iter().filter(|&&b| b).count();
            let pinned_mass = epsilon_floor * pinned as f64;
            let free_mass: f64 = raw
                .iter()
                .zip(&floored)
                .filter(|(_, &b)| !b)
                .map(|(p, _)| *p)
                .sum();
            let scale = (1.0 - pinned_mass) / free_mass;
            let mut newly_pinned = false;
            for (i, &p) in raw.iter().enumerate() {
                if !floored[i] && p * scale < epsilon_floor {
                    floored[i] = true;
                    newly_pinned = true;
                }
            }
            if !newly_pinned {
                let probs = raw
                    .iter()
                    .zip(&floored)
                    .map(|(&p, &b)| if b { epsilon_floor } else { p * scale })
                    .collect();
                return Ok(Multinomial {
                    probs,
                    epsilon: epsilon_floor,
                });
            }
        }
    }

    /// Dequantized view of a fixed-point table: probs are freq / 2^16 exactly.
    pub fn from_cdf(cdf: &CdfTable) -> Self {
        Multinomial {
            probs: (0..cdf.symbol_count()).map(|s| cdf.prob(s)).collect(),
            epsilon: 1.0 / TOTAL_FREQ as f64,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Quantize to the fixed-point table used on the wire.
    pub fn to_cdf(&self) -> Result<CdfTable> {
        build_cdf(&self.probs)
    }
}

/// Expected excess code length in bits when data distributed as `q` is coded
/// with model `p`: sum of q_i * log2(q_i / p_i), with 0 * log(0/p) = 0.
pub fn kld_bits(q: &[f64], p: &Multinomial) -> f64 {
    debug_assert_eq!(q.len(), p.probs.len());
    q.iter()
        .zip(&p.probs)
        .filter(|(qi, _)| **qi > 0.0)
        .map(|(&qi, &pi)| qi * (qi / pi).log2())
        .sum()
}

/// Ideal code length in bits of the counted symbols under model `p`:
/// -sum of counts[s] * log2(p[s]).
pub fn cross_entropy_bits(h: &Histogram, p: &Multinomial) -> f64 {
    debug_assert_eq!(h.counts().len(), p.probs.len());
    h.counts()
        .iter()
        .zip(&p.probs)
        .filter(|(c, _)| **c > 0)
        .map(|(&c, &pi)| -(c as f64) * pi.log2())
        .sum()
}

fn sq_euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Standard D^2 seeding: the first center is uniform, each next center is a
/// corpus histogram sampled with probability proportional to its squared
/// Euclidean distance to the nearest already-chosen center.
pub fn kmeanspp_init(
    corpus: &[Vec<f64>],
    k: usize,
    seed: u64,
    epsilon_floor: f64,
) -> Result<Vec<Multinomial>> {
    if k == 0 {
        return Err(Error::invalid("K must be >= 1"));
    }
    if corpus.len() < k {
        return Err(Error::invalid(format!(
            "corpus of {} histograms is smaller than K = {k}",
            corpus.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(k);
    let first = rng.gen_range(0..corpus.len());
    chosen.push(first);
    let mut d2: Vec<f64> = corpus
        .iter()
        .map(|q| sq_euclid(q, &corpus[first]))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let u = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            let mut last_positive = 0;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    last_positive = i;
                }
                acc += w;
                if u < acc {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or(last_positive)
        } else {
            // Every remaining histogram coincides with a center; fall back to
            // a uniform draw over unchosen indices so K distinct indices return.
            let unchosen: Vec<usize> = (0..corpus.len()).filter(|i| !chosen.contains(i)).collect();
            unchosen[rng.gen_range(0..unchosen.len())]
        };
        chosen.push(next);
        for (i, q) in corpus.iter().enumerate() {
            let d = sq_euclid(q, &corpus[next]);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen
        .iter()
        .map(|&i| Multinomial::smooth(&corpus[i], epsilon_floor))
        .collect()
}

/// Map every histogram to its nearest center by KL divergence (ties break to
/// the lowest index) and report the summed divergence.
fn assign(corpus: &[Vec<f64>], centers: &[Multinomial]) -> (Vec<usize>, f64) {
    let pairs: Vec<(usize, f64)> = corpus
        .par_iter()
        .map(|q| {
            let mut best_i = 0;
            let mut best_d = f64::INFINITY;
            for (i, c) in centers.iter().enumerate() {
                let d = kld_bits(q, c);
                if d < best_d {
                    best_i = i;
                    best_d = d;
                }
            }
            (best_i, best_d)
        })
        .collect();
    // Sum sequentially in corpus order so the trace is run-to-run identical.
    let loss = pairs.iter().map(|p| p.1).sum();
    (pairs.into_iter().map(|p| p.0).collect(), loss)
}

/// Result of the KL K-means refinement.
#[derive(Debug, Clone)]
pub struct Refined {
    pub centers: Vec<Multinomial>,
    /// Clustering loss after the initial assignment and after each iteration.
    pub loss_trace: Vec<f64>,
    /// Trace indices whose iteration replaced at least one empty centroid.
    pub reseed_iterations: Vec<usize>,
    pub iterations: usize,
    /// Final assignment of each corpus histogram.
    pub assignments: Vec<usize>,
}

/// Lloyd refinement under KL divergence.
///
/// Each iteration assigns histograms to centers, replaces every non-empty
/// center with the smoothed arithmetic mean of its assigned histograms, and
/// reseeds every empty center with a random corpus sample. Stops after
/// `max_iters` iterations or as soon as assignments repeat.
pub fn kl_kmeans_refine(
    corpus: &[Vec<f64>],
    init: Vec<Multinomial>,
    max_iters: usize,
    seed: u64,
    epsilon_floor: f64,
) -> Result<Refined> {
    if corpus.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    if init.is_empty() {
        return Err(Error::invalid("init must hold at least one center"));
    }
    if max_iters == 0 {
        return Err(Error::invalid("max_iters must be >= 1"));
    }
    let dim = corpus[0].len();
    if corpus.iter().any(|q| q.len() != dim) || init.iter().any(|c| c.len() != dim) {
        return Err(Error::invalid("histogram dimensions disagree"));
    }
    let k = init.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = init;
    let (mut assignments, loss0) = assign(corpus, &centers);
    let mut loss_trace = vec![loss0];
    let mut reseed_iterations = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (q, &a) in corpus.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(q) {
                *s += v;
            }
        }
        let mut reseeded = false;
        for i in 0..k {
            if counts[i] > 0 {
                let mean: Vec<f64> = sums[i].iter().map(|s| s / counts[i] as f64).collect();
                centers[i] = Multinomial::smooth(&mean, epsilon_floor)?;
            } else {
                let j = rng.gen_range(0..corpus.len());
                centers[i] = Multinomial::smooth(&corpus[j], epsilon_floor)?;
                reseeded = true;
            }
        }
        let (new_assignments, loss) = assign(corpus, &centers);
        loss_trace.push(loss);
        if reseeded {
            reseed_iterations.push(loss_trace.len() - 1);
        }
        if new_assignments == assignments {
            break;
        }
        assignments = new_assignments;
    }

    Ok(Refined {
        centers,
        loss_trace,
        reseed_iterations,
        iterations,
        assignments,
    })
}

/// Where a dictionary came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub corpus_digest: u64,
    pub iterations: u32,
}

/// Ordered set of at most 255 entropy models shared by encoder and decoder.
///
/// Models are stored in the fixed-point form actually used on the wire:
/// construction quantizes each multinomial to its 2^16-total frequency table
/// and derives selection probabilities back from those frequencies, so rate
/// accounting matches coded output exactly and a round-tripped dictionary
/// behaves bit-identically.
#[derive(Debug, Clone)]
pub struct Dictionary {
    alphabet: Alphabet,
    models: Vec<Multinomial>,
    cdfs: Vec<CdfTable>,
    log2_probs: Vec<Vec<f64>>,
    digest: u64,
    provenance: Provenance,
    loss_trace: Vec<f64>,
}

impl Dictionary {
    pub fn new(
        models: Vec<Multinomial>,
        alphabet: Alphabet,
        provenance: Provenance,
    ) -> Result<Self> {
        if models.is_empty() || models.len() > MAX_MODELS {
            return Err(Error::invalid(format!(
                "dictionary must hold 1..={MAX_MODELS} models, got {}",
                models.len()
            )));
        }
        if models.iter().any(|m| m.len() != alphabet.size()) {
            return Err(Error::invalid(
                "all models must cover the dictionary alphabet",
            ));
        }
        let cdfs: Vec<CdfTable> = models.iter().map(|m| m.to_cdf()).collect::<Result<_>>()?;
        Self::from_tables(cdfs, alphabet, provenance)
    }

    fn from_tables(
        cdfs: Vec<CdfTable>,
        alphabet: Alphabet,
        provenance: Provenance,
    ) -> Result<Self> {
        let models: Vec<Multinomial> = cdfs.iter().map(Multinomial::from_cdf).collect();
        let log2_probs: Vec<Vec<f64>> = cdfs
            .iter()
            .map(|c| (0..c.symbol_count()).map(|s| c.prob(s).log2()).collect())
            .collect();
        let digest = digest_tables(alphabet, &cdfs);
        Ok(Dictionary {
            alphabet,
            models,
            cdfs,
            log2_probs,
            digest,
            provenance,
            loss_trace: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.models.len()
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn models(&self) -> &[Multinomial] {
        &self.models
    }

    pub fn model(&self, i: usize) -> &Multinomial {
        &self.models[i]
    }

    pub fn cdf(&self, i: usize) -> &CdfTable {
        &self.cdfs[i]
    }

    /// Per-symbol log2 probabilities of model `i`, for fast code-length sums.
    pub fn log2_probs(&self, i: usize) -> &[f64] {
        &self.log2_probs[i]
    }

    /// 64-bit identity of the model set; the bitstream header pins this.
    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Clustering loss after the initial assignment and after each training
    /// iteration. Empty for deserialized dictionaries.
    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&DICT_MAGIC);
        out.extend_from_slice(&DICT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.alphabet.lo.to_le_bytes());
        out.extend_from_slice(&self.alphabet.hi.to_le_bytes());
        out.extend_from_slice(&(self.k() as u16).to_le_bytes());
        out.push(crate::coder::PRECISION_BITS as u8);
        out.extend_from_slice(&self.provenance.seed.to_le_bytes());
        out.extend_from_slice(&self.provenance.corpus_digest.to_le_bytes());
        out.extend_from_slice(&self.provenance.iterations.to_le_bytes());
        for cdf in &self.cdfs {
            for s in 0..cdf.symbol_count() {
                out.extend_from_slice(&cdf.freq(s).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        use crate::tensor::Reader;
        if bytes.len() < 4 {
            return Err(Error::format(bytes.len(), "truncated dictionary file"));
        }
        let body_len = bytes
            .len()
            .checked_sub(4)
            .ok_or_else(|| Error::format(0, "truncated dictionary file"))?;
        let stored_crc = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
        let actual_crc = crc32fast::hash(&bytes[..body_len]);
        if stored_crc != actual_crc {
            return Err(Error::Corruption(format!(
                "dictionary checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
            )));
        }
        let mut r = Reader::new(&bytes[..body_len]);
        let magic = r.take(4, "magic")?;
        if magic != DICT_MAGIC {
            return Err(Error::format(0, "bad magic, expected \"SLDC\""));
        }
        let version = r.u16("version")?;
        if version != DICT_VERSION {
            return Err(Error::format(
                4,
                format!("unsupported dictionary version {version}"),
            ));
        }
        let lo = r.i32("alphabet lo")?;
        let hi = r.i32("alphabet hi")?;
        let alphabet =
            Alphabet::new(lo, hi).map_err(|e| Error::format(6, format!("bad alphabet: {e}")))?;
        let k = r.u16("model count")? as usize;
        if k == 0 || k > MAX_MODELS {
            return Err(Error::format(
                14,
                format!("model count {k} outside 1..=255"),
            ));
        }
        let precision = r.take(1, "precision")?[0];
        if precision as u32 != crate::coder::PRECISION_BITS {
            return Err(Error::format(
                16,
                format!("unsupported CDF precision {precision}"),
            ));
        }
        let seed = r.u64("seed")?;
        let corpus_digest = r.u64("corpus digest")?;
        let iterations = r.u32("iterations")?;
        let n = alphabet.size();
        let mut cdfs = Vec::with_capacity(k);
        for model_idx in 0..k {
            let mut freqs = Vec::with_capacity(n);
            for _ in 0..n {
                freqs.push(r.u32("frequency")?);
            }
            let cdf = CdfTable::from_freqs(&freqs).map_err(|e| {
                Error::format(
                    r.pos,
                    format!("model {model_idx} has an invalid table: {e}"),
                )
            })?;
            cdfs.push(cdf);
        }
        if r.pos != body_len {
            return Err(Error::format(r.pos, "trailing bytes in dictionary file"));
        }
        Self::from_tables(
            cdfs,
            alphabet,
            Provenance {
                seed,
                corpus_digest,
                iterations,
            },
        )
    }
}

/// Train a dictionary end to end: K-means++ seeding, then KL refinement.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: MAX_MODELS,
            seed: 0,
            max_iters: 50,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

pub fn train_dictionary(
    corpus: &[Vec<f64>],
    alphabet: Alphabet,
    cfg: &TrainConfig,
) -> Result<Dictionary> {
    if corpus.iter().any(|q| q.len() != alphabet.size()) {
        return Err(Error::invalid("corpus histograms must match the alphabet"));
    }
    let init = kmeanspp_init(corpus, cfg.k, cfg.seed, cfg.epsilon)?;
    let refined = kl_kmeans_refine(
        corpus,
        init,
        cfg.max_iters,
        cfg.seed.wrapping_add(1),
        cfg.epsilon,
    )?;
    let mut dict = Dictionary::new(
        refined.centers,
        alphabet,
        Provenance {
            seed: cfg.seed,
            corpus_digest: corpus_digest(corpus),
            iterations: refined.iterations as u32,
        },
    )?;
    dict.loss_trace = refined.loss_trace;
    Ok(dict)
}

/// One normalized histogram per (tile, channel), in canonical tile order.
pub fn corpus_from_tensors(tensors: &[&CodeTensor], tile_size: usize) -> Result<Vec<Vec<f64>>> {
    let Some(first) = tensors.first() else {
        return Err(Error::invalid("empty training set"));
    };
    let alphabet = first.alphabet();
    if tensors.iter().any(|t| t.alphabet() != alphabet) {
        return Err(Error::invalid("training tensors declare mixed alphabets"));
    }
    let mut corpus = Vec::new();
    for tensor in tensors {
        for tile in tile_partition(tensor, tile_size)? {
            corpus.push(tile_histogram(&tile, alphabet)?.normalized());
        }
    }
    Ok(corpus)
}

/// FNV-1a 64 digest of the training corpus, recorded as provenance.
pub fn corpus_digest(corpus: &[Vec<f64>]) -> u64 {
    let mut h = Fnv1a::new();
    h.write(&(corpus.len() as u64).to_le_bytes());
    for q in corpus {
        for v in q {
            h.write(&v.to_bits().to_le_bytes());
        }
    }
    h.finish()
}

fn digest_tables(alphabet: Alphabet, cdfs: &[CdfTable]) -> u64 {
    let mut h = Fnv1a::new();
    h.write(&alphabet.lo.to_le_bytes());
    h.write(&alphabet.hi.to_le_bytes());
    h.write(&(cdfs.len() as u16).to_le_bytes());
    h.write(&[crate::coder::PRECISION_BITS as u8]);
    for cdf in cdfs {
        for s in 0..cdf.symbol_count() {
            h.write(&cdf.freq(s).to_le_bytes());
        }
    }
    h.finish()
}

/// Digest of a single out-of-dictionary model, used by the global-baseline arm.
pub fn digest_single_model(alphabet: Alphabet, cdf: &CdfTable) -> u64 {
    digest_tables(alphabet, std::slice::from_ref(cdf))
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(counts: &[u64]) -> Histogram {
        Histogram::from_counts(counts.to_vec()).unwrap()
    }

    #[test]
    fn smooth_point_mass() {
        let m = Multinomial::smooth(&[1.0, 0.0], 1e-6).unwrap();
        assert_eq!(m.probs(), &[1.0 - 1e-6, 1e-6]);
    }

    #[test]
    fn smooth_uniform_unchanged() {
        let m = Multinomial::smooth(&[0.25; 4], 1e-3).unwrap();
        assert_eq!(m.probs(), &[0.25; 4]);
    }

    #[test]
    fn smooth_is_idempotent() {
        let m = Multinomial::smooth(&[0.7, 0.3, 0.0], 1e-4).unwrap();
        let again = Multinomial::smooth(m.probs(), 1e-4).unwrap();
        for (a, b) in m.probs().iter().zip(again.probs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_rejects_negative_probability() {
        assert!(matches!(
            Multinomial::smooth(&[1.1, -0.1], 1e-6),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn smooth_rejects_bad_floor() {
        assert!(Multinomial::smooth(&[0.5, 0.5], 0.0).is_err());
        assert!(Multinomial::smooth(&[0.5, 0.5], 0.6).is_err());
    }

    #[test]
    fn kld_of_identical_distributions_is_zero() {
        let p = Multinomial::smooth(&[0.3, 0.7], 1e-9).unwrap();
        assert_eq!(kld_bits(&[0.3, 0.7], &p), 0.0);
    }

    #[test]
    fn kld_matches_two_term_oracle() {
        let p = Multinomial::smooth(&[0.25, 0.75], 1e-12).unwrap();
        let kl = kld_bits(&[0.5, 0.5], &p);
        assert!((kl - 0.207_518_749_639_421_9).abs() < 1e-12, "kl = {kl}");
    }

    #[test]
    fn kld_point_mass_against_fair_coin_is_one_bit() {
        let p = Multinomial::smooth(&[0.5, 0.5], 1e-9).unwrap();
        assert!((kld_bits(&[1.0, 0.0], &p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_certain_symbol_near_zero() {
        let p = Multinomial::smooth(&[1.0, 0.0], 1e-6).unwrap();
        let bits = cross_entropy_bits(&hist(&[3, 0]), &p);
        assert!(bits > 0.0 && bits < 1e-4, "bits = {bits}");
    }

    #[test]
    fn cross_entropy_matches_direct_evaluation() {
        let fair = Multinomial::smooth(&[0.5, 0.5], 1e-9).unwrap();
        assert!((cross_entropy_bits(&hist(&[2, 1]), &fair) - 3.0).abs() < 1e-12);
        let skew = Multinomial::smooth(&[0.9, 0.1], 1e-12).unwrap();
        let bits = cross_entropy_bits(&hist(&[2, 1]), &skew);
        assert!(
            (bits - 3.625_934_281_777_462).abs() < 1e-12,
            "bits = {bits}"
        );
    }

    #[test]
    fn cross_entropy_decomposes_into_entropy_plus_kld() {
        let h = hist(&[5, 2, 3]);
        let q = h.normalized();
        let p = Multinomial::smooth(&[0.2, 0.5, 0.3], 1e-9).unwrap();
        let n = h.total() as f64;
        let entropy: f64 = q.iter().filter(|x| **x > 0.0).map(|x| -x * x.log2()).sum();
        let lhs = cross_entropy_bits(&h, &p);
        let rhs = n * (entropy + kld_bits(&q, &p));
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn kmeanspp_selects_both_extremes() {
        let corpus = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let centers = kmeanspp_init(&corpus, 2, 3, 1e-6).unwrap();
        let mut firsts: Vec<f64> = centers.iter().map(|c| c.probs()[0]).collect();
        firsts.sort_by(f64::total_cmp);
        assert!(firsts[0] < 0.5 && firsts[1] > 0.5);
    }

    #[test]
    fn kmeanspp_k1_is_seed_dependent_sample() {
        let corpus: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0])
            .collect();
        let c = kmeanspp_init(&corpus, 1, 7, 1e-6).unwrap();
        assert_eq!(c.len(), 1);
        // The center must be a smoothed corpus member.
        assert!(corpus.iter().any(|q| (q[0] - c[0].probs()[0]).abs() < 1e-6));
    }

    #[test]
    fn kmeanspp_rejects_small_corpus() {
        let corpus = vec![vec![1.0, 0.0]];
        assert!(kmeanspp_init(&corpus, 2, 0, 1e-6).is_err());
    }

    fn three_source_corpus(per_source: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sources = vec![
            vec![0.85, 0.05, 0.05, 0.05],
            vec![0.05, 0.85, 0.05, 0.05],
            vec![0.05, 0.05, 0.05, 0.85],
        ];
        let mut corpus = Vec::new();
        for src in &sources {
            for _ in 0..per_source {
                // Draw 200 samples from the source and keep the empirical histogram.
                let mut counts = [0u64; 4];
                for _ in 0..200 {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut idx = 3;
                    for (i, &p) in src.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            idx = i;
                            break;
                        }
                    }
                    counts[idx] += 1;
                }
                let total: u64 = counts.iter().sum();
                corpus.push(counts.iter().map(|&c| c as f64 / total as f64).collect());
            }
        }
        (corpus, sources)
    }

    #[test]
    fn kmeanspp_finds_separated_sources() {
        let (corpus, sources) = three_source_corpus(34, 11);
        let centers = kmeanspp_init(&corpus, 3, 11, 1e-6).unwrap();
        // Brute force: every source mean must have a center within L1 0.2.
        for src in &sources {
            let best = centers
                .iter()
                .map(|c| {
                    c.probs()
                        .iter()
                        .zip(src)
                        .map(|(a, b)| (a - b).abs())
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.2, "nearest center L1 distance {best} >= 0.2");
        }
    }

    #[test]
    fn refine_k1_converges_to_smoothed_mean() {
        let corpus = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let init = vec![Multinomial::smooth(&[0.9, 0.1], 1e-6).unwrap()];
        let r = kl_kmeans_refine(&corpus, init, 10, 0, 1e-6).unwrap();
        let expected = Multinomial::smooth(&[0.5, 0.5], 1e-6).unwrap();
        assert_eq!(r.centers[0], expected);
    }

    #[test]
    fn refine_degenerate_corpus_reaches_zero_loss() {
        let corpus = vec![vec![0.25, 0.25, 0.5]; 40];
        let init = kmeanspp_init(&corpus, 3, 5, 1e-6).unwrap();
        let r = kl_kmeans_refine(&corpus, init, 10, 5, 1e-6).unwrap();
        let last = *r.loss_trace.last().unwrap();
        assert!(last < 1e-4, "loss {last} should collapse to ~0");
    }

    #[test]
    fn smoothed_mean_minimizes_cluster_divergence() {
        use rand::Rng;
        let (corpus, _) = three_source_corpus(10, 51);
        let cluster: Vec<&Vec<f64>> = corpus.iter().take(10).collect();
        let dim = cluster[0].len();
        let mut mean = vec![0.0f64; dim];
        for q in &cluster {
            for (m, v) in mean.iter_mut().zip(q.iter()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= cluster.len() as f64;
        }
        let center = Multinomial::smooth(&mean, 1e-6).unwrap();
        let at_mean: f64 = cluster.iter().map(|q| kld_bits(q, &center)).sum();
        // No alternative center does better, including the cluster members.
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..50 {
            let candidate = if rng.gen_bool(0.4) {
                cluster[rng.gen_range(0..cluster.len())].clone()
            } else {
                let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.001..1.0)).collect();
                let t: f64 = w.iter().sum();
                w.iter().map(|x| x / t).collect()
            };
            let other = Multinomial::smooth(&candidate, 1e-6).unwrap();
            let at_other: f64 = cluster.iter().map(|q| kld_bits(q, &other)).sum();
            assert!(
                at_other >= at_mean - 1e-12,
                "candidate beat the mean: {at_other} < {at_mean}"
            );
        }
    }

    #[test]
    fn refine_centroid_is_smoothed_mean_of_assignment() {
        let (corpus, _) = three_source_corpus(20, 21);
        let init = kmeanspp_init(&corpus, 3, 21, 1e-6).unwrap();
        // One iteration: update uses the assignment under the init centers.
        let (assignments, _) = super::assign(&corpus, &init);
        let r = kl_kmeans_refine(&corpus, init, 1, 99, 1e-6).unwrap();
        let dim = corpus[0].len();
        for i in 0..3 {
            let members: Vec<&Vec<f64>> = corpus
                .iter()
                .zip(&assignments)
                .filter(|(_, &a)| a == i)
                .map(|(q, _)| q)
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = vec![0.0f64; dim];
            for q in &members {
                for (m, v) in mean.iter_mut().zip(q.iter()) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= members.len() as f64;
            }
            let expected = Multinomial::smooth(&mean, 1e-6).unwrap();
            assert_eq!(
                r.centers[i], expected,
                "centroid {i} is not the smoothed mean"
            );
        }
    }

    #[test]
    fn refine_loss_trace_monotone_between_reseeds() {
        let (corpus, _) = three_source_corpus(30, 13);
        let init = kmeanspp_init(&corpus, 5, 13, 1e-6).unwrap();
        let r = kl_kmeans_refine(&corpus, init, 25, 13, 1e-6).unwrap();
        for w in 1..r.loss_trace.len() {
            if r.reseed_iterations.contains(&w) {
                continue;
            }
            assert!(
                r.loss_trace[w] <= r.loss_trace[w - 1] + 1e-12,
                "loss rose at step {w}: {} -> {}",
                r.loss_trace[w - 1],
                r.loss_trace[w]
            );
        }
    }

    #[test]
    fn refine_assignment_is_pointwise_optimal() {
        let (corpus, _) = three_source_corpus(15, 31);
        let init = kmeanspp_init(&corpus, 4, 31, 1e-6).unwrap();
        let r = kl_kmeans_refine(&corpus, init, 20, 31, 1e-6).unwrap();
        // Reassigning any single histogram never decreases the loss.
        for (q, &a) in corpus.iter().zip(&r.assignments) {
            let own = kld_bits(q, &r.centers[a]);
            for c in &r.centers {
                assert!(kld_bits(q, c) >= own - 1e-12);
            }
        }
    }

    #[test]
    fn refine_leaves_no_empty_clusters_on_separable_corpus() {
        let (corpus, _) = three_source_corpus(30, 17);
        let init = kmeanspp_init(&corpus, 3, 17, 1e-6).unwrap();
        let r = kl_kmeans_refine(&corpus, init, 30, 17, 1e-6).unwrap();
        let mut counts = vec![0usize; r.centers.len()];
        for &a in &r.assignments {
            counts[a] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "empty cluster in {counts:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let (corpus, _) = three_source_corpus(25, 41);
        let alphabet = Alphabet::new(0, 3).unwrap();
        let cfg = TrainConfig {
            k: 4,
            seed: 12,
            max_iters: 20,
            epsilon: DEFAULT_EPSILON,
        };
        let d1 = train_dictionary(&corpus, alphabet, &cfg).unwrap();
        let d2 = train_dictionary(&corpus, alphabet, &cfg).unwrap();
        assert_eq!(d1.serialize(), d2.serialize());
    }

    #[test]
    fn dictionary_file_round_trip_with_255_models() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let alphabet = Alphabet::new(-3, 4).unwrap();
        let models: Vec<Multinomial> = (0..255)
            .map(|_| {
                let w: Vec<f64> = (0..alphabet.size())
                    .map(|_| rng.gen_range(0.01..1.0))
                    .collect();
                let t: f64 = w.iter().sum();
                let probs: Vec<f64> = w.iter().map(|x| x / t).collect();
                Multinomial::smooth(&probs, DEFAULT_EPSILON).unwrap()
            })
            .collect();
        let dict = Dictionary::new(
            models,
            alphabet,
            Provenance {
                seed: 1,
                corpus_digest: 2,
                iterations: 3,
            },
        )
        .unwrap();
        let bytes = dict.serialize();
        let back = Dictionary::deserialize(&bytes).unwrap();
        assert_eq!(back.serialize(), bytes);
        assert_eq!(back.digest(), dict.digest());
        assert_eq!(back.k(), 255);
        for i in 0..dict.k() {
            assert_eq!(back.cdf(i), dict.cdf(i));
        }
    }

    #[test]
    fn dictionary_file_truncation_rejected() {
        let alphabet = Alphabet::new(0, 1).unwrap();
        let dict = Dictionary::new(
            vec![Multinomial::smooth(&[0.5, 0.5], 1e-6).unwrap()],
            alphabet,
            Provenance {
                seed: 0,
                corpus_digest: 0,
                iterations: 0,
            },
        )
        .unwrap();
        let bytes = dict.serialize();
        for cut in [0, 3, 10, bytes.len() - 1] {
            assert!(
                Dictionary::deserialize(&bytes[..cut]).is_err(),
                "truncation at {cut} must fail"
            );
        }
    }

    #[test]
    fn dictionary_file_corruption_rejected() {
        let alphabet = Alphabet::new(0, 1).unwrap();
        let dict = Dictionary::new(
            vec![Multinomial::smooth(&[0.75, 0.25], 1e-6).unwrap()],
            alphabet,
            Provenance {
                seed: 0,
                corpus_digest: 0,
                iterations: 0,
            },
        )
        .unwrap();
        let mut bytes = dict.serialize();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(Dictionary::deserialize(&bytes).is_err());
    }

    #[test]
    fn quantization_is_idempotent_across_round_trips() {
        let alphabet = Alphabet::new(0, 2).unwrap();
        let dict = Dictionary::new(
            vec![Multinomial::smooth(&[0.61, 0.29, 0.10], 1e-6).unwrap()],
            alphabet,
            Provenance {
                seed: 9,
                corpus_digest: 9,
                iterations: 9,
            },
        )
        .unwrap();
        // Rebuilding from the dequantized model reproduces the same table.
        let rebuilt = Dictionary::new(dict.models().to_vec(), alphabet, dict.provenance()).unwrap();
        assert_eq!(rebuilt.serialize(), dict.serialize());
    }
}
