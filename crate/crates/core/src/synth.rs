//! Seeded synthetic code tensors used for training corpora, benchmarks and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Alphabet, CodeTensor};

/// A single stationary code source.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    /// Every cell holds `value`.
    Constant { value: i32 },
    /// Independent draws from an explicit distribution over the full alphabet.
    IidMultinomial { probs: Vec<f64> },
    /// Independent draws from a discretized Laplacian: p(v) proportional to
    /// exp(-|v - mu| / scale) over the alphabet.
    Laplacian { mu: f64, scale: f64 },
}

/// Rectangular spatial region (half-open bounds) fed by one source.
/// Applies to all channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
    pub source: SourceSpec,
}

/// Full generator description for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorSpec {
    /// One source for the whole tensor.
    Source(SourceSpec),
    /// Spatially varying statistics: the first region containing a cell wins.
    /// Regions must cover every (y, x) position.
    Patchwork { regions: Vec<RegionSpec> },
}

impl GeneratorSpec {
    /// Convenience: split the width into equal vertical stripes, one per source.
    pub fn striped(sources: Vec<SourceSpec>, height: usize, width: usize) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::invalid("striped patchwork needs >= 1 source"));
        }
        if sources.len() > width {
            return Err(Error::invalid(format!(
                "cannot cut width {width} into {} stripes",
                sources.len()
            )));
        }
        let n = sources.len();
        let regions = sources
            .into_iter()
            .enumerate()
            .map(|(i, source)| RegionSpec {
                y0: 0,
                x0: i * width / n,
                y1: height,
                x1: (i + 1) * width / n,
                source,
            })
            .collect();
        Ok(GeneratorSpec::Patchwork { regions })
    }
}

/// Cumulative-probability sampler for one source.
struct Sampler {
    cdf: Vec<f64>,
    constant: Option<i32>,
}

impl Sampler {
    fn build(source: &SourceSpec, alphabet: Alphabet) -> Result<Self> {
        match source {
            SourceSpec::Constant { value } => {
                if !alphabet.contains(*value) {
                    return Err(Error::invalid(format!(
                        "constant value {value} outside alphabet [{}, {}]",
                        alphabet.lo, alphabet.hi
                    )));
                }
                Ok(Sampler {
                    cdf: Vec::new(),
                    constant: Some(*value),
                })
            }
            SourceSpec::IidMultinomial { probs } => {
                if probs.len() != alphabet.size() {
                    return Err(Error::invalid(format!(
                        "multinomial has {} entries but alphabet holds {} symbols",
                        probs.len(),
                        alphabet.size()
                    )));
                }
                if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
                    return Err(Error::invalid("multinomial probabilities must be >= 0"));
                }
                let total: f64 = probs.iter().sum();
                if total <= 0.0 {
                    return Err(Error::invalid("multinomial probabilities sum to zero"));
                }
                Ok(Sampler::from_weights(probs, total))
            }
            SourceSpec::Laplacian { mu, scale } => {
                if !scale.is_finite() || *scale <= 0.0 {
                    return Err(Error::invalid("laplacian scale must be > 0"));
                }
                let weights: Vec<f64> = (0..alphabet.size())
                    .map(|i| (-((alphabet.value_at(i) as f64) - mu).abs() / scale).exp())
                    .collect();
                let total: f64 = weights.iter().sum();
                Ok(Sampler::from_weights(&weights, total))
            }
        }
    }

    fn from_weights(weights: &[f64], total: f64) -> Self {
        let mut acc = 0.0;
        let cdf = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Sampler {
            cdf,
            constant: None,
        }
    }

    fn draw(&self, alphabet: Alphabet, rng: &mut ChaCha8Rng) -> i32 {
        if let Some(v) = self.constant {
            return v;
        }
        let u: f64 = rng.gen();
        let idx = self
            .cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1);
        alphabet.value_at(idx)
    }

    /// Exact source probabilities, for tests comparing empirical histograms.
    pub fn probabilities(&self, alphabet: Alphabet) -> Vec<f64> {
        if let Some(v) = self.constant {
            let mut p = vec![0.0; alphabet.size()];
            p[alphabet.index_of(v)] = 1.0;
            return p;
        }
        let mut prev = 0.0;
        self.cdf
            .iter()
            .map(|&c| {
                let p = c - prev;
                prev = c;
                p
            })
            .collect()
    }
}

/// Exact distribution of a source over the alphabet.
pub fn source_probabilities(source: &SourceSpec, alphabet: Alphabet) -> Result<Vec<f64>> {
    Ok(Sampler::build(source, alphabet)?.probabilities(alphabet))
}

/// Generate a tensor deterministically from (spec, seed).
///
/// Cells are drawn in (y, x, z) row-major channel-innermost order from a
/// single ChaCha8 stream, so equal inputs yield byte-identical tensors.
pub fn gen_synthetic(
    spec: &GeneratorSpec,
    height: usize,
    width: usize,
    channels: usize,
    alphabet: Alphabet,
    seed: u64,
) -> Result<CodeTensor> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::invalid("tensor dimensions must all be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(height * width * channels);
    match spec {
        GeneratorSpec::Source(source) => {
            let sampler = Sampler::build(source, alphabet)?;
            for _ in 0..height * width * channels {
                values.push(sampler.draw(alphabet, &mut rng));
            }
        }
        GeneratorSpec::Patchwork { regions } => {
            if regions.is_empty() {
                return Err(Error::invalid("patchwork needs >= 1 region"));
            }
            let samplers: Vec<Sampler> = regions
                .iter()
                .map(|r| Sampler::build(&r.source, alphabet))
                .collect::<Result<_>>()?;
            // Resolve each (y, x) to its first covering region up front.
            let mut region_of = vec![usize::MAX; height * width];
            for y in 0..height {
                for x in 0..width {
                    let hit = regions
                        .iter()
                        .position(|r| r.y0 <= y && y < r.y1 && r.x0 <= x && x < r.x1);
                    match hit {
                        Some(i) => region_of[y * width + x] = i,
                        None => {
                            return Err(Error::invalid(format!(
                                "patchwork regions do not cover cell (y={y}, x={x})"
                            )))
                        }
                    }
                }
            }
            for y in 0..height {
                for x in 0..width {
                    let sampler = &samplers[region_of[y * width + x]];
                    for _ in 0..channels {
                        values.push(sampler.draw(alphabet, &mut rng));
                    }
                }
            }
        }
    }
    CodeTensor::new(height, width, channels, alphabet, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{tile_histogram, tile_partition};

    #[test]
    fn constant_fills_every_cell() {
        let a = Alphabet::new(-2, 2).unwrap();
        let t = gen_synthetic(
            &GeneratorSpec::Source(SourceSpec::Constant { value: 0 }),
            64,
            64,
            4,
            a,
            1,
        )
        .unwrap();
        assert!(t.values().iter().all(|&v| v == 0));
    }

    #[test]
    fn constant_outside_alphabet_rejected() {
        let a = Alphabet::new(0, 3).unwrap();
        let r = gen_synthetic(
            &GeneratorSpec::Source(SourceSpec::Constant { value: 9 }),
            4,
            4,
            1,
            a,
            1,
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn uniform_multinomial_empirical_entropy_near_two_bits() {
        let a = Alphabet::new(0, 3).unwrap();
        let t = gen_synthetic(
            &GeneratorSpec::Source(SourceSpec::IidMultinomial {
                probs: vec![0.25; 4],
            }),
            128,
            128,
            1,
            a,
            1,
        )
        .unwrap();
        let mut counts = [0u64; 4];
        for &v in t.values() {
            counts[v as usize] += 1;
        }
        let n = t.cell_count() as f64;
        let entropy: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum();
        assert!(
            (entropy - 2.0).abs() < 0.02,
            "empirical entropy {entropy} should be within 0.02 of 2.0"
        );
    }

    #[test]
    fn laplacian_histogram_tracks_source() {
        // 10_000 draws, seed 7: empirical histogram within L-inf 0.02 of the source.
        let a = Alphabet::new(-8, 8).unwrap();
        let src = SourceSpec::Laplacian {
            mu: 0.0,
            scale: 1.5,
        };
        let t = gen_synthetic(&GeneratorSpec::Source(src.clone()), 100, 100, 1, a, 7).unwrap();
        let expected = source_probabilities(&src, a).unwrap();
        let mut counts = vec![0u64; a.size()];
        for &v in t.values() {
            counts[a.index_of(v)] += 1;
        }
        let n = t.cell_count() as f64;
        let linf = counts
            .iter()
            .zip(&expected)
            .map(|(&c, &p)| (c as f64 / n - p).abs())
            .fold(0.0f64, f64::max);
        assert!(linf < 0.02, "L-inf distance {linf} should be < 0.02");
    }

    #[test]
    fn patchwork_halves_diverge_by_more_than_one_bit() {
        let a = Alphabet::new(-8, 8).unwrap();
        let spec = GeneratorSpec::striped(
            vec![
                SourceSpec::Laplacian {
                    mu: 0.0,
                    scale: 1.0,
                },
                SourceSpec::Laplacian {
                    mu: 4.0,
                    scale: 1.0,
                },
            ],
            32,
            32,
        )
        .unwrap();
        let t = gen_synthetic(&spec, 32, 32, 1, a, 5).unwrap();
        let tiles = tile_partition(&t, 16).unwrap();
        let left = tile_histogram(&tiles[0], a).unwrap().normalized();
        let right = tile_histogram(&tiles[1], a).unwrap().normalized();
        // KL(left || right) with a tiny floor on the reference to keep it finite.
        let kl: f64 = left
            .iter()
            .zip(&right)
            .filter(|(q, _)| **q > 0.0)
            .map(|(q, p)| q * (q / p.max(1e-9)).log2())
            .sum();
        assert!(kl > 1.0, "KL divergence {kl} should exceed 1 bit");
    }

    #[test]
    fn patchwork_requires_full_cover() {
        let a = Alphabet::new(0, 1).unwrap();
        let spec = GeneratorSpec::Patchwork {
            regions: vec![RegionSpec {
                y0: 0,
                x0: 0,
                y1: 2,
                x1: 2,
                source: SourceSpec::Constant { value: 0 },
            }],
        };
        assert!(gen_synthetic(&spec, 4, 4, 1, a, 1).is_err());
    }

    #[test]
    fn generator_is_deterministic() {
        let a = Alphabet::new(-4, 4).unwrap();
        let spec = GeneratorSpec::Source(SourceSpec::Laplacian {
            mu: 0.5,
            scale: 2.0,
        });
        let t1 = gen_synthetic(&spec, 17, 9, 3, a, 42).unwrap();
        let t2 = gen_synthetic(&spec, 17, 9, 3, a, 42).unwrap();
        assert_eq!(t1, t2);
        let t3 = gen_synthetic(&spec, 17, 9, 3, a, 43).unwrap();
        assert_ne!(t1, t3);
    }
}
