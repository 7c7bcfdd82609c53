//! Lossless entropy coding for 3-D quantized code tensors.
//!
//! The codec drives a range coder with a learned dictionary of local
//! multinomial entropy models: tensors are cut into spatial tiles per channel,
//! each tile selects the dictionary model with the lowest cross-entropy, and
//! channels whose tiles are poorly covered may transmit one image-dependent
//! distribution of their own. Model indices travel as a DEFLATE-compressed
//! plane inside a self-contained bitstream.

pub mod coder;
pub mod container;
pub mod dictionary;
pub mod error;
pub mod select;
pub mod synth;
pub mod tensor;

pub use coder::{build_cdf, CdfTable, RangeDecoder, RangeEncoder};
pub use container::{
    compress_indices, decode_global_baseline, decode_image, decompress_indices,
    encode_global_baseline, encode_image, encode_image_with_plan, rate_report,
    rate_report_with_plan, Bitstream, Header, RateBreakdown,
};
pub use dictionary::{
    corpus_from_tensors, cross_entropy_bits, kl_kmeans_refine, kld_bits, kmeanspp_init,
    train_dictionary, Dictionary, Multinomial, Provenance, TrainConfig, CUSTOM_MODEL_INDEX,
    DEFAULT_EPSILON, MAX_MODELS,
};
pub use error::{Error, Result};
pub use select::{
    custom_cost_bits, dequantize_dist, estimate_custom, plan_channel, quantize_dist, select_model,
    ChannelAccounting, CustomEstimate, QuantizedDist, TilePlan,
};
pub use synth::{gen_synthetic, source_probabilities, GeneratorSpec, RegionSpec, SourceSpec};
pub use tensor::{
    read_tensor, tile_histogram, tile_partition, write_tensor, Alphabet, CodeTensor, Histogram,
    Tile,
};
