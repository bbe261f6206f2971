//! Lossless prompt compression by dictionary encoding.
//!
//! Repeated word subsequences are replaced by meta-tokens (`<M1>`, `<M2>`,
//! ...) when doing so lowers the total token count including the dictionary
//! that must accompany the compressed text. The crate also provides the
//! reference decompressor, a template-based per-line mode, reconstruction
//! metrics, batch planning and sweeps, and a harness that asks an LLM to
//! decompress and scores the answer.
//!
//! ```
//! use promptdict::{compress, decompress, CompressionParams};
//!
//! let text = "a b c a b c a b c";
//! let result = compress(text, &CompressionParams::default()).unwrap();
//! assert_eq!(result.compressed_text(), "<M1> <M1> <M1>");
//! assert_eq!(decompress(&result.compressed_text(), &result.dictionary).unwrap(), text);
//! ```

pub mod batch_pipeline;
pub mod compressor;
pub mod dictionary;
pub mod llm_validator;
pub mod metrics;
pub mod segmenter;

pub use compressor::{
    apply_replacements, compress, find_subsequences_at_length, savings_holds, CompressError,
    CompressionParams, CompressionResult, MetaToken, Selection,
};
pub use dictionary::{
    decompress, template_compress, template_decompress, DecompressError, Dictionary, Envelope, Template,
};
pub use metrics::{compression_ratio, MetricReport, RatioReport};
pub use segmenter::{cost_of_span, CostModel, WordSequence};
