pub mod bitstream;
pub mod brm;
pub mod metrics;
pub mod quality_map;
pub mod range_coder;
pub mod roi;
pub mod spatial_codec;
pub mod surrogate;
pub mod tensor;
