//! Runs rate matching for the standard target list and prints each result.

use vrja_core::brm::{match_rate, BrmConfig};
use vrja_core::surrogate::{
    CachedPicture, ModelSuite, PictureShape, SynthesisCounter, DEFAULT_SUITE_SEED,
};

fn main() {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let shape = PictureShape::from_latent(64, 32, 16, 16).unwrap();
    let suite = ModelSuite::for_shape(shape, DEFAULT_SUITE_SEED).unwrap();
    let counter = SynthesisCounter::new();
    let cached = CachedPicture::synthesize(shape, seed, &counter);
    for cfg in [BrmConfig::default(), BrmConfig::v2()] {
        for target in [0.12, 0.25, 0.5, 0.75, 1.0] {
            let r = match_rate(&cached, &suite, target, None, &cfg).unwrap();
            println!(
                "thr={:.2} target={target:.2} model={} delta={} bpp={:.4} diff={:.4} evals={} met={}",
                cfg.max_rate_diff,
                r.model_id,
                r.delta_beta.value(),
                r.achieved_bpp,
                r.relative_diff,
                r.validations(),
                r.met_threshold
            );
        }
    }
}
