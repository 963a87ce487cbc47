//! Prints bpp and PSNR of every suite model over the standard displacement grid.

use vrja_core::quality_map::DeltaBeta;
use vrja_core::surrogate::{
    rate_for_delta, CachedPicture, EncodeParams, ModelSuite, PictureShape, SynthesisCounter,
    DEFAULT_SUITE_SEED,
};

const GRID: [i32; 10] = [-1069, -860, -660, -460, -260, 0, 200, 400, 600, 702];

fn main() {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let shape = PictureShape::from_latent(64, 32, 16, 16).unwrap();
    let suite = ModelSuite::for_shape(shape, DEFAULT_SUITE_SEED).unwrap();
    let picture = CachedPicture::synthesize(shape, seed, &SynthesisCounter::new());
    for model in suite.models() {
        let latent = picture.latent(model).unwrap();
        let row: Vec<String> = GRID
            .iter()
            .map(|&d| {
                let params = EncodeParams::uniform(DeltaBeta(d), None);
                let r = rate_for_delta(&latent, model, &params, suite.log_cfg()).unwrap();
                format!("{:.4}/{:.1}", r.bpp, r.psnr())
            })
            .collect();
        println!("model {}: {}", model.model_id, row.join(" "));
    }
}
