//! Linear probes of latent recoverability for candidate generator
//! settings.

use comvae::linalg::least_squares;
use comvae::metrics::{linear_mcc, CorrKind};
use comvae::nn::Likelihood;
use comvae::simgen::{generate_contrastive, MixingOverride, SimConfig};

fn main() {
    let bias_scale: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let output_gain: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(4.0);
    let lib: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(1500.0);
    for noise in [Likelihood::Poisson, Likelihood::NegBinomial] {
        let sim = SimConfig {
            seed: 1,
            noise,
            library_size: lib,
            mixing: Some(MixingOverride { bias_scale, output_gain, ..MixingOverride::default() }),
            ..SimConfig::default()
        };
        let ds = generate_contrastive(&sim).unwrap();
        let zt = ds.z_target();
        let xlog = ds.x_target.map(|v| (1.0 + v).ln());
        let mz = linear_mcc(&xlog, &zt, CorrKind::Pearson).unwrap().value;
        let ms = linear_mcc(&xlog, &ds.s_true, CorrKind::Pearson).unwrap().value;
        let fit_z = least_squares(&xlog, &zt).unwrap();
        let leak_zs = linear_mcc(&fit_z.predict(&xlog), &ds.s_true, CorrKind::Pearson).unwrap().value;
        println!(
            "bias {bias_scale} gain {output_gain} lib {lib} {noise:?}: probe z {mz:.3} s {ms:.3} leak-zs {leak_zs:.3}"
        );
    }
}
