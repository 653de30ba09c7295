//! End-to-end training benchmark on the calibrated generator.

use comvae::io::{evaluate, read_dataset, write_dataset, EvalOptions, FittedModel};
use comvae::models::CvaeModel;
use comvae::nn::Likelihood;
use comvae::optim::{train_cvae, Objective, TrainConfig};
use comvae::rng::Rng;
use comvae::simgen::{generate_contrastive, MixingOverride, SimConfig};

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let bias_scale: f64 = a.get(1).and_then(|s| s.parse().ok()).unwrap_or(4.0);
    let output_gain: f64 = a.get(2).and_then(|s| s.parse().ok()).unwrap_or(8.0);
    let epochs: usize = a.get(3).and_then(|s| s.parse().ok()).unwrap_or(500);
    let noise = match a.get(4).map(|s| s.as_str()) {
        Some("nb") => Likelihood::NegBinomial,
        _ => Likelihood::Poisson,
    };
    let q_hat: usize = a.get(5).and_then(|s| s.parse().ok()).unwrap_or(5);
    let objective = match a.get(6).map(|s| s.as_str()) {
        Some("mo") => Objective::Mo,
        _ => Objective::So,
    };
    let softmax_dec = std::env::var("SOFTMAX_DEC").is_ok();

    let sim = SimConfig {
        seed: 1,
        noise,
        mixing: Some(MixingOverride { bias_scale, output_gain, ..MixingOverride::default() }),
        ..SimConfig::default()
    };
    let ds = generate_contrastive(&sim).unwrap();
    let mut rng = Rng::seeded(100).substream("init");
    let mut model = CvaeModel::new(5, q_hat, 150, noise, 1.0, 0.1, &mut rng).unwrap();
    if softmax_dec {
        model.use_softmax_library_decoder().unwrap();
    }
    let cfg = TrainConfig {
        objective,
        epochs,
        seed: 100,
        patience: std::env::var("PATIENCE").ok().and_then(|s| s.parse().ok()).unwrap_or(20),
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let out = train_cvae(&mut model, &ds.x_background, &ds.x_target, &cfg).unwrap();
    eprintln!(
        "bias {bias_scale} gain {output_gain} {noise:?} qhat {q_hat}: {} epochs in {:.0}s best val {:.1}",
        out.history.len(),
        t0.elapsed().as_secs_f64(),
        out.state.best_val
    );
    let dir = std::env::temp_dir().join(format!("bench2_{}_{}", std::process::id(), bias_scale));
    write_dataset(&dir, &ds).unwrap();
    let stored = read_dataset(&dir).unwrap();
    let report = evaluate(&FittedModel::Cvae(model), &stored, &EvalOptions::default(), serde_json::Value::Null).unwrap();
    let b = report.mcc_pearson.unwrap();
    println!(
        "RESULT bias {bias_scale} gain {output_gain} {noise:?} q{q_hat} {objective:?} softmax={softmax_dec}: zz {:.3} zs {:.3} sz {:.3} ss {:.3} delta {:.3}",
        b.mcc_zz, b.mcc_zs, b.mcc_sz, b.mcc_ss, report.delta_mcc_pearson.unwrap()
    );
    std::fs::remove_dir_all(&dir).ok();
}
