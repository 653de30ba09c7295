//! One full-scale training run with timing and a metrics report.

use comvae::io::{evaluate, EvalOptions, FittedModel};
use comvae::models::CvaeModel;
use comvae::nn::Likelihood;
use comvae::optim::{train_cvae, Objective, TrainConfig};
use comvae::rng::Rng;
use comvae::simgen::{generate_contrastive, SimConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let objective = match args.get(2).map(|s| s.as_str()) {
        Some("mo") => Objective::Mo,
        _ => Objective::So,
    };
    let noise = match args.get(3).map(|s| s.as_str()) {
        Some("nb") => Likelihood::NegBinomial,
        Some("gaussian") => Likelihood::Gaussian,
        _ => Likelihood::Poisson,
    };
    let q_hat: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(5);

    let sim = SimConfig {
        seed: 1,
        noise,
        ..SimConfig::default()
    };
    let t0 = std::time::Instant::now();
    let ds = generate_contrastive(&sim).unwrap();
    eprintln!("simulated in {:.2?}", t0.elapsed());

    let mut rng = Rng::seeded(100).substream("init");
    let mut model = CvaeModel::new(5, q_hat, 150, noise, 1.0, 0.1, &mut rng).unwrap();
    let cfg = TrainConfig {
        objective,
        epochs,
        seed: 100,
        ..TrainConfig::default()
    };
    let t1 = std::time::Instant::now();
    let out = train_cvae(&mut model, &ds.x_background, &ds.x_target, &cfg).unwrap();
    let secs = t1.elapsed().as_secs_f64();
    let n_epochs = out.history.len();
    eprintln!(
        "trained {n_epochs} epochs in {secs:.1}s ({:.2}s/epoch), best val {:.3}",
        secs / n_epochs as f64,
        out.state.best_val
    );
    for rec in out.history.iter().step_by(25) {
        eprintln!(
            "  epoch {:3}  val {:.3}  alpha {:.3}  cka {:?}",
            rec.epoch, rec.val_elbo, rec.alpha_mean, rec.cka_estimate
        );
    }

    // Metrics against ground truth.
    use comvae::io::{read_dataset, write_dataset};
    let dir = std::env::temp_dir().join(format!("bench_train_{}", std::process::id()));
    write_dataset(&dir, &ds).unwrap();
    let stored = read_dataset(&dir).unwrap();
    let report = evaluate(
        &FittedModel::Cvae(model),
        &stored,
        &EvalOptions::default(),
        serde_json::Value::Null,
    )
    .unwrap();
    let b = report.mcc_pearson.unwrap();
    println!(
        "mcc_zz {:.3}  mcc_zs {:.3}  mcc_sz {:.3}  mcc_ss {:.3}  delta {:.3}  cka {:.4}",
        b.mcc_zz,
        b.mcc_zs,
        b.mcc_sz,
        b.mcc_ss,
        report.delta_mcc_pearson.unwrap(),
        report.final_cka.unwrap_or(f64::NAN)
    );
    std::fs::remove_dir_all(&dir).ok();
}
