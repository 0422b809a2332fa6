//! Central finite differences against the analytic reverse pass.

use p2tx::model::{Mat, ModelConfig, Network, Parameters};
use p2tx::pose::{FeatureSequence, Fps};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        layers: 1,
        heads: 2,
        ffn_dim: 16,
        embed_dim: 8,
        input_dim: 6,
        vocab_size: 11,
        max_positions: 32,
        dropout: 0.0,
    }
}

fn sample_problem(seed: u64) -> (FeatureSequence, Vec<u32>, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = 4;
    let features = (0..frames * 6).map(|_| rng.gen_range(0.0..1.0)).collect();
    let src = FeatureSequence::new(Fps::whole(25).unwrap(), 6, features).unwrap();
    let tgt_in: Vec<u32> = (0..4).map(|_| rng.gen_range(0..11)).collect();
    let labels: Vec<u32> = (0..4).map(|_| rng.gen_range(0..11)).collect();
    (src, tgt_in, labels)
}

/// Summed cross-entropy, computed independently of the training code.
fn loss(net: &Network, src: &FeatureSequence, tgt_in: &[u32], labels: &[u32]) -> f64 {
    let out = net.forward(src, tgt_in, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    (0..out.logits.rows)
        .map(|t| {
            let row = out.logits.row(t);
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[labels[t] as usize]
        })
        .sum()
}

fn loss_gradient(logits: &Mat, labels: &[u32]) -> Mat {
    let mut g = logits.clone();
    for t in 0..g.rows {
        let row = g.row_mut(t);
        let max = row.iter().cloned().fold(f64::MIN, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        for v in row.iter_mut() {
            *v = (*v - max).exp() / sum;
        }
        row[labels[t] as usize] -= 1.0;
    }
    g
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let cfg = tiny_config();
    let params = Parameters::init(&cfg, 11).unwrap();
    let mut net = Network::new(&params);
    let (src, tgt_in, labels) = sample_problem(5);

    let out = net.forward(&src, &tgt_in, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let grads = net.backward(&out.cache, &loss_gradient(&out.logits, &labels)).unwrap();
    assert!(grads.all_finite());

    let sizes: Vec<usize> = (0..net.num_tensors()).map(|i| net.tensor(i).len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut flat = rng.gen_range(0..total);
        let mut tensor = 0;
        while flat >= sizes[tensor] {
            flat -= sizes[tensor];
            tensor += 1;
        }
        let original = net.tensor(tensor)[flat];
        net.tensor_mut(tensor)[flat] = original + h;
        let plus = loss(&net, &src, &tgt_in, &labels);
        net.tensor_mut(tensor)[flat] = original - h;
        let minus = loss(&net, &src, &tgt_in, &labels);
        net.tensor_mut(tensor)[flat] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads.tensors[tensor][flat];
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
        println!(
            "{:<40} [{flat:>3}] analytic {analytic:+.8e} numeric {numeric:+.8e} rel {rel:.2e}",
            net.tensor_name(tensor)
        );
        worst = worst.max(rel);
    }
    println!("worst relative error {worst:.3e}");
    assert!(worst < 1e-4);
}
