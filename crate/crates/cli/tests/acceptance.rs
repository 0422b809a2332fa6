//! Acceptance suite: runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use p2tx::augment::{apply, sample_params, AugmentationParams, AugmentationPolicy};
use p2tx::checkpoint::{average_checkpoints, Checkpoint};
use p2tx::inference::DecodeConfig;
use p2tx::metrics::{bleu4, chrf_pp, CorpusStats, Smoothing};
use p2tx::model::{param_count, Layout, Mat, ModelConfig, Network, Parameters};
use p2tx::pose::{flatten_all, FeatureSequence, Fps, PoseSequence};
use p2tx::resample::{resample, NaturalSpline, ResampleSpec};
use p2tx::synthetic::{generate, SynthSpec};
use p2tx::tokenizer::{train_vocab, Vocabulary};
use p2tx::trainer::{evaluate_dev, train, Pair, TrainError, TrainingConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fps(n: u32) -> Fps {
    Fps::whole(n).unwrap()
}

// 1 ------------------------------------------------------------------------

fn softmax_xent_grad(logits: &Mat, labels: &[u32]) -> Mat {
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

fn xent(net: &Network, src: &FeatureSequence, tgt_in: &[u32], labels: &[u32]) -> f64 {
    let out = net.forward(src, tgt_in, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    (0..out.logits.rows)
        .map(|t| {
            let row = out.logits.row(t);
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() - row[labels[t] as usize]
        })
        .sum()
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig {
        layers: 1,
        heads: 2,
        ffn_dim: 16,
        embed_dim: 8,
        input_dim: 6,
        vocab_size: 11,
        max_positions: 32,
        dropout: 0.0,
    };
    let mut net = Network::new(&Parameters::init(&cfg, 3).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let features = (0..5 * 6).map(|_| rng.gen_range(0.0..1.0)).collect();
    let src = FeatureSequence::new(fps(25), 6, features).unwrap();
    let tgt_in: Vec<u32> = (0..4).map(|_| rng.gen_range(0..11)).collect();
    let labels: Vec<u32> = (0..4).map(|_| rng.gen_range(0..11)).collect();

    let out = net.forward(&src, &tgt_in, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let grads = net.backward(&out.cache, &softmax_xent_grad(&out.logits, &labels)).unwrap();
    let sizes: Vec<usize> = (0..net.num_tensors()).map(|i| net.tensor(i).len()).collect();
    let total: usize = sizes.iter().sum();
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    let samples = 120;
    for _ in 0..samples {
        let mut flat = rng.gen_range(0..total);
        let mut i = 0;
        while flat >= sizes[i] {
            flat -= sizes[i];
            i += 1;
        }
        let orig = net.tensor(i)[flat];
        net.tensor_mut(i)[flat] = orig + h;
        let plus = xent(&net, &src, &tgt_in, &labels);
        net.tensor_mut(i)[flat] = orig - h;
        let minus = xent(&net, &src, &tgt_in, &labels);
        net.tensor_mut(i)[flat] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads.tensors[i][flat];
        worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8));
    }
    let elapsed = start.elapsed();
    check(worst < 1e-4, || format!("worst relative error {worst:.3e}"))?;
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{samples} params, worst rel err {worst:.2e}, {:.1}s", elapsed.as_secs_f64()))
}

// 2 ------------------------------------------------------------------------

fn overfit() -> Outcome {
    let start = Instant::now();
    let spec = SynthSpec {
        pairs: 32,
        min_frames: 24,
        max_frames: 36,
        keypoints: 8,
        coord_dim: 2,
        fps: 25,
        templates: vec![
            "the {cat|dog|bird|horse} {sat|ran|slept} {here|there|outside}".into(),
            "{today|tomorrow} the {sun|rain|wind} {comes|stays}".into(),
        ],
        seed: 7,
        jitter: 0.005,
    };
    let (poses, texts) = generate(&spec).unwrap();
    let vocab = train_vocab(&texts, 48).unwrap();
    let pairs: Vec<Pair> = poses.into_iter().zip(texts).map(|(pose, text)| Pair { pose, text }).collect();
    let model = ModelConfig {
        layers: 2,
        heads: 4,
        ffn_dim: 256,
        embed_dim: 64,
        input_dim: 16,
        vocab_size: vocab.len(),
        max_positions: 256,
        dropout: 0.1,
    };
    let config = TrainingConfig {
        max_epochs: 300,
        batch_size: 8,
        learning_rate: 1e-3,
        warmup_updates: 100,
        label_smoothing: 0.0,
        eval_every: 10,
        patience: 30,
        ..TrainingConfig::default()
    };
    let outcome = train(&pairs, &pairs, &vocab, &model, &config, |_| {}).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let hit = outcome
        .log
        .iter()
        .find(|e| e.loss.is_some_and(|l| l < 0.1) && e.dev_bleu.is_some_and(|b| b > 90.0));
    let last = outcome.log.last().unwrap();
    let Some(hit) = hit else {
        return Err(format!(
            "not reached; last epoch {} loss {:?} bleu {:?}",
            last.epoch, last.loss, last.dev_bleu
        ));
    };
    check(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "epoch {}: loss {:.4}, BLEU {:.2}, {:.0}s",
        hit.epoch,
        hit.loss.unwrap(),
        hit.dev_bleu.unwrap(),
        elapsed.as_secs_f64()
    ))
}

// 3 ------------------------------------------------------------------------

fn averaging() -> Outcome {
    let cfg = ModelConfig {
        layers: 2,
        heads: 2,
        ffn_dim: 24,
        embed_dim: 12,
        input_dim: 5,
        vocab_size: 17,
        max_positions: 32,
        dropout: 0.0,
    };
    let ckpts: Vec<Checkpoint> = (0..3u64)
        .map(|s| {
            let mut p = Parameters::init(&cfg, s).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(100 + s);
            for t in p.tensors_mut() {
                for v in t.data.iter_mut() {
                    *v += rng.gen_range(-0.1f32..0.1);
                }
            }
            Checkpoint::new(p)
        })
        .collect();
    let avg = average_checkpoints(&ckpts).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for (ti, t) in avg.params.tensors().iter().enumerate() {
        for (j, &v) in t.data.iter().enumerate() {
            let sum: f64 = ckpts.iter().map(|c| c.params.tensors()[ti].data[j] as f64).sum();
            let expected = (sum / 3.0) as f32;
            check(v.to_bits() == expected.to_bits(), || format!("{}[{j}]: {v} vs {expected}", t.name))?;
            compared += 1;
        }
    }
    for n in [1, 2, 3, 5] {
        let same = vec![ckpts[1].clone(); n];
        let avg = average_checkpoints(&same).map_err(|e| e.to_string())?;
        for (a, b) in avg.params.tensors().iter().zip(ckpts[1].params.tensors()) {
            check(
                a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()),
                || format!("averaging {n} identical checkpoints changed {}", a.name),
            )?;
        }
    }
    Ok(format!("{compared} values bit-exact; identity for n in 1,2,3,5"))
}

// 4 ------------------------------------------------------------------------

fn resampling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Degree-1 polynomials through the spline, at arbitrary positions.
    for _ in 0..50 {
        let n = rng.gen_range(2..60);
        let (a, b) = (rng.gen_range(-5.0..5.0), rng.gen_range(-2.0..2.0));
        let spline = NaturalSpline::new((0..n).map(|i| a + b * i as f64).collect());
        for _ in 0..50 {
            let x = rng.gen_range(0.0..(n - 1) as f64);
            let err = (spline.eval(x) - (a + b * x)).abs();
            check(err <= 1e-12 * (1.0 + a.abs() + b.abs() * x), || format!("linear error {err:e}"))?;
        }
    }
    // Same through the pose path: linear tracks survive 50 -> 30 fps up to f32 rounding.
    let frames = 51;
    let coords: Vec<f32> = (0..frames)
        .flat_map(|t| {
            let s = t as f64 / 50.0;
            [(0.1 + 0.4 * s) as f32, (0.9 - 0.3 * s) as f32]
        })
        .collect();
    let pose = PoseSequence::from_coords(fps(50), 2, 1, coords).unwrap();
    let out = resample(&pose, ResampleSpec::new(fps(30)).unwrap()).map_err(|e| e.to_string())?;
    for t in 0..out.num_frames() {
        let s = t as f64 / 30.0;
        for (got, want) in out.point(t, 0).iter().zip([0.1 + 0.4 * s, 0.9 - 0.3 * s]) {
            check((*got as f64 - want).abs() <= 2.0 * f32::EPSILON as f64, || {
                format!("frame {t}: {got} vs {want}")
            })?;
        }
    }
    // t^3 sampled at 50 fps over one second, read back at 30 fps.
    let n = 51;
    let knots: Vec<f64> = (0..n).map(|i| (i as f64 / 50.0).powi(3)).collect();
    let spline = NaturalSpline::new(knots.clone());
    let mut worst: f64 = 0.0;
    for k in 0..=30 {
        let x = k as f64 * 50.0 / 30.0;
        if !(10.0..=(n - 11) as f64).contains(&x) {
            continue;
        }
        let t = x / 50.0;
        worst = worst.max((spline.eval(x) - t * t * t).abs());
    }
    check(worst < 1e-6, || format!("cubic interior error {worst:e}"))?;
    let cubic = PoseSequence::from_coords(fps(50), 2, 1, knots.iter().flat_map(|&v| [v as f32, 0.5]).collect()).unwrap();
    let out = resample(&cubic, ResampleSpec::new(fps(30)).unwrap()).map_err(|e| e.to_string())?;
    for k in 6..=24 {
        let t = k as f64 / 30.0;
        let err = (out.point(k, 0)[0] as f64 - t * t * t).abs();
        check(err < 1e-6, || format!("pose cubic error {err:e} at frame {k}"))?;
    }
    // Frame count 50 -> 25 on random lengths: every output time k/25 must fall in [0, (T-1)/50].
    for _ in 0..200 {
        let t_in = rng.gen_range(1..400);
        let pose = PoseSequence::from_coords(fps(50), 2, 1, vec![0.5; t_in * 2]).unwrap();
        let out = resample(&pose, ResampleSpec::new(fps(25)).unwrap()).map_err(|e| e.to_string())?;
        let expected = (0..).take_while(|k| 2 * k <= t_in - 1).count();
        check(out.num_frames() == expected, || format!("T={t_in}: {} frames, expected {expected}", out.num_frames()))?;
    }
    Ok(format!("linear exact, t^3 interior err {worst:.1e}, frame counts on 200 random T"))
}

// 5 ------------------------------------------------------------------------

fn augmentation() -> Outcome {
    let policy = AugmentationPolicy {
        sigma: 0.2,
        seed: 5,
        ..AugmentationPolicy::default()
    };
    let mut rng = policy.rng();
    let draws: Vec<AugmentationParams> = (0..10_000).map(|_| sample_params(&policy, &mut rng)).collect();
    let mut summary = Vec::new();
    for (name, get) in [
        ("rotation", (|p: &AugmentationParams| p.rotation_angle) as fn(&AugmentationParams) -> f64),
        ("shear", |p| p.shear_factor),
        ("scale", |p| p.scale_delta),
    ] {
        let xs: Vec<f64> = draws.iter().map(get).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        check(mean.abs() <= 0.01, || format!("{name} mean {mean}"))?;
        check((std - 0.2).abs() <= 0.01, || format!("{name} std {std}"))?;
        summary.push(format!("{name} {mean:+.4}/{std:.4}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (k, frames) = (20, 4);
    let coords: Vec<f32> = (0..k * frames * 2).map(|_| rng.gen_range(0.0f32..1.0)).collect();
    let pose = PoseSequence::from_coords(fps(25), 2, k, coords).unwrap();
    let same = apply(&pose, &AugmentationParams::default(), policy.center).map_err(|e| e.to_string())?;
    check(
        same.coords().iter().zip(pose.coords()).all(|(a, b)| a.to_bits() == b.to_bits()),
        || "identity transform changed coordinates".into(),
    )?;
    let mut worst: f64 = 0.0;
    for angle in [0.3, -1.1, 2.5] {
        let rot = AugmentationParams {
            rotation_angle: angle,
            ..Default::default()
        };
        let out = apply(&pose, &rot, policy.center).map_err(|e| e.to_string())?;
        for t in 0..frames {
            for a in 0..k {
                for b in a + 1..k {
                    let dist = |p: &PoseSequence| {
                        let (u, v) = (p.point(t, a), p.point(t, b));
                        ((u[0] as f64 - v[0] as f64).powi(2) + (u[1] as f64 - v[1] as f64).powi(2)).sqrt()
                    };
                    let before = dist(&pose);
                    if before < 0.5 {
                        continue;
                    }
                    worst = worst.max((dist(&out) - before).abs() / before);
                }
            }
        }
    }
    check(worst <= 1e-6, || format!("rotation changed a distance by {worst:e} relative"))?;
    Ok(format!("{}; identity bit-exact; isometry rel err {worst:.1e}", summary.join(", ")))
}

// 6 ------------------------------------------------------------------------

fn pseudo_corpus() -> String {
    let consonants = "bdfgklmnprstvz";
    let vowels = "aeiou";
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let syllables: Vec<String> = consonants
        .chars()
        .flat_map(|c| vowels.chars().map(move |v| format!("{c}{v}")))
        .collect();
    let mut words: Vec<String> = Vec::new();
    while words.len() < 5000 {
        let n = rng.gen_range(2..=4);
        let w: String = (0..n).map(|_| syllables[rng.gen_range(0..syllables.len())].as_str()).collect();
        if !words.contains(&w) {
            words.push(w);
        }
    }
    (0..8000)
        .map(|_| {
            (0..8)
                .map(|_| {
                    let u: f64 = rng.gen();
                    words[(u * u * words.len() as f64) as usize].as_str()
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn tokenizer() -> Outcome {
    let corpus = pseudo_corpus();
    let mut sizes = Vec::new();
    let mut largest: Option<Vocabulary> = None;
    for n in [1000, 2000, 4000] {
        let v = train_vocab(&[corpus.as_str()], n).map_err(|e| e.to_string())?;
        check(v.len() == n, || format!("requested {n}, got {}", v.len()))?;
        sizes.push(v.len());
        largest = Some(v);
    }
    let v = largest.unwrap();
    let again = train_vocab(&[corpus.as_str()], 4000).map_err(|e| e.to_string())?;
    check(again.to_text() == v.to_text(), || "retraining changed the vocabulary file".into())?;

    let alphabet: Vec<char> = corpus.chars().filter(|&c| c != '\n').collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let words: Vec<String> = corpus.split_whitespace().take(2000).map(str::to_string).collect();
    let strings = prop_oneof![
        prop::collection::vec(prop::sample::select(alphabet), 0..60).prop_map(|c| c.into_iter().collect::<String>()),
        prop::collection::vec(prop::sample::select(words), 0..12).prop_map(|w| w.join(" ")),
    ];
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 1000,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    runner
        .run(&strings, |s| {
            let back = v.decode(&v.encode(&s)).unwrap();
            prop_assert_eq!(back, s);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("sizes {sizes:?} exact, 1000 round trips, retraining byte-identical"))
}

// 7 ------------------------------------------------------------------------

fn metrics() -> Outcome {
    let close = |got: f64, want: f64, what: &str| check((got - want).abs() < 1e-6, || format!("{what}: {got} vs {want}"));
    let cases: [(&[&str], &[&str], f64); 3] = [
        // p = 5/6, 3/5, 1/4, smoothed 1/(2*3); product 1/48.
        (&["the cat sat on the mat"], &["the cat is on the mat"], 100.0 * (1.0f64 / 48.0).powf(0.25)),
        // All precisions 1, brevity penalty exp(1 - 8/6).
        (&["a b c d", "e f"], &["a b c d e", "e f g"], 100.0 * (-1.0f64 / 3.0).exp()),
        // "Hallo , Welt !" vs "Hallo Welt !": 3/4, 1/3, 1/(2*2), 1/(4*1); product 1/64.
        (&["Hallo, Welt!"], &["Hallo Welt!"], 100.0 * (1.0f64 / 64.0).powf(0.25)),
    ];
    for (i, (h, r, want)) in cases.iter().enumerate() {
        close(bleu4(h, r, Smoothing::Exp).unwrap().bleu, *want, &format!("bleu corpus {i}"))?;
    }
    let chrf_cases: [(&[&str], &[&str], f64); 3] = [
        // P = (1 + 1 + 0)/3, R = (2/3 + 1/2 + 0)/3 over char1, char2, word1.
        (&["ab"], &["abc"], 100.0 * 14.0 / 33.0),
        // P = (1/2 + 0)/2, R = (1 + 0)/2 over char1, word1.
        (&["aa"], &["a"], 100.0 * 125.0 / 300.0),
        // Corpus counts char1 4/3/3, char2 2/1/1, char3 1/0/0, word1 4/3/3, word2 2/1/1.
        (&["x y.", "z"], &["x y", "z"], 100.0 * 625.0 / 700.0),
    ];
    for (i, (h, r, want)) in chrf_cases.iter().enumerate() {
        close(chrf_pp(h, r).unwrap().score, *want, &format!("chrf corpus {i}"))?;
    }
    let same = ["Der Regen fällt im Norden.", "Morgen: Sonne, 25 Grad!"];
    let b = bleu4(&same, &same, Smoothing::Exp).unwrap().bleu;
    let c = chrf_pp(&same, &same).unwrap().score;
    check(b == 100.0 && c == 100.0, || format!("perfect match gave BLEU {b}, chrF++ {c}"))?;
    Ok("3 BLEU and 3 chrF++ oracles within 1e-6; perfect match 100".into())
}

// 8 ------------------------------------------------------------------------

fn table_ratios() -> Outcome {
    let rows = [(19.0, 21_000, 0.90), (16.0, 19_000, 0.84), (79.0, 16_000, 4.93), (11.0, 3_000, 3.67)];
    let mut got = Vec::new();
    for (hours, words, reported) in rows {
        let lib = CorpusStats::from_counts(hours, words).unwrap().ratio;
        let out = Command::new(env!("CARGO_BIN_EXE_p2tx"))
            .args(["stats", "--hours", &hours.to_string(), "--unique-words", &words.to_string()])
            .output()
            .map_err(|e| e.to_string())?;
        check(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
        let json: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
        let cli = json["ratio"].as_f64().unwrap();
        check(cli == lib, || format!("cli {cli} vs library {lib}"))?;
        check((cli - reported).abs() < 0.01, || format!("{hours} h / {words}: {cli} vs {reported}"))?;
        got.push(format!("{cli:.4}"));
    }
    Ok(format!("ratios {}", got.join(", ")))
}

// 9 ------------------------------------------------------------------------

fn enumerate_params(c: &ModelConfig) -> usize {
    let (d, f) = (c.embed_dim, c.ffn_dim);
    let linear = |i: usize, o: usize| i * o + o;
    let norm = 2 * d;
    let attention = 4 * linear(d, d);
    let ffn = linear(d, f) + linear(f, d);
    let mut n = linear(c.input_dim, d);
    for _ in 0..c.layers {
        n += norm + attention + norm + ffn;
    }
    n += norm;
    n += c.vocab_size * d;
    for _ in 0..c.layers {
        n += norm + attention + norm + attention + norm + ffn;
    }
    n + norm
}

fn architecture() -> Outcome {
    let (input_dim, vocab) = (2 * 137, 2000);
    let small = ModelConfig::small(input_dim, vocab);
    let base = ModelConfig::baseline(input_dim, vocab);
    let mut counts = Vec::new();
    for cfg in [&small, &base] {
        let closed = param_count(cfg);
        let layout: usize = Layout::new(cfg).specs().iter().map(|s| s.numel()).sum();
        let enumerated = enumerate_params(cfg);
        check(closed == layout && closed == enumerated, || {
            format!("closed form {closed}, layout {layout}, enumeration {enumerated}")
        })?;
        counts.push(closed);
    }
    let materialized = Parameters::init(&small, 1).unwrap().num_scalars();
    check(materialized == counts[0], || format!("initialized {materialized} vs {}", counts[0]))?;
    check(counts[1] > counts[0], || format!("baseline {} not above small {}", counts[1], counts[0]))?;
    Ok(format!("baseline {} > small {}", counts[1], counts[0]))
}

// 10 -----------------------------------------------------------------------

fn synthetic_pairs(templates: &[&str], pairs: usize, seed: u64) -> Vec<Pair> {
    let spec = SynthSpec {
        pairs,
        min_frames: 12,
        max_frames: 18,
        keypoints: 3,
        coord_dim: 2,
        fps: 25,
        templates: templates.iter().map(|t| t.to_string()).collect(),
        seed,
        jitter: 0.005,
    };
    let (poses, texts) = generate(&spec).unwrap();
    poses.into_iter().zip(texts).map(|(pose, text)| Pair { pose, text }).collect()
}

fn transfer() -> Outcome {
    let a_templates = ["the {cat|dog|bird} {sat|ran}"];
    let b_templates = ["{red|blue} {sky|sea} {today|now}"];
    let a_train = synthetic_pairs(&a_templates, 16, 1);
    let a_dev = synthetic_pairs(&a_templates, 6, 2);
    let b_train = synthetic_pairs(&b_templates, 16, 3);
    let b_dev = synthetic_pairs(&b_templates, 6, 4);
    let text = |ps: &[Pair]| ps.iter().map(|p| p.text.clone()).collect::<Vec<_>>().join("\n");
    let merged = train_vocab(&[text(&a_train), text(&b_train)], 40).unwrap();
    let model = ModelConfig {
        layers: 1,
        heads: 2,
        ffn_dim: 64,
        embed_dim: 32,
        input_dim: 6,
        vocab_size: merged.len(),
        max_positions: 64,
        dropout: 0.0,
    };
    let pretrain = TrainingConfig {
        max_epochs: 40,
        batch_size: 4,
        learning_rate: 3e-3,
        warmup_updates: 20,
        label_smoothing: 0.0,
        eval_every: 5,
        patience: 100,
        ..TrainingConfig::default()
    };
    let outcome = train(&a_train, &a_dev, &merged, &model, &pretrain, |_| {}).map_err(|e| e.to_string())?;
    let best = &outcome.checkpoints[0];
    let pretrained_bleu = best.dev_score.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pretrained.ckpt");
    best.save(&path).map_err(|e| e.to_string())?;

    let zero = TrainingConfig {
        max_epochs: 0,
        pretrained: Some(path.clone()),
        ..pretrain.clone()
    };
    let same_dev = train(&b_train, &a_dev, &merged, &model, &zero, |_| {}).map_err(|e| e.to_string())?;
    let reproduced = same_dev.log[0].dev_bleu.unwrap();
    check(reproduced.to_bits() == pretrained_bleu.to_bits(), || {
        format!("zero-update dev BLEU {reproduced} vs pretrained {pretrained_bleu}")
    })?;
    check(same_dev.log[0].update == 0, || "zero-update run performed updates".into())?;

    let b_dev_feats: Vec<FeatureSequence> = b_dev.iter().map(|p| flatten_all(&p.pose, 0.0).unwrap()).collect();
    let b_refs: Vec<String> = b_dev.iter().map(|p| p.text.clone()).collect();
    let direct = evaluate_dev(&Network::new(&best.params), &merged, &b_dev_feats, &b_refs, &DecodeConfig::greedy(128))
        .map_err(|e| e.to_string())?;
    let on_b = train(&b_train, &b_dev, &merged, &model, &zero, |_| {}).map_err(|e| e.to_string())?;
    check(on_b.log[0].dev_bleu.unwrap().to_bits() == direct.to_bits(), || {
        format!("B dev BLEU {:?} vs direct {direct}", on_b.log[0].dev_bleu)
    })?;

    let finetune = TrainingConfig {
        max_epochs: 10,
        pretrained: Some(path.clone()),
        ..pretrain.clone()
    };
    let tuned = train(&b_train, &b_dev, &merged, &model, &finetune, |_| {}).map_err(|e| e.to_string())?;
    let tuned_best = tuned.checkpoints[0].dev_score.unwrap();
    check(tuned.log.iter().all(|e| e.loss.unwrap().is_finite()), || "non-finite fine-tuning loss".into())?;

    let a_only = train_vocab(&[text(&a_train)], 30).unwrap();
    let wrong = ModelConfig {
        vocab_size: a_only.len(),
        ..model.clone()
    };
    match train(&b_train, &b_dev, &a_only, &wrong, &finetune, |_| {}) {
        Err(e @ TrainError::VocabMismatch { .. }) => {
            let msg = e.to_string();
            check(msg.contains(&merged.hash()) && msg.contains(&a_only.hash()), || {
                format!("error does not name both vocabularies: {msg}")
            })?;
        }
        other => return Err(format!("expected a vocabulary mismatch, got {:?}", other.map(|_| ()))),
    }
    Ok(format!(
        "pretrained dev BLEU {pretrained_bleu:.2} reproduced exactly; B dev {direct:.2} -> {tuned_best:.2} after fine-tuning; mismatch rejected"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradient_check),
        ("end-to-end learnability", overfit),
        ("checkpoint averaging", averaging),
        ("resampling exactness", resampling),
        ("augmentation statistics", augmentation),
        ("tokenizer", tokenizer),
        ("metrics oracles", metrics),
        ("corpus ratio arithmetic", table_ratios),
        ("architecture audit", architecture),
        ("transfer learning", transfer),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        match result {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
