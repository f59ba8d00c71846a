//! Pilot runs for the desk-scale replication experiments. Prints the
//! decision quantities the acceptance suite asserts, at configurable scale.

use preqlab::eval::{eval_curve, PrequentialCurve};
use preqlab::exp::excess_degree_norm;
use preqlab::graph::Graph;
use preqlab::hmm::{HmmFamily, HmmHyper};
use preqlab::learners::{
    bottleneck_states, stage_params, Arch, LearnerConfig,
};
use preqlab::objectives::{meta_train, LossKind, ObjectiveSpec, TrainConfig};
use preqlab::sgd::{fit_mlp, mlp_mean_loss, BaselineConfig};
use preqlab::tasks::{make_meta_dataset, Split, TaskSpec};

fn args() -> Vec<String> {
    std::env::args().skip(1).collect()
}

fn main() {
    let a = args();
    match a.first().map(|s| s.as_str()) {
        Some("c6") => c6(a.get(1).map_or(300, |v| v.parse().unwrap()), a.get(2).map_or(10, |v| v.parse().unwrap()), a.get(3).map_or(1e-3, |v| v.parse().unwrap())),
        Some("c7") => c7(a.get(1).map_or(5, |v| v.parse().unwrap()), a.get(2).map_or(8, |v| v.parse().unwrap()), a.get(3).map_or(600, |v| v.parse().unwrap()), a.get(4).map_or(1e-3, |v| v.parse().unwrap())),
        Some("c8") => c8(a.get(1).map_or(300, |v| v.parse().unwrap()), a.get(2).map_or(6, |v| v.parse().unwrap()), a.get(3).map_or(1e-3, |v| v.parse().unwrap())),
        Some("c10") => c10(a.get(1).map_or(400, |v| v.parse().unwrap()), a.get(2).map_or(20, |v| v.parse().unwrap()), a.get(3).map_or(1e-3, |v| v.parse().unwrap())),
        _ => eprintln!("usage: calibrate c6|c7|c8|c10 [scale args]"),
    }
}

fn desk_cfg(arch: Arch, spec: &TaskSpec, max_context: usize) -> LearnerConfig {
    LearnerConfig::desk(arch, spec, max_context)
}

fn show(label: &str, curve: &PrequentialCurve) {
    let pts: Vec<String> = curve
        .context_sizes
        .iter()
        .zip(&curve.mean_error)
        .map(|(c, e)| format!("{c}:{e:.4}"))
        .collect();
    println!("  {label}: {}", pts.join(" "));
}

fn c6(n_tasks: usize, epochs: usize, lr: f64) {
    let t0 = std::time::Instant::now();
    let spec = TaskSpec::sinusoid(3, 0.04);
    let n = 65;
    let grid = [1usize, 2, 4, 8, 16, 32, 48, 64];
    let seeds = [0u64, 1, 2];
    let mut by_obj: Vec<Vec<PrequentialCurve>> = vec![Vec::new(), Vec::new()];
    for (oi, obj) in [
        ObjectiveSpec::prequential(LossKind::Mse),
        ObjectiveSpec::train_risk(LossKind::Mse),
    ]
    .iter()
    .enumerate()
    {
        for &seed in &seeds {
            let train = make_meta_dataset(&spec, n_tasks, n, 100, Split::Train);
            let eval = make_meta_dataset(&train.spec, 200, n, 100, Split::Eval);
            let cfg = desk_cfg(Arch::Bottleneck, &train.spec, n);
            let tc = TrainConfig {
                learning_rate: lr,
                batch_size: 64,
                epochs,
                seed,
                grad_clip: Some(100.0),
            };
            let learner = meta_train(&cfg, &train, obj, &tc).unwrap();
            let curve = eval_curve(&cfg, &learner.params, &eval.episodes, &grid, 4).unwrap();
            println!(
                "c6 {}: seed {seed} final train loss {:.4} ({:.0?})",
                obj.name(),
                learner.trace.last().unwrap(),
                t0.elapsed()
            );
            show(&format!("{} s{seed}", obj.name()), &curve);
            by_obj[oi].push(curve);
        }
    }
    let mean = |cs: &Vec<PrequentialCurve>, gi: usize| {
        cs.iter().map(|c| c.mean_error[gi]).sum::<f64>() / cs.len() as f64
    };
    for (gi, &c) in grid.iter().enumerate() {
        let p = mean(&by_obj[0], gi);
        let t = mean(&by_obj[1], gi);
        let rel = (p - t).abs() / p.abs().max(t.abs()).max(1e-12);
        println!("c6 grid {c}: preq {p:.4} train_risk {t:.4} (preq<tr: {}, rel {rel:.3})", p < t);
    }
    println!("c6 total {:.0?}", t0.elapsed());
}

fn c7(n_episodes_per_seed: usize, n_seeds: u64, epochs: usize, lr: f64) {
    let t0 = std::time::Instant::now();
    let spec = TaskSpec::linear(3, 0.04);
    let mut wins = 0;
    let mut m0_all = 0.0;
    let mut m1_all = 0.0;
    for seed in 0..n_seeds {
        let eval_meta = make_meta_dataset(&spec, n_episodes_per_seed, 84, 500 + seed, Split::Train);
        let mut m = [0.0f64; 2];
        for (li, lambda) in [0.0, 0.05].iter().enumerate() {
            let mut total = 0.0;
            for (ei, ep) in eval_meta.episodes.iter().enumerate() {
                let config = BaselineConfig {
                    learning_rate: lr,
                    max_epochs: epochs,
                    early_stop_patience: epochs,
                    weight_decay: *lambda,
                    seed: seed * 1000 + ei as u64,
                    ..BaselineConfig::default()
                };
                let model = fit_mlp(&spec, &ep.points[..20], &config).unwrap();
                total += mlp_mean_loss(&model, &ep.points[20..84]).unwrap();
            }
            m[li] = total / eval_meta.episodes.len() as f64;
        }
        println!("c7 seed {seed}: λ=0 {:.4}  λ=.05 {:.4}  win={}", m[0], m[1], m[1] < m[0]);
        if m[1] < m[0] {
            wins += 1;
        }
        m0_all += m[0];
        m1_all += m[1];
    }
    println!(
        "c7 wins {wins}/{n_seeds}; means λ=0 {:.4} λ=.05 {:.4} ({:.0?})",
        m0_all / n_seeds as f64,
        m1_all / n_seeds as f64,
        t0.elapsed()
    );
}

fn desk_hmm_hyper() -> HmmHyper {
    HmmHyper {
        n_base_cycles: 2,
        n_base_speeds: 2,
        n_cycle_families: 1,
        n_group_per_family: 2,
        n_family_speeds: 1,
        n_emission_groups: 2,
        n_emission_per_group: 2,
        n_emission_shift: 2,
        n_states: 8,
        n_obs: 12,
        family_cycle_len: (2, 3),
        cycles_per_group: 1,
    }
}

fn c8(n_tasks: usize, epochs: usize, lr: f64) {
    let t0 = std::time::Instant::now();
    let n = 96;
    let family = HmmFamily::new(desk_hmm_hyper(), 1234).unwrap();
    let (train_latents, eval_latents) = family.split_latents(0.2, 1234);
    let grid = [1usize, 2, 4, 8, 16, 32, 40, 48, 56, 64, 72, 80, 88, 94];
    let seeds = [0u64, 1, 2];
    let mut curves: Vec<Vec<PrequentialCurve>> = vec![Vec::new(), Vec::new()];
    for (oi, frac) in [1.0, 0.5].iter().enumerate() {
        let obj = ObjectiveSpec::suffix_only(LossKind::CrossEntropy, *frac);
        for &seed in &seeds {
            let train = family.make_meta_dataset(&train_latents, n_tasks, n, 7, Split::Train, false);
            let eval = family.make_meta_dataset(&eval_latents, 300, n, 7, Split::Eval, false);
            let cfg = desk_cfg(Arch::Bottleneck, &train.spec, n);
            let tc = TrainConfig {
                learning_rate: lr,
                batch_size: 32,
                epochs,
                seed,
                grad_clip: Some(100.0),
            };
            let learner = meta_train(&cfg, &train, &obj, &tc).unwrap();
            let curve = eval_curve(&cfg, &learner.params, &eval.episodes, &grid, 2).unwrap();
            println!("c8 frac {frac}: seed {seed} done ({:.0?})", t0.elapsed());
            show(&format!("frac{frac} s{seed}"), &curve);
            curves[oi].push(curve);
        }
    }
    let mean = |cs: &Vec<PrequentialCurve>, gi: usize| {
        cs.iter().map(|c| c.mean_error[gi]).sum::<f64>() / cs.len() as f64
    };
    for (gi, &c) in grid.iter().enumerate() {
        let full = mean(&curves[0], gi);
        let suffix = mean(&curves[1], gi);
        println!("c8 grid {c}: full {full:.4} suffix {suffix:.4} gap {:.4}", suffix - full);
    }
    println!("c8 total {:.0?}", t0.elapsed());
}

fn c10(n_tasks: usize, epochs: usize, lr: f64) {
    let t0 = std::time::Instant::now();
    let spec = TaskSpec::chebyshev(1, 8, 0.25);
    let n = 24;
    let seeds = [0u64, 1, 2];
    let mut norms = [0.0f64; 2];
    for (oi, obj) in [
        ObjectiveSpec::prequential(LossKind::Mse),
        ObjectiveSpec::train_risk(LossKind::Mse),
    ]
    .iter()
    .enumerate()
    {
        for &seed in &seeds {
            let train = make_meta_dataset(&spec, n_tasks, n, 55, Split::Train);
            let eval = make_meta_dataset(&spec, 60, n, 55, Split::Eval);
            let cfg = desk_cfg(Arch::Bottleneck, &spec, n).with_polynomial_head(8);
            let tc = TrainConfig {
                learning_rate: lr,
                batch_size: 32,
                epochs,
                seed,
                grad_clip: Some(100.0),
            };
            let learner = meta_train(&cfg, &train, obj, &tc).unwrap();
            // mean excess-degree coefficient norm at context 15
            let mut total = 0.0;
            for ep in &eval.episodes {
                let tokens = preqlab::learners::encode_tokens(ep, &cfg.feature_map)
                    .mapv(|v| v as f32);
                let mut g = Graph::<f32>::new();
                let tp = stage_params(&mut g, &learner.params);
                let states = bottleneck_states(&mut g, &tp, &cfg, &tokens).unwrap();
                let coeffs: Vec<f64> = g.value(states).row(15).iter().map(|&v| v as f64).collect();
                total += excess_degree_norm(&coeffs, spec.gen_degree);
            }
            let mean_norm = total / eval.episodes.len() as f64;
            println!(
                "c10 {}: seed {seed} excess norm {mean_norm:.4} (train loss {:.4}, {:.0?})",
                obj.name(),
                learner.trace.last().unwrap(),
                t0.elapsed()
            );
            norms[oi] += mean_norm / seeds.len() as f64;
        }
    }
    println!(
        "c10 means: prequential {:.4} train_risk {:.4} (tr > preq: {}) ({:.0?})",
        norms[0],
        norms[1],
        norms[1] > norms[0],
        t0.elapsed()
    );
}
