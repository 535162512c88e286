use amcsim::error_estimation::SplitMode;
use amcsim::estimation::{EstimatorConfig, SoftImpute};
use amcsim::model::{generate_ground_truth, GroundTruth, MatrixSpec, NoiseModel, DEFAULT_BOUND};
use amcsim::rng::{stream, Lane, StreamRng};
use amcsim::strategy::{malocate_run, oracle_run, uniform_run, LossSpec, PNorm, RunConfig, Schedule};

fn problem(dim: usize, ranks: &[usize], seed: u64) -> Vec<GroundTruth> {
    ranks
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            generate_ground_truth(
                MatrixSpec::new(k, dim, r, DEFAULT_BOUND).unwrap(),
                seed * 1000 + k as u64,
            )
        })
        .collect()
}

fn streams(k: usize, seed: u64, strategy: u32) -> Vec<StreamRng> {
    (0..k)
        .map(|i| stream(seed, 0, Lane::Sampling { strategy }, i as u64))
        .collect()
}

fn config(budget: usize, init_multiplier: usize, num_batches: usize) -> RunConfig {
    RunConfig {
        split: SplitMode::ByMultiplicity,
        band_scale: 0.1,
        schedule: Schedule::Discretized {
            init_multiplier,
            num_batches,
            reuse_samples: true,
        },
        ..RunConfig::new(budget, NoiseModel::Gaussian { sigma: 0.1 })
    }
}

fn estimator() -> SoftImpute {
    SoftImpute::new(EstimatorConfig {
        lambda_scale: 0.3,
        ..EstimatorConfig::default()
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[test]
fn single_arm_uniform_matches_malocate_allocation() {
    let truths = problem(20, &[2], 1);
    let cfg = config(300, 4, 10);
    let loss = LossSpec::unweighted(PNorm::Infinite);
    let a = malocate_run(&truths, &loss, &cfg, &estimator(), streams(1, 1, 0)).unwrap();
    let b = uniform_run(&truths, &cfg, &estimator(), streams(1, 1, 0)).unwrap();
    let spent = |t: &amcsim::RunTrace| t.events.iter().map(|e| e.spent[0]).collect::<Vec<_>>();
    assert_eq!(spent(&a.trace), spent(&b.trace));
}

#[test]
fn symmetric_problems_uniform_and_malocate_agree_within_two() {
    let (d, k) = (20, 3);
    let cfg = config(k * d * d / 2, 8, 20);
    let mut mal = Vec::new();
    let mut uni = Vec::new();
    for seed in 0..10 {
        let truths = problem(d, &[2; 3], seed);
        let loss = LossSpec::unweighted(PNorm::Infinite);
        mal.push(
            malocate_run(&truths, &loss, &cfg, &estimator(), streams(k, seed, 0))
                .unwrap()
                .trace
                .events
                .last()
                .unwrap()
                .loss_pinf,
        );
        uni.push(
            uniform_run(&truths, &cfg, &estimator(), streams(k, seed, 1))
                .unwrap()
                .trace
                .events
                .last()
                .unwrap()
                .loss_pinf,
        );
    }
    let (m, u) = (median(mal), median(uni));
    assert!(m <= 2.0 * u && u <= 2.0 * m, "MALocate {m} vs uniform {u}");
}

#[test]
fn oracle_dominates_malocate_on_max_loss() {
    let (d, ranks) = (30, [10, 2, 2, 2, 2]);
    let cfg = config(ranks.len() * d * d / 4, 4, 30);
    let loss = LossSpec::unweighted(PNorm::Infinite);
    let wins = (0..10)
        .filter(|&seed| {
            let truths = problem(d, &ranks, seed);
            let o = oracle_run(&truths, &cfg, &estimator(), streams(5, seed, 0)).unwrap();
            let m = malocate_run(&truths, &loss, &cfg, &estimator(), streams(5, seed, 1)).unwrap();
            o.trace.events.last().unwrap().loss_pinf <= m.trace.events.last().unwrap().loss_pinf
        })
        .count();
    assert!(wins >= 5, "oracle won {wins} of 10");
}

#[test]
fn p1_allocation_tilts_towards_the_harder_arm() {
    let (d, ranks) = (30, [8, 1]);
    let ideal = (8.0f64).sqrt();
    let cfg = config(d * d, 4, 30);
    let loss = LossSpec::unweighted(PNorm::Finite(1.0));
    let ratios: Vec<f64> = (0..10)
        .map(|seed| {
            let out = malocate_run(
                &problem(d, &ranks, seed),
                &loss,
                &cfg,
                &estimator(),
                streams(2, seed, 0),
            )
            .unwrap();
            let s = &out.trace.events.last().unwrap().spent;
            s[0] as f64 / s[1] as f64
        })
        .collect();
    let ratio = median(ratios.clone());
    assert!(
        (0.25..=4.0 * ideal).contains(&ratio),
        "median ratio {ratio} from {ratios:?}"
    );
}
