use partmc::executor::WorkerPool;
use partmc::pipeline::{run_pipeline_on, RunPlan};
use partmc::rng::chain_rng;
use partmc::sampler::SamplingMode;
use partmc::stitch::resample_unit_weights;
use partmc::target::{TargetSource, MIX9D};

#[test]
fn resampled_mean_matches_weighted_mean() {
    let mut plan = RunPlan::new(TargetSource::Named(MIX9D.into()));
    plan.partition.max_subspaces = 8;
    plan.exploration.n_chains = 50;
    plan.exploration.samples_per_chain = 200;
    plan.sampling.mode = SamplingMode::FixedCount { samples_per_chain: 500 };
    plan.seed = 4;
    let target = plan.target.resolve().unwrap();
    let res = run_pipeline_on(&plan, &target, &WorkerPool::new(8)).unwrap();
    let ws = &res.samples;
    let n_out = 30_000;
    let draws = resample_unit_weights(ws, n_out, &mut chain_rng(1)).unwrap();
    assert_eq!(draws.len(), n_out);
    let mean = ws.weighted_mean();
    let total = ws.weight_sum();
    for (j, m) in mean.iter().enumerate() {
        let var = (0..ws.len())
            .map(|i| ws.weights[i] * (ws.samples.row(i)[j] - m).powi(2))
            .sum::<f64>()
            / total;
        let got = draws.column(j).iter().sum::<f64>() / n_out as f64;
        // systematic resampling is no noisier than multinomial
        let sigma = (var / n_out as f64).sqrt();
        assert!((got - m).abs() < 5.0 * sigma, "axis {j}: {got} vs {m} ± {sigma}");
    }
}
