"""Elastic net with two weights, tuned by full-gradient descent and by
single-sample stochastic steps from the same start."""

from aloocv import TuneConfig, elastic_net, synth_elastic, tune_batch, tune_stochastic

for seed in range(3):
    dataset, theta_star = synth_elastic(100, 20, seed=seed)
    objective = elastic_net(dataset.p)
    lam_b, trace_b = tune_batch(dataset, objective, [0.0, 0.0], TuneConfig(max_iterations=100))
    lam_s, trace_s = tune_stochastic(dataset, objective, [0.0, 0.0], TuneConfig(step_rule="decay", max_iterations=1000, seed=seed))
    print(
        f"seed {seed}: batch lambda={lam_b.round(3)} ACV={trace_b.acv[-1]:.4f}   "
        f"stochastic lambda={lam_s.round(3)} ACV={trace_s.acv[-1]:.4f}   "
        f"{(theta_star == 0).sum()} of {dataset.p} true coefficients are zero"
    )
