"""Learn the shared local policy through the chained episodic MDP.

For a fixed dispatcher, the local best response is the optimal policy of a
chained MDP in which the sampled agents act one after another.  This demo
compares exact dynamic programming on that chain, exhaustive search over all
deterministic shared policies and the UCFH learner.

    python demos/local_best_response.py
"""

import numpy as np

from altmarl import GlobalPolicy, LLearnConfig, ModelSpec, Parameterization, l_learn, validate_model
from altmarl.chained import build_chained
from altmarl.episodic import exact_finite_horizon_dp, stochastic_policy_value
from altmarl.oracles import deterministic_local_policies


def main():
    rng = np.random.default_rng(101)
    model = validate_model(
        ModelSpec(
            2, 2, 2, 2, 2, 0.9,
            rng.dirichlet(np.ones(2), size=(2, 2)),
            rng.dirichlet(np.ones(2), size=(2, 2, 2)),
            rng.random((2, 2)),
            rng.random((2, 2, 2)),
        )
    )
    pi_g = GlobalPolicy.from_actions(Parameterization.STANDARD, 2, np.array([[1, 1, 1, 1], [0, 0, 0, 0]]), 2)
    pi_l, report = l_learn(model, pi_g, 2, 0.01, np.random.default_rng(0), cfg=LLearnConfig(ucfh_m=10, max_episodes=10_000))
    chain = build_chained(model, pi_g, report.horizon, reward_scale=model.n_agents)
    print(f"chain: {chain.mdp.n_states} micro states, {chain.horizon} micro steps ({report.horizon} macro steps)")
    print(f"unconstrained optimum of the chain: {exact_finite_horizon_dp(chain.mdp)[0]:.4f}")
    values = {
        tuple(map(tuple, p.actions().tolist())): stochastic_policy_value(chain.mdp, chain.local_policy_table(p))
        for p in deterministic_local_policies(2, 2, 2)
    }
    best = max(values, key=values.get)
    print(f"best shared policy by exhaustive search: {best} -> {values[best]:.4f}")
    print(f"UCFH ({report.episodes} episodes, {report.stop_reason}): {pi_l.actions().tolist()} -> {report.value:.4f}")
    print(f"tolerance eps = {report.epsilon:.3f}")


if __name__ == "__main__":
    main()
