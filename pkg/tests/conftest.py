"""
Pytest configuration for multipolicy-eval tests
"""

import numpy as np
import pytest
from pytest_factoryboy import LazyFixture, register

from multipolicy_eval.generators import gen_chain_mdp, gen_two_layer_k_example, gen_unrealizable_example
from multipolicy_eval.mdp import dump_mdp, dump_policies
from multipolicy_eval.models import PolicyTable, TabularMdp
from tests.factories import RandomMdpFactory, RandomPolicyFactory

# Register factories as fixtures
register(RandomMdpFactory, "random_mdp")
register(RandomPolicyFactory, "random_policy", mdp=LazyFixture("random_mdp"))


@pytest.fixture
def tiny_mdp():
    """S=2, A=2, H=2: action 1 moves to state 1, action 0 stays; reward 1 in state 1 at the last step."""
    transitions = np.zeros((2, 2, 2, 2))
    transitions[:, :, 0, :] = np.eye(2)
    transitions[:, :, 1, 1] = 1.0
    rewards = np.zeros((2, 2, 2))
    rewards[1, 1, :] = 1.0
    return TabularMdp(
        num_states=2,
        num_actions=2,
        horizon=2,
        initial_dist=[1.0, 0.0],
        transitions=transitions,
        rewards=rewards,
    )


@pytest.fixture
def tiny_policies(tiny_mdp):
    """Stay (value 0), move (value 1) and the uniform policy (value 1/2)."""
    return [
        PolicyTable.deterministic(np.zeros((2, 2), dtype=int), 2),
        PolicyTable.deterministic(np.ones((2, 2), dtype=int), 2),
        PolicyTable.uniform(2, 2, 2),
    ]


@pytest.fixture
def chain_mdp():
    """Hard-to-reach chain with S=5, A=3, H=5."""
    return gen_chain_mdp(5, 3, 5)


@pytest.fixture
def two_layer():
    """Four policies that differ only at the root, p=0.3."""
    return gen_two_layer_k_example(4, 0.3)


@pytest.fixture
def unrealizable():
    """The K=2 model with an unrealizable unconstrained optimum."""
    return gen_unrealizable_example(2)


@pytest.fixture
def model_files(tmp_path, tiny_mdp, tiny_policies):
    """tiny_mdp and tiny_policies written to JSON files."""
    mdp_path = tmp_path / "mdp.json"
    policies_path = tmp_path / "policies.json"
    dump_mdp(tiny_mdp, mdp_path)
    dump_policies(tiny_policies, policies_path)
    return mdp_path, policies_path
