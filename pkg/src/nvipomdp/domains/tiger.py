"""The Tiger problem, used as an exactly solvable verification domain."""

import numpy as np

from ..pomdp import ExplicitDomain, ExplicitPomdp

LISTEN, OPEN_LEFT, OPEN_RIGHT = 0, 1, 2
HEAR_LEFT, HEAR_RIGHT = 0, 1
TIGER_LEFT, TIGER_RIGHT = 0, 1


def tiger_model(listen_accuracy=0.85, listen_cost=-1.0, treasure=10.0, tiger=-100.0, discount=0.95):
    """Canonical Tiger POMDP.

    Opening either door resets the tiger uniformly and yields an
    uninformative observation.
    """
    p = listen_accuracy
    T = np.zeros((2, 3, 2))
    T[:, LISTEN, :] = np.eye(2)
    T[:, OPEN_LEFT, :] = 0.5
    T[:, OPEN_RIGHT, :] = 0.5
    O = np.full((3, 2, 2), 0.5)
    O[LISTEN] = [[p, 1 - p], [1 - p, p]]
    R = np.array(
        [
            [listen_cost, tiger, treasure],  # tiger behind the left door
            [listen_cost, treasure, tiger],
        ]
    )
    return ExplicitPomdp(
        states=("tiger-left", "tiger-right"),
        actions=("listen", "open-left", "open-right"),
        observations=("hear-left", "hear-right"),
        transition=T,
        observation_fn=O,
        reward=R,
        discount=discount,
        initial_belief=[0.5, 0.5],
        name="tiger",
    )


def tiger_domain(max_episode_steps=200) -> ExplicitDomain:
    return ExplicitDomain(tiger_model(), max_episode_steps=max_episode_steps, domain_id="tiger")
