# %% [markdown]
# # The critic as a distance estimate
#
# With a gradient penalty the critic stays close to 1-Lipschitz, so its
# converged loss approximates the Wasserstein-1 distance. For two point masses
# on a line that distance is just their offset.

# %%
import numpy as np

from adagcn.model import CriticParams, glorot
from adagcn.trainer import Adam, critic_step


def converged_loss(offset, steps=1500, seed=0):
    rng = np.random.default_rng(seed)
    critic = CriticParams(glorot(rng, 1, 16, (16, 1)), np.zeros((1, 16)), glorot(rng, 16, 1),
                          np.zeros((1, 1)))
    source, target = np.full((32, 1), offset), np.zeros((32, 1))
    opt = Adam()
    losses = [critic_step(critic, opt, source, target, 10.0, 1e-2, rng)[0] for _ in range(steps)]
    return float(np.mean(losses[-100:]))


for d in (0.5, 1.0, 2.0, 4.0):
    print(d, round(converged_loss(d), 3))
