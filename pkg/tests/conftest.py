"""Shared fixtures: the 3-node worked example and generator helpers."""

import numpy as np
import pytest

from netprice.network import NetworkInstance


def make_chain_instance() -> NetworkInstance:
    """3-node instance used throughout: nodes {0,1} observable, node 2
    latent, symmetric influence 0.5 between each observable node and the
    latent hub, b=1 everywhere, a=2, outside price 1.5, declared gap 1."""
    g = np.zeros((3, 3))
    g[0, 2] = g[2, 0] = g[1, 2] = g[2, 1] = 0.5
    return NetworkInstance(
        g=g,
        a=[2.0, 2.0, 2.0],
        b=[1.0, 1.0, 1.0],
        observable=(0, 1),
        p_bar=1.5,
        zeta=1.0,
    )


@pytest.fixture
def chain_instance() -> NetworkInstance:
    return make_chain_instance()
