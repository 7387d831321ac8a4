"""Deceptive path planning with graph neural network policies.

A max-entropy observer infers which goal an agent is heading for; a
GraphSAGE policy trained with PPO on small gridworlds learns to mislead it,
either by exaggerating toward a decoy or by staying ambiguous, and transfers
to larger grids and to a continuous forest.
"""

__version__ = "0.1.0"
