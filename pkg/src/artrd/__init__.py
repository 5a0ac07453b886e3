"""Targeted actuation attacks on navigation policies, and adversarial training.

Subpackages map onto the pipeline: ``numcore`` (networks, Gaussian head,
Adam), ``envs`` (Point/Car navigation tasks), ``ppo`` (trainer), ``attack``
(adversary MDP), ``defense`` (adversarial-training schemes), ``evaluation``
(protocol and analyses) and ``cli``.
"""

__version__ = "0.1.0"
