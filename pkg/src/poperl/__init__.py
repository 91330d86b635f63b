"""Population-assisted off-policy RL: ES population + TD3 learner with single or double replay."""

__version__ = "0.1.0"
