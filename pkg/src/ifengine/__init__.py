"""Verifiable-constraint rewards and entropy-aware training-signal kernels.

The package splits into text counting primitives (textstat), the
constraint spec/verification/reward layer (constraints), rollout length
shaping (reward_shaping), per-token signal kernels (signal_math),
prompt synthesis and hardness bucketing (synthesis), cold-start sample
filtering (coldstart), and the pluggable generation client
(model_client). External training loops talk to all of it through
JSONL file protocols and the `ifengine` CLI.
"""

__version__ = "0.1.0"
