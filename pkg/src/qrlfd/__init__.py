"""Quantum state preparation by reinforcement learning from demonstrations.

Demonstration pulses come from GRAPE on a nominal model; SAC with demo replay
and behaviour cloning, or PPO with demo pre-training, then fine-tunes them on
a deliberately biased "true" system.
"""
__version__ = "0.1.0"
