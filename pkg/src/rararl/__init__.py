"""
RARARL Lab

Risk-averse protagonist / risk-seeking adversary training with ensemble
Q-networks on a desk-scale speedway simulator.
"""
