"""
FedCPU simulation library: lattice codec, fading channel, two-layer
receiver, the federated learning engine and the datasets it trains on.
"""
